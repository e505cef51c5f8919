//! The two particle-gradient terms of a JKO step.
//!
//! * [`kl_gradient`] is the kernelised (Stein) direction that decreases `KL(mu || p)`:
//!   `phi_i = 1/M sum_j [ K(x_j, x_i) grad log p(x_j) + grad_{x_j} K(x_j, x_i) ]`.
//! * [`w2_gradient`] is the gradient of the entropic transport proxy
//!   `sum_j c_ij exp(-c_ij / lambda)` with respect to `x_i`, where `c_ij = |x_i - y_j|^2`
//!   and `y` is the previous ensemble, treating the Sinkhorn scalings as constants.
//!
//! Reductions over `j` always run left to right so results do not depend on how the
//! caller schedules the per-particle work.

use crate::ensemble::ParticleEnsemble;
use crate::error::{check_dim, FlowError, Result};
use crate::kernel::KernelSpec;
use crate::scalar::{sq_dist, Scalar};

/// Supplies `grad log p` at a particle. `index` is the particle's position in the
/// ensemble, which lets callers hand in per-particle estimates computed elsewhere.
pub trait ScoreField<T> {
    fn score(&mut self, index: usize, x: &[T]) -> Vec<T>;
}

impl<T, F> ScoreField<T> for F
where
    F: FnMut(usize, &[T]) -> Vec<T>,
{
    fn score(&mut self, index: usize, x: &[T]) -> Vec<T> {
        self(index, x)
    }
}

/// Evaluates the score at every particle and checks it is finite.
pub fn evaluate_scores<T: Scalar>(current: &ParticleEnsemble<T>, field: &mut dyn ScoreField<T>) -> Result<Vec<Vec<T>>> {
    current
        .points()
        .enumerate()
        .map(|(i, x)| {
            let s = field.score(i, x);
            check_dim(current.dim(), s.len())?;
            if s.iter().any(|v| !v.is_finite()) {
                return Err(FlowError::NonFinite {
                    what: "target gradient",
                    index: i,
                });
            }
            Ok(s)
        })
        .collect()
}

/// Kernelised KL descent direction; particles move as `x <- x + step * phi`.
pub fn kl_gradient<T: Scalar>(
    current: &ParticleEnsemble<T>,
    field: &mut dyn ScoreField<T>,
    spec: &KernelSpec<T>,
) -> Result<Vec<Vec<T>>> {
    let scores = evaluate_scores(current, field)?;
    kl_gradient_from_scores(current, &scores, spec)
}

/// [`kl_gradient`] with the scores already evaluated.
pub fn kl_gradient_from_scores<T: Scalar>(
    current: &ParticleEnsemble<T>,
    scores: &[Vec<T>],
    spec: &KernelSpec<T>,
) -> Result<Vec<Vec<T>>> {
    check_dim(current.count(), scores.len())?;
    let m = current.count();
    let d = current.dim();
    let inv_m = T::one() / T::lit(m as f64);
    let two_over_bw = T::lit(2.0) / spec.bandwidth();
    let mut out = Vec::with_capacity(m);
    for xi in current.points() {
        let mut phi = vec![T::zero(); d];
        for (xj, sj) in current.points().zip(scores) {
            check_dim(d, sj.len())?;
            let k = spec.value_sq(sq_dist(xj, xi));
            // grad_{x_j} K(x_j, x_i) = -2/m (x_j - x_i) K
            for c in 0..d {
                phi[c] = phi[c] + k * sj[c] - two_over_bw * (xj[c] - xi[c]) * k;
            }
        }
        phi.iter_mut().for_each(|v| *v = *v * inv_m);
        out.push(phi);
    }
    Ok(out)
}

/// `d/dx_i sum_j c_ij exp(-c_ij / lambda) = sum_j 2 (1 - c_ij/lambda) exp(-c_ij/lambda) (x_i - y_j)`.
///
/// The JKO update follows this gradient, scaled by `eps / (2M)`.
pub fn w2_gradient<T: Scalar>(
    current: &ParticleEnsemble<T>,
    previous: &ParticleEnsemble<T>,
    lambda: T,
) -> Result<Vec<Vec<T>>> {
    check_dim(current.dim(), previous.dim())?;
    if !(lambda > T::zero()) || !lambda.is_finite() {
        return Err(FlowError::InvalidInput(format!(
            "entropic scale lambda must be positive, got {lambda}"
        )));
    }
    let d = current.dim();
    let two = T::lit(2.0);
    let mut out = Vec::with_capacity(current.count());
    for xi in current.points() {
        let mut g = vec![T::zero(); d];
        for yj in previous.points() {
            let ratio = sq_dist(xi, yj) / lambda;
            let coef = two * (T::one() - ratio) * (-ratio).exp();
            for c in 0..d {
                g[c] = g[c] + coef * (xi[c] - yj[c]);
            }
        }
        out.push(g);
    }
    Ok(out)
}

/// The penalty whose gradient [`w2_gradient`] returns, for one particle.
pub fn w2_penalty<T: Scalar>(x: &[T], previous: &ParticleEnsemble<T>, lambda: T) -> T {
    previous
        .points()
        .map(|y| {
            let c = sq_dist(x, y);
            c * (-c / lambda).exp()
        })
        .fold(T::zero(), |a, b| a + b)
}
