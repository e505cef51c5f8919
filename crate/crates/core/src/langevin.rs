//! Unadjusted Langevin sampler, used as the reference for particle-flow sampling quality.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::ensemble::ParticleEnsemble;
use crate::error::{FlowError, Result};
use crate::gradient::{evaluate_scores, ScoreField};
use crate::scalar::Scalar;

/// `x <- x + (h/2) grad log p(x) + sqrt(h) xi` with independent standard normal `xi`.
pub fn langevin_step<T: Scalar, R: Rng + ?Sized>(
    ensemble: &ParticleEnsemble<T>,
    field: &mut dyn ScoreField<T>,
    stepsize: T,
    rng: &mut R,
) -> Result<ParticleEnsemble<T>> {
    langevin_step_with(ensemble, field, stepsize, &mut || {
        T::lit(rng.sample::<f64, _>(StandardNormal))
    })
}

/// [`langevin_step`] with a caller-supplied noise source, drawn in row-major order.
pub fn langevin_step_with<T: Scalar>(
    ensemble: &ParticleEnsemble<T>,
    field: &mut dyn ScoreField<T>,
    stepsize: T,
    noise: &mut dyn FnMut() -> T,
) -> Result<ParticleEnsemble<T>> {
    if !(stepsize > T::zero()) || !stepsize.is_finite() {
        return Err(FlowError::InvalidInput(format!(
            "Langevin stepsize must be positive, got {stepsize}"
        )));
    }
    let scores = evaluate_scores(ensemble, field)?;
    let half = stepsize / T::lit(2.0);
    let root = stepsize.sqrt();
    let mut next = ensemble.clone();
    for (i, s) in scores.iter().enumerate() {
        for (x, &g) in next.point_mut(i).iter_mut().zip(s) {
            *x = *x + half * g + root * noise();
        }
    }
    if let Some(pos) = next.as_flat().iter().position(|v| !v.is_finite()) {
        return Err(FlowError::NonFinite {
            what: "particle after Langevin step",
            index: pos / next.dim(),
        });
    }
    let iteration = ensemble.iteration() + 1;
    Ok(next.with_iteration(iteration))
}
