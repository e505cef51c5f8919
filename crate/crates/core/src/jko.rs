//! One minimizing-movement (JKO) block over a particle ensemble.
//!
//! Each inner update moves particle `i` along
//! `g_i = kl_i + eps / (2M) * w2_i`, where `kl` is the kernelised KL descent direction
//! and `w2` is the gradient of `sum_j c_ij e^(-c_ij/lambda)` against the ensemble frozen
//! at the start of the block. Following that gradient pushes a particle away from
//! previous particles closer than `lambda` and pulls it toward those further away,
//! so consecutive ensembles stay within the transport scale `lambda` of each other.
//! Dividing by `2M` keeps the strength of the term independent of the particle count.

use crate::ensemble::ParticleEnsemble;
use crate::error::{FlowError, Result};
use crate::gradient::{evaluate_scores, kl_gradient_from_scores, w2_gradient, ScoreField};
use crate::kernel::{median_bandwidth, KernelSpec};
use crate::optim::{OptimizerSpec, OptimizerState};
use crate::scalar::{log_sum_exp, sq_dist, Scalar};
use crate::transport::exact_w2_squared;

/// How a positive scale (kernel bandwidth or entropic `lambda`) is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScaleRule<T> {
    Fixed(T),
    /// Median rule, recomputed at every inner update.
    Median,
}

impl<T: Scalar> ScaleRule<T> {
    fn validate(&self, what: &str) -> Result<()> {
        match *self {
            ScaleRule::Fixed(v) if !(v > T::zero()) || !v.is_finite() => Err(FlowError::InvalidInput(format!(
                "{what} must be positive when fixed, got {v}"
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JkoConfig<T> {
    /// JKO time step `h`; weights the transport term of the monitored objective.
    pub stepsize: T,
    /// Relative scale `eps` of the transport term; zero gives plain SVGD updates.
    pub w2_scale: T,
    /// Entropic regularisation; the median rule uses current-vs-previous distances.
    pub lambda: ScaleRule<T>,
    /// Kernel bandwidth; the median rule uses current-vs-current distances.
    pub bandwidth: ScaleRule<T>,
    pub inner_steps: usize,
    pub optimizer: OptimizerSpec<T>,
}

impl<T: Scalar> JkoConfig<T> {
    /// Median rules, `eps = 0.4`, one inner step.
    pub fn new(optimizer: OptimizerSpec<T>) -> Self {
        Self {
            stepsize: T::one(),
            w2_scale: T::lit(0.4),
            lambda: ScaleRule::Median,
            bandwidth: ScaleRule::Median,
            inner_steps: 1,
            optimizer,
        }
    }

    pub fn with_w2_scale(mut self, eps: T) -> Self {
        self.w2_scale = eps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.stepsize > T::zero()) || !self.stepsize.is_finite() {
            return Err(FlowError::InvalidInput(format!(
                "JKO stepsize must be positive, got {}",
                self.stepsize
            )));
        }
        if !(self.w2_scale >= T::zero()) || !self.w2_scale.is_finite() {
            return Err(FlowError::InvalidInput(format!(
                "w2 scale must be non-negative, got {}",
                self.w2_scale
            )));
        }
        if self.inner_steps == 0 {
            return Err(FlowError::InvalidInput("inner_steps must be >= 1".into()));
        }
        if !(self.optimizer.learning_rate >= T::zero()) {
            return Err(FlowError::InvalidInput("learning rate must be non-negative".into()));
        }
        self.lambda.validate("lambda")?;
        self.bandwidth.validate("bandwidth")
    }
}

/// Scales used by the last inner update of a block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JkoDiagnostics<T> {
    pub bandwidth: T,
    /// `None` when the transport term was skipped (`eps = 0`).
    pub lambda: Option<T>,
    /// The median rule hit its floor because all particles coincide.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JkoOutcome<T> {
    pub ensemble: ParticleEnsemble<T>,
    pub diagnostics: JkoDiagnostics<T>,
}

/// Resolves the kernel for an ensemble under `rule`.
pub fn resolve_kernel<T: Scalar>(ensemble: &ParticleEnsemble<T>, rule: ScaleRule<T>) -> Result<(KernelSpec<T>, bool)> {
    match rule {
        ScaleRule::Fixed(m) => Ok((KernelSpec::rbf(m)?, false)),
        ScaleRule::Median => {
            let bw = median_bandwidth(ensemble, ensemble)?;
            Ok((KernelSpec::rbf(bw.value)?, bw.degenerate))
        }
    }
}

/// Per-particle ascent directions `g_i` at `current`, flattened row-major.
pub fn jko_direction<T: Scalar>(
    current: &ParticleEnsemble<T>,
    previous: &ParticleEnsemble<T>,
    field: &mut dyn ScoreField<T>,
    cfg: &JkoConfig<T>,
) -> Result<(Vec<T>, JkoDiagnostics<T>)> {
    let scores = evaluate_scores(current, field)?;
    jko_direction_from_scores(current, previous, &scores, cfg)
}

/// [`jko_direction`] with the scores already evaluated.
pub fn jko_direction_from_scores<T: Scalar>(
    current: &ParticleEnsemble<T>,
    previous: &ParticleEnsemble<T>,
    scores: &[Vec<T>],
    cfg: &JkoConfig<T>,
) -> Result<(Vec<T>, JkoDiagnostics<T>)> {
    let (kernel, degenerate) = resolve_kernel(current, cfg.bandwidth)?;
    let kl = kl_gradient_from_scores(current, scores, &kernel)?;
    let mut direction: Vec<T> = kl.into_iter().flatten().collect();
    let mut lambda_used = None;
    if cfg.w2_scale > T::zero() {
        let lambda = match cfg.lambda {
            ScaleRule::Fixed(l) => l,
            ScaleRule::Median => median_bandwidth(current, previous)?.value,
        };
        let w2 = w2_gradient(current, previous, lambda)?;
        let coef = cfg.w2_scale / T::lit(2.0 * current.count() as f64);
        for (g, w) in direction.iter_mut().zip(w2.into_iter().flatten()) {
            *g = *g + coef * w;
        }
        lambda_used = Some(lambda);
    }
    Ok((
        direction,
        JkoDiagnostics {
            bandwidth: kernel.bandwidth(),
            lambda: lambda_used,
            degenerate,
        },
    ))
}

/// Runs `cfg.inner_steps` optimizer updates against the frozen `previous` ensemble.
///
/// The optimizer sees the negated direction, so descent-convention optimizers move
/// particles along `g`. The returned ensemble carries `iteration + 1`.
pub fn jko_step<T: Scalar>(
    current: &ParticleEnsemble<T>,
    previous: &ParticleEnsemble<T>,
    field: &mut dyn ScoreField<T>,
    cfg: &JkoConfig<T>,
    optimizer: &mut OptimizerState<T>,
) -> Result<JkoOutcome<T>> {
    cfg.validate()?;
    if current.dim() != previous.dim() {
        return Err(FlowError::DimensionMismatch {
            expected: current.dim(),
            got: previous.dim(),
        });
    }
    let mut next = current.clone();
    let mut diagnostics = None;
    for _ in 0..cfg.inner_steps {
        let (direction, diag) = jko_direction(&next, previous, field, cfg)?;
        let descent: Vec<T> = direction.into_iter().map(|g| -g).collect();
        optimizer.update(next.as_flat_mut(), &descent)?;
        if let Some(pos) = next.as_flat().iter().position(|v| !v.is_finite()) {
            return Err(FlowError::NonFinite {
                what: "particle after update",
                index: pos / next.dim(),
            });
        }
        diagnostics = Some(diag);
    }
    let iteration = current.iteration() + 1;
    Ok(JkoOutcome {
        ensemble: next.with_iteration(iteration),
        diagnostics: diagnostics.expect("inner_steps >= 1"),
    })
}

/// Kernel-density estimate of `KL(mu || p)` up to the normaliser of `p`.
///
/// The density at each particle is the average of Gaussian kernels
/// `exp(-|x - y|^2 / m)` normalised by `(pi m)^(d/2)`.
pub fn kde_kl_estimate<T: Scalar>(
    ensemble: &ParticleEnsemble<T>,
    log_density: &dyn Fn(&[T]) -> T,
    bandwidth: T,
) -> Result<T> {
    if !(bandwidth > T::zero()) {
        return Err(FlowError::InvalidInput("bandwidth must be positive".into()));
    }
    let m = ensemble.count();
    let d = T::lit(ensemble.dim() as f64);
    let log_norm = -(d / T::lit(2.0)) * (T::lit(std::f64::consts::PI) * bandwidth).ln() - T::lit(m as f64).ln();
    let mut buf = vec![T::zero(); m];
    let mut total = T::zero();
    for xi in ensemble.points() {
        for (b, xj) in buf.iter_mut().zip(ensemble.points()) {
            *b = -sq_dist(xi, xj) / bandwidth;
        }
        total = total + log_sum_exp(&buf) + log_norm - log_density(xi);
    }
    Ok(total / T::lit(m as f64))
}

/// Discrete JKO objective `KL_hat(current) + W2^2(current, previous) / (2h)`.
pub fn jko_objective<T: Scalar>(
    current: &ParticleEnsemble<T>,
    previous: &ParticleEnsemble<T>,
    log_density: &dyn Fn(&[T]) -> T,
    bandwidth: T,
    stepsize: T,
) -> Result<T> {
    let kl = kde_kl_estimate(current, log_density, bandwidth)?;
    let w2 = exact_w2_squared(current, previous)?;
    Ok(kl + w2 / (T::lit(2.0) * stepsize))
}
