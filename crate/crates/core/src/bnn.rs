//! Posterior of a one-hidden-layer Bayesian regression network.
//!
//! A particle is the flattened network followed by `eta = log tau`, the log noise
//! precision. The prior is `N(0, prior_variance)` on every weight and bias and
//! `Gamma(shape, rate)` on `tau`, written in `eta` including the Jacobian.

use rand::Rng;

use crate::dataset::RegressionDataset;
use crate::error::{check_dim, FlowError, Result};
use crate::mlp::{param_count, Activation, FlatView, MlpParams};
use crate::scalar::{log_sum_exp, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnnSpec<T> {
    pub input_dim: usize,
    pub hidden: usize,
    pub prior_variance: T,
    pub gamma_shape: T,
    pub gamma_rate: T,
}

impl<T: Scalar> BnnSpec<T> {
    /// 50 tanh units, weight prior variance 0.01, `Gamma(1, 0.1)` noise precision prior.
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: 50,
            prior_variance: T::lit(0.01),
            gamma_shape: T::one(),
            gamma_rate: T::lit(0.1),
        }
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.input_dim, self.hidden, 1]
    }

    pub fn activations(&self) -> [Activation; 2] {
        [Activation::Tanh, Activation::Identity]
    }

    pub fn network_len(&self) -> usize {
        param_count(&self.sizes())
    }

    /// Network parameters plus the log precision.
    pub fn particle_len(&self) -> usize {
        self.network_len() + 1
    }

    pub fn network(&self, particle: &[T]) -> Result<MlpParams<T>> {
        check_dim(self.particle_len(), particle.len())?;
        MlpParams::from_flat(
            &self.sizes(),
            &self.activations(),
            FlatView(particle[..self.network_len()].to_vec()),
        )
    }

    /// Glorot network with the given initial log precision.
    pub fn init_particle<R: Rng + ?Sized>(&self, log_precision: T, rng: &mut R) -> Result<Vec<T>> {
        let net = MlpParams::glorot(&self.sizes(), &self.activations(), rng)?;
        let mut p = net.flatten().into_inner();
        p.push(log_precision);
        Ok(p)
    }
}

/// Log prior and its gradient.
pub fn bnn_log_prior<T: Scalar>(spec: &BnnSpec<T>, particle: &[T]) -> Result<(T, Vec<T>)> {
    check_dim(spec.particle_len(), particle.len())?;
    let n = spec.network_len();
    let mut grad = vec![T::zero(); particle.len()];
    let mut lp = T::zero();
    let half = T::lit(0.5);
    for (g, &w) in grad[..n].iter_mut().zip(&particle[..n]) {
        lp = lp - half * w * w / spec.prior_variance;
        *g = -w / spec.prior_variance;
    }
    let eta = particle[n];
    let tau = eta.exp();
    lp = lp + spec.gamma_shape * eta - spec.gamma_rate * tau;
    grad[n] = spec.gamma_shape - spec.gamma_rate * tau;
    Ok((lp, grad))
}

/// Unnormalised log posterior on a minibatch, likelihood scaled by `n_total / |batch|`.
pub fn bnn_logp_grad<T: Scalar>(
    spec: &BnnSpec<T>,
    particle: &[T],
    batch_x: &[&[T]],
    batch_y: &[T],
    n_total: usize,
) -> Result<(T, Vec<T>)> {
    check_dim(batch_x.len(), batch_y.len())?;
    if batch_y.is_empty() {
        return Err(FlowError::InvalidInput("minibatch must be non-empty".into()));
    }
    let (prior, mut grad) = bnn_log_prior(spec, particle)?;
    let net = spec.network(particle)?;
    let n = spec.network_len();
    let eta = particle[n];
    let tau = eta.exp();
    let half = T::lit(0.5);
    let log_norm = half * eta - half * T::lit((2.0 * std::f64::consts::PI).ln());
    let scale = T::lit(n_total as f64) / T::lit(batch_y.len() as f64);

    let mut lik = T::zero();
    let mut eta_grad = T::zero();
    let mut net_grad = vec![T::zero(); n];
    for (&x, &y) in batch_x.iter().zip(batch_y) {
        let (out, cache) = net.forward(x)?;
        let r = y - out[0];
        lik = lik + log_norm - half * tau * r * r;
        eta_grad = eta_grad + half - half * tau * r * r;
        net.backward_into(&cache, &[tau * r], Some(&mut net_grad), scale)?;
    }
    let value = prior + scale * lik;
    if !value.is_finite() {
        return Err(FlowError::NonFinite {
            what: "log posterior",
            index: 0,
        });
    }
    for (g, ng) in grad[..n].iter_mut().zip(&net_grad) {
        *g = *g + *ng;
    }
    grad[n] = grad[n] + scale * eta_grad;
    Ok((value, grad))
}

/// Test RMSE and mean test log-likelihood of the particle-averaged predictive.
///
/// Each particle predicts `N(f(x) sd_y + mean_y, sd_y^2 / tau)` on the original scale;
/// the predictive density is the equal-weight mixture over particles.
pub fn regression_metrics<T: Scalar>(
    particles: &[Vec<T>],
    spec: &BnnSpec<T>,
    data: &RegressionDataset<T>,
) -> Result<(T, T)> {
    if particles.is_empty() {
        return Err(FlowError::InvalidInput("need at least one particle".into()));
    }
    if data.test.is_empty() {
        return Err(FlowError::InvalidInput("dataset has no test rows".into()));
    }
    let nets: Vec<MlpParams<T>> = particles.iter().map(|p| spec.network(p)).collect::<Result<_>>()?;
    let n = spec.network_len();
    let k = T::lit(particles.len() as f64);
    let half = T::lit(0.5);
    let log_two_pi = T::lit((2.0 * std::f64::consts::PI).ln());
    let sd_y = data.target_std;
    let mut sq = T::zero();
    let mut ll = T::zero();
    let mut comps = vec![T::zero(); particles.len()];
    for &i in &data.test {
        let y = data.raw_target(i);
        let mut mean = T::zero();
        for ((c, net), p) in comps.iter_mut().zip(&nets).zip(particles) {
            let mu = data.destandardize_target(net.predict(&data.features[i])?[0]);
            let var = sd_y * sd_y / p[n].exp();
            mean = mean + mu;
            *c = -half * (log_two_pi + var.ln() + (y - mu) * (y - mu) / var);
        }
        mean = mean / k;
        sq = sq + (mean - y) * (mean - y);
        ll = ll + log_sum_exp(&comps) - k.ln();
    }
    let m = T::lit(data.test.len() as f64);
    Ok(((sq / m).sqrt(), ll / m))
}
