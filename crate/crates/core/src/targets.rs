use crate::error::{check_dim, FlowError, Result};
use crate::scalar::{log_sum_exp, Scalar};

/// An unnormalised log-density with gradient.
pub trait LogDensity<T: Scalar> {
    fn dim(&self) -> usize;

    /// `(log p(x) + const, grad log p(x))`.
    fn log_density_and_grad(&self, x: &[T]) -> (T, Vec<T>);

    fn log_density(&self, x: &[T]) -> T {
        self.log_density_and_grad(x).0
    }

    fn grad_log_density(&self, x: &[T]) -> Vec<T> {
        self.log_density_and_grad(x).1
    }
}

/// Adapts a density to the closure form the flow routines take.
pub fn score_of<'a, T: Scalar, L: LogDensity<T> + ?Sized>(density: &'a L) -> impl FnMut(usize, &[T]) -> Vec<T> + 'a {
    move |_, x| density.grad_log_density(x)
}

/// Mixture of Gaussians with diagonal covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture<T> {
    weights: Vec<T>,
    means: Vec<Vec<T>>,
    variances: Vec<Vec<T>>,
}

impl<T: Scalar> GaussianMixture<T> {
    pub fn new(weights: Vec<T>, means: Vec<Vec<T>>, variances: Vec<Vec<T>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(FlowError::InvalidInput("mixture needs at least one component".into()));
        }
        check_dim(weights.len(), means.len())?;
        check_dim(weights.len(), variances.len())?;
        let d = means[0].len();
        if d == 0 {
            return Err(FlowError::InvalidInput("mixture dimension must be >= 1".into()));
        }
        for (m, v) in means.iter().zip(&variances) {
            check_dim(d, m.len())?;
            check_dim(d, v.len())?;
            if v.iter().any(|&s| !(s > T::zero()) || !s.is_finite()) {
                return Err(FlowError::InvalidInput("variances must be positive".into()));
            }
            if m.iter().any(|s| !s.is_finite()) {
                return Err(FlowError::InvalidInput("means must be finite".into()));
            }
        }
        if weights.iter().any(|&w| !(w > T::zero())) {
            return Err(FlowError::InvalidInput("mixture weights must be positive".into()));
        }
        let total = weights.iter().copied().sum::<T>();
        if (total - T::one()).abs() > T::lit(1e-6) {
            return Err(FlowError::InvalidInput(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        Ok(Self {
            weights,
            means,
            variances,
        })
    }

    /// Single Gaussian `N(mean, variance * I)`.
    pub fn isotropic(mean: Vec<T>, variance: T) -> Result<Self> {
        let d = mean.len();
        Self::new(vec![T::one()], vec![mean], vec![vec![variance; d]])
    }

    /// Equal-weight 1D mixture with unit variances at the given locations.
    pub fn unit_modes_1d(locations: &[T]) -> Result<Self> {
        let k = locations.len();
        let w = T::one() / T::lit(k as f64);
        Self::new(
            vec![w; k],
            locations.iter().map(|&l| vec![l]).collect(),
            vec![vec![T::one()]; k],
        )
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<T>] {
        &self.means
    }

    pub fn variances(&self) -> &[Vec<T>] {
        &self.variances
    }

    /// Mixture mean.
    pub fn mean(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim()];
        for (w, m) in self.weights.iter().zip(&self.means) {
            for (o, &v) in out.iter_mut().zip(m) {
                *o = *o + *w * v;
            }
        }
        out
    }

    /// Marginal variances of the mixture.
    pub fn marginal_variance(&self) -> Vec<T> {
        let mu = self.mean();
        let mut out = vec![T::zero(); self.dim()];
        for ((w, m), v) in self.weights.iter().zip(&self.means).zip(&self.variances) {
            for c in 0..out.len() {
                let dev = m[c] - mu[c];
                out[c] = out[c] + *w * (v[c] + dev * dev);
            }
        }
        out
    }
}

impl<T: Scalar> LogDensity<T> for GaussianMixture<T> {
    fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn log_density_and_grad(&self, x: &[T]) -> (T, Vec<T>) {
        let d = self.dim();
        assert_eq!(x.len(), d, "mixture evaluated at a point of the wrong dimension");
        let half = T::lit(0.5);
        let log_two_pi = T::lit((2.0 * std::f64::consts::PI).ln());
        let logs: Vec<T> = self
            .weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((&w, m), v)| {
                let mut acc = w.ln();
                for c in 0..d {
                    let z = x[c] - m[c];
                    acc = acc - half * (z * z / v[c] + v[c].ln() + log_two_pi);
                }
                acc
            })
            .collect();
        let total = log_sum_exp(&logs);
        let mut grad = vec![T::zero(); d];
        for ((l, m), v) in logs.iter().zip(&self.means).zip(&self.variances) {
            let r = (*l - total).exp();
            for c in 0..d {
                grad[c] = grad[c] - r * (x[c] - m[c]) / v[c];
            }
        }
        (total, grad)
    }
}
