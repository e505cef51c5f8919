use crate::error::{check_dim, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    RmsProp,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "rmsprop" => Ok(Self::RmsProp),
            "adam" => Ok(Self::Adam),
            other => Err(format!("unknown optimizer `{other}` (expected sgd, rmsprop or adam)")),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Sgd => "sgd",
            Self::RmsProp => "rmsprop",
            Self::Adam => "adam",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerSpec<T> {
    pub kind: OptimizerKind,
    pub learning_rate: T,
    /// Adam first-moment decay.
    pub beta1: T,
    /// Adam second-moment decay; RMSProp decay.
    pub beta2: T,
    pub epsilon: T,
}

impl<T: Scalar> OptimizerSpec<T> {
    pub fn new(kind: OptimizerKind, learning_rate: T) -> Self {
        let beta2 = match kind {
            OptimizerKind::RmsProp => 0.9,
            _ => 0.999,
        };
        Self {
            kind,
            learning_rate,
            beta1: T::lit(0.9),
            beta2: T::lit(beta2),
            epsilon: T::lit(1e-8),
        }
    }

    pub fn sgd(learning_rate: T) -> Self {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    pub fn rmsprop(learning_rate: T) -> Self {
        Self::new(OptimizerKind::RmsProp, learning_rate)
    }

    pub fn adam(learning_rate: T) -> Self {
        Self::new(OptimizerKind::Adam, learning_rate)
    }
}

/// Moment accumulators for one flat parameter vector.
///
/// Updates follow the descent convention `params <- params - direction(grads)`;
/// callers ascending an objective pass the negated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub spec: OptimizerSpec<T>,
    first: Vec<T>,
    second: Vec<T>,
    step: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(spec: OptimizerSpec<T>, len: usize) -> Self {
        let (first, second) = match spec.kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::RmsProp => (Vec::new(), vec![T::zero(); len]),
            OptimizerKind::Adam => (vec![T::zero(); len], vec![T::zero(); len]),
        };
        Self {
            spec,
            first,
            second,
            step: 0,
        }
    }

    #[inline]
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.first.len().max(self.second.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Applies one update in place.
    pub fn update(&mut self, params: &mut [T], grads: &[T]) -> Result<()> {
        check_dim(params.len(), grads.len())?;
        if self.spec.kind != OptimizerKind::Sgd {
            check_dim(self.second.len(), params.len())?;
        }
        self.step += 1;
        let lr = self.spec.learning_rate;
        let eps = self.spec.epsilon;
        match self.spec.kind {
            OptimizerKind::Sgd => {
                for (p, &g) in params.iter_mut().zip(grads) {
                    *p = *p - lr * g;
                }
            }
            OptimizerKind::RmsProp => {
                let rho = self.spec.beta2;
                for ((p, &g), v) in params.iter_mut().zip(grads).zip(&mut self.second) {
                    *v = rho * *v + (T::one() - rho) * g * g;
                    *p = *p - lr * g / (v.sqrt() + eps);
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (self.spec.beta1, self.spec.beta2);
                let t = self.step as i32;
                let c1 = T::one() - b1.powi(t);
                let c2 = T::one() - b2.powi(t);
                for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
                    *m = b1 * *m + (T::one() - b1) * g;
                    *v = b2 * *v + (T::one() - b2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step() {
        let mut s = OptimizerState::new(OptimizerSpec::sgd(0.1), 2);
        let mut p = vec![1.0f64, -1.0];
        s.update(&mut p, &[2.0, -3.0]).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-15 && (p[1] + 0.7).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_magnitude() {
        // bias-corrected first step: lr * g / (|g| + 1e-8)
        for g in [3.0, -0.02, 1e-4] {
            let mut s = OptimizerState::new(OptimizerSpec::adam(1e-3), 1);
            let mut p = vec![0.0];
            s.update(&mut p, &[g]).unwrap();
            let expected = -1e-3 * g / (f64::abs(g) + 1e-8);
            assert!((p[0] - expected).abs() < 1e-15, "{} vs {expected}", p[0]);
        }
    }

    #[test]
    fn zero_gradient_is_a_no_op_from_fresh_state() {
        for spec in [OptimizerSpec::adam(0.1), OptimizerSpec::rmsprop(0.1)] {
            let mut s = OptimizerState::new(spec, 3);
            let mut p = vec![1.0, 2.0, 3.0];
            s.update(&mut p, &[0.0; 3]).unwrap();
            assert_eq!(p, vec![1.0, 2.0, 3.0]);
            assert_eq!(s.step_count(), 1);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut s = OptimizerState::new(OptimizerSpec::adam(0.1), 3);
        let mut p = vec![0.0; 2];
        assert!(s.update(&mut p, &[0.0; 2]).is_err());
    }

    #[test]
    fn parses_kinds() {
        assert_eq!("adam".parse::<OptimizerKind>().unwrap(), OptimizerKind::Adam);
        assert!("lbfgs".parse::<OptimizerKind>().is_err());
    }
}
