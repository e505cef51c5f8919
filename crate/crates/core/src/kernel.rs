use crate::ensemble::ParticleEnsemble;
use crate::error::{check_dim, FlowError, Result};
use crate::scalar::{sq_dist, Scalar};

/// Smallest bandwidth the median rule will return.
pub const BANDWIDTH_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    Rbf,
}

/// `K(x, y) = exp(-|x - y|^2 / m)` with bandwidth `m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec<T> {
    pub family: KernelFamily,
    bandwidth: T,
}

impl<T: Scalar> KernelSpec<T> {
    pub fn rbf(bandwidth: T) -> Result<Self> {
        if !(bandwidth > T::zero()) || !bandwidth.is_finite() {
            return Err(FlowError::InvalidInput(format!(
                "kernel bandwidth must be positive and finite, got {bandwidth}"
            )));
        }
        Ok(Self {
            family: KernelFamily::Rbf,
            bandwidth,
        })
    }

    #[inline]
    pub fn bandwidth(&self) -> T {
        self.bandwidth
    }

    /// Kernel value from a precomputed squared distance.
    #[inline]
    pub(crate) fn value_sq(&self, sq: T) -> T {
        (-sq / self.bandwidth).exp()
    }
}

/// Kernel value and its gradient with respect to `x`.
pub fn rbf_kernel<T: Scalar>(x: &[T], y: &[T], spec: &KernelSpec<T>) -> Result<(T, Vec<T>)> {
    check_dim(x.len(), y.len())?;
    let value = spec.value_sq(sq_dist(x, y));
    let scale = -T::lit(2.0) * value / spec.bandwidth;
    let grad = x.iter().zip(y).map(|(&a, &b)| scale * (a - b)).collect();
    Ok((value, grad))
}

/// Result of the median bandwidth rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bandwidth<T> {
    pub value: T,
    pub median: T,
    /// All pairwise distances were zero; `value` is the floor.
    pub degenerate: bool,
}

/// `med^2 / ln M`, where `med` is the median Euclidean distance over all pairs
/// `(a_i, b_j)` and `M` is the size of `a`.
///
/// Single-particle ensembles use `ln 2` in the denominator so the rule stays finite.
pub fn median_bandwidth<T: Scalar>(a: &ParticleEnsemble<T>, b: &ParticleEnsemble<T>) -> Result<Bandwidth<T>> {
    check_dim(a.dim(), b.dim())?;
    let mut dists: Vec<T> = Vec::with_capacity(a.count() * b.count());
    for p in a.points() {
        for q in b.points() {
            dists.push(sq_dist(p, q).sqrt());
        }
    }
    dists.sort_unstable_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    let n = dists.len();
    let median = if n % 2 == 1 {
        dists[n / 2]
    } else {
        (dists[n / 2 - 1] + dists[n / 2]) / T::lit(2.0)
    };
    let floor = T::lit(BANDWIDTH_FLOOR);
    let log_m = T::lit((a.count().max(2) as f64).ln());
    let raw = median * median / log_m;
    let degenerate = median == T::zero();
    let value = if raw > floor { raw } else { floor };
    Ok(Bandwidth {
        value,
        median,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ens(points: &[&[f64]]) -> ParticleEnsemble<f64> {
        ParticleEnsemble::new(points.iter().map(|p| p.to_vec()).collect()).unwrap()
    }

    #[test]
    fn identity_case() {
        let spec = KernelSpec::rbf(0.7).unwrap();
        let x = [0.3, -1.2, 4.0];
        let (v, g) = rbf_kernel(&x, &x, &spec).unwrap();
        assert_eq!(v, 1.0);
        assert!(g.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn known_value() {
        // exp(-4 / 2) = e^-2
        let spec = KernelSpec::rbf(2.0f64).unwrap();
        let (v, _) = rbf_kernel(&[0.0, 0.0], &[0.0, 2.0], &spec).unwrap();
        assert!((v - 0.135_335_283_236_612_7).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_central_difference() {
        let spec = KernelSpec::rbf(1.0).unwrap();
        let (_, g) = rbf_kernel(&[1.0], &[0.0], &spec).unwrap();
        let h = 1e-6;
        let f = |x: f64| rbf_kernel(&[x], &[0.0], &spec).unwrap().0;
        let fd = (f(1.0 + h) - f(1.0 - h)) / (2.0 * h);
        assert!(((g[0] - fd) / fd).abs() < 1e-6, "{} vs {fd}", g[0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(KernelSpec::rbf(0.0f64).is_err());
        assert!(KernelSpec::rbf(-1.0f64).is_err());
        let spec = KernelSpec::rbf(1.0).unwrap();
        assert!(matches!(
            rbf_kernel(&[1.0, 2.0], &[1.0], &spec),
            Err(FlowError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn median_rule_value() {
        // 16 points on a line, 16 copies of a point at distance 3 -> every distance is 3.
        let a = ParticleEnsemble::new(vec![vec![0.0f64]; 16]).unwrap();
        let b = ParticleEnsemble::new(vec![vec![3.0]; 16]).unwrap();
        let bw = median_bandwidth(&a, &b).unwrap();
        assert!((bw.median - 3.0).abs() < 1e-15);
        // 9 / ln 16
        assert!((bw.value - 3.246_063_842_000_167_7).abs() < 1e-12);
        assert!(!bw.degenerate);
    }

    #[test]
    fn median_rule_degenerate() {
        let a = ens(&[&[1.0, 1.0]]);
        let bw = median_bandwidth(&a, &a.clone()).unwrap();
        assert!(bw.degenerate);
        assert_eq!(bw.value, BANDWIDTH_FLOOR);
    }

    #[test]
    fn median_rule_permutation_invariant() {
        let a = ens(&[&[0.0], &[1.0], &[5.0], &[2.5]]);
        let b = ens(&[&[0.3], &[-1.0], &[7.0]]);
        let base = median_bandwidth(&a, &b).unwrap();
        let pa = a.permuted(&[2, 0, 3, 1]).unwrap();
        let pb = b.permuted(&[1, 2, 0]).unwrap();
        assert_eq!(median_bandwidth(&pa, &pb).unwrap(), base);
    }
}
