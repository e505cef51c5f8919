//! Discrete optimal transport between two equally weighted ensembles.
//!
//! [`entropic_plan`] solves the entropy-regularised program with log-domain Sinkhorn
//! scaling, so plans have the form `p_ij = u_i exp(-c_ij / lambda) v_j`.
//! [`exact_w2_squared`] enumerates assignments and is only meant for small checks.

use crate::ensemble::ParticleEnsemble;
use crate::error::{check_dim, FlowError, Result};
use crate::scalar::{log_sum_exp, sq_dist, Scalar};

/// Largest ensemble [`exact_w2_squared`] will enumerate.
pub const EXACT_W2_LIMIT: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan<T> {
    /// Row-major `M x M` plan weights.
    pub weights: Vec<T>,
    /// Row-major `M x M` cost matrix the plan was solved for.
    pub cost: Vec<T>,
    pub size: usize,
    pub iterations: usize,
}

impl<T: Scalar> TransportPlan<T> {
    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> T {
        self.weights[i * self.size + j]
    }

    /// `sum_ij p_ij c_ij`.
    pub fn transport_cost(&self) -> T {
        self.weights
            .iter()
            .zip(&self.cost)
            .fold(T::zero(), |acc, (&p, &c)| acc + p * c)
    }

    /// Largest deviation of any row or column sum from `1/M`.
    pub fn marginal_violation(&self) -> T {
        let n = self.size;
        let target = T::one() / T::lit(n as f64);
        let mut worst = T::zero();
        for i in 0..n {
            let row = (0..n).fold(T::zero(), |a, j| a + self.weight(i, j));
            let col = (0..n).fold(T::zero(), |a, j| a + self.weight(j, i));
            worst = worst.max((row - target).abs()).max((col - target).abs());
        }
        worst
    }
}

/// Squared-Euclidean cost matrix between two ensembles.
pub fn cost_matrix<T: Scalar>(a: &ParticleEnsemble<T>, b: &ParticleEnsemble<T>) -> Result<Vec<T>> {
    check_dim(a.dim(), b.dim())?;
    check_dim(a.count(), b.count())?;
    Ok(a.points()
        .flat_map(|p| b.points().map(move |q| sq_dist(p, q)))
        .collect())
}

/// Entropic transport plan with uniform marginals `1/M` on both sides.
///
/// The regularisation is annealed geometrically from the cost range down to `lambda`,
/// warm-starting the dual potentials at each stage; `max_iters` bounds the total
/// number of scaling sweeps across all stages.
pub fn entropic_plan<T: Scalar>(
    cost: &[T],
    size: usize,
    lambda: T,
    max_iters: usize,
    tol: T,
) -> Result<TransportPlan<T>> {
    check_dim(size * size, cost.len())?;
    if size == 0 {
        return Err(FlowError::InvalidInput("empty cost matrix".into()));
    }
    if !(lambda > T::zero()) {
        return Err(FlowError::InvalidInput(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    if cost.iter().any(|&c| !c.is_finite() || c < T::zero()) {
        return Err(FlowError::InvalidInput("cost must be finite and non-negative".into()));
    }

    let n = size;
    let log_marginal = -T::lit(n as f64).ln();
    let max_cost = cost.iter().copied().fold(T::zero(), T::max);
    let mut f = vec![T::zero(); n];
    let mut g = vec![T::zero(); n];
    let mut scratch = vec![T::zero(); n];
    let mut iterations = 0usize;
    let mut reg = if max_cost > lambda { max_cost } else { lambda };
    let half = T::lit(0.5);

    loop {
        let final_stage = reg <= lambda;
        // intermediate stages only need rough potentials
        let stage_tol = if final_stage { tol } else { tol.max(T::lit(1e-3)) };
        let mut violation = T::infinity();
        while iterations < max_iters {
            iterations += 1;
            for i in 0..n {
                for j in 0..n {
                    scratch[j] = (g[j] - cost[i * n + j]) / reg;
                }
                f[i] = reg * (log_marginal - log_sum_exp(&scratch));
            }
            for j in 0..n {
                for i in 0..n {
                    scratch[i] = (f[i] - cost[i * n + j]) / reg;
                }
                g[j] = reg * (log_marginal - log_sum_exp(&scratch));
            }
            violation = row_violation(&f, &g, cost, n, reg);
            if violation <= stage_tol {
                break;
            }
        }
        if violation > stage_tol {
            return Err(FlowError::NotConverged {
                iterations,
                violation: violation.as_f64(),
            });
        }
        if final_stage {
            break;
        }
        reg = (reg * half).max(lambda);
    }

    let weights = (0..n * n)
        .map(|k| ((f[k / n] + g[k % n] - cost[k]) / reg).exp())
        .collect();
    Ok(TransportPlan {
        weights,
        cost: cost.to_vec(),
        size: n,
        iterations,
    })
}

fn row_violation<T: Scalar>(f: &[T], g: &[T], cost: &[T], n: usize, reg: T) -> T {
    let target = T::one() / T::lit(n as f64);
    let mut worst = T::zero();
    for i in 0..n {
        let row = (0..n).fold(T::zero(), |a, j| a + ((f[i] + g[j] - cost[i * n + j]) / reg).exp());
        worst = worst.max((row - target).abs());
    }
    worst
}

/// `min_sigma 1/M sum_i |a_i - b_sigma(i)|^2` by enumerating permutations (Heap's algorithm).
pub fn exact_w2_squared<T: Scalar>(a: &ParticleEnsemble<T>, b: &ParticleEnsemble<T>) -> Result<T> {
    let n = a.count();
    if n > EXACT_W2_LIMIT {
        return Err(FlowError::TooLarge {
            count: n,
            limit: EXACT_W2_LIMIT,
        });
    }
    let cost = cost_matrix(a, b)?;
    let mut perm: Vec<usize> = (0..n).collect();
    let total = |p: &[usize]| {
        p.iter()
            .enumerate()
            .fold(T::zero(), |acc, (i, &j)| acc + cost[i * n + j])
    };
    let mut best = total(&perm);
    let mut counters = vec![0usize; n];
    let mut i = 1;
    while i < n {
        if counters[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(counters[i], i);
            }
            best = best.min(total(&perm));
            counters[i] += 1;
            i = 1;
        } else {
            counters[i] = 0;
            i += 1;
        }
    }
    Ok(best / T::lit(n as f64))
}
