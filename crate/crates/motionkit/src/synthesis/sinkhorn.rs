//! Entropic optimal transport via log-domain Sinkhorn iterations.
//!
//! Given a cost matrix `C` and marginals `a`, `b`, the solver finds the
//! coupling `P = diag(u) K diag(v)` with `K = exp(-C / lambda)` whose row
//! sums are `a` and column sums are `b`. All arithmetic runs on dual
//! potentials in log space, so small `lambda` (sharply peaked kernels) cannot
//! underflow. Iteration stops when the largest marginal violation drops below
//! the tolerance or the iteration budget runs out; the caller can tell which
//! from the `converged` flag.

use super::SynthesisError;

pub const DEFAULT_LAMBDA: f64 = 0.1;
pub const DEFAULT_MAX_ITERS: usize = 1000;
pub const DEFAULT_TOL: f64 = 1e-6;

const MARGINAL_SUM_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct SinkhornProblem {
    /// Row-major n x n cost matrix, nonnegative and finite.
    pub cost: Vec<f64>,
    pub n: usize,
    /// Source marginal on the n-simplex.
    pub a: Vec<f64>,
    /// Target marginal on the n-simplex.
    pub b: Vec<f64>,
    pub lambda: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl SinkhornProblem {
    pub fn new(cost: Vec<f64>, a: Vec<f64>, b: Vec<f64>) -> Result<Self, SynthesisError> {
        Self::with_options(cost, a, b, DEFAULT_LAMBDA, DEFAULT_MAX_ITERS, DEFAULT_TOL)
    }

    pub fn with_options(
        cost: Vec<f64>,
        a: Vec<f64>,
        b: Vec<f64>,
        lambda: f64,
        max_iters: usize,
        tol: f64,
    ) -> Result<Self, SynthesisError> {
        let n = a.len();
        if n == 0 || b.len() != n || cost.len() != n * n {
            return Err(SynthesisError::BadProblemShape {
                n,
                b_len: b.len(),
                cost_len: cost.len(),
            });
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(SynthesisError::BadLambda { lambda });
        }
        if cost.iter().any(|c| !c.is_finite()) {
            return Err(SynthesisError::BadCost);
        }
        for (name, m) in [("a", &a), ("b", &b)] {
            if m.iter().any(|&v| !(v >= 0.0)) {
                return Err(SynthesisError::BadMarginal {
                    which: name,
                    reason: "negative or NaN entry".into(),
                });
            }
            let sum: f64 = m.iter().sum();
            if (sum - 1.0).abs() > MARGINAL_SUM_TOL {
                return Err(SynthesisError::BadMarginal {
                    which: name,
                    reason: format!("sums to {sum}, not 1"),
                });
            }
        }
        Ok(SinkhornProblem {
            cost,
            n,
            a,
            b,
            lambda,
            max_iters,
            tol,
        })
    }
}

#[derive(Clone, Debug)]
pub struct TransportPlan {
    /// Row-major n x n coupling, entries nonnegative.
    pub p: Vec<f64>,
    pub n: usize,
    pub converged: bool,
    pub iters_used: usize,
}

impl TransportPlan {
    /// Frobenius inner product with a cost matrix: the transport cost.
    pub fn cost(&self, cost: &[f64]) -> f64 {
        assert_eq!(cost.len(), self.p.len());
        self.p.iter().zip(cost).map(|(p, c)| p * c).sum()
    }

    /// Largest absolute row/column marginal violation against (a, b).
    pub fn marginal_violation(&self, a: &[f64], b: &[f64]) -> f64 {
        let n = self.n;
        let mut worst = 0.0f64;
        for i in 0..n {
            let row: f64 = self.p[i * n..(i + 1) * n].iter().sum();
            worst = worst.max((row - a[i]).abs());
        }
        for j in 0..n {
            let col: f64 = (0..n).map(|i| self.p[i * n + j]).sum();
            worst = worst.max((col - b[j]).abs());
        }
        worst
    }
}

/// log(sum(exp(x))) over the values produced by `terms`, stable for large
/// magnitudes and empty-of-mass (-inf) inputs.
fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = terms.map(|t| (t - max).exp()).sum();
    max + sum.ln()
}

pub fn sinkhorn(problem: &SinkhornProblem) -> TransportPlan {
    let n = problem.n;
    let lam = problem.lambda;
    let c = &problem.cost;
    let ln_a: Vec<f64> = problem.a.iter().map(|&v| v.ln()).collect();
    let ln_b: Vec<f64> = problem.b.iter().map(|&v| v.ln()).collect();
    // dual potentials; P_ij = exp((f_i + g_j - C_ij) / lambda)
    let mut f = vec![0.0f64; n];
    let mut g = vec![0.0f64; n];
    let mut p = vec![0.0f64; n * n];
    let mut iters_used = 0;
    let mut converged = false;
    for iter in 1..=problem.max_iters {
        for i in 0..n {
            let row = &c[i * n..(i + 1) * n];
            let lse = log_sum_exp(
                g.iter()
                    .zip(row)
                    .map(move |(&gj, &cij)| (gj - cij) / lam),
            );
            f[i] = if ln_a[i] == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                lam * (ln_a[i] - lse)
            };
        }
        for j in 0..n {
            let fz = &f;
            let lse = log_sum_exp(
                (0..n).map(move |i| (fz[i] - c[i * n + j]) / lam),
            );
            g[j] = if ln_b[j] == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                lam * (ln_b[j] - lse)
            };
        }
        for i in 0..n {
            for j in 0..n {
                let e = (f[i] + g[j] - c[i * n + j]) / lam;
                p[i * n + j] = if e == f64::NEG_INFINITY { 0.0 } else { e.exp() };
            }
        }
        iters_used = iter;
        let plan = TransportPlan {
            p: std::mem::take(&mut p),
            n,
            converged: false,
            iters_used,
        };
        let violation = plan.marginal_violation(&problem.a, &problem.b);
        p = plan.p;
        if violation < problem.tol {
            converged = true;
            break;
        }
    }
    TransportPlan {
        p,
        n,
        converged,
        iters_used,
    }
}

/// Exact optimal transport cost for uniform marginals by brute force over all
/// assignments (test oracle; factorial in n, so keep n small). By Birkhoff's
/// theorem the optimum of the relaxed problem with uniform marginals sits at a
/// permutation matrix scaled by 1/n.
pub fn lp_optimum_uniform(cost: &[f64], n: usize) -> f64 {
    assert_eq!(cost.len(), n * n);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let total: f64 = p.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
        best = best.min(total / n as f64);
    });
    best
}

fn permute(items: &mut [usize], k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}
