//! L1-penalized least squares via cyclic coordinate descent.
//!
//! The objective is `(1/N) sum_e ||y^e - X^e b||^2 + lambda ||b||_1`,
//! expressed through the pooled Gram matrix `G = (1/N) sum_e X^T X` and
//! cross-moment vector `c = (1/N) sum_e X^T y`:
//! `f(b) = b' G b - 2 c' b + lambda ||b||_1 + const`.
//! The coordinate update is `b_k <- S(c_k - sum_{l != k} G_kl b_l, lambda/2) / G_kk`.

use crate::data::EnvSample;
use crate::error::{Error, Result};
use crate::linalg::{dot, l1_norm, Matrix};

/// Pooled quadratic problem data restricted to a support set.
#[derive(Debug, Clone)]
pub struct LassoProblem {
    pub gram: Matrix,
    pub cross: Vec<f64>,
    pub lambda: f64,
    /// Original feature indices the rows/columns of `gram` refer to.
    pub support: Vec<usize>,
}

impl LassoProblem {
    pub fn new(gram: Matrix, cross: Vec<f64>, lambda: f64, support: Vec<usize>) -> Result<Self> {
        let q = support.len();
        if gram.rows() != q || gram.cols() != q {
            return Err(Error::DimensionMismatch {
                context: "LassoProblem: gram dimension vs support",
                expected: q,
                found: gram.rows(),
            });
        }
        if cross.len() != q {
            return Err(Error::DimensionMismatch {
                context: "LassoProblem: cross length vs support",
                expected: q,
                found: cross.len(),
            });
        }
        if lambda < 0.0 {
            return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {lambda}")));
        }
        Ok(LassoProblem {
            gram,
            cross,
            lambda,
            support,
        })
    }

    /// Pooled problem over the given environments, columns restricted to
    /// `support`. Gram and cross are divided by the total sample count.
    pub fn from_envs(envs: &[EnvSample], support: &[usize], lambda: f64) -> Result<Self> {
        let n_total: usize = envs.iter().map(|e| e.n()).sum();
        if n_total == 0 {
            return Err(Error::InvalidConfig("LassoProblem: no samples".into()));
        }
        let q = support.len();
        let mut gram = Matrix::zeros(q, q);
        let mut cross = vec![0.0; q];
        for env in envs {
            let xs = env.x.restrict_columns(support);
            let g = xs.gram();
            for a in 0..q {
                for b in 0..q {
                    gram.set(a, b, gram.get(a, b) + g.get(a, b));
                }
            }
            let c = xs.transpose_matvec(&env.y);
            for a in 0..q {
                cross[a] += c[a];
            }
        }
        let inv_n = 1.0 / n_total as f64;
        for (a, c) in cross.iter_mut().enumerate() {
            *c *= inv_n;
            for b in 0..q {
                gram.set(a, b, gram.get(a, b) * inv_n);
            }
        }
        LassoProblem::new(gram, cross, lambda, support.to_vec())
    }

    /// Objective value without the constant `(1/N) ||y||^2` term.
    pub fn objective(&self, beta: &[f64]) -> f64 {
        let gb = self.gram.matvec(beta);
        dot(beta, &gb) - 2.0 * dot(&self.cross, beta) + self.lambda * l1_norm(beta)
    }

    /// Componentwise KKT residual for `|G b - c + (lambda/2) s| <= 0` with a
    /// subgradient `s` chosen optimally for the zero coordinates.
    pub fn kkt_residual(&self, beta: &[f64]) -> f64 {
        let gb = self.gram.matvec(beta);
        let half = self.lambda / 2.0;
        let mut worst = 0.0f64;
        for k in 0..beta.len() {
            let g = gb[k] - self.cross[k];
            let r = if beta[k] > 0.0 {
                (g + half).abs()
            } else if beta[k] < 0.0 {
                (g - half).abs()
            } else {
                (g.abs() - half).max(0.0)
            };
            worst = worst.max(r);
        }
        worst
    }
}

#[derive(Debug, Clone)]
pub struct LassoSolution {
    pub beta: Vec<f64>,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// `sign(z) * max(|z| - t, 0)`.
#[inline]
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Cyclic coordinate descent, fixed ascending coordinate order. Stops when
/// the largest coefficient change in a sweep falls below `tol`.
pub fn lasso_fit(problem: &LassoProblem, tol: f64, max_iter: usize) -> LassoSolution {
    let q = problem.cross.len();
    let mut beta = vec![0.0; q];
    if q == 0 {
        return LassoSolution {
            beta,
            kkt_residual: 0.0,
            iterations: 0,
            converged: true,
        };
    }
    // g = gram * beta, maintained incrementally
    let mut g = vec![0.0; q];
    let half = problem.lambda / 2.0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let mut max_delta = 0.0f64;
        for k in 0..q {
            let gkk = problem.gram.get(k, k);
            if gkk <= 1e-12 {
                // degenerate column (all-zero feature); leave at zero
                continue;
            }
            let old = beta[k];
            let partial = problem.cross[k] - (g[k] - gkk * old);
            let new = soft_threshold(partial, half) / gkk;
            if new != old {
                let delta = new - old;
                let col = problem.gram.row(k); // gram is symmetric
                for (gi, c) in g.iter_mut().zip(col) {
                    *gi += delta * c;
                }
                beta[k] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        if max_delta <= tol {
            converged = true;
            break;
        }
    }
    let kkt_residual = problem.kkt_residual(&beta);
    LassoSolution {
        beta,
        kkt_residual,
        iterations,
        converged,
    }
}

/// lambda = c * sqrt(ln p / N_ring).
pub fn default_lambda(p: usize, n_ring: usize, c_lambda: f64) -> Result<f64> {
    if p < 2 || n_ring < 1 {
        return Err(Error::InvalidConfig(format!(
            "default_lambda requires p >= 2 and N_ring >= 1 (got p={p}, N_ring={n_ring})"
        )));
    }
    if c_lambda < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "lambda constant must be >= 0, got {c_lambda}"
        )));
    }
    Ok(c_lambda * ((p as f64).ln() / n_ring as f64).sqrt())
}
