//! Worst-environment risk minimization: an approximate saddle point of
//! `min_b max_{w in simplex} sum_e w_e R_e(b) + lambda ||b||_1` with
//! `R_e(b) = (1/n_e) ||y^e - X^e b||^2`.
//!
//! The inner maximization runs multiplicative weights on `w`, the outer
//! minimization a proximal-gradient step on `b`; both iterate sequences are
//! averaged. The reported gap compares the primal value of the averaged
//! iterate with the dual value at the averaged weights, the latter computed
//! by solving the `w`-weighted lasso exactly.

use crate::data::EnvSample;
use crate::error::{Error, Result};
use crate::lasso::{lasso_fit, soft_threshold, LassoProblem};
use crate::linalg::{l1_norm, norm_sq, Matrix};

#[derive(Debug, Clone)]
pub struct MaximinSolution {
    pub beta: Vec<f64>,
    /// Final environment weights (averaged).
    pub weights: Vec<f64>,
    pub duality_gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Empirical risk `(1/n_e) ||y^e - X^e b||^2`.
pub fn env_risk(env: &EnvSample, beta: &[f64]) -> f64 {
    let pred = env.x.matvec(beta);
    let rss: f64 = env
        .y
        .iter()
        .zip(&pred)
        .map(|(y, f)| (y - f) * (y - f))
        .sum();
    rss / env.n() as f64
}

/// Worst-environment penalized objective.
pub fn primal_value(train: &[EnvSample], beta: &[f64], lambda: f64) -> f64 {
    let worst = train
        .iter()
        .map(|e| env_risk(e, beta))
        .fold(f64::NEG_INFINITY, f64::max);
    worst + lambda * l1_norm(beta)
}

/// Largest eigenvalue of `(2/n) X^T X` via power iteration.
fn smoothness_bound(env: &EnvSample) -> f64 {
    let p = env.p();
    let mut v = vec![0.0; p];
    // deterministic start vector
    for (j, x) in v.iter_mut().enumerate() {
        *x = 1.0 + (j as f64 % 7.0) * 0.1;
    }
    let mut lam = 0.0;
    for _ in 0..30 {
        let xv = env.x.matvec(&v);
        let mut w = env.x.transpose_matvec(&xv);
        let n = norm_sq(&w).sqrt();
        if n == 0.0 {
            return 0.0;
        }
        for x in &mut w {
            *x /= n;
        }
        lam = n / norm_sq(&v).sqrt().max(1e-300);
        v = w;
    }
    2.0 * lam / env.n() as f64 * 1.05
}

/// Per-environment sufficient statistics, computed once so repeated dual
/// evaluations only reweight them.
struct EnvQuad {
    gram: Matrix,
    cross: Vec<f64>,
    ysq: f64,
    n: f64,
}

impl EnvQuad {
    fn from(env: &EnvSample) -> Self {
        EnvQuad {
            gram: env.x.gram(),
            cross: env.x.transpose_matvec(&env.y),
            ysq: norm_sq(&env.y),
            n: env.n() as f64,
        }
    }
}

/// Dual value at weights `w`: `min_b sum_e w_e R_e(b) + lambda ||b||_1`,
/// solved through the `w`-weighted pooled lasso.
fn dual_value(quads: &[EnvQuad], w: &[f64], lambda: f64) -> f64 {
    let p = quads[0].cross.len();
    let mut gram = Matrix::zeros(p, p);
    let mut cross = vec![0.0; p];
    let mut constant = 0.0;
    for (q, &we) in quads.iter().zip(w) {
        let scale = we / q.n;
        let (gd, qd) = (gram.data_mut(), q.gram.data());
        for (g, v) in gd.iter_mut().zip(qd) {
            *g += scale * v;
        }
        for (c, v) in cross.iter_mut().zip(&q.cross) {
            *c += scale * v;
        }
        constant += scale * q.ysq;
    }
    // sum_e w_e R_e(b) = b'Gb - 2c'b + constant, so the subproblem is the
    // lasso objective with the same lambda plus that constant
    let problem = LassoProblem::new(gram, cross, lambda, (0..p).collect()).unwrap();
    let sol = lasso_fit(&problem, 1e-7, 5_000);
    problem.objective(&sol.beta) + constant
}

/// Alternating mirror-ascent / proximal-gradient solver. Stops once the
/// duality gap of the averaged iterates drops below `tol` (checked every
/// `gap_check_every` iterations) or `max_iter` is reached.
pub fn maximin_fit(
    train: &[EnvSample],
    lambda: f64,
    max_iter: usize,
    tol: f64,
) -> Result<MaximinSolution> {
    if train.is_empty() {
        return Err(Error::InvalidConfig("maximin_fit: no environments".into()));
    }
    if lambda < 0.0 {
        return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {lambda}")));
    }
    let p = train[0].p();
    for env in train.iter().skip(1) {
        if env.p() != p {
            return Err(Error::DimensionMismatch {
                context: "maximin_fit: feature dimension",
                expected: p,
                found: env.p(),
            });
        }
    }
    let k = train.len();
    let lipschitz = train
        .iter()
        .map(smoothness_bound)
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let step_b = 1.0 / lipschitz;

    let mut beta = vec![0.0; p];
    let mut w = vec![1.0 / k as f64; k];
    let mut beta_avg = vec![0.0; p];
    let mut w_avg = vec![0.0; k];
    let gap_check_every = 250usize;
    let quads: Vec<EnvQuad> = train.iter().map(EnvQuad::from).collect();

    let mut best: Option<MaximinSolution> = None;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        // risks and gradient at current beta
        let mut risks = Vec::with_capacity(k);
        let mut grad = vec![0.0; p];
        for (env, &we) in train.iter().zip(&w) {
            let pred = env.x.matvec(&beta);
            let resid: Vec<f64> = pred.iter().zip(&env.y).map(|(f, y)| f - y).collect();
            let n = env.n() as f64;
            risks.push(norm_sq(&resid) / n);
            if we > 0.0 {
                let g = env.x.transpose_matvec(&resid);
                let scale = 2.0 * we / n;
                for (gj, gv) in grad.iter_mut().zip(&g) {
                    *gj += scale * gv;
                }
            }
        }

        // multiplicative-weights ascent on w
        let eta_w = ((k as f64).ln().max(1.0) / (iterations as f64)).sqrt();
        let max_r = risks.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut z: Vec<f64> = w
            .iter()
            .zip(&risks)
            .map(|(wi, r)| wi * (eta_w * (r - max_r)).exp())
            .collect();
        let zs: f64 = z.iter().sum();
        for v in &mut z {
            *v /= zs;
        }
        w = z;

        // proximal gradient step on beta
        for j in 0..p {
            beta[j] = soft_threshold(beta[j] - step_b * grad[j], step_b * lambda);
        }

        // running averages
        let t = iterations as f64;
        for j in 0..p {
            beta_avg[j] += (beta[j] - beta_avg[j]) / t;
        }
        for e in 0..k {
            w_avg[e] += (w[e] - w_avg[e]) / t;
        }

        if iterations % gap_check_every == 0 || iterations == max_iter {
            // evaluate both the averaged and the last iterate; keep the better
            let dual = dual_value(&quads, &w_avg, lambda);
            for cand in [&beta_avg, &beta] {
                let primal = primal_value(train, cand, lambda);
                let gap = primal - dual;
                if best.as_ref().is_none_or(|b| gap < b.duality_gap) {
                    best = Some(MaximinSolution {
                        beta: cand.clone(),
                        weights: w_avg.clone(),
                        duality_gap: gap,
                        iterations,
                        converged: gap <= tol,
                    });
                }
            }
            if best.as_ref().is_some_and(|b| b.converged) {
                break;
            }
        }
    }
    Ok(best.expect("at least one gap check runs"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lasso::LassoProblem;
    use crate::rng::RngStream;

    fn env_from(id: &str, x: Vec<Vec<f64>>, y: Vec<f64>) -> EnvSample {
        EnvSample::new(id, Matrix::from_rows(&x), y).unwrap()
    }

    #[test]
    fn single_environment_agrees_with_lasso() {
        let mut rng = RngStream::new(31, 0);
        let n = 30;
        let x = Matrix::from_vec(n, 3, rng.standard_normal(n * 3));
        let y = rng.standard_normal(n);
        let env = EnvSample::new("e", x, y).unwrap();
        let lambda = 0.2;

        let mm = maximin_fit(std::slice::from_ref(&env), lambda, 20_000, 1e-8).unwrap();
        // lasso objective convention: (1/N)||y - Xb||^2 + lambda'|b|; with a
        // single environment the maximin objective matches at lambda' = lambda
        let problem = LassoProblem::from_envs(std::slice::from_ref(&env), &[0, 1, 2], lambda).unwrap();
        let cd = lasso_fit(&problem, 1e-12, 50_000);
        for (a, b) in mm.beta.iter().zip(&cd.beta) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn symmetric_two_environment_saddle_is_zero() {
        // R_1(b) = (b-1)^2, R_2(b) = (b+1)^2 realized with x = 1, y = +/-1
        let e1 = env_from("a", vec![vec![1.0], vec![1.0]], vec![1.0, 1.0]);
        let e2 = env_from("b", vec![vec![1.0], vec![1.0]], vec![-1.0, -1.0]);
        let mm = maximin_fit(&[e1, e2], 0.0, 20_000, 1e-9).unwrap();
        assert!(mm.beta[0].abs() < 1e-4, "beta {}", mm.beta[0]);
    }

    #[test]
    fn two_dim_instance_matches_grid_search() {
        let mut rng = RngStream::new(32, 0);
        for _ in 0..3 {
            let mk = |rng: &mut RngStream, id: &str| {
                let n = 12;
                let x = Matrix::from_vec(n, 2, rng.standard_normal(n * 2));
                let y = rng.standard_normal(n);
                EnvSample::new(id, x, y).unwrap()
            };
            let envs = [mk(&mut rng, "a"), mk(&mut rng, "b")];
            let mm = maximin_fit(&envs, 0.0, 60_000, 1e-7).unwrap();
            let got = primal_value(&envs, &mm.beta, 0.0);

            let mut best = f64::INFINITY;
            let res = 2001;
            for a in 0..res {
                let ba = -3.0 + 6.0 * a as f64 / (res - 1) as f64;
                for b in 0..res {
                    let bb = -3.0 + 6.0 * b as f64 / (res - 1) as f64;
                    let v = primal_value(&envs, &[ba, bb], 0.0);
                    if v < best {
                        best = v;
                    }
                }
            }
            assert!(got <= best + 1e-4, "mm {got} vs grid {best}");
        }
    }

    #[test]
    fn worst_environment_risk_not_worse_than_erm() {
        let mut rng = RngStream::new(33, 0);
        for _ in 0..5 {
            let mk = |rng: &mut RngStream, id: &str| {
                let n = 15;
                let x = Matrix::from_vec(n, 3, rng.standard_normal(n * 3));
                let y = rng.standard_normal(n);
                EnvSample::new(id, x, y).unwrap()
            };
            let envs = [mk(&mut rng, "a"), mk(&mut rng, "b")];
            let mm = maximin_fit(&envs, 0.0, 60_000, 1e-8).unwrap();
            let erm = {
                let problem = LassoProblem::from_envs(&envs, &[0, 1, 2], 0.0).unwrap();
                lasso_fit(&problem, 1e-12, 50_000).beta
            };
            let mm_worst = primal_value(&envs, &mm.beta, 0.0);
            let erm_worst = primal_value(&envs, &erm, 0.0);
            assert!(mm_worst <= erm_worst + 1e-6, "{mm_worst} vs {erm_worst}");
        }
    }
}
