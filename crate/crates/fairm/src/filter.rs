//! Screening step: bias-corrected moment-deviation statistics across
//! training environments and the candidate invariant feature sets built
//! from them.
//!
//! For each feature j the marginal statistic
//! `T_j = sum_e alpha_e {(M_j^e - M_j^pooled)^2 - xi_j^e}` measures
//! cross-environment variability of `E[x_j y]` with the sampling variance
//! of the per-environment estimate subtracted out; features with `T_j`
//! above `rho_M` are dropped. The distance matrix `D` plays the same role
//! for the second moments `E[x_j x_k]` and seeds one candidate set per
//! surviving feature.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::data::EnvSample;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Per-environment and pooled first/second moments of the ring fold.
#[derive(Debug, Clone)]
pub struct MomentStats {
    /// M^e = X^T y / n_e, one vector per environment (input order).
    pub m_env: Vec<Vec<f64>>,
    /// Sigma^e = X^T X / n_e (uncentered second moment).
    pub sigma_env: Vec<Matrix>,
    pub m_pooled: Vec<f64>,
    pub sigma_pooled: Matrix,
    /// alpha_e = n_e / N, aligned with the input environment order.
    pub alpha: Vec<f64>,
    pub n_total: usize,
    pub p: usize,
    /// Environment positions in ascending env_id order; all pooled
    /// reductions run in this order so results do not depend on how the
    /// caller happened to order the environments.
    reduce_order: Vec<usize>,
}

fn reduce_order(envs: &[EnvSample]) -> Vec<usize> {
    let mut ord: Vec<usize> = (0..envs.len()).collect();
    ord.sort_by(|&a, &b| envs[a].env_id.cmp(&envs[b].env_id));
    ord
}

pub fn compute_moment_stats(ring: &[EnvSample]) -> Result<MomentStats> {
    let first = ring.first().ok_or_else(|| {
        Error::InvalidConfig("compute_moment_stats: no environments".into())
    })?;
    let p = first.p();
    let mut n_total = 0usize;
    for env in ring {
        if env.p() != p {
            return Err(Error::DimensionMismatch {
                context: "compute_moment_stats: feature dimension",
                expected: p,
                found: env.p(),
            });
        }
        if env.n() < 2 {
            return Err(Error::EnvironmentTooSmall {
                env_id: env.env_id.clone(),
                n: env.n(),
                min: 2,
            });
        }
        n_total += env.n();
    }

    let mut m_env = Vec::with_capacity(ring.len());
    let mut sigma_env = Vec::with_capacity(ring.len());
    let mut alpha = Vec::with_capacity(ring.len());
    for env in ring {
        let n = env.n() as f64;
        let mut m = env.x.transpose_matvec(&env.y);
        for v in &mut m {
            *v /= n;
        }
        let mut sigma = env.x.gram();
        for j in 0..p {
            for k in 0..p {
                sigma.set(j, k, sigma.get(j, k) / n);
            }
        }
        m_env.push(m);
        sigma_env.push(sigma);
        alpha.push(env.n() as f64 / n_total as f64);
    }

    let ord = reduce_order(ring);
    let mut m_pooled = vec![0.0; p];
    let mut sigma_pooled = Matrix::zeros(p, p);
    for &e in &ord {
        let a = alpha[e];
        for j in 0..p {
            m_pooled[j] += a * m_env[e][j];
        }
        for j in 0..p {
            for k in j..p {
                let v = sigma_pooled.get(j, k) + a * sigma_env[e].get(j, k);
                sigma_pooled.set(j, k, v);
            }
        }
    }
    for j in 0..p {
        for k in 0..j {
            sigma_pooled.set(j, k, sigma_pooled.get(k, j));
        }
    }

    Ok(MomentStats {
        m_env,
        sigma_env,
        m_pooled,
        sigma_pooled,
        alpha,
        n_total,
        p,
        reduce_order: ord,
    })
}

/// xi_j^e = sum_i (x_ij y_i - M_j^e)^2 / n_e^2 and
/// zeta_jk^e = sum_i (x_ij x_ik - Sigma_jk^e)^2 / n_e^2.
pub fn compute_bias_corrections(
    ring: &[EnvSample],
    stats: &MomentStats,
) -> (Vec<Vec<f64>>, Vec<Matrix>) {
    let p = stats.p;
    let mut xi = Vec::with_capacity(ring.len());
    let mut zeta = Vec::with_capacity(ring.len());
    for (e, env) in ring.iter().enumerate() {
        let n = env.n();
        let inv_n2 = 1.0 / (n as f64 * n as f64);
        let m = &stats.m_env[e];
        let sigma = &stats.sigma_env[e];

        let mut xi_e = vec![0.0; p];
        let mut zeta_e = Matrix::zeros(p, p);
        for i in 0..n {
            let row = env.x.row(i);
            let yi = env.y[i];
            for j in 0..p {
                let d = row[j] * yi - m[j];
                xi_e[j] += d * d;
            }
            for j in 0..p {
                let xj = row[j];
                let srow = sigma.row(j);
                for k in j..p {
                    let d = xj * row[k] - srow[k];
                    let v = zeta_e.get(j, k) + d * d;
                    zeta_e.set(j, k, v);
                }
            }
        }
        for v in &mut xi_e {
            *v *= inv_n2;
        }
        for j in 0..p {
            for k in j..p {
                let v = zeta_e.get(j, k) * inv_n2;
                zeta_e.set(j, k, v);
                zeta_e.set(k, j, v);
            }
        }
        xi.push(xi_e);
        zeta.push(zeta_e);
    }
    (xi, zeta)
}

/// T_j = sum_e alpha_e {(M_j^e - M_j^pooled)^2 - xi_j^e}.
pub fn marginal_statistic(stats: &MomentStats, xi: &[Vec<f64>]) -> Vec<f64> {
    let p = stats.p;
    let mut t = vec![0.0; p];
    for &e in &stats.reduce_order {
        let a = stats.alpha[e];
        for j in 0..p {
            let d = stats.m_env[e][j] - stats.m_pooled[j];
            t[j] += a * (d * d - xi[e][j]);
        }
    }
    t
}

/// Indices with `T_j <= rho_M`, ascending.
pub fn marginal_screen(stats: &MomentStats, xi: &[Vec<f64>], rho_m: f64) -> Vec<usize> {
    marginal_statistic(stats, xi)
        .iter()
        .enumerate()
        .filter(|(_, &t)| t <= rho_m)
        .map(|(j, _)| j)
        .collect()
}

/// D_jk = sum_e alpha_e {(Sigma_jk^e - Sigma_jk^pooled)^2 - zeta_jk^e}.
pub fn distance_matrix(stats: &MomentStats, zeta: &[Matrix]) -> Matrix {
    let p = stats.p;
    let mut d = Matrix::zeros(p, p);
    for &e in &stats.reduce_order {
        let a = stats.alpha[e];
        let sigma = &stats.sigma_env[e];
        for j in 0..p {
            for k in j..p {
                let dev = sigma.get(j, k) - stats.sigma_pooled.get(j, k);
                let v = d.get(j, k) + a * (dev * dev - zeta[e].get(j, k));
                d.set(j, k, v);
            }
        }
    }
    for j in 0..p {
        for k in j..p {
            d.set(k, j, d.get(j, k));
        }
    }
    d
}

/// C_j = {k in I_M : |D_jk| <= rho_D}; I_j = C_j when the whole
/// C_j x C_j block of |D| stays below rho_D, otherwise the fallback {j}.
pub fn candidate_sets(
    i_m: &[usize],
    d: &Matrix,
    rho_d: f64,
) -> (BTreeMap<usize, Vec<usize>>, BTreeMap<usize, Vec<usize>>) {
    let mut c_map = BTreeMap::new();
    let mut i_map = BTreeMap::new();
    for &j in i_m {
        let c_j: Vec<usize> = i_m
            .iter()
            .copied()
            .filter(|&k| d.get(j, k).abs() <= rho_d)
            .collect();
        let contains_self = c_j.binary_search(&j).is_ok();
        let block_ok = contains_self
            && c_j.iter().all(|&a| {
                c_j.iter().all(|&b| d.get(a, b).abs() <= rho_d)
            });
        let i_j = if block_ok { c_j.clone() } else { vec![j] };
        c_map.insert(j, c_j);
        i_map.insert(j, i_j);
    }
    (c_map, i_map)
}

/// rho_M = rho_D = C0 ((ln p)^2 + sqrt(K ln p)) / N_ring.
pub fn default_thresholds(p: usize, k: usize, n_ring: usize, c0: f64) -> Result<(f64, f64)> {
    if p < 2 || k < 1 || n_ring < 1 {
        return Err(Error::InvalidConfig(format!(
            "default_thresholds requires p >= 2, K >= 1, N_ring >= 1 (got p={p}, K={k}, N_ring={n_ring})"
        )));
    }
    if c0 <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "threshold constant C0 must be positive, got {c0}"
        )));
    }
    let lp = (p as f64).ln();
    let rho = c0 * (lp * lp + ((k as f64) * lp).sqrt()) / n_ring as f64;
    Ok((rho, rho))
}

/// Everything the screening step produced.
#[derive(Debug, Clone)]
pub struct FilterResult {
    pub xi: Vec<Vec<f64>>,
    pub zeta: Vec<Matrix>,
    pub marginal_stat: Vec<f64>,
    pub d: Matrix,
    pub i_m: Vec<usize>,
    pub c: BTreeMap<usize, Vec<usize>>,
    pub i: BTreeMap<usize, Vec<usize>>,
    pub rho_m: f64,
    pub rho_d: f64,
}

pub fn run_filter(ring: &[EnvSample], rho_m: f64, rho_d: f64) -> Result<(MomentStats, FilterResult)> {
    let stats = compute_moment_stats(ring)?;
    let (xi, zeta) = compute_bias_corrections(ring, &stats);
    let marginal_stat = marginal_statistic(&stats, &xi);
    let i_m = marginal_screen(&stats, &xi, rho_m);
    let d = distance_matrix(&stats, &zeta);
    let (c, i) = candidate_sets(&i_m, &d, rho_d);
    Ok((
        stats,
        FilterResult {
            xi,
            zeta,
            marginal_stat,
            d,
            i_m,
            c,
            i,
            rho_m,
            rho_d,
        },
    ))
}

/// Summary of how the screening went, per Remark-style infeasibility check.
#[derive(Debug, Clone)]
pub struct FeasibilityDiagnostic {
    /// False when the marginal screen rejected every feature.
    pub feasible: bool,
    pub n_features: usize,
    pub n_selected: usize,
    /// Indices whose candidate set degenerated to the fallback singleton.
    pub fallback_indices: Vec<usize>,
    /// True when every candidate set equals the full screened set.
    pub fully_invariant: bool,
}

pub fn diagnose_feasibility(result: &FilterResult) -> FeasibilityDiagnostic {
    let n_selected = result.i_m.len();
    let fallback_indices: Vec<usize> = result
        .i
        .iter()
        .filter(|(j, set)| set.len() == 1 && set[0] == **j && result.c[j].len() != 1)
        .map(|(&j, _)| j)
        .collect();
    let fully_invariant = n_selected > 0
        && result.i.values().all(|set| set == &result.i_m);
    FeasibilityDiagnostic {
        feasible: n_selected > 0,
        n_features: result.marginal_stat.len(),
        n_selected,
        fallback_indices,
        fully_invariant,
    }
}

/// Debug dump: one row per feature with its marginal statistic.
pub fn write_marginal_csv(result: &FilterResult, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "feature,statistic,rho_M,selected")?;
    for (j, t) in result.marginal_stat.iter().enumerate() {
        let selected = result.i_m.binary_search(&j).is_ok();
        writeln!(f, "{},{},{},{}", j + 1, t, result.rho_m, selected)?;
    }
    f.flush()?;
    Ok(())
}

/// Debug dump: dense D matrix, row-major, one matrix row per line.
pub fn write_distance_csv(result: &FilterResult, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let p = result.d.rows();
    for j in 0..p {
        let row: Vec<String> = (0..p).map(|k| format!("{}", result.d.get(j, k))).collect();
        writeln!(f, "{}", row.join(","))?;
    }
    f.flush()?;
    Ok(())
}
