//! End-to-end fitting: the three-step invariant procedure
//! (split -> filter -> per-candidate lasso -> held-out selection) and the
//! pooled-lasso, maximin and oracle baselines behind one model type.

use std::collections::BTreeMap;

use crate::data::{split_sample, EnvSample, MultiEnvData};
use crate::error::{Error, Result};
use crate::filter::{self, FeasibilityDiagnostic};
use crate::lasso::{default_lambda, lasso_fit, LassoProblem};
use crate::linalg::Matrix;
use crate::maximin;
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    Fairm,
    Erm,
    Maximin,
    Oracle,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Fairm => "FAIRM",
            Method::Erm => "ERM",
            Method::Maximin => "MAXIMIN",
            Method::Oracle => "ORACLE",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct FittedModel {
    pub method: Method,
    /// Full-length coefficient vector, zero outside `support`.
    pub beta: Vec<f64>,
    pub support: Vec<usize>,
    /// Selected candidate index (invariant procedure only).
    pub chosen_j: Option<usize>,
    pub candidates_evaluated: usize,
    pub diagnostics: Option<FeasibilityDiagnostic>,
}

/// Tuning knobs for the invariant fit.
#[derive(Debug, Clone)]
pub struct FairmConfig {
    /// Threshold constant in front of the `((ln p)^2 + sqrt(K ln p)) / N` rate.
    pub c0: f64,
    /// Constant in front of the `sqrt(ln p / N)` lasso penalty rate.
    pub c_lambda: f64,
    pub split_fraction: f64,
    pub lasso_tol: f64,
    pub lasso_max_iter: usize,
}

impl Default for FairmConfig {
    fn default() -> Self {
        FairmConfig {
            c0: 1.0,
            c_lambda: 0.5,
            split_fraction: 0.5,
            lasso_tol: 1e-7,
            lasso_max_iter: 50_000,
        }
    }
}

/// `X * beta`.
pub fn predict(model: &FittedModel, x: &Matrix) -> Result<Vec<f64>> {
    if x.cols() != model.beta.len() {
        return Err(Error::DimensionMismatch {
            context: "predict: column count vs coefficient length",
            expected: model.beta.len(),
            found: x.cols(),
        });
    }
    // only the support contributes
    let mut out = vec![0.0; x.rows()];
    for (i, o) in out.iter_mut().enumerate() {
        let row = x.row(i);
        let mut s = 0.0;
        for &j in &model.support {
            s += row[j] * model.beta[j];
        }
        *o = s;
    }
    Ok(out)
}

fn scatter(beta_support: &[f64], support: &[usize], p: usize) -> (Vec<f64>, Vec<usize>) {
    let mut beta = vec![0.0; p];
    let mut nz = Vec::new();
    for (&j, &v) in support.iter().zip(beta_support) {
        beta[j] = v;
        if v != 0.0 {
            nz.push(j);
        }
    }
    (beta, nz)
}

/// Three-step invariant fit.
pub fn fairm_fit(
    data: &MultiEnvData,
    config: &FairmConfig,
    rng: &mut RngStream,
) -> Result<FittedModel> {
    let p = data.p;
    let split = split_sample(data, config.split_fraction, rng)?;
    let n_ring = split.n_ring_total();
    let (rho_m, rho_d) = filter::default_thresholds(p, data.train.len(), n_ring, config.c0)?;
    let (_stats, fres) = filter::run_filter(&split.ring, rho_m, rho_d)?;
    let diagnostics = filter::diagnose_feasibility(&fres);
    if fres.i_m.is_empty() {
        return Err(Error::InfeasibleFilter {
            diagnostic: diagnostics,
        });
    }
    let lambda = default_lambda(p, n_ring, config.c_lambda)?;

    // fit each distinct candidate set once
    let mut fits: BTreeMap<&[usize], Vec<f64>> = BTreeMap::new();
    for (j, set) in &fres.i {
        if fits.contains_key(set.as_slice()) {
            continue;
        }
        let problem = LassoProblem::from_envs(&split.ring, set, lambda)?;
        let sol = lasso_fit(&problem, config.lasso_tol, config.lasso_max_iter);
        if !sol.converged {
            return Err(Error::LassoNonConvergence {
                candidate: j + 1,
                iterations: sol.iterations,
                kkt_residual: sol.kkt_residual,
            });
        }
        fits.insert(set.as_slice(), sol.beta);
    }

    // held-out selection: smallest summed squared error on the second fold,
    // ties broken by the smallest candidate index
    let mut tilde_errors: BTreeMap<&[usize], f64> = BTreeMap::new();
    for (set, beta_s) in &fits {
        let mut err = 0.0;
        for env in &split.tilde {
            for i in 0..env.n() {
                let row = env.x.row(i);
                let mut f = 0.0;
                for (&jj, &b) in set.iter().zip(beta_s) {
                    f += row[jj] * b;
                }
                let r = env.y[i] - f;
                err += r * r;
            }
        }
        tilde_errors.insert(set, err);
    }
    let mut chosen: Option<(usize, f64)> = None;
    for (&j, set) in &fres.i {
        let err = tilde_errors[set.as_slice()];
        if chosen.is_none_or(|(_, best)| err < best) {
            chosen = Some((j, err));
        }
    }
    let (j_hat, _) = chosen.expect("i_m nonempty");
    let set = &fres.i[&j_hat];
    let beta_s = &fits[set.as_slice()];
    let (beta, _) = scatter(beta_s, set, p);

    Ok(FittedModel {
        method: Method::Fairm,
        beta,
        // estimated invariant subset: the chosen candidate set
        support: set.clone(),
        chosen_j: Some(j_hat),
        candidates_evaluated: fres.i.len(),
        diagnostics: Some(diagnostics),
    })
}

fn pooled_lasso(
    train: &[EnvSample],
    support: &[usize],
    lambda: f64,
    config: &FairmConfig,
    method: Method,
    p: usize,
) -> Result<FittedModel> {
    let problem = LassoProblem::from_envs(train, support, lambda)?;
    let sol = lasso_fit(&problem, config.lasso_tol, config.lasso_max_iter);
    if !sol.converged {
        return Err(Error::LassoNonConvergence {
            candidate: 0,
            iterations: sol.iterations,
            kkt_residual: sol.kkt_residual,
        });
    }
    let (beta, nz) = scatter(&sol.beta, support, p);
    Ok(FittedModel {
        method,
        beta,
        support: nz,
        chosen_j: None,
        candidates_evaluated: 1,
        diagnostics: None,
    })
}

/// Pooled lasso over all training samples and features.
pub fn erm_fit(data: &MultiEnvData, lambda: Option<f64>, config: &FairmConfig) -> Result<FittedModel> {
    let lambda = match lambda {
        Some(l) => l,
        None => default_lambda(data.p, data.n_train_total(), config.c_lambda)?,
    };
    let support: Vec<usize> = (0..data.p).collect();
    pooled_lasso(&data.train, &support, lambda, config, Method::Erm, data.p)
}

/// Pooled lasso with the known variant set removed.
pub fn oracle_fit(
    data: &MultiEnvData,
    variant_set: &[usize],
    lambda: Option<f64>,
    config: &FairmConfig,
) -> Result<FittedModel> {
    let keep: Vec<usize> = (0..data.p).filter(|j| !variant_set.contains(j)).collect();
    if keep.is_empty() {
        return Err(Error::InvalidConfig(
            "oracle_fit: variant set covers every feature".into(),
        ));
    }
    let lambda = match lambda {
        Some(l) => l,
        None => default_lambda(data.p, data.n_train_total(), config.c_lambda)?,
    };
    pooled_lasso(&data.train, &keep, lambda, config, Method::Oracle, data.p)
}

/// Worst-environment risk minimizer over all training environments.
pub fn maximin_fit(
    data: &MultiEnvData,
    lambda: Option<f64>,
    config: &FairmConfig,
    max_iter: usize,
    tol: f64,
) -> Result<FittedModel> {
    let lambda = match lambda {
        Some(l) => l,
        None => default_lambda(data.p, data.n_train_total(), config.c_lambda)?,
    };
    let sol = maximin::maximin_fit(&data.train, lambda, max_iter, tol)?;
    let support: Vec<usize> = sol
        .beta
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(j, _)| j)
        .collect();
    Ok(FittedModel {
        method: Method::Maximin,
        beta: sol.beta,
        support,
        chosen_j: None,
        candidates_evaluated: 1,
        diagnostics: None,
    })
}

/// Flat text record for experiment provenance.
pub fn serialize_model(model: &FittedModel, config_echo: &str) -> String {
    let mut out = String::new();
    out.push_str(&format!("method {}\n", model.method));
    out.push_str(&format!("p {}\n", model.beta.len()));
    out.push_str(&format!(
        "support {}\n",
        model
            .support
            .iter()
            .map(|j| (j + 1).to_string())
            .collect::<Vec<_>>()
            .join(" ")
    ));
    let nz: Vec<String> = model
        .beta
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(j, v)| format!("{}:{}", j + 1, v))
        .collect();
    out.push_str(&format!("coefficients {}\n", nz.join(" ")));
    if let Some(j) = model.chosen_j {
        out.push_str(&format!("chosen_j {}\n", j + 1));
    }
    out.push_str(&format!("config {}\n", config_echo));
    out
}
