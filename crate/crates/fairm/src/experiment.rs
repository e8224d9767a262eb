//! Monte-Carlo driver for the synthetic benchmarks: replicate data
//! generation and fitting over a grid of environment counts, score every
//! method on large evaluation copies, and dump per-replication and summary
//! tables as CSV.

use std::fs::File;
use std::io::Write as IoWrite;
use std::path::Path;

use rayon::prelude::*;

use crate::error::Result;
use crate::metrics::evaluate;
use crate::pipeline::{erm_fit, fairm_fit, maximin_fit, oracle_fit, FairmConfig, Method};
use crate::rng::RngStream;
use crate::synthetic::{generate_experiment, Experiment, SyntheticConfig};

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub master_seed: u64,
    pub reps: usize,
    pub k_values: Vec<usize>,
    pub fit: FairmConfig,
    /// Iteration budget for the worst-environment solver.
    pub mm_max_iter: usize,
    pub mm_tol: f64,
    /// Penalty override for the worst-environment solver; the default rate
    /// applies when absent.
    pub mm_lambda: Option<f64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            master_seed: 0,
            reps: 200,
            k_values: vec![4, 8, 12],
            fit: FairmConfig::default(),
            mm_max_iter: 1500,
            mm_tol: 1e-3,
            mm_lambda: None,
        }
    }
}

/// One (replication, environment count, method) result row. `error` carries
/// the failure message when the fit did not produce a model; the numeric
/// fields are NaN (or 0) in that case.
#[derive(Debug, Clone)]
pub struct ExperimentRecord {
    pub replication: usize,
    pub k: usize,
    pub method: Method,
    pub dg_error: f64,
    pub dg_error_test_only: f64,
    pub mc_error: f64,
    pub train_error: f64,
    pub support_size: usize,
    /// Selected features that belong to the contaminated set.
    pub sv_overlap: usize,
    /// Wall-clock fitting plus evaluation time. Logged but kept out of the
    /// CSVs so identical configurations produce identical bytes.
    pub runtime_ms: u128,
    pub error: Option<String>,
}

fn record_for(
    method: Method,
    replication: usize,
    k: usize,
    exp: &Experiment,
    fit: std::result::Result<crate::pipeline::FittedModel, crate::error::Error>,
    runtime_ms: u128,
) -> ExperimentRecord {
    match fit.and_then(|model| evaluate(&model, &exp.eval, None).map(|r| (model, r))) {
        Ok((model, report)) => {
            let sv_overlap = model
                .support
                .iter()
                .filter(|j| exp.truth.s_v.contains(j))
                .count();
            ExperimentRecord {
                replication,
                k,
                method,
                dg_error: report.dg_error,
                dg_error_test_only: report.dg_error_test_only,
                mc_error: report.mc_error,
                train_error: report.train_error,
                support_size: model.support.len(),
                sv_overlap,
                runtime_ms,
                error: None,
            }
        }
        Err(e) => ExperimentRecord {
            replication,
            k,
            method,
            dg_error: f64::NAN,
            dg_error_test_only: f64::NAN,
            mc_error: f64::NAN,
            train_error: f64::NAN,
            support_size: 0,
            sv_overlap: 0,
            runtime_ms,
            error: Some(e.to_string().replace([',', '\n'], ";")),
        },
    }
}

/// Run `opts.reps` replications for every environment count in
/// `opts.k_values`. Each (k, replication) pair owns a dedicated generator
/// stream, so the output is independent of scheduling and thread count.
/// Rows come back sorted by (k, replication, method).
pub fn run_synthetic<F>(opts: &RunOptions, cfg_for_k: F) -> Vec<ExperimentRecord>
where
    F: Fn(usize) -> SyntheticConfig + Sync,
{
    let tasks: Vec<(usize, usize)> = opts
        .k_values
        .iter()
        .flat_map(|&k| (0..opts.reps).map(move |rep| (k, rep)))
        .collect();

    let mut records: Vec<ExperimentRecord> = tasks
        .par_iter()
        .flat_map_iter(|&(k, rep)| {
            let cfg = cfg_for_k(k);
            // replication index is the stream id, so scheduling and the k
            // grid have no effect on the draws of a given replication
            let mut rng = RngStream::new(opts.master_seed, rep as u64);
            match generate_experiment(&cfg, &mut rng) {
                Ok(exp) => {
                    let mut timed = |f: &mut dyn FnMut(
                        &mut RngStream,
                    ) -> crate::error::Result<
                        crate::pipeline::FittedModel,
                    >| {
                        let start = std::time::Instant::now();
                        let fit = f(&mut rng);
                        (fit, start.elapsed().as_millis())
                    };
                    let fits = [
                        (Method::Fairm, timed(&mut |r| fairm_fit(&exp.fit, &opts.fit, r))),
                        (Method::Erm, timed(&mut |_| erm_fit(&exp.fit, None, &opts.fit))),
                        (
                            Method::Maximin,
                            timed(&mut |_| {
                                maximin_fit(
                                    &exp.fit,
                                    opts.mm_lambda,
                                    &opts.fit,
                                    opts.mm_max_iter,
                                    opts.mm_tol,
                                )
                            }),
                        ),
                        (
                            Method::Oracle,
                            timed(&mut |_| oracle_fit(&exp.fit, &exp.truth.s_v, None, &opts.fit)),
                        ),
                    ];
                    fits.into_iter()
                        .map(|(m, (fit, ms))| record_for(m, rep, k, &exp, fit, ms))
                        .collect::<Vec<_>>()
                }
                Err(e) => {
                    let msg = e.to_string().replace([',', '\n'], ";");
                    [Method::Fairm, Method::Erm, Method::Maximin, Method::Oracle]
                        .into_iter()
                        .map(|m| ExperimentRecord {
                            replication: rep,
                            k,
                            method: m,
                            dg_error: f64::NAN,
                            dg_error_test_only: f64::NAN,
                            mc_error: f64::NAN,
                            train_error: f64::NAN,
                            support_size: 0,
                            sv_overlap: 0,
                            runtime_ms: 0,
                            error: Some(msg.clone()),
                        })
                        .collect()
                }
            }
        })
        .collect();

    records.sort_by(|a, b| {
        (a.k, a.replication, a.method).cmp(&(b.k, b.replication, b.method))
    });
    records
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:.8}")
    }
}

pub fn records_to_csv(records: &[ExperimentRecord]) -> String {
    let mut out = String::from(
        "replication,k,method,dg_error,dg_error_test_only,mc_error,train_error,support_size,sv_overlap,error\n",
    );
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.replication,
            r.k,
            r.method,
            fmt(r.dg_error),
            fmt(r.dg_error_test_only),
            fmt(r.mc_error),
            fmt(r.train_error),
            r.support_size,
            r.sv_overlap,
            r.error.as_deref().unwrap_or("")
        ));
    }
    out
}

pub fn write_records_csv(path: &Path, records: &[ExperimentRecord]) -> Result<()> {
    File::create(path)?.write_all(records_to_csv(records).as_bytes())?;
    Ok(())
}

/// Linear-interpolation quantile of a sorted sample (the convention most
/// statistics packages default to).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    assert!((0.0..=1.0).contains(&q));
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    if lo + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    sorted[lo] + (h - h.floor()) * (sorted[lo + 1] - sorted[lo])
}

fn summarize_metric(values: &mut [f64]) -> (f64, f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (
        quantile(values, 0.25),
        quantile(values, 0.5),
        quantile(values, 0.75),
    )
}

/// Per-(k, method) quartile summary of the successful replications.
pub fn summary_csv(records: &[ExperimentRecord]) -> String {
    let mut out = String::from(
        "k,method,n_ok,n_failed,dg_q25,dg_median,dg_q75,dg_test_q25,dg_test_median,dg_test_q75,mc_q25,mc_median,mc_q75,train_q25,train_median,train_q75,support_median,sv_overlap_median\n",
    );
    let mut groups: Vec<(usize, Method)> = records.iter().map(|r| (r.k, r.method)).collect();
    groups.sort();
    groups.dedup();
    for (k, method) in groups {
        let ok: Vec<&ExperimentRecord> = records
            .iter()
            .filter(|r| r.k == k && r.method == method && r.error.is_none())
            .collect();
        let n_failed = records
            .iter()
            .filter(|r| r.k == k && r.method == method && r.error.is_some())
            .count();
        let pull = |f: fn(&ExperimentRecord) -> f64| -> (f64, f64, f64) {
            let mut v: Vec<f64> = ok.iter().map(|r| f(r)).collect();
            summarize_metric(&mut v)
        };
        let dg = pull(|r| r.dg_error);
        let dgt = pull(|r| r.dg_error_test_only);
        let mc = pull(|r| r.mc_error);
        let tr = pull(|r| r.train_error);
        let support = pull(|r| r.support_size as f64).1;
        let overlap = pull(|r| r.sv_overlap as f64).1;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            k,
            method,
            ok.len(),
            n_failed,
            fmt(dg.0),
            fmt(dg.1),
            fmt(dg.2),
            fmt(dgt.0),
            fmt(dgt.1),
            fmt(dgt.2),
            fmt(mc.0),
            fmt(mc.1),
            fmt(mc.2),
            fmt(tr.0),
            fmt(tr.1),
            fmt(tr.2),
            fmt(support),
            fmt(overlap)
        ));
    }
    out
}

pub fn write_summary_csv(path: &Path, records: &[ExperimentRecord]) -> Result<()> {
    File::create(path)?.write_all(summary_csv(records).as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::SigmaZ;

    fn tiny_cfg(k: usize) -> SyntheticConfig {
        SyntheticConfig {
            p: 15,
            k,
            n_e: 40,
            s_star: 5,
            s_v: 2,
            delta: 0.6,
            sigma_z: SigmaZ::Identity,
            n_eval: 60,
        }
    }

    fn tiny_opts() -> RunOptions {
        RunOptions {
            reps: 3,
            k_values: vec![2, 3],
            mm_max_iter: 300,
            mm_tol: 1e-2,
            ..RunOptions::default()
        }
    }

    #[test]
    fn quantile_known_values() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&v, 0.75), 3.25);
        assert_eq!(quantile(&[7.0], 0.5), 7.0);
        let odd = [1.0, 2.0, 10.0];
        assert_eq!(quantile(&odd, 0.5), 2.0);
    }

    #[test]
    fn rows_sorted_and_complete() {
        let records = run_synthetic(&tiny_opts(), tiny_cfg);
        assert_eq!(records.len(), 2 * 3 * 4);
        for w in records.windows(2) {
            let a = (w[0].k, w[0].replication, w[0].method);
            let b = (w[1].k, w[1].replication, w[1].method);
            assert!(a < b);
        }
        // every successful row has finite metrics
        for r in &records {
            if r.error.is_none() {
                assert!(r.dg_error.is_finite());
                assert!(r.train_error.is_finite());
            }
        }
    }

    #[test]
    fn output_independent_of_thread_count() {
        let opts = tiny_opts();
        let run_with = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| records_to_csv(&run_synthetic(&opts, tiny_cfg)))
        };
        assert_eq!(run_with(1), run_with(2));
    }

    #[test]
    fn oracle_beats_erm_under_strong_leakage() {
        let mut opts = tiny_opts();
        opts.reps = 8;
        opts.k_values = vec![3];
        let records = run_synthetic(&opts, |k| SyntheticConfig {
            delta: 1.5,
            ..tiny_cfg(k)
        });
        let med = |m: Method| {
            let mut v: Vec<f64> = records
                .iter()
                .filter(|r| r.method == m && r.error.is_none())
                .map(|r| r.dg_error)
                .collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            quantile(&v, 0.5)
        };
        assert!(med(Method::Oracle) < med(Method::Erm), "oracle {} erm {}", med(Method::Oracle), med(Method::Erm));
    }

    #[test]
    fn csv_shape_and_error_column() {
        let records = vec![ExperimentRecord {
            replication: 0,
            k: 4,
            method: Method::Fairm,
            dg_error: f64::NAN,
            dg_error_test_only: f64::NAN,
            mc_error: f64::NAN,
            train_error: f64::NAN,
            support_size: 0,
            sv_overlap: 0,
            runtime_ms: 0,
            error: Some("boom; with details".into()),
        }];
        let csv = records_to_csv(&records);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].split(',').count(), 10);
        assert!(lines[1].contains("NaN"));
        assert!(lines[1].ends_with("boom; with details"));
    }

    #[test]
    fn summary_has_one_row_per_group() {
        let records = run_synthetic(&tiny_opts(), tiny_cfg);
        let csv = summary_csv(&records);
        // header + 2 k-values * 4 methods
        assert_eq!(csv.lines().count(), 1 + 8);
        let header = csv.lines().next().unwrap();
        assert_eq!(header.split(',').count(), 18);
    }
}
