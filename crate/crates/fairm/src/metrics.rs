//! Domain-generalization, calibration and classification metrics on
//! held-out evaluation data.

use std::collections::BTreeMap;

use crate::data::MultiEnvData;
use crate::error::{Error, Result};
use crate::pipeline::{predict, FittedModel};

#[derive(Debug, Clone)]
pub struct EvalReport {
    /// env_id -> mean squared prediction error, over train and test roles.
    pub per_env_mse: BTreeMap<String, f64>,
    /// Worst per-environment MSE over every evaluated environment.
    pub dg_error: f64,
    /// Worst per-environment MSE over test environments only.
    pub dg_error_test_only: f64,
    /// max_e |mean residual| — the aggregate calibration bias.
    pub mc_error: f64,
    /// Sample-weighted pooled MSE over the training-role environments.
    pub train_error: f64,
    /// 0/1 error per environment, present only when requested for binary labels.
    pub classification_errors: Option<BTreeMap<String, f64>>,
}

/// Fraction of `1{pred >= threshold} != label`.
pub fn classification_error(predictions: &[f64], labels: &[f64], threshold: f64) -> f64 {
    assert_eq!(predictions.len(), labels.len());
    if predictions.is_empty() {
        return 0.0;
    }
    let wrong = predictions
        .iter()
        .zip(labels)
        .filter(|(p, &l)| ((**p >= threshold) as u8 as f64) != l)
        .count();
    wrong as f64 / predictions.len() as f64
}

/// Evaluate a fitted model over every environment of `eval_data`.
/// `class_threshold` additionally populates 0/1 errors when all labels are
/// binary.
pub fn evaluate(
    model: &FittedModel,
    eval_data: &MultiEnvData,
    class_threshold: Option<f64>,
) -> Result<EvalReport> {
    if eval_data.p != model.beta.len() {
        return Err(Error::DimensionMismatch {
            context: "evaluate: eval data dimension vs model",
            expected: model.beta.len(),
            found: eval_data.p,
        });
    }
    let binary_labels = eval_data
        .train
        .iter()
        .chain(&eval_data.test)
        .all(|e| e.y.iter().all(|&y| y == 0.0 || y == 1.0));

    let mut per_env_mse = BTreeMap::new();
    let mut class_errors = BTreeMap::new();
    let mut mc_error = 0.0f64;
    let mut dg_error = f64::NEG_INFINITY;
    let mut dg_error_test_only = f64::NEG_INFINITY;
    let mut train_sse = 0.0;
    let mut train_n = 0usize;

    for (is_test, env) in eval_data
        .train
        .iter()
        .map(|e| (false, e))
        .chain(eval_data.test.iter().map(|e| (true, e)))
    {
        let preds = predict(model, &env.x)?;
        let n = env.n() as f64;
        let mut sse = 0.0;
        let mut bias = 0.0;
        for (y, f) in env.y.iter().zip(&preds) {
            let r = y - f;
            sse += r * r;
            bias += r;
        }
        let mse = sse / n;
        per_env_mse.insert(env.env_id.clone(), mse);
        mc_error = mc_error.max((bias / n).abs());
        dg_error = dg_error.max(mse);
        if is_test {
            dg_error_test_only = dg_error_test_only.max(mse);
        } else {
            train_sse += sse;
            train_n += env.n();
        }
        if let Some(th) = class_threshold {
            if binary_labels {
                class_errors.insert(env.env_id.clone(), classification_error(&preds, &env.y, th));
            }
        }
    }

    if dg_error_test_only == f64::NEG_INFINITY {
        dg_error_test_only = 0.0;
    }
    Ok(EvalReport {
        per_env_mse,
        dg_error,
        dg_error_test_only,
        mc_error,
        train_error: if train_n > 0 { train_sse / train_n as f64 } else { 0.0 },
        classification_errors: if class_threshold.is_some() && binary_labels {
            Some(class_errors)
        } else {
            None
        },
    })
}
