//! Environment-indexed datasets and sample splitting.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::RngStream;

/// One environment's design matrix and response.
#[derive(Debug, Clone)]
pub struct EnvSample {
    pub env_id: String,
    pub x: Matrix,
    pub y: Vec<f64>,
}

impl EnvSample {
    pub fn new(env_id: impl Into<String>, x: Matrix, y: Vec<f64>) -> Result<Self> {
        let env_id = env_id.into();
        if x.rows() != y.len() {
            return Err(Error::DimensionMismatch {
                context: "EnvSample: X rows vs y length",
                expected: x.rows(),
                found: y.len(),
            });
        }
        if y.len() < 2 {
            return Err(Error::EnvironmentTooSmall {
                env_id,
                n: y.len(),
                min: 2,
            });
        }
        Ok(EnvSample { env_id, x, y })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.cols()
    }
}

/// Training and held-out test environments sharing one feature dimension.
#[derive(Debug, Clone)]
pub struct MultiEnvData {
    pub train: Vec<EnvSample>,
    pub test: Vec<EnvSample>,
    pub p: usize,
}

impl MultiEnvData {
    pub fn new(train: Vec<EnvSample>, test: Vec<EnvSample>) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InvalidConfig(
                "MultiEnvData requires at least one training environment".into(),
            ));
        }
        let p = train[0].p();
        let mut seen = std::collections::HashSet::new();
        for env in train.iter().chain(test.iter()) {
            if env.p() != p {
                return Err(Error::DimensionMismatch {
                    context: "MultiEnvData: feature dimension",
                    expected: p,
                    found: env.p(),
                });
            }
            if !seen.insert(env.env_id.clone()) {
                return Err(Error::DuplicateEnvId(env.env_id.clone()));
            }
        }
        Ok(MultiEnvData { train, test, p })
    }

    pub fn n_train_total(&self) -> usize {
        self.train.iter().map(|e| e.n()).sum()
    }
}

/// Result of the per-environment row split: `ring` feeds the filter and the
/// per-candidate fits, `tilde` the held-out candidate selection.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub ring: Vec<EnvSample>,
    pub tilde: Vec<EnvSample>,
}

impl SplitData {
    pub fn n_ring_total(&self) -> usize {
        self.ring.iter().map(|e| e.n()).sum()
    }
}

/// Randomly permute each training environment's rows and split them so the
/// first fold gets `round(fraction * n_e)` rows, clamped to `[2, n_e - 2]`.
/// Test environments are untouched.
pub fn split_sample(data: &MultiEnvData, fraction: f64, rng: &mut RngStream) -> Result<SplitData> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    for env in &data.train {
        if env.n() < 4 {
            return Err(Error::EnvironmentTooSmall {
                env_id: env.env_id.clone(),
                n: env.n(),
                min: 4,
            });
        }
    }
    let mut ring = Vec::with_capacity(data.train.len());
    let mut tilde = Vec::with_capacity(data.train.len());
    for env in &data.train {
        let n = env.n();
        let n_ring = ((fraction * n as f64).round() as usize).clamp(2, n - 2);
        let mut idx: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut idx);
        let take = |rows: &[usize]| -> EnvSample {
            let x = Matrix::from_rows(&rows.iter().map(|&i| env.x.row(i).to_vec()).collect::<Vec<_>>());
            let y = rows.iter().map(|&i| env.y[i]).collect();
            EnvSample {
                env_id: env.env_id.clone(),
                x,
                y,
            }
        };
        ring.push(take(&idx[..n_ring]));
        tilde.push(take(&idx[n_ring..]));
    }
    Ok(SplitData { ring, tilde })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn env(id: &str, n: usize, p: usize, seed: u64) -> EnvSample {
        let mut rng = RngStream::new(seed, 0);
        let x = Matrix::from_vec(n, p, rng.standard_normal(n * p));
        let y = rng.standard_normal(n);
        EnvSample::new(id, x, y).unwrap()
    }

    #[test]
    fn env_sample_rejects_row_mismatch() {
        let x = Matrix::zeros(3, 2);
        assert!(EnvSample::new("e", x, vec![0.0; 4]).is_err());
    }

    #[test]
    fn multi_env_rejects_duplicate_ids() {
        let a = env("e1", 5, 2, 1);
        let b = env("e1", 5, 2, 2);
        assert!(MultiEnvData::new(vec![a, b], vec![]).is_err());
    }

    #[test]
    fn even_split_of_100_at_half() {
        let data = MultiEnvData::new(vec![env("e1", 100, 3, 1)], vec![]).unwrap();
        let split = split_sample(&data, 0.5, &mut RngStream::new(0, 0)).unwrap();
        assert_eq!(split.ring[0].n(), 50);
        assert_eq!(split.tilde[0].n(), 50);
    }

    #[test]
    fn small_environment_clamps_both_folds_to_two() {
        let data = MultiEnvData::new(vec![env("e1", 5, 3, 1)], vec![]).unwrap();
        let split = split_sample(&data, 0.5, &mut RngStream::new(0, 0)).unwrap();
        let n_ring = split.ring[0].n();
        assert!(n_ring == 2 || n_ring == 3);
        assert!(split.tilde[0].n() >= 2);
        assert_eq!(n_ring + split.tilde[0].n(), 5);
    }

    #[test]
    fn split_rejects_tiny_environments() {
        let data = MultiEnvData::new(vec![env("e1", 3, 3, 1)], vec![]).unwrap();
        assert!(split_sample(&data, 0.5, &mut RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn same_seed_gives_identical_fold_membership() {
        let data = MultiEnvData::new(vec![env("e1", 20, 3, 1), env("e2", 17, 3, 2)], vec![]).unwrap();
        let a = split_sample(&data, 0.5, &mut RngStream::new(9, 4)).unwrap();
        let b = split_sample(&data, 0.5, &mut RngStream::new(9, 4)).unwrap();
        for (ea, eb) in a.ring.iter().zip(&b.ring) {
            assert_eq!(ea.y, eb.y);
            assert_eq!(ea.x.data(), eb.x.data());
        }
    }

    proptest! {
        #[test]
        fn split_partitions_rows_exactly(n in 4usize..40, frac in 0.05f64..0.95, seed in 0u64..1000) {
            let e = env("e1", n, 2, seed);
            let data = MultiEnvData::new(vec![e.clone()], vec![]).unwrap();
            let split = split_sample(&data, frac, &mut RngStream::new(seed, 1)).unwrap();
            prop_assert_eq!(split.ring[0].n() + split.tilde[0].n(), n);
            // reassembling both folds recovers the original multiset of rows
            let mut orig: Vec<(Vec<u64>, u64)> = (0..n)
                .map(|i| (e.x.row(i).iter().map(|v| v.to_bits()).collect(), e.y[i].to_bits()))
                .collect();
            let mut got: Vec<(Vec<u64>, u64)> = Vec::new();
            for fold in [&split.ring[0], &split.tilde[0]] {
                for i in 0..fold.n() {
                    got.push((fold.x.row(i).iter().map(|v| v.to_bits()).collect(), fold.y[i].to_bits()));
                }
            }
            orig.sort();
            got.sort();
            prop_assert_eq!(orig, got);
        }
    }
}
