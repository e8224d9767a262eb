//! Synthetic multi-environment generator: a sparse linear signal observed
//! through features that are clean in some coordinates and contaminated by
//! environment-specific response leakage in others.
//!
//! For a variant coordinate `j` in environment `e`, the observed feature is
//! `x_j = z_j + y * gamma_j^e` with `gamma_j^e ~ N(0, delta^2)` drawn once per
//! (environment, coordinate) pair, so the leakage pattern is fixed within an
//! environment but varies across environments.

use crate::data::{EnvSample, MultiEnvData};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::RngStream;

/// Latent feature covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaZ {
    Identity,
    /// Unit variances, constant off-diagonal correlation.
    EquiCorrelated(f64),
}

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub p: usize,
    /// Number of training environments.
    pub k: usize,
    /// Samples per training environment.
    pub n_e: usize,
    /// Size of the true signal support (the leading coordinates).
    pub s_star: usize,
    /// Number of contaminated coordinates, sampled outside the signal support.
    pub s_v: usize,
    /// Leakage scale.
    pub delta: f64,
    pub sigma_z: SigmaZ,
    /// Samples per evaluation environment.
    pub n_eval: usize,
}

impl SyntheticConfig {
    /// p = 400, K training environments, identity latent covariance,
    /// delta = 0.6.
    pub fn experiment1(k: usize) -> Self {
        SyntheticConfig {
            p: 400,
            k,
            n_e: 100,
            s_star: 10,
            s_v: 5,
            delta: 0.6,
            sigma_z: SigmaZ::Identity,
            n_eval: 2000,
        }
    }

    /// Equi-correlated latent covariance (rho = 0.7), delta = 0.4.
    pub fn experiment2(k: usize) -> Self {
        SyntheticConfig {
            p: 400,
            k,
            n_e: 100,
            s_star: 10,
            s_v: 5,
            delta: 0.4,
            sigma_z: SigmaZ::EquiCorrelated(0.7),
            n_eval: 2000,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.s_star + self.s_v > self.p {
            return Err(Error::InvalidConfig(format!(
                "signal ({}) + variant ({}) coordinates exceed p = {}",
                self.s_star, self.s_v, self.p
            )));
        }
        if self.s_star == 0 || self.k == 0 || self.n_e < 4 || self.n_eval < 2 {
            return Err(Error::InvalidConfig(
                "need s_star >= 1, k >= 1, n_e >= 4, n_eval >= 2".into(),
            ));
        }
        if self.delta < 0.0 {
            return Err(Error::InvalidConfig(format!("delta must be >= 0, got {}", self.delta)));
        }
        if let SigmaZ::EquiCorrelated(rho) = self.sigma_z {
            if !(0.0..1.0).contains(&rho) {
                return Err(Error::InvalidConfig(format!(
                    "equi-correlation must lie in [0, 1), got {rho}"
                )));
            }
        }
        Ok(())
    }
}

/// Ground truth fixed for one replication.
#[derive(Debug, Clone)]
pub struct SyntheticTruth {
    /// Full-length coefficient vector: `1 - 0.15 j` on the signal support
    /// (1-based `j`), zero elsewhere.
    pub beta: Vec<f64>,
    pub s_star: Vec<usize>,
    /// Contaminated coordinates, sorted, disjoint from the signal support.
    pub s_v: Vec<usize>,
}

impl SyntheticTruth {
    pub fn sample(cfg: &SyntheticConfig, rng: &mut RngStream) -> Result<Self> {
        cfg.validate()?;
        let mut beta = vec![0.0; cfg.p];
        for (j, b) in beta.iter_mut().enumerate().take(cfg.s_star) {
            *b = 1.0 - 0.15 * (j + 1) as f64;
        }
        let pool: Vec<usize> = (cfg.s_star..cfg.p).collect();
        let mut s_v = rng.sample_without_replacement(&pool, cfg.s_v);
        s_v.sort_unstable();
        Ok(SyntheticTruth {
            beta,
            s_star: (0..cfg.s_star).collect(),
            s_v,
        })
    }
}

fn draw_latent(cfg: &SyntheticConfig, rng: &mut RngStream) -> Vec<f64> {
    match cfg.sigma_z {
        SigmaZ::Identity => rng.standard_normal(cfg.p),
        SigmaZ::EquiCorrelated(rho) => {
            // (1 - rho) I + rho 11': scale an iid draw and add a shared
            // component, avoiding the dense p x p factor in the hot path
            let a = (1.0 - rho).sqrt();
            let b = rho.sqrt();
            let shared = b * rng.next_normal();
            let mut z = rng.standard_normal(cfg.p);
            for v in &mut z {
                *v = a * *v + shared;
            }
            z
        }
    }
}

/// One environment: `n` rows with the leakage pattern `gamma` (one value per
/// variant coordinate).
pub fn generate_environment(
    cfg: &SyntheticConfig,
    truth: &SyntheticTruth,
    gamma: &[f64],
    env_id: &str,
    n: usize,
    rng: &mut RngStream,
) -> Result<EnvSample> {
    if gamma.len() != truth.s_v.len() {
        return Err(Error::DimensionMismatch {
            context: "generate_environment: gamma length vs variant set",
            expected: truth.s_v.len(),
            found: gamma.len(),
        });
    }
    let mut data = Vec::with_capacity(n * cfg.p);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let mut x = draw_latent(cfg, rng);
        let noise = rng.next_normal();
        let mut yi = noise;
        for &j in &truth.s_star {
            yi += x[j] * truth.beta[j];
        }
        for (&j, &g) in truth.s_v.iter().zip(gamma) {
            x[j] += yi * g;
        }
        y.push(yi);
        data.append(&mut x);
    }
    EnvSample::new(env_id, Matrix::from_vec(n, cfg.p, data), y)
}

fn draw_gamma(cfg: &SyntheticConfig, n_sets: usize, rng: &mut RngStream) -> Vec<Vec<f64>> {
    (0..n_sets)
        .map(|_| {
            rng.standard_normal(cfg.s_v)
                .into_iter()
                .map(|g| cfg.delta * g)
                .collect()
        })
        .collect()
}

/// One replication: fitting data plus large evaluation copies.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub truth: SyntheticTruth,
    /// K training environments of `n_e` rows each; no test role.
    pub fit: MultiEnvData,
    /// Evaluation copies: the same K leakage patterns with fresh `n_eval`
    /// rows in the train role, plus fresh-pattern environments in the test
    /// role.
    pub eval: MultiEnvData,
    pub gamma_train: Vec<Vec<f64>>,
    pub gamma_test: Vec<Vec<f64>>,
}

pub const N_TEST_ENVS: usize = 3;

pub fn generate_experiment(cfg: &SyntheticConfig, rng: &mut RngStream) -> Result<Experiment> {
    let truth = SyntheticTruth::sample(cfg, rng)?;
    let gamma_train = draw_gamma(cfg, cfg.k, rng);
    let gamma_test = draw_gamma(cfg, N_TEST_ENVS, rng);

    let mut fit_train = Vec::with_capacity(cfg.k);
    for (e, gamma) in gamma_train.iter().enumerate() {
        let id = format!("train{}", e + 1);
        fit_train.push(generate_environment(cfg, &truth, gamma, &id, cfg.n_e, rng)?);
    }

    let mut eval_train = Vec::with_capacity(cfg.k);
    for (e, gamma) in gamma_train.iter().enumerate() {
        let id = format!("train{}", e + 1);
        eval_train.push(generate_environment(cfg, &truth, gamma, &id, cfg.n_eval, rng)?);
    }
    let mut eval_test = Vec::with_capacity(N_TEST_ENVS);
    for (e, gamma) in gamma_test.iter().enumerate() {
        let id = format!("test{}", e + 1);
        eval_test.push(generate_environment(cfg, &truth, gamma, &id, cfg.n_eval, rng)?);
    }

    Ok(Experiment {
        truth,
        fit: MultiEnvData::new(fit_train, vec![])?,
        eval: MultiEnvData::new(eval_train, eval_test)?,
        gamma_train,
        gamma_test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SyntheticConfig {
        SyntheticConfig {
            p: 20,
            k: 3,
            n_e: 40,
            s_star: 10,
            s_v: 4,
            delta: 0.5,
            sigma_z: SigmaZ::Identity,
            n_eval: 30,
        }
    }

    #[test]
    fn beta_values_on_the_signal_support() {
        let truth = SyntheticTruth::sample(&small_cfg(), &mut RngStream::new(1, 0)).unwrap();
        assert!((truth.beta[0] - 0.85).abs() < 1e-15);
        assert!((truth.beta[9] - (-0.5)).abs() < 1e-15);
        let total: f64 = truth.beta.iter().sum();
        assert!((total - 1.75).abs() < 1e-12, "sum {total}");
        let ssq: f64 = truth.beta.iter().map(|b| b * b).sum();
        assert!((ssq - 2.1625).abs() < 1e-12, "sum of squares {ssq}");
        assert!(truth.beta[10..].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn variant_set_disjoint_from_signal_and_in_range() {
        let cfg = small_cfg();
        for seed in 0..20 {
            let truth = SyntheticTruth::sample(&cfg, &mut RngStream::new(seed, 0)).unwrap();
            assert_eq!(truth.s_v.len(), cfg.s_v);
            assert!(truth.s_v.windows(2).all(|w| w[0] < w[1]));
            assert!(truth.s_v.iter().all(|&j| j >= cfg.s_star && j < cfg.p));
        }
    }

    #[test]
    fn response_variance_identity_covariance() {
        // Var(y) = sum beta_j^2 + 1 = 3.1625 for the 10-coordinate support
        let mut cfg = small_cfg();
        cfg.n_e = 60_000;
        cfg.s_v = 0;
        cfg.k = 1;
        let mut rng = RngStream::new(7, 0);
        let truth = SyntheticTruth::sample(&cfg, &mut rng).unwrap();
        let env = generate_environment(&cfg, &truth, &[], "e", cfg.n_e, &mut rng).unwrap();
        let n = env.n() as f64;
        let mean: f64 = env.y.iter().sum::<f64>() / n;
        let var: f64 = env.y.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / (n - 1.0);
        assert!((var - 3.1625).abs() < 0.06, "var {var}");
    }

    #[test]
    fn response_variance_equicorrelated_covariance() {
        // Var(y) = (1-rho) sum beta^2 + rho (sum beta)^2 + 1
        let mut cfg = small_cfg();
        cfg.sigma_z = SigmaZ::EquiCorrelated(0.7);
        cfg.n_e = 60_000;
        cfg.s_v = 0;
        let expected = 0.3 * 2.1625 + 0.7 * 1.75 * 1.75 + 1.0;
        let mut rng = RngStream::new(8, 0);
        let truth = SyntheticTruth::sample(&cfg, &mut rng).unwrap();
        let env = generate_environment(&cfg, &truth, &[], "e", cfg.n_e, &mut rng).unwrap();
        let n = env.n() as f64;
        let mean: f64 = env.y.iter().sum::<f64>() / n;
        let var: f64 = env.y.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / (n - 1.0);
        assert!((var - expected).abs() < 0.12, "var {var} expected {expected}");
    }

    #[test]
    fn equicorrelated_pairwise_correlation() {
        let mut cfg = small_cfg();
        cfg.sigma_z = SigmaZ::EquiCorrelated(0.7);
        cfg.s_v = 0;
        cfg.p = 4;
        cfg.s_star = 2;
        cfg.n_e = 40_000;
        let mut rng = RngStream::new(9, 0);
        let truth = SyntheticTruth::sample(&cfg, &mut rng).unwrap();
        let env = generate_environment(&cfg, &truth, &[], "e", cfg.n_e, &mut rng).unwrap();
        let n = env.n() as f64;
        let col = |j: usize| (0..env.n()).map(|i| env.x.get(i, j)).collect::<Vec<_>>();
        let (a, b) = (col(2), col(3));
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
        let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum::<f64>() / n;
        let vb: f64 = b.iter().map(|x| (x - mb) * (x - mb)).sum::<f64>() / n;
        let corr = cov / (va * vb).sqrt();
        assert!((corr - 0.7).abs() < 0.02, "corr {corr}");
        assert!((va - 1.0).abs() < 0.05, "var {va}");
    }

    #[test]
    fn zero_delta_removes_leakage() {
        let mut cfg = small_cfg();
        cfg.delta = 0.0;
        let exp = generate_experiment(&cfg, &mut RngStream::new(3, 0)).unwrap();
        for g in exp.gamma_train.iter().chain(&exp.gamma_test) {
            assert!(g.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn leakage_induces_feature_response_correlation() {
        let mut cfg = small_cfg();
        cfg.delta = 1.0;
        cfg.n_e = 5000;
        let mut rng = RngStream::new(4, 0);
        let truth = SyntheticTruth::sample(&cfg, &mut rng).unwrap();
        let gamma = vec![1.0; truth.s_v.len()];
        let env = generate_environment(&cfg, &truth, &gamma, "e", cfg.n_e, &mut rng).unwrap();
        let j = truth.s_v[0];
        let n = env.n() as f64;
        let my = env.y.iter().sum::<f64>() / n;
        let mx = (0..env.n()).map(|i| env.x.get(i, j)).sum::<f64>() / n;
        let cov: f64 = (0..env.n())
            .map(|i| (env.x.get(i, j) - mx) * (env.y[i] - my))
            .sum::<f64>()
            / n;
        // cov(z_j + y, y) = Var(y) ~ 3.16
        assert!((cov - 3.1625).abs() < 0.3, "cov {cov}");
    }

    #[test]
    fn experiment_shapes_and_roles() {
        let cfg = small_cfg();
        let exp = generate_experiment(&cfg, &mut RngStream::new(5, 0)).unwrap();
        assert_eq!(exp.fit.train.len(), cfg.k);
        assert!(exp.fit.test.is_empty());
        assert_eq!(exp.eval.train.len(), cfg.k);
        assert_eq!(exp.eval.test.len(), N_TEST_ENVS);
        for e in &exp.fit.train {
            assert_eq!(e.n(), cfg.n_e);
        }
        for e in exp.eval.train.iter().chain(&exp.eval.test) {
            assert_eq!(e.n(), cfg.n_eval);
        }
        assert_eq!(exp.gamma_train.len(), cfg.k);
        assert_eq!(exp.gamma_test.len(), N_TEST_ENVS);
    }

    #[test]
    fn same_seed_reproduces_bit_identical_data() {
        let cfg = small_cfg();
        let a = generate_experiment(&cfg, &mut RngStream::new(6, 2)).unwrap();
        let b = generate_experiment(&cfg, &mut RngStream::new(6, 2)).unwrap();
        assert_eq!(a.truth.s_v, b.truth.s_v);
        for (ea, eb) in a.fit.train.iter().zip(&b.fit.train) {
            assert_eq!(ea.x.data(), eb.x.data());
            assert_eq!(ea.y, eb.y);
        }
        for (ea, eb) in a.eval.test.iter().zip(&b.eval.test) {
            assert_eq!(ea.x.data(), eb.x.data());
        }
    }

    #[test]
    fn default_experiment_configs() {
        let c1 = SyntheticConfig::experiment1(4);
        assert_eq!((c1.p, c1.n_e, c1.s_star, c1.s_v), (400, 100, 10, 5));
        assert_eq!(c1.sigma_z, SigmaZ::Identity);
        assert!((c1.delta - 0.6).abs() < 1e-15);
        let c2 = SyntheticConfig::experiment2(8);
        assert_eq!(c2.sigma_z, SigmaZ::EquiCorrelated(0.7));
        assert!((c2.delta - 0.4).abs() < 1e-15);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = small_cfg();
        cfg.s_v = 15; // 10 + 15 > 20
        assert!(generate_experiment(&cfg, &mut RngStream::new(0, 0)).is_err());
        let mut cfg = small_cfg();
        cfg.delta = -0.1;
        assert!(generate_experiment(&cfg, &mut RngStream::new(0, 0)).is_err());
        let mut cfg = small_cfg();
        cfg.sigma_z = SigmaZ::EquiCorrelated(1.0);
        assert!(generate_experiment(&cfg, &mut RngStream::new(0, 0)).is_err());
    }
}
