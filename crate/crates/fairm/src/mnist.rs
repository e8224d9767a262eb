//! Framed-digit binary classification: two digit classes, a border frame
//! whose color tracks the label with an environment-specific probability, and
//! the four fitting methods compared on environments where that probability
//! shifts.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read as IoRead, Write as IoWrite};
use std::path::Path;

use crate::data::{EnvSample, MultiEnvData};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::metrics::classification_error;
use crate::pipeline::{
    erm_fit, fairm_fit, maximin_fit, oracle_fit, predict, FairmConfig, FittedModel, Method,
};
use crate::rng::RngStream;

pub const IMAGE_SIDE: usize = 28;
pub const N_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
/// Raw intensity written into frame pixels when the frame is "on".
pub const FRAME_VALUE: f64 = 100.0;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(buf: &[u8], offset: usize, path: &str, what: &str) -> Result<u32> {
    let bytes = buf.get(offset..offset + 4).ok_or_else(|| Error::IdxTruncated {
        path: path.to_string(),
        context: format!("missing {what}"),
    })?;
    Ok(u32::from_be_bytes(bytes.try_into().unwrap()))
}

/// Read an idx3 image file; each image is a flat row-major 28x28 byte vector.
pub fn read_idx_images(path: &Path) -> Result<Vec<Vec<u8>>> {
    let display = path.display().to_string();
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    let magic = read_u32_be(&buf, 0, &display, "magic number")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::IdxBadMagic {
            path: display,
            expected: IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = read_u32_be(&buf, 4, &display, "image count")? as usize;
    let rows = read_u32_be(&buf, 8, &display, "row count")? as usize;
    let cols = read_u32_be(&buf, 12, &display, "column count")? as usize;
    if rows != IMAGE_SIDE || cols != IMAGE_SIDE {
        return Err(Error::IdxBadShape {
            path: display,
            rows,
            cols,
        });
    }
    let body = &buf[16..];
    if body.len() != count * N_PIXELS {
        return Err(Error::IdxTruncated {
            path: display,
            context: format!("expected {} pixel bytes, found {}", count * N_PIXELS, body.len()),
        });
    }
    Ok(body.chunks_exact(N_PIXELS).map(|c| c.to_vec()).collect())
}

/// Read an idx1 label file.
pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let display = path.display().to_string();
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    let magic = read_u32_be(&buf, 0, &display, "magic number")?;
    if magic != LABELS_MAGIC {
        return Err(Error::IdxBadMagic {
            path: display,
            expected: LABELS_MAGIC,
            found: magic,
        });
    }
    let count = read_u32_be(&buf, 4, &display, "label count")? as usize;
    let body = &buf[8..];
    if body.len() != count {
        return Err(Error::IdxTruncated {
            path: display,
            context: format!("expected {count} label bytes, found {}", body.len()),
        });
    }
    Ok(body.to_vec())
}

/// Load an image/label pair and check the counts agree.
pub fn read_idx_pair(images_path: &Path, labels_path: &Path) -> Result<(Vec<Vec<u8>>, Vec<u8>)> {
    let images = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if images.len() != labels.len() {
        return Err(Error::IdxCountMismatch {
            images: images.len(),
            labels: labels.len(),
        });
    }
    Ok((images, labels))
}

/// Pixel indices within `width` of the image border.
pub fn frame_indices(width: usize) -> Vec<usize> {
    let mut idx = Vec::new();
    for r in 0..IMAGE_SIDE {
        for c in 0..IMAGE_SIDE {
            if r < width || r >= IMAGE_SIDE - width || c < width || c >= IMAGE_SIDE - width {
                idx.push(r * IMAGE_SIDE + c);
            }
        }
    }
    idx
}

#[derive(Debug, Clone)]
pub struct MnistTaskConfig {
    pub task: u8,
    /// Digit mapped to label 0.
    pub digit_neg: u8,
    /// Digit mapped to label 1.
    pub digit_pos: u8,
    /// Per-training-environment probability that the frame color matches the
    /// label.
    pub p_train: Vec<f64>,
    /// Same probability for the held-out evaluation environments.
    pub p_test: Vec<f64>,
    /// Images drawn for the training environments (split evenly).
    pub n_train_pool: usize,
    /// Held-out images shared by every evaluation environment.
    pub n_test_pool: usize,
    pub frame_width: usize,
}

impl MnistTaskConfig {
    /// 1 vs 7 (label 1 for 7); frame matches the label with probability 0.9
    /// and 0.6 in the two training environments.
    pub fn task1() -> Self {
        MnistTaskConfig {
            task: 1,
            digit_neg: 1,
            digit_pos: 7,
            p_train: vec![0.9, 0.6],
            p_test: vec![0.8, 0.5, 0.2],
            n_train_pool: 1000,
            n_test_pool: 1000,
            frame_width: 1,
        }
    }

    /// 0 vs 6 (label 1 for 6); the second training probability drops to 0.4.
    pub fn task2() -> Self {
        MnistTaskConfig {
            task: 2,
            digit_neg: 0,
            digit_pos: 6,
            p_train: vec![0.9, 0.4],
            p_test: vec![0.8, 0.5, 0.2],
            n_train_pool: 1000,
            n_test_pool: 1000,
            frame_width: 1,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.p_train.len() < 2 {
            return Err(Error::InvalidConfig(
                "need at least two training environments".into(),
            ));
        }
        for &p in self.p_train.iter().chain(&self.p_test) {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("frame probability {p} outside [0, 1]")));
            }
        }
        if self.frame_width == 0 || self.frame_width >= IMAGE_SIDE / 2 {
            return Err(Error::InvalidConfig(format!(
                "frame width {} out of range",
                self.frame_width
            )));
        }
        if self.n_train_pool < 4 * self.p_train.len() || self.n_test_pool < 2 {
            return Err(Error::InvalidConfig("image pools too small".into()));
        }
        Ok(())
    }
}

/// The assembled dataset plus the preprocessing state needed to interpret it.
#[derive(Debug, Clone)]
pub struct MnistData {
    pub data: MultiEnvData,
    pub frame: Vec<usize>,
    /// Pooled training mean of each non-frame pixel (already subtracted);
    /// zero at frame positions.
    pub pixel_means: Vec<f64>,
}

fn frame_row(
    image: &[u8],
    label01: f64,
    p_match: f64,
    frame_mask: &[bool],
    rng: &mut RngStream,
) -> Vec<f64> {
    let b = rng.bernoulli(p_match);
    let z = if b { label01 } else { 1.0 - label01 };
    image
        .iter()
        .enumerate()
        .map(|(j, &v)| {
            if frame_mask[j] {
                FRAME_VALUE * z
            } else {
                v as f64 / 255.0
            }
        })
        .collect()
}

/// Build the multi-environment dataset from raw images: select the two digit
/// classes, split a shuffled pool across the training environments, frame
/// each image, and center the non-frame pixels by their pooled training
/// means. Every evaluation environment frames the same held-out pool
/// independently.
pub fn build_color_mnist(
    images: &[Vec<u8>],
    labels: &[u8],
    cfg: &MnistTaskConfig,
    rng: &mut RngStream,
) -> Result<MnistData> {
    cfg.validate()?;
    if images.len() != labels.len() {
        return Err(Error::IdxCountMismatch {
            images: images.len(),
            labels: labels.len(),
        });
    }
    let mut pool: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == cfg.digit_neg || l == cfg.digit_pos)
        .map(|(i, _)| i)
        .collect();
    let needed = cfg.n_train_pool + cfg.n_test_pool;
    if pool.len() < needed {
        return Err(Error::NotEnoughImages {
            needed,
            found: pool.len(),
        });
    }
    rng.shuffle(&mut pool);
    let train_pool = &pool[..cfg.n_train_pool];
    let test_pool = &pool[cfg.n_train_pool..needed];

    let frame = frame_indices(cfg.frame_width);
    let mut frame_mask = vec![false; N_PIXELS];
    for &j in &frame {
        frame_mask[j] = true;
    }
    let label01 = |i: usize| (labels[i] == cfg.digit_pos) as u8 as f64;

    let k = cfg.p_train.len();
    let per_env = cfg.n_train_pool / k;
    let mut train = Vec::with_capacity(k);
    for (e, &p_match) in cfg.p_train.iter().enumerate() {
        let lo = e * per_env;
        let hi = if e + 1 == k { cfg.n_train_pool } else { lo + per_env };
        let members = &train_pool[lo..hi];
        let mut rows = Vec::with_capacity(members.len());
        let mut y = Vec::with_capacity(members.len());
        for &i in members {
            rows.push(frame_row(&images[i], label01(i), p_match, &frame_mask, rng));
            y.push(label01(i));
        }
        train.push(EnvSample::new(
            format!("train{}", e + 1),
            Matrix::from_rows(&rows),
            y,
        )?);
    }

    let mut test = Vec::with_capacity(cfg.p_test.len());
    for (e, &p_match) in cfg.p_test.iter().enumerate() {
        let mut rows = Vec::with_capacity(test_pool.len());
        let mut y = Vec::with_capacity(test_pool.len());
        for &i in test_pool {
            rows.push(frame_row(&images[i], label01(i), p_match, &frame_mask, rng));
            y.push(label01(i));
        }
        test.push(EnvSample::new(
            format!("test{}", e + 1),
            Matrix::from_rows(&rows),
            y,
        )?);
    }

    // center non-frame pixels by their pooled training means
    let n_train: usize = train.iter().map(|e| e.n()).sum();
    let mut pixel_means = vec![0.0; N_PIXELS];
    for env in &train {
        for i in 0..env.n() {
            for (m, &v) in pixel_means.iter_mut().zip(env.x.row(i)) {
                *m += v;
            }
        }
    }
    for (j, m) in pixel_means.iter_mut().enumerate() {
        if frame_mask[j] {
            *m = 0.0;
        } else {
            *m /= n_train as f64;
        }
    }
    for env in train.iter_mut().chain(test.iter_mut()) {
        for i in 0..env.n() {
            for (j, &m) in pixel_means.iter().enumerate() {
                if m != 0.0 {
                    env.x.set(i, j, env.x.get(i, j) - m);
                }
            }
        }
    }

    Ok(MnistData {
        data: MultiEnvData::new(train, test)?,
        frame,
        pixel_means,
    })
}

/// One method's row in the task table: pooled training 0/1 error and one
/// 0/1 error per evaluation environment (in `p_test` order).
#[derive(Debug, Clone)]
pub struct TaskRow {
    pub method: Method,
    pub train_error: f64,
    pub test_errors: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TaskResult {
    pub task: u8,
    pub rows: Vec<TaskRow>,
    /// 28x28 mask of selected pixels per method.
    pub supports: BTreeMap<Method, Vec<bool>>,
}

fn task_row(model: &FittedModel, data: &MnistData, threshold: f64) -> Result<TaskRow> {
    let mut wrong = 0.0;
    let mut total = 0usize;
    for env in &data.data.train {
        let preds = predict(model, &env.x)?;
        wrong += classification_error(&preds, &env.y, threshold) * env.n() as f64;
        total += env.n();
    }
    let mut test_errors = Vec::with_capacity(data.data.test.len());
    for env in &data.data.test {
        let preds = predict(model, &env.x)?;
        test_errors.push(classification_error(&preds, &env.y, threshold));
    }
    Ok(TaskRow {
        method: model.method,
        train_error: wrong / total as f64,
        test_errors,
    })
}

/// Fit all four methods on one task and collect their error rows. The oracle
/// is told which pixels carry the frame.
pub fn run_mnist_task(
    images: &[Vec<u8>],
    labels: &[u8],
    cfg: &MnistTaskConfig,
    fit_cfg: &FairmConfig,
    master_seed: u64,
) -> Result<TaskResult> {
    let mut rng = RngStream::new(master_seed, cfg.task as u64);
    let data = build_color_mnist(images, labels, cfg, &mut rng)?;
    let threshold = 0.5;

    let models = vec![
        fairm_fit(&data.data, fit_cfg, &mut rng)?,
        erm_fit(&data.data, None, fit_cfg)?,
        maximin_fit(&data.data, None, fit_cfg, 2000, 1e-4)?,
        oracle_fit(&data.data, &data.frame, None, fit_cfg)?,
    ];

    let mut rows = Vec::new();
    let mut supports = BTreeMap::new();
    for model in &models {
        rows.push(task_row(model, &data, threshold)?);
        let mut mask = vec![false; N_PIXELS];
        for &j in &model.support {
            mask[j] = true;
        }
        supports.insert(model.method, mask);
    }
    Ok(TaskResult {
        task: cfg.task,
        rows,
        supports,
    })
}

/// ASCII PGM rendering of a pixel mask (selected = white).
pub fn write_support_pgm(path: &Path, mask: &[bool]) -> Result<()> {
    assert_eq!(mask.len(), N_PIXELS);
    let mut out = String::from("P2\n28 28\n255\n");
    for r in 0..IMAGE_SIDE {
        let row: Vec<&str> = (0..IMAGE_SIDE)
            .map(|c| if mask[r * IMAGE_SIDE + c] { "255" } else { "0" })
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    let mut f = File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// Error table for one or more tasks as CSV.
pub fn write_task_csv(path: &Path, results: &[TaskResult]) -> Result<()> {
    let mut out = String::from("task,method,train_error,test_p08,test_p05,test_p02\n");
    for res in results {
        for row in &res.rows {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6}\n",
                res.task,
                row.method,
                row.train_error,
                row.test_errors[0],
                row.test_errors[1],
                row.test_errors[2]
            ));
        }
    }
    let mut f = File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}
