//! Classification, image-fidelity and distributional metrics.
//!
//! Ratio metrics with an empty denominator are `None` rather than zero.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::GrayImage;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("image smaller than the {0}x{0} window")]
    TooSmall(usize),
    #[error("both labels are required")]
    SingleClass,
    #[error("need at least two samples per set, got {0} and {1}")]
    TooFewSamples(usize, usize),
    #[error("non-finite score")]
    NonFinite,
}

/// Confusion counts with abnormal as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    /// Tallies predicted against true labels (1 = abnormal).
    pub fn from_labels(truth: &[u8], predicted: &[u8]) -> Self {
        let mut c = Confusion::default();
        for (&t, &p) in truth.iter().zip(predicted) {
            match (t, p) {
                (1, 1) => c.tp += 1,
                (1, _) => c.fn_ += 1,
                (_, 1) => c.fp += 1,
                _ => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub acc: Option<f64>,
    pub sen: Option<f64>,
    pub spe: Option<f64>,
    pub pre_ab: Option<f64>,
    pub pre_n: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn classification_metrics(c: &Confusion) -> ClassificationMetrics {
    let sen = ratio(c.tp, c.tp + c.fn_);
    let pre_ab = ratio(c.tp, c.tp + c.fp);
    let f1 = match (pre_ab, sen) {
        (Some(p), Some(s)) if p + s > 0.0 => Some(2.0 * p * s / (p + s)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    ClassificationMetrics {
        acc: ratio(c.tp + c.tn, c.total()),
        sen,
        spe: ratio(c.tn, c.tn + c.fp),
        pre_ab,
        pre_n: ratio(c.tn, c.tn + c.fn_),
        f1,
    }
}

/// A score (higher means more abnormal) with its true label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub score: f64,
    pub label: u8,
}

/// Mann–Whitney AUC with average ranks for ties.
pub fn auc(samples: &[ScoredSample]) -> Result<f64, MetricsError> {
    if samples.iter().any(|s| !s.score.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let n_ab = samples.iter().filter(|s| s.label == 1).count();
    let n_n = samples.len() - n_ab;
    if n_ab == 0 || n_n == 0 {
        return Err(MetricsError::SingleClass);
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].score.total_cmp(&samples[b].score));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && samples[order[j + 1]].score == samples[order[i]].score {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg
            * order[i..=j]
                .iter()
                .filter(|&&k| samples[k].label == 1)
                .count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_ab * (n_ab + 1)) as f64 / 2.0;
    Ok(u / (n_ab * n_n) as f64)
}

fn same_shape(a: &GrayImage, b: &GrayImage) -> Result<(), MetricsError> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(MetricsError::ShapeMismatch(
            (a.height(), a.width()),
            (b.height(), b.width()),
        ));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB; identical images give `+inf`.
pub fn psnr(a: &GrayImage, b: &GrayImage, peak: f64) -> Result<f64, MetricsError> {
    same_shape(a, b)?;
    let n = a.pixels().len() as f64;
    let mse = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

pub const SSIM_WINDOW: usize = 11;

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size - 1) as f64 / 2.0;
    let mut w = Vec::with_capacity(size * size);
    for r in 0..size {
        for k in 0..size {
            let d2 = (r as f64 - c).powi(2) + (k as f64 - c).powi(2);
            w.push((-d2 / (2.0 * sigma * sigma)).exp());
        }
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Mean SSIM over all fully contained 11×11 Gaussian windows (σ = 1.5).
pub fn ssim(a: &GrayImage, b: &GrayImage, peak: f64) -> Result<f64, MetricsError> {
    same_shape(a, b)?;
    let (w, h) = (a.width(), a.height());
    let ws = SSIM_WINDOW;
    if w < ws || h < ws {
        return Err(MetricsError::TooSmall(ws));
    }
    let win = gaussian_window(ws, 1.5);
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let (pa, pb) = (a.pixels(), b.pixels());
    let mut total = 0.0;
    let mut count = 0usize;
    for r0 in 0..=h - ws {
        for c0 in 0..=w - ws {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for r in 0..ws {
                for c in 0..ws {
                    let g = win[r * ws + c];
                    let i = (r0 + r) * w + c0 + c;
                    let (x, y) = (pa[i], pb[i]);
                    ma += g * x;
                    mb += g * y;
                    saa += g * x * x;
                    sbb += g * y * y;
                    sab += g * x * y;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Flattened 4×4 block means; trailing rows/columns that do not fill a
/// block are dropped.
pub fn pooled_features(image: &GrayImage) -> Vec<f64> {
    let (w, h) = (image.width() / 4, image.height() / 4);
    let mut out = Vec::with_capacity(w * h);
    for r in 0..h {
        for c in 0..w {
            let mut s = 0.0;
            for dr in 0..4 {
                for dc in 0..4 {
                    s += image.get(4 * r + dr, 4 * c + dc);
                }
            }
            out.push(s / 16.0);
        }
    }
    out
}

fn poly_kernel(x: &[f64], y: &[f64]) -> f64 {
    let d = x.len() as f64;
    (x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / d + 1.0).powi(3)
}

/// Unbiased MMD² with the cubic polynomial kernel `(x·y/d + 1)³`.
pub fn mmd_kid(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<f64, MetricsError> {
    if x.len() < 2 || y.len() < 2 {
        return Err(MetricsError::TooFewSamples(x.len(), y.len()));
    }
    let off_diag = |s: &[Vec<f64>]| {
        let mut acc = 0.0;
        for i in 0..s.len() {
            for j in 0..s.len() {
                if i != j {
                    acc += poly_kernel(&s[i], &s[j]);
                }
            }
        }
        acc / (s.len() * (s.len() - 1)) as f64
    };
    let mut cross = 0.0;
    for a in x {
        for b in y {
            cross += poly_kernel(a, b);
        }
    }
    cross /= (x.len() * y.len()) as f64;
    Ok(off_diag(x) + off_diag(y) - 2.0 * cross)
}

/// One CSV row of evaluation output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: String,
    pub class_id: u32,
    pub arm: String,
    pub metrics: ClassificationMetrics,
    pub auc_prob: Option<f64>,
    pub auc_energy: Option<f64>,
}

pub const METRICS_CSV_HEADER: &str =
    "run_id,class_id,arm,acc,sen,spe,pre_ab,pre_n,f1,auc_prob,auc_energy";

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

/// Renders rows as CSV; undefined values are written as `NA`.
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.run_id,
            r.class_id,
            r.arm,
            cell(m.acc),
            cell(m.sen),
            cell(m.spe),
            cell(m.pre_ab),
            cell(m.pre_n),
            cell(m.f1),
            cell(r.auc_prob),
            cell(r.auc_energy)
        );
    }
    out
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}
