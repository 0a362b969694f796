//! Energy-based binary anomaly detector and energy-guided adaptive sampling.
//!
//! The classifier emits two logits (normal, abnormal). Its free energy
//! `E(x) = −t·log Σ_y exp(f^y/t)` is pushed below `m_n` for normals and
//! above `m_ab` for abnormals. During training, synthetic abnormals whose
//! energy exceeds a recall-matched threshold on real data are added to the
//! training set.

use std::collections::BTreeSet;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{self, CheckpointError};
use crate::exec::{self, ExecMode};
use crate::imaging::GrayImage;
use crate::nn::{self, Conv, Dense, Optimizer, OptimizerKind, ParamAlloc, Tensor};
use crate::seed::Rng;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("no abnormal samples to calibrate the threshold")]
    NoAbnormalSamples,
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("image shape {found:?} does not match {expected:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("non-finite loss at epoch {0}")]
    NonFiniteLoss(usize),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// `−t · log(exp(f0/t) + exp(f1/t))`, evaluated stably.
pub fn energy(logits: [f64; 2], t: f64) -> f64 {
    let (a, b) = (logits[0] / t, logits[1] / t);
    let m = a.max(b);
    -t * (m + ((a - m).exp() + (b - m).exp()).ln())
}

fn softmax(logits: [f64; 2], t: f64) -> [f64; 2] {
    let (a, b) = (logits[0] / t, logits[1] / t);
    let m = a.max(b);
    let (ea, eb) = ((a - m).exp(), (b - m).exp());
    [ea / (ea + eb), eb / (ea + eb)]
}

/// Squared-hinge margin loss; each class term is averaged over its members
/// and vanishes when the class is absent.
pub fn energy_loss(energies: &[f64], labels: &[u8], m_n: f64, m_ab: f64) -> f64 {
    let (mut sn, mut nn_, mut sa, mut na) = (0.0, 0usize, 0.0, 0usize);
    for (&e, &y) in energies.iter().zip(labels) {
        if y == 0 {
            sn += (e - m_n).max(0.0).powi(2);
            nn_ += 1;
        } else {
            sa += (m_ab - e).max(0.0).powi(2);
            na += 1;
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    mean(sn, nn_) + mean(sa, na)
}

fn cross_entropy(logits: [f64; 2], label: u8) -> f64 {
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    lse - logits[label as usize]
}

/// Mean cross-entropy plus `λ ·` energy loss.
pub fn total_loss(logits: &[[f64; 2]], labels: &[u8], energies: &[f64], config: &EasConfig) -> f64 {
    if logits.is_empty() {
        return 0.0;
    }
    let ce = logits
        .iter()
        .zip(labels)
        .map(|(&l, &y)| cross_entropy(l, y))
        .sum::<f64>()
        / logits.len() as f64;
    ce + config.lambda * energy_loss(energies, labels, config.m_n, config.m_ab)
}

/// Fraction of abnormal energies strictly above `t`.
pub fn recall_at(energies: &[f64], labels: &[u8], t: f64) -> f64 {
    let n_ab = labels.iter().filter(|&&y| y == 1).count();
    let hit = energies
        .iter()
        .zip(labels)
        .filter(|(&e, &y)| y == 1 && e > t)
        .count();
    hit as f64 / n_ab as f64
}

/// Threshold whose abnormal recall is closest to `recall_level`, searched
/// over the sorted unique energies (smallest wins ties). When the lowest
/// energy belongs to an abnormal sample, a candidate just below it is added
/// so that full recall stays reachable.
pub fn estimate_threshold(
    energies: &[f64],
    labels: &[u8],
    recall_level: f64,
) -> Result<f64, DetectorError> {
    if !labels.contains(&1) {
        return Err(DetectorError::NoAbnormalSamples);
    }
    let mut cands: Vec<f64> = energies.iter().copied().filter(|e| e.is_finite()).collect();
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    let min_ab = energies
        .iter()
        .zip(labels)
        .filter(|(_, &y)| y == 1)
        .map(|(&e, _)| e)
        .fold(f64::INFINITY, f64::min);
    if cands.first().is_some_and(|&lo| lo >= min_ab) {
        cands.insert(0, min_ab - 1.0);
    }
    let mut best = (f64::INFINITY, f64::INFINITY);
    for &t in &cands {
        let gap = (recall_at(energies, labels, t) - recall_level).abs();
        if gap < best.0 {
            best = (gap, t);
        }
    }
    Ok(best.1)
}

/// Indices of pool members with energy strictly above `tau`.
pub fn select_synthetic(pool: &[f64], tau: f64) -> Vec<usize> {
    pool.iter()
        .enumerate()
        .filter(|(_, &e)| e > tau)
        .map(|(i, _)| i)
        .collect()
}

/// Convolutional backbone: input pooling, conv blocks (conv, SiLU, 2×2
/// average pool), global average pooling and a linear head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierArch {
    pub channels: Vec<usize>,
    /// Number of 2× average poolings applied to the input.
    pub input_pool: usize,
    /// The last feature map is averaged over a `grid x grid` layout before
    /// the linear head; 1 is global average pooling.
    #[serde(default = "one")]
    pub grid: usize,
}

fn one() -> usize {
    1
}

impl ClassifierArch {
    /// Image sides must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        (1 << (self.input_pool + self.channels.len())) * self.grid
    }
}

impl Default for ClassifierArch {
    fn default() -> Self {
        Self {
            channels: vec![16, 32],
            input_pool: 1,
            grid: 4,
        }
    }
}

#[derive(Debug, Clone)]
struct ClassifierLayers {
    convs: Vec<Conv>,
    head: Dense,
    n_params: usize,
}

#[derive(Debug, Clone)]
pub struct EnergyDetector {
    arch: ClassifierArch,
    layers: ClassifierLayers,
    pub params: Vec<f64>,
}

struct ForwardCache {
    cols: Vec<Vec<f64>>,
    pre: Vec<Tensor>,
    feat: Vec<f64>,
    last_hw: (usize, usize),
}

/// Decision, abnormal probability and energy for one image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: u8,
    pub p_abnormal: f64,
    pub energy: f64,
    pub logits: [f64; 2],
}

/// Argmax of the logits (ties go to normal), softmax probability of the
/// abnormal class and the energy at temperature `t`.
pub fn prediction_from_logits(logits: [f64; 2], t: f64) -> Prediction {
    Prediction {
        label: u8::from(logits[1] > logits[0]),
        p_abnormal: softmax(logits, 1.0)[1],
        energy: energy(logits, t),
        logits,
    }
}

impl EnergyDetector {
    pub fn new(arch: ClassifierArch, rng: &mut Rng) -> Result<Self, DetectorError> {
        if arch.channels.is_empty() || arch.channels.contains(&0) || arch.grid == 0 {
            return Err(DetectorError::ConfigInvalid(format!(
                "bad classifier channels {:?}",
                arch.channels
            )));
        }
        let layers = Self::build(&arch);
        let mut params = vec![0.0; layers.n_params];
        for c in &layers.convs {
            c.init(&mut params, rng, 2f64.sqrt());
        }
        layers.head.init(&mut params, rng, 1.0);
        Ok(Self {
            arch,
            layers,
            params,
        })
    }

    fn build(arch: &ClassifierArch) -> ClassifierLayers {
        let mut alloc = ParamAlloc::default();
        let mut prev = 1;
        let convs = arch
            .channels
            .iter()
            .map(|&c| {
                let conv = Conv::new(&mut alloc, prev, c, 3);
                prev = c;
                conv
            })
            .collect();
        let head = Dense::new(&mut alloc, prev * arch.grid * arch.grid, 2);
        ClassifierLayers {
            convs,
            head,
            n_params: alloc.len,
        }
    }

    /// Sets both head biases so a featureless input has energy `e` at
    /// temperature `t`.
    pub fn set_bias_energy(&mut self, e: f64, t: f64) {
        let head = &self.layers.head;
        let start = head.offset + head.inputs * head.outputs;
        let b = -e - t * std::f64::consts::LN_2;
        self.params[start..start + 2].fill(b);
    }

    pub fn arch(&self) -> &ClassifierArch {
        &self.arch
    }

    pub fn n_params(&self) -> usize {
        self.layers.n_params
    }

    /// Images must have sides divisible by this.
    pub fn size_multiple(&self) -> usize {
        self.arch.size_multiple()
    }

    fn check(&self, image: &GrayImage) -> Result<(), DetectorError> {
        let m = self.size_multiple();
        let (h, w) = (image.height(), image.width());
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(DetectorError::ShapeMismatch {
                expected: (m * (h / m).max(1), m * (w / m).max(1)),
                found: (h, w),
            });
        }
        Ok(())
    }

    fn forward_cached(&self, image: &GrayImage) -> ([f64; 2], ForwardCache) {
        let p = &self.params;
        // dark chromosome on light background: feed 1 − intensity
        let mut x = Tensor::from_data(
            1,
            image.height(),
            image.width(),
            image.pixels().iter().map(|v| 1.0 - v).collect(),
        );
        for _ in 0..self.arch.input_pool {
            x = nn::avg_pool2(&x);
        }
        let mut cols = Vec::with_capacity(self.layers.convs.len());
        let mut pre = Vec::with_capacity(self.layers.convs.len());
        for conv in &self.layers.convs {
            let (y, c) = conv.forward(p, &x);
            x = nn::avg_pool2(&nn::silu(&y));
            cols.push(c);
            pre.push(y);
        }
        let feat = nn::grid_avg_pool(&x, self.arch.grid);
        let out = self.layers.head.forward(p, &feat);
        (
            [out[0], out[1]],
            ForwardCache {
                cols,
                pre,
                feat,
                last_hw: (x.h, x.w),
            },
        )
    }

    fn backward(&self, cache: &ForwardCache, dlogits: [f64; 2], grad: &mut [f64]) {
        let p = &self.params;
        let dfeat = self.layers.head.backward(p, &cache.feat, &dlogits, grad);
        let c = self.arch.channels[self.arch.channels.len() - 1];
        let mut dx =
            nn::grid_avg_pool_backward(&dfeat, c, cache.last_hw.0, cache.last_hw.1, self.arch.grid);
        for (k, conv) in self.layers.convs.iter().enumerate().rev() {
            let dact = nn::avg_pool2_backward(&dx);
            let dpre = nn::silu_backward(&cache.pre[k], &dact);
            match conv.backward(p, &cache.cols[k], &dpre, grad, k > 0) {
                Some(d) => dx = d,
                None => break,
            }
        }
    }

    pub fn logits(&self, image: &GrayImage) -> Result<[f64; 2], DetectorError> {
        self.check(image)?;
        Ok(self.forward_cached(image).0)
    }

    pub fn predict(&self, image: &GrayImage, t: f64) -> Result<Prediction, DetectorError> {
        Ok(prediction_from_logits(self.logits(image)?, t))
    }

    /// Batch loss (mean CE + λ·energy loss) and its gradient.
    pub fn batch_loss_and_grad(
        &self,
        images: &[&GrayImage],
        labels: &[u8],
        config: &EasConfig,
        mode: ExecMode,
    ) -> (BatchLoss, Vec<f64>) {
        let forwards = exec::map_range(mode, images.len(), |i| self.forward_cached(images[i]));
        let logits: Vec<[f64; 2]> = forwards.iter().map(|f| f.0).collect();
        let energies: Vec<f64> = logits
            .iter()
            .map(|&l| energy(l, config.temperature))
            .collect();
        let n = images.len() as f64;
        let n_norm = labels.iter().filter(|&&y| y == 0).count() as f64;
        let n_ab = labels.len() as f64 - n_norm;
        let mut ce = 0.0;
        let dlogits: Vec<[f64; 2]> = logits
            .iter()
            .zip(labels)
            .zip(&energies)
            .map(|((&l, &y), &e)| {
                ce += cross_entropy(l, y);
                let sm = softmax(l, 1.0);
                let mut d = [sm[0] / n, sm[1] / n];
                d[y as usize] -= 1.0 / n;
                // dE/df_k = −softmax(f/t)_k
                let st = softmax(l, config.temperature);
                let coef = if y == 0 {
                    2.0 * (e - config.m_n).max(0.0) / n_norm
                } else {
                    -2.0 * (config.m_ab - e).max(0.0) / n_ab
                };
                d[0] += config.lambda * coef * -st[0];
                d[1] += config.lambda * coef * -st[1];
                d
            })
            .collect();
        let grads = exec::map_range(mode, images.len(), |i| {
            let mut g = vec![0.0; self.n_params()];
            self.backward(&forwards[i].1, dlogits[i], &mut g);
            g
        });
        let mut grad = vec![0.0; self.n_params()];
        for g in &grads {
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        let el = energy_loss(&energies, labels, config.m_n, config.m_ab);
        (
            BatchLoss {
                ce: ce / n,
                energy: el,
                total: ce / n + config.lambda * el,
            },
            grad,
        )
    }

    pub fn save(&self, path: &Path) -> Result<(), DetectorError> {
        let arch = serde_json::to_value(&self.arch).expect("architecture serialises");
        checkpoint::write(path, "detector", arch, &self.params)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DetectorError> {
        let (header, params) = checkpoint::read(path, "detector")?;
        let arch: ClassifierArch = serde_json::from_value(header.architecture)
            .map_err(|e| DetectorError::ConfigInvalid(format!("checkpoint architecture: {e}")))?;
        let layers = Self::build(&arch);
        if params.len() != layers.n_params {
            return Err(DetectorError::ConfigInvalid(format!(
                "checkpoint has {} parameters, architecture needs {}",
                params.len(),
                layers.n_params
            )));
        }
        Ok(Self {
            arch,
            layers,
            params,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    pub ce: f64,
    pub energy: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EasConfig {
    pub temperature: f64,
    pub m_n: f64,
    pub m_ab: f64,
    /// Weight of the energy term.
    pub lambda: f64,
    pub recall_level: f64,
    pub epochs: usize,
    pub warmup: usize,
    pub interval: usize,
    pub momentum: f64,
    /// Normals evaluated per threshold estimate.
    pub normal_cap: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    /// Cosine annealing of the learning rate over all epochs.
    pub cosine_decay: bool,
}

impl Default for EasConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            m_n: -27.0,
            m_ab: -5.0,
            lambda: 0.1,
            recall_level: 0.7,
            epochs: 100,
            warmup: 10,
            interval: 10,
            momentum: 0.9,
            normal_cap: 2000,
            batch_size: 32,
            optimizer: OptimizerKind::adam(5e-3),
            cosine_decay: true,
        }
    }
}

impl EasConfig {
    pub fn validate(&self) -> Result<(), DetectorError> {
        let bad = |m: String| Err(DetectorError::ConfigInvalid(m));
        if !(self.temperature > 0.0) {
            return bad(format!(
                "temperature must be positive, got {}",
                self.temperature
            ));
        }
        if !(self.m_n < self.m_ab) {
            return bad(format!(
                "need m_n < m_ab, got {} and {}",
                self.m_n, self.m_ab
            ));
        }
        if !(self.recall_level > 0.0 && self.recall_level <= 1.0) {
            return bad(format!(
                "recall level must lie in (0, 1], got {}",
                self.recall_level
            ));
        }
        if self.interval == 0 {
            return bad("sampling interval must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return bad(format!(
                "momentum must lie in [0, 1], got {}",
                self.momentum
            ));
        }
        if self.batch_size == 0 || self.normal_cap == 0 {
            return bad("batch size and normal cap must be positive".into());
        }
        if !(self.lambda >= 0.0) {
            return bad(format!(
                "energy weight must be non-negative, got {}",
                self.lambda
            ));
        }
        Ok(())
    }

    /// Whether threshold estimation and selection run at `epoch` (1-based).
    pub fn is_sampling_epoch(&self, epoch: usize) -> bool {
        epoch >= self.warmup && (epoch - self.warmup) % self.interval == 0
    }

    pub fn sampling_epochs(&self) -> Vec<usize> {
        (1..=self.epochs)
            .filter(|&e| self.is_sampling_epoch(e))
            .collect()
    }
}

/// `m·prev + (1 − m)·new`, with the degenerate weights returning an exact
/// copy of one side.
pub fn momentum_blend(prev: &[f64], new: &[f64], m: f64) -> Vec<f64> {
    if m == 1.0 {
        return prev.to_vec();
    }
    if m == 0.0 {
        return new.to_vec();
    }
    prev.iter()
        .zip(new)
        .map(|(p, n)| m * p + (1.0 - m) * n)
        .collect()
}

/// State carried across epochs.
#[derive(Debug, Clone)]
pub struct TrainingState {
    pub epoch: usize,
    /// Indices into the synthetic pool selected so far.
    pub selected: BTreeSet<usize>,
    pub prev_params: Vec<f64>,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub ce_loss: f64,
    pub energy_loss: f64,
    pub tau: f64,
    pub selected_count: usize,
    pub mean_e_normal: f64,
    pub mean_e_abnormal: f64,
    pub sampled: bool,
}

/// How the synthetic pool enters training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolUse {
    /// Synthetic data never used.
    None,
    /// The whole pool is added as abnormal from the first epoch.
    Static,
    /// Energy-guided adaptive selection.
    Adaptive,
}

/// Training inputs for one class.
pub struct TrainingData<'a> {
    pub normals: &'a [GrayImage],
    pub abnormals: &'a [GrayImage],
    pub pool: &'a [GrayImage],
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Algorithm 1 with the pool usage selectable; `PoolUse::None` is plain
/// training on real data.
pub fn eas_train(
    mut model: EnergyDetector,
    data: &TrainingData<'_>,
    pool_use: PoolUse,
    config: &EasConfig,
    rng: &mut Rng,
    mode: ExecMode,
) -> Result<(EnergyDetector, Vec<EpochLog>, TrainingState), DetectorError> {
    config.validate()?;
    if data.normals.is_empty() || data.abnormals.is_empty() {
        return Err(DetectorError::ConfigInvalid(
            "need at least one normal and one abnormal image".into(),
        ));
    }
    for img in data.normals.iter().chain(data.abnormals).chain(data.pool) {
        model.check(img)?;
    }
    let t = config.temperature;
    let mut opt = Optimizer::new(config.optimizer, model.n_params());
    let mut state = TrainingState {
        epoch: 0,
        selected: BTreeSet::new(),
        prev_params: model.params.clone(),
        tau: f64::INFINITY,
    };
    if pool_use == PoolUse::Static {
        state.selected.extend(0..data.pool.len());
    }
    let mut logs = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        state.epoch = epoch;
        let sampled = pool_use == PoolUse::Adaptive && config.is_sampling_epoch(epoch);
        if sampled {
            let mut idx: Vec<usize> = (0..data.normals.len()).collect();
            idx.shuffle(rng);
            idx.truncate(config.normal_cap);
            let energies_of = |imgs: &[&GrayImage]| -> Vec<f64> {
                exec::map_range(mode, imgs.len(), |i| {
                    energy(model.forward_cached(imgs[i]).0, t)
                })
            };
            let normals: Vec<&GrayImage> = idx.iter().map(|&i| &data.normals[i]).collect();
            let abn: Vec<&GrayImage> = data.abnormals.iter().collect();
            let mut energies = energies_of(&normals);
            let mut labels = vec![0u8; energies.len()];
            energies.extend(energies_of(&abn));
            labels.resize(energies.len(), 1);
            state.tau = estimate_threshold(&energies, &labels, config.recall_level)?;
            let pool_refs: Vec<&GrayImage> = data.pool.iter().collect();
            let pool_e = energies_of(&pool_refs);
            state.selected.extend(select_synthetic(&pool_e, state.tau));
        }
        let before = model.params.clone();

        let mut items: Vec<(&GrayImage, u8)> = data
            .normals
            .iter()
            .map(|x| (x, 0))
            .chain(data.abnormals.iter().map(|x| (x, 1)))
            .chain(state.selected.iter().map(|&i| (&data.pool[i], 1)))
            .collect();
        items.shuffle(rng);
        let (mut ce_sum, mut el_sum, mut batches) = (0.0, 0.0, 0usize);
        let n_batches = items.len().div_ceil(config.batch_size);
        for (b, chunk) in items.chunks(config.batch_size).enumerate() {
            let imgs: Vec<&GrayImage> = chunk.iter().map(|c| c.0).collect();
            let labels: Vec<u8> = chunk.iter().map(|c| c.1).collect();
            let (loss, mut grad) = model.batch_loss_and_grad(&imgs, &labels, config, mode);
            if !loss.total.is_finite() {
                return Err(DetectorError::NonFiniteLoss(epoch));
            }
            ce_sum += loss.ce;
            el_sum += loss.energy;
            batches += 1;
            let scale = if config.cosine_decay {
                let progress =
                    ((epoch - 1) * n_batches + b) as f64 / (config.epochs * n_batches) as f64;
                0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
            } else {
                1.0
            };
            opt.step(&mut model.params, &mut grad, scale);
        }
        if sampled {
            model.params = momentum_blend(&before, &model.params, config.momentum);
        }
        state.prev_params = before;
        // energy summaries on real training data after the update
        let sample_e = |imgs: &[GrayImage], cap: usize| -> Vec<f64> {
            let n = imgs.len().min(cap);
            exec::map_range(mode, n, |i| energy(model.forward_cached(&imgs[i]).0, t))
        };
        let en = sample_e(data.normals, 200);
        let ea = sample_e(data.abnormals, 200);
        logs.push(EpochLog {
            epoch,
            ce_loss: ce_sum / batches as f64,
            energy_loss: el_sum / batches as f64,
            tau: state.tau,
            selected_count: state.selected.len(),
            mean_e_normal: mean(&en),
            mean_e_abnormal: mean(&ea),
            sampled,
        });
    }
    Ok((model, logs, state))
}

pub const EAS_LOG_HEADER: &str =
    "epoch,ce_loss,energy_loss,tau,selected_count,mean_E_normal,mean_E_abnormal";

pub fn write_log_csv(path: &Path, logs: &[EpochLog]) -> Result<(), DetectorError> {
    let io = |source| DetectorError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(f, "{EAS_LOG_HEADER}").map_err(io)?;
    for l in logs {
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            l.epoch,
            l.ce_loss,
            l.energy_loss,
            l.tau,
            l.selected_count,
            l.mean_e_normal,
            l.mean_e_abnormal
        )
        .map_err(io)?;
    }
    f.flush().map_err(io)
}
