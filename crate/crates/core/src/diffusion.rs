//! Mean-reverting SDE restoration.
//!
//! The forward process `dx = θ_t (s − x) dt + σ_t dw` pulls an image `x`
//! towards its rearranged counterpart `s`. With `σ_t² = 2λ²θ_t` the marginals
//! are Gaussian in closed form, so a conditional noise predictor can be
//! trained by score matching and run backwards from `s′ + λz`.
//!
//! Diffusion states are plain `f64` fields because intermediate samples leave
//! `[0, 1]`; only restored outputs are clamped back into a [`GrayImage`].

use std::io::Write as _;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{self, CheckpointError};
use crate::exec::{self, ExecMode};
use crate::imaging::GrayImage;
use crate::nn::{self, Conv, Dense, Optimizer, OptimizerKind, ParamAlloc, Tensor};
use crate::seed::{self, rng_from_seed, Rng};

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("variance is zero")]
    ZeroVariance,
    #[error("non-finite loss {loss} at iteration {iteration}")]
    NonFiniteLoss { iteration: usize, loss: f64 },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Paper defaults expressed in `[0, 1]` intensity units.
pub const DEFAULT_STEPS: usize = 100;
pub const DEFAULT_SIGMA_MAX: f64 = 10.0 / 255.0;
pub const DEFAULT_LAMBDA: f64 = 2.0 / 255.0;

/// Discretised coefficients of the mean-reverting SDE. Index `i` runs over
/// `1..=T`; `theta_bar(0) == 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    steps: usize,
    sigma_max: f64,
    lambda: f64,
    sigmas: Vec<f64>,
    thetas: Vec<f64>,
    theta_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Cosine ramp `σ_i = σ_max · sin(π/2 · i/T)` with `θ_i = σ_i²/(2λ²)`.
    pub fn new(steps: usize, sigma_max: f64, lambda: f64) -> Result<Self, DiffusionError> {
        if steps < 2 {
            return Err(DiffusionError::InvalidParameter(format!(
                "steps must be >= 2, got {steps}"
            )));
        }
        if !(sigma_max > 0.0 && sigma_max.is_finite()) {
            return Err(DiffusionError::InvalidParameter(format!(
                "sigma_max must be positive, got {sigma_max}"
            )));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(DiffusionError::InvalidParameter(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        let dt = 1.0 / steps as f64;
        let mut sigmas = vec![0.0];
        let mut thetas = vec![0.0];
        let mut theta_bar = vec![0.0];
        for i in 1..=steps {
            let s = sigma_max * (std::f64::consts::FRAC_PI_2 * i as f64 / steps as f64).sin();
            let th = s * s / (2.0 * lambda * lambda);
            sigmas.push(s);
            thetas.push(th);
            theta_bar.push(theta_bar[i - 1] + th * dt);
        }
        Ok(Self {
            steps,
            sigma_max,
            lambda,
            sigmas,
            thetas,
            theta_bar,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma_max
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.steps as f64
    }

    pub fn sigma(&self, i: usize) -> f64 {
        self.sigmas[i]
    }

    pub fn theta(&self, i: usize) -> f64 {
        self.thetas[i]
    }

    pub fn theta_bar(&self, i: usize) -> f64 {
        self.theta_bar[i]
    }

    /// Marginal variance `v_i = λ²(1 − e^{−2θ̄_i})`.
    pub fn variance(&self, i: usize) -> f64 {
        self.lambda * self.lambda * (1.0 - (-2.0 * self.theta_bar[i]).exp())
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::new(DEFAULT_STEPS, DEFAULT_SIGMA_MAX, DEFAULT_LAMBDA).expect("valid defaults")
    }
}

fn check_len(a: &[f64], b: &[f64]) -> Result<(), DiffusionError> {
    if a.len() != b.len() {
        return Err(DiffusionError::ShapeMismatch {
            expected: (a.len(), 1),
            found: (b.len(), 1),
        });
    }
    Ok(())
}

/// Closed-form mean and variance of `x_i` given `x_0` and `s`.
pub fn marginal(
    x0: &[f64],
    s: &[f64],
    i: usize,
    schedule: &NoiseSchedule,
) -> Result<(Vec<f64>, f64), DiffusionError> {
    check_len(x0, s)?;
    if i > schedule.steps() {
        return Err(DiffusionError::InvalidParameter(format!(
            "step {i} beyond {}",
            schedule.steps()
        )));
    }
    let decay = (-schedule.theta_bar(i)).exp();
    let m = x0
        .iter()
        .zip(s)
        .map(|(x, s)| x * decay + s * (1.0 - decay))
        .collect();
    Ok((m, schedule.variance(i)))
}

/// Draws `x_i = m_i + √v_i ε` and returns `(x_i, ε)`.
pub fn forward_sample(
    x0: &[f64],
    s: &[f64],
    i: usize,
    schedule: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<(Vec<f64>, Vec<f64>), DiffusionError> {
    if i == 0 {
        return Err(DiffusionError::InvalidParameter(
            "forward sampling needs step >= 1".into(),
        ));
    }
    let (m, v) = marginal(x0, s, i, schedule)?;
    let sd = v.sqrt();
    let eps: Vec<f64> = (0..m.len()).map(|_| StandardNormal.sample(rng)).collect();
    let x = m.iter().zip(&eps).map(|(m, e)| m + sd * e).collect();
    Ok((x, eps))
}

/// Score of the Gaussian marginal, `−(x − m)/v`.
pub fn exact_score(x: &[f64], m: &[f64], v: f64) -> Result<Vec<f64>, DiffusionError> {
    check_len(x, m)?;
    if v <= 0.0 {
        return Err(DiffusionError::ZeroVariance);
    }
    Ok(x.iter().zip(m).map(|(x, m)| -(x - m) / v).collect())
}

/// One Euler–Maruyama step of the reverse-time SDE from `i` to `i − 1`.
pub fn reverse_step(
    x: &[f64],
    s: &[f64],
    score: &[f64],
    i: usize,
    schedule: &NoiseSchedule,
    rng: &mut Rng,
    stochastic: bool,
) -> Vec<f64> {
    let (th, sg, dt) = (schedule.theta(i), schedule.sigma(i), schedule.dt());
    let diff = sg * dt.sqrt();
    x.iter()
        .zip(s)
        .zip(score)
        .map(|((&x, &s), &sc)| {
            let drift = th * (s - x) - sg * sg * sc;
            let z: f64 = if stochastic {
                StandardNormal.sample(rng)
            } else {
                0.0
            };
            x - drift * dt + diff * z
        })
        .collect()
}

/// Layer widths of the encoder-decoder noise predictor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserArch {
    /// Channel width per resolution level; one 2× pooling per level.
    pub channels: Vec<usize>,
    pub embed_dim: usize,
}

impl Default for DenoiserArch {
    fn default() -> Self {
        Self {
            channels: vec![8, 16, 32],
            embed_dim: 16,
        }
    }
}

#[derive(Debug, Clone)]
struct Layers {
    enc: Vec<Conv>,
    mid: Conv,
    temb: Dense,
    dec: Vec<Conv>,
    out: Conv,
    n_params: usize,
}

impl Layers {
    fn new(arch: &DenoiserArch) -> Self {
        let ch = &arch.channels;
        let l = ch.len();
        let mut alloc = ParamAlloc::default();
        let enc = (0..l)
            .map(|j| Conv::new(&mut alloc, if j == 0 { 2 } else { ch[j - 1] }, ch[j], 3))
            .collect();
        let mid = Conv::new(&mut alloc, ch[l - 1], ch[l - 1], 3);
        let temb = Dense::new(&mut alloc, arch.embed_dim, ch[l - 1]);
        let dec = (0..l)
            .map(|j| {
                Conv::new(
                    &mut alloc,
                    if j + 1 < l { ch[j + 1] } else { ch[l - 1] },
                    ch[j],
                    3,
                )
            })
            .collect();
        let out = Conv::new(&mut alloc, ch[0], 1, 3);
        Self {
            enc,
            mid,
            temb,
            dec,
            out,
            n_params: alloc.len,
        }
    }
}

/// Conditional noise predictor `ε̃_φ(x_i, s, i)`.
///
/// Inputs are standardised before the first convolution: channel 0 carries
/// `(x_i − s)/λ` and channel 1 carries `2s − 1`.
#[derive(Debug, Clone)]
pub struct Denoiser {
    arch: DenoiserArch,
    layers: Layers,
    lambda: f64,
    pub params: Vec<f64>,
}

struct Cache {
    enc_cols: Vec<Vec<f64>>,
    enc_pre: Vec<Tensor>,
    mid_cols: Vec<f64>,
    mid_pre: Tensor,
    emb: Vec<f64>,
    dec_cols: Vec<Vec<f64>>,
    dec_pre: Vec<Tensor>,
    out_cols: Vec<f64>,
}

/// Norm of the per-pixel noise-prediction error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossNorm {
    #[default]
    L1,
    L2,
}

impl Denoiser {
    /// Randomly initialised network; the output layer starts at zero.
    pub fn new(arch: DenoiserArch, lambda: f64, rng: &mut Rng) -> Result<Self, DiffusionError> {
        if arch.channels.is_empty() || arch.channels.contains(&0) || arch.embed_dim == 0 {
            return Err(DiffusionError::InvalidParameter(format!(
                "bad architecture {arch:?}"
            )));
        }
        let layers = Layers::new(&arch);
        let mut params = vec![0.0; layers.n_params];
        for c in layers.enc.iter().chain([&layers.mid]).chain(&layers.dec) {
            c.init(&mut params, rng, 2f64.sqrt());
        }
        layers.temb.init(&mut params, rng, 1.0);
        Ok(Self {
            arch,
            layers,
            lambda,
            params,
        })
    }

    /// Network with every parameter zero; predicts zero noise everywhere.
    pub fn zeros(arch: DenoiserArch, lambda: f64) -> Self {
        let layers = Layers::new(&arch);
        let params = vec![0.0; layers.n_params];
        Self {
            arch,
            layers,
            lambda,
            params,
        }
    }

    pub fn arch(&self) -> &DenoiserArch {
        &self.arch
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn n_params(&self) -> usize {
        self.layers.n_params
    }

    /// Images must have sides divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << self.arch.channels.len()
    }

    fn check_shape(&self, h: usize, w: usize) -> Result<(), DiffusionError> {
        let m = self.size_multiple();
        if h % m != 0 || w % m != 0 || h == 0 || w == 0 {
            return Err(DiffusionError::ShapeMismatch {
                expected: (m * (h / m).max(1), m * (w / m).max(1)),
                found: (h, w),
            });
        }
        Ok(())
    }

    fn input(&self, x: &[f64], s: &[f64], h: usize, w: usize) -> Tensor {
        let mut data = Vec::with_capacity(2 * h * w);
        data.extend(x.iter().zip(s).map(|(x, s)| (x - s) / self.lambda));
        data.extend(s.iter().map(|s| 2.0 * s - 1.0));
        Tensor::from_data(2, h, w, data)
    }

    fn forward_cached(
        &self,
        x: &[f64],
        s: &[f64],
        step: usize,
        h: usize,
        w: usize,
    ) -> (Vec<f64>, Cache) {
        let p = &self.params;
        let ly = &self.layers;
        let l = ly.enc.len();
        let mut enc_cols = Vec::with_capacity(l);
        let mut enc_pre = Vec::with_capacity(l);
        let mut enc_act: Vec<Tensor> = Vec::with_capacity(l);
        for j in 0..l {
            let xin = if j == 0 {
                self.input(x, s, h, w)
            } else {
                nn::avg_pool2(&enc_act[j - 1])
            };
            let (pre, cols) = ly.enc[j].forward(p, &xin);
            enc_act.push(nn::silu(&pre));
            enc_cols.push(cols);
            enc_pre.push(pre);
        }
        let emb = nn::time_embedding(step as f64, self.arch.embed_dim);
        let tvec = ly.temb.forward(p, &emb);
        let (mut mid_pre, mid_cols) = ly.mid.forward(p, &nn::avg_pool2(&enc_act[l - 1]));
        let plane = mid_pre.h * mid_pre.w;
        for (ch, t) in tvec.iter().enumerate() {
            mid_pre.data[ch * plane..(ch + 1) * plane]
                .iter_mut()
                .for_each(|v| *v += t);
        }
        let mut hcur = nn::silu(&mid_pre);
        let mut dec_cols = vec![Vec::new(); l];
        let mut dec_pre = vec![Tensor::zeros(0, 0, 0); l];
        for j in (0..l).rev() {
            let (mut pre, cols) = ly.dec[j].forward(p, &nn::upsample2(&hcur));
            pre.add_assign(&enc_act[j]);
            hcur = nn::silu(&pre);
            dec_cols[j] = cols;
            dec_pre[j] = pre;
        }
        let (out, out_cols) = ly.out.forward(p, &hcur);
        let cache = Cache {
            enc_cols,
            enc_pre,
            mid_cols,
            mid_pre,
            emb,
            dec_cols,
            dec_pre,
            out_cols,
        };
        (out.data, cache)
    }

    /// Predicted noise for state `x` conditioned on `s` at step `step`.
    pub fn predict(
        &self,
        x: &[f64],
        s: &[f64],
        step: usize,
        h: usize,
        w: usize,
    ) -> Result<Vec<f64>, DiffusionError> {
        self.check_shape(h, w)?;
        if x.len() != h * w || s.len() != h * w {
            return Err(DiffusionError::ShapeMismatch {
                expected: (h, w),
                found: (x.len(), s.len()),
            });
        }
        Ok(self.forward_cached(x, s, step, h, w).0)
    }

    /// Accumulates `∂L/∂φ` into `grad` given `dout = ∂L/∂ε̃`.
    fn backward(&self, cache: &Cache, dout: &[f64], h: usize, w: usize, grad: &mut [f64]) {
        let p = &self.params;
        let ly = &self.layers;
        let l = ly.enc.len();
        let dout = Tensor::from_data(1, h, w, dout.to_vec());
        let mut dh = ly
            .out
            .backward(p, &cache.out_cols, &dout, grad, true)
            .unwrap();
        let mut denc: Vec<Option<Tensor>> = vec![None; l];
        for j in 0..l {
            let dpre = nn::silu_backward(&cache.dec_pre[j], &dh);
            denc[j] = Some(dpre.clone());
            let dxin = ly.dec[j]
                .backward(p, &cache.dec_cols[j], &dpre, grad, true)
                .unwrap();
            dh = nn::upsample2_backward(&dxin);
        }
        let dmid = nn::silu_backward(&cache.mid_pre, &dh);
        let plane = dmid.h * dmid.w;
        let dt: Vec<f64> = (0..dmid.c)
            .map(|ch| dmid.data[ch * plane..(ch + 1) * plane].iter().sum())
            .collect();
        ly.temb.backward(p, &cache.emb, &dt, grad);
        let dxin = ly
            .mid
            .backward(p, &cache.mid_cols, &dmid, grad, true)
            .unwrap();
        let mut carry = nn::avg_pool2_backward(&dxin);
        for j in (0..l).rev() {
            let mut dact = denc[j].take().unwrap();
            dact.add_assign(&carry);
            let dpre = nn::silu_backward(&cache.enc_pre[j], &dact);
            let dx = ly.enc[j].backward(p, &cache.enc_cols[j], &dpre, grad, j > 0);
            if let Some(dx) = dx {
                carry = nn::avg_pool2_backward(&dx);
            }
        }
    }

    /// Per-pixel mean loss and its parameter gradient for one example.
    pub fn loss_and_grad(
        &self,
        x: &[f64],
        s: &[f64],
        eps: &[f64],
        step: usize,
        h: usize,
        w: usize,
        norm: LossNorm,
        grad: &mut [f64],
    ) -> f64 {
        let (pred, cache) = self.forward_cached(x, s, step, h, w);
        let n = pred.len() as f64;
        let mut loss = 0.0;
        let dout: Vec<f64> = pred
            .iter()
            .zip(eps)
            .map(|(p, e)| {
                let r = p - e;
                match norm {
                    LossNorm::L1 => {
                        loss += r.abs();
                        r.signum() * (r != 0.0) as u8 as f64 / n
                    }
                    LossNorm::L2 => {
                        loss += r * r;
                        2.0 * r / n
                    }
                }
            })
            .collect();
        self.backward(&cache, &dout, h, w, grad);
        loss / n
    }

    pub fn save(&self, path: &Path, schedule: &NoiseSchedule) -> Result<(), DiffusionError> {
        let arch = serde_json::json!({
            "channels": self.arch.channels,
            "embed_dim": self.arch.embed_dim,
            "lambda": self.lambda,
            "schedule": { "steps": schedule.steps(), "sigma_max": schedule.sigma_max(), "lambda": schedule.lambda() },
        });
        checkpoint::write(path, "denoiser", arch, &self.params)?;
        Ok(())
    }

    /// Loads a denoiser and the schedule it was trained with.
    pub fn load(path: &Path) -> Result<(Self, NoiseSchedule), DiffusionError> {
        let (header, params) = checkpoint::read(path, "denoiser")?;
        let a = &header.architecture;
        let bad = |what: &str| {
            DiffusionError::InvalidParameter(format!("checkpoint header lacks {what}"))
        };
        let channels: Vec<usize> =
            serde_json::from_value(a["channels"].clone()).map_err(|_| bad("channels"))?;
        let embed_dim = a["embed_dim"].as_u64().ok_or_else(|| bad("embed_dim"))? as usize;
        let lambda = a["lambda"].as_f64().ok_or_else(|| bad("lambda"))?;
        let sch = &a["schedule"];
        let schedule = NoiseSchedule::new(
            sch["steps"].as_u64().ok_or_else(|| bad("schedule.steps"))? as usize,
            sch["sigma_max"]
                .as_f64()
                .ok_or_else(|| bad("schedule.sigma_max"))?,
            sch["lambda"]
                .as_f64()
                .ok_or_else(|| bad("schedule.lambda"))?,
        )?;
        let mut d = Self::zeros(
            DenoiserArch {
                channels,
                embed_dim,
            },
            lambda,
        );
        if params.len() != d.n_params() {
            return Err(DiffusionError::InvalidParameter(format!(
                "checkpoint has {} parameters, architecture needs {}",
                params.len(),
                d.n_params()
            )));
        }
        d.params = params;
        Ok((d, schedule))
    }
}

/// An original image and its rearranged (unperturbed) counterpart.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub x: GrayImage,
    pub s: GrayImage,
}

impl TrainingPair {
    pub fn new(x: GrayImage, s: GrayImage) -> Result<Self, DiffusionError> {
        if (x.width(), x.height()) != (s.width(), s.height()) {
            return Err(DiffusionError::ShapeMismatch {
                expected: (x.height(), x.width()),
                found: (s.height(), s.width()),
            });
        }
        Ok(Self { x, s })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub loss: LossNorm,
    /// Per-step weights γ_1..γ_T; `None` means all ones.
    pub gamma: Option<Vec<f64>>,
    /// Cosine learning-rate decay to zero over the run.
    pub cosine_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch_size: 8,
            optimizer: OptimizerKind::default(),
            loss: LossNorm::L1,
            gamma: None,
            cosine_decay: true,
        }
    }
}

/// Mean training loss per iteration.
pub type LossTrace = Vec<f64>;

/// Minimises `Σ γ_i E|ε̃_φ(x_i, s, i) − ε|` over random pairs and steps.
pub fn train_denoiser(
    mut model: Denoiser,
    pairs: &[TrainingPair],
    schedule: &NoiseSchedule,
    config: &TrainConfig,
    rng: &mut Rng,
    mode: ExecMode,
) -> Result<(Denoiser, LossTrace), DiffusionError> {
    let first = pairs
        .first()
        .ok_or_else(|| DiffusionError::InvalidParameter("no training pairs".into()))?;
    let (w, h) = (first.x.width(), first.x.height());
    for p in pairs {
        for img in [&p.x, &p.s] {
            if (img.width(), img.height()) != (w, h) {
                return Err(DiffusionError::ShapeMismatch {
                    expected: (h, w),
                    found: (img.height(), img.width()),
                });
            }
        }
    }
    model.check_shape(h, w)?;
    if config.batch_size == 0 {
        return Err(DiffusionError::InvalidParameter(
            "batch size must be positive".into(),
        ));
    }
    let steps = schedule.steps();
    let gamma = match &config.gamma {
        Some(g) if g.len() != steps => {
            return Err(DiffusionError::InvalidParameter(format!(
                "gamma has {} weights for {steps} steps",
                g.len()
            )))
        }
        Some(g) => g.clone(),
        None => vec![1.0; steps],
    };
    let mut opt = Optimizer::new(config.optimizer, model.n_params());
    let mut trace = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        let draws: Vec<(usize, usize, u64)> = (0..config.batch_size)
            .map(|_| {
                (
                    rng.random_range(0..pairs.len()),
                    rng.random_range(1..=steps),
                    rng.random(),
                )
            })
            .collect();
        let model_ref = &model;
        let results = exec::map_range(mode, draws.len(), |b| {
            let (pi, step, noise_seed) = draws[b];
            let pair = &pairs[pi];
            let mut nrng = rng_from_seed(noise_seed);
            let (xi, eps) =
                forward_sample(pair.x.pixels(), pair.s.pixels(), step, schedule, &mut nrng)
                    .expect("validated shapes");
            let mut g = vec![0.0; model_ref.n_params()];
            let weight = gamma[step - 1];
            let loss = if weight == 0.0 {
                // zero weight contributes neither loss nor gradient
                0.0
            } else {
                let l = model_ref.loss_and_grad(
                    &xi,
                    pair.s.pixels(),
                    &eps,
                    step,
                    h,
                    w,
                    config.loss,
                    &mut g,
                );
                if weight != 1.0 {
                    g.iter_mut().for_each(|v| *v *= weight);
                }
                weight * l
            };
            (loss, g)
        });
        let mut grad = vec![0.0; model.n_params()];
        let mut loss = 0.0;
        for (l, g) in &results {
            loss += l;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        let bs = config.batch_size as f64;
        loss /= bs;
        grad.iter_mut().for_each(|g| *g /= bs);
        if !loss.is_finite() {
            return Err(DiffusionError::NonFiniteLoss {
                iteration: it,
                loss,
            });
        }
        trace.push(loss);
        let scale = if config.cosine_decay {
            0.5 * (1.0 + (std::f64::consts::PI * it as f64 / config.iterations as f64).cos())
        } else {
            1.0
        };
        opt.step(&mut model.params, &mut grad, scale);
    }
    Ok((model, trace))
}

/// Runs the reverse chain from `x_T = s′ + λz` and returns the unclamped
/// final state.
pub fn restore_raw(
    s_prime: &GrayImage,
    model: &Denoiser,
    schedule: &NoiseSchedule,
    rng: &mut Rng,
    stochastic: bool,
) -> Result<Vec<f64>, DiffusionError> {
    let (h, w) = (s_prime.height(), s_prime.width());
    model.check_shape(h, w)?;
    let s = s_prime.pixels();
    let lambda = schedule.lambda();
    let mut x: Vec<f64> = s
        .iter()
        .map(|v| {
            let z: f64 = StandardNormal.sample(rng);
            v + lambda * z
        })
        .collect();
    for i in (1..=schedule.steps()).rev() {
        let eps = model.predict(&x, s, i, h, w)?;
        let sd = schedule.variance(i).sqrt();
        let score: Vec<f64> = eps.iter().map(|e| -e / sd).collect();
        x = reverse_step(&x, s, &score, i, schedule, rng, stochastic);
    }
    Ok(x)
}

/// Restores a rearranged or perturbed image; output is clamped to `[0, 1]`.
pub fn restore(
    s_prime: &GrayImage,
    model: &Denoiser,
    schedule: &NoiseSchedule,
    rng: &mut Rng,
    stochastic: bool,
) -> Result<GrayImage, DiffusionError> {
    let raw = restore_raw(s_prime, model, schedule, rng, stochastic)?;
    Ok(GrayImage::from_vec_clamped(s_prime.width(), s_prime.height(), raw).expect("input shape"))
}

/// Restores many images, each from its own derived seed.
pub fn restore_batch(
    images: &[GrayImage],
    model: &Denoiser,
    schedule: &NoiseSchedule,
    seed: u64,
    stochastic: bool,
    mode: ExecMode,
) -> Result<Vec<GrayImage>, DiffusionError> {
    exec::map_range(mode, images.len(), |i| {
        let mut rng = rng_from_seed(seed::derive(seed, i as u64));
        restore(&images[i], model, schedule, &mut rng, stochastic)
    })
    .into_iter()
    .collect()
}

/// Writes `iteration,loss` rows.
pub fn write_loss_csv(path: &Path, trace: &[f64]) -> Result<(), DiffusionError> {
    let io = |source| DiffusionError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(f, "iteration,loss").map_err(io)?;
    for (i, l) in trace.iter().enumerate() {
        writeln!(f, "{},{}", i + 1, l).map_err(io)?;
    }
    f.flush().map_err(io)
}

/// Mean of the first and last `window` entries of a loss trace.
pub fn smoothed_endpoints(trace: &[f64], window: usize) -> (f64, f64) {
    let w = window.clamp(1, trace.len().max(1));
    let head = trace.iter().take(w).sum::<f64>() / w as f64;
    let tail = trace.iter().rev().take(w).sum::<f64>() / w as f64;
    (head, tail)
}
