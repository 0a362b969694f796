use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::PipelineError;
use crate::detector::{ClassifierArch, EasConfig, PoolUse};
use crate::diffusion::{
    DenoiserArch, NoiseSchedule, TrainConfig, DEFAULT_LAMBDA, DEFAULT_SIGMA_MAX, DEFAULT_STEPS,
};
use crate::exec::ExecMode;
use crate::perturb::{IntervalPolicy, RectifyParams, DEFAULT_MAC_SAMPLES};
use crate::phantom::{DatasetCounts, PhantomConfig};

/// Detector training arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Baseline,
    Syn,
    SynEas,
    SynStar,
    SynStarEas,
}

/// Which synthetic pool an arm draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Syn,
    SynStar,
}

impl Arm {
    pub const ALL: [Arm; 5] = [
        Arm::Baseline,
        Arm::Syn,
        Arm::SynEas,
        Arm::SynStar,
        Arm::SynStarEas,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Baseline => "baseline",
            Arm::Syn => "syn",
            Arm::SynEas => "syn_eas",
            Arm::SynStar => "syn_star",
            Arm::SynStarEas => "syn_star_eas",
        }
    }

    pub fn pool(self) -> Option<PoolKind> {
        match self {
            Arm::Baseline => None,
            Arm::Syn | Arm::SynEas => Some(PoolKind::Syn),
            Arm::SynStar | Arm::SynStarEas => Some(PoolKind::SynStar),
        }
    }

    pub fn pool_use(self) -> PoolUse {
        match self {
            Arm::Baseline => PoolUse::None,
            Arm::Syn | Arm::SynStar => PoolUse::Static,
            Arm::SynEas | Arm::SynStarEas => PoolUse::Adaptive,
        }
    }
}

impl FromStr for Arm {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Arm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| PipelineError::Config(format!("unknown arm '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbConfig {
    /// Synthetic abnormals generated per class.
    pub pool_per_class: usize,
    /// Sources must score strictly above this.
    pub mac_threshold: f64,
    pub mac_samples: usize,
    pub rectify: RectifyParams,
    pub interval: IntervalPolicy,
    /// Side of the square canvas synthetic images are centred on.
    pub canvas: usize,
    /// Training normals scanned per class when looking for straight sources.
    pub source_cap: usize,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            pool_per_class: 200,
            mac_threshold: 85.0,
            mac_samples: DEFAULT_MAC_SAMPLES,
            rectify: RectifyParams::default(),
            interval: IntervalPolicy::default(),
            canvas: 64,
            source_cap: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RestoreConfig {
    pub steps: usize,
    pub sigma_max: f64,
    pub lambda: f64,
    pub arch: DenoiserArch,
    pub train: TrainConfig,
    /// Number of (original, rearranged) normal pairs used for training.
    pub train_pairs: usize,
    /// Extra pairs restored after training to log the PSNR change.
    pub holdout_pairs: usize,
    /// Inject noise during reverse sampling.
    pub stochastic: bool,
}

impl Default for RestoreConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            sigma_max: DEFAULT_SIGMA_MAX,
            lambda: DEFAULT_LAMBDA,
            arch: DenoiserArch::default(),
            train: TrainConfig {
                iterations: 2000,
                optimizer: crate::nn::OptimizerKind::adam(3e-3),
                ..Default::default()
            },
            train_pairs: 200,
            holdout_pairs: 20,
            stochastic: false,
        }
    }
}

impl RestoreConfig {
    pub fn schedule(&self) -> Result<NoiseSchedule, PipelineError> {
        Ok(NoiseSchedule::new(self.steps, self.sigma_max, self.lambda)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub arch: ClassifierArch,
    pub eas: EasConfig,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            arch: ClassifierArch::default(),
            eas: EasConfig {
                epochs: 20,
                warmup: 4,
                interval: 4,
                ..Default::default()
            },
        }
    }
}

/// Complete description of a run; every stage reads the parts it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub run_id: String,
    pub seed: Option<u64>,
    /// Root of all artifacts; relative paths resolve against the config
    /// file's directory.
    pub out_dir: PathBuf,
    /// Classes to process; `None` means every registered class.
    pub classes: Option<Vec<u32>>,
    pub arm: Arm,
    /// Use the data-parallel executor (results are identical either way).
    pub parallel: bool,
    pub phantom: PhantomConfig,
    pub counts: DatasetCounts,
    pub perturb: PerturbConfig,
    pub restore: RestoreConfig,
    pub detector: DetectorConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run_id: "run".into(),
            seed: None,
            out_dir: PathBuf::from("out"),
            classes: None,
            arm: Arm::SynStarEas,
            parallel: true,
            phantom: PhantomConfig::default(),
            counts: DatasetCounts::default(),
            perturb: PerturbConfig::default(),
            restore: RestoreConfig::default(),
            detector: DetectorConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads a JSON config; relative `out_dir` is anchored at the file.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg = Self::from_json(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = cfg;
        if cfg.out_dir.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        Ok(cfg)
    }

    /// Parses a possibly partial document. Values are merged key by key
    /// onto the defaults, so `{"restore": {"train": {"iterations": 10}}}`
    /// keeps every other restoration default.
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let user: Value = serde_json::from_str(text)?;
        let mut merged = serde_json::to_value(RunConfig::default())?;
        merge(&mut merged, user);
        serde_json::from_value(merged)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn seed(&self) -> Result<u64, PipelineError> {
        self.seed
            .ok_or_else(|| PipelineError::Config("a seed is required (config or --seed)".into()))
    }

    pub fn exec_mode(&self) -> ExecMode {
        if self.parallel {
            ExecMode::Parallel
        } else {
            ExecMode::Sequential
        }
    }

    pub fn class_ids(&self) -> Vec<u32> {
        match &self.classes {
            Some(c) => c.clone(),
            None => (0..self.phantom.classes as u32).collect(),
        }
    }

    /// Checks everything that can be checked without touching the disk.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        self.seed()?;
        if self.run_id.is_empty() || self.run_id.contains([',', '\n', '/']) {
            return bad(format!(
                "run_id '{}' must be non-empty without commas or slashes",
                self.run_id
            ));
        }
        if self.phantom.classes == 0 {
            return bad("at least one phantom class is required".into());
        }
        if let Some(cs) = &self.classes {
            if cs.is_empty() {
                return bad("class list is empty".into());
            }
            if let Some(c) = cs.iter().find(|&&c| c as usize >= self.phantom.classes) {
                return bad(format!(
                    "class {c} is not registered ({} classes)",
                    self.phantom.classes
                ));
            }
        }
        if self.phantom.canvas != self.perturb.canvas {
            return bad("phantom and perturbation canvases differ".into());
        }
        if !(self.phantom.noise_std >= 0.0) || !(0.0..=1.0).contains(&self.phantom.background) {
            return bad("phantom noise must be non-negative and background within [0, 1]".into());
        }
        if !(self.counts.imbalance_ratio > 0.0) {
            return bad(format!(
                "imbalance ratio must be positive, got {}",
                self.counts.imbalance_ratio
            ));
        }
        if self.counts.train_normal == 0
            || self.counts.test_normal == 0
            || self.counts.test_abnormal == 0
        {
            return bad("train and test counts must be positive".into());
        }
        if !(self.perturb.rectify.threshold > 0.0 && self.perturb.rectify.threshold < 1.0) {
            return bad(format!(
                "binarization threshold {} outside (0, 1)",
                self.perturb.rectify.threshold
            ));
        }
        if self.perturb.mac_samples < 2 {
            return bad("MAC needs at least two samples".into());
        }
        self.restore.schedule()?;
        let m = 1usize << self.restore.arch.channels.len();
        if self.restore.arch.channels.is_empty() || self.perturb.canvas % m != 0 {
            return bad(format!(
                "canvas {} not divisible by denoiser multiple {m}",
                self.perturb.canvas
            ));
        }
        let dm = self.detector.arch.size_multiple();
        if self.detector.arch.channels.is_empty()
            || self.detector.arch.grid == 0
            || self.perturb.canvas % dm != 0
        {
            return bad(format!(
                "canvas {} not divisible by classifier multiple {dm}",
                self.perturb.canvas
            ));
        }
        if self.restore.train.batch_size == 0 || self.restore.train_pairs == 0 {
            return bad("restoration batch size and pair count must be positive".into());
        }
        self.detector
            .eas
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(())
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
