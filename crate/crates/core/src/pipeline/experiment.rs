//! Multi-seed benchmark and the restoration experiment.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    detect_train, evaluate, perturb, phantom_gen, rearranged_pair, restore_run, restore_train, Arm,
    Layout, PairParams, PipelineError, PoolKind, RestoreConfig, RunConfig,
};
use crate::diffusion::{self, Denoiser, TrainingPair};
use crate::metrics::{self, median, MetricsRow};
use crate::perturb::{IntervalPolicy, RectifyParams};
use crate::phantom::{PhantomConfig, PhantomRegistry};
use crate::seed::{self, rng_from_seed};

/// Per-seed evaluation rows of every arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
}

/// Runs every stage for each seed under `root/seed_<s>` and evaluates the
/// requested arms. Restoration stages run only when an arm needs SYN*.
pub fn run_benchmark(
    base: &RunConfig,
    root: &Path,
    seeds: &[u64],
    arms: &[Arm],
) -> Result<Vec<SeedResult>, PipelineError> {
    let mut results = Vec::new();
    for &s in seeds {
        let mut cfg = base.clone();
        cfg.seed = Some(s);
        cfg.run_id = format!("{}_s{s}", base.run_id);
        cfg.out_dir = root.join(format!("seed_{s}"));
        phantom_gen(&cfg)?;
        if arms.iter().any(|a| a.pool().is_some()) {
            perturb(&cfg)?;
        }
        if arms.iter().any(|a| a.pool() == Some(PoolKind::SynStar)) {
            restore_train(&cfg)?;
            restore_run(&cfg)?;
        }
        let mut rows = Vec::new();
        for &arm in arms {
            cfg.arm = arm;
            detect_train(&cfg)?;
            evaluate(&cfg)?;
            let text = std::fs::read_to_string(Layout::new(&cfg).eval(arm).join("report.json"))
                .map_err(|source| PipelineError::Io {
                    path: "report.json".into(),
                    source,
                })?;
            let report: super::ExperimentReport = serde_json::from_str(&text)?;
            rows.extend(report.classes.iter().map(|c| MetricsRow {
                run_id: cfg.run_id.clone(),
                class_id: c.class_id,
                arm: arm.name().into(),
                metrics: c.metrics,
                auc_prob: c.auc_prob,
                auc_energy: c.auc_energy,
            }));
        }
        results.push(SeedResult { seed: s, rows });
    }
    Ok(results)
}

/// Median over seeds of the class-averaged value of `get` for `arm`.
/// Classes where the value is undefined count as 0.
pub fn median_over_seeds(
    results: &[SeedResult],
    arm: Arm,
    get: impl Fn(&MetricsRow) -> Option<f64>,
) -> Option<f64> {
    let per_seed: Vec<f64> = results
        .iter()
        .filter_map(|r| {
            let v: Vec<f64> = r
                .rows
                .iter()
                .filter(|x| x.arm == arm.name())
                .map(|x| get(x).unwrap_or(0.0))
                .collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect();
    median(&per_seed)
}

/// Median over seeds of `get` for one class of `arm`.
pub fn class_median_over_seeds(
    results: &[SeedResult],
    arm: Arm,
    class: u32,
    get: impl Fn(&MetricsRow) -> Option<f64>,
) -> Option<f64> {
    let v: Vec<f64> = results
        .iter()
        .flat_map(|r| r.rows.iter())
        .filter(|x| x.arm == arm.name() && x.class_id == class)
        .filter_map(&get)
        .collect();
    median(&v)
}

/// Settings of the stand-alone restoration experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RestorationExperiment {
    pub seed: u64,
    pub train_pairs: usize,
    pub test_pairs: usize,
    pub phantom: PhantomConfig,
    pub rectify: RectifyParams,
    pub interval: IntervalPolicy,
    pub restore: RestoreConfig,
    pub parallel: bool,
}

impl Default for RestorationExperiment {
    fn default() -> Self {
        Self {
            seed: 1,
            train_pairs: 200,
            test_pairs: 50,
            // straight, centred phantoms: rearrangement is then the only degradation
            phantom: PhantomConfig {
                curved_fraction: 0.0,
                straight_bend_max: 0.2,
                jitter: 0.0,
                ..Default::default()
            },
            rectify: RectifyParams::default(),
            interval: IntervalPolicy::default(),
            restore: RestoreConfig::default(),
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub psnr_rearranged: f64,
    pub psnr_restored: f64,
    pub ssim_rearranged: f64,
    pub ssim_restored: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestorationOutcome {
    pub scores: Vec<PairScore>,
    pub loss_start: f64,
    pub loss_end: f64,
    pub loss_finite: bool,
}

impl RestorationOutcome {
    pub fn mean_psnr_gain(&self) -> f64 {
        self.scores
            .iter()
            .map(|s| s.psnr_restored - s.psnr_rearranged)
            .sum::<f64>()
            / self.scores.len() as f64
    }

    pub fn mean_psnr(&self) -> (f64, f64) {
        let n = self.scores.len() as f64;
        (
            self.scores.iter().map(|s| s.psnr_rearranged).sum::<f64>() / n,
            self.scores.iter().map(|s| s.psnr_restored).sum::<f64>() / n,
        )
    }

    pub fn ssim_improved_fraction(&self) -> f64 {
        self.scores
            .iter()
            .filter(|s| s.ssim_restored > s.ssim_rearranged)
            .count() as f64
            / self.scores.len() as f64
    }
}

/// Trains a denoiser on rearranged normal phantoms and scores restoration of
/// held-out pairs against their originals. The checkpoint and loss trace are
/// written to `out` when given.
pub fn restoration_experiment(
    exp: &RestorationExperiment,
    out: Option<&Path>,
) -> Result<RestorationOutcome, PipelineError> {
    let mode = if exp.parallel {
        crate::exec::ExecMode::Parallel
    } else {
        crate::exec::ExecMode::Sequential
    };
    let registry = PhantomRegistry::new(exp.phantom.clone())?;
    let classes = registry.profiles().len() as u32;
    let pp = PairParams {
        rectify: exp.rectify,
        interval: exp.interval,
        canvas: exp.phantom.canvas,
        background: exp.phantom.background,
    };
    let want = exp.train_pairs + exp.test_pairs;
    let mut pairs: Vec<TrainingPair> = Vec::with_capacity(want);
    let mut k = 0u64;
    while pairs.len() < want {
        if k > 4 * want as u64 + 100 {
            return Err(PipelineError::Missing(format!(
                "only {} of {want} restoration pairs could be built",
                pairs.len()
            )));
        }
        let mut rng = rng_from_seed(seed::derive_tagged(exp.seed, "restoration-pair", k));
        let class = (pairs.len() as u32) % classes;
        let p = registry.generate_normal(class, &mut rng)?;
        if let Ok(pair) = rearranged_pair(&p.image, &pp, &mut rng) {
            pairs.push(pair);
        }
        k += 1;
    }
    let test = pairs.split_off(exp.train_pairs);
    let schedule = exp.restore.schedule()?;
    let mut rng = rng_from_seed(seed::derive_tagged(exp.seed, "restoration-train", 0));
    let model = Denoiser::new(exp.restore.arch.clone(), schedule.lambda(), &mut rng)?;
    let (model, trace) =
        diffusion::train_denoiser(model, &pairs, &schedule, &exp.restore.train, &mut rng, mode)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        model.save(&dir.join("denoiser.ckpt"), &schedule)?;
        diffusion::write_loss_csv(&dir.join("loss.csv"), &trace)?;
    }
    let inputs: Vec<_> = test.iter().map(|p| p.s.clone()).collect();
    let restored = diffusion::restore_batch(
        &inputs,
        &model,
        &schedule,
        seed::derive_tagged(exp.seed, "restoration-run", 0),
        exp.restore.stochastic,
        mode,
    )?;
    let mut scores = Vec::with_capacity(test.len());
    for (p, r) in test.iter().zip(&restored) {
        scores.push(PairScore {
            psnr_rearranged: metrics::psnr(&p.s, &p.x, 1.0)?,
            psnr_restored: metrics::psnr(r, &p.x, 1.0)?,
            ssim_rearranged: metrics::ssim(&p.s, &p.x, 1.0)?,
            ssim_restored: metrics::ssim(r, &p.x, 1.0)?,
        });
    }
    let (loss_start, loss_end) = diffusion::smoothed_endpoints(&trace, 50);
    Ok(RestorationOutcome {
        scores,
        loss_start,
        loss_end,
        loss_finite: trace.iter().all(|l| l.is_finite()),
    })
}
