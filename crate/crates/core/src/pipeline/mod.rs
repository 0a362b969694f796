//! Composable pipeline stages over on-disk artifacts.
//!
//! Layout under `out_dir`:
//!
//! ```text
//! dataset/   manifest.json, summary.json, images/
//! syn/       manifest.json, images/          (perturb)
//! restore/   denoiser.ckpt, loss.csv, summary.json
//! syn_star/  manifest.json, images/          (restore-run)
//! detect/<arm>/class_<c>.ckpt, class_<c>_log.csv
//! eval/<arm>/metrics.csv, predictions.csv, report.json, *.svg
//! ```

mod config;
mod experiment;
pub mod svg;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::*;
pub use experiment::*;

use crate::detector::{self, DetectorError, EnergyDetector, TrainingData};
use crate::diffusion::{self, Denoiser, DiffusionError, TrainingPair};
use crate::exec;
use crate::imaging::{GrayImage, ImagingError, BACKGROUND};
use crate::metrics::{
    self, ClassificationMetrics, Confusion, MetricsError, MetricsRow, ScoredSample,
};
use crate::perturb::{
    self, Chromosome, IntervalPolicy, OpChoice, OpKind, PerturbError, RectifyParams,
    SimulationParams,
};
use crate::phantom::{
    self, DatasetManifest, PhantomError, PhantomRegistry, SampleEntry, Split, MANIFEST_VERSION,
};
use crate::seed::{self, rng_from_seed, Rng};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing artifact: {0}")]
    Missing(String),
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error(transparent)]
    Perturb(#[from] PerturbError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl PipelineError {
    /// 1 for validation failures, 2 for everything that happens at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            _ => 2,
        }
    }
}

/// What a stage wrote, plus non-fatal warnings.
#[derive(Debug, Default)]
pub struct Outcome {
    pub written: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn create_dir(path: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(path).map_err(io_err(path))
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    std::fs::write(path, text).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

/// Artifact paths derived from `out_dir`.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(cfg: &RunConfig) -> Self {
        Self {
            root: cfg.out_dir.clone(),
        }
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset")
    }

    pub fn pool(&self, kind: PoolKind) -> PathBuf {
        self.root.join(match kind {
            PoolKind::Syn => "syn",
            PoolKind::SynStar => "syn_star",
        })
    }

    pub fn restore(&self) -> PathBuf {
        self.root.join("restore")
    }

    pub fn denoiser(&self) -> PathBuf {
        self.restore().join("denoiser.ckpt")
    }

    pub fn detect(&self, arm: Arm) -> PathBuf {
        self.root.join("detect").join(arm.name())
    }

    pub fn detector(&self, arm: Arm, class: u32) -> PathBuf {
        self.detect(arm).join(format!("class_{class}.ckpt"))
    }

    pub fn detector_log(&self, arm: Arm, class: u32) -> PathBuf {
        self.detect(arm).join(format!("class_{class}_log.csv"))
    }

    pub fn eval(&self, arm: Arm) -> PathBuf {
        self.root.join("eval").join(arm.name())
    }
}

fn read_manifest(dir: &Path, what: &str) -> Result<DatasetManifest, PipelineError> {
    let path = dir.join("manifest.json");
    if !path.exists() {
        return Err(PipelineError::Missing(format!(
            "{what} manifest {}",
            path.display()
        )));
    }
    Ok(DatasetManifest::read(&path)?)
}

fn load(dir: &Path, entries: &[&SampleEntry]) -> Result<Vec<GrayImage>, PipelineError> {
    Ok(phantom::load_images(dir, entries)?)
}

fn pool_entries(manifest: &DatasetManifest, class: u32) -> Vec<&SampleEntry> {
    manifest
        .samples
        .iter()
        .filter(|s| s.class == class)
        .collect()
}

// ---------------------------------------------------------------- phantom-gen

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub class_id: u32,
    pub train_normal: usize,
    pub train_abnormal: usize,
    /// Normals per abnormal in the written training split.
    pub imbalance_ratio: f64,
    pub val_normal: usize,
    pub val_abnormal: usize,
    pub test_normal: usize,
    pub test_abnormal: usize,
}

/// Per-class counts recomputed from a manifest.
pub fn summarize(manifest: &DatasetManifest) -> Vec<ClassSummary> {
    manifest
        .classes
        .iter()
        .map(|c| {
            let n = |split, label| manifest.select(c.id, split, label).len();
            let (tn, ta) = (n(Split::Train, 0), n(Split::Train, 1));
            ClassSummary {
                class_id: c.id,
                train_normal: tn,
                train_abnormal: ta,
                imbalance_ratio: if ta == 0 {
                    f64::INFINITY
                } else {
                    tn as f64 / ta as f64
                },
                val_normal: n(Split::Val, 0),
                val_abnormal: n(Split::Val, 1),
                test_normal: n(Split::Test, 0),
                test_abnormal: n(Split::Test, 1),
            }
        })
        .collect()
}

pub fn phantom_gen(cfg: &RunConfig) -> Result<Outcome, PipelineError> {
    cfg.validate()?;
    let layout = Layout::new(cfg);
    let registry = PhantomRegistry::new(cfg.phantom.clone())?;
    let data = phantom::build_dataset(&registry, &cfg.counts, cfg.seed()?, cfg.exec_mode())?;
    let dir = layout.dataset();
    create_dir(&dir)?;
    phantom::write_dataset(&dir, &data.manifest, &data.images)?;
    let summary = dir.join("summary.json");
    write_json(&summary, &summarize(&data.manifest))?;
    Ok(Outcome {
        written: vec![dir.join("manifest.json"), summary],
        warnings: Vec::new(),
    })
}

// ------------------------------------------------------------------- perturb

/// Training normals whose medial axis scores strictly above the MAC
/// threshold, in manifest order, with their scores.
pub struct StraightSources<'a> {
    pub entries: Vec<&'a SampleEntry>,
    pub images: Vec<GrayImage>,
    pub macs: Vec<f64>,
}

/// Scans at most `cap` training normals of `class` and keeps the straight ones.
pub fn straight_sources<'a>(
    cfg: &RunConfig,
    manifest: &'a DatasetManifest,
    dir: &Path,
    class: u32,
    cap: usize,
) -> Result<StraightSources<'a>, PipelineError> {
    let mut entries = manifest.select(class, Split::Train, 0);
    entries.truncate(cap);
    let images = load(dir, &entries)?;
    let rectify = cfg.perturb.rectify;
    let axes = exec::map_slice(cfg.exec_mode(), &images, |img| {
        perturb::chromosome_axis(img, &rectify).ok()
    });
    let candidates: Vec<(usize, _)> = axes
        .into_iter()
        .enumerate()
        .filter_map(|(i, a)| a.map(|(axis, _)| (i, axis)))
        .collect();
    let kept = perturb::filter_by_mac(
        candidates,
        cfg.perturb.mac_threshold,
        cfg.perturb.mac_samples,
    );
    let mut out = StraightSources {
        entries: Vec::new(),
        images: Vec::new(),
        macs: Vec::new(),
    };
    for (i, axis) in kept {
        out.entries.push(entries[i]);
        out.images.push(images[i].clone());
        out.macs
            .push(perturb::mac_score(&axis, cfg.perturb.mac_samples)?);
    }
    Ok(out)
}

pub fn perturb(cfg: &RunConfig) -> Result<Outcome, PipelineError> {
    cfg.validate()?;
    let layout = Layout::new(cfg);
    let data_dir = layout.dataset();
    let manifest = read_manifest(&data_dir, "dataset")?;
    let run_seed = cfg.seed()?;
    let mode = cfg.exec_mode();
    let mut outcome = Outcome::default();

    let cap = cfg.perturb.source_cap;
    let all_classes: Vec<u32> = manifest.classes.iter().map(|c| c.id).collect();
    let mut sources = BTreeMap::new();
    for &c in &all_classes {
        sources.insert(c, straight_sources(cfg, &manifest, &data_dir, c, cap)?);
    }
    let donors: Vec<Chromosome<'_>> = sources
        .iter()
        .flat_map(|(&class, s)| {
            s.entries
                .iter()
                .zip(&s.images)
                .map(move |(e, image)| Chromosome {
                    id: &e.id,
                    class,
                    image,
                })
        })
        .collect();
    let params = SimulationParams {
        rectify: cfg.perturb.rectify,
        interval: cfg.perturb.interval,
        mac_samples: cfg.perturb.mac_samples,
    };
    let canvas = cfg.perturb.canvas;

    let mut samples = Vec::new();
    let mut images = Vec::new();
    for class in cfg.class_ids() {
        let src = sources
            .get(&class)
            .ok_or_else(|| PipelineError::Missing(format!("class {class} in dataset")))?;
        let wanted = cfg.perturb.pool_per_class;
        // each source contributes at most one image per operator kind
        let n = wanted.min(4 * src.entries.len());
        if n < wanted {
            outcome.warnings.push(format!(
                "class {class}: only {} straight chromosomes (MAC > {}), generating {n} of {wanted}",
                src.entries.len(),
                cfg.perturb.mac_threshold
            ));
        }
        if n == 0 {
            continue;
        }
        let mut order: Vec<usize> = (0..src.entries.len()).collect();
        order.shuffle(&mut rng_from_seed(seed::derive_tagged(
            run_seed,
            "perturb-order",
            class as u64,
        )));
        let results = exec::map_range(mode, n, |k| {
            let kind = OpKind::ALL[k % 4];
            let base = seed::derive_tagged(run_seed, "perturb", ((class as u64) << 32) | k as u64);
            let mut last = None;
            for attempt in 0..4usize {
                let i = order[(k / 4 + attempt * 7) % order.len()];
                let source = Chromosome {
                    id: &src.entries[i].id,
                    class,
                    image: &src.images[i],
                };
                let sample_seed = seed::derive(base, attempt as u64);
                let made = perturb::simulate_abnormal(
                    source,
                    &OpChoice::Kind(kind),
                    &donors,
                    &params,
                    sample_seed,
                )
                .map_err(PipelineError::from)
                .and_then(|(img, record)| {
                    let stats = background_stats(source.image, &params.rectify)?;
                    let mut rng = rng_from_seed(seed::derive_tagged(sample_seed, "canvas", 0));
                    Ok((compose_on_background(&img, canvas, stats, &mut rng), record))
                });
                match made {
                    Ok((img, record)) => return Ok((img, record, sample_seed)),
                    Err(e) => last = Some(e),
                }
            }
            Err(last.expect("at least one attempt"))
        });
        for (k, r) in results.into_iter().enumerate() {
            match r {
                Ok((img, record, sample_seed)) => {
                    debug_assert!(record.source_mac > cfg.perturb.mac_threshold);
                    let id = format!("c{class}_syn_{k:05}");
                    samples.push(SampleEntry {
                        file: format!("images/{id}.pgm"),
                        id,
                        class,
                        label: 1,
                        split: Split::Syn,
                        op: Some(record.op.kind()),
                        seed: sample_seed,
                        record: Some(record),
                    });
                    images.push(img);
                }
                Err(e) => outcome
                    .warnings
                    .push(format!("class {class}: synthetic {k} skipped: {e}")),
            }
        }
    }
    let dir = layout.pool(PoolKind::Syn);
    create_dir(&dir)?;
    let out = DatasetManifest {
        version: MANIFEST_VERSION,
        classes: manifest.classes.clone(),
        samples,
    };
    phantom::write_dataset(&dir, &out, &images)?;
    outcome.written.push(dir.join("manifest.json"));
    Ok(outcome)
}

// ------------------------------------------------------------- restoration

/// Mean and standard deviation of the pixels outside the chromosome mask
/// dilated by two pixels.
pub fn background_stats(
    image: &GrayImage,
    rectify: &RectifyParams,
) -> Result<(f64, f64), PipelineError> {
    let near = perturb::chromosome_mask(image, rectify)?.dilate(2);
    let bg: Vec<f64> = image
        .pixels()
        .iter()
        .zip(near.bits())
        .filter(|(_, &m)| !m)
        .map(|(&v, _)| v)
        .collect();
    if bg.len() < 2 {
        return Ok((BACKGROUND, 0.0));
    }
    let mean = bg.iter().sum::<f64>() / bg.len() as f64;
    let var = bg.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (bg.len() - 1) as f64;
    Ok((mean, var.sqrt()))
}

/// Centres `tight` on a `canvas x canvas` frame whose remaining pixels are
/// drawn from `N(mean, std²)`, so the frame matches the source background.
pub fn compose_on_background(
    tight: &GrayImage,
    canvas: usize,
    (mean, std): (f64, f64),
    rng: &mut Rng,
) -> GrayImage {
    let noise = Normal::new(mean, std.max(0.0)).expect("finite background statistics");
    let pixels: Vec<f64> = (0..canvas * canvas).map(|_| noise.sample(rng)).collect();
    let base = GrayImage::from_vec_clamped(canvas, canvas, pixels).expect("canvas shape");
    compose_over(tight, &base)
}

/// Pastes `tight` centred onto a copy of `base`.
pub fn compose_over(tight: &GrayImage, base: &GrayImage) -> GrayImage {
    let mut out = base.clone();
    let off_r = (base.height() as i64 - tight.height() as i64).div_euclid(2);
    let off_c = (base.width() as i64 - tight.width() as i64).div_euclid(2);
    for r in 0..tight.height() {
        for c in 0..tight.width() {
            let (rr, cc) = (r as i64 + off_r, c as i64 + off_c);
            if (0..base.height() as i64).contains(&rr) && (0..base.width() as i64).contains(&cc) {
                out.set(rr as usize, cc as usize, tight.get(r, c));
            }
        }
    }
    out
}

/// Shifts `image` by whole pixels so the bounding box of its chromosome
/// mask is centred on a `canvas x canvas` frame, matching where a
/// rearranged image is placed by `compose_on_background`.
pub fn align_to_canvas(
    image: &GrayImage,
    rectify: &RectifyParams,
    canvas: usize,
    fill: f64,
) -> Result<GrayImage, PipelineError> {
    let mask = perturb::chromosome_mask(image, rectify)?;
    let fg = mask.foreground();
    let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
    for &(r, c) in &fg {
        r0 = r0.min(r);
        r1 = r1.max(r);
        c0 = c0.min(c);
        c1 = c1.max(c);
    }
    let (h, w) = (r1 - r0 + 1, c1 - c0 + 1);
    let off_r = (canvas as i64 - h as i64).div_euclid(2);
    let off_c = (canvas as i64 - w as i64).div_euclid(2);
    Ok(image.crop(r0 as i64 - off_r, c0 as i64 - off_c, canvas, canvas, fill))
}

/// Inputs for building (original, rearranged) pairs.
#[derive(Debug, Clone, Copy)]
pub struct PairParams {
    pub rectify: RectifyParams,
    pub interval: IntervalPolicy,
    pub canvas: usize,
    /// Value used where the aligned original is padded.
    pub background: f64,
}

/// One training pair from a normal chromosome: the target is the original
/// aligned to the canvas, the degraded input its rearrangement. No
/// perturbation operator is involved.
pub fn rearranged_pair(
    image: &GrayImage,
    p: &PairParams,
    rng: &mut Rng,
) -> Result<TrainingPair, PipelineError> {
    let (s, _) = perturb::rearrange(image, &p.rectify, &p.interval, rng)?;
    let x = align_to_canvas(image, &p.rectify, p.canvas, p.background)?;
    // the rearrangement sits on the original's own background, with fresh
    // noise only where the original chromosome was; background noise that
    // differs between x and s cannot be predicted and would teach the
    // denoiser to smooth it away
    let (mean, std) = background_stats(image, &p.rectify)?;
    let noise = Normal::new(mean, std.max(0.0)).expect("finite background statistics");
    let near = perturb::chromosome_mask(&x, &p.rectify)?.dilate(2);
    let base: Vec<f64> = x
        .pixels()
        .iter()
        .zip(near.bits())
        .map(|(&v, &m)| if m { noise.sample(rng) } else { v })
        .collect();
    let base = GrayImage::from_vec_clamped(p.canvas, p.canvas, base).expect("canvas shape");
    Ok(TrainingPair::new(x, compose_over(&s, &base))?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestoreSummary {
    pub train_pairs: usize,
    pub pairs_per_class: BTreeMap<u32, usize>,
    pub loss_start: f64,
    pub loss_end: f64,
    pub holdout_pairs: usize,
    pub psnr_rearranged: Option<f64>,
    pub psnr_restored: Option<f64>,
}

pub fn restore_train(cfg: &RunConfig) -> Result<Outcome, PipelineError> {
    cfg.validate()?;
    let layout = Layout::new(cfg);
    let data_dir = layout.dataset();
    let manifest = read_manifest(&data_dir, "dataset")?;
    let run_seed = cfg.seed()?;
    let mode = cfg.exec_mode();
    let rc = &cfg.restore;
    let pp = PairParams {
        rectify: cfg.perturb.rectify,
        interval: cfg.perturb.interval,
        canvas: cfg.perturb.canvas,
        background: cfg.phantom.background,
    };
    let classes = cfg.class_ids();
    let holdout = cfg.restore.holdout_pairs;
    let want = rc.train_pairs + holdout;
    let per_class = want.div_ceil(classes.len());

    // candidates interleaved across classes so every prefix is balanced
    let mut per: Vec<Vec<(u32, GrayImage, u64)>> = Vec::new();
    for &class in &classes {
        let src = straight_sources(cfg, &manifest, &data_dir, class, per_class * 2)?;
        per.push(
            src.images
                .into_iter()
                .zip(src.entries)
                .map(|(img, e)| (class, img, e.seed))
                .collect(),
        );
    }
    let mut candidates = Vec::new();
    for k in 0..per.iter().map(Vec::len).max().unwrap_or(0) {
        for list in &per {
            if let Some(c) = list.get(k) {
                candidates.push(c);
            }
        }
    }
    let built = exec::map_range(mode, candidates.len(), |i| {
        let (class, img, sample_seed) = candidates[i];
        let mut rng = rng_from_seed(seed::derive_tagged(run_seed, "restore-pair", *sample_seed));
        rearranged_pair(img, &pp, &mut rng)
            .ok()
            .map(|p| (*class, p))
    });
    let mut pairs: Vec<(u32, TrainingPair)> = built.into_iter().flatten().collect();
    pairs.truncate(want);
    if pairs.is_empty() {
        return Err(PipelineError::Missing(
            "no straight training normals to build restoration pairs".into(),
        ));
    }
    let mut outcome = Outcome::default();
    let n_train = rc.train_pairs.min(pairs.len());
    if n_train < rc.train_pairs {
        outcome.warnings.push(format!(
            "only {n_train} restoration pairs available of {}",
            rc.train_pairs
        ));
    }
    let held: Vec<TrainingPair> = pairs.split_off(n_train).into_iter().map(|p| p.1).collect();
    let mut pairs_per_class = BTreeMap::new();
    for (c, _) in &pairs {
        *pairs_per_class.entry(*c).or_insert(0) += 1;
    }
    let train: Vec<TrainingPair> = pairs.into_iter().map(|p| p.1).collect();

    let schedule = rc.schedule()?;
    let mut rng = rng_from_seed(seed::derive_tagged(run_seed, "restore-train", 0));
    let model = Denoiser::new(rc.arch.clone(), schedule.lambda(), &mut rng)?;
    let (model, trace) =
        diffusion::train_denoiser(model, &train, &schedule, &rc.train, &mut rng, mode)?;

    let (psnr_rearranged, psnr_restored) = if held.is_empty() {
        (None, None)
    } else {
        let inputs: Vec<GrayImage> = held.iter().map(|p| p.s.clone()).collect();
        let out = diffusion::restore_batch(
            &inputs,
            &model,
            &schedule,
            seed::derive_tagged(run_seed, "restore-holdout", 0),
            rc.stochastic,
            mode,
        )?;
        let mut before = 0.0;
        let mut after = 0.0;
        for (p, r) in held.iter().zip(&out) {
            before += metrics::psnr(&p.s, &p.x, 1.0)?;
            after += metrics::psnr(r, &p.x, 1.0)?;
        }
        (
            Some(before / held.len() as f64),
            Some(after / held.len() as f64),
        )
    };
    let dir = layout.restore();
    create_dir(&dir)?;
    model.save(&layout.denoiser(), &schedule)?;
    let loss = dir.join("loss.csv");
    diffusion::write_loss_csv(&loss, &trace)?;
    let (loss_start, loss_end) = diffusion::smoothed_endpoints(&trace, 50);
    let summary = RestoreSummary {
        train_pairs: train.len(),
        pairs_per_class,
        loss_start,
        loss_end,
        holdout_pairs: held.len(),
        psnr_rearranged,
        psnr_restored,
    };
    let summary_path = dir.join("summary.json");
    write_json(&summary_path, &summary)?;
    outcome
        .written
        .extend([layout.denoiser(), loss, summary_path]);
    Ok(outcome)
}

pub fn restore_run(cfg: &RunConfig) -> Result<Outcome, PipelineError> {
    cfg.validate()?;
    let layout = Layout::new(cfg);
    let syn_dir = layout.pool(PoolKind::Syn);
    let syn = read_manifest(&syn_dir, "synthetic pool")?;
    let ckpt = layout.denoiser();
    if !ckpt.exists() {
        return Err(PipelineError::Missing(format!(
            "denoiser checkpoint {}",
            ckpt.display()
        )));
    }
    let (model, schedule) = Denoiser::load(&ckpt)?;
    let classes = cfg.class_ids();
    let entries: Vec<&SampleEntry> = syn
        .samples
        .iter()
        .filter(|s| classes.contains(&s.class))
        .collect();
    let inputs = load(&syn_dir, &entries)?;
    let restored = diffusion::restore_batch(
        &inputs,
        &model,
        &schedule,
        seed::derive_tagged(cfg.seed()?, "restore-run", 0),
        cfg.restore.stochastic,
        cfg.exec_mode(),
    )?;
    let samples = entries
        .iter()
        .map(|e| {
            let id = e.id.replacen("_syn_", "_synstar_", 1);
            SampleEntry {
                file: format!("images/{id}.pgm"),
                id,
                split: Split::SynStar,
                ..(*e).clone()
            }
        })
        .collect();
    let dir = layout.pool(PoolKind::SynStar);
    create_dir(&dir)?;
    let out = DatasetManifest {
        version: MANIFEST_VERSION,
        classes: syn.classes.clone(),
        samples,
    };
    phantom::write_dataset(&dir, &out, &restored)?;
    Ok(Outcome {
        written: vec![dir.join("manifest.json")],
        warnings: Vec::new(),
    })
}

// ----------------------------------------------------------------- detectors

fn load_pool(layout: &Layout, arm: Arm, class: u32) -> Result<Vec<GrayImage>, PipelineError> {
    match arm.pool() {
        None => Ok(Vec::new()),
        Some(kind) => {
            let dir = layout.pool(kind);
            let manifest = read_manifest(
                &dir,
                &format!("{} pool for arm {}", dir.display(), arm.name()),
            )?;
            let entries = pool_entries(&manifest, class);
            if entries.is_empty() {
                return Err(PipelineError::Missing(format!(
                    "{} has no samples of class {class}",
                    dir.display()
                )));
            }
            load(&dir, &entries)
        }
    }
}

pub fn detect_train(cfg: &RunConfig) -> Result<Outcome, PipelineError> {
    cfg.validate()?;
    let layout = Layout::new(cfg);
    let data_dir = layout.dataset();
    let manifest = read_manifest(&data_dir, "dataset")?;
    let arm = cfg.arm;
    let run_seed = cfg.seed()?;
    let dir = layout.detect(arm);
    create_dir(&dir)?;
    let mut outcome = Outcome::default();
    for class in cfg.class_ids() {
        let normals = load(&data_dir, &manifest.select(class, Split::Train, 0))?;
        let abnormals = load(&data_dir, &manifest.select(class, Split::Train, 1))?;
        let pool = load_pool(&layout, arm, class)?;
        let data = TrainingData {
            normals: &normals,
            abnormals: &abnormals,
            pool: &pool,
        };
        let mut rng = rng_from_seed(seed::derive_tagged(
            run_seed,
            &format!("detect-{}", arm.name()),
            class as u64,
        ));
        let mut model = EnergyDetector::new(cfg.detector.arch.clone(), &mut rng)?;
        let eas = &cfg.detector.eas;
        // start between the margins so the hinge terms pull normals and
        // abnormals apart instead of shifting every energy the same way
        model.set_bias_energy(0.5 * (eas.m_n + eas.m_ab), eas.temperature);
        let (model, logs, _) = detector::eas_train(
            model,
            &data,
            arm.pool_use(),
            &cfg.detector.eas,
            &mut rng,
            cfg.exec_mode(),
        )?;
        let (ckpt, log) = (layout.detector(arm, class), layout.detector_log(arm, class));
        model.save(&ckpt)?;
        detector::write_log_csv(&log, &logs)?;
        outcome.written.extend([ckpt, log]);
    }
    Ok(outcome)
}

// ---------------------------------------------------------------- evaluation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class_id: u32,
    pub test_normal: usize,
    pub test_abnormal: usize,
    pub metrics: ClassificationMetrics,
    pub auc_prob: Option<f64>,
    pub auc_energy: Option<f64>,
    pub mean_energy_normal: f64,
    pub mean_energy_abnormal: f64,
    pub mean_energy_synthetic: Option<f64>,
    pub training_log: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// Classes with a defined value.
    pub n: usize,
    pub mean: Option<f64>,
    /// Sample standard deviation across classes.
    pub std: Option<f64>,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = (n > 0).then(|| values.iter().sum::<f64>() / n as f64);
        let std = mean
            .filter(|_| n > 1)
            .map(|m| (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
        Self { n, mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub run_id: String,
    pub arm: Arm,
    pub classes: Vec<ClassReport>,
    pub aggregate: BTreeMap<String, Aggregate>,
    /// Loss traces relative to the output directory.
    pub restore_loss: Option<String>,
}

/// One test prediction as written to `predictions.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub class_id: u32,
    pub sample_id: String,
    pub label: u8,
    pub pred: u8,
    pub p_abnormal: f64,
    pub energy: f64,
    pub logits: [f64; 2],
}

pub const PREDICTIONS_CSV_HEADER: &str =
    "run_id,class_id,arm,sample_id,label,pred,p_abnormal,energy,logit0,logit1";

/// Metrics of one class from its predictions.
pub fn metrics_from_predictions(
    rows: &[&PredictionRow],
) -> (ClassificationMetrics, Option<f64>, Option<f64>) {
    let truth: Vec<u8> = rows.iter().map(|r| r.label).collect();
    let pred: Vec<u8> = rows.iter().map(|r| r.pred).collect();
    let m = metrics::classification_metrics(&Confusion::from_labels(&truth, &pred));
    let scored = |f: &dyn Fn(&PredictionRow) -> f64| -> Option<f64> {
        let s: Vec<ScoredSample> = rows
            .iter()
            .map(|r| ScoredSample {
                score: f(r),
                label: r.label,
            })
            .collect();
        metrics::auc(&s).ok()
    };
    (m, scored(&|r| r.p_abnormal), scored(&|r| r.energy))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn relative(root: &Path, path: &Path) -> String {
    path.strip_prefix(root)
        .unwrap_or(path)
        .display()
        .to_string()
}

pub fn evaluate(cfg: &RunConfig) -> Result<Outcome, PipelineError> {
    cfg.validate()?;
    let layout = Layout::new(cfg);
    let data_dir = layout.dataset();
    let manifest = read_manifest(&data_dir, "dataset")?;
    let arm = cfg.arm;
    let t = cfg.detector.eas.temperature;
    let mode = cfg.exec_mode();
    let dir = layout.eval(arm);
    create_dir(&dir)?;
    let mut outcome = Outcome::default();

    let mut predictions: Vec<PredictionRow> = Vec::new();
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for class in cfg.class_ids() {
        let ckpt = layout.detector(arm, class);
        if !ckpt.exists() {
            return Err(PipelineError::Missing(format!(
                "detector {}",
                ckpt.display()
            )));
        }
        let model = EnergyDetector::load(&ckpt)?;
        let entries: Vec<&SampleEntry> = manifest
            .samples
            .iter()
            .filter(|s| s.class == class && s.split == Split::Test)
            .collect();
        if entries.is_empty() {
            return Err(PipelineError::Missing(format!(
                "test split of class {class}"
            )));
        }
        let images = load(&data_dir, &entries)?;
        let preds: Vec<_> = exec::try_map_slice(mode, &images, |img| model.predict(img, t))?;
        let start = predictions.len();
        for (e, p) in entries.iter().zip(&preds) {
            predictions.push(PredictionRow {
                class_id: class,
                sample_id: e.id.clone(),
                label: e.label,
                pred: p.label,
                p_abnormal: p.p_abnormal,
                energy: p.energy,
                logits: p.logits,
            });
        }
        let class_rows: Vec<&PredictionRow> = predictions[start..].iter().collect();
        let (m, auc_prob, auc_energy) = metrics_from_predictions(&class_rows);
        let e_of = |label| -> Vec<f64> {
            class_rows
                .iter()
                .filter(|r| r.label == label)
                .map(|r| r.energy)
                .collect()
        };
        let (en, ea) = (e_of(0), e_of(1));
        let synthetic = match arm.pool() {
            None => None,
            Some(_) => {
                let pool = load_pool(&layout, arm, class)?;
                let e: Vec<f64> = exec::try_map_slice(mode, &pool, |img| {
                    model.predict(img, t).map(|p| p.energy)
                })?;
                Some(e)
            }
        };
        let mut groups: Vec<(&str, &[f64])> = vec![("normal", &en), ("real abnormal", &ea)];
        if let Some(s) = &synthetic {
            groups.push(("synthetic", s));
        }
        let hist = dir.join(format!("energy_class_{class}.svg"));
        write_text(
            &hist,
            &svg::histogram(
                &format!("Energy scores, class {class} ({})", arm.name()),
                "energy",
                &groups,
                30,
            ),
        )?;
        let scores: Vec<f64> = class_rows.iter().map(|r| r.energy).collect();
        let labels: Vec<u8> = class_rows.iter().map(|r| r.label).collect();
        let roc = dir.join(format!("roc_class_{class}.svg"));
        write_text(
            &roc,
            &svg::roc(
                &format!("Energy ROC, class {class} ({})", arm.name()),
                &scores,
                &labels,
            ),
        )?;
        outcome.written.extend([hist, roc]);

        rows.push(MetricsRow {
            run_id: cfg.run_id.clone(),
            class_id: class,
            arm: arm.name().into(),
            metrics: m,
            auc_prob,
            auc_energy,
        });
        reports.push(ClassReport {
            class_id: class,
            test_normal: en.len(),
            test_abnormal: ea.len(),
            metrics: m,
            auc_prob,
            auc_energy,
            mean_energy_normal: mean(&en),
            mean_energy_abnormal: mean(&ea),
            mean_energy_synthetic: synthetic.as_deref().filter(|s| !s.is_empty()).map(mean),
            training_log: relative(&layout.root, &layout.detector_log(arm, class)),
        });
    }

    let metrics_path = dir.join("metrics.csv");
    write_text(&metrics_path, &metrics::metrics_csv(&rows))?;
    let mut pred_csv = String::from(PREDICTIONS_CSV_HEADER);
    pred_csv.push('\n');
    for p in &predictions {
        pred_csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            cfg.run_id,
            p.class_id,
            arm.name(),
            p.sample_id,
            p.label,
            p.pred,
            p.p_abnormal,
            p.energy,
            p.logits[0],
            p.logits[1]
        ));
    }
    let pred_path = dir.join("predictions.csv");
    write_text(&pred_path, &pred_csv)?;

    let report = ExperimentReport {
        run_id: cfg.run_id.clone(),
        arm,
        aggregate: aggregate(&rows),
        classes: reports,
        restore_loss: Some(layout.restore().join("loss.csv"))
            .filter(|p| p.exists())
            .map(|p| relative(&layout.root, &p)),
    };
    let report_path = dir.join("report.json");
    write_json(&report_path, &report)?;
    outcome
        .written
        .extend([metrics_path, pred_path, report_path]);
    Ok(outcome)
}

/// Unweighted mean and standard deviation of each metric over classes.
pub fn aggregate(rows: &[MetricsRow]) -> BTreeMap<String, Aggregate> {
    type Get = fn(&MetricsRow) -> Option<f64>;
    let fields: [(&str, Get); 8] = [
        ("acc", |r| r.metrics.acc),
        ("sen", |r| r.metrics.sen),
        ("spe", |r| r.metrics.spe),
        ("pre_ab", |r| r.metrics.pre_ab),
        ("pre_n", |r| r.metrics.pre_n),
        ("f1", |r| r.metrics.f1),
        ("auc_prob", |r| r.auc_prob),
        ("auc_energy", |r| r.auc_energy),
    ];
    fields
        .iter()
        .map(|(name, get)| {
            let v: Vec<f64> = rows.iter().filter_map(get).collect();
            (name.to_string(), Aggregate::of(&v))
        })
        .collect()
}
