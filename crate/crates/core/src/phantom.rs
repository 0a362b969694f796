//! Procedural banded chromosome phantoms.
//!
//! Each class owns a 1-D band template (intensity plus a centromere
//! constriction channel) generated from a fixed registry seed. A phantom is
//! that template swept along a circular-arc axis with a tapered width,
//! blurred and corrupted with Gaussian noise. Real abnormalities are edits of
//! the template applied before rendering, so they carry no rearrangement
//! artifacts.

use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{self, ExecMode};
use crate::imaging::{pgm, BinaryMask, GrayImage, MedialAxis};
use crate::perturb::{OpKind, OpRecord, PerturbRecord};
use crate::seed::{self, rng_from_seed, Rng};

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("unknown class {0}")]
    UnknownClass(u32),
    #[error("invalid dataset request: {0}")]
    InvalidRequest(String),
    #[error("could not build distinguishable templates for {0} classes")]
    Registry(usize),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}

pub const TEMPLATE_SAMPLES: usize = 96;

/// Blurred coverage above which a pixel belongs to the ground-truth mask.
pub const MASK_COVERAGE: f64 = 0.12;

/// Band template of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandProfile {
    pub class: u32,
    /// Chromosome intensity along the normalised axis position.
    pub intensity: Vec<f64>,
    /// Width multiplier along the axis (centromere constriction < 1).
    pub constriction: Vec<f64>,
    pub length_range: (f64, f64),
    pub width_range: (f64, f64),
}

impl BandProfile {
    /// Linear interpolation of the intensity template at `u` in `[0, 1]`.
    pub fn intensity_at(&self, u: f64) -> f64 {
        interp(&self.intensity, u)
    }
}

fn interp(v: &[f64], u: f64) -> f64 {
    let x = u.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let i = (x.floor() as usize).min(v.len() - 2);
    let t = x - i as f64;
    v[i] * (1.0 - t) + v[i + 1] * t
}

pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len()) as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub classes: usize,
    pub registry_seed: u64,
    pub canvas: usize,
    pub background: f64,
    pub noise_std: f64,
    pub blur_sigma: f64,
    /// Most phantoms bend by at most this total turning angle (radians).
    pub straight_bend_max: f64,
    /// Fraction of phantoms drawn from the strongly curved range.
    pub curved_fraction: f64,
    pub curved_bend_max: f64,
    /// Random translation of the chromosome centre, in pixels.
    pub jitter: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            registry_seed: 0x6b61_7279,
            canvas: 64,
            background: 0.96,
            noise_std: 0.02,
            blur_sigma: 0.7,
            straight_bend_max: 0.6,
            curved_fraction: 0.1,
            curved_bend_max: 2.8,
            jitter: 1.5,
        }
    }
}

/// Everything needed to re-render one phantom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChromosomeSpec {
    pub class: u32,
    /// Axis arc length in pixels.
    pub length: f64,
    pub width: f64,
    /// Total turning angle of the circular-arc axis (radians, signed).
    pub bend: f64,
    /// Offset of the chromosome centre from the canvas centre.
    pub offset: (f64, f64),
    pub noise_std: f64,
    pub seed: u64,
}

/// Output of one render.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub image: GrayImage,
    pub mask: BinaryMask,
    pub axis: MedialAxis,
    pub spec: ChromosomeSpec,
}

/// Structural edit applied to a template before rendering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbnormalityDescriptor {
    pub kind: OpKind,
    /// Span start as a fraction of the template.
    pub start: f64,
    /// Span length as a fraction of the template.
    pub span: f64,
    pub donor_class: Option<u32>,
    pub donor_start: Option<f64>,
}

/// Fixed set of class templates.
#[derive(Debug, Clone)]
pub struct PhantomRegistry {
    pub config: PhantomConfig,
    profiles: Vec<BandProfile>,
}

fn random_template(rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
    let n = TEMPLATE_SAMPLES;
    let bands = rng.random_range(7..=10);
    // random partition of n into `bands` runs of at least 6 samples
    let mut cuts: Vec<usize> = Vec::new();
    loop {
        cuts.clear();
        for _ in 0..bands - 1 {
            cuts.push(rng.random_range(6..n - 6));
        }
        cuts.sort_unstable();
        let mut prev = 0;
        let ok = cuts.iter().chain(std::iter::once(&n)).all(|&c| {
            let good = c >= prev + 6;
            prev = c;
            good
        });
        if ok {
            break;
        }
    }
    let mut raw = vec![0.0; n];
    let mut start = 0;
    let dark_first = rng.random_bool(0.5);
    for (b, &end) in cuts.iter().chain(std::iter::once(&n)).enumerate() {
        let dark = (b % 2 == 0) == dark_first;
        let level = if dark {
            rng.random_range(0.12..0.32)
        } else {
            rng.random_range(0.48..0.7)
        };
        for v in &mut raw[start..end] {
            *v = level;
        }
        start = end;
    }
    // soften band edges
    let intensity: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            (raw[lo] + 2.0 * raw[i] + raw[hi]) / 4.0
        })
        .collect();
    let cpos = rng.random_range(0.25..0.6);
    let constriction = (0..n)
        .map(|i| {
            let u = i as f64 / (n - 1) as f64;
            1.0 - 0.22 * (-((u - cpos) / 0.04).powi(2)).exp()
        })
        .collect();
    (intensity, constriction)
}

impl PhantomRegistry {
    /// Builds `config.classes` templates whose pairwise correlation is below
    /// 0.5 and mean absolute difference above 0.1.
    pub fn new(config: PhantomConfig) -> Result<Self, PhantomError> {
        let mut rng = rng_from_seed(config.registry_seed);
        let mut profiles: Vec<BandProfile> = Vec::new();
        let mut attempts = 0;
        while profiles.len() < config.classes {
            attempts += 1;
            if attempts > 10_000 {
                return Err(PhantomError::Registry(config.classes));
            }
            let (intensity, constriction) = random_template(&mut rng);
            let ok = profiles.iter().all(|p| {
                correlation(&p.intensity, &intensity).abs() < 0.4
                    && mean_abs_diff(&p.intensity, &intensity) > 0.1
            });
            if !ok {
                continue;
            }
            let c = profiles.len() as u32;
            // classes differ in length so the canvas is used at several scales
            let centre = 46.0 - 2.0 * (c % 5) as f64;
            profiles.push(BandProfile {
                class: c,
                intensity,
                constriction,
                length_range: (centre - 1.5, centre + 1.5),
                width_range: (9.0, 11.0),
            });
        }
        Ok(Self { config, profiles })
    }

    pub fn profiles(&self) -> &[BandProfile] {
        &self.profiles
    }

    pub fn profile(&self, class: u32) -> Result<&BandProfile, PhantomError> {
        self.profiles
            .get(class as usize)
            .ok_or(PhantomError::UnknownClass(class))
    }

    fn draw_spec(&self, class: u32, rng: &mut Rng) -> Result<ChromosomeSpec, PhantomError> {
        let p = self.profile(class)?;
        let cfg = &self.config;
        let length = rng.random_range(p.length_range.0..=p.length_range.1);
        let width = rng.random_range(p.width_range.0..=p.width_range.1);
        let magnitude = if rng.random_bool(cfg.curved_fraction.clamp(0.0, 1.0)) {
            rng.random_range(cfg.straight_bend_max..=cfg.curved_bend_max.max(cfg.straight_bend_max))
        } else {
            rng.random_range(0.0..=cfg.straight_bend_max)
        };
        let bend = if rng.random_bool(0.5) {
            magnitude
        } else {
            -magnitude
        };
        let offset = (
            rng.random_range(-cfg.jitter..=cfg.jitter),
            rng.random_range(-cfg.jitter..=cfg.jitter),
        );
        Ok(ChromosomeSpec {
            class,
            length,
            width,
            bend,
            offset,
            noise_std: cfg.noise_std,
            seed: rng.random(),
        })
    }

    /// Renders a normal chromosome of `class`.
    pub fn generate_normal(&self, class: u32, rng: &mut Rng) -> Result<Phantom, PhantomError> {
        let spec = self.draw_spec(class, rng)?;
        let p = self.profile(class)?;
        Ok(self.render(&spec, &p.intensity, &p.constriction))
    }

    /// Renders a chromosome of `class` with a structural edit of `kind`
    /// applied to its template.
    pub fn generate_abnormal_gt(
        &self,
        class: u32,
        kind: OpKind,
        rng: &mut Rng,
    ) -> Result<(Phantom, AbnormalityDescriptor), PhantomError> {
        let mut spec = self.draw_spec(class, rng)?;
        let (span, start, donor_class, donor_start) = match kind {
            OpKind::Deletion => {
                let q = rng.random_range(0.15..=0.3);
                (q, rng.random_range(0.1..=0.9 - q), None, None)
            }
            OpKind::Duplication => {
                let q = rng.random_range(0.12..=0.22);
                (q, rng.random_range(0.1..=0.9 - q), None, None)
            }
            OpKind::Inversion => {
                let q = rng.random_range(0.3..=0.5);
                (q, rng.random_range(0.05..=0.95 - q), None, None)
            }
            OpKind::Translocation => {
                let q = rng.random_range(0.2..=0.35);
                let others: Vec<u32> = (0..self.profiles.len() as u32)
                    .filter(|&c| c != class)
                    .collect();
                if others.is_empty() {
                    return Err(PhantomError::InvalidRequest(
                        "translocation needs two classes".into(),
                    ));
                }
                let donor = others[rng.random_range(0..others.len())];
                (
                    q,
                    rng.random_range(0.05..=0.95 - q),
                    Some(donor),
                    Some(rng.random_range(0.0..=1.0 - q)),
                )
            }
        };
        let desc = AbnormalityDescriptor {
            kind,
            start,
            span,
            donor_class,
            donor_start,
        };
        let (intensity, constriction, scale) = self.edit_template(class, &desc)?;
        spec.length *= scale;
        Ok((self.render(&spec, &intensity, &constriction), desc))
    }

    /// Applies a template edit; returns the new channels and the factor by
    /// which the chromosome length changes.
    pub fn edit_template(
        &self,
        class: u32,
        desc: &AbnormalityDescriptor,
    ) -> Result<(Vec<f64>, Vec<f64>, f64), PhantomError> {
        let p = self.profile(class)?;
        let n = p.intensity.len();
        let a = ((desc.start * n as f64).round() as usize).min(n);
        let b = (((desc.start + desc.span) * n as f64).round() as usize).clamp(a, n);
        let edit = |v: &[f64], donor: Option<&[f64]>| -> Vec<f64> {
            match desc.kind {
                OpKind::Deletion => v[..a].iter().chain(&v[b..]).copied().collect(),
                OpKind::Duplication => v[..b].iter().chain(&v[a..]).copied().collect(),
                OpKind::Inversion => {
                    let mut out = v.to_vec();
                    out[a..b].reverse();
                    out
                }
                OpKind::Translocation => {
                    let d = donor.expect("donor channel");
                    let ds = ((desc.donor_start.unwrap_or(0.0) * n as f64).round() as usize)
                        .min(n - (b - a));
                    let mut out = v.to_vec();
                    out[a..b].copy_from_slice(&d[ds..ds + (b - a)]);
                    out
                }
            }
        };
        let donor = match desc.kind {
            OpKind::Translocation => Some(self.profile(desc.donor_class.ok_or(
                PhantomError::InvalidRequest("translocation without donor class".into()),
            )?)?),
            _ => None,
        };
        let intensity = edit(&p.intensity, donor.map(|d| d.intensity.as_slice()));
        let constriction = edit(&p.constriction, donor.map(|d| d.constriction.as_slice()));
        let scale = intensity.len() as f64 / n as f64;
        Ok((intensity, constriction, scale))
    }

    /// Renders a spec with explicit template channels.
    pub fn render(
        &self,
        spec: &ChromosomeSpec,
        intensity: &[f64],
        constriction: &[f64],
    ) -> Phantom {
        let cfg = &self.config;
        let size = cfg.canvas;
        // circular-arc axis, symmetric about the vertical, sampled densely
        let step = 0.25;
        let k = ((spec.length / step).ceil() as usize).max(2);
        let ds = spec.length / k as f64;
        let curvature = spec.bend / spec.length;
        let mut pts = Vec::with_capacity(k + 1);
        let (mut r, mut c) = (0.0f64, 0.0f64);
        pts.push((r, c));
        for i in 0..k {
            let phi = -spec.bend / 2.0 + curvature * (i as f64 + 0.5) * ds;
            r += phi.cos() * ds;
            c += phi.sin() * ds;
            pts.push((r, c));
        }
        let (rmin, rmax) = pts
            .iter()
            .fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.0), b.max(p.0)));
        let (cmin, cmax) = pts
            .iter()
            .fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.1), b.max(p.1)));
        let centre = (
            (size as f64 - 1.0) / 2.0 + spec.offset.0,
            (size as f64 - 1.0) / 2.0 + spec.offset.1,
        );
        let shift = (
            centre.0 - (rmin + rmax) / 2.0,
            centre.1 - (cmin + cmax) / 2.0,
        );
        for p in &mut pts {
            p.0 += shift.0;
            p.1 += shift.1;
        }
        let half_widths: Vec<f64> = (0..=k)
            .map(|i| {
                let u = i as f64 / k as f64;
                let taper = (1.0 - (2.0 * u - 1.0).abs().powi(4)).max(0.0).sqrt();
                spec.width / 2.0 * taper * interp(constriction, u)
            })
            .collect();
        let inten: Vec<f64> = (0..=k)
            .map(|i| interp(intensity, i as f64 / k as f64))
            .collect();

        let margin = spec.width;
        let mut raw = vec![cfg.background; size * size];
        let mut cover = vec![0.0; size * size];
        for (row, chunk) in raw.chunks_mut(size).enumerate() {
            let y = row as f64;
            if y < rmin + shift.0 - margin || y > rmax + shift.0 + margin {
                continue;
            }
            for (col, px) in chunk.iter_mut().enumerate() {
                let x = col as f64;
                if x < cmin + shift.1 - margin || x > cmax + shift.1 + margin {
                    continue;
                }
                let mut best = (f64::MAX, 0usize);
                for (i, p) in pts.iter().enumerate() {
                    let d2 = (p.0 - y).powi(2) + (p.1 - x).powi(2);
                    if d2 < best.0 {
                        best = (d2, i);
                    }
                }
                let sd = best.0.sqrt() - half_widths[best.1];
                let coverage = (0.5 - sd).clamp(0.0, 1.0);
                cover[row * size + col] = coverage;
                *px = cfg.background + coverage * (inten[best.1] - cfg.background);
            }
        }
        let blurred = gaussian_blur(&raw, size, size, cfg.blur_sigma);
        // ground truth is the support of the blurred chromosome
        let support = gaussian_blur(&cover, size, size, cfg.blur_sigma);
        let bits: Vec<bool> = support.iter().map(|&v| v >= MASK_COVERAGE).collect();
        let mask = BinaryMask::from_bits(size, size, bits).expect("canvas sized");
        let mut rng = rng_from_seed(spec.seed);
        let pixels: Vec<f64> = blurred
            .into_iter()
            .map(|v| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (v + spec.noise_std * z).clamp(0.0, 1.0)
            })
            .collect();
        let image = GrayImage::from_vec(size, size, pixels).expect("clamped render");
        // ground-truth axis at roughly one-pixel spacing
        let stride = (1.0 / step).round() as usize;
        let mut axis_pts: Vec<(f64, f64)> = pts.iter().step_by(stride).copied().collect();
        if axis_pts.last() != pts.last() {
            axis_pts.push(*pts.last().unwrap());
        }
        let axis = MedialAxis::new(axis_pts).expect("axis has many points");
        Phantom {
            image,
            mask,
            axis,
            spec: spec.clone(),
        }
    }
}

/// Separable Gaussian blur with edge clamping.
pub fn gaussian_blur(src: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return src.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= s);
    let mut tmp = vec![0.0; src.len()];
    for r in 0..height {
        for c in 0..width {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let cc = (c as i64 + k as i64 - radius).clamp(0, width as i64 - 1) as usize;
                acc += w * src[r * width + cc];
            }
            tmp[r * width + c] = acc;
        }
    }
    let mut out = vec![0.0; src.len()];
    for r in 0..height {
        for c in 0..width {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let rr = (r as i64 + k as i64 - radius).clamp(0, height as i64 - 1) as usize;
                acc += w * tmp[rr * width + c];
            }
            out[r * width + c] = acc;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    /// Synthetic abnormal pool before restoration.
    Syn,
    /// Synthetic abnormal pool after restoration.
    SynStar,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Syn => "syn",
            Split::SynStar => "syn_star",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub id: u32,
    pub length_range: (f64, f64),
}

/// One image in a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    pub file: String,
    pub class: u32,
    /// 0 normal, 1 abnormal.
    pub label: u8,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub op: Option<OpKind>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<PerturbRecord>,
}

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub classes: Vec<ClassEntry>,
    pub samples: Vec<SampleEntry>,
}

impl DatasetManifest {
    pub fn to_json(&self) -> Result<String, PhantomError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, PhantomError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn read(path: &Path) -> Result<Self, PhantomError> {
        let text = std::fs::read_to_string(path).map_err(|source| PhantomError::Io {
            context: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn write(&self, path: &Path) -> Result<(), PhantomError> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|source| PhantomError::Io {
            context: path.display().to_string(),
            source,
        })
    }

    pub fn select(&self, class: u32, split: Split, label: u8) -> Vec<&SampleEntry> {
        self.samples
            .iter()
            .filter(|s| s.class == class && s.split == split && s.label == label)
            .collect()
    }
}

/// Requested per-class sample counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetCounts {
    pub train_normal: usize,
    /// Normals per abnormal in the training split; the abnormal count is
    /// `round(train_normal / ratio)`, at least one.
    pub imbalance_ratio: f64,
    pub val_normal: usize,
    pub val_abnormal: usize,
    pub test_normal: usize,
    pub test_abnormal: usize,
}

impl DatasetCounts {
    pub fn train_abnormal(&self) -> usize {
        ((self.train_normal as f64 / self.imbalance_ratio).round() as usize).max(1)
    }
}

impl Default for DatasetCounts {
    fn default() -> Self {
        Self {
            train_normal: 2000,
            imbalance_ratio: 100.0,
            val_normal: 100,
            val_abnormal: 25,
            test_normal: 200,
            test_abnormal: 50,
        }
    }
}

/// Generated images plus their manifest; images align with `manifest.samples`.
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub images: Vec<GrayImage>,
}

struct Job {
    class: u32,
    split: Split,
    label: u8,
    op: Option<OpKind>,
}

/// Generates the full labelled dataset for every registered class.
pub fn build_dataset(
    registry: &PhantomRegistry,
    counts: &DatasetCounts,
    run_seed: u64,
    mode: ExecMode,
) -> Result<Dataset, PhantomError> {
    if counts.imbalance_ratio <= 0.0 || !counts.imbalance_ratio.is_finite() {
        return Err(PhantomError::InvalidRequest(format!(
            "imbalance ratio {}",
            counts.imbalance_ratio
        )));
    }
    if counts.train_normal == 0 || counts.test_normal == 0 || counts.test_abnormal == 0 {
        return Err(PhantomError::InvalidRequest(
            "train and test counts must be positive".into(),
        ));
    }
    let mut jobs = Vec::new();
    for class in 0..registry.profiles().len() as u32 {
        let plan = [
            (Split::Train, counts.train_normal, counts.train_abnormal()),
            (Split::Val, counts.val_normal, counts.val_abnormal),
            (Split::Test, counts.test_normal, counts.test_abnormal),
        ];
        for (split, normals, abnormals) in plan {
            jobs.extend((0..normals).map(|_| Job {
                class,
                split,
                label: 0,
                op: None,
            }));
            jobs.extend((0..abnormals).map(|i| Job {
                class,
                split,
                label: 1,
                op: Some(OpKind::ALL[i % 4]),
            }));
        }
    }
    let rendered = exec::map_range(mode, jobs.len(), |i| {
        let job = &jobs[i];
        let sample_seed = seed::derive(run_seed, i as u64);
        let mut rng = rng_from_seed(sample_seed);
        let image = match job.op {
            None => registry
                .generate_normal(job.class, &mut rng)
                .map(|p| p.image),
            Some(kind) => registry
                .generate_abnormal_gt(job.class, kind, &mut rng)
                .map(|(p, _)| p.image),
        };
        image.map(|img| (img, sample_seed))
    });
    let mut samples = Vec::with_capacity(jobs.len());
    let mut images = Vec::with_capacity(jobs.len());
    for (i, (job, r)) in jobs.iter().zip(rendered).enumerate() {
        let (img, sample_seed) = r?;
        let id = format!(
            "c{}_{}_{}_{:05}",
            job.class,
            job.split.name(),
            if job.label == 0 { "n" } else { "ab" },
            i
        );
        samples.push(SampleEntry {
            file: format!("images/{id}.pgm"),
            id,
            class: job.class,
            label: job.label,
            split: job.split,
            op: job.op,
            seed: sample_seed,
            record: None,
        });
        images.push(img);
    }
    let classes = registry
        .profiles()
        .iter()
        .map(|p| ClassEntry {
            id: p.class,
            length_range: p.length_range,
        })
        .collect();
    Ok(Dataset {
        manifest: DatasetManifest {
            version: MANIFEST_VERSION,
            classes,
            samples,
        },
        images,
    })
}

/// Writes images under `dir/images/` and the manifest to `dir/manifest.json`.
pub fn write_dataset(
    dir: &Path,
    manifest: &DatasetManifest,
    images: &[GrayImage],
) -> Result<(), PhantomError> {
    let io = |context: &Path| {
        let context = context.display().to_string();
        move |source| PhantomError::Io {
            context: context.clone(),
            source,
        }
    };
    let img_dir = dir.join("images");
    std::fs::create_dir_all(&img_dir).map_err(io(&img_dir))?;
    for (s, img) in manifest.samples.iter().zip(images) {
        let path = dir.join(&s.file);
        pgm::write(&path, img).map_err(io(&path))?;
    }
    manifest.write(&dir.join("manifest.json"))
}

/// Loads the images referenced by `samples` relative to `dir`.
pub fn load_images(dir: &Path, samples: &[&SampleEntry]) -> Result<Vec<GrayImage>, PhantomError> {
    samples
        .iter()
        .map(|s| {
            let path = dir.join(&s.file);
            pgm::read(&path).map_err(|e| PhantomError::Io {
                context: path.display().to_string(),
                source: std::io::Error::other(e.to_string()),
            })
        })
        .collect()
}

/// Kind of an abnormal entry, taken from its record when present.
pub fn entry_kind(s: &SampleEntry) -> Option<OpKind> {
    s.op.or_else(|| {
        s.record.as_ref().map(|r| match &r.op {
            OpRecord::Deletion { .. } => OpKind::Deletion,
            OpRecord::Duplication { .. } => OpKind::Duplication,
            OpRecord::Inversion { .. } => OpKind::Inversion,
            OpRecord::Translocation { .. } => OpKind::Translocation,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::binarize;
    use crate::perturb::mac_score;

    fn registry() -> PhantomRegistry {
        PhantomRegistry::new(PhantomConfig::default()).unwrap()
    }

    fn straight_spec(reg: &PhantomRegistry, class: u32) -> ChromosomeSpec {
        let _ = reg;
        ChromosomeSpec {
            class,
            length: 44.0,
            width: 10.0,
            bend: 0.0,
            offset: (0.0, 0.0),
            noise_std: 0.02,
            seed: 9,
        }
    }

    /// Mean intensity of the central columns of the mask, per row, without
    /// the tapered tips.
    fn row_profile(p: &Phantom) -> Vec<f64> {
        let (top, bottom) = p.mask.row_extent().unwrap();
        (top + 2..=bottom - 2)
            .map(|r| {
                let cols: Vec<usize> = (0..p.image.width()).filter(|&c| p.mask.get(r, c)).collect();
                let mid = cols.iter().sum::<usize>() as f64 / cols.len().max(1) as f64;
                let core: Vec<f64> = cols
                    .iter()
                    .filter(|&&c| (c as f64 - mid).abs() <= 2.0)
                    .map(|&c| p.image.get(r, c))
                    .collect();
                core.iter().sum::<f64>() / core.len().max(1) as f64
            })
            .collect()
    }

    #[test]
    fn registry_templates_are_distinct() {
        let reg = registry();
        let ps = reg.profiles();
        assert_eq!(ps.len(), 4);
        for i in 0..ps.len() {
            assert!(ps[i].intensity.len() >= 16);
            for j in i + 1..ps.len() {
                assert!(mean_abs_diff(&ps[i].intensity, &ps[j].intensity) > 0.1);
                assert!(correlation(&ps[i].intensity, &ps[j].intensity) < 0.5);
            }
        }
        assert!(matches!(reg.profile(9), Err(PhantomError::UnknownClass(9))));
    }

    #[test]
    fn generation_is_deterministic() {
        let reg = registry();
        let a = reg.generate_normal(1, &mut rng_from_seed(5)).unwrap();
        let b = reg.generate_normal(1, &mut rng_from_seed(5)).unwrap();
        assert_eq!(pgm::encode(&a.image), pgm::encode(&b.image));
        let (x, _) = reg
            .generate_abnormal_gt(2, OpKind::Duplication, &mut rng_from_seed(8))
            .unwrap();
        let (y, _) = reg
            .generate_abnormal_gt(2, OpKind::Duplication, &mut rng_from_seed(8))
            .unwrap();
        assert_eq!(x.image, y.image);
    }

    #[test]
    fn straight_phantom_has_full_mac_and_matching_mask() {
        let reg = registry();
        let p = reg.profile(0).unwrap();
        let ph = reg.render(&straight_spec(&reg, 0), &p.intensity, &p.constriction);
        assert!((mac_score(&ph.axis, 6).unwrap() - 100.0).abs() < 0.5);
        let bin = binarize(&ph.image, 0.9).unwrap();
        let dis = bin.disagreement(&ph.mask).unwrap();
        assert!((dis as f64) < 0.02 * 4096.0, "disagreement {dis}");
    }

    #[test]
    fn row_profile_follows_template() {
        let reg = registry();
        for class in 0..4 {
            let p = reg.profile(class).unwrap();
            let ph = reg.render(&straight_spec(&reg, class), &p.intensity, &p.constriction);
            let prof = row_profile(&ph);
            let n = prof.len();
            let tmpl: Vec<f64> = (0..n)
                .map(|i| p.intensity_at((i as f64 + 2.5) / (n + 4) as f64))
                .collect();
            let r = correlation(&prof, &tmpl);
            assert!(r > 0.9, "class {class}: r = {r}");
        }
    }

    #[test]
    fn deletion_shortens_by_span() {
        let reg = registry();
        let spec = straight_spec(&reg, 1);
        let p = reg.profile(1).unwrap();
        let normal = reg.render(&spec, &p.intensity, &p.constriction);
        for q in [0.15, 0.2, 0.3] {
            let desc = AbnormalityDescriptor {
                kind: OpKind::Deletion,
                start: 0.3,
                span: q,
                donor_class: None,
                donor_start: None,
            };
            let (i, c, scale) = reg.edit_template(1, &desc).unwrap();
            let mut s2 = spec.clone();
            s2.length *= scale;
            let ab = reg.render(&s2, &i, &c);
            let (t0, b0) = normal.mask.row_extent().unwrap();
            let (t1, b1) = ab.mask.row_extent().unwrap();
            let (ln, la) = ((b0 - t0 + 1) as f64, (b1 - t1 + 1) as f64);
            let shrink = (ln - la) / ln;
            assert!((shrink - q).abs() <= 0.05, "q {q}: shrink {shrink}");
        }
    }

    #[test]
    fn whole_inversion_reverses_profile() {
        let reg = registry();
        let spec = straight_spec(&reg, 2);
        let p = reg.profile(2).unwrap();
        let desc = AbnormalityDescriptor {
            kind: OpKind::Inversion,
            start: 0.0,
            span: 1.0,
            donor_class: None,
            donor_start: None,
        };
        let (i, c, _) = reg.edit_template(2, &desc).unwrap();
        let ab = reg.render(&spec, &i, &c);
        let prof = row_profile(&ab);
        let n = prof.len();
        let reversed: Vec<f64> = (0..n)
            .map(|k| p.intensity_at(1.0 - (k as f64 + 2.5) / (n + 4) as f64))
            .collect();
        assert!(correlation(&prof, &reversed) > 0.9);
    }

    #[test]
    fn same_class_phantoms_correlate() {
        let reg = registry();
        let mut rng = rng_from_seed(3);
        let profiles: Vec<(u32, Vec<f64>)> = (0..8)
            .map(|i| {
                let class = (i % 2) as u32;
                let mut ph = reg.generate_normal(class, &mut rng).unwrap();
                while ph.spec.bend.abs() > 0.6 {
                    ph = reg.generate_normal(class, &mut rng).unwrap();
                }
                let prof = row_profile(&ph);
                // resample to a common length
                let n = 64;
                let res: Vec<f64> = (0..n)
                    .map(|k| interp(&prof, k as f64 / (n - 1) as f64))
                    .collect();
                (class, res)
            })
            .collect();
        for a in 0..profiles.len() {
            for b in a + 1..profiles.len() {
                let r = correlation(&profiles[a].1, &profiles[b].1);
                if profiles[a].0 == profiles[b].0 {
                    assert!(r > 0.8, "same class r = {r}");
                } else {
                    assert!(r < 0.5, "cross class r = {r}");
                }
            }
        }
    }

    #[test]
    fn dataset_counts_and_ratio() {
        let reg = PhantomRegistry::new(PhantomConfig {
            classes: 2,
            ..Default::default()
        })
        .unwrap();
        let counts = DatasetCounts {
            train_normal: 40,
            imbalance_ratio: 10.0,
            val_normal: 2,
            val_abnormal: 1,
            test_normal: 5,
            test_abnormal: 4,
        };
        let ds = build_dataset(&reg, &counts, 17, ExecMode::Parallel).unwrap();
        assert_eq!(counts.train_abnormal(), 4);
        let m = &ds.manifest;
        assert_eq!(m.select(0, Split::Train, 0).len(), 40);
        assert_eq!(m.select(1, Split::Train, 1).len(), 4);
        assert_eq!(m.select(1, Split::Test, 1).len(), 4);
        let kinds: Vec<OpKind> = m
            .select(0, Split::Test, 1)
            .iter()
            .map(|s| s.op.unwrap())
            .collect();
        assert_eq!(kinds, OpKind::ALL.to_vec());
        let again = build_dataset(&reg, &counts, 17, ExecMode::Sequential).unwrap();
        assert_eq!(again.manifest, ds.manifest);
        assert_eq!(again.images, ds.images);
        assert_eq!(
            DatasetCounts {
                train_normal: 2000,
                ..Default::default()
            }
            .train_abnormal(),
            20
        );
    }
}
