//! Structural perturbation of rectified chromosomes.
//!
//! Deletion, duplication, inversion and translocation act on the ordered
//! patch list of a rearranged chromosome. The medial-axis cosine (MAC) score
//! measures global straightness and gates which chromosomes are used.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{
    binarize, extract_axis, extract_patches, sample_axis, stack_patches, thin, AxisParams,
    BinaryMask, GrayImage, ImagingError, MedialAxis, Patch, PatchSequence,
};
use crate::seed::{rng_from_seed, Rng};

#[derive(Debug, Error, PartialEq)]
pub enum PerturbError {
    #[error("index {index} outside 1..={len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("inversion span {j}..{m} is empty or reversed")]
    InvalidSpan { j: usize, m: usize },
    #[error("donor patch of {len} values cannot be resampled")]
    DonorShapeMismatch { len: usize },
    #[error("donor class {0} equals the target class")]
    SameClassDonor(u32),
    #[error("sequence of {0} patches is too short for this operation")]
    SequenceTooShort(usize),
    #[error("axis endpoints coincide")]
    DegenerateAxis,
    #[error("MAC needs at least two samples, got {0}")]
    TooFewSamples(usize),
    #[error("no donor chromosome of another class is available")]
    NoDonorAvailable,
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Deletion,
    Duplication,
    Inversion,
    Translocation,
}

impl OpKind {
    pub const ALL: [OpKind; 4] = [
        OpKind::Deletion,
        OpKind::Duplication,
        OpKind::Inversion,
        OpKind::Translocation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Deletion => "deletion",
            OpKind::Duplication => "duplication",
            OpKind::Inversion => "inversion",
            OpKind::Translocation => "translocation",
        }
    }
}

/// Donor segment for a translocation, in its own dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct DonorPatch {
    pub length: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

/// Perturbation operator. Indices are 1-based.
#[derive(Debug, Clone, PartialEq)]
pub enum PerturbationOp {
    Deletion {
        j: usize,
    },
    Duplication {
        j: usize,
    },
    Inversion {
        j: usize,
        m: usize,
    },
    Translocation {
        j: usize,
        donor: DonorPatch,
        donor_class: u32,
    },
}

impl PerturbationOp {
    pub fn kind(&self) -> OpKind {
        match self {
            PerturbationOp::Deletion { .. } => OpKind::Deletion,
            PerturbationOp::Duplication { .. } => OpKind::Duplication,
            PerturbationOp::Inversion { .. } => OpKind::Inversion,
            PerturbationOp::Translocation { .. } => OpKind::Translocation,
        }
    }
}

/// Bilinear resize of a row-major `src_l x src_w` block to `dst_l x dst_w`
/// using pixel-centre alignment.
pub fn resample_block(
    pixels: &[f64],
    src_l: usize,
    src_w: usize,
    dst_l: usize,
    dst_w: usize,
) -> Option<Vec<f64>> {
    if src_l == 0 || src_w == 0 || pixels.len() != src_l * src_w {
        return None;
    }
    if src_l == dst_l && src_w == dst_w {
        return Some(pixels.to_vec());
    }
    let img = GrayImage::from_vec_clamped(src_w, src_l, pixels.to_vec()).ok()?;
    let (sy, sx) = (src_l as f64 / dst_l as f64, src_w as f64 / dst_w as f64);
    let mut out = Vec::with_capacity(dst_l * dst_w);
    for u in 0..dst_l {
        let r = ((u as f64 + 0.5) * sy - 0.5).clamp(0.0, (src_l - 1) as f64);
        for v in 0..dst_w {
            let c = ((v as f64 + 0.5) * sx - 0.5).clamp(0.0, (src_w - 1) as f64);
            out.push(img.bilinear(r, c, 1.0));
        }
    }
    Some(out)
}

fn check_index(j: usize, n: usize) -> Result<usize, PerturbError> {
    if j == 0 || j > n {
        Err(PerturbError::IndexOutOfRange { index: j, len: n })
    } else {
        Ok(j - 1)
    }
}

/// Applies one operator to a patch sequence.
pub fn apply_perturbation(
    seq: &PatchSequence,
    op: &PerturbationOp,
) -> Result<PatchSequence, PerturbError> {
    let n = seq.len();
    let mut patches = seq.patches.clone();
    match op {
        PerturbationOp::Deletion { j } => {
            let i = check_index(*j, n)?;
            if n < 3 {
                return Err(PerturbError::SequenceTooShort(n));
            }
            patches.remove(i);
        }
        PerturbationOp::Duplication { j } => {
            let i = check_index(*j, n)?;
            let dup = patches[i].clone();
            patches.insert(i + 1, dup);
        }
        PerturbationOp::Inversion { j, m } => {
            let a = check_index(*j, n)?;
            let b = check_index(*m, n)?;
            if a > b {
                return Err(PerturbError::InvalidSpan { j: *j, m: *m });
            }
            patches[a..=b].reverse();
            for p in &mut patches[a..=b] {
                *p = p.flipped_along_axis(seq.width);
            }
        }
        PerturbationOp::Translocation { j, donor, .. } => {
            let i = check_index(*j, n)?;
            let pixels = resample_block(
                &donor.pixels,
                donor.length,
                donor.width,
                seq.length,
                seq.width,
            )
            .ok_or(PerturbError::DonorShapeMismatch {
                len: donor.pixels.len(),
            })?;
            let old = &patches[i];
            patches[i] = Patch {
                center: old.center,
                angle: old.angle,
                pixels,
            };
        }
    }
    Ok(PatchSequence {
        length: seq.length,
        width: seq.width,
        patches,
    })
}

/// Normalisation of the summed cosine deviations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MacNormalization {
    /// Divide the `M - 1` deviation terms by `M`, as the score is usually
    /// written.
    #[default]
    BySamples,
    /// Divide by the number of terms, `M - 1`.
    ByTerms,
}

pub const DEFAULT_MAC_SAMPLES: usize = 6;

/// MAC straightness score in `[-100, 100]`; 100 for a straight axis.
pub fn mac_score(axis: &MedialAxis, samples: usize) -> Result<f64, PerturbError> {
    mac_score_with(axis, samples, MacNormalization::BySamples)
}

pub fn mac_score_with(
    axis: &MedialAxis,
    samples: usize,
    norm: MacNormalization,
) -> Result<f64, PerturbError> {
    if samples < 2 {
        return Err(PerturbError::TooFewSamples(samples));
    }
    let length = axis.arc_length();
    let (top, bottom) = (axis.first(), axis.last());
    let g = (bottom.0 - top.0, bottom.1 - top.1);
    let gn = (g.0 * g.0 + g.1 * g.1).sqrt();
    if gn == 0.0 || length <= 0.0 {
        return Err(PerturbError::DegenerateAxis);
    }
    let g = (g.0 / gn, g.1 / gn);
    let positions: Vec<f64> = (0..samples)
        .map(|k| k as f64 * length / (samples - 1) as f64)
        .collect();
    let pts = axis.points_at(&positions);
    let mut total = 0.0;
    for w in pts.windows(2) {
        let d = (w[1].0 - w[0].0, w[1].1 - w[0].1);
        let dn = (d.0 * d.0 + d.1 * d.1).sqrt();
        if dn == 0.0 {
            // coincident samples only occur on zero-length spans; treat as aligned
            continue;
        }
        let delta = 1.0 - (d.0 * g.0 + d.1 * g.1) / dn;
        total += delta.abs();
    }
    let denom = match norm {
        MacNormalization::BySamples => samples as f64,
        MacNormalization::ByTerms => (samples - 1) as f64,
    };
    Ok((1.0 - total / denom) * 100.0)
}

/// Keeps candidates whose MAC score is strictly above `threshold`, in input
/// order. Candidates with a degenerate axis are dropped.
pub fn filter_by_mac<T>(
    candidates: Vec<(T, MedialAxis)>,
    threshold: f64,
    samples: usize,
) -> Vec<(T, MedialAxis)> {
    candidates
        .into_iter()
        .filter(|(_, axis)| mac_score(axis, samples).is_ok_and(|s| s > threshold))
        .collect()
}

/// How the patch interval is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum IntervalPolicy {
    Fixed {
        interval: usize,
    },
    /// Uniform integer in `[min * height, max * height]`, where height is
    /// the vertical extent of the chromosome mask.
    FractionOfHeight {
        min: f64,
        max: f64,
    },
}

impl Default for IntervalPolicy {
    fn default() -> Self {
        IntervalPolicy::FractionOfHeight {
            min: 1.0 / 20.0,
            max: 1.0 / 5.0,
        }
    }
}

impl IntervalPolicy {
    pub fn draw(&self, height: usize, rng: &mut Rng) -> usize {
        match *self {
            IntervalPolicy::Fixed { interval } => interval.max(1),
            IntervalPolicy::FractionOfHeight { min, max } => {
                let lo = ((height as f64 * min).ceil() as usize).max(2);
                let hi = ((height as f64 * max).floor() as usize).max(lo);
                rng.random_range(lo..=hi)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectifyParams {
    pub threshold: f64,
    pub axis: AxisParams,
    /// Prolong the axis along its end tangents to the mask boundary,
    /// recovering the tips that thinning erodes.
    #[serde(default = "yes")]
    pub extend_to_boundary: bool,
}

fn yes() -> bool {
    true
}

impl Default for RectifyParams {
    fn default() -> Self {
        Self {
            threshold: 0.9,
            axis: AxisParams::default(),
            extend_to_boundary: true,
        }
    }
}

/// Intermediate products of rectifying one chromosome.
#[derive(Debug, Clone)]
pub struct Rectified {
    pub axis: MedialAxis,
    pub height: usize,
    pub sequence: PatchSequence,
}

/// Thresholded chromosome mask; isolated noise specks are discarded by
/// keeping the largest component.
pub fn chromosome_mask(
    image: &GrayImage,
    params: &RectifyParams,
) -> Result<BinaryMask, PerturbError> {
    let mask = binarize(image, params.threshold)?.largest_component();
    if mask.count() == 0 {
        return Err(ImagingError::EmptyMask.into());
    }
    Ok(mask)
}

/// Extends both ends of `axis` along the tangent through the point
/// `reach` pixels inside, in half-pixel steps, while the mask stays set.
pub fn extend_axis_to_boundary(axis: &MedialAxis, mask: &BinaryMask, reach: f64) -> MedialAxis {
    let reach = reach.min(axis.arc_length() / 3.0);
    let extend =
        |pts: &[(f64, f64)], cum_from_end: &dyn Fn(f64) -> (f64, f64)| -> Vec<(f64, f64)> {
            let end = pts[0];
            let inner = cum_from_end(reach);
            let (dr, dc) = (end.0 - inner.0, end.1 - inner.1);
            let norm = (dr * dr + dc * dc).sqrt();
            if norm < 1e-9 {
                return Vec::new();
            }
            let (ur, uc) = (dr / norm, dc / norm);
            let mut out = Vec::new();
            let mut k = 1;
            loop {
                let p = (end.0 + ur * 0.5 * k as f64, end.1 + uc * 0.5 * k as f64);
                if !mask.get_signed(p.0.round() as i64, p.1.round() as i64) {
                    break;
                }
                out.push(p);
                k += 1;
            }
            out
        };
    let total = axis.arc_length();
    let head = extend(axis.points(), &|d| axis.point_at(d.min(total)));
    let rev: Vec<(f64, f64)> = axis.points().iter().rev().copied().collect();
    let tail = extend(&rev, &|d| axis.point_at((total - d).max(0.0)));
    let mut pts: Vec<(f64, f64)> = head.into_iter().rev().collect();
    pts.extend_from_slice(axis.points());
    pts.extend(tail);
    MedialAxis::new(pts).expect("at least the original points")
}

/// Arc length over which the end tangents are measured; long enough that a
/// one-pixel skeleton wobble barely tilts the extension.
const TANGENT_REACH: f64 = 8.0;

/// Skeleton tips within about half a chromosome width of the boundary
/// often veer into a corner; this much is cut before extending.
const TIP_TRIM: f64 = 4.0;

/// Drops arc length `d` from both ends, interpolating the new endpoints.
/// Axes too short to trim are returned unchanged.
pub fn trim_axis_ends(axis: &MedialAxis, d: f64) -> MedialAxis {
    let total = axis.arc_length();
    if d <= 0.0 || total <= 4.0 * d {
        return axis.clone();
    }
    let cum = axis.cumulative_lengths();
    let mut pts = vec![axis.point_at(d)];
    pts.extend(
        cum.iter()
            .zip(axis.points())
            .filter(|(&s, _)| s > d && s < total - d)
            .map(|(_, &p)| p),
    );
    pts.push(axis.point_at(total - d));
    MedialAxis::new(pts).expect("two or more points")
}

/// Medial axis of a chromosome image (binarize, thin, extract, optionally
/// extend to the boundary) and the mask's vertical extent.
pub fn chromosome_axis(
    image: &GrayImage,
    params: &RectifyParams,
) -> Result<(MedialAxis, usize), PerturbError> {
    let mask = chromosome_mask(image, params)?;
    let (axis, height) = axis_of_mask(&mask, params)?;
    Ok((axis, height))
}

fn axis_of_mask(
    mask: &BinaryMask,
    params: &RectifyParams,
) -> Result<(MedialAxis, usize), PerturbError> {
    let (top, bottom) = mask.row_extent().ok_or(ImagingError::EmptyMask)?;
    let skeleton = thin(mask)?;
    let mut axis = extract_axis(&skeleton, &params.axis)?;
    if params.extend_to_boundary {
        axis = trim_axis_ends(&axis, TIP_TRIM);
        axis = extend_axis_to_boundary(&axis, mask, TANGENT_REACH);
    }
    Ok((axis, bottom - top + 1))
}

/// Centres of `round(L / l)` patches that tile an axis running tip to tip,
/// with any overhang or shortfall split evenly between the two ends. Centring
/// the first patch on the tip itself would fill half of it with background.
pub fn tile_axis(axis: &MedialAxis, interval: f64) -> Result<Vec<(f64, f64)>, PerturbError> {
    if !(interval > 0.0) || !interval.is_finite() {
        return Err(ImagingError::InvalidInterval(interval).into());
    }
    let length = axis.arc_length();
    let n = ((length / interval).round() as usize).max(1);
    let start = (length - n as f64 * interval) / 2.0 + interval / 2.0;
    let positions: Vec<f64> = (0..n)
        .map(|k| (start + k as f64 * interval).clamp(0.0, length))
        .collect();
    Ok(axis.points_at(&positions))
}

/// Rectifies with a fixed interval.
pub fn rectify(
    image: &GrayImage,
    params: &RectifyParams,
    interval: usize,
) -> Result<Rectified, PerturbError> {
    let mask = chromosome_mask(image, params)?;
    let (axis, height) = axis_of_mask(&mask, params)?;
    let centers = if params.extend_to_boundary {
        tile_axis(&axis, interval as f64)?
    } else {
        sample_axis(&axis, interval as f64)?
    };
    let sequence = extract_patches(image, &mask, &centers, interval)?;
    Ok(Rectified {
        axis,
        height,
        sequence,
    })
}

/// Rearranged (straightened, unperturbed) chromosome with an interval drawn
/// from `policy`.
pub fn rearrange(
    image: &GrayImage,
    params: &RectifyParams,
    policy: &IntervalPolicy,
    rng: &mut Rng,
) -> Result<(GrayImage, usize), PerturbError> {
    let (_, height) = chromosome_axis(image, params)?;
    let interval = policy.draw(height, rng);
    let r = rectify(image, params, interval)?;
    Ok((stack_patches(&r.sequence)?, interval))
}

/// Which operator `simulate_abnormal` applies.
#[derive(Debug, Clone, PartialEq)]
pub enum OpChoice {
    /// Uniform over the four kinds, random parameters.
    Random,
    /// Fixed kind, random parameters.
    Kind(OpKind),
    /// Fully specified operator.
    Exact(PerturbationOp),
}

/// A labelled chromosome image.
#[derive(Debug, Clone, Copy)]
pub struct Chromosome<'a> {
    pub id: &'a str,
    pub class: u32,
    pub image: &'a GrayImage,
}

/// Serializable description of the applied operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OpRecord {
    Deletion {
        j: usize,
    },
    Duplication {
        j: usize,
    },
    Inversion {
        j: usize,
        m: usize,
    },
    Translocation {
        j: usize,
        donor_id: String,
        donor_class: u32,
        donor_patch: usize,
    },
}

impl OpRecord {
    pub fn kind(&self) -> OpKind {
        match self {
            OpRecord::Deletion { .. } => OpKind::Deletion,
            OpRecord::Duplication { .. } => OpKind::Duplication,
            OpRecord::Inversion { .. } => OpKind::Inversion,
            OpRecord::Translocation { .. } => OpKind::Translocation,
        }
    }
}

/// Provenance of one simulated abnormal chromosome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbRecord {
    pub source_id: String,
    pub op: OpRecord,
    pub source_mac: f64,
    pub interval: usize,
    pub patches: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationParams {
    pub rectify: RectifyParams,
    pub interval: IntervalPolicy,
    pub mac_samples: usize,
}

impl Default for SimulationParams {
    fn default() -> Self {
        Self {
            rectify: RectifyParams::default(),
            interval: IntervalPolicy::default(),
            mac_samples: DEFAULT_MAC_SAMPLES,
        }
    }
}

fn random_op_record(
    kind: OpKind,
    n: usize,
    source_class: u32,
    donors: &[Chromosome<'_>],
    rng: &mut Rng,
) -> Result<OpRecord, PerturbError> {
    Ok(match kind {
        OpKind::Deletion => OpRecord::Deletion {
            j: rng.random_range(1..=n),
        },
        OpKind::Duplication => OpRecord::Duplication {
            j: rng.random_range(1..=n),
        },
        OpKind::Inversion => {
            let span = rng.random_range(1..=n.div_ceil(2));
            let j = rng.random_range(1..=n - span + 1);
            OpRecord::Inversion { j, m: j + span - 1 }
        }
        OpKind::Translocation => {
            let eligible: Vec<&Chromosome<'_>> =
                donors.iter().filter(|d| d.class != source_class).collect();
            if eligible.is_empty() {
                return Err(PerturbError::NoDonorAvailable);
            }
            let j = rng.random_range(1..=n);
            let donor = eligible[rng.random_range(0..eligible.len())];
            // patch index is resolved once the donor is rectified
            OpRecord::Translocation {
                j,
                donor_id: donor.id.to_string(),
                donor_class: donor.class,
                donor_patch: usize::MAX,
            }
        }
    })
}

/// Full simulation: rectify the source, apply one operator, and stack the
/// result. Returns the tight `n' * l x width` image and its provenance.
pub fn simulate_abnormal(
    source: Chromosome<'_>,
    choice: &OpChoice,
    donors: &[Chromosome<'_>],
    params: &SimulationParams,
    seed: u64,
) -> Result<(GrayImage, PerturbRecord), PerturbError> {
    let mut rng = rng_from_seed(seed);
    let (axis, height) = chromosome_axis(source.image, &params.rectify)?;
    let source_mac = mac_score(&axis, params.mac_samples)?;
    let interval = params.interval.draw(height, &mut rng);
    let rect = rectify(source.image, &params.rectify, interval)?;
    let n = rect.sequence.len();

    let (op, record) = match choice {
        OpChoice::Exact(op) => {
            if let PerturbationOp::Translocation { donor_class, .. } = op {
                if *donor_class == source.class {
                    return Err(PerturbError::SameClassDonor(*donor_class));
                }
            }
            let record = match op {
                PerturbationOp::Deletion { j } => OpRecord::Deletion { j: *j },
                PerturbationOp::Duplication { j } => OpRecord::Duplication { j: *j },
                PerturbationOp::Inversion { j, m } => OpRecord::Inversion { j: *j, m: *m },
                PerturbationOp::Translocation { j, donor_class, .. } => OpRecord::Translocation {
                    j: *j,
                    donor_id: String::new(),
                    donor_class: *donor_class,
                    donor_patch: 0,
                },
            };
            (op.clone(), record)
        }
        OpChoice::Kind(_) | OpChoice::Random => {
            let kind = match choice {
                OpChoice::Kind(k) => *k,
                _ => OpKind::ALL[rng.random_range(0..4)],
            };
            let mut record = random_op_record(kind, n, source.class, donors, &mut rng)?;
            let op = match &mut record {
                OpRecord::Deletion { j } => PerturbationOp::Deletion { j: *j },
                OpRecord::Duplication { j } => PerturbationOp::Duplication { j: *j },
                OpRecord::Inversion { j, m } => PerturbationOp::Inversion { j: *j, m: *m },
                OpRecord::Translocation {
                    j,
                    donor_id,
                    donor_class,
                    donor_patch,
                } => {
                    let donor = donors
                        .iter()
                        .find(|d| d.id == donor_id.as_str())
                        .expect("donor drawn from pool");
                    let donor_rect = rectify(donor.image, &params.rectify, interval)?;
                    let k = rng.random_range(0..donor_rect.sequence.len());
                    *donor_patch = k;
                    let seq = &donor_rect.sequence;
                    PerturbationOp::Translocation {
                        j: *j,
                        donor: DonorPatch {
                            length: seq.length,
                            width: seq.width,
                            pixels: seq.patches[k].pixels.clone(),
                        },
                        donor_class: *donor_class,
                    }
                }
            };
            (op, record)
        }
    };

    let perturbed = apply_perturbation(&rect.sequence, &op)?;
    let image = stack_patches(&perturbed)?;
    let record = PerturbRecord {
        source_id: source.id.to_string(),
        op: record,
        source_mac,
        interval,
        patches: n,
        seed,
    };
    Ok((image, record))
}
