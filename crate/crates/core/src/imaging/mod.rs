//! Raster types and chromosome rectification.
//!
//! A chromosome image is binarized, thinned to a skeleton, reduced to a
//! single ordered medial axis, and resampled into congruent rotated patches
//! centred along that axis. Stacking the patches yields the rearranged
//! (straightened) chromosome.

mod axis;
mod patches;
pub mod pgm;
mod thin;

pub use axis::{extract_axis, sample_axis, AxisParams};
pub use patches::{extract_patches, stack_patches, Patch, PatchSequence};
pub use thin::{thin, Skeleton};

use thiserror::Error;

/// Background intensity used for samples that fall outside an image.
pub const BACKGROUND: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum ImagingError {
    #[error("image dimensions {width}x{height} do not match {len} pixels")]
    DimensionMismatch {
        width: usize,
        height: usize,
        len: usize,
    },
    #[error("pixel {index} has intensity {value} outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("threshold {0} must lie in (0, 1)")]
    InvalidThreshold(f64),
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("mask has {0} foreground components, expected one")]
    MultipleComponents(usize),
    #[error("skeleton path has fewer than two points")]
    DegenerateSkeleton,
    #[error("axis arc length {length:.3} is shorter than the sampling interval {interval}")]
    AxisTooShort { length: f64, interval: f64 },
    #[error("sampling interval must be positive, got {0}")]
    InvalidInterval(f64),
    #[error("patch sequence is empty")]
    EmptySequence,
    #[error("{0}")]
    Pgm(String),
}

/// Row-major grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            pixels: vec![value.clamp(0.0, 1.0); width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self, ImagingError> {
        if width * height != pixels.len() {
            return Err(ImagingError::DimensionMismatch {
                width,
                height,
                len: pixels.len(),
            });
        }
        if let Some((index, &value)) = pixels
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(ImagingError::OutOfRange { index, value });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Builds an image from arbitrary values, clamping each into `[0, 1]`
    /// (non-finite values become background).
    pub fn from_vec_clamped(
        width: usize,
        height: usize,
        mut pixels: Vec<f64>,
    ) -> Result<Self, ImagingError> {
        for p in &mut pixels {
            *p = if p.is_finite() {
                p.clamp(0.0, 1.0)
            } else {
                BACKGROUND
            };
        }
        Self::from_vec(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.pixels[r * self.width + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.pixels[r * self.width + c] = v.clamp(0.0, 1.0);
    }

    /// Bilinear sample at sub-pixel `(r, c)`; taps outside the image read as
    /// `fill`.
    pub fn bilinear(&self, r: f64, c: f64, fill: f64) -> f64 {
        let r0 = r.floor();
        let c0 = c.floor();
        let fr = r - r0;
        let fc = c - c0;
        let (r0, c0) = (r0 as i64, c0 as i64);
        let tap = |rr: i64, cc: i64| -> f64 {
            if rr < 0 || cc < 0 || rr >= self.height as i64 || cc >= self.width as i64 {
                fill
            } else {
                self.pixels[rr as usize * self.width + cc as usize]
            }
        };
        // exact taps avoid blending with out-of-range neighbours
        let top = if fc == 0.0 {
            tap(r0, c0)
        } else {
            tap(r0, c0) * (1.0 - fc) + tap(r0, c0 + 1) * fc
        };
        if fr == 0.0 {
            return top;
        }
        let bottom = if fc == 0.0 {
            tap(r0 + 1, c0)
        } else {
            tap(r0 + 1, c0) * (1.0 - fc) + tap(r0 + 1, c0 + 1) * fc
        };
        top * (1.0 - fr) + bottom * fr
    }

    /// Copies the image onto a `width x height` canvas filled with `fill`,
    /// centred; parts that do not fit are cropped symmetrically.
    pub fn center_on_canvas(&self, width: usize, height: usize, fill: f64) -> GrayImage {
        let mut out = GrayImage::filled(width, height, fill);
        let off_r = (height as i64 - self.height as i64).div_euclid(2);
        let off_c = (width as i64 - self.width as i64).div_euclid(2);
        for r in 0..self.height {
            let rr = r as i64 + off_r;
            if rr < 0 || rr >= height as i64 {
                continue;
            }
            for c in 0..self.width {
                let cc = c as i64 + off_c;
                if cc < 0 || cc >= width as i64 {
                    continue;
                }
                out.pixels[rr as usize * width + cc as usize] = self.get(r, c);
            }
        }
        out
    }

    /// Sub-image `[r0, r0+h) x [c0, c0+w)`, reading `fill` outside the image.
    pub fn crop(&self, r0: i64, c0: i64, h: usize, w: usize, fill: f64) -> GrayImage {
        let mut out = GrayImage::filled(w, h, fill);
        for r in 0..h {
            for c in 0..w {
                let (rr, cc) = (r0 + r as i64, c0 + c as i64);
                if rr >= 0 && cc >= 0 && (rr as usize) < self.height && (cc as usize) < self.width {
                    out.pixels[r * w + c] = self.get(rr as usize, cc as usize);
                }
            }
        }
        out
    }

    /// Rotates by `angle` radians about `(center_r, center_c)` with bilinear
    /// resampling. A positive angle maps the row axis towards the column axis.
    pub fn rotate(&self, angle: f64, center_r: f64, center_c: f64, fill: f64) -> GrayImage {
        let (s, c) = angle.sin_cos();
        let mut out = GrayImage::filled(self.width, self.height, fill);
        for r in 0..self.height {
            for col in 0..self.width {
                let dr = r as f64 - center_r;
                let dc = col as f64 - center_c;
                // inverse rotation
                let sr = center_r + c * dr + s * dc;
                let sc = center_c - s * dr + c * dc;
                out.pixels[r * self.width + col] = self.bilinear(sr, sc, fill);
            }
        }
        out
    }

    pub fn mean_abs_diff(&self, other: &GrayImage) -> Option<f64> {
        if self.width != other.width || self.height != other.height || self.pixels.is_empty() {
            return None;
        }
        let s: f64 = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b).abs())
            .sum();
        Some(s / self.pixels.len() as f64)
    }
}

/// Row-major foreground mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self, ImagingError> {
        if width * height != bits.len() {
            return Err(ImagingError::DimensionMismatch {
                width,
                height,
                len: bits.len(),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.width + c]
    }

    /// Like [`get`](Self::get) but false outside the mask.
    #[inline]
    pub fn get_signed(&self, r: i64, c: i64) -> bool {
        r >= 0
            && c >= 0
            && (r as usize) < self.height
            && (c as usize) < self.width
            && self.get(r as usize, c as usize)
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.bits[r * self.width + c] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Foreground coordinates in row-major order.
    pub fn foreground(&self) -> Vec<(usize, usize)> {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| (i / self.width, i % self.width))
            .collect()
    }

    /// 8-connected component label per pixel (`0` for background, labels
    /// from 1 in raster order of first appearance) and the component sizes.
    pub fn components(&self) -> (Vec<usize>, Vec<usize>) {
        let mut label = vec![0usize; self.bits.len()];
        let mut sizes = Vec::new();
        let mut stack = Vec::new();
        for start in 0..self.bits.len() {
            if !self.bits[start] || label[start] != 0 {
                continue;
            }
            sizes.push(0);
            let id = sizes.len();
            label[start] = id;
            stack.push(start);
            while let Some(i) = stack.pop() {
                sizes[id - 1] += 1;
                let (r, c) = ((i / self.width) as i64, (i % self.width) as i64);
                for dr in -1..=1 {
                    for dc in -1..=1 {
                        let (rr, cc) = (r + dr, c + dc);
                        if self.get_signed(rr, cc) {
                            let j = rr as usize * self.width + cc as usize;
                            if label[j] == 0 {
                                label[j] = id;
                                stack.push(j);
                            }
                        }
                    }
                }
            }
        }
        (label, sizes)
    }

    /// Number of 8-connected foreground components.
    pub fn component_count(&self) -> usize {
        self.components().1.len()
    }

    /// Mask of the largest 8-connected component (first in raster order on
    /// ties); empty masks are returned unchanged.
    pub fn largest_component(&self) -> BinaryMask {
        let (label, sizes) = self.components();
        let Some(best) = (0..sizes.len()).max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a)))
        else {
            return self.clone();
        };
        let bits = label.iter().map(|&l| l == best + 1).collect();
        BinaryMask {
            width: self.width,
            height: self.height,
            bits,
        }
    }

    /// Dilation with a Euclidean disk of the given radius.
    pub fn dilate(&self, radius: usize) -> BinaryMask {
        let rad = radius as i64;
        let mut out = BinaryMask::new(self.width, self.height);
        for (r, c) in self.foreground() {
            for dr in -rad..=rad {
                for dc in -rad..=rad {
                    if dr * dr + dc * dc > rad * rad {
                        continue;
                    }
                    let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                    if rr >= 0
                        && cc >= 0
                        && (rr as usize) < self.height
                        && (cc as usize) < self.width
                    {
                        out.set(rr as usize, cc as usize, true);
                    }
                }
            }
        }
        out
    }

    /// Vertical extent (rows) of the foreground, `None` when empty.
    pub fn row_extent(&self) -> Option<(usize, usize)> {
        let fg = self.foreground();
        let first = fg.first()?.0;
        let last = fg.last()?.0;
        Some((first, last))
    }

    pub fn disagreement(&self, other: &BinaryMask) -> Option<usize> {
        if self.width != other.width || self.height != other.height {
            return None;
        }
        Some(
            self.bits
                .iter()
                .zip(&other.bits)
                .filter(|(a, b)| a != b)
                .count(),
        )
    }
}

/// Foreground is darker than the threshold (dark chromosome on light
/// background).
pub fn binarize(image: &GrayImage, threshold: f64) -> Result<BinaryMask, ImagingError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(ImagingError::InvalidThreshold(threshold));
    }
    let bits = image.pixels.iter().map(|&p| p < threshold).collect();
    Ok(BinaryMask {
        width: image.width,
        height: image.height,
        bits,
    })
}

/// Ordered polyline along a chromosome's centreline, topmost endpoint first.
#[derive(Debug, Clone, PartialEq)]
pub struct MedialAxis {
    points: Vec<(f64, f64)>,
}

impl MedialAxis {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, ImagingError> {
        if points.len() < 2 {
            return Err(ImagingError::DegenerateSkeleton);
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn first(&self) -> (f64, f64) {
        self.points[0]
    }

    pub fn last(&self) -> (f64, f64) {
        *self.points.last().unwrap()
    }

    pub fn reversed(&self) -> MedialAxis {
        let mut points = self.points.clone();
        points.reverse();
        MedialAxis { points }
    }

    /// Cumulative arc length at every vertex; the first entry is 0.
    pub fn cumulative_lengths(&self) -> Vec<f64> {
        let mut acc = Vec::with_capacity(self.points.len());
        let mut total = 0.0;
        acc.push(0.0);
        for w in self.points.windows(2) {
            total += dist(w[0], w[1]);
            acc.push(total);
        }
        acc
    }

    pub fn arc_length(&self) -> f64 {
        *self.cumulative_lengths().last().unwrap()
    }

    /// Point at arc length `s`, clamped to the ends.
    pub fn point_at(&self, s: f64) -> (f64, f64) {
        let cum = self.cumulative_lengths();
        point_at_with(&self.points, &cum, s)
    }

    /// Points at the given arc lengths; precomputes the length table once.
    pub fn points_at(&self, positions: &[f64]) -> Vec<(f64, f64)> {
        let cum = self.cumulative_lengths();
        positions
            .iter()
            .map(|&s| point_at_with(&self.points, &cum, s))
            .collect()
    }

    pub fn map_points(&self, f: impl Fn((f64, f64)) -> (f64, f64)) -> MedialAxis {
        MedialAxis {
            points: self.points.iter().map(|&p| f(p)).collect(),
        }
    }
}

fn point_at_with(points: &[(f64, f64)], cum: &[f64], s: f64) -> (f64, f64) {
    let total = *cum.last().unwrap();
    if s <= 0.0 {
        return points[0];
    }
    if s >= total {
        return *points.last().unwrap();
    }
    // first vertex with cum > s
    let k = cum.partition_point(|&v| v <= s);
    let (a, b) = (points[k - 1], points[k]);
    let seg = cum[k] - cum[k - 1];
    if seg <= 0.0 {
        return a;
    }
    let t = (s - cum[k - 1]) / seg;
    (a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t)
}

#[inline]
pub(crate) fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}
