//! Rotated rectangular patches along the medial axis.

use super::{BinaryMask, GrayImage, ImagingError, BACKGROUND};

/// One `length x width` segment, row-major, rows running along the axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub center: (f64, f64),
    /// Tangent direction in radians, measured from the row axis towards the
    /// column axis.
    pub angle: f64,
    pub pixels: Vec<f64>,
}

impl Patch {
    /// The patch with its rows in reverse order (flipped along the axis).
    pub fn flipped_along_axis(&self, width: usize) -> Patch {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for row in self.pixels.chunks(width).rev() {
            pixels.extend_from_slice(row);
        }
        Patch {
            center: self.center,
            angle: self.angle,
            pixels,
        }
    }
}

/// Ordered congruent patches; every patch is `length x width`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSequence {
    pub length: usize,
    pub width: usize,
    pub patches: Vec<Patch>,
}

impl PatchSequence {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// Patch `i` as a standalone image.
    pub fn patch_image(&self, i: usize) -> GrayImage {
        GrayImage::from_vec_clamped(self.width, self.length, self.patches[i].pixels.clone())
            .expect("patch dimensions are consistent")
    }
}

fn unit(v: (f64, f64)) -> (f64, f64) {
    let n = (v.0 * v.0 + v.1 * v.1).sqrt();
    if n == 0.0 {
        (1.0, 0.0)
    } else {
        (v.0 / n, v.1 / n)
    }
}

/// Unit tangents from neighbouring centres (central differences inside,
/// one-sided at the ends; vertical for a lone centre).
fn tangents(centers: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let n = centers.len();
    (0..n)
        .map(|i| {
            if n == 1 {
                return (1.0, 0.0);
            }
            let a = centers[i.saturating_sub(1)];
            let b = centers[(i + 1).min(n - 1)];
            unit((b.0 - a.0, b.1 - a.1))
        })
        .collect()
}

/// Foreground extent through `p` along direction `n`, in pixels.
fn perpendicular_extent(mask: &BinaryMask, p: (f64, f64), n: (f64, f64)) -> f64 {
    let inside = |q: (f64, f64)| mask.get_signed(q.0.round() as i64, q.1.round() as i64);
    if !inside(p) {
        return 0.0;
    }
    let limit = (mask.width() + mask.height()) as f64;
    let step = 1.0;
    let mut total = 1.0;
    for sign in [-1.0, 1.0] {
        let mut d = 0.0;
        while d + step < limit
            && inside((p.0 + sign * (d + step) * n.0, p.1 + sign * (d + step) * n.1))
        {
            d += step;
        }
        total += d;
    }
    total
}

/// Resamples the image into one rotated patch per centre.
///
/// Patch height is `length`; the shared width is the largest foreground
/// extent perpendicular to the axis over all centres plus a 4 px margin.
pub fn extract_patches(
    image: &GrayImage,
    mask: &BinaryMask,
    centers: &[(f64, f64)],
    length: usize,
) -> Result<PatchSequence, ImagingError> {
    if image.width() != mask.width() || image.height() != mask.height() {
        return Err(ImagingError::DimensionMismatch {
            width: mask.width(),
            height: mask.height(),
            len: image.pixels().len(),
        });
    }
    if length == 0 {
        return Err(ImagingError::InvalidInterval(0.0));
    }
    if centers.is_empty() {
        return Err(ImagingError::EmptySequence);
    }
    let tans = tangents(centers);
    let normals: Vec<(f64, f64)> = tans.iter().map(|t| (-t.1, t.0)).collect();
    let extent = centers
        .iter()
        .zip(&normals)
        .map(|(&p, &n)| perpendicular_extent(mask, p, n))
        .fold(0.0, f64::max);
    let width = extent.ceil() as usize + 4;
    let (half_l, half_w) = ((length / 2) as f64, (width / 2) as f64);
    let patches = centers
        .iter()
        .zip(tans.iter().zip(&normals))
        .map(|(&p, (&t, &n))| {
            let mut pixels = Vec::with_capacity(length * width);
            for u in 0..length {
                let a = u as f64 - half_l;
                for v in 0..width {
                    let b = v as f64 - half_w;
                    let r = p.0 + a * t.0 + b * n.0;
                    let c = p.1 + a * t.1 + b * n.1;
                    pixels.push(image.bilinear(r, c, BACKGROUND));
                }
            }
            Patch {
                center: p,
                angle: t.1.atan2(t.0),
                pixels,
            }
        })
        .collect();
    Ok(PatchSequence {
        length,
        width,
        patches,
    })
}

/// Concatenates patches top to bottom: rows `[i*l, (i+1)*l)` hold patch `i`.
pub fn stack_patches(seq: &PatchSequence) -> Result<GrayImage, ImagingError> {
    if seq.is_empty() {
        return Err(ImagingError::EmptySequence);
    }
    let mut px = Vec::with_capacity(seq.len() * seq.length * seq.width);
    for p in &seq.patches {
        px.extend_from_slice(&p.pixels);
    }
    GrayImage::from_vec_clamped(seq.width, seq.len() * seq.length, px)
}
