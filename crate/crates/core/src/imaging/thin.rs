//! Iterative border-deletion thinning in the style of Lee et al. restricted
//! to 2-D: foreground uses 8-connectivity, background 4-connectivity.

use super::{BinaryMask, ImagingError};

/// One-pixel-wide skeleton of a single connected shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skeleton {
    mask: BinaryMask,
}

// E, NE, N, NW, W, SW, S, SE
const RING: [(i64, i64); 8] = [
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
];

impl Skeleton {
    /// Wraps an already thin pixel set without modifying it.
    pub fn from_mask(mask: BinaryMask) -> Self {
        Self { mask }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: &[(usize, usize)]) -> Self {
        let mut mask = BinaryMask::new(width, height);
        for &(r, c) in pixels {
            mask.set(r, c, true);
        }
        Self { mask }
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.mask
    }

    /// Pixels in row-major order.
    pub fn pixels(&self) -> Vec<(usize, usize)> {
        self.mask.foreground()
    }

    pub fn len(&self) -> usize {
        self.mask.count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Skeleton neighbours under m-adjacency: 4-neighbours, plus diagonal
    /// neighbours that are not already linked through a shared 4-neighbour.
    /// This removes the redundant triangles 8-adjacency creates at corners.
    pub fn neighbors(&self, r: usize, c: usize) -> Vec<(usize, usize)> {
        let (r, c) = (r as i64, c as i64);
        let m = &self.mask;
        let mut out = Vec::with_capacity(4);
        for &(dr, dc) in &RING {
            let (rr, cc) = (r + dr, c + dc);
            if !m.get_signed(rr, cc) {
                continue;
            }
            if dr != 0 && dc != 0 && (m.get_signed(r + dr, c) || m.get_signed(r, c + dc)) {
                continue;
            }
            out.push((rr as usize, cc as usize));
        }
        out
    }

    /// True when no 2x2 block is entirely foreground.
    pub fn is_one_pixel_wide(&self) -> bool {
        let m = &self.mask;
        for r in 0..m.height().saturating_sub(1) {
            for c in 0..m.width().saturating_sub(1) {
                if m.get(r, c) && m.get(r + 1, c) && m.get(r, c + 1) && m.get(r + 1, c + 1) {
                    return false;
                }
            }
        }
        true
    }
}

fn ring_bits(m: &BinaryMask, r: usize, c: usize) -> [bool; 8] {
    let mut bits = [false; 8];
    for (k, &(dr, dc)) in RING.iter().enumerate() {
        bits[k] = m.get_signed(r as i64 + dr, c as i64 + dc);
    }
    bits
}

/// Yokoi connectivity number for 8-connected foreground.
fn connectivity_number(x: &[bool; 8]) -> i32 {
    let nx = |k: usize| !x[k % 8] as i32;
    [0usize, 2, 4, 6]
        .iter()
        .map(|&k| nx(k) - nx(k) * nx(k + 1) * nx(k + 2))
        .sum()
}

fn is_simple(m: &BinaryMask, r: usize, c: usize) -> bool {
    connectivity_number(&ring_bits(m, r, c)) == 1
}

fn is_endpoint(m: &BinaryMask, r: usize, c: usize) -> bool {
    ring_bits(m, r, c).iter().filter(|&&b| b).count() == 1
}

/// Thins a single-component mask to a connected one-pixel-wide skeleton.
///
/// Each sweep visits the four border directions in turn; candidates are
/// collected first and then deleted one by one after re-checking simplicity,
/// so topology is preserved even when neighbouring candidates interact.
pub fn thin(mask: &BinaryMask) -> Result<Skeleton, ImagingError> {
    let components = mask.component_count();
    if components == 0 {
        return Err(ImagingError::EmptyMask);
    }
    if components > 1 {
        return Err(ImagingError::MultipleComponents(components));
    }
    let mut m = mask.clone();
    // N, S, E, W border types
    let borders: [(i64, i64); 4] = [(-1, 0), (1, 0), (0, 1), (0, -1)];
    let mut candidates = Vec::new();
    loop {
        let mut changed = false;
        for &(dr, dc) in &borders {
            candidates.clear();
            for (r, c) in m.foreground() {
                if m.get_signed(r as i64 + dr, c as i64 + dc) {
                    continue;
                }
                if is_endpoint(&m, r, c) || !is_simple(&m, r, c) {
                    continue;
                }
                candidates.push((r, c));
            }
            for &(r, c) in &candidates {
                if !is_endpoint(&m, r, c) && is_simple(&m, r, c) {
                    m.set(r, c, false);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    Ok(Skeleton { mask: m })
}
