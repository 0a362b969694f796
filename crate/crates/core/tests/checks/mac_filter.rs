//! MAC filtering of rendered phantoms across a curvature sweep.

use karyosim::perturb::{
    chromosome_axis, filter_by_mac, mac_score, RectifyParams, DEFAULT_MAC_SAMPLES,
};
use karyosim::phantom::{ChromosomeSpec, Phantom, PhantomConfig, PhantomRegistry};
use karyosim::MedialAxis;

fn render(registry: &PhantomRegistry, k: usize, bend: f64) -> Phantom {
    let class = (k % 4) as u32;
    let p = registry.profile(class).unwrap();
    let spec = ChromosomeSpec {
        class,
        length: 40.0 + (k % 7) as f64,
        width: 7.0,
        bend: if k % 2 == 0 { bend } else { -bend },
        offset: (0.0, 0.0),
        noise_std: 0.02,
        seed: 1000 + k as u64,
    };
    registry.render(&spec, &p.intensity, &p.constriction)
}

/// Independent MAC: resample by arc length with a fresh walk of the
/// polyline and sum the literal deviation terms.
fn oracle_mac(axis: &MedialAxis, m: usize) -> f64 {
    let pts = axis.points();
    let mut cum = vec![0.0];
    for w in pts.windows(2) {
        cum.push(
            cum.last().unwrap() + ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt(),
        );
    }
    let total = *cum.last().unwrap();
    let sample = |s: f64| {
        let j = cum.partition_point(|&c| c < s).clamp(1, pts.len() - 1);
        let span = cum[j] - cum[j - 1];
        let f = if span > 0.0 {
            (s - cum[j - 1]) / span
        } else {
            0.0
        };
        (
            pts[j - 1].0 + f * (pts[j].0 - pts[j - 1].0),
            pts[j - 1].1 + f * (pts[j].1 - pts[j - 1].1),
        )
    };
    let q: Vec<(f64, f64)> = (0..m)
        .map(|k| sample(total * k as f64 / (m - 1) as f64))
        .collect();
    let (a, b) = (pts[0], pts[pts.len() - 1]);
    let g = ((b.0 - a.0), (b.1 - a.1));
    let gn = g.0.hypot(g.1);
    let dev: f64 = q
        .windows(2)
        .map(|w| {
            let d = (w[1].0 - w[0].0, w[1].1 - w[0].1);
            let dn = d.0.hypot(d.1);
            if dn == 0.0 {
                0.0
            } else {
                (1.0 - (d.0 * g.0 + d.1 * g.1) / (dn * gn)).abs()
            }
        })
        .sum();
    100.0 * (1.0 - dev / m as f64)
}

pub fn filter_matches_oracle_on_curvature_sweep() {
    let registry = PhantomRegistry::new(PhantomConfig::default()).unwrap();
    let params = RectifyParams::default();
    let mut candidates = Vec::new();
    for k in 0..200 {
        let bend = 5.0 * k as f64 / 199.0;
        let p = render(&registry, k, bend);
        let (axis, _) = chromosome_axis(&p.image, &params).unwrap();
        candidates.push((k, axis));
    }
    let expect: Vec<usize> = candidates
        .iter()
        .filter(|(_, a)| oracle_mac(a, DEFAULT_MAC_SAMPLES) > 85.0)
        .map(|(k, _)| *k)
        .collect();
    let kept: Vec<usize> = filter_by_mac(candidates, 85.0, DEFAULT_MAC_SAMPLES)
        .into_iter()
        .map(|(k, _)| k)
        .collect();
    assert_eq!(kept, expect);
    // the sweep must actually straddle the threshold
    assert!(kept.len() > 20 && kept.len() < 180, "kept {}", kept.len());
}

pub fn straight_phantoms_score_full_marks() {
    let registry = PhantomRegistry::new(PhantomConfig::default()).unwrap();
    let params = RectifyParams::default();
    for k in 0..20 {
        let p = render(&registry, k, 0.0);
        let truth = mac_score(&p.axis, DEFAULT_MAC_SAMPLES).unwrap();
        assert!((truth - 100.0).abs() <= 0.5, "ground truth {truth}");
        let (axis, _) = chromosome_axis(&p.image, &params).unwrap();
        // the extracted axis carries skeleton quantisation on top
        let got = mac_score(&axis, DEFAULT_MAC_SAMPLES).unwrap();
        assert!(got >= 99.0, "phantom {k}: {got}");
    }
}
