//! Math kernels against hand-evaluated values and brute-force oracles.

use approx::assert_relative_eq;
use karyosim::detector::{
    energy, energy_loss, estimate_threshold, select_synthetic, total_loss, EasConfig,
};
use karyosim::metrics::{
    auc, classification_metrics, mmd_kid, psnr, ssim, Confusion, ScoredSample,
};
use karyosim::perturb::mac_score;
use karyosim::seed::rng_from_seed;
use karyosim::{GrayImage, MedialAxis};
use rand::Rng;

const TRIALS: usize = 200;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

// ------------------------------------------------------------------ oracles

fn energy_oracle(l: [f64; 2], t: f64) -> f64 {
    -t * ((l[0] / t).exp() + (l[1] / t).exp()).ln()
}

fn hinge_oracle(e: &[f64], y: &[u8], m_n: f64, m_ab: f64) -> f64 {
    let norm: Vec<f64> = e
        .iter()
        .zip(y)
        .filter(|p| *p.1 == 0)
        .map(|p| f64::max(0.0, p.0 - m_n).powi(2))
        .collect();
    let abn: Vec<f64> = e
        .iter()
        .zip(y)
        .filter(|p| *p.1 == 1)
        .map(|p| f64::max(0.0, m_ab - p.0).powi(2))
        .collect();
    let avg = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    avg(&norm) + avg(&abn)
}

fn ce_oracle(l: [f64; 2], y: u8) -> f64 {
    let p = l[y as usize].exp() / (l[0].exp() + l[1].exp());
    -p.ln()
}

/// Recall-closest threshold over every energy and one value below the
/// abnormal minimum; ties go to the smaller threshold.
fn threshold_oracle(e: &[f64], y: &[u8], level: f64) -> f64 {
    let abn: Vec<f64> = e
        .iter()
        .zip(y)
        .filter(|p| *p.1 == 1)
        .map(|p| *p.0)
        .collect();
    let lo = abn.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut cands: Vec<f64> = e.to_vec();
    if e.iter().all(|&v| v >= lo) {
        cands.push(lo - 1.0);
    }
    let recall = |t: f64| abn.iter().filter(|&&v| v > t).count() as f64 / abn.len() as f64;
    let mut best: Option<(f64, f64)> = None;
    for &t in &cands {
        let gap = (recall(t) - level).abs();
        best = match best {
            Some((g, bt)) if g < gap || (g == gap && bt <= t) => Some((g, bt)),
            _ => Some((gap, t)),
        };
    }
    best.unwrap().1
}

fn auc_oracle(s: &[ScoredSample]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for a in s.iter().filter(|x| x.label == 1) {
        for n in s.iter().filter(|x| x.label == 0) {
            den += 1.0;
            num += if a.score > n.score {
                1.0
            } else if a.score == n.score {
                0.5
            } else {
                0.0
            };
        }
    }
    num / den
}

fn psnr_oracle(a: &GrayImage, b: &GrayImage) -> f64 {
    let mut se = 0.0;
    for r in 0..a.height() {
        for c in 0..a.width() {
            se += (a.get(r, c) - b.get(r, c)).powi(2);
        }
    }
    let mse = se / (a.width() * a.height()) as f64;
    -10.0 * mse.log10()
}

/// Windowed SSIM with a separable Gaussian and explicit second moments.
fn ssim_oracle(a: &GrayImage, b: &GrayImage) -> f64 {
    let g1: Vec<f64> = (0..11)
        .map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp())
        .collect();
    let z: f64 = g1.iter().sum();
    let (c1, c2) = (1e-4, 9e-4);
    let mut vals = Vec::new();
    for r0 in 0..=a.height() - 11 {
        for c0 in 0..=a.width() - 11 {
            let wsum = |f: &dyn Fn(f64, f64) -> f64| {
                let mut s = 0.0;
                for i in 0..11 {
                    for j in 0..11 {
                        s += g1[i] * g1[j] / (z * z)
                            * f(a.get(r0 + i, c0 + j), b.get(r0 + i, c0 + j));
                    }
                }
                s
            };
            let (mx, my) = (wsum(&|x, _| x), wsum(&|_, y| y));
            let vx = wsum(&|x, _| (x - mx).powi(2));
            let vy = wsum(&|_, y| (y - my).powi(2));
            let cxy = wsum(&|x, y| (x - mx) * (y - my));
            vals.push(
                (2.0 * mx * my + c1) * (2.0 * cxy + c2)
                    / ((mx * mx + my * my + c1) * (vx + vy + c2)),
            );
        }
    }
    vals.iter().sum::<f64>() / vals.len() as f64
}

fn kid_oracle(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let k = |a: &Vec<f64>, b: &Vec<f64>| {
        let dot: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
        (dot / a.len() as f64 + 1.0).powi(3)
    };
    let (m, n) = (x.len() as f64, y.len() as f64);
    let mut kxx = 0.0;
    let mut kyy = 0.0;
    let mut kxy = 0.0;
    for (i, a) in x.iter().enumerate() {
        for (j, b) in x.iter().enumerate() {
            if i != j {
                kxx += k(a, b);
            }
        }
        for b in y {
            kxy += k(a, b);
        }
    }
    for (i, a) in y.iter().enumerate() {
        for (j, b) in y.iter().enumerate() {
            if i != j {
                kyy += k(a, b);
            }
        }
    }
    kxx / (m * (m - 1.0)) + kyy / (n * (n - 1.0)) - 2.0 * kxy / (m * n)
}

/// Literal Eq.-style MAC: walk the polyline to find the M equally spaced
/// arc-length points, then sum |1 − cos| against the chord direction.
fn mac_oracle(points: &[(f64, f64)], m: usize) -> f64 {
    let seg: Vec<f64> = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1))
        .collect();
    let total: f64 = seg.iter().sum();
    let at = |s: f64| -> (f64, f64) {
        let mut left = s;
        for (i, &l) in seg.iter().enumerate() {
            if left <= l || i == seg.len() - 1 {
                let f = if l > 0.0 { (left / l).min(1.0) } else { 0.0 };
                let (p, q) = (points[i], points[i + 1]);
                return (p.0 + f * (q.0 - p.0), p.1 + f * (q.1 - p.1));
            }
            left -= l;
        }
        *points.last().unwrap()
    };
    let p: Vec<(f64, f64)> = (0..m)
        .map(|k| at(total * k as f64 / (m - 1) as f64))
        .collect();
    let (a, b) = (points[0], *points.last().unwrap());
    let gl = (b.0 - a.0).hypot(b.1 - a.1);
    let mut s = 0.0;
    for i in 1..m {
        let d = (p[i].0 - p[i - 1].0, p[i].1 - p[i - 1].1);
        let dl = d.0.hypot(d.1);
        if dl > 0.0 {
            s += (1.0 - (d.0 * (b.0 - a.0) + d.1 * (b.1 - a.1)) / (dl * gl)).abs();
        }
    }
    100.0 * (1.0 - s / m as f64)
}

fn random_image(rng: &mut impl Rng, w: usize, h: usize) -> GrayImage {
    GrayImage::from_vec(w, h, (0..w * h).map(|_| rng.random::<f64>()).collect()).unwrap()
}

// ------------------------------------------------------------------ energy

pub fn energy_reference_values() {
    assert_relative_eq!(
        energy([0.0, 0.0], 1.0),
        -std::f64::consts::LN_2,
        max_relative = 1e-12
    );
    assert_relative_eq!(
        energy([5.0, 0.0], 1.0),
        -(5f64.exp() + 1.0).ln(),
        max_relative = 1e-12
    );
    assert_relative_eq!(energy([5.0, 0.0], 1.0), -5.0067153, epsilon = 1e-7);
    assert_relative_eq!(
        energy([0.0, 0.0], 2.0),
        -2.0 * std::f64::consts::LN_2,
        max_relative = 1e-12
    );
}

pub fn energy_matches_naive_log_sum_exp() {
    let mut rng = rng_from_seed(11);
    for _ in 0..TRIALS {
        let l = [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)];
        let t = rng.random_range(0.25..4.0);
        assert!(close(energy(l, t), energy_oracle(l, t)), "{l:?} t={t}");
    }
}

pub fn energy_loss_reference_values() {
    assert_eq!(energy_loss(&[-30.0, -3.0], &[0, 1], -27.0, -5.0), 0.0);
    assert_eq!(energy_loss(&[-20.0], &[0], -27.0, -5.0), 49.0);
    assert_eq!(
        energy_loss(&[-30.0, -20.0, -10.0], &[0, 0, 1], -27.0, -5.0),
        49.5
    );
}

pub fn energy_loss_matches_oracle() {
    let mut rng = rng_from_seed(12);
    for _ in 0..TRIALS {
        let n = rng.random_range(1..40);
        let e: Vec<f64> = (0..n).map(|_| rng.random_range(-40.0..5.0)).collect();
        let y: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        assert!(close(
            energy_loss(&e, &y, -27.0, -5.0),
            hinge_oracle(&e, &y, -27.0, -5.0)
        ));
    }
}

pub fn total_loss_reference_and_degeneracy() {
    let cfg = EasConfig {
        lambda: 0.1,
        ..Default::default()
    };
    let e = energy([0.0, 0.0], 1.0);
    let v = total_loss(&[[0.0, 0.0]], &[1], &[e], &cfg);
    // E = −ln 2 lies above the abnormal margin, so only cross-entropy remains
    assert_relative_eq!(v, std::f64::consts::LN_2, max_relative = 1e-12);
    let below = total_loss(&[[0.0, 0.0]], &[1], &[-7.0], &cfg);
    assert_relative_eq!(
        below,
        std::f64::consts::LN_2 + 0.1 * 4.0,
        max_relative = 1e-12
    );

    let plain = EasConfig {
        lambda: 0.0,
        ..Default::default()
    };
    let l = [[1.5, -0.5], [0.2, 0.9]];
    let ce = (ce_oracle(l[0], 0) + ce_oracle(l[1], 1)) / 2.0;
    assert_relative_eq!(
        total_loss(&l, &[0, 1], &[-100.0, 100.0], &plain),
        ce,
        max_relative = 1e-12
    );

    // confident, in-margin samples
    let conf = [[40.0, 0.0], [0.0, 8.0]];
    let es: Vec<f64> = conf.iter().map(|&l| energy(l, 1.0)).collect();
    let mut cfg_wide = cfg.clone();
    cfg_wide.m_ab = -9.0;
    assert!(total_loss(&conf, &[0, 1], &es, &cfg_wide) < 1e-3);
}

pub fn total_loss_matches_oracle() {
    let mut rng = rng_from_seed(13);
    for _ in 0..TRIALS {
        let n = rng.random_range(1..30);
        let logits: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)])
            .collect();
        let y: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let cfg = EasConfig {
            lambda: rng.random_range(0.0..1.0),
            ..Default::default()
        };
        let e: Vec<f64> = logits
            .iter()
            .map(|&l| energy_oracle(l, cfg.temperature))
            .collect();
        let ce = logits
            .iter()
            .zip(&y)
            .map(|(&l, &t)| ce_oracle(l, t))
            .sum::<f64>()
            / n as f64;
        let expect = ce + cfg.lambda * hinge_oracle(&e, &y, cfg.m_n, cfg.m_ab);
        assert!(close(total_loss(&logits, &y, &e, &cfg), expect));
    }
}

// ------------------------------------------------------------------ sampling

pub fn threshold_reference_values() {
    let e = [-12.0, -8.0, -3.0, 1.0, -30.0, -28.0, -26.0];
    let y = [1, 1, 1, 1, 0, 0, 0];
    assert_eq!(estimate_threshold(&e, &y, 0.7).unwrap(), -12.0);
    let t = estimate_threshold(&e, &y, 1.0).unwrap();
    assert!(t < -12.0);
    assert_eq!(t, -30.0);
    let single = estimate_threshold(&[0.0], &[1], 0.5).unwrap();
    assert!(single < 0.0);
}

pub fn threshold_matches_exhaustive_search() {
    let mut rng = rng_from_seed(14);
    for _ in 0..TRIALS {
        let n = rng.random_range(2..50);
        // coarse grid forces ties
        let e: Vec<f64> = (0..n).map(|_| rng.random_range(-30..5) as f64).collect();
        let mut y: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        y[0] = 1;
        let level = rng.random_range(0.0..=1.0);
        assert_eq!(
            estimate_threshold(&e, &y, level).unwrap(),
            threshold_oracle(&e, &y, level),
            "{e:?} {y:?} {level}"
        );
    }
}

pub fn selection_reference_values() {
    assert_eq!(select_synthetic(&[-20.0, -11.0, -2.0], -12.0), vec![1, 2]);
    assert!(select_synthetic(&[-20.0, 3.0], f64::INFINITY).is_empty());
}

pub fn selection_matches_filter() {
    let mut rng = rng_from_seed(15);
    for _ in 0..TRIALS {
        let pool: Vec<f64> = (0..1000).map(|_| rng.random_range(-40.0..10.0)).collect();
        let tau = rng.random_range(-40.0..10.0);
        let mut expect = Vec::new();
        for (i, &e) in pool.iter().enumerate() {
            if e > tau {
                expect.push(i);
            }
        }
        assert_eq!(select_synthetic(&pool, tau), expect);
    }
}

// ------------------------------------------------------------------ MAC

pub fn mac_reference_values() {
    let line = MedialAxis::new(vec![(0.0, 0.0), (10.0, 0.0)]).unwrap();
    for m in 2..10 {
        assert_relative_eq!(mac_score(&line, m).unwrap(), 100.0, epsilon = 1e-12);
    }
    let corner = MedialAxis::new(vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0)]).unwrap();
    let d = 1.0 - std::f64::consts::FRAC_1_SQRT_2;
    assert_relative_eq!(
        mac_score(&corner, 3).unwrap(),
        (1.0 - 2.0 * d / 3.0) * 100.0,
        max_relative = 1e-9
    );
    assert_relative_eq!(mac_score(&corner, 3).unwrap(), 80.474, epsilon = 1e-3);
}

pub fn mac_matches_oracle_on_random_polylines() {
    let mut rng = rng_from_seed(16);
    for _ in 0..TRIALS {
        let n = rng.random_range(2..12);
        let mut p = vec![(0.0, 0.0)];
        for _ in 1..n {
            let last = *p.last().unwrap();
            p.push((
                last.0 + rng.random_range(0.5..3.0),
                last.1 + rng.random_range(-2.0..2.0),
            ));
        }
        let m = rng.random_range(2..12);
        let axis = MedialAxis::new(p.clone()).unwrap();
        let got = mac_score(&axis, m).unwrap();
        assert!((got - mac_oracle(&p, m)).abs() < 1e-9, "{p:?} m={m}");
        assert!((-100.0..=100.0).contains(&got));
    }
}

// ------------------------------------------------------------------ metrics

pub fn classification_reference_values() {
    let m = classification_metrics(&Confusion {
        tp: 7,
        fn_: 3,
        tn: 90,
        fp: 10,
    });
    assert_relative_eq!(m.sen.unwrap(), 0.7, max_relative = 1e-12);
    assert_relative_eq!(m.spe.unwrap(), 0.9, max_relative = 1e-12);
    assert_relative_eq!(m.pre_ab.unwrap(), 7.0 / 17.0, max_relative = 1e-12);
    assert_relative_eq!(m.acc.unwrap(), 97.0 / 110.0, max_relative = 1e-12);
    assert_relative_eq!(m.f1.unwrap(), 0.51852, epsilon = 1e-5);
    let perfect = classification_metrics(&Confusion {
        tp: 5,
        fn_: 0,
        tn: 5,
        fp: 0,
    });
    for v in [
        perfect.acc,
        perfect.sen,
        perfect.spe,
        perfect.pre_ab,
        perfect.pre_n,
        perfect.f1,
    ] {
        assert_eq!(v, Some(1.0));
    }
    assert_eq!(
        classification_metrics(&Confusion {
            tp: 0,
            fp: 0,
            tn: 4,
            fn_: 2
        })
        .pre_ab,
        None
    );
}

pub fn classification_matches_label_counting() {
    let mut rng = rng_from_seed(17);
    for _ in 0..TRIALS {
        let n = rng.random_range(1..200);
        let truth: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let pred: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let count = |t: u8, p: u8| {
            truth
                .iter()
                .zip(&pred)
                .filter(|(&a, &b)| a == t && b == p)
                .count() as f64
        };
        let (tp, fp, tn, fn_) = (count(1, 1), count(0, 1), count(0, 0), count(1, 0));
        let m = classification_metrics(&Confusion::from_labels(&truth, &pred));
        let div = |a: f64, b: f64| if b == 0.0 { None } else { Some(a / b) };
        let cmp = |got: Option<f64>, want: Option<f64>| match (got, want) {
            (Some(g), Some(w)) => close(g, w),
            (None, None) => true,
            _ => false,
        };
        assert!(cmp(m.acc, div(tp + tn, n as f64)));
        assert!(cmp(m.sen, div(tp, tp + fn_)));
        assert!(cmp(m.spe, div(tn, tn + fp)));
        assert!(cmp(m.pre_ab, div(tp, tp + fp)));
        assert!(cmp(m.pre_n, div(tn, tn + fn_)));
        let f1 = if tp + fp == 0.0 || tp + fn_ == 0.0 {
            None
        } else {
            Some(2.0 * tp / (2.0 * tp + fp + fn_))
        };
        assert!(cmp(m.f1, f1));
    }
}

pub fn auc_reference_values() {
    let s = |v: &[(f64, u8)]| {
        v.iter()
            .map(|&(score, label)| ScoredSample { score, label })
            .collect::<Vec<_>>()
    };
    assert_eq!(
        auc(&s(&[(0.1, 0), (0.2, 0), (0.5, 1), (0.9, 1)])).unwrap(),
        1.0
    );
    assert_eq!(auc(&s(&[(0.3, 0), (0.3, 0), (0.3, 1)])).unwrap(), 0.5);
    assert_relative_eq!(
        auc(&s(&[(0.1, 0), (0.4, 0), (0.35, 1), (0.8, 1)])).unwrap(),
        0.75,
        max_relative = 1e-12
    );
}

pub fn auc_matches_pair_counting() {
    let mut rng = rng_from_seed(18);
    for _ in 0..TRIALS {
        let n = rng.random_range(2..80);
        let mut s: Vec<ScoredSample> = (0..n)
            .map(|_| ScoredSample {
                score: rng.random_range(0..10) as f64,
                label: rng.random_range(0..2),
            })
            .collect();
        s[0].label = 0;
        s[1].label = 1;
        assert!(close(auc(&s).unwrap(), auc_oracle(&s)));
    }
}

pub fn psnr_reference_values() {
    let a = GrayImage::filled(8, 8, 0.0);
    let b = GrayImage::filled(8, 8, 1.0);
    assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
    assert_relative_eq!(psnr(&a, &b, 1.0).unwrap(), 0.0, epsilon = 1e-12);
    let c = GrayImage::filled(8, 8, 1.0 / 255.0);
    assert_relative_eq!(
        psnr(&a, &c, 1.0).unwrap(),
        20.0 * 255f64.log10(),
        max_relative = 1e-12
    );
    assert_relative_eq!(psnr(&a, &c, 1.0).unwrap(), 48.131, epsilon = 1e-3);
}

pub fn psnr_matches_oracle() {
    let mut rng = rng_from_seed(19);
    for _ in 0..TRIALS {
        let (w, h) = (rng.random_range(1..20), rng.random_range(1..20));
        let (a, b) = (random_image(&mut rng, w, h), random_image(&mut rng, w, h));
        assert!(close(psnr(&a, &b, 1.0).unwrap(), psnr_oracle(&a, &b)));
    }
}

pub fn ssim_reference_values() {
    let mut rng = rng_from_seed(20);
    let a = random_image(&mut rng, 16, 16);
    assert_relative_eq!(ssim(&a, &a, 1.0).unwrap(), 1.0, max_relative = 1e-12);
    let z = GrayImage::filled(16, 16, 0.0);
    let o = GrayImage::filled(16, 16, 1.0);
    assert_relative_eq!(
        ssim(&z, &o, 1.0).unwrap(),
        1e-4 / (1.0 + 1e-4),
        max_relative = 1e-9
    );
}

pub fn ssim_matches_oracle_and_is_symmetric() {
    let mut rng = rng_from_seed(21);
    for _ in 0..TRIALS {
        let (w, h) = (rng.random_range(11..16), rng.random_range(11..16));
        let a = random_image(&mut rng, w, h);
        let mix = rng.random_range(0.0..1.0);
        let b = GrayImage::from_vec(
            w,
            h,
            a.pixels()
                .iter()
                .map(|&v| (mix * v + (1.0 - mix) * rng.random::<f64>()).clamp(0.0, 1.0))
                .collect(),
        )
        .unwrap();
        let v = ssim(&a, &b, 1.0).unwrap();
        assert!(close(v, ssim_oracle(&a, &b)));
        assert!(close(v, ssim(&b, &a, 1.0).unwrap()));
    }
}

pub fn kid_reference_values() {
    let x = vec![vec![0.0], vec![0.0]];
    let y = vec![vec![1.0], vec![1.0]];
    assert_relative_eq!(mmd_kid(&x, &y).unwrap(), 7.0, max_relative = 1e-12);
    let mut rng = rng_from_seed(22);
    let s: Vec<Vec<f64>> = (0..10)
        .map(|_| (0..4).map(|_| rng.random()).collect())
        .collect();
    assert!(mmd_kid(&s, &s).unwrap() <= 1e-9);
}

pub fn kid_matches_double_sum() {
    let mut rng = rng_from_seed(23);
    for _ in 0..TRIALS {
        let d = rng.random_range(1..6);
        let x: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..d).map(|_| rng.random()).collect())
            .collect();
        let y: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..d).map(|_| rng.random_range(0.0..1.5)).collect())
            .collect();
        let got = mmd_kid(&x, &y).unwrap();
        assert!((got - kid_oracle(&x, &y)).abs() <= 1e-12 * got.abs().max(1.0));
    }
}
