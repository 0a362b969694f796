//! Laws of the mean-reverting SDE: schedule, forward marginals, reverse chain.

use karyosim::diffusion::{
    exact_score, forward_sample, marginal, restore_raw, reverse_step, Denoiser, DenoiserArch,
    NoiseSchedule,
};
use karyosim::seed::rng_from_seed;
use karyosim::GrayImage;
use rand_distr::{Distribution, StandardNormal};

pub fn schedule_identity_holds_for_many_settings() {
    for steps in [2, 10, 100, 1000] {
        for sigma_max in [0.01, 0.5, 10.0] {
            for lambda in [0.004, 0.5, 2.0] {
                let sch = NoiseSchedule::new(steps, sigma_max, lambda).unwrap();
                for i in 1..=steps {
                    let lhs = 2.0 * lambda * lambda * sch.theta(i);
                    let rhs = sch.sigma(i).powi(2);
                    assert!(
                        (lhs / rhs - 1.0).abs() < 1e-12,
                        "T={steps} σ={sigma_max} λ={lambda} i={i}"
                    );
                }
            }
        }
    }
}

pub fn terminal_decay_of_the_reference_schedule() {
    let sch = NoiseSchedule::new(100, 10.0, 2.0).unwrap();
    // left Riemann sum of σ²/(2λ²) over the sine ramp
    let oracle: f64 = (1..=100)
        .map(|i| {
            (100.0
                * (std::f64::consts::FRAC_PI_2 * i as f64 / 100.0)
                    .sin()
                    .powi(2))
                / 8.0
                / 100.0
        })
        .sum();
    assert!((sch.theta_bar(100) - oracle).abs() < 1e-9);
    assert!((-oracle).exp() < 0.01);
}

pub fn marginal_at_ln2() {
    // find a schedule/step with θ̄ = ln 2 by scaling λ
    let base = NoiseSchedule::new(50, 1.0, 1.0).unwrap();
    let i = 30;
    let lambda = (base.theta_bar(i) / std::f64::consts::LN_2).sqrt();
    let sch = NoiseSchedule::new(50, 1.0, lambda).unwrap();
    assert!((sch.theta_bar(i) - std::f64::consts::LN_2).abs() < 1e-12);
    let (m, v) = marginal(&[1.0], &[0.0], i, &sch).unwrap();
    assert!((m[0] - 0.5).abs() < 1e-12);
    assert!((v - 0.75 * lambda * lambda).abs() < 1e-12);
}

pub fn forward_samples_follow_the_closed_form_law() {
    let sch = NoiseSchedule::new(100, 2.5, 0.5).unwrap();
    let n = 100_000;
    for i in [1, 10, 50, 100] {
        let (m, v) = marginal(&[0.8], &[0.2], i, &sch).unwrap();
        let mut rng = rng_from_seed(40 + i as u64);
        let xs: Vec<f64> = (0..n)
            .map(|_| forward_sample(&[0.8], &[0.2], i, &sch, &mut rng).unwrap().0[0])
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(
            (mean - m[0]).abs() < 4.0 * (v / n as f64).sqrt(),
            "step {i}: mean {mean} vs {}",
            m[0]
        );
        assert!((var / v - 1.0).abs() < 0.05, "step {i}: var {var} vs {v}");
    }
}

pub fn forward_samples_are_seed_determined() {
    let sch = NoiseSchedule::default();
    let x0 = [0.1, 0.5, 0.9];
    let s = [0.3, 0.3, 0.3];
    let a = forward_sample(&x0, &s, 17, &sch, &mut rng_from_seed(5)).unwrap();
    let b = forward_sample(&x0, &s, 17, &sch, &mut rng_from_seed(5)).unwrap();
    assert_eq!(a, b);
    let (m, v) = marginal(&x0, &s, 17, &sch).unwrap();
    let sc = exact_score(&a.0, &m, v).unwrap();
    for (g, e) in sc.iter().zip(&a.1) {
        assert!((g + e / v.sqrt()).abs() < 1e-9);
    }
}

pub fn exact_score_reverse_chain_recovers_x0() {
    let sch = NoiseSchedule::new(100, 2.5, 0.5).unwrap();
    let (x0, s) = ([0.8], [0.2]);
    let mut rng = rng_from_seed(7);
    let trajectories = 1000;
    let mut total = 0.0;
    for _ in 0..trajectories {
        let mut x = forward_sample(&x0, &s, 100, &sch, &mut rng).unwrap().0;
        for i in (1..=100).rev() {
            let (m, v) = marginal(&x0, &s, i, &sch).unwrap();
            let score = exact_score(&x, &m, v).unwrap();
            x = reverse_step(&x, &s, &score, i, &sch, &mut rng, true);
        }
        total += x[0];
    }
    let mean = total / trajectories as f64;
    assert!((mean - 0.8).abs() < 0.05, "ensemble mean {mean}");
}

pub fn deterministic_chain_approaches_x0_monotonically() {
    let sch = NoiseSchedule::new(100, 2.5, 0.5).unwrap();
    let (x0, s) = ([0.8], [0.2]);
    let mut x = marginal(&x0, &s, 100, &sch).unwrap().0;
    let mut gap = (x[0] - x0[0]).abs();
    let mut rng = rng_from_seed(0);
    for i in (1..=100).rev() {
        let (m, v) = marginal(&x0, &s, i, &sch).unwrap();
        let score = exact_score(&x, &m, v).unwrap();
        x = reverse_step(&x, &s, &score, i, &sch, &mut rng, false);
        let g = (x[0] - x0[0]).abs();
        assert!(g <= gap + 1e-15, "step {i}: {g} > {gap}");
        gap = g;
    }
}

pub fn zero_denoiser_follows_pure_mean_reversion() {
    let sch = NoiseSchedule::new(20, 0.8, 0.3).unwrap();
    let model = Denoiser::zeros(
        DenoiserArch {
            channels: vec![2],
            embed_dim: 2,
        },
        0.3,
    );
    let pixels: Vec<f64> = (0..16).map(|k| k as f64 / 15.0).collect();
    let s = GrayImage::from_vec(4, 4, pixels.clone()).unwrap();
    let out = restore_raw(&s, &model, &sch, &mut rng_from_seed(9), false).unwrap();
    // x_{i−1} − s = (x_i − s)(1 + θ_i dt), starting from s + λz
    let growth: f64 = (1..=20).map(|i| 1.0 + sch.theta(i) * sch.dt()).product();
    let mut rng = rng_from_seed(9);
    for (o, p) in out.iter().zip(&pixels) {
        let z: f64 = StandardNormal.sample(&mut rng);
        let expect = p + 0.3 * z * growth;
        assert!((o - expect).abs() < 1e-12);
    }
    let again = restore_raw(&s, &model, &sch, &mut rng_from_seed(9), false).unwrap();
    assert_eq!(out, again);
}
