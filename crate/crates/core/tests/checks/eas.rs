//! Energy-guided adaptive sampling: schedule, selection growth, momentum.

use karyosim::detector::{
    eas_train, momentum_blend, ClassifierArch, EasConfig, EnergyDetector, PoolUse, TrainingData,
};
use karyosim::exec::ExecMode;
use karyosim::nn::OptimizerKind;
use karyosim::seed::rng_from_seed;
use karyosim::GrayImage;
use rand::Rng;

pub fn schedule_oracle(epochs: usize, warmup: usize, interval: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut e = warmup;
    while e <= epochs {
        out.push(e);
        e += interval;
    }
    out
}

pub fn sampling_epochs_follow_the_schedule() {
    for (t, w, k) in [(100, 10, 10), (7, 3, 2), (50, 5, 7)] {
        let cfg = EasConfig {
            epochs: t,
            warmup: w,
            interval: k,
            ..Default::default()
        };
        assert_eq!(
            cfg.sampling_epochs(),
            schedule_oracle(t, w, k),
            "T={t} w={w} k={k}"
        );
    }
    let cfg = EasConfig {
        epochs: 100,
        warmup: 10,
        interval: 10,
        ..Default::default()
    };
    assert_eq!(
        cfg.sampling_epochs(),
        (1..=10).map(|i| 10 * i).collect::<Vec<_>>()
    );
    let cfg = EasConfig {
        epochs: 7,
        warmup: 3,
        interval: 2,
        ..Default::default()
    };
    assert_eq!(cfg.sampling_epochs(), vec![3, 5, 7]);
}

pub fn momentum_degeneracies_are_bitwise() {
    let mut rng = rng_from_seed(31);
    for _ in 0..100 {
        let n = rng.random_range(1..50);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1e3..1e3)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1e3..1e3)).collect();
        assert_eq!(momentum_blend(&a, &b, 1.0), a);
        assert_eq!(momentum_blend(&a, &b, 0.0), b);
    }
}

struct Toy {
    normals: Vec<GrayImage>,
    abnormals: Vec<GrayImage>,
    pool: Vec<GrayImage>,
}

/// Dark normals, bright abnormals, and a pool spread between them.
fn toy(seed: u64) -> Toy {
    let mut rng = rng_from_seed(seed);
    let mut img = |level: f64| {
        GrayImage::from_vec(
            8,
            8,
            (0..64)
                .map(|_| (level + rng.random_range(-0.1..0.1)).clamp(0.0, 1.0))
                .collect(),
        )
        .unwrap()
    };
    Toy {
        normals: (0..40).map(|_| img(0.2)).collect(),
        abnormals: (0..6).map(|_| img(0.8)).collect(),
        pool: (0..30).map(|i| img(0.2 + 0.6 * i as f64 / 29.0)).collect(),
    }
}

fn tiny_model(seed: u64) -> EnergyDetector {
    let arch = ClassifierArch {
        channels: vec![2],
        input_pool: 0,
        grid: 1,
    };
    EnergyDetector::new(arch, &mut rng_from_seed(seed)).unwrap()
}

fn config(epochs: usize, warmup: usize, interval: usize) -> EasConfig {
    EasConfig {
        epochs,
        warmup,
        interval,
        batch_size: 8,
        optimizer: OptimizerKind::adam(1e-2),
        ..Default::default()
    }
}

pub fn adaptive_selection_grows_and_updates_only_on_schedule() {
    let data = toy(1);
    let td = TrainingData {
        normals: &data.normals,
        abnormals: &data.abnormals,
        pool: &data.pool,
    };
    let cfg = config(7, 3, 2);
    let (_, logs, state) = eas_train(
        tiny_model(2),
        &td,
        PoolUse::Adaptive,
        &cfg,
        &mut rng_from_seed(3),
        ExecMode::Sequential,
    )
    .unwrap();
    let sampled: Vec<usize> = logs.iter().filter(|l| l.sampled).map(|l| l.epoch).collect();
    assert_eq!(sampled, vec![3, 5, 7]);
    let mut tau = f64::INFINITY;
    let mut count = 0;
    for l in &logs {
        if l.sampled {
            assert!(l.tau.is_finite());
        } else {
            assert_eq!(
                l.tau.to_bits(),
                tau.to_bits(),
                "τ changed outside a sampling epoch"
            );
        }
        assert!(
            l.selected_count >= count,
            "selection shrank at epoch {}",
            l.epoch
        );
        if !l.sampled {
            assert_eq!(l.selected_count, count);
        }
        tau = l.tau;
        count = l.selected_count;
    }
    assert_eq!(state.selected.len(), count);
    assert!(state.selected.iter().all(|&i| i < data.pool.len()));
}

pub fn baseline_never_touches_the_pool() {
    let data = toy(4);
    let td = TrainingData {
        normals: &data.normals,
        abnormals: &data.abnormals,
        pool: &data.pool,
    };
    let (_, logs, state) = eas_train(
        tiny_model(5),
        &td,
        PoolUse::None,
        &config(4, 1, 1),
        &mut rng_from_seed(6),
        ExecMode::Sequential,
    )
    .unwrap();
    assert!(state.selected.is_empty());
    assert!(logs
        .iter()
        .all(|l| l.selected_count == 0 && !l.sampled && l.tau == f64::INFINITY));
    let (_, logs, _) = eas_train(
        tiny_model(5),
        &td,
        PoolUse::Static,
        &config(2, 1, 1),
        &mut rng_from_seed(6),
        ExecMode::Sequential,
    )
    .unwrap();
    assert!(logs.iter().all(|l| l.selected_count == data.pool.len()));
}

pub fn full_momentum_freezes_sampling_epochs() {
    let data = toy(7);
    let td = TrainingData {
        normals: &data.normals,
        abnormals: &data.abnormals,
        pool: &data.pool,
    };
    let start = tiny_model(8);
    let cfg = EasConfig {
        momentum: 1.0,
        ..config(1, 1, 1)
    };
    let (model, _, _) = eas_train(
        start.clone(),
        &td,
        PoolUse::Adaptive,
        &cfg,
        &mut rng_from_seed(9),
        ExecMode::Sequential,
    )
    .unwrap();
    assert_eq!(model.params, start.params);
    let cfg = EasConfig {
        momentum: 0.0,
        ..config(1, 1, 1)
    };
    let (moved, _, _) = eas_train(
        start.clone(),
        &td,
        PoolUse::Adaptive,
        &cfg,
        &mut rng_from_seed(9),
        ExecMode::Sequential,
    )
    .unwrap();
    assert_ne!(moved.params, start.params);
}

pub fn training_is_seed_deterministic_in_both_modes() {
    let data = toy(10);
    let td = TrainingData {
        normals: &data.normals,
        abnormals: &data.abnormals,
        pool: &data.pool,
    };
    let cfg = config(4, 2, 1);
    let run = |mode| {
        eas_train(
            tiny_model(11),
            &td,
            PoolUse::Adaptive,
            &cfg,
            &mut rng_from_seed(12),
            mode,
        )
        .unwrap()
    };
    let (a, la, _) = run(ExecMode::Sequential);
    let (b, lb, _) = run(ExecMode::Sequential);
    let (c, _, _) = run(ExecMode::Parallel);
    assert_eq!(a.params, b.params);
    assert_eq!(la, lb);
    assert_eq!(a.params, c.params);
}
