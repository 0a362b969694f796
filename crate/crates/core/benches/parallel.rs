//! Sequential vs data-parallel execution of the batch kernels.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use karyosim::detector::{ClassifierArch, EasConfig, EnergyDetector};
use karyosim::diffusion::{
    restore_batch, train_denoiser, Denoiser, DenoiserArch, NoiseSchedule, TrainConfig, TrainingPair,
};
use karyosim::exec::ExecMode;
use karyosim::phantom::{build_dataset, DatasetCounts, PhantomConfig, PhantomRegistry};
use karyosim::seed::rng_from_seed;
use karyosim::GrayImage;

const MODES: [(&str, ExecMode); 2] = [
    ("sequential", ExecMode::Sequential),
    ("parallel", ExecMode::Parallel),
];

fn phantoms(n: usize) -> Vec<GrayImage> {
    let registry = PhantomRegistry::new(PhantomConfig::default()).unwrap();
    (0..n)
        .map(|k| {
            registry
                .generate_normal((k % 4) as u32, &mut rng_from_seed(k as u64))
                .unwrap()
                .image
        })
        .collect()
}

fn dataset(c: &mut Criterion) {
    let registry = PhantomRegistry::new(PhantomConfig::default()).unwrap();
    let counts = DatasetCounts {
        train_normal: 50,
        imbalance_ratio: 10.0,
        val_normal: 0,
        val_abnormal: 0,
        test_normal: 10,
        test_abnormal: 5,
    };
    let mut group = c.benchmark_group("build_dataset");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| build_dataset(&registry, &counts, 7, mode).unwrap())
        });
    }
    group.finish();
}

fn classifier(c: &mut Criterion) {
    let images = phantoms(32);
    let refs: Vec<&GrayImage> = images.iter().collect();
    let labels: Vec<u8> = (0..32).map(|i| (i % 2) as u8).collect();
    let model = EnergyDetector::new(ClassifierArch::default(), &mut rng_from_seed(1)).unwrap();
    let cfg = EasConfig::default();
    let mut group = c.benchmark_group("classifier_batch_grad");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| model.batch_loss_and_grad(&refs, &labels, &cfg, mode))
        });
    }
    group.finish();
}

fn denoiser(c: &mut Criterion) {
    let images = phantoms(8);
    let pairs: Vec<TrainingPair> = images
        .windows(2)
        .map(|w| TrainingPair {
            x: w[0].clone(),
            s: w[1].clone(),
        })
        .collect();
    let schedule = NoiseSchedule::default();
    let model = Denoiser::new(
        DenoiserArch::default(),
        schedule.lambda(),
        &mut rng_from_seed(2),
    )
    .unwrap();
    let train = TrainConfig {
        iterations: 2,
        ..Default::default()
    };
    let mut group = c.benchmark_group("denoiser");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::new("train_2_iterations", name), |b| {
            b.iter(|| {
                train_denoiser(
                    model.clone(),
                    &pairs,
                    &schedule,
                    &train,
                    &mut rng_from_seed(3),
                    mode,
                )
                .unwrap()
            })
        });
    }
    let short = NoiseSchedule::new(10, schedule.sigma_max(), schedule.lambda()).unwrap();
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::new("restore_8_images_10_steps", name), |b| {
            b.iter(|| restore_batch(&images, &model, &short, 4, false, mode).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, dataset, classifier, denoiser);
criterion_main!(benches);
