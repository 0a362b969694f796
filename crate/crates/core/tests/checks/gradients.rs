//! Analytic gradients of both networks against central finite differences.

use karyosim::detector::{ClassifierArch, EasConfig, EnergyDetector};
use karyosim::diffusion::{Denoiser, DenoiserArch, LossNorm};
use karyosim::exec::ExecMode;
use karyosim::seed::rng_from_seed;
use karyosim::GrayImage;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

const H: f64 = 1e-5;
const TOL: f64 = 1e-5;

/// Largest per-coordinate relative error, with a floor on the denominator
/// so that vanishing components compare absolutely.
fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-3 * scale))
        .fold(0.0, f64::max)
}

fn central_difference(params: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let v = p[i];
            p[i] = v + H;
            let up = f(&p);
            p[i] = v - H;
            let down = f(&p);
            p[i] = v;
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn random_vec(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

pub fn denoiser_gradient_matches_finite_differences() {
    for (seed, channels) in [(1u64, vec![2]), (2, vec![2, 3])] {
        let mut rng = rng_from_seed(seed);
        let arch = DenoiserArch {
            channels,
            embed_dim: 4,
        };
        let mut model = Denoiser::new(arch, 0.5, &mut rng).unwrap();
        let n = model.n_params();
        model.params = random_vec(&mut rng, n, 0.3);
        let (h, w) = (8, 8);
        let x: Vec<f64> = (0..h * w).map(|_| rng.random()).collect();
        let s: Vec<f64> = (0..h * w).map(|_| rng.random()).collect();
        let eps = random_vec(&mut rng, h * w, 1.0);
        let step = 7;
        let mut grad = vec![0.0; n];
        model.loss_and_grad(&x, &s, &eps, step, h, w, LossNorm::L2, &mut grad);
        let numeric = central_difference(&model.params.clone(), |p| {
            let mut m = model.clone();
            m.params = p.to_vec();
            let mut g = vec![0.0; n];
            m.loss_and_grad(&x, &s, &eps, step, h, w, LossNorm::L2, &mut g)
        });
        let err = max_rel_error(&grad, &numeric);
        assert!(err < TOL, "denoiser relative error {err}");
    }
}

pub fn classifier_gradient_matches_finite_differences() {
    for (seed, grid) in [(3u64, 1usize), (4, 2)] {
        let mut rng = rng_from_seed(seed);
        let arch = ClassifierArch {
            channels: vec![2, 3],
            input_pool: 1,
            grid,
        };
        let mut model = EnergyDetector::new(arch, &mut rng).unwrap();
        let n = model.n_params();
        model.params = random_vec(&mut rng, n, 0.4);
        let side = model.size_multiple() * 2;
        let images: Vec<GrayImage> = (0..4)
            .map(|_| {
                GrayImage::from_vec(side, side, (0..side * side).map(|_| rng.random()).collect())
                    .unwrap()
            })
            .collect();
        let refs: Vec<&GrayImage> = images.iter().collect();
        let labels = [0u8, 1, 0, 1];
        // margins chosen so both hinge terms are active
        let cfg = EasConfig {
            lambda: 0.3,
            m_n: -27.0,
            m_ab: 5.0,
            temperature: 1.5,
            ..Default::default()
        };
        let (loss, grad) = model.batch_loss_and_grad(&refs, &labels, &cfg, ExecMode::Sequential);
        assert!(loss.energy > 0.0);
        let numeric = central_difference(&model.params.clone(), |p| {
            let mut m = model.clone();
            m.params = p.to_vec();
            m.batch_loss_and_grad(&refs, &labels, &cfg, ExecMode::Sequential)
                .0
                .total
        });
        let err = max_rel_error(&grad, &numeric);
        assert!(err < TOL, "classifier relative error {err} (grid {grid})");
    }
}
