//! Oracles and fixtures shared by the integration test targets.
#![allow(dead_code)]

use gaqn::dataset::{encode_pose, BatchItem, Frame, SceneRecord};
use gaqn::discriminator::{init_discriminator, DiscConfig};
use gaqn::draw::{init_draw, DrawConfig, DrawOptions};
use gaqn::encoder::{init_encoder, EncoderConfig};
use gaqn::params::ParamSet;
use gaqn::scene::{synthesize, GeneratorConfig};
use gaqn_autograd::gradcheck::{central_difference, GradCheckReport, GradChecker};
use gaqn_autograd::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_SIZE: usize = 8;
pub const GRAD_PROBES: usize = 200;
pub const GRAD_STEP: f64 = 1e-4;
pub const GRAD_TOLERANCE: f64 = 1e-3;
pub const GRAD_PASS_FRACTION: f64 = 0.95;

pub fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

pub fn random_frame(seed: u64, h: usize, w: usize) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Frame::new(h, w, (0..h * w * 3).map(|_| rng.gen()).collect()).unwrap()
}

/// `Σ w ⊙ x` with fixed pseudo-random weights, so every output element
/// carries a distinct sensitivity.
fn project(g: &mut Graph<f64>, x: Var, seed: u64) -> Var {
    let w = g.constant(uniform(g.shape(x), -1.0, 1.0, seed));
    let prod = g.mul(x, w).unwrap();
    g.sum(prod)
}

/// Compares `∂loss/∂θ` from one backward pass with central differences on
/// [`GRAD_PROBES`] elements drawn uniformly over the flattened set.
fn check(params: &ParamSet<f64>, loss: impl Fn(&ParamSet<f64>, &mut Graph<f64>) -> (Var, Vec<Var>)) -> GradCheckReport {
    let mut g = Graph::new();
    let (root, vars) = loss(params, &mut g);
    let grads = g.backward(root).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut checker = GradChecker::new(GRAD_TOLERANCE, 1e-8);
    for _ in 0..GRAD_PROBES {
        let (i, k) = params.locate(rng.gen_range(0..params.numel()));
        let analytic = grads.get(vars[i]).map_or(0.0, |t| t.data()[k]);
        let numeric = central_difference(
            |theta| {
                let mut p = params.clone();
                p.tensors_mut()[i].data_mut()[k] = theta;
                let mut g = Graph::new();
                let (root, _) = loss(&p, &mut g);
                g.value(root).item()
            },
            params.tensors()[i].data()[k],
            GRAD_STEP,
        );
        checker.record(format!("{}[{k}]", params.names()[i]), analytic, numeric);
    }
    checker.finish()
}

pub fn encoder_gradcheck() -> GradCheckReport {
    let config = EncoderConfig { repr_channels: 4, stem_channels: 4, image_size: GRAD_SIZE };
    let enc = init_encoder::<f64>(3, config);
    let frames = uniform(&[3, 3, GRAD_SIZE, GRAD_SIZE], 0.0, 1.0, 1);
    let poses = uniform(&[3, 7], -1.0, 1.0, 2);
    check(&enc.params, |p, g| {
        let bound = p.bind(g, true);
        let f = g.constant(frames.clone());
        let v = g.constant(poses.clone());
        let repr = enc.represent(g, &bound, f, v, &[2, 1]).unwrap();
        (project(g, repr, 5), bound.vars().to_vec())
    })
}

/// ELBO of two queries with `M = 2`.
pub fn draw_gradcheck() -> GradCheckReport {
    let config = DrawConfig { hidden: 8, latent: 2, canvas_channels: 4, kernel: 5, image_size: GRAD_SIZE, repr_channels: 4 };
    let draw = init_draw::<f64>(4, config);
    let repr = uniform(&[2, 4, GRAD_SIZE / 4, GRAD_SIZE / 4], -1.0, 1.0, 6);
    let query = uniform(&[2, 7], -1.0, 1.0, 7);
    let target = uniform(&[2, 3, GRAD_SIZE, GRAD_SIZE], 0.0, 1.0, 8);
    check(&draw.params, |p, g| {
        let bound = p.bind(g, true);
        let r = g.constant(repr.clone());
        let q = g.constant(query.clone());
        let t = g.constant(target.clone());
        let out = draw.forward(g, &bound, r, q, Some(t), 2, 0.7, 11, DrawOptions::default()).unwrap();
        let elbo = g.add(out.nll.unwrap(), out.kl_total.unwrap()).unwrap();
        (elbo, bound.vars().to_vec())
    })
}

/// Projected patch logits plus projected feature means.
pub fn discriminator_gradcheck() -> GradCheckReport {
    let config = DiscConfig { image_size: GRAD_SIZE, stem_channels: 4, block_channels: vec![4, 6], head_channels: 8, feature_block: 0 };
    let disc = init_discriminator::<f64>(5, config);
    let images = uniform(&[2, 3, GRAD_SIZE, GRAD_SIZE], 0.0, 1.0, 9);
    check(&disc.params, |p, g| {
        let bound = p.bind(g, true);
        let x = g.constant(images.clone());
        let out = disc.forward(g, &bound, x).unwrap();
        let a = project(g, out.logits, 12);
        let b = project(g, out.features, 13);
        (g.add(a, b).unwrap(), bound.vars().to_vec())
    })
}

/// Mirror index for a window overhanging an edge: the row of pixels is
/// extended as `… 2 1 0 | 0 1 2 … n−1 | n−1 n−2 …`.
fn mirror(mut i: i64, n: i64) -> usize {
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// SSIM from its definition: a normalized 11×11 Gaussian (σ = 1.5)
/// evaluated in two dimensions, two-pass weighted moments per pixel, mean
/// over pixels and channels.
pub fn ssim_by_definition(a: &Frame, b: &Frame) -> f64 {
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut kernel = [[0.0f64; 11]; 11];
    for (dy, row) in kernel.iter_mut().enumerate() {
        for (dx, k) in row.iter_mut().enumerate() {
            let (y, x) = (dy as f64 - 5.0, dx as f64 - 5.0);
            *k = (-(x * x + y * y) / (2.0 * 1.5 * 1.5)).exp();
        }
    }
    let norm: f64 = kernel.iter().flatten().sum();
    let (h, w) = (a.height() as i64, a.width() as i64);
    let mut total = 0.0;
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let mut samples = Vec::with_capacity(121);
                for dy in 0..11 {
                    for dx in 0..11 {
                        let (yy, xx) = (mirror(y + dy - 5, h), mirror(x + dx - 5, w));
                        samples.push((kernel[dy as usize][dx as usize] / norm, a.pixel(yy, xx)[c] as f64, b.pixel(yy, xx)[c] as f64));
                    }
                }
                let ma: f64 = samples.iter().map(|s| s.0 * s.1).sum();
                let mb: f64 = samples.iter().map(|s| s.0 * s.2).sum();
                let va: f64 = samples.iter().map(|s| s.0 * (s.1 - ma).powi(2)).sum();
                let vb: f64 = samples.iter().map(|s| s.0 * (s.2 - mb).powi(2)).sum();
                let cov: f64 = samples.iter().map(|s| s.0 * (s.1 - ma) * (s.2 - mb)).sum();
                total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
        }
    }
    total / (3 * h * w) as f64
}

/// One synthetic scene with six ring views: views 0–4 are the training
/// record, view 5 is never trained on and serves as the query, with views
/// 0–3 as context.
pub struct OverfitScene {
    pub train: Vec<SceneRecord>,
    pub held_out: BatchItem,
}

pub fn overfit_scene(seed: u64) -> OverfitScene {
    let full = synthesize(1, 6, seed, &GeneratorConfig::default()).unwrap().remove(0);
    let context = &full.views[..4];
    let query = &full.views[5];
    OverfitScene {
        train: vec![SceneRecord::new(full.views[..5].to_vec()).unwrap()],
        held_out: BatchItem {
            scene: 0,
            query_index: 5,
            context_indices: vec![0, 1, 2, 3],
            context_frames: context.iter().map(|v| v.frame.clone()).collect(),
            context_poses: context.iter().map(|v| encode_pose(&v.pose)).collect(),
            query_pose: encode_pose(&query.pose),
            target: query.frame.clone(),
        },
    }
}
