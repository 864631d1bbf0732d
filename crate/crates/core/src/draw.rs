//! Convolutional DRAW decoder with paired inference and generation LSTMs.
//!
//! Both cores run at a quarter of the image resolution. The inference core
//! sees the target (folded to that resolution by space-to-depth), the scene
//! representation, the query pose and the previous generation state; the
//! generation core sees the representation, the pose and the sampled latent.
//! The canvas accumulates a stride-4 transposed convolution of the
//! generation state and a 1×1 sigmoid readout gives the image mean.
//!
//! The same core weights are reused at every step, so the number of steps is
//! a runtime argument.

use gaqn_autograd::{Graph, Scalar, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{frames_tensor, poses_tensor, Frame, PoseEncoded, CHANNELS, POSE_DIM};
use crate::encoder::SceneRepresentation;
use crate::params::{Bound, Initializer, ParamSet};
use crate::{Error, Result};

pub const LOGVAR_LIMIT: f64 = 10.0;
const FOLD: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DrawConfig {
    /// Hidden channels `h` of each core.
    pub hidden: usize,
    /// Latent channels `z_c`.
    pub latent: usize,
    pub canvas_channels: usize,
    pub kernel: usize,
    pub image_size: usize,
    pub repr_channels: usize,
}

impl Default for DrawConfig {
    fn default() -> Self {
        DrawConfig { hidden: 64, latent: 8, canvas_channels: 16, kernel: 5, image_size: 64, repr_channels: 64 }
    }
}

impl DrawConfig {
    pub fn grid(&self) -> usize {
        self.image_size / FOLD
    }

    fn pad(&self) -> usize {
        self.kernel / 2
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DrawParams<T = f32> {
    pub config: DrawConfig,
    pub params: ParamSet<T>,
}

pub fn init_draw<T: Scalar>(seed: u64, config: DrawConfig) -> DrawParams<T> {
    let DrawConfig { hidden: h, latent: z, kernel: k, canvas_channels: u, repr_channels: r, .. } = config;
    let x_in = CHANNELS * FOLD * FOLD;
    let mut init = Initializer::new(seed);
    let mut p = ParamSet::new();
    init.conv(&mut p, "inf.cond", 4 * h, x_in + r + POSE_DIM, k, true);
    init.conv(&mut p, "inf.hid", 4 * h, 2 * h, k, false);
    init.conv(&mut p, "gen.cond", 4 * h, r + POSE_DIM, k, true);
    init.conv(&mut p, "gen.hid", 4 * h, h, k, false);
    init.conv(&mut p, "gen.z", 4 * h, z, k, false);
    init.conv(&mut p, "prior", 2 * z, h, k, true);
    init.conv(&mut p, "post", 2 * z, h, k, true);
    p.push("canvas.w", init.uniform(&[h, u, FOLD, FOLD], h));
    p.push("canvas.b", init.uniform(&[u], h));
    init.conv(&mut p, "readout", CHANNELS, u, 1, true);
    DrawParams { config, params: p }
}

/// Diagonal Gaussian over the latent grid; log-variance is clamped to ±10.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianParams {
    pub mean: Tensor<f32>,
    pub log_variance: Tensor<f32>,
}

impl GaussianParams {
    pub fn new(mean: Tensor<f32>, log_variance: Tensor<f32>) -> Result<Self> {
        if mean.shape() != log_variance.shape() {
            return Err(Error::Shape(format!("mean {:?} vs log-variance {:?}", mean.shape(), log_variance.shape())));
        }
        let limit = LOGVAR_LIMIT as f32;
        Ok(GaussianParams { mean, log_variance: log_variance.map(|v| v.clamp(-limit, limit)) })
    }
}

/// `Σ KL(q ‖ p)` over all elements, closed form for diagonal Gaussians.
pub fn gaussian_kl(q: &GaussianParams, p: &GaussianParams) -> Result<f64> {
    if q.mean.shape() != p.mean.shape() {
        return Err(Error::Shape(format!("KL between {:?} and {:?}", q.mean.shape(), p.mean.shape())));
    }
    let mut total = 0.0;
    for i in 0..q.mean.len() {
        let (mq, lq) = (q.mean.data()[i] as f64, q.log_variance.data()[i] as f64);
        let (mp, lp) = (p.mean.data()[i] as f64, p.log_variance.data()[i] as f64);
        total += 0.5 * (lp - lq + (lq - lp).exp() + (mq - mp).powi(2) * (-lp).exp() - 1.0);
    }
    Ok(total)
}

/// `Σ 0.5·((x − x′)/σ)² + 0.5·ln(2πσ²)` over every pixel and channel.
pub fn gaussian_nll(target: &Frame, mean: &Frame, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Invalid(format!("sigma must be positive, got {sigma}")));
    }
    if target.height() != mean.height() || target.width() != mean.width() {
        return Err(Error::Shape("frames differ in size".into()));
    }
    let norm = 0.5 * (2.0 * std::f64::consts::PI * sigma * sigma).ln();
    Ok(target
        .data()
        .iter()
        .zip(mean.data())
        .map(|(&a, &b)| 0.5 * ((a as f64 - b as f64) / sigma).powi(2) + norm)
        .sum())
}

/// Standard normal noise for every step, `[N, z_c, g, g]` each.
pub fn step_noise<T: Scalar>(seed: u64, steps: usize, shape: &[usize]) -> Vec<Tensor<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    (0..steps)
        .map(|_| {
            let data = (0..n).map(|_| T::lit(StandardNormal.sample(&mut rng))).collect();
            Tensor::from_vec(shape, data).expect("noise shape")
        })
        .collect()
}

/// `z = μ + exp(½·log σ²)·ε`.
pub fn reparameterize<T: Scalar>(g: &mut Graph<T>, mean: Var, log_variance: Var, eps: Var) -> Result<Var> {
    let half = g.scale(log_variance, T::lit(0.5));
    let std = g.exp(half);
    let spread = g.mul(std, eps)?;
    Ok(g.add(mean, spread)?)
}

/// Graph version of [`gaussian_kl`], summed over every element of the batch.
pub fn kl_graph<T: Scalar>(g: &mut Graph<T>, q: (Var, Var), p: (Var, Var)) -> Result<Var> {
    let (mq, lq) = q;
    let (mp, lp) = p;
    let dlog = g.sub(lp, lq)?;
    let ratio_log = g.sub(lq, lp)?;
    let ratio = g.exp(ratio_log);
    let diff = g.sub(mq, mp)?;
    let sq = g.square(diff);
    let neg_lp = g.scale(lp, T::lit(-1.0));
    let inv_var = g.exp(neg_lp);
    let mahal = g.mul(sq, inv_var)?;
    let a = g.add(dlog, ratio)?;
    let a = g.add(a, mahal)?;
    let a = g.offset(a, T::lit(-1.0));
    let s = g.sum(a);
    Ok(g.scale(s, T::lit(0.5)))
}

/// Graph version of [`gaussian_nll`] summed over pixels and averaged over the batch.
pub fn nll_graph<T: Scalar>(g: &mut Graph<T>, target: Var, mean: Var, sigma: f64) -> Result<Var> {
    let (n, c, h, w) = g.value(target).dims4()?;
    let diff = g.sub(target, mean)?;
    let sq = g.square(diff);
    let s = g.sum(sq);
    let s = g.scale(s, T::lit(0.5 / (sigma * sigma * n as f64)));
    let norm = 0.5 * (2.0 * std::f64::consts::PI * sigma * sigma).ln() * (c * h * w) as f64;
    Ok(g.offset(s, T::lit(norm)))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DrawOptions {
    /// Test hook: use the prior in place of the posterior at every step.
    pub posterior_equals_prior: bool,
}

/// Graph handles produced by [`DrawParams::forward`].
#[derive(Clone, Debug)]
pub struct DrawGraph {
    /// Readout mean `x′`, `[N, 3, S, S]`.
    pub reconstruction: Var,
    /// Per-step KL summed over latent elements and averaged over the batch.
    pub kl_steps: Vec<Var>,
    pub kl_total: Option<Var>,
    /// NLL summed over pixels and averaged over the batch.
    pub nll: Option<Var>,
}

struct Lstm {
    h: Var,
    c: Var,
}

fn lstm_step<T: Scalar>(g: &mut Graph<T>, gates: Var, hidden: usize, prev: Option<&Lstm>) -> Result<Lstm> {
    let i = g.slice(gates, 0, hidden)?;
    let f = g.slice(gates, hidden, hidden)?;
    let o = g.slice(gates, 2 * hidden, hidden)?;
    let cand = g.slice(gates, 3 * hidden, hidden)?;
    let i = g.sigmoid(i);
    let o = g.sigmoid(o);
    let cand = g.tanh(cand);
    let mut c = g.mul(i, cand)?;
    if let Some(prev) = prev {
        let f = g.sigmoid(f);
        let keep = g.mul(f, prev.c)?;
        c = g.add(c, keep)?;
    }
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    Ok(Lstm { h, c })
}

impl<T: Scalar> DrawParams<T> {
    fn gaussian(&self, g: &mut Graph<T>, p: &Bound, name: &str, hidden: Var) -> Result<(Var, Var)> {
        let z = self.config.latent;
        let pad = self.config.pad();
        let out = g.conv2d(hidden, p.var(&format!("{name}.w")), Some(p.var(&format!("{name}.b"))), 1, pad)?;
        let mean = g.slice(out, 0, z)?;
        let lv = g.slice(out, z, z)?;
        let lv = g.clamp(lv, T::lit(-LOGVAR_LIMIT), T::lit(LOGVAR_LIMIT));
        Ok((mean, lv))
    }

    /// Runs `steps` recurrent steps. With a `target` the latents come from
    /// the posterior and the ELBO terms are produced; without one they are
    /// sampled from the prior.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        repr: Var,
        query_poses: Var,
        target: Option<Var>,
        steps: usize,
        sigma: f64,
        noise_seed: u64,
        options: DrawOptions,
    ) -> Result<DrawGraph> {
        let cfg = self.config;
        if steps < 1 {
            return Err(Error::Invalid("need at least one recurrent step".into()));
        }
        let grid = cfg.grid();
        let (n, rc, rh, rw) = g.value(repr).dims4()?;
        if rc != cfg.repr_channels || rh != grid || rw != grid || g.shape(query_poses) != [n, POSE_DIM] {
            return Err(Error::Shape(format!(
                "decoder expects [N,{},{grid},{grid}] representation and [N,7] poses, got {:?} and {:?}",
                cfg.repr_channels,
                g.shape(repr),
                g.shape(query_poses)
            )));
        }
        if let Some(t) = target {
            if g.shape(t) != [n, CHANNELS, cfg.image_size, cfg.image_size] {
                return Err(Error::Shape(format!("target {:?} does not match the decoder", g.shape(t))));
            }
        }
        let (hd, pad) = (cfg.hidden, cfg.pad());
        let pose_map = g.broadcast_spatial(query_poses, grid, grid)?;
        let cond_in = g.concat(&[repr, pose_map])?;
        let gen_cond = g.conv2d(cond_in, p.var("gen.cond.w"), Some(p.var("gen.cond.b")), 1, pad)?;
        let inf_cond = match target {
            Some(t) => {
                let folded = g.space_to_depth(t, FOLD)?;
                let inp = g.concat(&[folded, repr, pose_map])?;
                Some(g.conv2d(inp, p.var("inf.cond.w"), Some(p.var("inf.cond.b")), 1, pad)?)
            }
            None => None,
        };

        let noise = step_noise::<T>(noise_seed, steps, &[n, cfg.latent, grid, grid]);
        let zero_hidden = g.constant(Tensor::zeros(&[n, hd, grid, grid]));
        let mut gen: Option<Lstm> = None;
        let mut inf: Option<Lstm> = None;
        let mut canvas: Option<Var> = None;
        let mut kl_steps = Vec::with_capacity(steps);
        for eps in noise {
            let h_prev = gen.as_ref().map_or(zero_hidden, |s| s.h);
            let prior = self.gaussian(g, p, "prior", h_prev)?;
            let eps = g.constant(eps);
            let z = match inf_cond {
                Some(cond) => {
                    let mut gates = cond;
                    if let Some(gs) = &gen {
                        let he = inf.as_ref().map_or(zero_hidden, |s| s.h);
                        let both = g.concat(&[he, gs.h])?;
                        let rec = g.conv2d(both, p.var("inf.hid.w"), None, 1, pad)?;
                        gates = g.add(gates, rec)?;
                    }
                    let state = lstm_step(g, gates, hd, inf.as_ref())?;
                    let post = if options.posterior_equals_prior { prior } else { self.gaussian(g, p, "post", state.h)? };
                    inf = Some(state);
                    kl_steps.push(kl_graph(g, post, prior).map(|k| g.scale(k, T::lit(1.0 / n as f64)))?);
                    reparameterize(g, post.0, post.1, eps)?
                }
                None => reparameterize(g, prior.0, prior.1, eps)?,
            };
            let mut gates = g.conv2d(z, p.var("gen.z.w"), None, 1, pad)?;
            gates = g.add(gates, gen_cond)?;
            if let Some(gs) = &gen {
                let rec = g.conv2d(gs.h, p.var("gen.hid.w"), None, 1, pad)?;
                gates = g.add(gates, rec)?;
            }
            let state = lstm_step(g, gates, hd, gen.as_ref())?;
            let delta = g.upconv(state.h, p.var("canvas.w"), Some(p.var("canvas.b")), FOLD)?;
            canvas = Some(match canvas {
                Some(u) => g.add(u, delta)?,
                None => delta,
            });
            gen = Some(state);
        }
        let canvas = canvas.expect("at least one step");
        let logits = g.conv2d(canvas, p.var("readout.w"), Some(p.var("readout.b")), 1, 0)?;
        let reconstruction = g.sigmoid(logits);
        let (kl_total, nll) = match target {
            Some(t) => {
                let mut total = kl_steps[0];
                for &k in &kl_steps[1..] {
                    total = g.add(total, k)?;
                }
                (Some(total), Some(nll_graph(g, t, reconstruction, sigma)?))
            }
            None => (None, None),
        };
        Ok(DrawGraph { reconstruction, kl_steps, kl_total, nll })
    }
}

/// ELBO components for one target view.
#[derive(Clone, Debug, PartialEq)]
pub struct ElboTerms {
    pub nll: f64,
    pub kl_per_step: Vec<f64>,
    pub reconstruction: Frame,
}

impl ElboTerms {
    pub fn kl_total(&self) -> f64 {
        self.kl_per_step.iter().sum()
    }

    pub fn elbo(&self) -> f64 {
        self.nll + self.kl_total()
    }
}

fn single_inputs<T: Scalar>(g: &mut Graph<T>, r: &SceneRepresentation, pose: &PoseEncoded) -> Result<(Var, Var)> {
    let shape = r.0.shape();
    if shape.len() != 3 {
        return Err(Error::Shape(format!("representation shape {shape:?}")));
    }
    let mut full = vec![1];
    full.extend_from_slice(shape);
    let repr = g.constant(r.0.cast::<T>().reshape(&full)?);
    let poses = g.constant(poses_tensor(&[*pose]));
    Ok((repr, poses))
}

fn to_frame<T: Scalar>(t: &Tensor<T>, size: usize) -> Result<Frame> {
    let data: Vec<f32> = t.data().iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect();
    Frame::from_chw(size, size, &data)
}

#[allow(clippy::too_many_arguments)]
pub fn elbo_forward_with<T: Scalar>(
    draw: &DrawParams<T>,
    r: &SceneRepresentation,
    pose: &PoseEncoded,
    target: &Frame,
    steps: usize,
    sigma: f64,
    seed: u64,
    options: DrawOptions,
) -> Result<ElboTerms> {
    if !(sigma > 0.0) {
        return Err(Error::Invalid(format!("sigma must be positive, got {sigma}")));
    }
    let mut g = Graph::new();
    let p = draw.params.bind(&mut g, false);
    let (repr, poses) = single_inputs(&mut g, r, pose)?;
    let t = g.constant(frames_tensor(&[target])?);
    let out = draw.forward(&mut g, &p, repr, poses, Some(t), steps, sigma, seed, options)?;
    let scalar = |v: Var| g.value(v).item().to_f64().unwrap_or(f64::NAN);
    Ok(ElboTerms {
        nll: scalar(out.nll.expect("target given")),
        kl_per_step: out.kl_steps.iter().map(|&k| scalar(k)).collect(),
        reconstruction: to_frame(g.value(out.reconstruction), draw.config.image_size)?,
    })
}

pub fn elbo_forward(
    draw: &DrawParams<f32>,
    r: &SceneRepresentation,
    pose: &PoseEncoded,
    target: &Frame,
    steps: usize,
    sigma: f64,
    seed: u64,
) -> Result<ElboTerms> {
    elbo_forward_with(draw, r, pose, target, steps, sigma, seed, DrawOptions::default())
}

/// Samples every latent from the prior and returns the readout mean.
pub fn generate(draw: &DrawParams<f32>, r: &SceneRepresentation, pose: &PoseEncoded, steps: usize, seed: u64) -> Result<Frame> {
    let mut g = Graph::new();
    let p = draw.params.bind(&mut g, false);
    let (repr, poses) = single_inputs(&mut g, r, pose)?;
    let out = draw.forward(&mut g, &p, repr, poses, None, steps, 1.0, seed, DrawOptions::default())?;
    to_frame(g.value(out.reconstruction), draw.config.image_size)
}

/// Batched [`generate`]: `repr: [N, C_r, g, g]`, `poses: [N, 7]` → `[N, 3, S, S]`.
pub fn generate_batch(draw: &DrawParams<f32>, repr: Tensor<f32>, poses: Tensor<f32>, steps: usize, seed: u64) -> Result<Tensor<f32>> {
    let mut g = Graph::new();
    let p = draw.params.bind(&mut g, false);
    let repr = g.constant(repr);
    let poses = g.constant(poses);
    let out = draw.forward(&mut g, &p, repr, poses, None, steps, 1.0, seed, DrawOptions::default())?;
    Ok(g.value(out.reconstruction).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{encode_pose, PoseRaw};
    use rand::Rng;

    fn small() -> DrawConfig {
        DrawConfig { hidden: 8, latent: 2, canvas_channels: 4, kernel: 5, image_size: 8, repr_channels: 4 }
    }

    fn pose() -> PoseEncoded {
        encode_pose(&PoseRaw { x: 2.0, y: 1.0, z: 0.5, yaw: 2.0, pitch: -0.2 })
    }

    fn random_repr(cfg: &DrawConfig, seed: u64) -> SceneRepresentation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = cfg.repr_channels * cfg.grid() * cfg.grid();
        let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        SceneRepresentation(Tensor::from_vec(&[cfg.repr_channels, cfg.grid(), cfg.grid()], data).unwrap())
    }

    fn random_frame(size: usize, seed: u64) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Frame::new(size, size, (0..size * size * 3).map(|_| rng.gen()).collect()).unwrap()
    }

    fn gaussian(values: &[(f32, f32)]) -> GaussianParams {
        let n = values.len();
        GaussianParams::new(
            Tensor::from_vec(&[n], values.iter().map(|v| v.0).collect()).unwrap(),
            Tensor::from_vec(&[n], values.iter().map(|v| v.1).collect()).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn kl_closed_form_examples() {
        let p = gaussian(&[(0.0, 0.0)]);
        assert_eq!(gaussian_kl(&p, &p).unwrap(), 0.0);
        assert!((gaussian_kl(&gaussian(&[(1.0, 0.0)]), &p).unwrap() - 0.5).abs() < 1e-12);
        assert!(gaussian_kl(&gaussian(&[(1.0, 0.0), (0.0, 0.0)]), &p).is_err());
    }

    #[test]
    fn kl_matches_monte_carlo_estimate() {
        let q = gaussian(&[(0.3, -0.4), (-1.0, 0.5)]);
        let p = gaussian(&[(0.0, 0.2), (0.5, -0.3)]);
        let exact = gaussian_kl(&q, &p).unwrap();
        let log_density = |x: f64, m: f64, lv: f64| -0.5 * ((x - m).powi(2) / lv.exp() + lv + (2.0 * std::f64::consts::PI).ln());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let samples = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..samples {
            for i in 0..2 {
                let (mq, lq) = (q.mean.data()[i] as f64, q.log_variance.data()[i] as f64);
                let (mp, lp) = (p.mean.data()[i] as f64, p.log_variance.data()[i] as f64);
                let e: f64 = StandardNormal.sample(&mut rng);
                let x = mq + (0.5 * lq).exp() * e;
                acc += log_density(x, mq, lq) - log_density(x, mp, lp);
            }
        }
        let mc = acc / samples as f64;
        assert!((mc - exact).abs() <= 0.01 * exact, "MC {mc} vs closed form {exact}");
    }

    #[test]
    fn kl_is_non_negative_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let mut draw = || (rng.gen_range(-3.0..3.0), rng.gen_range(-12.0..12.0));
            let q = gaussian(&[draw(), draw(), draw()]);
            let p = gaussian(&[draw(), draw(), draw()]);
            assert!(gaussian_kl(&q, &p).unwrap() >= 0.0);
        }
    }

    #[test]
    fn log_variance_is_clamped() {
        let q = gaussian(&[(0.0, 40.0), (0.0, -40.0)]);
        assert_eq!(q.log_variance.data(), &[10.0, -10.0]);
    }

    #[test]
    fn nll_closed_form_examples() {
        let f = random_frame(64, 1);
        let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        let at1 = gaussian_nll(&f, &f, 1.0).unwrap();
        assert!((at1 - 12288.0 * half_ln_2pi).abs() < 1e-6);
        let at2 = gaussian_nll(&f, &f, 2.0).unwrap();
        assert!((at2 - 12288.0 * (half_ln_2pi + 2f64.ln())).abs() < 1e-6);
        let a = Frame::new(1, 1, vec![1.0, 0.0, 0.0]).unwrap();
        let b = Frame::new(1, 1, vec![0.0, 0.0, 0.0]).unwrap();
        let v = gaussian_nll(&a, &b, 1.0).unwrap() - 2.0 * half_ln_2pi;
        assert!((v - (0.5 + half_ln_2pi)).abs() < 1e-12);
        assert!(gaussian_nll(&a, &b, 0.0).is_err());
        assert!(gaussian_nll(&a, &b, -1.0).is_err());
    }

    #[test]
    fn reparameterized_samples_have_posterior_mean() {
        let n = 100_000;
        let (mu, lv) = (0.7f64, 0.6f64);
        let mut g = Graph::<f64>::new();
        let m = g.constant(Tensor::full(&[n], mu));
        let l = g.constant(Tensor::full(&[n], lv));
        let eps = g.constant(step_noise::<f64>(9, 1, &[n]).remove(0));
        let z = reparameterize(&mut g, m, l, eps).unwrap();
        let mean = g.value(z).sum() / n as f64;
        let se = (lv.exp() / n as f64).sqrt();
        assert!((mean - mu).abs() <= 3.0 * se, "sample mean {mean}");
    }

    #[test]
    fn graph_terms_match_reference_functions() {
        let cfg = small();
        let draw = init_draw::<f64>(3, cfg);
        let r = random_repr(&cfg, 1);
        let x = random_frame(8, 2);
        let terms = elbo_forward_with(&draw, &r, &pose(), &x, 3, 1.3, 7, DrawOptions::default()).unwrap();
        assert_eq!(terms.kl_per_step.len(), 3);
        let reference = gaussian_nll(&x, &terms.reconstruction, 1.3).unwrap();
        assert!((terms.nll - reference).abs() <= 1e-6 * reference.abs());
        assert!(terms.kl_per_step.iter().all(|k| *k >= 0.0));
        assert!(terms.reconstruction.data().iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn kl_steps_match_closed_form_on_graph_gaussians() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 12;
        let mut vals = || (0..n).map(|_| rng.gen_range(-2.0f32..2.0)).collect::<Vec<_>>();
        let (mq, lq, mp, lp) = (vals(), vals(), vals(), vals());
        let t = |v: &Vec<f32>| Tensor::from_vec(&[n], v.clone()).unwrap();
        let mut g = Graph::<f64>::new();
        let vars: Vec<Var> = [&mq, &lq, &mp, &lp].iter().map(|v| g.constant(t(v).cast())).collect();
        let k = kl_graph(&mut g, (vars[0], vars[1]), (vars[2], vars[3])).unwrap();
        let reference = gaussian_kl(&GaussianParams::new(t(&mq), t(&lq)).unwrap(), &GaussianParams::new(t(&mp), t(&lp)).unwrap()).unwrap();
        assert!((g.value(k).item() - reference).abs() <= 1e-9 * reference.abs());
    }

    #[test]
    fn posterior_equal_to_prior_gives_zero_kl() {
        let cfg = small();
        let draw = init_draw::<f32>(3, cfg);
        let opts = DrawOptions { posterior_equals_prior: true };
        let terms = elbo_forward_with(&draw, &random_repr(&cfg, 1), &pose(), &random_frame(8, 2), 4, 1.0, 7, opts).unwrap();
        assert_eq!(terms.kl_per_step, vec![0.0; 4]);
    }

    #[test]
    fn elbo_and_generation_are_deterministic() {
        let cfg = small();
        let draw = init_draw::<f32>(3, cfg);
        let (r, x) = (random_repr(&cfg, 1), random_frame(8, 2));
        let a = elbo_forward(&draw, &r, &pose(), &x, 8, 2.0, 5).unwrap();
        assert_eq!(a.kl_per_step.len(), 8);
        assert_eq!(a, elbo_forward(&draw, &r, &pose(), &x, 8, 2.0, 5).unwrap());
        assert_ne!(a, elbo_forward(&draw, &r, &pose(), &x, 8, 2.0, 6).unwrap());
        let f = generate(&draw, &r, &pose(), 2, 1).unwrap();
        assert_eq!(f, generate(&draw, &r, &pose(), 2, 1).unwrap());
        assert!(f.data().iter().all(|v| *v > 0.0 && *v < 1.0));
        assert!(generate(&draw, &r, &pose(), 0, 1).is_err());
    }

    #[test]
    fn default_configuration_shapes() {
        let cfg = DrawConfig::default();
        let draw = init_draw::<f32>(1, cfg);
        let r = SceneRepresentation(Tensor::zeros(&[64, 16, 16]));
        let f = generate(&draw, &r, &pose(), 2, 1).unwrap();
        assert_eq!((f.height(), f.width()), (64, 64));
        let bad = SceneRepresentation(Tensor::zeros(&[32, 16, 16]));
        assert!(matches!(generate(&draw, &bad, &pose(), 2, 1), Err(Error::Shape(_))));
    }
}
