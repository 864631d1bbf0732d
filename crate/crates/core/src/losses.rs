//! Adversarial, feature-matching and composite objectives, plus the
//! pixel-σ annealing schedule.
//!
//! Each loss exists twice: a plain function over score slices used for
//! reporting, and a graph builder used for gradients.

use gaqn_autograd::{sigmoid, Graph, Scalar, Var};
use serde::{Deserialize, Serialize};

use crate::discriminator::FeatureVector;
use crate::{Error, Result};

pub const PROB_FLOOR: f64 = 1e-7;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

fn mean_of(xs: &[f32], f: impl Fn(f64) -> f64) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().map(|&x| f(x as f64)).sum::<f64>() / xs.len() as f64
}

/// `−mean log σ(d)` over fake logits, probabilities clamped to `[1e-7, 1−1e-7]`.
pub fn vanilla_gan_g(d_fake: &[f32]) -> f64 {
    mean_of(d_fake, |d| -clamp_prob(sigmoid(d)).ln())
}

pub fn vanilla_gan_d(d_real: &[f32], d_fake: &[f32]) -> f64 {
    mean_of(d_real, |d| -clamp_prob(sigmoid(d)).ln()) + mean_of(d_fake, |d| -(1.0 - clamp_prob(sigmoid(d))).ln())
}

/// `mean (d − 1)²`.
pub fn lsgan_g(d_fake: &[f32]) -> f64 {
    mean_of(d_fake, |d| (d - 1.0).powi(2))
}

/// `mean d_fake² + mean (d_real − 1)²`.
pub fn lsgan_d(d_real: &[f32], d_fake: &[f32]) -> f64 {
    mean_of(d_fake, |d| d * d) + mean_of(d_real, |d| (d - 1.0).powi(2))
}

fn batch_mean(fs: &[FeatureVector]) -> Vec<f64> {
    let mut m = vec![0.0; fs[0].0.len()];
    for f in fs {
        for (a, &v) in m.iter_mut().zip(&f.0) {
            *a += v as f64;
        }
    }
    m.iter().map(|v| v / fs.len() as f64).collect()
}

/// Squared distance between the batch means of real and fake features.
pub fn fm_loss(f_real: &[FeatureVector], f_fake: &[FeatureVector]) -> Result<f64> {
    if f_real.is_empty() || f_real.len() != f_fake.len() {
        return Err(Error::Shape(format!("feature batches of {} and {}", f_real.len(), f_fake.len())));
    }
    let dim = f_real[0].0.len();
    if f_real.iter().chain(f_fake).any(|f| f.0.len() != dim) {
        return Err(Error::Shape("feature vectors differ in length".into()));
    }
    let (a, b) = (batch_mean(f_real), batch_mean(f_fake));
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaSchedule {
    pub initial: f64,
    pub final_: f64,
    pub horizon: u64,
}

impl Default for SigmaSchedule {
    fn default() -> Self {
        SigmaSchedule { initial: 2.0, final_: 0.7, horizon: 20_000 }
    }
}

/// Linear interpolation from `initial` to `final_` over `horizon` steps, then constant.
pub fn sigma_schedule(step: u64, cfg: &SigmaSchedule) -> f64 {
    let t = if cfg.horizon == 0 { 1.0 } else { (step as f64 / cfg.horizon as f64).min(1.0) };
    cfg.initial + (cfg.final_ - cfg.initial) * t
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// ELBO only.
    #[serde(rename = "gqn")]
    Gqn,
    /// ELBO plus the logistic adversarial loss.
    #[serde(rename = "gqn-gan")]
    GqnGan,
    /// ELBO plus the least-squares adversarial loss.
    #[serde(rename = "gqn-lsgan")]
    GqnLsgan,
    /// ELBO plus least-squares adversarial and feature-matching losses.
    #[serde(rename = "gaqn")]
    Gaqn,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Gqn, Mode::GqnGan, Mode::GqnLsgan, Mode::Gaqn];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Gqn => "gqn",
            Mode::GqnGan => "gqn-gan",
            Mode::GqnLsgan => "gqn-lsgan",
            Mode::Gaqn => "gaqn",
        }
    }

    pub fn adversarial(self) -> bool {
        self != Mode::Gqn
    }

    pub fn feature_matching(self) -> bool {
        self == Mode::Gaqn
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| Error::Invalid(format!("unknown mode {s:?}")))
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub adversarial: f64,
    pub feature_matching: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { adversarial: 1.0, feature_matching: 1.0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub sigma: f64,
    pub nll: f64,
    pub kl_total: f64,
    pub elbo: f64,
    pub lsgan_g: f64,
    pub lsgan_d: f64,
    pub fm: f64,
    pub gan_g: f64,
    pub gan_d: f64,
    pub total_generator: f64,
    pub total_discriminator: f64,
}

impl LossReport {
    pub const COLUMNS: [&'static str; 12] = [
        "step",
        "sigma",
        "nll",
        "kl_total",
        "elbo",
        "lsgan_g",
        "lsgan_d",
        "fm",
        "gan_g",
        "gan_d",
        "total_generator",
        "total_discriminator",
    ];

    pub fn values(&self) -> [f64; 11] {
        [
            self.sigma,
            self.nll,
            self.kl_total,
            self.elbo,
            self.lsgan_g,
            self.lsgan_d,
            self.fm,
            self.gan_g,
            self.gan_d,
            self.total_generator,
            self.total_discriminator,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }

    /// Name of the first non-finite component, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.values().iter().position(|v| !v.is_finite()).map(|i| Self::COLUMNS[i + 1])
    }
}

/// Raw quantities of one training step.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompositeInputs<'a> {
    pub nll: f64,
    pub kl_total: f64,
    /// Discriminator logits on real targets, as seen by the D update.
    pub disc_real: &'a [f32],
    /// Discriminator logits on reconstructions, as seen by the D update.
    pub disc_fake: &'a [f32],
    /// Discriminator logits on reconstructions, as seen by the generator update.
    pub gen_fake: &'a [f32],
    pub f_real: &'a [FeatureVector],
    pub f_fake: &'a [FeatureVector],
}

/// Assembles a [`LossReport`]. Adversarial and feature terms not used by
/// `mode` are reported as 0. `total_generator` is the adversarial generator
/// objective (the ELBO is reported separately).
pub fn composite_losses(inputs: &CompositeInputs, mode: Mode, weights: &LossWeights, sigma: f64, step: u64) -> Result<LossReport> {
    let r = composite_report(inputs, mode, weights, sigma, step)?;
    match r.first_non_finite() {
        Some(component) => Err(Error::NonFinite { component: component.to_string() }),
        None => Ok(r),
    }
}

/// Like [`composite_losses`] but keeps non-finite components in the report.
pub fn composite_report(inputs: &CompositeInputs, mode: Mode, weights: &LossWeights, sigma: f64, step: u64) -> Result<LossReport> {
    let mut r = LossReport { step, sigma, nll: inputs.nll, kl_total: inputs.kl_total, ..Default::default() };
    r.elbo = r.nll + r.kl_total;
    match mode {
        Mode::Gqn => {}
        Mode::GqnGan => {
            r.gan_g = vanilla_gan_g(inputs.gen_fake);
            r.gan_d = vanilla_gan_d(inputs.disc_real, inputs.disc_fake);
            r.total_generator = weights.adversarial * r.gan_g;
            r.total_discriminator = r.gan_d;
        }
        Mode::GqnLsgan | Mode::Gaqn => {
            r.lsgan_g = lsgan_g(inputs.gen_fake);
            r.lsgan_d = lsgan_d(inputs.disc_real, inputs.disc_fake);
            r.total_generator = weights.adversarial * r.lsgan_g;
            if mode.feature_matching() {
                r.fm = fm_loss(inputs.f_real, inputs.f_fake)?;
                r.total_generator += weights.feature_matching * r.fm;
            }
            r.total_discriminator = r.lsgan_d;
        }
    }
    Ok(r)
}

fn neg_log_prob<T: Scalar>(g: &mut Graph<T>, logits: Var, fake: bool) -> Var {
    let p = g.sigmoid(logits);
    let p = g.clamp(p, T::lit(PROB_FLOOR), T::lit(1.0 - PROB_FLOOR));
    let p = if fake {
        let neg = g.scale(p, T::lit(-1.0));
        g.offset(neg, T::one())
    } else {
        p
    };
    let l = g.log(p);
    let m = g.mean(l);
    g.scale(m, T::lit(-1.0))
}

pub fn vanilla_gan_g_graph<T: Scalar>(g: &mut Graph<T>, d_fake: Var) -> Var {
    neg_log_prob(g, d_fake, false)
}

pub fn vanilla_gan_d_graph<T: Scalar>(g: &mut Graph<T>, d_real: Var, d_fake: Var) -> Result<Var> {
    let a = neg_log_prob(g, d_real, false);
    let b = neg_log_prob(g, d_fake, true);
    Ok(g.add(a, b)?)
}

fn mean_sq_from<T: Scalar>(g: &mut Graph<T>, x: Var, target: f64) -> Var {
    let d = g.offset(x, T::lit(-target));
    let s = g.square(d);
    g.mean(s)
}

pub fn lsgan_g_graph<T: Scalar>(g: &mut Graph<T>, d_fake: Var) -> Var {
    mean_sq_from(g, d_fake, 1.0)
}

pub fn lsgan_d_graph<T: Scalar>(g: &mut Graph<T>, d_real: Var, d_fake: Var) -> Result<Var> {
    let a = mean_sq_from(g, d_fake, 0.0);
    let b = mean_sq_from(g, d_real, 1.0);
    Ok(g.add(a, b)?)
}

/// `f_real`, `f_fake`: `[N, C]`.
pub fn fm_graph<T: Scalar>(g: &mut Graph<T>, f_real: Var, f_fake: Var) -> Result<Var> {
    let n = g.shape(f_fake)[0];
    let diff = g.sub(f_real, f_fake)?;
    let sum = g.segment_sum(diff, &[n])?;
    let mean = g.scale(sum, T::lit(1.0 / n as f64));
    let sq = g.square(mean);
    Ok(g.sum(sq))
}
