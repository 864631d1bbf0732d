//! Alternating optimization of the encoder/decoder and the discriminator.
//!
//! Each step first updates the discriminator on (target, detached
//! reconstruction), then updates the generator: the ELBO gradient reaches
//! encoder and decoder, the adversarial and feature-matching gradient is
//! stopped at the scene representation so only the decoder receives it.

mod adam;
mod checkpoint;
mod history;

use std::collections::VecDeque;
use std::path::PathBuf;

use gaqn_autograd::{Graph, Tensor, Var};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use history::LossHistory;

use crate::dataset::{sample_batch_with, Batch, ContextSize, SceneRecord};
use crate::discriminator::{init_discriminator, DiscConfig, DiscParams, FeatureVector};
use crate::draw::{init_draw, DrawConfig, DrawOptions, DrawParams};
use crate::encoder::{init_encoder, EncoderConfig, EncoderParams};
use crate::losses::{
    composite_report, fm_graph, lsgan_d_graph, lsgan_g_graph, sigma_schedule, vanilla_gan_d_graph, vanilla_gan_g_graph, CompositeInputs,
    LossReport, LossWeights, Mode, SigmaSchedule,
};
use crate::{Error, Result};

/// Number of recent steps whose mean ELBO is kept as the training loss.
pub const RECENT_WINDOW: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    pub steps: u64,
    pub batch_size: usize,
    /// Recurrent decoder steps `M`.
    pub gen_layers: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    pub sigma: SigmaSchedule,
    pub weights: LossWeights,
    pub max_context: usize,
    /// Discriminator updates per generator update.
    pub d_steps: usize,
    /// Global gradient-norm limit per optimizer, if any.
    pub grad_clip: Option<f64>,
    /// Linear learning-rate warm-up length in steps.
    pub warmup_steps: u64,
    pub checkpoint_every: Option<u64>,
    pub encoder: EncoderConfig,
    pub draw: DrawConfig,
    pub disc: DiscConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Gaqn,
            steps: 1000,
            batch_size: 20,
            gen_layers: 8,
            lr_g: 1e-4,
            lr_d: 4e-4,
            adam: AdamConfig::default(),
            seed: 0,
            sigma: SigmaSchedule::default(),
            weights: LossWeights::default(),
            max_context: crate::dataset::DEFAULT_MAX_CONTEXT,
            d_steps: 1,
            grad_clip: None,
            warmup_steps: 0,
            checkpoint_every: None,
            encoder: EncoderConfig::default(),
            draw: DrawConfig::default(),
            disc: DiscConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Small configuration for single-CPU runs: M=4, batch 4, h=32.
    pub fn desk() -> Self {
        let mut c = TrainConfig { batch_size: 4, gen_layers: 4, ..Default::default() };
        c.draw.hidden = 32;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Invalid(msg));
        if !(self.lr_g > 0.0 && self.lr_d > 0.0) {
            return bad(format!("learning rates must be positive (lr_g {}, lr_d {})", self.lr_g, self.lr_d));
        }
        if self.batch_size < 1 || self.gen_layers < 1 || self.d_steps < 1 || self.max_context < 1 {
            return bad("batch size, generative layers, discriminator steps and context size must be at least 1".into());
        }
        if !(self.sigma.initial > 0.0 && self.sigma.final_ > 0.0) {
            return bad("sigma endpoints must be positive".into());
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return bad("gradient clip must be positive".into());
        }
        let size = self.encoder.image_size;
        if size % 4 != 0 || self.draw.image_size != size || self.disc.image_size != size {
            return bad("encoder, decoder and discriminator must agree on an image size divisible by 4".into());
        }
        if self.draw.repr_channels != self.encoder.repr_channels {
            return bad("decoder representation channels must match the encoder".into());
        }
        if self.disc.feature_block >= self.disc.block_channels.len() {
            return bad("feature block index out of range".into());
        }
        if size >> (self.disc.block_channels.len() + 1) == 0 {
            return bad("too many discriminator blocks for the image size".into());
        }
        Ok(())
    }

    /// Identifies everything that shapes training except its length and
    /// checkpoint cadence, so a run can be resumed with a larger step budget.
    pub fn hash(&self) -> [u8; 32] {
        let mut c = self.clone();
        c.steps = 0;
        c.checkpoint_every = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        Sha256::digest(json.as_bytes()).into()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Everything needed to continue training exactly.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub config: TrainConfig,
    pub encoder: EncoderParams,
    pub draw: DrawParams,
    pub disc: DiscParams,
    pub adam_encoder: Adam,
    pub adam_draw: Adam,
    pub adam_disc: Adam,
    /// Completed steps.
    pub step: u64,
    rng: ChaCha8Rng,
    recent_elbo: VecDeque<f64>,
}

/// Result of one discriminator update.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscStep {
    pub real_logits: Vec<f32>,
    pub fake_logits: Vec<f32>,
    pub loss: f64,
    /// False when the loss or its gradient was not finite.
    pub applied: bool,
}

/// Gradients of the two generator objectives, one slot per parameter.
#[derive(Clone, Debug)]
pub struct GeneratorGradients {
    pub elbo_encoder: Vec<Option<Tensor<f32>>>,
    pub elbo_draw: Vec<Option<Tensor<f32>>>,
    pub adversarial_encoder: Vec<Option<Tensor<f32>>>,
    pub adversarial_draw: Vec<Option<Tensor<f32>>>,
}

fn features(t: &Tensor<f32>) -> Vec<FeatureVector> {
    (0..t.batch()).map(|i| FeatureVector(t.batch_item(i).into_data())).collect()
}

fn all_finite(grads: &[Option<Tensor<f32>>]) -> bool {
    grads.iter().flatten().all(Tensor::all_finite)
}

fn collect(grads: &gaqn_autograd::Gradients<f32>, vars: &[Var]) -> Vec<Option<Tensor<f32>>> {
    vars.iter().map(|&v| grads.get(v).cloned()).collect()
}

fn add_grads(a: &mut [Option<Tensor<f32>>], b: Vec<Option<Tensor<f32>>>) {
    for (x, y) in a.iter_mut().zip(b) {
        match (x.as_mut(), y) {
            (Some(x), Some(y)) => x.add_assign(&y),
            (None, Some(y)) => *x = Some(y),
            _ => {}
        }
    }
}

/// Scales all gradients in `sets` so their joint L2 norm is at most `limit`.
fn clip(sets: &mut [&mut Vec<Option<Tensor<f32>>>], limit: f64) {
    let norm = sets
        .iter()
        .flat_map(|s| s.iter().flatten())
        .flat_map(|t| t.data())
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        .sqrt();
    if norm > limit {
        let k = (limit / norm) as f32;
        for s in sets.iter_mut() {
            for t in s.iter_mut().flatten() {
                t.data_mut().iter_mut().for_each(|v| *v *= k);
            }
        }
    }
}

/// Generator-side graph of one batch.
struct Forward {
    graph: Graph<f32>,
    encoder_vars: Vec<Var>,
    draw_vars: Vec<Var>,
    repr: Var,
    target: Var,
    reconstruction: Var,
    elbo: Var,
    nll: f64,
    kl_total: f64,
}

impl TrainState {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut master = ChaCha8Rng::seed_from_u64(config.seed);
        let encoder = init_encoder(master.next_u64(), config.encoder);
        let draw = init_draw(master.next_u64(), config.draw);
        let disc = init_discriminator(master.next_u64(), config.disc.clone());
        Ok(TrainState {
            adam_encoder: Adam::new(&encoder.params),
            adam_draw: Adam::new(&draw.params),
            adam_disc: Adam::new(&disc.params),
            encoder,
            draw,
            disc,
            step: 0,
            rng: master,
            recent_elbo: VecDeque::new(),
            config,
        })
    }

    /// Mean ELBO over the most recent training steps.
    pub fn recent_train_elbo(&self) -> Option<f64> {
        (!self.recent_elbo.is_empty()).then(|| self.recent_elbo.iter().sum::<f64>() / self.recent_elbo.len() as f64)
    }

    /// Draws the next batch and its reparameterization-noise seed.
    pub fn next_batch(&mut self, records: &[SceneRecord]) -> Result<(Batch, u64)> {
        let batch_seed = self.rng.next_u64();
        let noise_seed = self.rng.next_u64();
        let batch = sample_batch_with(records, self.config.batch_size, batch_seed, ContextSize::UpTo(self.config.max_context))?;
        Ok((batch, noise_seed))
    }

    fn learning_rate(&self, base: f64) -> f64 {
        match self.config.warmup_steps {
            0 => base,
            w => base * ((self.step + 1) as f64 / w as f64).min(1.0),
        }
    }

    fn forward(&self, batch: &Batch, noise_seed: u64, sigma: f64) -> Result<Forward> {
        let t = batch.tensors::<f32>()?;
        let mut g = Graph::new();
        let enc = self.encoder.params.bind(&mut g, true);
        let draw = self.draw.params.bind(&mut g, true);
        let frames = g.constant(t.context_frames);
        let poses = g.constant(t.context_poses);
        let query = g.constant(t.query_poses);
        let target = g.constant(t.targets);
        let repr = self.encoder.represent(&mut g, &enc, frames, poses, &t.context_counts)?;
        let out = self.draw.forward(&mut g, &draw, repr, query, Some(target), self.config.gen_layers, sigma, noise_seed, DrawOptions::default())?;
        let (nll, kl) = (out.nll.expect("target given"), out.kl_total.expect("target given"));
        let elbo = g.add(nll, kl)?;
        Ok(Forward {
            nll: g.value(nll).item() as f64,
            kl_total: g.value(kl).item() as f64,
            encoder_vars: enc.vars().to_vec(),
            draw_vars: draw.vars().to_vec(),
            graph: g,
            repr,
            target,
            reconstruction: out.reconstruction,
            elbo,
        })
    }

    /// One discriminator update on `real` targets and detached `fake`
    /// reconstructions. Touches only discriminator parameters and moments.
    pub fn discriminator_step(&mut self, real: &Tensor<f32>, fake: &Tensor<f32>) -> Result<DiscStep> {
        let mut g = Graph::new();
        let p = self.disc.params.bind(&mut g, true);
        let r = g.constant(real.clone());
        let f = g.constant(fake.clone());
        let dr = self.disc.forward(&mut g, &p, r)?.logits;
        let df = self.disc.forward(&mut g, &p, f)?.logits;
        let loss = match self.config.mode {
            Mode::GqnGan => vanilla_gan_d_graph(&mut g, dr, df)?,
            _ => lsgan_d_graph(&mut g, dr, df)?,
        };
        let value = g.value(loss).item() as f64;
        let mut out = DiscStep { real_logits: g.value(dr).data().to_vec(), fake_logits: g.value(df).data().to_vec(), loss: value, applied: false };
        if !value.is_finite() {
            return Ok(out);
        }
        let grads = g.backward(loss)?;
        let mut grads = collect(&grads, p.vars());
        if !all_finite(&grads) {
            return Ok(out);
        }
        if let Some(limit) = self.config.grad_clip {
            clip(&mut [&mut grads], limit);
        }
        let lr = self.learning_rate(self.config.lr_d);
        self.adam_disc.step(&mut self.disc.params, &grads, lr, &self.config.adam);
        out.applied = true;
        Ok(out)
    }

    /// Adds the adversarial objective (with the current discriminator as a
    /// constant) to `fw` and returns it with the generator-side logits and
    /// features.
    fn adversarial_objective(&self, fw: &mut Forward) -> Result<(Var, Vec<f32>, Vec<FeatureVector>, Vec<FeatureVector>)> {
        let g = &mut fw.graph;
        let p = self.disc.params.bind(g, false);
        let fake = self.disc.forward(g, &p, fw.reconstruction)?;
        let w = self.config.weights;
        let adv = match self.config.mode {
            Mode::GqnGan => vanilla_gan_g_graph(g, fake.logits),
            _ => lsgan_g_graph(g, fake.logits),
        };
        let mut total = g.scale(adv, w.adversarial as f32);
        let (mut f_real, mut f_fake) = (Vec::new(), Vec::new());
        if self.config.mode.feature_matching() {
            let real = self.disc.forward(g, &p, fw.target)?;
            let fm = fm_graph(g, real.features, fake.features)?;
            let fm = g.scale(fm, w.feature_matching as f32);
            total = g.add(total, fm)?;
            f_real = features(g.value(real.features));
            f_fake = features(g.value(fake.features));
        }
        Ok((total, g.value(fake.logits).data().to_vec(), f_real, f_fake))
    }

    /// Gradients of the ELBO and of the adversarial objective for a batch,
    /// without updating anything. The adversarial gradient is stopped at the
    /// scene representation.
    pub fn generator_gradients(&self, batch: &Batch, noise_seed: u64) -> Result<GeneratorGradients> {
        let sigma = sigma_schedule(self.step, &self.config.sigma);
        let mut fw = self.forward(batch, noise_seed, sigma)?;
        let elbo = fw.graph.backward(fw.elbo)?;
        let mut out = GeneratorGradients {
            elbo_encoder: collect(&elbo, &fw.encoder_vars),
            elbo_draw: collect(&elbo, &fw.draw_vars),
            adversarial_encoder: vec![None; fw.encoder_vars.len()],
            adversarial_draw: vec![None; fw.draw_vars.len()],
        };
        if self.config.mode.adversarial() {
            let (adv, ..) = self.adversarial_objective(&mut fw)?;
            let grads = fw.graph.backward_blocked(adv, &[fw.repr])?;
            out.adversarial_encoder = collect(&grads, &fw.encoder_vars);
            out.adversarial_draw = collect(&grads, &fw.draw_vars);
        }
        Ok(out)
    }

    fn diverged(&self, component: &str, report: LossReport) -> Error {
        Error::Diverged { step: report.step, component: component.to_string(), report: Box::new(report) }
    }

    /// One optimization step on `batch`. Non-finite losses abort with the
    /// diagnostic report, except in `gqn-gan` mode where the report is
    /// returned and the affected update skipped.
    pub fn train_step(&mut self, batch: &Batch, noise_seed: u64) -> Result<LossReport> {
        let cfg = self.config.clone();
        let sigma = sigma_schedule(self.step, &cfg.sigma);
        let step = self.step + 1;
        let tolerate = cfg.mode == Mode::GqnGan;
        let mut fw = self.forward(batch, noise_seed, sigma)?;

        let mut disc = DiscStep { real_logits: vec![], fake_logits: vec![], loss: 0.0, applied: true };
        if cfg.mode.adversarial() {
            let real = fw.graph.value(fw.target).clone();
            let fake = fw.graph.value(fw.reconstruction).clone();
            for i in 0..cfg.d_steps {
                let s = self.discriminator_step(&real, &fake)?;
                let applied = s.applied;
                if i == 0 {
                    disc = s;
                }
                if !applied {
                    break;
                }
            }
        }

        let (adv, gen_fake, f_real, f_fake) = if cfg.mode.adversarial() {
            let (v, l, fr, ff) = self.adversarial_objective(&mut fw)?;
            (Some(v), l, fr, ff)
        } else {
            (None, vec![], vec![], vec![])
        };
        let inputs = CompositeInputs {
            nll: fw.nll,
            kl_total: fw.kl_total,
            disc_real: &disc.real_logits,
            disc_fake: &disc.fake_logits,
            gen_fake: &gen_fake,
            f_real: &f_real,
            f_fake: &f_fake,
        };
        let report = composite_report(&inputs, cfg.mode, &cfg.weights, sigma, step)?;
        let skip = |this: &mut Self, report: LossReport| {
            this.step = step;
            Ok(report)
        };
        if let Some(component) = report.first_non_finite().or((!disc.applied).then_some("discriminator gradient")) {
            if !tolerate {
                return Err(self.diverged(component, report));
            }
            if !report.elbo.is_finite() || !report.gan_g.is_finite() {
                log::warn!("step {step}: non-finite {component}, generator update skipped");
                return skip(self, report);
            }
        }

        let elbo_grads = fw.graph.backward(fw.elbo)?;
        let mut enc_grads = collect(&elbo_grads, &fw.encoder_vars);
        let mut draw_grads = collect(&elbo_grads, &fw.draw_vars);
        drop(elbo_grads);
        if let Some(adv) = adv {
            let adv_grads = fw.graph.backward_blocked(adv, &[fw.repr])?;
            add_grads(&mut draw_grads, collect(&adv_grads, &fw.draw_vars));
        }
        if !all_finite(&enc_grads) || !all_finite(&draw_grads) {
            if !tolerate {
                return Err(self.diverged("generator gradient", report));
            }
            log::warn!("step {step}: non-finite generator gradient, update skipped");
            return skip(self, report);
        }
        if let Some(limit) = cfg.grad_clip {
            clip(&mut [&mut enc_grads, &mut draw_grads], limit);
        }
        let lr = self.learning_rate(cfg.lr_g);
        self.adam_encoder.step(&mut self.encoder.params, &enc_grads, lr, &cfg.adam);
        self.adam_draw.step(&mut self.draw.params, &draw_grads, lr, &cfg.adam);
        self.step = step;
        self.recent_elbo.push_back(report.elbo);
        if self.recent_elbo.len() > RECENT_WINDOW {
            self.recent_elbo.pop_front();
        }
        Ok(report)
    }
}

/// Hooks for [`train_loop_from`].
#[derive(Default)]
pub struct LoopOptions<'a> {
    /// Written every `checkpoint_every` steps and after the last step.
    pub checkpoint_path: Option<PathBuf>,
    pub on_report: Option<Box<dyn FnMut(&LossReport) + 'a>>,
}

/// Trains a fresh model for `config.steps` steps.
pub fn train_loop(config: TrainConfig, records: &[SceneRecord]) -> Result<(TrainState, LossHistory)> {
    train_loop_from(TrainState::new(config)?, records, LoopOptions::default())
}

/// Continues `state` until it has completed `state.config.steps` steps.
pub fn train_loop_from(mut state: TrainState, records: &[SceneRecord], mut options: LoopOptions) -> Result<(TrainState, LossHistory)> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut history = LossHistory::new();
    while state.step < state.config.steps {
        let at = state.step + 1;
        let wrap = |e: Error| match e {
            e @ Error::Diverged { .. } => e,
            e => Error::AtStep { step: at, source: Box::new(e) },
        };
        let (batch, noise) = state.next_batch(records).map_err(wrap)?;
        let report = state.train_step(&batch, noise).map_err(wrap)?;
        if let Some(cb) = options.on_report.as_mut() {
            cb(&report);
        }
        history.push(report)?;
        let due = state.config.checkpoint_every.is_some_and(|k| k > 0 && state.step % k == 0) || state.step == state.config.steps;
        if let (true, Some(path)) = (due, options.checkpoint_path.as_ref()) {
            let crc = save_checkpoint(&state, path).map_err(wrap)?;
            log::debug!("checkpoint at step {} written to {} (crc32 {crc:08x})", state.step, path.display());
        }
    }
    Ok((state, history))
}
