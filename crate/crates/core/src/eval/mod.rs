//! Test-set metrics, loss curves and qualitative image grids.

mod plots;
mod ssim;

use std::fmt::Write as _;
use std::path::Path;

use gaqn_autograd::Graph;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use plots::{comparison_csv, emit_comparison, emit_loss_plots, line_chart, CHART_HEIGHT, CHART_SERIES, CHART_WIDTH};
pub use ssim::{gaussian_taps, reflect, ssim, C1, C2, WINDOW, WINDOW_SIGMA};

use crate::dataset::{sample_batch_with, Batch, BatchItem, ContextSize, Frame, SceneRecord, CHANNELS};
use crate::draw::{generate_batch, DrawOptions};
use crate::losses::{sigma_schedule, Mode};
use crate::scene::write_ppm;
use crate::trainer::TrainState;
use crate::{Error, Result};

/// Context views given to the model for every evaluated query.
pub const EVAL_CONTEXT: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub mode: Mode,
    pub checkpoint_step: u64,
    pub n_scenes: usize,
    pub context_views: usize,
    pub seed: u64,
    /// Mean ELBO over the last training steps before the checkpoint; absent
    /// for an untrained model.
    pub train_loss: Option<f64>,
    /// Mean ELBO over test queries.
    pub test_loss: f64,
    /// Mean summed KL over test queries.
    pub kl_test_loss: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
}

impl MetricsRecord {
    fn fields(&self) -> Vec<(&'static str, String)> {
        vec![
            ("mode", self.mode.to_string()),
            ("checkpoint_step", self.checkpoint_step.to_string()),
            ("n_scenes", self.n_scenes.to_string()),
            ("context_views", self.context_views.to_string()),
            ("seed", self.seed.to_string()),
            ("train_loss", self.train_loss.map_or("none".to_string(), |v| v.to_string())),
            ("test_loss", self.test_loss.to_string()),
            ("kl_test_loss", self.kl_test_loss.to_string()),
            ("ssim_mean", self.ssim_mean.to_string()),
            ("ssim_std", self.ssim_std.to_string()),
        ]
    }

    /// One `key: value` line per field.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.fields() {
            writeln!(s, "{k}: {v}").unwrap();
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let f = self.fields();
        let keys: Vec<&str> = f.iter().map(|p| p.0).collect();
        let vals: Vec<&str> = f.iter().map(|p| p.1.as_str()).collect();
        format!("{}\n{}\n", keys.join(","), vals.join(","))
    }

    /// Writes the text report to `path` and the CSV next to it.
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(Error::io(path))?;
        let csv = path.with_extension("csv");
        std::fs::write(&csv, self.to_csv()).map_err(Error::io(&csv))
    }
}

/// Per-query evaluation result.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryEval {
    pub nll: f64,
    pub kl_total: f64,
    pub ssim: f64,
    /// Posterior-driven readout mean.
    pub reconstruction: Frame,
}

impl QueryEval {
    pub fn elbo(&self) -> f64 {
        self.nll + self.kl_total
    }
}

/// Evaluates one (context, query, target) tuple with σ at the state's step.
pub fn evaluate_query(state: &TrainState, item: &BatchItem, noise_seed: u64) -> Result<QueryEval> {
    let t = Batch { items: vec![item.clone()] }.tensors::<f32>()?;
    let mut g = Graph::new();
    let enc = state.encoder.params.bind(&mut g, false);
    let draw = state.draw.params.bind(&mut g, false);
    let frames = g.constant(t.context_frames);
    let poses = g.constant(t.context_poses);
    let query = g.constant(t.query_poses);
    let target = g.constant(t.targets);
    let repr = state.encoder.represent(&mut g, &enc, frames, poses, &t.context_counts)?;
    let sigma = sigma_schedule(state.step, &state.config.sigma);
    let out = state.draw.forward(&mut g, &draw, repr, query, Some(target), state.config.gen_layers, sigma, noise_seed, DrawOptions::default())?;
    let size = state.config.draw.image_size;
    let reconstruction = Frame::from_chw(size, size, g.value(out.reconstruction).data())?;
    Ok(QueryEval {
        nll: g.value(out.nll.expect("target given")).item() as f64,
        kl_total: g.value(out.kl_total.expect("target given")).item() as f64,
        ssim: ssim(&item.target, &reconstruction)?,
        reconstruction,
    })
}

/// One query per scene with exactly [`EVAL_CONTEXT`] context views, sampled
/// deterministically from `seed`. Scenes are processed in index order.
pub fn evaluate_model(state: &TrainState, records: &[SceneRecord], seed: u64) -> Result<MetricsRecord> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut evals = Vec::with_capacity(records.len());
    for (i, record) in records.iter().enumerate() {
        let (batch_seed, noise_seed) = (rng.next_u64(), rng.next_u64());
        let mut item = sample_batch_with(std::slice::from_ref(record), 1, batch_seed, ContextSize::Exactly(EVAL_CONTEXT))?.items.remove(0);
        item.scene = i;
        evals.push(evaluate_query(state, &item, noise_seed)?);
    }
    let n = evals.len() as f64;
    let mean = |f: &dyn Fn(&QueryEval) -> f64| evals.iter().map(f).sum::<f64>() / n;
    let ssim_mean = mean(&|e| e.ssim);
    Ok(MetricsRecord {
        mode: state.config.mode,
        checkpoint_step: state.step,
        n_scenes: records.len(),
        context_views: EVAL_CONTEXT,
        seed,
        train_loss: state.recent_train_elbo(),
        test_loss: mean(&|e| e.elbo()),
        kl_test_loss: mean(&|e| e.kl_total),
        ssim_mean,
        ssim_std: mean(&|e| (e.ssim - ssim_mean).powi(2)).sqrt(),
    })
}

/// Context views, ground truth and a prior sample side by side.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub image: Frame,
    pub item: BatchItem,
    pub generated: Frame,
}

/// Places frames of equal size left to right.
pub fn tile(frames: &[&Frame]) -> Result<Frame> {
    let first = frames.first().ok_or_else(|| Error::Invalid("nothing to tile".into()))?;
    let (h, w) = (first.height(), first.width());
    if frames.iter().any(|f| f.height() != h || f.width() != w) {
        return Err(Error::Shape("tiled frames differ in size".into()));
    }
    let total_w = w * frames.len();
    let mut data = vec![0.0; h * total_w * CHANNELS];
    for (k, f) in frames.iter().enumerate() {
        for y in 0..h {
            let src = &f.data()[y * w * CHANNELS..(y + 1) * w * CHANNELS];
            let o = (y * total_w + k * w) * CHANNELS;
            data[o..o + w * CHANNELS].copy_from_slice(src);
        }
    }
    Frame::new(h, total_w, data)
}

/// Renders `context | ground truth | generated` for one scene and writes it
/// as PPM to `out`. Up to [`EVAL_CONTEXT`] context views are used.
pub fn render_grid(state: &TrainState, records: &[SceneRecord], scene_index: usize, seed: u64, out: &Path) -> Result<Grid> {
    let record = records
        .get(scene_index)
        .ok_or_else(|| Error::Invalid(format!("scene {scene_index} out of range (dataset has {})", records.len())))?;
    let context = EVAL_CONTEXT.min(record.len() - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (batch_seed, noise_seed) = (rng.next_u64(), rng.next_u64());
    let mut item = sample_batch_with(std::slice::from_ref(record), 1, batch_seed, ContextSize::Exactly(context))?.items.remove(0);
    item.scene = scene_index;
    let t = Batch { items: vec![item.clone()] }.tensors::<f32>()?;
    let mut g = Graph::new();
    let enc = state.encoder.params.bind(&mut g, false);
    let frames = g.constant(t.context_frames);
    let poses = g.constant(t.context_poses);
    let repr = state.encoder.represent(&mut g, &enc, frames, poses, &t.context_counts)?;
    let repr = g.value(repr).clone();
    let size = state.config.draw.image_size;
    let sample = generate_batch(&state.draw, repr, t.query_poses, state.config.gen_layers, noise_seed)?;
    let generated = Frame::from_chw(size, size, sample.data())?;
    let mut tiles: Vec<&Frame> = item.context_frames.iter().collect();
    tiles.push(&item.target);
    tiles.push(&generated);
    let image = tile(&tiles)?;
    write_ppm(&image, out)?;
    Ok(Grid { image, item, generated })
}
