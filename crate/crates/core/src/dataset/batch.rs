use gaqn_autograd::{Scalar, Tensor};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{encode_pose, Frame, PoseEncoded, SceneRecord, CHANNELS, POSE_DIM};
use crate::{Error, Result};

pub const DEFAULT_MAX_CONTEXT: usize = 4;

/// How many context views each batch element receives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContextSize {
    /// Uniform in `1..=max`.
    UpTo(usize),
    Exactly(usize),
}

/// One (context views, query pose, target) tuple.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchItem {
    pub scene: usize,
    pub query_index: usize,
    pub context_indices: Vec<usize>,
    pub context_frames: Vec<Frame>,
    pub context_poses: Vec<PoseEncoded>,
    pub query_pose: PoseEncoded,
    pub target: Frame,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub items: Vec<BatchItem>,
}

/// Samples `batch_size` tuples; context size is uniform in `1..=max_context`.
pub fn sample_batch(records: &[SceneRecord], batch_size: usize, seed: u64, max_context: usize) -> Result<Batch> {
    sample_batch_with(records, batch_size, seed, ContextSize::UpTo(max_context))
}

pub fn sample_batch_with(records: &[SceneRecord], batch_size: usize, seed: u64, context: ContextSize) -> Result<Batch> {
    if batch_size < 1 {
        return Err(Error::Invalid("batch size must be at least 1".into()));
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (ContextSize::UpTo(limit) | ContextSize::Exactly(limit)) = context;
    if limit < 1 {
        return Err(Error::Invalid("context size must be at least 1".into()));
    }
    if let Some(r) = records.iter().find(|r| r.len() < limit + 1) {
        return Err(Error::Invalid(format!("context size {limit} needs K ≥ {}, scene has {}", limit + 1, r.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items = (0..batch_size)
        .map(|_| {
            let scene = rng.gen_range(0..records.len());
            let record = &records[scene];
            let k = record.len();
            let n = match context {
                ContextSize::UpTo(max) => rng.gen_range(1..=max),
                ContextSize::Exactly(n) => n,
            };
            let query_index = rng.gen_range(0..k);
            let context_indices: Vec<usize> = index::sample(&mut rng, k - 1, n)
                .into_iter()
                .map(|i| if i >= query_index { i + 1 } else { i })
                .collect();
            let query = &record.views[query_index];
            BatchItem {
                scene,
                query_index,
                context_frames: context_indices.iter().map(|&i| record.views[i].frame.clone()).collect(),
                context_poses: context_indices.iter().map(|&i| encode_pose(&record.views[i].pose)).collect(),
                context_indices,
                query_pose: encode_pose(&query.pose),
                target: query.frame.clone(),
            }
        })
        .collect();
    Ok(Batch { items })
}

/// Network-ready tensors for a batch.
#[derive(Clone, Debug)]
pub struct BatchTensors<T> {
    /// `[Σ N_b, 3, H, W]`, grouped by batch element.
    pub context_frames: Tensor<T>,
    /// `[Σ N_b, 7]`.
    pub context_poses: Tensor<T>,
    pub context_counts: Vec<usize>,
    /// `[B, 7]`.
    pub query_poses: Tensor<T>,
    /// `[B, 3, H, W]`.
    pub targets: Tensor<T>,
}

pub fn frames_tensor<T: Scalar>(frames: &[&Frame]) -> Result<Tensor<T>> {
    let first = frames.first().ok_or_else(|| Error::Invalid("no frames".into()))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(frames.len() * CHANNELS * h * w);
    for f in frames {
        if f.height() != h || f.width() != w {
            return Err(Error::Shape(format!("frame {}x{} in a {h}x{w} batch", f.height(), f.width())));
        }
        data.extend(f.to_chw().into_iter().map(|v| T::from_f32(v).unwrap()));
    }
    Ok(Tensor::from_vec(&[frames.len(), CHANNELS, h, w], data)?)
}

pub fn poses_tensor<T: Scalar>(poses: &[PoseEncoded]) -> Tensor<T> {
    let data = poses.iter().flat_map(|p| p.0).map(|v| T::from_f32(v).unwrap()).collect();
    Tensor::from_vec(&[poses.len(), POSE_DIM], data).expect("pose tensor shape")
}

impl Batch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn tensors<T: Scalar>(&self) -> Result<BatchTensors<T>> {
        let ctx_frames: Vec<&Frame> = self.items.iter().flat_map(|it| it.context_frames.iter()).collect();
        let ctx_poses: Vec<PoseEncoded> = self.items.iter().flat_map(|it| it.context_poses.iter().copied()).collect();
        let targets: Vec<&Frame> = self.items.iter().map(|it| &it.target).collect();
        let query: Vec<PoseEncoded> = self.items.iter().map(|it| it.query_pose).collect();
        let targets = frames_tensor(&targets)?;
        let context_frames = if ctx_frames.is_empty() {
            let s = targets.shape();
            Tensor::zeros(&[0, s[1], s[2], s[3]])
        } else {
            frames_tensor(&ctx_frames)?
        };
        Ok(BatchTensors {
            context_frames,
            context_poses: poses_tensor(&ctx_poses),
            context_counts: self.items.iter().map(|it| it.context_frames.len()).collect(),
            query_poses: poses_tensor(&query),
            targets,
        })
    }
}
