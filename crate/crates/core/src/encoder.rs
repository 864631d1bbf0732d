//! Scene encoder: each posed view becomes a spatial feature map at a quarter
//! of the image resolution; a scene is the sum over its context views.
//!
//! Layout (for 64×64 inputs):
//!
//! | layer                         | output       |
//! |-------------------------------|--------------|
//! | conv 2×2/2, ReLU              | 32×32×stem   |
//! | conv 2×2/2, ReLU              | 16×16×C_r    |
//! | residual 3×3 stage            | 16×16×C_r    |
//! | concat broadcast pose, 3×3    | 16×16×C_r    |
//! | residual 3×3 stage            | 16×16×C_r    |
//! | conv 1×1                      | 16×16×C_r    |

use gaqn_autograd::{Graph, Scalar, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::dataset::{frames_tensor, poses_tensor, Frame, PoseEncoded, POSE_DIM};
use crate::params::{Bound, Initializer, ParamSet};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Representation channels `C_r`.
    pub repr_channels: usize,
    pub stem_channels: usize,
    pub image_size: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { repr_channels: 64, stem_channels: 32, image_size: 64 }
    }
}

impl EncoderConfig {
    pub fn repr_size(&self) -> usize {
        self.image_size / 4
    }

    pub fn repr_shape(&self) -> [usize; 3] {
        [self.repr_channels, self.repr_size(), self.repr_size()]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<T = f32> {
    pub config: EncoderConfig,
    pub params: ParamSet<T>,
}

pub fn init_encoder<T: Scalar>(seed: u64, config: EncoderConfig) -> EncoderParams<T> {
    let (s, c) = (config.stem_channels, config.repr_channels);
    let mut init = Initializer::new(seed);
    let mut p = ParamSet::new();
    init.conv(&mut p, "stem1", s, 3, 2, true);
    init.conv(&mut p, "stem2", c, s, 2, true);
    init.conv(&mut p, "res1a", c, c, 3, true);
    init.conv(&mut p, "res1b", c, c, 3, true);
    init.conv(&mut p, "pose", c, c + POSE_DIM, 3, true);
    init.conv(&mut p, "res2a", c, c, 3, true);
    init.conv(&mut p, "res2b", c, c, 3, true);
    init.conv(&mut p, "out", c, c, 1, true);
    EncoderParams { config, params: p }
}

fn residual<T: Scalar>(g: &mut Graph<T>, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let h = g.conv2d(x, p.var(&format!("{name}a.w")), Some(p.var(&format!("{name}a.b"))), 1, 1)?;
    let h = g.relu(h);
    let h = g.conv2d(h, p.var(&format!("{name}b.w")), Some(p.var(&format!("{name}b.b"))), 1, 1)?;
    let sum = g.add(x, h)?;
    Ok(g.relu(sum))
}

impl<T: Scalar> EncoderParams<T> {
    /// `frames: [V, 3, S, S]`, `poses: [V, 7]` → `[V, C_r, S/4, S/4]`.
    pub fn forward(&self, g: &mut Graph<T>, p: &Bound, frames: Var, poses: Var) -> Result<Var> {
        let cfg = self.config;
        let (v, c, h, w) = g.value(frames).dims4()?;
        if c != 3 || h != cfg.image_size || w != cfg.image_size || g.shape(poses) != [v, POSE_DIM] {
            return Err(Error::Shape(format!(
                "encoder expects [V,3,{0},{0}] frames and [V,7] poses, got {1:?} and {2:?}",
                cfg.image_size,
                g.shape(frames),
                g.shape(poses)
            )));
        }
        let x = g.conv2d(frames, p.var("stem1.w"), Some(p.var("stem1.b")), 2, 0)?;
        let x = g.relu(x);
        let x = g.conv2d(x, p.var("stem2.w"), Some(p.var("stem2.b")), 2, 0)?;
        let x = g.relu(x);
        let x = residual(g, p, "res1", x)?;
        let size = cfg.repr_size();
        let pose_map = g.broadcast_spatial(poses, size, size)?;
        let x = g.concat(&[x, pose_map])?;
        let x = g.conv2d(x, p.var("pose.w"), Some(p.var("pose.b")), 1, 1)?;
        let x = g.relu(x);
        let x = residual(g, p, "res2", x)?;
        Ok(g.conv2d(x, p.var("out.w"), Some(p.var("out.b")), 1, 0)?)
    }

    /// Encodes all context views and sums them per scene: `counts[b]`
    /// consecutive views belong to batch element `b`.
    pub fn represent(&self, g: &mut Graph<T>, p: &Bound, frames: Var, poses: Var, counts: &[usize]) -> Result<Var> {
        if g.value(frames).batch() == 0 {
            let [c, h, w] = self.config.repr_shape();
            return Ok(g.constant(Tensor::zeros(&[counts.len(), c, h, w])));
        }
        let maps = self.forward(g, p, frames, poses)?;
        Ok(g.segment_sum(maps, counts)?)
    }
}

/// Feature map `C_r × S/4 × S/4` describing a scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneRepresentation(pub Tensor<f32>);

impl SceneRepresentation {
    pub fn zeros(config: &EncoderConfig) -> Self {
        SceneRepresentation(Tensor::zeros(&config.repr_shape()))
    }
}

pub fn encode_view(params: &EncoderParams<f32>, frame: &Frame, pose: &PoseEncoded) -> Result<SceneRepresentation> {
    let mut g = Graph::new();
    let bound = params.params.bind(&mut g, false);
    let frames = g.constant(frames_tensor(&[frame])?);
    let poses = g.constant(poses_tensor(&[*pose]));
    let out = params.forward(&mut g, &bound, frames, poses)?;
    let t = g.value(out).clone();
    Ok(SceneRepresentation(t.reshape(&params.config.repr_shape())?))
}

/// Element-wise sum of per-view maps; an empty list gives the zero map.
///
/// Each element is summed in f64 over its values in sorted order, so the
/// result does not depend on the order of `maps`.
pub fn aggregate_context(maps: &[SceneRepresentation], config: &EncoderConfig) -> Result<SceneRepresentation> {
    let shape = config.repr_shape();
    if let Some(bad) = maps.iter().find(|m| m.0.shape() != shape) {
        return Err(Error::Shape(format!("representation {:?} does not match {shape:?}", bad.0.shape())));
    }
    let len: usize = shape.iter().product();
    let mut column = Vec::with_capacity(maps.len());
    let data = (0..len)
        .map(|i| {
            column.clear();
            column.extend(maps.iter().map(|m| m.0.data()[i]));
            column.sort_by(f32::total_cmp);
            column.iter().map(|&v| v as f64).sum::<f64>() as f32
        })
        .collect();
    Ok(SceneRepresentation(Tensor::from_vec(&shape, data)?))
}
