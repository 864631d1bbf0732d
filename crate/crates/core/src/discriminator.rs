//! Residual patch discriminator.
//!
//! For 64×64 inputs the activations are 32×32×32 (stem) → 16×16×64 →
//! 8×8×128 → 4×4×256 → 2×2×512 (residual down blocks) → 2×2×1024 (head),
//! followed by a 1×1 convolution to one logit per 2×2 patch.

use gaqn_autograd::{Graph, Scalar, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::dataset::{frames_tensor, Frame, CHANNELS};
use crate::params::{Bound, Initializer, ParamSet};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DiscConfig {
    pub image_size: usize,
    pub stem_channels: usize,
    pub block_channels: Vec<usize>,
    pub head_channels: usize,
    /// Residual block whose spatial mean is used for feature matching.
    pub feature_block: usize,
}

impl Default for DiscConfig {
    fn default() -> Self {
        DiscConfig { image_size: 64, stem_channels: 32, block_channels: vec![64, 128, 256, 512], head_channels: 1024, feature_block: 1 }
    }
}

impl DiscConfig {
    pub fn feature_dim(&self) -> usize {
        self.block_channels[self.feature_block]
    }

    /// `(channels, height, width)` after the stem, each block and the head.
    pub fn layer_shapes(&self) -> Vec<[usize; 3]> {
        let mut size = self.image_size / 2;
        let mut shapes = vec![[self.stem_channels, size, size]];
        for &c in &self.block_channels {
            size /= 2;
            shapes.push([c, size, size]);
        }
        shapes.push([self.head_channels, size, size]);
        shapes
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscParams<T = f32> {
    pub config: DiscConfig,
    pub params: ParamSet<T>,
}

pub fn init_discriminator<T: Scalar>(seed: u64, config: DiscConfig) -> DiscParams<T> {
    let mut init = Initializer::new(seed);
    let mut p = ParamSet::new();
    init.conv(&mut p, "stem", config.stem_channels, CHANNELS, 2, true);
    let mut inp = config.stem_channels;
    for (i, &c) in config.block_channels.iter().enumerate() {
        init.conv(&mut p, &format!("block{i}.conv1"), c, inp, 3, true);
        init.conv(&mut p, &format!("block{i}.conv2"), c, c, 3, true);
        init.conv(&mut p, &format!("block{i}.skip"), c, inp, 1, true);
        inp = c;
    }
    init.conv(&mut p, "head", config.head_channels, inp, 1, true);
    init.conv(&mut p, "score", 1, config.head_channels, 1, true);
    DiscParams { config, params: p }
}

/// Graph handles of one discriminator pass.
#[derive(Clone, Debug)]
pub struct DiscGraph {
    /// Raw patch logits `[N, 1, 2, 2]`.
    pub logits: Var,
    /// Spatial mean of the feature block, `[N, C_f]`.
    pub features: Var,
    /// Activations after the stem, every block and the head.
    pub layers: Vec<Var>,
}

/// conv3×3 → ReLU → avg-pool → conv3×3, plus avg-pool → 1×1 on the skip
/// path; ReLU after the sum.
fn res_down<T: Scalar>(g: &mut Graph<T>, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let h = g.conv2d(x, p.var(&format!("{name}.conv1.w")), Some(p.var(&format!("{name}.conv1.b"))), 1, 1)?;
    let h = g.relu(h);
    let h = g.avg_pool2(h)?;
    let h = g.conv2d(h, p.var(&format!("{name}.conv2.w")), Some(p.var(&format!("{name}.conv2.b"))), 1, 1)?;
    let s = g.avg_pool2(x)?;
    let s = g.conv2d(s, p.var(&format!("{name}.skip.w")), Some(p.var(&format!("{name}.skip.b"))), 1, 0)?;
    let sum = g.add(h, s)?;
    Ok(g.relu(sum))
}

impl<T: Scalar> DiscParams<T> {
    /// `x: [N, 3, S, S]`.
    pub fn forward(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<DiscGraph> {
        let size = self.config.image_size;
        if g.shape(x).len() != 4 || g.shape(x)[1..] != [CHANNELS, size, size] {
            return Err(Error::Shape(format!("discriminator expects [N,3,{size},{size}], got {:?}", g.shape(x))));
        }
        let h = g.conv2d(x, p.var("stem.w"), Some(p.var("stem.b")), 2, 0)?;
        let mut h = g.relu(h);
        let mut layers = vec![h];
        let mut features = None;
        for i in 0..self.config.block_channels.len() {
            h = res_down(g, p, &format!("block{i}"), h)?;
            layers.push(h);
            if i == self.config.feature_block {
                features = Some(g.mean_spatial(h)?);
            }
        }
        let head = g.conv2d(h, p.var("head.w"), Some(p.var("head.b")), 1, 0)?;
        let head = g.relu(head);
        layers.push(head);
        let logits = g.conv2d(head, p.var("score.w"), Some(p.var("score.b")), 1, 0)?;
        Ok(DiscGraph { logits, features: features.expect("feature block index within range"), layers })
    }
}

/// Patch logits for one frame, `[h, w]` of the final grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchLogits(pub Tensor<f32>);

/// Spatial mean of the feature block.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector(pub Vec<f32>);

fn run(params: &DiscParams<f32>, x: &Frame) -> Result<(Graph<f32>, DiscGraph)> {
    let mut g = Graph::new();
    let p = params.params.bind(&mut g, false);
    let size = params.config.image_size;
    if x.height() != size || x.width() != size {
        return Err(Error::Shape(format!("discriminator expects {size}x{size} frames, got {}x{}", x.height(), x.width())));
    }
    let xv = g.constant(frames_tensor(&[x])?);
    let out = params.forward(&mut g, &p, xv)?;
    Ok((g, out))
}

/// Patch logits together with the `(C, H, W)` shape of every layer.
pub fn discriminate(params: &DiscParams<f32>, x: &Frame) -> Result<(PatchLogits, Vec<[usize; 3]>)> {
    let (g, out) = run(params, x)?;
    let shapes = out.layers.iter().map(|&v| [g.shape(v)[1], g.shape(v)[2], g.shape(v)[3]]).collect();
    let l = g.value(out.logits);
    let (h, w) = (l.shape()[2], l.shape()[3]);
    Ok((PatchLogits(l.clone().reshape(&[h, w])?), shapes))
}

pub fn extract_feature_mean(params: &DiscParams<f32>, x: &Frame) -> Result<FeatureVector> {
    let (g, out) = run(params, x)?;
    Ok(FeatureVector(g.value(out.features).data().to_vec()))
}

/// Mean over the spatial grid of a `[C, H, W]` activation.
pub fn spatial_mean(activation: &Tensor<f32>) -> Result<FeatureVector> {
    let [c, h, w] = activation.shape() else {
        return Err(Error::Shape(format!("expected [C,H,W], got {:?}", activation.shape())));
    };
    let hw = h * w;
    Ok(FeatureVector((0..*c).map(|i| (activation.data()[i * hw..(i + 1) * hw].iter().map(|&v| v as f64).sum::<f64>() / hw as f64) as f32).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(seed: usize) -> Frame {
        let data = (0..64 * 64 * 3).map(|i| ((i * 13 + seed * 7) % 101) as f32 / 100.0).collect();
        Frame::new(64, 64, data).unwrap()
    }

    #[test]
    fn layer_shapes_follow_architecture_table() {
        let d = init_discriminator::<f32>(1, DiscConfig::default());
        assert_eq!(d, init_discriminator::<f32>(1, DiscConfig::default()));
        let (logits, shapes) = discriminate(&d, &frame(0)).unwrap();
        let expected = vec![[32, 32, 32], [64, 16, 16], [128, 8, 8], [256, 4, 4], [512, 2, 2], [1024, 2, 2]];
        assert_eq!(shapes, expected);
        assert_eq!(DiscConfig::default().layer_shapes(), expected);
        assert_eq!(logits.0.shape(), &[2, 2]);
        assert_eq!(logits, discriminate(&d, &frame(0)).unwrap().0);
    }

    #[test]
    fn feature_vector_is_block_mean() {
        let d = init_discriminator::<f32>(2, DiscConfig::default());
        let f = extract_feature_mean(&d, &frame(3)).unwrap();
        assert_eq!(f.0.len(), 128);
        assert_eq!(f, extract_feature_mean(&d, &frame(3)).unwrap());
        let (g, out) = run(&d, &frame(3)).unwrap();
        let block = g.value(out.layers[2]).clone().reshape(&[128, 8, 8]).unwrap();
        let direct = spatial_mean(&block).unwrap();
        for (a, b) in f.0.iter().zip(&direct.0) {
            assert!((a - b).abs() <= 1e-7 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn constant_activation_mean() {
        let t = Tensor::full(&[5, 8, 8], 0.37f32);
        assert_eq!(spatial_mean(&t).unwrap().0, vec![0.37; 5]);
    }

    #[test]
    fn wrong_input_size_is_rejected() {
        let d = init_discriminator::<f32>(1, DiscConfig::default());
        let small = Frame::filled(32, 32, [0.5; 3]);
        assert!(matches!(discriminate(&d, &small), Err(Error::Shape(_))));
        assert!(extract_feature_mean(&d, &small).is_err());
    }
}
