//! Posed views, the on-disk dataset format and training batch sampling.

mod batch;
mod format;

use std::f32::consts::PI;

pub use batch::{frames_tensor, poses_tensor, sample_batch, sample_batch_with, Batch, BatchItem, BatchTensors, ContextSize, DEFAULT_MAX_CONTEXT};
pub use format::{read_dataset, write_dataset, HEADER_BYTES, MAGIC, POSE_BYTES};

use crate::{Error, Result};

pub const IMAGE_SIZE: usize = 64;
pub const CHANNELS: usize = 3;
pub const POSE_DIM: usize = 7;

/// Camera pose before encoding: position in room units, yaw/pitch in radians.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PoseRaw {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub yaw: f32,
    pub pitch: f32,
}

impl PoseRaw {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.x, self.y, self.z, self.yaw, self.pitch].iter().all(|v| v.is_finite());
        if !finite || !(-PI..PI).contains(&self.yaw) || !(-PI / 2.0..=PI / 2.0).contains(&self.pitch) {
            return Err(Error::Invalid(format!("pose out of range: {self:?}")));
        }
        Ok(())
    }
}

/// `(x, y, z, sin yaw, cos yaw, sin pitch, cos pitch)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseEncoded(pub [f32; POSE_DIM]);

pub fn encode_pose(p: &PoseRaw) -> PoseEncoded {
    let (yaw, pitch) = (p.yaw as f64, p.pitch as f64);
    PoseEncoded([
        p.x,
        p.y,
        p.z,
        yaw.sin() as f32,
        yaw.cos() as f32,
        pitch.sin() as f32,
        pitch.cos() as f32,
    ])
}

/// An RGB image stored row-major as `height × width × 3` with values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Frame {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * CHANNELS {
            return Err(Error::Shape(format!(
                "frame {height}x{width}x{CHANNELS} needs {} values, got {}",
                height * width * CHANNELS,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Invalid(format!("pixel value {bad} outside [0,1]")));
        }
        Ok(Frame { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Frame { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let o = (y * self.width + x) * CHANNELS;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    /// Planar channel-major copy (`3 × H × W`), the network layout.
    pub fn to_chw(&self) -> Vec<f32> {
        let hw = self.height * self.width;
        let mut out = vec![0.0; hw * CHANNELS];
        for (p, px) in self.data.chunks_exact(CHANNELS).enumerate() {
            for c in 0..CHANNELS {
                out[c * hw + p] = px[c];
            }
        }
        out
    }

    /// Inverse of [`Frame::to_chw`]; values are clamped into [0, 1].
    pub fn from_chw(height: usize, width: usize, chw: &[f32]) -> Result<Self> {
        let hw = height * width;
        if chw.len() != hw * CHANNELS {
            return Err(Error::Shape(format!("planar frame needs {} values, got {}", hw * CHANNELS, chw.len())));
        }
        let mut data = vec![0.0; hw * CHANNELS];
        for p in 0..hw {
            for c in 0..CHANNELS {
                let v = chw[c * hw + p];
                data[p * CHANNELS + c] = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
            }
        }
        Ok(Frame { height, width, data })
    }

    /// 8-bit quantization: `round(255·v)`.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect()
    }

    pub fn from_bytes(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Frame::new(height, width, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }

    /// The frame as it reads back after an 8-bit store.
    pub fn quantized(&self) -> Frame {
        Frame::from_bytes(self.height, self.width, &self.to_bytes()).expect("quantized frame is valid")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub pose: PoseRaw,
    pub frame: Frame,
}

/// All posed views of one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneRecord {
    pub views: Vec<View>,
}

impl SceneRecord {
    pub fn new(views: Vec<View>) -> Result<Self> {
        if views.len() < 2 {
            return Err(Error::Invalid(format!("scene needs at least 2 views, got {}", views.len())));
        }
        let (h, w) = (views[0].frame.height(), views[0].frame.width());
        if views.iter().any(|v| v.frame.height() != h || v.frame.width() != w) {
            return Err(Error::Shape("views of one scene must share a frame size".into()));
        }
        Ok(SceneRecord { views })
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw(x: f32, y: f32, z: f32, yaw: f32, pitch: f32) -> PoseRaw {
        PoseRaw { x, y, z, yaw, pitch }
    }

    #[test]
    fn encode_pose_examples() {
        assert_eq!(encode_pose(&raw(1.0, 2.0, 3.0, 0.0, 0.0)).0, [1.0, 2.0, 3.0, 0.0, 1.0, 0.0, 1.0]);
        let e = encode_pose(&raw(0.0, 0.0, 0.0, std::f32::consts::FRAC_PI_2, 0.0)).0;
        assert_eq!(&e[..3], &[0.0, 0.0, 0.0]);
        assert!((e[3] - 1.0).abs() < 1e-7 && e[4].abs() < 1e-7 && e[5] == 0.0 && e[6] == 1.0);
        let e = encode_pose(&raw(0.0, 0.0, 0.0, (std::f64::consts::PI - 1e-9) as f32, -std::f32::consts::FRAC_PI_2)).0;
        assert!(e[3].abs() < 1e-6 && (e[4] + 1.0).abs() < 1e-6);
        assert!((e[5] + 1.0).abs() < 1e-7 && e[6].abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn encode_pose_keeps_translation_and_unit_circles(
            x in -4.0f32..4.0, y in 0.0f32..3.0, z in -4.0f32..4.0,
            yaw in -std::f32::consts::PI..std::f32::consts::PI,
            pitch in -std::f32::consts::FRAC_PI_2..=std::f32::consts::FRAC_PI_2,
        ) {
            let e = encode_pose(&raw(x, y, z, yaw, pitch)).0;
            prop_assert_eq!(&e[..3], &[x, y, z]);
            prop_assert!(((e[3] * e[3] + e[4] * e[4]) - 1.0).abs() <= 1e-6);
            prop_assert!(((e[5] * e[5] + e[6] * e[6]) - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn pose_validation_rejects_out_of_range_angles() {
        assert!(raw(0.0, 0.0, 0.0, std::f32::consts::PI, 0.0).validate().is_err());
        assert!(raw(0.0, 0.0, 0.0, 0.0, 2.0).validate().is_err());
        assert!(raw(0.0, 0.0, 0.0, -std::f32::consts::PI, 0.0).validate().is_ok());
    }

    #[test]
    fn frame_layout_conversions() {
        let f = Frame::new(1, 2, vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        assert_eq!(f.to_chw(), vec![0.0, 0.3, 0.1, 0.4, 0.2, 0.5]);
        assert_eq!(Frame::from_chw(1, 2, &f.to_chw()).unwrap(), f);
        assert!(Frame::new(1, 1, vec![0.0, 1.5, 0.0]).is_err());
        assert!(Frame::new(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn scene_record_needs_two_views() {
        let v = View { pose: raw(0.0, 1.0, 0.0, 0.0, 0.0), frame: Frame::filled(4, 4, [0.5; 3]) };
        assert!(SceneRecord::new(vec![v.clone()]).is_err());
        assert!(SceneRecord::new(vec![v.clone(), v]).is_ok());
    }
}
