//! Procedural square rooms with a few objects, rendered by ray casting.
//!
//! Coordinates are y-up. The room spans `|x|, |z| ≤ room_half_extent` with the
//! floor at `y = 0` and the ceiling at [`CEILING_HEIGHT`]. Ring cameras look
//! at the floor center.

pub mod geometry;
mod render;

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use geometry::Vec3;
pub use render::{camera_ray, cast_ray, primitives, render_view, shading, write_ppm, Primitive, SceneHit, AMBIENT, DIFFUSE};

use crate::dataset::{write_dataset, PoseRaw, SceneRecord, View, HEADER_BYTES};
use crate::{Error, Result};

pub const ROOM_HALF_EXTENT: f64 = 4.0;
pub const CEILING_HEIGHT: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Shape {
    Sphere,
    Cube,
    Icosahedron,
}

/// `scale` is the circumradius of the shape.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ObjectSpec {
    pub shape: Shape,
    pub center: Vec3,
    pub scale: f64,
    pub albedo: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SceneSpec {
    pub room_half_extent: f64,
    pub wall_albedo: [f64; 3],
    pub floor_albedo: [f64; 3],
    pub objects: Vec<ObjectSpec>,
    /// Unit vector pointing towards the light.
    pub light_dir: Vec3,
    pub seed: u64,
}

impl SceneSpec {
    /// Checks the invariants every sampled scene satisfies.
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.objects.len()) {
            return Err(Error::Invalid(format!("{} objects, expected 1..=3", self.objects.len())));
        }
        let albedo_ok = |a: &[f64; 3]| a.iter().all(|v| (0.0..=1.0).contains(v));
        if !albedo_ok(&self.wall_albedo) || !albedo_ok(&self.floor_albedo) {
            return Err(Error::Invalid("room albedo outside [0,1]".into()));
        }
        if (self.light_dir.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::Invalid("light direction is not unit length".into()));
        }
        for o in &self.objects {
            if !(0.2..=1.0).contains(&o.scale) || !albedo_ok(&o.albedo) {
                return Err(Error::Invalid(format!("object out of range: {o:?}")));
            }
            let margin = self.room_half_extent - o.scale;
            if o.center.x.abs() > margin || o.center.z.abs() > margin || o.center.y < 0.0 || o.center.y > CEILING_HEIGHT - o.scale {
                return Err(Error::Invalid(format!("object center outside room: {o:?}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CameraRingConfig {
    pub radius: f64,
    pub height: f64,
    pub look_at: Vec3,
    pub fov_deg: f64,
}

impl Default for CameraRingConfig {
    fn default() -> Self {
        CameraRingConfig { radius: 3.0, height: 1.0, look_at: Vec3::new(0.0, 0.0, 0.0), fov_deg: 60.0 }
    }
}

impl CameraRingConfig {
    pub fn validate(&self, room_half_extent: f64) -> Result<()> {
        if !(self.radius > 0.0 && self.radius < room_half_extent) {
            return Err(Error::Invalid(format!("ring radius {} must lie in (0, {room_half_extent})", self.radius)));
        }
        if !(self.fov_deg > 10.0 && self.fov_deg < 120.0) {
            return Err(Error::Invalid(format!("fov {} outside (10, 120)", self.fov_deg)));
        }
        if !(self.height > 0.0 && self.height < CEILING_HEIGHT) {
            return Err(Error::Invalid(format!("camera height {} outside the room", self.height)));
        }
        Ok(())
    }

    /// `k` of `views` poses evenly spaced on the ring, each aimed at `look_at`.
    pub fn pose(&self, k: usize, views: usize) -> PoseRaw {
        let angle = 2.0 * PI * k as f64 / views as f64;
        let eye = Vec3::new(self.radius * angle.cos(), self.height, self.radius * angle.sin());
        let d = self.look_at - eye;
        let mut yaw = d.z.atan2(d.x);
        if yaw >= PI {
            yaw -= 2.0 * PI;
        }
        let pitch = d.y.atan2((d.x * d.x + d.z * d.z).sqrt());
        let yaw = yaw as f32;
        // f32 rounding can land exactly on +π.
        let yaw = if yaw >= std::f32::consts::PI { -std::f32::consts::PI } else { yaw };
        PoseRaw { x: eye.x as f32, y: eye.y as f32, z: eye.z as f32, yaw, pitch: pitch as f32 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GeneratorConfig {
    pub room_half_extent: f64,
    pub ring: CameraRingConfig,
    pub min_scale: f64,
    pub max_scale: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig { room_half_extent: ROOM_HALF_EXTENT, ring: CameraRingConfig::default(), min_scale: 0.4, max_scale: 1.0 }
    }
}

fn random_rgb(rng: &mut impl Rng, lo: f64, hi: f64) -> [f64; 3] {
    [rng.gen_range(lo..=hi), rng.gen_range(lo..=hi), rng.gen_range(lo..=hi)]
}

/// Deterministic in `(seed, config)`.
pub fn sample_scene_spec(seed: u64, config: &GeneratorConfig) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_objects = rng.gen_range(1..=3);
    let objects = (0..n_objects)
        .map(|_| {
            let shape = match rng.gen_range(0..3) {
                0 => Shape::Sphere,
                1 => Shape::Cube,
                _ => Shape::Icosahedron,
            };
            let scale = rng.gen_range(config.min_scale..=config.max_scale);
            // Keep every object clear of the camera ring.
            let reach = (config.ring.radius - scale - 0.3).max(0.0).min(config.room_half_extent - scale);
            let r = reach * rng.gen::<f64>().sqrt();
            let theta = rng.gen_range(0.0..2.0 * PI);
            let rest = match shape {
                Shape::Sphere => scale,
                Shape::Cube => scale / 3f64.sqrt(),
                Shape::Icosahedron => scale * icosahedron_rest_height(),
            };
            ObjectSpec { shape, center: Vec3::new(r * theta.cos(), rest, r * theta.sin()), scale, albedo: random_rgb(&mut rng, 0.05, 1.0) }
        })
        .collect();
    let azimuth = rng.gen_range(0.0..2.0 * PI);
    let elevation = rng.gen_range(25f64.to_radians()..70f64.to_radians());
    let light_dir = Vec3::new(elevation.cos() * azimuth.cos(), elevation.sin(), elevation.cos() * azimuth.sin());
    SceneSpec {
        room_half_extent: config.room_half_extent,
        wall_albedo: random_rgb(&mut rng, 0.3, 0.9),
        floor_albedo: random_rgb(&mut rng, 0.2, 0.8),
        objects,
        light_dir,
        seed,
    }
}

/// Height of the lowest vertex below the center of a unit icosahedron.
fn icosahedron_rest_height() -> f64 {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    phi / (1.0 + phi * phi).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub struct DatasetSummary {
    pub scenes: usize,
    pub views_per_scene: usize,
    pub bytes: u64,
    pub checksum: u32,
}

/// Renders all views of one scene on the camera ring.
pub fn render_scene(spec: &SceneSpec, ring: &CameraRingConfig, views: usize) -> Result<SceneRecord> {
    let views = (0..views)
        .map(|k| {
            let pose = ring.pose(k, views);
            Ok(View { frame: render_view(spec, &pose, ring.fov_deg)?, pose })
        })
        .collect::<Result<Vec<_>>>()?;
    SceneRecord::new(views)
}

/// Per-scene seeds drawn from one master stream, so scene `i` is the same
/// regardless of how many scenes follow it.
pub fn scene_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.next_u64()).collect()
}

pub fn synthesize(n_scenes: usize, views: usize, seed: u64, config: &GeneratorConfig) -> Result<Vec<SceneRecord>> {
    if n_scenes < 1 {
        return Err(Error::Invalid("need at least one scene".into()));
    }
    if views < 2 {
        return Err(Error::Invalid("need at least two views per scene".into()));
    }
    config.ring.validate(config.room_half_extent)?;
    scene_seeds(seed, n_scenes)
        .into_iter()
        .map(|s| render_scene(&sample_scene_spec(s, config), &config.ring, views))
        .collect()
}

pub fn generate_dataset(n_scenes: usize, views: usize, seed: u64, out: &Path, config: &GeneratorConfig) -> Result<DatasetSummary> {
    let records = synthesize(n_scenes, views, seed, config)?;
    let checksum = write_dataset(&records, out)?;
    let bytes = std::fs::metadata(out).map_err(Error::io(out))?.len();
    debug_assert_eq!(bytes as usize, HEADER_BYTES + n_scenes * views * (20 + 64 * 64 * 3));
    Ok(DatasetSummary { scenes: n_scenes, views_per_scene: views, bytes, checksum })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_is_deterministic_and_valid() {
        let cfg = GeneratorConfig::default();
        for seed in 0..200 {
            let a = sample_scene_spec(seed, &cfg);
            assert_eq!(a, sample_scene_spec(seed, &cfg));
            a.validate().unwrap();
            assert!((1..=3).contains(&a.objects.len()));
            for o in &a.objects {
                assert!(o.center.x.abs() <= a.room_half_extent - o.scale);
                assert!(o.center.z.abs() <= a.room_half_extent - o.scale);
                let horizontal = (o.center.x.powi(2) + o.center.z.powi(2)).sqrt();
                assert!(horizontal + o.scale < cfg.ring.radius, "object reaches the camera ring");
            }
        }
    }

    #[test]
    fn ring_poses_look_at_center() {
        let ring = CameraRingConfig::default();
        let k = 5;
        let yaws: Vec<f64> = (0..k).map(|i| ring.pose(i, k).yaw as f64).collect();
        for i in 0..k {
            let p = ring.pose(i, k);
            p.validate().unwrap();
            let (dx, dz) = (ring.look_at.x - p.x as f64, ring.look_at.z - p.z as f64);
            let expected = dz.atan2(dx);
            let diff = (p.yaw as f64 - expected).rem_euclid(2.0 * PI);
            assert!(diff < 1e-6 || 2.0 * PI - diff < 1e-6, "yaw {} vs {expected}", p.yaw);
            let step = (yaws[(i + 1) % k] - yaws[i]).rem_euclid(2.0 * PI);
            assert!((step - 2.0 * PI / k as f64).abs() < 1e-6);
            let dy = ring.look_at.y - p.y as f64;
            assert!((p.pitch as f64 - dy.atan2((dx * dx + dz * dz).sqrt())).abs() < 1e-6);
        }
    }

    #[test]
    fn invalid_ring_rejected() {
        let ring = CameraRingConfig { radius: 5.0, ..Default::default() };
        assert!(ring.validate(4.0).is_err());
        let ring = CameraRingConfig { fov_deg: 130.0, ..Default::default() };
        assert!(ring.validate(4.0).is_err());
    }
}
