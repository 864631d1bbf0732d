use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::OnceLock;

use super::geometry::{intersect_box, intersect_sphere, intersect_triangle, unit_icosahedron, Hit, Ray, Triangle, Vec3};
use super::{SceneSpec, Shape, CEILING_HEIGHT};
use crate::dataset::{Frame, PoseRaw, IMAGE_SIZE};
use crate::{Error, Result};

pub const AMBIENT: f64 = 0.3;
pub const DIFFUSE: f64 = 0.7;

/// A single intersectable surface of a scene.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    /// Points `p` with `normal·p = offset`; `normal` faces into the room.
    Plane { normal: Vec3, offset: f64, albedo: [f64; 3] },
    Sphere { center: Vec3, radius: f64, albedo: [f64; 3] },
    Cube { center: Vec3, half: f64, albedo: [f64; 3] },
    /// A whole triangle mesh with a bounding sphere.
    Mesh { center: Vec3, radius: f64, faces: Vec<Triangle>, albedo: [f64; 3] },
}

impl Primitive {
    pub fn albedo(&self) -> [f64; 3] {
        match self {
            Primitive::Plane { albedo, .. }
            | Primitive::Sphere { albedo, .. }
            | Primitive::Cube { albedo, .. }
            | Primitive::Mesh { albedo, .. } => *albedo,
        }
    }

    /// Nearest hit against this primitive alone, without culling.
    pub fn intersect(&self, ray: &Ray) -> Option<Hit> {
        match self {
            Primitive::Plane { normal, offset, .. } => {
                let denom = normal.dot(ray.dir);
                if denom.abs() < 1e-15 {
                    return None;
                }
                let t = (offset - normal.dot(ray.origin)) / denom;
                (t > super::geometry::EPS).then_some(Hit { t, normal: *normal })
            }
            Primitive::Sphere { center, radius, .. } => intersect_sphere(ray, *center, *radius),
            Primitive::Cube { center, half, .. } => intersect_box(ray, *center, *half),
            Primitive::Mesh { faces, .. } => faces
                .iter()
                .filter_map(|f| intersect_triangle(ray, f))
                .min_by(|a, b| a.t.total_cmp(&b.t)),
        }
    }

    /// Lower bound on the hit distance, used to skip primitives that cannot
    /// beat the current nearest hit.
    fn lower_bound(&self, ray: &Ray) -> Option<f64> {
        match self {
            Primitive::Mesh { center, radius, .. } | Primitive::Cube { center, half: radius, .. } => {
                let r = if matches!(self, Primitive::Cube { .. }) { radius * 3f64.sqrt() } else { *radius };
                let oc = *center - ray.origin;
                let along = oc.dot(ray.dir);
                let perp2 = oc.dot(oc) - along * along;
                if perp2 > r * r {
                    return None;
                }
                Some((along - r).max(0.0))
            }
            _ => Some(0.0),
        }
    }
}

fn icosahedron_faces() -> &'static [Triangle] {
    static FACES: OnceLock<Vec<Triangle>> = OnceLock::new();
    FACES.get_or_init(unit_icosahedron)
}

/// Room surfaces followed by the objects.
pub fn primitives(spec: &SceneSpec) -> Vec<Primitive> {
    let l = spec.room_half_extent;
    let mut prims = vec![
        Primitive::Plane { normal: Vec3::new(0.0, 1.0, 0.0), offset: 0.0, albedo: spec.floor_albedo },
        Primitive::Plane { normal: Vec3::new(0.0, -1.0, 0.0), offset: -CEILING_HEIGHT, albedo: spec.wall_albedo },
        Primitive::Plane { normal: Vec3::new(-1.0, 0.0, 0.0), offset: -l, albedo: spec.wall_albedo },
        Primitive::Plane { normal: Vec3::new(1.0, 0.0, 0.0), offset: -l, albedo: spec.wall_albedo },
        Primitive::Plane { normal: Vec3::new(0.0, 0.0, -1.0), offset: -l, albedo: spec.wall_albedo },
        Primitive::Plane { normal: Vec3::new(0.0, 0.0, 1.0), offset: -l, albedo: spec.wall_albedo },
    ];
    for o in &spec.objects {
        prims.push(match o.shape {
            Shape::Sphere => Primitive::Sphere { center: o.center, radius: o.scale, albedo: o.albedo },
            Shape::Cube => Primitive::Cube { center: o.center, half: o.scale / 3f64.sqrt(), albedo: o.albedo },
            Shape::Icosahedron => Primitive::Mesh {
                center: o.center,
                radius: o.scale,
                faces: icosahedron_faces()
                    .iter()
                    .map(|f| Triangle { a: o.center + f.a * o.scale, b: o.center + f.b * o.scale, c: o.center + f.c * o.scale, normal: f.normal })
                    .collect(),
                albedo: o.albedo,
            },
        });
    }
    prims
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneHit {
    pub hit: Hit,
    pub primitive: usize,
}

/// Nearest hit over all primitives.
pub fn cast_ray(prims: &[Primitive], ray: &Ray) -> Option<SceneHit> {
    let mut best: Option<SceneHit> = None;
    for (i, p) in prims.iter().enumerate() {
        match p.lower_bound(ray) {
            None => continue,
            Some(lb) if best.is_some_and(|b| lb >= b.hit.t) => continue,
            _ => {}
        }
        if let Some(hit) = p.intersect(ray) {
            if best.map_or(true, |b| hit.t < b.hit.t) {
                best = Some(SceneHit { hit, primitive: i });
            }
        }
    }
    best
}

/// Ray through the center of pixel `(row, col)` of a `size×size` image.
pub fn camera_ray(pose: &PoseRaw, fov_deg: f64, size: usize, row: usize, col: usize) -> Ray {
    let (yaw, pitch) = (pose.yaw as f64, pose.pitch as f64);
    let forward = Vec3::new(pitch.cos() * yaw.cos(), pitch.sin(), pitch.cos() * yaw.sin());
    let right = Vec3::new(-forward.z, 0.0, forward.x).normalized();
    let up = right.cross(forward);
    let half = (fov_deg.to_radians() / 2.0).tan();
    let u = (2.0 * (col as f64 + 0.5) / size as f64 - 1.0) * half;
    let v = (1.0 - 2.0 * (row as f64 + 0.5) / size as f64) * half;
    Ray { origin: Vec3::new(pose.x as f64, pose.y as f64, pose.z as f64), dir: (forward + right * u + up * v).normalized() }
}

/// Lambertian shading factor for a surface normal.
pub fn shading(normal: Vec3, light_dir: Vec3) -> f64 {
    AMBIENT + DIFFUSE * normal.dot(light_dir).max(0.0)
}

pub fn render_view(spec: &SceneSpec, pose: &PoseRaw, fov_deg: f64) -> Result<Frame> {
    let l = spec.room_half_extent as f32;
    let inside = pose.x.abs() < l && pose.z.abs() < l && pose.y > 0.0 && (pose.y as f64) < CEILING_HEIGHT;
    if !inside || !pose.yaw.is_finite() || !pose.pitch.is_finite() {
        return Err(Error::CameraOutsideRoom);
    }
    let prims = primitives(spec);
    let mut data = Vec::with_capacity(IMAGE_SIZE * IMAGE_SIZE * 3);
    for row in 0..IMAGE_SIZE {
        for col in 0..IMAGE_SIZE {
            let ray = camera_ray(pose, fov_deg, IMAGE_SIZE, row, col);
            let rgb = match cast_ray(&prims, &ray) {
                Some(h) => {
                    let s = shading(h.hit.normal, spec.light_dir);
                    prims[h.primitive].albedo().map(|a| (a * s).clamp(0.0, 1.0) as f32)
                }
                None => [0.0; 3],
            };
            data.extend_from_slice(&rgb);
        }
    }
    Frame::new(IMAGE_SIZE, IMAGE_SIZE, data)
}

/// Binary PPM (P6, maxval 255).
pub fn write_ppm(frame: &Frame, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(Error::io(path))?;
    let mut out = BufWriter::new(file);
    write!(out, "P6\n{} {}\n255\n", frame.width(), frame.height()).map_err(Error::io(path))?;
    out.write_all(&frame.to_bytes()).map_err(Error::io(path))?;
    out.flush().map_err(Error::io(path))
}

#[cfg(test)]
mod tests {
    use super::super::{sample_scene_spec, GeneratorConfig, ObjectSpec};
    use super::*;
    use rand::{Rng, SeedableRng};

    fn empty_room(wall: [f64; 3], light: Vec3) -> SceneSpec {
        SceneSpec { room_half_extent: 4.0, wall_albedo: wall, floor_albedo: [0.5; 3], objects: vec![], light_dir: light, seed: 0 }
    }

    fn center_pose(yaw: f32) -> PoseRaw {
        PoseRaw { x: 0.0, y: 1.0, z: 0.0, yaw, pitch: 0.0 }
    }

    #[test]
    fn wall_pixel_matches_plane_oracle() {
        let light = Vec3::new(-0.6, 0.8, 0.0);
        let spec = empty_room([0.8, 0.2, 0.2], light);
        let pose = center_pose(0.0);
        let frame = render_view(&spec, &pose, 60.0).unwrap();
        // Closed form: the center ray is ~(1,0,0); of the six room planes the
        // +x wall at distance 4 is the nearest, normal (-1,0,0).
        let ray = camera_ray(&pose, 60.0, 64, 32, 32);
        let planes = [(Vec3::new(1.0, 0.0, 0.0), 4.0), (Vec3::new(-1.0, 0.0, 0.0), 4.0), (Vec3::new(0.0, 1.0, 0.0), 2.0), (Vec3::new(0.0, -1.0, 0.0), 1.0), (Vec3::new(0.0, 0.0, 1.0), 4.0), (Vec3::new(0.0, 0.0, -1.0), 4.0)];
        let nearest = planes
            .iter()
            .filter_map(|(axis, dist)| {
                let d = axis.dot(ray.dir);
                (d > 0.0).then(|| (dist / d, *axis))
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .unwrap();
        assert_eq!(nearest.1, Vec3::new(1.0, 0.0, 0.0));
        let factor = AMBIENT + DIFFUSE * (-nearest.1).dot(light).max(0.0);
        let px = frame.pixel(32, 32);
        for (c, a) in [0.8, 0.2, 0.2].iter().enumerate() {
            assert!((px[c] as f64 - a * factor).abs() < 1e-6, "{px:?} vs {}", a * factor);
        }
    }

    #[test]
    fn sphere_pixel_matches_analytic_front_hit() {
        let light = Vec3::new(-1.0, 1.0, 0.5).normalized();
        let mut spec = empty_room([0.5; 3], light);
        spec.objects.push(ObjectSpec { shape: Shape::Sphere, center: Vec3::new(2.0, 1.0, 0.0), scale: 1.0, albedo: [0.1, 0.9, 0.3] });
        let pose = center_pose(0.0);
        let frame = render_view(&spec, &pose, 60.0).unwrap();
        let ray = camera_ray(&pose, 60.0, 64, 32, 32);
        // |o + t d - c|² = 1 solved directly.
        let oc = ray.origin - Vec3::new(2.0, 1.0, 0.0);
        let b = oc.dot(ray.dir);
        let t = -b - (b * b - (oc.dot(oc) - 1.0)).sqrt();
        let n = ray.at(t) - Vec3::new(2.0, 1.0, 0.0);
        assert!(n.dot(ray.dir) < -0.999, "front normal is antiparallel to the view ray");
        let factor = AMBIENT + DIFFUSE * n.dot(light).max(0.0);
        let px = frame.pixel(32, 32);
        for (c, a) in [0.1, 0.9, 0.3].iter().enumerate() {
            assert!((px[c] as f64 - a * factor).abs() < 1e-6);
        }
        // The on-axis approximation n = -d agrees to within the pixel offset.
        let approx = AMBIENT + DIFFUSE * Vec3::new(-1.0, 0.0, 0.0).dot(light).max(0.0);
        assert!((factor - approx).abs() < 0.02);
    }

    #[test]
    fn rendering_is_pure_and_in_range() {
        let spec = sample_scene_spec(42, &GeneratorConfig::default());
        let pose = GeneratorConfig::default().ring.pose(1, 5);
        let a = render_view(&spec, &pose, 60.0).unwrap();
        let b = render_view(&spec, &pose, 60.0).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn camera_outside_room_is_rejected() {
        let spec = sample_scene_spec(1, &GeneratorConfig::default());
        let pose = PoseRaw { x: 5.0, y: 1.0, z: 0.0, yaw: 0.0, pitch: 0.0 };
        let err = render_view(&spec, &pose, 60.0).unwrap_err();
        assert_eq!(err.to_string(), "camera outside room");
    }

    #[test]
    fn nearest_hit_beats_every_primitive() {
        // Exhaustive per-primitive oracle on 100 random rays per scene.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for seed in 0..5 {
            let spec = sample_scene_spec(seed, &GeneratorConfig::default());
            let prims = primitives(&spec);
            for _ in 0..100 {
                let origin = Vec3::new(rng.gen_range(-3.5..3.5), rng.gen_range(0.1..2.9), rng.gen_range(-3.5..3.5));
                let dir = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).normalized();
                let ray = Ray { origin, dir };
                let Some(best) = cast_ray(&prims, &ray) else { continue };
                for p in &prims {
                    if let Some(h) = p.intersect(&ray) {
                        assert!(best.hit.t <= h.t + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn ppm_header_and_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.ppm");
        write_ppm(&Frame::filled(64, 64, [1.0, 0.0, 0.5]), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P6\n64 64\n255\n"));
        assert_eq!(bytes.len(), 13 + 64 * 64 * 3);
        assert_eq!(&bytes[13..16], &[255, 0, 128]);
    }
}
