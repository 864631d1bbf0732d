use std::ops::{Add, Mul, Neg, Sub};

#[derive(Clone, Copy, Debug, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(self.y * o.z - self.z * o.y, self.z * o.x - self.x * o.z, self.x * o.y - self.y * o.x)
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        self * (1.0 / self.norm())
    }

    fn axis(self, i: usize) -> f64 {
        match i {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit length.
    pub dir: Vec3,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }
}

/// Nearest intersection in front of the ray origin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    /// Unit normal facing out of the surface.
    pub normal: Vec3,
}

pub const EPS: f64 = 1e-9;

pub fn intersect_sphere(ray: &Ray, center: Vec3, radius: f64) -> Option<Hit> {
    let oc = ray.origin - center;
    let b = oc.dot(ray.dir);
    let c = oc.dot(oc) - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t = [-b - sq, -b + sq].into_iter().find(|&t| t > EPS)?;
    Some(Hit { t, normal: (ray.at(t) - center) * (1.0 / radius) })
}

/// Axis-aligned box given by its center and half extent.
pub fn intersect_box(ray: &Ray, center: Vec3, half: f64) -> Option<Hit> {
    let (lo, hi) = (center - Vec3::new(half, half, half), center + Vec3::new(half, half, half));
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut near_axis = 0;
    let mut far_axis = 0;
    for axis in 0..3 {
        let (o, d) = (ray.origin.axis(axis), ray.dir.axis(axis));
        if d.abs() < 1e-15 {
            if o < lo.axis(axis) || o > hi.axis(axis) {
                return None;
            }
            continue;
        }
        let (mut t0, mut t1) = ((lo.axis(axis) - o) / d, (hi.axis(axis) - o) / d);
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        if t0 > t_near {
            t_near = t0;
            near_axis = axis;
        }
        if t1 < t_far {
            t_far = t1;
            far_axis = axis;
        }
    }
    if t_near > t_far {
        return None;
    }
    let (t, axis) = if t_near > EPS {
        (t_near, near_axis)
    } else if t_far > EPS {
        (t_far, far_axis)
    } else {
        return None;
    };
    let p = ray.at(t);
    let s = if p.axis(axis) > center.axis(axis) { 1.0 } else { -1.0 };
    let normal = match axis {
        0 => Vec3::new(s, 0.0, 0.0),
        1 => Vec3::new(0.0, s, 0.0),
        _ => Vec3::new(0.0, 0.0, s),
    };
    Some(Hit { t, normal })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Triangle {
    pub a: Vec3,
    pub b: Vec3,
    pub c: Vec3,
    pub normal: Vec3,
}

/// Möller–Trumbore, two-sided.
pub fn intersect_triangle(ray: &Ray, tri: &Triangle) -> Option<Hit> {
    let e1 = tri.b - tri.a;
    let e2 = tri.c - tri.a;
    let p = ray.dir.cross(e2);
    let det = e1.dot(p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = ray.origin - tri.a;
    let u = s.dot(p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(e1);
    let v = ray.dir.dot(q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(q) * inv;
    (t > EPS).then_some(Hit { t, normal: tri.normal })
}

/// Unit-circumradius icosahedron from the golden-ratio vertex set
/// `(0, ±1, ±φ)` and its cyclic permutations; faces are the 20 vertex
/// triples at mutual edge distance.
pub fn unit_icosahedron() -> Vec<Triangle> {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts = Vec::with_capacity(12);
    for s1 in [-1.0, 1.0] {
        for s2 in [-1.0, 1.0] {
            verts.push(Vec3::new(0.0, s1, s2 * phi));
            verts.push(Vec3::new(s1, s2 * phi, 0.0));
            verts.push(Vec3::new(s2 * phi, 0.0, s1));
        }
    }
    let scale = 1.0 / (1.0 + phi * phi).sqrt();
    let edge = |a: Vec3, b: Vec3| ((a - b).norm() - 2.0).abs() < 1e-9;
    let mut faces = Vec::with_capacity(20);
    for i in 0..12 {
        for j in i + 1..12 {
            for k in j + 1..12 {
                let (a, b, c) = (verts[i], verts[j], verts[k]);
                if edge(a, b) && edge(b, c) && edge(a, c) {
                    let (a, b, c) = (a * scale, b * scale, c * scale);
                    let mut n = (b - a).cross(c - a).normalized();
                    if n.dot(a + b + c) < 0.0 {
                        n = -n;
                    }
                    faces.push(Triangle { a, b, c, normal: n });
                }
            }
        }
    }
    faces
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosahedron_has_twenty_outward_faces() {
        let faces = unit_icosahedron();
        assert_eq!(faces.len(), 20);
        for f in &faces {
            for v in [f.a, f.b, f.c] {
                assert!((v.norm() - 1.0).abs() < 1e-12);
            }
            assert!(f.normal.dot(f.a) > 0.0);
        }
    }

    #[test]
    fn sphere_front_hit() {
        let ray = Ray { origin: Vec3::default(), dir: Vec3::new(1.0, 0.0, 0.0) };
        let hit = intersect_sphere(&ray, Vec3::new(3.0, 0.0, 0.0), 1.0).unwrap();
        assert!((hit.t - 2.0).abs() < 1e-12);
        assert_eq!(hit.normal, Vec3::new(-1.0, 0.0, 0.0));
        assert!(intersect_sphere(&ray, Vec3::new(-3.0, 0.0, 0.0), 1.0).is_none());
    }

    #[test]
    fn box_entry_face() {
        let ray = Ray { origin: Vec3::new(0.0, 0.2, 0.0), dir: Vec3::new(0.0, 0.0, -1.0) };
        let hit = intersect_box(&ray, Vec3::new(0.0, 0.0, -5.0), 1.0).unwrap();
        assert!((hit.t - 4.0).abs() < 1e-12);
        assert_eq!(hit.normal, Vec3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn icosahedron_hit_lies_between_in_and_circum_sphere() {
        let faces = unit_icosahedron();
        let ray = Ray { origin: Vec3::new(0.0, 0.0, -5.0), dir: Vec3::new(0.01, 0.02, 1.0).normalized() };
        let t = faces.iter().filter_map(|f| intersect_triangle(&ray, f)).map(|h| h.t).fold(f64::INFINITY, f64::min);
        let r = ray.at(t).norm();
        assert!(r <= 1.0 + 1e-9 && r >= 0.75, "{r}");
    }
}
