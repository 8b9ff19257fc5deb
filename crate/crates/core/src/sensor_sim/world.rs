use crate::manifold::Vec3;
use serde::{Deserialize, Serialize};

use super::SimError;

/// A finite rectangle (or an infinite plane when an extent is infinite).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    /// Center of the rectangle.
    pub point: Vec3,
    pub normal: Vec3,
    /// First in-plane axis; the second is `normal x axis_u`.
    pub axis_u: Vec3,
    /// Full side lengths along `axis_u` and the second axis.
    pub extent: [f64; 2],
    pub reflectivity: u8,
}

impl Plane {
    /// Rectangle spanned by two orthogonal in-plane directions.
    pub fn rect(center: Vec3, u: Vec3, v: Vec3, width: f64, height: f64, reflectivity: u8) -> Self {
        let u = u.normalize();
        let normal = u.cross(&v).normalize();
        Plane { point: center, normal, axis_u: u, extent: [width, height], reflectivity }
    }

    pub fn axis_v(&self) -> Vec3 {
        self.normal.cross(&self.axis_u)
    }

    /// Radius of the bounding sphere around `point`.
    pub fn bounding_radius(&self) -> f64 {
        0.5 * (self.extent[0].powi(2) + self.extent[1].powi(2)).sqrt()
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        let d = p - self.point;
        d.dot(&self.axis_u).abs() <= 0.5 * self.extent[0] && d.dot(&self.axis_v()).abs() <= 0.5 * self.extent[1]
    }

    fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let denom = dir.dot(&self.normal);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = (self.point - origin).dot(&self.normal) / denom;
        if t <= 0.0 {
            return None;
        }
        let hit = origin + dir * t;
        self.contains(&hit).then_some(t)
    }
}

/// A static reflective object (pole, sign) that is not a teammate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: Vec3,
    pub radius: f64,
    pub reflectivity: u8,
}

/// Smallest positive ray parameter hitting the sphere.
pub fn ray_sphere(origin: &Vec3, dir: &Vec3, center: &Vec3, radius: f64) -> Option<f64> {
    let oc = origin - center;
    let b = oc.dot(dir);
    let c = oc.norm_squared() - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    let t0 = -b - s;
    if t0 > 0.0 {
        return Some(t0);
    }
    let t1 = -b + s;
    (t1 > 0.0).then_some(t1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub range: f64,
    pub reflectivity: u8,
    pub normal: Vec3,
    pub is_marker: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldModel {
    pub planes: Vec<Plane>,
    #[serde(default)]
    pub decoys: Vec<Sphere>,
    pub drone_marker_radius: f64,
    pub marker_reflectivity: u8,
    /// Fractional reflectivity loss at grazing incidence (0 disables).
    #[serde(default)]
    pub incidence_attenuation: f64,
}

impl WorldModel {
    pub fn new(planes: Vec<Plane>) -> Self {
        WorldModel {
            planes,
            decoys: Vec::new(),
            drone_marker_radius: 0.25,
            marker_reflectivity: 255,
            incidence_attenuation: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for (i, p) in self.planes.iter().enumerate() {
            if (p.normal.norm() - 1.0).abs() > 1e-9 || (p.axis_u.norm() - 1.0).abs() > 1e-9 {
                return Err(SimError::InvalidWorld(format!("plane {i} axes are not unit length")));
            }
            if p.normal.dot(&p.axis_u).abs() > 1e-9 {
                return Err(SimError::InvalidWorld(format!("plane {i} axis_u is not in-plane")));
            }
            if p.reflectivity >= self.marker_reflectivity {
                return Err(SimError::InvalidWorld(format!(
                    "plane {i} reflectivity {} is not below marker reflectivity {}",
                    p.reflectivity, self.marker_reflectivity
                )));
            }
        }
        if self.drone_marker_radius <= 0.0 {
            return Err(SimError::InvalidWorld("marker radius must be positive".into()));
        }
        Ok(())
    }

    /// Planes whose bounding sphere comes within `range` of `origin`.
    pub fn planes_near(&self, origin: &Vec3, range: f64) -> Vec<&Plane> {
        self.planes
            .iter()
            .filter(|p| {
                let r = p.bounding_radius();
                !r.is_finite() || (p.point - origin).norm() - r <= range
            })
            .collect()
    }

    fn attenuate(&self, base: u8, dir: &Vec3, normal: &Vec3) -> u8 {
        if self.incidence_attenuation <= 0.0 {
            return base;
        }
        let cos = dir.dot(normal).abs().clamp(0.0, 1.0);
        let frac = cos.acos() / std::f64::consts::FRAC_PI_2;
        (f64::from(base) * (1.0 - self.incidence_attenuation * frac)).round().clamp(0.0, 255.0) as u8
    }

    /// Nearest intersection of the ray with the given planes, the decoys and
    /// the marker spheres centered at `markers`.
    pub fn cast(&self, planes: &[&Plane], markers: &[Vec3], origin: &Vec3, dir: &Vec3, max_range: f64) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        let mut best_t = max_range;
        for p in planes {
            if let Some(t) = p.intersect(origin, dir) {
                if t < best_t {
                    best_t = t;
                    let refl = self.attenuate(p.reflectivity, dir, &p.normal);
                    best = Some(Hit { range: t, reflectivity: refl, normal: p.normal, is_marker: false });
                }
            }
        }
        let spheres = self
            .decoys
            .iter()
            .map(|s| (s.center, s.radius, s.reflectivity, false))
            .chain(markers.iter().map(|c| (*c, self.drone_marker_radius, self.marker_reflectivity, true)));
        for (center, radius, refl, is_marker) in spheres {
            if let Some(t) = ray_sphere(origin, dir, &center, radius) {
                if t < best_t {
                    best_t = t;
                    let normal = (origin + dir * t - center) / radius;
                    let refl = self.attenuate(refl, dir, &normal);
                    best = Some(Hit { range: t, reflectivity: refl, normal, is_marker });
                }
            }
        }
        best
    }

    /// Distance from `p` to the nearest surface (planes within extent, decoys).
    pub fn distance_to_surface(&self, p: &Vec3) -> f64 {
        let planes = self
            .planes
            .iter()
            .map(|pl| {
                // Distance to the closest point of the rectangle.
                let r = p - pl.point;
                let v = pl.axis_v();
                let u = r.dot(&pl.axis_u).clamp(-0.5 * pl.extent[0], 0.5 * pl.extent[0]);
                let w = r.dot(&v).clamp(-0.5 * pl.extent[1], 0.5 * pl.extent[1]);
                let u = if u.is_nan() { r.dot(&pl.axis_u) } else { u };
                let w = if w.is_nan() { r.dot(&v) } else { w };
                (r - pl.axis_u * u - v * w).norm()
            });
        let spheres = self.decoys.iter().map(|s| ((p - s.center).norm() - s.radius).abs());
        planes.chain(spheres).fold(f64::INFINITY, f64::min)
    }
}

/// Axis-aligned box made of its four vertical faces and (optionally) a roof.
pub fn box_planes(min: Vec3, max: Vec3, reflectivity: u8, roof: bool) -> Vec<Plane> {
    let c = (min + max) * 0.5;
    let s = max - min;
    let x = Vec3::x();
    let y = Vec3::y();
    let z = Vec3::z();
    let mut out = vec![
        Plane::rect(Vec3::new(max.x, c.y, c.z), y, z, s.y, s.z, reflectivity),
        Plane::rect(Vec3::new(min.x, c.y, c.z), -y, z, s.y, s.z, reflectivity),
        Plane::rect(Vec3::new(c.x, max.y, c.z), -x, z, s.x, s.z, reflectivity),
        Plane::rect(Vec3::new(c.x, min.y, c.z), x, z, s.x, s.z, reflectivity),
    ];
    if roof {
        out.push(Plane::rect(Vec3::new(c.x, c.y, max.z), x, y, s.x, s.y, reflectivity));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rect_normal_and_containment() {
        let p = Plane::rect(Vec3::zeros(), Vec3::x(), Vec3::y(), 2.0, 4.0, 50);
        assert_eq!(p.normal, Vec3::z());
        assert!(p.contains(&Vec3::new(0.9, 1.9, 0.0)));
        assert!(!p.contains(&Vec3::new(1.1, 0.0, 0.0)));
    }

    #[test]
    fn cast_picks_nearest_surface() {
        let mut w = WorldModel::new(vec![
            Plane::rect(Vec3::new(5.0, 0.0, 0.0), Vec3::y(), Vec3::z(), 10.0, 10.0, 40),
            Plane::rect(Vec3::new(3.0, 0.0, 0.0), Vec3::y(), Vec3::z(), 1.0, 1.0, 60),
        ]);
        w.decoys.push(Sphere { center: Vec3::new(2.0, 0.0, 0.0), radius: 0.1, reflectivity: 250 });
        let planes: Vec<&Plane> = w.planes.iter().collect();
        let h = w.cast(&planes, &[], &Vec3::zeros(), &Vec3::x(), 100.0).unwrap();
        assert!((h.range - 1.9).abs() < 1e-12);
        assert_eq!(h.reflectivity, 250);
        let h = w.cast(&planes, &[], &Vec3::new(0.0, 2.0, 0.0), &Vec3::x(), 100.0).unwrap();
        assert!((h.range - 5.0).abs() < 1e-12);
        assert!(w.cast(&planes, &[], &Vec3::zeros(), &-Vec3::x(), 100.0).is_none());
        let h = w.cast(&planes, &[Vec3::new(1.0, 0.0, 0.0)], &Vec3::zeros(), &Vec3::x(), 100.0).unwrap();
        assert!(h.is_marker && (h.range - 0.75).abs() < 1e-12);
    }

    #[test]
    fn validate_rejects_bright_planes() {
        let mut w = WorldModel::new(vec![Plane::rect(Vec3::zeros(), Vec3::x(), Vec3::y(), 1.0, 1.0, 255)]);
        assert!(w.validate().is_err());
        w.planes[0].reflectivity = 100;
        assert!(w.validate().is_ok());
    }

    #[test]
    fn grazing_incidence_attenuates() {
        let mut w = WorldModel::new(vec![]);
        w.incidence_attenuation = 0.5;
        let n = Vec3::z();
        assert_eq!(w.attenuate(200, &-Vec3::z(), &n), 200);
        let grazing = Vec3::new(1.0, 0.0, -1e-6).normalize();
        assert_eq!(w.attenuate(200, &grazing, &n), 100);
    }
}
