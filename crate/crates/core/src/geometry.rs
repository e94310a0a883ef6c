//! Vector math, rectangles, ray/rectangle intersection and the sampling of
//! reflection and emission directions.
//!
//! Internal units are metres for lengths and nanoseconds for time. The
//! vertical axis is `y`.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Speed of light in vacuum, metres per nanosecond.
pub const SPEED_OF_LIGHT_M_PER_NS: f64 = 0.299_792_458;

/// Smallest accepted forward distance along a ray, in metres.
pub const MIN_HIT_DISTANCE: f64 = 1e-12;

/// Offset applied along the surface normal when spawning rays from a
/// surface, in metres.
pub const SPAWN_OFFSET: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    #[inline]
    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// Unit vector in the same direction. Returns the zero vector unchanged.
    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        if n == 0.0 {
            self
        } else {
            self / n
        }
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    pub fn is_unit(self, tol: f64) -> bool {
        (self.norm() - 1.0).abs() <= tol
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    #[inline]
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    #[inline]
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    #[inline]
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    #[inline]
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    #[inline]
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum GeometryError {
    #[error("rectangle edges are not perpendicular (u·v = {0:e})")]
    NotPerpendicular(f64),
    #[error("rectangle has zero area")]
    ZeroArea,
}

/// A finite planar rectangle spanned by two perpendicular edges from a
/// corner. The normal is `edge_u × edge_v`, normalized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect3 {
    pub corner: Vec3,
    pub edge_u: Vec3,
    pub edge_v: Vec3,
    pub normal: Vec3,
    inv_u2: f64,
    inv_v2: f64,
}

impl Rect3 {
    pub fn new(corner: Vec3, edge_u: Vec3, edge_v: Vec3) -> Result<Self, GeometryError> {
        let lu = edge_u.norm();
        let lv = edge_v.norm();
        if lu == 0.0 || lv == 0.0 {
            return Err(GeometryError::ZeroArea);
        }
        let c = edge_u.dot(edge_v) / (lu * lv);
        if c.abs() > 1e-9 {
            return Err(GeometryError::NotPerpendicular(c));
        }
        Ok(Self {
            corner,
            edge_u,
            edge_v,
            normal: edge_u.cross(edge_v).normalized(),
            inv_u2: 1.0 / (lu * lu),
            inv_v2: 1.0 / (lv * lv),
        })
    }

    /// Rectangle of size `width × height` centred on `center` whose normal
    /// is `normal`. The in-plane axes are chosen deterministically from the
    /// normal; for axis-aligned normals they are world axes.
    pub fn centered(
        center: Vec3,
        normal: Vec3,
        width: f64,
        height: f64,
    ) -> Result<Self, GeometryError> {
        let n = normal.normalized();
        let (u, v) = in_plane_axes(n);
        let edge_u = u * width;
        let edge_v = v * height;
        let corner = center - edge_u * 0.5 - edge_v * 0.5;
        Rect3::new(corner, edge_u, edge_v)
    }

    pub fn area(&self) -> f64 {
        self.edge_u.norm() * self.edge_v.norm()
    }

    pub fn center(&self) -> Vec3 {
        self.corner + self.edge_u * 0.5 + self.edge_v * 0.5
    }

    pub fn corners(&self) -> [Vec3; 4] {
        [
            self.corner,
            self.corner + self.edge_u,
            self.corner + self.edge_u + self.edge_v,
            self.corner + self.edge_v,
        ]
    }

    /// Parametric coordinates `(a, b)` of the projection of `p` onto the
    /// rectangle plane; the point is inside when both lie in `[0, 1]`.
    #[inline]
    pub fn local_coords(&self, p: Vec3) -> (f64, f64) {
        let d = p - self.corner;
        (d.dot(self.edge_u) * self.inv_u2, d.dot(self.edge_v) * self.inv_v2)
    }

    /// Signed distance of `p` from the rectangle plane along its normal.
    pub fn plane_distance(&self, p: Vec3) -> f64 {
        (p - self.corner).dot(self.normal)
    }

    /// Whether `other` lies in the same plane and inside this rectangle.
    pub fn contains_rect(&self, other: &Rect3, tol: f64) -> bool {
        other.corners().iter().all(|&c| {
            let (a, b) = self.local_coords(c);
            self.plane_distance(c).abs() <= tol
                && a >= -tol
                && a <= 1.0 + tol
                && b >= -tol
                && b <= 1.0 + tol
        })
    }
}

fn in_plane_axes(n: Vec3) -> (Vec3, Vec3) {
    // u × v = n for the returned pair.
    let helper = if n.y.abs() > 0.9 { Vec3::Z } else { Vec3::Y };
    let u = if n.y.abs() > 0.9 {
        // normal ±y: u along z, v along ±x
        helper
    } else {
        helper.cross(n).normalized()
    };
    let v = n.cross(u).normalized();
    (u, v)
}

/// Orthonormal tangent pair `(t, b)` with `t × b = n` for a unit normal.
#[inline]
pub fn tangent_frame(n: Vec3) -> (Vec3, Vec3) {
    // Duff et al., "Building an Orthonormal Basis, Revisited".
    let sign = 1.0_f64.copysign(n.z);
    let a = -1.0 / (sign + n.z);
    let b = n.x * n.y * a;
    let t = Vec3::new(1.0 + sign * n.x * n.x * a, sign * b, -sign * n.x);
    let bt = Vec3::new(b, sign + n.y * n.y * a, -n.y);
    (t, bt)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
    /// Optical power carried by the ray, W.
    pub power: f64,
    /// Wavelength, µm.
    pub wavelength: f64,
    /// Accumulated optical path length from the emitter, m.
    pub path_len: f64,
    /// Number of surface interactions so far.
    pub kappa: u32,
    /// `power` relative to the power of the root ray this ray descends from.
    pub rel_intensity: f64,
    /// Random stream key; children derive their own keys from it.
    pub stream: u64,
}

impl Ray {
    #[inline]
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intersection {
    pub point: Vec3,
    /// Distance along the ray, m.
    pub distance: f64,
    /// `|dir · normal|`.
    pub cos_incidence: f64,
}

/// Nearest forward intersection of the ray with the finite rectangle.
#[inline]
pub fn intersect(ray: &Ray, rect: &Rect3) -> Option<Intersection> {
    intersect_before(ray, rect, f64::INFINITY)
}

/// [`intersect`] restricted to hits closer than `t_max`.
#[inline]
pub fn intersect_before(ray: &Ray, rect: &Rect3, t_max: f64) -> Option<Intersection> {
    let denom = ray.dir.dot(rect.normal);
    if denom.abs() < 1e-15 {
        return None;
    }
    let t = (rect.corner - ray.origin).dot(rect.normal) / denom;
    if !(t > MIN_HIT_DISTANCE && t < t_max) {
        return None;
    }
    let point = ray.at(t);
    let (a, b) = rect.local_coords(point);
    if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) {
        return None;
    }
    Some(Intersection {
        point,
        distance: t,
        cos_incidence: denom.abs(),
    })
}

/// Mirror direction `d − 2(d·n)n`.
#[inline]
pub fn reflect_specular(dir: Vec3, normal: Vec3) -> Vec3 {
    dir - normal * (2.0 * dir.dot(normal))
}

/// Random unit vector in the hemisphere around `normal` with density
/// `(m+1)/(2π) cosᵐθ` per steradian.
pub fn sample_lambertian_dir<R: Rng + ?Sized>(normal: Vec3, order_m: f64, rng: &mut R) -> Vec3 {
    // 1 - U lies in (0, 1], keeping cos θ strictly positive.
    let u: f64 = 1.0 - rng.random::<f64>();
    let phi = 2.0 * PI * rng.random::<f64>();
    let cos_t = if order_m == 1.0 { u.sqrt() } else { u.powf(1.0 / (order_m + 1.0)) };
    let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
    let (t, b) = tangent_frame(normal);
    (t * (sin_t * phi.cos()) + b * (sin_t * phi.sin()) + normal * cos_t).normalized()
}

/// Generalized Lambertian order for a half-power semi-angle in degrees:
/// `m = −ln 2 / ln cos Φ½`.
pub fn lambertian_order(semi_angle_deg: f64) -> f64 {
    -std::f64::consts::LN_2 / semi_angle_deg.to_radians().cos().ln()
}

/// Propagation time for a path length in metres, in nanoseconds.
#[inline]
pub fn time_of_flight(path_len: f64) -> f64 {
    path_len / SPEED_OF_LIGHT_M_PER_NS
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ray(origin: Vec3, dir: Vec3) -> Ray {
        Ray {
            origin,
            dir,
            power: 1.0,
            wavelength: 0.5,
            path_len: 0.0,
            kappa: 0,
            rel_intensity: 1.0,
            stream: 0,
        }
    }

    fn ceiling() -> Rect3 {
        // 5 m × 5 m at y = 3, normal −y
        Rect3::new(Vec3::new(0.0, 3.0, 0.0), Vec3::X * 5.0, Vec3::Z * 5.0).unwrap()
    }

    #[test]
    fn ceiling_hit_from_ue_height() {
        let r = ray(Vec3::new(2.5, 1.35, 2.5), Vec3::Y);
        let hit = intersect(&r, &ceiling()).unwrap();
        assert_relative_eq!(hit.distance, 1.65, epsilon = 1e-12);
        assert_relative_eq!(hit.cos_incidence, 1.0, epsilon = 1e-12);
        assert_relative_eq!(hit.point.y, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn parallel_ray_misses() {
        let r = ray(Vec3::new(2.5, 1.35, 2.5), Vec3::X);
        assert!(intersect(&r, &ceiling()).is_none());
    }

    #[test]
    fn ray_behind_misses() {
        let r = ray(Vec3::new(2.5, 1.35, 2.5), -Vec3::Y);
        assert!(intersect(&r, &ceiling()).is_none());
    }

    #[test]
    fn one_millimetre_outside_edge_misses() {
        // Aim at (5.001, 3, 2.5): 1 mm beyond the x = 5 edge.
        let origin = Vec3::new(2.5, 1.35, 2.5);
        let target = Vec3::new(5.001, 3.0, 2.5);
        let r = ray(origin, (target - origin).normalized());
        assert!(intersect(&r, &ceiling()).is_none());
        // and 1 mm inside hits
        let target = Vec3::new(4.999, 3.0, 2.5);
        let r = ray(origin, (target - origin).normalized());
        let hit = intersect(&r, &ceiling()).unwrap();
        assert_relative_eq!(hit.point.x, 4.999, epsilon = 1e-12);
    }

    #[test]
    fn rect_rejects_skewed_edges() {
        let e = Rect3::new(Vec3::ZERO, Vec3::X, Vec3::new(0.1, 1.0, 0.0));
        assert!(matches!(e, Err(GeometryError::NotPerpendicular(_))));
        assert_eq!(
            Rect3::new(Vec3::ZERO, Vec3::X, Vec3::ZERO),
            Err(GeometryError::ZeroArea)
        );
    }

    #[test]
    fn centered_rect_normal_and_area() {
        for n in [Vec3::X, -Vec3::X, Vec3::Y, -Vec3::Y, Vec3::Z, -Vec3::Z] {
            let r = Rect3::centered(Vec3::new(1.0, 2.0, 3.0), n, 0.5, 0.2).unwrap();
            assert_relative_eq!(r.normal.dot(n), 1.0, epsilon = 1e-12);
            assert_relative_eq!(r.area(), 0.1, epsilon = 1e-12);
            let c = r.center();
            assert_relative_eq!(c.distance(Vec3::new(1.0, 2.0, 3.0)), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn specular_examples() {
        let up = reflect_specular(-Vec3::Y, Vec3::Y);
        assert_relative_eq!(up.y, 1.0, epsilon = 1e-15);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let r = reflect_specular(Vec3::new(s, -s, 0.0), Vec3::Y);
        assert_relative_eq!(r.x, s, epsilon = 1e-15);
        assert_relative_eq!(r.y, s, epsilon = 1e-15);
    }

    #[test]
    fn specular_grazing_keeps_tangential_part() {
        let d = Vec3::new(1.0, -1e-6, 0.3).normalized();
        let r = reflect_specular(d, Vec3::Y);
        assert!(d.dot(Vec3::Y) < 0.0 && r.dot(Vec3::Y) > 0.0);
        assert_relative_eq!(r.dot(Vec3::Y), -d.dot(Vec3::Y), epsilon = 1e-12);
        assert_relative_eq!(r.x, d.x, epsilon = 1e-12);
        assert_relative_eq!(r.z, d.z, epsilon = 1e-12);
        assert!(r.is_unit(1e-12));
    }

    #[test]
    fn time_of_flight_examples() {
        assert_eq!(time_of_flight(0.0), 0.0);
        assert_relative_eq!(time_of_flight(0.299_792_458), 1.0, epsilon = 1e-15);
        assert_relative_eq!(time_of_flight(2.1), 7.0048, epsilon = 1e-4);
    }

    #[test]
    fn lambertian_order_of_sixty_degrees_is_one() {
        assert_relative_eq!(lambertian_order(60.0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn lambertian_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = Vec3::new(0.3, -0.8, 0.2).normalized();
        let count = 1_000_000;
        let mut sum_cos = 0.0;
        let mut within_60 = 0usize;
        for _ in 0..count {
            let d = sample_lambertian_dir(n, 1.0, &mut rng);
            let c = d.dot(n);
            assert!(c > 0.0);
            sum_cos += c;
            if c >= 0.5 {
                within_60 += 1;
            }
        }
        let mean = sum_cos / count as f64;
        assert!((mean / (2.0 / 3.0) - 1.0).abs() < 0.005, "mean cos {mean}");
        let frac = within_60 as f64 / count as f64;
        assert!((frac / 0.75 - 1.0).abs() < 0.005, "fraction {frac}");
    }

    #[test]
    fn lambertian_hemisphere_for_any_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for m in [0.0, 0.5, 1.0, 4.0, 30.0] {
            for _ in 0..10_000 {
                let d = sample_lambertian_dir(-Vec3::Y, m, &mut rng);
                assert!(d.dot(-Vec3::Y) > 0.0);
                assert!(d.is_unit(1e-9));
            }
        }
    }

    #[test]
    fn tangent_frame_is_orthonormal() {
        for n in [Vec3::Y, -Vec3::Y, Vec3::Z, -Vec3::Z, Vec3::new(1.0, 2.0, -3.0).normalized()] {
            let (t, b) = tangent_frame(n);
            assert_relative_eq!(t.dot(b), 0.0, epsilon = 1e-12);
            assert_relative_eq!(t.dot(n), 0.0, epsilon = 1e-12);
            assert!(t.is_unit(1e-12) && b.is_unit(1e-12));
            assert_relative_eq!(t.cross(b).dot(n), 1.0, epsilon = 1e-12);
        }
    }
}
