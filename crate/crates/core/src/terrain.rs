//! Planar terrain: a polyline in the x–z plane.
//!
//! Stairs are modelled with exact vertical risers. Height queries at a riser
//! resolve to the upper tread, so planning sees the riser edge as the
//! governing height.

use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::math::{self, vec2, Vec2};

const VERTEX_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Terrain {
    vertices: Vec<Vec2>,
}

/// Result of a wheel–terrain proximity query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactInfo {
    /// Closest terrain point to the wheel center.
    pub point: Vec2,
    /// Unit normal pointing from the terrain toward the wheel center.
    pub normal: Vec2,
    /// `R - distance`; positive when the rim overlaps the terrain.
    pub penetration: f64,
    /// Effective slope of the tangent line under the wheel, counter-clockwise
    /// positive (uphill in +x). Equals the normal angle minus π/2.
    pub slope_angle: f64,
    /// True when the closest point is a polyline vertex.
    pub corner: bool,
}

impl ContactInfo {
    /// Unit tangent, the normal rotated by -90° (points forward on flat ground).
    pub fn tangent(&self) -> Vec2 {
        vec2(self.normal.y, -self.normal.x)
    }
}

fn slope_of_normal(n: Vec2) -> f64 {
    math::atan2(-n.x, n.y)
}

impl Terrain {
    pub fn new(vertices: Vec<Vec2>) -> Result<Self> {
        if vertices.len() < 2 {
            return Err(invalid("terrain needs at least two vertices"));
        }
        for w in vertices.windows(2) {
            if !(w[0].x.is_finite() && w[0].y.is_finite() && w[1].x.is_finite() && w[1].y.is_finite()) {
                return Err(invalid("terrain vertices must be finite"));
            }
            if math::norm(w[1] - w[0]) <= VERTEX_EPS {
                return Err(invalid("consecutive terrain vertices must be distinct"));
            }
            if w[1].x < w[0].x {
                return Err(invalid("terrain x must be non-decreasing (no overhangs)"));
            }
        }
        if vertices[vertices.len() - 1].x <= vertices[0].x {
            return Err(invalid("terrain must span a positive x range"));
        }
        Ok(Self { vertices })
    }

    pub fn from_points(points: &[[f64; 2]]) -> Result<Self> {
        Self::new(points.iter().map(|p| vec2(p[0], p[1])).collect())
    }

    /// Flat ground from `x0` to `x1` at height `z`.
    pub fn flat(x0: f64, x1: f64, z: f64) -> Result<Self> {
        Self::new(alloc::vec![vec2(x0, z), vec2(x1, z)])
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn segments(&self) -> impl Iterator<Item = (Vec2, Vec2)> + '_ {
        self.vertices.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn x_range(&self) -> (f64, f64) {
        (self.vertices[0].x, self.vertices[self.vertices.len() - 1].x)
    }

    /// Returns the same terrain shifted by `(dx, dz)`.
    pub fn translated(&self, dx: f64, dz: f64) -> Self {
        Self { vertices: self.vertices.iter().map(|v| v + vec2(dx, dz)).collect() }
    }

    fn check_x(&self, x: f64) -> Result<()> {
        let (min, max) = self.x_range();
        if !(x >= min && x <= max) {
            return Err(Error::OutOfDomain { x, min, max });
        }
        Ok(())
    }

    /// Terrain height and slope angle at `x`.
    pub fn surface_query(&self, x: f64) -> Result<(f64, f64)> {
        self.check_x(x)?;
        Ok(self.surface_unchecked(x))
    }

    /// Height and slope at `x`, extending the end treads flat beyond the range.
    pub(crate) fn surface_unchecked(&self, x: f64) -> (f64, f64) {
        let (min, max) = self.x_range();
        if x <= min {
            return (self.vertices[0].y, 0.0);
        }
        if x >= max {
            return (self.vertices[self.vertices.len() - 1].y, 0.0);
        }
        let mut best: Option<(f64, f64, bool)> = None;
        for (a, b) in self.segments() {
            let dx = b.x - a.x;
            if dx <= 0.0 || x < a.x || x > b.x {
                continue;
            }
            let t = (x - a.x) / dx;
            let z = a.y + t * (b.y - a.y);
            let gamma = math::atan2(b.y - a.y, dx);
            // prefer the segment extending to the right of x on exact ties
            let ahead = x < b.x;
            best = match best {
                None => Some((z, gamma, ahead)),
                Some((bz, bg, bahead)) => {
                    if z > bz + 1e-12 || (math::abs(z - bz) <= 1e-12 && ahead && !bahead) {
                        Some((z, gamma, ahead))
                    } else {
                        Some((bz, bg, bahead))
                    }
                }
            };
        }
        // vertical risers: the upper tread already reports the top height
        best.map(|(z, g, _)| (z, g)).unwrap_or((self.vertices[0].y, 0.0))
    }

    /// Signed vertical distance of `p` above the surface.
    pub fn clearance(&self, p: Vec2) -> Result<f64> {
        self.check_x(p.x)?;
        Ok(p.y - self.surface_unchecked(p.x).0)
    }

    pub(crate) fn clearance_unchecked(&self, p: Vec2) -> f64 {
        p.y - self.surface_unchecked(p.x).0
    }

    /// Euclidean distance from `p` to the polyline with the closest point.
    pub fn closest_point(&self, p: Vec2) -> (f64, Vec2, bool, usize) {
        let mut best = (f64::INFINITY, self.vertices[0], true, 0);
        for (i, (a, b)) in self.segments().enumerate() {
            let (d, c, corner) = point_segment(p, a, b);
            if d < best.0 {
                best = (d, c, corner, i);
            }
        }
        best
    }

    /// Arc length along the polyline, from its first vertex, of the point closest to `p`.
    pub fn arc_length(&self, p: Vec2) -> f64 {
        let (_, c, _, seg) = self.closest_point(p);
        let before: f64 = self.segments().take(seg).map(|(a, b)| math::norm(b - a)).sum();
        before + math::norm(c - self.vertices[seg])
    }

    /// Distance from `p` to the polyline.
    pub fn distance(&self, p: Vec2) -> f64 {
        self.closest_point(p).0
    }

    /// Closest point to `p` on the load-bearing (non-vertical) segments.
    pub fn support_point(&self, p: Vec2) -> Vec2 {
        let mut best = (f64::INFINITY, self.vertices[0]);
        for (a, b) in self.segments() {
            if b.x - a.x <= 1e-12 {
                continue;
            }
            let (d, c, _) = point_segment(p, a, b);
            if d < best.0 {
                best = (d, c);
            }
        }
        best.1
    }

    /// Closest-point contact of a wheel of radius `radius` centered at `center`.
    pub fn wheel_contact(&self, center: Vec2, radius: f64) -> Option<ContactInfo> {
        let (dist, point, corner, seg) = self.closest_point(center);
        if dist > radius {
            return None;
        }
        Some(self.make_contact(center, radius, dist, point, corner, seg))
    }

    fn make_contact(&self, center: Vec2, radius: f64, dist: f64, point: Vec2, corner: bool, seg: usize) -> ContactInfo {
        let normal = if dist > 1e-12 {
            (center - point) / dist
        } else {
            let (a, b) = (self.vertices[seg], self.vertices[seg + 1]);
            let t = (b - a) / math::norm(b - a);
            vec2(-t.y, t.x)
        };
        ContactInfo { point, normal, penetration: radius - dist, slope_angle: slope_of_normal(normal), corner }
    }

    /// Every distinct contact of a wheel: one per touching segment, with
    /// contacts at a shared vertex merged. A wheel sitting in the inner corner
    /// at a riser base touches both the tread and the riser.
    pub fn wheel_contacts(&self, center: Vec2, radius: f64) -> Vec<ContactInfo> {
        let mut out: Vec<ContactInfo> = Vec::new();
        for (i, (a, b)) in self.segments().enumerate() {
            let (d, c, corner) = point_segment(center, a, b);
            if d > radius {
                continue;
            }
            if corner && out.iter().any(|o| math::norm(o.point - c) < 1e-12) {
                continue;
            }
            out.push(self.make_contact(center, radius, d, c, corner, i));
        }
        out
    }
}

/// Distance from `p` to segment `ab`, closest point and whether it is an endpoint.
fn point_segment(p: Vec2, a: Vec2, b: Vec2) -> (f64, Vec2, bool) {
    let ab = b - a;
    let len2 = ab.dot(&ab);
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    let c = a + ab * t;
    (math::norm(p - c), c, t <= 0.0 || t >= 1.0)
}

/// A staircase: `lead_in` of flat ground, then `count` risers of height `rise`
/// separated by treads of length `run`, ending in a `platform`-long flat beyond
/// the last tread.
pub fn make_stairs(rise: f64, run: f64, count: usize, lead_in: f64, platform: f64) -> Result<Terrain> {
    if !(rise > 0.0) || !(run > 0.0) || count == 0 {
        return Err(invalid("stairs need rise > 0, run > 0 and count >= 1"));
    }
    if !(lead_in >= 0.0) || !(platform >= 0.0) {
        return Err(invalid("stairs need lead_in >= 0 and platform >= 0"));
    }
    let mut v = alloc::vec![vec2(0.0, 0.0)];
    let mut x = lead_in;
    if lead_in > 0.0 {
        v.push(vec2(x, 0.0));
    }
    for k in 0..count {
        let top = (k + 1) as f64 * rise;
        v.push(vec2(x, top));
        x += if k + 1 == count { run + platform } else { run };
        v.push(vec2(x, top));
    }
    Terrain::new(v)
}

/// A ramp: flat `lead_in`, an incline at `slope` rising `height`, then a flat
/// `platform`.
pub fn make_ramp(height: f64, slope: f64, lead_in: f64, platform: f64) -> Result<Terrain> {
    if !(height > 0.0) {
        return Err(invalid("ramp height must be positive"));
    }
    if !(slope > 0.0 && slope < core::f64::consts::FRAC_PI_2) {
        return Err(invalid("ramp slope must lie in (0, pi/2); use stairs for vertical risers"));
    }
    if !(lead_in >= 0.0) || !(platform >= 0.0) {
        return Err(invalid("ramp needs lead_in >= 0 and platform >= 0"));
    }
    let extent = height / math::tan(slope);
    let mut v = alloc::vec![vec2(0.0, 0.0)];
    if lead_in > 0.0 {
        v.push(vec2(lead_in, 0.0));
    }
    v.push(vec2(lead_in + extent, height));
    if platform > 0.0 {
        v.push(vec2(lead_in + extent + platform, height));
    }
    Terrain::new(v)
}

/// Riser (or ramp) features in order of increasing x: the base x, the top x,
/// lower and upper heights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub base_x: f64,
    pub top_x: f64,
    pub lower_z: f64,
    pub upper_z: f64,
}

impl Step {
    pub fn rise(&self) -> f64 {
        self.upper_z - self.lower_z
    }

    /// Slope angle of the climbing face, π/2 for a vertical riser.
    pub fn slope(&self) -> f64 {
        math::atan2(self.rise(), self.top_x - self.base_x)
    }
}

impl Terrain {
    /// Upward features (risers and inclines), merging consecutive rising
    /// segments. Downward features are ignored.
    pub fn steps(&self) -> Vec<Step> {
        let mut out: Vec<Step> = Vec::new();
        let mut current: Option<Step> = None;
        for (a, b) in self.segments() {
            if b.y > a.y + 1e-12 {
                current = Some(match current {
                    Some(s) => Step { top_x: b.x, upper_z: b.y, ..s },
                    None => Step { base_x: a.x, top_x: b.x, lower_z: a.y, upper_z: b.y },
                });
            } else if let Some(s) = current.take() {
                out.push(s);
            }
        }
        if let Some(s) = current {
            out.push(s);
        }
        out
    }
}
