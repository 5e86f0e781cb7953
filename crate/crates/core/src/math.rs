//! Scalar math through `libm` and a few planar vector helpers.

use nalgebra::{Matrix2, Vector2};

pub type Vec2 = Vector2<f64>;

#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn tan(x: f64) -> f64 {
    libm::tan(x)
}

#[inline]
pub fn atan(x: f64) -> f64 {
    libm::atan(x)
}

#[inline]
pub fn atan2(y: f64, x: f64) -> f64 {
    libm::atan2(y, x)
}

#[inline]
pub fn acos(x: f64) -> f64 {
    libm::acos(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn hypot(x: f64, y: f64) -> f64 {
    libm::hypot(x, y)
}

#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

#[inline]
pub fn vec2(x: f64, z: f64) -> Vec2 {
    Vec2::new(x, z)
}

/// Counter-clockwise rotation in the x–z plane (x right, z up).
#[inline]
pub fn rot(angle: f64) -> Matrix2<f64> {
    let (s, c) = (sin(angle), cos(angle));
    Matrix2::new(c, -s, s, c)
}

/// `v` rotated by +90°.
#[inline]
pub fn perp(v: Vec2) -> Vec2 {
    vec2(-v.y, v.x)
}

/// Scalar planar cross product, positive for counter-clockwise moments.
#[inline]
pub fn cross(a: Vec2, b: Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

#[inline]
pub fn norm(v: Vec2) -> f64 {
    hypot(v.x, v.y)
}

#[inline]
pub fn clamp(x: f64, lo: f64, hi: f64) -> f64 {
    if x < lo {
        lo
    } else if x > hi {
        hi
    } else {
        x
    }
}

#[inline]
pub fn deg(d: f64) -> f64 {
    d * core::f64::consts::PI / 180.0
}
