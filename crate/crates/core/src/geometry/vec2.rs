//! Tiny fixed-size 2-D vector helpers over `[f64; 2]`.

pub type Vec2 = [f64; 2];

#[inline]
pub fn add(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn scale(a: Vec2, s: f64) -> Vec2 {
    [a[0] * s, a[1] * s]
}

#[inline]
pub fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// z-component of the 3-D cross product; twice the signed area of (0, a, b).
#[inline]
pub fn cross(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
pub fn len(a: Vec2) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist(a: Vec2, b: Vec2) -> f64 {
    len(sub(a, b))
}

#[inline]
pub fn lerp(a: Vec2, b: Vec2, t: f64) -> Vec2 {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t]
}

#[inline]
pub fn midpoint(a: Vec2, b: Vec2) -> Vec2 {
    lerp(a, b, 0.5)
}

/// Unit vector along `a`; `[1, 0]` for a zero vector.
#[inline]
pub fn normalize(a: Vec2) -> Vec2 {
    let l = len(a);
    if l == 0.0 {
        [1.0, 0.0]
    } else {
        scale(a, 1.0 / l)
    }
}

/// Rotate `a` counter-clockwise by `angle` radians (y-up convention; in
/// raster coordinates with y down this appears clockwise).
#[inline]
pub fn rotate(a: Vec2, angle: f64) -> Vec2 {
    let (s, c) = angle.sin_cos();
    [a[0] * c - a[1] * s, a[0] * s + a[1] * c]
}
