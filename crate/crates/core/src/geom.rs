use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// A point or displacement in the plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm_sq(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist_sq(self, other: Vec2) -> f64 {
        (self - other).norm_sq()
    }

    pub fn dist(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Scales the vector down so its magnitude does not exceed `max`. Direction is kept.
    pub fn clamp_norm(self, max: f64) -> Vec2 {
        let n = self.norm();
        if n > max {
            self * (max / n)
        } else {
            self
        }
    }

    /// Clamps both coordinates into `[lo, hi]`.
    pub fn clamp_box(self, lo: f64, hi: f64) -> Vec2 {
        Vec2::new(self.x.clamp(lo, hi), self.y.clamp(lo, hi))
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, rhs: Vec2) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Center of grid cell `(col, row)` at 1 m resolution.
#[inline]
pub fn cell_center(col: usize, row: usize) -> Vec2 {
    Vec2::new(col as f64 + 0.5, row as f64 + 0.5)
}

/// Half-open index range of cells whose centers fall in `[lo, hi)`, clipped to `0..n`.
pub fn cells_in_interval(lo: f64, hi: f64, n: usize) -> std::ops::Range<usize> {
    let start = (lo - 0.5).ceil().max(0.0);
    let end = (hi - 0.5).ceil().min(n as f64);
    // NaN bounds compare false and give an empty range.
    if start.partial_cmp(&end) != Some(std::cmp::Ordering::Less) {
        return 0..0;
    }
    start as usize..end as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamp_norm_preserves_direction() {
        let v = Vec2::new(10.0, 0.0).clamp_norm(5.0);
        assert_eq!(v, Vec2::new(5.0, 0.0));
        let w = Vec2::new(3.0, 4.0).clamp_norm(1.0);
        assert!((w.x - 0.6).abs() < 1e-15 && (w.y - 0.8).abs() < 1e-15);
        assert_eq!(Vec2::new(1.0, 1.0).clamp_norm(5.0), Vec2::new(1.0, 1.0));
    }

    #[test]
    fn interval_counts_cell_centers() {
        assert_eq!(cells_in_interval(480.0, 544.0, 1024), 480..544);
        assert_eq!(cells_in_interval(480.5, 544.5, 1024), 480..544);
        assert_eq!(cells_in_interval(-32.0, 32.0, 1024), 0..32);
        assert_eq!(cells_in_interval(1000.0, 1064.0, 1024), 1000..1024);
        assert_eq!(cells_in_interval(2000.0, 2064.0, 1024), 0..0);
        // a center sitting exactly on `lo` is inside, on `hi` is outside
        assert_eq!(cells_in_interval(0.5, 2.5, 10), 0..2);
    }
}
