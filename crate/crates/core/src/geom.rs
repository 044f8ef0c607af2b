//! Shared geometric primitives: world-space AABBs and inclusive pixel boxes.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Axis-aligned box in world meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Box3D {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    /// Tight box around a point set; `None` when the set is empty.
    pub fn from_points<'a, I>(points: I) -> Option<Self>
    where
        I: IntoIterator<Item = &'a Vec3>,
    {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = Self::new([first.x, first.y, first.z], [first.x, first.y, first.z]);
        for p in it {
            b.expand(p);
        }
        Some(b)
    }

    pub fn expand(&mut self, p: &Vec3) {
        for a in 0..3 {
            self.min[a] = self.min[a].min(p[a]);
            self.max[a] = self.max[a].max(p[a]);
        }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|a| self.min[a] <= p[a] && p[a] <= self.max[a])
    }

    pub fn contains_box(&self, other: &Box3D) -> bool {
        (0..3).all(|a| self.min[a] <= other.min[a] && other.max[a] <= self.max[a])
    }

    pub fn extent(&self) -> [f64; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e[0].max(0.0) * e[1].max(0.0) * e[2].max(0.0)
    }

    pub fn center(&self) -> Vec3 {
        Vec3::new(
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        )
    }

    pub fn intersection_volume(&self, other: &Box3D) -> f64 {
        let mut v = 1.0;
        for a in 0..3 {
            let lo = self.min[a].max(other.min[a]);
            let hi = self.max[a].min(other.max[a]);
            if hi <= lo {
                return 0.0;
            }
            v *= hi - lo;
        }
        v
    }
}

/// Inclusive pixel box `[x1, x2] × [y1, y2]` on a panorama raster.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelBox {
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
}

impl PixelBox {
    /// Builds a box from two corners in any order.
    pub fn from_corners(xa: u32, ya: u32, xb: u32, yb: u32) -> Self {
        Self {
            x1: xa.min(xb),
            y1: ya.min(yb),
            x2: xa.max(xb),
            y2: ya.max(yb),
        }
    }

    pub fn width(&self) -> u32 {
        self.x2 - self.x1 + 1
    }

    pub fn height(&self) -> u32 {
        self.y2 - self.y1 + 1
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width()) * u64::from(self.height())
    }

    pub fn contains(&self, u: u32, v: u32) -> bool {
        self.x1 <= u && u <= self.x2 && self.y1 <= v && v <= self.y2
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (f64::from(self.x1) + f64::from(self.x2)),
            0.5 * (f64::from(self.y1) + f64::from(self.y2)),
        )
    }

    /// Intersection-over-union on the pixel lattice.
    pub fn iou(&self, other: &PixelBox) -> f64 {
        let x1 = self.x1.max(other.x1);
        let y1 = self.y1.max(other.y1);
        let x2 = self.x2.min(other.x2);
        let y2 = self.y2.min(other.y2);
        if x2 < x1 || y2 < y1 {
            return 0.0;
        }
        let inter = u64::from(x2 - x1 + 1) * u64::from(y2 - y1 + 1);
        let union = self.area() + other.area() - inter;
        inter as f64 / union as f64
    }

    /// Moves the box `shift` columns to the right on a `width`-column ring.
    /// Returns `None` when the moved box would wrap across the seam.
    pub fn shift_columns(&self, shift: i64, width: u32) -> Option<PixelBox> {
        let w = i64::from(width);
        let a = (i64::from(self.x1) + shift).rem_euclid(w);
        let b = (i64::from(self.x2) + shift).rem_euclid(w);
        if a > b || b - a != i64::from(self.x2 - self.x1) {
            return None;
        }
        Some(PixelBox {
            x1: a as u32,
            y1: self.y1,
            x2: b as u32,
            y2: self.y2,
        })
    }
}

/// Tight box over pixel coordinates on a horizontally periodic raster.
///
/// The occupied columns are treated as an arc on the ring: the arc is the
/// complement of the largest run of empty columns. When that arc crosses the
/// seam it is split there and only the larger piece (by pixel count, then by
/// column span) is kept.
pub fn tight_box_on_ring<I>(pixels: I, width: u32) -> Option<PixelBox>
where
    I: IntoIterator<Item = (u32, u32)> + Clone,
{
    let mut columns = alloc::vec![0u32; width as usize];
    for (u, _) in pixels.clone() {
        columns[u as usize] += 1;
    }
    let occupied: alloc::vec::Vec<u32> = (0..width).filter(|&c| columns[c as usize] > 0).collect();
    let (first, last) = (*occupied.first()?, *occupied.last()?);

    // Largest empty run; the run through the seam wins ties.
    let mut best_gap = first + width - last - 1;
    let mut split: Option<(u32, u32)> = None;
    for pair in occupied.windows(2) {
        let gap = pair[1] - pair[0] - 1;
        if gap > best_gap {
            best_gap = gap;
            split = Some((pair[0], pair[1]));
        }
    }
    let keep = split.map(|(left_end, right_start)| {
        let left_count: u32 = columns[..=left_end as usize].iter().sum();
        let right_count: u32 = columns[right_start as usize..].iter().sum();
        let left_span = left_end + 1;
        let right_span = width - right_start;
        if (left_count, left_span) > (right_count, right_span) {
            (0, left_end)
        } else {
            (right_start, width - 1)
        }
    });

    let mut out: Option<PixelBox> = None;
    for (u, v) in pixels {
        if let Some((lo, hi)) = keep {
            if u < lo || u > hi {
                continue;
            }
        }
        out = Some(match out {
            None => PixelBox {
                x1: u,
                y1: v,
                x2: u,
                y2: v,
            },
            Some(b) => PixelBox {
                x1: b.x1.min(u),
                y1: b.y1.min(v),
                x2: b.x2.max(u),
                y2: b.y2.max(v),
            },
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn pixel_iou_basics() {
        let a = PixelBox::from_corners(0, 0, 9, 9);
        assert_eq!(a.iou(&a), 1.0);
        let b = PixelBox::from_corners(10, 0, 19, 9);
        assert_eq!(a.iou(&b), 0.0);
        let c = PixelBox::from_corners(5, 0, 14, 9);
        assert!((a.iou(&c) - 50.0 / 150.0).abs() < 1e-12);
    }

    #[test]
    fn shift_columns_detects_wrap() {
        let b = PixelBox::from_corners(10, 3, 20, 5);
        assert_eq!(b.shift_columns(5, 100).unwrap().x1, 15);
        assert!(b.shift_columns(85, 100).is_none());
        assert_eq!(b.shift_columns(-10, 100).unwrap().x1, 0);
        assert_eq!(b.shift_columns(100, 100), Some(b));
    }

    #[test]
    fn ring_box_keeps_larger_piece() {
        let px = [(0u32, 1u32), (1, 1), (2, 2), (98, 5), (99, 6)];
        let b = tight_box_on_ring(px.iter().copied(), 100).unwrap();
        assert_eq!(b, PixelBox::from_corners(0, 1, 2, 2));
        let plain = [(3u32, 1u32), (7, 4)];
        assert_eq!(
            tight_box_on_ring(plain.iter().copied(), 100).unwrap(),
            PixelBox::from_corners(3, 1, 7, 4)
        );
        assert!(tight_box_on_ring(core::iter::empty::<(u32, u32)>(), 10).is_none());
    }

    #[test]
    fn box3d_from_points() {
        let pts = vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(-1.0, 5.0, 0.0)];
        let b = Box3D::from_points(&pts).unwrap();
        assert_eq!(b.min, [-1.0, 2.0, 0.0]);
        assert_eq!(b.max, [1.0, 5.0, 3.0]);
        assert!(pts.iter().all(|p| b.contains(p)));
    }
}
