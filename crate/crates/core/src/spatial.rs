//! Uniform-grid point index for nearest-neighbor and k-nearest queries.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::geom::Vec3;

/// Points bucketed into a dense grid of cubic cells (CSR layout).
pub struct PointGrid<'a> {
    points: &'a [Vec3],
    origin: Vec3,
    cell: f64,
    dims: [usize; 3],
    starts: Vec<u32>,
    order: Vec<u32>,
}

impl<'a> PointGrid<'a> {
    /// Picks a cell size so that the grid holds a few points per occupied cell.
    pub fn new(points: &'a [Vec3]) -> Self {
        let (lo, hi) = extent(points);
        let span = hi - lo;
        let longest = span.x.max(span.y).max(span.z).max(1e-6);
        // Surfaces dominate real scenes, so size cells as if points lay on a sheet.
        let n = points.len().max(1) as f64;
        let cell = (longest / n.sqrt() * 4.0).max(longest / 256.0).max(1e-6);
        Self::with_cell(points, cell)
    }

    pub fn with_cell(points: &'a [Vec3], cell: f64) -> Self {
        let (lo, hi) = extent(points);
        let mut cell = cell;
        let mut dims;
        loop {
            dims = [0usize; 3];
            for a in 0..3 {
                dims[a] = ((hi[a] - lo[a]) / cell).floor() as usize + 1;
            }
            if dims[0] * dims[1] * dims[2] <= 8 * points.len() + 64 {
                break;
            }
            cell *= 1.5;
        }
        let mut grid = Self {
            points,
            origin: lo,
            cell,
            dims,
            starts: Vec::new(),
            order: Vec::new(),
        };
        let n_cells = dims[0] * dims[1] * dims[2];
        let mut counts = alloc::vec![0u32; n_cells + 1];
        let keys: Vec<usize> = points.iter().map(|p| grid.linear(grid.cell_of(p))).collect();
        for &k in &keys {
            counts[k + 1] += 1;
        }
        for i in 0..n_cells {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut order = alloc::vec![0u32; points.len()];
        for (i, &k) in keys.iter().enumerate() {
            order[fill[k] as usize] = i as u32;
            fill[k] += 1;
        }
        grid.starts = counts;
        grid.order = order;
        grid
    }

    fn cell_of(&self, p: &Vec3) -> [usize; 3] {
        let mut c = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] - self.origin[a]) / self.cell).floor();
            c[a] = if f <= 0.0 {
                0
            } else {
                (f as usize).min(self.dims[a] - 1)
            };
        }
        c
    }

    fn linear(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    fn bucket(&self, c: [usize; 3]) -> &[u32] {
        let k = self.linear(c);
        &self.order[self.starts[k] as usize..self.starts[k + 1] as usize]
    }

    /// Visits every cell at Chebyshev distance exactly `r` from `center`.
    fn for_ring<F: FnMut([usize; 3])>(&self, center: [usize; 3], r: usize, mut f: F) {
        let r = r as isize;
        let lo = |a: usize| (center[a] as isize - r).max(0);
        let hi = |a: usize| (center[a] as isize + r).min(self.dims[a] as isize - 1);
        for z in lo(2)..=hi(2) {
            for y in lo(1)..=hi(1) {
                let on_shell_yz = (z - center[2] as isize).abs() == r || (y - center[1] as isize).abs() == r;
                if on_shell_yz {
                    for x in lo(0)..=hi(0) {
                        f([x as usize, y as usize, z as usize]);
                    }
                } else {
                    for x in [center[0] as isize - r, center[0] as isize + r] {
                        if x >= 0 && x < self.dims[0] as isize {
                            f([x as usize, y as usize, z as usize]);
                        }
                        if r == 0 {
                            break;
                        }
                    }
                }
            }
        }
    }

    fn max_ring(&self) -> usize {
        self.dims[0].max(self.dims[1]).max(self.dims[2])
    }

    /// Nearest indexed point to `q` as `(index, distance)`.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let c = self.cell_of(q);
        let mut best = (usize::MAX, f64::INFINITY);
        for r in 0..=self.max_ring() {
            self.for_ring(c, r, |cell| {
                for &i in self.bucket(cell) {
                    let d = (self.points[i as usize] - q).norm_squared();
                    if d < best.1 || (d == best.1 && (i as usize) < best.0) {
                        best = (i as usize, d);
                    }
                }
            });
            if best.0 != usize::MAX && best.1.sqrt() <= r as f64 * self.cell {
                break;
            }
        }
        Some((best.0, best.1.sqrt()))
    }

    /// The `k` nearest points to `q` sorted by distance, optionally skipping one index.
    pub fn k_nearest(&self, q: &Vec3, k: usize, skip: Option<usize>) -> Vec<(usize, f64)> {
        let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        if k == 0 {
            return best;
        }
        let c = self.cell_of(q);
        for r in 0..=self.max_ring() {
            self.for_ring(c, r, |cell| {
                for &i in self.bucket(cell) {
                    let i = i as usize;
                    if Some(i) == skip {
                        continue;
                    }
                    let d = (self.points[i] - q).norm_squared();
                    if best.len() == k && d >= best[k - 1].1 {
                        continue;
                    }
                    let pos = best
                        .iter()
                        .position(|&(j, e)| d < e || (d == e && i < j))
                        .unwrap_or(best.len());
                    best.insert(pos, (i, d));
                    best.truncate(k);
                }
            });
            if best.len() == k && best[k - 1].1.sqrt() <= r as f64 * self.cell {
                break;
            }
        }
        best.into_iter().map(|(i, d)| (i, d.sqrt())).collect()
    }
}

fn extent(points: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    if points.is_empty() {
        (Vec3::zeros(), Vec3::zeros())
    } else {
        (lo, hi)
    }
}
