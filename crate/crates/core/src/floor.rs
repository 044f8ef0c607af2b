//! Floor plane estimation with a verticality-constrained RANSAC.
//!
//! The input is voxel-downsampled (centroid per occupied voxel), the lowest
//! fraction of voxel centroids is kept as floor candidates, and each
//! hypothesis is drawn from a ChaCha stream keyed by `(seed, iteration)` so
//! the result does not depend on evaluation order.

use alloc::vec::Vec;
use core::cmp::Ordering;
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Vec3;
use crate::scene::SceneModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FloorError {
    #[error("only {found} floor candidates after downsampling, need at least 3")]
    TooFewPoints { found: usize },
    #[error("no sampled plane satisfied |n_z| > {nz_min}")]
    NoVerticalPlane { nz_min: f64 },
    #[error("invalid RANSAC parameters: {0}")]
    InvalidParams(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacParams {
    pub voxel: f64,
    pub bottom_fraction: f64,
    pub iterations: u32,
    pub nz_min: f64,
    pub inlier_threshold: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            voxel: 0.05,
            bottom_fraction: 0.5,
            iterations: 10_000,
            nz_min: 0.9,
            inlier_threshold: 1e-3,
            seed: 0,
        }
    }
}

impl RansacParams {
    pub fn validate(&self) -> Result<(), FloorError> {
        if !(self.bottom_fraction > 0.0 && self.bottom_fraction <= 1.0) {
            return Err(FloorError::InvalidParams("bottom_fraction must lie in (0, 1]"));
        }
        if self.iterations == 0 {
            return Err(FloorError::InvalidParams("iterations must be >= 1"));
        }
        if !(self.voxel > 0.0 && self.inlier_threshold > 0.0 && self.nz_min > 0.0) {
            return Err(FloorError::InvalidParams("thresholds must be positive"));
        }
        Ok(())
    }
}

/// Plane `normal · x = offset` with `normal_z > 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct FloorPlane {
    pub normal: Vec3,
    pub offset: f64,
    /// Indices into the scene's points.
    pub inlier_indices: Vec<usize>,
    pub inlier_count: usize,
}

impl FloorPlane {
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }

    /// Height of the plane above the world origin at `(x, y)`.
    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        (self.offset - self.normal.x * x - self.normal.y * y) / self.normal.z
    }
}

/// Voxel centroids in canonical (sorted-key) order.
///
/// Points inside a voxel are summed in coordinate order so the centroid is
/// independent of input permutation.
pub fn voxel_downsample(points: &[Vec3], voxel: f64) -> Vec<Vec3> {
    let mut keyed: Vec<([i64; 3], Vec3)> = points
        .iter()
        .map(|p| {
            let k = [
                (p.x / voxel).floor() as i64,
                (p.y / voxel).floor() as i64,
                (p.z / voxel).floor() as i64,
            ];
            (k, *p)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| lex_cmp(&a.1, &b.1)));
    let mut out = Vec::new();
    let mut i = 0;
    while i < keyed.len() {
        let mut j = i;
        let mut sum = Vec3::zeros();
        while j < keyed.len() && keyed[j].0 == keyed[i].0 {
            sum += keyed[j].1;
            j += 1;
        }
        out.push(sum / (j - i) as f64);
        i = j;
    }
    out
}

fn lex_cmp(a: &Vec3, b: &Vec3) -> Ordering {
    a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)).then(a.z.total_cmp(&b.z))
}

/// Plane through three points as `(unit normal with n_z >= 0, offset)`;
/// `None` when the triangle area is below 1e-12.
fn plane_through(a: &Vec3, b: &Vec3, c: &Vec3) -> Option<(Vec3, f64)> {
    let cross = (b - a).cross(&(c - a));
    let norm = cross.norm();
    if 0.5 * norm < 1e-12 {
        return None;
    }
    let mut n = cross / norm;
    if n.z < 0.0 {
        n = -n;
    }
    Some((n, n.dot(a)))
}

const MAX_DRAWS_PER_ITERATION: usize = 64;

pub fn estimate_floor(scene: &SceneModel, params: &RansacParams) -> Result<FloorPlane, FloorError> {
    params.validate()?;
    let positions: Vec<Vec3> = scene.positions().copied().collect();
    let mut candidates = voxel_downsample(&positions, params.voxel);
    // Stable sort keeps the canonical voxel order among equal heights.
    candidates.sort_by(|a, b| a.z.total_cmp(&b.z));
    let keep = ((candidates.len() as f64) * params.bottom_fraction).ceil() as usize;
    candidates.truncate(keep.min(candidates.len()));
    let n = candidates.len();
    if n < 3 {
        return Err(FloorError::TooFewPoints { found: n });
    }

    let mut best: Option<(usize, Vec3, f64)> = None;
    for iteration in 0..params.iterations {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(u64::from(iteration));
        let Some((normal, offset)) = draw_hypothesis(&mut rng, &candidates) else {
            continue;
        };
        if normal.z.abs() <= params.nz_min {
            continue;
        }
        let count = candidates
            .iter()
            .filter(|p| (normal.dot(p) - offset).abs() <= params.inlier_threshold)
            .count();
        if best.as_ref().is_none_or(|b| count > b.0) {
            best = Some((count, normal, offset));
        }
    }
    let (_, normal, offset) = best.ok_or(FloorError::NoVerticalPlane { nz_min: params.nz_min })?;
    let inlier_indices: Vec<usize> = positions
        .iter()
        .enumerate()
        .filter(|(_, p)| (normal.dot(p) - offset).abs() <= params.inlier_threshold)
        .map(|(i, _)| i)
        .collect();
    Ok(FloorPlane {
        normal,
        offset,
        inlier_count: inlier_indices.len(),
        inlier_indices,
    })
}

/// Draws three distinct non-collinear candidates; degenerate draws are
/// retried within the same iteration stream.
fn draw_hypothesis(rng: &mut ChaCha8Rng, candidates: &[Vec3]) -> Option<(Vec3, f64)> {
    let n = candidates.len();
    for _ in 0..MAX_DRAWS_PER_ITERATION {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        let k = rng.random_range(0..n);
        if i == j || j == k || i == k {
            continue;
        }
        if let Some(plane) = plane_through(&candidates[i], &candidates[j], &candidates[k]) {
            return Some(plane);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::ScenePoint;
    use alloc::vec;

    fn scene_of(points: &[Vec3]) -> SceneModel {
        SceneModel::new(
            points.iter().map(|p| ScenePoint::new(*p, [0; 3], 0, 0)).collect(),
            vec![],
            None,
        )
        .unwrap()
    }

    fn grid_plane(z: f64, n: usize) -> Vec<Vec3> {
        let mut v = Vec::new();
        for i in 0..n {
            for j in 0..n {
                v.push(Vec3::new(i as f64 * 0.07, j as f64 * 0.07, z));
            }
        }
        v
    }

    #[test]
    fn noiseless_plane_at_height() {
        let pts = grid_plane(1.3, 20);
        let params = RansacParams {
            iterations: 200,
            ..Default::default()
        };
        let f = estimate_floor(&scene_of(&pts), &params).unwrap();
        assert!((f.normal - Vec3::z()).norm() < 1e-9);
        assert!((f.offset - 1.3).abs() < 1e-9);
        assert_eq!(f.inlier_count, pts.len());
    }

    #[test]
    fn vertical_wall_has_no_floor() {
        let mut pts = Vec::new();
        for i in 0..30 {
            for j in 0..30 {
                pts.push(Vec3::new(0.0, i as f64 * 0.07, j as f64 * 0.07));
            }
        }
        let params = RansacParams {
            iterations: 500,
            ..Default::default()
        };
        assert_eq!(
            estimate_floor(&scene_of(&pts), &params),
            Err(FloorError::NoVerticalPlane { nz_min: 0.9 })
        );
    }

    #[test]
    fn too_few_points() {
        let pts = vec![Vec3::zeros(), Vec3::new(0.01, 0.0, 0.0)];
        assert_eq!(
            estimate_floor(&scene_of(&pts), &RansacParams::default()),
            Err(FloorError::TooFewPoints { found: 1 })
        );
    }

    #[test]
    fn invalid_params_rejected() {
        let p = RansacParams {
            bottom_fraction: 0.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn centroid_independent_of_order() {
        let pts = vec![
            Vec3::new(0.011, 0.02, 0.003),
            Vec3::new(0.013, 0.01, 0.001),
            Vec3::new(0.017, 0.03, 0.004),
        ];
        let mut rev = pts.clone();
        rev.reverse();
        assert_eq!(voxel_downsample(&pts, 0.05), voxel_downsample(&rev, 0.05));
    }
}
