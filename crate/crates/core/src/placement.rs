//! Structure-aware panoramic viewpoint placement.
//!
//! Candidates live on a regular grid over the convex hull of the scene's
//! floor footprint at the mean capture height. Each candidate is scored by
//! `S = A · D_surf / (D_traj + ε)` where `A` is the fraction of other
//! candidates visible within `r_max`, and cameras are then chosen greedily,
//! zeroing the contribution of already covered cells after every pick.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::floor::FloorPlane;
use crate::geom::Vec3;
use crate::scene::{CameraPose, SceneModel, Trajectory};
use crate::spatial::PointGrid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlacementError {
    #[error("scene footprint is degenerate ({distinct} distinct hull vertices)")]
    DegenerateHull { distinct: usize },
    #[error("invalid placement parameter: {0}")]
    InvalidParams(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlacementParams {
    pub spacing: f64,
    pub r_max: f64,
    pub epsilon: f64,
    pub coverage_target: f64,
    pub max_cameras: usize,
    pub clearance: f64,
    /// Points closer than this to the floor plane are not obstacles.
    pub floor_margin: f64,
    /// Obstacle band extends this far above the camera height.
    pub headroom: f64,
    /// Camera height above the floor when no trajectory is available.
    pub fallback_height: f64,
}

impl Default for PlacementParams {
    fn default() -> Self {
        Self {
            spacing: 0.10,
            r_max: 3.0,
            epsilon: 1e-3,
            coverage_target: 0.90,
            max_cameras: 8,
            clearance: 0.25,
            floor_margin: 0.05,
            headroom: 0.3,
            fallback_height: 1.5,
        }
    }
}

impl PlacementParams {
    pub fn validate(&self) -> Result<(), PlacementError> {
        if !(self.spacing > 0.0) {
            return Err(PlacementError::InvalidParams("spacing must be positive"));
        }
        if !(self.coverage_target > 0.0 && self.coverage_target <= 1.0) {
            return Err(PlacementError::InvalidParams("coverage_target must lie in (0, 1]"));
        }
        if !(self.r_max >= 0.0 && self.epsilon > 0.0 && self.clearance >= 0.0) {
            return Err(PlacementError::InvalidParams(
                "r_max, epsilon and clearance must be non-negative",
            ));
        }
        Ok(())
    }
}

/// Convex hull of 2D points, counter-clockwise, without collinear vertices.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross =
        |o: &[f64; 2], a: &[f64; 2], b: &[f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    let push_chain = |hull: &mut Vec<[f64; 2]>, p: &[f64; 2], start: usize| {
        while hull.len() >= start + 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    };
    for p in &pts {
        push_chain(&mut hull, p, 0);
    }
    hull.pop();
    let start = hull.len();
    for p in pts.iter().rev() {
        push_chain(&mut hull, p, start);
    }
    hull.pop();
    hull
}

fn point_in_convex(hull: &[[f64; 2]], p: [f64; 2], tol: f64) -> bool {
    let n = hull.len();
    (0..n).all(|i| {
        let a = hull[i];
        let b = hull[(i + 1) % n];
        let edge = [b[0] - a[0], b[1] - a[1]];
        let len = (edge[0] * edge[0] + edge[1] * edge[1]).sqrt();
        let cross = edge[0] * (p[1] - a[1]) - edge[1] * (p[0] - a[0]);
        cross >= -tol * len
    })
}

/// Voxelized obstacle volume used for line-of-sight tests.
#[derive(Clone, Debug)]
pub struct Occupancy {
    origin: Vec3,
    voxel: f64,
    dims: [usize; 3],
    filled: Vec<bool>,
}

impl Occupancy {
    pub fn new(origin: Vec3, voxel: f64, dims: [usize; 3]) -> Self {
        Self {
            origin,
            voxel,
            dims,
            filled: alloc::vec![false; dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    fn index_of(&self, p: &Vec3) -> [i64; 3] {
        let mut c = [0i64; 3];
        for a in 0..3 {
            c[a] = ((p[a] - self.origin[a]) / self.voxel).floor() as i64;
        }
        c
    }

    fn in_bounds(&self, c: [i64; 3]) -> bool {
        (0..3).all(|a| c[a] >= 0 && (c[a] as usize) < self.dims[a])
    }

    fn linear(&self, c: [i64; 3]) -> usize {
        ((c[2] as usize * self.dims[1]) + c[1] as usize) * self.dims[0] + c[0] as usize
    }

    pub fn is_filled(&self, c: [i64; 3]) -> bool {
        self.in_bounds(c) && self.filled[self.linear(c)]
    }

    /// Marks the voxel containing `p`; points outside the volume are ignored.
    pub fn fill_point(&mut self, p: &Vec3) {
        let c = self.index_of(p);
        if self.in_bounds(c) {
            let i = self.linear(c);
            self.filled[i] = true;
        }
    }

    /// Indices of every filled voxel.
    pub fn filled_voxels(&self) -> Vec<[i64; 3]> {
        let mut out = Vec::new();
        for z in 0..self.dims[2] {
            for y in 0..self.dims[1] {
                for x in 0..self.dims[0] {
                    let c = [x as i64, y as i64, z as i64];
                    if self.filled[self.linear(c)] {
                        out.push(c);
                    }
                }
            }
        }
        out
    }

    /// Axis-aligned bounds of voxel `c`.
    pub fn voxel_bounds(&self, c: [i64; 3]) -> (Vec3, Vec3) {
        let lo = self.origin + Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64) * self.voxel;
        (lo, lo + Vec3::repeat(self.voxel))
    }

    /// Walks the voxels pierced by segment `a → b` (3D DDA) and reports
    /// whether none of them is filled.
    pub fn segment_clear(&self, a: &Vec3, b: &Vec3) -> bool {
        let dir = b - a;
        let mut cur = self.index_of(a);
        let end = self.index_of(b);
        let mut step = [0i64; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for k in 0..3 {
            if dir[k] > 0.0 {
                step[k] = 1;
                let boundary = self.origin[k] + (cur[k] + 1) as f64 * self.voxel;
                t_max[k] = (boundary - a[k]) / dir[k];
                t_delta[k] = self.voxel / dir[k];
            } else if dir[k] < 0.0 {
                step[k] = -1;
                let boundary = self.origin[k] + cur[k] as f64 * self.voxel;
                t_max[k] = (boundary - a[k]) / dir[k];
                t_delta[k] = -self.voxel / dir[k];
            }
        }
        loop {
            if self.is_filled(cur) {
                return false;
            }
            if cur == end {
                return true;
            }
            let mut k = 0;
            for j in 1..3 {
                if t_max[j] < t_max[k] {
                    k = j;
                }
            }
            if t_max[k] > 1.0 {
                return true;
            }
            cur[k] += step[k];
            t_max[k] += t_delta[k];
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridCell {
    pub position: Vec3,
    pub ix: usize,
    pub iy: usize,
    /// Too close to scene geometry to host a camera; excluded from candidacy
    /// and from the coverage denominator.
    pub occupied: bool,
}

#[derive(Clone, Debug)]
pub struct CandidateGrid {
    pub spacing: f64,
    pub camera_height: f64,
    pub footprint: Vec<[f64; 2]>,
    pub cells: Vec<GridCell>,
    origin_xy: [f64; 2],
    dims_xy: [usize; 2],
    lookup: Vec<Option<u32>>,
    occupancy: Occupancy,
}

impl CandidateGrid {
    pub fn occupancy(&self) -> &Occupancy {
        &self.occupancy
    }

    /// Indices of unoccupied cells in ascending order.
    pub fn candidates(&self) -> Vec<usize> {
        (0..self.cells.len()).filter(|&i| !self.cells[i].occupied).collect()
    }

    pub fn unoccupied_count(&self) -> usize {
        self.cells.iter().filter(|c| !c.occupied).count()
    }

    pub fn cell_at(&self, ix: usize, iy: usize) -> Option<usize> {
        if ix >= self.dims_xy[0] || iy >= self.dims_xy[1] {
            return None;
        }
        self.lookup[iy * self.dims_xy[0] + ix].map(|i| i as usize)
    }

    pub fn origin_xy(&self) -> [f64; 2] {
        self.origin_xy
    }

    /// Line of sight between two cells, always traversed from the lower index
    /// so the relation is symmetric.
    pub fn cells_visible(&self, a: usize, b: usize) -> bool {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        self.occupancy
            .segment_clear(&self.cells[lo].position, &self.cells[hi].position)
    }

    /// Assembles a grid from explicit parts; cells outside the `dims_xy`
    /// lattice are rejected.
    pub fn from_parts(
        spacing: f64,
        camera_height: f64,
        footprint: Vec<[f64; 2]>,
        origin_xy: [f64; 2],
        dims_xy: [usize; 2],
        cells: Vec<GridCell>,
        occupancy: Occupancy,
    ) -> Self {
        let mut lookup = alloc::vec![None; dims_xy[0] * dims_xy[1]];
        for (i, c) in cells.iter().enumerate() {
            lookup[c.iy * dims_xy[0] + c.ix] = Some(i as u32);
        }
        Self {
            spacing,
            camera_height,
            footprint,
            cells,
            origin_xy,
            dims_xy,
            lookup,
            occupancy,
        }
    }
}

pub fn build_candidate_grid(
    scene: &SceneModel,
    floor: &FloorPlane,
    trajectory: &Trajectory,
    params: &PlacementParams,
) -> Result<CandidateGrid, PlacementError> {
    params.validate()?;
    let xy: Vec<[f64; 2]> = scene.positions().map(|p| [p.x, p.y]).collect();
    let hull = convex_hull(&xy);
    if hull.len() < 3 {
        return Err(PlacementError::DegenerateHull { distinct: hull.len() });
    }
    let h = params.spacing;
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &hull {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let nx = ((hi[0] - lo[0]) / h + 1e-9).floor() as usize + 1;
    let ny = ((hi[1] - lo[1]) / h + 1e-9).floor() as usize + 1;

    let floor_z = floor.height_at(0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]));
    let camera_height = trajectory.mean_height().unwrap_or(floor_z + params.fallback_height);

    // Voxel layers are centered on the camera height and cells sit at voxel centers.
    let bounds = scene.bounds().expect("non-empty scene has bounds");
    let below = ((camera_height - bounds.min[2].min(floor_z)) / h).ceil().max(0.0) + 1.0;
    let origin = Vec3::new(lo[0] - 0.5 * h, lo[1] - 0.5 * h, camera_height - 0.5 * h - below * h);
    let top = camera_height + params.headroom;
    let dims = [nx + 1, ny + 1, ((top - origin.z) / h).ceil() as usize + 1];
    let mut occupancy = Occupancy::new(origin, h, dims);
    let mut obstacles_xy: Vec<Vec3> = Vec::new();
    for p in scene.positions() {
        let above_floor = floor.signed_distance(p) / floor.normal.z;
        if above_floor > params.floor_margin && p.z <= top {
            occupancy.fill_point(p);
            obstacles_xy.push(Vec3::new(p.x, p.y, 0.0));
        }
    }
    let obstacle_index = PointGrid::new(&obstacles_xy);

    let mut cells = Vec::new();
    for iy in 0..ny {
        for ix in 0..nx {
            let x = lo[0] + ix as f64 * h;
            let y = lo[1] + iy as f64 * h;
            if !point_in_convex(&hull, [x, y], 1e-9) {
                continue;
            }
            let occupied = obstacle_index
                .nearest(&Vec3::new(x, y, 0.0))
                .is_some_and(|(_, d)| d <= params.clearance);
            cells.push(GridCell {
                position: Vec3::new(x, y, camera_height),
                ix,
                iy,
                occupied,
            });
        }
    }
    Ok(CandidateGrid::from_parts(
        h,
        camera_height,
        hull,
        lo,
        [nx, ny],
        cells,
        occupancy,
    ))
}

/// Ray coverage of one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Coverage {
    pub fraction: f64,
    /// Visible unoccupied cells, ascending.
    pub visible: Vec<u32>,
}

/// Cells visible from `cell` within `r_max`, and their share of the other
/// unoccupied cells.
pub fn ray_coverage(grid: &CandidateGrid, cell: usize, r_max: f64) -> Coverage {
    let p = grid.cells[cell].position;
    let reach = (r_max / grid.spacing).floor() as i64 + 1;
    let (cx, cy) = (grid.cells[cell].ix as i64, grid.cells[cell].iy as i64);
    let mut visible = Vec::new();
    for iy in (cy - reach).max(0)..=cy + reach {
        for ix in (cx - reach).max(0)..=cx + reach {
            let Some(q) = grid.cell_at(ix as usize, iy as usize) else {
                continue;
            };
            if q == cell || grid.cells[q].occupied {
                continue;
            }
            if (grid.cells[q].position - p).norm() > r_max {
                continue;
            }
            if grid.cells_visible(cell, q) {
                visible.push(q as u32);
            }
        }
    }
    visible.sort_unstable();
    let others = grid.unoccupied_count().saturating_sub(1);
    let fraction = if others == 0 {
        0.0
    } else {
        visible.len() as f64 / others as f64
    };
    Coverage { fraction, visible }
}

/// Visibility sets of every candidate, computed once.
#[derive(Clone, Debug)]
pub struct VisibilityTable {
    /// Candidate cell indices, ascending.
    pub candidates: Vec<usize>,
    /// `visible[k]` belongs to `candidates[k]`.
    pub visible: Vec<Vec<u32>>,
    pub denominator: usize,
}

impl VisibilityTable {
    pub fn compute(grid: &CandidateGrid, r_max: f64) -> Self {
        let candidates = grid.candidates();
        let visible = candidates
            .iter()
            .map(|&c| ray_coverage(grid, c, r_max).visible)
            .collect();
        Self {
            denominator: candidates.len().saturating_sub(1),
            candidates,
            visible,
        }
    }

    /// Table from rows computed elsewhere (for example in parallel), one per
    /// entry of `grid.candidates()`.
    pub fn from_rows(grid: &CandidateGrid, visible: Vec<Vec<u32>>) -> Self {
        let candidates = grid.candidates();
        assert_eq!(candidates.len(), visible.len(), "one visibility row per candidate");
        Self {
            denominator: candidates.len().saturating_sub(1),
            candidates,
            visible,
        }
    }

    pub fn fraction(&self, count: usize) -> f64 {
        if self.denominator == 0 {
            0.0
        } else {
            count as f64 / self.denominator as f64
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementScore {
    pub cell: usize,
    #[serde(rename = "A")]
    pub coverage: f64,
    #[serde(rename = "D_surf")]
    pub d_surf: f64,
    /// `None` when no trajectory is available; the term is then replaced by 1.
    #[serde(rename = "D_traj")]
    pub d_traj: Option<f64>,
    #[serde(rename = "S")]
    pub score: f64,
}

/// `A · D_surf / (D_traj + ε)`, or `A · D_surf` without a trajectory.
pub fn placement_score(coverage: f64, d_surf: f64, d_traj: Option<f64>, epsilon: f64) -> f64 {
    match d_traj {
        Some(d) => coverage * d_surf / (d + epsilon),
        None => coverage * d_surf,
    }
}

impl PlacementScore {
    pub fn new(cell: usize, coverage: f64, d_surf: f64, d_traj: Option<f64>, epsilon: f64) -> Self {
        Self {
            cell,
            coverage,
            d_surf,
            d_traj,
            score: placement_score(coverage, d_surf, d_traj, epsilon),
        }
    }
}

/// One score per candidate, in the table's candidate order.
pub fn score_candidates(
    grid: &CandidateGrid,
    table: &VisibilityTable,
    scene: &SceneModel,
    trajectory: &Trajectory,
    epsilon: f64,
) -> Vec<PlacementScore> {
    let positions: Vec<Vec3> = scene.positions().copied().collect();
    let surface = PointGrid::new(&positions);
    let cams: Vec<Vec3> = trajectory.positions().copied().collect();
    let cam_index = PointGrid::new(&cams);
    table
        .candidates
        .iter()
        .zip(&table.visible)
        .map(|(&cell, vis)| {
            let p = grid.cells[cell].position;
            let d_surf = surface.nearest(&p).map_or(0.0, |(_, d)| d);
            let d_traj = cam_index.nearest(&p).map(|(_, d)| d);
            PlacementScore::new(cell, table.fraction(vis.len()), d_surf, d_traj, epsilon)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectedView {
    pub cell: usize,
    pub pose: CameraPose,
    /// Score after re-scoring against the cells still uncovered at pick time.
    pub score: PlacementScore,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectedViewpoints {
    pub views: Vec<SelectedView>,
    pub coverage_achieved: f64,
    /// False when the loop ran out of cameras or useful candidates first.
    pub target_reached: bool,
    /// Covered fraction after each pick.
    pub coverage_history: Vec<f64>,
}

/// Greedy camera selection with covered-cell re-scoring.
///
/// Each round picks the highest-scoring remaining candidate (ties to the
/// lower cell index), marks it and its visible cells covered, and rescores
/// the rest with `A` counting only uncovered cells over the fixed
/// denominator.
pub fn greedy_select(
    grid: &CandidateGrid,
    table: &VisibilityTable,
    scores: &[PlacementScore],
    coverage_target: f64,
    max_cameras: usize,
    epsilon: f64,
) -> SelectedViewpoints {
    let total = table.candidates.len();
    let mut covered = alloc::vec![false; grid.cells.len()];
    let mut n_covered = 0usize;
    let mut remaining: Vec<bool> = alloc::vec![true; total];
    let mut current: Vec<PlacementScore> = scores.to_vec();
    let mut views = Vec::new();
    let mut history = Vec::new();
    let coverage = |n: usize| if total == 0 { 0.0 } else { n as f64 / total as f64 };

    while views.len() < max_cameras && coverage(n_covered) < coverage_target {
        let mut best: Option<usize> = None;
        for k in 0..total {
            if !remaining[k] || current[k].coverage <= 0.0 {
                continue;
            }
            let better = match best {
                None => true,
                Some(b) => {
                    current[k].score > current[b].score
                        || (current[k].score == current[b].score && current[k].cell < current[b].cell)
                }
            };
            if better {
                best = Some(k);
            }
        }
        let Some(pick) = best else {
            break;
        };
        remaining[pick] = false;
        let cell = table.candidates[pick];
        views.push(SelectedView {
            cell,
            pose: CameraPose::panoramic(grid.cells[cell].position, 0.0),
            score: current[pick],
        });
        for &q in core::iter::once(&(cell as u32)).chain(&table.visible[pick]) {
            if !covered[q as usize] {
                covered[q as usize] = true;
                n_covered += 1;
            }
        }
        history.push(coverage(n_covered));
        for k in 0..total {
            if !remaining[k] {
                continue;
            }
            let uncovered = table.visible[k].iter().filter(|&&q| !covered[q as usize]).count();
            let s = &current[k];
            current[k] = PlacementScore::new(s.cell, table.fraction(uncovered), s.d_surf, s.d_traj, epsilon);
        }
    }
    let coverage_achieved = coverage(n_covered);
    SelectedViewpoints {
        views,
        target_reached: coverage_achieved >= coverage_target,
        coverage_achieved,
        coverage_history: history,
    }
}

/// Grid, visibility, scores, and greedy selection in one call.
pub struct PlacementOutcome {
    pub grid: CandidateGrid,
    pub table: VisibilityTable,
    pub scores: Vec<PlacementScore>,
    pub selection: SelectedViewpoints,
}

pub fn plan_viewpoints(
    scene: &SceneModel,
    floor: &FloorPlane,
    trajectory: &Trajectory,
    params: &PlacementParams,
) -> Result<PlacementOutcome, PlacementError> {
    let grid = build_candidate_grid(scene, floor, trajectory, params)?;
    let table = VisibilityTable::compute(&grid, params.r_max);
    let scores = score_candidates(&grid, &table, scene, trajectory, params.epsilon);
    let selection = greedy_select(
        &grid,
        &table,
        &scores,
        params.coverage_target,
        params.max_cameras,
        params.epsilon,
    );
    Ok(PlacementOutcome {
        grid,
        table,
        scores,
        selection,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::ScenePoint;
    use alloc::vec;

    fn flat_floor() -> FloorPlane {
        FloorPlane {
            normal: Vec3::z(),
            offset: 0.0,
            inlier_indices: vec![],
            inlier_count: 0,
        }
    }

    fn floor_square(size: f64, step: f64) -> Vec<ScenePoint> {
        let n = (size / step).round() as usize;
        let mut pts = Vec::new();
        for i in 0..=n {
            for j in 0..=n {
                pts.push(ScenePoint::new(
                    Vec3::new(i as f64 * step, j as f64 * step, 0.0),
                    [0; 3],
                    0,
                    0,
                ));
            }
        }
        pts
    }

    #[test]
    fn score_arithmetic() {
        let s = placement_score(0.8, 1.5, Some(0.5), 1e-3);
        assert!((s - 0.8 * 1.5 / 0.501).abs() < 1e-15);
        assert!((s - 2.395_209_580_838_323).abs() < 1e-12);
        assert_eq!(placement_score(0.0, 3.0, Some(0.2), 1e-3), 0.0);
        assert!((placement_score(0.5, 2.0, Some(0.0), 1e-3) - 1000.0).abs() < 1e-9);
        assert_eq!(placement_score(0.5, 2.0, None, 1e-3), 1.0);
    }

    #[test]
    fn hull_of_square_with_interior_points() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5], [0.5, 0.0]];
        let hull = convex_hull(&pts);
        assert_eq!(hull.len(), 4);
        assert!(point_in_convex(&hull, [0.5, 0.5], 1e-9));
        assert!(point_in_convex(&hull, [1.0, 0.3], 1e-9));
        assert!(!point_in_convex(&hull, [1.01, 0.3], 1e-9));
    }

    #[test]
    fn empty_square_room_grid() {
        let scene = SceneModel::new(floor_square(4.0, 0.05), vec![], None).unwrap();
        let grid = build_candidate_grid(
            &scene,
            &flat_floor(),
            &Trajectory::default(),
            &PlacementParams::default(),
        )
        .unwrap();
        assert_eq!(grid.cells.len(), 41 * 41);
        assert!((grid.camera_height - 1.5).abs() < 1e-12);
        assert_eq!(grid.unoccupied_count(), 41 * 41);
    }

    #[test]
    fn single_point_hull_is_degenerate() {
        let scene = SceneModel::new(vec![ScenePoint::new(Vec3::zeros(), [0; 3], 0, 0)], vec![], None).unwrap();
        let err = build_candidate_grid(
            &scene,
            &flat_floor(),
            &Trajectory::default(),
            &PlacementParams::default(),
        )
        .unwrap_err();
        assert_eq!(err, PlacementError::DegenerateHull { distinct: 1 });
    }

    #[test]
    fn zero_radius_has_no_coverage() {
        let scene = SceneModel::new(floor_square(1.0, 0.05), vec![], None).unwrap();
        let grid = build_candidate_grid(
            &scene,
            &flat_floor(),
            &Trajectory::default(),
            &PlacementParams::default(),
        )
        .unwrap();
        let c = ray_coverage(&grid, 0, 0.0);
        assert_eq!(c.fraction, 0.0);
        assert!(c.visible.is_empty());
    }

    #[test]
    fn open_room_coverage_counts_cells_within_radius() {
        let scene = SceneModel::new(floor_square(2.0, 0.05), vec![], None).unwrap();
        let params = PlacementParams {
            spacing: 0.2,
            ..Default::default()
        };
        let grid = build_candidate_grid(&scene, &flat_floor(), &Trajectory::default(), &params).unwrap();
        let center = grid.cell_at(5, 5).unwrap();
        let r = 0.7;
        let c = ray_coverage(&grid, center, r);
        let expected = grid
            .cells
            .iter()
            .enumerate()
            .filter(|(i, q)| *i != center && (q.position - grid.cells[center].position).norm() <= r)
            .count();
        assert_eq!(c.visible.len(), expected);
        assert!((c.fraction - expected as f64 / (grid.cells.len() - 1) as f64).abs() < 1e-15);
    }

    #[test]
    fn fully_visible_room_needs_one_camera() {
        let scene = SceneModel::new(floor_square(2.0, 0.05), vec![], None).unwrap();
        let params = PlacementParams {
            spacing: 0.25,
            r_max: 10.0,
            ..Default::default()
        };
        let out = plan_viewpoints(&scene, &flat_floor(), &Trajectory::default(), &params).unwrap();
        assert_eq!(out.selection.views.len(), 1);
        assert!(out.selection.target_reached);
        assert_eq!(out.selection.coverage_achieved, 1.0);
    }

    #[test]
    fn dda_blocks_on_filled_voxel() {
        let mut occ = Occupancy::new(Vec3::zeros(), 1.0, [5, 5, 1]);
        occ.fill_point(&Vec3::new(2.5, 2.5, 0.5));
        assert!(!occ.segment_clear(&Vec3::new(0.5, 2.5, 0.5), &Vec3::new(4.5, 2.5, 0.5)));
        assert!(occ.segment_clear(&Vec3::new(0.5, 0.5, 0.5), &Vec3::new(4.5, 0.5, 0.5)));
        assert!(!occ.segment_clear(&Vec3::new(0.5, 0.7, 0.5), &Vec3::new(4.5, 4.2, 0.5)));
    }
}
