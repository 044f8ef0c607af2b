//! Multi-view lifting of 2D boxes into a 3D axis-aligned box.
//!
//! Each view's box is turned into a pixel mask and unprojected with the
//! view's range raster. The view whose points best re-project onto the other
//! views' boxes is the anchor; all points are merged, outliers removed, and
//! the survivors that land inside the anchor box give the final AABB.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{tight_box_on_ring, Box3D, PixelBox, Vec3};
use crate::grounder::instance_box;
use crate::panorama::{unproject_pixel, PanoramaBundle};
use crate::spatial::PointGrid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AggError {
    #[error("every view has an absent box")]
    AllViewsEmpty,
    #[error("no points survived filtering and the best view has no points")]
    EmptyAfterFilter,
    #[error("no matches to vote on")]
    NoMatches,
    #[error("no proposals to match against")]
    NoProposals,
    #[error("box ({x1},{y1},{x2},{y2}) outside the panorama")]
    BoxOutOfBounds { x1: u32, y1: u32, x2: u32, y2: u32 },
    #[error("mask provider unreachable: {0}")]
    ProviderTransport(String),
    #[error("mask provider failed: {0}")]
    Provider(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggParams {
    pub k: usize,
    pub std: f64,
    pub tau_d: f64,
    pub tau_o: f64,
    /// Test occlusion when projecting points into other views.
    pub occlusion_check: bool,
}

impl Default for AggParams {
    fn default() -> Self {
        Self {
            k: 16,
            std: 2.0,
            tau_d: 0.25,
            tau_o: 0.05,
            occlusion_check: true,
        }
    }
}

/// Turns a box prompt into a pixel mask.
pub trait MaskProvider: Sync {
    fn mask(&self, bundle: &PanoramaBundle, b: &PixelBox) -> Result<Vec<(u32, u32)>, AggError>;
}

/// Box-interior pixels whose range lies within `tau_d` of the interior median.
#[derive(Clone, Copy, Debug)]
pub struct DepthMedianMask {
    pub tau_d: f64,
}

impl MaskProvider for DepthMedianMask {
    fn mask(&self, bundle: &PanoramaBundle, b: &PixelBox) -> Result<Vec<(u32, u32)>, AggError> {
        let mut depths: Vec<f32> = box_pixels(b)
            .map(|(u, v)| bundle.range_at(u, v))
            .filter(|&r| r > 0.0)
            .collect();
        if depths.is_empty() {
            return Ok(Vec::new());
        }
        depths.sort_by(f32::total_cmp);
        let median = f64::from(depths[(depths.len() - 1) / 2]);
        Ok(box_pixels(b)
            .filter(|&(u, v)| {
                let r = f64::from(bundle.range_at(u, v));
                r > 0.0 && (r - median).abs() <= self.tau_d
            })
            .collect())
    }
}

/// Box-interior pixels carrying the target instance id.
#[derive(Clone, Copy, Debug)]
pub struct InstanceMask {
    pub instance: u32,
}

impl MaskProvider for InstanceMask {
    fn mask(&self, bundle: &PanoramaBundle, b: &PixelBox) -> Result<Vec<(u32, u32)>, AggError> {
        Ok(box_pixels(b)
            .filter(|&(u, v)| bundle.instance_at(u, v) == self.instance && bundle.range_at(u, v) > 0.0)
            .collect())
    }
}

fn box_pixels(b: &PixelBox) -> impl Iterator<Item = (u32, u32)> {
    let b = *b;
    (b.y1..=b.y2).flat_map(move |v| (b.x1..=b.x2).map(move |u| (u, v)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LiftedPrediction {
    pub view_id: u32,
    pub pixel_box: PixelBox,
    pub mask: Vec<(u32, u32)>,
    pub points: Vec<Vec3>,
}

pub fn lift_box<M: MaskProvider + ?Sized>(
    bundle: &PanoramaBundle,
    view_id: u32,
    b: &PixelBox,
    provider: &M,
) -> Result<LiftedPrediction, AggError> {
    if b.x2 >= bundle.width || b.y2 >= bundle.height || b.x1 > b.x2 || b.y1 > b.y2 {
        return Err(AggError::BoxOutOfBounds {
            x1: b.x1,
            y1: b.y1,
            x2: b.x2,
            y2: b.y2,
        });
    }
    let mut mask = provider.mask(bundle, b)?;
    mask.retain(|&(u, v)| u < bundle.width && v < bundle.height && bundle.range_at(u, v) > 0.0);
    let points = mask
        .iter()
        .map(|&(u, v)| unproject_pixel(bundle, u, v).expect("masked pixel has depth"))
        .collect();
    Ok(LiftedPrediction {
        view_id,
        pixel_box: *b,
        mask,
        points,
    })
}

/// Whether a point at range `r` landing on `(u, v)` is hidden in `bundle`.
fn occluded(bundle: &PanoramaBundle, u: u32, v: u32, r: f64, tau_o: f64) -> bool {
    let target = f64::from(bundle.range_at(u, v));
    target > 0.0 && r > target + tau_o
}

/// Whether the point is hidden by something other than the target itself:
/// pixels in `own` (the target's mask in that view) never occlude.
fn hidden_by_other(
    bundle: &PanoramaBundle,
    (u, v, r): (u32, u32, f64),
    tau_o: Option<f64>,
    own: Option<&BTreeSet<(u32, u32)>>,
) -> bool {
    tau_o.is_some_and(|t| occluded(bundle, u, v, r, t)) && !own.is_some_and(|m| m.contains(&(u, v)))
}

/// Tight box around the pixels that `points` project to in `target`; points
/// hidden behind the target's range raster are skipped when `tau_o` is set.
pub fn project_points_box(points: &[Vec3], target: &PanoramaBundle, tau_o: Option<f64>) -> Option<PixelBox> {
    project_points_box_masked(points, target, tau_o, None)
}

/// [`project_points_box`] where pixels of `own` (the target's mask in the
/// target view) do not count as occluders.
pub fn project_points_box_masked(
    points: &[Vec3],
    target: &PanoramaBundle,
    tau_o: Option<f64>,
    own: Option<&BTreeSet<(u32, u32)>>,
) -> Option<PixelBox> {
    let pixels: Vec<(u32, u32)> = points
        .iter()
        .filter_map(|p| target.project_pixel(p))
        .filter(|&hit| !hidden_by_other(target, hit, tau_o, own))
        .map(|(u, v, _)| (u, v))
        .collect();
    tight_box_on_ring(pixels.iter().copied(), target.width)
}

/// One view's inputs to aggregation.
#[derive(Clone, Copy, Debug)]
pub struct ViewInput<'a> {
    pub view_id: u32,
    pub bundle: &'a PanoramaBundle,
    pub pred_box: Option<PixelBox>,
}

/// Cross-view consistency score of every eligible view, by view id.
pub fn consistency_scores(
    views: &[ViewInput<'_>],
    lifted: &[Option<LiftedPrediction>],
    tau_o: Option<f64>,
) -> BTreeMap<u32, f64> {
    let masks: Vec<Option<BTreeSet<(u32, u32)>>> = lifted
        .iter()
        .map(|l| l.as_ref().map(|l| l.mask.iter().copied().collect()))
        .collect();
    let mut scores = BTreeMap::new();
    for (s, ls) in lifted.iter().enumerate() {
        let Some(ls) = ls else { continue };
        let mut score = 0.0;
        for (t, vt) in views.iter().enumerate() {
            if t == s {
                continue;
            }
            let Some(bt) = vt.pred_box else { continue };
            if let Some(proj) = project_points_box_masked(&ls.points, vt.bundle, tau_o, masks[t].as_ref()) {
                score += proj.iou(&bt);
            }
        }
        scores.insert(views[s].view_id, score);
    }
    scores
}

/// View whose lifted points agree best with the other views' boxes; ties go
/// to the lowest view id.
pub fn best_view(
    views: &[ViewInput<'_>],
    lifted: &[Option<LiftedPrediction>],
    tau_o: Option<f64>,
) -> Result<u32, AggError> {
    let scores = consistency_scores(views, lifted, tau_o);
    let mut best: Option<(u32, f64)> = None;
    for (&id, &s) in &scores {
        if best.is_none_or(|(_, bs)| s > bs) {
            best = Some((id, s));
        }
    }
    best.map(|(id, _)| id).ok_or(AggError::AllViewsEmpty)
}

/// Indices of points kept by statistical outlier removal: mean distance to
/// the `k` nearest neighbors must not exceed `μ + std·σ` over the cloud.
pub fn statistical_outlier_removal(points: &[Vec3], k: usize, std: f64) -> Vec<usize> {
    let n = points.len();
    let k = k.min(n.saturating_sub(1));
    if k == 0 {
        return (0..n).collect();
    }
    let grid = PointGrid::new(points);
    let mean_d: Vec<f64> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let nn = grid.k_nearest(p, k, Some(i));
            nn.iter().map(|(_, d)| d).sum::<f64>() / nn.len() as f64
        })
        .collect();
    let mu = mean_d.iter().sum::<f64>() / n as f64;
    let var = mean_d.iter().map(|d| (d - mu) * (d - mu)).sum::<f64>() / n as f64;
    let limit = mu + std * var.sqrt();
    (0..n).filter(|&i| mean_d[i] <= limit).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FuseOutcome {
    pub box3d: Box3D,
    pub fallback_used: bool,
    pub points_merged: usize,
    pub points_kept: usize,
}

pub fn fuse(
    views: &[ViewInput<'_>],
    lifted: &[Option<LiftedPrediction>],
    best: u32,
    params: &AggParams,
) -> Result<FuseOutcome, AggError> {
    let s = views
        .iter()
        .position(|v| v.view_id == best)
        .ok_or(AggError::AllViewsEmpty)?;
    let anchor = &views[s];
    let anchor_box = anchor.pred_box.ok_or(AggError::AllViewsEmpty)?;
    let merged: Vec<Vec3> = lifted.iter().flatten().flat_map(|l| l.points.iter().copied()).collect();
    let kept = statistical_outlier_removal(&merged, params.k, params.std);
    let tau_o = params.occlusion_check.then_some(params.tau_o);
    // Hidden only by the anchor's own masked surface means hidden by the
    // target itself, which does not count as occlusion.
    let own_mask: BTreeSet<(u32, u32)> = lifted[s].iter().flat_map(|l| l.mask.iter().copied()).collect();
    let visible: Vec<Vec3> = kept
        .iter()
        .map(|&i| merged[i])
        .filter(|p| {
            anchor.bundle.project_pixel(p).is_some_and(|hit| {
                anchor_box.contains(hit.0, hit.1) && !hidden_by_other(anchor.bundle, hit, tau_o, Some(&own_mask))
            })
        })
        .collect();
    if let Some(b) = Box3D::from_points(visible.iter()) {
        return Ok(FuseOutcome {
            box3d: b,
            fallback_used: false,
            points_merged: merged.len(),
            points_kept: visible.len(),
        });
    }
    let own = lifted[s].as_ref().map(|l| l.points.as_slice()).unwrap_or(&[]);
    Box3D::from_points(own.iter())
        .map(|b| FuseOutcome {
            box3d: b,
            fallback_used: true,
            points_merged: merged.len(),
            points_kept: own.len(),
        })
        .ok_or(AggError::EmptyAfterFilter)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateOutcome {
    pub best_view: u32,
    pub box3d: Box3D,
    pub fallback_used: bool,
    pub scores: BTreeMap<u32, f64>,
}

/// Lift, pick the best view, and fuse for one query.
pub fn aggregate<M: MaskProvider + ?Sized>(
    views: &[ViewInput<'_>],
    provider: &M,
    params: &AggParams,
) -> Result<AggregateOutcome, AggError> {
    let lifted: Vec<Option<LiftedPrediction>> = views
        .iter()
        .map(|v| {
            v.pred_box
                .map(|b| lift_box(v.bundle, v.view_id, &b, provider))
                .transpose()
        })
        .collect::<Result<_, _>>()?;
    let tau_o = params.occlusion_check.then_some(params.tau_o);
    let scores = consistency_scores(views, &lifted, tau_o);
    let best = best_view(views, &lifted, tau_o)?;
    let fused = fuse(views, &lifted, best, params)?;
    Ok(AggregateOutcome {
        best_view: best,
        box3d: fused.box3d,
        fallback_used: fused.fallback_used,
        scores,
    })
}

/// Candidate instance for the two-stage variant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub instance_id: u32,
    pub aabb: Box3D,
    pub class_id: u32,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProposalMatch {
    pub instance_id: u32,
    pub iou: f64,
    pub low_confidence: bool,
}

/// Proposal whose rendered tight box best overlaps `pred_box`; ties go to
/// the smaller instance id and zero overlap is flagged low-confidence.
pub fn match_two_stage(
    pred_box: &PixelBox,
    bundle: &PanoramaBundle,
    proposals: &[Proposal],
) -> Result<ProposalMatch, AggError> {
    let mut sorted: Vec<&Proposal> = proposals.iter().collect();
    sorted.sort_by_key(|p| p.instance_id);
    let mut best: Option<(u32, f64)> = None;
    for p in sorted {
        let iou = instance_box(bundle, p.instance_id).map_or(0.0, |b| b.iou(pred_box));
        if best.is_none_or(|(_, bi)| iou > bi) {
            best = Some((p.instance_id, iou));
        }
    }
    let (instance_id, iou) = best.ok_or(AggError::NoProposals)?;
    Ok(ProposalMatch {
        instance_id,
        iou,
        low_confidence: iou <= 0.0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteMode {
    Majority,
    VisibilityWeighted,
}

/// Votes over `(view_id, instance_id)` matches; ties go to the smaller id.
pub fn vote(matches: &[(u32, u32)], mode: VoteMode, visibility: &BTreeMap<(u32, u32), f64>) -> Result<u32, AggError> {
    let mut tally: BTreeMap<u32, f64> = BTreeMap::new();
    for &(view, inst) in matches {
        let w = match mode {
            VoteMode::Majority => 1.0,
            VoteMode::VisibilityWeighted => visibility.get(&(view, inst)).copied().unwrap_or(0.0),
        };
        *tally.entry(inst).or_insert(0.0) += w;
    }
    let mut best: Option<(u32, f64)> = None;
    for (&id, &w) in &tally {
        if best.is_none_or(|(_, bw)| w > bw) {
            best = Some((id, w));
        }
    }
    best.map(|(id, _)| id).ok_or(AggError::NoMatches)
}

/// Fraction of `points` that are in view and unoccluded in `bundle`.
pub fn visibility_fraction(points: &[Vec3], bundle: &PanoramaBundle, tau_o: f64) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let seen = points
        .iter()
        .filter_map(|p| bundle.project_pixel(p))
        .filter(|&(u, v, r)| bundle.range_at(u, v) > 0.0 && !occluded(bundle, u, v, r, tau_o))
        .count();
    seen as f64 / points.len() as f64
}
