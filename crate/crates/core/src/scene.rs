//! The immutable world: labeled points, optional triangles, optional per-point
//! semantic features, and the raw capture trajectory.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use thiserror::Error;

use crate::geom::{Box3D, Mat3, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("malformed header: {0}")]
    MalformedHeader(alloc::string::String),
    #[error("truncated scene data: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("triangle {triangle} references vertex {index} but scene has {n_points} points")]
    IndexOutOfRange {
        triangle: usize,
        index: u32,
        n_points: usize,
    },
    #[error("point {index} has a non-finite coordinate")]
    NonFiniteCoordinate { index: usize },
    #[error("feature vector {index} has dimension {found}, expected {expected}")]
    FeatureDimMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("feature field has {found} vectors for {expected} points")]
    FeatureCountMismatch { expected: usize, found: usize },
    #[error("pose {index}: rotation is not orthonormal with determinant +1 (residual {residual:e}, det {det})")]
    NotOrthonormal { index: usize, residual: f64, det: f64 },
    #[error("pose {index} has a non-finite field")]
    NonFinitePose { index: usize },
    #[error("trajectory is empty but distance-to-trajectory scoring was requested")]
    EmptyTrajectory,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScenePoint {
    pub position: Vec3,
    pub color: [u8; 3],
    /// 0 is reserved for unlabeled background.
    pub instance_id: u32,
    pub class_id: u32,
}

impl ScenePoint {
    pub fn new(position: Vec3, color: [u8; 3], instance_id: u32, class_id: u32) -> Self {
        Self {
            position,
            color,
            instance_id,
            class_id,
        }
    }
}

/// Per-point feature vectors stored densely (`n_points × dim`).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureField {
    dim: usize,
    values: Vec<f32>,
}

impl FeatureField {
    pub fn zeros(n_points: usize, dim: usize) -> Self {
        Self {
            dim,
            values: alloc::vec![0.0; n_points * dim],
        }
    }

    /// Builds a field from ragged input, checking that all vectors share one dimension.
    pub fn from_vectors(vectors: &[Vec<f32>]) -> Result<Self, SceneError> {
        let dim = vectors.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(vectors.len() * dim);
        for (index, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(SceneError::FeatureDimMismatch {
                    index,
                    expected: dim,
                    found: v.len(),
                });
            }
            values.extend_from_slice(v);
        }
        Ok(Self { dim, values })
    }

    pub fn from_flat(dim: usize, values: Vec<f32>) -> Self {
        Self { dim, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneModel {
    points: Vec<ScenePoint>,
    triangles: Vec<[u32; 3]>,
    features: Option<FeatureField>,
    bounds: Option<Box3D>,
}

impl SceneModel {
    /// Validates and assembles a scene.
    pub fn new(
        points: Vec<ScenePoint>,
        triangles: Vec<[u32; 3]>,
        features: Option<FeatureField>,
    ) -> Result<Self, SceneError> {
        for (index, p) in points.iter().enumerate() {
            if !p.position.iter().all(|c| c.is_finite()) {
                return Err(SceneError::NonFiniteCoordinate { index });
            }
        }
        for (triangle, tri) in triangles.iter().enumerate() {
            for &index in tri {
                if index as usize >= points.len() {
                    return Err(SceneError::IndexOutOfRange {
                        triangle,
                        index,
                        n_points: points.len(),
                    });
                }
            }
        }
        if let Some(f) = &features {
            if f.dim() > 0 && f.len() != points.len() {
                return Err(SceneError::FeatureCountMismatch {
                    expected: points.len(),
                    found: f.len(),
                });
            }
        }
        let bounds = Box3D::from_points(points.iter().map(|p| &p.position));
        Ok(Self {
            points,
            triangles,
            features,
            bounds,
        })
    }

    pub fn points(&self) -> &[ScenePoint] {
        &self.points
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn features(&self) -> Option<&FeatureField> {
        self.features.as_ref()
    }

    /// `None` for an empty scene.
    pub fn bounds(&self) -> Option<Box3D> {
        self.bounds
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn positions(&self) -> impl Iterator<Item = &Vec3> + '_ {
        self.points.iter().map(|p| &p.position)
    }

    /// Returns a copy with the feature field replaced.
    pub fn with_features(&self, features: FeatureField) -> Result<Self, SceneError> {
        Self::new(self.points.clone(), self.triangles.clone(), Some(features))
    }

    /// Tight box over the points carrying `instance_id`.
    pub fn instance_box(&self, instance_id: u32) -> Option<Box3D> {
        Box3D::from_points(
            self.points
                .iter()
                .filter(|p| p.instance_id == instance_id)
                .map(|p| &p.position),
        )
    }

    /// Class of the first point carrying `instance_id`.
    pub fn instance_class(&self, instance_id: u32) -> Option<u32> {
        self.points
            .iter()
            .find(|p| p.instance_id == instance_id)
            .map(|p| p.class_id)
    }

    /// Sorted `(instance_id, class_id)` pairs for every labeled instance.
    pub fn instances(&self) -> alloc::collections::BTreeMap<u32, u32> {
        let mut out = alloc::collections::BTreeMap::new();
        for p in &self.points {
            if p.instance_id != 0 {
                out.entry(p.instance_id).or_insert(p.class_id);
            }
        }
        out
    }
}

/// Rigid camera pose; `rotation` maps camera-frame vectors to world frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose {
    pub position: Vec3,
    pub rotation: Mat3,
    pub yaw_only: bool,
}

impl CameraPose {
    pub const ORTHONORMAL_TOL: f64 = 1e-9;

    pub fn new(position: Vec3, rotation: Mat3) -> Result<Self, SceneError> {
        Self::validated(position, rotation, 0)
    }

    fn validated(position: Vec3, rotation: Mat3, index: usize) -> Result<Self, SceneError> {
        if !position.iter().chain(rotation.iter()).all(|c| c.is_finite()) {
            return Err(SceneError::NonFinitePose { index });
        }
        let residual = (rotation.transpose() * rotation - Mat3::identity())
            .iter()
            .fold(0.0f64, |m, c| m.max(c.abs()));
        let det = rotation.determinant();
        if residual > Self::ORTHONORMAL_TOL || (det - 1.0).abs() > Self::ORTHONORMAL_TOL {
            return Err(SceneError::NotOrthonormal { index, residual, det });
        }
        let yaw_only = (rotation[(2, 2)] - 1.0).abs() <= Self::ORTHONORMAL_TOL;
        Ok(Self {
            position,
            rotation,
            yaw_only,
        })
    }

    /// Panoramic camera rotated by `yaw` radians about world +z.
    pub fn panoramic(position: Vec3, yaw: f64) -> Self {
        Self {
            position,
            rotation: yaw_rotation(yaw),
            yaw_only: true,
        }
    }
}

pub fn yaw_rotation(yaw: f64) -> Mat3 {
    let (s, c) = yaw.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Pinhole intrinsics of a raw capture view.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

/// A raw capture view. Camera frame: +x right, +y down, +z forward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryView {
    pub pose: CameraPose,
    pub intrinsics: Intrinsics,
}

impl TrajectoryView {
    /// Projects a world point; returns `(u, v, depth)` with depth along the
    /// optical axis, or `None` behind the camera.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64, f64)> {
        let c = self.pose.rotation.transpose() * (p - self.pose.position);
        if c.z <= 1e-9 {
            return None;
        }
        let k = &self.intrinsics;
        Some((k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy, c.z))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    views: Vec<TrajectoryView>,
}

impl Trajectory {
    /// Validates every pose's rotation.
    pub fn new(views: Vec<TrajectoryView>) -> Result<Self, SceneError> {
        for (i, v) in views.iter().enumerate() {
            CameraPose::validated(v.pose.position, v.pose.rotation, i)?;
        }
        Ok(Self { views })
    }

    pub fn views(&self) -> &[TrajectoryView] {
        &self.views
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    /// Fails when the trajectory cannot support distance-to-trajectory scoring.
    pub fn require_non_empty(&self) -> Result<(), SceneError> {
        if self.is_empty() {
            Err(SceneError::EmptyTrajectory)
        } else {
            Ok(())
        }
    }

    pub fn positions(&self) -> impl Iterator<Item = &Vec3> + '_ {
        self.views.iter().map(|v| &v.pose.position)
    }

    pub fn mean_height(&self) -> Option<f64> {
        if self.is_empty() {
            return None;
        }
        Some(self.positions().map(|p| p.z).sum::<f64>() / self.len() as f64)
    }
}

/// Validates a rotation for pose `index` without constructing a trajectory.
pub fn validate_pose(index: usize, position: Vec3, rotation: Mat3) -> Result<CameraPose, SceneError> {
    CameraPose::validated(position, rotation, index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn pt(x: f64, y: f64, z: f64) -> ScenePoint {
        ScenePoint::new(Vec3::new(x, y, z), [0, 0, 0], 0, 0)
    }

    #[test]
    fn bounds_equal_point_extents() {
        let s = SceneModel::new(
            vec![pt(0.0, 1.0, 2.0), pt(-1.0, 0.5, 3.0), pt(2.0, -4.0, 0.0)],
            vec![],
            None,
        )
        .unwrap();
        let b = s.bounds().unwrap();
        assert_eq!(b.min, [-1.0, -4.0, 0.0]);
        assert_eq!(b.max, [2.0, 1.0, 3.0]);
    }

    #[test]
    fn triangle_index_out_of_range() {
        let err = SceneModel::new(
            vec![pt(0.0, 0.0, 0.0), pt(1.0, 0.0, 0.0), pt(0.0, 1.0, 0.0)],
            vec![[0, 1, 99]],
            None,
        )
        .unwrap_err();
        assert!(matches!(err, SceneError::IndexOutOfRange { index: 99, .. }));
    }

    #[test]
    fn mixed_feature_dims_rejected() {
        let err = FeatureField::from_vectors(&[vec![1.0, 2.0], vec![1.0]]).unwrap_err();
        assert!(matches!(err, SceneError::FeatureDimMismatch { index: 1, .. }));
    }

    #[test]
    fn non_finite_rejected() {
        let err = SceneModel::new(vec![pt(f64::NAN, 0.0, 0.0)], vec![], None).unwrap_err();
        assert_eq!(err, SceneError::NonFiniteCoordinate { index: 0 });
    }

    #[test]
    fn reflection_is_not_a_rotation() {
        let m = Mat3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(
            CameraPose::new(Vec3::zeros(), m),
            Err(SceneError::NotOrthonormal { .. })
        ));
        assert!(CameraPose::new(Vec3::zeros(), yaw_rotation(0.3)).unwrap().yaw_only);
    }

    #[test]
    fn empty_trajectory_flagged_only_on_request() {
        let t = Trajectory::new(vec![]).unwrap();
        assert_eq!(t.require_non_empty(), Err(SceneError::EmptyTrajectory));
        assert_eq!(t.mean_height(), None);
    }
}
