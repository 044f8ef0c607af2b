//! Equirectangular (ERP) projection and multi-modal panorama rendering.
//!
//! Pixel convention, shared by every module: integer `(u, v)` addresses a
//! pixel whose center direction is
//!
//! ```text
//! θ = 2π(u + 0.5)/W − π      azimuth, 0 at +x before yaw
//! φ = π/2 − π(v + 0.5)/H     elevation, +z up
//! d = R_z(yaw) · (cos φ cos θ, cos φ sin θ, sin φ)
//! ```
//!
//! so continuous coordinates span `u ∈ [−0.5, W − 0.5)` and
//! `v ∈ [−0.5, H − 0.5]`.

use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI, TAU};
#[allow(unused_imports)]
use num_traits::Float;
use thiserror::Error;

use crate::geom::Vec3;
use crate::scene::{CameraPose, FeatureField, SceneModel, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PanoramaError {
    #[error("pixel ({u}, {v}) outside a {width}x{height} panorama")]
    PixelOutOfRange { u: f64, v: f64, width: u32, height: u32 },
    #[error("no depth at pixel ({u}, {v})")]
    NoDepth { u: u32, v: u32 },
    #[error("feature dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{rasters} feature rasters for {views} trajectory views")]
    ViewCountMismatch { rasters: usize, views: usize },
    #[error("scene has no feature field")]
    MissingField,
}

/// World direction of continuous pixel `(u, v)`.
pub fn pixel_to_direction(u: f64, v: f64, width: u32, height: u32, yaw: f64) -> Result<Vec3, PanoramaError> {
    let (w, h) = (f64::from(width), f64::from(height));
    if !(u >= -0.5 && u < w && v >= -0.5 && v <= h - 0.5) {
        return Err(PanoramaError::PixelOutOfRange { u, v, width, height });
    }
    let theta = TAU * (u + 0.5) / w - PI + yaw;
    let phi = FRAC_PI_2 - PI * (v + 0.5) / h;
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Ok(Vec3::new(cp * ct, cp * st, sp))
}

/// Continuous pixel of a direction; `u` is wrapped into `[0, W)`.
pub fn direction_to_pixel(d: &Vec3, width: u32, height: u32, yaw: f64) -> (f64, f64) {
    let (w, h) = (f64::from(width), f64::from(height));
    let theta = d.y.atan2(d.x) - yaw;
    let phi = (d.z / d.norm()).clamp(-1.0, 1.0).asin();
    let mut u = (theta + PI) * w / TAU - 0.5;
    u -= w * (u / w).floor();
    if u >= w {
        u = 0.0;
    }
    let v = (FRAC_PI_2 - phi) * h / PI - 0.5;
    (u, v)
}

/// Integer pixel containing continuous coordinate `(u, v)`.
pub fn pixel_index(u: f64, v: f64, width: u32, height: u32) -> (u32, u32) {
    let iu = ((u + 0.5).floor() as i64).rem_euclid(i64::from(width)) as u32;
    let iv = ((v + 0.5).floor() as i64).clamp(0, i64::from(height) - 1) as u32;
    (iu, iv)
}

/// Default point splat radius for a panorama `width` pixels wide.
pub fn default_splat_radius(width: u32) -> u32 {
    ((f64::from(width) / 360.0).round() as u32).max(1)
}

/// Dense `width × height × dim` feature grid, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRaster {
    pub width: u32,
    pub height: u32,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl FeatureRaster {
    pub fn zeros(width: u32, height: u32, dim: usize) -> Self {
        Self {
            width,
            height,
            dim,
            data: alloc::vec![0.0; width as usize * height as usize * dim],
        }
    }

    pub fn constant(width: u32, height: u32, value: &[f32]) -> Self {
        let mut r = Self::zeros(width, height, value.len());
        for chunk in r.data.chunks_mut(value.len().max(1)) {
            chunk.copy_from_slice(value);
        }
        r
    }

    fn offset(&self, u: u32, v: u32) -> usize {
        (v as usize * self.width as usize + u as usize) * self.dim
    }

    pub fn get(&self, u: u32, v: u32) -> &[f32] {
        let o = self.offset(u, v);
        &self.data[o..o + self.dim]
    }

    pub fn get_mut(&mut self, u: u32, v: u32) -> &mut [f32] {
        let o = self.offset(u, v);
        &mut self.data[o..o + self.dim]
    }
}

/// Rendered rasters of one panoramic viewpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct PanoramaBundle {
    pub position: Vec3,
    base_yaw: f64,
    pub width: u32,
    pub height: u32,
    pub rgb: Vec<[u8; 3]>,
    /// Meters; 0 where the ray hit nothing.
    pub range: Vec<f32>,
    /// 0 where the ray hit nothing or unlabeled geometry.
    pub instance: Vec<u32>,
    pub feature: Option<FeatureRaster>,
    pub yaw_shift_applied: i64,
}

impl PanoramaBundle {
    pub fn empty(position: Vec3, yaw: f64, width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Self {
            position,
            base_yaw: yaw,
            width,
            height,
            rgb: alloc::vec![[0; 3]; n],
            range: alloc::vec![0.0; n],
            instance: alloc::vec![0; n],
            feature: None,
            yaw_shift_applied: 0,
        }
    }

    /// Current yaw, accounting for applied column shifts.
    pub fn yaw(&self) -> f64 {
        let w = i64::from(self.width);
        let k = self.yaw_shift_applied.rem_euclid(w);
        if k == 0 {
            self.base_yaw
        } else {
            self.base_yaw - TAU * k as f64 / f64::from(self.width)
        }
    }

    pub fn pose(&self) -> CameraPose {
        CameraPose::panoramic(self.position, self.yaw())
    }

    pub fn index(&self, u: u32, v: u32) -> usize {
        v as usize * self.width as usize + u as usize
    }

    pub fn range_at(&self, u: u32, v: u32) -> f32 {
        self.range[self.index(u, v)]
    }

    pub fn instance_at(&self, u: u32, v: u32) -> u32 {
        self.instance[self.index(u, v)]
    }

    pub fn direction(&self, u: f64, v: f64) -> Result<Vec3, PanoramaError> {
        pixel_to_direction(u, v, self.width, self.height, self.yaw())
    }

    /// Continuous pixel and range of a world point seen from this viewpoint.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64, f64)> {
        let d = p - self.position;
        let r = d.norm();
        if r < 1e-12 {
            return None;
        }
        let (u, v) = direction_to_pixel(&(d / r), self.width, self.height, self.yaw());
        Some((u, v, r))
    }

    /// Integer pixel and range of a world point.
    pub fn project_pixel(&self, p: &Vec3) -> Option<(u32, u32, f64)> {
        self.project(p).map(|(u, v, r)| {
            let (iu, iv) = pixel_index(u, v, self.width, self.height);
            (iu, iv, r)
        })
    }

    /// Pixels with a depth hit.
    pub fn hit_pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.height)
            .flat_map(move |v| (0..self.width).map(move |u| (u, v)))
            .filter(move |&(u, v)| self.range_at(u, v) > 0.0)
    }
}

/// World point seen at pixel `(u, v)`.
pub fn unproject_pixel(bundle: &PanoramaBundle, u: u32, v: u32) -> Result<Vec3, PanoramaError> {
    if u >= bundle.width || v >= bundle.height {
        return Err(PanoramaError::PixelOutOfRange {
            u: f64::from(u),
            v: f64::from(v),
            width: bundle.width,
            height: bundle.height,
        });
    }
    let r = bundle.range_at(u, v);
    if r <= 0.0 {
        return Err(PanoramaError::NoDepth { u, v });
    }
    let d = bundle.direction(f64::from(u), f64::from(v))?;
    Ok(bundle.position + d * f64::from(r))
}

/// Circularly shifts every raster `k` columns to the right; the yaw is
/// adjusted so each pixel keeps seeing the same world point.
pub fn yaw_shift(bundle: &PanoramaBundle, k: i64) -> PanoramaBundle {
    let w = bundle.width as usize;
    let shift = k.rem_euclid(i64::from(bundle.width)) as usize;
    let mut out = bundle.clone();
    out.yaw_shift_applied = bundle.yaw_shift_applied + k;
    if shift == 0 {
        return out;
    }
    for v in 0..bundle.height as usize {
        let row = v * w..(v + 1) * w;
        out.rgb[row.clone()].rotate_right(shift);
        out.range[row.clone()].rotate_right(shift);
        out.instance[row].rotate_right(shift);
    }
    if let Some(f) = &bundle.feature {
        // Feature cells are coarser than pixels; shift by the nearest whole cell.
        let cells = ((k as f64) * f64::from(f.width) / f64::from(bundle.width)).round() as i64;
        let cshift = cells.rem_euclid(i64::from(f.width)) as usize * f.dim;
        let mut g = f.clone();
        let row_len = f.width as usize * f.dim;
        for row in g.data.chunks_mut(row_len) {
            row.rotate_right(cshift);
        }
        out.feature = Some(g);
    }
    out
}

/// Options for [`render_panorama`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    pub width: u32,
    pub height: u32,
    /// Point splat radius in pixels; `None` uses [`default_splat_radius`].
    pub splat_radius: Option<u32>,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            width: 490,
            height: 490,
            splat_radius: None,
        }
    }
}

/// Renders RGB, range, and instance rasters from `position` at `yaw`.
///
/// Scenes with triangles are ray cast against the mesh (nearest hit, flat
/// attributes from the vertex-majority instance); point-only scenes are
/// splatted with a z-test.
pub fn render_panorama(scene: &SceneModel, position: Vec3, yaw: f64, opts: &RenderOptions) -> PanoramaBundle {
    let mut bundle = PanoramaBundle::empty(position, yaw, opts.width, opts.height);
    if scene.triangles().is_empty() {
        let radius = opts.splat_radius.unwrap_or_else(|| default_splat_radius(opts.width));
        splat_points(scene, &mut bundle, radius);
    } else {
        raycast_triangles(scene, &mut bundle);
    }
    bundle
}

fn splat_points(scene: &SceneModel, bundle: &mut PanoramaBundle, radius: u32) {
    let (w, h) = (i64::from(bundle.width), i64::from(bundle.height));
    let r = i64::from(radius);
    for p in scene.points() {
        let Some((iu, iv, range)) = bundle.project_pixel(&p.position) else {
            continue;
        };
        let range = range as f32;
        for dv in -r..=r {
            let y = i64::from(iv) + dv;
            if y < 0 || y >= h {
                continue;
            }
            for du in -r..=r {
                let x = (i64::from(iu) + du).rem_euclid(w);
                let i = (y * w + x) as usize;
                let cur = bundle.range[i];
                if cur == 0.0 || range < cur {
                    bundle.range[i] = range;
                    bundle.rgb[i] = p.color;
                    bundle.instance[i] = p.instance_id;
                }
            }
        }
    }
}

/// Flat attributes of a triangle: the majority instance among its vertices
/// (first vertex on a three-way split), with color and class from the first
/// vertex carrying that instance.
fn triangle_attributes(scene: &SceneModel, tri: &[u32; 3]) -> ([u8; 3], u32) {
    let pts = scene.points();
    let ids = tri.map(|i| pts[i as usize].instance_id);
    let majority = if ids[1] == ids[2] { ids[1] } else { ids[0] };
    let lead = tri
        .iter()
        .find(|&&i| pts[i as usize].instance_id == majority)
        .copied()
        .unwrap_or(tri[0]);
    (pts[lead as usize].color, majority)
}

/// Möller–Trumbore; returns the hit distance along unit `dir`.
pub fn ray_triangle(origin: &Vec3, dir: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let pv = dir.cross(&e2);
    let det = e1.dot(&pv);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let tv = origin - a;
    let u = tv.dot(&pv) * inv;
    if !(-1e-12..=1.0 + 1e-12).contains(&u) {
        return None;
    }
    let qv = tv.cross(&e1);
    let v = dir.dot(&qv) * inv;
    if v < -1e-12 || u + v > 1.0 + 1e-12 {
        return None;
    }
    let t = e2.dot(&qv) * inv;
    (t > 1e-9).then_some(t)
}

struct TriangleCone {
    verts: [Vec3; 3],
    axis: Vec3,
    cos_half_angle: f64,
    color: [u8; 3],
    instance: u32,
}

fn raycast_triangles(scene: &SceneModel, bundle: &mut PanoramaBundle) {
    let pts = scene.points();
    let origin = bundle.position;
    let cones: Vec<TriangleCone> = scene
        .triangles()
        .iter()
        .map(|tri| {
            let verts = tri.map(|i| pts[i as usize].position);
            let center = (verts[0] + verts[1] + verts[2]) / 3.0;
            let radius = verts.iter().map(|v| (v - center).norm()).fold(0.0, f64::max);
            let to_center = center - origin;
            let dist = to_center.norm();
            let (axis, cos_half_angle) = if dist > radius * (1.0 + 1e-9) {
                let sin = radius / dist;
                (to_center / dist, (1.0 - sin * sin).max(0.0).sqrt() - 1e-9)
            } else {
                (Vec3::z(), -2.0)
            };
            let (color, instance) = triangle_attributes(scene, tri);
            TriangleCone {
                verts,
                axis,
                cos_half_angle,
                color,
                instance,
            }
        })
        .collect();
    for v in 0..bundle.height {
        for u in 0..bundle.width {
            let dir = bundle
                .direction(f64::from(u), f64::from(v))
                .expect("pixel center in range");
            let mut best: Option<(f64, usize)> = None;
            for (k, cone) in cones.iter().enumerate() {
                if dir.dot(&cone.axis) < cone.cos_half_angle {
                    continue;
                }
                if let Some(t) = ray_triangle(&origin, &dir, &cone.verts[0], &cone.verts[1], &cone.verts[2]) {
                    if best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, k));
                    }
                }
            }
            if let Some((t, k)) = best {
                let i = bundle.index(u, v);
                bundle.range[i] = t as f32;
                bundle.rgb[i] = cones[k].color;
                bundle.instance[i] = cones[k].instance;
            }
        }
    }
}

/// Depth clipped to `[0, clip_max]` and min-max normalized over hit pixels;
/// misses stay 0.
pub fn normalized_depth(bundle: &PanoramaBundle, clip_max: f32) -> Vec<f32> {
    let clipped: Vec<f32> = bundle.range.iter().map(|&r| r.min(clip_max)).collect();
    let hits = clipped.iter().copied().filter(|&r| r > 0.0);
    let (lo, hi) = hits.fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), r| (a.min(r), b.max(r)));
    clipped
        .iter()
        .map(|&r| {
            if r <= 0.0 {
                0.0
            } else if hi > lo {
                (r - lo) / (hi - lo)
            } else {
                1.0
            }
        })
        .collect()
}

/// Per-view depth buffer (optical-axis depth) of a point-splatted pinhole view.
fn pinhole_depth(scene: &SceneModel, view: &crate::scene::TrajectoryView, radius: i64) -> Vec<f32> {
    let (w, h) = (i64::from(view.intrinsics.width), i64::from(view.intrinsics.height));
    let mut depth = alloc::vec![f32::INFINITY; (w * h) as usize];
    for p in scene.points() {
        let Some((u, v, z)) = view.project(&p.position) else {
            continue;
        };
        let (iu, iv) = (u.floor() as i64, v.floor() as i64);
        for dv in -radius..=radius {
            for du in -radius..=radius {
                let (x, y) = (iu + du, iv + dv);
                if x < 0 || y < 0 || x >= w || y >= h {
                    continue;
                }
                let i = (y * w + x) as usize;
                depth[i] = depth[i].min(z as f32);
            }
        }
    }
    depth
}

/// Tolerance of the z-buffer visibility test used when lifting features.
pub const LIFT_DEPTH_TOLERANCE: f64 = 0.02;

/// Averages per-view feature rasters onto the scene points visible in each
/// view, producing the scene's semantic field. Points seen by no view get
/// the zero vector.
pub fn lift_features_to_field(
    scene: &SceneModel,
    trajectory: &Trajectory,
    rasters: &[FeatureRaster],
) -> Result<SceneModel, PanoramaError> {
    if rasters.len() != trajectory.len() {
        return Err(PanoramaError::ViewCountMismatch {
            rasters: rasters.len(),
            views: trajectory.len(),
        });
    }
    let dim = rasters.first().map_or(0, |r| r.dim);
    if let Some(bad) = rasters.iter().find(|r| r.dim != dim) {
        return Err(PanoramaError::DimensionMismatch {
            expected: dim,
            found: bad.dim,
        });
    }
    let n = scene.len();
    let mut sums = alloc::vec![0.0f64; n * dim];
    let mut counts = alloc::vec![0u32; n];
    for (view, raster) in trajectory.views().iter().zip(rasters) {
        let k = view.intrinsics;
        let radius = i64::from(default_splat_radius(k.width));
        let depth = pinhole_depth(scene, view, radius);
        for (i, p) in scene.points().iter().enumerate() {
            let Some((u, v, z)) = view.project(&p.position) else {
                continue;
            };
            let (iu, iv) = (u.floor(), v.floor());
            if iu < 0.0 || iv < 0.0 || iu >= f64::from(k.width) || iv >= f64::from(k.height) {
                continue;
            }
            let (iu, iv) = (iu as u32, iv as u32);
            let zbuf = depth[(iv * k.width + iu) as usize];
            if z > f64::from(zbuf) + LIFT_DEPTH_TOLERANCE {
                continue;
            }
            let fu = ((u64::from(iu) * u64::from(raster.width)) / u64::from(k.width)) as u32;
            let fv = ((u64::from(iv) * u64::from(raster.height)) / u64::from(k.height)) as u32;
            let f = raster.get(fu, fv);
            for (s, &x) in sums[i * dim..(i + 1) * dim].iter_mut().zip(f) {
                *s += f64::from(x);
            }
            counts[i] += 1;
        }
    }
    let mut field = FeatureField::zeros(n, dim);
    for i in 0..n {
        if counts[i] > 0 {
            let c = f64::from(counts[i]);
            for (dst, &s) in field.get_mut(i).iter_mut().zip(&sums[i * dim..(i + 1) * dim]) {
                *dst = (s / c) as f32;
            }
        }
    }
    Ok(scene
        .with_features(field)
        .expect("field built with one vector per point"))
}

/// Re-projects the scene's semantic field onto a coarse ERP grid: each cell
/// takes the feature of the nearest point projecting into it, zero on miss.
pub fn render_feature_map(
    scene: &SceneModel,
    position: Vec3,
    yaw: f64,
    width: u32,
    height: u32,
) -> Result<FeatureRaster, PanoramaError> {
    let field = scene.features().ok_or(PanoramaError::MissingField)?;
    let mut out = FeatureRaster::zeros(width, height, field.dim());
    let mut nearest = alloc::vec![f64::INFINITY; width as usize * height as usize];
    for (i, p) in scene.points().iter().enumerate() {
        let d = p.position - position;
        let r = d.norm();
        if r < 1e-12 {
            continue;
        }
        let (u, v) = direction_to_pixel(&(d / r), width, height, yaw);
        let (iu, iv) = pixel_index(u, v, width, height);
        let cell = (iv * width + iu) as usize;
        if r < nearest[cell] {
            nearest[cell] = r;
            out.get_mut(iu, iv).copy_from_slice(field.get(i));
        }
    }
    Ok(out)
}
