//! `PGSCENE v1` binary scenes and the `scene.json` trajectory sidecar.
//!
//! Layout: one ASCII header line `PGSCENE v1 <n_points> <n_triangles> <feature_dim>\n`,
//! then `n_points` packed little-endian records
//! `(f32 x, y, z; u8 r, g, b; u32 instance; u32 class; feature_dim × f32)`,
//! then `n_triangles` triples of u32 vertex indices.

use std::fs;
use std::path::{Path, PathBuf};

use pg_core::geom::{Mat3, Vec3};
use pg_core::scene::{
    validate_pose, FeatureField, Intrinsics, SceneError, SceneModel, ScenePoint, Trajectory, TrajectoryView,
};
use serde::{Deserialize, Serialize};

use crate::error::{PgError, Result};

const MAGIC: &str = "PGSCENE";
const VERSION: &str = "v1";
const MAX_HEADER: usize = 256;

fn parse_header(bytes: &[u8]) -> Result<(usize, usize, usize, usize), SceneError> {
    let end = bytes
        .iter()
        .take(MAX_HEADER)
        .position(|&b| b == b'\n')
        .ok_or_else(|| SceneError::MalformedHeader("missing header line".into()))?;
    let line =
        std::str::from_utf8(&bytes[..end]).map_err(|_| SceneError::MalformedHeader("header is not ASCII".into()))?;
    let fields: Vec<&str> = line.split_ascii_whitespace().collect();
    if fields.len() != 5 || fields[0] != MAGIC {
        return Err(SceneError::MalformedHeader(format!(
            "expected `{MAGIC} {VERSION} <n> <t> <d>`, found `{line}`"
        )));
    }
    if fields[1] != VERSION {
        return Err(SceneError::MalformedHeader(format!(
            "unsupported version `{}`",
            fields[1]
        )));
    }
    let num = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|_| SceneError::MalformedHeader(format!("{what} `{s}` is not a count")))
    };
    Ok((
        end + 1,
        num(fields[2], "n_points")?,
        num(fields[3], "n_triangles")?,
        num(fields[4], "feature_dim")?,
    ))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out = self.bytes[self.pos..self.pos + N]
            .try_into()
            .expect("length checked up front");
        self.pos += N;
        out
    }

    fn f32(&mut self) -> f32 {
        f32::from_le_bytes(self.take())
    }

    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }
}

/// Parses a scene from its file bytes.
pub fn decode_scene(bytes: &[u8]) -> Result<SceneModel, SceneError> {
    let (start, n, t, d) = parse_header(bytes)?;
    let record = 12 + 3 + 4 + 4 + 4 * d;
    let expected = n
        .checked_mul(record)
        .and_then(|p| t.checked_mul(12).and_then(|q| p.checked_add(q)))
        .and_then(|body| body.checked_add(start))
        .ok_or_else(|| SceneError::MalformedHeader("counts overflow".into()))?;
    if bytes.len() < expected {
        return Err(SceneError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(SceneError::MalformedHeader(format!(
            "{} trailing bytes after the declared records",
            bytes.len() - expected
        )));
    }
    let mut r = Reader { bytes, pos: start };
    let mut points = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n * d);
    for index in 0..n {
        let (x, y, z) = (r.f32(), r.f32(), r.f32());
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(SceneError::NonFiniteCoordinate { index });
        }
        let color = r.take::<3>();
        let instance = r.u32();
        let class = r.u32();
        for _ in 0..d {
            features.push(r.f32());
        }
        points.push(ScenePoint::new(
            Vec3::new(f64::from(x), f64::from(y), f64::from(z)),
            color,
            instance,
            class,
        ));
    }
    let mut triangles = Vec::with_capacity(t);
    for _ in 0..t {
        triangles.push([r.u32(), r.u32(), r.u32()]);
    }
    let field = (d > 0).then(|| FeatureField::from_flat(d, features));
    SceneModel::new(points, triangles, field)
}

/// Serializes a scene; positions are stored as f32.
pub fn encode_scene(scene: &SceneModel) -> Vec<u8> {
    let d = scene.features().map_or(0, |f| f.dim());
    let mut out = format!("{MAGIC} {VERSION} {} {} {}\n", scene.len(), scene.triangles().len(), d).into_bytes();
    out.reserve(scene.len() * (23 + 4 * d) + scene.triangles().len() * 12);
    for (i, p) in scene.points().iter().enumerate() {
        for c in p.position.iter() {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
        out.extend_from_slice(&p.color);
        out.extend_from_slice(&p.instance_id.to_le_bytes());
        out.extend_from_slice(&p.class_id.to_le_bytes());
        if let Some(f) = scene.features() {
            for v in f.get(i) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    for tri in scene.triangles() {
        for i in tri {
            out.extend_from_slice(&i.to_le_bytes());
        }
    }
    out
}

pub fn load_scene(path: &Path) -> Result<SceneModel> {
    let bytes = fs::read(path).map_err(|e| PgError::io(path, e))?;
    decode_scene(&bytes).map_err(|source| PgError::Scene {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_scene(path: &Path, scene: &SceneModel) -> Result<()> {
    fs::write(path, encode_scene(scene)).map_err(|e| PgError::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub position: [f64; 3],
    /// Row-major world-from-camera rotation.
    pub rotation: [f64; 9],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl PoseRecord {
    pub fn from_view(v: &TrajectoryView) -> Self {
        let r = &v.pose.rotation;
        let k = &v.intrinsics;
        Self {
            position: [v.pose.position.x, v.pose.position.y, v.pose.position.z],
            rotation: std::array::from_fn(|i| r[(i / 3, i % 3)]),
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    #[serde(default)]
    pub trajectory: Vec<PoseRecord>,
    #[serde(default)]
    pub meta: serde_json::Map<String, serde_json::Value>,
}

impl Sidecar {
    pub fn to_trajectory(&self) -> Result<Trajectory, SceneError> {
        let mut views = Vec::with_capacity(self.trajectory.len());
        for (i, p) in self.trajectory.iter().enumerate() {
            let position = Vec3::from(p.position);
            let rotation = Mat3::from_row_slice(&p.rotation);
            let pose = validate_pose(i, position, rotation)?;
            views.push(TrajectoryView {
                pose,
                intrinsics: Intrinsics {
                    fx: p.fx,
                    fy: p.fy,
                    cx: p.cx,
                    cy: p.cy,
                    width: p.width,
                    height: p.height,
                },
            });
        }
        Trajectory::new(views)
    }

    pub fn from_trajectory(t: &Trajectory) -> Self {
        Self {
            trajectory: t.views().iter().map(PoseRecord::from_view).collect(),
            meta: Default::default(),
        }
    }
}

/// `scene.json` beside `scene.pgs`.
pub fn sidecar_path(scene_path: &Path) -> PathBuf {
    scene_path.with_extension("json")
}

pub fn load_sidecar(path: &Path) -> Result<Sidecar> {
    let text = fs::read_to_string(path).map_err(|e| PgError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| PgError::format(path, e.to_string()))
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    load_sidecar(path)?.to_trajectory().map_err(|source| PgError::Scene {
        path: path.to_path_buf(),
        source,
    })
}

/// Trajectory from the sidecar next to `scene_path`, empty when there is none.
pub fn load_scene_trajectory(scene_path: &Path) -> Result<Trajectory> {
    let p = sidecar_path(scene_path);
    if p.exists() {
        load_trajectory(&p)
    } else {
        Ok(Trajectory::default())
    }
}

pub fn save_sidecar(path: &Path, sidecar: &Sidecar) -> Result<()> {
    let text = serde_json::to_string_pretty(sidecar).expect("sidecar serializes");
    fs::write(path, text).map_err(|e| PgError::io(path, e))
}
