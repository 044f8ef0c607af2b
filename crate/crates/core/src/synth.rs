//! Seeded synthetic indoor scenes: rooms with walls, a floor, and box
//! objects, each emitted as a triangle mesh plus dense surface samples.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geom::{Box3D, Mat3, Vec3};
use crate::grounder::GroundingQuery;
use crate::scene::{CameraPose, Intrinsics, SceneError, SceneModel, ScenePoint, Trajectory, TrajectoryView};

pub const FLOOR_COLOR: [u8; 3] = [120, 110, 100];
pub const WALL_COLOR: [u8; 3] = [220, 220, 210];

/// Floor rectangle with perimeter walls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub min: [f64; 2],
    pub max: [f64; 2],
    pub height: f64,
}

/// Axis-aligned wall segment from `from` to `to` (must share x or y).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WallSpec {
    pub from: [f64; 2],
    pub to: [f64; 2],
    pub height: f64,
    pub thickness: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub class_name: String,
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub rooms: Vec<RoomSpec>,
    #[serde(default)]
    pub walls: Vec<WallSpec>,
    pub objects: Vec<ObjectSpec>,
    /// Surface samples per square meter.
    pub density: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthQuery {
    pub query: GroundingQuery,
    pub class_id: u32,
    pub distractor_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthScene {
    pub scene: SceneModel,
    pub instance_boxes: BTreeMap<u32, Box3D>,
    pub class_names: BTreeMap<u32, String>,
    pub queries: Vec<SynthQuery>,
    pub trajectory: Trajectory,
}

struct Builder {
    points: Vec<ScenePoint>,
    triangles: Vec<[u32; 3]>,
    rng: ChaCha8Rng,
    density: f64,
}

impl Builder {
    /// Samples a rectangle `origin + s·a + t·b`, `s, t ∈ [0, 1]`.
    fn sample_rect(&mut self, origin: Vec3, a: Vec3, b: Vec3, color: [u8; 3], instance: u32, class: u32) {
        let area = a.cross(&b).norm();
        let n = (area * self.density).ceil() as usize;
        for _ in 0..n {
            let s: f64 = self.rng.random();
            let t: f64 = self.rng.random();
            self.points
                .push(ScenePoint::new(origin + a * s + b * t, color, instance, class));
        }
    }

    fn mesh_rect(&mut self, origin: Vec3, a: Vec3, b: Vec3, color: [u8; 3], instance: u32, class: u32) {
        let base = self.points.len() as u32;
        for c in [origin, origin + a, origin + a + b, origin + b] {
            self.points.push(ScenePoint::new(c, color, instance, class));
        }
        self.triangles.push([base, base + 1, base + 2]);
        self.triangles.push([base, base + 2, base + 3]);
    }

    fn add_box(&mut self, b: &Box3D, color: [u8; 3], instance: u32, class: u32) {
        let lo = Vec3::from(b.min);
        let e = b.extent();
        let (ex, ey, ez) = (
            Vec3::new(e[0], 0.0, 0.0),
            Vec3::new(0.0, e[1], 0.0),
            Vec3::new(0.0, 0.0, e[2]),
        );
        let faces = [
            (lo, ey, ez),
            (lo + ex, ey, ez),
            (lo, ex, ez),
            (lo + ey, ex, ez),
            (lo, ex, ey),
            (lo + ez, ex, ey),
        ];
        for (o, a, c) in faces {
            self.mesh_rect(o, a, c, color, instance, class);
            self.sample_rect(o, a, c, color, instance, class);
        }
    }
}

pub fn wall_box(w: &WallSpec) -> Box3D {
    let h = 0.5 * w.thickness;
    Box3D::new(
        [w.from[0].min(w.to[0]) - h, w.from[1].min(w.to[1]) - h, 0.0],
        [w.from[0].max(w.to[0]) + h, w.from[1].max(w.to[1]) + h, w.height],
    )
}

fn perimeter(room: &RoomSpec) -> [WallSpec; 4] {
    let [x0, y0] = room.min;
    let [x1, y1] = room.max;
    let t = 0.1;
    let wall = |from: [f64; 2], to: [f64; 2]| WallSpec {
        from,
        to,
        height: room.height,
        thickness: t,
    };
    // Walls sit just outside the floor so the interior stays exactly the floor rectangle.
    [
        wall([x0 - t / 2.0, y0 - t / 2.0], [x1 + t / 2.0, y0 - t / 2.0]),
        wall([x0 - t / 2.0, y1 + t / 2.0], [x1 + t / 2.0, y1 + t / 2.0]),
        wall([x0 - t / 2.0, y0 - t / 2.0], [x0 - t / 2.0, y1 + t / 2.0]),
        wall([x1 + t / 2.0, y0 - t / 2.0], [x1 + t / 2.0, y1 + t / 2.0]),
    ]
}

/// Deterministic color for a class id.
pub fn class_color(class: u32) -> [u8; 3] {
    let h = class.wrapping_mul(2_654_435_761);
    [(h >> 24) as u8 | 0x40, (h >> 16) as u8 | 0x40, (h >> 8) as u8 | 0x40]
}

pub fn make_synth_scene(spec: &SynthSpec) -> Result<SynthScene, SceneError> {
    let mut b = Builder {
        points: Vec::new(),
        triangles: Vec::new(),
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        density: spec.density,
    };
    for room in &spec.rooms {
        let origin = Vec3::new(room.min[0], room.min[1], 0.0);
        let a = Vec3::new(room.max[0] - room.min[0], 0.0, 0.0);
        let c = Vec3::new(0.0, room.max[1] - room.min[1], 0.0);
        b.mesh_rect(origin, a, c, FLOOR_COLOR, 0, 0);
        b.sample_rect(origin, a, c, FLOOR_COLOR, 0, 0);
        for w in perimeter(room) {
            b.add_box(&wall_box(&w), WALL_COLOR, 0, 0);
        }
    }
    for w in &spec.walls {
        b.add_box(&wall_box(w), WALL_COLOR, 0, 0);
    }

    let mut class_ids: BTreeMap<String, u32> = BTreeMap::new();
    let mut class_names = BTreeMap::new();
    let mut instance_boxes = BTreeMap::new();
    let mut object_class = Vec::new();
    for (i, o) in spec.objects.iter().enumerate() {
        let next = class_ids.len() as u32 + 1;
        let class = *class_ids.entry(o.class_name.clone()).or_insert(next);
        class_names.insert(class, o.class_name.clone());
        let instance = i as u32 + 1;
        let aabb = Box3D::new(o.min, o.max);
        b.add_box(&aabb, class_color(class), instance, class);
        instance_boxes.insert(instance, aabb);
        object_class.push(class);
    }

    let mut queries = Vec::new();
    for (i, o) in spec.objects.iter().enumerate() {
        let center = Box3D::new(o.min, o.max).center();
        let anchor = spec
            .objects
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .min_by(|a, c| {
                let da = (Box3D::new(a.1.min, a.1.max).center() - center).norm();
                let dc = (Box3D::new(c.1.min, c.1.max).center() - center).norm();
                da.total_cmp(&dc).then(a.0.cmp(&c.0))
            })
            .map_or_else(|| "wall".to_string(), |(_, a)| a.class_name.clone());
        let distractor_count = object_class
            .iter()
            .enumerate()
            .filter(|&(j, &c)| j != i && c == object_class[i])
            .count();
        queries.push(SynthQuery {
            query: GroundingQuery {
                query_id: format!("q{i:03}"),
                text: format!("the {} next to the {}", o.class_name, anchor),
                target_instance: Some(i as u32 + 1),
            },
            class_id: object_class[i],
            distractor_count,
        });
    }

    let trajectory = synth_trajectory(spec)?;
    let scene = SceneModel::new(b.points, b.triangles, None)?;
    Ok(SynthScene {
        scene,
        instance_boxes,
        class_names,
        queries,
        trajectory,
    })
}

/// Camera looking horizontally along `forward` (x right, y down, z forward).
pub fn look_rotation(forward: Vec3) -> Mat3 {
    let f = forward.normalize();
    let r = f.cross(&Vec3::z()).normalize();
    let d = f.cross(&r);
    Mat3::from_columns(&[r, d, f])
}

pub const TRAJECTORY_INTRINSICS: Intrinsics = Intrinsics {
    fx: 80.0,
    fy: 80.0,
    cx: 80.0,
    cy: 60.0,
    width: 160,
    height: 120,
};

/// Four inward-looking views per room at 1.5 m, skipping spots inside objects.
fn synth_trajectory(spec: &SynthSpec) -> Result<Trajectory, SceneError> {
    let mut views = Vec::new();
    for room in &spec.rooms {
        let c = [0.5 * (room.min[0] + room.max[0]), 0.5 * (room.min[1] + room.max[1])];
        let h = [0.25 * (room.max[0] - room.min[0]), 0.25 * (room.max[1] - room.min[1])];
        for (sx, sy) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
            let p = Vec3::new(c[0] + sx * h[0], c[1] + sy * h[1], 1.5);
            let blocked = spec.objects.iter().any(|o| {
                p.x > o.min[0] - 0.2
                    && p.x < o.max[0] + 0.2
                    && p.y > o.min[1] - 0.2
                    && p.y < o.max[1] + 0.2
                    && o.max[2] > 1.3
            });
            if blocked {
                continue;
            }
            let forward = Vec3::new(c[0] - p.x, c[1] - p.y, 0.0);
            views.push(TrajectoryView {
                pose: CameraPose::new(p, look_rotation(forward))?,
                intrinsics: TRAJECTORY_INTRINSICS,
            });
        }
    }
    Trajectory::new(views)
}

/// Object classes and size ranges `(min extents, max extents)` for random rooms.
pub const CLASS_CATALOG: &[(&str, [f64; 3], [f64; 3])] = &[
    ("chair", [0.4, 0.4, 0.8], [0.6, 0.6, 1.0]),
    ("table", [0.8, 0.6, 0.7], [1.6, 1.0, 0.8]),
    ("cabinet", [0.4, 0.4, 0.9], [1.0, 0.6, 1.9]),
    ("sofa", [1.4, 0.8, 0.7], [2.2, 1.0, 0.9]),
    ("bed", [1.4, 1.9, 0.4], [1.8, 2.1, 0.6]),
    ("desk", [1.0, 0.5, 0.7], [1.6, 0.8, 0.8]),
    ("bookshelf", [0.6, 0.3, 1.5], [1.2, 0.4, 2.0]),
    ("box", [0.3, 0.3, 0.3], [0.6, 0.6, 0.5]),
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomRoomParams {
    pub min_size: f64,
    pub max_size: f64,
    pub height: f64,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Free space kept between objects and to walls.
    pub gap: f64,
    pub density: f64,
    /// Probability that a new object repeats an existing object's class.
    pub repeat_class: f64,
}

impl Default for RandomRoomParams {
    fn default() -> Self {
        Self {
            min_size: 3.5,
            max_size: 6.0,
            height: 2.6,
            min_objects: 2,
            max_objects: 4,
            gap: 0.4,
            density: 150.0,
            repeat_class: 0.3,
        }
    }
}

/// One rectangular room with non-overlapping random box objects.
pub fn random_room_spec(seed: u64, params: &RandomRoomParams) -> SynthSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0000_0000_0000);
    let sx = rng.random_range(params.min_size..=params.max_size);
    let sy = rng.random_range(params.min_size..=params.max_size);
    let room = RoomSpec {
        min: [0.0, 0.0],
        max: [sx, sy],
        height: params.height,
    };
    let n = rng.random_range(params.min_objects..=params.max_objects);
    let mut objects: Vec<ObjectSpec> = Vec::new();
    let mut tries = 0;
    while objects.len() < n && tries < 500 {
        tries += 1;
        let (name, lo, hi) = if !objects.is_empty() && rng.random_bool(params.repeat_class) {
            let name = objects[rng.random_range(0..objects.len())].class_name.clone();
            let entry = CLASS_CATALOG.iter().find(|c| c.0 == name).expect("catalog class");
            (entry.0, entry.1, entry.2)
        } else {
            CLASS_CATALOG[rng.random_range(0..CLASS_CATALOG.len())]
        };
        let mut ext = [0.0; 3];
        for a in 0..3 {
            ext[a] = rng.random_range(lo[a]..=hi[a]);
        }
        if rng.random_bool(0.5) {
            ext.swap(0, 1);
        }
        let free_x = sx - 2.0 * params.gap - ext[0];
        let free_y = sy - 2.0 * params.gap - ext[1];
        if free_x <= 0.0 || free_y <= 0.0 {
            continue;
        }
        let x0 = params.gap + rng.random_range(0.0..free_x);
        let y0 = params.gap + rng.random_range(0.0..free_y);
        let cand = ObjectSpec {
            class_name: name.to_string(),
            min: [x0, y0, 0.0],
            max: [x0 + ext[0], y0 + ext[1], ext[2]],
        };
        let clash = objects.iter().any(|o| {
            cand.min[0] < o.max[0] + params.gap
                && o.min[0] < cand.max[0] + params.gap
                && cand.min[1] < o.max[1] + params.gap
                && o.min[1] < cand.max[1] + params.gap
        });
        if !clash {
            objects.push(cand);
        }
    }
    SynthSpec {
        rooms: alloc::vec![room],
        walls: Vec::new(),
        objects,
        density: params.density,
        seed,
    }
}

/// Two rooms side by side along x, joined by a door in the shared wall.
pub fn two_room_spec(seed: u64, density: f64) -> SynthSpec {
    let height = 2.6;
    SynthSpec {
        rooms: alloc::vec![RoomSpec {
            min: [0.0, 0.0],
            max: [8.0, 4.0],
            height
        }],
        walls: alloc::vec![
            WallSpec {
                from: [4.0, 0.0],
                to: [4.0, 1.5],
                height,
                thickness: 0.1
            },
            WallSpec {
                from: [4.0, 2.5],
                to: [4.0, 4.0],
                height,
                thickness: 0.1
            },
        ],
        objects: alloc::vec![
            ObjectSpec {
                class_name: "chair".into(),
                min: [1.0, 1.0, 0.0],
                max: [1.5, 1.5, 0.9]
            },
            ObjectSpec {
                class_name: "table".into(),
                min: [5.5, 2.0, 0.0],
                max: [6.7, 2.8, 0.75]
            },
            ObjectSpec {
                class_name: "chair".into(),
                min: [6.5, 0.6, 0.0],
                max: [7.0, 1.1, 0.9]
            },
        ],
        density,
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn one_box() -> SynthSpec {
        SynthSpec {
            rooms: vec![RoomSpec {
                min: [0.0, 0.0],
                max: [4.0, 3.0],
                height: 2.5,
            }],
            walls: vec![],
            objects: vec![ObjectSpec {
                class_name: "box".into(),
                min: [1.0, 1.0, 0.0],
                max: [1.6, 1.4, 0.5],
            }],
            density: 50.0,
            seed: 3,
        }
    }

    #[test]
    fn object_aabb_recoverable() {
        let s = make_synth_scene(&one_box()).unwrap();
        assert_eq!(
            s.scene.instance_box(1),
            Some(Box3D::new([1.0, 1.0, 0.0], [1.6, 1.4, 0.5]))
        );
        assert_eq!(s.instance_boxes[&1], s.scene.instance_box(1).unwrap());
        assert_eq!(s.queries[0].query.text, "the box next to the wall");
        assert_eq!(s.queries[0].distractor_count, 0);
    }

    #[test]
    fn same_class_pair_is_multiple() {
        let s = make_synth_scene(&two_room_spec(1, 30.0)).unwrap();
        let chairs: Vec<_> = s
            .queries
            .iter()
            .filter(|q| q.query.text.starts_with("the chair"))
            .collect();
        assert_eq!(chairs.len(), 2);
        assert!(chairs.iter().all(|q| q.distractor_count == 1));
    }

    #[test]
    fn deterministic() {
        let a = make_synth_scene(&random_room_spec(11, &RandomRoomParams::default())).unwrap();
        let b = make_synth_scene(&random_room_spec(11, &RandomRoomParams::default())).unwrap();
        assert_eq!(a.scene, b.scene);
        assert_eq!(a.queries, b.queries);
    }

    #[test]
    fn random_rooms_have_objects() {
        for seed in 0..20 {
            let spec = random_room_spec(seed, &RandomRoomParams::default());
            assert!(!spec.objects.is_empty(), "seed {seed}");
            let s = make_synth_scene(&spec).unwrap();
            assert!(!s.trajectory.is_empty());
        }
    }
}
