//! Stage implementations. Each stage has an in-memory form and a file form
//! that chains through the output directory:
//! `viewpoints.json` → panorama rasters → `predictions.jsonl` →
//! `results.jsonl` → `metrics.json`, plus `qa.jsonl` and `report.json`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use pg_core::aggregation::{aggregate, AggError, DepthMedianMask, InstanceMask, MaskProvider, ViewInput};
use pg_core::floor::{estimate_floor, FloorPlane};
use pg_core::geom::{Box3D, Vec3};
use pg_core::geoqa::{generate_qa, Axis, QASample};
use pg_core::grounder::{tta_consensus, Grounder, GroundingQuery, OracleGrounder, ViewPrediction};
use pg_core::metrics::{acc_at, AccTable, EvalRecord};
use pg_core::panorama::{render_feature_map, render_panorama, PanoramaBundle, RenderOptions};
use pg_core::placement::{
    build_candidate_grid, greedy_select, ray_coverage, score_candidates, SelectedView, VisibilityTable,
};
use pg_core::scene::{CameraPose, SceneModel, Trajectory};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{Config, GroundMode, MaskMode};
use crate::error::{PgError, Result};
use crate::raster::{load_bundle, save_bundle};
use crate::remote::{RemoteGrounder, RemoteMask};

pub const VIEWPOINTS_FILE: &str = "viewpoints.json";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const RESULTS_FILE: &str = "results.jsonl";
pub const QA_FILE: &str = "qa.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const REPORT_FILE: &str = "report.json";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewScore {
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "D_surf")]
    pub d_surf: f64,
    #[serde(rename = "D_traj")]
    pub d_traj: Option<f64>,
    #[serde(rename = "S")]
    pub s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Viewpoint {
    pub position: [f64; 3],
    pub yaw: f64,
    pub score: ViewScore,
}

impl Viewpoint {
    fn from_selected(v: &SelectedView) -> Self {
        let p = v.pose.position;
        Self {
            position: [p.x, p.y, p.z],
            yaw: 0.0,
            score: ViewScore {
                a: v.score.coverage,
                d_surf: v.score.d_surf,
                d_traj: v.score.d_traj,
                s: v.score.score,
            },
        }
    }

    pub fn position(&self) -> Vec3 {
        Vec3::from(self.position)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaceSummary {
    pub floor_normal: [f64; 3],
    pub floor_offset: f64,
    pub camera_height: f64,
    pub candidates: usize,
    pub cameras: usize,
    pub coverage: f64,
    pub target_reached: bool,
}

/// Floor, candidate grid, visibility (rows in parallel), scoring, and greedy
/// selection. When no candidate sees any other, the one farthest from the
/// surface is used alone so later stages still have a view.
pub fn place_viewpoints(
    cfg: &Config,
    scene: &SceneModel,
    trajectory: &Trajectory,
) -> Result<(Vec<Viewpoint>, PlaceSummary)> {
    let floor: FloorPlane = estimate_floor(scene, &cfg.ransac)?;
    let p = &cfg.place;
    let grid = build_candidate_grid(scene, &floor, trajectory, p)?;
    let rows: Vec<Vec<u32>> = grid
        .candidates()
        .par_iter()
        .map(|&c| ray_coverage(&grid, c, p.r_max).visible)
        .collect();
    let table = VisibilityTable::from_rows(&grid, rows);
    let scores = score_candidates(&grid, &table, scene, trajectory, p.epsilon);
    let sel = greedy_select(&grid, &table, &scores, p.coverage_target, p.max_cameras, p.epsilon);
    let mut views: Vec<Viewpoint> = sel.views.iter().map(Viewpoint::from_selected).collect();
    if views.is_empty() {
        if let Some(best) = scores
            .iter()
            .max_by(|a, b| a.d_surf.total_cmp(&b.d_surf).then(b.cell.cmp(&a.cell)))
        {
            views.push(Viewpoint::from_selected(&SelectedView {
                cell: best.cell,
                pose: CameraPose::panoramic(grid.cells[best.cell].position, 0.0),
                score: *best,
            }));
        }
    }
    let summary = PlaceSummary {
        floor_normal: [floor.normal.x, floor.normal.y, floor.normal.z],
        floor_offset: floor.offset,
        camera_height: grid.camera_height,
        candidates: table.candidates.len(),
        cameras: views.len(),
        coverage: sel.coverage_achieved,
        target_reached: sel.target_reached,
    };
    Ok((views, summary))
}

pub fn render_opts(cfg: &Config) -> RenderOptions {
    RenderOptions {
        width: cfg.pano.width,
        height: cfg.pano.height,
        splat_radius: cfg.pano.splat_radius,
    }
}

/// One bundle per viewpoint; the feature raster is filled when the scene
/// carries a semantic field.
pub fn render_bundles(cfg: &Config, scene: &SceneModel, views: &[Viewpoint]) -> Result<Vec<PanoramaBundle>> {
    let opts = render_opts(cfg);
    views
        .par_iter()
        .map(|v| {
            let mut b = render_panorama(scene, v.position(), v.yaw, &opts);
            if scene.features().is_some() {
                let g = cfg.pano.feat_grid;
                b.feature = Some(render_feature_map(scene, v.position(), v.yaw, g, g)?);
            }
            Ok(b)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryPredictions {
    pub query_id: String,
    pub predictions: Vec<ViewPrediction>,
}

/// Builds the configured grounder; the oracle uses `classes` for distractors.
pub fn make_grounder(cfg: &Config, classes: BTreeMap<u32, u32>) -> Box<dyn Grounder> {
    match cfg.ground.mode {
        GroundMode::Oracle => Box::new(OracleGrounder::new(cfg.ground.noise, classes)),
        GroundMode::Remote => Box::new(RemoteGrounder::new(
            cfg.remote.endpoint.as_deref().expect("validated"),
            &cfg.remote,
        )),
    }
}

/// TTA-grounds every query in every view. Returns per-query wall seconds.
pub fn ground_queries(
    cfg: &Config,
    grounder: &dyn Grounder,
    bundles: &[PanoramaBundle],
    queries: &[GroundingQuery],
) -> Result<Vec<(QueryPredictions, f64)>> {
    queries
        .par_iter()
        .map(|q| {
            let t = Instant::now();
            let predictions = bundles
                .par_iter()
                .enumerate()
                .map(|(k, b)| tta_consensus(b, k as u32, q, grounder, cfg.ground.tta))
                .collect::<Result<Vec<_>, _>>()?;
            Ok((
                QueryPredictions {
                    query_id: q.query_id.clone(),
                    predictions,
                },
                t.elapsed().as_secs_f64(),
            ))
        })
        .collect()
}

/// One line of `results.jsonl`. Hard aggregation failures keep the line with
/// null fields and the reason in `error`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query_id: String,
    pub best_view: Option<u32>,
    pub box3d: Option<Box3D>,
    pub fallback_used: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn mask_provider(cfg: &Config, target: Option<u32>, query_id: &str) -> Result<Box<dyn MaskProvider>> {
    Ok(match cfg.ground.mask {
        MaskMode::Fallback => Box::new(DepthMedianMask { tau_d: cfg.agg.tau_d }),
        MaskMode::GroundTruth => Box::new(InstanceMask {
            instance: target.ok_or_else(|| {
                PgError::Config(format!(
                    "ground.mask = \"ground_truth\" needs target_instance on query {query_id}"
                ))
            })?,
        }),
        MaskMode::Remote => Box::new(RemoteMask::new(
            cfg.remote.segment_endpoint.as_deref().expect("validated"),
            &cfg.remote,
        )),
    })
}

/// Lift, select, and fuse per query. `targets` maps query ids to target
/// instances and is only consulted for ground-truth masks.
pub fn aggregate_queries(
    cfg: &Config,
    bundles: &[PanoramaBundle],
    predictions: &[QueryPredictions],
    targets: &BTreeMap<String, Option<u32>>,
) -> Result<Vec<(QueryResult, f64)>> {
    predictions
        .par_iter()
        .map(|qp| {
            let t = Instant::now();
            let target = targets.get(&qp.query_id).copied().flatten();
            let provider = mask_provider(cfg, target, &qp.query_id)?;
            let mut views = Vec::with_capacity(qp.predictions.len());
            for p in &qp.predictions {
                let bundle = bundles.get(p.view_id as usize).ok_or_else(|| {
                    PgError::Config(format!(
                        "query {}: prediction for view {} but only {} views exist",
                        qp.query_id,
                        p.view_id,
                        bundles.len()
                    ))
                })?;
                views.push(ViewInput {
                    view_id: p.view_id,
                    bundle,
                    pred_box: p.pixel_box(),
                });
            }
            let result = match aggregate(&views, provider.as_ref(), &cfg.agg) {
                Ok(o) => QueryResult {
                    query_id: qp.query_id.clone(),
                    best_view: Some(o.best_view),
                    box3d: Some(o.box3d),
                    fallback_used: o.fallback_used,
                    error: None,
                },
                Err(AggError::ProviderTransport(m)) => return Err(PgError::Unreachable(m)),
                Err(e) => {
                    log::warn!("query {}: {e}", qp.query_id);
                    QueryResult {
                        query_id: qp.query_id.clone(),
                        best_view: None,
                        box3d: None,
                        fallback_used: false,
                        error: Some(e.to_string()),
                    }
                }
            };
            Ok((result, t.elapsed().as_secs_f64()))
        })
        .collect()
}

const ALL_AXES: [Axis; 4] = [Axis::Range, Axis::X, Axis::Y, Axis::Z];

/// `qa.per_view` samples per bundle, split evenly over the axes when
/// `qa.axis` is unset.
pub fn generate_qa_all(cfg: &Config, bundles: &[PanoramaBundle]) -> Result<Vec<QASample>> {
    let axes: Vec<Axis> = cfg.qa.axis.map_or(ALL_AXES.to_vec(), |a| vec![a]);
    let per = cfg.qa.per_view;
    let chunks: Vec<Vec<QASample>> = bundles
        .par_iter()
        .enumerate()
        .map(|(k, b)| {
            let mut out = Vec::with_capacity(per);
            for (i, &axis) in axes.iter().enumerate() {
                let n = per / axes.len() + usize::from(i < per % axes.len());
                if n == 0 {
                    continue;
                }
                let seed = cfg.qa.seed ^ ((k as u64) << 8 | i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                out.extend(generate_qa(b, k as u32, n, axis, cfg.qa.min_margin, seed)?);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: Vec<AccTable>,
    pub mean_iou: f64,
    pub failed: usize,
    pub records: Vec<EvalRecord>,
}

/// Scores results against the scene's instance boxes. Missing or failed
/// results count as IoU 0.
pub fn evaluate(
    cfg: &Config,
    scene: &SceneModel,
    queries: &[GroundingQuery],
    results: &[QueryResult],
) -> Result<Metrics> {
    let classes = scene.instances();
    let by_id: BTreeMap<&str, &QueryResult> = results.iter().map(|r| (r.query_id.as_str(), r)).collect();
    let mut records = Vec::with_capacity(queries.len());
    let mut failed = 0;
    for q in queries {
        let target = q
            .target_instance
            .ok_or_else(|| PgError::Config(format!("query {} has no target_instance to evaluate", q.query_id)))?;
        let (gt, class) = scene
            .instance_box(target)
            .zip(classes.get(&target))
            .ok_or_else(|| PgError::Config(format!("query {}: instance {target} is not in the scene", q.query_id)))?;
        let distractors = classes.iter().filter(|(&i, &c)| i != target && c == *class).count();
        let pred = by_id.get(q.query_id.as_str()).and_then(|r| r.box3d);
        if pred.is_none() {
            failed += 1;
        }
        records.push(EvalRecord::new(q.query_id.clone(), pred, gt, distractors));
    }
    let mut thresholds = vec![cfg.run.iou_threshold];
    if cfg.run.iou_threshold != 0.5 {
        thresholds.push(0.5);
    }
    let acc = thresholds
        .iter()
        .map(|&t| acc_at(&records, t))
        .collect::<Result<Vec<_>, _>>()?;
    let mean_iou = records.iter().map(|r| r.iou).sum::<f64>() / records.len() as f64;
    Ok(Metrics {
        acc,
        mean_iou,
        failed,
        records,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub place: f64,
    pub render: f64,
    pub ground: f64,
    pub aggregate: f64,
    pub eval: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryTiming {
    pub query_id: String,
    pub grounder_s: f64,
    pub aggregation_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub placement: PlaceSummary,
    pub n_queries: usize,
    pub timings_s: StageTimings,
    pub mean_grounder_s_per_query: f64,
    pub mean_aggregation_s_per_query: f64,
    pub per_query: Vec<QueryTiming>,
    pub metrics: Metrics,
}

pub struct RunOutput {
    pub viewpoints: Vec<Viewpoint>,
    pub bundles: Vec<PanoramaBundle>,
    pub predictions: Vec<QueryPredictions>,
    pub results: Vec<QueryResult>,
    pub report: Report,
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn targets_of(queries: &[GroundingQuery]) -> BTreeMap<String, Option<u32>> {
    queries
        .iter()
        .map(|q| (q.query_id.clone(), q.target_instance))
        .collect()
}

/// Every stage in memory, with an explicit grounder.
pub fn run_with(
    cfg: &Config,
    scene: &SceneModel,
    trajectory: &Trajectory,
    queries: &[GroundingQuery],
    grounder: &dyn Grounder,
) -> Result<RunOutput> {
    let start = Instant::now();
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let (viewpoints, placement) = place_viewpoints(cfg, scene, trajectory)?;
    timings.place = secs(t);

    let t = Instant::now();
    let bundles = render_bundles(cfg, scene, &viewpoints)?;
    timings.render = secs(t);

    let t = Instant::now();
    let grounded = ground_queries(cfg, grounder, &bundles, queries)?;
    timings.ground = secs(t);
    let (predictions, ground_s): (Vec<_>, Vec<_>) = grounded.into_iter().unzip();

    let t = Instant::now();
    let aggregated = aggregate_queries(cfg, &bundles, &predictions, &targets_of(queries))?;
    timings.aggregate = secs(t);
    let (results, agg_s): (Vec<_>, Vec<_>) = aggregated.into_iter().unzip();

    let t = Instant::now();
    let metrics = evaluate(cfg, scene, queries, &results)?;
    timings.eval = secs(t);
    timings.total = secs(start);

    let per_query = queries
        .iter()
        .zip(ground_s.iter().zip(&agg_s))
        .map(|(q, (&g, &a))| QueryTiming {
            query_id: q.query_id.clone(),
            grounder_s: g,
            aggregation_s: a,
        })
        .collect();
    let report = Report {
        placement,
        n_queries: queries.len(),
        timings_s: timings,
        mean_grounder_s_per_query: mean(ground_s.iter().copied()),
        mean_aggregation_s_per_query: mean(agg_s.iter().copied()),
        per_query,
        metrics,
    };
    Ok(RunOutput {
        viewpoints,
        bundles,
        predictions,
        results,
        report,
    })
}

/// Every stage in memory with the configured grounder.
pub fn run_pipeline(
    cfg: &Config,
    scene: &SceneModel,
    trajectory: &Trajectory,
    queries: &[GroundingQuery],
) -> Result<RunOutput> {
    let grounder = make_grounder(cfg, scene.instances());
    run_with(cfg, scene, trajectory, queries, grounder.as_ref())
}

// File forms.

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| PgError::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    write_file(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| PgError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| PgError::format(path, e.to_string()))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| PgError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).expect("serializable");
        w.write_all(b"\n").map_err(|e| PgError::io(path, e))?;
    }
    w.flush().map_err(|e| PgError::io(path, e))
}

/// Reads JSON lines, skipping blank ones.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| PgError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| PgError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| PgError::format(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

pub fn read_queries(path: &Path) -> Result<Vec<GroundingQuery>> {
    let queries: Vec<GroundingQuery> = read_jsonl(path)?;
    let mut seen = std::collections::BTreeSet::new();
    for q in &queries {
        if !seen.insert(q.query_id.as_str()) {
            return Err(PgError::format(path, format!("duplicate query_id {}", q.query_id)));
        }
        if q.text.is_empty() {
            return Err(PgError::format(path, format!("query {} has empty text", q.query_id)));
        }
    }
    Ok(queries)
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| PgError::io(dir, e))
}

pub fn save_bundles(dir: &Path, bundles: &[PanoramaBundle]) -> Result<()> {
    bundles
        .par_iter()
        .enumerate()
        .try_for_each(|(k, b)| save_bundle(dir, k, b))
}

pub fn load_bundles(dir: &Path, views: &[Viewpoint]) -> Result<Vec<PanoramaBundle>> {
    views
        .par_iter()
        .enumerate()
        .map(|(k, v)| load_bundle(dir, k, v.position(), v.yaw))
        .collect()
}

pub fn out_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

pub fn load_viewpoints(dir: &Path) -> Result<Vec<Viewpoint>> {
    let path = out_path(dir, VIEWPOINTS_FILE);
    let views: Vec<Viewpoint> = read_json(&path)?;
    if views.is_empty() {
        return Err(PgError::format(&path, "no viewpoints"));
    }
    Ok(views)
}

/// Writes every artifact of a finished run into `dir`.
pub fn save_run(dir: &Path, out: &RunOutput) -> Result<()> {
    ensure_dir(dir)?;
    write_json(&out_path(dir, VIEWPOINTS_FILE), &out.viewpoints)?;
    save_bundles(dir, &out.bundles)?;
    write_jsonl(&out_path(dir, PREDICTIONS_FILE), &out.predictions)?;
    write_jsonl(&out_path(dir, RESULTS_FILE), &out.results)?;
    write_json(&out_path(dir, METRICS_FILE), &out.report.metrics)?;
    write_json(&out_path(dir, REPORT_FILE), &out.report)
}
