use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pg_core::synth::{make_synth_scene, random_room_spec, two_room_spec, RandomRoomParams};

use crate::config::Config;
use crate::error::{PgError, Result};
use crate::pipeline::{self as pl, QueryPredictions, QueryResult};
use crate::scene_io::{load_scene, load_scene_trajectory, save_scene, save_sidecar, sidecar_path, Sidecar};

#[derive(Debug, Parser)]
#[command(name = "pg", version, about = "Panoramic 3D visual grounding pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML config; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Scene file; its trajectory sidecar is the same path with a `.json` extension.
    #[arg(long, global = true)]
    pub scene: Option<PathBuf>,
    /// Queries as JSON lines `{"query_id","text","target_instance"}`.
    #[arg(long, global = true)]
    pub queries: Option<PathBuf>,
    /// Output directory shared by all stages.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Layout {
    Random,
    TwoRoom,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Floor estimation and panoramic viewpoint placement → viewpoints.json.
    Place(Common),
    /// Render panoramas for viewpoints.json.
    Render(Common),
    /// Ground each query in every panorama → predictions.jsonl.
    Ground(Common),
    /// Lift, select the best view, and fuse → results.jsonl.
    Aggregate(Common),
    /// Geometric QA samples from the rendered panoramas → qa.jsonl.
    GenQa(Common),
    /// Score results.jsonl against the scene's instance boxes → metrics.json.
    Eval(Common),
    /// Every stage end to end, plus report.json.
    Run(Common),
    /// Write a synthetic scene, its sidecar, and queries into --out.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Layout::Random)]
        layout: Layout,
    },
}

fn need<'a>(p: &'a Option<PathBuf>, flag: &str, cmd: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| PgError::Config(format!("`pg {cmd}` needs --{flag}")))
}

fn setup(c: &Common) -> Result<Config> {
    let cfg = Config::load(c.config.as_deref())?;
    if cfg.run.workers > 0 {
        // Fails only if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.run.workers)
            .build_global();
    }
    pl::ensure_dir(&c.out)?;
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Place(c) => place(c),
        Command::Render(c) => render(c),
        Command::Ground(c) => ground(c),
        Command::Aggregate(c) => aggregate(c),
        Command::GenQa(c) => gen_qa(c),
        Command::Eval(c) => eval(c),
        Command::Run(c) => run(c),
        Command::Synth { common, seed, layout } => synth(common, *seed, *layout),
    }
}

fn place(c: &Common) -> Result<()> {
    let cfg = setup(c)?;
    let scene_path = need(&c.scene, "scene", "place")?;
    let scene = load_scene(scene_path)?;
    let trajectory = load_scene_trajectory(scene_path)?;
    let (views, summary) = pl::place_viewpoints(&cfg, &scene, &trajectory)?;
    log::info!(
        "{} cameras over {} candidates, coverage {:.3}",
        summary.cameras,
        summary.candidates,
        summary.coverage
    );
    pl::write_json(&pl::out_path(&c.out, pl::VIEWPOINTS_FILE), &views)
}

fn render(c: &Common) -> Result<()> {
    let cfg = setup(c)?;
    let scene = load_scene(need(&c.scene, "scene", "render")?)?;
    let views = pl::load_viewpoints(&c.out)?;
    let bundles = pl::render_bundles(&cfg, &scene, &views)?;
    pl::save_bundles(&c.out, &bundles)
}

fn ground(c: &Common) -> Result<()> {
    let cfg = setup(c)?;
    let queries = pl::read_queries(need(&c.queries, "queries", "ground")?)?;
    // Instance classes only matter for the oracle's distractor noise.
    let classes = match &c.scene {
        Some(p) => load_scene(p)?.instances(),
        None => Default::default(),
    };
    let views = pl::load_viewpoints(&c.out)?;
    let bundles = pl::load_bundles(&c.out, &views)?;
    let grounder = pl::make_grounder(&cfg, classes);
    let preds: Vec<QueryPredictions> = pl::ground_queries(&cfg, grounder.as_ref(), &bundles, &queries)?
        .into_iter()
        .map(|(p, _)| p)
        .collect();
    pl::write_jsonl(&pl::out_path(&c.out, pl::PREDICTIONS_FILE), &preds)
}

fn aggregate(c: &Common) -> Result<()> {
    let cfg = setup(c)?;
    let targets = match &c.queries {
        Some(p) => pl::read_queries(p)?
            .into_iter()
            .map(|q| (q.query_id, q.target_instance))
            .collect(),
        None => Default::default(),
    };
    let views = pl::load_viewpoints(&c.out)?;
    let bundles = pl::load_bundles(&c.out, &views)?;
    let preds: Vec<QueryPredictions> = pl::read_jsonl(&pl::out_path(&c.out, pl::PREDICTIONS_FILE))?;
    let results: Vec<QueryResult> = pl::aggregate_queries(&cfg, &bundles, &preds, &targets)?
        .into_iter()
        .map(|(r, _)| r)
        .collect();
    pl::write_jsonl(&pl::out_path(&c.out, pl::RESULTS_FILE), &results)
}

fn gen_qa(c: &Common) -> Result<()> {
    let cfg = setup(c)?;
    let views = pl::load_viewpoints(&c.out)?;
    let bundles = pl::load_bundles(&c.out, &views)?;
    let samples = pl::generate_qa_all(&cfg, &bundles)?;
    pl::write_jsonl(&pl::out_path(&c.out, pl::QA_FILE), &samples)
}

fn eval(c: &Common) -> Result<()> {
    let cfg = setup(c)?;
    let scene = load_scene(need(&c.scene, "scene", "eval")?)?;
    let queries = pl::read_queries(need(&c.queries, "queries", "eval")?)?;
    let results: Vec<QueryResult> = pl::read_jsonl(&pl::out_path(&c.out, pl::RESULTS_FILE))?;
    let metrics = pl::evaluate(&cfg, &scene, &queries, &results)?;
    for t in &metrics.acc {
        println!(
            "Acc@{}: overall {:.4} unique {} multiple {} (n={})",
            t.threshold,
            t.overall,
            fmt_opt(t.unique),
            fmt_opt(t.multiple),
            t.n
        );
    }
    pl::write_json(&pl::out_path(&c.out, pl::METRICS_FILE), &metrics)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

fn run(c: &Common) -> Result<()> {
    let cfg = setup(c)?;
    let t = Instant::now();
    let scene_path = need(&c.scene, "scene", "run")?;
    let scene = load_scene(scene_path)?;
    let trajectory = load_scene_trajectory(scene_path)?;
    let queries = pl::read_queries(need(&c.queries, "queries", "run")?)?;
    let load_s = t.elapsed().as_secs_f64();
    let mut out = pl::run_pipeline(&cfg, &scene, &trajectory, &queries)?;
    out.report.timings_s.total += load_s;
    pl::save_run(&c.out, &out)?;
    for a in &out.report.metrics.acc {
        println!("Acc@{}: {:.4} over {} queries", a.threshold, a.overall, a.n);
    }
    Ok(())
}

fn synth(c: &Common, seed: u64, layout: Layout) -> Result<()> {
    pl::ensure_dir(&c.out)?;
    let spec = match layout {
        Layout::Random => random_room_spec(seed, &RandomRoomParams::default()),
        Layout::TwoRoom => two_room_spec(seed, RandomRoomParams::default().density),
    };
    let s = make_synth_scene(&spec).map_err(|source| PgError::Scene {
        path: c.out.clone(),
        source,
    })?;
    let scene_path = c.out.join("scene.pgs");
    save_scene(&scene_path, &s.scene)?;
    let mut sidecar = Sidecar::from_trajectory(&s.trajectory);
    sidecar.meta.insert("seed".into(), seed.into());
    sidecar.meta.insert(
        "class_names".into(),
        serde_json::to_value(&s.class_names).expect("serializable"),
    );
    sidecar.meta.insert(
        "instance_boxes".into(),
        serde_json::to_value(&s.instance_boxes).expect("serializable"),
    );
    save_sidecar(&sidecar_path(&scene_path), &sidecar)?;
    let queries: Vec<_> = s.queries.iter().map(|q| q.query.clone()).collect();
    pl::write_jsonl(&c.out.join("queries.jsonl"), &queries)
}
