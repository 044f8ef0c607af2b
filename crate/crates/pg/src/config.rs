//! The single TOML config shared by every command. Every section and key is
//! optional; unknown keys are rejected.

use std::path::Path;

use pg_core::aggregation::AggParams;
use pg_core::floor::RansacParams;
use pg_core::geoqa::{Axis, DEFAULT_MIN_MARGIN};
use pg_core::grounder::NoiseModel;
use pg_core::losses::{LossMode, DEFAULT_LAMBDA, DEFAULT_WEIGHTS};
use pg_core::placement::PlacementParams;
use serde::{Deserialize, Serialize};

use crate::error::{PgError, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub ransac: RansacParams,
    pub place: PlacementParams,
    pub pano: PanoConfig,
    pub loss: LossConfig,
    pub agg: AggParams,
    pub remote: RemoteConfig,
    pub ground: GroundConfig,
    pub qa: QaConfig,
    pub run: RunConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PanoConfig {
    pub width: u32,
    pub height: u32,
    /// Side of the square feature grid written to `feat_<k>.f32`.
    pub feat_grid: u32,
    pub splat_radius: Option<u32>,
    /// Range mapped to 1.0 in the normalized depth channel.
    pub depth_clip_max: f32,
}

impl Default for PanoConfig {
    fn default() -> Self {
        Self {
            width: 490,
            height: 490,
            feat_grid: 35,
            splat_radius: None,
            depth_clip_max: 10.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda: f64,
    pub weights: [f64; 3],
    pub mode: LossMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            weights: DEFAULT_WEIGHTS,
            mode: LossMode::PerDigit,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteConfig {
    /// Base URL of the grounding service, e.g. `http://127.0.0.1:8080`.
    pub endpoint: Option<String>,
    /// Base URL of the segmentation service used when `ground.mask = "remote"`.
    pub segment_endpoint: Option<String>,
    pub timeout_s: f64,
    pub max_inflight: usize,
    pub attempts: u32,
    pub backoff_s: f64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: None,
            segment_endpoint: None,
            timeout_s: 60.0,
            max_inflight: 4,
            attempts: 3,
            backoff_s: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroundMode {
    #[default]
    Oracle,
    Remote,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Depth-median pixels inside the box.
    #[default]
    Fallback,
    /// Pixels of the target instance in the instance raster.
    GroundTruth,
    Remote,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundConfig {
    pub mode: GroundMode,
    pub tta: u32,
    pub mask: MaskMode,
    pub noise: NoiseModel,
}

impl Default for GroundConfig {
    fn default() -> Self {
        Self {
            mode: GroundMode::Oracle,
            tta: 4,
            mask: MaskMode::Fallback,
            noise: NoiseModel::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QaConfig {
    pub per_view: usize,
    /// `None` cycles through all four axes.
    pub axis: Option<Axis>,
    pub min_margin: f64,
    pub seed: u64,
}

impl Default for QaConfig {
    fn default() -> Self {
        Self {
            per_view: 50,
            axis: None,
            min_margin: DEFAULT_MIN_MARGIN,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Worker threads; 0 uses one per core.
    pub workers: usize,
    pub iou_threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            workers: 0,
            iou_threshold: 0.25,
        }
    }
}

fn check(ok: bool, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(PgError::Config(msg.to_string()))
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| PgError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| PgError::io(p, e))?;
                Self::parse(&text).map_err(|e| match e {
                    PgError::Config(m) => PgError::Config(format!("{}: {m}", p.display())),
                    other => other,
                })
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ransac.validate()?;
        self.place.validate()?;
        self.ground.noise.validate()?;
        let p = &self.pano;
        check(
            p.width >= 1 && p.height >= 2,
            "pano.width must be >= 1 and pano.height >= 2",
        )?;
        check(p.feat_grid >= 1, "pano.feat_grid must be >= 1")?;
        check(p.depth_clip_max > 0.0, "pano.depth_clip_max must be > 0")?;
        check(
            self.loss.lambda >= 0.0 && self.loss.weights.iter().all(|w| *w >= 0.0),
            "loss.lambda and loss.weights must be >= 0",
        )?;
        let a = &self.agg;
        check(a.k >= 1, "agg.k must be >= 1")?;
        check(
            a.std > 0.0 && a.tau_d > 0.0 && a.tau_o >= 0.0,
            "agg.std and agg.tau_d must be > 0, agg.tau_o >= 0",
        )?;
        let r = &self.remote;
        check(
            r.timeout_s > 0.0 && r.timeout_s.is_finite(),
            "remote.timeout_s must be > 0",
        )?;
        check(r.max_inflight >= 1, "remote.max_inflight must be >= 1")?;
        check(r.attempts >= 1, "remote.attempts must be >= 1")?;
        check(
            r.backoff_s >= 0.0 && r.backoff_s.is_finite(),
            "remote.backoff_s must be >= 0",
        )?;
        check(self.ground.tta >= 1, "ground.tta must be >= 1")?;
        check(
            self.ground.mode != GroundMode::Remote || r.endpoint.is_some(),
            "ground.mode = \"remote\" needs remote.endpoint",
        )?;
        check(
            self.ground.mask != MaskMode::Remote || r.segment_endpoint.is_some(),
            "ground.mask = \"remote\" needs remote.segment_endpoint",
        )?;
        check(self.qa.min_margin > 0.0, "qa.min_margin must be > 0")?;
        check(
            self.run.iou_threshold > 0.0 && self.run.iou_threshold <= 1.0,
            "run.iou_threshold must lie in (0, 1]",
        )?;
        Ok(())
    }
}
