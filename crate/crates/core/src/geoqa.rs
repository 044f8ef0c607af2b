//! Geometric QA samples from rendered panoramas: which of two marked pixels
//! is closer along range or a world axis.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panorama::{unproject_pixel, PanoramaBundle};

pub const DEFAULT_MIN_MARGIN: f64 = 0.10;
pub const PROMPT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoQaError {
    #[error("sampling exhausted after {attempts} attempts ({found} of {wanted} samples)")]
    SamplingExhausted {
        attempts: usize,
        found: usize,
        wanted: usize,
    },
    #[error("min_margin must be positive")]
    InvalidMargin,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Range,
    X,
    Y,
    Z,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Range => "range",
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Answer {
    A,
    B,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QASample {
    pub view_id: u32,
    pub pixel_a: (u32, u32),
    pub pixel_b: (u32, u32),
    pub axis: Axis,
    pub prompt: String,
    pub answer: Answer,
    pub margin: f64,
}

pub fn qa_prompt(a: (u32, u32), b: (u32, u32), axis: Axis) -> String {
    format!(
        "Two marked points at pixels ({},{}) and ({},{}). Which is closer along {}? Answer A or B.",
        a.0,
        a.1,
        b.0,
        b.1,
        axis.name()
    )
}

/// Value compared for `axis` at a pixel; `None` without depth.
pub fn axis_value(bundle: &PanoramaBundle, pixel: (u32, u32), axis: Axis) -> Option<f64> {
    let p = unproject_pixel(bundle, pixel.0, pixel.1).ok()?;
    Some(match axis {
        Axis::Range => f64::from(bundle.range_at(pixel.0, pixel.1)),
        Axis::X => p.x,
        Axis::Y => p.y,
        Axis::Z => p.z,
    })
}

/// Recomputes `(answer, margin)` for a sample from the bundle.
pub fn recompute(bundle: &PanoramaBundle, sample: &QASample) -> Option<(Answer, f64)> {
    let a = axis_value(bundle, sample.pixel_a, sample.axis)?;
    let b = axis_value(bundle, sample.pixel_b, sample.axis)?;
    let answer = if a < b { Answer::A } else { Answer::B };
    Some((answer, (a - b).abs()))
}

/// Rejection-samples `n` pixel pairs, uniform over pixels with depth.
pub fn generate_qa(
    bundle: &PanoramaBundle,
    view_id: u32,
    n: usize,
    axis: Axis,
    min_margin: f64,
    seed: u64,
) -> Result<Vec<QASample>, GeoQaError> {
    if !(min_margin > 0.0) {
        return Err(GeoQaError::InvalidMargin);
    }
    let hits: Vec<(u32, u32)> = bundle.hit_pixels().collect();
    let budget = 1000 * n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n {
        if attempts >= budget || hits.len() < 2 {
            return Err(GeoQaError::SamplingExhausted {
                attempts,
                found: out.len(),
                wanted: n,
            });
        }
        attempts += 1;
        let a = hits[rng.random_range(0..hits.len())];
        let b = hits[rng.random_range(0..hits.len())];
        if a == b {
            continue;
        }
        let (Some(va), Some(vb)) = (axis_value(bundle, a, axis), axis_value(bundle, b, axis)) else {
            continue;
        };
        let margin = (va - vb).abs();
        if margin < min_margin {
            continue;
        }
        out.push(QASample {
            view_id,
            pixel_a: a,
            pixel_b: b,
            axis,
            prompt: qa_prompt(a, b, axis),
            answer: if va < vb { Answer::A } else { Answer::B },
            margin,
        });
    }
    Ok(out)
}

/// QA samples to mix with `n_grounding` grounding samples so QA is 1/3 of the total.
pub fn mix_schedule(n_grounding: usize) -> usize {
    n_grounding.div_ceil(2)
}
