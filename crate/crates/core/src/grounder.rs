//! 2D grounding boundary: digit codec, prompt, oracle grounder, and
//! rotation-consensus test-time augmentation.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{tight_box_on_ring, PixelBox};
use crate::panorama::{yaw_shift, PanoramaBundle};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroundError {
    #[error("box ({x1},{y1},{x2},{y2}) outside a {width}x{height} panorama")]
    BoxOutOfRange {
        x1: u32,
        y1: u32,
        x2: u32,
        y2: u32,
        width: u32,
        height: u32,
    },
    #[error("digit {0} is not a decimal digit")]
    BadDigit(u8),
    #[error("query text is empty")]
    EmptyText,
    #[error("invalid noise model: {0}")]
    InvalidNoise(&'static str),
    #[error("oracle grounding needs a target instance for query {0}")]
    MissingTarget(String),
    #[error("remote endpoint unreachable: {0}")]
    Transport(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundingQuery {
    pub query_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_instance: Option<u32>,
}

/// Box as four 3-digit tokens (x1, y1, x2, y2) plus its decoded pixel box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DigitBox {
    pub digits: [[u8; 3]; 4],
    pub pixel: PixelBox,
}

impl DigitBox {
    pub fn values(&self) -> [u16; 4] {
        self.digits.map(digits_to_value)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionSource {
    Oracle,
    Remote,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewPrediction {
    pub view_id: u32,
    #[serde(rename = "box")]
    pub digit_box: Option<DigitBox>,
    pub confidence: Option<f64>,
    pub source: PredictionSource,
}

impl ViewPrediction {
    pub fn pixel_box(&self) -> Option<PixelBox> {
        self.digit_box.map(|b| b.pixel)
    }
}

pub fn encode_value(v: u32, size: u32) -> u16 {
    if size <= 1 {
        return 0;
    }
    (f64::from(v) / f64::from(size - 1) * 999.0).round() as u16
}

pub fn decode_value(n: u16, size: u32) -> u32 {
    (f64::from(n) / 999.0 * f64::from(size.saturating_sub(1))).round() as u32
}

pub fn value_to_digits(n: u16) -> [u8; 3] {
    [(n / 100) as u8, (n / 10 % 10) as u8, (n % 10) as u8]
}

pub fn digits_to_value(d: [u8; 3]) -> u16 {
    u16::from(d[0]) * 100 + u16::from(d[1]) * 10 + u16::from(d[2])
}

pub fn encode_box_digits(b: &PixelBox, width: u32, height: u32) -> Result<DigitBox, GroundError> {
    if b.x1 > b.x2 || b.y1 > b.y2 || b.x2 >= width || b.y2 >= height {
        return Err(GroundError::BoxOutOfRange {
            x1: b.x1,
            y1: b.y1,
            x2: b.x2,
            y2: b.y2,
            width,
            height,
        });
    }
    let values = [
        encode_value(b.x1, width),
        encode_value(b.y1, height),
        encode_value(b.x2, width),
        encode_value(b.y2, height),
    ];
    digit_box_from_values(values, width, height)
}

/// Decodes four digit triples; corners are sorted so `x1 ≤ x2`, `y1 ≤ y2`.
pub fn decode_digit_tokens(digits: &[[u8; 3]; 4], width: u32, height: u32) -> Result<PixelBox, GroundError> {
    if let Some(&bad) = digits.iter().flatten().find(|&&d| d > 9) {
        return Err(GroundError::BadDigit(bad));
    }
    let v = digits.map(digits_to_value);
    Ok(PixelBox::from_corners(
        decode_value(v[0], width),
        decode_value(v[1], height),
        decode_value(v[2], width),
        decode_value(v[3], height),
    ))
}

/// Builds a [`DigitBox`] from coordinate values in `[0, 999]`, sorting corners.
pub fn digit_box_from_values(values: [u16; 4], width: u32, height: u32) -> Result<DigitBox, GroundError> {
    let [a, b, c, d] = values.map(|v| v.min(999));
    let sorted = [a.min(c), b.min(d), a.max(c), b.max(d)];
    let digits = sorted.map(value_to_digits);
    let pixel = decode_digit_tokens(&digits, width, height)?;
    Ok(DigitBox { digits, pixel })
}

pub const PROMPT_TEMPLATE: &str = "Please locate the object described as: <description>.\n\
If there are multiple, pick the most prominent.\n\
Provide the bounding box coordinates as [x1,y1,x2,y2]. Output only the coordinates.";

pub fn build_prompt(text: &str) -> Result<String, GroundError> {
    if text.is_empty() {
        return Err(GroundError::EmptyText);
    }
    Ok(PROMPT_TEMPLATE.replace("<description>", text))
}

/// First `[a,b,c,d]` group of non-negative integers in `text`.
pub fn parse_box_text(text: &str) -> Option<[u16; 4]> {
    let mut rest = text;
    while let Some(open) = rest.find('[') {
        let after = &rest[open + 1..];
        let close = after.find(']')?;
        let parts: Vec<&str> = after[..close].split(',').map(str::trim).collect();
        if parts.len() == 4 {
            let nums: Option<Vec<u16>> = parts
                .iter()
                .map(|p| p.parse::<u16>().ok().filter(|&v| v <= 999))
                .collect();
            if let Some(n) = nums {
                return Some([n[0], n[1], n[2], n[3]]);
            }
        }
        rest = &after[close + 1..];
    }
    None
}

pub fn format_box_text(values: [u16; 4]) -> String {
    let mut s = String::new();
    let _ = write!(s, "[{},{},{},{}]", values[0], values[1], values[2], values[3]);
    s
}

/// Perturbations applied by the oracle: miss, distractor swap, jitter, in that order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    pub jitter_sigma: f64,
    pub miss_rate: f64,
    pub distractor_rate: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            jitter_sigma: 0.0,
            miss_rate: 0.0,
            distractor_rate: 0.0,
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<(), GroundError> {
        if !(0.0..=1.0).contains(&self.miss_rate) || !(0.0..=1.0).contains(&self.distractor_rate) {
            return Err(GroundError::InvalidNoise("rates must lie in [0, 1]"));
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return Err(GroundError::InvalidNoise("jitter_sigma must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn is_noiseless(&self) -> bool {
        self.jitter_sigma == 0.0 && self.miss_rate == 0.0 && self.distractor_rate == 0.0
    }
}

/// FNV-1a over the bytes of `parts`.
pub fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in *part {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Anything that turns a panorama and a query into a per-view prediction.
pub trait Grounder: Sync {
    fn ground(
        &self,
        bundle: &PanoramaBundle,
        view_id: u32,
        query: &GroundingQuery,
    ) -> Result<ViewPrediction, GroundError>;
}

/// Tight box of the pixels labeled `instance`, seam pieces resolved by
/// [`tight_box_on_ring`].
pub fn instance_box(bundle: &PanoramaBundle, instance: u32) -> Option<PixelBox> {
    let w = bundle.width;
    let pixels = bundle
        .instance
        .iter()
        .enumerate()
        .filter(move |(_, &id)| id == instance)
        .map(move |(i, _)| ((i as u32) % w, (i as u32) / w));
    tight_box_on_ring(pixels, w)
}

/// Grounds queries by reading the instance raster.
#[derive(Clone, Debug, Default)]
pub struct OracleGrounder {
    pub noise: NoiseModel,
    /// Instance → class, used to pick same-class distractors.
    pub classes: BTreeMap<u32, u32>,
}

impl OracleGrounder {
    pub fn new(noise: NoiseModel, classes: BTreeMap<u32, u32>) -> Self {
        Self { noise, classes }
    }

    fn rng(&self, query_id: &str, view_id: u32, shift: i64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.noise.seed);
        rng.set_stream(fnv1a(&[
            query_id.as_bytes(),
            &view_id.to_le_bytes(),
            &shift.to_le_bytes(),
        ]));
        rng
    }

    fn distractors(&self, bundle: &PanoramaBundle, target: u32) -> Vec<u32> {
        let Some(&class) = self.classes.get(&target) else {
            return Vec::new();
        };
        let mut visible: Vec<u32> = bundle
            .instance
            .iter()
            .copied()
            .filter(|&i| i != 0 && i != target)
            .collect();
        visible.sort_unstable();
        visible.dedup();
        visible.retain(|i| self.classes.get(i) == Some(&class));
        visible
    }
}

impl Grounder for OracleGrounder {
    fn ground(
        &self,
        bundle: &PanoramaBundle,
        view_id: u32,
        query: &GroundingQuery,
    ) -> Result<ViewPrediction, GroundError> {
        let target = query
            .target_instance
            .ok_or_else(|| GroundError::MissingTarget(query.query_id.clone()))?;
        let absent = ViewPrediction {
            view_id,
            digit_box: None,
            confidence: None,
            source: PredictionSource::Oracle,
        };
        let Some(mut b) = instance_box(bundle, target) else {
            return Ok(absent);
        };
        if !self.noise.is_noiseless() {
            let mut rng = self.rng(&query.query_id, view_id, bundle.yaw_shift_applied);
            if rng.random_bool(self.noise.miss_rate) {
                return Ok(absent);
            }
            if rng.random_bool(self.noise.distractor_rate) {
                let d = self.distractors(bundle, target);
                if !d.is_empty() {
                    let pick = d[rng.random_range(0..d.len())];
                    b = instance_box(bundle, pick).expect("distractor is visible");
                }
            }
            if self.noise.jitter_sigma > 0.0 {
                let normal = Normal::new(0.0, self.noise.jitter_sigma).expect("validated sigma");
                let mut jit = |v: u32, max: u32| {
                    let x = f64::from(v) + normal.sample(&mut rng);
                    x.round().clamp(0.0, f64::from(max - 1)) as u32
                };
                let (w, h) = (bundle.width, bundle.height);
                b = PixelBox::from_corners(jit(b.x1, w), jit(b.y1, h), jit(b.x2, w), jit(b.y2, h));
            }
        }
        let digit_box = encode_box_digits(&b, bundle.width, bundle.height)?;
        Ok(ViewPrediction {
            view_id,
            digit_box: Some(digit_box),
            confidence: None,
            source: PredictionSource::Oracle,
        })
    }
}

/// Column shift used for rotation `r` of `n` on a `width`-column panorama.
pub fn rotation_shift(r: u32, n: u32, width: u32) -> i64 {
    (u64::from(r) * u64::from(width) / u64::from(n.max(1))) as i64
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Combines per-rotation boxes already expressed in the canonical frame.
///
/// Boxes are linked when IoU ≥ 0.5 and the largest connected cluster wins
/// (ties to the cluster holding the lowest rotation). The returned member is
/// the one whose center is nearest the cluster's median center.
pub fn consensus(boxes: &[Option<PixelBox>]) -> Option<(PixelBox, usize)> {
    let present: Vec<(usize, PixelBox)> = boxes
        .iter()
        .enumerate()
        .filter_map(|(i, b)| b.map(|b| (i, b)))
        .collect();
    if present.is_empty() {
        return None;
    }
    let n = present.len();
    let mut label: Vec<usize> = (0..n).collect();
    fn find(label: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while label[r] != r {
            r = label[r];
        }
        label[i] = r;
        r
    }
    for i in 0..n {
        for j in i + 1..n {
            if present[i].1.iou(&present[j].1) >= 0.5 {
                let (a, b) = (find(&mut label, i), find(&mut label, j));
                label[a.max(b)] = a.min(b);
            }
        }
    }
    let roots: Vec<usize> = (0..n).map(|i| find(&mut label, i)).collect();
    // Roots are the lowest member index, so ascending scan breaks ties by rotation.
    let mut best_root = roots[0];
    let mut best_size = 0;
    for &r in &roots {
        let size = roots.iter().filter(|&&x| x == r).count();
        if size > best_size || (size == best_size && r < best_root) {
            best_root = r;
            best_size = size;
        }
    }
    let members: Vec<(usize, PixelBox)> = (0..n).filter(|&i| roots[i] == best_root).map(|i| present[i]).collect();
    let mu = median(members.iter().map(|(_, b)| b.center().0).collect());
    let mv = median(members.iter().map(|(_, b)| b.center().1).collect());
    let chosen = members
        .iter()
        .min_by(|a, b| {
            let da = (a.1.center().0 - mu).powi(2) + (a.1.center().1 - mv).powi(2);
            let db = (b.1.center().0 - mu).powi(2) + (b.1.center().1 - mv).powi(2);
            da.total_cmp(&db).then(a.0.cmp(&b.0))
        })
        .expect("non-empty cluster");
    Some((chosen.1, members.len()))
}

/// Grounds `n` circularly shifted copies and returns their consensus.
pub fn tta_consensus<G: Grounder + ?Sized>(
    bundle: &PanoramaBundle,
    view_id: u32,
    query: &GroundingQuery,
    grounder: &G,
    n_rotations: u32,
) -> Result<ViewPrediction, GroundError> {
    if n_rotations <= 1 {
        return grounder.ground(bundle, view_id, query);
    }
    let mut canonical = Vec::with_capacity(n_rotations as usize);
    let mut source = PredictionSource::Oracle;
    for r in 0..n_rotations {
        let k = rotation_shift(r, n_rotations, bundle.width);
        let shifted = yaw_shift(bundle, k);
        let pred = grounder.ground(&shifted, view_id, query)?;
        source = pred.source;
        canonical.push(pred.pixel_box().and_then(|b| b.shift_columns(-k, bundle.width)));
    }
    let Some((b, size)) = consensus(&canonical) else {
        return Ok(ViewPrediction {
            view_id,
            digit_box: None,
            confidence: Some(0.0),
            source,
        });
    };
    Ok(ViewPrediction {
        view_id,
        digit_box: Some(encode_box_digits(&b, bundle.width, bundle.height)?),
        confidence: Some(size as f64 / f64::from(n_rotations)),
        source,
    })
}

impl core::fmt::Display for PredictionSource {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            PredictionSource::Oracle => "oracle",
            PredictionSource::Remote => "remote",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec3;
    #[test]
    fn codec_examples() {
        assert_eq!(encode_value(0, 490), 0);
        assert_eq!(encode_value(489, 490), 999);
        assert_eq!(encode_value(245, 490), 501);
        assert_eq!(value_to_digits(501), [5, 0, 1]);
        assert_eq!(decode_value(0, 490), 0);
        assert_eq!(decode_value(999, 490), 489);
    }

    #[test]
    fn codec_identity_on_digit_space() {
        for size in [1000u32, 1200, 2048] {
            for n in 0..=999u16 {
                assert_eq!(encode_value(decode_value(n, size), size), n, "size {size}, n {n}");
            }
        }
        // Narrower axes have fewer pixels than codes; the pixel side is exact instead.
        for v in 0..490 {
            assert_eq!(decode_value(encode_value(v, 490), 490), v);
        }
        assert!((0..=999u16).any(|n| encode_value(decode_value(n, 490), 490) != n));
    }

    #[test]
    fn codec_monotone() {
        let mut prev = 0;
        for v in 0..490 {
            let e = encode_value(v, 490);
            assert!(e >= prev);
            prev = e;
        }
    }

    #[test]
    fn box_round_trip_and_range() {
        let b = PixelBox::from_corners(10, 30, 20, 40);
        let d = encode_box_digits(&b, 490, 490).unwrap();
        assert_eq!(d.pixel, b);
        assert!(encode_box_digits(&PixelBox::from_corners(0, 0, 490, 3), 490, 490).is_err());
        assert!(decode_digit_tokens(&[[0, 0, 10], [0; 3], [0; 3], [0; 3]], 490, 490).is_err());
    }

    #[test]
    fn prompt_template() {
        let p = build_prompt("the red chair").unwrap();
        assert!(p.contains("locate the object described as: the red chair"));
        assert!(p.contains("[x1,y1,x2,y2]"));
        assert_eq!(build_prompt(""), Err(GroundError::EmptyText));
        assert!(build_prompt("a\nb").unwrap().contains("a\nb"));
    }

    #[test]
    fn parse_responses() {
        assert_eq!(parse_box_text("[10,30,20,40]"), Some([10, 30, 20, 40]));
        assert_eq!(parse_box_text("box: [ 1, 2 ,3,4 ] ok"), Some([1, 2, 3, 4]));
        assert_eq!(parse_box_text("I cannot find it"), None);
        assert_eq!(parse_box_text("[1,2,3]"), None);
        assert_eq!(parse_box_text("[a] then [5,6,7,8]"), Some([5, 6, 7, 8]));
        assert_eq!(parse_box_text("[1000,0,0,0]"), None);
    }

    fn bundle_with_block(x: (u32, u32), y: (u32, u32), id: u32) -> PanoramaBundle {
        let mut b = PanoramaBundle::empty(Vec3::zeros(), 0.0, 100, 60);
        for v in y.0..=y.1 {
            for u in x.0..=x.1 {
                let i = b.index(u, v);
                b.instance[i] = id;
                b.range[i] = 2.0;
            }
        }
        b
    }

    fn query(target: u32) -> GroundingQuery {
        GroundingQuery {
            query_id: "q0".into(),
            text: "the chair".into(),
            target_instance: Some(target),
        }
    }

    #[test]
    fn oracle_tight_box() {
        let b = bundle_with_block((10, 20), (30, 40), 5);
        let g = OracleGrounder::default();
        let p = g.ground(&b, 0, &query(5)).unwrap();
        assert_eq!(p.pixel_box(), Some(PixelBox::from_corners(10, 30, 20, 40)));
        assert_eq!(g.ground(&b, 0, &query(6)).unwrap().digit_box, None);
        assert_eq!(g.ground(&b, 0, &query(5)).unwrap(), p);
    }

    #[test]
    fn noisy_oracle_is_reproducible() {
        let b = bundle_with_block((10, 20), (30, 40), 5);
        let g = OracleGrounder::new(
            NoiseModel {
                jitter_sigma: 3.0,
                miss_rate: 0.2,
                distractor_rate: 0.0,
                seed: 7,
            },
            BTreeMap::new(),
        );
        for view in 0..20 {
            assert_eq!(
                g.ground(&b, view, &query(5)).unwrap(),
                g.ground(&b, view, &query(5)).unwrap()
            );
        }
    }

    #[test]
    fn distractor_swaps_to_same_class() {
        let mut b = bundle_with_block((10, 20), (30, 40), 5);
        for u in 60..70 {
            let i = b.index(u, 10);
            b.instance[i] = 9;
        }
        let classes = BTreeMap::from([(5, 1), (9, 1)]);
        let g = OracleGrounder::new(
            NoiseModel {
                distractor_rate: 1.0,
                ..Default::default()
            },
            classes,
        );
        assert_eq!(
            g.ground(&b, 0, &query(5)).unwrap().pixel_box(),
            Some(PixelBox::from_corners(60, 10, 69, 10))
        );
    }

    #[test]
    fn tta_noiseless_agrees() {
        let b = bundle_with_block((10, 20), (30, 40), 5);
        let g = OracleGrounder::default();
        let p = tta_consensus(&b, 0, &query(5), &g, 4).unwrap();
        assert_eq!(p.pixel_box(), Some(PixelBox::from_corners(10, 30, 20, 40)));
        assert_eq!(p.confidence, Some(1.0));
        assert_eq!(
            tta_consensus(&b, 0, &query(5), &g, 1).unwrap(),
            g.ground(&b, 0, &query(5)).unwrap()
        );
    }

    struct Scripted;
    impl Grounder for Scripted {
        fn ground(
            &self,
            bundle: &PanoramaBundle,
            view_id: u32,
            _q: &GroundingQuery,
        ) -> Result<ViewPrediction, GroundError> {
            let k = bundle.yaw_shift_applied;
            let canonical = if k == 50 {
                PixelBox::from_corners(70, 0, 80, 5)
            } else {
                PixelBox::from_corners(10, 30, 20, 40)
            };
            let b = canonical.shift_columns(k, bundle.width).unwrap();
            Ok(ViewPrediction {
                view_id,
                digit_box: Some(encode_box_digits(&b, bundle.width, bundle.height)?),
                confidence: None,
                source: PredictionSource::Remote,
            })
        }
    }

    #[test]
    fn tta_majority() {
        let b = bundle_with_block((10, 20), (30, 40), 5);
        let p = tta_consensus(&b, 3, &query(5), &Scripted, 4).unwrap();
        assert_eq!(p.pixel_box(), Some(PixelBox::from_corners(10, 30, 20, 40)));
        assert_eq!(p.confidence, Some(0.75));
        assert_eq!(p.source, PredictionSource::Remote);
    }

    #[test]
    fn consensus_order_invariant() {
        let (pa, pb) = (
            PixelBox::from_corners(10, 10, 20, 20),
            PixelBox::from_corners(11, 10, 21, 20),
        );
        let (a, b) = (Some(pa), Some(pb));
        let c = Some(PixelBox::from_corners(60, 10, 70, 20));
        let fwd = consensus(&[a, b, c, None]).unwrap();
        let rev = consensus(&[None, c, b, a]).unwrap();
        assert_eq!(fwd.1, 2);
        assert_eq!(rev.1, 2);
        assert!(fwd.0 == pa || fwd.0 == pb);
        assert_eq!(consensus(&[None, None]), None);
    }
}
