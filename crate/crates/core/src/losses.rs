//! Digit-token cross-entropy and place-value-weighted earth mover's loss.
//!
//! Each box coordinate is emitted as three decimal digit tokens. For one
//! digit position with softmax probabilities `P(d)`, ground-truth digit `D`
//! and place weight `W`:
//!
//! ```text
//! CE  = −log P(D)
//! EMD = W Σ_d P(d) |D − d|
//! total = Σ_i CE_i + λ EMD_i
//! ```

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

pub const PROB_CLAMP: f64 = 1e-12;
pub const DEFAULT_LAMBDA: f64 = 10.0;
pub const DEFAULT_WEIGHTS: [f64; 3] = [100.0, 10.0, 1.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Per-digit EMD weighted by place value.
    #[default]
    PerDigit,
    /// EMD over the whole 3-digit value, `E|V − V'| / 999`.
    WholeNumber,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DigitDistribution {
    pub logits: [f64; 10],
    pub target: u8,
    pub weight: f64,
}

pub fn softmax(logits: &[f64; 10]) -> [f64; 10] {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p = logits.map(|l| (l - m).exp());
    let s: f64 = p.iter().sum();
    for x in &mut p {
        *x /= s;
    }
    p
}

impl DigitDistribution {
    pub fn new(logits: [f64; 10], target: u8, weight: f64) -> Self {
        assert!(target < 10, "digit target must be 0..=9");
        Self { logits, target, weight }
    }

    /// Distribution whose softmax equals `probs` (zeros map to −∞ logits).
    pub fn from_probs(probs: [f64; 10], target: u8, weight: f64) -> Self {
        Self::new(
            probs.map(|p| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY }),
            target,
            weight,
        )
    }

    pub fn probs(&self) -> [f64; 10] {
        softmax(&self.logits)
    }

    fn distances(&self) -> [f64; 10] {
        core::array::from_fn(|d| (i32::from(self.target) - d as i32).abs() as f64)
    }
}

pub fn ce_loss(dist: &DigitDistribution) -> f64 {
    -dist.probs()[dist.target as usize].max(PROB_CLAMP).ln()
}

pub fn emd_loss(dist: &DigitDistribution) -> f64 {
    let p = dist.probs();
    dist.weight * p.iter().zip(dist.distances()).map(|(p, c)| p * c).sum::<f64>()
}

pub fn total_loss(dists: &[DigitDistribution], lambda: f64) -> f64 {
    dists.iter().map(|d| ce_loss(d) + lambda * emd_loss(d)).sum()
}

/// Closed-form `∂(CE + λ EMD)/∂logits` for one digit position.
pub fn grad_logits(dist: &DigitDistribution, lambda: f64) -> [f64; 10] {
    let p = dist.probs();
    let c = dist.distances();
    let mean_c: f64 = p.iter().zip(&c).map(|(p, c)| p * c).sum();
    core::array::from_fn(|d| {
        let ce = p[d] - if d == dist.target as usize { 1.0 } else { 0.0 };
        let emd = dist.weight * p[d] * (c[d] - mean_c);
        ce + lambda * emd
    })
}

/// Splits `[0, 999]` coordinates into digit distributions targeting them.
pub fn digits_of(value: u16) -> [u8; 3] {
    [(value / 100) as u8, (value / 10 % 10) as u8, (value % 10) as u8]
}

/// `E|V − V'| / 999` where `V'` is the value formed by three independent
/// digit distributions (most significant first) and `V` is the target value.
pub fn whole_number_emd(digits: &[DigitDistribution; 3]) -> f64 {
    whole_number_terms(digits).0
}

/// Gradient of [`whole_number_emd`] with respect to each position's logits.
pub fn whole_number_grad(digits: &[DigitDistribution; 3]) -> [[f64; 10]; 3] {
    whole_number_terms(digits).1
}

fn whole_number_terms(digits: &[DigitDistribution; 3]) -> (f64, [[f64; 10]; 3]) {
    let p = digits.map(|d| d.probs());
    let target = digits.iter().fold(0i32, |v, d| v * 10 + i32::from(d.target));
    // cond[i][d] = E[|V − V'| | digit i = d]
    let mut cond = [[0.0f64; 10]; 3];
    let mut expected = 0.0;
    for a in 0..10 {
        for b in 0..10 {
            for c in 0..10 {
                let cost = (target - (a * 100 + b * 10 + c) as i32).abs() as f64 / 999.0;
                let (pa, pb, pc) = (p[0][a], p[1][b], p[2][c]);
                expected += pa * pb * pc * cost;
                cond[0][a] += pb * pc * cost;
                cond[1][b] += pa * pc * cost;
                cond[2][c] += pa * pb * cost;
            }
        }
    }
    let grad = core::array::from_fn(|i| core::array::from_fn(|d| p[i][d] * (cond[i][d] - expected)));
    (expected, grad)
}

/// Total loss over coordinate triples under the selected EMD mode.
pub fn total_loss_mode(coords: &[[DigitDistribution; 3]], lambda: f64, mode: LossMode) -> f64 {
    coords
        .iter()
        .map(|c| match mode {
            LossMode::PerDigit => total_loss(c, lambda),
            LossMode::WholeNumber => c.iter().map(ce_loss).sum::<f64>() + lambda * whole_number_emd(c),
        })
        .sum()
}

/// Central-difference gradient of `f` at `x`.
pub fn finite_difference<F: Fn(&[f64; 10]) -> f64>(f: F, x: &[f64; 10], h: f64) -> [f64; 10] {
    core::array::from_fn(|i| {
        let mut up = *x;
        let mut down = *x;
        up[i] += h;
        down[i] -= h;
        (f(&up) - f(&down)) / (2.0 * h)
    })
}

/// `‖a − b‖∞ / max(‖a‖∞, ‖b‖∞, 1e-8)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let inf = |v: &mut dyn Iterator<Item = f64>| v.fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = inf(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = inf(&mut a.iter().copied()).max(inf(&mut b.iter().copied())).max(1e-8);
    diff / scale
}

/// Worst relative error of [`grad_logits`] against central differences.
pub fn check_gradient(dist: &DigitDistribution, lambda: f64, h: f64) -> f64 {
    let analytic = grad_logits(dist, lambda);
    let numeric = finite_difference(
        |l| {
            let d = DigitDistribution { logits: *l, ..*dist };
            ce_loss(&d) + lambda * emd_loss(&d)
        },
        &dist.logits,
        h,
    );
    relative_error(&analytic, &numeric)
}

/// Digit distributions for a batch of coordinates with the given place weights.
pub fn coordinate_digits(value: u16, logits: [[f64; 10]; 3], weights: [f64; 3]) -> [DigitDistribution; 3] {
    let d = digits_of(value);
    core::array::from_fn(|i| DigitDistribution::new(logits[i], d[i], weights[i]))
}

pub fn flatten(coords: &[[DigitDistribution; 3]]) -> Vec<DigitDistribution> {
    coords.iter().flatten().copied().collect()
}
