//! Per-token modality injection: `x_n + zero_map(mlp(f_n))`.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdapterError {
    #[error("token count {tokens} does not match feature count {features}")]
    LengthMismatch { tokens: usize, features: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("dimensions must be >= 1")]
    InvalidDims,
    #[error("layer index {layer} outside 1..={layers}")]
    LayerOutOfRange { layer: usize, layers: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Silu,
    Gelu,
}

impl Activation {
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Silu => x / (1.0 + (-x).exp()),
            Activation::Gelu => {
                // tanh approximation
                let c = 0.797_884_6_f32;
                0.5 * x * (1.0 + (c * (x + 0.044_715 * x * x * x)).tanh())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModalityKind {
    Geometric,
    Semantic,
}

impl ModalityKind {
    /// Inclusive 1-based layer range receiving this modality in an `L`-layer stack.
    pub fn layer_range(self, layers: usize) -> (usize, usize) {
        match self {
            ModalityKind::Geometric => (layers.div_ceil(3), 2 * layers / 3),
            ModalityKind::Semantic => ((2 * layers).div_ceil(3), layers),
        }
    }

    pub fn injects_at(self, layer: usize, layers: usize) -> bool {
        let (lo, hi) = self.layer_range(layers);
        layer >= lo && layer <= hi
    }
}

/// Row-major `rows × cols` matrix with bias, `y = W x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Linear {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weight: alloc::vec![0.0; rows * cols],
            bias: alloc::vec![0.0; rows],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut l = Self::zeros(n, n);
        for i in 0..n {
            l.weight[i * n + i] = 1.0;
        }
        l
    }

    fn uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (cols as f32).sqrt();
        let mut l = Self::zeros(rows, cols);
        for w in l.weight.iter_mut().chain(l.bias.iter_mut()) {
            *w = rng.random_range(-bound..=bound);
        }
        l
    }

    pub fn apply(&self, x: &[f32], out: &mut [f32]) {
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.weight[r * self.cols..(r + 1) * self.cols];
            *o = self.bias[r] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f32>();
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdapterParams {
    pub hidden: Linear,
    pub output: Linear,
    pub activation: Activation,
    /// Identity when `None` is not allowed; exactly zero at init.
    pub zero_map: Linear,
}

impl AdapterParams {
    pub fn d_m(&self) -> usize {
        self.hidden.cols
    }

    pub fn d_model(&self) -> usize {
        self.zero_map.rows
    }

    /// `mlp(f)`, the pre-mixing injection term.
    pub fn mlp(&self, f: &[f32]) -> Vec<f32> {
        let mut h = alloc::vec![0.0; self.hidden.rows];
        self.hidden.apply(f, &mut h);
        for v in &mut h {
            *v = self.activation.apply(*v);
        }
        let mut o = alloc::vec![0.0; self.output.rows];
        self.output.apply(&h, &mut o);
        o
    }
}

pub fn init_adapter(
    d_m: usize,
    d_h: usize,
    d_model: usize,
    activation: Activation,
    seed: u64,
) -> Result<AdapterParams, AdapterError> {
    if d_m == 0 || d_h == 0 || d_model == 0 {
        return Err(AdapterError::InvalidDims);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(AdapterParams {
        hidden: Linear::uniform(d_h, d_m, &mut rng),
        output: Linear::uniform(d_model, d_h, &mut rng),
        activation,
        zero_map: Linear::zeros(d_model, d_model),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence {
    pub d_model: usize,
    /// `N × d_model`, row-major.
    pub tokens: Vec<f32>,
    /// 1-based.
    pub layer_index: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len() / self.d_model.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModalityFeatureMap {
    pub kind: ModalityKind,
    pub d_m: usize,
    /// `N × d_m`, row-major.
    pub values: Vec<f32>,
}

impl ModalityFeatureMap {
    pub fn len(&self) -> usize {
        self.values.len() / self.d_m.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Applies the injection at `x.layer_index` of an `layers`-deep stack;
/// layers outside the modality's range pass `x` through unchanged.
pub fn adapter_forward(
    x: &TokenSequence,
    f: &ModalityFeatureMap,
    p: &AdapterParams,
    layers: usize,
) -> Result<TokenSequence, AdapterError> {
    if x.layer_index == 0 || x.layer_index > layers {
        return Err(AdapterError::LayerOutOfRange {
            layer: x.layer_index,
            layers,
        });
    }
    if x.d_model != p.d_model() {
        return Err(AdapterError::DimensionMismatch {
            expected: p.d_model(),
            found: x.d_model,
        });
    }
    if f.d_m != p.d_m() {
        return Err(AdapterError::DimensionMismatch {
            expected: p.d_m(),
            found: f.d_m,
        });
    }
    if x.len() != f.len() {
        return Err(AdapterError::LengthMismatch {
            tokens: x.len(),
            features: f.len(),
        });
    }
    let mut out = x.clone();
    if !f.kind.injects_at(x.layer_index, layers) {
        return Ok(out);
    }
    let d = x.d_model;
    let mut mixed = alloc::vec![0.0; d];
    for (n, token) in out.tokens.chunks_mut(d).enumerate() {
        let h = p.mlp(&f.values[n * f.d_m..(n + 1) * f.d_m]);
        p.zero_map.apply(&h, &mut mixed);
        for (t, m) in token.iter_mut().zip(&mixed) {
            *t += m;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn random_inputs(n: usize, d_m: usize, d_model: usize, seed: u64) -> (TokenSequence, ModalityFeatureMap) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tokens = (0..n * d_model).map(|_| rng.random_range(-3.0..3.0)).collect();
        let values = (0..n * d_m).map(|_| rng.random_range(-3.0..3.0)).collect();
        (
            TokenSequence {
                d_model,
                tokens,
                layer_index: 6,
            },
            ModalityFeatureMap {
                kind: ModalityKind::Geometric,
                d_m,
                values,
            },
        )
    }

    #[test]
    fn fresh_params_are_identity() {
        for seed in 0..5 {
            let p = init_adapter(3, 8, 4, Activation::Gelu, seed).unwrap();
            assert!(p.zero_map.weight.iter().chain(&p.zero_map.bias).all(|&w| w == 0.0));
            let (x, f) = random_inputs(10, 3, 4, seed + 100);
            let y = adapter_forward(&x, &f, &p, 12).unwrap();
            assert_eq!(y, x);
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_adapter(2, 5, 3, Activation::Silu, 9).unwrap();
        let b = init_adapter(2, 5, 3, Activation::Silu, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init_adapter(2, 5, 3, Activation::Silu, 10).unwrap());
    }

    #[test]
    fn scalar_shapes() {
        let p = init_adapter(1, 4, 1, Activation::Silu, 0).unwrap();
        assert_eq!((p.hidden.cols, p.hidden.rows, p.output.rows), (1, 4, 1));
        assert_eq!(p.zero_map.weight, vec![0.0]);
        assert_eq!(
            init_adapter(0, 4, 1, Activation::Silu, 0),
            Err(AdapterError::InvalidDims)
        );
    }

    #[test]
    fn linear_composition() {
        // mlp(f) = M f with an identity hidden layer and a linear activation stand-in.
        let mut p = init_adapter(2, 2, 2, Activation::Silu, 0).unwrap();
        p.hidden = Linear::identity(2);
        p.output = Linear {
            rows: 2,
            cols: 2,
            weight: vec![1.0, 2.0, 0.0, -1.0],
            bias: vec![0.0; 2],
        };
        p.zero_map = Linear::identity(2);
        let x = TokenSequence {
            d_model: 2,
            tokens: vec![0.5, 0.25],
            layer_index: 5,
        };
        let f = ModalityFeatureMap {
            kind: ModalityKind::Geometric,
            d_m: 2,
            values: vec![1.0, 2.0],
        };
        let y = adapter_forward(&x, &f, &p, 12).unwrap();
        let h = [Activation::Silu.apply(1.0), Activation::Silu.apply(2.0)];
        assert!((y.tokens[0] - (0.5 + h[0] + 2.0 * h[1])).abs() < 1e-6);
        assert!((y.tokens[1] - (0.25 - h[1])).abs() < 1e-6);
    }

    #[test]
    fn doubling_zero_map_doubles_injection() {
        let mut p = init_adapter(3, 6, 4, Activation::Gelu, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for w in &mut p.zero_map.weight {
            *w = rng.random_range(-1.0..1.0);
        }
        let (x, f) = random_inputs(5, 3, 4, 7);
        let y1 = adapter_forward(&x, &f, &p, 12).unwrap();
        for w in &mut p.zero_map.weight {
            *w *= 2.0;
        }
        let y2 = adapter_forward(&x, &f, &p, 12).unwrap();
        for ((a, b), x0) in y1.tokens.iter().zip(&y2.tokens).zip(&x.tokens) {
            let (d1, d2) = (a - x0, b - x0);
            assert!((d2 - 2.0 * d1).abs() <= 1e-4 * (1.0 + d1.abs()));
        }
    }

    #[test]
    fn routing_ranges() {
        assert_eq!(ModalityKind::Geometric.layer_range(12), (4, 8));
        assert_eq!(ModalityKind::Semantic.layer_range(12), (8, 12));
        assert_eq!(ModalityKind::Geometric.layer_range(10), (4, 6));
        assert_eq!(ModalityKind::Semantic.layer_range(10), (7, 10));
        let mut p = init_adapter(3, 6, 4, Activation::Gelu, 1).unwrap();
        p.zero_map = Linear::identity(4);
        let (mut x, f) = random_inputs(5, 3, 4, 7);
        x.layer_index = 1;
        assert_eq!(adapter_forward(&x, &f, &p, 12).unwrap(), x);
        x.layer_index = 4;
        assert_ne!(adapter_forward(&x, &f, &p, 12).unwrap(), x);
        x.layer_index = 13;
        assert!(adapter_forward(&x, &f, &p, 12).is_err());
    }

    #[test]
    fn length_mismatch() {
        let p = init_adapter(3, 6, 4, Activation::Gelu, 1).unwrap();
        let (x, mut f) = random_inputs(5, 3, 4, 7);
        f.values.truncate(12);
        assert_eq!(
            adapter_forward(&x, &f, &p, 12),
            Err(AdapterError::LengthMismatch { tokens: 5, features: 4 })
        );
    }
}
