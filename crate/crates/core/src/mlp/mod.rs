//! Fully connected tanh network `u_θ(x, t)` (or `u_θ(x, y, t)`).
//!
//! Parameters live in one flat vector. Layer `l` contributes its weights in
//! row-major `[out][in]` order followed by its `out` biases. Hidden layers use
//! `tanh`; the output layer is affine.

mod checkpoint;
mod kernel;

pub use checkpoint::{read_checkpoint, read_checkpoint_json, write_checkpoint, write_checkpoint_json};
pub use kernel::{backprop_points, eval_points, LaneOrders, PointJets, MAX_INPUTS};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Jet, Scalar};

/// Hidden widths used throughout the experiments: nine layers of twenty.
pub const HIDDEN_LAYERS: usize = 9;
pub const HIDDEN_WIDTH: usize = 20;

/// `[n_inputs, 20 × 9, 1]`.
pub fn default_layer_sizes(n_inputs: usize) -> Vec<usize> {
    let mut s = vec![n_inputs];
    s.extend(std::iter::repeat_n(HIDDEN_WIDTH, HIDDEN_LAYERS));
    s.push(1);
    s
}

/// Σ (in·out + out) over consecutive layer pairs.
pub fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Flat parameter vector with its layer shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layer_sizes: Vec<usize>,
    pub values: Vec<f64>,
    pub seed: Option<u64>,
}

impl MlpParams {
    /// Xavier-normal weights `N(0, 2 / (fan_in + fan_out))`, zero biases.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(param_count(layer_sizes));
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            values.extend((0..fan_in * fan_out).map(|_| normal.sample(&mut rng)));
            values.extend(std::iter::repeat_n(0.0, fan_out));
        }
        MlpParams {
            layer_sizes: layer_sizes.to_vec(),
            values,
            seed: Some(seed),
        }
    }

    pub fn zeros(layer_sizes: &[usize]) -> Self {
        MlpParams {
            layer_sizes: layer_sizes.to_vec(),
            values: vec![0.0; param_count(layer_sizes)],
            seed: None,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per-input affine map `z ↦ (z − shift) · scale` applied before the first layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputScaling {
    pub fn identity(n: usize) -> Self {
        InputScaling {
            shift: vec![0.0; n],
            scale: vec![1.0; n],
        }
    }

    /// Maps each `[lo, hi]` onto `[-1, 1]`.
    pub fn unit_box(bounds: &[(f64, f64)]) -> Self {
        InputScaling {
            shift: bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect(),
            scale: bounds.iter().map(|(lo, hi)| 2.0 / (hi - lo)).collect(),
        }
    }

    pub fn apply(&self, i: usize, z: f64) -> f64 {
        (z - self.shift[i]) * self.scale[i]
    }

    pub fn invert(&self, i: usize, s: f64) -> f64 {
        s / self.scale[i] + self.shift[i]
    }
}

/// Architecture: layer widths plus input normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    layer_sizes: Vec<usize>,
    scaling: InputScaling,
    #[serde(skip)]
    offsets: Vec<usize>,
}

impl Network {
    pub fn new(layer_sizes: Vec<usize>, scaling: InputScaling) -> Self {
        assert!(layer_sizes.len() >= 2, "need at least input and output layers");
        assert_eq!(*layer_sizes.last().unwrap(), 1, "scalar output expected");
        assert!(layer_sizes[0] <= MAX_INPUTS, "at most {MAX_INPUTS} inputs");
        assert_eq!(scaling.shift.len(), layer_sizes[0]);
        let mut offsets = vec![0];
        for w in layer_sizes.windows(2) {
            offsets.push(offsets.last().unwrap() + w[0] * w[1] + w[1]);
        }
        Network {
            layer_sizes,
            scaling,
            offsets,
        }
    }

    /// Restores cached offsets after deserialization.
    pub fn rebuilt(self) -> Self {
        Network::new(self.layer_sizes, self.scaling)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn scaling(&self) -> &InputScaling {
        &self.scaling
    }

    pub fn n_inputs(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn param_count(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// `(weights, biases)` of layer `l` inside the flat vector.
    pub(crate) fn layer<'a, T>(&self, params: &'a [T], l: usize) -> (&'a [T], &'a [T]) {
        let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        let o = self.offsets[l];
        (
            &params[o..o + n_in * n_out],
            &params[o + n_in * n_out..o + n_in * n_out + n_out],
        )
    }

    pub(crate) fn offset(&self, l: usize) -> usize {
        self.offsets[l]
    }

    /// Plain scalar evaluation.
    pub fn forward(&self, params: &[f64], point: &[f64]) -> f64 {
        debug_assert_eq!(params.len(), self.param_count());
        let mut h: Vec<f64> = (0..self.n_inputs()).map(|i| self.scaling.apply(i, point[i])).collect();
        let mut next = Vec::with_capacity(HIDDEN_WIDTH);
        for l in 0..self.n_layers() {
            let (w, b) = self.layer(params, l);
            let n_in = h.len();
            next.clear();
            next.extend(b.iter().enumerate().map(|(i, bi)| {
                let row = &w[i * n_in..(i + 1) * n_in];
                row.iter().zip(&h).fold(*bi, |acc, (wij, hj)| acc + wij * hj)
            }));
            if l + 1 < self.n_layers() {
                next.iter_mut().for_each(|a| *a = a.tanh());
            }
            std::mem::swap(&mut h, &mut next);
        }
        h[0]
    }

    /// Evaluation over any [`Scalar`] for both weights and inputs. Used for
    /// taped reference gradients and reduced-precision inference.
    pub fn forward_generic<S: Scalar>(&self, weights: &[S], point: &[S]) -> S {
        let mut h: Vec<S> = (0..self.n_inputs())
            .map(|i| point[i].shift(-self.scaling.shift[i]).scale(self.scaling.scale[i]))
            .collect();
        for l in 0..self.n_layers() {
            let (w, b) = self.layer(weights, l);
            let n_in = h.len();
            let mut next: Vec<S> = b
                .iter()
                .enumerate()
                .map(|(i, bi)| {
                    let row = &w[i * n_in..(i + 1) * n_in];
                    row.iter().zip(&h).fold(*bi, |acc, (wij, hj)| acc + *wij * *hj)
                })
                .collect();
            if l + 1 < self.n_layers() {
                next.iter_mut().for_each(|a| *a = a.tanh());
            }
            h = next;
        }
        h[0]
    }

    /// Jet of the output with respect to input `seed` at `point`.
    pub fn forward_jets(&self, params: &[f64], point: &[f64], seed: usize) -> Jet<f64> {
        assert!(seed < self.n_inputs(), "seed variable out of range");
        let weights: Vec<Jet<f64>> = params.iter().map(|&w| Jet::constant(w)).collect();
        let inputs: Vec<Jet<f64>> = (0..self.n_inputs())
            .map(|i| {
                if i == seed {
                    Jet::variable(point[i])
                } else {
                    Jet::constant(point[i])
                }
            })
            .collect();
        self.forward_generic(&weights, &inputs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_net(sizes: Vec<usize>) -> Network {
        let n = sizes[0];
        Network::new(sizes, InputScaling::identity(n))
    }

    #[test]
    fn default_parameter_count() {
        assert_eq!(param_count(&default_layer_sizes(2)), 3441);
        let net = unit_net(default_layer_sizes(2));
        assert_eq!(net.param_count(), 3441);
    }

    #[test]
    fn init_is_deterministic() {
        let a = MlpParams::init(&default_layer_sizes(2), 7);
        let b = MlpParams::init(&default_layer_sizes(2), 7);
        let c = MlpParams::init(&default_layer_sizes(2), 8);
        assert_eq!(a.values, b.values);
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn xavier_std_for_square_layer() {
        // 20x20 weights, pooled over enough seeds for 10^4 draws
        let sizes = [20, 20];
        let mut draws = Vec::new();
        for seed in 0..25 {
            let p = MlpParams::init(&sizes, seed);
            draws.extend_from_slice(&p.values[..400]);
            assert!(p.values[400..].iter().all(|&b| b == 0.0));
        }
        assert_eq!(draws.len(), 10_000);
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / draws.len() as f64;
        let target = (1.0f64 / 20.0).sqrt();
        assert!((var.sqrt() - target).abs() < 0.1 * target);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = unit_net(default_layer_sizes(2));
        let p = MlpParams::zeros(net.layer_sizes());
        assert_eq!(net.forward(&p.values, &[0.3, 0.7]), 0.0);
        assert_eq!(
            net.forward_jets(&p.values, &[0.3, 0.7], 0),
            Jet::new(0.0, 0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn single_hidden_unit_closed_form() {
        // u = w2 tanh(w1 x + b) + b2 on one input
        let net = unit_net(vec![1, 1, 1]);
        let (w1, b, w2, b2) = (0.8, -0.3, 1.7, 0.25);
        let params = [w1, b, w2, b2];
        let x = 0.45;
        let j = net.forward_jets(&params, &[x], 0);
        let t = (w1 * x + b).tanh();
        let sech2 = 1.0 - t * t;
        assert!((j.v - (w2 * t + b2)).abs() < 1e-12);
        assert!((j.d1 - w2 * w1 * sech2).abs() < 1e-12);
        assert!((j.d2 - w2 * w1 * w1 * (-2.0 * t * sech2)).abs() < 1e-12);
    }

    #[test]
    fn forward_is_pure_and_consistent_with_jets() {
        let scaling = InputScaling::unit_box(&[(0.0, 2.0), (0.0, 0.99)]);
        let net = Network::new(default_layer_sizes(2), scaling);
        let p = MlpParams::init(net.layer_sizes(), 3);
        let pt = [1.3, 0.4];
        let a = net.forward(&p.values, &pt);
        assert_eq!(a, net.forward(&p.values, &pt));
        let j = net.forward_jets(&p.values, &pt, 1);
        assert!((a - j.v).abs() < 1e-14);
        for corner in [[0.0, 0.0], [2.0, 0.0], [0.0, 0.99], [2.0, 0.99]] {
            assert!(net.forward(&p.values, &corner).is_finite());
        }
    }

    #[test]
    fn scaling_round_trip() {
        let s = InputScaling::unit_box(&[(0.0, 2.0), (0.0, 0.99)]);
        assert_eq!(s.apply(0, 0.0), -1.0);
        assert_eq!(s.apply(0, 2.0), 1.0);
        assert!((s.invert(1, s.apply(1, 0.37)) - 0.37).abs() < 1e-15);
    }
}
