//! Fully-connected tanh network: parameter layout, initialization and
//! forward evaluation on plain reals or on jets.
//!
//! Layer l maps x -> tanh(W x + B) except the last layer, which stays
//! linear. Parameters are flattened layer by layer, each layer's weights
//! row-major followed by its biases. Inputs live on the unit square/cube
//! and are rescaled to [-1, 1]^d before the first layer.

use rand::distributions::Uniform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::jet::Jet;
use crate::scalar::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum NetworkError {
    #[error("layer spec needs at least an input and an output size")]
    TooFewLayers,
    #[error("layer size must be >= 1, got {0}")]
    ZeroWidth(usize),
    #[error("input dimension must be 2 or 3, got {0}")]
    BadInputDim(usize),
    #[error("output arity must be 1, 3 or 4, got {0}")]
    BadOutputArity(usize),
    #[error("input point has {got} coordinates, network expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("parameter vector has length {got}, spec requires {expected}")]
    ParamLength { expected: usize, got: usize },
}

/// Layer sizes n_0..n_L. n_0 is the spatial dimension; n_L is 1 for the
/// second-order scheme, 3 for the 2D first-order scheme, 4 for 3D.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    sizes: Vec<usize>,
}

impl LayerSpec {
    pub fn new(sizes: Vec<usize>) -> Result<LayerSpec, NetworkError> {
        if sizes.len() < 2 {
            return Err(NetworkError::TooFewLayers);
        }
        if let Some(&w) = sizes.iter().find(|&&w| w == 0) {
            return Err(NetworkError::ZeroWidth(w));
        }
        if !(2..=3).contains(&sizes[0]) {
            return Err(NetworkError::BadInputDim(sizes[0]));
        }
        let out = *sizes.last().unwrap();
        if !matches!(out, 1 | 3 | 4) {
            return Err(NetworkError::BadOutputArity(out));
        }
        Ok(LayerSpec { sizes })
    }

    /// d hidden layers of equal width plus the linear output layer.
    pub fn uniform(
        input: usize,
        hidden_layers: usize,
        neurons: usize,
        output: usize,
    ) -> Result<LayerSpec, NetworkError> {
        let mut sizes = vec![input];
        sizes.extend(std::iter::repeat_n(neurons, hidden_layers));
        sizes.push(output);
        LayerSpec::new(sizes)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_arity(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Total parameter count: sum over layers of n_l * (n_{l-1} + 1).
    pub fn param_count(&self) -> usize {
        self.sizes
            .windows(2)
            .map(|w| w[1] * (w[0] + 1))
            .sum()
    }
}

/// Flattened weights and biases with their layer metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkParams {
    pub spec: LayerSpec,
    pub theta: Vec<f64>,
}

/// Glorot-uniform weights from a seeded generator, biases zero.
pub fn init_params(spec: &LayerSpec, seed: u64) -> NetworkParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = Vec::with_capacity(spec.param_count());
    for w in spec.sizes.windows(2) {
        let (n_in, n_out) = (w[0], w[1]);
        let bound = (6.0 / (n_in + n_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        for _ in 0..n_out * n_in {
            theta.push(rng.sample(dist));
        }
        theta.extend(std::iter::repeat_n(0.0, n_out));
    }
    NetworkParams {
        spec: spec.clone(),
        theta,
    }
}

fn check_lengths<S>(spec: &LayerSpec, theta: &[S], x_len: usize) -> Result<(), NetworkError> {
    if theta.len() != spec.param_count() {
        return Err(NetworkError::ParamLength {
            expected: spec.param_count(),
            got: theta.len(),
        });
    }
    if x_len != spec.input_dim() {
        return Err(NetworkError::DimensionMismatch {
            expected: spec.input_dim(),
            got: x_len,
        });
    }
    Ok(())
}

/// Plain forward pass; outputs are read positionally by the scheme.
pub fn forward_values(spec: &LayerSpec, theta: &[f64], x: &[f64]) -> Vec<f64> {
    check_lengths(spec, theta, x.len()).expect("forward_values: shape mismatch");
    let mut cur: Vec<f64> = x.iter().map(|&xi| 2.0 * xi - 1.0).collect();
    let mut off = 0;
    let last = spec.layers();
    for (l, w) in spec.sizes.windows(2).enumerate() {
        let (n_in, n_out) = (w[0], w[1]);
        let weights = &theta[off..off + n_out * n_in];
        off += n_out * n_in;
        let biases = &theta[off..off + n_out];
        off += n_out;
        let mut next = Vec::with_capacity(n_out);
        for j in 0..n_out {
            let row = &weights[j * n_in..(j + 1) * n_in];
            let pre = f64::dot_bias(row, &cur, biases[j]);
            next.push(if l + 1 < last { pre.tanh() } else { pre });
        }
        cur = next;
    }
    cur
}

/// Forward pass on coordinate jets; the value component agrees with
/// [`forward_values`] bit for bit at the same point.
pub fn forward_jets<S: Scalar>(spec: &LayerSpec, theta: &[S], x: &[Jet<S>]) -> Vec<Jet<S>> {
    check_lengths(spec, theta, x.len()).expect("forward_jets: shape mismatch");
    let dim = x[0].dim();
    let order = x[0].order();
    let n_hess = if order == 2 { dim * (dim + 1) / 2 } else { 0 };
    let n_comp = 1 + dim + n_hess;

    let mut cur: Vec<Jet<S>> = x.iter().map(|xi| xi.scale(2.0).shift(-1.0)).collect();
    let mut off = 0;
    let last = spec.layers();
    // per-component slices of the current layer's outputs
    let mut comps: Vec<Vec<S>> = vec![Vec::new(); n_comp];
    for (l, w) in spec.sizes.windows(2).enumerate() {
        let (n_in, n_out) = (w[0], w[1]);
        let weights = &theta[off..off + n_out * n_in];
        off += n_out * n_in;
        let biases = &theta[off..off + n_out];
        off += n_out;

        for c in comps.iter_mut() {
            c.clear();
        }
        for jet in &cur {
            comps[0].push(jet.value());
            for i in 0..dim {
                comps[1 + i].push(jet.grad(i));
            }
            if order == 2 {
                let mut k = 0;
                for i in 0..dim {
                    for j in i..dim {
                        comps[1 + dim + k].push(jet.hess(i, j));
                        k += 1;
                    }
                }
            }
        }

        let mut next = Vec::with_capacity(n_out);
        let mut g = Vec::with_capacity(dim);
        let mut h = Vec::with_capacity(n_hess);
        for j in 0..n_out {
            let row = &weights[j * n_in..(j + 1) * n_in];
            let v = S::dot_bias(row, &comps[0], biases[j]);
            g.clear();
            for i in 0..dim {
                g.push(S::dot(row, &comps[1 + i]));
            }
            h.clear();
            for k in 0..n_hess {
                h.push(S::dot(row, &comps[1 + dim + k]));
            }
            let pre = Jet::from_parts(v, &g, &h, dim, order);
            next.push(if l + 1 < last { pre.tanh() } else { pre });
        }
        cur = next;
    }
    cur
}
