//! Small tanh MLPs with hand-written backprop. Weights live in a flat slice
//! so they can sit inside an ODE model's parameter vector.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Architecture plus weights. Layout per layer: row-major `out x in`
/// weight matrix followed by `out` biases. Hidden layers use tanh, the
/// output layer is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub weights: Vec<f64>,
}

/// Number of weights for a layer-size list.
pub fn num_weights(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Activations cached for the backward pass: the concatenated outputs of
/// every hidden layer.
pub fn num_activations(sizes: &[usize]) -> usize {
    sizes[1..sizes.len() - 1].iter().sum()
}

impl Mlp {
    /// `depth` hidden layers of `width` units. Hidden weights are drawn
    /// N(0, 1/fan_in); the output layer starts at zero so the network
    /// initially outputs 0.
    pub fn new(inputs: usize, width: usize, depth: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let mut sizes = vec![inputs];
        sizes.extend(std::iter::repeat_n(width, depth));
        sizes.push(outputs);
        let weights = init_weights(&sizes, rng);
        Self { sizes, weights }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; *self.sizes.last().unwrap()];
        let mut acts = vec![0.0; num_activations(&self.sizes)];
        forward(&self.sizes, &self.weights, x, &mut acts, &mut out);
        out
    }
}

pub fn init_weights(sizes: &[usize], rng: &mut impl Rng) -> Vec<f64> {
    let mut w = Vec::with_capacity(num_weights(sizes));
    let last = sizes.len() - 2;
    for (l, pair) in sizes.windows(2).enumerate() {
        let (n_in, n_out) = (pair[0], pair[1]);
        let scale = if l == last { 0.0 } else { 1.0 / (n_in as f64).sqrt() };
        for _ in 0..n_in * n_out {
            w.push(scale * rng.sample::<f64, _>(StandardNormal));
        }
        w.extend(std::iter::repeat_n(0.0, n_out));
    }
    w
}

/// Forward pass; hidden activations are written to `acts`.
pub fn forward(sizes: &[usize], w: &[f64], x: &[f64], acts: &mut [f64], out: &mut [f64]) {
    let nl = sizes.len() - 1;
    let mut wo = 0;
    let mut ao = 0;
    let mut prev_off: Option<usize> = None;
    for l in 0..nl {
        let (n_in, n_out) = (sizes[l], sizes[l + 1]);
        let (mat, bias) = (&w[wo..wo + n_in * n_out], &w[wo + n_in * n_out..wo + n_in * n_out + n_out]);
        for j in 0..n_out {
            let row = &mat[j * n_in..(j + 1) * n_in];
            let input: &[f64] = match prev_off {
                None => x,
                Some(p) => &acts[p..p + n_in],
            };
            let z = bias[j] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
            if l + 1 == nl {
                out[j] = z;
            } else {
                acts[ao + j] = z.tanh();
            }
        }
        wo += n_in * n_out + n_out;
        if l + 1 < nl {
            prev_off = Some(ao);
            ao += n_out;
        }
    }
}

/// Backward pass from output adjoints `g_out`, using activations from the
/// matching [`forward`] call. Adds weight adjoints into `g_w` and input
/// adjoints into `g_x`. `buf` is scratch space.
pub fn backward(
    sizes: &[usize],
    w: &[f64],
    x: &[f64],
    acts: &[f64],
    g_out: &[f64],
    g_w: &mut [f64],
    g_x: &mut [f64],
    buf: &mut Vec<f64>,
) {
    let nl = sizes.len() - 1;
    // Offsets of each layer's weights and of each hidden activation block.
    let mut w_off = Vec::with_capacity(nl);
    let mut a_off = Vec::with_capacity(nl);
    let (mut wo, mut ao) = (0, 0);
    for l in 0..nl {
        w_off.push(wo);
        wo += sizes[l] * sizes[l + 1] + sizes[l + 1];
        a_off.push(ao);
        if l + 1 < nl {
            ao += sizes[l + 1];
        }
    }
    // `delta` holds d loss / d pre-activation of the current layer.
    let mut delta: Vec<f64> = g_out.to_vec();
    for l in (0..nl).rev() {
        let (n_in, n_out) = (sizes[l], sizes[l + 1]);
        let input: &[f64] = if l == 0 { x } else { &acts[a_off[l - 1]..a_off[l - 1] + n_in] };
        let base = w_off[l];
        buf.clear();
        buf.resize(n_in, 0.0);
        for j in 0..n_out {
            let d = delta[j];
            if d == 0.0 {
                continue;
            }
            let row = base + j * n_in;
            for i in 0..n_in {
                g_w[row + i] += d * input[i];
                buf[i] += d * w[row + i];
            }
            g_w[base + n_in * n_out + j] += d;
        }
        if l == 0 {
            for i in 0..n_in {
                g_x[i] += buf[i];
            }
        } else {
            delta.clear();
            delta.extend(buf.iter().zip(input).map(|(g, a)| g * (1.0 - a * a)));
        }
    }
}
