//! Feed-forward network with a sigmoid output unit, trained by full-batch
//! gradient descent on cross-entropy.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{column_moments, sigmoid, softplus, Dataset, LearnError};
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    /// Rectified linear units.
    Relu,
    /// Each unit outputs the maximum of `k` linear pieces.
    Maxout { k: usize },
}

impl Activation {
    fn pieces(self) -> usize {
        match self {
            Activation::Maxout { k } => k,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpParams {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub learning_rate: f64,
    /// Weight decay coefficient on all non-bias weights.
    pub l2: f64,
    /// Probability of dropping a hidden unit during a training step.
    pub dropout_rate: f64,
    pub max_iter: usize,
    /// Training stops when an accepted step improves the loss by less.
    pub tol: f64,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            hidden: vec![16, 16, 16],
            activation: Activation::Tanh,
            learning_rate: 0.5,
            l2: 1e-4,
            dropout_rate: 0.0,
            max_iter: 500,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Linear pieces per output unit (1 except for maxout hidden layers).
    pub pieces: usize,
    /// Row-major `(outputs * pieces) × inputs`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize, pieces: usize) -> Self {
        Self {
            inputs,
            outputs,
            pieces,
            weights: vec![0.0; outputs * pieces * inputs],
            biases: vec![0.0; outputs * pieces],
        }
    }

    fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        self.biases
            .iter()
            .enumerate()
            .map(|(r, b)| {
                let row = &self.weights[r * self.inputs..(r + 1) * self.inputs];
                b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    /// Input width, hidden widths, then 1.
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub layers: Vec<Layer>,
    /// Input standardisation applied before the first layer.
    pub input_means: Vec<f64>,
    pub input_scales: Vec<f64>,
    pub iterations: usize,
    /// Full training loss after each accepted step, starting at the
    /// initial weights.
    pub loss_trace: Vec<f64>,
}

/// Per-layer cached values from a forward pass.
struct Trace {
    inputs: Vec<Vec<f64>>,
    /// Winning piece per unit (maxout) or pre-activation (others).
    pre: Vec<Vec<f64>>,
    argmax: Vec<Vec<usize>>,
    /// Dropout multipliers applied to each hidden layer's output.
    masks: Vec<Option<Vec<f64>>>,
    logit: f64,
}

impl MlpModel {
    /// A network of the given shape with every parameter zero.
    pub fn zeros(layer_sizes: &[usize], activation: Activation) -> Result<Self, LearnError> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) || *layer_sizes.last().unwrap() != 1 {
            return Err(LearnError::InvalidParam(format!(
                "layer sizes must be positive and end with 1, got {layer_sizes:?}"
            )));
        }
        if activation.pieces() == 0 {
            return Err(LearnError::InvalidParam("maxout needs k >= 1".into()));
        }
        let last = layer_sizes.len() - 2;
        let layers = layer_sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Layer::zeros(w[0], w[1], if i == last { 1 } else { activation.pieces() }))
            .collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            activation,
            layers,
            input_means: vec![0.0; layer_sizes[0]],
            input_scales: vec![1.0; layer_sizes[0]],
            iterations: 0,
            loss_trace: Vec::new(),
        })
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// All weights then biases, layer by layer.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn set_params_flat(&mut self, p: &[f64]) {
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&p[off..off + nw]);
            off += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&p[off..off + nb]);
            off += nb;
        }
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.input_means.iter().zip(&self.input_scales))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    fn activate(&self, z: &[f64], pieces: usize) -> (Vec<f64>, Vec<usize>) {
        match self.activation {
            Activation::Tanh => (z.iter().map(|v| v.tanh()).collect(), Vec::new()),
            Activation::Relu => (z.iter().map(|v| v.max(0.0)).collect(), Vec::new()),
            Activation::Maxout { .. } => {
                let mut out = Vec::with_capacity(z.len() / pieces);
                let mut arg = Vec::with_capacity(z.len() / pieces);
                for chunk in z.chunks(pieces) {
                    let (k, v) = chunk
                        .iter()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |(bk, bv), (k, &v)| if v > bv { (k, v) } else { (bk, bv) });
                    out.push(v);
                    arg.push(k);
                }
                (out, arg)
            }
        }
    }

    fn forward(&self, x: &[f64], masks: Option<&[Vec<f64>]>) -> Trace {
        let mut h = x.to_vec();
        let mut trace = Trace {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
            argmax: Vec::with_capacity(self.layers.len()),
            masks: Vec::with_capacity(self.layers.len()),
            logit: 0.0,
        };
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.pre_activation(&h);
            trace.inputs.push(std::mem::take(&mut h));
            if i == last {
                trace.logit = z[0];
                trace.pre.push(z);
                trace.argmax.push(Vec::new());
                trace.masks.push(None);
            } else {
                let (mut a, arg) = self.activate(&z, layer.pieces);
                let mask = masks.map(|m| m[i].clone());
                if let Some(m) = &mask {
                    a.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
                }
                h = a;
                trace.pre.push(z);
                trace.argmax.push(arg);
                trace.masks.push(mask);
            }
        }
        trace
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        sigmoid(self.forward(&self.standardize(x), None).logit)
    }

    /// Adds the gradient of one sample's cross-entropy to `grad` (flat
    /// layout as [`Self::params_flat`]) and returns that sample's loss.
    fn accumulate(&self, x: &[f64], y: f64, masks: Option<&[Vec<f64>]>, grad: &mut [f64]) -> f64 {
        let t = self.forward(x, masks);
        let loss = softplus(t.logit) - y * t.logit;
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.weights.len() + l.biases.len();
        }
        // Gradient with respect to the current layer's pre-activations.
        let mut delta = vec![sigmoid(t.logit) - y];
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let base = offsets[i];
            let input = &t.inputs[i];
            let nw = layer.weights.len();
            for (r, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &mut grad[base + r * layer.inputs..base + (r + 1) * layer.inputs];
                row.iter_mut().zip(input).for_each(|(g, v)| *g += d * v);
                grad[base + nw + r] += d;
            }
            if i == 0 {
                break;
            }
            // Back through the previous hidden layer's activation.
            let mut upstream = vec![0.0; layer.inputs];
            for (r, d) in delta.iter().enumerate() {
                let row = &layer.weights[r * layer.inputs..(r + 1) * layer.inputs];
                upstream.iter_mut().zip(row).for_each(|(u, w)| *u += d * w);
            }
            let prev = &self.layers[i - 1];
            if let Some(m) = &t.masks[i - 1] {
                upstream.iter_mut().zip(m).for_each(|(u, k)| *u *= k);
            }
            let z = &t.pre[i - 1];
            delta = match self.activation {
                Activation::Tanh => upstream.iter().zip(z).map(|(u, v)| u * (1.0 - v.tanh().powi(2))).collect(),
                Activation::Relu => upstream.iter().zip(z).map(|(u, v)| if *v > 0.0 { *u } else { 0.0 }).collect(),
                Activation::Maxout { .. } => {
                    let mut dz = vec![0.0; z.len()];
                    for (unit, (&u, &k)) in upstream.iter().zip(&t.argmax[i - 1]).enumerate() {
                        dz[unit * prev.pieces + k] = u;
                    }
                    dz
                }
            };
        }
        loss
    }

    fn l2_term(&self, l2: f64) -> f64 {
        if l2 == 0.0 {
            return 0.0;
        }
        0.5 * l2 * self.layers.iter().flat_map(|l| &l.weights).map(|w| w * w).sum::<f64>()
    }

    /// Mean cross-entropy plus `l2/2·‖W‖²` and its gradient, on already
    /// standardised rows, without dropout.
    pub fn loss_and_gradient(&self, rows: &[Vec<f64>], y: &[u8], l2: f64) -> (f64, Vec<f64>) {
        self.loss_and_gradient_masked(rows, y, l2, None)
    }

    fn loss_and_gradient_masked(
        &self,
        rows: &[Vec<f64>],
        y: &[u8],
        l2: f64,
        masks: Option<&[Vec<Vec<f64>>]>,
    ) -> (f64, Vec<f64>) {
        let n = rows.len() as f64;
        let mut grad = vec![0.0; self.n_params()];
        let mut loss = 0.0;
        for (i, (r, &t)) in rows.iter().zip(y).enumerate() {
            loss += self.accumulate(r, f64::from(t), masks.map(|m| m[i].as_slice()), &mut grad);
        }
        grad.iter_mut().for_each(|g| *g /= n);
        if l2 != 0.0 {
            let mut off = 0;
            for l in &self.layers {
                for (g, w) in grad[off..off + l.weights.len()].iter_mut().zip(&l.weights) {
                    *g += l2 * w;
                }
                off += l.weights.len() + l.biases.len();
            }
        }
        (loss / n + self.l2_term(l2), grad)
    }

    fn loss(&self, rows: &[Vec<f64>], y: &[u8], l2: f64) -> f64 {
        let n = rows.len() as f64;
        let ce: f64 = rows
            .iter()
            .zip(y)
            .map(|(r, &t)| {
                let z = self.forward(r, None).logit;
                softplus(z) - f64::from(t) * z
            })
            .sum();
        ce / n + self.l2_term(l2)
    }
}

/// Trains with Xavier-uniform initialisation. A step is accepted only if the
/// full (dropout-free) loss does not increase; otherwise it is discarded and
/// the learning rate halved.
pub fn train_mlp(data: &Dataset, params: &MlpParams, seed: u64) -> Result<MlpModel, LearnError> {
    if !(params.learning_rate > 0.0) {
        return Err(LearnError::InvalidParam("learning_rate must be > 0".into()));
    }
    if !(0.0..1.0).contains(&params.dropout_rate) {
        return Err(LearnError::InvalidParam("dropout_rate must lie in [0, 1)".into()));
    }
    if params.max_iter < 1 {
        return Err(LearnError::InvalidParam("max_iter must be >= 1".into()));
    }
    data.require_both_classes()?;
    let mut sizes = vec![data.n_features()];
    sizes.extend(&params.hidden);
    sizes.push(1);
    let mut model = MlpModel::zeros(&sizes, params.activation)?;
    let (means, scales) = column_moments(data);
    model.input_means = means;
    model.input_scales = scales;

    let mut init_rng = seeded(derive_seed(seed, 0));
    for l in &mut model.layers {
        let bound = (6.0 / (l.inputs + l.outputs) as f64).sqrt();
        l.weights.iter_mut().for_each(|w| *w = init_rng.random_range(-bound..bound));
    }

    let rows: Vec<Vec<f64>> = data.rows().iter().map(|r| model.standardize(r)).collect();
    let y = data.targets();
    let mut dropout_rng = seeded(derive_seed(seed, 1));
    let keep = 1.0 - params.dropout_rate;
    let hidden_widths: Vec<usize> = params.hidden.clone();

    let mut lr = params.learning_rate;
    let mut loss = model.loss(&rows, y, params.l2);
    let mut trace = vec![loss];
    let mut iterations = 0;
    while iterations < params.max_iter && lr > 1e-12 {
        iterations += 1;
        let masks: Option<Vec<Vec<Vec<f64>>>> = (params.dropout_rate > 0.0).then(|| {
            (0..rows.len())
                .map(|_| {
                    hidden_widths
                        .iter()
                        .map(|&w| {
                            (0..w)
                                .map(|_| if dropout_rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                                .collect()
                        })
                        .collect()
                })
                .collect()
        });
        let (_, grad) = model.loss_and_gradient_masked(&rows, y, params.l2, masks.as_deref());
        let current = model.params_flat();
        let candidate: Vec<f64> = current.iter().zip(&grad).map(|(p, g)| p - lr * g).collect();
        model.set_params_flat(&candidate);
        let new_loss = model.loss(&rows, y, params.l2);
        if new_loss.is_finite() && new_loss <= loss {
            let improvement = loss - new_loss;
            loss = new_loss;
            trace.push(loss);
            if improvement < params.tol && params.dropout_rate == 0.0 {
                break;
            }
        } else {
            model.set_params_flat(&current);
            lr *= 0.5;
        }
    }
    model.iterations = iterations;
    model.loss_trace = trace;
    Ok(model)
}
