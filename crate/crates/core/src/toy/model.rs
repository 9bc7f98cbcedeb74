use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Fully connected layer, weights stored row-major as `outputs × inputs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn new(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        // He initialisation for ReLU layers.
        let normal = Normal::new(0.0, (2.0 / inputs as f64).sqrt()).expect("valid std");
        Self {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| normal.sample(rng)).collect(),
            bias: vec![0.0; outputs],
        }
    }

    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            out.push(self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>());
        }
    }

    fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Per-pixel multilayer perceptron with ReLU hidden layers and a softmax output.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyModel {
    pub hidden: Vec<Dense>,
    pub output: Dense,
    /// Drop probability of hidden activations when sampling with dropout.
    pub dropout: f64,
    /// Whether inputs carry a 3×3 neighbourhood mean after the pixel features.
    pub context: bool,
}

/// Activations recorded by a forward pass, consumed by [`ToyModel::backward`].
#[derive(Clone, Debug, Default)]
pub struct Cache {
    input: Vec<f64>,
    /// Post-activation (after ReLU and dropout) output of every hidden layer.
    acts: Vec<Vec<f64>>,
    /// Scale applied to each hidden unit: 0 if inactive or dropped, else the
    /// dropout rescaling (1 without dropout).
    gates: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

impl Cache {
    pub fn penultimate(&self) -> &[f64] {
        self.acts.last().map(|v| v.as_slice()).unwrap_or(&self.input)
    }
}

/// Parameter-shaped accumulator for gradients and optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub hidden: Vec<Dense>,
    pub output: Dense,
}

impl Grads {
    pub fn flat(&self) -> Vec<f64> {
        flatten(&self.hidden, &self.output)
    }
}

fn flatten(hidden: &[Dense], output: &Dense) -> Vec<f64> {
    let mut v = Vec::new();
    for l in hidden.iter().chain(std::iter::once(output)) {
        v.extend_from_slice(&l.weights);
        v.extend_from_slice(&l.bias);
    }
    v
}

impl ToyModel {
    /// Random He-initialised network mapping `input_dim` features to `num_classes` logits.
    pub fn new(input_dim: usize, hidden: &[usize], num_classes: usize, dropout: f64, context: bool, rng: &mut impl Rng) -> Result<Self> {
        if input_dim == 0 || num_classes < 2 || hidden.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "bad network shape: input {input_dim}, hidden {hidden:?}, classes {num_classes}"
            )));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::InvalidArgument(format!("dropout {dropout} outside [0,1)")));
        }
        let in_width = if context { 2 * input_dim } else { input_dim };
        let mut layers = Vec::new();
        let mut prev = in_width;
        for &h in hidden {
            layers.push(Dense::new(prev, h, rng));
            prev = h;
        }
        let output = Dense::new(prev, num_classes, rng);
        Ok(Self { hidden: layers, output, dropout, context })
    }

    /// Width of the vector fed to the first layer.
    pub fn input_width(&self) -> usize {
        self.hidden.first().unwrap_or(&self.output).inputs
    }

    /// Dimension of the per-pixel scene features.
    pub fn feature_dim(&self) -> usize {
        if self.context {
            self.input_width() / 2
        } else {
            self.input_width()
        }
    }

    pub fn num_classes(&self) -> usize {
        self.output.outputs
    }

    pub fn num_params(&self) -> usize {
        self.hidden.iter().map(Dense::num_params).sum::<usize>() + self.output.num_params()
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            hidden: self.hidden.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect(),
            output: Dense::zeros(self.output.inputs, self.output.outputs),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        flatten(&self.hidden, &self.output)
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "parameter vector length");
        let mut k = 0;
        for l in self.hidden.iter_mut().chain(std::iter::once(&mut self.output)) {
            for v in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *v = flat[k];
                k += 1;
            }
        }
    }

    /// Forward pass. With `dropout_rng`, hidden units are dropped with
    /// probability `self.dropout` and survivors rescaled by `1/(1-p)`.
    pub fn forward(&self, x: &[f64], mut dropout_rng: Option<&mut dyn rand::RngCore>, cache: &mut Cache) {
        debug_assert_eq!(x.len(), self.input_width());
        cache.input.clear();
        cache.input.extend_from_slice(x);
        cache.acts.resize(self.hidden.len(), Vec::new());
        cache.gates.resize(self.hidden.len(), Vec::new());
        let keep = 1.0 - self.dropout;
        let mut z = Vec::new();
        for (k, layer) in self.hidden.iter().enumerate() {
            let input = if k == 0 { &cache.input } else { &cache.acts[k - 1] };
            layer.forward(input, &mut z);
            let gates = &mut cache.gates[k];
            gates.clear();
            for &v in &z {
                let mut g = if v > 0.0 { 1.0 } else { 0.0 };
                if let Some(rng) = reborrow(&mut dropout_rng) {
                    if self.dropout > 0.0 {
                        g = if rng.random::<f64>() < keep { g / keep } else { 0.0 };
                    }
                }
                gates.push(g);
            }
            let acts = &mut cache.acts[k];
            acts.clear();
            acts.extend(z.iter().zip(gates.iter()).map(|(v, g)| v * g));
        }
        let last = cache.acts.last().unwrap_or(&cache.input);
        let mut logits = Vec::new();
        self.output.forward(last, &mut logits);
        cache.logits = logits;
    }

    /// Accumulates parameter gradients for loss gradient `dlogits` and
    /// returns the gradient with respect to the input vector.
    pub fn backward(&self, cache: &Cache, dlogits: &[f64], grads: &mut Grads) -> Vec<f64> {
        let mut delta = dlogits.to_vec();
        let mut layer = &self.output;
        let mut g = &mut grads.output;
        let mut k = self.hidden.len();
        loop {
            let input = if k == 0 { &cache.input } else { &cache.acts[k - 1] };
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (w, &a) in row.iter_mut().zip(input) {
                    *w += d * a;
                }
            }
            let mut prev = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (p, &w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            if k == 0 {
                return prev;
            }
            k -= 1;
            for (p, gate) in prev.iter_mut().zip(&cache.gates[k]) {
                *p *= gate;
            }
            delta = prev;
            layer = &self.hidden[k];
            g = &mut grads.hidden[k];
        }
    }

    /// Softmax probabilities for one input vector, dropout disabled.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let mut cache = Cache::default();
        self.forward(x, None, &mut cache);
        softmax(&cache.logits)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&StoredModel::from(self))?;
        text.push('\n');
        crate::tensor::write_file(path.as_ref(), text.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let stored: StoredModel = serde_json::from_str(&text)?;
        stored.try_into()
    }
}

/// Shortens the borrow of an optional RNG so it can be passed on repeatedly.
pub fn reborrow<'a>(rng: &'a mut Option<&mut dyn rand::RngCore>) -> Option<&'a mut dyn rand::RngCore> {
    match rng {
        Some(r) => Some(&mut **r),
        None => None,
    }
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[derive(Serialize, Deserialize)]
struct StoredLayer {
    inputs: usize,
    outputs: usize,
    /// Little-endian f64 values, base64 encoded.
    weights: String,
    bias: String,
}

#[derive(Serialize, Deserialize)]
struct StoredModel {
    format: String,
    dropout: f64,
    context: bool,
    hidden: Vec<StoredLayer>,
    output: StoredLayer,
}

const MODEL_FORMAT: &str = "oodseg-toy-mlp-v1";

fn encode(v: &[f64]) -> String {
    let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
    B64.encode(bytes)
}

fn decode(s: &str, expect: usize) -> Result<Vec<f64>> {
    let bytes = B64.decode(s).map_err(|e| Error::Format(format!("bad base64 weights: {e}")))?;
    if bytes.len() != expect * 8 {
        return Err(Error::Format(format!("expected {} weight bytes, got {}", expect * 8, bytes.len())));
    }
    let v: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    Ok(v)
}

impl From<&Dense> for StoredLayer {
    fn from(l: &Dense) -> Self {
        Self { inputs: l.inputs, outputs: l.outputs, weights: encode(&l.weights), bias: encode(&l.bias) }
    }
}

impl TryFrom<StoredLayer> for Dense {
    type Error = Error;
    fn try_from(s: StoredLayer) -> Result<Self> {
        Ok(Self {
            inputs: s.inputs,
            outputs: s.outputs,
            weights: decode(&s.weights, s.inputs * s.outputs)?,
            bias: decode(&s.bias, s.outputs)?,
        })
    }
}

impl From<&ToyModel> for StoredModel {
    fn from(m: &ToyModel) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            dropout: m.dropout,
            context: m.context,
            hidden: m.hidden.iter().map(StoredLayer::from).collect(),
            output: (&m.output).into(),
        }
    }
}

impl TryFrom<StoredModel> for ToyModel {
    type Error = Error;
    fn try_from(s: StoredModel) -> Result<Self> {
        if s.format != MODEL_FORMAT {
            return Err(Error::Format(format!("unknown model format {:?}", s.format)));
        }
        let hidden: Vec<Dense> = s.hidden.into_iter().map(Dense::try_from).collect::<Result<_>>()?;
        let output = Dense::try_from(s.output)?;
        let mut prev = hidden.first().map(|l| l.inputs).unwrap_or(output.inputs);
        for l in hidden.iter().chain(std::iter::once(&output)) {
            if l.inputs != prev {
                return Err(Error::Format("layer shapes do not chain".into()));
            }
            prev = l.outputs;
        }
        Ok(Self { hidden, output, dropout: s.dropout, context: s.context })
    }
}
