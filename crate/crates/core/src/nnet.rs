//! Small fully-connected networks with hand-written backpropagation and ADAM.
//!
//! Every network here ends in a single scalar. Batches are rows of an
//! `ndarray` matrix; the scalar API is a batch of one.
//!
//! # Checkpoint format
//!
//! Plain text, one record per line, floats in Rust's shortest round-trip
//! scientific notation so that save/load is lossless:
//!
//! ```text
//! densenet 1
//! layers 7 16 8 1
//! activations leaky_relu leaky_relu sigmoid
//! params <n> <v_1> ... <v_n>
//! adam_step <t>
//! adam_m <n> <m_1> ... <m_n>
//! adam_v <n> <v_1> ... <v_n>
//! end
//! ```
//!
//! Parameters are flattened layer by layer: the weight matrix row-major
//! (`out x in`) followed by the bias vector.

use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.01;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

static NEXT_NET_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    LeakyRelu,
    Relu,
    Sigmoid,
    /// `gamma * tanh(z)`, kept strictly inside `(-gamma, gamma)`.
    TanhScaled(f64),
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            }
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::TanhScaled(gamma) => {
                let y = gamma * z.tanh();
                if y >= gamma {
                    gamma.next_down()
                } else if y <= -gamma {
                    (-gamma).next_up()
                } else {
                    y
                }
            }
            Activation::Identity => z,
        }
    }

    /// Derivative given the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if z > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::TanhScaled(gamma) => {
                let t = z.tanh();
                gamma * (1.0 - t * t)
            }
            Activation::Identity => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::LeakyRelu => f.write_str("leaky_relu"),
            Activation::Relu => f.write_str("relu"),
            Activation::Sigmoid => f.write_str("sigmoid"),
            Activation::TanhScaled(g) => write!(f, "tanh_scaled:{g:e}"),
            Activation::Identity => f.write_str("identity"),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "leaky_relu" => Activation::LeakyRelu,
            "relu" => Activation::Relu,
            "sigmoid" => Activation::Sigmoid,
            "identity" => Activation::Identity,
            other => match other.strip_prefix("tanh_scaled:") {
                Some(g) => {
                    Activation::TanhScaled(g.parse().map_err(|_| Error::Config(format!("bad tanh scale {g:?}")))?)
                }
                None => return Err(Error::Config(format!("unknown activation {other:?}"))),
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    /// `out x in`
    weights: Array2<f64>,
    bias: Array1<f64>,
    activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Default)]
struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

/// Feed-forward network with a scalar output.
#[derive(Debug, Clone)]
pub struct DenseNet {
    layers: Vec<Layer>,
    adam: AdamState,
    instance: u64,
    version: u64,
}

impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.adam == other.adam
    }
}

/// Activations recorded by a forward pass, needed for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    instance: u64,
    version: u64,
    /// `activations[0]` is the input batch; `activations[l + 1]` the output of layer `l`.
    activations: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn outputs(&self) -> Vec<f64> {
        self.activations.last().expect("non-empty").column(0).to_vec()
    }

    pub fn batch_size(&self) -> usize {
        self.activations[0].nrows()
    }

    /// Pre-activations of every hidden and output unit, for kink detection in
    /// finite-difference checks.
    pub fn pre_activations(&self) -> impl Iterator<Item = f64> + '_ {
        self.pre_activations.iter().flat_map(|z| z.iter().copied())
    }
}

/// Gradients in the flat parameter layout plus the input gradient per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub inputs: Array2<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            params: vec![0.0; net.num_params()],
            inputs: Array2::zeros((0, net.input_dim())),
        }
    }

    pub fn accumulate(&mut self, other: &Gradients, scale: f64) {
        assert_eq!(self.params.len(), other.params.len());
        self.params
            .iter_mut()
            .zip(&other.params)
            .for_each(|(a, b)| *a += scale * b);
    }

    pub fn scale(&mut self, s: f64) {
        self.params.iter_mut().for_each(|g| *g *= s);
    }

    pub fn is_zero(&self) -> bool {
        self.params.iter().all(|&g| g == 0.0)
    }
}

impl DenseNet {
    /// Glorot-uniform weights, zero biases. `activations` has one entry per
    /// weight layer (`layer_sizes.len() - 1`).
    pub fn new(layer_sizes: &[usize], activations: &[Activation], rng: &mut impl Rng) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes, activations)?;
        for layer in &mut net.layers {
            let (fan_out, fan_in) = layer.weights.dim();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            layer
                .weights
                .iter_mut()
                .for_each(|w| *w = rng.random_range(-limit..limit));
        }
        Ok(net)
    }

    /// Sets the last layer's weights and bias to zero; the output then no
    /// longer depends on the input.
    pub fn zero_output_layer(&mut self) {
        if let Some(l) = self.layers.last_mut() {
            l.weights.fill(0.0);
            l.bias.fill(0.0);
        }
    }

    /// Convenience constructor: one activation for hidden layers, one for the output.
    pub fn mlp(layer_sizes: &[usize], hidden: Activation, output: Activation, rng: &mut impl Rng) -> Result<Self> {
        let n = layer_sizes.len().saturating_sub(1);
        let acts: Vec<Activation> = (0..n).map(|i| if i + 1 == n { output } else { hidden }).collect();
        Self::new(layer_sizes, &acts, rng)
    }

    pub fn zeros(layer_sizes: &[usize], activations: &[Activation]) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::Config("a network needs at least input and output sizes".into()));
        }
        if *layer_sizes.last().unwrap() != 1 {
            return Err(Error::Config("networks must end in a single output".into()));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        if activations.len() != layer_sizes.len() - 1 {
            return Err(Error::Dimension {
                expected: layer_sizes.len() - 1,
                got: activations.len(),
            });
        }
        let layers = layer_sizes
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| Layer {
                weights: Array2::zeros((w[1], w[0])),
                bias: Array1::zeros(w[1]),
                activation,
            })
            .collect::<Vec<_>>();
        let n_params = layers.iter().map(|l| l.weights.len() + l.bias.len()).sum();
        Ok(Self {
            layers,
            adam: AdamState {
                m: vec![0.0; n_params],
                v: vec![0.0; n_params],
                step: 0,
            },
            instance: NEXT_NET_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
        })
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.layers.iter().map(|l| l.bias.len()));
        sizes
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn num_params(&self) -> usize {
        self.adam.m.len()
    }

    pub fn adam_steps(&self) -> u64 {
        self.adam.step
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Dimension {
                expected: self.num_params(),
                got: params.len(),
            });
        }
        let mut it = params.iter();
        for l in &mut self.layers {
            l.weights
                .iter_mut()
                .chain(l.bias.iter_mut())
                .for_each(|p| *p = *it.next().unwrap());
        }
        self.version += 1;
        Ok(())
    }

    /// Output for one input vector plus the cache for `backward`.
    pub fn forward(&self, input: &[f64]) -> Result<(f64, ForwardCache)> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        let cache = self.forward_batch(x)?;
        let out = cache.activations.last().unwrap()[(0, 0)];
        Ok((out, cache))
    }

    /// Forward pass over the rows of `inputs`, keeping intermediates.
    pub fn forward_batch(&self, inputs: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(inputs.ncols())?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        activations.push(inputs.to_owned());
        for layer in &self.layers {
            let z = affine(activations.last().unwrap(), layer);
            let a = z.mapv(|v| layer.activation.apply(v));
            pre_activations.push(z);
            activations.push(a);
        }
        Ok(ForwardCache {
            instance: self.instance,
            version: self.version,
            activations,
            pre_activations,
        })
    }

    /// Outputs for the rows of `inputs` without retaining intermediates.
    pub fn predict_batch(&self, inputs: ArrayView2<f64>) -> Result<Vec<f64>> {
        self.check_input(inputs.ncols())?;
        let mut a = inputs.to_owned();
        for layer in &self.layers {
            let act = layer.activation;
            a = affine(&a, layer);
            a.mapv_inplace(|v| act.apply(v));
        }
        Ok(a.column(0).to_vec())
    }

    pub fn predict(&self, input: &[f64]) -> Result<f64> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        Ok(self.predict_batch(x)?[0])
    }

    /// Gradient of `upstream * output` for a single-sample cache.
    pub fn backward(&self, upstream: f64, cache: &ForwardCache) -> Result<Gradients> {
        if cache.batch_size() != 1 {
            return Err(Error::Usage("backward expects a single-sample cache".into()));
        }
        self.backward_batch(&[upstream], cache)
    }

    /// Gradient of `sum_b upstream[b] * output[b]` over a batch cache.
    pub fn backward_batch(&self, upstream: &[f64], cache: &ForwardCache) -> Result<Gradients> {
        if cache.instance != self.instance || cache.version != self.version {
            return Err(Error::Usage(
                "forward cache is stale: parameters changed since the forward pass".into(),
            ));
        }
        if upstream.len() != cache.batch_size() {
            return Err(Error::Dimension {
                expected: cache.batch_size(),
                got: upstream.len(),
            });
        }
        let mut per_layer: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(self.layers.len());
        let mut delta = Array2::from_shape_vec((upstream.len(), 1), upstream.to_vec()).expect("column");
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let z = &cache.pre_activations[l];
            let a = &cache.activations[l + 1];
            ndarray::Zip::from(&mut delta)
                .and(z)
                .and(a)
                .for_each(|d, &zv, &av| *d *= layer.activation.derivative(zv, av));
            let input = &cache.activations[l];
            let dw = delta.t().dot(input);
            let db = delta.sum_axis(Axis(0));
            per_layer.push((dw, db));
            delta = delta.dot(&layer.weights);
        }
        per_layer.reverse();
        let mut params = Vec::with_capacity(self.num_params());
        for (dw, db) in per_layer {
            params.extend(dw.iter());
            params.extend(db.iter());
        }
        Ok(Gradients { params, inputs: delta })
    }

    /// One ADAM update with bias correction.
    pub fn adam_step(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        if grads.params.len() != self.num_params() {
            return Err(Error::Dimension {
                expected: self.num_params(),
                got: grads.params.len(),
            });
        }
        let adam = &mut self.adam;
        adam.step += 1;
        let t = adam.step as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        let mut idx = 0;
        for layer in &mut self.layers {
            for p in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                let g = grads.params[idx];
                let m = &mut adam.m[idx];
                let v = &mut adam.v[idx];
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                idx += 1;
            }
        }
        self.version += 1;
        Ok(())
    }

    fn check_input(&self, got: usize) -> Result<()> {
        if got != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got,
            });
        }
        Ok(())
    }

    pub fn write_checkpoint(&self, out: &mut String) {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ");
        let sizes = self
            .layer_sizes()
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(" ");
        let acts = self
            .activations()
            .iter()
            .map(Activation::to_string)
            .collect::<Vec<_>>()
            .join(" ");
        let params = self.params();
        writeln!(out, "densenet 1").unwrap();
        writeln!(out, "layers {sizes}").unwrap();
        writeln!(out, "activations {acts}").unwrap();
        writeln!(out, "params {} {}", params.len(), join(&params)).unwrap();
        writeln!(out, "adam_step {}", self.adam.step).unwrap();
        writeln!(out, "adam_m {} {}", self.adam.m.len(), join(&self.adam.m)).unwrap();
        writeln!(out, "adam_v {} {}", self.adam.v.len(), join(&self.adam.v)).unwrap();
        writeln!(out, "end").unwrap();
    }

    pub fn to_checkpoint(&self) -> String {
        let mut s = String::new();
        self.write_checkpoint(&mut s);
        s
    }

    /// Reads one network from `lines`, consuming through its `end` record.
    pub fn read_checkpoint<'a>(lines: &mut impl Iterator<Item = &'a str>) -> Result<Self> {
        let mut next = |key: &str| -> Result<Vec<&'a str>> {
            let line = lines
                .by_ref()
                .map(str::trim)
                .find(|l| !l.is_empty())
                .ok_or_else(|| Error::Config(format!("checkpoint truncated before {key:?}")))?;
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some(k) if k == key => Ok(parts.collect()),
                other => Err(Error::Config(format!("expected {key:?} record, found {other:?}"))),
            }
        };
        let header = next("densenet")?;
        if header != ["1"] {
            return Err(Error::Config(format!("unsupported densenet version {header:?}")));
        }
        let sizes = next("layers")?
            .iter()
            .map(|s| {
                s.parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad layer size {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let acts = next("activations")?
            .iter()
            .map(|s| s.parse::<Activation>())
            .collect::<Result<Vec<_>>>()?;
        let mut net = Self::zeros(&sizes, &acts)?;
        let params = parse_counted(&next("params")?)?;
        net.set_params(&params)?;
        let step = next("adam_step")?;
        net.adam.step = step
            .first()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Config("bad adam_step".into()))?;
        net.adam.m = parse_counted(&next("adam_m")?)?;
        net.adam.v = parse_counted(&next("adam_v")?)?;
        if net.adam.m.len() != net.num_params() || net.adam.v.len() != net.num_params() {
            return Err(Error::Config("ADAM state does not match parameter count".into()));
        }
        next("end")?;
        Ok(net)
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        Self::read_checkpoint(&mut text.lines())
    }
}

fn affine(input: &Array2<f64>, layer: &Layer) -> Array2<f64> {
    let mut z = input.dot(&layer.weights.t());
    z += &layer.bias;
    z
}

fn parse_counted(fields: &[&str]) -> Result<Vec<f64>> {
    let (count, values) = fields
        .split_first()
        .ok_or_else(|| Error::Config("missing value count".into()))?;
    let count: usize = count
        .parse()
        .map_err(|_| Error::Config(format!("bad value count {count:?}")))?;
    if values.len() != count {
        return Err(Error::Config(format!(
            "expected {count} values, found {}",
            values.len()
        )));
    }
    values
        .iter()
        .map(|v| v.parse::<f64>().map_err(|_| Error::Config(format!("bad number {v:?}"))))
        .collect()
}
