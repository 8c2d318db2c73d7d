//! Dense feed-forward networks and the per-field model built from them.
//!
//! A network maps `z0 = x` through `z_l = act_l(W_l z_{l-1} + b_l)`; the last
//! layer is always linear. Two evaluation paths are provided:
//!
//! * [`DenseNetwork::forward_on_tape`] emits scalar graph nodes, so outputs can
//!   be differentiated with respect to inputs and parameters to any nesting
//!   depth the tape supports.
//! * [`DenseNetwork::forward_jets`] / [`DenseNetwork::backward_jets`] evaluate a
//!   whole batch together with first input derivatives (forward tangents) and
//!   back-propagate adjoints of both values and tangents to the parameters.
//!   This is the training path; tests pin it against the tape.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{NodeId, Tape};
use crate::field::Field;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("layer widths must be at least 1 (got layers={layers}, neurons={neurons})")]
    ZeroWidth { layers: usize, neurons: usize },
    #[error("input/output dimensions must be at least 1")]
    ZeroDimension,
    #[error("expected {expected} inputs, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("layer {layer}: weight matrix has {got} columns, previous width is {expected}")]
    ShapeChain { layer: usize, expected: usize, got: usize },
    #[error("layer {layer}: bias length {got} does not match {expected} rows")]
    BiasShape { layer: usize, expected: usize, got: usize },
    #[error("final layer must be linear")]
    FinalLayerNotLinear,
    #[error("network has no layers")]
    Empty,
    #[error("field list is empty")]
    NoFields,
    #[error("duplicate field `{0}`")]
    DuplicateField(Field),
    #[error("parameter vector has length {got}, expected {expected}")]
    ParamLength { expected: usize, got: usize },
    #[error("{0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Linear,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Linear => x,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        }
    }
}

impl FromStr for Activation {
    type Err = NetworkError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "linear" => Ok(Activation::Linear),
            _ => Err(NetworkError::Parse(format!(
                "unknown activation `{s}` (expected tanh|relu|linear)"
            ))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Whether every field gets its own network or all fields share one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchMode {
    Independent,
    Shared,
}

impl FromStr for ArchMode {
    type Err = NetworkError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "independent" => Ok(ArchMode::Independent),
            "shared" | "single" | "single-shared" => Ok(ArchMode::Shared),
            _ => Err(NetworkError::Parse(format!(
                "unknown network mode `{s}` (expected independent|shared)"
            ))),
        }
    }
}

/// Hidden-layer count and width shared by every network of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkArch {
    /// Number of hidden layers.
    pub layers: usize,
    /// Neurons per hidden layer.
    pub neurons: usize,
    pub activation: Activation,
    pub mode: ArchMode,
}

impl NetworkArch {
    pub fn new(layers: usize, neurons: usize, activation: Activation) -> Self {
        Self {
            layers,
            neurons,
            activation,
            mode: ArchMode::Independent,
        }
    }

    pub fn with_mode(mut self, mode: ArchMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.layers == 0 || self.neurons == 0 {
            return Err(NetworkError::ZeroWidth {
                layers: self.layers,
                neurons: self.neurons,
            });
        }
        Ok(())
    }

    /// Parses `LAYERSxNEURONS`, e.g. `5x20`.
    pub fn parse_shape(s: &str, activation: Activation) -> Result<Self, NetworkError> {
        let (l, n) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| NetworkError::Parse(format!("architecture `{s}` is not LxN")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| NetworkError::Parse(format!("architecture `{s}` is not LxN")))
        };
        let arch = Self::new(parse(l)?, parse(n)?, activation);
        arch.validate()?;
        Ok(arch)
    }

    /// Parameter count of one network with `d_x` inputs and `d_y` outputs.
    pub fn param_count(&self, d_x: usize, d_y: usize) -> usize {
        let n = self.neurons;
        (d_x * n + n) + (self.layers - 1) * (n * n + n) + (n * d_y + d_y)
    }
}

/// One affine map followed by an activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// Shape `(outputs, inputs)`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetwork {
    layers: Vec<Layer>,
}

impl DenseNetwork {
    /// Glorot-uniform weights, zero biases.
    pub fn init(arch: &NetworkArch, d_x: usize, d_y: usize, seed: u64) -> Result<Self, NetworkError> {
        arch.validate()?;
        if d_x == 0 || d_y == 0 {
            return Err(NetworkError::ZeroDimension);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut widths = vec![d_x];
        widths.extend(std::iter::repeat(arch.neurons).take(arch.layers));
        widths.push(d_y);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights =
                    Array2::from_shape_simple_fn((fan_out, fan_in), || rng.gen_range(-bound..=bound));
                let activation = if l == arch.layers {
                    Activation::Linear
                } else {
                    arch.activation
                };
                Layer {
                    weights,
                    bias: Array1::zeros(fan_out),
                    activation,
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, NetworkError> {
        let last = layers.last().ok_or(NetworkError::Empty)?;
        if last.activation != Activation::Linear {
            return Err(NetworkError::FinalLayerNotLinear);
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.inputs() == 0 || layer.outputs() == 0 {
                return Err(NetworkError::ZeroDimension);
            }
            if layer.bias.len() != layer.outputs() {
                return Err(NetworkError::BiasShape {
                    layer: l,
                    expected: layer.outputs(),
                    got: layer.bias.len(),
                });
            }
            if l > 0 && layers[l - 1].outputs() != layer.inputs() {
                return Err(NetworkError::ShapeChain {
                    layer: l,
                    expected: layers[l - 1].outputs(),
                    got: layer.inputs(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::outputs)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// `(rows, cols)` of every weight matrix, for shape comparisons.
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| l.weights.dim()).collect()
    }

    /// Parameters in canonical order: per layer, weights row-major then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.write_params(&mut out);
        out
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        for layer in &self.layers {
            out.extend(layer.weights.iter());
            out.extend(layer.bias.iter());
        }
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<(), NetworkError> {
        if params.len() != self.param_count() {
            return Err(NetworkError::ParamLength {
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let mut it = params.iter().copied();
        for layer in &mut self.layers {
            layer.weights.iter_mut().for_each(|w| *w = it.next().unwrap());
            layer.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
        Ok(())
    }

    /// Plain evaluation at one point.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>, NetworkError> {
        if x.len() != self.input_dim() {
            return Err(NetworkError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut z = x.to_vec();
        for layer in &self.layers {
            z = (0..layer.outputs())
                .map(|r| {
                    let row = layer.weights.row(r);
                    let mut acc = row[0] * z[0];
                    for c in 1..z.len() {
                        acc += row[c] * z[c];
                    }
                    layer.activation.apply(acc + layer.bias[r])
                })
                .collect();
        }
        Ok(z)
    }

    /// Hidden-layer activations at one point (outputs of every non-final layer).
    pub fn hidden_activations(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, NetworkError> {
        let mut out = Vec::new();
        let mut z = x.to_vec();
        if z.len() != self.input_dim() {
            return Err(NetworkError::DimensionMismatch {
                expected: self.input_dim(),
                got: z.len(),
            });
        }
        for layer in &self.layers[..self.layers.len() - 1] {
            let a = layer.weights.dot(&Array1::from(z)) + &layer.bias;
            z = a.iter().map(|&v| layer.activation.apply(v)).collect();
            out.push(z.clone());
        }
        Ok(out)
    }

    /// Registers every parameter as an anonymous tape variable, in
    /// [`DenseNetwork::flatten`] order.
    pub fn register_params(&self, tape: &mut Tape) -> Vec<NodeId> {
        self.flatten().into_iter().map(|v| tape.var(v)).collect()
    }

    /// Emits the forward pass as graph nodes. `params` come from
    /// [`DenseNetwork::register_params`] (or any nodes in the same order).
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        params: &[NodeId],
        inputs: &[NodeId],
    ) -> Result<Vec<NodeId>, NetworkError> {
        if inputs.len() != self.input_dim() {
            return Err(NetworkError::DimensionMismatch {
                expected: self.input_dim(),
                got: inputs.len(),
            });
        }
        if params.len() != self.param_count() {
            return Err(NetworkError::ParamLength {
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let mut z = inputs.to_vec();
        let mut offset = 0;
        for layer in &self.layers {
            let (rows, cols) = layer.weights.dim();
            let w = &params[offset..offset + rows * cols];
            let b = &params[offset + rows * cols..offset + rows * cols + rows];
            offset += rows * cols + rows;
            z = (0..rows)
                .map(|r| {
                    let mut acc = tape.mul(w[r * cols], z[0]);
                    for c in 1..cols {
                        let t = tape.mul(w[r * cols + c], z[c]);
                        acc = tape.add(acc, t);
                    }
                    let a = tape.add(acc, b[r]);
                    match layer.activation {
                        Activation::Tanh => tape.tanh(a),
                        Activation::Relu => tape.relu(a),
                        Activation::Linear => a,
                    }
                })
                .collect();
        }
        Ok(z)
    }

    /// Batched forward pass carrying first derivatives with respect to the
    /// inputs listed in `dirs`. `inputs` has shape `(d_x, batch)`.
    pub fn forward_jets(&self, inputs: ArrayView2<f64>, dirs: &[usize]) -> Result<JetTrace, NetworkError> {
        let (d_x, batch) = inputs.dim();
        if d_x != self.input_dim() {
            return Err(NetworkError::DimensionMismatch {
                expected: self.input_dim(),
                got: d_x,
            });
        }
        let k = dirs.len();
        let mut stack = Array2::<f64>::zeros((d_x, (1 + k) * batch));
        stack.slice_mut(s![.., 0..batch]).assign(&inputs);
        for (j, &dir) in dirs.iter().enumerate() {
            if dir >= d_x {
                return Err(NetworkError::DimensionMismatch { expected: d_x, got: dir + 1 });
            }
            stack
                .slice_mut(s![dir, (1 + j) * batch..(2 + j) * batch])
                .fill(1.0);
        }
        let mut trace = JetTrace {
            batch,
            dirs: k,
            layer_inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
            output: Array2::zeros((0, 0)),
        };
        for layer in &self.layers {
            let mut pre = layer.weights.dot(&stack);
            pre.slice_mut(s![.., 0..batch])
                .axis_iter_mut(Axis(1))
                .for_each(|mut col| col += &layer.bias);
            let mut post = pre.clone();
            match layer.activation {
                Activation::Linear => {}
                act => {
                    let (value, mut tangents) = post.view_mut().split_at(Axis(1), batch);
                    let mut value = value;
                    value.mapv_inplace(|a| act.apply(a));
                    let d1 = value.mapv(|t| match act {
                        Activation::Tanh => 1.0 - t * t,
                        _ => {
                            if t > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                    });
                    for j in 0..k {
                        let mut blk = tangents.slice_mut(s![.., j * batch..(j + 1) * batch]);
                        blk *= &d1;
                    }
                }
            }
            trace.layer_inputs.push(std::mem::replace(&mut stack, post));
            trace.pre.push(pre);
        }
        trace.output = stack;
        Ok(trace)
    }

    /// Back-propagates adjoints of the jet outputs into parameter gradients.
    /// `seed` has the layout of [`JetTrace::output`]; the gradient is
    /// accumulated into `grad` in [`DenseNetwork::flatten`] order.
    pub fn backward_jets(
        &self,
        trace: &JetTrace,
        seed: Array2<f64>,
        grad: &mut [f64],
    ) -> Result<(), NetworkError> {
        if grad.len() != self.param_count() {
            return Err(NetworkError::ParamLength {
                expected: self.param_count(),
                got: grad.len(),
            });
        }
        let (batch, k) = (trace.batch, trace.dirs);
        let mut g = seed;
        let mut offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |acc, l| {
                let o = *acc;
                *acc += l.param_count();
                Some(o)
            })
            .collect();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let pre = &trace.pre[l];
            // adjoint of the pre-activation stack
            match layer.activation {
                Activation::Linear => {}
                act => {
                    let post_value = trace
                        .layer_inputs
                        .get(l + 1)
                        .unwrap_or(&trace.output)
                        .slice(s![.., 0..batch]);
                    let d1 = post_value.mapv(|t| match act {
                        Activation::Tanh => 1.0 - t * t,
                        _ => {
                            if t > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                    });
                    let mut ga = &g.slice(s![.., 0..batch]) * &d1;
                    if act == Activation::Tanh {
                        // d2 = -2 t (1 - t^2)
                        let d2 = Zip::from(&post_value)
                            .and(&d1)
                            .map_collect(|&t, &d| -2.0 * t * d);
                        for j in 0..k {
                            let cols = s![.., (1 + j) * batch..(2 + j) * batch];
                            Zip::from(&mut ga)
                                .and(&g.slice(cols))
                                .and(&pre.slice(cols))
                                .and(&d2)
                                .for_each(|a, &gt, &at, &d| *a += gt * d * at);
                        }
                    }
                    for j in 0..k {
                        let mut blk = g.slice_mut(s![.., (1 + j) * batch..(2 + j) * batch]);
                        blk *= &d1;
                    }
                    g.slice_mut(s![.., 0..batch]).assign(&ga);
                }
            }
            let input = &trace.layer_inputs[l];
            let gw = g.dot(&input.t());
            let gb = g.slice(s![.., 0..batch]).sum_axis(Axis(1));
            let off = offsets.pop().expect("one offset per layer");
            let (rows, cols) = layer.weights.dim();
            for (dst, src) in grad[off..off + rows * cols].iter_mut().zip(gw.iter()) {
                *dst += src;
            }
            for (dst, src) in grad[off + rows * cols..off + rows * cols + rows]
                .iter_mut()
                .zip(gb.iter())
            {
                *dst += src;
            }
            if l > 0 {
                g = layer.weights.t().dot(&g);
            }
        }
        Ok(())
    }
}

/// Cached intermediates of [`DenseNetwork::forward_jets`]. Every stacked
/// matrix has `(1 + dirs) * batch` columns: the value block followed by one
/// tangent block per direction.
#[derive(Debug, Clone)]
pub struct JetTrace {
    batch: usize,
    dirs: usize,
    layer_inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl JetTrace {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn dirs(&self) -> usize {
        self.dirs
    }

    /// `(d_y, (1 + dirs) * batch)`.
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn value(&self, out: usize, point: usize) -> f64 {
        self.output[[out, point]]
    }

    pub fn tangent(&self, out: usize, dir: usize, point: usize) -> f64 {
        self.output[[out, (1 + dir) * self.batch + point]]
    }
}

/// Networks for a set of physical fields sharing one input list.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldModel {
    arch: NetworkArch,
    inputs: Vec<String>,
    fields: Vec<Field>,
    networks: Vec<DenseNetwork>,
}

impl FieldModel {
    /// Independent mode builds one single-output network per field seeded
    /// `seed + index`; shared mode builds one network with an output per field.
    pub fn build(
        fields: &[Field],
        arch: &NetworkArch,
        inputs: &[&str],
        seed: u64,
    ) -> Result<Self, NetworkError> {
        if fields.is_empty() {
            return Err(NetworkError::NoFields);
        }
        for (i, f) in fields.iter().enumerate() {
            if fields[..i].contains(f) {
                return Err(NetworkError::DuplicateField(*f));
            }
        }
        let d_x = inputs.len();
        let networks = match arch.mode {
            ArchMode::Independent => fields
                .iter()
                .enumerate()
                .map(|(i, _)| DenseNetwork::init(arch, d_x, 1, seed.wrapping_add(i as u64)))
                .collect::<Result<Vec<_>, _>>()?,
            ArchMode::Shared => vec![DenseNetwork::init(arch, d_x, fields.len(), seed)?],
        };
        Ok(Self {
            arch: *arch,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            fields: fields.to_vec(),
            networks,
        })
    }

    /// Assembles a model from explicit networks (e.g. loaded weights).
    pub fn from_networks(
        arch: NetworkArch,
        inputs: Vec<String>,
        fields: Vec<Field>,
        networks: Vec<DenseNetwork>,
    ) -> Result<Self, NetworkError> {
        if fields.is_empty() {
            return Err(NetworkError::NoFields);
        }
        for (i, f) in fields.iter().enumerate() {
            if fields[..i].contains(f) {
                return Err(NetworkError::DuplicateField(*f));
            }
        }
        let expected_nets = match arch.mode {
            ArchMode::Independent => fields.len(),
            ArchMode::Shared => 1,
        };
        if networks.len() != expected_nets {
            return Err(NetworkError::Parse(format!(
                "expected {expected_nets} networks, got {}",
                networks.len()
            )));
        }
        for net in &networks {
            if net.input_dim() != inputs.len() {
                return Err(NetworkError::DimensionMismatch {
                    expected: inputs.len(),
                    got: net.input_dim(),
                });
            }
        }
        Ok(Self {
            arch,
            inputs,
            fields,
            networks,
        })
    }

    pub fn arch(&self) -> &NetworkArch {
        &self.arch
    }

    pub fn inputs(&self) -> &[String] {
        &self.inputs
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    pub fn networks(&self) -> &[DenseNetwork] {
        &self.networks
    }

    pub fn networks_mut(&mut self) -> &mut [DenseNetwork] {
        &mut self.networks
    }

    /// `(network index, output index)` serving `field`.
    pub fn slot(&self, field: Field) -> Option<(usize, usize)> {
        let i = self.fields.iter().position(|&f| f == field)?;
        Some(match self.arch.mode {
            ArchMode::Independent => (i, 0),
            ArchMode::Shared => (0, i),
        })
    }

    pub fn param_count(&self) -> usize {
        self.networks.iter().map(DenseNetwork::param_count).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for n in &self.networks {
            n.write_params(&mut out);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<(), NetworkError> {
        if params.len() != self.param_count() {
            return Err(NetworkError::ParamLength {
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let mut off = 0;
        for n in &mut self.networks {
            let c = n.param_count();
            n.set_params(&params[off..off + c])?;
            off += c;
        }
        Ok(())
    }

    /// Offsets of each network's block inside [`FieldModel::flatten`].
    pub fn param_offsets(&self) -> Vec<usize> {
        self.networks
            .iter()
            .scan(0, |acc, n| {
                let o = *acc;
                *acc += n.param_count();
                Some(o)
            })
            .collect()
    }

    /// Predicted value of every field at one input point.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<(Field, f64)>, NetworkError> {
        let outs = self
            .networks
            .iter()
            .map(|n| n.predict(x))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self
            .fields
            .iter()
            .map(|&f| {
                let (n, o) = self.slot(f).expect("field belongs to model");
                (f, outs[n][o])
            })
            .collect())
    }

    /// Layer shapes per network, labelled for error messages.
    pub fn describe_shapes(&self) -> Vec<String> {
        self.networks
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let label = match self.arch.mode {
                    ArchMode::Independent => self.fields[i].name().to_string(),
                    ArchMode::Shared => "shared".to_string(),
                };
                let shapes: Vec<String> =
                    n.shapes().iter().map(|(r, c)| format!("{r}x{c}")).collect();
                format!("{label}: [{}]", shapes.join(", "))
            })
            .collect()
    }
}
