use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::ops::{self, LrnParams};
use super::{NnError, Tensor};

/// One layer of a sequential stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv { out_ch: usize, kh: usize, kw: usize, stride: usize },
    MaxPool { kh: usize, kw: usize, stride: usize },
    Lrn { k: f64, n: usize, alpha: f64, beta: f64 },
    Dropout { rate: f64 },
    Dense { out: usize },
    Relu,
    Flatten,
}

impl LayerSpec {
    pub fn validate(&self) -> Result<(), NnError> {
        let ok = match *self {
            LayerSpec::Conv { out_ch, kh, kw, stride } => out_ch >= 1 && kh >= 1 && kw >= 1 && stride >= 1,
            LayerSpec::MaxPool { kh, kw, stride } => kh >= 1 && kw >= 1 && stride >= 1,
            LayerSpec::Lrn { k, n, alpha, beta } => {
                return LrnParams { k, n, alpha, beta }.validate();
            }
            LayerSpec::Dropout { rate } => (0.0..1.0).contains(&rate),
            LayerSpec::Dense { out } => out >= 1,
            LayerSpec::Relu | LayerSpec::Flatten => true,
        };
        if ok {
            Ok(())
        } else {
            Err(NnError::Config(format!("invalid layer {self:?}")))
        }
    }

    /// Per-sample output shape (batch dimension excluded).
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        self.validate()?;
        let spatial = |what: &str| -> Result<(usize, usize, usize), NnError> {
            match *input {
                [c, h, w] => Ok((c, h, w)),
                _ => Err(NnError::Shape(format!("{what} needs a [C, H, W] input, got {input:?}"))),
            }
        };
        match *self {
            LayerSpec::Conv { out_ch, kh, kw, stride } => {
                let (_, h, w) = spatial("conv")?;
                Ok(vec![out_ch, ops::conv_output_size(h, kh, stride)?, ops::conv_output_size(w, kw, stride)?])
            }
            LayerSpec::MaxPool { kh, kw, stride } => {
                let (c, h, w) = spatial("max-pool")?;
                Ok(vec![c, ops::conv_output_size(h, kh, stride)?, ops::conv_output_size(w, kw, stride)?])
            }
            LayerSpec::Lrn { .. } => {
                spatial("LRN")?;
                Ok(input.to_vec())
            }
            LayerSpec::Dense { out } => match *input {
                [_] => Ok(vec![out]),
                _ => Err(NnError::Shape(format!("dense needs a flat input, got {input:?}"))),
            },
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Dropout { .. } | LayerSpec::Relu => Ok(input.to_vec()),
        }
    }

    /// Weight and bias shapes for parameterised layers.
    fn param_shapes(&self, input: &[usize]) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Conv { out_ch, kh, kw, .. } => Some((vec![out_ch, input[0], kh, kw], vec![out_ch])),
            LayerSpec::Dense { out } => Some((vec![out, input[0]], vec![out])),
            _ => None,
        }
    }
}

/// Forward-pass mode. Dropout is active only in `Train`.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

enum Aux {
    None,
    Argmax(Vec<usize>),
    Mask(Option<Vec<f64>>),
}

/// Values cached by a forward pass for the matching backward pass.
pub struct Trace {
    inputs: Vec<Tensor>,
    aux: Vec<Aux>,
}

impl Trace {
    /// An empty trace; backward on it is a state error.
    pub fn empty() -> Self {
        Self { inputs: Vec::new(), aux: Vec::new() }
    }
}

/// A sequential layer stack with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    specs: Vec<LayerSpec>,
    shapes: Vec<Vec<usize>>,
    params: Vec<Tensor>,
    slots: Vec<Option<usize>>,
}

impl Network {
    /// Builds the stack with fan-in/fan-out scaled uniform weights and zero biases.
    pub fn new(input_shape: &[usize], specs: Vec<LayerSpec>, rng: &mut ChaCha8Rng) -> Result<Self, NnError> {
        let (shapes, param_shapes) = Self::infer_shapes(input_shape, &specs)?;
        let mut params = Vec::with_capacity(param_shapes.len());
        for shape in param_shapes.chunks(2) {
            let (ws, bs) = (&shape[0], &shape[1]);
            let receptive: usize = ws[2..].iter().product();
            let fan_in = ws[1] * receptive;
            let fan_out = ws[0] * receptive;
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
            params.push(Tensor::from_fn(ws, |_| dist.sample(rng)));
            params.push(Tensor::zeros(bs));
        }
        Self::assemble(input_shape, specs, shapes, params)
    }

    /// Rebuilds a stack from stored parameters in declaration order.
    pub fn with_params(input_shape: &[usize], specs: Vec<LayerSpec>, params: Vec<Tensor>) -> Result<Self, NnError> {
        let (shapes, param_shapes) = Self::infer_shapes(input_shape, &specs)?;
        if params.len() != param_shapes.len()
            || params.iter().zip(&param_shapes).any(|(p, s)| p.shape() != s.as_slice())
        {
            return Err(NnError::Params("stored parameters do not match the layer stack".into()));
        }
        Self::assemble(input_shape, specs, shapes, params)
    }

    fn infer_shapes(input_shape: &[usize], specs: &[LayerSpec]) -> Result<(Vec<Vec<usize>>, Vec<Vec<usize>>), NnError> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(NnError::Shape(format!("invalid input shape {input_shape:?}")));
        }
        let mut shapes = Vec::with_capacity(specs.len());
        let mut param_shapes = Vec::new();
        let mut cur = input_shape.to_vec();
        for spec in specs {
            if let Some((w, b)) = spec.param_shapes(&cur) {
                param_shapes.push(w);
                param_shapes.push(b);
            }
            cur = spec.output_shape(&cur)?;
            shapes.push(cur.clone());
        }
        Ok((shapes, param_shapes))
    }

    fn assemble(input_shape: &[usize], specs: Vec<LayerSpec>, shapes: Vec<Vec<usize>>, params: Vec<Tensor>) -> Result<Self, NnError> {
        let mut next = 0;
        let slots = specs
            .iter()
            .map(|s| match s {
                LayerSpec::Conv { .. } | LayerSpec::Dense { .. } => {
                    next += 2;
                    Some(next - 2)
                }
                _ => None,
            })
            .collect();
        Ok(Self { input_shape: input_shape.to_vec(), specs, shapes, params, slots })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    /// Per-sample output shape of every layer, in order.
    pub fn layer_shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().map(Vec::as_slice).unwrap_or(&self.input_shape)
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Zero tensors shaped like the parameters.
    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| Tensor::zeros(p.shape())).collect()
    }

    fn check_input(&self, x: &Tensor) -> Result<(), NnError> {
        if x.shape().len() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            return Err(NnError::Shape(format!(
                "network expects [N, {:?}], got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    fn layer_forward(&self, i: usize, x: &Tensor, mode: &mut Mode<'_>) -> Result<(Tensor, Aux), NnError> {
        let param = |k: usize| &self.params[self.slots[i].expect("parameterised layer") + k];
        Ok(match self.specs[i] {
            LayerSpec::Conv { stride, .. } => (ops::conv2d_forward(x, param(0), param(1), stride)?, Aux::None),
            LayerSpec::MaxPool { kh, kw, stride } => {
                let (out, arg) = ops::maxpool_forward(x, kh, kw, stride)?;
                (out, Aux::Argmax(arg))
            }
            LayerSpec::Lrn { k, n, alpha, beta } => (ops::lrn_forward(x, &LrnParams { k, n, alpha, beta })?, Aux::None),
            LayerSpec::Dropout { rate } => {
                let (out, mask) = match mode {
                    Mode::Eval => ops::dropout_forward::<ChaCha8Rng>(x, rate, None)?,
                    Mode::Train(rng) => ops::dropout_forward(x, rate, Some(&mut **rng))?,
                };
                (out, Aux::Mask(mask))
            }
            LayerSpec::Dense { .. } => (ops::dense_forward(x, param(0), param(1))?, Aux::None),
            LayerSpec::Relu => (ops::relu_forward(x), Aux::None),
            LayerSpec::Flatten => (ops::flatten(x)?, Aux::None),
        })
    }

    /// Forward pass keeping what the backward pass needs.
    pub fn forward(&self, x: &Tensor, mut mode: Mode<'_>) -> Result<(Tensor, Trace), NnError> {
        self.check_input(x)?;
        let mut trace = Trace { inputs: Vec::with_capacity(self.specs.len()), aux: Vec::with_capacity(self.specs.len()) };
        let mut cur = x.clone();
        for i in 0..self.specs.len() {
            let (out, aux) = self.layer_forward(i, &cur, &mut mode)?;
            trace.inputs.push(cur);
            trace.aux.push(aux);
            cur = out;
        }
        Ok((cur, trace))
    }

    /// Evaluation-mode forward pass without caching.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor, NnError> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for i in 0..self.specs.len() {
            cur = self.layer_forward(i, &cur, &mut Mode::Eval)?.0;
        }
        Ok(cur)
    }

    /// The discrete choices a forward pass made: the gate of every ReLU input
    /// and the winner of every pooling window. Two passes with equal patterns
    /// lie on the same smooth piece of the network function.
    pub fn activation_pattern(&self, trace: &Trace) -> Vec<usize> {
        let mut out = Vec::new();
        for (i, spec) in self.specs.iter().enumerate().take(trace.inputs.len()) {
            match (spec, &trace.aux[i]) {
                (LayerSpec::Relu, _) => out.extend(trace.inputs[i].data().iter().map(|&v| (v > 0.0) as usize)),
                (LayerSpec::MaxPool { .. }, Aux::Argmax(arg)) => out.extend_from_slice(arg),
                _ => {}
            }
        }
        out
    }

    /// Back-propagates `grad_out`, adding parameter gradients into `grads`
    /// and returning the gradient with respect to the network input.
    pub fn backward(&self, trace: &Trace, grad_out: &Tensor, grads: &mut [Tensor]) -> Result<Tensor, NnError> {
        if trace.inputs.len() != self.specs.len() {
            return Err(NnError::NoForwardCache);
        }
        if grads.len() != self.params.len() {
            return Err(NnError::Params("gradient buffer does not match parameters".into()));
        }
        let mut g = grad_out.clone();
        for i in (0..self.specs.len()).rev() {
            let x = &trace.inputs[i];
            let slot = self.slots[i];
            g = match (&self.specs[i], &trace.aux[i]) {
                (LayerSpec::Conv { stride, .. }, _) => {
                    let s = slot.expect("conv slot");
                    let cg = ops::conv2d_backward(x, &self.params[s], &g, *stride)?;
                    grads[s].add_assign(&cg.weight)?;
                    grads[s + 1].add_assign(&cg.bias)?;
                    cg.input
                }
                (LayerSpec::MaxPool { .. }, Aux::Argmax(arg)) => ops::maxpool_backward(x.shape(), arg, &g)?,
                (&LayerSpec::Lrn { k, n, alpha, beta }, _) => ops::lrn_backward(x, &LrnParams { k, n, alpha, beta }, &g)?,
                (LayerSpec::Dropout { .. }, Aux::Mask(mask)) => ops::dropout_backward(mask.as_deref(), &g)?,
                (LayerSpec::Dense { .. }, _) => {
                    let s = slot.expect("dense slot");
                    let dg = ops::dense_backward(x, &self.params[s], &g)?;
                    grads[s].add_assign(&dg.weight)?;
                    grads[s + 1].add_assign(&dg.bias)?;
                    dg.input
                }
                (LayerSpec::Relu, _) => ops::relu_backward(x, &g)?,
                (LayerSpec::Flatten, _) => g.reshape(x.shape().to_vec())?,
                _ => return Err(NnError::NoForwardCache),
            };
        }
        Ok(g)
    }
}

/// Deterministic per-item RNG derived from a base seed and a stream of indices.
pub fn derived_rng(seed: u64, stream: &[u64]) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for &s in stream {
        let mixed = rng.random::<u64>() ^ s.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        rng = ChaCha8Rng::seed_from_u64(mixed);
    }
    rng
}
