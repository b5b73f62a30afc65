//! Layer graph with a recorded forward pass and reverse-mode backward pass.
//!
//! Nodes are appended in topological order; every tensor flowing through the
//! graph is an NHWC batch, and the concatenation axes use the batched
//! numbering (1 = rows, 2 = columns, 3 = channels).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::activation::Activation;
use super::adam::{AdamState, ParamRef};
use super::conv::{
    conv2d_backward, conv2d_forward, conv_transpose2d_backward, conv_transpose2d_forward, KERNEL,
};
use super::dropout::dropout;
use super::norm::{
    batchnorm_infer_backward, batchnorm_infer_forward, batchnorm_train_backward,
    batchnorm_train_forward, BatchNormCache,
};
use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

pub type NodeId = usize;
pub type ParamId = usize;

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Input,
    Conv2d {
        kernel: ParamId,
        bias: ParamId,
        stride: usize,
    },
    ConvTranspose2d {
        kernel: ParamId,
        bias: ParamId,
    },
    BatchNorm {
        gamma: ParamId,
        beta: ParamId,
        mean: ParamId,
        var: ParamId,
    },
    Activation(Activation),
    Dropout {
        rate: f64,
    },
    Concat {
        axis: usize,
    },
    Slice {
        channel: usize,
    },
}

#[derive(Debug, Clone)]
pub struct Node {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<NodeId>,
    /// Per-sample extent `[rows, cols, channels]`.
    pub shape: [usize; 3],
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
    pub trainable: bool,
}

#[derive(Debug, Clone)]
enum Aux {
    None,
    Mask(Tensor),
    BatchNorm(BatchNormCache),
}

#[derive(Debug, Clone)]
pub struct Network {
    nodes: Vec<Node>,
    params: Vec<Param>,
    inputs: Vec<NodeId>,
    output: Option<NodeId>,
    mode: Mode,
    rng: ChaCha8Rng,
    tape: Vec<Option<Tensor>>,
    aux: Vec<Aux>,
    input_grads: Vec<Option<Tensor>>,
}

impl Network {
    /// `seed` drives weight initialization and, afterwards, dropout masks.
    pub fn new(seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
            inputs: Vec::new(),
            output: None,
            mode: Mode::Inference,
            rng: ChaCha8Rng::seed_from_u64(seed),
            tape: Vec::new(),
            aux: Vec::new(),
            input_grads: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Restarts the dropout stream.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn inputs(&self) -> &[NodeId] {
        &self.inputs
    }

    pub fn output(&self) -> Option<NodeId> {
        self.output
    }

    pub fn set_output(&mut self, id: NodeId) {
        self.output = Some(id);
    }

    /// Output of `id` from the most recent forward pass.
    pub fn node_output(&self, id: NodeId) -> Option<&Tensor> {
        self.tape.get(id).and_then(Option::as_ref)
    }

    /// Gradient reaching graph input `i` in the most recent backward pass.
    pub fn input_grad(&self, i: usize) -> Option<&Tensor> {
        self.input_grads.get(i).and_then(Option::as_ref)
    }

    pub fn add_param(
        &mut self,
        name: impl Into<String>,
        value: Tensor,
        trainable: bool,
    ) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
            grad: None,
            trainable,
        });
        self.params.len() - 1
    }

    fn glorot(&mut self, shape: [usize; 4], fan_in: usize, fan_out: usize) -> Tensor {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-limit..limit)).collect();
        Tensor::from_vec(&shape, data).expect("kernel extents are positive")
    }

    pub fn add_input(&mut self, name: impl Into<String>, shape: [usize; 3]) -> Result<NodeId> {
        if shape.contains(&0) {
            return Err(Error::Build(format!(
                "input extent {shape:?} has a zero axis"
            )));
        }
        let id = self.push(name.into(), Op::Input, vec![], shape);
        self.inputs.push(id);
        Ok(id)
    }

    fn push(&mut self, name: String, op: Op, inputs: Vec<NodeId>, shape: [usize; 3]) -> NodeId {
        self.nodes.push(Node {
            name,
            op,
            inputs,
            shape,
        });
        self.nodes.len() - 1
    }

    fn shape_of(&self, id: NodeId) -> Result<[usize; 3]> {
        self.nodes
            .get(id)
            .map(|n| n.shape)
            .ok_or_else(|| Error::Build(format!("unknown node {id}")))
    }

    /// SAME 3×3 convolution with Glorot-uniform kernel and zero bias.
    pub fn conv2d(
        &mut self,
        name: &str,
        input: NodeId,
        filters: usize,
        stride: usize,
    ) -> Result<NodeId> {
        let [h, w, c] = self.shape_of(input)?;
        if filters == 0 {
            return Err(Error::Build(format!("{name}: zero filters")));
        }
        let shape = match stride {
            1 => [h, w, filters],
            2 if h % 2 == 0 && w % 2 == 0 => [h / 2, w / 2, filters],
            _ => {
                return Err(Error::Build(format!(
                    "{name}: stride {stride} does not fit a {h}x{w} input"
                )))
            }
        };
        let taps = KERNEL * KERNEL;
        let k = self.glorot([KERNEL, KERNEL, c, filters], taps * c, taps * filters);
        let kernel = self.add_param(format!("{name}/kernel"), k, true);
        let bias = self.add_param(format!("{name}/bias"), Tensor::zeros(&[filters])?, true);
        Ok(self.push(
            name.into(),
            Op::Conv2d {
                kernel,
                bias,
                stride,
            },
            vec![input],
            shape,
        ))
    }

    /// Stride-2 transposed convolution that doubles both spatial extents.
    pub fn conv_transpose2d(
        &mut self,
        name: &str,
        input: NodeId,
        filters: usize,
    ) -> Result<NodeId> {
        let [h, w, c] = self.shape_of(input)?;
        if filters == 0 {
            return Err(Error::Build(format!("{name}: zero filters")));
        }
        let taps = KERNEL * KERNEL;
        let k = self.glorot([KERNEL, KERNEL, filters, c], taps * filters, taps * c);
        let kernel = self.add_param(format!("{name}/kernel"), k, true);
        let bias = self.add_param(format!("{name}/bias"), Tensor::zeros(&[filters])?, true);
        Ok(self.push(
            name.into(),
            Op::ConvTranspose2d { kernel, bias },
            vec![input],
            [2 * h, 2 * w, filters],
        ))
    }

    pub fn batchnorm(&mut self, name: &str, input: NodeId) -> Result<NodeId> {
        let shape = self.shape_of(input)?;
        let c = shape[2];
        let gamma = self.add_param(format!("{name}/gamma"), Tensor::full(&[c], 1.0)?, true);
        let beta = self.add_param(format!("{name}/beta"), Tensor::zeros(&[c])?, true);
        let mean = self.add_param(format!("{name}/moving_mean"), Tensor::zeros(&[c])?, false);
        let var = self.add_param(
            format!("{name}/moving_variance"),
            Tensor::full(&[c], 1.0)?,
            false,
        );
        Ok(self.push(
            name.into(),
            Op::BatchNorm {
                gamma,
                beta,
                mean,
                var,
            },
            vec![input],
            shape,
        ))
    }

    pub fn activation(&mut self, name: &str, input: NodeId, act: Activation) -> Result<NodeId> {
        let shape = self.shape_of(input)?;
        Ok(self.push(name.into(), Op::Activation(act), vec![input], shape))
    }

    pub fn dropout(&mut self, name: &str, input: NodeId, rate: f64) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Build(format!(
                "{name}: dropout rate {rate} outside [0, 1)"
            )));
        }
        let shape = self.shape_of(input)?;
        Ok(self.push(name.into(), Op::Dropout { rate }, vec![input], shape))
    }

    /// Concatenation along batched axis 1 (rows), 2 (columns) or 3 (channels).
    pub fn concat(&mut self, name: &str, a: NodeId, b: NodeId, axis: usize) -> Result<NodeId> {
        let (sa, sb) = (self.shape_of(a)?, self.shape_of(b)?);
        if !(1..=3).contains(&axis) {
            return Err(Error::Build(format!(
                "{name}: concat axis {axis} not in 1..=3"
            )));
        }
        let k = axis - 1;
        if (0..3).any(|i| i != k && sa[i] != sb[i]) {
            return Err(Error::Build(format!(
                "{name}: cannot concatenate {sa:?} and {sb:?} along axis {axis}"
            )));
        }
        let mut shape = sa;
        shape[k] += sb[k];
        Ok(self.push(name.into(), Op::Concat { axis }, vec![a, b], shape))
    }

    pub fn slice(&mut self, name: &str, input: NodeId, channel: usize) -> Result<NodeId> {
        let [h, w, c] = self.shape_of(input)?;
        if channel >= c {
            return Err(Error::Build(format!(
                "{name}: channel {channel} out of range for depth {c}"
            )));
        }
        Ok(self.push(name.into(), Op::Slice { channel }, vec![input], [h, w, 1]))
    }

    fn value(&self, id: NodeId) -> &Tensor {
        self.tape[id].as_ref().expect("inputs evaluated before use")
    }

    fn p(&self, id: ParamId) -> &Tensor {
        &self.params[id].value
    }

    /// Runs the graph on one batch per input node and returns the output batch.
    pub fn forward(&mut self, inputs: &[Tensor]) -> Result<Tensor> {
        let output = self
            .output
            .ok_or_else(|| Error::Build("network has no output node".into()))?;
        if inputs.len() != self.inputs.len() {
            return Err(Error::shape(format!(
                "network takes {} inputs, got {}",
                self.inputs.len(),
                inputs.len()
            )));
        }
        let batch = inputs[0].shape().first().copied().unwrap_or(0);
        self.tape = vec![None; self.nodes.len()];
        self.aux = vec![Aux::None; self.nodes.len()];
        for (&id, x) in self.inputs.iter().zip(inputs) {
            let [h, w, c] = self.nodes[id].shape;
            if x.shape() != [batch, h, w, c] {
                return Err(Error::shape(format!(
                    "input `{}` expects [{batch}, {h}, {w}, {c}], got {:?}",
                    self.nodes[id].name,
                    x.shape()
                )));
            }
            self.tape[id] = Some(x.clone());
        }

        for id in 0..self.nodes.len() {
            let op = self.nodes[id].op.clone();
            let inputs = self.nodes[id].inputs.clone();
            let (y, aux) = match op {
                Op::Input => continue,
                Op::Conv2d {
                    kernel,
                    bias,
                    stride,
                } => (
                    conv2d_forward(self.value(inputs[0]), self.p(kernel), self.p(bias), stride)?,
                    Aux::None,
                ),
                Op::ConvTranspose2d { kernel, bias } => (
                    conv_transpose2d_forward(self.value(inputs[0]), self.p(kernel), self.p(bias))?,
                    Aux::None,
                ),
                Op::BatchNorm {
                    gamma,
                    beta,
                    mean,
                    var,
                } => {
                    let x = self.tape[inputs[0]].as_ref().expect("evaluated");
                    match self.mode {
                        Mode::Train => {
                            let mut rm = self.params[mean].value.clone();
                            let mut rv = self.params[var].value.clone();
                            let (y, cache) = batchnorm_train_forward(
                                x,
                                &self.params[gamma].value,
                                &self.params[beta].value,
                                &mut rm,
                                &mut rv,
                            )?;
                            self.params[mean].value = rm;
                            self.params[var].value = rv;
                            (y, Aux::BatchNorm(cache))
                        }
                        Mode::Inference => (
                            batchnorm_infer_forward(
                                x,
                                self.p(gamma),
                                self.p(beta),
                                self.p(mean),
                                self.p(var),
                            )?,
                            Aux::None,
                        ),
                    }
                }
                Op::Activation(act) => (act.forward(self.value(inputs[0])), Aux::None),
                Op::Dropout { rate } => {
                    let x = self.tape[inputs[0]].as_ref().expect("evaluated");
                    let (y, mask) = dropout(x, rate, self.mode, &mut self.rng)?;
                    (y, mask.map_or(Aux::None, Aux::Mask))
                }
                Op::Concat { axis } => (
                    tensor::concat(self.value(inputs[0]), self.value(inputs[1]), axis)?,
                    Aux::None,
                ),
                Op::Slice { channel } => {
                    (tensor::channel(self.value(inputs[0]), channel)?, Aux::None)
                }
            };
            self.tape[id] = Some(y);
            self.aux[id] = aux;
        }
        Ok(self.value(output).clone())
    }

    /// Clears accumulated parameter gradients.
    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    fn accumulate_param(&mut self, id: ParamId, g: Tensor) -> Result<()> {
        match &mut self.params[id].grad {
            Some(acc) => acc.add_assign(&g),
            slot @ None => {
                *slot = Some(g);
                Ok(())
            }
        }
    }

    /// Back-propagates `dy` (gradient of the scalar objective with respect to
    /// the output of the last forward pass), accumulating parameter gradients.
    pub fn backward(&mut self, dy: &Tensor) -> Result<()> {
        let output = self
            .output
            .ok_or_else(|| Error::Build("network has no output node".into()))?;
        let out = self
            .node_output(output)
            .ok_or_else(|| Error::State("backward called before forward".into()))?;
        out.expect_same_shape(dy)?;

        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output] = Some(dy.clone());
        fn push_grad(slot: &mut Option<Tensor>, g: Tensor) -> Result<()> {
            match slot {
                Some(acc) => acc.add_assign(&g),
                None => {
                    *slot = Some(g);
                    Ok(())
                }
            }
        }

        for id in (0..self.nodes.len()).rev() {
            let Some(g) = grads[id].take() else { continue };
            let op = self.nodes[id].op.clone();
            let inputs = self.nodes[id].inputs.clone();
            match op {
                Op::Input => {
                    grads[id] = Some(g);
                }
                Op::Conv2d {
                    kernel,
                    bias,
                    stride,
                } => {
                    let (dx, dw, db) =
                        conv2d_backward(self.value(inputs[0]), self.p(kernel), stride, &g)?;
                    self.accumulate_param(kernel, dw)?;
                    self.accumulate_param(bias, db)?;
                    push_grad(&mut grads[inputs[0]], dx)?;
                }
                Op::ConvTranspose2d { kernel, bias } => {
                    let (dx, dw, db) =
                        conv_transpose2d_backward(self.value(inputs[0]), self.p(kernel), &g)?;
                    self.accumulate_param(kernel, dw)?;
                    self.accumulate_param(bias, db)?;
                    push_grad(&mut grads[inputs[0]], dx)?;
                }
                Op::BatchNorm {
                    gamma,
                    beta,
                    mean,
                    var,
                } => {
                    let (dx, dg, db) = match &self.aux[id] {
                        Aux::BatchNorm(cache) => {
                            batchnorm_train_backward(cache, self.p(gamma), &g)?
                        }
                        _ => batchnorm_infer_backward(
                            self.value(inputs[0]),
                            self.p(gamma),
                            self.p(mean),
                            self.p(var),
                            &g,
                        )?,
                    };
                    self.accumulate_param(gamma, dg)?;
                    self.accumulate_param(beta, db)?;
                    push_grad(&mut grads[inputs[0]], dx)?;
                }
                Op::Activation(act) => {
                    let dx = act.backward(self.value(inputs[0]), self.value(id), &g);
                    push_grad(&mut grads[inputs[0]], dx)?;
                }
                Op::Dropout { .. } => {
                    let dx = match &self.aux[id] {
                        Aux::Mask(mask) => g.zip_map(mask, |a, m| a * m)?,
                        _ => g,
                    };
                    push_grad(&mut grads[inputs[0]], dx)?;
                }
                Op::Concat { axis } => {
                    let at = self.value(inputs[0]).shape()[axis];
                    let (ga, gb) = tensor::split(&g, axis, at)?;
                    push_grad(&mut grads[inputs[0]], ga)?;
                    push_grad(&mut grads[inputs[1]], gb)?;
                }
                Op::Slice { channel } => {
                    let mut dx = self.value(inputs[0]).zeros_like();
                    let c = dx.channels();
                    for (d, v) in dx
                        .data_mut()
                        .iter_mut()
                        .skip(channel)
                        .step_by(c)
                        .zip(g.data())
                    {
                        *d = *v;
                    }
                    push_grad(&mut grads[inputs[0]], dx)?;
                }
            }
        }
        self.input_grads = self.inputs.iter().map(|&i| grads[i].take()).collect();
        Ok(())
    }

    /// One optimizer update over every trainable parameter, in creation order.
    /// Parameters that received no gradient are treated as having zero gradient.
    pub fn apply_adam(&mut self, state: &mut AdamState) -> Result<()> {
        let zeros: Vec<Option<Vec<f64>>> = self
            .params
            .iter()
            .map(|p| (p.trainable && p.grad.is_none()).then(|| vec![0.0; p.value.len()]))
            .collect();
        let mut refs: Vec<ParamRef<'_>> = self
            .params
            .iter_mut()
            .zip(&zeros)
            .filter(|(p, _)| p.trainable)
            .map(|(p, z)| ParamRef {
                name: &p.name,
                grad: match (&p.grad, z) {
                    (Some(g), _) => g.data(),
                    (None, Some(z)) => z,
                    (None, None) => unreachable!("zeros allocated for missing gradients"),
                },
                value: p.value.data_mut(),
            })
            .collect();
        state.update(&mut refs)
    }
}
