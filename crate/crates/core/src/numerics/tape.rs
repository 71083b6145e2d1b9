use super::kernels;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Log(Var),
    Exp(Var),
    Sum { input: Var, axes: Vec<usize> },
    Concat { inputs: Vec<Var>, channels: Vec<usize> },
    Conv2d { input: Var, kernel: Var, stride: usize, padding: usize },
    BiasAdd { input: Var, bias: Var },
    Resize { input: Var },
    Softmax { input: Var, axis: usize, temperature: f64 },
    LogSoftmax { input: Var, axis: usize, temperature: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Linear record of executed operations for reverse-mode differentiation.
///
/// Every operation appends one node whose operands were recorded earlier, so
/// the node order is a topological order. A tape belongs to one thread and
/// one training step; build a fresh tape per step.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root with respect to `var`; `None` when no path leads
    /// from `var` to the root or `var` does not require gradients.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node { value, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Records a leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    /// Same values as `v`, detached from the graph.
    pub fn stop_gradient(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.node(v).requires_grad)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::add(self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, rg, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::sub(self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, rg, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::mul(self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, rg, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let value = kernels::scale(self.value(a), factor)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, rg, Op::Scale(a, factor)))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = kernels::relu(self.value(a));
        let rg = self.rg(&[a]);
        Ok(self.push(value, rg, Op::Relu(a)))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let value = kernels::log(self.value(a))?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, rg, Op::Log(a)))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let value = kernels::exp(self.value(a))?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, rg, Op::Exp(a)))
    }

    /// Sum over `axes`; reduced dimensions are kept with extent 1.
    pub fn sum_axes(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let axes = kernels::normalize_axes(self.value(a).shape(), axes)?;
        let value = kernels::sum_axes(self.value(a), &axes)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, rg, Op::Sum { input: a, axes }))
    }

    pub fn mean_axes(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.value(a).shape().to_vec();
        let axes = kernels::normalize_axes(&shape, axes)?;
        let count: usize = axes.iter().map(|&d| shape[d]).product();
        let s = self.sum_axes(a, &axes)?;
        self.scale(s, 1.0 / count as f64)
    }

    /// Sum of every element, as a scalar of shape `[]`.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let rank = self.value(a).shape().len();
        let axes: Vec<usize> = (0..rank).collect();
        let s = self.sum_axes(a, &axes)?;
        // Drop the kept unit dimensions so the result is a true scalar.
        let value = self.value(s).reshape(Vec::new())?;
        let rg = self.rg(&[s]);
        Ok(self.push(value, rg, Op::Scale(s, 1.0)))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
        let value = kernels::concat_channels(&tensors)?;
        let channels = tensors.iter().map(|t| t.shape()[1]).collect();
        let rg = self.rg(inputs);
        Ok(self.push(value, rg, Op::Concat { inputs: inputs.to_vec(), channels }))
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let value = kernels::conv2d(self.value(input), self.value(kernel), stride, padding)?;
        let rg = self.rg(&[input, kernel]);
        Ok(self.push(value, rg, Op::Conv2d { input, kernel, stride, padding }))
    }

    pub fn bias_add(&mut self, input: Var, bias: Var) -> Result<Var> {
        let value = kernels::bias_add(self.value(input), self.value(bias))?;
        let rg = self.rg(&[input, bias]);
        Ok(self.push(value, rg, Op::BiasAdd { input, bias }))
    }

    pub fn bilinear_resize(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let value = kernels::bilinear_resize(self.value(input), out_h, out_w)?;
        let rg = self.rg(&[input]);
        Ok(self.push(value, rg, Op::Resize { input }))
    }

    pub fn softmax_t(&mut self, input: Var, axis: usize, temperature: f64) -> Result<Var> {
        let value = kernels::softmax(self.value(input), axis, temperature)?;
        let rg = self.rg(&[input]);
        Ok(self.push(value, rg, Op::Softmax { input, axis, temperature }))
    }

    pub fn log_softmax_t(&mut self, input: Var, axis: usize, temperature: f64) -> Result<Var> {
        let value = kernels::log_softmax(self.value(input), axis, temperature)?;
        let rg = self.rg(&[input]);
        Ok(self.push(value, rg, Op::LogSoftmax { input, axis, temperature }))
    }

    /// Reverse sweep from a scalar `root`.
    ///
    /// Each recorded operation is visited once, newest first. Gradients of
    /// values used several times accumulate.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if root.0 >= self.nodes.len() {
            return Err(Error::Contract(format!("{:?} is not on this tape", root)));
        }
        let root_value = self.value(root);
        if root_value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                root_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.node(root).requires_grad {
            grads[root.0] = Some(Tensor::ones(root_value.shape().to_vec()));
        }
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.data().iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient of node {}", i)));
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.node(v).requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(a, b)| *a += b),
            slot => *slot = Some(g),
        }
    }

    fn map_grad(g: &Tensor, f: impl Fn(usize, f64) -> f64) -> Tensor {
        Tensor::from_parts(
            g.shape().to_vec(),
            g.data().iter().enumerate().map(|(i, &v)| f(i, v)).collect(),
        )
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, Self::map_grad(g, |_, v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, Self::map_grad(g, |i, v| v * bv[i]));
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, Self::map_grad(g, |i, v| v * av[i]));
                }
            }
            Op::Scale(a, factor) => {
                let shape = self.value(*a).shape().to_vec();
                let data = g.data().iter().map(|v| v * factor).collect();
                self.accumulate(grads, *a, Tensor::from_parts(shape, data));
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                self.accumulate(grads, *a, Self::map_grad(g, |i, v| if x[i] > 0.0 { v } else { 0.0 }));
            }
            Op::Log(a) => {
                let x = self.value(*a).data();
                self.accumulate(grads, *a, Self::map_grad(g, |i, v| v / x[i]));
            }
            Op::Exp(a) => {
                let y = node.value.data();
                self.accumulate(grads, *a, Self::map_grad(g, |i, v| v * y[i]));
            }
            Op::Sum { input, axes } => {
                let shape = self.value(*input).shape().to_vec();
                let gin = kernels::sum_axes_backward(&shape, axes, g)?;
                self.accumulate(grads, *input, gin);
            }
            Op::Concat { inputs, channels } => {
                let parts = kernels::split_channels(g, channels)?;
                for (v, part) in inputs.iter().zip(parts) {
                    self.accumulate(grads, *v, part);
                }
            }
            Op::Conv2d { input, kernel, stride, padding } => {
                let (gin, gk) = kernels::conv2d_backward(
                    self.value(*input),
                    self.value(*kernel),
                    g,
                    *stride,
                    *padding,
                    self.requires_grad(*input),
                    self.requires_grad(*kernel),
                )?;
                if let Some(gin) = gin {
                    self.accumulate(grads, *input, gin);
                }
                if let Some(gk) = gk {
                    self.accumulate(grads, *kernel, gk);
                }
            }
            Op::BiasAdd { input, bias } => {
                self.accumulate(grads, *input, g.clone());
                if self.requires_grad(*bias) {
                    self.accumulate(grads, *bias, kernels::bias_grad(g)?);
                }
            }
            Op::Resize { input } => {
                let shape = self.value(*input).shape().to_vec();
                self.accumulate(grads, *input, kernels::bilinear_resize_backward(&shape, g)?);
            }
            Op::Softmax { input, axis, temperature } => {
                let gin = kernels::softmax_backward(&node.value, g, *axis, *temperature)?;
                self.accumulate(grads, *input, gin);
            }
            Op::LogSoftmax { input, axis, temperature } => {
                let gin = kernels::log_softmax_backward(&node.value, g, *axis, *temperature)?;
                self.accumulate(grads, *input, gin);
            }
        }
        Ok(())
    }
}
