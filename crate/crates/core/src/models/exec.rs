//! The network definitions are written once against [`Exec`] and run either
//! on a [`Tape`] (training) or eagerly on plain tensors (inference).

use crate::error::Result;
use crate::numerics::{kernels, Tape, Tensor, Var};

pub(crate) trait Exec {
    type V: Clone;

    fn conv(&mut self, x: &Self::V, w: &Self::V, b: &Self::V, stride: usize, pad: usize)
        -> Result<Self::V>;
    fn relu(&mut self, x: &Self::V) -> Result<Self::V>;
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn concat(&mut self, parts: &[Self::V]) -> Result<Self::V>;
    fn resize(&mut self, x: &Self::V, h: usize, w: usize) -> Result<Self::V>;
    fn detach(&mut self, x: &Self::V) -> Self::V;
}

impl Exec for Tape {
    type V = Var;

    fn conv(&mut self, x: &Var, w: &Var, b: &Var, stride: usize, pad: usize) -> Result<Var> {
        let y = self.conv2d(*x, *w, stride, pad)?;
        self.bias_add(y, *b)
    }

    fn relu(&mut self, x: &Var) -> Result<Var> {
        Tape::relu(self, *x)
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        Tape::add(self, *a, *b)
    }

    fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.concat_channels(parts)
    }

    fn resize(&mut self, x: &Var, h: usize, w: usize) -> Result<Var> {
        self.bilinear_resize(*x, h, w)
    }

    fn detach(&mut self, x: &Var) -> Var {
        self.stop_gradient(*x)
    }
}

/// Tape-free execution on tensors.
pub(crate) struct Eager;

impl Exec for Eager {
    type V = Tensor;

    fn conv(&mut self, x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
        let y = kernels::conv2d(x, w, stride, pad)?;
        kernels::bias_add(&y, b)
    }

    fn relu(&mut self, x: &Tensor) -> Result<Tensor> {
        Ok(kernels::relu(x))
    }

    fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        kernels::add(a, b)
    }

    fn concat(&mut self, parts: &[Tensor]) -> Result<Tensor> {
        let refs: Vec<&Tensor> = parts.iter().collect();
        kernels::concat_channels(&refs)
    }

    fn resize(&mut self, x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
        kernels::bilinear_resize(x, h, w)
    }

    fn detach(&mut self, x: &Tensor) -> Tensor {
        x.clone()
    }
}
