use crate::error::{Error, Result};

/// Dense row-major array of `f64` values.
///
/// All values are finite: the constructors reject NaN and infinities, and
/// every kernel that builds a tensor re-checks its output.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor construction".into()));
        }
        Ok(Tensor { shape, data })
    }

    /// Builds a kernel output, rejecting non-finite results.
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f64>, op: &str) -> Result<Self> {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(op.to_string()));
        }
        Ok(Tensor { shape, data })
    }

    /// Trusted constructor for values already known to be finite.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        assert!(value.is_finite(), "fill value must be finite");
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor { shape, data: vec![value; n] }
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(Vec::new(), vec![value])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Tensor> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        Ok(Tensor { shape, data: self.data.clone() })
    }

    pub fn dims4(&self) -> Result<[usize; 4]> {
        match self.shape.as_slice() {
            &[n, c, h, w] => Ok([n, c, h, w]),
            other => Err(Error::Shape(format!("expected a 4-d tensor, got {:?}", other))),
        }
    }

    pub(crate) fn same_shape(&self, other: &Tensor, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "{}: shapes {:?} and {:?} differ",
                op, self.shape, other.shape
            )));
        }
        Ok(())
    }

    /// Index of the largest entry along `axis`; ties resolve to the lowest index.
    ///
    /// The result is laid out like the tensor with `axis` removed.
    pub fn argmax(&self, axis: usize) -> Result<Vec<usize>> {
        let (outer, k, inner) = split_axis(&self.shape, axis)?;
        let mut out = vec![0usize; outer * inner];
        for o in 0..outer {
            let base = o * k * inner;
            for i in 0..inner {
                let mut best = 0;
                let mut best_val = self.data[base + i];
                for c in 1..k {
                    let v = self.data[base + c * inner + i];
                    if v > best_val {
                        best = c;
                        best_val = v;
                    }
                }
                out[o * inner + i] = best;
            }
        }
        Ok(out)
    }

    /// Crops an `[N,C,H,W]` tensor to the window starting at (`top`, `left`).
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Tensor> {
        let [n, c, h, w] = self.dims4()?;
        if top + height > h || left + width > w || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "crop {}x{} at ({}, {}) outside {}x{}",
                height, width, top, left, h, w
            )));
        }
        let mut data = Vec::with_capacity(n * c * height * width);
        for plane in 0..n * c {
            for y in top..top + height {
                let start = plane * h * w + y * w + left;
                data.extend_from_slice(&self.data[start..start + width]);
            }
        }
        Ok(Tensor::from_parts(vec![n, c, height, width], data))
    }

    /// Stacks `[1,C,H,W]`-shaped (or `[C,H,W]`) items into an `[N,C,H,W]` batch.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::Shape("cannot stack an empty list".into()))?;
        let item_shape: Vec<usize> = match first.shape.as_slice() {
            [1, rest @ ..] if rest.len() == 3 => rest.to_vec(),
            s if s.len() == 3 => s.to_vec(),
            s => return Err(Error::Shape(format!("cannot stack items of shape {:?}", s))),
        };
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for item in items {
            if item.numel() != first.numel() {
                return Err(Error::Shape("stack: items differ in size".into()));
            }
            data.extend_from_slice(&item.data);
        }
        let mut shape = vec![items.len()];
        shape.extend(item_shape);
        Ok(Tensor::from_parts(shape, data))
    }
}

/// Splits a shape around `axis` into (outer, axis length, inner) extents.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::Shape(format!("axis {} out of range for {:?}", axis, shape)));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_length() {
        assert!(matches!(Tensor::new(vec![2, 2], vec![1.0; 3]), Err(Error::Shape(_))));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            Tensor::new(vec![2], vec![1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(Tensor::new(vec![1], vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn argmax_ties_pick_lowest_index() {
        let t = Tensor::new(vec![1, 3, 1, 2], vec![1.0, 5.0, 1.0, 5.0, 0.0, 2.0]).unwrap();
        // pixel 0: [1,1,0] -> 0; pixel 1: [5,5,2] -> 0
        assert_eq!(t.argmax(1).unwrap(), vec![0, 0]);
        let t = Tensor::new(vec![3], vec![0.0, 2.0, 2.0]).unwrap();
        assert_eq!(t.argmax(0).unwrap(), vec![1]);
    }

    #[test]
    fn crop_and_stack() {
        let t = Tensor::new(vec![1, 1, 3, 3], (0..9).map(f64::from).collect()).unwrap();
        let c = t.crop(1, 1, 2, 2).unwrap();
        assert_eq!(c.data(), &[4.0, 5.0, 7.0, 8.0]);
        let s = Tensor::stack(&[c.clone(), c]).unwrap();
        assert_eq!(s.shape(), &[2, 1, 2, 2]);
    }
}
