use crate::error::{Error, Result};

/// Label value for pixels excluded from losses and metrics.
pub const IGNORE_INDEX: u8 = 255;

/// Per-pixel class indices for a batch, laid out `[N,H,W]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    shape: [usize; 3],
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(shape: [usize; 3], data: Vec<u8>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "label map {:?} needs {} values, got {}",
                shape,
                shape.iter().product::<usize>(),
                data.len()
            )));
        }
        Ok(LabelMap { shape, data })
    }

    pub fn filled(shape: [usize; 3], value: u8) -> Self {
        LabelMap { shape, data: vec![value; shape.iter().product()] }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Fails if any value is neither a class in `0..num_classes` nor `ignore`.
    pub fn validate(&self, num_classes: usize, ignore: u8) -> Result<()> {
        if let Some(&bad) = self
            .data
            .iter()
            .find(|&&v| v != ignore && v as usize >= num_classes)
        {
            return Err(Error::Data(format!(
                "label {} outside 0..{} (ignore index {})",
                bad, num_classes, ignore
            )));
        }
        Ok(())
    }

    /// Concatenates single-image maps along the batch axis.
    pub fn stack(items: &[LabelMap]) -> Result<LabelMap> {
        let first = items
            .first()
            .ok_or_else(|| Error::Shape("cannot stack an empty list".into()))?;
        let [_, h, w] = first.shape;
        let mut data = Vec::with_capacity(items.iter().map(|m| m.len()).sum());
        let mut n = 0;
        for m in items {
            if m.shape[1..] != [h, w] {
                return Err(Error::Shape("label maps differ in size".into()));
            }
            n += m.shape[0];
            data.extend_from_slice(&m.data);
        }
        Ok(LabelMap { shape: [n, h, w], data })
    }

    /// Single image `index` of the batch.
    pub fn image(&self, index: usize) -> LabelMap {
        let [_, h, w] = self.shape;
        LabelMap {
            shape: [1, h, w],
            data: self.data[index * h * w..(index + 1) * h * w].to_vec(),
        }
    }
}
