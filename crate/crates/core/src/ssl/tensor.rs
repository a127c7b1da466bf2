use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major array of 64-bit reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} holds {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Errors with `NonFiniteActivation(what)` if any value is NaN or infinite.
    pub fn check_finite(&self, what: &'static str) -> Result<()> {
        check_finite(&self.data, what)
    }

    /// Row `i` of a tensor viewed as `(shape[0], rest)`.
    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.data.len() / self.shape[0];
        &self.data[i * w..(i + 1) * w]
    }

    /// Values narrowed to 32-bit storage.
    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }

    pub fn from_f32(shape: Vec<usize>, data: &[f32]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| v as f64).collect())
    }
}

pub(crate) fn check_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteActivation(what))
    }
}

/// Stacks equally shaped tensors along a new leading axis.
pub fn stack(items: &[Tensor]) -> Result<Tensor> {
    let Some(first) = items.first() else {
        return Err(Error::Empty);
    };
    let mut data = Vec::with_capacity(first.len() * items.len());
    for t in items {
        if t.shape != first.shape {
            return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", t.shape, first.shape)));
        }
        data.extend_from_slice(&t.data);
    }
    let mut shape = vec![items.len()];
    shape.extend_from_slice(&first.shape);
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_values() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(Tensor::new(vec![2, 3], vec![0.0; 5]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn non_finite_rejected() {
        let t = Tensor::new(vec![2], vec![1.0, f64::NAN]).unwrap();
        assert!(matches!(t.check_finite("x"), Err(Error::NonFiniteActivation("x"))));
    }

    #[test]
    fn stack_and_rows() {
        let a = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![2], vec![3.0, 4.0]).unwrap();
        let s = stack(&[a, b]).unwrap();
        assert_eq!(s.shape(), &[2, 2]);
        assert_eq!(s.row(1), &[3.0, 4.0]);
    }

    #[test]
    fn f32_storage_round_trip() {
        let t = Tensor::new(vec![3], vec![0.5, -1.25, 2.0]).unwrap();
        assert_eq!(Tensor::from_f32(vec![3], &t.to_f32()).unwrap(), t);
    }
}
