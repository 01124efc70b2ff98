use serde::{Deserialize, Serialize};

use crate::codec::CodecError;

/// Dense row-major `f32` tensor.
///
/// Quantization treats every tensor as a matrix: the last dimension is the
/// column axis (sub-vectors run along it) and all leading dimensions are
/// flattened into rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, CodecError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(CodecError::Shape(format!("invalid shape {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(CodecError::Shape(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of rows of the matrix view.
    pub fn rows(&self) -> usize {
        self.data.len() / self.cols()
    }

    /// Number of columns of the matrix view (the last dimension).
    pub fn cols(&self) -> usize {
        *self.shape.last().expect("non-empty shape")
    }

    pub fn row(&self, r: usize) -> &[f32] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn at(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols() + c]
    }

    /// Mean squared difference against another tensor of the same shape.
    pub fn mse(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "mse over mismatched shapes");
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let d = f64::from(*a) - f64::from(*b);
                d * d
            })
            .sum();
        sum / self.data.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_view_flattens_leading_dims() {
        let t = Tensor::new(vec![2, 3, 4], (0..24).map(|x| x as f32).collect()).unwrap();
        assert_eq!(t.rows(), 6);
        assert_eq!(t.cols(), 4);
        assert_eq!(t.row(1), &[4.0, 5.0, 6.0, 7.0]);
        assert_eq!(t.at(5, 3), 23.0);
    }

    #[test]
    fn rejects_mismatched_data() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![], vec![]).is_err());
    }
}
