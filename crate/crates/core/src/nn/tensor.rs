use serde::{Deserialize, Serialize};

/// Dense row-major tensor of up to four dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        assert!(shape.len() <= 4, "tensors have at most 4 dims");
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert!(shape.len() <= 4, "tensors have at most 4 dims");
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "value count must equal the product of dims"
        );
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Round every value through `f32`, as stored in checkpoints.
    pub fn to_f32_precision(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| *v as f32 as f64).collect(),
        }
    }
}
