use super::Tensor;
use crate::{Error, Result};

/// A primal value paired with a same-shaped tangent (directional derivative).
#[derive(Debug, Clone, PartialEq)]
pub struct DualTensor {
    pub primal: Tensor,
    pub tangent: Tensor,
}

impl DualTensor {
    pub fn new(primal: Tensor, tangent: Tensor) -> Result<Self> {
        if !primal.same_shape(&tangent) {
            return Err(Error::Shape(format!(
                "primal {:?} vs tangent {:?}",
                primal.shape(),
                tangent.shape()
            )));
        }
        Ok(Self { primal, tangent })
    }

    /// Dual with a zero tangent.
    pub fn constant(primal: Tensor) -> Self {
        let tangent = Tensor::zeros(primal.shape());
        Self { primal, tangent }
    }
}
