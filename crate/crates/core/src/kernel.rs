use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::std_normal_pdf;
use crate::numerics::GaussianFactor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Normal,
}

/// A smoothing kernel `K` with bandwidth `h`, evaluated as `K_h(u) = K(u/h)/h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    bandwidth: f64,
}

impl KernelSpec {
    pub fn normal(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::InvalidInput(format!(
                "kernel bandwidth must be positive and finite, got {bandwidth}"
            )));
        }
        Ok(Self {
            kind: KernelKind::Normal,
            bandwidth,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn evaluate(&self, u: f64) -> f64 {
        match self.kind {
            KernelKind::Normal => std_normal_pdf(u / self.bandwidth) / self.bandwidth,
        }
    }

    /// Gaussian envelope of `t ↦ K_h(t − center)`.
    pub fn envelope(&self, center: f64) -> GaussianFactor {
        match self.kind {
            KernelKind::Normal => GaussianFactor::new(center, 1.0 / (self.bandwidth * self.bandwidth)),
        }
    }
}
