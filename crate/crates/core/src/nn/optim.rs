use serde::{Deserialize, Serialize};

use crate::domain::OptimizerKind;
use crate::error::{invalid, Error, Result};

/// SGD or Adam state for one flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64, n_params: usize) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(invalid(format!("learning rate {lr} must be positive")));
        }
        let (m, v) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Adam => (vec![0.0; n_params], vec![0.0; n_params]),
        };
        Ok(Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m,
            v,
            t: 0,
        })
    }

    pub fn sgd(lr: f64, n_params: usize) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, lr, n_params)
    }

    pub fn adam(lr: f64, n_params: usize) -> Result<Self> {
        Self::new(OptimizerKind::Adam, lr, n_params)
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Descend along `grad`: SGD `θ ← θ − lr·g`, Adam with bias correction.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != grad.len() {
            return Err(Error::DimensionMismatch {
                expected: params.len(),
                got: grad.len(),
            });
        }
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                if self.m.len() != params.len() {
                    return Err(Error::DimensionMismatch {
                        expected: self.m.len(),
                        got: params.len(),
                    });
                }
                let bc1 = 1.0 - self.beta1.powi(self.t as i32);
                let bc2 = 1.0 - self.beta2.powi(self.t as i32);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                    self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                    let mh = self.m[i] / bc1;
                    let vh = self.v[i] / bc2;
                    params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step() {
        let mut s = OptimizerState::sgd(0.1, 1).unwrap();
        let mut p = [1.0];
        s.step(&mut p, &[2.0]).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-15);
        s.step(&mut p, &[0.0]).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        // m̂ = g, v̂ = g², so Δ = −lr·g/(|g| + eps) = −1e-3·1/(1 + 1e-8)
        let mut s = OptimizerState::adam(1e-3, 1).unwrap();
        let mut p = [0.0];
        s.step(&mut p, &[1.0]).unwrap();
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let mut s = OptimizerState::sgd(0.1, 2).unwrap();
        let mut p = [0.0, 0.0];
        assert!(s.step(&mut p, &[1.0]).is_err());
    }

    #[test]
    fn rejects_bad_lr() {
        assert!(OptimizerState::adam(0.0, 1).is_err());
        assert!(OptimizerState::sgd(-1.0, 1).is_err());
    }
}
