//! Trainable parameters, the polynomial learning-rate schedule and the two
//! optimizers used for the generator (SGD with momentum) and the
//! discriminators (Adam).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// A named trainable tensor with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Vec<f64>,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = vec![0.0; value.len()];
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn accumulate(&mut self, grad: &[f64]) -> Result<()> {
        if grad.len() != self.grad.len() {
            return Err(shape_err(
                "Parameter::accumulate",
                format!(
                    "`{}` holds {} values, gradient has {}",
                    self.name,
                    self.grad.len(),
                    grad.len()
                ),
            ));
        }
        self.grad.iter_mut().zip(grad).for_each(|(a, b)| *a += b);
        Ok(())
    }
}

/// `lr(t) = end + (base − end)·(1 − t/T)^power`, with `t` clamped to `T`
/// and the result kept inside `[end, base]` despite rounding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolySchedule {
    pub base_lr: f64,
    pub end_lr: f64,
    pub total_steps: u64,
    pub power: f64,
}

impl PolySchedule {
    pub fn lr(&self, step: u64) -> f64 {
        if self.total_steps == 0 {
            return self.base_lr;
        }
        let t = step.min(self.total_steps) as f64 / self.total_steps as f64;
        let lr = self.end_lr + (self.base_lr - self.end_lr) * libm::pow(1.0 - t, self.power);
        lr.clamp(self.end_lr.min(self.base_lr), self.base_lr.max(self.end_lr))
    }
}

pub fn poly_lr(step: u64, state: &OptimizerState) -> f64 {
    state.schedule.lr(step)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    /// Heavy-ball momentum; weight decay enters as an L2 term on the gradient.
    SgdMomentum {
        momentum: f64,
        weight_decay: f64,
    },
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub schedule: PolySchedule,
    pub step: u64,
    /// Momentum (SGD) or first moment (Adam), one buffer per parameter.
    first: Vec<Vec<f64>>,
    /// Second moment; empty for SGD.
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn sgd(params: &[Parameter], schedule: PolySchedule, momentum: f64, weight_decay: f64) -> Self {
        Self {
            kind: OptimizerKind::SgdMomentum { momentum, weight_decay },
            schedule,
            step: 0,
            first: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            second: Vec::new(),
        }
    }

    pub fn adam(params: &[Parameter], schedule: PolySchedule, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam { beta1, beta2, eps },
            schedule,
            step: 0,
            first: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
        }
    }

    pub fn current_lr(&self) -> f64 {
        self.schedule.lr(self.step)
    }

    /// Applies one update using each parameter's `grad`; returns the rate used.
    pub fn step(&mut self, params: &mut [Parameter]) -> Result<f64> {
        match self.kind {
            OptimizerKind::SgdMomentum { .. } => sgd_momentum_step(params, self),
            OptimizerKind::Adam { .. } => adam_step(params, self),
        }
    }

    fn check(&self, params: &[Parameter]) -> Result<()> {
        if params.len() != self.first.len() {
            return Err(shape_err(
                "optimizer",
                format!("state tracks {} parameters, got {}", self.first.len(), params.len()),
            ));
        }
        for (p, buf) in params.iter().zip(&self.first) {
            if p.value.len() != buf.len() || p.grad.len() != buf.len() {
                return Err(shape_err(
                    "optimizer",
                    format!("`{}` does not match its optimizer buffer", p.name),
                ));
            }
        }
        Ok(())
    }
}

pub fn sgd_momentum_step(params: &mut [Parameter], state: &mut OptimizerState) -> Result<f64> {
    let OptimizerKind::SgdMomentum { momentum, weight_decay } = state.kind else {
        return Err(Error::InvalidArgument("state is not an SGD state".into()));
    };
    state.check(params)?;
    let lr = state.current_lr();
    for (p, velocity) in params.iter_mut().zip(state.first.iter_mut()) {
        let values = p.value.data_mut();
        for ((theta, v), &g) in values.iter_mut().zip(velocity.iter_mut()).zip(&p.grad) {
            let g = g + weight_decay * *theta;
            *v = momentum * *v + g;
            *theta -= lr * *v;
        }
    }
    state.step += 1;
    Ok(lr)
}

pub fn adam_step(params: &mut [Parameter], state: &mut OptimizerState) -> Result<f64> {
    let OptimizerKind::Adam { beta1, beta2, eps } = state.kind else {
        return Err(Error::InvalidArgument("state is not an Adam state".into()));
    };
    state.check(params)?;
    let lr = state.current_lr();
    let t = (state.step + 1) as i32;
    let c1 = 1.0 - libm::pow(beta1, t as f64);
    let c2 = 1.0 - libm::pow(beta2, t as f64);
    for ((p, m), v) in params
        .iter_mut()
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        let values = p.value.data_mut();
        for (((theta, m), v), &g) in values.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(&p.grad) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *theta -= lr * m_hat / (libm::sqrt(v_hat) + eps);
        }
    }
    state.step += 1;
    Ok(lr)
}
