use crate::error::TensorError;
use crate::tensor::Tensor;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    RmsProp,
    Adam,
}

impl OptimizerKind {
    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::RmsProp => "rmsprop",
            OptimizerKind::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sgd" => Some(OptimizerKind::Sgd),
            "rmsprop" => Some(OptimizerKind::RmsProp),
            "adam" => Some(OptimizerKind::Adam),
            _ => None,
        }
    }
}

/// Optimizer state: per-parameter moment accumulators plus hyperparameters.
///
/// SGD applies `p -= lr * g`. RMSProp keeps one squared-gradient
/// accumulator: `v = rho*v + (1-rho)*g^2; p -= lr * g / (sqrt(v) + eps)`.
/// Adam keeps first and second moments with bias correction.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub step_count: u64,
    /// First-moment accumulators (Adam) — empty until the first step.
    pub m: Vec<Vec<f64>>,
    /// Second-moment / squared-gradient accumulators (Adam, RMSProp).
    pub v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Optimizer {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            rho: 0.9,
            epsilon: 1e-8,
            step_count: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    fn ensure_state(&mut self, params: &[Tensor]) -> Result<()> {
        if self.m.is_empty() && self.v.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        }
        if self.m.len() != params.len() || self.v.len() != params.len() {
            return Err(TensorError::StateSizeMismatch {
                state: self.m.len(),
                params: params.len(),
            });
        }
        for (i, p) in params.iter().enumerate() {
            if self.m[i].len() != p.numel() || self.v[i].len() != p.numel() {
                return Err(TensorError::StateSizeMismatch {
                    state: self.m[i].len(),
                    params: p.numel(),
                });
            }
        }
        Ok(())
    }

    /// Applies one update. Every parameter must come with a gradient of
    /// the same shape; a missing gradient is rejected.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Option<Tensor>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(TensorError::StateSizeMismatch {
                state: grads.len(),
                params: params.len(),
            });
        }
        for (i, g) in grads.iter().enumerate() {
            match g {
                None => {
                    return Err(TensorError::MissingGradient {
                        index: i,
                        name: format!("param[{i}]"),
                    })
                }
                Some(g) if g.shape() != params[i].shape() => {
                    return Err(TensorError::ShapeMismatch {
                        op: "optimizer_step",
                        lhs: params[i].shape().to_vec(),
                        rhs: g.shape().to_vec(),
                    })
                }
                _ => {}
            }
        }
        self.ensure_state(params)?;
        self.step_count += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    let g = g.as_ref().unwrap();
                    for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *pv -= lr * gv;
                    }
                }
            }
            OptimizerKind::RmsProp => {
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let g = g.as_ref().unwrap();
                    for (k, (pv, gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        let acc = &mut self.v[i][k];
                        *acc = self.rho * *acc + (1.0 - self.rho) * gv * gv;
                        *pv -= lr * gv / (acc.sqrt() + self.epsilon);
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.step_count as i32;
                let bc1 = 1.0 - self.beta1.powi(t);
                let bc2 = 1.0 - self.beta2.powi(t);
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let g = g.as_ref().unwrap();
                    for (k, (pv, gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        let m = &mut self.m[i][k];
                        *m = self.beta1 * *m + (1.0 - self.beta1) * gv;
                        let v = &mut self.v[i][k];
                        *v = self.beta2 * *v + (1.0 - self.beta2) * gv * gv;
                        let m_hat = *m / bc1;
                        let v_hat = *v / bc2;
                        *pv -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}
