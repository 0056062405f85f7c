//! SGD with momentum, Adam, and the step learning-rate schedule.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(format!("unknown optimizer `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Buffers mirroring the parameter slices, allocated on the first step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState {
    velocity: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl OptimizerState {
    pub fn steps(&self) -> u64 {
        self.steps
    }

    fn ensure(buffers: &mut Vec<Vec<f64>>, params: &[&mut [f64]]) -> Result<()> {
        if buffers.is_empty() {
            *buffers = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        if buffers.len() != params.len() || buffers.iter().zip(params).any(|(b, p)| b.len() != p.len()) {
            return Err(Error::Shape("optimizer state does not match parameters".into()));
        }
        Ok(())
    }
}

fn check(params: &[&mut [f64]], grads: &[&[f64]]) -> Result<()> {
    if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.len() != g.len()) {
        return Err(Error::Shape("gradients do not match parameters".into()));
    }
    Ok(())
}

/// `g = grad + wd·θ; v = μ v + g; θ -= lr · v`.
pub fn sgd_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut OptimizerState,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    check(params, grads)?;
    OptimizerState::ensure(&mut state.velocity, params)?;
    for ((p, g), v) in params.iter_mut().zip(grads).zip(state.velocity.iter_mut()) {
        for ((theta, &grad), vel) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
            let g = grad + weight_decay * *theta;
            *vel = momentum * *vel + g;
            *theta -= lr * *vel;
        }
    }
    state.steps += 1;
    Ok(())
}

/// Bias-corrected Adam with weight decay added to the gradient.
pub fn adam_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut OptimizerState,
    lr: f64,
    hyper: AdamParams,
    weight_decay: f64,
) -> Result<()> {
    check(params, grads)?;
    OptimizerState::ensure(&mut state.velocity, params)?;
    OptimizerState::ensure(&mut state.second, params)?;
    state.steps += 1;
    let t = state.steps as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.velocity.iter_mut())
        .zip(state.second.iter_mut())
    {
        for (((theta, &grad), m), v) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
            let g = grad + weight_decay * *theta;
            *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * g;
            *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * g * g;
            *theta -= lr * (*m / c1) / ((*v / c2).sqrt() + hyper.eps);
        }
    }
    Ok(())
}

/// Step schedule: `lr_init · decay^(#steps ≤ epoch)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub lr_init: f64,
    pub steps: Vec<usize>,
    pub decay_factor: f64,
}

impl LrSchedule {
    pub fn at(&self, epoch: usize) -> f64 {
        let passed = self.steps.iter().filter(|&&s| s <= epoch).count();
        self.lr_init * self.decay_factor.powi(passed as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sgd1(p: &mut f64, g: f64, st: &mut OptimizerState, lr: f64, mom: f64, wd: f64) {
        let mut buf = [*p];
        sgd_step(&mut [&mut buf[..]], &[&[g]], st, lr, mom, wd).unwrap();
        *p = buf[0];
    }

    #[test]
    fn plain_sgd() {
        let mut p = 1.0;
        sgd1(&mut p, 2.0, &mut OptimizerState::default(), 0.1, 0.0, 0.0);
        assert!((p - 0.8).abs() < 1e-15);
    }

    #[test]
    fn momentum_recursion() {
        let mut p = 0.0;
        let mut st = OptimizerState::default();
        sgd1(&mut p, 1.0, &mut st, 0.1, 0.9, 0.0);
        assert!((p + 0.1).abs() < 1e-15);
        assert_eq!(st.velocity[0][0], 1.0);
        sgd1(&mut p, 1.0, &mut st, 0.1, 0.9, 0.0);
        assert!((st.velocity[0][0] - 1.9).abs() < 1e-15);
        assert!((p + 0.29).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_only() {
        let mut p = 2.0;
        sgd1(&mut p, 0.0, &mut OptimizerState::default(), 0.1, 0.0, 0.5);
        assert!((p - 1.9).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut buf = [0.5];
        let mut st = OptimizerState::default();
        adam_step(&mut [&mut buf[..]], &[&[1.0]], &mut st, 1e-3, AdamParams::default(), 0.0).unwrap();
        // m̂ = 1, v̂ = 1, so the step is lr / (1 + eps)
        assert!((0.5 - buf[0] - 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_grad_is_noop_and_deterministic() {
        let mut a = [0.3, -1.0];
        let mut st = OptimizerState::default();
        for _ in 0..5 {
            adam_step(&mut [&mut a[..]], &[&[0.0, 0.0]], &mut st, 1e-3, AdamParams::default(), 0.0).unwrap();
        }
        assert_eq!(a, [0.3, -1.0]);
        let st0 = OptimizerState::default();
        let (mut x, mut y) = ([1.0, 2.0], [1.0, 2.0]);
        let (mut s1, mut s2) = (st0.clone(), st0);
        adam_step(&mut [&mut x[..]], &[&[0.4, -0.2]], &mut s1, 1e-2, AdamParams::default(), 1e-3).unwrap();
        adam_step(&mut [&mut y[..]], &[&[0.4, -0.2]], &mut s2, 1e-2, AdamParams::default(), 1e-3).unwrap();
        assert_eq!(x, y);
        assert_eq!(s1, s2);
    }

    #[test]
    fn shape_mismatch() {
        let mut a = [0.0, 0.0];
        assert!(sgd_step(&mut [&mut a[..]], &[&[1.0]], &mut OptimizerState::default(), 0.1, 0.0, 0.0).is_err());
    }

    #[test]
    fn schedule() {
        let s = LrSchedule {
            lr_init: 0.1,
            steps: vec![140, 180],
            decay_factor: 0.1,
        };
        assert_eq!(s.at(0), 0.1);
        assert!((s.at(139) - 0.1).abs() < 1e-15);
        assert!((s.at(140) - 0.01).abs() < 1e-15);
        assert!((s.at(150) - 0.01).abs() < 1e-15);
        assert!((s.at(200) - 0.001).abs() < 1e-15);
        let flat = LrSchedule { steps: vec![], ..s };
        assert_eq!(flat.at(500), 0.1);
    }
}
