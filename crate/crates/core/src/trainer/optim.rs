use crate::diffengine::GradientSet;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            momentum: 0.5,
        }
    }
}

/// Per-parameter optimizer state. Moment buffers are allocated lazily on
/// the first update and shaped like the parameters.
#[derive(Clone, Debug)]
pub enum Optimizer {
    Adam {
        cfg: AdamConfig,
        m: Vec<Tensor>,
        v: Vec<Tensor>,
        step: u64,
    },
    Sgd {
        cfg: SgdConfig,
        velocity: Vec<Tensor>,
        step: u64,
    },
}

fn zeros_like(params: &[Tensor]) -> Vec<Tensor> {
    params.iter().map(|p| Tensor::zeros(p.shape())).collect()
}

impl Optimizer {
    pub fn adam(cfg: AdamConfig) -> Self {
        Self::Adam {
            cfg,
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
        }
    }

    pub fn sgd(cfg: SgdConfig) -> Self {
        Self::Sgd {
            cfg,
            velocity: Vec::new(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        match self {
            Self::Adam { step, .. } | Self::Sgd { step, .. } => *step,
        }
    }

    pub fn update(&mut self, params: &mut [Tensor], grads: &GradientSet) {
        assert_eq!(params.len(), grads.tensors.len(), "gradients must align with parameters");
        match self {
            Self::Adam { cfg, m, v, step } => adam_update(cfg, m, v, step, params, grads),
            Self::Sgd { cfg, velocity, step } => sgd_update(cfg, velocity, step, params, grads),
        }
    }
}

/// Bias-corrected adaptive-moment step.
pub fn adam_update(
    cfg: &AdamConfig,
    m: &mut Vec<Tensor>,
    v: &mut Vec<Tensor>,
    step: &mut u64,
    params: &mut [Tensor],
    grads: &GradientSet,
) {
    if m.is_empty() {
        *m = zeros_like(params);
        *v = zeros_like(params);
    }
    *step += 1;
    let t = *step as i32;
    let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let lr = cfg.lr as f32;
    let (c1, c2, eps) = (c1 as f32, c2 as f32, cfg.eps as f32);
    for (((p, g), m), v) in params.iter_mut().zip(&grads.tensors).zip(m.iter_mut()).zip(v.iter_mut()) {
        let it = p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut()));
        for ((p, &g), (m, v)) in it {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// `velocity ← μ·velocity + g; θ ← θ − lr·velocity`
pub fn sgd_update(
    cfg: &SgdConfig,
    velocity: &mut Vec<Tensor>,
    step: &mut u64,
    params: &mut [Tensor],
    grads: &GradientSet,
) {
    if velocity.is_empty() {
        *velocity = zeros_like(params);
    }
    *step += 1;
    let (lr, mu) = (cfg.lr as f32, cfg.momentum as f32);
    for ((p, g), vel) in params.iter_mut().zip(&grads.tensors).zip(velocity.iter_mut()) {
        for ((p, &g), v) in p.data_mut().iter_mut().zip(g.data()).zip(vel.data_mut()) {
            *v = mu * *v + g;
            *p -= lr * *v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f32) -> Vec<Tensor> {
        vec![Tensor::from_vec(&[1], vec![v]).unwrap()]
    }

    fn grad(v: f32) -> GradientSet {
        GradientSet { tensors: scalar(v) }
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        for mut opt in [Optimizer::adam(AdamConfig::default()), Optimizer::sgd(SgdConfig { lr: 0.1, momentum: 0.0 })] {
            let mut p = scalar(1.5);
            opt.update(&mut p, &grad(0.0));
            assert_eq!(p[0].data(), &[1.5]);
            assert_eq!(opt.steps(), 1);
        }
    }

    #[test]
    fn first_adam_step_moves_by_the_step_size() {
        let cfg = AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        };
        let mut opt = Optimizer::adam(cfg);
        let mut p = scalar(0.0);
        opt.update(&mut p, &grad(1.0));
        // lr · m̂/(√v̂ + ε) with m̂ = v̂ = 1, up to ε and f32 rounding.
        assert!((p[0].data()[0] + 1e-3).abs() < 1e-9);
        // A second step with the same gradient is again a full step.
        opt.update(&mut p, &grad(1.0));
        assert!((p[0].data()[0] + 2e-3).abs() < 1e-9);
        assert_eq!(opt.steps(), 2);
    }

    #[test]
    fn sgd_step_values() {
        let mut opt = Optimizer::sgd(SgdConfig { lr: 0.1, momentum: 0.0 });
        let mut p = scalar(1.0);
        opt.update(&mut p, &grad(2.0));
        assert!((p[0].data()[0] - 0.8).abs() < 1e-7);

        let mut opt = Optimizer::sgd(SgdConfig { lr: 0.1, momentum: 0.5 });
        let mut p = scalar(0.0);
        opt.update(&mut p, &grad(1.0));
        opt.update(&mut p, &grad(1.0));
        // velocities 1 then 1.5
        assert!((p[0].data()[0] + 0.25).abs() < 1e-7);
    }
}
