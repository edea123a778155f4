use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

/// Trainable tensor with its Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
    m: Array2<f64>,
    v: Array2<f64>,
    step: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Array2<f64>) -> Self {
        let dim = value.dim();
        Parameter {
            name: name.into(),
            value,
            grad: Array2::zeros(dim),
            m: Array2::zeros(dim),
            v: Array2::zeros(dim),
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// One Adam update. Weight decay multiplies the value by `1 − lr·wd` before
/// the moment-based step.
pub fn adam_step(params: &mut [Parameter], cfg: &AdamConfig) {
    for p in params.iter_mut() {
        p.step += 1;
        let t = p.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        if cfg.weight_decay != 0.0 {
            p.value *= 1.0 - cfg.lr * cfg.weight_decay;
        }
        Zip::from(&mut p.value)
            .and(&mut p.m)
            .and(&mut p.v)
            .and(&p.grad)
            .for_each(|x, m, v, &g| {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *x -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn scalar(p: f64, g: f64) -> Parameter {
        let mut param = Parameter::new("p", array![[p]]);
        param.grad = array![[g]];
        param
    }

    #[test]
    fn zero_grad_leaves_value() {
        let mut ps = vec![scalar(1.5, 0.0)];
        adam_step(
            &mut ps,
            &AdamConfig {
                lr: 0.1,
                ..Default::default()
            },
        );
        assert_eq!(ps[0].value[[0, 0]], 1.5);
        assert_eq!(ps[0].step(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // mhat = g, vhat = g^2 at step 1, so the update is lr * g / (|g| + eps).
        let mut ps = vec![scalar(1.0, 1.0)];
        adam_step(
            &mut ps,
            &AdamConfig {
                lr: 0.1,
                ..Default::default()
            },
        );
        assert_abs_diff_eq!(ps[0].value[[0, 0]], 0.9, epsilon = 1e-7);
    }

    #[test]
    fn decay_only_step_scales() {
        let mut ps = vec![scalar(2.0, 0.0)];
        let cfg = AdamConfig {
            lr: 0.1,
            weight_decay: 0.1,
            ..Default::default()
        };
        adam_step(&mut ps, &cfg);
        assert_abs_diff_eq!(ps[0].value[[0, 0]], 2.0 * 0.99, epsilon = 1e-15);
    }
}
