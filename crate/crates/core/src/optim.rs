//! Parameter updates and the label-smoothing baseline.
//!
//! Weight decay is the coupled `λw` gradient term and applies to weight
//! matrices only; biases are never decayed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{GradientSet, Network};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgdConfig {
    pub lr_high: f64,
    pub lr_low: f64,
    /// Progress fraction at which the rate drops; the boundary is in the low phase.
    pub drop_at: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr_high: 0.1,
            lr_low: 0.001,
            drop_at: 0.75,
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_high > self.lr_low && self.lr_low > 0.0) {
            return Err(Error::Config(format!(
                "need lr_high > lr_low > 0, got {} and {}",
                self.lr_high, self.lr_low
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(0.0..=1.0).contains(&self.drop_at) {
            return Err(Error::Config(format!(
                "drop_at must lie in [0, 1], got {}",
                self.drop_at
            )));
        }
        check_decay(self.weight_decay)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        check_lr(self.lr)?;
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("adam {name} must lie in [0, 1), got {b}")));
            }
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::Config("adam eps must be positive".into()));
        }
        check_decay(self.weight_decay)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaGradConfig {
    pub lr: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdaGradConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            eps: 1e-10,
            weight_decay: 0.0,
        }
    }
}

impl AdaGradConfig {
    pub fn validate(&self) -> Result<()> {
        check_lr(self.lr)?;
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::Config("adagrad eps must be positive".into()));
        }
        check_decay(self.weight_decay)
    }
}

fn check_lr(lr: f64) -> Result<()> {
    if lr > 0.0 && lr.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("learning rate must be positive, got {lr}")))
    }
}

fn check_decay(wd: f64) -> Result<()> {
    if wd >= 0.0 && wd.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("weight decay must be >= 0, got {wd}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd(SgdConfig),
    Adam(AdamConfig),
    Adagrad(AdaGradConfig),
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Sgd(SgdConfig::default())
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            OptimizerConfig::Sgd(c) => c.validate(),
            OptimizerConfig::Adam(c) => c.validate(),
            OptimizerConfig::Adagrad(c) => c.validate(),
        }
    }
}

/// Piecewise-constant learning rate: `lr_high` before `drop_at`, `lr_low`
/// from `drop_at` on.
pub fn lr_at(config: &SgdConfig, progress: f64) -> f64 {
    if progress < config.drop_at {
        config.lr_high
    } else {
        config.lr_low
    }
}

/// One momentum-SGD update on raw buffers:
/// `v ← μv + (g + λw)`, `w ← w − η v`.
pub fn sgd_step(params: &mut [f64], grads: &[f64], velocity: &mut [f64], lr: f64, momentum: f64, weight_decay: f64) {
    for ((w, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + (g + weight_decay * *w);
        *w -= lr * *v;
    }
}

/// One Adam update. `step` is the 1-based update count used for bias
/// correction.
#[allow(clippy::too_many_arguments)]
pub fn adam_step(params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], step: u64, config: &AdamConfig) {
    let c1 = 1.0 - config.beta1.powi(step as i32);
    let c2 = 1.0 - config.beta2.powi(step as i32);
    for (((w, &g0), mi), vi) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        let g = g0 + config.weight_decay * *w;
        *mi = config.beta1 * *mi + (1.0 - config.beta1) * g;
        *vi = config.beta2 * *vi + (1.0 - config.beta2) * g * g;
        let m_hat = *mi / c1;
        let v_hat = *vi / c2;
        *w -= config.lr * m_hat / (v_hat.sqrt() + config.eps);
    }
}

/// One AdaGrad update: `G ← G + g²`, `w ← w − η g / (√G + ε)`.
pub fn adagrad_step(params: &mut [f64], grads: &[f64], accum: &mut [f64], config: &AdaGradConfig) {
    for ((w, &g0), a) in params.iter_mut().zip(grads).zip(accum.iter_mut()) {
        let g = g0 + config.weight_decay * *w;
        *a += g * g;
        *w -= config.lr * g / (a.sqrt() + config.eps);
    }
}

#[derive(Debug, Clone)]
enum State {
    Sgd { velocity: GradientSet },
    Adam { m: GradientSet, v: GradientSet },
    Adagrad { accum: GradientSet },
}

/// Optimizer plus its per-parameter buffers for one network.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    state: State,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, network: &Network) -> Result<Self> {
        config.validate()?;
        let zeros = || GradientSet::zeros_like(network);
        let state = match config {
            OptimizerConfig::Sgd(_) => State::Sgd { velocity: zeros() },
            OptimizerConfig::Adam(_) => State::Adam { m: zeros(), v: zeros() },
            OptimizerConfig::Adagrad(_) => State::Adagrad { accum: zeros() },
        };
        Ok(Self {
            config,
            state,
            steps: 0,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Learning rate in effect at `progress`.
    pub fn lr(&self, progress: f64) -> f64 {
        match &self.config {
            OptimizerConfig::Sgd(c) => lr_at(c, progress),
            OptimizerConfig::Adam(c) => c.lr,
            OptimizerConfig::Adagrad(c) => c.lr,
        }
    }

    /// Applies `grads` (already averaged over the mini-batch) to `network`.
    pub fn step(&mut self, network: &mut Network, grads: &GradientSet, progress: f64) -> Result<()> {
        grads.check_aligned(network)?;
        self.steps += 1;
        let lr = self.lr(progress);
        let steps = self.steps;
        for (i, layer) in network.layers_mut().iter_mut().enumerate() {
            let params: [(&mut Tensor, &Tensor, bool); 2] = [
                (&mut layer.dense.weights, &grads.weights[i], true),
                (&mut layer.dense.bias, &grads.biases[i], false),
            ];
            for (j, (param, grad, decays)) in params.into_iter().enumerate() {
                match (&self.config, &mut self.state) {
                    (OptimizerConfig::Sgd(c), State::Sgd { velocity }) => {
                        let v = buffer(velocity, i, j);
                        let wd = if decays { c.weight_decay } else { 0.0 };
                        sgd_step(param.data_mut(), grad.data(), v, lr, c.momentum, wd);
                    }
                    (OptimizerConfig::Adam(c), State::Adam { m, v }) => {
                        let mut cfg = *c;
                        if !decays {
                            cfg.weight_decay = 0.0;
                        }
                        adam_step(
                            param.data_mut(),
                            grad.data(),
                            buffer(m, i, j),
                            buffer(v, i, j),
                            steps,
                            &cfg,
                        );
                    }
                    (OptimizerConfig::Adagrad(c), State::Adagrad { accum }) => {
                        let mut cfg = *c;
                        if !decays {
                            cfg.weight_decay = 0.0;
                        }
                        adagrad_step(param.data_mut(), grad.data(), buffer(accum, i, j), &cfg);
                    }
                    _ => unreachable!("optimizer state always matches its config"),
                }
            }
        }
        Ok(())
    }
}

fn buffer(set: &mut GradientSet, layer: usize, which: usize) -> &mut [f64] {
    if which == 0 {
        set.weights[layer].data_mut()
    } else {
        set.biases[layer].data_mut()
    }
}

/// `(1 − ε) y + ε / M`.
pub fn label_smooth(target: &Tensor, epsilon: f64) -> Result<Tensor> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::Config(format!(
            "label smoothing epsilon must lie in [0, 1), got {epsilon}"
        )));
    }
    let m = target.len() as f64;
    let data = target
        .data()
        .iter()
        .map(|&y| (1.0 - epsilon) * y + epsilon / m)
        .collect();
    Tensor::new(target.dims().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lr_schedule_steps() {
        let c = SgdConfig::default();
        assert_eq!(lr_at(&c, 0.0), 0.1);
        assert_eq!(lr_at(&c, 0.7499), 0.1);
        assert_eq!(lr_at(&c, 0.75), 0.001);
        assert_eq!(lr_at(&c, 0.9), 0.001);
        let mut seen: Vec<f64> = (0..=1000).map(|i| lr_at(&c, i as f64 / 1000.0)).collect();
        seen.dedup();
        assert_eq!(seen, vec![0.1, 0.001]);
    }

    #[test]
    fn sgd_arithmetic() {
        let mut w = [0.5, -1.0];
        let mut v = [0.0, 0.0];
        sgd_step(&mut w, &[0.0, 0.0], &mut v, 0.1, 0.0, 0.0);
        assert_eq!(w, [0.5, -1.0]);

        let mut w = [1.0];
        let mut v = [0.0];
        sgd_step(&mut w, &[0.0], &mut v, 0.1, 0.0, 0.1);
        assert!((w[0] - 0.99).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_shrinks_norm() {
        let mut w = [0.3, -2.0, 1.2];
        let mut v = [0.0; 3];
        let mut prev = w.iter().map(|x| x * x).sum::<f64>();
        for _ in 0..100 {
            sgd_step(&mut w, &[0.0; 3], &mut v, 0.1, 0.0, 0.05);
            let norm = w.iter().map(|x| x * x).sum::<f64>();
            assert!(norm < prev);
            prev = norm;
        }
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let c = AdamConfig::default();
        let mut w = [0.7, -0.2];
        let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
        for t in 1..=10 {
            adam_step(&mut w, &[0.0, 0.0], &mut m, &mut v, t, &c);
        }
        assert_eq!(w, [0.7, -0.2]);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let c = AdamConfig::default();
        for g in [1e-4, 0.3, 250.0, -7.0] {
            let mut w = [0.0];
            adam_step(&mut w, &[g], &mut [0.0], &mut [0.0], 1, &c);
            // m̂ = g and v̂ = g², so the step is lr · g / (|g| + eps).
            let want = -c.lr * g.signum();
            assert!((w[0] - want).abs() <= c.lr * 1e-3, "g={g}: {}", w[0]);
        }
    }

    #[test]
    fn adagrad_decays_like_inverse_sqrt() {
        let c = AdaGradConfig::default();
        let mut w = [0.0];
        let mut a = [0.0];
        let mut steps = Vec::new();
        for _ in 0..40 {
            let before = w[0];
            adagrad_step(&mut w, &[1.0], &mut a, &c);
            steps.push(before - w[0]);
        }
        let ratio = steps[9] / steps[39];
        assert!((ratio - 2.0).abs() <= 0.1, "ratio {ratio}");
    }

    #[test]
    fn label_smoothing_values() {
        let y = Tensor::vector(vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(label_smooth(&y, 0.0).unwrap(), y);
        let mut ten = vec![0.0; 10];
        ten[3] = 1.0;
        let s = label_smooth(&Tensor::vector(ten).unwrap(), 0.1).unwrap();
        assert!((s.data()[3] - 0.91).abs() < 1e-15);
        assert!((s.data()[0] - 0.01).abs() < 1e-15);
        assert!((s.sum() - 1.0).abs() <= 1e-12);
        assert!(matches!(label_smooth(&y, 1.0), Err(Error::Config(_))));
    }

    fn small_net() -> Network {
        let mut net = Network::new(4, &[(3, Activation::Relu), (2, Activation::Softmax)]).unwrap();
        net.he_init(&mut ChaCha8Rng::seed_from_u64(3));
        net
    }

    fn random_grads(net: &Network, rng: &mut ChaCha8Rng) -> GradientSet {
        let mut g = GradientSet::zeros_like(net);
        for t in g.weights.iter_mut().chain(g.biases.iter_mut()) {
            t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        }
        g
    }

    #[test]
    fn network_steps_are_deterministic() {
        for config in [
            OptimizerConfig::Sgd(SgdConfig::default()),
            OptimizerConfig::Adam(AdamConfig::default()),
            OptimizerConfig::Adagrad(AdaGradConfig::default()),
        ] {
            let run = || {
                let mut net = small_net();
                let mut opt = Optimizer::new(config, &net).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(17);
                for k in 0..100 {
                    let g = random_grads(&net, &mut rng);
                    opt.step(&mut net, &g, k as f64 / 100.0).unwrap();
                }
                net
            };
            assert_eq!(run().to_bytes(), run().to_bytes());
        }
    }

    #[test]
    fn biases_are_not_decayed() {
        let mut net = small_net();
        for l in net.layers_mut() {
            l.dense.bias.data_mut().iter_mut().for_each(|b| *b = 0.5);
        }
        let cfg = SgdConfig {
            momentum: 0.0,
            weight_decay: 0.1,
            ..SgdConfig::default()
        };
        let mut opt = Optimizer::new(OptimizerConfig::Sgd(cfg), &net).unwrap();
        let before = net.clone();
        let zero = GradientSet::zeros_like(&net);
        opt.step(&mut net, &zero, 0.0).unwrap();
        for (a, b) in net.layers().iter().zip(before.layers()) {
            assert_eq!(a.dense.bias, b.dense.bias);
            for (x, y) in a.dense.weights.data().iter().zip(b.dense.weights.data()) {
                assert!((x - y * 0.99).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn misaligned_gradients_rejected() {
        let mut net = small_net();
        let other = Network::new(4, &[(5, Activation::Softmax)]).unwrap();
        let mut opt = Optimizer::new(OptimizerConfig::default(), &net).unwrap();
        let g = GradientSet::zeros_like(&other);
        assert!(matches!(opt.step(&mut net, &g, 0.0), Err(Error::Shape(_))));
    }

    #[test]
    fn config_validation() {
        let bad = SgdConfig {
            momentum: 1.0,
            ..SgdConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SgdConfig {
            lr_low: 0.5,
            ..SgdConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(AdamConfig {
            beta2: 1.0,
            ..AdamConfig::default()
        }
        .validate()
        .is_err());
        assert!(AdaGradConfig {
            lr: 0.0,
            ..AdaGradConfig::default()
        }
        .validate()
        .is_err());
    }
}
