//! Residual smoothing layer.
//!
//! For one sample the residual `d = |h(x) − y|` is turned into a diffusivity
//! map `κ` through a scaled sigmoid, and `κ` builds an `M × M` row-stochastic
//! interpolation matrix `W` with `W_jj = 1 − κ_j` and `W_jk = κ_j / (M − 1)`.
//! The training loss is `‖Wⁿ d‖²`. `W` is held constant when differentiating:
//! gradients flow through `d` only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Elementwise absolute residual, entries `≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualVector(Tensor);

impl ResidualVector {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.data().iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Input("residual entries must be finite and non-negative".into()));
        }
        Ok(Self(values))
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn values(&self) -> &[f64] {
        self.0.data()
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedResidual {
    pub d_tilde: Tensor,
    pub mu: f64,
    /// Population standard deviation before clamping.
    pub sigma: f64,
}

/// Per-element diffusivity, entries in `[0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusivityMap(Tensor);

impl DiffusivityMap {
    pub fn new(kappa: Tensor) -> Result<Self> {
        if kappa.data().iter().any(|k| !(0.0..1.0).contains(k)) {
            return Err(Error::Input("diffusivity entries must lie in [0, 1)".into()));
        }
        Ok(Self(kappa))
    }

    pub fn values(&self) -> &[f64] {
        self.0.data()
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn mean(&self) -> f64 {
        self.0.mean()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingMode {
    /// No smoothing, `κ = 0`.
    Off,
    /// `κ = S(d; s_t, 0)`: uniform `s_t / 2` on every element.
    Global,
    /// `κ = S(d̃; s_local, α)` with a constant scale.
    Local,
    /// `κ = S(d̃; s_t, α)`.
    GlobalLocal,
}

impl std::str::FromStr for SmoothingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(Self::Off),
            "global" => Ok(Self::Global),
            "local" => Ok(Self::Local),
            "global_local" => Ok(Self::GlobalLocal),
            other => Err(Error::Config(format!("unknown smoothing mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmoothingConfig {
    pub mode: SmoothingMode,
    /// Sigmoid steepness; ignored in global mode, which fixes it at 0.
    pub alpha: f64,
    /// Number of applications of the smoothing matrix.
    pub n_steps: usize,
    pub eps_std: f64,
    /// Constant scale used by local mode.
    pub local_scale: f64,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            mode: SmoothingMode::GlobalLocal,
            alpha: 1.0,
            n_steps: 1,
            eps_std: 1e-8,
            local_scale: 1.0,
        }
    }
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::Config("n_steps must be at least 1".into()));
        }
        if !(self.eps_std > 0.0 && self.eps_std.is_finite()) {
            return Err(Error::Config(format!("eps_std must be positive, got {}", self.eps_std)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        check_scale(self.local_scale)
    }
}

fn check_scale(s: f64) -> Result<()> {
    if (0.0..=1.0).contains(&s) {
        Ok(())
    } else {
        Err(Error::Config(format!("sigmoid scale must lie in [0, 1], got {s}")))
    }
}

pub fn residual(prediction: &Tensor, target: &Tensor) -> Result<ResidualVector> {
    if prediction.dims() != target.dims() {
        return Err(Error::Shape(format!(
            "prediction dims {:?} vs target dims {:?}",
            prediction.dims(),
            target.dims()
        )));
    }
    let d = prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, y)| (p - y).abs())
        .collect();
    ResidualVector::new(Tensor::new(prediction.dims().to_vec(), d)?)
}

/// Shifts to mean 0 and divides by the population standard deviation,
/// clamped below by `eps_std`.
pub fn normalize_residual(d: &ResidualVector, eps_std: f64) -> NormalizedResidual {
    let (d_tilde, mu, sigma) = normalize_slice(d.values(), eps_std);
    NormalizedResidual {
        d_tilde: Tensor::new(d.as_tensor().dims().to_vec(), d_tilde).expect("same dims"),
        mu,
        sigma,
    }
}

fn normalize_slice(d: &[f64], eps_std: f64) -> (Vec<f64>, f64, f64) {
    let m = d.len() as f64;
    let mu = d.iter().sum::<f64>() / m;
    let sigma = (d.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / m).sqrt();
    let denom = sigma.max(eps_std);
    (d.iter().map(|v| (v - mu) / denom).collect(), mu, sigma)
}

#[inline]
fn sigmoid(x: f64, s: f64, alpha: f64) -> f64 {
    s / (1.0 + (-alpha * x).exp())
}

/// `S(x)_j = s / (1 + exp(−α x_j))`.
pub fn sigmoid_scale(x: &Tensor, s: f64, alpha: f64) -> Result<Tensor> {
    check_scale(s)?;
    if alpha.is_nan() || alpha < 0.0 {
        return Err(Error::Config(format!("alpha must be >= 0, got {alpha}")));
    }
    let out = x.data().iter().map(|&v| sigmoid(v, s, alpha)).collect();
    Tensor::new(x.dims().to_vec(), out)
}

/// Diffusivity for one residual under `config.mode`, with annealed scale `s_t`.
pub fn diffusivity(d: &ResidualVector, s_t: f64, config: &SmoothingConfig) -> Result<DiffusivityMap> {
    check_scale(s_t)?;
    config.validate()?;
    let kappa = diffusivity_slice(d.values(), s_t, config);
    DiffusivityMap::new(Tensor::new(d.as_tensor().dims().to_vec(), kappa)?)
}

fn diffusivity_slice(d: &[f64], s_t: f64, config: &SmoothingConfig) -> Vec<f64> {
    match config.mode {
        SmoothingMode::Off => vec![0.0; d.len()],
        SmoothingMode::Global => d.iter().map(|&v| sigmoid(v, s_t, 0.0)).collect(),
        SmoothingMode::Local | SmoothingMode::GlobalLocal => {
            let s = if config.mode == SmoothingMode::Local {
                config.local_scale
            } else {
                s_t
            };
            let (d_tilde, _, _) = normalize_slice(d, config.eps_std);
            d_tilde.iter().map(|&v| sigmoid(v, s, config.alpha)).collect()
        }
    }
}

/// Row `j` has `1 − κ_j` on the diagonal and `κ_j / (M − 1)` elsewhere.
/// For `M = 1` the result is the 1×1 identity.
pub fn smoothing_matrix(kappa: &DiffusivityMap) -> Result<Tensor> {
    let m = kappa.values().len();
    Tensor::matrix(m, m, smoothing_matrix_data(kappa.values()))
}

fn smoothing_matrix_data(kappa: &[f64]) -> Vec<f64> {
    let m = kappa.len();
    if m == 1 {
        return vec![1.0];
    }
    let mut w = vec![0.0; m * m];
    let spread = (m - 1) as f64;
    for (j, &k) in kappa.iter().enumerate() {
        let row = &mut w[j * m..(j + 1) * m];
        row.iter_mut().for_each(|v| *v = k / spread);
        row[j] = 1.0 - k;
    }
    w
}

fn check_square(w: &Tensor, m: usize) -> Result<()> {
    if w.dims() != [m, m] {
        return Err(Error::Shape(format!(
            "smoothing matrix dims {:?} do not match residual length {m}",
            w.dims()
        )));
    }
    Ok(())
}

fn mat_vec(w: &[f64], v: &[f64], out: &mut [f64]) {
    let m = v.len();
    for (j, o) in out.iter_mut().enumerate() {
        let row = &w[j * m..(j + 1) * m];
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(v) {
            acc += a * b;
        }
        *o = acc;
    }
}

fn mat_t_vec(w: &[f64], v: &[f64], out: &mut [f64]) {
    let m = v.len();
    for (k, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, vj) in v.iter().enumerate() {
            acc += w[j * m + k] * vj;
        }
        *o = acc;
    }
}

fn power_apply(w: &[f64], d: &[f64], n_steps: usize) -> Vec<f64> {
    let mut u = d.to_vec();
    let mut next = vec![0.0; d.len()];
    for _ in 0..n_steps {
        mat_vec(w, &u, &mut next);
        std::mem::swap(&mut u, &mut next);
    }
    u
}

/// `u = Wⁿ d`.
pub fn apply_smoothing(w: &Tensor, d: &ResidualVector, n_steps: usize) -> Result<Tensor> {
    check_square(w, d.dim())?;
    let u = power_apply(w.data(), d.values(), n_steps);
    Tensor::new(d.as_tensor().dims().to_vec(), u)
}

/// `g = ‖Wⁿ d‖²`.
pub fn smoothed_loss(d: &ResidualVector, w: &Tensor, n_steps: usize) -> Result<f64> {
    let u = apply_smoothing(w, d, n_steps)?;
    Ok(u.data().iter().map(|v| v * v).sum())
}

/// `∂g/∂prediction = 2 (Wⁿ)ᵀ (Wⁿ d) ⊙ sign(prediction − target)`, with `W`
/// held fixed and `sign(0) = 0`.
pub fn smoothed_loss_backward(prediction: &Tensor, target: &Tensor, w: &Tensor, n_steps: usize) -> Result<Tensor> {
    let d = residual(prediction, target)?;
    check_square(w, d.dim())?;
    let mut grad = vec![0.0; d.dim()];
    backward_slice(prediction.data(), target.data(), w.data(), n_steps, &mut grad);
    Tensor::new(prediction.dims().to_vec(), grad)
}

fn backward_slice(pred: &[f64], target: &[f64], w: &[f64], n_steps: usize, grad: &mut [f64]) {
    let d: Vec<f64> = pred.iter().zip(target).map(|(p, y)| (p - y).abs()).collect();
    let u = power_apply(w, &d, n_steps);
    let mut v: Vec<f64> = u.iter().map(|x| 2.0 * x).collect();
    let mut next = vec![0.0; v.len()];
    for _ in 0..n_steps {
        mat_t_vec(w, &v, &mut next);
        std::mem::swap(&mut v, &mut next);
    }
    for ((g, vk), (p, y)) in grad.iter_mut().zip(&v).zip(pred.iter().zip(target)) {
        *g = vk * sign(p - y);
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Residual-driven regularization weight `1 − exp(−‖f‖ / ν)`. Diagnostic only.
pub fn adaptive_lambda(f_norm: f64, nu: f64) -> Result<f64> {
    if nu.is_nan() || nu <= 0.0 {
        return Err(Error::Config(format!("nu must be positive, got {nu}")));
    }
    if f_norm.is_nan() || f_norm < 0.0 {
        return Err(Error::Input(format!("residual norm must be >= 0, got {f_norm}")));
    }
    Ok(1.0 - (-f_norm / nu).exp())
}

/// Loss, output gradient and mean diffusivity for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSmoothing {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub mean_kappa: f64,
}

/// Runs the whole smoothing layer for one sample on raw slices: residual,
/// diffusivity, matrix, smoothed loss and its gradient with respect to the
/// prediction.
pub fn smooth_sample(prediction: &[f64], target: &[f64], s_t: f64, config: &SmoothingConfig) -> SampleSmoothing {
    debug_assert_eq!(prediction.len(), target.len());
    let d: Vec<f64> = prediction.iter().zip(target).map(|(p, y)| (p - y).abs()).collect();
    let kappa = diffusivity_slice(&d, s_t, config);
    let w = smoothing_matrix_data(&kappa);
    let u = power_apply(&w, &d, config.n_steps);
    let loss = u.iter().map(|v| v * v).sum();
    let mut grad = vec![0.0; d.len()];
    backward_slice(prediction, target, &w, config.n_steps, &mut grad);
    SampleSmoothing {
        loss,
        grad,
        mean_kappa: kappa.iter().sum::<f64>() / kappa.len() as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(values: &[f64]) -> Tensor {
        Tensor::vector(values.to_vec()).unwrap()
    }

    fn rv(values: &[f64]) -> ResidualVector {
        ResidualVector::new(v(values)).unwrap()
    }

    fn kappa(values: &[f64]) -> DiffusivityMap {
        DiffusivityMap::new(v(values)).unwrap()
    }

    fn cfg(mode: SmoothingMode, alpha: f64) -> SmoothingConfig {
        SmoothingConfig {
            mode,
            alpha,
            ..SmoothingConfig::default()
        }
    }

    // Straightforward matrix power times vector, used as an oracle.
    fn oracle_apply(w: &Tensor, d: &[f64], n: usize) -> Vec<f64> {
        let m = d.len();
        let mut u = d.to_vec();
        for _ in 0..n {
            u = (0..m)
                .map(|j| (0..m).map(|k| w.data()[j * m + k] * u[k]).sum())
                .collect();
        }
        u
    }

    #[test]
    fn residual_cases() {
        let p = v(&[0.3, 0.7]);
        assert_eq!(residual(&p, &p).unwrap().values(), &[0.0, 0.0]);
        let d = residual(&v(&[0.2, 0.9]), &v(&[0.0, 1.0])).unwrap();
        assert_eq!(d.values()[0], 0.2);
        assert!((d.values()[1] - 0.1).abs() < 1e-15);
        assert!(matches!(residual(&v(&[1.0]), &v(&[1.0, 2.0])), Err(Error::Shape(_))));
    }

    #[test]
    fn residual_permutation_equivariant() {
        let p = [0.1, 0.5, 0.9, 0.2];
        let y = [0.0, 1.0, 0.0, 0.0];
        let perm = [2, 0, 3, 1];
        let d = residual(&v(&p), &v(&y)).unwrap();
        let pp: Vec<f64> = perm.iter().map(|&i| p[i]).collect();
        let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let dp = residual(&v(&pp), &v(&yp)).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(dp.values()[k], d.values()[i]);
        }
    }

    #[test]
    fn normalize_constant_and_ramp() {
        let n = normalize_residual(&rv(&[0.4; 5]), 1e-8);
        assert!(n.d_tilde.data().iter().all(|&x| x == 0.0));
        assert_eq!(n.sigma, 0.0);

        let n = normalize_residual(&rv(&[1.0, 2.0, 3.0]), 1e-8);
        // (d − 2) / sqrt(2/3)
        let s = (2.0f64 / 3.0).sqrt();
        let want = [-1.0 / s, 0.0, 1.0 / s];
        for (g, w) in n.d_tilde.data().iter().zip(want) {
            assert!((g - w).abs() < 1e-12);
        }
        assert!((want[2] - 1.224744871391589).abs() < 1e-12);
        assert_eq!(n.mu, 2.0);
    }

    #[test]
    fn normalize_moments_and_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let d: Vec<f64> = (0..10).map(|_| rng.gen_range(0.0..1.0)).collect();
            let n = normalize_residual(&rv(&d), 1e-8);
            let t = n.d_tilde.data();
            let mean = t.iter().sum::<f64>() / 10.0;
            let std = (t.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 10.0).sqrt();
            assert!(mean.abs() < 1e-10);
            assert!((std - 1.0).abs() < 1e-10);
            assert_eq!(crate::tensor::max_index(t), crate::tensor::max_index(&d));
        }
    }

    #[test]
    fn sigmoid_special_values() {
        let x = v(&[-3.0, 0.0, 2.5]);
        assert_eq!(sigmoid_scale(&v(&[0.0]), 1.0, 3.7).unwrap().data(), &[0.5]);
        assert!(sigmoid_scale(&x, 0.6, 0.0).unwrap().data().iter().all(|&k| k == 0.3));
        assert!(sigmoid_scale(&x, 0.0, 2.0).unwrap().data().iter().all(|&k| k == 0.0));
        assert!(matches!(sigmoid_scale(&x, 1.5, 1.0), Err(Error::Config(_))));
    }

    #[test]
    fn diffusivity_modes() {
        let d = rv(&[0.1, 0.7, 0.05, 0.3]);
        let off = diffusivity(&d, 0.9, &cfg(SmoothingMode::Off, 1.0)).unwrap();
        assert!(off.values().iter().all(|&k| k == 0.0));
        let global = diffusivity(&d, 0.6, &cfg(SmoothingMode::Global, 4.0)).unwrap();
        assert!(global.values().iter().all(|&k| k == 0.3));
        let local = diffusivity(&d, 0.0, &cfg(SmoothingMode::Local, 1.0)).unwrap();
        assert!(local.values().iter().all(|&k| k > 0.0 && k < 1.0));
        assert!(diffusivity(&d, 1.2, &cfg(SmoothingMode::Global, 1.0)).is_err());
        assert!("diagonal".parse::<SmoothingMode>().is_err());
        assert_eq!(
            "global_local".parse::<SmoothingMode>().unwrap(),
            SmoothingMode::GlobalLocal
        );
    }

    #[test]
    fn diffusivity_monotone_in_residual() {
        let d: Vec<f64> = (0..20).map(|i| i as f64 * 0.05).collect();
        for alpha in [0.25, 1.0, 4.0] {
            let k = diffusivity(&rv(&d), 0.8, &cfg(SmoothingMode::GlobalLocal, alpha)).unwrap();
            for pair in k.values().windows(2) {
                assert!(pair[1] > pair[0]);
            }
        }
    }

    #[test]
    fn matrix_small_cases() {
        let w = smoothing_matrix(&kappa(&[0.0; 4])).unwrap();
        assert_eq!(w, Tensor::identity(4).unwrap());
        let w = smoothing_matrix(&kappa(&[0.4, 0.0])).unwrap();
        assert_eq!(w.data(), &[0.6, 0.4, 0.0, 1.0]);
        let w = smoothing_matrix(&kappa(&[0.7])).unwrap();
        assert_eq!(w.data(), &[1.0]);
    }

    #[test]
    fn matrix_rows_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let k: Vec<f64> = (0..10).map(|_| rng.gen_range(0.0..1.0)).collect();
            let w = smoothing_matrix(&kappa(&k)).unwrap();
            for row in w.data().chunks(10) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                assert!(row.iter().all(|&x| x >= 0.0));
            }
        }
    }

    #[test]
    fn apply_identity_and_composition() {
        let d = rv(&[0.2, 0.5, 0.1]);
        let eye = Tensor::identity(3).unwrap();
        assert_eq!(apply_smoothing(&eye, &d, 3).unwrap().data(), d.values());
        let w = smoothing_matrix(&kappa(&[0.3, 0.6, 0.1])).unwrap();
        let two = apply_smoothing(&w, &d, 2).unwrap();
        let once = ResidualVector::new(apply_smoothing(&w, &d, 1).unwrap()).unwrap();
        let twice = apply_smoothing(&w, &once, 1).unwrap();
        assert_eq!(two, twice);
        assert!(matches!(
            apply_smoothing(&eye, &rv(&[1.0, 2.0]), 1),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn uniform_kappa_column_sums_decide_mass() {
        // W is row-stochastic; with uniform κ it is also column-stochastic,
        // so the sum (and mean) of the residual is preserved.
        let d = rv(&[0.9, 0.05, 0.02, 0.01, 0.02]);
        let w = smoothing_matrix(&kappa(&[0.35; 5])).unwrap();
        let u = apply_smoothing(&w, &d, 1).unwrap();
        let col_sums: Vec<f64> = (0..5).map(|k| (0..5).map(|j| w.data()[j * 5 + k]).sum()).collect();
        let weighted: f64 = col_sums.iter().zip(d.values()).map(|(c, x)| c * x).sum();
        assert!((u.sum() - weighted).abs() < 1e-14);
        assert!((u.mean() - d.as_tensor().mean()).abs() < 1e-14);
    }

    #[test]
    fn smoothed_loss_cases() {
        let d = rv(&[0.3, 0.4, 0.1]);
        let eye = smoothing_matrix(&kappa(&[0.0; 3])).unwrap();
        let plain: f64 = d.values().iter().map(|x| x * x).sum();
        assert_eq!(smoothed_loss(&d, &eye, 1).unwrap().to_bits(), plain.to_bits());
        assert_eq!(smoothed_loss(&rv(&[0.0; 3]), &eye, 1).unwrap(), 0.0);

        let d = rv(&[0.2, 0.1]);
        let w = smoothing_matrix(&kappa(&[0.4, 0.0])).unwrap();
        let u = oracle_apply(&w, d.values(), 1);
        assert!((u[0] - 0.16).abs() < 1e-15 && (u[1] - 0.1).abs() < 1e-15);
        let g = smoothed_loss(&d, &w, 1).unwrap();
        assert!((g - 0.0356).abs() < 1e-15);
    }

    #[test]
    fn backward_special_cases() {
        let p = v(&[0.2, 0.5, 0.3]);
        let w = smoothing_matrix(&kappa(&[0.5, 0.2, 0.1])).unwrap();
        let g = smoothed_loss_backward(&p, &p, &w, 1).unwrap();
        assert!(g.data().iter().all(|&x| x == 0.0));

        let y = v(&[0.0, 1.0, 0.0]);
        let eye = Tensor::identity(3).unwrap();
        let g = smoothed_loss_backward(&p, &y, &eye, 1).unwrap();
        for k in 0..3 {
            let want = 2.0 * (p.data()[k] - y.data()[k]);
            assert_eq!(g.data()[k].to_bits(), want.to_bits());
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let h = 1e-6;
        for trial in 0..30 {
            let m = 2 + trial % 9;
            let n_steps = 1 + trial % 3;
            let p: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0)).collect();
            let mut y = vec![0.0; m];
            y[rng.gen_range(0..m)] = 1.0;
            let k: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..0.95)).collect();
            let w = smoothing_matrix(&kappa(&k)).unwrap();
            let loss = |pp: &[f64]| -> f64 {
                let d: Vec<f64> = pp.iter().zip(&y).map(|(a, b)| (a - b).abs()).collect();
                oracle_apply(&w, &d, n_steps).iter().map(|x| x * x).sum()
            };
            let g = smoothed_loss_backward(&v(&p), &v(&y), &w, n_steps).unwrap();
            for j in 0..m {
                let mut up = p.clone();
                up[j] += h;
                let mut down = p.clone();
                down[j] -= h;
                let fd = (loss(&up) - loss(&down)) / (2.0 * h);
                let an = g.data()[j];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
                assert!(rel <= 1e-6, "m={m} j={j}: fd {fd} vs {an}");
            }
        }
    }

    #[test]
    fn idempotent_limit() {
        let d: Vec<f64> = (0..10).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let w = smoothing_matrix(&kappa(&[0.5; 10])).unwrap();
        let a = apply_smoothing(&w, &rv(&d), 64).unwrap();
        let b = apply_smoothing(&w, &rv(&d), 65).unwrap();
        let gap = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(gap <= 1e-9);
    }

    #[test]
    fn adaptive_lambda_values() {
        assert_eq!(adaptive_lambda(0.0, 2.0).unwrap(), 0.0);
        assert!((adaptive_lambda(1e6, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((adaptive_lambda(0.7, 0.7).unwrap() - 0.6321205588285577).abs() < 1e-12);
        assert!(matches!(adaptive_lambda(1.0, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn sample_helper_agrees_with_tensor_ops() {
        let p = [0.05, 0.6, 0.15, 0.2];
        let y = [0.0, 0.0, 1.0, 0.0];
        let c = cfg(SmoothingMode::GlobalLocal, 2.0);
        let out = smooth_sample(&p, &y, 0.7, &c);
        let d = residual(&v(&p), &v(&y)).unwrap();
        let k = diffusivity(&d, 0.7, &c).unwrap();
        let w = smoothing_matrix(&k).unwrap();
        assert_eq!(out.loss, smoothed_loss(&d, &w, 1).unwrap());
        assert_eq!(
            out.grad,
            smoothed_loss_backward(&v(&p), &v(&y), &w, 1).unwrap().into_data()
        );
        assert_eq!(out.mean_kappa, k.mean());
    }

    proptest::proptest! {
        #[test]
        fn smoothing_contracts_spread(
            d in proptest::collection::vec(0.0f64..5.0, 2..24),
            seed in 0u64..1000,
            n_steps in 1usize..4,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k: Vec<f64> = d.iter().map(|_| rng.gen_range(0.0..0.999)).collect();
            let w = smoothing_matrix(&kappa(&k)).unwrap();
            let u = apply_smoothing(&w, &rv(&d), n_steps).unwrap();
            let (lo, hi) = d.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
            for &x in u.data() {
                proptest::prop_assert!(x <= hi + 1e-12 && x >= lo - 1e-12);
            }
        }

        #[test]
        fn kappa_bounded_by_scale(
            d in proptest::collection::vec(0.0f64..1.0, 1..16),
            s in 0.0f64..=1.0,
            alpha in 0.0f64..8.0,
        ) {
            for mode in [SmoothingMode::Global, SmoothingMode::GlobalLocal] {
                let k = diffusivity(&rv(&d), s, &cfg(mode, alpha)).unwrap();
                for &x in k.values() {
                    proptest::prop_assert!(x >= 0.0 && x <= s && x < 1.0);
                }
            }
        }
    }
}
