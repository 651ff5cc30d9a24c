//! Inner-maximization solvers: projected gradient ascent under ℓ∞/ℓ2 balls
//! (FGSM is the one-step case), the TRADES inner problem, and the closed-form
//! adversary of a binary linear logistic model.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, Activation, Layer, ModelParams, Target};
use crate::seeding::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    #[serde(rename = "linf")]
    Linf,
    #[serde(rename = "l2")]
    L2,
}

impl Norm {
    pub fn name(self) -> &'static str {
        match self {
            Norm::Linf => "linf",
            Norm::L2 => "l2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linf" => Some(Norm::Linf),
            "l2" => Some(Norm::L2),
            _ => None,
        }
    }

    /// Norm of a perturbation row.
    pub fn measure(self, row: ArrayView1<'_, f64>) -> f64 {
        match self {
            Norm::Linf => row.iter().fold(0.0f64, |m, v| m.max(v.abs())),
            Norm::L2 => row.iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub norm: Norm,
    pub epsilon: f64,
    pub step_size: f64,
    pub iterations: usize,
    pub restarts: usize,
    pub random_init: bool,
    pub seed: u64,
    /// Optional input-domain box applied after every step.
    pub clip: Option<(f64, f64)>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self { norm: Norm::Linf, epsilon: 0.1, step_size: 0.025, iterations: 10, restarts: 1, random_init: true, seed: 0, clip: None }
    }
}

impl AttackConfig {
    /// One unrandomized step of size `epsilon` under ℓ∞.
    pub fn fgsm(epsilon: f64) -> Self {
        Self { norm: Norm::Linf, epsilon, step_size: epsilon, iterations: 1, restarts: 1, random_init: false, seed: 0, clip: None }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidArgument(format!("attack epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::InvalidArgument(format!("attack step size must be > 0, got {}", self.step_size)));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidArgument("attack restarts must be >= 1".into()));
        }
        if let Some((lo, hi)) = self.clip {
            if !(lo < hi) {
                return Err(Error::InvalidArgument(format!("bad clip range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// Adversarial inputs and the loss each one achieves.
#[derive(Debug, Clone)]
pub struct AdvBatch {
    pub x_adv: Array2<f64>,
    pub losses: Vec<f64>,
    pub iterations: usize,
}

/// Projects each row of `delta` onto the `epsilon` ball.
pub fn project(delta: &Array2<f64>, norm: Norm, epsilon: f64) -> Array2<f64> {
    let mut out = delta.clone();
    project_in_place(&mut out, norm, epsilon);
    out
}

fn project_in_place(delta: &mut Array2<f64>, norm: Norm, epsilon: f64) {
    match norm {
        Norm::Linf => delta.mapv_inplace(|v| v.clamp(-epsilon, epsilon)),
        Norm::L2 => {
            for mut row in delta.outer_iter_mut() {
                let n = Norm::L2.measure(row.view());
                if n > epsilon {
                    let scale = epsilon / n;
                    row.mapv_inplace(|v| v * scale);
                }
            }
        }
    }
}

fn random_start(rows: usize, cols: usize, cfg: &AttackConfig, restart: usize) -> Array2<f64> {
    let mut delta = Array2::zeros((rows, cols));
    if !cfg.random_init || cfg.epsilon == 0.0 {
        return delta;
    }
    for (i, mut row) in delta.outer_iter_mut().enumerate() {
        let mut rng = seeding::stream(cfg.seed, &[tag::ATTACK_ROW, i as u64, restart as u64]);
        match cfg.norm {
            Norm::Linf => row.mapv_inplace(|_| rng.random_range(-cfg.epsilon..=cfg.epsilon)),
            Norm::L2 => {
                row.mapv_inplace(|_| rng.sample::<f64, _>(StandardNormal));
                let n = Norm::L2.measure(row.view());
                let radius = cfg.epsilon * rng.random::<f64>().powf(1.0 / cols as f64);
                if n > 0.0 {
                    row.mapv_inplace(|v| v * radius / n);
                }
            }
        }
    }
    delta
}

fn ascent_direction(grad: &Array2<f64>, norm: Norm) -> Array2<f64> {
    match norm {
        Norm::Linf => grad.mapv(|g| if g > 0.0 { 1.0 } else if g < 0.0 { -1.0 } else { 0.0 }),
        Norm::L2 => {
            let mut dir = grad.clone();
            for mut row in dir.outer_iter_mut() {
                let n = Norm::L2.measure(row.view());
                if n > 0.0 {
                    row.mapv_inplace(|v| v / n);
                }
            }
            dir
        }
    }
}

/// Projected gradient ascent on the per-sample cross-entropy.
///
/// The returned point for each sample is the highest-loss iterate seen over
/// all restarts, with the clean input as the first candidate.
pub fn pgd_attack(params: &ModelParams, x: ArrayView2<'_, f64>, target: Target<'_>, cfg: &AttackConfig) -> Result<AdvBatch> {
    cfg.validate()?;
    let (rows, cols) = x.dim();
    if target.rows() != rows {
        return Err(Error::Dimension(format!("{} targets for {rows} inputs", target.rows())));
    }
    let (_, clean) = model::forward_loss(params, x, target)?;
    let mut best_x = x.to_owned();
    let mut best_loss = clean.sample_losses(&target);
    if cfg.epsilon == 0.0 {
        return Ok(AdvBatch { x_adv: best_x, losses: best_loss, iterations: 0 });
    }

    for restart in 0..cfg.restarts {
        let mut delta = random_start(rows, cols, cfg, restart);
        project_in_place(&mut delta, cfg.norm, cfg.epsilon);
        let mut xa = &x + &delta;
        clip(&mut xa, cfg.clip);
        for it in 0..=cfg.iterations {
            let cache = model::forward(params, xa.view())?;
            let losses = cache.sample_losses(&target);
            for (i, &l) in losses.iter().enumerate() {
                if l > best_loss[i] {
                    best_loss[i] = l;
                    best_x.row_mut(i).assign(&xa.row(i));
                }
            }
            if it == cfg.iterations {
                break;
            }
            let grad = model::input_grad(params, &cache, &cache.logit_residual(&target))?;
            let dir = ascent_direction(&grad, cfg.norm);
            let mut step = &xa + &(dir * cfg.step_size) - &x;
            project_in_place(&mut step, cfg.norm, cfg.epsilon);
            xa = &x + &step;
            clip(&mut xa, cfg.clip);
        }
    }
    if best_loss.iter().any(|l| !l.is_finite()) {
        return Err(Error::Numeric("attack produced a non-finite loss".into()));
    }
    Ok(AdvBatch { x_adv: best_x, losses: best_loss, iterations: cfg.iterations })
}

fn clip(x: &mut Array2<f64>, range: Option<(f64, f64)>) {
    if let Some((lo, hi)) = range {
        x.mapv_inplace(|v| v.clamp(lo, hi));
    }
}

/// Maximizes `CE(f(x̃), softmax(f(x)))` over the ball, with the clean
/// prediction frozen before the loop. The `1/λ` factor of the TRADES term does
/// not move the maximizer and is left to the caller.
pub fn trades_inner_max(params: &ModelParams, x: ArrayView2<'_, f64>, cfg: &AttackConfig) -> Result<AdvBatch> {
    let clean = model::forward(params, x)?;
    pgd_attack(params, x, Target::Soft(clean.probs.view()), cfg)
}

/// Exact maximizer of the binary logistic loss `log(1 + exp(-y(wᵀx + b)))`
/// over the ball around `x`, for a label `y ∈ {-1, +1}`.
pub fn closed_form_linear_adversary(w: ArrayView1<'_, f64>, _b: f64, x: ArrayView1<'_, f64>, y: f64, epsilon: f64, norm: Norm) -> Result<Array1<f64>> {
    if w.len() != x.len() {
        return Err(Error::Dimension(format!("w has {} entries, x has {}", w.len(), x.len())));
    }
    if y != 1.0 && y != -1.0 {
        return Err(Error::InvalidArgument(format!("label must be +1 or -1, got {y}")));
    }
    if epsilon == 0.0 {
        return Ok(x.to_owned());
    }
    match norm {
        Norm::Linf => {
            if let Some(j) = w.iter().position(|&v| v == 0.0) {
                return Err(Error::Degenerate(format!("w[{j}] = 0, the ℓ∞ maximizer is not unique")));
            }
            Ok(Zip::from(&x).and(&w).map_collect(|&xi, &wi| xi - epsilon * y * wi.signum()))
        }
        Norm::L2 => {
            let n = Norm::L2.measure(w);
            if n == 0.0 {
                return Err(Error::Degenerate("w = 0, every point of the ball is a maximizer".into()));
            }
            Ok(Zip::from(&x).and(&w).map_collect(|&xi, &wi| xi - epsilon * y * wi / n))
        }
    }
}

/// A two-class softmax model whose logit difference is `wᵀx + b`; class 1
/// plays the role of label `+1`.
pub fn binary_logistic_params(w: ArrayView1<'_, f64>, b: f64) -> ModelParams {
    let d = w.len();
    let mut weights = Array2::zeros((d, 2));
    weights.column_mut(1).assign(&w);
    let mut bias = Array1::zeros(2);
    bias[1] = b;
    ModelParams::from_layers(vec![Layer { weights, bias }], Activation::Identity).expect("valid single layer")
}

/// `log(1 + exp(-y(wᵀx + b)))`, computed without overflow.
pub fn logistic_loss(w: ArrayView1<'_, f64>, b: f64, x: ArrayView1<'_, f64>, y: f64) -> f64 {
    softplus(-y * (w.dot(&x) + b))
}

pub fn softplus(m: f64) -> f64 {
    if m > 0.0 {
        m + (-m).exp().ln_1p()
    } else {
        m.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn linf_projection_clamps() {
        let d = array![[0.3, -0.05]];
        assert_eq!(project(&d, Norm::Linf, 0.1), array![[0.1, -0.05]]);
    }

    #[test]
    fn l2_projection_rescales_radially() {
        let d = array![[0.12, 0.16]];
        let p = project(&d, Norm::L2, 0.1);
        assert!((Norm::L2.measure(p.row(0)) - 0.1).abs() < 1e-15);
        assert!((p[[0, 0]] / p[[0, 1]] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn projection_is_identity_inside_ball() {
        let d = array![[0.01, -0.02], [0.0, 0.0]];
        assert_eq!(project(&d, Norm::L2, 0.1), d);
        assert_eq!(project(&d, Norm::Linf, 0.1), d);
    }

    #[test]
    fn fgsm_closed_form() {
        // loss softplus(x0 - 2 x1): input-gradient signs [+, -]
        let params = binary_logistic_params(array![-1.0, 2.0].view(), 0.0);
        let x = array![[0.0, 0.0]];
        let adv = pgd_attack(&params, x.view(), Target::Hard(&[1]), &AttackConfig::fgsm(0.1)).unwrap();
        assert_eq!(adv.x_adv, array![[0.1, -0.1]]);
    }

    #[test]
    fn zero_epsilon_returns_clean_point() {
        let params = ModelParams::init(&[3, 4, 2], Activation::Relu, 1).unwrap();
        let x = array![[0.5, -1.0, 2.0]];
        let cfg = AttackConfig { epsilon: 0.0, ..AttackConfig::default() };
        let adv = pgd_attack(&params, x.view(), Target::Hard(&[0]), &cfg).unwrap();
        assert_eq!(adv.x_adv, x);
    }

    #[test]
    fn zero_gradient_keeps_clean_point() {
        let params = ModelParams::zeros(&[2, 3], Activation::Identity).unwrap();
        let x = array![[0.5, -1.0]];
        let adv = trades_inner_max(&params, x.view(), &AttackConfig::default()).unwrap();
        assert_eq!(adv.x_adv, x);
        assert!((adv.losses[0] - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn closed_form_examples() {
        let a = closed_form_linear_adversary(array![1.0, -0.5].view(), 0.0, array![0.0, 0.0].view(), 1.0, 0.1, Norm::Linf).unwrap();
        // every coordinate moves the full radius against y·sign(w)
        assert_eq!(a, array![-0.1, 0.1]);
        let b = closed_form_linear_adversary(array![3.0, 4.0].view(), 0.0, array![0.0, 0.0].view(), -1.0, 1.0, Norm::L2).unwrap();
        assert!((b[0] - 0.6).abs() < 1e-15 && (b[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn closed_form_rejects_zero_coordinate() {
        let r = closed_form_linear_adversary(array![1.0, 0.0].view(), 0.0, array![0.0, 0.0].view(), 1.0, 0.1, Norm::Linf);
        assert!(matches!(r, Err(Error::Degenerate(_))));
    }

    #[test]
    fn closed_form_beats_grid() {
        let w = array![0.7, -1.3];
        let x = array![0.2, 0.4];
        let (b, y, eps) = (0.3, -1.0, 0.25);
        for norm in [Norm::Linf, Norm::L2] {
            let adv = closed_form_linear_adversary(w.view(), b, x.view(), y, eps, norm).unwrap();
            let best = logistic_loss(w.view(), b, adv.view(), y);
            for i in 0..100 {
                for j in 0..100 {
                    let d = array![eps * (2.0 * i as f64 / 99.0 - 1.0), eps * (2.0 * j as f64 / 99.0 - 1.0)];
                    if norm.measure(d.view()) > eps {
                        continue;
                    }
                    assert!(logistic_loss(w.view(), b, (&x + &d).view(), y) <= best + 1e-12);
                }
            }
        }
    }

    #[test]
    fn restarts_never_hurt() {
        let params = ModelParams::init(&[3, 8, 3], Activation::Relu, 4).unwrap();
        let x = array![[0.5, -1.0, 2.0], [0.1, 0.2, 0.3]];
        let y = [0, 2];
        let one = AttackConfig { epsilon: 0.3, step_size: 0.1, iterations: 3, restarts: 1, seed: 9, ..AttackConfig::default() };
        let many = AttackConfig { restarts: 4, ..one.clone() };
        let a = pgd_attack(&params, x.view(), Target::Hard(&y), &one).unwrap();
        let b = pgd_attack(&params, x.view(), Target::Hard(&y), &many).unwrap();
        for (l1, l4) in a.losses.iter().zip(&b.losses) {
            assert!(l4 >= l1);
        }
    }
}
