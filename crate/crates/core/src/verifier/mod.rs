//! Numerical checks of the convergence theory on convex probes.

mod probe;
mod theorem;

use ndarray::{Array1, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::attacks::{closed_form_linear_adversary, Norm};
use crate::error::{Error, Result};
use crate::features::GradientFeatures;
use crate::model::central_difference;
use crate::seeding::{stream, tag};
use crate::solvers::Coreset;

pub use probe::LinearProbe;
pub use theorem::{theorem1_check, BoundReport, Part, Status, TheoremConfig};

/// One selection event as seen by the verifier.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaRecord {
    pub epoch: usize,
    pub gamma: f64,
    pub gamma_before: f64,
    pub coreset_size: usize,
    pub solver: String,
}

/// `‖Σ_i row_i − Σ_{j∈S} γ_j row_j‖`.
pub fn gamma_error(features: &GradientFeatures, coreset: &Coreset) -> Result<f64> {
    let m = features.units();
    let mut r = features.total();
    for (&j, &w) in coreset.indices.iter().zip(&coreset.weights) {
        if j >= m {
            return Err(Error::Dimension(format!("coreset index {j} outside {m} feature rows")));
        }
        r.scaled_add(-w, &features.rows.row(j));
    }
    Ok(r.dot(&r).sqrt())
}

fn logistic_grad(w: ArrayView1<'_, f64>, b: f64, x: ArrayView1<'_, f64>, y: f64) -> Array1<f64> {
    let m = -y * (w.dot(&x) + b);
    let s = if m >= 0.0 { 1.0 / (1.0 + (-m).exp()) } else { m.exp() / (1.0 + m.exp()) };
    let mut g = Array1::zeros(w.len() + 1);
    for j in 0..w.len() {
        g[j] = -y * s * x[j];
    }
    g[w.len()] = -y * s;
    g
}

/// Largest deviation between the finite-difference gradient of the worst-case
/// logistic loss and the loss gradient at the fixed maximizer, divided by the
/// largest analytic gradient entry.
pub fn danskin_check(w: ArrayView1<'_, f64>, b: f64, x: ArrayView1<'_, f64>, y: f64, epsilon: f64, norm: Norm, fd_step: f64) -> Result<f64> {
    let d = w.len();
    let x_star = closed_form_linear_adversary(w, b, x, y, epsilon, norm)?;
    let analytic = logistic_grad(w, b, x_star.view(), y);
    let mut theta: Vec<f64> = w.to_vec();
    theta.push(b);
    let fd = central_difference(
        |t| {
            let wt = ArrayView1::from(&t[..d]);
            let xa = closed_form_linear_adversary(wt, t[d], x, y, epsilon, norm)?;
            Ok(crate::attacks::logistic_loss(wt, t[d], xa.view(), y))
        },
        &theta,
        fd_step,
    )?;
    let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    Ok(fd.iter().zip(analytic.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DanskinReport {
    pub instances: usize,
    pub fd_step: f64,
    pub max_error: f64,
    /// Largest error of the same instances at ten times the step.
    pub max_error_coarse: f64,
}

/// Seeded random linear instances, alternating norms. Weight vectors with a
/// near-zero coordinate are redrawn so the ℓ∞ maximizer stays unique.
pub fn danskin_suite(instances: usize, d: usize, seed: u64, fd_step: f64) -> Result<DanskinReport> {
    let mut rng = stream(seed, &[tag::PROBE, 3]);
    let mut report = DanskinReport { instances, fd_step, max_error: 0.0, max_error_coarse: 0.0 };
    for i in 0..instances {
        let norm = if i % 2 == 0 { Norm::Linf } else { Norm::L2 };
        let w = loop {
            let w: Array1<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            if w.iter().all(|v| v.abs() > 0.05) {
                break w;
            }
        };
        let b: f64 = rng.sample(StandardNormal);
        let x: Array1<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let y = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let eps = rng.random_range(0.05..0.5);
        report.max_error = report.max_error.max(danskin_check(w.view(), b, x.view(), y, eps, norm, fd_step)?);
        report.max_error_coarse = report.max_error_coarse.max(danskin_check(w.view(), b, x.view(), y, eps, norm, 10.0 * fd_step)?);
    }
    Ok(report)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LemmaReport {
    pub pairs: usize,
    pub lipschitz_violations: usize,
    pub convexity_violations: usize,
    /// Largest `|φ(θ₁) − φ(θ₂)| / (σ̂‖θ₁ − θ₂‖)` seen.
    pub max_lipschitz_ratio: f64,
    /// Smallest slack of the strong-convexity inequality seen.
    pub min_convexity_slack: f64,
}

impl LemmaReport {
    pub fn passed(&self) -> bool {
        self.lipschitz_violations == 0 && self.convexity_violations == 0
    }
}

const LEMMA_SLACK: f64 = 1e-9;

/// Samples parameter pairs on random single-point robust logistic losses and
/// counts violations of the Lipschitz bound and of the strong-convexity
/// inequality with regularizer `mu`.
pub fn lemma_probes(seed_count: u64, pairs_per_seed: usize, d: usize, mu: f64) -> LemmaReport {
    let mut report = LemmaReport { min_convexity_slack: f64::INFINITY, ..Default::default() };
    for seed in 0..seed_count {
        let mut rng = stream(seed, &[tag::PROBE, 2]);
        for _ in 0..pairs_per_seed {
            let norm = if rng.random::<bool>() { Norm::L2 } else { Norm::Linf };
            let epsilon = rng.random_range(0.0..0.5);
            let mut probe = LinearProbe::synth(1, d, epsilon, norm, 0.0, rng.random());
            let t1: Vec<f64> = (0..=d).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
            let t2: Vec<f64> = (0..=d).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
            let gap = t1.iter().zip(&t2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();

            let sigma = probe.lipschitz_bound();
            let diff = (probe.sample_loss(0, &t1) - probe.sample_loss(0, &t2)).abs();
            if diff > sigma * gap + LEMMA_SLACK {
                report.lipschitz_violations += 1;
            }
            if gap > 0.0 {
                report.max_lipschitz_ratio = report.max_lipschitz_ratio.max(diff / (sigma * gap));
            }

            probe.mu = mu;
            let g2 = probe.sample_grad(0, &t2);
            let inner: f64 = g2.iter().zip(t2.iter().zip(&t1)).map(|(g, (a, b))| g * (a - b)).sum();
            let slack = inner - (probe.sample_loss(0, &t2) - probe.sample_loss(0, &t1) + 0.5 * mu * gap * gap);
            if slack < -LEMMA_SLACK {
                report.convexity_violations += 1;
            }
            report.min_convexity_slack = report.min_convexity_slack.min(slack);
            report.pairs += 1;
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::Provenance;
    use ndarray::array;

    fn prov() -> Provenance {
        Provenance { solver: "test".into(), config_hash: 0, epoch: 0 }
    }

    fn rows() -> GradientFeatures {
        GradientFeatures::from_samples(array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    }

    #[test]
    fn gamma_examples() {
        let f = rows();
        assert!(gamma_error(&f, &Coreset::full(3, prov())).unwrap() < 1e-10);
        assert_eq!(gamma_error(&f, &Coreset::new(vec![2], vec![2.0], prov()).unwrap()).unwrap(), 0.0);
        assert_eq!(gamma_error(&f, &Coreset::new(vec![0], vec![2.0], prov()).unwrap()).unwrap(), 2.0);
        assert!(gamma_error(&f, &Coreset::new(vec![5], vec![1.0], prov()).unwrap()).is_err());
    }

    #[test]
    fn danskin_examples() {
        let x = array![0.0, 0.0];
        let e = danskin_check(array![1.0, -0.5].view(), 0.0, x.view(), 1.0, 0.1, Norm::Linf, 1e-5).unwrap();
        assert!(e < 1e-4, "{e}");
        let e = danskin_check(array![3.0, 4.0].view(), 0.2, array![0.5, -1.0].view(), -1.0, 0.1, Norm::L2, 1e-5).unwrap();
        assert!(e < 1e-4, "{e}");
        let e = danskin_check(array![1.0, -0.5].view(), 0.3, array![0.2, 0.1].view(), 1.0, 0.0, Norm::Linf, 1e-5).unwrap();
        assert!(e < 1e-10, "{e}");
    }

    #[test]
    fn danskin_rejects_degenerate_w() {
        let x = array![0.0, 0.0];
        assert!(matches!(danskin_check(array![0.0, 1.0].view(), 0.0, x.view(), 1.0, 0.1, Norm::Linf, 1e-5), Err(Error::Degenerate(_))));
    }

    #[test]
    fn danskin_suite_is_accurate() {
        let r = danskin_suite(20, 4, 1, 1e-5).unwrap();
        assert!(r.max_error < 1e-4, "{r:?}");
        assert!(r.max_error < r.max_error_coarse, "{r:?}");
    }

    #[test]
    fn lemma_probes_hold() {
        let r = lemma_probes(2, 500, 4, 0.1);
        assert!(r.passed(), "{r:?}");
        let r = lemma_probes(1, 500, 4, 0.0);
        assert!(r.passed(), "{r:?}");
    }
}
