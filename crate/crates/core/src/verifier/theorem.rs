use ndarray::Array1;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::probe::LinearProbe;
use crate::attacks::Norm;
use crate::error::{Error, Result};
use crate::features::GradientFeatures;
use crate::seeding::{derive, stream, tag};
use crate::solvers::{omp_select, Budget, Coreset, Method, Provenance, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    /// Convex, Lipschitz; constant step `Δ/(σ√T)`.
    One,
    /// Strongly convex; step `2/(nμ(1+t))`.
    Two,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoremConfig {
    pub n: usize,
    pub d: usize,
    pub epsilon: f64,
    pub norm: Norm,
    pub iterations: usize,
    pub fraction: f64,
    /// Regularizer for part two; part one ignores it.
    pub mu: f64,
    /// Selection stops once the residual falls below this fraction of the
    /// full gradient norm.
    pub relative_tolerance: f64,
    pub seed: u64,
}

impl Default for TheoremConfig {
    fn default() -> Self {
        TheoremConfig { n: 200, d: 5, epsilon: 0.05, norm: Norm::L2, iterations: 100, fraction: 0.5, mu: 0.1, relative_tolerance: 1e-9, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Status {
    #[serde(rename = "PASS")]
    Pass,
    #[serde(rename = "FAIL")]
    Fail,
    #[serde(rename = "inconclusive")]
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub part: Part,
    pub status: Status,
    pub seed: u64,
    pub n: usize,
    pub fraction: f64,
    pub sigma: f64,
    pub mu: f64,
    pub delta: f64,
    pub iterations: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub gamma_sum: f64,
    pub mean_coreset_size: f64,
    pub reference_grad_norm: f64,
    pub note: Option<String>,
}

const SLACK_TOL: f64 = -1e-9;
const REFERENCE_TOL: f64 = 1e-8;

struct Trajectory {
    thetas: Vec<Vec<f64>>,
    gammas: Vec<f64>,
    sizes: Vec<usize>,
}

/// Per-iteration coreset for the probe at `theta`, weights rescaled to sum
/// to `mass`. Returns the coreset and the sample gradient features.
fn iteration_coreset(probe: &LinearProbe, theta: &[f64], cfg: &TheoremConfig, t: usize, mass: f64) -> Result<(Coreset, GradientFeatures)> {
    let features = GradientFeatures::from_samples(probe.sample_grads(theta));
    let total = features.total();
    let solver = SolverConfig {
        method: Method::GradMatchOmp,
        budget: Budget::Fraction(cfg.fraction),
        omp_lambda: 0.0,
        tolerance: cfg.relative_tolerance * total.dot(&total).sqrt(),
        seed: derive(cfg.seed, &[tag::SOLVER, t as u64]),
    };
    let mut c = if cfg.fraction >= 1.0 {
        Coreset::full(probe.n(), Provenance { solver: "full".into(), config_hash: 0, epoch: t })
    } else {
        omp_select(&features, &solver)?
    };
    let sum = c.weight_sum();
    if sum > 0.0 {
        c.weights.iter_mut().for_each(|w| *w *= mass / sum);
    } else {
        let each = mass / c.len() as f64;
        c.weights.iter_mut().for_each(|w| *w = each);
    }
    Ok((c, features))
}

/// Gradient descent with a fresh coreset every step. `scale` converts the
/// summed feature rows into the full gradient of the objective being bounded.
fn run(probe: &LinearProbe, theta0: &[f64], cfg: &TheoremConfig, mass: f64, scale: f64, step: &dyn Fn(usize) -> f64) -> Result<Trajectory> {
    let mut theta = theta0.to_vec();
    let mut traj = Trajectory { thetas: Vec::new(), gammas: Vec::new(), sizes: Vec::new() };
    for t in 0..cfg.iterations {
        let (c, features) = iteration_coreset(probe, &theta, cfg, t, mass)?;
        let mut g = Array1::<f64>::zeros(probe.dim());
        for (&j, &w) in c.indices.iter().zip(&c.weights) {
            g.scaled_add(w, &features.rows.row(j));
        }
        let diff = features.total() * scale - &g;
        traj.gammas.push(diff.dot(&diff).sqrt());
        traj.sizes.push(c.len());
        traj.thetas.push(theta.clone());
        let a = step(t);
        for (p, gv) in theta.iter_mut().zip(g.iter()) {
            *p -= a * gv;
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("probe iterate diverged at step {t}")));
        }
    }
    Ok(traj)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Runs coreset gradient descent on a convex robust probe and compares the
/// best suboptimality with the bound.
///
/// Part one bounds the mean risk with weights summing to one. Part two
/// bounds the summed risk (strong convexity `nμ`) with weights summing to `n`;
/// `σ` is then the bound on the summed-scale coreset gradient.
pub fn theorem1_check(part: Part, probe: &LinearProbe, cfg: &TheoremConfig) -> Result<BoundReport> {
    if cfg.iterations < 2 {
        return Err(Error::InvalidArgument("the bound needs at least two iterations".into()));
    }
    if !(cfg.fraction > 0.0 && cfg.fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("fraction {} outside (0, 1]", cfg.fraction)));
    }
    let n = probe.n() as f64;
    let t_total = cfg.iterations as f64;
    let mut rng = stream(cfg.seed, &[tag::PROBE, 1]);
    let theta0: Vec<f64> = (0..probe.dim()).map(|_| rng.sample(StandardNormal)).collect();

    let (theta_star, ref_norm) = probe.minimize(&theta0, 10 * cfg.iterations, REFERENCE_TOL * 1e-2)?;
    let l_star = probe.mean_loss(&theta_star);
    let mut report = BoundReport {
        part,
        status: Status::Inconclusive,
        seed: cfg.seed,
        n: probe.n(),
        fraction: cfg.fraction,
        sigma: 0.0,
        mu: probe.mu,
        delta: 0.0,
        iterations: cfg.iterations,
        lhs: f64::NAN,
        rhs: f64::NAN,
        slack: f64::NAN,
        gamma_sum: 0.0,
        mean_coreset_size: 0.0,
        reference_grad_norm: ref_norm,
        note: None,
    };
    if ref_norm >= REFERENCE_TOL {
        report.note = Some(format!("reference gradient norm {ref_norm:e} did not reach {REFERENCE_TOL:e}"));
        return Ok(report);
    }

    let sigma_x = probe.lipschitz_bound();
    let (traj, delta, sigma, lhs, rhs) = match part {
        Part::One => {
            if probe.mu != 0.0 {
                return Err(Error::InvalidArgument("part one expects an unregularized probe".into()));
            }
            let sigma = sigma_x;
            let mut delta = dist(&theta0, &theta_star);
            let mut accepted = None;
            for _ in 0..50 {
                let alpha = delta / (sigma * t_total.sqrt());
                let traj = run(probe, &theta0, cfg, 1.0, 1.0 / n, &|_| alpha)?;
                let reach = traj.thetas.iter().map(|th| dist(th, &theta_star)).fold(0.0, f64::max);
                if reach <= delta {
                    accepted = Some(traj);
                    break;
                }
                delta = reach;
            }
            let Some(traj) = accepted else {
                report.note = Some("trajectory radius did not settle".into());
                return Ok(report);
            };
            let lhs = traj.thetas.iter().map(|th| probe.mean_loss(th)).fold(f64::INFINITY, f64::min) - l_star;
            let gsum: f64 = traj.gammas.iter().sum();
            let rhs = delta * sigma / t_total.sqrt() + delta / t_total * gsum;
            (traj, delta, sigma, lhs, rhs)
        }
        Part::Two => {
            if !(probe.mu > 0.0) {
                return Err(Error::InvalidArgument("part two needs mu > 0".into()));
            }
            let mu = probe.mu;
            let traj = run(probe, &theta0, cfg, n, 1.0, &|t| 2.0 / (n * mu * (1.0 + t as f64)))?;
            let delta = traj.thetas.iter().map(|th| dist(th, &theta_star)).fold(0.0, f64::max);
            let max_theta = traj.thetas.iter().map(|th| th.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max);
            let sigma = n * (sigma_x + mu * max_theta);
            let lhs = n * (traj.thetas.iter().map(|th| probe.mean_loss(th)).fold(f64::INFINITY, f64::min) - l_star);
            let weighted: f64 = traj.gammas.iter().enumerate().map(|(t, g)| t as f64 * g).sum();
            let rhs = 2.0 * sigma * sigma / (n * mu * (t_total - 1.0)) + 2.0 * delta / (t_total * (t_total - 1.0)) * weighted;
            (traj, delta, sigma, lhs, rhs)
        }
    };
    report.sigma = sigma;
    report.delta = delta;
    report.lhs = lhs;
    report.rhs = rhs;
    report.slack = rhs - lhs;
    report.gamma_sum = traj.gammas.iter().sum();
    report.mean_coreset_size = traj.sizes.iter().sum::<usize>() as f64 / traj.sizes.len() as f64;
    report.status = if report.slack >= SLACK_TOL { Status::Pass } else { Status::Fail };
    Ok(report)
}
