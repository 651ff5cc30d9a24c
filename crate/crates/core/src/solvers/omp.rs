use ndarray::{Array1, ArrayView1, ArrayView2, Axis};

use super::{nonneg_ridge_fit, provenance_for, Coreset, SolverConfig};
use crate::error::{Error, Result};
use crate::features::GradientFeatures;

/// Per-iteration residual norms and objective values of one OMP run.
#[derive(Debug, Clone, Default)]
pub struct OmpTrace {
    pub residual_norms: Vec<f64>,
    pub objectives: Vec<f64>,
}

/// `‖b − Σ γ_j g_j‖ + λ‖γ‖²` for a weighting over a subset of rows.
pub fn residual_objective(rows: ArrayView2<'_, f64>, target: ArrayView1<'_, f64>, indices: &[usize], weights: &[f64], lambda: f64) -> f64 {
    let mut r = target.to_owned();
    for (&j, &w) in indices.iter().zip(weights) {
        r.scaled_add(-w, &rows.row(j));
    }
    r.dot(&r).sqrt() + lambda * weights.iter().map(|w| w * w).sum::<f64>()
}

pub fn omp_select(features: &GradientFeatures, cfg: &SolverConfig) -> Result<Coreset> {
    omp_select_traced(features, cfg).map(|(c, _)| c)
}

pub fn omp_select_traced(features: &GradientFeatures, cfg: &SolverConfig) -> Result<(Coreset, OmpTrace)> {
    let m = features.units();
    if m == 0 {
        return Err(Error::EmptyInput("no feature rows to select from".into()));
    }
    let k = cfg.budget.resolve(m)?;
    let lambda = cfg.omp_lambda;
    let rows = features.rows.view();
    let target = features.total();

    let mut gamma = Array1::<f64>::zeros(m);
    let mut chosen = vec![false; m];
    let mut support: Vec<usize> = Vec::with_capacity(k);
    let mut residual = target.clone();
    let mut trace = OmpTrace::default();

    loop {
        // Negative half-gradient of the regularized objective with respect to γ.
        let corr = rows.dot(&residual) - &gamma * lambda;
        let mut pick = None;
        let mut best = f64::NEG_INFINITY;
        for j in (0..m).filter(|&j| !chosen[j]) {
            if corr[j].abs() > best {
                best = corr[j].abs();
                pick = Some(j);
            }
        }
        let Some(j) = pick else { break };
        chosen[j] = true;
        support.push(j);

        let a = rows.select(Axis(0), &support).reversed_axes();
        let fit = nonneg_ridge_fit(a.view(), target.view(), lambda)?;
        for (&i, &w) in support.iter().zip(fit.iter()) {
            gamma[i] = w;
        }
        residual = &target - &a.dot(&fit);
        let rnorm = residual.dot(&residual).sqrt();
        let objective = rnorm + lambda * fit.dot(&fit);
        trace.residual_norms.push(rnorm);
        trace.objectives.push(objective);
        if support.len() == k || objective <= cfg.tolerance {
            break;
        }
    }

    let weights = support.iter().map(|&i| gamma[i]).collect();
    Ok((Coreset::new(support, weights, provenance_for(cfg))?, trace))
}
