use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use super::{provenance_for, Coreset, SolverConfig};
use crate::error::{Error, Result};
use crate::features::GradientFeatures;

/// Pairwise Euclidean distances between feature rows.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    d: Array2<f64>,
}

impl DistanceMatrix {
    pub fn from_rows(rows: ArrayView2<'_, f64>) -> Self {
        let m = rows.nrows();
        let flat: Vec<f64> = (0..m)
            .into_par_iter()
            .flat_map_iter(|i| {
                let ri = rows.row(i);
                (0..m).map(move |j| {
                    let rj = rows.row(j);
                    ri.iter().zip(rj.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
                })
            })
            .collect();
        DistanceMatrix { d: Array2::from_shape_vec((m, m), flat).expect("m*m entries") }
    }

    pub fn len(&self) -> usize {
        self.d.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.d.nrows() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[[i, j]]
    }

    pub fn max(&self) -> f64 {
        self.d.iter().fold(0.0, |a, &b| a.max(b))
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.d.view()
    }

    /// `L(S) = Σ_i min_{j∈S} d_ij`, with the phantom element at `D_max`
    /// always present.
    pub fn cover_cost(&self, selected: &[usize]) -> f64 {
        let dmax = self.max();
        (0..self.len()).map(|i| selected.iter().map(|&j| self.d[[i, j]]).fold(dmax, f64::min)).sum()
    }
}

/// Greedy history: `cover[t]` is `L(S)` after `t` picks (entry 0 is the
/// phantom-only cost) and `gains[t]` the marginal gain of pick `t`.
#[derive(Debug, Clone, Default)]
pub struct CraigTrace {
    pub cover: Vec<f64>,
    pub gains: Vec<f64>,
}

pub fn craig_select(features: &GradientFeatures, cfg: &SolverConfig) -> Result<Coreset> {
    craig_select_traced(features, cfg).map(|(c, _)| c)
}

pub fn craig_select_traced(features: &GradientFeatures, cfg: &SolverConfig) -> Result<(Coreset, CraigTrace)> {
    let m = features.units();
    if m == 0 {
        return Err(Error::EmptyInput("no feature rows to select from".into()));
    }
    let k = cfg.budget.resolve(m)?;
    let dist = DistanceMatrix::from_rows(features.rows.view());
    let d = dist.view();
    let dmax = dist.max();

    let mut cur = vec![dmax; m];
    let l0 = dmax * m as f64;
    let mut chosen = vec![false; m];
    let mut selected = Vec::with_capacity(k);
    let mut trace = CraigTrace { cover: vec![l0], gains: Vec::new() };

    loop {
        let gains: Vec<f64> = (0..m)
            .into_par_iter()
            .map(|e| {
                if chosen[e] {
                    f64::NEG_INFINITY
                } else {
                    (0..m).map(|i| (cur[i] - d[[i, e]]).max(0.0)).sum()
                }
            })
            .collect();
        let mut pick = None;
        let mut best = f64::NEG_INFINITY;
        for (e, &g) in gains.iter().enumerate() {
            if !chosen[e] && g > best {
                best = g;
                pick = Some(e);
            }
        }
        let Some(e) = pick else { break };
        chosen[e] = true;
        selected.push(e);
        for i in 0..m {
            cur[i] = cur[i].min(d[[i, e]]);
        }
        let cover: f64 = cur.iter().sum();
        trace.cover.push(cover);
        trace.gains.push(best);
        if selected.len() == k || cover <= cfg.tolerance {
            break;
        }
    }

    let mut weights = vec![0.0; selected.len()];
    for i in 0..m {
        let slot = if chosen[i] {
            selected.iter().position(|&s| s == i).expect("selected")
        } else {
            let mut best = 0;
            for (pos, &s) in selected.iter().enumerate() {
                let (a, b) = (d[[i, s]], d[[i, selected[best]]]);
                if a < b || (a == b && s < selected[best]) {
                    best = pos;
                }
            }
            best
        };
        weights[slot] += 1.0;
    }
    Ok((Coreset::new(selected, weights, provenance_for(cfg))?, trace))
}
