use rand::seq::index::sample;

use super::{provenance_for, Coreset, SolverConfig};
use crate::error::Result;
use crate::seeding::{stream, tag};

/// Uniform sample of `k` units without replacement, each weighted `m/k`.
pub fn random_select(m: usize, cfg: &SolverConfig) -> Result<Coreset> {
    let k = cfg.budget.resolve(m)?;
    let mut rng = stream(cfg.seed, &[tag::SOLVER]);
    let mut indices = sample(&mut rng, m, k).into_vec();
    indices.sort_unstable();
    let w = m as f64 / k as f64;
    Coreset::new(indices, vec![w; k], provenance_for(cfg))
}
