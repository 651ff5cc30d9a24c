//! Per-sample adversarial gradient features used for coreset selection.
//!
//! Each feature row is the gradient of one unit's training objective w.r.t.
//! the final linear layer, evaluated at adversarial inputs for the robust
//! objectives. Batch-wise selection sums rows over shuffled chunks.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{self, AttackConfig};
use crate::error::{Error, Result};
use crate::model::{self, Dataset, ModelParams, Target};
use crate::seeding::{self, tag};

const MAGIC: &[u8; 4] = b"ACSF";
const VERSION: u32 = 1;
const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitKind {
    Sample,
    Batch,
}

/// One gradient row per selection unit.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientFeatures {
    pub rows: Array2<f64>,
    pub unit_kind: UnitKind,
    /// Underlying sample indices of each unit.
    pub index_map: Vec<Vec<usize>>,
}

impl GradientFeatures {
    pub fn from_samples(rows: Array2<f64>) -> Self {
        let index_map = (0..rows.nrows()).map(|i| vec![i]).collect();
        Self { rows, unit_kind: UnitKind::Sample, index_map }
    }

    pub fn units(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    /// Sum of all rows, the full-data gradient being matched.
    pub fn total(&self) -> ndarray::Array1<f64> {
        self.rows.sum_axis(Axis(0))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.rows.nrows() as u64).to_le_bytes())?;
        w.write_all(&(self.rows.ncols() as u64).to_le_bytes())?;
        w.write_all(&[match self.unit_kind {
            UnitKind::Sample => 0u8,
            UnitKind::Batch => 1u8,
        }])?;
        for v in self.rows.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        for unit in &self.index_map {
            w.write_all(&(unit.len() as u32).to_le_bytes())?;
            for &i in unit {
                w.write_all(&(i as u32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> std::result::Result<Self, String> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|e| e.to_string())?;
        if &magic != MAGIC {
            return Err("missing ACSF magic".into());
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let m = read_u64(&mut r)? as usize;
        let p = read_u64(&mut r)? as usize;
        let mut kind = [0u8; 1];
        r.read_exact(&mut kind).map_err(|e| e.to_string())?;
        let unit_kind = match kind[0] {
            0 => UnitKind::Sample,
            1 => UnitKind::Batch,
            k => return Err(format!("unknown unit kind {k}")),
        };
        let mut data = Vec::with_capacity(m * p);
        for _ in 0..m * p {
            data.push(f64::from_le_bytes(read_array(&mut r)?));
        }
        let rows = Array2::from_shape_vec((m, p), data).map_err(|e| e.to_string())?;
        let mut index_map = Vec::with_capacity(m);
        for _ in 0..m {
            let len = read_u32(&mut r)? as usize;
            index_map.push((0..len).map(|_| read_u32(&mut r).map(|v| v as usize)).collect::<std::result::Result<Vec<_>, _>>()?);
        }
        Ok(Self { rows, unit_kind, index_map })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file)).map_err(|msg| Error::Format { path: path.into(), msg })
    }
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> std::result::Result<[u8; N], String> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| e.to_string())?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> std::result::Result<u32, String> {
    read_array(r).map(u32::from_le_bytes)
}

fn read_u64<R: Read>(r: &mut R) -> std::result::Result<u64, String> {
    read_array(r).map(u64::from_le_bytes)
}

/// Training objective whose gradients drive selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ObjectiveKind {
    Vanilla,
    AdversarialCe,
    Trades { lambda: f64 },
}

impl ObjectiveKind {
    pub fn validate(&self) -> Result<()> {
        if let ObjectiveKind::Trades { lambda } = self {
            if !(*lambda > 0.0) || !lambda.is_finite() {
                return Err(Error::InvalidArgument(format!("TRADES lambda must be finite and > 0, got {lambda}")));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            ObjectiveKind::Vanilla => "vanilla",
            ObjectiveKind::AdversarialCe => "adversarial",
            ObjectiveKind::Trades { .. } => "trades",
        }
    }
}

/// The three last-layer gradient terms of the TRADES objective for fixed
/// adversarial inputs.
#[derive(Debug, Clone)]
pub struct TradesTerms {
    /// `∇ CE(f(x), y)`.
    pub clean: Array2<f64>,
    /// `∇ CE(f(x_adv), freeze(f(x)))`.
    pub adv_side: Array2<f64>,
    /// `∇ CE(freeze(f(x_adv)), f(x))`.
    pub clean_side: Array2<f64>,
}

impl TradesTerms {
    pub fn combine(&self, lambda: f64) -> Array2<f64> {
        &self.clean + &((&self.adv_side + &self.clean_side) / lambda)
    }
}

pub fn trades_terms(params: &ModelParams, x: ArrayView2<'_, f64>, labels: &[usize], x_adv: ArrayView2<'_, f64>) -> Result<TradesTerms> {
    let clean = model::forward(params, x)?;
    let adv = model::forward(params, x_adv)?;
    let p = clean.probs.view();
    let clean_rows = model::last_layer_rows(clean.penultimate(), clean.logit_residual(&Target::Hard(labels)).view());
    let adv_rows = model::last_layer_rows(adv.penultimate(), adv.logit_residual(&Target::Soft(p)).view());
    let clean_side = model::last_layer_rows(clean.penultimate(), model::target_side_ce_dlogits(p, adv.log_probs.view()).view());
    Ok(TradesTerms { clean: clean_rows, adv_side: adv_rows, clean_side })
}

fn features_for_chunk(params: &ModelParams, x: ArrayView2<'_, f64>, labels: &[usize], objective: ObjectiveKind, cfg: &AttackConfig) -> Result<Array2<f64>> {
    match objective {
        ObjectiveKind::Vanilla => model::per_sample_last_layer_grad(params, x, Target::Hard(labels)),
        ObjectiveKind::AdversarialCe => {
            let adv = attacks::pgd_attack(params, x, Target::Hard(labels), cfg)?;
            model::per_sample_last_layer_grad(params, adv.x_adv.view(), Target::Hard(labels))
        }
        ObjectiveKind::Trades { lambda } => {
            let adv = attacks::trades_inner_max(params, x, cfg)?;
            Ok(trades_terms(params, x, labels, adv.x_adv.view())?.combine(lambda))
        }
    }
}

/// Per-sample last-layer gradients of the chosen objective at the current
/// parameters. Adversarial inputs are regenerated on every call.
pub fn adv_grad_features(params: &ModelParams, data: &Dataset, objective: ObjectiveKind, attack_cfg: &AttackConfig) -> Result<GradientFeatures> {
    objective.validate()?;
    attack_cfg.validate()?;
    let n = data.n();
    let x = data.features();
    let chunks: Vec<(usize, usize)> = (0..n).step_by(CHUNK).map(|s| (s, (s + CHUNK).min(n))).collect();
    let parts = chunks
        .par_iter()
        .enumerate()
        .map(|(c, &(start, end))| {
            let cfg = attack_cfg.with_seed(seeding::derive(attack_cfg.seed, &[c as u64]));
            features_for_chunk(params, x.slice(ndarray::s![start..end, ..]), &data.labels()[start..end], objective, &cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    let rows = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Dimension(e.to_string()))?;
    if let Some(i) = rows.outer_iter().position(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(Error::Numeric(format!("gradient feature of sample {i} is not finite")));
    }
    Ok(GradientFeatures::from_samples(rows))
}

/// Shuffles samples by `shuffle_seed`, cuts them into consecutive chunks of
/// `batch_size` (the last may be shorter) and sums each chunk's rows.
pub fn batch_aggregate(features: &GradientFeatures, batch_size: usize, shuffle_seed: u64) -> Result<GradientFeatures> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }
    if features.unit_kind != UnitKind::Sample {
        return Err(Error::InvalidArgument("batch aggregation expects sample-level features".into()));
    }
    let m = features.units();
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut seeding::stream(shuffle_seed, &[tag::SELECT_BATCHES]));
    let units = m.div_ceil(batch_size);
    let mut rows = Array2::zeros((units, features.dim()));
    let mut index_map = Vec::with_capacity(units);
    for (u, chunk) in order.chunks(batch_size).enumerate() {
        let mut row = rows.row_mut(u);
        for &i in chunk {
            row += &features.rows.row(i);
        }
        index_map.push(chunk.iter().flat_map(|&i| features.index_map[i].iter().copied()).collect());
    }
    Ok(GradientFeatures { rows, unit_kind: UnitKind::Batch, index_map })
}
