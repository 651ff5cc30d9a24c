use std::io::{Read, Write};
use std::path::Path;

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{Activation, ModelParams};
use crate::solvers::{Coreset, Provenance};

const MAGIC: &[u8; 4] = b"ACSC";
const VERSION: u32 = 1;

/// Parameters and schedule position after a completed epoch. All random
/// streams are keyed by `(seed, epoch)`, so the pair is the full generator state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: u64,
    pub seed: u64,
    /// Last completed epoch; 0 means untrained.
    pub epoch: usize,
    pub params: ModelParams,
    pub coreset: Option<Coreset>,
}

impl Checkpoint {
    pub fn new(cfg: &TrainConfig, epoch: usize, params: ModelParams, coreset: Option<Coreset>) -> Self {
        Checkpoint { config_hash: cfg.hash(), seed: cfg.seed, epoch, params, coreset }
    }

    pub fn check_compatible(&self, cfg: &TrainConfig, d: usize, classes: usize) -> Result<()> {
        if self.config_hash != cfg.hash() {
            return Err(Error::Config(format!("checkpoint config hash {:016x} differs from {:016x}", self.config_hash, cfg.hash())));
        }
        if self.params.sizes() != cfg.layer_sizes(d, classes) {
            return Err(Error::Dimension(format!("checkpoint layers {:?} do not fit the data", self.params.sizes())));
        }
        if self.epoch > cfg.epochs {
            return Err(Error::Config(format!("checkpoint epoch {} exceeds {} epochs", self.epoch, cfg.epochs)));
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.config_hash.to_le_bytes())?;
        let sizes = self.params.sizes();
        w.write_all(&(sizes.len() as u32).to_le_bytes())?;
        for s in &sizes {
            w.write_all(&(*s as u64).to_le_bytes())?;
        }
        w.write_all(&[activation_code(self.params.activation())])?;
        for v in self.params.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&(self.epoch as u64).to_le_bytes())?;
        match &self.coreset {
            None => w.write_all(&[0])?,
            Some(c) => {
                w.write_all(&[1])?;
                let name = c.provenance.solver.as_bytes();
                w.write_all(&(name.len() as u32).to_le_bytes())?;
                w.write_all(name)?;
                w.write_all(&c.provenance.config_hash.to_le_bytes())?;
                w.write_all(&(c.provenance.epoch as u64).to_le_bytes())?;
                w.write_all(&(c.len() as u64).to_le_bytes())?;
                for (i, wt) in c.indices.iter().zip(&c.weights) {
                    w.write_all(&(*i as u64).to_le_bytes())?;
                    w.write_all(&wt.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> std::result::Result<Self, String> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|e| e.to_string())?;
        if &magic != MAGIC {
            return Err("not a checkpoint file".into());
        }
        let version = u32::from_le_bytes(take(&mut r)?);
        if version != VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let config_hash = u64::from_le_bytes(take(&mut r)?);
        let layers = u32::from_le_bytes(take(&mut r)?) as usize;
        if !(2..=64).contains(&layers) {
            return Err(format!("implausible layer count {layers}"));
        }
        let sizes = (0..layers).map(|_| take(&mut r).map(|b| u64::from_le_bytes(b) as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
        let [code] = take::<_, 1>(&mut r)?;
        let activation = match code {
            0 => Activation::Relu,
            1 => Activation::Identity,
            c => return Err(format!("unknown activation code {c}")),
        };
        let mut params = ModelParams::zeros(&sizes, activation).map_err(|e| e.to_string())?;
        for v in params.iter_mut() {
            *v = f64::from_le_bytes(take(&mut r)?);
        }
        let seed = u64::from_le_bytes(take(&mut r)?);
        let epoch = u64::from_le_bytes(take(&mut r)?) as usize;
        let [flag] = take::<_, 1>(&mut r)?;
        let coreset = match flag {
            0 => None,
            1 => {
                let len = u32::from_le_bytes(take(&mut r)?) as usize;
                let mut name = vec![0u8; len.min(1 << 16)];
                r.read_exact(&mut name).map_err(|e| e.to_string())?;
                let solver = String::from_utf8(name).map_err(|e| e.to_string())?;
                let config_hash = u64::from_le_bytes(take(&mut r)?);
                let sel_epoch = u64::from_le_bytes(take(&mut r)?) as usize;
                let count = u64::from_le_bytes(take(&mut r)?) as usize;
                let mut indices = Vec::new();
                let mut weights = Vec::new();
                for _ in 0..count {
                    indices.push(u64::from_le_bytes(take(&mut r)?) as usize);
                    weights.push(f64::from_le_bytes(take(&mut r)?));
                }
                let prov = Provenance { solver, config_hash, epoch: sel_epoch };
                Some(Coreset::new(indices, weights, prov).map_err(|e| e.to_string())?)
            }
            f => return Err(format!("bad coreset flag {f}")),
        };
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(|e| e.to_string())? != 0 {
            return Err("trailing bytes".into());
        }
        Ok(Checkpoint { config_hash, seed, epoch, params, coreset })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::read_from(bytes.as_slice()).map_err(|msg| Error::Format { path: path.into(), msg })
    }
}

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::Relu => 0,
        Activation::Identity => 1,
    }
}

fn take<R: Read, const N: usize>(r: &mut R) -> std::result::Result<[u8; N], String> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| format!("truncated checkpoint: {e}"))?;
    Ok(b)
}
