//! Synthetic datasets and CSV interchange.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::seeding::{stream, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    GaussianBlobs,
    TwoRings,
}

impl SynthKind {
    pub fn name(self) -> &'static str {
        match self {
            SynthKind::GaussianBlobs => "gaussian-blobs",
            SynthKind::TwoRings => "two-rings",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gaussian-blobs" => Some(SynthKind::GaussianBlobs),
            "two-rings" => Some(SynthKind::TwoRings),
            _ => None,
        }
    }
}

/// Vertices of a regular simplex with pairwise distance `margin`, as `k`
/// points in `d` dimensions. Needs `d ≥ k − 1`.
fn simplex_means(k: usize, d: usize, margin: f64) -> Result<Array2<f64>> {
    if d + 1 < k {
        return Err(Error::InvalidArgument(format!("{k} equidistant means need at least {} dimensions, got {d}", k - 1)));
    }
    // Centered scaled basis vectors of R^k span a (k−1)-dimensional subspace.
    let scale = margin / 2f64.sqrt();
    let centred = Array2::from_shape_fn((k, k), |(i, j)| scale * (if i == j { 1.0 } else { 0.0 } - 1.0 / k as f64));
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for row in centred.outer_iter() {
        let mut v = row.to_vec();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
            v.iter_mut().zip(b).for_each(|(a, c)| *a -= dot * c);
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-9 * scale.abs().max(1e-300) && basis.len() < k - 1 {
            basis.push(v.into_iter().map(|a| a / n).collect());
        }
    }
    let mut means = Array2::zeros((k, d));
    for (c, row) in centred.outer_iter().enumerate() {
        for (j, b) in basis.iter().enumerate() {
            means[[c, j]] = row.iter().zip(b).map(|(a, e)| a * e).sum();
        }
    }
    Ok(means)
}

/// Deterministic labeled data. Gaussian blobs put the class means on a
/// regular simplex with side `margin` and add unit noise; rings put class `c`
/// on a circle of radius `1 + c·margin` in the first two coordinates.
pub fn synth_dataset(kind: SynthKind, n: usize, d: usize, k: usize, margin: f64, seed: u64) -> Result<Dataset> {
    if k < 2 || n < k {
        return Err(Error::InvalidArgument(format!("need n >= k >= 2, got n={n}, k={k}")));
    }
    if d == 0 || !(margin >= 0.0 && margin.is_finite()) {
        return Err(Error::InvalidArgument(format!("need d >= 1 and a finite margin >= 0, got d={d}, margin={margin}")));
    }
    let mut rng = stream(seed, &[tag::DATA]);
    let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    labels.shuffle(&mut rng);
    let mut x = Array2::zeros((n, d));
    match kind {
        SynthKind::GaussianBlobs => {
            let means = simplex_means(k, d, margin)?;
            for (i, &y) in labels.iter().enumerate() {
                for j in 0..d {
                    x[[i, j]] = means[[y, j]] + rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        SynthKind::TwoRings => {
            if d < 2 {
                return Err(Error::InvalidArgument("rings need d >= 2".into()));
            }
            for (i, &y) in labels.iter().enumerate() {
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                let radius = 1.0 + y as f64 * margin + 0.1 * rng.sample::<f64, _>(StandardNormal);
                x[[i, 0]] = radius * angle.cos();
                x[[i, 1]] = radius * angle.sin();
                for j in 2..d {
                    x[[i, j]] = 0.1 * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
    }
    Dataset::new(x, labels, k)
}

/// Parses `label,feature,...` rows without a header.
pub fn parse_csv(text: &str) -> Result<Dataset> {
    let mut labels = Vec::new();
    let mut values = Vec::new();
    let mut width = None;
    for (no, line) in text.lines().enumerate() {
        let line_no = no + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label = fields.next().unwrap_or("").trim();
        let label: usize = label.parse().map_err(|_| Error::Parse { line: line_no, msg: format!("label `{label}` is not a nonnegative integer") })?;
        let mut count = 0;
        for f in fields {
            let v: f64 = f.trim().parse().map_err(|_| Error::Parse { line: line_no, msg: format!("feature `{}` is not a number", f.trim()) })?;
            if !v.is_finite() {
                return Err(Error::Parse { line: line_no, msg: "feature is not finite".into() });
            }
            values.push(v);
            count += 1;
        }
        match width {
            None if count == 0 => return Err(Error::Parse { line: line_no, msg: "row has no features".into() }),
            None => width = Some(count),
            Some(w) if w != count => {
                return Err(Error::Parse { line: line_no, msg: format!("expected {} fields, found {}", w + 1, count + 1) });
            }
            _ => {}
        }
        labels.push(label);
    }
    let Some(d) = width else {
        return Err(Error::Parse { line: 1, msg: "file has no data rows".into() });
    };
    let k = labels.iter().max().map_or(0, |m| m + 1).max(1);
    let x = Array2::from_shape_vec((labels.len(), d), values).map_err(|e| Error::Dimension(e.to_string()))?;
    Dataset::new(x, labels, k)
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text)
}

/// Shortest round-tripping decimal for every value.
pub fn to_csv(data: &Dataset) -> String {
    let mut out = String::new();
    for (row, y) in data.features().outer_iter().zip(data.labels()) {
        write!(out, "{y}").expect("write to string");
        for v in row {
            write!(out, ",{v}").expect("write to string");
        }
        out.push('\n');
    }
    out
}

pub fn write_csv(data: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, to_csv(data)).map_err(|e| Error::io(path, e))
}
