//! Robust binary logistic loss of a linear model with the inner maximization
//! solved in closed form.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::attacks::{softplus, Norm};
use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::seeding::{stream, tag};

fn sigmoid(m: f64) -> f64 {
    if m >= 0.0 {
        1.0 / (1.0 + (-m).exp())
    } else {
        let e = m.exp();
        e / (1.0 + e)
    }
}

/// Labeled points with labels in `{-1, +1}`.
#[derive(Debug, Clone)]
pub struct LinearProbe {
    pub x: Array2<f64>,
    pub y: Vec<f64>,
    pub epsilon: f64,
    pub norm: Norm,
    /// Coefficient of `μ/2 ‖θ‖²` added to every per-sample loss.
    pub mu: f64,
}

impl LinearProbe {
    /// Gaussian inputs with labels drawn from a logistic model, so the
    /// classes overlap and the unregularized risk has a finite minimizer.
    pub fn synth(n: usize, d: usize, epsilon: f64, norm: Norm, mu: f64, seed: u64) -> Self {
        let mut rng = stream(seed, &[tag::PROBE, 0]);
        let w: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let b: f64 = 0.3 * rng.sample::<f64, _>(StandardNormal);
        let x = Array2::from_shape_fn((n, d), |_| rng.sample(StandardNormal));
        let y = x
            .outer_iter()
            .map(|row| {
                let m = row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
                if rng.random::<f64>() < sigmoid(m) {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect();
        LinearProbe { x, y, epsilon, norm, mu }
    }

    /// Uses class 1 as `+1` and every other class as `-1`.
    pub fn from_dataset(data: &Dataset, epsilon: f64, norm: Norm, mu: f64) -> Self {
        let y = data.labels().iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
        LinearProbe { x: data.features().to_owned(), y, epsilon, norm, mu }
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// Parameter count, weights then bias.
    pub fn dim(&self) -> usize {
        self.x.ncols() + 1
    }

    fn split<'a>(&self, theta: &'a [f64]) -> (ArrayView1<'a, f64>, f64) {
        let d = self.x.ncols();
        (ArrayView1::from(&theta[..d]), theta[d])
    }

    fn dual_norm(&self, w: ArrayView1<'_, f64>) -> f64 {
        match self.norm {
            Norm::Linf => w.iter().map(|v| v.abs()).sum(),
            Norm::L2 => w.dot(&w).sqrt(),
        }
    }

    fn dual_grad(&self, w: ArrayView1<'_, f64>) -> Array1<f64> {
        match self.norm {
            Norm::Linf => w.mapv(f64::signum),
            Norm::L2 => {
                let n = w.dot(&w).sqrt();
                if n > 0.0 {
                    &w / n
                } else {
                    Array1::zeros(w.len())
                }
            }
        }
    }

    /// Worst-case margin `−y(wᵀx + b) + ε‖w‖_*`.
    fn margin(&self, i: usize, w: ArrayView1<'_, f64>, b: f64) -> f64 {
        -self.y[i] * (w.dot(&self.x.row(i)) + b) + self.epsilon * self.dual_norm(w)
    }

    pub fn sample_loss(&self, i: usize, theta: &[f64]) -> f64 {
        let (w, b) = self.split(theta);
        softplus(self.margin(i, w, b)) + 0.5 * self.mu * theta.iter().map(|v| v * v).sum::<f64>()
    }

    /// Gradient of one per-sample loss, taken at its maximizer.
    pub fn sample_grad(&self, i: usize, theta: &[f64]) -> Array1<f64> {
        let (w, b) = self.split(theta);
        let s = sigmoid(self.margin(i, w, b));
        let d = self.x.ncols();
        let dg = self.dual_grad(w);
        let mut g = Array1::zeros(d + 1);
        for j in 0..d {
            g[j] = s * (-self.y[i] * self.x[[i, j]] + self.epsilon * dg[j]) + self.mu * theta[j];
        }
        g[d] = -s * self.y[i] + self.mu * theta[d];
        g
    }

    /// One gradient row per sample.
    pub fn sample_grads(&self, theta: &[f64]) -> Array2<f64> {
        let mut out = Array2::zeros((self.n(), self.dim()));
        for i in 0..self.n() {
            out.row_mut(i).assign(&self.sample_grad(i, theta));
        }
        out
    }

    /// Mean per-sample loss.
    pub fn mean_loss(&self, theta: &[f64]) -> f64 {
        (0..self.n()).map(|i| self.sample_loss(i, theta)).sum::<f64>() / self.n() as f64
    }

    pub fn mean_grad(&self, theta: &[f64]) -> Array1<f64> {
        let mut g = Array1::zeros(self.dim());
        for i in 0..self.n() {
            g += &self.sample_grad(i, theta);
        }
        g / self.n() as f64
    }

    /// Hessian of the mean loss; the ℓ1 dual norm contributes nothing off
    /// its kinks.
    pub fn mean_hessian(&self, theta: &[f64]) -> Array2<f64> {
        let (w, b) = self.split(theta);
        let d = self.x.ncols();
        let p = d + 1;
        let mut h = Array2::<f64>::zeros((p, p));
        let dg = self.dual_grad(w);
        let wn = w.dot(&w).sqrt();
        for i in 0..self.n() {
            let m = self.margin(i, w, b);
            let s = sigmoid(m);
            let ds = s * (1.0 - s);
            let mut g = Array1::zeros(p);
            for j in 0..d {
                g[j] = -self.y[i] * self.x[[i, j]] + self.epsilon * dg[j];
            }
            g[d] = -self.y[i];
            for a in 0..p {
                for c in 0..p {
                    h[[a, c]] += ds * g[a] * g[c];
                }
            }
            if self.norm == Norm::L2 && wn > 0.0 {
                for a in 0..d {
                    for c in 0..d {
                        let id = if a == c { 1.0 } else { 0.0 };
                        h[[a, c]] += s * self.epsilon * (id - w[a] * w[c] / (wn * wn)) / wn;
                    }
                }
            }
        }
        h /= self.n() as f64;
        for a in 0..p {
            h[[a, a]] += self.mu;
        }
        h
    }

    /// Largest `ℓ2` length of a perturbation in the attack ball.
    pub fn ball_radius(&self) -> f64 {
        match self.norm {
            Norm::L2 => self.epsilon,
            Norm::Linf => self.epsilon * (self.x.ncols() as f64).sqrt(),
        }
    }

    /// Bound on every per-sample gradient norm of the unregularized loss:
    /// `max_i sqrt((‖x_i‖ + r)² + 1)`.
    pub fn lipschitz_bound(&self) -> f64 {
        let r = self.ball_radius();
        self.x
            .outer_iter()
            .map(|row| {
                let n = row.dot(&row).sqrt() + r;
                (n * n + 1.0).sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// Damped Newton iterations on the mean loss. Returns the point and the
    /// final gradient norm.
    pub fn minimize(&self, start: &[f64], max_iter: usize, tol: f64) -> Result<(Vec<f64>, f64)> {
        let mut theta = start.to_vec();
        let mut g = self.mean_grad(&theta);
        let mut gnorm = g.dot(&g).sqrt();
        for _ in 0..max_iter {
            if gnorm < tol {
                break;
            }
            let h = self.mean_hessian(&theta);
            let dir = newton_direction(&h, &g);
            let f0 = self.mean_loss(&theta);
            let slope = g.dot(&dir);
            let mut step = 1.0;
            let mut next = theta.clone();
            loop {
                for (t, (o, dv)) in next.iter_mut().zip(theta.iter().zip(dir.iter())) {
                    *t = o - step * dv;
                }
                if self.mean_loss(&next) <= f0 - 1e-4 * step * slope || step < 1e-12 {
                    break;
                }
                step *= 0.5;
            }
            let ng = self.mean_grad(&next);
            let nn = ng.dot(&ng).sqrt();
            if !nn.is_finite() {
                return Err(Error::Numeric("reference optimization diverged".into()));
            }
            if step < 1e-12 && nn >= gnorm {
                break;
            }
            theta = next;
            g = ng;
            gnorm = nn;
        }
        Ok((theta, gnorm))
    }
}

fn newton_direction(h: &Array2<f64>, g: &Array1<f64>) -> Array1<f64> {
    let mut damping = 0.0;
    loop {
        let mut hd = h.clone();
        for a in 0..hd.nrows() {
            hd[[a, a]] += damping;
        }
        if let Some(dir) = crate::linalg::cholesky_solve(hd.view(), g.view(), 1e-14) {
            return dir;
        }
        damping = if damping == 0.0 { 1e-10 } else { damping * 10.0 };
        if damping > 1e6 {
            return g.clone();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::central_difference;

    #[test]
    fn gradient_and_hessian_match_differences() {
        for norm in [Norm::L2, Norm::Linf] {
            let p = LinearProbe::synth(30, 3, 0.1, norm, 0.05, 4);
            let theta = [0.4, -0.7, 1.1, 0.2];
            let fd = central_difference(|t| Ok(p.mean_loss(t)), &theta, 1e-6).unwrap();
            let g = p.mean_grad(&theta);
            for (a, b) in fd.iter().zip(g.iter()) {
                assert!((a - b).abs() < 1e-7, "{norm:?}: {a} vs {b}");
            }
            let h = p.mean_hessian(&theta);
            for j in 0..4 {
                let col = central_difference(|t| Ok(p.mean_grad(t)[j]), &theta, 1e-6).unwrap();
                for (k, v) in col.iter().enumerate() {
                    assert!((v - h[[j, k]]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn minimizer_is_certified() {
        let p = LinearProbe::synth(200, 5, 0.05, Norm::L2, 0.0, 1);
        let (_, gn) = p.minimize(&[0.1; 6], 100, 1e-10).unwrap();
        assert!(gn < 1e-10);
    }
}
