use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::linalg::cholesky_solve;

const KKT_TOL: f64 = 1e-8;

/// `‖b − Aγ‖² + λ‖γ‖²`.
pub fn ridge_objective(a: ArrayView2<'_, f64>, b: ArrayView1<'_, f64>, lambda: f64, gamma: ArrayView1<'_, f64>) -> f64 {
    let r = &b - &a.dot(&gamma);
    r.dot(&r) + lambda * gamma.dot(&gamma)
}

/// Minimizes `‖b − Aγ‖² + λ‖γ‖²` over `γ ≥ 0` with the Lawson-Hanson active
/// set method. `a` holds one selected row per column (p × s).
pub fn nonneg_ridge_fit(a: ArrayView2<'_, f64>, b: ArrayView1<'_, f64>, lambda: f64) -> Result<Array1<f64>> {
    let (p, s) = a.dim();
    if s == 0 {
        return Err(Error::EmptyInput("nonneg_ridge_fit needs at least one column".into()));
    }
    if b.len() != p {
        return Err(Error::Dimension(format!("target length {} but {p} rows", b.len())));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    let mut q: Array2<f64> = a.t().dot(&a);
    for j in 0..s {
        q[[j, j]] += lambda;
    }
    let c: Array1<f64> = a.t().dot(&b);
    let scale = c.iter().chain(q.iter()).fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = KKT_TOL * scale;

    let mut gamma = Array1::<f64>::zeros(s);
    let mut passive = vec![false; s];
    let mut blocked = vec![false; s];
    let max_outer = 10 * s + 10;
    let mut iterations = 0;

    loop {
        let w = &c - &q.dot(&gamma);
        let candidate = (0..s)
            .filter(|&j| !passive[j] && !blocked[j] && w[j] > tol)
            .fold(None, |best: Option<usize>, j| match best {
                Some(b) if w[b] >= w[j] => Some(b),
                _ => Some(j),
            });
        let Some(j) = candidate else { break };
        iterations += 1;
        if iterations > max_outer {
            return Err(Error::NoConvergence { iterations, residual: kkt_residual(&q, &c, &gamma) / scale });
        }
        passive[j] = true;
        let mut first = true;
        loop {
            let idx: Vec<usize> = (0..s).filter(|&i| passive[i]).collect();
            let z = solve_subsystem(&q, &c, &idx);
            let new_pos = z.as_ref().and_then(|z| idx.iter().position(|&i| i == j).map(|k| z[k]));
            if first && !matches!(new_pos, Some(v) if v > 0.0) {
                // Column j is numerically dependent on the passive set; skip it until the set changes.
                passive[j] = false;
                blocked[j] = true;
                break;
            }
            first = false;
            let Some(z) = z else {
                return Err(Error::NoConvergence { iterations, residual: kkt_residual(&q, &c, &gamma) / scale });
            };
            if z.iter().all(|&v| v > 0.0) {
                for (k, &i) in idx.iter().enumerate() {
                    gamma[i] = z[k];
                }
                blocked.iter_mut().for_each(|b| *b = false);
                break;
            }
            let mut alpha = 1.0f64;
            let mut hit = idx[0];
            for (k, &i) in idx.iter().enumerate() {
                if z[k] <= 0.0 {
                    let step = gamma[i] / (gamma[i] - z[k]);
                    if step < alpha {
                        alpha = step;
                        hit = i;
                    }
                }
            }
            for (k, &i) in idx.iter().enumerate() {
                gamma[i] += alpha * (z[k] - gamma[i]);
                if gamma[i] <= 0.0 {
                    gamma[i] = 0.0;
                    passive[i] = false;
                }
            }
            gamma[hit] = 0.0;
            passive[hit] = false;
        }
    }

    let residual = kkt_residual(&q, &c, &gamma) / scale;
    if residual > KKT_TOL {
        return Err(Error::NoConvergence { iterations, residual });
    }
    Ok(gamma)
}

fn solve_subsystem(q: &Array2<f64>, c: &Array1<f64>, idx: &[usize]) -> Option<Array1<f64>> {
    let qs = q.select(Axis(0), idx).select(Axis(1), idx);
    let cs = c.select(Axis(0), idx);
    cholesky_solve(qs.view(), cs.view(), 1e-13)
}

fn kkt_residual(q: &Array2<f64>, c: &Array1<f64>, gamma: &Array1<f64>) -> f64 {
    let g = q.dot(gamma) - c;
    gamma
        .iter()
        .zip(g.iter())
        .map(|(&x, &gi)| if x > 0.0 { gi.abs() } else { (-gi).max(0.0) })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::stream;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn exact_single_column() {
        let a = array![[1.0], [2.0], [-1.0]];
        let g = nonneg_ridge_fit(a.view(), array![1.0, 2.0, -1.0].view(), 0.0).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn anti_parallel_clamps() {
        let a = array![[-1.0], [-2.0]];
        let g = nonneg_ridge_fit(a.view(), array![1.0, 2.0].view(), 0.0).unwrap();
        assert_eq!(g[0], 0.0);
    }

    #[test]
    fn ridge_closed_form() {
        let a = array![[1.0], [1.0]];
        let g = nonneg_ridge_fit(a.view(), array![1.0, 1.0].view(), 2.0).unwrap();
        assert!((g[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn duplicate_columns_are_tolerated() {
        let a = array![[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let b = array![2.0, 3.0];
        let g = nonneg_ridge_fit(a.view(), b.view(), 0.0).unwrap();
        assert!(ridge_objective(a.view(), b.view(), 0.0, g.view()) < 1e-20);
    }

    #[test]
    fn matches_grid_search() {
        let mut rng = stream(99, &[1]);
        for _ in 0..5 {
            let a = Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));
            let b = Array1::from_shape_fn(5, |_| rng.random_range(-2.0..2.0));
            let lambda = rng.random_range(0.0..0.5);
            let g = nonneg_ridge_fit(a.view(), b.view(), lambda).unwrap();
            let fit = ridge_objective(a.view(), b.view(), lambda, g.view());
            let q = a.t().dot(&a);
            let c = a.t().dot(&b);
            let bb = b.dot(&b);
            let mut best = f64::INFINITY;
            for i in 0..=300 {
                let x = i as f64 * 0.01;
                for j in 0..=300 {
                    let y = j as f64 * 0.01;
                    for k in 0..=300 {
                        let z = k as f64 * 0.01;
                        let v = [x, y, z];
                        let mut obj = bb;
                        for r in 0..3 {
                            obj += v[r] * (lambda * v[r] - 2.0 * c[r]);
                            for t in 0..3 {
                                obj += v[r] * q[[r, t]] * v[t];
                            }
                        }
                        best = best.min(obj);
                    }
                }
            }
            assert!(fit <= best + 1e-6, "fit {fit} grid {best}");
        }
    }
}
