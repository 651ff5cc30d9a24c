//! Dense solves for the small symmetric systems that appear in weight fits
//! and Newton steps.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// Solves `q z = c` for symmetric positive definite `q` by Cholesky.
/// Returns `None` when a pivot falls below `rel_tol · max(diag)`.
pub fn cholesky_solve(q: ArrayView2<'_, f64>, c: ArrayView1<'_, f64>, rel_tol: f64) -> Option<Array1<f64>> {
    let n = q.nrows();
    let max_diag = (0..n).map(|i| q[[i, i]]).fold(0.0f64, f64::max);
    let floor = rel_tol * max_diag.max(f64::MIN_POSITIVE);
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = q[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > floor) {
            return None;
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in j + 1..n {
            let mut v = q[[i, j]];
            for k in 0..j {
                v -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = v / d;
        }
    }
    let mut y = c.to_owned();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[[i, k]] * y[k];
        }
        y[i] /= l[[i, i]];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l[[k, i]] * y[k];
        }
        y[i] /= l[[i, i]];
    }
    Some(y)
}

/// Solves a consistent, possibly singular square system by Gaussian
/// elimination with complete pivoting; free variables are set to zero.
pub fn solve_pivoted(a: ArrayView2<'_, f64>, b: ArrayView1<'_, f64>, rel_tol: f64) -> Array1<f64> {
    let n = a.nrows();
    let mut m = a.to_owned();
    let mut rhs = b.to_owned();
    let mut cols: Vec<usize> = (0..n).collect();
    let scale = m.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    let mut rank = 0;
    for k in 0..n {
        let (mut pr, mut pc, mut best) = (k, k, 0.0);
        for i in k..n {
            for j in k..n {
                if m[[i, j]].abs() > best {
                    best = m[[i, j]].abs();
                    pr = i;
                    pc = j;
                }
            }
        }
        if best <= rel_tol * scale || best == 0.0 {
            break;
        }
        for j in 0..n {
            m.swap([k, j], [pr, j]);
        }
        rhs.swap(k, pr);
        for i in 0..n {
            m.swap([i, k], [i, pc]);
        }
        cols.swap(k, pc);
        for i in k + 1..n {
            let f = m[[i, k]] / m[[k, k]];
            if f != 0.0 {
                for j in k..n {
                    m[[i, j]] -= f * m[[k, j]];
                }
                rhs[i] -= f * rhs[k];
            }
        }
        rank += 1;
    }
    let mut z = Array1::zeros(n);
    for i in (0..rank).rev() {
        let mut v = rhs[i];
        for j in i + 1..rank {
            v -= m[[i, j]] * z[j];
        }
        z[i] = v / m[[i, i]];
    }
    let mut out = Array1::zeros(n);
    for (pos, &col) in cols.iter().enumerate() {
        out[col] = z[pos];
    }
    out
}
