use ndarray::{Array1, Axis};

use crate::error::{Error, Result};
use crate::features::GradientFeatures;
use crate::linalg::solve_pivoted;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub subset: Vec<usize>,
    pub weights: Vec<f64>,
    pub residual: f64,
}

const MAX_UNITS: usize = 12;
const MAX_K: usize = 4;

/// Exhaustive search over every size-`k` subset. Each subset gets an
/// unconstrained least-squares fit to the total row sum, clamped at zero.
pub fn brute_force_subset_oracle(features: &GradientFeatures, k: usize) -> Result<OracleResult> {
    let m = features.units();
    if m > MAX_UNITS || k > MAX_K {
        return Err(Error::TooLarge(format!("m={m}, k={k}; limits are m<={MAX_UNITS}, k<={MAX_K}")));
    }
    if k == 0 || k > m {
        return Err(Error::InvalidArgument(format!("k={k} outside [1, {m}]")));
    }
    let target = features.total();
    let mut best: Option<OracleResult> = None;
    let mut subset: Vec<usize> = (0..k).collect();
    loop {
        let a = features.rows.select(Axis(0), &subset).reversed_axes();
        let q = a.t().dot(&a);
        let c = a.t().dot(&target);
        let w: Array1<f64> = solve_pivoted(q.view(), c.view(), 1e-12).mapv(|v| v.max(0.0));
        let r = &target - &a.dot(&w);
        let residual = r.dot(&r).sqrt();
        if best.as_ref().is_none_or(|b| residual < b.residual) {
            best = Some(OracleResult { subset: subset.clone(), weights: w.to_vec(), residual });
        }
        if !next_combination(&mut subset, m) {
            break;
        }
    }
    Ok(best.expect("at least one subset"))
}

fn next_combination(c: &mut [usize], m: usize) -> bool {
    let k = c.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < m - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn finds_exact_single_row() {
        let f = GradientFeatures::from_samples(array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        let r = brute_force_subset_oracle(&f, 1).unwrap();
        assert_eq!(r.subset, vec![2]);
        assert!(r.residual < 1e-12);
        assert!((r.weights[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn full_subset_spans() {
        let f = GradientFeatures::from_samples(array![[1.0, 2.0], [0.5, -1.0], [2.0, 0.0]]);
        assert!(brute_force_subset_oracle(&f, 3).unwrap().residual < 1e-12);
    }

    #[test]
    fn negative_weights_are_clamped() {
        // Rows 0 and 1 fit exactly with weights -1 and 1; clamping leaves row 1
        // alone, which the pair {1, 2} beats with an exact nonnegative fit.
        let f = GradientFeatures::from_samples(array![[1.0, 0.0], [1.0, 0.1], [-2.0, 0.0]]);
        let r = brute_force_subset_oracle(&f, 2).unwrap();
        assert_eq!(r.subset, vec![1, 2]);
        assert!(r.weights.iter().all(|&w| w >= 0.0));
        assert!(r.residual < 1e-12);
    }

    #[test]
    fn zero_rows() {
        let f = GradientFeatures::from_samples(Array2::zeros((4, 3)));
        assert_eq!(brute_force_subset_oracle(&f, 2).unwrap().residual, 0.0);
    }

    #[test]
    fn refuses_large_instances() {
        let f = GradientFeatures::from_samples(Array2::zeros((13, 2)));
        assert!(matches!(brute_force_subset_oracle(&f, 1), Err(Error::TooLarge(_))));
        let f = GradientFeatures::from_samples(Array2::zeros((6, 2)));
        assert!(matches!(brute_force_subset_oracle(&f, 5), Err(Error::TooLarge(_))));
    }

    #[test]
    fn combinations_enumerate_all() {
        let mut c = vec![0, 1];
        let mut n = 1;
        while next_combination(&mut c, 5) {
            n += 1;
        }
        assert_eq!(n, 10);
    }
}
