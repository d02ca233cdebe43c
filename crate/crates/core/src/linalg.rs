//! Small dense helpers on row-major `n×n` slices. Used in per-observation
//! loops where allocating matrix objects would dominate the cost.

use nalgebra::{DMatrix, SymmetricEigen};

/// Lower Cholesky factor of a symmetric matrix into `l`; false if not PD.
pub fn cholesky(a: &[f64], n: usize, l: &mut [f64]) -> bool {
    l.iter_mut().for_each(|v| *v = 0.0);
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let djj = d.sqrt();
        l[j * n + j] = djj;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / djj;
        }
    }
    true
}

/// ln det A from its Cholesky factor.
pub fn chol_logdet(l: &[f64], n: usize) -> f64 {
    2.0 * (0..n).map(|i| l[i * n + i].ln()).sum::<f64>()
}

/// Solves L z = b in place (forward substitution).
pub fn forward_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Eigenvalues (ascending) and eigenvectors (columns) of a symmetric matrix.
pub fn sym_eigen(a: &[f64], n: usize) -> (Vec<f64>, DMatrix<f64>) {
    let m = DMatrix::from_row_slice(n, n, a);
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &[f64], n: usize) -> f64 {
    sym_eigen(a, n).0[0]
}

/// Replaces eigenvalues below `floor` by `floor` and rebuilds the matrix.
pub fn clip_eigenvalues(a: &[f64], n: usize, floor: f64) -> Vec<f64> {
    let (values, vectors) = sym_eigen(a, n);
    let mut out = vec![0.0; n * n];
    for (k, &v) in values.iter().enumerate() {
        let v = v.max(floor);
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] += v * vectors[(i, k)] * vectors[(j, k)];
            }
        }
    }
    out
}

/// Averages `a` with its transpose in place.
pub fn symmetrize(a: &mut [f64], n: usize) {
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (a[i * n + j] + a[j * n + i]);
            a[i * n + j] = v;
            a[j * n + i] = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_reconstructs_and_logdet() {
        let a = [4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0];
        let mut l = [0.0; 9];
        assert!(cholesky(&a, 3, &mut l));
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| l[i * 3 + k] * l[j * 3 + k]).sum();
                assert!((v - a[i * 3 + j]).abs() < 1e-12);
            }
        }
        let det = 4.0 * (5.0 * 3.0 - 1.0) - 2.0 * (2.0 * 3.0 - 0.6) + 0.6 * (2.0 - 5.0 * 0.6);
        assert!((chol_logdet(&l, 3) - f64::ln(det)).abs() < 1e-12);
        assert!(!cholesky(&[1.0, 2.0, 2.0, 1.0], 2, &mut [0.0; 4]));
    }

    #[test]
    fn eigen_clipping_restores_psd() {
        let a = [1.0, 2.0, 2.0, 1.0]; // eigenvalues −1, 3
        assert!((min_eigenvalue(&a, 2) + 1.0).abs() < 1e-12);
        let c = clip_eigenvalues(&a, 2, 1e-6);
        assert!(min_eigenvalue(&c, 2) >= 1e-6 - 1e-12);
    }
}
