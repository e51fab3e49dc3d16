//! Small dense helpers on top of nalgebra.

use std::collections::VecDeque;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::scalar::Scalar;

/// Largest absolute eigenvalue of a symmetric matrix.
pub fn symmetric_spectral_radius<T: Scalar>(m: &DMatrix<T>) -> T {
    let sym = (m + m.transpose()) * T::lit(0.5);
    let eig = SymmetricEigen::new(sym);
    eig.eigenvalues
        .iter()
        .fold(T::zero(), |acc, v| acc.max(v.abs()))
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn symmetric_eigenvalues<T: Scalar>(m: &DMatrix<T>) -> Vec<T> {
    let sym = (m + m.transpose()) * T::lit(0.5);
    let mut vals: Vec<T> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    vals
}

/// Square-root factor `S` with `S Sᵀ = m` for a symmetric PSD matrix.
/// Slightly negative eigenvalues from roundoff are clipped to zero, so
/// rank-deficient covariances are handled.
pub fn psd_factor<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    let sym = (m + m.transpose()) * T::lit(0.5);
    let eig = SymmetricEigen::new(sym);
    let mut v = eig.eigenvectors;
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(T::zero()).sqrt();
        v.column_mut(j).scale_mut(s);
    }
    v
}

/// Haar-distributed random orthogonal matrix (QR of a Gaussian matrix with
/// the sign of `R`'s diagonal folded back into `Q`).
pub fn random_orthogonal<T: Scalar, R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<T> {
    let g = DMatrix::<T>::from_fn(d, d, |_, _| T::lit(rng.sample::<f64, _>(StandardNormal)));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < T::zero() {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Strong connectivity of the digraph with an arc `i -> j` wherever
/// `m[(i, j)] > 0`, `i != j`.
pub fn is_strongly_connected<T: Scalar>(m: &DMatrix<T>) -> bool {
    let n = m.nrows();
    if n <= 1 {
        return true;
    }
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                let w = if forward { m[(u, v)] } else { m[(v, u)] };
                if v != u && !seen[v] && w > T::zero() {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}
