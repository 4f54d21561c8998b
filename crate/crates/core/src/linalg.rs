//! Small dense helpers over `nalgebra` complex matrices.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub type CMatrix = DMatrix<Complex64>;

/// Eigenvalues below this are treated as numerical zeros.
pub(crate) const EIGEN_CLAMP: f64 = 1e-12;

/// Tolerance on negative eigenvalues when checking positive semi-definiteness.
pub(crate) const PSD_TOL: f64 = 1e-9;

/// Hermitian eigendecomposition with eigenvalues sorted descending.
///
/// Ties keep the order produced by the solver. Each eigenvector is rotated so
/// that its first non-negligible entry is real and positive, which makes the
/// basis deterministic up to the ordering of repeated eigenvalues.
pub(crate) fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = m.nrows();
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        if let Some(pivot) = col.iter().copied().find(|z| z.norm() > 1e-9) {
            let phase = pivot.conj() / pivot.norm();
            col *= phase;
        }
        vectors.set_column(dst, &col);
    }
    (values, vectors)
}

/// Largest relative deviation from Hermitian symmetry.
pub(crate) fn hermitian_defect(m: &CMatrix) -> f64 {
    let scale = m.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let diff = m - m.adjoint();
    diff.iter().map(|z| z.norm()).fold(0.0, f64::max) / scale
}

pub(crate) fn is_psd(m: &CMatrix) -> bool {
    if m.nrows() != m.ncols() || hermitian_defect(m) > 1e-9 {
        return false;
    }
    let (values, _) = hermitian_eigen(m);
    let scale = values.iter().map(|v| v.abs()).fold(1.0, f64::max);
    values.iter().all(|&v| v >= -PSD_TOL * scale)
}

/// Principal square root of a Hermitian PSD matrix; tiny or negative
/// eigenvalues are clamped to zero.
pub(crate) fn psd_sqrt(values: &[f64], vectors: &CMatrix) -> CMatrix {
    let root = values
        .iter()
        .map(|&v| {
            if v < EIGEN_CLAMP {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(v.sqrt(), 0.0)
            }
        })
        .collect::<Vec<_>>();
    let diag = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(root));
    vectors * diag * vectors.adjoint()
}

/// One draw of CN(0, 1): real and imaginary parts each N(0, 1/2).
#[inline]
pub(crate) fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Row vector times matrix: `row · m`.
#[inline]
pub(crate) fn row_times(row: &[Complex64], m: &CMatrix) -> Vec<Complex64> {
    debug_assert_eq!(row.len(), m.nrows());
    (0..m.ncols())
        .map(|j| {
            row.iter()
                .enumerate()
                .map(|(i, &r)| r * m[(i, j)])
                .sum::<Complex64>()
        })
        .collect()
}

pub(crate) fn norm_sqr(row: &[Complex64]) -> f64 {
    row.iter().map(|z| z.norm_sqr()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_is_sorted_and_reconstructs() {
        let m = CMatrix::from_fn(3, 3, |i, j| {
            Complex64::new(0.5f64.powi((i as i32 - j as i32).abs()), 0.0)
        });
        let (values, vectors) = hermitian_eigen(&m);
        assert!(values.windows(2).all(|w| w[0] >= w[1]));
        let diag = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            3,
            values.iter().map(|&v| Complex64::new(v, 0.0)),
        ));
        let back = &vectors * diag * vectors.adjoint();
        assert!((back - &m).norm() < 1e-12);
        let root = psd_sqrt(&values, &vectors);
        assert!((&root * &root - &m).norm() < 1e-12);
    }

    #[test]
    fn psd_detection() {
        let mut m = CMatrix::identity(2, 2);
        assert!(is_psd(&m));
        m[(1, 1)] = Complex64::new(-0.5, 0.0);
        assert!(!is_psd(&m));
        m[(1, 1)] = Complex64::new(1.0, 0.0);
        m[(0, 1)] = Complex64::new(0.3, 0.0);
        assert!(!is_psd(&m), "non-Hermitian input must be rejected");
    }
}
