//! Small dense helpers shared by the channel, FIM and solver modules.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub(crate) const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub(crate) const J: Complex64 = Complex64::new(0.0, 1.0);

#[inline]
pub(crate) fn real(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// `Re Tr(Aᴴ B)`, the real inner product on complex matrices.
pub fn inner(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

/// Eigen-decomposition of a Hermitian matrix with eigenvalues sorted in
/// descending order. Equal eigenvalues keep the solver's column order.
pub fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), CMatrix::zeros(0, 0));
    }
    // A diagonal input is already decomposed; skipping the solver keeps ties exact.
    let off_diag = m
        .iter()
        .enumerate()
        .filter(|(idx, _)| idx % n != idx / n)
        .all(|(_, v)| *v == ZERO);
    let (values, vectors) = if off_diag {
        (
            (0..n).map(|i| m[(i, i)].re).collect::<Vec<_>>(),
            CMatrix::identity(n, n),
        )
    } else {
        let eig = hermitian_part(m).symmetric_eigen();
        (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let sorted_values = order.iter().map(|&i| values[i]).collect();
    let sorted_vectors = CMatrix::from_fn(n, n, |r, c| vectors[(r, order[c])]);
    (sorted_values, sorted_vectors)
}

/// Projection onto the Hermitian PSD cone by eigenvalue clipping.
pub fn project_psd(m: &CMatrix) -> CMatrix {
    let n = m.nrows();
    let (values, vectors) = hermitian_eigen(m);
    let mut out = CMatrix::zeros(n, n);
    for (i, &lambda) in values.iter().enumerate() {
        if lambda <= 0.0 {
            break;
        }
        let v = vectors.column(i);
        out += (&v * v.adjoint()).scale(lambda);
    }
    hermitian_part(&out)
}

pub fn min_eigenvalue(m: &CMatrix) -> f64 {
    hermitian_eigen(m).0.last().copied().unwrap_or(0.0)
}

/// Eigenvalues of a real symmetric matrix in ascending order.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let mut vals: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    vals
}

pub fn kron(a: &CVector, b: &CVector) -> CVector {
    CVector::from_fn(a.len() * b.len(), |i, _| a[i / b.len()] * b[i % b.len()])
}

pub fn outer(a: &CVector) -> CMatrix {
    a * a.adjoint()
}

/// Wraps an angle to (−π, π].
pub fn wrap_angle(x: f64) -> f64 {
    use std::f64::consts::PI;
    if x > -PI && x <= PI {
        return x;
    }
    let mut y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    }
    y
}
