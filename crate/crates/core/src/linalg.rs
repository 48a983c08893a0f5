//! Small dense linear-algebra helpers shared by the other modules.

use nalgebra::{DMatrix, DVector};

use crate::C64;

pub type RMat = DMatrix<f64>;
pub type RVec = DVector<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub fn to_complex(m: &RMat) -> CMat {
    m.map(|v| C64::new(v, 0.0))
}

pub fn to_complex_vec(v: &RVec) -> CVec {
    v.map(|x| C64::new(x, 0.0))
}

/// Largest absolute entry.
pub fn max_abs(m: &RMat) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn max_abs_c(m: &CMat) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.norm()))
}

/// Matrix exponential (scaling and squaring with a Padé approximant).
pub fn expm(a: &RMat) -> RMat {
    a.clone().exp()
}

/// Symmetrize in place the way a Hessian expects: mirror the upper triangle.
pub fn mirror_upper(m: &mut RMat) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            m[(i, j)] = m[(j, i)];
        }
    }
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub fn hermitian_eigen(m: &CMat) -> (RVec, CMat) {
    let eig = m.clone().symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = RVec::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = CMat::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

pub fn hermitian_residual(m: &CMat) -> f64 {
    max_abs_c(&(m - m.adjoint()))
}

/// `exp(-i * scale * H)` for Hermitian `H`, via eigen-decomposition.
pub fn unitary_from_hermitian(h: &CMat, scale: f64) -> CMat {
    let (values, vectors) = hermitian_eigen(h);
    let phases = CVec::from_iterator(
        values.len(),
        values.iter().map(|&e| C64::from_polar(1.0, -scale * e)),
    );
    let mut scaled = vectors.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= phases[j];
    }
    scaled * vectors.adjoint()
}
