use nalgebra::{DVector, SymmetricEigen};

use super::program::HMat;
use crate::C64;

fn is_hermitian(h: &HMat) -> bool {
    let scale = h.iter().map(|v| v.norm()).fold(1.0, f64::max);
    h.is_square() && (h - h.adjoint()).iter().all(|v| v.norm() <= 1e-10 * scale)
}

fn psd_part(h: &HMat) -> HMat {
    let eig = SymmetricEigen::new(h.clone());
    let vals = eig.eigenvalues.map(|v| C64::new(v.max(0.0), 0.0));
    let v = &eig.eigenvectors;
    v * HMat::from_diagonal(&vals) * v.adjoint()
}

/// Nearest point (Frobenius) of `{B ⪰ 0, diag(B) = 1}` by Dykstra's
/// alternating projections.
pub fn project_unit_diag_psd(h: &HMat) -> Result<HMat, String> {
    if !is_hermitian(h) {
        return Err("input is not Hermitian".into());
    }
    let d = h.nrows();
    let mut x = (h + h.adjoint()) * C64::new(0.5, 0.0);
    let mut p = HMat::zeros(d, d);
    let mut q = HMat::zeros(d, d);
    for _ in 0..20_000 {
        let y = psd_part(&(&x + &p));
        p = &x + &p - &y;
        let mut nx = &y + &q;
        for i in 0..d {
            nx[(i, i)] = C64::new(1.0, 0.0);
        }
        q = &y + &q - &nx;
        let gap = (&nx - &y).norm();
        x = nx;
        if gap < 1e-9 {
            break;
        }
    }
    Ok((&x + x.adjoint()) * C64::new(0.5, 0.0))
}

/// Largest eigenvalue and unit eigenvector of a Hermitian PSD matrix by
/// power iteration from `e_1` plus a small fixed perturbation, falling back
/// to a full eigendecomposition when iteration stalls.
pub fn principal_eigen(b: &HMat) -> (f64, DVector<C64>) {
    let d = b.nrows();
    let mut v = DVector::from_fn(d, |i, _| C64::new(if i == 0 { 1.0 } else { 1e-3 / (i + 1) as f64 }, 0.0));
    v /= C64::new(v.norm(), 0.0);
    for _ in 0..5000 {
        let w = b * &v;
        let lambda = v.dotc(&w).re;
        let resid = (&w - &v * C64::new(lambda, 0.0)).norm();
        if resid <= 1e-10 * lambda.abs().max(1e-300) {
            return (lambda, v);
        }
        let nw = w.norm();
        if nw == 0.0 {
            break;
        }
        v = w / C64::new(nw, 0.0);
    }
    let eig = SymmetricEigen::new(b.clone());
    let (idx, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &l)| if l > acc.1 { (i, l) } else { acc });
    (eig.eigenvalues[idx], eig.eigenvectors.column(idx).into_owned())
}
