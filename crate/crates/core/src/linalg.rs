//! Small dense linear-algebra helpers shared across modules.

use nalgebra::DMatrix;

/// Pivot floor used by the Cholesky-based definiteness test.
pub const PD_DIAG_FLOOR: f64 = 1e-12;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn symmetrize_in_place(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn is_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn is_square(m: &DMatrix<f64>) -> bool {
    m.nrows() == m.ncols()
}

/// Relative asymmetry `‖M − Mᵀ‖_F / max(1, ‖M‖_F)`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    if !is_square(m) {
        return f64::INFINITY;
    }
    frobenius(&(m - m.transpose())) / frobenius(m).max(1.0)
}

/// Positive definiteness via an explicit Cholesky sweep whose pivots must all
/// exceed [`PD_DIAG_FLOOR`].
pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    if !is_square(m) || !is_finite(m) {
        return false;
    }
    let n = m.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > PD_DIAG_FLOOR) {
            return false;
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = 0.5 * (m[(i, j)] + m[(j, i)]);
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    true
}

pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut v: Vec<f64> = symmetrize(m).symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).first().copied().unwrap_or(0.0)
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).last().copied().unwrap_or(0.0)
}

/// Smallest singular value divided by the largest (0 for the zero matrix).
pub fn relative_min_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    let sv = m.clone().singular_values();
    let max = sv.max();
    if max <= 0.0 || !max.is_finite() {
        return 0.0;
    }
    sv.min() / max
}

/// Symmetric vectorization: diagonal entries as-is, each off-diagonal pair
/// once scaled by √2, so that `‖svec(Y)‖₂ = ‖Y‖_F`.
pub fn svec(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for j in 0..n {
        for i in 0..=j {
            if i == j {
                out.push(m[(i, i)]);
            } else {
                out.push(std::f64::consts::SQRT_2 * 0.5 * (m[(i, j)] + m[(j, i)]));
            }
        }
    }
    out
}

/// Solves `K Σ = U` for `K` given symmetric positive definite `Σ`.
pub fn right_solve_spd(u: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if !is_positive_definite(sigma) {
        return None;
    }
    let chol = symmetrize(sigma).cholesky()?;
    // Σ Kᵀ = Uᵀ
    let kt = chol.solve(&u.transpose());
    is_finite(&kt).then(|| kt.transpose())
}

/// Square root factor `L` with `L Lᵀ = S`. Falls back to an eigendecomposition
/// with negative eigenvalues clipped at zero when `S` is only semidefinite.
pub fn psd_factor(s: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = symmetrize(s);
    if let Some(chol) = sym.clone().cholesky() {
        return chol.l();
    }
    let eig = sym.symmetric_eigen();
    let mut scaled = eig.eigenvectors.clone();
    for (j, lam) in eig.eigenvalues.iter().enumerate() {
        let r = lam.max(0.0).sqrt();
        scaled.column_mut(j).scale_mut(r);
    }
    scaled
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svec_norm_matches_frobenius() {
        let y = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0]);
        let v = svec(&y);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 18f64.sqrt()).abs() < 1e-14);
        assert!((norm - frobenius(&y)).abs() < 1e-14);
    }

    #[test]
    fn pd_checks() {
        assert!(is_positive_definite(&DMatrix::identity(3, 3)));
        assert!(!is_positive_definite(&DMatrix::zeros(2, 2)));
        let semi = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(!is_positive_definite(&semi));
        let f = psd_factor(&semi);
        assert!(frobenius(&(&f * f.transpose() - &semi)) < 1e-12);
    }

    #[test]
    fn right_solve_recovers_gain() {
        let sigma = DMatrix::from_row_slice(2, 2, &[5.0, -1.0, -1.0, 1.0]);
        let k = DMatrix::from_row_slice(1, 2, &[0.3, -2.0]);
        let u = &k * &sigma;
        let rec = right_solve_spd(&u, &sigma).unwrap();
        assert!(frobenius(&(rec - k)) < 1e-12);
    }
}
