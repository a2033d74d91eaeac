//! Dense linear algebra helpers shared by the bound and estimator code.
//!
//! Every inverse in this crate goes through one of the factorizations here.
//! Symmetric positive definite systems are Jacobi-equilibrated before the
//! Cholesky factorization and the condition number is measured on the
//! equilibrated matrix, so mixed physical units (meters against squared
//! speeds) do not trip the guard on their own.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen, LU};

/// Largest condition number accepted by any solve.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinalgError {
    /// Nonpositive diagonal entry or failed Cholesky factorization.
    NotPositiveDefinite,
    /// Condition number above [`MAX_CONDITION`].
    IllConditioned(f64),
    /// Exactly singular (LU pivot is zero).
    Singular,
}

impl LinalgError {
    pub fn condition(&self) -> f64 {
        match self {
            LinalgError::IllConditioned(c) => *c,
            _ => f64::INFINITY,
        }
    }
}

/// Cholesky factorization of `D A D`, `D = diag(a_ii^{-1/2})`.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    scale: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    condition: f64,
}

impl SpdFactor {
    pub fn new(a: &DMatrix<f64>) -> Result<Self, LinalgError> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "SpdFactor needs a square matrix");
        let mut scale = DVector::zeros(n);
        for i in 0..n {
            let d = a[(i, i)];
            if !(d > 0.0) || !d.is_finite() {
                return Err(LinalgError::NotPositiveDefinite);
            }
            scale[i] = 1.0 / d.sqrt();
        }
        let mut eq = symmetrize(a);
        for j in 0..n {
            for i in 0..n {
                eq[(i, j)] *= scale[i] * scale[j];
            }
        }
        let condition = spd_condition(&eq);
        if !(condition <= MAX_CONDITION) {
            return Err(LinalgError::IllConditioned(condition));
        }
        let chol = Cholesky::new(eq).ok_or(LinalgError::NotPositiveDefinite)?;
        Ok(SpdFactor {
            scale,
            chol,
            condition,
        })
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    /// Condition number of the equilibrated matrix.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// `A⁻¹ B`.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        scale_rows(&mut x, &self.scale);
        self.chol.solve_mut(&mut x);
        scale_rows(&mut x, &self.scale);
        x
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.component_mul(&self.scale);
        self.chol.solve_mut(&mut x);
        x.component_mul_assign(&self.scale);
        x
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        symmetrize(&self.solve(&DMatrix::identity(self.dim(), self.dim())))
    }

    /// `L⁻¹ D X`, so that `whiten(X)ᵀ whiten(Y) = Xᵀ A⁻¹ Y`.
    pub fn whiten(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x.clone();
        scale_rows(&mut y, &self.scale);
        let l = self.chol.l_dirty();
        l.solve_lower_triangular_mut(&mut y);
        y
    }

    pub fn whiten_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = x.component_mul(&self.scale);
        let l = self.chol.l_dirty();
        l.solve_lower_triangular_mut(&mut y);
        y
    }
}

fn scale_rows<C: nalgebra::Dim, S>(x: &mut nalgebra::Matrix<f64, Dyn, C, S>, scale: &DVector<f64>)
where
    S: nalgebra::StorageMut<f64, Dyn, C>,
{
    for (i, mut row) in x.row_iter_mut().enumerate() {
        row *= scale[i];
    }
}

fn spd_condition(eq: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(eq.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// `(A + Aᵀ)/2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Solve a general square system `A X = B` with row and column
/// equilibration and the same condition guard as the symmetric path.
pub fn lu_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "lu_solve needs a square matrix");
    let mut scaled = a.clone();
    let mut rhs = b.clone();
    for i in 0..n {
        let m = scaled.row(i).amax();
        if m == 0.0 || !m.is_finite() {
            return Err(LinalgError::Singular);
        }
        scaled.row_mut(i).scale_mut(1.0 / m);
        rhs.row_mut(i).scale_mut(1.0 / m);
    }
    let mut col_scale = DVector::zeros(n);
    for j in 0..n {
        let m = scaled.column(j).amax();
        if m == 0.0 {
            return Err(LinalgError::Singular);
        }
        col_scale[j] = 1.0 / m;
        scaled.column_mut(j).scale_mut(1.0 / m);
    }
    let sv = scaled.singular_values();
    let cond = sv.max() / sv.min();
    if !(cond <= MAX_CONDITION) {
        return Err(LinalgError::IllConditioned(cond));
    }
    let mut x = LU::new(scaled).solve(&rhs).ok_or(LinalgError::Singular)?;
    scale_rows(&mut x, &col_scale);
    Ok(x)
}

/// `A⁻¹` through [`lu_solve`].
pub fn lu_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    lu_solve(a, &DMatrix::identity(a.nrows(), a.nrows()))
}

/// Square root `L` of a symmetric positive semidefinite matrix
/// (`cov = L Lᵀ`) by Cholesky with complete diagonal pivoting.
///
/// Pivots below `1e-10 · max(diag)` end the factorization, which leaves the
/// trailing columns at zero and handles rank-deficient covariances. A pivot
/// more negative than that tolerance is reported as `Err((index, pivot))`.
pub fn psd_sqrt(cov: &DMatrix<f64>) -> Result<DMatrix<f64>, (usize, f64)> {
    let n = cov.nrows();
    assert_eq!(n, cov.ncols(), "psd_sqrt needs a square matrix");
    let max_diag = (0..n).map(|i| cov[(i, i)]).fold(0.0_f64, f64::max);
    let mut l = DMatrix::zeros(n, n);
    if max_diag <= 0.0 {
        return match (0..n).find(|&i| cov[(i, i)] < 0.0) {
            Some(i) => Err((i, cov[(i, i)])),
            None => Ok(l),
        };
    }
    let tol = 1e-10 * max_diag;
    let mut a = symmetrize(cov);
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        // pivot on the largest remaining diagonal
        let (p, &pivot) = (k..n)
            .map(|i| (i, &a[(i, i)]))
            .max_by(|x, y| x.1.total_cmp(y.1))
            .expect("nonempty");
        if pivot < -tol {
            return Err((perm[p], pivot));
        }
        if pivot <= tol {
            let worst = (k..n).map(|i| a[(i, i)]).fold(f64::INFINITY, f64::min);
            if worst < -tol {
                return Err((k, worst));
            }
            break;
        }
        a.swap_rows(k, p);
        a.swap_columns(k, p);
        l.swap_rows(k, p);
        perm.swap(k, p);
        let d = pivot.sqrt();
        l[(k, k)] = d;
        for i in k + 1..n {
            l[(i, k)] = a[(i, k)] / d;
        }
        for j in k + 1..n {
            for i in j..n {
                let v = a[(i, j)] - l[(i, k)] * l[(j, k)];
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
    }
    // undo the permutation: cov = Pᵀ L Lᵀ P
    let mut out = DMatrix::zeros(n, n);
    for (row, &orig) in perm.iter().enumerate() {
        out.set_row(orig, &l.row(row));
    }
    Ok(out)
}

/// Smallest eigenvalue relative to the largest in magnitude.
pub fn relative_min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(symmetrize(a));
    let scale = eig.eigenvalues.amax();
    if scale == 0.0 {
        0.0
    } else {
        eig.eigenvalues.min() / scale
    }
}

/// Block-diagonal matrix of the given square blocks.
pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let m: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(n, m);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// `‖A − B‖_F / ‖B‖_F`; zero when both vanish.
pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let diff = (a - b).norm();
    let base = b.norm();
    if base == 0.0 {
        diff
    } else {
        diff / base
    }
}
