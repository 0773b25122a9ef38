//! Small dense linear-algebra helpers shared by the analysis modules.
//!
//! Everything here wraps nalgebra's SVD so that rank decisions, null-space
//! bases and least-squares solves all use one consistent threshold: a
//! singular value counts as nonzero when it exceeds `rel_tol` times the
//! largest singular value of the matrix.

use nalgebra::{DMatrix, DVector};

/// Numerical rank of `m` with relative singular-value threshold `rel_tol`.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let svd = m.clone().svd(false, false);
    let sigma_max = svd.singular_values.max();
    if sigma_max <= 0.0 {
        return 0;
    }
    svd.singular_values
        .iter()
        .filter(|s| **s > rel_tol * sigma_max)
        .count()
}

/// Minimum-norm least-squares solution of `A·x = b` (matrix right-hand side).
///
/// Singular values below `rel_tol·σ_max` are treated as zero, so for
/// rank-deficient `A` this returns the pseudo-inverse solution. The caller
/// is responsible for checking the residual when exact solvability matters.
pub fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let eps = if sigma_max > 0.0 { rel_tol * sigma_max } else { f64::MAX };
    svd.solve(b, eps)
        .expect("SVD was computed with both factors")
}

/// Minimum-norm least-squares solution of `A·x = b` (vector right-hand side).
pub fn lstsq_vec(a: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> DVector<f64> {
    let b_mat = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    let x = lstsq(a, &b_mat, rel_tol);
    DVector::from_column_slice(x.as_slice())
}

/// Orthonormal basis of the null space of `m`, returned as columns.
///
/// The basis can be empty (zero columns) when `m` has full column rank.
pub fn kernel(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let n = m.ncols();
    if m.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.expect("SVD was computed with V^T");
    let sigma_max = svd.singular_values.max();
    let r = if sigma_max > 0.0 {
        svd.singular_values
            .iter()
            .filter(|s| **s > rel_tol * sigma_max)
            .count()
    } else {
        0
    };
    // Rows r.. of V^T span the null space; nalgebra's thin SVD only carries
    // min(nrows, ncols) right singular vectors, so complete the basis by
    // orthogonalizing the coordinate directions against the row space.
    let carried = v_t.nrows();
    let mut basis_cols: Vec<DVector<f64>> = (r..carried)
        .map(|i| v_t.row(i).transpose())
        .collect();
    if carried < n {
        // Complete to a full orthonormal basis of the orthogonal complement.
        let mut have: Vec<DVector<f64>> = (0..r).map(|i| v_t.row(i).transpose()).collect();
        have.extend(basis_cols.iter().cloned());
        for j in 0..n {
            if have.len() >= n {
                break;
            }
            let mut cand = DVector::zeros(n);
            cand[j] = 1.0;
            for v in &have {
                let proj = v.dot(&cand);
                cand -= v * proj;
            }
            let norm = cand.norm();
            if norm > 1e-10 {
                let unit = cand / norm;
                have.push(unit.clone());
                basis_cols.push(unit);
            }
        }
    }
    let mut out = DMatrix::zeros(n, basis_cols.len());
    for (j, col) in basis_cols.iter().enumerate() {
        out.set_column(j, col);
    }
    out
}

/// `‖a·x − b‖_∞` — the worst-entry residual of a linear solve.
pub fn residual_inf(a: &DMatrix<f64>, x: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a * x - b).amax()
}

/// Largest singular value (spectral norm) of `m`.
pub fn opnorm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Classical fourth-order Runge–Kutta step of size `h` for `ẋ = field(x)`.
pub fn rk4_step<F>(field: F, x: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let k1 = field(x);
    let k2 = field(&(x + &k1 * (h / 2.0)));
    let k3 = field(&(x + &k2 * (h / 2.0)));
    let k4 = field(&(x + &k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}
