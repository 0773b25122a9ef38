//! Observability indices and stacked output-derivative data.
//!
//! For a mode with matrix `A` and output row `cᵀ`, the stacked data
//! collects the output derivative coefficients `cᵀ, cᵀA, cᵀA², …` together
//! with the affine offsets they pick up from the drift `e` and the surface
//! offset `f`. The *observability index* `h` is the largest order at which
//! these rows remain independent; beyond it every further derivative row is
//! a fixed linear combination (the *companion row*) of the first `h+1`.

use nalgebra::{DMatrix, DVector, RowDVector};
use thiserror::Error;

use crate::linalg;
use crate::model::{BimodalSystem, ModeId};

/// Errors from the companion-row construction.
#[derive(Debug, Error)]
pub enum ObservabilityError {
    #[error(
        "companion-row residual {residual:e} exceeds tolerance {tol:e}: \
         the dependent derivative row is not reproduced by the stacked rows"
    )]
    ResidualTooLarge { residual: f64, tol: f64 },
}

/// Stacked output-derivative data of one mode up to order `k`:
/// `rows` is the (k+1)×n matrix with rows `cᵀ, cᵀA, …, cᵀAᵏ`, and
/// `offsets` is the (k+1)-vector `(f, cᵀe, cᵀAe, …, cᵀA^{k−1}e)`.
///
/// Along a mode trajectory, entry `j` of `rows·x + offsets` is (up to the
/// factorial normalization) the `j`-th time derivative of the switching
/// output `cᵀx + f`, which is why lexicographic signs of these vectors
/// decide on which side of the surface the flow moves.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedData {
    pub mode: ModeId,
    /// Stacking order `k` (the data has `k+1` rows).
    pub order: usize,
    pub rows: DMatrix<f64>,
    pub offsets: DVector<f64>,
}

impl StackedData {
    /// The lexicographic test vector `rows·x + offsets` at a state.
    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.rows * x + &self.offsets
    }
}

/// Build the stacked data of `mode` up to order `k` by propagating the
/// output row (`row_{j} = row_{j−1}·A`); no matrix power is ever formed.
pub fn stacked(sys: &BimodalSystem, mode: ModeId, k: usize) -> StackedData {
    let n = sys.n();
    let a = sys.a(mode);
    let e = sys.e(mode);
    let mut rows = DMatrix::zeros(k + 1, n);
    let mut offsets = DVector::zeros(k + 1);
    let mut row: RowDVector<f64> = sys.c().transpose();
    offsets[0] = sys.f();
    for j in 0..=k {
        rows.row_mut(j).copy_from(&row);
        if j < k {
            offsets[j + 1] = (&row * e)[0];
            row = &row * a;
        }
    }
    StackedData {
        mode,
        order: k,
        rows,
        offsets,
    }
}

/// The observability index of `(cᵀ, A)` for `mode`: the largest `h` such
/// that the rows `cᵀ, cᵀA, …, cᵀAʰ` are linearly independent. Computed by
/// appending one propagated row at a time and re-testing the rank, stopping
/// at the first dependent row. Since `c ≠ 0`, always `0 ≤ h ≤ n−1`.
pub fn observability_index(sys: &BimodalSystem, mode: ModeId, tol_rank: f64) -> usize {
    let n = sys.n();
    for k in 1..n {
        let data = stacked(sys, mode, k);
        if linalg::rank(&data.rows, tol_rank) < k + 1 {
            return k - 1;
        }
    }
    n - 1
}

/// Companion data of one mode.
#[derive(Debug, Clone)]
pub struct ObservabilityInfo {
    /// The observability index `h`.
    pub index: usize,
    /// Coefficients `p` with `cᵀA^{h+1} = pᵀ·[cᵀ; …; cᵀAʰ]`.
    pub companion: DVector<f64>,
    /// Extension matrix: row `j` (1-based) holds the coefficients of
    /// `cᵀA^{h+j}` over the independent rows, for `j = 1..=k`.
    pub extension: DMatrix<f64>,
}

/// Compute the observability index, companion row, and the extension matrix
/// expressing the next `k` dependent derivative rows over the independent
/// block. Each dependent row is obtained by propagation and solved against
/// the full-row-rank block; the solve residual is checked row by row.
pub fn companion(
    sys: &BimodalSystem,
    mode: ModeId,
    k: usize,
    tol_rank: f64,
    tol_fact: f64,
) -> Result<ObservabilityInfo, ObservabilityError> {
    let h = observability_index(sys, mode, tol_rank);
    let data = stacked(sys, mode, h);
    let block_t = data.rows.transpose();
    let a = sys.a(mode);

    let mut extension = DMatrix::zeros(k, h + 1);
    let mut companion_row = DVector::zeros(h + 1);
    // Propagate w = cᵀA^{h+j} forward and express each over the block.
    let mut w: RowDVector<f64> = data.rows.row(h) * a;
    for j in 1..=k.max(1) {
        let rhs = w.transpose();
        let coeffs = linalg::lstsq_vec(&block_t, &rhs, tol_rank);
        let residual = (&block_t * &coeffs - &rhs).amax();
        if residual > tol_fact {
            return Err(ObservabilityError::ResidualTooLarge {
                residual,
                tol: tol_fact,
            });
        }
        if j == 1 {
            companion_row = coeffs.clone();
        }
        if j <= k {
            extension.row_mut(j - 1).copy_from(&coeffs.transpose());
        }
        w = &w * a;
    }
    Ok(ObservabilityInfo {
        index: h,
        companion: companion_row,
        extension,
    })
}
