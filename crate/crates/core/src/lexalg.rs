//! Lexicographic sign tests and the triangular row-factorization machinery.
//!
//! Two recurring questions drive the well-posedness checkers:
//!
//! 1. Given the stacked output-derivative rows `T1`, `T2` of the two modes,
//!    is there a lower-triangular matrix `M` with positive diagonal such
//!    that `T1 = M·T2`? Such an `M` maps mode-2 output data onto mode-1
//!    output data row by row while preserving lexicographic order.
//! 2. Does one lexicographic inequality imply another, i.e. does
//!    `P1·x ≺ q1` force `P2·x ⪯ q2` for all `x`? This has an exact
//!    algebraic characterization in terms of the same triangular factors.
//!
//! All order decisions share one tolerance: entries within `tol` of zero
//! are treated as zero, so strict comparisons fail on values that are
//! merely noise.

use nalgebra::{DMatrix, DVector, RowDVector};
use thiserror::Error;

use crate::linalg;

/// Trichotomy of the lexicographic order: the sign of the first entry of a
/// vector that exceeds the tolerance in magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum LexSign {
    Negative,
    Zero,
    Positive,
}

impl LexSign {
    /// `true` for `Negative` and `Zero` — the vector is ⪯ 0.
    pub fn is_nonpositive(self) -> bool {
        matches!(self, LexSign::Negative | LexSign::Zero)
    }

    /// `true` for `Positive` and `Zero` — the vector is ⪰ 0.
    pub fn is_nonnegative(self) -> bool {
        matches!(self, LexSign::Positive | LexSign::Zero)
    }
}

/// Lexicographic sign of `v`: the sign of its first entry with `|entry| > tol`,
/// or `Zero` when every entry is within `tol` of zero.
pub fn lex_sign(v: &DVector<f64>, tol: f64) -> LexSign {
    for &entry in v.iter() {
        if entry > tol {
            return LexSign::Positive;
        }
        if entry < -tol {
            return LexSign::Negative;
        }
    }
    LexSign::Zero
}

/// Errors from the factorization and implication procedures.
#[derive(Debug, Error)]
pub enum LexalgError {
    #[error(
        "unsupported rank deficiency: the lower {deficiency} rows of the \
         right factor are dependent; only a single dependent last row is handled"
    )]
    RankDeficiencyUnsupported { deficiency: usize },
    #[error("the implication sides must have full row rank")]
    NotFullRowRank,
}

/// Outcome of factoring `T1 = M·T2` with `M` lower triangular and positive
/// on the diagonal.
#[derive(Debug, Clone)]
pub enum TriangularFactorization {
    /// No such factor exists (residual, triangularity, or diagonal sign
    /// fails).
    None,
    /// `T2` has full row rank, so the factor is unique.
    Unique(DMatrix<f64>),
    /// Exactly the last row of `T2` is dependent: the factor is a
    /// one-parameter family in the last diagonal entry α > 0.
    Parametric(ParametricFactor),
}

/// One-parameter family of factors `M̂(α)`: the leading block is fixed, and
/// the last row is `last_row_base + α·last_row_direction` (whose diagonal
/// slot contributes exactly α).
#[derive(Debug, Clone)]
pub struct ParametricFactor {
    /// Fixed (k−1)×(k−1) leading block, lower triangular, positive diagonal.
    pub leading: DMatrix<f64>,
    /// Base of the last row (length k, zero in the diagonal slot).
    pub last_row_base: RowDVector<f64>,
    /// Direction of the last row (length k, one in the diagonal slot).
    pub last_row_direction: RowDVector<f64>,
}

impl ParametricFactor {
    /// The concrete k×k factor for a given α.
    pub fn instantiate(&self, alpha: f64) -> DMatrix<f64> {
        let k = self.last_row_base.len();
        let mut m = DMatrix::zeros(k, k);
        m.view_mut((0, 0), (k - 1, k - 1)).copy_from(&self.leading);
        for j in 0..k {
            m[(k - 1, j)] = self.last_row_base[j] + alpha * self.last_row_direction[j];
        }
        m
    }
}

/// Is `m` lower triangular (above-diagonal entries within `tol_fact`) with
/// every diagonal entry exceeding `tol_diag`?
pub fn is_lower_triangular_positive(m: &DMatrix<f64>, tol_fact: f64, tol_diag: f64) -> bool {
    let k = m.nrows();
    for i in 0..k {
        if m[(i, i)] <= tol_diag {
            return false;
        }
        for j in (i + 1)..k {
            if m[(i, j)].abs() > tol_fact {
                return false;
            }
        }
    }
    true
}

/// Solve for the unique coefficient matrix `M` with `rows1 = M·rows2`, if the
/// rows of `rows1` lie in the row space of `rows2`. Returns `None` when the
/// residual exceeds `tol_fact`. No triangularity is imposed here.
fn coefficient_matrix(
    rows1: &DMatrix<f64>,
    rows2: &DMatrix<f64>,
    tol_rank: f64,
    tol_fact: f64,
) -> Option<DMatrix<f64>> {
    // M·rows2 = rows1  ⇔  rows2ᵀ·Mᵀ = rows1ᵀ.
    let mt = linalg::lstsq(&rows2.transpose(), &rows1.transpose(), tol_rank);
    let m = mt.transpose();
    if (&m * rows2 - rows1).amax() <= tol_fact {
        Some(m)
    } else {
        None
    }
}

/// Factor `T1 = M·T2` with `M` lower triangular and positive on the diagonal.
///
/// - When `T2` has full row rank the candidate factor is unique: it is
///   computed by least squares and then tested for residual, triangularity
///   and diagonal positivity (`Unique` or `None`).
/// - When exactly the last row of `T2` is dependent on the rows above it,
///   the diagonal entry of the last row is a free parameter α and the rest
///   of the last row moves affinely with it (`Parametric` or `None`).
/// - Deeper rank deficiency is outside this procedure's scope and is
///   reported as an error.
pub fn solve_triangular_factor(
    t1: &DMatrix<f64>,
    t2: &DMatrix<f64>,
    tol_rank: f64,
    tol_fact: f64,
    tol_diag: f64,
) -> Result<TriangularFactorization, LexalgError> {
    assert_eq!(t1.nrows(), t2.nrows(), "factor sides must have equal shape");
    assert_eq!(t1.ncols(), t2.ncols(), "factor sides must have equal shape");
    let k = t2.nrows();
    let r2 = linalg::rank(t2, tol_rank);
    if r2 == k {
        let m = match coefficient_matrix(t1, t2, tol_rank, tol_fact) {
            Some(m) => m,
            None => return Ok(TriangularFactorization::None),
        };
        if is_lower_triangular_positive(&m, tol_fact, tol_diag) {
            return Ok(TriangularFactorization::Unique(m));
        }
        return Ok(TriangularFactorization::None);
    }

    // Rank-deficient right factor: only "exactly the last row dependent,
    // rows above independent" is supported.
    let top2 = t2.rows(0, k - 1).into_owned();
    if k == 0 || linalg::rank(&top2, tol_rank) != k - 1 {
        return Err(LexalgError::RankDeficiencyUnsupported {
            deficiency: k - r2,
        });
    }

    let top1 = t1.rows(0, k - 1).into_owned();
    let leading = match coefficient_matrix(&top1, &top2, tol_rank, tol_fact) {
        Some(m) => m,
        None => return Ok(TriangularFactorization::None),
    };
    if !is_lower_triangular_positive(&leading, tol_fact, tol_diag) {
        return Ok(TriangularFactorization::None);
    }

    // Last row of the family: T1[k−1] = w·top2 + α·T2[k−1] for every α, with
    // T2[k−1] = p·top2 itself dependent. Writing the last row of M̂ as
    // (w − α·p | α) makes the identity hold for all α simultaneously.
    let last1 = t1.row(k - 1).transpose().into_owned();
    let w = linalg::lstsq_vec(&top2.transpose(), &last1, tol_rank);
    if (top2.transpose() * &w - &last1).amax() > tol_fact {
        return Ok(TriangularFactorization::None);
    }
    let last2 = t2.row(k - 1).transpose().into_owned();
    let p = linalg::lstsq_vec(&top2.transpose(), &last2, tol_rank);
    debug_assert!(
        (top2.transpose() * &p - &last2).amax() <= tol_fact.max(1e-12),
        "dependent last row must lie in the span of the rows above"
    );

    let mut base = RowDVector::zeros(k);
    let mut dir = RowDVector::zeros(k);
    for j in 0..k - 1 {
        base[j] = w[j];
        dir[j] = -p[j];
    }
    dir[k - 1] = 1.0;
    Ok(TriangularFactorization::Parametric(ParametricFactor {
        leading,
        last_row_base: base,
        last_row_direction: dir,
    }))
}

/// Which branch of the implication certificate applied.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub enum LexImplication {
    /// `P1·x ≺ q1 ⟹ P2·x ⪯ q2` holds; the witness records either the full
    /// equality factor (`level == m`, `strict == false`) or a leading-block
    /// factor with a strictly lex-smaller offset (`strict == true`).
    Holds {
        level: usize,
        strict: bool,
        factor: Vec<Vec<f64>>,
    },
    /// The implication fails; `break_level` is the first leading-block size
    /// at which no admissible factor exists (`m + 1` when all factors exist
    /// but neither branch's side condition is met).
    Fails { break_level: usize },
}

/// Decide whether `P1·x ≺ q1` implies `P2·x ⪯ q2` for every `x`.
///
/// Requires both `P1` and `P2` (m×n, m ≤ n) to have full row rank. The
/// implication holds iff either
///
/// - `P1 = M·P2` and `q1 = M·q2` for a lower-triangular `M` with positive
///   diagonal, or
/// - for some leading block size ℓ ∈ 1..=m, `P1^[ℓ] = M·P2^[ℓ]` with such an
///   `M` and `q1^[ℓ] ≺ M·q2^[ℓ]` strictly.
///
/// Because the leading blocks of the (unique) factors are nested, the first
/// level at which no admissible factor exists rules out all later levels,
/// which makes the procedure a finite exact decision.
pub fn decide_lex_implication(
    p1: &DMatrix<f64>,
    q1: &DVector<f64>,
    p2: &DMatrix<f64>,
    q2: &DVector<f64>,
    tol_rank: f64,
    tol_fact: f64,
    tol_diag: f64,
    tol_lex: f64,
) -> Result<LexImplication, LexalgError> {
    let m = p1.nrows();
    assert_eq!(p2.nrows(), m, "implication sides must have equal row count");
    assert_eq!(q1.len(), m);
    assert_eq!(q2.len(), m);
    if linalg::rank(p1, tol_rank) != m || linalg::rank(p2, tol_rank) != m {
        return Err(LexalgError::NotFullRowRank);
    }

    for level in 1..=m {
        let lead1 = p1.rows(0, level).into_owned();
        let lead2 = p2.rows(0, level).into_owned();
        let factor = match coefficient_matrix(&lead1, &lead2, tol_rank, tol_fact) {
            Some(f) if is_lower_triangular_positive(&f, tol_fact, tol_diag) => f,
            // Nested uniqueness: once a level breaks, every larger level
            // contains the same failing block.
            _ => return Ok(LexImplication::Fails { break_level: level }),
        };
        let offset = q1.rows(0, level).into_owned() - &factor * q2.rows(0, level).into_owned();
        if lex_sign(&offset, tol_lex) == LexSign::Negative {
            return Ok(LexImplication::Holds {
                level,
                strict: true,
                factor: matrix_rows(&factor),
            });
        }
        if level == m && offset.amax() <= tol_fact {
            return Ok(LexImplication::Holds {
                level,
                strict: false,
                factor: matrix_rows(&factor),
            });
        }
    }
    Ok(LexImplication::Fails { break_level: m + 1 })
}

/// Row-major copy of a matrix, for serializable certificates.
pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}
