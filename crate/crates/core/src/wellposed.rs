//! Condition checkers and the verdict lattice for existence, uniqueness and
//! Zeno-freeness of Filippov solutions.
//!
//! Each checker decides one algebraic condition on the pair of modes and
//! returns a [`ConditionVerdict`] carrying a machine-checkable certificate.
//! [`analyze`] runs all of them and combines the outcomes through a fixed
//! lattice of proven implications:
//!
//! 1. fields continuous across the surface → unique everywhere;
//! 2. first-order lexicographic dominance (order-1 data) → unique everywhere;
//! 3. output matching *and* field agreement on the vanishing-output set →
//!    unique everywhere, Zeno-free, and every solution is classical in both
//!    time directions;
//! 4. for homogeneous systems the linear-case test decides exactly;
//! 5. second-order dominance (order-2 data) → unique outside a thin
//!    exception set of surface states;
//! 6. if dominance, index-gap and matching all fail, uniqueness fails and a
//!    branching witness state exists;
//! 7. otherwise the analysis is inconclusive (dominance at orders ≥ 3 alone
//!    is not known to decide uniqueness).
//!
//! Left-uniqueness is the same lattice applied to the time-reversed system.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::lexalg::{
    is_lower_triangular_positive, lex_sign, matrix_rows, solve_triangular_factor, LexSign,
    LexalgError, ParametricFactor, TriangularFactorization,
};
use crate::linalg;
use crate::model::{BimodalSystem, ModeId};
use crate::observability::{companion, observability_index, stacked};
use crate::sampling;
use crate::wsets::{classify_initial_state, Continuation};

/// Decision tolerances shared by every checker.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ToleranceSet {
    /// Relative singular-value threshold for rank decisions
    /// (a singular value counts when it exceeds `tol_rank`·σ_max).
    pub tol_rank: f64,
    /// Absolute bound on factorization and equality residuals.
    pub tol_fact: f64,
    /// Smallest value a factor's diagonal entry must exceed.
    pub tol_diag: f64,
    /// Zero window for lexicographic signs and strict inequalities: values
    /// in (−tol_lex, tol_lex) count as zero, so strict tests fail on them.
    pub tol_lex: f64,
}

impl Default for ToleranceSet {
    fn default() -> Self {
        Self {
            tol_rank: 1e-9,
            tol_fact: 1e-8,
            tol_diag: 1e-8,
            tol_lex: 1e-9,
        }
    }
}

/// Identifiers of the checkable conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionId {
    /// The two fields agree on the surface.
    Continuity,
    /// The convexified right-hand side is one-sided Lipschitz.
    OneSidedLipschitz,
    /// Strict lexicographic dominance of mode 1's output data over mode 2's
    /// through a triangular row map, at some order k.
    OutputDominance,
    /// Unequal observability indices with matched data and the right sign
    /// on the first divergent derivative.
    IndexGap,
    /// Equal indices and exactly matched extended output data through a
    /// one-parameter triangular family.
    OutputMatching,
    /// On states whose extended mode-1 output data vanishes, the two
    /// fields coincide.
    FieldAgreement,
    /// Dominance restricted to order-1 data.
    FirstOrderDominance,
    /// Dominance restricted to order-2 data.
    SecondOrderDominance,
    /// Exact uniqueness test for homogeneous systems (e = 0, f = 0).
    LinearCase,
    /// No accumulation of mode switches (certified via matching+agreement).
    ZenoFree,
}

/// Machine-checkable witness data attached to a verdict.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Certificate {
    /// `A1−A2 = g·cᵀ` and `e1−e2 = f·g + mu·c` with `mu ≥ 0`; `bound` is
    /// the resulting one-sided Lipschitz constant (largest logarithmic
    /// norm of the two mode matrices).
    Lipschitz { g: Vec<f64>, mu: f64, bound: f64 },
    /// `A1−A2 = g·cᵀ` and `e1−e2 = f·g`: the fields agree on the surface.
    Continuity { g: Vec<f64> },
    /// Triangular factor between order-(k) stacked data with a strictly
    /// lex-positive offset difference. `alpha` is the instantiated last
    /// diagonal entry when the factor came from a one-parameter family.
    Dominance {
        k: usize,
        factor: Vec<Vec<f64>>,
        alpha: Option<f64>,
        difference: Vec<f64>,
    },
    /// One-parameter family matched exactly: `factor` is the instantiated
    /// map with last diagonal `alpha`; `rho1`/`rho2` are the two modes'
    /// surplus output drives whose ratio fixes alpha. Present (without
    /// `alpha`) on failing verdicts too, as diagnostic data.
    Matching {
        factor: Option<Vec<Vec<f64>>>,
        alpha: Option<f64>,
        rho1: f64,
        rho2: f64,
    },
    /// Index-gap certificate: the level-h factor and the signed surplus
    /// drive of the lower-index mode.
    Gap {
        factor: Vec<Vec<f64>>,
        deficient_mode: ModeId,
        surplus: f64,
    },
    /// Field agreement on the vanishing-output set: either the defining
    /// system is infeasible (`vacuous`, with the least-squares residual as
    /// evidence) or a particular solution plus the kernel check passed.
    Agreement {
        vacuous: bool,
        residual: f64,
        witness: Option<Vec<f64>>,
    },
    /// Homogeneous-case certificate: the level-h factor (the kernel
    /// condition is re-checkable from the system alone).
    Linear { factor: Vec<Vec<f64>> },
}

/// Outcome of one condition check.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionVerdict {
    pub id: ConditionId,
    /// Whether the condition holds. Inapplicable conditions report `false`.
    pub holds: bool,
    /// Whether the condition's hypotheses apply to this system at all
    /// (e.g. the index-gap condition needs unequal indices).
    pub applicable: bool,
    pub certificate: Option<Certificate>,
    /// Human-readable detail: which sub-test decided, vacuity, etc.
    pub note: String,
}

impl ConditionVerdict {
    fn new(id: ConditionId) -> Self {
        Self {
            id,
            holds: false,
            applicable: true,
            certificate: None,
            note: String::new(),
        }
    }
}

/// Uniqueness verdict in one time direction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Uniqueness {
    /// Solutions are unique from every initial state.
    UniqueEverywhere { via: Vec<ConditionId> },
    /// Unique from every state outside the thin exception set tied to the
    /// order-2 dominance condition.
    UniqueOutsideExceptionSet,
    /// Uniqueness fails; `witness` is a state with several continuations
    /// when the search found one.
    NotUnique { witness: Option<Vec<f64>> },
    /// None of the implications applies in either direction.
    Inconclusive,
}

/// Status of a property that is either certified by the algebra or unknown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CertStatus {
    Certified,
    Unknown,
}

/// A special state found while scanning the surface algebra.
#[derive(Debug, Clone, Serialize)]
pub struct StateAnnotation {
    pub state: Vec<f64>,
    pub continuation: Continuation,
    pub note: String,
}

/// Complete analysis result.
#[derive(Debug, Clone, Serialize)]
pub struct WellPosednessReport {
    pub conditions: Vec<ConditionVerdict>,
    pub right_uniqueness: Uniqueness,
    /// The same lattice evaluated on the time-reversed system.
    pub left_uniqueness: Uniqueness,
    pub zeno_free: CertStatus,
    pub forward_caratheodory: CertStatus,
    pub backward_caratheodory: CertStatus,
    pub annotations: Vec<StateAnnotation>,
    pub tolerances: ToleranceSet,
}

// ---------------------------------------------------------------------------
// Level data: factor between the two modes' stacked data at one order.
// ---------------------------------------------------------------------------

/// Factorization of the order-`k` data `T1 = M·T2` together with the offset
/// difference δ = 𝐞1 − M·𝐞2 it induces.
enum LevelOutcome {
    /// No admissible factor at this order.
    NoFactor,
    /// Unique factor (full-row-rank right side).
    Fixed { factor: DMatrix<f64>, delta: DVector<f64> },
    /// One-parameter family: δ(α) = `delta0` + α·`delta_dir`, where only
    /// the last entry of `delta_dir` is nonzero.
    Family {
        family: ParametricFactor,
        delta0: DVector<f64>,
        delta_dir: DVector<f64>,
    },
}

fn factor_level(
    sys: &BimodalSystem,
    k: usize,
    tols: &ToleranceSet,
) -> Result<LevelOutcome, LexalgError> {
    let d1 = stacked(sys, ModeId::Mode1, k);
    let d2 = stacked(sys, ModeId::Mode2, k);
    match solve_triangular_factor(&d1.rows, &d2.rows, tols.tol_rank, tols.tol_fact, tols.tol_diag)?
    {
        TriangularFactorization::None => Ok(LevelOutcome::NoFactor),
        TriangularFactorization::Unique(factor) => {
            let delta = &d1.offsets - &factor * &d2.offsets;
            Ok(LevelOutcome::Fixed { factor, delta })
        }
        TriangularFactorization::Parametric(family) => {
            let delta0 = &d1.offsets - family.instantiate(0.0) * &d2.offsets;
            let delta1 = &d1.offsets - family.instantiate(1.0) * &d2.offsets;
            let delta_dir = delta1 - &delta0;
            Ok(LevelOutcome::Family {
                family,
                delta0,
                delta_dir,
            })
        }
    }
}

/// Pick α > 0 maximizing the margin of `a + α·b > 0`, if possible.
fn alpha_for_positive(a: f64, b: f64, tol: f64) -> Option<f64> {
    if b > tol {
        // Growing direction: push the value to at least 1.
        Some((1.0 + a.abs()) / b)
    } else if a > tol {
        if b.abs() <= tol {
            Some(1.0)
        } else {
            // Shrink α until only a quarter of a is given up.
            Some(a / (4.0 * b.abs()))
        }
    } else {
        None
    }
}

/// Result of testing strict dominance at one order.
struct DominanceAtOrder {
    holds: bool,
    factor: Option<DMatrix<f64>>,
    alpha: Option<f64>,
    difference: Option<DVector<f64>>,
    /// Surplus drives (ρ1, ρ2) when the order hit the one-parameter family
    /// with a vanishing leading block.
    rho: Option<(f64, f64)>,
    note: String,
}

fn dominance_at_order(
    sys: &BimodalSystem,
    k: usize,
    tols: &ToleranceSet,
) -> Result<DominanceAtOrder, LexalgError> {
    let fail = |note: String| DominanceAtOrder {
        holds: false,
        factor: None,
        alpha: None,
        difference: None,
        rho: None,
        note,
    };
    match factor_level(sys, k, tols)? {
        LevelOutcome::NoFactor => Ok(fail(format!("order {k}: no admissible factor"))),
        LevelOutcome::Fixed { factor, delta } => {
            if lex_sign(&delta, tols.tol_lex) == LexSign::Positive {
                Ok(DominanceAtOrder {
                    holds: true,
                    factor: Some(factor),
                    alpha: None,
                    difference: Some(delta),
                    rho: None,
                    note: format!("order {k}: unique factor, offset difference lex-positive"),
                })
            } else {
                Ok(fail(format!(
                    "order {k}: unique factor but offset difference not lex-positive"
                )))
            }
        }
        LevelOutcome::Family {
            family,
            delta0,
            delta_dir,
        } => {
            let rows = delta0.len();
            let leading = delta0.rows(0, rows - 1).into_owned();
            let a = delta0[rows - 1];
            let b = delta_dir[rows - 1];
            match lex_sign(&leading, tols.tol_lex) {
                LexSign::Positive => {
                    let alpha = 1.0;
                    let delta = &delta0 + &delta_dir * alpha;
                    Ok(DominanceAtOrder {
                        holds: true,
                        factor: Some(family.instantiate(alpha)),
                        alpha: Some(alpha),
                        difference: Some(delta),
                        rho: None,
                        note: format!(
                            "order {k}: factor family, leading offset block lex-positive"
                        ),
                    })
                }
                LexSign::Negative => Ok(fail(format!(
                    "order {k}: factor family but leading offset block lex-negative"
                ))),
                LexSign::Zero => match alpha_for_positive(a, b, tols.tol_lex) {
                    Some(alpha) => {
                        let delta = &delta0 + &delta_dir * alpha;
                        Ok(DominanceAtOrder {
                            holds: true,
                            factor: Some(family.instantiate(alpha)),
                            alpha: Some(alpha),
                            difference: Some(delta),
                            rho: Some((a, -b)),
                            note: format!(
                                "order {k}: leading offsets match, final entry made positive"
                            ),
                        })
                    }
                    None => {
                        let mut out = fail(format!(
                            "order {k}: leading offsets match but the final entry cannot be \
                             made positive for any admissible diagonal"
                        ));
                        out.rho = Some((a, -b));
                        Ok(out)
                    }
                },
            }
        }
    }
}

fn dominance_verdict(id: ConditionId, k: usize, at: DominanceAtOrder) -> ConditionVerdict {
    let mut v = ConditionVerdict::new(id);
    v.holds = at.holds;
    v.note = at.note;
    if at.holds {
        v.certificate = Some(Certificate::Dominance {
            k,
            factor: matrix_rows(&at.factor.expect("holding dominance has a factor")),
            alpha: at.alpha,
            difference: at
                .difference
                .expect("holding dominance has a difference")
                .iter()
                .copied()
                .collect(),
        });
    }
    v
}

// ---------------------------------------------------------------------------
// Individual checkers
// ---------------------------------------------------------------------------

/// Do the two affine fields agree everywhere on the surface?
/// Equivalent to `A1−A2 = g·cᵀ` with `e1−e2 = f·g` for
/// `g = (A1−A2)·c / cᵀc`.
pub fn check_continuity(sys: &BimodalSystem, tols: &ToleranceSet) -> ConditionVerdict {
    let mut v = ConditionVerdict::new(ConditionId::Continuity);
    let da = sys.a(ModeId::Mode1) - sys.a(ModeId::Mode2);
    let c = sys.c();
    let g = &da * c / c.norm_squared();
    let res_a = (&da - &g * c.transpose()).amax();
    let res_e = (sys.e(ModeId::Mode1) - sys.e(ModeId::Mode2) - &g * sys.f()).amax();
    if res_a <= tols.tol_fact && res_e <= tols.tol_fact {
        v.holds = true;
        v.certificate = Some(Certificate::Continuity {
            g: g.iter().copied().collect(),
        });
        v.note = "fields agree on the surface".into();
    } else {
        v.note = format!("field jump across the surface (residuals {res_a:.2e}, {res_e:.2e})");
    }
    v
}

/// Is the convexified right-hand side one-sided Lipschitz?
/// Holds iff `A1−A2 = g·cᵀ` and `e1−e2 = f·g + mu·c` with `mu ≥ 0`.
pub fn check_one_sided_lipschitz(sys: &BimodalSystem, tols: &ToleranceSet) -> ConditionVerdict {
    let mut v = ConditionVerdict::new(ConditionId::OneSidedLipschitz);
    let da = sys.a(ModeId::Mode1) - sys.a(ModeId::Mode2);
    let c = sys.c();
    let g = &da * c / c.norm_squared();
    let res_a = (&da - &g * c.transpose()).amax();
    let r = sys.e(ModeId::Mode1) - sys.e(ModeId::Mode2) - &g * sys.f();
    let mu = r.dot(c) / c.norm_squared();
    let res_e = (&r - c * mu).amax();
    if res_a <= tols.tol_fact && res_e <= tols.tol_fact && mu >= -tols.tol_lex {
        v.holds = true;
        v.certificate = Some(Certificate::Lipschitz {
            g: g.iter().copied().collect(),
            mu: mu.max(0.0),
            bound: sampling::one_sided_lipschitz_bound(sys),
        });
        v.note = "difference of the fields is a nonnegative multiple of c on the surface".into();
    } else if res_a > tols.tol_fact {
        v.note = format!("A1−A2 is not a rank-one update along c (residual {res_a:.2e})");
    } else if res_e > tols.tol_fact {
        v.note = format!("e1−e2−f·g is not parallel to c (residual {res_e:.2e})");
    } else {
        v.note = format!("the multiplier is negative (mu = {mu:.3e}): the surface repels");
    }
    v
}

/// Strict lexicographic dominance at some order k ∈ 1..=h+1
/// (h = min of the two observability indices).
pub fn check_output_dominance(sys: &BimodalSystem, tols: &ToleranceSet) -> ConditionVerdict {
    let h1 = observability_index(sys, ModeId::Mode1, tols.tol_rank);
    let h2 = observability_index(sys, ModeId::Mode2, tols.tol_rank);
    let h = h1.min(h2);
    let mut notes = Vec::new();
    for k in 1..=h + 1 {
        match dominance_at_order(sys, k, tols) {
            Ok(at) if at.holds => {
                return dominance_verdict(ConditionId::OutputDominance, k, at);
            }
            Ok(at) => notes.push(at.note),
            Err(err) => notes.push(format!("order {k}: {err}")),
        }
    }
    let mut v = ConditionVerdict::new(ConditionId::OutputDominance);
    v.note = notes.join("; ");
    v
}

/// Dominance restricted to order-1 data; implies uniqueness everywhere.
pub fn check_first_order_dominance(sys: &BimodalSystem, tols: &ToleranceSet) -> ConditionVerdict {
    match dominance_at_order(sys, 1, tols) {
        Ok(at) => dominance_verdict(ConditionId::FirstOrderDominance, 1, at),
        Err(err) => {
            let mut v = ConditionVerdict::new(ConditionId::FirstOrderDominance);
            v.note = err.to_string();
            v
        }
    }
}

/// Dominance restricted to order-2 data; implies uniqueness outside the
/// exception set (see [`in_exception_set`]). Needs h ≥ 1 to be applicable.
pub fn check_second_order_dominance(sys: &BimodalSystem, tols: &ToleranceSet) -> ConditionVerdict {
    let h1 = observability_index(sys, ModeId::Mode1, tols.tol_rank);
    let h2 = observability_index(sys, ModeId::Mode2, tols.tol_rank);
    if h1.min(h2) < 1 {
        let mut v = ConditionVerdict::new(ConditionId::SecondOrderDominance);
        v.applicable = false;
        v.note = "needs order-2 data: both observability indices must be ≥ 1".into();
        return v;
    }
    match dominance_at_order(sys, 2, tols) {
        Ok(at) => dominance_verdict(ConditionId::SecondOrderDominance, 2, at),
        Err(err) => {
            let mut v = ConditionVerdict::new(ConditionId::SecondOrderDominance);
            v.note = err.to_string();
            v
        }
    }
}

/// Membership in the exception set of the order-2 dominance condition: one
/// mode's order-2 data vanishes at ξ while the *other* mode's second
/// derivative strictly escapes toward its own side.
pub fn in_exception_set(sys: &BimodalSystem, xi: &DVector<f64>, tols: &ToleranceSet) -> bool {
    let v1 = stacked(sys, ModeId::Mode1, 2).eval(xi);
    let v2 = stacked(sys, ModeId::Mode2, 2).eval(xi);
    // Mode 1's data vanishes and mode 2's second derivative pushes down…
    let first = v1.amax() <= tols.tol_fact && v2[2] < -tols.tol_lex;
    // …or mode 2's data vanishes and mode 1's second derivative pushes up.
    let second = v2.amax() <= tols.tol_fact && v1[2] > tols.tol_lex;
    first || second
}

/// Unequal observability indices, matched data at the smaller index, and
/// the right sign on the lower-index mode's surplus drive.
pub fn check_index_gap(sys: &BimodalSystem, tols: &ToleranceSet) -> ConditionVerdict {
    let mut v = ConditionVerdict::new(ConditionId::IndexGap);
    let h1 = observability_index(sys, ModeId::Mode1, tols.tol_rank);
    let h2 = observability_index(sys, ModeId::Mode2, tols.tol_rank);
    if h1 == h2 {
        v.applicable = false;
        v.note = format!("indices are equal (h = {h1})");
        return v;
    }
    let h = h1.min(h2);
    let factor = match factor_level(sys, h, tols) {
        Ok(LevelOutcome::Fixed { factor, delta }) => {
            if delta.amax() > tols.tol_fact {
                v.note = "offset data does not match at the smaller index".into();
                return v;
            }
            factor
        }
        Ok(_) => {
            v.note = "no unique factor at the smaller index".into();
            return v;
        }
        Err(err) => {
            v.note = err.to_string();
            return v;
        }
    };

    // Surplus drive of the lower-index mode: the first output derivative
    // beyond its independent block, minus the companion prediction.
    let deficient = if h1 < h2 { ModeId::Mode1 } else { ModeId::Mode2 };
    let surplus = match surplus_drive(sys, deficient, tols) {
        Ok(s) => s,
        Err(err) => {
            v.note = err.to_string();
            return v;
        }
    };
    let ok = match deficient {
        ModeId::Mode1 => surplus > tols.tol_lex,
        ModeId::Mode2 => surplus < -tols.tol_lex,
    };
    if ok {
        v.holds = true;
        v.certificate = Some(Certificate::Gap {
            factor: matrix_rows(&factor),
            deficient_mode: deficient,
            surplus,
        });
        v.note = format!(
            "indices differ (h1 = {h1}, h2 = {h2}); surplus drive of the lower-index mode \
             has the escaping sign"
        );
    } else {
        v.note = format!(
            "indices differ (h1 = {h1}, h2 = {h2}) but the surplus drive ({surplus:.3e}) \
             does not have the escaping sign"
        );
    }
    v
}

/// The surplus output drive of `mode` at its own observability index h:
/// `cᵀAʰe − pᵀ𝐞ʰ`, the part of the (h+1)-st output derivative's offset not
/// predicted by the companion row.
fn surplus_drive(
    sys: &BimodalSystem,
    mode: ModeId,
    tols: &ToleranceSet,
) -> Result<f64, crate::observability::ObservabilityError> {
    let info = companion(sys, mode, 1, tols.tol_rank, tols.tol_fact)?;
    let h = info.index;
    let data = stacked(sys, mode, h + 1);
    let own = data.offsets[h + 1];
    let predicted = info.companion.dot(&data.offsets.rows(0, h + 1).into_owned());
    Ok(own - predicted)
}

/// Equal indices and exact extended matching: the order-(h+1) data of the
/// two modes is related by a one-parameter triangular family with the
/// offset difference identically zero for some admissible α > 0.
pub fn check_output_matching(sys: &BimodalSystem, tols: &ToleranceSet) -> ConditionVerdict {
    let mut v = ConditionVerdict::new(ConditionId::OutputMatching);
    let h1 = observability_index(sys, ModeId::Mode1, tols.tol_rank);
    let h2 = observability_index(sys, ModeId::Mode2, tols.tol_rank);
    if h1 != h2 {
        v.applicable = false;
        v.note = format!("indices differ (h1 = {h1}, h2 = {h2})");
        return v;
    }
    let h = h1;
    match factor_level(sys, h + 1, tols) {
        Ok(LevelOutcome::Family {
            family,
            delta0,
            delta_dir,
        }) => {
            let rows = delta0.len();
            let leading = delta0.rows(0, rows - 1).into_owned();
            let a = delta0[rows - 1];
            let b = delta_dir[rows - 1];
            let (rho1, rho2) = (a, -b);
            if leading.amax() > tols.tol_fact {
                v.note = "leading offset blocks do not match".into();
                return v;
            }
            // Solve a + α·b = 0 with α > 0, i.e. α = rho1/rho2.
            let alpha = if a.abs() <= tols.tol_lex && b.abs() <= tols.tol_lex {
                Some(1.0)
            } else if b.abs() > tols.tol_lex {
                let alpha = -a / b;
                (alpha > tols.tol_diag).then_some(alpha)
            } else {
                None
            };
            match alpha {
                Some(alpha) => {
                    v.holds = true;
                    v.certificate = Some(Certificate::Matching {
                        factor: Some(matrix_rows(&family.instantiate(alpha))),
                        alpha: Some(alpha),
                        rho1,
                        rho2,
                    });
                    v.note = "extended output data matches exactly".into();
                }
                None => {
                    v.certificate = Some(Certificate::Matching {
                        factor: None,
                        alpha: None,
                        rho1,
                        rho2,
                    });
                    v.note = format!(
                        "surplus drives have incompatible signs (rho1 = {rho1:.3e}, \
                         rho2 = {rho2:.3e}): no admissible diagonal matches the data"
                    );
                }
            }
        }
        Ok(LevelOutcome::NoFactor) => {
            v.note = "no admissible factor for the extended data".into();
        }
        Ok(LevelOutcome::Fixed { .. }) => {
            // With equal indices the extended right side is always rank
            // deficient; reaching here means the rank test disagreed.
            v.note = "extended data unexpectedly kept full row rank".into();
        }
        Err(err) => v.note = err.to_string(),
    }
    v
}

/// On every state where mode 1's extended output data vanishes, the two
/// fields must coincide. Holds vacuously when no such state exists.
pub fn check_field_agreement(sys: &BimodalSystem, tols: &ToleranceSet) -> ConditionVerdict {
    let mut v = ConditionVerdict::new(ConditionId::FieldAgreement);
    let h1 = observability_index(sys, ModeId::Mode1, tols.tol_rank);
    let h2 = observability_index(sys, ModeId::Mode2, tols.tol_rank);
    let h = h1.min(h2);
    let data = stacked(sys, ModeId::Mode1, h + 1);
    let rhs = -&data.offsets;
    let xi0 = linalg::lstsq_vec(&data.rows, &rhs, tols.tol_rank);
    let residual = (&data.rows * &xi0 - &rhs).amax();
    if residual > tols.tol_fact {
        v.holds = true;
        v.certificate = Some(Certificate::Agreement {
            vacuous: true,
            residual,
            witness: None,
        });
        v.note = "vacuous: no state has vanishing extended output data".into();
        return v;
    }
    let da = sys.a(ModeId::Mode1) - sys.a(ModeId::Mode2);
    let de = sys.e(ModeId::Mode1) - sys.e(ModeId::Mode2);
    let kernel = linalg::kernel(&data.rows, tols.tol_rank);
    let at_particular = (&da * &xi0 + &de).amax();
    let on_kernel = if kernel.ncols() == 0 {
        0.0
    } else {
        (&da * &kernel).amax()
    };
    if at_particular <= tols.tol_fact && on_kernel <= tols.tol_fact {
        v.holds = true;
        v.certificate = Some(Certificate::Agreement {
            vacuous: false,
            residual,
            witness: Some(xi0.iter().copied().collect()),
        });
        v.note = "fields coincide on the vanishing-output set".into();
    } else {
        v.note = format!(
            "fields differ on the vanishing-output set \
             (at the particular solution: {at_particular:.3e}, on the kernel: {on_kernel:.3e})"
        );
        v.certificate = Some(Certificate::Agreement {
            vacuous: false,
            residual,
            witness: Some(xi0.iter().copied().collect()),
        });
    }
    v
}

/// Exact uniqueness test for homogeneous systems (e1 = e2 = 0, f = 0):
/// equal indices, an admissible factor at the common index, and
/// `(A1−A2)·x = 0` on the kernel of the stacked data.
pub fn check_linear_case(sys: &BimodalSystem, tols: &ToleranceSet) -> ConditionVerdict {
    let mut v = ConditionVerdict::new(ConditionId::LinearCase);
    let homogeneous = sys.e(ModeId::Mode1).amax() <= tols.tol_fact
        && sys.e(ModeId::Mode2).amax() <= tols.tol_fact
        && sys.f().abs() <= tols.tol_fact;
    if !homogeneous {
        v.applicable = false;
        v.note = "system has affine terms".into();
        return v;
    }
    let h1 = observability_index(sys, ModeId::Mode1, tols.tol_rank);
    let h2 = observability_index(sys, ModeId::Mode2, tols.tol_rank);
    if h1 != h2 {
        v.note = format!("indices differ (h1 = {h1}, h2 = {h2})");
        return v;
    }
    let factor = match factor_level(sys, h1, tols) {
        Ok(LevelOutcome::Fixed { factor, .. }) => factor,
        Ok(_) => {
            v.note = "no unique admissible factor at the common index".into();
            return v;
        }
        Err(err) => {
            v.note = err.to_string();
            return v;
        }
    };
    let data = stacked(sys, ModeId::Mode1, h1);
    let kernel = linalg::kernel(&data.rows, tols.tol_rank);
    let da = sys.a(ModeId::Mode1) - sys.a(ModeId::Mode2);
    let on_kernel = if kernel.ncols() == 0 {
        0.0
    } else {
        (&da * &kernel).amax()
    };
    if on_kernel <= tols.tol_fact {
        v.holds = true;
        v.certificate = Some(Certificate::Linear {
            factor: matrix_rows(&factor),
        });
        v.note = "homogeneous test passed (factor + kernel condition)".into();
    } else {
        v.note = format!("fields differ on the stacked-data kernel (residual {on_kernel:.3e})");
    }
    v
}

/// Zeno-freeness: certified exactly when output matching and field
/// agreement both hold (switching times cannot accumulate then).
pub fn check_zeno_free(
    matching: &ConditionVerdict,
    agreement: &ConditionVerdict,
) -> ConditionVerdict {
    let mut v = ConditionVerdict::new(ConditionId::ZenoFree);
    v.holds = matching.holds && agreement.holds;
    v.note = if v.holds {
        "certified via output matching and field agreement".into()
    } else {
        "not certified (matching and agreement do not both hold); \
         simulation falls back to the runtime switch guard"
            .into()
    };
    v
}

// ---------------------------------------------------------------------------
// Witness search
// ---------------------------------------------------------------------------

/// Scan algebraically constructed candidate states for branching or
/// dead-end continuations. Used to attach witnesses to negative verdicts
/// and annotations to inconclusive ones.
pub fn find_special_states(
    sys: &BimodalSystem,
    tols: &ToleranceSet,
) -> Vec<(DVector<f64>, Continuation)> {
    let h1 = observability_index(sys, ModeId::Mode1, tols.tol_rank);
    let h2 = observability_index(sys, ModeId::Mode2, tols.tol_rank);
    let h = h1.min(h2);
    let mut candidates: Vec<DVector<f64>> = Vec::new();

    // Falsifier of the level-h lexicographic implication, when one exists:
    // a state whose mode-1 data is lex-negative while mode-2's is
    // lex-positive is a branching state by construction.
    let d1 = stacked(sys, ModeId::Mode1, h);
    let d2 = stacked(sys, ModeId::Mode2, h);
    if let Some(x) = sampling::search_lex_falsifier(
        &d1.rows,
        &d1.offsets,
        &d2.rows,
        &d2.offsets,
        tols.tol_rank,
        tols.tol_lex,
    ) {
        candidates.push(x);
    }

    // The distinguished state with vanishing mode-1 data, if any.
    let q1 = -&d1.offsets;
    let xi0 = linalg::lstsq_vec(&d1.rows, &q1, tols.tol_rank);
    if (&d1.rows * &xi0 - &q1).amax() <= tols.tol_fact {
        candidates.push(xi0);
    }

    // States with prescribed leading zeros in either mode's data.
    for (mode, sign) in [(ModeId::Mode1, -1.0), (ModeId::Mode2, 1.0)] {
        let hm = observability_index(sys, mode, tols.tol_rank);
        let data = stacked(sys, mode, hm);
        for j in 0..=hm {
            for t in [1.0, 0.1] {
                let mut target = -&data.offsets;
                target[j] += sign * t;
                let x = linalg::lstsq_vec(&data.rows, &target, tols.tol_rank);
                if (&data.rows * &x - &target).amax() <= tols.tol_fact {
                    candidates.push(x);
                }
            }
        }
    }

    let mut found: Vec<(DVector<f64>, Continuation)> = Vec::new();
    for x in candidates {
        if !x.iter().all(|v| v.is_finite()) {
            continue;
        }
        if found.iter().any(|(seen, _)| (seen - &x).amax() <= 1e-7) {
            continue;
        }
        let cls = classify_initial_state(sys, &x, tols.tol_fact, tols.tol_rank, tols.tol_lex);
        if matches!(
            cls.continuation,
            Continuation::Branching | Continuation::NoCaratheodory
        ) {
            found.push((x, cls.continuation));
        }
    }
    found
}

// ---------------------------------------------------------------------------
// The lattice
// ---------------------------------------------------------------------------

struct DirectionalAnalysis {
    conditions: Vec<ConditionVerdict>,
    uniqueness: Uniqueness,
    matching_and_agreement: bool,
    specials: Vec<(DVector<f64>, Continuation)>,
}

fn analyze_direction(sys: &BimodalSystem, tols: &ToleranceSet) -> DirectionalAnalysis {
    let continuity = check_continuity(sys, tols);
    let lipschitz = check_one_sided_lipschitz(sys, tols);
    let dominance = check_output_dominance(sys, tols);
    let gap = check_index_gap(sys, tols);
    let matching = check_output_matching(sys, tols);
    let agreement = check_field_agreement(sys, tols);
    let first = check_first_order_dominance(sys, tols);
    let second = check_second_order_dominance(sys, tols);
    let linear = check_linear_case(sys, tols);
    let zeno = check_zeno_free(&matching, &agreement);

    let matching_and_agreement = matching.holds && agreement.holds;
    let mut specials: Vec<(DVector<f64>, Continuation)> = Vec::new();
    let witness_state = |specials: &mut Vec<(DVector<f64>, Continuation)>| {
        if specials.is_empty() {
            *specials = find_special_states(sys, tols);
        }
        specials
            .iter()
            .find(|(_, c)| *c == Continuation::Branching)
            .map(|(x, _)| x.iter().copied().collect::<Vec<f64>>())
    };

    let uniqueness = if continuity.holds {
        Uniqueness::UniqueEverywhere {
            via: vec![ConditionId::Continuity],
        }
    } else if first.holds {
        Uniqueness::UniqueEverywhere {
            via: vec![ConditionId::FirstOrderDominance],
        }
    } else if matching_and_agreement {
        Uniqueness::UniqueEverywhere {
            via: vec![ConditionId::OutputMatching, ConditionId::FieldAgreement],
        }
    } else if linear.applicable {
        if linear.holds {
            Uniqueness::UniqueEverywhere {
                via: vec![ConditionId::LinearCase],
            }
        } else {
            // For homogeneous systems the linear-case test is exact.
            Uniqueness::NotUnique {
                witness: witness_state(&mut specials),
            }
        }
    } else if second.holds {
        Uniqueness::UniqueOutsideExceptionSet
    } else if !dominance.holds && !gap.holds && !matching.holds {
        // Necessity: uniqueness forces dominance, gap or matching.
        Uniqueness::NotUnique {
            witness: witness_state(&mut specials),
        }
    } else {
        Uniqueness::Inconclusive
    };

    if matches!(
        uniqueness,
        Uniqueness::Inconclusive | Uniqueness::NotUnique { .. }
    ) && specials.is_empty()
    {
        specials = find_special_states(sys, tols);
    }

    DirectionalAnalysis {
        conditions: vec![
            continuity, lipschitz, dominance, gap, matching, agreement, first, second, linear,
            zeno,
        ],
        uniqueness,
        matching_and_agreement,
        specials,
    }
}

/// Run every checker on `sys` and combine the verdicts through the lattice;
/// left-uniqueness comes from the same lattice on the time-reversed system.
pub fn analyze(sys: &BimodalSystem, tols: &ToleranceSet) -> WellPosednessReport {
    let right = analyze_direction(sys, tols);
    let left = analyze_direction(&sys.reverse_time(), tols);

    let certified = |flag: bool| {
        if flag {
            CertStatus::Certified
        } else {
            CertStatus::Unknown
        }
    };
    let annotations = right
        .specials
        .iter()
        .map(|(x, c)| StateAnnotation {
            state: x.iter().copied().collect(),
            continuation: *c,
            note: match c {
                Continuation::Branching => {
                    "several forward continuations start here".to_string()
                }
                Continuation::NoCaratheodory => {
                    "no forward classical continuation exists here; \
                     set-valued solutions need not be unique"
                        .to_string()
                }
                other => format!("{other:?}"),
            },
        })
        .collect();

    WellPosednessReport {
        conditions: right.conditions,
        right_uniqueness: right.uniqueness,
        left_uniqueness: left.uniqueness,
        zeno_free: certified(right.matching_and_agreement),
        forward_caratheodory: certified(right.matching_and_agreement),
        backward_caratheodory: certified(right.matching_and_agreement),
        annotations,
        tolerances: *tols,
    }
}

// ---------------------------------------------------------------------------
// Certificate re-verification
// ---------------------------------------------------------------------------

/// Independently re-check the certificate of a holding verdict against the
/// system, with equality tolerances loosened tenfold and strict
/// inequalities required to keep their sign. Returns `true` when the
/// verdict has nothing to re-check (fails, or carries no certificate by
/// design).
pub fn reverify_certificate(
    sys: &BimodalSystem,
    verdict: &ConditionVerdict,
    tols: &ToleranceSet,
) -> bool {
    if !verdict.holds {
        return true;
    }
    let loose = 10.0 * tols.tol_fact;
    let c = sys.c();
    match &verdict.certificate {
        None => verdict.id == ConditionId::ZenoFree,
        Some(Certificate::Continuity { g }) => {
            let g = DVector::from_column_slice(g);
            let da = sys.a(ModeId::Mode1) - sys.a(ModeId::Mode2);
            (&da - &g * c.transpose()).amax() <= loose
                && (sys.e(ModeId::Mode1) - sys.e(ModeId::Mode2) - &g * sys.f()).amax() <= loose
        }
        Some(Certificate::Lipschitz { g, mu, .. }) => {
            let g = DVector::from_column_slice(g);
            let da = sys.a(ModeId::Mode1) - sys.a(ModeId::Mode2);
            (&da - &g * c.transpose()).amax() <= loose
                && (sys.e(ModeId::Mode1) - sys.e(ModeId::Mode2) - &g * sys.f() - c * *mu).amax()
                    <= loose
                && *mu >= -10.0 * tols.tol_lex
        }
        Some(Certificate::Dominance {
            k,
            factor,
            difference,
            ..
        }) => {
            let m = rows_to_matrix(factor);
            let d1 = stacked(sys, ModeId::Mode1, *k);
            let d2 = stacked(sys, ModeId::Mode2, *k);
            let delta = &d1.offsets - &m * &d2.offsets;
            let stored = DVector::from_column_slice(difference);
            (&d1.rows - &m * &d2.rows).amax() <= loose
                && is_lower_triangular_positive(&m, 10.0 * tols.tol_fact, tols.tol_diag / 10.0)
                && lex_sign(&delta, tols.tol_lex) == LexSign::Positive
                && (delta - stored).amax() <= loose
        }
        Some(Certificate::Matching {
            factor: Some(factor),
            alpha: Some(alpha),
            ..
        }) => {
            let m = rows_to_matrix(factor);
            let h = observability_index(sys, ModeId::Mode1, tols.tol_rank);
            let d1 = stacked(sys, ModeId::Mode1, h + 1);
            let d2 = stacked(sys, ModeId::Mode2, h + 1);
            (&d1.rows - &m * &d2.rows).amax() <= loose
                && (&d1.offsets - &m * &d2.offsets).amax() <= loose
                && is_lower_triangular_positive(&m, 10.0 * tols.tol_fact, tols.tol_diag / 10.0)
                && *alpha > 0.0
        }
        Some(Certificate::Matching { .. }) => false,
        Some(Certificate::Gap {
            factor,
            deficient_mode,
            surplus,
        }) => {
            let m = rows_to_matrix(factor);
            let h1 = observability_index(sys, ModeId::Mode1, tols.tol_rank);
            let h2 = observability_index(sys, ModeId::Mode2, tols.tol_rank);
            if h1 == h2 {
                return false;
            }
            let h = h1.min(h2);
            let d1 = stacked(sys, ModeId::Mode1, h);
            let d2 = stacked(sys, ModeId::Mode2, h);
            let recomputed = match surplus_drive(sys, *deficient_mode, tols) {
                Ok(s) => s,
                Err(_) => return false,
            };
            let sign_ok = match deficient_mode {
                ModeId::Mode1 => recomputed > 0.0,
                ModeId::Mode2 => recomputed < 0.0,
            };
            (&d1.rows - &m * &d2.rows).amax() <= loose
                && (&d1.offsets - &m * &d2.offsets).amax() <= loose
                && is_lower_triangular_positive(&m, 10.0 * tols.tol_fact, tols.tol_diag / 10.0)
                && sign_ok
                && (recomputed - surplus).abs() <= loose
        }
        Some(Certificate::Agreement {
            vacuous,
            witness,
            ..
        }) => {
            let h1 = observability_index(sys, ModeId::Mode1, tols.tol_rank);
            let h2 = observability_index(sys, ModeId::Mode2, tols.tol_rank);
            let h = h1.min(h2);
            let data = stacked(sys, ModeId::Mode1, h + 1);
            let rhs = -&data.offsets;
            if *vacuous {
                let xi = linalg::lstsq_vec(&data.rows, &rhs, tols.tol_rank);
                (&data.rows * &xi - &rhs).amax() > tols.tol_fact / 10.0
            } else {
                let Some(witness) = witness else { return false };
                let xi = DVector::from_column_slice(witness);
                let da = sys.a(ModeId::Mode1) - sys.a(ModeId::Mode2);
                let de = sys.e(ModeId::Mode1) - sys.e(ModeId::Mode2);
                let kernel = linalg::kernel(&data.rows, tols.tol_rank);
                let on_kernel = if kernel.ncols() == 0 {
                    0.0
                } else {
                    (&da * &kernel).amax()
                };
                (&data.rows * &xi - &rhs).amax() <= loose
                    && (&da * &xi + &de).amax() <= loose
                    && on_kernel <= loose
            }
        }
        Some(Certificate::Linear { factor }) => {
            let m = rows_to_matrix(factor);
            let h1 = observability_index(sys, ModeId::Mode1, tols.tol_rank);
            let h2 = observability_index(sys, ModeId::Mode2, tols.tol_rank);
            if h1 != h2 {
                return false;
            }
            let d1 = stacked(sys, ModeId::Mode1, h1);
            let d2 = stacked(sys, ModeId::Mode2, h1);
            let kernel = linalg::kernel(&d1.rows, tols.tol_rank);
            let da = sys.a(ModeId::Mode1) - sys.a(ModeId::Mode2);
            let on_kernel = if kernel.ncols() == 0 {
                0.0
            } else {
                (&da * &kernel).amax()
            };
            (&d1.rows - &m * &d2.rows).amax() <= loose
                && is_lower_triangular_positive(&m, 10.0 * tols.tol_fact, tols.tol_diag / 10.0)
                && on_kernel <= loose
        }
    }
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let nrows = rows.len();
    let ncols = rows.first().map(|r| r.len()).unwrap_or(0);
    DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j])
}

// ---------------------------------------------------------------------------
// Report serialization
// ---------------------------------------------------------------------------

impl WellPosednessReport {
    /// The report's JSON interface: per-condition objects, the overall
    /// right-uniqueness verdict, the left-uniqueness verdict, certification
    /// flags, annotations and the tolerances used.
    pub fn to_json(&self) -> serde_json::Value {
        let uniq = |u: &Uniqueness, side: &str| -> serde_json::Value {
            let (verdict, via, witness): (String, Vec<ConditionId>, Option<Vec<f64>>) = match u {
                Uniqueness::UniqueEverywhere { via } => {
                    (format!("{side}UniqueEverywhere"), via.clone(), None)
                }
                Uniqueness::UniqueOutsideExceptionSet => {
                    (format!("{side}UniqueOutsideExceptionSet"), vec![], None)
                }
                Uniqueness::NotUnique { witness } => {
                    (format!("Not{side}Unique"), vec![], witness.clone())
                }
                Uniqueness::Inconclusive => ("Inconclusive".to_string(), vec![], None),
            };
            serde_json::json!({
                "verdict": verdict,
                "via": via,
                "witness": witness,
            })
        };
        serde_json::json!({
            "statements": self.conditions,
            "overall": uniq(&self.right_uniqueness, "Right"),
            "left_uniqueness": uniq(&self.left_uniqueness, "Left"),
            "zeno_free": self.zeno_free,
            "forward_caratheodory": self.forward_caratheodory,
            "backward_caratheodory": self.backward_caratheodory,
            "annotations": self.annotations,
            "tolerances": self.tolerances,
        })
    }

    /// The verdict for one condition, if present.
    pub fn condition(&self, id: ConditionId) -> Option<&ConditionVerdict> {
        self.conditions.iter().find(|v| v.id == id)
    }
}
