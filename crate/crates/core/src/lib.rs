//! Well-posedness analysis and Filippov simulation for bimodal piecewise
//! affine systems.
//!
//! A *bimodal piecewise affine system* switches between two affine vector
//! fields depending on the sign of a scalar output:
//!
//! ```text
//!     ẋ = A1·x + e1   when  cᵀx + f ≤ 0      (mode 1)
//!     ẋ = A2·x + e2   when  cᵀx + f ≥ 0      (mode 2)
//! ```
//!
//! On the switching surface `cᵀx + f = 0` the right-hand side is set-valued
//! (the Filippov convexification), and solutions may cross, slide, branch
//! into several continuations, or have no classical continuation at all.
//! This crate decides those questions *algebraically* — no integration is
//! needed for the verdicts — and also integrates trajectories numerically,
//! including sliding modes and explicit exploration of non-unique branches.
//!
//! # Modules
//!
//! - [`model`] — the system type, validation, canonical example systems,
//!   time reversal, JSON (de)serialization.
//! - [`lexalg`] — lexicographic sign tests, triangular row-factorization
//!   between the two modes' output data, and an exact decision procedure
//!   for implications between lexicographic inequalities.
//! - [`observability`] — observability indices of `(cᵀ, Aᵢ)`, stacked
//!   output-derivative data, and companion rows expressing dependent
//!   derivative rows in terms of independent ones.
//! - [`wellposed`] — the condition checkers (continuity, one-sided
//!   Lipschitz, lexicographic output dominance, index gap, output matching,
//!   field agreement, the homogeneous special case) and the verdict
//!   lattice combining them into existence/uniqueness/Zeno reports with
//!   machine-checkable certificates.
//! - [`wsets`] — classification of initial states by the lexicographic
//!   sign of their extended output data: transversal flow, first-order
//!   sliding, branching, or no forward continuation.
//! - [`simulator`] — fixed-step RK4 with event localization, sliding via
//!   the equivalent-control weight, branch exploration policies, a Zeno
//!   guard, and an a-posteriori differential-inclusion residual check.
//! - [`sampling`] — seeded randomized oracles that stress-test the
//!   algebraic verdicts (one-sided Lipschitz sampling and violation
//!   search, lexicographic-implication falsifier search).
//! - [`cli`] — the `filippov-lab` command-line front end.
//!
//! # Example
//!
//! ```
//! use filippov_lab::model::BimodalSystem;
//! use filippov_lab::wellposed::{analyze, ToleranceSet, Uniqueness};
//!
//! // ẋ ∈ −sgn(x): attractive relay, right-unique everywhere.
//! let sys = BimodalSystem::scalar_relay();
//! let report = analyze(&sys, &ToleranceSet::default());
//! assert!(matches!(report.right_uniqueness, Uniqueness::UniqueEverywhere { .. }));
//! ```

pub mod cli;
pub mod lexalg;
pub mod linalg;
pub mod model;
pub mod observability;
pub mod sampling;
pub mod simulator;
pub mod wellposed;
pub mod wsets;
