//! The bimodal piecewise affine system type, validation, canonical example
//! systems, and the JSON interchange format.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Which of the two affine modes is meant.
///
/// Mode 1 is active on `{x : cᵀx + f ≤ 0}`, mode 2 on `{x : cᵀx + f ≥ 0}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModeId {
    Mode1,
    Mode2,
}

impl ModeId {
    /// The other mode.
    pub fn other(self) -> ModeId {
        match self {
            ModeId::Mode1 => ModeId::Mode2,
            ModeId::Mode2 => ModeId::Mode1,
        }
    }
}

/// Errors raised while building or parsing a system.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {what} has shape {got}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        got: String,
        expected: String,
    },
    #[error("the surface normal c must be nonzero")]
    ZeroNormal,
    #[error("non-finite entry in {what}")]
    NonFiniteEntry { what: &'static str },
    #[error("unknown fixture '{0}' (built-ins: relay, two_tank, pogromsky, scalar_relay)")]
    UnknownFixture(String),
}

/// A bimodal piecewise affine system
///
/// ```text
///     ẋ = A1·x + e1   on  cᵀx + f ≤ 0,
///     ẋ = A2·x + e2   on  cᵀx + f ≥ 0,
/// ```
///
/// with the Filippov convexification on the surface `cᵀx + f = 0`.
/// Construction validates shapes, finiteness and `c ≠ 0`; instances are
/// immutable afterwards, so they can be shared freely between threads.
#[derive(Debug, Clone, PartialEq)]
pub struct BimodalSystem {
    a1: DMatrix<f64>,
    a2: DMatrix<f64>,
    e1: DVector<f64>,
    e2: DVector<f64>,
    c: DVector<f64>,
    f: f64,
}

/// Plain-data mirror of [`BimodalSystem`] defining the JSON interchange
/// format: matrices are row-major arrays of row arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawSystem {
    pub n: usize,
    #[serde(rename = "A1")]
    pub a1: Vec<Vec<f64>>,
    #[serde(rename = "A2")]
    pub a2: Vec<Vec<f64>>,
    pub e1: Vec<f64>,
    pub e2: Vec<f64>,
    pub c: Vec<f64>,
    pub f: f64,
}

impl BimodalSystem {
    /// Build a system from its parts, validating shapes and entries.
    pub fn new(
        a1: DMatrix<f64>,
        a2: DMatrix<f64>,
        e1: DVector<f64>,
        e2: DVector<f64>,
        c: DVector<f64>,
        f: f64,
    ) -> Result<Self, ModelError> {
        let n = a1.nrows();
        let square = |m: &DMatrix<f64>, what: &'static str| {
            if m.nrows() != n || m.ncols() != n {
                Err(ModelError::DimensionMismatch {
                    what,
                    got: format!("{}x{}", m.nrows(), m.ncols()),
                    expected: format!("{n}x{n}"),
                })
            } else {
                Ok(())
            }
        };
        square(&a1, "A1")?;
        square(&a2, "A2")?;
        let vec_n = |v: &DVector<f64>, what: &'static str| {
            if v.len() != n {
                Err(ModelError::DimensionMismatch {
                    what,
                    got: format!("{}", v.len()),
                    expected: format!("{n}"),
                })
            } else {
                Ok(())
            }
        };
        vec_n(&e1, "e1")?;
        vec_n(&e2, "e2")?;
        vec_n(&c, "c")?;
        let finite = |ok: bool, what: &'static str| {
            if ok {
                Ok(())
            } else {
                Err(ModelError::NonFiniteEntry { what })
            }
        };
        finite(a1.iter().all(|v| v.is_finite()), "A1")?;
        finite(a2.iter().all(|v| v.is_finite()), "A2")?;
        finite(e1.iter().all(|v| v.is_finite()), "e1")?;
        finite(e2.iter().all(|v| v.is_finite()), "e2")?;
        finite(c.iter().all(|v| v.is_finite()), "c")?;
        finite(f.is_finite(), "f")?;
        if c.norm() == 0.0 {
            return Err(ModelError::ZeroNormal);
        }
        Ok(Self { a1, a2, e1, e2, c, f })
    }

    /// Build from the plain-data interchange form.
    pub fn from_raw(raw: &RawSystem) -> Result<Self, ModelError> {
        let n = raw.n;
        let mat = |rows: &Vec<Vec<f64>>, what: &'static str| -> Result<DMatrix<f64>, ModelError> {
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return Err(ModelError::DimensionMismatch {
                    what,
                    got: format!(
                        "{}x{}",
                        rows.len(),
                        rows.first().map(|r| r.len()).unwrap_or(0)
                    ),
                    expected: format!("{n}x{n}"),
                });
            }
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            Ok(DMatrix::from_row_slice(n, n, &flat))
        };
        let a1 = mat(&raw.a1, "A1")?;
        let a2 = mat(&raw.a2, "A2")?;
        Self::new(
            a1,
            a2,
            DVector::from_vec(raw.e1.clone()),
            DVector::from_vec(raw.e2.clone()),
            DVector::from_vec(raw.c.clone()),
            raw.f,
        )
    }

    /// The plain-data interchange form of this system.
    pub fn to_raw(&self) -> RawSystem {
        let n = self.n();
        let mat = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..n)
                .map(|i| (0..n).map(|j| m[(i, j)]).collect())
                .collect()
        };
        RawSystem {
            n,
            a1: mat(&self.a1),
            a2: mat(&self.a2),
            e1: self.e1.iter().copied().collect(),
            e2: self.e2.iter().copied().collect(),
            c: self.c.iter().copied().collect(),
            f: self.f,
        }
    }

    /// Parse a system from its JSON interchange form.
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let raw: RawSystem = serde_json::from_str(text).map_err(|e| ModelError::DimensionMismatch {
            what: "json",
            got: e.to_string(),
            expected: "a system object {n, A1, A2, e1, e2, c, f}".to_string(),
        })?;
        Self::from_raw(&raw)
    }

    /// Serialize to the JSON interchange form.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_raw()).expect("plain data serializes")
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.a1.nrows()
    }

    pub fn a(&self, mode: ModeId) -> &DMatrix<f64> {
        match mode {
            ModeId::Mode1 => &self.a1,
            ModeId::Mode2 => &self.a2,
        }
    }

    pub fn e(&self, mode: ModeId) -> &DVector<f64> {
        match mode {
            ModeId::Mode1 => &self.e1,
            ModeId::Mode2 => &self.e2,
        }
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn f(&self) -> f64 {
        self.f
    }

    /// The switching output `y(x) = cᵀx + f`.
    pub fn output(&self, x: &DVector<f64>) -> f64 {
        self.c.dot(x) + self.f
    }

    /// The affine field of `mode` evaluated at `x`.
    pub fn field(&self, mode: ModeId, x: &DVector<f64>) -> DVector<f64> {
        self.a(mode) * x + self.e(mode)
    }

    /// The convex combination `λ·field1 + (1−λ)·field2` at `x`.
    pub fn blended_field(&self, lambda: f64, x: &DVector<f64>) -> DVector<f64> {
        self.field(ModeId::Mode1, x) * lambda + self.field(ModeId::Mode2, x) * (1.0 - lambda)
    }

    /// The time-reversed system: negates both fields and keeps the surface,
    /// so forward solutions of the result are backward solutions of `self`
    /// with the same mode regions.
    pub fn reverse_time(&self) -> Self {
        Self {
            a1: -&self.a1,
            a2: -&self.a2,
            e1: -&self.e1,
            e2: -&self.e2,
            c: self.c.clone(),
            f: self.f,
        }
    }

    // ---- canonical example systems -------------------------------------

    /// Relay feedback `ẋ = A·x + b·u`, `u = −sgn(cᵀx)`:
    /// mode 1 (`cᵀx ≤ 0`) carries `+b`, mode 2 carries `−b`.
    pub fn relay(a: DMatrix<f64>, b: DVector<f64>, c: DVector<f64>) -> Result<Self, ModelError> {
        let e2 = -&b;
        Self::new(a.clone(), a, b, e2, c, 0.0)
    }

    /// Two connected tanks where the inflow `u ≥ 0` to the first tank shuts
    /// off once the second tank's level reaches 1:
    /// `A = [[−1,0],[1,−1]]`, `e1 = (u,0)`, `e2 = 0`, `c = (0,1)`, `f = −1`.
    pub fn two_tank(u: f64) -> Self {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 1.0, -1.0]);
        Self::new(
            a.clone(),
            a,
            DVector::from_vec(vec![u, 0.0]),
            DVector::from_vec(vec![0.0, 0.0]),
            DVector::from_vec(vec![0.0, 1.0]),
            -1.0,
        )
        .expect("fixed shapes")
    }

    /// Third-order integrator chain driven by a relay on the first state:
    /// `A` the upper shift, `e1 = (0,0,1) = −e2`, `c = (1,0,0)`, `f = 0`.
    ///
    /// The origin has no forward classical continuation, yet infinitely
    /// many Filippov solutions — the standard example of non-uniqueness
    /// that first-order surface analysis cannot see.
    pub fn pogromsky() -> Self {
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        Self::new(
            a.clone(),
            a,
            DVector::from_vec(vec![0.0, 0.0, 1.0]),
            DVector::from_vec(vec![0.0, 0.0, -1.0]),
            DVector::from_vec(vec![1.0, 0.0, 0.0]),
            0.0,
        )
        .expect("fixed shapes")
    }

    /// The scalar relay `ẋ ∈ −sgn(x)`: `n = 1`, `A1 = A2 = 0`, `e1 = 1`,
    /// `e2 = −1`, `c = 1`, `f = 0`. Slides at the origin with weight ½.
    pub fn scalar_relay() -> Self {
        Self::new(
            DMatrix::from_row_slice(1, 1, &[0.0]),
            DMatrix::from_row_slice(1, 1, &[0.0]),
            DVector::from_vec(vec![1.0]),
            DVector::from_vec(vec![-1.0]),
            DVector::from_vec(vec![1.0]),
            0.0,
        )
        .expect("fixed shapes")
    }

    /// Double-integrator relay `ÿ = −sgn(y)`: the default instance used by
    /// the command line for the `relay` fixture. Discontinuous across the
    /// surface and right-unique away from a thin exception set; orbits are
    /// periodic and cross the surface twice per cycle, which exercises the
    /// crossing detector and the switch-count guard.
    pub fn double_integrator_relay() -> Self {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        Self::relay(
            a,
            DVector::from_vec(vec![0.0, 1.0]),
            DVector::from_vec(vec![1.0, 0.0]),
        )
        .expect("fixed shapes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn validation_rejects_bad_shapes_normals_and_entries() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0; 4]);
        let v2 = DVector::from_vec(vec![0.0, 0.0]);
        let v3 = DVector::from_vec(vec![0.0, 0.0, 0.0]);
        let c = DVector::from_vec(vec![1.0, 0.0]);

        let err = BimodalSystem::new(a.clone(), a.clone(), v3, v2.clone(), c.clone(), 0.0)
            .unwrap_err();
        assert!(matches!(err, ModelError::DimensionMismatch { what: "e1", .. }));

        let err =
            BimodalSystem::new(a.clone(), a.clone(), v2.clone(), v2.clone(), v2.clone(), 0.0)
                .unwrap_err();
        assert!(matches!(err, ModelError::ZeroNormal));

        let mut bad = a.clone();
        bad[(0, 0)] = f64::NAN;
        let err = BimodalSystem::new(bad, a.clone(), v2.clone(), v2.clone(), c.clone(), 0.0)
            .unwrap_err();
        assert!(matches!(err, ModelError::NonFiniteEntry { what: "A1" }));

        let err = BimodalSystem::new(a.clone(), a, v2.clone(), v2, c, f64::INFINITY).unwrap_err();
        assert!(matches!(err, ModelError::NonFiniteEntry { what: "f" }));
    }

    #[test]
    fn two_tank_has_documented_entries() {
        let sys = BimodalSystem::two_tank(0.5);
        assert_eq!(sys.n(), 2);
        assert_eq!(sys.a(ModeId::Mode1), sys.a(ModeId::Mode2));
        assert_eq!(sys.a(ModeId::Mode1)[(0, 0)], -1.0);
        assert_eq!(sys.a(ModeId::Mode1)[(1, 0)], 1.0);
        assert_eq!(sys.e(ModeId::Mode1)[0], 0.5);
        assert_eq!(sys.e(ModeId::Mode2).amax(), 0.0);
        assert_eq!(sys.c()[1], 1.0);
        assert_eq!(sys.f(), -1.0);
    }

    #[test]
    fn relay_splits_the_drive_between_modes() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let b = DVector::from_vec(vec![0.0, 1.0]);
        let c = DVector::from_vec(vec![1.0, 0.0]);
        let sys = BimodalSystem::relay(a, b.clone(), c).unwrap();
        assert_eq!(sys.e(ModeId::Mode1), &b);
        assert_eq!(sys.e(ModeId::Mode2), &(-b));
        assert_eq!(sys.f(), 0.0);
    }

    #[test]
    fn time_reversal_negates_two_tank_fields() {
        let sys = BimodalSystem::two_tank(1.0).reverse_time();
        assert_eq!(sys.a(ModeId::Mode1)[(0, 0)], 1.0);
        assert_eq!(sys.a(ModeId::Mode1)[(1, 0)], -1.0);
        assert_eq!(sys.e(ModeId::Mode1)[0], -1.0);
        // Surface data is untouched.
        assert_eq!(sys.c()[1], 1.0);
        assert_eq!(sys.f(), -1.0);
    }

    #[test]
    fn json_round_trip_preserves_two_tank() {
        let sys = BimodalSystem::two_tank(0.25);
        let text = sys.to_json();
        let back = BimodalSystem::from_json(&text).unwrap();
        assert_eq!(sys, back);
        // Interface keys are exactly the documented ones.
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in ["n", "A1", "A2", "e1", "e2", "c", "f"] {
            assert!(v.get(key).is_some(), "missing key {key}");
        }
    }

    proptest! {
        #[test]
        fn reverse_time_is_an_involution(
            entries in proptest::collection::vec(-2.0f64..2.0, 4 + 4 + 2 + 2 + 2),
            f in -2.0f64..2.0,
        ) {
            let a1 = DMatrix::from_row_slice(2, 2, &entries[0..4]);
            let a2 = DMatrix::from_row_slice(2, 2, &entries[4..8]);
            let e1 = DVector::from_column_slice(&entries[8..10]);
            let e2 = DVector::from_column_slice(&entries[10..12]);
            let mut c = DVector::from_column_slice(&entries[12..14]);
            if c.norm() == 0.0 { c[0] = 1.0; }
            let sys = BimodalSystem::new(a1, a2, e1, e2, c, f).unwrap();
            prop_assert_eq!(sys.reverse_time().reverse_time(), sys);
        }

        #[test]
        fn json_round_trip_is_identity(
            entries in proptest::collection::vec(-3.0f64..3.0, 9 + 9 + 3 + 3 + 3),
            f in -3.0f64..3.0,
        ) {
            let a1 = DMatrix::from_row_slice(3, 3, &entries[0..9]);
            let a2 = DMatrix::from_row_slice(3, 3, &entries[9..18]);
            let e1 = DVector::from_column_slice(&entries[18..21]);
            let e2 = DVector::from_column_slice(&entries[21..24]);
            let mut c = DVector::from_column_slice(&entries[24..27]);
            if c.norm() == 0.0 { c[0] = 1.0; }
            let sys = BimodalSystem::new(a1, a2, e1, e2, c, f).unwrap();
            let back = BimodalSystem::from_json(&sys.to_json()).unwrap();
            prop_assert_eq!(back, sys);
        }
    }
}
