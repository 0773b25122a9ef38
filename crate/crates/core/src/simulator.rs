//! Fixed-step Filippov integration with event location, sliding-mode
//! dynamics, and branch exploration at states with several continuations.
//!
//! The stepper is a classical fourth-order Runge–Kutta scheme on the active
//! mode's affine field. Surface crossings are detected by sign violation of
//! the output beyond a tolerance band, located by bisecting the one-step
//! flow from the segment start, and resolved by the exact lexicographic
//! state classification — not by heuristics on the sampled output. Sliding
//! segments integrate the blended field whose weight is recomputed inside
//! every stage from the current surface rates, then re-project onto the
//! surface, so the chord of two adjacent sliding samples tracks the convex
//! hull of the two fields to second order in the step size.
//!
//! States with several viable continuations (or none) are handled by
//! policy: follow one mode, or fork the run into a branch tree. A trailing
//! switch-count window guards against accumulation of switching events.

use std::collections::VecDeque;

use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;

use crate::linalg::rk4_step;
use crate::model::{BimodalSystem, ModeId};
use crate::wellposed::{check_field_agreement, ToleranceSet};
use crate::wsets::{classify_initial_state, Continuation};

/// Active dynamics of one sample: a pure mode or a sliding blend.
/// The sliding payload is the weight of mode 1's field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regime {
    Mode1,
    Mode2,
    Sliding(f64),
}

impl Regime {
    fn same_class(a: &Regime, b: &Regime) -> bool {
        std::mem::discriminant(a) == std::mem::discriminant(b)
    }

    /// Short code used in the CSV regime column.
    pub fn code(&self) -> &'static str {
        match self {
            Regime::Mode1 => "1",
            Regime::Mode2 => "2",
            Regime::Sliding(_) => "S",
        }
    }

    /// The blend weight of mode 1's field implied by the regime.
    pub fn lambda(&self) -> f64 {
        match self {
            Regime::Mode1 => 1.0,
            Regime::Mode2 => 0.0,
            Regime::Sliding(l) => *l,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EventKind {
    /// Transversal pass from one mode to the other.
    Crossing,
    /// Flow reached the surface and the sliding blend took over.
    SlidingEntry,
    /// The sliding blend left [0, 1]; flow resumes in one mode.
    SlidingExit,
    /// Several continuations were viable; the run forked or followed policy.
    Branch,
    /// Too many switching events inside the trailing window.
    ZenoGuardTrip,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimEvent {
    pub t: f64,
    pub x: Vec<f64>,
    pub kind: EventKind,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub t: f64,
    pub x: DVector<f64>,
    pub regime: Regime,
}

/// What to do at a state with several viable continuations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BranchPolicy {
    FollowMode1,
    FollowMode2,
    /// Fork the run; children inherit a forced starting mode.
    ExploreAll,
}

#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    pub t_end: f64,
    pub dt: f64,
    /// Time width to which a surface event is bisected.
    pub event_tol: f64,
    /// Half-width of the band around the surface counted as "on" it.
    pub surface_tol: f64,
    /// Maximum switching events tolerated inside a trailing window of
    /// 100 steps before the Zeno guard trips.
    pub max_switches: usize,
    pub branch_policy: BranchPolicy,
    /// Maximum fork depth under `ExploreAll`.
    pub max_depth: usize,
    pub tols: ToleranceSet,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            t_end: 10.0,
            dt: 1e-3,
            event_tol: 1e-9,
            surface_tol: 1e-9,
            max_switches: 50,
            branch_policy: BranchPolicy::FollowMode1,
            max_depth: 8,
            tols: ToleranceSet::default(),
        }
    }
}

/// Why a branch stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Termination {
    /// Reached `t_end`.
    Completed,
    /// Forked into children at a branch point.
    Branched,
    /// A fork was required but the depth or branch budget was exhausted.
    BranchLimit,
    /// The switching-window guard tripped.
    ZenoGuard,
    /// No continuation could be constructed at the final state.
    DeadEnd,
    /// Event location stopped making progress in time.
    Underflow,
}

#[derive(Debug, Clone)]
pub struct Branch {
    /// Path-style identifier: the root is `root`, its children `root.1`
    /// (forced mode 1) and `root.2` (forced mode 2), and so on.
    pub id: String,
    pub samples: Vec<Sample>,
    pub events: Vec<SimEvent>,
    pub diagnostics: Vec<String>,
    pub termination: Termination,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub branches: Vec<Branch>,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation options: {0}")]
    BadOptions(String),
    #[error("initial state has dimension {got}, system expects {expected}")]
    StateDimension { got: usize, expected: usize },
    #[error("state became non-finite at t = {t}")]
    NonFiniteState { t: f64 },
}

// ---------------------------------------------------------------------------
// Core helpers
// ---------------------------------------------------------------------------

fn project_onto_surface(sys: &BimodalSystem, x: &DVector<f64>) -> DVector<f64> {
    let c = sys.c();
    x - c * (sys.output(x) / c.norm_squared())
}

fn surface_rates(sys: &BimodalSystem, x: &DVector<f64>) -> (f64, f64) {
    let c = sys.c();
    (
        c.dot(&sys.field(ModeId::Mode1, x)),
        c.dot(&sys.field(ModeId::Mode2, x)),
    )
}

/// First-order sliding weight from the surface rates: the convex blend
/// whose output rate vanishes.
pub fn sliding_weight(beta1: f64, beta2: f64) -> Option<f64> {
    let den = beta2 - beta1;
    (den.abs() > 1e-12).then(|| beta2 / den)
}

/// Weight selected by the vanishing of the *second* output derivative of
/// the frozen blend: solves the quadratic
/// `cᵀA(λ)(A(λ)x + e(λ)) = 0` over λ ∈ [0, 1], preferring the root closest
/// to 1/2. A fully degenerate quadratic yields 1/2.
pub fn second_order_weight(sys: &BimodalSystem, x: &DVector<f64>) -> Option<f64> {
    let c = sys.c();
    let d = sys.a(ModeId::Mode1) - sys.a(ModeId::Mode2);
    let v0 = sys.field(ModeId::Mode2, x);
    let v1 = &d * x + (sys.e(ModeId::Mode1) - sys.e(ModeId::Mode2));
    let a2v0 = sys.a(ModeId::Mode2) * &v0;
    let c0 = c.dot(&a2v0);
    let b = c.dot(&(sys.a(ModeId::Mode2) * &v1)) + c.dot(&(&d * &v0));
    let a = c.dot(&(&d * &v1));
    let scale = c0.abs().max(b.abs()).max(a.abs());
    if scale < 1e-13 {
        return Some(0.5);
    }
    let mut roots: Vec<f64> = Vec::new();
    if a.abs() < 1e-13 * scale.max(1.0) {
        if b.abs() > 1e-13 {
            roots.push(-c0 / b);
        }
    } else {
        let disc = b * b - 4.0 * a * c0;
        if disc >= 0.0 {
            let s = disc.sqrt();
            roots.push((-b + s) / (2.0 * a));
            roots.push((-b - s) / (2.0 * a));
        }
    }
    roots
        .into_iter()
        .filter(|l| (-1e-9..=1.0 + 1e-9).contains(l))
        .min_by(|p, q| {
            (p - 0.5)
                .abs()
                .partial_cmp(&(q - 0.5).abs())
                .expect("finite roots")
        })
        .map(|l| l.clamp(0.0, 1.0))
}

/// Bisect the one-step flow of `mode` from `x0` for the first time the
/// output leaves the mode's half-space by more than `surface_tol`.
/// The caller guarantees the violation at `dt_max`. Returns the located
/// time offset and the violating state projected onto the surface.
fn locate_event(
    sys: &BimodalSystem,
    mode: ModeId,
    x0: &DVector<f64>,
    dt_max: f64,
    surface_tol: f64,
    event_tol: f64,
) -> (f64, DVector<f64>) {
    let violated = |y: f64| match mode {
        ModeId::Mode1 => y > surface_tol,
        ModeId::Mode2 => y < -surface_tol,
    };
    let flow = |tau: f64| rk4_step(&|xv: &DVector<f64>| sys.field(mode, xv), x0, tau);
    let (mut lo, mut hi) = (0.0f64, dt_max);
    for _ in 0..200 {
        if hi - lo <= event_tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if violated(sys.output(&flow(mid))) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (hi, project_onto_surface(sys, &flow(hi)))
}

// ---------------------------------------------------------------------------
// The integrator
// ---------------------------------------------------------------------------

enum Start {
    Classify,
    Forced(ModeId),
}

struct Pending {
    id: String,
    t: f64,
    x: DVector<f64>,
    start: Start,
    depth: usize,
}

enum Dispatch {
    Flow(ModeId),
    Slide(f64, Option<String>),
    BranchNow(String),
    Stop(String),
}

const MAX_TOTAL_BRANCHES: usize = 64;
const MAX_STALLS: usize = 64;

/// Integrate the Filippov dynamics of `sys` from `x0`. The result always
/// contains at least one branch; forks appear only under
/// [`BranchPolicy::ExploreAll`].
pub fn simulate(
    sys: &BimodalSystem,
    x0: &DVector<f64>,
    opts: &SimOptions,
) -> Result<Trajectory, SimError> {
    if x0.len() != sys.n() {
        return Err(SimError::StateDimension {
            got: x0.len(),
            expected: sys.n(),
        });
    }
    if !(opts.dt.is_finite() && opts.dt > 0.0) {
        return Err(SimError::BadOptions(format!("dt must be positive, got {}", opts.dt)));
    }
    if !(opts.t_end.is_finite() && opts.t_end > 0.0) {
        return Err(SimError::BadOptions(format!(
            "t_end must be positive, got {}",
            opts.t_end
        )));
    }
    if opts.max_switches == 0 {
        return Err(SimError::BadOptions("max_switches must be at least 1".into()));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(SimError::BadOptions("initial state has non-finite entries".into()));
    }

    // Decided once: whether the fields agree on the invariant zero-output
    // set, which settles continuations from states stuck on it.
    let fields_agree_on_w0 = check_field_agreement(sys, &opts.tols).holds;

    let mut queue: VecDeque<Pending> = VecDeque::new();
    queue.push_back(Pending {
        id: "root".to_string(),
        t: 0.0,
        x: x0.clone(),
        start: Start::Classify,
        depth: 0,
    });
    let mut branches: Vec<Branch> = Vec::new();
    while let Some(pending) = queue.pop_front() {
        let branch = run_branch(sys, opts, fields_agree_on_w0, pending, &mut queue, &branches)?;
        branches.push(branch);
    }
    Ok(Trajectory { branches })
}

fn dispatch(
    sys: &BimodalSystem,
    x: &DVector<f64>,
    opts: &SimOptions,
    fields_agree_on_w0: bool,
) -> Dispatch {
    let cls = classify_initial_state(sys, x, opts.surface_tol, opts.tols.tol_rank, opts.tols.tol_lex);
    match cls.continuation {
        Continuation::Mode1Flow => Dispatch::Flow(ModeId::Mode1),
        Continuation::Mode2Flow => Dispatch::Flow(ModeId::Mode2),
        Continuation::FirstOrderSliding => {
            let (b1, b2) = (cls.rates[0], cls.rates[1]);
            let lambda = sliding_weight(b1, b2).unwrap_or(0.5);
            Dispatch::Slide(lambda, None)
        }
        Continuation::OnW0 => {
            if fields_agree_on_w0 {
                Dispatch::Flow(ModeId::Mode1)
            } else {
                Dispatch::BranchNow(
                    "state is on the invariant zero-output set and the fields disagree there"
                        .to_string(),
                )
            }
        }
        Continuation::Branching => Dispatch::BranchNow(
            "both modes flow away from the surface: several continuations exist".to_string(),
        ),
        Continuation::NoCaratheodory => match second_order_weight(sys, x) {
            Some(lambda) => Dispatch::Slide(
                lambda,
                Some(format!(
                    "no classical continuation; second-order sliding selection lambda = {lambda}"
                )),
            ),
            None => Dispatch::Stop(
                "no classical continuation and no admissible second-order sliding selection"
                    .to_string(),
            ),
        },
    }
}

#[allow(clippy::too_many_lines)]
fn run_branch(
    sys: &BimodalSystem,
    opts: &SimOptions,
    fields_agree_on_w0: bool,
    pending: Pending,
    queue: &mut VecDeque<Pending>,
    finished: &[Branch],
) -> Result<Branch, SimError> {
    let mut br = Branch {
        id: pending.id.clone(),
        samples: Vec::new(),
        events: Vec::new(),
        diagnostics: Vec::new(),
        termination: Termination::Completed,
    };
    let mut t = pending.t;
    let mut x = pending.x.clone();
    let mut regime: Option<Regime> = match pending.start {
        Start::Forced(m) => Some(match m {
            ModeId::Mode1 => Regime::Mode1,
            ModeId::Mode2 => Regime::Mode2,
        }),
        Start::Classify => None,
    };
    let mut stalls = 0usize;
    let window_width = 100.0 * opts.dt;
    let mut switch_times: VecDeque<f64> = VecDeque::new();

    // Count a switching event; true when the Zeno guard trips.
    let push_switch = |switch_times: &mut VecDeque<f64>, now: f64| -> bool {
        switch_times.push_back(now);
        while let Some(&front) = switch_times.front() {
            if front < now - window_width {
                switch_times.pop_front();
            } else {
                break;
            }
        }
        switch_times.len() > opts.max_switches
    };

    macro_rules! push_sample {
        ($r:expr) => {
            br.samples.push(Sample {
                t,
                x: x.clone(),
                regime: $r,
            })
        };
    }

    // Resolve a branch point per policy. Returns the regime to continue
    // with, or None when this branch ends here (fork or budget stop).
    let handle_branch_point = |br: &mut Branch,
                                   queue: &mut VecDeque<Pending>,
                                   t: f64,
                                   x: &DVector<f64>,
                                   detail: String,
                                   depth: usize|
     -> Option<Regime> {
        match opts.branch_policy {
            BranchPolicy::FollowMode1 => {
                br.events.push(SimEvent {
                    t,
                    x: x.iter().copied().collect(),
                    kind: EventKind::Branch,
                    detail: format!("{detail}; policy follows mode 1"),
                });
                Some(Regime::Mode1)
            }
            BranchPolicy::FollowMode2 => {
                br.events.push(SimEvent {
                    t,
                    x: x.iter().copied().collect(),
                    kind: EventKind::Branch,
                    detail: format!("{detail}; policy follows mode 2"),
                });
                Some(Regime::Mode2)
            }
            BranchPolicy::ExploreAll => {
                let budget_left =
                    finished.len() + queue.len() + 2 < MAX_TOTAL_BRANCHES && depth < opts.max_depth;
                if !budget_left {
                    br.events.push(SimEvent {
                        t,
                        x: x.iter().copied().collect(),
                        kind: EventKind::Branch,
                        detail: format!("{detail}; branch budget exhausted"),
                    });
                    br.diagnostics
                        .push("branch point skipped: depth or budget limit reached".to_string());
                    br.termination = Termination::BranchLimit;
                    return None;
                }
                br.events.push(SimEvent {
                    t,
                    x: x.iter().copied().collect(),
                    kind: EventKind::Branch,
                    detail: format!("{detail}; exploring both modes"),
                });
                for (suffix, mode) in [("1", ModeId::Mode1), ("2", ModeId::Mode2)] {
                    queue.push_back(Pending {
                        id: format!("{}.{}", br.id, suffix),
                        t,
                        x: x.clone(),
                        start: Start::Forced(mode),
                        depth: depth + 1,
                    });
                }
                br.termination = Termination::Branched;
                None
            }
        }
    };

    'outer: loop {
        // (Re)establish the regime from the exact state classification.
        if regime.is_none() {
            match dispatch(sys, &x, opts, fields_agree_on_w0) {
                Dispatch::Flow(m) => {
                    regime = Some(match m {
                        ModeId::Mode1 => Regime::Mode1,
                        ModeId::Mode2 => Regime::Mode2,
                    });
                }
                Dispatch::Slide(lambda, diag) => {
                    if let Some(d) = diag {
                        br.diagnostics.push(format!("t = {t}: {d}"));
                    }
                    x = project_onto_surface(sys, &x);
                    regime = Some(Regime::Sliding(lambda));
                }
                Dispatch::BranchNow(detail) => {
                    match handle_branch_point(&mut br, queue, t, &x, detail, pending.depth) {
                        Some(r) => regime = Some(r),
                        None => break 'outer,
                    }
                    if push_switch(&mut switch_times, t) {
                        zeno_trip(&mut br, t, &x, &switch_times);
                        break 'outer;
                    }
                }
                Dispatch::Stop(d) => {
                    br.diagnostics.push(format!("t = {t}: {d}"));
                    br.termination = Termination::DeadEnd;
                    push_sample!(Regime::Mode1);
                    break 'outer;
                }
            }
            if br.samples.is_empty() {
                push_sample!(regime.expect("regime was just set"));
            }
            continue 'outer;
        }
        let current = regime.expect("regime is set in the loop");
        if br.samples.is_empty() {
            // Branches started with a forced mode record their entry state.
            push_sample!(current);
        }

        if opts.t_end - t <= 1e-12 * opts.t_end.max(1.0) {
            br.termination = Termination::Completed;
            break 'outer;
        }
        let dt_eff = opts.dt.min(opts.t_end - t);

        match current {
            Regime::Mode1 | Regime::Mode2 => {
                let mode = if current == Regime::Mode1 {
                    ModeId::Mode1
                } else {
                    ModeId::Mode2
                };
                let x_raw = rk4_step(&|xv: &DVector<f64>| sys.field(mode, xv), &x, dt_eff);
                if x_raw.iter().any(|v| !v.is_finite()) {
                    return Err(SimError::NonFiniteState { t });
                }
                let y_new = sys.output(&x_raw);
                let violated = match mode {
                    ModeId::Mode1 => y_new > opts.surface_tol,
                    ModeId::Mode2 => y_new < -opts.surface_tol,
                };
                if !violated {
                    t += dt_eff;
                    x = x_raw;
                    stalls = 0;
                    push_sample!(current);
                    continue 'outer;
                }
                // Surface event inside this step.
                let (tau, x_star) =
                    locate_event(sys, mode, &x, dt_eff, opts.surface_tol, opts.event_tol);
                if tau < opts.event_tol {
                    stalls += 1;
                    if stalls > MAX_STALLS {
                        br.diagnostics.push(format!(
                            "t = {t}: event location stopped advancing time; giving up"
                        ));
                        br.termination = Termination::Underflow;
                        break 'outer;
                    }
                } else {
                    stalls = 0;
                }
                t += tau;
                x = x_star;
                match dispatch(sys, &x, opts, fields_agree_on_w0) {
                    Dispatch::Flow(m2) if m2 == mode => {
                        // Grazing contact: stay in the same mode.
                        push_sample!(current);
                    }
                    Dispatch::Flow(m2) => {
                        br.events.push(SimEvent {
                            t,
                            x: x.iter().copied().collect(),
                            kind: EventKind::Crossing,
                            detail: format!(
                                "mode {} -> mode {}",
                                if mode == ModeId::Mode1 { 1 } else { 2 },
                                if m2 == ModeId::Mode1 { 1 } else { 2 }
                            ),
                        });
                        regime = Some(match m2 {
                            ModeId::Mode1 => Regime::Mode1,
                            ModeId::Mode2 => Regime::Mode2,
                        });
                        push_sample!(regime.expect("set above"));
                        if push_switch(&mut switch_times, t) {
                            zeno_trip(&mut br, t, &x, &switch_times);
                            break 'outer;
                        }
                    }
                    Dispatch::Slide(lambda, diag) => {
                        if let Some(d) = diag {
                            br.diagnostics.push(format!("t = {t}: {d}"));
                        }
                        br.events.push(SimEvent {
                            t,
                            x: x.iter().copied().collect(),
                            kind: EventKind::SlidingEntry,
                            detail: format!("lambda = {lambda}"),
                        });
                        regime = Some(Regime::Sliding(lambda));
                        push_sample!(regime.expect("set above"));
                        if push_switch(&mut switch_times, t) {
                            zeno_trip(&mut br, t, &x, &switch_times);
                            break 'outer;
                        }
                    }
                    Dispatch::BranchNow(detail) => {
                        match handle_branch_point(&mut br, queue, t, &x, detail, pending.depth) {
                            Some(r) => {
                                regime = Some(r);
                                push_sample!(r);
                            }
                            None => break 'outer,
                        }
                        if push_switch(&mut switch_times, t) {
                            zeno_trip(&mut br, t, &x, &switch_times);
                            break 'outer;
                        }
                    }
                    Dispatch::Stop(d) => {
                        br.diagnostics.push(format!("t = {t}: {d}"));
                        br.termination = Termination::DeadEnd;
                        push_sample!(current);
                        break 'outer;
                    }
                }
            }
            Regime::Sliding(lambda_prev) => {
                let (b1, b2) = surface_rates(sys, &x);
                let lambda = sliding_weight(b1, b2)
                    .or_else(|| second_order_weight(sys, &x))
                    .unwrap_or(lambda_prev);
                let exit_tol = opts.tols.tol_fact;
                if lambda < -exit_tol || lambda > 1.0 + exit_tol {
                    let into = if lambda < -exit_tol {
                        ModeId::Mode1
                    } else {
                        ModeId::Mode2
                    };
                    br.events.push(SimEvent {
                        t,
                        x: x.iter().copied().collect(),
                        kind: EventKind::SlidingExit,
                        detail: format!(
                            "into mode {} (lambda = {lambda})",
                            if into == ModeId::Mode1 { 1 } else { 2 }
                        ),
                    });
                    regime = Some(match into {
                        ModeId::Mode1 => Regime::Mode1,
                        ModeId::Mode2 => Regime::Mode2,
                    });
                    push_sample!(regime.expect("set above"));
                    if push_switch(&mut switch_times, t) {
                        zeno_trip(&mut br, t, &x, &switch_times);
                        break 'outer;
                    }
                    continue 'outer;
                }
                // Integrate the blended field, recomputing the weight in
                // every stage; fall back to the frozen weight where the
                // rates degenerate.
                let sliding_field = |xv: &DVector<f64>| {
                    let (r1, r2) = surface_rates(sys, xv);
                    let l = sliding_weight(r1, r2)
                        .map(|l| l.clamp(0.0, 1.0))
                        .unwrap_or(lambda.clamp(0.0, 1.0));
                    sys.blended_field(l, xv)
                };
                let x_raw = rk4_step(&sliding_field, &x, dt_eff);
                if x_raw.iter().any(|v| !v.is_finite()) {
                    return Err(SimError::NonFiniteState { t });
                }
                t += dt_eff;
                x = project_onto_surface(sys, &x_raw);
                stalls = 0;
                let (n1, n2) = surface_rates(sys, &x);
                let lambda_now = sliding_weight(n1, n2).unwrap_or(lambda);
                regime = Some(Regime::Sliding(lambda_now));
                push_sample!(regime.expect("set above"));
            }
        }
    }
    Ok(br)
}

fn zeno_trip(br: &mut Branch, t: f64, x: &DVector<f64>, switch_times: &VecDeque<f64>) {
    br.events.push(SimEvent {
        t,
        x: x.iter().copied().collect(),
        kind: EventKind::ZenoGuardTrip,
        detail: format!(
            "{} switching events inside the trailing window",
            switch_times.len()
        ),
    });
    br.termination = Termination::ZenoGuard;
    br.diagnostics.push(format!(
        "t = {t}: switching events accumulate; stopping this branch"
    ));
}

// ---------------------------------------------------------------------------
// Consistency check: sampled derivative against the convex hull
// ---------------------------------------------------------------------------

/// Result of checking the sampled difference quotients of a branch against
/// the admissible velocity sets.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualReport {
    /// Sample pairs actually tested.
    pub pairs: usize,
    /// Largest distance from a difference quotient to the admissible set.
    pub max_residual: f64,
}

/// For each adjacent pair of samples in the same regime class, compare the
/// chord slope `(x_{k+1}−x_k)/Δt` with the admissible velocity at the chord
/// midpoint: the active mode's field for pure-mode pairs, the convex hull
/// of both fields for sliding pairs.
pub fn check_filippov_residual(sys: &BimodalSystem, branch: &Branch) -> ResidualReport {
    let mut pairs = 0usize;
    let mut max_residual: f64 = 0.0;
    for w in branch.samples.windows(2) {
        let (s1, s2) = (&w[0], &w[1]);
        let dt = s2.t - s1.t;
        if dt < 1e-12 || !Regime::same_class(&s1.regime, &s2.regime) {
            continue;
        }
        let fd = (&s2.x - &s1.x) / dt;
        let mid = (&s1.x + &s2.x) * 0.5;
        let residual = match s1.regime {
            Regime::Mode1 => (fd - sys.field(ModeId::Mode1, &mid)).norm(),
            Regime::Mode2 => (fd - sys.field(ModeId::Mode2, &mid)).norm(),
            Regime::Sliding(_) => {
                let f1 = sys.field(ModeId::Mode1, &mid);
                let f2 = sys.field(ModeId::Mode2, &mid);
                distance_to_segment(&fd, &f1, &f2)
            }
        };
        pairs += 1;
        max_residual = max_residual.max(residual);
    }
    ResidualReport {
        pairs,
        max_residual,
    }
}

fn distance_to_segment(p: &DVector<f64>, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let ab = b - a;
    let denom = ab.norm_squared();
    if denom < 1e-24 {
        return (p - a).norm();
    }
    let s = ((p - a).dot(&ab) / denom).clamp(0.0, 1.0);
    (p - (a + ab * s)).norm()
}

// ---------------------------------------------------------------------------
// Serialization: CSV per branch plus a JSON index
// ---------------------------------------------------------------------------

/// Render one branch as CSV with header `t,x1..xn,regime,lambda,event`.
/// Event markers get their own rows, placed before the sample taken at the
/// same instant.
pub fn branch_csv(branch: &Branch, n: usize) -> String {
    let mut out = String::new();
    out.push('t');
    for i in 1..=n {
        out.push_str(&format!(",x{i}"));
    }
    out.push_str(",regime,lambda,event\n");

    let fallback_regime = |idx_next: usize| -> Regime {
        branch
            .samples
            .get(idx_next)
            .map(|s| s.regime)
            .or_else(|| branch.samples.last().map(|s| s.regime))
            .unwrap_or(Regime::Mode1)
    };

    let mut si = 0usize;
    let mut ei = 0usize;
    while si < branch.samples.len() || ei < branch.events.len() {
        let take_event = match (branch.samples.get(si), branch.events.get(ei)) {
            (Some(s), Some(e)) => e.t <= s.t,
            (None, Some(_)) => true,
            _ => false,
        };
        if take_event {
            let e = &branch.events[ei];
            let regime = fallback_regime(si);
            out.push_str(&format!("{}", e.t));
            for v in &e.x {
                out.push_str(&format!(",{v}"));
            }
            out.push_str(&format!(
                ",{},{},{:?}\n",
                regime.code(),
                regime.lambda(),
                e.kind
            ));
            ei += 1;
        } else {
            let s = &branch.samples[si];
            out.push_str(&format!("{}", s.t));
            for v in s.x.iter() {
                out.push_str(&format!(",{v}"));
            }
            out.push_str(&format!(",{},{},\n", s.regime.code(), s.regime.lambda()));
            si += 1;
        }
    }
    out
}

impl Trajectory {
    pub fn main(&self) -> &Branch {
        &self.branches[0]
    }

    /// File name used for a branch in multi-file output.
    pub fn branch_file_name(branch: &Branch) -> String {
        format!("branch-{}.csv", branch.id)
    }

    /// JSON index describing the branch tree: ids, parents, file names,
    /// spans, terminations and diagnostics.
    pub fn branch_index(&self, n: usize) -> serde_json::Value {
        let entries: Vec<serde_json::Value> = self
            .branches
            .iter()
            .map(|b| {
                let parent = b.id.rfind('.').map(|i| b.id[..i].to_string());
                serde_json::json!({
                    "id": b.id,
                    "parent": parent,
                    "file": Self::branch_file_name(b),
                    "start": b.samples.first().map(|s| s.t),
                    "end": b.samples.last().map(|s| s.t),
                    "samples": b.samples.len(),
                    "events": b.events.iter().map(|e| serde_json::json!({
                        "t": e.t,
                        "kind": e.kind,
                        "detail": e.detail,
                        "x": e.x,
                    })).collect::<Vec<_>>(),
                    "termination": b.termination,
                    "diagnostics": b.diagnostics,
                })
            })
            .collect();
        serde_json::json!({ "state_dimension": n, "branches": entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn scalar_relay_reaches_surface_and_slides_at_rest() {
        let sys = BimodalSystem::scalar_relay();
        let opts = SimOptions {
            t_end: 3.0,
            ..SimOptions::default()
        };
        let traj = simulate(&sys, &dv(&[1.0]), &opts).unwrap();
        let b = traj.main();
        assert_eq!(b.termination, Termination::Completed);
        let entry = b
            .events
            .iter()
            .find(|e| e.kind == EventKind::SlidingEntry)
            .expect("sliding entry");
        assert!((entry.t - 1.0).abs() <= 1e-6, "entry at {}", entry.t);
        assert_eq!(b.events.len(), 1, "single event expected: {:?}", b.events);
        // After entry the blend is 1/2 and the state pins to the origin.
        for s in b.samples.iter().filter(|s| s.t > entry.t + 1e-9) {
            match s.regime {
                Regime::Sliding(l) => assert!((l - 0.5).abs() <= 1e-9),
                other => panic!("expected sliding after entry, got {other:?}"),
            }
            assert!(s.x[0].abs() <= 1e-9);
        }
        let last = b.samples.last().unwrap();
        assert!((last.t - opts.t_end).abs() <= 1e-9);
    }

    #[test]
    fn filling_tanks_stay_in_mode_one_and_settle() {
        let sys = BimodalSystem::two_tank(0.5);
        let opts = SimOptions {
            t_end: 20.0,
            ..SimOptions::default()
        };
        let traj = simulate(&sys, &dv(&[0.0, 0.0]), &opts).unwrap();
        let b = traj.main();
        assert!(b.events.is_empty(), "unexpected events: {:?}", b.events);
        let last = b.samples.last().unwrap();
        assert!((last.x[0] - 0.5).abs() <= 1e-6);
        assert!((last.x[1] - 0.5).abs() <= 1e-6);
        assert!(b.samples.iter().all(|s| s.regime == Regime::Mode1));
    }

    #[test]
    fn overflowing_tanks_cross_transversally() {
        let sys = BimodalSystem::two_tank(2.0);
        let opts = SimOptions {
            t_end: 4.0,
            ..SimOptions::default()
        };
        let traj = simulate(&sys, &dv(&[0.0, 0.0]), &opts).unwrap();
        let b = traj.main();
        let first = b.events.first().expect("at least one event");
        assert_eq!(first.kind, EventKind::Crossing);
        // Mode 1 dynamics: x1 = 2(1−e^{−t}), x2 = 2(1−e^{−t}) − 2t·e^{−t};
        // the crossing solves x2 = 1.
        let reference = {
            let f = |t: f64| 2.0 * (1.0 - (-t).exp()) - 2.0 * t * (-t).exp() - 1.0;
            let (mut lo, mut hi) = (1.0f64, 2.0f64);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if f(mid) > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            0.5 * (lo + hi)
        };
        assert!(
            (first.t - reference).abs() <= 1e-6,
            "crossing at {} vs reference {}",
            first.t,
            reference
        );
        // The state keeps moving after the crossing (no sticking).
        let after: Vec<_> = b.samples.iter().filter(|s| s.t > first.t).collect();
        assert!(!after.is_empty());
        assert!(after.iter().any(|s| s.regime == Regime::Mode2));
    }

    #[test]
    fn integrator_chain_origin_resolves_to_second_order_sliding() {
        let sys = BimodalSystem::pogromsky();
        let opts = SimOptions {
            t_end: 1.0,
            ..SimOptions::default()
        };
        let traj = simulate(&sys, &dv(&[0.0, 0.0, 0.0]), &opts).unwrap();
        let b = traj.main();
        assert_eq!(b.termination, Termination::Completed);
        assert!(
            b.diagnostics.iter().any(|d| d.contains("second-order")),
            "diagnostics: {:?}",
            b.diagnostics
        );
        for s in &b.samples {
            assert!(s.x.amax() <= 1e-9, "state escaped: {:?}", s.x);
        }
    }

    #[test]
    fn zeno_guard_trips_when_the_window_is_tight() {
        // The symmetric relay oscillator crosses the surface twice per
        // period; with a wide window and a one-switch budget the guard
        // must trip.
        let sys = BimodalSystem::double_integrator_relay();
        let opts = SimOptions {
            t_end: 30.0,
            dt: 0.05,
            max_switches: 1,
            ..SimOptions::default()
        };
        let traj = simulate(&sys, &dv(&[-1.0, 0.0]), &opts).unwrap();
        let b = traj.main();
        assert_eq!(b.termination, Termination::ZenoGuard);
        assert_eq!(
            b.events.last().unwrap().kind,
            EventKind::ZenoGuardTrip,
            "events: {:?}",
            b.events
        );
    }

    #[test]
    fn repulsive_relay_forks_under_explore_all() {
        let sys = BimodalSystem::new(
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            dv(&[-1.0]),
            dv(&[1.0]),
            dv(&[1.0]),
            0.0,
        )
        .unwrap();
        let opts = SimOptions {
            t_end: 1.0,
            branch_policy: BranchPolicy::ExploreAll,
            ..SimOptions::default()
        };
        let traj = simulate(&sys, &dv(&[0.0]), &opts).unwrap();
        assert_eq!(traj.branches.len(), 3);
        assert_eq!(traj.branches[0].termination, Termination::Branched);
        let child1 = traj.branches.iter().find(|b| b.id == "root.1").unwrap();
        let child2 = traj.branches.iter().find(|b| b.id == "root.2").unwrap();
        assert!(child1.samples.last().unwrap().x[0] < -0.9);
        assert!(child2.samples.last().unwrap().x[0] > 0.9);
    }

    #[test]
    fn repulsive_relay_follows_policy_mode_two() {
        let sys = BimodalSystem::new(
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            dv(&[-1.0]),
            dv(&[1.0]),
            dv(&[1.0]),
            0.0,
        )
        .unwrap();
        let opts = SimOptions {
            t_end: 1.0,
            branch_policy: BranchPolicy::FollowMode2,
            ..SimOptions::default()
        };
        let traj = simulate(&sys, &dv(&[0.0]), &opts).unwrap();
        assert_eq!(traj.branches.len(), 1);
        assert!(traj.main().samples.last().unwrap().x[0] > 0.9);
        assert_eq!(traj.main().events[0].kind, EventKind::Branch);
    }

    #[test]
    fn sampled_slopes_match_the_admissible_velocities() {
        let sys = BimodalSystem::two_tank(0.5);
        let opts = SimOptions {
            t_end: 5.0,
            ..SimOptions::default()
        };
        let traj = simulate(&sys, &dv(&[0.0, 0.0]), &opts).unwrap();
        let report = check_filippov_residual(&sys, traj.main());
        assert!(report.pairs > 4000);
        assert!(
            report.max_residual <= 10.0 * opts.dt * opts.dt,
            "residual {}",
            report.max_residual
        );

        // Corrupting one sample must blow the residual up.
        let mut bad = traj.main().clone();
        let mid = bad.samples.len() / 2;
        bad.samples[mid].x[0] += 1e-3;
        let corrupted = check_filippov_residual(&sys, &bad);
        assert!(corrupted.max_residual > 10.0 * opts.dt * opts.dt);
    }

    #[test]
    fn sliding_residual_stays_second_order_on_curved_surfacing() {
        // Sliding with state-dependent blend: attractive relay on the
        // second state with drift in the first, so the state moves along
        // the surface and the blend weight varies with it.
        let a = DMatrix::from_row_slice(2, 2, &[0.2, 1.0, -0.3, 0.0]);
        let sys = BimodalSystem::relay(
            a,
            dv(&[0.0, 1.0]),
            dv(&[0.0, 1.0]),
        )
        .unwrap();
        let opts = SimOptions {
            t_end: 2.0,
            ..SimOptions::default()
        };
        // Start sliding immediately: x = (0.5, 0): rates 1 ± 0.15… both
        // modes push toward the surface.
        let traj = simulate(&sys, &dv(&[0.5, 0.0]), &opts).unwrap();
        let b = traj.main();
        assert!(b
            .samples
            .iter()
            .any(|s| matches!(s.regime, Regime::Sliding(_))));
        // The surface is exactly invariant after projection.
        for s in &b.samples {
            if matches!(s.regime, Regime::Sliding(_)) {
                assert!(sys.output(&s.x).abs() <= 1e-12);
            }
        }
        let report = check_filippov_residual(&sys, b);
        assert!(
            report.max_residual <= 10.0 * opts.dt * opts.dt,
            "residual {}",
            report.max_residual
        );
    }

    #[test]
    fn csv_rendering_is_deterministic_and_well_formed() {
        let sys = BimodalSystem::scalar_relay();
        let opts = SimOptions {
            t_end: 2.0,
            ..SimOptions::default()
        };
        let t1 = simulate(&sys, &dv(&[1.0]), &opts).unwrap();
        let t2 = simulate(&sys, &dv(&[1.0]), &opts).unwrap();
        let c1 = branch_csv(t1.main(), sys.n());
        let c2 = branch_csv(t2.main(), sys.n());
        assert_eq!(c1, c2);
        let mut lines = c1.lines();
        assert_eq!(lines.next().unwrap(), "t,x1,regime,lambda,event");
        // Every row has the same number of commas.
        for line in c1.lines().skip(1) {
            assert_eq!(line.matches(',').count(), 4, "bad row: {line}");
        }
        assert!(c1.contains("SlidingEntry"));
    }

    #[test]
    fn bad_options_are_rejected() {
        let sys = BimodalSystem::scalar_relay();
        let opts = SimOptions {
            dt: -1.0,
            ..SimOptions::default()
        };
        assert!(matches!(
            simulate(&sys, &dv(&[1.0]), &opts),
            Err(SimError::BadOptions(_))
        ));
        assert!(matches!(
            simulate(&sys, &dv(&[1.0, 2.0]), &SimOptions::default()),
            Err(SimError::StateDimension { .. })
        ));
    }
}
