//! Cross-cutting invariants tying the analysis layer to the simulator:
//! certificates must re-verify, Zeno certificates must match observed
//! switching behavior, event-free runs must reduce to plain RK4, and the
//! left/right analyses must be mirror images under time reversal.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use filippov_lab::linalg;
use filippov_lab::model::{BimodalSystem, ModeId};
use filippov_lab::simulator::{simulate, EventKind, Regime, SimOptions, Termination};
use filippov_lab::wellposed::{
    analyze, in_exception_set, reverify_certificate, CertStatus, ToleranceSet,
};

fn aligned_relay() -> BimodalSystem {
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
    let c = DVector::from_vec(vec![1.0, 0.0]);
    BimodalSystem::relay(a, 0.5 * &c, c).unwrap()
}

fn repelling_relay() -> BimodalSystem {
    BimodalSystem::new(
        DMatrix::zeros(1, 1),
        DMatrix::zeros(1, 1),
        DVector::from_vec(vec![-1.0]),
        DVector::from_vec(vec![1.0]),
        DVector::from_vec(vec![1.0]),
        0.0,
    )
    .unwrap()
}

fn fixture_suite() -> Vec<(&'static str, BimodalSystem)> {
    vec![
        ("scalar_relay", BimodalSystem::scalar_relay()),
        ("double_integrator_relay", BimodalSystem::double_integrator_relay()),
        ("aligned_relay", aligned_relay()),
        ("two_tank_0.5", BimodalSystem::two_tank(0.5)),
        ("two_tank_2", BimodalSystem::two_tank(2.0)),
        ("pogromsky", BimodalSystem::pogromsky()),
        ("repelling_relay", repelling_relay()),
    ]
}

/// Random instance with entries in [-1, 1], a non-degenerate normal, and
/// the given surface offset.
fn random_system(rng: &mut ChaCha8Rng, n: usize, f: f64) -> BimodalSystem {
    let a1 = DMatrix::<f64>::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let a2 = DMatrix::<f64>::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let e1 = DVector::<f64>::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let e2 = DVector::<f64>::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let mut c = DVector::<f64>::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    if c.norm() < 0.3 {
        c[0] += 1.0;
    }
    BimodalSystem::new(a1, a2, e1, e2, c, f).unwrap()
}

/// Every certificate attached to a verdict must survive independent
/// re-verification against the raw system data.
#[test]
fn certificates_reverify_on_all_fixtures() {
    let tols = ToleranceSet::default();
    for (name, sys) in fixture_suite() {
        let report = analyze(&sys, &tols);
        for verdict in &report.conditions {
            assert!(
                reverify_certificate(&sys, verdict, &tols),
                "{name}: certificate for {:?} failed re-verification ({})",
                verdict.id,
                verdict.note
            );
        }
        // The reversed system's certificates must also hold up.
        let rev = sys.reverse_time();
        for verdict in &analyze(&rev, &tols).conditions {
            assert!(
                reverify_certificate(&rev, verdict, &tols),
                "{name} (reversed): certificate for {:?} failed re-verification",
                verdict.id
            );
        }
    }
}

/// A Zeno-freeness certificate must be corroborated by simulation: no
/// switching-guard trip from any of a spread of starting states.
#[test]
fn zeno_certificates_match_simulated_behavior() {
    let tols = ToleranceSet::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut certified = 0usize;
    for (name, sys) in fixture_suite() {
        let report = analyze(&sys, &tols);
        if report.zeno_free != CertStatus::Certified {
            continue;
        }
        certified += 1;
        let n = sys.n();
        for _ in 0..5 {
            let x0 = DVector::<f64>::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
            let opts = SimOptions::default();
            let trajectory = simulate(&sys, &x0, &opts).expect("simulation runs");
            for branch in &trajectory.branches {
                assert!(
                    branch.termination != Termination::ZenoGuard,
                    "{name}: guard tripped despite a Zeno-freeness certificate"
                );
                assert!(
                    branch.events.iter().all(|e| e.kind != EventKind::ZenoGuardTrip),
                    "{name}: guard event despite a Zeno-freeness certificate"
                );
            }
        }
    }
    assert!(certified >= 1, "at least one fixture should carry the certificate");
}

/// Away from the surface the integrator is plain RK4 of the active affine
/// field; replaying the recorded grid must reproduce the samples.
#[test]
fn event_free_runs_reduce_to_plain_rk4() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut event_free = 0usize;
    for _ in 0..30 {
        let n = rng.gen_range(1..=3);
        // Push the surface far away so most short runs never reach it.
        let sys = random_system(&mut rng, n, -10.0);
        let x0 = DVector::<f64>::from_fn(n, |_, _| rng.gen_range(-0.5..0.5));
        let opts = SimOptions {
            t_end: 1.0,
            ..SimOptions::default()
        };
        let trajectory = simulate(&sys, &x0, &opts).expect("simulation runs");
        let branch = trajectory.main();
        if !branch.events.is_empty() {
            continue;
        }
        event_free += 1;
        assert_eq!(branch.termination, Termination::Completed);
        let field = |x: &DVector<f64>| sys.field(ModeId::Mode1, x);
        let mut reference = branch.samples[0].x.clone();
        let mut sup = 0.0f64;
        for pair in branch.samples.windows(2) {
            let h = pair[1].t - pair[0].t;
            if h <= 1e-15 {
                continue;
            }
            reference = linalg::rk4_step(&field, &reference, h);
            sup = sup.max((&pair[1].x - &reference).amax());
            assert_eq!(pair[1].regime, Regime::Mode1);
        }
        assert!(sup <= 1e-12, "replay deviates by {sup:.3e}");
    }
    assert!(event_free >= 10, "only {event_free} event-free runs out of 30");
}

/// Reversing time twice is the identity on the raw system data.
#[test]
fn time_reversal_is_an_involution() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for (_, sys) in fixture_suite() {
        assert_eq!(sys.reverse_time().reverse_time(), sys);
    }
    for _ in 0..20 {
        let n = rng.gen_range(1..=4);
        let f = rng.gen_range(-1.0..1.0);
        let sys = random_system(&mut rng, n, f);
        assert_eq!(sys.reverse_time().reverse_time(), sys);
    }
}

/// The report's left-uniqueness entry must equal the right-uniqueness
/// verdict of an independently analyzed time-reversed system — also on
/// random instances, not just the curated fixtures.
#[test]
fn left_uniqueness_matches_the_reversed_analysis() {
    let tols = ToleranceSet::default();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..20 {
        let n = rng.gen_range(1..=3);
        let f = rng.gen_range(-1.0..1.0);
        let sys = random_system(&mut rng, n, f);
        let report = analyze(&sys, &tols);
        let reversed = analyze(&sys.reverse_time(), &tols);
        assert_eq!(report.left_uniqueness, reversed.right_uniqueness);
        assert_eq!(report.backward_caratheodory, reversed.forward_caratheodory);
    }
}

/// The exception set of the order-2 dominance condition: a state qualifies
/// only when one mode's data vanishes through order two while the other
/// mode's second derivative strictly escapes. A system with a stationary
/// mode-1 field and a mode-2 field curving downward has its whole surface
/// in the set; ordinary fixtures have none of it.
#[test]
fn exception_set_flags_only_degenerate_surface_states() {
    let tols = ToleranceSet::default();
    let degenerate = BimodalSystem::new(
        DMatrix::zeros(2, 2),
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
        DVector::zeros(2),
        DVector::from_vec(vec![0.0, -1.0]),
        DVector::from_vec(vec![1.0, 0.0]),
        0.0,
    )
    .unwrap();
    assert!(in_exception_set(&degenerate, &DVector::from_vec(vec![0.0, 0.0]), &tols));
    assert!(in_exception_set(&degenerate, &DVector::from_vec(vec![0.0, 1.5]), &tols));
    // Off the surface the data cannot vanish.
    assert!(!in_exception_set(&degenerate, &DVector::from_vec(vec![0.5, 0.3]), &tols));

    // Attractive sliding is not exceptional: the first derivative is alive.
    let relay = BimodalSystem::scalar_relay();
    assert!(!in_exception_set(&relay, &DVector::from_vec(vec![0.0]), &tols));
    // Nor is the tangential spiral point of the overdriven two-tank model:
    // both second derivatives are nonzero there.
    let tank = BimodalSystem::two_tank(2.0);
    assert!(!in_exception_set(&tank, &DVector::from_vec(vec![1.0, 1.0]), &tols));
}

/// During sliding the recorded blend weight must stay admissible and the
/// state must stay on the surface.
#[test]
fn sliding_samples_stay_on_the_surface_with_admissible_weights() {
    let starts: Vec<(BimodalSystem, DVector<f64>, f64)> = vec![
        (BimodalSystem::scalar_relay(), DVector::from_vec(vec![1.0]), 3.0),
        (aligned_relay(), DVector::from_vec(vec![0.0, 0.2]), 3.0),
        (
            BimodalSystem::double_integrator_relay(),
            DVector::from_vec(vec![-1.0, 0.0]),
            6.0,
        ),
    ];
    let mut sliding_samples = 0usize;
    for (sys, x0, t_end) in starts {
        let opts = SimOptions {
            t_end,
            ..SimOptions::default()
        };
        let trajectory = simulate(&sys, &x0, &opts).expect("simulation runs");
        for branch in &trajectory.branches {
            for sample in &branch.samples {
                if let Regime::Sliding(lambda) = sample.regime {
                    sliding_samples += 1;
                    assert!(
                        (-1e-9..=1.0 + 1e-9).contains(&lambda),
                        "blend weight {lambda} outside [0, 1]"
                    );
                    let y = sys.output(&sample.x);
                    assert!(
                        y.abs() <= 1e-7,
                        "sliding sample at t = {} drifted off the surface: {y:.3e}",
                        sample.t
                    );
                }
            }
        }
    }
    assert!(sliding_samples > 100, "expected a substantial sliding phase");
}
