//! Command-line front end.
//!
//! Five verbs over a shared system loader:
//!
//! * `analyze`   — well-posedness report as JSON
//! * `classify`  — continuation class of one initial state as JSON
//! * `simulate`  — trajectory CSV (single branch) or a branch directory
//! * `fixtures`  — list the built-in example systems
//! * `oracle`    — seeded randomized cross-check of the algebraic verdicts
//!
//! Systems are given either as a JSON file path or as a `fixture:` URI such
//! as `fixture:two_tank?u=2`. Errors from the verbs are printed to stderr as
//! one JSON object `{"error":{"kind":...,"message":...}}`; exit codes are
//! 0 (success), 2 (bad input), 3 (numerical failure).

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::lexalg::{decide_lex_implication, lex_sign, LexImplication, LexSign};
use crate::model::{BimodalSystem, ModeId};
use crate::observability::{observability_index, stacked};
use crate::sampling::{
    one_sided_lipschitz_bound, sample_one_sided_inequality, search_inequality_violation,
    search_lex_falsifier, LexNonpositiveSampler,
};
use crate::simulator::{branch_csv, simulate, BranchPolicy, SimError, SimOptions, Trajectory};
use crate::wellposed::{analyze, check_one_sided_lipschitz, Certificate, ToleranceSet};
use crate::wsets::classify_initial_state;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// A failure the front end reports as JSON on stderr.
#[derive(Debug)]
pub enum CliError {
    /// Unusable input: bad arguments, unreadable files, malformed systems.
    Input(String),
    /// The computation itself failed (state blew up, non-finite values).
    Numerical(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Input(_) => "input",
            CliError::Numerical(_) => "numerical",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Numerical(m) => m,
        }
    }

    fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

// ---------------------------------------------------------------------------
// Argument grammar
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(
    name = "filippov-lab",
    version,
    about = "Well-posedness analysis and simulation of bimodal piecewise-affine \
             differential inclusions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Copy)]
struct TolArgs {
    /// Relative singular-value threshold for rank decisions
    #[arg(long, default_value_t = 1e-9)]
    tol_rank: f64,
    /// Absolute bound on factorization and equality residuals
    #[arg(long, default_value_t = 1e-8)]
    tol_fact: f64,
    /// Smallest admissible diagonal entry of a triangular factor
    #[arg(long, default_value_t = 1e-8)]
    tol_diag: f64,
    /// Zero window for lexicographic signs and strict inequalities
    #[arg(long, default_value_t = 1e-9)]
    tol_lex: f64,
}

impl From<TolArgs> for ToleranceSet {
    fn from(t: TolArgs) -> Self {
        ToleranceSet {
            tol_rank: t.tol_rank,
            tol_fact: t.tol_fact,
            tol_diag: t.tol_diag,
            tol_lex: t.tol_lex,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum PolicyArg {
    /// Continue in mode 1 at a branch point
    FollowMode1,
    /// Continue in mode 2 at a branch point
    FollowMode2,
    /// Fork and follow every continuation (requires --out DIRECTORY)
    ExploreAll,
}

impl From<PolicyArg> for BranchPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::FollowMode1 => BranchPolicy::FollowMode1,
            PolicyArg::FollowMode2 => BranchPolicy::FollowMode2,
            PolicyArg::ExploreAll => BranchPolicy::ExploreAll,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Decide existence, uniqueness and Zeno-freeness; print a JSON report
    Analyze {
        /// System: JSON file path or fixture URI (see `fixtures`)
        system: String,
        #[command(flatten)]
        tols: TolArgs,
        /// Write the report to this file instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify one initial state: flow mode, sliding, branching, dead end
    Classify {
        /// System: JSON file path or fixture URI (see `fixtures`)
        system: String,
        /// Initial state, e.g. "0.5,-1" or "[0.5,-1]"
        #[arg(long)]
        state: String,
        /// Half-width of the band counted as "on the surface"
        #[arg(long, default_value_t = 1e-9)]
        surface_tol: f64,
        #[command(flatten)]
        tols: TolArgs,
        /// Write the result to this file instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integrate a trajectory and emit CSV samples with event markers
    Simulate {
        /// System: JSON file path or fixture URI (see `fixtures`)
        system: String,
        /// Initial state, e.g. "0.5,-1" or "[0.5,-1]"
        #[arg(long)]
        state: String,
        /// Final time
        #[arg(long, default_value_t = 10.0)]
        t_end: f64,
        /// Integration step
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        /// Time width to which surface events are located
        #[arg(long, default_value_t = 1e-9)]
        event_tol: f64,
        /// Half-width of the band counted as "on the surface"
        #[arg(long, default_value_t = 1e-9)]
        surface_tol: f64,
        /// Switching events tolerated per trailing 100-step window
        #[arg(long, default_value_t = 50)]
        max_switches: usize,
        /// What to do at a state with several continuations
        #[arg(long, value_enum, default_value_t = PolicyArg::FollowMode1)]
        branch_policy: PolicyArg,
        /// Maximum fork depth under explore-all
        #[arg(long, default_value_t = 8)]
        max_depth: usize,
        #[command(flatten)]
        tols: TolArgs,
        /// Output file (single branch) or directory (explore-all)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in example systems
    Fixtures,
    /// Cross-check the algebraic verdicts against seeded randomized sampling
    Oracle {
        /// System: JSON file path or fixture URI (see `fixtures`)
        system: String,
        /// RNG seed; identical seeds give identical reports
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sample count per randomized check
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        #[command(flatten)]
        tols: TolArgs,
        /// Write the report to this file instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

// ---------------------------------------------------------------------------
// System and state loading
// ---------------------------------------------------------------------------

/// Parse a `key=value&key=value` query into numeric parameters, rejecting
/// keys outside `allowed`.
fn parse_query(query: Option<&str>, allowed: &[&str]) -> Result<Vec<(String, f64)>, CliError> {
    let Some(query) = query else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    for piece in query.split('&').filter(|p| !p.is_empty()) {
        let (key, value) = piece.split_once('=').ok_or_else(|| {
            CliError::Input(format!("fixture parameter '{piece}' is not of the form key=value"))
        })?;
        if !allowed.contains(&key) {
            return Err(CliError::Input(format!(
                "unknown fixture parameter '{key}'; allowed: {}",
                if allowed.is_empty() { "none".to_string() } else { allowed.join(", ") }
            )));
        }
        let value: f64 = value.parse().map_err(|e| {
            CliError::Input(format!("fixture parameter '{key}': bad number '{value}': {e}"))
        })?;
        out.push((key.to_string(), value));
    }
    Ok(out)
}

fn query_value(params: &[(String, f64)], key: &str) -> Option<f64> {
    params.iter().rev().find(|(k, _)| k == key).map(|&(_, v)| v)
}

/// Build one of the built-in systems from the part of a URI after
/// `fixture:`, e.g. `two_tank?u=2`.
pub fn fixture_system(spec: &str) -> Result<BimodalSystem, CliError> {
    let (name, query) = match spec.split_once('?') {
        Some((n, q)) => (n, Some(q)),
        None => (spec, None),
    };
    match name {
        "scalar_relay" => {
            parse_query(query, &[])?;
            Ok(BimodalSystem::scalar_relay())
        }
        "relay" => {
            let params = parse_query(query, &["alpha"])?;
            match query_value(&params, "alpha") {
                None => Ok(BimodalSystem::double_integrator_relay()),
                Some(alpha) => {
                    let a = nalgebra::DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
                    let c = DVector::from_vec(vec![1.0, 0.0]);
                    BimodalSystem::relay(a, &c * alpha, c)
                        .map_err(|e| CliError::Input(e.to_string()))
                }
            }
        }
        "two_tank" => {
            let params = parse_query(query, &["u"])?;
            Ok(BimodalSystem::two_tank(query_value(&params, "u").unwrap_or(0.5)))
        }
        "pogromsky" => {
            parse_query(query, &[])?;
            Ok(BimodalSystem::pogromsky())
        }
        other => Err(CliError::Input(format!(
            "unknown fixture '{other}'; run `filippov-lab fixtures` for the list"
        ))),
    }
}

/// Load a system from a fixture URI or a JSON file path.
pub fn load_system(source: &str) -> Result<BimodalSystem, CliError> {
    if let Some(spec) = source.strip_prefix("fixture:") {
        return fixture_system(spec);
    }
    let text = std::fs::read_to_string(source)
        .map_err(|e| CliError::Input(format!("cannot read '{source}': {e}")))?;
    BimodalSystem::from_json(&text).map_err(|e| CliError::Input(e.to_string()))
}

/// Parse a state given as comma-separated numbers or a JSON array.
pub fn parse_state(text: &str) -> Result<DVector<f64>, CliError> {
    let t = text.trim();
    let values: Vec<f64> = if t.starts_with('[') {
        serde_json::from_str(t)
            .map_err(|e| CliError::Input(format!("state is not a JSON array of numbers: {e}")))?
    } else {
        t.split(',')
            .map(|piece| {
                piece.trim().parse::<f64>().map_err(|e| {
                    CliError::Input(format!("bad state entry '{}': {e}", piece.trim()))
                })
            })
            .collect::<Result<_, _>>()?
    };
    if values.is_empty() {
        return Err(CliError::Input("state must have at least one entry".to_string()));
    }
    if !values.iter().all(|v| v.is_finite()) {
        return Err(CliError::Input("state entries must be finite".to_string()));
    }
    Ok(DVector::from_vec(values))
}

// ---------------------------------------------------------------------------
// Verb bodies (pure: build the output, let `dispatch` do the I/O)
// ---------------------------------------------------------------------------

fn classify_report(
    sys: &BimodalSystem,
    state: &DVector<f64>,
    surface_tol: f64,
    tols: &ToleranceSet,
) -> serde_json::Value {
    let cls = classify_initial_state(sys, state, surface_tol, tols.tol_rank, tols.tol_lex);
    serde_json::json!({
        "state": state.iter().copied().collect::<Vec<f64>>(),
        "classification": cls,
    })
}

fn fixtures_value() -> serde_json::Value {
    serde_json::json!({
        "fixtures": [
            {
                "uri": "fixture:scalar_relay",
                "n": 1,
                "params": [],
                "summary": "relay dx/dt = -sgn(x); slides at the origin with weight 1/2",
            },
            {
                "uri": "fixture:relay",
                "n": 2,
                "params": [{"name": "alpha", "default": null}],
                "summary": "double-integrator relay y'' = -sgn(y); with ?alpha= the \
                            forcing strength alpha acts along the surface normal instead, \
                            which makes the field jump dissipative",
            },
            {
                "uri": "fixture:two_tank",
                "n": 2,
                "params": [{"name": "u", "default": 0.5}],
                "summary": "two cascaded tanks whose inflow u shuts off once the lower \
                            level reaches 1; continuous field, tangential surface contact",
            },
            {
                "uri": "fixture:pogromsky",
                "n": 3,
                "params": [],
                "summary": "integrator chain driven by a relay on the first state; the \
                            origin has no classical continuation but infinitely many \
                            weaker ones",
            },
        ]
    })
}

/// Seeded randomized cross-check of the two core algebraic verdicts:
/// the one-sided Lipschitz inequality and the surface lexicographic
/// implication at the shared observability level.
fn oracle_report(
    sys: &BimodalSystem,
    seed: u64,
    samples: usize,
    tols: &ToleranceSet,
) -> serde_json::Value {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // One-sided Lipschitz: algebra, then sampling, then directed search.
    let osl = check_one_sided_lipschitz(sys, tols);
    let mu = match &osl.certificate {
        Some(Certificate::Lipschitz { mu, .. }) => Some(*mu),
        _ => None,
    };
    let sampled = sample_one_sided_inequality(sys, 1e-7, samples, &mut rng);
    let violation = search_inequality_violation(sys, 1e6, &mut rng);
    let lipschitz_consistent = if osl.holds {
        sampled.violations == 0 && violation.is_none()
    } else {
        true
    };
    let lipschitz = serde_json::json!({
        "algebra_holds": osl.holds,
        "mu": mu,
        "bound": one_sided_lipschitz_bound(sys),
        "sampled_pairs": sampled.pairs,
        "violations": sampled.violations,
        "worst_ratio": sampled.worst_ratio,
        "violation_search": violation.as_ref().map(|w| serde_json::json!({
            "ratio": w.ratio,
            "x1": w.x1,
            "x2": w.x2,
        })),
        "consistent": lipschitz_consistent,
    });

    // Lexicographic implication between the two modes' stacked surface data
    // at the smaller observability index.
    let h1 = observability_index(sys, ModeId::Mode1, tols.tol_rank);
    let h2 = observability_index(sys, ModeId::Mode2, tols.tol_rank);
    let h = h1.min(h2);
    let d1 = stacked(sys, ModeId::Mode1, h);
    let d2 = stacked(sys, ModeId::Mode2, h);
    let algebra = decide_lex_implication(
        &d1.rows,
        &(-&d1.offsets),
        &d2.rows,
        &(-&d2.offsets),
        tols.tol_rank,
        tols.tol_fact,
        tols.tol_diag,
        tols.tol_lex,
    );
    let (algebra_json, algebra_holds) = match &algebra {
        Ok(imp @ LexImplication::Holds { .. }) => {
            (serde_json::json!({"holds": true, "witness": imp}), Some(true))
        }
        Ok(imp @ LexImplication::Fails { .. }) => {
            (serde_json::json!({"holds": false, "witness": imp}), Some(false))
        }
        Err(e) => (serde_json::json!({"unsupported": e.to_string()}), None),
    };

    let sampler = LexNonpositiveSampler::new(
        &d1.rows,
        &d1.offsets,
        tols.tol_rank,
        tols.tol_fact,
        tols.tol_lex,
    );
    let mut draws = 0usize;
    let mut counterexamples = 0usize;
    let mut example: Option<Vec<f64>> = None;
    if let Some(sampler) = &sampler {
        for _ in 0..samples {
            if let Some(x) = sampler.draw(&d1.rows, &d1.offsets, &mut rng) {
                draws += 1;
                let v2 = &d2.rows * &x + &d2.offsets;
                if lex_sign(&v2, tols.tol_lex) == LexSign::Positive {
                    counterexamples += 1;
                    if example.is_none() {
                        example = Some(x.iter().copied().collect());
                    }
                }
            }
        }
    }
    let falsifier = search_lex_falsifier(
        &d1.rows,
        &d1.offsets,
        &d2.rows,
        &d2.offsets,
        tols.tol_rank,
        tols.tol_lex,
    );
    let lex_consistent = match algebra_holds {
        Some(true) => counterexamples == 0 && falsifier.is_none(),
        Some(false) | None => true,
    };
    let lex = serde_json::json!({
        "level": h,
        "index_mode1": h1,
        "index_mode2": h2,
        "algebra": algebra_json,
        "draws": draws,
        "counterexamples": counterexamples,
        "counterexample": example,
        "falsifier": falsifier.as_ref().map(|x| x.iter().copied().collect::<Vec<f64>>()),
        "consistent": lex_consistent,
    });

    serde_json::json!({
        "seed": seed,
        "samples": samples,
        "one_sided_lipschitz": lipschitz,
        "lex_implication": lex,
        "consistent": lipschitz_consistent && lex_consistent,
    })
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

fn emit(text: &str, out: &Option<PathBuf>) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::Input(format!("cannot write '{}': {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn emit_json(value: &serde_json::Value, out: &Option<PathBuf>) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    emit(&text, out)
}

fn run_simulation(
    sys: &BimodalSystem,
    state: &DVector<f64>,
    opts: &SimOptions,
    policy: PolicyArg,
    out: &Option<PathBuf>,
) -> Result<(), CliError> {
    let trajectory = simulate(sys, state, opts).map_err(|e| match e {
        SimError::NonFiniteState { .. } => CliError::Numerical(e.to_string()),
        other => CliError::Input(other.to_string()),
    })?;
    if policy == PolicyArg::ExploreAll {
        let dir = out.as_ref().ok_or_else(|| {
            CliError::Input(
                "--branch-policy explore-all writes one CSV per branch; pass --out DIRECTORY"
                    .to_string(),
            )
        })?;
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Input(format!("cannot create '{}': {e}", dir.display())))?;
        let write = |name: &str, text: &str| -> Result<(), CliError> {
            let path = dir.join(name);
            std::fs::write(&path, text)
                .map_err(|e| CliError::Input(format!("cannot write '{}': {e}", path.display())))
        };
        for branch in &trajectory.branches {
            write(
                &Trajectory::branch_file_name(branch),
                &branch_csv(branch, sys.n()),
            )?;
        }
        let mut index = serde_json::to_string_pretty(&trajectory.branch_index(sys.n()))
            .expect("index serializes");
        index.push('\n');
        write("index.json", &index)?;
        println!(
            "{}",
            serde_json::json!({
                "out": dir.display().to_string(),
                "branches": trajectory.branches.len(),
                "index": "index.json",
            })
        );
        Ok(())
    } else {
        emit(&branch_csv(trajectory.main(), sys.n()), out)
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Analyze { system, tols, out } => {
            let sys = load_system(&system)?;
            let report = analyze(&sys, &tols.into());
            emit_json(&report.to_json(), &out)
        }
        Command::Classify {
            system,
            state,
            surface_tol,
            tols,
            out,
        } => {
            let sys = load_system(&system)?;
            let x0 = parse_state(&state)?;
            if x0.len() != sys.n() {
                return Err(CliError::Input(format!(
                    "state has dimension {}, system expects {}",
                    x0.len(),
                    sys.n()
                )));
            }
            emit_json(&classify_report(&sys, &x0, surface_tol, &tols.into()), &out)
        }
        Command::Simulate {
            system,
            state,
            t_end,
            dt,
            event_tol,
            surface_tol,
            max_switches,
            branch_policy,
            max_depth,
            tols,
            out,
        } => {
            let sys = load_system(&system)?;
            let x0 = parse_state(&state)?;
            let opts = SimOptions {
                t_end,
                dt,
                event_tol,
                surface_tol,
                max_switches,
                branch_policy: branch_policy.into(),
                max_depth,
                tols: tols.into(),
            };
            run_simulation(&sys, &x0, &opts, branch_policy, &out)
        }
        Command::Fixtures => emit_json(&fixtures_value(), &None),
        Command::Oracle {
            system,
            seed,
            samples,
            tols,
            out,
        } => {
            let sys = load_system(&system)?;
            emit_json(&oracle_report(&sys, seed, samples, &tols.into()), &out)
        }
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("FILIPPOV_LAB_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).try_init();
}

/// Entry point used by the binary: parse `argv`, run, return the exit code.
pub fn run(argv: Vec<String>) -> i32 {
    init_logging();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!(
                "{}",
                serde_json::json!({
                    "error": { "kind": err.kind(), "message": err.message() }
                })
            );
            err.exit_code()
        }
    }
}
