//! Command-line front end. Every subcommand reads a small JSON config (or
//! takes scalar flags), runs the mapped library operation, and writes a
//! single JSON report `{version, config, result, diagnostics, checks}`.
//! Reports are deterministic: identical argv + config + seed produce
//! byte-identical output.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::adjoint::{duality_gap, gateaux_check, solve_adjoint, solve_linear_frozen};
use crate::applications::{np_closed_form, np_solve, solve_fundraising, solve_partial_hedge, NpTestSpec};
use crate::bsde::{entropic_closed_form, girsanov_expectation, solve_bsde};
use crate::error::{Error, Result};
use crate::generators::{
    make_affine_quadratic, make_entropic, make_linear_drift, Generator, TerminalFunction,
};
use crate::optimizer::{
    check_necessary_condition, solve_general_alpha, ConstrainedProblem, SolveReport, Verdict,
};
use crate::oracle::brute_force_solve;
use crate::pathspace::{PathTree, TerminalField};

const EXIT_OK: i32 = 0;
const EXIT_SOLVER_ERROR: i32 = 1;
const EXIT_VALIDATION_FAILURE: i32 = 2;
const EXIT_USAGE: i32 = 64;

// ---------------------------------------------------------------------------
// config schemas

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorCfg {
    Entropic { gamma: f64 },
    LinearDrift { mu: f64 },
    AffineQuadratic { a: f64, b: f64 },
}

impl GeneratorCfg {
    fn build(&self) -> Result<Generator> {
        match *self {
            GeneratorCfg::Entropic { gamma } => make_entropic(gamma),
            GeneratorCfg::LinearDrift { mu } => make_linear_drift(mu),
            GeneratorCfg::AffineQuadratic { a, b } => Ok(make_affine_quadratic(a, b)),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TerminalCfg {
    IndicatorWtPositive,
    /// Payoff `max(W_T - strike, 0)`, optionally capped.
    Call {
        strike: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cap: Option<f64>,
    },
    Constant { value: f64 },
    LeafArray { values: Vec<f64> },
}

impl TerminalCfg {
    fn build(&self, tree: &PathTree) -> Result<TerminalField> {
        match self {
            TerminalCfg::IndicatorWtPositive => Ok(TerminalField::indicator_wt_positive(tree)),
            TerminalCfg::Call { strike, cap } => {
                let k = *strike;
                let c = cap.unwrap_or(f64::INFINITY);
                Ok(TerminalField::from_fn(tree, |l| {
                    (tree.w_value(tree.n_steps(), l) - k).max(0.0).min(c)
                }))
            }
            TerminalCfg::Constant { value } => Ok(TerminalField::constant(tree, *value)),
            TerminalCfg::LeafArray { values } => {
                if values.len() != tree.n_leaves() {
                    return Err(Error::ShapeMismatch {
                        expected: tree.n_leaves(),
                        got: values.len(),
                    });
                }
                Ok(TerminalField::new(values.clone()))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TerminalFunctionCfg {
    LinearDecreasing,
    ClaimMinusX { claim: TerminalCfg },
    NegUtilityExp { risk_aversion: f64 },
}

impl TerminalFunctionCfg {
    fn build(&self, tree: &PathTree) -> Result<TerminalFunction> {
        match self {
            TerminalFunctionCfg::LinearDecreasing => Ok(TerminalFunction::linear_decreasing()),
            TerminalFunctionCfg::ClaimMinusX { claim } => {
                Ok(TerminalFunction::claim_minus_x(claim.build(tree)?))
            }
            TerminalFunctionCfg::NegUtilityExp { risk_aversion } => {
                Ok(TerminalFunction::NegExpUtility {
                    risk_aversion: *risk_aversion,
                })
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemCfg {
    pub f: GeneratorCfg,
    pub g: GeneratorCfg,
    pub h: TerminalFunctionCfg,
    pub alpha: f64,
    pub pi0: f64,
    #[serde(rename = "X")]
    pub lower: TerminalCfg,
    #[serde(rename = "Y")]
    pub upper: TerminalCfg,
    pub n_steps: usize,
    pub horizon: f64,
}

impl ProblemCfg {
    fn build(&self, steps_override: Option<usize>) -> Result<ConstrainedProblem> {
        let n = steps_override.unwrap_or(self.n_steps);
        let tree = PathTree::build(n, self.horizon)?;
        ConstrainedProblem::new(
            tree.clone(),
            self.f.build()?,
            self.g.build()?,
            self.h.build(&tree)?,
            self.alpha,
            self.pi0,
            self.lower.build(&tree)?,
            self.upper.build(&tree)?,
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BsdeCfg {
    pub g: GeneratorCfg,
    pub terminal: TerminalCfg,
    pub n_steps: usize,
    pub horizon: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HedgeCfg {
    pub claim: TerminalCfg,
    pub pi0: f64,
    pub f: GeneratorCfg,
    pub mu: f64,
    pub n_steps: usize,
    pub horizon: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FundCfg {
    pub cap: f64,
    pub alpha_target: f64,
    pub f: GeneratorCfg,
    pub neg_u: TerminalFunctionCfg,
    pub mu: f64,
    pub n_steps: usize,
    pub horizon: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateauxCfg {
    pub f: GeneratorCfg,
    pub g: GeneratorCfg,
    pub h: TerminalFunctionCfg,
    pub alpha: f64,
    pub xi: TerminalCfg,
    pub rhos: Vec<f64>,
    pub n_steps: usize,
    pub horizon: f64,
}

// ---------------------------------------------------------------------------
// argument grammar

#[derive(Debug, Parser)]
#[command(
    name = "gexp",
    version,
    about = "constrained robust optimization through quadratic-generator BSDEs on a binary tree"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Seed for randomized checks (reports are bit-reproducible per seed).
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Write the JSON report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Additionally emit a leafwise CSV table of the terminal field.
    #[arg(long, global = true)]
    csv: Option<PathBuf>,
    /// Override the configured number of tree steps.
    #[arg(long, global = true)]
    steps: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve a constrained problem from a JSON config.
    Solve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Partial hedging under ambiguity.
    Hedge {
        #[arg(long)]
        config: PathBuf,
    },
    /// Fundraising under ambiguity.
    Fund {
        #[arg(long)]
        config: PathBuf,
    },
    /// Randomized test for quadratic g-probabilities.
    Nptest {
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        eta: f64,
        #[arg(long)]
        pi0: f64,
        #[arg(long, default_value_t = 8)]
        steps: usize,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
    },
    /// Solve a single BSDE and report the g-expectation.
    Bsde {
        #[arg(long)]
        config: PathBuf,
    },
    /// Verify the exact discrete duality of the adjoint on random directions.
    AdjointCheck {
        #[arg(long)]
        config: PathBuf,
    },
    /// Finite-difference convergence check of the variational derivative.
    Gateaux {
        #[arg(long)]
        config: PathBuf,
    },
    /// Arbitrate a solver output against the brute-force oracle.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 5)]
        depth: usize,
    },
}

// ---------------------------------------------------------------------------
// report plumbing

struct Report {
    config: Value,
    result: Value,
    diagnostics: Value,
    checks: Vec<Value>,
}

impl Report {
    fn passed(&self) -> bool {
        self.checks
            .iter()
            .all(|c| c["passed"].as_bool().unwrap_or(false))
    }

    fn document(&self) -> Value {
        json!({
            "version": env!("CARGO_PKG_VERSION"),
            "config": self.config,
            "result": self.result,
            "diagnostics": self.diagnostics,
            "checks": self.checks,
        })
    }
}

fn check(name: &str, passed: bool, detail: Value) -> Value {
    json!({"name": name, "passed": passed, "detail": detail})
}

fn field_json(field: &TerminalField) -> Value {
    json!(field.values())
}

fn solve_report_json(report: &SolveReport) -> Value {
    json!({
        "xi_star": report.xi_star.values(),
        "multiplier": report.multiplier,
        "multiplier_pair": [report.multiplier_pair.0, report.multiplier_pair.1],
        "tie_value": report.tie_value,
        "tie_set": report.tie_set,
        "objective": report.objective,
        "constraint_value": report.constraint_value,
        "switch_field": report.switch_field.values(),
    })
}

fn solve_diagnostics_json(report: &SolveReport) -> Value {
    json!({
        "outer_iterations": report.outer_iterations,
        "inner_iterations": report.inner_iterations,
        "adjoint_positivity_ok": report.adjoint_positivity_ok,
    })
}

fn read_config<T: for<'de> Deserialize<'de>>(path: &PathBuf) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("cannot parse {}: {e}", path.display())))
}

fn necessary_condition_check(problem: &ConstrainedProblem, report: &SolveReport) -> Result<Value> {
    let cr = check_necessary_condition(problem, &report.xi_star, 1e-6)?;
    Ok(check(
        "necessary_condition",
        cr.verdict == Verdict::Pass,
        json!({
            "score": cr.score,
            "h1": cr.h1,
            "h2": cr.h2,
            "min_directional": cr.min_directional,
            "verdict": format!("{:?}", cr.verdict),
        }),
    ))
}

fn binding_check(report: &SolveReport, pi0: f64) -> Value {
    let gap = (report.constraint_value - pi0).abs();
    check("constraint_binding", gap <= 1e-8, json!({"gap": gap, "pi0": pi0}))
}

// ---------------------------------------------------------------------------
// subcommand bodies

fn run_solve(cfg: ProblemCfg, steps: Option<usize>) -> Result<Report> {
    let problem = cfg.build(steps)?;
    let report = solve_general_alpha(&problem)?;
    let mut checks = vec![necessary_condition_check(&problem, &report)?];
    if problem.alpha == 0.0 {
        checks.push(binding_check(&report, problem.pi0));
    }
    Ok(Report {
        config: serde_json::to_value(&cfg).unwrap(),
        result: solve_report_json(&report),
        diagnostics: solve_diagnostics_json(&report),
        checks,
    })
}

fn run_hedge(cfg: HedgeCfg, steps: Option<usize>) -> Result<Report> {
    let n = steps.unwrap_or(cfg.n_steps);
    let tree = PathTree::build(n, cfg.horizon)?;
    let claim = cfg.claim.build(&tree)?;
    let f = cfg.f.build()?;
    let report = solve_partial_hedge(&tree, &claim, cfg.pi0, &f, cfg.mu)?;
    let price = girsanov_expectation(&tree, cfg.mu, &claim)?;
    let checks = vec![
        binding_check(&report, cfg.pi0),
        check(
            "budget_below_claim_price",
            cfg.pi0 < price,
            json!({"claim_price": price}),
        ),
    ];
    Ok(Report {
        config: serde_json::to_value(&cfg).unwrap(),
        result: solve_report_json(&report),
        diagnostics: solve_diagnostics_json(&report),
        checks,
    })
}

fn run_fund(cfg: FundCfg, steps: Option<usize>) -> Result<Report> {
    let n = steps.unwrap_or(cfg.n_steps);
    let tree = PathTree::build(n, cfg.horizon)?;
    let f = cfg.f.build()?;
    let neg_u = cfg.neg_u.build(&tree)?;
    let report = solve_fundraising(&tree, cfg.cap, cfg.alpha_target, &f, &neg_u, cfg.mu)?;
    let checks = vec![binding_check(&report, cfg.alpha_target)];
    Ok(Report {
        config: serde_json::to_value(&cfg).unwrap(),
        result: solve_report_json(&report),
        diagnostics: solve_diagnostics_json(&report),
        checks,
    })
}

fn run_nptest(gamma: f64, eta: f64, pi0: f64, steps: usize, horizon: f64) -> Result<Report> {
    let spec = NpTestSpec::new(gamma, eta, pi0)?;
    let tree = PathTree::build(steps, horizon)?;
    let result = np_solve(&spec, &tree)?;
    let cf = np_closed_form(&spec, result.v)?;
    let (v_lo, v_hi) = spec.v_bounds();
    let checks = vec![
        check(
            "c_formula",
            (cf.c - result.c).abs() <= 1e-8,
            json!({"c": result.c, "closed_form_c": cf.c}),
        ),
        check(
            "v_within_bounds",
            (v_lo - 1e-9..=v_hi + 1e-9).contains(&result.v),
            json!({"v": result.v, "lo": v_lo, "hi": v_hi}),
        ),
        binding_check(&result.report, pi0),
    ];
    Ok(Report {
        config: json!({
            "gamma": gamma, "eta": eta, "pi0": pi0,
            "n_steps": steps, "horizon": horizon,
        }),
        result: json!({
            "c": result.c,
            "v": result.v,
            "set_probability": result.set_probability,
            "pa_paper": cf.pa_paper,
            "pa_binding": cf.pa_binding,
            "type2_value": result.type2_value,
            "xi_star": result.xi_star.values(),
        }),
        diagnostics: solve_diagnostics_json(&result.report),
        checks,
    })
}

fn run_bsde(cfg: BsdeCfg, steps: Option<usize>) -> Result<Report> {
    let n = steps.unwrap_or(cfg.n_steps);
    let tree = PathTree::build(n, cfg.horizon)?;
    let gen = cfg.g.build()?;
    let terminal = cfg.terminal.build(&tree)?;
    let sol = solve_bsde(&tree, &gen, &terminal)?;
    let mut checks = vec![check(
        "implicit_step_residual",
        sol.residual_max <= 1e-11,
        json!({"residual_max": sol.residual_max}),
    )];
    // compare against a closed form when one exists
    if let Some(gamma) = gen.entropic_gamma() {
        let cf = entropic_closed_form(&tree, gamma, &terminal)?;
        let err = (sol.root() - cf).abs();
        let bound = 5.0 * tree.dt() * (1.0 + terminal.max_abs()).powi(2);
        checks.push(check(
            "entropic_closed_form",
            err <= bound,
            json!({"closed_form": cf, "error": err, "bound": bound}),
        ));
    } else if let Some(mu) = gen.constant_drift() {
        let girsanov = girsanov_expectation(&tree, mu, &terminal)?;
        let err = (sol.root() - girsanov).abs();
        checks.push(check(
            "girsanov_exactness",
            err <= 1e-10,
            json!({"girsanov": girsanov, "error": err}),
        ));
    }
    Ok(Report {
        config: serde_json::to_value(&cfg).unwrap(),
        result: json!({
            "y0": sol.root(),
            "z0": sol.z.at(0, 0),
            "terminal": field_json(&sol.terminal),
        }),
        diagnostics: json!({"residual_max": sol.residual_max}),
        checks,
    })
}

fn run_adjoint_check(cfg: BsdeCfg, steps: Option<usize>, seed: u64) -> Result<Report> {
    let n = steps.unwrap_or(cfg.n_steps);
    let tree = PathTree::build(n, cfg.horizon)?;
    let gen = cfg.g.build()?;
    let terminal = cfg.terminal.build(&tree)?;
    let sol = solve_bsde(&tree, &gen, &terminal)?;
    let adj = solve_adjoint(&tree, &gen, &sol)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_gap = 0.0_f64;
    for _ in 0..50 {
        let d = TerminalField::new(
            (0..tree.n_leaves())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect(),
        );
        let (yhat, _) = solve_linear_frozen(&tree, &gen, &sol, d.values())?;
        max_gap = max_gap.max(duality_gap(&tree, &adj, &d, yhat.at(0, 0))?);
    }
    let checks = vec![
        check("duality_gap", max_gap <= 1e-11, json!({"max_gap": max_gap})),
        check(
            "adjoint_positivity",
            adj.positivity_ok,
            json!({"positivity_ok": adj.positivity_ok}),
        ),
    ];
    Ok(Report {
        config: serde_json::to_value(&cfg).unwrap(),
        result: json!({"max_duality_gap": max_gap, "directions": 50}),
        diagnostics: json!({"seed": seed}),
        checks,
    })
}

fn run_gateaux(cfg: GateauxCfg, steps: Option<usize>, seed: u64) -> Result<Report> {
    let n = steps.unwrap_or(cfg.n_steps);
    let tree = PathTree::build(n, cfg.horizon)?;
    let f = cfg.f.build()?;
    let g = cfg.g.build()?;
    let h = cfg.h.build(&tree)?;
    let xi = cfg.xi.build(&tree)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let direction = TerminalField::new(
        (0..tree.n_leaves())
            .map(|_| rng.gen_range(-0.5..0.5))
            .collect(),
    );
    let report = gateaux_check(&tree, &f, &g, &h, &xi, &direction, cfg.alpha, &cfg.rhos)?;
    let linear = g.is_linear_in_z();
    let passed = if linear {
        report.delta2.iter().all(|&d| d <= 1e-10)
    } else {
        report
            .slope2
            .map(|s| (s - 1.0).abs() <= 0.3)
            .unwrap_or(true)
    };
    let checks = vec![check(
        "gateaux_convergence",
        passed,
        json!({
            "linear_generator": linear,
            "slope1": report.slope1,
            "slope2": report.slope2,
        }),
    )];
    Ok(Report {
        config: serde_json::to_value(&cfg).unwrap(),
        result: json!({
            "rhos": report.rhos,
            "delta1": report.delta1,
            "delta2": report.delta2,
            "slope1": report.slope1,
            "slope2": report.slope2,
        }),
        diagnostics: json!({"seed": seed}),
        checks,
    })
}

fn run_oracle(cfg: ProblemCfg, depth: usize) -> Result<Report> {
    let problem = cfg.build(Some(depth))?;
    let solved = solve_general_alpha(&problem)?;
    let oracle = brute_force_solve(&problem)?;
    let gap = solved.objective - oracle.objective;
    let agreement = gap <= 1e-6 && oracle.constraint_value <= problem.pi0 + 1e-7;
    let checks = vec![
        check(
            "agreement",
            agreement,
            json!({"objective_gap": gap, "oracle_constraint": oracle.constraint_value}),
        ),
        check(
            "gradient_check",
            oracle.gradient_check_error <= 1e-5,
            json!({"gradient_check_error": oracle.gradient_check_error}),
        ),
    ];
    Ok(Report {
        config: serde_json::to_value(&cfg).unwrap(),
        result: json!({
            "solver_objective": solved.objective,
            "oracle_objective": oracle.objective,
            "agreement": agreement,
            "oracle_xi": oracle.xi.values(),
            "solver_xi": solved.xi_star.values(),
        }),
        diagnostics: json!({"oracle_iterations": oracle.iterations}),
        checks,
    })
}

// ---------------------------------------------------------------------------
// entry point

fn emit(report: &Report, out: &Option<PathBuf>, csv: &Option<PathBuf>) -> Result<()> {
    let text = serde_json::to_string_pretty(&report.document()).unwrap() + "\n";
    match out {
        Some(path) => std::fs::write(path, &text)
            .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?,
        None => print!("{text}"),
    }
    if let Some(path) = csv {
        let field = ["xi_star", "terminal", "oracle_xi"]
            .iter()
            .find_map(|k| report.result[k].as_array());
        let mut table = String::from("leaf,value\n");
        if let Some(values) = field {
            for (l, v) in values.iter().enumerate() {
                table.push_str(&format!("{l},{v}\n"));
            }
        }
        std::fs::write(path, table)
            .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

/// Parse arguments, run the mapped operation, and return the process exit
/// code: 0 on success, 1 on solver error, 2 on validation failure, 64 on
/// usage errors.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version by "erroring" with a display
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let report = match &cli.command {
        Command::Solve { config } => read_config(config).and_then(|c| run_solve(c, cli.steps)),
        Command::Hedge { config } => read_config(config).and_then(|c| run_hedge(c, cli.steps)),
        Command::Fund { config } => read_config(config).and_then(|c| run_fund(c, cli.steps)),
        Command::Nptest {
            gamma,
            eta,
            pi0,
            steps,
            horizon,
        } => run_nptest(*gamma, *eta, *pi0, cli.steps.unwrap_or(*steps), *horizon),
        Command::Bsde { config } => read_config(config).and_then(|c| run_bsde(c, cli.steps)),
        Command::AdjointCheck { config } => {
            read_config(config).and_then(|c| run_adjoint_check(c, cli.steps, cli.seed))
        }
        Command::Gateaux { config } => {
            read_config(config).and_then(|c| run_gateaux(c, cli.steps, cli.seed))
        }
        Command::Oracle { config, depth } => {
            read_config(config).and_then(|c| run_oracle(c, cli.steps.unwrap_or(*depth)))
        }
    };
    match report {
        Ok(report) => {
            if let Err(e) = emit(&report, &cli.out, &cli.csv) {
                eprintln!("error: {e}");
                return EXIT_SOLVER_ERROR;
            }
            if report.passed() {
                EXIT_OK
            } else {
                EXIT_VALIDATION_FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_SOLVER_ERROR
        }
    }
}
