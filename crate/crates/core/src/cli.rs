//! Command-line front end: strict JSON jobs in, JSON reports out.
//!
//! Exit codes: 0 every verdict passes, 1 some verdict fails, 2 input error,
//! 3 the solver found nothing.

use std::io::Read;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::qoper::{backlund_gauge_check, build_connection, diag_ratio_check, gauge_check};
use crate::qq::{
    backlund, bethe_residual, chain_residual, nondegeneracy_check, qq_residual, solution_from_q_plus, solve_bethe,
    to_qqall, validate_spec, QQSolution, QQSpec, ShiftConvention, SolveOptions, Strategy,
};
use crate::qwronskian::{build_frame, q_from_minors, regular_singularity_check, section_from_solution, verify_dd_chain};
use crate::ratfield::{Poly, Scalar};
use crate::toroidal::{
    adhm_bethe_residual, fold_check, lattice_shift_check, q_minus_from_plus, shift_conjugation_check,
    solution_from_roots, solve_adhm_bethe, toroidal_qq_residual, unfold_lattice, verify_window, yang_yang_grad_check,
    PeriodicLattice, ToroidalSolution, ToroidalSpec,
};
use crate::{Ctx, Error, Execution};

pub const SCHEMA: u32 = 1;
pub const DEFAULT_PRECISION: u32 = 192;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NO_CONVERGENCE: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CommandKind {
    Solve,
    Verify,
    Extend,
    Backlund,
    Wronskian,
    Fold,
    Window,
    Report,
}

impl CommandKind {
    fn name(self) -> &'static str {
        match self {
            CommandKind::Solve => "solve",
            CommandKind::Verify => "verify",
            CommandKind::Extend => "extend",
            CommandKind::Backlund => "backlund",
            CommandKind::Wronskian => "wronskian",
            CommandKind::Fold => "fold",
            CommandKind::Window => "window",
            CommandKind::Report => "report",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConventionArg {
    Qqall,
    Qqatype,
}

#[derive(Parser, Debug)]
#[command(name = "qopers", version, about = "q-opers, QQ-systems, q-Wronskians and toroidal folding")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Solve the Bethe equations and rebuild the QQ data.
    Solve(JobArgs),
    /// Check a supplied solution.
    Verify(JobArgs),
    /// Solve, then fill and check every extended-QQ chain and the gauge.
    Extend(JobArgs),
    /// Apply Bäcklund moves at every node.
    Backlund(JobArgs),
    /// Build the q-Wronskian minors and check the 𝒟𝒟-system.
    Wronskian(JobArgs),
    /// ADHM Bethe roots and the fold back to the toroidal QQ-system.
    Fold(JobArgs),
    /// Banded windows of the infinite connection and gauge matrix.
    Window(JobArgs),
    /// Everything that applies to the problem.
    Report(JobArgs),
}

impl Cmd {
    fn split(&self) -> (CommandKind, &JobArgs) {
        match self {
            Cmd::Solve(a) => (CommandKind::Solve, a),
            Cmd::Verify(a) => (CommandKind::Verify, a),
            Cmd::Extend(a) => (CommandKind::Extend, a),
            Cmd::Backlund(a) => (CommandKind::Backlund, a),
            Cmd::Wronskian(a) => (CommandKind::Wronskian, a),
            Cmd::Fold(a) => (CommandKind::Fold, a),
            Cmd::Window(a) => (CommandKind::Window, a),
            Cmd::Report(a) => (CommandKind::Report, a),
        }
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct JobArgs {
    /// Job file, or `-` for stdin.
    pub spec: PathBuf,
    #[arg(long)]
    pub precision_bits: Option<u32>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub convention: Option<ConventionArg>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also print an aligned residual table (to stdout, or stderr when JSON goes to stdout).
    #[arg(long)]
    pub table: bool,
    /// Run seeds one after another.
    #[arg(long)]
    pub sequential: bool,
}

// ---------------------------------------------------------------------------
// wire format

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ScalarWire {
    Text(String),
    Parts(ScalarParts),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarParts {
    pub re: String,
    #[serde(default)]
    pub im: Option<String>,
}

impl ScalarWire {
    fn to_scalar(&self, prec: u32) -> crate::Result<Scalar> {
        match self {
            ScalarWire::Text(s) => Scalar::parse(prec, s, "0"),
            ScalarWire::Parts(p) => Scalar::parse(prec, &p.re, p.im.as_deref().unwrap_or("0")),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobWire {
    pub schema: u32,
    #[serde(default)]
    pub command: Option<CommandKind>,
    pub problem: ProblemWire,
    #[serde(default)]
    pub options: OptionsWire,
    #[serde(default)]
    pub solution: Option<SolutionWire>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum ProblemWire {
    Qq(QqWire),
    Toroidal(ToroidalWire),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QqWire {
    pub r: usize,
    pub q: ScalarWire,
    pub zeta: Vec<ScalarWire>,
    pub lambda_roots: Vec<Vec<ScalarWire>>,
    #[serde(default)]
    pub lambda_leading: Option<Vec<ScalarWire>>,
    pub q_degrees: Vec<usize>,
    #[serde(default)]
    pub convention: Option<ShiftConvention>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToroidalWire {
    pub t1: ScalarWire,
    pub t2: ScalarWire,
    pub z_kahler: ScalarWire,
    pub framing_roots: Vec<ScalarWire>,
    pub k: usize,
    #[serde(default)]
    pub xi: Option<ScalarWire>,
    #[serde(default)]
    pub cycle: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionsWire {
    pub precision_bits: Option<u32>,
    pub tol: Option<f64>,
    pub seeds: Option<usize>,
    pub seed: Option<u64>,
    pub strategy: Option<Strategy>,
    pub sequential: Option<bool>,
    pub window_sizes: Option<Vec<usize>>,
    pub window_starts: Option<Vec<i64>>,
}

/// Polynomials as ascending coefficient lists.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionWire {
    pub q_plus: Vec<Vec<ScalarWire>>,
    #[serde(default)]
    pub q_minus: Option<Vec<Vec<ScalarWire>>>,
    #[serde(default)]
    pub chains: Option<Vec<ChainWire>>,
    /// Informational fields of a report payload; accepted so payloads round-trip.
    #[serde(default)]
    pub roots: Option<Value>,
    #[serde(default)]
    pub convention: Option<ShiftConvention>,
    #[serde(default)]
    pub minors: Option<Value>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainWire {
    pub i: usize,
    pub j: usize,
    pub poly: Vec<ScalarWire>,
}

// ---------------------------------------------------------------------------
// jobs

#[derive(Debug, Clone)]
pub enum Problem {
    Qq(QQSpec),
    Toroidal(ToroidalSpec),
}

#[derive(Debug, Clone)]
pub struct JobSpec {
    pub command: CommandKind,
    pub problem: Problem,
    /// The `problem` object as read, echoed into the report.
    pub problem_echo: Value,
    pub ctx: Ctx,
    pub seeds: usize,
    pub seed: u64,
    pub strategy: Strategy,
    pub exec: Execution,
    pub window_sizes: Vec<usize>,
    pub window_starts: Vec<i64>,
    pub solution: Option<SolutionWire>,
}

/// Input problems, each with a JSON-pointer path.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaErrors(pub Vec<(String, String)>);

impl std::fmt::Display for SchemaErrors {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, (path, msg)) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{}: {msg}", if path.is_empty() { "/" } else { path })?;
        }
        Ok(())
    }
}

fn pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut s = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => s.push_str(&format!("/{index}")),
            Segment::Map { key } => s.push_str(&format!("/{key}")),
            Segment::Enum { variant } => s.push_str(&format!("/{variant}")),
            Segment::Unknown => s.push_str("/?"),
        }
    }
    s
}

fn err1(path: &str, msg: impl Into<String>) -> SchemaErrors {
    SchemaErrors(vec![(path.to_string(), msg.into())])
}

fn scalar_at(w: &ScalarWire, prec: u32, path: &str, errs: &mut Vec<(String, String)>) -> Scalar {
    w.to_scalar(prec).unwrap_or_else(|e| {
        errs.push((path.to_string(), e.to_string()));
        Scalar::zero(prec)
    })
}

/// Parses and validates a job. Command-line flags override `options`.
pub fn parse_spec(text: &str, command: Option<CommandKind>, args: &JobArgs) -> Result<JobSpec, SchemaErrors> {
    let value: Value = serde_json::from_str(text).map_err(|e| err1("", format!("malformed JSON: {e}")))?;
    let wire: JobWire = serde_path_to_error::deserialize(value.clone())
        .map_err(|e| err1(&pointer(e.path()), e.inner().to_string()))?;
    if wire.schema != SCHEMA {
        return Err(err1("/schema", format!("unsupported schema {} (expected {SCHEMA})", wire.schema)));
    }
    let command = match (command, wire.command) {
        (Some(a), Some(b)) if a != b => {
            return Err(err1("/command", format!("job says '{}' but '{}' was requested", b.name(), a.name())))
        }
        (Some(a), _) => a,
        (None, Some(b)) => b,
        (None, None) => return Err(err1("/command", "no command given")),
    };
    let o = &wire.options;
    let prec = args.precision_bits.or(o.precision_bits).unwrap_or(DEFAULT_PRECISION);
    if !(32..=65536).contains(&prec) {
        return Err(err1("/options/precision_bits", format!("precision {prec} outside 32..=65536")));
    }
    let mut ctx = Ctx::new(prec);
    if let Some(t) = args.tol.or(o.tol) {
        if !(t > 0.0 && t < 1.0) {
            return Err(err1("/options/tol", format!("tolerance {t} must lie in (0, 1)")));
        }
        ctx = ctx.with_tol(t);
    }
    let mut errs = Vec::new();
    let problem = match &wire.problem {
        ProblemWire::Qq(w) => {
            let base = "/problem/qq";
            let q = scalar_at(&w.q, prec, &format!("{base}/q"), &mut errs);
            let zeta = w.zeta.iter().enumerate().map(|(i, z)| scalar_at(z, prec, &format!("{base}/zeta/{i}"), &mut errs)).collect();
            let lambda_roots = w
                .lambda_roots
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    v.iter()
                        .enumerate()
                        .map(|(j, x)| scalar_at(x, prec, &format!("{base}/lambda_roots/{i}/{j}"), &mut errs))
                        .collect()
                })
                .collect();
            let lambda_leading = match &w.lambda_leading {
                Some(v) => v
                    .iter()
                    .enumerate()
                    .map(|(i, x)| scalar_at(x, prec, &format!("{base}/lambda_leading/{i}"), &mut errs))
                    .collect(),
                None => vec![Scalar::one(prec); w.r],
            };
            let convention = match args.convention {
                Some(ConventionArg::Qqall) => ShiftConvention::Qqall,
                Some(ConventionArg::Qqatype) => ShiftConvention::Qqatype,
                None => w.convention.unwrap_or_default(),
            };
            let spec = QQSpec { r: w.r, q, zeta, lambda_roots, lambda_leading, q_degrees: w.q_degrees.clone(), convention };
            if errs.is_empty() {
                for v in validate_spec(&spec, &ctx) {
                    errs.push((base.to_string(), v));
                }
            }
            Problem::Qq(spec)
        }
        ProblemWire::Toroidal(w) => {
            let base = "/problem/toroidal";
            let t1 = scalar_at(&w.t1, prec, &format!("{base}/t1"), &mut errs);
            let t2 = scalar_at(&w.t2, prec, &format!("{base}/t2"), &mut errs);
            let zk = scalar_at(&w.z_kahler, prec, &format!("{base}/z_kahler"), &mut errs);
            let roots = w
                .framing_roots
                .iter()
                .enumerate()
                .map(|(i, x)| scalar_at(x, prec, &format!("{base}/framing_roots/{i}"), &mut errs))
                .collect();
            let mut ts = ToroidalSpec::new(t1, t2, zk, roots, w.k);
            if let Some(x) = &w.xi {
                ts.xi = scalar_at(x, prec, &format!("{base}/xi"), &mut errs);
            }
            ts.cycle = w.cycle.unwrap_or(1);
            if errs.is_empty() {
                for v in ts.validate(&ctx) {
                    errs.push((base.to_string(), v));
                }
            }
            Problem::Toroidal(ts)
        }
    };
    let allowed = match problem {
        Problem::Qq(_) => matches!(
            command,
            CommandKind::Solve
                | CommandKind::Verify
                | CommandKind::Extend
                | CommandKind::Backlund
                | CommandKind::Wronskian
                | CommandKind::Report
        ),
        Problem::Toroidal(_) => matches!(
            command,
            CommandKind::Solve | CommandKind::Verify | CommandKind::Fold | CommandKind::Window | CommandKind::Report
        ),
    };
    if !allowed {
        errs.push(("/command".into(), format!("command '{}' does not apply to this problem", command.name())));
    }
    if command == CommandKind::Verify && wire.solution.is_none() {
        errs.push(("/solution".into(), "verify needs a solution".into()));
    }
    if let (Problem::Qq(spec), Some(Some(conv))) = (&problem, wire.solution.as_ref().map(|s| s.convention)) {
        if conv != spec.convention {
            errs.push(("/solution/convention".into(), "solution was written under the other shift convention".into()));
        }
    }
    let window_sizes = o.window_sizes.clone().unwrap_or_else(|| (4..=8).collect());
    if window_sizes.iter().any(|&n| n < 2) {
        errs.push(("/options/window_sizes".into(), "window sizes must be at least 2".into()));
    }
    if !errs.is_empty() {
        return Err(SchemaErrors(errs));
    }
    let problem_echo = value.get("problem").cloned().unwrap_or(Value::Null);
    Ok(JobSpec {
        command,
        problem,
        problem_echo,
        ctx,
        seeds: args.seeds.or(o.seeds).unwrap_or(64),
        seed: args.seed.or(o.seed).unwrap_or(0),
        strategy: o.strategy.unwrap_or_default(),
        exec: if args.sequential || o.sequential.unwrap_or(false) { Execution::Sequential } else { Execution::Parallel },
        window_sizes,
        window_starts: o.window_starts.clone().unwrap_or_else(|| vec![-2, 0, 3]),
        solution: wire.solution,
    })
}

// ---------------------------------------------------------------------------
// reports

#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    /// Module-level check that produced the verdict.
    pub check: String,
    pub target: String,
    pub residual: Option<f64>,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Verdict {
    fn residual(check: &str, target: String, r: f64, tol: f64) -> Self {
        Verdict { check: check.into(), target, residual: r.is_finite().then_some(r), pass: r <= tol, note: None }
    }

    fn error(check: &str, target: String, e: &Error) -> Self {
        Verdict { check: check.into(), target, residual: None, pass: false, note: Some(e.to_string()) }
    }

    fn flag(check: &str, target: String, pass: bool, note: Option<String>) -> Self {
        Verdict { check: check.into(), target, residual: None, pass, note }
    }
}

#[derive(Debug, Clone)]
pub struct Report {
    pub command: CommandKind,
    pub seed: u64,
    pub ctx: Ctx,
    pub inputs: Value,
    pub extra: Map<String, Value>,
    pub solutions: Vec<Value>,
    pub verdicts: Vec<Verdict>,
    pub diagnostic: String,
    pub no_convergence: bool,
    pub timing_ms: u128,
}

impl Report {
    pub fn pass(&self) -> bool {
        !self.no_convergence && self.verdicts.iter().all(|v| v.pass)
    }

    pub fn exit_code(&self) -> i32 {
        if self.no_convergence {
            EXIT_NO_CONVERGENCE
        } else if self.pass() {
            EXIT_PASS
        } else {
            EXIT_FAIL
        }
    }

    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("schema".into(), json!(SCHEMA));
        m.insert("command".into(), json!(self.command.name()));
        m.insert("seed".into(), json!(self.seed));
        m.insert("precision_bits".into(), json!(self.ctx.prec));
        m.insert("tol".into(), json!(self.ctx.tol));
        m.insert("inputs".into(), self.inputs.clone());
        for (k, v) in &self.extra {
            m.insert(k.clone(), v.clone());
        }
        m.insert("solutions".into(), Value::Array(self.solutions.clone()));
        m.insert("verdicts".into(), serde_json::to_value(&self.verdicts).expect("verdicts serialize"));
        m.insert("pass".into(), json!(self.pass()));
        m.insert("diagnostic".into(), json!(self.diagnostic));
        m.insert("timing_ms".into(), json!(self.timing_ms as u64));
        Value::Object(m)
    }

    pub fn table(&self) -> String {
        let w0 = self.verdicts.iter().map(|v| v.check.len()).max().unwrap_or(5).max(5);
        let w1 = self.verdicts.iter().map(|v| v.target.chars().count()).max().unwrap_or(6).max(6);
        let mut s = format!("{:<w0$}  {:<w1$}  {:>11}  verdict\n", "check", "target", "residual");
        for v in &self.verdicts {
            let r = v.residual.map(|x| format!("{x:.3e}")).unwrap_or_else(|| "-".into());
            let pad = w1 - v.target.chars().count();
            s.push_str(&format!(
                "{:<w0$}  {}{}  {:>11}  {}{}\n",
                v.check,
                v.target,
                " ".repeat(pad),
                r,
                if v.pass { "pass" } else { "FAIL" },
                v.note.as_ref().map(|n| format!("  ({n})")).unwrap_or_default()
            ));
        }
        s
    }
}

fn poly_json(p: &Poly) -> Value {
    p.to_json()
}

fn qq_solution_json(spec: &QQSpec, roots: Option<&[Vec<Scalar>]>, sol: &QQSolution) -> Value {
    let mut m = Map::new();
    if let Some(roots) = roots {
        m.insert(
            "roots".into(),
            Value::Array(roots.iter().map(|n| Value::Array(n.iter().map(|x| x.to_json()).collect())).collect()),
        );
    }
    m.insert("q_plus".into(), Value::Array(sol.q_plus.iter().map(poly_json).collect()));
    m.insert("q_minus".into(), Value::Array(sol.q_minus.iter().map(poly_json).collect()));
    m.insert(
        "chains".into(),
        Value::Array(sol.chains.iter().map(|((i, j), p)| json!({"i": i, "j": j, "poly": poly_json(p)})).collect()),
    );
    m.insert("convention".into(), serde_json::to_value(spec.convention).expect("convention serializes"));
    Value::Object(m)
}

fn toroidal_solution_json(roots: &[Scalar], sol: &ToroidalSolution) -> Value {
    json!({
        "roots": roots.iter().map(|x| x.to_json()).collect::<Vec<_>>(),
        "q_plus": [poly_json(&sol.q_plus)],
        "q_minus": [poly_json(&sol.q_minus)],
    })
}

fn parse_polys(v: &[Vec<ScalarWire>], prec: u32) -> crate::Result<Vec<Poly>> {
    v.iter()
        .map(|c| Ok(Poly::new(prec, c.iter().map(|x| x.to_scalar(prec)).collect::<crate::Result<Vec<_>>>()?)))
        .collect()
}

// ---------------------------------------------------------------------------
// pipelines

fn qq_checks(spec: &QQSpec, sol: &QQSolution, tag: &str, ctx: &Ctx, full: bool, out: &mut Vec<Verdict>) {
    let tol = ctx.tol;
    for (i, node) in bethe_residual(spec, &sol.q_plus).iter().enumerate() {
        let m = node.iter().map(|x| x.unwrap_or(f64::INFINITY)).fold(0.0, f64::max);
        out.push(Verdict::residual("qq::bethe_residual", format!("{tag} node {}", i + 1), m, tol));
    }
    for i in 1..=spec.r {
        match qq_residual(spec, sol, i, ctx) {
            Ok(r) => out.push(Verdict::residual("qq::qq_residual", format!("{tag} node {i}"), r.max_residual, tol)),
            Err(e) => out.push(Verdict::error("qq::qq_residual", format!("{tag} node {i}"), &e)),
        }
    }
    let nd = nondegeneracy_check(spec, sol, ctx);
    out.push(Verdict::flag("qq::nondegeneracy_check", tag.into(), nd.is_empty(), (!nd.is_empty()).then(|| nd.join("; "))));
    if !full {
        return;
    }
    for i in 1..=spec.r {
        for j in i + 1..=spec.r {
            let target = format!("{tag} chain ({i},{j})");
            if sol.chain(i, j).is_none() {
                out.push(Verdict::error("qq::chain_residual", target, &Error::MissingChain(i, j)));
                continue;
            }
            match chain_residual(spec, sol, i, j, ctx) {
                Ok(r) => out.push(Verdict::residual("qq::chain_residual", target, r.max_residual, tol)),
                Err(e) => out.push(Verdict::error("qq::chain_residual", target, &e)),
            }
        }
    }
    match gauge_check(spec, sol, ctx) {
        Ok(r) => out.push(Verdict::residual("qoper::verify_gauge", tag.into(), r.max_residual, tol)),
        Err(e) => out.push(Verdict::error("qoper::verify_gauge", tag.into(), &e)),
    }
}

fn backlund_checks(spec: &QQSpec, sol: &QQSolution, tag: &str, ctx: &Ctx, out: &mut Vec<Verdict>) {
    let tol = ctx.tol;
    for i in 1..=spec.r {
        let target = format!("{tag} node {i}");
        let once = match backlund(spec, sol, i, ctx) {
            Ok(x) => x,
            Err(e) => {
                out.push(Verdict::error("qq::backlund", target, &e));
                continue;
            }
        };
        match gauge_check(&once.0, &once.1, ctx) {
            Ok(r) => out.push(Verdict::residual("qoper::verify_gauge after qq::backlund", target.clone(), r.max_residual, tol)),
            Err(e) => out.push(Verdict::error("qoper::verify_gauge after qq::backlund", target.clone(), &e)),
        }
        match backlund_gauge_check(spec, sol, i, ctx) {
            Ok(r) => out.push(Verdict::residual("qoper::backlund_gauge_check", target.clone(), r.max_residual, tol)),
            Err(e) => out.push(Verdict::error("qoper::backlund_gauge_check", target.clone(), &e)),
        }
        match backlund(&once.0, &once.1, i, ctx) {
            Ok((s2, sol2)) => {
                let mut d: f64 = 0.0;
                for (a, b) in spec.zeta.iter().zip(&s2.zeta) {
                    d = d.max(a.rel_dist(b));
                }
                for (a, b) in sol.q_plus.iter().zip(&sol2.q_plus) {
                    d = d.max(a.rel_dist(b));
                }
                for (a, b) in sol.q_minus.iter().zip(&sol2.q_minus) {
                    d = d.max(a.rel_dist(b).min(a.rel_dist(&b.neg())));
                }
                out.push(Verdict::residual("qq::backlund twice", target, d, tol));
            }
            Err(e) => out.push(Verdict::error("qq::backlund twice", target, &e)),
        }
    }
}

fn wronskian_checks(spec: &QQSpec, sol: &QQSolution, tag: &str, ctx: &Ctx, out: &mut Vec<Verdict>) -> Option<Value> {
    let tol = ctx.tol;
    let section = match section_from_solution(spec, sol, ctx) {
        Ok(s) => s,
        Err(e) => {
            out.push(Verdict::error("qwronskian::section_from_solution", tag.into(), &e));
            return None;
        }
    };
    let frame = match build_frame(&section, ctx) {
        Ok(f) => f,
        Err(e) => {
            out.push(Verdict::error("qwronskian::build_frame", tag.into(), &e));
            return None;
        }
    };
    for i in 1..=spec.r {
        for j in i..=spec.r {
            let target = format!("{tag} line ({i},{j})");
            match verify_dd_chain(&frame, i, j, ctx) {
                Ok(r) if r.degenerate_twist => {
                    out.push(Verdict::flag("qwronskian::verify_dd_chain", target, false, Some("degenerate twist".into())))
                }
                Ok(r) => out.push(Verdict::residual("qwronskian::verify_dd_chain", target, r.residual, tol)),
                Err(e) => out.push(Verdict::error("qwronskian::verify_dd_chain", target, &e)),
            }
        }
    }
    let (aspec, asol) = match to_qqall(spec, sol, ctx) {
        Ok(x) => x,
        Err(e) => {
            out.push(Verdict::error("qq::to_qqall", tag.into(), &e));
            return None;
        }
    };
    let lambdas: Vec<Poly> = (1..=aspec.r).map(|i| aspec.lambda(i)).collect();
    match q_from_minors(&frame, &lambdas, ctx) {
        Ok(rec) => {
            let mut d: f64 = 0.0;
            for (a, b) in asol.q_plus.iter().zip(&rec.q_plus) {
                d = d.max(a.rel_dist(b));
            }
            for (a, b) in asol.q_minus.iter().zip(&rec.q_minus) {
                d = d.max(a.rel_dist(b));
            }
            for (k, c) in &asol.chains {
                d = d.max(rec.chains.get(k).map(|x| x.rel_dist(c)).unwrap_or(f64::INFINITY));
            }
            out.push(Verdict::residual("qwronskian::q_from_minors vs qq::extend_chain", tag.into(), d, 10.0 * tol));
        }
        Err(e) => out.push(Verdict::error("qwronskian::q_from_minors", tag.into(), &e)),
    }
    match build_connection(spec, sol, ctx) {
        Ok(conn) => {
            match regular_singularity_check(&conn, &section, ctx) {
                Ok(r) => out.push(Verdict::residual("qwronskian::regular_singularity_check", tag.into(), r.max_residual, tol)),
                Err(e) => out.push(Verdict::error("qwronskian::regular_singularity_check", tag.into(), &e)),
            }
            match diag_ratio_check(&conn, &frame, ctx) {
                Ok(r) => out.push(Verdict::residual("qoper::diag_ratio_check", tag.into(), r.max_residual, tol)),
                Err(e) => out.push(Verdict::error("qoper::diag_ratio_check", tag.into(), &e)),
            }
        }
        Err(e) => out.push(Verdict::error("qoper::build_connection", tag.into(), &e)),
    }
    let mut dm = Vec::new();
    for i in 1..=spec.r {
        for j in i..=spec.r {
            dm.push(json!({"i": i, "j": j, "poly": poly_json(frame.dm(i, j))}));
        }
    }
    Some(json!({
        "dplus": frame.dplus.iter().map(poly_json).collect::<Vec<_>>(),
        "dminus": dm,
    }))
}

fn run_qq(job: &JobSpec, spec: &QQSpec, report: &mut Report) {
    let ctx = &job.ctx;
    let mut sols: Vec<(Option<Vec<Vec<Scalar>>>, QQSolution)> = Vec::new();
    if job.command == CommandKind::Verify {
        let w = job.solution.as_ref().expect("checked at parse time");
        let parsed = (|| -> crate::Result<QQSolution> {
            let q_plus = parse_polys(&w.q_plus, ctx.prec)?;
            if q_plus.len() != spec.r {
                return Err(Error::Input(format!("expected {} Q+ polynomials, got {}", spec.r, q_plus.len())));
            }
            let mut sol = match &w.q_minus {
                Some(qm) => {
                    let q_minus = parse_polys(qm, ctx.prec)?;
                    if q_minus.len() != spec.r {
                        return Err(Error::Input(format!("expected {} Q- polynomials", spec.r)));
                    }
                    QQSolution { q_plus, q_minus, chains: Default::default() }
                }
                None => solution_from_q_plus(spec, q_plus, ctx)?,
            };
            if let Some(ch) = &w.chains {
                sol.chains.clear();
                for c in ch {
                    let p = Poly::new(ctx.prec, c.poly.iter().map(|x| x.to_scalar(ctx.prec)).collect::<crate::Result<Vec<_>>>()?);
                    sol.chains.insert((c.i, c.j), p);
                }
            } else if sol.chains.is_empty() && spec.r > 1 {
                let mut s2 = sol.clone();
                if crate::qq::complete_chains(spec, &mut s2, ctx).is_ok() {
                    sol = s2;
                }
            }
            Ok(sol)
        })();
        match parsed {
            Ok(sol) => sols.push((None, sol)),
            Err(e) => {
                report.verdicts.push(Verdict::error("cli::parse_solution", "solution".into(), &e));
                return;
            }
        }
    } else {
        let opts = SolveOptions { seeds: job.seeds, seed: job.seed, strategy: job.strategy, exec: job.exec };
        let out = solve_bethe(spec, &opts, ctx);
        report.extra.insert("converged_seeds".into(), json!(out.converged_seeds));
        if out.states.is_empty() {
            report.no_convergence = true;
            report.diagnostic = out.diagnostic;
            return;
        }
        for st in out.states {
            match solution_from_q_plus(spec, st.q_plus(), ctx) {
                Ok(sol) => sols.push((Some(st.roots), sol)),
                Err(e) => report.verdicts.push(Verdict::error("qq::solution_from_q_plus", format!("state {}", sols.len()), &e)),
            }
        }
    }
    let cmd = job.command;
    for (k, (roots, sol)) in sols.iter().enumerate() {
        let tag = format!("state {k}");
        let full = !matches!(cmd, CommandKind::Solve);
        qq_checks(spec, sol, &tag, ctx, full, &mut report.verdicts);
        let mut payload = qq_solution_json(spec, roots.as_deref(), sol);
        if matches!(cmd, CommandKind::Backlund | CommandKind::Report) {
            backlund_checks(spec, sol, &tag, ctx, &mut report.verdicts);
        }
        if matches!(cmd, CommandKind::Wronskian | CommandKind::Report) {
            if let Some(minors) = wronskian_checks(spec, sol, &tag, ctx, &mut report.verdicts) {
                payload.as_object_mut().expect("object").insert("minors".into(), minors);
            }
        }
        report.solutions.push(payload);
    }
}

fn toroidal_window_checks(job: &JobSpec, ts: &ToroidalSpec, sol: &ToroidalSolution, tag: &str, out: &mut Vec<Verdict>) {
    let ctx = &job.ctx;
    let lat = PeriodicLattice::from_toroidal(ts, sol);
    for &i0 in &job.window_starts {
        for &n in &job.window_sizes {
            let target = format!("{tag} window i0={i0} n={n}");
            match unfold_lattice(&lat, i0, n, ctx).and_then(|w| verify_window(&lat, &w, ctx)) {
                Ok(r) => out.push(Verdict::residual("toroidal::verify_window", target.clone(), r.qq.max(r.chains).max(r.gauge), ctx.tol)),
                Err(e) => out.push(Verdict::error("toroidal::verify_window", target.clone(), &e)),
            }
            if n >= 4 {
                match shift_conjugation_check(ts, sol, i0, n, ctx) {
                    Ok(r) => out.push(Verdict::residual(
                        "toroidal::shift_conjugation_check",
                        target.clone(),
                        r.a_residual.max(r.vinv_residual),
                        ctx.tol,
                    )),
                    Err(e) => out.push(Verdict::error("toroidal::shift_conjugation_check", target.clone(), &e)),
                }
                if ts.cycle > 1 {
                    let grouped = lat.regroup(ts.cycle);
                    match lattice_shift_check(&grouped, ts.cycle, &ts.xi, &ts.p(), i0, n, ctx) {
                        Ok(r) => out.push(Verdict::residual(
                            "toroidal::lattice_shift_check",
                            format!("{target} cycle={}", ts.cycle),
                            r.a_residual.max(r.vinv_residual),
                            ctx.tol,
                        )),
                        Err(e) => out.push(Verdict::error("toroidal::lattice_shift_check", target, &e)),
                    }
                }
            }
        }
    }
}

fn run_toroidal(job: &JobSpec, ts: &ToroidalSpec, report: &mut Report) {
    let ctx = &job.ctx;
    let tol = ctx.tol;
    report.extra.insert(
        "dictionary".into(),
        json!({
            "hbar": "(t1*t2)^-1",
            "p": "t1",
            "q_value": ts.q().to_json(),
            "p_value": ts.p().to_json(),
            "kappa": ts.kappa().to_json(),
            "bethe_rhs": ts.z_kahler.to_json(),
        }),
    );
    let mut sols: Vec<(Vec<Scalar>, ToroidalSolution)> = Vec::new();
    if job.command == CommandKind::Verify {
        let w = job.solution.as_ref().expect("checked at parse time");
        let parsed = (|| -> crate::Result<ToroidalSolution> {
            let qp = parse_polys(&w.q_plus, ctx.prec)?;
            if qp.len() != 1 {
                return Err(Error::Input("toroidal solutions carry one Q+ polynomial".into()));
            }
            let q_plus = qp[0].clone();
            let q_minus = match &w.q_minus {
                Some(qm) => parse_polys(qm, ctx.prec)?.into_iter().next().ok_or_else(|| Error::Input("empty q_minus".into()))?,
                None => q_minus_from_plus(ts, &q_plus, ctx)?,
            };
            Ok(ToroidalSolution { q_plus, q_minus, chain_q: Default::default(), framing: ts.framing() })
        })();
        match parsed {
            Ok(sol) => sols.push((sol.q_plus.roots(), sol)),
            Err(e) => {
                report.verdicts.push(Verdict::error("cli::parse_solution", "solution".into(), &e));
                return;
            }
        }
    } else {
        let opts = SolveOptions { seeds: job.seeds, seed: job.seed, strategy: job.strategy, exec: job.exec };
        let out = solve_adhm_bethe(ts, &opts, ctx);
        report.extra.insert("converged_seeds".into(), json!(out.converged_seeds));
        if out.states.is_empty() {
            report.no_convergence = true;
            report.diagnostic = out.diagnostic;
            return;
        }
        for st in out.states {
            match solution_from_roots(ts, &st, 0, ctx) {
                Ok(sol) => sols.push((st, sol)),
                Err(e) => report.verdicts.push(Verdict::error("toroidal::solution_from_roots", format!("state {}", sols.len()), &e)),
            }
        }
    }
    let cmd = job.command;
    for (k, (roots, sol)) in sols.iter().enumerate() {
        let tag = format!("state {k}");
        let m = adhm_bethe_residual(ts, roots).into_iter().map(|x| x.unwrap_or(f64::INFINITY)).fold(0.0, f64::max);
        report.verdicts.push(Verdict::residual("toroidal::adhm_bethe_residual", tag.clone(), m, tol));
        match toroidal_qq_residual(ts, sol, ctx) {
            Ok(r) => report.verdicts.push(Verdict::residual("toroidal::toroidal_qq_residual", tag.clone(), r, tol)),
            Err(e) => report.verdicts.push(Verdict::error("toroidal::toroidal_qq_residual", tag.clone(), &e)),
        }
        if matches!(cmd, CommandKind::Fold | CommandKind::Verify | CommandKind::Report) {
            match fold_check(ts, sol, ctx) {
                Ok(r) => {
                    let worst = r.bethe.iter().cloned().fold(r.qq_input.max(r.qq_rebuilt).max(r.alternate_placement), f64::max);
                    report.verdicts.push(Verdict::residual("toroidal::fold_check", tag.clone(), worst, tol));
                }
                Err(e) => report.verdicts.push(Verdict::error("toroidal::fold_check", tag.clone(), &e)),
            }
        }
        if matches!(cmd, CommandKind::Report) {
            match yang_yang_grad_check(ts, roots, ctx) {
                Ok(r) => {
                    let g = r.grad_residual.iter().cloned().fold(0.0, f64::max);
                    let fd = r.fd_rel_error.iter().cloned().fold(0.0, f64::max);
                    report.verdicts.push(Verdict::residual("toroidal::yang_yang_grad_check gradient", tag.clone(), g, tol));
                    report.verdicts.push(Verdict::residual("toroidal::yang_yang_grad_check finite difference", tag.clone(), fd, 1e-6));
                    if r.branch_flag.iter().any(|&b| b) {
                        report.verdicts.push(Verdict::flag(
                            "toroidal::yang_yang_grad_check branch",
                            tag.clone(),
                            false,
                            Some("branch ambiguity".into()),
                        ));
                    }
                }
                Err(e) => report.verdicts.push(Verdict::error("toroidal::yang_yang_grad_check", tag.clone(), &e)),
            }
        }
        if matches!(cmd, CommandKind::Window | CommandKind::Report) {
            toroidal_window_checks(job, ts, sol, &tag, &mut report.verdicts);
        }
        report.solutions.push(toroidal_solution_json(roots, sol));
    }
}

/// Runs a parsed job. Deterministic given the job; only `timing_ms` varies.
pub fn run(job: &JobSpec) -> Report {
    let start = Instant::now();
    let mut report = Report {
        command: job.command,
        seed: job.seed,
        ctx: job.ctx,
        inputs: job.problem_echo.clone(),
        extra: Map::new(),
        solutions: vec![],
        verdicts: vec![],
        diagnostic: String::new(),
        no_convergence: false,
        timing_ms: 0,
    };
    report.extra.insert("seeds".into(), json!(job.seeds));
    match &job.problem {
        Problem::Qq(spec) => {
            report.extra.insert("convention".into(), serde_json::to_value(spec.convention).expect("convention serializes"));
            run_qq(job, spec, &mut report)
        }
        Problem::Toroidal(ts) => run_toroidal(job, ts, &mut report),
    }
    report.timing_ms = start.elapsed().as_millis();
    report
}

fn read_input(path: &PathBuf) -> std::io::Result<String> {
    if path.as_os_str() == "-" {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s)?;
        Ok(s)
    } else {
        std::fs::read_to_string(path)
    }
}

/// Entry point for the binary; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_PASS };
            let _ = e.print();
            return code;
        }
    };
    let (command, args) = cli.command.split();
    let text = match read_input(&args.spec) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.spec.display());
            return EXIT_INPUT;
        }
    };
    let job = match parse_spec(&text, Some(command), args) {
        Ok(j) => j,
        Err(errs) => {
            eprintln!("input error:\n{errs}");
            return EXIT_INPUT;
        }
    };
    let report = run(&job);
    let body = serde_json::to_string_pretty(&report.to_json()).expect("report serializes") + "\n";
    match &args.out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, &body) {
                eprintln!("error: cannot write {}: {e}", path.display());
                return EXIT_INPUT;
            }
            if args.table {
                print!("{}", report.table());
            }
        }
        None => {
            print!("{body}");
            if args.table {
                eprint!("{}", report.table());
            }
        }
    }
    if !report.diagnostic.is_empty() {
        eprintln!("{}", report.diagnostic);
    }
    report.exit_code()
}
