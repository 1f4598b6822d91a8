//! Command-line front end for the exact `Q_p` toolkit.
//!
//! Every subcommand prints one JSON report on stdout (full run configuration
//! and toolkit version embedded) and a one-line human summary on stderr
//! (suppressed by `--quiet`). Exit codes: 0 = property verified, 1 = verified
//! failure (witness in the report) or engine failure, 2 = usage/precondition
//! error. Reports are deterministic: repeated runs with the same arguments
//! produce byte-identical output.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use padic_prep::error::PadicError;
use padic_prep::functions::{parse_with_window, PiecewiseFunction, ZeroInverse};
use padic_prep::geometry::{Ball, Cell, Window};
use padic_prep::jacobian::{
    banach_fixed_point, check_n_compatible, check_n_equicompatible, check_n_jacobian,
    solve_equal_point, solve_equal_rv_point, FnModel,
};
use padic_prep::lipschitz::{decompose_lipschitz, LipschitzBudget};
use padic_prep::prepare::{classical_decomposition, prepare_line, Partition};
use padic_prep::qrat::{self, is_prime, q_display};
use padic_prep::report::parse_q;
use padic_prep::{FieldContext, Q};

#[derive(Parser)]
#[command(
    name = "padic-prep",
    version,
    about = "Exact p-adic preparation, Jacobian and Lipschitz toolkit",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Prime p of the field Q_p.
    #[arg(short = 'p', long, default_value_t = 3, global = true)]
    prime: u64,

    /// Working precision: significant p-adic digits tracked per number.
    #[arg(short = 'N', long, default_value_t = 12, global = true)]
    precision: u32,

    /// Lowest valuation of the test window.
    #[arg(long, default_value_t = -3, allow_hyphen_values = true, global = true)]
    vmin: i64,

    /// Highest valuation of the test window.
    #[arg(long, default_value_t = 3, allow_hyphen_values = true, global = true)]
    vmax: i64,

    /// Unit depth k of the test window (unit parts mod p^k); default n + 3.
    #[arg(short = 'k', long, global = true)]
    unit_level: Option<u32>,

    /// rv level n (default 1; the `jacobian` command defaults to 0, the plain
    /// norm-level property).
    #[arg(long = "n", global = true)]
    level: Option<u32>,

    /// Force the exact zero point into the window sample.
    #[arg(long, global = true, overrides_with = "without_zero")]
    with_zero: bool,

    /// Drop the exact zero point from the window sample.
    #[arg(long, global = true, overrides_with = "with_zero")]
    without_zero: bool,

    /// Function source text, e.g. "t^2 + t on {ord(t) >= 0}". Repeatable for
    /// commands that prepare several functions jointly.
    #[arg(short = 'f', long = "function", global = true)]
    function: Vec<String>,

    /// Read one function source per line from a file (joined with `-f`).
    #[arg(long, global = true)]
    function_file: Option<PathBuf>,

    /// Suppress the human summary on stderr.
    #[arg(long, global = true)]
    quiet: bool,

    /// Worker threads (falls back to PADIC_PREP_JOBS, then 1). Recorded in the
    /// report; execution is sequential so results never depend on it.
    #[arg(long, global = true)]
    jobs: Option<u32>,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a function at an exact rational point.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Evaluation point, as an integer or "num/den".
        #[arg(short = 't', long, allow_hyphen_values = true)]
        point: String,
    },
    /// Check the (n-)Jacobian property of a function on a ball.
    Jacobian {
        #[command(flatten)]
        common: Common,
        /// Ball "center:radius_order", e.g. "0:0" for Z_p.
        #[arg(long, default_value = "0:0", allow_hyphen_values = true)]
        ball: String,
    },
    /// Check n-compatibility of a function with the cells of a guard.
    Compatible {
        #[command(flatten)]
        common: Common,
        /// Guard text naming the cells to audit, e.g. "ord(t) = 0".
        #[arg(long)]
        cell: String,
    },
    /// Solve f(x) = x on a ball by ultrametric fixed-point iteration.
    FixedPoint {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "0:0", allow_hyphen_values = true)]
        ball: String,
        /// Target precision: the residual must reach ord >= digits.
        #[arg(long, default_value_t = 8, allow_hyphen_values = true)]
        digits: i64,
    },
    /// Solve f(x) = g(x) on a ball (both must satisfy the Jacobian property).
    EqualPoint {
        #[command(flatten)]
        common: Common,
        /// Second function source text.
        #[arg(short = 'g', long = "function2")]
        function2: String,
        #[arg(long, default_value = "0:0", allow_hyphen_values = true)]
        ball: String,
        #[arg(long, default_value_t = 8, allow_hyphen_values = true)]
        digits: i64,
    },
    /// Solve rv_n(f(x)) = rv_n(g(x)) on a ball around 0.
    EqualRv {
        #[command(flatten)]
        common: Common,
        #[arg(short = 'g', long = "function2")]
        function2: String,
        #[arg(long, default_value = "0:0", allow_hyphen_values = true)]
        ball: String,
        #[arg(long, default_value_t = 8, allow_hyphen_values = true)]
        digits: i64,
    },
    /// n-prepare the given functions on the whole line.
    Prepare {
        #[command(flatten)]
        common: Common,
    },
    /// Classical cell decomposition: rv_n(f) equals rv_n of a monomial per cell.
    Classical {
        #[command(flatten)]
        common: Common,
    },
    /// Decompose the domain into parts on which f is ε-Lipschitz.
    Lipschitz {
        #[command(flatten)]
        common: Common,
        /// Lipschitz budget as an exponent: epsilon = q^e (q = residue field size).
        #[arg(long = "eps-exp", allow_hyphen_values = true)]
        eps_exp: Option<i64>,
        /// Lipschitz budget as a real epsilon; floored to the next power of q.
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Re-verify a preparation report produced by `prepare`.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Path to the JSON report (envelope or bare partition).
        #[arg(long)]
        report: PathBuf,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Eval { common, .. }
            | Command::Jacobian { common, .. }
            | Command::Compatible { common, .. }
            | Command::FixedPoint { common, .. }
            | Command::EqualPoint { common, .. }
            | Command::EqualRv { common, .. }
            | Command::Prepare { common }
            | Command::Classical { common }
            | Command::Lipschitz { common, .. }
            | Command::Verify { common, .. } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Eval { .. } => "eval",
            Command::Jacobian { .. } => "jacobian",
            Command::Compatible { .. } => "compatible",
            Command::FixedPoint { .. } => "fixed-point",
            Command::EqualPoint { .. } => "equal-point",
            Command::EqualRv { .. } => "equal-rv",
            Command::Prepare { .. } => "prepare",
            Command::Classical { .. } => "classical",
            Command::Lipschitz { .. } => "lipschitz",
            Command::Verify { .. } => "verify",
        }
    }

    /// Default rv level, and whether the window includes the exact zero point.
    fn defaults(&self) -> (u32, bool) {
        match self {
            // Ball-based Jacobian-family checks sample nonzero points: the
            // zero point carries no rv data and would mask the first genuine
            // witness. `--with-zero` opts back in.
            Command::Jacobian { .. } => (0, false),
            Command::FixedPoint { .. } | Command::EqualPoint { .. } | Command::EqualRv { .. } => {
                (1, false)
            }
            _ => (1, true),
        }
    }
}

/// The full run configuration, embedded verbatim in every report.
#[derive(Serialize, Clone)]
struct RunConfig {
    p: u64,
    precision: u32,
    v_min: i64,
    v_max: i64,
    unit_level: u32,
    include_zero: bool,
    level: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    eps_exponent: Option<i64>,
    functions: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ball: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    point: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    digits: Option<i64>,
    jobs: u32,
}

struct Env {
    config: RunConfig,
    ctx: FieldContext,
    window: Window,
    functions: Vec<PiecewiseFunction>,
}

enum CliError {
    Usage(String),
    Failure(String),
}

impl From<PadicError> for CliError {
    fn from(e: PadicError) -> Self {
        match e {
            PadicError::Syntax { .. }
            | PadicError::Precondition(_)
            | PadicError::ContextMismatch(_, _)
            | PadicError::ZeroDenominator
            | PadicError::EmptySample
            | PadicError::OutsideDomain(_) => CliError::Usage(e.to_string()),
            other => CliError::Failure(other.to_string()),
        }
    }
}

fn parse_ball(text: &str, p: u64) -> Result<Ball, CliError> {
    let (c, z) = text
        .split_once(':')
        .ok_or_else(|| CliError::Usage(format!("ball must be center:radius_order, got {text:?}")))?;
    let center = parse_q(c.trim()).map_err(CliError::Usage)?;
    let radius_order: i64 = z
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("ball radius order must be an integer, got {z:?}")))?;
    let _ = p;
    Ok(Ball { center, radius_order })
}

fn build_env(cmd: &Command) -> Result<Env, CliError> {
    let c = cmd.common();
    if !is_prime(c.prime) {
        return Err(CliError::Usage(format!("p must be prime, got {}", c.prime)));
    }
    if c.precision == 0 {
        return Err(CliError::Usage("precision must be at least 1".into()));
    }
    if c.vmin > c.vmax {
        return Err(CliError::Usage(format!(
            "empty window: vmin {} exceeds vmax {}",
            c.vmin, c.vmax
        )));
    }
    let (default_level, default_zero) = cmd.defaults();
    let level = c.level.unwrap_or(default_level);
    let unit_level = c.unit_level.unwrap_or(level + 3).max(1);
    let include_zero = if c.with_zero {
        true
    } else if c.without_zero {
        false
    } else {
        default_zero
    };

    let mut sources = c.function.clone();
    if let Some(path) = &c.function_file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        sources.extend(
            text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(String::from),
        );
    }

    let jobs = match c.jobs {
        Some(j) => j,
        None => std::env::var("PADIC_PREP_JOBS").ok().and_then(|v| v.parse().ok()).unwrap_or(1),
    };
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }

    let window = Window::new(c.vmin, c.vmax, unit_level, include_zero);
    let functions: Vec<PiecewiseFunction> = sources
        .iter()
        .map(|s| parse_with_window(s, c.prime, &window))
        .collect::<Result<_, _>>()?;

    Ok(Env {
        config: RunConfig {
            p: c.prime,
            precision: c.precision,
            v_min: c.vmin,
            v_max: c.vmax,
            unit_level,
            include_zero,
            level,
            eps_exponent: None,
            functions: sources,
            ball: None,
            point: None,
            digits: None,
            jobs,
        },
        ctx: FieldContext::qp(c.prime, c.precision),
        window,
        functions,
    })
}

fn one_function<'a>(env: &'a Env) -> Result<&'a PiecewiseFunction, CliError> {
    match env.functions.as_slice() {
        [f] => Ok(f),
        [] => Err(CliError::Usage("a function is required (-f \"... on {...}\")".into())),
        _ => Err(CliError::Usage("this command takes exactly one function".into())),
    }
}

fn parse_second(env: &Env, text: &str) -> Result<PiecewiseFunction, CliError> {
    Ok(parse_with_window(text, env.config.p, &env.window)?)
}

struct Outcome {
    result: serde_json::Value,
    pass: bool,
    summary: String,
}

fn run(cmd: &Command, env: &mut Env) -> Result<Outcome, CliError> {
    let ctx = env.ctx;
    let w = env.window;
    let n = env.config.level;
    match cmd {
        Command::Eval { point, .. } => {
            env.config.point = Some(point.clone());
            let f = one_function(env)?;
            let t: Q = parse_q(point).map_err(CliError::Usage)?;
            if !f.domain_contains(&t) {
                return Err(CliError::Usage(format!(
                    "point {} is outside the function domain",
                    q_display(&t)
                )));
            }
            let value = f.eval_q(&t, ZeroInverse::Convention)?;
            let ord = qrat::ord_p(&value, ctx.p);
            let ac = qrat::ac_residue(&value, ctx.p, n.max(1));
            let result = json!({
                "point": q_display(&t),
                "value": q_display(&value),
                "ord": ord,
                "ac_level": n.max(1),
                "ac": ac.map(|u| u.to_string()),
            });
            let summary = format!("f({}) = {}", q_display(&t), q_display(&value));
            Ok(Outcome { result, pass: true, summary })
        }
        Command::Jacobian { ball, .. } => {
            env.config.ball = Some(ball.clone());
            let f = one_function(env)?;
            let b = parse_ball(ball, ctx.p)?;
            let report = check_n_jacobian(&FnModel::Exact(f), &b, n, &w, &ctx)?;
            let pass = report.verdict;
            let summary = if pass {
                format!("jacobian property (n = {n}) holds on {} pairs", report.checked_pairs)
            } else {
                format!("jacobian property (n = {n}) fails: {}", report.detail)
            };
            Ok(Outcome { result: serde_json::to_value(report).unwrap(), pass, summary })
        }
        Command::Compatible { cell, .. } => {
            let f = one_function(env)?;
            let probe = parse_with_window(&format!("0 on {{{cell}}}"), ctx.p, &w)?;
            let cells: Vec<Cell> =
                probe.pieces.iter().flat_map(|pc| pc.cells.iter().cloned()).collect();
            if n == 0 {
                return Err(CliError::Usage("compatibility needs a level n >= 1".into()));
            }
            let mut outcomes = Vec::new();
            let mut pass = true;
            for a in &cells {
                if a.enumerate(&w, ctx.p).is_empty() {
                    continue;
                }
                let out = check_n_compatible(&FnModel::Exact(f), a, n, &w, &ctx)?;
                pass &= out.report.verdict;
                outcomes.push(json!({ "cell": a, "outcome": out }));
            }
            if outcomes.is_empty() {
                return Err(CliError::Usage("the guard has no points in the window".into()));
            }
            let count = outcomes.len();
            let summary = if pass {
                format!("{n}-compatible on all {count} cell(s)")
            } else {
                format!("{n}-compatibility fails on at least one of {count} cell(s)")
            };
            Ok(Outcome { result: serde_json::Value::Array(outcomes), pass, summary })
        }
        Command::FixedPoint { ball, digits, .. } => {
            env.config.ball = Some(ball.clone());
            env.config.digits = Some(*digits);
            let f = one_function(env)?;
            let b = parse_ball(ball, ctx.p)?;
            let out = banach_fixed_point(f, &b, *digits, &w, &ctx)?;
            let summary = format!(
                "fixed point {} after {} iteration(s)",
                q_display(&out.point),
                out.iterations
            );
            Ok(Outcome { result: serde_json::to_value(out).unwrap(), pass: true, summary })
        }
        Command::EqualPoint { function2, ball, digits, .. } => {
            env.config.ball = Some(ball.clone());
            env.config.digits = Some(*digits);
            env.config.functions.push(function2.clone());
            let g = parse_second(env, function2)?;
            let f = one_function(env)?;
            let b = parse_ball(ball, ctx.p)?;
            let out = solve_equal_point(f, &g, &b, &w, &ctx, *digits)?;
            let summary = format!(
                "f = g at {} after {} iteration(s)",
                q_display(&out.point),
                out.iterations
            );
            Ok(Outcome { result: serde_json::to_value(out).unwrap(), pass: true, summary })
        }
        Command::EqualRv { function2, ball, digits, .. } => {
            env.config.ball = Some(ball.clone());
            env.config.digits = Some(*digits);
            env.config.functions.push(function2.clone());
            let g = parse_second(env, function2)?;
            let f = one_function(env)?;
            let b = parse_ball(ball, ctx.p)?;
            let level = if n == 0 { 1 } else { n };
            let out = solve_equal_rv_point(f, &g, &b, level, &w, &ctx, *digits)?;
            let summary = format!(
                "rv_{level}(f) = rv_{level}(g) at {} after {} iteration(s)",
                q_display(&out.point),
                out.iterations
            );
            Ok(Outcome { result: serde_json::to_value(out).unwrap(), pass: true, summary })
        }
        Command::Prepare { .. } => {
            if env.functions.is_empty() {
                return Err(CliError::Usage("at least one function is required".into()));
            }
            let part = prepare_line(&env.functions, n, &w, &ctx)?;
            let summary = format!(
                "prepared into {} cell(s): {} verified on the window, {} below resolution",
                part.cells.len(),
                part.verified_cells,
                part.unsampled_cells
            );
            Ok(Outcome { result: serde_json::to_value(part).unwrap(), pass: true, summary })
        }
        Command::Classical { .. } => {
            let f = one_function(env)?;
            let dec = classical_decomposition(f, n, &w, &ctx)?;
            let summary = format!(
                "classical decomposition into {} part(s), {} window point(s) checked",
                dec.parts.len(),
                dec.checked_points
            );
            Ok(Outcome { result: serde_json::to_value(dec).unwrap(), pass: true, summary })
        }
        Command::Lipschitz { eps_exp, eps, .. } => {
            let budget = match (eps_exp, eps) {
                (Some(_), Some(_)) => {
                    return Err(CliError::Usage("give either --eps-exp or --eps, not both".into()))
                }
                (Some(e), None) => LipschitzBudget::new(*e),
                (None, Some(eps)) => LipschitzBudget::from_eps(*eps, ctx.q)?,
                (None, None) => LipschitzBudget::new(0),
            };
            env.config.eps_exponent = Some(budget.exponent);
            let f = one_function(env)?;
            let level = if n == 0 { 1 } else { n };
            let dec = decompose_lipschitz(f, None, budget, level, &w, &ctx)?;
            let summary = format!(
                "q^{}-Lipschitz on {} part(s){}",
                dec.effective_exponent,
                dec.parts.len(),
                if dec.merged_verdict { " (whole domain)" } else { "" }
            );
            Ok(Outcome { result: serde_json::to_value(dec).unwrap(), pass: true, summary })
        }
        Command::Verify { report, .. } => {
            let f = one_function(env)?;
            if n == 0 {
                return Err(CliError::Usage("verification needs a level n >= 1".into()));
            }
            let text = std::fs::read_to_string(report)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", report.display())))?;
            let value: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("invalid JSON report: {e}")))?;
            let payload = value.get("result").cloned().unwrap_or(value);
            let part: Partition = serde_json::from_value(payload)
                .map_err(|e| CliError::Usage(format!("not a preparation report: {e}")))?;
            let mut checked = 0u64;
            let mut skipped = 0u64;
            for pc in &part.cells {
                if pc.cell.enumerate(&w, ctx.p).is_empty() {
                    skipped += 1;
                    continue;
                }
                let model = pc.models.first().ok_or_else(|| {
                    CliError::Failure("a prepared cell carries no model".into())
                })?;
                let rep = check_n_equicompatible(
                    &FnModel::Exact(f),
                    &FnModel::Centered { d: model.d, m: &model.monomial },
                    &pc.cell,
                    part.level,
                    &w,
                    &ctx,
                )?;
                if !rep.verdict {
                    let result = json!({
                        "verified_cells": checked,
                        "failing_cell": pc.cell,
                        "report": rep,
                    });
                    return Ok(Outcome {
                        result,
                        pass: false,
                        summary: "verification fails; witness in the report".into(),
                    });
                }
                checked += 1;
            }
            let result = json!({
                "verified_cells": checked,
                "unsampled_cells": skipped,
                "level": part.level,
            });
            let summary =
                format!("verified {checked} cell(s), {skipped} below the window resolution");
            Ok(Outcome { result, pass: true, summary })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let quiet = cli.command.common().quiet;
    let name = cli.command.name();

    let mut env = match build_env(&cli.command) {
        Ok(env) => env,
        Err(CliError::Usage(msg)) | Err(CliError::Failure(msg)) => {
            eprintln!("padic-prep {name}: {msg}");
            return ExitCode::from(2);
        }
    };

    match run(&cli.command, &mut env) {
        Ok(out) => {
            let envelope = json!({
                "version": env!("CARGO_PKG_VERSION"),
                "command": name,
                "config": env.config,
                "result": out.result,
            });
            println!("{}", serde_json::to_string_pretty(&envelope).unwrap());
            if !quiet {
                eprintln!("padic-prep {name}: {}", out.summary);
            }
            if out.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("padic-prep {name}: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Failure(msg)) => {
            let envelope = json!({
                "version": env!("CARGO_PKG_VERSION"),
                "command": name,
                "config": env.config,
                "result": { "error": msg },
            });
            println!("{}", serde_json::to_string_pretty(&envelope).unwrap());
            if !quiet {
                eprintln!("padic-prep {name}: failed: {msg}");
            }
            ExitCode::from(1)
        }
    }
}
