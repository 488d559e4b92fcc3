use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use evr_core::control::{self, ControlOptions, Decision, SessionLog};
use evr_core::dists::{DensitySpec, Density1D};
use evr_core::evr::{self, EnginePreference, EvrError, EvrOptions, EvrReport};
use evr_core::figures;
use evr_core::files::{self, ModelRef, ResolvedSpec};
use evr_core::model::DecisionModel;
use evr_core::oracle;

#[derive(Parser)]
#[command(name = "evr", version, about = "Expected value of refinement for decision models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Expected utilities, best action and EVPI of a model.
    Eval {
        model: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// EVR of a refinement spec against a model.
    Evr {
        model: PathBuf,
        spec: PathBuf,
        #[arg(long, value_enum, default_value_t = EngineArg::Auto)]
        engine: EngineArg,
        /// Monte Carlo sample count.
        #[arg(long, default_value_t = 1_000_000)]
        n: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
    /// Run the refinement controller on a session file.
    Control {
        session: PathBuf,
        /// Lookahead depth; 2 consults two-step lookahead when no single step pays.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
        lookahead: u8,
        #[arg(long, default_value_t = 64)]
        lookahead_samples: usize,
        /// Write the session log (JSON) here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Emit figure data as CSV.
    Figure {
        #[arg(value_enum)]
        name: FigureName,
        /// Model file (policy-vs-pi).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Swept state label (policy-vs-pi); defaults to the first state.
        #[arg(long)]
        state: Option<String>,
        /// Comma-separated constants (mustar-vs-mu).
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        constants: Vec<f64>,
        #[arg(long, allow_negative_numbers = true)]
        lo: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        hi: Option<f64>,
        /// Density literal (pdf), inline JSON or @path.
        #[arg(long)]
        density: Option<String>,
        #[arg(long, default_value_t = 1001)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo estimate of the value with refinement.
    Oracle {
        model: PathBuf,
        spec: PathBuf,
        #[arg(long, value_enum, default_value_t = OracleMode::Direct)]
        mode: OracleMode,
        #[arg(long, default_value_t = 1_000_000)]
        n: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Auto,
    Exact,
    Mc,
}

#[derive(Clone, Copy, ValueEnum)]
enum FigureName {
    PolicyVsPi,
    MustarVsMu,
    Pdf,
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleMode {
    /// Sample parameters and take the max of the μ-profile.
    Direct,
    /// Realize refined models and evaluate them.
    Simulate,
}

enum Failure {
    Input(String),
    Capability(String),
}

impl From<files::FileError> for Failure {
    fn from(e: files::FileError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<EvrError> for Failure {
    fn from(e: EvrError) -> Self {
        match e {
            EvrError::ExactUnavailable(_) => Failure::Capability(e.to_string()),
            other => Failure::Input(other.to_string()),
        }
    }
}

impl From<control::ControlError> for Failure {
    fn from(e: control::ControlError) -> Self {
        match e {
            control::ControlError::Evr(e) => e.into(),
            other => Failure::Input(other.to_string()),
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn with_path<T>(path: &Path, r: Result<T, files::FileError>) -> Result<T, Failure> {
    r.map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<DecisionModel, Failure> {
    with_path(path, files::parse_model(&read(path)?))
}

fn load_spec(path: &Path, model: &DecisionModel) -> Result<ResolvedSpec, Failure> {
    let body = with_path(path, files::parse_spec(&read(path)?))?;
    with_path(path, body.resolve(model))
}

/// Seven significant digits.
fn sig(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let digits = (6 - x.abs().log10().floor() as i32).clamp(0, 20) as usize;
    format!("{x:.digits$}")
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Failure::Input(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

fn cmd_eval(model: &Path, json: bool) -> Result<(), Failure> {
    let m = load_model(model)?;
    let e = m.evaluate();
    let evpi = m.evpi();
    if json {
        let v = json!({
            "actions": m.actions(),
            "per_action_eu": e.per_action_eu,
            "best_action": m.actions()[e.best_action],
            "best_action_index": e.best_action,
            "value": e.value,
            "evpi": evpi,
        });
        return emit(None, &to_json(&v));
    }
    let mut out = String::new();
    for (a, eu) in m.actions().iter().zip(&e.per_action_eu) {
        out.push_str(&format!("EU({a}) = {}\n", sig(*eu)));
    }
    out.push_str(&format!("best action: {}\n", m.actions()[e.best_action]));
    out.push_str(&format!("value: {}\n", sig(e.value)));
    out.push_str(&format!("EVPI: {}\n", sig(evpi)));
    emit(None, &out)
}

#[derive(Serialize)]
struct EvrOut {
    kind: &'static str,
    default_action_label: String,
    #[serde(flatten)]
    report: EvrReport,
}

fn cmd_evr(model: &Path, spec: &Path, engine: EngineArg, n: u64, seed: u64, json: bool) -> Result<(), Failure> {
    let m = load_model(model)?;
    let resolved = load_spec(spec, &m)?;
    let (kind, report, label) = match resolved {
        ResolvedSpec::Refinement(s) => {
            let opts = EvrOptions {
                engine: match engine {
                    EngineArg::Auto => EnginePreference::Auto,
                    EngineArg::Exact => EnginePreference::Exact,
                    EngineArg::Mc => EnginePreference::MonteCarlo,
                },
                mc_samples: n.max(1),
                seed,
            };
            let r = evr::evr_with(&m, &s, &opts)?;
            let label = m.actions()[r.default_action].clone();
            (s.kind(), r, label)
        }
        ResolvedSpec::MuDirect { mu, default_value } => {
            if matches!(engine, EngineArg::Mc) {
                return Err(Failure::Capability(
                    "mu-direct specs are evaluated exactly only".into(),
                ));
            }
            let dv = default_value.unwrap_or_else(|| evr::mu_default_value(&mu));
            let r = evr::evr_mu_direct(&mu, dv);
            let label = format!("mu[{}]", r.default_action);
            ("mu-direct", r, label)
        }
    };
    if json {
        return emit(None, &to_json(&EvrOut { kind, default_action_label: label, report }));
    }
    let engine = serde_json::to_value(report.engine).expect("engine serializes");
    let mut out = format!(
        "kind: {kind}\nengine: {}\nvalue with refinement: {}\nvalue without refinement: {}\nEVR: {}\ndefault action: {label}\n",
        engine.as_str().unwrap_or_default(),
        sig(report.value_with),
        sig(report.value_without),
        sig(report.evr),
    );
    if let Some(se) = report.mc_stderr {
        out.push_str(&format!("MC stderr: {}\n", sig(se)));
    }
    emit(None, &out)
}

fn session_model(session: &Path, file: &files::SessionFile) -> Result<DecisionModel, Failure> {
    if let Some(m) = with_path(session, file.inline_model())? {
        return Ok(m);
    }
    let ModelRef::Path(rel) = &file.model else {
        unreachable!("inline models handled above");
    };
    let base = session.parent().unwrap_or(Path::new("."));
    load_model(&base.join(rel))
}

fn render_log(log: &SessionLog) -> String {
    let mut out = String::new();
    for step in &log.steps {
        out.push_str(&format!("step {} (value {})\n", step.step, sig(step.model_value)));
        for e in &step.table {
            match &e.best {
                Some(p) => out.push_str(&format!(
                    "  {:<20} t = {:<8} EVR = {:<12} NEVR = {}\n",
                    e.procedure,
                    p.t,
                    sig(p.evr),
                    sig(p.nevr)
                )),
                None => out.push_str(&format!("  {:<20} not applicable\n", e.procedure)),
            }
        }
        match &step.decision {
            Decision::Apply { procedure, t, lookahead } => {
                let via = if *lookahead { " (two-step lookahead)" } else { "" };
                out.push_str(&format!("  apply {procedure} at t = {t}{via}\n"));
            }
            Decision::Halt { reason } => {
                let reason = serde_json::to_value(reason).expect("reason serializes");
                out.push_str(&format!("  HALT ({})\n", reason.as_str().unwrap_or_default()));
            }
        }
        if let Some(o) = &step.outcome {
            out.push_str(&format!("  outcome: best {} with value {}\n", o.best_action, sig(o.value)));
        }
    }
    out.push_str(&format!("final action: {}\nfinal value: {}\n", log.final_action, sig(log.final_value)));
    out
}

fn cmd_control(
    session: &Path,
    lookahead: u8,
    lookahead_samples: usize,
    out: Option<&Path>,
    json: bool,
) -> Result<(), Failure> {
    let file = with_path(session, files::parse_session(&read(session)?))?;
    let model = session_model(session, &file)?;
    let procedures = with_path(session, file.procedures(&model))?;
    let costs = with_path(session, file.costs())?;
    let opts = ControlOptions {
        max_steps: file.max_steps,
        seed: file.seed,
        lookahead: lookahead == 2,
        lookahead_samples,
        ..ControlOptions::default()
    };
    let log = control::greedy_controller(&model, &procedures, &costs, &opts)?;
    match out {
        Some(p) => {
            emit(Some(p), &to_json(&log))?;
            if !json {
                emit(None, &render_log(&log))?;
            }
            Ok(())
        }
        None if json => emit(None, &to_json(&log)),
        None => emit(None, &render_log(&log)),
    }
}

fn parse_density(arg: &str) -> Result<Density1D, Failure> {
    let text = match arg.strip_prefix('@') {
        Some(p) => read(Path::new(p))?,
        None => arg.to_string(),
    };
    let spec: DensitySpec =
        serde_json::from_str(&text).map_err(|e| Failure::Input(format!("density: {e}")))?;
    Density1D::make(&spec).map_err(|e| Failure::Input(format!("density: {e}")))
}

#[allow(clippy::too_many_arguments)]
fn cmd_figure(
    name: FigureName,
    model: Option<&Path>,
    state: Option<&str>,
    constants: &[f64],
    lo: Option<f64>,
    hi: Option<f64>,
    density: Option<&str>,
    points: usize,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let table = match name {
        FigureName::PolicyVsPi => {
            let path = model.ok_or_else(|| Failure::Input("policy-vs-pi needs --model".into()))?;
            let m = load_model(path)?;
            let s = match state {
                Some(label) => m
                    .state_index(label)
                    .ok_or_else(|| Failure::Input(format!("unknown state `{label}`")))?,
                None => 0,
            };
            figures::policy_vs_pi(&m, s, points).map_err(|e| Failure::Input(e.to_string()))?
        }
        FigureName::MustarVsMu => {
            if constants.is_empty() || constants.iter().any(|c| !c.is_finite()) {
                return Err(Failure::Input("mustar-vs-mu needs finite --constants".into()));
            }
            let top = constants.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let (lo, hi) = (lo.unwrap_or(top - 0.1), hi.unwrap_or(top + 0.1));
            if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
                return Err(Failure::Input("--lo must be below --hi".into()));
            }
            figures::mustar_vs_mu(constants, lo, hi, points)
        }
        FigureName::Pdf => {
            let d = parse_density(density.ok_or_else(|| Failure::Input("pdf needs --density".into()))?)?;
            figures::pdf_table(&d, points)
        }
    };
    emit(out, &table.to_csv())
}

fn cmd_oracle(model: &Path, spec: &Path, mode: OracleMode, n: u64, seed: u64, json: bool) -> Result<(), Failure> {
    let m = load_model(model)?;
    let ResolvedSpec::Refinement(s) = load_spec(spec, &m)? else {
        return Err(Failure::Capability("the oracle needs a model-based spec, not mu-direct".into()));
    };
    let est = match mode {
        OracleMode::Direct => oracle::mc_value_with(&m, &s, n, seed)?,
        OracleMode::Simulate => oracle::simulate_refinement(&m, &s, n, seed)?,
    };
    if json {
        return emit(None, &to_json(&est));
    }
    emit(
        None,
        &format!(
            "estimate: {} ± {}\nsamples: {} (rejected {})\nseed: {}\n",
            sig(est.estimate),
            sig(est.stderr),
            est.n,
            est.rejected,
            est.seed
        ),
    )
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Eval { model, json } => cmd_eval(&model, json),
        Command::Evr { model, spec, engine, n, seed, json } => cmd_evr(&model, &spec, engine, n, seed, json),
        Command::Control { session, lookahead, lookahead_samples, out, json } => {
            cmd_control(&session, lookahead, lookahead_samples, out.as_deref(), json)
        }
        Command::Figure { name, model, state, constants, lo, hi, density, points, out } => cmd_figure(
            name,
            model.as_deref(),
            state.as_deref(),
            &constants,
            lo,
            hi,
            density.as_deref(),
            points,
            out.as_deref(),
        ),
        Command::Oracle { model, spec, mode, n, seed, json } => cmd_oracle(&model, &spec, mode, n, seed, json),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Capability(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
