//! `etank` command-line front end.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 run ended on a
//! singularity or escape (partial trace still written), 3 audit failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::audit::{passivity_audit, Storage};
use crate::error::{Error, Result};
use crate::scenarios::{
    fig3_compare_with, random_passive_params, run_batch, Example1Params, ScenarioSpec, SCENARIOS,
};
use crate::sim::{config_hash, simulate, Method, SimConfig, TerminationReason};
use crate::tank::{EnergyLaw, ValveConfig, ValveMode};
use crate::trace::{format_num, Trace};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_TERMINATED: i32 = 2;
pub const EXIT_AUDIT_FAILED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "etank", version, about = "Energy-tank passivation of port-Hamiltonian systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and write its trace CSV plus a run manifest.
    Simulate(SimulateArgs),
    /// Check a trace CSV for passivity.
    Audit(AuditArgs),
    /// Run Example 1 with both tank laws and write the paired energy curves.
    CompareTanks(CompareArgs),
    /// Run and audit a seeded batch of random environment cases in parallel.
    Batch(BatchArgs),
}

/// Flags for `simulate`. Every field is optional so that a config file can
/// fill the gaps; flags given on the command line win.
#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct SimulateArgs {
    /// TOML file whose keys mirror these flag names.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// One of: example1, free-mass, passive-env, active-env.
    #[arg(long)]
    scenario: Option<String>,
    /// Tank energy law: quadratic or exponential.
    #[arg(long)]
    tank: Option<String>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    /// Trace CSV path; the manifest goes to `<out>.manifest.toml`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Enable the detachment valve for example1.
    #[arg(long)]
    #[serde(default)]
    valve: bool,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Use the smoothstep valve with this ramp width (J).
    #[arg(long)]
    smooth_width: Option<f64>,
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long)]
    p_max: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    m: Option<f64>,
    #[arg(long)]
    f_bar: Option<f64>,
    /// Initial tank energy (J).
    #[arg(long)]
    t0_energy: Option<f64>,
    /// Initial momentum for free-mass.
    #[arg(long)]
    p0: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Case index for passive-env / active-env.
    #[arg(long)]
    case: Option<usize>,
    /// rk4 or euler.
    #[arg(long)]
    method: Option<String>,
    /// Record every k-th step.
    #[arg(long)]
    stride: Option<u64>,
}

impl SimulateArgs {
    fn merged_over(self, file: SimulateArgs) -> SimulateArgs {
        SimulateArgs {
            config: self.config,
            scenario: self.scenario.or(file.scenario),
            tank: self.tank.or(file.tank),
            dt: self.dt.or(file.dt),
            t_end: self.t_end.or(file.t_end),
            out: self.out.or(file.out),
            valve: self.valve || file.valve,
            epsilon: self.epsilon.or(file.epsilon),
            smooth_width: self.smooth_width.or(file.smooth_width),
            t_max: self.t_max.or(file.t_max),
            p_max: self.p_max.or(file.p_max),
            beta: self.beta.or(file.beta),
            m: self.m.or(file.m),
            f_bar: self.f_bar.or(file.f_bar),
            t0_energy: self.t0_energy.or(file.t0_energy),
            p0: self.p0.or(file.p0),
            seed: self.seed.or(file.seed),
            case: self.case.or(file.case),
            method: self.method.or(file.method),
            stride: self.stride.or(file.stride),
        }
    }
}

#[derive(Debug, Args)]
struct AuditArgs {
    trace: PathBuf,
    /// plant (H, port u_c + u_e) or total (H + T, port u_e).
    #[arg(long, default_value = "total")]
    storage: String,
    /// Allowed shortfall per unit time; defaults to 1e-6 + 10·dt².
    #[arg(long, allow_negative_numbers = true)]
    tol: Option<f64>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Wide CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-4)]
    dt: f64,
    #[arg(long, default_value_t = 3.0)]
    t_end: f64,
    #[arg(long, default_value_t = 1.0)]
    m: f64,
    #[arg(long, default_value_t = 1.0)]
    f_bar: f64,
    #[arg(long, default_value_t = 1.0)]
    t0_energy: f64,
}

#[derive(Debug, Args)]
struct BatchArgs {
    /// passive-env or active-env.
    #[arg(long, default_value = "passive-env")]
    scenario: String,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    cases: usize,
    #[arg(long, default_value_t = 2.0)]
    t_end: f64,
}

/// Serialized next to every trace; enough to repeat the run.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub scenario: String,
    pub config_hash: String,
    pub termination: TerminationInfo,
    pub outputs: OutputPaths,
    pub parameters: ScenarioSpec,
    pub integration: SimConfig,
}

#[derive(Debug, Serialize)]
pub struct TerminationInfo {
    pub reason: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
    pub summary: String,
}

impl From<TerminationReason> for TerminationInfo {
    fn from(t: TerminationReason) -> Self {
        let (reason, kind) = match t {
            TerminationReason::Completed => ("completed", None),
            TerminationReason::Singularity { .. } => ("singularity", None),
            TerminationReason::Escape { reason, .. } => ("escape", Some(reason.name().to_string())),
        };
        Self {
            reason: reason.into(),
            kind,
            time: t.time(),
            summary: t.to_string(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct OutputPaths {
    pub trace: String,
    pub manifest: String,
}

pub fn manifest_path(trace: &Path) -> PathBuf {
    let mut name = trace.as_os_str().to_owned();
    name.push(".manifest.toml");
    PathBuf::from(name)
}

pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Audit(a) => cmd_audit(a),
        Command::CompareTanks(a) => cmd_compare_tanks(a),
        Command::Batch(a) => cmd_batch(a),
    };
    outcome.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        EXIT_USAGE
    })
}

fn resolve(args: SimulateArgs) -> Result<(ScenarioSpec, SimConfig, PathBuf)> {
    let args = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            let file: SimulateArgs = toml::from_str(&text).map_err(|e| {
                Error::InvalidConfig(format!("{}: {}", path.display(), e.message()))
            })?;
            args.merged_over(file)
        }
        None => args,
    };
    let name = args.scenario.ok_or_else(|| {
        Error::InvalidConfig(format!(
            "--scenario is required (available: {})",
            SCENARIOS.join(", ")
        ))
    })?;
    if !SCENARIOS.contains(&name.as_str()) {
        return Err(Error::InvalidConfig(format!(
            "unknown scenario '{name}' (available: {})",
            SCENARIOS.join(", ")
        )));
    }
    let defaults = ScenarioSpec::default();
    let mut valve = if args.valve {
        ValveConfig::hard(args.epsilon.unwrap_or(1e-2))
    } else {
        ValveConfig::disabled()
    };
    if let Some(width) = args.smooth_width {
        valve.mode = ValveMode::Smooth { width };
    }
    valve.t_max = args.t_max;
    valve.p_max = args.p_max;
    valve.beta = args.beta.unwrap_or(0.0);
    valve.validate()?;

    let spec = ScenarioSpec {
        name,
        mass: args.m.unwrap_or(defaults.mass),
        f_bar: args.f_bar.unwrap_or(defaults.f_bar),
        law: match args.tank {
            Some(s) => s.parse()?,
            None => defaults.law,
        },
        tank_energy: args.t0_energy.unwrap_or(defaults.tank_energy),
        p0: args.p0.unwrap_or(defaults.p0),
        valve,
        seed: args.seed.unwrap_or(defaults.seed),
        case: args.case.unwrap_or(defaults.case),
    };
    let mut cfg = SimConfig::new(args.dt.unwrap_or(1e-4), args.t_end.unwrap_or(3.0));
    if let Some(m) = args.method {
        cfg.method = m.parse::<Method>()?;
    }
    cfg.record_stride = args.stride.unwrap_or(1);
    cfg.seed = spec.seed;
    cfg.validate()?;
    let out = args
        .out
        .unwrap_or_else(|| PathBuf::from(format!("{}.csv", spec.name)));
    Ok((spec, cfg, out))
}

fn cmd_simulate(args: SimulateArgs) -> Result<i32> {
    let (spec, cfg, out) = resolve(args)?;
    let sys = spec.build()?;
    let (trace, termination) = simulate(&sys, &cfg)?;
    trace.save_csv(&out)?;

    let manifest_file = manifest_path(&out);
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        scenario: spec.name.clone(),
        config_hash: config_hash(&sys, &cfg),
        termination: termination.into(),
        outputs: OutputPaths {
            trace: out.display().to_string(),
            manifest: manifest_file.display().to_string(),
        },
        parameters: spec,
        integration: cfg,
    };
    let text = toml::to_string(&manifest)
        .map_err(|e| Error::Invariant(format!("manifest serialization: {e}")))?;
    fs::write(&manifest_file, text)?;

    println!(
        "{}: {} samples, {termination} -> {}",
        manifest.scenario,
        trace.samples.len(),
        out.display()
    );
    Ok(if termination.is_completed() {
        EXIT_OK
    } else {
        EXIT_TERMINATED
    })
}

fn cmd_audit(args: AuditArgs) -> Result<i32> {
    let storage: Storage = args.storage.parse()?;
    if let Some(tol) = args.tol {
        if !(tol >= 0.0) {
            return Err(Error::InvalidConfig(format!("--tol must be >= 0, got {tol}")));
        }
    }
    let trace = Trace::load_csv(&args.trace).map_err(|e| match e {
        Error::Trace { row, message } => Error::InvalidConfig(format!(
            "{}: row {row}: {message}",
            args.trace.display()
        )),
        other => other,
    })?;
    let report = passivity_audit(&trace, storage, args.tol)?;
    print!("{report}");
    Ok(if report.passed { EXIT_OK } else { EXIT_AUDIT_FAILED })
}

fn cmd_compare_tanks(args: CompareArgs) -> Result<i32> {
    let cfg = SimConfig::new(args.dt, args.t_end);
    let params = Example1Params {
        mass: args.m,
        f_bar: args.f_bar,
        law: EnergyLaw::Exponential,
        tank_energy: args.t0_energy,
    };
    let cmp = fig3_compare_with(params, &cfg)?;

    let mut text = String::from("t,T_quad,T_exp,xt_quad,xt_exp\n");
    let cell = |v: Option<f64>| v.map(format_num).unwrap_or_default();
    for (t, tq, te, xq, xe) in cmp.rows() {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            format_num(t),
            cell(tq),
            cell(te),
            cell(xq),
            cell(xe)
        ));
    }
    let summary = format!(
        "max |T_quad - T_exp| = {:.3e} over [0, {:.4}] s; quadratic: {}; exponential: {}; \
         including the last {} s before termination: {:.3e}",
        cmp.max_energy_diff,
        cmp.window_end,
        cmp.quadratic.termination,
        cmp.exponential.termination,
        crate::scenarios::TERMINATION_MARGIN,
        cmp.tail_energy_diff,
    );
    match &args.out {
        Some(path) => {
            fs::write(path, text)?;
            println!("{summary}");
        }
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            eprintln!("{summary}");
        }
    }
    Ok(EXIT_OK)
}

fn cmd_batch(args: BatchArgs) -> Result<i32> {
    let active = match args.scenario.as_str() {
        "passive-env" => false,
        "active-env" => true,
        other => {
            return Err(Error::InvalidConfig(format!(
                "batch runs passive-env or active-env, not '{other}'"
            )))
        }
    };
    let params = random_passive_params(args.seed, args.cases)?;
    let mut systems = Vec::with_capacity(params.len());
    let mut configs = Vec::with_capacity(params.len());
    for (i, p) in params.iter().enumerate() {
        let p = if active { p.activated() } else { *p };
        systems.push(p.build(&format!("{}[{}/{i}]", args.scenario, args.seed))?);
        configs.push(p.sim_config(args.t_end));
    }
    let mut failures = 0;
    for (i, (trace, termination)) in run_batch(&systems, &configs)?.into_iter().enumerate() {
        let report = passivity_audit(&trace, Storage::TotalH, None)?;
        if !report.passed {
            failures += 1;
        }
        let env = report
            .environment
            .as_ref()
            .map(|e| format!(", environment worst {:.3e}", e.worst_violation))
            .unwrap_or_default();
        println!(
            "case {i:3}: {termination}, audit {} (worst violation {:.3e}{env}, allowance {:.3e})",
            if report.passed { "pass" } else { "FAIL" },
            report.worst_violation,
            report.allowance
        );
    }
    println!("{failures} of {} cases failed the audit", systems.len());
    Ok(if failures == 0 { EXIT_OK } else { EXIT_AUDIT_FAILED })
}
