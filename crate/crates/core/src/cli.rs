//! `voskit` command line: `check`, `simulate` and `--dump-builtin`.
//!
//! Exit codes: 0 ok, 1 usage or parse error, 2 hypothesis counterexample,
//! 3 numerical failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::builtins;
use crate::diagnostics::{DiagnosticsSeries, StatsSummary};
use crate::dsl::{parse_model, render_model};
use crate::hypothesis::{check_quasi_positivity, find_pairing, PairingResult, SampleBox, Verdict};
use crate::mesh::{build_disk_mesh, write_field_csv, Mesh};
use crate::model::ModelSpec;
use crate::stepper::{Observer, Simulator, State, StepControl};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_COUNTEREXAMPLE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "VOSKIT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "voskit", version, about = "Volume-surface reaction-diffusion toolkit")]
pub struct Cli {
    /// Print a built-in model in the text format and exit.
    #[arg(long, value_name = "NAME")]
    pub dump_builtin: Option<String>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample the kinetics for quasi-positivity and search for a pairing.
    Check(CheckArgs),
    /// Integrate a model and write diagnostics.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Built-in model: brusselator, ratz-roger or min-system.
    #[arg(long, value_name = "NAME", conflicts_with_all = ["model", "path"])]
    pub builtin: Option<String>,
    /// Model file.
    #[arg(long, value_name = "PATH", conflicts_with = "path")]
    pub model: Option<PathBuf>,
    /// Model file (same as --model).
    #[arg(value_name = "PATH")]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub source: ModelArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random samples per box.
    #[arg(long, default_value_t = 20_000)]
    pub samples: usize,
    /// Upper end of the sampled box.
    #[arg(long, default_value_t = 1e6)]
    pub box_max: f64,
    /// Write the JSON report here instead of stdout.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub source: ModelArgs,
    #[arg(long, default_value_t = 32)]
    pub nr: usize,
    #[arg(long, default_value_t = 64)]
    pub ntheta: usize,
    /// Disk radius; overrides the model's.
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(short = 'T', long = "t-final", default_value_t = 10.0)]
    pub t_final: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    /// Smallest step before giving up [default: dt/1024].
    #[arg(long)]
    pub dt_min: Option<f64>,
    /// Largest step [default: dt].
    #[arg(long)]
    pub dt_max: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    pub dt_out: f64,
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Comma-separated times at which to write field snapshots.
    #[arg(long, value_name = "T1,T2,...", value_delimiter = ',')]
    pub snapshots: Vec<f64>,
    /// Check the Brusselator comparison bound min v >= y(t) - 1e-3 for t >= 1.
    #[arg(long)]
    pub check_lower_bound: bool,
}

/// Tolerance and start time of the comparison-bound check.
pub const LOWER_BOUND_TOL: f64 = 1e-3;
pub const LOWER_BOUND_FROM: f64 = 1.0;

struct Failure {
    code: i32,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

fn load_model(src: &ModelArgs) -> Result<(String, ModelSpec), Failure> {
    if let Some(name) = &src.builtin {
        return builtins::by_name(name).map(|m| (name.clone(), m)).ok_or_else(|| {
            usage(format!("unknown built-in `{name}` (expected one of: {})", builtins::NAMES.join(", ")))
        });
    }
    let path = src
        .model
        .as_ref()
        .or(src.path.as_ref())
        .ok_or_else(|| usage("no model given: use --builtin NAME or --model PATH"))?;
    let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let model = parse_model(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    Ok((path.display().to_string(), model))
}

#[derive(Serialize)]
struct CheckReport<'a> {
    model: &'a str,
    status: &'static str,
    sample_box: SampleBox,
    quasi_positivity: Vec<Verdict>,
    pairing: PairingResult,
}

fn cmd_check(args: &CheckArgs, stdout: &mut dyn Write) -> Result<i32, Failure> {
    let (name, model) = load_model(&args.source)?;
    let sample = SampleBox {
        max_value: args.box_max,
        n_samples: args.samples,
        seed: args.seed,
    };
    let qp = check_quasi_positivity(&model, &sample).map_err(|e| usage(e.to_string()))?;
    let pairing = find_pairing(&model, &sample).map_err(|e| usage(e.to_string()))?;
    let violated = qp.iter().any(Verdict::is_counterexample) || !pairing.found;
    let report = CheckReport {
        model: &name,
        status: if violated { "counterexample" } else { "ok" },
        sample_box: sample,
        quasi_positivity: qp,
        pairing,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    match &args.out {
        Some(path) => fs::write(path, json + "\n").map_err(|e| usage(format!("{}: {e}", path.display())))?,
        None => writeln!(stdout, "{json}").map_err(|e| usage(e.to_string()))?,
    }
    Ok(if violated { EXIT_COUNTEREXAMPLE } else { EXIT_OK })
}

/// Writes field snapshots at requested times.
struct Snapshots<'a> {
    dir: &'a Path,
    times: &'a [f64],
    model: &'a ModelSpec,
    error: Option<std::io::Error>,
}

impl Observer for Snapshots<'_> {
    fn observe(&mut self, mesh: &Mesh, state: &State) {
        if self.error.is_some() || !self.times.iter().any(|t| (t - state.t).abs() <= 1e-9 * (1.0 + t.abs())) {
            return;
        }
        let names = self.model.bulk.iter().chain(&self.model.surface);
        for (sp, field) in names.zip(state.fields()) {
            let path = self.dir.join(format!("snapshot_{}_t{}.csv", sp.name, state.t));
            let res = fs::File::create(&path)
                .map(std::io::BufWriter::new)
                .and_then(|mut w| write_field_csv(mesh, field, &mut w).and_then(|_| w.flush()));
            if let Err(e) = res {
                self.error = Some(e);
                return;
            }
        }
    }
}

fn cmd_simulate(args: &SimulateArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, Failure> {
    let (name, mut model) = load_model(&args.source)?;
    if let Some(r) = args.radius {
        model.radius = r;
    }
    let mesh = build_disk_mesh(args.nr, args.ntheta, model.radius).map_err(|e| usage(e.to_string()))?;
    let ctl = StepControl {
        dt_min: args.dt_min.unwrap_or(args.dt / 1024.0),
        dt_max: args.dt_max.unwrap_or(args.dt),
        ..StepControl::new(args.dt)
    };
    ctl.validate().map_err(|e| usage(e.to_string()))?;
    if !(args.t_final > 0.0 && args.dt_out > 0.0) {
        return Err(usage("need -T > 0 and --dt-out > 0"));
    }
    let bound_params = if args.check_lower_bound {
        match (model.param("A"), model.param("B"), model.m()) {
            (Some(a), Some(b), m) if m >= 1 => Some((a, b)),
            _ => return Err(usage("--check-lower-bound needs parameters A and B and a surface species")),
        }
    } else {
        None
    };
    fs::create_dir_all(&args.out).map_err(|e| usage(format!("{}: {e}", args.out.display())))?;

    let mut series = DiagnosticsSeries::new(&model);
    let mut snaps = Snapshots {
        dir: &args.out,
        times: &args.snapshots,
        model: &model,
        error: None,
    };
    let initial = State::initial(&model, &mesh).map_err(|e| usage(e.to_string()))?;
    let mut sim = Simulator::new(&model, &mesh).map_err(|e| usage(e.to_string()))?;
    let result = sim.run_with_stops(
        initial,
        args.t_final,
        args.dt_out,
        &args.snapshots,
        &ctl,
        &mut [&mut series, &mut snaps],
    );
    if let Some(e) = snaps.error {
        return Err(usage(format!("writing snapshots: {e}")));
    }

    let write_outputs = |series: &DiagnosticsSeries, summary: &crate::diagnostics::Summary| -> Result<(), Failure> {
        let io = |e: std::io::Error| usage(format!("{}: {e}", args.out.display()));
        let mut csv = std::io::BufWriter::new(fs::File::create(args.out.join("diagnostics.csv")).map_err(io)?);
        series.write_csv(&mut csv).and_then(|_| csv.flush()).map_err(io)?;
        let json = serde_json::to_string_pretty(summary).expect("summary serializes");
        fs::write(args.out.join("summary.json"), json + "\n").map_err(io)
    };

    let outcome = match result {
        Ok(o) => o,
        Err(e) if e.is_numerical() => {
            write_outputs(&series, &series.summary())?;
            let _ = writeln!(stderr, "error: {name}: {e}");
            return Ok(EXIT_NUMERICAL);
        }
        Err(e) => return Err(usage(e.to_string())),
    };

    let mut summary = series.summary();
    summary.stats = Some(StatsSummary::from(&outcome.stats));
    let mut code = EXIT_OK;
    if let Some((a, b)) = bound_params {
        let v = series.lower_bound_violation(0, a, b, LOWER_BOUND_FROM, LOWER_BOUND_TOL);
        summary.lower_bound_violation = Some(v.is_some());
        if let Some((t, min, y)) = v {
            let _ = writeln!(stderr, "lower bound violated at t = {t}: min v = {min} < y(t) - {LOWER_BOUND_TOL} = {}", y - LOWER_BOUND_TOL);
            code = EXIT_COUNTEREXAMPLE;
        }
    }
    write_outputs(&series, &summary)?;
    for f in &summary.fields {
        let _ = writeln!(stdout, "{}: sup = {:e}", f.name, f.final_values.sup);
    }
    Ok(code)
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(stderr, "{text}") } else { write!(stdout, "{text}") };
            return code;
        }
    };
    let result = match (&cli.dump_builtin, &cli.command) {
        (Some(name), None) => match builtins::by_name(name) {
            Some(m) => {
                let _ = write!(stdout, "{}", render_model(&m));
                Ok(EXIT_OK)
            }
            None => Err(usage(format!("unknown built-in `{name}` (expected one of: {})", builtins::NAMES.join(", ")))),
        },
        (Some(_), Some(_)) => Err(usage("--dump-builtin cannot be combined with a subcommand")),
        (None, Some(Command::Check(a))) => cmd_check(a, stdout),
        (None, Some(Command::Simulate(a))) => cmd_simulate(a, stdout, stderr),
        (None, None) => Err(usage("no command given; try --help")),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            f.code
        }
    }
}

/// Worker count from [`THREADS_ENV`], if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}
