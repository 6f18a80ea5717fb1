use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lexispray_core::scenario::{
    run_continuous_with, run_selective, write_selective, write_trace, LoadedScenario, QpRecord, RunStatus, TraceFormat,
};
use lexispray_core::{Error, KinematicChain, Termination};

/// Prioritized spraying control and inverse kinematics on serial arms.
#[derive(Parser)]
#[command(name = "lexispray", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a continuous-spraying scenario and write its trace.
    Spray {
        scenario: PathBuf,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Dump every QP of every step as JSON into this directory.
        #[arg(long)]
        debug_qp: Option<PathBuf>,
    },
    /// Run a selective-spraying IK scenario and write its reports.
    Ik {
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Seed for the random target batch, overriding the scenario's.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Validate a chain file and print its size and reach.
    Check { chain: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for TraceFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => TraceFormat::Csv,
            Format::Json => TraceFormat::Json,
        }
    }
}

enum Failure {
    Validation(String),
    Solver(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Solver(_) => 2,
            Failure::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Solver(m) | Failure::Io(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io { .. } => Failure::Io(e.to_string()),
            Error::Infeasible { .. } | Error::InvalidState(_) => Failure::Solver(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

/// Writes through `emit` to `out`, or to stdout when no path is given.
fn emit(out: Option<&Path>, emit: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), Failure> {
    match out {
        Some(path) => {
            let file = File::create(path).map_err(|e| io_failure(path, e))?;
            let mut w = BufWriter::new(file);
            emit(&mut w).and_then(|_| w.flush()).map_err(|e| io_failure(path, e))
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            emit(&mut w).and_then(|_| w.flush()).map_err(|e| Failure::Io(format!("stdout: {e}")))
        }
    }
}

/// Collects the QPs of one step and writes them as `step_NNNNN.json`.
struct QpDump {
    dir: PathBuf,
    step: usize,
    records: Vec<QpRecord>,
    error: Option<Failure>,
}

impl QpDump {
    fn push(&mut self, record: QpRecord) {
        if record.step != self.step {
            self.flush();
            self.step = record.step;
        }
        self.records.push(record);
    }

    fn flush(&mut self) {
        if self.records.is_empty() || self.error.is_some() {
            return;
        }
        let path = self.dir.join(format!("step_{:05}.json", self.step));
        let result = File::create(&path).and_then(|f| {
            let mut w = BufWriter::new(f);
            serde_json::to_writer_pretty(&mut w, &self.records)?;
            w.flush()
        });
        if let Err(e) = result {
            self.error = Some(io_failure(&path, e));
        }
        self.records.clear();
    }
}

fn spray(scenario: &Path, out: Option<&Path>, format: Format, debug_qp: Option<&Path>) -> Result<(), Failure> {
    let loaded = LoadedScenario::from_file(scenario)?;
    let mut dump = match debug_qp {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
            Some(QpDump {
                dir: dir.to_path_buf(),
                step: 0,
                records: Vec::new(),
                error: None,
            })
        }
        None => None,
    };
    let run = match dump.as_mut() {
        Some(d) => run_continuous_with(&loaded, Some(&mut |r| d.push(r)))?,
        None => run_continuous_with(&loaded, None)?,
    };
    if let Some(mut d) = dump {
        d.flush();
        if let Some(e) = d.error {
            return Err(e);
        }
    }
    let dof = loaded.chain.dof();
    emit(out, |w| write_trace(&run.trace, dof, format.into(), &mut { w }))?;
    match run.status {
        RunStatus::Completed => {
            eprintln!("{} steps in {:.3} s", run.trace.len(), run.wall_time);
            Ok(())
        }
        RunStatus::Truncated { t, reason, .. } => Err(Failure::Solver(format!("trace truncated at t = {t}: {reason}"))),
    }
}

fn ik(scenario: &Path, out: Option<&Path>, format: Format, seed: Option<u64>) -> Result<(), Failure> {
    let loaded = LoadedScenario::from_file(scenario)?;
    let run = run_selective(&loaded, seed)?;
    emit(out, |w| write_selective(&run, format.into(), &mut { w }))?;
    for g in &run.guesses {
        let errors: Vec<String> = g.report.per_task_error.iter().map(|t| format!("{:.3e}", t.error)).collect();
        eprintln!(
            "guess {}: {:?} after {} iterations, errors [{}]",
            g.guess,
            g.report.termination,
            g.report.iterations,
            errors.join(", ")
        );
    }
    if let Some(b) = &run.batch {
        eprintln!("batch seed {}: {}/{} reached", b.seed, b.successes, b.count);
    }
    let failed = run
        .guesses
        .iter()
        .map(|g| &g.report)
        .chain(run.batch.iter().flat_map(|b| b.solves.iter().map(|s| &s.report)))
        .filter(|r| r.termination == Termination::SolverFailed)
        .count();
    if failed > 0 {
        return Err(Failure::Solver(format!("{failed} solve(s) hit an infeasible step")));
    }
    Ok(())
}

fn check(path: &Path) -> Result<(), Failure> {
    let chain = KinematicChain::from_json_file(path)?;
    let frames: Vec<&str> = chain.frames().keys().map(String::as_str).collect();
    println!("dof: {}", chain.dof());
    println!("reach: {:.4} m", chain.reach());
    println!("frames: {}", frames.join(", "));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Spray {
            scenario,
            out,
            format,
            debug_qp,
        } => spray(scenario, out.as_deref(), *format, debug_qp.as_deref()),
        Command::Ik {
            scenario,
            out,
            format,
            seed,
        } => ik(scenario, out.as_deref(), *format, *seed),
        Command::Check { chain } => check(chain),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
