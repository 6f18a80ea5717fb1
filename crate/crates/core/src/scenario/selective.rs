//! Selective spraying: prioritized IK from each initial guess, plus batches
//! of random reachable full-pose targets.

use std::fmt::Write as _;
use std::io::Write;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{LoadedScenario, Mode, TraceFormat};
use crate::error::{Error, Result};
use crate::pik::{solve_pik, IkReport};
use crate::tasks::{Task, TaskType};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuessReport {
    pub guess: usize,
    pub q_initial: Vec<f64>,
    pub report: IkReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSolve {
    /// Configuration whose pose was used as the target.
    pub q_target: Vec<f64>,
    /// m
    pub position_error: f64,
    /// rad
    pub orientation_error: f64,
    pub success: bool,
    /// Initial guesses tried; the report belongs to the last one.
    pub attempts: usize,
    pub report: IkReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub seed: u64,
    pub count: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub solves: Vec<BatchSolve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectiveRun {
    pub guesses: Vec<GuessReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch: Option<BatchReport>,
}

/// Runs the task stack from every initial guess, then the random batch if
/// one is configured. `seed` overrides the batch seed.
pub fn run_selective(loaded: &LoadedScenario, seed: Option<u64>) -> Result<SelectiveRun> {
    let s = &loaded.scenario;
    if s.mode != Mode::SelectiveIk {
        return Err(Error::Validation("scenario is not a selective_ik run".into()));
    }
    s.validate_with(&loaded.chain)?;
    let params = s.pik_params.unwrap_or_default();
    let tasks = loaded.tasks()?;

    let guesses = s
        .initial_guesses
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            let report = solve_pik(&loaded.chain, &DVector::from_column_slice(g), &tasks, &params)?;
            Ok(GuessReport {
                guess: i,
                q_initial: g.clone(),
                report,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let batch = match &s.random_batch {
        Some(b) => {
            let seed = seed.unwrap_or(b.seed);
            let targets = random_configurations(loaded, b.count, seed);
            let starts: Vec<DVector<f64>> = s.initial_guesses.iter().map(|g| DVector::from_column_slice(g)).collect();
            let solves = targets
                .par_iter()
                .map(|qt| solve_batch_target(loaded, &b.frame, qt, &starts, &params, b.success_tol))
                .collect::<Result<Vec<_>>>()?;
            let successes = solves.iter().filter(|r| r.success).count();
            Some(BatchReport {
                seed,
                count: b.count,
                successes,
                success_rate: successes as f64 / b.count as f64,
                solves,
            })
        }
        None => None,
    };
    Ok(SelectiveRun { guesses, batch })
}

/// Uniform samples inside the position limits; unbounded joints use ±π.
fn random_configurations(loaded: &LoadedScenario, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let limits = loaded.chain.position_limits();
    (0..count)
        .map(|_| {
            DVector::from_iterator(
                limits.len(),
                limits.iter().map(|l| {
                    let lo = l.lo.max(-std::f64::consts::PI);
                    let hi = l.hi.min(std::f64::consts::PI);
                    rng.random_range(lo..=hi)
                }),
            )
        })
        .collect()
}

/// Solves from each start in turn until one reaches the target. Without a
/// success the attempt with the smallest position error is reported.
fn solve_batch_target(
    loaded: &LoadedScenario,
    frame: &str,
    q_target: &DVector<f64>,
    starts: &[DVector<f64>],
    params: &crate::pik::PikParams,
    success_tol: f64,
) -> Result<BatchSolve> {
    let chain = &loaded.chain;
    let target = chain.forward_kinematics(q_target, frame)?;
    let task = Task::from(TaskType::FramePose {
        frame: frame.to_string(),
        target,
    });
    let mut best: Option<BatchSolve> = None;
    for (i, q0) in starts.iter().enumerate() {
        let report = solve_pik(chain, q0, std::slice::from_ref(&task), params)?;
        let reached = chain.forward_kinematics(&DVector::from_column_slice(&report.q_final), frame)?;
        let position_error = (reached.position - target.position).norm();
        let solve = BatchSolve {
            q_target: q_target.iter().copied().collect(),
            position_error,
            orientation_error: reached.rotation.angle_to(&target.rotation),
            success: position_error < success_tol,
            attempts: i + 1,
            report,
        };
        if solve.success {
            return Ok(solve);
        }
        if best.as_ref().is_none_or(|b| position_error < b.position_error) {
            best = Some(BatchSolve { attempts: i + 1, ..solve });
        }
    }
    let mut best = best.expect("at least one initial guess");
    best.attempts = starts.len();
    Ok(best)
}

/// Writes a selective run. The CSV form has one row per solve:
/// `kind,index,attempts,termination,iterations,polished,position_error,orientation_error,e0..,q0..`.
/// `kind` is `guess` or `batch`; `e*` are the per-task raw errors and the
/// batch error columns are empty for guess rows. Wall time is left out so
/// identical runs give identical bytes; the JSON form keeps it.
pub fn write_selective(run: &SelectiveRun, format: TraceFormat, out: &mut impl Write) -> std::io::Result<()> {
    if format == TraceFormat::Json {
        serde_json::to_writer_pretty(&mut *out, run)?;
        return writeln!(out);
    }
    let reports = run
        .guesses
        .iter()
        .map(|g| &g.report)
        .chain(run.batch.iter().flat_map(|b| b.solves.iter().map(|s| &s.report)));
    let tasks = reports.clone().map(|r| r.per_task_error.len()).max().unwrap_or(0);
    let dof = reports.map(|r| r.q_final.len()).max().unwrap_or(0);

    let mut header = String::from("kind,index,attempts,termination,iterations,polished,position_error,orientation_error");
    (0..tasks).for_each(|i| write!(header, ",e{i}").unwrap());
    (0..dof).for_each(|i| write!(header, ",q{i}").unwrap());
    writeln!(out, "{header}")?;

    let row = |kind: &str, index: usize, attempts: usize, r: &IkReport, batch_errors: Option<(f64, f64)>| {
        let mut line = format!(
            "{kind},{index},{attempts},{:?},{},{}",
            r.termination,
            r.iterations,
            u8::from(r.polished)
        );
        match batch_errors {
            Some((p, o)) => write!(line, ",{p:.8e},{o:.8e}").unwrap(),
            None => line.push_str(",,"),
        }
        for i in 0..tasks {
            match r.per_task_error.get(i) {
                Some(t) => write!(line, ",{:.8e}", t.error).unwrap(),
                None => line.push(','),
            }
        }
        for v in &r.q_final {
            write!(line, ",{v:.8e}").unwrap();
        }
        line
    };
    for g in &run.guesses {
        writeln!(out, "{}", row("guess", g.guess, 1, &g.report, None))?;
    }
    if let Some(b) = &run.batch {
        for (i, s) in b.solves.iter().enumerate() {
            let errors = Some((s.position_error, s.orientation_error));
            writeln!(out, "{}", row("batch", i, s.attempts, &s.report, errors))?;
        }
    }
    Ok(())
}
