//! Run configuration, error metrics and the file-producing driver used by
//! the command-line front end.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adaptivity::{
    amrs_run, solve_collocation, write_history_csv, AmrsOptions, IndicatorConfig, IndicatorKind, IterationRecord,
    Limits, RefinementState, SolveSettings, StopReason, StoppingRule, DEFAULT_OVERLAP, DEFAULT_SPACING_FRACTION,
};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::{
    make_initial_points, make_initial_points_with, HaltonStream, InitialMode, Point, DEFAULT_PATCH_DIVISOR,
};
use crate::kernels::KernelModel;
use crate::problems::{make_problem, PoissonProblem, ProblemName};
use crate::solver::Solution;

/// Points per axis of the evaluation grid.
pub const EVAL_SIDE: usize = 40;

/// The `EVAL_SIDE × EVAL_SIDE` uniform grid including the boundary, row by row in `y`.
pub fn evaluation_grid() -> Vec<Point> {
    let h = 1.0 / (EVAL_SIDE - 1) as f64;
    (0..EVAL_SIDE)
        .flat_map(|j| (0..EVAL_SIDE).map(move |i| [i as f64 * h, j as f64 * h]))
        .collect()
}

/// Maximum and root-mean-square absolute difference.
pub fn error_norms(approx: &[f64], exact: &[f64]) -> (f64, f64) {
    assert_eq!(approx.len(), exact.len());
    let mut max = 0.0f64;
    let mut sq = 0.0;
    for (a, e) in approx.iter().zip(exact) {
        let d = (a - e).abs();
        max = max.max(d);
        sq += d * d;
    }
    (max, (sq / approx.len() as f64).sqrt())
}

/// `(MAE, RMSE)` of `solution` against the exact solution on [`evaluation_grid`].
pub fn compute_errors(solution: &Solution, problem: &PoissonProblem, exec: Execution) -> Result<(f64, f64)> {
    if !problem.has_exact() {
        return Err(Error::Config(format!("problem {} has no exact solution", problem.name())));
    }
    let grid = evaluation_grid();
    let approx = solution.evaluate(&grid, exec)?;
    let exact: Vec<f64> = grid.iter().map(|&p| problem.exact(p)).collect();
    Ok(error_norms(&approx, &exact))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub problem: ProblemName,
    pub mode: InitialMode,
    pub n_side: usize,
    pub epsilon: f64,
    pub indicator: IndicatorKind,
    pub tau_min: f64,
    pub tau_max: f64,
    pub patches_per_axis: Option<usize>,
    pub patch_divisor: f64,
    pub overlap: f64,
    pub test_multiplier: f64,
    pub spacing_fraction: f64,
    pub skip_single_cover: bool,
    pub max_iterations: usize,
    pub max_points: usize,
    pub stopping: StoppingRule,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: ProblemName::U1,
            mode: InitialMode::Grid,
            n_side: 11,
            epsilon: 3.0,
            indicator: IndicatorKind::InterpolantDisagreement,
            tau_min: 1e-8,
            tau_max: 1e-5,
            patches_per_axis: None,
            patch_divisor: DEFAULT_PATCH_DIVISOR,
            overlap: DEFAULT_OVERLAP,
            test_multiplier: 2.0,
            spacing_fraction: DEFAULT_SPACING_FRACTION,
            skip_single_cover: false,
            max_iterations: 50,
            max_points: 5000,
            stopping: StoppingRule::Default,
            out: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

impl RunConfig {
    /// Sets one field from its textual key and value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let v = value.trim();
        match key.as_str() {
            "problem" => self.problem = v.parse()?,
            "mode" => self.mode = v.parse()?,
            "n_side" => self.n_side = parse(&key, v)?,
            "epsilon" => self.epsilon = parse(&key, v)?,
            "indicator" => self.indicator = v.parse()?,
            "tau_min" => self.tau_min = parse(&key, v)?,
            "tau_max" => self.tau_max = parse(&key, v)?,
            "patches_per_axis" => {
                self.patches_per_axis = if v.is_empty() || v == "auto" { None } else { Some(parse(&key, v)?) }
            }
            "patch_divisor" => self.patch_divisor = parse(&key, v)?,
            "overlap" => self.overlap = parse(&key, v)?,
            "spacing_fraction" => self.spacing_fraction = parse(&key, v)?,
            "skip_single_cover" => self.skip_single_cover = parse(&key, v)?,
            "test_multiplier" => self.test_multiplier = parse(&key, v)?,
            "max_iterations" => self.max_iterations = parse(&key, v)?,
            "max_points" => self.max_points = parse(&key, v)?,
            "stopping" => self.stopping = v.parse()?,
            "out" => self.out = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && !v.is_nan() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        if self.n_side < 3 {
            return Err(Error::Config(format!("n_side must be at least 3, got {}", self.n_side)));
        }
        positive("epsilon", self.epsilon)?;
        if !self.epsilon.is_finite() {
            return Err(Error::Config("epsilon must be finite".into()));
        }
        if self.overlap < 1.0 || !self.overlap.is_finite() {
            return Err(Error::Config(format!("overlap must be at least 1, got {}", self.overlap)));
        }
        positive("patch_divisor", self.patch_divisor)?;
        if !(self.spacing_fraction >= 0.0 && self.spacing_fraction < 1.0) {
            return Err(Error::Config(format!("spacing_fraction must lie in [0, 1), got {}", self.spacing_fraction)));
        }
        if self.patches_per_axis == Some(0) {
            return Err(Error::Config("patches_per_axis must be positive".into()));
        }
        if self.max_iterations == 0 || self.max_points == 0 {
            return Err(Error::Config("limits must be positive".into()));
        }
        self.indicator_config().validate()
    }

    pub fn indicator_config(&self) -> IndicatorConfig {
        IndicatorConfig {
            kind: self.indicator,
            tau_min: self.tau_min,
            tau_max: self.tau_max,
            test_multiplier: self.test_multiplier,
        }
    }

    pub fn settings(&self, exec: Execution) -> Result<SolveSettings> {
        Ok(SolveSettings {
            kernel: KernelModel::matern6(self.epsilon).map_err(|e| Error::Config(e.to_string()))?,
            overlap: self.overlap,
            patches_per_axis: self.patches_per_axis,
            patch_divisor: self.patch_divisor,
            exec,
        })
    }
}

/// Pipeline stage a failure happened in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Setup,
    Adaptive,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Setup => "setup",
            Stage::Adaptive => "adaptive",
            Stage::Output => "output",
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("[{stage}] {source}")]
pub struct RunError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

impl RunError {
    fn at(stage: Stage) -> impl FnOnce(Error) -> RunError {
        move |source| RunError { stage, source }
    }

    /// Process exit code: 2 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.source.is_numerical() {
            2
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_seconds: f64,
    pub iteration_seconds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub problem: ProblemName,
    pub n_interior: usize,
    pub n_boundary: usize,
    pub n_tot: usize,
    pub mae: f64,
    pub rmse: f64,
    pub cn: f64,
    pub iterations: usize,
    pub stop_reason: StopReason,
    pub patches_per_axis: usize,
    pub config: RunConfig,
    pub timings: Timings,
}

/// Everything a run produced, for callers that want more than the report.
#[derive(Debug)]
pub struct RunOutput {
    pub report: RunReport,
    pub history: Vec<RefinementState>,
    pub solution: Solution,
}

/// Executes the adaptive pipeline and, if `config.out` is set, writes the
/// result files there.
pub fn run(config: &RunConfig, exec: Execution) -> std::result::Result<RunOutput, RunError> {
    let started = Instant::now();
    config.validate().map_err(RunError::at(Stage::Config))?;
    let problem = make_problem(config.problem);
    let mut stream = HaltonStream::new();
    let initial = make_initial_points_with(config.n_side, config.mode, &mut stream).map_err(RunError::at(Stage::Setup))?;
    let opts = AmrsOptions {
        indicator: config.indicator_config(),
        settings: config.settings(exec).map_err(RunError::at(Stage::Config))?,
        limits: Limits { max_iterations: config.max_iterations, max_points: config.max_points },
        stopping: config.stopping,
        halton_start: stream.next_index(),
        skip_single_cover: config.skip_single_cover,
        spacing_fraction: config.spacing_fraction,
    };
    let outcome = match amrs_run(&problem, initial, &opts) {
        Ok(o) => o,
        Err(abort) => {
            if let Some(dir) = &config.out {
                // keep what was computed before the failure
                let records: Vec<IterationRecord> = abort.history.iter().map(|s| s.record.clone()).collect();
                let _ = write_iterations(dir, &abort.history, &records);
            }
            return Err(RunError { stage: Stage::Adaptive, source: abort.source });
        }
    };
    let fin = outcome.final_state();
    let (mae, rmse) = compute_errors(&outcome.solution, &problem, exec).map_err(RunError::at(Stage::Adaptive))?;
    let report = RunReport {
        problem: config.problem,
        n_interior: fin.points.n_interior(),
        n_boundary: fin.points.n_boundary(),
        n_tot: fin.points.len(),
        mae,
        rmse,
        cn: fin.record.cn,
        iterations: outcome.history.len(),
        stop_reason: outcome.stop_reason,
        patches_per_axis: fin.record.patches_per_axis,
        config: config.clone(),
        timings: Timings {
            total_seconds: started.elapsed().as_secs_f64(),
            iteration_seconds: outcome.history.iter().map(|s| s.record.seconds).collect(),
        },
    };
    let output = RunOutput { report, history: outcome.history, solution: outcome.solution };
    if let Some(dir) = &config.out {
        write_outputs(dir, &output, &problem, exec).map_err(RunError::at(Stage::Output))?;
    }
    Ok(output)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_iterations(dir: &Path, history: &[RefinementState], records: &[IterationRecord]) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_history_csv(create(dir, "history.csv")?, records)?;
    for s in history {
        let mut w = create(dir, &format!("points_iter_{}.csv", s.k))?;
        s.points.write_csv(&mut w, &s.test)?;
        w.flush()?;
    }
    Ok(())
}

pub fn write_outputs(dir: &Path, output: &RunOutput, problem: &PoissonProblem, exec: Execution) -> Result<()> {
    let records: Vec<IterationRecord> = output.history.iter().map(|s| s.record.clone()).collect();
    write_iterations(dir, &output.history, &records)?;

    let fin = output.history.last().expect("non-empty history");
    let mut w = create(dir, "points_final.csv")?;
    fin.points.write_csv(&mut w, &[])?;
    w.flush()?;

    write_solution_grid(create(dir, "solution_grid.csv")?, &output.solution, problem, exec)?;

    let mut w = create(dir, "report.json")?;
    serde_json::to_writer_pretty(&mut w, &output.report)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// `x,y,u,exact,abs_error` on the evaluation grid.
pub fn write_solution_grid<W: Write>(mut out: W, solution: &Solution, problem: &PoissonProblem, exec: Execution) -> Result<()> {
    let grid = evaluation_grid();
    let values = solution.evaluate(&grid, exec)?;
    writeln!(out, "x,y,u,exact,abs_error")?;
    for (p, u) in grid.iter().zip(&values) {
        let e = problem.exact(*p);
        writeln!(out, "{},{},{:e},{:e},{:e}", p[0], p[1], u, e, (u - e).abs())?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n_side: usize,
    pub n_tot: usize,
    pub patches_per_axis: usize,
    pub mae: f64,
    pub rmse: f64,
    pub cn: f64,
    pub seconds: f64,
}

pub const CONVERGENCE_HEADER: &str = "n_side,N_tot,patches,mae,rmse,cn,seconds";

impl fmt::Display for ConvergenceRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{:e},{:e},{:e},{:.4}",
            self.n_side, self.n_tot, self.patches_per_axis, self.mae, self.rmse, self.cn, self.seconds
        )
    }
}

/// Non-adaptive solves on `n_side × n_side` grids.
pub fn convergence_study(problem: ProblemName, sides: &[usize], settings: &SolveSettings) -> Result<Vec<ConvergenceRow>> {
    let problem = make_problem(problem);
    sides
        .iter()
        .map(|&n| {
            let started = Instant::now();
            let points = make_initial_points(n, InitialMode::Grid)?;
            let s = solve_collocation(&points, &problem, settings)?;
            let (mae, rmse) = compute_errors(&s.solution, &problem, settings.exec)?;
            Ok(ConvergenceRow {
                n_side: n,
                n_tot: points.len(),
                patches_per_axis: s.patches_per_axis,
                mae,
                rmse,
                cn: s.condition,
                seconds: started.elapsed().as_secs_f64(),
            })
        })
        .collect()
}
