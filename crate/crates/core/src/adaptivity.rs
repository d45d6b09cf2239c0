//! Error indicators and the adaptive solve / estimate / add / remove loop.
//!
//! Each iteration solves on the current nodes, draws fresh Halton test
//! points, and evaluates an indicator at them. Test points whose indicator
//! exceeds `tau_max` become new interior nodes; every test point below
//! `tau_min` nominates its nearest interior node for removal. The boundary
//! ring is then regenerated to match the new interior count.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_global, Discretization};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::{
    build_covering, distance, patches_per_axis_for, DEFAULT_PATCH_DIVISOR, HaltonStream, Point, PointSet, SpatialIndex,
};
use crate::harness::compute_errors;
use crate::kernels::KernelModel;
use crate::problems::PoissonProblem;
use crate::solver::{solve, Solution};

/// Minimum distance between collocation points.
pub const SEPARATION: f64 = 1e-4;
/// Default spacing-relative separation for added points, see [`AmrsOptions::spacing_fraction`].
pub const DEFAULT_SPACING_FRACTION: f64 = 0.3;
/// Default ratio of patch radius to half the patch-centre diagonal.
pub const DEFAULT_OVERLAP: f64 = 2.0;
/// Removal never takes the interior below this many points.
pub const MIN_INTERIOR: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorKind {
    /// Blended solution against the local interpolant of a single patch.
    InterpolantDisagreement,
    /// Solution on the current nodes against one on a finer superset.
    CoarseFine,
}

impl FromStr for IndicatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "interp" | "interpolant" => Ok(IndicatorKind::InterpolantDisagreement),
            "coarse-fine" | "coarse_fine" => Ok(IndicatorKind::CoarseFine),
            other => Err(Error::Config(format!("unknown indicator `{other}`"))),
        }
    }
}

impl fmt::Display for IndicatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IndicatorKind::InterpolantDisagreement => "interp",
            IndicatorKind::CoarseFine => "coarse-fine",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndicatorConfig {
    pub kind: IndicatorKind,
    pub tau_min: f64,
    pub tau_max: f64,
    /// Test points drawn per interior node.
    pub test_multiplier: f64,
}

impl Default for IndicatorConfig {
    fn default() -> Self {
        Self { kind: IndicatorKind::InterpolantDisagreement, tau_min: 1e-8, tau_max: 1e-5, test_multiplier: 2.0 }
    }
}

impl IndicatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_min >= 0.0 && self.tau_min < self.tau_max) {
            return Err(Error::Config(format!(
                "need 0 <= tau_min < tau_max, got tau_min={} tau_max={}",
                self.tau_min, self.tau_max
            )));
        }
        if !(self.test_multiplier > 0.0 && self.test_multiplier.is_finite()) {
            return Err(Error::Config("test_multiplier must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StoppingRule {
    /// Stop when nothing is added and nothing is removed.
    Default,
    /// Stop as soon as nothing is removed.
    Paper,
}

impl FromStr for StoppingRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "default" => Ok(StoppingRule::Default),
            "paper" => Ok(StoppingRule::Paper),
            other => Err(Error::Config(format!("unknown stopping rule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limits {
    pub max_iterations: usize,
    pub max_points: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self { max_iterations: 50, max_points: 5000 }
    }
}

/// Discretization settings shared by every solve of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveSettings {
    pub kernel: KernelModel,
    pub overlap: f64,
    /// Fixed patch grid; `None` picks [`patches_per_axis_for`] per solve.
    pub patches_per_axis: Option<usize>,
    /// Divisor of `√N` in the automatic patch grid size.
    pub patch_divisor: f64,
    pub exec: Execution,
}

impl Default for SolveSettings {
    fn default() -> Self {
        Self {
            kernel: KernelModel::matern6(3.0).expect("valid shape"),
            overlap: DEFAULT_OVERLAP,
            patches_per_axis: None,
            patch_divisor: DEFAULT_PATCH_DIVISOR,
            exec: Execution::default(),
        }
    }
}

/// Result of one collocation solve.
#[derive(Debug)]
pub struct CollocationSolve {
    pub disc: Discretization,
    pub solution: Solution,
    pub condition: f64,
    pub patches_per_axis: usize,
}

/// Covers, assembles and solves on `points`. With no fixed patch grid, the
/// grid is coarsened until every patch holds at least three points.
pub fn solve_collocation(points: &PointSet, problem: &PoissonProblem, settings: &SolveSettings) -> Result<CollocationSolve> {
    let mut per_axis = settings.patches_per_axis.unwrap_or_else(|| patches_per_axis_for(points.len(), settings.patch_divisor));
    let covering = loop {
        match build_covering(points, per_axis, settings.overlap) {
            Ok(c) => break c,
            Err(Error::SparsePatch { .. }) if settings.patches_per_axis.is_none() && per_axis > 1 => per_axis -= 1,
            Err(e) => return Err(e),
        }
    };
    let disc = Discretization::new(points.clone(), covering.clone(), settings.kernel, settings.exec)?;
    let system = assemble_global(&disc, problem)?;
    let solved = solve(&disc, Arc::new(covering), &system, settings.exec)?;
    Ok(CollocationSolve { disc, solution: solved.solution, condition: solved.condition, patches_per_axis: per_axis })
}

/// Patch whose centre is nearest to `y` among `active` (ties to the lower index).
fn nearest_center(solution: &Solution, active: &[usize], y: Point) -> usize {
    let patches = solution.covering.patches();
    let mut best = active[0];
    let mut best_d = distance(y, patches[best].center);
    for &j in &active[1..] {
        let d = distance(y, patches[j].center);
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

/// `|ũ(y) - ũ_j(y)|` where `ũ_j` is the local interpolant of the nodal
/// solution on the patch with the nearest centre among those containing `y`.
pub fn indicator_interpolant(solution: &Solution, test: &[Point], exec: Execution) -> Result<Vec<f64>> {
    Ok(indicator_interpolant_with_coverage(solution, test, exec)?.into_iter().map(|(e, _)| e).collect())
}

/// As [`indicator_interpolant`], paired with the number of patches whose
/// weight is positive at each test point. With a single active patch the
/// indicator is zero by construction.
pub fn indicator_interpolant_with_coverage(
    solution: &Solution,
    test: &[Point],
    exec: Execution,
) -> Result<Vec<(f64, usize)>> {
    exec.try_map(test, |&y| {
        let w = crate::weights::evaluate_weights(y, &solution.covering)?;
        let chosen = nearest_center(solution, &w.active, y);
        let mut blended = 0.0;
        let mut own = 0.0;
        for (&j, &wj) in w.active.iter().zip(&w.values) {
            let v = solution.local_value(j, y);
            blended += wj * v;
            if j == chosen {
                own = v;
            }
        }
        Ok(((blended - own).abs(), w.len()))
    })
}

/// Coarse nodes plus the candidates that keep `min_dist` from the boundary
/// lines, the coarse nodes and each other.
pub fn refine_with(coarse: &PointSet, candidates: &[Point], min_dist: f64) -> Result<PointSet> {
    let accepted = separated_additions(coarse, candidates.iter().copied(), min_dist);
    let mut interior = coarse.interior().to_vec();
    interior.extend(accepted);
    PointSet::new(interior, coarse.boundary().to_vec())
}

fn separated_additions(existing: &PointSet, candidates: impl Iterator<Item = Point>, min_dist: f64) -> Vec<Point> {
    let all = existing.to_vec();
    let index = SpatialIndex::new(&all, (1.0 / (all.len().max(1) as f64).sqrt()).max(min_dist));
    let mut accepted: Vec<Point> = Vec::new();
    for y in candidates {
        let wall = y[0].min(1.0 - y[0]).min(y[1]).min(1.0 - y[1]);
        if wall < min_dist {
            continue;
        }
        if !index.within(y, min_dist).is_empty() {
            continue;
        }
        if accepted.iter().any(|&a| distance(a, y) < min_dist) {
            continue;
        }
        accepted.push(y);
    }
    accepted
}

/// `|ũ_fine - ũ_coarse|` at every coarse node (global coarse order), where
/// `fine` must contain `coarse` with the coarse interior listed first and the
/// same boundary.
pub fn coarse_fine_on(
    problem: &PoissonProblem,
    coarse: &PointSet,
    fine: &PointSet,
    settings: &SolveSettings,
) -> Result<Vec<f64>> {
    let ni = coarse.n_interior();
    if fine.n_interior() < ni || fine.interior()[..ni] != *coarse.interior() || fine.boundary() != coarse.boundary() {
        return Err(Error::InvalidArgument("fine set must extend the coarse set".into()));
    }
    let c = solve_collocation(coarse, problem, settings)?;
    let f = if fine == coarse {
        return Ok(vec![0.0; coarse.len()]);
    } else {
        solve_collocation(fine, problem, settings)?
    };
    let fine_ni = fine.n_interior();
    Ok((0..coarse.len())
        .map(|k| {
            let kf = if k < ni { k } else { fine_ni + (k - ni) };
            (f.solution.nodal[kf] - c.solution.nodal[k]).abs()
        })
        .collect())
}

/// Distance added points keep from everything else when `n_interior`
/// interior points are present.
pub fn addition_distance(n_interior: usize, spacing_fraction: f64) -> f64 {
    SEPARATION.max(spacing_fraction / (n_interior.max(1) as f64).sqrt())
}

/// Compares the solution on `coarse` with one on `coarse` plus one Halton
/// point per interior node drawn from `stream`, filtered with
/// [`addition_distance`] at the default spacing fraction.
pub fn indicator_coarse_fine(
    problem: &PoissonProblem,
    coarse: &PointSet,
    stream: &mut HaltonStream,
    settings: &SolveSettings,
) -> Result<Vec<f64>> {
    let candidates = stream.draw(coarse.n_interior());
    let fine = refine_with(coarse, &candidates, addition_distance(coarse.n_interior(), DEFAULT_SPACING_FRACTION))?;
    coarse_fine_on(problem, coarse, &fine, settings)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// No additions and no removals.
    Converged,
    /// No removals (the stricter-looking but earlier literal rule).
    NoRemovals,
    MaxIterations,
    MaxPoints,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Converged => "converged",
            StopReason::NoRemovals => "no_removals",
            StopReason::MaxIterations => "max_iterations",
            StopReason::MaxPoints => "max_points",
        })
    }
}

/// Metrics of one iteration, one row of `history.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub n_interior: usize,
    pub n_boundary: usize,
    pub n_total: usize,
    pub added: usize,
    pub removed: usize,
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub cn: f64,
    pub seconds: f64,
    pub patches_per_axis: usize,
    pub stop_reason: Option<StopReason>,
}

pub const HISTORY_HEADER: &str = "k,N_i,N_b,N_tot,added,removed,mae,rmse,cn,seconds,stop_reason";

pub fn write_history_csv<W: Write>(mut out: W, records: &[IterationRecord]) -> Result<()> {
    writeln!(out, "{HISTORY_HEADER}")?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{:e},{:.6},{}",
            r.k,
            r.n_interior,
            r.n_boundary,
            r.n_total,
            r.added,
            r.removed,
            opt(r.mae),
            opt(r.rmse),
            r.cn,
            r.seconds,
            r.stop_reason.map(|s| s.to_string()).unwrap_or_default()
        )?;
    }
    Ok(())
}

/// Everything known about one iteration.
#[derive(Debug, Clone)]
pub struct RefinementState {
    pub k: usize,
    pub points: PointSet,
    pub test: Vec<Point>,
    pub indicator: Vec<f64>,
    /// Test points accepted as new interior nodes.
    pub add_set: Vec<Point>,
    /// Interior indices (into `points.interior()`) removed after this iteration.
    pub remove_set: Vec<usize>,
    pub record: IterationRecord,
}

#[derive(Debug, Clone)]
pub struct AmrsOptions {
    pub indicator: IndicatorConfig,
    pub settings: SolveSettings,
    pub limits: Limits,
    pub stopping: StoppingRule,
    /// Test points come from a Halton stream starting here.
    pub halton_start: u64,
    /// Ignore test points covered by a single patch, where the interpolant
    /// indicator vanishes identically.
    pub skip_single_cover: bool,
    /// Added points also keep `spacing_fraction / √N_i` from every other
    /// point and from the boundary lines.
    pub spacing_fraction: f64,
}

impl Default for AmrsOptions {
    fn default() -> Self {
        Self {
            indicator: IndicatorConfig::default(),
            settings: SolveSettings::default(),
            limits: Limits::default(),
            stopping: StoppingRule::Default,
            halton_start: 1,
            skip_single_cover: false,
            spacing_fraction: DEFAULT_SPACING_FRACTION,
        }
    }
}

#[derive(Debug)]
pub struct AmrsOutcome {
    pub solution: Solution,
    pub history: Vec<RefinementState>,
    pub stop_reason: StopReason,
}

impl AmrsOutcome {
    pub fn final_state(&self) -> &RefinementState {
        self.history.last().expect("at least one iteration")
    }

    pub fn records(&self) -> Vec<IterationRecord> {
        self.history.iter().map(|s| s.record.clone()).collect()
    }
}

/// Failure inside the loop, with the iterations completed before it.
#[derive(Debug, thiserror::Error)]
#[error("adaptive run failed at iteration {k}: {source}")]
pub struct AmrsAbort {
    pub k: usize,
    #[source]
    pub source: Error,
    pub history: Vec<RefinementState>,
}

fn key(p: Point) -> [u64; 2] {
    [p[0].to_bits(), p[1].to_bits()]
}

pub fn amrs_run(problem: &PoissonProblem, initial: PointSet, opts: &AmrsOptions) -> std::result::Result<AmrsOutcome, AmrsAbort> {
    let mut history: Vec<RefinementState> = Vec::new();
    let abort = |k: usize, source: Error, history: Vec<RefinementState>| AmrsAbort { k, source, history };
    if let Err(e) = opts.indicator.validate() {
        return Err(abort(0, e, history));
    }
    if opts.limits.max_iterations == 0 || opts.limits.max_points == 0 {
        return Err(abort(0, Error::Config("limits must be positive".into()), history));
    }
    let exec = opts.settings.exec;
    let mut stream = HaltonStream::starting_at(opts.halton_start);
    let mut points = initial;
    let mut protected: HashSet<[u64; 2]> = HashSet::new();

    for k in 1.. {
        let started = Instant::now();
        let step = (|| -> Result<_> {
            let solved = solve_collocation(&points, problem, &opts.settings)?;
            let errors = if problem.has_exact() {
                Some(compute_errors(&solved.solution, problem, exec)?)
            } else {
                None
            };
            let n_test = (opts.indicator.test_multiplier * points.n_interior() as f64).ceil() as usize;
            let test = stream.draw(n_test);
            let min_dist = addition_distance(points.n_interior(), opts.spacing_fraction);
            let indicator = match opts.indicator.kind {
                IndicatorKind::InterpolantDisagreement => {
                    let with_cover = indicator_interpolant_with_coverage(&solved.solution, &test, exec)?;
                    with_cover
                        .into_iter()
                        .map(|(e, cover)| if cover < 2 && opts.skip_single_cover { f64::NAN } else { e })
                        .collect()
                }
                IndicatorKind::CoarseFine => {
                    // one fine point per interior node, as in the standalone indicator
                    let fine = refine_with(&points, &test[..points.n_interior().min(test.len())], min_dist)?;
                    let fine_solve = solve_collocation(&fine, problem, &opts.settings)?;
                    let a = fine_solve.solution.evaluate(&test, exec)?;
                    let b = solved.solution.evaluate(&test, exec)?;
                    a.iter().zip(&b).map(|(x, y)| (x - y).abs()).collect()
                }
            };
            Ok((solved, errors, test, indicator, min_dist))
        })();
        let (solved, errors, test, indicator, min_dist) = match step {
            Ok(v) => v,
            Err(e) => return Err(abort(k, e, history)),
        };

        let cfg = &opts.indicator;
        let add_set = separated_additions(
            &points,
            test.iter().zip(&indicator).filter(|(_, &e)| e > cfg.tau_max).map(|(&y, _)| y),
            min_dist,
        );

        let interior_index = SpatialIndex::new(
            points.interior(),
            (1.0 / (points.n_interior().max(1) as f64).sqrt()).max(SEPARATION),
        );
        let mut nominated = BTreeSet::new();
        for (&y, &e) in test.iter().zip(&indicator) {
            if e < cfg.tau_min {
                if let Some((i, _)) = interior_index.nearest(y) {
                    if !protected.contains(&key(points.interior()[i])) {
                        nominated.insert(i);
                    }
                }
            }
        }
        let budget = (points.n_interior() + add_set.len()).saturating_sub(MIN_INTERIOR);
        let remove_set: Vec<usize> = nominated.into_iter().take(budget).collect();

        let new_interior = points.n_interior() + add_set.len() - remove_set.len();
        let new_total = new_interior + crate::geometry::boundary_count(new_interior);
        let stop_reason = match opts.stopping {
            StoppingRule::Default if add_set.is_empty() && remove_set.is_empty() => Some(StopReason::Converged),
            StoppingRule::Paper if remove_set.is_empty() => Some(StopReason::NoRemovals),
            _ if k >= opts.limits.max_iterations => Some(StopReason::MaxIterations),
            _ if new_total > opts.limits.max_points => Some(StopReason::MaxPoints),
            _ => None,
        };

        let record = IterationRecord {
            k,
            n_interior: points.n_interior(),
            n_boundary: points.n_boundary(),
            n_total: points.len(),
            added: if stop_reason.is_some() { 0 } else { add_set.len() },
            removed: if stop_reason.is_some() { 0 } else { remove_set.len() },
            mae: errors.map(|e| e.0),
            rmse: errors.map(|e| e.1),
            cn: solved.condition,
            seconds: started.elapsed().as_secs_f64(),
            patches_per_axis: solved.patches_per_axis,
            stop_reason,
        };
        let state = RefinementState {
            k,
            points: points.clone(),
            test,
            indicator,
            add_set: add_set.clone(),
            remove_set: remove_set.clone(),
            record,
        };
        history.push(state);

        if let Some(stop_reason) = stop_reason {
            return Ok(AmrsOutcome { solution: solved.solution, history, stop_reason });
        }

        let removed: HashSet<usize> = remove_set.into_iter().collect();
        let mut interior: Vec<Point> = points
            .interior()
            .iter()
            .enumerate()
            .filter(|(i, _)| !removed.contains(i))
            .map(|(_, &p)| p)
            .collect();
        interior.extend_from_slice(&add_set);
        protected = add_set.iter().map(|&p| key(p)).collect();
        points = match PointSet::with_boundary_ring(interior) {
            Ok(p) => p,
            Err(e) => return Err(abort(k, e, history)),
        };
    }
    unreachable!("the loop only exits by returning")
}
