//! Per-ACV trajectory planning.
//!
//! Each round the vehicle either hovers inside exactly one cluster's
//! association ball or outside all of them. The planner picks the schedule of
//! associations and the hover points. Schedules are scored by a fairness
//! objective (sum of logs of the accumulated class priorities), subject to a
//! per-window visit budget and a minimum displacement between consecutive
//! rounds.

mod battery;
mod linearize;
mod oracle;
mod position;
mod sca;
mod schedule;

pub use battery::{oracle_instance, OracleInstanceSpec};
pub use linearize::{linearize_h1, linearize_h2, Affine2};
pub use oracle::{oracle_solve, ORACLE_MAX_CLUSTERS, ORACLE_MAX_GRID, ORACLE_MAX_ROUNDS};
pub use position::{nearest_feasible, Disk, HalfPlane};
pub use sca::{optimize, solve, solve_inner, warm_start, ScaState};
pub use schedule::window_of;

use serde::{Deserialize, Serialize};

use crate::datagen::{RoiConfig, SpatialField, TemporalDistribution};
use crate::error::{Error, Result};
use crate::geom::{Point2, Rect};

/// Tunables of the planner, as they appear in experiment configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryParams {
    /// Association radius scale in `(0, 1]`.
    pub zeta: f64,
    /// Minimum displacement between consecutive rounds, meters.
    pub d_min: f64,
    /// Visits allowed per cluster in each window of `C` rounds.
    pub visit_cap: usize,
    pub eps_tol: f64,
    pub max_iters: usize,
    pub precision: f64,
    /// Big-M constant; defaults to the ROI diagonal plus the largest radius.
    #[serde(default)]
    pub big_m: Option<f64>,
}

impl Default for TrajectoryParams {
    fn default() -> Self {
        Self {
            zeta: 0.8,
            d_min: 5.0,
            visit_cap: 2,
            eps_tol: 1e-6,
            max_iters: 10,
            precision: 1e-4,
            big_m: None,
        }
    }
}

impl TrajectoryParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.zeta > 0.0 && self.zeta <= 1.0) {
            return Err(Error::InvalidConfig(format!("zeta = {} must lie in (0, 1]", self.zeta)));
        }
        if !(self.d_min >= 0.0 && self.d_min.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "d_min = {} must be nonnegative",
                self.d_min
            )));
        }
        if !(self.eps_tol > 0.0) {
            return Err(Error::InvalidConfig("eps_tol must be positive".into()));
        }
        if self.max_iters == 0 || !(self.precision > 0.0) {
            return Err(Error::InvalidConfig("max_iters and precision must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryProblem {
    pub rounds: usize,
    pub field: SpatialField,
    pub temporal: TemporalDistribution,
    pub zeta: f64,
    /// Per-cluster radius scalars (meters).
    pub lambda: Vec<f64>,
    pub big_m: f64,
    pub d_min: f64,
    pub visit_cap: usize,
    pub eps_tol: f64,
    pub roi: RoiConfig,
    psi: Vec<Vec<f64>>,
}

impl TrajectoryProblem {
    pub fn new(
        rounds: usize,
        field: SpatialField,
        temporal: TemporalDistribution,
        params: &TrajectoryParams,
        roi: RoiConfig,
    ) -> Result<Self> {
        params.validate()?;
        roi.validate()?;
        field.validate(None)?;
        if temporal.classes() != field.len() {
            return Err(Error::InvalidArgument(format!(
                "{} clusters but {} classes in the temporal model",
                field.len(),
                temporal.classes()
            )));
        }
        let lambda: Vec<f64> = field.clusters.iter().map(|c| c.radius()).collect();
        let max_r = lambda.iter().fold(0.0f64, |m, &l| m.max(params.zeta * l));
        let big_m = params.big_m.unwrap_or(roi.rect().diagonal() + max_r);
        if !(big_m > max_r) {
            return Err(Error::InvalidConfig(format!(
                "big-M {big_m} must exceed the largest radius {max_r}"
            )));
        }
        let psi = temporal.psi_table(rounds);
        Ok(Self {
            rounds,
            field,
            temporal,
            zeta: params.zeta,
            lambda,
            big_m,
            d_min: params.d_min,
            visit_cap: params.visit_cap,
            eps_tol: params.eps_tol,
            roi,
            psi,
        })
    }

    pub fn clusters(&self) -> usize {
        self.field.len()
    }

    pub fn center(&self, c: usize) -> Point2 {
        self.field.clusters[c].mean
    }

    /// Association radius `ζλ_c`.
    pub fn radius(&self, c: usize) -> f64 {
        self.zeta * self.lambda[c]
    }

    pub fn psi(&self, t: usize, c: usize) -> f64 {
        self.psi[t][c]
    }

    pub fn rect(&self) -> Rect {
        self.roi.rect()
    }

    /// Objective of a schedule given as one optional cluster per round.
    pub fn schedule_objective(&self, assignment: &[Option<usize>]) -> f64 {
        let mut acc = vec![0.0; self.clusters()];
        for (t, a) in assignment.iter().enumerate() {
            if let Some(c) = *a {
                acc[c] += self.psi[t][c];
            }
        }
        acc.iter().map(|s| (s + self.eps_tol).ln()).sum()
    }
}

/// Association rule: inside the radius (inclusive) of the nearest qualifying
/// center, ties going to the lower index.
pub fn indicator_rule(q: Point2, problem: &TrajectoryProblem) -> Vec<bool> {
    let mut out = vec![false; problem.clusters()];
    if let Some(c) = associated_cluster(q, problem) {
        out[c] = true;
    }
    out
}

pub fn associated_cluster(q: Point2, problem: &TrajectoryProblem) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for c in 0..problem.clusters() {
        let d = q.dist(problem.center(c));
        if d <= problem.radius(c) && best.is_none_or(|(_, bd)| d < bd) {
            best = Some((c, d));
        }
    }
    best.map(|(c, _)| c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub positions: Vec<Point2>,
    /// `rounds × clusters` association indicators.
    pub indicators: Vec<Vec<bool>>,
    pub objective_value: f64,
}

impl Trajectory {
    pub fn from_assignment(problem: &TrajectoryProblem, positions: Vec<Point2>, assignment: &[Option<usize>]) -> Self {
        let c = problem.clusters();
        let indicators = assignment
            .iter()
            .map(|a| (0..c).map(|k| *a == Some(k)).collect())
            .collect();
        Self {
            positions,
            indicators,
            objective_value: problem.schedule_objective(assignment),
        }
    }

    pub fn rounds(&self) -> usize {
        self.positions.len()
    }

    /// First active cluster per round.
    pub fn assignment(&self) -> Vec<Option<usize>> {
        self.indicators.iter().map(|row| row.iter().position(|&b| b)).collect()
    }
}

/// `Σ_c log(Σ_t 𝕀_c^t ψ_c^t + ε)`.
pub fn objective(traj: &Trajectory, problem: &TrajectoryProblem) -> f64 {
    let mut acc = vec![0.0; problem.clusters()];
    for (t, row) in traj.indicators.iter().enumerate() {
        for (c, &on) in row.iter().enumerate() {
            if on {
                acc[c] += problem.psi(t, c);
            }
        }
    }
    acc.iter().map(|s| (s + problem.eps_tol).ln()).sum()
}

/// Violations of the original (non-linearized) constraints.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeasibilityReport {
    /// `(round, cluster)` pairs outside their active ball.
    pub c2: Vec<(usize, usize)>,
    /// `(round, cluster)` pairs inside a ball they are not associated with.
    pub c3: Vec<(usize, usize)>,
    pub c4: Vec<usize>,
    /// `(window, cluster)` pairs over budget.
    pub c5: Vec<(usize, usize)>,
    /// Rounds `t` with `‖q^{t+1} − q^t‖ < d_min`.
    pub c6: Vec<usize>,
    /// Rounds whose indicators differ from the association rule.
    pub rule: Vec<usize>,
    /// Rounds with a non-finite or out-of-ROI position.
    pub roi: Vec<usize>,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.c2.is_empty()
            && self.c3.is_empty()
            && self.c4.is_empty()
            && self.c5.is_empty()
            && self.c6.is_empty()
            && self.rule.is_empty()
            && self.roi.is_empty()
    }

    pub fn summary(&self) -> String {
        format!(
            "C2 {} / C3 {} / C4 {} / C5 {} / C6 {} / rule {} / roi {}",
            self.c2.len(),
            self.c3.len(),
            self.c4.len(),
            self.c5.len(),
            self.c6.len(),
            self.rule.len(),
            self.roi.len()
        )
    }
}

pub fn check_feasibility(traj: &Trajectory, problem: &TrajectoryProblem) -> FeasibilityReport {
    let mut rep = FeasibilityReport::default();
    let k = problem.clusters();
    let m = problem.big_m;
    let rect = problem.rect();
    let mut window_counts: std::collections::BTreeMap<(usize, usize), usize> = Default::default();
    for (t, (q, row)) in traj.positions.iter().zip(&traj.indicators).enumerate() {
        if !q.is_finite() || !rect.contains(*q) {
            rep.roi.push(t);
        }
        if row.iter().filter(|&&b| b).count() > 1 {
            rep.c4.push(t);
        }
        for c in 0..k {
            let gap = q.dist(problem.center(c)) - problem.radius(c);
            let on = if row[c] { 1.0 } else { 0.0 };
            if gap > m * (1.0 - on) {
                rep.c2.push((t, c));
            }
            if gap < -m * on {
                rep.c3.push((t, c));
            }
            if row[c] {
                if let Some(w) = window_of(t, k, problem.rounds) {
                    *window_counts.entry((w, c)).or_default() += 1;
                }
            }
        }
        if indicator_rule(*q, problem) != *row {
            rep.rule.push(t);
        }
    }
    for ((w, c), n) in window_counts {
        if n > problem.visit_cap {
            rep.c5.push((w, c));
        }
    }
    for t in 0..traj.positions.len().saturating_sub(1) {
        if traj.positions[t + 1].dist(traj.positions[t]) < problem.d_min {
            rep.c6.push(t);
        }
    }
    rep
}
