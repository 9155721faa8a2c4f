use super::linearize::{linearize_h1, linearize_h2};
use super::position::{nearest_feasible, Disk, HalfPlane};
use super::schedule::{opt_index, opt_value, realizes, Margins, ScheduleSpace};
use super::{associated_cluster, check_feasibility, FeasibilityReport, Trajectory, TrajectoryProblem};
use crate::error::{Error, Result};
use crate::geom::Point2;

/// Bookkeeping of the successive-approximation loop.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaState {
    pub iterate_index: usize,
    pub anchor_positions: Vec<Point2>,
    pub objective_history: Vec<f64>,
    pub precision: f64,
    pub max_iters: usize,
    /// Exact-constraint check of the returned trajectory.
    pub report: FeasibilityReport,
}

/// Initial anchors: a searched schedule realized exactly on candidate points.
pub fn warm_start(problem: &TrajectoryProblem) -> Result<Trajectory> {
    let k = problem.clusters();
    let t_len = problem.rounds;
    if t_len == 0 {
        return Ok(Trajectory::from_assignment(problem, Vec::new(), &[]));
    }
    let space = ScheduleSpace::new(problem);
    if t_len > 1 && !space.compat.iter().flatten().any(|&b| b) {
        return Err(Error::Infeasible(format!(
            "no two admissible points of the ROI are {} m apart",
            problem.d_min
        )));
    }
    let mut forbidden = vec![vec![false; k + 1]; t_len];
    for _ in 0..=(t_len * (k + 1)) {
        let Some(sched) = space.search(&forbidden) else { break };
        match space.realize(&sched) {
            Ok(pos) => {
                let a: Vec<Option<usize>> = sched.iter().map(|&o| opt_value(o, k)).collect();
                return Ok(Trajectory::from_assignment(problem, pos, &a));
            }
            Err(t) => {
                forbidden[t][sched[t]] = true;
                if sched[t] == k && t > 0 {
                    forbidden[t - 1][sched[t - 1]] = true;
                }
            }
        }
    }
    Err(Error::Infeasible(
        "no association schedule admits a step chain satisfying d_min".into(),
    ))
}

struct Linearized<'a> {
    problem: &'a TrajectoryProblem,
    anchors: &'a [Point2],
    margins: Margins,
    planes_box: [HalfPlane; 4],
}

impl<'a> Linearized<'a> {
    fn new(problem: &'a TrajectoryProblem, anchors: &'a [Point2]) -> Self {
        let r = problem.rect();
        let planes_box = [
            HalfPlane {
                normal: Point2::new(1.0, 0.0),
                offset: r.min.x,
            },
            HalfPlane {
                normal: Point2::new(-1.0, 0.0),
                offset: -r.max.x,
            },
            HalfPlane {
                normal: Point2::new(0.0, 1.0),
                offset: r.min.y,
            },
            HalfPlane {
                normal: Point2::new(0.0, -1.0),
                offset: -r.max.y,
            },
        ];
        Self {
            problem,
            anchors,
            margins: Margins::new(problem),
            planes_box,
        }
    }

    /// Feasible set of round `t` under option `o` with both neighbours fixed.
    fn region(&self, t: usize, o: usize, positions: &[Point2]) -> (Option<Disk>, Vec<HalfPlane>) {
        let p = self.problem;
        let k = p.clusters();
        let eps = p.eps_tol;
        let diag = p.rect().diagonal();
        let anchor = self.anchors[t];
        let mut planes = self.planes_box.to_vec();
        for c in (0..k).filter(|&c| c != o) {
            let mu = p.center(c);
            let h = linearize_h1(anchor, mu, eps);
            // The damped gradient can overstate the distance by at most
            // eps * |step| / ‖anchor − μ‖; absorb that into the clearance.
            let damping = 2.0 * eps * diag / anchor.dist(mu).max(eps);
            planes.push(HalfPlane {
                normal: h.grad,
                offset: self.margins.outer(p.radius(c)) + damping - h.constant,
            });
        }
        let step = self.margins.step(p.d_min);
        if t > 0 {
            let h = linearize_h2(self.anchors[t - 1], anchor, eps);
            planes.push(HalfPlane {
                normal: h.grad,
                offset: step - h.constant + h.grad.dot(positions[t - 1]),
            });
        }
        if t + 1 < positions.len() {
            let h = linearize_h2(anchor, self.anchors[t + 1], eps);
            planes.push(HalfPlane {
                normal: h.grad * -1.0,
                offset: step - h.constant - h.grad.dot(positions[t + 1]),
            });
        }
        let disk = (o < k).then(|| Disk {
            center: p.center(o),
            radius: self.margins.inner(p.radius(o)),
        });
        (disk, planes)
    }

    fn target(&self, t: usize, o: usize) -> Point2 {
        if o < self.problem.clusters() {
            self.problem.center(o)
        } else {
            self.anchors[t]
        }
    }

    /// Solve round `t` and accept only points exactly feasible for the
    /// original constraints touching `t`.
    fn place(&self, t: usize, o: usize, positions: &[Point2]) -> Option<Point2> {
        let (disk, planes) = self.region(t, o, positions);
        let q = nearest_feasible(self.target(t, o), disk.as_ref(), &planes)?;
        let step = self.problem.d_min;
        let ok = realizes(self.problem, &self.margins, q, o)
            && (t == 0 || q.dist(positions[t - 1]) >= step)
            && (t + 1 >= positions.len() || q.dist(positions[t + 1]) >= step);
        ok.then_some(q)
    }
}

fn exactly_feasible(problem: &TrajectoryProblem, positions: &[Point2], sched: &[Option<usize>]) -> bool {
    check_feasibility(
        &Trajectory::from_assignment(problem, positions.to_vec(), sched),
        problem,
    )
    .is_feasible()
}

/// One convexified solve around `anchors`.
///
/// Starting from the anchor trajectory (or, when the anchors violate the
/// original constraints, from the warm start), positions move toward their
/// targets and single-round schedule changes are tried in order of objective
/// gain, each subject to the constraints linearized at the anchors.
pub fn solve_inner(problem: &TrajectoryProblem, anchors: &[Point2]) -> Result<Trajectory> {
    let k = problem.clusters();
    let t_len = problem.rounds;
    if anchors.len() != t_len {
        return Err(Error::InvalidArgument(format!(
            "{} anchors for {t_len} rounds",
            anchors.len()
        )));
    }
    let mut sched: Vec<Option<usize>> = anchors.iter().map(|&q| associated_cluster(q, problem)).collect();
    let mut positions = anchors.to_vec();
    let margins = Margins::new(problem);
    let strict = sched
        .iter()
        .zip(&positions)
        .all(|(a, &q)| realizes(problem, &margins, q, opt_index(*a, k)));
    if !strict || !exactly_feasible(problem, &positions, &sched) {
        let warm = warm_start(problem)?;
        sched = warm.assignment();
        positions = warm.positions;
    }
    let base = problem.schedule_objective(&sched);
    let lin_anchors = positions.clone();
    let lin = Linearized::new(problem, &lin_anchors);

    for _ in 0..2 {
        for t in 0..t_len {
            if let Some(q) = lin.place(t, opt_index(sched[t], k), &positions) {
                positions[t] = q;
            }
        }
    }

    let space = ScheduleSpace::new(problem);
    let no_forbid = vec![vec![false; k + 1]; t_len];
    for _ in 0..5 {
        let cur = problem.schedule_objective(&sched);
        let mut moves = Vec::new();
        for t in 0..t_len {
            for o in 0..=k {
                if o == opt_index(sched[t], k) {
                    continue;
                }
                let mut trial = sched.clone();
                trial[t] = opt_value(o, k);
                let gain = problem.schedule_objective(&trial) - cur;
                if gain > 1e-12 {
                    moves.push((gain, t, o));
                }
            }
        }
        moves.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut accepted = false;
        for (_, t, o) in moves {
            let mut trial = sched.clone();
            trial[t] = opt_value(o, k);
            if problem.schedule_objective(&trial) <= problem.schedule_objective(&sched) {
                continue;
            }
            let idx: Vec<usize> = trial.iter().map(|a| opt_index(*a, k)).collect();
            if !space.valid(&idx, &no_forbid) {
                continue;
            }
            if let Some(q) = lin.place(t, o, &positions) {
                positions[t] = q;
                sched = trial;
                accepted = true;
            }
        }
        if !accepted {
            break;
        }
    }

    let out = Trajectory::from_assignment(problem, positions, &sched);
    debug_assert!(out.objective_value >= base);
    Ok(out)
}

/// Successive convex approximation: re-solve around the previous solution
/// until the objective moves by less than `precision` or `max_iters` solves.
pub fn optimize(
    problem: &TrajectoryProblem,
    initial_anchors: &[Point2],
    max_iters: usize,
    precision: f64,
) -> Result<(Trajectory, ScaState)> {
    if max_iters == 0 || !(precision > 0.0) {
        return Err(Error::InvalidArgument(
            "max_iters and precision must be positive".into(),
        ));
    }
    let mut anchors = initial_anchors.to_vec();
    let mut history = Vec::new();
    let mut last = None;
    let mut j = 0;
    while j < max_iters {
        j += 1;
        let traj = solve_inner(problem, &anchors)?;
        history.push(traj.objective_value);
        anchors = traj.positions.clone();
        last = Some(traj);
        if history.len() >= 2 && (history[history.len() - 1] - history[history.len() - 2]).abs() < precision {
            break;
        }
    }
    let traj = last.expect("at least one iteration");
    let report = check_feasibility(&traj, problem);
    let hard = !(report.c2.is_empty()
        && report.c4.is_empty()
        && report.c5.is_empty()
        && report.c6.is_empty()
        && report.roi.is_empty());
    if hard {
        return Err(Error::Infeasible(format!(
            "trajectory violates constraints: {}",
            report.summary()
        )));
    }
    let state = ScaState {
        iterate_index: j,
        anchor_positions: anchors,
        objective_history: history,
        precision,
        max_iters,
        report,
    };
    Ok((traj, state))
}

/// Warm start followed by [`optimize`].
pub fn solve(problem: &TrajectoryProblem, max_iters: usize, precision: f64) -> Result<(Trajectory, ScaState)> {
    let warm = warm_start(problem)?;
    optimize(problem, &warm.positions, max_iters, precision)
}
