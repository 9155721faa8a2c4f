use super::schedule::{oracle_grid, window_of};
use super::{Trajectory, TrajectoryProblem};
use crate::error::{Error, Result};
use crate::geom::Point2;

pub const ORACLE_MAX_ROUNDS: usize = 6;
pub const ORACLE_MAX_CLUSTERS: usize = 3;
pub const ORACLE_MAX_GRID: usize = 11;

/// Global optimum with hover points restricted to an `n × n` grid over the ROI.
///
/// Every budget-respecting schedule is scored; in decreasing objective order
/// each is tested for a grid realization whose points associate exactly as
/// scheduled (inside one ball and outside all others) with consecutive points
/// at least `d_min` apart. The first realizable schedule is optimal.
pub fn oracle_solve(problem: &TrajectoryProblem, grid_resolution: usize) -> Result<Trajectory> {
    let k = problem.clusters();
    let t_len = problem.rounds;
    if t_len > ORACLE_MAX_ROUNDS || k > ORACLE_MAX_CLUSTERS || grid_resolution > ORACLE_MAX_GRID {
        return Err(Error::OversizedInstance(format!(
            "oracle limited to T <= {ORACLE_MAX_ROUNDS}, C <= {ORACLE_MAX_CLUSTERS}, grid <= {ORACLE_MAX_GRID} \
             (got T = {t_len}, C = {k}, grid = {grid_resolution})"
        )));
    }
    if grid_resolution < 2 {
        return Err(Error::InvalidArgument("grid resolution must be at least 2".into()));
    }
    let points = oracle_grid(problem, grid_resolution);
    // Option realized by each grid point; points inside two balls realize none.
    let label: Vec<Option<Option<usize>>> = points
        .iter()
        .map(|&q| {
            let inside: Vec<usize> = (0..k)
                .filter(|&c| q.dist(problem.center(c)) <= problem.radius(c))
                .collect();
            match inside.len() {
                0 => Some(None),
                1 => Some(Some(inside[0])),
                _ => None,
            }
        })
        .collect();

    let mut schedules = Vec::new();
    let mut cur = vec![None; t_len];
    enumerate(problem, 0, &mut cur, &mut schedules);
    let mut scored: Vec<(f64, Vec<Option<usize>>)> = schedules
        .into_iter()
        .map(|s| (problem.schedule_objective(&s), s))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    for (_, sched) in scored {
        if let Some(pos) = reach(problem, &points, &label, &sched) {
            return Ok(Trajectory::from_assignment(problem, pos, &sched));
        }
    }
    Err(Error::Infeasible("no grid realization exists for any schedule".into()))
}

fn enumerate(problem: &TrajectoryProblem, t: usize, cur: &mut Vec<Option<usize>>, out: &mut Vec<Vec<Option<usize>>>) {
    let k = problem.clusters();
    let t_len = cur.len();
    if t == t_len {
        out.push(cur.clone());
        return;
    }
    for o in (0..k).map(Some).chain(std::iter::once(None)) {
        cur[t] = o;
        if let (Some(c), Some(w)) = (o, window_of(t, k, t_len)) {
            let used = (0..=t)
                .filter(|&s| cur[s] == Some(c) && window_of(s, k, t_len) == Some(w))
                .count();
            if used > problem.visit_cap {
                continue;
            }
        }
        enumerate(problem, t + 1, cur, out);
    }
    cur[t] = None;
}

fn reach(
    problem: &TrajectoryProblem,
    points: &[Point2],
    label: &[Option<Option<usize>>],
    sched: &[Option<usize>],
) -> Option<Vec<Point2>> {
    let n = points.len();
    let mut parent = vec![vec![usize::MAX; n]; sched.len()];
    let mut alive: Vec<bool> = (0..n).map(|i| label[i] == Some(sched[0])).collect();
    for t in 1..sched.len() {
        let mut next = vec![false; n];
        for i in (0..n).filter(|&i| label[i] == Some(sched[t])) {
            if let Some(j) = (0..n).find(|&j| alive[j] && points[j].dist(points[i]) >= problem.d_min) {
                next[i] = true;
                parent[t][i] = j;
            }
        }
        alive = next;
    }
    let mut i = alive.iter().position(|&a| a)?;
    let mut out = vec![Point2::ORIGIN; sched.len()];
    for t in (0..sched.len()).rev() {
        out[t] = points[i];
        if t > 0 {
            i = parent[t][i];
        }
    }
    Some(out)
}
