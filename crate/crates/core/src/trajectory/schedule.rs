//! Association schedules and their exact realization by hover points.
//!
//! A schedule assigns each round an option: one cluster or none. Options are
//! indexed `0..C` for clusters and `C` for "no cluster".

use std::f64::consts::TAU;

use super::TrajectoryProblem;
use crate::geom::Point2;

/// Window index of round `t`, if it falls in a complete `C`-round window.
///
/// Windows start at the rounds `t1` with `(t1 + 1) mod C = 0` and span
/// `t1..t1 + C`. Rounds before the first start and rounds of a trailing
/// incomplete window carry no budget.
pub fn window_of(t: usize, clusters: usize, rounds: usize) -> Option<usize> {
    if clusters == 0 || t + 1 < clusters {
        return None;
    }
    let k = (t + 1 - clusters) / clusters;
    let last = (k + 2) * clusters - 2;
    (last < rounds).then_some(k)
}

/// Numerical safety margins applied when building positions, so that the
/// exact constraints hold strictly after rounding.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Margins {
    pub eps: f64,
}

impl Margins {
    pub fn new(problem: &TrajectoryProblem) -> Self {
        Self { eps: problem.eps_tol }
    }

    /// Radius actually used for an associated ball.
    pub fn inner(&self, r: f64) -> f64 {
        r * (1.0 - 1e-9)
    }

    /// Clearance required outside a non-associated ball.
    pub fn outer(&self, r: f64) -> f64 {
        r + 2.0 * self.eps + 1e-9 * r
    }

    pub fn step(&self, d_min: f64) -> f64 {
        d_min + 2.0 * self.eps + 1e-9 * d_min
    }
}

pub(crate) fn opt_index(a: Option<usize>, clusters: usize) -> usize {
    a.unwrap_or(clusters)
}

pub(crate) fn opt_value(o: usize, clusters: usize) -> Option<usize> {
    (o < clusters).then_some(o)
}

/// Does `q` strictly realize option `o` (with margins)?
pub(crate) fn realizes(problem: &TrajectoryProblem, m: &Margins, q: Point2, o: usize) -> bool {
    let k = problem.clusters();
    if !q.is_finite() || !problem.rect().contains(q) {
        return false;
    }
    (0..k).all(|c| {
        let d = q.dist(problem.center(c));
        if c == o {
            d <= m.inner(problem.radius(c))
        } else {
            d >= m.outer(problem.radius(c))
        }
    })
}

fn grid(problem: &TrajectoryProblem, n: usize) -> Vec<Point2> {
    let r = problem.rect();
    let lin = |lo: f64, hi: f64, i: usize| lo + (hi - lo) * i as f64 / (n - 1) as f64;
    let mut out = Vec::with_capacity(n * n);
    for iy in 0..n {
        for ix in 0..n {
            out.push(Point2::new(lin(r.min.x, r.max.x, ix), lin(r.min.y, r.max.y, iy)));
        }
    }
    out
}

pub(crate) fn oracle_grid(problem: &TrajectoryProblem, n: usize) -> Vec<Point2> {
    grid(problem, n)
}

/// Candidate hover points per option plus pairwise step compatibility.
pub(crate) struct ScheduleSpace<'a> {
    pub problem: &'a TrajectoryProblem,
    pub margins: Margins,
    pub candidates: Vec<Vec<Point2>>,
    pub compat: Vec<Vec<bool>>,
}

impl<'a> ScheduleSpace<'a> {
    pub fn new(problem: &'a TrajectoryProblem) -> Self {
        let k = problem.clusters();
        let m = Margins::new(problem);
        let mut pool: Vec<Point2> = Vec::new();
        for n in [3, 5, 7, 9, 11] {
            pool.extend(grid(problem, n));
        }
        let angles: Vec<Point2> = (0..16).map(|i| Point2::from_angle(TAU * i as f64 / 16.0)).collect();
        for c in 0..k {
            let mu = problem.center(c);
            let r = problem.radius(c);
            pool.push(mu);
            for f in [0.25, 0.5, 0.75, 0.95, 1.0] {
                pool.extend(angles.iter().map(|&a| mu + a * (m.inner(r) * f)));
            }
            for extra in [
                4.0 * m.eps + 1e-6 * r,
                0.5 * problem.d_min,
                problem.d_min,
                2.0 * problem.d_min,
            ] {
                pool.extend(angles.iter().map(|&a| mu + a * (m.outer(r) + extra)));
            }
        }
        pool.push(problem.roi.gbs_position);
        let candidates: Vec<Vec<Point2>> = (0..=k)
            .map(|o| {
                let mut v: Vec<Point2> = pool.iter().copied().filter(|&q| realizes(problem, &m, q, o)).collect();
                if o < k {
                    let mu = problem.center(o);
                    v.sort_by(|a, b| a.dist(mu).total_cmp(&b.dist(mu)));
                }
                v.dedup();
                v
            })
            .collect();
        let step = m.step(problem.d_min);
        let compat = (0..=k)
            .map(|a| {
                (0..=k)
                    .map(|b| {
                        candidates[a]
                            .iter()
                            .any(|p| candidates[b].iter().any(|q| p.dist(*q) >= step))
                    })
                    .collect()
            })
            .collect();
        Self {
            problem,
            margins: m,
            candidates,
            compat,
        }
    }

    pub fn clusters(&self) -> usize {
        self.problem.clusters()
    }

    fn usable(&self, t: usize, o: usize, forbidden: &[Vec<bool>]) -> bool {
        !self.candidates[o].is_empty() && !forbidden[t][o]
    }

    /// Budget and compatibility check for a full schedule.
    pub fn valid(&self, sched: &[usize], forbidden: &[Vec<bool>]) -> bool {
        let k = self.clusters();
        let t_len = sched.len();
        let mut counts = std::collections::HashMap::<(usize, usize), usize>::new();
        for (t, &o) in sched.iter().enumerate() {
            if !self.usable(t, o, forbidden) {
                return false;
            }
            if t > 0 && !self.compat[sched[t - 1]][o] {
                return false;
            }
            if o < k {
                if let Some(w) = window_of(t, k, t_len) {
                    let n = counts.entry((w, o)).or_default();
                    *n += 1;
                    if *n > self.problem.visit_cap {
                        return false;
                    }
                }
            }
        }
        true
    }

    fn objective(&self, sched: &[usize]) -> f64 {
        let k = self.clusters();
        let a: Vec<Option<usize>> = sched.iter().map(|&o| opt_value(o, k)).collect();
        self.problem.schedule_objective(&a)
    }

    /// Best schedule found; exhaustive when the schedule space is small.
    pub fn search(&self, forbidden: &[Vec<bool>]) -> Option<Vec<usize>> {
        let k = self.clusters();
        let t_len = self.problem.rounds;
        let space = ((k + 1) as f64).powi(t_len as i32);
        if space <= 50_000.0 {
            self.exhaustive(forbidden)
        } else {
            let mut s = self.greedy(forbidden)?;
            self.local_search(&mut s, forbidden);
            Some(s)
        }
    }

    fn exhaustive(&self, forbidden: &[Vec<bool>]) -> Option<Vec<usize>> {
        let k = self.clusters();
        let t_len = self.problem.rounds;
        let mut best: Option<(f64, Vec<usize>)> = None;
        let mut cur = vec![k; t_len];
        let windows = t_len / k.max(1) + 1;
        let mut counts = vec![vec![0usize; k]; windows];
        self.dfs(0, &mut cur, &mut counts, forbidden, &mut best);
        best.map(|(_, s)| s)
    }

    fn dfs(
        &self,
        t: usize,
        cur: &mut Vec<usize>,
        counts: &mut [Vec<usize>],
        forbidden: &[Vec<bool>],
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        let k = self.clusters();
        let t_len = cur.len();
        if t == t_len {
            let v = self.objective(cur);
            if best.as_ref().is_none_or(|(b, _)| v > *b) {
                *best = Some((v, cur.clone()));
            }
            return;
        }
        for o in 0..=k {
            if !self.usable(t, o, forbidden) || (t > 0 && !self.compat[cur[t - 1]][o]) {
                continue;
            }
            let w = if o < k { window_of(t, k, t_len) } else { None };
            if let Some(w) = w {
                if counts[w][o] >= self.problem.visit_cap {
                    continue;
                }
                counts[w][o] += 1;
            }
            cur[t] = o;
            self.dfs(t + 1, cur, counts, forbidden, best);
            if let Some(w) = w {
                counts[w][o] -= 1;
            }
        }
        cur[t] = k;
    }

    /// Repeatedly add the (round, cluster) pair with the largest marginal
    /// objective gain that keeps the partial schedule valid.
    fn greedy(&self, forbidden: &[Vec<bool>]) -> Option<Vec<usize>> {
        let k = self.clusters();
        let t_len = self.problem.rounds;
        let mut sched = vec![k; t_len];
        if !self.valid(&sched, forbidden) {
            // Some round cannot be left empty; fall back to any valid option.
            for t in 0..t_len {
                if !self.usable(t, k, forbidden) {
                    sched[t] = (0..k).find(|&o| self.usable(t, o, forbidden))?;
                }
            }
        }
        let mut acc = vec![0.0; k];
        for (t, &o) in sched.iter().enumerate() {
            if o < k {
                acc[o] += self.problem.psi(t, o);
            }
        }
        let eps = self.problem.eps_tol;
        loop {
            let mut best: Option<(f64, usize, usize)> = None;
            for t in 0..t_len {
                if sched[t] != k {
                    continue;
                }
                for c in 0..k {
                    let psi = self.problem.psi(t, c);
                    let gain = (acc[c] + psi + eps).ln() - (acc[c] + eps).ln();
                    if gain <= 0.0 || best.is_some_and(|(g, _, _)| gain <= g) {
                        continue;
                    }
                    sched[t] = c;
                    if self.valid_around(&sched, t, forbidden) {
                        best = Some((gain, t, c));
                    }
                    sched[t] = k;
                }
            }
            let Some((_, t, c)) = best else { break };
            sched[t] = c;
            acc[c] += self.problem.psi(t, c);
        }
        Some(sched)
    }

    /// Validity restricted to the constraints touching round `t`.
    fn valid_around(&self, sched: &[usize], t: usize, forbidden: &[Vec<bool>]) -> bool {
        let k = self.clusters();
        let o = sched[t];
        if !self.usable(t, o, forbidden) {
            return false;
        }
        if t > 0 && !self.compat[sched[t - 1]][o] {
            return false;
        }
        if t + 1 < sched.len() && !self.compat[o][sched[t + 1]] {
            return false;
        }
        if o < k {
            if let Some(w) = window_of(t, k, sched.len()) {
                let n = (0..sched.len())
                    .filter(|&s| sched[s] == o && window_of(s, k, sched.len()) == Some(w))
                    .count();
                if n > self.problem.visit_cap {
                    return false;
                }
            }
        }
        true
    }

    /// First-improvement descent over single-round changes and swaps.
    pub fn local_search(&self, sched: &mut [usize], forbidden: &[Vec<bool>]) {
        let k = self.clusters();
        let t_len = sched.len();
        let mut cur = self.objective(sched);
        for _ in 0..200 {
            let mut improved = false;
            for t in 0..t_len {
                for o in 0..=k {
                    let old = sched[t];
                    if o == old {
                        continue;
                    }
                    sched[t] = o;
                    let v = self.objective(sched);
                    if v > cur + 1e-12 && self.valid_around(sched, t, forbidden) {
                        cur = v;
                        improved = true;
                    } else {
                        sched[t] = old;
                    }
                }
            }
            for t1 in 0..t_len {
                for t2 in t1 + 1..t_len {
                    if sched[t1] == sched[t2] {
                        continue;
                    }
                    sched.swap(t1, t2);
                    let v = self.objective(sched);
                    if v > cur + 1e-12
                        && self.valid_around(sched, t1, forbidden)
                        && self.valid_around(sched, t2, forbidden)
                    {
                        cur = v;
                        improved = true;
                    } else {
                        sched.swap(t1, t2);
                    }
                }
            }
            if !improved {
                break;
            }
        }
    }

    /// Hover points realizing `sched`, chosen by dynamic programming over
    /// the candidate sets to minimise the summed distance to the associated
    /// centers. On failure returns the first round that cannot be reached.
    pub fn realize(&self, sched: &[usize]) -> Result<Vec<Point2>, usize> {
        let k = self.clusters();
        let step = self.margins.step(self.problem.d_min);
        let cost = |o: usize, q: Point2| if o < k { q.dist(self.problem.center(o)) } else { 0.0 };
        let mut best: Vec<Vec<f64>> = Vec::with_capacity(sched.len());
        let mut parent: Vec<Vec<usize>> = Vec::with_capacity(sched.len());
        for (t, &o) in sched.iter().enumerate() {
            let cands = &self.candidates[o];
            let mut b = vec![f64::INFINITY; cands.len()];
            let mut par = vec![usize::MAX; cands.len()];
            for (i, &q) in cands.iter().enumerate() {
                if t == 0 {
                    b[i] = cost(o, q);
                    continue;
                }
                let prev = &self.candidates[sched[t - 1]];
                for (j, &p) in prev.iter().enumerate() {
                    let v = best[t - 1][j];
                    if v < b[i] && p.dist(q) >= step {
                        b[i] = v;
                        par[i] = j;
                    }
                }
                b[i] += cost(o, q);
            }
            if b.iter().all(|v| !v.is_finite()) {
                return Err(t);
            }
            best.push(b);
            parent.push(par);
        }
        let mut out = vec![Point2::ORIGIN; sched.len()];
        let Some(last) = best.last() else { return Ok(out) };
        let mut i = (0..last.len())
            .min_by(|&a, &b| last[a].total_cmp(&last[b]))
            .expect("non-empty");
        for t in (0..sched.len()).rev() {
            out[t] = self.candidates[sched[t]][i];
            if t > 0 {
                i = parent[t][i];
            }
        }
        Ok(out)
    }
}
