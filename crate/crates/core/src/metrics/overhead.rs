use serde::{Deserialize, Serialize};

/// How local training cost scales with the pruning ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ComputeRule {
    /// `κ` dense rounds.
    Dense,
    /// `ρ` dense warm-up rounds, then `κ` rounds on the kept fraction.
    WarmupThenPruned,
}

pub fn local_compute_units(rule: ComputeRule, delta: f64, kappa: usize, rho: usize, unit_cost: f64) -> f64 {
    match rule {
        ComputeRule::Dense => kappa as f64 * unit_cost,
        ComputeRule::WarmupThenPruned => rho as f64 * unit_cost + kappa as f64 * unit_cost * (1.0 - delta),
    }
}

/// Mean per-client cost of each round; `delta_trace[t]` lists the clients' ratios.
pub fn compute_overheads(
    rule: ComputeRule,
    delta_trace: &[Vec<f64>],
    kappa: usize,
    rho: usize,
    unit_cost: f64,
) -> Vec<f64> {
    delta_trace
        .iter()
        .map(|ds| {
            if ds.is_empty() {
                return 0.0;
            }
            ds.iter()
                .map(|&d| local_compute_units(rule, d, kappa, rho, unit_cost))
                .sum::<f64>()
                / ds.len() as f64
        })
        .collect()
}

/// Right-continuous empirical distribution of integer observations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EmpiricalCdf {
    sorted: Vec<u64>,
}

impl EmpiricalCdf {
    pub fn new(mut values: Vec<u64>) -> Self {
        values.sort_unstable();
        Self { sorted: values }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Fraction of observations `≤ x`.
    pub fn eval(&self, x: u64) -> f64 {
        if self.sorted.is_empty() {
            return 0.0;
        }
        self.sorted.partition_point(|&v| v <= x) as f64 / self.sorted.len() as f64
    }

    /// Smallest observation whose CDF value reaches `p`.
    pub fn quantile(&self, p: f64) -> Option<u64> {
        let n = self.sorted.len();
        if n == 0 {
            return None;
        }
        let k = ((p.clamp(0.0, 1.0) * n as f64).ceil() as usize).clamp(1, n);
        Some(self.sorted[k - 1])
    }

    /// Distinct values with the CDF value at each.
    pub fn steps(&self) -> Vec<(u64, f64)> {
        let n = self.sorted.len() as f64;
        let mut out: Vec<(u64, f64)> = Vec::new();
        for (i, &v) in self.sorted.iter().enumerate() {
            match out.last_mut() {
                Some(last) if last.0 == v => last.1 = (i + 1) as f64 / n,
                _ => out.push((v, (i + 1) as f64 / n)),
            }
        }
        out
    }
}

/// True when `a` lies weakly to the right of `b` everywhere: `F_a(x) ≤ F_b(x)` for all `x`.
pub fn first_order_dominates(a: &EmpiricalCdf, b: &EmpiricalCdf) -> bool {
    a.sorted.iter().chain(&b.sorted).all(|&x| a.eval(x) <= b.eval(x))
}
