use rand::seq::SliceRandom;
use rand::Rng;

use super::{TrajectoryParams, TrajectoryProblem};
use crate::datagen::{Cluster, RoiConfig, SpatialField, TemporalDistribution};
use crate::error::Result;
use crate::geom::Point2;
use crate::rng::seeded;

/// Shape of a randomly drawn oracle-sized instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleInstanceSpec {
    pub rounds: usize,
    pub clusters: usize,
    pub grid: usize,
}

/// A small planning instance whose cluster centers sit on the oracle grid.
///
/// The ROI is 40 m square, so a 9-point grid has 5 m spacing. Radii are drawn
/// so that some balls cover neighbouring grid points and some do not, and the
/// per-window budget is 1 or 2.
pub fn oracle_instance(seed: u64, spec: OracleInstanceSpec) -> Result<TrajectoryProblem> {
    let mut rng = seeded(seed);
    let side = 40.0;
    let n = spec.grid.max(2);
    let step = side / (n - 1) as f64;
    let mut cells: Vec<(usize, usize)> = (1..n - 1).flat_map(|i| (1..n - 1).map(move |j| (i, j))).collect();
    cells.shuffle(&mut rng);
    let mut means: Vec<Point2> = Vec::new();
    for (i, j) in cells {
        let q = Point2::new(-side / 2.0 + i as f64 * step, -side / 2.0 + j as f64 * step);
        if means.iter().all(|m| m.dist(q) >= 3.0 * step) {
            means.push(q);
        }
        if means.len() == spec.clusters {
            break;
        }
    }
    let weight = 1.0 / means.len() as f64;
    let clusters = means
        .into_iter()
        .map(|m| Cluster::isotropic(m, step * rng.random_range(0.6..1.6), weight))
        .collect();
    let field = SpatialField::new(clusters);
    let temporal = TemporalDistribution::random(spec.clusters, spec.rounds, &mut rng)?;
    let params = TrajectoryParams {
        visit_cap: rng.random_range(1..=2),
        ..TrajectoryParams::default()
    };
    let roi = RoiConfig {
        width: side,
        height: side,
        gbs_position: Point2::ORIGIN,
        altitude: 50.0,
        fov: vec![0.5],
    };
    TrajectoryProblem::new(spec.rounds, field, temporal, &params, roi)
}
