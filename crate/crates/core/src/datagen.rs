//! Spatio-temporal data environment.
//!
//! Each ACV sees its own spatial Gaussian mixture over the region of
//! interest (one component per class), a time-varying class distribution
//! obtained by softmax-normalising `M_u z_u(t)`, and a sensing model that
//! turns a round position plus cluster association into freshly labelled
//! samples appended to the local dataset.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point2, Rect};

/// Relative slack applied before taking ceilings so that values like
/// `420 * 0.1` that land a few ulps above an integer do not gain a sample.
const CEIL_REL_SLACK: f64 = 1e-12;

pub(crate) fn ceil_count(x: f64) -> usize {
    if x <= 0.0 {
        return 0;
    }
    (x * (1.0 - CEIL_REL_SLACK)).ceil() as usize
}

/// Geometry of the region of interest and of the fleet's sensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiConfig {
    pub width: f64,
    pub height: f64,
    pub gbs_position: Point2,
    /// Common flight altitude `h_acv` in meters.
    pub altitude: f64,
    /// Camera field of view per ACV, radians.
    pub fov: Vec<f64>,
}

impl RoiConfig {
    /// The ROI rectangle, centered on the coordinate origin.
    pub fn rect(&self) -> Rect {
        Rect::centered(self.width, self.height)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(Error::InvalidConfig("ROI width and height must be positive".into()));
        }
        if !(self.altitude > 0.0) {
            return Err(Error::InvalidConfig("ACV altitude must be positive".into()));
        }
        if let Some(theta) = self.fov.iter().find(|&&t| !(t > 0.0 && t < PI / 2.0)) {
            return Err(Error::InvalidConfig(format!(
                "field of view {theta} rad must lie in (0, pi/2)"
            )));
        }
        if !self.rect().contains(self.gbs_position) {
            return Err(Error::InvalidConfig("GBS position lies outside the ROI".into()));
        }
        Ok(())
    }
}

/// One Gaussian component of a spatial field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub mean: Point2,
    /// Row-major 2x2 covariance in square meters.
    pub cov: [[f64; 2]; 2],
    pub weight: f64,
}

impl Cluster {
    pub fn isotropic(mean: Point2, std: f64, weight: f64) -> Self {
        let v = std * std;
        Self {
            mean,
            cov: [[v, 0.0], [0.0, v]],
            weight,
        }
    }

    fn det(&self) -> f64 {
        self.cov[0][0] * self.cov[1][1] - self.cov[0][1] * self.cov[1][0]
    }

    fn is_spd(&self) -> bool {
        let c = &self.cov;
        let symmetric = (c[0][1] - c[1][0]).abs() <= 1e-12 * (c[0][1].abs() + c[1][0].abs() + 1.0);
        // 2x2 SPD iff leading minors are positive.
        symmetric && c[0][0] > 0.0 && self.det() > 0.0
    }

    /// Bivariate normal density at `q`.
    pub fn density(&self, q: Point2) -> f64 {
        let det = self.det();
        let d = q - self.mean;
        let c = &self.cov;
        // Inverse of [[a, b], [b, e]] is [[e, -b], [-b, a]] / det.
        let quad = (c[1][1] * d.x * d.x - (c[0][1] + c[1][0]) * d.x * d.y + c[0][0] * d.y * d.y) / det;
        (-0.5 * quad).exp() / (2.0 * PI * det.sqrt())
    }

    /// Radius scalar used by the association rule: square root of the
    /// larger diagonal variance, in meters.
    pub fn radius(&self) -> f64 {
        self.cov[0][0].max(self.cov[1][1]).sqrt()
    }
}

/// Per-ACV spatial Gaussian mixture; cluster `c` carries class `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialField {
    pub clusters: Vec<Cluster>,
}

impl SpatialField {
    pub fn new(clusters: Vec<Cluster>) -> Self {
        Self { clusters }
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn validate(&self, roi: Option<&Rect>) -> Result<()> {
        if self.clusters.is_empty() {
            return Err(Error::InvalidConfig("spatial field has no clusters".into()));
        }
        let total: f64 = self.clusters.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 || self.clusters.iter().any(|c| !(0.0..=1.0).contains(&c.weight)) {
            return Err(Error::InvalidConfig(format!(
                "mixture weights must lie in [0,1] and sum to 1 (sum = {total})"
            )));
        }
        for (i, c) in self.clusters.iter().enumerate() {
            if !c.is_spd() {
                return Err(Error::SingularCovariance { cluster: i });
            }
            if let Some(r) = roi {
                if !r.contains(c.mean) {
                    return Err(Error::InvalidConfig(format!("cluster {i} mean lies outside the ROI")));
                }
            }
        }
        Ok(())
    }

    /// Randomly laid-out field: isotropic clusters with standard deviations
    /// drawn from `std_range`, means uniform in `roi` shrunk by `margin`, and
    /// pairwise mean separation at least `min_separation` (rejection
    /// sampling, falls back to the best candidate after many tries).
    pub fn random<R: Rng + ?Sized>(
        classes: usize,
        roi: &Rect,
        std_range: (f64, f64),
        margin: f64,
        min_separation: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if classes == 0 {
            return Err(Error::InvalidArgument("need at least one cluster".into()));
        }
        let (lo, hi) = std_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::InvalidArgument("cluster std range must be positive".into()));
        }
        let inner = Rect {
            min: Point2::new(roi.min.x + margin, roi.min.y + margin),
            max: Point2::new(roi.max.x - margin, roi.max.y - margin),
        };
        if inner.min.x >= inner.max.x || inner.min.y >= inner.max.y {
            return Err(Error::InvalidArgument(
                "cluster margin leaves no room in the ROI".into(),
            ));
        }
        let ux = Uniform::new_inclusive(inner.min.x, inner.max.x).expect("valid range");
        let uy = Uniform::new_inclusive(inner.min.y, inner.max.y).expect("valid range");
        let us = Uniform::new_inclusive(lo, hi).expect("valid range");
        let mut means: Vec<Point2> = Vec::with_capacity(classes);
        for _ in 0..classes {
            let mut best = Point2::new(ux.sample(rng), uy.sample(rng));
            let mut best_gap = f64::NEG_INFINITY;
            for _ in 0..2000 {
                let cand = Point2::new(ux.sample(rng), uy.sample(rng));
                let gap = means.iter().map(|m| m.dist(cand)).fold(f64::INFINITY, f64::min);
                if gap > best_gap {
                    best_gap = gap;
                    best = cand;
                }
                if gap >= min_separation {
                    break;
                }
            }
            means.push(best);
        }
        let w = 1.0 / classes as f64;
        Ok(Self::new(
            means
                .into_iter()
                .map(|m| Cluster::isotropic(m, us.sample(rng), w))
                .collect(),
        ))
    }
}

/// Mixture density `sum_c w_c N(q | mu_c, Lambda_c)`.
pub fn gmm_density(q: Point2, field: &SpatialField) -> Result<f64> {
    let mut total = 0.0;
    for (i, c) in field.clusters.iter().enumerate() {
        if !c.is_spd() {
            return Err(Error::SingularCovariance { cluster: i });
        }
        total += c.weight * c.density(q);
    }
    Ok(total)
}

/// Time-dependent basis `z_u(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    /// `[sin(2 pi t/T), cos(5 pi t/T), sin(5 pi t/T), cos(2 pi t/T)]`.
    Sinusoids { period: usize },
    /// Explicit per-round basis vectors.
    Table(Vec<Vec<f64>>),
}

impl Basis {
    pub fn dim(&self) -> usize {
        match self {
            Basis::Sinusoids { .. } => 4,
            Basis::Table(rows) => rows.first().map_or(0, Vec::len),
        }
    }

    pub fn eval(&self, t: usize) -> Vec<f64> {
        match self {
            Basis::Sinusoids { period } => {
                let x = PI * t as f64 / (*period).max(1) as f64;
                vec![(2.0 * x).sin(), (5.0 * x).cos(), (5.0 * x).sin(), (2.0 * x).cos()]
            }
            Basis::Table(rows) => rows[t.min(rows.len() - 1)].clone(),
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Class-to-basis mapping and basis that together produce `psi_u^t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalDistribution {
    /// `C x K` mapping matrix, row per class.
    pub mapping: Vec<Vec<f64>>,
    pub basis: Basis,
}

impl TemporalDistribution {
    pub fn new(mapping: Vec<Vec<f64>>, basis: Basis) -> Result<Self> {
        let k = basis.dim();
        if mapping.is_empty() || k == 0 || mapping.iter().any(|row| row.len() != k) {
            return Err(Error::InvalidArgument(format!(
                "mapping matrix must be C x {k} with C >= 1"
            )));
        }
        Ok(Self { mapping, basis })
    }

    /// Mapping entries i.i.d. uniform on [-1, 1] with the sinusoid basis.
    pub fn random<R: Rng + ?Sized>(classes: usize, rounds: usize, rng: &mut R) -> Result<Self> {
        let basis = Basis::Sinusoids { period: rounds };
        let u = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
        let mapping = (0..classes)
            .map(|_| (0..basis.dim()).map(|_| u.sample(rng)).collect())
            .collect();
        Self::new(mapping, basis)
    }

    pub fn classes(&self) -> usize {
        self.mapping.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn tilde_psi(&self, t: usize) -> Vec<f64> {
        let z = self.basis.eval(t);
        self.mapping
            .iter()
            .map(|row| row.iter().zip(&z).map(|(m, z)| m * z).sum())
            .collect()
    }

    pub fn psi(&self, t: usize) -> Vec<f64> {
        class_distribution(self, t)
    }

    /// `rounds x C` table of class distributions.
    pub fn psi_table(&self, rounds: usize) -> Vec<Vec<f64>> {
        (0..rounds).map(|t| self.psi(t)).collect()
    }

    /// Per-class time average of `psi` over `[0, rounds)`.
    pub fn mean_psi(&self, rounds: usize) -> Vec<f64> {
        let mut acc = vec![0.0; self.classes()];
        for t in 0..rounds.max(1) {
            for (a, p) in acc.iter_mut().zip(self.psi(t)) {
                *a += p;
            }
        }
        acc.iter().map(|a| a / rounds.max(1) as f64).collect()
    }
}

/// Softmax of `M_u z_u(t)`.
pub fn class_distribution(temporal: &TemporalDistribution, t: usize) -> Vec<f64> {
    softmax(&temporal.tilde_psi(t))
}

/// Ground area imaged by a camera with field of view `theta` at altitude `h`.
pub fn footprint_area(h: f64, theta: f64) -> Result<f64> {
    if !(theta > 0.0 && theta < PI / 2.0) {
        return Err(Error::DegenerateFootprint { theta });
    }
    if h < 0.0 {
        return Err(Error::InvalidArgument("altitude must be nonnegative".into()));
    }
    Ok((2.0 * h * theta.tan()).powi(2))
}

/// Number of new samples sensed at `q` in one round.
pub fn arrivals(q: Point2, indicators: &[bool], psi: &[f64], n_max: usize, field: &SpatialField) -> usize {
    let total: f64 = field
        .clusters
        .iter()
        .zip(indicators)
        .zip(psi)
        .filter(|((_, &on), _)| on)
        .map(|((c, _), &p)| n_max as f64 * p * (-q.dist(c.mean)).exp())
        .sum();
    ceil_count(total)
}

/// One labelled training or test example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
    pub arrival_round: usize,
}

/// Append-only dataset owned by one ACV.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LocalDataset {
    pub owner: usize,
    samples: Vec<Sample>,
}

impl LocalDataset {
    pub fn new(owner: usize) -> Self {
        Self {
            owner,
            samples: Vec::new(),
        }
    }

    pub fn from_samples(owner: usize, samples: Vec<Sample>) -> Self {
        Self { owner, samples }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn push(&mut self, sample: Sample) {
        self.samples.push(sample);
    }

    pub fn extend(&mut self, more: impl IntoIterator<Item = Sample>) {
        self.samples.extend(more);
    }

    /// Per-class sample counts for `classes` classes.
    pub fn class_counts(&self, classes: usize) -> Vec<usize> {
        let mut counts = vec![0; classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }
}

/// Class-conditional isotropic Gaussian features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureModel {
    pub means: Vec<Vec<f64>>,
    pub std: f64,
}

impl FeatureModel {
    /// Class means at `+-a e_{c mod F}` with `a = separation / sqrt(2)`, so
    /// neighbouring classes sit `separation` apart.
    pub fn one_hot(classes: usize, dim: usize, separation: f64, std: f64) -> Result<Self> {
        if classes == 0 || dim == 0 {
            return Err(Error::InvalidArgument("feature model needs classes and dims".into()));
        }
        if classes > 2 * dim {
            return Err(Error::InvalidArgument(format!(
                "{classes} classes do not fit one-hot directions in {dim} dims"
            )));
        }
        if !(std >= 0.0) {
            return Err(Error::InvalidArgument("feature std must be nonnegative".into()));
        }
        let a = separation / 2f64.sqrt();
        let means = (0..classes)
            .map(|c| {
                let mut m = vec![0.0; dim];
                m[c % dim] = if c < dim { a } else { -a };
                m
            })
            .collect();
        Ok(Self { means, std })
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn classes(&self) -> usize {
        self.means.len()
    }
}

/// Draw a feature vector for `label`.
pub fn synth_features<R: Rng + ?Sized>(label: usize, model: &FeatureModel, rng: &mut R) -> Vec<f64> {
    let mean = &model.means[label];
    if model.std == 0.0 {
        return mean.clone();
    }
    let normal = Normal::new(0.0, model.std).expect("finite std");
    mean.iter().map(|m| m + normal.sample(rng)).collect()
}

/// Label model and sample budget of one sensing pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensingModel {
    pub n_max: usize,
    /// Probability that a sample sensed at cluster `c` carries label `c`.
    pub label_purity: f64,
}

fn draw_label<R: Rng + ?Sized>(cluster: usize, psi: &[f64], purity: f64, rng: &mut R) -> usize {
    let others: f64 = psi
        .iter()
        .enumerate()
        .filter(|(c, _)| *c != cluster)
        .map(|(_, p)| p)
        .sum();
    if psi.len() == 1 || others <= 0.0 || rng.random::<f64>() < purity {
        return cluster;
    }
    let mut u = rng.random::<f64>() * others;
    let mut last = cluster;
    for (c, &p) in psi.iter().enumerate() {
        if c == cluster {
            continue;
        }
        last = c;
        if u < p {
            return c;
        }
        u -= p;
    }
    last
}

/// Sense at `q` during round `t` and append the new samples to `dataset`.
/// Returns the number of samples added.
#[allow(clippy::too_many_arguments)]
pub fn sense_and_update<R: Rng + ?Sized>(
    dataset: &mut LocalDataset,
    t: usize,
    q: Point2,
    indicators: &[bool],
    temporal: &TemporalDistribution,
    field: &SpatialField,
    sensing: &SensingModel,
    features: &FeatureModel,
    rng: &mut R,
) -> usize {
    let psi = temporal.psi(t);
    let n = arrivals(q, indicators, &psi, sensing.n_max, field);
    let Some(cluster) = indicators.iter().position(|&on| on) else {
        return 0;
    };
    for _ in 0..n {
        let label = draw_label(cluster, &psi, sensing.label_purity, rng);
        let x = synth_features(label, features, rng);
        dataset.push(Sample {
            features: x,
            label,
            arrival_round: t,
        });
    }
    n
}

/// Initial dataset with `ceil(mean_t psi_c * size_scale)` samples of class `c`.
pub fn init_dataset<R: Rng + ?Sized>(
    owner: usize,
    temporal: &TemporalDistribution,
    rounds: usize,
    size_scale: usize,
    features: &FeatureModel,
    rng: &mut R,
) -> Result<LocalDataset> {
    if size_scale == 0 {
        return Err(Error::InvalidArgument(
            "initial dataset size scale must be positive".into(),
        ));
    }
    let mut ds = LocalDataset::new(owner);
    for (label, p) in temporal.mean_psi(rounds).into_iter().enumerate() {
        for _ in 0..ceil_count(p * size_scale as f64) {
            let x = synth_features(label, features, rng);
            ds.push(Sample {
                features: x,
                label,
                arrival_round: 0,
            });
        }
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn unit_field(mean: Point2) -> SpatialField {
        SpatialField::new(vec![Cluster::isotropic(mean, 1.0, 1.0)])
    }

    fn zero_temporal(classes: usize) -> TemporalDistribution {
        TemporalDistribution::new(vec![vec![0.0; 4]; classes], Basis::Sinusoids { period: 10 }).unwrap()
    }

    #[test]
    fn density_at_mean_of_standard_normal() {
        let d = gmm_density(Point2::ORIGIN, &unit_field(Point2::ORIGIN)).unwrap();
        assert!((d - 1.0 / (2.0 * PI)).abs() < 1e-15);
    }

    #[test]
    fn duplicated_cluster_matches_single() {
        let one = unit_field(Point2::new(1.0, -2.0));
        let mut c = one.clusters[0].clone();
        c.weight = 0.5;
        let two = SpatialField::new(vec![c.clone(), c]);
        for q in [Point2::new(0.3, 0.1), Point2::new(-4.0, 2.0)] {
            let a = gmm_density(q, &one).unwrap();
            let b = gmm_density(q, &two).unwrap();
            assert!((a - b).abs() < 1e-16);
        }
    }

    #[test]
    fn density_matches_scalar_normal_product() {
        // Independent route: a 2D standard normal factorises into two 1D pdfs.
        let phi = |x: f64| (-(x * x) / 2.0).exp() / (2.0 * PI).sqrt();
        let d = gmm_density(Point2::new(1.0, 0.0), &unit_field(Point2::ORIGIN)).unwrap();
        assert!((d - phi(1.0) * phi(0.0)).abs() < 1e-15);
        assert!((d - 0.096_532_352_630_054).abs() < 1e-12);
    }

    #[test]
    fn anisotropic_density_integrates_to_one() {
        let field = SpatialField::new(vec![Cluster {
            mean: Point2::new(0.5, -0.5),
            cov: [[2.0, 0.6], [0.6, 1.0]],
            weight: 1.0,
        }]);
        let (lo, hi, n) = (-12.0, 12.0, 600);
        let h = (hi - lo) / n as f64;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let q = Point2::new(lo + (i as f64 + 0.5) * h, lo + (j as f64 + 0.5) * h);
                total += gmm_density(q, &field).unwrap() * h * h;
            }
        }
        assert!((total - 1.0).abs() < 1e-3, "integral {total}");
    }

    #[test]
    fn singular_covariance_rejected() {
        let field = SpatialField::new(vec![Cluster {
            mean: Point2::ORIGIN,
            cov: [[1.0, 1.0], [1.0, 1.0]],
            weight: 1.0,
        }]);
        assert!(matches!(
            gmm_density(Point2::ORIGIN, &field),
            Err(Error::SingularCovariance { cluster: 0 })
        ));
        assert!(field.validate(None).is_err());
    }

    #[test]
    fn field_validation_checks_weights_and_roi() {
        let mut field = unit_field(Point2::ORIGIN);
        assert!(field.validate(Some(&Rect::centered(10.0, 10.0))).is_ok());
        assert!(field.validate(Some(&Rect::centered(10.0, 10.0).clone())).is_ok());
        field.clusters[0].mean = Point2::new(20.0, 0.0);
        assert!(field.validate(Some(&Rect::centered(10.0, 10.0))).is_err());
        field.clusters[0].weight = 0.7;
        assert!(field.validate(None).is_err());
    }

    #[test]
    fn uniform_logits_give_uniform_psi() {
        let psi = zero_temporal(5).psi(3);
        for p in psi {
            assert!((p - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_is_shift_invariant_and_stable() {
        let a = softmax(&[1.0, -2.0, 0.5]);
        let b = softmax(&[1001.0, 998.0, 1000.5]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        let s = softmax(&[1.0, 0.0]);
        let e = std::f64::consts::E;
        assert!((s[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((s[0] - 0.7311).abs() < 1e-4 && (s[1] - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn random_temporal_is_normalised_every_round() {
        let mut rng = seeded(3);
        let temporal = TemporalDistribution::random(10, 100, &mut rng).unwrap();
        assert_eq!(temporal.latent_dim(), 4);
        for t in 0..100 {
            let psi = temporal.psi(t);
            assert!(psi.iter().all(|&p| p > 0.0 && p < 1.0));
            assert!((psi.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn mapping_shape_checked() {
        assert!(TemporalDistribution::new(vec![vec![0.0; 3]], Basis::Sinusoids { period: 4 }).is_err());
        assert!(TemporalDistribution::new(vec![], Basis::Sinusoids { period: 4 }).is_err());
    }

    #[test]
    fn footprint_examples() {
        assert!((footprint_area(100.0, PI / 4.0).unwrap() - 40_000.0).abs() < 1e-9);
        assert_eq!(footprint_area(0.0, PI / 4.0).unwrap(), 0.0);
        let a = footprint_area(120.0, PI / 6.0).unwrap();
        assert!((a - (240.0 / 3f64.sqrt()).powi(2)).abs() < 1e-9);
        assert!((a - 19_200.0).abs() < 1e-9);
        assert!(matches!(
            footprint_area(10.0, PI / 2.0),
            Err(Error::DegenerateFootprint { .. })
        ));
        assert!(footprint_area(10.0, 0.0).is_err());
    }

    #[test]
    fn arrival_examples() {
        let field = unit_field(Point2::ORIGIN);
        assert_eq!(arrivals(Point2::ORIGIN, &[false], &[1.0], 420, &field), 0);
        assert_eq!(arrivals(Point2::ORIGIN, &[true], &[0.1], 420, &field), 42);
        let q = Point2::new(2f64.ln(), 0.0);
        assert_eq!(arrivals(q, &[true], &[0.5], 80, &field), 20);
    }

    #[test]
    fn arrivals_non_increasing_in_distance() {
        let field = unit_field(Point2::ORIGIN);
        let mut last = usize::MAX;
        for i in 0..200 {
            let n = arrivals(Point2::new(i as f64 * 0.05, 0.0), &[true], &[0.37], 420, &field);
            assert!(n <= last);
            last = n;
        }
    }

    #[test]
    fn roi_validation() {
        let mut roi = RoiConfig {
            width: 100.0,
            height: 50.0,
            gbs_position: Point2::ORIGIN,
            altitude: 100.0,
            fov: vec![PI / 4.0],
        };
        assert!(roi.validate().is_ok());
        roi.gbs_position = Point2::new(60.0, 0.0);
        assert!(roi.validate().is_err());
        roi.gbs_position = Point2::ORIGIN;
        roi.fov = vec![PI / 2.0];
        assert!(roi.validate().is_err());
        roi.fov.clear();
        roi.altitude = 0.0;
        assert!(roi.validate().is_err());
    }

    #[test]
    fn sensing_without_association_is_noop() {
        let field = unit_field(Point2::ORIGIN);
        let temporal = zero_temporal(1);
        let features = FeatureModel::one_hot(1, 4, 2.0, 1.0).unwrap();
        let mut ds = LocalDataset::new(0);
        let sensing = SensingModel {
            n_max: 420,
            label_purity: 0.9,
        };
        let n = sense_and_update(
            &mut ds,
            1,
            Point2::ORIGIN,
            &[false],
            &temporal,
            &field,
            &sensing,
            &features,
            &mut seeded(1),
        );
        assert_eq!(n, 0);
        assert!(ds.is_empty());
    }

    #[test]
    fn sensing_appends_exactly_the_arrivals() {
        let field = SpatialField::new(vec![
            Cluster::isotropic(Point2::ORIGIN, 1.0, 0.5),
            Cluster::isotropic(Point2::new(10.0, 0.0), 1.0, 0.5),
        ]);
        let temporal = zero_temporal(2);
        let features = FeatureModel::one_hot(2, 4, 2.0, 1.0).unwrap();
        let sensing = SensingModel {
            n_max: 420,
            label_purity: 0.9,
        };
        let mut rng = seeded(9);
        let mut ds = init_dataset(0, &temporal, 10, 16, &features, &mut rng).unwrap();
        let before = ds.samples().to_vec();
        let n = sense_and_update(
            &mut ds,
            3,
            Point2::new(0.2, 0.0),
            &[true, false],
            &temporal,
            &field,
            &sensing,
            &features,
            &mut rng,
        );
        assert_eq!(
            n,
            arrivals(Point2::new(0.2, 0.0), &[true, false], &[0.5, 0.5], 420, &field)
        );
        assert_eq!(ds.len(), before.len() + n);
        assert_eq!(&ds.samples()[..before.len()], &before[..]);
        assert!(ds.samples()[before.len()..].iter().all(|s| s.arrival_round == 3));
    }

    #[test]
    fn init_dataset_ceiling_rule() {
        let features = FeatureModel::one_hot(10, 16, 2.0, 1.0).unwrap();
        let ds = init_dataset(0, &zero_temporal(10), 100, 512, &features, &mut seeded(0)).unwrap();
        assert_eq!(ds.class_counts(10), vec![52; 10]);
        assert!(ds.samples().iter().all(|s| s.arrival_round == 0));

        let one = FeatureModel::one_hot(1, 16, 2.0, 1.0).unwrap();
        let ds = init_dataset(0, &zero_temporal(1), 100, 512, &one, &mut seeded(0)).unwrap();
        assert_eq!(ds.len(), 512);

        assert!(init_dataset(0, &zero_temporal(1), 100, 0, &one, &mut seeded(0)).is_err());
    }

    #[test]
    fn zero_variance_features_equal_mean() {
        let model = FeatureModel::one_hot(3, 5, 2.0, 0.0).unwrap();
        assert_eq!(synth_features(2, &model, &mut seeded(4)), model.means[2]);
        let a = 2f64.sqrt();
        assert!((model.means[0][0] - a).abs() < 1e-15);
        let sep: f64 = model.means[0]
            .iter()
            .zip(&model.means[1])
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((sep - 2.0).abs() < 1e-12);
    }

    #[test]
    fn feature_mean_law_of_large_numbers() {
        let model = FeatureModel::one_hot(4, 8, 2.0, 1.0).unwrap();
        let mut rng = seeded(11);
        let n = 10_000;
        let mut acc = [0.0; 8];
        for _ in 0..n {
            for (a, x) in acc.iter_mut().zip(synth_features(1, &model, &mut rng)) {
                *a += x;
            }
        }
        let tol = 3.0 * model.std / (n as f64).sqrt();
        for (a, m) in acc.iter().zip(&model.means[1]) {
            assert!((a / n as f64 - m).abs() < tol);
        }
    }

    #[test]
    fn well_separated_classes_are_nearest_centroid_separable() {
        let model = FeatureModel::one_hot(2, 16, 4.0, 1.0).unwrap();
        let mut rng = seeded(5);
        let trials = 4000;
        let mut correct = 0;
        for i in 0..trials {
            let label = i % 2;
            let x = synth_features(label, &model, &mut rng);
            let d = |m: &Vec<f64>| x.iter().zip(m).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let guess = if d(&model.means[0]) <= d(&model.means[1]) { 0 } else { 1 };
            correct += usize::from(guess == label);
        }
        assert!(correct as f64 / trials as f64 > 0.95);
    }

    #[test]
    fn sensed_label_mix_matches_expectation() {
        // Chi-square goodness of fit of pooled label counts over 1000 seeds
        // against the purity / psi-weighted mixture implied by the schedule.
        let field = SpatialField::new(vec![
            Cluster::isotropic(Point2::ORIGIN, 1.0, 1.0 / 3.0),
            Cluster::isotropic(Point2::new(50.0, 0.0), 1.0, 1.0 / 3.0),
            Cluster::isotropic(Point2::new(0.0, 50.0), 1.0, 1.0 / 3.0),
        ]);
        let mut rng = seeded(21);
        let temporal = TemporalDistribution::random(3, 6, &mut rng).unwrap();
        let features = FeatureModel::one_hot(3, 4, 2.0, 0.0).unwrap();
        let sensing = SensingModel {
            n_max: 60,
            label_purity: 0.9,
        };
        let schedule = [0usize, 1, 2, 0, 1];
        let positions: Vec<Point2> = schedule
            .iter()
            .map(|&c| field.clusters[c].mean + Point2::new(0.3, 0.0))
            .collect();

        let mut expected = [0.0f64; 3];
        for (i, &c) in schedule.iter().enumerate() {
            let t = i + 1;
            let psi = temporal.psi(t);
            let mut ind = vec![false; 3];
            ind[c] = true;
            let n = arrivals(positions[i], &ind, &psi, sensing.n_max, &field) as f64;
            let others: f64 = (0..3).filter(|&k| k != c).map(|k| psi[k]).sum();
            for k in 0..3 {
                expected[k] += n * if k == c { 0.9 } else { 0.1 * psi[k] / others };
            }
        }
        let seeds = 1000;
        let mut observed = [0usize; 3];
        for seed in 0..seeds {
            let mut r = seeded(1000 + seed);
            let mut ds = LocalDataset::new(0);
            for (i, &c) in schedule.iter().enumerate() {
                let mut ind = vec![false; 3];
                ind[c] = true;
                sense_and_update(
                    &mut ds,
                    i + 1,
                    positions[i],
                    &ind,
                    &temporal,
                    &field,
                    &sensing,
                    &features,
                    &mut r,
                );
            }
            for (o, n) in observed.iter_mut().zip(ds.class_counts(3)) {
                *o += n;
            }
        }
        let chi2: f64 = (0..3)
            .map(|k| {
                let e = expected[k] * seeds as f64;
                (observed[k] as f64 - e).powi(2) / e
            })
            .sum();
        // 99.9% quantile of chi-square with 2 degrees of freedom.
        assert!(chi2 < 13.82, "chi2 = {chi2}");
    }

    #[test]
    fn generation_is_deterministic() {
        let make = || {
            let mut rng = seeded(77);
            let temporal = TemporalDistribution::random(4, 20, &mut rng).unwrap();
            let features = FeatureModel::one_hot(4, 16, 2.0, 1.0).unwrap();
            init_dataset(2, &temporal, 20, 64, &features, &mut rng).unwrap()
        };
        assert_eq!(make(), make());
    }

    #[test]
    fn random_field_respects_separation() {
        let roi = Rect::centered(400.0, 400.0);
        let field = SpatialField::random(4, &roi, (20.0, 30.0), 40.0, 80.0, &mut seeded(2)).unwrap();
        field.validate(Some(&roi)).unwrap();
        for i in 0..4 {
            for j in i + 1..4 {
                assert!(field.clusters[i].mean.dist(field.clusters[j].mean) >= 80.0);
            }
            let r = field.clusters[i].radius();
            assert!((20.0..=30.0).contains(&r));
        }
    }
}
