//! Counter smoothing and the linear performance model.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulator::CounterSample;

pub const DEFAULT_WINDOW: usize = 5;

/// Diagonal loading for the normal equations. Conditioning only.
pub const RIDGE: f64 = 1e-9;

const REFINEMENT_STEPS: usize = 3;

/// Relative singular-value cutoff used to detect rank deficiency.
const RANK_TOLERANCE: f64 = 1e-10;

/// Ring of the most recent counter samples.
#[derive(Debug, Clone)]
pub struct SampleWindow {
    capacity: usize,
    samples: VecDeque<CounterSample>,
}

impl Default for SampleWindow {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW)
    }
}

impl SampleWindow {
    /// # Panics
    /// If `capacity` is zero.
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "window capacity must be positive");
        Self {
            capacity,
            samples: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn push(&mut self, sample: CounterSample) {
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(sample);
    }

    pub fn clear(&mut self) {
        self.samples.clear();
    }

    /// Per-field mean over the samples currently held.
    pub fn moving_average(&self) -> Result<CounterSample> {
        if self.samples.is_empty() {
            return Err(Error::EmptyWindow);
        }
        let n = self.samples.len() as f64;
        let mut acc = CounterSample::default();
        for s in &self.samples {
            acc.l1_miss_latency += s.l1_miss_latency;
            acc.ddr_read_latency += s.ddr_read_latency;
            acc.ipc += s.ipc;
            acc.total_bandwidth += s.total_bandwidth;
            acc.timestamp += s.timestamp;
        }
        Ok(CounterSample {
            l1_miss_latency: acc.l1_miss_latency / n,
            ddr_read_latency: acc.ddr_read_latency / n,
            ipc: acc.ipc / n,
            total_bandwidth: acc.total_bandwidth / n,
            timestamp: acc.timestamp / n,
        })
    }
}

/// Counters the model can take as inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Feature {
    L1MissLatency,
    DdrReadLatency,
    Ipc,
    TotalBandwidth,
}

impl Feature {
    pub const DEFAULT_SET: [Feature; 3] = [Feature::L1MissLatency, Feature::DdrReadLatency, Feature::Ipc];

    pub fn name(self) -> &'static str {
        match self {
            Feature::L1MissLatency => "l1_miss_latency",
            Feature::DdrReadLatency => "ddr_read_latency",
            Feature::Ipc => "ipc",
            Feature::TotalBandwidth => "total_bandwidth",
        }
    }

    pub fn value(self, sample: &CounterSample) -> f64 {
        match self {
            Feature::L1MissLatency => sample.l1_miss_latency,
            Feature::DdrReadLatency => sample.ddr_read_latency,
            Feature::Ipc => sample.ipc,
            Feature::TotalBandwidth => sample.total_bandwidth,
        }
    }

    pub fn default_names() -> Vec<String> {
        Self::DEFAULT_SET.iter().map(|f| f.name().to_owned()).collect()
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1_miss_latency" => Ok(Feature::L1MissLatency),
            "ddr_read_latency" => Ok(Feature::DdrReadLatency),
            "ipc" => Ok(Feature::Ipc),
            "total_bandwidth" => Ok(Feature::TotalBandwidth),
            other => Err(Error::UnknownFeature(other.to_owned())),
        }
    }
}

/// Feature vector for `sample` in the order of `features`.
pub fn feature_vector(features: &[Feature], sample: &CounterSample) -> Vec<f64> {
    features.iter().map(|f| f.value(sample)).collect()
}

/// `Y = beta0 + sum(betas[i] * X_i)` over named counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCoefficients {
    pub beta0: f64,
    pub betas: Vec<f64>,
    pub feature_names: Vec<String>,
}

impl ModelCoefficients {
    pub fn new(beta0: f64, betas: Vec<f64>, feature_names: Vec<String>) -> Result<Self> {
        let model = Self {
            beta0,
            betas,
            feature_names,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.betas.is_empty() {
            return Err(Error::InvalidModel("at least one feature is required".into()));
        }
        if self.betas.len() != self.feature_names.len() {
            return Err(Error::InvalidModel(format!(
                "{} coefficients for {} feature names",
                self.betas.len(),
                self.feature_names.len()
            )));
        }
        if !self.beta0.is_finite() || self.betas.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidModel("coefficients must be finite".into()));
        }
        Ok(())
    }

    pub fn features(&self) -> Result<Vec<Feature>> {
        self.feature_names.iter().map(|n| n.parse()).collect()
    }

    /// Evaluates the model on a raw feature vector.
    pub fn predict(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.betas.len() {
            return Err(Error::FeatureArity {
                index: 0,
                expected: self.betas.len(),
                got: features.len(),
            });
        }
        Ok(self.beta0 + self.betas.iter().zip(features).map(|(b, x)| b * x).sum::<f64>())
    }

    /// Performance estimate from a smoothed counter sample.
    pub fn estimate(&self, smoothed: &CounterSample) -> Result<f64> {
        let features = self.features()?;
        self.predict(&feature_vector(&features, smoothed))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model coefficients serialize to toml")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let model: Self = toml::from_str(text)?;
        model.validate()?;
        model.features()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

/// Free-function form of [`ModelCoefficients::estimate`].
pub fn estimate(model: &ModelCoefficients, smoothed: &CounterSample) -> Result<f64> {
    model.estimate(smoothed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub features: Vec<f64>,
    pub target: f64,
}

impl Observation {
    pub fn new(features: Vec<f64>, target: f64) -> Self {
        Self { features, target }
    }
}

/// Least-squares fit of a linear model with intercept.
///
/// Solves the normal equations with [`RIDGE`] on the diagonal. Columns are
/// equilibrated to unit norm before the solve and the coefficients mapped
/// back, so wildly different counter scales (ns against IPC) do not cost
/// precision.
pub fn fit_ols(observations: &[Observation], feature_names: Vec<String>) -> Result<ModelCoefficients> {
    let p = feature_names.len();
    if p == 0 {
        return Err(Error::InvalidModel("at least one feature is required".into()));
    }
    let params = p + 1;
    if observations.len() < params {
        return Err(Error::Underdetermined {
            needed: params,
            params,
            got: observations.len(),
        });
    }
    for (index, obs) in observations.iter().enumerate() {
        if obs.features.len() != p {
            return Err(Error::FeatureArity {
                index,
                expected: p,
                got: obs.features.len(),
            });
        }
    }

    let n = observations.len();
    let design = DMatrix::from_fn(n, params, |i, j| {
        if j == 0 {
            1.0
        } else {
            observations[i].features[j - 1]
        }
    });
    let targets = DVector::from_iterator(n, observations.iter().map(|o| o.target));

    let scales: Vec<f64> = (0..params)
        .map(|j| {
            let norm = design.column(j).norm();
            if norm > 0.0 {
                norm
            } else {
                1.0
            }
        })
        .collect();
    let mut scaled = design;
    for (j, s) in scales.iter().enumerate() {
        scaled.column_mut(j).unscale_mut(*s);
    }

    let singular = scaled.clone().svd(false, false).singular_values;
    let max_sv = singular.max();
    let rank = singular.iter().filter(|&&s| s > RANK_TOLERANCE * max_sv).count();
    if rank < params || !max_sv.is_finite() {
        return Err(Error::RankDeficient { rank, params });
    }

    let mut gram = scaled.transpose() * &scaled;
    for j in 0..params {
        gram[(j, j)] += RIDGE;
    }
    let rhs = scaled.transpose() * targets;
    let chol = gram.clone().cholesky().ok_or(Error::RankDeficient { rank, params })?;
    let mut solution = chol.solve(&rhs);
    // Refine against the unregularized system so the ridge only conditions
    // the factorization and does not bias the coefficients.
    for j in 0..params {
        gram[(j, j)] -= RIDGE;
    }
    for _ in 0..REFINEMENT_STEPS {
        let residual = &rhs - &gram * &solution;
        solution += chol.solve(&residual);
    }

    let coef: Vec<f64> = solution.iter().zip(&scales).map(|(b, s)| b / s).collect();
    ModelCoefficients::new(coef[0], coef[1..].to_vec(), feature_names)
}

/// Sample Pearson correlation coefficient.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(Error::TooFewPoints(a.len()));
    }
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let (mut cov, mut var_a, mut var_b) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let dx = x - mean_a;
        let dy = y - mean_b;
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Err(Error::ConstantSeries);
    }
    Ok((cov / (var_a.sqrt() * var_b.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn sample(l1: f64, ddr: f64, ipc: f64) -> CounterSample {
        CounterSample {
            l1_miss_latency: l1,
            ddr_read_latency: ddr,
            ipc,
            total_bandwidth: 0.0,
            timestamp: 0.0,
        }
    }

    #[test]
    fn window_mean_and_eviction() {
        let mut w = SampleWindow::new(5);
        assert!(matches!(w.moving_average(), Err(Error::EmptyWindow)));
        let s = sample(100.0, 90.0, 0.5);
        for _ in 0..3 {
            w.push(s);
        }
        assert_eq!(w.moving_average().unwrap(), s);

        let mut w = SampleWindow::new(5);
        w.push(sample(0.0, 0.0, 1.0));
        w.push(sample(0.0, 0.0, 3.0));
        assert_eq!(w.moving_average().unwrap().ipc, 2.0);

        let mut w = SampleWindow::new(5);
        for i in 1..=6 {
            w.push(sample(0.0, 0.0, f64::from(i)));
        }
        assert_eq!(w.len(), 5);
        // 2..=6
        assert_eq!(w.moving_average().unwrap().ipc, 4.0);
    }

    #[test]
    fn estimate_examples() {
        let m = ModelCoefficients::new(1.0, vec![2.0], vec!["ipc".into()]).unwrap();
        assert_eq!(m.estimate(&sample(0.0, 0.0, 3.0)).unwrap(), 7.0);

        let zero = ModelCoefficients::new(4.5, vec![0.0; 3], Feature::default_names()).unwrap();
        assert_eq!(zero.estimate(&sample(123.0, 45.0, 6.0)).unwrap(), 4.5);

        let ones = ModelCoefficients::new(0.0, vec![1.0; 3], Feature::default_names()).unwrap();
        assert_eq!(ones.estimate(&sample(2.0, 3.0, 4.0)).unwrap(), 9.0);

        let bad = ModelCoefficients {
            beta0: 0.0,
            betas: vec![1.0],
            feature_names: vec!["llc_misses".into()],
        };
        assert!(matches!(bad.estimate(&sample(1.0, 1.0, 1.0)), Err(Error::UnknownFeature(_))));
        assert!(ModelCoefficients::new(0.0, vec![1.0, 2.0], vec!["ipc".into()]).is_err());
        assert!(ModelCoefficients::new(0.0, vec![], vec![]).is_err());
    }

    #[test]
    fn exact_linear_recovery() {
        let obs: Vec<_> = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (2.0, 3.0), (-1.0, 4.0)]
            .iter()
            .map(|&(x1, x2)| Observation::new(vec![x1, x2], 5.0 + 2.0 * x1 - 3.0 * x2))
            .collect();
        let m = fit_ols(&obs, vec!["l1_miss_latency".into(), "ipc".into()]).unwrap();
        assert!((m.beta0 - 5.0).abs() < 1e-6);
        assert!((m.betas[0] - 2.0).abs() < 1e-6);
        assert!((m.betas[1] + 3.0).abs() < 1e-6);
        for o in &obs {
            assert!((m.predict(&o.features).unwrap() - o.target).abs() <= 1e-9);
        }
    }

    #[test]
    fn constant_target_gives_intercept_only() {
        let obs: Vec<_> = (0..8)
            .map(|i| {
                let x = f64::from(i);
                Observation::new(vec![x, x * x, (x * 0.7).sin()], 3.25)
            })
            .collect();
        let m = fit_ols(&obs, Feature::default_names()).unwrap();
        assert_relative_eq!(m.beta0, 3.25, max_relative = 1e-8);
        for b in &m.betas {
            assert!(b.abs() < 1e-8, "{b}");
        }
    }

    #[test]
    fn fit_errors() {
        let obs = vec![
            Observation::new(vec![1.0, 2.0, 3.0], 1.0),
            Observation::new(vec![2.0, 1.0, 0.0], 2.0),
        ];
        assert!(matches!(
            fit_ols(&obs, Feature::default_names()),
            Err(Error::Underdetermined { needed: 4, .. })
        ));
        let collinear: Vec<_> = (0..6)
            .map(|i| {
                let x = f64::from(i);
                Observation::new(vec![x, 2.0 * x], x)
            })
            .collect();
        assert!(matches!(
            fit_ols(&collinear, vec!["ipc".into(), "l1_miss_latency".into()]),
            Err(Error::RankDeficient { .. })
        ));
        let ragged = vec![
            Observation::new(vec![1.0], 1.0),
            Observation::new(vec![2.0, 1.0], 2.0),
            Observation::new(vec![3.0, 1.0], 2.0),
        ];
        assert!(matches!(
            fit_ols(&ragged, vec!["ipc".into(), "l1_miss_latency".into()]),
            Err(Error::FeatureArity { index: 0, .. })
        ));
    }

    #[test]
    fn model_file_round_trip() {
        let m = ModelCoefficients::new(0.125, vec![-0.5, 1e-3, 2.75], Feature::default_names()).unwrap();
        assert_eq!(ModelCoefficients::from_toml(&m.to_toml()).unwrap(), m);
        assert!(ModelCoefficients::from_toml("beta0 = 1.0\nbetas = [1.0]\nfeature_names = [\"bogus\"]").is_err());
    }

    #[test]
    fn pearson_examples() {
        let a = [1.0, 2.0, 4.0, 3.0, 7.5];
        assert_relative_eq!(pearson(&a, &a).unwrap(), 1.0, max_relative = 1e-12);
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        assert_relative_eq!(pearson(&a, &neg).unwrap(), -1.0, max_relative = 1e-12);
        let affine: Vec<f64> = a.iter().map(|x| 3.0 * x + 10.0).collect();
        assert_relative_eq!(pearson(&a, &affine).unwrap(), 1.0, max_relative = 1e-12);
        assert!(matches!(pearson(&a, &[2.0; 5]), Err(Error::ConstantSeries)));
        assert!(matches!(pearson(&[1.0], &[1.0]), Err(Error::TooFewPoints(1))));
        assert!(matches!(pearson(&a, &a[..3]), Err(Error::LengthMismatch(5, 3))));
    }

    proptest! {
        #[test]
        fn moving_average_within_bounds(values in prop::collection::vec(0.0f64..1e4, 1..12)) {
            let mut w = SampleWindow::new(5);
            for &v in &values {
                w.push(sample(v, v * 0.5, v * 1e-3));
            }
            let held = &values[values.len().saturating_sub(5)..];
            let lo = held.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = held.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let avg = w.moving_average().unwrap();
            let eps = 1e-9 * hi.max(1.0);
            prop_assert!(avg.l1_miss_latency >= lo - eps && avg.l1_miss_latency <= hi + eps);
        }

        #[test]
        fn estimate_is_affine(
            beta0 in -10.0f64..10.0,
            betas in prop::collection::vec(-5.0f64..5.0, 3),
            x in prop::collection::vec(-100.0f64..100.0, 3),
            y in prop::collection::vec(-100.0f64..100.0, 3),
            alpha in 0.0f64..=1.0,
        ) {
            let m = ModelCoefficients::new(beta0, betas, Feature::default_names()).unwrap();
            let mix: Vec<f64> = x.iter().zip(&y).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
            let lhs = m.predict(&mix).unwrap();
            let rhs = alpha * m.predict(&x).unwrap() + (1.0 - alpha) * m.predict(&y).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
        }

        #[test]
        fn ols_reproduces_exact_linear_targets(
            beta0 in -10.0f64..10.0,
            betas in prop::collection::vec(-5.0f64..5.0, 3),
            rows in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 3), 8..20),
        ) {
            let obs: Vec<_> = rows
                .iter()
                .map(|r| Observation::new(r.clone(), beta0 + r.iter().zip(&betas).map(|(x, b)| x * b).sum::<f64>()))
                .collect();
            if let Ok(m) = fit_ols(&obs, Feature::default_names()) {
                for o in &obs {
                    let scale = 1.0 + o.target.abs();
                    prop_assert!((m.predict(&o.features).unwrap() - o.target).abs() <= 1e-9 * scale);
                }
            }
        }
    }
}
