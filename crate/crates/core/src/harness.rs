//! Scenario-level commands: sweeps, the brute-force oracle, estimator
//! calibration, and tuning runs.

use std::fmt;

use rayon::prelude::*;

use crate::allocator::AllocationPolicy;
use crate::config::Scenario;
use crate::error::{Error, Result};
use crate::estimator::{feature_vector, fit_ols, pearson, Feature, ModelCoefficients, Observation, SampleWindow};
use crate::report::{fmt_sig, CsvTable};
use crate::simulator::{solve_steady_state, Baseline, CounterSample, Simulation, SteadyState};
use crate::tuner::{run_loop, RunLog, SimulatedPlant, TunerState};
use crate::workload::check_ratio;

/// Command-line overrides applied on top of a scenario.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub intervals: Option<usize>,
    pub start_ratio: Option<f64>,
    pub noise_sigma: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, scenario: &mut Scenario) -> Result<()> {
        if let Some(seed) = self.seed {
            scenario.system.rng_seed = seed;
        }
        if let Some(n) = self.intervals {
            if n == 0 {
                return Err(Error::Config("intervals must be >= 1".into()));
            }
            scenario.intervals = n;
            scenario.loop_options.intervals = n;
        }
        if let Some(r) = self.start_ratio {
            check_ratio(r)?;
            scenario.start_ratio = r;
        }
        if let Some(sigma) = self.noise_sigma {
            if !(sigma.is_finite() && sigma >= 0.0) {
                return Err(Error::Config(format!("noise must be >= 0, got {sigma}")));
            }
            scenario.system.noise_sigma = sigma;
        }
        Ok(())
    }
}

/// Parses `"0,25,50"` or an inclusive range `"0:100:10"` (`start:end`
/// steps by 1). Items may mix both forms.
pub fn parse_ratio_list(input: &str) -> Result<Vec<f64>> {
    let err = |reason: &str| Error::RatioList {
        input: input.chars().take(64).collect(),
        reason: reason.to_owned(),
    };
    let parse = |s: &str| -> Result<f64> {
        let v: f64 = s.trim().parse().map_err(|_| err(&format!("`{}` is not a number", s.trim())))?;
        check_ratio(v).map_err(|_| err(&format!("{v} is outside [0, 100]")))?;
        Ok(v)
    };
    let mut out = Vec::new();
    for item in input.split(',') {
        let item = item.trim();
        if item.is_empty() {
            return Err(err("empty item"));
        }
        let parts: Vec<&str> = item.split(':').collect();
        match parts.as_slice() {
            [single] => out.push(parse(single)?),
            [start, end] | [start, end, _] => {
                let start = parse(start)?;
                let end = parse(end)?;
                let step = match parts.get(2) {
                    Some(s) => s.trim().parse::<f64>().map_err(|_| err("bad step"))?,
                    None => 1.0,
                };
                if !(step.is_finite() && step > 0.0) {
                    return Err(err("step must be > 0"));
                }
                if end < start {
                    return Err(err("range end is below start"));
                }
                let count = ((end - start) / step + 1e-9).floor() as usize;
                if count > 100_000 {
                    return Err(err("range has too many points"));
                }
                out.extend((0..=count).map(|i| start + step * i as f64));
            }
            _ => return Err(err("expected `value` or `start:end[:step]`")),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub ratio: f64,
    pub throughput: f64,
    pub steady: SteadyState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub points: Vec<SweepPoint>,
}

pub const SWEEP_COLUMNS: [&str; 6] = [
    "ratio",
    "throughput",
    "l1_miss_latency",
    "ddr_read_latency",
    "ipc",
    "total_bandwidth",
];

impl Sweep {
    pub fn throughputs(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.throughput).collect()
    }

    pub fn to_table(&self) -> CsvTable {
        let mut t = CsvTable::new(SWEEP_COLUMNS.iter().map(|s| s.to_string()).collect());
        for p in &self.points {
            let c = CounterSample::from_steady(&p.steady, 0.0);
            t.push(vec![
                fmt_sig(p.ratio),
                fmt_sig(p.throughput),
                fmt_sig(c.l1_miss_latency),
                fmt_sig(c.ddr_read_latency),
                fmt_sig(c.ipc),
                fmt_sig(c.total_bandwidth),
            ]);
        }
        t
    }
}

fn baseline(scenario: &Scenario) -> Result<Baseline> {
    Baseline::measure(&scenario.workloads, &scenario.system)
}

/// Noise-free steady state at each ratio, sorted by ratio.
pub fn cmd_sweep(scenario: &Scenario, ratios: &[f64]) -> Result<Sweep> {
    for &r in ratios {
        check_ratio(r)?;
    }
    let mut ratios = ratios.to_vec();
    ratios.sort_by(f64::total_cmp);
    ratios.dedup();
    let base = baseline(scenario)?;
    let points = ratios
        .iter()
        .map(|&ratio| {
            let steady = solve_steady_state(&scenario.workloads, &scenario.system, ratio)?;
            Ok(SweepPoint {
                ratio,
                throughput: base.throughput_metric(&steady)?,
                steady,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Sweep { points })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub ratio: u8,
    pub max_throughput: f64,
    /// Normalized throughput at every integer ratio 0..=100.
    pub curve: Vec<f64>,
}

impl OracleResult {
    pub fn at(&self, ratio: u8) -> f64 {
        self.curve[usize::from(ratio)]
    }
}

/// Exhaustive sweep over integer ratios; ties go to the lowest ratio.
pub fn cmd_oracle(scenario: &Scenario) -> Result<OracleResult> {
    let base = baseline(scenario)?;
    let curve = (0u8..=100)
        .into_par_iter()
        .map(|r| {
            let steady = solve_steady_state(&scenario.workloads, &scenario.system, f64::from(r))?;
            base.throughput_metric(&steady)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(oracle_from_curve(curve))
}

/// Argmax of an integer-ratio curve, lowest index on ties.
pub fn oracle_from_curve(curve: Vec<f64>) -> OracleResult {
    let (ratio, max_throughput) = curve
        .iter()
        .enumerate()
        .fold((0usize, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
    OracleResult {
        ratio: ratio as u8,
        max_throughput,
        curve,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitRow {
    pub ratio: f64,
    pub features: Vec<f64>,
    pub target: f64,
    pub estimate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub model: ModelCoefficients,
    pub train: Vec<FitRow>,
    pub train_pearson: f64,
    pub holdout: Vec<FitRow>,
    pub holdout_pearson: f64,
    pub holdout_seed: u64,
}

impl FitReport {
    pub fn to_table(&self) -> CsvTable {
        let mut header = vec!["ratio".to_owned()];
        header.extend(self.model.feature_names.iter().cloned());
        header.push("target".into());
        header.push("estimate".into());
        let mut t = CsvTable::new(header);
        for row in &self.train {
            let mut cells = vec![fmt_sig(row.ratio)];
            cells.extend(row.features.iter().map(|&v| fmt_sig(v)));
            cells.push(fmt_sig(row.target));
            cells.push(fmt_sig(row.estimate));
            t.push(cells);
        }
        t
    }
}

/// Smoothed counters and true normalized throughput at each ratio, from a
/// fresh simulation seeded with `seed`. Each ratio fills the window from
/// empty.
pub fn calibration_sweep(
    scenario: &Scenario,
    ratios: &[f64],
    seed: u64,
    features: &[Feature],
) -> Result<Vec<(f64, Observation)>> {
    let mut system = scenario.system.clone();
    system.rng_seed = seed;
    let mut sim = Simulation::new(system, scenario.workloads.clone())?;
    let base = sim.baseline()?;
    let mut window = SampleWindow::new(scenario.window);
    let mut out = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        check_ratio(ratio)?;
        window.clear();
        let mut target = 0.0;
        for _ in 0..window.capacity() {
            let iv = sim.step_interval(ratio)?;
            target = base.throughput_metric(&iv.steady)?;
            window.push(iv.sample);
        }
        let smoothed = window.moving_average()?;
        out.push((ratio, Observation::new(feature_vector(features, &smoothed), target)));
    }
    Ok(out)
}

/// Fits the linear estimator on a noisy calibration sweep and scores it on
/// a second sweep with a different noise seed.
pub fn cmd_fit(scenario: &Scenario, ratios: &[f64], features: &[Feature]) -> Result<FitReport> {
    let names: Vec<String> = features.iter().map(|f| f.name().to_owned()).collect();
    let params = names.len() + 1;
    let mut distinct = ratios.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < params {
        return Err(Error::Underdetermined {
            needed: params,
            params,
            got: distinct.len(),
        });
    }

    let seed = scenario.system.rng_seed;
    let train = calibration_sweep(scenario, ratios, seed, features)?;
    let observations: Vec<Observation> = train.iter().map(|(_, o)| o.clone()).collect();
    let model = fit_ols(&observations, names)?;

    let holdout_seed = seed.wrapping_add(1);
    let holdout = calibration_sweep(scenario, ratios, holdout_seed, features)?;

    let score = |rows: &[(f64, Observation)]| -> Result<(Vec<FitRow>, f64)> {
        let rows = rows
            .iter()
            .map(|(ratio, o)| {
                Ok(FitRow {
                    ratio: *ratio,
                    features: o.features.clone(),
                    target: o.target,
                    estimate: model.predict(&o.features)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let est: Vec<f64> = rows.iter().map(|r| r.estimate).collect();
        let tgt: Vec<f64> = rows.iter().map(|r| r.target).collect();
        let r = pearson(&est, &tgt)?;
        Ok((rows, r))
    };
    let (train_rows, train_pearson) = score(&train)?;
    let (holdout_rows, holdout_pearson) = score(&holdout)?;

    Ok(FitReport {
        model,
        train: train_rows,
        train_pearson,
        holdout: holdout_rows,
        holdout_pearson,
        holdout_seed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneReport {
    pub scenario: String,
    pub log: RunLog,
    pub terminal_ratio: f64,
    pub terminal_throughput: f64,
    /// Mean true throughput over the settle window, normalized to ratio 0.
    pub tuned_throughput: f64,
    pub oracle: OracleResult,
    pub static_0: f64,
    pub static_50: f64,
    pub settle_intervals: usize,
    pub workloads: usize,
}

impl TuneReport {
    pub fn vs_static_50(&self) -> f64 {
        self.tuned_throughput / self.static_50
    }

    pub fn vs_static_0(&self) -> f64 {
        self.tuned_throughput / self.static_0
    }

    pub fn vs_oracle(&self) -> f64 {
        self.tuned_throughput / self.oracle.max_throughput
    }

    pub fn best_static(&self) -> f64 {
        self.static_0.max(self.static_50)
    }
}

impl fmt::Display for TuneReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let metric = if self.workloads > 1 {
            "geomean normalized throughput"
        } else {
            "normalized throughput"
        };
        writeln!(f, "scenario: {}", self.scenario)?;
        writeln!(f, "terminal ratio: {}", fmt_sig(self.terminal_ratio))?;
        writeln!(f, "terminal throughput: {}", fmt_sig(self.terminal_throughput))?;
        writeln!(
            f,
            "tuned {metric} (last {} intervals): {}",
            self.settle_intervals,
            fmt_sig(self.tuned_throughput)
        )?;
        writeln!(
            f,
            "oracle: ratio {} throughput {}",
            self.oracle.ratio,
            fmt_sig(self.oracle.max_throughput)
        )?;
        writeln!(f, "static-0 throughput: {}", fmt_sig(self.static_0))?;
        writeln!(f, "static-50 throughput: {}", fmt_sig(self.static_50))?;
        writeln!(f, "tuned vs static-50: {}", fmt_sig(self.vs_static_50()))?;
        writeln!(f, "tuned vs static-0: {}", fmt_sig(self.vs_static_0()))?;
        write!(f, "tuned vs oracle: {}", fmt_sig(self.vs_oracle()))
    }
}

/// Runs the control loop on the scenario and compares against static
/// placements and the oracle.
pub fn cmd_tune(scenario: &Scenario, model: &ModelCoefficients) -> Result<TuneReport> {
    let sim = Simulation::new(scenario.system.clone(), scenario.workloads.clone())?;
    let mut plant = SimulatedPlant::new(sim)?;
    let tuner = TunerState::new(scenario.start_ratio, scenario.tuner)?;
    let mut window = SampleWindow::new(scenario.window);
    let log = run_loop(
        &mut plant,
        AllocationPolicy::interleave(scenario.start_ratio),
        model,
        &mut window,
        tuner,
        &scenario.loop_options,
    )?;
    let oracle = cmd_oracle(scenario)?;
    let tuned_throughput = log.settled_throughput(scenario.settle_intervals);
    Ok(TuneReport {
        scenario: scenario.name.clone(),
        terminal_ratio: log.terminal_ratio(),
        terminal_throughput: log.terminal_throughput(),
        tuned_throughput,
        static_0: oracle.at(0),
        static_50: oracle.at(50),
        oracle,
        log,
        settle_intervals: scenario.settle_intervals,
        workloads: scenario.workloads.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_lists() {
        assert_eq!(parse_ratio_list("0,25,50").unwrap(), vec![0.0, 25.0, 50.0]);
        assert_eq!(parse_ratio_list(" 10 , 5 ").unwrap(), vec![10.0, 5.0]);
        assert_eq!(parse_ratio_list("0:100:25").unwrap(), vec![0.0, 25.0, 50.0, 75.0, 100.0]);
        assert_eq!(parse_ratio_list("98:100").unwrap(), vec![98.0, 99.0, 100.0]);
        assert_eq!(parse_ratio_list("0:10:4,50").unwrap(), vec![0.0, 4.0, 8.0, 50.0]);
        for bad in ["", "a", "101", "-1", "1,,2", "5:1", "0:10:0", "0:10:-1", "1:2:3:4", "nan"] {
            assert!(parse_ratio_list(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn oracle_ties_break_low() {
        let r = oracle_from_curve(vec![1.0, 2.0, 2.0, 1.5]);
        assert_eq!(r.ratio, 1);
        assert_eq!(r.max_throughput, 2.0);
        assert_eq!(oracle_from_curve(vec![1.0; 101]).ratio, 0);
    }
}
