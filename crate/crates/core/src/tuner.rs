//! Greedy step-halving controller for the CXL page-allocation ratio, and the
//! monitor / estimate / tune loop around it.
//!
//! Each tuning interval compares the current performance estimate with the
//! one committed last time. A decline reverses the step and halves it, never
//! below `min_step` in magnitude; anything else keeps going the same way.
//! The new ratio is always applied, but the comparison baseline only moves
//! forward when the interval saw new page allocations.

use serde::{Deserialize, Serialize};

use crate::allocator::{set_ratio, AllocationPolicy, Capacities, PageMap};
use crate::error::{Error, Result};
use crate::estimator::{ModelCoefficients, SampleWindow};
use crate::report::{fmt_sig, CsvTable};
use crate::simulator::{Baseline, CounterSample, Simulation};

/// Denominator floor for relative changes.
const TINY: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TunerConfig {
    /// Smallest step magnitude, percent.
    pub min_step: f64,
    /// First step and the magnitude restored after a sudden change, percent.
    pub initial_step: f64,
    /// Relative changes below this count as no change. 0 disables.
    pub dead_band: f64,
    /// Relative changes above this reset the step magnitude. `inf` disables.
    pub reset_threshold: f64,
    /// Sampling periods between tuning decisions.
    pub tune_interval: u32,
}

impl Default for TunerConfig {
    fn default() -> Self {
        Self {
            min_step: 9.0,
            initial_step: 18.0,
            dead_band: 0.01,
            reset_threshold: 0.5,
            tune_interval: 1,
        }
    }
}

impl TunerConfig {
    /// Plain reversal/halving with no dead-band or reset handling.
    pub fn strict() -> Self {
        Self {
            dead_band: 0.0,
            reset_threshold: f64::INFINITY,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("tuner: {m}")));
        if !(self.min_step.is_finite() && self.min_step > 0.0) {
            return bad(format!("min_step must be > 0, got {}", self.min_step));
        }
        if !(self.initial_step.is_finite() && self.initial_step.abs() >= self.min_step) {
            return bad(format!(
                "|initial_step| must be >= min_step, got {}",
                self.initial_step
            ));
        }
        if self.dead_band.is_nan() || self.dead_band < 0.0 {
            return bad(format!("dead_band must be >= 0, got {}", self.dead_band));
        }
        if self.reset_threshold.is_nan() || self.reset_threshold <= 0.0 {
            return bad(format!(
                "reset_threshold must be > 0, got {}",
                self.reset_threshold
            ));
        }
        if self.tune_interval == 0 {
            return bad("tune_interval must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TunerState {
    /// Last committed estimate. `None` until the first commit.
    pub prev_state: Option<f64>,
    /// Signed step, percent.
    pub prev_step: f64,
    /// Percent of new pages on CXL.
    pub prev_ratio: f64,
    pub config: TunerConfig,
}

impl TunerState {
    pub fn new(start_ratio: f64, config: TunerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            prev_state: None,
            prev_step: config.initial_step,
            prev_ratio: start_ratio.clamp(0.0, 100.0),
            config,
        })
    }

    /// One controller decision. Returns the next state and the ratio to
    /// apply; the state carries the old triple forward unless
    /// `new_allocations` is set.
    pub fn tune_step(&self, curr_state: f64, new_allocations: bool) -> (TunerState, f64) {
        let cfg = &self.config;
        let rel_change = self
            .prev_state
            .map(|prev| (curr_state - prev).abs() / prev.abs().max(TINY));

        let mut step = self.prev_step;
        if let (Some(prev), Some(rel)) = (self.prev_state, rel_change) {
            let within_dead_band = rel < cfg.dead_band;
            if !within_dead_band && curr_state < prev {
                step = self.prev_step * -0.5;
                if step.abs() < cfg.min_step {
                    step = cfg.min_step.copysign(step);
                }
            }
            if rel > cfg.reset_threshold {
                step = cfg.initial_step.abs().copysign(step);
            }
        }

        let ratio = (self.prev_ratio + step).clamp(0.0, 100.0);

        let next = if new_allocations {
            TunerState {
                prev_state: Some(curr_state),
                prev_step: step,
                prev_ratio: ratio,
                config: self.config,
            }
        } else {
            *self
        };
        (next, ratio)
    }
}

/// Something the control loop can run against: one sampling period at a
/// given ratio yields counters and the true normalized throughput.
pub trait Plant {
    fn sample(&mut self, ratio: f64) -> Result<PlantSample>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantSample {
    pub counters: CounterSample,
    pub throughput: f64,
}

/// A [`Simulation`] with its ratio-0 baseline.
#[derive(Debug, Clone)]
pub struct SimulatedPlant {
    sim: Simulation,
    baseline: Baseline,
}

impl SimulatedPlant {
    pub fn new(sim: Simulation) -> Result<Self> {
        let baseline = sim.baseline()?;
        Ok(Self { sim, baseline })
    }

    pub fn baseline(&self) -> &Baseline {
        &self.baseline
    }
}

impl Plant for SimulatedPlant {
    fn sample(&mut self, ratio: f64) -> Result<PlantSample> {
        let interval = self.sim.step_interval(ratio)?;
        Ok(PlantSample {
            counters: interval.sample,
            throughput: self.baseline.throughput_metric(&interval.steady)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopOptions {
    pub intervals: usize,
    /// New allocations arrive every this many intervals.
    pub allocation_every: usize,
    pub pages_per_allocation: u64,
}

impl Default for LoopOptions {
    fn default() -> Self {
        Self {
            intervals: 50,
            allocation_every: 1,
            pages_per_allocation: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    /// 1-based.
    pub interval: usize,
    /// Ratio in effect while the interval ran.
    pub ratio: f64,
    pub counters: CounterSample,
    pub estimate: f64,
    pub true_throughput: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub rows: Vec<LogRow>,
    pub pages: PageMap,
    pub final_state: TunerState,
}

pub const RUN_LOG_COLUMNS: [&str; 8] = [
    "interval",
    "ratio",
    "l1_miss_latency",
    "ddr_read_latency",
    "ipc",
    "total_bandwidth",
    "estimate",
    "true_throughput",
];

impl RunLog {
    pub fn terminal_ratio(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.ratio)
    }

    /// True throughput in the last interval.
    pub fn terminal_throughput(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.true_throughput)
    }

    /// Mean true throughput over the last `n` intervals.
    pub fn settled_throughput(&self, n: usize) -> f64 {
        let n = n.clamp(1, self.rows.len().max(1));
        let tail = &self.rows[self.rows.len().saturating_sub(n)..];
        if tail.is_empty() {
            return 0.0;
        }
        tail.iter().map(|r| r.true_throughput).sum::<f64>() / tail.len() as f64
    }

    pub fn to_table(&self) -> CsvTable {
        let mut table = CsvTable::new(RUN_LOG_COLUMNS.iter().map(|s| s.to_string()).collect());
        for r in &self.rows {
            table.push(vec![
                r.interval.to_string(),
                fmt_sig(r.ratio),
                fmt_sig(r.counters.l1_miss_latency),
                fmt_sig(r.counters.ddr_read_latency),
                fmt_sig(r.counters.ipc),
                fmt_sig(r.counters.total_bandwidth),
                fmt_sig(r.estimate),
                fmt_sig(r.true_throughput),
            ]);
        }
        table
    }
}

/// Runs the monitor / estimate / tune loop for `options.intervals` periods.
///
/// Every interval: sample the plant at the current ratio, smooth over the
/// window, estimate, then (every `tune_interval` periods) take one
/// controller step and apply its ratio to the allocation policy.
pub fn run_loop<P: Plant>(
    plant: &mut P,
    mut policy: AllocationPolicy,
    model: &ModelCoefficients,
    window: &mut SampleWindow,
    mut tuner: TunerState,
    options: &LoopOptions,
) -> Result<RunLog> {
    if policy.ratio().is_none() {
        return Err(Error::PolicyMode(policy.to_string()));
    }
    let features = model.features()?;
    let allocation_every = options.allocation_every.max(1);
    let tune_every = tuner.config.tune_interval.max(1) as usize;
    let mut pages = PageMap::new();
    let mut rows = Vec::with_capacity(options.intervals);

    for i in 0..options.intervals {
        let ratio = f64::from(policy.ratio().expect("interleave policy"));
        assert!((0.0..=100.0).contains(&ratio));

        let out = plant.sample(ratio)?;
        window.push(out.counters);
        let smoothed = window.moving_average()?;
        let values: Vec<f64> = features.iter().map(|f| f.value(&smoothed)).collect();
        let estimate = model.predict(&values)?;

        let new_allocations = i % allocation_every == 0;
        if new_allocations {
            pages.allocate(policy, options.pages_per_allocation, &Capacities::UNLIMITED)?;
        }
        if (i + 1) % tune_every == 0 {
            let (next, next_ratio) = tuner.tune_step(estimate, new_allocations);
            tuner = next;
            policy = set_ratio(policy, next_ratio)?;
        }

        rows.push(LogRow {
            interval: i + 1,
            ratio,
            counters: out.counters,
            estimate,
            true_throughput: out.throughput,
        });
    }

    Ok(RunLog {
        rows,
        pages,
        final_state: tuner,
    })
}
