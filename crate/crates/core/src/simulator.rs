//! Closed-loop analytic model of a two-tier memory system.
//!
//! Each workload issues instructions at a rate set by its CPI, and its CPI
//! grows with the average memory latency. Latency in turn grows with the
//! bandwidth all workloads push into each device. [`solve_steady_state`]
//! finds the self-consistent operating point for one page-allocation ratio;
//! [`Simulation`] wraps it in a sampling clock that synthesizes the counters
//! a monitoring daemon would read.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::device::{DeviceProfile, RHO_MAX};
use crate::error::{Error, Result};
use crate::workload::{check_ratio, traffic_split, TrafficSplit, WorkloadProfile};

pub const DEFAULT_CPU_FREQUENCY: f64 = 2.1e9;
pub const DEFAULT_SAMPLING_PERIOD: f64 = 1.0;

/// Latency damping applied to each fixed-point iterate.
const DAMPING: f64 = 0.5;
const TOLERANCE: f64 = 1e-6;
const MAX_ITERATIONS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    /// Core clock, Hz.
    pub cpu_frequency: f64,
    pub ddr_device: DeviceProfile,
    pub cxl_device: DeviceProfile,
    /// Relative standard deviation of the multiplicative counter noise.
    pub noise_sigma: f64,
    pub rng_seed: u64,
    /// Simulated seconds per counter sample.
    pub sampling_period: f64,
}

impl SystemConfig {
    pub fn new(ddr_device: DeviceProfile, cxl_device: DeviceProfile) -> Self {
        Self {
            cpu_frequency: DEFAULT_CPU_FREQUENCY,
            ddr_device,
            cxl_device,
            noise_sigma: 0.0,
            rng_seed: 0,
            sampling_period: DEFAULT_SAMPLING_PERIOD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cpu_frequency.is_finite() && self.cpu_frequency > 0.0) {
            return Err(Error::InvalidSystem(format!(
                "cpu_frequency must be > 0, got {}",
                self.cpu_frequency
            )));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::InvalidSystem(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        if !(self.sampling_period.is_finite() && self.sampling_period > 0.0) {
            return Err(Error::InvalidSystem(format!(
                "sampling_period must be > 0, got {}",
                self.sampling_period
            )));
        }
        self.ddr_device.validate()?;
        self.cxl_device.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadRate {
    pub name: String,
    /// Instructions per second across all of the workload's threads.
    pub instruction_rate: f64,
    /// Application operations per second.
    pub op_throughput: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub ratio: f64,
    pub workloads: Vec<WorkloadRate>,
    /// Offered bandwidth on the DDR device, bytes/s.
    pub ddr_bandwidth: f64,
    /// Offered bandwidth on the CXL device, bytes/s.
    pub cxl_bandwidth: f64,
    /// Traffic-weighted read fraction of all DRAM accesses.
    pub read_fraction: f64,
    pub avg_latency_ns: f64,
    pub ddr_read_latency_ns: f64,
    pub ipc: f64,
    /// Rates were scaled down to keep the binding device at `RHO_MAX`.
    pub saturated: bool,
    pub iterations: usize,
    /// `|g(L) - L| / L` at the returned iterate.
    pub residual: f64,
}

impl SteadyState {
    pub fn total_bandwidth(&self) -> f64 {
        self.ddr_bandwidth + self.cxl_bandwidth
    }

    pub fn op_throughputs(&self) -> Vec<f64> {
        self.workloads.iter().map(|w| w.op_throughput).collect()
    }
}

/// One interval's telemetry, in the units the monitoring side reads.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CounterSample {
    /// Average L1 miss latency, ns.
    pub l1_miss_latency: f64,
    /// DDR read latency, ns.
    pub ddr_read_latency: f64,
    pub ipc: f64,
    /// bytes/s
    pub total_bandwidth: f64,
    /// Simulated seconds at the end of the interval.
    pub timestamp: f64,
}

impl CounterSample {
    pub fn from_steady(steady: &SteadyState, timestamp: f64) -> Self {
        Self {
            l1_miss_latency: steady.avg_latency_ns,
            ddr_read_latency: steady.ddr_read_latency_ns,
            ipc: steady.ipc,
            total_bandwidth: steady.total_bandwidth(),
            timestamp,
        }
    }
}

/// Everything the model produces for one latency guess.
struct Evaluation {
    rates: Vec<f64>,
    ddr_bandwidth: f64,
    cxl_bandwidth: f64,
    read_fraction: f64,
    latency: f64,
    saturated: bool,
}

struct Model<'a> {
    workloads: &'a [WorkloadProfile],
    config: &'a SystemConfig,
    split: TrafficSplit,
}

impl Model<'_> {
    fn cycles_per_ns(&self) -> f64 {
        self.config.cpu_frequency * 1e-9
    }

    /// Latency floor: every device at zero load.
    fn idle_latency(&self, read_fraction: f64) -> f64 {
        self.split.ddr * self.config.ddr_device.blended_idle_latency(read_fraction)
            + self.split.cxl * self.config.cxl_device.blended_idle_latency(read_fraction)
    }

    fn evaluate(&self, latency: f64) -> Evaluation {
        let freq = self.config.cpu_frequency;
        let mut rates: Vec<f64> = self
            .workloads
            .iter()
            .map(|w| {
                let cpi = w.cpi_base + w.miss_per_instruction * latency * self.cycles_per_ns() / w.mlp;
                f64::from(w.threads) * freq / cpi
            })
            .collect();

        let traffic: Vec<f64> = self
            .workloads
            .iter()
            .zip(&rates)
            .map(|(w, r)| r * w.miss_per_instruction * w.line_size)
            .collect();
        let total: f64 = traffic.iter().sum();
        let read_fraction = if total > 0.0 {
            self.workloads
                .iter()
                .zip(&traffic)
                .map(|(w, t)| w.read_fraction * t)
                .sum::<f64>()
                / total
        } else {
            self.workloads.iter().map(|w| w.read_fraction).sum::<f64>() / self.workloads.len() as f64
        };

        let ddr = &self.config.ddr_device;
        let cxl = &self.config.cxl_device;
        let mut ddr_bw = total * self.split.ddr;
        let mut cxl_bw = total * self.split.cxl;
        let rho = ddr
            .utilization(ddr_bw, read_fraction)
            .max(cxl.utilization(cxl_bw, read_fraction));
        let saturated = rho > RHO_MAX;
        if saturated {
            let scale = RHO_MAX / rho;
            rates.iter_mut().for_each(|r| *r *= scale);
            ddr_bw *= scale;
            cxl_bw *= scale;
        }

        let latency = self.split.ddr * ddr.loaded_latency(ddr_bw, read_fraction)
            + self.split.cxl * cxl.loaded_latency(cxl_bw, read_fraction);
        Evaluation {
            rates,
            ddr_bandwidth: ddr_bw,
            cxl_bandwidth: cxl_bw,
            read_fraction,
            latency,
            saturated,
        }
    }
}

/// Solves for the self-consistent operating point at `ratio` percent of
/// pages on CXL.
///
/// The iteration is `L <- 0.5 L + 0.5 g(L)`, where `g` maps a latency guess
/// to the latency the resulting traffic would see. `g` is non-increasing, so
/// every iterate also tightens a bracket around the root of `L - g(L)`; a
/// damped step that leaves the bracket is replaced by bisection. This keeps
/// the solver convergent when the latency curve is steep near saturation,
/// and so does forcing a bisection whenever two steps fail to halve the
/// bracket.
pub fn solve_steady_state(
    workloads: &[WorkloadProfile],
    config: &SystemConfig,
    ratio: f64,
) -> Result<SteadyState> {
    if workloads.is_empty() {
        return Err(Error::NoWorkloads);
    }
    let split = traffic_split(ratio)?;
    let model = Model {
        workloads,
        config,
        split,
    };

    // g(L) >= idle latency of the mix, so the floor has L - g(L) <= 0 and
    // g(floor) has L - g(L) >= 0.
    let first = model.evaluate(0.0);
    let floor = model.idle_latency(first.read_fraction).min(first.latency);
    let mut lo = floor;
    let mut hi = model.evaluate(floor).latency.max(floor);
    let mut latency = floor;
    let mut width_two_steps_ago = f64::INFINITY;
    let mut width_last_step = f64::INFINITY;

    for iteration in 1..=MAX_ITERATIONS {
        let eval = model.evaluate(latency);
        let residual = if latency > 0.0 {
            (eval.latency - latency).abs() / latency
        } else {
            (eval.latency - latency).abs()
        };
        if residual < TOLERANCE {
            debug_assert!(residual < TOLERANCE);
            return Ok(steady_from(ratio, &model, eval, iteration, residual));
        }
        if eval.latency > latency {
            lo = lo.max(latency);
        } else {
            hi = hi.min(latency);
        }
        let width = hi - lo;
        let stalled = width > 0.5 * width_two_steps_ago;
        width_two_steps_ago = width_last_step;
        width_last_step = width;
        let damped = (1.0 - DAMPING) * latency + DAMPING * eval.latency;
        latency = if damped > lo && damped < hi && !stalled {
            damped
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(Error::NonConvergence {
        iterations: MAX_ITERATIONS,
        last_latency_ns: latency,
    })
}

fn steady_from(
    ratio: f64,
    model: &Model<'_>,
    eval: Evaluation,
    iterations: usize,
    residual: f64,
) -> SteadyState {
    let config = model.config;
    let workloads = model
        .workloads
        .iter()
        .zip(&eval.rates)
        .map(|(w, &rate)| WorkloadRate {
            name: w.name.clone(),
            instruction_rate: rate,
            op_throughput: rate / w.instructions_per_op,
        })
        .collect();
    let total_threads: f64 = model.workloads.iter().map(|w| f64::from(w.threads)).sum();
    let ipc = eval.rates.iter().sum::<f64>() / (total_threads * config.cpu_frequency);
    SteadyState {
        ratio,
        workloads,
        ddr_bandwidth: eval.ddr_bandwidth,
        cxl_bandwidth: eval.cxl_bandwidth,
        read_fraction: eval.read_fraction,
        avg_latency_ns: eval.latency,
        ddr_read_latency_ns: config
            .ddr_device
            .loaded_read_latency(eval.ddr_bandwidth, eval.read_fraction),
        ipc,
        saturated: eval.saturated,
        iterations,
        residual,
    }
}

/// Per-workload throughput at ratio 0, the reference every normalized
/// throughput is measured against.
#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    names: Vec<String>,
    ops: Vec<f64>,
}

impl Baseline {
    pub fn new(names: Vec<String>, ops: Vec<f64>) -> Result<Self> {
        if names.len() != ops.len() {
            return Err(Error::LengthMismatch(names.len(), ops.len()));
        }
        if names.is_empty() {
            return Err(Error::NoWorkloads);
        }
        if let Some(i) = ops.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::ZeroBaseline(names[i].clone()));
        }
        Ok(Self { names, ops })
    }

    pub fn measure(workloads: &[WorkloadProfile], config: &SystemConfig) -> Result<Self> {
        let steady = solve_steady_state(workloads, config, 0.0)?;
        Self::from_steady(&steady)
    }

    pub fn from_steady(steady: &SteadyState) -> Result<Self> {
        Self::new(
            steady.workloads.iter().map(|w| w.name.clone()).collect(),
            steady.op_throughputs(),
        )
    }

    pub fn ops(&self) -> &[f64] {
        &self.ops
    }

    /// Normalized throughput of `steady`; the geometric mean across
    /// workloads when there is more than one.
    pub fn throughput_metric(&self, steady: &SteadyState) -> Result<f64> {
        let ops = steady.op_throughputs();
        if ops.len() != self.ops.len() {
            return Err(Error::LengthMismatch(ops.len(), self.ops.len()));
        }
        let ratios: Vec<f64> = ops.iter().zip(&self.ops).map(|(o, b)| o / b).collect();
        Ok(geometric_mean(&ratios))
    }
}

/// Free-function form of [`Baseline::throughput_metric`].
pub fn throughput_metric(steady: &SteadyState, baseline: &Baseline) -> Result<f64> {
    baseline.throughput_metric(steady)
}

pub fn geometric_mean(values: &[f64]) -> f64 {
    if values.len() == 1 {
        return values[0];
    }
    let log_sum: f64 = values.iter().map(|v| v.ln()).sum();
    (log_sum / values.len() as f64).exp()
}

/// Output of one sampling period.
#[derive(Debug, Clone, PartialEq)]
pub struct Interval {
    pub sample: CounterSample,
    pub steady: SteadyState,
}

/// A simulated machine with its own clock and counter-noise RNG.
#[derive(Debug, Clone)]
pub struct Simulation {
    config: SystemConfig,
    workloads: Vec<WorkloadProfile>,
    clock: f64,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
}

impl Simulation {
    pub fn new(config: SystemConfig, workloads: Vec<WorkloadProfile>) -> Result<Self> {
        config.validate()?;
        if workloads.is_empty() {
            return Err(Error::NoWorkloads);
        }
        for w in &workloads {
            w.validate()?;
        }
        let noise = if config.noise_sigma > 0.0 {
            Some(Normal::new(1.0, config.noise_sigma).map_err(|e| Error::InvalidSystem(e.to_string()))?)
        } else {
            None
        };
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
            config,
            workloads,
            clock: 0.0,
            noise,
        })
    }

    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    pub fn workloads(&self) -> &[WorkloadProfile] {
        &self.workloads
    }

    /// Simulated seconds elapsed.
    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn baseline(&self) -> Result<Baseline> {
        Baseline::measure(&self.workloads, &self.config)
    }

    /// Advances one sampling period at `ratio` and returns the (possibly
    /// noisy) counters alongside the exact steady state.
    pub fn step_interval(&mut self, ratio: f64) -> Result<Interval> {
        check_ratio(ratio)?;
        let steady = solve_steady_state(&self.workloads, &self.config, ratio)?;
        self.clock += self.config.sampling_period;
        let mut sample = CounterSample::from_steady(&steady, self.clock);
        if let Some(noise) = &self.noise {
            let rng = &mut self.rng;
            for field in [
                &mut sample.l1_miss_latency,
                &mut sample.ddr_read_latency,
                &mut sample.ipc,
                &mut sample.total_bandwidth,
            ] {
                *field = (*field * noise.sample(rng)).max(0.0);
            }
        }
        Ok(Interval { sample, steady })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::EfficiencyPoint;
    use approx::assert_relative_eq;

    fn device(name: &str, read: f64, bw: f64, eff: f64) -> DeviceProfile {
        DeviceProfile::new(
            name,
            read,
            read * 2.3,
            bw,
            vec![EfficiencyPoint::new(0.0, eff * 0.5), EfficiencyPoint::new(1.0, eff)],
            2.0,
        )
        .unwrap()
    }

    fn system() -> SystemConfig {
        SystemConfig::new(
            device("ddr", 110.0, 76.8e9, 0.78),
            device("cxl", 222.75, 38.4e9, 0.46),
        )
    }

    fn workload(mpi: f64, mlp: f64, threads: u32) -> WorkloadProfile {
        WorkloadProfile {
            name: format!("w-{mpi}-{mlp}"),
            threads,
            cpi_base: 0.8,
            miss_per_instruction: mpi,
            read_fraction: 0.9,
            mlp,
            line_size: 64.0,
            instructions_per_op: 1e4,
        }
    }

    #[test]
    fn memory_insensitive_runs_at_base_cpi() {
        let cfg = system();
        let w = workload(0.0, 1.0, 4);
        for ratio in [0.0, 37.0, 100.0] {
            let s = solve_steady_state(std::slice::from_ref(&w), &cfg, ratio).unwrap();
            assert_eq!(s.workloads[0].instruction_rate, 4.0 * cfg.cpu_frequency / 0.8);
            assert_eq!(s.ddr_bandwidth, 0.0);
            assert_eq!(s.cxl_bandwidth, 0.0);
        }
    }

    #[test]
    fn identical_devices_are_ratio_neutral() {
        let d = device("same", 120.0, 38.4e9, 0.7);
        let cfg = SystemConfig::new(d.clone(), d);
        let w = [workload(0.01, 4.0, 16)];
        let a = solve_steady_state(&w, &cfg, 0.0).unwrap();
        let b = solve_steady_state(&w, &cfg, 100.0).unwrap();
        assert_relative_eq!(
            a.workloads[0].op_throughput,
            b.workloads[0].op_throughput,
            max_relative = 1e-9
        );
    }

    #[test]
    fn fixed_point_residual_is_small() {
        let cfg = system();
        let ws = [workload(0.02, 16.0, 32), workload(0.002, 1.0, 8)];
        for ratio in (0..=100).step_by(5) {
            let s = solve_steady_state(&ws, &cfg, ratio as f64).unwrap();
            assert!(s.residual < 1e-6, "ratio {ratio}: residual {}", s.residual);
            assert!(s.ddr_bandwidth <= cfg.ddr_device.effective_bandwidth(s.read_fraction));
            assert!(s.cxl_bandwidth <= cfg.cxl_device.effective_bandwidth(s.read_fraction));
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = system();
        assert!(matches!(solve_steady_state(&[], &cfg, 0.0), Err(Error::NoWorkloads)));
        let w = [workload(0.01, 2.0, 1)];
        assert!(matches!(
            solve_steady_state(&w, &cfg, 101.0),
            Err(Error::RatioOutOfRange(_))
        ));
    }

    #[test]
    fn ddr_idle_when_all_pages_on_cxl() {
        let mut sim = Simulation::new(system(), vec![workload(0.01, 4.0, 8)]).unwrap();
        let iv = sim.step_interval(100.0).unwrap();
        assert_eq!(iv.sample.ddr_read_latency, 110.0);
        assert_eq!(iv.sample.timestamp, 1.0);
    }

    #[test]
    fn noiseless_sample_matches_steady_state() {
        let mut sim = Simulation::new(system(), vec![workload(0.01, 4.0, 8)]).unwrap();
        let iv = sim.step_interval(40.0).unwrap();
        assert_eq!(iv.sample.l1_miss_latency, iv.steady.avg_latency_ns);
        assert_eq!(iv.sample.ddr_read_latency, iv.steady.ddr_read_latency_ns);
        assert_eq!(iv.sample.ipc, iv.steady.ipc);
        assert_eq!(iv.sample.total_bandwidth, iv.steady.total_bandwidth());
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let mut cfg = system();
        cfg.noise_sigma = 0.05;
        cfg.rng_seed = 7;
        let run = || {
            let mut sim = Simulation::new(cfg.clone(), vec![workload(0.01, 4.0, 8)]).unwrap();
            (0..10)
                .map(|i| sim.step_interval(i as f64 * 10.0).unwrap().sample)
                .collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a, run());
        let steady = solve_steady_state(&[workload(0.01, 4.0, 8)], &cfg, 0.0).unwrap();
        assert_ne!(a[0].ipc, steady.ipc);
    }

    #[test]
    fn throughput_metric_examples() {
        let base = Baseline::new(vec!["a".into()], vec![10.0]).unwrap();
        let cfg = system();
        let w = [workload(0.01, 4.0, 8)];
        let at_zero = solve_steady_state(&w, &cfg, 0.0).unwrap();
        let own = Baseline::from_steady(&at_zero).unwrap();
        assert_eq!(own.throughput_metric(&at_zero).unwrap(), 1.0);
        assert!(base.throughput_metric(&at_zero).is_ok());

        assert_relative_eq!(geometric_mean(&[2.0, 2.0]), 2.0, max_relative = 1e-15);
        assert_relative_eq!(geometric_mean(&[1.0, 4.0]), 2.0, max_relative = 1e-15);
        assert!(matches!(
            Baseline::new(vec!["z".into()], vec![0.0]),
            Err(Error::ZeroBaseline(_))
        ));
    }
}
