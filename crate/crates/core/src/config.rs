//! TOML config: devices, workloads, scenarios, controller settings.

use std::collections::HashSet;
use std::path::Path;
use std::sync::OnceLock;

use serde::Deserialize;

use crate::device::DeviceProfile;
use crate::error::{Error, Result};
use crate::simulator::{SystemConfig, DEFAULT_CPU_FREQUENCY, DEFAULT_SAMPLING_PERIOD};
use crate::tuner::{LoopOptions, TunerConfig};
use crate::workload::{check_ratio, WorkloadProfile};

pub const DEFAULT_CONFIG: &str = include_str!("../config/default.toml");

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    pub cpu_frequency: f64,
    pub sampling_period: f64,
}

impl Default for SystemSection {
    fn default() -> Self {
        Self {
            cpu_frequency: DEFAULT_CPU_FREQUENCY,
            sampling_period: DEFAULT_SAMPLING_PERIOD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopSection {
    /// Moving-average window, samples.
    pub window: usize,
    /// Trailing intervals averaged into the tuned throughput.
    pub settle_intervals: usize,
    pub allocation_every: usize,
    pub pages_per_allocation: u64,
}

impl Default for LoopSection {
    fn default() -> Self {
        Self {
            window: crate::estimator::DEFAULT_WINDOW,
            settle_intervals: 10,
            allocation_every: 1,
            pages_per_allocation: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum WorkloadRef {
    Name(String),
    Override {
        profile: String,
        #[serde(default)]
        threads: Option<u32>,
    },
}

impl WorkloadRef {
    pub fn profile(&self) -> &str {
        match self {
            WorkloadRef::Name(n) => n,
            WorkloadRef::Override { profile, .. } => profile,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioEntry {
    pub name: String,
    pub ddr: String,
    pub cxl: String,
    pub workloads: Vec<WorkloadRef>,
    #[serde(default = "default_start_ratio")]
    pub start_ratio: f64,
    #[serde(default = "default_intervals")]
    pub intervals: usize,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_fit_ratios")]
    pub fit_ratios: Vec<f64>,
    #[serde(default)]
    pub output: Option<String>,
}

fn default_start_ratio() -> f64 {
    50.0
}

fn default_intervals() -> usize {
    50
}

fn default_fit_ratios() -> Vec<f64> {
    (0..=10).map(|i| f64::from(i) * 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub system: SystemSection,
    #[serde(default)]
    pub tuner: TunerConfig,
    #[serde(default, rename = "loop")]
    pub loop_: LoopSection,
    #[serde(default)]
    pub devices: Vec<DeviceProfile>,
    #[serde(default)]
    pub workloads: Vec<WorkloadProfile>,
    #[serde(default)]
    pub scenarios: Vec<ScenarioEntry>,
}

/// A scenario with every reference resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub system: SystemConfig,
    pub workloads: Vec<WorkloadProfile>,
    pub start_ratio: f64,
    pub intervals: usize,
    pub fit_ratios: Vec<f64>,
    pub output: Option<String>,
    pub tuner: TunerConfig,
    pub window: usize,
    pub settle_intervals: usize,
    pub loop_options: LoopOptions,
}

impl Config {
    /// Parses and validates a config document.
    pub fn parse(text: &str) -> Result<Self> {
        let config: Config = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// The shipped default config.
    pub fn builtin() -> &'static Config {
        static BUILTIN: OnceLock<Config> = OnceLock::new();
        BUILTIN.get_or_init(|| Config::parse(DEFAULT_CONFIG).expect("shipped config is valid"))
    }

    pub fn validate(&self) -> Result<()> {
        let sys = &self.system;
        if !(sys.cpu_frequency.is_finite() && sys.cpu_frequency > 0.0) {
            return Err(Error::Config(format!(
                "system.cpu_frequency must be > 0, got {}",
                sys.cpu_frequency
            )));
        }
        if !(sys.sampling_period.is_finite() && sys.sampling_period > 0.0) {
            return Err(Error::Config(format!(
                "system.sampling_period must be > 0, got {}",
                sys.sampling_period
            )));
        }
        self.tuner.validate()?;
        if self.loop_.window == 0 {
            return Err(Error::Config("loop.window must be >= 1".into()));
        }
        if self.loop_.settle_intervals == 0 {
            return Err(Error::Config("loop.settle_intervals must be >= 1".into()));
        }
        if self.loop_.allocation_every == 0 {
            return Err(Error::Config("loop.allocation_every must be >= 1".into()));
        }

        unique_names("device", self.devices.iter().map(|d| d.name.as_str()))?;
        unique_names("workload", self.workloads.iter().map(|w| w.name.as_str()))?;
        unique_names("scenario", self.scenarios.iter().map(|s| s.name.as_str()))?;
        for d in &self.devices {
            d.validate()?;
        }
        for w in &self.workloads {
            w.validate()?;
        }
        for s in &self.scenarios {
            self.device(&s.ddr)?;
            self.device(&s.cxl)?;
            if s.workloads.is_empty() {
                return Err(Error::Config(format!("scenario `{}` has no workloads", s.name)));
            }
            for w in &s.workloads {
                self.workload(w.profile())?;
                if let WorkloadRef::Override { threads: Some(0), .. } = w {
                    return Err(Error::Config(format!(
                        "scenario `{}`: threads override must be >= 1",
                        s.name
                    )));
                }
            }
            check_ratio(s.start_ratio)?;
            for &r in &s.fit_ratios {
                check_ratio(r)?;
            }
            if s.intervals == 0 {
                return Err(Error::Config(format!("scenario `{}`: intervals must be >= 1", s.name)));
            }
            if !(s.noise_sigma.is_finite() && s.noise_sigma >= 0.0) {
                return Err(Error::Config(format!(
                    "scenario `{}`: noise_sigma must be >= 0",
                    s.name
                )));
            }
        }
        Ok(())
    }

    pub fn device(&self, name: &str) -> Result<&DeviceProfile> {
        self.devices
            .iter()
            .find(|d| d.name == name)
            .ok_or_else(|| Error::UnknownName {
                kind: "device",
                name: name.to_owned(),
            })
    }

    pub fn workload(&self, name: &str) -> Result<&WorkloadProfile> {
        self.workloads
            .iter()
            .find(|w| w.name == name)
            .ok_or_else(|| Error::UnknownName {
                kind: "workload",
                name: name.to_owned(),
            })
    }

    pub fn scenario(&self, name: &str) -> Result<Scenario> {
        let entry = self
            .scenarios
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::UnknownName {
                kind: "scenario",
                name: name.to_owned(),
            })?;
        let workloads = entry
            .workloads
            .iter()
            .map(|r| {
                let base = self.workload(r.profile())?.clone();
                Ok(match r {
                    WorkloadRef::Override {
                        threads: Some(t), ..
                    } => base.with_threads(*t),
                    _ => base,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let system = SystemConfig {
            cpu_frequency: self.system.cpu_frequency,
            ddr_device: self.device(&entry.ddr)?.clone(),
            cxl_device: self.device(&entry.cxl)?.clone(),
            noise_sigma: entry.noise_sigma,
            rng_seed: entry.seed,
            sampling_period: self.system.sampling_period,
        };
        Ok(Scenario {
            name: entry.name.clone(),
            system,
            workloads,
            start_ratio: entry.start_ratio,
            intervals: entry.intervals,
            fit_ratios: entry.fit_ratios.clone(),
            output: entry.output.clone(),
            tuner: self.tuner,
            window: self.loop_.window,
            settle_intervals: self.loop_.settle_intervals,
            loop_options: LoopOptions {
                intervals: entry.intervals,
                allocation_every: self.loop_.allocation_every,
                pages_per_allocation: self.loop_.pages_per_allocation,
            },
        })
    }
}

fn unique_names<'a>(kind: &str, names: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = HashSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(Error::Config(format!("duplicate {kind} name `{n}`")));
        }
    }
    Ok(())
}
