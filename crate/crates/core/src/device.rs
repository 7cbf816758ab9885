//! Memory device characterization: idle latency, deliverable bandwidth as a
//! function of the read/write mix, and a load-dependent latency curve.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Utilization cap applied inside [`DeviceProfile::loaded_latency`].
pub const RHO_MAX: f64 = 0.999;

pub const DEFAULT_CONTENTION_EXPONENT: f64 = 2.0;

/// Where an efficiency anchor came from. Carried through the config so that
/// measured anchors stay distinguishable from filled-in ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorOrigin {
    /// Quoted directly from a hardware measurement.
    Measured,
    /// Computed from measured values (e.g. a relative store penalty).
    Derived,
    #[default]
    Interpolated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyPoint {
    pub read_fraction: f64,
    pub efficiency: f64,
    #[serde(default)]
    pub origin: AnchorOrigin,
}

impl EfficiencyPoint {
    pub fn new(read_fraction: f64, efficiency: f64) -> Self {
        Self {
            read_fraction,
            efficiency,
            origin: AnchorOrigin::Interpolated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub name: String,
    /// Unloaded parallel-load latency, ns.
    pub idle_read_latency: f64,
    /// Unloaded store latency, ns. Includes the write-allocate read.
    pub idle_write_latency: f64,
    /// Channel maximum, bytes/s.
    pub theoretical_bandwidth: f64,
    pub efficiency_table: Vec<EfficiencyPoint>,
    #[serde(default = "default_exponent")]
    pub contention_exponent: f64,
}

fn default_exponent() -> f64 {
    DEFAULT_CONTENTION_EXPONENT
}

impl DeviceProfile {
    /// Builds and validates a profile.
    pub fn new(
        name: impl Into<String>,
        idle_read_latency: f64,
        idle_write_latency: f64,
        theoretical_bandwidth: f64,
        efficiency_table: Vec<EfficiencyPoint>,
        contention_exponent: f64,
    ) -> Result<Self> {
        let profile = Self {
            name: name.into(),
            idle_read_latency,
            idle_write_latency,
            theoretical_bandwidth,
            efficiency_table,
            contention_exponent,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::InvalidDevice {
            name: self.name.clone(),
            reason,
        };
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.idle_read_latency) {
            return Err(bad(format!(
                "idle_read_latency must be > 0, got {}",
                self.idle_read_latency
            )));
        }
        if !positive(self.idle_write_latency) {
            return Err(bad(format!(
                "idle_write_latency must be > 0, got {}",
                self.idle_write_latency
            )));
        }
        if !positive(self.theoretical_bandwidth) {
            return Err(bad(format!(
                "theoretical_bandwidth must be > 0, got {}",
                self.theoretical_bandwidth
            )));
        }
        if !positive(self.contention_exponent) {
            return Err(bad(format!(
                "contention_exponent must be > 0, got {}",
                self.contention_exponent
            )));
        }
        if self.efficiency_table.len() < 2 {
            return Err(bad("efficiency_table needs at least two points".into()));
        }
        for p in &self.efficiency_table {
            if !(p.read_fraction.is_finite() && (0.0..=1.0).contains(&p.read_fraction)) {
                return Err(bad(format!(
                    "read_fraction {} outside [0, 1]",
                    p.read_fraction
                )));
            }
            if !(p.efficiency.is_finite() && p.efficiency > 0.0 && p.efficiency <= 1.0) {
                return Err(bad(format!("efficiency {} outside (0, 1]", p.efficiency)));
            }
        }
        if self
            .efficiency_table
            .windows(2)
            .any(|w| w[1].read_fraction <= w[0].read_fraction)
        {
            return Err(bad("read_fraction must be strictly increasing".into()));
        }
        Ok(())
    }

    /// Bandwidth efficiency at `read_fraction`: piecewise-linear over the
    /// table, held at the end values outside it.
    pub fn efficiency(&self, read_fraction: f64) -> f64 {
        let table = &self.efficiency_table;
        let first = table[0];
        let last = table[table.len() - 1];
        if read_fraction <= first.read_fraction {
            return first.efficiency;
        }
        if read_fraction >= last.read_fraction {
            return last.efficiency;
        }
        let hi = table.partition_point(|p| p.read_fraction <= read_fraction);
        let (a, b) = (table[hi - 1], table[hi]);
        let t = (read_fraction - a.read_fraction) / (b.read_fraction - a.read_fraction);
        a.efficiency + t * (b.efficiency - a.efficiency)
    }

    /// Deliverable bandwidth in bytes/s for the given read/write mix.
    pub fn effective_bandwidth(&self, read_fraction: f64) -> f64 {
        self.theoretical_bandwidth * self.efficiency(read_fraction)
    }

    /// Read/write blend of the idle latencies.
    pub fn blended_idle_latency(&self, read_fraction: f64) -> f64 {
        let f = read_fraction.clamp(0.0, 1.0);
        f * self.idle_read_latency + (1.0 - f) * self.idle_write_latency
    }

    /// Offered load over deliverable bandwidth, unclamped.
    pub fn utilization(&self, offered_bandwidth: f64, read_fraction: f64) -> f64 {
        offered_bandwidth / self.effective_bandwidth(read_fraction)
    }

    /// Queueing multiplier on idle latency: `1 + rho^k * rho / (1 - rho)`,
    /// with `rho` clamped to `[0, RHO_MAX]`.
    pub fn contention_factor(&self, offered_bandwidth: f64, read_fraction: f64) -> f64 {
        let rho = self
            .utilization(offered_bandwidth, read_fraction)
            .clamp(0.0, RHO_MAX);
        if rho == 0.0 {
            return 1.0;
        }
        1.0 + rho.powf(self.contention_exponent) * rho / (1.0 - rho)
    }

    /// Average access latency in ns when `offered_bandwidth` bytes/s of the
    /// given mix are directed at the device. Equals the blended idle latency
    /// at zero load.
    pub fn loaded_latency(&self, offered_bandwidth: f64, read_fraction: f64) -> f64 {
        self.blended_idle_latency(read_fraction)
            * self.contention_factor(offered_bandwidth, read_fraction)
    }

    /// Read-path latency under the same load.
    pub fn loaded_read_latency(&self, offered_bandwidth: f64, read_fraction: f64) -> f64 {
        self.idle_read_latency * self.contention_factor(offered_bandwidth, read_fraction)
    }
}
