//! Abstract application profiles and the ratio-to-traffic mapping.

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadProfile {
    pub name: String,
    pub threads: u32,
    /// Cycles per instruction excluding DRAM stalls.
    pub cpi_base: f64,
    /// DRAM accesses per instruction.
    pub miss_per_instruction: f64,
    pub read_fraction: f64,
    /// Memory-level parallelism; divides the latency penalty.
    pub mlp: f64,
    #[serde(default = "default_line_size")]
    pub line_size: f64,
    pub instructions_per_op: f64,
}

fn default_line_size() -> f64 {
    64.0
}

impl WorkloadProfile {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::InvalidWorkload {
            name: self.name.clone(),
            reason,
        };
        if self.threads == 0 {
            return Err(bad("threads must be >= 1".into()));
        }
        if !(self.cpi_base.is_finite() && self.cpi_base > 0.0) {
            return Err(bad(format!("cpi_base must be > 0, got {}", self.cpi_base)));
        }
        if !(self.miss_per_instruction.is_finite() && self.miss_per_instruction >= 0.0) {
            return Err(bad(format!(
                "miss_per_instruction must be >= 0, got {}",
                self.miss_per_instruction
            )));
        }
        if !(self.read_fraction.is_finite() && (0.0..=1.0).contains(&self.read_fraction)) {
            return Err(bad(format!(
                "read_fraction must be in [0, 1], got {}",
                self.read_fraction
            )));
        }
        if !(self.mlp.is_finite() && self.mlp >= 1.0) {
            return Err(bad(format!("mlp must be >= 1, got {}", self.mlp)));
        }
        if !(self.line_size.is_finite() && self.line_size > 0.0) {
            return Err(bad(format!("line_size must be > 0, got {}", self.line_size)));
        }
        if !(self.instructions_per_op.is_finite() && self.instructions_per_op > 0.0) {
            return Err(bad(format!(
                "instructions_per_op must be > 0, got {}",
                self.instructions_per_op
            )));
        }
        Ok(())
    }

    pub fn is_memory_insensitive(&self) -> bool {
        self.miss_per_instruction == 0.0
    }

    pub fn with_threads(mut self, threads: u32) -> Self {
        self.threads = threads;
        self
    }
}

/// Workload profiles shipped in the default config.
pub fn builtin_profiles() -> Vec<WorkloadProfile> {
    Config::builtin().workloads.clone()
}

/// Share of memory traffic landing on each tier, as `(ddr, cxl)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficSplit {
    pub ddr: f64,
    pub cxl: f64,
}

/// Splits traffic proportionally to page placement. Pages are assumed to be
/// accessed uniformly, so `ratio` percent of pages on CXL draws `ratio`
/// percent of the traffic.
pub fn traffic_split(ratio: f64) -> Result<TrafficSplit> {
    check_ratio(ratio)?;
    let cxl = ratio / 100.0;
    Ok(TrafficSplit {
        ddr: 1.0 - cxl,
        cxl,
    })
}

pub(crate) fn check_ratio(ratio: f64) -> Result<()> {
    if ratio.is_finite() && (0.0..=100.0).contains(&ratio) {
        Ok(())
    } else {
        Err(Error::RatioOutOfRange(ratio))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn split_examples() {
        assert_eq!(traffic_split(0.0).unwrap(), TrafficSplit { ddr: 1.0, cxl: 0.0 });
        assert_eq!(traffic_split(25.0).unwrap(), TrafficSplit { ddr: 0.75, cxl: 0.25 });
        assert_eq!(traffic_split(100.0).unwrap(), TrafficSplit { ddr: 0.0, cxl: 1.0 });
    }

    #[test]
    fn split_rejects_out_of_range() {
        assert!(matches!(traffic_split(-0.5), Err(Error::RatioOutOfRange(_))));
        assert!(matches!(traffic_split(100.5), Err(Error::RatioOutOfRange(_))));
        assert!(traffic_split(f64::NAN).is_err());
    }

    #[test]
    fn builtins_have_expected_shape() {
        let profiles = builtin_profiles();
        let get = |n: &str| profiles.iter().find(|p| p.name == n).unwrap();
        let dlrm = get("dlrm-like");
        let redis = get("redis-like");
        get("specmix-like");
        assert!(dlrm.mlp > 1.0);
        assert!(redis.mlp < dlrm.mlp);
        assert!(dlrm.read_fraction > 0.5);
        assert!(dlrm.miss_per_instruction > redis.miss_per_instruction);
        for p in &profiles {
            p.validate().unwrap();
        }
    }

    proptest! {
        #[test]
        fn split_sums_to_one_and_is_monotone(a in 0.0f64..=100.0, b in 0.0f64..=100.0) {
            let sa = traffic_split(a).unwrap();
            let sb = traffic_split(b).unwrap();
            prop_assert_eq!(sa.ddr + sa.cxl, 1.0);
            if a <= b {
                prop_assert!(sa.cxl <= sb.cxl);
            }
        }
    }
}
