#![allow(dead_code)]

use cxl_tiering::allocator::AllocationPolicy;
use cxl_tiering::config::{Config, Scenario};
use cxl_tiering::estimator::{ModelCoefficients, SampleWindow};
use cxl_tiering::harness::{oracle_from_curve, OracleResult};
use cxl_tiering::simulator::CounterSample;
use cxl_tiering::tuner::{run_loop, LoopOptions, Plant, PlantSample, RunLog, TunerConfig, TunerState};
use cxl_tiering::Result;
use rand::Rng;

pub fn scenario(name: &str) -> Scenario {
    Config::builtin().scenario(name).unwrap()
}

/// Strictly unimodal curve: a power-law tent peaking at `peak_ratio`, with
/// an independent relative drop on each side.
#[derive(Debug, Clone, Copy)]
pub struct TentCurve {
    pub peak_ratio: f64,
    pub peak: f64,
    pub power: f64,
    pub drop_left: f64,
    pub drop_right: f64,
}

impl TentCurve {
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        Self {
            peak_ratio: rng.gen_range(0.0..=100.0),
            peak: rng.gen_range(0.5..2.0),
            power: rng.gen_range(1.5..=3.0),
            drop_left: rng.gen_range(0.2..=0.9),
            drop_right: rng.gen_range(0.2..=0.9),
        }
    }

    pub fn value(&self, ratio: f64) -> f64 {
        let (span, drop) = if ratio < self.peak_ratio {
            (self.peak_ratio, self.drop_left)
        } else {
            (100.0 - self.peak_ratio, self.drop_right)
        };
        if span <= 0.0 {
            return self.peak;
        }
        let x = (ratio - self.peak_ratio).abs() / span;
        self.peak * (1.0 - drop * x.powf(self.power))
    }

    pub fn oracle(&self) -> OracleResult {
        oracle_from_curve((0..=100).map(|r| self.value(f64::from(r))).collect())
    }
}

/// Exposes a curve through the `ipc` counter, so an identity model on `ipc`
/// is a noise-free estimator of true throughput.
pub struct CurvePlant(pub TentCurve);

impl Plant for CurvePlant {
    fn sample(&mut self, ratio: f64) -> Result<PlantSample> {
        let v = self.0.value(ratio);
        Ok(PlantSample {
            counters: CounterSample {
                ipc: v,
                ..CounterSample::default()
            },
            throughput: v,
        })
    }
}

pub fn identity_model() -> ModelCoefficients {
    ModelCoefficients::new(0.0, vec![1.0], vec!["ipc".into()]).unwrap()
}

pub fn run_curve(curve: TentCurve, start: f64, intervals: usize, config: TunerConfig) -> RunLog {
    let mut plant = CurvePlant(curve);
    run_loop(
        &mut plant,
        AllocationPolicy::interleave(start),
        &identity_model(),
        &mut SampleWindow::new(1),
        TunerState::new(start, config).unwrap(),
        &LoopOptions {
            intervals,
            ..LoopOptions::default()
        },
    )
    .unwrap()
}
