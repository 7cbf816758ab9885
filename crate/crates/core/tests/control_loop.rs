mod common;

use cxl_tiering::allocator::AllocationPolicy;
use cxl_tiering::estimator::{Feature, SampleWindow};
use cxl_tiering::harness::{cmd_fit, cmd_oracle, cmd_tune};
use cxl_tiering::simulator::Simulation;
use cxl_tiering::tuner::{run_loop, SimulatedPlant, TunerConfig, TunerState};
use proptest::prelude::*;

use common::{run_curve, scenario, TentCurve};

#[test]
fn flat_surface_stays_in_range() {
    let s = scenario("compute");
    let calib = scenario("dlrm-24");
    let model = cmd_fit(&calib, &calib.fit_ratios, &Feature::DEFAULT_SET).unwrap().model;
    let sim = Simulation::new(s.system.clone(), s.workloads.clone()).unwrap();
    let mut plant = SimulatedPlant::new(sim).unwrap();
    let log = run_loop(
        &mut plant,
        AllocationPolicy::interleave(s.start_ratio),
        &model,
        &mut SampleWindow::new(s.window),
        TunerState::new(s.start_ratio, s.tuner).unwrap(),
        &s.loop_options,
    )
    .unwrap();
    assert_eq!(log.rows.len(), s.intervals);
    assert!(log.rows.iter().all(|r| (0.0..=100.0).contains(&r.ratio)));
    // Every estimate is identical, so the dead-band never reverses.
    let steps: Vec<f64> = log.rows.windows(2).map(|w| w[1].ratio - w[0].ratio).collect();
    assert!(steps.iter().all(|&d| d >= 0.0), "{steps:?}");
    assert_eq!(log.terminal_ratio(), 100.0);
}

#[test]
fn dlrm_reaches_oracle_neighbourhood() {
    let s = scenario("dlrm");
    let calib = scenario("dlrm-24");
    let model = cmd_fit(&calib, &calib.fit_ratios, &Feature::DEFAULT_SET).unwrap().model;
    let report = cmd_tune(&s, &model).unwrap();
    let oracle = cmd_oracle(&s).unwrap();
    assert!(report.log.rows.len() <= 50);
    assert!(
        (report.terminal_ratio - f64::from(oracle.ratio)).abs() <= s.tuner.min_step,
        "terminal ratio {} vs optimum {}",
        report.terminal_ratio,
        oracle.ratio
    );
    assert!(
        report.terminal_throughput >= 0.95 * oracle.max_throughput,
        "terminal throughput {} vs max {}",
        report.terminal_throughput,
        oracle.max_throughput
    );
}

#[test]
fn redis_walks_toward_ddr() {
    let s = scenario("redis");
    let calib = scenario("dlrm-24");
    let model = cmd_fit(&calib, &calib.fit_ratios, &Feature::DEFAULT_SET).unwrap().model;
    let report = cmd_tune(&s, &model).unwrap();
    assert!(report.terminal_ratio < s.start_ratio, "{}", report.terminal_ratio);
}

fn curve_strategy() -> impl Strategy<Value = TentCurve> {
    (0.0f64..=100.0, 0.5f64..2.0, 1.5f64..=3.0, 0.2f64..=0.9, 0.2f64..=0.9).prop_map(
        |(peak_ratio, peak, power, drop_left, drop_right)| TentCurve {
            peak_ratio,
            peak,
            power,
            drop_left,
            drop_right,
        },
    )
}

proptest! {
    #[test]
    fn loop_invariants_on_unimodal_curves(
        curve in curve_strategy(),
        start in 0.0f64..=100.0,
        strict in any::<bool>(),
    ) {
        let config = if strict { TunerConfig::strict() } else { TunerConfig::default() };
        let log = run_curve(curve, start.round(), 50, config);
        for r in &log.rows {
            prop_assert!((0.0..=100.0).contains(&r.ratio));
        }
        prop_assert!(log.final_state.prev_step.abs() >= config.min_step);
    }

    #[test]
    fn decline_reverses_direction(
        prev in 0.1f64..10.0,
        drop in 0.02f64..0.49,
        step_mag in 9.0f64..40.0,
        up in any::<bool>(),
        ratio in 0.0f64..=100.0,
    ) {
        let step = if up { step_mag } else { -step_mag };
        let s = TunerState { prev_state: Some(prev), prev_step: step, prev_ratio: ratio, config: TunerConfig::default() };
        let (next, applied) = s.tune_step(prev * (1.0 - drop), true);
        prop_assert_eq!(next.prev_step.signum(), -step.signum());
        prop_assert!(next.prev_step.abs() >= 9.0);
        prop_assert!((0.0..=100.0).contains(&applied));
    }
}
