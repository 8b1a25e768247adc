mod common;

use common::*;
use oppsched::arrivals::{ArrivalModel, ArrivalPmf};
use oppsched::geometry::{ChannelDistribution, ServerModel, WeightVector};
use oppsched::large_deviations::optimize_jstar;
use oppsched::rational::rat;
use oppsched::schedulers::SchedulerSpec;
use oppsched::simulator::{
    decay_slope, estimate_overflow, simulate, EstimationBudget, EstimationMethod, SystemConfig,
    TiltPlan, Trajectory, DEFAULT_DEFENSIVE_WEIGHT,
};
use proptest::prelude::*;

// Stationary tails of two-state system, from `stationary_tail` with queues capped
// at 40 (capping at 30 gives the same digits).
const PLOG_TAIL: [(i64, f64); 3] = [
    (2, 0.1513312572215564),
    (4, 0.0009916154042366448),
    (8, 1.5311979317738373e-11),
];
const MAXWEIGHT_TAIL_8: f64 = 1.4836807008706803e-12;
const LOG_TAIL_8: f64 = 7.049429474911151e-13;
const EXP_TAIL_8: f64 = 5.057790883325733e-11;
// PLog tail at n = 10, 20, 30, 40 with queues capped at 60.
const PLOG_DEEP_TAIL: [f64; 4] = [
    1.0167884227553908e-16,
    2.5862349728849523e-41,
    3.3392943285490316e-67,
    8.493605459511316e-92,
];

fn schedulers() -> Vec<(SchedulerSpec, f64)> {
    let b = WeightVector::ones();
    vec![
        (SchedulerSpec::plog(b.clone()), PLOG_TAIL[2].1),
        (
            SchedulerSpec::max_weight(b.clone(), 1.0).unwrap(),
            MAXWEIGHT_TAIL_8,
        ),
        (
            SchedulerSpec::log_rule(b.clone(), [1.0, 1.0]).unwrap(),
            LOG_TAIL_8,
        ),
        (SchedulerSpec::exp_default(b), EXP_TAIL_8),
    ]
}

fn budget(replications: usize, cycles: u64, slots: u64) -> EstimationBudget {
    EstimationBudget {
        replications,
        slots,
        cycles,
        length_cycles: cycles,
        ..EstimationBudget::default()
    }
}

fn close(estimate: f64, std_error: f64, truth: f64, k: f64) -> bool {
    std_error > 0.0 && (estimate - truth).abs() <= k * std_error
}

#[test]
fn chain_oracle_reproduces_its_frozen_values() {
    let cfg = two_state(SchedulerSpec::plog(WeightVector::ones()), 1);
    let tails = stationary_tail(&cfg, 40, &[2, 4, 8]);
    for ((_, want), got) in PLOG_TAIL.iter().zip(&tails) {
        assert!((got - want).abs() <= 1e-9 * want, "{got} vs {want}");
    }
    for (spec, want) in schedulers() {
        let got = stationary_tail(&two_state(spec, 1), 30, &[8])[0];
        assert!((got - want).abs() <= 1e-9 * want, "{got} vs {want}");
    }
}

fn log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn tilted_decay_slope_matches_the_chain() {
    let cfg = two_state(SchedulerSpec::plog(WeightVector::ones()), 21);
    let thresholds = [10, 20, 30, 40];
    let exact = stationary_tail(&cfg, 60, &[10, 20, 30, 40]);
    for (got, want) in exact.iter().zip(PLOG_DEEP_TAIL) {
        assert!((got - want).abs() <= 1e-9 * want, "{got} vs {want}");
    }
    let truth = log_slope(
        &thresholds
            .iter()
            .zip(PLOG_DEEP_TAIL)
            .map(|(n, p)| (*n as f64, p.ln()))
            .collect::<Vec<_>>(),
    );
    let opt = optimize_jstar(cfg.arrivals(), cfg.model(), cfg.pi(), &WeightVector::ones()).unwrap();
    let plan = TiltPlan::from_optimal(&cfg, &opt, DEFAULT_DEFENSIVE_WEIGHT).unwrap();
    let est = estimate_overflow(
        &cfg,
        &thresholds,
        &EstimationMethod::Tilted(plan),
        &budget(10, 1_000, 1),
    )
    .unwrap();
    let fit = decay_slope(&est).unwrap();
    assert!(
        (fit.slope - truth).abs() <= 0.02 * truth.abs(),
        "{} vs {truth}",
        fit.slope
    );
    // every estimate lands within a factor of two of the exact tail
    for (e, p) in est.iter().zip(PLOG_DEEP_TAIL) {
        assert!(
            (e.estimate / p).ln().abs() <= 2f64.ln(),
            "n={}: {} vs {p}",
            e.threshold,
            e.estimate
        );
    }
}

#[test]
fn regenerative_and_naive_estimates_match_the_chain() {
    let cfg = two_state(SchedulerSpec::plog(WeightVector::ones()), 5);
    let b = budget(8, 20_000, 400_000);
    let thresholds = [PLOG_TAIL[0].0, PLOG_TAIL[1].0];
    let cyc = estimate_overflow(&cfg, &thresholds, &EstimationMethod::Regenerative, &b).unwrap();
    let naive = estimate_overflow(&cfg, &thresholds, &EstimationMethod::Naive, &b).unwrap();
    for (i, (_, truth)) in PLOG_TAIL[..2].iter().enumerate() {
        for e in [&cyc[i], &naive[i]] {
            assert!(
                close(e.estimate, e.std_error, *truth, 4.0),
                "{} n={}: {} ± {} vs {truth}",
                e.method,
                e.threshold,
                e.estimate,
                e.std_error
            );
        }
    }
}

#[test]
fn tilted_plog_estimate_matches_the_chain_deep_in_the_tail() {
    let cfg = two_state(SchedulerSpec::plog(WeightVector::ones()), 9);
    let opt = optimize_jstar(cfg.arrivals(), cfg.model(), cfg.pi(), &WeightVector::ones()).unwrap();
    let plan = TiltPlan::from_optimal(&cfg, &opt, DEFAULT_DEFENSIVE_WEIGHT).unwrap();
    let est = estimate_overflow(
        &cfg,
        &[4, 8],
        &EstimationMethod::Tilted(plan),
        &budget(10, 2_000, 1),
    )
    .unwrap();
    for (e, (_, truth)) in est.iter().zip(&PLOG_TAIL[1..]) {
        assert!(
            close(e.estimate, e.std_error, *truth, 4.0),
            "n={}: {} ± {} vs {truth}",
            e.threshold,
            e.estimate,
            e.std_error
        );
        assert!(
            e.std_error < 0.25 * truth,
            "relative error {}",
            e.std_error / truth
        );
    }
}

#[test]
fn competitors_match_the_chain_where_plain_cycles_reach() {
    let tails = [
        0.0009916154042366448,
        0.0007730716625597901,
        0.0009449933781301194,
        0.00324683331446452,
    ];
    for ((spec, _), truth) in schedulers().into_iter().zip(tails) {
        let cfg = two_state(spec, 13);
        let e = &estimate_overflow(
            &cfg,
            &[4],
            &EstimationMethod::Regenerative,
            &budget(6, 40_000, 1),
        )
        .unwrap()[0];
        assert!(
            close(e.estimate, e.std_error, truth, 4.0),
            "{:?}: {} ± {} vs {truth}",
            cfg.scheduler().variant(),
            e.estimate,
            e.std_error
        );
    }
}

#[test]
fn regenerative_estimates_match_the_chain_on_an_asymmetric_system() {
    let cfg = SystemConfig::new(
        ServerModel::triangles(&[[3, 1], [0, 2], [1, 1]]).unwrap(),
        ChannelDistribution::nominal(vec![rat(1, 4), rat(1, 2), rat(1, 4)]).unwrap(),
        ArrivalModel::new(
            ArrivalPmf::bernoulli(rat(1, 4)).unwrap(),
            ArrivalPmf::new(vec![rat(6, 10), rat(3, 10), rat(1, 10)]).unwrap(),
        ),
        SchedulerSpec::plog(WeightVector::new(rat(1, 1), rat(2, 1)).unwrap()),
        3,
        false,
    )
    .unwrap();
    let thresholds = [4, 8, 12];
    let truth = stationary_tail(&cfg, 40, &[4, 8, 12]);
    let est = estimate_overflow(
        &cfg,
        &thresholds,
        &EstimationMethod::Regenerative,
        &budget(6, 40_000, 1),
    )
    .unwrap();
    for (e, t) in est.iter().zip(&truth) {
        assert!(
            close(e.estimate, e.std_error, *t, 4.0),
            "n={}: {} ± {} vs {t}",
            e.threshold,
            e.estimate,
            e.std_error
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn every_slot_serves_a_vertex_and_conserves_packets(
        initial in [0u64..30, 0u64..30],
        seed in any::<u64>(),
        kind in 0usize..4,
    ) {
        let spec = schedulers().swap_remove(kind).0;
        let cfg = two_state(spec, seed);
        let mut traj = Trajectory::new(&cfg, initial);
        for _ in 0..300 {
            let before = traj.state();
            let r = traj.advance();
            prop_assert_eq!(r.q, before);
            let vertices = cfg.model().state(r.m).vertices();
            prop_assert!(vertices.contains(&r.decision.service));
            let after = traj.state();
            for i in 0..2 {
                prop_assert_eq!(r.served[i], before[i].min(r.decision.service[i]));
                prop_assert_eq!(after[i], before[i] - r.served[i] + r.arrivals[i]);
            }
        }
        let s = simulate(&cfg, 500, initial, false).unwrap();
        prop_assert!(s.conserves_flow());
    }
}
