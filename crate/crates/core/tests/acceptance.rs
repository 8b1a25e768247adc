//! Acceptance run: one PASS/FAIL line per criterion, details indented.
//!
//! Exits nonzero when a criterion fails, except for the two criteria that
//! cannot be met as stated (7 and 9; see the README). Set
//! `ACCEPTANCE_STRICT=1` to fail on those too.

mod common;

use std::path::PathBuf;
use std::time::Instant;

use common::*;
use oppsched::arrivals::{ArrivalModel, ArrivalPmf};
use oppsched::experiment::{decay_experiment, parse_config, parse_config_with, run, Overrides};
use oppsched::geometry::{build_region, v_star, ChannelDistribution, WeightVector};
use oppsched::large_deviations::{
    cramer, optimize_jstar, path_cost, relative_entropy, t_zero, PiecewiseLinearPath,
};
use oppsched::rational::{from_u64, rat, to_f64 as rf};
use oppsched::schedulers::{PartitionLabel, SchedulerSpec};
use oppsched::simulator::{
    estimate_overflow, stability_check, EstimationBudget, EstimationMethod, SystemConfig, TiltPlan,
    DEFAULT_DEFENSIVE_WEIGHT,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const KNOWN_UNATTAINABLE: [u32; 2] = [7, 9];
const COMPARE_CONFIG: &str = include_str!("../../../configs/two_state_compare.toml");

struct Outcome {
    pass: bool,
    summary: String,
    details: Vec<String>,
}

impl Outcome {
    fn new(pass: bool, summary: impl Into<String>) -> Self {
        Self {
            pass,
            summary: summary.into(),
            details: Vec::new(),
        }
    }

    fn detail(mut self, line: impl Into<String>) -> Self {
        self.details.push(line.into());
        self
    }
}

fn random_lists(rng: &mut ChaCha8Rng) -> Vec<Vec<[u64; 2]>> {
    let states = rng.gen_range(1..=5);
    (0..states)
        .map(|_| {
            let n = rng.gen_range(1..=4);
            (0..n)
                .map(|_| [rng.gen_range(0..=6), rng.gen_range(0..=6)])
                .collect()
        })
        .collect()
}

fn random_distribution(rng: &mut ChaCha8Rng, states: usize) -> (ChannelDistribution, Vec<Q>) {
    let w: Vec<i64> = (0..states).map(|_| rng.gen_range(1..=5)).collect();
    let total: i64 = w.iter().sum();
    let probs: Vec<Q> = w.iter().map(|x| rat(*x, total)).collect();
    (ChannelDistribution::nominal(probs.clone()).unwrap(), probs)
}

fn six_state_geometry() -> Outcome {
    let region = build_region(&six_state(), &ChannelDistribution::uniform(6)).unwrap();
    let slopes: Vec<String> = region
        .normal_slopes()
        .iter()
        .map(|r| r.to_string())
        .collect();
    let kl = region.select_k_l(&WeightVector::ones());
    Outcome::new(
        slopes.len() == 5 && kl == (2, 4),
        format!(
            "six-state region: {} normal slopes, (k, l) = {kl:?}",
            slopes.len()
        ),
    )
    .detail(format!("slopes {}", slopes.join(", ")))
}

fn minkowski_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    for _ in 0..100 {
        let lists = random_lists(&mut rng);
        let (pi, probs) = random_distribution(&mut rng, lists.len());
        let chain = maximal_chain(&all_weighted_sums(&lists, &probs));
        let region = build_region(&model_from(&lists), &pi).unwrap();
        if region.maximal_vertices() != &chain[..] {
            mismatches += 1;
        }
    }
    Outcome::new(
        mismatches == 0,
        format!(
            "region equals the brute-force hull on 100 random instances ({mismatches} mismatches)"
        ),
    )
}

fn v_star_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut infeasible = 0;
    for _ in 0..200 {
        let lists = random_lists(&mut rng);
        let (pi, probs) = random_distribution(&mut rng, lists.len());
        let model = model_from(&lists);
        let lam = [rat(rng.gen_range(0..=32), 4), rat(rng.gen_range(0..=32), 4)];
        let b = WeightVector::new(
            rat(rng.gen_range(1..=6), rng.gen_range(1..=3)),
            rat(rng.gen_range(1..=6), rng.gen_range(1..=3)),
        )
        .unwrap();
        let v = v_star(&lam, &pi, &b, &model).unwrap();
        let region = build_region(&model, &pi).unwrap();
        if !(region.contains(&v) && v[0] <= lam[0] && v[1] <= lam[1]) {
            infeasible += 1;
        }
        let chain = chain_f64(&maximal_chain(&all_weighted_sums(&lists, &probs)));
        let oracle = box_lp(&chain, [rf(&lam[0]), rf(&lam[1])], b.to_f64());
        worst = worst.max((rf(&b.dot(&v)) - oracle).abs());
    }
    Outcome::new(
        worst <= 1e-9 && infeasible == 0,
        format!("v_star matches the enumeration oracle on 200 cases (max error {worst:.2e})"),
    )
    .detail(format!("{infeasible} infeasible answers"))
}

fn partition_consistency() -> Outcome {
    let model = six_state();
    let pi = ChannelDistribution::uniform(6);
    let region = build_region(&model, &pi).unwrap();
    let spec = SchedulerSpec::plog(WeightVector::ones());
    let max_rate = region.max_weighted_rate(spec.weights()).value;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut s0, mut sm, mut curves, mut bad) = (0, 0, 0, 0);
    let mut tested = 0;
    while tested < 10_000 {
        let q = [rng.gen_range(0..=1000u64), rng.gen_range(0..=1000u64)];
        if q == [0, 0] {
            continue;
        }
        tested += 1;
        let v = spec.expected_service(q, &pi, &model);
        match spec.partition_of_state(q, &region).unwrap() {
            PartitionLabel::Region(0) => {
                s0 += 1;
                if spec.weights().dot(&v) != max_rate {
                    bad += 1;
                }
            }
            PartitionLabel::Region(m) => {
                sm += 1;
                if &v != region.vertex(m) {
                    bad += 1;
                }
            }
            PartitionLabel::Curve(_) => curves += 1,
        }
    }
    Outcome::new(
        bad == 0,
        format!(
            "partition labels agree with expected service on 10^4 states ({bad} disagreements)"
        ),
    )
    .detail(format!(
        "S0 {s0}, other regions {sm}, on a switching curve {curves}"
    ))
}

fn radial_monotonicity() -> Outcome {
    let model = six_state();
    let pi = ChannelDistribution::uniform(6);
    let region = build_region(&model, &pi).unwrap();
    let plog = SchedulerSpec::plog(WeightVector::ones());
    let report = plog.rsm_audit([2, 1], 200, &pi, &model, &region).unwrap();
    let plog_ok = report.monotone && report.values[1..].iter().all(|v| *v == report.max_rate);
    let exp = SchedulerSpec::exp_default(WeightVector::ones());
    let mut entered = None;
    for theta in 1_000..=1_000_000u64 {
        let x = [from_u64(2 * theta), from_u64(theta)];
        if exp.partition_of(&x, &region).unwrap() == PartitionLabel::Region(0) {
            entered = Some(theta);
            break;
        }
    }
    Outcome::new(
        plog_ok && entered.is_none(),
        "PLog is radially sum-rate monotone from Q = (2, 1); the exponential rule stays out of S0",
    )
    .detail(format!(
        "plog: monotone {}, theta* {:?}, max rate {}",
        report.monotone, report.theta_star, report.max_rate
    ))
    .detail(format!(
        "exp: first theta in S0 over [1e3, 1e6]: {entered:?}"
    ))
}

fn decay_rates() -> Outcome {
    let grid = grid_jstar(
        &[triangle([2, 1]), triangle([1, 2])],
        [0.5, 0.5],
        0.3,
        [1.0, 1.0],
        100,
    );
    let opt = optimize_jstar(
        &bernoulli_arrivals(3, 10),
        &two_state_model(),
        &two_state_pi(),
        &WeightVector::ones(),
    )
    .unwrap();
    let j = opt.j_star;
    let grid_ok = (j - grid).abs() / grid <= 0.02;

    let config = parse_config(COMPARE_CONFIG).unwrap();
    let results = decay_experiment(&config).unwrap().schedulers;
    let fit = |name: &str| {
        let r = results.iter().find(|r| r.name == name).unwrap();
        r.fit.clone().unwrap()
    };
    let plog = fit("plog");
    let plog_cfg = two_state(SchedulerSpec::plog(WeightVector::ones()), 1);
    let thresholds = [10u64, 15, 20, 25, 30, 35, 40];
    let chain: Vec<(f64, f64)> = thresholds
        .iter()
        .zip(stationary_tail(&plog_cfg, 60, &thresholds))
        .map(|(n, p)| (*n as f64, p.ln()))
        .collect();
    let chain_slope = least_squares_slope(&chain);
    let plog_se = plog.slope_std_error.unwrap_or(f64::INFINITY);
    let slope_ok = (plog.slope + j).abs() / j <= 0.20;
    let mut out = Vec::new();
    let mut competitors_ok = true;
    for r in results.iter().filter(|r| r.name != "plog") {
        let f = fit(&r.name);
        let se = f.slope_std_error.unwrap_or(f64::INFINITY);
        let bound = plog.slope.abs() + 2.0 * (se * se + plog_se * plog_se).sqrt();
        let ok = f.slope.abs() <= bound;
        competitors_ok &= ok;
        out.push(format!(
            "{}: slope {:.4} ± {:.4}, bound on |slope| {:.4}, {}",
            r.name,
            f.slope,
            se,
            bound,
            if ok { "ok" } else { "exceeds" }
        ));
    }
    let mut o = Outcome::new(
        grid_ok && slope_ok && competitors_ok,
        format!(
            "decay rate on the two-state system: J* {j:.6}, PLog slope {:.4} ({:.1}% off)",
            plog.slope,
            100.0 * (plog.slope + j).abs() / j
        ),
    )
    .detail(format!(
        "grid oracle {grid:.6}, optimizer off by {:.3}%",
        100.0 * (j - grid).abs() / grid
    ))
    .detail(format!("plog slope standard error {plog_se:.4}"))
    .detail(format!(
        "exact truncated-chain slope over the same thresholds {chain_slope:.4}"
    ));
    o.details.extend(out);
    o
}

fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn importance_sampling() -> Outcome {
    let cfg = two_state(SchedulerSpec::plog(WeightVector::ones()), 77);
    let opt = optimize_jstar(cfg.arrivals(), cfg.model(), cfg.pi(), &WeightVector::ones()).unwrap();
    let plan = TiltPlan::from_optimal(&cfg, &opt, DEFAULT_DEFENSIVE_WEIGHT).unwrap();
    let tilted_budget = EstimationBudget {
        replications: 20,
        cycles: 2_000,
        length_cycles: 2_000,
        ..EstimationBudget::default()
    };
    let tilted = estimate_overflow(&cfg, &[8], &EstimationMethod::Tilted(plan), &tilted_budget)
        .unwrap()
        .remove(0);
    let naive_budget = EstimationBudget {
        replications: 20,
        slots: 25_000_000,
        ..EstimationBudget::default()
    };
    let naive = estimate_overflow(&cfg, &[8], &EstimationMethod::Naive, &naive_budget)
        .unwrap()
        .remove(0);
    let combined = (tilted.std_error.powi(2) + naive.std_error.powi(2)).sqrt();
    let gap = (tilted.estimate - naive.estimate).abs();
    let agree = gap <= 3.0 * combined;

    let small = EstimationBudget {
        replications: 4,
        cycles: 5_000,
        length_cycles: 5_000,
        ..EstimationBudget::default()
    };
    let identity = EstimationMethod::Tilted(TiltPlan::identity(&cfg));
    let a = estimate_overflow(&cfg, &[4, 8], &identity, &small).unwrap();
    let b = estimate_overflow(&cfg, &[4, 8], &EstimationMethod::Regenerative, &small).unwrap();
    let identical = a.iter().zip(&b).all(|(x, y)| {
        x.total == y.total
            && x.per_replication == y.per_replication
            && x.estimate.to_bits() == y.estimate.to_bits()
    });

    let exact = stationary_tail(&cfg, 40, &[8])[0];
    let slots = naive_budget.replications as f64 * naive_budget.slots as f64;
    Outcome::new(
        agree && identical,
        format!(
            "naive vs tilted at n = 8: gap {gap:.3e} against 3 combined SE {:.3e}",
            3.0 * combined
        ),
    )
    .detail(format!(
        "tilted {:.4e} ± {:.2e}",
        tilted.estimate, tilted.std_error
    ))
    .detail(format!(
        "naive {:.4e} ± {:.2e} from {slots:.1e} slots ({} hits); about {:.2} hits expected",
        naive.estimate,
        naive.std_error,
        naive.total.hits,
        exact * slots
    ))
    .detail(format!(
        "zero tilt reproduces the plain cycle tallies bit for bit: {identical}"
    ))
    .detail(format!(
        "exact chain value {exact:.4e}; tilted within {:.2} SE of it",
        (tilted.estimate - exact).abs() / tilted.std_error
    ))
}

fn rate_functions() -> Outcome {
    let pmfs = [
        ArrivalPmf::bernoulli(rat(3, 10)).unwrap(),
        ArrivalPmf::new(vec![rat(1, 2), rat(1, 5), rat(1, 5), rat(1, 10)]).unwrap(),
        ArrivalPmf::new(vec![rat(1, 10), rat(1, 10), rat(4, 5)]).unwrap(),
    ];
    let mut at_mean: f64 = 0.0;
    let mut at_top: f64 = 0.0;
    let mut convex = true;
    for pmf in &pmfs {
        let c = pmf.max_arrivals() as f64;
        at_mean = at_mean.max(cramer(pmf, rf(&pmf.mean())).abs());
        let p_top = *pmf.probs_f64().last().unwrap();
        at_top = at_top.max((cramer(pmf, c) + p_top.ln()).abs());
        let values: Vec<f64> = (0..50).map(|i| cramer(pmf, c * i as f64 / 49.0)).collect();
        convex &= midpoint_convex(&values);
    }
    let pi = ChannelDistribution::nominal(vec![rat(1, 6), rat(1, 3), rat(1, 2)]).unwrap();
    let pif = pi.to_f64();
    let self_entropy = relative_entropy(&pif, &pi).unwrap();
    let (g, h) = ([0.9, 0.05, 0.05], [0.0, 0.2, 0.8]);
    let line: Vec<f64> = (0..50)
        .map(|i| {
            let t = i as f64 / 49.0;
            let x: Vec<f64> = g
                .iter()
                .zip(&h)
                .map(|(a, b)| (1.0 - t) * a + t * b)
                .collect();
            relative_entropy(&x, &pi).unwrap()
        })
        .collect();
    convex &= midpoint_convex(&line);

    let arrivals = bernoulli_arrivals(3, 10);
    let opt = optimize_jstar(
        &arrivals,
        &two_state_model(),
        &two_state_pi(),
        &WeightVector::ones(),
    )
    .unwrap();
    let mode = opt.require_mode().unwrap();
    let t0 = t_zero(mode).unwrap();
    let path = PiecewiseLinearPath::single(t0, mode.lambda, mode.gamma.clone()).unwrap();
    let cost = path_cost(&path, &arrivals, &two_state_pi()).unwrap();
    let rel = (cost - opt.j_star).abs() / opt.j_star;

    Outcome::new(
        at_mean == 0.0 && at_top <= 1e-9 && convex && self_entropy == 0.0 && rel <= 1e-6,
        "rate functions: zero at the mean, -log p(C) at the top, convex, path cost equals J*",
    )
    .detail(format!(
        "max |cramer(mean)| {at_mean:.1e}, max |cramer(C) + log p(C)| {at_top:.1e}"
    ))
    .detail(format!("midpoint convexity on 50-point grids: {convex}"))
    .detail(format!("relative_entropy(pi, pi) = {self_entropy}"))
    .detail(format!(
        "path cost {cost:.9} vs J* {:.9} (relative {rel:.1e})",
        opt.j_star
    ))
}

fn midpoint_convex(values: &[f64]) -> bool {
    let n = values.len();
    (0..n).all(|i| {
        (i..n)
            .step_by(2)
            .all(|j| values[(i + j) / 2] <= 0.5 * (values[i] + values[j]) + 1e-12)
    })
}

fn drift_sign() -> Outcome {
    let plog = SchedulerSpec::plog(WeightVector::ones());
    let nominal = two_state(plog.clone(), 9);
    let base = stability_check(&nominal, 50, 100, 400).unwrap();
    let variant = |pmf: ArrivalPmf| {
        let cfg = SystemConfig::new(
            two_state_model(),
            two_state_pi(),
            ArrivalModel::symmetric(pmf),
            plog.clone(),
            9,
            true,
        )
        .unwrap();
        let stable = cfg.is_stabilizable();
        (stable, stability_check(&cfg, 50, 100, 400).unwrap())
    };
    let (stable_09, heavy) = variant(ArrivalPmf::bernoulli(rat(9, 10)).unwrap());
    let (stable_17, over) =
        variant(ArrivalPmf::new(vec![rat(1, 10), rat(1, 10), rat(4, 5)]).unwrap());
    let show = |d: &oppsched::simulator::DriftStatistic| {
        format!("{:.3} (95% [{:.3}, {:.3}])", d.mean, d.lower95, d.upper95)
    };
    Outcome::new(
        base.negative_at_95() && heavy.positive_at_95(),
        "drift of <b, Q> from level 50: negative for two-state system, positive for mean 0.9 per queue",
    )
    .detail(format!("two-state system: {}", show(&base)))
    .detail(format!(
        "Bernoulli(0.9) per queue: {}; stabilizable {stable_09}, total load 1.8 below the max rate 2",
        show(&heavy)
    ))
    .detail(format!(
        "mean 1.7 per queue: {}; stabilizable {stable_17}, positive {}",
        show(&over),
        over.positive_at_95()
    ))
}

fn determinism() -> Outcome {
    let bodies = |workers: usize| {
        let dir = tempfile::tempdir().unwrap();
        let o = Overrides {
            workers: Some(workers),
            out: Some(dir.path().to_path_buf()),
            ..Default::default()
        };
        let cfg = parse_config_with(COMPARE_CONFIG, &o).unwrap();
        let manifest = run(&cfg).unwrap();
        manifest
            .outputs
            .iter()
            .filter(|f| f.file.ends_with(".csv"))
            .map(|f| {
                let path: PathBuf = dir.path().join(&f.file);
                (f.file.clone(), std::fs::read(path).unwrap())
            })
            .collect::<Vec<_>>()
    };
    let one = bodies(1);
    let two = bodies(2);
    let names: Vec<&str> = one.iter().map(|(f, _)| f.as_str()).collect();
    Outcome::new(
        one == two,
        "compare run with 1 and 2 workers writes byte-identical CSV files",
    )
    .detail(format!("compared {}", names.join(", ")))
}

fn main() {
    let criteria: [(u32, fn() -> Outcome); 10] = [
        (1, six_state_geometry),
        (2, minkowski_oracle),
        (3, v_star_oracle),
        (4, partition_consistency),
        (5, radial_monotonicity),
        (6, decay_rates),
        (7, importance_sampling),
        (8, rate_functions),
        (9, drift_sign),
        (10, determinism),
    ];
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut failed = Vec::new();
    for (id, check) in criteria {
        let start = Instant::now();
        let o = check();
        let secs = start.elapsed().as_secs_f64();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{tag} {id:>2} [{secs:.2} s] {}", o.summary);
        for d in &o.details {
            println!("       {d}");
        }
        if !o.pass {
            failed.push(id);
        }
    }
    let unexpected: Vec<u32> = failed
        .iter()
        .copied()
        .filter(|id| strict || !KNOWN_UNATTAINABLE.contains(id))
        .collect();
    println!(
        "{} of {} criteria passed; failed: {:?}; unexpected failures: {:?}",
        10 - failed.len(),
        10,
        failed,
        unexpected
    );
    if !unexpected.is_empty() {
        std::process::exit(1);
    }
}
