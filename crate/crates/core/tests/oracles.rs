//! Solver and dispatch checks against independent oracles on the bundled
//! feeder: Gauss-Seidel fixed-point equivalence, golden operating points,
//! and the capacitor voltage-support direction.

mod common;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use common::{assert_close, gauss_seidel, golden_json, peak_loads};
use feederopt_core::dispatch::{evaluate_config, optimize_day, DispatchOptions};
use feederopt_core::io::bundled_khodabandelu;
use feederopt_core::load::loads_at_hour;
use feederopt_core::net::{build_ybus, BusId};
use feederopt_core::powerflow::{
    losses, solve_powerflow, CapacitorConfig, PowerFlowSolution, SolverOptions,
};

fn config_of(entries: &[(u32, u32)]) -> CapacitorConfig {
    let counts: BTreeMap<BusId, u32> = entries.iter().map(|&(b, n)| (BusId(b), n)).collect();
    CapacitorConfig::from_counts(counts)
}

#[derive(Debug, Serialize, Deserialize)]
struct OperatingPointGolden {
    v_pu: Vec<f64>,
    delta_rad: Vec<f64>,
    p_slack_pu: f64,
    q_slack_pu: f64,
    iterations: usize,
}

impl OperatingPointGolden {
    fn of(solution: &PowerFlowSolution) -> Self {
        Self {
            v_pu: solution.state.v_pu.clone(),
            delta_rad: solution.state.delta_rad.clone(),
            p_slack_pu: solution.p_slack_pu,
            q_slack_pu: solution.q_slack_pu,
            iterations: solution.iterations,
        }
    }
}

#[test]
fn two_bus_newton_matches_gauss_seidel() {
    let ds = bundled_khodabandelu();
    // carve the 1-2 section out of the bundled feeder as a two-bus case
    let mut network = ds.network.clone();
    network.buses.truncate(2);
    network.lines.truncate(1);
    network.buses[1].params = feederopt_core::load::LoadModelParams::CONSTANT_POWER;
    let loads = peak_loads(&network);
    let ybus = build_ybus(&network).unwrap();
    let sol = solve_powerflow(
        &network,
        &ybus,
        &loads,
        &CapacitorConfig::empty(),
        &SolverOptions::default(),
    )
    .unwrap();
    assert!(sol.converged);

    let gs = gauss_seidel(&network, &loads, 1e-12, 100_000).expect("GS converges");
    for (i, gs_v) in gs.iter().enumerate() {
        assert!(
            (sol.state.v_pu[i] - gs_v.norm()).abs() < 1e-6,
            "bus {i}: NR {} vs GS {}",
            sol.state.v_pu[i],
            gs_v.norm()
        );
    }
}

#[test]
fn bundled_feeder_t11_all_caps_off_golden() {
    let ds = bundled_khodabandelu();
    let ybus = build_ybus(&ds.network).unwrap();
    let loads = loads_at_hour(&ds.network, &ds.profile, 11).unwrap();
    let sol = solve_powerflow(
        &ds.network,
        &ybus,
        &loads,
        &CapacitorConfig::all_off(&ds.network),
        &SolverOptions::default(),
    )
    .unwrap();
    assert!(sol.converged);
    assert!(sol.iterations <= 50);
    assert!(sol.max_residual < 1e-8);
    for &v in &sol.state.v_pu {
        assert!(v > 0.8 && v < 1.05, "voltage {v} outside (0.8, 1.05)");
    }

    // conservation closes through an independent loss route
    let loss = losses(&sol, &ds.network).unwrap();
    let consumed: f64 = sol.p_consumed.iter().sum();
    assert!((sol.p_slack_pu - consumed - loss).abs() < 1e-8);

    let actual = OperatingPointGolden::of(&sol);
    if let Some(expected) = golden_json::<OperatingPointGolden>("pf_t11_all_off.json", &actual) {
        assert_eq!(actual.iterations, expected.iterations);
        for i in 0..actual.v_pu.len() {
            assert_close(actual.v_pu[i], expected.v_pu[i], 1e-9, "v_pu");
            assert_close(actual.delta_rad[i], expected.delta_rad[i], 1e-9, "delta");
        }
        assert_close(actual.p_slack_pu, expected.p_slack_pu, 1e-9, "p_slack");
        assert_close(actual.q_slack_pu, expected.q_slack_pu, 1e-9, "q_slack");
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct HourProfitGolden {
    all_off_profit_usd: f64,
    all_on_profit_usd: f64,
}

#[test]
fn bundled_feeder_t11_profit_pair_golden() {
    let ds = bundled_khodabandelu();
    let ybus = build_ybus(&ds.network).unwrap();
    let loads = loads_at_hour(&ds.network, &ds.profile, 11).unwrap();
    let options = DispatchOptions::default();

    let off = evaluate_config(
        &ds.network,
        &ybus,
        &loads,
        &ds.prices,
        11,
        &config_of(&[(10, 0), (12, 0), (13, 0)]),
        &options,
    )
    .unwrap();
    let on = evaluate_config(
        &ds.network,
        &ybus,
        &loads,
        &ds.prices,
        11,
        &config_of(&[(10, 3), (12, 3), (13, 3)]),
        &options,
    )
    .unwrap();

    assert!(off.solution.converged && on.solution.converged);
    assert_ne!(off.econ.profit, on.econ.profit);

    let actual = HourProfitGolden {
        all_off_profit_usd: off.econ.profit,
        all_on_profit_usd: on.econ.profit,
    };
    if let Some(expected) = golden_json::<HourProfitGolden>("t11_profit_pair.json", &actual) {
        assert_close(
            actual.all_off_profit_usd,
            expected.all_off_profit_usd,
            1e-9,
            "all-off profit",
        );
        assert_close(
            actual.all_on_profit_usd,
            expected.all_on_profit_usd,
            1e-9,
            "all-on profit",
        );
    }
}

#[test]
fn constant_power_solutions_match_a_textbook_nr_oracle() {
    // with k1 = k2 = 0 and capacitors off, the production solver must agree
    // with an independently written magnitude/angle NR to < 1e-8 pu
    let ds = bundled_khodabandelu();
    let cp = common::force_constant_power(&ds.network);
    let ybus = build_ybus(&cp).unwrap();
    let options = SolverOptions::default();
    let config = CapacitorConfig::all_off(&cp);

    let mut cases: Vec<(String, feederopt_core::load::HourlyLoads)> = vec![
        ("bundled peak".into(), peak_loads(&cp)),
        (
            "bundled t11".into(),
            loads_at_hour(&cp, &ds.profile, 11).unwrap(),
        ),
        (
            "bundled t2".into(),
            loads_at_hour(&cp, &ds.profile, 2).unwrap(),
        ),
    ];
    let networks: Vec<(String, feederopt_core::net::Network)> = (0..5)
        .map(|k| (format!("random {k}"), common::random_radial_feeder(2000 + k)))
        .collect();

    for (name, loads) in cases.drain(..) {
        let sol = solve_powerflow(&cp, &ybus, &loads, &config, &options).unwrap();
        assert!(sol.converged);
        let (v, d) = common::textbook_constant_power_nr(&cp, &loads, 1e-12, 50)
            .unwrap_or_else(|| panic!("{name}: textbook NR failed"));
        for i in 0..cp.n_buses() {
            assert!(
                (sol.state.v_pu[i] - v[i]).abs() < 1e-8,
                "{name} bus {i}: v {} vs {}",
                sol.state.v_pu[i],
                v[i]
            );
            assert!((sol.state.delta_rad[i] - d[i]).abs() < 1e-8);
        }
    }

    for (name, network) in networks {
        let loads = peak_loads(&network);
        let net_ybus = build_ybus(&network).unwrap();
        let net_config = CapacitorConfig::all_off(&network);
        let sol = solve_powerflow(&network, &net_ybus, &loads, &net_config, &options).unwrap();
        assert!(sol.converged, "{name}");
        let (v, _) = common::textbook_constant_power_nr(&network, &loads, 1e-12, 50)
            .unwrap_or_else(|| panic!("{name}: textbook NR failed"));
        for (i, expected) in v.iter().enumerate() {
            assert!((sol.state.v_pu[i] - expected).abs() < 1e-8, "{name} bus {i}");
        }
    }
}

#[test]
fn random_exponential_feeders_converge_and_conserve() {
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    let options = SolverOptions::default();
    for k in 0..20u64 {
        let mut network = common::random_radial_feeder(3000 + k);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7000 + k);
        for bus in &mut network.buses {
            bus.params = feederopt_core::load::LoadModelParams {
                k1: rng.random_range(0.0..3.0),
                k2: rng.random_range(0.0..6.0),
            };
        }
        let loads = peak_loads(&network);
        let ybus = build_ybus(&network).unwrap();
        let config = CapacitorConfig::all_off(&network);
        let sol = solve_powerflow(&network, &ybus, &loads, &config, &options).unwrap();
        assert!(sol.converged, "feeder {k} diverged");

        // convergence certificate: independently recomputed mismatch
        let residual =
            feederopt_core::powerflow::mismatch(&sol.state, &network, &ybus, &loads, &config);
        let worst = residual.iter().fold(0.0f64, |acc, r| acc.max(r.abs()));
        assert!(worst <= options.tolerance, "feeder {k}: residual {worst:e}");

        let loss = losses(&sol, &network).unwrap();
        let consumed: f64 = sol.p_consumed.iter().sum();
        assert!(
            (sol.p_slack_pu - consumed - loss).abs() < 1e-8,
            "feeder {k}: balance gap"
        );
    }
}

#[test]
fn bundled_ybus_rows_sum_to_zero() {
    let ds = bundled_khodabandelu();
    let ybus = build_ybus(&ds.network).unwrap();
    for i in 0..ybus.n() {
        let mut row = num_complex::Complex64::new(0.0, 0.0);
        for j in 0..ybus.n() {
            row += ybus.entry(i, j);
        }
        assert!(row.norm() < 1e-12, "row {i} sums to {row}");
    }
}

#[test]
fn full_schedule_matches_the_golden_record() {
    let ds = bundled_khodabandelu();
    let schedule = optimize_day(
        &ds.network,
        &ds.prices,
        &ds.profile,
        &feederopt_core::dispatch::DispatchOptions::default(),
    )
    .unwrap();
    assert!(schedule.feasible);
    assert_eq!(schedule.hours.len(), 24);
    let actual = feederopt_core::io::ScheduleReport::from_schedule(&schedule, &ds.network);
    if let Some(expected) =
        golden_json::<feederopt_core::io::ScheduleReport>("schedule_exhaustive.json", &actual)
    {
        assert_eq!(actual.feasible, expected.feasible);
        for (a, e) in actual.hours.iter().zip(expected.hours.iter()) {
            assert_eq!(a.t, e.t);
            assert_eq!(a.config, e.config, "hour {}: config drifted", a.t);
            assert_eq!(a.evaluations, e.evaluations);
            assert_close(a.revenue_usd, e.revenue_usd, 1e-9, "revenue");
            assert_close(a.cost_usd, e.cost_usd, 1e-9, "cost");
            assert_close(a.profit_usd, e.profit_usd, 1e-9, "profit");
            for (av, ev) in a.v_pu.iter().zip(e.v_pu.iter()) {
                assert_close(*av, *ev, 1e-9, "voltage");
            }
        }
        assert_close(actual.totals.profit_usd, expected.totals.profit_usd, 1e-9, "total");
    }
}

#[test]
fn doubling_retail_prices_weakly_increases_the_optimal_profit() {
    let ds = bundled_khodabandelu();
    let options = feederopt_core::dispatch::DispatchOptions::default();
    let base = optimize_day(&ds.network, &ds.prices, &ds.profile, &options).unwrap();
    let doubled = optimize_day(
        &ds.network,
        &ds.prices.scaled_retail(2.0),
        &ds.profile,
        &options,
    )
    .unwrap();
    assert!(doubled.totals.profit >= base.totals.profit);
    for (a, b) in base.hours.iter().zip(doubled.hours.iter()) {
        assert!(b.econ.profit >= a.econ.profit, "hour {} regressed", a.t);
    }
}

#[test]
fn hour_optimization_order_does_not_matter() {
    let ds = bundled_khodabandelu();
    let ybus = build_ybus(&ds.network).unwrap();
    let options = feederopt_core::dispatch::DispatchOptions::default();
    let schedule = optimize_day(&ds.network, &ds.prices, &ds.profile, &options).unwrap();
    // re-run the hours in reverse order; each record must be bit-identical
    for t in (1..=24usize).rev() {
        let loads = loads_at_hour(&ds.network, &ds.profile, t).unwrap();
        let opt = feederopt_core::dispatch::optimize_hour(
            &ds.network,
            &ybus,
            &loads,
            &ds.prices,
            t,
            &options,
        )
        .unwrap();
        assert_eq!(opt.dispatch, schedule.hours[t - 1]);
    }
}

#[test]
fn adding_a_capacitor_unit_never_drops_that_bus_voltage() {
    let ds = bundled_khodabandelu();
    let ybus = build_ybus(&ds.network).unwrap();
    let options = SolverOptions::default();
    for t in [11, 21] {
        let loads = loads_at_hour(&ds.network, &ds.profile, t).unwrap();
        let configs = feederopt_core::dispatch::enumerate_configs(&ds.network, 1_000_000).unwrap();
        let mut solved: BTreeMap<CapacitorConfig, PowerFlowSolution> = BTreeMap::new();
        for config in &configs {
            let sol = solve_powerflow(&ds.network, &ybus, &loads, config, &options).unwrap();
            assert!(sol.converged);
            solved.insert(config.clone(), sol.clone());
        }
        for config in &configs {
            for (bus, bank) in ds.network.capacitor_buses() {
                let n = config.count(bus);
                if n >= bank.n_max {
                    continue;
                }
                let mut stepped = config.clone();
                stepped.set(bus, n + 1);
                let before = &solved[config];
                let after = &solved[&stepped];
                let idx = ds.network.index_of(bus).unwrap();
                assert!(
                    after.state.v_pu[idx] >= before.state.v_pu[idx],
                    "hour {t}: +1 unit at bus {bus} dropped v from {} to {}",
                    before.state.v_pu[idx],
                    after.state.v_pu[idx]
                );
            }
        }
    }
}
