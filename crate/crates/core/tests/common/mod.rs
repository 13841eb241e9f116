//! Shared oracles for the integration suites: an independent Gauss-Seidel
//! fixed-point solver, a finite-difference Jacobian, random radial feeders,
//! and golden-file helpers.
//!
//! Everything here deliberately avoids the Newton-Raphson code paths it is
//! used to check.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use feederopt_core::load::{
    loads_at_hour, Bus, ConsumerClass, HourlyLoads, LoadModelParams, LoadProfile, HOURS,
};
use feederopt_core::net::{build_ybus, BusId, Line, Network, PerUnitBase};
use feederopt_core::powerflow::{mismatch, CapacitorConfig, PowerFlowState};
use feederopt_core::AdmittanceMatrix;

/// A profile with every class pinned at 100%, so hourly loads equal peaks.
pub fn all_peak_profile() -> LoadProfile {
    let mut map = BTreeMap::new();
    for class in [
        ConsumerClass::Industrial,
        ConsumerClass::Residential,
        ConsumerClass::Commercial,
        ConsumerClass::Custom,
    ] {
        map.insert(class, [100.0; HOURS]);
    }
    LoadProfile::new(map).expect("valid profile")
}

/// Peak loads of a network (every class at 100%).
pub fn peak_loads(network: &Network) -> HourlyLoads {
    loads_at_hour(network, &all_peak_profile(), 1).expect("peak loads")
}

/// Copy of a network with every load forced to the constant-power model.
pub fn force_constant_power(network: &Network) -> Network {
    let mut net = network.clone();
    for bus in &mut net.buses {
        bus.params = LoadModelParams::CONSTANT_POWER;
    }
    net
}

/// Independent Gauss-Seidel fixed-point solver for constant-power loads
/// with all capacitors off. Sweeps `V_i <- (conj(S_i/V_i) - sum Y_ij V_j) / Y_ii`
/// until the largest voltage update falls below `tol`.
pub fn gauss_seidel(
    network: &Network,
    loads: &HourlyLoads,
    tol: f64,
    max_sweeps: usize,
) -> Option<Vec<Complex64>> {
    let ybus = build_ybus(network).expect("valid network");
    let n = network.n_buses();
    let slack = network.slack_index();
    let mut v = vec![Complex64::new(1.0, 0.0); n];
    v[slack] = Complex64::new(network.slack_voltage_pu, 0.0);

    for _ in 0..max_sweeps {
        let mut worst: f64 = 0.0;
        for i in 0..n {
            if i == slack {
                continue;
            }
            let (p0, q0) = loads.at(i);
            let s = Complex64::new(-p0, -q0);
            let mut flow = Complex64::new(0.0, 0.0);
            for (j, vj) in v.iter().enumerate() {
                if j != i {
                    flow += ybus.entry(i, j) * vj;
                }
            }
            let next = ((s / v[i]).conj() - flow) / ybus.entry(i, i);
            worst = worst.max((next - v[i]).norm());
            v[i] = next;
        }
        if worst < tol {
            return Some(v);
        }
    }
    None
}

/// Textbook constant-power Newton-Raphson solver in the magnitude/angle
/// formulation (`P_i = sum |V_i V_j Y_ij| cos(theta_ij - d_i + d_j)`,
/// `Q_i = -sum |V_i V_j Y_ij| sin(theta_ij - d_i + d_j)`), written straight
/// from the classic textbook Jacobian. A second, independent NR route: the
/// production solver never touches these formulas.
pub fn textbook_constant_power_nr(
    network: &Network,
    loads: &HourlyLoads,
    tol: f64,
    max_iter: usize,
) -> Option<(Vec<f64>, Vec<f64>)> {
    let ybus = build_ybus(network).expect("valid network");
    let n = network.n_buses();
    let slack = network.slack_index();
    let free: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let m = free.len();

    let mut v = vec![1.0f64; n];
    let mut d = vec![0.0f64; n];
    v[slack] = network.slack_voltage_pu;

    let ymag = |i: usize, j: usize| ybus.mag(i, j);
    let yang = |i: usize, j: usize| ybus.ang(i, j);

    for _ in 0..max_iter {
        // scheduled minus calculated injections at every free bus
        let mut rhs = nalgebra::DVector::zeros(2 * m);
        for (a, &i) in free.iter().enumerate() {
            let (p0, q0) = loads.at(i);
            let mut p_calc = 0.0;
            let mut q_calc = 0.0;
            for j in 0..n {
                let u = yang(i, j) - d[i] + d[j];
                p_calc += v[i] * v[j] * ymag(i, j) * u.cos();
                q_calc -= v[i] * v[j] * ymag(i, j) * u.sin();
            }
            rhs[a] = -p0 - p_calc;
            rhs[m + a] = -q0 - q_calc;
        }
        if rhs.amax() <= tol {
            return Some((v, d));
        }

        let mut jac = DMatrix::zeros(2 * m, 2 * m);
        for (a, &i) in free.iter().enumerate() {
            for (b, &j) in free.iter().enumerate() {
                if i == j {
                    let mut dp_dd = 0.0;
                    let mut dq_dd = 0.0;
                    let mut dp_dv = 2.0 * v[i] * ymag(i, i) * yang(i, i).cos();
                    let mut dq_dv = -2.0 * v[i] * ymag(i, i) * yang(i, i).sin();
                    for k in 0..n {
                        if k == i {
                            continue;
                        }
                        let u = yang(i, k) - d[i] + d[k];
                        dp_dd += v[i] * v[k] * ymag(i, k) * u.sin();
                        dq_dd += v[i] * v[k] * ymag(i, k) * u.cos();
                        dp_dv += v[k] * ymag(i, k) * u.cos();
                        dq_dv -= v[k] * ymag(i, k) * u.sin();
                    }
                    jac[(a, b)] = dp_dd;
                    jac[(a, m + b)] = dp_dv;
                    jac[(m + a, b)] = dq_dd;
                    jac[(m + a, m + b)] = dq_dv;
                } else {
                    let u = yang(i, j) - d[i] + d[j];
                    jac[(a, b)] = -v[i] * v[j] * ymag(i, j) * u.sin();
                    jac[(a, m + b)] = v[i] * ymag(i, j) * u.cos();
                    jac[(m + a, b)] = -v[i] * v[j] * ymag(i, j) * u.cos();
                    jac[(m + a, m + b)] = -v[i] * ymag(i, j) * u.sin();
                }
            }
        }

        let dx = jac.lu().solve(&rhs)?;
        for (k, &i) in free.iter().enumerate() {
            d[i] += dx[k];
            v[i] += dx[m + k];
        }
    }
    None
}

/// Central finite differences of the mismatch vector with respect to the
/// non-slack angles then magnitudes, step `h` per unknown.
pub fn fd_jacobian(
    state: &PowerFlowState,
    network: &Network,
    ybus: &AdmittanceMatrix,
    loads: &HourlyLoads,
    config: &CapacitorConfig,
    h: f64,
) -> DMatrix<f64> {
    let slack = network.slack_index();
    let free: Vec<usize> = (0..network.n_buses()).filter(|&i| i != slack).collect();
    let m = free.len();
    let mut jac = DMatrix::zeros(2 * m, 2 * m);
    for (col, &bus) in free.iter().enumerate() {
        for (offset, is_angle) in [(0usize, true), (m, false)] {
            let mut hi = state.clone();
            let mut lo = state.clone();
            if is_angle {
                hi.delta_rad[bus] += h;
                lo.delta_rad[bus] -= h;
            } else {
                hi.v_pu[bus] += h;
                lo.v_pu[bus] -= h;
            }
            let r_hi = mismatch(&hi, network, ybus, loads, config);
            let r_lo = mismatch(&lo, network, ybus, loads, config);
            for row in 0..2 * m {
                jac[(row, col + offset)] = (r_hi[row] - r_lo[row]) / (2.0 * h);
            }
        }
    }
    jac
}

/// Random radial feeder with 4..=8 buses, constant-power loads, slack at
/// bus 1. Deterministic per seed.
pub fn random_radial_feeder(seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: u32 = rng.random_range(4..=8);
    let mut buses = Vec::new();
    for id in 1..=n {
        let (p0, q0) = if id == 1 {
            (0.0, 0.0)
        } else {
            (
                rng.random_range(0.01..0.12),
                rng.random_range(0.005..0.06),
            )
        };
        buses.push(Bus {
            id: BusId(id),
            class: ConsumerClass::Custom,
            params: LoadModelParams::CONSTANT_POWER,
            p0_peak: p0,
            q0_peak: q0,
            v_min_pu: 0.9,
            v_max_pu: 1.1,
            bank: None,
        });
    }
    let mut lines = Vec::new();
    for id in 2..=n {
        let parent = rng.random_range(1..id);
        lines.push(Line {
            from: BusId(parent),
            to: BusId(id),
            r_ohm: rng.random_range(0.05..0.4),
            x_ohm: rng.random_range(0.04..0.3),
        });
    }
    Network {
        buses,
        lines,
        slack: BusId(1),
        slack_voltage_pu: 1.0,
        base: PerUnitBase {
            base_mva: 10.0,
            base_kv: 20.0,
        },
        frequency_hz: 50.0,
    }
}

pub fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

pub fn bless_requested() -> bool {
    std::env::var_os("FEEDEROPT_BLESS").is_some()
}

/// Loads a golden JSON document, or writes `actual` there and returns `None`
/// when blessing (`FEEDEROPT_BLESS=1`).
pub fn golden_json<T>(name: &str, actual: &T) -> Option<T>
where
    T: serde::Serialize + serde::de::DeserializeOwned,
{
    let path = golden_path(name);
    if bless_requested() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        let mut body = serde_json::to_string_pretty(actual).unwrap();
        body.push('\n');
        std::fs::write(&path, body).unwrap();
        return None;
    }
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| {
        panic!(
            "golden file {} missing ({e}); record it with FEEDEROPT_BLESS=1 cargo test",
            path.display()
        )
    });
    Some(serde_json::from_str(&text).expect("golden file parses"))
}

pub fn assert_close(actual: f64, expected: f64, tol: f64, what: &str) {
    let scale = actual.abs().max(expected.abs()).max(1.0);
    assert!(
        (actual - expected).abs() <= tol * scale,
        "{what}: {actual} vs {expected} (tol {tol})"
    );
}
