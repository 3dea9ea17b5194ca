//! Browser bindings for the static demo page in `www/`. Every export returns
//! a JSON string; the `*_json` functions are the native equivalents used by
//! the tests. Seeds are `u32` on the JS side to stay clear of BigInt.

use serde::Serialize;
use wasm_bindgen::prelude::*;
use wsnfilter::graph::{generate_topology, grid_topology, Topology};
use wsnfilter::radio::RadioParams;
use wsnfilter::scheduler::{cdsa_schedule, verify_schedule, SchedulerKind};
use wsnfilter::sim::{
    run_accuracy_sweep, run_denoising, FilterSpec, NetworkSpec, Seeds, SignalSpec, TrialSpec,
};
use wsnfilter::Result;

fn radio(r_broadcast: f64) -> Result<RadioParams> {
    RadioParams::new(-2.0, -100.0, 2.5, 1.0, 0.6, 176)?.with_broadcast_range(r_broadcast)
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("demo payloads serialize")
}

fn js<T>(r: Result<T>) -> Result<T, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[derive(Serialize)]
struct NetworkView {
    side_len: f64,
    r_broadcast: f64,
    positions: Vec<[f64; 2]>,
    edges: Vec<[usize; 2]>,
    /// Slot index of every node.
    slot: Vec<usize>,
    pdr_min: Vec<f64>,
    n_slots: usize,
    violations: usize,
    control_messages: usize,
}

pub fn network_json(nodes: usize, side_len: f64, r_broadcast: f64, seed: u64) -> Result<String> {
    let seeds = Seeds::derive(seed, 0);
    let topo = generate_topology(nodes, side_len, r_broadcast, seeds.topology)?;
    let params = radio(r_broadcast)?;
    let (schedule, trace) = cdsa_schedule(&topo, &params, nodes, seeds.schedule)?;
    let report = verify_schedule(&schedule, &topo, &params);
    Ok(to_json(&NetworkView {
        side_len: topo.side_len(),
        r_broadcast: topo.r_broadcast(),
        positions: topo.positions().iter().map(|p| [p.x, p.y]).collect(),
        edges: topo.edges().filter(|(i, j)| i < j).map(|(i, j)| [i, j]).collect(),
        slot: schedule.per_node.iter().map(|r| r.slot).collect(),
        pdr_min: schedule.per_node.iter().map(|r| r.pdr_min).collect(),
        n_slots: schedule.n_slots(),
        violations: report.violations.len(),
        control_messages: trace.control_messages,
    }))
}

/// Random deployment scheduled with CDSA: positions, edges and slots.
#[wasm_bindgen]
pub fn network(nodes: usize, side_len: f64, r_broadcast: f64, seed: u32) -> Result<String, JsError> {
    js(network_json(nodes, side_len, r_broadcast, seed.into()))
}

#[derive(Serialize)]
struct AccuracyPoint {
    q: f64,
    mean_abs_error: f64,
    emp_variance: f64,
    variance_bound: f64,
    nse: f64,
}

pub fn accuracy_json(nodes: usize, order: usize, mu: f64, trials: usize, seed: u64) -> Result<String> {
    let seeds = Seeds::derive(seed, 0);
    let topo = generate_topology(nodes, 150.0, 70.0, seeds.topology)?;
    let spec = FilterSpec {
        order,
        mu,
        ..FilterSpec::default()
    };
    let signal = SignalSpec {
        smooth_weight: 0.0,
        ..SignalSpec::default()
    };
    let q_values: Vec<f64> = (0..=9).map(|k| 0.55 + 0.05 * k as f64).collect();
    let trials = TrialSpec { trials, threads: 1 };
    let points: Vec<AccuracyPoint> = run_accuracy_sweep(&topo, &spec, &signal, &q_values, trials, 0, &seeds)?
        .into_iter()
        .map(|r| AccuracyPoint {
            q: r.q.unwrap_or_default(),
            mean_abs_error: r.mean_abs_error,
            emp_variance: r.emp_variance,
            variance_bound: r.variance_bound,
            nse: r.nse,
        })
        .collect();
    Ok(to_json(&points))
}

/// Mean error and variance against a uniform link probability `q`.
#[wasm_bindgen]
pub fn accuracy(nodes: usize, order: usize, mu: f64, trials: usize, seed: u32) -> Result<String, JsError> {
    js(accuracy_json(nodes, order, mu, trials, seed.into()))
}

#[derive(Serialize)]
struct DenoiseView {
    rows: usize,
    cols: usize,
    clean: Vec<f64>,
    noisy: Vec<f64>,
    perfect_mac: Vec<f64>,
    runs: Vec<DenoiseRunView>,
}

#[derive(Serialize)]
struct DenoiseRunView {
    scheduler: &'static str,
    output: Vec<f64>,
    distance_to_perfect: f64,
    t_slots: Option<usize>,
}

pub fn denoise_json(side: usize, order: usize, noise_std: f64, trials: usize, seed: u64) -> Result<String> {
    let topo: Topology = grid_topology(side, side, 40.0, 50.0)?;
    let network = NetworkSpec {
        radio: radio(50.0)?,
        schedulers: SchedulerKind::ALL.to_vec(),
        n_estimate: topo.n(),
        rlba_probability: None,
    };
    let spec = FilterSpec {
        order,
        ..FilterSpec::default()
    };
    let signal = SignalSpec {
        noise_std,
        ..SignalSpec::default()
    };
    let out = run_denoising(
        &topo,
        &network,
        &spec,
        &signal,
        TrialSpec { trials, threads: 1 },
        0,
        &Seeds::derive(seed, 0),
    )?;
    let values = |s: &wsnfilter::filters::GraphSignal| s.values().iter().copied().collect::<Vec<f64>>();
    Ok(to_json(&DenoiseView {
        rows: side,
        cols: side,
        clean: values(&out.clean),
        noisy: values(&out.noisy),
        perfect_mac: values(&out.perfect_mac),
        runs: out
            .runs
            .iter()
            .map(|r| DenoiseRunView {
                scheduler: r.scheduler.name(),
                output: values(&r.average_output),
                distance_to_perfect: r.distance_to_perfect,
                t_slots: r.report.t_slots,
            })
            .collect(),
    }))
}

/// Noisy smooth field on a square grid, denoised under each scheduler.
#[wasm_bindgen]
pub fn denoise(side: usize, order: usize, noise_std: f64, trials: usize, seed: u32) -> Result<String, JsError> {
    js(denoise_json(side, order, noise_std, trials, seed.into()))
}
