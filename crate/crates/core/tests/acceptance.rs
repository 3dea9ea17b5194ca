//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use wsnfilter::filters::{apply_fir, filter_matrix, run_arma1, tikhonov_solve, CoefficientSet, FilterMode, GraphSignal};
use wsnfilter::graph::{
    build_shift, equalize_rows, expected_shift, generate_topology, grid_topology, ConnectionMatrix, Point,
    ShiftKind, Topology,
};
use wsnfilter::optimize::{
    bias_matrix, optimize_coefficients, spectral_bound, unbiased_scaling, variance_bound_for_signal, Solver,
    TradeoffProblem,
};
use wsnfilter::radio::{ranges, RadioParams};
use wsnfilter::rng;
use wsnfilter::scheduler::{cdsa_schedule, verify_schedule, SchedulerKind};
use wsnfilter::sim::{
    run_accuracy_sweep, run_denoising, run_scheduler_comparison, run_trials, smooth_signal, FilterSpec,
    NetworkSpec, Seeds, SignalSpec, TrialSpec,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Radio setup of the delay experiments: P = −2 dBm, N0 = −100 dBm, ν = 2.5,
/// κ = 1, z = 176, broadcast range set directly.
fn fig8_radio(r_broadcast: f64) -> RadioParams {
    RadioParams::new(-2.0, -100.0, 2.5, 1.0, 0.6, 176)
        .unwrap()
        .with_broadcast_range(r_broadcast)
        .unwrap()
}

fn random_coefficients<R: Rng>(mode: FilterMode, order: usize, n: usize, rng: &mut R) -> CoefficientSet {
    match mode {
        FilterMode::NodeInvariant => {
            CoefficientSet::invariant((0..=order).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        }
        FilterMode::NodeVariant => {
            CoefficientSet::variant(DMatrix::from_fn(order + 1, n, |_, _| rng.random_range(-1.0..1.0))).unwrap()
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len().is_multiple_of(2) {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

fn criterion_1() -> Outcome {
    let mut rng = rng::stream(101);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for &p in &[0.3, 0.5, 0.9] {
        for k in 0..30u64 {
            let n = rng.random_range(5..=20);
            let order = rng.random_range(0..=6);
            let topo = generate_topology(n, 10.0, 3.0, 1000 + k).unwrap();
            let s = build_shift(&topo, ShiftKind::Adjacency).unwrap();
            let conn = ConnectionMatrix::uniform(&s, p).unwrap();
            for mode in [FilterMode::NodeInvariant, FilterMode::NodeVariant] {
                let h = random_coefficients(mode, order, n, &mut rng);
                let phi = unbiased_scaling(&h, p).unwrap();
                let b = bias_matrix(&phi, &h, &s, &conn).unwrap();
                worst = worst.max(b.norm());
                cases += 1;
            }
        }
    }
    outcome(worst <= 1e-10, format!("{cases} cases, max ‖B‖_F = {worst:.2e} (tol 1e-10)"))
}

fn criterion_2() -> Outcome {
    let mut rng = rng::stream(202);
    let mut held = 0;
    let mut worst_ratio = 0.0f64;
    let configs = 50;
    for k in 0..configs as u64 {
        let n = rng.random_range(5..=30);
        let order = rng.random_range(1..=5);
        let q = rng.random_range(0.3..=1.0);
        let topo = generate_topology(n, 10.0, 4.0, 2000 + k).unwrap();
        let s = build_shift(&topo, ShiftKind::Adjacency).unwrap();
        let conn = ConnectionMatrix::uniform(&s, q).unwrap();
        let rho = spectral_bound(s.matrix()).unwrap();
        let h = random_coefficients(FilterMode::NodeVariant, order, n, &mut rng);
        let x = smooth_signal(&topo, 0.0, &mut rng).unwrap();
        let y = apply_fir(s.matrix(), &h, &x).unwrap();
        let stats = run_trials(&s, &conn, &h, &x, &y, TrialSpec { trials: 10_000, threads: 4 }, k, rho).unwrap();
        let bound = variance_bound_for_signal(&h, rho, x.norm_squared(), n).unwrap();
        worst_ratio = worst_ratio.max(stats.emp_variance / bound);
        if stats.emp_variance <= bound {
            held += 1;
        }
    }
    outcome(
        held == configs,
        format!("bound held in {held}/{configs} configurations, max variance/bound = {worst_ratio:.3}"),
    )
}

/// Mean absolute error of the expected output against the deterministic
/// target output for one signal.
fn expected_mean_error(
    phi: &CoefficientSet,
    target: &CoefficientSet,
    s: &wsnfilter::graph::ShiftOperator,
    conn: &ConnectionMatrix,
    x: &GraphSignal,
) -> f64 {
    let s_bar = expected_shift(s, conn).unwrap();
    let e = (filter_matrix(&s_bar, phi).unwrap() - filter_matrix(s.matrix(), target).unwrap()) * x.values();
    e.abs().mean()
}

fn criterion_3() -> Outcome {
    let mut worst_rate = 1.0f64;
    let mut summary = Vec::new();
    for order in 1..=8usize {
        let mut wins = 0;
        for k in 0..50u64 {
            let seed = 3000 + 100 * order as u64 + k;
            let topo = generate_topology(20, 10.0, 4.0, seed).unwrap();
            let s = build_shift(&topo, ShiftKind::NormalizedShifted).unwrap();
            let mut rng = rng::stream(seed);
            let conn = ConnectionMatrix::random(&s, &mut rng);
            let x = smooth_signal(&topo, 0.0, &mut rng).unwrap();
            let target = CoefficientSet::arma1_truncation(order, -0.45, 1.0).unwrap();
            let errors: Vec<f64> = [FilterMode::NodeVariant, FilterMode::NodeInvariant]
                .iter()
                .map(|&mode| {
                    let problem = TradeoffProblem::new(target.clone(), s.clone(), conn.clone(), mode, 0.0);
                    let res = optimize_coefficients(&problem).unwrap();
                    let phi = res.coefficients;
                    let tgt = match mode {
                        FilterMode::NodeVariant => target.to_node_variant(20).unwrap(),
                        FilterMode::NodeInvariant => target.clone(),
                    };
                    let phi = match mode {
                        FilterMode::NodeVariant => phi,
                        FilterMode::NodeInvariant => phi,
                    };
                    expected_mean_error(&phi, &tgt, &s, &conn, &x)
                })
                .collect();
            if errors[0] <= errors[1] {
                wins += 1;
            }
        }
        let rate = wins as f64 / 50.0;
        worst_rate = worst_rate.min(rate);
        summary.push(format!("L{order}:{wins}/50"));
    }
    outcome(worst_rate >= 0.9, format!("node-variant ≤ node-invariant: {}", summary.join(" ")))
}

fn criterion_4() -> Outcome {
    let mut wins = 0;
    let mut ratios = Vec::new();
    let target = CoefficientSet::arma1_truncation(5, -0.45, 1.0).unwrap();
    for k in 0..50u64 {
        let seed = 4000 + k;
        let topo = generate_topology(20, 10.0, 4.0, seed).unwrap();
        let s = build_shift(&topo, ShiftKind::Adjacency).unwrap();
        let mut rng = rng::stream(seed);
        let p = ConnectionMatrix::random(&s, &mut rng);
        let q = equalize_rows(&p);
        let h_norm = filter_matrix(s.matrix(), &target).unwrap().norm_squared();
        let nse = |conn: &ConnectionMatrix| {
            let problem = TradeoffProblem::new(target.clone(), s.clone(), conn.clone(), FilterMode::NodeVariant, 0.0);
            optimize_coefficients(&problem).unwrap().bias_fro_sq / h_norm
        };
        let (nse_p, nse_q) = (nse(&p), nse(&q));
        ratios.push(nse_q / nse_p);
        if nse_q <= nse_p {
            wins += 1;
        }
    }
    outcome(
        wins >= 45,
        format!("NSE(Q) ≤ NSE(P) in {wins}/50 seeds, median NSE(Q)/NSE(P) = {:.3}", median(ratios)),
    )
}

fn criterion_5() -> Outcome {
    let q_values = [0.55, 0.65, 0.75, 0.85, 0.95];
    let mut ok = true;
    let mut ranges_seen = Vec::new();
    for order in [3usize, 5, 10] {
        let spec = FilterSpec {
            shift: ShiftKind::NormalizedShifted,
            mode: FilterMode::NodeVariant,
            order,
            mu: 0.001,
            ..FilterSpec::default()
        };
        let seeds = Seeds::derive(5, 0);
        let topo = generate_topology(100, 150.0, 70.0, seeds.topology).unwrap();
        let reports = run_accuracy_sweep(
            &topo,
            &spec,
            &SignalSpec { smooth_weight: 0.0, ..SignalSpec::default() },
            &q_values,
            TrialSpec { trials: 1000, threads: 4 },
            0,
            &seeds,
        )
        .unwrap();
        let (mut emin, mut emax, mut vmin, mut vmax) = (f64::MAX, 0.0f64, f64::MAX, 0.0f64);
        for r in &reports {
            emin = emin.min(r.mean_abs_error);
            emax = emax.max(r.mean_abs_error);
            vmin = vmin.min(r.emp_variance);
            vmax = vmax.max(r.emp_variance);
            ok &= (1e-3..=1e-1).contains(&r.mean_abs_error) && (1e-4..=1e-2).contains(&r.emp_variance);
        }
        ranges_seen.push(format!("L{order}: err [{emin:.1e}, {emax:.1e}] var [{vmin:.1e}, {vmax:.1e}]"));
    }
    outcome(ok, ranges_seen.join("; "))
}

fn cdsa_instances() -> Vec<(Topology, RadioParams, u64)> {
    let mut rng = rng::stream(606);
    (0..100u64)
        .map(|k| {
            let n = rng.random_range(2..=100);
            let side = rng.random_range(100.0..600.0);
            let rb = rng.random_range(30.0..80.0);
            (generate_topology(n, side, rb, 6000 + k).unwrap(), fig8_radio(rb), k)
        })
        .collect()
}

fn criterion_6() -> Outcome {
    let mut violations = 0;
    let mut partition_failures = 0;
    let mut slots = Vec::new();
    for (topo, params, seed) in cdsa_instances() {
        let (s, _) = cdsa_schedule(&topo, &params, topo.n(), seed).unwrap();
        let report = verify_schedule(&s, &topo, &params);
        violations += report.violations.len();
        partition_failures += usize::from(!report.partition_ok());
        slots.push(s.n_slots() as f64 / topo.n() as f64);
    }
    outcome(
        violations == 0 && partition_failures == 0,
        format!(
            "100 instances: {violations} SINR violations, {partition_failures} partition failures, median T_s/N = {:.2}",
            median(slots)
        ),
    )
}

fn criterion_7() -> Outcome {
    let params = fig8_radio(60.0);
    let r_star = ranges(&params, 1).unwrap().r_preventing;
    let mut rng = rng::stream(707);
    let mut results = Vec::new();
    let mut ok = true;
    for n in [3usize, 10, 25] {
        let side = 4.0 * r_star;
        let center = Point::new(side / 2.0, side / 2.0);
        let positions = (0..n)
            .map(|_| {
                let r = r_star * rng.random::<f64>().sqrt() * 0.999;
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                Point::new(center.x + r * a.cos(), center.y + r * a.sin())
            })
            .collect();
        let topo = Topology::from_positions(positions, side, 60.0).unwrap();
        let (s, _) = cdsa_schedule(&topo, &params, n, n as u64).unwrap();
        ok &= s.n_slots() == n;
        results.push(format!("N={n}: T_s={}", s.n_slots()));
    }
    outcome(ok, results.join(", "))
}

fn criterion_8() -> Outcome {
    let mut worst = 0.0f64;
    let mut links = 0;
    let mut bad_range = 0;
    for (topo, params, seed) in cdsa_instances() {
        let (s, _) = cdsa_schedule(&topo, &params, topo.n(), seed).unwrap();
        for a in &s.acceptance {
            links += 1;
            worst = worst.max((a.p_ac * a.pdr - s.per_node[a.tx].pdr_min).abs());
            if !(a.p_ac > 0.0 && a.p_ac <= 1.0) {
                bad_range += 1;
            }
        }
    }
    outcome(
        worst <= 1e-12 && bad_range == 0,
        format!("{links} links, max |p_ac·PDR − PDR_min| = {worst:.1e}, p_ac outside (0,1]: {bad_range}"),
    )
}

fn criterion_9() -> Outcome {
    let params = fig8_radio(60.0);
    let network = NetworkSpec {
        radio: params,
        schedulers: SchedulerKind::ALL.to_vec(),
        n_estimate: 100,
        rlba_probability: None,
    };
    let spec = FilterSpec {
        shift: ShiftKind::NormalizedShifted,
        order: 5,
        ..FilterSpec::default()
    };
    let mut cdsa_best = 0;
    let mut slots: Vec<Vec<f64>> = vec![Vec::new(); 4];
    let seeds_n = 30u64;
    for k in 0..seeds_n {
        let seeds = Seeds::derive(9, k);
        let topo = generate_topology(100, 280.0, 60.0, seeds.topology).unwrap();
        let runs = run_scheduler_comparison(
            &topo,
            &network,
            &spec,
            &SignalSpec::default(),
            TrialSpec { trials: 1000, threads: 4 },
            k,
            &seeds,
        )
        .unwrap();
        let cdsa = runs[0].report.nse;
        if runs[1..].iter().all(|r| cdsa <= r.report.nse) {
            cdsa_best += 1;
        }
        for (i, r) in runs.iter().enumerate() {
            slots[i].push(r.schedule.n_slots() as f64);
        }
    }
    let medians: Vec<f64> = slots.into_iter().map(median).collect();
    let slots_ok = medians[1..].iter().all(|&m| medians[0] <= m);

    let grid = grid_topology(10, 10, 40.0, 50.0).unwrap();
    let grid_network = NetworkSpec {
        radio: fig8_radio(50.0),
        n_estimate: 100,
        ..network
    };
    let denoise_spec = FilterSpec {
        shift: ShiftKind::NormalizedShifted,
        order: 20,
        w: 0.45,
        ..FilterSpec::default()
    };
    let out = run_denoising(
        &grid,
        &grid_network,
        &denoise_spec,
        &SignalSpec::default(),
        TrialSpec { trials: 1000, threads: 4 },
        0,
        &Seeds::derive(9, 1000),
    )
    .unwrap();
    let d: Vec<f64> = out.runs.iter().map(|r| r.distance_to_perfect).collect();
    let denoise_ok = d[1..].iter().all(|&v| d[0] <= v);
    let ties = d[1..].iter().filter(|&&v| v == d[0]).count();

    let nse_ok = cdsa_best as f64 >= 0.9 * seeds_n as f64;
    outcome(
        nse_ok && slots_ok && denoise_ok,
        format!(
            "CDSA lowest NSE in {cdsa_best}/{seeds_n}; median T_s cdsa/lbpim/rlba/coloring = {:.0}/{:.0}/{:.0}/{:.0}; \
             denoise distance to perfect MAC = {:.2e}/{:.2e}/{:.2e}/{:.2e} ({ties} exact ties)",
            medians[0], medians[1], medians[2], medians[3], d[0], d[1], d[2], d[3]
        ),
    )
}

fn criterion_10() -> Outcome {
    let mut worst = 0.0f64;
    let mut cases = 0;
    for (k, &n) in [5usize, 10, 20, 35, 50].iter().enumerate() {
        for rep in 0..4u64 {
            let topo = generate_topology(n, 10.0, 4.0, 10_000 + 10 * k as u64 + rep).unwrap();
            for kind in [ShiftKind::NormalizedShifted, ShiftKind::Adjacency] {
                let Ok(s) = build_shift(&topo, kind) else { continue };
                let norm = s.matrix().clone().svd(false, false).singular_values.max();
                if norm == 0.0 {
                    continue;
                }
                let w = 0.45 / norm.max(0.5);
                let x = smooth_signal(&topo, 0.0, &mut rng::stream(rep)).unwrap();
                let y = run_arma1(s.matrix(), -w, 1.0, &x, &x, 500).unwrap();
                let v = tikhonov_solve(s.matrix(), w, &x).unwrap();
                let rel = (y.values() - v.values()).norm() / v.values().norm();
                worst = worst.max(rel);
                cases += 1;
            }
        }
    }
    outcome(worst <= 1e-8, format!("{cases} symmetric shifts, max relative gap = {worst:.1e} (tol 1e-8)"))
}

/// Exact minimum of a convex 2-variable quadratic `zᵀGz − 2cᵀz` over the box
/// `|z0| ≤ a`, `|z1| ≤ b`, by checking the interior stationary point and the
/// minimizer on each edge.
fn box_qp(g: &DMatrix<f64>, c: &DVector<f64>, a: f64, b: f64) -> f64 {
    let f = |z0: f64, z1: f64| {
        g[(0, 0)] * z0 * z0 + 2.0 * g[(0, 1)] * z0 * z1 + g[(1, 1)] * z1 * z1 - 2.0 * (c[0] * z0 + c[1] * z1)
    };
    let mut best = f64::INFINITY;
    if let Some(z) = g.clone().lu().solve(c) {
        if z[0].abs() <= a && z[1].abs() <= b {
            best = best.min(f(z[0], z[1]));
        }
    }
    let clamp_min = |coef: f64, lin: f64, lim: f64| if coef > 0.0 { (lin / coef).clamp(-lim, lim) } else { 0.0 };
    for z0 in [-a, a] {
        let z1 = clamp_min(g[(1, 1)], c[1] - g[(0, 1)] * z0, b);
        best = best.min(f(z0, z1));
    }
    for z1 in [-b, b] {
        let z0 = clamp_min(g[(0, 0)], c[0] - g[(0, 1)] * z1, a);
        best = best.min(f(z0, z1));
    }
    best
}

fn criterion_11() -> Outcome {
    let mu = 0.5;
    let mut worst_gap = 0.0f64;
    let mut worst_ls = 0.0f64;
    for seed in 0..10u64 {
        let mut topo = generate_topology(4, 10.0, 7.0, 11_000 + seed).unwrap();
        let mut bump = 0;
        while !topo.is_connected() {
            bump += 100;
            topo = generate_topology(4, 10.0, 7.0, 11_000 + seed + bump).unwrap();
        }
        let s = build_shift(&topo, ShiftKind::NormalizedShifted).unwrap();
        let conn = ConnectionMatrix::random(&s, &mut rng::stream(seed));
        let target = CoefficientSet::arma1_truncation(1, -0.45, 1.0).unwrap();

        let mut problem = TradeoffProblem::new(target.clone(), s.clone(), conn.clone(), FilterMode::NodeVariant, mu);
        problem.solver = Solver::Subgradient;
        let res = optimize_coefficients(&problem).unwrap();
        let rho = res.rho;

        // grid oracle over the lag maxima (t0, t1); the per-node problem for
        // fixed maxima is a box-constrained 2-variable least squares
        let s_bar = expected_shift(&s, &conn).unwrap();
        let h = filter_matrix(s.matrix(), &target).unwrap();
        let rows: Vec<(DMatrix<f64>, DVector<f64>, f64)> = (0..4)
            .map(|i| {
                let m = DMatrix::from_fn(4, 2, |j, l| if l == 0 { f64::from(u8::from(i == j)) } else { s_bar[(i, j)] });
                let hi = h.row(i).transpose();
                (m.tr_mul(&m), m.tr_mul(&hi), hi.norm_squared())
            })
            .collect();
        let value = |t0: f64, t1: f64| {
            let bias: f64 = rows.iter().map(|(g, c, k)| box_qp(g, c, t0, t1) + k).sum();
            bias + mu * (t0 + rho * t1).powi(2)
        };
        let ls = {
            let mut p0 = problem.clone();
            p0.mu = 0.0;
            optimize_coefficients(&p0).unwrap().coefficients
        };
        let (t0_max, t1_max) = (ls.lag_max_abs(0) + 0.1, ls.lag_max_abs(1) + 0.1);
        let mut best = (f64::INFINITY, 0.0, 0.0);
        let mut step = 1e-2;
        let (mut lo0, mut hi0, mut lo1, mut hi1) = (0.0, t0_max, 0.0, t1_max);
        while step >= 1e-4 {
            let mut t0 = lo0;
            while t0 <= hi0 + 1e-12 {
                let mut t1 = lo1;
                while t1 <= hi1 + 1e-12 {
                    let v = value(t0, t1);
                    if v < best.0 {
                        best = (v, t0, t1);
                    }
                    t1 += step;
                }
                t0 += step;
            }
            lo0 = (best.1 - 3.0 * step).max(0.0);
            hi0 = best.1 + 3.0 * step;
            lo1 = (best.2 - 3.0 * step).max(0.0);
            hi1 = best.2 + 3.0 * step;
            step /= 10.0;
        }
        worst_gap = worst_gap.max((res.objective - best.0).abs());

        // per-row least squares against one joint dense least squares
        let n = 4;
        let joint = DMatrix::from_fn(n * n, 2 * n, |r, c| {
            // row r = (i, j) of vec(B) in row-major order; column c = (l, node)
            let (i, j) = (r / n, r % n);
            let (l, node) = (c / n, c % n);
            if node != i {
                0.0
            } else if l == 0 {
                f64::from(u8::from(i == j))
            } else {
                s_bar[(i, j)]
            }
        });
        let rhs = DVector::from_fn(n * n, |r, _| h[(r / n, r % n)]);
        let sol = joint.svd(true, true).solve(&rhs, 1e-12).unwrap();
        let per_row = ls.values();
        for c in 0..2 * n {
            worst_ls = worst_ls.max((sol[c] - per_row[(c / n, c % n)]).abs());
        }
    }
    outcome(
        worst_gap <= 1e-3 && worst_ls <= 1e-8,
        format!("10 instances: max |subgradient − grid| = {worst_gap:.1e} (tol 1e-3), max |per-row − joint LS| = {worst_ls:.1e} (tol 1e-8)"),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        ("unbiasedness identity", criterion_1),
        ("variance bound", criterion_2),
        ("node-variant beats node-invariant", criterion_3),
        ("row equalization lowers NSE", criterion_4),
        ("accuracy magnitudes", criterion_5),
        ("CDSA SINR guarantee and partition", criterion_6),
        ("clustered nodes need N slots", criterion_7),
        ("PDR equalization", criterion_8),
        ("scheduler comparison trends", criterion_9),
        ("ARMA1 reaches the Tikhonov solution", criterion_10),
        ("optimizer oracles", criterion_11),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = format!("{}", i + 1);
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {}: {} ({:.1}s) {}",
            id,
            if o.pass { "PASS" } else { "FAIL" },
            name,
            start.elapsed().as_secs_f64(),
            o.detail
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
