//! Monte Carlo experiments: filtering accuracy under random links, scheduler
//! comparison, and denoising.
//!
//! Every trial draws its own `L` link realizations from a child stream of the
//! trial seed, so results are identical for any thread count: outputs are
//! collected in trial order and reduced sequentially.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{apply_fir, timevarying, CoefficientSet, FilterMode, GraphSignal};
use crate::graph::{
    build_shift, ConnectionMatrix, DiagonalMode, ShiftKind, ShiftOperator, SparseShift, Topology,
};
use crate::optimize::{optimize_coefficients, variance_bound_for_signal, OptResult, Solver, TradeoffProblem};
use crate::radio::RadioParams;
use crate::rng::{self, derive_seed, Purpose};
use crate::scheduler::{run_scheduler, Schedule, SchedulerKind};

/// Number of leading trials whose realizations are checked against `ρ`.
pub const RHO_CHECK_TRIALS: usize = 20;

/// Filter design inputs shared by all experiments. The target is the
/// truncated ARMA₁ response `[1, −w, w², …]`, i.e. `ψ = −w`, `φ = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSpec {
    pub shift: ShiftKind,
    pub mode: FilterMode,
    pub order: usize,
    pub w: f64,
    pub mu: f64,
    pub solver: Solver,
    pub max_iterations: usize,
    pub diagonal: DiagonalMode,
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec {
            shift: ShiftKind::NormalizedShifted,
            mode: FilterMode::NodeVariant,
            order: 5,
            w: 0.45,
            mu: 0.001,
            solver: Solver::Epigraph,
            max_iterations: 50_000,
            diagonal: DiagonalMode::Exact,
        }
    }
}

impl FilterSpec {
    pub fn target(&self) -> Result<CoefficientSet> {
        CoefficientSet::arma1_truncation(self.order, -self.w, 1.0)
    }

    /// Node-invariant designs only support the unregularized problem, so
    /// their `μ` is forced to zero.
    pub fn effective_mu(&self) -> f64 {
        match self.mode {
            FilterMode::NodeVariant => self.mu,
            FilterMode::NodeInvariant => 0.0,
        }
    }

    pub fn problem(&self, shift: &ShiftOperator, q: &ConnectionMatrix) -> Result<TradeoffProblem> {
        let mut p = TradeoffProblem::new(self.target()?, shift.clone(), q.clone(), self.mode, self.effective_mu());
        p.solver = self.solver;
        p.max_iterations = self.max_iterations;
        p.diagonal = self.diagonal;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub trials: usize,
    pub threads: usize,
}

impl Default for TrialSpec {
    fn default() -> Self {
        TrialSpec {
            trials: 1000,
            threads: 1,
        }
    }
}

/// Input signal generation. `smooth_weight = 0` gives white Gaussian values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalSpec {
    pub smooth_weight: f64,
    pub noise_std: f64,
}

impl Default for SignalSpec {
    fn default() -> Self {
        SignalSpec {
            smooth_weight: 5.0,
            noise_std: 0.1,
        }
    }
}

/// Seeds of one replicate, all derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub topology: u64,
    pub schedule: u64,
    pub signal: u64,
    pub trials: u64,
}

impl Seeds {
    pub fn derive(master: u64, replicate: u64) -> Self {
        Seeds {
            topology: derive_seed(master, Purpose::Topology, replicate),
            schedule: derive_seed(master, Purpose::Schedule, replicate),
            signal: derive_seed(master, Purpose::Signal, replicate),
            trials: derive_seed(master, Purpose::Trials, replicate),
        }
    }
}

/// Undirected combinatorial Laplacian of the topology.
fn laplacian(topology: &Topology) -> DMatrix<f64> {
    let n = topology.n();
    let mut l = DMatrix::zeros(n, n);
    for (i, j) in topology.edges() {
        l[(i, j)] = -1.0;
        l[(i, i)] += 1.0;
    }
    l
}

/// `(I + w·L)⁻¹ z` for white `z`: a field that varies slowly across edges.
pub fn smooth_signal<R: Rng + ?Sized>(topology: &Topology, weight: f64, rng: &mut R) -> Result<GraphSignal> {
    let n = topology.n();
    let white = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    if weight == 0.0 {
        return GraphSignal::new(white);
    }
    let system = DMatrix::identity(n, n) + laplacian(topology) * weight;
    let v = system.lu().solve(&white).ok_or(Error::Singular)?;
    GraphSignal::new(v)
}

/// Adds i.i.d. Gaussian noise with standard deviation `std`.
pub fn add_noise<R: Rng + ?Sized>(v: &GraphSignal, std: f64, rng: &mut R) -> Result<GraphSignal> {
    if !(std >= 0.0) {
        return Err(Error::invalid(format!("noise std must be non-negative, got {std}")));
    }
    let noisy = v.values().map(|a| a + std * rng.sample::<f64, _>(StandardNormal));
    GraphSignal::new(noisy)
}

/// Unbiased mean and node-averaged variance trace of a sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: DVector<f64>,
    /// `tr(Ĉov)/N`
    pub variance: f64,
}

pub fn estimate_empirical_moments(samples: &[GraphSignal]) -> Result<Moments> {
    if samples.len() < 2 {
        return Err(Error::invalid(format!("need at least 2 samples, got {}", samples.len())));
    }
    let vectors: Vec<DVector<f64>> = samples.iter().map(|s| s.values().clone()).collect();
    moments_of(&vectors)
}

fn moments_of(samples: &[DVector<f64>]) -> Result<Moments> {
    let n = samples[0].len();
    if let Some(bad) = samples.iter().find(|s| s.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: bad.len(),
        });
    }
    let k = samples.len() as f64;
    let mut mean = DVector::zeros(n);
    for s in samples {
        mean += s;
    }
    mean /= k;
    let variance = if samples.len() > 1 {
        samples.iter().map(|s| (s - &mean).norm_squared()).sum::<f64>() / (k - 1.0) / n as f64
    } else {
        0.0
    };
    Ok(Moments { mean, variance })
}

/// Aggregates of a Monte Carlo filtering run against a reference output `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialStats {
    pub trials: usize,
    pub mean_output: Vec<f64>,
    /// `‖y − ȳ_t‖² / ‖y‖²`
    pub nse: f64,
    /// Mean of `|y_t − y|` over nodes and trials.
    pub mean_abs_error: f64,
    pub mean_signed_error: f64,
    pub mse: f64,
    /// Unbiased `tr(Ĉov(y_t))/N`; zero for a single trial.
    pub emp_variance: f64,
    pub rho_checked: usize,
    pub rho_violations: usize,
}

fn draw_realizations(
    shift: &ShiftOperator,
    q: &ConnectionMatrix,
    order: usize,
    trial_seed: u64,
    trial: usize,
) -> Vec<SparseShift> {
    let mut rng = rng::child_stream(trial_seed, Purpose::Trials, trial as u64);
    (0..order).map(|_| shift.sample_sparse(q, &mut rng)).collect()
}

/// Runs `trials` independent time-varying filterings of `x` with `phi` and
/// compares them to `reference`.
#[allow(clippy::too_many_arguments)]
pub fn run_trials(
    shift: &ShiftOperator,
    q: &ConnectionMatrix,
    phi: &CoefficientSet,
    x: &GraphSignal,
    reference: &GraphSignal,
    spec: TrialSpec,
    trial_seed: u64,
    rho: f64,
) -> Result<TrialStats> {
    let n = shift.n();
    if spec.trials == 0 {
        return Err(Error::invalid("trial count must be at least 1"));
    }
    if x.len() != n || reference.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: if x.len() != n { x.len() } else { reference.len() },
        });
    }
    q.check_support(shift)?;
    phi.check_nodes(n)?;
    let order = phi.order();

    let one = |t: usize| -> (DVector<f64>, usize, usize) {
        let realizations = draw_realizations(shift, q, order, trial_seed, t);
        let y = timevarying(&realizations, phi, x.values());
        let (mut checked, mut violations) = (0, 0);
        if t < RHO_CHECK_TRIALS {
            for r in &realizations {
                checked += 1;
                let norm = r.to_dense().svd(false, false).singular_values.max();
                if norm > rho * (1.0 + 1e-12) {
                    violations += 1;
                }
            }
        }
        (y, checked, violations)
    };
    let results: Vec<(DVector<f64>, usize, usize)> = if spec.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(spec.threads)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
        pool.install(|| (0..spec.trials).into_par_iter().map(one).collect())
    } else {
        (0..spec.trials).map(one).collect()
    };

    let outputs: Vec<DVector<f64>> = results.iter().map(|r| r.0.clone()).collect();
    let moments = moments_of(&outputs)?;
    let y = reference.values();
    let mut abs_sum = 0.0;
    let mut signed_sum = 0.0;
    let mut sq_sum = 0.0;
    for out in &outputs {
        for (a, b) in out.iter().zip(y.iter()) {
            let e = a - b;
            abs_sum += e.abs();
            signed_sum += e;
            sq_sum += e * e;
        }
    }
    let count = (spec.trials * n) as f64;
    let y_norm = y.norm_squared();
    let gap = (y - &moments.mean).norm_squared();
    Ok(TrialStats {
        trials: spec.trials,
        mean_output: moments.mean.iter().copied().collect(),
        nse: if y_norm > 0.0 { gap / y_norm } else { gap },
        mean_abs_error: abs_sum / count,
        mean_signed_error: signed_sum / count,
        mse: sq_sum / count,
        emp_variance: moments.variance,
        rho_checked: results.iter().map(|r| r.1).sum(),
        rho_violations: results.iter().map(|r| r.2).sum(),
    })
}

/// One optimized filter evaluated by Monte Carlo.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub optimization: OptResult,
    pub stats: TrialStats,
    /// `‖x‖²/N · (Σ_l ρ^l max_i|φ_i⁽ˡ⁾|)²`
    pub variance_bound: f64,
}

/// Optimizes coefficients for `q` and measures them against the
/// deterministic-graph target output.
pub fn evaluate_connection(
    shift: &ShiftOperator,
    q: &ConnectionMatrix,
    spec: &FilterSpec,
    x: &GraphSignal,
    trials: TrialSpec,
    trial_seed: u64,
) -> Result<Evaluation> {
    let optimization = optimize_coefficients(&spec.problem(shift, q)?)?;
    let reference = apply_fir(shift.matrix(), &spec.target()?, x)?;
    let stats = run_trials(
        shift,
        q,
        &optimization.coefficients,
        x,
        &reference,
        trials,
        trial_seed,
        optimization.rho,
    )?;
    let variance_bound =
        variance_bound_for_signal(&optimization.coefficients, optimization.rho, x.norm_squared(), shift.n())?;
    Ok(Evaluation {
        optimization,
        stats,
        variance_bound,
    })
}

/// One row of experiment output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub replicate: u64,
    pub q: Option<f64>,
    pub scheduler: Option<SchedulerKind>,
    pub mode: FilterMode,
    pub order: usize,
    pub mu: f64,
    pub trials: usize,
    pub nse: f64,
    pub mean_abs_error: f64,
    pub mean_signed_error: f64,
    pub mse: f64,
    pub emp_variance: f64,
    pub variance_bound: f64,
    pub rho: f64,
    pub rho_checked: usize,
    pub rho_violations: usize,
    pub bias_fro_sq: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub t_slots: Option<usize>,
}

impl MetricsReport {
    pub fn from_evaluation(replicate: u64, spec: &FilterSpec, eval: &Evaluation) -> Self {
        let s = &eval.stats;
        let o = &eval.optimization;
        MetricsReport {
            replicate,
            q: None,
            scheduler: None,
            mode: spec.mode,
            order: spec.order,
            mu: spec.effective_mu(),
            trials: s.trials,
            nse: s.nse,
            mean_abs_error: s.mean_abs_error,
            mean_signed_error: s.mean_signed_error,
            mse: s.mse,
            emp_variance: s.emp_variance,
            variance_bound: eval.variance_bound,
            rho: o.rho,
            rho_checked: s.rho_checked,
            rho_violations: s.rho_violations,
            bias_fro_sq: o.bias_fro_sq,
            objective: o.objective,
            iterations: o.iterations,
            converged: o.converged,
            t_slots: None,
        }
    }

    pub const CSV_HEADER: &'static str = "replicate,q,scheduler,mode,order,mu,trials,nse,mean_abs_error,\
mean_signed_error,mse,emp_variance,variance_bound,rho,rho_checked,rho_violations,bias_fro_sq,objective,\
iterations,converged,t_slots";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.replicate,
            opt(self.q.map(|q| q.to_string())),
            opt(self.scheduler.map(|k| k.name().to_string())),
            match self.mode {
                FilterMode::NodeInvariant => "node_invariant",
                FilterMode::NodeVariant => "node_variant",
            },
            self.order,
            self.mu,
            self.trials,
            self.nse,
            self.mean_abs_error,
            self.mean_signed_error,
            self.mse,
            self.emp_variance,
            self.variance_bound,
            self.rho,
            self.rho_checked,
            self.rho_violations,
            self.bias_fro_sq,
            self.objective,
            self.iterations,
            self.converged,
            opt(self.t_slots.map(|t| t.to_string())),
        )
    }
}

/// Header plus one line per report.
pub fn reports_to_csv(reports: &[MetricsReport]) -> String {
    let mut out = String::from(MetricsReport::CSV_HEADER);
    out.push('\n');
    for r in reports {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}

/// Input signal of a replicate.
pub fn replicate_signal(topology: &Topology, signal: &SignalSpec, seeds: &Seeds) -> Result<GraphSignal> {
    let mut rng = rng::stream(seeds.signal);
    smooth_signal(topology, signal.smooth_weight, &mut rng)
}

/// Uniform link probability `q` on every link, for each value in `q_values`.
pub fn run_accuracy_sweep(
    topology: &Topology,
    spec: &FilterSpec,
    signal: &SignalSpec,
    q_values: &[f64],
    trials: TrialSpec,
    replicate: u64,
    seeds: &Seeds,
) -> Result<Vec<MetricsReport>> {
    let shift = build_shift(topology, spec.shift)?;
    let x = replicate_signal(topology, signal, seeds)?;
    q_values
        .iter()
        .map(|&q| {
            if !(q > 0.0 && q <= 1.0) {
                return Err(Error::invalid(format!("q values must lie in (0, 1], got {q}")));
            }
            let conn = ConnectionMatrix::uniform(&shift, q)?;
            let eval = evaluate_connection(&shift, &conn, spec, &x, trials, seeds.trials)?;
            let mut report = MetricsReport::from_evaluation(replicate, spec, &eval);
            report.q = Some(q);
            Ok(report)
        })
        .collect()
}

/// Radio-layer inputs of the scheduler experiments.
#[derive(Debug, Clone)]
pub struct NetworkSpec {
    pub radio: RadioParams,
    pub schedulers: Vec<SchedulerKind>,
    pub n_estimate: usize,
    pub rlba_probability: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SchedulerRun {
    pub schedule: Schedule,
    pub evaluation: Evaluation,
    pub report: MetricsReport,
}

/// Schedules with each scheduler, optimizes against the resulting link
/// probabilities, and filters the replicate signal.
pub fn run_scheduler_comparison(
    topology: &Topology,
    network: &NetworkSpec,
    spec: &FilterSpec,
    signal: &SignalSpec,
    trials: TrialSpec,
    replicate: u64,
    seeds: &Seeds,
) -> Result<Vec<SchedulerRun>> {
    let shift = build_shift(topology, spec.shift)?;
    let x = replicate_signal(topology, signal, seeds)?;
    compare_on_signal(topology, &shift, network, spec, &x, trials, replicate, seeds)
}

#[allow(clippy::too_many_arguments)]
fn compare_on_signal(
    topology: &Topology,
    shift: &ShiftOperator,
    network: &NetworkSpec,
    spec: &FilterSpec,
    x: &GraphSignal,
    trials: TrialSpec,
    replicate: u64,
    seeds: &Seeds,
) -> Result<Vec<SchedulerRun>> {
    network
        .schedulers
        .iter()
        .map(|&kind| {
            let (schedule, _) = run_scheduler(
                kind,
                topology,
                &network.radio,
                network.n_estimate,
                seeds.schedule,
                network.rlba_probability,
            )?;
            let (evaluation, report) = evaluate_scheduled(
                shift,
                &schedule.q_matrix,
                kind,
                schedule.n_slots(),
                spec,
                x,
                trials,
                replicate,
                seeds,
            )?;
            Ok(SchedulerRun {
                schedule,
                evaluation,
                report,
            })
        })
        .collect()
}

/// Evaluates link probabilities produced by a scheduler. Feeding a stored
/// schedule through this gives the same report as the comparison run.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_scheduled(
    shift: &ShiftOperator,
    q: &ConnectionMatrix,
    kind: SchedulerKind,
    t_slots: usize,
    spec: &FilterSpec,
    x: &GraphSignal,
    trials: TrialSpec,
    replicate: u64,
    seeds: &Seeds,
) -> Result<(Evaluation, MetricsReport)> {
    let evaluation = evaluate_connection(shift, q, spec, x, trials, seeds.trials)?;
    let mut report = MetricsReport::from_evaluation(replicate, spec, &evaluation);
    report.scheduler = Some(kind);
    report.t_slots = Some(t_slots);
    Ok((evaluation, report))
}

#[derive(Debug, Clone)]
pub struct DenoiseOutput {
    /// Clean smooth field.
    pub clean: GraphSignal,
    pub noisy: GraphSignal,
    /// Target filter on the deterministic graph: every packet delivered.
    pub perfect_mac: GraphSignal,
    pub runs: Vec<DenoiseRun>,
}

#[derive(Debug, Clone)]
pub struct DenoiseRun {
    pub scheduler: SchedulerKind,
    pub average_output: GraphSignal,
    /// `‖ȳ_t − y_perfect‖₂`
    pub distance_to_perfect: f64,
    pub report: MetricsReport,
}

/// Smooth field plus Gaussian noise, filtered over each scheduler's random
/// links with a truncated Tikhonov (ARMA₁) target.
pub fn run_denoising(
    topology: &Topology,
    network: &NetworkSpec,
    spec: &FilterSpec,
    signal: &SignalSpec,
    trials: TrialSpec,
    replicate: u64,
    seeds: &Seeds,
) -> Result<DenoiseOutput> {
    let shift = build_shift(topology, spec.shift)?;
    if !shift.is_symmetric() {
        return Err(Error::invalid("denoising needs a symmetric shift"));
    }
    let clean = replicate_signal(topology, signal, seeds)?;
    let mut rng = rng::child_stream(seeds.signal, Purpose::Signal, 1);
    let noisy = add_noise(&clean, signal.noise_std, &mut rng)?;
    let perfect_mac = apply_fir(shift.matrix(), &spec.target()?, &noisy)?;
    let runs = compare_on_signal(topology, &shift, network, spec, &noisy, trials, replicate, seeds)?
        .into_iter()
        .map(|run| {
            let average_output = GraphSignal::from_vec(run.evaluation.stats.mean_output.clone())?;
            let distance_to_perfect = (average_output.values() - perfect_mac.values()).norm();
            Ok(DenoiseRun {
                scheduler: run.schedule.kind,
                average_output,
                distance_to_perfect,
                report: run.report,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DenoiseOutput {
        clean,
        noisy,
        perfect_mac,
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::{expected_output, tikhonov_solve};
    use crate::graph::{expected_shift, generate_topology, grid_topology};

    #[test]
    fn moments_hand_cases() {
        let x = GraphSignal::from_vec(vec![1.0, -2.0, 2.0]).unwrap();
        let same = estimate_empirical_moments(&[x.clone(), x.clone(), x.clone()]).unwrap();
        assert_eq!(same.variance, 0.0);
        assert_eq!(same.mean, *x.values());

        let neg = GraphSignal::new(-x.values()).unwrap();
        let m = estimate_empirical_moments(&[x.clone(), neg]).unwrap();
        assert!(m.mean.amax() == 0.0);
        // Σ‖s − 0‖² / (K − 1) / N = 2‖x‖² / 3
        assert_close!(m.variance, 2.0 * 9.0 / 3.0, 1e-15);
        assert!(estimate_empirical_moments(&[x]).is_err());
    }

    #[test]
    fn perfect_links_reproduce_target() {
        let topo = generate_topology(15, 10.0, 4.0, 2).unwrap();
        let s = build_shift(&topo, ShiftKind::NormalizedShifted).unwrap();
        let h = CoefficientSet::arma1_truncation(4, -0.45, 1.0).unwrap();
        let x = smooth_signal(&topo, 5.0, &mut rng::stream(1)).unwrap();
        let y = apply_fir(s.matrix(), &h, &x).unwrap();
        let ones = ConnectionMatrix::ones(&s);
        let stats = run_trials(&s, &ones, &h, &x, &y, TrialSpec { trials: 5, threads: 1 }, 3, 1.0).unwrap();
        // sparse and dense products only differ by summation order
        assert!(stats.mean_abs_error <= 1e-12);
        assert!(stats.emp_variance <= 1e-25);
        assert!(stats.nse <= 1e-20);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let topo = generate_topology(12, 10.0, 5.0, 4).unwrap();
        let s = build_shift(&topo, ShiftKind::Adjacency).unwrap();
        let q = ConnectionMatrix::uniform(&s, 0.6).unwrap();
        let h = CoefficientSet::invariant(vec![1.0, 0.3, 0.1]).unwrap();
        let x = smooth_signal(&topo, 0.0, &mut rng::stream(1)).unwrap();
        let y = apply_fir(s.matrix(), &h, &x).unwrap();
        let a = run_trials(&s, &q, &h, &x, &y, TrialSpec { trials: 64, threads: 1 }, 9, 10.0).unwrap();
        let b = run_trials(&s, &q, &h, &x, &y, TrialSpec { trials: 64, threads: 4 }, 9, 10.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mean_output_tracks_expectation() {
        let topo = generate_topology(10, 10.0, 5.0, 6).unwrap();
        let s = build_shift(&topo, ShiftKind::Adjacency).unwrap();
        let q = ConnectionMatrix::random(&s, &mut rng::stream(2));
        let h = CoefficientSet::invariant(vec![0.5, 0.3, 0.1]).unwrap();
        let x = smooth_signal(&topo, 0.0, &mut rng::stream(3)).unwrap();
        let trials = 20_000;
        let stats = run_trials(&s, &q, &h, &x, &x, TrialSpec { trials, threads: 1 }, 5, 100.0).unwrap();
        let expected = expected_output(&expected_shift(&s, &q).unwrap(), &h, &x).unwrap();
        let se = (stats.emp_variance * 10.0 / trials as f64).sqrt();
        for (m, e) in stats.mean_output.iter().zip(expected.values().iter()) {
            assert!((m - e).abs() <= 5.0 * se.max(1e-12), "{m} vs {e}");
        }
    }

    #[test]
    fn truncated_tikhonov_converges_with_order() {
        let topo = grid_topology(10, 10, 40.0, 50.0).unwrap();
        let s = build_shift(&topo, ShiftKind::NormalizedShifted).unwrap();
        let x = smooth_signal(&topo, 5.0, &mut rng::stream(8)).unwrap();
        let exact = tikhonov_solve(s.matrix(), 0.45, &x).unwrap();
        let mut last = f64::INFINITY;
        for order in [5, 10, 20] {
            let h = CoefficientSet::arma1_truncation(order, -0.45, 1.0).unwrap();
            let y = apply_fir(s.matrix(), &h, &x).unwrap();
            let gap = (y.values() - exact.values()).norm() / exact.values().norm();
            assert!(gap < last);
            last = gap;
        }
    }

    #[test]
    fn csv_rows_match_header() {
        let topo = generate_topology(10, 10.0, 5.0, 1).unwrap();
        let spec = FilterSpec {
            order: 2,
            ..FilterSpec::default()
        };
        let seeds = Seeds::derive(1, 0);
        let reports = run_accuracy_sweep(
            &topo,
            &spec,
            &SignalSpec::default(),
            &[0.5, 1.0],
            TrialSpec { trials: 10, threads: 1 },
            0,
            &seeds,
        )
        .unwrap();
        let csv = reports_to_csv(&reports);
        let cols = MetricsReport::CSV_HEADER.split(',').count();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().all(|l| l.split(',').count() == cols));
    }
}
