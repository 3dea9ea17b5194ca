//! Filter coefficient design for random graphs.
//!
//! Given target taps `h` for the deterministic graph, find taps `φ` whose
//! expected output on `S̄ = E[S_t]` stays close to the target output while
//! keeping the variance bound small:
//!
//! ```text
//! minimize ‖Σ_l diag(φ⁽ˡ⁾) S̄^l − Σ_l diag(h⁽ˡ⁾) S^l‖²_F + μ (Σ_l ρ^l max_i |φ_i⁽ˡ⁾|)²
//! ```
//!
//! Row `i` of the bias matrix only involves node `i`'s taps, so the `μ = 0`
//! node-variant problem splits into `N` small least-squares problems. For
//! `μ > 0` the max-abs terms are handled through the epigraph form
//! `|φ_i⁽ˡ⁾| ≤ t_l`, which turns the problem into a smooth one over a convex
//! set that admits an exact projection.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{filter_matrix, CoefficientSet, FilterMode};
use crate::graph::{expected_shift_with, ConnectionMatrix, DiagonalMode, ShiftOperator};

/// Safety factor applied to the power-iteration estimate of `‖S‖₂`.
pub const SPECTRAL_SAFETY: f64 = 1.01;

/// Step-constant restarts of the subgradient solver and the shrink factor
/// between them.
pub const SUBGRADIENT_STAGES: usize = 6;
pub const SUBGRADIENT_SHRINK: f64 = 3.0;

/// Scales the lag-`l` taps by `p^{−l}`, the exact unbiasing rule for a
/// uniform link probability `p` and zero-diagonal shifts.
pub fn unbiased_scaling(target: &CoefficientSet, p: f64) -> Result<CoefficientSet> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid(format!("probability must lie in (0, 1], got {p}")));
    }
    scale_rows(target, &vec![p; target.n_nodes().unwrap_or(1)])
}

/// Per-node version of [`unbiased_scaling`]: tap `(l, i)` scaled by `q_i^{−l}`.
fn scale_rows(target: &CoefficientSet, q: &[f64]) -> Result<CoefficientSet> {
    let values = target.values();
    let scaled = DMatrix::from_fn(values.nrows(), values.ncols(), |l, i| {
        values[(l, i)] * q[i.min(q.len() - 1)].powi(-(l as i32))
    });
    match target.mode() {
        FilterMode::NodeInvariant => CoefficientSet::invariant(scaled.column(0).iter().copied().collect()),
        FilterMode::NodeVariant => CoefficientSet::variant(scaled),
    }
}

/// `B = Σ_l diag(φ⁽ˡ⁾) S̄^l − Σ_l diag(h⁽ˡ⁾) S^l` with `S̄ = E[S_t]` under `p`.
pub fn bias_matrix(
    phi: &CoefficientSet,
    target: &CoefficientSet,
    s: &ShiftOperator,
    p: &ConnectionMatrix,
) -> Result<DMatrix<f64>> {
    if phi.mode() != target.mode() {
        return Err(Error::ModeMismatch(format!(
            "coefficients are {:?} but the target is {:?}",
            phi.mode(),
            target.mode()
        )));
    }
    if phi.order() != target.order() {
        return Err(Error::ModeMismatch(format!(
            "coefficient order {} differs from target order {}",
            phi.order(),
            target.order()
        )));
    }
    let s_bar = expected_shift_with(s, p, DiagonalMode::Exact)?;
    Ok(filter_matrix(&s_bar, phi)? - filter_matrix(s.matrix(), target)?)
}

/// `(Σ_l ρ^l ‖diag(φ⁽ˡ⁾)‖₂)²`, the signal-independent factor of the variance
/// bound.
pub fn variance_bound(phi: &CoefficientSet, rho: f64) -> Result<f64> {
    if !(rho >= 0.0) {
        return Err(Error::invalid(format!("rho must be non-negative, got {rho}")));
    }
    let sum: f64 = (0..=phi.order())
        .map(|l| rho.powi(l as i32) * phi.lag_max_abs(l))
        .sum();
    Ok(sum * sum)
}

/// Full bound on the node-averaged output variance for an input with squared
/// norm `x_norm_sq` on `n` nodes.
pub fn variance_bound_for_signal(phi: &CoefficientSet, rho: f64, x_norm_sq: f64, n: usize) -> Result<f64> {
    Ok(x_norm_sq / n as f64 * variance_bound(phi, rho)?)
}

/// Upper bound on `‖S‖₂`: power iteration on `SᵀS`, inflated by
/// [`SPECTRAL_SAFETY`].
pub fn spectral_bound(s: &DMatrix<f64>) -> Result<f64> {
    const CAP: usize = 100_000;
    let n = s.ncols();
    if n == 0 || s.amax() == 0.0 {
        return Ok(0.0);
    }
    // deterministic start with no special alignment to graph eigenvectors
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (0.618_033_988_749_895 * (i + 1) as f64).fract());
    v.normalize_mut();
    let mut estimate = 0.0;
    for _ in 0..CAP {
        let w = s.tr_mul(&(s * &v));
        let rayleigh = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        v = w / norm;
        if (rayleigh - estimate).abs() <= 1e-14 * rayleigh {
            return Ok(SPECTRAL_SAFETY * rayleigh.sqrt());
        }
        estimate = rayleigh;
    }
    Err(Error::Numerical(format!(
        "power iteration for the spectral norm did not converge in {CAP} steps"
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    /// Accelerated projected gradient on the epigraph form.
    #[default]
    Epigraph,
    /// Plain subgradient steps `c/√k` on the nonsmooth objective.
    Subgradient,
}

/// The bias-variance design problem.
#[derive(Debug, Clone)]
pub struct TradeoffProblem {
    pub target: CoefficientSet,
    pub shift: ShiftOperator,
    pub connection: ConnectionMatrix,
    pub mode: FilterMode,
    pub mu: f64,
    /// Spectral-norm bound; `None` uses [`spectral_bound`] of the shift.
    pub rho: Option<f64>,
    pub diagonal: DiagonalMode,
    pub solver: Solver,
    pub max_iterations: usize,
    /// Relative objective decrease over 1000 steps below which the iterative
    /// solvers stop.
    pub tolerance: f64,
}

impl TradeoffProblem {
    pub fn new(
        target: CoefficientSet,
        shift: ShiftOperator,
        connection: ConnectionMatrix,
        mode: FilterMode,
        mu: f64,
    ) -> Self {
        TradeoffProblem {
            target,
            shift,
            connection,
            mode,
            mu,
            rho: None,
            diagonal: DiagonalMode::Exact,
            solver: Solver::Epigraph,
            max_iterations: 50_000,
            tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptResult {
    pub coefficients: CoefficientSet,
    pub bias_fro_sq: f64,
    pub variance_bound: f64,
    pub objective: f64,
    pub rho: f64,
    pub iterations: usize,
    /// False when the iteration cap was hit before the stopping rule fired;
    /// the best iterate is still returned.
    pub converged: bool,
}

/// Everything the solvers need, in a per-lag rescaled basis.
struct Prepared {
    n: usize,
    lags: usize,
    mu: f64,
    /// `ρ^l`
    weights: Vec<f64>,
    /// `S̄^l`, `l = 0..=L`
    powers: Vec<DMatrix<f64>>,
    target_matrix: DMatrix<f64>,
}

impl Prepared {
    fn new(problem: &TradeoffProblem, rho: f64) -> Result<Self> {
        let n = problem.shift.n();
        problem.target.check_nodes(n)?;
        let s_bar = expected_shift_with(&problem.shift, &problem.connection, problem.diagonal)?;
        let lags = problem.target.order() + 1;
        let mut powers = Vec::with_capacity(lags);
        powers.push(DMatrix::identity(n, n));
        for l in 1..lags {
            let next = &s_bar * &powers[l - 1];
            powers.push(next);
        }
        Ok(Prepared {
            n,
            lags,
            mu: problem.mu,
            weights: (0..lags).map(|l| rho.powi(l as i32)).collect(),
            powers,
            target_matrix: filter_matrix(problem.shift.matrix(), &problem.target)?,
        })
    }

    /// Design matrix of node `i`: column `l` is row `i` of `S̄^l`.
    fn row_design(&self, i: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.lags, |j, l| self.powers[l][(i, j)])
    }

    fn filter_for(&self, phi: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = -self.target_matrix.clone();
        for (l, power) in self.powers.iter().enumerate() {
            for i in 0..self.n {
                let c = phi[(l, i.min(phi.ncols() - 1))];
                if c != 0.0 {
                    for j in 0..self.n {
                        out[(i, j)] += c * power[(i, j)];
                    }
                }
            }
        }
        out
    }

    fn bias_fro_sq(&self, phi: &DMatrix<f64>) -> f64 {
        self.filter_for(phi).norm_squared()
    }

    fn variance(&self, phi: &DMatrix<f64>) -> f64 {
        let sum: f64 = (0..self.lags)
            .map(|l| self.weights[l] * phi.row(l).iter().fold(0.0f64, |m, v| m.max(v.abs())))
            .sum();
        sum * sum
    }
}

/// Least squares with per-column normalization and a relative singular-value
/// cutoff; returns the minimum-norm solution on rank-deficient designs.
fn least_squares(design: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let cols = design.ncols();
    let scales: Vec<f64> = (0..cols)
        .map(|c| {
            let norm = design.column(c).norm();
            if norm > 0.0 {
                1.0 / norm
            } else {
                0.0
            }
        })
        .collect();
    let mut scaled = design.clone();
    for (c, &s) in scales.iter().enumerate() {
        scaled.column_mut(c).scale_mut(s);
    }
    let svd = scaled.svd(true, true);
    let sigma_max = svd.singular_values.max();
    let cutoff = sigma_max * 1e-12 * cols.max(design.nrows()) as f64;
    let solution = svd
        .solve(rhs, cutoff.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Numerical(format!("least squares failed: {e}")))?;
    Ok(DVector::from_fn(cols, |c, _| solution[c] * scales[c]))
}

fn solve_unregularized(prep: &Prepared, mode: FilterMode) -> Result<DMatrix<f64>> {
    match mode {
        FilterMode::NodeVariant => {
            let mut phi = DMatrix::zeros(prep.lags, prep.n);
            for i in 0..prep.n {
                let design = prep.row_design(i);
                let rhs = prep.target_matrix.row(i).transpose();
                phi.set_column(i, &least_squares(&design, &rhs)?);
            }
            Ok(phi)
        }
        FilterMode::NodeInvariant => {
            let n2 = prep.n * prep.n;
            let design = DMatrix::from_fn(n2, prep.lags, |k, l| prep.powers[l].as_slice()[k]);
            let rhs = DVector::from_column_slice(prep.target_matrix.as_slice());
            let sol = least_squares(&design, &rhs)?;
            Ok(DMatrix::from_column_slice(prep.lags, 1, sol.as_slice()))
        }
    }
}

/// Projection of `(v, t)` onto `{‖v‖∞ ≤ t}`.
fn project_linf_epigraph(v: &mut [f64], t: &mut f64) {
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if max <= *t {
        return;
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    // find k with mags[k-1] > s_k >= mags[k], s_k = (t + Σ_{<k} mags) / (1 + k)
    let mut s = 0.0;
    let mut prefix = 0.0;
    for k in 1..=mags.len() {
        prefix += mags[k - 1];
        let candidate = (*t + prefix) / (1.0 + k as f64);
        let next = mags.get(k).copied().unwrap_or(0.0);
        if candidate >= next {
            s = candidate;
            break;
        }
    }
    let s = s.max(0.0);
    for x in v.iter_mut() {
        *x = x.clamp(-s, s);
    }
    *t = s;
}

/// Quadratic row models in a per-lag rescaled basis `φ⁽ˡ⁾ = d_l ψ⁽ˡ⁾`.
struct RowModels {
    gram: Vec<DMatrix<f64>>,
    linear: Vec<DVector<f64>>,
    constant: Vec<f64>,
    scale: Vec<f64>,
    weights: Vec<f64>,
    mu: f64,
    lipschitz: f64,
}

impl RowModels {
    fn new(prep: &Prepared) -> Self {
        let lags = prep.lags;
        let mut gram = Vec::with_capacity(prep.n);
        let mut linear = Vec::with_capacity(prep.n);
        let mut constant = Vec::with_capacity(prep.n);
        let mut diag_mean = vec![0.0; lags];
        let designs: Vec<DMatrix<f64>> = (0..prep.n).map(|i| prep.row_design(i)).collect();
        for (i, m) in designs.iter().enumerate() {
            let g = m.tr_mul(m);
            for l in 0..lags {
                diag_mean[l] += g[(l, l)] / prep.n as f64;
            }
            let h = prep.target_matrix.row(i).transpose();
            linear.push(m.tr_mul(&h));
            constant.push(h.norm_squared());
            gram.push(g);
        }
        let scale: Vec<f64> = diag_mean
            .iter()
            .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 1.0 })
            .collect();
        let d = DMatrix::from_diagonal(&DVector::from_row_slice(&scale));
        for (g, c) in gram.iter_mut().zip(linear.iter_mut()) {
            *g = &d * &*g * &d;
            c.component_mul_assign(&DVector::from_row_slice(&scale));
        }
        let weights: Vec<f64> = (0..lags).map(|l| prep.weights[l] * scale[l]).collect();
        let max_eig = gram
            .iter()
            .map(|g| SymmetricEigen::new(g.clone()).eigenvalues.max())
            .fold(0.0f64, f64::max);
        let weight_norm_sq: f64 = weights.iter().map(|w| w * w).sum();
        let lipschitz = (2.0 * max_eig).max(2.0 * prep.mu * weight_norm_sq).max(1e-300);
        RowModels {
            gram,
            linear,
            constant,
            scale,
            weights,
            mu: prep.mu,
            lipschitz,
        }
    }

    fn to_scaled(&self, phi: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(phi.nrows(), phi.ncols(), |l, i| phi[(l, i)] / self.scale[l])
    }

    fn to_unscaled(&self, psi: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(psi.nrows(), psi.ncols(), |l, i| psi[(l, i)] * self.scale[l])
    }

    fn bias(&self, psi: &DMatrix<f64>) -> f64 {
        (0..psi.ncols())
            .map(|i| {
                let x = psi.column(i);
                (x.dot(&(&self.gram[i] * x)) - 2.0 * self.linear[i].dot(&x) + self.constant[i]).max(0.0)
            })
            .sum()
    }

    fn bias_gradient(&self, psi: &DMatrix<f64>) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(psi.nrows(), psi.ncols());
        for i in 0..psi.ncols() {
            let col = (&self.gram[i] * psi.column(i) - &self.linear[i]) * 2.0;
            g.set_column(i, &col);
        }
        g
    }

    fn weighted_sum(&self, t: &[f64]) -> f64 {
        t.iter().zip(&self.weights).map(|(t, w)| t * w).sum()
    }

    fn max_abs(psi: &DMatrix<f64>, l: usize) -> f64 {
        psi.row(l).iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Nonsmooth objective in the scaled basis.
    fn objective(&self, psi: &DMatrix<f64>) -> f64 {
        let t: Vec<f64> = (0..psi.nrows()).map(|l| Self::max_abs(psi, l)).collect();
        let s = self.weighted_sum(&t);
        self.bias(psi) + self.mu * s * s
    }
}

struct IterateOutcome {
    psi: DMatrix<f64>,
    iterations: usize,
    converged: bool,
}

/// Tracks the relative decrease of the best objective over a sliding window.
struct Stall {
    window: usize,
    tolerance: f64,
    history: Vec<f64>,
}

impl Stall {
    fn new(tolerance: f64) -> Self {
        Stall {
            window: 1000,
            tolerance,
            history: Vec::new(),
        }
    }

    fn push(&mut self, best: f64) -> bool {
        self.history.push(best);
        let k = self.history.len();
        if k <= self.window {
            return false;
        }
        let old = self.history[k - 1 - self.window];
        (old - best) <= self.tolerance * old.abs().max(f64::MIN_POSITIVE)
    }
}

fn run_epigraph(models: &RowModels, start: &DMatrix<f64>, max_iter: usize, tol: f64) -> IterateOutcome {
    let lags = start.nrows();
    let step = 1.0 / models.lipschitz;
    let start_t: Vec<f64> = (0..lags).map(|l| RowModels::max_abs(start, l)).collect();

    let mut x = start.clone();
    let mut xt = start_t.clone();
    let mut y = x.clone();
    let mut yt = xt.clone();
    let mut momentum = 1.0f64;
    let smooth = |psi: &DMatrix<f64>, t: &[f64]| {
        let s = models.weighted_sum(t);
        models.bias(psi) + models.mu * s * s
    };
    let mut current = smooth(&x, &xt);
    let mut best = x.clone();
    let mut best_value = models.objective(&x);
    let mut stall = Stall::new(tol);

    for k in 0..max_iter {
        let grad = models.bias_gradient(&y);
        let s = models.weighted_sum(&yt);
        let mut next = &y - grad * step;
        let mut next_t: Vec<f64> = yt
            .iter()
            .zip(&models.weights)
            .map(|(t, w)| t - step * 2.0 * models.mu * s * w)
            .collect();
        for l in 0..lags {
            let mut row: Vec<f64> = next.row(l).iter().copied().collect();
            project_linf_epigraph(&mut row, &mut next_t[l]);
            for (i, v) in row.into_iter().enumerate() {
                next[(l, i)] = v;
            }
        }
        let value = smooth(&next, &next_t);
        if value > current {
            // function-value restart
            momentum = 1.0;
            y = x.clone();
            yt = xt.clone();
            if stall.push(best_value) {
                return IterateOutcome {
                    psi: best,
                    iterations: k + 1,
                    converged: true,
                };
            }
            continue;
        }
        let next_momentum = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;
        let beta = (momentum - 1.0) / next_momentum;
        y = &next + (&next - &x) * beta;
        yt = next_t
            .iter()
            .zip(&xt)
            .map(|(a, b)| a + beta * (a - b))
            .collect();
        x = next;
        xt = next_t;
        momentum = next_momentum;
        current = value;

        let exact = models.objective(&x);
        if exact < best_value {
            best_value = exact;
            best = x.clone();
        }
        if stall.push(best_value) {
            return IterateOutcome {
                psi: best,
                iterations: k + 1,
                converged: true,
            };
        }
    }
    IterateOutcome {
        psi: best,
        iterations: max_iter,
        converged: false,
    }
}

/// Subgradient steps `c/√k`. Once the best value stalls, the method restarts
/// from the best point with `c` divided by [`SUBGRADIENT_SHRINK`]; all stages
/// share the iteration budget.
fn run_subgradient(models: &RowModels, start: &DMatrix<f64>, max_iter: usize, tol: f64) -> IterateOutcome {
    let lags = start.nrows();
    let mut c = 1.0 / models.lipschitz;
    let mut best = start.clone();
    let mut best_value = models.objective(&best);
    let mut used = 0;

    for _ in 0..SUBGRADIENT_STAGES {
        let mut x = best.clone();
        let mut stall = Stall::new(tol);
        let mut stalled = false;
        let mut k = 0;
        while used < max_iter {
            let mut g = models.bias_gradient(&x);
            let t: Vec<f64> = (0..lags).map(|l| RowModels::max_abs(&x, l)).collect();
            let s = models.weighted_sum(&t);
            for l in 0..lags {
                // lowest index among the maximizers
                let mut arg = 0;
                for i in 1..x.ncols() {
                    if x[(l, i)].abs() > x[(l, arg)].abs() {
                        arg = i;
                    }
                }
                let v = x[(l, arg)];
                if v != 0.0 {
                    g[(l, arg)] += 2.0 * models.mu * s * models.weights[l] * v.signum();
                }
            }
            k += 1;
            used += 1;
            x -= g * (c / (k as f64).sqrt());
            let value = models.objective(&x);
            if value < best_value {
                best_value = value;
                best = x.clone();
            }
            if stall.push(best_value) {
                stalled = true;
                break;
            }
        }
        if !stalled {
            return IterateOutcome {
                psi: best,
                iterations: used,
                converged: false,
            };
        }
        c /= SUBGRADIENT_SHRINK;
    }
    IterateOutcome {
        psi: best,
        iterations: used,
        converged: true,
    }
}

/// Solves the bias-variance design problem.
///
/// `μ = 0` is solved exactly by least squares (per row for node-variant
/// filters). `μ > 0` requires node-variant filters and runs the configured
/// iterative solver from the better of the least-squares solution and the
/// per-node probability rescaling of the target; the result never scores
/// worse than either starting point.
pub fn optimize_coefficients(problem: &TradeoffProblem) -> Result<OptResult> {
    if !(problem.mu >= 0.0 && problem.mu.is_finite()) {
        return Err(Error::invalid(format!("mu must be finite and non-negative, got {}", problem.mu)));
    }
    if problem.mu > 0.0 && problem.mode == FilterMode::NodeInvariant {
        return Err(Error::invalid(
            "the variance-regularized problem is defined for node-variant filters",
        ));
    }
    let rho = match problem.rho {
        Some(r) if r >= 0.0 => r,
        Some(r) => return Err(Error::invalid(format!("rho must be non-negative, got {r}"))),
        None => spectral_bound(problem.shift.matrix())?,
    };
    let prep = Prepared::new(problem, rho)?;
    let ls = solve_unregularized(&prep, problem.mode)?;

    let finish = |phi: DMatrix<f64>, iterations: usize, converged: bool| -> Result<OptResult> {
        let bias_fro_sq = prep.bias_fro_sq(&phi);
        let variance_bound = prep.variance(&phi);
        let objective = bias_fro_sq + problem.mu * variance_bound;
        if !objective.is_finite() {
            return Err(Error::Numerical("objective is not finite".into()));
        }
        let coefficients = match problem.mode {
            FilterMode::NodeInvariant => CoefficientSet::invariant(phi.column(0).iter().copied().collect())?,
            FilterMode::NodeVariant => CoefficientSet::variant(phi)?,
        };
        Ok(OptResult {
            coefficients,
            bias_fro_sq,
            variance_bound,
            objective,
            rho,
            iterations,
            converged,
        })
    };

    if problem.mu == 0.0 {
        return finish(ls, 0, true);
    }

    let objective_of = |phi: &DMatrix<f64>| prep.bias_fro_sq(phi) + problem.mu * prep.variance(phi);
    let mut starts = vec![ls];
    if let Some(scaled) = row_scaled_start(problem, &prep)? {
        starts.push(scaled);
    }
    let (start, start_value) = starts
        .into_iter()
        .map(|phi| {
            let v = objective_of(&phi);
            (phi, v)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("at least one start");

    let models = RowModels::new(&prep);
    let scaled_start = models.to_scaled(&start);
    let outcome = match problem.solver {
        Solver::Epigraph => run_epigraph(&models, &scaled_start, problem.max_iterations, problem.tolerance),
        Solver::Subgradient => run_subgradient(&models, &scaled_start, problem.max_iterations, problem.tolerance),
    };
    let candidate = models.to_unscaled(&outcome.psi);
    if objective_of(&candidate) <= start_value {
        finish(candidate, outcome.iterations, outcome.converged)
    } else {
        finish(start, outcome.iterations, outcome.converged)
    }
}

/// Target taps rescaled by each node's link probability, when every row has
/// a positive probability.
fn row_scaled_start(problem: &TradeoffProblem, prep: &Prepared) -> Result<Option<DMatrix<f64>>> {
    let q: Vec<f64> = (0..prep.n)
        .map(|i| problem.connection.row_min_nonzero(i).unwrap_or(1.0))
        .collect();
    let target = problem.target.to_node_variant(prep.n)?;
    let scaled = scale_rows(&target, &q)?;
    Ok(Some(scaled.values().clone()))
}

/// Objective value of arbitrary coefficients for a problem (for diagnostics
/// and tests).
pub fn objective_value(problem: &TradeoffProblem, phi: &CoefficientSet) -> Result<f64> {
    let rho = match problem.rho {
        Some(r) => r,
        None => spectral_bound(problem.shift.matrix())?,
    };
    let prep = Prepared::new(problem, rho)?;
    let values = match phi.mode() {
        FilterMode::NodeVariant => {
            phi.check_nodes(prep.n)?;
            phi.values().clone()
        }
        FilterMode::NodeInvariant => phi.values().clone(),
    };
    Ok(prep.bias_fro_sq(&values) + problem.mu * prep.variance(&values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_shift, generate_topology, ShiftKind};
    use crate::rng;
    use rand::Rng;

    fn random_variant(lags: usize, n: usize, seed: u64) -> CoefficientSet {
        let mut r = rng::stream(seed);
        CoefficientSet::variant(DMatrix::from_fn(lags, n, |_, _| r.random::<f64>() * 2.0 - 1.0)).unwrap()
    }

    #[test]
    fn scaling_rules() {
        let h = CoefficientSet::invariant(vec![1.0, 0.5]).unwrap();
        assert_eq!(unbiased_scaling(&h, 1.0).unwrap(), h);
        assert_eq!(unbiased_scaling(&h, 0.5).unwrap().values().as_slice(), &[1.0, 1.0]);
        assert!(unbiased_scaling(&h, 0.0).is_err());
        assert!(unbiased_scaling(&h, 1.5).is_err());
    }

    #[test]
    fn scaled_coefficients_are_unbiased() {
        let topo = generate_topology(6, 10.0, 6.0, 1).unwrap();
        let s = build_shift(&topo, ShiftKind::Adjacency).unwrap();
        let p = ConnectionMatrix::uniform(&s, 0.8).unwrap();
        let h = random_variant(4, 6, 2);
        let phi = unbiased_scaling(&h, 0.8).unwrap();
        assert!(bias_matrix(&phi, &h, &s, &p).unwrap().amax() < 1e-12);
    }

    #[test]
    fn bias_trivial_cases() {
        let topo = generate_topology(8, 10.0, 5.0, 3).unwrap();
        let s = build_shift(&topo, ShiftKind::DirectedLaplacian).unwrap();
        let h = random_variant(3, 8, 4);
        let ones = ConnectionMatrix::ones(&s);
        assert!(bias_matrix(&h, &h, &s, &ones).unwrap().amax() < 1e-12);

        let phi0 = random_variant(1, 8, 5);
        let h0 = random_variant(1, 8, 6);
        let p = ConnectionMatrix::random(&s, &mut rng::stream(7));
        let b = bias_matrix(&phi0, &h0, &s, &p).unwrap();
        let diag = phi0.values().row(0) - h0.values().row(0);
        assert!((b - DMatrix::from_diagonal(&diag.transpose())).amax() < 1e-15);

        let inv = CoefficientSet::invariant(vec![1.0; 3]).unwrap();
        assert!(matches!(bias_matrix(&inv, &h, &s, &p), Err(Error::ModeMismatch(_))));
    }

    #[test]
    fn bias_matches_term_by_term_dense_evaluation() {
        let topo = generate_topology(8, 10.0, 5.0, 9).unwrap();
        let s = build_shift(&topo, ShiftKind::Adjacency).unwrap();
        let p = ConnectionMatrix::random(&s, &mut rng::stream(1));
        let phi = random_variant(4, 8, 2);
        let h = random_variant(4, 8, 3);
        let b = bias_matrix(&phi, &h, &s, &p).unwrap();

        let s_bar = p.entries().component_mul(s.matrix());
        let mut oracle = DMatrix::zeros(8, 8);
        for l in 0..4u32 {
            let dphi = DMatrix::from_diagonal(&phi.values().row(l as usize).transpose());
            let dh = DMatrix::from_diagonal(&h.values().row(l as usize).transpose());
            oracle += dphi * s_bar.pow(l) - dh * s.matrix().pow(l);
        }
        assert!((b - &oracle).amax() <= 1e-12 * (1.0 + oracle.amax()));
    }

    #[test]
    fn variance_bound_values() {
        let zero = CoefficientSet::variant(DMatrix::zeros(3, 4)).unwrap();
        assert_eq!(variance_bound(&zero, 0.7).unwrap(), 0.0);
        let single = CoefficientSet::variant(DMatrix::from_row_slice(1, 2, &[3.0, -1.0])).unwrap();
        assert_eq!(variance_bound(&single, 2.0).unwrap(), 9.0);
        let two = CoefficientSet::invariant(vec![1.0, -2.0]).unwrap();
        assert_close!(variance_bound(&two, 0.5).unwrap(), 4.0, 1e-15);
        assert_close!(variance_bound_for_signal(&two, 0.5, 3.0, 6).unwrap(), 2.0, 1e-15);
        assert!(variance_bound(&two, -1.0).is_err());
    }

    #[test]
    fn spectral_bound_cases() {
        let half = DMatrix::<f64>::identity(3, 3) * 0.5;
        let rho = spectral_bound(&half).unwrap();
        assert!((0.5..=0.505).contains(&rho));

        let cycle = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let rho = spectral_bound(&cycle).unwrap();
        assert!((1.0..=1.01).contains(&rho), "{rho}");
        assert_eq!(spectral_bound(&DMatrix::zeros(3, 3)).unwrap(), 0.0);

        for seed in 0..10 {
            let topo = generate_topology(25, 10.0, 4.0, seed).unwrap();
            let Ok(s) = build_shift(&topo, ShiftKind::NormalizedShifted) else { continue };
            let rho = spectral_bound(s.matrix()).unwrap();
            let exact = s.matrix().clone().svd(false, false).singular_values.max();
            assert!(rho >= exact && rho <= 0.5 * SPECTRAL_SAFETY + 1e-12, "{rho} vs {exact}");
        }
    }

    #[test]
    fn epigraph_projection() {
        let mut v = vec![3.0, -1.0, 0.5];
        let mut t = 1.0;
        project_linf_epigraph(&mut v, &mut t);
        // s = (1 + 3) / 2 = 2 > 1 ≥ ... ; check optimality: cost gradient in s zero
        assert_close!(t, 2.0, 1e-15);
        assert_eq!(v, vec![2.0, -1.0, 0.5]);

        let mut v = vec![0.2, -0.1];
        let mut t = 0.5;
        project_linf_epigraph(&mut v, &mut t);
        assert_eq!((v, t), (vec![0.2, -0.1], 0.5));

        let mut v = vec![1.0, 1.0];
        let mut t = -10.0;
        project_linf_epigraph(&mut v, &mut t);
        assert_eq!((v, t), (vec![0.0, 0.0], 0.0));
    }

    #[test]
    fn projection_is_nearest_point() {
        let mut r = rng::stream(3);
        for _ in 0..200 {
            let v0: Vec<f64> = (0..5).map(|_| r.random::<f64>() * 4.0 - 2.0).collect();
            let t0 = r.random::<f64>() * 3.0 - 1.0;
            let (mut v, mut t) = (v0.clone(), t0);
            project_linf_epigraph(&mut v, &mut t);
            assert!(v.iter().all(|x| x.abs() <= t + 1e-12));
            let dist = |w: &[f64], s: f64| w.iter().zip(&v0).map(|(a, b)| (a - b).powi(2)).sum::<f64>() + (s - t0).powi(2);
            let d = dist(&v, t);
            // no feasible point on a fine scan of s does better
            for k in 0..=400 {
                let s = k as f64 * 0.01;
                let w: Vec<f64> = v0.iter().map(|x| x.clamp(-s, s)).collect();
                assert!(d <= dist(&w, s) + 1e-12);
            }
        }
    }

    #[test]
    fn perfect_links_return_target() {
        let topo = generate_topology(10, 10.0, 5.0, 4).unwrap();
        let s = build_shift(&topo, ShiftKind::NormalizedShifted).unwrap();
        let target = CoefficientSet::arma1_truncation(4, -0.45, 1.0).unwrap();
        let ones = ConnectionMatrix::ones(&s);
        let problem = TradeoffProblem::new(target.clone(), s.clone(), ones.clone(), FilterMode::NodeVariant, 0.0);
        let res = optimize_coefficients(&problem).unwrap();
        assert!(res.bias_fro_sq < 1e-20);
        let expected = target.to_node_variant(10).unwrap();
        assert!((res.coefficients.values() - expected.values()).amax() < 1e-9);

        let mut with_mu = TradeoffProblem::new(target.clone(), s, ones, FilterMode::NodeVariant, 0.01);
        with_mu.rho = Some(0.5);
        let res = optimize_coefficients(&with_mu).unwrap();
        let target_score = 0.01 * variance_bound(&target, 0.5).unwrap();
        assert!(res.objective <= target_score + 1e-12);
    }

    #[test]
    fn invariant_mode_rejects_regularization() {
        let topo = generate_topology(5, 10.0, 6.0, 4).unwrap();
        let s = build_shift(&topo, ShiftKind::Adjacency).unwrap();
        let q = ConnectionMatrix::uniform(&s, 0.5).unwrap();
        let target = CoefficientSet::invariant(vec![1.0, 0.5]).unwrap();
        let problem = TradeoffProblem::new(target, s, q, FilterMode::NodeInvariant, 0.1);
        assert!(optimize_coefficients(&problem).is_err());
    }

    #[test]
    fn regularized_solution_beats_starts_and_is_consistent() {
        let topo = generate_topology(15, 10.0, 4.0, 6).unwrap();
        let s = build_shift(&topo, ShiftKind::Adjacency).unwrap();
        let p = ConnectionMatrix::random(&s, &mut rng::stream(8));
        let target = CoefficientSet::invariant(vec![1.0, 0.4, 0.1]).unwrap();
        for solver in [Solver::Epigraph, Solver::Subgradient] {
            let mut problem = TradeoffProblem::new(target.clone(), s.clone(), p.clone(), FilterMode::NodeVariant, 0.05);
            problem.solver = solver;
            problem.max_iterations = 5_000;
            let res = optimize_coefficients(&problem).unwrap();
            assert!((res.objective - (res.bias_fro_sq + 0.05 * res.variance_bound)).abs() <= 1e-10 * res.objective.max(1.0));
            let mut ls_problem = problem.clone();
            ls_problem.mu = 0.0;
            let ls = optimize_coefficients(&ls_problem).unwrap();
            assert!(res.objective <= objective_value(&problem, &ls.coefficients).unwrap() + 1e-12);
            let q: Vec<f64> = (0..15).map(|i| p.row_min_nonzero(i).unwrap_or(1.0)).collect();
            let scaled = scale_rows(&target.to_node_variant(15).unwrap(), &q).unwrap();
            assert!(res.objective <= objective_value(&problem, &scaled).unwrap() + 1e-12);
        }
    }
}
