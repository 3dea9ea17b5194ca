//! Vertex-domain graph filters.
//!
//! Every filter here is evaluated with repeated shifts `z ← S z`; no explicit
//! matrix powers and no spectral decomposition are involved, which mirrors
//! what the nodes actually compute by exchanging values with neighbors.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SparseShift;

/// Anything that can shift a graph signal by one hop.
pub trait ShiftApply {
    fn n(&self) -> usize;
    fn apply(&self, x: &DVector<f64>) -> DVector<f64>;
}

impl ShiftApply for DMatrix<f64> {
    fn n(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self * x
    }
}

impl ShiftApply for SparseShift {
    fn n(&self) -> usize {
        SparseShift::n(self)
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        SparseShift::apply(self, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    NodeInvariant,
    NodeVariant,
}

/// Filter taps indexed by lag. Row `l` of `values` holds the lag-`l`
/// coefficient: a single column for node-invariant filters, one column per
/// node otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    mode: FilterMode,
    values: DMatrix<f64>,
}

impl CoefficientSet {
    pub fn invariant(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("a filter needs at least the lag-0 coefficient"));
        }
        let values = DMatrix::from_column_slice(values.len(), 1, &values);
        Self::checked(FilterMode::NodeInvariant, values)
    }

    /// `values` is `(L+1) × N`.
    pub fn variant(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::invalid("node-variant coefficients need at least one lag and one node"));
        }
        Self::checked(FilterMode::NodeVariant, values)
    }

    fn checked(mode: FilterMode, values: DMatrix<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("filter coefficients must be finite"));
        }
        Ok(CoefficientSet { mode, values })
    }

    /// Taps of the `order`-step ARMA(1) recursion started at `y0 = x`:
    /// `[φ, φψ, …, φψ^(L−1), ψ^L]`.
    pub fn arma1_truncation(order: usize, psi: f64, phi: f64) -> Result<Self> {
        let mut taps: Vec<f64> = (0..order).map(|l| phi * psi.powi(l as i32)).collect();
        taps.push(psi.powi(order as i32));
        Self::invariant(taps)
    }

    pub fn mode(&self) -> FilterMode {
        self.mode
    }

    pub fn is_node_variant(&self) -> bool {
        self.mode == FilterMode::NodeVariant
    }

    /// Filter order `L`.
    pub fn order(&self) -> usize {
        self.values.nrows() - 1
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Node count for node-variant sets.
    pub fn n_nodes(&self) -> Option<usize> {
        self.is_node_variant().then(|| self.values.ncols())
    }

    /// Lag-`l` coefficient used at node `i`.
    pub fn coeff(&self, l: usize, i: usize) -> f64 {
        match self.mode {
            FilterMode::NodeInvariant => self.values[(l, 0)],
            FilterMode::NodeVariant => self.values[(l, i)],
        }
    }

    /// Largest magnitude among the lag-`l` coefficients, `‖diag(φ⁽ˡ⁾)‖₂`.
    pub fn lag_max_abs(&self, l: usize) -> f64 {
        self.values.row(l).iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Same filter written with one column per node.
    pub fn to_node_variant(&self, n: usize) -> Result<Self> {
        match self.mode {
            FilterMode::NodeVariant => {
                self.check_nodes(n)?;
                Ok(self.clone())
            }
            FilterMode::NodeInvariant => {
                let values = DMatrix::from_fn(self.values.nrows(), n, |l, _| self.values[(l, 0)]);
                Ok(CoefficientSet {
                    mode: FilterMode::NodeVariant,
                    values,
                })
            }
        }
    }

    pub(crate) fn check_nodes(&self, n: usize) -> Result<()> {
        match self.n_nodes() {
            Some(m) if m != n => Err(Error::DimensionMismatch {
                expected: n,
                actual: m,
            }),
            _ => Ok(()),
        }
    }

    /// `y += diag(c_l) z`.
    fn accumulate(&self, l: usize, z: &DVector<f64>, y: &mut DVector<f64>) {
        match self.mode {
            FilterMode::NodeInvariant => y.axpy(self.values[(l, 0)], z, 1.0),
            FilterMode::NodeVariant => {
                for (i, (yi, zi)) in y.iter_mut().zip(z.iter()).enumerate() {
                    *yi += self.values[(l, i)] * zi;
                }
            }
        }
    }

    /// CSV with header `lag,node_id,value`; `node_id` is −1 for invariant sets.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lag,node_id,value\n");
        for l in 0..self.values.nrows() {
            match self.mode {
                FilterMode::NodeInvariant => {
                    let _ = writeln!(out, "{l},-1,{}", self.values[(l, 0)]);
                }
                FilterMode::NodeVariant => {
                    for i in 0..self.values.ncols() {
                        let _ = writeln!(out, "{l},{i},{}", self.values[(l, i)]);
                    }
                }
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows: Vec<(usize, i64, f64)> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line == "lag,node_id,value" {
                continue;
            }
            let bad = || Error::Parse {
                line: idx + 1,
                message: format!("expected `lag,node_id,value`, got `{line}`"),
            };
            let mut fields = line.split(',').map(str::trim);
            let lag = fields.next().and_then(|f| f.parse().ok()).ok_or_else(bad)?;
            let node = fields.next().and_then(|f| f.parse().ok()).ok_or_else(bad)?;
            let value = fields.next().and_then(|f| f.parse().ok()).ok_or_else(bad)?;
            if fields.next().is_some() {
                return Err(bad());
            }
            rows.push((lag, node, value));
        }
        if rows.is_empty() {
            return Err(Error::Parse {
                line: 0,
                message: "no coefficients".into(),
            });
        }
        let lags = rows.iter().map(|r| r.0).max().unwrap_or(0) + 1;
        let invariant = rows.iter().all(|r| r.1 == -1);
        let cols = if invariant {
            1
        } else {
            rows.iter().map(|r| r.1).max().unwrap_or(0) as usize + 1
        };
        let mut seen = DMatrix::from_element(lags, cols, false);
        let mut values = DMatrix::zeros(lags, cols);
        for (lag, node, value) in rows {
            let col = match (invariant, usize::try_from(node)) {
                (true, _) => 0,
                (false, Ok(c)) => c,
                (false, Err(_)) => {
                    return Err(Error::Parse {
                        line: 0,
                        message: "mixed invariant and node-variant rows".into(),
                    })
                }
            };
            if seen[(lag, col)] {
                return Err(Error::Parse {
                    line: 0,
                    message: format!("duplicate coefficient for lag {lag}, node {node}"),
                });
            }
            seen[(lag, col)] = true;
            values[(lag, col)] = value;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Parse {
                line: 0,
                message: "coefficient table has gaps".into(),
            });
        }
        if invariant {
            Self::invariant(values.column(0).iter().copied().collect())
        } else {
            Self::variant(values)
        }
    }
}

/// A real value per node.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSignal {
    values: DVector<f64>,
}

impl GraphSignal {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("graph signal entries must be finite"));
        }
        Ok(GraphSignal { values })
    }

    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        Self::new(DVector::from_vec(values))
    }

    pub fn zeros(n: usize) -> Self {
        GraphSignal {
            values: DVector::zeros(n),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.values
    }

    pub fn norm_squared(&self) -> f64 {
        self.values.norm_squared()
    }

    /// CSV `node_id,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("node_id,value\n");
        for (i, v) in self.values.iter().enumerate() {
            let _ = writeln!(out, "{i},{v}");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line == "node_id,value" {
                continue;
            }
            let parsed = line
                .split_once(',')
                .and_then(|(i, v)| Some((i.trim().parse::<usize>().ok()?, v.trim().parse::<f64>().ok()?)));
            let (id, value) = parsed.ok_or_else(|| Error::Parse {
                line: idx + 1,
                message: format!("expected `node_id,value`, got `{line}`"),
            })?;
            if id != rows.len() {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("expected node {}, got {id}", rows.len()),
                });
            }
            rows.push(value);
        }
        Self::from_vec(rows)
    }
}

impl From<GraphSignal> for DVector<f64> {
    fn from(s: GraphSignal) -> Self {
        s.values
    }
}

fn check_dims<S: ShiftApply + ?Sized>(s: &S, c: &CoefficientSet, n: usize) -> Result<()> {
    if s.n() != n {
        return Err(Error::DimensionMismatch {
            expected: s.n(),
            actual: n,
        });
    }
    c.check_nodes(n)
}

/// `y = Σ_l diag(c_l) S^l x`.
pub fn apply_fir<S: ShiftApply + ?Sized>(s: &S, c: &CoefficientSet, x: &GraphSignal) -> Result<GraphSignal> {
    check_dims(s, c, x.len())?;
    Ok(GraphSignal {
        values: fir(s, c, &x.values),
    })
}

pub(crate) fn fir<S: ShiftApply + ?Sized>(s: &S, c: &CoefficientSet, x: &DVector<f64>) -> DVector<f64> {
    let mut y = DVector::zeros(x.len());
    c.accumulate(0, x, &mut y);
    let mut z = x.clone();
    for l in 1..=c.order() {
        z = s.apply(&z);
        c.accumulate(l, &z, &mut y);
    }
    y
}

/// Expected output over random graphs: the FIR filter on `E[S_t]`.
pub fn expected_output<S: ShiftApply + ?Sized>(
    s_bar: &S,
    c: &CoefficientSet,
    x: &GraphSignal,
) -> Result<GraphSignal> {
    apply_fir(s_bar, c, x)
}

/// `t` steps of `y_k = ψ S y_{k−1} + φ x` from `y0`.
pub fn run_arma1<S: ShiftApply + ?Sized>(
    s: &S,
    psi: f64,
    phi: f64,
    x: &GraphSignal,
    y0: &GraphSignal,
    t: usize,
) -> Result<GraphSignal> {
    for len in [x.len(), y0.len()] {
        if len != s.n() {
            return Err(Error::DimensionMismatch {
                expected: s.n(),
                actual: len,
            });
        }
    }
    let forcing = &x.values * phi;
    let mut y = y0.values.clone();
    for _ in 0..t {
        y = s.apply(&y) * psi + &forcing;
    }
    Ok(GraphSignal { values: y })
}

/// Minimizer of `‖v − x‖² + w vᵀ S v` for symmetric `S`: `(I + wS)⁻¹ x`.
pub fn tikhonov_solve(s: &DMatrix<f64>, w: f64, x: &GraphSignal) -> Result<GraphSignal> {
    let n = s.nrows();
    if s.ncols() != n || x.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: x.len(),
        });
    }
    let system = DMatrix::identity(n, n) + s * w;
    let v = system.lu().solve(&x.values).ok_or(Error::Singular)?;
    if v.iter().any(|e| !e.is_finite()) {
        return Err(Error::Singular);
    }
    Ok(GraphSignal { values: v })
}

/// Time-varying FIR filter. `realizations` holds the last `L` shifts, oldest
/// first, so the lag-`l` term sees `S_t ⋯ S_{t−l+1}`.
///
/// Evaluated the way the nodes run it: at each time step the new shift is
/// applied to every partial product in flight, so each realization is used
/// during exactly one step.
pub fn apply_timevarying<S: ShiftApply>(
    realizations: &[S],
    c: &CoefficientSet,
    x: &GraphSignal,
) -> Result<GraphSignal> {
    if realizations.len() != c.order() {
        return Err(Error::invalid(format!(
            "order-{} filter needs {} realizations, got {}",
            c.order(),
            c.order(),
            realizations.len()
        )));
    }
    let n = x.len();
    for s in realizations {
        if s.n() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: s.n(),
            });
        }
    }
    c.check_nodes(n)?;
    Ok(GraphSignal {
        values: timevarying(realizations, c, &x.values),
    })
}

pub(crate) fn timevarying<S: ShiftApply>(realizations: &[S], c: &CoefficientSet, x: &DVector<f64>) -> DVector<f64> {
    let order = realizations.len();
    let mut partial: Vec<DVector<f64>> = Vec::with_capacity(order + 1);
    partial.push(x.clone());
    for (step, s) in realizations.iter().enumerate() {
        partial.push(s.apply(&partial[step]));
        for l in (1..=step).rev() {
            partial[l] = s.apply(&partial[l - 1]);
        }
    }
    let mut y = DVector::zeros(x.len());
    for (l, z) in partial.iter().enumerate() {
        c.accumulate(l, z, &mut y);
    }
    y
}

/// Dense filtering matrix `Σ_l diag(c_l) S^l`.
pub fn filter_matrix(s: &DMatrix<f64>, c: &CoefficientSet) -> Result<DMatrix<f64>> {
    let n = s.nrows();
    c.check_nodes(n)?;
    let mut out = DMatrix::zeros(n, n);
    let mut power = DMatrix::identity(n, n);
    for l in 0..=c.order() {
        if l > 0 {
            power = s * &power;
        }
        for i in 0..n {
            let ci = c.coeff(l, i);
            if ci != 0.0 {
                let row = power.row(i) * ci;
                let mut target = out.row_mut(i);
                target += row;
            }
        }
    }
    Ok(out)
}
