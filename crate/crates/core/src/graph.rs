//! Topologies, shift operators and random link activation.
//!
//! A [`Topology`] fixes node positions and the reachability graph: a directed
//! link `(i, j)` exists whenever `d(i, j) <= r_broadcast`. Link reliability is
//! carried separately by a [`ConnectionMatrix`]; entry `(i, j)` is the
//! probability that link `(i, j)` is active in a given realization and it
//! multiplies entry `(i, j)` of the shift operator.

use std::collections::VecDeque;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Node positions on a square deployment area plus the induced link set.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    positions: Vec<Point>,
    side_len: f64,
    r_broadcast: f64,
    neighbors: Vec<Vec<usize>>,
}

impl Topology {
    /// Builds a topology from explicit positions. Every position must lie in
    /// `[0, side_len]²`.
    pub fn from_positions(positions: Vec<Point>, side_len: f64, r_broadcast: f64) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::invalid("topology needs at least one node"));
        }
        if !(side_len.is_finite() && side_len > 0.0) {
            return Err(Error::invalid(format!("side_len must be positive, got {side_len}")));
        }
        if !(r_broadcast.is_finite() && r_broadcast > 0.0) {
            return Err(Error::invalid(format!(
                "r_broadcast must be positive, got {r_broadcast}"
            )));
        }
        for (id, p) in positions.iter().enumerate() {
            let inside = |v: f64| v.is_finite() && (0.0..=side_len).contains(&v);
            if !inside(p.x) || !inside(p.y) {
                return Err(Error::invalid(format!(
                    "node {id} at ({}, {}) lies outside [0, {side_len}]^2",
                    p.x, p.y
                )));
            }
        }

        let n = positions.len();
        let mut neighbors = vec![Vec::new(); n];
        for i in 0..n {
            for j in (i + 1)..n {
                if positions[i].distance(&positions[j]) <= r_broadcast {
                    neighbors[i].push(j);
                    neighbors[j].push(i);
                }
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }

        Ok(Topology {
            positions,
            side_len,
            r_broadcast,
            neighbors,
        })
    }

    /// Uniform random deployment drawn from `rng`.
    pub fn generate_with<R: Rng + ?Sized>(
        n: usize,
        side_len: f64,
        r_broadcast: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid(format!("random deployment needs n >= 2, got {n}")));
        }
        if !(side_len.is_finite() && side_len > 0.0) {
            return Err(Error::invalid(format!("side_len must be positive, got {side_len}")));
        }
        let positions = (0..n)
            .map(|_| {
                let x = rng.random::<f64>() * side_len;
                let y = rng.random::<f64>() * side_len;
                Point::new(x, y)
            })
            .collect();
        Topology::from_positions(positions, side_len, r_broadcast)
    }

    pub fn n(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }

    pub fn position(&self, i: usize) -> Point {
        self.positions[i]
    }

    pub fn side_len(&self) -> f64 {
        self.side_len
    }

    pub fn r_broadcast(&self) -> f64 {
        self.r_broadcast
    }

    /// Nodes inside the broadcast region of `i`, ascending.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn max_degree(&self) -> usize {
        self.neighbors.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn average_degree(&self) -> f64 {
        self.edge_count() as f64 / self.n() as f64
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.positions[i].distance(&self.positions[j])
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    /// Directed links in row-major order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, list)| list.iter().map(move |&j| (i, j)))
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }

    pub fn is_connected(&self) -> bool {
        check_connectivity(self)
    }

    /// Serializes as `# side_len=<v> r_broadcast=<v>` followed by `id,x,y`
    /// rows. Floats use the shortest representation that parses back to the
    /// same bits.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# side_len={} r_broadcast={}\n",
            self.side_len, self.r_broadcast
        );
        for (id, p) in self.positions.iter().enumerate() {
            let _ = writeln!(out, "{id},{},{}", p.x, p.y);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut side_len = None;
        let mut r_broadcast = None;
        let mut rows: Vec<(usize, Point)> = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(header) = line.strip_prefix('#') {
                for token in header.split_whitespace() {
                    let Some((key, value)) = token.split_once('=') else {
                        continue;
                    };
                    let value: f64 = value.parse().map_err(|_| Error::Parse {
                        line: line_no,
                        message: format!("bad number for {key}: {value}"),
                    })?;
                    match key {
                        "side_len" => side_len = Some(value),
                        "r_broadcast" => r_broadcast = Some(value),
                        _ => {
                            return Err(Error::Parse {
                                line: line_no,
                                message: format!("unknown header key {key}"),
                            })
                        }
                    }
                }
                continue;
            }
            if line == "id,x,y" {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected `id,x,y`, got `{line}`"),
                });
            }
            let parse_err = |what: &str| Error::Parse {
                line: line_no,
                message: format!("bad {what} in `{line}`"),
            };
            let id: usize = fields[0].parse().map_err(|_| parse_err("id"))?;
            let x: f64 = fields[1].parse().map_err(|_| parse_err("x"))?;
            let y: f64 = fields[2].parse().map_err(|_| parse_err("y"))?;
            rows.push((id, Point::new(x, y)));
        }

        let missing = |key: &str| Error::Parse {
            line: 1,
            message: format!("missing `{key}` in header"),
        };
        let side_len = side_len.ok_or_else(|| missing("side_len"))?;
        let r_broadcast = r_broadcast.ok_or_else(|| missing("r_broadcast"))?;

        rows.sort_by_key(|(id, _)| *id);
        for (expected, (id, _)) in rows.iter().enumerate() {
            if *id != expected {
                return Err(Error::Parse {
                    line: 0,
                    message: format!("node ids must be 0..n without gaps; missing {expected}"),
                });
            }
        }
        let positions = rows.into_iter().map(|(_, p)| p).collect();
        Topology::from_positions(positions, side_len, r_broadcast)
    }
}

/// Uniform random deployment of `n` nodes on a `side_len` square.
pub fn generate_topology(n: usize, side_len: f64, r_broadcast: f64, seed: u64) -> Result<Topology> {
    Topology::generate_with(n, side_len, r_broadcast, &mut rng::stream(seed))
}

/// Lattice deployment, row-major ids, node `(r, c)` at `(c·spacing, r·spacing)`.
pub fn grid_topology(rows: usize, cols: usize, spacing: f64, r_broadcast: f64) -> Result<Topology> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("grid needs at least one row and one column"));
    }
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(Error::invalid(format!("grid spacing must be positive, got {spacing}")));
    }
    let span = (rows.max(cols) - 1) as f64 * spacing;
    let side_len = if span > 0.0 { span } else { spacing };
    let positions = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| Point::new(c as f64 * spacing, r as f64 * spacing)))
        .collect();
    Topology::from_positions(positions, side_len, r_broadcast)
}

/// Breadth-first reachability over the (symmetric) link set.
pub fn check_connectivity(topology: &Topology) -> bool {
    let n = topology.n();
    if n <= 1 {
        return true;
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut reached = 1;
    while let Some(u) = queue.pop_front() {
        for &v in topology.neighbors(u) {
            if !seen[v] {
                seen[v] = true;
                reached += 1;
                queue.push_back(v);
            }
        }
    }
    reached == n
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    /// `A`, ones on links.
    Adjacency,
    /// `L = D − A` with out-degrees on the diagonal.
    DirectedLaplacian,
    /// `λmax⁻¹ L − 0.5 I`, spectrum inside `[−0.5, 0.5]` for symmetric `L`.
    NormalizedShifted,
}

/// A graph shift operator together with the link set it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftOperator {
    kind: ShiftKind,
    matrix: DMatrix<f64>,
    lambda_max: Option<f64>,
    links: Vec<(usize, usize)>,
}

impl ShiftOperator {
    pub fn kind(&self) -> ShiftKind {
        self.kind
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn lambda_max(&self) -> Option<f64> {
        self.lambda_max
    }

    /// Directed links `(i, j)` carrying a randomizable off-diagonal entry.
    pub fn links(&self) -> &[(usize, usize)] {
        &self.links
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_symmetric(&self) -> bool {
        let m = &self.matrix;
        (0..m.nrows()).all(|i| (0..i).all(|j| m[(i, j)] == m[(j, i)]))
    }

    /// Rebuilds the shift from the links flagged in `active` (indexed like
    /// [`links`](Self::links)), using the same construction as `self`.
    /// Laplacian kinds take the realized out-degrees; `λmax` stays frozen.
    pub fn realize(&self, active: &[bool]) -> DMatrix<f64> {
        debug_assert_eq!(active.len(), self.links.len());
        let n = self.n();
        let mut out = DMatrix::zeros(n, n);
        let mut degree = vec![0usize; n];
        for (&(i, j), &on) in self.links.iter().zip(active) {
            if on {
                out[(i, j)] = self.link_value();
                degree[i] += 1;
            }
        }
        for (i, &d) in degree.iter().enumerate() {
            out[(i, i)] = self.diagonal_value(d);
        }
        out
    }

    /// Draws a realization directly in sparse form; consumes exactly one
    /// uniform per link, in link order, like [`sample_realization`].
    pub fn sample_sparse<R: Rng + ?Sized>(
        &self,
        p: &ConnectionMatrix,
        rng: &mut R,
    ) -> SparseShift {
        let n = self.n();
        let mut degree = vec![0usize; n];
        let mut entries = Vec::with_capacity(self.links.len());
        let value = self.link_value();
        for &(i, j) in &self.links {
            if rng.random::<f64>() < p.get(i, j) {
                entries.push((i, j, value));
                degree[i] += 1;
            }
        }
        let diag = degree.iter().map(|&d| self.diagonal_value(d)).collect();
        SparseShift { n, diag, entries }
    }

    /// Off-diagonal value of an active link.
    fn link_value(&self) -> f64 {
        match self.kind {
            ShiftKind::Adjacency => 1.0,
            ShiftKind::DirectedLaplacian => -1.0,
            ShiftKind::NormalizedShifted => -1.0 / self.lambda_max.unwrap_or(1.0),
        }
    }

    /// Diagonal entry of a node with `degree` active outgoing links; matches
    /// the deterministic construction bit for bit.
    fn diagonal_value(&self, degree: usize) -> f64 {
        match self.kind {
            ShiftKind::Adjacency => 0.0,
            ShiftKind::DirectedLaplacian => degree as f64,
            ShiftKind::NormalizedShifted => degree as f64 / self.lambda_max.unwrap_or(1.0) - 0.5,
        }
    }
}

/// Builds the shift operator of kind `kind` on the deterministic graph.
pub fn build_shift(topology: &Topology, kind: ShiftKind) -> Result<ShiftOperator> {
    let n = topology.n();
    let links: Vec<(usize, usize)> = topology.edges().collect();
    let mut adjacency = DMatrix::zeros(n, n);
    for &(i, j) in &links {
        adjacency[(i, j)] = 1.0;
    }
    let laplacian = || {
        let mut l = -adjacency.clone();
        for i in 0..n {
            l[(i, i)] = topology.degree(i) as f64;
        }
        l
    };

    let (matrix, lambda_max) = match kind {
        ShiftKind::Adjacency => (adjacency.clone(), None),
        ShiftKind::DirectedLaplacian => (laplacian(), None),
        ShiftKind::NormalizedShifted => {
            let l = laplacian();
            let eig = SymmetricEigen::try_new(l.clone(), f64::EPSILON, 10_000).ok_or_else(|| {
                Error::Numerical("Laplacian eigen-decomposition did not converge".into())
            })?;
            let lambda = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !lambda.is_finite() || lambda <= 0.0 {
                return Err(Error::Numerical(format!(
                    "largest Laplacian eigenvalue is {lambda}; the graph has no links"
                )));
            }
            let mut s = l / lambda;
            for i in 0..n {
                s[(i, i)] -= 0.5;
            }
            (s, Some(lambda))
        }
    };

    Ok(ShiftOperator {
        kind,
        matrix,
        lambda_max,
        links,
    })
}

/// How the diagonal of Laplacian-derived shifts is averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagonalMode {
    /// Exact expectation under link sampling: the degree term averages to
    /// `Σ_j p_ij`.
    #[default]
    Exact,
    /// Diagonal scaled by a per-row probability `p_ii := min_j p_ij`, which is
    /// `q_i` for row-equalized matrices.
    RowProbability,
}

/// Link activation probabilities. Entry `(i, j)` belongs to link `(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectionMatrix {
    entries: DMatrix<f64>,
    row_equalized: bool,
}

impl ConnectionMatrix {
    /// Validates a square matrix of probabilities in `[0, 1]`.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::DimensionMismatch {
                expected: entries.nrows(),
                actual: entries.ncols(),
            });
        }
        if let Some(bad) = entries.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("probability {bad} outside [0, 1]")));
        }
        Ok(ConnectionMatrix {
            entries,
            row_equalized: false,
        })
    }

    /// Same probability `q` on every link of `s`.
    pub fn uniform(s: &ShiftOperator, q: f64) -> Result<Self> {
        Self::from_row_probabilities(s, &vec![q; s.n()])
    }

    pub fn ones(s: &ShiftOperator) -> Self {
        Self::uniform(s, 1.0).expect("1 is a valid probability")
    }

    /// Row `i` carries `q[i]` on every link leaving `i`.
    pub fn from_row_probabilities(s: &ShiftOperator, q: &[f64]) -> Result<Self> {
        let n = s.n();
        if q.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: q.len(),
            });
        }
        if let Some(bad) = q.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("probability {bad} outside [0, 1]")));
        }
        let mut entries = DMatrix::zeros(n, n);
        for &(i, j) in s.links() {
            entries[(i, j)] = q[i];
        }
        Ok(ConnectionMatrix {
            entries,
            row_equalized: true,
        })
    }

    /// Independent uniform draws in `(0, 1]` on every link.
    pub fn random<R: Rng + ?Sized>(s: &ShiftOperator, rng: &mut R) -> Self {
        let n = s.n();
        let mut entries = DMatrix::zeros(n, n);
        for &(i, j) in s.links() {
            entries[(i, j)] = 1.0 - rng.random::<f64>();
        }
        ConnectionMatrix {
            entries,
            row_equalized: false,
        }
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn row_equalized(&self) -> bool {
        self.row_equalized
    }

    pub(crate) fn mark_row_equalized(&mut self) {
        self.row_equalized = true;
    }

    /// Smallest nonzero off-diagonal entry of row `i`.
    pub fn row_min_nonzero(&self, i: usize) -> Option<f64> {
        (0..self.n())
            .filter(|&j| j != i)
            .map(|j| self.entries[(i, j)])
            .filter(|&v| v > 0.0)
            .min_by(f64::total_cmp)
    }

    /// Rejects nonzero off-diagonal probabilities on pairs that are not links
    /// of `s`.
    pub fn check_support(&self, s: &ShiftOperator) -> Result<()> {
        let n = s.n();
        if self.n() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: self.n(),
            });
        }
        let mut allowed = DMatrix::from_element(n, n, false);
        for &(i, j) in s.links() {
            allowed[(i, j)] = true;
        }
        for i in 0..n {
            for j in 0..n {
                if i != j && self.entries[(i, j)] != 0.0 && !allowed[(i, j)] {
                    return Err(Error::SupportMismatch { row: i, col: j });
                }
            }
        }
        Ok(())
    }
}

/// Sets every nonzero off-diagonal entry of row `i` to the row's minimum
/// nonzero entry.
pub fn equalize_rows(p: &ConnectionMatrix) -> ConnectionMatrix {
    let n = p.n();
    let mut entries = p.entries.clone();
    for i in 0..n {
        if let Some(q) = p.row_min_nonzero(i) {
            for j in 0..n {
                if j != i && entries[(i, j)] > 0.0 {
                    entries[(i, j)] = q;
                }
            }
        }
    }
    ConnectionMatrix {
        entries,
        row_equalized: true,
    }
}

/// `E[S_t]` under independent link sampling, diagonal per [`DiagonalMode::Exact`].
pub fn expected_shift(s: &ShiftOperator, p: &ConnectionMatrix) -> Result<DMatrix<f64>> {
    expected_shift_with(s, p, DiagonalMode::Exact)
}

pub fn expected_shift_with(
    s: &ShiftOperator,
    p: &ConnectionMatrix,
    mode: DiagonalMode,
) -> Result<DMatrix<f64>> {
    p.check_support(s)?;
    let n = s.n();
    let mut out = DMatrix::zeros(n, n);
    for &(i, j) in s.links() {
        out[(i, j)] = p.get(i, j) * s.matrix[(i, j)];
    }
    if s.kind == ShiftKind::Adjacency {
        return Ok(out);
    }

    let divisor = s.lambda_max.unwrap_or(1.0);
    let offset = if s.kind == ShiftKind::NormalizedShifted { -0.5 } else { 0.0 };
    let mut expected_degree = vec![0.0; n];
    match mode {
        DiagonalMode::Exact => {
            for &(i, j) in s.links() {
                expected_degree[i] += p.get(i, j);
            }
        }
        DiagonalMode::RowProbability => {
            let mut degree = vec![0usize; n];
            for &(i, _) in s.links() {
                degree[i] += 1;
            }
            for (i, d) in degree.into_iter().enumerate() {
                expected_degree[i] = p.row_min_nonzero(i).unwrap_or(0.0) * d as f64;
            }
        }
    }
    for i in 0..n {
        out[(i, i)] = expected_degree[i] / divisor + offset;
    }
    Ok(out)
}

/// One time-varying graph: the surviving links and the rebuilt shift.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    active_links: Vec<(usize, usize)>,
    shift: DMatrix<f64>,
}

impl Realization {
    pub fn active_links(&self) -> &[(usize, usize)] {
        &self.active_links
    }

    pub fn shift(&self) -> &DMatrix<f64> {
        &self.shift
    }

    pub fn into_shift(self) -> DMatrix<f64> {
        self.shift
    }
}

/// Keeps each link of `s` independently with its probability in `p`.
pub fn sample_realization<R: Rng + ?Sized>(
    s: &ShiftOperator,
    p: &ConnectionMatrix,
    rng: &mut R,
) -> Realization {
    let active: Vec<bool> = s
        .links()
        .iter()
        .map(|&(i, j)| rng.random::<f64>() < p.get(i, j))
        .collect();
    let active_links = s
        .links()
        .iter()
        .zip(&active)
        .filter_map(|(&l, &on)| on.then_some(l))
        .collect();
    Realization {
        active_links,
        shift: s.realize(&active),
    }
}

/// Row-sparse shift realization used by the Monte Carlo paths.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseShift {
    n: usize,
    diag: Vec<f64>,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseShift {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::from_fn(self.n, |i, _| self.diag[i] * x[i]);
        for &(i, j, v) in &self.entries {
            y[i] += v * x[j];
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::from_diagonal(&DVector::from_row_slice(&self.diag));
        for &(i, j, v) in &self.entries {
            m[(i, j)] += v;
        }
        m
    }
}
