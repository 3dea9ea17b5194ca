//! Broadcast slot scheduling over the SINR model.
//!
//! [`cdsa_schedule`] simulates the cross-layer distributed scheduling
//! protocol in logical control rounds: a randomly chosen active node gathers
//! feasibility declarations from candidates whose preventing discs do not
//! overlap its own, shrinks its interferer estimate until the feasible set
//! matches it, and then the slot members derive their worst-neighbor link
//! quality and per-link acceptance probabilities so that every neighbor of a
//! transmitter receives with the same probability.
//!
//! The baselines are deliberately simple contention and coloring schemes used
//! for comparison.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ConnectionMatrix, Point, Topology};
use crate::radio::{link_quality, ranges, sinr_at, RadioParams};
use crate::rng::{self, Purpose};

/// Non-termination guard for the contention baselines.
pub const SLOT_LIMIT: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    Cdsa,
    Lbpim,
    Rlba,
    Coloring,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 4] = [
        SchedulerKind::Cdsa,
        SchedulerKind::Lbpim,
        SchedulerKind::Rlba,
        SchedulerKind::Coloring,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchedulerKind::Cdsa => "cdsa",
            SchedulerKind::Lbpim => "lbpim",
            SchedulerKind::Rlba => "rlba",
            SchedulerKind::Coloring => "coloring",
        }
    }

    fn stream_index(self) -> u64 {
        self as u64
    }
}

/// Link quality of one transmitter in its own slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    pub node: usize,
    pub slot: usize,
    pub sinr_min: f64,
    pub pdr_min: f64,
    /// No neighbor within the broadcast range; the figures are noise-only
    /// values at the range edge.
    pub isolated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkAcceptance {
    pub tx: usize,
    pub rx: usize,
    pub pdr: f64,
    pub p_ac: f64,
}

#[derive(Debug, Clone)]
pub struct Schedule {
    pub kind: SchedulerKind,
    /// Transmitter sets per slot. For CDSA these partition the nodes; for the
    /// baselines this is the contention log (every node that fired).
    pub slots: Vec<Vec<usize>>,
    /// Interferer estimate in force when each CDSA slot was allocated.
    pub slot_n_hat: Vec<usize>,
    pub per_node: Vec<NodeReport>,
    pub acceptance: Vec<LinkAcceptance>,
    /// Link probabilities seen by the filtering layer, row = transmitter.
    pub q_matrix: ConnectionMatrix,
}

impl Schedule {
    pub fn n_slots(&self) -> usize {
        self.slots.len()
    }

    /// `slot,node_id,sinr_min,pdr_min`, one row per node in id order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("slot,node_id,sinr_min,pdr_min\n");
        for r in &self.per_node {
            let _ = writeln!(out, "{},{},{},{}", r.slot, r.node, r.sinr_min, r.pdr_min);
        }
        out
    }

    /// `tx,rx,p_ac` for every scheduled link.
    pub fn acceptance_csv(&self) -> String {
        let mut out = String::from("tx,rx,p_ac\n");
        for a in &self.acceptance {
            let _ = writeln!(out, "{},{},{}", a.tx, a.rx, a.p_ac);
        }
        out
    }
}

/// One row of a schedule file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleRow {
    pub slot: usize,
    pub node: usize,
    pub sinr_min: f64,
    pub pdr_min: f64,
}

/// Parses the `slot,node_id,sinr_min,pdr_min` format.
pub fn parse_schedule_csv(text: &str) -> Result<Vec<ScheduleRow>> {
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() || (idx == 0 && line == "slot,node_id,sinr_min,pdr_min") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let bad = |what: &str| Error::Parse {
            line: line_no,
            message: format!("invalid {what}"),
        };
        rows.push(ScheduleRow {
            slot: fields[0].parse().map_err(|_| bad("slot"))?,
            node: fields[1].parse().map_err(|_| bad("node_id"))?,
            sinr_min: fields[2].parse().map_err(|_| bad("sinr_min"))?,
            pdr_min: fields[3].parse().map_err(|_| bad("pdr_min"))?,
        });
    }
    Ok(rows)
}

/// Row-equalized connection matrix with `q_i = pdr_min_i` on every edge of
/// node `i`.
pub fn q_from_pdr_min(topology: &Topology, pdr_min: &[f64]) -> Result<ConnectionMatrix> {
    let n = topology.n();
    if pdr_min.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: pdr_min.len(),
        });
    }
    let mut entries = DMatrix::zeros(n, n);
    for (i, j) in topology.edges() {
        entries[(i, j)] = pdr_min[i];
    }
    let mut q = ConnectionMatrix::new(entries)?;
    q.mark_row_equalized();
    Ok(q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Activate { round: usize, node: usize, n_hat: usize },
    Declare { active: usize, node: usize, n_hat: usize },
    /// A candidate stayed silent after overhearing a nearby declaration.
    Overheard { active: usize, node: usize, heard: usize },
    Conflict { active: usize, node: usize, with: usize },
    Decrement { active: usize, n_hat: usize, feasible: usize },
    Allocate { slot: usize, nodes: Vec<usize>, n_hat: usize },
    Contend { slot: usize, transmitters: Vec<usize>, succeeded: Vec<usize> },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ProtocolTrace {
    pub events: Vec<TraceEvent>,
    /// Feasibility declarations sent.
    pub control_messages: usize,
}

impl ProtocolTrace {
    /// One JSON object per line.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("trace events serialize"));
            out.push('\n');
        }
        out
    }
}

fn check_radio(topology: &Topology, params: &RadioParams) -> Result<()> {
    ranges(params, 0)?;
    let rb = params.r_broadcast();
    if topology.r_broadcast() > rb * (1.0 + 1e-12) {
        return Err(Error::invalid(format!(
            "topology broadcast range {} m exceeds the radio broadcast range {rb} m",
            topology.r_broadcast()
        )));
    }
    Ok(())
}

/// Runs the protocol from `seed`.
pub fn cdsa_schedule(
    topology: &Topology,
    params: &RadioParams,
    n_estimate: usize,
    seed: u64,
) -> Result<(Schedule, ProtocolTrace)> {
    if n_estimate == 0 {
        return Err(Error::invalid("node-count estimate must be at least 1"));
    }
    check_radio(topology, params)?;
    let n = topology.n();
    let pos = topology.positions();
    let rb = params.r_broadcast();
    let mut rng = rng::child_stream(seed, Purpose::Schedule, SchedulerKind::Cdsa.stream_index());
    let mut trace = ProtocolTrace::default();

    // preventing radius per interferer estimate, filled lazily
    let mut rp_cache: Vec<Option<f64>> = vec![None; n_estimate + 1];
    let mut preventing = |k: usize| -> Result<f64> {
        if let Some(r) = rp_cache[k] {
            return Ok(r);
        }
        let r = ranges(params, k)?.r_preventing;
        rp_cache[k] = Some(r);
        Ok(r)
    };

    let mut candidates: Vec<usize> = (0..n).collect();
    let mut slots: Vec<Vec<usize>> = Vec::new();
    let mut slot_n_hat = Vec::new();
    let mut n_tx = 0usize;

    while !candidates.is_empty() {
        let active = candidates[rng.random_range(0..candidates.len())];
        let mut n_hat = n_estimate.saturating_sub(n_tx + 1);
        trace.events.push(TraceEvent::Activate {
            round: slots.len(),
            node: active,
            n_hat,
        });
        // declarations received by the active node, in arrival order
        let mut declared: Vec<usize> = Vec::new();
        let mut has_declared = vec![false; n];

        let members = loop {
            if n_hat == 0 {
                break vec![active];
            }
            let two_rp = 2.0 * preventing(n_hat)?;
            let mut round_declarers: Vec<usize> = Vec::new();
            for &c in &candidates {
                if c == active || has_declared[c] || pos[c].distance(&pos[active]) < two_rp {
                    continue;
                }
                let heard = declared
                    .iter()
                    .chain(&round_declarers)
                    .copied()
                    .find(|&d| pos[c].distance(&pos[d]) <= rb && pos[c].distance(&pos[d]) < two_rp);
                if let Some(heard) = heard {
                    trace.events.push(TraceEvent::Overheard { active, node: c, heard });
                    continue;
                }
                has_declared[c] = true;
                round_declarers.push(c);
                trace.control_messages += 1;
                trace.events.push(TraceEvent::Declare { active, node: c, n_hat });
            }
            declared.extend(round_declarers);

            let mut feasible: Vec<usize> = Vec::new();
            for &c in &declared {
                if feasible.len() == n_hat {
                    break;
                }
                if pos[c].distance(&pos[active]) < two_rp {
                    continue;
                }
                match feasible.iter().copied().find(|&f| pos[c].distance(&pos[f]) < two_rp) {
                    Some(with) => trace.events.push(TraceEvent::Conflict { active, node: c, with }),
                    None => feasible.push(c),
                }
            }
            if feasible.len() == n_hat {
                feasible.push(active);
                feasible.sort_unstable();
                break feasible;
            }
            n_hat -= 1;
            trace.events.push(TraceEvent::Decrement {
                active,
                n_hat,
                feasible: feasible.len(),
            });
        };

        trace.events.push(TraceEvent::Allocate {
            slot: slots.len(),
            nodes: members.clone(),
            n_hat,
        });
        candidates.retain(|c| members.binary_search(c).is_err());
        n_tx += members.len();
        slots.push(members);
        slot_n_hat.push(n_hat);
    }

    let (per_node, acceptance) = slot_link_quality(topology, params, &slots)?;
    let pdr_min: Vec<f64> = per_node.iter().map(|r| r.pdr_min).collect();
    let q_matrix = q_from_pdr_min(topology, &pdr_min)?;
    Ok((
        Schedule {
            kind: SchedulerKind::Cdsa,
            slots,
            slot_n_hat,
            per_node,
            acceptance,
            q_matrix,
        },
        trace,
    ))
}

/// SINR of `tx` at every neighbor while `slot` transmits.
fn neighbor_sinrs(
    topology: &Topology,
    params: &RadioParams,
    tx: usize,
    slot: &[usize],
) -> Result<Vec<(usize, f64)>> {
    let pos = topology.positions();
    let interferers: Vec<Point> = slot.iter().filter(|&&u| u != tx).map(|&u| pos[u]).collect();
    topology
        .neighbors(tx)
        .iter()
        .map(|&j| {
            // a node that is itself transmitting cannot receive
            if slot.contains(&j) {
                return Ok((j, 0.0));
            }
            Ok((j, sinr_at(params, pos[j], pos[tx], &interferers)?))
        })
        .collect()
}

fn noise_only_edge_sinr(params: &RadioParams) -> f64 {
    params.power_at(params.r_broadcast()) / params.noise_mw()
}

fn slot_link_quality(
    topology: &Topology,
    params: &RadioParams,
    slots: &[Vec<usize>],
) -> Result<(Vec<NodeReport>, Vec<LinkAcceptance>)> {
    let n = topology.n();
    let mut per_node: Vec<Option<NodeReport>> = vec![None; n];
    let mut acceptance = Vec::new();
    for (s, slot) in slots.iter().enumerate() {
        for &i in slot {
            let sinrs = neighbor_sinrs(topology, params, i, slot)?;
            let isolated = sinrs.is_empty();
            let sinr_min = if isolated {
                noise_only_edge_sinr(params)
            } else {
                sinrs.iter().map(|&(_, v)| v).fold(f64::INFINITY, f64::min)
            };
            let pdr_min = link_quality(params, sinr_min).pdr;
            for (j, sinr) in sinrs {
                let pdr = link_quality(params, sinr).pdr;
                let p_ac = if pdr > 0.0 { pdr_min / pdr } else { 1.0 };
                acceptance.push(LinkAcceptance { tx: i, rx: j, pdr, p_ac });
            }
            per_node[i] = Some(NodeReport {
                node: i,
                slot: s,
                sinr_min,
                pdr_min,
                isolated,
            });
        }
    }
    acceptance.sort_by_key(|a| (a.tx, a.rx));
    let per_node = per_node
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.ok_or_else(|| Error::invalid(format!("node {i} was never scheduled"))))
        .collect::<Result<Vec<_>>>()?;
    Ok((per_node, acceptance))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub slot: usize,
    pub tx: usize,
    pub rx: usize,
    pub sinr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScheduleReport {
    pub violations: Vec<Violation>,
    pub missing: Vec<usize>,
    pub duplicated: Vec<usize>,
}

impl ScheduleReport {
    pub fn partition_ok(&self) -> bool {
        self.missing.is_empty() && self.duplicated.is_empty()
    }

    pub fn is_clean(&self) -> bool {
        self.partition_ok() && self.violations.is_empty()
    }
}

/// Recomputes every receiver's SINR under the slot assignment and checks that
/// the slots partition the node set.
pub fn verify_schedule(schedule: &Schedule, topology: &Topology, params: &RadioParams) -> ScheduleReport {
    let n = topology.n();
    let mut count = vec![0usize; n];
    let mut report = ScheduleReport::default();
    for (s, slot) in schedule.slots.iter().enumerate() {
        for &i in slot {
            if i < n {
                count[i] += 1;
            }
            let sinrs = match neighbor_sinrs(topology, params, i, slot) {
                Ok(v) => v,
                Err(_) => topology.neighbors(i).iter().map(|&j| (j, 0.0)).collect(),
            };
            for (j, sinr) in sinrs {
                if !(sinr >= params.kappa()) {
                    report.violations.push(Violation { slot: s, tx: i, rx: j, sinr });
                }
            }
        }
    }
    for (i, &c) in count.iter().enumerate() {
        match c {
            0 => report.missing.push(i),
            1 => {}
            _ => report.duplicated.push(i),
        }
    }
    report
}

/// Simplified literature baselines.
///
/// * `Lbpim`: every unfinished node transmits with probability `1/(Δ_i + 1)`,
///   contending over its closed neighborhood.
/// * `Rlba`: every unfinished node transmits with one constant probability
///   (`rlba_probability`, default `1/(Δ_max + 1)`).
/// * `Coloring`: greedy coloring by node id in which nodes closer than twice
///   the single-interferer preventing radius get distinct colors; colors are
///   played in frames until every node has succeeded.
///
/// A node finishes on its first transmission received by every neighbor with
/// SINR at least `κ`. Link probabilities are the mean realized PDR over all
/// of a node's transmissions; no equalization takes place.
pub fn baseline_schedule(
    kind: SchedulerKind,
    topology: &Topology,
    params: &RadioParams,
    seed: u64,
    rlba_probability: Option<f64>,
) -> Result<(Schedule, ProtocolTrace)> {
    check_radio(topology, params)?;
    let n = topology.n();
    let mut rng = rng::child_stream(seed, Purpose::Schedule, kind.stream_index());
    let mut state = Contention::new(n);
    let mut trace = ProtocolTrace::default();

    match kind {
        SchedulerKind::Cdsa => return Err(Error::invalid("CDSA is not a baseline")),
        SchedulerKind::Lbpim | SchedulerKind::Rlba => {
            let constant = match (kind, rlba_probability) {
                (SchedulerKind::Rlba, Some(p)) if p > 0.0 && p <= 1.0 => Some(p),
                (SchedulerKind::Rlba, Some(p)) => {
                    return Err(Error::invalid(format!("RLBA probability must lie in (0, 1], got {p}")))
                }
                (SchedulerKind::Rlba, None) => Some(1.0 / (topology.max_degree() + 1) as f64),
                _ => None,
            };
            while state.pending > 0 {
                if state.slots.len() >= SLOT_LIMIT {
                    return Err(Error::SlotLimit(SLOT_LIMIT));
                }
                let mut transmitters = Vec::new();
                for i in 0..n {
                    if state.done[i].is_some() {
                        continue;
                    }
                    let p = constant.unwrap_or_else(|| 1.0 / (topology.degree(i) + 1) as f64);
                    if rng.random::<f64>() < p {
                        transmitters.push(i);
                    }
                }
                state.play(topology, params, transmitters, &mut trace)?;
            }
        }
        SchedulerKind::Coloring => {
            let two_rp = 2.0 * ranges(params, 1)?.r_preventing;
            let colors = greedy_coloring(topology, two_rp);
            let n_colors = colors.iter().max().map_or(0, |c| c + 1);
            while state.pending > 0 {
                let before = state.pending;
                for color in 0..n_colors {
                    if state.slots.len() >= SLOT_LIMIT {
                        return Err(Error::SlotLimit(SLOT_LIMIT));
                    }
                    let members: Vec<usize> = (0..n)
                        .filter(|&i| colors[i] == color && state.done[i].is_none())
                        .collect();
                    if !members.is_empty() {
                        state.play(topology, params, members, &mut trace)?;
                    }
                }
                if state.pending == before {
                    // a frame without progress: serialize the rest
                    for i in 0..n {
                        if state.done[i].is_none() {
                            state.play(topology, params, vec![i], &mut trace)?;
                        }
                    }
                }
            }
        }
    }
    state.finish(kind, topology, trace)
}

/// Greedy coloring by ascending id under a distance conflict rule.
pub fn greedy_coloring(topology: &Topology, conflict_distance: f64) -> Vec<usize> {
    let n = topology.n();
    let pos = topology.positions();
    let mut colors = vec![0usize; n];
    for i in 0..n {
        let used: Vec<usize> = (0..i)
            .filter(|&j| pos[i].distance(&pos[j]) < conflict_distance)
            .map(|j| colors[j])
            .collect();
        colors[i] = (0..).find(|c| !used.contains(c)).expect("unbounded colors");
    }
    colors
}

struct Contention {
    slots: Vec<Vec<usize>>,
    done: Vec<Option<(usize, f64, f64)>>,
    pending: usize,
    pdr_sum: DMatrix<f64>,
    attempts: Vec<usize>,
}

impl Contention {
    fn new(n: usize) -> Self {
        Contention {
            slots: Vec::new(),
            done: vec![None; n],
            pending: n,
            pdr_sum: DMatrix::zeros(n, n),
            attempts: vec![0; n],
        }
    }

    fn play(
        &mut self,
        topology: &Topology,
        params: &RadioParams,
        transmitters: Vec<usize>,
        trace: &mut ProtocolTrace,
    ) -> Result<()> {
        let slot = self.slots.len();
        let mut succeeded = Vec::new();
        for &i in &transmitters {
            let sinrs = neighbor_sinrs(topology, params, i, &transmitters)?;
            self.attempts[i] += 1;
            for &(j, sinr) in &sinrs {
                self.pdr_sum[(i, j)] += link_quality(params, sinr).pdr;
            }
            if sinrs.iter().all(|&(_, s)| s >= params.kappa()) {
                let sinr_min = if sinrs.is_empty() {
                    noise_only_edge_sinr(params)
                } else {
                    sinrs.iter().map(|&(_, v)| v).fold(f64::INFINITY, f64::min)
                };
                self.done[i] = Some((slot, sinr_min, link_quality(params, sinr_min).pdr));
                self.pending -= 1;
                succeeded.push(i);
            }
        }
        trace.events.push(TraceEvent::Contend {
            slot,
            transmitters: transmitters.clone(),
            succeeded,
        });
        self.slots.push(transmitters);
        Ok(())
    }

    fn finish(
        self,
        kind: SchedulerKind,
        topology: &Topology,
        trace: ProtocolTrace,
    ) -> Result<(Schedule, ProtocolTrace)> {
        let n = topology.n();
        let mut entries = DMatrix::zeros(n, n);
        let mut acceptance = Vec::new();
        for (i, j) in topology.edges() {
            let pdr = self.pdr_sum[(i, j)] / self.attempts[i].max(1) as f64;
            entries[(i, j)] = pdr;
            acceptance.push(LinkAcceptance { tx: i, rx: j, pdr, p_ac: 1.0 });
        }
        let per_node = self
            .done
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let (slot, sinr_min, pdr_min) = d.expect("every node finished");
                NodeReport {
                    node: i,
                    slot,
                    sinr_min,
                    pdr_min,
                    isolated: topology.degree(i) == 0,
                }
            })
            .collect();
        Ok((
            Schedule {
                kind,
                slots: self.slots,
                slot_n_hat: Vec::new(),
                per_node,
                acceptance,
                q_matrix: ConnectionMatrix::new(entries)?,
            },
            trace,
        ))
    }
}

/// Dispatches to CDSA or a baseline.
pub fn run_scheduler(
    kind: SchedulerKind,
    topology: &Topology,
    params: &RadioParams,
    n_estimate: usize,
    seed: u64,
    rlba_probability: Option<f64>,
) -> Result<(Schedule, ProtocolTrace)> {
    match kind {
        SchedulerKind::Cdsa => cdsa_schedule(topology, params, n_estimate, seed),
        _ => baseline_schedule(kind, topology, params, seed, rlba_probability),
    }
}
