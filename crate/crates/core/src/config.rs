//! Experiment configuration: a TOML key tree with unit-suffixed physical
//! quantities. Unknown keys are rejected, defaults are explicit, and
//! validation errors name the offending key path.
//!
//! ```toml
//! seed = 7
//! trials = 1000
//!
//! [topology]
//! kind = "random"
//! nodes = 100
//! side_len_m = 280.0
//! r_broadcast_m = 60.0
//!
//! [radio]
//! broadcast_range_m = 60.0
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{generate_topology, grid_topology, Topology};
use crate::radio::RadioParams;
use crate::scheduler::SchedulerKind;
use crate::sim::{FilterSpec, NetworkSpec, SignalSpec, TrialSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Independent replicates (topology, schedule, signal and trial seeds).
    #[serde(default = "one")]
    pub replicates: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "one_usize")]
    pub threads: usize,
    pub topology: TopologyConfig,
    #[serde(default)]
    pub radio: RadioConfig,
    #[serde(default)]
    pub filter: FilterSpec,
    #[serde(default)]
    pub signal: SignalSpec,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub compare: CompareConfig,
}

fn one() -> u64 {
    1
}

fn one_usize() -> usize {
    1
}

fn default_trials() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologyConfig {
    /// Uniform deployment on a square, drawn from the replicate's topology seed.
    Random {
        nodes: usize,
        side_len_m: f64,
        r_broadcast_m: f64,
    },
    Grid {
        rows: usize,
        cols: usize,
        spacing_m: f64,
        r_broadcast_m: f64,
    },
    /// Positions from a topology file; relative paths resolve against the
    /// config file's directory.
    File { path: PathBuf },
}

impl TopologyConfig {
    pub fn build(&self, seed: u64, base_dir: &Path) -> Result<Topology> {
        match self {
            TopologyConfig::Random {
                nodes,
                side_len_m,
                r_broadcast_m,
            } => generate_topology(*nodes, *side_len_m, *r_broadcast_m, seed),
            TopologyConfig::Grid {
                rows,
                cols,
                spacing_m,
                r_broadcast_m,
            } => grid_topology(*rows, *cols, *spacing_m, *r_broadcast_m),
            TopologyConfig::File { path } => {
                let text = std::fs::read_to_string(base_dir.join(path))?;
                Topology::from_csv(&text)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("topology.{key}"), format!("must be positive, got {v}")))
            }
        };
        match self {
            TopologyConfig::Random {
                nodes,
                side_len_m,
                r_broadcast_m,
            } => {
                if *nodes == 0 {
                    return Err(Error::config("topology.nodes", "must be at least 1"));
                }
                positive("side_len_m", *side_len_m)?;
                positive("r_broadcast_m", *r_broadcast_m)
            }
            TopologyConfig::Grid {
                rows,
                cols,
                spacing_m,
                r_broadcast_m,
            } => {
                if *rows == 0 || *cols == 0 {
                    return Err(Error::config("topology.rows", "grid needs at least one row and column"));
                }
                positive("spacing_m", *spacing_m)?;
                positive("r_broadcast_m", *r_broadcast_m)
            }
            TopologyConfig::File { path } => {
                if path.as_os_str().is_empty() {
                    return Err(Error::config("topology.path", "must not be empty"));
                }
                Ok(())
            }
        }
    }
}

/// Physical layer. Without `broadcast_range_m` the broadcast range is `χ·R_m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioConfig {
    pub tx_power_dbm: f64,
    pub noise_dbm: f64,
    pub nu: f64,
    pub kappa: f64,
    pub chi: f64,
    pub packet_bits: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub broadcast_range_m: Option<f64>,
}

impl Default for RadioConfig {
    fn default() -> Self {
        RadioConfig {
            tx_power_dbm: -2.0,
            noise_dbm: -100.0,
            nu: 2.5,
            kappa: 1.0,
            chi: 0.6,
            packet_bits: 176,
            broadcast_range_m: None,
        }
    }
}

impl RadioConfig {
    pub fn params(&self) -> Result<RadioParams> {
        let params = RadioParams::new(
            self.tx_power_dbm,
            self.noise_dbm,
            self.nu,
            self.kappa,
            self.chi,
            self.packet_bits,
        )?;
        match self.broadcast_range_m {
            Some(r) => params.with_broadcast_range(r),
            None => Ok(params),
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.tx_power_dbm.is_finite() {
            return Err(Error::config("radio.tx_power_dbm", "must be finite"));
        }
        if !self.noise_dbm.is_finite() {
            return Err(Error::config("radio.noise_dbm", "must be finite"));
        }
        if !(self.nu.is_finite() && self.nu > 0.0) {
            return Err(Error::config("radio.nu", format!("must be positive, got {}", self.nu)));
        }
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return Err(Error::config("radio.kappa", format!("must be positive, got {}", self.kappa)));
        }
        if !(self.chi > 0.0 && self.chi < 1.0) {
            return Err(Error::config("radio.chi", format!("must lie in (0, 1), got {}", self.chi)));
        }
        if self.packet_bits == 0 {
            return Err(Error::config("radio.packet_bits", "must be at least 1"));
        }
        if let Some(r) = self.broadcast_range_m {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::config("radio.broadcast_range_m", format!("must be positive, got {r}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub q_values: Vec<f64>,
    /// Input smoothing for the sweep; 0 gives a white unit-variance signal.
    pub smooth_weight: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            q_values: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            smooth_weight: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub schedulers: Vec<SchedulerKind>,
    /// CDSA's node-count estimate `N̂`; the true node count when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_estimate: Option<usize>,
    /// RLBA's transmission probability; `1/(Δmax + 1)` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rlba_probability: Option<f64>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            schedulers: SchedulerKind::ALL.to_vec(),
            n_estimate: None,
            rlba_probability: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|span| text[..span.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::Parse {
                line,
                message: e.message().to_string(),
            }
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Fully defaulted TOML echo; parses back to an identical config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::config("replicates", "must be at least 1"));
        }
        if self.trials == 0 {
            return Err(Error::config("trials", "must be at least 1"));
        }
        if self.threads == 0 {
            return Err(Error::config("threads", "must be at least 1"));
        }
        self.topology.validate()?;
        self.radio.validate()?;

        let f = &self.filter;
        if !f.w.is_finite() {
            return Err(Error::config("filter.w", "must be finite"));
        }
        if !(f.mu.is_finite() && f.mu >= 0.0) {
            return Err(Error::config("filter.mu", format!("must be non-negative, got {}", f.mu)));
        }
        if f.max_iterations == 0 {
            return Err(Error::config("filter.max_iterations", "must be at least 1"));
        }

        let s = &self.signal;
        if !(s.smooth_weight.is_finite() && s.smooth_weight >= 0.0) {
            return Err(Error::config("signal.smooth_weight", "must be non-negative"));
        }
        if !(s.noise_std.is_finite() && s.noise_std >= 0.0) {
            return Err(Error::config("signal.noise_std", "must be non-negative"));
        }

        if self.sweep.q_values.is_empty() {
            return Err(Error::config("sweep.q_values", "must not be empty"));
        }
        if let Some(q) = self.sweep.q_values.iter().find(|&&q| !(q > 0.0 && q <= 1.0)) {
            return Err(Error::config("sweep.q_values", format!("values must lie in (0, 1], got {q}")));
        }
        if !(self.sweep.smooth_weight.is_finite() && self.sweep.smooth_weight >= 0.0) {
            return Err(Error::config("sweep.smooth_weight", "must be non-negative"));
        }

        let c = &self.compare;
        if c.schedulers.is_empty() {
            return Err(Error::config("compare.schedulers", "must not be empty"));
        }
        if c.n_estimate == Some(0) {
            return Err(Error::config("compare.n_estimate", "must be at least 1"));
        }
        if let Some(p) = c.rlba_probability {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::config("compare.rlba_probability", format!("must lie in (0, 1], got {p}")));
            }
        }
        Ok(())
    }

    pub fn trial_spec(&self) -> TrialSpec {
        TrialSpec {
            trials: self.trials,
            threads: self.threads,
        }
    }

    pub fn sweep_signal(&self) -> SignalSpec {
        SignalSpec {
            smooth_weight: self.sweep.smooth_weight,
            ..self.signal
        }
    }

    pub fn network(&self, topology: &Topology) -> Result<NetworkSpec> {
        Ok(NetworkSpec {
            radio: self.radio.params()?,
            schedulers: self.compare.schedulers.clone(),
            n_estimate: self.compare.n_estimate.unwrap_or(topology.n()),
            rlba_probability: self.compare.rlba_probability,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::FilterMode;
    use crate::graph::ShiftKind;
    use crate::optimize::Solver;

    const MINIMAL: &str = "[topology]\nkind = \"random\"\nnodes = 10\nside_len_m = 50.0\nr_broadcast_m = 20.0\n";

    #[test]
    fn minimal_config_is_fully_defaulted() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.seed, 0);
        assert_eq!(c.replicates, 1);
        assert_eq!(c.trials, 1000);
        assert_eq!(c.threads, 1);
        assert_eq!(c.radio, RadioConfig::default());
        assert_eq!(c.filter, FilterSpec::default());
        assert_eq!(c.signal, SignalSpec::default());
        assert_eq!(c.compare.schedulers, SchedulerKind::ALL.to_vec());
        let echo = c.to_toml();
        for key in ["tx_power_dbm", "packet_bits", "q_values", "mu", "smooth_weight", "schedulers"] {
            assert!(echo.contains(key), "echo lacks {key}:\n{echo}");
        }
    }

    #[test]
    fn echo_round_trips() {
        let text = r#"
seed = 42
replicates = 3
trials = 200
threads = 2

[topology]
kind = "grid"
rows = 3
cols = 4
spacing_m = 40.0
r_broadcast_m = 50.0

[radio]
kappa = 2.0
chi = 0.3
broadcast_range_m = 50.0

[filter]
shift = "adjacency"
mode = "node_invariant"
order = 7
w = 0.1
mu = 0.0
solver = "subgradient"

[signal]
noise_std = 0.25

[sweep]
q_values = [0.3, 0.7, 1.0]

[compare]
schedulers = ["cdsa", "coloring"]
n_estimate = 30
rlba_probability = 0.125
"#;
        let c = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(c.filter.shift, ShiftKind::Adjacency);
        assert_eq!(c.filter.mode, FilterMode::NodeInvariant);
        assert_eq!(c.filter.solver, Solver::Subgradient);
        let again = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(c, again);
        let minimal = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(ExperimentConfig::from_toml(&minimal.to_toml()).unwrap(), minimal);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for extra in ["bogus = 1\n", "[radio]\npower_dbm = 3.0\n", "[filter]\nlags = 3\n"] {
            let text = format!("{extra}{MINIMAL}");
            assert!(matches!(ExperimentConfig::from_toml(&text), Err(Error::Parse { .. })), "{extra}");
        }
        let topo_extra = format!("{MINIMAL}rows = 3\n");
        assert!(ExperimentConfig::from_toml(&topo_extra).is_err());
    }

    #[test]
    fn validation_names_key_paths() {
        let cases = [
            ("[radio]\nchi = 1.5\n", "radio.chi"),
            ("[radio]\nkappa = 0.0\n", "radio.kappa"),
            ("[filter]\nmu = -1.0\n", "filter.mu"),
            ("[sweep]\nq_values = [0.5, 1.5]\n", "sweep.q_values"),
            ("[compare]\nrlba_probability = 0.0\n", "compare.rlba_probability"),
            ("[compare]\nschedulers = []\n", "compare.schedulers"),
        ];
        for (section, key) in cases {
            let text = format!("{MINIMAL}{section}");
            match ExperimentConfig::from_toml(&text) {
                Err(Error::Config { path, .. }) => assert_eq!(path, key),
                other => panic!("{key}: {other:?}"),
            }
        }
        let bad_trials = format!("trials = 0\n{MINIMAL}");
        assert!(matches!(
            ExperimentConfig::from_toml(&bad_trials),
            Err(Error::Config { path, .. }) if path == "trials"
        ));
    }

    #[test]
    fn topology_kinds_build() {
        let dir = std::env::temp_dir();
        let random = TopologyConfig::Random {
            nodes: 12,
            side_len_m: 30.0,
            r_broadcast_m: 10.0,
        };
        assert_eq!(random.build(5, &dir).unwrap(), random.build(5, &dir).unwrap());
        let grid = TopologyConfig::Grid {
            rows: 2,
            cols: 5,
            spacing_m: 10.0,
            r_broadcast_m: 12.0,
        };
        assert_eq!(grid.build(0, &dir).unwrap().n(), 10);
    }
}
