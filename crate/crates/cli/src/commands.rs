use std::path::Path;

use serde::Serialize;
use wsnfilter::config::ExperimentConfig;
use wsnfilter::filters::GraphSignal;
use wsnfilter::graph::{build_shift, ConnectionMatrix, ShiftOperator, Topology};
use wsnfilter::optimize::optimize_coefficients;
use wsnfilter::scheduler::{
    parse_schedule_csv, q_from_pdr_min, run_scheduler, verify_schedule, SchedulerKind, ScheduleReport,
};
use wsnfilter::sim::{
    evaluate_connection, evaluate_scheduled, replicate_signal, reports_to_csv, run_accuracy_sweep, run_denoising,
    run_scheduler_comparison, MetricsReport, Seeds,
};

use crate::{read_file, CliError, OutDir};

pub struct Context<'a> {
    pub config: &'a ExperimentConfig,
    pub base_dir: &'a Path,
}

impl Context<'_> {
    fn seeds(&self, replicate: u64) -> Seeds {
        Seeds::derive(self.config.seed, replicate)
    }

    fn topology(&self, seeds: &Seeds) -> Result<Topology, CliError> {
        Ok(self.config.topology.build(seeds.topology, self.base_dir)?)
    }
}

/// Link probabilities chosen on the command line.
enum Links {
    Uniform(f64),
    /// Row-equalized from a stored schedule, with its slot count.
    Scheduled(ConnectionMatrix, usize),
}

fn resolve_links(
    shift: &ShiftOperator,
    topology: &Topology,
    q: Option<f64>,
    schedule: Option<&Path>,
) -> Result<Links, CliError> {
    match (q, schedule) {
        (Some(q), None) => {
            if !(q > 0.0 && q <= 1.0) {
                return Err(CliError::Usage(format!("--q must lie in (0, 1], got {q}")));
            }
            // validated against the shift's support here so errors surface early
            ConnectionMatrix::uniform(shift, q)?;
            Ok(Links::Uniform(q))
        }
        (None, Some(path)) => {
            let rows = parse_schedule_csv(&read_file(path)?)?;
            let n = topology.n();
            let mut pdr_min = vec![f64::NAN; n];
            for r in &rows {
                if r.node >= n {
                    return Err(CliError::Usage(format!(
                        "schedule names node {} but the topology has {n} nodes",
                        r.node
                    )));
                }
                pdr_min[r.node] = r.pdr_min;
            }
            if let Some(missing) = pdr_min.iter().position(|v| v.is_nan()) {
                return Err(CliError::Usage(format!("schedule has no row for node {missing}")));
            }
            let t_slots = rows.iter().map(|r| r.slot + 1).max().unwrap_or(0);
            Ok(Links::Scheduled(q_from_pdr_min(topology, &pdr_min)?, t_slots))
        }
        _ => Err(CliError::Usage("give exactly one of --q and --schedule".into())),
    }
}

impl Links {
    fn matrix(&self, shift: &ShiftOperator) -> Result<ConnectionMatrix, CliError> {
        Ok(match self {
            Links::Uniform(q) => ConnectionMatrix::uniform(shift, *q)?,
            Links::Scheduled(m, _) => m.clone(),
        })
    }
}

pub fn topology(ctx: &Context, replicate: u64, out: &mut OutDir) -> Result<(), CliError> {
    let topo = ctx.topology(&ctx.seeds(replicate))?;
    out.write("topology.csv", &topo.to_csv())
}

#[derive(Serialize)]
struct ScheduleSummary<'a> {
    scheduler: &'static str,
    replicate: u64,
    n_slots: usize,
    slots: &'a [Vec<usize>],
    control_messages: usize,
    verification: &'a ScheduleReport,
}

pub fn schedule(ctx: &Context, kind: SchedulerKind, replicate: u64, out: &mut OutDir) -> Result<(), CliError> {
    let seeds = ctx.seeds(replicate);
    let topo = ctx.topology(&seeds)?;
    let network = ctx.config.network(&topo)?;
    let (schedule, trace) = run_scheduler(
        kind,
        &topo,
        &network.radio,
        network.n_estimate,
        seeds.schedule,
        network.rlba_probability,
    )?;
    let verification = verify_schedule(&schedule, &topo, &network.radio);
    out.write("schedule.csv", &schedule.to_csv())?;
    out.write("acceptance.csv", &schedule.acceptance_csv())?;
    out.write("trace.jsonl", &trace.to_json_lines())?;
    out.write_json(
        "schedule.json",
        &ScheduleSummary {
            scheduler: kind.name(),
            replicate,
            n_slots: schedule.n_slots(),
            slots: &schedule.slots,
            control_messages: trace.control_messages,
            verification: &verification,
        },
    )
}

#[derive(Serialize)]
struct OptimizeSummary {
    replicate: u64,
    bias_fro_sq: f64,
    variance_bound: f64,
    objective: f64,
    rho: f64,
    iterations: usize,
    converged: bool,
}

pub fn optimize(
    ctx: &Context,
    q: Option<f64>,
    schedule: Option<&Path>,
    replicate: u64,
    out: &mut OutDir,
) -> Result<(), CliError> {
    let seeds = ctx.seeds(replicate);
    let topo = ctx.topology(&seeds)?;
    let spec = &ctx.config.filter;
    let shift = build_shift(&topo, spec.shift)?;
    let conn = resolve_links(&shift, &topo, q, schedule)?.matrix(&shift)?;
    let res = optimize_coefficients(&spec.problem(&shift, &conn)?)?;
    out.write("coefficients.csv", &res.coefficients.to_csv())?;
    out.write_json(
        "optimize.json",
        &OptimizeSummary {
            replicate,
            bias_fro_sq: res.bias_fro_sq,
            variance_bound: res.variance_bound,
            objective: res.objective,
            rho: res.rho,
            iterations: res.iterations,
            converged: res.converged,
        },
    )
}

/// With `--schedule` the report matches the CDSA row of `compare` for the
/// same config and replicate.
pub fn filter(
    ctx: &Context,
    q: Option<f64>,
    schedule: Option<&Path>,
    replicate: u64,
    out: &mut OutDir,
) -> Result<(), CliError> {
    let config = ctx.config;
    let seeds = ctx.seeds(replicate);
    let topo = ctx.topology(&seeds)?;
    let spec = &config.filter;
    let shift = build_shift(&topo, spec.shift)?;
    let links = resolve_links(&shift, &topo, q, schedule)?;
    let conn = links.matrix(&shift)?;
    let x = replicate_signal(&topo, &config.signal, &seeds)?;
    let trials = config.trial_spec();
    let (evaluation, report) = match links {
        Links::Uniform(q) => {
            let evaluation = evaluate_connection(&shift, &conn, spec, &x, trials, seeds.trials)?;
            let mut report = MetricsReport::from_evaluation(replicate, spec, &evaluation);
            report.q = Some(q);
            (evaluation, report)
        }
        Links::Scheduled(_, t_slots) => evaluate_scheduled(
            &shift,
            &conn,
            SchedulerKind::Cdsa,
            t_slots,
            spec,
            &x,
            trials,
            replicate,
            &seeds,
        )?,
    };
    let reference = wsnfilter::filters::apply_fir(shift.matrix(), &spec.target()?, &x)?;
    let mean = GraphSignal::from_vec(evaluation.stats.mean_output.clone())?;
    out.write("input.csv", &x.to_csv())?;
    out.write("reference.csv", &reference.to_csv())?;
    out.write("mean_output.csv", &mean.to_csv())?;
    out.write("coefficients.csv", &evaluation.optimization.coefficients.to_csv())?;
    write_reports(out, std::slice::from_ref(&report))
}

fn write_reports(out: &mut OutDir, reports: &[MetricsReport]) -> Result<(), CliError> {
    out.write("metrics.csv", &reports_to_csv(reports))?;
    out.write_json("metrics.json", &reports)
}

pub fn sweep(ctx: &Context, out: &mut OutDir) -> Result<(), CliError> {
    let config = ctx.config;
    let mut reports = Vec::new();
    for replicate in 0..config.replicates {
        let seeds = ctx.seeds(replicate);
        let topo = ctx.topology(&seeds)?;
        reports.extend(run_accuracy_sweep(
            &topo,
            &config.filter,
            &config.sweep_signal(),
            &config.sweep.q_values,
            config.trial_spec(),
            replicate,
            &seeds,
        )?);
    }
    write_reports(out, &reports)
}

pub fn compare(ctx: &Context, out: &mut OutDir) -> Result<(), CliError> {
    let config = ctx.config;
    let mut reports = Vec::new();
    for replicate in 0..config.replicates {
        let seeds = ctx.seeds(replicate);
        let topo = ctx.topology(&seeds)?;
        let network = config.network(&topo)?;
        let runs = run_scheduler_comparison(
            &topo,
            &network,
            &config.filter,
            &config.signal,
            config.trial_spec(),
            replicate,
            &seeds,
        )?;
        reports.extend(runs.into_iter().map(|r| r.report));
    }
    write_reports(out, &reports)
}

#[derive(Serialize)]
struct DenoiseSummary {
    scheduler: &'static str,
    distance_to_perfect: f64,
}

pub fn denoise(ctx: &Context, replicate: u64, out: &mut OutDir) -> Result<(), CliError> {
    let config = ctx.config;
    let seeds = ctx.seeds(replicate);
    let topo = ctx.topology(&seeds)?;
    let network = config.network(&topo)?;
    let result = run_denoising(
        &topo,
        &network,
        &config.filter,
        &config.signal,
        config.trial_spec(),
        replicate,
        &seeds,
    )?;
    out.write("clean.csv", &result.clean.to_csv())?;
    out.write("noisy.csv", &result.noisy.to_csv())?;
    out.write("perfect_mac.csv", &result.perfect_mac.to_csv())?;
    let mut summary = Vec::new();
    let mut reports = Vec::new();
    for run in result.runs {
        out.write(&format!("denoised_{}.csv", run.scheduler.name()), &run.average_output.to_csv())?;
        summary.push(DenoiseSummary {
            scheduler: run.scheduler.name(),
            distance_to_perfect: run.distance_to_perfect,
        });
        reports.push(run.report);
    }
    out.write_json("denoise.json", &summary)?;
    write_reports(out, &reports)
}
