use std::time::Instant;

use scenopt::perf::{
    break_even_star, curves_csv, efficiency_curves, fit_rate, fit_transaction_time, parse_measurements, turning_point,
    PerfParams, Protocol, CLUSTER_RUNS_FIXTURE,
};
use scenopt::runtime::{run_master, run_worker, ScenarioSource, TransportMode};
use scenopt::scenario::{generate_scenarios, ScenarioSet, StrategyParams};
use scenopt::tabu::{self, snap_to_grid, trace_csv, LocalEvaluator, OptimizeResult};
use scenopt::topology::{
    broadcast_schedule, build_optimal_tree, build_ring, build_ring_of_rings, build_star, build_tree,
    parse_ring_spec, ring_exchange_rounds, ClusterLayout, Topology, TopologyKind,
};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::output::{join, open_input, read_input, write_atomic, Report};
use crate::{CliError, GenerateArgs, KindArg, OptimizeArgs, PerfArgs, PlanArgs, ProtocolArg, WorkerArgs};

type CliResult = Result<(), CliError>;

pub fn generate(a: GenerateArgs) -> CliResult {
    let cfg = ExperimentConfig::load(a.config.config.as_deref())?;
    let mut model = cfg.model()?.clone();
    if let Some(seed) = a.seed {
        model.seed = seed;
    }
    let set = generate_scenarios(&model, a.count as usize)?;
    let mut bytes = Vec::new();
    set.write_binary(&mut bytes)?;
    write_atomic(&a.out, &bytes)?;
    if let Some(csv) = &a.csv {
        let mut text = Vec::new();
        set.write_csv(&mut text)?;
        write_atomic(csv, &text)?;
    }
    let mut r = Report::default();
    r.kv("scenarios", set.len())
        .kv("periods", set.periods())
        .kv("indicators", set.indicators())
        .kv("seed", set.seed())
        .kv("config_digest", format!("{:016x}", set.config_digest()))
        .kv("digest", set.data_digest())
        .kv("out", a.out.display());
    r.print();
    Ok(())
}

#[derive(Serialize)]
struct OptimizeReport<'a> {
    mode: String,
    nodes: usize,
    scenarios: usize,
    iterations: usize,
    evaluations: u64,
    exhausted: bool,
    best_weights: &'a [f64],
    best_contribution_rate: f64,
    rebalance: bool,
    best_objective: f64,
    wall_clock_secs: f64,
    timing: Option<&'a scenopt::runtime::TimingReport>,
}

fn initial_point(cfg: &ExperimentConfig, indicators: usize) -> Result<StrategyParams, CliError> {
    let weights = cfg.run.initial_weights.clone().unwrap_or_else(|| vec![1.0 / indicators as f64; indicators]);
    if weights.len() != indicators {
        return Err(CliError::Usage(format!(
            "run.initial_weights has {} entries for {indicators} indicators",
            weights.len()
        )));
    }
    let p = StrategyParams::new(weights, cfg.run.initial_contribution, cfg.run.rebalance)
        .map_err(|e| CliError::Usage(format!("initial point: {e}")))?;
    Ok(snap_to_grid(&p, cfg.tabu.step_size)?)
}

pub fn optimize(a: OptimizeArgs, require_topology: bool) -> CliResult {
    let mut cfg = ExperimentConfig::load(a.config.config.as_deref())?;
    if let Some(n) = a.iterations {
        cfg.tabu.max_iterations = n;
    }
    if let Some(s) = a.seed {
        cfg.tabu.seed = s;
    }
    if let Some(m) = &a.transport {
        cfg.transport.mode = m.parse().map_err(|e: scenopt::Error| CliError::Usage(e.to_string()))?;
    }
    if require_topology && a.topology.is_none() {
        return Err(CliError::Usage("master needs --topology".into()));
    }
    let layout = match &a.topology {
        Some(p) => Some(ClusterLayout::parse(&read_input(p)?).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?),
        None => None,
    };

    let source = match &a.scenarios {
        Some(p) => ScenarioSource::Set(ScenarioSet::read_binary(std::io::BufReader::new(open_input(p)?))?),
        None => {
            let count = a.count.map(|c| c as usize).or(cfg.run.scenarios).ok_or_else(|| {
                CliError::Usage("give --scenarios, --count or run.scenarios in the config".into())
            })?;
            ScenarioSource::Recipe { config: cfg.model()?.clone(), count }
        }
    };
    let indicators = match &source {
        ScenarioSource::Set(s) => s.indicators(),
        ScenarioSource::Recipe { config, .. } => config.indicator_count,
    };
    let initial = initial_point(&cfg, indicators)?;

    let t0 = Instant::now();
    let (result, timing, mode, nodes): (OptimizeResult, _, String, usize) = match layout {
        None => {
            let set = match &source {
                ScenarioSource::Set(s) => s.clone(),
                ScenarioSource::Recipe { config, count } => generate_scenarios(config, *count)?,
            };
            let mut ev = LocalEvaluator::new(&set);
            let r = tabu::optimize(&mut ev, &cfg.tabu, initial)?;
            (r, None, "local".to_string(), 1)
        }
        Some(layout) => {
            let mut transport = cfg.transport.clone();
            transport.endpoints = layout.endpoints.clone();
            let out = run_master(&source, &layout.topology, &cfg.tabu, initial, &transport)?;
            (out.result, Some(out.report), transport.mode.to_string(), layout.topology.node_count())
        }
    };
    let wall = t0.elapsed().as_secs_f64();
    let evaluations = timing.as_ref().map_or(0, |t| t.evaluations as u64);

    let report = OptimizeReport {
        mode: mode.clone(),
        nodes,
        scenarios: source.len(),
        iterations: result.iterations(),
        evaluations,
        exhausted: result.exhausted,
        best_weights: &result.best.weights,
        best_contribution_rate: result.best.contribution_rate,
        rebalance: result.best.rebalance,
        best_objective: result.best_objective,
        wall_clock_secs: wall,
        timing: timing.as_ref(),
    };
    if let Some(p) = &a.report {
        let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?;
        write_atomic(p, json.as_bytes())?;
    }
    if let Some(p) = &a.trace {
        write_atomic(p, trace_csv(&result.trace).as_bytes())?;
    }

    let mut r = Report::default();
    r.kv("mode", &mode)
        .kv("nodes", nodes)
        .kv("scenarios", source.len())
        .kv("iterations", result.iterations())
        .kv("exhausted", result.exhausted)
        .kv("best_weights", join(&result.best.weights))
        .kv("best_contribution_rate", result.best.contribution_rate)
        .kv("best_objective", format!("{:.17e}", result.best_objective))
        .kv("wall_clock_secs", format!("{wall:.3}"));
    if let Some(t) = &timing {
        r.kv("evaluations", t.evaluations)
            .kv("transfers_assign", t.counts.assign)
            .kv("transfers_eval", t.counts.eval)
            .kv("transfers_result", t.counts.result)
            .kv("transfers_shutdown", t.counts.shutdown)
            .kv("retransmissions", t.counts.retransmissions)
            .kv("slower_than_single", t.slower_than_single);
        if let Some(v) = t.assign_virtual_time {
            r.kv("assign_virtual_time", v);
        }
        if let Some(v) = t.eval_virtual_times.first() {
            r.kv("eval_virtual_time", v);
        }
        if let Some(v) = t.single_machine_time {
            r.kv("single_machine_time", v);
        }
    }
    r.print();
    Ok(())
}

pub fn worker(a: WorkerArgs) -> CliResult {
    let mut cfg = ExperimentConfig::load(a.config.config.as_deref())?;
    if let Some(m) = &a.transport {
        cfg.transport.mode = m.parse().map_err(|e: scenopt::Error| CliError::Usage(e.to_string()))?;
    }
    if !matches!(cfg.transport.mode, TransportMode::Tcp | TransportMode::Udp) {
        return Err(CliError::Usage("workers need a tcp or udp transport".into()));
    }
    let layout = ClusterLayout::parse(&read_input(&a.topology)?)
        .map_err(|e| CliError::Usage(format!("{}: {e}", a.topology.display())))?;
    if a.id == 0 || a.id >= layout.topology.node_count() {
        return Err(CliError::Usage(format!("--id must be in 1..{}", layout.topology.node_count())));
    }
    let mut transport = cfg.transport.clone();
    transport.endpoints = layout.endpoints.clone();
    let rep = run_worker(&layout.topology, &transport, a.id)?;
    let mut r = Report::default();
    r.kv("node", rep.node)
        .kv("scenarios", rep.scenarios)
        .kv("evaluations", rep.evaluations)
        .kv("retransmissions", rep.counts.retransmissions);
    r.print();
    Ok(())
}

fn parse_break_even(s: &str) -> Result<(f64, f64), CliError> {
    let (t, tt) = s.split_once(':').ok_or_else(|| CliError::Usage(format!("--break-even `{s}` is not TIME:TT")))?;
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| CliError::Usage(format!("--break-even `{s}`: {e}")));
    Ok((parse(t)?, parse(tt)?))
}

pub fn perf(a: PerfArgs) -> CliResult {
    let text = match &a.measurements {
        Some(p) => read_input(p)?,
        None => CLUSTER_RUNS_FIXTURE.to_string(),
    };
    let queries = a.break_even.iter().map(|s| parse_break_even(s)).collect::<Result<Vec<_>, _>>()?;
    let rows = parse_measurements(&text)?;
    let fits = fit_transaction_time(&rows, &rows)?;
    let rate = match a.rate {
        Some(r) => r,
        None => fit_rate(&rows)?,
    };

    let mut r = Report::default();
    r.kv("source", a.measurements.as_ref().map_or("bundled".to_string(), |p| p.display().to_string()))
        .kv("per_scenario_time", format!("{rate:.6}"));
    for f in &fits {
        let p = f.protocol;
        r.kv(&format!("tt_{p}"), format!("{:.4}", f.transaction_time))
            .kv(&format!("spread_{p}"), format!("{:.4}", f.max_relative_spread))
            .kv(&format!("rows_{p}"), f.rows.len());
        for row in &f.rows {
            r.line(format_args!(
                "fit_row protocol={p} scen={} machines={} duration={} baseline={:.4} per_machine={:.4}",
                row.row.scenario_count, row.row.machine_count, row.row.duration, row.baseline, row.per_machine
            ));
        }
    }

    let protocol = match a.protocol {
        ProtocolArg::Tcp => Protocol::Tcp,
        ProtocolArg::Udp => Protocol::Udp,
    };
    let tt = match a.tt {
        Some(t) => t,
        None => fits
            .iter()
            .find(|f| f.protocol == protocol)
            .map(|f| f.transaction_time)
            .ok_or_else(|| CliError::Runtime(format!("no {protocol} rows to fit")))?,
    };
    r.kv("curve_protocol", protocol).kv("curve_tt", format!("{tt:.4}"));

    for &scen in &a.scen {
        let single = rate * scen as f64;
        let m = break_even_star(single, tt)?;
        r.line(format_args!("break_even scen={scen} single_time={single:.4} tt={tt:.4} machines={m}"));
    }
    for (t, q) in queries {
        r.line(format_args!("break_even time={t} tt={q} machines={}", break_even_star(t, q)?));
    }

    let params = PerfParams::new(rate, tt.max(0.0), 1)?;
    let curves = efficiency_curves(&a.scen, 1..=a.max_machines.max(1), &params)?;
    for &scen in &a.scen {
        let star = turning_point(&curves, TopologyKind::Star, scen);
        let tree_increases = curves.iter().any(|c| c.topology == TopologyKind::OptimalTree && c.scen == scen && c.increases);
        r.kv(&format!("star_turning_point_{scen}"), star.map_or("none".to_string(), |m| m.to_string()))
            .kv(&format!("optimal_tree_non_increasing_{scen}"), !tree_increases);
    }
    if let Some(p) = &a.curves {
        write_atomic(p, curves_csv(&curves).as_bytes())?;
        r.kv("curves", p.display());
    }
    r.print();
    Ok(())
}

fn build_topology(a: &PlanArgs) -> Result<Topology, CliError> {
    let size = || match a.size {
        Some(0) | None => Err(CliError::Usage(format!("{:?} needs --size of at least 1", a.kind))),
        Some(n) => Ok(n),
    };
    let usage = |e: scenopt::Error| CliError::Usage(e.to_string());
    Ok(match a.kind {
        KindArg::Star => build_star(size()?),
        KindArg::Optimal => build_optimal_tree(size()?),
        KindArg::Ring => build_ring(size()?).map_err(usage)?,
        KindArg::Tree => {
            if a.fanouts.is_empty() {
                return Err(CliError::Usage("tree needs --fanouts, e.g. 3,2".into()));
            }
            build_tree(&a.fanouts).map_err(usage)?
        }
        KindArg::RingOfRings => {
            let spec = a.spec.as_deref().ok_or_else(|| CliError::Usage("ring-of-rings needs --spec".into()))?;
            build_ring_of_rings(&parse_ring_spec(spec).map_err(usage)?).map_err(usage)?
        }
    })
}

pub fn topology_plan(a: PlanArgs) -> CliResult {
    let t = build_topology(&a)?;
    let degrees = t.degrees();
    let mut r = Report::default();
    r.kv("kind", t.kind())
        .kv("nodes", t.node_count())
        .kv("edges", t.edges().len())
        .kv("degrees", join(&degrees))
        .kv("max_degree", degrees.iter().max().copied().unwrap_or(0));
    if let Some(p) = &a.edges {
        write_atomic(p, t.edge_list_csv().as_bytes())?;
    }
    if t.root().is_some() {
        let s = broadcast_schedule(&t)?;
        r.line(format_args!("rounds: {}", s.round_count()));
        for (i, round) in s.rounds.iter().enumerate() {
            let sends: Vec<String> = round.iter().map(|(a, b)| format!("{a}->{b}")).collect();
            r.line(format_args!("round {}: {}", i + 1, sends.join(" ")));
        }
        if let Some(p) = &a.schedule {
            write_atomic(p, s.to_csv().as_bytes())?;
        }
        if let Some(p) = &a.layout {
            let layout = ClusterLayout::loopback(t.clone(), a.base_port)?;
            write_atomic(p, layout.to_text().as_bytes())?;
        }
    } else {
        if a.schedule.is_some() || a.layout.is_some() {
            return Err(CliError::Usage(format!("{} has no root: no broadcast schedule or layout", t.kind())));
        }
        if t.kind() == TopologyKind::Ring {
            let rounds = ring_exchange_rounds(&t)?;
            r.line(format_args!("exchange_rounds: {}", rounds.len()));
            for (i, round) in rounds.iter().enumerate() {
                let sends: Vec<String> = round.iter().map(|(a, b)| format!("{a}->{b}")).collect();
                r.line(format_args!("round {}: {}", i + 1, sends.join(" ")));
            }
        }
    }
    r.print();
    Ok(())
}
