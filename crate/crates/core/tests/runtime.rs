use std::net::TcpListener;
use std::thread;

use scenopt::partition::balance;
use scenopt::perf::ceil_log2;
use scenopt::runtime::{
    free_loopback_endpoints, run_master, run_worker, DistributedEvaluator, MediaLayout, ScenarioSource, SimNetwork,
    TransportConfig, TransportMode,
};
use scenopt::scenario::{generate_scenarios, EconomicModelConfig, StrategyParams};
use scenopt::stats::{objective, summarize};
use scenopt::tabu::{optimize, snap_to_grid, Evaluator, LocalEvaluator, TabuConfig};
use scenopt::topology::{build_optimal_tree, build_star, build_tree, Topology};
use scenopt::Error;

fn model(seed: u64) -> EconomicModelConfig {
    EconomicModelConfig {
        indicator_count: 3,
        period_count: 6,
        drift: vec![0.004, 0.012, 0.008],
        covariance: vec![vec![0.002, 0.0005, 0.0], vec![0.0005, 0.01, 0.001], vec![0.0, 0.001, 0.004]],
        initial_levels: vec![1.0, 1.0, 1.0],
        seed,
    }
}

fn recipe(n: usize) -> ScenarioSource {
    ScenarioSource::Recipe { config: model(21), count: n }
}

fn tabu() -> TabuConfig {
    TabuConfig { max_iterations: 12, tabu_tenure: 4, step_size: 0.1, risk_aversion: 0.5, ..Default::default() }
}

fn initial() -> StrategyParams {
    snap_to_grid(&StrategyParams::equal_weight(3), 0.1).unwrap()
}

fn local_run(n: usize) -> scenopt::tabu::OptimizeResult {
    let set = generate_scenarios(&model(21), n).unwrap();
    optimize(&mut LocalEvaluator::new(&set), &tabu(), initial()).unwrap()
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn sim_round_time(topology: &Topology, n: usize, latency: f64, rate: f64) -> f64 {
    let cfg = TransportConfig::sim(latency, rate);
    let mut ev = DistributedEvaluator::start(&recipe(n), topology, &cfg).unwrap();
    ev.evaluate(&initial(), 0.0).unwrap();
    ev.evaluate(&initial(), 0.0).unwrap();
    let r = ev.report();
    assert_eq!(r.eval_virtual_times[0], r.eval_virtual_times[1]);
    r.eval_virtual_times[0]
}

#[test]
fn star_round_is_slaves_times_transaction_plus_compute() {
    let (latency, rate, per_node) = (0.5, 0.25, 4);
    let tt = 2.0 * latency;
    for m in 2..=16 {
        let nodes = m + 1;
        let t = sim_round_time(&build_star(nodes), nodes * per_node, latency, rate);
        assert_eq!(t, m as f64 * tt + rate * per_node as f64, "m = {m}");
    }
}

#[test]
fn binomial_round_is_log_transactions_plus_compute() {
    let (latency, rate, per_node) = (0.5, 0.25, 4);
    let tt = 2.0 * latency;
    for m in 2..=16 {
        let t = sim_round_time(&build_optimal_tree(m), m * per_node, latency, rate);
        assert_eq!(t, ceil_log2(m) as f64 * tt + rate * per_node as f64, "m = {m}");
    }
}

fn assign_rounds(topology: &Topology, bus: bool, media: MediaLayout) -> f64 {
    let cfg = TransportConfig { bus_constraint: bus, media, ..TransportConfig::sim(1.0, 0.0) };
    let mut sim = SimNetwork::new(topology, &cfg).unwrap();
    sim.assign(recipe(topology.node_count() * 2).assignment(topology.node_count()).unwrap()).unwrap()
}

#[test]
fn assign_phase_round_counts() {
    // Star of one master and nine slaves on a shared bus: nine sends.
    assert_eq!(assign_rounds(&build_star(10), true, MediaLayout::Shared), 9.0);
    // Two-level tree, three second-level masters with two slaves each, one
    // subnet per branch: three rounds.
    let two_level = build_tree(&[3, 2]).unwrap();
    assert_eq!(two_level.node_count(), 10);
    assert_eq!(assign_rounds(&two_level, true, MediaLayout::Subnets), 3.0);
    assert_eq!(assign_rounds(&two_level, true, MediaLayout::Shared), 9.0);
    // Binomial tree of sixteen, no bus constraint: four rounds.
    assert_eq!(assign_rounds(&build_optimal_tree(16), false, MediaLayout::Shared), 4.0);
}

#[test]
fn six_nodes_hold_a_thousand_each() {
    let t = build_star(6);
    let mut sim = SimNetwork::new(&t, &TransportConfig::sim(1.0, 0.0)).unwrap();
    sim.assign(recipe(6000).assignment(6).unwrap()).unwrap();
    for n in 0..6 {
        assert_eq!(sim.core(n).range().len(), 1000);
        assert_eq!(sim.core(n).range(), n * 1000..(n + 1) * 1000);
    }
}

#[test]
fn distributed_objective_matches_sequential() {
    let n = 2000;
    let set = generate_scenarios(&model(21), n).unwrap();
    let params = StrategyParams::new(vec![0.2, 0.5, 0.3], 0.1, true).unwrap();
    let local = objective(summarize(&scenopt::scenario::evaluate_set(&params, &set, None).unwrap().values), 0.7).unwrap();
    let topologies = [
        build_star(5),
        build_tree(&[2, 2]).unwrap(),
        build_optimal_tree(16),
        build_optimal_tree(11),
        build_star(1),
    ];
    for t in &topologies {
        let mut ev = DistributedEvaluator::start(&recipe(n), t, &TransportConfig::sim(1.0, 0.0)).unwrap();
        let d = ev.evaluate(&params, 0.7).unwrap();
        assert!(rel_close(d.objective, local.objective, 1e-12), "{} nodes", t.node_count());
        assert!(rel_close(d.stdev, local.stdev, 1e-9));
    }
}

#[test]
fn raw_blocks_match_recipe() {
    let n = 300;
    let set = generate_scenarios(&model(21), n).unwrap();
    let t = build_tree(&[2, 2]).unwrap();
    let cfg = TransportConfig::sim(1.0, 0.0);
    let params = initial();
    let a = DistributedEvaluator::start(&recipe(n), &t, &cfg).unwrap().evaluate(&params, 0.2).unwrap();
    let b = DistributedEvaluator::start(&ScenarioSource::Set(set), &t, &cfg).unwrap().evaluate(&params, 0.2).unwrap();
    assert_eq!(a, b);
}

#[test]
fn sim_trajectory_equals_local() {
    let n = 800;
    let local = local_run(n);
    for nodes in 1..=8 {
        for t in [build_star(nodes), build_optimal_tree(nodes)] {
            let out = run_master(&recipe(n), &t, &tabu(), initial(), &TransportConfig::sim(1.0, 0.001)).unwrap();
            assert_eq!(out.result.visited, local.visited, "{nodes} nodes");
            assert!(rel_close(out.result.best_objective, local.best_objective, 1e-12));
            assert_eq!(out.report.evaluations as usize, out.report.eval_virtual_times.len());
        }
    }
}

#[test]
fn lossy_udp_simulation_matches_clean_run() {
    let n = 400;
    let t = build_star(4);
    let clean = TransportConfig { mode: TransportMode::SimUdp, ..Default::default() };
    let lossy = TransportConfig { drop_every: Some(5), ..clean.clone() };
    let a = run_master(&recipe(n), &t, &tabu(), initial(), &clean).unwrap();
    let b = run_master(&recipe(n), &t, &tabu(), initial(), &lossy).unwrap();
    assert_eq!(a.result.best_objective, b.result.best_objective);
    assert_eq!(a.result.visited, b.result.visited);
    assert!(b.report.counts.dropped > 0);
    assert!(b.report.counts.retransmissions > 0);
    assert_eq!(a.report.counts.retransmissions, 0);
}

#[test]
fn slower_than_single_is_flagged() {
    // Communication dominates: 10 scenarios at 0.01, latency 5.
    let mut ev = DistributedEvaluator::start(&recipe(10), &build_star(2), &TransportConfig::sim(5.0, 0.01)).unwrap();
    ev.evaluate(&initial(), 0.0).unwrap();
    assert!(ev.report().slower_than_single);
    let mut ev = DistributedEvaluator::start(&recipe(1000), &build_star(2), &TransportConfig::sim(0.01, 1.0)).unwrap();
    ev.evaluate(&initial(), 0.0).unwrap();
    assert!(!ev.report().slower_than_single);
}

fn socket_cluster(mode: TransportMode, topology: Topology, drop_every: Option<u32>) -> scenopt::runtime::MasterOutcome {
    let endpoints = free_loopback_endpoints(topology.node_count()).unwrap();
    let cfg = TransportConfig { mode, endpoints, drop_every, result_timeout_ms: Some(60_000), ..Default::default() };
    let workers: Vec<_> = (1..topology.node_count())
        .map(|id| {
            let (t, c) = (topology.clone(), cfg.clone());
            thread::spawn(move || run_worker(&t, &c, id))
        })
        .collect();
    let out = run_master(&recipe(600), &topology, &tabu(), initial(), &cfg).unwrap();
    for w in workers {
        let report = w.join().unwrap().unwrap();
        assert_eq!(report.evaluations, out.report.evaluations);
    }
    out
}

#[test]
fn tcp_loopback_trajectory_equals_local() {
    let local = local_run(600);
    let out = socket_cluster(TransportMode::Tcp, build_star(4), None);
    assert_eq!(out.result.visited, local.visited);
    assert!(rel_close(out.result.best_objective, local.best_objective, 1e-12));
    assert!(out.report.counts.eval > 0);
}

#[test]
fn tcp_loopback_two_level_tree() {
    let local = local_run(600);
    let out = socket_cluster(TransportMode::Tcp, build_tree(&[2, 2]).unwrap(), None);
    assert_eq!(out.result.visited, local.visited);
}

#[test]
fn udp_loopback_survives_drops() {
    let local = local_run(600);
    let out = socket_cluster(TransportMode::Udp, build_star(3), Some(5));
    assert_eq!(out.result.visited, local.visited);
    assert!(rel_close(out.result.best_objective, local.best_objective, 1e-12));
}

#[test]
fn unreachable_worker_names_endpoint() {
    let endpoints = free_loopback_endpoints(2).unwrap();
    let cfg = TransportConfig {
        mode: TransportMode::Tcp,
        endpoints: endpoints.clone(),
        connect_timeout_ms: 200,
        ..Default::default()
    };
    let err = DistributedEvaluator::start(&recipe(10), &build_star(2), &cfg).err().unwrap();
    match err {
        Error::Unreachable { endpoint, .. } => assert_eq!(endpoint, endpoints[1]),
        other => panic!("{other}"),
    }
}

#[test]
fn silent_worker_times_out() {
    let endpoints = free_loopback_endpoints(2).unwrap();
    let listener = TcpListener::bind(&endpoints[1]).unwrap();
    let silent = thread::spawn(move || {
        let (mut s, _) = listener.accept().unwrap();
        let mut sink = Vec::new();
        let _ = std::io::Read::read_to_end(&mut s, &mut sink);
    });
    let cfg = TransportConfig { mode: TransportMode::Tcp, endpoints, result_timeout_ms: Some(200), ..Default::default() };
    let mut ev = DistributedEvaluator::start(&recipe(10), &build_star(2), &cfg).unwrap();
    let err = ev.evaluate(&initial(), 0.0).unwrap_err();
    assert!(matches!(err, Error::ResultTimeout { iteration: 1, node: 1 }), "{err}");
    drop(ev);
    silent.join().unwrap();
}

#[test]
fn sim_modes_have_no_worker_process() {
    let err = run_worker(&build_star(2), &TransportConfig::default(), 1).unwrap_err();
    assert!(matches!(err, Error::Validation(_)));
    assert!(run_worker(&build_star(2), &TransportConfig::default(), 0).is_err());
}

#[test]
fn too_many_nodes_for_scenarios() {
    assert!(DistributedEvaluator::start(&recipe(3), &build_star(4), &TransportConfig::default()).is_err());
    assert_eq!(balance(3, 3).unwrap().sizes(), vec![1, 1, 1]);
}
