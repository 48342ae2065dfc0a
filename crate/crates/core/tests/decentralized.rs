use std::collections::HashMap;

use fedban_core::centralized::{run_centralized, theorem_threshold, ProtocolConfig};
use fedban_core::decentralized::{run_decentralized, DecActionEvent, DecObserver, Release};
use fedban_core::environment::EnvConfig;
use fedban_core::linalg::{SymMatrix, Vector};
use fedban_core::network::{self, clique_cover_greedy, power_graph, Flood, Graph, Network};
use fedban_core::privatizer::{plan_noise, NoisePlan, PrivacyBudget};
use proptest::prelude::*;

fn non_private(m: usize, horizon: u64, threshold: f64, gamma: u64, seed: u64) -> ProtocolConfig {
    let mut env = EnvConfig::new(4, m, horizon);
    env.master_seed = seed;
    ProtocolConfig { threshold, plan: NoisePlan::non_private(1.0, m, horizon, Some(gamma)), env, private: false, alpha: 0.1 }
}

fn private(m: usize, horizon: u64, gamma: u64, seed: u64) -> ProtocolConfig {
    let mut env = EnvConfig::new(4, m, horizon);
    env.master_seed = seed;
    let plan = plan_noise(&PrivacyBudget::new(1.0, 0.1, 0.1), horizon, None, Some(gamma), 1.0, 4, m).unwrap();
    let threshold = theorem_threshold(horizon, 4, 1.0, plan.rho_min, plan.rho_max);
    ProtocolConfig { threshold, plan, env, private: true, alpha: 0.1 }
}

/// Receivers of a flood by hop.
fn arrivals(g: &Graph, origin: usize, ttl: usize) -> Vec<Vec<usize>> {
    let mut f = Flood::new((), origin, g.len(), ttl);
    let mut out = Vec::new();
    while f.is_live() {
        out.push(f.advance(g).iter().map(|h| h.receiver).collect());
    }
    out
}

#[test]
fn star_ttl_one_reaches_hub_only() {
    let g = network::star(6);
    assert_eq!(arrivals(&g, 3, 1), vec![vec![0]]);
    assert_eq!(arrivals(&g, 3, 2), vec![vec![0], vec![1, 2, 4, 5]]);
    assert_eq!(arrivals(&g, 0, 1), vec![vec![1, 2, 3, 4, 5]]);
}

#[test]
fn line_ttl_three_arrival_times() {
    let g = network::line(7);
    assert_eq!(arrivals(&g, 0, 3), vec![vec![1], vec![2], vec![3]]);
    assert_eq!(arrivals(&g, 3, 3), vec![vec![2, 4], vec![1, 5], vec![0, 6]]);
}

#[test]
fn ring_flood_delivers_each_agent_once() {
    let g = network::ring(9);
    let got: Vec<usize> = arrivals(&g, 4, 9).into_iter().flatten().collect();
    let mut sorted = got.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted.len(), got.len());
    assert_eq!(got.len(), 8);
}

#[test]
fn line_cover_and_power_graph() {
    let net = Network::new(network::line(6), 2).unwrap();
    assert_eq!(net.cover_size(), 2);
    for c in &net.cliques {
        assert!(net.power.is_clique(c));
    }
    assert!(Network::new(network::line(6), 6).is_err());
    assert!(Network::new(network::line(6), 0).is_err());
}

proptest! {
    #[test]
    fn cover_partitions_into_power_cliques(n in 2usize..14, k in 2usize..5, seed in 0u64..50, gamma in 1usize..4) {
        let k = if (n * k) % 2 == 1 { k + 1 } else { k };
        prop_assume!(k < n);
        let Ok(g) = network::random_regular(n, k, seed) else { return Ok(()); };
        prop_assume!(g.is_connected());
        let p = power_graph(&g, gamma).unwrap();
        let dist = g.distance_matrix().unwrap();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(p.has_edge(i, j), i != j && dist[i][j] <= gamma);
            }
        }
        let cover = clique_cover_greedy(&p);
        let mut seen = vec![false; n];
        for c in &cover {
            prop_assert!(p.is_clique(c));
            for &v in c {
                prop_assert!(!seen[v]);
                seen[v] = true;
            }
        }
        prop_assert!(seen.iter().all(|&s| s));
    }
}

/// Replays each agent's observations per parameter set and checks every
/// noise-free release against `Σ x xᵀ + shift·I`, `Σ y x`.
struct ReleaseOracle {
    gamma: usize,
    shift: f64,
    sums: HashMap<(usize, usize), (SymMatrix<f64>, Vector<f64>)>,
    releases: usize,
    actions: usize,
    max_err: f64,
}

impl DecObserver<f64> for ReleaseOracle {
    fn on_action(&mut self, ev: &DecActionEvent<'_, f64>) {
        assert_eq!(ev.g as u64, ev.t % self.gamma as u64);
        let x = &ev.decision_set.actions[ev.chosen];
        let d = x.dim();
        let e = self.sums.entry((ev.agent, ev.g)).or_insert_with(|| (SymMatrix::zeros(d), Vector::zeros(d)));
        e.0.add_outer_assign(x, 1.0).unwrap();
        e.1.axpy(ev.reward, x);
        self.actions += 1;
    }

    fn on_release(&mut self, _t: u64, agent: usize, g: usize, rel: &Release<f64>) {
        let d = rel.params.reward.dim();
        let (gram, reward) = self.sums.get(&(agent, g)).cloned().unwrap_or((SymMatrix::zeros(d), Vector::zeros(d)));
        let mut want = gram;
        want.add_diagonal(self.shift);
        self.max_err = self.max_err.max(rel.params.gram.max_abs_diff(&want));
        self.max_err = self.max_err.max(rel.params.reward.sub(&reward).norm());
        self.releases += 1;
    }
}

#[test]
fn noise_free_releases_replay_local_sums() {
    for (graph, gamma) in [(network::line(6), 2), (network::ring(7), 3), (network::star(5), 1)] {
        let m = graph.len();
        let net = Network::new(graph, gamma).unwrap();
        let cfg = non_private(m, 600, 3.0, gamma as u64, 9);
        let mut oracle =
            ReleaseOracle { gamma, shift: cfg.plan.shift, sums: HashMap::new(), releases: 0, actions: 0, max_err: 0.0 };
        let out = run_decentralized::<f64, _>(&cfg, &net, 0, 100, &mut oracle).unwrap();
        assert_eq!(oracle.actions, 600 * m);
        assert!(oracle.releases > 0);
        assert!(oracle.max_err < 1e-9, "{}", oracle.max_err);
        assert!(out.audit.is_clean(), "{:?}", out.audit);
        let sent: u64 = out.record.rows.iter().filter(|r| r.t == 600).map(|r| r.messages_sent).sum();
        assert_eq!(sent, out.audit.deliveries);
    }
}

#[test]
fn private_runs_are_audit_clean() {
    let topologies = [
        (network::line(6), 2),
        (network::ring(8), 2),
        (network::complete(5), 1),
        (network::random_regular(10, 3, 4).unwrap(), 2),
    ];
    for (graph, gamma) in topologies {
        let m = graph.len();
        let net = Network::new(graph, gamma).unwrap();
        let mut cfg = private(m, 3000, gamma as u64, 1);
        cfg.threshold *= 0.01;
        let out = run_decentralized::<f64, _>(&cfg, &net, 0, 500, &mut ()).unwrap();
        assert!(out.audit.is_clean(), "{:?}", out.audit);
        assert!(out.audit.sync_checks > 0);
        assert_eq!(out.audit.duplicate_deliveries, 0);
    }
}

#[test]
fn complete_graph_tracks_centralized_without_noise() {
    let net = Network::new(network::complete(4), 1).unwrap();
    let cfg = non_private(4, 2000, 0.0, 1, 3);
    let dec = run_decentralized::<f64, _>(&cfg, &net, 0, 1000, &mut ()).unwrap();
    let cen = run_centralized::<f64, _>(&cfg, 0, 1000, &mut ()).unwrap();
    let (a, b) = (dec.record.group_regret(), cen.group_regret());
    assert!((a - b).abs() <= 0.15 * b, "dec {a} cen {b}");
}

#[test]
fn deterministic_per_seed() {
    let net = Network::new(network::line(5), 2).unwrap();
    let cfg = private(5, 500, 2, 7);
    let a = run_decentralized::<f64, _>(&cfg, &net, 4, 50, &mut ()).unwrap();
    let b = run_decentralized::<f64, _>(&cfg, &net, 4, 50, &mut ()).unwrap();
    assert_eq!(a.record, b.record);
}
