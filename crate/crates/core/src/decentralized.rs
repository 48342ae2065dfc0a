//! Decentralized federated LinUCB over a peer-to-peer graph.
//!
//! Each agent keeps `γ` round-robin parameter sets and uses set `t mod γ` at
//! trial `t`. Synchronization is scoped to the agent's clique in the power
//! graph `G_γ`: a firing agent floods a sync request and its own private
//! release; clique members answer with theirs. Messages travel one hop per
//! trial and die after `γ` hops.
//!
//! An agent's group view for set `g` is the sum over its clique of the
//! newest release received from each member; members not yet heard from
//! contribute `ρ_min I`.
//!
//! Within a trial: the network advances one hop and deliveries are handled
//! (sorted by origin, set, send time), then agents act, then new floods are
//! launched.

use std::rc::Rc;

use crate::centralized::{compose, compute_beta, local_update, select_action, AgentState, ComposedParams, ProtocolConfig};
use crate::environment::{DecisionSet, Environment, GroundTruth};
use crate::error::ProtocolError;
use crate::linalg::{SymMatrix, Vector};
use crate::network::{Flood, Network};
use crate::privatizer::{privatize_output, NoiseTree, PrivateRelease};
use crate::record::{checkpoint_trials, CheckpointRow, RunMeta, RunRecord};
use crate::rng::{self, Purpose};
use crate::scalar::Scalar;

/// `g = t mod γ`.
pub fn subsample_index(t: u64, gamma: usize) -> usize {
    (t % gamma.max(1) as u64) as usize
}

/// Fires when `ln det(V + xxᵀ + M(ρ_max − ρ_min)I) − ln det S ≥ D / ((Δt + 1)(1 + L²))`.
pub fn dec_sync_check<T: Scalar>(
    st: &AgentState<T>,
    v: &SymMatrix<T>,
    x: &Vector<T>,
    cfg: &ProtocolConfig,
) -> Result<bool, ProtocolError> {
    if cfg.threshold <= 0.0 {
        return Ok(true);
    }
    if cfg.threshold.is_infinite() {
        return Ok(false);
    }
    let gap = crate::centralized::logdet_gap(st, v, x, cfg)?.to_f64_lossy();
    let l2 = cfg.env.action_bound * cfg.env.action_bound;
    Ok(gap >= cfg.threshold / ((st.since_sync + 1) as f64 * (1.0 + l2)))
}

/// A private release tagged with its sender and trial.
#[derive(Debug, Clone)]
pub struct Release<T> {
    pub origin: usize,
    pub t: u64,
    pub params: PrivateRelease<T>,
}

#[derive(Debug, Clone)]
pub enum Message<T> {
    SyncRequest { origin: usize, g: usize, t_sent: u64 },
    ParamBroadcast { g: usize, release: Rc<Release<T>> },
}

impl<T> Message<T> {
    pub fn origin(&self) -> usize {
        match self {
            Message::SyncRequest { origin, .. } => *origin,
            Message::ParamBroadcast { release, .. } => release.origin,
        }
    }

    pub fn g(&self) -> usize {
        match self {
            Message::SyncRequest { g, .. } | Message::ParamBroadcast { g, .. } => *g,
        }
    }

    pub fn t_sent(&self) -> u64 {
        match self {
            Message::SyncRequest { t_sent, .. } => *t_sent,
            Message::ParamBroadcast { release, .. } => release.t,
        }
    }

    fn sort_key(&self) -> (usize, usize, u64, u8) {
        let kind = match self {
            Message::SyncRequest { .. } => 0,
            Message::ParamBroadcast { .. } => 1,
        };
        (self.origin(), self.g(), self.t_sent(), kind)
    }
}

/// One parameter set `g` of one agent.
#[derive(Debug, Clone)]
pub struct ParamSet<T> {
    pub state: AgentState<T>,
    /// Newest release received from each clique member, by member position.
    pub latest: Vec<Option<Rc<Release<T>>>>,
    /// Trial of this agent's own newest release for this set.
    pub last_release: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct DecAgentState<T> {
    pub id: usize,
    /// Clique members in ascending order; `latest` is indexed the same way.
    pub members: Vec<usize>,
    pub sets: Vec<ParamSet<T>>,
    pub releases: u64,
}

impl<T: Scalar> DecAgentState<T> {
    fn member_pos(&self, agent: usize) -> Option<usize> {
        self.members.binary_search(&agent).ok()
    }

    /// `S_g = Σ_j Û_j`, `s_g = Σ_j û_j` over clique members in id order.
    fn recompute_view(&mut self, g: usize, rho_min: f64) -> Result<(), ProtocolError> {
        let set = &mut self.sets[g];
        let d = set.state.dim();
        let mut gram = SymMatrix::zeros(d);
        let mut reward = Vector::zeros(d);
        for entry in &set.latest {
            match entry {
                Some(rel) => {
                    gram.add_assign(&rel.params.gram);
                    reward.axpy(T::one(), &rel.params.reward);
                }
                None => gram.add_diagonal(T::lit(rho_min)),
            }
        }
        set.state.set_synced(gram, reward)?;
        Ok(())
    }
}

/// Everything an observer sees about one agent's action.
pub struct DecActionEvent<'a, T> {
    /// 1-based trial.
    pub t: u64,
    pub agent: usize,
    pub g: usize,
    pub params: &'a ComposedParams<T>,
    pub decision_set: &'a DecisionSet<T>,
    pub chosen: usize,
    pub reward: T,
    pub regret: T,
    pub truth: &'a GroundTruth<T>,
    pub fired: bool,
}

pub trait DecObserver<T> {
    fn on_action(&mut self, _ev: &DecActionEvent<'_, T>) {}
    /// Agent `agent` released set `g` on trial `t`.
    fn on_release(&mut self, _t: u64, _agent: usize, _g: usize, _release: &Release<T>) {}
    /// Called after deliveries are handled on trial `t`, before agents act.
    fn on_trial_start(&mut self, _t: u64, _agents: &[DecAgentState<T>]) {}
}

impl<T> DecObserver<T> for () {}

/// Protocol invariants checked while the run executes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Audit {
    /// Sync requests whose `2γ` deadline fell inside the horizon.
    pub sync_checks: u64,
    /// Of those, checks where no clique release was in flight at the deadline
    /// so views had to be bitwise identical.
    pub strict_sync_checks: u64,
    pub sync_violations: Vec<String>,
    pub ttl_violations: Vec<String>,
    pub cross_clique_violations: Vec<String>,
    pub subsample_violations: Vec<String>,
    pub duplicate_deliveries: u64,
    pub deliveries: u64,
}

impl Audit {
    pub fn is_clean(&self) -> bool {
        self.sync_violations.is_empty()
            && self.ttl_violations.is_empty()
            && self.cross_clique_violations.is_empty()
            && self.subsample_violations.is_empty()
            && self.duplicate_deliveries == 0
    }
}

#[derive(Debug, Clone)]
pub struct DecOutcome<T> {
    pub record: RunRecord,
    pub audit: Audit,
    pub agents: Vec<DecAgentState<T>>,
}

struct PendingCheck {
    origin: usize,
    g: usize,
    t_sent: u64,
}

/// Per-clique view of the protocol config: `M` is the clique size.
fn clique_config(cfg: &ProtocolConfig, size: usize) -> ProtocolConfig {
    let mut c = cfg.clone();
    c.env.agents = size;
    c
}

fn init_agents<T: Scalar>(cfg: &ProtocolConfig, net: &Network, run_id: u64) -> Result<Vec<DecAgentState<T>>, ProtocolError> {
    let d = cfg.env.d;
    let gamma = net.gamma;
    let mut agents = Vec::with_capacity(net.agents());
    for i in 0..net.agents() {
        let members = net.cliques[net.clique_of[i]].clone();
        let c = members.len();
        let sets = (0..gamma)
            .map(|g| {
                let mut r = rng::stream(cfg.env.master_seed, Purpose::TreeNoise, run_id, i as u64, g as u64);
                let tree = NoiseTree::new(&cfg.plan, d, &mut r);
                ParamSet { state: AgentState::new(d, c, &cfg.plan, tree), latest: vec![None; c], last_release: None }
            })
            .collect();
        let mut a = DecAgentState { id: i, members, sets, releases: 0 };
        for g in 0..gamma {
            a.recompute_view(g, cfg.plan.rho_min)?;
        }
        agents.push(a);
    }
    Ok(agents)
}

/// Inserts the staged block of set `g`, privatizes, records the release as
/// the agent's own newest contribution and clears local deltas.
fn release<T: Scalar>(a: &mut DecAgentState<T>, g: usize, t: u64, cfg: &ProtocolConfig) -> Result<Rc<Release<T>>, ProtocolError> {
    let d = cfg.env.d;
    let pos = a.member_pos(a.id).expect("agent belongs to its own clique");
    let set = &mut a.sets[g];
    let cached = set.latest[pos].clone();
    let rel = match cached {
        // Nothing new since the last release: resend it without touching the tree.
        Some(prev) if set.state.staged.staged_trials == 0 => Rc::new(Release { origin: a.id, t, params: prev.params.clone() }),
        _ => {
            set.state.tree.insert(&set.state.staged)?;
            let params = privatize_output(&set.state.tree, &cfg.plan, d)?;
            Rc::new(Release { origin: a.id, t, params })
        }
    };
    set.latest[pos] = Some(rel.clone());
    set.last_release = Some(t);
    set.state.reset_local();
    a.releases += 1;
    a.recompute_view(g, cfg.plan.rho_min)?;
    Ok(rel)
}

struct InFlight<T> {
    flood: Flood<Message<T>>,
}

/// Runs `T` trials of decentralized FedUCB on `net`.
pub fn run_decentralized<T: Scalar, O: DecObserver<T>>(
    cfg: &ProtocolConfig,
    net: &Network,
    run_id: u64,
    checkpoint_every: u64,
    observer: &mut O,
) -> Result<DecOutcome<T>, ProtocolError> {
    cfg.validate()?;
    let m = cfg.env.agents;
    if net.agents() != m {
        return Err(ProtocolError::InvalidConfig(format!("network has {} agents, config has {m}", net.agents())));
    }
    let gamma = net.gamma;
    let horizon = cfg.env.horizon;
    let env: Environment<T> = Environment::new(cfg.env.clone(), run_id)?;
    let mut agents = init_agents::<T>(cfg, net, run_id)?;
    let clique_cfgs: Vec<ProtocolConfig> = net.cliques.iter().map(|c| clique_config(cfg, c.len())).collect();

    let checkpoints = checkpoint_trials(horizon, checkpoint_every);
    let mut next_cp = 0;
    let mut record = RunRecord {
        run_id,
        meta: RunMeta {
            seed: cfg.env.master_seed,
            cover_size: Some(net.cover_size()),
            noise_seeds: agents.iter().flat_map(|a| a.sets.iter().map(|s| s.state.tree.noise_seed())).collect(),
            ..RunMeta::default()
        },
        ..RunRecord::default()
    };
    let mut audit = Audit::default();
    let mut cum_regret = vec![0.0f64; m];
    let mut messages = vec![0u64; m];
    let mut requests = 0u64;
    let mut in_flight: Vec<InFlight<T>> = Vec::new();
    let mut pending: Vec<PendingCheck> = Vec::new();
    // (clique, g, t, agent) of every recent release, for deciding whether a 2γ check is strict.
    let mut release_log: Vec<(usize, usize, u64, usize)> = Vec::new();
    let mut seen: std::collections::HashSet<(usize, usize, u64, u8, usize)> = std::collections::HashSet::new();
    let mut beta0 = 0.0;

    for t in 1..=horizon {
        // Advance every live flood by one hop.
        let mut inbox: Vec<(usize, Message<T>)> = Vec::new();
        for f in in_flight.iter_mut() {
            for hop in f.flood.advance(&net.graph) {
                messages[hop.sender] += 1;
                audit.deliveries += 1;
                inbox.push((hop.receiver, f.flood.payload.clone()));
            }
        }
        in_flight.retain(|f| f.flood.is_live());
        inbox.sort_by_key(|(recv, msg)| (msg.sort_key(), *recv));

        // Apply parameter broadcasts first, then answer requests.
        let mut responded: Vec<Vec<bool>> = vec![vec![false; gamma]; m];
        let mut outgoing: Vec<(usize, Message<T>)> = Vec::new();
        for pass in 0..2 {
            for (recv, msg) in &inbox {
                let (recv, origin, g, t_sent) = (*recv, msg.origin(), msg.g(), msg.t_sent());
                if pass == 0 {
                    let key = (origin, g, t_sent, msg.sort_key().3, recv);
                    if !seen.insert(key) {
                        audit.duplicate_deliveries += 1;
                    }
                    if net.dist[origin][recv] > gamma {
                        audit.ttl_violations.push(format!("t={t}: {origin}->{recv} at distance {}", net.dist[origin][recv]));
                    }
                }
                if !net.same_clique(origin, recv) || t_sent + (gamma as u64) < t {
                    continue;
                }
                let a = &mut agents[recv];
                match (pass, msg) {
                    (0, Message::ParamBroadcast { release: rel, .. }) => {
                        if !a.members.contains(&rel.origin) {
                            audit.cross_clique_violations.push(format!("t={t}: {} applied to {recv}", rel.origin));
                        }
                        let pos = a.member_pos(origin).expect("same clique");
                        let newer = a.sets[g].latest[pos].as_ref().is_none_or(|old| old.t < rel.t);
                        if newer {
                            a.sets[g].latest[pos] = Some(rel.clone());
                            a.recompute_view(g, cfg.plan.rho_min)?;
                        }
                    }
                    (1, Message::SyncRequest { .. }) => {
                        let stale = a.sets[g].last_release.is_none_or(|r| r < t_sent);
                        if stale && !responded[recv][g] {
                            responded[recv][g] = true;
                            let rel = release(a, g, t, cfg)?;
                            release_log.push((net.clique_of[recv], g, t, recv));
                            observer.on_release(t, recv, g, &rel);
                            outgoing.push((recv, Message::ParamBroadcast { g, release: rel }));
                        }
                    }
                    _ => {}
                }
            }
        }

        // 2γ synchronization audit for requests whose deadline is now.
        for chk in pending.iter().filter(|c| c.t_sent + 2 * gamma as u64 == t) {
            audit.sync_checks += 1;
            let clique = net.clique_of[chk.origin];
            let members = &net.cliques[clique];
            let lo = chk.t_sent + gamma as u64;
            let strict = !release_log.iter().any(|&(c, g, rt, _)| c == clique && g == chk.g && rt > lo && rt <= t);
            // Every member must hold, from every member, a release made no
            // earlier than the request and no older than that member's newest
            // release up to t_sent + γ.
            for (pos, &j) in members.iter().enumerate() {
                let want = release_log
                    .iter()
                    .filter(|&&(_, g, rt, who)| who == j && g == chk.g && rt >= chk.t_sent && rt <= lo)
                    .map(|&(_, _, rt, _)| rt)
                    .max();
                for &k in members {
                    let held = agents[k].sets[chk.g].latest[pos].as_ref().map(|r| r.t);
                    let ok = match (want, held) {
                        (Some(w), Some(h)) => h >= w,
                        _ => false,
                    };
                    if !ok {
                        audit.sync_violations.push(format!(
                            "request ({}, g={}, t={}): agent {k} holds {held:?} from agent {j}, needs {want:?}",
                            chk.origin, chk.g, chk.t_sent
                        ));
                    }
                }
            }
            if strict {
                audit.strict_sync_checks += 1;
                let first = &agents[members[0]].sets[chk.g].state;
                for &k in &members[1..] {
                    let other = &agents[k].sets[chk.g].state;
                    if other.synced_gram != first.synced_gram || other.synced_reward != first.synced_reward {
                        audit.sync_violations.push(format!(
                            "request ({}, g={}, t={}): views of {} and {k} differ",
                            chk.origin, chk.g, chk.t_sent, members[0]
                        ));
                    }
                }
            }
        }
        pending.retain(|c| c.t_sent + 2 * gamma as u64 > t);
        observer.on_trial_start(t, &agents);

        // Act.
        let g = subsample_index(t, gamma);
        for i in 0..m {
            let ccfg = &clique_cfgs[net.clique_of[i]];
            let a = &mut agents[i];
            let step = t - 1;
            let ds = env.decision_set(i, step)?;
            let st = &mut a.sets[g].state;
            let mut cp = compose(st)?;
            cp.beta = compute_beta(&cp, ccfg);
            let chosen = select_action(&cp, &ds);
            let x = &ds.actions[chosen];
            let y = env.reward(i, step, x)?;
            let regret = ds.regret_of(chosen, &env.truth);
            cum_regret[i] += regret.to_f64_lossy();
            let fired = dec_sync_check(st, &cp.v, x, ccfg)?;
            if i == 0 {
                beta0 = cp.beta.to_f64_lossy();
            }
            observer.on_action(&DecActionEvent {
                t,
                agent: i,
                g,
                params: &cp,
                decision_set: &ds,
                chosen,
                reward: y,
                regret,
                truth: &env.truth,
                fired,
            });
            if subsample_index(t, gamma) != g {
                audit.subsample_violations.push(format!("t={t}: agent {i} wrote set {g}"));
            }
            local_update(st, x, y, &cfg.env)?;
            if fired {
                requests += 1;
                record.sync_trials.push(t);
                pending.push(PendingCheck { origin: i, g, t_sent: t });
                outgoing.push((i, Message::SyncRequest { origin: i, g, t_sent: t }));
                if !responded[i][g] {
                    responded[i][g] = true;
                    let rel = release(a, g, t, cfg)?;
                    release_log.push((net.clique_of[i], g, t, i));
                    observer.on_release(t, i, g, &rel);
                    outgoing.push((i, Message::ParamBroadcast { g, release: rel }));
                }
            } else {
                a.sets[g].state.since_sync += 1;
            }
        }

        for (origin, msg) in outgoing {
            in_flight.push(InFlight { flood: Flood::new(msg, origin, m, gamma) });
        }
        release_log.retain(|&(_, _, rt, _)| rt + 2 * gamma as u64 >= t);
        seen.retain(|&(_, _, ts, _, _)| ts + gamma as u64 >= t);

        if next_cp < checkpoints.len() && checkpoints[next_cp] == t {
            for i in 0..m {
                record.rows.push(CheckpointRow {
                    run_id,
                    t,
                    agent: i,
                    cum_regret: cum_regret[i],
                    sync_count: agents[i].releases,
                    messages_sent: messages[i],
                });
            }
            record.meta.beta_trace.push((t, beta0));
            next_cp += 1;
        }
    }
    record.meta.n_total = requests;
    record.final_regret = cum_regret;
    Ok(DecOutcome { record, audit, agents })
}
