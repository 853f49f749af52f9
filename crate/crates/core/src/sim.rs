//! Multi-slot runs for both consensus modes, producer selection and
//! restaking.
//!
//! Randomness comes from three ChaCha8 streams keyed by the run seed, so
//! every consumer sees a fixed sequence whatever happens elsewhere:
//! stream 0 samples the latency graph, stream 1 assigns agent types,
//! strategies and reinvestment flags, stream 2 drives the slots. Within a
//! slot the order is: user creation rounds (agent-id order), user payloads
//! (creation-round then agent-id order), producer selection, and in PoS the
//! validator's build round.

use std::collections::{HashMap, HashSet};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agents::{create_user_transaction, validator_build, PayloadSamplers, ProposerStopState};
use crate::auction::{run_slot_auction, settle_epbs, settle_pos, AuctionError, AuctionParams};
use crate::config::{Mode, SimConfig};
use crate::error::{Error, Result};
use crate::io::Sampler;
use crate::model::{
    global_round, quantize_stake, slot_of, AgentId, AgentProfile, Bid, BlockCandidate, Gwei, Role,
    SettlementRecord, SignedGwei, StakeAccount, Strategy, Tau, Transaction, TxId, ROUNDS_PER_SLOT,
};
use crate::netlat::{generate_erdos_renyi, visible_mempool, LatencyGraph};
use crate::par::Exec;

const STREAM_GRAPH: u64 = 0;
const STREAM_AGENTS: u64 = 1;
const STREAM_SLOTS: u64 = 2;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One slot of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotRecord {
    pub slot: u64,
    /// ePBS proposer; `None` in PoS.
    pub proposer_id: Option<AgentId>,
    /// Winning builder or selected validator; `None` for a skipped slot.
    pub producer_id: Option<AgentId>,
    /// ePBS stopping round, or the PoS validator's build round.
    pub stop_round: u32,
    pub winning_bid: Gwei,
    pub valuation: Gwei,
    pub block: Vec<Transaction>,
    pub skipped: bool,
    pub settlement: SettlementRecord,
    /// Every bidding builder's valuation at the stopping round.
    pub final_valuations: Vec<(AgentId, Gwei)>,
    /// Logged bids, kept only when bid tracing is on.
    pub bids: Vec<Bid>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub config: SimConfig,
    pub agents: Vec<AgentProfile>,
    pub graph: LatencyGraph,
    pub slots: Vec<SlotRecord>,
    /// Cumulative utility by agent id.
    pub profit: Vec<SignedGwei>,
    pub blocks_produced: Vec<u64>,
    /// Agents holding stake, in id order; empty unless restaking.
    pub stakers: Vec<AgentId>,
    pub initial_stakes: Vec<StakeAccount>,
    /// `(capital, active_stake)` of each staker after every slot.
    pub stake_trajectory: Vec<Vec<(Gwei, Gwei)>>,
}

impl RunRecord {
    pub fn agent(&self, id: AgentId) -> Result<&AgentProfile> {
        self.agents.get(id).ok_or(Error::UnknownAgent(id))
    }

    pub fn ids_with(&self, role: Role, tau: Tau) -> Vec<AgentId> {
        self.agents
            .iter()
            .filter(|a| a.role == role && a.tau == tau)
            .map(|a| a.agent_id)
            .collect()
    }
}

/// Draws an agent with probability proportional to its active stake.
pub fn select_producer<R: Rng + ?Sized>(stakes: &[StakeAccount], rng: &mut R) -> Result<AgentId> {
    let total: u128 = stakes.iter().map(|s| s.active_stake as u128).sum();
    if total == 0 {
        return Err(Error::ZeroTotalStake);
    }
    let mut u = rng.random_range(0..total);
    for s in stakes {
        let w = s.active_stake as u128;
        if u < w {
            return Ok(s.agent_id);
        }
        u -= w;
    }
    unreachable!("draw below total stake")
}

/// `k' = k + gamma * reward`, active stake re-quantized to 32 ETH units.
pub fn apply_restake(account: StakeAccount, reward: Gwei) -> StakeAccount {
    let capital = account.capital + account.gamma as Gwei * reward;
    StakeAccount {
        capital,
        active_stake: quantize_stake(capital),
        ..account
    }
}

/// Builds the population: ids in the order users, then builders and
/// proposers (ePBS) or validators (PoS), each agent's id being its graph
/// node. Attack members and last-minute builders are drawn uniformly
/// without replacement.
pub fn build_population<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Vec<AgentProfile> {
    fn chosen<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> Vec<bool> {
        let mut mask = vec![false; n];
        for i in sample(rng, n, k) {
            mask[i] = true;
        }
        mask
    }
    let tau = |attack: bool| if attack { Tau::Attack } else { Tau::Benign };
    let mut agents = Vec::with_capacity(cfg.node_count());
    let users = chosen(rng, cfg.n_users, cfg.attack_user_count);
    for (i, &a) in users.iter().enumerate() {
        agents.push(AgentProfile::user(i, tau(a)));
    }
    match cfg.mode {
        Mode::Epbs => {
            let attack = chosen(rng, cfg.n_builders, cfg.attack_builder_count);
            let lm_count = (cfg.last_minute_fraction * cfg.n_builders as f64).round() as usize;
            let late = chosen(rng, cfg.n_builders, lm_count.min(cfg.n_builders));
            for i in 0..cfg.n_builders {
                let strategy = if late[i] {
                    Strategy::LastMinute {
                        threshold: cfg.last_minute_threshold,
                    }
                } else {
                    Strategy::Reactive
                };
                agents.push(AgentProfile::builder(agents.len(), tau(attack[i]), strategy));
            }
            for _ in 0..cfg.n_proposers {
                agents.push(AgentProfile::proposer(agents.len()));
            }
        }
        Mode::Pos => {
            let attack = chosen(rng, cfg.n_validators, cfg.attack_validator_count);
            for &a in &attack {
                agents.push(AgentProfile::validator(agents.len(), tau(a)));
            }
        }
    }
    agents
}

fn is_staker(a: &AgentProfile) -> bool {
    matches!(a.role, Role::Builder | Role::Proposer | Role::Validator)
}

/// Initial stake accounts: a fair reinvestment coin per staker, the
/// wealthy minority per staking role (split across attack and benign
/// members, lowest ids first), then explicit overrides.
pub fn initial_stakes<R: Rng + ?Sized>(
    cfg: &SimConfig,
    agents: &mut [AgentProfile],
    rng: &mut R,
) -> Vec<StakeAccount> {
    let rc = &cfg.restaking;
    let mut accounts: Vec<StakeAccount> = Vec::new();
    for a in agents.iter_mut().filter(|a| is_staker(a)) {
        let gamma = rng.random_range(0..=1u8);
        a.gamma = gamma;
        accounts.push(StakeAccount::new(a.agent_id, rc.base_stake, gamma));
    }
    for role in [Role::Builder, Role::Proposer, Role::Validator] {
        let ids = |tau| -> Vec<AgentId> {
            agents
                .iter()
                .filter(|a| a.role == role && a.tau == tau)
                .map(|a| a.agent_id)
                .collect()
        };
        let (attack, benign) = (ids(Tau::Attack), ids(Tau::Benign));
        let want = rc.rich_count.min(attack.len() + benign.len());
        let from_attack = (want / 2).min(attack.len()).max(want.saturating_sub(benign.len()));
        let rich = attack[..from_attack].iter().chain(&benign[..want - from_attack]);
        for id in rich {
            let acc = accounts.iter_mut().find(|s| s.agent_id == *id).expect("staker");
            *acc = StakeAccount::new(*id, rc.rich_stake, acc.gamma);
        }
    }
    for o in &rc.initial_stakes {
        if let Some(acc) = accounts.iter_mut().find(|s| s.agent_id == o.agent_id) {
            let gamma = o.gamma.unwrap_or(acc.gamma);
            *acc = StakeAccount::new(o.agent_id, o.stake, gamma);
            agents[o.agent_id].gamma = gamma;
        }
    }
    accounts
}

struct Mempool {
    txs: Vec<Transaction>,
    next_id: TxId,
    horizon: u64,
}

impl Mempool {
    /// Drops included transactions and those older than the horizon as of
    /// `next_slot`.
    fn retire(&mut self, included: &[Transaction], next_slot: u64) {
        let gone: HashSet<TxId> = included.iter().map(|t| t.tx_id).collect();
        let horizon = self.horizon;
        self.txs
            .retain(|t| !gone.contains(&t.tx_id) && next_slot - slot_of(t.created_at) < horizon);
    }
}

/// Per-run state shared by both modes.
struct Engine {
    cfg: SimConfig,
    agents: Vec<AgentProfile>,
    graph: LatencyGraph,
    samplers: PayloadSamplers,
    rng: ChaCha8Rng,
    mempool: Mempool,
    targeted: HashMap<AgentId, HashSet<TxId>>,
    profit: Vec<SignedGwei>,
    blocks_produced: Vec<u64>,
    stakes: Vec<StakeAccount>,
    initial_stakes: Vec<StakeAccount>,
    stake_trajectory: Vec<Vec<(Gwei, Gwei)>>,
    slots: Vec<SlotRecord>,
}

impl Engine {
    fn new(cfg: &SimConfig) -> Result<Engine> {
        cfg.validate()?;
        let n = cfg.node_count();
        let graph = generate_erdos_renyi(
            n,
            cfg.graph.p,
            cfg.graph.weight,
            &mut stream_rng(cfg.seed, STREAM_GRAPH),
        )?;
        let mut arng = stream_rng(cfg.seed, STREAM_AGENTS);
        let mut agents = build_population(cfg, &mut arng);
        let stakes = if cfg.restaking.enabled {
            initial_stakes(cfg, &mut agents, &mut arng)
        } else {
            Vec::new()
        };
        let samplers = PayloadSamplers {
            gas_fee: Sampler::from_spec(&cfg.distributions.gas_fee)?,
            mev: Sampler::from_spec(&cfg.distributions.mev)?,
            mev_probability: cfg.distributions.mev_probability,
        };
        Ok(Engine {
            cfg: cfg.clone(),
            graph,
            samplers,
            rng: stream_rng(cfg.seed, STREAM_SLOTS),
            mempool: Mempool {
                txs: Vec::new(),
                next_id: 0,
                horizon: cfg.mempool_horizon,
            },
            targeted: HashMap::new(),
            profit: vec![0; n],
            blocks_produced: vec![0; n],
            initial_stakes: stakes.clone(),
            stakes,
            stake_trajectory: Vec::new(),
            slots: Vec::new(),
            agents,
        })
    }

    /// Every user emits one transaction at a uniform round of the window.
    fn create_user_transactions(&mut self, slot: u64) {
        let users: Vec<AgentId> = self
            .agents
            .iter()
            .filter(|a| a.role == Role::User)
            .map(|a| a.agent_id)
            .collect();
        let window = self.cfg.tx_round_window;
        let mut order: Vec<(u32, AgentId)> = users
            .iter()
            .map(|&u| (self.rng.random_range(1..=window), u))
            .collect();
        order.sort_unstable();
        for (round, u) in order {
            let now = global_round(slot, round);
            let user = &self.agents[u];
            let tx = {
                let view = visible_mempool(user.node, now, &self.mempool.txs, &self.graph);
                let targeted = self.targeted.entry(u).or_default();
                create_user_transaction(
                    user,
                    now,
                    &view,
                    &self.samplers,
                    &mut self.rng,
                    self.mempool.next_id,
                    targeted,
                )
            };
            if let Some(t) = tx.target {
                self.targeted.entry(u).or_default().insert(t);
            }
            self.mempool.next_id += 1;
            self.mempool.txs.push(tx);
        }
    }

    fn record(&mut self, rec: SlotRecord) {
        for (&id, &u) in &rec.settlement.utility {
            self.profit[id] += u;
        }
        if let Some(p) = rec.producer_id {
            self.blocks_produced[p] += 1;
        }
        if self.cfg.restaking.enabled {
            for acc in &mut self.stakes {
                let reward = rec.settlement.utility_of(acc.agent_id).max(0) as Gwei;
                *acc = apply_restake(*acc, reward);
            }
            self.stake_trajectory
                .push(self.stakes.iter().map(|s| (s.capital, s.active_stake)).collect());
        }
        self.mempool.retire(&rec.block, rec.slot + 1);
        self.slots.push(rec);
    }

    fn select_uniform(&mut self, role: Role) -> Result<AgentId> {
        let pool: Vec<AgentId> = self
            .agents
            .iter()
            .filter(|a| a.role == role)
            .map(|a| a.agent_id)
            .collect();
        if pool.is_empty() {
            return Err(Error::ZeroTotalStake);
        }
        Ok(pool[self.rng.random_range(0..pool.len())])
    }

    fn finish(self) -> RunRecord {
        RunRecord {
            config: self.cfg,
            agents: self.agents,
            graph: self.graph,
            slots: self.slots,
            profit: self.profit,
            blocks_produced: self.blocks_produced,
            stakers: self.stakes.iter().map(|s| s.agent_id).collect(),
            initial_stakes: self.initial_stakes,
            stake_trajectory: self.stake_trajectory,
        }
    }
}

/// Runs an ePBS simulation: per slot users transact, a proposer is drawn,
/// builders bid through the latency-constrained auction, the block is
/// settled and the proposer's stopping round adapts.
pub fn run_epbs(cfg: &SimConfig, exec: Exec) -> Result<RunRecord> {
    if cfg.mode != Mode::Epbs {
        return Err(Error::validation("mode", "run_epbs needs mode epbs"));
    }
    let mut e = Engine::new(cfg)?;
    let params = AuctionParams {
        capacity: cfg.capacity,
        delta: cfg.delta,
    };
    let mut stop = ProposerStopState::new(cfg.initial_stop_round);
    let all_builders: Vec<AgentProfile> = e
        .agents
        .iter()
        .filter(|a| a.role == Role::Builder)
        .cloned()
        .collect();
    for slot in 0..cfg.blocks {
        e.create_user_transactions(slot);
        let proposer_id = if cfg.restaking.enabled {
            select_producer(&e.stakes, &mut e.rng)?
        } else {
            e.select_uniform(Role::Proposer)?
        };
        let proposer = e.agents[proposer_id].clone();
        let builders: Vec<AgentProfile> = all_builders
            .iter()
            .filter(|b| b.agent_id != proposer_id)
            .cloned()
            .collect();
        let stop_round = stop.current_stop;
        let outcome = if builders.is_empty() {
            Err(AuctionError::NoVisibleBids {
                slot,
                all_bids: Vec::new(),
            })
        } else {
            run_slot_auction(
                slot,
                &builders,
                &proposer,
                stop_round,
                &e.graph,
                &e.mempool.txs,
                &params,
                exec,
            )
        };
        let rec = match outcome {
            Ok(out) => {
                let settlement = settle_epbs(&out);
                stop.advance(out.winning_bid, out.all_bids.clone());
                SlotRecord {
                    slot,
                    proposer_id: Some(proposer_id),
                    producer_id: Some(out.winner_id),
                    stop_round,
                    winning_bid: out.winning_bid,
                    valuation: out.block.valuation,
                    block: out.block.txs,
                    skipped: false,
                    settlement,
                    final_valuations: out.final_valuations,
                    bids: if cfg.trace_bids { out.all_bids } else { Vec::new() },
                }
            }
            Err(AuctionError::NoVisibleBids { all_bids, .. }) => {
                stop.advance(0, all_bids.clone());
                SlotRecord {
                    slot,
                    proposer_id: Some(proposer_id),
                    producer_id: None,
                    stop_round,
                    winning_bid: 0,
                    valuation: 0,
                    block: Vec::new(),
                    skipped: true,
                    settlement: SettlementRecord::empty(slot),
                    final_valuations: Vec::new(),
                    bids: if cfg.trace_bids { all_bids } else { Vec::new() },
                }
            }
        };
        e.record(rec);
    }
    Ok(e.finish())
}

/// Runs a PoS simulation: per slot one validator builds at a uniformly
/// drawn round and keeps the full block valuation.
pub fn run_pos(cfg: &SimConfig) -> Result<RunRecord> {
    if cfg.mode != Mode::Pos {
        return Err(Error::validation("mode", "run_pos needs mode pos"));
    }
    let mut e = Engine::new(cfg)?;
    for slot in 0..cfg.blocks {
        e.create_user_transactions(slot);
        let vid = if cfg.restaking.enabled {
            select_producer(&e.stakes, &mut e.rng)?
        } else {
            e.select_uniform(Role::Validator)?
        };
        let round = e.rng.random_range(1..=ROUNDS_PER_SLOT);
        let now = global_round(slot, round);
        let validator = &e.agents[vid];
        let view: Vec<Transaction> = visible_mempool(validator.node, now, &e.mempool.txs, &e.graph)
            .into_iter()
            .cloned()
            .collect();
        let txs = validator_build(validator, &view, cfg.capacity, now);
        let block = BlockCandidate::new(vid, slot, round, txs);
        let settlement = settle_pos(&block);
        e.record(SlotRecord {
            slot,
            proposer_id: None,
            producer_id: Some(vid),
            stop_round: round,
            winning_bid: 0,
            valuation: block.valuation,
            block: block.txs,
            skipped: false,
            settlement,
            final_valuations: Vec::new(),
            bids: Vec::new(),
        });
    }
    Ok(e.finish())
}

/// Dispatches on the configured mode.
pub fn run(cfg: &SimConfig, exec: Exec) -> Result<RunRecord> {
    match cfg.mode {
        Mode::Epbs => run_epbs(cfg, exec),
        Mode::Pos => run_pos(cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GWEI_PER_ETH;

    #[test]
    fn restake_crosses_threshold() {
        let a = StakeAccount::new(0, 63 * GWEI_PER_ETH, 1);
        let b = apply_restake(a, GWEI_PER_ETH);
        assert_eq!(b.capital, 64 * GWEI_PER_ETH);
        assert_eq!(b.active_stake, 64 * GWEI_PER_ETH);
    }

    #[test]
    fn restake_without_crossing() {
        let a = StakeAccount::new(0, 32 * GWEI_PER_ETH, 1);
        let b = apply_restake(a, GWEI_PER_ETH);
        assert_eq!(b.capital, 33 * GWEI_PER_ETH);
        assert_eq!(b.active_stake, 32 * GWEI_PER_ETH);
    }

    #[test]
    fn restake_gamma_zero_is_identity() {
        let a = StakeAccount::new(0, 40 * GWEI_PER_ETH, 0);
        assert_eq!(apply_restake(a, 123_456_789), a);
    }

    #[test]
    fn zero_stake_selection_fails() {
        let s = [StakeAccount::new(0, 0, 0)];
        let mut rng = stream_rng(1, 0);
        assert!(matches!(select_producer(&s, &mut rng), Err(Error::ZeroTotalStake)));
    }

    #[test]
    fn zero_weight_never_selected() {
        let s = [
            StakeAccount::new(0, 0, 0),
            StakeAccount::new(1, 64 * GWEI_PER_ETH, 0),
        ];
        let mut rng = stream_rng(1, 0);
        assert!((0..1000).all(|_| select_producer(&s, &mut rng).unwrap() == 1));
    }

    #[test]
    fn population_layout() {
        let cfg = SimConfig {
            attack_user_count: 10,
            attack_builder_count: 20,
            ..SimConfig::default()
        };
        let agents = build_population(&cfg, &mut stream_rng(3, STREAM_AGENTS));
        assert_eq!(agents.len(), 200);
        assert!(agents.iter().enumerate().all(|(i, a)| a.agent_id == i && a.node == i));
        assert_eq!(agents.iter().filter(|a| a.role == Role::User && a.tau == Tau::Attack).count(), 10);
        assert_eq!(agents.iter().filter(|a| a.role == Role::Builder && a.tau == Tau::Attack).count(), 20);
        let late = agents
            .iter()
            .filter(|a| matches!(a.strategy, Some(Strategy::LastMinute { .. })))
            .count();
        assert_eq!(late, 13);
        assert!(agents[150..].iter().all(|a| a.role == Role::Proposer));
    }

    #[test]
    fn rich_minority_split_across_types() {
        let cfg = SimConfig {
            mode: Mode::Pos,
            attack_validator_count: 25,
            restaking: crate::config::RestakingConfig {
                enabled: true,
                ..Default::default()
            },
            ..SimConfig::default()
        };
        let mut rng = stream_rng(5, STREAM_AGENTS);
        let mut agents = build_population(&cfg, &mut rng);
        let stakes = initial_stakes(&cfg, &mut agents, &mut rng);
        let rich: Vec<_> = stakes
            .iter()
            .filter(|s| s.active_stake == 256 * GWEI_PER_ETH)
            .map(|s| agents[s.agent_id].tau)
            .collect();
        assert_eq!(rich.len(), 8);
        assert_eq!(rich.iter().filter(|&&t| t == Tau::Attack).count(), 4);
    }

    #[test]
    fn mempool_expiry_horizon() {
        let mut m = Mempool {
            txs: vec![
                Transaction::benign(1, 0, global_round(0, 3), 1, 0),
                Transaction::benign(2, 0, global_round(2, 3), 1, 0),
            ],
            next_id: 3,
            horizon: 5,
        };
        m.retire(&[], 4);
        assert_eq!(m.txs.len(), 2);
        m.retire(&[], 5);
        assert_eq!(m.txs.iter().map(|t| t.tx_id).collect::<Vec<_>>(), vec![2]);
        m.retire(&[Transaction::benign(2, 0, 0, 1, 0)], 5);
        assert!(m.txs.is_empty());
    }
}
