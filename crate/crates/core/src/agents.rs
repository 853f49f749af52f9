//! Agent decision logic: transaction creation, block assembly, valuation,
//! bidding strategies and the proposer's adaptive stopping rule.

use std::collections::HashSet;

use rand::Rng;

use crate::auction::resolve_attack_success;
use crate::io::Sampler;
use crate::model::{
    AgentId, AgentProfile, AttackKind, Bid, Gwei, Role, Tau, Transaction, TxId, ROUNDS_PER_SLOT,
};

/// Samplers a user draws a transaction payload from.
#[derive(Clone, Debug)]
pub struct PayloadSamplers {
    pub gas_fee: Sampler,
    pub mev: Sampler,
    pub mev_probability: f64,
}

/// Creates one user transaction at global round `created_at`.
///
/// Every call draws, in order: the gas fee, the MEV gate, the MEV amount
/// (only when the gate opens) and the front/back coin, whatever the user's
/// type. Attack users target the visible benign transaction with the largest
/// MEV potential that they have not targeted before; with nothing to target
/// they fall back to the benign payload.
#[allow(clippy::too_many_arguments)]
pub fn create_user_transaction<R: Rng + ?Sized>(
    user: &AgentProfile,
    created_at: u64,
    mempool_view: &[&Transaction],
    samplers: &PayloadSamplers,
    rng: &mut R,
    tx_id: TxId,
    already_targeted: &HashSet<TxId>,
) -> Transaction {
    debug_assert_eq!(user.role, Role::User);
    let gas = samplers.gas_fee.sample(rng);
    let mev = if rng.random_bool(samplers.mev_probability) {
        samplers.mev.sample(rng)
    } else {
        0
    };
    let front = rng.random_bool(0.5);

    if user.tau == Tau::Attack {
        let victim = mempool_view
            .iter()
            .filter(|tx| {
                tx.is_victim_candidate()
                    && tx.creator_id != user.agent_id
                    && !already_targeted.contains(&tx.tx_id)
            })
            .max_by(|a, b| {
                a.mev_potential
                    .cmp(&b.mev_potential)
                    .then(b.tx_id.cmp(&a.tx_id))
            });
        if let Some(v) = victim {
            // A back-run needs a fee strictly below the victim's.
            let (kind, fee) = if front || v.gas_fee == 0 {
                (AttackKind::Front, v.gas_fee + 1)
            } else {
                (AttackKind::Back, v.gas_fee - 1)
            };
            return Transaction::attack(tx_id, user.agent_id, created_at, fee, v.tx_id, kind);
        }
    }
    Transaction::benign(tx_id, user.agent_id, created_at, gas, mev)
}

/// Fee order: gas fee descending, then earlier creation, then smaller id.
pub(crate) fn fee_cmp(a: &Transaction, b: &Transaction) -> std::cmp::Ordering {
    b.gas_fee
        .cmp(&a.gas_fee)
        .then(a.created_at.cmp(&b.created_at))
        .then(a.tx_id.cmp(&b.tx_id))
}

/// Block assembly over a fixed candidate set. Candidates are sorted once;
/// each plan only filters by visibility, so rebuilding a block as the
/// visible mempool grows costs a linear scan.
pub(crate) struct Planner<'a> {
    cands: &'a [Transaction],
    fee_order: Vec<usize>,
    victim_order: Vec<usize>,
}

/// Indices into the planner's candidates. Each bundle is a producer
/// front-run immediately followed by its victim; bundles lead the block in
/// commit order and the rest follows in fee order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct BlockPlan {
    pub bundles: Vec<usize>,
    pub rest: Vec<usize>,
    pub value: Gwei,
}

impl<'a> Planner<'a> {
    pub fn new(cands: &'a [Transaction]) -> Self {
        let mut fee_order: Vec<usize> = (0..cands.len()).collect();
        fee_order.sort_by(|&a, &b| fee_cmp(&cands[a], &cands[b]));
        let mut victim_order: Vec<usize> = (0..cands.len())
            .filter(|&i| cands[i].is_victim_candidate())
            .collect();
        victim_order.sort_by(|&a, &b| {
            cands[b]
                .mev_potential
                .cmp(&cands[a].mev_potential)
                .then(cands[a].tx_id.cmp(&cands[b].tx_id))
        });
        Planner {
            cands,
            fee_order,
            victim_order,
        }
    }

    pub fn candidates(&self) -> &'a [Transaction] {
        self.cands
    }

    pub fn plan(&self, visible: impl Fn(usize) -> bool, capacity: usize, attack: bool) -> BlockPlan {
        let cands = self.cands;
        let mut block: Vec<usize> = self
            .fee_order
            .iter()
            .copied()
            .filter(|&i| visible(i))
            .take(capacity)
            .collect();
        let mut bundles = Vec::new();

        if attack {
            let mut in_block = vec![false; cands.len()];
            for &i in &block {
                in_block[i] = true;
            }
            let mut evict: Vec<usize> = Vec::with_capacity(2);
            for &v in self.victim_order.iter().filter(|&&v| visible(v)) {
                let needed = if in_block[v] { 1 } else { 2 };
                if needed > capacity {
                    continue;
                }
                let used = block.len() + 2 * bundles.len();
                let need_evict = needed.saturating_sub(capacity - used);

                // lowest-fee members sit at the tail of `block`
                evict.clear();
                let mut cost: Gwei = 0;
                for pos in (0..block.len()).rev() {
                    if evict.len() == need_evict {
                        break;
                    }
                    if block[pos] == v {
                        continue;
                    }
                    evict.push(pos);
                    cost += cands[block[pos]].gas_fee;
                }
                if evict.len() < need_evict {
                    continue;
                }
                let gain = cands[v].mev_potential + if in_block[v] { 0 } else { cands[v].gas_fee };
                if gain <= cost {
                    continue;
                }
                // `evict` holds positions in descending order
                for &pos in &evict {
                    in_block[block[pos]] = false;
                    block.remove(pos);
                }
                if in_block[v] {
                    let pos = block.iter().position(|&i| i == v).expect("victim in block");
                    block.remove(pos);
                    in_block[v] = false;
                }
                bundles.push(v);
            }
        }

        let value = block.iter().map(|&i| cands[i].gas_fee).sum::<Gwei>()
            + bundles
                .iter()
                .map(|&v| cands[v].gas_fee + cands[v].mev_potential)
                .sum::<Gwei>();
        BlockPlan {
            bundles,
            rest: block,
            value,
        }
    }
}

impl BlockPlan {
    pub fn materialize(&self, cands: &[Transaction], producer: AgentId, created_at: u64) -> Vec<Transaction> {
        let mut out = Vec::with_capacity(2 * self.bundles.len() + self.rest.len());
        for &v in &self.bundles {
            out.push(Transaction::producer_attack(producer, created_at, cands[v].tx_id));
            out.push(cands[v].clone());
        }
        out.extend(self.rest.iter().map(|&i| cands[i].clone()));
        out
    }
}

/// Top-`capacity` transactions by gas fee, descending; ties go to the
/// earlier-created, then smaller-id transaction.
pub fn build_block_benign(mempool_view: &[Transaction], capacity: usize) -> Vec<Transaction> {
    let planner = Planner::new(mempool_view);
    planner
        .plan(|_| true, capacity, false)
        .materialize(mempool_view, AgentId::MAX, 0)
}

/// Builder with its zero-gas attack transactions for the current slot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BuilderState {
    pub profile: AgentProfile,
    pub pending_attacks: Vec<Transaction>,
}

impl BuilderState {
    pub fn new(profile: AgentProfile) -> Self {
        BuilderState {
            profile,
            pending_attacks: Vec::new(),
        }
    }
}

/// Starts from the benign block and, visiting victims by descending MEV
/// potential, inserts a zero-gas front-run (plus the victim when absent)
/// whenever the captured MEV, together with the victim's fee if it is newly
/// added, strictly exceeds the fees of the lowest-fee transactions evicted
/// to make room.
pub fn build_block_attack(
    builder: &mut BuilderState,
    mempool_view: &[Transaction],
    capacity: usize,
    created_at: u64,
) -> Vec<Transaction> {
    debug_assert_eq!(builder.profile.tau, Tau::Attack);
    let planner = Planner::new(mempool_view);
    let txs = planner
        .plan(|_| true, capacity, true)
        .materialize(mempool_view, builder.profile.agent_id, created_at);
    builder.pending_attacks = txs
        .iter()
        .filter(|t| t.creator_id == builder.profile.agent_id && t.is_attack())
        .cloned()
        .collect();
    txs
}

/// PoS validator block: benign fee ordering, or the attack assembly with the
/// validator's own zero-gas attacks.
pub fn validator_build(
    validator: &AgentProfile,
    mempool_view: &[Transaction],
    capacity: usize,
    created_at: u64,
) -> Vec<Transaction> {
    debug_assert_eq!(validator.role, Role::Validator);
    let planner = Planner::new(mempool_view);
    planner
        .plan(|_| true, capacity, validator.tau == Tau::Attack)
        .materialize(mempool_view, validator.agent_id, created_at)
}

/// Gas fees of every included transaction plus the MEV potential of each
/// victim captured by an attack transaction created by `producer`.
pub fn block_valuation(txs: &[Transaction], producer: AgentId) -> Gwei {
    let gas: Gwei = txs.iter().map(|t| t.gas_fee).sum();
    let mev: Gwei = resolve_attack_success(txs)
        .iter()
        .filter(|c| c.attacker_id == producer)
        .map(|c| c.amount)
        .sum();
    gas + mev
}

/// Reactive bid: one increment above the highest competing bid seen so far,
/// capped at the valuation. With no visible competitor the opening bid is
/// `min(valuation, delta)`.
pub fn bid_reactive(valuation: Gwei, highest_visible: Option<Gwei>, delta: Gwei) -> Gwei {
    let target = highest_visible.map_or(delta, |h| h.saturating_add(delta));
    valuation.min(target)
}

/// Reactive bidding gated to rounds `round >= threshold`.
pub fn bid_last_minute(
    valuation: Gwei,
    highest_visible: Option<Gwei>,
    delta: Gwei,
    round: u32,
    threshold: u32,
) -> Option<Gwei> {
    (round >= threshold).then(|| bid_reactive(valuation, highest_visible, delta))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProposerStopState {
    pub current_stop: u32,
    pub last_winning_bid: Gwei,
    pub last_bid_log: Vec<Bid>,
}

impl ProposerStopState {
    pub fn new(initial_stop: u32) -> Self {
        ProposerStopState {
            current_stop: initial_stop.clamp(1, ROUNDS_PER_SLOT),
            last_winning_bid: 0,
            last_bid_log: Vec::new(),
        }
    }

    /// Records the finished slot and moves to the next stopping round.
    pub fn advance(&mut self, winning_bid: Gwei, bid_log: Vec<Bid>) {
        self.current_stop = proposer_next_stop(self.current_stop, winning_bid, &bid_log);
        self.last_winning_bid = winning_bid;
        self.last_bid_log = bid_log;
    }
}

/// One step later if any bid after the previous stop beat the winning bid,
/// one step earlier if only a bid before it did, else unchanged; always in
/// `[1, 24]`.
pub fn proposer_next_stop(current_stop: u32, winning_bid: Gwei, bid_log: &[Bid]) -> u32 {
    let later = bid_log
        .iter()
        .any(|b| b.round > current_stop && b.amount > winning_bid);
    let earlier = bid_log
        .iter()
        .any(|b| b.round < current_stop && b.amount > winning_bid);
    let next = if later {
        current_stop + 1
    } else if earlier {
        current_stop.saturating_sub(1)
    } else {
        current_stop
    };
    next.clamp(1, ROUNDS_PER_SLOT)
}
