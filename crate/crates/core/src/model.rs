//! Domain types shared by every other module.
//!
//! Money is integer gwei everywhere. Time is a global round index
//! `slot * 24 + round` with in-slot rounds numbered `1..=24`, which gives a
//! total order on creation times across slots.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Amount of money in gwei.
pub type Gwei = u64;
/// Signed utility delta in gwei.
pub type SignedGwei = i64;
/// Agent identifier. Agents occupy the latency-graph node with the same index.
pub type AgentId = usize;
pub type TxId = u64;

pub const ROUNDS_PER_SLOT: u32 = 24;
pub const GWEI_PER_ETH: Gwei = 1_000_000_000;
/// Validator activation threshold (32 ETH).
pub const STAKE_UNIT: Gwei = 32 * GWEI_PER_ETH;

/// Builder and validator attack transactions are never stored in a mempool;
/// their ids live in this namespace, keyed by the victim id. A victim settles
/// at most once, so the id is globally unique.
pub const PRODUCER_ATTACK_ID_FLAG: TxId = 1 << 63;

pub fn global_round(slot: u64, round: u32) -> u64 {
    slot * u64::from(ROUNDS_PER_SLOT) + u64::from(round)
}

pub fn slot_of(global: u64) -> u64 {
    global.saturating_sub(1) / u64::from(ROUNDS_PER_SLOT)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    #[default]
    None,
    Front,
    Back,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Transaction {
    pub tx_id: TxId,
    pub creator_id: AgentId,
    pub created_at: u64,
    pub gas_fee: Gwei,
    pub mev_potential: Gwei,
    pub target: Option<TxId>,
    pub attack_kind: AttackKind,
}

impl Transaction {
    pub fn benign(tx_id: TxId, creator_id: AgentId, created_at: u64, gas_fee: Gwei, mev: Gwei) -> Self {
        Transaction {
            tx_id,
            creator_id,
            created_at,
            gas_fee,
            mev_potential: mev,
            target: None,
            attack_kind: AttackKind::None,
        }
    }

    /// Attack transactions carry no MEV potential of their own.
    pub fn attack(
        tx_id: TxId,
        creator_id: AgentId,
        created_at: u64,
        gas_fee: Gwei,
        target: TxId,
        kind: AttackKind,
    ) -> Self {
        debug_assert!(kind != AttackKind::None);
        Transaction {
            tx_id,
            creator_id,
            created_at,
            gas_fee,
            mev_potential: 0,
            target: Some(target),
            attack_kind: kind,
        }
    }

    /// Zero-gas front-run inserted by a block producer.
    pub fn producer_attack(creator_id: AgentId, created_at: u64, victim: TxId) -> Self {
        Self::attack(
            PRODUCER_ATTACK_ID_FLAG | victim,
            creator_id,
            created_at,
            0,
            victim,
            AttackKind::Front,
        )
    }

    pub fn is_attack(&self) -> bool {
        self.attack_kind != AttackKind::None
    }

    /// Benign payload with positive MEV potential.
    pub fn is_victim_candidate(&self) -> bool {
        !self.is_attack() && self.mev_potential > 0
    }

    /// `target` is present iff the transaction is an attack.
    pub fn is_well_formed(&self) -> bool {
        self.target.is_some() == self.is_attack() && (!self.is_attack() || self.mev_potential == 0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Builder,
    Proposer,
    Validator,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::User => "user",
            Role::Builder => "builder",
            Role::Proposer => "proposer",
            Role::Validator => "validator",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tau {
    #[default]
    Benign,
    Attack,
}

impl Tau {
    pub fn as_str(self) -> &'static str {
        match self {
            Tau::Benign => "benign",
            Tau::Attack => "attack",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Strategy {
    Reactive,
    LastMinute { threshold: u32 },
}

impl Strategy {
    pub fn label(self) -> String {
        match self {
            Strategy::Reactive => "reactive".to_string(),
            Strategy::LastMinute { threshold } => format!("last_minute({threshold})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub agent_id: AgentId,
    pub role: Role,
    pub tau: Tau,
    /// Present iff `role == Builder`.
    pub strategy: Option<Strategy>,
    /// Reinvestment factor, 0 or 1.
    pub gamma: u8,
    pub node: usize,
}

impl AgentProfile {
    pub fn user(agent_id: AgentId, tau: Tau) -> Self {
        Self::new(agent_id, Role::User, tau, None)
    }

    pub fn builder(agent_id: AgentId, tau: Tau, strategy: Strategy) -> Self {
        Self::new(agent_id, Role::Builder, tau, Some(strategy))
    }

    pub fn proposer(agent_id: AgentId) -> Self {
        Self::new(agent_id, Role::Proposer, Tau::Benign, None)
    }

    pub fn validator(agent_id: AgentId, tau: Tau) -> Self {
        Self::new(agent_id, Role::Validator, tau, None)
    }

    fn new(agent_id: AgentId, role: Role, tau: Tau, strategy: Option<Strategy>) -> Self {
        AgentProfile {
            agent_id,
            role,
            tau,
            strategy,
            gamma: 0,
            node: agent_id,
        }
    }

    pub fn with_gamma(mut self, gamma: u8) -> Self {
        self.gamma = gamma.min(1);
        self
    }

    pub fn is_well_formed(&self) -> bool {
        self.strategy.is_some() == (self.role == Role::Builder)
            && (self.role != Role::Proposer || self.tau == Tau::Benign)
            && self.gamma <= 1
    }
}

/// An ordered block built by `builder_id` at in-slot `round`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockCandidate {
    pub builder_id: AgentId,
    pub slot: u64,
    pub round: u32,
    pub txs: Vec<Transaction>,
    pub valuation: Gwei,
}

impl BlockCandidate {
    /// Valuation is always recomputed from the transactions.
    pub fn new(builder_id: AgentId, slot: u64, round: u32, txs: Vec<Transaction>) -> Self {
        let valuation = crate::agents::block_valuation(&txs, builder_id);
        BlockCandidate {
            builder_id,
            slot,
            round,
            txs,
            valuation,
        }
    }

    pub fn empty(builder_id: AgentId, slot: u64, round: u32) -> Self {
        Self::new(builder_id, slot, round, Vec::new())
    }

    pub fn has_duplicate_ids(&self) -> bool {
        let mut ids: Vec<TxId> = self.txs.iter().map(|t| t.tx_id).collect();
        ids.sort_unstable();
        ids.windows(2).any(|w| w[0] == w[1])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bid {
    pub builder_id: AgentId,
    pub slot: u64,
    pub round: u32,
    pub amount: Gwei,
    /// Bidder's valuation when the bid was emitted; `amount <= valuation`.
    pub valuation: Gwei,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuctionOutcome {
    pub slot: u64,
    pub stop_round: u32,
    pub proposer_id: AgentId,
    pub winner_id: AgentId,
    pub winning_bid: Gwei,
    pub block: BlockCandidate,
    /// Every logged bid of the slot, including rounds after `stop_round`.
    pub all_bids: Vec<Bid>,
    /// Valuation of every participating builder at `stop_round`, by builder id.
    pub final_valuations: Vec<(AgentId, Gwei)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MevTransfer {
    pub victim_tx: TxId,
    pub attack_tx: TxId,
    pub from: AgentId,
    pub to: AgentId,
    pub amount: Gwei,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SettlementRecord {
    pub slot: u64,
    pub utility: BTreeMap<AgentId, SignedGwei>,
    pub transfers: Vec<MevTransfer>,
    pub mev_captured_by_users: Gwei,
    pub mev_captured_by_producer: Gwei,
    pub mev_uncaptured: Gwei,
    pub gas_total: Gwei,
}

impl SettlementRecord {
    pub fn empty(slot: u64) -> Self {
        SettlementRecord {
            slot,
            ..Default::default()
        }
    }

    pub fn total_mev(&self) -> Gwei {
        self.mev_captured_by_users + self.mev_captured_by_producer + self.mev_uncaptured
    }

    pub fn utility_of(&self, agent: AgentId) -> SignedGwei {
        self.utility.get(&agent).copied().unwrap_or(0)
    }

    pub(crate) fn credit(&mut self, agent: AgentId, delta: SignedGwei) {
        *self.utility.entry(agent).or_insert(0) += delta;
    }
}

/// Continuous capital `k` plus the threshold-quantized active stake `s`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StakeAccount {
    pub agent_id: AgentId,
    pub capital: Gwei,
    pub active_stake: Gwei,
    pub gamma: u8,
}

impl StakeAccount {
    pub fn new(agent_id: AgentId, capital: Gwei, gamma: u8) -> Self {
        StakeAccount {
            agent_id,
            capital,
            active_stake: quantize_stake(capital),
            gamma: gamma.min(1),
        }
    }
}

pub fn quantize_stake(capital: Gwei) -> Gwei {
    STAKE_UNIT * (capital / STAKE_UNIT)
}
