//! Simulation configuration with documented defaults and validation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::DistributionSpec;
use crate::model::{AgentId, Gwei, GWEI_PER_ETH, ROUNDS_PER_SLOT};
use crate::netlat::WeightRule;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Pos,
    #[default]
    Epbs,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Pos => "pos",
            Mode::Epbs => "epbs",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "pos" => Ok(Mode::Pos),
            "epbs" => Ok(Mode::Epbs),
            other => Err(format!("unknown mode `{other}` (expected pos or epbs)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    /// Erdős–Rényi edge probability.
    pub p: f64,
    pub weight: WeightRule,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            p: 0.1,
            weight: WeightRule::Constant { value: 1 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Distributions {
    pub gas_fee: DistributionSpec,
    pub mev: DistributionSpec,
    /// Bernoulli gate: probability that a user transaction carries MEV at all.
    pub mev_probability: f64,
}

impl Default for Distributions {
    fn default() -> Self {
        Distributions {
            gas_fee: DistributionSpec::LogNormal {
                mu: (2.0e9f64).ln(),
                sigma: 1.0,
            },
            mev: DistributionSpec::Gamma {
                shape: 0.5,
                scale: 4.0e9,
            },
            mev_probability: 0.2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StakeAssignment {
    pub agent_id: AgentId,
    pub stake: Gwei,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<u8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RestakingConfig {
    pub enabled: bool,
    /// Stake every staker starts with unless listed in `initial_stakes`.
    pub base_stake: Gwei,
    /// Stake of the wealthy minority.
    pub rich_stake: Gwei,
    /// Size of the wealthy minority per staking role, split evenly between
    /// attack and benign agents where possible.
    pub rich_count: usize,
    /// Explicit per-agent overrides; take precedence over the defaults above.
    pub initial_stakes: Vec<StakeAssignment>,
}

impl Default for RestakingConfig {
    fn default() -> Self {
        RestakingConfig {
            enabled: false,
            base_stake: 32 * GWEI_PER_ETH,
            rich_stake: 256 * GWEI_PER_ETH,
            rich_count: 8,
            initial_stakes: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub mode: Mode,
    pub n_users: usize,
    pub n_builders: usize,
    pub n_proposers: usize,
    pub n_validators: usize,
    #[serde(alias = "attack_users")]
    pub attack_user_count: usize,
    #[serde(alias = "attack_builders")]
    pub attack_builder_count: usize,
    #[serde(alias = "attack_validators")]
    pub attack_validator_count: usize,
    /// Transactions per block.
    pub capacity: usize,
    pub rounds_per_slot: u32,
    /// Slots to simulate.
    pub blocks: u64,
    /// Bid increment in gwei.
    pub delta: Gwei,
    pub last_minute_threshold: u32,
    pub last_minute_fraction: f64,
    pub graph: GraphConfig,
    pub distributions: Distributions,
    pub initial_stop_round: u32,
    pub seed: u64,
    pub restaking: RestakingConfig,
    /// A transaction not included within this many slots of its creation
    /// slot leaves every mempool.
    pub mempool_horizon: u64,
    /// Users create their transaction at a uniform in-slot round in
    /// `1..=tx_round_window`.
    pub tx_round_window: u32,
    /// Record every logged bid for `bids.csv`.
    pub trace_bids: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            mode: Mode::Epbs,
            n_users: 100,
            n_builders: 50,
            n_proposers: 50,
            n_validators: 50,
            attack_user_count: 0,
            attack_builder_count: 0,
            attack_validator_count: 0,
            capacity: 100,
            rounds_per_slot: ROUNDS_PER_SLOT,
            blocks: 1000,
            delta: DEFAULT_DELTA,
            last_minute_threshold: 20,
            last_minute_fraction: 0.25,
            graph: GraphConfig::default(),
            distributions: Distributions::default(),
            initial_stop_round: 12,
            seed: 0,
            restaking: RestakingConfig::default(),
            mempool_horizon: 5,
            tx_round_window: DEFAULT_TX_ROUND_WINDOW,
            trace_bids: false,
        }
    }
}

/// Default bid increment: 20 ETH, about 6% of a default block's value.
pub const DEFAULT_DELTA: Gwei = 20_000_000_000;

/// Users transact during the first half of the slot.
pub const DEFAULT_TX_ROUND_WINDOW: u32 = 12;

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        fn check(ok: bool, key: &str, msg: String) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::validation(key, msg))
            }
        }

        check(
            self.attack_user_count <= self.n_users,
            "attack_user_count",
            format!("{} exceeds n_users {}", self.attack_user_count, self.n_users),
        )?;
        check(
            self.attack_builder_count <= self.n_builders,
            "attack_builder_count",
            format!(
                "{} exceeds n_builders {}",
                self.attack_builder_count, self.n_builders
            ),
        )?;
        check(
            self.attack_validator_count <= self.n_validators,
            "attack_validator_count",
            format!(
                "{} exceeds n_validators {}",
                self.attack_validator_count, self.n_validators
            ),
        )?;
        check(
            self.rounds_per_slot == ROUNDS_PER_SLOT,
            "rounds_per_slot",
            format!("must be {ROUNDS_PER_SLOT}, got {}", self.rounds_per_slot),
        )?;
        check(self.capacity >= 1, "capacity", "must be at least 1".into())?;
        check(self.delta > 0, "delta", "bid increment must be positive".into())?;
        check(
            (1..=ROUNDS_PER_SLOT).contains(&self.last_minute_threshold),
            "last_minute_threshold",
            format!("must lie in [1, 24], got {}", self.last_minute_threshold),
        )?;
        check(
            (1..=ROUNDS_PER_SLOT).contains(&self.initial_stop_round),
            "initial_stop_round",
            format!("must lie in [1, 24], got {}", self.initial_stop_round),
        )?;
        check(
            (1..=ROUNDS_PER_SLOT).contains(&self.tx_round_window),
            "tx_round_window",
            format!("must lie in [1, 24], got {}", self.tx_round_window),
        )?;
        check(
            (0.0..=1.0).contains(&self.last_minute_fraction),
            "last_minute_fraction",
            format!("must lie in [0, 1], got {}", self.last_minute_fraction),
        )?;
        check(
            (0.0..=1.0).contains(&self.graph.p),
            "graph.p",
            format!("must lie in [0, 1], got {}", self.graph.p),
        )?;
        check(
            (0.0..=1.0).contains(&self.distributions.mev_probability),
            "distributions.mev_probability",
            format!("must lie in [0, 1], got {}", self.distributions.mev_probability),
        )?;
        check(
            self.mempool_horizon >= 1,
            "mempool_horizon",
            "must be at least 1".into(),
        )?;
        self.graph.weight.validate()?;
        self.distributions.gas_fee.validate("distributions.gas_fee")?;
        self.distributions.mev.validate("distributions.mev")?;
        match self.mode {
            Mode::Epbs => {
                check(
                    self.n_builders >= 1,
                    "n_builders",
                    "ePBS needs at least one builder".into(),
                )?;
                check(
                    self.n_proposers >= 1 || self.restaking.enabled,
                    "n_proposers",
                    "ePBS needs at least one proposer".into(),
                )?;
            }
            Mode::Pos => check(
                self.n_validators >= 1,
                "n_validators",
                "PoS needs at least one validator".into(),
            )?,
        }
        check(
            self.node_count() >= 2,
            "n_users",
            format!("latency graph needs at least 2 agents, got {}", self.node_count()),
        )?;
        if self.restaking.enabled {
            let n = self.node_count();
            for a in &self.restaking.initial_stakes {
                check(
                    a.agent_id < n,
                    "restaking.initial_stakes",
                    format!("agent {} does not exist", a.agent_id),
                )?;
                check(
                    a.gamma.is_none_or(|g| g <= 1),
                    "restaking.initial_stakes",
                    format!("gamma for agent {} must be 0 or 1", a.agent_id),
                )?;
            }
        }
        Ok(())
    }

    /// Total agent count, which is also the latency-graph node count.
    pub fn node_count(&self) -> usize {
        match self.mode {
            Mode::Epbs => self.n_users + self.n_builders + self.n_proposers,
            Mode::Pos => self.n_users + self.n_validators,
        }
    }

    /// Attack count for the block-producer population of the configured mode.
    pub fn attack_producer_count(&self) -> usize {
        match self.mode {
            Mode::Epbs => self.attack_builder_count,
            Mode::Pos => self.attack_validator_count,
        }
    }
}
