//! Post-run analytics and the closed-form theory probes.

use std::fmt;

use crate::error::{Error, Result};
use crate::model::{AgentId, Gwei, Role, SignedGwei, Transaction};
use crate::sim::RunRecord;

/// Exact non-negative rational.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ratio {
    pub num: u128,
    pub den: u128,
}

impl Ratio {
    pub fn new(num: u128, den: u128) -> Ratio {
        assert!(den > 0, "zero denominator");
        Ratio { num, den }
    }

    pub fn zero() -> Ratio {
        Ratio { num: 0, den: 1 }
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Decimal expansion rounded half-up to `places` digits.
    pub fn to_decimal(self, places: u32) -> String {
        let scale = 10u128.pow(places);
        let scaled = (self.num * scale * 2 + self.den) / (self.den * 2);
        let int = scaled / scale;
        if places == 0 {
            return int.to_string();
        }
        format!("{int}.{:0width$}", scaled % scale, width = places as usize)
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_decimal(6))
    }
}

/// Population Gini coefficient `sum_i sum_j |x_i - x_j| / (2 n sum x)`.
pub fn gini(values: &[SignedGwei]) -> Result<Ratio> {
    if let Some(&neg) = values.iter().find(|&&v| v < 0) {
        return Err(Error::NegativeValue(neg));
    }
    let total: u128 = values.iter().map(|&v| v as u128).sum();
    if total == 0 {
        return Err(Error::AllZero);
    }
    let mut xs: Vec<u128> = values.iter().map(|&v| v as u128).collect();
    xs.sort_unstable();
    let n = xs.len() as u128;
    // sum over ordered pairs of |x_i - x_j| = 2 * sum_i (2i - n + 1) x_(i)
    let (mut pos, mut neg) = (0u128, 0u128);
    for (i, &x) in xs.iter().enumerate() {
        let c = 2 * i as u128 + 1;
        if c >= n {
            pos += (c - n) * x;
        } else {
            neg += (n - c) * x;
        }
    }
    Ok(Ratio::new(2 * (pos - neg), 2 * n * total))
}

/// Pairs `i < j` with `created_at[i] > created_at[j]`, by merge sort.
pub fn inversion_count(created_at: &[u64]) -> u64 {
    fn sort(xs: &mut [u64], buf: &mut Vec<u64>) -> u64 {
        let n = xs.len();
        if n < 2 {
            return 0;
        }
        let mid = n / 2;
        let mut inv = sort(&mut xs[..mid], buf) + sort(&mut xs[mid..], buf);
        buf.clear();
        let (mut i, mut j) = (0, mid);
        while i < mid && j < n {
            if xs[j] < xs[i] {
                inv += (mid - i) as u64;
                buf.push(xs[j]);
                j += 1;
            } else {
                buf.push(xs[i]);
                i += 1;
            }
        }
        buf.extend_from_slice(&xs[i..mid]);
        buf.extend_from_slice(&xs[j..]);
        xs.copy_from_slice(buf);
        inv
    }
    let mut xs = created_at.to_vec();
    let mut buf = Vec::with_capacity(xs.len());
    sort(&mut xs, &mut buf)
}

pub fn block_inversions(block: &[Transaction]) -> u64 {
    inversion_count(&block.iter().map(|t| t.created_at).collect::<Vec<_>>())
}

/// Mean inversions per produced block; zero when nothing was produced.
pub fn mean_inversions(run: &RunRecord) -> Ratio {
    let produced: Vec<_> = run.slots.iter().filter(|s| !s.skipped).collect();
    if produced.is_empty() {
        return Ratio::zero();
    }
    let total: u128 = produced.iter().map(|s| block_inversions(&s.block) as u128).sum();
    Ratio::new(total, produced.len() as u128)
}

/// Included victim MEV split by who captured it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MevBreakdown {
    pub user: Gwei,
    pub producer: Gwei,
    pub uncaptured: Gwei,
}

impl MevBreakdown {
    pub fn total(&self) -> Gwei {
        self.user + self.producer + self.uncaptured
    }

    /// `(user, producer, uncaptured)` shares; `None` when no MEV was included.
    pub fn shares(&self) -> Option<(Ratio, Ratio, Ratio)> {
        let t = self.total() as u128;
        (t > 0).then(|| {
            (
                Ratio::new(self.user as u128, t),
                Ratio::new(self.producer as u128, t),
                Ratio::new(self.uncaptured as u128, t),
            )
        })
    }
}

pub fn mev_breakdown(run: &RunRecord) -> MevBreakdown {
    let mut b = MevBreakdown {
        user: 0,
        producer: 0,
        uncaptured: 0,
    };
    for s in &run.slots {
        b.user += s.settlement.mev_captured_by_users;
        b.producer += s.settlement.mev_captured_by_producer;
        b.uncaptured += s.settlement.mev_uncaptured;
    }
    b
}

/// Winning bids over winner valuations, summed across produced slots.
pub fn proposer_share(run: &RunRecord) -> Result<Ratio> {
    let produced: Vec<_> = run.slots.iter().filter(|s| !s.skipped).collect();
    if produced.is_empty() {
        return Err(Error::NoSettledSlots);
    }
    let bids: u128 = produced.iter().map(|s| s.winning_bid as u128).sum();
    let vals: u128 = produced.iter().map(|s| s.valuation as u128).sum();
    if vals == 0 {
        return Err(Error::AllZero);
    }
    Ok(Ratio::new(bids, vals))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AuctionEfficiency {
    /// Produced slots whose winner held the top stopping-round valuation.
    pub top_wins: u64,
    pub slots: u64,
    /// Mean winning bid over the top and the second valuation, across slots
    /// with at least two bidders and positive valuations.
    pub mean_bid_v1: f64,
    pub mean_bid_v2: f64,
    pub ratio_slots: u64,
}

impl AuctionEfficiency {
    pub fn win_rate(&self) -> f64 {
        if self.slots == 0 {
            0.0
        } else {
            self.top_wins as f64 / self.slots as f64
        }
    }
}

pub fn auction_efficiency(run: &RunRecord) -> AuctionEfficiency {
    let mut e = AuctionEfficiency {
        top_wins: 0,
        slots: 0,
        mean_bid_v1: 0.0,
        mean_bid_v2: 0.0,
        ratio_slots: 0,
    };
    let (mut s1, mut s2) = (0.0, 0.0);
    for s in run.slots.iter().filter(|s| !s.skipped && !s.final_valuations.is_empty()) {
        let mut vals: Vec<Gwei> = s.final_valuations.iter().map(|&(_, v)| v).collect();
        vals.sort_unstable_by(|a, b| b.cmp(a));
        let winner_val = s
            .final_valuations
            .iter()
            .find(|&&(id, _)| Some(id) == s.producer_id)
            .map(|&(_, v)| v);
        e.slots += 1;
        if winner_val == Some(vals[0]) {
            e.top_wins += 1;
        }
        if vals.len() >= 2 && vals[1] > 0 {
            e.ratio_slots += 1;
            s1 += s.winning_bid as f64 / vals[0] as f64;
            s2 += s.winning_bid as f64 / vals[1] as f64;
        }
    }
    if e.ratio_slots > 0 {
        e.mean_bid_v1 = s1 / e.ratio_slots as f64;
        e.mean_bid_v2 = s2 / e.ratio_slots as f64;
    }
    e
}

/// Cumulative profits of the block producers of the run's mode: builders
/// under ePBS, validators under PoS.
pub fn producer_profits(run: &RunRecord) -> Vec<SignedGwei> {
    run.agents
        .iter()
        .filter(|a| matches!(a.role, Role::Builder | Role::Validator))
        .map(|a| run.profit[a.agent_id])
        .collect()
}

/// Gini of producer profits; `None` when all are zero.
pub fn gini_producer(run: &RunRecord) -> Result<Option<Ratio>> {
    match gini(&producer_profits(run)) {
        Ok(g) => Ok(Some(g)),
        Err(Error::AllZero) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Posterior inclusion probability `omega*theta / (1 + theta*(omega - 1))`.
pub fn phi_epbs(theta: f64, omega: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::Domain {
            name: "theta",
            value: theta,
            reason: "must lie in [0, 1]",
        });
    }
    if !(omega >= 1.0 && omega.is_finite()) {
        return Err(Error::Domain {
            name: "omega",
            value: omega,
            reason: "must be finite and at least 1",
        });
    }
    Ok(omega * theta / (1.0 + theta * (omega - 1.0)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GrowthRole {
    Builder,
    Proposer,
    Validator,
}

impl std::str::FromStr for GrowthRole {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "builder" => Ok(GrowthRole::Builder),
            "proposer" => Ok(GrowthRole::Proposer),
            "validator" => Ok(GrowthRole::Validator),
            other => Err(format!("unknown role `{other}` (expected builder, proposer or validator)")),
        }
    }
}

/// Reward inputs of the stake growth recurrences: block value `v`, winning
/// bid `b`, win probability `f` and margin `pi`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardParams {
    pub v: f64,
    pub b: f64,
    pub f: f64,
    pub pi: f64,
}

/// Expected per-slot stake growth factor.
pub fn growth_rate(role: GrowthRole, s: f64, total: f64, r: RewardParams, gamma: f64) -> Result<f64> {
    let dom = |name, value: f64, reason| Err(Error::Domain { name, value, reason });
    if !(s > 0.0 && s.is_finite()) {
        return dom("s", s, "stake must be positive");
    }
    if !(total >= s && total.is_finite()) {
        return dom("total", total, "total stake must be at least s");
    }
    if !(0.0..=1.0).contains(&r.f) {
        return dom("f", r.f, "must lie in [0, 1]");
    }
    if !(0.0..=1.0).contains(&r.pi) {
        return dom("pi", r.pi, "must lie in [0, 1]");
    }
    if !(0.0..=1.0).contains(&gamma) {
        return dom("gamma", gamma, "must lie in [0, 1]");
    }
    let inc = match role {
        GrowthRole::Validator => r.v / total,
        GrowthRole::Proposer => r.b / total,
        GrowthRole::Builder => {
            let fp = r.f * r.pi;
            r.v * (1.0 - fp) / total + fp * r.v / s
        }
    };
    Ok(1.0 + gamma * inc)
}

/// Slots until the agent's cumulative profit first reaches `target`;
/// `Some(0)` for a zero target, `None` if never reached.
pub fn blocks_to_target(run: &RunRecord, agent: AgentId, target: Gwei) -> Result<Option<u64>> {
    run.agent(agent)?;
    if target == 0 {
        return Ok(Some(0));
    }
    let mut cum: i128 = 0;
    for (i, s) in run.slots.iter().enumerate() {
        cum += s.settlement.utility_of(agent) as i128;
        if cum >= target as i128 {
            return Ok(Some(i as u64 + 1));
        }
    }
    Ok(None)
}

/// `blocks_to_target` for every agent in one pass.
pub fn blocks_to_target_all(run: &RunRecord, target: Gwei) -> Vec<Option<u64>> {
    let n = run.agents.len();
    if target == 0 {
        return vec![Some(0); n];
    }
    let mut cum = vec![0i128; n];
    let mut hit = vec![None; n];
    for (i, s) in run.slots.iter().enumerate() {
        for (&id, &u) in &s.settlement.utility {
            cum[id] += u as i128;
            if hit[id].is_none() && cum[id] >= target as i128 {
                hit[id] = Some(i as u64 + 1);
            }
        }
    }
    hit
}

/// Mean of `blocks_to_target` over a cohort; agents that never reach the
/// target count as the run length.
pub fn mean_blocks_to_target(run: &RunRecord, hits: &[Option<u64>], cohort: &[AgentId]) -> Option<f64> {
    if cohort.is_empty() {
        return None;
    }
    let horizon = run.slots.len() as u64;
    let sum: u64 = cohort.iter().map(|&id| hits[id].unwrap_or(horizon)).sum();
    Some(sum as f64 / cohort.len() as f64)
}
