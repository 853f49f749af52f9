//! Per-slot ePBS auction: 24 discrete rounds, latency-delayed bid
//! propagation, the proposer's pre-committed stopping round, winner
//! determination and utility settlement.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::agents::{bid_reactive, Planner};
use crate::model::{
    global_round, AgentId, AgentProfile, AttackKind, AuctionOutcome, Bid, BlockCandidate, Gwei,
    MevTransfer, SettlementRecord, SignedGwei, Strategy, Tau, Transaction, TxId, ROUNDS_PER_SLOT,
};
use crate::netlat::{arrival_round, LatencyGraph, UNREACHABLE};
use crate::par::{self, Exec};

const ROUNDS: usize = ROUNDS_PER_SLOT as usize;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AuctionError {
    /// No bid reached the proposer by its stopping round; the slot is skipped.
    #[error("slot {slot}: no bid reached the proposer by its stopping round")]
    NoVisibleBids { slot: u64, all_bids: Vec<Bid> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AuctionParams {
    pub capacity: usize,
    pub delta: Gwei,
}

/// A successful attack: `attacker_id` captures `amount` from the creator of
/// the victim.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Capture {
    pub attack_tx: TxId,
    pub attack_pos: usize,
    pub victim_tx: TxId,
    pub victim_pos: usize,
    pub attacker_id: AgentId,
    pub victim_creator: AgentId,
    pub amount: Gwei,
    /// Opposite leg of a sandwich by the same attacker, if both legs hold.
    pub sandwich_leg: Option<TxId>,
}

/// At most one capture per victim. Among the attacks on a victim that
/// satisfy their ordering constraint (front before, back after), the one
/// closest in block position wins; a front-run wins a distance tie. A
/// sandwich credits the victim's MEV once.
pub fn resolve_attack_success(txs: &[Transaction]) -> Vec<Capture> {
    let pos: HashMap<TxId, usize> = txs.iter().enumerate().map(|(i, t)| (t.tx_id, i)).collect();
    // victim position -> (distance, back?, attack position)
    let mut best: BTreeMap<usize, (usize, bool, usize)> = BTreeMap::new();
    let mut satisfied: Vec<(usize, usize)> = Vec::new();
    for (a, tx) in txs.iter().enumerate() {
        let Some(v) = tx.target.and_then(|t| pos.get(&t).copied()) else {
            continue;
        };
        if !txs[v].is_victim_candidate() {
            continue;
        }
        let ok = match tx.attack_kind {
            AttackKind::Front => a < v,
            AttackKind::Back => a > v,
            AttackKind::None => false,
        };
        if !ok {
            continue;
        }
        satisfied.push((a, v));
        let key = (a.abs_diff(v), tx.attack_kind == AttackKind::Back, a);
        best.entry(v)
            .and_modify(|cur| {
                if key < *cur {
                    *cur = key;
                }
            })
            .or_insert(key);
    }
    best.into_iter()
        .map(|(v, (_, _, a))| {
            let attacker = txs[a].creator_id;
            let sandwich_leg = satisfied
                .iter()
                .find(|&&(other, ov)| {
                    ov == v
                        && other != a
                        && txs[other].creator_id == attacker
                        && txs[other].attack_kind != txs[a].attack_kind
                })
                .map(|&(other, _)| txs[other].tx_id);
            Capture {
                attack_tx: txs[a].tx_id,
                attack_pos: a,
                victim_tx: txs[v].tx_id,
                victim_pos: v,
                attacker_id: attacker,
                victim_creator: txs[v].creator_id,
                amount: txs[v].mev_potential,
                sandwich_leg,
            }
        })
        .collect()
}

/// Valuation of each builder's best block at every in-slot round.
fn round_valuations(
    planner: &Planner<'_>,
    builder: &AgentProfile,
    slot: u64,
    graph: &LatencyGraph,
    capacity: usize,
) -> [Gwei; ROUNDS] {
    let cands = planner.candidates();
    let arrivals: Vec<u64> = cands
        .iter()
        .map(|t| arrival_round(t, builder.node, graph))
        .collect();
    let mut sorted = arrivals.clone();
    sorted.sort_unstable();
    let attack = builder.tau == Tau::Attack;
    let mut out = [0; ROUNDS];
    let mut seen = usize::MAX;
    let mut value = 0;
    let mut ptr = 0;
    for t in 1..=ROUNDS_PER_SLOT {
        let now = global_round(slot, t);
        while ptr < sorted.len() && sorted[ptr] <= now {
            ptr += 1;
        }
        if ptr != seen {
            seen = ptr;
            value = planner.plan(|i| arrivals[i] <= now, capacity, attack).value;
        }
        out[t as usize - 1] = value;
    }
    out
}

fn builder_block(
    planner: &Planner<'_>,
    builder: &AgentProfile,
    slot: u64,
    round: u32,
    graph: &LatencyGraph,
    capacity: usize,
) -> BlockCandidate {
    let now = global_round(slot, round);
    let cands = planner.candidates();
    let plan = planner.plan(
        |i| arrival_round(&cands[i], builder.node, graph) <= now,
        capacity,
        builder.tau == Tau::Attack,
    );
    let txs = plan.materialize(cands, builder.agent_id, now);
    let block = BlockCandidate::new(builder.agent_id, slot, round, txs);
    debug_assert_eq!(block.valuation, plan.value);
    block
}

/// Runs all 24 rounds of one slot's auction.
///
/// Every builder rebuilds its block from its latency-filtered mempool each
/// round and bids per its strategy against the competing bids that have
/// reached it from earlier rounds. Bids keep flowing after `stop_round`
/// since builders cannot observe termination. The proposer takes the highest
/// bid visible at `stop_round`; ties go to the earlier emission round, then
/// the smaller builder id. The log keeps one entry per strict increase of a
/// builder's bid.
#[allow(clippy::too_many_arguments)]
pub fn run_slot_auction(
    slot: u64,
    builders: &[AgentProfile],
    proposer: &AgentProfile,
    stop_round: u32,
    graph: &LatencyGraph,
    candidates: &[Transaction],
    params: &AuctionParams,
    exec: Exec,
) -> Result<AuctionOutcome, AuctionError> {
    assert!(!builders.is_empty(), "auction needs at least one builder");
    assert!((1..=ROUNDS_PER_SLOT).contains(&stop_round));
    let planner = Planner::new(candidates);
    let valuations: Vec<[Gwei; ROUNDS]> = par::map(exec, builders, |b| {
        round_valuations(&planner, b, slot, graph, params.capacity)
    });

    let nb = builders.len();
    let dist: Vec<u32> = (0..nb * nb)
        .map(|x| graph.distance(builders[x / nb].node, builders[x % nb].node))
        .collect();
    // best[j * (ROUNDS + 1) + k]: highest bid of builder j emitted in rounds 1..=k
    let stride = ROUNDS + 1;
    let mut best: Vec<Option<Gwei>> = vec![None; nb * stride];
    let mut log: Vec<Bid> = Vec::new();
    let mut emitted: Vec<Option<Gwei>> = vec![None; nb];

    for t in 1..=ROUNDS_PER_SLOT {
        let tu = t as usize;
        for i in 0..nb {
            if let Some(Strategy::LastMinute { threshold }) = builders[i].strategy {
                if t < threshold {
                    emitted[i] = None;
                    continue;
                }
            }
            let mut highest: Option<Gwei> = None;
            for j in (0..nb).filter(|&j| j != i) {
                let d = dist[i * nb + j];
                if d == UNREACHABLE || d as usize >= tu {
                    continue;
                }
                let k = (tu - 1).min(tu - d as usize);
                if let Some(b) = best[j * stride + k] {
                    highest = Some(highest.map_or(b, |h| h.max(b)));
                }
            }
            emitted[i] = Some(bid_reactive(valuations[i][tu - 1], highest, params.delta));
        }
        for i in 0..nb {
            let prev = best[i * stride + tu - 1];
            best[i * stride + tu] = prev;
            if let Some(b) = emitted[i] {
                if prev.is_none_or(|p| b > p) {
                    best[i * stride + tu] = Some(b);
                    log.push(Bid {
                        builder_id: builders[i].agent_id,
                        slot,
                        round: t,
                        amount: b,
                        valuation: valuations[i][tu - 1],
                    });
                }
            }
        }
    }

    // (amount, emission round, index) of the best bid visible to the proposer
    let mut winner: Option<(Gwei, u32, usize)> = None;
    for (j, b) in builders.iter().enumerate() {
        let d = graph.distance(proposer.node, b.node);
        if d == UNREACHABLE || d >= stop_round {
            continue;
        }
        let k = (stop_round - d) as usize;
        let Some(amount) = best[j * stride + k] else {
            continue;
        };
        let round = log
            .iter()
            .find(|e| e.builder_id == b.agent_id && e.amount == amount)
            .map(|e| e.round)
            .expect("visible bid is logged");
        let better = match winner {
            None => true,
            Some((wa, wr, _)) => amount > wa || (amount == wa && round < wr),
        };
        if better {
            winner = Some((amount, round, j));
        }
    }
    let Some((winning_bid, round, w)) = winner else {
        return Err(AuctionError::NoVisibleBids { slot, all_bids: log });
    };

    let block = builder_block(&planner, &builders[w], slot, round, graph, params.capacity);
    debug_assert_eq!(block.valuation, valuations[w][round as usize - 1]);
    let final_valuations = builders
        .iter()
        .zip(&valuations)
        .map(|(b, v)| (b.agent_id, v[stop_round as usize - 1]))
        .collect();
    Ok(AuctionOutcome {
        slot,
        stop_round,
        proposer_id: proposer.agent_id,
        winner_id: builders[w].agent_id,
        winning_bid,
        block,
        all_bids: log,
        final_valuations,
    })
}

/// Settles a produced block. The producer receives its valuation less any
/// payment to the proposer; every other creator of an included transaction
/// pays its gas fee; each capture moves the victim's MEV potential from the
/// victim's creator to the attacker (already inside the valuation when the
/// attacker is the producer).
pub fn settle_block(
    slot: u64,
    txs: &[Transaction],
    producer: AgentId,
    producer_valuation: Gwei,
    payment: Option<(AgentId, Gwei)>,
) -> SettlementRecord {
    let mut rec = SettlementRecord::empty(slot);
    let paid = payment.map_or(0, |(_, b)| b);
    rec.credit(producer, producer_valuation as SignedGwei - paid as SignedGwei);
    if let Some((proposer, bid)) = payment {
        rec.credit(proposer, bid as SignedGwei);
    }
    for tx in txs {
        rec.gas_total += tx.gas_fee;
        if tx.creator_id != producer {
            rec.credit(tx.creator_id, -(tx.gas_fee as SignedGwei));
        }
    }
    let captures = resolve_attack_success(txs);
    let mut captured_victims: Vec<TxId> = Vec::with_capacity(captures.len());
    for c in &captures {
        captured_victims.push(c.victim_tx);
        rec.credit(c.victim_creator, -(c.amount as SignedGwei));
        if c.attacker_id == producer {
            rec.mev_captured_by_producer += c.amount;
        } else {
            rec.credit(c.attacker_id, c.amount as SignedGwei);
            rec.mev_captured_by_users += c.amount;
        }
        rec.transfers.push(MevTransfer {
            victim_tx: c.victim_tx,
            attack_tx: c.attack_tx,
            from: c.victim_creator,
            to: c.attacker_id,
            amount: c.amount,
        });
    }
    rec.mev_uncaptured = txs
        .iter()
        .filter(|t| t.is_victim_candidate() && !captured_victims.contains(&t.tx_id))
        .map(|t| t.mev_potential)
        .sum();
    rec
}

/// Winner keeps `v - b`, the proposer receives `b`, users settle their
/// included transactions.
pub fn settle_epbs(outcome: &AuctionOutcome) -> SettlementRecord {
    settle_block(
        outcome.slot,
        &outcome.block.txs,
        outcome.winner_id,
        outcome.block.valuation,
        Some((outcome.proposer_id, outcome.winning_bid)),
    )
}

/// The validator keeps the full block valuation.
pub fn settle_pos(block: &BlockCandidate) -> SettlementRecord {
    settle_block(block.slot, &block.txs, block.builder_id, block.valuation, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Transaction as Tx;

    fn victim(id: TxId, creator: AgentId, gas: Gwei, mev: Gwei) -> Tx {
        Tx::benign(id, creator, 1, gas, mev)
    }

    #[test]
    fn front_before_victim_captures() {
        let txs = vec![
            Tx::attack(2, 9, 2, 21, 1, AttackKind::Front),
            victim(1, 5, 20, 50),
        ];
        let caps = resolve_attack_success(&txs);
        assert_eq!(caps.len(), 1);
        assert_eq!(caps[0].attacker_id, 9);
        assert_eq!(caps[0].amount, 50);
    }

    #[test]
    fn front_after_victim_fails() {
        let txs = vec![
            victim(1, 5, 20, 50),
            Tx::attack(2, 9, 2, 21, 1, AttackKind::Front),
        ];
        assert!(resolve_attack_success(&txs).is_empty());
    }

    #[test]
    fn closest_attack_wins() {
        let txs = vec![
            Tx::attack(2, 9, 2, 21, 1, AttackKind::Front),
            Tx::benign(3, 6, 1, 10, 0),
            Tx::benign(4, 6, 1, 10, 0),
            Tx::producer_attack(7, 3, 1),
            victim(1, 5, 20, 50),
        ];
        // every position pair for the two fronts: the nearer one captures
        let caps = resolve_attack_success(&txs);
        assert_eq!(caps.len(), 1);
        assert_eq!(caps[0].attacker_id, 7);
        assert_eq!(caps[0].attack_pos, 3);
    }

    #[test]
    fn distance_tie_goes_to_front_run() {
        let txs = vec![
            Tx::attack(2, 9, 2, 21, 1, AttackKind::Front),
            victim(1, 5, 20, 50),
            Tx::attack(3, 8, 2, 19, 1, AttackKind::Back),
        ];
        let caps = resolve_attack_success(&txs);
        assert_eq!(caps.len(), 1);
        assert_eq!(caps[0].attacker_id, 9);
        assert_eq!(caps[0].sandwich_leg, None);
    }

    #[test]
    fn sandwich_credits_once() {
        let txs = vec![
            Tx::attack(2, 9, 2, 21, 1, AttackKind::Front),
            victim(1, 5, 20, 50),
            Tx::attack(3, 9, 2, 19, 1, AttackKind::Back),
        ];
        let caps = resolve_attack_success(&txs);
        assert_eq!(caps.len(), 1);
        assert_eq!(caps[0].sandwich_leg, Some(3));
        let rec = settle_block(0, &txs, 42, txs.iter().map(|t| t.gas_fee).sum(), None);
        assert_eq!(rec.utility_of(9), 50 - 21 - 19);
        assert_eq!(rec.mev_captured_by_users, 50);
    }

    #[test]
    fn user_front_run_settlement() {
        let txs = vec![
            Tx::attack(2, 9, 2, 21, 1, AttackKind::Front),
            victim(1, 5, 20, 50),
        ];
        let rec = settle_block(0, &txs, 42, 41, Some((43, 30)));
        assert_eq!(rec.utility_of(9), 29);
        assert_eq!(rec.utility_of(5), -70);
        assert_eq!(rec.utility_of(42), 11);
        assert_eq!(rec.utility_of(43), 30);
        assert_eq!(rec.mev_captured_by_users, 50);
        assert_eq!(rec.mev_uncaptured, 0);
        assert_eq!(rec.utility.values().sum::<i64>(), 0);
    }

    #[test]
    fn gas_only_user_term() {
        let txs = vec![Tx::benign(1, 5, 1, 10, 0)];
        let rec = settle_block(0, &txs, 42, 10, Some((43, 8)));
        assert_eq!(rec.utility_of(5), -10);
        assert_eq!(rec.utility_of(42), 2);
        assert_eq!(rec.utility_of(43), 8);
    }

    #[test]
    fn uncaptured_counts_included_victims() {
        let txs = vec![victim(1, 5, 20, 50), Tx::benign(2, 6, 1, 3, 0)];
        let rec = settle_block(0, &txs, 42, 23, None);
        assert_eq!(rec.mev_uncaptured, 50);
        assert_eq!(rec.total_mev(), 50);
    }

    fn zero_latency(n: usize) -> LatencyGraph {
        LatencyGraph::complete(n, 0)
    }

    fn params(delta: Gwei) -> AuctionParams {
        AuctionParams { capacity: 10, delta }
    }

    #[test]
    fn two_reactive_builders_converge_between_valuations() {
        // Builder 1 sees a victim worth 40 on top of a 60-gwei fee block.
        let cands = vec![Tx::benign(1, 0, 1, 60, 40)];
        let builders = vec![
            AgentProfile::builder(1, Tau::Attack, Strategy::Reactive),
            AgentProfile::builder(2, Tau::Benign, Strategy::Reactive),
        ];
        let proposer = AgentProfile::proposer(3);
        let out = run_slot_auction(
            0,
            &builders,
            &proposer,
            24,
            &zero_latency(4),
            &cands,
            &AuctionParams {
                capacity: 10,
                delta: 10,
            },
            Exec::Sequential,
        )
        .unwrap();
        assert_eq!(out.winner_id, 1);
        assert_eq!(out.block.valuation, 100);
        assert!((60..=100).contains(&out.winning_bid));
        assert!(out.winning_bid - 60 <= 10);
        let rec = settle_epbs(&out);
        assert_eq!(rec.utility_of(1), 100 - out.winning_bid as i64);
        assert_eq!(rec.utility_of(3), out.winning_bid as i64);
        assert_eq!(rec.utility.values().sum::<i64>(), 0);
        assert_eq!(rec.gas_total + rec.mev_captured_by_producer, out.block.valuation);
    }

    #[test]
    fn single_builder_wins_at_opening_bid() {
        let cands = vec![Tx::benign(1, 0, 1, 40, 0)];
        let builders = vec![AgentProfile::builder(1, Tau::Benign, Strategy::Reactive)];
        let proposer = AgentProfile::proposer(2);
        let out = run_slot_auction(
            0,
            &builders,
            &proposer,
            24,
            &zero_latency(3),
            &cands,
            &params(1),
            Exec::Sequential,
        )
        .unwrap();
        assert_eq!(out.winning_bid, 1);
        assert_eq!(out.block.valuation, 40);
    }

    #[test]
    fn last_minute_only_auction_stopped_early_is_skipped() {
        let cands = vec![Tx::benign(1, 0, 1, 40, 0)];
        let builders = vec![
            AgentProfile::builder(1, Tau::Benign, Strategy::LastMinute { threshold: 20 }),
            AgentProfile::builder(2, Tau::Benign, Strategy::LastMinute { threshold: 20 }),
        ];
        let proposer = AgentProfile::proposer(3);
        let err = run_slot_auction(
            0,
            &builders,
            &proposer,
            5,
            &zero_latency(4),
            &cands,
            &params(1),
            Exec::Sequential,
        )
        .unwrap_err();
        let AuctionError::NoVisibleBids { all_bids, .. } = err;
        assert!(all_bids.iter().all(|b| b.round >= 20));
        assert!(!all_bids.is_empty());
    }

    #[test]
    fn latency_hides_late_bids_from_proposer() {
        // proposer 2 is 3 rounds away from builder 1
        let g = LatencyGraph::from_edges(
            3,
            vec![
                crate::netlat::Edge { a: 0, b: 1, weight: 0 },
                crate::netlat::Edge { a: 1, b: 2, weight: 3 },
            ],
        );
        let cands = vec![Tx::benign(1, 0, 1, 40, 0)];
        let builders = vec![AgentProfile::builder(1, Tau::Benign, Strategy::Reactive)];
        let proposer = AgentProfile::proposer(2);
        assert!(run_slot_auction(0, &builders, &proposer, 3, &g, &cands, &params(1), Exec::Sequential).is_err());
        let out = run_slot_auction(0, &builders, &proposer, 4, &g, &cands, &params(1), Exec::Sequential).unwrap();
        assert_eq!(out.block.round, 1);
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let cands: Vec<Tx> = (0..40)
            .map(|i| Tx::benign(i, (i % 5) as usize, 1 + i % 24, 10 + (i * 7) % 13, (i * 11) % 5))
            .collect();
        let builders: Vec<AgentProfile> = (5..15)
            .map(|id| {
                let tau = if id % 2 == 0 { Tau::Attack } else { Tau::Benign };
                AgentProfile::builder(id, tau, Strategy::Reactive)
            })
            .collect();
        let proposer = AgentProfile::proposer(15);
        let g = LatencyGraph::complete(16, 1);
        let run = |exec| run_slot_auction(0, &builders, &proposer, 20, &g, &cands, &params(1), exec);
        assert_eq!(run(Exec::Sequential), run(Exec::Parallel));
    }
}
