//! Latency graph, all-pairs shortest distances and latency-filtered views of
//! mempools and bid histories.
//!
//! Agents occupy the node whose index equals their agent id.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Bid, Transaction};

/// Distance sentinel for node pairs with no connecting path.
pub const UNREACHABLE: u32 = u32::MAX;

/// Edge-weight sampler, in rounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum WeightRule {
    Constant { value: u32 },
    /// Uniform integer in `low..=high`.
    Uniform { low: u32, high: u32 },
}

impl WeightRule {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match *self {
            WeightRule::Constant { value } => value,
            WeightRule::Uniform { low, high } => rng.random_range(low..=high),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            WeightRule::Uniform { low, high } if low > high => Err(Error::validation(
                "graph.weight",
                format!("uniform weight range {low}..={high} is empty"),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub weight: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatencyGraph {
    node_count: usize,
    edges: Vec<Edge>,
    dist: Vec<u32>,
}

impl LatencyGraph {
    pub fn from_edges(node_count: usize, edges: Vec<Edge>) -> Self {
        let dist = shortest_paths(node_count, &edges);
        LatencyGraph {
            node_count,
            edges,
            dist,
        }
    }

    /// Complete graph with every edge weighted `weight`.
    pub fn complete(node_count: usize, weight: u32) -> Self {
        let mut edges = Vec::with_capacity(node_count * node_count.saturating_sub(1) / 2);
        for a in 0..node_count {
            for b in a + 1..node_count {
                edges.push(Edge { a, b, weight });
            }
        }
        Self::from_edges(node_count, edges)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    #[inline]
    pub fn distance(&self, i: usize, j: usize) -> u32 {
        self.dist[i * self.node_count + j]
    }

    /// Largest finite distance.
    pub fn diameter(&self) -> u32 {
        self.dist
            .iter()
            .copied()
            .filter(|&d| d != UNREACHABLE)
            .max()
            .unwrap_or(0)
    }

    pub fn is_connected(&self) -> bool {
        !self.dist.contains(&UNREACHABLE)
    }

    /// Edge list as CSV `node_i,node_j,weight`.
    pub fn write_edge_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "node_i,node_j,weight")?;
        for e in &self.edges {
            writeln!(out, "{},{},{}", e.a, e.b, e.weight)?;
        }
        Ok(())
    }
}

/// Samples G(n, p) with weights from `weight_rule`, then joins any
/// disconnected components with a chain of unit-weight edges between the
/// smallest node of each consecutive component.
///
/// Pairs are visited in lexicographic order `(i, j), i < j`; each pair
/// consumes one Bernoulli draw and each accepted edge one weight draw.
pub fn generate_erdos_renyi<R: Rng + ?Sized>(
    n: usize,
    p: f64,
    weight_rule: WeightRule,
    rng: &mut R,
) -> Result<LatencyGraph> {
    if n < 2 {
        return Err(Error::TooFewNodes(n));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::EdgeProbability(p));
    }
    let mut edges = Vec::new();
    let mut uf = UnionFind::new(n);
    for a in 0..n {
        for b in a + 1..n {
            if rng.random_bool(p) {
                let weight = weight_rule.sample(rng);
                edges.push(Edge { a, b, weight });
                uf.union(a, b);
            }
        }
    }
    // Component representatives in node order; `find` may not return the
    // smallest member, so track it explicitly.
    let mut seen_roots = Vec::new();
    let mut reps = Vec::new();
    for v in 0..n {
        let r = uf.find(v);
        if !seen_roots.contains(&r) {
            seen_roots.push(r);
            reps.push(v);
        }
    }
    for w in reps.windows(2) {
        edges.push(Edge {
            a: w[0],
            b: w[1],
            weight: 1,
        });
    }
    Ok(LatencyGraph::from_edges(n, edges))
}

/// Dense all-pairs shortest distances (Floyd–Warshall), row-major.
pub fn shortest_paths(n: usize, edges: &[Edge]) -> Vec<u32> {
    let mut d = vec![UNREACHABLE; n * n];
    for i in 0..n {
        d[i * n + i] = 0;
    }
    for e in edges {
        let (a, b) = (e.a, e.b);
        if e.weight < d[a * n + b] {
            d[a * n + b] = e.weight;
            d[b * n + a] = e.weight;
        }
    }
    for k in 0..n {
        for i in 0..n {
            let dik = d[i * n + k];
            if dik == UNREACHABLE {
                continue;
            }
            for j in 0..n {
                let dkj = d[k * n + j];
                if dkj == UNREACHABLE {
                    continue;
                }
                let via = dik.saturating_add(dkj);
                if via < d[i * n + j] {
                    d[i * n + j] = via;
                }
            }
        }
    }
    d
}

/// Round at which a transaction becomes visible at `node`.
#[inline]
pub fn arrival_round(tx: &Transaction, node: usize, graph: &LatencyGraph) -> u64 {
    let d = graph.distance(node, tx.creator_id);
    if d == UNREACHABLE {
        u64::MAX
    } else {
        tx.created_at + u64::from(d)
    }
}

/// Transactions that could have reached `node` by global `round`.
pub fn visible_mempool<'a>(
    node: usize,
    round: u64,
    all_txs: &'a [Transaction],
    graph: &LatencyGraph,
) -> Vec<&'a Transaction> {
    all_txs
        .iter()
        .filter(|tx| arrival_round(tx, node, graph) <= round)
        .collect()
}

/// Bids that could have reached `node` by in-slot `round`.
pub fn visible_bids<'a>(node: usize, round: u32, bid_log: &'a [Bid], graph: &LatencyGraph) -> Vec<&'a Bid> {
    bid_log
        .iter()
        .filter(|b| {
            let d = graph.distance(node, b.builder_id);
            d != UNREACHABLE && u64::from(d) + u64::from(b.round) <= u64::from(round)
        })
        .collect()
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive simple-path enumeration; the independent distance oracle.
    fn brute_force_distance(n: usize, edges: &[Edge], src: usize, dst: usize) -> u32 {
        fn dfs(
            v: usize,
            dst: usize,
            adj: &[Vec<(usize, u32)>],
            on_path: &mut [bool],
            len: u32,
            best: &mut u32,
        ) {
            if v == dst {
                *best = (*best).min(len);
                return;
            }
            for &(w, wt) in &adj[v] {
                if !on_path[w] {
                    on_path[w] = true;
                    dfs(w, dst, adj, on_path, len + wt, best);
                    on_path[w] = false;
                }
            }
        }
        let mut adj = vec![Vec::new(); n];
        for e in edges {
            adj[e.a].push((e.b, e.weight));
            adj[e.b].push((e.a, e.weight));
        }
        let mut best = UNREACHABLE;
        let mut on_path = vec![false; n];
        on_path[src] = true;
        dfs(src, dst, &adj, &mut on_path, 0, &mut best);
        best
    }

    fn e(a: usize, b: usize, weight: u32) -> Edge {
        Edge { a, b, weight }
    }

    #[test]
    fn complete_triangle_unit_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = generate_erdos_renyi(3, 1.0, WeightRule::Constant { value: 1 }, &mut rng).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(g.distance(i, j), u32::from(i != j));
            }
        }
    }

    #[test]
    fn empty_sample_is_repaired_into_a_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = generate_erdos_renyi(5, 0.0, WeightRule::Constant { value: 1 }, &mut rng).unwrap();
        let expected: Vec<Edge> = (0..4).map(|i| e(i, i + 1, 1)).collect();
        assert_eq!(g.edges(), expected.as_slice());
        assert_eq!(g.distance(0, 4), 4);
        assert_eq!(brute_force_distance(5, g.edges(), 0, 4), 4);
    }

    #[test]
    fn single_edge_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = generate_erdos_renyi(2, 1.0, WeightRule::Constant { value: 3 }, &mut rng).unwrap();
        assert_eq!(g.distance(0, 1), 3);
    }

    #[test]
    fn rejects_fewer_than_two_nodes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            generate_erdos_renyi(1, 0.5, WeightRule::Constant { value: 1 }, &mut rng),
            Err(Error::TooFewNodes(1))
        ));
    }

    #[test]
    fn shortest_path_beats_heavy_direct_edge() {
        let edges = vec![e(0, 1, 2), e(1, 2, 2), e(0, 2, 5)];
        let d = shortest_paths(3, &edges);
        assert_eq!(d[2], 4);
        assert_eq!(brute_force_distance(3, &edges, 0, 2), 4);
    }

    #[test]
    fn single_node_matrix() {
        assert_eq!(shortest_paths(1, &[]), vec![0]);
    }

    #[test]
    fn heavy_triangle_edge_is_bypassed() {
        let edges = vec![e(0, 1, 1), e(1, 2, 1), e(0, 2, 10)];
        let d = shortest_paths(3, &edges);
        assert_eq!(d[2], 2);
        assert_eq!(brute_force_distance(3, &edges, 0, 2), 2);
    }

    #[test]
    fn disconnected_pairs_are_unreachable() {
        let d = shortest_paths(3, &[e(0, 1, 1)]);
        assert_eq!(d[2], UNREACHABLE);
        assert_eq!(d[5], UNREACHABLE);
    }

    fn tx_at(id: u64, creator: usize, created_at: u64) -> Transaction {
        Transaction::benign(id, creator, created_at, 1, 0)
    }

    #[test]
    fn mempool_visibility_respects_latency() {
        // node 0 -- 3 -- node 1
        let g = LatencyGraph::from_edges(2, vec![e(0, 1, 3)]);
        let txs = vec![tx_at(1, 1, 5)];
        assert!(visible_mempool(0, 7, &txs, &g).is_empty());
        assert_eq!(visible_mempool(0, 8, &txs, &g).len(), 1);
        // own transaction is visible at creation
        assert_eq!(visible_mempool(1, 5, &txs, &g).len(), 1);
        assert!(visible_mempool(1, 0, &txs, &g).is_empty());
    }

    fn bid(builder: usize, round: u32) -> Bid {
        Bid {
            builder_id: builder,
            slot: 0,
            round,
            amount: 10,
            valuation: 10,
        }
    }

    #[test]
    fn bid_visibility_respects_latency() {
        let g = LatencyGraph::from_edges(2, vec![e(0, 1, 1)]);
        let log = vec![bid(1, 2)];
        assert_eq!(visible_bids(0, 3, &log, &g).len(), 1);
        assert!(visible_bids(0, 2, &log, &g).is_empty());
        assert_eq!(visible_bids(1, 2, &log, &g).len(), 1);
    }

    #[test]
    fn edge_csv_dump() {
        let g = LatencyGraph::from_edges(3, vec![e(0, 1, 1), e(1, 2, 2)]);
        let mut out = Vec::new();
        g.write_edge_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "node_i,node_j,weight\n0,1,1\n1,2,2\n");
    }

    proptest! {
        #[test]
        fn distances_match_path_enumeration(
            n in 2usize..=9,
            p in 0.0f64..0.6,
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = generate_erdos_renyi(n, p, WeightRule::Uniform { low: 0, high: 3 }, &mut rng).unwrap();
            prop_assert!(g.is_connected());
            for i in 0..n {
                prop_assert_eq!(g.distance(i, i), 0);
                for j in 0..n {
                    prop_assert_eq!(g.distance(i, j), g.distance(j, i));
                    prop_assert_eq!(g.distance(i, j), brute_force_distance(n, g.edges(), i, j));
                    for k in 0..n {
                        prop_assert!(g.distance(i, j) <= g.distance(i, k) + g.distance(k, j));
                    }
                }
            }
            for edge in g.edges() {
                prop_assert!(g.distance(edge.a, edge.b) <= edge.weight);
            }
        }

        #[test]
        fn mempool_view_grows_with_round(seed in any::<u64>(), node in 0usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = generate_erdos_renyi(6, 0.3, WeightRule::Uniform { low: 0, high: 2 }, &mut rng).unwrap();
            let txs: Vec<Transaction> = (0..20)
                .map(|i| tx_at(i, rng.random_range(0..6), rng.random_range(0..30)))
                .collect();
            let mut prev = 0;
            for r in 0..40 {
                let now = visible_mempool(node, r, &txs, &g).len();
                prop_assert!(now >= prev);
                prev = now;
            }
            prop_assert_eq!(prev, txs.len());
        }
    }

    #[test]
    fn zero_latency_complete_graph_sees_everything() {
        let g = LatencyGraph::complete(4, 0);
        let txs: Vec<Transaction> = (0..8).map(|i| tx_at(i, (i % 4) as usize, i)).collect();
        for node in 0..4 {
            for r in 0..10u64 {
                let global: Vec<_> = txs.iter().filter(|t| t.created_at <= r).collect();
                assert_eq!(visible_mempool(node, r, &txs, &g), global);
            }
        }
    }
}
