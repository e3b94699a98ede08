//! Seed-anchored L-hop neighborhood sampling, static or temporal.
//!
//! Every edge type is traversed in both directions. Relation `2e` walks
//! edge type `e` from child to parent, relation `2e + 1` from parent to
//! child. Sampled edges are stored as `(src, dst)` local indices where
//! `dst` is the frontier node and `src` the neighbor drawn for it, which is
//! the direction messages flow in the models.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::HeteroGraph;

#[derive(Debug, Error, PartialEq)]
pub enum SampleError {
    #[error("seed ({node_type}, {node}) is not a node of the graph")]
    UnknownSeed { node_type: usize, node: usize },
    #[error("fanout caps must be at least 1")]
    BadFanout,
    #[error("{seeds} seeds but {times} seed times")]
    SeedTimeMismatch { seeds: usize, times: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Child to parent.
    Forward,
    /// Parent to child.
    Reverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Relation {
    pub edge_type: usize,
    pub direction: Direction,
    /// Node type of the frontier node (message receiver).
    pub dst_type: usize,
    /// Node type of the sampled neighbor (message sender).
    pub src_type: usize,
}

pub fn relations(graph: &HeteroGraph) -> Vec<Relation> {
    graph
        .edge_types
        .iter()
        .enumerate()
        .flat_map(|(e, es)| {
            [
                Relation {
                    edge_type: e,
                    direction: Direction::Forward,
                    dst_type: es.child_type,
                    src_type: es.parent_type,
                },
                Relation {
                    edge_type: e,
                    direction: Direction::Reverse,
                    dst_type: es.parent_type,
                    src_type: es.child_type,
                },
            ]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Per-hop neighbor cap per node and relation; `usize::MAX` disables it.
    pub fanouts: Vec<usize>,
    /// Give every seed its own copy of its neighborhood. Temporal sampling
    /// is always disjoint.
    pub disjoint: bool,
    /// Require `tau(u) < t_seed` instead of `tau(u) <= t_seed`.
    pub strict: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            fanouts: vec![16, 16],
            disjoint: false,
            strict: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seed {
    pub node_type: usize,
    pub node: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampledSubgraph {
    pub seeds: Vec<Seed>,
    pub seed_times: Option<Vec<i64>>,
    /// `(node type, local index)` of each seed, aligned with `seeds`.
    pub seed_local: Vec<(usize, usize)>,
    /// Global node ids per type.
    pub nodes: Vec<Vec<u32>>,
    /// Hop at which each local node was first reached.
    pub hop: Vec<Vec<u8>>,
    /// Index of the seed each local node was reached from.
    pub anchor: Vec<Vec<u32>>,
    /// Per relation, `(src local, dst local)` edges.
    pub edges: Vec<Vec<(u32, u32)>>,
}

impl SampledSubgraph {
    pub fn num_nodes(&self) -> usize {
        self.nodes.iter().map(Vec::len).sum()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    /// Sampled nodes whose time is later than their anchor seed's time
    /// (or equal to it under `strict`). Empty for a causal sample.
    pub fn causality_violations(&self, graph: &HeteroGraph, strict: bool) -> Vec<(usize, usize)> {
        let Some(times) = &self.seed_times else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for (t, nodes) in self.nodes.iter().enumerate() {
            for (i, &g) in nodes.iter().enumerate() {
                if self.hop[t][i] == 0 {
                    continue;
                }
                if let Some(tau) = graph.node_types[t].time_of(g as usize) {
                    let limit = times[self.anchor[t][i] as usize];
                    if tau > limit || (strict && tau == limit) {
                        out.push((t, g as usize));
                    }
                }
            }
        }
        out
    }
}

/// One RNG stream per `(rng_seed, batch_index)`.
pub fn batch_rng(rng_seed: u64, batch_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    rng.set_stream(batch_index);
    rng
}

pub fn sample_static(
    graph: &HeteroGraph,
    seeds: &[Seed],
    config: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SampledSubgraph, SampleError> {
    sample(graph, seeds, None, config, rng)
}

pub fn sample_temporal(
    graph: &HeteroGraph,
    seeds: &[Seed],
    seed_times: &[i64],
    config: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SampledSubgraph, SampleError> {
    sample(graph, seeds, Some(seed_times), config, rng)
}

/// BFS expansion from the seeds. At each hop and for each frontier node and
/// relation, eligible neighbors are drawn uniformly without replacement up
/// to the hop's cap (a partial Fisher-Yates shuffle of the adjacency slice).
pub fn sample(
    graph: &HeteroGraph,
    seeds: &[Seed],
    seed_times: Option<&[i64]>,
    config: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SampledSubgraph, SampleError> {
    if config.fanouts.iter().any(|&c| c == 0) {
        return Err(SampleError::BadFanout);
    }
    if let Some(t) = seed_times {
        if t.len() != seeds.len() {
            return Err(SampleError::SeedTimeMismatch {
                seeds: seeds.len(),
                times: t.len(),
            });
        }
    }
    for s in seeds {
        if s.node_type >= graph.node_types.len() || s.node >= graph.node_types[s.node_type].num_nodes {
            return Err(SampleError::UnknownSeed {
                node_type: s.node_type,
                node: s.node,
            });
        }
    }
    let rels = relations(graph);
    let n_types = graph.node_types.len();
    let disjoint = config.disjoint || seed_times.is_some();
    let mut sub = SampledSubgraph {
        seeds: seeds.to_vec(),
        seed_times: seed_times.map(<[i64]>::to_vec),
        seed_local: Vec::with_capacity(seeds.len()),
        nodes: vec![Vec::new(); n_types],
        hop: vec![Vec::new(); n_types],
        anchor: vec![Vec::new(); n_types],
        edges: vec![Vec::new(); rels.len()],
    };
    // (group, type, global) -> local; group is the seed index when disjoint.
    let mut index: HashMap<(u32, u32, u32), u32> = HashMap::new();
    let mut frontier: Vec<(usize, u32)> = Vec::new();

    for (si, s) in seeds.iter().enumerate() {
        let group = if disjoint { si as u32 } else { 0 };
        let key = (group, s.node_type as u32, s.node as u32);
        let local = match index.get(&key) {
            Some(&l) => l,
            None => {
                let l = sub.nodes[s.node_type].len() as u32;
                index.insert(key, l);
                sub.nodes[s.node_type].push(s.node as u32);
                sub.hop[s.node_type].push(0);
                sub.anchor[s.node_type].push(si as u32);
                frontier.push((s.node_type, l));
                l
            }
        };
        sub.seed_local.push((s.node_type, local as usize));
    }

    let mut candidates: Vec<u32> = Vec::new();
    for (h, &cap) in config.fanouts.iter().enumerate() {
        let mut next = Vec::new();
        for &(t, local) in &frontier {
            let global = sub.nodes[t][local as usize] as usize;
            let anchor = sub.anchor[t][local as usize];
            let group = if disjoint { anchor } else { 0 };
            let limit = seed_times.map(|st| st[anchor as usize]);
            for (r, rel) in rels.iter().enumerate() {
                if rel.dst_type != t {
                    continue;
                }
                let es = &graph.edge_types[rel.edge_type];
                let adj = match rel.direction {
                    Direction::Forward => es.forward.neighbors(global),
                    Direction::Reverse => es.reverse.neighbors(global),
                };
                let src_store = &graph.node_types[rel.src_type];
                candidates.clear();
                candidates.extend(adj.iter().copied().filter(|&u| match (limit, src_store.time_of(u as usize)) {
                    (Some(lim), Some(tau)) => tau < lim || (!config.strict && tau == lim),
                    _ => true,
                }));
                let take = cap.min(candidates.len());
                if take < candidates.len() {
                    for i in 0..take {
                        let j = rng.gen_range(i..candidates.len());
                        candidates.swap(i, j);
                    }
                }
                for &u in &candidates[..take] {
                    let key = (group, rel.src_type as u32, u);
                    let src_local = match index.get(&key) {
                        Some(&l) => l,
                        None => {
                            let l = sub.nodes[rel.src_type].len() as u32;
                            index.insert(key, l);
                            sub.nodes[rel.src_type].push(u);
                            sub.hop[rel.src_type].push((h + 1) as u8);
                            sub.anchor[rel.src_type].push(anchor);
                            next.push((rel.src_type, l));
                            l
                        }
                    };
                    sub.edges[r].push((src_local, local));
                }
            }
        }
        frontier = next;
    }
    Ok(sub)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::Cell;
    use crate::graph::build_graph;
    use crate::ingest::{RelationalInstance, Table};
    use crate::schema::{ColumnDef, DeclaredType, ForeignKeyDef, RelationalSchema, TableDef};
    use std::collections::BTreeSet;

    fn col(name: &str) -> ColumnDef {
        ColumnDef::new(name, DeclaredType::Integer)
    }

    /// Parent table `p` (n_parents rows, optional time) and child table `c`
    /// whose row `i` points at parent `links[i]` with time `child_ts[i]`.
    fn star(n_parents: usize, links: &[i64], child_ts: Option<&[i64]>) -> HeteroGraph {
        let p = TableDef::new("p", vec![col("id")], &["id"]);
        let mut cdef = TableDef::new("c", vec![col("id"), col("pid"), col("ts")], &["id"]);
        if child_ts.is_some() {
            cdef.time_column = Some("ts".into());
        }
        let prow = (0..n_parents).map(|i| vec![Cell::Integer(i as i64)]).collect();
        let crow = links
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let t = child_ts.map_or(0, |ts| ts[i]);
                vec![Cell::Integer(i as i64), Cell::Integer(l), Cell::Integer(t)]
            })
            .collect();
        let inst = RelationalInstance::new(
            RelationalSchema {
                tables: vec![p, cdef],
                foreign_keys: vec![ForeignKeyDef::new("c", &["pid"], "p", &["id"])],
            },
            vec![Table { rows: prow }, Table { rows: crow }],
        );
        build_graph(&inst, &Default::default()).unwrap()
    }

    fn cfg(fanouts: Vec<usize>) -> SamplerConfig {
        SamplerConfig {
            fanouts,
            ..Default::default()
        }
    }

    #[test]
    fn zero_hops_returns_the_seeds() {
        let g = star(2, &[0, 1, 1], None);
        let seeds = [Seed { node_type: 0, node: 1 }, Seed { node_type: 1, node: 2 }];
        let s = sample_static(&g, &seeds, &cfg(vec![]), &mut batch_rng(0, 0)).unwrap();
        assert_eq!(s.nodes, vec![vec![1], vec![2]]);
        assert_eq!(s.num_edges(), 0);
    }

    #[test]
    fn chain_two_hops() {
        // a <- b <- c as tables with single rows: c.b -> b, b.a -> a.
        let a = TableDef::new("a", vec![col("id")], &["id"]);
        let b = TableDef::new("b", vec![col("id"), col("a")], &["id"]);
        let c = TableDef::new("c", vec![col("id"), col("b")], &["id"]);
        let one = |v: Vec<i64>| Table {
            rows: vec![v.into_iter().map(Cell::Integer).collect()],
        };
        let inst = RelationalInstance::new(
            RelationalSchema {
                tables: vec![a, b, c],
                foreign_keys: vec![
                    ForeignKeyDef::new("b", &["a"], "a", &["id"]),
                    ForeignKeyDef::new("c", &["b"], "b", &["id"]),
                ],
            },
            vec![one(vec![0]), one(vec![0, 0]), one(vec![0, 0])],
        );
        let g = build_graph(&inst, &Default::default()).unwrap();
        let s = sample_static(&g, &[Seed { node_type: 0, node: 0 }], &cfg(vec![16, 16]), &mut batch_rng(1, 0)).unwrap();
        assert_eq!(s.nodes, vec![vec![0], vec![0], vec![0]]);
        assert_eq!(s.hop, vec![vec![0], vec![1], vec![2]]);
        // b -> a via reverse of edge 0, c -> b via reverse of edge 1.
        assert_eq!(s.edges[1], vec![(0, 0)]);
        assert_eq!(s.edges[3], vec![(0, 0)]);
        // As undirected table-node pairs the sample is exactly the BFS ball.
        let rels = relations(&g);
        let mut pairs = BTreeSet::new();
        for (r, es) in s.edges.iter().enumerate() {
            for &(src, dst) in es {
                let a = (rels[r].src_type, s.nodes[rels[r].src_type][src as usize]);
                let b = (rels[r].dst_type, s.nodes[rels[r].dst_type][dst as usize]);
                pairs.insert((a.min(b), a.max(b)));
            }
        }
        assert_eq!(pairs, BTreeSet::from([((0, 0), (1, 0)), ((1, 0), (2, 0))]));
    }

    #[test]
    fn star_is_capped_and_reproducible() {
        let g = star(1, &vec![0; 100], None);
        let seeds = [Seed { node_type: 0, node: 0 }];
        let a = sample_static(&g, &seeds, &cfg(vec![16]), &mut batch_rng(5, 0)).unwrap();
        let b = sample_static(&g, &seeds, &cfg(vec![16]), &mut batch_rng(5, 0)).unwrap();
        let c = sample_static(&g, &seeds, &cfg(vec![16]), &mut batch_rng(5, 1)).unwrap();
        assert_eq!(a.nodes[1].len(), 16);
        assert_eq!(a.nodes[1].iter().collect::<BTreeSet<_>>().len(), 16);
        assert_eq!(a, b);
        assert_ne!(a.nodes, c.nodes);
    }

    #[test]
    fn temporal_filter_is_inclusive_by_default() {
        let ts: Vec<i64> = (0..10).collect();
        let g = star(1, &vec![0; 10], Some(&ts));
        let seeds = [Seed { node_type: 0, node: 0 }];
        let s = sample_temporal(&g, &seeds, &[4], &cfg(vec![64]), &mut batch_rng(0, 0)).unwrap();
        let got: BTreeSet<u32> = s.nodes[1].iter().copied().collect();
        let oracle: BTreeSet<u32> = (0..10u32).filter(|&i| ts[i as usize] <= 4).collect();
        assert_eq!(got, oracle);
        assert!(s.causality_violations(&g, false).is_empty());

        let strict = SamplerConfig {
            strict: true,
            ..cfg(vec![64])
        };
        let s = sample_temporal(&g, &seeds, &[4], &strict, &mut batch_rng(0, 0)).unwrap();
        assert_eq!(s.nodes[1].len(), 4);
    }

    #[test]
    fn timeless_temporal_equals_disjoint_static() {
        let g = star(3, &[0, 1, 2, 0, 1, 2, 0, 0, 0, 0], None);
        let seeds = [Seed { node_type: 0, node: 0 }, Seed { node_type: 0, node: 2 }];
        let c = SamplerConfig {
            fanouts: vec![3, 2],
            disjoint: true,
            strict: false,
        };
        let a = sample_static(&g, &seeds, &c, &mut batch_rng(2, 0)).unwrap();
        let b = sample_temporal(&g, &seeds, &[0, 0], &c, &mut batch_rng(2, 0)).unwrap();
        assert_eq!((a.nodes, a.edges), (b.nodes, b.edges));
    }

    #[test]
    fn errors() {
        let g = star(1, &[0], None);
        let bad = [Seed { node_type: 0, node: 7 }];
        assert_eq!(
            sample_static(&g, &bad, &cfg(vec![1]), &mut batch_rng(0, 0)),
            Err(SampleError::UnknownSeed { node_type: 0, node: 7 })
        );
        let ok = [Seed { node_type: 0, node: 0 }];
        assert_eq!(sample_static(&g, &ok, &cfg(vec![0]), &mut batch_rng(0, 0)), Err(SampleError::BadFanout));
    }
}
