//! Database characterization: counts, schema structure, task properties and
//! graph statistics, plus the tabular-like / graph-like classification.

use std::collections::{BTreeMap, HashSet, VecDeque};

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::HeteroGraph;
use crate::ingest::{check_referential_integrity, fk_column_indices, key_of, RelationalInstance};
use crate::schema::TableDef;
use crate::task::{TaskSpec, TrainingTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Multiplicity {
    OneToOne,
    OneToMany,
    ManyToMany,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatabaseFeatures {
    pub n_tables: usize,
    pub n_fks: usize,
    pub n_factual_columns: usize,
    /// Column counts per semantic type over all columns.
    pub n_by_semantic_type: BTreeMap<String, usize>,
    pub total_rows: usize,
    /// Non-null FK references that resolve to a parent row.
    pub total_pk_fk_links: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForeignKeyMultiplicity {
    pub foreign_key: String,
    pub child_table: String,
    pub parent_table: String,
    pub multiplicity: Multiplicity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaFeatures {
    pub n_tables: usize,
    pub multiplicities: Vec<ForeignKeyMultiplicity>,
    pub schema_diameter: usize,
    /// The table graph is disconnected and the diameter is that of its
    /// largest component.
    pub diameter_of_largest_component: bool,
    pub has_cycle: bool,
    pub mean_factual_per_table: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFeatures {
    pub temporal: bool,
    pub n_train_samples: usize,
    pub target_table: String,
    /// Multiplicities of the foreign keys touching the target table.
    pub target_multiplicities: BTreeMap<String, usize>,
    pub target_n_columns: usize,
    pub target_n_factual: usize,
    pub target_by_semantic_type: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFeatures {
    pub n_nodes: usize,
    /// Edges of the homogenized undirected simple graph.
    pub n_edges: usize,
    /// Largest finite eccentricity (a lower bound when approximate).
    pub diameter: u32,
    pub avg_eccentricity: f64,
    pub density: f64,
    /// Eccentricity averaged over probe nodes rather than all nodes.
    pub approximate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub tabular_like: bool,
    pub graph_like: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureReport {
    pub database: DatabaseFeatures,
    pub schema: SchemaFeatures,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskFeatures>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub graph: Option<GraphFeatures>,
    pub classification: Classification,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub exact_threshold: usize,
    pub n_probe: usize,
    pub probe_seed: u64,
    pub graph_like_max_factual: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            exact_threshold: 50_000,
            n_probe: 256,
            probe_seed: 0,
            graph_like_max_factual: 2.0,
        }
    }
}

fn count_semantic<'a>(cols: impl Iterator<Item = &'a crate::schema::ColumnDef>) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for c in cols {
        *out.entry(c.semantic().name().to_string()).or_insert(0) += 1;
    }
    out
}

pub fn database_features(instance: &RelationalInstance) -> DatabaseFeatures {
    let schema = &instance.schema;
    let report = check_referential_integrity(instance);
    DatabaseFeatures {
        n_tables: schema.tables.len(),
        n_fks: schema.foreign_keys.len(),
        n_factual_columns: schema.tables.iter().map(|t| schema.factual_columns(&t.name).len()).sum(),
        n_by_semantic_type: count_semantic(schema.tables.iter().flat_map(|t| t.columns.iter())),
        total_rows: instance.total_rows(),
        total_pk_fk_links: report.foreign_keys.iter().map(|f| f.matched).sum(),
    }
}

/// Multiplicity of each FK from the data. A child table with at least two
/// FKs and at most one factual column is a junction table and marks its
/// FKs many-to-many; otherwise an FK whose non-null values are unique is
/// one-to-one and any repeated value makes it one-to-many.
pub fn fk_multiplicities(instance: &RelationalInstance) -> Vec<ForeignKeyMultiplicity> {
    let schema = &instance.schema;
    schema
        .foreign_keys
        .iter()
        .map(|fk| {
            let n_fks = schema.foreign_keys.iter().filter(|f| f.child_table == fk.child_table).count();
            let junction = n_fks >= 2 && schema.factual_columns(&fk.child_table).len() <= 1;
            let multiplicity = if junction {
                Multiplicity::ManyToMany
            } else {
                let unique = match (fk_column_indices(schema, fk), instance.table(&fk.child_table)) {
                    (Some((cols, _)), Some((_, table))) => {
                        let mut seen = HashSet::with_capacity(table.len());
                        table.rows.iter().filter_map(|r| key_of(r, &cols)).all(|k| seen.insert(k))
                    }
                    _ => true,
                };
                if unique {
                    Multiplicity::OneToOne
                } else {
                    Multiplicity::OneToMany
                }
            };
            ForeignKeyMultiplicity {
                foreign_key: fk.label(),
                child_table: fk.child_table.clone(),
                parent_table: fk.parent_table.clone(),
                multiplicity,
            }
        })
        .collect()
}

/// Undirected simple adjacency lists; self-loops are dropped.
pub fn simple_adjacency(n: usize, edges: impl Iterator<Item = (usize, usize)>) -> Vec<Vec<u32>> {
    let mut adj = vec![Vec::new(); n];
    for (a, b) in edges {
        if a != b {
            adj[a].push(b as u32);
            adj[b].push(a as u32);
        }
    }
    for l in &mut adj {
        l.sort_unstable();
        l.dedup();
    }
    adj
}

/// BFS distances from `src`; unreachable nodes are `u32::MAX`.
pub fn bfs_distances(adj: &[Vec<u32>], src: usize) -> Vec<u32> {
    let mut dist = vec![u32::MAX; adj.len()];
    let mut queue = VecDeque::new();
    dist[src] = 0;
    queue.push_back(src);
    while let Some(v) = queue.pop_front() {
        for &u in &adj[v] {
            if dist[u as usize] == u32::MAX {
                dist[u as usize] = dist[v] + 1;
                queue.push_back(u as usize);
            }
        }
    }
    dist
}

/// Largest finite BFS distance from `src`.
pub fn eccentricity(adj: &[Vec<u32>], src: usize) -> u32 {
    bfs_distances(adj, src).into_iter().filter(|&d| d != u32::MAX).max().unwrap_or(0)
}

fn components(adj: &[Vec<u32>]) -> Vec<Vec<usize>> {
    let mut seen = vec![false; adj.len()];
    let mut out = Vec::new();
    for s in 0..adj.len() {
        if seen[s] {
            continue;
        }
        let d = bfs_distances(adj, s);
        let comp: Vec<usize> = (0..adj.len()).filter(|&v| d[v] != u32::MAX).collect();
        for &v in &comp {
            seen[v] = true;
        }
        out.push(comp);
    }
    out
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut c = x;
        while self.0[c] != r {
            let next = self.0[c];
            self.0[c] = r;
            c = next;
        }
        r
    }
}

pub fn schema_features(instance: &RelationalInstance) -> SchemaFeatures {
    let schema = &instance.schema;
    let n = schema.tables.len();
    let links: Vec<(usize, usize)> = schema
        .foreign_keys
        .iter()
        .filter_map(|fk| Some((schema.table_index(&fk.child_table)?, schema.table_index(&fk.parent_table)?)))
        .collect();

    let mut uf = UnionFind((0..n).collect());
    let mut has_cycle = false;
    for &(a, b) in &links {
        let (ra, rb) = (uf.find(a), uf.find(b));
        if ra == rb {
            has_cycle = true;
        } else {
            uf.0[ra] = rb;
        }
    }

    let adj = simple_adjacency(n, links.iter().copied());
    let comps = components(&adj);
    let largest = comps.iter().max_by(|a, b| a.len().cmp(&b.len()).then(b[0].cmp(&a[0])));
    let diameter = largest
        .map(|c| c.iter().map(|&v| eccentricity(&adj, v)).max().unwrap_or(0))
        .unwrap_or(0);
    let n_factual: usize = schema.tables.iter().map(|t| schema.factual_columns(&t.name).len()).sum();
    SchemaFeatures {
        n_tables: n,
        multiplicities: fk_multiplicities(instance),
        schema_diameter: diameter as usize,
        diameter_of_largest_component: comps.len() > 1,
        has_cycle,
        mean_factual_per_table: if n == 0 { 0.0 } else { n_factual as f64 / n as f64 },
    }
}

pub fn task_features(instance: &RelationalInstance, spec: &TaskSpec, table: &TrainingTable) -> TaskFeatures {
    let schema = &instance.schema;
    let mut mult = BTreeMap::new();
    for m in fk_multiplicities(instance) {
        if m.child_table == spec.target_table || m.parent_table == spec.target_table {
            let key = serde_json::to_value(m.multiplicity).ok().and_then(|v| v.as_str().map(str::to_string));
            *mult.entry(key.unwrap_or_default()).or_insert(0) += 1;
        }
    }
    let def: Option<&TableDef> = schema.table(&spec.target_table);
    TaskFeatures {
        temporal: spec.temporal,
        n_train_samples: table.rows_in(crate::task::Split::Train).len(),
        target_table: spec.target_table.clone(),
        target_multiplicities: mult,
        target_n_columns: def.map_or(0, |d| d.columns.len()),
        target_n_factual: schema.factual_columns(&spec.target_table).len(),
        target_by_semantic_type: def.map(|d| count_semantic(d.columns.iter())).unwrap_or_default(),
    }
}

/// The graph with node types and edge directions erased: global ids are
/// assigned type by type, parallel edges and self-loops removed.
pub fn homogenize(graph: &HeteroGraph) -> Vec<Vec<u32>> {
    let mut offsets = Vec::with_capacity(graph.node_types.len());
    let mut total = 0;
    for nt in &graph.node_types {
        offsets.push(total);
        total += nt.num_nodes;
    }
    let edges = graph.edge_types.iter().flat_map(|es| {
        let (co, po) = (offsets[es.child_type], offsets[es.parent_type]);
        es.edges.iter().map(move |&(c, p)| (co + c as usize, po + p as usize))
    });
    simple_adjacency(total, edges)
}

pub fn adjacency_features(adj: &[Vec<u32>], config: &FeatureConfig) -> GraphFeatures {
    let n = adj.len();
    let m: usize = adj.iter().map(Vec::len).sum::<usize>() / 2;
    let approximate = n > config.exact_threshold;
    let probes: Vec<usize> = if approximate {
        let mut rng = ChaCha8Rng::seed_from_u64(config.probe_seed);
        let mut p = sample_indices(&mut rng, n, config.n_probe.min(n)).into_vec();
        p.sort_unstable();
        p
    } else {
        (0..n).collect()
    };
    let eccs: Vec<u32> = probes.par_iter().map(|&v| eccentricity(adj, v)).collect();
    let sum: u64 = eccs.iter().map(|&e| e as u64).sum();
    GraphFeatures {
        n_nodes: n,
        n_edges: m,
        diameter: eccs.iter().copied().max().unwrap_or(0),
        avg_eccentricity: if probes.is_empty() { 0.0 } else { sum as f64 / probes.len() as f64 },
        density: if n < 2 { 0.0 } else { 2.0 * m as f64 / (n as f64 * (n as f64 - 1.0)) },
        approximate,
    }
}

pub fn graph_features(graph: &HeteroGraph, config: &FeatureConfig) -> GraphFeatures {
    adjacency_features(&homogenize(graph), config)
}

/// Tabular-like: no FKs, or every FK one-to-one. Graph-like: few factual
/// columns per table and at least one one-to-many relation.
pub fn classify(schema: &SchemaFeatures, config: &FeatureConfig) -> Classification {
    let all_one_to_one = schema
        .multiplicities
        .iter()
        .all(|m| m.multiplicity == Multiplicity::OneToOne);
    let any_one_to_many = schema
        .multiplicities
        .iter()
        .any(|m| m.multiplicity == Multiplicity::OneToMany);
    Classification {
        tabular_like: all_one_to_one,
        graph_like: schema.mean_factual_per_table <= config.graph_like_max_factual && any_one_to_many,
    }
}

pub fn classify_database(instance: &RelationalInstance) -> Classification {
    classify(&schema_features(instance), &FeatureConfig::default())
}

pub fn analyze(
    instance: &RelationalInstance,
    graph: Option<&HeteroGraph>,
    task: Option<(&TaskSpec, &TrainingTable)>,
    config: &FeatureConfig,
) -> FeatureReport {
    let schema = schema_features(instance);
    FeatureReport {
        database: database_features(instance),
        classification: classify(&schema, config),
        schema,
        task: task.map(|(s, t)| task_features(instance, s, t)),
        graph: graph.map(|g| graph_features(g, config)),
    }
}
