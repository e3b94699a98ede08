//! Compiles a relational instance into a heterogeneous graph: one node type
//! per table, one node per row (node index = row ordinal), one edge type per
//! foreign key constraint, and an optional per-node timestamp.

use std::collections::{BTreeMap, HashMap};
use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cell::Cell;
use crate::ingest::{fk_column_indices, key_of, primary_key_index, RelationalInstance};
use crate::schema::{ColumnDef, RelationalSchema};

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("foreign key {foreign_key}: child row {row} references a missing parent")]
    DanglingReference { foreign_key: String, row: usize },
    #[error("table `{table}` has no time column `{column}`")]
    MissingTimeColumn { table: String, column: String },
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("snapshot: {0}")]
    Snapshot(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DanglingPolicy {
    Error,
    #[default]
    Skip,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphOptions {
    pub dangling: DanglingPolicy,
    /// Per-table time columns; these extend and override the schema's own.
    pub time_columns: BTreeMap<String, String>,
}

/// Compressed adjacency: neighbors of node `i` are `targets[offsets[i]..offsets[i+1]]`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Csr {
    pub offsets: Vec<usize>,
    pub targets: Vec<u32>,
}

impl Csr {
    fn build(n_src: usize, pairs: impl Iterator<Item = (u32, u32)> + Clone) -> Csr {
        let mut offsets = vec![0usize; n_src + 1];
        for (s, _) in pairs.clone() {
            offsets[s as usize + 1] += 1;
        }
        for i in 0..n_src {
            offsets[i + 1] += offsets[i];
        }
        let mut cursor = offsets.clone();
        let mut targets = vec![0u32; offsets[n_src]];
        for (s, t) in pairs {
            targets[cursor[s as usize]] = t;
            cursor[s as usize] += 1;
        }
        Csr { offsets, targets }
    }

    pub fn neighbors(&self, node: usize) -> &[u32] {
        &self.targets[self.offsets[node]..self.offsets[node + 1]]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    pub fn num_sources(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }
}

/// Rows of one table with key columns stripped.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeStore {
    pub name: String,
    pub num_nodes: usize,
    /// Attribute columns (non-key), in table order.
    pub columns: Vec<ColumnDef>,
    pub attributes: Vec<Vec<Cell>>,
    /// `None` for timeless tables; otherwise one entry per node, `None`
    /// where the time cell is null.
    pub time: Option<Vec<Option<i64>>>,
}

impl NodeStore {
    pub fn time_of(&self, node: usize) -> Option<i64> {
        self.time.as_ref().and_then(|t| t[node])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeStore {
    pub child_type: usize,
    pub parent_type: usize,
    pub fk_name: String,
    pub label: String,
    /// (child node, parent node), in child row order.
    pub edges: Vec<(u32, u32)>,
    /// Child -> parent adjacency.
    pub forward: Csr,
    /// Parent -> children adjacency.
    pub reverse: Csr,
    pub null_skipped: usize,
    pub dangling_skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeteroGraph {
    pub node_types: Vec<NodeStore>,
    pub edge_types: Vec<EdgeStore>,
}

impl HeteroGraph {
    pub fn node_type_index(&self, name: &str) -> Option<usize> {
        self.node_types.iter().position(|n| n.name == name)
    }

    pub fn num_nodes(&self) -> usize {
        self.node_types.iter().map(|n| n.num_nodes).sum()
    }

    pub fn num_edges(&self) -> usize {
        self.edge_types.iter().map(|e| e.edges.len()).sum()
    }

    pub fn is_temporal(&self) -> bool {
        self.node_types.iter().any(|n| n.time.is_some())
    }
}

/// Builds the graph. Null FK cells produce no edge; dangling ones are
/// skipped and counted, or rejected under [`DanglingPolicy::Error`].
pub fn build_graph(instance: &RelationalInstance, options: &GraphOptions) -> Result<HeteroGraph, GraphError> {
    let schema = &instance.schema;
    let mut time_cols: BTreeMap<String, String> = schema
        .tables
        .iter()
        .filter_map(|t| t.time_column.clone().map(|c| (t.name.clone(), c)))
        .collect();
    for (t, c) in &options.time_columns {
        if schema.table(t).is_none() {
            return Err(GraphError::UnknownTable(t.clone()));
        }
        time_cols.insert(t.clone(), c.clone());
    }

    let mut node_types = Vec::with_capacity(schema.tables.len());
    for (def, table) in schema.tables.iter().zip(&instance.tables) {
        let attr_idx = attribute_columns(schema, &def.name);
        let columns = attr_idx.iter().map(|&i| def.columns[i].clone()).collect();
        let attributes = table
            .rows
            .iter()
            .map(|r| attr_idx.iter().map(|&i| r[i].clone()).collect())
            .collect();
        let time = match time_cols.get(&def.name) {
            None => None,
            Some(col) => {
                let ci = def.column_index(col).ok_or_else(|| GraphError::MissingTimeColumn {
                    table: def.name.clone(),
                    column: col.clone(),
                })?;
                Some(table.rows.iter().map(|r| r[ci].as_timestamp()).collect())
            }
        };
        node_types.push(NodeStore {
            name: def.name.clone(),
            num_nodes: table.len(),
            columns,
            attributes,
            time,
        });
    }

    let mut pk_indexes: HashMap<usize, HashMap<Vec<Cell>, usize>> = HashMap::new();
    let mut edge_types = Vec::with_capacity(schema.foreign_keys.len());
    for fk in &schema.foreign_keys {
        let ct = schema
            .table_index(&fk.child_table)
            .ok_or_else(|| GraphError::UnknownTable(fk.child_table.clone()))?;
        let pt = schema
            .table_index(&fk.parent_table)
            .ok_or_else(|| GraphError::UnknownTable(fk.parent_table.clone()))?;
        let (ccols, _) = fk_column_indices(schema, fk).ok_or_else(|| GraphError::UnknownTable(fk.child_table.clone()))?;
        let index = pk_indexes
            .entry(pt)
            .or_insert_with(|| primary_key_index(&schema.tables[pt], &instance.tables[pt]));
        let mut edges = Vec::new();
        let (mut nulls, mut dangling) = (0, 0);
        for (r, row) in instance.tables[ct].rows.iter().enumerate() {
            match key_of(row, &ccols) {
                None => nulls += 1,
                Some(k) => match index.get(&k) {
                    Some(&p) => edges.push((r as u32, p as u32)),
                    None => {
                        if options.dangling == DanglingPolicy::Error {
                            return Err(GraphError::DanglingReference {
                                foreign_key: fk.label(),
                                row: r,
                            });
                        }
                        dangling += 1;
                    }
                },
            }
        }
        let forward = Csr::build(instance.tables[ct].len(), edges.iter().copied());
        let reverse = Csr::build(instance.tables[pt].len(), edges.iter().map(|&(c, p)| (p, c)));
        edge_types.push(EdgeStore {
            child_type: ct,
            parent_type: pt,
            fk_name: fk.fk_name(),
            label: fk.label(),
            edges,
            forward,
            reverse,
            null_skipped: nulls,
            dangling_skipped: dangling,
        });
    }
    Ok(HeteroGraph {
        node_types,
        edge_types,
    })
}

/// Indices of the columns kept as node attributes (everything but keys).
pub fn attribute_columns(schema: &RelationalSchema, table: &str) -> Vec<usize> {
    schema.factual_columns(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct DegreeStats {
    pub min: usize,
    pub mean: f64,
    pub max: usize,
}

impl DegreeStats {
    fn of(degrees: impl Iterator<Item = usize>) -> DegreeStats {
        let (mut min, mut max, mut sum, mut n) = (usize::MAX, 0, 0usize, 0usize);
        for d in degrees {
            min = min.min(d);
            max = max.max(d);
            sum += d;
            n += 1;
        }
        if n == 0 {
            return DegreeStats::default();
        }
        DegreeStats {
            min,
            mean: sum as f64 / n as f64,
            max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeTypeDegrees {
    pub edge_type: String,
    /// Out-degree of child nodes (edges to parents).
    pub out_degree: DegreeStats,
    /// In-degree of parent nodes (edges from children).
    pub in_degree: DegreeStats,
}

pub fn degree_profile(graph: &HeteroGraph) -> Vec<EdgeTypeDegrees> {
    graph
        .edge_types
        .iter()
        .map(|e| EdgeTypeDegrees {
            edge_type: e.label.clone(),
            out_degree: DegreeStats::of((0..e.forward.num_sources()).map(|i| e.forward.degree(i))),
            in_degree: DegreeStats::of((0..e.reverse.num_sources()).map(|i| e.reverse.degree(i))),
        })
        .collect()
}

// Binary topology snapshot, all integers little-endian:
//
//   magic      8 bytes  "RDLGRAPH"
//   version    u32      1
//   n_types    u32
//   per node type:
//     name     u32 length + UTF-8 bytes
//     n_nodes  u64
//     has_time u8; if 1: n_nodes x i64, i64::MIN for an undefined time
//   n_edge_types u32
//   per edge type:
//     child    u32, parent u32
//     fk_name  u32 length + UTF-8 bytes
//     n_edges  u64
//     offsets  (n_child + 1) x u64   child -> parent CSR
//     targets  n_edges x u32
const MAGIC: &[u8; 8] = b"RDLGRAPH";
const SNAPSHOT_VERSION: u32 = 1;
const NO_TIME: i64 = i64::MIN;

/// Topology and timestamps of a graph, without attributes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphSnapshot {
    pub node_types: Vec<(String, usize, Option<Vec<Option<i64>>>)>,
    pub edge_types: Vec<SnapshotEdges>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotEdges {
    pub child_type: usize,
    pub parent_type: usize,
    pub fk_name: String,
    pub forward: Csr,
}

impl HeteroGraph {
    pub fn snapshot(&self) -> GraphSnapshot {
        GraphSnapshot {
            node_types: self
                .node_types
                .iter()
                .map(|n| (n.name.clone(), n.num_nodes, n.time.clone()))
                .collect(),
            edge_types: self
                .edge_types
                .iter()
                .map(|e| SnapshotEdges {
                    child_type: e.child_type,
                    parent_type: e.parent_type,
                    fk_name: e.fk_name.clone(),
                    forward: e.forward.clone(),
                })
                .collect(),
        }
    }
}

fn put_str(w: &mut impl Write, s: &str) -> io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

pub fn write_snapshot(graph: &HeteroGraph, w: &mut impl Write) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
    w.write_all(&(graph.node_types.len() as u32).to_le_bytes())?;
    for n in &graph.node_types {
        put_str(w, &n.name)?;
        w.write_all(&(n.num_nodes as u64).to_le_bytes())?;
        match &n.time {
            None => w.write_all(&[0])?,
            Some(ts) => {
                w.write_all(&[1])?;
                for t in ts {
                    w.write_all(&t.unwrap_or(NO_TIME).to_le_bytes())?;
                }
            }
        }
    }
    w.write_all(&(graph.edge_types.len() as u32).to_le_bytes())?;
    for e in &graph.edge_types {
        w.write_all(&(e.child_type as u32).to_le_bytes())?;
        w.write_all(&(e.parent_type as u32).to_le_bytes())?;
        put_str(w, &e.fk_name)?;
        w.write_all(&(e.forward.targets.len() as u64).to_le_bytes())?;
        for &o in &e.forward.offsets {
            w.write_all(&(o as u64).to_le_bytes())?;
        }
        for &t in &e.forward.targets {
            w.write_all(&t.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Reader<'a, R: Read>(&'a mut R);

impl<R: Read> Reader<'_, R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], GraphError> {
        let mut b = [0u8; N];
        self.0
            .read_exact(&mut b)
            .map_err(|e| GraphError::Snapshot(e.to_string()))?;
        Ok(b)
    }
    fn u32(&mut self) -> Result<u32, GraphError> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64, GraphError> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn i64(&mut self) -> Result<i64, GraphError> {
        Ok(i64::from_le_bytes(self.bytes()?))
    }
    fn string(&mut self) -> Result<String, GraphError> {
        let len = self.u32()? as usize;
        let mut buf = vec![0u8; len];
        self.0
            .read_exact(&mut buf)
            .map_err(|e| GraphError::Snapshot(e.to_string()))?;
        String::from_utf8(buf).map_err(|e| GraphError::Snapshot(e.to_string()))
    }
}

pub fn read_snapshot(r: &mut impl Read) -> Result<GraphSnapshot, GraphError> {
    let mut rd = Reader(r);
    if &rd.bytes::<8>()? != MAGIC {
        return Err(GraphError::Snapshot("bad magic".into()));
    }
    let version = rd.u32()?;
    if version != SNAPSHOT_VERSION {
        return Err(GraphError::Snapshot(format!("unsupported version {version}")));
    }
    let n_types = rd.u32()? as usize;
    let mut node_types = Vec::with_capacity(n_types);
    for _ in 0..n_types {
        let name = rd.string()?;
        let n = rd.u64()? as usize;
        let has_time = rd.bytes::<1>()?[0];
        let time = if has_time == 1 {
            let mut ts = Vec::with_capacity(n);
            for _ in 0..n {
                let t = rd.i64()?;
                ts.push((t != NO_TIME).then_some(t));
            }
            Some(ts)
        } else {
            None
        };
        node_types.push((name, n, time));
    }
    let n_edge_types = rd.u32()? as usize;
    let mut edge_types = Vec::with_capacity(n_edge_types);
    for _ in 0..n_edge_types {
        let child_type = rd.u32()? as usize;
        let parent_type = rd.u32()? as usize;
        let fk_name = rd.string()?;
        let n_edges = rd.u64()? as usize;
        let n_child = node_types
            .get(child_type)
            .map(|t| t.1)
            .ok_or_else(|| GraphError::Snapshot("child type out of range".into()))?;
        let mut offsets = Vec::with_capacity(n_child + 1);
        for _ in 0..=n_child {
            offsets.push(rd.u64()? as usize);
        }
        let mut targets = Vec::with_capacity(n_edges);
        for _ in 0..n_edges {
            targets.push(rd.u32()?);
        }
        edge_types.push(SnapshotEdges {
            child_type,
            parent_type,
            fk_name,
            forward: Csr { offsets, targets },
        });
    }
    Ok(GraphSnapshot {
        node_types,
        edge_types,
    })
}
