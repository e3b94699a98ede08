//! Relational GNN models over sampled subgraphs.
//!
//! Each node's column embeddings are fused into one `d`-wide vector, either
//! by a single linear map over their concatenation (`linear_sage`) or by a
//! linear map followed by residual blocks (`resnet_sage`). `L` SAGE layers
//! with sum aggregation follow:
//!
//! `h'_v = relu(h_v W_root + sum_r (sum_{u in N_r(v)} h_u) W_r)`
//!
//! with one `W_r` per edge type and direction and one `W_root` per node
//! type. A two-layer MLP head reads the seed embeddings. `tabular_only`
//! skips message passing and only encodes the seed rows.

use std::io::{self, Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, ParamId, ParamStore, Tape, Tensor, Var};
use crate::encoders::{encode_rows, init_encoder_params, ColumnKind, EncoderError, EncoderSpec, TableCache};
use crate::graph::HeteroGraph;
use crate::sampler::{relations, Direction, SampledSubgraph};
use crate::task::MaskedCell;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("targets do not match the model head")]
    TargetMismatch,
    #[error("bad model config: {0}")]
    BadConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    LinearSage,
    ResnetSage,
    TabularOnly,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::LinearSage => "linear_sage",
            Variant::ResnetSage => "resnet_sage",
            Variant::TabularOnly => "tabular_only",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub n_layers: usize,
    pub hidden: usize,
    pub d0: usize,
    pub head_hidden: usize,
    pub residual_blocks: usize,
    pub fanout: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::LinearSage,
            n_layers: 2,
            hidden: 64,
            d0: 64,
            head_hidden: 64,
            residual_blocks: 2,
            fanout: 16,
        }
    }
}

impl ModelConfig {
    /// Sampler fanouts matching the receptive field of the model.
    pub fn fanouts(&self) -> Vec<usize> {
        match self.variant {
            Variant::TabularOnly => Vec::new(),
            _ => vec![self.fanout; self.n_layers],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaskHeadKind {
    /// Classes are the vocabulary plus one out-of-vocabulary class.
    Categorical { vocab: Vec<String> },
    Numerical { mean: f64, std: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskHead {
    pub column: usize,
    pub name: String,
    #[serde(flatten)]
    pub kind: MaskHeadKind,
}

impl MaskHead {
    pub fn width(&self) -> usize {
        match &self.kind {
            MaskHeadKind::Categorical { vocab } => vocab.len() + 1,
            MaskHeadKind::Numerical { .. } => 1,
        }
    }

    /// Class index (categorical) or standardized value (numerical) of a cell.
    pub fn target(&self, cell: &crate::cell::Cell) -> Option<MaskTarget> {
        match &self.kind {
            MaskHeadKind::Categorical { vocab } => {
                let k = cell.render();
                Some(MaskTarget::Class(vocab.iter().position(|v| *v == k).unwrap_or(vocab.len())))
            }
            MaskHeadKind::Numerical { mean, std } => cell.as_f64().map(|x| MaskTarget::Value((x - mean) / std)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskTarget {
    Class(usize),
    Value(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadSpec {
    Binary,
    Multiclass { n_classes: usize },
    /// Targets are standardized with these train statistics.
    Regression { mean: f64, std: f64 },
    Mask { table: String, heads: Vec<MaskHead> },
}

impl HeadSpec {
    pub fn width(&self) -> usize {
        match self {
            HeadSpec::Binary | HeadSpec::Regression { .. } => 1,
            HeadSpec::Multiclass { n_classes } => *n_classes,
            HeadSpec::Mask { .. } => 0,
        }
    }

    /// Mask heads for the categorical and numerical columns of `table`.
    pub fn mask_for(encoder: &EncoderSpec, table: &str) -> HeadSpec {
        let heads = encoder
            .tables
            .get(table)
            .map(|t| {
                t.columns
                    .iter()
                    .filter_map(|c| {
                        let kind = match &c.kind {
                            ColumnKind::Categorical { vocab } => MaskHeadKind::Categorical { vocab: vocab.clone() },
                            ColumnKind::Numerical { mean, std } => MaskHeadKind::Numerical { mean: *mean, std: *std },
                            _ => return None,
                        };
                        Some(MaskHead {
                            column: c.column,
                            name: c.name.clone(),
                            kind,
                        })
                    })
                    .collect()
            })
            .unwrap_or_default();
        HeadSpec::Mask {
            table: table.to_string(),
            heads,
        }
    }
}

/// Per-seed supervision for a batch.
#[derive(Debug, Clone, PartialEq)]
pub enum BatchTargets {
    Binary(Vec<f64>),
    Multiclass(Vec<usize>),
    /// Raw (unstandardized) values.
    Regression(Vec<f64>),
    Mask(Vec<Vec<MaskedCell>>),
}

/// Everything a forward pass reads besides the parameters.
pub struct Batch<'a> {
    pub graph: &'a HeteroGraph,
    pub caches: &'a [TableCache],
    pub sub: &'a SampledSubgraph,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: EncoderSpec,
    pub head: HeadSpec,
    pub params: ParamStore,
    pub node_types: Vec<String>,
    /// Edge labels, aligned with the graph's edge types.
    pub edge_labels: Vec<String>,
}

fn rel_name(layer: usize, label: &str, dir: Direction) -> String {
    let d = match dir {
        Direction::Forward => "fwd",
        Direction::Reverse => "rev",
    };
    format!("sage.{layer}.{label}.{d}")
}

impl Model {
    pub fn new(config: ModelConfig, encoder: EncoderSpec, head: HeadSpec, graph: &HeteroGraph, seed: u64) -> Result<Model> {
        if config.variant != Variant::TabularOnly && !(1..=4).contains(&config.n_layers) {
            return Err(ModelError::BadConfig(format!("n_layers {} outside 1..=4", config.n_layers)));
        }
        if config.d0 != encoder.d0 {
            return Err(ModelError::BadConfig(format!("d0 {} but encoders use {}", config.d0, encoder.d0)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        init_encoder_params(&encoder, &mut p, &mut rng);
        let (d, d0) = (config.hidden, config.d0);
        let node_types: Vec<String> = graph.node_types.iter().map(|n| n.name.clone()).collect();
        for name in &node_types {
            let width = encoder.tables.get(name).map_or(1, |t| t.width());
            p.xavier(&format!("fuse.{name}.w"), width * d0, d, &mut rng);
            p.zeros(&format!("fuse.{name}.b"), 1, d);
            if config.variant == Variant::ResnetSage {
                for k in 0..config.residual_blocks {
                    p.xavier(&format!("fuse.{name}.block{k}.w"), d, d, &mut rng);
                    p.zeros(&format!("fuse.{name}.block{k}.b"), 1, d);
                }
            }
        }
        let edge_labels: Vec<String> = graph.edge_types.iter().map(|e| e.label.clone()).collect();
        if config.variant != Variant::TabularOnly {
            for l in 0..config.n_layers {
                for name in &node_types {
                    p.xavier(&format!("sage.{l}.root.{name}"), d, d, &mut rng);
                }
                for rel in relations(graph) {
                    p.xavier(&rel_name(l, &edge_labels[rel.edge_type], rel.direction), d, d, &mut rng);
                }
            }
        }
        let hh = config.head_hidden;
        p.xavier("head.w1", d, hh, &mut rng);
        p.zeros("head.b1", 1, hh);
        match &head {
            HeadSpec::Mask { heads, .. } => {
                for h in heads {
                    p.xavier(&format!("head.{}.w", h.name), hh, h.width(), &mut rng);
                    p.zeros(&format!("head.{}.b", h.name), 1, h.width());
                }
            }
            other => {
                p.xavier("head.w2", hh, other.width(), &mut rng);
                p.zeros("head.b2", 1, other.width());
            }
        }
        Ok(Model {
            config,
            encoder,
            head,
            params: p,
            node_types,
            edge_labels,
        })
    }

    fn pid(&self, name: &str) -> ParamId {
        self.params.id(name).unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    fn p(&self, tape: &mut Tape, name: &str) -> Var {
        tape.param(&self.params, self.pid(name))
    }

    /// Column embeddings fused to `rows.len() × d`.
    pub fn fuse(&self, tape: &mut Tape, t: usize, cache: &TableCache, rows: &[u32]) -> Result<Var> {
        let name = &self.node_types[t];
        let cols = encode_rows(tape, &self.params, &self.encoder, name, cache, rows)?;
        let x = if cols.len() == 1 { cols[0] } else { tape.concat_cols(&cols)? };
        let w = self.p(tape, &format!("fuse.{name}.w"));
        let b = self.p(tape, &format!("fuse.{name}.b"));
        let xw = tape.matmul(x, w)?;
        let mut h = tape.add_row(xw, b)?;
        if self.config.variant == Variant::ResnetSage {
            for k in 0..self.config.residual_blocks {
                let w = self.p(tape, &format!("fuse.{name}.block{k}.w"));
                let b = self.p(tape, &format!("fuse.{name}.block{k}.b"));
                let z = tape.matmul(h, w)?;
                let z = tape.add_row(z, b)?;
                let z = tape.relu(z);
                h = tape.add(h, z)?;
            }
        }
        Ok(h)
    }

    /// One SAGE layer over all node types present in the subgraph.
    pub fn sage_layer(&self, tape: &mut Tape, layer: usize, graph: &HeteroGraph, sub: &SampledSubgraph, h: &[Option<Var>]) -> Result<Vec<Option<Var>>> {
        let rels = relations(graph);
        let mut out = vec![None; h.len()];
        for (t, ht) in h.iter().enumerate() {
            let Some(ht) = *ht else { continue };
            let n = sub.nodes[t].len();
            let root = self.p(tape, &format!("sage.{layer}.root.{}", self.node_types[t]));
            let mut terms = vec![tape.matmul(ht, root)?];
            for (r, rel) in rels.iter().enumerate() {
                if rel.dst_type != t || sub.edges[r].is_empty() {
                    continue;
                }
                let Some(hs) = h[rel.src_type] else { continue };
                let mut edges = sub.edges[r].clone();
                edges.sort_unstable_by_key(|&(s, d)| (d, s));
                let src: Vec<usize> = edges.iter().map(|e| e.0 as usize).collect();
                let dst: Vec<usize> = edges.iter().map(|e| e.1 as usize).collect();
                let msgs = tape.gather_rows(hs, src)?;
                let agg = tape.scatter_add_rows(msgs, dst, n)?;
                let w = self.p(tape, &rel_name(layer, &self.edge_labels[rel.edge_type], rel.direction));
                terms.push(tape.matmul(agg, w)?);
            }
            let sum = if terms.len() == 1 { terms[0] } else { tape.add_n(&terms)? };
            out[t] = Some(tape.relu(sum));
        }
        Ok(out)
    }

    /// `n_seeds × d` embeddings of the batch seeds.
    pub fn embed_seeds(&self, tape: &mut Tape, batch: &Batch) -> Result<Var> {
        let sub = batch.sub;
        if self.config.variant == Variant::TabularOnly {
            // Seeds share one type in every task; encode just those rows.
            let t = sub.seeds.first().map_or(0, |s| s.node_type);
            let rows: Vec<u32> = sub.seeds.iter().map(|s| s.node as u32).collect();
            return self.fuse(tape, t, &batch.caches[t], &rows);
        }
        let mut h: Vec<Option<Var>> = Vec::with_capacity(sub.nodes.len());
        for (t, nodes) in sub.nodes.iter().enumerate() {
            h.push(if nodes.is_empty() {
                None
            } else {
                Some(self.fuse(tape, t, &batch.caches[t], nodes)?)
            });
        }
        for l in 0..self.config.n_layers {
            h = self.sage_layer(tape, l, batch.graph, sub, &h)?;
        }
        let t = sub.seed_local.first().map_or(0, |s| s.0);
        let idx = sub.seed_local.iter().map(|s| s.1).collect();
        Ok(tape.gather_rows(h[t].expect("seed type present"), idx)?)
    }

    fn hidden(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w1 = self.p(tape, "head.w1");
        let b1 = self.p(tape, "head.b1");
        let z = tape.matmul(x, w1)?;
        let z = tape.add_row(z, b1)?;
        Ok(tape.relu(z))
    }

    /// Head outputs for non-mask tasks, `n_seeds × width`.
    pub fn forward(&self, tape: &mut Tape, batch: &Batch) -> Result<Var> {
        let x = self.embed_seeds(tape, batch)?;
        let z = self.hidden(tape, x)?;
        let w2 = self.p(tape, "head.w2");
        let b2 = self.p(tape, "head.b2");
        let y = tape.matmul(z, w2)?;
        Ok(tape.add_row(y, b2)?)
    }

    /// Scalar training loss of a batch.
    pub fn loss(&self, tape: &mut Tape, batch: &Batch, targets: &BatchTargets) -> Result<Var> {
        match (&self.head, targets) {
            (HeadSpec::Binary, BatchTargets::Binary(y)) => {
                let out = self.forward(tape, batch)?;
                Ok(tape.sigmoid_bce(out, y.clone())?)
            }
            (HeadSpec::Multiclass { n_classes }, BatchTargets::Multiclass(y)) => {
                if let Some(&bad) = y.iter().find(|&&l| l >= *n_classes) {
                    return Err(ModelError::LabelOutOfRange {
                        label: bad,
                        classes: *n_classes,
                    });
                }
                let out = self.forward(tape, batch)?;
                Ok(tape.softmax_ce(out, y.clone())?)
            }
            (HeadSpec::Regression { mean, std }, BatchTargets::Regression(y)) => {
                let out = self.forward(tape, batch)?;
                Ok(tape.mse(out, y.iter().map(|v| (v - mean) / std).collect())?)
            }
            (HeadSpec::Mask { heads, .. }, BatchTargets::Mask(cells)) => self.mask_loss(tape, batch, heads, cells),
            _ => Err(ModelError::TargetMismatch),
        }
    }

    fn mask_loss(&self, tape: &mut Tape, batch: &Batch, heads: &[MaskHead], cells: &[Vec<MaskedCell>]) -> Result<Var> {
        let x = self.embed_seeds(tape, batch)?;
        let z = self.hidden(tape, x)?;
        let mut parts = Vec::new();
        let mut counts = Vec::new();
        for head in heads {
            let mut rows = Vec::new();
            let mut classes = Vec::new();
            let mut values = Vec::new();
            for (i, seed_cells) in cells.iter().enumerate() {
                for m in seed_cells.iter().filter(|m| m.column == head.column) {
                    match head.target(&m.original) {
                        Some(MaskTarget::Class(c)) => {
                            rows.push(i);
                            classes.push(c);
                        }
                        Some(MaskTarget::Value(v)) => {
                            rows.push(i);
                            values.push(v);
                        }
                        None => {}
                    }
                }
            }
            if rows.is_empty() {
                continue;
            }
            let zr = tape.gather_rows(z, rows.clone())?;
            let w = self.p(tape, &format!("head.{}.w", head.name));
            let b = self.p(tape, &format!("head.{}.b", head.name));
            let y = tape.matmul(zr, w)?;
            let y = tape.add_row(y, b)?;
            parts.push(match head.kind {
                MaskHeadKind::Categorical { .. } => tape.softmax_ce(y, classes)?,
                MaskHeadKind::Numerical { .. } => tape.mse(y, values)?,
            });
            counts.push(rows.len());
        }
        let total: usize = counts.iter().sum();
        if parts.is_empty() {
            return Ok(tape.constant(Tensor::scalar(0.0)));
        }
        let weighted: Vec<Var> = parts
            .iter()
            .zip(&counts)
            .map(|(&p, &c)| tape.scale(p, c as f64 / total as f64))
            .collect();
        Ok(if weighted.len() == 1 { weighted[0] } else { tape.add_n(&weighted)? })
    }

    /// Per-seed scores: probability of class 1 (binary), the predicted class
    /// (multiclass) or the de-standardized prediction (regression).
    pub fn predict(&self, batch: &Batch) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, batch)?;
        let t = tape.value(out);
        Ok(match &self.head {
            HeadSpec::Binary => t.data.iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect(),
            HeadSpec::Multiclass { .. } => (0..t.rows)
                .map(|r| {
                    let row = t.row(r);
                    let mut best = 0;
                    for c in 1..row.len() {
                        if row[c] > row[best] {
                            best = c;
                        }
                    }
                    best as f64
                })
                .collect(),
            HeadSpec::Regression { mean, std } => t.data.iter().map(|&x| x * std + mean).collect(),
            HeadSpec::Mask { .. } => return Err(ModelError::TargetMismatch),
        })
    }

    /// Mask predictions: for every masked cell of a head column, the
    /// predicted class or standardized value next to its target.
    pub fn predict_masked(&self, batch: &Batch, cells: &[Vec<MaskedCell>]) -> Result<Vec<(usize, MaskTarget, MaskTarget)>> {
        let HeadSpec::Mask { heads, .. } = &self.head else {
            return Err(ModelError::TargetMismatch);
        };
        let mut tape = Tape::new();
        let x = self.embed_seeds(&mut tape, batch)?;
        let z = self.hidden(&mut tape, x)?;
        let mut out = Vec::new();
        for head in heads {
            let w = self.p(&mut tape, &format!("head.{}.w", head.name));
            let b = self.p(&mut tape, &format!("head.{}.b", head.name));
            let y = tape.matmul(z, w)?;
            let y = tape.add_row(y, b)?;
            let t = tape.value(y).clone();
            for (i, seed_cells) in cells.iter().enumerate() {
                for m in seed_cells.iter().filter(|m| m.column == head.column) {
                    let Some(target) = head.target(&m.original) else { continue };
                    let row = t.row(i);
                    let pred = match head.kind {
                        MaskHeadKind::Categorical { .. } => {
                            let mut best = 0;
                            for c in 1..row.len() {
                                if row[c] > row[best] {
                                    best = c;
                                }
                            }
                            MaskTarget::Class(best)
                        }
                        MaskHeadKind::Numerical { .. } => MaskTarget::Value(row[0]),
                    };
                    out.push((head.column, pred, target));
                }
            }
        }
        Ok(out)
    }
}

const CKPT_MAGIC: &[u8; 8] = b"RDLCKPT\0";
const CKPT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub head: HeadSpec,
    pub node_types: Vec<String>,
    pub edge_labels: Vec<String>,
    /// Free-form run information (task spec, run config, selection).
    pub run: serde_json::Value,
}

fn write_blob(w: &mut impl Write, bytes: &[u8]) -> io::Result<()> {
    w.write_all(&(bytes.len() as u32).to_le_bytes())?;
    w.write_all(bytes)
}

/// Layout (little-endian): magic `RDLCKPT\0`, u32 version, meta JSON and
/// encoder JSON as u32-length-prefixed blobs, u32 parameter count, then per
/// parameter a length-prefixed name, u64 rows, u64 cols and the f64 values,
/// and finally the u64 optimizer step.
pub fn write_checkpoint(model: &Model, run: serde_json::Value, step: u64, w: &mut impl Write) -> Result<()> {
    let meta = CheckpointMeta {
        model: model.config.clone(),
        head: model.head.clone(),
        node_types: model.node_types.clone(),
        edge_labels: model.edge_labels.clone(),
        run,
    };
    w.write_all(CKPT_MAGIC)?;
    w.write_all(&CKPT_VERSION.to_le_bytes())?;
    write_blob(w, serde_json::to_string(&meta).map_err(|e| ModelError::Checkpoint(e.to_string()))?.as_bytes())?;
    write_blob(w, serde_json::to_string(&model.encoder).map_err(|e| ModelError::Checkpoint(e.to_string()))?.as_bytes())?;
    w.write_all(&(model.params.len() as u32).to_le_bytes())?;
    for (name, t) in model.params.names.iter().zip(&model.params.values) {
        write_blob(w, name.as_bytes())?;
        w.write_all(&(t.rows as u64).to_le_bytes())?;
        w.write_all(&(t.cols as u64).to_le_bytes())?;
        for x in &t.data {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.write_all(&step.to_le_bytes())?;
    Ok(())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_blob(r: &mut impl Read) -> Result<Vec<u8>> {
    let n = u32::from_le_bytes(read_exact(r)?) as usize;
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    Ok(b)
}

/// Reads a checkpoint back into a model, its run information and step.
pub fn read_checkpoint(r: &mut impl Read) -> Result<(Model, serde_json::Value, u64)> {
    let bad = |m: String| ModelError::Checkpoint(m);
    if &read_exact::<8>(r)? != CKPT_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = u32::from_le_bytes(read_exact(r)?);
    if version != CKPT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let meta: CheckpointMeta = serde_json::from_slice(&read_blob(r)?).map_err(|e| bad(e.to_string()))?;
    let encoder: EncoderSpec = serde_json::from_slice(&read_blob(r)?).map_err(|e| bad(e.to_string()))?;
    let n = u32::from_le_bytes(read_exact(r)?) as usize;
    let mut params = ParamStore::new();
    for _ in 0..n {
        let name = String::from_utf8(read_blob(r)?).map_err(|e| bad(e.to_string()))?;
        let rows = u64::from_le_bytes(read_exact(r)?) as usize;
        let cols = u64::from_le_bytes(read_exact(r)?) as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(f64::from_le_bytes(read_exact(r)?));
        }
        params.insert(&name, Tensor::from_vec(rows, cols, data));
    }
    let step = u64::from_le_bytes(read_exact(r)?);
    Ok((
        Model {
            config: meta.model,
            encoder,
            head: meta.head,
            params,
            node_types: meta.node_types,
            edge_labels: meta.edge_labels,
        },
        meta.run,
        step,
    ))
}
