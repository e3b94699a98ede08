//! Column encoders turning raw attribute tuples into `n × d0` embedding
//! matrices, one row per encoded column.
//!
//! Fitting produces an [`EncoderSpec`] (statistics and vocabularies, no
//! learned weights). [`encode_instance`] turns every table into a compact
//! cache of indices and standardized values, and [`encode_rows`] looks the
//! cache up on a tape against the learned parameters.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::TAU;

use chrono::{DateTime, Datelike, Timelike};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, ParamStore, Tape, Tensor, Var};
use crate::cell::Cell;
use crate::ingest::RelationalInstance;
use crate::schema::SemanticType;
use crate::task::{Split, TrainingTable};

pub const TEXT_BUCKETS: usize = 2048;
pub const TEXT_NGRAM: usize = 3;
pub const TEMPORAL_FEATURES: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum EncoderError {
    #[error("the training split is empty")]
    EmptyTrainSplit,
    #[error("tuple has {found} cells, table `{table}` has {expected} columns")]
    ArityMismatch { table: String, expected: usize, found: usize },
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    Numerical { mean: f64, std: f64 },
    /// Index `vocab.len()` is out-of-vocabulary, `vocab.len() + 1` is null.
    Categorical { vocab: Vec<String> },
    MultiCategorical { vocab: Vec<String>, separator: String },
    /// Bucket `buckets` is null.
    Text { buckets: usize, ngram: usize },
    Temporal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnEncoder {
    pub name: String,
    /// Column index in the table.
    pub column: usize,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEncoder {
    pub n_table_columns: usize,
    /// Encoded columns. Empty means the table gets one learned constant.
    pub columns: Vec<ColumnEncoder>,
}

impl TableEncoder {
    /// Number of column embeddings produced per node.
    pub fn width(&self) -> usize {
        self.columns.len().max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub d0: usize,
    pub tables: BTreeMap<String, TableEncoder>,
}

impl ColumnKind {
    /// Rows of the learned lookup table for this column.
    fn table_rows(&self) -> usize {
        match self {
            ColumnKind::Numerical { .. } | ColumnKind::Temporal => 2,
            ColumnKind::Categorical { vocab } | ColumnKind::MultiCategorical { vocab, .. } => vocab.len() + 2,
            ColumnKind::Text { buckets, .. } => buckets + 1,
        }
    }
}

/// Which rows of each table the statistics may read: train rows of the
/// target table, rows no later than the last train time in other tables
/// of a temporal task, and all rows otherwise.
pub fn fit_rows(instance: &RelationalInstance, training: &TrainingTable) -> Vec<Vec<usize>> {
    let train: Vec<usize> = training.rows_in(Split::Train);
    let cutoff = training
        .timestamps
        .as_ref()
        .and_then(|ts| train.iter().map(|&i| ts[i]).max());
    instance
        .schema
        .tables
        .iter()
        .zip(&instance.tables)
        .map(|(def, table)| {
            if def.name == training.target_table {
                let mut rows: Vec<usize> = train.iter().map(|&i| training.entity_rows[i]).collect();
                rows.sort_unstable();
                rows.dedup();
                return rows;
            }
            let time_col = def.time_column.as_ref().and_then(|c| def.column_index(c));
            match (cutoff, time_col) {
                (Some(cut), Some(tc)) => (0..table.len())
                    .filter(|&r| table.rows[r][tc].as_timestamp().map_or(true, |t| t <= cut))
                    .collect(),
                _ => (0..table.len()).collect(),
            }
        })
        .collect()
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 1.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 0.0 && std.is_finite() { std } else { 1.0 })
}

fn split_tokens<'a>(s: &'a str, sep: &'a str) -> impl Iterator<Item = &'a str> {
    s.split(sep).map(str::trim).filter(|t| !t.is_empty())
}

pub fn fit_encoders(instance: &RelationalInstance, training: &TrainingTable, d0: usize) -> Result<EncoderSpec, EncoderError> {
    if training.rows_in(Split::Train).is_empty() {
        return Err(EncoderError::EmptyTrainSplit);
    }
    let rows = fit_rows(instance, training);
    let mut tables = BTreeMap::new();
    for (ti, (def, table)) in instance.schema.tables.iter().zip(&instance.tables).enumerate() {
        let mut columns = Vec::new();
        for j in instance.schema.factual_columns(&def.name) {
            let col = &def.columns[j];
            let cells = rows[ti].iter().map(|&r| &table.rows[r][j]).filter(|c| !c.is_null());
            let kind = match col.semantic() {
                SemanticType::Ignored | SemanticType::PrimaryKey | SemanticType::ForeignKey => continue,
                SemanticType::Numerical => {
                    let v: Vec<f64> = cells.filter_map(Cell::as_f64).collect();
                    let (mean, std) = mean_std(&v);
                    ColumnKind::Numerical { mean, std }
                }
                SemanticType::Categorical => {
                    let mut vocab = Vec::new();
                    let mut seen = std::collections::HashSet::new();
                    for c in cells {
                        let k = c.render();
                        if seen.insert(k.clone()) {
                            vocab.push(k);
                        }
                    }
                    ColumnKind::Categorical { vocab }
                }
                SemanticType::MultiCategorical => {
                    let sep = ",".to_string();
                    let mut vocab = Vec::new();
                    let mut seen = std::collections::HashSet::new();
                    for c in cells {
                        for t in split_tokens(&c.render(), &sep) {
                            if seen.insert(t.to_string()) {
                                vocab.push(t.to_string());
                            }
                        }
                    }
                    ColumnKind::MultiCategorical { vocab, separator: sep }
                }
                SemanticType::Text => ColumnKind::Text {
                    buckets: TEXT_BUCKETS,
                    ngram: TEXT_NGRAM,
                },
                SemanticType::Temporal => ColumnKind::Temporal,
            };
            columns.push(ColumnEncoder {
                name: col.name.clone(),
                column: j,
                kind,
            });
        }
        tables.insert(
            def.name.clone(),
            TableEncoder {
                n_table_columns: def.columns.len(),
                columns,
            },
        );
    }
    Ok(EncoderSpec { d0, tables })
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Hash buckets of the character n-grams of `s` (the whole string when it
/// is shorter than `n`).
pub fn text_buckets(s: &str, n: usize, buckets: usize) -> Vec<usize> {
    let chars: Vec<char> = s.chars().collect();
    if chars.is_empty() {
        return Vec::new();
    }
    let grams: Vec<String> = if chars.len() < n {
        vec![s.to_string()]
    } else {
        chars.windows(n).map(|w| w.iter().collect()).collect()
    };
    grams.iter().map(|g| (fnv1a(g.as_bytes()) % buckets as u64) as usize).collect()
}

/// sin/cos of the year fraction, month, weekday (Monday first) and hour.
pub fn temporal_features(secs: i64) -> [f64; TEMPORAL_FEATURES] {
    let Some(dt) = DateTime::from_timestamp(secs, 0) else {
        return [0.0; TEMPORAL_FEATURES];
    };
    let days_in_year = if dt.date_naive().leap_year() { 366.0 } else { 365.0 };
    let day_frac = dt.num_seconds_from_midnight() as f64 / 86_400.0;
    let year = (dt.ordinal0() as f64 + day_frac) / days_in_year;
    let month = dt.month0() as f64 / 12.0;
    let weekday = dt.weekday().num_days_from_monday() as f64 / 7.0;
    let hour = (dt.hour() as f64 + dt.minute() as f64 / 60.0) / 24.0;
    let mut out = [0.0; TEMPORAL_FEATURES];
    for (k, frac) in [year, month, weekday, hour].into_iter().enumerate() {
        out[2 * k] = (TAU * frac).sin();
        out[2 * k + 1] = (TAU * frac).cos();
    }
    out
}

/// Per-row lookup data for one encoded column.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnCache {
    /// Input features (`width` per row) with a 0/1 bias-or-null row index.
    Dense { width: usize, values: Vec<f64>, table_idx: Vec<usize> },
    Index(Vec<usize>),
    /// Member indices per row, averaged; every row has at least one member.
    Bag { offsets: Vec<usize>, members: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableCache {
    pub n_rows: usize,
    pub columns: Vec<ColumnCache>,
}

fn cache_column(kind: &ColumnKind, cells: &[&Cell]) -> ColumnCache {
    match kind {
        ColumnKind::Numerical { mean, std } => {
            let mut values = Vec::with_capacity(cells.len());
            let mut table_idx = Vec::with_capacity(cells.len());
            for c in cells {
                match c.as_f64() {
                    Some(x) if x.is_finite() => {
                        values.push((x - mean) / std);
                        table_idx.push(0);
                    }
                    _ => {
                        values.push(0.0);
                        table_idx.push(1);
                    }
                }
            }
            ColumnCache::Dense {
                width: 1,
                values,
                table_idx,
            }
        }
        ColumnKind::Temporal => {
            let mut values = Vec::with_capacity(cells.len() * TEMPORAL_FEATURES);
            let mut table_idx = Vec::with_capacity(cells.len());
            for c in cells {
                match c.as_timestamp() {
                    Some(t) => {
                        values.extend(temporal_features(t));
                        table_idx.push(0);
                    }
                    None => {
                        values.extend([0.0; TEMPORAL_FEATURES]);
                        table_idx.push(1);
                    }
                }
            }
            ColumnCache::Dense {
                width: TEMPORAL_FEATURES,
                values,
                table_idx,
            }
        }
        ColumnKind::Categorical { vocab } => {
            let index: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect();
            ColumnCache::Index(
                cells
                    .iter()
                    .map(|c| {
                        if c.is_null() {
                            vocab.len() + 1
                        } else {
                            index.get(c.render().as_str()).copied().unwrap_or(vocab.len())
                        }
                    })
                    .collect(),
            )
        }
        ColumnKind::MultiCategorical { vocab, separator } => {
            let index: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect();
            let mut offsets = vec![0];
            let mut members = Vec::new();
            for c in cells {
                let before = members.len();
                if !c.is_null() {
                    let s = c.render();
                    members.extend(split_tokens(&s, separator).map(|t| index.get(t).copied().unwrap_or(vocab.len())));
                }
                if members.len() == before {
                    members.push(vocab.len() + 1);
                }
                offsets.push(members.len());
            }
            ColumnCache::Bag { offsets, members }
        }
        ColumnKind::Text { buckets, ngram } => {
            let mut offsets = vec![0];
            let mut members = Vec::new();
            for c in cells {
                let before = members.len();
                if !c.is_null() {
                    members.extend(text_buckets(&c.render(), *ngram, *buckets));
                }
                if members.len() == before {
                    members.push(*buckets);
                }
                offsets.push(members.len());
            }
            ColumnCache::Bag { offsets, members }
        }
    }
}

pub fn encode_table(enc: &TableEncoder, rows: &[Vec<Cell>]) -> TableCache {
    TableCache {
        n_rows: rows.len(),
        columns: enc
            .columns
            .iter()
            .map(|c| {
                let cells: Vec<&Cell> = rows.iter().map(|r| &r[c.column]).collect();
                cache_column(&c.kind, &cells)
            })
            .collect(),
    }
}

/// Caches for every table of `instance`, aligned with its tables.
pub fn encode_instance(spec: &EncoderSpec, instance: &RelationalInstance) -> Result<Vec<TableCache>, EncoderError> {
    instance
        .schema
        .tables
        .iter()
        .zip(&instance.tables)
        .map(|(def, table)| {
            let enc = spec.tables.get(&def.name).ok_or_else(|| EncoderError::UnknownTable(def.name.clone()))?;
            if enc.n_table_columns != def.columns.len() {
                return Err(EncoderError::ArityMismatch {
                    table: def.name.clone(),
                    expected: enc.n_table_columns,
                    found: def.columns.len(),
                });
            }
            Ok(encode_table(enc, &table.rows))
        })
        .collect()
}

fn param_name(table: &str, column: &str, part: &str) -> String {
    format!("enc.{table}.{column}.{part}")
}

/// Registers the learned encoder weights for every table.
pub fn init_encoder_params(spec: &EncoderSpec, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    let d0 = spec.d0;
    for (name, enc) in &spec.tables {
        if enc.columns.is_empty() {
            store.xavier(&format!("enc.{name}.const"), 1, d0, rng);
        }
        for c in &enc.columns {
            store.xavier(&param_name(name, &c.name, "table"), c.kind.table_rows(), d0, rng);
            match c.kind {
                ColumnKind::Numerical { .. } => {
                    store.xavier(&param_name(name, &c.name, "w"), 1, d0, rng);
                }
                ColumnKind::Temporal => {
                    store.xavier(&param_name(name, &c.name, "w"), TEMPORAL_FEATURES, d0, rng);
                }
                _ => {}
            }
        }
    }
}

/// One `rows.len() × d0` variable per encoded column of `table`.
pub fn encode_rows(
    tape: &mut Tape,
    store: &ParamStore,
    spec: &EncoderSpec,
    table: &str,
    cache: &TableCache,
    rows: &[u32],
) -> Result<Vec<Var>, EncoderError> {
    let enc = spec.tables.get(table).ok_or_else(|| EncoderError::UnknownTable(table.to_string()))?;
    let pid = |n: String| store.id(&n).unwrap_or_else(|| panic!("missing encoder parameter {n}"));
    if enc.columns.is_empty() {
        let c = tape.param(store, pid(format!("enc.{table}.const")));
        return Ok(vec![tape.gather_rows(c, vec![0; rows.len()])?]);
    }
    let mut out = Vec::with_capacity(enc.columns.len());
    for (c, col) in enc.columns.iter().zip(&cache.columns) {
        let lookup = tape.param(store, pid(param_name(table, &c.name, "table")));
        let v = match col {
            ColumnCache::Dense {
                width,
                values,
                table_idx,
            } => {
                let mut x = Vec::with_capacity(rows.len() * width);
                for &r in rows {
                    let r = r as usize;
                    x.extend_from_slice(&values[r * width..(r + 1) * width]);
                }
                let x = tape.constant(Tensor::from_vec(rows.len(), *width, x));
                let w = tape.param(store, pid(param_name(table, &c.name, "w")));
                let proj = tape.matmul(x, w)?;
                let bias = tape.gather_rows(lookup, rows.iter().map(|&r| table_idx[r as usize]).collect())?;
                tape.add(proj, bias)?
            }
            ColumnCache::Index(idx) => tape.gather_rows(lookup, rows.iter().map(|&r| idx[r as usize]).collect())?,
            ColumnCache::Bag { offsets, members } => {
                let mut picked = Vec::new();
                let mut dest = Vec::new();
                let mut scale = Vec::with_capacity(rows.len());
                for (o, &r) in rows.iter().enumerate() {
                    let span = &members[offsets[r as usize]..offsets[r as usize + 1]];
                    picked.extend_from_slice(span);
                    dest.extend(std::iter::repeat(o).take(span.len()));
                    scale.push(1.0 / span.len() as f64);
                }
                let g = tape.gather_rows(lookup, picked)?;
                let s = tape.scatter_add_rows(g, dest, rows.len())?;
                tape.scale_rows(s, scale)?
            }
        };
        out.push(v);
    }
    Ok(out)
}

/// Embeds a single tuple of `table` into an `n × d0` matrix.
pub fn encode_node(spec: &EncoderSpec, store: &ParamStore, table: &str, tuple: &[Cell]) -> Result<Tensor, EncoderError> {
    let enc = spec.tables.get(table).ok_or_else(|| EncoderError::UnknownTable(table.to_string()))?;
    if tuple.len() != enc.n_table_columns {
        return Err(EncoderError::ArityMismatch {
            table: table.to_string(),
            expected: enc.n_table_columns,
            found: tuple.len(),
        });
    }
    let cache = encode_table(enc, &[tuple.to_vec()]);
    let mut tape = Tape::new();
    let cols = encode_rows(&mut tape, store, spec, table, &cache, &[0])?;
    let mut data = Vec::with_capacity(cols.len() * spec.d0);
    for v in cols {
        data.extend_from_slice(&tape.value(v).data);
    }
    Ok(Tensor::from_vec(data.len() / spec.d0, spec.d0, data))
}
