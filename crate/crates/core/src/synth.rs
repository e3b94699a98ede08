//! Seeded synthetic relational databases with known ground truth.
//!
//! Tables are `t0..t{n-1}`, each keyed by `id`. `t0` is the target table and
//! carries a binary `label` column. Foreign key columns are named after the
//! parent table (`t1_id`, `dim_id`, ...). Every count the generator decides
//! is written to a [`SynthLedger`] so tests can check derived structures
//! against it.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cell::Cell;
use crate::ingest::{RelationalInstance, Table};
use crate::schema::{ColumnDef, DeclaredType, ForeignKeyDef, RelationalSchema, SemanticType, TableDef};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    BadSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// `t0 -> t1 -> ... -> t{n-1}`.
    Chain,
    /// `t0` references every other table.
    Star,
    /// `t{n-1}` references every other table.
    Junction,
    /// Each `t_i` references at least one `t_j` with `j > i`.
    RandomDag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    /// Labels are fair coins.
    None,
    /// Parity of the target row's own `cat_0` code.
    TargetLocal,
    /// Parity of `cat_0` of the parent referenced by `t0`'s first FK.
    TargetOneHop,
    /// Parity of `cat_0` of a row in an extra dimension table `dim`.
    TargetDimension,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMix {
    pub numerical: usize,
    pub categorical: usize,
    pub multi_categorical: usize,
    pub text: usize,
}

impl ColumnMix {
    pub fn total(&self) -> usize {
        self.numerical + self.categorical + self.multi_categorical + self.text
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_tables: usize,
    pub rows_per_table: usize,
    /// Per-table row counts overriding `rows_per_table`.
    pub table_rows: BTreeMap<String, usize>,
    pub topology: Topology,
    /// Edge probability for `random_dag` beyond the one guaranteed parent.
    pub edge_prob: f64,
    /// Adds `t{n-1} -> t0`, closing a cycle in the schema graph.
    pub cycle_edge: bool,
    pub columns: ColumnMix,
    pub target_columns: ColumnMix,
    pub cardinality: usize,
    pub null_fk_rate: f64,
    /// Exact number of non-null FK cells rewritten to reference no row.
    pub n_dangling: usize,
    /// Adds a `ts` time column to every table.
    pub temporal: bool,
    pub signal: Signal,
    /// Probability that a label is replaced by a fair coin.
    pub noise_rate: f64,
    pub dimension_rows: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_tables: 3,
            rows_per_table: 200,
            table_rows: BTreeMap::new(),
            topology: Topology::Chain,
            edge_prob: 0.3,
            cycle_edge: false,
            columns: ColumnMix {
                numerical: 1,
                categorical: 1,
                multi_categorical: 0,
                text: 0,
            },
            target_columns: ColumnMix {
                numerical: 1,
                categorical: 1,
                multi_categorical: 0,
                text: 0,
            },
            cardinality: 4,
            null_fk_rate: 0.0,
            n_dangling: 0,
            temporal: false,
            signal: Signal::None,
            noise_rate: 0.05,
            dimension_rows: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalMapping {
    pub table: String,
    pub column: String,
    /// FK of `t0` leading to the signal table, if the signal is not local.
    pub via_foreign_key: Option<String>,
    pub rule: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SynthLedger {
    pub rows: BTreeMap<String, usize>,
    /// Per FK label: cells holding a value (including dangling ones).
    pub non_null_fk_cells: BTreeMap<String, usize>,
    pub null_fk_cells: BTreeMap<String, usize>,
    pub dangling_fk_cells: BTreeMap<String, usize>,
    pub total_dangling: usize,
    pub n_factual_columns: usize,
    /// Labels differing from the noiseless signal.
    pub label_flips: usize,
    pub signal: Option<SignalMapping>,
    /// Best achievable AUC given the label noise.
    pub bayes_auc: f64,
}

impl SynthLedger {
    /// Expected graph edges for an FK: non-null cells minus dangling ones.
    pub fn expected_edges(&self, fk_label: &str) -> usize {
        self.non_null_fk_cells.get(fk_label).copied().unwrap_or(0) - self.dangling_fk_cells.get(fk_label).copied().unwrap_or(0)
    }
}

const WORDS: [&str; 12] = [
    "alpha", "bravo", "delta", "echo", "gamma", "kilo", "lima", "oscar", "sierra", "tango", "victor", "zulu",
];
const TS_BASE: i64 = 1_500_000_000;
const TS_SPAN: i64 = 100_000_000;

fn table_name(i: usize) -> String {
    format!("t{i}")
}

fn fk_column(parent: &str) -> String {
    format!("{parent}_id")
}

fn validate(spec: &SynthSpec) -> Result<(), SynthError> {
    let bad = |m: &str| Err(SynthError::BadSpec(m.to_string()));
    if spec.n_tables == 0 {
        return bad("n_tables must be at least 1");
    }
    if spec.cardinality < 2 {
        return bad("cardinality must be at least 2");
    }
    for (name, rate) in [("null_fk_rate", spec.null_fk_rate), ("noise_rate", spec.noise_rate), ("edge_prob", spec.edge_prob)] {
        if !(0.0..=1.0).contains(&rate) {
            return bad(&format!("{name} must lie in [0, 1]"));
        }
    }
    if spec.cycle_edge && spec.n_tables < 2 {
        return bad("cycle_edge needs at least 2 tables");
    }
    match spec.signal {
        Signal::TargetLocal if spec.target_columns.categorical == 0 => bad("target_local needs a categorical target column"),
        Signal::TargetOneHop if spec.columns.categorical == 0 => bad("target_one_hop needs categorical columns"),
        Signal::TargetOneHop if !matches!(spec.topology, Topology::Chain | Topology::Star | Topology::RandomDag) || spec.n_tables < 2 => {
            bad("target_one_hop needs t0 to reference a parent")
        }
        Signal::TargetDimension if spec.dimension_rows == 0 => bad("target_dimension needs dimension rows"),
        _ => Ok(()),
    }
}

/// FK pairs `(child, parent)` over table indices for the topology.
fn topology_links(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let n = spec.n_tables;
    let mut links = Vec::new();
    match spec.topology {
        Topology::Chain => links.extend((1..n).map(|i| (i - 1, i))),
        Topology::Star => links.extend((1..n).map(|i| (0, i))),
        Topology::Junction => links.extend((0..n.saturating_sub(1)).map(|i| (n - 1, i))),
        Topology::RandomDag => {
            for i in 0..n.saturating_sub(1) {
                let first = rng.gen_range(i + 1..n);
                for j in i + 1..n {
                    if j == first || rng.gen::<f64>() < spec.edge_prob {
                        links.push((i, j));
                    }
                }
            }
        }
    }
    if spec.cycle_edge {
        links.push((n - 1, 0));
    }
    links
}

fn factual_columns(mix: &ColumnMix, card: usize, rng: &mut ChaCha8Rng, rows: usize) -> (Vec<ColumnDef>, Vec<Vec<Cell>>) {
    let mut defs = Vec::new();
    let mut cols: Vec<Vec<Cell>> = Vec::new();
    let codes = Uniform::new(0, card);
    for k in 0..mix.numerical {
        defs.push(ColumnDef::new(format!("num_{k}"), DeclaredType::Real).with_semantic(SemanticType::Numerical));
        cols.push((0..rows).map(|_| Cell::Real((rng.gen::<f64>() * 1000.0).round() / 100.0)).collect());
    }
    for k in 0..mix.categorical {
        defs.push(ColumnDef::new(format!("cat_{k}"), DeclaredType::Text).with_semantic(SemanticType::Categorical));
        cols.push((0..rows).map(|_| Cell::Text(format!("c{}", codes.sample(rng)))).collect());
    }
    for k in 0..mix.multi_categorical {
        defs.push(ColumnDef::new(format!("multi_{k}"), DeclaredType::Text).with_semantic(SemanticType::MultiCategorical));
        cols.push(
            (0..rows)
                .map(|_| {
                    let n = rng.gen_range(1..=3);
                    let parts: Vec<String> = (0..n).map(|_| format!("m{}", codes.sample(rng))).collect();
                    Cell::Text(parts.join(","))
                })
                .collect(),
        );
    }
    for k in 0..mix.text {
        defs.push(ColumnDef::new(format!("text_{k}"), DeclaredType::Text).with_semantic(SemanticType::Text));
        cols.push(
            (0..rows)
                .map(|_| {
                    let parts: Vec<&str> = (0..3).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect();
                    Cell::Text(parts.join(" "))
                })
                .collect(),
        );
    }
    (defs, cols)
}

fn parity(cell: &Cell) -> i64 {
    match cell {
        Cell::Text(s) => s.trim_start_matches('c').parse::<i64>().unwrap_or(0) % 2,
        _ => 0,
    }
}

struct Builder {
    defs: Vec<ColumnDef>,
    cols: Vec<Vec<Cell>>,
}

pub fn generate(spec: &SynthSpec) -> Result<(RelationalInstance, SynthLedger), SynthError> {
    validate(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut names: Vec<String> = (0..spec.n_tables).map(table_name).collect();
    let mut links = topology_links(spec, &mut rng);
    if spec.signal == Signal::TargetDimension {
        names.push("dim".into());
        links.push((0, spec.n_tables));
    }
    let rows: Vec<usize> = names
        .iter()
        .map(|n| {
            spec.table_rows.get(n).copied().unwrap_or(if n == "dim" {
                spec.dimension_rows
            } else {
                spec.rows_per_table
            })
        })
        .collect();

    // Key columns, then factual columns, then FK columns.
    let mut builders: Vec<Builder> = Vec::new();
    let mut ledger = SynthLedger::default();
    for (t, name) in names.iter().enumerate() {
        let n = rows[t];
        let mut defs = vec![ColumnDef::new("id", DeclaredType::Integer).with_semantic(SemanticType::PrimaryKey)];
        defs[0].nullable = false;
        let mut cols = vec![(0..n).map(|r| Cell::Integer(r as i64)).collect::<Vec<_>>()];
        let mix = if t == 0 {
            spec.target_columns
        } else if name == "dim" {
            ColumnMix {
                categorical: 1,
                ..Default::default()
            }
        } else {
            spec.columns
        };
        let (d, c) = factual_columns(&mix, spec.cardinality, &mut rng, n);
        defs.extend(d);
        cols.extend(c);
        if spec.temporal {
            defs.push(ColumnDef::new("ts", DeclaredType::Datetime).with_semantic(SemanticType::Temporal));
            cols.push((0..n).map(|_| Cell::Timestamp(TS_BASE + rng.gen_range(0..TS_SPAN))).collect());
        }
        ledger.rows.insert(name.clone(), n);
        builders.push(Builder { defs, cols });
    }

    let signal_link = match spec.signal {
        Signal::TargetOneHop => links.iter().position(|&(c, _)| c == 0),
        Signal::TargetDimension => Some(links.len() - 1),
        _ => None,
    };
    let mut fks = Vec::new();
    let mut fk_cells: Vec<(usize, usize)> = Vec::new(); // (link, row) of non-null cells
    for (li, &(child, parent)) in links.iter().enumerate() {
        let mut col_name = fk_column(&names[parent]);
        while builders[child].defs.iter().any(|c| c.name == col_name) {
            col_name.push('_');
        }
        let n_parent = rows[parent];
        let protect = Some(li) == signal_link;
        let cells: Vec<Cell> = (0..rows[child])
            .map(|r| {
                if n_parent == 0 || (!protect && rng.gen::<f64>() < spec.null_fk_rate) {
                    Cell::Null
                } else {
                    if !protect {
                        fk_cells.push((li, r));
                    }
                    Cell::Integer(rng.gen_range(0..n_parent) as i64)
                }
            })
            .collect();
        let fk = ForeignKeyDef::new(&names[child], &[&col_name], &names[parent], &["id"]);
        let label = fk.label();
        let non_null = cells.iter().filter(|c| !c.is_null()).count();
        ledger.non_null_fk_cells.insert(label.clone(), non_null);
        ledger.null_fk_cells.insert(label.clone(), cells.len() - non_null);
        ledger.dangling_fk_cells.insert(label, 0);
        builders[child]
            .defs
            .push(ColumnDef::new(col_name, DeclaredType::Integer).with_semantic(SemanticType::ForeignKey));
        builders[child].cols.push(cells);
        fks.push(fk);
    }

    if spec.n_dangling > fk_cells.len() {
        return Err(SynthError::BadSpec(format!(
            "{} dangling cells requested but only {} eligible FK cells",
            spec.n_dangling,
            fk_cells.len()
        )));
    }
    let picks = rand::seq::index::sample(&mut rng, fk_cells.len(), spec.n_dangling).into_vec();
    for (k, p) in picks.into_iter().enumerate() {
        let (li, r) = fk_cells[p];
        let (child, parent) = links[li];
        let col = builders[child].defs.iter().position(|c| c.name == fks[li].child_columns[0]).unwrap();
        builders[child].cols[col][r] = Cell::Integer((rows[parent] + k) as i64);
        *ledger.dangling_fk_cells.get_mut(&fks[li].label()).unwrap() += 1;
    }
    ledger.total_dangling = spec.n_dangling;

    // Label on t0.
    let n0 = rows[0];
    let clean: Vec<i64> = match spec.signal {
        Signal::None => (0..n0).map(|_| rng.gen_range(0..2)).collect(),
        Signal::TargetLocal => {
            let col = builders[0].defs.iter().position(|c| c.name == "cat_0").unwrap();
            builders[0].cols[col].iter().map(parity).collect()
        }
        Signal::TargetOneHop | Signal::TargetDimension => {
            let li = signal_link.ok_or_else(|| SynthError::BadSpec("t0 references no parent".into()))?;
            let (_, parent) = links[li];
            let fk_col = builders[0].defs.iter().position(|c| c.name == fks[li].child_columns[0]).unwrap();
            let cat = builders[parent].defs.iter().position(|c| c.name == "cat_0").unwrap();
            builders[0].cols[fk_col]
                .iter()
                .map(|c| parity(&builders[parent].cols[cat][c.as_f64().unwrap() as usize]))
                .collect()
        }
    };
    let labels: Vec<i64> = clean
        .iter()
        .map(|&y| {
            if spec.signal != Signal::None && rng.gen::<f64>() < spec.noise_rate {
                rng.gen_range(0..2)
            } else {
                y
            }
        })
        .collect();
    if spec.signal != Signal::None {
        ledger.label_flips = labels.iter().zip(&clean).filter(|(a, b)| a != b).count();
        ledger.bayes_auc = 1.0 - spec.noise_rate / 2.0;
        ledger.signal = Some(match spec.signal {
            Signal::TargetLocal => SignalMapping {
                table: names[0].clone(),
                column: "cat_0".into(),
                via_foreign_key: None,
                rule: "label = code(cat_0) mod 2".into(),
            },
            _ => {
                let li = signal_link.unwrap();
                SignalMapping {
                    table: names[links[li].1].clone(),
                    column: "cat_0".into(),
                    via_foreign_key: Some(fks[li].label()),
                    rule: "label = code(parent.cat_0) mod 2".into(),
                }
            }
        });
    } else {
        ledger.bayes_auc = 0.5;
    }
    builders[0]
        .defs
        .push(ColumnDef::new("label", DeclaredType::Integer).with_semantic(SemanticType::Categorical));
    builders[0].cols.push(labels.into_iter().map(Cell::Integer).collect());

    let mut tables = Vec::new();
    let mut data = Vec::new();
    for (t, b) in builders.into_iter().enumerate() {
        let mut def = TableDef::new(names[t].clone(), b.defs, &["id"]);
        if spec.temporal {
            def.time_column = Some("ts".into());
        }
        let rows = (0..rows[t]).map(|r| b.cols.iter().map(|c| c[r].clone()).collect()).collect();
        tables.push(def);
        data.push(Table { rows });
    }
    let schema = RelationalSchema {
        tables,
        foreign_keys: fks,
    };
    ledger.n_factual_columns = schema.tables.iter().map(|t| schema.factual_columns(&t.name).len()).sum();
    Ok((RelationalInstance::new(schema, data), ledger))
}
