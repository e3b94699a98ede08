//! Predictive tasks over a relational instance.
//!
//! A target-column task splits the target table in two: the instance keeps
//! the table minus the target column, and a training table pairs each
//! entity key with its label (and prediction time for temporal tasks). A
//! masking task keeps the table shape but nulls a random subset of cells,
//! recording the originals as reconstruction targets.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cell::Cell;
use crate::ingest::{RelationalInstance, Table};
use crate::schema::{ColumnDef, DeclaredType, ForeignKeyDef, SemanticType, TableDef};

#[derive(Debug, Error, PartialEq)]
pub enum TaskError {
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("table `{table}` has no column `{column}`")]
    UnknownColumn { table: String, column: String },
    #[error("target column `{0}` is a key column")]
    TargetIsKey(String),
    #[error("target column `{0}` is ignored by the attribute schema")]
    TargetIgnored(String),
    #[error("this task kind requires a target column")]
    MissingTargetColumn,
    #[error("every target value of `{0}` is null")]
    AllTargetsNull(String),
    #[error("binary task target `{column}` has {found} distinct values")]
    NotBinary { column: String, found: usize },
    #[error("regression target `{0}` holds non-numeric values")]
    NonNumericTarget(String),
    #[error("temporal task on `{0}`, which has no time column")]
    NoTimeColumn(String),
    #[error("task kind {0:?} is not valid for this operation")]
    WrongKind(TaskKind),
    #[error("mask rate {0} is outside (0, 1]")]
    BadMaskRate(f64),
    #[error("table `{0}` has no maskable cells")]
    NothingMaskable(String),
    #[error("split ratios {0:?} must be non-negative and sum to 1")]
    BadRatios([f64; 3]),
    #[error("training table has no timestamps")]
    MissingTimestamps,
    #[error("table `{0}` has no primary key")]
    NoPrimaryKey(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    BinaryClassification,
    MulticlassClassification,
    Regression,
    MaskPretrain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub ratios: [f64; 3],
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            ratios: [0.7, 0.15, 0.15],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub target_table: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_column: Option<String>,
    #[serde(default)]
    pub temporal: bool,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default = "default_mask_rate")]
    pub mask_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_mask_rate() -> f64 {
    0.15
}

impl TaskSpec {
    pub fn classification(table: &str, column: &str) -> TaskSpec {
        TaskSpec {
            kind: TaskKind::BinaryClassification,
            target_table: table.to_string(),
            target_column: Some(column.to_string()),
            temporal: false,
            split: SplitSpec::default(),
            mask_rate: default_mask_rate(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedCell {
    /// Column index in the target table.
    pub column: usize,
    pub original: Cell,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// Dense class indices; `classes[i]` is the original value of class `i`.
    Classes { labels: Vec<usize>, classes: Vec<Cell> },
    Regression(Vec<f64>),
    /// Per entity row, the masked cells to reconstruct.
    Masked(Vec<Vec<MaskedCell>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTable {
    pub kind: TaskKind,
    pub target_table: String,
    /// Row ordinal in the target table, which is also the node index.
    pub entity_rows: Vec<usize>,
    /// Primary key values of each entity (row ordinal when the table has no key).
    pub entity_keys: Vec<Vec<Cell>>,
    pub targets: Targets,
    pub timestamps: Option<Vec<i64>>,
    pub split: Vec<Split>,
}

impl TrainingTable {
    pub fn len(&self) -> usize {
        self.entity_rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entity_rows.is_empty()
    }

    pub fn rows_in(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == split).collect()
    }

    pub fn n_classes(&self) -> usize {
        match &self.targets {
            Targets::Classes { classes, .. } => classes.len(),
            _ => 0,
        }
    }

    /// Label cells in original values (class values, not indices).
    pub fn label_cells(&self) -> Vec<Cell> {
        match &self.targets {
            Targets::Classes { labels, classes } => labels.iter().map(|&l| classes[l].clone()).collect(),
            Targets::Regression(v) => v.iter().map(|&x| Cell::Real(x)).collect(),
            Targets::Masked(m) => m.iter().map(|cells| Cell::Integer(cells.len() as i64)).collect(),
        }
    }

    /// CSV export, columns `entity_key,label[,timestamp],split`. Mask tasks
    /// write one line per masked cell with an extra `column` field after
    /// the key. Composite keys join with `|`.
    pub fn write_csv(&self, path: &Path, target: &TableDef) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_path(path)?;
        let has_ts = self.timestamps.is_some();
        let key = |i: usize| {
            self.entity_keys[i]
                .iter()
                .map(Cell::render)
                .collect::<Vec<_>>()
                .join("|")
        };
        let ts = |i: usize| self.timestamps.as_ref().map(|t| t[i].to_string());
        match &self.targets {
            Targets::Masked(cells) => {
                let mut header = vec!["entity_key", "column", "label"];
                if has_ts {
                    header.push("timestamp");
                }
                header.push("split");
                w.write_record(&header)?;
                for (i, row) in cells.iter().enumerate() {
                    for m in row {
                        let mut rec = vec![key(i), target.columns[m.column].name.clone(), m.original.render()];
                        rec.extend(ts(i));
                        rec.push(self.split[i].name().to_string());
                        w.write_record(&rec)?;
                    }
                }
            }
            _ => {
                let mut header = vec!["entity_key", "label"];
                if has_ts {
                    header.push("timestamp");
                }
                header.push("split");
                w.write_record(&header)?;
                for (i, label) in self.label_cells().iter().enumerate() {
                    let mut rec = vec![key(i), label.render()];
                    rec.extend(ts(i));
                    rec.push(self.split[i].name().to_string());
                    w.write_record(&rec)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn target_table_index(instance: &RelationalInstance, spec: &TaskSpec) -> Result<usize, TaskError> {
    instance
        .schema
        .table_index(&spec.target_table)
        .ok_or_else(|| TaskError::UnknownTable(spec.target_table.clone()))
}

fn entity_key(def: &TableDef, row: &[Cell], ordinal: usize) -> Vec<Cell> {
    let pk = def.primary_key_indices();
    if pk.is_empty() {
        vec![Cell::Integer(ordinal as i64)]
    } else {
        pk.iter().map(|&i| row[i].clone()).collect()
    }
}

fn row_times(def: &TableDef, table: &Table, temporal: bool) -> Result<Option<Vec<Option<i64>>>, TaskError> {
    if !temporal {
        return Ok(None);
    }
    let tc = def
        .time_column
        .as_ref()
        .and_then(|c| def.column_index(c))
        .ok_or_else(|| TaskError::NoTimeColumn(def.name.clone()))?;
    Ok(Some(table.rows.iter().map(|r| r[tc].as_timestamp()).collect()))
}

/// Builds a task and assigns its split (random or temporal per `spec`).
pub fn build_task(
    instance: &RelationalInstance,
    spec: &TaskSpec,
) -> Result<(RelationalInstance, TrainingTable, Vec<SplitWarning>), TaskError> {
    let (modified, mut table) = match spec.kind {
        TaskKind::MaskPretrain => make_mask_pretrain_task(instance, spec)?,
        _ => extract_target_task(instance, spec)?,
    };
    let warnings = if spec.temporal {
        assign_temporal_split(&mut table, spec.split.ratios)?
    } else {
        assign_random_split(&mut table, spec.split.ratios, spec.seed)?;
        Vec::new()
    };
    Ok((modified, table, warnings))
}

/// Moves the target column out of the target table into a training table.
///
/// Rows with a null target (or, for temporal tasks, a null time) are left
/// out of the training table but stay in the instance. Any other column of
/// the target table that is an exact copy of the target is dropped too.
pub fn extract_target_task(
    instance: &RelationalInstance,
    spec: &TaskSpec,
) -> Result<(RelationalInstance, TrainingTable), TaskError> {
    if spec.kind == TaskKind::MaskPretrain {
        return Err(TaskError::WrongKind(spec.kind));
    }
    let ti = target_table_index(instance, spec)?;
    let def = &instance.schema.tables[ti];
    let table = &instance.tables[ti];
    let column = spec.target_column.as_ref().ok_or(TaskError::MissingTargetColumn)?;
    let ci = def.column_index(column).ok_or_else(|| TaskError::UnknownColumn {
        table: def.name.clone(),
        column: column.clone(),
    })?;
    if instance.schema.is_key_column(&def.name, column) || def.columns[ci].semantic().is_key() {
        return Err(TaskError::TargetIsKey(column.clone()));
    }
    if def.columns[ci].semantic_type == Some(SemanticType::Ignored) {
        return Err(TaskError::TargetIgnored(column.clone()));
    }
    let times = row_times(def, table, spec.temporal)?;

    let keep: Vec<usize> = (0..table.len())
        .filter(|&r| !table.rows[r][ci].is_null())
        .filter(|&r| times.as_ref().map_or(true, |t| t[r].is_some()))
        .collect();
    if keep.is_empty() {
        return Err(TaskError::AllTargetsNull(column.clone()));
    }
    let values: Vec<&Cell> = keep.iter().map(|&r| &table.rows[r][ci]).collect();
    let targets = match spec.kind {
        TaskKind::Regression => {
            let v: Option<Vec<f64>> = values.iter().map(|c| c.as_f64()).collect();
            Targets::Regression(v.ok_or_else(|| TaskError::NonNumericTarget(column.clone()))?)
        }
        _ => {
            let mut classes: Vec<Cell> = Vec::new();
            let mut index: HashMap<&Cell, usize> = HashMap::new();
            let mut labels = Vec::with_capacity(values.len());
            for v in &values {
                let next = classes.len();
                let idx = *index.entry(v).or_insert(next);
                if idx == next {
                    classes.push((*v).clone());
                }
                labels.push(idx);
            }
            if spec.kind == TaskKind::BinaryClassification && classes.len() != 2 {
                return Err(TaskError::NotBinary {
                    column: column.clone(),
                    found: classes.len(),
                });
            }
            Targets::Classes { labels, classes }
        }
    };

    // Drop the target and any exact copies of the full target vector.
    let target_vec: Vec<&Cell> = table.rows.iter().map(|r| &r[ci]).collect();
    let drop: Vec<usize> = (0..def.columns.len())
        .filter(|&j| {
            j == ci
                || (!instance.schema.is_key_column(&def.name, &def.columns[j].name)
                    && table.rows.iter().zip(&target_vec).all(|(r, t)| &r[j] == *t))
        })
        .collect();
    let mut modified = instance.clone();
    let mdef = &mut modified.schema.tables[ti];
    for &j in drop.iter().rev() {
        mdef.columns.remove(j);
    }
    for row in &mut modified.tables[ti].rows {
        for &j in drop.iter().rev() {
            row.remove(j);
        }
    }

    let training = TrainingTable {
        kind: spec.kind,
        target_table: def.name.clone(),
        entity_keys: keep.iter().map(|&r| entity_key(def, &table.rows[r], r)).collect(),
        timestamps: times.map(|t| keep.iter().map(|&r| t[r].unwrap()).collect()),
        split: vec![Split::Train; keep.len()],
        entity_rows: keep,
        targets,
    };
    Ok((modified, training))
}

/// Columns of the target table eligible for masking: non-key, not ignored,
/// and not the table's time column.
pub fn maskable_columns(instance: &RelationalInstance, table: &str) -> Vec<usize> {
    let Some((def, _)) = instance.table(table) else {
        return Vec::new();
    };
    instance
        .schema
        .factual_columns(table)
        .into_iter()
        .filter(|&j| {
            let c = &def.columns[j];
            c.semantic() != SemanticType::Ignored && def.time_column.as_deref() != Some(c.name.as_str())
        })
        .collect()
}

/// Masks each maskable non-null cell of the target table independently with
/// probability `mask_rate`, in row-major order under `spec.seed`.
pub fn make_mask_pretrain_task(
    instance: &RelationalInstance,
    spec: &TaskSpec,
) -> Result<(RelationalInstance, TrainingTable), TaskError> {
    if spec.kind != TaskKind::MaskPretrain {
        return Err(TaskError::WrongKind(spec.kind));
    }
    if !(spec.mask_rate > 0.0 && spec.mask_rate <= 1.0) {
        return Err(TaskError::BadMaskRate(spec.mask_rate));
    }
    let ti = target_table_index(instance, spec)?;
    let def = &instance.schema.tables[ti];
    let table = &instance.tables[ti];
    let cols = maskable_columns(instance, &def.name);
    let times = row_times(def, table, spec.temporal)?;
    let any_maskable = table.rows.iter().any(|r| cols.iter().any(|&j| !r[j].is_null()));
    if !any_maskable {
        return Err(TaskError::NothingMaskable(def.name.clone()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut modified = instance.clone();
    let mut entity_rows = Vec::new();
    let mut masked = Vec::new();
    for (r, row) in table.rows.iter().enumerate() {
        let mut cells = Vec::new();
        for &j in &cols {
            if row[j].is_null() {
                continue;
            }
            if rng.gen::<f64>() < spec.mask_rate {
                cells.push(MaskedCell {
                    column: j,
                    original: row[j].clone(),
                });
                modified.tables[ti].rows[r][j] = Cell::Null;
            }
        }
        let timed = times.as_ref().map_or(true, |t| t[r].is_some());
        if !cells.is_empty() && timed {
            entity_rows.push(r);
            masked.push(cells);
        } else if !cells.is_empty() {
            // No prediction time: leave the row unmasked.
            modified.tables[ti].rows[r] = row.clone();
        }
    }
    let training = TrainingTable {
        kind: TaskKind::MaskPretrain,
        target_table: def.name.clone(),
        entity_keys: entity_rows.iter().map(|&r| entity_key(def, &table.rows[r], r)).collect(),
        timestamps: times.map(|t| entity_rows.iter().map(|&r| t[r].unwrap()).collect()),
        split: vec![Split::Train; entity_rows.len()],
        entity_rows,
        targets: Targets::Masked(masked),
    };
    Ok((modified, training))
}

/// Writes recorded originals back into a masked instance.
pub fn restore_masked(masked: &RelationalInstance, table: &TrainingTable) -> RelationalInstance {
    let mut out = masked.clone();
    if let (Targets::Masked(cells), Some(ti)) = (&table.targets, out.schema.table_index(&table.target_table)) {
        for (&r, row) in table.entity_rows.iter().zip(cells) {
            for m in row {
                out.tables[ti].rows[r][m.column] = m.original.clone();
            }
        }
    }
    out
}

fn check_ratios(ratios: [f64; 3]) -> Result<(), TaskError> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(TaskError::BadRatios(ratios));
    }
    Ok(())
}

/// Per-split counts by largest remainder; ties go to the earlier split.
pub fn split_counts(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| (x + 1e-9).floor() as usize).collect();
    let mut rest = n.saturating_sub(counts.iter().sum());
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - counts[a] as f64;
        let fb = exact[b] - counts[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        if ratios[i] > 0.0 {
            counts[i] += 1;
            rest -= 1;
        }
    }
    [counts[0], counts[1], counts[2]]
}

/// Shuffles rows under `seed` and assigns largest-remainder counts.
pub fn assign_random_split(table: &mut TrainingTable, ratios: [f64; 3], seed: u64) -> Result<(), TaskError> {
    check_ratios(ratios)?;
    let n = table.len();
    let counts = split_counts(n, ratios);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    for (pos, &i) in order.iter().enumerate() {
        table.split[i] = if pos < counts[0] {
            Split::Train
        } else if pos < counts[0] + counts[1] {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitWarning {
    /// All timestamps are equal; every row went to train.
    TieDegenerate,
}

/// Orders rows by time and cuts at the cumulative ratio quantiles
/// (`floor(n * r0)`, `floor(n * (r0 + r1))`). Rows sharing the timestamp at
/// a cut move to the later split, so every train time precedes every val
/// time, and every val time precedes every test time.
pub fn assign_temporal_split(table: &mut TrainingTable, ratios: [f64; 3]) -> Result<Vec<SplitWarning>, TaskError> {
    check_ratios(ratios)?;
    let ts = table.timestamps.as_ref().ok_or(TaskError::MissingTimestamps)?;
    let n = ts.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| ts[i]);
    if ts[order[0]] == ts[order[n - 1]] {
        table.split.iter_mut().for_each(|s| *s = Split::Train);
        return Ok(vec![SplitWarning::TieDegenerate]);
    }
    let cut = |q: f64| ((n as f64 * q) + 1e-9).floor().min(n as f64) as usize;
    let back_off = |mut b: usize| {
        while b > 0 && b < n && ts[order[b - 1]] == ts[order[b]] {
            b -= 1;
        }
        b
    };
    let b1 = back_off(cut(ratios[0]));
    let b2 = back_off(cut(ratios[0] + ratios[1]).max(b1)).max(b1);
    for (pos, &i) in order.iter().enumerate() {
        table.split[i] = if pos < b1 {
            Split::Train
        } else if pos < b2 {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(Vec::new())
}

/// The training table as a relation: a copy of the target's key (primary key
/// here, foreign key into the target), the label, and the time if present.
pub fn training_relation(
    table: &TrainingTable,
    target: &TableDef,
) -> Result<(TableDef, Table, ForeignKeyDef), TaskError> {
    if target.primary_key.is_empty() {
        return Err(TaskError::NoPrimaryKey(target.name.clone()));
    }
    let mut columns: Vec<ColumnDef> = target
        .primary_key
        .iter()
        .map(|k| {
            let c = target.column(k).expect("validated key column");
            ColumnDef::new(k.clone(), c.declared_type)
        })
        .collect();
    let labels = table.label_cells();
    let label_type = match table.kind {
        TaskKind::Regression => DeclaredType::Real,
        TaskKind::MaskPretrain => DeclaredType::Integer,
        _ => DeclaredType::Text,
    };
    columns.push(ColumnDef::new("label", label_type));
    if table.timestamps.is_some() {
        columns.push(ColumnDef::new("timestamp", DeclaredType::Datetime));
    }
    let rows = (0..table.len())
        .map(|i| {
            let mut r = table.entity_keys[i].clone();
            r.push(match (&labels[i], label_type) {
                (Cell::Text(_), _) | (_, DeclaredType::Real | DeclaredType::Integer) => labels[i].clone(),
                (other, _) => Cell::Text(other.render()),
            });
            if let Some(ts) = &table.timestamps {
                r.push(Cell::Timestamp(ts[i]));
            }
            r
        })
        .collect();
    let name = format!("{}__train", target.name);
    let pk: Vec<&str> = target.primary_key.iter().map(String::as_str).collect();
    let mut def = TableDef::new(name.clone(), columns, &pk);
    if table.timestamps.is_some() {
        def.time_column = Some("timestamp".into());
    }
    let fk = ForeignKeyDef::new(&name, &pk, &target.name, &pk).named("entity");
    Ok((def, Table { rows }, fk))
}
