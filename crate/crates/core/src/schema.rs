//! Relational schema vocabulary: tables, columns, keys, and semantic column
//! types, plus the heuristic cascade that assigns semantic types from data.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cell::{parse_timestamp, Cell};

pub type Row = Vec<Cell>;

/// Storage type tag as declared by the source (CSV descriptor or SQL catalog).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeclaredType {
    Integer,
    Real,
    Text,
    Boolean,
    Datetime,
    Unknown,
}

impl Default for DeclaredType {
    fn default() -> Self {
        DeclaredType::Unknown
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticType {
    Numerical,
    Categorical,
    MultiCategorical,
    Text,
    Temporal,
    PrimaryKey,
    ForeignKey,
    Ignored,
}

impl SemanticType {
    pub const ALL: [SemanticType; 8] = [
        SemanticType::Numerical,
        SemanticType::Categorical,
        SemanticType::MultiCategorical,
        SemanticType::Text,
        SemanticType::Temporal,
        SemanticType::PrimaryKey,
        SemanticType::ForeignKey,
        SemanticType::Ignored,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SemanticType::Numerical => "numerical",
            SemanticType::Categorical => "categorical",
            SemanticType::MultiCategorical => "multi_categorical",
            SemanticType::Text => "text",
            SemanticType::Temporal => "temporal",
            SemanticType::PrimaryKey => "primary_key",
            SemanticType::ForeignKey => "foreign_key",
            SemanticType::Ignored => "ignored",
        }
    }

    pub fn is_key(self) -> bool {
        matches!(self, SemanticType::PrimaryKey | SemanticType::ForeignKey)
    }
}

impl fmt::Display for SemanticType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    #[serde(rename = "type", default)]
    pub declared_type: DeclaredType,
    /// `None` until inference runs; descriptors may pin a value up front.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic_type: Option<SemanticType>,
    #[serde(default = "default_true")]
    pub nullable: bool,
}

fn default_true() -> bool {
    true
}

impl ColumnDef {
    pub fn new(name: impl Into<String>, declared_type: DeclaredType) -> Self {
        ColumnDef {
            name: name.into(),
            declared_type,
            semantic_type: None,
            nullable: true,
        }
    }

    pub fn with_semantic(mut self, ty: SemanticType) -> Self {
        self.semantic_type = Some(ty);
        self
    }

    /// Semantic type, treating a not-yet-inferred column as ignored.
    pub fn semantic(&self) -> SemanticType {
        self.semantic_type.unwrap_or(SemanticType::Ignored)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableDef {
    pub name: String,
    pub columns: Vec<ColumnDef>,
    #[serde(default)]
    pub primary_key: Vec<String>,
    /// Column that timestamps each row, if the table is temporal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_column: Option<String>,
}

impl TableDef {
    pub fn new(name: impl Into<String>, columns: Vec<ColumnDef>, primary_key: &[&str]) -> Self {
        TableDef {
            name: name.into(),
            columns,
            primary_key: primary_key.iter().map(|s| s.to_string()).collect(),
            time_column: None,
        }
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Option<&ColumnDef> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn primary_key_indices(&self) -> Vec<usize> {
        self.primary_key
            .iter()
            .filter_map(|k| self.column_index(k))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForeignKeyDef {
    /// Identifies the constraint; defaults to the child columns joined by `+`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub child_table: String,
    pub child_columns: Vec<String>,
    pub parent_table: String,
    pub parent_columns: Vec<String>,
}

impl ForeignKeyDef {
    pub fn new(child: &str, child_cols: &[&str], parent: &str, parent_cols: &[&str]) -> Self {
        ForeignKeyDef {
            name: None,
            child_table: child.to_string(),
            child_columns: child_cols.iter().map(|s| s.to_string()).collect(),
            parent_table: parent.to_string(),
            parent_columns: parent_cols.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn named(mut self, name: &str) -> Self {
        self.name = Some(name.to_string());
        self
    }

    pub fn fk_name(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| self.child_columns.join("+"))
    }

    /// `child.fk->parent`, unique within a valid schema.
    pub fn label(&self) -> String {
        format!("{}.{}->{}", self.child_table, self.fk_name(), self.parent_table)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RelationalSchema {
    pub tables: Vec<TableDef>,
    #[serde(default)]
    pub foreign_keys: Vec<ForeignKeyDef>,
}

impl RelationalSchema {
    pub fn table(&self, name: &str) -> Option<&TableDef> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn table_index(&self, name: &str) -> Option<usize> {
        self.tables.iter().position(|t| t.name == name)
    }

    /// Column names of `table` that belong to some foreign key.
    pub fn foreign_key_columns(&self, table: &str) -> BTreeSet<String> {
        self.foreign_keys
            .iter()
            .filter(|fk| fk.child_table == table)
            .flat_map(|fk| fk.child_columns.iter().cloned())
            .collect()
    }

    /// Whether a column takes part in the table's primary key or any foreign key.
    pub fn is_key_column(&self, table: &str, column: &str) -> bool {
        let pk = self
            .table(table)
            .map(|t| t.primary_key.iter().any(|k| k == column))
            .unwrap_or(false);
        pk || self
            .foreign_keys
            .iter()
            .any(|fk| fk.child_table == table && fk.child_columns.iter().any(|c| c == column))
    }

    /// Non-key columns of a table.
    pub fn factual_columns(&self, table: &str) -> Vec<usize> {
        match self.table(table) {
            Some(t) => (0..t.columns.len())
                .filter(|&i| !self.is_key_column(table, &t.columns[i].name))
                .collect(),
            None => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    DuplicateTable,
    DuplicateColumn,
    MissingPrimaryKeyColumn,
    UnknownTable,
    UnknownColumn,
    ArityMismatch,
    ParentNotPrimaryKey,
    MissingTimeColumn,
}

/// One broken schema invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub rule: Rule,
    pub table: String,
    pub column: Option<String>,
    /// FK label when the violation concerns a foreign key.
    pub foreign_key: Option<String>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Checks every schema invariant. An empty result means the schema is valid.
pub fn validate_schema(schema: &RelationalSchema) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen_tables = HashSet::new();
    for table in &schema.tables {
        if !seen_tables.insert(table.name.as_str()) {
            out.push(Violation {
                rule: Rule::DuplicateTable,
                table: table.name.clone(),
                column: None,
                foreign_key: None,
                message: format!("table `{}` is declared more than once", table.name),
            });
        }
        let mut seen_cols = HashSet::new();
        for col in &table.columns {
            if !seen_cols.insert(col.name.as_str()) {
                out.push(Violation {
                    rule: Rule::DuplicateColumn,
                    table: table.name.clone(),
                    column: Some(col.name.clone()),
                    foreign_key: None,
                    message: format!("column `{}.{}` is declared more than once", table.name, col.name),
                });
            }
        }
        for key in &table.primary_key {
            if table.column_index(key).is_none() {
                out.push(Violation {
                    rule: Rule::MissingPrimaryKeyColumn,
                    table: table.name.clone(),
                    column: Some(key.clone()),
                    foreign_key: None,
                    message: format!("primary key column `{}.{}` does not exist", table.name, key),
                });
            }
        }
        if let Some(tc) = &table.time_column {
            if table.column_index(tc).is_none() {
                out.push(Violation {
                    rule: Rule::MissingTimeColumn,
                    table: table.name.clone(),
                    column: Some(tc.clone()),
                    foreign_key: None,
                    message: format!("time column `{}.{}` does not exist", table.name, tc),
                });
            }
        }
    }

    for fk in &schema.foreign_keys {
        let label = fk.label();
        let violation = |rule, table: &str, column: Option<&str>, message: String| Violation {
            rule,
            table: table.to_string(),
            column: column.map(str::to_string),
            foreign_key: Some(label.clone()),
            message,
        };
        if fk.child_columns.len() != fk.parent_columns.len() || fk.child_columns.is_empty() {
            out.push(violation(
                Rule::ArityMismatch,
                &fk.child_table,
                None,
                format!("foreign key {label}: child and parent column lists differ in arity"),
            ));
        }
        let child = schema.table(&fk.child_table);
        let parent = schema.table(&fk.parent_table);
        match child {
            None => out.push(violation(
                Rule::UnknownTable,
                &fk.child_table,
                None,
                format!("foreign key {label}: child table `{}` does not exist", fk.child_table),
            )),
            Some(t) => {
                for c in &fk.child_columns {
                    if t.column_index(c).is_none() {
                        out.push(violation(
                            Rule::UnknownColumn,
                            &t.name,
                            Some(c),
                            format!("foreign key {label}: column `{}.{}` does not exist", t.name, c),
                        ));
                    }
                }
            }
        }
        match parent {
            None => out.push(violation(
                Rule::UnknownTable,
                &fk.parent_table,
                None,
                format!("foreign key {label}: parent table `{}` does not exist", fk.parent_table),
            )),
            Some(t) => {
                let mut missing = false;
                for c in &fk.parent_columns {
                    if t.column_index(c).is_none() {
                        missing = true;
                        out.push(violation(
                            Rule::UnknownColumn,
                            &t.name,
                            Some(c),
                            format!("foreign key {label}: column `{}.{}` does not exist", t.name, c),
                        ));
                    }
                }
                if !missing && fk.parent_columns != t.primary_key {
                    out.push(violation(
                        Rule::ParentNotPrimaryKey,
                        &t.name,
                        None,
                        format!(
                            "foreign key {label}: referenced columns ({}) are not the primary key of `{}`",
                            fk.parent_columns.join(", "),
                            t.name
                        ),
                    ));
                }
            }
        }
    }
    out
}

/// Thresholds for the semantic type cascade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    pub sample_size: usize,
    pub temporal_name_patterns: Vec<String>,
    /// Minimum parseable share for a temporal-looking column name.
    pub temporal_name_min_parse_ratio: f64,
    pub categorical_max_unique_ratio: f64,
    pub categorical_max_distinct: usize,
    pub multi_separator: String,
    pub multi_min_row_ratio: f64,
    pub ignore_null_ratio: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            sample_size: 10_000,
            temporal_name_patterns: ["date", "time", "timestamp", "_at"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            temporal_name_min_parse_ratio: 0.9,
            categorical_max_unique_ratio: 0.1,
            categorical_max_distinct: 1000,
            multi_separator: ",".to_string(),
            multi_min_row_ratio: 0.2,
            ignore_null_ratio: 0.5,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum InferenceError {
    #[error("table `{0}`: cannot infer column types from an empty sample")]
    EmptySample(String),
    #[error("table `{table}`: sample row has {found} cells, expected {expected}")]
    RowArity {
        table: String,
        expected: usize,
        found: usize,
    },
}

/// Deterministic evenly strided sample of at most `size` rows.
pub fn sample_rows(rows: &[Row], size: usize) -> Vec<&Row> {
    if rows.len() <= size || size == 0 {
        return rows.iter().collect();
    }
    (0..size).map(|i| &rows[i * rows.len() / size]).collect()
}

/// Assigns a semantic type to every column of `table`.
///
/// Cascade: key membership, descriptor override, temporal name + parse rate,
/// value patterns, unique-ratio / delimiter rules, then a storage fallback.
/// Sparse columns (null share above `ignore_null_ratio`) that reach the
/// fallback are ignored.
pub fn infer_semantic_types(
    table: &TableDef,
    foreign_key_columns: &BTreeSet<String>,
    sample: &[&Row],
    config: &InferenceConfig,
) -> Result<TableDef, InferenceError> {
    if sample.is_empty() {
        return Err(InferenceError::EmptySample(table.name.clone()));
    }
    for row in sample {
        if row.len() != table.columns.len() {
            return Err(InferenceError::RowArity {
                table: table.name.clone(),
                expected: table.columns.len(),
                found: row.len(),
            });
        }
    }
    let mut out = table.clone();
    for (i, col) in out.columns.iter_mut().enumerate() {
        let ty = if table.primary_key.contains(&col.name) {
            SemanticType::PrimaryKey
        } else if foreign_key_columns.contains(&col.name) {
            SemanticType::ForeignKey
        } else if let Some(pinned) = col.semantic_type.filter(|t| !t.is_key()) {
            pinned
        } else {
            let values: Vec<&Cell> = sample.iter().map(|r| &r[i]).collect();
            infer_column(&col.name, &values, config)
        };
        col.semantic_type = Some(ty);
    }
    Ok(out)
}

fn infer_column(name: &str, values: &[&Cell], config: &InferenceConfig) -> SemanticType {
    let non_null: Vec<&Cell> = values.iter().copied().filter(|c| !c.is_null()).collect();
    if non_null.is_empty() {
        return SemanticType::Ignored;
    }
    let null_ratio = 1.0 - non_null.len() as f64 / values.len() as f64;
    let total = non_null.len() as f64;

    let parseable_time = non_null
        .iter()
        .filter(|c| match c {
            Cell::Timestamp(_) => true,
            Cell::Text(s) => parse_timestamp(s).is_some(),
            _ => false,
        })
        .count() as f64;
    let lname = name.to_ascii_lowercase();
    let name_says_time = config
        .temporal_name_patterns
        .iter()
        .any(|p| lname.contains(&p.to_ascii_lowercase()));
    if name_says_time && parseable_time / total >= config.temporal_name_min_parse_ratio {
        return SemanticType::Temporal;
    }
    if parseable_time == total {
        return SemanticType::Temporal;
    }
    if non_null.iter().all(|c| matches!(c, Cell::Boolean(_))) {
        return SemanticType::Categorical;
    }

    let all_text = non_null.iter().all(|c| matches!(c, Cell::Text(_)));
    if all_text
        && non_null
            .iter()
            .all(|c| matches!(c, Cell::Text(s) if s.trim().parse::<f64>().is_ok()))
    {
        return SemanticType::Numerical;
    }
    if non_null.iter().all(|c| matches!(c, Cell::Real(_))) {
        return SemanticType::Numerical;
    }

    let few_distinct = |distinct: usize, over: f64| {
        distinct as f64 / over <= config.categorical_max_unique_ratio
            && distinct <= config.categorical_max_distinct
    };

    if all_text && !config.multi_separator.is_empty() {
        let sep = config.multi_separator.as_str();
        let mut multi_rows = 0usize;
        let mut tokens = HashSet::new();
        for c in &non_null {
            if let Cell::Text(s) = c {
                let parts: Vec<&str> = s.split(sep).map(str::trim).filter(|t| !t.is_empty()).collect();
                if parts.len() > 1 {
                    multi_rows += 1;
                }
                tokens.extend(parts);
            }
        }
        if multi_rows as f64 / total >= config.multi_min_row_ratio && few_distinct(tokens.len(), total) {
            return SemanticType::MultiCategorical;
        }
    }

    let distinct: HashSet<&Cell> = non_null.iter().copied().collect();
    if few_distinct(distinct.len(), total) {
        return SemanticType::Categorical;
    }
    if null_ratio > config.ignore_null_ratio {
        return SemanticType::Ignored;
    }
    if all_text {
        SemanticType::Text
    } else {
        SemanticType::Numerical
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_table_schema() -> RelationalSchema {
        RelationalSchema {
            tables: vec![
                TableDef::new(
                    "parent",
                    vec![ColumnDef::new("id", DeclaredType::Integer), ColumnDef::new("name", DeclaredType::Text)],
                    &["id"],
                ),
                TableDef::new(
                    "child",
                    vec![
                        ColumnDef::new("id", DeclaredType::Integer),
                        ColumnDef::new("parent_id", DeclaredType::Integer),
                        ColumnDef::new("amount", DeclaredType::Real),
                    ],
                    &["id"],
                ),
            ],
            foreign_keys: vec![ForeignKeyDef::new("child", &["parent_id"], "parent", &["id"])],
        }
    }

    #[test]
    fn well_formed_schema_has_no_violations() {
        assert!(validate_schema(&two_table_schema()).is_empty());
    }

    #[test]
    fn fk_to_non_pk_column_is_one_violation() {
        let mut s = two_table_schema();
        s.foreign_keys[0].parent_columns = vec!["name".into()];
        let v = validate_schema(&s);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::ParentNotPrimaryKey);
        assert_eq!(v[0].foreign_key.as_deref(), Some("child.parent_id->parent"));
    }

    #[test]
    fn duplicate_table_is_one_violation() {
        let mut s = two_table_schema();
        let dup = s.tables[0].clone();
        s.tables.push(dup);
        let v = validate_schema(&s);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::DuplicateTable);
    }

    #[test]
    fn missing_columns_and_tables_are_reported() {
        let mut s = two_table_schema();
        s.foreign_keys.push(ForeignKeyDef::new("ghost", &["x"], "parent", &["id"]));
        s.foreign_keys.push(ForeignKeyDef::new("child", &["nope"], "parent", &["id"]));
        s.tables[0].primary_key.push("absent".into());
        let rules: Vec<Rule> = validate_schema(&s).into_iter().map(|v| v.rule).collect();
        assert!(rules.contains(&Rule::UnknownTable));
        assert!(rules.contains(&Rule::UnknownColumn));
        assert!(rules.contains(&Rule::MissingPrimaryKeyColumn));
    }

    fn infer_one(name: &str, declared: DeclaredType, cells: Vec<Cell>) -> SemanticType {
        let table = TableDef::new("t", vec![ColumnDef::new(name, declared)], &[]);
        let rows: Vec<Row> = cells.into_iter().map(|c| vec![c]).collect();
        let sample: Vec<&Row> = rows.iter().collect();
        let out = infer_semantic_types(&table, &BTreeSet::new(), &sample, &InferenceConfig::default()).unwrap();
        out.columns[0].semantic()
    }

    #[test]
    fn low_cardinality_text_is_categorical() {
        let cells = (0..1000).map(|i| Cell::Text(["x", "y", "z"][i % 3].into())).collect();
        assert_eq!(infer_one("kind", DeclaredType::Text, cells), SemanticType::Categorical);
    }

    #[test]
    fn high_cardinality_text_is_text() {
        let cells = (0..200).map(|i| Cell::Text(format!("note number {i}"))).collect();
        assert_eq!(infer_one("comment", DeclaredType::Text, cells), SemanticType::Text);
    }

    #[test]
    fn iso_dates_are_temporal() {
        let raw: Vec<String> = (0..100).map(|i| format!("2021-{:02}-{:02}", i % 12 + 1, i % 28 + 1)).collect();
        // Oracle: every sampled value matches the date pattern.
        let matched = raw.iter().filter(|s| parse_timestamp(s).is_some()).count();
        assert_eq!(matched, raw.len());
        let cells = raw.into_iter().map(Cell::Text).collect();
        assert_eq!(infer_one("whenever", DeclaredType::Text, cells), SemanticType::Temporal);
    }

    #[test]
    fn temporal_name_tolerates_a_few_bad_values() {
        let mut cells: Vec<Cell> = (0..95).map(|i| Cell::Text(format!("2020-01-{:02}", i % 28 + 1))).collect();
        cells.extend((0..5).map(|_| Cell::Text("unknown".into())));
        assert_eq!(infer_one("created_at", DeclaredType::Text, cells.clone()), SemanticType::Temporal);
        assert_ne!(infer_one("label", DeclaredType::Text, cells), SemanticType::Temporal);
    }

    #[test]
    fn numeric_strings_and_reals_are_numerical() {
        let cells = (0..100).map(|i| Cell::Text(format!("{}.5", i))).collect();
        assert_eq!(infer_one("v", DeclaredType::Text, cells), SemanticType::Numerical);
        let cells = (0..100).map(|i| Cell::Real(i as f64 * 0.5)).collect();
        assert_eq!(infer_one("v", DeclaredType::Real, cells), SemanticType::Numerical);
    }

    #[test]
    fn delimited_tokens_are_multi_categorical() {
        let cells = (0..100)
            .map(|i| Cell::Text(if i % 2 == 0 { "a,b".into() } else { "c".into() }))
            .collect();
        assert_eq!(infer_one("tags", DeclaredType::Text, cells), SemanticType::MultiCategorical);
    }

    #[test]
    fn sparse_unstructured_column_is_ignored() {
        let mut cells: Vec<Cell> = (0..40).map(|i| Cell::Text(format!("free text {i}"))).collect();
        cells.extend((0..60).map(|_| Cell::Null));
        assert_eq!(infer_one("remark", DeclaredType::Text, cells), SemanticType::Ignored);
        assert_eq!(infer_one("empty", DeclaredType::Text, vec![Cell::Null; 10]), SemanticType::Ignored);
    }

    #[test]
    fn keys_take_precedence_over_content() {
        let table = TableDef::new(
            "t",
            vec![
                ColumnDef::new("id", DeclaredType::Text).with_semantic(SemanticType::Text),
                ColumnDef::new("ref", DeclaredType::Text),
            ],
            &["id"],
        );
        let rows: Vec<Row> = (0..1000)
            .map(|i| vec![Cell::Text(format!("k{i}")), Cell::Text(["a", "b"][i % 2].into())])
            .collect();
        let sample: Vec<&Row> = rows.iter().collect();
        let fks: BTreeSet<String> = ["ref".to_string()].into();
        let out = infer_semantic_types(&table, &fks, &sample, &InferenceConfig::default()).unwrap();
        assert_eq!(out.columns[0].semantic(), SemanticType::PrimaryKey);
        assert_eq!(out.columns[1].semantic(), SemanticType::ForeignKey);
    }

    #[test]
    fn inference_is_deterministic_and_exhaustive() {
        let table = TableDef::new(
            "t",
            vec![
                ColumnDef::new("a", DeclaredType::Integer),
                ColumnDef::new("b", DeclaredType::Text),
                ColumnDef::new("c", DeclaredType::Real),
            ],
            &[],
        );
        let rows: Vec<Row> = (0..500)
            .map(|i| vec![Cell::Integer(i % 7), Cell::Text(format!("w{}", i * 31 % 97)), Cell::Real(i as f64)])
            .collect();
        let sample = sample_rows(&rows, 200);
        let cfg = InferenceConfig::default();
        let a = infer_semantic_types(&table, &BTreeSet::new(), &sample, &cfg).unwrap();
        let b = infer_semantic_types(&table, &BTreeSet::new(), &sample, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.columns.iter().all(|c| c.semantic_type.is_some()));
    }

    #[test]
    fn empty_sample_is_an_error() {
        let table = TableDef::new("t", vec![ColumnDef::new("a", DeclaredType::Integer)], &[]);
        assert_eq!(
            infer_semantic_types(&table, &BTreeSet::new(), &[], &InferenceConfig::default()),
            Err(InferenceError::EmptySample("t".into()))
        );
    }
}
