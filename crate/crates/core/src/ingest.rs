//! Loading relational instances from a CSV dataset directory or a SQLite
//! file, writing them back out, and checking key constraints.
//!
//! Dataset directory layout:
//!
//! ```text
//! dataset/schema.json     tables, columns, declared types, PK, FKs,
//!                         optional semantic overrides and time columns
//! dataset/<table>.csv     comma separated, `"` quoting, header row,
//!                         empty field = null
//! ```

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use serde::Serialize;
use thiserror::Error;

use crate::cell::Cell;
use crate::schema::{
    infer_semantic_types, sample_rows, ColumnDef, DeclaredType, ForeignKeyDef, InferenceConfig,
    InferenceError, RelationalSchema, Row, TableDef,
};

pub const SCHEMA_FILE: &str = "schema.json";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("table file `{}` is missing", .0.display())]
    MissingTableFile(PathBuf),
    #[error("cannot parse schema descriptor `{}`: {message}", .path.display())]
    DescriptorParseError { path: PathBuf, message: String },
    #[error("{table}.csv line {line}: row has {found} fields, expected {expected}")]
    ArityMismatch {
        table: String,
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("{table}.csv: header does not match the descriptor columns")]
    HeaderMismatch { table: String },
    #[error("`{}` is not a SQLite database: {message}", .path.display())]
    FileNotDatabase { path: PathBuf, message: String },
    #[error("sqlite: {0}")]
    Sqlite(#[from] rusqlite::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IngestWarning {
    /// A cell that could not be read as its declared type; stored as null.
    UnparseableCell {
        table: String,
        column: String,
        row: usize,
        raw: String,
    },
    /// A SQL column type with no storage mapping; treated as `unknown`.
    UnsupportedDeclaredType {
        table: String,
        column: String,
        declared: String,
    },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub rows: Vec<Row>,
}

impl Table {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, idx: usize) -> impl Iterator<Item = &Cell> + '_ {
        self.rows.iter().map(move |r| &r[idx])
    }
}

/// A schema plus row data; `tables[i]` holds the rows of `schema.tables[i]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RelationalInstance {
    pub schema: RelationalSchema,
    pub tables: Vec<Table>,
    pub warnings: Vec<IngestWarning>,
}

impl RelationalInstance {
    pub fn new(schema: RelationalSchema, tables: Vec<Table>) -> Self {
        assert_eq!(schema.tables.len(), tables.len(), "one row store per table");
        RelationalInstance {
            schema,
            tables,
            warnings: Vec::new(),
        }
    }

    pub fn table(&self, name: &str) -> Option<(&TableDef, &Table)> {
        let i = self.schema.table_index(name)?;
        Some((&self.schema.tables[i], &self.tables[i]))
    }

    pub fn row_count(&self, name: &str) -> Option<usize> {
        self.table(name).map(|(_, t)| t.len())
    }

    pub fn total_rows(&self) -> usize {
        self.tables.iter().map(Table::len).sum()
    }

    /// Runs semantic type inference on every table, keeping descriptor
    /// overrides for non-key columns.
    pub fn infer_types(&mut self, config: &InferenceConfig) -> Result<(), InferenceError> {
        for (i, table) in self.tables.iter().enumerate() {
            let def = &self.schema.tables[i];
            let fks = self.schema.foreign_key_columns(&def.name);
            let inferred = if table.is_empty() {
                // No data to look at: keys still get key types, the rest keep
                // any override or fall back to the storage type.
                let mut d = def.clone();
                for c in &mut d.columns {
                    c.semantic_type = Some(storage_fallback(def, &fks, c));
                }
                d
            } else {
                let sample = sample_rows(&table.rows, config.sample_size);
                infer_semantic_types(def, &fks, &sample, config)?
            };
            self.schema.tables[i] = inferred;
        }
        Ok(())
    }
}

fn storage_fallback(def: &TableDef, fks: &BTreeSet<String>, c: &ColumnDef) -> crate::schema::SemanticType {
    use crate::schema::SemanticType as S;
    if def.primary_key.contains(&c.name) {
        return S::PrimaryKey;
    }
    if fks.contains(&c.name) {
        return S::ForeignKey;
    }
    if let Some(t) = c.semantic_type.filter(|t| !t.is_key()) {
        return t;
    }
    match c.declared_type {
        DeclaredType::Integer | DeclaredType::Real => S::Numerical,
        DeclaredType::Boolean => S::Categorical,
        DeclaredType::Datetime => S::Temporal,
        DeclaredType::Text => S::Text,
        DeclaredType::Unknown => S::Ignored,
    }
}

pub fn read_descriptor(path: &Path) -> Result<RelationalSchema, IngestError> {
    let text = fs::read_to_string(path).map_err(|e| IngestError::DescriptorParseError {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| IngestError::DescriptorParseError {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Loads `<dir>/<table>.csv` for every table in the descriptor and infers
/// semantic types with the default configuration.
pub fn load_csv_dataset(dir: &Path, descriptor: &Path) -> Result<RelationalInstance, IngestError> {
    load_csv_dataset_with(dir, descriptor, &InferenceConfig::default())
}

pub fn load_csv_dataset_with(
    dir: &Path,
    descriptor: &Path,
    config: &InferenceConfig,
) -> Result<RelationalInstance, IngestError> {
    let schema = read_descriptor(descriptor)?;
    let mut tables = Vec::with_capacity(schema.tables.len());
    let mut warnings = Vec::new();
    for def in &schema.tables {
        let path = dir.join(format!("{}.csv", def.name));
        if !path.is_file() {
            return Err(IngestError::MissingTableFile(path));
        }
        let (table, w) = read_table_csv(&path, def)?;
        tables.push(table);
        warnings.extend(w);
    }
    let mut instance = RelationalInstance {
        schema,
        tables,
        warnings,
    };
    instance.infer_types(config)?;
    Ok(instance)
}

fn read_table_csv(path: &Path, def: &TableDef) -> Result<(Table, Vec<IngestWarning>), IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let header = reader.headers()?.clone();
    let names: Vec<&str> = header.iter().collect();
    let expected: Vec<&str> = def.columns.iter().map(|c| c.name.as_str()).collect();
    if names != expected {
        return Err(IngestError::HeaderMismatch {
            table: def.name.clone(),
        });
    }
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != def.columns.len() {
            return Err(IngestError::ArityMismatch {
                table: def.name.clone(),
                line: record.position().map(|p| p.line()).unwrap_or(0),
                expected: def.columns.len(),
                found: record.len(),
            });
        }
        let row_idx = rows.len();
        let row: Row = record
            .iter()
            .zip(&def.columns)
            .map(|(raw, col)| {
                Cell::parse_as(raw, col.declared_type).unwrap_or_else(|| {
                    warnings.push(IngestWarning::UnparseableCell {
                        table: def.name.clone(),
                        column: col.name.clone(),
                        row: row_idx,
                        raw: raw.to_string(),
                    });
                    Cell::Null
                })
            })
            .collect();
        rows.push(row);
    }
    Ok((Table { rows }, warnings))
}

/// Writes `schema.json` and one CSV per table. Reloading the directory yields
/// the same cells, except that empty text values read back as null.
pub fn write_csv_dataset(instance: &RelationalInstance, dir: &Path) -> Result<(), IngestError> {
    fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(&instance.schema).expect("schema serializes");
    fs::write(dir.join(SCHEMA_FILE), json)?;
    for (def, table) in instance.schema.tables.iter().zip(&instance.tables) {
        let mut w = csv::Writer::from_path(dir.join(format!("{}.csv", def.name)))?;
        w.write_record(def.columns.iter().map(|c| c.name.as_str()))?;
        for row in &table.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Maps a SQL column type to a storage class following SQLite's affinity
/// rules, with date/time and boolean names recognized first.
pub fn map_sql_type(declared: &str) -> Option<DeclaredType> {
    let t = declared.to_ascii_uppercase();
    if t.trim().is_empty() {
        return Some(DeclaredType::Unknown);
    }
    if t.contains("DATE") || t.contains("TIME") {
        return Some(DeclaredType::Datetime);
    }
    if t.contains("BOOL") {
        return Some(DeclaredType::Boolean);
    }
    if t.contains("INT") {
        return Some(DeclaredType::Integer);
    }
    if t.contains("CHAR") || t.contains("CLOB") || t.contains("TEXT") {
        return Some(DeclaredType::Text);
    }
    if ["REAL", "FLOA", "DOUB", "NUMERIC", "DECIMAL"].iter().any(|k| t.contains(k)) {
        return Some(DeclaredType::Real);
    }
    None
}

/// Reads schema and rows from a SQLite file. Without `override_schema` the
/// tables, primary keys and foreign keys come from the catalog.
pub fn load_sqlite(
    db_path: &Path,
    override_schema: Option<RelationalSchema>,
) -> Result<RelationalInstance, IngestError> {
    load_sqlite_with(db_path, override_schema, &InferenceConfig::default())
}

pub fn load_sqlite_with(
    db_path: &Path,
    override_schema: Option<RelationalSchema>,
    config: &InferenceConfig,
) -> Result<RelationalInstance, IngestError> {
    let not_db = |message: String| IngestError::FileNotDatabase {
        path: db_path.to_path_buf(),
        message,
    };
    if !db_path.is_file() {
        return Err(not_db("no such file".into()));
    }
    let conn = Connection::open_with_flags(db_path, OpenFlags::SQLITE_OPEN_READ_ONLY)
        .map_err(|e| not_db(e.to_string()))?;
    let mut warnings = Vec::new();
    let schema = match override_schema {
        Some(s) => s,
        None => read_catalog(&conn, &mut warnings).map_err(|e| match e {
            IngestError::Sqlite(inner) => not_db(inner.to_string()),
            other => other,
        })?,
    };

    let mut tables = Vec::with_capacity(schema.tables.len());
    for def in &schema.tables {
        let cols = def
            .columns
            .iter()
            .map(|c| quote_ident(&c.name))
            .collect::<Vec<_>>()
            .join(", ");
        let sql = format!("SELECT {cols} FROM {} ORDER BY rowid", quote_ident(&def.name));
        let mut stmt = match conn.prepare(&sql) {
            Ok(s) => s,
            // WITHOUT ROWID tables
            Err(_) => conn.prepare(&format!("SELECT {cols} FROM {}", quote_ident(&def.name)))?,
        };
        let mut rows = Vec::new();
        let mut q = stmt.query([])?;
        while let Some(r) = q.next()? {
            let row_idx = rows.len();
            let mut row = Vec::with_capacity(def.columns.len());
            for (i, col) in def.columns.iter().enumerate() {
                let cell = convert_sqlite_value(r.get_ref(i)?, col.declared_type);
                let cell = cell.unwrap_or_else(|| {
                    warnings.push(IngestWarning::UnparseableCell {
                        table: def.name.clone(),
                        column: col.name.clone(),
                        row: row_idx,
                        raw: describe_value(r.get_ref(i).ok()),
                    });
                    Cell::Null
                });
                row.push(cell);
            }
            rows.push(row);
        }
        tables.push(Table { rows });
    }
    let mut instance = RelationalInstance {
        schema,
        tables,
        warnings,
    };
    instance.infer_types(config)?;
    Ok(instance)
}

fn quote_ident(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

fn describe_value(v: Option<ValueRef<'_>>) -> String {
    match v {
        Some(ValueRef::Text(t)) => String::from_utf8_lossy(t).into_owned(),
        Some(ValueRef::Blob(b)) => format!("<blob {} bytes>", b.len()),
        Some(ValueRef::Integer(i)) => i.to_string(),
        Some(ValueRef::Real(f)) => f.to_string(),
        _ => String::new(),
    }
}

fn convert_sqlite_value(v: ValueRef<'_>, declared: DeclaredType) -> Option<Cell> {
    use DeclaredType as D;
    match (v, declared) {
        (ValueRef::Null, _) => Some(Cell::Null),
        (ValueRef::Blob(_), _) => None,
        (ValueRef::Text(t), d) => {
            let s = std::str::from_utf8(t).ok()?;
            Cell::parse_as(s, d)
        }
        (ValueRef::Integer(i), D::Integer) => Some(Cell::Integer(i)),
        (ValueRef::Integer(i), D::Real) => Some(Cell::Real(i as f64)),
        (ValueRef::Integer(i), D::Boolean) => match i {
            0 => Some(Cell::Boolean(false)),
            1 => Some(Cell::Boolean(true)),
            _ => None,
        },
        (ValueRef::Integer(i), D::Datetime) => Some(Cell::Timestamp(i)),
        (ValueRef::Integer(i), D::Text | D::Unknown) => Some(Cell::Text(i.to_string())),
        (ValueRef::Real(f), D::Real) => Some(Cell::Real(f)),
        (ValueRef::Real(f), D::Integer) if f.fract() == 0.0 => Some(Cell::Integer(f as i64)),
        (ValueRef::Real(_), D::Integer | D::Boolean) => None,
        (ValueRef::Real(f), D::Datetime) => Some(Cell::Timestamp(f.floor() as i64)),
        (ValueRef::Real(f), D::Text | D::Unknown) => Some(Cell::Text(f.to_string())),
    }
}

fn read_catalog(conn: &Connection, warnings: &mut Vec<IngestWarning>) -> Result<RelationalSchema, IngestError> {
    let mut stmt = conn.prepare(
        "SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY name",
    )?;
    let names: Vec<String> = stmt
        .query_map([], |r| r.get::<_, String>(0))?
        .collect::<Result<_, _>>()?;

    let mut tables = Vec::new();
    let mut foreign_keys = Vec::new();
    for name in &names {
        let mut info = conn.prepare(&format!("PRAGMA table_info({})", quote_ident(name)))?;
        let mut pk: Vec<(i64, String)> = Vec::new();
        let mut columns = Vec::new();
        let mut rows = info.query([])?;
        while let Some(r) = rows.next()? {
            let col: String = r.get(1)?;
            let ty: String = r.get::<_, Option<String>>(2)?.unwrap_or_default();
            let notnull: i64 = r.get(3)?;
            let pk_pos: i64 = r.get(5)?;
            let declared = map_sql_type(&ty).unwrap_or_else(|| {
                warnings.push(IngestWarning::UnsupportedDeclaredType {
                    table: name.clone(),
                    column: col.clone(),
                    declared: ty.clone(),
                });
                DeclaredType::Unknown
            });
            if pk_pos > 0 {
                pk.push((pk_pos, col.clone()));
            }
            columns.push(ColumnDef {
                name: col,
                declared_type: declared,
                semantic_type: None,
                nullable: notnull == 0,
            });
        }
        pk.sort();
        let primary_key: Vec<String> = pk.into_iter().map(|(_, c)| c).collect();
        tables.push(TableDef {
            name: name.clone(),
            columns,
            primary_key,
            time_column: None,
        });

        // id, seq, table, from, to
        let mut fkq = conn.prepare(&format!("PRAGMA foreign_key_list({})", quote_ident(name)))?;
        let mut grouped: Vec<(i64, String, Vec<(i64, String, Option<String>)>)> = Vec::new();
        let mut rows = fkq.query([])?;
        while let Some(r) = rows.next()? {
            let id: i64 = r.get(0)?;
            let seq: i64 = r.get(1)?;
            let parent: String = r.get(2)?;
            let from: String = r.get(3)?;
            let to: Option<String> = r.get(4)?;
            match grouped.iter_mut().find(|g| g.0 == id) {
                Some(g) => g.2.push((seq, from, to)),
                None => grouped.push((id, parent, vec![(seq, from, to)])),
            }
        }
        grouped.sort_by_key(|g| g.0);
        for (_, parent, mut cols) in grouped {
            cols.sort_by_key(|c| c.0);
            foreign_keys.push((name.clone(), parent, cols));
        }
    }

    // Second pass: FKs that omit the referenced columns point at the parent PK.
    let mut fk_defs = Vec::new();
    for (child, parent, cols) in foreign_keys {
        let parent_pk = tables
            .iter()
            .find(|t| t.name == parent)
            .map(|t| t.primary_key.clone())
            .unwrap_or_default();
        let child_columns: Vec<String> = cols.iter().map(|c| c.1.clone()).collect();
        let parent_columns: Vec<String> = if cols.iter().all(|c| c.2.is_some()) {
            cols.iter().map(|c| c.2.clone().unwrap()).collect()
        } else {
            parent_pk
        };
        fk_defs.push(ForeignKeyDef {
            name: None,
            child_table: child,
            child_columns,
            parent_table: parent,
            parent_columns,
        });
    }
    // Unnamed FKs sharing child columns get a positional suffix.
    let mut seen: HashMap<String, usize> = HashMap::new();
    for fk in &mut fk_defs {
        let key = format!("{}.{}", fk.child_table, fk.fk_name());
        let n = seen.entry(key).or_insert(0);
        if *n > 0 {
            fk.name = Some(format!("{}#{}", fk.fk_name(), n));
        }
        *n += 1;
    }
    Ok(RelationalSchema {
        tables,
        foreign_keys: fk_defs,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ForeignKeyIntegrity {
    pub foreign_key: String,
    pub child_table: String,
    pub parent_table: String,
    pub null: usize,
    pub matched: usize,
    pub dangling: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PrimaryKeyViolation {
    pub table: String,
    /// Rows whose key duplicates an earlier row.
    pub duplicate_rows: Vec<usize>,
    /// Rows with a null in some key column.
    pub null_key_rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct IntegrityReport {
    pub foreign_keys: Vec<ForeignKeyIntegrity>,
    pub primary_keys: Vec<PrimaryKeyViolation>,
}

impl IntegrityReport {
    pub fn total_dangling(&self) -> usize {
        self.foreign_keys.iter().map(|f| f.dangling).sum()
    }

    pub fn is_clean(&self) -> bool {
        self.total_dangling() == 0 && self.primary_keys.is_empty()
    }
}

/// Extracts the key tuple at `cols`, or `None` if any component is null.
pub fn key_of(row: &Row, cols: &[usize]) -> Option<Vec<Cell>> {
    let key: Vec<Cell> = cols.iter().map(|&i| row[i].clone()).collect();
    if key.iter().any(Cell::is_null) {
        None
    } else {
        Some(key)
    }
}

/// Row index of every non-null primary key value (first occurrence wins).
pub fn primary_key_index(def: &TableDef, table: &Table) -> HashMap<Vec<Cell>, usize> {
    let cols = def.primary_key_indices();
    let mut idx = HashMap::with_capacity(table.len());
    if cols.is_empty() {
        return idx;
    }
    for (r, row) in table.rows.iter().enumerate() {
        if let Some(k) = key_of(row, &cols) {
            idx.entry(k).or_insert(r);
        }
    }
    idx
}

/// Column indices of a foreign key in its child and parent tables.
pub fn fk_column_indices(schema: &RelationalSchema, fk: &ForeignKeyDef) -> Option<(Vec<usize>, Vec<usize>)> {
    let child = schema.table(&fk.child_table)?;
    let parent = schema.table(&fk.parent_table)?;
    let c: Option<Vec<usize>> = fk.child_columns.iter().map(|n| child.column_index(n)).collect();
    let p: Option<Vec<usize>> = fk.parent_columns.iter().map(|n| parent.column_index(n)).collect();
    Some((c?, p?))
}

/// Counts null, matched and dangling FK references and duplicate PK values.
/// Composite FKs with any null component count as null.
pub fn check_referential_integrity(instance: &RelationalInstance) -> IntegrityReport {
    let mut report = IntegrityReport::default();
    let schema = &instance.schema;
    for (def, table) in schema.tables.iter().zip(&instance.tables) {
        let cols = def.primary_key_indices();
        if cols.is_empty() {
            continue;
        }
        let mut seen = HashMap::with_capacity(table.len());
        let mut dup = Vec::new();
        let mut nulls = Vec::new();
        for (r, row) in table.rows.iter().enumerate() {
            match key_of(row, &cols) {
                None => nulls.push(r),
                Some(k) => {
                    if seen.insert(k, r).is_some() {
                        dup.push(r);
                    }
                }
            }
        }
        if !dup.is_empty() || !nulls.is_empty() {
            report.primary_keys.push(PrimaryKeyViolation {
                table: def.name.clone(),
                duplicate_rows: dup,
                null_key_rows: nulls,
            });
        }
    }

    for fk in &schema.foreign_keys {
        let mut entry = ForeignKeyIntegrity {
            foreign_key: fk.label(),
            child_table: fk.child_table.clone(),
            parent_table: fk.parent_table.clone(),
            null: 0,
            matched: 0,
            dangling: 0,
        };
        let (Some((_, child)), Some((pdef, parent))) =
            (instance.table(&fk.child_table), instance.table(&fk.parent_table))
        else {
            report.foreign_keys.push(entry);
            continue;
        };
        let Some((ccols, pcols)) = fk_column_indices(schema, fk) else {
            report.foreign_keys.push(entry);
            continue;
        };
        let index: std::collections::HashSet<Vec<Cell>> = if pcols == pdef.primary_key_indices() {
            primary_key_index(pdef, parent).into_keys().collect()
        } else {
            parent.rows.iter().filter_map(|r| key_of(r, &pcols)).collect()
        };
        for row in &child.rows {
            match key_of(row, &ccols) {
                None => entry.null += 1,
                Some(k) if index.contains(&k) => entry.matched += 1,
                Some(_) => entry.dangling += 1,
            }
        }
        report.foreign_keys.push(entry);
    }
    report
}
