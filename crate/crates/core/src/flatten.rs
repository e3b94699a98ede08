//! Join-flattening of a target table.
//!
//! Many-to-one parents and one-to-one relations (in either direction) are
//! left-joined onto the target rows, so the row count never changes.
//! One-to-many relations are skipped. Joined columns are named
//! `<table>.<column>`; when a table is reached twice through different
//! foreign keys the later copy is named `<table>.<fk>.<column>`.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::cell::Cell;
use crate::features::{fk_multiplicities, Multiplicity};
use crate::ingest::{fk_column_indices, key_of, primary_key_index, RelationalInstance, Table};
use crate::schema::{ColumnDef, RelationalSchema, TableDef};

#[derive(Debug, Error)]
pub enum FlattenError {
    #[error("target table {0} not found")]
    TargetMissing(String),
    #[error("depth must be at least 1")]
    BadDepth,
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Where a flattened column came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSource {
    pub table: String,
    pub column: String,
    /// Foreign keys followed from the target, in order.
    pub path: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlattenedTable {
    pub target_table: String,
    pub columns: Vec<ColumnDef>,
    pub sources: Vec<ColumnSource>,
    pub rows: Vec<Vec<Cell>>,
}

impl FlattenedTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// CSV with prefixed headers; nulls are empty fields.
    pub fn write_csv(&self, path: &Path) -> Result<(), FlattenError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.columns.iter().map(|c| c.name.as_str()))?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.flush()?;
        Ok(())
    }

    /// A single-table instance named after the target. The target's primary
    /// key columns come first so training-table keys stay valid; the time
    /// column is kept when it survived the flattening.
    pub fn into_instance(self, original: &RelationalInstance) -> Result<RelationalInstance, FlattenError> {
        let (def, table) = original
            .table(&self.target_table)
            .ok_or_else(|| FlattenError::TargetMissing(self.target_table.clone()))?;
        let pk = def.primary_key_indices();
        let mut columns: Vec<ColumnDef> = pk.iter().map(|&i| def.columns[i].clone()).collect();
        columns.extend(self.columns);
        let rows = table
            .rows
            .iter()
            .zip(self.rows)
            .map(|(orig, flat)| {
                let mut r: Vec<Cell> = pk.iter().map(|&i| orig[i].clone()).collect();
                r.extend(flat);
                r
            })
            .collect();
        let pk_names: Vec<&str> = def.primary_key.iter().map(String::as_str).collect();
        let mut out = TableDef::new(&self.target_table, columns, &pk_names);
        out.time_column = def.time_column.clone().filter(|t| out.column_index(t).is_some());
        let schema = RelationalSchema {
            tables: vec![out],
            foreign_keys: Vec::new(),
        };
        Ok(RelationalInstance::new(schema, vec![Table { rows }]))
    }
}

struct Joined {
    table: String,
    /// Row of `table` matched to each target row.
    rows: Vec<Option<usize>>,
    path: Vec<String>,
}

/// Flattens `target` by joining qualifying relations up to `depth` hops away.
pub fn flatten_target(instance: &RelationalInstance, target: &str, depth: usize) -> Result<FlattenedTable, FlattenError> {
    if depth == 0 {
        return Err(FlattenError::BadDepth);
    }
    let schema = &instance.schema;
    let (tdef, ttable) = instance.table(target).ok_or_else(|| FlattenError::TargetMissing(target.to_string()))?;
    let one_to_one: HashSet<String> = fk_multiplicities(instance)
        .into_iter()
        .filter(|m| m.multiplicity == Multiplicity::OneToOne)
        .map(|m| m.foreign_key)
        .collect();

    let mut columns = Vec::new();
    let mut sources = Vec::new();
    let mut taken = HashSet::new();
    for i in schema.factual_columns(target) {
        columns.push(tdef.columns[i].clone());
        taken.insert(tdef.columns[i].name.clone());
        sources.push(ColumnSource {
            table: target.to_string(),
            column: tdef.columns[i].name.clone(),
            path: Vec::new(),
        });
    }
    let mut rows: Vec<Vec<Cell>> = ttable
        .rows
        .iter()
        .map(|r| schema.factual_columns(target).iter().map(|&i| r[i].clone()).collect())
        .collect();

    let mut pk_cache: HashMap<String, HashMap<Vec<Cell>, usize>> = HashMap::new();
    let mut visited: BTreeSet<String> = BTreeSet::from([target.to_string()]);
    let mut frontier = vec![Joined {
        table: target.to_string(),
        rows: (0..ttable.len()).map(Some).collect(),
        path: Vec::new(),
    }];
    for _ in 0..depth {
        let mut next = Vec::new();
        let mut reached = BTreeSet::new();
        for from in &frontier {
            let (_, from_table) = instance.table(&from.table).expect("joined table exists");
            for fk in &schema.foreign_keys {
                let Some((child_cols, parent_cols)) = fk_column_indices(schema, fk) else { continue };
                let (other, rows_of_other) = if fk.child_table == from.table {
                    // Many-to-one: follow the key to the parent row.
                    if visited.contains(&fk.parent_table) {
                        continue;
                    }
                    let (pdef, ptable) = instance.table(&fk.parent_table).expect("validated schema");
                    let index = pk_cache
                        .entry(fk.parent_table.clone())
                        .or_insert_with(|| primary_key_index(pdef, ptable));
                    let mapped: Vec<Option<usize>> = from
                        .rows
                        .iter()
                        .map(|r| r.and_then(|r| key_of(&from_table.rows[r], &child_cols)).and_then(|k| index.get(&k).copied()))
                        .collect();
                    (&fk.parent_table, mapped)
                } else if fk.parent_table == from.table && one_to_one.contains(&fk.label()) {
                    if visited.contains(&fk.child_table) {
                        continue;
                    }
                    let (_, ctable) = instance.table(&fk.child_table).expect("validated schema");
                    let mut by_key: HashMap<Vec<Cell>, usize> = HashMap::new();
                    for (i, row) in ctable.rows.iter().enumerate() {
                        if let Some(k) = key_of(row, &child_cols) {
                            by_key.entry(k).or_insert(i);
                        }
                    }
                    let mapped = from
                        .rows
                        .iter()
                        .map(|r| r.and_then(|r| key_of(&from_table.rows[r], &parent_cols)).and_then(|k| by_key.get(&k).copied()))
                        .collect();
                    (&fk.child_table, mapped)
                } else {
                    continue;
                };
                let (odef, otable) = instance.table(other).expect("validated schema");
                let plain = format!("{other}.");
                let fact = schema.factual_columns(other);
                let prefix = if fact.iter().any(|&i| taken.contains(&format!("{plain}{}", odef.columns[i].name))) {
                    format!("{other}.{}.", fk.fk_name())
                } else {
                    plain
                };
                let mut path = from.path.clone();
                path.push(fk.label());
                for &i in &fact {
                    let mut col = odef.columns[i].clone();
                    col.name = format!("{prefix}{}", col.name);
                    col.nullable = true;
                    taken.insert(col.name.clone());
                    columns.push(col);
                    sources.push(ColumnSource {
                        table: other.clone(),
                        column: odef.columns[i].name.clone(),
                        path: path.clone(),
                    });
                }
                for (out, m) in rows.iter_mut().zip(&rows_of_other) {
                    match m {
                        Some(r) => out.extend(fact.iter().map(|&i| otable.rows[*r][i].clone())),
                        None => out.extend(fact.iter().map(|_| Cell::Null)),
                    }
                }
                reached.insert(other.clone());
                next.push(Joined {
                    table: other.clone(),
                    rows: rows_of_other,
                    path,
                });
            }
        }
        visited.extend(reached);
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    Ok(FlattenedTable {
        target_table: target.to_string(),
        columns,
        sources,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{DeclaredType, ForeignKeyDef, SemanticType};

    fn col(name: &str, ty: DeclaredType, sem: SemanticType) -> ColumnDef {
        ColumnDef::new(name, ty).with_semantic(sem)
    }

    fn star() -> RelationalInstance {
        use DeclaredType::*;
        use SemanticType as S;
        let fact = TableDef::new(
            "fact",
            vec![
                col("id", Integer, S::PrimaryKey),
                col("x", Real, S::Numerical),
                col("dim_id", Integer, S::ForeignKey),
            ],
            &["id"],
        );
        let dim = TableDef::new("dim", vec![col("id", Integer, S::PrimaryKey), col("c", Text, S::Categorical)], &["id"]);
        let detail = TableDef::new(
            "detail",
            vec![col("fact_id", Integer, S::PrimaryKey), col("note", Text, S::Categorical)],
            &["fact_id"],
        );
        let many = TableDef::new(
            "event",
            vec![
                col("id", Integer, S::PrimaryKey),
                col("fact_id", Integer, S::ForeignKey),
                col("v", Real, S::Numerical),
            ],
            &["id"],
        );
        let schema = RelationalSchema {
            tables: vec![fact, dim, detail, many],
            foreign_keys: vec![
                ForeignKeyDef::new("fact", &["dim_id"], "dim", &["id"]),
                ForeignKeyDef::new("detail", &["fact_id"], "fact", &["id"]),
                ForeignKeyDef::new("event", &["fact_id"], "fact", &["id"]),
            ],
        };
        let fact_rows = (0..10)
            .map(|i| {
                vec![
                    Cell::Integer(i),
                    Cell::Real(i as f64),
                    if i == 9 { Cell::Null } else { Cell::Integer(i % 3) },
                ]
            })
            .collect();
        let dim_rows = (0..3).map(|i| vec![Cell::Integer(i), Cell::Text(format!("d{i}"))]).collect();
        let detail_rows = (0..4).map(|i| vec![Cell::Integer(i * 2), Cell::Text(format!("n{i}"))]).collect();
        let event_rows = (0..20)
            .map(|i| vec![Cell::Integer(i), Cell::Integer(i % 10), Cell::Real(0.5)])
            .collect();
        RelationalInstance::new(
            schema,
            vec![
                Table { rows: fact_rows },
                Table { rows: dim_rows },
                Table { rows: detail_rows },
                Table { rows: event_rows },
            ],
        )
    }

    #[test]
    fn joins_parents_and_one_to_one_children_only() {
        let inst = star();
        let flat = flatten_target(&inst, "fact", 1).unwrap();
        assert_eq!(flat.len(), 10);
        let names: Vec<&str> = flat.columns.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["x", "dim.c", "detail.note"]);
        assert_eq!(flat.rows[4][1], Cell::Text("d1".into()));
        assert_eq!(flat.rows[9][1], Cell::Null);
        assert_eq!(flat.rows[2][2], Cell::Text("n1".into()));
        assert_eq!(flat.rows[3][2], Cell::Null);
    }

    #[test]
    fn dimension_without_relations_is_identity() {
        let inst = star();
        let flat = flatten_target(&inst, "dim", 1).unwrap();
        // fact -> dim is one-to-many from the dimension's side.
        assert_eq!(flat.columns.len(), 1);
        assert_eq!(flat.rows, inst.table("dim").unwrap().1.rows.iter().map(|r| vec![r[1].clone()]).collect::<Vec<_>>());
    }

    #[test]
    fn deeper_flattening_follows_chains() {
        let inst = star();
        let flat = flatten_target(&inst, "detail", 2).unwrap();
        let names: Vec<&str> = flat.columns.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["note", "fact.x", "dim.c"]);
        assert_eq!(flat.rows[1], vec![Cell::Text("n1".into()), Cell::Real(2.0), Cell::Text("d2".into())]);
        assert_eq!(flat.sources[2].path.len(), 2);
    }

    #[test]
    fn errors_and_instance_conversion() {
        let inst = star();
        assert!(matches!(flatten_target(&inst, "nope", 1), Err(FlattenError::TargetMissing(_))));
        assert!(matches!(flatten_target(&inst, "fact", 0), Err(FlattenError::BadDepth)));
        let one = flatten_target(&inst, "fact", 1).unwrap().into_instance(&inst).unwrap();
        let (def, t) = one.table("fact").unwrap();
        assert_eq!(def.columns[0].name, "id");
        assert_eq!(t.len(), 10);
        assert!(one.schema.foreign_keys.is_empty());
    }
}
