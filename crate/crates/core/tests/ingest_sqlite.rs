use rdl_core::cell::Cell;
use rdl_core::graph::{build_graph, GraphOptions};
use rdl_core::ingest::{check_referential_integrity, load_sqlite, IngestError};
use rdl_core::schema::SemanticType;
use rusqlite::Connection;

fn db(sql: &str) -> (tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("db.sqlite");
    let conn = Connection::open(&path).unwrap();
    conn.execute_batch("PRAGMA foreign_keys = OFF;").unwrap();
    conn.execute_batch(sql).unwrap();
    (dir, path)
}

#[test]
fn two_tables_one_foreign_key() {
    let (_d, path) = db("
        CREATE TABLE customer (id INTEGER PRIMARY KEY, name TEXT, joined DATETIME);
        CREATE TABLE orders (
            id INTEGER PRIMARY KEY,
            customer_id INTEGER REFERENCES customer(id),
            amount REAL
        );
        INSERT INTO customer VALUES (1, 'ann', '2020-01-01T00:00:00Z'), (2, 'bob', '2020-02-01T00:00:00Z');
        INSERT INTO orders VALUES (10, 1, 5.5), (11, 1, 7.0), (12, 2, 1.25), (13, NULL, 3.0), (14, 9, 2.0);
    ");
    let inst = load_sqlite(&path, None).unwrap();
    assert_eq!(inst.schema.tables.len(), 2);
    assert_eq!(inst.schema.foreign_keys.len(), 1);
    let fk = &inst.schema.foreign_keys[0];
    assert_eq!((fk.child_table.as_str(), fk.parent_table.as_str()), ("orders", "customer"));
    let (odef, orders) = inst.table("orders").unwrap();
    assert_eq!(orders.len(), 5);
    assert_eq!(orders.rows[0][2], Cell::Real(5.5));
    assert_eq!(odef.column("customer_id").unwrap().semantic(), SemanticType::ForeignKey);
    let (cdef, customers) = inst.table("customer").unwrap();
    assert!(matches!(customers.rows[0][2], Cell::Timestamp(_)));
    assert_eq!(cdef.column("id").unwrap().semantic(), SemanticType::PrimaryKey);

    let report = check_referential_integrity(&inst);
    let f = &report.foreign_keys[0];
    assert_eq!((f.matched, f.null, f.dangling), (3, 1, 1));

    let g = build_graph(&inst, &GraphOptions::default()).unwrap();
    assert_eq!(g.num_nodes(), 7);
    assert_eq!(g.num_edges(), 3);
}

#[test]
fn empty_database_loads_as_empty_instance() {
    let (_d, path) = db("");
    let inst = load_sqlite(&path, None).unwrap();
    assert!(inst.schema.tables.is_empty());
    assert_eq!(inst.total_rows(), 0);
}

#[test]
fn composite_primary_key() {
    let (_d, path) = db("
        CREATE TABLE enrolment (student INTEGER, course TEXT, grade REAL, PRIMARY KEY (student, course));
        INSERT INTO enrolment VALUES (1, 'math', 3.5), (1, 'art', 2.0), (2, 'math', 4.0);
    ");
    let inst = load_sqlite(&path, None).unwrap();
    let (def, t) = inst.table("enrolment").unwrap();
    assert_eq!(def.primary_key, vec!["student".to_string(), "course".to_string()]);
    assert_eq!(t.len(), 3);
    assert!(check_referential_integrity(&inst).is_clean());
}

#[test]
fn non_database_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("junk.sqlite");
    std::fs::write(&path, b"definitely not sqlite, just some bytes padded out to a page").unwrap();
    assert!(matches!(load_sqlite(&path, None), Err(IngestError::FileNotDatabase { .. })));
    assert!(matches!(load_sqlite(&dir.path().join("missing"), None), Err(IngestError::FileNotDatabase { .. })));
}
