use rdl_core::cell::Cell;
use rdl_core::encoders::fit_encoders;
use rdl_core::graph::GraphOptions;
use rdl_core::models::{ModelConfig, Variant};
use rdl_core::synth::{generate, Signal, SynthSpec};
use rdl_core::task::{build_task, Split, TaskKind, TaskSpec, Targets};
use rdl_core::trainer::{prepare, train, RunConfig};

fn small_run() -> RunConfig {
    RunConfig {
        model: ModelConfig {
            variant: Variant::LinearSage,
            hidden: 8,
            d0: 8,
            head_hidden: 8,
            ..Default::default()
        },
        batch_size: 64,
        lr: 1e-2,
        min_epochs: 3,
        min_steps: 10,
        patience: 1,
        max_epochs: 10,
        grid_fanouts: vec![2, 4],
        grid_layers: vec![1, 2],
        seed: 5,
        ..Default::default()
    }
}

fn task() -> (rdl_core::ingest::RelationalInstance, rdl_core::task::TrainingTable) {
    let (raw, _) = generate(&SynthSpec {
        rows_per_table: 150,
        signal: Signal::TargetOneHop,
        seed: 31,
        ..Default::default()
    })
    .unwrap();
    let (inst, tt, _) = build_task(&raw, &TaskSpec::classification("t0", "label")).unwrap();
    (inst, tt)
}

#[test]
fn selection_ignores_test_labels() {
    let (inst, tt) = task();
    let cfg = small_run();
    let prep = prepare(&inst, &tt, 8, &GraphOptions::default()).unwrap();
    let a = train(&prep, &cfg).unwrap().report;

    let mut flipped = tt.clone();
    if let Targets::Classes { labels, .. } = &mut flipped.targets {
        for i in flipped.split.iter().enumerate().filter(|(_, s)| **s == Split::Test).map(|(i, _)| i) {
            labels[i] = 1 - labels[i];
        }
    }
    let prep = prepare(&inst, &flipped, 8, &GraphOptions::default()).unwrap();
    let b = train(&prep, &cfg).unwrap().report;
    assert_eq!((a.best.fanout, a.best.n_layers), (b.best.fanout, b.best.n_layers));
    assert_eq!(a.val, b.val);
    assert!((a.test + b.test - 1.0).abs() < 1e-9, "flipping test labels mirrors AUC");
    assert_eq!(a.grid.len(), 4);
}

#[test]
fn test_rows_do_not_touch_encoders() {
    let (inst, tt) = task();
    let base = fit_encoders(&inst, &tt, 8).unwrap();
    let mut poisoned = inst.clone();
    let t0 = poisoned.schema.table_index("t0").unwrap();
    for i in tt.rows_in(Split::Test).into_iter().chain(tt.rows_in(Split::Val)) {
        let row = &mut poisoned.tables[t0].rows[tt.entity_rows[i]];
        row[1] = Cell::Real(1e9);
        row[2] = Cell::Text("poison".into());
    }
    assert_eq!(fit_encoders(&poisoned, &tt, 8).unwrap(), base);
}

#[test]
fn regression_and_multiclass_tasks_train() {
    let (raw, _) = generate(&SynthSpec {
        rows_per_table: 120,
        seed: 32,
        ..Default::default()
    })
    .unwrap();
    let mut cfg = small_run();
    cfg.grid_fanouts = vec![2];
    cfg.grid_layers = vec![1];
    for (kind, column) in [(TaskKind::Regression, "num_0"), (TaskKind::MulticlassClassification, "cat_0")] {
        let spec = TaskSpec {
            kind,
            target_column: Some(column.into()),
            ..TaskSpec::classification("t1", column)
        };
        let (inst, tt, _) = build_task(&raw, &spec).unwrap();
        let prep = prepare(&inst, &tt, 8, &GraphOptions::default()).unwrap();
        let r = train(&prep, &cfg).unwrap().report;
        assert!((0.0..=1.0).contains(&r.val) && (0.0..=1.0).contains(&r.test), "{kind:?}: {r:?}");
    }
}
