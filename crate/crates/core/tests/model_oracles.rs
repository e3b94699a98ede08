use rdl_core::autodiff::{Tape, Tensor};
use rdl_core::cell::Cell;
use rdl_core::encoders::{encode_instance, fit_encoders};
use rdl_core::graph::{build_graph, GraphOptions};
use rdl_core::ingest::{RelationalInstance, Table};
use rdl_core::models::{Batch, BatchTargets, HeadSpec, Model, ModelConfig, Variant};
use rdl_core::sampler::{batch_rng, sample_static, SampledSubgraph, SamplerConfig, Seed};
use rdl_core::schema::{ColumnDef, DeclaredType, ForeignKeyDef, RelationalSchema, SemanticType, TableDef};
use rdl_core::synth::{generate, Signal, SynthSpec};
use rdl_core::task::{build_task, TaskKind, TaskSpec, Targets};

fn pair_instance() -> RelationalInstance {
    use SemanticType as S;
    let a = TableDef::new(
        "a",
        vec![
            ColumnDef::new("id", DeclaredType::Integer).with_semantic(S::PrimaryKey),
            ColumnDef::new("x", DeclaredType::Real).with_semantic(S::Numerical),
            ColumnDef::new("b_id", DeclaredType::Integer).with_semantic(S::ForeignKey),
        ],
        &["id"],
    );
    let b = TableDef::new(
        "b",
        vec![
            ColumnDef::new("id", DeclaredType::Integer).with_semantic(S::PrimaryKey),
            ColumnDef::new("y", DeclaredType::Real).with_semantic(S::Numerical),
        ],
        &["id"],
    );
    RelationalInstance::new(
        RelationalSchema {
            tables: vec![a, b],
            foreign_keys: vec![ForeignKeyDef::new("a", &["b_id"], "b", &["id"])],
        },
        vec![
            Table {
                rows: vec![vec![Cell::Integer(0), Cell::Real(1.0), Cell::Integer(0)]],
            },
            Table {
                rows: vec![vec![Cell::Integer(0), Cell::Real(2.0)]],
            },
        ],
    )
}

fn set(model: &mut Model, name: &str, rows: usize, cols: usize, data: &[f64]) {
    let id = model.params.id(name).unwrap_or_else(|| panic!("{name}"));
    model.params.values[id] = Tensor::from_vec(rows, cols, data.to_vec());
}

fn two_node_model() -> (Model, rdl_core::graph::HeteroGraph) {
    let inst = pair_instance();
    let graph = build_graph(&inst, &GraphOptions::default()).unwrap();
    let (tinst, tt, _) = build_task(
        &inst,
        &TaskSpec {
            kind: TaskKind::Regression,
            target_table: "a".into(),
            target_column: Some("x".into()),
            temporal: false,
            split: rdl_core::task::SplitSpec { ratios: [1.0, 0.0, 0.0] },
            mask_rate: 0.15,
            seed: 0,
        },
    )
    .unwrap();
    let encoder = fit_encoders(&tinst, &tt, 2).unwrap();
    let cfg = ModelConfig {
        variant: Variant::LinearSage,
        n_layers: 1,
        hidden: 2,
        d0: 2,
        head_hidden: 2,
        ..Default::default()
    };
    let mut m = Model::new(cfg, encoder, HeadSpec::Regression { mean: 0.0, std: 1.0 }, &graph, 0).unwrap();
    set(&mut m, "sage.0.root.a", 2, 2, &[1.0, 0.0, 0.0, 1.0]);
    set(&mut m, "sage.0.root.b", 2, 2, &[2.0, 0.0, 0.0, 2.0]);
    set(&mut m, "sage.0.a.b_id->b.fwd", 2, 2, &[0.0, 1.0, 1.0, 0.0]);
    set(&mut m, "sage.0.a.b_id->b.rev", 2, 2, &[1.0, 1.0, 0.0, 0.0]);
    (m, graph)
}

fn run_layer(m: &Model, graph: &rdl_core::graph::HeteroGraph, edges: Vec<Vec<(u32, u32)>>) -> (Vec<f64>, Vec<f64>) {
    let sub = SampledSubgraph {
        nodes: vec![vec![0], vec![0]],
        hop: vec![vec![0], vec![1]],
        anchor: vec![vec![0], vec![0]],
        edges,
        ..Default::default()
    };
    let mut tape = Tape::new();
    let ha = tape.constant(Tensor::from_vec(1, 2, vec![1.0, 2.0]));
    let hb = tape.constant(Tensor::from_vec(1, 2, vec![3.0, -1.0]));
    let out = m.sage_layer(&mut tape, 0, graph, &sub, &[Some(ha), Some(hb)]).unwrap();
    (tape.value(out[0].unwrap()).data.clone(), tape.value(out[1].unwrap()).data.clone())
}

#[test]
fn two_node_update_matches_hand_evaluation() {
    let (m, graph) = two_node_model();
    // a: relu([1,2] I + [3,-1] swap) = relu([0,5]); b: relu([3,-1] 2I + [1,2][[1,1],[0,0]]) = relu([7,-1]).
    let (a, b) = run_layer(&m, &graph, vec![vec![(0, 0)], vec![(0, 0)]]);
    assert_eq!(a, vec![0.0, 5.0]);
    assert_eq!(b, vec![7.0, 0.0]);
}

#[test]
fn isolated_nodes_keep_only_the_root_term() {
    let (m, graph) = two_node_model();
    let (a, b) = run_layer(&m, &graph, vec![vec![], vec![]]);
    assert_eq!(a, vec![1.0, 2.0]);
    assert_eq!(b, vec![6.0, 0.0]);
}

struct Planted {
    inst: RelationalInstance,
    graph: rdl_core::graph::HeteroGraph,
    tt: rdl_core::task::TrainingTable,
    encoder: rdl_core::encoders::EncoderSpec,
}

fn planted() -> Planted {
    let (raw, _) = generate(&SynthSpec {
        rows_per_table: 40,
        signal: Signal::TargetOneHop,
        seed: 21,
        ..Default::default()
    })
    .unwrap();
    let (inst, tt, _) = build_task(&raw, &TaskSpec::classification("t0", "label")).unwrap();
    let graph = build_graph(&inst, &GraphOptions::default()).unwrap();
    let encoder = fit_encoders(&inst, &tt, 4).unwrap();
    Planted { inst, graph, tt, encoder }
}

fn small(n_layers: usize) -> ModelConfig {
    ModelConfig {
        variant: Variant::LinearSage,
        n_layers,
        hidden: 5,
        d0: 4,
        head_hidden: 6,
        ..Default::default()
    }
}

#[test]
fn binary_and_two_class_losses_agree_with_tied_weights() {
    let p = planted();
    let caches = encode_instance(&p.encoder, &p.inst).unwrap();
    let bin = Model::new(small(2), p.encoder.clone(), HeadSpec::Binary, &p.graph, 4).unwrap();
    let mut multi = Model::new(small(2), p.encoder.clone(), HeadSpec::Multiclass { n_classes: 2 }, &p.graph, 4).unwrap();
    for (name, t) in multi.params.names.clone().iter().zip(multi.params.values.iter_mut()) {
        let b = &bin.params.values[bin.params.id(name).unwrap()];
        if name == "head.w2" || name == "head.b2" {
            // Class 0 logit pinned to zero, class 1 logit equal to the binary logit.
            for r in 0..b.rows {
                t.data[r * 2] = 0.0;
                t.data[r * 2 + 1] = b.data[r];
            }
        } else {
            *t = b.clone();
        }
    }
    let Targets::Classes { labels, .. } = &p.tt.targets else { unreachable!() };
    let seeds: Vec<Seed> = p.tt.entity_rows[..10].iter().map(|&r| Seed { node_type: 0, node: r }).collect();
    let sub = sample_static(&p.graph, &seeds, &SamplerConfig { fanouts: vec![4, 4], ..Default::default() }, &mut batch_rng(0, 0)).unwrap();
    let batch = Batch {
        graph: &p.graph,
        caches: &caches,
        sub: &sub,
    };
    let y: Vec<usize> = labels[..10].to_vec();
    let mut t1 = Tape::new();
    let l1 = bin.loss(&mut t1, &batch, &BatchTargets::Binary(y.iter().map(|&l| l as f64).collect())).unwrap();
    let mut t2 = Tape::new();
    let l2 = multi.loss(&mut t2, &batch, &BatchTargets::Multiclass(y)).unwrap();
    assert!((t1.value(l1).data[0] - t2.value(l2).data[0]).abs() < 1e-12);
    let mut t3 = Tape::new();
    assert!(multi.loss(&mut t3, &batch, &BatchTargets::Multiclass(vec![2; 10])).is_err());
}

#[test]
fn receptive_field_is_the_l_hop_ball() {
    let p = planted();
    let caches = encode_instance(&p.encoder, &p.inst).unwrap();
    let m = Model::new(small(2), p.encoder.clone(), HeadSpec::Binary, &p.graph, 8).unwrap();
    let seeds = vec![Seed { node_type: 0, node: p.tt.entity_rows[0] }];
    let two = sample_static(&p.graph, &seeds, &SamplerConfig { fanouts: vec![usize::MAX; 2], ..Default::default() }, &mut batch_rng(0, 0)).unwrap();
    let three = sample_static(&p.graph, &seeds, &SamplerConfig { fanouts: vec![usize::MAX; 3], ..Default::default() }, &mut batch_rng(0, 0)).unwrap();
    let base = m.predict(&Batch { graph: &p.graph, caches: &caches, sub: &two }).unwrap();
    let wider = m.predict(&Batch { graph: &p.graph, caches: &caches, sub: &three }).unwrap();
    assert_eq!(base, wider);

    // Rewriting every attribute outside the 2-hop ball leaves the logit alone.
    let mut mutated = p.inst.clone();
    for (t, table) in mutated.tables.iter_mut().enumerate() {
        let inside: std::collections::HashSet<u32> = two.nodes[t].iter().copied().collect();
        let fact = p.inst.schema.factual_columns(&p.inst.schema.tables[t].name);
        for (r, row) in table.rows.iter_mut().enumerate() {
            if !inside.contains(&(r as u32)) {
                for &c in &fact {
                    row[c] = Cell::Null;
                }
            }
        }
    }
    let caches2 = encode_instance(&p.encoder, &mutated).unwrap();
    let after = m.predict(&Batch { graph: &p.graph, caches: &caches2, sub: &three }).unwrap();
    assert_eq!(base, after);
}
