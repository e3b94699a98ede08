//! Acceptance criteria 1-10. Each test prints one `criterion N: PASS|FAIL`
//! line with the measured quantities, then asserts.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rdl_core::autodiff::{gradient_check, Tape};
use rdl_core::cell::Cell;
use rdl_core::encoders::{encode_instance, fit_encoders};
use rdl_core::features::{adjacency_features, classify_database, schema_features, simple_adjacency, FeatureConfig};
use rdl_core::flatten::flatten_target;
use rdl_core::graph::{build_graph, GraphOptions, HeteroGraph};
use rdl_core::ingest::{write_csv_dataset, RelationalInstance, Table};
use rdl_core::models::{Batch, BatchTargets, HeadSpec, Model, ModelConfig, Variant};
use rdl_core::sampler::{batch_rng, sample, sample_static, SamplerConfig, Seed};
use rdl_core::schema::{ColumnDef, DeclaredType, ForeignKeyDef, RelationalSchema, SemanticType, TableDef};
use rdl_core::synth::{generate, ColumnMix, Signal, SynthSpec, Topology};
use rdl_core::task::{build_task, restore_masked, TaskKind, TaskSpec, Targets};
use rdl_core::trainer::{auc_roc, macro_f1, prepare, train, RunConfig, RunReport};

/// Minimum test AUC of the graph model on planted one-hop and dimension signals.
const PLANTED_AUC_MIN: f64 = 0.95;
/// Maximum test AUC of the tabular baseline when the signal is off-table.
const TABULAR_AUC_MAX: f64 = 0.60;
/// Allowed AUC gap between flattened tabular and graph models.
const FLATTEN_GAP: f64 = 0.05;
const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_SAMPLES: usize = 250;
const METRIC_TOL: f64 = 1e-12;
const MASK_LOSS_REDUCTION: f64 = 0.5;

fn report(n: usize, pass: bool, elapsed: Duration, budget_secs: u64, detail: &str) {
    let in_budget = elapsed.as_secs_f64() < budget_secs as f64;
    println!(
        "criterion {n}: {} ({detail}; {:.2}s of {budget_secs}s budget{})",
        if pass && in_budget { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        if in_budget { "" } else { ", over budget" }
    );
    assert!(pass, "criterion {n} failed: {detail}");
    assert!(in_budget, "criterion {n} exceeded its {budget_secs}s budget");
}

fn random_spec(rng: &mut ChaCha8Rng, seed: u64, temporal: bool) -> SynthSpec {
    let n_tables = rng.gen_range(2..=6);
    let topology = [Topology::Chain, Topology::Star, Topology::Junction, Topology::RandomDag][rng.gen_range(0..4)];
    SynthSpec {
        n_tables,
        rows_per_table: rng.gen_range(10..=60),
        topology,
        cycle_edge: rng.gen_bool(0.3),
        null_fk_rate: rng.gen_range(0.0..0.3),
        n_dangling: rng.gen_range(0..=3),
        temporal,
        seed,
        ..Default::default()
    }
}

#[test]
fn criterion_1_graph_compilation() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = Vec::new();
    for i in 0..200 {
        let temporal = rng.gen_bool(0.5);
        let spec = random_spec(&mut rng, i, temporal);
        let (inst, ledger) = generate(&spec).unwrap();
        let g = build_graph(&inst, &GraphOptions::default()).unwrap();
        for nt in &g.node_types {
            if nt.num_nodes != ledger.rows[&nt.name] {
                mismatches.push(format!("instance {i}: {} has {} nodes, ledger {}", nt.name, nt.num_nodes, ledger.rows[&nt.name]));
            }
        }
        for et in &g.edge_types {
            if et.edges.len() != ledger.expected_edges(&et.label) {
                mismatches.push(format!("instance {i}: {} has {} edges, ledger {}", et.label, et.edges.len(), ledger.expected_edges(&et.label)));
            }
        }
        if g.edge_types.len() != inst.schema.foreign_keys.len() {
            mismatches.push(format!("instance {i}: edge type count"));
        }
    }
    report(1, mismatches.is_empty(), start.elapsed(), 30, &format!("200 instances, {} mismatches {:?}", mismatches.len(), mismatches.first()));
}

/// Adjacency over `(type, node)` pairs across both edge directions.
fn hetero_adjacency(g: &HeteroGraph) -> HashMap<(usize, u32), Vec<(usize, u32)>> {
    let mut adj: HashMap<(usize, u32), Vec<(usize, u32)>> = HashMap::new();
    for et in &g.edge_types {
        let (c, p) = (et.child_type, et.parent_type);
        for &(child, parent) in &et.edges {
            adj.entry((c, child)).or_default().push((p, parent));
            adj.entry((p, parent)).or_default().push((c, child));
        }
    }
    adj
}

/// Nodes within `hops` of the seed through nodes with `time <= t` (or no time).
fn filtered_ball(g: &HeteroGraph, adj: &HashMap<(usize, u32), Vec<(usize, u32)>>, seed: (usize, u32), t: i64, hops: usize) -> BTreeSet<(usize, u32)> {
    let mut seen = BTreeSet::from([seed]);
    let mut queue = VecDeque::from([(seed, 0)]);
    while let Some((v, d)) = queue.pop_front() {
        if d == hops {
            continue;
        }
        for &u in adj.get(&v).map(Vec::as_slice).unwrap_or(&[]) {
            let ok = g.node_types[u.0].time_of(u.1 as usize).is_none_or(|tu| tu <= t);
            if ok && seen.insert(u) {
                queue.push_back((u, d + 1));
            }
        }
    }
    seen
}

#[test]
fn criterion_2_temporal_causality() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut samples, mut violations, mut ball_mismatch) = (0usize, 0usize, 0usize);
    let mut inst_seed = 0;
    while samples < 1000 {
        let mut spec = random_spec(&mut rng, 1000 + inst_seed, true);
        spec.n_dangling = 0;
        inst_seed += 1;
        let (inst, _) = generate(&spec).unwrap();
        let g = build_graph(&inst, &GraphOptions::default()).unwrap();
        let adj = hetero_adjacency(&g);
        for b in 0..25 {
            let hops = rng.gen_range(1..=3);
            let capped = SamplerConfig {
                fanouts: vec![rng.gen_range(1..=4); hops],
                ..Default::default()
            };
            let full = SamplerConfig {
                fanouts: vec![usize::MAX; hops],
                ..Default::default()
            };
            let seeds: Vec<Seed> = (0..4)
                .map(|_| {
                    let t = rng.gen_range(0..g.node_types.len());
                    Seed {
                        node_type: t,
                        node: rng.gen_range(0..g.node_types[t].num_nodes),
                    }
                })
                .collect();
            let times: Vec<i64> = seeds
                .iter()
                .map(|s| g.node_types[s.node_type].time_of(s.node).unwrap_or(1_550_000_000) + rng.gen_range(-20_000_000..20_000_000))
                .collect();
            let sub = sample(&g, &seeds, Some(&times), &capped, &mut batch_rng(inst_seed, b)).unwrap();
            violations += sub.causality_violations(&g, false).len();
            let sub = sample(&g, &seeds, Some(&times), &full, &mut batch_rng(inst_seed, b)).unwrap();
            violations += sub.causality_violations(&g, false).len();
            for (k, s) in seeds.iter().enumerate() {
                let mut got = BTreeSet::new();
                for t in 0..sub.nodes.len() {
                    for (i, &v) in sub.nodes[t].iter().enumerate() {
                        if sub.anchor[t][i] as usize == k {
                            got.insert((t, v));
                        }
                    }
                }
                let want = filtered_ball(&g, &adj, (s.node_type, s.node as u32), times[k], hops);
                if got != want {
                    ball_mismatch += 1;
                }
            }
            samples += 2;
        }
    }
    report(
        2,
        violations == 0 && ball_mismatch == 0,
        start.elapsed(),
        30,
        &format!("{samples} samples, {violations} causality violations, {ball_mismatch} ball mismatches"),
    );
}

fn floyd_warshall(adj: &[Vec<u32>]) -> Vec<Vec<u32>> {
    let n = adj.len();
    let inf = u32::MAX / 2;
    let mut d = vec![vec![inf; n]; n];
    for (v, nb) in adj.iter().enumerate() {
        d[v][v] = 0;
        for &u in nb {
            d[v][u as usize] = 1;
        }
    }
    for k in 0..n {
        for i in 0..n {
            let dik = d[i][k];
            if dik == inf {
                continue;
            }
            for j in 0..n {
                let via = dik + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    d
}

/// Tables `(name, n_factual)` joined by `(child, parent, one_to_one)` foreign keys.
fn fixture(tables: &[(&str, usize)], fks: &[(&str, &str, bool)]) -> RelationalInstance {
    const ROWS: usize = 6;
    let mut defs = Vec::new();
    let mut data = Vec::new();
    let mut foreign_keys = Vec::new();
    for &(name, n_fact) in tables {
        let mut cols = vec![ColumnDef::new("id", DeclaredType::Integer).with_semantic(SemanticType::PrimaryKey)];
        cols.extend((0..n_fact).map(|k| ColumnDef::new(format!("f{k}"), DeclaredType::Real).with_semantic(SemanticType::Numerical)));
        let mine: Vec<&(&str, &str, bool)> = fks.iter().filter(|f| f.0 == name).collect();
        for (j, _) in mine.iter().enumerate() {
            cols.push(ColumnDef::new(format!("fk{j}"), DeclaredType::Integer).with_semantic(SemanticType::ForeignKey));
        }
        let rows = (0..ROWS)
            .map(|r| {
                let mut row = vec![Cell::Integer(r as i64)];
                row.extend((0..n_fact).map(|k| Cell::Real((r * 7 + k) as f64)));
                row.extend(mine.iter().map(|f| Cell::Integer(if f.2 { r as i64 } else { (r / 2) as i64 })));
                row
            })
            .collect();
        for (j, f) in mine.iter().enumerate() {
            foreign_keys.push(ForeignKeyDef::new(name, &[&format!("fk{j}")], f.1, &["id"]));
        }
        defs.push(TableDef::new(name, cols, &["id"]));
        data.push(Table { rows });
    }
    RelationalInstance::new(
        RelationalSchema {
            tables: defs,
            foreign_keys,
        },
        data,
    )
}

fn accidents() -> RelationalInstance {
    fixture(&[("nesreca", 12), ("oseba", 14), ("upravna_enota", 12)], &[
        ("oseba", "nesreca", false),
        ("nesreca", "upravna_enota", false),
        ("oseba", "upravna_enota", false),
    ])
}

fn mondial() -> RelationalInstance {
    let chain: Vec<String> = (0..6).map(|i| format!("c{i}")).collect();
    let leaves: Vec<String> = (0..27).map(|i| format!("l{i}")).collect();
    let mut tables: Vec<(&str, usize)> = chain.iter().map(|n| (n.as_str(), 4)).collect();
    tables.extend(leaves.iter().map(|n| (n.as_str(), 4)));
    let mut fks: Vec<(&str, &str, bool)> = (0..5).map(|i| (chain[i].as_str(), chain[i + 1].as_str(), false)).collect();
    for (i, l) in leaves.iter().enumerate() {
        fks.push((l.as_str(), chain[2 + i % 2].as_str(), false));
    }
    for i in 0..30 {
        fks.push((leaves[i % 27].as_str(), leaves[(i * 5 + 1) % 27].as_str(), false));
    }
    fixture(&tables, &fks)
}

#[test]
fn criterion_3_feature_oracles() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bad = Vec::new();
    for g in 0..100 {
        let n = rng.gen_range(1..=500usize);
        let p = rng.gen_range(0.5..4.0) / n as f64;
        let mut edges = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if rng.gen::<f64>() < p {
                    edges.push((a, b));
                }
            }
        }
        let adj = simple_adjacency(n, edges.iter().copied());
        let f = adjacency_features(&adj, &FeatureConfig::default());
        let d = floyd_warshall(&adj);
        let ecc: Vec<u64> = d.iter().map(|row| row.iter().copied().filter(|&x| x < u32::MAX / 2).max().unwrap_or(0) as u64).collect();
        let diameter = ecc.iter().copied().max().unwrap_or(0) as u32;
        let avg = ecc.iter().sum::<u64>() as f64 / n as f64;
        let m = edges.len();
        let density = if n < 2 { 0.0 } else { 2.0 * m as f64 / (n as f64 * (n as f64 - 1.0)) };
        if f.diameter != diameter || f.avg_eccentricity != avg || f.density != density || f.n_edges != m || f.approximate {
            bad.push(format!("graph {g} (n={n})"));
        }
    }
    let acc = schema_features(&accidents());
    let mon = schema_features(&mondial());
    let fixtures_ok = acc.schema_diameter == 1 && acc.has_cycle && mon.schema_diameter == 5 && mon.has_cycle;
    report(
        3,
        bad.is_empty() && fixtures_ok,
        start.elapsed(),
        60,
        &format!(
            "100 random graphs, {} mismatches; accidents diameter {} cycle {}; mondial diameter {} cycle {}",
            bad.len(),
            acc.schema_diameter,
            acc.has_cycle,
            mon.schema_diameter,
            mon.has_cycle
        ),
    );
}

#[test]
fn criterion_4_database_classification() {
    let start = Instant::now();
    let sat_names: Vec<String> = (0..34).map(|i| format!("s{i}")).collect();
    let mut sat_tables: Vec<(&str, usize)> = sat_names.iter().map(|n| (n.as_str(), 2)).collect();
    sat_tables[0].1 = 1;
    // A ring of 34 one-to-one links.
    let sat_fks: Vec<(&str, &str, bool)> = (0..34).map(|i| (sat_names[i].as_str(), sat_names[(i + 1) % 34].as_str(), true)).collect();
    let cases = vec![
        ("satellite", fixture(&sat_tables, &sat_fks), true, false),
        (
            "cde",
            fixture(&[("a", 40), ("b", 30), ("c", 17)], &[("b", "a", true), ("c", "a", true)]),
            true,
            false,
        ),
        ("cora", fixture(&[("paper", 1), ("content", 1), ("cites", 0)], &[
            ("content", "paper", false),
            ("cites", "paper", false),
            ("cites", "paper", false),
        ]), false, true),
        (
            "toxicology",
            fixture(&[("molecule", 1), ("atom", 1), ("bond", 1), ("connected", 0)], &[
                ("atom", "molecule", false),
                ("bond", "molecule", false),
                ("connected", "atom", false),
                ("connected", "atom", false),
                ("connected", "bond", false),
            ]),
            false,
            true,
        ),
    ];
    let mut details = Vec::new();
    let mut ok = true;
    for (name, inst, tab, graph) in &cases {
        let c = classify_database(inst);
        let good = c.tabular_like == *tab && c.graph_like == *graph;
        ok &= good;
        details.push(format!("{name}: tabular_like={} graph_like={}", c.tabular_like, c.graph_like));
    }
    report(4, ok, start.elapsed(), 5, &details.join(", "));
}

fn planted(signal: Signal, seed: u64) -> RelationalInstance {
    let spec = SynthSpec {
        n_tables: 2,
        table_rows: BTreeMap::from([("t0".to_string(), 1500), ("t1".to_string(), 150)]),
        signal,
        noise_rate: 0.05,
        dimension_rows: 40,
        seed,
        ..Default::default()
    };
    generate(&spec).unwrap().0
}

fn desk_run(variant: Variant, seed: u64) -> RunConfig {
    RunConfig {
        model: ModelConfig {
            variant,
            n_layers: 2,
            fanout: 16,
            ..Default::default()
        },
        grid_fanouts: vec![16],
        grid_layers: vec![2],
        seed,
        ..Default::default()
    }
}

fn run_classification(inst: &RelationalInstance, variant: Variant) -> RunReport {
    let (task_inst, tt, _) = build_task(inst, &TaskSpec::classification("t0", "label")).unwrap();
    let cfg = desk_run(variant, 0);
    let prep = prepare(&task_inst, &tt, cfg.model.d0, &GraphOptions::default()).unwrap();
    train(&prep, &cfg).unwrap().report
}

#[test]
fn criterion_5_gradient_correctness() {
    let start = Instant::now();
    let (raw, _) = generate(&SynthSpec {
        rows_per_table: 40,
        signal: Signal::TargetOneHop,
        columns: ColumnMix {
            numerical: 1,
            categorical: 1,
            multi_categorical: 1,
            text: 1,
        },
        temporal: true,
        seed: 5,
        ..Default::default()
    })
    .unwrap();
    let (inst, tt, _) = build_task(&raw, &TaskSpec::classification("t0", "label")).unwrap();
    let graph = build_graph(&inst, &GraphOptions::default()).unwrap();
    let encoder = fit_encoders(&inst, &tt, 4).unwrap();
    let caches = encode_instance(&encoder, &inst).unwrap();
    let Targets::Classes { labels, .. } = &tt.targets else { unreachable!() };
    let seeds: Vec<Seed> = tt.entity_rows[..8].iter().map(|&r| Seed { node_type: 0, node: r }).collect();
    let targets = BatchTargets::Binary(labels[..8].iter().map(|&l| l as f64).collect());
    let mut details = Vec::new();
    let mut worst: f64 = 0.0;
    for (variant, layers) in [(Variant::LinearSage, 1), (Variant::LinearSage, 2), (Variant::ResnetSage, 2), (Variant::TabularOnly, 1)] {
        let cfg = ModelConfig {
            variant,
            n_layers: layers,
            hidden: 6,
            d0: 4,
            head_hidden: 6,
            fanout: 3,
            ..Default::default()
        };
        let mut model = Model::new(cfg, encoder.clone(), HeadSpec::Binary, &graph, 11).unwrap();
        let sub = sample_static(&graph, &seeds, &SamplerConfig { fanouts: model.config.fanouts(), ..Default::default() }, &mut batch_rng(5, 0)).unwrap();
        let batch = Batch {
            graph: &graph,
            caches: &caches,
            sub: &sub,
        };
        let mut tape = Tape::new();
        let loss = model.loss(&mut tape, &batch, &targets).unwrap();
        let grads = tape.backward(loss, &model.params);
        let mut store = model.params.clone();
        let n_scalars = store.num_scalars();
        let err = gradient_check(&mut store, &grads, GRAD_SAMPLES, 1e-6, 17, |p| {
            model.params = p.clone();
            let mut t = Tape::new();
            let l = model.loss(&mut t, &batch, &targets).unwrap();
            t.value(l).data[0]
        });
        worst = worst.max(err);
        details.push(format!("{} L={layers}: {} of {n_scalars} params, max rel err {err:.2e}", variant.name(), GRAD_SAMPLES.min(n_scalars)));
    }
    report(5, worst <= GRAD_REL_TOL, start.elapsed(), 60, &details.join("; "));
}

#[test]
fn criterion_6_planted_signal_separation() {
    let start = Instant::now();
    let inst = planted(Signal::TargetOneHop, 6);
    let gnn = run_classification(&inst, Variant::LinearSage);
    let tab = run_classification(&inst, Variant::TabularOnly);
    report(
        6,
        gnn.test >= PLANTED_AUC_MIN && tab.test <= TABULAR_AUC_MAX,
        start.elapsed(),
        120,
        &format!("linear_sage L=2 test AUC {:.4} (>= {PLANTED_AUC_MIN}), tabular_only test AUC {:.4} (<= {TABULAR_AUC_MAX})", gnn.test, tab.test),
    );
}

#[test]
fn criterion_7_join_flattening_recovery() {
    let start = Instant::now();
    let inst = planted(Signal::TargetDimension, 7);
    let gnn = run_classification(&inst, Variant::LinearSage);
    let (task_inst, tt, _) = build_task(&inst, &TaskSpec::classification("t0", "label")).unwrap();
    let flat = flatten_target(&task_inst, "t0", 1).unwrap().into_instance(&task_inst).unwrap();
    let cfg = desk_run(Variant::TabularOnly, 0);
    let prep = prepare(&flat, &tt, cfg.model.d0, &GraphOptions::default()).unwrap();
    let tab = train(&prep, &cfg).unwrap().report;
    report(
        7,
        tab.test >= PLANTED_AUC_MIN && (tab.test - gnn.test).abs() <= FLATTEN_GAP,
        start.elapsed(),
        120,
        &format!("flattened tabular_only test AUC {:.4}, linear_sage test AUC {:.4}, gap {:.4} (<= {FLATTEN_GAP})", tab.test, gnn.test, (tab.test - gnn.test).abs()),
    );
}

fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

fn brute_macro_f1(pred: &[usize], labels: &[usize], k: usize) -> f64 {
    let mut cm = vec![vec![0usize; k]; k];
    for (&p, &l) in pred.iter().zip(labels) {
        cm[l][p] += 1;
    }
    let mut total = 0.0;
    for c in 0..k {
        let tp = cm[c][c] as f64;
        let fp = (0..k).filter(|&r| r != c).map(|r| cm[r][c]).sum::<usize>() as f64;
        let fn_ = (0..k).filter(|&p| p != c).map(|p| cm[c][p]).sum::<usize>() as f64;
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        total += if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    }
    total / k as f64
}

#[test]
fn criterion_8_metric_oracles() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut auc_err, mut f1_err): (f64, f64) = (0.0, 0.0);
    for _ in 0..1000 {
        let n = rng.gen_range(2..=60);
        // Coarse scores force ties.
        let scores: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..12) as f64) / 4.0).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        auc_err = auc_err.max((auc_roc(&scores, &labels).unwrap() - brute_auc(&scores, &labels)).abs());
        let k = rng.gen_range(2..=6);
        let y: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let p: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        f1_err = f1_err.max((macro_f1(&p, &y, k).unwrap() - brute_macro_f1(&p, &y, k)).abs());
    }
    report(
        8,
        auc_err <= METRIC_TOL && f1_err <= METRIC_TOL,
        start.elapsed(),
        10,
        &format!("1000 cases, max AUC deviation {auc_err:.1e}, max macro-F1 deviation {f1_err:.1e}"),
    );
}

fn csv_bytes(inst: &RelationalInstance) -> BTreeMap<String, Vec<u8>> {
    let dir = tempfile::tempdir().unwrap();
    write_csv_dataset(inst, dir.path()).unwrap();
    std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn criterion_9_mask_pretrain_bookkeeping() {
    let start = Instant::now();
    let spec = SynthSpec {
        n_tables: 2,
        table_rows: BTreeMap::from([("t0".to_string(), 600), ("t1".to_string(), 60)]),
        signal: Signal::TargetOneHop,
        noise_rate: 0.05,
        seed: 9,
        ..Default::default()
    };
    let (inst, _) = generate(&spec).unwrap();
    let task = TaskSpec {
        kind: TaskKind::MaskPretrain,
        target_table: "t0".into(),
        target_column: None,
        temporal: false,
        split: Default::default(),
        mask_rate: 0.15,
        seed: 9,
    };
    let (masked, tt, _) = build_task(&inst, &task).unwrap();
    let (masked2, tt2, _) = build_task(&inst, &task).unwrap();
    let Targets::Masked(cells) = &tt.targets else { unreachable!() };
    let n_masked: usize = cells.iter().map(Vec::len).sum();
    let replay = tt == tt2 && masked == masked2;
    let restored = csv_bytes(&restore_masked(&masked, &tt)) == csv_bytes(&inst);
    let mut cfg = desk_run(Variant::LinearSage, 0);
    cfg.model.n_layers = 1;
    cfg.grid_layers = vec![1];
    let prep = prepare(&masked, &tt, cfg.model.d0, &GraphOptions::default()).unwrap();
    let r = train(&prep, &cfg).unwrap().report;
    let reduction = 1.0 - r.best.final_train_loss / r.best.initial_train_loss;
    report(
        9,
        replay && restored && reduction >= MASK_LOSS_REDUCTION,
        start.elapsed(),
        120,
        &format!(
            "{n_masked} masked cells, replay identical {replay}, restore byte-identical {restored}, loss {:.4} -> {:.4} ({:.1}% reduction)",
            r.best.initial_train_loss,
            r.best.final_train_loss,
            100.0 * reduction
        ),
    );
}

#[test]
fn criterion_10_determinism() {
    let start = Instant::now();
    let (inst, _) = generate(&SynthSpec {
        n_tables: 2,
        table_rows: BTreeMap::from([("t0".to_string(), 400), ("t1".to_string(), 40)]),
        signal: Signal::TargetOneHop,
        seed: 10,
        ..Default::default()
    })
    .unwrap();
    let (task_inst, tt, _) = build_task(&inst, &TaskSpec::classification("t0", "label")).unwrap();
    let mut cfg = desk_run(Variant::ResnetSage, 3);
    cfg.grid_layers = vec![1, 2];
    // Determinism does not depend on run length; a shorter floor keeps two
    // full grid runs inside the budget.
    cfg.min_steps = 200;
    let run = || {
        let prep = prepare(&task_inst, &tt, cfg.model.d0, &GraphOptions::default()).unwrap();
        train(&prep, &cfg).unwrap()
    };
    let a = run();
    let b = run();
    let same_ckpt = a.checkpoint == b.checkpoint;
    let ja = serde_json::to_string(&a.report.without_timing()).unwrap();
    let jb = serde_json::to_string(&b.report.without_timing()).unwrap();
    report(
        10,
        same_ckpt && ja == jb,
        start.elapsed(),
        240,
        &format!("checkpoints identical {same_ckpt} ({} bytes), reports identical {}", a.checkpoint.len(), ja == jb),
    );
}
