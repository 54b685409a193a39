use sgnn_core::coding::Coding;
use sgnn_core::config::RunConfig;
use sgnn_core::graph::{generate_sbm, Dataset, Role, SbmParams};
use sgnn_core::layers::NormKind;
use sgnn_core::model::{build_model, Backbone, Mode, Model, ModelConfig};
use sgnn_core::profiler::OpTally;
use sgnn_core::spike::firing_rate;
use sgnn_core::tensor::DenseMatrix;
use sgnn_core::train::{
    accuracy, evaluate, expand_grid, grid_search, rows_csv, train, GridOptions, TrainConfig,
};

fn sbm32(seed: u64) -> Dataset {
    generate_sbm(&SbmParams {
        n_per_block: 16,
        num_blocks: 2,
        p_in: 0.9,
        p_out: 0.05,
        dim: 8,
        noise: 0.5,
        seed,
    })
    .unwrap()
}

fn small_gcn(seed: u64) -> ModelConfig {
    ModelConfig {
        hidden_dim: 16,
        time_steps: 4,
        seed,
        ..ModelConfig::gcn()
    }
}

fn build(cfg: &ModelConfig, data: &Dataset) -> Model {
    build_model(cfg, &data.graph, data.features.dim(), data.num_classes()).unwrap()
}

/// Plain softmax regression on the raw features, full batch.
fn logistic_oracle(data: &Dataset) -> f64 {
    let x = data.features.values();
    let (n, d) = x.shape();
    let k = data.num_classes();
    let labels = data.labels.labels();
    let train_nodes = data.split.nodes(Role::Train);
    let mut w = vec![0.0; d * k];
    for _ in 0..500 {
        let mut g = vec![0.0; d * k];
        for &u in &train_nodes {
            let z: Vec<f64> = (0..k)
                .map(|c| (0..d).map(|j| x.get(u, j) * w[j * k + c]).sum())
                .collect();
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            for c in 0..k {
                let p = e[c] / s - if labels[u] == c { 1.0 } else { 0.0 };
                for j in 0..d {
                    g[j * k + c] += p * x.get(u, j);
                }
            }
        }
        for (wv, gv) in w.iter_mut().zip(&g) {
            *wv -= 0.5 * gv / train_nodes.len() as f64;
        }
    }
    let logits = DenseMatrix::from_vec(
        n,
        k,
        (0..n)
            .flat_map(|u| (0..k).map(move |c| (u, c)))
            .map(|(u, c)| (0..d).map(|j| x.get(u, j) * w[j * k + c]).sum())
            .collect(),
    )
    .unwrap();
    accuracy(&logits, labels, &data.split.nodes(Role::Test)).unwrap()
}

#[test]
fn separable_sbm_reaches_ninety_percent() {
    let data = sbm32(3);
    assert!(logistic_oracle(&data) >= 0.9);
    let mut model = build(&small_gcn(0), &data);
    let report = train(
        &mut model,
        &data,
        &TrainConfig {
            epochs: 200,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    assert!(report.test_acc >= 0.9, "{report:?}");
}

#[test]
fn zero_learning_rate_is_a_null_step() {
    let data = sbm32(1);
    let mut model = build(&small_gcn(2), &data);
    let before: Vec<DenseMatrix> = model.params().iter().map(|p| p.value.clone()).collect();
    let tc = TrainConfig {
        lr: 0.0,
        epochs: 7,
        ..TrainConfig::default()
    };
    train(&mut model, &data, &tc).unwrap();
    let after: Vec<DenseMatrix> = model.params().iter().map(|p| p.value.clone()).collect();
    assert_eq!(before, after);
}

#[test]
fn one_step_moves_some_parameter() {
    let data = sbm32(1);
    let mut model = build(&small_gcn(2), &data);
    let before: Vec<DenseMatrix> = model.params().iter().map(|p| p.value.clone()).collect();
    let tc = TrainConfig {
        epochs: 1,
        early_stop_patience: 1,
        ..TrainConfig::default()
    };
    train(&mut model, &data, &tc).unwrap();
    let after: Vec<DenseMatrix> = model.params().iter().map(|p| p.value.clone()).collect();
    assert_ne!(before, after);
}

#[test]
fn fixed_seed_gives_identical_losses() {
    let data = sbm32(5);
    for cfg in [
        small_gcn(9),
        ModelConfig {
            hidden_dim: 8,
            time_steps: 3,
            seed: 9,
            ..ModelConfig::sgc()
        },
    ] {
        let tc = TrainConfig {
            epochs: 15,
            ..TrainConfig::default()
        };
        let a = train(&mut build(&cfg, &data), &data, &tc).unwrap();
        let b = train(&mut build(&cfg, &data), &data, &tc).unwrap();
        assert_eq!(a.train_loss, b.train_loss);
        assert_eq!(a.val_acc, b.val_acc);
        assert_eq!(a.test_acc, b.test_acc);
    }
}

#[test]
fn best_checkpoint_reproduces_test_accuracy() {
    let data = sbm32(7);
    let mut model = build(&small_gcn(4), &data);
    let report = train(
        &mut model,
        &data,
        &TrainConfig {
            epochs: 40,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    assert_eq!(
        evaluate(&mut model, &data, Role::Test).unwrap(),
        report.test_acc
    );
    assert_eq!(
        evaluate(&mut model, &data, Role::Val).unwrap(),
        report.best_val_acc
    );
    let best = report
        .val_acc
        .iter()
        .map(|v| v.1)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(best, report.best_val_acc);
}

#[test]
fn eval_inference_is_pure() {
    let data = sbm32(2);
    let cfg = ModelConfig {
        norm: NormKind::Batch,
        ..small_gcn(1)
    };
    let mut model = build(&cfg, &data);
    train(
        &mut model,
        &data,
        &TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let x = model.prepare(data.features.values(), None).unwrap();
    let a = model.forward(&x, Mode::eval(), None).unwrap().logits;
    let b = model.forward(&x, Mode::eval(), None).unwrap().logits;
    assert_eq!(a, b);
}

#[test]
fn spikes_binary_and_rates_match_trains() {
    let data = sbm32(4);
    for coding in [Coding::Rate, Coding::Temporal, Coding::Direct] {
        for (ms, jk) in [(false, false), (true, true)] {
            let cfg = ModelConfig {
                num_layers: 3,
                coding,
                ms,
                jk,
                ..small_gcn(3)
            };
            let mut model = build(&cfg, &data);
            let x = model.prepare(data.features.values(), None).unwrap();
            for mode in [Mode::train(0), Mode::eval()] {
                let pass = model.forward(&x, mode, None).unwrap();
                for tr in &pass.traces {
                    let s = tr.spikes.as_ref().unwrap();
                    assert!(s.padding_is_zero());
                    assert_eq!(tr.firing_rate, firing_rate(s));
                    for m in &tr.run.spikes {
                        assert!(m.as_slice().iter().all(|&v| v == 0.0 || v == 1.0));
                    }
                }
            }
        }
    }
}

#[test]
fn tally_matches_flop_records() {
    let data = sbm32(6);
    let cases = [
        ModelConfig {
            pre_linear: true,
            coding: Coding::Rate,
            ..small_gcn(0)
        },
        small_gcn(0),
        ModelConfig {
            hidden_dim: 8,
            time_steps: 5,
            sgc_hops: 3,
            pre_linear: true,
            ..ModelConfig::sgc()
        },
        ModelConfig {
            hidden_dim: 8,
            coding: Coding::Direct,
            ..ModelConfig::sgc()
        },
    ];
    for cfg in cases {
        let mut model = build(&cfg, &data);
        let mut tally = OpTally::default();
        let x = model
            .prepare(data.features.values(), Some(&mut tally))
            .unwrap();
        let pass = model.forward(&x, Mode::eval(), Some(&mut tally)).unwrap();
        let records = model.flop_records();
        assert_eq!(
            records.len(),
            tally.entries.len(),
            "{:?}",
            tally.entries.keys()
        );
        for r in &records {
            let e = tally
                .get(&r.name)
                .unwrap_or_else(|| panic!("{} not tallied", r.name));
            let mult = if r.per_step { cfg.time_steps as u64 } else { 1 };
            assert_eq!(e.kind, Some(r.kind), "{}", r.name);
            assert_eq!(e.flops, r.flops * mult, "{}", r.name);
        }
        for (l, tr) in pass.traces.iter().enumerate().skip(1) {
            let e = tally.get(&format!("conv{l}.linear")).unwrap();
            let d_out = model.layers[l].d_out() as u64;
            let prev = pass.traces[l - 1].spikes.as_ref().unwrap();
            assert_eq!(e.executed, prev.count_ones() * d_out);
            let _ = tr;
        }
        if cfg.backbone == Backbone::SpikingSgc {
            assert_eq!(records[0].name, "propagate");
        }
    }
}

#[test]
fn sbm_degrees_balanced_when_probabilities_equal() {
    let (n_per_block, p) = (20, 0.3);
    let mut within = Vec::new();
    let mut across = Vec::new();
    for seed in 0..50 {
        let d = generate_sbm(&SbmParams {
            n_per_block,
            num_blocks: 2,
            p_in: p,
            p_out: p,
            dim: 2,
            noise: 0.0,
            seed,
        })
        .unwrap();
        let (mut w, mut a) = (0.0, 0.0);
        for (u, v) in d.graph.undirected_edges() {
            if u / n_per_block == v / n_per_block {
                w += 1.0;
            } else {
                a += 1.0;
            }
        }
        let n = (2 * n_per_block) as f64;
        within.push(2.0 * w / n);
        across.push(2.0 * a / n);
    }
    // expected per-node degree contributions
    let ew = (n_per_block - 1) as f64 * p;
    let ea = n_per_block as f64 * p;
    for (xs, e, pairs) in [
        (&within, ew, 2 * n_per_block * (n_per_block - 1) / 2),
        (&across, ea, n_per_block * n_per_block),
    ] {
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let n = (2 * n_per_block) as f64;
        // mean of 50 independent binomials scaled by 2/n
        let sigma = 2.0 / n * (pairs as f64 * p * (1.0 - p)).sqrt() / (xs.len() as f64).sqrt();
        assert!(
            (mean - e).abs() <= 3.0 * sigma,
            "{mean} vs {e} ± {}",
            3.0 * sigma
        );
    }
}

#[test]
fn grid_ranks_null_learner_last_and_resumes() {
    let data = sbm32(8);
    let (base, axes) = RunConfig::parse_grid(
        "[model]\nhidden_dim = 8\ntime_steps = 3\n[train]\nepochs = 20\nlr = [0.0, 0.01]\n",
    )
    .unwrap();
    let cells = expand_grid(&base, &axes).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let opts = GridOptions {
        workers: 2,
        journal: Some(dir.path().join("journal.tsv")),
        report_wall_time: false,
    };
    let first = grid_search(&cells, &data, &[0, 1], &opts).unwrap();
    assert_eq!(first.rows.len(), 4);
    assert_eq!(first.resumed, 0);
    assert_eq!(first.summary.last().unwrap().cell, "train.lr=0.0");
    let again = grid_search(&cells, &data, &[0, 1], &opts).unwrap();
    assert_eq!(again.resumed, 4);
    assert_eq!(rows_csv(&again.rows), rows_csv(&first.rows));
    let journal = std::fs::read_to_string(dir.path().join("journal.tsv")).unwrap();
    assert_eq!(journal.lines().count(), 4);
}
