use proptest::prelude::*;
use sgnn_core::config::RunConfig;
use sgnn_core::graph::Graph;
use sgnn_core::neuron::{run, NeuronParams, SpikeFn};
use sgnn_core::profiler::{energy, CostConstants, LayerCost, OpKind};
use sgnn_core::spike::{firing_rate, SpikeTrain};
use sgnn_core::tensor::DenseMatrix;

fn graph_strategy() -> impl Strategy<Value = Graph> {
    (1usize..24).prop_flat_map(|n| {
        prop::collection::vec((0..n, 0..n), 0..60).prop_map(move |pairs| {
            let edges: Vec<(usize, usize)> = pairs.into_iter().filter(|(u, v)| u != v).collect();
            Graph::from_edges(n, &edges).unwrap()
        })
    })
}

fn costs_strategy() -> impl Strategy<Value = Vec<LayerCost>> {
    prop::collection::vec(
        (1u64..1_000_000, 1usize..20, 0.0f64..=1.0, any::<bool>()),
        1..6,
    )
    .prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (f, t, r, ac))| {
                if ac {
                    LayerCost::ac(format!("l{i}"), f, t, r)
                } else {
                    LayerCost::mac(format!("l{i}"), f)
                }
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn normalized_weights_symmetric_and_positive(g in graph_strategy()) {
        let w = g.normalize_adjacency();
        w.validate().unwrap();
        for u in 0..w.num_nodes() {
            let d = (w.degree(u) + 1) as f64;
            prop_assert_eq!(w.self_weights().unwrap()[u], 1.0 / d);
            for (&v, &x) in w.neighbors(u).iter().zip(w.neighbor_weights(u).unwrap()) {
                prop_assert!(x > 0.0 && x <= 0.5);
                let back = w.neighbors(v).iter().position(|&k| k == u).unwrap();
                prop_assert_eq!(w.neighbor_weights(v).unwrap()[back], x);
            }
        }
    }

    #[test]
    fn spike_train_round_trip(
        (t, n, c) in (1usize..4, 1usize..10, 1usize..130),
        seed in any::<u64>(),
    ) {
        let s = SpikeTrain::from_fn(t, n, c, |a, b, k| {
            (seed ^ ((a * 131 + b * 17 + k) as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)) >> 63 == 1
        });
        prop_assert!(s.padding_is_zero());
        let back = SpikeTrain::from_dense(&s.to_dense()).unwrap();
        prop_assert_eq!(&back, &s);
        let ones: u64 = s.to_dense().iter().flat_map(|m| m.as_slice().iter()).filter(|&&x| x == 1.0).count() as u64;
        prop_assert_eq!(s.count_ones(), ones);
        prop_assert_eq!(firing_rate(&s), ones as f64 / (t * n * c) as f64);
    }

    #[test]
    fn neuron_spikes_binary_and_reset(
        currents in prop::collection::vec(prop::collection::vec(-2.0f64..3.0, 6), 1..8),
        tau in 1.0f64..5.0,
        u_th in 0.1f64..2.0,
    ) {
        let steps: Vec<DenseMatrix> = currents
            .into_iter()
            .map(|v| DenseMatrix::from_vec(2, 3, v).unwrap())
            .collect();
        let p = NeuronParams::lif(tau, u_th);
        let r = run(&steps, &p, SpikeFn::Heaviside);
        for (h, s) in r.pre_reset.iter().zip(&r.spikes) {
            for (hv, sv) in h.as_slice().iter().zip(s.as_slice()) {
                prop_assert!(*sv == 0.0 || *sv == 1.0);
                prop_assert_eq!(*sv == 1.0, *hv >= u_th);
            }
        }
    }

    #[test]
    fn report_self_consistent(costs in costs_strategy()) {
        let r = energy(&costs, &CostConstants::default()).unwrap();
        prop_assert!(r.is_consistent(1e-9));
        prop_assert_eq!(r.layers.len(), costs.len());
    }

    #[test]
    fn energy_strictly_increases_with_rate(costs in costs_strategy(), bump in 1e-3f64..0.5) {
        let c = CostConstants::default();
        let base = energy(&costs, &c).unwrap();
        for (i, row) in costs.iter().enumerate() {
            if row.kind != OpKind::Ac || row.rate.unwrap() + bump > 1.0 {
                continue;
            }
            let mut up = costs.clone();
            up[i].rate = Some(row.rate.unwrap() + bump);
            prop_assert!(energy(&up, &c).unwrap().e_snn_mj > base.e_snn_mj);
        }
    }

    #[test]
    fn doubling_steps_doubles_ac_energy(costs in costs_strategy()) {
        let c = CostConstants::default();
        let base = energy(&costs, &c).unwrap();
        let doubled: Vec<LayerCost> = costs
            .iter()
            .cloned()
            .map(|mut r| {
                r.steps = r.steps.map(|t| 2 * t);
                r
            })
            .collect();
        let twice = energy(&doubled, &c).unwrap();
        for (a, b) in base.layers.iter().zip(&twice.layers) {
            match a.kind {
                OpKind::Ac => prop_assert_eq!(b.energy_pj, 2.0 * a.energy_pj),
                OpKind::Mac => prop_assert_eq!(b.energy_pj, a.energy_pj),
            }
        }
    }

    #[test]
    fn config_text_round_trips(
        lr in 1e-5f64..1.0,
        hidden in 1usize..512,
        steps in 1usize..64,
        ms in any::<bool>(),
        norm in prop::sample::select(vec!["none", "batch", "stfn"]),
    ) {
        let text = format!("[model]\nhidden_dim = {hidden}\ntime_steps = {steps}\nms = {ms}\nnorm = {norm}\n[train]\nlr = {lr}\n");
        let cfg = RunConfig::parse(&text).unwrap();
        let again = RunConfig::parse(&cfg.to_text()).unwrap();
        prop_assert_eq!(&again, &cfg);
        prop_assert_eq!(again.to_text(), cfg.to_text());
    }
}
