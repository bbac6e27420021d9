use seirgrad::autodiff::{grad_check, Tensor};
use seirgrad::encoder::*;
use seirgrad::mobility::*;
use seirgrad::nn::{load_json, save_json, OptimizerConfig};

fn tiny_episode() -> Episode {
    let cfg = GeneratorConfig {
        n_persons: 4,
        n_locations: 2,
        n_steps: 3,
        initial_infected: 1,
        initial_exposed: 0,
        ..Default::default()
    };
    generate_synthetic_episode(&cfg, 12).unwrap()
}

fn config(k: usize) -> EncoderConfig {
    EncoderConfig {
        embed_dim: k,
        hidden_dim: 4,
        max_clusters: 4,
        epochs: 20,
        batch_size: 8,
        optimizer: OptimizerConfig::adam(0.02),
        seed: 3,
    }
}

/// Persons present at step t: the first `step·t` of them, so edge count grows with t.
fn growing_episode(n_persons: usize, n_locations: usize, n_steps: usize, seed: u64) -> Episode {
    let cfg = GeneratorConfig {
        n_persons,
        n_locations,
        n_steps,
        initial_infected: 1,
        initial_exposed: 0,
        ..Default::default()
    };
    let mut ep = generate_synthetic_episode(&cfg, seed).unwrap();
    let step = n_persons / n_steps;
    for (t, s) in ep.snapshots.iter_mut().enumerate() {
        s.edges.retain(|&(p, _)| p < step * (t + 1));
    }
    ep
}

#[test]
fn end_to_end_gradient_matches_finite_differences() {
    let ep = tiny_episode();
    let graphs = episode_graphs(&ep).unwrap();
    assert_eq!(graphs[0].n_nodes(), 6);
    let model = DiffPoolModel::new(config(5), 6, NODE_FEATURES, 3).unwrap();
    let batch: Vec<(&GraphInput, usize)> = graphs.iter().zip(0..).collect();
    let err = grad_check(
        |tape, vars| model.classification_objective(tape, vars, &batch),
        model.params.tensors(),
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn embedding_invariant_to_node_relabeling() {
    let ep = tiny_episode();
    let (a, x) = snapshot_to_graph(&ep.snapshots[0], &ep).unwrap();
    let n = a.rows();
    let perm = [3, 5, 0, 4, 1, 2];
    let mut pa = Tensor::zeros(&[n, n]);
    let mut px = Tensor::zeros(x.shape());
    for i in 0..n {
        for j in 0..n {
            pa.values_mut()[perm[i] * n + perm[j]] = a.get(i, j);
        }
        for f in 0..x.cols() {
            px.values_mut()[perm[i] * x.cols() + f] = x.get(i, f);
        }
    }
    let model = DiffPoolModel::new(config(6), n, NODE_FEATURES, 3).unwrap();
    let e1 = model.encode_graph(&GraphInput::from_dense(&a, x).unwrap()).unwrap();
    let e2 = model.encode_graph(&GraphInput::from_dense(&pa, px).unwrap()).unwrap();
    for (u, v) in e1.iter().zip(&e2) {
        assert!((u - v).abs() <= 1e-9 * u.abs().max(1.0), "{u} vs {v}");
    }
}

#[test]
fn identical_edges_give_identical_embeddings() {
    let mut ep = tiny_episode();
    ep.snapshots[1].edges = ep.snapshots[0].edges.clone();
    let graphs = episode_graphs(&ep).unwrap();
    let model = DiffPoolModel::new(config(4), 6, NODE_FEATURES, 3).unwrap();
    assert_eq!(model.encode_graph(&graphs[0]).unwrap(), model.encode_graph(&graphs[1]).unwrap());
    assert_eq!(model.encode_graph(&graphs[2]).unwrap(), model.encode_graph(&graphs[2]).unwrap());
}

#[test]
fn assignment_rows_are_stochastic() {
    let ep = growing_episode(60, 6, 6, 1);
    let model = DiffPoolModel::new(config(4), 66, NODE_FEATURES, 6).unwrap();
    for g in episode_graphs(&ep).unwrap() {
        for s in model.assignments(&g).unwrap() {
            for i in 0..s.rows() {
                let row: f64 = (0..s.cols()).map(|j| s.get(i, j)).sum();
                assert!((row - 1.0).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn training_beats_chance_and_reduces_loss() {
    let t = 8;
    let eps: Vec<Episode> = (0..4).map(|s| growing_episode(64, 6, t, s)).collect();
    let refs: Vec<&Episode> = eps.iter().collect();
    let (model, report) = train_encoder_on_episodes(&refs, &config(8)).unwrap();
    assert!(report.epoch_losses[10] < report.epoch_losses[0], "{:?}", report.epoch_losses);
    let chance = 1.0 / t as f64;
    assert!(report.train_accuracy > 2.0 * chance, "accuracy {}", report.train_accuracy);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("encoder.json");
    save_json(&model, &path).unwrap();
    let back: DiffPoolModel = load_json(&path).unwrap();
    back.validate().unwrap();
    assert_eq!(back, model);
}

#[test]
fn untrained_accuracy_near_chance() {
    let t = 8;
    let ep = growing_episode(64, 6, t, 9);
    let graphs = time_labeled_graphs(&[&ep]).unwrap();
    let mean: f64 = (0..20)
        .map(|seed| {
            let model = DiffPoolModel::new(EncoderConfig { seed, ..config(8) }, 70, NODE_FEATURES, t).unwrap();
            classification_accuracy(&model, &graphs).unwrap()
        })
        .sum::<f64>()
        / 20.0;
    let chance = 1.0 / t as f64;
    assert!(mean < 2.0 * chance, "mean untrained accuracy {mean}");
}

#[test]
fn single_label_rejected() {
    let ep = tiny_episode();
    let graphs: Vec<LabeledGraph> = episode_graphs(&ep)
        .unwrap()
        .into_iter()
        .map(|graph| LabeledGraph { graph, label: 0 })
        .collect();
    assert!(train_encoder(&graphs, 3, &config(4)).is_err());
}
