use std::path::{Path, PathBuf};

use ngauss::data::{load_mnist, synth_dataset, DatasetKind, LabeledDataset, Split};
use ngauss::lipschitz::certify_ngauss;
use ngauss::nn::{build_architecture, forward, init_params, predict, Parameters};
use ngauss::train::{evaluate, run_training, train_step, Hyperparams, TrainState};
use ngauss::{ActivationKind, SchemeCode, Tensor};

/// Full-batch loss on `data` after `steps` updates from a seeded init.
fn overfit_loss(data: &LabeledDataset, scheme: SchemeCode, steps: usize) -> f64 {
    let arch = build_architecture(DatasetKind::Mnist, scheme);
    let mut params: Parameters = init_params(&arch, 0);
    let mut state = TrainState::new(&arch);
    let hyper = Hyperparams::default();
    for _ in 0..steps {
        train_step(&arch, &mut params, &mut state, &data.images, &data.labels, &hyper).unwrap();
    }
    evaluate(&arch, &params, data, data.len()).unwrap().0
}

fn mnist_dir() -> PathBuf {
    std::env::var_os("NGAUSS_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

#[test]
fn single_batch_overfit_sss() {
    let data: LabeledDataset = synth_dataset(DatasetKind::Mnist, 1, 5, Split::Train).unwrap().take(8).unwrap();
    let loss = overfit_loss(&data, "SSS".parse().unwrap(), 200);
    assert!(loss < 0.01, "loss {loss}");
}

/// Schemes whose fc1 is N-Gauss may fail the probe; their outcome is only
/// reported.
#[test]
fn single_batch_overfit_grid_schemes() {
    let Ok(full) = load_mnist::<f64>(&mnist_dir(), Split::Train) else {
        println!("MNIST not found under {}, skipping", mnist_dir().display());
        return;
    };
    let data = full.take(8).unwrap();
    for scheme in SchemeCode::grid_schemes() {
        let loss = overfit_loss(&data, scheme, 200);
        println!("overfit {scheme}: final loss {loss:.6}");
        if scheme.fc1 != ActivationKind::NGauss {
            assert!(loss < 0.01, "{scheme}: loss {loss}");
        }
    }
}

#[test]
fn zero_learning_rate_freezes_loss() {
    let train: LabeledDataset = synth_dataset(DatasetKind::Mnist, 4, 1, Split::Train).unwrap();
    let test: LabeledDataset = synth_dataset(DatasetKind::Mnist, 1, 2, Split::Test).unwrap();
    let arch = build_architecture(DatasetKind::Mnist, "NNS".parse().unwrap());
    let mut params: Parameters = init_params(&arch, 0);
    let before = params.clone();
    let hyper = Hyperparams { learning_rate: 0.0, epochs: 3, batch_size: 8, ..Default::default() };
    let run = run_training(&arch, &mut params, &train, &test, &hyper, |_| {}).unwrap();
    assert_eq!(params, before);
    let first = run.history[0].train_loss;
    assert!(run.history.iter().all(|m| (m.train_loss - first).abs() <= 1e-12));
}

#[test]
fn synthetic_sss_learns_quickly() {
    let train: LabeledDataset = synth_dataset(DatasetKind::Mnist, 50, 1, Split::Train).unwrap();
    let test: LabeledDataset = synth_dataset(DatasetKind::Mnist, 10, 2, Split::Test).unwrap();
    let arch = build_architecture(DatasetKind::Mnist, "SSS".parse().unwrap());
    let mut params = init_params(&arch, 3);
    let hyper = Hyperparams { epochs: 5, ..Default::default() };
    let run = run_training(&arch, &mut params, &train, &test, &hyper, |_| {}).unwrap();
    assert!(run.status.converged);
    let (_, train_acc) = evaluate(&arch, &params, &train, 100).unwrap();
    assert!(train_acc > 0.95, "train accuracy {train_acc}");
}

#[test]
fn training_is_bitwise_reproducible() {
    let train: LabeledDataset = synth_dataset(DatasetKind::Mnist, 6, 1, Split::Train).unwrap();
    let test: LabeledDataset = synth_dataset(DatasetKind::Mnist, 2, 2, Split::Test).unwrap();
    let arch = build_architecture(DatasetKind::Mnist, "RRS".parse().unwrap());
    let hyper = Hyperparams { epochs: 2, batch_size: 16, seed: 11, ..Default::default() };
    let mut runs = Vec::new();
    for _ in 0..2 {
        let mut params: Parameters = init_params(&arch, hyper.seed);
        let run = run_training(&arch, &mut params, &train, &test, &hyper, |_| {}).unwrap();
        let losses: Vec<(u64, u64, u64)> = run
            .history
            .iter()
            .map(|m| (m.train_loss.to_bits(), m.test_loss.to_bits(), m.test_accuracy.to_bits()))
            .collect();
        runs.push((losses, params));
    }
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn every_architecture_produces_class_logits() {
    for kind in DatasetKind::ALL {
        let [c, h, w] = kind.input_shape();
        let x = Tensor::full(&[1, c, h, w], 0.5).unwrap();
        for scheme in SchemeCode::all() {
            let arch = build_architecture(kind, scheme);
            let params: Parameters = init_params(&arch, 0);
            let logits = predict(&arch, &params, &x).unwrap();
            assert_eq!(logits.shape(), &[1, kind.num_classes()], "{kind} {scheme}");
            assert!(logits.all_finite());
        }
    }
}

#[test]
fn mnist_layer_shapes_follow_the_table() {
    let arch = build_architecture(DatasetKind::Mnist, "NNS".parse().unwrap());
    let params: Parameters = init_params(&arch, 0);
    let x = Tensor::full(&[1, 1, 28, 28], 0.25).unwrap();
    let (_, cache) = forward(&arch, &params, &x).unwrap();
    assert_eq!(cache.layers.len(), 6);
    let shapes = arch.layer_shapes().unwrap();
    let want: Vec<Vec<usize>> = vec![
        vec![1, 28, 28],
        vec![10, 24, 24],
        vec![10, 12, 12],
        vec![20, 10, 10],
        vec![2000],
        vec![500],
        vec![10],
    ];
    assert_eq!(shapes, want);
}

#[test]
fn certify_holds_across_ranges() {
    for hi in [10.0, 100.0, 1000.0] {
        let r = certify_ngauss(hi, 100_000, 0).unwrap();
        assert_eq!(r.bound_satisfied, Some(true), "hi = {hi}");
        assert!(r.all_satisfied());
    }
}
