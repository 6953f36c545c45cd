//! Finite-difference verification of every layer type on seeded
//! micro-instances, in f64 with eps = 1e-5 and a 1e-4 relative gate.

use ndarray::{Array2, ArrayD, IxDyn};
use radsense::nn::{
    build_architecture, ArchKind, ArchitectureConfig, Batch, CnnConfig, MlpConfig, VitConfig,
};
use radsense::testutil::fd_gradient_check;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random_batch(shape: &[usize], classes: usize, n: usize, seed: u64) -> Batch<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut full = vec![n];
    full.extend_from_slice(shape);
    let inputs = ArrayD::from_shape_fn(IxDyn(&full), |_| rng.gen_range(-1.0..1.0));
    let mut labels = Array2::zeros((n, classes));
    for i in 0..n {
        let c = rng.gen_range(0..classes);
        labels[(i, c)] = 1.0;
    }
    Batch { inputs, labels }
}

#[test]
fn dense_relu_stack() {
    // Tiny MLP: dense, relu, dense, softmax+CE.
    let arch = ArchitectureConfig {
        kind: ArchKind::Ann,
        input_shape: vec![3, 2],
        num_classes: 2,
        mlp: MlpConfig { hidden: vec![3] },
        cnn: CnnConfig::default(),
        vit: VitConfig::default(),
    };
    let mut model = build_architecture::<f64>(&arch, 11).unwrap();
    let batch = random_batch(&[3, 2], 2, 4, 1);
    let worst = fd_gradient_check(&mut model, &batch, EPS, 42);
    assert!(worst < TOL, "worst relative error {worst:e}");
}

#[test]
fn conv_pool_stack() {
    // conv3x3 -> relu -> maxpool -> conv -> relu -> maxpool -> dense.
    let arch = ArchitectureConfig {
        kind: ArchKind::Cnn,
        input_shape: vec![4, 4, 2],
        num_classes: 3,
        mlp: MlpConfig::default(),
        cnn: CnnConfig {
            channels: vec![2, 3],
        },
        vit: VitConfig::default(),
    };
    let mut model = build_architecture::<f64>(&arch, 7).unwrap();
    let batch = random_batch(&[4, 4, 2], 3, 3, 2);
    let worst = fd_gradient_check(&mut model, &batch, EPS, 43);
    assert!(worst < TOL, "worst relative error {worst:e}");
}

#[test]
fn transformer_stack_with_dropout() {
    // patch-embed, pos-embed, attention, layer-norm, gelu MLP, dropout,
    // flatten, dense head. Dropout masks repeat across finite-difference
    // evaluations because the RNG is reseeded per evaluation.
    let arch = ArchitectureConfig {
        kind: ArchKind::Vit,
        input_shape: vec![4, 4, 1],
        num_classes: 2,
        mlp: MlpConfig::default(),
        cnn: CnnConfig::default(),
        vit: VitConfig {
            patch: 2,
            dim: 4,
            layers: 2,
            heads: 2,
            mlp_hidden: 6,
            dropout: 0.25,
        },
    };
    let mut model = build_architecture::<f64>(&arch, 3).unwrap();
    let batch = random_batch(&[4, 4, 1], 2, 3, 5);
    let worst = fd_gradient_check(&mut model, &batch, EPS, 44);
    assert!(worst < TOL, "worst relative error {worst:e}");
}

#[test]
fn transformer_stack_inference_path() {
    // Same stack without dropout (the production inference configuration).
    let arch = ArchitectureConfig {
        kind: ArchKind::Vit,
        input_shape: vec![4, 4, 2],
        num_classes: 3,
        mlp: MlpConfig::default(),
        cnn: CnnConfig::default(),
        vit: VitConfig {
            patch: 2,
            dim: 6,
            layers: 1,
            heads: 3,
            mlp_hidden: 4,
            dropout: 0.0,
        },
    };
    let mut model = build_architecture::<f64>(&arch, 9).unwrap();
    let batch = random_batch(&[4, 4, 2], 3, 2, 6);
    let worst = fd_gradient_check(&mut model, &batch, EPS, 45);
    assert!(worst < TOL, "worst relative error {worst:e}");
}

#[test]
fn zero_input_gives_zero_first_layer_weight_gradient() {
    // A bias-free view: with all-zero inputs the dense weight gradient of the
    // first layer must vanish (its bias gradient need not).
    let arch = ArchitectureConfig {
        kind: ArchKind::Ann,
        input_shape: vec![4, 2],
        num_classes: 2,
        mlp: MlpConfig { hidden: vec![3] },
        cnn: CnnConfig::default(),
        vit: VitConfig::default(),
    };
    let model = build_architecture::<f64>(&arch, 5).unwrap();
    let batch = Batch {
        inputs: ArrayD::zeros(IxDyn(&[2, 4, 2])),
        labels: ndarray::array![[1.0, 0.0], [0.0, 1.0]],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (_, grads) = model.loss_and_grads(&batch, &mut rng).unwrap();
    // First dense: 8*3 weights come first in the flat layout.
    for g in grads.iter().take(8 * 3) {
        assert_eq!(*g, 0.0);
    }
}
