//! Architecture construction, parameter flattening, and the forward/backward
//! drivers.

use super::layers::{Dense, ForwardCtx, LayerCache, PatchEmbed, PosEmbed, TransformerBlock};
use super::loss::{batch_cross_entropy, softmax, softmax_ce_grad, softmax_rows};
use super::{Batch, Dtype, PredictionVector};
use crate::error::{Error, Result};
use ndarray::{Array1, Array2, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Conv2d, Layer, LayerNorm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArchKind {
    #[serde(rename = "ANN")]
    Ann,
    #[serde(rename = "CNN")]
    Cnn,
    #[serde(rename = "VIT")]
    Vit,
}

impl std::fmt::Display for ArchKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ArchKind::Ann => "ANN",
            ArchKind::Cnn => "CNN",
            ArchKind::Vit => "VIT",
        })
    }
}

/// Hidden widths of the IQ MLP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 64],
        }
    }
}

/// CNN channel pyramid; each conv is 3x3 followed by 2x2 max-pooling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnConfig {
    pub channels: Vec<usize>,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            channels: vec![16, 32, 64, 128],
        }
    }
}

/// ViT: single patch-embedding convolution, learned positions, transformer
/// encoder stack, layer-norm, flatten, linear head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VitConfig {
    pub patch: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub dropout: f64,
}

impl Default for VitConfig {
    fn default() -> Self {
        Self {
            patch: 16,
            dim: 64,
            layers: 4,
            heads: 4,
            mlp_hidden: 128,
            dropout: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    pub kind: ArchKind,
    /// Input shape without the batch axis: (d0, 2) for ANN, (H, W, 3) for
    /// CNN/ViT.
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
    #[serde(default)]
    pub mlp: MlpConfig,
    #[serde(default)]
    pub cnn: CnnConfig,
    #[serde(default)]
    pub vit: VitConfig,
}

/// Per-epoch training history and hyperparameters, carried in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub loss_curve: Vec<f64>,
    pub val_accuracy_curve: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

/// Serializable snapshot of one trained (or initialized) classifier stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub format_version: u32,
    pub architecture: ArchitectureConfig,
    pub layer_shapes: Vec<(String, Vec<usize>)>,
    #[serde(skip)]
    pub weights: Vec<f32>,
    pub rng_seed: u64,
    pub training_meta: TrainingMeta,
}

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let expect: usize = self
            .layer_shapes
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum();
        if expect != self.weights.len() {
            return Err(Error::ShapeMismatch(format!(
                "weight count {} != sum of layer shapes {}",
                self.weights.len(),
                expect
            )));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidParams("non-finite weight".into()));
        }
        Ok(())
    }
}

/// A runtime model: architecture + layer stack.
#[derive(Debug, Clone)]
pub struct Model<F: Dtype> {
    pub arch: ArchitectureConfig,
    pub layers: Vec<Layer<F>>,
    pub rng_seed: u64,
    pub training_meta: TrainingMeta,
}

fn he_uniform<F: Dtype>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<F> {
    let limit = (6.0 / rows as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| F::from_f64(rng.gen_range(-limit..limit)))
}

fn xavier_uniform<F: Dtype>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<F> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| F::from_f64(rng.gen_range(-limit..limit)))
}

/// Classification heads start near zero so a fresh model predicts close to
/// uniform; Adam's scale invariance recovers head magnitude within a few
/// steps.
const HEAD_INIT_SCALE: f64 = 0.02;

fn head_init<F: Dtype>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<F> {
    let mut w = xavier_uniform::<F>(rng, rows, cols);
    let s = F::from_f64(HEAD_INIT_SCALE);
    w.mapv_inplace(|v| v * s);
    w
}

/// Build an initialized model: He-uniform on ReLU-facing layers, Xavier on
/// attention/projection/head layers, seeded and deterministic.
pub fn build_architecture<F: Dtype>(arch: &ArchitectureConfig, rng_seed: u64) -> Result<Model<F>> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut layers: Vec<Layer<F>> = Vec::new();
    match arch.kind {
        ArchKind::Ann => {
            if arch.input_shape.len() != 2 || arch.input_shape[1] != 2 {
                return Err(Error::ShapeMismatch(format!(
                    "ANN expects input (d0, 2), got {:?}",
                    arch.input_shape
                )));
            }
            layers.push(Layer::Flatten);
            let mut fan_in = arch.input_shape.iter().product::<usize>();
            for &h in &arch.mlp.hidden {
                layers.push(Layer::Dense(Dense {
                    w: he_uniform(&mut rng, fan_in, h),
                    b: Array1::zeros(h),
                }));
                layers.push(Layer::Relu);
                fan_in = h;
            }
            layers.push(Layer::Dense(Dense {
                w: head_init(&mut rng, fan_in, arch.num_classes),
                b: Array1::zeros(arch.num_classes),
            }));
        }
        ArchKind::Cnn => {
            let (h, w, c) = expect_image(&arch.input_shape)?;
            let depth = arch.cnn.channels.len();
            if h % (1 << depth) != 0 || w % (1 << depth) != 0 {
                return Err(Error::ShapeMismatch(format!(
                    "input {h}x{w} not divisible by 2^{depth}"
                )));
            }
            let mut cin = c;
            for &cout in &arch.cnn.channels {
                layers.push(Layer::Conv2d(Conv2d {
                    w: he_uniform(&mut rng, 9 * cin, cout),
                    b: Array1::zeros(cout),
                    cin,
                    cout,
                }));
                layers.push(Layer::Relu);
                layers.push(Layer::MaxPool2);
                cin = cout;
            }
            layers.push(Layer::Flatten);
            let feat = (h >> depth) * (w >> depth) * cin;
            layers.push(Layer::Dense(Dense {
                w: head_init(&mut rng, feat, arch.num_classes),
                b: Array1::zeros(arch.num_classes),
            }));
        }
        ArchKind::Vit => {
            let (h, w, c) = expect_image(&arch.input_shape)?;
            let v = &arch.vit;
            if h % v.patch != 0 || w % v.patch != 0 {
                return Err(Error::ShapeMismatch(format!(
                    "input {h}x{w} not divisible by patch {}",
                    v.patch
                )));
            }
            let tokens = (h / v.patch) * (w / v.patch);
            let k = v.patch * v.patch * c;
            layers.push(Layer::PatchEmbed(PatchEmbed {
                w: xavier_uniform(&mut rng, k, v.dim),
                b: Array1::zeros(v.dim),
                patch: v.patch,
                cin: c,
                dim: v.dim,
            }));
            layers.push(Layer::PosEmbed(PosEmbed {
                pos: Array2::from_shape_fn((tokens, v.dim), |_| {
                    F::from_f64(rng.gen_range(-0.02..0.02))
                }),
            }));
            for _ in 0..v.layers {
                layers.push(Layer::TransformerBlock(Box::new(TransformerBlock {
                    ln1: LayerNorm {
                        gamma: Array1::from_elem(v.dim, F::one()),
                        beta: Array1::zeros(v.dim),
                    },
                    wq: xavier_uniform(&mut rng, v.dim, v.dim),
                    bq: Array1::zeros(v.dim),
                    wk: xavier_uniform(&mut rng, v.dim, v.dim),
                    bk: Array1::zeros(v.dim),
                    wv: xavier_uniform(&mut rng, v.dim, v.dim),
                    bv: Array1::zeros(v.dim),
                    wo: xavier_uniform(&mut rng, v.dim, v.dim),
                    bo: Array1::zeros(v.dim),
                    ln2: LayerNorm {
                        gamma: Array1::from_elem(v.dim, F::one()),
                        beta: Array1::zeros(v.dim),
                    },
                    w1: xavier_uniform(&mut rng, v.dim, v.mlp_hidden),
                    b1: Array1::zeros(v.mlp_hidden),
                    w2: xavier_uniform(&mut rng, v.mlp_hidden, v.dim),
                    b2: Array1::zeros(v.dim),
                    heads: v.heads,
                    dropout: v.dropout,
                })));
            }
            layers.push(Layer::LayerNorm(LayerNorm {
                gamma: Array1::from_elem(v.dim, F::one()),
                beta: Array1::zeros(v.dim),
            }));
            layers.push(Layer::Flatten);
            layers.push(Layer::Dropout(v.dropout));
            layers.push(Layer::Dense(Dense {
                w: head_init(&mut rng, tokens * v.dim, arch.num_classes),
                b: Array1::zeros(arch.num_classes),
            }));
        }
    }
    Ok(Model {
        arch: arch.clone(),
        layers,
        rng_seed,
        training_meta: TrainingMeta::default(),
    })
}

fn expect_image(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "expected (H, W, C) input, got {shape:?}"
        )));
    }
    Ok((shape[0], shape[1], shape[2]))
}

impl<F: Dtype> Model<F> {
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    pub fn params_flat(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            l.append_params(&mut out);
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[F]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} params, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut pos = 0usize;
        for l in &mut self.layers {
            l.read_params(flat, &mut pos);
        }
        Ok(())
    }

    pub fn layer_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            for (name, shape) in l.param_shapes() {
                out.push((format!("{i}.{name}"), shape));
            }
        }
        out
    }

    fn check_input(&self, x: &ArrayD<F>) -> Result<()> {
        if x.shape().len() != self.arch.input_shape.len() + 1
            || x.shape()[1..] != self.arch.input_shape[..]
        {
            return Err(Error::ShapeMismatch(format!(
                "input {:?} does not match architecture input {:?}",
                &x.shape()[1..],
                self.arch.input_shape
            )));
        }
        Ok(())
    }

    /// Batched logits in inference mode (dropout disabled).
    pub fn logits(&self, x: &ArrayD<F>) -> Result<Array2<F>> {
        self.check_input(x)?;
        let mut cur = x.clone();
        let mut ctx = ForwardCtx::inference();
        for l in &self.layers {
            let (y, _) = l.forward(&cur, &mut ctx)?;
            cur = y;
        }
        let n = x.shape()[0];
        cur.into_dimensionality::<ndarray::Ix2>()
            .map_err(|e| Error::ShapeMismatch(e.to_string()))
            .and_then(|m| {
                if m.shape()[0] != n {
                    Err(Error::ShapeMismatch("batch dim lost".into()))
                } else {
                    Ok(m)
                }
            })
    }

    /// Row-wise class probabilities in inference mode.
    pub fn predict_batch(&self, x: &ArrayD<F>) -> Result<Array2<F>> {
        Ok(softmax_rows(&self.logits(x)?))
    }

    /// Single-input prediction: deterministic softmax probabilities.
    pub fn forward_one(&self, input: &ArrayD<F>) -> Result<PredictionVector> {
        let mut shape = vec![1usize];
        shape.extend_from_slice(input.shape());
        let x = input
            .to_shape(IxDyn(&shape))
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?
            .to_owned();
        let logits = self.logits(&x)?;
        let probs = softmax(logits.row(0));
        Ok(PredictionVector {
            probs: probs.iter().map(|p| p.as_f64() as f32).collect(),
        })
    }

    /// Training-mode forward returning per-layer caches.
    pub fn forward_train(
        &self,
        x: &ArrayD<F>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Array2<F>, Vec<LayerCache<F>>)> {
        self.check_input(x)?;
        let mut cur = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut ctx = ForwardCtx {
            train: true,
            rng: Some(rng),
        };
        for l in &self.layers {
            let (y, c) = l.forward(&cur, &mut ctx)?;
            caches.push(c);
            cur = y;
        }
        let logits = cur
            .into_dimensionality::<ndarray::Ix2>()
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Ok((logits, caches))
    }

    /// Mean batch loss and the exact gradient of it w.r.t. every weight,
    /// flattened in `params_flat` order. Dropout is active; pass a seeded RNG.
    pub fn loss_and_grads(
        &self,
        batch: &Batch<F>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(F, Vec<F>)> {
        batch.validate()?;
        let (logits, caches) = self.forward_train(&batch.inputs, rng)?;
        let probs = softmax_rows(&logits);
        let loss = batch_cross_entropy(&probs, batch.labels.view())?;
        let grad_logits = softmax_ce_grad(&probs, batch.labels.view());

        let mut per_layer: Vec<Vec<F>> = vec![Vec::new(); self.layers.len()];
        let mut grad = grad_logits.into_dyn();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let (gx, gparams) = l.backward(&grad, &caches[i])?;
            per_layer[i] = gparams;
            grad = gx;
        }
        let mut flat = Vec::with_capacity(self.param_count());
        for g in per_layer {
            flat.extend(g);
        }
        Ok((loss, flat))
    }

    /// Snapshot to the serializable parameter form (weights cast to f32).
    pub fn to_params(&self) -> ModelParams {
        ModelParams {
            format_version: CHECKPOINT_FORMAT_VERSION,
            architecture: self.arch.clone(),
            layer_shapes: self.layer_shapes(),
            weights: self
                .params_flat()
                .iter()
                .map(|w| w.as_f64() as f32)
                .collect(),
            rng_seed: self.rng_seed,
            training_meta: self.training_meta.clone(),
        }
    }

    /// Rebuild a runtime model from serialized parameters.
    pub fn from_params(params: &ModelParams) -> Result<Model<F>> {
        params.validate()?;
        let mut model = build_architecture::<F>(&params.architecture, params.rng_seed)?;
        let flat: Vec<F> = params.weights.iter().map(|w| F::from_f64(*w as f64)).collect();
        model.set_params_flat(&flat)?;
        model.training_meta = params.training_meta.clone();
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    fn tiny_vit() -> ArchitectureConfig {
        ArchitectureConfig {
            kind: ArchKind::Vit,
            input_shape: vec![32, 32, 3],
            num_classes: 2,
            mlp: MlpConfig::default(),
            cnn: CnnConfig::default(),
            vit: VitConfig {
                patch: 16,
                dim: 16,
                layers: 2,
                heads: 4,
                mlp_hidden: 32,
                dropout: 0.1,
            },
        }
    }

    #[test]
    fn cnn_output_shape_contract() {
        let arch = ArchitectureConfig {
            kind: ArchKind::Cnn,
            input_shape: vec![128, 128, 3],
            num_classes: 2,
            mlp: MlpConfig::default(),
            cnn: CnnConfig::default(),
            vit: VitConfig::default(),
        };
        let model = build_architecture::<f32>(&arch, 7).unwrap();
        let x = ArrayD::<f32>::zeros(IxDyn(&[1, 128, 128, 3]));
        let p = model.predict_batch(&x).unwrap();
        assert_eq!(p.shape(), &[1, 2]);
    }

    #[test]
    fn vit_patch_count() {
        // 128x128 input with 16x16 patches -> 64 tokens.
        let arch = ArchitectureConfig {
            kind: ArchKind::Vit,
            input_shape: vec![128, 128, 3],
            num_classes: 2,
            mlp: MlpConfig::default(),
            cnn: CnnConfig::default(),
            vit: VitConfig::default(),
        };
        let model = build_architecture::<f32>(&arch, 1).unwrap();
        let pos = model
            .layers
            .iter()
            .find_map(|l| match l {
                Layer::PosEmbed(p) => Some(p.pos.shape()[0]),
                _ => None,
            })
            .unwrap();
        assert_eq!(pos, 64);
    }

    #[test]
    fn ann_param_count_matches_analytic_sum() {
        let arch = ArchitectureConfig {
            kind: ArchKind::Ann,
            input_shape: vec![64, 2],
            num_classes: 2,
            mlp: MlpConfig {
                hidden: vec![32, 16],
            },
            cnn: CnnConfig::default(),
            vit: VitConfig::default(),
        };
        let model = build_architecture::<f32>(&arch, 3).unwrap();
        // 128*32+32 + 32*16+16 + 16*2+2
        let expected = 128 * 32 + 32 + 32 * 16 + 16 + 16 * 2 + 2;
        assert_eq!(model.param_count(), expected);
        let shapes_total: usize = model
            .layer_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum();
        assert_eq!(shapes_total, expected);
    }

    #[test]
    fn fresh_model_predicts_near_uniform() {
        let model = build_architecture::<f32>(&tiny_vit(), 11).unwrap();
        let x = ArrayD::<f32>::from_shape_fn(IxDyn(&[32, 32, 3]), |ix| {
            ((ix[0] * 7 + ix[1] * 3 + ix[2]) % 13) as f32 / 13.0
        });
        let p = model.forward_one(&x).unwrap();
        p.validate().unwrap();
        assert!((p.probs[0] - 0.5).abs() < 0.2, "probs {:?}", p.probs);
    }

    #[test]
    fn params_round_trip_bitwise() {
        let model = build_architecture::<f32>(&tiny_vit(), 21).unwrap();
        let params = model.to_params();
        params.validate().unwrap();
        let back = Model::<f32>::from_params(&params).unwrap();
        assert_eq!(model.params_flat(), back.params_flat());
        // And forward agrees bitwise.
        let x = ArrayD::<f32>::from_elem(IxDyn(&[2, 32, 32, 3]), 0.25);
        assert_eq!(
            model.predict_batch(&x).unwrap(),
            back.predict_batch(&x).unwrap()
        );
    }

    #[test]
    fn shape_mismatch_rejected() {
        let model = build_architecture::<f32>(&tiny_vit(), 5).unwrap();
        let x = ArrayD::<f32>::zeros(IxDyn(&[1, 16, 16, 3]));
        assert!(model.predict_batch(&x).is_err());
    }
}
