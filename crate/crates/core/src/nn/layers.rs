//! Layer implementations with explicit forward/backward pairs.
//!
//! Layout conventions: images are NHWC, token sequences are (N, T, D).
//! Convolutions are 3x3, stride 1, zero-padded ("same"); pooling is 2x2.
//! Each layer flattens its parameters in a fixed order so the whole model
//! serializes as one f32 vector.

use super::Dtype;
use crate::error::{Error, Result};
use ndarray::{Array1, Array2, ArrayD, Axis, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Per-layer state captured during forward and consumed by backward.
#[derive(Debug, Clone)]
pub struct LayerCache<F: Dtype> {
    tensors: Vec<ArrayD<F>>,
    indices: Vec<Vec<u32>>,
    shapes: Vec<Vec<usize>>,
}

impl<F: Dtype> Default for LayerCache<F> {
    fn default() -> Self {
        Self {
            tensors: Vec::new(),
            indices: Vec::new(),
            shapes: Vec::new(),
        }
    }
}

/// Execution context for a forward pass.
pub struct ForwardCtx<'a> {
    pub train: bool,
    pub rng: Option<&'a mut ChaCha8Rng>,
}

impl ForwardCtx<'_> {
    pub fn inference() -> ForwardCtx<'static> {
        ForwardCtx {
            train: false,
            rng: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dense<F: Dtype> {
    pub w: Array2<F>,
    pub b: Array1<F>,
}

#[derive(Debug, Clone)]
pub struct Conv2d<F: Dtype> {
    /// Kernel as (kh*kw*cin, cout); kh = kw = 3.
    pub w: Array2<F>,
    pub b: Array1<F>,
    pub cin: usize,
    pub cout: usize,
}

#[derive(Debug, Clone)]
pub struct PatchEmbed<F: Dtype> {
    /// Projection as (patch*patch*cin, dim).
    pub w: Array2<F>,
    pub b: Array1<F>,
    pub patch: usize,
    pub cin: usize,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct PosEmbed<F: Dtype> {
    pub pos: Array2<F>,
}

#[derive(Debug, Clone)]
pub struct LayerNorm<F: Dtype> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
}

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct TransformerBlock<F: Dtype> {
    pub ln1: LayerNorm<F>,
    pub wq: Array2<F>,
    pub bq: Array1<F>,
    pub wk: Array2<F>,
    pub bk: Array1<F>,
    pub wv: Array2<F>,
    pub bv: Array1<F>,
    pub wo: Array2<F>,
    pub bo: Array1<F>,
    pub ln2: LayerNorm<F>,
    pub w1: Array2<F>,
    pub b1: Array1<F>,
    pub w2: Array2<F>,
    pub b2: Array1<F>,
    pub heads: usize,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub enum Layer<F: Dtype> {
    Flatten,
    Dense(Dense<F>),
    Relu,
    Gelu,
    Conv2d(Conv2d<F>),
    MaxPool2,
    PatchEmbed(PatchEmbed<F>),
    PosEmbed(PosEmbed<F>),
    TransformerBlock(Box<TransformerBlock<F>>),
    LayerNorm(LayerNorm<F>),
    Dropout(f64),
}

fn as2<F: Dtype>(x: &ArrayD<F>, rows: usize) -> Result<Array2<F>> {
    let cols = x.len() / rows;
    x.to_shape((rows, cols))
        .map(|v| v.to_owned())
        .map_err(|e| Error::ShapeMismatch(e.to_string()))
}

/// Row-wise softmax in place.
fn softmax_rows_inplace<F: Dtype>(m: &mut Array2<F>) {
    for mut row in m.rows_mut() {
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        row.mapv_inplace(|z| (z - max).exp());
        let sum = row.iter().cloned().sum::<F>();
        row.mapv_inplace(|e| e / sum);
    }
}

const GELU_A: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_B: f64 = 0.044715;

fn gelu<F: Dtype>(x: F) -> F {
    let a = F::from_f64(GELU_A);
    let b = F::from_f64(GELU_B);
    let half = F::from_f64(0.5);
    let t = (a * (x + b * x * x * x)).tanh();
    half * x * (F::one() + t)
}

fn gelu_grad<F: Dtype>(x: F) -> F {
    let a = F::from_f64(GELU_A);
    let b = F::from_f64(GELU_B);
    let half = F::from_f64(0.5);
    let three = F::from_f64(3.0);
    let t = (a * (x + b * x * x * x)).tanh();
    let sech2 = F::one() - t * t;
    half * (F::one() + t) + half * x * sech2 * a * (F::one() + three * b * x * x)
}

impl<F: Dtype> Layer<F> {
    /// Forward pass; returns the output and a cache for backward.
    pub fn forward(
        &self,
        x: &ArrayD<F>,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<(ArrayD<F>, LayerCache<F>)> {
        let mut cache = LayerCache::default();
        let y = match self {
            Layer::Flatten => {
                let n = x.shape()[0];
                cache.shapes.push(x.shape().to_vec());
                as2(x, n)?.into_dyn()
            }
            Layer::Dense(d) => {
                let n = x.shape()[0];
                let x2 = as2(x, n)?;
                if x2.shape()[1] != d.w.shape()[0] {
                    return Err(Error::ShapeMismatch(format!(
                        "dense expects {} features, got {}",
                        d.w.shape()[0],
                        x2.shape()[1]
                    )));
                }
                let y = x2.dot(&d.w) + &d.b;
                cache.tensors.push(x2.into_dyn());
                y.into_dyn()
            }
            Layer::Relu => {
                cache.tensors.push(x.clone());
                x.mapv(|v| v.max(F::zero()))
            }
            Layer::Gelu => {
                cache.tensors.push(x.clone());
                x.mapv(gelu)
            }
            Layer::Conv2d(c) => {
                let (y, cols) = conv_forward(c, x)?;
                cache.tensors.push(cols.into_dyn());
                cache.shapes.push(x.shape().to_vec());
                y
            }
            Layer::MaxPool2 => {
                let (y, idx) = maxpool_forward(x)?;
                cache.indices.push(idx);
                cache.shapes.push(x.shape().to_vec());
                y
            }
            Layer::PatchEmbed(p) => {
                let (y, patches) = patch_forward(p, x)?;
                cache.tensors.push(patches.into_dyn());
                y
            }
            Layer::PosEmbed(p) => {
                let shape = x.shape();
                if shape.len() != 3 || shape[1] != p.pos.shape()[0] || shape[2] != p.pos.shape()[1]
                {
                    return Err(Error::ShapeMismatch(format!(
                        "pos-embed {:?} vs input {:?}",
                        p.pos.shape(),
                        shape
                    )));
                }
                let mut y = x.clone();
                let pos_dyn = p.pos.view().into_dyn();
                for mut item in y.axis_iter_mut(Axis(0)) {
                    ndarray::Zip::from(&mut item)
                        .and(&pos_dyn)
                        .for_each(|a, &b| *a = *a + b);
                }
                y
            }
            Layer::TransformerBlock(b) => return block_forward(b, x, ctx),
            Layer::LayerNorm(ln) => {
                let (y, c) = layernorm_forward(ln, x)?;
                cache = c;
                y
            }
            Layer::Dropout(rate) => {
                if ctx.train && *rate > 0.0 {
                    let rng = ctx.rng.as_mut().ok_or_else(|| {
                        Error::InvalidParams("dropout in train mode needs an RNG".into())
                    })?;
                    let keep = 1.0 - rate;
                    let scale = F::from_f64(1.0 / keep);
                    let mask =
                        x.map(|_| {
                            if rng.gen::<f64>() < keep {
                                scale
                            } else {
                                F::zero()
                            }
                        });
                    cache.tensors.push(mask.clone());
                    x * &mask
                } else {
                    x.clone()
                }
            }
        };
        Ok((y, cache))
    }

    /// Backward pass: gradient w.r.t. the input plus this layer's parameter
    /// gradients flattened in `append_params` order.
    pub fn backward(
        &self,
        grad_out: &ArrayD<F>,
        cache: &LayerCache<F>,
    ) -> Result<(ArrayD<F>, Vec<F>)> {
        match self {
            Layer::Flatten => {
                let gx = grad_out
                    .to_shape(IxDyn(&cache.shapes[0]))
                    .map_err(|e| Error::ShapeMismatch(e.to_string()))?
                    .to_owned();
                Ok((gx, vec![]))
            }
            Layer::Dense(d) => {
                let x2 = cache.tensors[0]
                    .view()
                    .into_dimensionality::<ndarray::Ix2>()
                    .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
                let n = grad_out.shape()[0];
                let gy = as2(grad_out, n)?;
                let gw = x2.t().dot(&gy);
                let gb = gy.sum_axis(Axis(0));
                let gx = gy.dot(&d.w.t());
                let mut grads = Vec::with_capacity(gw.len() + gb.len());
                grads.extend(gw.iter().cloned());
                grads.extend(gb.iter().cloned());
                Ok((gx.into_dyn(), grads))
            }
            Layer::Relu => {
                let x = &cache.tensors[0];
                let mut gx = grad_out.clone();
                ndarray::Zip::from(&mut gx).and(x).for_each(|g, &v| {
                    if v <= F::zero() {
                        *g = F::zero();
                    }
                });
                Ok((gx, vec![]))
            }
            Layer::Gelu => {
                let x = &cache.tensors[0];
                let mut gx = grad_out.clone();
                ndarray::Zip::from(&mut gx).and(x).for_each(|g, &v| {
                    *g = *g * gelu_grad(v);
                });
                Ok((gx, vec![]))
            }
            Layer::Conv2d(c) => conv_backward(c, grad_out, cache),
            Layer::MaxPool2 => {
                let idx = &cache.indices[0];
                let mut gx = ArrayD::zeros(IxDyn(&cache.shapes[0]));
                let gxs = gx.as_slice_mut().unwrap();
                for (g, &i) in grad_out.iter().zip(idx.iter()) {
                    gxs[i as usize] = gxs[i as usize] + *g;
                }
                Ok((gx, vec![]))
            }
            Layer::PatchEmbed(p) => patch_backward(p, grad_out, cache),
            Layer::PosEmbed(_) => {
                let gpos = grad_out.sum_axis(Axis(0));
                Ok((grad_out.clone(), gpos.iter().cloned().collect()))
            }
            Layer::TransformerBlock(b) => block_backward(b, grad_out, cache),
            Layer::LayerNorm(ln) => layernorm_backward(ln, grad_out, cache),
            Layer::Dropout(rate) => {
                if cache.tensors.is_empty() || *rate == 0.0 {
                    Ok((grad_out.clone(), vec![]))
                } else {
                    Ok((grad_out * &cache.tensors[0], vec![]))
                }
            }
        }
    }

    pub fn append_params(&self, out: &mut Vec<F>) {
        match self {
            Layer::Dense(d) => {
                out.extend(d.w.iter().cloned());
                out.extend(d.b.iter().cloned());
            }
            Layer::Conv2d(c) => {
                out.extend(c.w.iter().cloned());
                out.extend(c.b.iter().cloned());
            }
            Layer::PatchEmbed(p) => {
                out.extend(p.w.iter().cloned());
                out.extend(p.b.iter().cloned());
            }
            Layer::PosEmbed(p) => out.extend(p.pos.iter().cloned()),
            Layer::LayerNorm(ln) => {
                out.extend(ln.gamma.iter().cloned());
                out.extend(ln.beta.iter().cloned());
            }
            Layer::TransformerBlock(b) => {
                out.extend(b.ln1.gamma.iter().cloned());
                out.extend(b.ln1.beta.iter().cloned());
                for (w, bias) in [(&b.wq, &b.bq), (&b.wk, &b.bk), (&b.wv, &b.bv), (&b.wo, &b.bo)] {
                    out.extend(w.iter().cloned());
                    out.extend(bias.iter().cloned());
                }
                out.extend(b.ln2.gamma.iter().cloned());
                out.extend(b.ln2.beta.iter().cloned());
                out.extend(b.w1.iter().cloned());
                out.extend(b.b1.iter().cloned());
                out.extend(b.w2.iter().cloned());
                out.extend(b.b2.iter().cloned());
            }
            _ => {}
        }
    }

    pub fn read_params(&mut self, src: &[F], pos: &mut usize) {
        fn take2<F: Dtype>(dst: &mut Array2<F>, src: &[F], pos: &mut usize) {
            for v in dst.iter_mut() {
                *v = src[*pos];
                *pos += 1;
            }
        }
        fn take1<F: Dtype>(dst: &mut Array1<F>, src: &[F], pos: &mut usize) {
            for v in dst.iter_mut() {
                *v = src[*pos];
                *pos += 1;
            }
        }
        match self {
            Layer::Dense(d) => {
                take2(&mut d.w, src, pos);
                take1(&mut d.b, src, pos);
            }
            Layer::Conv2d(c) => {
                take2(&mut c.w, src, pos);
                take1(&mut c.b, src, pos);
            }
            Layer::PatchEmbed(p) => {
                take2(&mut p.w, src, pos);
                take1(&mut p.b, src, pos);
            }
            Layer::PosEmbed(p) => take2(&mut p.pos, src, pos),
            Layer::LayerNorm(ln) => {
                take1(&mut ln.gamma, src, pos);
                take1(&mut ln.beta, src, pos);
            }
            Layer::TransformerBlock(b) => {
                take1(&mut b.ln1.gamma, src, pos);
                take1(&mut b.ln1.beta, src, pos);
                take2(&mut b.wq, src, pos);
                take1(&mut b.bq, src, pos);
                take2(&mut b.wk, src, pos);
                take1(&mut b.bk, src, pos);
                take2(&mut b.wv, src, pos);
                take1(&mut b.bv, src, pos);
                take2(&mut b.wo, src, pos);
                take1(&mut b.bo, src, pos);
                take1(&mut b.ln2.gamma, src, pos);
                take1(&mut b.ln2.beta, src, pos);
                take2(&mut b.w1, src, pos);
                take1(&mut b.b1, src, pos);
                take2(&mut b.w2, src, pos);
                take1(&mut b.b2, src, pos);
            }
            _ => {}
        }
    }

    pub fn param_count(&self) -> usize {
        let mut v = Vec::new();
        self.append_params(&mut v);
        v.len()
    }

    /// (name, shape) pairs in `append_params` order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        match self {
            Layer::Dense(d) => vec![
                ("dense.w".into(), d.w.shape().to_vec()),
                ("dense.b".into(), d.b.shape().to_vec()),
            ],
            Layer::Conv2d(c) => vec![
                ("conv.w".into(), c.w.shape().to_vec()),
                ("conv.b".into(), c.b.shape().to_vec()),
            ],
            Layer::PatchEmbed(p) => vec![
                ("patch.w".into(), p.w.shape().to_vec()),
                ("patch.b".into(), p.b.shape().to_vec()),
            ],
            Layer::PosEmbed(p) => vec![("pos".into(), p.pos.shape().to_vec())],
            Layer::LayerNorm(ln) => vec![
                ("ln.gamma".into(), ln.gamma.shape().to_vec()),
                ("ln.beta".into(), ln.beta.shape().to_vec()),
            ],
            Layer::TransformerBlock(b) => {
                let mut v = vec![
                    ("block.ln1.gamma".into(), b.ln1.gamma.shape().to_vec()),
                    ("block.ln1.beta".into(), b.ln1.beta.shape().to_vec()),
                ];
                for name in ["q", "k", "v", "o"] {
                    v.push((format!("block.w{name}"), b.wq.shape().to_vec()));
                    v.push((format!("block.b{name}"), b.bq.shape().to_vec()));
                }
                v.push(("block.ln2.gamma".into(), b.ln2.gamma.shape().to_vec()));
                v.push(("block.ln2.beta".into(), b.ln2.beta.shape().to_vec()));
                v.push(("block.mlp.w1".into(), b.w1.shape().to_vec()));
                v.push(("block.mlp.b1".into(), b.b1.shape().to_vec()));
                v.push(("block.mlp.w2".into(), b.w2.shape().to_vec()));
                v.push(("block.mlp.b2".into(), b.b2.shape().to_vec()));
                v
            }
            _ => vec![],
        }
    }
}

// --- convolution -----------------------------------------------------------

fn conv_forward<F: Dtype>(c: &Conv2d<F>, x: &ArrayD<F>) -> Result<(ArrayD<F>, Array2<F>)> {
    let s = x.shape();
    if s.len() != 4 || s[3] != c.cin {
        return Err(Error::ShapeMismatch(format!(
            "conv expects NHWC with C={}, got {:?}",
            c.cin, s
        )));
    }
    let (n, h, w) = (s[0], s[1], s[2]);
    let k = 9 * c.cin;
    let xs = x.as_slice().ok_or_else(|| Error::ShapeMismatch("non-contiguous input".into()))?;
    let mut cols = Array2::<F>::zeros((n * h * w, k));
    {
        let cs = cols.as_slice_mut().unwrap();
        for ni in 0..n {
            for i in 0..h {
                for j in 0..w {
                    let row = ((ni * h + i) * w + j) * k;
                    let mut col = 0usize;
                    for di in 0..3usize {
                        let ii = i as isize + di as isize - 1;
                        for dj in 0..3usize {
                            let jj = j as isize + dj as isize - 1;
                            if ii >= 0 && ii < h as isize && jj >= 0 && jj < w as isize {
                                let src = ((ni * h + ii as usize) * w + jj as usize) * c.cin;
                                cs[row + col..row + col + c.cin]
                                    .copy_from_slice(&xs[src..src + c.cin]);
                            }
                            col += c.cin;
                        }
                    }
                }
            }
        }
    }
    let y2 = cols.dot(&c.w) + &c.b;
    let y = y2
        .into_shape_with_order((n, h, w, c.cout))
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?
        .into_dyn();
    Ok((y, cols))
}

fn conv_backward<F: Dtype>(
    c: &Conv2d<F>,
    grad_out: &ArrayD<F>,
    cache: &LayerCache<F>,
) -> Result<(ArrayD<F>, Vec<F>)> {
    let cols = cache.tensors[0]
        .view()
        .into_dimensionality::<ndarray::Ix2>()
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let in_shape = cache.shapes[0].clone();
    let (n, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let gy2 = as2(grad_out, n * h * w)?;
    let gw = cols.t().dot(&gy2);
    let gb = gy2.sum_axis(Axis(0));
    let gcols = gy2.dot(&c.w.t());

    let mut gx = ArrayD::<F>::zeros(IxDyn(&in_shape));
    {
        let gxs = gx.as_slice_mut().unwrap();
        let gcs = gcols.as_slice().unwrap();
        let k = 9 * c.cin;
        for ni in 0..n {
            for i in 0..h {
                for j in 0..w {
                    let row = ((ni * h + i) * w + j) * k;
                    let mut col = 0usize;
                    for di in 0..3usize {
                        let ii = i as isize + di as isize - 1;
                        for dj in 0..3usize {
                            let jj = j as isize + dj as isize - 1;
                            if ii >= 0 && ii < h as isize && jj >= 0 && jj < w as isize {
                                let dst = ((ni * h + ii as usize) * w + jj as usize) * c.cin;
                                for ch in 0..c.cin {
                                    gxs[dst + ch] = gxs[dst + ch] + gcs[row + col + ch];
                                }
                            }
                            col += c.cin;
                        }
                    }
                }
            }
        }
    }
    let mut grads = Vec::with_capacity(gw.len() + gb.len());
    grads.extend(gw.iter().cloned());
    grads.extend(gb.iter().cloned());
    Ok((gx, grads))
}

// --- max pooling -----------------------------------------------------------

fn maxpool_forward<F: Dtype>(x: &ArrayD<F>) -> Result<(ArrayD<F>, Vec<u32>)> {
    let s = x.shape();
    if s.len() != 4 || s[1] % 2 != 0 || s[2] % 2 != 0 {
        return Err(Error::ShapeMismatch(format!(
            "maxpool expects NHWC with even H,W, got {s:?}"
        )));
    }
    let (n, h, w, cch) = (s[0], s[1], s[2], s[3]);
    let (oh, ow) = (h / 2, w / 2);
    let xs = x.as_slice().unwrap();
    let mut y = ArrayD::<F>::zeros(IxDyn(&[n, oh, ow, cch]));
    let mut idx = vec![0u32; n * oh * ow * cch];
    {
        let ys = y.as_slice_mut().unwrap();
        for ni in 0..n {
            for i in 0..oh {
                for j in 0..ow {
                    for ch in 0..cch {
                        let mut best = F::neg_infinity();
                        let mut best_at = 0usize;
                        for di in 0..2usize {
                            for dj in 0..2usize {
                                let src = ((ni * h + 2 * i + di) * w + 2 * j + dj) * cch + ch;
                                if xs[src] > best {
                                    best = xs[src];
                                    best_at = src;
                                }
                            }
                        }
                        let dst = ((ni * oh + i) * ow + j) * cch + ch;
                        ys[dst] = best;
                        idx[dst] = best_at as u32;
                    }
                }
            }
        }
    }
    Ok((y, idx))
}

// --- patch embedding --------------------------------------------------------

fn patch_forward<F: Dtype>(p: &PatchEmbed<F>, x: &ArrayD<F>) -> Result<(ArrayD<F>, Array2<F>)> {
    let s = x.shape();
    if s.len() != 4 || s[3] != p.cin || s[1] % p.patch != 0 || s[2] % p.patch != 0 {
        return Err(Error::ShapeMismatch(format!(
            "patch-embed expects NHWC divisible by {}, got {s:?}",
            p.patch
        )));
    }
    let (n, h, w) = (s[0], s[1], s[2]);
    let (gh, gw) = (h / p.patch, w / p.patch);
    let t = gh * gw;
    let k = p.patch * p.patch * p.cin;
    let xs = x.as_slice().unwrap();
    let mut patches = Array2::<F>::zeros((n * t, k));
    {
        let ps = patches.as_slice_mut().unwrap();
        for ni in 0..n {
            for pi in 0..gh {
                for pj in 0..gw {
                    let row = (ni * t + pi * gw + pj) * k;
                    let mut col = 0usize;
                    for di in 0..p.patch {
                        let src = ((ni * h + pi * p.patch + di) * w + pj * p.patch) * p.cin;
                        ps[row + col..row + col + p.patch * p.cin]
                            .copy_from_slice(&xs[src..src + p.patch * p.cin]);
                        col += p.patch * p.cin;
                    }
                }
            }
        }
    }
    let y2 = patches.dot(&p.w) + &p.b;
    let y = y2
        .into_shape_with_order((n, t, p.dim))
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?
        .into_dyn();
    Ok((y, patches))
}

fn patch_backward<F: Dtype>(
    p: &PatchEmbed<F>,
    grad_out: &ArrayD<F>,
    cache: &LayerCache<F>,
) -> Result<(ArrayD<F>, Vec<F>)> {
    let patches = cache.tensors[0]
        .view()
        .into_dimensionality::<ndarray::Ix2>()
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let s = grad_out.shape();
    let (n, t) = (s[0], s[1]);
    let gy2 = as2(grad_out, n * t)?;
    let gw = patches.t().dot(&gy2);
    let gb = gy2.sum_axis(Axis(0));
    let gpatches = gy2.dot(&p.w.t());

    // Patches are disjoint, so scatter is a plain write.
    let k = p.patch * p.patch * p.cin;
    let gh_gw = t; // grid cells
    let grid = (gh_gw as f64).sqrt() as usize;
    let (gh, gw_cells) = if grid * grid == t {
        (grid, grid)
    } else {
        return Err(Error::ShapeMismatch("non-square patch grid".into()));
    };
    let h = gh * p.patch;
    let w = gw_cells * p.patch;
    let mut gx = ArrayD::<F>::zeros(IxDyn(&[n, h, w, p.cin]));
    {
        let gxs = gx.as_slice_mut().unwrap();
        let gps = gpatches.as_slice().unwrap();
        for ni in 0..n {
            for pi in 0..gh {
                for pj in 0..gw_cells {
                    let row = (ni * t + pi * gw_cells + pj) * k;
                    let mut col = 0usize;
                    for di in 0..p.patch {
                        let dst = ((ni * h + pi * p.patch + di) * w + pj * p.patch) * p.cin;
                        gxs[dst..dst + p.patch * p.cin]
                            .copy_from_slice(&gps[row + col..row + col + p.patch * p.cin]);
                        col += p.patch * p.cin;
                    }
                }
            }
        }
    }
    let mut grads = Vec::with_capacity(gw.len() + gb.len());
    grads.extend(gw.iter().cloned());
    grads.extend(gb.iter().cloned());
    Ok((gx, grads))
}

// --- layer norm --------------------------------------------------------------

fn layernorm_forward<F: Dtype>(
    ln: &LayerNorm<F>,
    x: &ArrayD<F>,
) -> Result<(ArrayD<F>, LayerCache<F>)> {
    let d = *x.shape().last().unwrap();
    if d != ln.gamma.len() {
        return Err(Error::ShapeMismatch(format!(
            "layernorm dim {} vs input {d}",
            ln.gamma.len()
        )));
    }
    let rows = x.len() / d;
    let x2 = as2(x, rows)?;
    let eps = F::from_f64(LN_EPS);
    let mut xhat = Array2::<F>::zeros((rows, d));
    let mut invstd = Array1::<F>::zeros(rows);
    for (r, row) in x2.rows().into_iter().enumerate() {
        let mean = row.iter().cloned().sum::<F>() / F::from_f64(d as f64);
        let var = row
            .iter()
            .map(|v| (*v - mean) * (*v - mean))
            .sum::<F>()
            / F::from_f64(d as f64);
        let is = F::one() / (var + eps).sqrt();
        invstd[r] = is;
        for (c, v) in row.iter().enumerate() {
            xhat[(r, c)] = (*v - mean) * is;
        }
    }
    let mut y = xhat.clone();
    for mut row in y.rows_mut() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = *v * ln.gamma[c] + ln.beta[c];
        }
    }
    let y = y
        .into_shape_with_order(IxDyn(x.shape()))
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let mut cache = LayerCache::default();
    cache.tensors.push(xhat.into_dyn());
    cache.tensors.push(invstd.into_dyn());
    Ok((y, cache))
}

fn layernorm_backward<F: Dtype>(
    ln: &LayerNorm<F>,
    grad_out: &ArrayD<F>,
    cache: &LayerCache<F>,
) -> Result<(ArrayD<F>, Vec<F>)> {
    let d = ln.gamma.len();
    let rows = grad_out.len() / d;
    let gy = as2(grad_out, rows)?;
    let xhat = cache.tensors[0]
        .view()
        .into_dimensionality::<ndarray::Ix2>()
        .unwrap();
    let invstd = cache.tensors[1]
        .view()
        .into_dimensionality::<ndarray::Ix1>()
        .unwrap();

    let mut ggamma = Array1::<F>::zeros(d);
    let mut gbeta = Array1::<F>::zeros(d);
    for r in 0..rows {
        for c in 0..d {
            ggamma[c] = ggamma[c] + gy[(r, c)] * xhat[(r, c)];
            gbeta[c] = gbeta[c] + gy[(r, c)];
        }
    }
    let dn = F::from_f64(d as f64);
    let mut gx = Array2::<F>::zeros((rows, d));
    for r in 0..rows {
        let mut mean_dxhat = F::zero();
        let mut mean_dxhat_xhat = F::zero();
        for c in 0..d {
            let dxhat = gy[(r, c)] * ln.gamma[c];
            mean_dxhat = mean_dxhat + dxhat;
            mean_dxhat_xhat = mean_dxhat_xhat + dxhat * xhat[(r, c)];
        }
        mean_dxhat = mean_dxhat / dn;
        mean_dxhat_xhat = mean_dxhat_xhat / dn;
        for c in 0..d {
            let dxhat = gy[(r, c)] * ln.gamma[c];
            gx[(r, c)] = invstd[r] * (dxhat - mean_dxhat - xhat[(r, c)] * mean_dxhat_xhat);
        }
    }
    let gx = gx
        .into_shape_with_order(IxDyn(grad_out.shape()))
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let mut grads = Vec::with_capacity(2 * d);
    grads.extend(ggamma.iter().cloned());
    grads.extend(gbeta.iter().cloned());
    Ok((gx, grads))
}

// --- transformer block --------------------------------------------------------

fn block_forward<F: Dtype>(
    b: &TransformerBlock<F>,
    x: &ArrayD<F>,
    ctx: &mut ForwardCtx<'_>,
) -> Result<(ArrayD<F>, LayerCache<F>)> {
    let s = x.shape();
    if s.len() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "transformer block expects (N,T,D), got {s:?}"
        )));
    }
    let (n, t, d) = (s[0], s[1], s[2]);
    let dh = d / b.heads;
    if dh * b.heads != d {
        return Err(Error::ShapeMismatch("heads must divide dim".into()));
    }
    let mut cache = LayerCache::default();

    // a = LN1(x)
    let (a, ln1_cache) = layernorm_forward(&b.ln1, x)?;
    let a2 = as2(&a, n * t)?;
    let q = a2.dot(&b.wq) + &b.bq;
    let k = a2.dot(&b.wk) + &b.bk;
    let v = a2.dot(&b.wv) + &b.bv;

    let scale = F::from_f64(1.0 / (dh as f64).sqrt());
    let use_dropout = ctx.train && b.dropout > 0.0;
    let mut attn_pre = Array2::<F>::zeros((n * b.heads * t, t));
    let mut attn_mask = if use_dropout {
        Array2::<F>::zeros((n * b.heads * t, t))
    } else {
        Array2::<F>::zeros((0, 0))
    };
    let mut o = Array2::<F>::zeros((n * t, d));
    for ni in 0..n {
        for h in 0..b.heads {
            // Per-head views as (T, dh) matrices.
            let mut qh = Array2::<F>::zeros((t, dh));
            let mut kh = Array2::<F>::zeros((t, dh));
            let mut vh = Array2::<F>::zeros((t, dh));
            for ti in 0..t {
                for e in 0..dh {
                    qh[(ti, e)] = q[(ni * t + ti, h * dh + e)];
                    kh[(ti, e)] = k[(ni * t + ti, h * dh + e)];
                    vh[(ti, e)] = v[(ni * t + ti, h * dh + e)];
                }
            }
            let mut scores = qh.dot(&kh.t());
            scores.mapv_inplace(|z| z * scale);
            softmax_rows_inplace(&mut scores);
            let base = (ni * b.heads + h) * t;
            for ti in 0..t {
                for tj in 0..t {
                    attn_pre[(base + ti, tj)] = scores[(ti, tj)];
                }
            }
            // attention-weight dropout
            if use_dropout {
                let rng = ctx.rng.as_mut().ok_or_else(|| {
                    Error::InvalidParams("dropout in train mode needs an RNG".into())
                })?;
                let keep = 1.0 - b.dropout;
                let sc = F::from_f64(1.0 / keep);
                for ti in 0..t {
                    for tj in 0..t {
                        let m = if rng.gen::<f64>() < keep { sc } else { F::zero() };
                        attn_mask[(base + ti, tj)] = m;
                        scores[(ti, tj)] = scores[(ti, tj)] * m;
                    }
                }
            }
            let oh = scores.dot(&vh);
            for ti in 0..t {
                for e in 0..dh {
                    o[(ni * t + ti, h * dh + e)] = oh[(ti, e)];
                }
            }
        }
    }
    let attn_out = o.dot(&b.wo) + &b.bo;
    // x1 = x + attn
    let x1 = {
        let x2v = as2(x, n * t)?;
        &x2v + &attn_out
    };

    // m = MLP(LN2(x1))
    let x1d = x1
        .clone()
        .into_shape_with_order(IxDyn(&[n, t, d]))
        .unwrap();
    let (bnorm, ln2_cache) = layernorm_forward(&b.ln2, &x1d)?;
    let b2 = as2(&bnorm, n * t)?;
    let h1 = b2.dot(&b.w1) + &b.b1;
    let h1g = h1.mapv(gelu);
    // MLP dropout
    let (h1g_dropped, mlp_mask) = if ctx.train && b.dropout > 0.0 {
        let rng = ctx.rng.as_mut().unwrap();
        let keep = 1.0 - b.dropout;
        let sc = F::from_f64(1.0 / keep);
        let mask = h1g.map(|_| {
            if rng.gen::<f64>() < keep {
                sc
            } else {
                F::zero()
            }
        });
        (&h1g * &mask, Some(mask))
    } else {
        (h1g.clone(), None)
    };
    let m = h1g_dropped.dot(&b.w2) + &b.b2;
    let y = &x1 + &m;
    let y = y.into_shape_with_order(IxDyn(&[n, t, d])).unwrap();

    // Fixed cache layout; dropout masks are empty arrays when unused:
    // 0 ln1.xhat, 1 ln1.invstd, 2 a2, 3 q, 4 k, 5 v, 6 attn_pre,
    // 7 attn_mask, 8 o, 9 ln2.xhat, 10 ln2.invstd, 11 b2, 12 h1,
    // 13 h1g_dropped, 14 mlp_mask
    cache.tensors.push(ln1_cache.tensors[0].clone());
    cache.tensors.push(ln1_cache.tensors[1].clone());
    cache.tensors.push(a2.into_dyn());
    cache.tensors.push(q.into_dyn());
    cache.tensors.push(k.into_dyn());
    cache.tensors.push(v.into_dyn());
    cache.tensors.push(attn_pre.into_dyn());
    cache.tensors.push(attn_mask.into_dyn());
    cache.tensors.push(o.into_dyn());
    cache.tensors.push(ln2_cache.tensors[0].clone());
    cache.tensors.push(ln2_cache.tensors[1].clone());
    cache.tensors.push(b2.into_dyn());
    cache.tensors.push(h1.into_dyn());
    cache.tensors.push(h1g_dropped.into_dyn());
    cache.tensors.push(match mlp_mask {
        Some(mask) => mask.into_dyn(),
        None => Array2::<F>::zeros((0, 0)).into_dyn(),
    });
    Ok((y, cache))
}

fn block_backward<F: Dtype>(
    b: &TransformerBlock<F>,
    grad_out: &ArrayD<F>,
    cache: &LayerCache<F>,
) -> Result<(ArrayD<F>, Vec<F>)> {
    let s = grad_out.shape();
    let (n, t, d) = (s[0], s[1], s[2]);
    let dh = d / b.heads;
    let rows = n * t;

    let t2 = |i: usize| -> Array2<F> {
        cache.tensors[i]
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap()
            .to_owned()
    };
    let a2 = t2(2);
    let q = t2(3);
    let k = t2(4);
    let v = t2(5);
    let attn_pre = t2(6);
    let attn_mask = t2(7);
    let o = t2(8);
    let b2m = t2(11);
    let h1 = t2(12);
    let h1g_dropped = t2(13);
    let mlp_mask = t2(14);
    let has_attn_mask = attn_mask.len() > 0;
    let has_mlp_mask = mlp_mask.len() > 0;

    let gy = as2(grad_out, rows)?;

    // y = x1 + m: both receive gy.
    // m = h1g_dropped . w2 + b2
    let gw2 = h1g_dropped.t().dot(&gy);
    let gb2v = gy.sum_axis(Axis(0));
    let mut gh1g = gy.dot(&b.w2.t());
    if has_mlp_mask {
        gh1g = &gh1g * &mlp_mask;
    }
    let mut gh1 = gh1g;
    ndarray::Zip::from(&mut gh1).and(&h1).for_each(|g, &x| {
        *g = *g * gelu_grad(x);
    });
    let gw1 = b2m.t().dot(&gh1);
    let gb1v = gh1.sum_axis(Axis(0));
    let gb2in = gh1.dot(&b.w1.t()); // gradient into LN2 output

    // LN2 backward
    let ln2_cache = LayerCache {
        tensors: vec![cache.tensors[9].clone(), cache.tensors[10].clone()],
        indices: vec![],
        shapes: vec![],
    };
    let (gx1_from_ln2, ln2_grads) =
        layernorm_backward(&b.ln2, &gb2in.into_dyn(), &ln2_cache)?;
    let gx1_from_ln2 = as2(&gx1_from_ln2, rows)?;

    // Total gradient into x1.
    let gx1 = &gy + &gx1_from_ln2;

    // attn_out = o . wo + bo; x1 = x + attn_out
    let gwo = o.t().dot(&gx1);
    let gbo = gx1.sum_axis(Axis(0));
    let go = gx1.dot(&b.wo.t());

    // Per-head attention backward.
    let scale = F::from_f64(1.0 / (dh as f64).sqrt());
    let mut gq = Array2::<F>::zeros((rows, d));
    let mut gk = Array2::<F>::zeros((rows, d));
    let mut gv = Array2::<F>::zeros((rows, d));
    for ni in 0..n {
        for h in 0..b.heads {
            let mut qh = Array2::<F>::zeros((t, dh));
            let mut kh = Array2::<F>::zeros((t, dh));
            let mut vh = Array2::<F>::zeros((t, dh));
            let mut goh = Array2::<F>::zeros((t, dh));
            let mut ah_pre = Array2::<F>::zeros((t, t));
            let mut ah_used = Array2::<F>::zeros((t, t));
            let base = (ni * b.heads + h) * t;
            for ti in 0..t {
                for e in 0..dh {
                    qh[(ti, e)] = q[(ni * t + ti, h * dh + e)];
                    kh[(ti, e)] = k[(ni * t + ti, h * dh + e)];
                    vh[(ti, e)] = v[(ni * t + ti, h * dh + e)];
                    goh[(ti, e)] = go[(ni * t + ti, h * dh + e)];
                }
                for tj in 0..t {
                    let a = attn_pre[(base + ti, tj)];
                    ah_pre[(ti, tj)] = a;
                    ah_used[(ti, tj)] = if has_attn_mask {
                        a * attn_mask[(base + ti, tj)]
                    } else {
                        a
                    };
                }
            }
            // o_h = a_used . v_h
            let mut gah = goh.dot(&vh.t());
            let gvh = ah_used.t().dot(&goh);
            // Undo dropout, then softmax backward against pre-dropout weights.
            if has_attn_mask {
                for ti in 0..t {
                    for tj in 0..t {
                        gah[(ti, tj)] = gah[(ti, tj)] * attn_mask[(base + ti, tj)];
                    }
                }
            }
            let mut gs = Array2::<F>::zeros((t, t));
            for ti in 0..t {
                let mut dot = F::zero();
                for tj in 0..t {
                    dot = dot + gah[(ti, tj)] * ah_pre[(ti, tj)];
                }
                for tj in 0..t {
                    gs[(ti, tj)] = ah_pre[(ti, tj)] * (gah[(ti, tj)] - dot);
                }
            }
            gs.mapv_inplace(|z| z * scale);
            let gqh = gs.dot(&kh);
            let gkh = gs.t().dot(&qh);
            for ti in 0..t {
                for e in 0..dh {
                    gq[(ni * t + ti, h * dh + e)] = gqh[(ti, e)];
                    gk[(ni * t + ti, h * dh + e)] = gkh[(ti, e)];
                    gv[(ni * t + ti, h * dh + e)] = gvh[(ti, e)];
                }
            }
        }
    }

    let gwq = a2.t().dot(&gq);
    let gbq = gq.sum_axis(Axis(0));
    let gwk = a2.t().dot(&gk);
    let gbk = gk.sum_axis(Axis(0));
    let gwv = a2.t().dot(&gv);
    let gbv = gv.sum_axis(Axis(0));
    let ga2 = gq.dot(&b.wq.t()) + gk.dot(&b.wk.t()) + gv.dot(&b.wv.t());

    // LN1 backward
    let ln1_cache = LayerCache {
        tensors: vec![cache.tensors[0].clone(), cache.tensors[1].clone()],
        indices: vec![],
        shapes: vec![],
    };
    let (gx_from_ln1, ln1_grads) = layernorm_backward(&b.ln1, &ga2.into_dyn(), &ln1_cache)?;
    let gx_from_ln1 = as2(&gx_from_ln1, rows)?;

    // x1 = x + attn_out: x also receives gx1 directly.
    let gx = &gx1 + &gx_from_ln1;
    let gx = gx.into_shape_with_order(IxDyn(&[n, t, d])).unwrap();

    // Assemble in append_params order.
    let mut grads = Vec::new();
    grads.extend(ln1_grads);
    for (w, bias) in [(gwq, gbq), (gwk, gbk), (gwv, gbv), (gwo, gbo)] {
        grads.extend(w.iter().cloned());
        grads.extend(bias.iter().cloned());
    }
    grads.extend(ln2_grads);
    grads.extend(gw1.iter().cloned());
    grads.extend(gb1v.iter().cloned());
    grads.extend(gw2.iter().cloned());
    grads.extend(gb2v.iter().cloned());
    Ok((gx, grads))
}
