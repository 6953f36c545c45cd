//! Softmax and categorical cross-entropy.

use super::Dtype;
use crate::error::{Error, Result};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// Numerically-stable softmax of one logit vector.
pub fn softmax<F: Dtype>(logits: ArrayView1<'_, F>) -> Array1<F> {
    let max = logits.iter().cloned().fold(F::neg_infinity(), F::max);
    let exps: Array1<F> = logits.map(|z| (*z - max).exp());
    let sum = exps.sum();
    exps / sum
}

/// Row-wise softmax of a logit matrix.
pub fn softmax_rows<F: Dtype>(logits: &Array2<F>) -> Array2<F> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        row.mapv_inplace(|z| (z - max).exp());
        let sum = row.iter().cloned().sum::<F>();
        row.mapv_inplace(|e| e / sum);
    }
    out
}

/// Categorical cross-entropy of one prediction against a one-hot label:
/// `-ln(pred[true])`, with the probability clamped at 1e-12.
pub fn cross_entropy<F: Dtype>(pred: ArrayView1<'_, F>, one_hot: ArrayView1<'_, F>) -> Result<F> {
    if pred.len() != one_hot.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} probs vs {} label entries",
            pred.len(),
            one_hot.len()
        )));
    }
    let mut ones = 0usize;
    let mut true_idx = 0usize;
    for (i, v) in one_hot.iter().enumerate() {
        if *v == F::one() {
            ones += 1;
            true_idx = i;
        } else if *v != F::zero() {
            return Err(Error::InvalidParams("label is not one-hot".into()));
        }
    }
    if ones != 1 {
        return Err(Error::InvalidParams("label is not one-hot".into()));
    }
    let clamp = F::from_f64(1e-12);
    Ok(-(pred[true_idx].max(clamp)).ln())
}

/// Mean cross-entropy over a batch of softmax outputs.
pub fn batch_cross_entropy<F: Dtype>(probs: &Array2<F>, labels: ArrayView2<'_, F>) -> Result<F> {
    let n = probs.shape()[0];
    let mut acc = F::zero();
    for i in 0..n {
        acc = acc + cross_entropy(probs.row(i), labels.row(i))?;
    }
    Ok(acc / F::from_f64(n as f64))
}

/// Gradient of mean batch cross-entropy with respect to the logits:
/// `(softmax - y) / N`.
pub fn softmax_ce_grad<F: Dtype>(probs: &Array2<F>, labels: ArrayView2<'_, F>) -> Array2<F> {
    let n = F::from_f64(probs.shape()[0] as f64);
    let mut grad = probs - &labels;
    grad.mapv_inplace(|g| g / n);
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let s = softmax::<f64>(array![3.2, 3.2].view());
        assert!((s[0] - 0.5).abs() < 1e-15);
        assert!((s[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn argmax_of_softmax_matches_argmax_of_logits() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let z: Array1<f64> = Array1::from_iter((0..6).map(|_| rng.gen_range(-30.0..30.0)));
            let s = softmax(z.view());
            let am_z = z
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            let am_s = s
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(am_z, am_s);
        }
    }

    #[test]
    fn softmax_invariant_to_positive_scaling_argmax() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let z: Array1<f64> = Array1::from_iter((0..5).map(|_| rng.gen_range(-5.0..5.0)));
            let k: f64 = rng.gen_range(0.1..50.0);
            let a = softmax(z.view());
            let b = softmax((&z * k).view());
            let am = |v: &Array1<f64>| {
                v.iter()
                    .enumerate()
                    .max_by(|x, y| x.1.partial_cmp(y.1).unwrap())
                    .unwrap()
                    .0
            };
            assert_eq!(am(&a), am(&b));
        }
    }

    #[test]
    fn cross_entropy_known_values() {
        // Perfect prediction: loss 0.
        let l = cross_entropy::<f64>(array![1.0, 0.0].view(), array![1.0, 0.0].view()).unwrap();
        assert!(l.abs() < 1e-12);
        // Uniform over 6 classes: ln 6.
        let u = 1.0 / 6.0;
        let l = cross_entropy::<f64>(
            array![u, u, u, u, u, u].view(),
            array![0.0, 0.0, 1.0, 0.0, 0.0, 0.0].view(),
        )
        .unwrap();
        assert!((l - 6f64.ln()).abs() < 1e-12, "{l}");
        // (0.9, 0.1) with true class 0: -ln 0.9.
        let l = cross_entropy::<f64>(array![0.9, 0.1].view(), array![1.0, 0.0].view()).unwrap();
        assert!((l - 0.10536051565782628).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_bad_labels() {
        assert!(cross_entropy::<f64>(array![0.5, 0.5].view(), array![0.5, 0.5].view()).is_err());
        assert!(cross_entropy::<f64>(array![0.5, 0.5].view(), array![1.0, 1.0].view()).is_err());
    }

    #[test]
    fn probability_clamp_keeps_loss_finite() {
        let l = cross_entropy::<f64>(array![0.0, 1.0].view(), array![1.0, 0.0].view()).unwrap();
        assert!(l.is_finite());
        assert!((l - (-(1e-12f64).ln())).abs() < 1e-9);
    }
}
