use super::{Scalar, Tensor};

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Default L1 weight.
pub const L1_RHO: f64 = 1e-6;

/// Numerically stable softmax of one row.
pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

/// Softmax over the last axis of a `(n, k)` tensor.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let mut y = logits.clone();
    let k = y.item_len();
    for row in y.data_mut().chunks_mut(k) {
        softmax_in_place(row);
    }
    y
}

/// Batch-mean cross-entropy plus its diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossEntropy {
    pub loss: f64,
    /// Rows whose target probability fell below [`PROB_FLOOR`].
    pub clamped: usize,
}

/// Mean of `-ln p[y]` over the rows of a probability matrix.
pub fn cross_entropy<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> CrossEntropy {
    let k = probs.item_len();
    assert_eq!(probs.batch(), labels.len(), "one label per row");
    let mut total = 0.0;
    let mut clamped = 0;
    for (row, &y) in probs.data().chunks(k).zip(labels) {
        let p = row[y].f64();
        if p < PROB_FLOOR {
            clamped += 1;
        }
        total -= p.max(PROB_FLOOR).ln();
    }
    CrossEntropy {
        loss: total / labels.len().max(1) as f64,
        clamped,
    }
}

/// Gradient of the batch-mean cross-entropy with respect to probabilities.
pub fn cross_entropy_grad<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Tensor<T> {
    let k = probs.item_len();
    let n = T::of(labels.len() as f64);
    let mut g = Tensor::zeros(probs.shape());
    for ((row, grow), &y) in probs.data().chunks(k).zip(g.data_mut().chunks_mut(k)).zip(labels) {
        grow[y] = -T::one() / (row[y].max(T::of(PROB_FLOOR)) * n);
    }
    g
}

/// Softmax followed by batch-mean cross-entropy. Returns the loss, the
/// probabilities and the gradient with respect to the logits.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> (CrossEntropy, Tensor<T>, Tensor<T>) {
    let probs = softmax(logits);
    let ce = cross_entropy(&probs, labels);
    let k = probs.item_len();
    let n = T::of(labels.len() as f64);
    let mut g = probs.clone();
    for (row, &y) in g.data_mut().chunks_mut(k).zip(labels) {
        row[y] = row[y] - T::one();
        for v in row.iter_mut() {
            *v = *v / n;
        }
    }
    (ce, probs, g)
}

/// `rho · Σ|w|` over all parameters.
pub fn l1_penalty<T: Scalar>(params: &[&Tensor<T>], rho: f64) -> f64 {
    if rho == 0.0 {
        return 0.0;
    }
    rho * params.iter().map(|p| p.abs_sum()).sum::<f64>()
}

/// Add `rho · sign(w)` to each gradient, with `sign(0) = 0`.
pub fn add_l1_subgradient<T: Scalar>(grads: &mut [Tensor<T>], params: &[&Tensor<T>], rho: f64) {
    if rho == 0.0 {
        return;
    }
    let r = T::of(rho);
    for (g, p) in grads.iter_mut().zip(params) {
        for (gv, &w) in g.data_mut().iter_mut().zip(p.data()) {
            if w > T::zero() {
                *gv = *gv + r;
            } else if w < T::zero() {
                *gv = *gv - r;
            }
        }
    }
}

/// Full objective: batch-mean cross-entropy of `probs` plus the L1 term.
pub fn cross_entropy_l1<T: Scalar>(probs: &Tensor<T>, labels: &[usize], params: &[&Tensor<T>], rho: f64) -> CrossEntropy {
    let mut ce = cross_entropy(probs, labels);
    ce.loss += l1_penalty(params, rho);
    ce
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn certain_prediction_costs_nothing() {
        let p = Tensor::from_vec(&[1, 3], vec![0.0, 1.0, 0.0]);
        assert_eq!(cross_entropy_l1::<f64>(&p, &[1], &[], 0.0).loss, 0.0);
    }

    #[test]
    fn uniform_over_28() {
        let p = Tensor::from_vec(&[2, 28], vec![1.0 / 28.0; 56]);
        let ce = cross_entropy_l1::<f64>(&p, &[0, 27], &[], 0.0);
        assert!((ce.loss - 28f64.ln()).abs() < 1e-12);
        assert!((ce.loss - 3.3322).abs() < 1e-4);
    }

    #[test]
    fn zero_weights_add_nothing() {
        let w = Tensor::<f64>::zeros(&[4, 5]);
        assert_eq!(l1_penalty(&[&w], L1_RHO), 0.0);
    }

    #[test]
    fn l1_matches_summation() {
        let w = Tensor::<f64>::from_vec(&[2, 3], vec![1.5, -2.0, 0.0, 0.25, -0.75, 3.0]);
        let b = Tensor::from_vec(&[2], vec![-1.0, 0.5]);
        let mut sum = 0.0f64;
        for v in w.data().iter().chain(b.data()) {
            sum += v.abs();
        }
        assert!((l1_penalty(&[&w, &b], 1e-6) - 1e-6 * sum).abs() < 1e-20);
        let mut g = vec![Tensor::zeros(&[2, 3]), Tensor::zeros(&[2])];
        add_l1_subgradient(&mut g, &[&w, &b], 1e-6);
        assert_eq!(g[0].data(), &[1e-6, -1e-6, 0.0, 1e-6, -1e-6, 1e-6]);
        assert_eq!(g[1].data(), &[-1e-6, 1e-6]);
    }

    #[test]
    fn zero_probability_is_clamped_and_flagged() {
        let p = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.5, 0.5]);
        let ce = cross_entropy::<f64>(&p, &[1, 0]);
        assert_eq!(ce.clamped, 1);
        assert!(ce.loss.is_finite());
        assert!((ce.loss - (-(1e-12f64).ln() + 2f64.ln()) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn fused_gradient_matches_chain_rule() {
        let logits = Tensor::from_vec(&[2, 3], vec![0.3, -1.2, 2.0, 0.0, 0.5, -0.5]);
        let labels = [2, 1];
        let (_, probs, fused) = softmax_cross_entropy::<f64>(&logits, &labels);
        let dp = cross_entropy_grad(&probs, &labels);
        for r in 0..2 {
            let y = &probs.data()[r * 3..r * 3 + 3];
            let g = &dp.data()[r * 3..r * 3 + 3];
            let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
            for c in 0..3 {
                let chain = y[c] * (g[c] - dot);
                assert!((chain - fused.data()[r * 3 + c]).abs() < 1e-12);
            }
        }
    }
}
