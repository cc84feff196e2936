use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean softmax cross-entropy over the batch and its gradient
/// `(softmax - onehot) / N` with respect to the logits.
pub fn softmax_xent(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (n, k) = match *logits.shape() {
        [n, k] => (n, k),
        _ => {
            return Err(Error::InvalidShape { shape: logits.shape().to_vec(), reason: "logits must be [N, K]".into() })
        }
    };
    if labels.len() != n {
        return Err(Error::shape("softmax_xent labels", &[labels.len()], logits.shape()));
    }
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(n * k);
    for (i, (row, &label)) in logits.data().chunks(k).zip(labels).enumerate() {
        if label >= k {
            return Err(Error::InvalidLabel { index: i, label, classes: k });
        }
        let (arg, max) =
            row.iter()
                .copied()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(ai, am), (j, v)| if v > am { (j, v) } else { (ai, am) });
        let exps: Vec<f64> = row.iter().map(|&v| libm::exp(v - max)).collect();
        let rest: f64 = exps.iter().enumerate().filter(|&(j, _)| j != arg).map(|(_, e)| e).sum();
        // log-sum-exp = max + log(1 + rest); log1p keeps saturated rows exact
        let lse = max + libm::log1p(rest);
        loss += lse - row[label];
        let denom = 1.0 + rest;
        for (j, e) in exps.iter().enumerate() {
            let p = e / denom;
            grad.push((p - if j == label { 1.0 } else { 0.0 }) * inv_n);
        }
    }
    Ok((loss * inv_n, Tensor::new(&[n, k], grad)?))
}
