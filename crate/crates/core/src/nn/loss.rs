use crate::tensor::Real;

/// Two-class softmax cross-entropy.
///
/// `logits[0]` scores the negative class and `logits[1]` the positive one.
/// Returns the loss `-log softmax(logits)[label]` and its gradient
/// `softmax(logits) - onehot(label)`.
pub fn softmax2_xent<T: Real>(logits: [T; 2], label: u8) -> (T, [T; 2]) {
    assert!(label <= 1, "label must be 0 or 1");
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let log_z = m + (e0 + e1).ln();
    let loss = log_z - logits[label as usize];
    let p0 = (logits[0] - log_z).exp();
    let p1 = (logits[1] - log_z).exp();
    let mut grad = [p0, p1];
    grad[label as usize] = grad[label as usize] - T::one();
    (loss, grad)
}
