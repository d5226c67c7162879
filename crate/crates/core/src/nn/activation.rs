use crate::tensor::{Real, Tensor};

/// `max(0, x)` element-wise; zero maps to zero.
pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let data = input
        .data()
        .iter()
        .map(|&v| if v > T::zero() { v } else { T::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data).expect("same shape")
}

/// Passes `d_out` where the forward input was strictly positive.
pub fn relu_backward<T: Real>(input: &Tensor<T>, d_out: &Tensor<T>) -> Tensor<T> {
    assert_eq!(input.shape(), d_out.shape(), "relu_backward shape mismatch");
    let data = input
        .data()
        .iter()
        .zip(d_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data).expect("same shape")
}
