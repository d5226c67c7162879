use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Parameter tensors with their momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T = f32> {
    pub params: Vec<Tensor<T>>,
    pub velocity: Vec<Tensor<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new(params: Vec<Tensor<T>>) -> Self {
        let velocity = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { params, velocity }
    }
}

/// Momentum SGD: `v <- momentum * v + grad`, `param <- param - lr * v`.
///
/// Nothing is modified if any gradient is non-finite.
pub fn sgd_update<T: Real>(set: &mut ParamSet<T>, grads: &[Tensor<T>], lr: T, momentum: T) -> Result<()> {
    if !(lr > T::zero()) || momentum < T::zero() || !(momentum < T::one()) {
        return Err(Error::config(format!(
            "sgd needs lr > 0 and 0 <= momentum < 1, got lr={lr} momentum={momentum}"
        )));
    }
    if grads.len() != set.params.len() {
        return Err(Error::config(format!(
            "sgd got {} gradients for {} parameters",
            grads.len(),
            set.params.len()
        )));
    }
    for (i, (g, p)) in grads.iter().zip(&set.params).enumerate() {
        if g.shape() != p.shape() {
            return Err(Error::config(format!(
                "gradient {i} has shape {:?}, parameter has {:?}",
                g.shape(),
                p.shape()
            )));
        }
        g.ensure_finite(&format!("sgd gradient {i}"))?;
    }
    for ((p, v), g) in set.params.iter_mut().zip(&mut set.velocity).zip(grads) {
        for ((pv, vv), &gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vv = momentum * *vv + gv;
            *pv = *pv - lr * *vv;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::from_vec(&[1], vec![v]).unwrap()
    }

    #[test]
    fn plain_step() {
        let mut set = ParamSet::new(vec![scalar(1.0)]);
        sgd_update(&mut set, &[scalar(0.5)], 0.1, 0.0).unwrap();
        assert!((set.params[0].data()[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn momentum_recurrence() {
        let mut set = ParamSet::new(vec![scalar(0.0)]);
        sgd_update(&mut set, &[scalar(1.0)], 0.1, 0.9).unwrap();
        assert!((set.velocity[0].data()[0] - 1.0).abs() < 1e-15);
        assert!((set.params[0].data()[0] + 0.1).abs() < 1e-15);
        sgd_update(&mut set, &[scalar(1.0)], 0.1, 0.9).unwrap();
        assert!((set.velocity[0].data()[0] - 1.9).abs() < 1e-15);
        assert!((set.params[0].data()[0] + 0.29).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_decays_velocity() {
        let mut set = ParamSet::new(vec![scalar(2.0)]);
        set.velocity[0] = scalar(0.0);
        sgd_update(&mut set, &[scalar(0.0)], 0.1, 0.9).unwrap();
        assert_eq!(set.params[0].data()[0], 2.0);

        set.velocity[0] = scalar(1.0);
        let before = set.params[0].data()[0];
        sgd_update(&mut set, &[scalar(0.0)], 0.1, 0.9).unwrap();
        assert!((set.velocity[0].data()[0] - 0.9).abs() < 1e-15);
        assert!((set.params[0].data()[0] - (before - 0.09)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_aborts_step() {
        let mut set = ParamSet::new(vec![scalar(1.0), scalar(1.0)]);
        let err = sgd_update(&mut set, &[scalar(0.5), scalar(f64::NAN)], 0.1, 0.9).unwrap_err();
        assert!(err.is_numeric());
        assert_eq!(set.params[0].data()[0], 1.0);
        assert_eq!(set.velocity[0].data()[0], 0.0);
    }

    #[test]
    fn bad_hyperparameters_rejected() {
        let mut set = ParamSet::new(vec![scalar(1.0)]);
        assert!(sgd_update(&mut set, &[scalar(0.5)], 0.0, 0.5).is_err());
        assert!(sgd_update(&mut set, &[scalar(0.5)], 0.1, 1.0).is_err());
    }
}
