//! Adam with bias-corrected moment estimates.

use crate::error::{Error, Result};
use crate::model::param_group;
use crate::numerics::Matrix;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First and second moments for each tensor, plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S> {
    pub step: u64,
    pub m: Vec<Matrix<S>>,
    pub v: Vec<Matrix<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(shapes: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let m: Vec<Matrix<S>> = shapes.into_iter().map(|(r, c)| Matrix::zeros(r, c)).collect();
        Self { step: 0, v: m.clone(), m }
    }
}

/// One Adam update of `params` in place.
///
/// `names` label the tensors for diagnostics. Every gradient is checked for
/// non-finite values before any parameter is touched.
pub fn adam_step<S: Scalar>(
    params: &mut [&mut Matrix<S>],
    grads: &[Matrix<S>],
    names: &[String],
    state: &mut AdamState<S>,
    cfg: &AdamConfig,
) -> Result<()> {
    let n = params.len();
    if grads.len() != n || names.len() != n || state.m.len() != n {
        return Err(Error::shape(
            "adam_step",
            format!("{n} tensors, {} grads, {} names, {} moments", grads.len(), names.len(), state.m.len()),
        ));
    }
    for i in 0..n {
        if grads[i].shape() != params[i].shape() || state.m[i].shape() != params[i].shape() {
            return Err(Error::shape(
                "adam_step",
                format!("{}: param {:?}, grad {:?}", names[i], params[i].shape(), grads[i].shape()),
            ));
        }
        if !grads[i].is_finite() {
            return Err(Error::NonFiniteGradient {
                group: param_group(&names[i]).to_string(),
                tensor: names[i].clone(),
            });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let b1 = S::of(cfg.beta1);
    let b2 = S::of(cfg.beta2);
    let one = S::one();
    let c1 = one - b1.powi(t);
    let c2 = one - b2.powi(t);
    let lr = S::of(cfg.learning_rate);
    let eps = S::of(cfg.epsilon);
    for i in 0..n {
        let p = params[i].data_mut();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, &g) in grads[i].data().iter().enumerate() {
            m[j] = b1 * m[j] + (one - b1) * g;
            v[j] = b2 * v[j] + (one - b2) * g * g;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("pred.layer{i}.weight")).collect()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Matrix::row_vector(vec![0.5, -1.0]);
        let mut st = AdamState::<f64>::new([(1, 2)]);
        st.m[0] = Matrix::row_vector(vec![0.2, 0.2]);
        let g = vec![Matrix::zeros(1, 2)];
        let before = p.clone();
        adam_step(&mut [&mut p], &g, &names(1), &mut st, &AdamConfig { learning_rate: 0.0, ..Default::default() })
            .unwrap();
        assert_eq!(p, before);
        assert!(st.m[0].data().iter().all(|&v| (v - 0.18).abs() < 1e-15));
        let mut q = Matrix::row_vector(vec![0.5, -1.0]);
        let mut fresh = AdamState::new([(1, 2)]);
        adam_step(&mut [&mut q], &g, &names(1), &mut fresh, &AdamConfig::default()).unwrap();
        assert_eq!(q, before);
    }

    #[test]
    fn constant_gradient_steps_by_learning_rate() {
        // With constant g, m_hat = g and v_hat = g^2 exactly after bias correction,
        // so each step moves by lr * |g| / (|g| + eps).
        let cfg = AdamConfig::default();
        let g = 0.37;
        let mut p = Matrix::row_vector(vec![0.0]);
        let mut st = AdamState::new([(1, 1)]);
        let want = cfg.learning_rate * g / (g + cfg.epsilon);
        for step in 1..=200 {
            let before = p.get(0, 0);
            adam_step(&mut [&mut p], &[Matrix::row_vector(vec![g])], &names(1), &mut st, &cfg).unwrap();
            let moved = before - p.get(0, 0);
            assert!((moved - want).abs() < 1e-12, "step {step}: {moved}");
        }
        let mut q = Matrix::row_vector(vec![0.0]);
        let mut st = AdamState::new([(1, 1)]);
        adam_step(&mut [&mut q], &[Matrix::row_vector(vec![-2.0])], &names(1), &mut st, &cfg).unwrap();
        assert!(q.get(0, 0) > 0.0);
    }

    #[test]
    fn groups_update_independently() {
        let cfg = AdamConfig::default();
        let mut a = Matrix::row_vector(vec![1.0]);
        let mut b = Matrix::row_vector(vec![1.0]);
        let mut st = AdamState::new([(1, 1), (1, 1)]);
        let g = [Matrix::row_vector(vec![1.0]), Matrix::row_vector(vec![0.0])];
        adam_step(&mut [&mut a, &mut b], &g, &names(2), &mut st, &cfg).unwrap();
        assert!(a.get(0, 0) < 1.0);
        assert_eq!(b.get(0, 0), 1.0);
    }

    #[test]
    fn non_finite_gradient_names_group() {
        let mut p = Matrix::row_vector(vec![1.0]);
        let mut st = AdamState::new([(1, 1)]);
        let err = adam_step(
            &mut [&mut p],
            &[Matrix::row_vector(vec![f64::NAN])],
            &["attn.head0.query".to_string()],
            &mut st,
            &AdamConfig::default(),
        )
        .unwrap_err();
        match err {
            Error::NonFiniteGradient { group, tensor } => {
                assert_eq!(group, "attn.qkv");
                assert_eq!(tensor, "attn.head0.query");
            }
            other => panic!("{other}"),
        }
        assert_eq!(p.get(0, 0), 1.0);
        assert_eq!(st.step, 0);
    }
}
