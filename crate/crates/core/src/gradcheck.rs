//! Central finite differences, used as the reference for analytic gradients.

use std::cell::RefCell;

use crate::params::ParamStore;
use crate::tensor::Tensor;

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate `i`.
pub fn finite_difference_grad<F>(f: F, x: &Tensor, h: f64) -> Tensor
where
    F: Fn(&Tensor) -> f64,
{
    assert!(h > 0.0, "step must be positive");
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.push((up - down) / (2.0 * h));
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape as x")
}

/// Finite-difference gradient of `loss` with respect to one named parameter.
pub fn finite_difference_param<F>(store: &ParamStore, name: &str, loss: F, h: f64) -> Tensor
where
    F: Fn(&ParamStore) -> f64,
{
    let base = store.get(name).expect("parameter exists").clone();
    let probe = RefCell::new(store.clone());
    finite_difference_grad(
        |t| {
            let mut s = probe.borrow_mut();
            s.get_mut(name)
                .expect("parameter exists")
                .data_mut()
                .copy_from_slice(t.data());
            loss(&s)
        },
        &base,
        h,
    )
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}
