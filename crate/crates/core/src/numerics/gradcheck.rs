//! Central finite-difference verification of tape gradients.

use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Real, Tape, Var};

/// Default perturbation for `f32` checks.
pub const DEFAULT_EPS: f64 = 1e-3;

/// Scalar function of the parameters in a store, recorded on a tape.
pub trait ScalarFn<T: Real>: Fn(&mut Tape<T>, &ParamStore<T>) -> Result<Var> {}
impl<T: Real, F: Fn(&mut Tape<T>, &ParamStore<T>) -> Result<Var>> ScalarFn<T> for F {}

fn evaluate<T: Real>(store: &ParamStore<T>, f: &impl ScalarFn<T>) -> Result<f64> {
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    let v = tape.value(out);
    if !v.is_scalar() {
        return Err(Error::Tape("finite-difference target must be scalar".into()));
    }
    Ok(v.item().as_f64())
}

/// Relative error with the denominator floored at `1e-6`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Largest entrywise relative error between the tape gradient of `f` with
/// respect to `param` and central differences with step `eps`.
///
/// Leaves the parameter values untouched and the gradients zeroed.
pub fn finite_diff_check<T: Real>(
    store: &mut ParamStore<T>,
    param: ParamId,
    eps: f64,
    f: impl ScalarFn<T>,
) -> Result<f64> {
    let analytic = analytic_grads(store, &f)?;
    numeric_compare(store, param, eps, &f, &analytic[param.index()])
}

/// [`finite_diff_check`] for every parameter, returning `(name, error)`.
pub fn finite_diff_check_all<T: Real>(
    store: &mut ParamStore<T>,
    eps: f64,
    f: impl ScalarFn<T>,
) -> Result<Vec<(String, f64)>> {
    let analytic = analytic_grads(store, &f)?;
    store
        .ids()
        .collect::<Vec<_>>()
        .into_iter()
        .map(|id| {
            let err = numeric_compare(store, id, eps, &f, &analytic[id.index()])?;
            Ok((store.get(id).name.clone(), err))
        })
        .collect()
}

fn analytic_grads<T: Real>(store: &mut ParamStore<T>, f: &impl ScalarFn<T>) -> Result<Vec<Vec<f64>>> {
    store.zero_grads();
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    tape.backward(out, store)?;
    let grads = store
        .iter()
        .map(|p| p.grad.data().iter().map(|g| g.as_f64()).collect())
        .collect();
    store.zero_grads();
    Ok(grads)
}

fn numeric_compare<T: Real>(
    store: &mut ParamStore<T>,
    param: ParamId,
    eps: f64,
    f: &impl ScalarFn<T>,
    analytic: &[f64],
) -> Result<f64> {
    if eps <= 0.0 {
        return Err(Error::Config(format!("finite-difference eps must be positive, got {eps}")));
    }
    let step = T::lit(eps);
    let mut worst = 0.0f64;
    for i in 0..store.get(param).value.len() {
        let original = store.get(param).value.data()[i];
        store.get_mut(param).value.data_mut()[i] = original + step;
        let plus = evaluate(store, f);
        store.get_mut(param).value.data_mut()[i] = original - step;
        let minus = evaluate(store, f);
        store.get_mut(param).value.data_mut()[i] = original;
        // Use the step actually realised in floating point.
        let realised = (original + step).as_f64() - (original - step).as_f64();
        let numeric = (plus? - minus?) / realised;
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn sum_has_zero_error() {
        let mut store = ParamStore::<f32>::new();
        let id = store.add("p", Tensor::from_fn(&[5], |i| i as f32 * 0.3)).unwrap();
        let err = finite_diff_check(&mut store, id, DEFAULT_EPS, |t: &mut Tape<f32>, s: &ParamStore<f32>| {
            let p = t.param(s, id);
            Ok(t.sum(p))
        })
        .unwrap();
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let mut store = ParamStore::<f32>::new();
        let id = store.add("p", Tensor::full(&[3], 1.0)).unwrap();
        let err = finite_diff_check(&mut store, id, DEFAULT_EPS, |t: &mut Tape<f32>, _s: &ParamStore<f32>| {
            Ok(t.input(Tensor::scalar(0.0)))
        })
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn rejects_non_positive_eps() {
        let mut store = ParamStore::<f32>::new();
        let id = store.add("p", Tensor::full(&[1], 1.0)).unwrap();
        let r = finite_diff_check(&mut store, id, 0.0, |t: &mut Tape<f32>, s: &ParamStore<f32>| {
            let p = t.param(s, id);
            Ok(t.sum(p))
        });
        assert!(r.is_err());
    }
}
