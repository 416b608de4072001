use alloc::format;

use super::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Worst component found by [`grad_check_report`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst: Option<(ParamId, usize)>,
    pub analytic: f64,
    pub numeric: f64,
}

/// Central-difference check of the tape gradient of a scalar function.
///
/// Returns the largest componentwise `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`
/// over every scalar in `params`.
pub fn grad_check<F>(store: &mut ParamStore, params: &[ParamId], epsilon: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    grad_check_report(store, params, epsilon, f).map(|r| r.max_rel_err)
}

/// [`grad_check`] plus the location of the worst component.
pub fn grad_check_report<F>(
    store: &mut ParamStore,
    params: &[ParamId],
    epsilon: f64,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    if !(epsilon > 0.0 && epsilon <= 1e-3) {
        return Err(Error::Contract(format!("epsilon {epsilon} outside (0, 1e-3]")));
    }
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let out = f(&mut tape, store)?;
        let v = tape.value(out);
        if v.len() != 1 {
            return Err(Error::Contract(format!(
                "grad_check needs a scalar function, got shape {:?}",
                v.shape()
            )));
        }
        Ok(v.item())
    };

    let analytic = {
        let mut tape = Tape::new();
        let out = f(&mut tape, store)?;
        if tape.value(out).len() != 1 {
            return Err(Error::Contract(format!(
                "grad_check needs a scalar function, got shape {:?}",
                tape.shape(out)
            )));
        }
        tape.param_grads(out)?
    };

    let mut report = GradCheckReport::default();
    for &id in params {
        for k in 0..store.get(id).len() {
            let original = store.get(id).data()[k];
            store.get_mut(id).data_mut()[k] = original + epsilon;
            let plus = eval(store);
            store.get_mut(id).data_mut()[k] = original - epsilon;
            let minus = eval(store);
            store.get_mut(id).data_mut()[k] = original;
            let numeric = (plus? - minus?) / (2.0 * epsilon);
            let a = analytic.get(id).map_or(0.0, |g| g.data()[k]);
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            if rel > report.max_rel_err {
                report = GradCheckReport {
                    max_rel_err: rel,
                    worst: Some((id, k)),
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{Group, Tensor};

    #[test]
    fn quadratic_is_exact() {
        let mut store = ParamStore::new();
        let x = store.add("x", Group::Generator, Tensor::scalar(3.0));
        let tape_grad = {
            let mut tape = Tape::new();
            let v = tape.param(&store, x);
            let sq = tape.mul(v, v).unwrap();
            let s = tape.sum(sq);
            tape.param_grads(s).unwrap().get(x).unwrap().item()
        };
        assert_eq!(tape_grad, 6.0);
        let err = grad_check(&mut store, &[x], 1e-5, |tape, store| {
            let v = tape.param(store, x);
            let sq = tape.mul(v, v)?;
            Ok(tape.sum(sq))
        })
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let mut store = ParamStore::new();
        let x = store.add("x", Group::Generator, Tensor::row(alloc::vec![1.0, 2.0]));
        let err = grad_check(&mut store, &[x], 1e-5, |tape, _| {
            Ok(tape.constant(Tensor::scalar(4.2)))
        })
        .unwrap();
        assert!(err < 1e-9);
    }

    #[test]
    fn non_scalar_is_a_contract_error() {
        let mut store = ParamStore::new();
        let x = store.add("x", Group::Generator, Tensor::row(alloc::vec![1.0, 2.0]));
        let res = grad_check(&mut store, &[x], 1e-5, |tape, store| Ok(tape.param(store, x)));
        assert!(matches!(res, Err(Error::Contract(_))));
    }

    #[test]
    fn epsilon_out_of_range() {
        let mut store = ParamStore::new();
        let x = store.add("x", Group::Generator, Tensor::scalar(1.0));
        let res = grad_check(&mut store, &[x], 0.1, |tape, store| Ok(tape.param(store, x)));
        assert!(matches!(res, Err(Error::Contract(_))));
    }
}
