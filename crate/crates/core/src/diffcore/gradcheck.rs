use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(1, |analytic|)` over all entries.
    pub max_rel_error: f64,
    /// Parameter and flat index where the maximum occurred.
    pub worst: Option<(ParamId, usize)>,
    pub entries_checked: usize,
}

/// Compares backward gradients with central differences of `loss_fn`.
///
/// `loss_fn` must rebuild the whole computation from the store on every
/// call, binding the parameters in `ids` with [`Tape::param`].
pub fn gradient_check<F>(
    mut loss_fn: F,
    store: &mut ParamStore<f64>,
    ids: &[ParamId],
    step: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore<f64>, &mut Tape<f64>) -> Result<Var>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid(format!(
            "gradient_check: step must be positive, got {step}"
        )));
    }
    let analytic = {
        let mut tape = Tape::new();
        let loss = loss_fn(store, &mut tape)?;
        tape.backward(loss)?
    };
    let mut eval = |store: &ParamStore<f64>, coord: Option<(ParamId, usize, f64)>| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = loss_fn(store, &mut tape)?;
        let v = tape.value(loss).item();
        if !v.is_finite() {
            let at = match coord {
                Some((id, i, off)) => format!("{}[{i}] offset {off:+e}", store.name(id)),
                None => "unperturbed parameters".to_string(),
            };
            return Err(Error::NonFinite(format!("loss is {v} at {at}")));
        }
        Ok(v)
    };

    eval(store, None)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        entries_checked: 0,
    };
    for &id in ids {
        let grad = analytic.get_or_zeros(id, store);
        for i in 0..store.get(id).len() {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + step;
            let plus = eval(store, Some((id, i, step)));
            store.get_mut(id).data_mut()[i] = orig - step;
            let minus = eval(store, Some((id, i, -step)));
            store.get_mut(id).data_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * step);
            let a = grad.data()[i];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((id, i));
            }
            report.entries_checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;

    #[test]
    fn quadratic_is_exact_up_to_roundoff() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::vector(vec![0.5, -2.0, 3.0]));
        let report = gradient_check(
            |s, tape| {
                let x = tape.param(id, s.get(id));
                let sq = tape.mul(x, x)?;
                let l = tape.sum(sq);
                Ok(tape.scale(l, 0.5))
            },
            &mut store,
            &[id],
            1e-4,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-9, "{report:?}");
        assert_eq!(report.entries_checked, 3);
    }

    #[test]
    fn zero_step_is_rejected() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::scalar(1.0));
        let r = gradient_check(|s, t| Ok(t.param(id, s.get(id))), &mut store, &[id], 0.0);
        assert!(r.is_err());
    }

    #[test]
    fn non_finite_probe_names_coordinate() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::vector(vec![1.0, 0.0]));
        let err = gradient_check(
            |s, tape| {
                let x = tape.param(id, s.get(id));
                let l = tape.log(x);
                Ok(tape.sum(l))
            },
            &mut store,
            &[id],
            1e-3,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn store_is_restored_after_check() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::vector(vec![0.1, 0.2, 0.3]));
        let before = store.clone();
        gradient_check(
            |s, tape| {
                let x = tape.param(id, s.get(id));
                let y = tape.tanh(x);
                Ok(tape.sum(y))
            },
            &mut store,
            &[id],
            1e-6,
        )
        .unwrap();
        assert_eq!(store, before);
    }
}
