use super::param::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Check at most this many evenly spaced entries per parameter.
    pub max_entries_per_param: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_entries_per_param: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// max over checked entries of |analytic − numeric| / max(1, |numeric|)
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compare tape gradients of a scalar loss against central differences for
/// every parameter in `store`. `loss` records the forward pass on a fresh
/// tape and returns the `1 × 1` loss value.
pub fn grad_check<F>(store: &mut ParamStore, loss: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let out = loss(store, &mut tape)?;
        if tape.shape(out) != (1, 1) {
            return Err(Error::Dimension("gradient check needs a scalar loss".into()));
        }
        Ok(tape.value(out)[[0, 0]])
    };

    store.zero_grad();
    {
        let mut tape = Tape::new();
        let out = loss(store, &mut tape)?;
        tape.backward(out, store)?;
    }
    let analytic: Vec<Vec<f64>> = store.iter().map(|p| p.grad.iter().copied().collect()).collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for (pi, id) in ids.into_iter().enumerate() {
        let len = store.get(id).len();
        let stride = match opts.max_entries_per_param {
            Some(k) if k > 0 && len > k => len.div_ceil(k),
            _ => 1,
        };
        for flat in (0..len).step_by(stride) {
            let original = *store.get(id).value.iter().nth(flat).unwrap();
            set_flat(store, id, flat, original + opts.step);
            let plus = eval(store)?;
            set_flat(store, id, flat, original - opts.step);
            let minus = eval(store)?;
            set_flat(store, id, flat, original);
            let numeric = (plus - minus) / (2.0 * opts.step);
            let err = (analytic[pi][flat] - numeric).abs() / numeric.abs().max(1.0);
            report.checked += 1;
            if err > report.max_rel_error || report.checked == 1 {
                report.max_rel_error = err;
                report.worst_param = store.get(id).name.clone();
                report.worst_index = flat;
            }
        }
    }
    Ok(report)
}

fn set_flat(store: &mut ParamStore, id: super::param::ParamId, flat: usize, v: f64) {
    let p = store.get_mut(id);
    let cols = p.value.ncols();
    p.value[[flat / cols, flat % cols]] = v;
}
