//! Central-difference verification of tape gradients.

use super::params::{Bound, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Denominator floor for the relative error.
pub const REL_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

fn evaluate<F>(objective: &F, params: &ParamStore) -> Result<f64>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss = objective(&mut tape, &bound)?;
    Ok(tape.value(loss).item())
}

/// Compares reverse-mode gradients of `objective` against central differences
/// `(f(p + h) − f(p − h)) / 2h`, entry by entry.
///
/// The relative error of an entry is `|analytic − numeric| / max(|numeric|, 1e-8)`.
/// `params` is never mutated; perturbations are applied to a private copy.
pub fn finite_diff_check<F>(objective: F, params: &ParamStore, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    finite_diff_check_with_floor(objective, params, step, REL_FLOOR)
}

/// [`finite_diff_check`] with a caller-chosen denominator floor.
///
/// Double-precision central differences carry an absolute error of roughly
/// `1e-11` at step `1e-5`, so entries whose true gradient is below the floor
/// are effectively compared in absolute terms.
pub fn finite_diff_check_with_floor<F>(
    objective: F,
    params: &ParamStore,
    step: f64,
    floor: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Contract(format!("step must be positive, got {step}")));
    }
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss = objective(&mut tape, &bound)?;
    let base = tape.value(loss).item();
    if !base.is_finite() {
        return Err(Error::Numeric(format!("objective is {base} at the base point")));
    }
    let analytic = params.collect_grads(&bound, &tape.backward(loss)?);

    let mut work = params.clone();
    let mut report = Vec::with_capacity(params.len());
    let mut overall: f64 = 0.0;
    for (name, tensor) in params.iter() {
        let grad = analytic.get(name).expect("collect_grads covers every parameter");
        let mut worst_rel: f64 = 0.0;
        let mut worst_abs: f64 = 0.0;
        for k in 0..tensor.numel() {
            let orig = tensor.data()[k];
            work.by_name_mut(name).unwrap().data_mut()[k] = orig + step;
            let plus = evaluate(&objective, &work)?;
            work.by_name_mut(name).unwrap().data_mut()[k] = orig - step;
            let minus = evaluate(&objective, &work)?;
            work.by_name_mut(name).unwrap().data_mut()[k] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "objective not finite when perturbing `{name}`[{k}]"
                )));
            }
            let numeric = (plus - minus) / (2.0 * step);
            let abs = (grad.data()[k] - numeric).abs();
            let rel = abs / numeric.abs().max(floor);
            worst_rel = worst_rel.max(rel);
            worst_abs = worst_abs.max(abs);
        }
        overall = overall.max(worst_rel);
        report.push(ParamCheck {
            name: name.to_string(),
            max_rel_error: worst_rel,
            max_abs_error: worst_abs,
        });
    }
    Ok(GradCheckReport {
        params: report,
        max_rel_error: overall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn store() -> (ParamStore, crate::autodiff::ParamId) {
        let mut s = ParamStore::new();
        let id = s
            .insert("p", Tensor::new(vec![2, 2], vec![0.3, -1.2, 2.0, 0.7]).unwrap())
            .unwrap();
        (s, id)
    }

    #[test]
    fn quadratic_is_exact() {
        let (s, id) = store();
        let report = finite_diff_check(
            |tape, b| {
                let f = tape.frobenius_sq(b[id]);
                Ok(tape.scale(f, 0.5))
            },
            &s,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-9, "{report:?}");
    }

    #[test]
    fn constant_objective_has_zero_error() {
        let (s, id) = store();
        let report = finite_diff_check(
            |tape, b| {
                let z = tape.scale(b[id], 0.0);
                Ok(tape.sum_all(z))
            },
            &s,
            1e-5,
        )
        .unwrap();
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn does_not_mutate_params() {
        let (s, id) = store();
        let before = s.clone();
        finite_diff_check(|tape, b| Ok(tape.frobenius_sq(b[id])), &s, 1e-3).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn non_finite_names_the_parameter() {
        let (s, id) = store();
        let err = finite_diff_check(
            |tape, b| {
                let v = tape.value(b[id]).data()[0];
                let poison = tape.constant(Tensor::scalar(if v > 0.3 { f64::NAN } else { 0.0 }));
                let s = tape.sum_all(b[id]);
                tape.add(s, poison)
            },
            &s,
            1e-5,
        )
        .unwrap_err();
        assert!(err.to_string().contains("`p`"), "{err}");
    }

    #[test]
    fn rejects_non_positive_step() {
        let (s, id) = store();
        assert!(finite_diff_check(|t, b| Ok(t.sum_all(b[id])), &s, 0.0).is_err());
    }
}
