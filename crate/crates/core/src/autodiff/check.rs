//! Gradient verification against central finite differences.

use crate::autodiff::params::{GradientMap, ParamStore};
use crate::autodiff::tape::{Tape, Var};
use crate::error::Result;

/// Seed used for every tape a checker builds, so stochastic ops (dropout)
/// draw identical masks across the analytic and perturbed evaluations.
const CHECK_SEED: u64 = 0x5eed_c4ec;

/// Outcome of a gradient comparison.
#[derive(Debug, Clone)]
pub struct GradientCheck {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_entry: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradientCheck {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err < tolerance
    }
}

fn loss_value<F>(params: &ParamStore, build: &mut F) -> Result<f64>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::train(CHECK_SEED);
    let loss = build(&mut tape, params)?;
    Ok(tape.value(loss).scalar())
}

/// Tape gradient of the scalar loss produced by `build`.
///
/// `build` must be a pure function of the tape and parameters: any
/// batch-norm running state it uses has to be rebuilt inside the closure,
/// otherwise repeated evaluations see different statistics.
pub fn analytic_gradient<F>(params: &ParamStore, mut build: F) -> Result<GradientMap>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::train(CHECK_SEED);
    let loss = build(&mut tape, params)?;
    tape.backward(loss, params)
}

/// Central-difference gradient of the same loss, one entry at a time.
pub fn numeric_gradient<F>(params: &ParamStore, step: f64, mut build: F) -> Result<GradientMap>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut out = Vec::with_capacity(params.len());
    let mut work = params.clone();
    for id in params.ids() {
        let shape = params.get(id).shape();
        let mut g = crate::autodiff::tensor::Tensor::zeros(shape.0, shape.1);
        for e in 0..g.len() {
            let base = params.get(id).data()[e];
            work.get_mut(id).data_mut()[e] = base + step;
            let up = loss_value(&work, &mut build)?;
            work.get_mut(id).data_mut()[e] = base - step;
            let down = loss_value(&work, &mut build)?;
            work.get_mut(id).data_mut()[e] = base;
            g.data_mut()[e] = (up - down) / (2.0 * step);
        }
        out.push(g);
    }
    Ok(GradientMap::new(out))
}

/// Entrywise comparison with relative error `|a - n| / max(1, |a|, |n|)`.
pub fn compare_gradients(
    params: &ParamStore,
    analytic: &GradientMap,
    numeric: &GradientMap,
) -> GradientCheck {
    let mut check = GradientCheck {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_entry: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for id in params.ids() {
        let (a, n) = (analytic.get(id), numeric.get(id));
        for (e, (&av, &nv)) in a.data().iter().zip(n.data()).enumerate() {
            let rel = (av - nv).abs() / av.abs().max(nv.abs()).max(1.0);
            if rel > check.max_rel_err {
                check.max_rel_err = rel;
                check.worst_param = params.name(id).to_string();
                check.worst_entry = e;
                check.analytic = av;
                check.numeric = nv;
            }
        }
    }
    check
}

/// Compare the tape gradient of `build`'s loss to central finite
/// differences over every parameter entry.
pub fn finite_difference_check<F>(
    params: &ParamStore,
    step: f64,
    mut build: F,
) -> Result<GradientCheck>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let analytic = analytic_gradient(params, &mut build)?;
    let numeric = numeric_gradient(params, step, &mut build)?;
    Ok(compare_gradients(params, &analytic, &numeric))
}
