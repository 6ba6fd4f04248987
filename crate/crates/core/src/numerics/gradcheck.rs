//! Finite-difference verification of tape gradients.

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::numerics::{Binding, ParamId, ParamSet, Scalar, SeededRng, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Coordinates sampled per tensor (all when the tensor is smaller).
    pub samples_per_tensor: usize,
    /// Denominator floor so near-zero gradients are compared absolutely.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { eps: 1e-5, samples_per_tensor: 50, floor: 1e-6, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn eval_loss<T, F>(loss_fn: &F, params: &ParamSet<T>) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Tape<'_, T>, &Binding) -> Result<Var>,
{
    let mut tape = Tape::new();
    let binding = tape.bind(params);
    let loss = loss_fn(&mut tape, &binding)?;
    let v = tape.value(loss);
    if !v.is_scalar() {
        return Err(Error::NonScalarLoss(v.shape().to_vec()));
    }
    let v = v.data()[0];
    if !v.is_finite() {
        return Err(Error::NonFinite { node: loss.index(), op: "loss" });
    }
    Ok(v)
}

/// Analytic gradients of `loss_fn` for every parameter, via the tape.
pub fn analytic_gradients<T, F>(loss_fn: &F, params: &ParamSet<T>) -> Result<Vec<Tensor<T>>>
where
    T: Scalar,
    F: Fn(&mut Tape<'_, T>, &Binding) -> Result<Var>,
{
    let mut tape = Tape::new();
    let binding = tape.bind(params);
    let loss = loss_fn(&mut tape, &binding)?;
    if !tape.value(loss).data().iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { node: loss.index(), op: "loss" });
    }
    Ok(tape.backward(loss)?.params(&binding))
}

/// Compares supplied analytic gradients with central differences.
/// Frozen parameters and non-finite coordinates (masked entries) are skipped.
pub fn check_against_finite_differences<T, F>(
    loss_fn: &F,
    params: &ParamSet<T>,
    analytic: &[Tensor<T>],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Tape<'_, T>, &Binding) -> Result<Var>,
{
    let mut rng = SeededRng::new(opts.seed);
    let mut work = params.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, checked: 0 };
    let h = T::lit(opts.eps);
    for (pi, analytic_t) in analytic.iter().enumerate() {
        let id = ParamId(pi);
        let entry = params.entry(id);
        if !entry.trainable {
            continue;
        }
        let n = entry.value.len();
        let coords: Vec<usize> = if n <= opts.samples_per_tensor {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, opts.samples_per_tensor).into_vec();
            c.sort_unstable();
            c
        };
        for idx in coords {
            let orig = entry.value.data()[idx];
            if !orig.is_finite() {
                continue;
            }
            work.get_mut(id).data_mut()[idx] = orig + h;
            let plus = eval_loss(loss_fn, &work)?;
            work.get_mut(id).data_mut()[idx] = orig - h;
            let minus = eval_loss(loss_fn, &work)?;
            work.get_mut(id).data_mut()[idx] = orig;
            let numeric = ((plus - minus) / (h + h)).as_f64();
            let err = relative_error(analytic_t.data()[idx].as_f64(), numeric, opts.floor);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((entry.name.clone(), idx));
            }
        }
    }
    Ok(report)
}

/// Analytic backward versus central differences on sampled coordinates.
pub fn grad_check<T, F>(loss_fn: F, params: &ParamSet<T>, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Tape<'_, T>, &Binding) -> Result<Var>,
{
    let analytic = analytic_gradients(&loss_fn, params)?;
    check_against_finite_differences(&loss_fn, params, &analytic, opts)
}
