use std::fmt;

use super::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// A scalar-valued computation over a list of parameter tensors, generic
/// over the element type so it can be evaluated at either precision.
pub trait ScalarFn {
    fn eval<T: Real>(&self, tape: &mut Tape<T>, params: &[Var]) -> Result<Var>;
}

#[derive(Clone, Debug)]
pub struct ParamError {
    pub name: String,
    pub entries: usize,
    /// `max|analytic − numeric| / max(max|analytic|, max|numeric|)` over the tensor.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamError>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() < self.tolerance
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.params {
            writeln!(
                f,
                "  {:<32} n={:<6} rel={:.3e} abs={:.3e}",
                p.name, p.entries, p.max_rel_err, p.max_abs_err
            )?;
        }
        write!(
            f,
            "  max rel err {:.3e} (tol {:.1e}) {}",
            self.max_rel_err(),
            self.tolerance,
            if self.passed() { "ok" } else { "FAILED" }
        )
    }
}

fn eval_value<T: Real, F: ScalarFn>(f: &F, params: &[Tensor<T>]) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.constant(p.clone())).collect();
    let out = f.eval(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(Error::NonScalar(v.shape().to_vec()));
    }
    Ok(v.item().as_f64())
}

fn analytic<T: Real, F: ScalarFn>(f: &F, params: &[Tensor<T>]) -> Result<Vec<Vec<f64>>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.var(p.clone())).collect();
    let out = f.eval(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    Ok(vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.get(v).map_or_else(|| vec![0.0; p.len()], |g| g.to_f64_vec()))
        .collect())
}

fn numeric<T: Real, F: ScalarFn>(f: &F, params: &[Tensor<T>], eps: f64) -> Result<Vec<Vec<f64>>> {
    let mut work: Vec<Tensor<T>> = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let mut g = vec![0.0; params[i].len()];
        for (j, gj) in g.iter_mut().enumerate() {
            let orig = params[i].data()[j];
            work[i].data_mut()[j] = T::from_f64(orig.as_f64() + eps);
            let plus = eval_value(f, &work)?;
            work[i].data_mut()[j] = T::from_f64(orig.as_f64() - eps);
            let minus = eval_value(f, &work)?;
            work[i].data_mut()[j] = orig;
            *gj = (plus - minus) / (2.0 * eps);
        }
        out.push(g);
    }
    Ok(out)
}

fn compare(names: &[String], a: &[Vec<f64>], n: &[Vec<f64>], tolerance: f64) -> GradCheckReport {
    let params = names
        .iter()
        .zip(a.iter().zip(n))
        .map(|(name, (a, n))| {
            let max_abs_err = a
                .iter()
                .zip(n)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            let scale = a
                .iter()
                .chain(n.iter())
                .map(|v| v.abs())
                .fold(1e-10, f64::max);
            ParamError {
                name: name.clone(),
                entries: a.len(),
                max_rel_err: max_abs_err / scale,
                max_abs_err,
            }
        })
        .collect();
    GradCheckReport { params, tolerance }
}

/// Compares reverse-mode gradients with central differences, both computed
/// in `T`.
pub fn grad_check<T: Real, F: ScalarFn>(
    f: &F,
    params: &[(String, Tensor<T>)],
    eps: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
    let values: Vec<Tensor<T>> = params.iter().map(|(_, t)| t.clone()).collect();
    let a = analytic(f, &values)?;
    let n = numeric(f, &values, eps)?;
    Ok(compare(&names, &a, &n, tolerance))
}

/// Checks the reverse-mode gradient computed in `T` against central
/// differences evaluated in `f64` at the same (rounded) parameter values.
/// This is how reduced-precision gradients are validated: differencing in
/// `f32` itself is dominated by cancellation error.
pub fn grad_check_against<T: Real, F: ScalarFn>(
    f: &F,
    params: &[(String, Tensor<f64>)],
    eps: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
    let low: Vec<Tensor<T>> = params.iter().map(|(_, t)| t.cast::<T>()).collect();
    let reference: Vec<Tensor<f64>> = low.iter().map(|t| t.cast::<f64>()).collect();
    let a = analytic(f, &low)?;
    let n = numeric(f, &reference, eps)?;
    Ok(compare(&names, &a, &n, tolerance))
}
