use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of a finite-difference comparison.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
    pub checked: usize,
}

/// `|a − n| / max(|a|, |n|, 1e−12)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

fn eval<F>(f: &F, x: Tensor) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let v = g.constant(x);
    let out = f(&mut g, v)?;
    if g.shape(out).numel() != 1 {
        return Err(Error::Shape(format!(
            "grad_check: non-scalar output {}",
            g.shape(out)
        )));
    }
    Ok(g.value(out).item())
}

/// Analytic gradient of the scalar `f` at `x`.
pub fn analytic_grad<F>(f: &F, x: &Tensor) -> Result<Vec<f64>>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let v = g.variable(x.clone());
    let out = f(&mut g, v)?;
    g.backward(out)?;
    Ok(g.grad(v)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x.data().len()]))
}

/// Central-difference check of every coordinate of `x`.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let all: Vec<usize> = (0..x.data().len()).collect();
    grad_check_at(f, x, step, &all)
}

/// Like [`grad_check`], restricted to the listed flat coordinates.
pub fn grad_check_at<F>(f: F, x: &Tensor, step: f64, coords: &[usize]) -> Result<GradCheck>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let analytic = analytic_grad(&f, x)?;
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_index: 0,
        checked: 0,
    };
    for &i in coords {
        let mut plus = x.clone();
        plus.data_mut()[i] += step;
        let mut minus = x.clone();
        minus.data_mut()[i] -= step;
        let numeric = (eval(&f, plus)? - eval(&f, minus)?) / (2.0 * step);
        let err = relative_error(analytic[i], numeric);
        if err > report.max_rel_error || report.checked == 0 {
            report.max_rel_error = err;
            report.worst_index = i;
        }
        report.checked += 1;
    }
    Ok(report)
}
