use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing tape gradients against central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    /// Max relative error per parameter tensor.
    pub per_param: Vec<f64>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

// Below this gradient magnitude the comparison is effectively absolute.
const SCALE_FLOOR: f64 = 1e-6;

/// Check the tape gradient of scalar `f` at `params` against central
/// differences with step `h`.
///
/// The error for one parameter tensor is `max|tape - fd| / max(max|tape|,
/// max|fd|, 1e-6)`. `f` is evaluated twice at the base point first; any
/// disagreement is reported as an error.
pub fn grad_check<F>(name: &str, f: F, params: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step h must be positive, got {h}")));
    }
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.constant(p.clone())).collect();
        let out = f(&tape, &vars)?;
        let v = out.value();
        if v.numel() != 1 {
            return Err(Error::domain("grad_check", "function output must be scalar"));
        }
        Ok(v.item())
    };

    let first = eval(params)?;
    let second = eval(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::domain(
            "grad_check",
            format!("non-deterministic function: {first} vs {second}"),
        ));
    }

    let tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut work = params.to_vec();
    let mut per_param = Vec::with_capacity(params.len());
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var);
        let mut max_diff = 0.0f64;
        let mut scale = analytic.max_abs();
        for i in 0..params[k].numel() {
            let orig = params[k].data()[i];
            work[k].data_mut()[i] = orig + h;
            let plus = eval(&work)?;
            work[k].data_mut()[i] = orig - h;
            let minus = eval(&work)?;
            work[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            scale = scale.max(numeric.abs());
            max_diff = max_diff.max((numeric - analytic.data()[i]).abs());
        }
        per_param.push(max_diff / scale.max(SCALE_FLOOR));
    }
    let max_rel_error = per_param.iter().copied().fold(0.0, f64::max);
    let passed = max_rel_error.is_finite() && max_rel_error < tol;
    Ok(GradCheckReport {
        name: name.to_string(),
        per_param,
        max_rel_error,
        tol,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_is_exact() {
        let p = vec![Tensor::row_vector(vec![0.3, -1.2, 2.5, 0.01])];
        let r = grad_check("sumsq", |_, v| Ok(v[0].mul(v[0])?.sum()), &p, 1e-5, 1e-9).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.max_rel_error < 1e-9);
    }

    #[test]
    fn rejects_nonpositive_step() {
        let p = vec![Tensor::scalar(1.0)];
        assert!(grad_check("x", |_, v| Ok(v[0]), &p, 0.0, 1e-4).is_err());
    }

    #[test]
    fn detects_nondeterminism() {
        use std::cell::Cell;
        let counter = Cell::new(0.0);
        let p = vec![Tensor::scalar(1.0)];
        let err = grad_check(
            "flaky",
            |_, v| {
                counter.set(counter.get() + 1.0);
                Ok(v[0].add_scalar(counter.get()))
            },
            &p,
            1e-5,
            1e-4,
        );
        assert!(err.is_err());
    }

    #[test]
    fn flags_a_wrong_gradient() {
        // Evaluated exactly on the clamp's kink.
        let p = vec![Tensor::scalar(1.0)];
        let r = grad_check("kink", |_, v| v[0].clamp(-10.0, 1.0), &p, 1e-3, 1e-4).unwrap();
        assert!(!r.passed);
    }
}
