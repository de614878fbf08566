use super::{Tape, Tensor, TensorError, Var};

/// Denominator floor for relative errors. Central differences in float64
/// carry roughly 1e-11 of round-off, so entries whose true gradient is below
/// this magnitude are compared on an absolute scale instead.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

/// `|a − b| / max(|a|, |b|, REL_ERROR_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let diff = (a - b).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / a.abs().max(b.abs()).max(REL_ERROR_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(parameter index, element index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
}

/// Compares autodiff gradients of `f` against central differences
/// `(f(p+h) − f(p−h)) / 2h`, perturbing one parameter element at a time.
///
/// `f` builds a scalar loss from the parameters registered on a fresh tape and
/// must be deterministic.
pub fn finite_diff_check<F>(f: F, params: &[Tensor<f64>], step: f64) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
{
    if !(step > 0.0) {
        return Err(TensorError::Contract(format!("finite-difference step must be > 0, got {step}")));
    }
    let eval = |ps: &[Tensor<f64>]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(v, p)| tape.grad(*v).map_or_else(|| vec![0.0; p.len()], <[f64]>::to_vec))
        .collect();

    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut numeric = Vec::with_capacity(params.len());
    let mut max_err = 0.0f64;
    let mut worst = None;
    for pi in 0..params.len() {
        let mut col = Vec::with_capacity(params[pi].len());
        for ei in 0..params[pi].len() {
            let orig = work[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + step;
            let up = eval(&work)?;
            work[pi].data_mut()[ei] = orig - step;
            let down = eval(&work)?;
            work[pi].data_mut()[ei] = orig;
            let num = (up - down) / (2.0 * step);
            let err = relative_error(analytic[pi][ei], num);
            if err > max_err || worst.is_none() {
                max_err = max_err.max(err);
                worst = Some((pi, ei));
            }
            col.push(num);
        }
        numeric.push(col);
    }
    Ok(GradCheckReport {
        max_relative_error: max_err,
        worst,
        analytic,
        numeric,
    })
}
