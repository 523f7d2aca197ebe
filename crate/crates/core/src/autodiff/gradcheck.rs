use super::{AutodiffError, Tape, Tensor, Var};

/// Outcome of comparing tape gradients against central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Maximum relative error per parameter tensor.
    pub max_rel_error: Vec<f64>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.max_rel_error.iter().copied().fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.worst() <= self.tol
    }
}

/// Magnitude below which errors are judged in absolute terms.
const FLOOR: f64 = 1e-3;

/// Checks `f`'s taped gradients against central finite differences.
///
/// `f` receives a fresh tape and one leaf per entry of `params`, and must
/// return a scalar.
pub fn grad_check<F>(
    f: F,
    params: &[Tensor<f64>],
    step: f64,
    tol: f64,
) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, AutodiffError>,
{
    let eval = |ps: &[Tensor<f64>]| -> Result<f64, AutodiffError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
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

    let mut work = params.to_vec();
    let mut max_rel_error = Vec::with_capacity(params.len());
    for (pi, grads) in analytic.iter().enumerate() {
        let mut worst = 0.0f64;
        for (j, &a) in grads.iter().enumerate() {
            let orig = work[pi].data()[j];
            work[pi].data_mut()[j] = orig + step;
            let plus = eval(&work)?;
            work[pi].data_mut()[j] = orig - step;
            let minus = eval(&work)?;
            work[pi].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let denom = a.abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max((a - numeric).abs() / denom);
        }
        max_rel_error.push(worst);
    }
    Ok(GradCheckReport { max_rel_error, tol })
}
