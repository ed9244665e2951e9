use super::{GradError, Tape, Tensor, Var};

const RELATIVE_FLOOR: f64 = 1e-6;

/// Outcome of comparing taped gradients with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteDiffReport {
    pub max_relative_error: f64,
    pub coordinates: usize,
    /// `(input, flat index)` of the coordinate with the largest error.
    pub worst: Option<(usize, usize)>,
}

/// Checks every coordinate of every input.
pub fn finite_diff_check<F, E>(f: F, point: &[Tensor], step: f64) -> Result<FiniteDiffReport, E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<GradError>,
{
    let coords: Vec<(usize, usize)> = point
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
        .collect();
    finite_diff_check_at(f, point, step, &coords)
}

/// Checks the listed `(input, flat index)` coordinates only.
///
/// `f` rebuilds the computation on a fresh tape from leaves holding the
/// inputs and returns a `1×1` node. Relative error uses the denominator
/// `max(|analytic|, |numeric|, 1e-6)`; below that, central differences at
/// `step = 1e-4` resolve little more than `ε·|f| / step` roundoff, and
/// gradients that vanish identically (key biases under a row softmax)
/// would otherwise report one ulp of the loss as a large relative error.
pub fn finite_diff_check_at<F, E>(
    f: F,
    point: &[Tensor],
    step: f64,
    coords: &[(usize, usize)],
) -> Result<FiniteDiffReport, E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<GradError>,
{
    let eval = |inputs: &[Tensor]| -> Result<(Tape, Vec<Var>, Var), E> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };

    let (tape, vars, out) = eval(point)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get_or_zeros(&tape, v)).collect();

    let mut report = FiniteDiffReport {
        max_relative_error: 0.0,
        coordinates: 0,
        worst: None,
    };
    let mut shifted = point.to_vec();
    for &(i, j) in coords {
        let original = shifted[i].data()[j];
        shifted[i].data_mut()[j] = original + step;
        let (t_plus, _, o_plus) = eval(&shifted)?;
        shifted[i].data_mut()[j] = original - step;
        let (t_minus, _, o_minus) = eval(&shifted)?;
        shifted[i].data_mut()[j] = original;

        let numeric = (t_plus.value(o_plus).data()[0] - t_minus.value(o_minus).data()[0]) / (2.0 * step);
        let exact = analytic[i].data()[j];
        let denom = exact.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
        let rel = (exact - numeric).abs() / denom;
        report.coordinates += 1;
        if rel > report.max_relative_error || report.worst.is_none() {
            report.max_relative_error = report.max_relative_error.max(rel);
            report.worst = Some((i, j));
        }
    }
    Ok(report)
}
