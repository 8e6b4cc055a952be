use super::params::ParamSet;
use super::tape::{Tape, Var};
use super::{Precision, Tensor, TensorResult};

pub const GRAD_CHECK_STEP: f64 = 1e-6;

/// Second-difference magnitude, relative to the step, above which a
/// coordinate is treated as sitting on a kink of a piecewise-linear op.
const KINK_RATIO: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst `|analytic - numeric| / max(|analytic|, |numeric|, 1)`.
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(input, coordinate)` pairs skipped as non-differentiable.
    pub excluded: Vec<(usize, usize)>,
    pub worst: Option<(usize, usize)>,
}

impl GradCheckReport {
    fn new() -> Self {
        GradCheckReport { max_rel_error: 0.0, checked: 0, excluded: Vec::new(), worst: None }
    }

    /// `span` is the representable distance between the two probe points.
    fn record(&mut self, input: usize, coord: usize, analytic: f64, fp: f64, f0: f64, fm: f64, span: f64) {
        if (fp + fm - 2.0 * f0).abs() > KINK_RATIO * span / 2.0 {
            self.excluded.push((input, coord));
            return;
        }
        let numeric = (fp - fm) / span;
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0);
        self.checked += 1;
        if err > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = self.max_rel_error.max(err);
            self.worst = Some((input, coord));
        }
    }
}

/// Compares tape gradients of a scalar function of `inputs` against central
/// differences with step `h`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], h: f64) -> TensorResult<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> TensorResult<Var>,
{
    let eval = |xs: &[Tensor]| -> TensorResult<f64> {
        let mut tape = Tape::new(Precision::F64);
        let vars = xs.iter().map(|x| tape.input(x.clone())).collect::<TensorResult<Vec<_>>>()?;
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };
    let mut tape = Tape::new(Precision::F64);
    let vars = inputs.iter().map(|x| tape.input(x.clone())).collect::<TensorResult<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    let f0 = tape.value(out).item();
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport::new();
    let mut xs = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var).map(|g| g.into_data()).unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        for c in 0..inputs[i].len() {
            let orig = xs[i].data()[c];
            xs[i].data_mut()[c] = orig + h;
            let fp = eval(&xs)?;
            xs[i].data_mut()[c] = orig - h;
            let fm = eval(&xs)?;
            xs[i].data_mut()[c] = orig;
            report.record(i, c, analytic[c], fp, f0, fm, (orig + h) - (orig - h));
        }
    }
    Ok(report)
}

/// Same comparison with respect to every scalar of a parameter set. The
/// closure records the parameters it uses through [`Tape::param`].
pub fn grad_check_params<F>(params: &ParamSet, f: F, h: f64) -> TensorResult<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamSet) -> TensorResult<Var>,
{
    let mut tape = Tape::new(Precision::F64);
    let out = f(&mut tape, params)?;
    let f0 = tape.value(out).item();
    let grads = tape.backward(out)?;
    let analytic = grads.params(params);

    let mut report = GradCheckReport::new();
    let mut work = params.clone();
    let ids: Vec<_> = params.iter().map(|(id, _)| id).collect();
    for (i, id) in ids.into_iter().enumerate() {
        for c in 0..params.value(id).len() {
            let orig = work.value(id).data()[c];
            let probe = |v: f64, work: &mut ParamSet| -> TensorResult<f64> {
                work.values_mut(id)[c] = v;
                let mut t = Tape::new(Precision::F64);
                let o = f(&mut t, work)?;
                Ok(t.value(o).item())
            };
            let fp = probe(orig + h, &mut work)?;
            let fm = probe(orig - h, &mut work)?;
            work.values_mut(id)[c] = orig;
            report.record(i, c, analytic[i][c], fp, f0, fm, (orig + h) - (orig - h));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let w = Tensor::matrix(3, 2, vec![0.5, -1.0, 2.0, 0.25, -0.75, 1.5]).unwrap();
        let x = Tensor::matrix(2, 3, vec![0.1, 0.2, 0.3, -0.4, 0.5, -0.6]).unwrap();
        let r = grad_check(
            |t, v| {
                let y = t.matmul(v[0], v[1])?;
                t.sum(y)
            },
            &[x, w],
            GRAD_CHECK_STEP,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-10, "{r:?}");
        assert_eq!(r.checked, 12);
    }

    #[test]
    fn l1_kinks_are_excluded_not_failed() {
        let p = Tensor::matrix(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let r = grad_check(|t, v| t.l1_loss(v[0], v[1]), &[p.clone(), p], GRAD_CHECK_STEP).unwrap();
        assert_eq!(r.excluded.len(), 8);
        assert_eq!(r.checked, 0);
    }
}
