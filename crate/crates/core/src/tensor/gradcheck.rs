use super::{ParameterSet, Result, Tape, Var};

/// Outcome of [`grad_check`].
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

const STEP: f64 = 1e-5;
/// Denominator floor: gradients smaller than this are compared absolutely.
const FLOOR: f64 = 1e-4;

/// Compares tape gradients against central differences for every scalar of
/// every parameter in `params`.
pub fn grad_check<F>(params: &ParameterSet, forward: F) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &ParameterSet) -> Result<Var>,
{
    let tape = Tape::new();
    let loss = forward(&tape, params)?;
    tape.backward(loss)?;
    let analytic: std::collections::HashMap<String, Vec<f64>> =
        tape.param_grads().into_iter().collect();

    let eval = |p: &ParameterSet| -> Result<f64> {
        let t = Tape::no_grad();
        let l = forward(&t, p)?;
        Ok(t.item(l))
    };

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let n = params.get(&name).map(|t| t.len()).unwrap_or(0);
        for i in 0..n {
            let orig = work.get(&name).expect("present").data()[i];
            work.get_mut(&name).expect("present").data_mut()[i] = orig + STEP;
            let plus = eval(&work)?;
            work.get_mut(&name).expect("present").data_mut()[i] = orig - STEP;
            let minus = eval(&work)?;
            work.get_mut(&name).expect("present").data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            let a = analytic.get(&name).map(|g| g[i]).unwrap_or(0.0);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = name.clone();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}
