use super::{ModelParams, Result, Tape, Var};

/// Outcome of [`check_gradients`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: (String, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-3)`. The floor keeps entries whose true
/// derivative is tiny from being judged on cancellation noise.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Compares reverse-mode gradients of the scalar built by `f` against central
/// differences with step `h`, for every entry of every parameter (or at most
/// `max_per_param` evenly spaced entries of each).
pub fn check_gradients<F>(params: &ModelParams, h: f64, max_per_param: Option<usize>, f: F) -> Result<GradCheck>
where
    F: Fn(&Tape, &ModelParams) -> Result<Var>,
{
    let tape = Tape::new();
    let loss = f(&tape, params)?;
    let grads = tape.backward(loss)?.for_params(params);
    let eval = |p: &ModelParams| -> Result<f64> {
        let t = Tape::new();
        let l = f(&t, p)?;
        Ok(t.value(l).item())
    };

    let mut out = GradCheck { max_rel_err: 0.0, worst: (String::new(), 0), analytic: 0.0, numeric: 0.0, checked: 0 };
    let mut work = params.clone();
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let len = params.get(&name).expect("present").len();
        let stride = max_per_param.map_or(1, |m| len.div_ceil(m.max(1)).max(1));
        for k in (0..len).step_by(stride) {
            let orig = params.get(&name).expect("present").data()[k];
            work.get_mut(&name).expect("present").data_mut()[k] = orig + h;
            let up = eval(&work)?;
            work.get_mut(&name).expect("present").data_mut()[k] = orig - h;
            let down = eval(&work)?;
            work.get_mut(&name).expect("present").data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.get(&name).expect("all params").data()[k];
            let e = relative_error(analytic, numeric);
            out.checked += 1;
            if e > out.max_rel_err || out.checked == 1 {
                out.max_rel_err = e;
                out.worst = (name.clone(), k);
                out.analytic = analytic;
                out.numeric = numeric;
            }
        }
    }
    Ok(out)
}
