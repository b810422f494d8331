use rand::seq::index::sample;

use super::{ParamStore, Tape, Var};
use crate::error::Result;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
}

/// Relative error with the denominator floored at 1e−8.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences `(f(θ+h) − f(θ−h)) / 2h`, coordinate by coordinate.
///
/// Parameters larger than `max_coords` are checked on a seeded random
/// subset of coordinates.
pub fn grad_check<F>(store: &mut ParamStore, h: f64, max_coords: Option<usize>, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    grad_check_where(store, h, max_coords, |_| true, f)
}

/// [`grad_check`] restricted to the parameters whose names pass `keep`.
pub fn grad_check_where<K, F>(
    store: &mut ParamStore,
    h: f64,
    max_coords: Option<usize>,
    keep: K,
    f: F,
) -> Result<GradCheckReport>
where
    K: Fn(&str) -> bool,
    F: Fn(&mut Tape) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::with_params(store);
        let out = f(&mut tape)?;
        let grads = tape.backward(out)?;
        let mut probe = store.clone();
        probe.zero_grads();
        grads.accumulate_into(&mut probe);
        probe.iter().map(|p| p.grad.clone()).collect::<Vec<_>>()
    };

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::with_params(store);
        let out = f(&mut tape)?;
        Ok(tape.scalar(out))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coords_checked: 0,
    };
    let mut pick = rng::stream(0x6772_6164, rng::streams::CHECK);
    let names: Vec<String> = store.iter().map(|p| p.name.clone()).collect();
    for (pi, name) in names.iter().enumerate() {
        if !keep(name) {
            continue;
        }
        let len = store.get(name).expect("name from store").len();
        let coords: Vec<usize> = match max_coords {
            Some(k) if k < len => {
                let mut c = sample(&mut pick, len, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..len).collect(),
        };
        for j in coords {
            let orig = store.get(name).unwrap().as_slice().expect("standard layout")[j];
            set(store, name, j, orig + h);
            let plus = eval(store)?;
            set(store, name, j, orig - h);
            let minus = eval(store)?;
            set(store, name, j, orig);
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[pi].as_slice().expect("standard layout")[j];
            let err = relative_error(a, numeric);
            report.coords_checked += 1;
            if err > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = err;
                report.worst_param = name.clone();
                report.worst_index = j;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

fn set(store: &mut ParamStore, name: &str, j: usize, v: f64) {
    store.get_mut(name).unwrap().as_slice_mut().expect("standard layout")[j] = v;
}
