use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Gradients, NumResult, ParamId, ParamStore};

/// Result of comparing analytic gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
    /// Coordinates left out because a perturbation crossed a kink.
    pub coords_skipped: usize,
}

/// Floor on the relative-error denominator so coordinates whose true
/// gradient is ~0 are judged by absolute error.
const REL_FLOOR: f64 = 1e-6;

/// Compares `analytic` against `(f(θ+h·eᵢ) − f(θ−h·eᵢ)) / 2h`.
///
/// `max_coords` limits the number of coordinates checked per parameter
/// (sampled with `seed`); `None` checks every coordinate. The relative
/// error per coordinate is `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn grad_check(
    f: &mut dyn FnMut(&ParamStore<f64>) -> NumResult<f64>,
    params: &ParamStore<f64>,
    analytic: &Gradients<f64>,
    h: f64,
    max_coords: Option<usize>,
    seed: u64,
) -> NumResult<GradCheckReport> {
    let mut g = |s: &ParamStore<f64>| Ok((f(s)?, Vec::new()));
    grad_check_piecewise(&mut g, params, analytic, h, max_coords, seed)
}

/// Like [`grad_check`] for piecewise-smooth functions: `f` also returns
/// an activation pattern, and coordinates where either perturbation
/// changes it are skipped, since central differences straddle the kink.
pub fn grad_check_piecewise(
    f: &mut dyn FnMut(&ParamStore<f64>) -> NumResult<(f64, Vec<bool>)>,
    params: &ParamStore<f64>,
    analytic: &Gradients<f64>,
    h: f64,
    max_coords: Option<usize>,
    seed: u64,
) -> NumResult<GradCheckReport> {
    let base = f(params)?.1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coords_checked: 0,
        coords_skipped: 0,
    };
    for p in 0..params.len() {
        let id = ParamId(p);
        let n = params.get(id).len();
        let coords: Vec<usize> = match max_coords {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for i in coords {
            let orig = params.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + h;
            let (plus, plus_pattern) = f(&work)?;
            work.get_mut(id).data_mut()[i] = orig - h;
            let (minus, minus_pattern) = f(&work)?;
            work.get_mut(id).data_mut()[i] = orig;
            if plus_pattern != base || minus_pattern != base {
                report.coords_skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.get(id).data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.coords_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = params.name(id).to_string();
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
