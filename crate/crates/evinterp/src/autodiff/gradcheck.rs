//! Central finite-difference verification of tape gradients.
//!
//! The checked function is any closure that maps the parameter store to a
//! scalar loss by running a fresh forward pass. Analytic gradients come
//! from one `backward` call; each sampled coordinate is then perturbed
//! ±h and compared.

use rand::Rng;

use super::{ParamGrads, ParamStore};

#[derive(Clone, Debug)]
pub struct Failure {
    pub name: String,
    pub flat_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct CheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub failures: Vec<Failure>,
}

impl CheckReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Relative error with a floor: coordinates where both sides are below
/// 1e-9 in magnitude count as matching (zero against rounding noise).
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs());
    if denom < 1e-9 {
        0.0
    } else {
        (analytic - numeric).abs() / denom
    }
}

/// Uniformly samples (parameter, flat index) coordinates.
pub fn sample_coords(
    store: &ParamStore,
    rng: &mut impl Rng,
    n: usize,
) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let p = rng.gen_range(0..store.len());
        let len = store.by_index(p).1.len();
        out.push((p, rng.gen_range(0..len)));
    }
    out
}

/// Central difference of `eval` at one coordinate, restoring the original
/// value bit-exactly afterwards.
pub fn central_diff(
    store: &mut ParamStore,
    eval: &mut dyn FnMut(&ParamStore) -> f64,
    coord: (usize, usize),
    h: f64,
) -> f64 {
    let (p, flat) = coord;
    let original = store.by_index(p).1.as_slice().unwrap()[flat];
    store.by_index_mut(p).as_slice_mut().unwrap()[flat] = original + h;
    let plus = eval(store);
    store.by_index_mut(p).as_slice_mut().unwrap()[flat] = original - h;
    let minus = eval(store);
    store.by_index_mut(p).as_slice_mut().unwrap()[flat] = original;
    (plus - minus) / (2.0 * h)
}

/// Compares analytic gradients against central differences at the given
/// coordinates. Parameters absent from `analytic` have gradient zero.
pub fn run_check(
    store: &mut ParamStore,
    mut eval: impl FnMut(&ParamStore) -> f64,
    analytic: &ParamGrads,
    coords: &[(usize, usize)],
    h: f64,
    tol: f64,
) -> CheckReport {
    let mut report = CheckReport::default();
    for &coord in coords {
        let (p, flat) = coord;
        let a = analytic
            .iter()
            .find(|(idx, _)| *idx == p)
            .map(|(_, g)| g.as_slice().unwrap()[flat])
            .unwrap_or(0.0);
        let n = central_diff(store, &mut eval, coord, h);
        let rel = rel_err(a, n);
        report.checked += 1;
        report.max_rel_err = report.max_rel_err.max(rel);
        if rel > tol {
            report.failures.push(Failure {
                name: store.by_index(p).0.to_string(),
                flat_index: flat,
                analytic: a,
                numeric: n,
                rel_err: rel,
            });
        }
    }
    report
}
