//! Shared fixtures and quadrature helpers for the integration suites.

#![allow(dead_code)]

use gptrain::covmodel::{kernel_partials, PriorSpec};
use gptrain::data::{sample_gp, subset};
use gptrain::gpcore::assemble;
use gptrain::profile::{log_p_max_gradient, profiled_report};
use gptrain::train::{cg_maximize, CgOptions, Domain};
use gptrain::{CovarianceModel, HyperPoint, Mode, Result, TrainingSet};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Benchmark truth for the two-component model: window timescale e^3.5,
/// periods e^1.5 and e^3.0, both smoothness coordinates centered.
pub fn bench_truth() -> HyperPoint {
    HyperPoint::new(vec![3.5, 1.5, 3.0], vec![0.0, 0.0], None)
}

pub fn unit_grid(n: usize) -> Vec<f64> {
    (1..=n).map(|i| i as f64).collect()
}

/// Draw a two-component series at the benchmark truth on the unit grid.
pub fn bench_series(n_grid: usize, seed: u64) -> TrainingSet {
    let ts = unit_grid(n_grid);
    let prior = PriorSpec::from_data(1.0, (n_grid - 1) as f64).unwrap();
    let model = CovarianceModel::k2(1e-2, prior).unwrap();
    let ys = sample_gp(&model, &bench_truth(), &ts, seed).unwrap();
    TrainingSet::new(ts, ys).unwrap()
}

pub fn prior_for(data: &TrainingSet) -> PriorSpec {
    PriorSpec::from_data(data.min_gap(), data.span()).unwrap()
}

/// Random n-point subset of `full`, kept in time order.
pub fn random_subset(full: &TrainingSet, n: usize, seed: u64) -> TrainingSet {
    let mut idx: Vec<usize> = (0..full.n()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    idx.truncate(n);
    idx.sort_unstable();
    subset(full, &idx).unwrap()
}

/// Single conjugate-gradient ascent of the reduced objective from `x0`
/// (clamped 2% inside the box edges), returning the endpoint and its
/// profiled log p_max. Used as a global-basin reference: a multistart fit
/// that matches or beats an ascent started at the generating hyperpoint has
/// found at least that basin.
pub fn reduced_ascent(
    model: &CovarianceModel,
    data: &TrainingSet,
    x0: &[f64],
) -> (Vec<f64>, f64) {
    let domain = Domain::from_model(model, Mode::Reduced);
    let mut obj = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let point = HyperPoint::from_flat(model, x, Mode::Reduced)?;
        let state = assemble(model, &point, data)?;
        let parts = kernel_partials(model, &point, data.ts(), Mode::Reduced, 1)?;
        let rep = profiled_report(&state, data);
        let g = log_p_max_gradient(&state, &parts, data);
        Ok((rep.log_p_max, g.iter().copied().collect()))
    };
    let clamped: Vec<f64> = x0
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let w = domain.hi[i] - domain.lo[i];
            v.clamp(domain.lo[i] + 0.02 * w, domain.hi[i] - 0.02 * w)
        })
        .collect();
    let opts = CgOptions { max_evals: 400, ..CgOptions::default() };
    let out = cg_maximize(&mut obj, &clamped, &domain, &opts).expect("ascent evaluates");
    (out.x, out.f)
}

/// Central difference of a scalar function along coordinate `i`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[i] += h;
    xm[i] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

/// Piecewise adaptive Simpson over consecutive knot pairs. Splitting at
/// caller-supplied knots keeps a sharply peaked integrand from being missed
/// by the first coarse samples.
pub fn adaptive_simpson_split(f: &mut dyn FnMut(f64) -> f64, knots: &[f64], tol: f64) -> f64 {
    knots
        .windows(2)
        .map(|w| adaptive_simpson(f, w[0], w[1], tol))
        .sum()
}

/// Adaptive Simpson quadrature to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(f, a, fa, b, fb, m, fm, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(
    f: &mut dyn FnMut(f64) -> f64,
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    m: f64,
    fm: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> f64 {
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson_rec(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1)
            + simpson_rec(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1)
    }
}
