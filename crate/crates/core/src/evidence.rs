//! Model evidence over the prior box, two ways.
//!
//! The Laplace route expands the log hyperlikelihood to second order around
//! the fitted peak and integrates the resulting Gaussian against the
//! uniform prior; it costs one Hessian evaluation on top of the fit. The
//! Monte-Carlo route averages the likelihood over uniform draws from the
//! box; it is unbiased but needs the posterior mass to be a visible
//! fraction of the box, which the effective sample size reports. In
//! reduced mode both routes account for the analytically marginalized
//! scale through the same n-dependent constant.

use std::fmt;

use nalgebra::Cholesky;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::covmodel::{kernel_partials, CovarianceModel, HyperPoint, Mode};
use crate::error::{Error, Result};
use crate::gpcore::{assemble, log_hyperlikelihood, hyperlikelihood_hessian, TrainingSet};
use crate::profile::{log_p_max, marg_log_const, profiled_hessian};
use crate::train::FitResult;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceMethod {
    Laplace,
    MonteCarlo,
}

/// Context for judging a Laplace estimate: where the peak sits relative to
/// the box, how the multistart ended, and whether the curvature was usable.
#[derive(Clone, Debug, Serialize)]
pub struct LaplaceDiagnostics {
    pub hessian_pd: bool,
    /// Distance from the peak to the nearest box face, in the units of that
    /// coordinate.
    pub min_edge_distance: f64,
    pub nearest_edge_coordinate: String,
    /// Endpoint clusters among the multistart runs (sup-norm tolerance
    /// 1e-2 in log coordinates).
    pub distinct_basins: usize,
    pub converged_starts: usize,
    pub n_starts: usize,
}

impl fmt::Display for LaplaceDiagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "hessian_pd={}, peak {:.3e} from box edge along {}, {} basin(s) from {} start(s) ({} converged)",
            self.hessian_pd,
            self.min_edge_distance,
            self.nearest_edge_coordinate,
            self.distinct_basins,
            self.n_starts,
            self.converged_starts
        )
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EvidenceResult {
    pub method: EvidenceMethod,
    pub mode: Mode,
    /// ln of the evidence, prior volume included.
    pub log_z: f64,
    /// Delta-method standard error of `log_z` (Monte-Carlo only).
    pub std_err: Option<f64>,
    /// Effective sample size of the weight set (Monte-Carlo only).
    pub ess: Option<f64>,
    pub n_evals: usize,
    /// The expansion point (Laplace) or the highest-likelihood draw
    /// (Monte-Carlo).
    pub peak_point: Option<HyperPoint>,
    /// ln det of the negated log-likelihood Hessian (Laplace only).
    pub hessian_log_det: Option<f64>,
    /// Fingerprint of the training data the evidence refers to.
    pub data_checksum: u64,
    pub diagnostics: Option<LaplaceDiagnostics>,
}

fn distinct_basins(ends: &[&[f64]], tol: f64) -> usize {
    let mut reps: Vec<&[f64]> = Vec::new();
    'outer: for e in ends {
        for r in &reps {
            if e.iter().zip(r.iter()).all(|(a, b)| (a - b).abs() <= tol) {
                continue 'outer;
            }
        }
        reps.push(e);
    }
    reps.len()
}

fn build_diagnostics(model: &CovarianceModel, fit: &FitResult, hessian_pd: bool) -> LaplaceDiagnostics {
    let (lo, hi) = model.bounds(fit.mode);
    let names = model.coord_names(fit.mode);
    let x = fit
        .point
        .flatten(fit.mode)
        .expect("fit point must flatten in its own mode");
    let mut min_d = f64::INFINITY;
    let mut nearest = String::new();
    for i in 0..x.len() {
        let d = (x[i] - lo[i]).min(hi[i] - x[i]);
        if d < min_d {
            min_d = d;
            nearest = names[i].clone();
        }
    }
    let converged_ends: Vec<&[f64]> = fit
        .starts
        .iter()
        .filter(|r| r.converged)
        .map(|r| r.end.as_slice())
        .collect();
    let all_ends: Vec<&[f64]> = fit.starts.iter().map(|r| r.end.as_slice()).collect();
    let basins = if converged_ends.is_empty() {
        distinct_basins(&all_ends, 1e-2)
    } else {
        distinct_basins(&converged_ends, 1e-2)
    };
    LaplaceDiagnostics {
        hessian_pd,
        min_edge_distance: min_d,
        nearest_edge_coordinate: nearest,
        distinct_basins: basins,
        converged_starts: fit.converged_starts,
        n_starts: fit.n_starts,
    }
}

/// The bare Laplace formula: ln of the Gaussian integral of a peaked
/// log-integrand against a uniform density 1/V,
/// ln Z = peak_log - log_volume + (m/2) ln 2 pi - 1/2 ln det H.
/// Returns (log_z, hessian_log_det), or None when H is not positive
/// definite.
pub fn laplace_log_z(peak_log: f64, h: &nalgebra::DMatrix<f64>, log_volume: f64) -> Option<(f64, f64)> {
    let m = h.nrows() as f64;
    let chol = Cholesky::new(h.clone())?;
    let log_det_h: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let two_pi = 2.0 * std::f64::consts::PI;
    Some((peak_log - log_volume + 0.5 * m * two_pi.ln() - 0.5 * log_det_h, log_det_h))
}

/// Laplace (saddle-point) evidence around a fitted peak:
/// ln Z = ln P(peak) - ln V + (m/2) ln 2 pi - 1/2 ln det H,
/// with H the negated log-likelihood Hessian at the peak. In reduced mode
/// the peak value additionally carries the scale-marginalization constant,
/// and V excludes the psi range.
///
/// Fails with structured diagnostics when H is not positive definite; a
/// peak pressed against the box edge or split across basins is visible in
/// the same diagnostics even when the factorization succeeds.
pub fn laplace_evidence(
    model: &CovarianceModel,
    data: &TrainingSet,
    fit: &FitResult,
) -> Result<EvidenceResult> {
    if fit.converged_starts == 0 {
        return Err(Error::Optimization(
            "no multistart run converged; the expansion point is not a trusted peak".into(),
        ));
    }
    let mode = fit.mode;
    let state = assemble(model, &fit.point, data)?;
    let parts = kernel_partials(model, &fit.point, data.ts(), mode, 2)?;
    let h = match mode {
        Mode::Reduced => profiled_hessian(&state, &parts, data),
        Mode::Full => hyperlikelihood_hessian(&state, &parts, data),
    };

    let peak = match mode {
        Mode::Reduced => fit.log_p_at_peak + marg_log_const(data.n()),
        Mode::Full => fit.log_p_at_peak,
    };
    let Some((log_z, log_det_h)) = laplace_log_z(peak, &h, model.log_prior_volume(mode)) else {
        return Err(Error::UntrustedLaplace(build_diagnostics(model, fit, false)));
    };

    Ok(EvidenceResult {
        method: EvidenceMethod::Laplace,
        mode,
        log_z,
        std_err: None,
        ess: None,
        n_evals: fit.n_evals + 1,
        peak_point: Some(fit.point.clone()),
        hessian_log_det: Some(log_det_h),
        data_checksum: data.checksum(),
        diagnostics: Some(build_diagnostics(model, fit, true)),
    })
}

/// Summary of a log-sum-exp average of `exp(w_i)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanExpStats {
    /// ln( mean_i exp(w_i) ), overflow-safe.
    pub log_mean: f64,
    /// Delta-method standard error of `log_mean`.
    pub std_err: f64,
    /// Effective sample size (sum e)^2 / (sum e^2).
    pub ess: f64,
}

/// Overflow-safe mean of exponentials with its uncertainty. Entries of
/// -inf contribute zero weight but still count toward the sample size.
pub fn log_mean_exp_stats(ws: &[f64]) -> MeanExpStats {
    assert!(!ws.is_empty(), "need at least one weight");
    let s = ws.len() as f64;
    let max = ws.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return MeanExpStats { log_mean: f64::NEG_INFINITY, std_err: f64::INFINITY, ess: 0.0 };
    }
    let mut a1 = 0.0;
    let mut a2 = 0.0;
    for &w in ws {
        let e = (w - max).exp();
        a1 += e;
        a2 += e * e;
    }
    let log_mean = max + a1.ln() - s.ln();
    // Sample variance of the shifted weights; the shift cancels in the
    // relative error, which is what the log carries.
    let var = ((a2 - a1 * a1 / s) / (s - 1.0)).max(0.0);
    let std_err = if ws.len() > 1 { var.sqrt() * s.sqrt() / a1 } else { f64::INFINITY };
    MeanExpStats { log_mean, std_err, ess: a1 * a1 / a2 }
}

/// Draw one point uniformly from the admissible box: iid timescales are
/// sorted into the canonical order (their smoothness companions stay iid,
/// so no pairing is needed), everything else is iid uniform.
fn sample_box(model: &CovarianceModel, mode: Mode, rng: &mut ChaCha8Rng) -> HyperPoint {
    let pr = &model.prior;
    let u = |iv: crate::covmodel::Interval, rng: &mut ChaCha8Rng| {
        iv.lo + (iv.hi - iv.lo) * rng.random::<f64>()
    };
    let mut phi = Vec::with_capacity(model.has_window as usize + model.n_periodic);
    if model.has_window {
        phi.push(u(pr.window_phi, rng));
    }
    let mut periodic: Vec<f64> = (0..model.n_periodic).map(|_| u(pr.periodic_phi, rng)).collect();
    periodic.sort_by(f64::total_cmp);
    phi.extend(periodic);
    let xi: Vec<f64> = (0..model.n_periodic).map(|_| u(pr.xi, rng)).collect();
    let psi = matches!(mode, Mode::Full).then(|| u(pr.psi, rng));
    HyperPoint::new(phi, xi, psi)
}

/// Threshold below which a Monte-Carlo estimate is refused.
pub const MIN_ESS: f64 = 10.0;

/// Direct Monte-Carlo evidence: average the likelihood over `budget`
/// uniform draws from the prior box. Draws where the covariance cannot be
/// factorized contribute zero likelihood but still count. Returns an
/// `UnreliableEstimate` error carrying the partial result when the
/// effective sample size falls below `MIN_ESS`.
pub fn numeric_evidence(
    model: &CovarianceModel,
    data: &TrainingSet,
    mode: Mode,
    budget: usize,
    seed: u64,
) -> Result<EvidenceResult> {
    model.prior.validate()?;
    if budget < 1000 {
        return Err(Error::Optimization(format!(
            "Monte-Carlo budget must be at least 1000, got {budget}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ws = Vec::with_capacity(budget);
    let mut best: Option<(f64, HyperPoint)> = None;
    for _ in 0..budget {
        let point = sample_box(model, mode, &mut rng);
        let w = match assemble(model, &point, data) {
            Ok(state) => match mode {
                Mode::Reduced => log_p_max(&state, data),
                Mode::Full => log_hyperlikelihood(&state, data),
            },
            Err(_) => f64::NEG_INFINITY,
        };
        if w.is_finite() && best.as_ref().is_none_or(|(b, _)| w > *b) {
            best = Some((w, point));
        }
        ws.push(w);
    }

    let stats = log_mean_exp_stats(&ws);
    let shift = match mode {
        Mode::Reduced => marg_log_const(data.n()),
        Mode::Full => 0.0,
    };
    let result = EvidenceResult {
        method: EvidenceMethod::MonteCarlo,
        mode,
        log_z: stats.log_mean + shift,
        std_err: Some(stats.std_err),
        ess: Some(stats.ess),
        n_evals: budget,
        peak_point: best.map(|(_, p)| p),
        hessian_log_det: None,
        data_checksum: data.checksum(),
        diagnostics: None,
    };
    if stats.ess < MIN_ESS {
        return Err(Error::UnreliableEstimate {
            ess: stats.ess,
            min_ess: MIN_ESS,
            partial: Box::new(result),
        });
    }
    Ok(result)
}

/// ln of the Bayes factor of `b` over `a`, with the Monte-Carlo
/// uncertainties combined in quadrature (Laplace contributes none).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BayesFactor {
    pub log_bf: f64,
    pub std_err: f64,
}

/// Bayes factor of model `b` over model `a`; both evidences must refer to
/// the same data.
pub fn bayes_factor(a: &EvidenceResult, b: &EvidenceResult) -> Result<BayesFactor> {
    if a.data_checksum != b.data_checksum {
        return Err(Error::MismatchedDatasets);
    }
    let va = a.std_err.unwrap_or(0.0).powi(2);
    let vb = b.std_err.unwrap_or(0.0).powi(2);
    Ok(BayesFactor { log_bf: b.log_z - a.log_z, std_err: (va + vb).sqrt() })
}
