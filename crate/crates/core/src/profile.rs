//! Analytic treatment of the overall scale hyperparameter.
//!
//! With K(sigma_f) = sigma_f^2 K1, the scale that maximizes the
//! hyperlikelihood is available in closed form,
//! sigma_f_hat^2 = y^T K1^-1 y / n, and substituting it back gives the
//! profiled objective ln P_max over the remaining coordinates. Under a
//! Jeffreys hyperprior the scale can be marginalized outright; the result
//! differs from ln P_max by a constant that depends only on n, so one
//! reduced optimization serves both.
//!
//! All operations here require a state assembled at sigma_f = 1, i.e. from
//! a reduced-space point.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::covmodel::KernelPartials;
use crate::gpcore::{KernelState, TrainingSet};

/// Profiled scale and objective value at one reduced-space point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProfiledReport {
    pub sigma_f_hat_sq: f64,
    pub log_p_max: f64,
}

fn assert_reduced(state: &KernelState) {
    assert!(
        state.point().psi.is_none(),
        "profiled operations need a reduced-space state assembled at sigma_f = 1"
    );
}

/// Scale estimate sigma_f_hat^2 = y^T K1^-1 y / n.
pub fn sigma_f_hat_sq(state: &KernelState, data: &TrainingSet) -> f64 {
    assert_reduced(state);
    let y = DVector::from_column_slice(data.ys());
    y.dot(state.alpha()) / data.n() as f64
}

/// Profiled log hyperlikelihood
/// ln P_max = -(n/2) ln(2 pi e sigma_f_hat^2) - 1/2 ln det K1.
pub fn log_p_max(state: &KernelState, data: &TrainingSet) -> f64 {
    profiled_report(state, data).log_p_max
}

pub fn profiled_report(state: &KernelState, data: &TrainingSet) -> ProfiledReport {
    let shat = sigma_f_hat_sq(state, data);
    let n = data.n() as f64;
    let two_pi_e = 2.0 * std::f64::consts::PI * std::f64::consts::E;
    ProfiledReport {
        sigma_f_hat_sq: shat,
        log_p_max: -0.5 * n * (two_pi_e * shat).ln() - 0.5 * state.log_det(),
    }
}

#[inline]
fn sym_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn tr_prod(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for j in 0..n {
        let col = a.column(j);
        let row = b.row(j);
        for i in 0..n {
            s += col[i] * row[i];
        }
    }
    s
}

/// Gradient of ln P_max:
/// d ln P_max / d theta_a = alpha^T (dK) alpha / (2 sigma_f_hat^2)
///                          - 1/2 Tr(K1^-1 dK).
/// Identical to the unprofiled gradient except that the data-fit term is
/// rescaled by the profiled variance; the two coincide when
/// sigma_f_hat^2 = 1.
pub fn log_p_max_gradient(
    state: &KernelState,
    partials: &KernelPartials,
    data: &TrainingSet,
) -> DVector<f64> {
    assert_reduced(state);
    let shat = sigma_f_hat_sq(state, data);
    let kinv = state.k_inv();
    let alpha = state.alpha();
    let mut g = DVector::zeros(partials.m());
    for (a, da) in partials.first.iter().enumerate() {
        let va = da * alpha;
        g[a] = 0.5 * alpha.dot(&va) / shat - 0.5 * sym_dot(kinv, da);
    }
    g
}

/// ln of the constant relating the Jeffreys-marginalized evidence at fixed
/// shape coordinates to the profiled peak:
/// ln P_marg - ln P_max = ln[ (1/2) (2e/n)^{n/2} Gamma(n/2) ].
/// Evaluated through ln Gamma so large n cannot overflow.
pub fn marg_log_const(n: usize) -> f64 {
    assert!(n >= 1, "marginalization constant needs n >= 1");
    let nf = n as f64;
    let ln2 = std::f64::consts::LN_2;
    -ln2 + 0.5 * nf * (ln2 + 1.0 - nf.ln()) + statrs::function::gamma::ln_gamma(0.5 * nf)
}

/// Negated second-derivative matrix of ln P_max, symmetric by construction.
/// Entry (a, b) after the per-coordinate precomputations:
/// -dd ln P_max = -[ (alpha^T dK_a alpha)(alpha^T dK_b alpha) / (2 n shat^2)
///                   - alpha^T dK_a K^-1 dK_b alpha / shat
///                   + alpha^T ddK_ab alpha / (2 shat)
///                   + 1/2 Tr(K^-1 dK_a K^-1 dK_b) - 1/2 Tr(K^-1 ddK_ab) ]
/// with shat = sigma_f_hat^2.
pub fn profiled_hessian(
    state: &KernelState,
    partials: &KernelPartials,
    data: &TrainingSet,
) -> DMatrix<f64> {
    assert_reduced(state);
    assert!(partials.has_second(), "profiled Hessian needs order-2 partials");
    let shat = sigma_f_hat_sq(state, data);
    let n = data.n() as f64;
    let kinv = state.k_inv();
    let alpha = state.alpha();
    let m = partials.m();

    let v: Vec<DVector<f64>> = partials.first.iter().map(|da| da * alpha).collect();
    let q: Vec<f64> = v.iter().map(|va| alpha.dot(va)).collect();
    let z: Vec<DVector<f64>> = v.iter().map(|va| state.solve(va)).collect();
    let mk: Vec<DMatrix<f64>> = partials.first.iter().map(|da| kinv * da).collect();

    let mut h = DMatrix::zeros(m, m);
    for a in 0..m {
        for b in a..m {
            let bab = partials.second_at(a, b);
            let dd = q[a] * q[b] / (2.0 * n * shat * shat) - v[a].dot(&z[b]) / shat
                + 0.5 * alpha.dot(&(bab * alpha)) / shat
                + 0.5 * tr_prod(&mk[a], &mk[b])
                - 0.5 * sym_dot(kinv, bab);
            h[(a, b)] = -dd;
            h[(b, a)] = -dd;
        }
    }
    h
}

/// Per-coordinate standard errors of the reduced-space peak estimate: the
/// square roots of the diagonal of the inverse negated Hessian, which is
/// the asymptotic covariance of the maximizer. Returns None when the
/// curvature is not positive definite, i.e. when the point is not a
/// trustworthy interior maximum.
pub fn peak_standard_errors(
    state: &KernelState,
    partials: &KernelPartials,
    data: &TrainingSet,
) -> Option<Vec<f64>> {
    let h = profiled_hessian(state, partials, data);
    let inv = nalgebra::Cholesky::new(h)?.inverse();
    Some((0..inv.nrows()).map(|i| inv[(i, i)].sqrt()).collect())
}
