//! Covariance model, prior box, and flat-coordinate transforms.
//!
//! The covariance of two samples at times t, t' is
//!
//! ```text
//! k(t,t') = sigma_f^2 * C(|t-t'|/T0) * exp(-sum_j (2/l_j^2) sin^2(pi (t-t')/T_j))
//!           + sigma_f^2 * sigma_n^2 * delta
//! ```
//!
//! where `C` is a compactly supported window, `delta` is 1 only for the same
//! sample index, and all timescales live in flat coordinates: T = exp(phi),
//! l = exp(mu + sqrt(2) sigma_l erfinv(2 xi)), sigma_f = exp(psi). Flat
//! coordinates make a bounded uniform prior box well-behaved and keep the
//! optimizer unconstrained in scale.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Open interval of a flat prior coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains_open(&self, v: f64) -> bool {
        v > self.lo && v < self.hi
    }

    fn check(&self, name: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(Error::Domain(format!(
                "{name} interval ({}, {}) must be finite and increasing",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

/// Which hyperparameter space an operation works in.
///
/// `Reduced` profiles the overall scale out analytically (sigma_f = 1 inside
/// the kernel, scale handled by the Jeffreys marginalization); `Full` keeps
/// psi = ln sigma_f as an explicit coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Reduced,
    Full,
}

/// Flat prior box plus the fixed parameters of the smoothness map.
///
/// The window timescale and the exchangeable periodic block carry separate
/// intervals; every periodic coordinate shares `periodic_phi` so that the
/// ordering constraint divides the box volume by exactly N!.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub window_phi: Interval,
    pub periodic_phi: Interval,
    pub xi: Interval,
    pub psi: Interval,
    /// Location of the log-smoothness prior pushforward.
    pub mu: f64,
    /// Scale of the log-smoothness prior pushforward.
    pub sigma_l: f64,
}

impl PriorSpec {
    /// Default box for a series with smallest separation `min_gap` and total
    /// span `span`: timescales range over (ln min_gap, ln span), xi is the
    /// open unit interval centered on zero, and sigma_f spans six decades.
    pub fn from_data(min_gap: f64, span: f64) -> Result<Self> {
        if !(min_gap > 0.0 && span > min_gap) {
            return Err(Error::DegenerateData(format!(
                "cannot build a prior box from min gap {min_gap} and span {span}"
            )));
        }
        let phi = Interval::new(min_gap.ln(), span.ln());
        Ok(PriorSpec {
            window_phi: phi,
            periodic_phi: phi,
            xi: Interval::new(-0.5, 0.5),
            psi: Interval::new(1e-3f64.ln(), 1e3f64.ln()),
            mu: 1.0,
            sigma_l: 2.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.window_phi.check("window_phi")?;
        self.periodic_phi.check("periodic_phi")?;
        self.xi.check("xi")?;
        self.psi.check("psi")?;
        if self.xi.lo < -0.5 || self.xi.hi > 0.5 {
            return Err(Error::Domain(format!(
                "xi interval ({}, {}) must lie within (-0.5, 0.5)",
                self.xi.lo, self.xi.hi
            )));
        }
        if !(self.mu.is_finite() && self.sigma_l > 0.0) {
            return Err(Error::Domain(format!(
                "smoothness map needs finite mu and positive sigma_l, got mu={} sigma_l={}",
                self.mu, self.sigma_l
            )));
        }
        Ok(())
    }
}

/// Covariance model: a window factor (optional), `n_periodic` periodic
/// factors, a relative noise level, and the prior box its hyperparameters
/// live in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceModel {
    pub n_periodic: usize,
    pub sigma_n: f64,
    pub has_window: bool,
    pub prior: PriorSpec,
}

impl CovarianceModel {
    pub fn new(n_periodic: usize, sigma_n: f64, has_window: bool, prior: PriorSpec) -> Result<Self> {
        prior.validate()?;
        if !(sigma_n >= 0.0 && sigma_n.is_finite()) {
            return Err(Error::Domain(format!(
                "relative noise level must be finite and non-negative, got {sigma_n}"
            )));
        }
        Ok(CovarianceModel { n_periodic, sigma_n, has_window, prior })
    }

    /// Window plus one periodic component.
    pub fn k1(sigma_n: f64, prior: PriorSpec) -> Result<Self> {
        Self::new(1, sigma_n, true, prior)
    }

    /// Window plus two ordered periodic components.
    pub fn k2(sigma_n: f64, prior: PriorSpec) -> Result<Self> {
        Self::new(2, sigma_n, true, prior)
    }

    /// Window plus `n` ordered periodic components.
    pub fn periodic(n: usize, sigma_n: f64, prior: PriorSpec) -> Result<Self> {
        Self::new(n, sigma_n, true, prior)
    }

    /// Number of flat coordinates in the given space.
    pub fn n_coords(&self, mode: Mode) -> usize {
        (self.has_window as usize)
            + 2 * self.n_periodic
            + matches!(mode, Mode::Full) as usize
    }

    /// Coordinate names in flat layout order: window first, then the
    /// periodic timescales, then their smoothness coordinates, then psi.
    pub fn coord_names(&self, mode: Mode) -> Vec<String> {
        let mut names = Vec::with_capacity(self.n_coords(mode));
        if self.has_window {
            names.push("phi0".to_owned());
        }
        for j in 1..=self.n_periodic {
            names.push(format!("phi{j}"));
        }
        for j in 1..=self.n_periodic {
            names.push(format!("xi{j}"));
        }
        if matches!(mode, Mode::Full) {
            names.push("psi".to_owned());
        }
        names
    }

    /// Lower/upper bounds of the flat box in layout order.
    pub fn bounds(&self, mode: Mode) -> (Vec<f64>, Vec<f64>) {
        let m = self.n_coords(mode);
        let mut lo = Vec::with_capacity(m);
        let mut hi = Vec::with_capacity(m);
        if self.has_window {
            lo.push(self.prior.window_phi.lo);
            hi.push(self.prior.window_phi.hi);
        }
        for _ in 0..self.n_periodic {
            lo.push(self.prior.periodic_phi.lo);
            hi.push(self.prior.periodic_phi.hi);
        }
        for _ in 0..self.n_periodic {
            lo.push(self.prior.xi.lo);
            hi.push(self.prior.xi.hi);
        }
        if matches!(mode, Mode::Full) {
            lo.push(self.prior.psi.lo);
            hi.push(self.prior.psi.hi);
        }
        (lo, hi)
    }

    /// Start of the ordered periodic block and of its paired smoothness
    /// block in flat layout, with the block length.
    pub fn ordered_block(&self) -> (usize, usize, usize) {
        let w = self.has_window as usize;
        (w, w + self.n_periodic, self.n_periodic)
    }

    /// Log Lebesgue measure of the admissible flat box: the product of
    /// coordinate ranges divided by N! for the ordered periodic block, times
    /// the psi range in the full space.
    pub fn log_prior_volume(&self, mode: Mode) -> f64 {
        let mut lv = 0.0;
        if self.has_window {
            lv += self.prior.window_phi.len().ln();
        }
        lv += self.n_periodic as f64 * self.prior.periodic_phi.len().ln();
        lv += self.n_periodic as f64 * self.prior.xi.len().ln();
        for k in 2..=self.n_periodic {
            lv -= (k as f64).ln();
        }
        if matches!(mode, Mode::Full) {
            lv += self.prior.psi.len().ln();
        }
        lv
    }
}

/// A point in flat hyperparameter coordinates.
///
/// `phi` holds the window coordinate first (when the model has a window)
/// followed by the periodic timescale block in non-decreasing order; `xi`
/// pairs with the periodic block; `psi` is present only for full-space
/// points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperPoint {
    pub phi: Vec<f64>,
    pub xi: Vec<f64>,
    pub psi: Option<f64>,
}

impl HyperPoint {
    pub fn new(phi: Vec<f64>, xi: Vec<f64>, psi: Option<f64>) -> Self {
        HyperPoint { phi, xi, psi }
    }

    pub fn mode(&self) -> Mode {
        if self.psi.is_some() {
            Mode::Full
        } else {
            Mode::Reduced
        }
    }

    /// Check lengths, box membership, the smoothness open interval, and the
    /// periodic ordering against the model. Out-of-order points are rejected
    /// rather than silently re-sorted.
    pub fn validate(&self, model: &CovarianceModel) -> Result<()> {
        let w = model.has_window as usize;
        if self.phi.len() != w + model.n_periodic {
            return Err(Error::DimensionMismatch {
                what: "phi coordinates",
                expected: w + model.n_periodic,
                got: self.phi.len(),
            });
        }
        if self.xi.len() != model.n_periodic {
            return Err(Error::DimensionMismatch {
                what: "xi coordinates",
                expected: model.n_periodic,
                got: self.xi.len(),
            });
        }
        let p = &model.prior;
        if model.has_window && !p.window_phi.contains_open(self.phi[0]) {
            return Err(Error::InvalidPoint(format!(
                "phi0 = {} outside ({}, {})",
                self.phi[0], p.window_phi.lo, p.window_phi.hi
            )));
        }
        for (j, &v) in self.phi[w..].iter().enumerate() {
            if !p.periodic_phi.contains_open(v) {
                return Err(Error::InvalidPoint(format!(
                    "phi{} = {v} outside ({}, {})",
                    j + 1,
                    p.periodic_phi.lo,
                    p.periodic_phi.hi
                )));
            }
        }
        for win in self.phi[w..].windows(2) {
            if win[0] > win[1] {
                return Err(Error::InvalidPoint(format!(
                    "periodic timescale block must be non-decreasing, got {} > {}",
                    win[0], win[1]
                )));
            }
        }
        for (j, &v) in self.xi.iter().enumerate() {
            if !p.xi.contains_open(v) {
                return Err(Error::InvalidPoint(format!(
                    "xi{} = {v} outside ({}, {})",
                    j + 1,
                    p.xi.lo,
                    p.xi.hi
                )));
            }
        }
        if let Some(psi) = self.psi {
            if !p.psi.contains_open(psi) {
                return Err(Error::InvalidPoint(format!(
                    "psi = {psi} outside ({}, {})",
                    p.psi.lo, p.psi.hi
                )));
            }
        }
        Ok(())
    }

    /// Flat layout: phi block, xi block, then psi when `mode` is full.
    pub fn flatten(&self, mode: Mode) -> Result<Vec<f64>> {
        let mut x = Vec::with_capacity(self.phi.len() + self.xi.len() + 1);
        x.extend_from_slice(&self.phi);
        x.extend_from_slice(&self.xi);
        if matches!(mode, Mode::Full) {
            x.push(self.psi.ok_or_else(|| {
                Error::InvalidPoint("full-space layout needs psi".into())
            })?);
        }
        Ok(x)
    }

    pub fn from_flat(model: &CovarianceModel, x: &[f64], mode: Mode) -> Result<Self> {
        let m = model.n_coords(mode);
        if x.len() != m {
            return Err(Error::DimensionMismatch {
                what: "flat coordinates",
                expected: m,
                got: x.len(),
            });
        }
        let w = model.has_window as usize;
        let n = model.n_periodic;
        Ok(HyperPoint {
            phi: x[..w + n].to_vec(),
            xi: x[w + n..w + 2 * n].to_vec(),
            psi: matches!(mode, Mode::Full).then(|| x[w + 2 * n]),
        })
    }
}

/// Hyperparameters mapped out of flat coordinates.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NaturalParams {
    /// Window timescale T0 (present when the model has a window).
    pub window_timescale: Option<f64>,
    /// Periodic timescales T_j, non-decreasing.
    pub periods: Vec<f64>,
    /// Smoothness lengths l_j of each periodic factor.
    pub smoothness: Vec<f64>,
    /// Overall scale; 1 for reduced-space points.
    pub sigma_f: f64,
}

/// Map a flat point to natural hyperparameters.
pub fn to_natural(point: &HyperPoint, spec: &PriorSpec, has_window: bool) -> Result<NaturalParams> {
    let w = has_window as usize;
    let window_timescale = has_window.then(|| point.phi[0].exp());
    let periods: Vec<f64> = point.phi[w..].iter().map(|p| p.exp()).collect();
    let mut smoothness = Vec::with_capacity(point.xi.len());
    for &xi in &point.xi {
        let z = erf_inv(2.0 * xi)?;
        smoothness.push((spec.mu + std::f64::consts::SQRT_2 * spec.sigma_l * z).exp());
    }
    Ok(NaturalParams {
        window_timescale,
        periods,
        smoothness,
        sigma_f: point.psi.map_or(1.0, f64::exp),
    })
}

/// Compactly supported window: the Wendland C^2 polynomial
/// (1-tau)^5 (8 tau^2 + 5 tau + 1) on [0, 1), identically zero for
/// tau >= 1. Positive definite in one dimension, monotone non-increasing,
/// C(0) = 1, and both the value and the first derivative vanish at the
/// support edge.
pub fn wendland_window(tau: f64) -> Result<f64> {
    if tau < 0.0 || tau.is_nan() {
        return Err(Error::Domain(format!(
            "window argument must be non-negative, got {tau}"
        )));
    }
    Ok(window_value(tau))
}

#[inline]
fn window_value(tau: f64) -> f64 {
    if tau >= 1.0 {
        return 0.0;
    }
    let r = 1.0 - tau;
    r.powi(5) * (8.0 * tau * tau + 5.0 * tau + 1.0)
}

/// dC/dtau = -14 tau (4 tau + 1) (1-tau)^4 on the support.
#[inline]
fn window_d1(tau: f64) -> f64 {
    if tau >= 1.0 {
        return 0.0;
    }
    let r = 1.0 - tau;
    -14.0 * tau * (4.0 * tau + 1.0) * r.powi(4)
}

/// d2C/dtau2 = 14 (1-tau)^3 (24 tau^2 - 3 tau - 1) on the support.
#[inline]
fn window_d2(tau: f64) -> f64 {
    if tau >= 1.0 {
        return 0.0;
    }
    let r = 1.0 - tau;
    14.0 * r.powi(3) * (24.0 * tau * tau - 3.0 * tau - 1.0)
}

const SQRT_PI: f64 = 1.7724538509055160;

/// Inverse error function on (-1, 1): a rational approximation refined by
/// Newton steps against erf, which brings the relative error near machine
/// precision across the interval. Saturated arguments are a domain error.
pub fn erf_inv(u: f64) -> Result<f64> {
    if !(u > -1.0 && u < 1.0) {
        return Err(Error::Domain(format!(
            "erf_inv argument must lie strictly inside (-1, 1), got {u}"
        )));
    }
    let mut z = statrs::function::erf::erf_inv(u);
    // Newton against an accurate forward erf; skip deep in the tail where
    // erf(z) rounds to +-1 and the correction would be pure noise.
    if z.abs() < 5.0 {
        for _ in 0..2 {
            let f = libm::erf(z) - u;
            z -= f * 0.5 * SQRT_PI * (z * z).exp();
        }
    }
    Ok(z)
}

/// Precomputed per-point quantities shared by covariance evaluation and the
/// analytic partials.
#[derive(Clone, Debug)]
pub(crate) struct KernelParams {
    pub t0: Option<f64>,
    pub periods: Vec<f64>,
    /// a_j = 2 / l_j^2.
    pub a: Vec<f64>,
    pub sigma_f_sq: f64,
    /// sigma_f^2 sigma_n^2, added on the diagonal.
    pub noise: f64,
    /// dL/dxi and d2L/dxi2 of L = ln l as a function of xi.
    pub l_d1: Vec<f64>,
    pub l_d2: Vec<f64>,
}

impl KernelParams {
    pub fn new(model: &CovarianceModel, point: &HyperPoint) -> Result<Self> {
        let nat = to_natural(point, &model.prior, model.has_window)?;
        let a: Vec<f64> = nat.smoothness.iter().map(|l| 2.0 / (l * l)).collect();
        let mut l_d1 = Vec::with_capacity(point.xi.len());
        let mut l_d2 = Vec::with_capacity(point.xi.len());
        let c = std::f64::consts::SQRT_2 * model.prior.sigma_l;
        for &xi in &point.xi {
            let z = erf_inv(2.0 * xi)?;
            let ez2 = (z * z).exp();
            // d/dxi erfinv(2 xi) = sqrt(pi) e^{z^2}; second derivative
            // 2 pi z e^{2 z^2}.
            l_d1.push(c * SQRT_PI * ez2);
            l_d2.push(c * 2.0 * std::f64::consts::PI * z * ez2 * ez2);
        }
        let sigma_f_sq = nat.sigma_f * nat.sigma_f;
        Ok(KernelParams {
            t0: nat.window_timescale,
            periods: nat.periods,
            a,
            sigma_f_sq,
            noise: sigma_f_sq * model.sigma_n * model.sigma_n,
            l_d1,
            l_d2,
        })
    }

    /// Noise-free covariance of two samples separated by `dt`.
    #[inline]
    pub fn smooth(&self, dt: f64) -> f64 {
        let adt = dt.abs();
        let mut v = self.sigma_f_sq;
        if let Some(t0) = self.t0 {
            let tau = adt / t0;
            if tau >= 1.0 {
                return 0.0;
            }
            v *= window_value(tau);
        }
        let mut expo = 0.0;
        for (tj, aj) in self.periods.iter().zip(&self.a) {
            let s = (std::f64::consts::PI * adt / tj).sin();
            expo += aj * s * s;
        }
        v * (-expo).exp()
    }
}

/// Covariance of two samples. Identical `t` and `t_prime` are treated as
/// the same sample, so the noise term is included; cross-covariances between
/// distinct samples never carry noise regardless of their times.
pub fn kernel_eval(model: &CovarianceModel, point: &HyperPoint, t: f64, t_prime: f64) -> Result<f64> {
    let params = KernelParams::new(model, point)?;
    let mut v = params.smooth(t - t_prime);
    if t == t_prime {
        v += params.noise;
    }
    Ok(v)
}

/// Flat-coordinate role of each entry of a gradient/Hessian vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum CoordRole {
    Window,
    /// 0-based periodic component index.
    Phi(usize),
    Xi(usize),
    Psi,
}

fn coord_roles(model: &CovarianceModel, mode: Mode) -> Vec<CoordRole> {
    let mut roles = Vec::with_capacity(model.n_coords(mode));
    if model.has_window {
        roles.push(CoordRole::Window);
    }
    for j in 0..model.n_periodic {
        roles.push(CoordRole::Phi(j));
    }
    for j in 0..model.n_periodic {
        roles.push(CoordRole::Xi(j));
    }
    if matches!(mode, Mode::Full) {
        roles.push(CoordRole::Psi);
    }
    roles
}

/// Packed upper-triangle index of the coordinate pair (a, b), a <= b.
#[inline]
fn pair_index(m: usize, a: usize, b: usize) -> usize {
    debug_assert!(a <= b && b < m);
    a * m - a * (a + 1) / 2 + b
}

/// Analytic partial derivatives of the covariance matrix with respect to the
/// flat coordinates, evaluated over a time grid.
pub struct KernelPartials {
    mode: Mode,
    m: usize,
    /// dK/dtheta_a in flat layout order.
    pub first: Vec<DMatrix<f64>>,
    /// d2K/dtheta_a dtheta_b, packed upper triangle, when order 2 was asked.
    second: Option<Vec<DMatrix<f64>>>,
}

impl KernelPartials {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn has_second(&self) -> bool {
        self.second.is_some()
    }

    /// Second partial for the unordered coordinate pair (a, b).
    pub fn second_at(&self, a: usize, b: usize) -> &DMatrix<f64> {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        &self.second.as_ref().expect("second-order partials were not requested")
            [pair_index(self.m, a, b)]
    }
}

/// Build dK/dtheta (order 1) and optionally d2K/dtheta dtheta' (order 2)
/// over `ts`, in the coordinate layout of `mode`. One sweep over the upper
/// triangle fills every matrix; the diagonal only responds to psi.
pub fn kernel_partials(
    model: &CovarianceModel,
    point: &HyperPoint,
    ts: &[f64],
    mode: Mode,
    order: usize,
) -> Result<KernelPartials> {
    if order != 1 && order != 2 {
        return Err(Error::Domain(format!("partial order must be 1 or 2, got {order}")));
    }
    if matches!(mode, Mode::Full) && point.psi.is_none() {
        return Err(Error::InvalidPoint(
            "full-space partials need a point with psi".into(),
        ));
    }
    let params = KernelParams::new(model, point)?;
    let n = ts.len();
    let m = model.n_coords(mode);
    let roles = coord_roles(model, mode);
    let np = model.n_periodic;

    let mut first = vec![DMatrix::<f64>::zeros(n, n); m];
    let mut second = (order == 2).then(|| vec![DMatrix::<f64>::zeros(n, n); m * (m + 1) / 2]);

    // Scratch for the per-pair component quantities.
    let mut g1_phi = vec![0.0; np];
    let mut g2_phi = vec![0.0; np];
    let mut g1_xi = vec![0.0; np];
    let mut g2_xi = vec![0.0; np];
    let mut g2_phixi = vec![0.0; np];

    // Per-coordinate first derivative of the smooth entry, reused for the
    // cross terms of the second order sweep.
    let mut d1 = vec![0.0; m];

    for i in 0..n {
        for jcol in i..n {
            let diag = i == jcol;
            let adt = (ts[i] - ts[jcol]).abs();

            // Window factor and its phi0 derivatives.
            let (w, w1, w2) = match params.t0 {
                Some(t0) => {
                    let tau = adt / t0;
                    if tau >= 1.0 {
                        // Entirely outside the support: every partial of the
                        // smooth part vanishes; psi still sees the (zero)
                        // smooth entry and, on the diagonal, the noise.
                        (0.0, 0.0, 0.0)
                    } else {
                        (
                            window_value(tau),
                            -tau * window_d1(tau),
                            tau * window_d1(tau) + tau * tau * window_d2(tau),
                        )
                    }
                }
                None => (1.0, 0.0, 0.0),
            };

            let mut expo = 0.0;
            for c in 0..np {
                let x = std::f64::consts::PI * adt / params.periods[c];
                let (sx, cx) = x.sin_cos();
                let s = sx * sx;
                let sin2x = 2.0 * sx * cx;
                let a = params.a[c];
                expo += a * s;
                g1_phi[c] = a * x * sin2x;
                g2_phi[c] = -a * x * (sin2x + 2.0 * x * (cx * cx - sx * sx));
                let lp = params.l_d1[c];
                g1_xi[c] = 2.0 * a * lp * s;
                g2_xi[c] = 2.0 * a * s * (params.l_d2[c] - 2.0 * lp * lp);
                g2_phixi[c] = -2.0 * a * lp * x * sin2x;
            }
            let e = (-expo).exp();
            // Smooth covariance entry and the full entry (noise on diag).
            let smooth = params.sigma_f_sq * w * e;
            let kentry = smooth + if diag { params.noise } else { 0.0 };
            let we_sig = params.sigma_f_sq * e;

            for (idx, role) in roles.iter().enumerate() {
                d1[idx] = match role {
                    CoordRole::Window => we_sig * w1,
                    CoordRole::Phi(c) => smooth * g1_phi[*c],
                    CoordRole::Xi(c) => smooth * g1_xi[*c],
                    CoordRole::Psi => 2.0 * kentry,
                };
            }
            for idx in 0..m {
                let v = d1[idx];
                if v != 0.0 {
                    first[idx][(i, jcol)] = v;
                    if !diag {
                        first[idx][(jcol, i)] = v;
                    }
                }
            }

            if let Some(sec) = second.as_mut() {
                for a_idx in 0..m {
                    for b_idx in a_idx..m {
                        let v = match (roles[a_idx], roles[b_idx]) {
                            (CoordRole::Window, CoordRole::Window) => we_sig * w2,
                            (CoordRole::Window, CoordRole::Phi(c)) => we_sig * w1 * g1_phi[c],
                            (CoordRole::Window, CoordRole::Xi(c)) => we_sig * w1 * g1_xi[c],
                            (CoordRole::Phi(c), CoordRole::Phi(d)) if c == d => {
                                smooth * (g1_phi[c] * g1_phi[c] + g2_phi[c])
                            }
                            (CoordRole::Phi(c), CoordRole::Phi(d)) => smooth * g1_phi[c] * g1_phi[d],
                            (CoordRole::Phi(c), CoordRole::Xi(d)) if c == d => {
                                smooth * (g1_phi[c] * g1_xi[c] + g2_phixi[c])
                            }
                            (CoordRole::Phi(c), CoordRole::Xi(d)) => smooth * g1_phi[c] * g1_xi[d],
                            (CoordRole::Xi(c), CoordRole::Xi(d)) if c == d => {
                                smooth * (g1_xi[c] * g1_xi[c] + g2_xi[c])
                            }
                            (CoordRole::Xi(c), CoordRole::Xi(d)) => smooth * g1_xi[c] * g1_xi[d],
                            (CoordRole::Psi, CoordRole::Psi) => 4.0 * kentry,
                            (_, CoordRole::Psi) => 2.0 * d1[a_idx],
                            // Layout puts psi last and xi after phi, so the
                            // remaining combinations cannot occur with
                            // a_idx <= b_idx.
                            (pa, pb) => unreachable!("coordinate pair ({pa:?}, {pb:?})"),
                        };
                        if v != 0.0 {
                            let mat = &mut sec[pair_index(m, a_idx, b_idx)];
                            mat[(i, jcol)] = v;
                            if !diag {
                                mat[(jcol, i)] = v;
                            }
                        }
                    }
                }
            }
        }
    }

    Ok(KernelPartials { mode, m, first, second })
}
