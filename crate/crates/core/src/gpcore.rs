//! Covariance assembly, log hyperlikelihood, analytic derivatives, and
//! prediction.
//!
//! Everything downstream of one Cholesky factorization is arranged so that
//! each gradient coordinate and each Hessian entry costs O(n^2): the trace
//! terms contract precomputed matrices elementwise instead of forming any
//! fresh matrix-matrix product per entry.

use std::cell::OnceCell;
use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::Serialize;

use crate::covmodel::{CovarianceModel, HyperPoint, KernelParams, KernelPartials};
use crate::error::{Error, Result};

/// Observed series: equal-length times and values, pairwise distinct times.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    ts: Vec<f64>,
    ys: Vec<f64>,
    min_gap: f64,
    span: f64,
}

impl TrainingSet {
    pub fn new(ts: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if ts.is_empty() {
            return Err(Error::DegenerateData("training set is empty".into()));
        }
        if ts.len() != ys.len() {
            return Err(Error::DimensionMismatch {
                what: "training values",
                expected: ts.len(),
                got: ys.len(),
            });
        }
        if let Some(bad) = ts.iter().chain(ys.iter()).find(|v| !v.is_finite()) {
            return Err(Error::DegenerateData(format!("non-finite entry {bad}")));
        }
        // Store in time order so accessors expose a proper series.
        let mut pairs: Vec<(f64, f64)> = ts.into_iter().zip(ys).collect();
        pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let mut min_gap = f64::INFINITY;
        for w in pairs.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::DegenerateData(format!(
                    "duplicate sample time {}",
                    w[0].0
                )));
            }
            min_gap = min_gap.min(w[1].0 - w[0].0);
        }
        let span = pairs[pairs.len() - 1].0 - pairs[0].0;
        let (ts, ys) = pairs.into_iter().unzip();
        Ok(TrainingSet { ts, ys, min_gap, span })
    }

    pub fn n(&self) -> usize {
        self.ts.len()
    }

    pub fn ts(&self) -> &[f64] {
        &self.ts
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    /// Smallest separation between two sample times (infinite for n = 1).
    pub fn min_gap(&self) -> f64 {
        self.min_gap
    }

    /// Total time span max(t) - min(t).
    pub fn span(&self) -> f64 {
        self.span
    }

    /// Stable fingerprint of the exact sample bits, used to refuse Bayes
    /// factors across different datasets.
    pub fn checksum(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for v in self.ts.iter().chain(self.ys.iter()) {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

/// Factorized covariance at one hyperpoint: Cholesky factor, alpha = K^-1 y,
/// log determinant, the assembled matrix, and a lazily built explicit
/// inverse for the trace contractions.
pub struct KernelState {
    point: HyperPoint,
    k: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    log_det: f64,
    jitter: f64,
    inv: OnceCell<DMatrix<f64>>,
}

impl KernelState {
    pub fn point(&self) -> &HyperPoint {
        &self.point
    }

    pub fn n(&self) -> usize {
        self.k.nrows()
    }

    /// ln det K of the (jittered, if needed) covariance.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// K^-1 y.
    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Diagonal inflation that was needed to factorize, 0.0 for a clean
    /// factorization.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(v)
    }

    /// Explicit K^-1, built once on first use (O(n^3)) and cached; every
    /// later trace contraction against it is O(n^2).
    pub fn k_inv(&self) -> &DMatrix<f64> {
        self.inv.get_or_init(|| self.chol.inverse())
    }

    /// Force the cached inverse to exist, so that later derivative calls
    /// are pure O(n^2) work.
    pub fn ensure_inverse(&self) {
        let _ = self.k_inv();
    }
}

/// Build the covariance matrix over `ts` (noise on the diagonal).
pub(crate) fn build_matrix(params: &KernelParams, ts: &[f64]) -> DMatrix<f64> {
    let n = ts.len();
    let mut k = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = params.smooth(0.0) + params.noise;
        for j in (i + 1)..n {
            let v = params.smooth(ts[i] - ts[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Cholesky with escalating diagonal jitter: on failure the diagonal is
/// inflated by 1e-12 * mean(diag K), escalating tenfold per retry up to
/// 1e-6 * mean(diag K); past that the factorization error reports the first
/// non-positive pivot at the final jitter level.
pub(crate) fn cholesky_with_jitter(k: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = k.nrows();
    let mean_diag = k.trace() / n as f64;
    let max_jitter = 1e-6 * mean_diag;
    let mut jitter = 0.0f64;
    loop {
        let mut kj = k.clone();
        if jitter > 0.0 {
            for i in 0..n {
                kj[(i, i)] += jitter;
            }
        }
        if let Some(c) = Cholesky::new(kj) {
            return Ok((c, jitter));
        }
        jitter = if jitter == 0.0 { 1e-12 * mean_diag } else { 10.0 * jitter };
        if jitter > max_jitter * (1.0 + 1e-12) || !(jitter > 0.0) {
            return Err(Error::Factorization {
                pivot: failing_pivot(k, max_jitter),
                max_jitter,
            });
        }
    }
}

/// Textbook Cholesky probe run only on the error path, to find the first
/// non-positive pivot of K + jitter I.
fn failing_pivot(k: &DMatrix<f64>, jitter: f64) -> usize {
    let n = k.nrows();
    let mut l = k.clone();
    for i in 0..n {
        l[(i, i)] += jitter;
    }
    for j in 0..n {
        let mut d = l[(j, j)];
        for p in 0..j {
            d -= l[(j, p)] * l[(j, p)];
        }
        if d <= 0.0 || !d.is_finite() {
            return j;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = l[(i, j)];
            for p in 0..j {
                s -= l[(i, p)] * l[(j, p)];
            }
            l[(i, j)] = s / d;
        }
    }
    n
}

/// Assemble and factorize the covariance at a hyperpoint.
pub fn assemble(model: &CovarianceModel, point: &HyperPoint, data: &TrainingSet) -> Result<KernelState> {
    let params = KernelParams::new(model, point)?;
    let k = build_matrix(&params, data.ts());
    let (chol, jitter) = cholesky_with_jitter(&k)?;
    let y = DVector::from_column_slice(data.ys());
    let alpha = chol.solve(&y);
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok(KernelState {
        point: point.clone(),
        k,
        chol,
        alpha,
        log_det,
        jitter,
        inv: OnceCell::new(),
    })
}

/// ln P(y | theta) = -1/2 [ y^T K^-1 y + ln det K + n ln 2 pi ].
pub fn log_hyperlikelihood(state: &KernelState, data: &TrainingSet) -> f64 {
    let y = DVector::from_column_slice(data.ys());
    let n = data.n() as f64;
    -0.5 * (y.dot(state.alpha()) + state.log_det() + n * (2.0 * std::f64::consts::PI).ln())
}

/// Elementwise contraction sum_ij a_ij b_ij of two symmetric matrices,
/// equal to Tr(A B) without forming the product.
#[inline]
fn sym_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Tr(A B) for general square matrices: sum_ij a_ij b_ji.
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

/// Gradient of the log hyperlikelihood in the coordinate layout of
/// `partials`: d ln P / d theta_a = 1/2 [ alpha^T (dK) alpha
/// - Tr(K^-1 dK) ]. Each coordinate costs O(n^2) given the cached inverse.
pub fn hyperlikelihood_gradient(
    state: &KernelState,
    partials: &KernelPartials,
    _data: &TrainingSet,
) -> DVector<f64> {
    let kinv = state.k_inv();
    let alpha = state.alpha();
    let mut g = DVector::zeros(partials.m());
    for (a, da) in partials.first.iter().enumerate() {
        let va = da * alpha;
        g[a] = 0.5 * (alpha.dot(&va) - sym_dot(kinv, da));
    }
    g
}

/// Negated second derivative matrix of the log hyperlikelihood,
/// H = -dd ln P, symmetric by construction. After the per-coordinate
/// precomputations each entry is an O(n^2) contraction.
pub fn hyperlikelihood_hessian(
    state: &KernelState,
    partials: &KernelPartials,
    _data: &TrainingSet,
) -> DMatrix<f64> {
    assert!(partials.has_second(), "Hessian needs order-2 partials");
    let kinv = state.k_inv();
    let alpha = state.alpha();
    let m = partials.m();

    let v: Vec<DVector<f64>> = partials.first.iter().map(|da| da * alpha).collect();
    let z: Vec<DVector<f64>> = v.iter().map(|va| state.solve(va)).collect();
    let mk: Vec<DMatrix<f64>> = partials.first.iter().map(|da| kinv * da).collect();

    let mut h = DMatrix::zeros(m, m);
    for a in 0..m {
        for b in a..m {
            let bab = partials.second_at(a, b);
            let dd = -v[a].dot(&z[b]) + 0.5 * alpha.dot(&(bab * alpha))
                + 0.5 * tr_prod(&mk[a], &mk[b])
                - 0.5 * sym_dot(kinv, bab);
            h[(a, b)] = -dd;
            h[(b, a)] = -dd;
        }
    }
    h
}

/// Predictive mean and variance at query times.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PredictiveDistribution {
    pub ts: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Posterior prediction at the state's hyperpoint. Query samples are always
/// fresh: cross-covariances to the training samples carry no noise even at
/// coinciding times, while the query's own variance includes its noise.
pub fn predict(
    state: &KernelState,
    model: &CovarianceModel,
    _data: &TrainingSet,
    query_ts: &[f64],
) -> Result<PredictiveDistribution> {
    let params = KernelParams::new(model, state.point())?;
    let ts = _data.ts();
    let n = ts.len();
    let kss = params.smooth(0.0) + params.noise;
    let mut mean = Vec::with_capacity(query_ts.len());
    let mut var = Vec::with_capacity(query_ts.len());
    for &tq in query_ts {
        let kstar = DVector::from_fn(n, |i, _| params.smooth(tq - ts[i]));
        let m = kstar.dot(state.alpha());
        let w = state.solve(&kstar);
        let v = kss - kstar.dot(&w);
        debug_assert!(v > -1e-8 * kss, "predictive variance {v} below numeric floor");
        mean.push(m);
        var.push(v.max(0.0));
    }
    Ok(PredictiveDistribution { ts: query_ts.to_vec(), mean, var })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covmodel::{kernel_partials, Interval, Mode, PriorSpec};
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn prior() -> PriorSpec {
        PriorSpec {
            window_phi: Interval::new(-3.0, 5.0),
            periodic_phi: Interval::new(-3.0, 5.0),
            xi: Interval::new(-0.5, 0.5),
            psi: Interval::new(-7.0, 7.0),
            mu: 1.0,
            sigma_l: 2.0,
        }
    }

    fn small_case() -> (CovarianceModel, HyperPoint, TrainingSet) {
        let model = CovarianceModel::k2(0.05, prior()).unwrap();
        let point = HyperPoint::new(vec![2.1, 0.4, 1.3], vec![0.15, -0.2], Some(0.3));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ts: Vec<f64> = (0..7).map(|i| i as f64 + 0.3 * rng.random::<f64>()).collect();
        let ys: Vec<f64> = (0..7).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        (model, point, TrainingSet::new(ts, ys).unwrap())
    }

    #[test]
    fn training_set_enforces_invariants() {
        assert!(TrainingSet::new(vec![], vec![]).is_err());
        assert!(TrainingSet::new(vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(TrainingSet::new(vec![0.0, 1.0, 1.0], vec![1.0, 2.0, 3.0]).is_err());
        assert!(TrainingSet::new(vec![0.0, f64::NAN], vec![1.0, 2.0]).is_err());
        let ok = TrainingSet::new(vec![3.0, 0.0, 1.0], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(ok.min_gap(), 1.0);
        assert_eq!(ok.span(), 3.0);
    }

    #[test]
    fn log_hyperlikelihood_matches_dense_oracle() {
        let (model, point, data) = small_case();
        let state = assemble(&model, &point, &data).unwrap();
        assert_eq!(state.jitter(), 0.0);
        let lp = log_hyperlikelihood(&state, &data);

        // Oracle: explicit inverse and LU determinant, no Cholesky shared.
        let params = KernelParams::new(&model, &point).unwrap();
        let k = build_matrix(&params, data.ts());
        let kinv = k.clone().try_inverse().unwrap();
        let det = k.lu().determinant();
        let y = DVector::from_column_slice(data.ys());
        let quad = (&kinv * &y).dot(&y);
        let n = data.n() as f64;
        let oracle = -0.5 * (quad + det.ln() + n * (2.0 * std::f64::consts::PI).ln());
        assert_relative_eq!(lp, oracle, epsilon = 1e-9, max_relative = 1e-9);
    }

    #[test]
    fn jitter_rescues_a_singular_psd_matrix() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (_, jitter) = cholesky_with_jitter(&k).unwrap();
        assert!(jitter > 0.0, "expected a jittered factorization");
    }

    #[test]
    fn jitter_escalation_gives_up_with_pivot_index() {
        // Indefinite matrix: eigenvalues 3 and -1; no admissible jitter can
        // rescue it.
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        match cholesky_with_jitter(&k) {
            Err(Error::Factorization { pivot, .. }) => assert_eq!(pivot, 1),
            other => panic!("expected factorization failure, got {other:?}"),
        }
    }

    #[test]
    fn cached_inverse_inverts() {
        let (model, point, data) = small_case();
        let state = assemble(&model, &point, &data).unwrap();
        let id = state.k_inv() * state.k();
        for i in 0..data.n() {
            for j in 0..data.n() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((id[(i, j)] - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (model, point, data) = small_case();
        let mode = Mode::Full;
        let state = assemble(&model, &point, &data).unwrap();
        let parts = kernel_partials(&model, &point, data.ts(), mode, 1).unwrap();
        let g = hyperlikelihood_gradient(&state, &parts, &data);

        let x = point.flatten(mode).unwrap();
        for a in 0..x.len() {
            let h = 1e-5 * x[a].abs().max(1.0);
            let mut xp = x.clone();
            xp[a] += h;
            let mut xm = x.clone();
            xm[a] -= h;
            let fp = {
                let p = HyperPoint::from_flat(&model, &xp, mode).unwrap();
                log_hyperlikelihood(&assemble(&model, &p, &data).unwrap(), &data)
            };
            let fm = {
                let p = HyperPoint::from_flat(&model, &xm, mode).unwrap();
                log_hyperlikelihood(&assemble(&model, &p, &data).unwrap(), &data)
            };
            let fd = (fp - fm) / (2.0 * h);
            assert!(
                (g[a] - fd).abs() <= 1e-6 * fd.abs().max(1.0),
                "coordinate {a}: analytic {} vs fd {fd}",
                g[a]
            );
        }
    }

    #[test]
    fn scale_gradient_vanishes_at_profiled_optimum() {
        // With K = e^{2 psi} K1, the psi component of the gradient is
        // y^T K^-1 y - n, which is zero exactly when e^{2 psi} equals the
        // profiled scale of K1.
        let (model, point, data) = small_case();
        let reduced = HyperPoint::new(point.phi.clone(), point.xi.clone(), None);
        let base = assemble(&model, &reduced, &data).unwrap();
        let y = DVector::from_column_slice(data.ys());
        let shat_sq = y.dot(base.alpha()) / data.n() as f64;

        let mut at_opt = reduced.clone();
        at_opt.psi = Some(0.5 * shat_sq.ln());
        let state = assemble(&model, &at_opt, &data).unwrap();
        let parts = kernel_partials(&model, &at_opt, data.ts(), Mode::Full, 1).unwrap();
        let g = hyperlikelihood_gradient(&state, &parts, &data);
        let psi_idx = parts.m() - 1;
        assert!(g[psi_idx].abs() < 1e-9, "psi gradient {} at profiled optimum", g[psi_idx]);
    }

    #[test]
    fn hessian_matches_finite_differences_of_gradient() {
        let (model, point, data) = small_case();
        let mode = Mode::Full;
        let state = assemble(&model, &point, &data).unwrap();
        let parts = kernel_partials(&model, &point, data.ts(), mode, 2).unwrap();
        let h = hyperlikelihood_hessian(&state, &parts, &data);
        assert_eq!(h, h.transpose());

        let x = point.flatten(mode).unwrap();
        let grad_at = |x: &[f64]| {
            let p = HyperPoint::from_flat(&model, x, mode).unwrap();
            let s = assemble(&model, &p, &data).unwrap();
            let parts = kernel_partials(&model, &p, data.ts(), mode, 1).unwrap();
            hyperlikelihood_gradient(&s, &parts, &data)
        };
        for a in 0..x.len() {
            let step = 1e-5 * x[a].abs().max(1.0);
            let mut xp = x.clone();
            xp[a] += step;
            let mut xm = x.clone();
            xm[a] -= step;
            let fd = (grad_at(&xp) - grad_at(&xm)) / (2.0 * step);
            for b in 0..x.len() {
                // H = -dd ln P, so compare against the negated difference.
                assert!(
                    (h[(a, b)] + fd[b]).abs() <= 1e-4 * fd[b].abs().max(1.0),
                    "entry ({a},{b}): hessian {} vs -fd {}",
                    h[(a, b)],
                    -fd[b]
                );
            }
        }
    }

    #[test]
    fn inverse_and_determinant_derivative_identities() {
        // d(K^-1) = -K^-1 dK K^-1 and d det K = det K Tr(K^-1 dK), checked
        // to first order against finite differences of assembled matrices.
        let (model, point, data) = small_case();
        let mode = Mode::Full;
        let parts = kernel_partials(&model, &point, data.ts(), mode, 1).unwrap();
        let state = assemble(&model, &point, &data).unwrap();
        let kinv = state.k_inv();
        let x = point.flatten(mode).unwrap();

        let m_at = |x: &[f64]| {
            let p = HyperPoint::from_flat(&model, x, mode).unwrap();
            let params = KernelParams::new(&model, &p).unwrap();
            build_matrix(&params, data.ts())
        };

        for a in 0..x.len() {
            let h = 1e-6 * x[a].abs().max(1.0);
            let mut xp = x.clone();
            xp[a] += h;
            let mut xm = x.clone();
            xm[a] -= h;
            let kp = m_at(&xp);
            let km = m_at(&xm);

            let fd_inv = (kp.clone().try_inverse().unwrap() - km.clone().try_inverse().unwrap())
                / (2.0 * h);
            let formula = -(kinv * &parts.first[a] * kinv);
            let scale = formula.amax().max(1e-12);
            assert!(
                (&fd_inv - &formula).amax() <= 1e-4 * scale,
                "inverse identity failed on coordinate {a}"
            );

            let fd_det = (kp.lu().determinant() - km.lu().determinant()) / (2.0 * h);
            let det = state.k().clone().lu().determinant();
            let formula_det = det * sym_dot(kinv, &parts.first[a]);
            assert!(
                (fd_det - formula_det).abs() <= 1e-4 * formula_det.abs().max(1e-12),
                "determinant identity failed on coordinate {a}: fd {fd_det} vs {formula_det}"
            );
        }
    }

    #[test]
    fn noise_free_prediction_interpolates_training_data() {
        let model = CovarianceModel::k1(0.0, prior()).unwrap();
        let point = HyperPoint::new(vec![2.0, 0.8], vec![0.1], None);
        let ts = vec![0.0, 1.0, 2.5, 4.0, 5.5];
        let ys = vec![0.3, -0.4, 0.9, 0.2, -0.7];
        let data = TrainingSet::new(ts.clone(), ys.clone()).unwrap();
        let state = assemble(&model, &point, &data).unwrap();
        let pred = predict(&state, &model, &data, &ts).unwrap();
        for i in 0..ts.len() {
            assert!((pred.mean[i] - ys[i]).abs() < 1e-7, "mean at training point");
            assert!(pred.var[i] < 1e-7, "variance at training point");
        }
    }

    #[test]
    fn far_query_reverts_to_prior() {
        let (model, point, data) = small_case();
        let state = assemble(&model, &point, &data).unwrap();
        // Window support is e^2.1 ~ 8.2; a query 100 away from every sample
        // is outside every window.
        let pred = predict(&state, &model, &data, &[200.0]).unwrap();
        let sf2 = (2.0f64 * 0.3).exp();
        assert_eq!(pred.mean[0], 0.0);
        assert_relative_eq!(pred.var[0], sf2 * (1.0 + 0.05 * 0.05), max_relative = 1e-12);
    }

    #[test]
    fn predictive_variance_never_negative() {
        let (model, point, data) = small_case();
        let state = assemble(&model, &point, &data).unwrap();
        let qs: Vec<f64> = (0..80).map(|i| -2.0 + 0.15 * i as f64).collect();
        let pred = predict(&state, &model, &data, &qs).unwrap();
        assert!(pred.var.iter().all(|v| *v >= 0.0));
    }
}
