//! Hyperlikelihood maximization over the prior box.
//!
//! The search space is an open box with one twist: the periodic timescale
//! coordinates form an ordered block (phi_1 <= ... <= phi_N), and each one
//! carries a paired smoothness coordinate that must travel with it when the
//! block is re-sorted. The optimizer is a Polak-Ribiere conjugate-gradient
//! ascent. Every objective evaluation returns the gradient along with the
//! value, so directional derivatives along a search line are free; the line
//! search exploits that, backtracking under an Armijo gate and then
//! refining by a safeguarded secant on the directional derivative. Near-
//! exact line maximization is what lets conjugate directions terminate in
//! about as many iterations as there are coordinates even when the
//! curvature is badly scaled. Steps that would leave the box are capped
//! analytically, and steps that break the ordering are re-sorted to the
//! canonical representative (restarting the conjugate direction, since the
//! gradient history no longer refers to the same labeling). Multiple
//! starts are drawn from a Latin hypercube over the box.
//!
//! Convergence is declared on a scaled gradient test,
//! ||g||_inf < gtol * max(1, |log p|): the log hyperlikelihood grows like
//! n, and so does the rounding noise in its gradient, so an absolute
//! threshold that suits n = 30 is unreachable at n = 300.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::covmodel::{kernel_partials, CovarianceModel, HyperPoint, Mode};
use crate::error::{Error, Result};
use crate::gpcore::{assemble, log_hyperlikelihood, hyperlikelihood_gradient, TrainingSet};
use crate::profile::{log_p_max_gradient, profiled_report};

/// Feasible region in flat coordinates: an open box, optionally with an
/// ordered block whose entries carry paired companions.
#[derive(Clone, Debug)]
pub struct Domain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// (block_start, paired_start, len): coordinates
    /// x[block_start .. block_start + len] are kept non-decreasing, and a
    /// permutation applied to them is applied to
    /// x[paired_start .. paired_start + len] as well.
    pub ordered: Option<(usize, usize, usize)>,
}

impl Domain {
    pub fn from_model(model: &CovarianceModel, mode: Mode) -> Domain {
        let (lo, hi) = model.bounds(mode);
        let ordered = if model.n_periodic >= 2 {
            let (phi_start, xi_start, len) = model.ordered_block();
            Some((phi_start, xi_start, len))
        } else {
            None
        };
        Domain { lo, hi, ordered }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains_open(&self, x: &[f64]) -> bool {
        x.len() == self.lo.len()
            && x.iter()
                .zip(self.lo.iter().zip(self.hi.iter()))
                .all(|(&v, (&lo, &hi))| v > lo && v < hi && v.is_finite())
    }

    /// Restore the canonical ordering of the block, permuting companions
    /// alongside. Returns true if anything moved.
    pub fn canonicalize(&self, x: &mut [f64]) -> bool {
        let Some((bs, ps, len)) = self.ordered else {
            return false;
        };
        let block = &x[bs..bs + len];
        if block.windows(2).all(|w| w[0] <= w[1]) {
            return false;
        }
        let mut idx: Vec<usize> = (0..len).collect();
        idx.sort_by(|&i, &j| x[bs + i].total_cmp(&x[bs + j]));
        let phi: Vec<f64> = idx.iter().map(|&i| x[bs + i]).collect();
        let xi: Vec<f64> = idx.iter().map(|&i| x[ps + i]).collect();
        x[bs..bs + len].copy_from_slice(&phi);
        x[ps..ps + len].copy_from_slice(&xi);
        true
    }
}

/// Step from `x` along `dir`, halving the step until the result lies
/// strictly inside the box, then restore the ordered representative.
/// Returns the new point and whether the re-sort permuted coordinates.
/// Falls back to `x` itself if even a tiny step escapes (only possible when
/// `x` starts on the boundary).
pub fn bounded_step(x: &[f64], dir: &[f64], step: f64, domain: &Domain) -> (Vec<f64>, bool) {
    let mut t = step;
    for _ in 0..200 {
        let trial: Vec<f64> = x.iter().zip(dir).map(|(&xi, &di)| xi + t * di).collect();
        if domain.contains_open(&trial) {
            let mut out = trial;
            let permuted = domain.canonicalize(&mut out);
            return (out, permuted);
        }
        t *= 0.5;
    }
    (x.to_vec(), false)
}

#[derive(Clone, Copy, Debug)]
pub struct CgOptions {
    /// Convergence threshold on the gradient sup-norm, scaled by the
    /// objective magnitude: the run is converged when
    /// ||g||_inf < gtol * max(1, |f|). The scaling keeps the test
    /// meaningful when |f| is in the hundreds and the gradient's floating-
    /// point noise floor (from traces of K^-1 against partial matrices)
    /// sits above an absolute threshold.
    pub gtol: f64,
    pub max_iters: usize,
    /// Hard cap on objective evaluations (failed evaluations count too).
    pub max_evals: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions { gtol: 1e-6, max_iters: 500, max_evals: usize::MAX }
    }
}

#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iters: usize,
    pub n_evals: usize,
    pub converged: bool,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest step along `dir` from the interior point `x` that stays inside
/// the closed box; the caller shaves a relative margin off to stay strictly
/// interior. Zero when `x` sits at an edge that `dir` pushes through.
fn max_feasible_step(x: &[f64], dir: &[f64], domain: &Domain) -> f64 {
    let mut t = f64::INFINITY;
    for i in 0..x.len() {
        if dir[i] > 0.0 {
            t = t.min((domain.hi[i] - x[i]) / dir[i]);
        } else if dir[i] < 0.0 {
            t = t.min((domain.lo[i] - x[i]) / dir[i]);
        }
    }
    t.max(0.0)
}

/// Maximize a smooth objective over `domain` by conjugate-gradient ascent.
///
/// The objective returns the value and gradient at a point, or an error if
/// it cannot be evaluated there (such evaluations still count against the
/// budget and the line search simply shrinks past them). An error at the
/// starting point itself is returned to the caller.
pub fn cg_maximize<F>(
    objective: &mut F,
    x0: &[f64],
    domain: &Domain,
    opts: &CgOptions,
) -> Result<CgOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut x = x0.to_vec();
    domain.canonicalize(&mut x);
    if !domain.contains_open(&x) {
        return Err(Error::Optimization(format!(
            "start point lies outside the open prior box: {x:?}"
        )));
    }

    let mut n_evals = 1usize;
    let (mut fx, mut g) = objective(&x)?;
    let mut dir = g.clone();
    let mut prev_step = 1.0 / inf_norm(&g).max(1.0);
    let mut prev_gain = 0.0f64;
    let mut converged = false;
    let mut iters = 0usize;
    // Set after a failed line search along the raw gradient; a second
    // failure in a row means the run is stuck and must stop.
    let mut after_failure = false;

    const C1: f64 = 1e-4;
    const C2: f64 = 0.1;

    struct Trial {
        t: f64,
        x: Vec<f64>,
        f: f64,
        g: Vec<f64>,
    }

    'outer: for iter in 0..opts.max_iters {
        iters = iter;
        if inf_norm(&g) < opts.gtol * fx.abs().max(1.0) {
            converged = true;
            break;
        }
        if dot(&dir, &g) <= 0.0 {
            // Conjugate direction lost ascent; restart along the gradient.
            dir.copy_from_slice(&g);
        }

        let slope0 = dot(&dir, &g);
        let t_cap = max_feasible_step(&x, &dir, domain) * (1.0 - 1e-9);
        // First trial from a quadratic model of the previous gain; the
        // first iteration has no history and scales off the gradient.
        let mut t = if prev_gain > 0.0 && slope0 > 0.0 {
            (2.0 * prev_gain / slope0).min(1e3)
        } else {
            prev_step
        };
        t = t.min(t_cap);
        if !(t > 0.0) {
            // Pinned against the box along this direction.
            if after_failure {
                break;
            }
            dir.copy_from_slice(&g);
            after_failure = true;
            continue;
        }

        // Directional-derivative bracket: `lo` always carries a
        // non-negative slope, `hi` a negative slope or a failed Armijo
        // gate. Every objective call also yields the slope for free, so
        // after the Armijo backtracking phase a safeguarded secant drives
        // the slope toward zero, giving a near-exact line maximization.
        let mut best: Option<Trial> = None;
        let mut permuted_accept = false;
        let mut lo = (0.0f64, slope0);
        let mut hi: Option<(f64, f64)> = None;
        for _ in 0..60 {
            if n_evals >= opts.max_evals {
                break 'outer;
            }
            let (xt, permuted) = bounded_step(&x, &dir, t, domain);
            if xt == x {
                t *= 0.5;
                continue;
            }
            n_evals += 1;
            match objective(&xt) {
                Ok((ft, gt)) if ft.is_finite() => {
                    if permuted {
                        // The step crossed an ordering boundary, so line
                        // derivatives no longer refer to this labeling;
                        // accept plain improvement, otherwise shrink.
                        if ft > fx {
                            best = Some(Trial { t, x: xt, f: ft, g: gt });
                            permuted_accept = true;
                            break;
                        }
                        t *= 0.5;
                        continue;
                    }
                    let st = dot(&gt, &dir);
                    if ft >= fx + C1 * t * slope0 {
                        if best.as_ref().is_none_or(|b| ft > b.f) {
                            best = Some(Trial { t, x: xt, f: ft, g: gt });
                        }
                        if st.abs() <= C2 * slope0 {
                            break;
                        }
                        if st > 0.0 {
                            lo = (t, st);
                        } else if hi.is_none_or(|(th, _)| t < th) {
                            hi = Some((t, st));
                        }
                    } else if hi.is_none_or(|(th, _)| t < th) {
                        hi = Some((t, st));
                    }
                    t = match hi {
                        Some((th, sh)) => {
                            if th <= lo.0 {
                                break;
                            }
                            let denom = lo.1 - sh;
                            let guess = if denom > 0.0 {
                                lo.0 + lo.1 * (th - lo.0) / denom
                            } else {
                                0.5 * (lo.0 + th)
                            };
                            guess.clamp(lo.0 + 0.1 * (th - lo.0), th - 0.1 * (th - lo.0))
                        }
                        None => {
                            if t >= 0.999 * t_cap {
                                // Already running along the box face.
                                break;
                            }
                            (4.0 * t).min(t_cap)
                        }
                    };
                    if !(t > 0.0) || !t.is_finite() {
                        break;
                    }
                }
                _ => {
                    // Unevaluable point (e.g. factorization failure near a
                    // corner): treat as -inf and shrink.
                    t *= 0.5;
                }
            }
        }

        let Some(b) = best else {
            if after_failure {
                // Even steepest ascent found no acceptable step.
                break;
            }
            dir.copy_from_slice(&g);
            after_failure = true;
            continue;
        };
        after_failure = false;

        // Polak-Ribiere+ with a Powell restart: when successive gradients
        // stay far from orthogonal the conjugate history is stale.
        let gg_old = dot(&g, &g);
        let g_new_old = dot(&b.g, &g);
        let g_new_new = dot(&b.g, &b.g);
        let beta = if permuted_accept || g_new_old.abs() >= 0.2 * g_new_new {
            0.0
        } else {
            ((g_new_new - g_new_old) / gg_old).max(0.0)
        };
        prev_gain = b.f - fx;
        prev_step = b.t.min(1e3);
        x = b.x;
        fx = b.f;
        g = b.g;
        for i in 0..dir.len() {
            dir[i] = g[i] + beta * dir[i];
        }
    }

    if inf_norm(&g) < opts.gtol * fx.abs().max(1.0) {
        converged = true;
    }
    Ok(CgOutcome { x, f: fx, grad: g, iters, n_evals, converged })
}

/// One multistart run.
#[derive(Clone, Debug, Serialize)]
pub struct StartRecord {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub log_p: f64,
    pub grad_inf_norm: f64,
    pub iters: usize,
    pub n_evals: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct FitResult {
    pub point: HyperPoint,
    pub mode: Mode,
    pub log_p_at_peak: f64,
    /// Profiled scale at the peak (reduced mode only).
    pub sigma_f_hat_sq: Option<f64>,
    pub grad_inf_norm: f64,
    /// Total objective evaluations across all starts, failed ones included.
    pub n_evals: usize,
    pub converged_starts: usize,
    pub n_starts: usize,
    pub starts: Vec<StartRecord>,
}

#[derive(Clone, Copy, Debug)]
pub struct FitOptions {
    pub mode: Mode,
    pub n_starts: usize,
    pub seed: u64,
    /// Gradient sup-norm threshold, relative to max(1, |log p|); see
    /// [`CgOptions::gtol`].
    pub gtol: f64,
    pub max_iters: usize,
    /// Evaluation budget per start (failed evaluations count).
    pub max_evals_per_start: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            mode: Mode::Reduced,
            n_starts: 10,
            seed: 0,
            gtol: 1e-6,
            max_iters: 500,
            max_evals_per_start: usize::MAX,
        }
    }
}

/// Latin hypercube over the open box: one stratum per start in every
/// coordinate, jittered, with the strata assignment shuffled independently
/// per coordinate.
fn latin_hypercube(domain: &Domain, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let d = domain.dim();
    let mut points = vec![vec![0.0; d]; k];
    for j in 0..d {
        let mut strata: Vec<usize> = (0..k).collect();
        strata.shuffle(rng);
        for (i, point) in points.iter_mut().enumerate() {
            // Keep the jitter strictly interior so no sample can land on
            // the (excluded) box boundary.
            let u = 1e-9 + (1.0 - 2e-9) * rng.random::<f64>();
            let frac = (strata[i] as f64 + u) / k as f64;
            point[j] = domain.lo[j] + frac * (domain.hi[j] - domain.lo[j]);
        }
    }
    for p in &mut points {
        domain.canonicalize(p);
    }
    points
}

/// Maximize the (profiled or full) log hyperlikelihood from `n_starts`
/// Latin-hypercube starts and return the best peak found.
///
/// In reduced mode the objective is the profiled ln P_max with sigma_f
/// eliminated analytically; in full mode psi is one more coordinate of the
/// search. Evaluation counts include one extra assembly at the winning
/// point to report the profiled scale there.
pub fn maximize(model: &CovarianceModel, data: &TrainingSet, opts: &FitOptions) -> Result<FitResult> {
    model.prior.validate()?;
    if opts.n_starts == 0 {
        return Err(Error::Optimization("need at least one start".into()));
    }
    let mode = opts.mode;
    let domain = Domain::from_model(model, mode);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let starts = latin_hypercube(&domain, opts.n_starts, &mut rng);

    let mut objective = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let point = HyperPoint::from_flat(model, x, mode)?;
        let state = assemble(model, &point, data)?;
        let parts = kernel_partials(model, &point, data.ts(), mode, 1)?;
        match mode {
            Mode::Reduced => {
                let rep = profiled_report(&state, data);
                let g = log_p_max_gradient(&state, &parts, data);
                Ok((rep.log_p_max, g.as_slice().to_vec()))
            }
            Mode::Full => {
                let f = log_hyperlikelihood(&state, data);
                let g = hyperlikelihood_gradient(&state, &parts, data);
                Ok((f, g.as_slice().to_vec()))
            }
        }
    };

    let cg_opts = CgOptions {
        gtol: opts.gtol,
        max_iters: opts.max_iters,
        max_evals: opts.max_evals_per_start,
    };

    let mut records: Vec<StartRecord> = Vec::with_capacity(opts.n_starts);
    let mut total_evals = 0usize;
    let mut best: Option<usize> = None;
    let mut failures = Vec::new();
    for x0 in &starts {
        match cg_maximize(&mut objective, x0, &domain, &cg_opts) {
            Ok(out) => {
                total_evals += out.n_evals;
                let rec = StartRecord {
                    start: x0.clone(),
                    end: out.x,
                    log_p: out.f,
                    grad_inf_norm: inf_norm(&out.grad),
                    iters: out.iters,
                    n_evals: out.n_evals,
                    converged: out.converged,
                };
                let better = match best {
                    None => true,
                    Some(i) => rec.log_p > records[i].log_p,
                };
                records.push(rec);
                if better {
                    best = Some(records.len() - 1);
                }
            }
            Err(e) => {
                // A start whose very first evaluation fails is recorded and
                // skipped; the objective could not be evaluated there.
                total_evals += 1;
                failures.push(e.to_string());
            }
        }
    }

    let Some(best) = best else {
        return Err(Error::Optimization(format!(
            "all {} starts failed to evaluate: {}",
            opts.n_starts,
            failures.join("; ")
        )));
    };

    let rec = &records[best];
    let point = HyperPoint::from_flat(model, &rec.end, mode)?;
    let sigma_f_hat_sq = match mode {
        Mode::Reduced => {
            total_evals += 1;
            let state = assemble(model, &point, data)?;
            Some(profiled_report(&state, data).sigma_f_hat_sq)
        }
        Mode::Full => None,
    };

    Ok(FitResult {
        point,
        mode,
        log_p_at_peak: rec.log_p,
        sigma_f_hat_sq,
        grad_inf_norm: rec.grad_inf_norm,
        n_evals: total_evals,
        converged_starts: records.iter().filter(|r| r.converged).count(),
        n_starts: opts.n_starts,
        starts: records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covmodel::{Interval, PriorSpec};
    use approx::assert_relative_eq;

    fn free_domain(d: usize) -> Domain {
        Domain { lo: vec![-100.0; d], hi: vec![100.0; d], ordered: None }
    }

    #[test]
    fn cg_finds_quadratic_vertex_exactly() {
        // Strictly concave quadratic with distinct curvatures and a linear
        // cross term; the vertex is known in closed form.
        let a = [4.0, 1.0, 0.25];
        let c = [1.0, -2.0, 3.0];
        let mut f = |x: &[f64]| -> crate::Result<(f64, Vec<f64>)> {
            let mut v = 0.0;
            let mut g = vec![0.0; 3];
            for i in 0..3 {
                v -= 0.5 * a[i] * (x[i] - c[i]).powi(2);
                g[i] = -a[i] * (x[i] - c[i]);
            }
            v += 0.3 * (x[0] - c[0]) * (x[1] - c[1]);
            g[0] += 0.3 * (x[1] - c[1]);
            g[1] += 0.3 * (x[0] - c[0]);
            Ok((v, g))
        };
        let opts = CgOptions { gtol: 1e-10, ..CgOptions::default() };
        let out = cg_maximize(&mut f, &[5.0, 5.0, 5.0], &free_domain(3), &opts).unwrap();
        assert!(out.converged);
        // Vertex of the coupled system: solve the 2x2 block by hand.
        // 4(x0-1) = 0.3(x1+2), 1(x1+2) = 0.3(x0-1) => x0 = 1, x1 = -2 only
        // if both sides vanish; the unique solution of the homogeneous
        // system is zero offset.
        assert_relative_eq!(out.x[0], 1.0, epsilon = 1e-8);
        assert_relative_eq!(out.x[1], -2.0, epsilon = 1e-8);
        assert_relative_eq!(out.x[2], 3.0, epsilon = 1e-8);
    }

    #[test]
    fn cg_respects_open_box() {
        // Maximum of x at the right edge; iterates must stay strictly
        // inside and converged must come back false (gradient never dies).
        let mut f = |x: &[f64]| -> crate::Result<(f64, Vec<f64>)> { Ok((x[0], vec![1.0])) };
        let domain = Domain { lo: vec![0.0], hi: vec![1.0], ordered: None };
        let opts = CgOptions { max_iters: 80, ..CgOptions::default() };
        let out = cg_maximize(&mut f, &[0.5], &domain, &opts).unwrap();
        assert!(!out.converged);
        assert!(out.x[0] < 1.0 && out.x[0] > 0.9);
    }

    #[test]
    fn cg_counts_failed_evaluations() {
        // Objective fails on the right half of the box; the optimizer must
        // still make progress toward the failure frontier and count every
        // attempted evaluation.
        let mut calls = 0usize;
        let mut f = |x: &[f64]| -> crate::Result<(f64, Vec<f64>)> {
            calls += 1;
            if x[0] > 0.5 {
                Err(Error::Optimization("unevaluable".into()))
            } else {
                Ok((x[0], vec![1.0]))
            }
        };
        let domain = Domain { lo: vec![0.0], hi: vec![1.0], ordered: None };
        let opts = CgOptions { max_iters: 30, ..CgOptions::default() };
        let out = cg_maximize(&mut f, &[0.1], &domain, &opts).unwrap();
        assert_eq!(out.n_evals, calls);
        assert!(out.x[0] <= 0.5 && out.x[0] > 0.4);
    }

    #[test]
    fn bounded_step_halves_into_box_and_resorts() {
        let domain = Domain { lo: vec![0.0; 4], hi: vec![10.0; 4], ordered: Some((0, 2, 2)) };
        // Step would land on 11 > hi; halving brings it inside.
        let (x, permuted) = bounded_step(&[4.0, 5.0, 0.5, 0.6], &[0.0, 6.0, 0.0, 0.0], 1.0, &domain);
        assert!(!permuted);
        assert!(x[1] < 10.0 && x[1] > 5.0);

        // Step pushes phi_0 past phi_1: the block is re-sorted and the
        // paired coordinates travel along.
        let (x, permuted) = bounded_step(&[4.0, 5.0, 0.5, 0.6], &[3.0, 0.0, 0.0, 0.0], 1.0, &domain);
        assert!(permuted);
        assert_eq!(x, vec![5.0, 7.0, 0.6, 0.5]);
    }

    #[test]
    fn canonicalize_is_stable_on_sorted_input() {
        let domain = Domain { lo: vec![0.0; 4], hi: vec![1.0; 4], ordered: Some((0, 2, 2)) };
        let mut x = vec![0.2, 0.2, 0.9, 0.1];
        assert!(!domain.canonicalize(&mut x));
        assert_eq!(x, vec![0.2, 0.2, 0.9, 0.1]);
    }

    #[test]
    fn latin_hypercube_stratifies_every_coordinate() {
        let domain = free_domain(3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts = latin_hypercube(&domain, 8, &mut rng);
        assert_eq!(pts.len(), 8);
        for j in 0..3 {
            let mut cells: Vec<usize> = pts
                .iter()
                .map(|p| (((p[j] + 100.0) / 200.0) * 8.0).floor() as usize)
                .collect();
            cells.sort_unstable();
            assert_eq!(cells, (0..8).collect::<Vec<_>>());
        }
    }

    #[test]
    fn maximize_is_deterministic_for_a_fixed_seed() {
        let prior = PriorSpec {
            window_phi: Interval::new(0.5, 4.0),
            periodic_phi: Interval::new(0.5, 4.0),
            xi: Interval::new(-0.5, 0.5),
            psi: Interval::new(-7.0, 7.0),
            mu: 1.0,
            sigma_l: 2.0,
        };
        let model = CovarianceModel::k1(1e-2, prior).unwrap();
        let ts: Vec<f64> = (0..14).map(|i| i as f64).collect();
        let ys: Vec<f64> = ts.iter().map(|t| (0.9 * t).sin()).collect();
        let data = TrainingSet::new(ts, ys).unwrap();

        let opts = FitOptions { n_starts: 3, seed: 42, max_iters: 60, ..FitOptions::default() };
        let a = maximize(&model, &data, &opts).unwrap();
        let b = maximize(&model, &data, &opts).unwrap();
        assert_eq!(a.log_p_at_peak, b.log_p_at_peak);
        assert_eq!(a.point.flatten(Mode::Reduced).unwrap(), b.point.flatten(Mode::Reduced).unwrap());
        assert_eq!(a.n_evals, b.n_evals);
        assert_eq!(a.starts.len(), 3);
        assert!(a.n_evals >= a.starts.iter().map(|r| r.n_evals).sum::<usize>());
    }
}
