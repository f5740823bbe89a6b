//! Temporary seed-sweep probe, not part of the deliverable suite.

use std::time::Instant;

use gptrain::covmodel::{kernel_partials, PriorSpec};
use gptrain::data::sample_gp;
use gptrain::evidence::{laplace_evidence, numeric_evidence, EvidenceResult};
use gptrain::gpcore::assemble;
use gptrain::profile::{log_p_max_gradient, profiled_report};
use gptrain::train::{cg_maximize, maximize, CgOptions, Domain, FitOptions, FitResult};
use gptrain::{CovarianceModel, Error, HyperPoint, Mode, Result, TrainingSet};

fn fig1_truth() -> HyperPoint {
    HyperPoint::new(vec![3.5, 1.5, 3.0], vec![0.0, 0.0], None)
}

fn draw(n: usize, seed: u64) -> TrainingSet {
    let ts: Vec<f64> = (1..=n).map(|i| i as f64).collect();
    let prior = PriorSpec::from_data(1.0, (n - 1) as f64).unwrap();
    let gen = CovarianceModel::k2(1e-2, prior).unwrap();
    let ys = sample_gp(&gen, &fig1_truth(), &ts, seed).unwrap();
    TrainingSet::new(ts, ys).unwrap()
}

// Best log_p reachable from a single CG start at the truth point (clamped
// into the open box), as a reference for whether the multistart found the
// global basin.
fn truth_anchor(model: &CovarianceModel, d: &TrainingSet, np: usize) -> f64 {
    let domain = Domain::from_model(model, Mode::Reduced);
    let mut obj = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let point = HyperPoint::from_flat(model, x, Mode::Reduced)?;
        let state = assemble(model, &point, d)?;
        let parts = kernel_partials(model, &point, d.ts(), Mode::Reduced, 1)?;
        let rep = profiled_report(&state, d);
        let g = log_p_max_gradient(&state, &parts, d);
        Ok((rep.log_p_max, g.iter().copied().collect()))
    };
    let raw: Vec<f64> = if np == 1 {
        vec![3.5, 1.5, 0.0]
    } else {
        vec![3.5, 1.5, 3.0, 0.0, 0.0]
    };
    let x0: Vec<f64> = raw
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let w = domain.hi[i] - domain.lo[i];
            v.clamp(domain.lo[i] + 0.02 * w, domain.hi[i] - 0.02 * w)
        })
        .collect();
    let opts = CgOptions { max_evals: 300, ..CgOptions::default() };
    cg_maximize(&mut obj, &x0, &domain, &opts)
        .map(|o| o.f)
        .unwrap_or(f64::NEG_INFINITY)
}

fn trip_tag(r: &EvidenceResult) -> String {
    let d = r.diagnostics.as_ref().unwrap();
    format!(
        "b{}e{:.3}{}",
        d.distinct_basins,
        d.min_edge_distance,
        if d.hessian_pd { "" } else { "!PD" }
    )
}

struct Cell {
    tag: String,
    lap_z: Option<f64>,
}

fn run_cell(
    model: &CovarianceModel,
    d: &TrainingSet,
    n_starts: usize,
    with_mc: bool,
) -> Cell {
    let np = model.n_periodic;
    let t0 = Instant::now();
    let opts = FitOptions { n_starts, max_evals_per_start: 99, ..FitOptions::default() };
    let fit = maximize(model, d, &opts).unwrap();
    let fit_s = t0.elapsed().as_secs_f64();
    let anchor = truth_anchor(model, d, np);
    let found = fit.log_p_at_peak >= anchor - 1e-3;
    let miss = anchor - fit.log_p_at_peak;
    let lap = laplace_evidence(model, d, &fit);
    let mut lap_z = None;
    let lap_str = match &lap {
        Ok(l) => {
            lap_z = Some(l.log_z);
            format!("z{:.2}[{}]", l.log_z, trip_tag(l))
        }
        Err(Error::UntrustedLaplace(diag)) => format!(
            "UNTRUSTED[b{}e{:.3}]",
            diag.distinct_basins, diag.min_edge_distance
        ),
        Err(e) => format!("ERR({e})"),
    };
    let mc_str = if with_mc {
        let t1 = Instant::now();
        let mc = numeric_evidence(model, d, Mode::Reduced, 20_000, 99);
        let mc_s = t1.elapsed().as_secs_f64();
        match (&lap, &mc) {
            (Ok(l), Ok(m)) => {
                let dz = (l.log_z - m.log_z).abs();
                let gate = 2.0 * m.std_err.unwrap();
                format!(
                    " mc{:.2}±{:.2}ess{:.0}({:.0}s) {}",
                    m.log_z,
                    m.std_err.unwrap(),
                    m.ess.unwrap(),
                    mc_s,
                    if dz <= gate { "PASS" } else { "FAIL" }
                )
            }
            (_, Ok(m)) => format!(
                " mc{:.2}±{:.2}ess{:.0}({:.0}s)",
                m.log_z,
                m.std_err.unwrap(),
                m.ess.unwrap(),
                mc_s
            ),
            (_, Err(Error::UnreliableEstimate { ess, partial, .. })) => {
                format!(" mcESS{ess:.1}(z{:.2})", partial.log_z)
            }
            (_, Err(e)) => format!(" mcERR({e})"),
        }
    } else {
        String::new()
    };
    Cell {
        tag: format!(
            " k{np}[{}|ev{}cv{}({:.0}s)|{}{}]",
            if found { "G".into() } else { format!("m{miss:.1}") },
            fit.n_evals,
            fit.converged_starts,
            fit_s,
            lap_str,
            mc_str
        ),
        lap_z,
    }
}

fn sweep(n: usize, seeds: std::ops::RangeInclusive<u64>, n_starts: usize, with_mc: bool) {
    println!("--- n={n} sweep, {n_starts} starts, cap 99");
    for seed in seeds {
        let d = draw(n, seed);
        let prior = PriorSpec::from_data(d.min_gap(), d.span()).unwrap();
        let mut line = format!("seed {seed}:");
        let mut zs = [None, None];
        for np in [1usize, 2] {
            let model = CovarianceModel::periodic(np, 1e-2, prior.clone()).unwrap();
            let cell = run_cell(&model, &d, n_starts, with_mc);
            zs[np - 1] = cell.lap_z;
            line.push_str(&cell.tag);
        }
        if let (Some(z1), Some(z2)) = (zs[0], zs[1]) {
            line.push_str(&format!(" lnB{:.2}", z2 - z1));
        }
        println!("{line}");
    }
}

#[test]
fn sweep30() {
    sweep(30, 2001..=2020, 40, true);
}

#[test]
fn sweep100() {
    sweep(100, 3001..=3010, 40, true);
}

#[test]
fn sweep300() {
    sweep(300, 4001..=4006, 40, false);
}

#[test]
fn sweep300mc() {
    println!("--- n=300 MC-only ESS check");
    for seed in [4001u64, 4003] {
        let d = draw(300, seed);
        let prior = PriorSpec::from_data(d.min_gap(), d.span()).unwrap();
        let mut line = format!("seed {seed}:");
        for np in [1usize, 2] {
            let model = CovarianceModel::periodic(np, 1e-2, prior.clone()).unwrap();
            let t0 = Instant::now();
            let mc = numeric_evidence(&model, &d, Mode::Reduced, 20_000, 99);
            let s = t0.elapsed().as_secs_f64();
            match mc {
                Ok(m) => line.push_str(&format!(
                    " k{np}[mc{:.2}±{:.2}ess{:.0}({s:.0}s)]",
                    m.log_z,
                    m.std_err.unwrap(),
                    m.ess.unwrap()
                )),
                Err(Error::UnreliableEstimate { ess, partial, .. }) => {
                    line.push_str(&format!(" k{np}[mcESS{ess:.1}(z{:.2})({s:.0}s)]", partial.log_z))
                }
                Err(e) => line.push_str(&format!(" k{np}[mcERR({e})]")),
            }
        }
        println!("{line}");
    }
}

// Criterion-2 style probe: full vs reduced peak agreement and eval counts.
fn full_vs_reduced_cell(seed: u64) {
    let d = draw(100, seed);
    let prior = PriorSpec::from_data(d.min_gap(), d.span()).unwrap();
    let model = CovarianceModel::k2(1e-2, prior).unwrap();
    let t0 = std::time::Instant::now();
    let red = maximize(&model, &d, &FitOptions { n_starts: 40, ..FitOptions::default() }).unwrap();
    let t1 = t0.elapsed().as_secs_f64();
    let full = maximize(
        &model,
        &d,
        &FitOptions { mode: Mode::Full, n_starts: 40, ..FitOptions::default() },
    )
    .unwrap();
    let t2 = t0.elapsed().as_secs_f64() - t1;
    let full_at_peak = full.log_p_at_peak;
    println!(
        "seed {seed}: red_peak={:.6} full_peak={:.6} gap={:.2e} ev_red={} ev_full={} {} conv_r={} conv_f={} ({:.0}s/{:.0}s)",
        red.log_p_at_peak,
        full_at_peak,
        (red.log_p_at_peak - full_at_peak).abs(),
        red.n_evals,
        full.n_evals,
        if red.n_evals < full.n_evals { "FEWER" } else { "NOT-FEWER" },
        red.converged_starts,
        full.converged_starts,
        t1,
        t2,
    );
}

#[test]
fn full_vs_reduced() {
    println!("--- full vs reduced, n=100, 40 starts, uncapped");
    for seed in [3001u64, 3002, 3003, 3004, 3005, 3006] {
        full_vs_reduced_cell(seed);
    }
}

#[allow(dead_code)]
fn unused(_: &FitResult) {}
