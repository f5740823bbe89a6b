//! The five workflows behind the subcommands: sample a series, fit a
//! model, estimate its evidence, compare models, and emit predictive
//! curves. Each writes its primary artifact atomically and logs a short
//! human-readable summary to stderr.

use std::time::Instant;

use serde::Serialize;

use gptrain::covmodel::{kernel_partials, to_natural, NaturalParams};
use gptrain::data::{load_series, sample_gp, write_series};
use gptrain::evidence::LaplaceDiagnostics;
use gptrain::profile::peak_standard_errors;
use gptrain::{
    assemble, bayes_factor, laplace_evidence, maximize, numeric_evidence, predict,
    CovarianceModel, Error, EvidenceResult, FitOptions, FitResult, HyperPoint, Interval, Mode,
    PriorSpec, TrainingSet,
};

use crate::config::{
    resolve, Cli, CliError, Cmd, CommonArgs, ModelConfig, PriorOverride, RunConfig,
};
use crate::output::{emit, envelope_json, write_atomic};

pub fn run(cli: Cli) -> Result<(), CliError> {
    let name = cli.command.name();
    let args: &CommonArgs = match &cli.command {
        Cmd::Generate(a) | Cmd::Fit(a) | Cmd::Evidence(a) | Cmd::Compare(a) | Cmd::Predict(a) => a,
    };
    let cfg = resolve(name, args)?;
    match cli.command {
        Cmd::Generate(_) => cmd_generate(&cfg),
        Cmd::Fit(_) => cmd_fit(&cfg),
        Cmd::Evidence(_) => cmd_evidence(&cfg),
        Cmd::Compare(_) => cmd_compare(&cfg),
        Cmd::Predict(_) => cmd_predict(&cfg),
    }
}

fn single_model(cfg: &RunConfig) -> Result<&ModelConfig, CliError> {
    match cfg.models.as_slice() {
        [one] => Ok(one),
        [] => Err(CliError::Usage("this command needs a --model".into())),
        _ => Err(CliError::Usage(
            "this command takes a single --model; use `compare` for several".into(),
        )),
    }
}

fn apply_overrides(mut prior: PriorSpec, ovs: &[PriorOverride]) -> PriorSpec {
    for o in ovs {
        let iv = Interval::new(o.lo, o.hi);
        match o.key.as_str() {
            "window-phi" => prior.window_phi = iv,
            "periodic-phi" => prior.periodic_phi = iv,
            "xi" => prior.xi = iv,
            "psi" => prior.psi = iv,
            other => unreachable!("override key `{other}` validated at parse time"),
        }
    }
    prior
}

fn build_model(
    mc: &ModelConfig,
    data: &TrainingSet,
    ovs: &[PriorOverride],
) -> Result<CovarianceModel, CliError> {
    let prior = apply_overrides(PriorSpec::from_data(data.min_gap(), data.span())?, ovs);
    Ok(CovarianceModel::new(mc.n_periodic, mc.sigma_n, mc.has_window, prior)?)
}

fn fit_options(cfg: &RunConfig) -> FitOptions {
    FitOptions {
        mode: Mode::Reduced,
        n_starts: cfg.starts,
        seed: cfg.seed,
        gtol: cfg.gtol,
        max_evals_per_start: cfg.max_evals_per_start.unwrap_or(usize::MAX),
        ..FitOptions::default()
    }
}

fn load_input(cfg: &RunConfig) -> Result<TrainingSet, CliError> {
    let path = cfg.input.as_deref().ok_or_else(|| CliError::Usage("missing --input".into()))?;
    let sf = load_series(path).map_err(|e| CliError::Usage(format!("cannot read {path}: {e}")))?;
    if sf.n_collapsed > 0 {
        eprintln!("gptrain: note: averaged {} coincident-time rows in {path}", sf.n_collapsed);
    }
    Ok(sf.data)
}

#[derive(Serialize)]
struct TruthBlock {
    point: HyperPoint,
    natural: NaturalParams,
}

#[derive(Serialize)]
struct GenerateBlock {
    data_path: String,
    n: usize,
    truth: TruthBlock,
}

fn cmd_generate(cfg: &RunConfig) -> Result<(), CliError> {
    let n = cfg.n.ok_or_else(|| CliError::Usage("generate needs --n".into()))?;
    if n == 0 {
        return Err(CliError::Usage("generate needs --n >= 1".into()));
    }
    let mc = single_model(cfg)?;
    let out = cfg
        .output
        .as_deref()
        .ok_or_else(|| CliError::Usage("generate needs --output".into()))?;
    let phi = cfg
        .truth_phi
        .clone()
        .ok_or_else(|| CliError::Usage("generate needs --phi (truth coordinates)".into()))?;
    let xi = cfg
        .truth_xi
        .clone()
        .ok_or_else(|| CliError::Usage("generate needs --xi (truth coordinates)".into()))?;
    if phi.len() != 1 + mc.n_periodic || xi.len() != mc.n_periodic {
        return Err(CliError::Usage(format!(
            "model {} needs {} phi and {} xi coordinates, got {} and {}",
            mc.name,
            1 + mc.n_periodic,
            mc.n_periodic,
            phi.len(),
            xi.len()
        )));
    }

    let ts: Vec<f64> = (1..=n).map(|i| i as f64).collect();
    // Sampling never consults the prior box, so a degenerate span (n = 1)
    // can fall back to any valid box.
    let span = if n > 1 { (n - 1) as f64 } else { 2.0 };
    let prior = apply_overrides(PriorSpec::from_data(1.0, span)?, &cfg.prior_overrides);
    let model = CovarianceModel::new(mc.n_periodic, mc.sigma_n, mc.has_window, prior)?;
    let point = HyperPoint::new(phi, xi, None);
    let ys = sample_gp(&model, &point, &ts, cfg.seed)?;

    let tmp = format!("{out}.tmp");
    write_series(&tmp, &ts, &ys)?;
    std::fs::rename(&tmp, out).map_err(CliError::from)?;

    let natural = to_natural(&point, &model.prior, model.has_window)?;
    let truth_path = cfg.truth_output.clone().unwrap_or_else(|| default_truth_path(out));
    let block =
        GenerateBlock { data_path: out.to_string(), n, truth: TruthBlock { point, natural } };
    write_atomic(&truth_path, envelope_json(cfg, block)?.as_bytes())?;
    eprintln!("gptrain: wrote {n} samples to {out}, truth record to {truth_path}");
    Ok(())
}

fn default_truth_path(output: &str) -> String {
    std::path::Path::new(output)
        .with_extension("truth.json")
        .to_string_lossy()
        .into_owned()
}

#[derive(Serialize)]
struct FitBlock {
    fit: FitResult,
    coord_names: Vec<String>,
    natural: NaturalParams,
    /// Square root of the profiled scale at the peak.
    sigma_f_hat: f64,
    /// Standard errors of the flat coordinates from the inverse curvature;
    /// absent when the peak curvature is not positive definite.
    std_errors: Option<Vec<f64>>,
    hessian_pd: bool,
}

fn fit_block(
    model: &CovarianceModel,
    data: &TrainingSet,
    fit: FitResult,
) -> Result<FitBlock, CliError> {
    let state = assemble(model, &fit.point, data)?;
    let parts = kernel_partials(model, &fit.point, data.ts(), Mode::Reduced, 2)?;
    let std_errors = peak_standard_errors(&state, &parts, data);
    let hessian_pd = std_errors.is_some();
    let sigma_f_hat = fit
        .sigma_f_hat_sq
        .ok_or_else(|| CliError::Failure("reduced fit is missing its profiled scale".into()))?
        .sqrt();
    // Fold the profiled scale into the natural report so sigma_f is the
    // fitted amplitude rather than the flat-coordinate placeholder 1.
    let mut peak = fit.point.clone();
    peak.psi = Some(sigma_f_hat.ln());
    let natural = to_natural(&peak, &model.prior, model.has_window)?;
    Ok(FitBlock {
        coord_names: model.coord_names(Mode::Reduced),
        natural,
        sigma_f_hat,
        std_errors,
        hessian_pd,
        fit,
    })
}

fn cmd_fit(cfg: &RunConfig) -> Result<(), CliError> {
    let data = load_input(cfg)?;
    let mc = single_model(cfg)?;
    let model = build_model(mc, &data, &cfg.prior_overrides)?;
    let fit = maximize(&model, &data, &fit_options(cfg))?;
    let block = fit_block(&model, &data, fit)?;
    eprintln!(
        "gptrain: peak log p = {:.6} ({}/{} starts converged, {} evaluations)",
        block.fit.log_p_at_peak, block.fit.converged_starts, block.fit.n_starts, block.fit.n_evals
    );
    emit(cfg.output.as_deref(), &envelope_json(cfg, block)?)
}

/// Structured refusal carried inside an output instead of a result.
#[derive(Serialize)]
struct Warning {
    kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    diagnostics: Option<LaplaceDiagnostics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ess: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    min_ess: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    partial: Option<EvidenceResult>,
}

#[derive(Serialize)]
struct EvidenceBlock {
    evidence: Option<EvidenceResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    warning: Option<Warning>,
    /// The multistart fit behind a Laplace estimate; absent for Monte Carlo.
    fit: Option<FitResult>,
    wall_time_s: f64,
}

enum EvidenceOutcome {
    Trusted(EvidenceResult, Option<FitResult>),
    Refused(Warning, Option<FitResult>, String),
}

fn evidence_once(
    model: &CovarianceModel,
    data: &TrainingSet,
    cfg: &RunConfig,
) -> Result<EvidenceOutcome, CliError> {
    match cfg.method.as_str() {
        "laplace" => {
            let fit = maximize(model, data, &fit_options(cfg))?;
            match laplace_evidence(model, data, &fit) {
                Ok(ev) => Ok(EvidenceOutcome::Trusted(ev, Some(fit))),
                Err(Error::UntrustedLaplace(diag)) => {
                    let msg = format!("Laplace evidence refused: {diag}");
                    let warning = Warning {
                        kind: "untrusted_laplace",
                        diagnostics: Some(diag),
                        ess: None,
                        min_ess: None,
                        partial: None,
                    };
                    Ok(EvidenceOutcome::Refused(warning, Some(fit), msg))
                }
                Err(e) => Err(e.into()),
            }
        }
        "mc" => match numeric_evidence(model, data, Mode::Reduced, cfg.budget, cfg.seed) {
            Ok(ev) => Ok(EvidenceOutcome::Trusted(ev, None)),
            Err(Error::UnreliableEstimate { ess, min_ess, partial }) => {
                let msg = format!(
                    "Monte-Carlo evidence refused: effective sample size {ess:.2} < {min_ess}"
                );
                let warning = Warning {
                    kind: "unreliable_estimate",
                    diagnostics: None,
                    ess: Some(ess),
                    min_ess: Some(min_ess),
                    partial: Some(*partial),
                };
                Ok(EvidenceOutcome::Refused(warning, None, msg))
            }
            Err(e) => Err(e.into()),
        },
        other => unreachable!("method `{other}` validated at resolve time"),
    }
}

fn cmd_evidence(cfg: &RunConfig) -> Result<(), CliError> {
    let data = load_input(cfg)?;
    let mc = single_model(cfg)?;
    let model = build_model(mc, &data, &cfg.prior_overrides)?;
    let t0 = Instant::now();
    match evidence_once(&model, &data, cfg)? {
        EvidenceOutcome::Trusted(ev, fit) => {
            eprintln!(
                "gptrain: log_z = {:.6} ({} evaluations, method {})",
                ev.log_z, ev.n_evals, cfg.method
            );
            let block = EvidenceBlock {
                evidence: Some(ev),
                warning: None,
                fit,
                wall_time_s: t0.elapsed().as_secs_f64(),
            };
            emit(cfg.output.as_deref(), &envelope_json(cfg, block)?)
        }
        EvidenceOutcome::Refused(warning, fit, msg) => {
            let soft = warning.kind == "untrusted_laplace";
            let block = EvidenceBlock {
                evidence: None,
                warning: Some(warning),
                fit,
                wall_time_s: t0.elapsed().as_secs_f64(),
            };
            emit(cfg.output.as_deref(), &envelope_json(cfg, block)?)?;
            if soft {
                Err(CliError::Soft(msg))
            } else {
                Err(CliError::Failure(msg))
            }
        }
    }
}

#[derive(Serialize)]
struct CompareEntry {
    index: usize,
    model: ModelConfig,
    evidence: Option<EvidenceResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    warning: Option<Warning>,
}

#[derive(Serialize)]
struct BayesRow {
    model_index: usize,
    model: String,
    over_index: usize,
    over: String,
    log_bf: f64,
    std_err: f64,
}

#[derive(Serialize)]
struct CompareBlock {
    models: Vec<CompareEntry>,
    /// ln B of each later model over the first.
    log_bayes_factors: Vec<BayesRow>,
    curves_path: Option<String>,
    wall_time_s: f64,
}

fn cmd_compare(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.models.len() < 2 {
        return Err(CliError::Usage("compare needs at least two --model flags".into()));
    }
    let data = load_input(cfg)?;
    let t0 = Instant::now();

    let mut entries = Vec::new();
    let mut evidences: Vec<Option<EvidenceResult>> = Vec::new();
    let mut fits: Vec<Option<FitResult>> = Vec::new();
    let mut models = Vec::new();
    let mut refusals: Vec<String> = Vec::new();
    let mut any_hard = false;
    for (index, mc) in cfg.models.iter().enumerate() {
        let model = build_model(mc, &data, &cfg.prior_overrides)?;
        match evidence_once(&model, &data, cfg)? {
            EvidenceOutcome::Trusted(ev, fit) => {
                entries.push(CompareEntry {
                    index,
                    model: mc.clone(),
                    evidence: Some(ev.clone()),
                    warning: None,
                });
                evidences.push(Some(ev));
                fits.push(fit);
            }
            EvidenceOutcome::Refused(warning, fit, msg) => {
                any_hard |= warning.kind == "unreliable_estimate";
                refusals.push(format!("model {index} ({}): {msg}", mc.name));
                entries.push(CompareEntry {
                    index,
                    model: mc.clone(),
                    evidence: None,
                    warning: Some(warning),
                });
                evidences.push(None);
                fits.push(fit);
            }
        }
        models.push(model);
    }

    let mut rows = Vec::new();
    if let Some(first) = &evidences[0] {
        for i in 1..evidences.len() {
            if let Some(ev) = &evidences[i] {
                let bf = bayes_factor(first, ev)?;
                rows.push(BayesRow {
                    model_index: i,
                    model: cfg.models[i].name.clone(),
                    over_index: 0,
                    over: cfg.models[0].name.clone(),
                    log_bf: bf.log_bf,
                    std_err: bf.std_err,
                });
                eprintln!(
                    "gptrain: ln B({} over {}) = {:.3} +- {:.3}",
                    cfg.models[i].name, cfg.models[0].name, bf.log_bf, bf.std_err
                );
            }
        }
    }

    let curves_path = match &cfg.curves {
        Some(path) => {
            write_curves(path, cfg, &models, &mut fits, &data)?;
            eprintln!("gptrain: wrote predictive curves to {path}");
            Some(path.clone())
        }
        None => None,
    };

    let block = CompareBlock {
        models: entries,
        log_bayes_factors: rows,
        curves_path,
        wall_time_s: t0.elapsed().as_secs_f64(),
    };
    emit(cfg.output.as_deref(), &envelope_json(cfg, block)?)?;
    if refusals.is_empty() {
        Ok(())
    } else if any_hard {
        Err(CliError::Failure(refusals.join("; ")))
    } else {
        Err(CliError::Soft(refusals.join("; ")))
    }
}

/// Tidy long-format CSV: one row per (query time, model), columns
/// t,model_index,model,mean,var.
fn write_curves(
    path: &str,
    cfg: &RunConfig,
    models: &[CovarianceModel],
    fits: &mut [Option<FitResult>],
    data: &TrainingSet,
) -> Result<(), CliError> {
    let lo = data.ts()[0];
    let hi = *data.ts().last().expect("training sets are non-empty");
    let qs = linspace(lo, hi, cfg.curve_points.max(1));
    let mut text = String::from("t,model_index,model,mean,var\n");
    for (i, model) in models.iter().enumerate() {
        if fits[i].is_none() {
            // Monte-Carlo comparisons have no fit yet; the curves still
            // need a peak to expand around.
            fits[i] = Some(maximize(model, data, &fit_options(cfg))?);
        }
        let fit = fits[i].as_ref().expect("fit was just ensured");
        let pd = predict_at_peak(model, data, fit, &qs)?;
        for j in 0..qs.len() {
            text.push_str(&format!(
                "{},{},{},{},{}\n",
                pd.ts[j], i, cfg.models[i].name, pd.mean[j], pd.var[j]
            ));
        }
    }
    write_atomic(path, text.as_bytes())
}

fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect()
}

/// Predictive distribution at a reduced fit's peak: the profiled scale is
/// folded back in as psi = ln sigma_f_hat, so variances carry the
/// estimated scale.
fn predict_at_peak(
    model: &CovarianceModel,
    data: &TrainingSet,
    fit: &FitResult,
    qs: &[f64],
) -> Result<gptrain::PredictiveDistribution, CliError> {
    let shat = fit
        .sigma_f_hat_sq
        .ok_or_else(|| CliError::Failure("reduced fit is missing its profiled scale".into()))?;
    let point = HyperPoint::new(fit.point.phi.clone(), fit.point.xi.clone(), Some(0.5 * shat.ln()));
    let state = assemble(model, &point, data)?;
    Ok(predict(&state, model, data, qs)?)
}

fn cmd_predict(cfg: &RunConfig) -> Result<(), CliError> {
    let data = load_input(cfg)?;
    let mc = single_model(cfg)?;
    let model = build_model(mc, &data, &cfg.prior_overrides)?;
    let fit = maximize(&model, &data, &fit_options(cfg))?;

    let lo = data.ts()[0];
    let hi = *data.ts().last().expect("training sets are non-empty");
    let start = cfg.query_start.unwrap_or(lo);
    let end = cfg.query_end.unwrap_or(hi);
    if !(start.is_finite() && end.is_finite() && start <= end) {
        return Err(CliError::Usage(format!(
            "query grid needs finite start <= end, got {start}..{end}"
        )));
    }
    if cfg.query_count == 0 {
        return Err(CliError::Usage("query-count must be at least 1".into()));
    }
    let qs = linspace(start, end, cfg.query_count);
    let pd = predict_at_peak(&model, &data, &fit, &qs)?;

    let mut text = String::from("t,mean,variance\n");
    for i in 0..qs.len() {
        text.push_str(&format!("{},{},{}\n", pd.ts[i], pd.mean[i], pd.var[i]));
    }
    emit(cfg.output.as_deref(), &text)?;
    eprintln!(
        "gptrain: wrote {} predictions over [{start}, {end}] (peak log p = {:.6})",
        qs.len(),
        fit.log_p_at_peak
    );
    Ok(())
}
