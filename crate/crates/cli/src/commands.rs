use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fafpca::basis::{make_raw_basis, orthonormalize, DEFAULT_DEGREE, DEFAULT_N_QUAD};
use fafpca::data::{center, ingest_long_csv_with, CSV_HEADER};
use fafpca::estimator;
use fafpca::metrics::{self, align_eigenfunctions, align_signs};
use fafpca::selection::{self, SelectionReport, DEFAULT_THRESHOLD};
use fafpca::simulate::{
    self, EigenFamily, ReplicateOptions, Role, Scenario1Config, Scenario2Config, ScenarioSpec,
    SigmaCase, TimeDesign,
};
use fafpca::{FaFpcaModel, FitConfig, FunctionalDataset, IngestOptions, SimTruth, SubjectRecord};
use nalgebra::DMatrix;
use serde_json::json;

use crate::config::{self, merge, sidecar, write_json, Dim};
use crate::{
    CliError, DesignArg, EigenArg, EstimatorArgs, EvaluateArgs, FitArgs, PredictArgs,
    ReplicateArgs, RoleArg, ScenarioArgs, SigmaCaseArg, SimulateArgs,
};

const DEFAULT_N: usize = 100;
const DEFAULT_P: usize = 100;
const DEFAULT_Q: usize = 5;
const DEFAULT_K: usize = 2;
const DEFAULT_EIGEN_KNOTS: usize = 4;
const DEFAULT_SEED: u64 = 1;

type CliResult<T = ()> = Result<T, CliError>;

fn require<T: Clone>(value: &Option<T>, command: &str, option: &str) -> CliResult<T> {
    value.clone().ok_or_else(|| CliError::missing(command, option))
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::new("io", format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn finish(mut w: impl Write, path: &Path) -> CliResult {
    w.flush().map_err(|e| io_err(path, e))
}

/// Fill generator defaults in place and return the matching scenario (seed 0).
fn resolve_scenario(s: &mut ScenarioArgs, command: &str) -> CliResult<ScenarioSpec> {
    let scenario = require(&s.scenario, command, "scenario")?;
    let n = *s.n.get_or_insert(DEFAULT_N);
    let p = *s.p.get_or_insert(DEFAULT_P);
    let k = *s.k.get_or_insert(DEFAULT_K);
    let ni = *s.ni.get_or_insert(simulate::DEFAULT_N_OBS);
    if scenario == 1 {
        let case = match *s.sigma_case.get_or_insert(SigmaCaseArg::Identity) {
            SigmaCaseArg::Identity => SigmaCase::Identity,
            SigmaCaseArg::Equicorrelated => SigmaCase::Equicorrelated,
        };
        s.q = None;
        s.noise_sd = None;
        s.eigen = None;
        s.eigen_knots = None;
        s.design = None;
        let mut cfg = Scenario1Config::new(n, p, k, case, 0);
        cfg.n_obs = ni;
        return Ok(ScenarioSpec::One(cfg));
    }
    s.sigma_case = None;
    let q = *s.q.get_or_insert(DEFAULT_Q);
    let mut cfg = Scenario2Config::new(n, p, q, k, 0);
    cfg.n_obs = ni;
    cfg.noise_sd = *s.noise_sd.get_or_insert(1.0);
    cfg.eigen = match *s.eigen.get_or_insert(EigenArg::Trig) {
        EigenArg::Trig => {
            s.eigen_knots = None;
            EigenFamily::Trig
        }
        EigenArg::Spline => EigenFamily::Spline {
            degree: DEFAULT_DEGREE,
            interior_knots: *s.eigen_knots.get_or_insert(DEFAULT_EIGEN_KNOTS),
            n_quad: DEFAULT_N_QUAD,
        },
    };
    cfg.design = match *s.design.get_or_insert(DesignArg::Uniform) {
        DesignArg::Uniform => TimeDesign::Uniform,
        DesignArg::Grid => TimeDesign::CommonGrid,
    };
    Ok(ScenarioSpec::Two(cfg))
}

pub fn simulate(args: SimulateArgs) -> CliResult {
    let mut a = merge(&args, args.config.as_deref())?;
    let out = require(&a.out, "simulate", "out")?;
    let seed = *a.seed.get_or_insert(DEFAULT_SEED);
    let role = match *a.role.get_or_insert(RoleArg::Train) {
        RoleArg::Train => Role::Train,
        RoleArg::Test => Role::Test,
    };
    match resolve_scenario(&mut a.scenario, "simulate")?.with_seed(seed) {
        ScenarioSpec::One(cfg) => {
            a.truth = None;
            simulate::generate_scenario1_role(&cfg, role)?.export_long_csv(&out)?;
        }
        ScenarioSpec::Two(cfg) => {
            let truth_path = a
                .truth
                .get_or_insert_with(|| sidecar(&out, "truth.json"))
                .clone();
            let structure = simulate::scenario2_structure(&cfg)?;
            let (data, truth) = simulate::generate_scenario2_with(&cfg, &structure, role)?;
            data.export_long_csv(&out)?;
            truth.save(&truth_path)?;
        }
    }
    write_json(&sidecar(&out, "config.json"), &a)
}

fn fit_config(e: &mut EstimatorArgs, n: usize) -> CliResult<FitConfig> {
    let defaults = FitConfig::default();
    let cfg = FitConfig {
        degree: *e.degree.get_or_insert(defaults.degree),
        interior_knots: e.knots,
        ridge: e.ridge,
        n_quad: *e.n_quad.get_or_insert(defaults.n_quad),
        seed: None,
    };
    e.knots = Some(cfg.resolved_knots(n));
    let tau = cfg.degree + 1 + cfg.resolved_knots(n);
    e.ridge = Some(cfg.resolved_ridge(tau));
    e.threshold.get_or_insert(DEFAULT_THRESHOLD);
    Ok(cfg)
}

fn ingest(path: &Path, domain: Option<(f64, f64)>) -> CliResult<FunctionalDataset> {
    Ok(ingest_long_csv_with(path, IngestOptions { time_domain: domain })?)
}

pub fn fit(args: FitArgs) -> CliResult {
    let mut a = merge(&args, args.config.as_deref())?;
    let data_path = require(&a.data, "fit", "data")?;
    let out = require(&a.out, "fit", "out")?;
    let domain = match a.time_domain.as_deref() {
        None => None,
        Some([lo, hi]) => Some((*lo, *hi)),
        Some(_) => return Err(CliError::new("usage", "--time-domain takes exactly two values lo,hi")),
    };
    let data = center(&ingest(&data_path, domain)?);
    let cfg = fit_config(&mut a.estimator, data.n())?;
    let threshold = a.estimator.threshold.unwrap_or(DEFAULT_THRESHOLD);
    let q_arg = *a.q.get_or_insert(Dim::Auto);
    let k_arg = *a.k.get_or_insert(Dim::Auto);

    let mut report: Option<SelectionReport> = None;
    let (q, k) = if let (Dim::Fixed(q), Dim::Fixed(k)) = (q_arg, k_arg) {
        (q, k)
    } else {
        let qs = selection::select_q(&data, threshold)?;
        let q = match q_arg {
            Dim::Fixed(q) => q,
            Dim::Auto => match k_arg {
                Dim::Fixed(k) => qs.q.min((data.n() / k.max(1)).max(1)),
                Dim::Auto => qs.q.min(data.n()),
            },
        };
        let basis = orthonormalize(&make_raw_basis(cfg.degree, cfg.resolved_knots(data.n()))?, cfg.n_quad)?;
        let ks = selection::select_k(&data, q, &basis, cfg.resolved_ridge(basis.tau_n()), threshold)?;
        let k = match k_arg {
            Dim::Fixed(k) => k,
            Dim::Auto => ks.k.min((data.n() / q).max(1)),
        };
        report = Some(SelectionReport {
            q_chosen: q,
            k_chosen: k,
            k_per_block: ks.per_block,
            q_curve: qs.curve,
            k_curves: ks.curves,
            threshold,
        });
        (q, k)
    };

    let model = estimator::fit(&data, q, k, &cfg)?;
    model.save(&out)?;
    let fit_report = json!({
        "n": data.n(),
        "p": model.p(),
        "q": q,
        "K": k,
        "tau_n": model.tau_n(),
        "degree": cfg.degree,
        "interior_knots": cfg.resolved_knots(data.n()),
        "ridge": model.ridge,
        "basis_condition": model.basis.condition(),
        "loading_eigvals": model.loadings.eigvals,
        "block_eigvals": model.blocks.iter().map(|b| b.eigvals.clone()).collect::<Vec<_>>(),
        "time_domain": model.time_map.range(),
        "selection": report.as_ref().map(|r| json!({
            "q_chosen": r.q_chosen,
            "k_chosen": r.k_chosen,
            "k_per_block": r.k_per_block,
            "threshold": r.threshold,
        })),
    });
    write_json(&sidecar(&out, "report.json"), &fit_report)?;
    if let Some(r) = &report {
        let path = sidecar(&out, "selection.csv");
        let mut w = create(&path)?;
        r.write_csv(&mut w)?;
        finish(w, &path)?;
    }
    write_json(&sidecar(&out, "config.json"), &a)
}

/// True when the file holds the header and no observations.
fn header_only(path: &Path) -> CliResult<bool> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next();
    Ok(lines.next().is_none() && header.is_some_and(|h| h.trim() == CSV_HEADER.join(",")))
}

/// Reorder the columns of `data` to the model's variable order.
fn align_variables(data: FunctionalDataset, labels: &[String]) -> CliResult<FunctionalDataset> {
    if data.var_labels() == labels {
        return Ok(data);
    }
    if data.p() != labels.len() {
        return Err(fafpca::FafpcaError::DimensionMismatch(format!(
            "data has {} variables, model has {}",
            data.p(),
            labels.len()
        ))
        .into());
    }
    let order = labels
        .iter()
        .map(|l| {
            data.var_labels().iter().position(|d| d == l).ok_or_else(|| {
                CliError::new("dimension_mismatch", format!("variable {l:?} is missing from the data"))
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let subjects = data
        .subjects()
        .iter()
        .map(|s| SubjectRecord {
            id: s.id.clone(),
            times: s.times.clone(),
            values: DMatrix::from_fn(s.n_obs(), order.len(), |l, j| s.values[(l, order[j])]),
        })
        .collect();
    Ok(FunctionalDataset::new(labels.len(), subjects, data.time_map(), Some(labels.to_vec()))?)
}

fn load_for_model(path: &Path, model: &FaFpcaModel) -> CliResult<FunctionalDataset> {
    let data = ingest(path, Some(model.time_map.range()))?;
    align_variables(data, &model.var_labels)
}

pub fn predict(args: PredictArgs) -> CliResult {
    let mut a = merge(&args, args.config.as_deref())?;
    let model_path = require(&a.model, "predict", "model")?;
    let data_path = require(&a.data, "predict", "data")?;
    let out = require(&a.out, "predict", "out")?;
    let model = FaFpcaModel::load(&model_path)?;
    let mut w = csv::Writer::from_writer(create(&out)?);
    let csv_err = |e: csv::Error| CliError::new("csv", e.to_string());
    w.write_record(["subject", "time", "var", "value_hat"]).map_err(csv_err)?;
    if !header_only(&data_path)? {
        let data = load_for_model(&data_path, &model)?;
        let predictions = model.predict(&data)?;
        let map = data.time_map();
        for (s, pred) in data.subjects().iter().zip(&predictions) {
            for (l, &t) in s.times.iter().enumerate() {
                let time = map.inverse(t).to_string();
                for (j, label) in model.var_labels.iter().enumerate() {
                    w.write_record([&s.id, &time, label, &pred[(l, j)].to_string()])
                        .map_err(csv_err)?;
                }
            }
        }
    }
    w.flush().map_err(|e| io_err(&out, e))?;
    a.data = Some(data_path);
    write_json(&sidecar(&out, "config.json"), &a)
}

pub fn evaluate(args: EvaluateArgs) -> CliResult {
    let a = merge(&args, args.config.as_deref())?;
    let model_path = require(&a.model, "evaluate", "model")?;
    let test_path = require(&a.test, "evaluate", "test")?;
    let out = require(&a.out, "evaluate", "out")?;
    let model = FaFpcaModel::load(&model_path)?;
    let test = load_for_model(&test_path, &model)?;
    let pe = metrics::prediction_error(&model, &test)?;

    let mut rmse = None;
    if let Some(truth_path) = &a.truth {
        let truth = SimTruth::load(truth_path)?;
        let n_quad = DEFAULT_N_QUAD;
        let (b, fl) = align_signs(&model.loadings.b, &truth.b0)?;
        let (z, fz) = align_signs(&model.scores(), &truth.zeta0)?;
        let (aligned, fe) = align_eigenfunctions(&model, &truth, n_quad)?;
        rmse = Some((
            metrics::rmse_loadings(&b, &truth.b0)?,
            metrics::rmse_factors(&z, &truth.zeta0)?,
            metrics::rmse_eigenfunctions(&aligned, &truth, n_quad)?,
            fl + fz + fe,
        ));
    }
    let cell = |v: Option<String>| v.unwrap_or_default();
    let mut w = csv::Writer::from_writer(create(&out)?);
    let csv_err = |e: csv::Error| CliError::new("csv", e.to_string());
    w.write_record(["n", "p", "q", "K", "rmse_l", "rmse_f", "rmse_e", "pe", "flips"])
        .map_err(csv_err)?;
    w.write_record([
        test.n().to_string(),
        model.p().to_string(),
        model.q().to_string(),
        model.k().to_string(),
        cell(rmse.map(|r| r.0.to_string())),
        cell(rmse.map(|r| r.1.to_string())),
        cell(rmse.map(|r| r.2.to_string())),
        pe.to_string(),
        cell(rmse.map(|r| r.3.to_string())),
    ])
    .map_err(csv_err)?;
    w.flush().map_err(|e| io_err(&out, e))?;
    write_json(&sidecar(&out, "config.json"), &a)
}

pub fn replicate(args: ReplicateArgs) -> CliResult {
    let mut a = merge(&args, args.config.as_deref())?;
    let out_dir: PathBuf = require(&a.out_dir, "replicate", "out-dir")?;
    let r = require(&a.r, "replicate", "R")?;
    config::configure_threads(a.parallel)?;
    a.parallel = Some(rayon::current_num_threads());
    let base_seed = *a.base_seed.get_or_insert(0);
    let timing = *a.timing.get_or_insert(false);
    let spec = resolve_scenario(&mut a.scenario, "replicate")?;
    let n = a.scenario.n.unwrap_or(DEFAULT_N);
    let fit_cfg = fit_config(&mut a.estimator, n)?;
    let opts = ReplicateOptions {
        threshold: a.estimator.threshold.unwrap_or(DEFAULT_THRESHOLD),
        metric_n_quad: fit_cfg.n_quad,
        fit: fit_cfg,
        q: None,
        k: None,
        test_set: true,
        record_timing: timing,
    };
    let rows = simulate::run_replicates(&spec, r, base_seed, &opts)?;

    std::fs::create_dir_all(&out_dir).map_err(|e| io_err(&out_dir, e))?;
    let metrics_path = out_dir.join("metrics.csv");
    let mut w = create(&metrics_path)?;
    simulate::write_metrics_csv(&rows, &mut w)?;
    finish(w, &metrics_path)?;
    let failures = rows.iter().filter(|r| r.error.is_some()).count();
    let manifest = json!({
        "scenario": match spec { ScenarioSpec::One(_) => 1, ScenarioSpec::Two(_) => 2 },
        "cfg": spec,
        "R": r,
        "base_seed": base_seed,
        "seeds": rows.iter().map(|r| r.seed).collect::<Vec<_>>(),
        "options": opts,
        "failures": failures,
        "code_version": env!("CARGO_PKG_VERSION"),
    });
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    write_json(&out_dir.join("config.json"), &a)
}
