//! Subcommand implementations.

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use tsg_core::baseline::{train_frs, FrsConfig, LinearRfModel, DEFAULT_PASSES, FRS_MAGIC};
use tsg_core::bench::{self, BenchConfig};
use tsg_core::data::{
    format_libsvm, make_semi_split, map_labels, parse_libsvm, MinMaxScaler, RawData, SemiDataset,
    SemiSplit, SparseVec, SplitManifest,
};
use tsg_core::diagnostics::{run_diagnostics, sample_probes, DiagnosticsOptions};
use tsg_core::loss::{DerivativeConvention, Label, UnlabeledLossKind};
use tsg_core::model::Model;
use tsg_core::rf::KernelSpec;
use tsg_core::search::{grid_search, GridSpec, SearchConfig};
use tsg_core::synthetic::{error_rate, separable, two_gaussians};
use tsg_core::trainer::{
    default_feature_count, pass_iterations, train as train_tsg, StepSchedule, TrainConfig,
    DEFAULT_ETA,
};

use crate::error::{CliError, Kind};
use crate::manifest::{FileDigest, RunManifest, Timings};
use crate::{
    BenchArgs, EvalArgs, Format, GridArgs, Method, ModelArgs, PredictArgs, SplitArgs, SynthArgs,
    SynthKind, TrainArgs,
};

/// Separate stream for diagnostic probes so they never share draws with the
/// instance sampler.
const PROBE_STREAM: u64 = 0x7072_6f62_6573;

fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::read(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::write(path, e))
}

fn parse_file(path: &Path, bytes: &[u8]) -> Result<RawData, CliError> {
    parse_libsvm(BufReader::new(bytes)).map_err(|e| CliError::from(e).in_file(path))
}

fn labels_of(path: &Path, raw: &RawData) -> Result<Vec<Label>, CliError> {
    map_labels(&raw.labels).map_err(|e| CliError::from(e).in_file(path))
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("value serializes")
}

/// Writes to `out` or stdout.
fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => write_bytes(p, text.as_bytes()),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| CliError::new(Kind::Resource, format!("cannot write stdout: {e}")))
        }
    }
}

pub fn synth(a: &SynthArgs) -> Result<(), CliError> {
    if a.n == 0 || a.d == 0 {
        return Err(CliError::config("n and d must be >= 1"));
    }
    let set = match a.kind {
        SynthKind::Gaussians => two_gaussians(a.n, a.d, 2.0, a.seed),
        SynthKind::Separable => separable(a.n, a.d, a.seed),
    };
    let vectors: Vec<SparseVec> = set.points.iter().map(|x| SparseVec::from_dense(x)).collect();
    let labels: Vec<f64> = set.labels.iter().map(|y| y.value()).collect();
    write_bytes(&a.out, format_libsvm(&vectors, &labels).as_bytes())
}

pub fn split(a: &SplitArgs) -> Result<(), CliError> {
    let bytes = read_bytes(&a.data)?;
    let raw = parse_file(&a.data, &bytes)?;
    let labels = labels_of(&a.data, &raw)?;
    let mut points = raw.dense(raw.d)?;
    let scaler = if a.no_scale {
        None
    } else {
        let s = MinMaxScaler::fit(&points)?;
        points = s.apply_all(&points);
        Some(s)
    };
    let split = make_semi_split(&points, &labels, a.n_labeled, a.seed)?;
    fs::create_dir_all(&a.out).map_err(|e| CliError::write(&a.out, e))?;

    let sparse = |xs: &[Vec<f64>]| xs.iter().map(|x| SparseVec::from_dense(x)).collect::<Vec<_>>();
    let ds = &split.dataset;
    let lab_points: Vec<Vec<f64>> = ds.labeled().iter().map(|(x, _)| x.clone()).collect();
    let lab_values: Vec<f64> = ds.labeled().iter().map(|(_, y)| y.value()).collect();
    write_bytes(
        &a.out.join("labeled.libsvm"),
        format_libsvm(&sparse(&lab_points), &lab_values).as_bytes(),
    )?;
    // The unlabeled file carries a placeholder label so it stays valid LIBSVM.
    let unl = sparse(ds.unlabeled());
    write_bytes(
        &a.out.join("unlabeled.libsvm"),
        format_libsvm(&unl, &vec![0.0; unl.len()]).as_bytes(),
    )?;
    let hidden: Vec<f64> = split.hidden_labels.iter().map(|y| y.value()).collect();
    write_bytes(&a.out.join("hidden.libsvm"), format_libsvm(&unl, &hidden).as_bytes())?;
    write_bytes(
        &a.out.join("split.json"),
        to_json(&split.manifest(scaler.as_ref())).as_bytes(),
    )?;
    println!(
        "labeled={} unlabeled={} d={}",
        ds.n_labeled(),
        ds.n_unlabeled(),
        ds.d()
    );
    Ok(())
}

struct Loaded {
    data: SemiDataset,
    inputs: Vec<FileDigest>,
}

fn load_semi(labeled: &Path, unlabeled: &Path) -> Result<Loaded, CliError> {
    let lab_bytes = read_bytes(labeled)?;
    let unl_bytes = read_bytes(unlabeled)?;
    let lab = parse_file(labeled, &lab_bytes)?;
    let unl = parse_file(unlabeled, &unl_bytes)?;
    let labels = labels_of(labeled, &lab)?;
    let d = lab.d.max(unl.d).max(1);
    let labeled_pairs = lab.dense(d)?.into_iter().zip(labels).collect();
    let data = SemiDataset::new(d, labeled_pairs, unl.dense(d)?)?;
    Ok(Loaded {
        data,
        inputs: vec![
            FileDigest::of("labeled", labeled, &lab_bytes),
            FileDigest::of("unlabeled", unlabeled, &unl_bytes),
        ],
    })
}

fn loss_settings(m: &ModelArgs) -> Result<(UnlabeledLossKind, DerivativeConvention), CliError> {
    let loss: UnlabeledLossKind = m.loss.parse().map_err(|e: tsg_core::loss::LossError| CliError::config(e.to_string()))?;
    let convention = if m.literal_derivatives {
        DerivativeConvention::Literal
    } else {
        DerivativeConvention::SignCorrected
    };
    Ok((loss, convention))
}

fn check_positive(name: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(CliError::config(format!("{name}={v} must be a positive number")))
    }
}

/// TSG configuration from flags, starting from the data-derived defaults.
pub fn tsg_config(a: &TrainArgs, data: &SemiDataset) -> Result<TrainConfig, CliError> {
    let (loss, convention) = loss_settings(&a.model_args)?;
    let kernel = KernelSpec::new(a.sigma)?;
    let (n_l, n_u) = (data.n_labeled(), data.n_unlabeled());
    let mut cfg = TrainConfig::defaults(n_l, n_u, a.c, kernel);
    let m = &a.model_args;
    if let Some(cs) = a.c_star {
        cfg.c_star = cs;
    }
    cfg.schedule = match (a.eta, a.theta) {
        (_, Some(theta)) => StepSchedule::TheoremRate { theta },
        (eta, None) => StepSchedule::Constant {
            eta: eta.unwrap_or(DEFAULT_ETA),
        },
    };
    cfg.batch_labeled = m.batch_labeled;
    cfg.batch_unlabeled = m.batch_unlabeled;
    let passes = m.passes.unwrap_or(1.0);
    if !(passes.is_finite() && passes >= 0.0) {
        return Err(CliError::config(format!("passes={passes} must be >= 0")));
    }
    cfg.iterations = a
        .t
        .unwrap_or_else(|| pass_iterations(n_u, m.batch_unlabeled, passes));
    cfg.loss = loss;
    cfg.convention = convention;
    if let Some(mm) = m.m {
        cfg.m = mm;
    }
    cfg.base_seed = m.seed;
    cfg.data_seed = m.data_seed;
    cfg.validate()?;
    Ok(cfg)
}

pub fn frs_config(a: &TrainArgs, data: &SemiDataset) -> Result<FrsConfig, CliError> {
    if a.t.is_some() || a.theta.is_some() {
        return Err(CliError::usage("--T and --theta apply to --method tsg only"));
    }
    let (loss, convention) = loss_settings(&a.model_args)?;
    let m = &a.model_args;
    let (n_l, n_u) = (data.n_labeled(), data.n_unlabeled());
    Ok(FrsConfig {
        c: a.c,
        c_star: a.c_star.unwrap_or_else(|| tsg_core::trainer::balanced_c_star(a.c, n_l, n_u)),
        schedule: StepSchedule::Constant {
            eta: a.eta.unwrap_or(DEFAULT_ETA),
        },
        passes: m.passes.unwrap_or(DEFAULT_PASSES),
        batch_labeled: m.batch_labeled,
        batch_unlabeled: m.batch_unlabeled,
        loss,
        convention,
        m_total: m.m.unwrap_or_else(|| default_feature_count(n_l + n_u)),
        kernel: KernelSpec::new(a.sigma)?,
        base_seed: m.seed,
        data_seed: m.data_seed,
    })
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    check_positive("sigma", a.sigma)?;
    let start = Instant::now();
    let Loaded { data, mut inputs } = load_semi(&a.labeled, &a.unlabeled)?;
    let mut timings = Timings {
        load_seconds: start.elapsed().as_secs_f64(),
        ..Timings::default()
    };
    let mut outputs = Vec::new();

    let start = Instant::now();
    let (bytes, config, method) = match a.method {
        Method::Tsg => {
            let cfg = tsg_config(a, &data)?;
            let model = match &a.diagnose {
                Some(path) => {
                    let pool: Vec<Vec<f64>> = data
                        .labeled()
                        .iter()
                        .map(|(x, _)| x.clone())
                        .chain(data.unlabeled().iter().cloned())
                        .collect();
                    let mut opts = DiagnosticsOptions::new(sample_probes(
                        &pool,
                        a.probes,
                        cfg.data_seed ^ PROBE_STREAM,
                    ));
                    opts.lipschitz = a.lipschitz;
                    let run = run_diagnostics(&cfg, &data, &opts)?;
                    let csv = run.report.to_csv();
                    let summary = run.report.summary_json();
                    write_bytes(path, csv.as_bytes())?;
                    let summary_path = sibling(path, ".summary.json");
                    write_bytes(&summary_path, summary.as_bytes())?;
                    outputs.push(FileDigest::of("diagnostics", path, csv.as_bytes()));
                    outputs.push(FileDigest::of("diagnostics_summary", &summary_path, summary.as_bytes()));
                    run.model
                }
                None => train_tsg(&cfg, &data, None)?,
            };
            (model.to_bytes(), serde_json::to_value(cfg), "tsg")
        }
        Method::Frs => {
            if a.diagnose.is_some() {
                return Err(CliError::usage("--diagnose applies to --method tsg only"));
            }
            let cfg = frs_config(a, &data)?;
            let model = train_frs(&cfg, &data)?;
            (model.to_bytes(), serde_json::to_value(cfg), "frs")
        }
    };
    timings.train_seconds = start.elapsed().as_secs_f64();

    let start = Instant::now();
    write_bytes(&a.model, &bytes)?;
    outputs.insert(0, FileDigest::of("model", &a.model, &bytes));
    timings.write_seconds = start.elapsed().as_secs_f64();
    if let Some(split) = &a.split {
        inputs.push(FileDigest::of("split", split, &read_bytes(split)?));
    }
    let manifest = RunManifest {
        tool: "tsg",
        version: env!("CARGO_PKG_VERSION"),
        method,
        config: config.expect("config serializes"),
        dimension: data.d(),
        n_labeled: data.n_labeled(),
        n_unlabeled: data.n_unlabeled(),
        split_manifest: a.split.as_ref().map(|p| p.display().to_string()),
        inputs,
        outputs,
        timings,
    };
    write_bytes(&sibling(&a.model, ".manifest.json"), manifest.to_json().as_bytes())
}

enum AnyModel {
    Tsg(Model),
    Frs(LinearRfModel),
}

impl AnyModel {
    fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = read_bytes(path)?;
        let parsed = if bytes.starts_with(FRS_MAGIC) {
            LinearRfModel::from_bytes(&bytes).map(AnyModel::Frs)
        } else {
            Model::from_bytes(&bytes).map(AnyModel::Tsg)
        };
        parsed.map_err(|e| CliError::from(e).in_file(path))
    }

    fn d(&self) -> usize {
        match self {
            AnyModel::Tsg(m) => m.d(),
            AnyModel::Frs(m) => m.d(),
        }
    }

    fn scores(&self, points: &[Vec<f64>]) -> Result<Vec<f64>, CliError> {
        match self {
            AnyModel::Tsg(m) => Ok(m.predict_scores(points)?),
            AnyModel::Frs(m) => points
                .iter()
                .map(|x| m.predict_score(x).map_err(CliError::from))
                .collect(),
        }
    }
}

fn load_scaler(path: &Path) -> Result<MinMaxScaler, CliError> {
    let bytes = read_bytes(path)?;
    let manifest: SplitManifest = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::new(Kind::Parse, format!("{}: {e}", path.display())))?;
    manifest
        .scaler
        .ok_or_else(|| CliError::config(format!("{} records no scaler", path.display())))
}

/// Reads `data` as dense rows of the model's dimension. Inputs using fewer
/// dimensions are zero-padded; an index beyond the model's `d` is a shape error.
fn model_inputs(model: &AnyModel, data: &Path, scaler: Option<&Path>) -> Result<(RawData, Vec<Vec<f64>>), CliError> {
    let bytes = read_bytes(data)?;
    let raw = parse_file(data, &bytes)?;
    let d = model.d();
    if raw.d > d {
        return Err(CliError::config(format!(
            "{}: input uses feature index {} but the model has d={d}",
            data.display(),
            raw.d
        )));
    }
    let mut points = raw.dense(d)?;
    if let Some(p) = scaler {
        let s = load_scaler(p)?;
        if s.d() != d {
            return Err(CliError::config(format!("scaler has d={}, model has d={d}", s.d())));
        }
        points = s.apply_all(&points);
    }
    Ok((raw, points))
}

pub fn predict(a: &PredictArgs) -> Result<(), CliError> {
    let model = AnyModel::load(&a.model)?;
    let (_, points) = model_inputs(&model, &a.data, a.scaler.as_deref())?;
    let scores = model.scores(&points)?;
    let mut out = String::with_capacity(scores.len() * 24);
    for s in scores {
        out.push_str(&format!("{} {s}\n", Label::from_score(s).value()));
    }
    emit(a.out.as_deref(), &out)
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let model = AnyModel::load(&a.model)?;
    let (raw, points) = model_inputs(&model, &a.data, a.scaler.as_deref())?;
    let truth = labels_of(&a.data, &raw)?;
    let predicted: Vec<Label> = model.scores(&points)?.into_iter().map(Label::from_score).collect();
    let err = error_rate(&predicted, &truth);
    let text = match a.format {
        None => format!("{err:.4}\n"),
        Some(Format::Csv) => format!("error_rate,n\n{err:.4},{}\n", truth.len()),
        Some(Format::Json) => format!("{{\"error_rate\": {err:.4}, \"n\": {}}}\n", truth.len()),
    };
    emit(None, &text)
}

pub fn gridsearch(a: &GridArgs) -> Result<(), CliError> {
    let Loaded { data, .. } = load_semi(&a.labeled, &a.unlabeled)?;
    let hidden_bytes = read_bytes(&a.hidden)?;
    let hidden_raw = parse_file(&a.hidden, &hidden_bytes)?;
    let hidden = labels_of(&a.hidden, &hidden_raw)?;
    if hidden.len() != data.n_unlabeled() {
        return Err(CliError::config(format!(
            "{} hidden labels for {} unlabeled points",
            hidden.len(),
            data.n_unlabeled()
        )));
    }
    let (loss, convention) = loss_settings(&a.model_args)?;
    let m = &a.model_args;
    let n_l = data.n_labeled();
    let n = data.n();
    let split = SemiSplit {
        dataset: data,
        hidden_labels: hidden,
        labeled_indices: (0..n_l).collect(),
        unlabeled_indices: (n_l..n).collect(),
        seed: a.fold_seed,
    };
    let cfg = SearchConfig {
        grid: GridSpec {
            folds: a.folds,
            ..GridSpec::default()
        },
        loss,
        convention,
        batch_labeled: m.batch_labeled,
        batch_unlabeled: m.batch_unlabeled,
        passes: m.passes.unwrap_or(1.0),
        m: m.m,
        c_star_ratio: None,
        base_seed: m.seed,
        data_seed: m.data_seed,
        fold_seed: a.fold_seed,
        jobs: a.jobs,
    };
    let result = grid_search(&split, &cfg)?;
    let text = match a.format {
        Format::Csv => result.to_csv(),
        Format::Json => to_json(&result),
    };
    emit(a.out.as_deref(), &text)?;
    if a.out.is_some() {
        let b = result.best;
        println!(
            "best log10_c={} log10_sigma={} log10_eta={} cv_error={:.4}",
            b.log10_c, b.log10_sigma, b.log10_eta, b.cv_error
        );
    }
    Ok(())
}

pub fn bench(a: &BenchArgs) -> Result<(), CliError> {
    if a.t.is_empty() && a.n.is_empty() {
        return Err(CliError::usage("bench needs --T and/or --n values"));
    }
    check_positive("sigma", a.sigma)?;
    if a.batch == 0 || a.d == 0 {
        return Err(CliError::config("batch and d must be >= 1"));
    }
    let cfg = BenchConfig {
        m: a.m,
        d: a.d,
        batch_labeled: a.batch,
        batch_unlabeled: a.batch,
        sigma: a.sigma,
        seed: a.seed,
        repeats: a.repeats,
        n: a.pool,
        ..BenchConfig::default()
    };
    let mut rows = Vec::new();
    if !a.t.is_empty() {
        if a.m.is_none() {
            return Err(CliError::usage("the T sweep needs a fixed --m"));
        }
        rows.extend(bench::bench_iterations(&cfg, &a.t)?);
    }
    if !a.n.is_empty() {
        rows.extend(bench::bench_sizes(&cfg, &a.n)?);
    }
    let text = match a.format {
        Format::Csv => bench::to_csv(&rows),
        Format::Json => to_json(&rows),
    };
    emit(a.out.as_deref(), &text)
}
