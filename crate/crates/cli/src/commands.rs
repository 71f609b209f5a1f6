use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use cyberseer::experiments::{
    evaluate, exposure_sweep, featurize_sessions, fit_fold_context, run_cv, time_span_sweep,
    train_model, tune_random_search, with_jobs, CvConfig, ReportRow, SampleControl, SweepReport,
};
use cyberseer::features::store::{config_hash, export_csv, read_store, write_store};
use cyberseer::features::{resample_session, FeatureNormalizer, ResampledSession, SegmentSample};
use cyberseer::models::Architecture;
use cyberseer::nnet::{load_checkpoint, save_checkpoint};
use cyberseer::stats::{self, TestResult};
use cyberseer::telemetry::{
    generate_dataset, load_session, save_session, validate_session, RawSession, MANIFEST_FILE,
};
use serde_json::json;

use crate::config::RunConfig;

fn emit(value: serde_json::Value) {
    println!("{value}");
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn generate(cfg: &RunConfig, sessions: Option<usize>) -> Result<()> {
    let n = sessions.unwrap_or(cfg.sessions);
    if n == 0 {
        bail!("sessions must be at least 1");
    }
    let data = generate_dataset(&cfg.generator, n, cfg.seed)?;
    ensure_dir(&cfg.data_root)?;
    for s in &data {
        save_session(s, cfg.data_root.join(&s.session_id))?;
    }
    let sick = data.iter().filter(|s| s.label().map(|l| l.is_sick()).unwrap_or(false)).count();
    emit(json!({
        "command": "generate",
        "sessions": n,
        "sick": sick,
        "data_root": cfg.data_root,
    }));
    Ok(())
}

fn session_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .with_context(|| format!("reading data root {}", root.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        bail!("no session directories under {}", root.display());
    }
    Ok(dirs)
}

pub fn validate(cfg: &RunConfig) -> Result<()> {
    let mut failed = 0;
    let dirs = session_dirs(&cfg.data_root)?;
    for dir in &dirs {
        let (id, problems) = match load_session(dir) {
            Ok(s) => {
                let report = validate_session(&s);
                (s.session_id, report.violations.iter().map(ToString::to_string).collect())
            }
            Err(e) => (dir.file_name().unwrap_or_default().to_string_lossy().into_owned(), vec![e.to_string()]),
        };
        let passed = problems.is_empty();
        failed += usize::from(!passed);
        emit(json!({ "session_id": id, "passed": passed, "violations": problems }));
    }
    if failed > 0 {
        bail!("{failed} of {} sessions failed validation", dirs.len());
    }
    emit(json!({ "command": "validate", "sessions": dirs.len(), "failed": 0 }));
    Ok(())
}

/// Loads every session that passes validation; others are skipped with a
/// warning.
fn load_sessions(cfg: &RunConfig) -> Result<Vec<RawSession>> {
    let mut out = Vec::new();
    for dir in session_dirs(&cfg.data_root)? {
        match load_session(&dir) {
            Ok(s) => {
                let report = validate_session(&s);
                if report.passed() {
                    out.push(s);
                } else {
                    log::warn!("skipping {}: {} violations", s.session_id, report.violations.len());
                }
            }
            Err(e) => log::warn!("skipping {}: {e}", dir.display()),
        }
    }
    if out.is_empty() {
        bail!("no valid sessions under {}", cfg.data_root.display());
    }
    Ok(out)
}

fn load_resampled(cfg: &RunConfig) -> Result<Vec<ResampledSession>> {
    load_sessions(cfg)?
        .iter()
        .map(|s| resample_session(s, &cfg.features).with_context(|| format!("resampling {}", s.session_id)))
        .collect()
}

fn featurize_data_root(cfg: &RunConfig) -> Result<Vec<SegmentSample>> {
    let sessions = load_resampled(cfg)?;
    Ok(with_jobs(cfg.jobs, || featurize_sessions(&sessions, cfg.ts, &cfg.features))??)
}

pub fn featurize(cfg: &RunConfig, csv: Option<&Path>) -> Result<()> {
    let samples = featurize_data_root(cfg)?;
    let path = cfg.store_path();
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    write_store(&path, &samples, cfg.ts, &cfg.features)?;
    if let Some(csv) = csv {
        export_csv(&samples, BufWriter::new(File::create(csv).with_context(|| format!("creating {}", csv.display()))?))?;
    }
    let sessions: std::collections::BTreeSet<&str> = samples.iter().map(|s| s.session_id.as_str()).collect();
    emit(json!({
        "command": "featurize",
        "ts": cfg.ts,
        "sessions": sessions.len(),
        "segments": samples.len(),
        "store": path,
    }));
    Ok(())
}

/// Segments from the feature store, or straight from the data root when
/// no store exists yet.
fn load_samples(cfg: &RunConfig) -> Result<Vec<SegmentSample>> {
    let path = cfg.store_path();
    if !path.exists() {
        log::info!("{} not found; featurizing {}", path.display(), cfg.data_root.display());
        return featurize_data_root(cfg);
    }
    let (samples, footer) = read_store(&path)?;
    if footer.config_hash != config_hash(&cfg.features, cfg.ts) {
        bail!(
            "feature store {} was built with a different T_s or feature config; run featurize again",
            path.display()
        );
    }
    if samples.is_empty() {
        bail!("feature store {} holds no segments", path.display());
    }
    Ok(samples)
}

fn normalizer_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("normalizer.json")
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let samples = load_samples(cfg)?;
    let hp = cfg.hyperparams_for(cfg.preset);
    let cv = cfg.cv_config();
    let all: Vec<usize> = (0..samples.len()).collect();
    let (graph, normalizer) = with_jobs(cfg.jobs, || -> Result<_> {
        let ctx = fit_fold_context(&hp, &samples, &all, &cv, 0)?;
        let train = ctx.normalizer.apply_all(&samples)?;
        let graph = train_model(&hp, &train, ctx.teacher.as_ref(), &cv, 0)?;
        let m = evaluate(&graph, &train)?;
        log::info!("training accuracy {:.4}", m.accuracy);
        Ok((graph, ctx.normalizer))
    })??;
    let path = cfg.checkpoint_path();
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    save_checkpoint(&graph, &path)?;
    fs::write(normalizer_path(&path), serde_json::to_string_pretty(&normalizer)?)
        .with_context(|| format!("writing normalizer next to {}", path.display()))?;
    emit(json!({
        "command": "train",
        "model": cfg.preset,
        "segments": samples.len(),
        "epochs": graph.trained_epochs,
        "checkpoint": path,
    }));
    Ok(())
}

fn write_report(report: &SweepReport, out: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    ensure_dir(out)?;
    let folds = out.join(format!("{stem}.csv"));
    let agg = out.join(format!("{stem}_aggregate.csv"));
    report.write_csv(BufWriter::new(File::create(&folds).with_context(|| format!("creating {}", folds.display()))?))?;
    report.write_aggregate_csv(BufWriter::new(File::create(&agg).with_context(|| format!("creating {}", agg.display()))?))?;
    Ok((folds, agg))
}

pub fn eval(cfg: &RunConfig, cv: bool) -> Result<()> {
    let samples = load_samples(cfg)?;
    if cv {
        let cvcfg = cfg.cv_config();
        let result = run_cv(&cfg.hyperparams_for(cfg.preset), &samples, &cvcfg)?;
        let report = SweepReport {
            rows: vec![ReportRow {
                model: cfg.preset.to_string(),
                variable: "T_s".into(),
                value: cfg.ts,
                grouping: cfg.grouping,
                seed: cfg.seed,
                cv: result.clone(),
            }],
        };
        let (folds, agg) = write_report(&report, &cfg.out, &format!("cv_{}_ts{}", cfg.preset, cfg.ts))?;
        emit(json!({
            "command": "eval",
            "mode": "cv",
            "model": cfg.preset,
            "grouping": cfg.grouping,
            "mean_accuracy": result.mean_accuracy,
            "std_accuracy": result.std_accuracy,
            "mean_f1": result.mean_f1,
            "report": folds,
            "aggregate": agg,
        }));
        return Ok(());
    }
    let path = cfg.checkpoint_path();
    let graph = load_checkpoint(&path)?;
    let npath = normalizer_path(&path);
    let normalizer: FeatureNormalizer = serde_json::from_str(
        &fs::read_to_string(&npath).with_context(|| format!("reading {}", npath.display()))?,
    )
    .with_context(|| format!("parsing {}", npath.display()))?;
    let m = evaluate(&graph, &normalizer.apply_all(&samples)?)?;
    emit(json!({
        "command": "eval",
        "mode": "checkpoint",
        "checkpoint": path,
        "segments": samples.len(),
        "accuracy": m.accuracy,
        "f1": m.f1,
    }));
    Ok(())
}

fn summarize(report: &SweepReport) -> Vec<serde_json::Value> {
    report
        .rows
        .iter()
        .map(|r| {
            json!({
                "model": r.model,
                r.variable.clone(): r.value,
                "mean_accuracy": r.cv.mean_accuracy,
                "std_accuracy": r.cv.std_accuracy,
                "n_samples": r.cv.n_samples,
            })
        })
        .collect()
}

pub fn sweep_spans(cfg: &RunConfig, models: Option<Vec<Architecture>>) -> Result<()> {
    let sessions = load_resampled(cfg)?;
    let models: Vec<_> = models
        .unwrap_or_else(|| Architecture::ALL.to_vec())
        .into_iter()
        .map(|a| cfg.hyperparams_for(a))
        .collect();
    let report = time_span_sweep(&sessions, &models, &cfg.spans, cfg.control, &cfg.cv_config())?;
    let stem = match cfg.control {
        SampleControl::None => "sweep_span",
        SampleControl::Downsample => "sweep_span_downsample",
    };
    let (folds, agg) = write_report(&report, &cfg.out, stem)?;
    emit(json!({
        "command": "sweep",
        "kind": "span",
        "rows": summarize(&report),
        "report": folds,
        "aggregate": agg,
    }));
    Ok(())
}

pub fn sweep_exposure(cfg: &RunConfig, models: Option<Vec<Architecture>>) -> Result<()> {
    let sessions = load_resampled(cfg)?;
    let models: Vec<_> = models
        .unwrap_or_else(|| vec![Architecture::Kinematic, Architecture::Eda])
        .into_iter()
        .map(|a| cfg.hyperparams_for(a))
        .collect();
    let report = exposure_sweep(&sessions, &models, cfg.exposure_ts, &cfg.exposure_n, &cfg.cv_config())?;
    let (folds, agg) = write_report(&report, &cfg.out, "sweep_exposure")?;
    emit(json!({
        "command": "sweep",
        "kind": "exposure",
        "rows": summarize(&report),
        "report": folds,
        "aggregate": agg,
    }));
    Ok(())
}

pub fn tune(cfg: &RunConfig, include_preset: bool) -> Result<()> {
    let samples = load_samples(cfg)?;
    let cvcfg: CvConfig = cfg.cv_config();
    let baseline = include_preset.then(|| cfg.hyperparams_for(cfg.preset));
    let result = tune_random_search(cfg.preset, &cfg.search, cfg.budget, cfg.seed, &samples, &cvcfg, baseline)?;
    ensure_dir(&cfg.out)?;
    let path = cfg.out.join(format!("tune_{}.json", cfg.preset));
    fs::write(&path, serde_json::to_string_pretty(&result)?).with_context(|| format!("writing {}", path.display()))?;
    emit(json!({
        "command": "tune",
        "model": cfg.preset,
        "trials": result.trials.len(),
        "best_index": result.best_index,
        "best_score": result.best_score,
        "best": result.best,
        "log": path,
    }));
    Ok(())
}

/// Columns of a headed CSV file, by name.
fn read_columns(file: &Path) -> Result<(Vec<String>, BTreeMap<String, Vec<String>>)> {
    let mut r = csv::Reader::from_path(file).with_context(|| format!("opening {}", file.display()))?;
    let headers: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut cols: BTreeMap<String, Vec<String>> = headers.iter().map(|h| (h.clone(), Vec::new())).collect();
    for rec in r.records() {
        let rec = rec.with_context(|| format!("reading {}", file.display()))?;
        for (h, v) in headers.iter().zip(rec.iter()) {
            cols.get_mut(h).expect("header present").push(v.trim().to_string());
        }
    }
    Ok((headers, cols))
}

fn column<'a>(cols: &'a BTreeMap<String, Vec<String>>, name: &str) -> Result<&'a [String]> {
    cols.get(name)
        .map(Vec::as_slice)
        .ok_or_else(|| anyhow!("no column `{name}`"))
}

fn numeric(values: &[String], name: &str) -> Result<Vec<f64>> {
    values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            v.parse::<f64>()
                .with_context(|| format!("column `{name}` row {}: `{v}` is not a number", i + 1))
        })
        .collect()
}

fn print_result(test: &str, r: &TestResult) {
    println!("test,statistic,df,p_value");
    println!("{test},{},{},{}", r.statistic, r.df, r.p_value);
}

pub fn stats_ttest(file: &Path, group_col: &str, value_col: Option<&str>) -> Result<()> {
    let (headers, cols) = read_columns(file)?;
    let value_col = match value_col {
        Some(v) => v.to_string(),
        None => {
            let others: Vec<&String> = headers.iter().filter(|h| *h != group_col).collect();
            match others.as_slice() {
                [only] => (*only).clone(),
                _ => bail!("pass --value-col; {} has {} candidate columns", file.display(), others.len()),
            }
        }
    };
    let groups = column(&cols, group_col)?;
    let values = numeric(column(&cols, &value_col)?, &value_col)?;
    let mut by_group: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (g, v) in groups.iter().zip(values) {
        by_group.entry(g.as_str()).or_default().push(v);
    }
    if by_group.len() != 2 {
        bail!("column `{group_col}` has {} distinct groups; the t-test needs exactly 2", by_group.len());
    }
    let mut it = by_group.values();
    let (a, b) = (it.next().expect("two groups"), it.next().expect("two groups"));
    print_result("ttest", &stats::t_test_independent(a, b)?);
    Ok(())
}

pub fn stats_pearson(file: &Path, x: &str, y: &str) -> Result<()> {
    let (_, cols) = read_columns(file)?;
    let xs = numeric(column(&cols, x)?, x)?;
    let ys = numeric(column(&cols, y)?, y)?;
    print_result("pearson", &stats::pearson(&xs, &ys)?);
    Ok(())
}

fn parse_table(text: &str) -> Result<Vec<Vec<f64>>> {
    text.split(';')
        .map(|row| {
            row.split(',')
                .map(|c| c.trim().parse::<f64>().with_context(|| format!("bad table cell `{c}`")))
                .collect()
        })
        .collect()
}

pub fn stats_chi2(file: Option<&Path>, row_col: Option<&str>, col_col: Option<&str>, table: Option<&str>) -> Result<()> {
    let table = match (table, file, row_col, col_col) {
        (Some(t), _, _, _) => parse_table(t)?,
        (None, Some(f), Some(rc), Some(cc)) => {
            let (_, cols) = read_columns(f)?;
            let (rows, cs) = (column(&cols, rc)?, column(&cols, cc)?);
            let rkeys: Vec<&String> = rows.iter().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
            let ckeys: Vec<&String> = cs.iter().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
            let mut t = vec![vec![0.0; ckeys.len()]; rkeys.len()];
            for (r, c) in rows.iter().zip(cs) {
                let i = rkeys.binary_search(&r).expect("key collected");
                let j = ckeys.binary_search(&c).expect("key collected");
                t[i][j] += 1.0;
            }
            t
        }
        _ => bail!("chi2 needs --table or --file with --row-col and --col-col"),
    };
    print_result("chi2", &stats::chi_square_independence(&table)?);
    Ok(())
}
