use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use scol_learn::attack::{run_privacy_experiment, AttackReport, PrivacyReport};
use scol_learn::data::{gen_fraud, load_mnist_dir, mnist_splits, synthetic_splits};
use scol_learn::protocol::{run_scenario, PHASE_COLLAB};
use scol_learn::report::{hist_csv, metrics_csv, roc_csv, timing_csv, traffic_csv};
use scol_learn::{LabeledDataset, Method, ScenarioResult, Splits, TrainedModel};

use crate::config::{Dataset, ExperimentConfig, DATA_DIR_ENV};
use crate::error::{CliError, Result};
use crate::output::RunDir;

/// Where the partitions come from; MNIST is read once for all seeds.
enum Source {
    Mnist { train: LabeledDataset, test: LabeledDataset },
    Synthetic,
    Fraud,
}

impl Source {
    fn open(cfg: &ExperimentConfig, data_dir: Option<&Path>) -> Result<Source> {
        Ok(match cfg.dataset {
            Dataset::Mnist => {
                let dir = data_dir.expect("MNIST runs resolve a data directory");
                if !dir.is_dir() {
                    return Err(CliError::Config(format!(
                        "MNIST directory {} not found; pass --data-dir or set {DATA_DIR_ENV}",
                        dir.display()
                    )));
                }
                let (train, test) = load_mnist_dir(dir)?;
                let keep = ((test.len() as f64 * cfg.effective_scale()).round() as usize).max(1);
                let test = test.subset(&(0..keep.min(test.len())).collect::<Vec<_>>());
                Source::Mnist { train, test }
            }
            Dataset::Synthetic => Source::Synthetic,
            Dataset::Fraud => Source::Fraud,
        })
    }

    fn splits(&self, cfg: &ExperimentConfig, seed: u64) -> Result<Splits> {
        let spec = cfg.split_spec().scaled(cfg.effective_scale());
        Ok(match self {
            Source::Mnist { train, test } => mnist_splits(train, test.clone(), &spec, seed)?,
            Source::Synthetic => synthetic_splits(&spec, &cfg.synthetic_params(), seed)?,
            Source::Fraud => gen_fraud(seed)?,
        })
    }
}

fn data_dir(cfg: &ExperimentConfig) -> Option<PathBuf> {
    (cfg.dataset == Dataset::Mnist).then(|| cfg.resolve_data_dir(std::env::var(DATA_DIR_ENV).ok()))
}

/// Runs `body` in a fresh output directory, leaving the manifest
/// incomplete if it fails.
fn with_run_dir(command: &str, cfg: &ExperimentConfig, body: impl FnOnce(&mut RunDir<'_>) -> Result<()>) -> Result<()> {
    cfg.validate()?;
    let mut run = RunDir::create(command, cfg, data_dir(cfg))?;
    match body(&mut run) {
        Ok(()) => run.finish(),
        Err(e) => {
            run.fail(&e)?;
            Err(e)
        }
    }
}

pub fn split_table(splits: &[(u64, Splits)]) -> Result<String> {
    let classes = splits.first().map_or(0, |s| s.1.classes());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["seed".to_string(), "part".into(), "rows".into()];
    header.extend((0..classes).map(|l| format!("label_{l}")));
    w.write_record(&header)?;
    for (seed, s) in splits {
        for (name, d) in [("global", &s.global), ("party1", &s.party1), ("party2", &s.party2), ("test", &s.test)] {
            let mut rec = vec![seed.to_string(), name.to_string(), d.len().to_string()];
            rec.extend(d.label_counts().iter().map(|c| c.to_string()));
            w.write_record(&rec)?;
        }
    }
    into_string(w)
}

fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| CliError::Report(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Report(e.to_string()))
}

pub fn gen_data(cfg: &ExperimentConfig) -> Result<()> {
    with_run_dir("gen-data", cfg, |run| {
        let source = Source::open(cfg, data_dir(cfg).as_deref())?;
        let mut all = Vec::new();
        for &seed in &cfg.seeds {
            all.push((seed, source.splits(cfg, seed)?));
        }
        run.write("splits.csv", &split_table(&all)?)?;
        for (seed, s) in &all {
            println!(
                "seed {seed}: global {} party1 {} party2 {} test {}",
                s.global.len(),
                s.party1.len(),
                s.party2.len(),
                s.test.len()
            );
        }
        Ok(())
    })
}

fn save_checkpoints(run: &mut RunDir<'_>, r: &ScenarioResult) -> Result<()> {
    for (i, p) in r.parties.iter().enumerate() {
        let stem = format!("checkpoints/{}-seed{}-party{}", r.method, r.seed, i + 1);
        let nets: Vec<(String, &scol_learn::Net<scol_learn::Tensor>)> = match &p.model {
            TrainedModel::Chain(net) => vec![(format!("{stem}.ckpt"), net)],
            TrainedModel::Concat { extractors, classifier } => extractors
                .iter()
                .enumerate()
                .map(|(k, f)| (format!("{stem}-extractor{}.ckpt", k + 1), f))
                .chain(std::iter::once((format!("{stem}-classifier.ckpt"), classifier)))
                .collect(),
        };
        for (name, net) in nets {
            let path = run.path().join(&name);
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
            }
            net.save(&path, r.seed)?;
            run.record(&name);
        }
    }
    Ok(())
}

fn transcripts_csv(results: &[ScenarioResult]) -> Result<Option<String>> {
    if results.iter().all(|r| r.transcripts.is_empty()) {
        return Ok(None);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "seed", "party", "sha256"])?;
    for r in results {
        for (i, t) in r.transcripts.iter().enumerate() {
            let hex: String = t.iter().map(|b| format!("{b:02x}")).collect();
            w.write_record([r.method.name().to_string(), r.seed.to_string(), (i + 1).to_string(), hex])?;
        }
    }
    into_string(w).map(Some)
}

/// Rewrites every scenario report from the runs so far.
fn write_scenario_reports(run: &mut RunDir<'_>, results: &[ScenarioResult]) -> Result<()> {
    run.write("metrics.csv", &metrics_csv(results)?)?;
    run.write("timing.csv", &timing_csv(results)?)?;
    if let Some(t) = traffic_csv(results)? {
        run.write("traffic.csv", &t)?;
    }
    if let Some(t) = transcripts_csv(results)? {
        run.write("transcripts.csv", &t)?;
    }
    Ok(())
}

pub fn train(cfg: &ExperimentConfig) -> Result<()> {
    with_run_dir("train", cfg, |run| {
        let source = Source::open(cfg, data_dir(cfg).as_deref())?;
        let mut results = Vec::new();
        for &seed in &cfg.seeds {
            let splits = source.splits(cfg, seed)?;
            for m in &cfg.scenario.methods {
                let sc = cfg.scenario(m.0, seed, splits.features(), splits.classes())?;
                let r = run_scenario(&sc, &splits)?;
                let accs: Vec<String> = r
                    .parties
                    .iter()
                    .map(|p| format!("{:.2}%", p.evaluation.accuracy))
                    .collect();
                println!("{m} seed {seed}: accuracy {}", accs.join(" / "));
                save_checkpoints(run, &r)?;
                results.push(r);
                write_scenario_reports(run, &results)?;
            }
        }
        Ok(())
    })
}

fn auc_csv(reports: &[PrivacyReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "seed", "auc", "histogram_auc"])?;
    for p in reports {
        for (seed, r) in p.seeds.iter().zip(&p.reports) {
            w.write_record([
                p.method.name().to_string(),
                seed.to_string(),
                format!("{:.6}", r.auc),
                format!("{:.6}", r.histogram_auc()),
            ])?;
        }
    }
    into_string(w)
}

pub fn attack(cfg: &ExperimentConfig) -> Result<()> {
    with_run_dir("attack", cfg, |run| {
        let mut done: Vec<PrivacyReport> = Vec::new();
        for m in &cfg.attack.methods {
            let r = run_privacy_experiment(&cfg.privacy(m.0), &cfg.seeds)?;
            println!("{m}: attack AUC {:.4} ± {:.4}", r.mean_auc(), r.std_auc());
            done.push(r);
            let labelled: Vec<(&str, u64, &AttackReport)> = done
                .iter()
                .flat_map(|p| p.seeds.iter().zip(&p.reports).map(move |(s, r)| (p.method.name(), *s, r)))
                .collect();
            run.write("roc.csv", &roc_csv(&labelled)?)?;
            run.write("hist.csv", &hist_csv(&labelled)?)?;
            run.write("auc.csv", &auc_csv(&done)?)?;
        }
        Ok(())
    })
}

/// Plaintext and secure timing of one method's collaborative phase.
#[derive(Clone, Debug)]
pub struct BenchRow {
    pub method: Method,
    pub seed: u64,
    pub plain_seconds: f64,
    pub secure_seconds: f64,
    pub secure_bytes: u64,
    pub secure_rounds: u64,
}

impl BenchRow {
    pub fn ratio(&self) -> f64 {
        self.secure_seconds / self.plain_seconds.max(1e-9)
    }
}

pub fn bench_csv(rows: &[BenchRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "seed", "plain_seconds", "secure_seconds", "ratio", "secure_bytes", "secure_rounds"])?;
    for r in rows {
        w.write_record([
            r.method.name().to_string(),
            r.seed.to_string(),
            format!("{:.6}", r.plain_seconds),
            format!("{:.6}", r.secure_seconds),
            format!("{:.2}", r.ratio()),
            r.secure_bytes.to_string(),
            r.secure_rounds.to_string(),
        ])?;
    }
    into_string(w)
}

/// Runs every method twice on the same partitions, in plaintext and under
/// MPC. The config's scale applies to both, with the secure default.
pub fn bench(cfg: &ExperimentConfig) -> Result<()> {
    let mut cfg = cfg.clone();
    cfg.scenario.secure = true;
    cfg.scenario.methods.retain(|m| m.0 != Method::Nc);
    let cfg = &cfg;
    with_run_dir("bench", cfg, |run| {
        let source = Source::open(cfg, data_dir(cfg).as_deref())?;
        let (mut results, mut rows) = (Vec::new(), Vec::new());
        for &seed in &cfg.seeds {
            let splits = source.splits(cfg, seed)?;
            for m in &cfg.scenario.methods {
                let secure = cfg.scenario(m.0, seed, splits.features(), splits.classes())?;
                let plain = scol_learn::ScenarioConfig {
                    secure: false,
                    ..secure.clone()
                };
                let p = run_scenario(&plain, &splits)?;
                let s = run_scenario(&secure, &splits)?;
                let traffic = s.traffic.clone().unwrap_or_default();
                let row = BenchRow {
                    method: m.0,
                    seed,
                    plain_seconds: p.timing(PHASE_COLLAB).as_secs_f64(),
                    secure_seconds: s.timing(PHASE_COLLAB).as_secs_f64(),
                    secure_bytes: traffic.total_bytes_out(),
                    secure_rounds: traffic.total_rounds(),
                };
                println!(
                    "{m} seed {seed}: plaintext {:.3}s secure {:.3}s ratio {:.1}",
                    row.plain_seconds,
                    row.secure_seconds,
                    row.ratio()
                );
                rows.push(row);
                results.push(s);
                run.write("bench.csv", &bench_csv(&rows)?)?;
                write_scenario_reports(run, &results)?;
            }
        }
        Ok(())
    })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn find_files(dir: &Path, name: &str, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(CliError::io(dir))?
        .map(|e| e.map(|e| e.path()).map_err(CliError::io(dir)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            find_files(&p, name, out)?;
        } else if p.file_name().is_some_and(|f| f == name) {
            out.push(p);
        }
    }
    Ok(())
}

type Row = BTreeMap<String, String>;

fn read_rows(path: &Path) -> Result<Vec<Row>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(CliError::from)).collect()
}

fn field<'r>(row: &'r Row, key: &str, path: &Path) -> Result<&'r str> {
    row.get(key)
        .map(String::as_str)
        .ok_or_else(|| CliError::Report(format!("{}: missing column {key}", path.display())))
}

fn number(row: &Row, key: &str, path: &Path) -> Result<f64> {
    let v = field(row, key, path)?;
    v.parse()
        .map_err(|_| CliError::Report(format!("{}: {key} = {v:?} is not a number", path.display())))
}

/// Groups `value_cols` of every `name` file under `dir` by `key_cols` and
/// tabulates mean and standard deviation.
fn summarise(dir: &Path, name: &str, key_cols: &[&str], value_cols: &[&str]) -> Result<Option<String>> {
    let mut files = Vec::new();
    find_files(dir, name, &mut files)?;
    if files.is_empty() {
        return Ok(None);
    }
    let mut groups: BTreeMap<Vec<String>, Vec<Vec<f64>>> = BTreeMap::new();
    for path in &files {
        for row in read_rows(path)? {
            let key = key_cols
                .iter()
                .map(|k| field(&row, k, path).map(str::to_string))
                .collect::<Result<Vec<_>>>()?;
            let values = value_cols.iter().map(|v| number(&row, v, path)).collect::<Result<Vec<_>>>()?;
            groups.entry(key).or_default().push(values);
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = key_cols.iter().map(|s| s.to_string()).collect();
    header.push("runs".into());
    for v in value_cols {
        header.push(format!("{v}_mean"));
        header.push(format!("{v}_std"));
    }
    w.write_record(&header)?;
    for (key, rows) in groups {
        let mut rec = key;
        rec.push(rows.len().to_string());
        for j in 0..value_cols.len() {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            let (m, s) = mean_std(&col);
            rec.push(format!("{m:.6}"));
            rec.push(format!("{s:.6}"));
        }
        w.write_record(&rec)?;
    }
    into_string(w).map(Some)
}

/// Aggregates every run under `dir` into mean ± std tables next to them.
pub fn report(dir: &Path) -> Result<Vec<PathBuf>> {
    let tables = [
        ("metrics.csv", "metrics_summary.csv", &["method", "party", "label"][..], &["accuracy", "precision", "recall", "f1"][..]),
        ("auc.csv", "auc_summary.csv", &["method"][..], &["auc", "histogram_auc"][..]),
        ("bench.csv", "bench_summary.csv", &["method"][..], &["plain_seconds", "secure_seconds", "ratio", "secure_bytes"][..]),
    ];
    let mut written = Vec::new();
    for (input, output, keys, values) in tables {
        if let Some(text) = summarise(dir, input, keys, values)? {
            let path = dir.join(output);
            std::fs::write(&path, &text).map_err(CliError::io(&path))?;
            written.push(path);
        }
    }
    if written.is_empty() {
        return Err(CliError::Report(format!("no result files under {}", dir.display())));
    }
    let mut msg = String::new();
    for p in &written {
        let _ = writeln!(msg, "wrote {}", p.display());
    }
    print!("{msg}");
    Ok(written)
}
