use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gridcast::codec::{seal, write_file, Encoder};
use gridcast::fusion::{fuse_average, fuse_priority, PriorityMap};
use gridcast::grid::{GridSequence, LabelGrid, SemClass, NUM_CLASSES};
use gridcast::metrics::{accumulate, horizon_curves, persistence, table_csv, ConfusionCounts, HorizonCurves};
use gridcast::model::data::featurize_sample;
use gridcast::model::{train, LogRecord, Modality, Model, TrainingSet};
use gridcast::sim::{generate_samples, read_dataset, write_dataset, Sample};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::predictions::Predictions;
use crate::CliError;

/// Share of grid cells per class over all samples and horizons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub samples: usize,
    pub cells: u64,
    pub vru: f64,
    pub vehicle: f64,
    pub background: f64,
}

impl ClassStats {
    pub fn of(samples: &[Sample]) -> Self {
        let mut counts = [0u64; NUM_CLASSES];
        for s in samples {
            for g in s.labels.labels() {
                for c in SemClass::ALL {
                    counts[c.index()] += g.count(c) as u64;
                }
            }
        }
        let cells: u64 = counts.iter().sum();
        let frac = |c: SemClass| if cells == 0 { 0.0 } else { counts[c.index()] as f64 / cells as f64 };
        Self {
            samples: samples.len(),
            cells,
            vru: frac(SemClass::Vru),
            vehicle: frac(SemClass::Vehicle),
            background: frac(SemClass::Background),
        }
    }
}

/// Generates `n` samples with seeds `seed..seed+n` into `out`.
pub fn cmd_simulate(cfg: &RunConfig, n: usize, seed: u64, out: &Path) -> Result<ClassStats, CliError> {
    let samples = generate_samples(&cfg.scene, &cfg.sensors_for_run(), &cfg.grid.spec(), seed, n)?;
    write_dataset(&samples, &cfg.features.radar, out)?;
    cfg.echo(out)?;
    let stats = ClassStats::of(&samples);
    let path = out.join("class_stats.json");
    std::fs::write(&path, serde_json::to_string_pretty(&stats).expect("stats serialize")).map_err(|e| CliError::io(&path, e))?;
    Ok(stats)
}

pub(crate) fn load_samples(dataset: &Path, cfg: &RunConfig) -> Result<Vec<Sample>, CliError> {
    if !dataset.join("index.json").exists() {
        return Err(CliError::Missing(format!("no dataset at {} (index.json not found)", dataset.display())));
    }
    let (samples, _) = read_dataset(dataset)?;
    if let Some(s) = samples.first() {
        if s.labels.spec() != cfg.grid.spec() {
            return Err(CliError::Mismatch(format!(
                "dataset grid {:?} differs from the configured grid {:?}",
                s.labels.spec(),
                cfg.grid.spec()
            )));
        }
    }
    Ok(samples)
}

fn training_set(samples: &[Sample], modality: Modality, cfg: &RunConfig) -> Result<TrainingSet, CliError> {
    if modality == Modality::Vision && samples.iter().any(|s| s.inputs.images.is_empty()) {
        return Err(CliError::Data("dataset has no camera images; simulate with the vision modality enabled".into()));
    }
    Ok(TrainingSet::from_samples(samples, modality, &cfg.features)?)
}

const FEATURE_MAGIC: [u8; 4] = *b"GCFT";

/// Featurizes every sample of a dataset for one modality.
///
/// Output (codec-framed, magic `GCFT`, version 1): modality name, the
/// per-sample input shape, the sample count and one f32 array per sample.
pub fn cmd_featurize(cfg: &RunConfig, dataset: &Path, modality: Modality, out: &Path) -> Result<Vec<usize>, CliError> {
    let samples = load_samples(dataset, cfg)?;
    let mut enc = Encoder::new();
    let mut shape = Vec::new();
    let mut body = Vec::new();
    for s in &samples {
        let (sh, data) = featurize_sample(s, modality, &cfg.features)?;
        shape = sh;
        body.push(data);
    }
    enc.str(modality.name());
    enc.u64(shape.len() as u64);
    for &d in &shape {
        enc.u64(d as u64);
    }
    enc.u64(body.len() as u64);
    for d in &body {
        enc.f32s(d);
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    write_file(out, &seal(FEATURE_MAGIC, 1, &enc.finish()))?;
    Ok(shape)
}

pub const LOSS_HEADER: &str = "step,loss,vru,vehicle,background";

pub fn loss_csv(log: &[LogRecord]) -> String {
    let mut out = format!("{LOSS_HEADER}\n");
    for r in log {
        let _ = writeln!(out, "{},{},{},{},{}", r.step, r.loss, r.per_class[0], r.per_class[1], r.per_class[2]);
    }
    out
}

/// Trains one modality's network on a dataset; writes the checkpoint and
/// `<checkpoint>.loss.csv` next to it.
pub fn cmd_train(cfg: &RunConfig, modality: Modality, dataset: &Path, out: &Path) -> Result<Vec<LogRecord>, CliError> {
    let samples = load_samples(dataset, cfg)?;
    if samples.is_empty() {
        return Err(CliError::Data(format!("dataset {} is empty", dataset.display())));
    }
    let data = training_set(&samples, modality, cfg)?;
    let mut model = Model::new(modality, cfg.grid.spec(), cfg.features, &cfg.net_config(modality))?;
    let log = train(&mut model.net, &data, &cfg.train)?;
    let dir = out.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    cfg.echo(dir)?;
    model.save(out)?;
    let loss_path = PathBuf::from(format!("{}.loss.csv", out.display()));
    std::fs::write(&loss_path, loss_csv(&log)).map_err(|e| CliError::io(&loss_path, e))?;
    Ok(log)
}

pub fn checkpoint_path(dir: &Path, modality: Modality) -> PathBuf {
    dir.join(format!("{modality}.ckpt"))
}

fn load_model(path: &Path, modality: Modality, cfg: &RunConfig) -> Result<Model, CliError> {
    if !path.exists() {
        return Err(CliError::Missing(format!("checkpoint {} for {modality} does not exist", path.display())));
    }
    let model = Model::load(path)?;
    if model.modality != modality {
        return Err(CliError::Mismatch(format!("{} holds a {} model, expected {modality}", path.display(), model.modality)));
    }
    if model.grid != cfg.grid.spec() {
        return Err(CliError::Mismatch(format!(
            "checkpoint {} was trained on grid {:?} but the config uses {:?}",
            path.display(),
            model.grid,
            cfg.grid.spec()
        )));
    }
    Ok(model)
}

/// Where predictions come from in `cmd_eval`.
#[derive(Debug, Clone)]
pub enum Predictor {
    /// `<dir>/<modality>.ckpt` for every configured modality.
    Checkpoints(PathBuf),
    /// The labels themselves, for every configured modality.
    Labels,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    /// Series name and counts: the modalities, then `average` and `pool`.
    pub series: Vec<(String, ConfusionCounts)>,
    pub persistence: ConfusionCounts,
    pub table: String,
    pub curves: HorizonCurves,
}

fn labels_of(seqs: &[GridSequence]) -> Vec<Vec<LabelGrid>> {
    seqs.iter().map(GridSequence::labels).collect()
}

fn counts(pred: &[Vec<LabelGrid>], truth: &[Vec<LabelGrid>]) -> Result<ConfusionCounts, CliError> {
    Ok(accumulate(pred.iter().zip(truth).map(|(p, t)| (&p[..], &t[..])))?)
}

/// Per-modality inference, both fusion rules, metrics and curves.
///
/// Writes into `out`: `table.csv` (class × metric at t₀, one column per
/// series), `curves.csv` (every metric, class and horizon, plus the
/// persistence baseline), `counts.json`, `plots/*.png` and
/// `predictions/<series>.gcpr`.
pub fn cmd_eval(cfg: &RunConfig, predictor: &Predictor, dataset: &Path, out: &Path) -> Result<EvalReport, CliError> {
    let samples = load_samples(dataset, cfg)?;
    if samples.is_empty() {
        return Err(CliError::Data(format!("dataset {} is empty", dataset.display())));
    }
    let mut modalities = cfg.modalities.clone();
    modalities.sort();
    modalities.dedup();
    let mut per_modality = Vec::new();
    for &m in &modalities {
        let seqs = match predictor {
            Predictor::Labels => samples.iter().map(|s| s.labels.clone()).collect(),
            Predictor::Checkpoints(dir) => {
                let mut model = load_model(&checkpoint_path(dir, m), m, cfg)?;
                model.predict(&training_set(&samples, m, cfg)?, 16)?
            }
        };
        per_modality.push((m.name().to_string(), seqs));
    }
    let mut average = Vec::with_capacity(samples.len());
    let mut pool = Vec::with_capacity(samples.len());
    for i in 0..samples.len() {
        let inputs: Vec<GridSequence> = per_modality.iter().map(|(_, s)| s[i].clone()).collect();
        average.push(fuse_average(&inputs)?);
        pool.push(fuse_priority(&inputs, &cfg.fusion.priority)?);
    }
    per_modality.push(("average".into(), average));
    per_modality.push(("pool".into(), pool));

    let truth: Vec<Vec<LabelGrid>> = samples.iter().map(|s| s.labels.labels()).collect();
    let mut series = Vec::new();
    for (name, seqs) in &per_modality {
        series.push((name.clone(), counts(&labels_of(seqs), &truth)?));
    }
    let persist: Vec<Vec<LabelGrid>> = truth.iter().map(|t| persistence(t)).collect();
    let persistence_counts = counts(&persist, &truth)?;

    let table = table_csv(&series, 0);
    let mut with_baseline = series.clone();
    with_baseline.push(("persistence".into(), persistence_counts.clone()));
    let curves = horizon_curves(&with_baseline);

    let pred_dir = out.join("predictions");
    std::fs::create_dir_all(&pred_dir).map_err(|e| CliError::io(&pred_dir, e))?;
    for (name, seqs) in per_modality {
        Predictions {
            series: name.clone(),
            grid: cfg.grid.spec(),
            sequences: seqs,
        }
        .write(&pred_dir.join(format!("{name}.gcpr")))?;
    }
    let write = |name: &str, text: &str| {
        let p = out.join(name);
        std::fs::write(&p, text).map_err(|e| CliError::io(&p, e))
    };
    write("table.csv", &table)?;
    write("curves.csv", &curves.to_csv())?;
    let json: Vec<(&str, &ConfusionCounts)> = with_baseline.iter().map(|(n, c)| (n.as_str(), c)).collect();
    write("counts.json", &serde_json::to_string_pretty(&json).expect("counts serialize"))?;
    curves.write_plots(&out.join("plots"))?;
    cfg.echo(out)?;
    Ok(EvalReport {
        series,
        persistence: persistence_counts,
        table,
        curves,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionRule {
    Average,
    Priority,
}

/// Fuses prediction files sample by sample.
pub fn cmd_fuse(inputs: &[PathBuf], rule: FusionRule, priority: &PriorityMap, out: &Path) -> Result<Predictions, CliError> {
    if inputs.is_empty() {
        return Err(CliError::Missing("no prediction files to fuse".into()));
    }
    let preds = inputs.iter().map(|p| Predictions::read(p)).collect::<Result<Vec<_>, _>>()?;
    let n = preds[0].sequences.len();
    if let Some(p) = preds.iter().find(|p| p.sequences.len() != n || p.grid != preds[0].grid) {
        return Err(CliError::Mismatch(format!(
            "{} has {} samples on {:?}, {} has {n} on {:?}",
            p.series, p.sequences.len(), p.grid, preds[0].series, preds[0].grid
        )));
    }
    let mut sequences = Vec::with_capacity(n);
    for i in 0..n {
        let cells: Vec<GridSequence> = preds.iter().map(|p| p.sequences[i].clone()).collect();
        sequences.push(match rule {
            FusionRule::Average => fuse_average(&cells)?,
            FusionRule::Priority => fuse_priority(&cells, priority)?,
        });
    }
    let fused = Predictions {
        series: match rule {
            FusionRule::Average => "average".into(),
            FusionRule::Priority => "pool".into(),
        },
        grid: preds[0].grid,
        sequences,
    };
    fused.write(out)?;
    Ok(fused)
}

/// Redraws the horizon plots from a `curves.csv`, or a loss curve from a
/// `*.loss.csv` (written as `loss.png`).
pub fn cmd_plot(input: &Path, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let text = std::fs::read_to_string(input).map_err(|e| CliError::Missing(format!("{}: {e}", input.display())))?;
    if text.starts_with(LOSS_HEADER) {
        std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
        let mut losses = Vec::new();
        for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
            let v: f64 = line
                .split(',')
                .nth(1)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| CliError::Data(format!("bad loss row {line:?}")))?;
            losses.push(v);
        }
        let path = out.join("loss.png");
        crate::render::loss_plot(&losses).save_with_format(&path, image::ImageFormat::Png).map_err(|e| CliError::Data(e.to_string()))?;
        return Ok(vec![path]);
    }
    Ok(HorizonCurves::from_csv(&text)?.write_plots(out)?)
}

/// Writes a panel for one dataset sample; see [`crate::render::panel`].
pub fn cmd_render(cfg: &RunConfig, dataset: &Path, index: usize, predictions: &[PathBuf], out: &Path) -> Result<(), CliError> {
    let samples = load_samples(dataset, cfg)?;
    let sample = samples
        .get(index)
        .ok_or_else(|| CliError::Data(format!("sample {index} out of range (dataset has {})", samples.len())))?;
    let mut rows = Vec::new();
    for p in predictions {
        let pred = Predictions::read(p)?;
        let seq = pred
            .sequences
            .get(index)
            .ok_or_else(|| CliError::Mismatch(format!("{} has no sample {index}", p.display())))?;
        if pred.grid != sample.labels.spec() {
            return Err(CliError::Mismatch(format!("{} uses grid {:?}, dataset uses {:?}", p.display(), pred.grid, sample.labels.spec())));
        }
        rows.push(seq.labels());
    }
    let img = crate::render::panel(sample, &rows);
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    img.save_with_format(out, image::ImageFormat::Png).map_err(|e| CliError::Data(e.to_string()))
}
