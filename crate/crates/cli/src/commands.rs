use std::path::{Path, PathBuf};

use mcseg_core::data::{
    batches, compute_cues, load_frame_dir, make_folds, scan_davis_layout, suite_specs, synth_generate,
    Clip, DatasetIndex, Fold, SampleSet,
};
use mcseg_core::metrics::{aggregate, boundary_f, iou, write_csv, EvalReport, EvalRow, SegMask};
use mcseg_core::model::{load_weights, save_weights, Segmenter, Variant};
use mcseg_core::motion::{flow_to_rgb, frame_diff, horn_schunck, write_flo};
use mcseg_core::raster::{load_labels, save_mask_png};
use serde::{Deserialize, Serialize};

use crate::config::{Predictor, RunConfig};
use crate::CliError;

/// Writes the configured synthetic suite in DAVIS layout under `root`.
pub fn cmd_synth(cfg: &RunConfig, root: &Path) -> Result<Vec<String>, CliError> {
    let mut names = Vec::new();
    for (i, spec) in suite_specs(&cfg.synth)?.iter().enumerate() {
        let mut clip = synth_generate(spec)?;
        clip.name = format!("clip{i:03}");
        clip.write_davis(root)?;
        names.push(clip.name);
    }
    Ok(names)
}

fn for_each_pair(
    cfg: &RunConfig,
    dataset: &Path,
    mut f: impl FnMut(&str, u32, &mcseg_core::raster::Image, &mcseg_core::raster::Image) -> Result<(), CliError>,
) -> Result<usize, CliError> {
    let index = select(cfg, scan_davis_layout(dataset)?)?;
    let mut pairs = 0;
    for entry in &index.sequences {
        let seq = entry.load_frames()?;
        for (i, w) in seq.frames().windows(2).enumerate() {
            f(&entry.name, seq.indices()[i], &w[0], &w[1])?;
            pairs += 1;
        }
    }
    Ok(pairs)
}

/// One difference image per consecutive frame pair, named after the first
/// frame: `<output>/diff/<seq>/NNNNN.png`.
pub fn cmd_diff(cfg: &RunConfig, dataset: &Path) -> Result<usize, CliError> {
    let out = cfg.output.join("diff");
    for_each_pair(cfg, dataset, |seq, index, a, b| {
        frame_diff(a, b)?.save_png(&out.join(seq).join(format!("{index:05}.png")))?;
        Ok(())
    })
}

/// Horn–Schunck flow per consecutive pair as `.flo` plus a color PNG.
pub fn cmd_flow(cfg: &RunConfig, dataset: &Path) -> Result<usize, CliError> {
    let out = cfg.output.join("flow");
    for_each_pair(cfg, dataset, |seq, index, a, b| {
        let flow = horn_schunck(a, b, &cfg.flow)?;
        let dir = out.join(seq);
        write_flo(&flow, &dir.join(format!("{index:05}.flo")))?;
        flow_to_rgb(&flow).save_png(&dir.join(format!("{index:05}.png")))?;
        Ok(())
    })
}

/// Restricts the index to the configured sequence list and resolution.
fn select(cfg: &RunConfig, index: DatasetIndex) -> Result<DatasetIndex, CliError> {
    let mut index = index.with_target(cfg.resolution.height, cfg.resolution.width)?;
    if cfg.stationary.is_empty() {
        return Ok(index);
    }
    index.tag_stationary(&cfg.stationary)?;
    Ok(index.subset(&cfg.stationary)?)
}

pub fn checkpoint_path(root: &Path, variant: Variant, seed: u64, fold: Option<usize>) -> PathBuf {
    let fold = fold.map_or_else(|| "all".to_string(), |f| f.to_string());
    root.join("checkpoints")
        .join(format!("{variant}-seed{seed}-fold{fold}.mcsegw"))
}

/// Seed and fold encoded in a checkpoint file name, if present.
pub fn checkpoint_labels(path: &Path) -> (u64, usize) {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    let field = |key: &str| {
        stem.split('-')
            .find_map(|part| part.strip_prefix(key))
            .and_then(|v| v.parse().ok())
    };
    (field("seed").unwrap_or(0), field("fold").unwrap_or(0) as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub variant: String,
    pub seed: u64,
    pub fold: String,
    pub epoch: usize,
    pub loss: f64,
}

pub(crate) fn write_rows<T: Serialize>(rows: &[T], path: &Path) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, std::io::Error::other(e)))?;
    for r in rows {
        w.serialize(r).map_err(|e| io_err(path, std::io::Error::other(e)))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Core(mcseg_core::Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Trains one network; the seed fixes both initialization and batch order.
fn train_network(
    cfg: &RunConfig,
    set: &SampleSet,
    seed: u64,
    fold: Option<usize>,
    log: &mut Vec<LogRow>,
) -> Result<Segmenter, CliError> {
    if set.is_empty() {
        return Err(mcseg_core::Error::Dataset("no annotated frames to train on".into()).into());
    }
    let mut net = Segmenter::new(cfg.net.clone(), seed)?;
    let mut adam = cfg.optimizer.state();
    let fold_label = fold.map_or_else(|| "all".to_string(), |f| f.to_string());
    for epoch in 0..cfg.epochs {
        let (mut total, mut count) = (0.0f64, 0usize);
        for (step, batch) in batches(set, cfg.batch_size, seed, epoch as u64)?.enumerate() {
            let loss = net
                .train_step(&batch.frames, batch.cues.as_ref(), &batch.masks, &mut adam)
                .map_err(|e| match e {
                    mcseg_core::Error::NonFinite(msg) => mcseg_core::Error::NonFinite(format!(
                        "seed {seed}, fold {fold_label}, epoch {epoch}, step {step}: {msg}"
                    )),
                    other => other,
                })?;
            total += loss as f64 * batch.len() as f64;
            count += batch.len();
        }
        let loss = total / count as f64;
        eprintln!("{} seed {seed} fold {fold_label} epoch {epoch}: loss {loss:.5}", cfg.net.variant);
        log.push(LogRow {
            variant: cfg.net.variant.to_string(),
            seed,
            fold: fold_label.clone(),
            epoch,
            loss,
        });
    }
    Ok(net)
}

fn sample_set(cfg: &RunConfig, index: &DatasetIndex) -> Result<SampleSet, CliError> {
    let clips = index.load_clips()?;
    Ok(SampleSet::from_clips(&clips, cfg.net.variant, Some(&cfg.flow))?)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoints: Vec<PathBuf>,
    pub log: Vec<LogRow>,
}

/// Trains one network per seed on the whole dataset.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome, CliError> {
    cfg.validate()?;
    let index = select(cfg, scan_davis_layout(&cfg.dataset)?)?;
    let set = sample_set(cfg, &index)?;
    let mut log = Vec::new();
    let mut checkpoints = Vec::new();
    for &seed in &cfg.seeds {
        let net = train_network(cfg, &set, seed, None, &mut log)?;
        let path = checkpoint_path(&cfg.output, cfg.net.variant, seed, None);
        save_weights(net.config(), net.weights(), &path)?;
        checkpoints.push(path);
    }
    write_rows(&log, &cfg.output.join("train_log.csv"))?;
    Ok(TrainOutcome { checkpoints, log })
}

fn load_checkpoint(cfg: &RunConfig, path: &Path) -> Result<Segmenter, CliError> {
    let (config, weights) = load_weights(path)?;
    if config.variant != cfg.net.variant {
        return Err(CliError::Usage(format!(
            "{} holds a {} network but variant {} was requested",
            path.display(),
            config.variant,
            cfg.net.variant
        )));
    }
    Ok(Segmenter::from_weights(config, weights)?)
}

/// Scores every annotated frame of `index` at its stored resolution.
/// Model predictions are made at the target resolution and resized back.
fn evaluate(
    cfg: &RunConfig,
    net: Option<&Segmenter>,
    index: &DatasetIndex,
    seed: u64,
    fold: usize,
) -> Result<Vec<EvalRow>, CliError> {
    let mut rows = Vec::new();
    for entry in &index.sequences {
        let clip = match net {
            Some(_) => Some(Clip::load(entry, index.target())?),
            None => None,
        };
        let cues = match (&clip, net) {
            (Some(c), Some(n)) => compute_cues(&c.frames, n.variant(), Some(&cfg.flow))?,
            _ => Vec::new(),
        };
        for (frame, path) in &entry.annotations {
            let (w, h, labels) = load_labels(path)?;
            let gt = SegMask::from_labels(w, h, &labels)?;
            let pred = match (cfg.predictor, net, &clip) {
                (Predictor::Oracle, ..) => gt.clone(),
                (Predictor::Empty, ..) => SegMask::empty(w, h),
                (Predictor::Model, Some(n), Some(c)) => {
                    let pos = c
                        .frames
                        .indices()
                        .binary_search(frame)
                        .expect("annotations match frames");
                    let image = c.frames.frames()[pos].to_tensor();
                    let cue = cues[pos].as_ref().map(|c| c.to_tensor());
                    let mask = n.segment(&image, cue.as_ref())?.remove(0);
                    mask.resize_nearest(w, h)
                }
                (Predictor::Model, ..) => {
                    return Err(CliError::Usage("model predictions need a checkpoint".into()))
                }
            };
            rows.push(EvalRow {
                condition: cfg.condition.clone(),
                variant: cfg.net.variant.to_string(),
                seed,
                fold,
                sequence: entry.name.clone(),
                frame: *frame,
                f: boundary_f(&pred, &gt, None)?,
                iou: iou(&pred, &gt)?,
            });
        }
    }
    Ok(rows)
}

/// Evaluates each checkpoint (or the oracle / empty predictor) on the test
/// dataset and writes `<output>/eval.csv`.
pub fn cmd_eval(cfg: &RunConfig, checkpoints: &[PathBuf]) -> Result<EvalReport, CliError> {
    let index = select(cfg, scan_davis_layout(cfg.test_dataset())?)?;
    let mut rows = Vec::new();
    if cfg.predictor == Predictor::Model {
        if checkpoints.is_empty() {
            return Err(CliError::Usage("eval needs --checkpoint for model predictions".into()));
        }
        for path in checkpoints {
            let net = load_checkpoint(cfg, path)?;
            let (seed, fold) = checkpoint_labels(path);
            rows.extend(evaluate(cfg, Some(&net), &index, seed, fold)?);
        }
    } else {
        rows = evaluate(cfg, None, &index, 0, 0)?;
    }
    if rows.is_empty() {
        return Err(mcseg_core::Error::Dataset(format!(
            "{}: no annotated frames to evaluate",
            index.root.display()
        ))
        .into());
    }
    let report = aggregate(rows)?;
    write_csv(&report, &cfg.output.join("eval.csv"))?;
    Ok(report)
}

/// Writes `<output>/masks/<seq>/NNNNN.png` for every frame, at the frame's
/// stored resolution.
pub fn cmd_infer(cfg: &RunConfig, checkpoint: &Path) -> Result<usize, CliError> {
    let net = load_checkpoint(cfg, checkpoint)?;
    let index = select(cfg, scan_davis_layout(&cfg.dataset)?)?;
    let mut written = 0;
    for entry in &index.sequences {
        let clip = Clip::load(entry, index.target())?;
        let cues = compute_cues(&clip.frames, net.variant(), Some(&cfg.flow))?;
        for (pos, (frame, path)) in entry.frames.iter().enumerate() {
            let (w, h) = mcseg_core::raster::image_dims(path)?;
            let image = clip.frames.frames()[pos].to_tensor();
            let cue = cues[pos].as_ref().map(|c| c.to_tensor());
            let mask = net.segment(&image, cue.as_ref())?.remove(0).resize_nearest(w, h);
            let out = cfg.output.join("masks").join(&entry.name).join(format!("{frame:05}.png"));
            save_mask_png(w, h, mask.data(), &out)?;
            written += 1;
        }
    }
    Ok(written)
}

#[derive(Debug, Clone)]
pub struct XvalOutcome {
    pub folds: Vec<Fold>,
    pub fold_reports: Vec<EvalReport>,
    pub pooled: EvalReport,
    pub checkpoints: Vec<PathBuf>,
}

/// Sequence-level k-fold cross-validation: per fold and seed, train on the
/// training split and score the held-out split.
pub fn cmd_xval(cfg: &RunConfig) -> Result<XvalOutcome, CliError> {
    cfg.validate()?;
    let index = select(cfg, scan_davis_layout(&cfg.dataset)?)?;
    let folds = make_folds(&index.names(), cfg.folds, cfg.fold_seed)?;
    if folds.iter().any(|f| f.degenerate) {
        eprintln!("warning: a single fold trains and tests on the same sequences");
    }
    let out = cfg.output.join("xval");
    let mut log = Vec::new();
    let mut checkpoints = Vec::new();
    let mut fold_reports = Vec::new();
    let mut pooled = Vec::new();
    for (k, fold) in folds.iter().enumerate() {
        let train = sample_set(cfg, &index.subset(&fold.train)?)?.with_fold(k);
        let test = index.subset(&fold.test)?;
        let mut rows = Vec::new();
        for &seed in &cfg.seeds {
            let net = train_network(cfg, &train, seed, Some(k), &mut log)?;
            let path = checkpoint_path(&out, cfg.net.variant, seed, Some(k));
            save_weights(net.config(), net.weights(), &path)?;
            checkpoints.push(path);
            rows.extend(evaluate(cfg, Some(&net), &test, seed, k)?);
        }
        let report = aggregate(rows.clone())?;
        write_csv(&report, &out.join(format!("fold{k}.csv")))?;
        fold_reports.push(report);
        pooled.extend(rows);
    }
    let pooled = aggregate(pooled)?;
    write_csv(&pooled, &out.join("pooled.csv"))?;
    write_rows(&log, &out.join("train_log.csv"))?;
    Ok(XvalOutcome {
        folds,
        fold_reports,
        pooled,
        checkpoints,
    })
}

/// Frames for the benchmark: the configured directory or a synthetic clip.
pub(crate) fn bench_frames(cfg: &RunConfig) -> Result<mcseg_core::motion::FrameSequence, CliError> {
    match &cfg.bench.frames {
        Some(dir) => Ok(load_frame_dir(dir)?),
        None => {
            let mut spec = suite_specs(&mcseg_core::data::SuiteSpec {
                clips: 1,
                frames: 3,
                ..cfg.synth.clone()
            })?;
            Ok(synth_generate(&spec.remove(0))?.frames)
        }
    }
}
