//! DAVIS-layout ingestion, synthetic clips, cross-validation folds and
//! seeded mini-batch streams.

mod batch;
mod synth;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::SegMask;
use crate::motion::FrameSequence;
use crate::raster::{self, Image};

pub use batch::{batches, compute_cues, Batch, Sample, SampleMeta, SampleSet};
pub use synth::{suite_specs, synth_generate, ObjectSpec, Shape, SuiteSpec, SynthSpec, Texture};

/// Default training resolution (height, width).
pub const DEFAULT_TARGET: (usize, usize) = (384, 384);

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraTag {
    Stationary,
    Moving,
    #[default]
    Unknown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceEntry {
    pub name: String,
    /// (frame number, path), sorted by frame number.
    pub frames: Vec<(u32, PathBuf)>,
    pub annotations: Vec<(u32, PathBuf)>,
    pub camera: CameraTag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub sequences: Vec<SequenceEntry>,
    target: (usize, usize),
}

impl DatasetIndex {
    /// Target (height, width) that frames are resized to.
    pub fn target(&self) -> (usize, usize) {
        self.target
    }

    pub fn with_target(mut self, height: usize, width: usize) -> Result<Self> {
        check_target(height, width)?;
        self.target = (height, width);
        Ok(self)
    }

    pub fn names(&self) -> Vec<String> {
        self.sequences.iter().map(|s| s.name.clone()).collect()
    }

    pub fn sequence(&self, name: &str) -> Option<&SequenceEntry> {
        self.sequences.iter().find(|s| s.name == name)
    }

    /// Tags the listed sequences stationary and every other one moving.
    pub fn tag_stationary(&mut self, names: &[String]) -> Result<()> {
        if let Some(missing) = names.iter().find(|n| self.sequence(n).is_none()) {
            return Err(Error::Dataset(format!(
                "stationary list names `{missing}`, which is not in {}",
                self.root.display()
            )));
        }
        for s in &mut self.sequences {
            s.camera = if names.contains(&s.name) {
                CameraTag::Stationary
            } else {
                CameraTag::Moving
            };
        }
        Ok(())
    }

    /// Keeps only the named sequences, in index order.
    pub fn subset(&self, names: &[String]) -> Result<DatasetIndex> {
        if let Some(missing) = names.iter().find(|n| self.sequence(n).is_none()) {
            return Err(Error::Dataset(format!("no sequence `{missing}` in {}", self.root.display())));
        }
        Ok(DatasetIndex {
            root: self.root.clone(),
            sequences: self
                .sequences
                .iter()
                .filter(|s| names.contains(&s.name))
                .cloned()
                .collect(),
            target: self.target,
        })
    }

    /// Loads every sequence at the target resolution.
    pub fn load_clips(&self) -> Result<Vec<Clip>> {
        self.sequences
            .iter()
            .map(|s| Clip::load(s, self.target))
            .collect()
    }
}

fn check_target(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 || height % 32 != 0 || width % 32 != 0 {
        return Err(Error::config(
            "resolution",
            format!("{height}×{width} is not a positive multiple of 32 in both dimensions"),
        ));
    }
    Ok(())
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn numbered_files(dir: &Path, extensions: &[&str]) -> Result<Vec<(u32, PathBuf)>> {
    let mut files = Vec::new();
    for path in read_dir_sorted(dir)? {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if !path.is_file() || !ext.is_some_and(|e| extensions.contains(&e.as_str())) {
            continue;
        }
        let index = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse::<u32>().ok())
            .ok_or_else(|| {
                Error::Dataset(format!("{}: file name is not a frame number", path.display()))
            })?;
        files.push((index, path));
    }
    files.sort_by_key(|(i, _)| *i);
    if let Some(w) = files.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Dataset(format!(
            "{} and {} share frame number {}",
            w[0].1.display(),
            w[1].1.display(),
            w[0].0
        )));
    }
    Ok(files)
}

/// Indexes `root/images/<seq>/NNNNN.{png,jpg}` with annotations in
/// `root/annotations/<seq>/NNNNN.png`. Frames without an annotation are kept
/// (they still supply motion partners).
pub fn scan_davis_layout(root: &Path) -> Result<DatasetIndex> {
    let images = root.join("images");
    let annotations = root.join("annotations");
    if !images.is_dir() {
        return Err(Error::Dataset(format!("{}: no images directory", images.display())));
    }
    let mut sequences = Vec::new();
    for dir in read_dir_sorted(&images)? {
        if !dir.is_dir() {
            continue;
        }
        let name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Dataset(format!("{}: non-UTF-8 name", dir.display())))?
            .to_string();
        let frames = numbered_files(&dir, &IMAGE_EXTENSIONS)?;
        if frames.is_empty() {
            return Err(Error::Dataset(format!("{}: sequence has no frames", dir.display())));
        }
        let ann_dir = annotations.join(&name);
        let annotations = if ann_dir.is_dir() {
            numbered_files(&ann_dir, &["png"])?
        } else {
            Vec::new()
        };
        let known: BTreeMap<u32, &PathBuf> = frames.iter().map(|(i, p)| (*i, p)).collect();
        if let Some((_, orphan)) = annotations.iter().find(|(i, _)| !known.contains_key(i)) {
            return Err(Error::Dataset(format!(
                "{}: annotation has no matching frame",
                orphan.display()
            )));
        }
        sequences.push(SequenceEntry {
            name,
            frames,
            annotations,
            camera: CameraTag::Unknown,
        });
    }
    if annotations.is_dir() {
        for dir in read_dir_sorted(&annotations)? {
            let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            if dir.is_dir() && !sequences.iter().any(|s| s.name == name) {
                return Err(Error::Dataset(format!(
                    "{}: annotations for a sequence without images",
                    dir.display()
                )));
            }
        }
    }
    if sequences.is_empty() {
        return Err(Error::Dataset(format!("{}: no sequences found", images.display())));
    }
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        sequences,
        target: DEFAULT_TARGET,
    })
}

impl SequenceEntry {
    /// Frames at their stored resolution.
    pub fn load_frames(&self) -> Result<FrameSequence> {
        let frames = self
            .frames
            .iter()
            .map(|(_, p)| Image::load(p))
            .collect::<Result<Vec<_>>>()?;
        FrameSequence::new(frames, self.frames.iter().map(|(i, _)| *i).collect())
    }
}

/// Reads a directory of numbered frames (`NNNNN.png` / `.jpg`).
pub fn load_frame_dir(dir: &Path) -> Result<FrameSequence> {
    let files = numbered_files(dir, &IMAGE_EXTENSIONS)?;
    if files.is_empty() {
        return Err(Error::Dataset(format!("{}: no numbered frames", dir.display())));
    }
    SequenceEntry {
        name: String::new(),
        frames: files,
        annotations: Vec::new(),
        camera: CameraTag::Unknown,
    }
    .load_frames()
}

/// A clip held in memory: frames plus the ground truth of annotated frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub name: String,
    pub frames: FrameSequence,
    /// One entry per frame; `None` where the frame is unannotated.
    pub masks: Vec<Option<SegMask>>,
}

impl Clip {
    pub fn new(name: impl Into<String>, frames: FrameSequence, masks: Vec<Option<SegMask>>) -> Result<Self> {
        let name = name.into();
        if masks.len() != frames.len() {
            return Err(Error::input(format!(
                "clip {name}: {} masks for {} frames",
                masks.len(),
                frames.len()
            )));
        }
        if let Some(first) = frames.frames().first() {
            let dims = (first.width(), first.height());
            if masks.iter().flatten().any(|m| (m.width(), m.height()) != dims) {
                return Err(Error::input(format!("clip {name}: mask size differs from frames")));
            }
        }
        Ok(Clip { name, frames, masks })
    }

    /// Loads and resizes a sequence to `target` (height, width): bilinear for
    /// frames, nearest for masks. Nonzero labels become foreground.
    pub fn load(entry: &SequenceEntry, target: (usize, usize)) -> Result<Clip> {
        check_target(target.0, target.1)?;
        let (h, w) = target;
        let mut frames = Vec::with_capacity(entry.frames.len());
        for (_, path) in &entry.frames {
            let img = Image::load(path)?;
            frames.push(if img.width() == w && img.height() == h {
                img
            } else {
                img.resize_bilinear(w, h)
            });
        }
        let indices: Vec<u32> = entry.frames.iter().map(|(i, _)| *i).collect();
        let mut masks = vec![None; indices.len()];
        for (i, path) in &entry.annotations {
            let (mw, mh, labels) = raster::load_labels(path)?;
            let mask = SegMask::from_labels(mw, mh, &labels)?;
            let pos = indices.binary_search(i).map_err(|_| {
                Error::Dataset(format!("{}: annotation has no matching frame", path.display()))
            })?;
            masks[pos] = Some(mask.resize_nearest(w, h));
        }
        Clip::new(entry.name.clone(), FrameSequence::new(frames, indices)?, masks)
    }

    /// Writes the clip as `root/images/<name>/NNNNN.png` plus annotations.
    pub fn write_davis(&self, root: &Path) -> Result<()> {
        for (pos, (frame, &index)) in self
            .frames
            .frames()
            .iter()
            .zip(self.frames.indices())
            .enumerate()
        {
            let file = format!("{index:05}.png");
            frame.save_png(&root.join("images").join(&self.name).join(&file))?;
            if let Some(m) = &self.masks[pos] {
                raster::save_mask_png(
                    m.width(),
                    m.height(),
                    m.data(),
                    &root.join("annotations").join(&self.name).join(&file),
                )?;
            }
        }
        Ok(())
    }
}

/// One cross-validation split at sequence level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<String>,
    pub test: Vec<String>,
    /// Set when k = 1: train and test are the same sequences.
    pub degenerate: bool,
}

/// Shuffles `names` with `seed` and deals them round-robin into `k` test
/// folds; each fold trains on the remaining sequences.
pub fn make_folds(names: &[String], k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k == 0 {
        return Err(Error::config("folds", "must be at least 1"));
    }
    if k > names.len() {
        return Err(Error::config(
            "folds",
            format!("{k} folds need at least {k} sequences, have {}", names.len()),
        ));
    }
    if k == 1 {
        return Ok(vec![Fold {
            train: names.to_vec(),
            test: names.to_vec(),
            degenerate: true,
        }]);
    }
    let mut order = names.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut tests = vec![Vec::new(); k];
    for (i, name) in order.into_iter().enumerate() {
        tests[i % k].push(name);
    }
    Ok(tests
        .into_iter()
        .map(|mut test| {
            test.sort();
            let train = names.iter().filter(|n| !test.contains(n)).cloned().collect();
            Fold {
                train,
                test,
                degenerate: false,
            }
        })
        .collect())
}
