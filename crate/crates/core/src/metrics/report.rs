use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One evaluated frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub condition: String,
    pub variant: String,
    pub seed: u64,
    pub fold: usize,
    pub sequence: String,
    pub frame: u32,
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "IoU")]
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceMean {
    pub seed: u64,
    pub fold: usize,
    pub sequence: String,
    pub frames: usize,
    pub f: f64,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedMean {
    pub seed: u64,
    pub sequences: usize,
    pub f: f64,
    pub iou: f64,
}

/// Means for one (condition, variant) group. The headline `f` / `iou` are
/// frame means within each sequence, averaged over sequences, then over
/// seeds; `frame_f` / `frame_iou` pool all frames flat.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSummary {
    pub condition: String,
    pub variant: String,
    pub sequences: Vec<SequenceMean>,
    pub seeds: Vec<SeedMean>,
    pub f: f64,
    pub iou: f64,
    pub frame_f: f64,
    pub frame_iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub summaries: Vec<ConditionSummary>,
}

impl EvalReport {
    pub fn summary(&self, condition: &str, variant: &str) -> Option<&ConditionSummary> {
        self.summaries
            .iter()
            .find(|s| s.condition == condition && s.variant == variant)
    }
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

/// Groups rows by (condition, variant) and averages hierarchically.
pub fn aggregate(rows: Vec<EvalRow>) -> Result<EvalReport> {
    if rows.is_empty() {
        return Err(Error::input("cannot aggregate an empty set of rows"));
    }
    if let Some(r) = rows
        .iter()
        .find(|r| !(0.0..=1.0).contains(&r.f) || !(0.0..=1.0).contains(&r.iou))
    {
        return Err(Error::input(format!(
            "score outside [0, 1] for {}/{} frame {}",
            r.sequence, r.condition, r.frame
        )));
    }

    type SeqKey = (u64, usize, String);
    let mut groups: BTreeMap<(String, String), BTreeMap<SeqKey, Vec<&EvalRow>>> = BTreeMap::new();
    for r in &rows {
        groups
            .entry((r.condition.clone(), r.variant.clone()))
            .or_default()
            .entry((r.seed, r.fold, r.sequence.clone()))
            .or_default()
            .push(r);
    }

    let summaries = groups
        .into_iter()
        .map(|((condition, variant), seqs)| {
            let sequences: Vec<SequenceMean> = seqs
                .iter()
                .map(|((seed, fold, name), frames)| SequenceMean {
                    seed: *seed,
                    fold: *fold,
                    sequence: name.clone(),
                    frames: frames.len(),
                    f: mean(frames.iter().map(|r| r.f)),
                    iou: mean(frames.iter().map(|r| r.iou)),
                })
                .collect();
            let mut by_seed: BTreeMap<u64, Vec<&SequenceMean>> = BTreeMap::new();
            for s in &sequences {
                by_seed.entry(s.seed).or_default().push(s);
            }
            let seeds: Vec<SeedMean> = by_seed
                .into_iter()
                .map(|(seed, seqs)| SeedMean {
                    seed,
                    sequences: seqs.len(),
                    f: mean(seqs.iter().map(|s| s.f)),
                    iou: mean(seqs.iter().map(|s| s.iou)),
                })
                .collect();
            let all = seqs.values().flatten();
            ConditionSummary {
                f: mean(seeds.iter().map(|s| s.f)),
                iou: mean(seeds.iter().map(|s| s.iou)),
                frame_f: mean(all.clone().map(|r| r.f)),
                frame_iou: mean(all.map(|r| r.iou)),
                condition,
                variant,
                sequences,
                seeds,
            }
        })
        .collect();

    Ok(EvalReport { rows, summaries })
}

const HEADER: [&str; 8] = ["condition", "variant", "seed", "fold", "sequence", "frame", "F", "IoU"];

/// Label used in the `frame` column of aggregate lines.
pub const MEAN_MARKER: &str = "mean";

/// CSV with one line per frame, then per condition: one line per sequence
/// mean, one per seed mean (`sequence` = `all`), the overall mean (`seed`,
/// `fold`, `sequence` = `all`), and the flat frame mean (`sequence` =
/// `all-frames`). Aggregate lines carry `mean` in the `frame` column.
pub fn write_csv(report: &EvalReport, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_writer(file);
    w.write_record(HEADER).map_err(csv_err)?;
    for r in &report.rows {
        w.write_record([
            r.condition.as_str(),
            &r.variant,
            &r.seed.to_string(),
            &r.fold.to_string(),
            &r.sequence,
            &r.frame.to_string(),
            &r.f.to_string(),
            &r.iou.to_string(),
        ])
        .map_err(csv_err)?;
    }
    for s in &report.summaries {
        let mut line = |seed: &str, fold: &str, seq: &str, f: f64, iou: f64| {
            w.write_record([
                s.condition.as_str(),
                &s.variant,
                seed,
                fold,
                seq,
                MEAN_MARKER,
                &f.to_string(),
                &iou.to_string(),
            ])
        };
        for q in &s.sequences {
            line(&q.seed.to_string(), &q.fold.to_string(), &q.sequence, q.f, q.iou).map_err(csv_err)?;
        }
        for q in &s.seeds {
            line(&q.seed.to_string(), "all", "all", q.f, q.iou).map_err(csv_err)?;
        }
        line("all", "all", "all", s.f, s.iou).map_err(csv_err)?;
        line("all", "all", "all-frames", s.frame_f, s.frame_iou).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads the per-frame rows of a report CSV, skipping aggregate lines.
pub fn read_csv(path: &Path) -> Result<Vec<EvalRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        if rec.get(5) == Some(MEAN_MARKER) {
            continue;
        }
        let row: EvalRow = rec
            .deserialize(Some(&csv::StringRecord::from(HEADER.to_vec())))
            .map_err(|e| {
                Error::Dataset(format!("{}: line {}: {e}", path.display(), line + 2))
            })?;
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(seed: u64, seq: &str, frame: u32, f: f64, iou: f64) -> EvalRow {
        EvalRow {
            condition: "synth".into(),
            variant: "dual_diff".into(),
            seed,
            fold: 0,
            sequence: seq.into(),
            frame,
            f,
            iou,
        }
    }

    #[test]
    fn single_row_is_its_own_mean() {
        let rep = aggregate(vec![row(0, "a", 0, 0.3, 0.7)]).unwrap();
        let s = &rep.summaries[0];
        assert_eq!((s.f, s.iou, s.frame_f, s.frame_iou), (0.3, 0.7, 0.3, 0.7));
    }

    #[test]
    fn sequence_means_are_unweighted() {
        // sequence a: 3 frames at 0.4, sequence b: 1 frame at 0.6
        let rows = vec![
            row(0, "a", 0, 0.4, 0.4),
            row(0, "a", 1, 0.4, 0.4),
            row(0, "a", 2, 0.4, 0.4),
            row(0, "b", 0, 0.6, 0.6),
        ];
        let rep = aggregate(rows).unwrap();
        let s = &rep.summaries[0];
        assert!((s.iou - 0.5).abs() < 1e-15);
        assert!((s.frame_iou - 0.45).abs() < 1e-15);
    }

    #[test]
    fn empty_rows_rejected() {
        assert!(aggregate(Vec::new()).is_err());
    }

    #[test]
    fn csv_round_trip_keeps_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let rows = vec![
            row(1, "a", 0, 0.1, 1.0 / 3.0),
            row(2, "b", 5, 0.9, 0.123456789),
        ];
        let rep = aggregate(rows.clone()).unwrap();
        write_csv(&rep, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("condition,variant,seed,fold,sequence,frame,F,IoU\n"));
        assert!(text.contains("synth,dual_diff,all,all,all,mean,"));
        assert_eq!(read_csv(&path).unwrap(), rows);
    }
}
