use std::hint::black_box;
use std::time::Instant;

use mcseg_core::motion::{frame_diff, horn_schunck};
use serde::{Deserialize, Serialize};

use crate::commands::bench_frames;
use crate::config::RunConfig;
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub height: usize,
    pub width: usize,
    pub frames_timed: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    /// Horn–Schunck mean over frame-difference mean at this resolution.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, method: &str, height: usize, width: usize) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.height == height && r.width == width)
    }
}

/// Nearest-rank percentile of unsorted samples.
pub fn nearest_rank(samples: &[f64], p: f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * s.len() as f64).ceil().max(1.0) as usize;
    s[rank.min(s.len()) - 1]
}

fn summarize(method: &str, height: usize, width: usize, ms: &[f64]) -> BenchRow {
    BenchRow {
        method: method.into(),
        height,
        width,
        frames_timed: ms.len(),
        mean_ms: ms.iter().sum::<f64>() / ms.len() as f64,
        median_ms: nearest_rank(ms, 50.0),
        p95_ms: nearest_rank(ms, 95.0),
        ratio: 0.0,
    }
}

/// Times frame differencing against Horn–Schunck on identical frame pairs.
/// One untimed warm-up pass precedes `repetitions` timed passes over all
/// consecutive pairs; the work runs on `bench.threads` workers.
pub fn cmd_bench(cfg: &RunConfig) -> Result<BenchReport, CliError> {
    let bench = &cfg.bench;
    let bad = |field: &str, reason: String| {
        CliError::Core(mcseg_core::Error::InvalidConfig {
            field: field.into(),
            reason,
        })
    };
    if bench.repetitions < 3 {
        return Err(bad("bench.repetitions", format!("{} is below the minimum of 3", bench.repetitions)));
    }
    if bench.threads == 0 {
        return Err(bad("bench.threads", "must be at least 1".into()));
    }
    cfg.flow.validate()?;
    let source = bench_frames(cfg)?;
    if source.len() < 2 {
        return Err(mcseg_core::Error::Dataset(format!(
            "benchmark needs at least 2 frames, got {}",
            source.len()
        ))
        .into());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(bench.threads)
        .build()
        .map_err(|e| bad("bench.threads", e.to_string()))?;

    let mut rows = Vec::new();
    for res in &bench.resolutions {
        let frames: Vec<_> = source
            .frames()
            .iter()
            .map(|f| f.resize_bilinear(res.width, res.height))
            .collect();
        let (diff_ms, hs_ms) = pool.install(|| -> Result<_, CliError> {
            let (a, b) = (&frames[0], &frames[1]);
            black_box(frame_diff(a, b)?);
            black_box(horn_schunck(a, b, &cfg.flow)?);
            let (mut d, mut h) = (Vec::new(), Vec::new());
            for _ in 0..bench.repetitions {
                for pair in frames.windows(2) {
                    let t = Instant::now();
                    black_box(frame_diff(&pair[0], &pair[1])?);
                    d.push(t.elapsed().as_secs_f64() * 1e3);
                    let t = Instant::now();
                    black_box(horn_schunck(&pair[0], &pair[1], &cfg.flow)?);
                    h.push(t.elapsed().as_secs_f64() * 1e3);
                }
            }
            Ok((d, h))
        })?;
        let mut diff = summarize("frame_diff", res.height, res.width, &diff_ms);
        let mut hs = summarize("horn_schunck", res.height, res.width, &hs_ms);
        let ratio = hs.mean_ms / diff.mean_ms;
        diff.ratio = ratio;
        hs.ratio = ratio;
        rows.push(diff);
        rows.push(hs);
    }
    let path = cfg.output.join("bench.csv");
    crate::commands::write_rows(&rows, &path)?;
    Ok(BenchReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_of_three() {
        let s = [3.0, 1.0, 2.0];
        assert_eq!(nearest_rank(&s, 50.0), 2.0);
        assert_eq!(nearest_rank(&s, 95.0), 3.0);
        assert_eq!(nearest_rank(&s, 0.0), 1.0);
    }
}
