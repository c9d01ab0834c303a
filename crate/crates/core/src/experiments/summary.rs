use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{Schedule, SweepResult};
use crate::error::{Error, Result};
use crate::train::sig6;

/// Best-accuracy statistics over the seeds of one (N, L, schedule) group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats {
    pub input_len: usize,
    pub latent_len: usize,
    pub schedule: Schedule,
    pub runs: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

/// Mean validation accuracy at one epoch across the runs that reached it.
#[derive(Debug, Clone, PartialEq)]
pub struct BandPoint {
    pub input_len: usize,
    pub latent_len: usize,
    pub schedule: Schedule,
    pub epoch: usize,
    pub runs: usize,
    pub mean: f64,
    /// Standard error of the mean.
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    /// Ordered like the sweep rows: schedule, then `L` descending.
    pub groups: Vec<GroupStats>,
    pub bands: Vec<BandPoint>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

type GroupKey = (Schedule, std::cmp::Reverse<usize>, usize);

pub fn summarize(result: &SweepResult) -> Result<Summary> {
    if result.rows.is_empty() {
        return Err(Error::usage("nothing to summarise: the sweep has no rows"));
    }
    let mut groups: BTreeMap<GroupKey, Vec<usize>> = BTreeMap::new();
    for (i, r) in result.rows.iter().enumerate() {
        groups
            .entry((r.schedule, std::cmp::Reverse(r.latent_len), r.input_len))
            .or_default()
            .push(i);
    }
    let mut summary = Summary {
        groups: Vec::new(),
        bands: Vec::new(),
    };
    for ((schedule, std::cmp::Reverse(latent_len), input_len), idx) in groups {
        let best: Vec<f64> = idx.iter().map(|&i| result.rows[i].best_accuracy).collect();
        let (mean, std) = mean_std(&best);
        summary.groups.push(GroupStats {
            input_len,
            latent_len,
            schedule,
            runs: best.len(),
            mean,
            std,
            min: best.iter().copied().fold(f64::INFINITY, f64::min),
            max: best.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        });
        let epochs = idx.iter().map(|&i| result.rows[i].trail.len()).max().unwrap_or(0);
        for epoch in 0..epochs {
            let accs: Vec<f64> = idx
                .iter()
                .filter_map(|&i| result.rows[i].trail.get(epoch))
                .map(|r| r.val_accuracy)
                .collect();
            let (mean, std) = mean_std(&accs);
            summary.bands.push(BandPoint {
                input_len,
                latent_len,
                schedule,
                epoch,
                runs: accs.len(),
                mean,
                se: std / (accs.len() as f64).sqrt(),
            });
        }
    }
    Ok(summary)
}

pub fn write_summary_csv(path: &Path, summary: &Summary) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(super::csv_err)?;
    w.write_record(["input_len", "latent_len", "ratio", "schedule", "runs", "mean", "std", "min", "max"])
        .map_err(super::csv_err)?;
    for g in &summary.groups {
        w.write_record([
            g.input_len.to_string(),
            g.latent_len.to_string(),
            sig6(g.latent_len as f64 / g.input_len as f64),
            g.schedule.to_string(),
            g.runs.to_string(),
            sig6(g.mean),
            sig6(g.std),
            sig6(g.min),
            sig6(g.max),
        ])
        .map_err(super::csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Plain-text table with one line per (N, L) and one column block per
/// schedule.
pub fn side_by_side(summary: &Summary) -> String {
    let mut schedules: Vec<Schedule> = summary.groups.iter().map(|g| g.schedule).collect();
    schedules.sort();
    schedules.dedup();
    let mut keys: Vec<(usize, usize)> = summary.groups.iter().map(|g| (g.input_len, g.latent_len)).collect();
    keys.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
    keys.dedup();

    let mut out = String::from("    N     L");
    for s in &schedules {
        let _ = write!(out, " | {:>8} mean      std      min      max", s.to_string());
    }
    out.push('\n');
    for (n, l) in keys {
        let _ = write!(out, "{n:>5} {l:>5}");
        for s in &schedules {
            match summary
                .groups
                .iter()
                .find(|g| g.input_len == n && g.latent_len == l && g.schedule == *s)
            {
                Some(g) => {
                    let _ = write!(out, " | {:>13.4} {:>8.4} {:>8.4} {:>8.4}", g.mean, g.std, g.min, g.max);
                }
                None => {
                    let _ = write!(out, " | {:>13} {:>8} {:>8} {:>8}", "-", "-", "-", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}
