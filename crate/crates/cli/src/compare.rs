//! Paired comparison of validation curves from run directories.

use std::path::{Path, PathBuf};

use serde::Serialize;

use seqcritic::table::{fmt_f64, CsvTable};
use seqcritic::{Error, Result};

pub const RUN_CSV: &str = "run.csv";

pub const COMPARE_COLUMNS: [&str; 7] = [
    "pair",
    "baseline",
    "candidate",
    "step",
    "baseline_cider",
    "candidate_cider",
    "delta",
];

#[derive(Debug, Clone, PartialEq)]
struct Curve {
    /// (step, val_cider) for the RL phase, or for the whole run when it has no RL rows.
    points: Vec<(usize, f64)>,
}

fn load_curve(dir: &Path) -> Result<Curve> {
    if !dir.is_dir() {
        return Err(Error::Io {
            path: dir.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "run directory not found"),
        });
    }
    let path = dir.join(RUN_CSV);
    let t = CsvTable::read(&path)?;
    let col = |name: &str| {
        t.column(name).ok_or_else(|| Error::Schema {
            path: path.clone(),
            field: name.to_string(),
        })
    };
    let (step, phase, cider) = (col("step")?, col("phase")?, col("val_cider")?);
    let parse_row = |r: &Vec<String>| -> Result<(usize, f64)> {
        let bad = || Error::Schema {
            path: path.clone(),
            field: "step/val_cider".into(),
        };
        Ok((
            r[step].parse().map_err(|_| bad())?,
            r[cider].parse().map_err(|_| bad())?,
        ))
    };
    let rl: Vec<&Vec<String>> = t.rows.iter().filter(|r| r[phase] == "rl").collect();
    let rows: Vec<&Vec<String>> = if rl.is_empty() {
        t.rows.iter().collect()
    } else {
        rl
    };
    let points = rows
        .into_iter()
        .map(parse_row)
        .collect::<Result<Vec<_>>>()?;
    if points.is_empty() {
        return Err(Error::Schema {
            path,
            field: "val_cider".into(),
        });
    }
    Ok(Curve { points })
}

/// Value at the last evaluation at or before `step`.
fn at(curve: &Curve, step: usize) -> f64 {
    curve
        .points
        .iter()
        .take_while(|p| p.0 <= step)
        .last()
        .map_or(f64::NAN, |p| p.1)
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct PairSummary {
    pub baseline: PathBuf,
    pub candidate: PathBuf,
    pub baseline_final: f64,
    pub candidate_final: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CompareSummary {
    pub pairs: Vec<PairSummary>,
    pub mean_delta: f64,
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
}

/// Pairs `baselines[i]` with `candidates[i]` (one pair per seed). Curves evaluated at different
/// steps are resampled onto the coarser grid, with a warning.
pub fn compare(
    baselines: &[PathBuf],
    candidates: &[PathBuf],
    config_hash: &str,
) -> Result<(CsvTable, CompareSummary, Vec<String>)> {
    if baselines.is_empty() || baselines.len() != candidates.len() {
        return Err(Error::Usage(format!(
            "need the same positive number of baseline and candidate runs, got {} and {}",
            baselines.len(),
            candidates.len()
        )));
    }
    let mut table = CsvTable::new(config_hash, &COMPARE_COLUMNS);
    let mut warnings = Vec::new();
    let mut pairs = Vec::new();
    for (i, (b, c)) in baselines.iter().zip(candidates).enumerate() {
        let (cb, cc) = (load_curve(b)?, load_curve(c)?);
        let steps_b: Vec<usize> = cb.points.iter().map(|p| p.0).collect();
        let steps_c: Vec<usize> = cc.points.iter().map(|p| p.0).collect();
        let grid = if steps_b == steps_c {
            steps_b
        } else {
            warnings.push(format!(
                "pair {i}: evaluation steps differ ({} vs {} points); resampling to the coarser grid",
                steps_b.len(),
                steps_c.len()
            ));
            if steps_b.len() <= steps_c.len() {
                steps_b
            } else {
                steps_c
            }
        };
        for &s in &grid {
            let (vb, vc) = (at(&cb, s), at(&cc, s));
            table.push(vec![
                i.to_string(),
                b.display().to_string(),
                c.display().to_string(),
                s.to_string(),
                fmt_f64(vb),
                fmt_f64(vc),
                fmt_f64(vc - vb),
            ]);
        }
        let (fb, fc) = (cb.points.last().unwrap().1, cc.points.last().unwrap().1);
        pairs.push(PairSummary {
            baseline: b.clone(),
            candidate: c.clone(),
            baseline_final: fb,
            candidate_final: fc,
            delta: fc - fb,
        });
    }
    let mean_delta = pairs.iter().map(|p| p.delta).sum::<f64>() / pairs.len() as f64;
    let summary = CompareSummary {
        mean_delta,
        wins: pairs.iter().filter(|p| p.delta > 0.0).count(),
        losses: pairs.iter().filter(|p| p.delta < 0.0).count(),
        ties: pairs.iter().filter(|p| p.delta == 0.0).count(),
        pairs,
    };
    Ok((table, summary, warnings))
}
