//! Per-iteration quantiles of best-so-far curves across seeds.
//!
//! Quantiles use linear interpolation between order statistics: with `n`
//! sorted values the `p`-quantile sits at position `(n - 1) p`. This is the
//! default convention of numpy and R (type 7). A seed that stopped early
//! keeps its final best value for the remaining iterations.

use std::collections::HashMap;
use std::path::Path;

use les_core::bench::RunRecord;

use crate::error::{CliError, Result};

pub const SUMMARY_HEADER: [&str; 7] = [
    "source",
    "iteration",
    "seeds",
    "best_p25",
    "best_median",
    "best_p75",
    "median_stop",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub source: String,
    pub iteration: usize,
    pub seeds: usize,
    pub best_p25: f64,
    pub best_median: f64,
    pub best_p75: f64,
    /// Smallest iteration by which at least half of the seeds had stopped.
    pub median_stop: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

/// The `p`-quantile of ascending `sorted` values, `0 <= p <= 1`.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty() && (0.0..=1.0).contains(&p));
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// One seed's best-so-far values, index `i` holding iteration `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedCurve {
    pub seed: u64,
    pub best: Vec<f64>,
    pub stopped_at: Option<usize>,
}

/// Splits records by seed, in order of first appearance.
pub fn seed_curves(source: &str, records: &[RunRecord]) -> Result<Vec<SeedCurve>> {
    let mut order = Vec::new();
    let mut by_seed: HashMap<u64, Vec<&RunRecord>> = HashMap::new();
    for r in records {
        by_seed
            .entry(r.seed)
            .or_insert_with(|| {
                order.push(r.seed);
                Vec::new()
            })
            .push(r);
    }
    order
        .into_iter()
        .map(|seed| {
            let mut rs = by_seed.remove(&seed).unwrap_or_default();
            rs.sort_by_key(|r| r.iteration);
            if rs.iter().enumerate().any(|(i, r)| r.iteration != i + 1) {
                return Err(CliError::Input(format!(
                    "{source}: seed {seed} does not cover iterations 1..={} exactly once",
                    rs.len()
                )));
            }
            Ok(SeedCurve {
                seed,
                best: rs.iter().map(|r| r.best_y).collect(),
                stopped_at: rs.iter().find(|r| r.stopped).map(|r| r.iteration),
            })
        })
        .collect()
}

/// Smallest iteration by which `2 * stopped >= seeds`.
pub fn median_stop(curves: &[SeedCurve]) -> Option<usize> {
    let mut stops: Vec<usize> = curves.iter().filter_map(|c| c.stopped_at).collect();
    stops.sort_unstable();
    let need = curves.len().div_ceil(2);
    (need > 0 && stops.len() >= need).then(|| stops[need - 1])
}

fn summarize_curves(source: &str, curves: &[SeedCurve]) -> Vec<SummaryRow> {
    let horizon = curves.iter().map(|c| c.best.len()).max().unwrap_or(0);
    let stop = median_stop(curves);
    (1..=horizon)
        .map(|t| {
            let mut v: Vec<f64> = curves
                .iter()
                .filter(|c| !c.best.is_empty())
                .map(|c| c.best[t.min(c.best.len()) - 1])
                .collect();
            v.sort_by(f64::total_cmp);
            SummaryRow {
                source: source.to_string(),
                iteration: t,
                seeds: v.len(),
                best_p25: quantile(&v, 0.25),
                best_median: quantile(&v, 0.5),
                best_p75: quantile(&v, 0.75),
                median_stop: stop,
            }
        })
        .collect()
}

/// Summarizes completed seeds of each named source.
pub fn summarize(sources: &[(String, Vec<RunRecord>)]) -> Result<SummaryTable> {
    if sources.is_empty() {
        return Err(CliError::Input("nothing to summarize".into()));
    }
    let mut rows = Vec::new();
    for (name, records) in sources {
        if records.is_empty() {
            return Err(CliError::Input(format!("{name}: no completed seeds to summarize")));
        }
        rows.extend(summarize_curves(name, &seed_curves(name, records)?));
    }
    Ok(SummaryTable { rows })
}

pub fn write_summary(path: &Path, table: &SummaryTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::csv(path, e))?;
    w.write_record(SUMMARY_HEADER).map_err(|e| CliError::csv(path, e))?;
    for r in &table.rows {
        w.write_record([
            r.source.clone(),
            r.iteration.to_string(),
            r.seeds.to_string(),
            r.best_p25.to_string(),
            r.best_median.to_string(),
            r.best_p75.to_string(),
            r.median_stop.map(|s| s.to_string()).unwrap_or_default(),
        ])
        .map_err(|e| CliError::csv(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_summary(path: &Path) -> Result<SummaryTable> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::csv(path, e))?;
    let head = r.headers().map_err(|e| CliError::csv(path, e))?;
    if head != &csv::StringRecord::from(SUMMARY_HEADER.to_vec()) {
        return Err(CliError::Input(format!("{}: not a summary file", path.display())));
    }
    let bad = |what: &str, s: &str| CliError::Input(format!("{}: bad {what} `{s}`", path.display()));
    let mut rows = Vec::new();
    for row in r.records() {
        let row = row.map_err(|e| CliError::csv(path, e))?;
        let num = |i: usize, what: &str| row[i].parse::<f64>().map_err(|_| bad(what, &row[i]));
        let int = |i: usize, what: &str| row[i].parse::<usize>().map_err(|_| bad(what, &row[i]));
        rows.push(SummaryRow {
            source: row[0].to_string(),
            iteration: int(1, "iteration")?,
            seeds: int(2, "seeds")?,
            best_p25: num(3, "best_p25")?,
            best_median: num(4, "best_median")?,
            best_p75: num(5, "best_p75")?,
            median_stop: if row[6].is_empty() {
                None
            } else {
                Some(int(6, "median_stop")?)
            },
        });
    }
    Ok(SummaryTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn curve_records(seed: u64, best: &[f64], stop: Option<usize>) -> Vec<RunRecord> {
        best.iter()
            .enumerate()
            .map(|(i, b)| RunRecord {
                seed,
                iteration: i + 1,
                x: vec![0.0],
                y: *b,
                best_y: *b,
                true_y: None,
                cum_y: 0.0,
                acq: None,
                stopped: stop == Some(i + 1),
                wall_ms: 0.0,
            })
            .collect()
    }

    #[test]
    fn quantiles_of_five_values() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(
            (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75)),
            (1.0, 2.0, 3.0)
        );
        assert_eq!(quantile(&[1.0, 2.0, 3.0], 0.5), 2.0);
        assert_eq!(quantile(&[1.0, 2.0], 0.25), 1.25);
        assert_eq!(quantile(&[5.0], 0.75), 5.0);
    }

    #[test]
    fn single_seed_gives_equal_quantiles() {
        let recs = curve_records(9, &[3.0, 2.0, 2.0, 0.5], None);
        let t = summarize(&[("a".into(), recs)]).unwrap();
        assert_eq!(t.rows.len(), 4);
        for (r, b) in t.rows.iter().zip([3.0, 2.0, 2.0, 0.5]) {
            assert_eq!((r.best_p25, r.best_median, r.best_p75, r.seeds), (b, b, b, 1));
            assert_eq!(r.median_stop, None);
        }
    }

    #[test]
    fn median_stop_examples() {
        let curves: Vec<SeedCurve> = [Some(50), Some(50), Some(75), Some(100)]
            .into_iter()
            .enumerate()
            .map(|(i, s)| SeedCurve {
                seed: i as u64,
                best: vec![0.0; 100],
                stopped_at: s,
            })
            .collect();
        assert_eq!(median_stop(&curves), Some(50));
        let mut odd = curves[..3].to_vec();
        assert_eq!(median_stop(&odd), Some(50));
        odd[1].stopped_at = None;
        assert_eq!(median_stop(&odd), Some(75));
        odd[2].stopped_at = None;
        assert_eq!(median_stop(&odd), None);
    }

    #[test]
    fn stopped_seeds_carry_their_best_forward() {
        let mut recs = curve_records(0, &[4.0, 1.0], Some(2));
        recs.extend(curve_records(1, &[4.0, 3.0, 2.0, 0.0], None));
        let t = summarize(&[("s".into(), recs)]).unwrap();
        assert_eq!(t.rows.len(), 4);
        assert_eq!(t.rows[3].best_median, 0.5);
        assert_eq!(t.rows[3].seeds, 2);
        assert_eq!(t.rows[3].median_stop, Some(2));
    }

    #[test]
    fn rejects_empty_and_gappy_input() {
        assert!(summarize(&[]).is_err());
        assert!(summarize(&[("x".into(), vec![])]).is_err());
        let mut recs = curve_records(0, &[1.0, 2.0, 3.0], None);
        recs.remove(1);
        assert!(summarize(&[("x".into(), recs)]).is_err());
    }

    #[test]
    fn summary_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("summary.csv");
        let mut recs = curve_records(0, &[0.1, 0.2 / 3.0], Some(1));
        recs.extend(curve_records(5, &[1e-9, -7.5], None));
        let t = summarize(&[("a".into(), recs.clone()), ("b".into(), recs[2..].to_vec())]).unwrap();
        write_summary(&path, &t).unwrap();
        assert_eq!(read_summary(&path).unwrap(), t);
    }

    fn sorted_oracle(v: &[f64], p: f64) -> f64 {
        // rank-based: weight of each neighbour from its distance to the target rank
        let target = p * (v.len() - 1) as f64;
        v.iter()
            .enumerate()
            .map(|(i, x)| x * (1.0 - (i as f64 - target).abs()).max(0.0))
            .sum()
    }

    proptest! {
        #[test]
        fn quantiles_are_ordered_and_match_rank_weights(
            mut v in prop::collection::vec(-1e3f64..1e3, 1..40),
            p in 0.0f64..=1.0,
        ) {
            v.sort_by(f64::total_cmp);
            let (a, b, c) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
            prop_assert!(a <= b && b <= c);
            prop_assert!((quantile(&v, p) - sorted_oracle(&v, p)).abs() <= 1e-9 * (1.0 + v[v.len() - 1].abs().max(v[0].abs())));
        }
    }
}
