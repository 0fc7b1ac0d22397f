//! Cross-seed reports from trial logs or per-seed summary tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use slotune_core::metrics::seed_summary;
use slotune_core::stats::{build_report, Metric, StatsReport, TestMethod};
use slotune_core::{SeedSummary, TrialRecord};

use crate::error::{Error, Result};
use crate::log::{read_log, LOG_EXTENSION};

/// Per-seed summaries plus what could not be summarized.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Loaded {
    pub summaries: Vec<SeedSummary>,
    /// `(optimizer, seed)` pairs absent while the optimizer ran other seeds.
    pub missing: Vec<(String, u64)>,
    /// Studies with fewer trials than the longest one: `(optimizer, seed, trials)`.
    pub incomplete: Vec<(String, u64, u32)>,
}

impl Loaded {
    fn from_summaries(mut summaries: Vec<SeedSummary>, incomplete: Vec<(String, u64, u32)>) -> Self {
        summaries.sort_by(|a, b| (&a.optimizer, a.seed).cmp(&(&b.optimizer, b.seed)));
        let optimizers: BTreeSet<&str> = summaries
            .iter()
            .map(|s| s.optimizer.as_str())
            .chain(incomplete.iter().map(|i| i.0.as_str()))
            .collect();
        let seeds: BTreeSet<u64> = summaries
            .iter()
            .map(|s| s.seed)
            .chain(incomplete.iter().map(|i| i.1))
            .collect();
        let present: BTreeSet<(&str, u64)> = summaries
            .iter()
            .map(|s| (s.optimizer.as_str(), s.seed))
            .chain(incomplete.iter().map(|i| (i.0.as_str(), i.1)))
            .collect();
        let missing = optimizers
            .iter()
            .flat_map(|&o| seeds.iter().map(move |&s| (o, s)))
            .filter(|p| !present.contains(p))
            .map(|(o, s)| (o.to_string(), s))
            .collect();
        Self {
            summaries,
            missing,
            incomplete,
        }
    }

    /// Summaries restricted to seeds every optimizer completed.
    pub fn paired(&self) -> Vec<SeedSummary> {
        let optimizers: BTreeSet<&str> = self.summaries.iter().map(|s| s.optimizer.as_str()).collect();
        let mut per_seed: BTreeMap<u64, usize> = BTreeMap::new();
        for s in &self.summaries {
            *per_seed.entry(s.seed).or_default() += 1;
        }
        self.summaries
            .iter()
            .filter(|s| per_seed[&s.seed] == optimizers.len())
            .cloned()
            .collect()
    }
}

/// Summarizes every `*.jsonl` log in `dir`.
pub fn load_logs(dir: &Path) -> Result<Loaded> {
    let entries = fs::read_dir(dir).map_err(|source| Error::Read {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|source| Error::Read {
                path: dir.to_path_buf(),
                source,
            })?
            .path();
        if path.is_file() && path.extension().is_some_and(|e| e == LOG_EXTENSION) {
            files.push(path);
        }
    }
    files.sort();

    let mut studies: BTreeMap<(String, u64), Vec<TrialRecord>> = BTreeMap::new();
    for path in &files {
        for record in read_log(path)? {
            studies
                .entry((record.optimizer.to_string(), record.seed))
                .or_default()
                .push(record);
        }
    }
    if studies.is_empty() {
        return Err(Error::NoStudies(dir.to_path_buf()));
    }

    let budget = studies.values().map(Vec::len).max().unwrap_or(0);
    let mut summaries = Vec::new();
    let mut incomplete = Vec::new();
    for ((optimizer, seed), mut records) in studies {
        records.sort_by_key(|r| r.trial_index);
        let duplicate = records.windows(2).find(|w| w[0].trial_index == w[1].trial_index);
        if let Some(w) = duplicate {
            return Err(Error::Malformed {
                path: dir.to_path_buf(),
                line: 0,
                message: format!(
                    "trial {} of {optimizer}/{seed} appears more than once",
                    w[0].trial_index
                ),
            });
        }
        if records.len() < budget {
            incomplete.push((optimizer, seed, records.len() as u32));
            continue;
        }
        let metrics: Vec<_> = records.iter().map(TrialRecord::metrics).collect();
        summaries.push(seed_summary(&optimizer, seed, &metrics));
    }
    Ok(Loaded::from_summaries(summaries, incomplete))
}

/// Reads per-seed summaries from a CSV with a header row.
pub fn load_summary_csv(path: &Path) -> Result<Loaded> {
    let text = fs::read_to_string(path).map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut summaries = Vec::new();
    for row in reader.deserialize::<SeedSummary>() {
        let summary = row.map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        summaries.push(summary);
    }
    if summaries.is_empty() {
        return Err(Error::NoStudies(path.to_path_buf()));
    }
    Ok(Loaded::from_summaries(summaries, Vec::new()))
}

pub fn write_summary_csv(summaries: &[SeedSummary]) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for s in summaries {
        writer.serialize(s).expect("summaries serialize");
    }
    String::from_utf8(writer.into_inner().expect("in-memory writer")).expect("csv is utf-8")
}

pub fn analyze(loaded: &Loaded, method: TestMethod) -> Result<StatsReport> {
    Ok(build_report(&loaded.paired(), method)?)
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

fn digits(metric: Metric) -> usize {
    match metric {
        Metric::FastCount => 2,
        Metric::PostHitConsistency => 3,
        Metric::BestLatency => 2,
    }
}

/// Aligned plain-text report.
pub fn render_text(report: &StatsReport, loaded: &Loaded) -> String {
    let mut out = String::new();
    let (b, c) = (&report.baseline, &report.candidate);
    let seeds: Vec<String> = report.seeds.iter().map(u64::to_string).collect();
    let _ = writeln!(
        out,
        "{b} vs {c} over {} seeds ({})",
        report.seeds.len(),
        seeds.join(" ")
    );
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<22} {:>18} {:>18} {:>8} {:>9} {:>9} {:>9}  {:<17} {:>6}",
        "metric", b, c, "U", "p", "p_holm", "p_holm_m", "test", "w/t/l"
    );
    for row in &report.rows {
        let d = digits(row.metric);
        let cell = |x: &slotune_core::stats::Describe| format!("{} ± {}", opt(x.mean, d), opt(x.std, d));
        let (u, p, adj, adj_m, alt) = match &row.test {
            Some(t) => (
                format!("{:.1}", t.u_statistic),
                format!("{:.4}", t.p_raw),
                format!("{:.4}", t.p_adjusted),
                format!("{:.4}", t.p_adjusted_raw_multiplier),
                t.alternative.as_str().to_string(),
            ),
            None => ("-".into(), "-".into(), "-".into(), "-".into(), "-".into()),
        };
        let _ = writeln!(
            out,
            "{:<22} {:>18} {:>18} {:>8} {:>9} {:>9} {:>9}  {:<17} {:>6}",
            row.metric.as_str(),
            cell(&row.baseline),
            cell(&row.candidate),
            u,
            p,
            adj,
            adj_m,
            alt,
            format!("{}/{}/{}", row.wins.wins, row.wins.ties, row.wins.losses),
        );
    }
    let _ = writeln!(out);
    let method = report
        .rows
        .iter()
        .find_map(|r| r.test.as_ref())
        .map_or("-", |t| t.method.as_str());
    let _ = writeln!(
        out,
        "p-values: {method}; p_holm is step-down Holm, p_holm_m the unadjusted Holm multipliers"
    );
    let _ = writeln!(out, "w/t/l: per-seed wins, ties and losses of {c}");
    let _ = writeln!(
        out,
        "best-latency std ratio ({b}/{c}): {}",
        opt(report.best_latency_std_ratio, 2)
    );
    let _ = writeln!(
        out,
        "best-latency variance ratio ({b}/{c}): {}",
        opt(report.best_latency_variance_ratio, 2)
    );
    if let Some((x, y)) = report.feasible {
        let _ = writeln!(out, "feasible trials: {b} {x}, {c} {y}");
    }
    if let Some((x, y)) = report.crashes {
        let _ = writeln!(out, "crashed trials: {b} {x}, {c} {y}");
    }
    for (o, s) in &loaded.missing {
        let _ = writeln!(out, "missing: {o}/{s}");
    }
    for (o, s, n) in &loaded.incomplete {
        let _ = writeln!(out, "incomplete: {o}/{s} ({n} trials)");
    }
    out
}

/// One CSV row per metric, same numbers as the text report.
pub fn render_csv(report: &StatsReport) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record([
            "metric",
            "baseline",
            "baseline_mean",
            "baseline_std",
            "candidate",
            "candidate_mean",
            "candidate_std",
            "u_statistic",
            "p_raw",
            "p_holm",
            "p_holm_raw_multiplier",
            "alternative",
            "method",
            "candidate_wins",
            "ties",
            "candidate_losses",
            "best_latency_std_ratio",
            "best_latency_variance_ratio",
        ])
        .expect("in-memory writer");
    let num = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    for row in &report.rows {
        let t = row.test.as_ref();
        writer
            .write_record([
                row.metric.as_str().to_string(),
                report.baseline.clone(),
                num(row.baseline.mean),
                num(row.baseline.std),
                report.candidate.clone(),
                num(row.candidate.mean),
                num(row.candidate.std),
                num(t.map(|t| t.u_statistic)),
                num(t.map(|t| t.p_raw)),
                num(t.map(|t| t.p_adjusted)),
                num(t.map(|t| t.p_adjusted_raw_multiplier)),
                t.map_or("", |t| t.alternative.as_str()).to_string(),
                t.map_or("", |t| t.method.as_str()).to_string(),
                row.wins.wins.to_string(),
                row.wins.ties.to_string(),
                row.wins.losses.to_string(),
                num(report.best_latency_std_ratio),
                num(report.best_latency_variance_ratio),
            ])
            .expect("in-memory writer");
    }
    String::from_utf8(writer.into_inner().expect("in-memory writer")).expect("csv is utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(optimizer: &str, seed: u64, fast: u32, phc: f64, first: u32, best: f64) -> SeedSummary {
        SeedSummary {
            optimizer: optimizer.to_string(),
            seed,
            budget: 15,
            fast_count: fast,
            post_hit_consistency: Some(phc),
            first_fast: Some(first),
            best_latency_ms: Some(best),
            feasible_count: None,
            crash_count: None,
        }
    }

    #[test]
    fn summary_csv_round_trips() {
        let rows = vec![
            summary("random", 1, 9, 0.727, 4, 464.85),
            summary("tba-tpe", 1, 9, 1.0, 7, 467.54),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        fs::write(&path, write_summary_csv(&rows)).unwrap();
        assert_eq!(load_summary_csv(&path).unwrap().summaries, rows);
    }

    #[test]
    fn missing_pairs_are_listed_and_excluded() {
        let rows = vec![
            summary("random", 1, 9, 0.7, 4, 460.0),
            summary("random", 2, 8, 0.6, 4, 461.0),
            summary("random", 3, 7, 0.5, 2, 462.0),
            summary("tba-tpe", 1, 11, 0.9, 3, 455.0),
            summary("tba-tpe", 2, 12, 1.0, 3, 456.0),
        ];
        let loaded = Loaded::from_summaries(rows, Vec::new());
        assert_eq!(loaded.missing, vec![("tba-tpe".to_string(), 3)]);
        let report = analyze(&loaded, TestMethod::Approximate).unwrap();
        assert_eq!(report.seeds, vec![1, 2]);
        assert!(render_text(&report, &loaded).contains("missing: tba-tpe/3"));
    }

    #[test]
    fn csv_rows_match_the_report() {
        let rows = vec![
            summary("random", 1, 9, 0.7, 4, 460.0),
            summary("random", 2, 8, 0.6, 4, 470.0),
            summary("tba-tpe", 1, 11, 0.9, 3, 455.0),
            summary("tba-tpe", 2, 12, 1.0, 3, 456.0),
        ];
        let loaded = Loaded::from_summaries(rows, Vec::new());
        let report = analyze(&loaded, TestMethod::Exact).unwrap();
        let csv = render_csv(&report);
        let mut reader = csv::Reader::from_reader(csv.as_bytes());
        let records: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
        assert_eq!(records.len(), 3);
        for (rec, row) in records.iter().zip(&report.rows) {
            assert_eq!(&rec[0], row.metric.as_str());
            let p: f64 = rec[8].parse().unwrap();
            assert_eq!(p, row.test.as_ref().unwrap().p_raw);
            assert_eq!(&rec[12], "exact");
        }
    }

    #[test]
    fn empty_directory_has_no_studies() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_logs(dir.path()).unwrap_err();
        assert!(err.to_string().starts_with("no studies found"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }
}
