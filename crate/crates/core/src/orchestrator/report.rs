//! Flat-file outputs of a run and the text table rendered from them.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{RoundRecord, SimConfig, SimulationReport};
use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "plant,session,accuracy,f1,precision,recall,roc_auc";
pub const EVENTS_HEADER: &str = "t,robot_id,event_kind,detail";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TABLE_FILE: &str = "table.txt";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub plant_id: u32,
    pub session: u32,
    pub accuracy: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    /// Absent when the test split held a single class.
    pub roc_auc: Option<f64>,
}

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        let auc = self.roc_auc.map_or_else(|| "NA".to_string(), |a| format!("{a:.6}"));
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{}",
            self.plant_id, self.session, self.accuracy, self.f1, self.precision, self.recall, auc
        )
    }
}

pub fn metrics_file(plant_id: u32) -> String {
    format!("metrics_plant{plant_id}.csv")
}

pub fn events_file(plant_id: u32) -> String {
    format!("events_plant{plant_id}.log")
}

/// Creates `dir` if needed and proves it is writable, so a bad output path
/// fails before any simulation work.
pub fn preflight_output_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let probe = dir.join(".write_probe");
    fs::write(&probe, b"").map_err(|e| Error::Io(format!("{} is not writable: {e}", dir.display())))?;
    fs::remove_file(&probe).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    Ok(())
}

fn table_sessions(last: u32) -> impl Iterator<Item = u32> {
    (1..=last).filter(|s| *s == 1 || s % 5 == 0)
}

/// Renders the per-plant comparison table. Values are parsed back from their
/// CSV text first so rendering from a live run and from persisted files
/// produce the same bytes.
pub fn render_table(rows: &[MetricsRow]) -> String {
    let mut plants: Vec<u32> = rows.iter().map(|r| r.plant_id).collect();
    plants.sort_unstable();
    plants.dedup();
    let mut out = String::new();
    for (i, plant) in plants.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let mut mine: Vec<MetricsRow> = rows
            .iter()
            .filter(|r| r.plant_id == *plant)
            .map(|r| parse_metrics_line(&r.csv_line()).expect("own csv parses"))
            .collect();
        mine.sort_by_key(|r| r.session);
        let last = mine.last().map_or(0, |r| r.session);
        let _ = writeln!(out, "Plant {plant}");
        let _ = writeln!(
            out,
            "{:>8}  {:>9}  {:>9}  {:>9}  {:>9}  {:>9}",
            "Session", "Accuracy", "F1", "Precision", "Recall", "ROC AUC"
        );
        for s in table_sessions(last) {
            let Some(r) = mine.iter().find(|r| r.session == s) else {
                continue;
            };
            let auc = r.roc_auc.map_or_else(|| "n/a".to_string(), |a| format!("{a:.6}"));
            let _ = writeln!(
                out,
                "{:>8}  {:>9.6}  {:>9.6}  {:>9.6}  {:>9.6}  {:>9}",
                r.session, r.accuracy, r.f1, r.precision, r.recall, auc
            );
        }
    }
    out
}

fn parse_metrics_line(line: &str) -> Result<MetricsRow> {
    let bad = || Error::Decoding(format!("malformed metrics line: {line}"));
    let cols: Vec<&str> = line.trim().split(',').collect();
    if cols.len() != 7 {
        return Err(bad());
    }
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
    Ok(MetricsRow {
        plant_id: cols[0].parse().map_err(|_| bad())?,
        session: cols[1].parse().map_err(|_| bad())?,
        accuracy: num(cols[2])?,
        f1: num(cols[3])?,
        precision: num(cols[4])?,
        recall: num(cols[5])?,
        roc_auc: if cols[6] == "NA" { None } else { Some(num(cols[6])?) },
    })
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(METRICS_HEADER) {
        return Err(Error::Decoding("metrics file lacks the expected header".into()));
    }
    lines.filter(|l| !l.trim().is_empty()).map(parse_metrics_line).collect()
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    seed: u64,
    sessions: usize,
    final_model_version: u64,
    files: Vec<String>,
    config: &'a SimConfig,
}

fn rounds_csv(rounds: &[RoundRecord]) -> String {
    let mut out = String::from("session,model_version,aggregated,delivered,dropped,attempts,aborted,reports,loss_before,loss_after\n");
    for r in rounds {
        let delivered = r.uploads.iter().filter(|u| u.delivered).count();
        let attempts: usize = r.uploads.iter().map(|u| u.attempts.len()).sum();
        let aborted: usize = r
            .uploads
            .iter()
            .flat_map(|u| &u.attempts)
            .filter(|a| a.decision == crate::qkd::GateDecision::Abort)
            .count();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{:.9},{:.9}",
            r.session_index,
            r.model_version,
            r.aggregated,
            delivered,
            r.uploads.len() - delivered,
            attempts,
            aborted,
            r.reports_sent,
            r.loss_before,
            r.loss_after
        );
    }
    out
}

/// Writes every output file for a finished run and returns their paths.
/// An empty run is rejected before anything touches the disk.
pub fn emit_report(report: &SimulationReport, dir: &Path) -> Result<Vec<PathBuf>> {
    if report.rounds.is_empty() {
        return Err(Error::InvalidArgument("no session records to report".into()));
    }
    preflight_output_dir(dir)?;
    let mut files: Vec<(String, String)> = Vec::new();
    let mut all_rows = Vec::new();
    for plant in &report.plants {
        let rows = report.metrics_for(plant.plant_id);
        let mut csv = String::from(METRICS_HEADER);
        csv.push('\n');
        for r in &rows {
            csv.push_str(&r.csv_line());
            csv.push('\n');
        }
        files.push((metrics_file(plant.plant_id), csv));
        all_rows.extend(rows);

        let mut log = String::from(EVENTS_HEADER);
        log.push('\n');
        for e in &plant.events {
            log.push_str(&e.log_line());
            log.push('\n');
        }
        files.push((events_file(plant.plant_id), log));
    }
    files.push(("rounds.csv".into(), rounds_csv(&report.rounds)));
    files.push((TABLE_FILE.into(), render_table(&all_rows)));

    let mut names: Vec<String> = files.iter().map(|(n, _)| n.clone()).collect();
    names.push(MANIFEST_FILE.into());
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        seed: report.config.seed,
        sessions: report.rounds.len(),
        final_model_version: report.final_model.version,
        files: names,
        config: &report.config,
    };
    let manifest = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Encoding(e.to_string()))? + "\n";
    files.push((MANIFEST_FILE.into(), manifest));

    let mut written = Vec::new();
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        written.push(path);
    }
    Ok(written)
}

/// Re-renders the table from the metrics CSVs in a previous output dir.
pub fn rerender_from_dir(dir: &Path) -> Result<String> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("metrics_plant") && n.ends_with(".csv"))
        })
        .collect();
    if paths.is_empty() {
        return Err(Error::Io(format!("no metrics_plant*.csv in {}", dir.display())));
    }
    paths.sort();
    let mut rows = Vec::new();
    for p in paths {
        let text = fs::read_to_string(&p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
        rows.extend(parse_metrics_csv(&text)?);
    }
    Ok(render_table(&rows))
}
