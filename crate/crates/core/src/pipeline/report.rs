use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::{Error, Result};

use super::run::{RunManifest, MANIFEST_FILE, METRICS_FILE, PREDICTIONS_FILE};

const ROUNDS: [&str; 2] = ["round1", "round2"];
const METRICS: [&str; 3] = ["MAE", "RMSE", "R2"];

#[derive(Debug, Clone, Copy, Deserialize)]
struct SplitScores {
    mae: f64,
    rmse: f64,
    r2: f64,
}

impl SplitScores {
    fn get(&self, metric: &str) -> f64 {
        match metric {
            "MAE" => self.mae,
            "RMSE" => self.rmse,
            _ => self.r2,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
struct MetricsRecord {
    test: SplitScores,
    val: SplitScores,
    mean_metapath_attention: Vec<f64>,
    mean_task_attention: Option<serde_json::Map<String, serde_json::Value>>,
    metapaths: Vec<String>,
}

/// Test-split metric of one indicator in each round.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub indicator: String,
    pub metric: String,
    pub round1: Option<f64>,
    pub round2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub rows: Vec<ReportRow>,
    pub files: Vec<PathBuf>,
}

fn read_metrics(path: &Path) -> Result<Option<MetricsRecord>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

/// Summarizes a finished run directory into `<run>/report/`. The output
/// depends only on the files of the run.
pub fn report(run: impl AsRef<Path>) -> Result<ReportSummary> {
    let run = run.as_ref();
    let manifest_path = run.join(MANIFEST_FILE);
    if !manifest_path.exists() {
        return Err(Error::MissingArtifact(format!(
            "run manifest {}",
            manifest_path.display()
        )));
    }
    let manifest = RunManifest::load(&manifest_path)?;
    let tasks: Vec<String> = manifest
        .config
        .tasks
        .iter()
        .map(|t| t.indicator.clone())
        .collect();

    let mut records: Vec<[Option<MetricsRecord>; 2]> = Vec::new();
    for t in &tasks {
        let r1 = read_metrics(&run.join(ROUNDS[0]).join(t).join(METRICS_FILE))?;
        let r2 = read_metrics(&run.join(ROUNDS[1]).join(t).join(METRICS_FILE))?;
        records.push([r1, r2]);
    }
    if records.iter().all(|r| r[0].is_none() && r[1].is_none()) {
        return Err(Error::MissingArtifact(format!(
            "metrics files under {}",
            run.display()
        )));
    }

    let mut rows = Vec::new();
    for (t, rec) in tasks.iter().zip(&records) {
        for m in METRICS {
            rows.push(ReportRow {
                indicator: t.clone(),
                metric: m.to_string(),
                round1: rec[0].as_ref().map(|r| r.test.get(m)),
                round2: rec[1].as_ref().map(|r| r.test.get(m)),
            });
        }
    }

    let out = run.join("report");
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut files = Vec::new();
    let mut put = |name: &str, text: String| -> Result<()> {
        let p = out.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        files.push(p);
        Ok(())
    };

    let mut csv = String::from("indicator,metric,round1,round2,change\n");
    for r in &rows {
        let change = r.round1.zip(r.round2).map(|(a, b)| b - a);
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            r.indicator,
            r.metric,
            fmt_opt(r.round1),
            fmt_opt(r.round2),
            fmt_opt(change)
        );
    }
    put("metrics.csv", csv)?;

    let mut table = String::from(
        "Test-split metrics (round 1: single-task meta-paths; round 2: after communication)\n\n",
    );
    let _ = writeln!(
        table,
        "{:<16} {:<6} {:>10} {:>10} {:>10}",
        "indicator", "metric", "round1", "round2", "change"
    );
    for r in &rows {
        let change = r.round1.zip(r.round2).map(|(a, b)| b - a);
        let _ = writeln!(
            table,
            "{:<16} {:<6} {:>10} {:>10} {:>10}",
            r.indicator,
            r.metric,
            fmt_cell(r.round1),
            fmt_cell(r.round2),
            fmt_cell(change)
        );
    }
    table.push_str("\nValidation R2\n");
    for (t, rec) in tasks.iter().zip(&records) {
        let _ = writeln!(
            table,
            "{:<16} {:>10} {:>10}",
            t,
            fmt_cell(rec[0].as_ref().map(|r| r.val.r2)),
            fmt_cell(rec[1].as_ref().map(|r| r.val.r2))
        );
    }
    put("metrics.txt", table)?;

    let mut errors = String::from("round,indicator,region_id,split,truth,prediction,error\n");
    for (round, _) in ROUNDS.iter().enumerate() {
        for t in &tasks {
            let p = run.join(ROUNDS[round]).join(t).join(PREDICTIONS_FILE);
            if !p.exists() {
                continue;
            }
            let mut reader = csv::Reader::from_path(&p)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            for rec in reader.records() {
                let rec = rec.map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                let truth: f64 = rec[2]
                    .parse()
                    .map_err(|_| Error::Config(format!("{}: bad truth", p.display())))?;
                let pred: f64 = rec[3]
                    .parse()
                    .map_err(|_| Error::Config(format!("{}: bad prediction", p.display())))?;
                let _ = writeln!(
                    errors,
                    "{},{},{},{},{},{},{}",
                    round + 1,
                    t,
                    &rec[0],
                    &rec[1],
                    truth,
                    pred,
                    pred - truth
                );
            }
        }
    }
    put("region_errors.csv", errors)?;

    let mut att = String::from("round\tindicator\tkind\tsource\tmean_weight\n");
    for (t, rec) in tasks.iter().zip(&records) {
        for (round, r) in rec.iter().enumerate() {
            let Some(r) = r else { continue };
            for (p, w) in r.metapaths.iter().zip(&r.mean_metapath_attention) {
                let _ = writeln!(att, "{}\t{}\tmetapath\t{}\t{}", round + 1, t, p, w);
            }
            if let Some(m) = &r.mean_task_attention {
                for (other, w) in m {
                    let _ = writeln!(att, "{}\t{}\ttask\t{}\t{}", round + 1, t, other, w);
                }
            }
        }
    }
    put("attention_summary.tsv", att)?;

    let mut cmp = String::from(
        "indicator,val_r2_round1,val_r2_round2,test_r2_round1,test_r2_round2,test_r2_improved\n",
    );
    for (t, rec) in tasks.iter().zip(&records) {
        let v1 = rec[0].as_ref().map(|r| r.val.r2);
        let v2 = rec[1].as_ref().map(|r| r.val.r2);
        let t1 = rec[0].as_ref().map(|r| r.test.r2);
        let t2 = rec[1].as_ref().map(|r| r.test.r2);
        let improved = t1
            .zip(t2)
            .map_or(String::new(), |(a, b)| (b > a).to_string());
        let _ = writeln!(
            cmp,
            "{t},{},{},{},{},{improved}",
            fmt_opt(v1),
            fmt_opt(v2),
            fmt_opt(t1),
            fmt_opt(t2)
        );
    }
    put("comparison.csv", cmp)?;

    Ok(ReportSummary { rows, files })
}
