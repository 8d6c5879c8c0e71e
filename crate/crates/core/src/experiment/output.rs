use std::fmt::Write as _;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{Comparison, ExperimentConfig};
use crate::data::Emotion;
use crate::error::{Error, Result};
use crate::eval::EvalReport;

/// Provenance record written next to every command's outputs. The only
/// field that differs between reruns is `created_unix_secs`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub created_unix_secs: u64,
    pub files: Vec<String>,
    pub details: serde_json::Value,
}

impl Manifest {
    pub fn new(command: &str, files: Vec<String>, details: serde_json::Value) -> Self {
        Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix_secs: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            files,
            details,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("manifest.json"), self)
    }
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, &text)
}

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn f(x: f64) -> String {
    format!("{x:.6}")
}

pub fn single_summary_csv(cmp: &Comparison) -> String {
    let mut out =
        String::from("method,runs,accuracy_mean,accuracy_std,f1_mean,f1_std,tv_mean,tv_std\n");
    for s in &cmp.single_summaries {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            s.method,
            s.runs,
            f(s.accuracy.mean),
            f(s.accuracy.std),
            f(s.micro_f1_emotional.mean),
            f(s.micro_f1_emotional.std),
            f(s.tv_distance.mean),
            f(s.tv_distance.std)
        );
    }
    out
}

/// One row per method ensemble plus the mixed ensemble; `single_f1_mean`
/// is the matching single-model mean (empty for the mixed row).
pub fn ensemble_summary_csv(cmp: &Comparison) -> String {
    let mut out = String::from("ensemble,members,accuracy,f1,tv,single_f1_mean\n");
    for e in cmp.ensembles.iter().chain(cmp.mixed.iter()) {
        let single = cmp
            .single_summaries
            .iter()
            .find(|s| s.method == e.label)
            .map(|s| f(s.micro_f1_emotional.mean))
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            e.label,
            e.members,
            f(e.report.accuracy),
            f(e.report.micro_f1_emotional),
            f(e.report.tv_distance),
            single
        );
    }
    out
}

/// Test-set class distribution next to each method's mean predicted
/// distribution over single-model runs.
pub fn distributions_csv(cmp: &Comparison) -> String {
    let mut out = String::from("class,actual");
    for s in &cmp.single_summaries {
        out.push(',');
        out.push_str(&s.method);
    }
    out.push('\n');
    for e in Emotion::ALL {
        let c = e.index();
        out.push_str(e.as_str());
        out.push(',');
        out.push_str(&f(cmp.test_gold.prob(c)));
        for s in &cmp.single_summaries {
            out.push(',');
            out.push_str(&f(s.predicted[c]));
        }
        out.push('\n');
    }
    out
}

pub fn reports_csv<'a>(reports: impl IntoIterator<Item = &'a EvalReport>) -> String {
    let mut out = String::from(EvalReport::csv_header());
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Writes everything `compare` produces into `dir`.
pub fn write_compare_outputs(
    dir: &Path,
    config: &ExperimentConfig,
    cmp: &Comparison,
) -> Result<Vec<String>> {
    create_dir(dir)?;
    let ensemble_reports: Vec<&EvalReport> = cmp
        .ensembles
        .iter()
        .chain(cmp.mixed.iter())
        .map(|e| &e.report)
        .collect();
    let files: Vec<(&str, String)> = vec![
        ("single_summary.csv", single_summary_csv(cmp)),
        ("ensemble_summary.csv", ensemble_summary_csv(cmp)),
        ("distributions.csv", distributions_csv(cmp)),
        ("single_runs.csv", reports_csv(cmp.singles.iter().flatten())),
        ("ensemble_runs.csv", reports_csv(ensemble_reports)),
    ];
    let mut names = Vec::new();
    for (name, text) in files {
        write_file(&dir.join(name), &text)?;
        names.push(name.to_string());
    }
    write_json(&dir.join("config.json"), config)?;
    names.push("config.json".into());
    write_json(&dir.join("comparison.json"), cmp)?;
    names.push("comparison.json".into());
    Ok(names)
}
