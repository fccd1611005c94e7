//! The `run` and `summarize` subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use les_core::bench::{run_experiment, RunRecord, RunStream};
use les_core::stopping::Certificate;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::output::{read_records, write_records};
use crate::summary::{summarize, write_summary, SummaryTable};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const FAILED_DIR: &str = "failed";
pub const CERTIFICATE_DIR: &str = "certificates";

#[derive(Serialize)]
struct CertificateFile<'a> {
    task: &'a str,
    algorithm: &'a str,
    seed: u64,
    #[serde(flatten)]
    certificate: &'a Certificate,
    /// Regret of the incumbent against a descent on the noiseless objective.
    true_local_regret: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    /// One record file per algorithm.
    pub record_files: Vec<PathBuf>,
    pub completed: usize,
    pub failed: usize,
    pub stopped: usize,
    pub summary: SummaryTable,
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

/// Removes outputs a previous run left for `source`, so the directory always
/// reflects the latest run.
fn clear_stale(dir: &Path, source: &str) -> Result<()> {
    let pattern = format!(
        "{}/{}_seed*",
        glob::Pattern::escape(&dir.to_string_lossy()),
        glob::Pattern::escape(source)
    );
    let paths = glob::glob(&pattern).map_err(|e| CliError::Input(e.to_string()))?;
    for p in paths.flatten() {
        fs::remove_file(&p).map_err(|e| CliError::io(&p, e))?;
    }
    Ok(())
}

/// Runs every algorithm of `cfg` on every seed and writes records,
/// certificates, failures and a summary under `output_dir`.
pub fn run(cfg: &ExperimentConfig, output_dir: &Path) -> Result<RunOutcome> {
    create_dir(output_dir)?;
    let failed_dir = output_dir.join(FAILED_DIR);
    let cert_dir = output_dir.join(CERTIFICATE_DIR);
    let task_name = cfg.task.name();
    let dim = cfg.task.dim();
    let mut outcome = RunOutcome {
        record_files: Vec::new(),
        completed: 0,
        failed: 0,
        stopped: 0,
        summary: SummaryTable::default(),
    };
    let mut sources = Vec::new();

    for &algo in &cfg.algorithms {
        let settings = cfg.settings_for(algo)?;
        let source = format!("{task_name}_{}", algo.name());
        log::info!("{source}: {} seeds, budget {}", cfg.seeds.len(), cfg.budget);
        let streams = run_experiment(&cfg.task, &settings, &cfg.seeds);
        clear_stale(&failed_dir, &source)?;
        clear_stale(&cert_dir, &source)?;

        let (done, failed): (Vec<RunStream>, Vec<RunStream>) = streams.into_iter().partition(|s| s.failure.is_none());
        for s in &failed {
            create_dir(&failed_dir)?;
            let stem = failed_dir.join(format!("{source}_seed{}", s.seed));
            let reason = s.failure.as_deref().unwrap_or_default();
            log::warn!("{source}: seed {} failed: {reason}", s.seed);
            write_file(&stem.with_extension("txt"), &format!("{reason}\n"))?;
            write_records(&stem.with_extension("csv"), dim, &s.records)?;
        }
        for s in &done {
            let Some(certificate) = &s.certificate else {
                continue;
            };
            create_dir(&cert_dir)?;
            let file = CertificateFile {
                task: &task_name,
                algorithm: algo.name(),
                seed: s.seed,
                certificate,
                true_local_regret: s.true_local_regret,
            };
            let json = serde_json::to_string_pretty(&file).map_err(|e| CliError::Input(e.to_string()))?;
            write_file(
                &cert_dir.join(format!("{source}_seed{}.json", s.seed)),
                &format!("{json}\n"),
            )?;
            outcome.stopped += 1;
        }

        let records: Vec<RunRecord> = done.iter().flat_map(|s| s.records.iter().cloned()).collect();
        let path = output_dir.join(format!("{source}.csv"));
        write_records(&path, dim, &records)?;
        outcome.record_files.push(path);
        outcome.completed += done.len();
        outcome.failed += failed.len();
        if records.is_empty() {
            log::warn!("{source}: no seed completed, left out of the summary");
        } else {
            sources.push((source, records));
        }
    }

    if sources.is_empty() {
        return Err(CliError::Input("every seed failed, nothing to summarize".into()));
    }
    outcome.summary = summarize(&sources)?;
    write_summary(&output_dir.join(SUMMARY_FILE), &outcome.summary)?;
    Ok(outcome)
}

/// Summarizes every record file matching `pattern` into `output`. Each file
/// is one source, named after its stem. Matching files that are not record
/// files (such as an earlier summary) or hold no seeds are skipped.
pub fn summarize_files(pattern: &str, output: &Path) -> Result<SummaryTable> {
    let paths = glob::glob(pattern).map_err(|e| CliError::Input(format!("bad input pattern: {e}")))?;
    let mut sources = Vec::new();
    for p in paths {
        let p = p.map_err(|e| {
            let path = e.path().to_path_buf();
            CliError::io(path, e.into())
        })?;
        match read_records(&p)? {
            Some(records) if records.is_empty() => log::warn!("{}: no completed seeds, skipped", p.display()),
            Some(records) => {
                let name = p
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                sources.push((name, records));
            }
            None => log::warn!("{}: not a record file, skipped", p.display()),
        }
    }
    if sources.is_empty() {
        return Err(CliError::Input(format!("no record files match `{pattern}`")));
    }
    let table = summarize(&sources)?;
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_summary(output, &table)?;
    Ok(table)
}
