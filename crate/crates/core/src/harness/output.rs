//! Result persistence: raw/aggregate/plot CSVs, the manifest, trace files and
//! certification reports. All floats are serialized with 17 significant
//! digits; all writes happen on one thread in job order.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{build_problem, tune_select, ExperimentConfig, Job, Mode, Selection};
use crate::diagnostics::{scan_history_for_sosp, SospReport};
use crate::error::{Error, Result};
use crate::optimizers::{Trace, TraceRecord};
use crate::rng::derive_seed;

pub const RAW_HEADER: &str = "algorithm,eta,r,trial,round,train_grad_norm,train_loss,train_acc,\
test_grad_norm,test_loss,test_acc,budget_units,raw_grad_evals,comm_events,comm_rounds,status";

pub const AGG_HEADER: &str = "algorithm,eta,r,round,n_trials,\
train_grad_norm_mean,train_grad_norm_std,train_loss_mean,train_loss_std,\
train_acc_mean,train_acc_std,test_grad_norm_mean,test_grad_norm_std,\
test_loss_mean,test_loss_std,test_acc_mean,test_acc_std";

pub const PLOT_HEADER: &str = "algorithm,round,mean,std";

/// The six reported criteria, in raw/aggregate column order.
pub const CRITERIA: [&str; 6] = [
    "train_grad_norm",
    "train_loss",
    "train_acc",
    "test_grad_norm",
    "test_loss",
    "test_acc",
];

/// 17-significant-digit float serialization shared by every CSV writer.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn criteria_of(rec: &TraceRecord) -> [f64; 6] {
    [
        rec.train_grad_norm,
        rec.train_loss,
        rec.train_acc,
        rec.test_grad_norm,
        rec.test_loss,
        rec.test_acc,
    ]
}

/// One aggregate row: mean/std over trials of the six criteria at a round.
#[derive(Clone, Debug)]
pub struct AggRow {
    pub algorithm: String,
    pub eta: f64,
    pub r: f64,
    pub round: u64,
    pub n: usize,
    pub mean: [f64; 6],
    pub std: [f64; 6],
}

/// Execution summary returned by [`super::execute`].
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub jobs: usize,
    /// Stems of runs that stopped early, with their abort messages.
    pub aborted: Vec<(String, String)>,
    pub files: Vec<PathBuf>,
    pub selections: Vec<Selection>,
}

/// Reproducibility manifest; every output file is recomputable from
/// `config_toml` alone (it embeds the master seed).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub mode: String,
    pub config_sha256: String,
    pub config_toml: String,
    pub master_seed: u64,
    pub trial_seeds: Vec<u64>,
    pub threads_requested: usize,
    pub files: Vec<String>,
    pub aborted_runs: Vec<(String, String)>,
}

pub(super) fn write_outputs(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    threads: usize,
    mode: Mode,
    jobs: &[(Job, String)],
    traces: &[Trace],
) -> Result<RunSummary> {
    fs::create_dir_all(out_dir)?;
    let mut files: Vec<PathBuf> = Vec::new();
    let aborted: Vec<(String, String)> = jobs
        .iter()
        .zip(traces)
        .filter_map(|((_, stem), trace)| {
            trace.aborted.as_ref().map(|m| (stem.clone(), m.clone()))
        })
        .collect();

    // raw.csv
    let raw_path = out_dir.join("raw.csv");
    write_text(&raw_path, &render_raw(jobs, traces))?;
    files.push(raw_path);

    // agg.csv
    let agg = aggregate(cfg, jobs, traces);
    let agg_path = out_dir.join("agg.csv");
    write_text(&agg_path, &render_agg(&agg))?;
    files.push(agg_path);

    // traces (certification input)
    if cfg.output.save_traces {
        let tdir = out_dir.join("traces");
        fs::create_dir_all(&tdir)?;
        for ((_, stem), trace) in jobs.iter().zip(traces) {
            let path = tdir.join(format!("{stem}.json"));
            let file = fs::File::create(&path)?;
            serde_json::to_writer(file, trace)
                .map_err(|e| Error::Parse(format!("trace '{stem}': {e}")))?;
            files.push(path);
        }
    }

    // tuning selection and plot files
    let mut selections = Vec::new();
    if mode == Mode::Sweep || mode == Mode::Compare {
        selections = tune_select(&agg, &cfg.run.algorithms, cfg.selection_rule())?;
        let sel_path = out_dir.join("selection.json");
        let text = serde_json::to_string_pretty(&selections)
            .map_err(|e| Error::Parse(e.to_string()))?;
        write_text(&sel_path, &text)?;
        files.push(sel_path);
    }
    if mode == Mode::Compare {
        for (ci, name) in CRITERIA.iter().enumerate() {
            let path = out_dir.join(format!("plot_{name}.csv"));
            write_text(&path, &render_plot(&agg, &selections, ci))?;
            files.push(path);
        }
    }

    // manifest.json
    let config_toml = cfg.canonical_toml()?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").into(),
        mode: mode.name().into(),
        config_sha256: hex_sha256(&config_toml),
        config_toml,
        master_seed: cfg.run.master_seed,
        trial_seeds: (0..cfg.run.n_trials)
            .map(|i| derive_seed(cfg.run.master_seed, i as u64))
            .collect(),
        threads_requested: threads,
        files: files
            .iter()
            .map(|p| {
                p.strip_prefix(out_dir)
                    .unwrap_or(p)
                    .to_string_lossy()
                    .into_owned()
            })
            .collect(),
        aborted_runs: aborted.clone(),
    };
    let man_path = out_dir.join("manifest.json");
    write_text(
        &man_path,
        &serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?,
    )?;
    files.push(man_path);

    Ok(RunSummary {
        jobs: jobs.len(),
        aborted,
        files,
        selections,
    })
}

fn render_raw(jobs: &[(Job, String)], traces: &[Trace]) -> String {
    let mut out = String::from(RAW_HEADER);
    out.push('\n');
    for ((job, _), trace) in jobs.iter().zip(traces) {
        let status = if trace.aborted.is_some() {
            "aborted"
        } else {
            "ok"
        };
        for rec in &trace.records {
            out.push_str(job.algorithm.name());
            out.push(',');
            out.push_str(&fmt_float(job.eta));
            out.push(',');
            out.push_str(&fmt_float(job.r));
            out.push_str(&format!(",{},{}", job.trial, rec.round));
            for v in criteria_of(rec) {
                out.push(',');
                out.push_str(&fmt_float(v));
            }
            out.push_str(&format!(
                ",{},{},{},{},{status}\n",
                rec.budget_units, rec.raw_grad_evals, rec.comm_events, rec.comm_rounds
            ));
        }
    }
    out
}

/// Mean/std (sample standard deviation; 0 for a single trial) per
/// (algorithm, grid point, round), computed from the raw records.
pub(super) fn aggregate(
    cfg: &ExperimentConfig,
    jobs: &[(Job, String)],
    traces: &[Trace],
) -> Vec<AggRow> {
    let trials = cfg.run.n_trials;
    let mut out = Vec::new();
    for group in jobs.iter().zip(traces).collect::<Vec<_>>().chunks(trials) {
        let job0 = &group[0].0 .0;
        let max_len = group.iter().map(|(_, t)| t.records.len()).max().unwrap_or(0);
        for idx in 0..max_len {
            let values: Vec<&TraceRecord> = group
                .iter()
                .filter_map(|(_, t)| t.records.get(idx))
                .collect();
            let n = values.len();
            let mut mean = [0.0f64; 6];
            let mut std = [0.0f64; 6];
            for c in 0..6 {
                let xs: Vec<f64> = values.iter().map(|r| criteria_of(r)[c]).collect();
                let m = xs.iter().sum::<f64>() / n as f64;
                mean[c] = m;
                std[c] = if n > 1 {
                    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64).sqrt()
                } else {
                    0.0
                };
            }
            out.push(AggRow {
                algorithm: job0.algorithm.name().into(),
                eta: job0.eta,
                r: job0.r,
                round: values[0].round,
                n,
                mean,
                std,
            });
        }
    }
    out
}

fn render_agg(agg: &[AggRow]) -> String {
    let mut out = String::from(AGG_HEADER);
    out.push('\n');
    for row in agg {
        out.push_str(&row.algorithm);
        out.push(',');
        out.push_str(&fmt_float(row.eta));
        out.push(',');
        out.push_str(&fmt_float(row.r));
        out.push_str(&format!(",{},{}", row.round, row.n));
        for c in 0..6 {
            out.push(',');
            out.push_str(&fmt_float(row.mean[c]));
            out.push(',');
            out.push_str(&fmt_float(row.std[c]));
        }
        out.push('\n');
    }
    out
}

fn render_plot(agg: &[AggRow], selections: &[Selection], criterion: usize) -> String {
    let mut out = String::from(PLOT_HEADER);
    out.push('\n');
    for sel in selections {
        for row in agg.iter().filter(|row| {
            row.algorithm == sel.algorithm && row.eta == sel.eta && row.r == sel.r
        }) {
            out.push_str(&format!(
                "{},{},{},{}\n",
                row.algorithm,
                row.round,
                fmt_float(row.mean[criterion]),
                fmt_float(row.std[criterion])
            ));
        }
    }
    out
}

/// Per-trace certification entry of `sosp_reports.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertifyEntry {
    pub trace: String,
    pub checkpoints: usize,
    pub found: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<SospReport>,
}

/// Scans every saved trace under `out_dir/traces` for a certified candidate
/// and writes `sosp_reports.json`. Returns the entries.
pub fn certify(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    eps: f64,
    rho: f64,
    tol: f64,
) -> Result<Vec<CertifyEntry>> {
    let problem = build_problem(&cfg.problem)?;
    let tdir = out_dir.join("traces");
    let mut names: Vec<PathBuf> = fs::read_dir(&tdir)
        .map_err(|_| {
            Error::config(format!(
                "no traces under {}; run with output.save_traces = true first",
                tdir.display()
            ))
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    names.sort();

    let mut entries = Vec::with_capacity(names.len());
    for path in names {
        let text = fs::read_to_string(&path)?;
        let trace: Trace = serde_json::from_str(&text)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let report = scan_history_for_sosp(&problem, &trace, eps, rho, tol)?;
        entries.push(CertifyEntry {
            trace: path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            checkpoints: trace.checkpoints.len(),
            found: report.is_some(),
            report,
        });
    }
    let text =
        serde_json::to_string_pretty(&entries).map_err(|e| Error::Parse(e.to_string()))?;
    write_text(&out_dir.join("sosp_reports.json"), &text)?;
    Ok(entries)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

fn hex_sha256(text: &str) -> String {
    let mut h = Sha256::new();
    h.update(text.as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
