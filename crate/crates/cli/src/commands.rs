use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use fedoui_core::beta::BetaParams;
use fedoui_core::config::{ExperimentConfig, Method};
use fedoui_core::harness::{run_experiment, ExperimentLog, FitRecord};
use toml::Value;

use crate::config_io::load_config;
use crate::error::CliError;
use crate::manifest::{read_log, run_is_complete, unix_now, write_run, LOG_JSON};

/// Resolves the config, runs it and writes the artifacts into `out`.
pub fn cmd_run(config_path: &Path, overrides: &[(String, Value)], out: &Path) -> Result<ExperimentLog, CliError> {
    let config = load_config(config_path, overrides)?;
    run_into(&config, Some(config_path), out)
}

pub fn run_into(config: &ExperimentConfig, config_path: Option<&Path>, out: &Path) -> Result<ExperimentLog, CliError> {
    let started = unix_now();
    let log = run_experiment(config)?;
    write_run(out, &log, config_path, started)?;
    Ok(log)
}

pub fn cell_dir(root: &Path, method: Method, seed: u64) -> PathBuf {
    root.join(format!("{}-seed{seed}", method.name()))
}

#[derive(Debug, Default)]
pub struct SweepOutcome {
    pub completed: Vec<PathBuf>,
    pub skipped: Vec<PathBuf>,
    pub failed: Vec<(PathBuf, CliError)>,
}

impl SweepOutcome {
    pub fn exit_code(&self) -> i32 {
        self.failed.first().map_or(0, |(_, e)| e.exit_code())
    }
}

/// Runs every method × seed cell into its own subdirectory. Failed cells do
/// not stop the sweep. With `resume`, cells whose artifacts match their
/// manifest checksums are left untouched.
pub fn cmd_sweep(
    config_path: &Path,
    overrides: &[(String, Value)],
    methods: &[Method],
    seeds: &[u64],
    out: &Path,
    resume: bool,
) -> Result<SweepOutcome, CliError> {
    let base = load_config(config_path, overrides)?;
    let mut outcome = SweepOutcome::default();
    for &method in methods {
        for &seed in seeds {
            let dir = cell_dir(out, method, seed);
            if resume && run_is_complete(&dir) {
                eprintln!("skip {} (complete)", dir.display());
                outcome.skipped.push(dir);
                continue;
            }
            let config = ExperimentConfig {
                method,
                seed,
                ..base.clone()
            };
            eprintln!("run  {}", dir.display());
            match run_into(&config, Some(config_path), &dir) {
                Ok(log) => {
                    if let Some(s) = log.summary {
                        eprintln!(
                            "     final {:.4}  best {:.4}  auc {:.4}",
                            s.final_accuracy, s.best_accuracy, s.auc
                        );
                    }
                    outcome.completed.push(dir);
                }
                Err(e) => {
                    eprintln!("fail {}: {e}", dir.display());
                    outcome.failed.push((dir, e));
                }
            }
        }
    }
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; absent for a single run.
    pub std: Option<f64>,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> MeanStd {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.len() >= 2).then(|| {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        });
        MeanStd { mean, std }
    }

    fn text(&self) -> String {
        match self.std {
            Some(s) => format!("{:.4} ± {:.4}", self.mean, s),
            None => format!("{:.4}", self.mean),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub runs: usize,
    pub final_accuracy: MeanStd,
    pub best_accuracy: MeanStd,
    pub auc: MeanStd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn row(&self, method: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,runs,final_mean,final_std,best_mean,best_std,auc_mean,auc_std\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{:.6},{},{:.6},{},{:.6},{}",
                r.method,
                r.runs,
                r.final_accuracy.mean,
                opt(r.final_accuracy.std),
                r.best_accuracy.mean,
                opt(r.best_accuracy.std),
                r.auc.mean,
                opt(r.auc.std),
            )
            .expect("writing to a String");
        }
        out
    }

    pub fn to_text(&self) -> String {
        let header = ["Method", "Runs", "Final accuracy", "Best accuracy", "Accuracy AUC"];
        let cells: Vec<[String; 5]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.method.clone(),
                    r.runs.to_string(),
                    r.final_accuracy.text(),
                    r.best_accuracy.text(),
                    r.auc.text(),
                ]
            })
            .collect();
        let mut widths = header.map(|h| h.chars().count());
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |row: &[String]| {
            row.iter()
                .zip(widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = line(&header.map(String::from));
        out.push('\n');
        for row in &cells {
            out.push_str(&line(row));
            out.push('\n');
        }
        out
    }
}

fn find_logs(dir: &Path, found: &mut Vec<PathBuf>) {
    let Ok(entries) = fs::read_dir(dir) else {
        return;
    };
    let mut entries: Vec<PathBuf> = entries.flatten().map(|e| e.path()).collect();
    entries.sort();
    for path in entries {
        if path.is_dir() {
            find_logs(&path, found);
        } else if path.file_name().is_some_and(|n| n == LOG_JSON) {
            found.push(path);
        }
    }
}

/// Mean ± std over seeds per method, recomputed from every `log.json` under
/// `dir`.
pub fn summarize_dir(dir: &Path) -> Result<SummaryTable, CliError> {
    let mut paths = Vec::new();
    find_logs(dir, &mut paths);
    let mut groups: BTreeMap<Method, Vec<[f64; 3]>> = BTreeMap::new();
    for path in &paths {
        let log = match read_log(path) {
            Ok(l) => l,
            Err(e) => {
                eprintln!("ignoring {}: {e:#}", path.display());
                continue;
            }
        };
        if let Some(s) = log.recompute_summary() {
            groups
                .entry(log.config.method)
                .or_default()
                .push([s.final_accuracy, s.best_accuracy, s.auc]);
        }
    }
    if groups.is_empty() {
        return Err(CliError::Report(format!(
            "no valid {LOG_JSON} found under {}",
            dir.display()
        )));
    }
    let rows = groups
        .into_iter()
        .map(|(method, runs)| {
            let col = |i: usize| MeanStd::of(&runs.iter().map(|r| r[i]).collect::<Vec<_>>());
            SummaryRow {
                method: method.name().to_string(),
                runs: runs.len(),
                final_accuracy: col(0),
                best_accuracy: col(1),
                auc: col(2),
            }
        })
        .collect();
    Ok(SummaryTable { rows })
}

/// Prints the summary table and writes `summary.csv` / `summary.txt`.
pub fn cmd_report(dir: &Path) -> Result<SummaryTable, CliError> {
    let table = summarize_dir(dir)?;
    let text = table.to_text();
    print!("{text}");
    fs::write(dir.join("summary.csv"), table.to_csv()).context("writing summary.csv")?;
    fs::write(dir.join("summary.txt"), text).context("writing summary.txt")?;
    Ok(table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientLine {
    pub client_id: usize,
    pub n_samples: usize,
    pub oui: f64,
    /// Fitted CDF at the client's OUI, when a fit was used.
    pub cdf: Option<f64>,
    pub score: Option<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundInspection {
    pub method: Method,
    pub round: usize,
    pub fit: FitRecord,
    pub median: Option<f64>,
    pub clients: Vec<ClientLine>,
    /// For a fitted round: whether, within every group of clients sharing a
    /// sample count, the highest-weighted client is the one whose OUI sits
    /// nearest the fitted median (in CDF distance from one half).
    pub center_check: Option<bool>,
}

impl RoundInspection {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("client_id,n_samples,oui,cdf,score,weight\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for c in &self.clients {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                c.client_id,
                c.n_samples,
                c.oui,
                opt(c.cdf),
                opt(c.score),
                c.weight
            )
            .expect("writing to a String");
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("method {}  round {}\n", self.method, self.round);
        match (self.fit, self.method) {
            (FitRecord::Fitted { alpha, beta }, _) => {
                writeln!(
                    out,
                    "beta fit: alpha = {alpha:.4}  beta = {beta:.4}  median = {:.4}",
                    self.median.unwrap_or(f64::NAN)
                )
                .ok();
            }
            (FitRecord::Degenerate, _) => out.push_str("beta fit: degenerate (all scores 1)\n"),
            (FitRecord::Unused, m) => {
                writeln!(out, "beta fit: unused by {m} (OUI logged for diagnostics)").ok();
            }
        }
        out.push_str("client  n_k    oui       cdf       score     weight\n");
        let opt = |v: Option<f64>| v.map_or("unused".to_string(), |x| format!("{x:.6}"));
        for c in &self.clients {
            writeln!(
                out,
                "{:<7} {:<6} {:<9.6} {:<9} {:<9} {:.6}",
                c.client_id,
                c.n_samples,
                c.oui,
                opt(c.cdf),
                opt(c.score),
                c.weight
            )
            .ok();
        }
        if let Some(ok) = self.center_check {
            writeln!(
                out,
                "max-weight client nearest fitted median (per equal-n group): {}",
                if ok { "yes" } else { "NO" }
            )
            .ok();
        }
        out
    }
}

/// Recomputes the round's CDF values and checks the centering property.
pub fn inspect_round(log: &ExperimentLog, round: usize) -> Result<RoundInspection, CliError> {
    let record = log
        .records
        .iter()
        .find(|r| r.round == round)
        .ok_or_else(|| {
            CliError::Inspect(format!(
                "round {round} not in log (rounds 1..={})",
                log.records.len()
            ))
        })?;
    let params = match record.fit {
        FitRecord::Fitted { alpha, beta } => Some(
            BetaParams::new(alpha, beta).map_err(|e| CliError::Inspect(format!("round {round}: {e}")))?,
        ),
        _ => None,
    };
    let cdfs: Vec<Option<f64>> = record
        .oui_values
        .iter()
        .map(|&o| params.map(|p| p.cdf(o)).transpose())
        .collect::<fedoui_core::Result<_>>()
        .map_err(|e| CliError::Inspect(e.to_string()))?;
    let median = params
        .map(|p| p.median())
        .transpose()
        .map_err(|e| CliError::Inspect(e.to_string()))?;
    let clients: Vec<ClientLine> = (0..record.selected.len())
        .map(|i| ClientLine {
            client_id: record.selected[i],
            n_samples: record.sample_counts.get(i).copied().unwrap_or(0),
            oui: record.oui_values[i],
            cdf: cdfs[i],
            score: record.scores.get(i).copied(),
            weight: record.weights[i],
        })
        .collect();

    let center_check = params.map(|_| {
        let mut groups: BTreeMap<usize, Vec<&ClientLine>> = BTreeMap::new();
        for c in &clients {
            groups.entry(c.n_samples).or_default().push(c);
        }
        groups.values().all(|group| {
            let distance = |c: &ClientLine| (c.cdf.expect("fitted") - 0.5).abs();
            let nearest = group.iter().map(|c| distance(c)).fold(f64::INFINITY, f64::min);
            let top = group.iter().map(|c| c.weight).fold(f64::NEG_INFINITY, f64::max);
            // every top-weight client must be (one of) the nearest
            group
                .iter()
                .filter(|c| c.weight == top)
                .all(|c| distance(c) <= nearest + 1e-12)
        })
    });
    Ok(RoundInspection {
        method: log.config.method,
        round,
        fit: record.fit,
        median,
        clients,
        center_check,
    })
}

pub fn cmd_inspect_round(log_path: &Path, round: usize, csv_out: Option<&Path>) -> Result<RoundInspection, CliError> {
    let log = read_log(log_path).map_err(|e| CliError::Inspect(format!("{e:#}")))?;
    let inspection = inspect_round(&log, round)?;
    print!("{}", inspection.to_text());
    let csv_path = match csv_out {
        Some(p) => p.to_path_buf(),
        None => log_path
            .parent()
            .unwrap_or(Path::new("."))
            .join(format!("round-{round}.csv")),
    };
    fs::write(&csv_path, inspection.to_csv())
        .with_context(|| format!("writing {}", csv_path.display()))?;
    Ok(inspection)
}
