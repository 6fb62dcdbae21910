use std::fs;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::HarnessError;
use crate::adversary::ActivityRecord;
use crate::protocol::{RoundOutcome, RoundStatus};

pub const ROUNDS_CSV: &str = "rounds.csv";
pub const CENTRALIZED_CSV: &str = "centralized.csv";
pub const ADVERSARY_CSV: &str = "adversary.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const COMPARISON_CSV: &str = "comparison.csv";

/// Projection of a [`RoundOutcome`] kept in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub volunteers: usize,
    pub selected: usize,
    pub received: usize,
    pub status: RoundStatus,
    pub rmse_kmh: f64,
}

impl From<&RoundOutcome> for RoundRecord {
    fn from(o: &RoundOutcome) -> Self {
        RoundRecord {
            round: o.round,
            volunteers: o.volunteers.len(),
            selected: o.selected.len(),
            received: o.received.len(),
            status: o.status,
            rmse_kmh: o.global_rmse,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CentralizedRecord {
    epoch: usize,
    rmse_kmh: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub name: String,
    pub seed: u64,
    pub config_hash: String,
    pub eval_fingerprint: String,
    pub records: Vec<RoundRecord>,
    /// Held-out RMSE after the last executed round, km/h.
    pub final_rmse: f64,
    /// Rounds executed when the RMSE first reached the threshold.
    pub rounds_to_convergence: Option<usize>,
    pub convergence_threshold: f64,
    /// Centralized baseline RMSE after each epoch, km/h.
    pub centralized: Vec<f64>,
    pub adversary: Vec<ActivityRecord>,
    /// The attacker shuttled because coverage holds no cycle.
    pub attacker_fallback: bool,
}

impl MetricsReport {
    pub fn rmse_trace(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.rmse_kmh).collect()
    }

    /// Fraction of logged attacker rounds in which at least one of its
    /// identities was selected.
    pub fn adversary_selection_frequency(&self) -> Option<f64> {
        if self.adversary.is_empty() {
            return None;
        }
        let hit = self.adversary.iter().filter(|a| a.selected_count > 0).count();
        Some(hit as f64 / self.adversary.len() as f64)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |e| HarnessError::io(path, e)
}

fn format_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Format { path: path.to_path_buf(), message: e.to_string() }
}

fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(|e| format_err(path, e))?;
    w.write_record(header).map_err(|e| format_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| format_err(path, e))?;
    }
    w.flush().map_err(io_err(path))
}

fn read_rows<T: DeserializeOwned>(path: &Path, header: &[&str]) -> Result<Vec<T>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format_err(path, e))?;
    let got = r.headers().map_err(|e| format_err(path, e))?;
    if got.iter().ne(header.iter().copied()) {
        return Err(format_err(path, format!("expected header {}", header.join(","))));
    }
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(|e| format_err(path, e))
}

const ROUNDS_HEADER: &[&str] = &["round", "volunteers", "selected", "received", "status", "rmse_kmh"];
const CENTRALIZED_HEADER: &[&str] = &["epoch", "rmse_kmh"];
const ADVERSARY_HEADER: &[&str] = &["round", "mode", "identities_emitted", "selected_count"];

/// Creates `dir` and proves it is writable before any simulation runs.
pub fn prepare_output_dir(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"").map_err(io_err(&probe))?;
    fs::remove_file(&probe).map_err(io_err(&probe))
}

pub fn write_report(report: &MetricsReport, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_rows(&dir.join(ROUNDS_CSV), ROUNDS_HEADER, &report.records)?;
    let central: Vec<CentralizedRecord> = report
        .centralized
        .iter()
        .enumerate()
        .map(|(i, &rmse_kmh)| CentralizedRecord { epoch: i + 1, rmse_kmh })
        .collect();
    write_rows(&dir.join(CENTRALIZED_CSV), CENTRALIZED_HEADER, &central)?;
    write_rows(&dir.join(ADVERSARY_CSV), ADVERSARY_HEADER, &report.adversary)?;
    let summary: Vec<(&str, String)> = vec![
        ("name", report.name.clone()),
        ("seed", report.seed.to_string()),
        ("config_hash", report.config_hash.clone()),
        ("eval_fingerprint", report.eval_fingerprint.clone()),
        ("final_rmse_kmh", report.final_rmse.to_string()),
        (
            "rounds_to_convergence",
            report.rounds_to_convergence.map(|r| r.to_string()).unwrap_or_default(),
        ),
        ("convergence_threshold_kmh", report.convergence_threshold.to_string()),
        ("attacker_fallback", report.attacker_fallback.to_string()),
    ];
    write_rows(&dir.join(SUMMARY_CSV), &["key", "value"], &summary)
}

pub fn read_report(dir: &Path) -> Result<MetricsReport, HarnessError> {
    let summary_path = dir.join(SUMMARY_CSV);
    let summary: Vec<(String, String)> = read_rows(&summary_path, &["key", "value"])?;
    let get = |key: &str| -> Result<&str, HarnessError> {
        summary
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| format_err(&summary_path, format!("missing key {key}")))
    };
    let parse_f64 = |key: &str| -> Result<f64, HarnessError> {
        get(key)?.parse().map_err(|e| format_err(&summary_path, format!("{key}: {e}")))
    };
    let rounds_to_convergence = match get("rounds_to_convergence")? {
        "" => None,
        s => Some(s.parse().map_err(|e| format_err(&summary_path, format!("rounds_to_convergence: {e}")))?),
    };
    let central: Vec<CentralizedRecord> = read_rows(&dir.join(CENTRALIZED_CSV), CENTRALIZED_HEADER)?;
    Ok(MetricsReport {
        name: get("name")?.to_string(),
        seed: get("seed")?.parse().map_err(|e| format_err(&summary_path, format!("seed: {e}")))?,
        config_hash: get("config_hash")?.to_string(),
        eval_fingerprint: get("eval_fingerprint")?.to_string(),
        records: read_rows(&dir.join(ROUNDS_CSV), ROUNDS_HEADER)?,
        final_rmse: parse_f64("final_rmse_kmh")?,
        rounds_to_convergence,
        convergence_threshold: parse_f64("convergence_threshold_kmh")?,
        centralized: central.into_iter().map(|c| c.rmse_kmh).collect(),
        adversary: read_rows(&dir.join(ADVERSARY_CSV), ADVERSARY_HEADER)?,
        attacker_fallback: get("attacker_fallback")?
            .parse()
            .map_err(|e| format_err(&summary_path, format!("attacker_fallback: {e}")))?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub seed: u64,
    pub final_rmse_kmh: f64,
    /// Against the first report.
    pub delta_rmse_kmh: f64,
    pub rounds_to_convergence: Option<usize>,
    pub delta_rounds: Option<i64>,
}

/// Final RMSE and convergence deltas of each report against the first.
/// Reports scored on different evaluation sets are not comparable.
pub fn compare(reports: &[MetricsReport]) -> Result<Vec<ComparisonRow>, HarnessError> {
    let Some(first) = reports.first() else {
        return Err(HarnessError::Mismatch("nothing to compare".into()));
    };
    if reports.len() < 2 {
        return Err(HarnessError::Mismatch("compare needs at least two reports".into()));
    }
    for r in &reports[1..] {
        if r.eval_fingerprint != first.eval_fingerprint {
            return Err(HarnessError::Mismatch(format!(
                "{} (seed {}) and {} (seed {}) were scored on different evaluation sets",
                first.name, first.seed, r.name, r.seed
            )));
        }
    }
    Ok(reports
        .iter()
        .map(|r| ComparisonRow {
            name: r.name.clone(),
            seed: r.seed,
            final_rmse_kmh: r.final_rmse,
            delta_rmse_kmh: r.final_rmse - first.final_rmse,
            rounds_to_convergence: r.rounds_to_convergence,
            delta_rounds: r
                .rounds_to_convergence
                .zip(first.rounds_to_convergence)
                .map(|(a, b)| a as i64 - b as i64),
        })
        .collect())
}

pub fn write_comparison(rows: &[ComparisonRow], path: &Path) -> Result<(), HarnessError> {
    write_rows(
        path,
        &["name", "seed", "final_rmse_kmh", "delta_rmse_kmh", "rounds_to_convergence", "delta_rounds"],
        rows,
    )
}

/// One-sided sign-test p-value for `wins` successes out of `n` fair trials.
pub fn sign_test_p(wins: usize, n: usize) -> f64 {
    let mut total = 0.0;
    let mut c = 1.0f64;
    for k in 0..=n {
        if k > 0 {
            c = c * (n - k + 1) as f64 / k as f64;
        }
        if k >= wins {
            total += c;
        }
    }
    total / 2f64.powi(n as i32)
}

/// Seed-aggregated comparison of one scenario against the first group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub name: String,
    pub seeds: usize,
    pub mean_final_rmse_kmh: f64,
    pub mean_delta_rmse_kmh: f64,
    /// Seeds on which this scenario ended above the reference.
    pub wins: usize,
    pub sign_test_p: f64,
    /// Mean fraction of attacker rounds with an attacker identity selected.
    pub adversary_selection: Option<f64>,
}

/// `groups[i][j]` is scenario `i` on seed `j`; every scenario must cover the
/// same seeds in the same order.
pub fn compare_sweep(groups: &[Vec<MetricsReport>]) -> Result<Vec<SweepRow>, HarnessError> {
    let Some(reference) = groups.first() else {
        return Err(HarnessError::Mismatch("nothing to compare".into()));
    };
    let n = reference.len();
    if n == 0 || groups.iter().any(|g| g.len() != n) {
        return Err(HarnessError::Mismatch("every scenario needs the same nonempty seed list".into()));
    }
    for j in 0..n {
        let column: Vec<MetricsReport> = groups.iter().map(|g| g[j].clone()).collect();
        if groups.len() > 1 {
            compare(&column)?;
        }
        if column.iter().any(|r| r.seed != reference[j].seed) {
            return Err(HarnessError::Mismatch(format!("seed lists differ at position {j}")));
        }
    }
    Ok(groups
        .iter()
        .map(|g| {
            let deltas: Vec<f64> =
                g.iter().zip(reference).map(|(r, b)| r.final_rmse - b.final_rmse).collect();
            let wins = deltas.iter().filter(|&&d| d > 0.0).count();
            let freqs: Vec<f64> = g.iter().filter_map(|r| r.adversary_selection_frequency()).collect();
            SweepRow {
                name: g[0].name.clone(),
                seeds: n,
                mean_final_rmse_kmh: g.iter().map(|r| r.final_rmse).sum::<f64>() / n as f64,
                mean_delta_rmse_kmh: deltas.iter().sum::<f64>() / n as f64,
                wins,
                sign_test_p: sign_test_p(wins, n),
                adversary_selection: (!freqs.is_empty())
                    .then(|| freqs.iter().sum::<f64>() / freqs.len() as f64),
            }
        })
        .collect())
}

pub fn write_sweep(rows: &[SweepRow], path: &Path) -> Result<(), HarnessError> {
    write_rows(
        path,
        &[
            "name",
            "seeds",
            "mean_final_rmse_kmh",
            "mean_delta_rmse_kmh",
            "wins",
            "sign_test_p",
            "adversary_selection",
        ],
        rows,
    )
}
