use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use super::plot::{plot_rmse, Series};
use super::report::{compare_sweep, write_report, write_sweep, MetricsReport, SweepRow};
use super::run::run_grid;
use super::{HarnessError, Scenario};

pub const REFERENCE_NET: &str = include_str!("../../../../configs/reference.net");

/// Reference scenarios shipped with the binary.
pub const BUNDLED: &[(&str, &str)] = &[
    ("baseline-low", include_str!("../../../../configs/baseline-low.toml")),
    ("baseline-high", include_str!("../../../../configs/baseline-high.toml")),
    ("single-low", include_str!("../../../../configs/single-low.toml")),
    ("single-high", include_str!("../../../../configs/single-high.toml")),
    ("sybil-low", include_str!("../../../../configs/sybil-low.toml")),
    ("sybil-high", include_str!("../../../../configs/sybil-high.toml")),
];

pub fn bundled_scenario(name: &str) -> Result<Scenario, HarnessError> {
    let (_, text) = BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| HarnessError::Config(format!("no bundled scenario named {name}")))?;
    Scenario::parse(text, |_| Ok(REFERENCE_NET.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    /// Federated against centralized training, no attack.
    Fig2,
    /// Baseline, single attacker and Sybil attacker at one density.
    Fig3,
    /// Single attacker at low and high density.
    Fig4,
    /// Sybil attacker at low and high density.
    Fig5,
}

impl FromStr for Figure {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fig2" => Ok(Figure::Fig2),
            "fig3" => Ok(Figure::Fig3),
            "fig4" => Ok(Figure::Fig4),
            "fig5" => Ok(Figure::Fig5),
            _ => Err(HarnessError::Config(format!("unknown figure {s:?}; expected fig2..fig5"))),
        }
    }
}

impl fmt::Display for Figure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Figure::Fig2 => "fig2",
            Figure::Fig3 => "fig3",
            Figure::Fig4 => "fig4",
            Figure::Fig5 => "fig5",
        })
    }
}

impl Figure {
    /// Comparison groups; the first scenario of each group is its reference.
    pub fn groups(self) -> Vec<Vec<&'static str>> {
        match self {
            Figure::Fig2 => vec![vec!["baseline-low"]],
            Figure::Fig3 => vec![vec!["baseline-low", "single-low", "sybil-low"]],
            Figure::Fig4 => {
                vec![vec!["baseline-low", "single-low"], vec!["baseline-high", "single-high"]]
            }
            Figure::Fig5 => {
                vec![vec!["baseline-low", "sybil-low"], vec!["baseline-high", "sybil-high"]]
            }
        }
    }
}

/// Per-round mean over seeds, over however many runs reached each round.
pub fn mean_trace(traces: &[Vec<f64>]) -> Vec<f64> {
    let len = traces.iter().map(Vec::len).max().unwrap_or(0);
    (0..len)
        .map(|i| {
            let vals: Vec<f64> = traces.iter().filter_map(|t| t.get(i).copied()).collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct CentralizedRow {
    seed: u64,
    federated_final_rmse_kmh: f64,
    centralized_final_rmse_kmh: f64,
    ratio: f64,
}

/// Runs a figure's scenarios over `seeds`, writing every run, the seed-level
/// summary table and an SVG of seed-mean RMSE curves under `out`.
pub fn reproduce(fig: Figure, seeds: &[u64], out: &Path) -> Result<Vec<SweepRow>, HarnessError> {
    super::report::prepare_output_dir(out)?;
    let groups = fig.groups();
    let mut summary = Vec::new();
    let mut series = Vec::new();
    for names in &groups {
        let scenarios = names.iter().map(|n| bundled_scenario(n)).collect::<Result<Vec<_>, _>>()?;
        let reports = run_grid(&scenarios, seeds)?;
        for runs in &reports {
            for r in runs {
                write_report(r, &out.join(&r.name).join(format!("seed-{}", r.seed)))?;
            }
            let traces: Vec<Vec<f64>> = runs.iter().map(MetricsReport::rmse_trace).collect();
            series.push(Series::from_trace(runs[0].name.clone(), &mean_trace(&traces)));
        }
        if fig == Figure::Fig2 {
            let runs = &reports[0];
            let central: Vec<Vec<f64>> = runs.iter().map(|r| r.centralized.clone()).collect();
            series.push(Series::from_trace("centralized", &mean_trace(&central)));
            let rows: Vec<CentralizedRow> = runs
                .iter()
                .map(|r| {
                    let c = r.centralized.last().copied().unwrap_or(f64::NAN);
                    CentralizedRow {
                        seed: r.seed,
                        federated_final_rmse_kmh: r.final_rmse,
                        centralized_final_rmse_kmh: c,
                        ratio: r.final_rmse / c,
                    }
                })
                .collect();
            let path = out.join("centralized.csv");
            let mut w = csv::Writer::from_path(&path).map_err(|e| HarnessError::Format {
                path: path.clone(),
                message: e.to_string(),
            })?;
            for row in rows {
                w.serialize(row).map_err(|e| HarnessError::Format {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
            }
            w.flush().map_err(|e| HarnessError::io(&path, e))?;
        }
        summary.extend(compare_sweep(&reports)?);
    }
    write_sweep(&summary, &out.join("summary.csv"))?;
    plot_rmse(&out.join(format!("{fig}.svg")), &format!("{fig}: held-out RMSE, mean over seeds"), &series)?;
    fs::write(
        out.join("seeds.txt"),
        seeds.iter().map(u64::to_string).collect::<Vec<_>>().join("\n") + "\n",
    )
    .map_err(|e| HarnessError::io(out, e))?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_bundled_scenario_parses() {
        for (name, _) in BUNDLED {
            let s = bundled_scenario(name).unwrap();
            assert_eq!(s.name(), *name);
        }
        assert!(bundled_scenario("nope").is_err());
    }

    #[test]
    fn figure_names_round_trip() {
        for f in [Figure::Fig2, Figure::Fig3, Figure::Fig4, Figure::Fig5] {
            assert_eq!(f.to_string().parse::<Figure>().unwrap(), f);
        }
        assert!("fig9".parse::<Figure>().is_err());
    }

    #[test]
    fn mean_trace_handles_ragged_runs() {
        assert_eq!(mean_trace(&[vec![1.0, 3.0], vec![3.0]]), vec![2.0, 3.0]);
    }
}
