//! Batch execution of expanded scenario grids with a worker pool.
//!
//! Expansion order is lexicographic over the sweep axes, results are
//! collected by scenario index, and every row's artifacts depend only on
//! its own scenario, so output is identical for any worker count.

use crate::relays::ElementState;
use crate::scenario::config::{ConfigError, Scenario, SweepSpec};
use crate::scenario::runner::{run_scenario, RunStatus, ScenarioResult};
use rayon::prelude::*;
use std::fmt::Write as _;

/// One sweep row: the scenario and either its result or the error text.
#[derive(Debug)]
pub struct SweepRow {
    pub index: usize,
    pub label: String,
    pub scenario: Scenario,
    pub outcome: Result<ScenarioResult, String>,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
}

impl SweepOutcome {
    pub fn completed(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| matches!(&r.outcome, Ok(res) if res.status == RunStatus::Completed))
            .count()
    }
}

/// Expands and runs a sweep. `jobs` caps the worker count; `None` uses the
/// global pool. Individual scenario failures are recorded in their rows and
/// do not stop the sweep.
pub fn run_sweep(spec: &SweepSpec, jobs: Option<usize>) -> Result<SweepOutcome, ConfigError> {
    let scenarios = spec.expand();
    let run_all = |list: &[Scenario]| -> Vec<SweepRow> {
        list.par_iter()
            .enumerate()
            .map(|(index, sc)| SweepRow {
                index,
                label: sc.label(),
                scenario: sc.clone(),
                outcome: run_scenario(sc).map_err(|e| e.to_string()),
            })
            .collect()
    };
    let rows = match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| ConfigError::Invalid(format!("worker pool: {e}")))?
            .install(|| run_all(&scenarios)),
        None => run_all(&scenarios),
    };
    Ok(SweepOutcome { rows })
}

fn csv_opt(x: Option<f64>) -> String {
    match x {
        Some(v) if v.is_finite() => {
            if v == 0.0 {
                "0".to_string()
            } else {
                format!("{v}")
            }
        }
        _ => String::new(),
    }
}

/// Aggregate table, one row per scenario: identity columns, status, then
/// per-loop transient minimum and steady-state |Z| (as a percentage of the
/// full-line |Z1|), per-element excursion counts, and trip flags.
pub fn sweep_csv(outcome: &SweepOutcome) -> String {
    let mut out = String::with_capacity(outcome.rows.len() * 256 + 512);
    out.push_str("index,label,ftype,location,rf_ohms,infeed1,infeed2,priority,status");
    let loop_names = ["ag", "bg", "cg", "ab", "bc", "ca"];
    let diff_names = ["87al", "87bl", "87cl", "87gl", "87ql"];
    for n in loop_names {
        let _ = write!(out, ",minz_{n},steady_pct_{n}");
    }
    for n in diff_names {
        let _ = write!(out, ",exc_{n}");
    }
    for n in loop_names {
        let _ = write!(out, ",trip_z1_{n}");
    }
    for n in diff_names {
        let _ = write!(out, ",trip_{n}");
    }
    out.push('\n');

    for row in &outcome.rows {
        let sc = &row.scenario;
        let (ftype, loc, rf) = match &sc.fault {
            Some(f) => (
                f.ftype.label().to_string(),
                csv_opt(Some(f.location)),
                csv_opt(Some(f.rf_ohms)),
            ),
            None => ("none".to_string(), String::new(), String::new()),
        };
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{:?}",
            row.index,
            row.label,
            ftype,
            loc,
            rf,
            sc.infeed_terminal1.label(),
            sc.infeed_terminal2.label(),
            sc.priority
        );
        match &row.outcome {
            Ok(res) => {
                let _ = write!(out, ",{}", res.status.label());
                let zl = res.z1l_pu.norm();
                for lp in &res.summary.loops {
                    let pct = lp.steady_z_mag.map(|m| 100.0 * m / zl);
                    let _ = write!(out, ",{},{}", csv_opt(lp.min_z_mag_2cyc), csv_opt(pct));
                }
                for d in &res.summary.diffs {
                    let _ = write!(out, ",{}", d.excursions_3cyc);
                }
                for lp in &res.summary.loops {
                    let _ = write!(out, ",{}", lp.tripped);
                }
                for d in &res.summary.diffs {
                    let _ = write!(out, ",{}", d.tripped);
                }
            }
            Err(e) => {
                let _ = write!(out, ",error:{}", e.replace([',', '\n'], " "));
                for _ in 0..(6 * 2 + 5 + 6 + 5) {
                    out.push(',');
                }
            }
        }
        out.push('\n');
    }
    out
}

/// Markdown digest of a sweep: per-scenario status and the protection
/// outcomes that matter for screening (trips and steady dispositions).
pub fn sweep_report_md(outcome: &SweepOutcome) -> String {
    let mut out = String::with_capacity(outcome.rows.len() * 160 + 512);
    let _ = writeln!(out, "# Sweep report\n");
    let _ = writeln!(
        out,
        "{} scenarios, {} completed.\n",
        outcome.rows.len(),
        outcome.completed()
    );
    let _ = writeln!(
        out,
        "| # | scenario | status | distance trips | diff trips | steady non-restrain |"
    );
    let _ = writeln!(out, "|---|---|---|---|---|---|");
    for row in &outcome.rows {
        match &row.outcome {
            Ok(res) => {
                let d_trips: Vec<&str> = res
                    .summary
                    .loops
                    .iter()
                    .filter(|l| l.tripped)
                    .map(|l| l.lp.label())
                    .collect();
                let a_trips: Vec<&str> = res
                    .summary
                    .diffs
                    .iter()
                    .filter(|d| d.tripped)
                    .map(|d| d.element.label())
                    .collect();
                let loose: Vec<&str> = res
                    .summary
                    .diffs
                    .iter()
                    .filter(|d| {
                        d.steady_state
                            .map(|s| s != ElementState::Restrain && s != ElementState::Idle)
                            .unwrap_or(false)
                    })
                    .map(|d| d.element.label())
                    .collect();
                let join = |v: Vec<&str>| if v.is_empty() { "-".to_string() } else { v.join(" ") };
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} | {} | {} |",
                    row.index,
                    row.label,
                    res.status.label(),
                    join(d_trips),
                    join(a_trips),
                    join(loose),
                );
            }
            Err(e) => {
                let _ = writeln!(out, "| {} | {} | error | - | - | {} |", row.index, row.label, e);
            }
        }
    }
    let _ = writeln!(out);
    out
}
