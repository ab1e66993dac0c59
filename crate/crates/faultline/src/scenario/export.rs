//! Result serialization: waveform and phasor-trajectory CSV, per-element
//! verdict summaries as JSON lines, and a markdown run report.
//!
//! Output is byte-stable: identical results serialize to identical bytes.
//! Floats print through Rust's shortest round-trip formatting, strings are
//! fixed labels, and iteration orders are the declared element orders.

use crate::relays::AlphaPoint;
use crate::scenario::config::ConfigError;
use crate::scenario::runner::{RunStatus, ScenarioResult, WAVEFORM_HEADERS};
use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

/// Which artifacts to write.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExportSelection {
    pub waveforms: bool,
    pub trajectories: bool,
    pub verdicts: bool,
    pub report: bool,
}

impl ExportSelection {
    pub fn all() -> Self {
        Self { waveforms: true, trajectories: true, verdicts: true, report: true }
    }

    /// Parses a comma-separated format list, e.g. `waveforms,verdicts`.
    pub fn parse(spec: &str) -> Result<Self, ConfigError> {
        let mut sel =
            Self { waveforms: false, trajectories: false, verdicts: false, report: false };
        for tok in spec.split(',') {
            match tok.trim() {
                "waveforms" => sel.waveforms = true,
                "trajectories" => sel.trajectories = true,
                "verdicts" => sel.verdicts = true,
                "report" => sel.report = true,
                "all" => sel = Self::all(),
                other => {
                    return Err(ConfigError::Invalid(format!(
                        "unknown export format `{other}` (expected waveforms, trajectories, verdicts, report, or all)"
                    )))
                }
            }
        }
        Ok(sel)
    }
}

/// Writes the selected artifacts into `dir` (created if missing) and
/// returns the paths written.
pub fn export_result(
    result: &ScenarioResult,
    dir: &Path,
    sel: ExportSelection,
) -> io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut emit = |name: &str, body: String| -> io::Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, body)?;
        written.push(path);
        Ok(())
    };
    if sel.waveforms {
        emit("waveforms.csv", waveform_csv(result))?;
    }
    if sel.trajectories {
        emit("trajectories.csv", trajectory_csv(result))?;
    }
    if sel.verdicts {
        emit("verdicts.jsonl", verdicts_jsonl(result))?;
    }
    if sel.report {
        emit("report.md", report_md(result))?;
    }
    Ok(written)
}

/// Shortest round-trip float with `-0` normalized to `0`.
fn fmt_f(x: f64) -> String {
    if x == 0.0 {
        "0".to_string()
    } else {
        format!("{x}")
    }
}

/// JSON number, or null when non-finite or absent.
fn json_num(x: Option<f64>) -> String {
    match x {
        Some(v) if v.is_finite() => fmt_f(v),
        _ => "null".to_string(),
    }
}

fn json_str(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Terminal voltages and line currents in SI units, one row per solver step.
pub fn waveform_csv(result: &ScenarioResult) -> String {
    let mut out = String::with_capacity(result.waveforms.len() * 200 + 128);
    out.push('t');
    for h in WAVEFORM_HEADERS {
        out.push(',');
        out.push_str(h);
    }
    out.push('\n');
    for rec in &result.waveforms {
        out.push_str(&fmt_f(rec.t));
        for v in rec.ch {
            out.push(',');
            out.push_str(&fmt_f(v));
        }
        out.push('\n');
    }
    out
}

/// Complex-plane trajectories of every protection element on the relay
/// clock: loop impedances (relay pu) and alpha-plane ratios. `re`/`im` are
/// blank when the element has no defined operand at that instant.
pub fn trajectory_csv(result: &ScenarioResult) -> String {
    let mut out = String::with_capacity(result.relay_samples.len() * 11 * 48 + 64);
    out.push_str("t,element,re,im,region,settled\n");
    for s in &result.relay_samples {
        let t = fmt_f(s.t);
        let settled = if s.settled { "true" } else { "false" };
        for d in &s.distance {
            let (re, im) = match d.z {
                Some(z) => (fmt_f(z.re), fmt_f(z.im)),
                None => (String::new(), String::new()),
            };
            let _ = writeln!(
                out,
                "{t},{},{re},{im},{},{settled}",
                d.lp.label(),
                d.state.label()
            );
        }
        for d in &s.differential {
            let (re, im) = match d.alpha {
                AlphaPoint::Point(a) => (fmt_f(a.re), fmt_f(a.im)),
                AlphaPoint::Idle => (String::new(), String::new()),
            };
            let _ = writeln!(
                out,
                "{t},{},{re},{im},{},{settled}",
                d.element.label(),
                d.state.label()
            );
        }
    }
    out
}

/// One JSON object per line: a run-level record followed by one record per
/// protection element, fields in fixed order.
pub fn verdicts_jsonl(result: &ScenarioResult) -> String {
    let mut out = String::with_capacity(2048);
    let sc = &result.scenario;
    let sm = &result.summary;

    let (status, detail) = match &result.status {
        RunStatus::Completed => ("completed".to_string(), "null".to_string()),
        RunStatus::Unstable { t, detail } => (
            "unstable".to_string(),
            json_str(&format!("t={}: {detail}", fmt_f(*t))),
        ),
        RunStatus::SolverAbort { t, detail } => (
            "solver-abort".to_string(),
            json_str(&format!("t={}: {detail}", fmt_f(*t))),
        ),
        RunStatus::SettleFailed { v1_pu, v2_pu } => (
            "settle-failed".to_string(),
            json_str(&format!(
                "pre-fault |V1|={} |V2|={} pu",
                fmt_f(*v1_pu),
                fmt_f(*v2_pu)
            )),
        ),
    };
    let fault = match &sc.fault {
        Some(f) => format!(
            "{{\"type\":{},\"rf_ohms\":{},\"location\":{},\"t_on\":{},\"t_off\":{}}}",
            json_str(f.ftype.label()),
            fmt_f(f.rf_ohms),
            fmt_f(f.location),
            fmt_f(f.t_on),
            json_num(f.t_off)
        ),
        None => "null".to_string(),
    };
    let _ = writeln!(
        out,
        "{{\"record\":\"run\",\"label\":{},\"status\":{},\"detail\":{},\"fault\":{},\"settle_v1_pu\":{},\"settle_v2_pu\":{},\"settle_ok\":{},\"omega_min\":{},\"omega_max\":{},\"limiter_engaged\":{},\"clamp_events\":{},\"z1l_pu_mag\":{}}}",
        json_str(&sc.label()),
        json_str(&status),
        detail,
        fault,
        json_num(Some(sm.settle_v1_pu)),
        json_num(Some(sm.settle_v2_pu)),
        sm.settle_ok,
        json_num(Some(sm.omega_min)),
        json_num(Some(sm.omega_max)),
        sm.limiter_engaged_any,
        sm.clamp_events,
        fmt_f(result.z1l_pu.norm()),
    );

    for lp in &sm.loops {
        let _ = writeln!(
            out,
            "{{\"record\":\"distance\",\"element\":{},\"min_z_mag_2cyc\":{},\"steady_z_mag\":{},\"steady_z_re\":{},\"steady_z_im\":{},\"tripped\":{},\"first_operate_t\":{}}}",
            json_str(lp.lp.label()),
            json_num(lp.min_z_mag_2cyc),
            json_num(lp.steady_z_mag),
            json_num(lp.steady_z.map(|z| z.re)),
            json_num(lp.steady_z.map(|z| z.im)),
            lp.tripped,
            json_num(lp.first_operate_t),
        );
    }
    for d in &sm.diffs {
        let _ = writeln!(
            out,
            "{{\"record\":\"differential\",\"element\":{},\"excursions_3cyc\":{},\"tripped\":{},\"first_operate_t\":{},\"steady_state\":{},\"steady_alpha_re\":{},\"steady_alpha_im\":{}}}",
            json_str(d.element.label()),
            d.excursions_3cyc,
            d.tripped,
            json_num(d.first_operate_t),
            d.steady_state
                .map(|st| json_str(st.label()))
                .unwrap_or_else(|| "null".to_string()),
            json_num(d.steady_alpha.map(|a| a.re)),
            json_num(d.steady_alpha.map(|a| a.im)),
        );
    }
    out
}

fn opt_cell(x: Option<f64>, digits: usize) -> String {
    match x {
        Some(v) if v.is_finite() => format!("{v:.digits$}"),
        _ => "-".to_string(),
    }
}

/// Human-readable run report.
pub fn report_md(result: &ScenarioResult) -> String {
    let sc = &result.scenario;
    let sm = &result.summary;
    let mut out = String::with_capacity(4096);

    let _ = writeln!(out, "# Run report: {}\n", sc.label());
    let _ = writeln!(out, "- template: {}", sc.template);
    let _ = writeln!(
        out,
        "- infeeds: terminal 1 = {}, terminal 2 = {}",
        sc.infeed_terminal1.label(),
        sc.infeed_terminal2.label()
    );
    let _ = writeln!(out, "- current priority: {:?}", sc.priority);
    match &sc.fault {
        Some(f) => {
            let off = f
                .t_off
                .map(|t| format!("{t:.4} s"))
                .unwrap_or_else(|| "end of run".to_string());
            let _ = writeln!(
                out,
                "- fault: {} at m={:.2}, Rf={} ohm, on {:.4} s, off {}",
                f.ftype.label(),
                f.location,
                fmt_f(f.rf_ohms),
                f.t_on,
                off
            );
        }
        None => {
            let _ = writeln!(out, "- fault: none");
        }
    }
    let _ = writeln!(
        out,
        "- timing: h={} s, f={} Hz, settle {} s, end {} s",
        fmt_f(sc.sim.h),
        fmt_f(sc.sim.f_nom),
        fmt_f(sc.sim.t_settle),
        fmt_f(sc.sim.t_end)
    );
    let _ = writeln!(out);

    match &result.status {
        RunStatus::Completed => {
            let _ = writeln!(out, "Status: completed.");
        }
        RunStatus::Unstable { t, detail } => {
            let _ = writeln!(out, "Status: **unstable** at t={t:.5} s ({detail}).");
        }
        RunStatus::SolverAbort { t, detail } => {
            let _ = writeln!(out, "Status: **solver abort** at t={t:.5} s ({detail}).");
        }
        RunStatus::SettleFailed { v1_pu, v2_pu } => {
            let _ = writeln!(
                out,
                "Status: **settle failed** (|V1|={v1_pu:.4}, |V2|={v2_pu:.4} pu)."
            );
        }
    }
    let _ = writeln!(
        out,
        "Pre-fault gate: |V1|={:.4} pu, |V2|={:.4} pu ({}).\n",
        sm.settle_v1_pu,
        sm.settle_v2_pu,
        if sm.settle_ok { "pass" } else { "fail" }
    );
    let _ = writeln!(
        out,
        "Converter envelope: omega in [{:.4}, {:.4}] pu, limiter engaged: {}, modulation clamps: {}.\n",
        sm.omega_min, sm.omega_max, sm.limiter_engaged_any, sm.clamp_events
    );

    let zl = result.z1l_pu.norm();
    let _ = writeln!(out, "## Distance loops (relay pu; line |Z1|={zl:.4})\n");
    let _ = writeln!(
        out,
        "| loop | min |Z| (2 cyc) | steady |Z| | steady %line | tripped | first operate (s) |"
    );
    let _ = writeln!(out, "|---|---|---|---|---|---|");
    for lp in &sm.loops {
        let pct = lp.steady_z_mag.map(|m| 100.0 * m / zl);
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} |",
            lp.lp.label(),
            opt_cell(lp.min_z_mag_2cyc, 4),
            opt_cell(lp.steady_z_mag, 4),
            opt_cell(pct, 1),
            if lp.tripped { "yes" } else { "no" },
            opt_cell(lp.first_operate_t, 5),
        );
    }
    let _ = writeln!(out);

    let _ = writeln!(out, "## Differential elements\n");
    let _ = writeln!(
        out,
        "| element | excursions (3 cyc) | steady state | steady alpha | tripped | first operate (s) |"
    );
    let _ = writeln!(out, "|---|---|---|---|---|---|");
    for d in &sm.diffs {
        let alpha = match d.steady_alpha {
            Some(a) => format!("{:.3}{}{:.3}j", a.re, if a.im < 0.0 { "-" } else { "+" }, a.im.abs()),
            None => "-".to_string(),
        };
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} |",
            d.element.label(),
            d.excursions_3cyc,
            d.steady_state.map(|s| s.label()).unwrap_or("-"),
            alpha,
            if d.tripped { "yes" } else { "no" },
            opt_cell(d.first_operate_t, 5),
        );
    }
    let _ = writeln!(out);
    out
}
