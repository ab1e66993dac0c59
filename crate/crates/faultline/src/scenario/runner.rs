//! Scenario execution: steps the electrical solver with converter controls
//! in the loop, applies the fault schedule, resamples relay channels onto
//! the relay clock by linear interpolation, and reduces the run to summary
//! metrics.
//!
//! Step ordering within one solver interval `[t, t+h]`: controls read the
//! solved state at `t` and set converter EMFs for the interval (one-step
//! compute latency, as in a real controller); stiff sources are evaluated
//! at `t+h`; fault switches toggle when the interval end crosses their
//! schedule; then the solver advances. Relay samples falling inside the
//! interval interpolate between the states at its ends.

use crate::control::{ControlError, ControlStep, GflControl, GflParams, GfmControl, GfmParams};
use crate::frames::fortescue;
use crate::limiter::PriorityMode;
use crate::relays::{
    AlphaPoint, AlphaSettings, DiffElement, DistanceLoop, DistanceSettings, ElementState,
    RelaySample, RelaySuite,
};
use crate::scenario::config::{ConfigError, Infeed, Scenario};
use crate::scenario::template::{build_template, InfeedPlant, StudyNetwork};
use num_complex::Complex64;

/// Sustained frequency-excursion band and dwell that flag a run unstable.
pub const OMEGA_FLAG_DEV: f64 = 0.1;
pub const OMEGA_FLAG_DWELL_S: f64 = 0.02;

/// Pre-fault settling gate on positive-sequence voltage, pu.
pub const SETTLE_BAND: (f64, f64) = (0.95, 1.05);

/// Terminal run status. Anything but `Completed` means the run stopped
/// early; partial traces up to the stop are kept.
#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    /// A converter frequency stayed outside the +/-10% band past the dwell,
    /// or left the hard abort band.
    Unstable { t: f64, detail: String },
    /// Solver or controls produced non-finite values.
    SolverAbort { t: f64, detail: String },
    /// Pre-fault voltages missed the settling band.
    SettleFailed { v1_pu: f64, v2_pu: f64 },
}

impl RunStatus {
    pub fn label(&self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::Unstable { .. } => "unstable",
            RunStatus::SolverAbort { .. } => "solver-abort",
            RunStatus::SettleFailed { .. } => "settle-failed",
        }
    }
}

/// One control-stack sample, recorded every solver step.
#[derive(Debug, Clone, Copy)]
pub struct ControlTracePoint {
    pub t: f64,
    pub omega_pu: f64,
    pub p_meas: f64,
    pub q_meas: f64,
    pub v_pos_mag: f64,
    pub v_neg_mag: f64,
    pub lvrt_active: bool,
    pub limiter_engaged: bool,
    pub scale_pos: f64,
    pub scale_neg: f64,
    pub clamped: bool,
}

impl ControlTracePoint {
    fn from_step(t: f64, s: &ControlStep) -> Self {
        Self {
            t,
            omega_pu: s.omega_pu,
            p_meas: s.p_meas,
            q_meas: s.q_meas,
            v_pos_mag: s.v_pos_mag,
            v_neg_mag: s.v_neg_mag,
            lvrt_active: s.lvrt_active,
            limiter_engaged: s.limiter.engaged,
            scale_pos: s.limiter.scale_pos,
            scale_neg: s.limiter.scale_neg,
            clamped: s.clamped,
        }
    }
}

/// One waveform record: terminal voltages (V) and line currents (A).
#[derive(Debug, Clone, Copy)]
pub struct WaveformRecord {
    pub t: f64,
    /// v1_abc, i1_abc, v2_abc, i2_abc.
    pub ch: [f64; 12],
}

pub const WAVEFORM_HEADERS: [&str; 12] = [
    "v1_a", "v1_b", "v1_c", "i1_a", "i1_b", "i1_c", "v2_a", "v2_b", "v2_c", "i2_a", "i2_b",
    "i2_c",
];

/// Per-distance-loop reduction over the fault window.
#[derive(Debug, Clone, Copy)]
pub struct LoopSummary {
    pub lp: DistanceLoop,
    /// Minimum |Z| within two cycles of inception.
    pub min_z_mag_2cyc: Option<f64>,
    /// Mean |Z| over the last two fault-on cycles.
    pub steady_z_mag: Option<f64>,
    /// Complex mean Z over the same window.
    pub steady_z: Option<Complex64>,
    pub tripped: bool,
    pub first_operate_t: Option<f64>,
}

/// Per-differential-element reduction over the fault window.
#[derive(Debug, Clone, Copy)]
pub struct DiffSummary {
    pub element: DiffElement,
    /// Relay samples in the geometric operate region within three cycles of
    /// inception (pickup not applied: this instruments excursions).
    pub excursions_3cyc: u32,
    pub tripped: bool,
    pub first_operate_t: Option<f64>,
    /// Element state at the last sample of the steady-fault window.
    pub steady_state: Option<ElementState>,
    /// Complex mean alpha over the steady-fault window.
    pub steady_alpha: Option<Complex64>,
}

/// Scalar reductions of one run.
#[derive(Debug, Clone)]
pub struct Summary {
    /// Positive-sequence voltage magnitudes at the settling gate, pu.
    pub settle_v1_pu: f64,
    pub settle_v2_pu: f64,
    pub settle_ok: bool,
    pub loops: Vec<LoopSummary>,
    pub diffs: Vec<DiffSummary>,
    pub limiter_engaged_any: bool,
    pub clamp_events: u64,
    pub omega_min: f64,
    pub omega_max: f64,
}

/// Everything a run produces.
#[derive(Debug)]
pub struct ScenarioResult {
    pub scenario: Scenario,
    pub status: RunStatus,
    pub waveforms: Vec<WaveformRecord>,
    pub relay_samples: Vec<RelaySample>,
    pub control1: Vec<ControlTracePoint>,
    pub control2: Vec<ControlTracePoint>,
    pub summary: Summary,
    /// Full-line positive-sequence impedance, relay pu (reference scale for
    /// impedance summaries).
    pub z1l_pu: Complex64,
}

enum ControlStack {
    Gfm(GfmControl),
    Gfl(GflControl),
}

impl ControlStack {
    fn new(kind: Infeed, priority: PriorityMode, omega_nom: f64) -> Option<Self> {
        match kind {
            Infeed::Gfm => Some(ControlStack::Gfm(GfmControl::new(
                GfmParams::default(),
                priority,
                omega_nom,
            ))),
            Infeed::Gfl => Some(ControlStack::Gfl(GflControl::new(
                GflParams::default(),
                priority,
                omega_nom,
            ))),
            _ => None,
        }
    }

    fn step(
        &mut self,
        v: crate::frames::ThreePhaseSample,
        i: crate::frames::ThreePhaseSample,
        t: f64,
        h: f64,
    ) -> Result<ControlStep, ControlError> {
        match self {
            ControlStack::Gfm(c) => c.step(v, i, t, h),
            ControlStack::Gfl(c) => c.step(v, i, t, h),
        }
    }
}

struct ConverterSlot {
    stack: ControlStack,
    trace: Vec<ControlTracePoint>,
    dwell_s: f64,
}

/// Runs one scenario to completion (or early stop). Build problems are
/// reported as configuration errors; runtime trouble lands in the result's
/// status.
pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioResult, ConfigError> {
    scenario.validate()?;
    let mut net = build_template(scenario)
        .map_err(|e| ConfigError::Invalid(format!("template build failed: {e}")))?;

    let sim = scenario.sim;
    let h = sim.h;
    let omega_nom = 2.0 * std::f64::consts::PI * sim.f_nom;

    let dist = DistanceSettings::new(net.z1l_pu, net.z0l_pu, scenario.relay.zone1_reach);
    let alpha = AlphaSettings {
        r_outer: scenario.relay.r_outer,
        blinder_deg: scenario.relay.blinder_deg,
        pickup: scenario.relay.pickup,
    };
    let mut suite = RelaySuite::new(dist, alpha, scenario.relay.samples_per_cycle);

    let mut conv1 = ControlStack::new(scenario.infeed_terminal1, scenario.priority, omega_nom)
        .map(|stack| ConverterSlot { stack, trace: Vec::new(), dwell_s: 0.0 });
    let mut conv2 = ControlStack::new(scenario.infeed_terminal2, scenario.priority, omega_nom)
        .map(|stack| ConverterSlot { stack, trace: Vec::new(), dwell_s: 0.0 });

    let n_steps = (sim.t_end / h).round() as usize;
    let relay_dt = 1.0 / (sim.f_nom * scenario.relay.samples_per_cycle as f64);
    let mut relay_tick: u64 = 1;

    let mut waveforms = Vec::with_capacity(n_steps);
    let mut relay_samples: Vec<RelaySample> = Vec::with_capacity(
        (sim.t_end * sim.f_nom * scenario.relay.samples_per_cycle as f64) as usize + 2,
    );

    let mut fault_on = false;
    let mut prev_ch = relay_channels(&net);
    let mut status = RunStatus::Completed;
    let mut settle_checked = sim.t_settle <= 0.0;
    let mut settle_v = (f64::NAN, f64::NAN);
    let mut omega_min = f64::INFINITY;
    let mut omega_max = f64::NEG_INFINITY;
    let mut clamp_events: u64 = 0;
    let mut limiter_engaged_any = false;

    'main: for k in 0..n_steps {
        let t_now = k as f64 * h;
        let t_next = (k + 1) as f64 * h;

        // Converter controls act on the state at t_now.
        for term1 in [true, false] {
            let (slot, plant) = if term1 {
                (&mut conv1, &net.infeed1)
            } else {
                (&mut conv2, &net.infeed2)
            };
            let step = match step_converter(slot, plant, &mut net.sys, t_now, h) {
                Ok(None) => continue,
                Ok(Some(step)) => step,
                Err(st) => {
                    status = st;
                    break 'main;
                }
            };
            omega_min = omega_min.min(step.omega_pu);
            omega_max = omega_max.max(step.omega_pu);
            if step.clamped {
                clamp_events += 1;
            }
            if step.limiter.engaged {
                limiter_engaged_any = true;
            }
        }

        // Stiff sources are evaluated at the interval end.
        if let InfeedPlant::Thevenin(th) = &net.infeed1 {
            th.update_emfs(&mut net.sys, t_next);
        }
        if let InfeedPlant::Thevenin(th) = &net.infeed2 {
            th.update_emfs(&mut net.sys, t_next);
        }

        // Fault schedule, applied when the interval end crosses it.
        if let (Some(fault), Some(spec)) = (&net.fault, &scenario.fault) {
            if !fault_on && t_next >= spec.t_on - 1e-12 {
                fault.set_closed(&mut net.sys, true);
                fault_on = true;
            }
            if let Some(t_off) = spec.t_off {
                if fault_on && t_next >= t_off - 1e-12 {
                    fault.set_closed(&mut net.sys, false);
                    fault_on = false;
                }
            }
        }

        if let Err(e) = net.sys.step(&[]) {
            status = RunStatus::SolverAbort { t: t_next, detail: e.to_string() };
            break 'main;
        }

        waveforms.push(WaveformRecord { t: t_next, ch: net.waveform_si() });

        // Relay resampling over (t_now, t_next].
        let next_ch = relay_channels(&net);
        loop {
            let t_r = relay_tick as f64 * relay_dt;
            if t_r > t_next + 1e-12 {
                break;
            }
            let frac = ((t_r - t_now) / h).clamp(0.0, 1.0);
            let ch = interp_channels(&prev_ch, &next_ch, frac);
            let sample = suite.push_sample(
                t_r,
                [ch[0], ch[1], ch[2]],
                [ch[3], ch[4], ch[5]],
                [ch[6], ch[7], ch[8]],
                [ch[9], ch[10], ch[11]],
            );
            // Settling gate at the first sample past t_settle.
            if !settle_checked && t_r >= sim.t_settle {
                settle_checked = true;
                let v1 = fortescue(sample.local.v[0], sample.local.v[1], sample.local.v[2])
                    .positive
                    .norm();
                let v2 = fortescue(sample.remote.v[0], sample.remote.v[1], sample.remote.v[2])
                    .positive
                    .norm();
                settle_v = (v1, v2);
                let ok = |v: f64| (SETTLE_BAND.0..=SETTLE_BAND.1).contains(&v);
                if !(ok(v1) && ok(v2)) {
                    relay_samples.push(sample);
                    status = RunStatus::SettleFailed { v1_pu: v1, v2_pu: v2 };
                    break 'main;
                }
            }
            relay_samples.push(sample);
            relay_tick += 1;
        }
        prev_ch = next_ch;
    }

    let summary = summarize(
        scenario,
        &relay_samples,
        settle_v,
        limiter_engaged_any,
        clamp_events,
        omega_min,
        omega_max,
    );

    Ok(ScenarioResult {
        scenario: scenario.clone(),
        status,
        waveforms,
        relay_samples,
        control1: conv1.map(|c| c.trace).unwrap_or_default(),
        control2: conv2.map(|c| c.trace).unwrap_or_default(),
        summary,
        z1l_pu: net.z1l_pu,
    })
}

/// Advances one converter's control stack against the solved state at `t`,
/// applies its modulation, and records the trace. `Ok(None)` when the slot
/// is not a converter; `Err` carries the terminal status for hard stops.
fn step_converter(
    slot: &mut Option<ConverterSlot>,
    plant: &InfeedPlant,
    sys: &mut crate::emt::SolverSystem,
    t: f64,
    h: f64,
) -> Result<Option<ControlStep>, RunStatus> {
    let Some(slot) = slot.as_mut() else {
        return Ok(None);
    };
    let InfeedPlant::Converter(conv) = plant else {
        return Ok(None);
    };
    let (v, i) = conv.measure(sys);
    match slot.stack.step(v, i, t, h) {
        Ok(step) => {
            conv.apply_modulation(sys, step.modulation);
            slot.trace.push(ControlTracePoint::from_step(t, &step));
            if (step.omega_pu - 1.0).abs() > OMEGA_FLAG_DEV {
                slot.dwell_s += h;
                if slot.dwell_s > OMEGA_FLAG_DWELL_S {
                    return Err(RunStatus::Unstable {
                        t,
                        detail: format!(
                            "converter frequency {:.4} pu outside the +/-10% band for over {} ms",
                            step.omega_pu,
                            (OMEGA_FLAG_DWELL_S * 1e3) as u32
                        ),
                    });
                }
            } else {
                slot.dwell_s = 0.0;
            }
            Ok(Some(step))
        }
        Err(ControlError::Unstable { omega_pu, t }) => Err(RunStatus::Unstable {
            t,
            detail: format!("converter frequency hit {omega_pu:.4} pu (hard abort band)"),
        }),
        Err(e @ ControlError::NonFinite(_)) => {
            Err(RunStatus::SolverAbort { t, detail: e.to_string() })
        }
    }
}

/// Relay-pu channel snapshot: v1, i1, v2, i2 (three phases each).
fn relay_channels(net: &StudyNetwork) -> [f64; 12] {
    let v1 = net.v_term_pu(true);
    let i1 = net.i_line_pu(true);
    let v2 = net.v_term_pu(false);
    let i2 = net.i_line_pu(false);
    let mut out = [0.0; 12];
    out[0..3].copy_from_slice(&v1);
    out[3..6].copy_from_slice(&i1);
    out[6..9].copy_from_slice(&v2);
    out[9..12].copy_from_slice(&i2);
    out
}

fn interp_channels(a: &[f64; 12], b: &[f64; 12], frac: f64) -> [f64; 12] {
    let mut out = [0.0; 12];
    for k in 0..12 {
        out[k] = a[k] + (b[k] - a[k]) * frac;
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn summarize(
    scenario: &Scenario,
    samples: &[RelaySample],
    settle_v: (f64, f64),
    limiter_engaged_any: bool,
    clamp_events: u64,
    omega_min: f64,
    omega_max: f64,
) -> Summary {
    let f = scenario.sim.f_nom;
    let cyc = 1.0 / f;
    let fault_window = scenario.fault.map(|fs| (fs.t_on, scenario.fault_end().unwrap()));

    let in_window = |t: f64, lo: f64, hi: f64| t > lo + 1e-12 && t <= hi + 1e-12;

    let loops = DistanceLoop::ALL
        .iter()
        .enumerate()
        .map(|(li, &lp)| {
            let mut min_z: Option<f64> = None;
            let mut steady_mags = Vec::new();
            let mut steady_sum = Complex64::new(0.0, 0.0);
            let mut tripped = false;
            let mut first_operate = None;
            if let Some((t_on, t_end)) = fault_window {
                for s in samples {
                    let d = &s.distance[li];
                    if in_window(s.t, t_on, t_on + 2.0 * cyc) {
                        if let Some(z) = d.z {
                            let m = z.norm();
                            min_z = Some(min_z.map_or(m, |v: f64| v.min(m)));
                        }
                    }
                    if in_window(s.t, t_end - 2.0 * cyc, t_end) {
                        if let Some(z) = d.z {
                            steady_mags.push(z.norm());
                            steady_sum += z;
                        }
                    }
                    if in_window(s.t, t_on, t_end) && d.state == ElementState::Operate {
                        tripped = true;
                        if first_operate.is_none() {
                            first_operate = Some(s.t);
                        }
                    }
                }
            }
            let n = steady_mags.len();
            LoopSummary {
                lp,
                min_z_mag_2cyc: min_z,
                steady_z_mag: if n > 0 {
                    Some(steady_mags.iter().sum::<f64>() / n as f64)
                } else {
                    None
                },
                steady_z: if n > 0 { Some(steady_sum / n as f64) } else { None },
                tripped,
                first_operate_t: first_operate,
            }
        })
        .collect();

    let diffs = DiffElement::ALL
        .iter()
        .enumerate()
        .map(|(di, &element)| {
            let mut excursions = 0u32;
            let mut tripped = false;
            let mut first_operate = None;
            let mut steady_state = None;
            let mut alpha_sum = Complex64::new(0.0, 0.0);
            let mut alpha_n = 0usize;
            if let Some((t_on, t_end)) = fault_window {
                for s in samples {
                    let d = &s.differential[di];
                    if in_window(s.t, t_on, t_on + 3.0 * cyc) && d.in_restraint == Some(false) {
                        excursions += 1;
                    }
                    if in_window(s.t, t_on, t_end) && d.state == ElementState::Operate {
                        tripped = true;
                        if first_operate.is_none() {
                            first_operate = Some(s.t);
                        }
                    }
                    if in_window(s.t, t_end - 2.0 * cyc, t_end) {
                        steady_state = Some(d.state);
                        if let AlphaPoint::Point(a) = d.alpha {
                            alpha_sum += a;
                            alpha_n += 1;
                        }
                    }
                }
            }
            DiffSummary {
                element,
                excursions_3cyc: excursions,
                tripped,
                first_operate_t: first_operate,
                steady_state,
                steady_alpha: if alpha_n > 0 {
                    Some(alpha_sum / alpha_n as f64)
                } else {
                    None
                },
            }
        })
        .collect();

    let ok = |v: f64| (SETTLE_BAND.0..=SETTLE_BAND.1).contains(&v);
    Summary {
        settle_v1_pu: settle_v.0,
        settle_v2_pu: settle_v.1,
        settle_ok: ok(settle_v.0) && ok(settle_v.1),
        loops,
        diffs,
        limiter_engaged_any,
        clamp_events,
        omega_min: if omega_min.is_finite() { omega_min } else { 1.0 },
        omega_max: if omega_max.is_finite() { omega_max } else { 1.0 },
    }
}
