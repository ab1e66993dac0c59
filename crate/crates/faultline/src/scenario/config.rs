//! Scenario and sweep file schemas.
//!
//! Files are TOML with a strict schema: unknown keys are rejected, every
//! violation names the offending key and the constraint it broke. A raw
//! deserialized file is resolved into a fully defaulted [`Scenario`]
//! before anything runs.

use crate::limiter::PriorityMode;
use crate::network::FaultType;
use serde::Deserialize;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// What feeds a line terminal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Infeed {
    /// Synchronous source: Thevenin equivalent behind sequence impedances.
    Sg,
    /// Grid-forming converter behind its unit transformer.
    Gfm,
    /// Grid-following converter behind its unit transformer.
    Gfl,
    /// Nothing connected; the terminal is a dead end. Useful for radial
    /// measurement oracles.
    Open,
}

impl Infeed {
    pub fn label(self) -> &'static str {
        match self {
            Infeed::Sg => "sg",
            Infeed::Gfm => "gfm",
            Infeed::Gfl => "gfl",
            Infeed::Open => "open",
        }
    }

    pub fn is_converter(self) -> bool {
        matches!(self, Infeed::Gfm | Infeed::Gfl)
    }
}

/// Fault schedule: what, where, when.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultSpec {
    pub ftype: FaultType,
    pub rf_ohms: f64,
    /// Location fraction along the line: 0 is the terminal-1 bus, 1 the
    /// terminal-2 bus (both electrically outside the protected zone).
    pub location: f64,
    pub t_on: f64,
    /// Clearing time; `None` keeps the fault on until the end of the run.
    pub t_off: Option<f64>,
}

/// Solver and schedule timing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimParams {
    pub h: f64,
    pub f_nom: f64,
    /// Pre-fault settling period; the voltage gate is checked at its end.
    pub t_settle: f64,
    pub t_end: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self { h: 50e-6, f_nom: 60.0, t_settle: 0.5, t_end: 0.85 }
    }
}

/// Relay settings a scenario may override.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaySettings {
    pub zone1_reach: f64,
    pub samples_per_cycle: usize,
    pub r_outer: f64,
    pub blinder_deg: f64,
    pub pickup: f64,
}

impl Default for RelaySettings {
    fn default() -> Self {
        Self {
            zone1_reach: 0.8,
            samples_per_cycle: 32,
            r_outer: 6.0,
            blinder_deg: 195.0,
            pickup: 0.2,
        }
    }
}

/// Optional overrides of the template's line constants. Zeroing the shunt
/// charging turns the line into the textbook series-impedance model that
/// classical fault oracles assume.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LineOverride {
    pub b1_s_per_km: Option<f64>,
    pub b0_s_per_km: Option<f64>,
}

/// A fully resolved, validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub template: String,
    pub infeed_terminal1: Infeed,
    pub infeed_terminal2: Infeed,
    pub priority: PriorityMode,
    pub fault: Option<FaultSpec>,
    pub sim: SimParams,
    pub relay: RelaySettings,
    pub line_override: LineOverride,
}

impl Scenario {
    /// Compact label used in file names and sweep tables.
    pub fn label(&self) -> String {
        let fault = match &self.fault {
            None => "nofault".to_string(),
            Some(f) => format!(
                "{}_m{:03}_rf{}",
                f.ftype.label(),
                (f.location * 100.0).round() as u32,
                format_ohms(f.rf_ohms)
            ),
        };
        format!(
            "{}_{}_{}_{}_{}",
            self.template,
            fault,
            self.infeed_terminal1.label(),
            self.infeed_terminal2.label(),
            priority_label(self.priority)
        )
    }

    /// End of the fault-on interval, if a fault exists.
    pub fn fault_end(&self) -> Option<f64> {
        self.fault.map(|f| f.t_off.unwrap_or(self.sim.t_end).min(self.sim.t_end))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: String| Err(ConfigError::Invalid(m));
        if self.template != "line2324" {
            return err(format!(
                "template: unknown template '{}' (available: line2324)",
                self.template
            ));
        }
        if self.infeed_terminal1 == Infeed::Open {
            return err("infeed_terminal1: must not be 'open'; the relay terminal needs a source".into());
        }
        let s = &self.sim;
        if !(s.h > 0.0 && s.h < 1e-3) {
            return err(format!("sim.h: must lie in (0, 1e-3) s, got {}", s.h));
        }
        if !(s.f_nom > 0.0) {
            return err(format!("sim.f_nom: must be positive, got {}", s.f_nom));
        }
        if !(s.t_settle >= 0.0) {
            return err(format!("sim.t_settle: must be >= 0, got {}", s.t_settle));
        }
        if !(s.t_end > s.t_settle) {
            return err(format!(
                "sim.t_end ({}) must exceed sim.t_settle ({})",
                s.t_end, s.t_settle
            ));
        }
        if let Some(f) = &self.fault {
            if !(0.0..=1.0).contains(&f.location) {
                return err(format!("fault.location: must lie in [0, 1], got {}", f.location));
            }
            if !(f.rf_ohms >= 0.0) {
                return err(format!("fault.rf_ohms: must be >= 0, got {}", f.rf_ohms));
            }
            if !(f.t_on > s.t_settle) {
                return err(format!(
                    "fault.t_on ({}) must exceed sim.t_settle ({})",
                    f.t_on, s.t_settle
                ));
            }
            if !(f.t_on < s.t_end) {
                return err(format!(
                    "fault.t_on ({}) must lie before sim.t_end ({})",
                    f.t_on, s.t_end
                ));
            }
            if let Some(t_off) = f.t_off {
                if !(t_off > f.t_on) {
                    return err(format!(
                        "fault.t_off ({}) must exceed fault.t_on ({})",
                        t_off, f.t_on
                    ));
                }
            }
        }
        let r = &self.relay;
        if !(r.zone1_reach > 0.0 && r.zone1_reach <= 1.0) {
            return err(format!("relay.zone1_reach: must lie in (0, 1], got {}", r.zone1_reach));
        }
        if r.samples_per_cycle < 4 || r.samples_per_cycle > 512 {
            return err(format!(
                "relay.samples_per_cycle: must lie in [4, 512], got {}",
                r.samples_per_cycle
            ));
        }
        if !(r.r_outer > 1.0) {
            return err(format!("relay.r_outer: must exceed 1, got {}", r.r_outer));
        }
        if !(r.blinder_deg > 180.0 && r.blinder_deg < 360.0) {
            return err(format!(
                "relay.blinder_deg: must lie in (180, 360), got {}",
                r.blinder_deg
            ));
        }
        if !(r.pickup >= 0.0 && r.pickup.is_finite()) {
            return err(format!("relay.pickup: must be finite and >= 0, got {}", r.pickup));
        }
        for (key, b) in [
            ("line.b1_s_per_km", self.line_override.b1_s_per_km),
            ("line.b0_s_per_km", self.line_override.b0_s_per_km),
        ] {
            if let Some(b) = b {
                if !(b >= 0.0) {
                    return err(format!("{key}: must be >= 0, got {b}"));
                }
            }
        }
        Ok(())
    }
}

fn priority_label(p: PriorityMode) -> &'static str {
    match p {
        PriorityMode::Positive => "pos",
        PriorityMode::Negative => "neg",
    }
}

fn format_ohms(rf: f64) -> String {
    if rf == rf.trunc() && rf.abs() < 1e6 {
        format!("{}", rf as i64)
    } else {
        format!("{rf}")
    }
}

// ---- raw file schema -----------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    template: String,
    infeed_terminal1: Option<Infeed>,
    infeed_terminal2: Option<Infeed>,
    priority: Option<PriorityMode>,
    fault: Option<RawFault>,
    sim: Option<RawSim>,
    relay: Option<RawRelay>,
    line: Option<RawLine>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFault {
    ftype: FaultType,
    #[serde(alias = "rf")]
    rf_ohms: Option<f64>,
    #[serde(alias = "location_frac")]
    location: Option<f64>,
    t_on: Option<f64>,
    t_off: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSim {
    h: Option<f64>,
    f_nom: Option<f64>,
    t_settle: Option<f64>,
    t_end: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRelay {
    zone1_reach: Option<f64>,
    samples_per_cycle: Option<usize>,
    r_outer: Option<f64>,
    blinder_deg: Option<f64>,
    pickup: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLine {
    b1_s_per_km: Option<f64>,
    b0_s_per_km: Option<f64>,
}

pub const DEFAULT_FAULT_T_ON: f64 = 0.6;

impl RawScenario {
    fn resolve(self) -> Scenario {
        let sim_defaults = SimParams::default();
        let sim = match self.sim {
            None => sim_defaults,
            Some(s) => SimParams {
                h: s.h.unwrap_or(sim_defaults.h),
                f_nom: s.f_nom.unwrap_or(sim_defaults.f_nom),
                t_settle: s.t_settle.unwrap_or(sim_defaults.t_settle),
                t_end: s.t_end.unwrap_or(sim_defaults.t_end),
            },
        };
        let relay_defaults = RelaySettings::default();
        let relay = match self.relay {
            None => relay_defaults,
            Some(r) => RelaySettings {
                zone1_reach: r.zone1_reach.unwrap_or(relay_defaults.zone1_reach),
                samples_per_cycle: r.samples_per_cycle.unwrap_or(relay_defaults.samples_per_cycle),
                r_outer: r.r_outer.unwrap_or(relay_defaults.r_outer),
                blinder_deg: r.blinder_deg.unwrap_or(relay_defaults.blinder_deg),
                pickup: r.pickup.unwrap_or(relay_defaults.pickup),
            },
        };
        let fault = self.fault.map(|f| FaultSpec {
            ftype: f.ftype,
            rf_ohms: f.rf_ohms.unwrap_or(0.0),
            location: f.location.unwrap_or(0.5),
            t_on: f.t_on.unwrap_or(DEFAULT_FAULT_T_ON),
            t_off: f.t_off,
        });
        let line_override = match self.line {
            None => LineOverride::default(),
            Some(l) => LineOverride { b1_s_per_km: l.b1_s_per_km, b0_s_per_km: l.b0_s_per_km },
        };
        Scenario {
            template: self.template,
            infeed_terminal1: self.infeed_terminal1.unwrap_or(Infeed::Sg),
            infeed_terminal2: self.infeed_terminal2.unwrap_or(Infeed::Sg),
            priority: self.priority.unwrap_or(PriorityMode::Positive),
            fault,
            sim,
            relay,
            line_override,
        }
    }
}

/// Parses and validates a scenario from TOML text. `origin` names the
/// source in error messages.
pub fn parse_scenario(text: &str, origin: &str) -> Result<Scenario, ConfigError> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| ConfigError::Parse {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    let scenario = raw.resolve();
    scenario.validate()?;
    Ok(scenario)
}

/// Loads a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_scenario(&text, &path.display().to_string())
}

// ---- sweep schema ---------------------------------------------------------

/// Cross-product sweep over fault and infeed dimensions. Axes are expanded
/// in declaration order (ftype, location, rf, infeed, priority),
/// lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub template: String,
    pub ftypes: Vec<FaultType>,
    pub locations: Vec<f64>,
    pub rf_ohms: Vec<f64>,
    pub infeeds_terminal1: Vec<Infeed>,
    pub infeed_terminal2: Infeed,
    pub priorities: Vec<PriorityMode>,
    pub t_on: f64,
    pub t_off: Option<f64>,
    pub sim: SimParams,
    pub relay: RelaySettings,
    pub line_override: LineOverride,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    template: String,
    ftypes: Vec<FaultType>,
    locations: Vec<f64>,
    rf_ohms: Option<Vec<f64>>,
    infeeds_terminal1: Vec<Infeed>,
    infeed_terminal2: Option<Infeed>,
    priorities: Option<Vec<PriorityMode>>,
    t_on: Option<f64>,
    t_off: Option<f64>,
    sim: Option<RawSim>,
    relay: Option<RawRelay>,
    line: Option<RawLine>,
}

impl SweepSpec {
    /// Expands into scenarios, lexicographic in axis declaration order.
    pub fn expand(&self) -> Vec<Scenario> {
        let mut out = Vec::new();
        for &ftype in &self.ftypes {
            for &location in &self.locations {
                for &rf in &self.rf_ohms {
                    for &infeed1 in &self.infeeds_terminal1 {
                        for &priority in &self.priorities {
                            out.push(Scenario {
                                template: self.template.clone(),
                                infeed_terminal1: infeed1,
                                infeed_terminal2: self.infeed_terminal2,
                                priority,
                                fault: Some(FaultSpec {
                                    ftype,
                                    rf_ohms: rf,
                                    location,
                                    t_on: self.t_on,
                                    t_off: self.t_off,
                                }),
                                sim: self.sim,
                                relay: self.relay,
                                line_override: self.line_override,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.ftypes.is_empty()
            || self.locations.is_empty()
            || self.rf_ohms.is_empty()
            || self.infeeds_terminal1.is_empty()
            || self.priorities.is_empty()
        {
            return Err(ConfigError::Invalid(
                "sweep axes must all be non-empty (ftypes, locations, rf_ohms, infeeds_terminal1, priorities)".into(),
            ));
        }
        for s in self.expand() {
            s.validate()?;
        }
        Ok(())
    }
}

/// Parses and validates a sweep from TOML text.
pub fn parse_sweep(text: &str, origin: &str) -> Result<SweepSpec, ConfigError> {
    let raw: RawSweep = toml::from_str(text).map_err(|e| ConfigError::Parse {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    let sim_defaults = SimParams::default();
    let sim = match raw.sim {
        None => sim_defaults,
        Some(s) => SimParams {
            h: s.h.unwrap_or(sim_defaults.h),
            f_nom: s.f_nom.unwrap_or(sim_defaults.f_nom),
            t_settle: s.t_settle.unwrap_or(sim_defaults.t_settle),
            t_end: s.t_end.unwrap_or(sim_defaults.t_end),
        },
    };
    let relay_defaults = RelaySettings::default();
    let relay = match raw.relay {
        None => relay_defaults,
        Some(r) => RelaySettings {
            zone1_reach: r.zone1_reach.unwrap_or(relay_defaults.zone1_reach),
            samples_per_cycle: r.samples_per_cycle.unwrap_or(relay_defaults.samples_per_cycle),
            r_outer: r.r_outer.unwrap_or(relay_defaults.r_outer),
            blinder_deg: r.blinder_deg.unwrap_or(relay_defaults.blinder_deg),
            pickup: r.pickup.unwrap_or(relay_defaults.pickup),
        },
    };
    let spec = SweepSpec {
        template: raw.template,
        ftypes: raw.ftypes,
        locations: raw.locations,
        rf_ohms: raw.rf_ohms.unwrap_or_else(|| vec![0.0]),
        infeeds_terminal1: raw.infeeds_terminal1,
        infeed_terminal2: raw.infeed_terminal2.unwrap_or(Infeed::Sg),
        priorities: raw.priorities.unwrap_or_else(|| vec![PriorityMode::Positive]),
        t_on: raw.t_on.unwrap_or(DEFAULT_FAULT_T_ON),
        t_off: raw.t_off,
        sim,
        relay,
        line_override: match raw.line {
            None => LineOverride::default(),
            Some(l) => LineOverride { b1_s_per_km: l.b1_s_per_km, b0_s_per_km: l.b0_s_per_km },
        },
    };
    spec.validate()?;
    Ok(spec)
}

pub fn load_sweep(path: &Path) -> Result<SweepSpec, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_sweep(&text, &path.display().to_string())
}
