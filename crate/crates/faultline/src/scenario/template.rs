//! The bundled two-terminal study network: a 230 kV, 60 Hz, 100 km
//! transposed corridor between two infeeds, protected by a distance relay
//! at terminal 1 and a line current differential across both ends.
//!
//! Terminal infeeds are selectable: a synchronous Thevenin source, a
//! converter (grid-forming or grid-following) behind its delta-wye unit
//! transformer, or nothing. Faults attach at a fractional location along
//! the line; 0 and 1 land on the terminal buses, electrically outside the
//! differential zone.
//!
//! All template numbers are typical-line defaults, declared here in one
//! place.

use crate::emt::{BranchId, BranchKind, NodeId, SolverSystem, SystemBuilder};
use crate::frames::ThreePhaseSample;
use crate::network::{
    build_delta_wye, build_fault, build_line, build_thevenin, BuiltLine, FaultBranches,
    NetworkError, SeqLineParams, TheveninBranches, TheveninSource, TransformerSpec,
};
use crate::scenario::config::{Infeed, LineOverride, Scenario};
use num_complex::Complex64;
use std::f64::consts::PI;

/// Identifiers of the bundled templates, with one-line descriptions.
pub const TEMPLATES: &[(&str, &str)] = &[(
    "line2324",
    "230 kV, 60 Hz, 100 km corridor; terminal 1 selectable SG/GFM/GFL, terminal 2 grid",
)];

/// HV system line-to-line RMS base, volts.
pub const HV_V_LL: f64 = 230e3;
/// Relay measurement power base, VA.
pub const RELAY_S: f64 = 100e6;

/// Converter rating and LV-side base.
pub const CONV_S: f64 = 400e6;
pub const CONV_V_LL: f64 = 34.5e3;
/// Converter filter, pu on the converter base. Must match the control
/// defaults so the inner loops' plant model is the built plant.
pub const CONV_FILTER_X: f64 = 0.10;
pub const CONV_FILTER_R: f64 = 0.005;

/// Line constants, per km.
pub fn line_params(f_nom: f64, ov: &LineOverride) -> SeqLineParams {
    SeqLineParams {
        r1_ohm_per_km: 0.032,
        x1_ohm_per_km: 0.32,
        b1_s_per_km: ov.b1_s_per_km.unwrap_or(3.5e-6),
        r0_ohm_per_km: 0.30,
        x0_ohm_per_km: 1.10,
        b0_s_per_km: ov.b0_s_per_km.unwrap_or(2.2e-6),
        length_km: 100.0,
        f_nom,
    }
}

fn sg_terminal1(f_nom: f64) -> TheveninSource {
    TheveninSource {
        e_pu: 1.0,
        phase_rad: 8.0_f64.to_radians(),
        z1_ohms: Complex64::new(0.6, 12.0),
        z0_ohms: Complex64::new(1.0, 15.0),
        f_nom,
        v_base_ll: HV_V_LL,
    }
}

fn sg_terminal2(f_nom: f64) -> TheveninSource {
    TheveninSource {
        e_pu: 1.0,
        phase_rad: 0.0,
        z1_ohms: Complex64::new(0.8, 16.0),
        z0_ohms: Complex64::new(1.2, 20.0),
        f_nom,
        v_base_ll: HV_V_LL,
    }
}

fn unit_transformer(f_nom: f64) -> TransformerSpec {
    TransformerSpec {
        s_rated_va: CONV_S,
        v_delta_ll: CONV_V_LL,
        v_wye_ll: HV_V_LL,
        x_leak_pu: 0.10,
        r_winding_pu: 0.005,
        x_mag_pu: 300.0,
        f_nom,
    }
}

/// Relay per-unit scaling. Waveforms are normalized by RMS bases, so the
/// RMS-convention phasor of a rated signal has magnitude one; the rated
/// waveform itself peaks at sqrt(2) in these units.
#[derive(Debug, Clone, Copy)]
pub struct RelayBase {
    pub s_va: f64,
    pub v_ll: f64,
}

impl RelayBase {
    pub fn v_ln_rms(&self) -> f64 {
        self.v_ll / 3.0f64.sqrt()
    }

    pub fn i_rms(&self) -> f64 {
        self.s_va / (3.0f64.sqrt() * self.v_ll)
    }

    /// Impedance base, ohms.
    pub fn z_ohms(&self) -> f64 {
        self.v_ll * self.v_ll / self.s_va
    }
}

/// A converter infeed's electrical plant: per phase, an EMF source behind
/// the filter resistance, then the filter inductor onto the LV bus, with
/// the unit transformer stepping up to the line terminal.
#[derive(Debug, Clone)]
pub struct ConverterPlant {
    pub lv_bus: [NodeId; 3],
    emf: [BranchId; 3],
    filter: [BranchId; 3],
    /// Modulation pu -> volts.
    pub v_ln_peak: f64,
    pub i_peak: f64,
}

impl ConverterPlant {
    /// LV bus voltages and filter currents (converter into bus), pu on
    /// the converter base.
    pub fn measure(&self, sys: &SolverSystem) -> (ThreePhaseSample, ThreePhaseSample) {
        let v = ThreePhaseSample::new(
            sys.node_voltage(self.lv_bus[0]) / self.v_ln_peak,
            sys.node_voltage(self.lv_bus[1]) / self.v_ln_peak,
            sys.node_voltage(self.lv_bus[2]) / self.v_ln_peak,
        );
        let i = ThreePhaseSample::new(
            sys.branch_current(self.filter[0]) / self.i_peak,
            sys.branch_current(self.filter[1]) / self.i_peak,
            sys.branch_current(self.filter[2]) / self.i_peak,
        );
        (v, i)
    }

    /// Applies a modulation sample (pu) as the EMFs for the next step.
    pub fn apply_modulation(&self, sys: &mut SolverSystem, m: ThreePhaseSample) {
        sys.set_source_emf(self.emf[0], m.a * self.v_ln_peak).expect("emf a");
        sys.set_source_emf(self.emf[1], m.b * self.v_ln_peak).expect("emf b");
        sys.set_source_emf(self.emf[2], m.c * self.v_ln_peak).expect("emf c");
    }
}

fn build_converter_plant(
    b: &mut SystemBuilder,
    hv_bus: [NodeId; 3],
    f_nom: f64,
    h: f64,
) -> Result<ConverterPlant, NetworkError> {
    let lv_bus = b.alloc_triple();
    build_delta_wye(b, &unit_transformer(f_nom), lv_bus, hv_bus, h)?;
    let z_base = CONV_V_LL * CONV_V_LL / CONV_S;
    let omega = 2.0 * PI * f_nom;
    let l_f = CONV_FILTER_X * z_base / omega;
    let r_f = CONV_FILTER_R * z_base;
    let mut emf = [BranchId(usize::MAX); 3];
    let mut filter = [BranchId(usize::MAX); 3];
    for ph in 0..3 {
        let mid = b.alloc_node();
        emf[ph] = b.add_branch(mid, NodeId::GROUND, BranchKind::VoltageSourceBehindR {
            ohms: r_f,
            emf: 0.0,
        });
        filter[ph] = b.add_branch(mid, lv_bus[ph], BranchKind::Inductor {
            henries: l_f,
            i_init: 0.0,
            v_init: 0.0,
        });
    }
    Ok(ConverterPlant {
        lv_bus,
        emf,
        filter,
        v_ln_peak: CONV_V_LL * (2.0f64 / 3.0).sqrt(),
        i_peak: CONV_S / (3.0f64.sqrt() * CONV_V_LL) * 2.0f64.sqrt(),
    })
}

/// One terminal's built infeed.
#[derive(Debug, Clone)]
pub enum InfeedPlant {
    Open,
    Thevenin(TheveninBranches),
    Converter(ConverterPlant),
}

/// The assembled study network for one scenario.
#[derive(Debug)]
pub struct StudyNetwork {
    pub sys: SolverSystem,
    pub term1: [NodeId; 3],
    pub term2: [NodeId; 3],
    pub line: BuiltLine,
    pub fault: Option<FaultBranches>,
    pub infeed1: InfeedPlant,
    pub infeed2: InfeedPlant,
    pub relay_base: RelayBase,
    pub f_nom: f64,
    /// Full-line positive- and zero-sequence impedances, relay pu.
    pub z1l_pu: Complex64,
    pub z0l_pu: Complex64,
}

impl StudyNetwork {
    /// Terminal voltages, relay pu (peak-normalized instantaneous).
    pub fn v_term_pu(&self, term1: bool) -> [f64; 3] {
        let nodes = if term1 { &self.term1 } else { &self.term2 };
        let vb = self.relay_base.v_ln_rms();
        [
            self.sys.node_voltage(nodes[0]) / vb,
            self.sys.node_voltage(nodes[1]) / vb,
            self.sys.node_voltage(nodes[2]) / vb,
        ]
    }

    /// Line currents into the line at a terminal, relay pu.
    pub fn i_line_pu(&self, term1: bool) -> [f64; 3] {
        let ib = self.relay_base.i_rms();
        if term1 {
            [
                self.line.current_from(&self.sys, 0) / ib,
                self.line.current_from(&self.sys, 1) / ib,
                self.line.current_from(&self.sys, 2) / ib,
            ]
        } else {
            [
                self.line.current_to(&self.sys, 0) / ib,
                self.line.current_to(&self.sys, 1) / ib,
                self.line.current_to(&self.sys, 2) / ib,
            ]
        }
    }

    /// Terminal voltages in volts and line currents in amps, for export.
    pub fn waveform_si(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for ph in 0..3 {
            out[ph] = self.sys.node_voltage(self.term1[ph]);
            out[3 + ph] = self.line.current_from(&self.sys, ph);
            out[6 + ph] = self.sys.node_voltage(self.term2[ph]);
            out[9 + ph] = self.line.current_to(&self.sys, ph);
        }
        out
    }
}

/// Builds the full electrical network for a validated scenario.
pub fn build_template(scenario: &Scenario) -> Result<StudyNetwork, NetworkError> {
    let h = scenario.sim.h;
    let f_nom = scenario.sim.f_nom;
    let params = line_params(f_nom, &scenario.line_override);

    let mut b = SystemBuilder::new();
    let term1 = b.alloc_triple();
    let term2 = b.alloc_triple();

    // Interior fault locations split the line at the fault point; bus
    // faults (m = 0, 1) attach at the terminals without a split.
    let split = scenario.fault.and_then(|f| {
        if f.location > 0.0 && f.location < 1.0 {
            Some(f.location)
        } else {
            None
        }
    });
    let line = build_line(&mut b, &params, term1, term2, split, h)?;

    let fault = match scenario.fault {
        None => None,
        Some(f) => {
            let nodes = if let Some(tap) = line.tap {
                tap
            } else if f.location <= 0.0 {
                term1
            } else {
                term2
            };
            Some(build_fault(&mut b, f.ftype, f.rf_ohms, nodes)?)
        }
    };

    let infeed1 = match scenario.infeed_terminal1 {
        Infeed::Sg => InfeedPlant::Thevenin(build_thevenin(&mut b, &sg_terminal1(f_nom), term1, h)?),
        Infeed::Gfm | Infeed::Gfl => {
            InfeedPlant::Converter(build_converter_plant(&mut b, term1, f_nom, h)?)
        }
        Infeed::Open => InfeedPlant::Open,
    };
    let infeed2 = match scenario.infeed_terminal2 {
        Infeed::Sg => InfeedPlant::Thevenin(build_thevenin(&mut b, &sg_terminal2(f_nom), term2, h)?),
        Infeed::Gfm | Infeed::Gfl => {
            InfeedPlant::Converter(build_converter_plant(&mut b, term2, f_nom, h)?)
        }
        Infeed::Open => InfeedPlant::Open,
    };

    let sys = b.build(h).map_err(NetworkError::Solver)?;

    let relay_base = RelayBase { s_va: RELAY_S, v_ll: HV_V_LL };
    let z_base = relay_base.z_ohms();
    Ok(StudyNetwork {
        sys,
        term1,
        term2,
        line,
        fault,
        infeed1,
        infeed2,
        relay_base,
        f_nom,
        z1l_pu: params.z1_total() / z_base,
        z0l_pu: params.z0_total() / z_base,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::config::parse_scenario;

    #[test]
    fn template_builds_for_every_infeed_mix() {
        for (i1, i2) in [("sg", "sg"), ("gfm", "sg"), ("gfl", "sg"), ("sg", "open"), ("gfm", "gfl")] {
            let text = format!(
                "template = \"line2324\"\ninfeed_terminal1 = \"{i1}\"\ninfeed_terminal2 = \"{i2}\"\n[fault]\nftype = \"abg\"\nlocation = 0.8\n"
            );
            let s = parse_scenario(&text, "test").unwrap();
            let net = build_template(&s).expect("template must build");
            assert!(net.fault.is_some());
            // Z1L = 3.2 + j32 ohms on a 529 ohm base.
            assert!((net.z1l_pu - Complex64::new(3.2, 32.0) / 529.0).norm() < 1e-12);
        }
    }

    #[test]
    fn bus_fault_attaches_without_a_split() {
        let s = parse_scenario(
            "template = \"line2324\"\n[fault]\nftype = \"ag\"\nlocation = 1.0\n",
            "test",
        )
        .unwrap();
        let net = build_template(&s).unwrap();
        assert!(net.line.tap.is_none());
        assert_eq!(net.line.sections.len(), 1);
    }
}
