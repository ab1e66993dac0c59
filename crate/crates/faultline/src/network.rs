//! Corridor building blocks: coupled three-phase lines, Thevenin sources,
//! delta-wye transformers, and shunt fault switch sets.
//!
//! All elements are stamped into a [`SystemBuilder`] in SI units. Sequence
//! impedances convert to phase quantities through the balanced-line
//! relation `zs = (z0 + 2 z1) / 3`, `zm = (z0 - z1) / 3`, giving a
//! symmetric phase matrix with `zs` on the diagonal and `zm` off it.
//!
//! Phase order is a, b, c everywhere; node triples are `[a, b, c]`.

use crate::emt::{BranchId, BranchKind, CoupledGroup, GroupId, NodeId, SolverSystem, SystemBuilder};
use nalgebra::DMatrix;
use num_complex::Complex64;
use std::f64::consts::PI;
use thiserror::Error;

/// Default on-state resistance floor for fault switches, ohms.
pub const FAULT_R_ON_MIN: f64 = 1e-4;
/// Default open-state resistance for fault switches, ohms. Leakage at
/// transmission voltage is tens of milliamperes; raising this further
/// degrades matrix conditioning faster than it buys fidelity.
pub const FAULT_R_OFF: f64 = 1e7;
/// Series resistance of ideal-EMF source branches, ohms.
pub const SOURCE_R_EMF: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("non-physical line parameters: {0}")]
    BadLine(String),
    #[error("non-physical source parameters: {0}")]
    BadSource(String),
    #[error("non-physical transformer parameters: {0}")]
    BadTransformer(String),
    #[error("bad fault specification: {0}")]
    BadFault(String),
    #[error(transparent)]
    Solver(#[from] crate::emt::SolverError),
}

/// Balanced phase impedance matrix in compact (self, mutual) form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseImpedanceMatrix {
    pub zs: Complex64,
    pub zm: Complex64,
}

impl PhaseImpedanceMatrix {
    pub fn z1(&self) -> Complex64 {
        self.zs - self.zm
    }

    pub fn z0(&self) -> Complex64 {
        self.zs + 2.0 * self.zm
    }

    /// Real part as a full 3x3 matrix (ohms).
    pub fn resistance_matrix(&self) -> DMatrix<f64> {
        full_3x3(self.zs.re, self.zm.re)
    }

    /// Imaginary part over omega as a full 3x3 matrix (henries).
    pub fn inductance_matrix(&self, omega: f64) -> DMatrix<f64> {
        full_3x3(self.zs.im / omega, self.zm.im / omega)
    }
}

fn full_3x3(diag: f64, off: f64) -> DMatrix<f64> {
    DMatrix::from_fn(3, 3, |r, c| if r == c { diag } else { off })
}

/// Converts zero/positive sequence impedances to the phase-domain matrix.
pub fn seq_to_phase(z0: Complex64, z1: Complex64) -> PhaseImpedanceMatrix {
    PhaseImpedanceMatrix {
        zs: (z0 + 2.0 * z1) / 3.0,
        zm: (z0 - z1) / 3.0,
    }
}

/// Per-km sequence parameters of a transposed line section.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeqLineParams {
    pub r1_ohm_per_km: f64,
    pub x1_ohm_per_km: f64,
    /// Positive-sequence shunt susceptance, siemens per km.
    pub b1_s_per_km: f64,
    pub r0_ohm_per_km: f64,
    pub x0_ohm_per_km: f64,
    pub b0_s_per_km: f64,
    pub length_km: f64,
    pub f_nom: f64,
}

impl SeqLineParams {
    pub fn validate(&self) -> Result<(), NetworkError> {
        let bad = |msg: String| Err(NetworkError::BadLine(msg));
        if !(self.length_km > 0.0) {
            return bad(format!("length must be positive, got {}", self.length_km));
        }
        if !(self.f_nom > 0.0) {
            return bad(format!("nominal frequency must be positive, got {}", self.f_nom));
        }
        if !(self.x1_ohm_per_km > 0.0) {
            return bad(format!("x1 must be positive, got {}", self.x1_ohm_per_km));
        }
        if self.x0_ohm_per_km < self.x1_ohm_per_km {
            return bad(format!(
                "x0 ({}) must be at least x1 ({})",
                self.x0_ohm_per_km, self.x1_ohm_per_km
            ));
        }
        if self.r1_ohm_per_km < 0.0 || self.r0_ohm_per_km < 0.0 {
            return bad("series resistances must be non-negative".into());
        }
        if self.b1_s_per_km < 0.0 || self.b0_s_per_km < 0.0 {
            return bad("shunt susceptances must be non-negative".into());
        }
        Ok(())
    }

    pub fn omega(&self) -> f64 {
        2.0 * PI * self.f_nom
    }

    /// Total positive-sequence series impedance, ohms.
    pub fn z1_total(&self) -> Complex64 {
        Complex64::new(self.r1_ohm_per_km, self.x1_ohm_per_km) * self.length_km
    }

    /// Total zero-sequence series impedance, ohms.
    pub fn z0_total(&self) -> Complex64 {
        Complex64::new(self.r0_ohm_per_km, self.x0_ohm_per_km) * self.length_km
    }

    fn series_matrices(&self, km: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let z1 = Complex64::new(self.r1_ohm_per_km, self.x1_ohm_per_km) * km;
        let z0 = Complex64::new(self.r0_ohm_per_km, self.x0_ohm_per_km) * km;
        let zp = seq_to_phase(z0, z1);
        (zp.resistance_matrix(), zp.inductance_matrix(self.omega()))
    }

    /// Shunt capacitance matrix for `km` of line, farads.
    fn shunt_matrix(&self, km: f64) -> Option<DMatrix<f64>> {
        if self.b1_s_per_km == 0.0 && self.b0_s_per_km == 0.0 {
            return None;
        }
        let w = self.omega();
        let c1 = self.b1_s_per_km * km / w;
        let c0 = self.b0_s_per_km * km / w;
        let cs = (c0 + 2.0 * c1) / 3.0;
        let cm = (c0 - c1) / 3.0;
        Some(full_3x3(cs, cm))
    }
}

/// One pi-section: series coupled R-L block plus half the section's shunt
/// capacitance at each end.
#[derive(Debug, Clone)]
pub struct LineSection {
    pub from: [NodeId; 3],
    pub to: [NodeId; 3],
    pub series: GroupId,
    pub shunt_from: Option<GroupId>,
    pub shunt_to: Option<GroupId>,
    pub length_km: f64,
}

/// A built line: one pi-section, or two with an internal tap for a
/// mid-line fault.
#[derive(Debug, Clone)]
pub struct BuiltLine {
    pub sections: Vec<LineSection>,
    /// Fault tap node triple when the line was split strictly inside.
    pub tap: Option<[NodeId; 3]>,
}

impl BuiltLine {
    /// Phase current into the line at the sending end (conductor `ph`).
    pub fn current_from(&self, sys: &SolverSystem, ph: usize) -> f64 {
        let sec = &self.sections[0];
        let mut i = sys.group_current(sec.series, ph);
        if let Some(sh) = sec.shunt_from {
            i += sys.group_current(sh, ph);
        }
        i
    }

    /// Phase current into the line at the receiving end.
    pub fn current_to(&self, sys: &SolverSystem, ph: usize) -> f64 {
        let sec = self.sections.last().unwrap();
        let mut i = -sys.group_current(sec.series, ph);
        if let Some(sh) = sec.shunt_to {
            i += sys.group_current(sh, ph);
        }
        i
    }
}

/// Builds a transposed line between two node triples. `split_at` in (0, 1)
/// inserts a tap at that per-unit distance from `from` and returns it for
/// fault attachment; `None`, `0.0` and `1.0` build a single section (bus
/// faults attach to the terminal nodes directly).
pub fn build_line(
    b: &mut SystemBuilder,
    params: &SeqLineParams,
    from: [NodeId; 3],
    to: [NodeId; 3],
    split_at: Option<f64>,
    h: f64,
) -> Result<BuiltLine, NetworkError> {
    params.validate()?;
    let interior = match split_at {
        Some(m) if !(0.0..=1.0).contains(&m) => {
            return Err(NetworkError::BadFault(format!(
                "split location {m} outside [0, 1]"
            )));
        }
        Some(m) if m > 0.0 && m < 1.0 => Some(m),
        _ => None,
    };

    let mut sections = Vec::new();
    let mut tap = None;
    match interior {
        None => {
            sections.push(build_section(b, params, from, to, params.length_km, h)?);
        }
        Some(m) => {
            let mid = b.alloc_triple();
            sections.push(build_section(b, params, from, mid, params.length_km * m, h)?);
            sections.push(build_section(
                b,
                params,
                mid,
                to,
                params.length_km * (1.0 - m),
                h,
            )?);
            tap = Some(mid);
        }
    }
    Ok(BuiltLine { sections, tap })
}

fn build_section(
    b: &mut SystemBuilder,
    params: &SeqLineParams,
    from: [NodeId; 3],
    to: [NodeId; 3],
    km: f64,
    h: f64,
) -> Result<LineSection, NetworkError> {
    let (r, l) = params.series_matrices(km);
    let series = b.add_group(CoupledGroup::series_rl(from.to_vec(), to.to_vec(), r, l, h)?);
    let (shunt_from, shunt_to) = match params.shunt_matrix(km / 2.0) {
        None => (None, None),
        Some(c) => {
            let grounds = vec![NodeId::GROUND; 3];
            let sf = b.add_group(CoupledGroup::shunt_c(from.to_vec(), grounds.clone(), c.clone(), h)?);
            let st = b.add_group(CoupledGroup::shunt_c(to.to_vec(), grounds, c, h)?);
            (Some(sf), Some(st))
        }
    };
    Ok(LineSection { from, to, series, shunt_from, shunt_to, length_km: km })
}

/// Thevenin equivalent: balanced EMF set behind a sequence impedance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheveninSource {
    /// EMF magnitude, per unit of `v_base_ll`.
    pub e_pu: f64,
    /// Phase-a EMF angle, radians.
    pub phase_rad: f64,
    pub z1_ohms: Complex64,
    pub z0_ohms: Complex64,
    pub f_nom: f64,
    /// Line-to-line RMS base voltage, volts.
    pub v_base_ll: f64,
}

/// Solver handles of a built Thevenin source. EMFs must be refreshed each
/// step via [`TheveninBranches::update_emfs`].
#[derive(Debug, Clone)]
pub struct TheveninBranches {
    pub emf: [BranchId; 3],
    pub series: GroupId,
    amp: f64,
    phase: f64,
    omega: f64,
}

pub fn build_thevenin(
    b: &mut SystemBuilder,
    src: &TheveninSource,
    bus: [NodeId; 3],
    h: f64,
) -> Result<TheveninBranches, NetworkError> {
    if !(src.e_pu > 0.0 && src.v_base_ll > 0.0 && src.f_nom > 0.0) {
        return Err(NetworkError::BadSource(format!(
            "e_pu {}, v_base_ll {}, f_nom {} must all be positive",
            src.e_pu, src.v_base_ll, src.f_nom
        )));
    }
    if src.z1_ohms.im <= 0.0 || src.z0_ohms.im <= 0.0 {
        return Err(NetworkError::BadSource(
            "source reactances must be positive".into(),
        ));
    }
    let internal = b.alloc_triple();
    let emf = [0, 1, 2].map(|k| {
        b.add_branch(
            internal[k],
            NodeId::GROUND,
            BranchKind::VoltageSourceBehindR { ohms: SOURCE_R_EMF, emf: 0.0 },
        )
    });
    let zp = seq_to_phase(src.z0_ohms, src.z1_ohms);
    let omega = 2.0 * PI * src.f_nom;
    let series = b.add_group(CoupledGroup::series_rl(
        internal.to_vec(),
        bus.to_vec(),
        zp.resistance_matrix(),
        zp.inductance_matrix(omega),
        h,
    )?);
    let amp = src.e_pu * (2.0f64).sqrt() * src.v_base_ll / 3.0f64.sqrt();
    Ok(TheveninBranches { emf, series, amp, phase: src.phase_rad, omega })
}

impl TheveninBranches {
    /// Sets the three EMFs for the interval ending at time `t`.
    pub fn update_emfs(&self, sys: &mut SolverSystem, t: f64) {
        let base = self.omega * t + self.phase;
        let offsets = [0.0, -2.0 * PI / 3.0, 2.0 * PI / 3.0];
        for (branch, off) in self.emf.iter().zip(offsets) {
            sys.set_source_emf(*branch, self.amp * (base + off).cos())
                .expect("thevenin emf branch");
        }
    }
}

/// Shunt fault connection of one switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultConn {
    PhaseGround(usize),
    PhasePhase(usize, usize),
}

/// Fault types. `Abc` is the ungrounded three-phase fault; `Abcg` adds the
/// ground tie.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaultType {
    Ag,
    Bg,
    Cg,
    Ab,
    Bc,
    Ca,
    Abg,
    Bcg,
    Cag,
    Abc,
    Abcg,
}

impl FaultType {
    /// Switch connections realizing this fault. Only the faulted phases get
    /// switches, so healthy phases carry exactly zero fault-branch current.
    pub fn connections(self) -> Vec<FaultConn> {
        use FaultConn::*;
        match self {
            FaultType::Ag => vec![PhaseGround(0)],
            FaultType::Bg => vec![PhaseGround(1)],
            FaultType::Cg => vec![PhaseGround(2)],
            FaultType::Ab => vec![PhasePhase(0, 1)],
            FaultType::Bc => vec![PhasePhase(1, 2)],
            FaultType::Ca => vec![PhasePhase(2, 0)],
            FaultType::Abg => vec![PhaseGround(0), PhaseGround(1)],
            FaultType::Bcg => vec![PhaseGround(1), PhaseGround(2)],
            FaultType::Cag => vec![PhaseGround(2), PhaseGround(0)],
            FaultType::Abc => vec![PhasePhase(0, 1), PhasePhase(1, 2), PhasePhase(2, 0)],
            FaultType::Abcg => vec![PhaseGround(0), PhaseGround(1), PhaseGround(2)],
        }
    }

    pub fn faulted_phases(self) -> Vec<usize> {
        let mut phases: Vec<usize> = self
            .connections()
            .into_iter()
            .flat_map(|c| match c {
                FaultConn::PhaseGround(p) => vec![p],
                FaultConn::PhasePhase(p, q) => vec![p, q],
            })
            .collect();
        phases.sort_unstable();
        phases.dedup();
        phases
    }

    pub fn involves_ground(self) -> bool {
        self.connections()
            .iter()
            .any(|c| matches!(c, FaultConn::PhaseGround(_)))
    }

    pub fn label(self) -> &'static str {
        match self {
            FaultType::Ag => "ag",
            FaultType::Bg => "bg",
            FaultType::Cg => "cg",
            FaultType::Ab => "ab",
            FaultType::Bc => "bc",
            FaultType::Ca => "ca",
            FaultType::Abg => "abg",
            FaultType::Bcg => "bcg",
            FaultType::Cag => "cag",
            FaultType::Abc => "abc",
            FaultType::Abcg => "abcg",
        }
    }
}

/// Built shunt fault: switches plus their connections, all initially open.
#[derive(Debug, Clone)]
pub struct FaultBranches {
    pub switches: Vec<(BranchId, FaultConn)>,
}

impl FaultBranches {
    pub fn set_closed(&self, sys: &mut SolverSystem, closed: bool) {
        for (id, _) in &self.switches {
            sys.set_switch(*id, closed).expect("fault switch");
        }
    }

    /// Total current leaving the network through the fault (sum over
    /// phase-ground switches), amperes.
    pub fn ground_current(&self, sys: &SolverSystem) -> f64 {
        self.switches
            .iter()
            .filter(|(_, c)| matches!(c, FaultConn::PhaseGround(_)))
            .map(|(id, _)| sys.branch_current(*id))
            .sum()
    }
}

/// Attaches fault switches of the given type at a node triple. `rf_ohms`
/// is the per-switch fault resistance (floored at [`FAULT_R_ON_MIN`]).
pub fn build_fault(
    b: &mut SystemBuilder,
    ftype: FaultType,
    rf_ohms: f64,
    nodes: [NodeId; 3],
) -> Result<FaultBranches, NetworkError> {
    if !(rf_ohms >= 0.0 && rf_ohms.is_finite()) {
        return Err(NetworkError::BadFault(format!(
            "fault resistance must be non-negative, got {rf_ohms}"
        )));
    }
    let r_on = rf_ohms.max(FAULT_R_ON_MIN);
    let switches = ftype
        .connections()
        .into_iter()
        .map(|conn| {
            let (from, to) = match conn {
                FaultConn::PhaseGround(p) => (nodes[p], NodeId::GROUND),
                FaultConn::PhasePhase(p, q) => (nodes[p], nodes[q]),
            };
            let id = b.add_branch(
                from,
                to,
                BranchKind::Switch { r_on, r_off: FAULT_R_OFF, closed: false },
            );
            (id, conn)
        })
        .collect();
    Ok(FaultBranches { switches })
}

/// Two-winding transformer, delta on winding 1 and solidly grounded wye on
/// winding 2, modeled as three single-phase units (a bank). Each unit is a
/// magnetically coupled pair of windings; the delta blocks zero-sequence
/// line current on side 1 while the grounded wye passes it on side 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformerSpec {
    pub s_rated_va: f64,
    /// Line-to-line RMS voltage of the delta side, volts.
    pub v_delta_ll: f64,
    /// Line-to-line RMS voltage of the wye side, volts.
    pub v_wye_ll: f64,
    /// Total leakage reactance, pu on the transformer base.
    pub x_leak_pu: f64,
    /// Total winding resistance, pu on the transformer base.
    pub r_winding_pu: f64,
    /// Magnetizing reactance, pu on the transformer base.
    pub x_mag_pu: f64,
    pub f_nom: f64,
}

#[derive(Debug, Clone)]
pub struct TransformerBranches {
    pub units: [GroupId; 3],
}

pub fn build_delta_wye(
    b: &mut SystemBuilder,
    spec: &TransformerSpec,
    delta_nodes: [NodeId; 3],
    wye_nodes: [NodeId; 3],
    h: f64,
) -> Result<TransformerBranches, NetworkError> {
    if !(spec.s_rated_va > 0.0 && spec.v_delta_ll > 0.0 && spec.v_wye_ll > 0.0 && spec.f_nom > 0.0)
    {
        return Err(NetworkError::BadTransformer(
            "rating, voltages and frequency must be positive".into(),
        ));
    }
    if !(spec.x_leak_pu > 0.0 && spec.x_mag_pu > 0.0 && spec.r_winding_pu >= 0.0) {
        return Err(NetworkError::BadTransformer(
            "x_leak and x_mag must be positive, r_winding non-negative".into(),
        ));
    }
    let omega = 2.0 * PI * spec.f_nom;
    // Per-unit-phase base on the delta winding: it sees line-to-line volts.
    let s_unit = spec.s_rated_va / 3.0;
    let z_base1 = spec.v_delta_ll * spec.v_delta_ll / s_unit;
    // Turns ratio: wye winding sees line-to-ground volts.
    let n = (spec.v_wye_ll / 3.0f64.sqrt()) / spec.v_delta_ll;

    // Leakage and resistance split evenly between the windings.
    let l11 = (spec.x_mag_pu + spec.x_leak_pu / 2.0) * z_base1 / omega;
    let l22 = n * n * l11;
    let m = n * spec.x_mag_pu * z_base1 / omega;
    let r1 = spec.r_winding_pu / 2.0 * z_base1;
    let r2 = n * n * r1;

    let l = DMatrix::from_row_slice(2, 2, &[l11, m, m, l22]);
    let r = DMatrix::from_row_slice(2, 2, &[r1, 0.0, 0.0, r2]);

    let units = [0usize, 1, 2].map(|k| {
        // Winding 1 of unit k spans delta corners k -> k+1; winding 2 runs
        // phase k of the wye side to ground.
        let from = vec![delta_nodes[k], wye_nodes[k]];
        let to = vec![delta_nodes[(k + 1) % 3], NodeId::GROUND];
        b.add_group(
            CoupledGroup::series_rl(from, to, r.clone(), l.clone(), h)
                .expect("transformer unit matrices are well formed"),
        )
    });
    Ok(TransformerBranches { units })
}
