//! Protection stack: full-cycle DFT phasor estimation, six-loop mho
//! distance with residual compensation, and alpha-plane line current
//! differential with phase, ground, and negative-sequence elements.
//!
//! All relay quantities are per unit on the relay measurement base.
//! Phasors follow the RMS convention: a waveform `A cos(w t + phi)`
//! estimates to `(A / sqrt(2)) exp(j phi)`. The estimator correlates
//! against the absolute sample index, so a stationary input produces a
//! stationary phasor.
//!
//! Current polarity at both line terminals is into the protected line, the
//! usual differential convention: an external through fault maps to the
//! alpha-plane point `-1`, an internal fault fed equally from both ends to
//! `+1`.

use crate::frames::{fortescue, SequenceSet};
use num_complex::Complex64;
use std::f64::consts::PI;

/// Denominator magnitude below which an impedance loop reports
/// indeterminate instead of a number, pu.
pub const LOOP_CURRENT_FLOOR: f64 = 1e-4;

/// Current magnitude below which an alpha-plane terminal is considered
/// dead, pu.
pub const ALPHA_CURRENT_FLOOR: f64 = 1e-4;

/// Magnitude of the far-point sentinel returned when only the local
/// terminal carries current.
pub const ALPHA_FAR_POINT: f64 = 1e4;

/// Sliding full-cycle DFT fundamental estimator.
///
/// Keeps the last `n` samples in a ring and a running correlation sum; each
/// push costs O(1). The correlation twiddle is indexed by the absolute
/// sample count, so the departing and arriving samples share a twiddle and
/// steady-state outputs do not rotate.
#[derive(Debug, Clone)]
pub struct PhasorEstimator {
    buf: Vec<f64>,
    twiddle: Vec<Complex64>,
    sum: Complex64,
    count: u64,
}

impl PhasorEstimator {
    /// `n` is the samples-per-cycle rate (16, 32, 64 are the usual
    /// choices).
    pub fn new(n: usize) -> Self {
        assert!(n >= 4, "window too short for a fundamental estimate");
        let twiddle = (0..n)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64))
            .collect();
        Self {
            buf: vec![0.0; n],
            twiddle,
            sum: Complex64::new(0.0, 0.0),
            count: 0,
        }
    }

    pub fn window_len(&self) -> usize {
        self.buf.len()
    }

    /// True once a full window has been seen since construction or the
    /// last reset.
    pub fn settled(&self) -> bool {
        self.count >= self.buf.len() as u64
    }

    pub fn reset(&mut self) {
        self.buf.fill(0.0);
        self.sum = Complex64::new(0.0, 0.0);
        self.count = 0;
    }

    /// Pushes one sample and returns the updated RMS fundamental phasor.
    pub fn push(&mut self, sample: f64) -> Complex64 {
        let n = self.buf.len();
        let slot = (self.count % n as u64) as usize;
        // Departing sample has the same twiddle as the arriving one.
        self.sum += (sample - self.buf[slot]) * self.twiddle[slot];
        self.buf[slot] = sample;
        self.count += 1;
        self.phasor()
    }

    pub fn phasor(&self) -> Complex64 {
        self.sum * std::f64::consts::SQRT_2 / self.buf.len() as f64
    }
}

/// Phasor estimators for one terminal's three voltages and three currents.
#[derive(Debug, Clone)]
pub struct PhasorBank {
    v: [PhasorEstimator; 3],
    i: [PhasorEstimator; 3],
}

/// One terminal's settled phasor snapshot, pu.
#[derive(Debug, Clone, Copy)]
pub struct TerminalPhasors {
    pub v: [Complex64; 3],
    pub i: [Complex64; 3],
    pub settled: bool,
}

impl PhasorBank {
    pub fn new(n: usize) -> Self {
        let mk = || PhasorEstimator::new(n);
        Self { v: [mk(), mk(), mk()], i: [mk(), mk(), mk()] }
    }

    pub fn push(&mut self, v_abc: [f64; 3], i_abc: [f64; 3]) -> TerminalPhasors {
        let mut v = [Complex64::new(0.0, 0.0); 3];
        let mut i = [Complex64::new(0.0, 0.0); 3];
        for k in 0..3 {
            v[k] = self.v[k].push(v_abc[k]);
            i[k] = self.i[k].push(i_abc[k]);
        }
        TerminalPhasors { v, i, settled: self.v[0].settled() }
    }
}

impl TerminalPhasors {
    /// Symmetrical components of the terminal currents.
    pub fn i_seq(&self) -> SequenceSet {
        fortescue(self.i[0], self.i[1], self.i[2])
    }

    /// Residual (ground) current `3 I0 = Ia + Ib + Ic`.
    pub fn residual(&self) -> Complex64 {
        self.i[0] + self.i[1] + self.i[2]
    }
}

/// Residual compensation factor `k0 = (Z0L - Z1L) / (3 Z1L)`.
pub fn k0_compute(z1l: Complex64, z0l: Complex64) -> Complex64 {
    (z0l - z1l) / (3.0 * z1l)
}

/// The six impedance loops of a phase-and-ground distance scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DistanceLoop {
    Ag,
    Bg,
    Cg,
    Ab,
    Bc,
    Ca,
}

impl DistanceLoop {
    pub const ALL: [DistanceLoop; 6] = [
        DistanceLoop::Ag,
        DistanceLoop::Bg,
        DistanceLoop::Cg,
        DistanceLoop::Ab,
        DistanceLoop::Bc,
        DistanceLoop::Ca,
    ];

    pub fn label(self) -> &'static str {
        match self {
            DistanceLoop::Ag => "Z1_AG",
            DistanceLoop::Bg => "Z1_BG",
            DistanceLoop::Cg => "Z1_CG",
            DistanceLoop::Ab => "Z1_AB",
            DistanceLoop::Bc => "Z1_BC",
            DistanceLoop::Ca => "Z1_CA",
        }
    }
}

/// Distance element settings. `k0` is derived from the line constants, not
/// free.
#[derive(Debug, Clone, Copy)]
pub struct DistanceSettings {
    /// Full-line positive-sequence impedance, pu.
    pub z1l_total: Complex64,
    /// Residual compensation factor.
    pub k0: Complex64,
    /// Zone-1 reach as a fraction of the line.
    pub zone1_reach: f64,
}

impl DistanceSettings {
    pub fn new(z1l_total: Complex64, z0l_total: Complex64, zone1_reach: f64) -> Self {
        assert!(
            zone1_reach > 0.0 && zone1_reach <= 1.0,
            "zone-1 reach must lie in (0, 1]"
        );
        Self { z1l_total, k0: k0_compute(z1l_total, z0l_total), zone1_reach }
    }

    /// Reach point of the mho characteristic.
    pub fn z_reach(&self) -> Complex64 {
        self.zone1_reach * self.z1l_total
    }
}

/// Apparent impedance of one loop, or `None` when the loop current is too
/// small to divide by.
///
/// Ground loops: `Z = V_x / (I_x + k0 * 3I0)`. Phase loops:
/// `Z = (V_x - V_y) / (I_x - I_y)`.
pub fn loop_impedance(
    v: &[Complex64; 3],
    i: &[Complex64; 3],
    lp: DistanceLoop,
    k0: Complex64,
) -> Option<Complex64> {
    let residual = i[0] + i[1] + i[2];
    let (num, den) = match lp {
        DistanceLoop::Ag => (v[0], i[0] + k0 * residual),
        DistanceLoop::Bg => (v[1], i[1] + k0 * residual),
        DistanceLoop::Cg => (v[2], i[2] + k0 * residual),
        DistanceLoop::Ab => (v[0] - v[1], i[0] - i[1]),
        DistanceLoop::Bc => (v[1] - v[2], i[1] - i[2]),
        DistanceLoop::Ca => (v[2] - v[0], i[2] - i[0]),
    };
    if den.norm() < LOOP_CURRENT_FLOOR {
        None
    } else {
        Some(num / den)
    }
}

/// Self-polarized mho test: operate iff
/// `Re[(Z_reach - Z) conj(Z)] >= 0`. The operate set is the closed disk
/// through the origin with diameter `Z_reach` (the two forms expand to the
/// same expression); the boundary operates.
pub fn mho_operate(z: Complex64, z_reach: Complex64) -> bool {
    ((z_reach - z) * z.conj()).re >= 0.0
}

/// Alpha-plane restraint settings.
#[derive(Debug, Clone, Copy)]
pub struct AlphaSettings {
    /// Outer radius of the restraint annulus; inner radius is its
    /// reciprocal.
    pub r_outer: f64,
    /// Total angular width of the restraint wedge centered on 180 degrees.
    pub blinder_deg: f64,
    /// Minimum differential current `|I_L + I_R|` for an operate verdict,
    /// pu.
    pub pickup: f64,
}

impl Default for AlphaSettings {
    fn default() -> Self {
        Self { r_outer: 6.0, blinder_deg: 195.0, pickup: 0.2 }
    }
}

impl AlphaSettings {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.r_outer > 1.0) {
            return Err(format!("alpha r_outer must exceed 1, got {}", self.r_outer));
        }
        if !(self.blinder_deg > 180.0 && self.blinder_deg < 360.0) {
            return Err(format!(
                "alpha blinder_deg must lie in (180, 360), got {}",
                self.blinder_deg
            ));
        }
        if !(self.pickup >= 0.0 && self.pickup.is_finite()) {
            return Err(format!("alpha pickup must be finite and >= 0, got {}", self.pickup));
        }
        Ok(())
    }
}

/// Alpha-plane operating point for one element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaPoint {
    /// Both terminal currents below the floor; nothing to evaluate.
    Idle,
    Point(Complex64),
}

/// Maps a terminal current pair onto the alpha plane, `alpha = I_L / I_R`.
///
/// A dead remote terminal with a live local one returns the far-point
/// sentinel at magnitude [`ALPHA_FAR_POINT`] along the local current's
/// angle; two dead terminals return [`AlphaPoint::Idle`].
pub fn alpha_map(i_local: Complex64, i_remote: Complex64) -> AlphaPoint {
    let live_l = i_local.norm() >= ALPHA_CURRENT_FLOOR;
    let live_r = i_remote.norm() >= ALPHA_CURRENT_FLOOR;
    match (live_l, live_r) {
        (false, false) => AlphaPoint::Idle,
        (true, false) => AlphaPoint::Point(Complex64::from_polar(ALPHA_FAR_POINT, i_local.arg())),
        _ => AlphaPoint::Point(i_local / i_remote),
    }
}

fn wrap_deg_180(x: f64) -> f64 {
    (x + 180.0).rem_euclid(360.0) - 180.0
}

/// Geometric restraint test: true iff `alpha` lies in the annular sector
/// `1/R <= |alpha| <= R` within `blinder_deg / 2` of 180 degrees.
pub fn alpha_restrains(alpha: Complex64, settings: &AlphaSettings) -> bool {
    let mag = alpha.norm();
    if mag < 1.0 / settings.r_outer || mag > settings.r_outer {
        return false;
    }
    let off = wrap_deg_180(alpha.arg().to_degrees() - 180.0).abs();
    off <= settings.blinder_deg / 2.0
}

/// Final region decision for one element: operate requires both escaping
/// the restraint region and enough differential current.
pub fn alpha_region(alpha: Complex64, settings: &AlphaSettings, i_diff_mag: f64) -> ElementState {
    if alpha_restrains(alpha, settings) {
        ElementState::Restrain
    } else if i_diff_mag >= settings.pickup {
        ElementState::Operate
    } else {
        ElementState::Restrain
    }
}

/// Differential element identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DiffElement {
    PhaseA,
    PhaseB,
    PhaseC,
    Ground,
    NegSeq,
}

impl DiffElement {
    pub const ALL: [DiffElement; 5] = [
        DiffElement::PhaseA,
        DiffElement::PhaseB,
        DiffElement::PhaseC,
        DiffElement::Ground,
        DiffElement::NegSeq,
    ];

    pub fn label(self) -> &'static str {
        match self {
            DiffElement::PhaseA => "87AL",
            DiffElement::PhaseB => "87BL",
            DiffElement::PhaseC => "87CL",
            DiffElement::Ground => "87GL",
            DiffElement::NegSeq => "87QL",
        }
    }
}

/// Binary element decision. `Indeterminate` marks a distance loop whose
/// current was too small to divide by; `Idle` marks a differential element
/// with both terminals dead. Neither contributes a trip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementState {
    Restrain,
    Operate,
    Indeterminate,
    Idle,
}

impl ElementState {
    pub fn label(self) -> &'static str {
        match self {
            ElementState::Restrain => "restrain",
            ElementState::Operate => "operate",
            ElementState::Indeterminate => "indeterminate",
            ElementState::Idle => "idle",
        }
    }
}

/// One differential element's evaluation.
#[derive(Debug, Clone, Copy)]
pub struct DiffVerdict {
    pub element: DiffElement,
    pub alpha: AlphaPoint,
    /// Geometric restraint flag, ignoring the pickup (for trajectory and
    /// excursion analysis). `None` when idle.
    pub in_restraint: Option<bool>,
    pub i_diff_mag: f64,
    pub state: ElementState,
}

/// Evaluates the five differential elements from two terminals' phasors.
///
/// Phase elements compare per-phase currents, the ground element the
/// residuals `3 I0`, and the negative-sequence element the `I2` components.
pub fn differential_elements(
    local: &TerminalPhasors,
    remote: &TerminalPhasors,
    settings: &AlphaSettings,
) -> [DiffVerdict; 5] {
    let seq_l = local.i_seq();
    let seq_r = remote.i_seq();
    DiffElement::ALL.map(|element| {
        let (i_l, i_r) = match element {
            DiffElement::PhaseA => (local.i[0], remote.i[0]),
            DiffElement::PhaseB => (local.i[1], remote.i[1]),
            DiffElement::PhaseC => (local.i[2], remote.i[2]),
            DiffElement::Ground => (local.residual(), remote.residual()),
            DiffElement::NegSeq => (seq_l.negative, seq_r.negative),
        };
        let i_diff_mag = (i_l + i_r).norm();
        let alpha = alpha_map(i_l, i_r);
        let (in_restraint, state) = match alpha {
            AlphaPoint::Idle => (None, ElementState::Idle),
            AlphaPoint::Point(a) => (
                Some(alpha_restrains(a, settings)),
                alpha_region(a, settings, i_diff_mag),
            ),
        };
        DiffVerdict { element, alpha, in_restraint, i_diff_mag, state }
    })
}

/// Unified element identifier across both relay families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElementId {
    Distance(DistanceLoop),
    Differential(DiffElement),
}

impl ElementId {
    pub fn label(self) -> &'static str {
        match self {
            ElementId::Distance(lp) => lp.label(),
            ElementId::Differential(el) => el.label(),
        }
    }

    pub const ALL: [ElementId; 11] = [
        ElementId::Distance(DistanceLoop::Ag),
        ElementId::Distance(DistanceLoop::Bg),
        ElementId::Distance(DistanceLoop::Cg),
        ElementId::Distance(DistanceLoop::Ab),
        ElementId::Distance(DistanceLoop::Bc),
        ElementId::Distance(DistanceLoop::Ca),
        ElementId::Differential(DiffElement::PhaseA),
        ElementId::Differential(DiffElement::PhaseB),
        ElementId::Differential(DiffElement::PhaseC),
        ElementId::Differential(DiffElement::Ground),
        ElementId::Differential(DiffElement::NegSeq),
    ];
}

/// One timestamped element decision plus the operand it was made on (an
/// impedance for distance loops, an alpha-plane point for differential
/// elements).
#[derive(Debug, Clone, Copy)]
pub struct RelayVerdict {
    pub element: ElementId,
    pub t: f64,
    pub state: ElementState,
    pub operand: Option<Complex64>,
}

/// One distance loop's evaluation.
#[derive(Debug, Clone, Copy)]
pub struct DistanceVerdict {
    pub lp: DistanceLoop,
    pub z: Option<Complex64>,
    pub state: ElementState,
}

/// Evaluates all six loops against the zone-1 mho circle.
pub fn distance_elements(
    ph: &TerminalPhasors,
    settings: &DistanceSettings,
) -> [DistanceVerdict; 6] {
    let reach = settings.z_reach();
    DistanceLoop::ALL.map(|lp| {
        let z = loop_impedance(&ph.v, &ph.i, lp, settings.k0);
        let state = match z {
            None => ElementState::Indeterminate,
            Some(z) => {
                if mho_operate(z, reach) {
                    ElementState::Operate
                } else {
                    ElementState::Restrain
                }
            }
        };
        DistanceVerdict { lp, z, state }
    })
}

/// Both relay families evaluated at one relay sample instant.
#[derive(Debug, Clone, Copy)]
pub struct RelaySample {
    pub t: f64,
    /// False during the first cycle after energization; decisions are
    /// published anyway and consumers may gate on this.
    pub settled: bool,
    pub local: TerminalPhasors,
    pub remote: TerminalPhasors,
    pub distance: [DistanceVerdict; 6],
    pub differential: [DiffVerdict; 5],
}

impl RelaySample {
    /// Flattens into the eleven per-element verdict records.
    pub fn verdicts(&self) -> Vec<RelayVerdict> {
        let mut out = Vec::with_capacity(11);
        for d in &self.distance {
            out.push(RelayVerdict {
                element: ElementId::Distance(d.lp),
                t: self.t,
                state: d.state,
                operand: d.z,
            });
        }
        for d in &self.differential {
            let operand = match d.alpha {
                AlphaPoint::Idle => None,
                AlphaPoint::Point(a) => Some(a),
            };
            out.push(RelayVerdict {
                element: ElementId::Differential(d.element),
                t: self.t,
                state: d.state,
                operand,
            });
        }
        out
    }
}

/// Complete two-terminal relay suite: phasor banks at both ends, distance
/// at the local end, differential across the line. Feed it one sample per
/// relay clock tick (`N x f_nom` per second).
#[derive(Debug, Clone)]
pub struct RelaySuite {
    pub distance: DistanceSettings,
    pub alpha: AlphaSettings,
    local: PhasorBank,
    remote: PhasorBank,
}

impl RelaySuite {
    pub fn new(distance: DistanceSettings, alpha: AlphaSettings, samples_per_cycle: usize) -> Self {
        Self {
            distance,
            alpha,
            local: PhasorBank::new(samples_per_cycle),
            remote: PhasorBank::new(samples_per_cycle),
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push_sample(
        &mut self,
        t: f64,
        v_local: [f64; 3],
        i_local: [f64; 3],
        v_remote: [f64; 3],
        i_remote: [f64; 3],
    ) -> RelaySample {
        let local = self.local.push(v_local, i_local);
        let remote = self.remote.push(v_remote, i_remote);
        let distance = distance_elements(&local, &self.distance);
        let differential = differential_elements(&local, &remote, &self.alpha);
        RelaySample { t, settled: local.settled && remote.settled, local, remote, distance, differential }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn push_cosine(est: &mut PhasorEstimator, n: usize, cycles: usize, amp: f64, phi: f64) -> Complex64 {
        let mut out = Complex64::new(0.0, 0.0);
        for k in 0..n * cycles {
            let x = amp * (2.0 * PI * k as f64 / n as f64 + phi).cos();
            out = est.push(x);
        }
        out
    }

    #[test]
    fn fcdft_exact_on_stationary_sine_for_all_window_sizes() {
        for n in [16usize, 32, 64] {
            let mut est = PhasorEstimator::new(n);
            let amp = std::f64::consts::SQRT_2; // 1 pu RMS
            let phi = 0.3;
            let ph = push_cosine(&mut est, n, 1, amp, phi);
            assert!(est.settled());
            assert!(
                (ph.norm() - 1.0).abs() < 1e-9,
                "n={n}: |phasor| = {}",
                ph.norm()
            );
            assert!((ph.arg() - phi).abs() < 1e-9, "n={n}: angle = {}", ph.arg());
        }
    }

    #[test]
    fn fcdft_rejects_dc() {
        let mut est = PhasorEstimator::new(32);
        let mut ph = Complex64::new(1.0, 1.0);
        for _ in 0..64 {
            ph = est.push(5.0);
        }
        assert!(ph.norm() < 1e-9);
    }

    #[test]
    fn fcdft_not_settled_during_first_window_and_after_reset() {
        let mut est = PhasorEstimator::new(32);
        for _ in 0..31 {
            est.push(1.0);
            assert!(!est.settled());
        }
        est.push(1.0);
        assert!(est.settled());
        est.reset();
        assert!(!est.settled());
        assert!(est.phasor().norm() == 0.0);
    }

    #[test]
    fn fcdft_amplitude_step_transitions_across_one_window() {
        // The partial-window double-frequency ripple vanishes exactly at the
        // half window for even n, so the midpoint is the exact average; one
        // full window after the step the new value is exact.
        let n = 32;
        let (a1, a2) = (1.0, 3.0);
        let phi = 0.4;
        let mut est = PhasorEstimator::new(n);
        let mut k = 0usize;
        let mut sample = |amp: f64, est: &mut PhasorEstimator| {
            let x = amp * (2.0 * PI * k as f64 / n as f64 + phi).cos();
            k += 1;
            est.push(x)
        };
        for _ in 0..2 * n {
            sample(a1, &mut est);
        }
        let mut mid = Complex64::new(0.0, 0.0);
        let mut end = Complex64::new(0.0, 0.0);
        for m in 1..=n {
            let ph = sample(a2, &mut est);
            if m == n / 2 {
                mid = ph;
            }
            if m == n {
                end = ph;
            }
        }
        let want_mid = Complex64::from_polar((a1 + a2) / 2.0 / std::f64::consts::SQRT_2, phi);
        let want_end = Complex64::from_polar(a2 / std::f64::consts::SQRT_2, phi);
        assert!((mid - want_mid).norm() < 1e-9, "mid {mid} want {want_mid}");
        assert!((end - want_end).norm() < 1e-9, "end {end} want {want_end}");
    }

    #[test]
    fn k0_formula_cases() {
        let j = Complex64::new(0.0, 1.0);
        assert!(k0_compute(j * 0.1, j * 0.1).norm() < 1e-15);
        let k = k0_compute(j * 0.1, j * 0.3);
        assert_relative_eq!(k.re, 2.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(k.im, 0.0, epsilon = 1e-12);
        let z1 = Complex64::new(0.05, 0.5);
        let k = k0_compute(z1, 4.0 * z1);
        assert_relative_eq!(k.re, 1.0, epsilon = 1e-12);
        assert_relative_eq!(k.im, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn loop_impedance_recovers_planted_impedance() {
        // Build phasors that satisfy the loop equations for a known Z and
        // check each loop reads it back.
        let z = Complex64::new(0.03, 0.26);
        let k0 = Complex64::new(0.2, -0.05);
        let i = [
            Complex64::new(1.0, -0.4),
            Complex64::new(-0.2, 0.3),
            Complex64::new(0.1, 0.2),
        ];
        let residual = i[0] + i[1] + i[2];
        // Ground loop A: V_a = Z (I_a + k0 3I0).
        let mut v = [Complex64::new(0.0, 0.0); 3];
        v[0] = z * (i[0] + k0 * residual);
        let za = loop_impedance(&v, &i, DistanceLoop::Ag, k0).unwrap();
        assert!((za - z).norm() < 1e-12);
        // Phase loop BC: V_b - V_c = Z (I_b - I_c).
        v[1] = Complex64::new(0.9, 0.1);
        v[2] = v[1] - z * (i[1] - i[2]);
        let zbc = loop_impedance(&v, &i, DistanceLoop::Bc, k0).unwrap();
        assert!((zbc - z).norm() < 1e-12);
    }

    #[test]
    fn loop_impedance_flags_dead_current() {
        let v = [Complex64::new(1.0, 0.0); 3];
        let i = [Complex64::new(1e-6, 0.0); 3];
        assert!(loop_impedance(&v, &i, DistanceLoop::Ag, Complex64::new(0.0, 0.0)).is_none());
        // AB loop difference cancels even with live per-phase currents.
        let i = [Complex64::new(0.5, 0.2), Complex64::new(0.5, 0.2), Complex64::new(0.1, 0.0)];
        assert!(loop_impedance(&v, &i, DistanceLoop::Ab, Complex64::new(0.0, 0.0)).is_none());
    }

    #[test]
    fn mho_interior_boundary_and_exterior() {
        let reach = Complex64::from_polar(0.8, 1.4);
        assert!(mho_operate(reach / 2.0, reach), "center of the disk");
        assert!(mho_operate(reach, reach), "reach point is on the boundary");
        assert!(!mho_operate(1.5 * reach, reach), "past the reach on the diameter");
    }

    #[test]
    fn mho_matches_disk_definition_on_monte_carlo_points() {
        let reach = Complex64::from_polar(0.8, 1.2);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let z = Complex64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let alg = mho_operate(z, reach);
            let disk = (z - reach / 2.0).norm() <= reach.norm() / 2.0 + 1e-9;
            let disk_strict = (z - reach / 2.0).norm() <= reach.norm() / 2.0 - 1e-9;
            // Points within 1e-9 of the circle are allowed to go either way;
            // everywhere else the two definitions must agree.
            if disk_strict {
                assert!(alg, "interior point {z} must operate");
            } else if !disk {
                assert!(!alg, "exterior point {z} must restrain");
            }
        }
    }

    #[test]
    fn alpha_map_basic_points() {
        let one = Complex64::new(1.0, 0.0);
        assert_eq!(alpha_map(one, -one), AlphaPoint::Point(-one));
        assert_eq!(alpha_map(one, one), AlphaPoint::Point(one));
        match alpha_map(Complex64::from_polar(0.5, 0.7), Complex64::new(1e-7, 0.0)) {
            AlphaPoint::Point(a) => {
                assert_relative_eq!(a.norm(), ALPHA_FAR_POINT, epsilon = 1e-9);
                assert_relative_eq!(a.arg(), 0.7, epsilon = 1e-12);
            }
            AlphaPoint::Idle => panic!("live local terminal must map to the far point"),
        }
        assert_eq!(
            alpha_map(Complex64::new(1e-7, 0.0), Complex64::new(0.0, 1e-8)),
            AlphaPoint::Idle
        );
    }

    #[test]
    fn alpha_region_reference_points() {
        let s = AlphaSettings::default();
        let m1 = Complex64::new(-1.0, 0.0);
        assert_eq!(alpha_region(m1, &s, 10.0), ElementState::Restrain);
        let p1 = Complex64::new(1.0, 0.0);
        assert_eq!(alpha_region(p1, &s, 1.0), ElementState::Operate);
        assert_eq!(
            alpha_region(p1, &s, 0.1),
            ElementState::Restrain,
            "pickup blocks the operate verdict"
        );
        let m7 = Complex64::new(-7.0, 0.0);
        assert!(!alpha_restrains(m7, &s), "magnitude escape past R_outer");
        assert_eq!(alpha_region(m7, &s, 1.0), ElementState::Operate);
        // Inner radius escape.
        assert!(!alpha_restrains(Complex64::new(-0.1, 0.0), &s));
    }

    #[test]
    fn alpha_blinder_edges() {
        let s = AlphaSettings::default();
        let half = s.blinder_deg / 2.0; // 97.5 degrees
        let inside = Complex64::from_polar(1.0, (180.0f64 - half + 0.1).to_radians());
        let outside = Complex64::from_polar(1.0, (180.0f64 - half - 0.1).to_radians());
        assert!(alpha_restrains(inside, &s));
        assert!(!alpha_restrains(outside, &s));
        // Mirror side of the wedge.
        let inside2 = Complex64::from_polar(1.0, (180.0f64 + half - 0.1).to_radians());
        let outside2 = Complex64::from_polar(1.0, (180.0f64 + half + 0.1).to_radians());
        assert!(alpha_restrains(inside2, &s));
        assert!(!alpha_restrains(outside2, &s));
    }

    #[test]
    fn alpha_region_invariant_under_joint_conjugation() {
        let s = AlphaSettings::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let i_l = Complex64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let i_r = Complex64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let (a, b) = (alpha_map(i_l, i_r), alpha_map(i_l.conj(), i_r.conj()));
            let diff = (i_l + i_r).norm();
            match (a, b) {
                (AlphaPoint::Point(a), AlphaPoint::Point(b)) => {
                    assert_eq!(
                        alpha_region(a, &s, diff),
                        alpha_region(b, &s, diff),
                        "alpha {a} vs conjugate {b}"
                    );
                }
                (AlphaPoint::Idle, AlphaPoint::Idle) => {}
                _ => panic!("idleness must be conjugation-invariant"),
            }
        }
    }

    fn balanced_phasors(i_a: Complex64) -> [Complex64; 3] {
        let a = Complex64::from_polar(1.0, 2.0 * PI / 3.0);
        [i_a, i_a * a * a, i_a * a]
    }

    #[test]
    fn differential_external_through_current_restrains_everything() {
        let i_a = Complex64::new(1.0, -0.3);
        let local = TerminalPhasors {
            v: [Complex64::new(1.0, 0.0); 3],
            i: balanced_phasors(i_a),
            settled: true,
        };
        let remote = TerminalPhasors {
            v: local.v,
            i: balanced_phasors(-i_a),
            settled: true,
        };
        let out = differential_elements(&local, &remote, &AlphaSettings::default());
        for v in &out[0..3] {
            match v.alpha {
                AlphaPoint::Point(a) => assert!((a + Complex64::new(1.0, 0.0)).norm() < 1e-12),
                AlphaPoint::Idle => panic!("phase elements see through current"),
            }
            assert_eq!(v.state, ElementState::Restrain);
        }
        // Balanced through current has no ground or negative-sequence
        // component at either end: those elements idle.
        assert_eq!(out[3].state, ElementState::Idle);
        assert_eq!(out[4].state, ElementState::Idle);
    }

    #[test]
    fn differential_single_phase_internal_fault_operates_a_g_q() {
        // Phase-A fault fed from both ends; healthy phases carry nothing.
        let zero = Complex64::new(0.0, 0.0);
        let local = TerminalPhasors {
            v: [Complex64::new(0.5, 0.0); 3],
            i: [Complex64::new(2.0, -1.0), zero, zero],
            settled: true,
        };
        let remote = TerminalPhasors {
            v: local.v,
            i: [Complex64::new(1.0, -0.5), zero, zero],
            settled: true,
        };
        let out = differential_elements(&local, &remote, &AlphaSettings::default());
        assert_eq!(out[0].state, ElementState::Operate, "87AL");
        assert_eq!(out[1].state, ElementState::Idle, "87BL");
        assert_eq!(out[2].state, ElementState::Idle, "87CL");
        assert_eq!(out[3].state, ElementState::Operate, "87GL");
        assert_eq!(out[4].state, ElementState::Operate, "87QL");
    }

    #[test]
    fn distance_elements_classify_planted_faults() {
        let z1l = Complex64::new(0.1, 1.0);
        let settings = DistanceSettings::new(z1l, 3.0 * z1l, 0.8);
        // Fault at 50%: inside zone 1. Build an AG-consistent phasor set.
        let z_fault = 0.5 * z1l;
        let i_a = Complex64::new(1.0, -0.5);
        let i = [i_a, Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)];
        let residual = i_a;
        let v = [z_fault * (i_a + settings.k0 * residual), Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0)];
        let ph = TerminalPhasors { v, i, settled: true };
        let out = distance_elements(&ph, &settings);
        assert_eq!(out[0].lp, DistanceLoop::Ag);
        assert_eq!(out[0].state, ElementState::Operate);
        assert!((out[0].z.unwrap() - z_fault).norm() < 1e-12);
        // 95%: outside the 80% reach.
        let z_far = 0.95 * z1l;
        let v = [z_far * (i_a + settings.k0 * residual), v[1], v[2]];
        let ph = TerminalPhasors { v, i, settled: true };
        let out = distance_elements(&ph, &settings);
        assert_eq!(out[0].state, ElementState::Restrain);
    }

    #[test]
    fn element_labels_are_distinct_and_stable() {
        let labels: Vec<&str> = ElementId::ALL.iter().map(|e| e.label()).collect();
        assert_eq!(
            labels,
            vec![
                "Z1_AG", "Z1_BG", "Z1_CG", "Z1_AB", "Z1_BC", "Z1_CA", "87AL", "87BL", "87CL",
                "87GL", "87QL"
            ]
        );
    }

    #[test]
    fn relay_suite_settles_after_one_cycle_and_reads_impedance() {
        // Drive the suite with synthetic waveforms of a through-load
        // condition and check the AB loop lands on the load impedance.
        let n = 32;
        let z1l = Complex64::new(0.032, 0.32);
        let settings = DistanceSettings::new(z1l, Complex64::new(0.3, 1.1), 0.8);
        let mut suite = RelaySuite::new(settings, AlphaSettings::default(), n);
        let z_load = Complex64::new(8.0, 4.0);
        // V_a = 1 pu RMS at 0 deg; I = V / Z_load per phase.
        let i_a = Complex64::new(1.0, 0.0) / z_load;
        let mut last = None;
        for k in 0..3 * n {
            let th = 2.0 * PI * k as f64 / n as f64;
            let cosw = |ph: Complex64, off: f64| {
                std::f64::consts::SQRT_2 * ph.norm() * (th + ph.arg() + off).cos()
            };
            let tpi = 2.0 * PI / 3.0;
            let v = [cosw(Complex64::new(1.0, 0.0), 0.0), cosw(Complex64::new(1.0, 0.0), -tpi), cosw(Complex64::new(1.0, 0.0), tpi)];
            let i = [cosw(i_a, 0.0), cosw(i_a, -tpi), cosw(i_a, tpi)];
            let i_rem = [-i[0], -i[1], -i[2]];
            let s = suite.push_sample(k as f64, v, i, v, i_rem);
            assert_eq!(s.settled, k >= n - 1, "settled flag at k={k}");
            last = Some(s);
        }
        let s = last.unwrap();
        let zab = s.distance[3].z.expect("balanced load current is live");
        assert!((zab - z_load).norm() < 1e-6 * z_load.norm(), "zab = {zab}");
        assert_eq!(s.distance[3].state, ElementState::Restrain);
        for d in &s.differential[0..3] {
            assert_eq!(d.state, ElementState::Restrain);
        }
    }
}
