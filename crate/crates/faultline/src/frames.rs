//! Reference-frame and symmetrical-component machinery.
//!
//! Conventions, used consistently across the crate:
//!
//! * Park transform is amplitude-invariant and d-axis aligned. A balanced
//!   cosine set `x_a = X cos(theta)` transformed at the same `theta` yields
//!   `d = X`, `q = 0`. Phase b lags a by 120 degrees, c leads by 120.
//! * Rotating quantities are packed as `Complex64` with `re = d`, `im = q`,
//!   so a phasor `X∠phi` expressed in a frame locked to its own frequency is
//!   `X * exp(j phi)`.
//! * The negative-sequence frame rotates at `-theta`. A negative-sequence
//!   set therefore appears stationary in that frame as `conj` of its
//!   conventional phasor.
//! * Instantaneous pu power in the positive frame: `p = v_d i_d + v_q i_q`,
//!   `q = v_q i_d - v_d i_q`. Reactive power delivered to the grid is
//!   positive when the q-axis current is negative.
//! * Fortescue uses `a = exp(j 2 pi / 3)`: `x1 = (xa + a xb + a^2 xc) / 3`,
//!   `x2 = (xa + a^2 xb + a xc) / 3`, `x0 = (xa + xb + xc) / 3`.

use num_complex::Complex64;
use std::f64::consts::PI;

const TWO_THIRDS_PI: f64 = 2.0 * PI / 3.0;

/// Instantaneous three-phase sample (volts, amperes, or pu).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ThreePhaseSample {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl ThreePhaseSample {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// Balanced cosine set of the given peak amplitude at electrical angle
    /// `theta` (phase a), b lagging, c leading.
    pub fn balanced(amplitude: f64, theta: f64) -> Self {
        Self {
            a: amplitude * theta.cos(),
            b: amplitude * (theta - TWO_THIRDS_PI).cos(),
            c: amplitude * (theta + TWO_THIRDS_PI).cos(),
        }
    }

    pub fn scale(self, k: f64) -> Self {
        Self::new(self.a * k, self.b * k, self.c * k)
    }

    pub fn add(self, other: Self) -> Self {
        Self::new(self.a + other.a, self.b + other.b, self.c + other.c)
    }

    pub fn is_finite(self) -> bool {
        self.a.is_finite() && self.b.is_finite() && self.c.is_finite()
    }
}

/// Rotating-frame value with the angle it was computed at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QdFrame {
    pub q: f64,
    pub d: f64,
    pub theta: f64,
}

impl QdFrame {
    pub fn new(q: f64, d: f64, theta: f64) -> Self {
        Self { q, d, theta }
    }

    /// Pack as `d + j q`.
    pub fn as_complex(self) -> Complex64 {
        Complex64::new(self.d, self.q)
    }

    pub fn from_complex(v: Complex64, theta: f64) -> Self {
        Self { q: v.im, d: v.re, theta }
    }
}

/// Amplitude-invariant Park transform at electrical angle `theta`.
pub fn park(abc: ThreePhaseSample, theta: f64) -> QdFrame {
    let (s0, c0) = theta.sin_cos();
    let (s1, c1) = (theta - TWO_THIRDS_PI).sin_cos();
    let (s2, c2) = (theta + TWO_THIRDS_PI).sin_cos();
    let d = 2.0 / 3.0 * (abc.a * c0 + abc.b * c1 + abc.c * c2);
    let q = -2.0 / 3.0 * (abc.a * s0 + abc.b * s1 + abc.c * s2);
    QdFrame { q, d, theta }
}

/// Park transform packed as `d + j q`.
pub fn park_vec(abc: ThreePhaseSample, theta: f64) -> Complex64 {
    park(abc, theta).as_complex()
}

/// Inverse of [`park`]; reconstructs the three-phase set without any
/// zero-sequence component.
pub fn inverse_park(qd: QdFrame) -> ThreePhaseSample {
    let (s0, c0) = qd.theta.sin_cos();
    let (s1, c1) = (qd.theta - TWO_THIRDS_PI).sin_cos();
    let (s2, c2) = (qd.theta + TWO_THIRDS_PI).sin_cos();
    ThreePhaseSample {
        a: qd.d * c0 - qd.q * s0,
        b: qd.d * c1 - qd.q * s1,
        c: qd.d * c2 - qd.q * s2,
    }
}

/// Instantaneous zero-sequence channel. Computed for completeness; the
/// converter controls do not act on it.
pub fn zero_sequence(abc: ThreePhaseSample) -> f64 {
    (abc.a + abc.b + abc.c) / 3.0
}

/// Symmetrical-component set of phasors (same unit as the inputs).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceSet {
    pub zero: Complex64,
    pub positive: Complex64,
    pub negative: Complex64,
}

fn fortescue_a() -> Complex64 {
    Complex64::from_polar(1.0, TWO_THIRDS_PI)
}

/// Fortescue decomposition of three phase phasors.
pub fn fortescue(xa: Complex64, xb: Complex64, xc: Complex64) -> SequenceSet {
    let a = fortescue_a();
    let a2 = a * a;
    SequenceSet {
        zero: (xa + xb + xc) / 3.0,
        positive: (xa + a * xb + a2 * xc) / 3.0,
        negative: (xa + a2 * xb + a * xc) / 3.0,
    }
}

/// Reconstructs phase phasors from a symmetrical-component set.
pub fn fortescue_inverse(seq: SequenceSet) -> (Complex64, Complex64, Complex64) {
    let a = fortescue_a();
    let a2 = a * a;
    let xa = seq.zero + seq.positive + seq.negative;
    let xb = seq.zero + a2 * seq.positive + a * seq.negative;
    let xc = seq.zero + a * seq.positive + a2 * seq.negative;
    (xa, xb, xc)
}

/// Output of one decoupled double synchronous reference frame update.
///
/// `pos`/`neg` are the cross-decoupled instantaneous frame values (full
/// bandwidth, suitable for inner current loops); `pos_filtered`/
/// `neg_filtered` are the low-pass-filtered values used for slow outer
/// loops, power calculations and magnitude checks. `dc` is the filtered
/// estimate of the stationary component, as a complex alpha-beta vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdsrfOutput {
    pub pos: Complex64,
    pub neg: Complex64,
    pub pos_filtered: Complex64,
    pub neg_filtered: Complex64,
    pub dc: Complex64,
}

/// Decoupled multiple reference frame estimator with positive, negative and
/// stationary cells.
///
/// Tracks positive- and negative-sequence frame components of an unbalanced
/// three-phase signal. The raw frame projections see the opposite sequence
/// as a 2-theta ripple; each frame subtracts the other frame's filtered
/// estimate rotated by `exp(∓ j 2 theta)` before filtering its own.
///
/// A third cell estimates the stationary (DC offset) component, which the
/// rotating frames would otherwise see as ripple at the fundamental: decay-
/// ing flux in converter filters and faulted lines lands exactly there, and
/// passing it into control loops lets the converter re-excite it. The cell
/// removes the reconstructed stationary part from both frame outputs, so
/// `pos`/`neg` are clean of it at full bandwidth.
#[derive(Debug, Clone)]
pub struct Ddsrf {
    cutoff_rad: f64,
    filt_pos: Complex64,
    filt_neg: Complex64,
    filt_dc: Complex64,
}

impl Ddsrf {
    /// `cutoff_rad` is the first-order low-pass corner in rad/s. The
    /// conventional choice is `omega_nom / sqrt(2)`.
    pub fn new(cutoff_rad: f64) -> Self {
        assert!(cutoff_rad > 0.0, "ddsrf cutoff must be positive");
        Self {
            cutoff_rad,
            filt_pos: Complex64::new(0.0, 0.0),
            filt_neg: Complex64::new(0.0, 0.0),
            filt_dc: Complex64::new(0.0, 0.0),
        }
    }

    pub fn with_default_cutoff(omega_nom: f64) -> Self {
        Self::new(omega_nom / std::f64::consts::SQRT_2)
    }

    pub fn reset(&mut self) {
        self.filt_pos = Complex64::new(0.0, 0.0);
        self.filt_neg = Complex64::new(0.0, 0.0);
        self.filt_dc = Complex64::new(0.0, 0.0);
    }

    /// One update with sample period `h` at positive-frame angle `theta`.
    pub fn step(&mut self, abc: ThreePhaseSample, theta: f64, h: f64) -> DdsrfOutput {
        let raw_pos = park_vec(abc, theta);
        let raw_neg = park_vec(abc, -theta);

        // Frame values relate to the stationary alpha-beta vector z by
        // v_frame = z exp(-j theta), so z = raw_pos exp(+j theta).
        let rot1 = Complex64::from_polar(1.0, theta);
        // In the positive frame the negative sequence shows up rotated by
        // exp(-j 2 theta) and the stationary part by exp(-j theta); mirror
        // images in the negative frame.
        let rot2 = rot1 * rot1;
        let pos = raw_pos - self.filt_neg * rot2.conj() - self.filt_dc * rot1.conj();
        let neg = raw_neg - rot2 * self.filt_pos - rot1 * self.filt_dc;
        let dc = (raw_pos - self.filt_pos) * rot1 - self.filt_neg * rot1.conj();

        let alpha = (self.cutoff_rad * h).min(1.0);
        // The stationary cell couples to the sequence cells through
        // fundamental-frequency rotations (the sequence cross-coupling spins
        // at twice that). Filtering it four times slower keeps the coupled
        // loop gain well under one, so the joint estimate converges instead
        // of orbiting the fixed point.
        let alpha_dc = (self.cutoff_rad * h / 4.0).min(1.0);
        self.filt_pos += alpha * (pos - self.filt_pos);
        self.filt_neg += alpha * (neg - self.filt_neg);
        self.filt_dc += alpha_dc * (dc - self.filt_dc);

        DdsrfOutput {
            pos,
            neg,
            pos_filtered: self.filt_pos,
            neg_filtered: self.filt_neg,
            dc: self.filt_dc,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn balanced_set_lands_on_d_axis() {
        let theta = 0.7;
        let qd = park(ThreePhaseSample::balanced(1.0, theta), theta);
        assert_relative_eq!(qd.d, 1.0, epsilon = 1e-12);
        assert_relative_eq!(qd.q, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn quarter_cycle_frame_lag_moves_to_q_axis() {
        // Signal at angle 0, frame at -90 degrees: the set leads the frame.
        let abc = ThreePhaseSample::balanced(1.0, 0.0);
        let qd = park(abc, -PI / 2.0);
        assert_relative_eq!(qd.d, 0.0, epsilon = 1e-12);
        assert_relative_eq!(qd.q, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn park_round_trip_is_identity_without_zero_sequence() {
        let abc = ThreePhaseSample::balanced(1.3, 0.4)
            .add(ThreePhaseSample::new(0.2, -0.3, 0.1));
        // Remove the zero-sequence part; Park discards it by construction.
        let z = zero_sequence(abc);
        let abc = ThreePhaseSample::new(abc.a - z, abc.b - z, abc.c - z);
        let back = inverse_park(park(abc, 1.1));
        assert_relative_eq!(back.a, abc.a, epsilon = 1e-12);
        assert_relative_eq!(back.b, abc.b, epsilon = 1e-12);
        assert_relative_eq!(back.c, abc.c, epsilon = 1e-12);
    }

    #[test]
    fn fortescue_of_balanced_set_is_pure_positive() {
        let a = fortescue_a();
        let xa = Complex64::new(1.0, 0.0);
        let seq = fortescue(xa, xa * a * a, xa * a);
        assert_relative_eq!(seq.positive.re, 1.0, epsilon = 1e-12);
        assert_relative_eq!(seq.positive.im, 0.0, epsilon = 1e-12);
        assert!(seq.negative.norm() < 1e-12);
        assert!(seq.zero.norm() < 1e-12);
    }

    #[test]
    fn fortescue_of_equal_phasors_is_pure_zero() {
        let x = Complex64::new(0.3, -0.8);
        let seq = fortescue(x, x, x);
        assert_relative_eq!(seq.zero.re, x.re, epsilon = 1e-12);
        assert_relative_eq!(seq.zero.im, x.im, epsilon = 1e-12);
        assert!(seq.positive.norm() < 1e-12);
        assert!(seq.negative.norm() < 1e-12);
    }

    #[test]
    fn fortescue_round_trip() {
        let xa = Complex64::new(1.0, 0.2);
        let xb = Complex64::new(-0.4, 0.9);
        let xc = Complex64::new(0.1, -1.1);
        let (ra, rb, rc) = fortescue_inverse(fortescue(xa, xb, xc));
        assert!((ra - xa).norm() < 1e-12);
        assert!((rb - xb).norm() < 1e-12);
        assert!((rc - xc).norm() < 1e-12);
    }

    fn mixed_signal(t: f64, omega: f64) -> ThreePhaseSample {
        // 1 pu positive plus 0.3 pu negative sequence, distinct phases.
        let pos = ThreePhaseSample::balanced(1.0, omega * t + 0.2);
        let neg = ThreePhaseSample {
            a: 0.3 * (omega * t + 1.0).cos(),
            b: 0.3 * (omega * t + 1.0 + TWO_THIRDS_PI).cos(),
            c: 0.3 * (omega * t + 1.0 - TWO_THIRDS_PI).cos(),
        };
        pos.add(neg)
    }

    #[test]
    fn ddsrf_separates_sequences_within_two_cycles() {
        let omega = 2.0 * PI * 60.0;
        let h = 50e-6;
        let mut dd = Ddsrf::with_default_cutoff(omega);
        let mut out = None;
        let steps = (2.0 / 60.0 / h) as usize;
        for k in 0..steps {
            let t = k as f64 * h;
            out = Some(dd.step(mixed_signal(t, omega), omega * t, h));
        }
        let out = out.unwrap();
        // Positive frame: 1 pu at +0.2 rad. Negative frame: 0.3 pu at -1.0
        // rad (conjugate convention, see module docs).
        let want_pos = Complex64::from_polar(1.0, 0.2);
        let want_neg = Complex64::from_polar(0.3, -1.0);
        assert!((out.pos_filtered - want_pos).norm() < 0.01);
        assert!((out.neg_filtered - want_neg).norm() < 0.01);
    }

    #[test]
    fn ddsrf_balanced_input_leaves_negative_frame_empty() {
        let omega = 2.0 * PI * 60.0;
        let h = 50e-6;
        let mut dd = Ddsrf::with_default_cutoff(omega);
        let mut out = None;
        for k in 0..((2.0 / 60.0 / h) as usize) {
            let t = k as f64 * h;
            out = Some(dd.step(ThreePhaseSample::balanced(1.0, omega * t), omega * t, h));
        }
        let out = out.unwrap();
        assert!(out.neg_filtered.norm() < 0.01);
        assert!((out.pos_filtered - Complex64::new(1.0, 0.0)).norm() < 0.01);
    }

    #[test]
    fn ddsrf_isolates_dc_offsets_from_both_frames() {
        let omega = 2.0 * PI * 60.0;
        let h = 50e-6;
        let mut dd = Ddsrf::with_default_cutoff(omega);
        // Unbalanced fundamental plus per-phase offsets, as left behind by
        // trapped flux.
        let off = ThreePhaseSample::new(0.20, -0.10, 0.05);
        let steps = (5.0 / 60.0 / h) as usize;
        let cycle = (1.0 / 60.0 / h) as usize;
        let mut ripple_pos: f64 = 0.0;
        let mut ripple_neg: f64 = 0.0;
        let mut last = None;
        let want_pos = Complex64::from_polar(1.0, 0.2);
        let want_neg = Complex64::from_polar(0.3, -1.0);
        for k in 0..steps {
            let t = k as f64 * h;
            let out = dd.step(mixed_signal(t, omega).add(off), omega * t, h);
            if k >= steps - cycle {
                // Full-bandwidth channels must hold the planted constants
                // without fundamental-frequency ripple.
                ripple_pos = ripple_pos.max((out.pos - want_pos).norm());
                ripple_neg = ripple_neg.max((out.neg - want_neg).norm());
            }
            last = Some(out);
        }
        let out = last.unwrap();
        // Stationary estimate equals the alpha-beta image of the offsets.
        let a = Complex64::from_polar(1.0, TWO_THIRDS_PI);
        let want_dc = (Complex64::new(off.a, 0.0) + a * off.b + a * a * off.c) * (2.0 / 3.0);
        assert!((out.dc - want_dc).norm() < 1e-3, "dc estimate off: {}", out.dc);
        assert!(ripple_pos < 1e-3, "positive frame ripple {ripple_pos}");
        assert!(ripple_neg < 1e-3, "negative frame ripple {ripple_neg}");
    }
}
