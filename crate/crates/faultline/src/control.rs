//! Converter controls: grid-forming (virtual synchronous machine with a
//! reactive droop and a virtual admittance) and grid-following (PLL with
//! power-derived current references), both feeding dual-sequence inner
//! current loops through ride-through shaping and the sequence current
//! limiter.
//!
//! Everything here works in per unit on the converter base. Rotating-frame
//! vectors are `d + j q` (see [`crate::frames`]); the positive frame spins
//! at `+theta`, the negative frame at `-theta`. All integrators are
//! forward-Euler at the solver step, which at 50 us is two decades above
//! the fastest closed-loop pole used here.
//!
//! Sign conventions worth stating once: reactive power delivered to the
//! grid corresponds to negative q-axis current; the ride-through boost
//! therefore subtracts from `iq_pos`. The negative-sequence injection that
//! opposes an inductive network's negative-sequence voltage is
//! `i_neg = -j k v_neg` in the negative frame (the frame conjugates
//! impedances, flipping the sign of the familiar `+j`).

use crate::frames::{inverse_park, Ddsrf, QdFrame, ThreePhaseSample};
use crate::limiter::{limit_and_prioritize, LimiterReport, PriorityMode, SequenceRefs};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("converter frequency left the stable band: omega = {omega_pu:.4} pu at t = {t:.4} s")]
    Unstable { omega_pu: f64, t: f64 },
    #[error("non-finite control measurement at t = {0:.4} s")]
    NonFinite(f64),
}

/// Hard abort band for converter frequency, pu. A run leaving this band is
/// aborted; the narrower [0.9, 1.1] band only flags the result as
/// unstable (checked by the scenario runner).
pub const OMEGA_ABORT_BAND: (f64, f64) = (0.5, 1.5);
pub const OMEGA_FLAG_BAND: (f64, f64) = (0.9, 1.1);

/// Proportional-integral regulator with output clamping and conditional
/// anti-windup (the integrator freezes while pushing further into the
/// clamp).
#[derive(Debug, Clone)]
pub struct PiController {
    pub kp: f64,
    pub ki: f64,
    pub out_min: f64,
    pub out_max: f64,
    integ: f64,
}

impl PiController {
    pub fn new(kp: f64, ki: f64, out_min: f64, out_max: f64) -> Self {
        Self { kp, ki, out_min, out_max, integ: 0.0 }
    }

    pub fn unbounded(kp: f64, ki: f64) -> Self {
        Self::new(kp, ki, f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn reset(&mut self) {
        self.integ = 0.0;
    }

    pub fn step(&mut self, err: f64, h: f64) -> f64 {
        let raw = self.kp * err + self.integ + self.ki * err * h;
        let out = raw.clamp(self.out_min, self.out_max);
        if raw == out || (raw > out) != (err > 0.0) {
            self.integ += self.ki * err * h;
        }
        out
    }
}

/// Ride-through shaping parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LvrtParams {
    /// Latch enters below this positive-sequence voltage, pu.
    pub v_enter: f64,
    /// Latch releases above this, pu. Must exceed `v_enter`.
    pub v_exit: f64,
    /// Positive-sequence reactive boost per pu of voltage depression.
    pub k_pos: f64,
    /// Negative-sequence injection per pu of negative-sequence voltage.
    pub k_neg: f64,
}

impl Default for LvrtParams {
    fn default() -> Self {
        Self { v_enter: 0.9, v_exit: 0.95, k_pos: 2.0, k_neg: 2.0 }
    }
}

/// Hysteretic ride-through latch. The dead band between the two thresholds
/// means a monotone voltage ramp toggles the state exactly once.
///
/// The latch arms only after the voltage has first cleared the exit
/// threshold, so the boost never fights the commissioning ramp: a plant
/// that has not yet established nominal voltage is starting up, not riding
/// through a fault.
#[derive(Debug, Clone, Copy, Default)]
pub struct LvrtState {
    pub active: bool,
    pub armed: bool,
}

impl LvrtState {
    pub fn update(&mut self, v_pos_mag: f64, p: &LvrtParams) -> bool {
        if !self.armed {
            if v_pos_mag > p.v_exit {
                self.armed = true;
            }
            return false;
        }
        if self.active {
            if v_pos_mag > p.v_exit {
                self.active = false;
            }
        } else if v_pos_mag < p.v_enter {
            self.active = true;
        }
        self.active
    }
}

/// Applies ride-through shaping to unconstrained current references.
///
/// While the latch is active, a reactive boost proportional to the voltage
/// depression is added on the positive sequence, and the negative-sequence
/// reference is replaced by the opposing injection `-j k_neg v_neg`.
pub fn lvrt_shape(
    refs: SequenceRefs,
    v_pos_mag: f64,
    v_neg: Complex64,
    active: bool,
    p: &LvrtParams,
) -> SequenceRefs {
    if !active {
        return refs;
    }
    let depression = (p.v_enter - v_pos_mag).max(0.0);
    let i_neg = Complex64::new(0.0, -p.k_neg) * v_neg;
    SequenceRefs {
        id_pos: refs.id_pos,
        iq_pos: refs.iq_pos - p.k_pos * depression,
        id_neg: i_neg.re,
        iq_neg: i_neg.im,
    }
}

/// Grid-forming converter parameters, pu on the converter base.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GfmParams {
    /// Virtual rotor time constant, seconds.
    pub vsg_inertia_s: f64,
    /// Frequency damping, pu power per pu frequency deviation.
    pub vsg_damping: f64,
    /// Reactive droop gain, pu reactive per pu voltage error.
    pub q_droop_gain: f64,
    /// Q-loop PI gains; the PI output trims the voltage reference and is
    /// clamped to +/- `q_trim_limit`.
    pub q_kp: f64,
    pub q_ki: f64,
    pub q_trim_limit: f64,
    /// Virtual admittance resistance and reactance, pu.
    pub virtual_r: f64,
    pub virtual_x: f64,
    /// Inner current loop gains, pu.
    pub inner_kp: f64,
    pub inner_ki: f64,
    /// Converter filter reactance and resistance, pu (must match the built
    /// electrical filter).
    pub filter_x: f64,
    pub filter_r: f64,
    pub v_set: f64,
    pub p_set: f64,
    pub q_set: f64,
    pub i_max: f64,
    /// Active-power setpoint soft-start ramp, seconds.
    pub p_ramp_s: f64,
    /// Voltage-reference soft-start ramp, seconds. Energizing against the
    /// modulation ceiling traps flux the weak filter resistance cannot
    /// bleed; ramping the reference keeps startup inside the linear range.
    pub v_ramp_s: f64,
    pub lvrt: LvrtParams,
}

impl Default for GfmParams {
    fn default() -> Self {
        Self {
            vsg_inertia_s: 2.0,
            vsg_damping: 50.0,
            q_droop_gain: 2.0,
            q_kp: 0.1,
            q_ki: 20.0,
            q_trim_limit: 0.2,
            virtual_r: 0.05,
            virtual_x: 0.15,
            inner_kp: 0.5,
            inner_ki: 100.0,
            filter_x: 0.10,
            filter_r: 0.005,
            v_set: 1.0,
            p_set: 0.5,
            q_set: 0.0,
            i_max: 1.2,
            p_ramp_s: 0.2,
            v_ramp_s: 0.2,
            lvrt: LvrtParams::default(),
        }
    }
}

/// Grid-following converter parameters, pu on the converter base.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GflParams {
    pub pll_kp: f64,
    pub pll_ki: f64,
    pub inner_kp: f64,
    pub inner_ki: f64,
    pub filter_x: f64,
    pub filter_r: f64,
    /// Divisor floor for the reference computation, pu voltage.
    pub v_floor: f64,
    pub p_set: f64,
    pub q_set: f64,
    pub i_max: f64,
    pub p_ramp_s: f64,
    pub lvrt: LvrtParams,
}

impl Default for GflParams {
    fn default() -> Self {
        // PLL gains give a ~20 Hz bandwidth with damping 0.7 at 1 pu
        // voltage: omega_n = sqrt(ki), zeta = kp / (2 sqrt(ki)).
        Self {
            pll_kp: 178.0,
            pll_ki: 15_791.0,
            inner_kp: 0.5,
            inner_ki: 100.0,
            filter_x: 0.10,
            filter_r: 0.005,
            v_floor: 0.1,
            p_set: 0.5,
            q_set: 0.0,
            i_max: 1.2,
            p_ramp_s: 0.2,
            lvrt: LvrtParams::default(),
        }
    }
}

/// Virtual rotor state.
#[derive(Debug, Clone, Copy)]
pub struct VsgState {
    /// Angle relative to the nominal rotating frame, radians.
    pub delta: f64,
    pub omega_pu: f64,
}

impl Default for VsgState {
    fn default() -> Self {
        Self { delta: 0.0, omega_pu: 1.0 }
    }
}

/// One virtual-rotor update:
/// `d(omega)/dt = (p_set - p_meas) / Ta - kd (omega - 1)`,
/// `d(delta)/dt = omega_nom (omega - 1)`.
pub fn vsg_step(
    state: &mut VsgState,
    p_meas: f64,
    p_set: f64,
    params: &GfmParams,
    omega_nom: f64,
    t: f64,
    h: f64,
) -> Result<(), ControlError> {
    if !p_meas.is_finite() {
        return Err(ControlError::NonFinite(t));
    }
    let domega = (p_set - p_meas) / params.vsg_inertia_s
        - params.vsg_damping * (state.omega_pu - 1.0);
    state.omega_pu += domega * h;
    state.delta += omega_nom * (state.omega_pu - 1.0) * h;
    if !(OMEGA_ABORT_BAND.0..=OMEGA_ABORT_BAND.1).contains(&state.omega_pu) {
        return Err(ControlError::Unstable { omega_pu: state.omega_pu, t });
    }
    Ok(())
}

/// One reactive-droop update. Returns the voltage reference magnitude:
/// `v_set` plus a clamped PI trim driving `q_meas` toward
/// `q_set + kq (v_set - v_meas)`. `v_set` is passed separately from the
/// gains so a soft-start ramp can stand in for the nominal setpoint.
pub fn q_droop_step(
    pi: &mut PiController,
    q_meas: f64,
    v_meas_mag: f64,
    v_set: f64,
    params: &GfmParams,
    h: f64,
) -> f64 {
    let q_target = params.q_set + params.q_droop_gain * (v_set - v_meas_mag);
    v_set + pi.step(q_target - q_meas, h)
}

/// Virtual admittance integrator state: the states are the unconstrained
/// sequence current references themselves.
#[derive(Debug, Clone, Copy, Default)]
pub struct VirtualAdmittance {
    pub i_pos: Complex64,
    pub i_neg: Complex64,
}

impl VirtualAdmittance {
    /// Integrates the virtual R-L response to the voltage error in each
    /// sequence frame. `v_ref_pos` is the positive-sequence reference
    /// vector (the negative-sequence reference is zero: a healthy stiff
    /// source carries no negative sequence).
    ///
    /// The per-frame dynamics `di/dt = a i + b` with
    /// `a = -(rv/lv) omega_nom ∓ j omega` are advanced with the exact
    /// one-step exponential for a constant drive, which keeps the decay
    /// envelope at `rv/lv * omega_nom` independent of the step size.
    pub fn step(
        &mut self,
        v_ref_pos: Complex64,
        v_meas_pos: Complex64,
        v_meas_neg: Complex64,
        omega_pu: f64,
        params: &GfmParams,
        omega_nom: f64,
        h: f64,
    ) -> SequenceRefs {
        let l_inv = omega_nom / params.virtual_x;
        let omega = omega_pu * omega_nom;
        let decay = -params.virtual_r * l_inv;

        let advance = |i: Complex64, a: Complex64, b: Complex64| -> Complex64 {
            if a.norm() * h < 1e-12 {
                i + b * h
            } else {
                let ea = (a * h).exp();
                i * ea + b * (ea - 1.0) / a
            }
        };

        let a_pos = Complex64::new(decay, -omega);
        let b_pos = l_inv * (v_ref_pos - v_meas_pos);
        self.i_pos = advance(self.i_pos, a_pos, b_pos);

        let a_neg = Complex64::new(decay, omega);
        let b_neg = l_inv * (-v_meas_neg);
        self.i_neg = advance(self.i_neg, a_neg, b_neg);

        SequenceRefs::from_vecs(self.i_pos, self.i_neg)
    }
}

/// Phase-locked loop state. `theta` is the absolute electrical angle.
#[derive(Debug, Clone, Copy, Default)]
pub struct PllState {
    pub theta: f64,
    integ: f64,
    pub omega_pu: f64,
}

/// One synchronous-frame PLL update driving the q-axis voltage to zero.
pub fn pll_step(
    state: &mut PllState,
    v_q_pos: f64,
    params: &GflParams,
    omega_nom: f64,
    t: f64,
    h: f64,
) -> Result<f64, ControlError> {
    if !v_q_pos.is_finite() {
        return Err(ControlError::NonFinite(t));
    }
    state.integ += params.pll_ki * v_q_pos * h;
    let omega = omega_nom + params.pll_kp * v_q_pos + state.integ;
    state.theta += omega * h;
    if state.theta > 2.0 * std::f64::consts::PI {
        state.theta -= 2.0 * std::f64::consts::PI * (state.theta / (2.0 * std::f64::consts::PI)).floor();
    }
    state.omega_pu = omega / omega_nom;
    if !(OMEGA_ABORT_BAND.0..=OMEGA_ABORT_BAND.1).contains(&state.omega_pu) {
        return Err(ControlError::Unstable { omega_pu: state.omega_pu, t });
    }
    Ok(state.theta)
}

/// Dual-sequence synchronous-frame current regulator with cross-coupling
/// compensation and voltage feedforward.
#[derive(Debug, Clone)]
pub struct InnerCurrentLoop {
    pi_pos_d: PiController,
    pi_pos_q: PiController,
    pi_neg_d: PiController,
    pi_neg_q: PiController,
    filter_x: f64,
    filter_r: f64,
}

impl InnerCurrentLoop {
    pub fn new(kp: f64, ki: f64, filter_x: f64, filter_r: f64) -> Self {
        // Generous per-axis clamp; the physical modulation ceiling is
        // enforced on the synthesized waveform.
        let mk = || PiController::new(kp, ki, -1.5, 1.5);
        Self {
            pi_pos_d: mk(),
            pi_pos_q: mk(),
            pi_neg_d: mk(),
            pi_neg_q: mk(),
            filter_x,
            filter_r,
        }
    }

    /// One update. Returns the modulation voltage vectors for the two
    /// sequence frames. In each frame the plant is
    /// `v_m = r i + (x/w_nom) di/dt ± j w x i + v_meas`; the PI acts on the
    /// current error and the last two terms are fed forward.
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &mut self,
        refs: &SequenceRefs,
        i_pos: Complex64,
        i_neg: Complex64,
        v_pos: Complex64,
        v_neg: Complex64,
        omega_pu: f64,
        h: f64,
    ) -> (Complex64, Complex64) {
        let jwx = Complex64::new(0.0, omega_pu * self.filter_x);
        let u_pos = Complex64::new(
            self.pi_pos_d.step(refs.id_pos - i_pos.re, h),
            self.pi_pos_q.step(refs.iq_pos - i_pos.im, h),
        );
        let u_neg = Complex64::new(
            self.pi_neg_d.step(refs.id_neg - i_neg.re, h),
            self.pi_neg_q.step(refs.iq_neg - i_neg.im, h),
        );
        let vm_pos = v_pos + u_pos + jwx * i_pos + self.filter_r * i_pos;
        let vm_neg = v_neg + u_neg - jwx * i_neg + self.filter_r * i_neg;
        (vm_pos, vm_neg)
    }

    pub fn reset(&mut self) {
        self.pi_pos_d.reset();
        self.pi_pos_q.reset();
        self.pi_neg_d.reset();
        self.pi_neg_q.reset();
    }
}

/// Everything a control step reports back to the scenario runner.
#[derive(Debug, Clone, Copy)]
pub struct ControlStep {
    /// Modulation voltages, pu of the converter voltage base, to apply as
    /// source EMFs over the next solver step.
    pub modulation: ThreePhaseSample,
    /// References before ride-through shaping and limiting.
    pub refs_raw: SequenceRefs,
    /// Final limited references.
    pub refs_final: SequenceRefs,
    pub limiter: LimiterReport,
    pub omega_pu: f64,
    pub theta: f64,
    pub lvrt_active: bool,
    /// True when the modulation ceiling clipped the output this step.
    pub clamped: bool,
    pub p_meas: f64,
    pub q_meas: f64,
    pub v_pos_mag: f64,
    pub v_neg_mag: f64,
}

/// Modulation ceiling, pu. Stands in for the DC-bus limit.
pub const MODULATION_CEILING: f64 = 1.2;

fn synthesize_and_clamp(vm_pos: Complex64, vm_neg: Complex64, theta: f64) -> (ThreePhaseSample, bool) {
    let pos = inverse_park(QdFrame::from_complex(vm_pos, theta));
    let neg = inverse_park(QdFrame::from_complex(vm_neg, -theta));
    let mut m = pos.add(neg);
    let peak = m.a.abs().max(m.b.abs()).max(m.c.abs());
    let clamped = peak > MODULATION_CEILING;
    if clamped {
        m = m.scale(MODULATION_CEILING / peak);
    }
    (m, clamped)
}

fn ramped(p_set: f64, ramp_s: f64, t: f64) -> f64 {
    if ramp_s <= 0.0 {
        p_set
    } else {
        p_set * (t / ramp_s).clamp(0.0, 1.0)
    }
}

/// Complete grid-forming control stack.
#[derive(Debug, Clone)]
pub struct GfmControl {
    pub params: GfmParams,
    pub priority: PriorityMode,
    omega_nom: f64,
    ddsrf_v: Ddsrf,
    ddsrf_i: Ddsrf,
    pub vsg: VsgState,
    q_pi: PiController,
    va: VirtualAdmittance,
    pub lvrt: LvrtState,
    inner: InnerCurrentLoop,
}

impl GfmControl {
    pub fn new(params: GfmParams, priority: PriorityMode, omega_nom: f64) -> Self {
        Self {
            params,
            priority,
            omega_nom,
            ddsrf_v: Ddsrf::with_default_cutoff(omega_nom),
            ddsrf_i: Ddsrf::with_default_cutoff(omega_nom),
            vsg: VsgState::default(),
            q_pi: PiController::new(
                params.q_kp,
                params.q_ki,
                -params.q_trim_limit,
                params.q_trim_limit,
            ),
            va: VirtualAdmittance::default(),
            lvrt: LvrtState::default(),
            inner: InnerCurrentLoop::new(
                params.inner_kp,
                params.inner_ki,
                params.filter_x,
                params.filter_r,
            ),
        }
    }

    /// One control step from terminal measurements (pu) at time `t`. The
    /// returned modulation drives the converter source over the next step.
    pub fn step(
        &mut self,
        v_abc: ThreePhaseSample,
        i_abc: ThreePhaseSample,
        t: f64,
        h: f64,
    ) -> Result<ControlStep, ControlError> {
        if !v_abc.is_finite() || !i_abc.is_finite() {
            return Err(ControlError::NonFinite(t));
        }
        let theta = self.omega_nom * t + self.vsg.delta;
        let v = self.ddsrf_v.step(v_abc, theta, h);
        let i = self.ddsrf_i.step(i_abc, theta, h);

        let (vp, ip) = (v.pos_filtered, i.pos_filtered);
        let p_meas = vp.re * ip.re + vp.im * ip.im;
        let q_meas = vp.im * ip.re - vp.re * ip.im;
        let v_pos_mag = vp.norm();
        let v_neg_mag = v.neg_filtered.norm();

        let p_set = ramped(self.params.p_set, self.params.p_ramp_s, t);
        let v_set = ramped(self.params.v_set, self.params.v_ramp_s, t);
        vsg_step(&mut self.vsg, p_meas, p_set, &self.params, self.omega_nom, t, h)?;
        let v_ref_mag = q_droop_step(&mut self.q_pi, q_meas, v_pos_mag, v_set, &self.params, h);

        let refs_raw = self.va.step(
            Complex64::new(v_ref_mag, 0.0),
            v.pos_filtered,
            v.neg_filtered,
            self.vsg.omega_pu,
            &self.params,
            self.omega_nom,
            h,
        );

        let active = self.lvrt.update(v_pos_mag, &self.params.lvrt);
        let shaped = lvrt_shape(refs_raw, v_pos_mag, v.neg_filtered, active, &self.params.lvrt);
        let (refs_final, limiter) = limit_and_prioritize(shaped, self.params.i_max, self.priority)
            .map_err(|_| ControlError::NonFinite(t))?;

        // Current errors close on the decoupled-unfiltered channels for
        // bandwidth; the voltage feedforward uses the filtered channels.
        // Unfiltered voltage carries the +/-omega ripple of any stationary
        // asymmetry, and reconstructing it in both sequence frames would
        // feed that asymmetry back at twice its amplitude: with only the
        // filter resistance to bleed DC flux, that loop sustains itself.
        let (vm_pos, vm_neg) = self.inner.step(
            &refs_final,
            i.pos,
            i.neg,
            v.pos_filtered,
            v.neg_filtered,
            self.vsg.omega_pu,
            h,
        );
        let (modulation, clamped) = synthesize_and_clamp(vm_pos, vm_neg, theta);

        Ok(ControlStep {
            modulation,
            refs_raw,
            refs_final,
            limiter,
            omega_pu: self.vsg.omega_pu,
            theta,
            lvrt_active: active,
            clamped,
            p_meas,
            q_meas,
            v_pos_mag,
            v_neg_mag,
        })
    }
}

/// Complete grid-following control stack.
#[derive(Debug, Clone)]
pub struct GflControl {
    pub params: GflParams,
    pub priority: PriorityMode,
    omega_nom: f64,
    ddsrf_v: Ddsrf,
    ddsrf_i: Ddsrf,
    pub pll: PllState,
    pub lvrt: LvrtState,
    inner: InnerCurrentLoop,
}

impl GflControl {
    pub fn new(params: GflParams, priority: PriorityMode, omega_nom: f64) -> Self {
        Self {
            params,
            priority,
            omega_nom,
            ddsrf_v: Ddsrf::with_default_cutoff(omega_nom),
            ddsrf_i: Ddsrf::with_default_cutoff(omega_nom),
            pll: PllState { theta: 0.0, integ: 0.0, omega_pu: 1.0 },
            lvrt: LvrtState::default(),
            inner: InnerCurrentLoop::new(
                params.inner_kp,
                params.inner_ki,
                params.filter_x,
                params.filter_r,
            ),
        }
    }

    pub fn step(
        &mut self,
        v_abc: ThreePhaseSample,
        i_abc: ThreePhaseSample,
        t: f64,
        h: f64,
    ) -> Result<ControlStep, ControlError> {
        if !v_abc.is_finite() || !i_abc.is_finite() {
            return Err(ControlError::NonFinite(t));
        }
        let theta = self.pll.theta;
        let v = self.ddsrf_v.step(v_abc, theta, h);
        let i = self.ddsrf_i.step(i_abc, theta, h);

        let (vp, ip) = (v.pos_filtered, i.pos_filtered);
        let p_meas = vp.re * ip.re + vp.im * ip.im;
        let q_meas = vp.im * ip.re - vp.re * ip.im;
        let v_pos_mag = vp.norm();
        let v_neg_mag = v.neg_filtered.norm();

        // The PLL tracks the decoupled (unfiltered) q-axis voltage: the
        // cross-decoupling already cancels the unbalance ripple, and the
        // filtered channel's lag would eat the loop's phase margin.
        pll_step(&mut self.pll, v.pos.im, &self.params, self.omega_nom, t, h)?;

        // Power-derived references; the divisor floor keeps deep sags from
        // producing unbounded requests before the limiter.
        let vd = vp.re.abs().max(self.params.v_floor);
        let p_set = ramped(self.params.p_set, self.params.p_ramp_s, t);
        let refs_raw = SequenceRefs {
            id_pos: p_set / vd,
            iq_pos: -self.params.q_set / vd,
            id_neg: 0.0,
            iq_neg: 0.0,
        };

        let active = self.lvrt.update(v_pos_mag, &self.params.lvrt);
        let shaped = lvrt_shape(refs_raw, v_pos_mag, v.neg_filtered, active, &self.params.lvrt);
        let (refs_final, limiter) = limit_and_prioritize(shaped, self.params.i_max, self.priority)
            .map_err(|_| ControlError::NonFinite(t))?;

        // Filtered voltage feedforward for the same reason as the
        // grid-forming stack: unfiltered feedforward doubles back any
        // stationary asymmetry in the terminal voltage.
        let (vm_pos, vm_neg) = self.inner.step(
            &refs_final,
            i.pos,
            i.neg,
            v.pos_filtered,
            v.neg_filtered,
            self.pll.omega_pu,
            h,
        );
        let (modulation, clamped) = synthesize_and_clamp(vm_pos, vm_neg, theta);

        Ok(ControlStep {
            modulation,
            refs_raw,
            refs_final,
            limiter,
            omega_pu: self.pll.omega_pu,
            theta,
            lvrt_active: active,
            clamped,
            p_meas,
            q_meas,
            v_pos_mag,
            v_neg_mag,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    const OMEGA: f64 = 2.0 * PI * 60.0;
    const H: f64 = 50e-6;

    #[test]
    fn vsg_holds_equilibrium_at_matched_power() {
        let params = GfmParams { p_ramp_s: 0.0, ..Default::default() };
        let mut s = VsgState::default();
        for k in 0..10_000 {
            vsg_step(&mut s, 0.5, 0.5, &params, OMEGA, k as f64 * H, H).unwrap();
        }
        assert_relative_eq!(s.omega_pu, 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.delta, 0.0, epsilon = 1e-12);
    }

    /// Closed loop against a linearized power plant p = p_sync * delta.
    fn swing_trajectory(kd: f64, p_sync: f64, p_step: f64, t_end: f64) -> Vec<(f64, f64)> {
        let params = GfmParams { vsg_damping: kd, p_ramp_s: 0.0, ..Default::default() };
        let mut s = VsgState::default();
        let mut out = Vec::new();
        let mut t = 0.0;
        while t < t_end {
            let p_meas = p_sync * s.delta;
            vsg_step(&mut s, p_meas, p_step, &params, OMEGA, t, H).unwrap();
            t += H;
            out.push((t, s.delta));
        }
        out
    }

    #[test]
    fn undamped_swing_frequency_matches_second_order_prediction() {
        let p_sync = 1.5;
        let traj = swing_trajectory(0.0, p_sync, 0.3, 2.0);
        // Interpolated crossing times of the steady angle give the period.
        let d_ss = 0.3 / p_sync;
        let mut crossings = Vec::new();
        for w in traj.windows(2) {
            let (y0, y1) = (w[0].1 - d_ss, w[1].1 - d_ss);
            if y0 * y1 < 0.0 {
                crossings.push(w[0].0 + (w[1].0 - w[0].0) * y0 / (y0 - y1));
            }
        }
        assert!(crossings.len() >= 4, "too few oscillations observed");
        let span = crossings.last().unwrap() - crossings.first().unwrap();
        let freq = (crossings.len() - 1) as f64 / (2.0 * span);
        let want = (OMEGA * p_sync / 2.0).sqrt() / (2.0 * PI);
        assert_relative_eq!(freq, want, max_relative = 0.02);
    }

    #[test]
    fn damped_swing_matches_analytic_overdamped_response() {
        // delta'' + kd delta' + w0^2 delta = w0^2 d_ss.
        let (kd, p_sync, p_step) = (50.0, 1.5, 0.3);
        let w0sq = OMEGA * p_sync / 2.0;
        let d_ss = p_step / p_sync;
        let disc = (kd * kd / 4.0 - w0sq).sqrt();
        let (s1, s2) = (-kd / 2.0 + disc, -kd / 2.0 - disc);
        let analytic = |t: f64| {
            // delta(0) = 0, delta'(0) = 0.
            let c1 = d_ss * s2 / (s1 - s2);
            let c2 = -d_ss * s1 / (s1 - s2);
            d_ss + c1 * (s1 * t).exp() + c2 * (s2 * t).exp()
        };
        let traj = swing_trajectory(kd, p_sync, p_step, 0.5);
        for (t, delta) in traj.iter().filter(|(t, _)| *t > 0.05) {
            let want = analytic(*t);
            assert!(
                (delta - want).abs() <= 0.1 * d_ss,
                "t={t}: delta={delta}, analytic={want}"
            );
        }
    }

    #[test]
    fn q_droop_settles_on_the_droop_law() {
        let params = GfmParams::default();
        let mut pi = PiController::new(params.q_kp, params.q_ki, -0.2, 0.2);
        // Plant: q responds linearly to the reference voltage.
        let v_meas = 0.97;
        let mut q_meas = 0.0;
        for _ in 0..200_000 {
            let v_ref = q_droop_step(&mut pi, q_meas, v_meas, params.v_set, &params, H);
            q_meas = 8.0 * (v_ref - 0.99);
        }
        let want = params.q_set + params.q_droop_gain * (params.v_set - v_meas);
        assert_relative_eq!(q_meas, want, max_relative = 1e-6);
    }

    #[test]
    fn q_droop_trim_clamps() {
        let params = GfmParams::default();
        let mut pi = PiController::new(params.q_kp, params.q_ki, -0.2, 0.2);
        let mut v_ref = 0.0;
        for _ in 0..100_000 {
            // Persistent large error: q_meas pinned far above target.
            v_ref = q_droop_step(&mut pi, 5.0, 1.0, params.v_set, &params, H);
        }
        assert_relative_eq!(v_ref, params.v_set - 0.2, epsilon = 1e-9);
    }

    #[test]
    fn virtual_admittance_steady_state_divides_by_impedance() {
        let params = GfmParams::default();
        let mut va = VirtualAdmittance::default();
        let v_err = Complex64::new(0.1, 0.0);
        let mut refs = SequenceRefs::default();
        for _ in 0..60_000 {
            refs = va.step(
                v_err,
                Complex64::new(0.0, 0.0),
                Complex64::new(0.0, 0.0),
                1.0,
                &params,
                OMEGA,
                H,
            );
        }
        let z = Complex64::new(params.virtual_r, params.virtual_x);
        assert_relative_eq!(refs.pos_mag(), 0.1 / z.norm(), max_relative = 1e-6);
        // Zero negative-sequence voltage leaves the negative reference at
        // zero.
        assert!(refs.neg_mag() < 1e-12);
    }

    #[test]
    fn virtual_admittance_decays_at_rv_over_lv() {
        let params = GfmParams::default();
        let mut va = VirtualAdmittance {
            i_pos: Complex64::new(1.0, 0.0),
            i_neg: Complex64::new(0.0, 0.0),
        };
        let zero = Complex64::new(0.0, 0.0);
        let t_meas = 0.02;
        let steps = (t_meas / H).round() as usize;
        for _ in 0..steps {
            va.step(zero, zero, zero, 1.0, &params, OMEGA, H);
        }
        let want_rate = params.virtual_r / params.virtual_x * OMEGA;
        let measured = -(va.i_pos.norm()).ln() / t_meas;
        assert_relative_eq!(measured, want_rate, max_relative = 0.02);
    }

    #[test]
    fn negative_sequence_injection_opposes_the_voltage() {
        let refs = SequenceRefs::default();
        let p = LvrtParams::default();
        let v_neg = Complex64::new(0.3, 0.0);
        let shaped = lvrt_shape(refs, 0.5, v_neg, true, &p);
        assert_relative_eq!(shaped.neg_mag(), p.k_neg * 0.3, epsilon = 1e-12);
        // -j k v: purely real v maps to purely negative q.
        assert_relative_eq!(shaped.iq_neg, -p.k_neg * 0.3, epsilon = 1e-12);
        assert_relative_eq!(shaped.id_neg, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn lvrt_boost_magnitude_matches_depression() {
        let refs = SequenceRefs { iq_pos: -0.1, ..Default::default() };
        let p = LvrtParams::default();
        let shaped = lvrt_shape(refs, 0.5, Complex64::new(0.0, 0.0), true, &p);
        // K_pos (0.9 - 0.5) = 0.8 of extra reactive boost, support
        // direction (more negative q).
        assert_relative_eq!(shaped.iq_pos, -0.1 - 0.8, epsilon = 1e-12);
    }

    #[test]
    fn lvrt_latch_honors_hysteresis() {
        let p = LvrtParams::default();
        let mut s = LvrtState::default();
        assert!(!s.update(0.97, &p), "first healthy sample arms the latch");
        assert!(!s.update(0.95, &p));
        assert!(s.update(0.85, &p));
        assert!(s.update(0.92, &p), "still latched inside the dead band");
        assert!(!s.update(0.96, &p));
    }

    #[test]
    fn lvrt_latch_stays_disarmed_until_voltage_established() {
        let p = LvrtParams::default();
        let mut s = LvrtState::default();
        // Commissioning ramp from zero: deep depression must not latch.
        assert!(!s.update(0.0, &p));
        assert!(!s.update(0.5, &p));
        assert!(!s.update(0.94, &p), "below exit threshold, still disarmed");
        assert!(!s.update(0.96, &p), "arming sample itself reports inactive");
        assert!(s.update(0.85, &p), "armed latch responds to depression");
    }

    #[test]
    fn lvrt_latch_single_transition_on_monotone_ramp() {
        let p = LvrtParams::default();
        let mut s = LvrtState::default();
        s.update(1.0, &p);
        let mut transitions = 0;
        let mut prev = s.active;
        for k in 0..=1000 {
            let v = 1.0 - 0.6 * k as f64 / 1000.0;
            let now = s.update(v, &p);
            if now != prev {
                transitions += 1;
                prev = now;
            }
        }
        assert_eq!(transitions, 1);
    }

    #[test]
    fn pll_locks_on_stiff_bus_within_five_cycles() {
        let params = GflParams::default();
        let mut pll = PllState { theta: 0.0, integ: 0.0, omega_pu: 1.0 };
        let mut dd = Ddsrf::with_default_cutoff(OMEGA);
        let phase = 0.5;
        let steps = (5.0 / 60.0 / H) as usize;
        for k in 0..steps {
            let t = k as f64 * H;
            let abc = ThreePhaseSample::balanced(1.0, OMEGA * t + phase);
            let out = dd.step(abc, pll.theta, H);
            pll_step(&mut pll, out.pos.im, &params, OMEGA, t, H).unwrap();
        }
        let t_end = steps as f64 * H;
        let want = (OMEGA * t_end + phase) % (2.0 * PI);
        let err = (pll.theta - want + PI).rem_euclid(2.0 * PI) - PI;
        assert!(err.abs() < 0.1f64.to_radians(), "lock error {} deg", err.to_degrees());
        assert_relative_eq!(pll.omega_pu, 1.0, epsilon = 1e-4);
    }

    #[test]
    fn pll_relocks_after_phase_jump() {
        let params = GflParams::default();
        let mut pll = PllState { theta: 0.0, integ: 0.0, omega_pu: 1.0 };
        let mut dd = Ddsrf::with_default_cutoff(OMEGA);
        let mut phase = 0.0;
        let total = (10.0 / 60.0 / H) as usize;
        for k in 0..total {
            let t = k as f64 * H;
            if k == total / 2 {
                phase = 30.0f64.to_radians();
            }
            let abc = ThreePhaseSample::balanced(1.0, OMEGA * t + phase);
            let out = dd.step(abc, pll.theta, H);
            pll_step(&mut pll, out.pos.im, &params, OMEGA, t, H).unwrap();
        }
        let t_end = total as f64 * H;
        let want = (OMEGA * t_end + phase) % (2.0 * PI);
        let err = (pll.theta - want + PI).rem_euclid(2.0 * PI) - PI;
        assert!(err.abs() < 0.2f64.to_radians(), "relock error {} deg", err.to_degrees());
    }

    /// Euler plant matching the inner loop's assumed model, integrated in
    /// its own rotating frame.
    struct FramePlant {
        i: Complex64,
        x: f64,
        r: f64,
        sign: f64,
    }

    impl FramePlant {
        fn step(&mut self, vm: Complex64, v_bus: Complex64, h: f64) {
            let di = (OMEGA / self.x)
                * (vm - v_bus - self.r * self.i
                    - Complex64::new(0.0, self.sign * self.x) * self.i);
            self.i += di * h;
        }
    }

    #[test]
    fn inner_loop_tracks_and_obeys_steady_state_kvl() {
        let (kp, ki, xf, rf) = (0.5, 100.0, 0.10, 0.005);
        let mut loop_ = InnerCurrentLoop::new(kp, ki, xf, rf);
        let mut plant = FramePlant { i: Complex64::new(0.0, 0.0), x: xf, r: rf, sign: 1.0 };
        let refs = SequenceRefs { id_pos: 0.8, iq_pos: -0.3, ..Default::default() };
        let v_bus = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        let mut vm = zero;
        for _ in 0..40_000 {
            let (vm_pos, _) = loop_.step(&refs, plant.i, zero, v_bus, zero, 1.0, H);
            vm = vm_pos;
            plant.step(vm_pos, v_bus, H);
        }
        assert_relative_eq!(plant.i.re, 0.8, max_relative = 1e-4);
        assert_relative_eq!(plant.i.im, -0.3, max_relative = 1e-4);
        // Steady KVL: vm = v_bus + (r + j x) i.
        let want = v_bus + Complex64::new(rf, xf) * plant.i;
        assert!((vm - want).norm() < 1e-3, "vm {vm}, want {want}");
    }

    #[test]
    fn inner_loop_time_constant_is_filter_over_gain() {
        let (kp, ki, xf, rf) = (0.5, 100.0, 0.10, 0.0);
        let mut loop_ = InnerCurrentLoop::new(kp, ki, xf, rf);
        let mut plant = FramePlant { i: Complex64::new(0.0, 0.0), x: xf, r: rf, sign: 1.0 };
        let refs = SequenceRefs { id_pos: 1.0, ..Default::default() };
        let zero = Complex64::new(0.0, 0.0);
        let mut t_63 = None;
        for k in 0..2000 {
            let (vm_pos, _) = loop_.step(&refs, plant.i, zero, zero, zero, 1.0, H);
            plant.step(vm_pos, zero, H);
            if t_63.is_none() && plant.i.re >= 1.0 - (-1.0f64).exp() {
                t_63 = Some((k + 1) as f64 * H);
            }
        }
        let want = xf / (kp * OMEGA);
        let got = t_63.expect("reached 63% of the step");
        assert!(
            (got - want).abs() <= 0.2 * want,
            "tau measured {got}, predicted {want}"
        );
    }

    #[test]
    fn inner_loop_zero_in_zero_out() {
        let mut loop_ = InnerCurrentLoop::new(0.5, 100.0, 0.1, 0.005);
        let zero = Complex64::new(0.0, 0.0);
        let refs = SequenceRefs::default();
        let (p, n) = loop_.step(&refs, zero, zero, zero, zero, 1.0, H);
        assert_eq!(p, zero);
        assert_eq!(n, zero);
    }

    #[test]
    fn modulation_ceiling_scales_uniformly() {
        let vm_pos = Complex64::new(2.0, 0.0);
        let vm_neg = Complex64::new(0.0, 0.0);
        let (m, clamped) = synthesize_and_clamp(vm_pos, vm_neg, 0.3);
        assert!(clamped);
        let peak = m.a.abs().max(m.b.abs()).max(m.c.abs());
        assert_relative_eq!(peak, MODULATION_CEILING, epsilon = 1e-12);
    }

    #[test]
    fn gfm_stack_rejects_nonfinite_measurements() {
        let mut gfm = GfmControl::new(GfmParams::default(), PriorityMode::Positive, OMEGA);
        let bad = ThreePhaseSample::new(f64::NAN, 0.0, 0.0);
        assert!(matches!(
            gfm.step(bad, ThreePhaseSample::zero(), 0.0, H),
            Err(ControlError::NonFinite(_))
        ));
    }

    #[test]
    fn gfl_stack_follows_a_synthetic_stiff_bus() {
        // Pure control-level smoke test: the GFL stack on an ideal 1 pu bus
        // with a synthetic current response should settle near its active
        // power setpoint with the limiter disengaged.
        let params = GflParams { p_ramp_s: 0.05, ..Default::default() };
        let mut gfl = GflControl::new(params, PriorityMode::Positive, OMEGA);
        // Synthetic plant state: positive-frame current following the
        // references through a first-order lag. The waveform handed to the
        // controller is regenerated at the controller's own current angle
        // so the plant genuinely lives in the converter frame.
        let mut i_frame = Complex64::new(0.0, 0.0);
        let mut last = None;
        for k in 0..8000 {
            let t = k as f64 * H;
            let v_abc = ThreePhaseSample::balanced(1.0, OMEGA * t + 0.1);
            let i_abc = inverse_park(QdFrame::from_complex(i_frame, gfl.pll.theta));
            let step = gfl.step(v_abc, i_abc, t, H).unwrap();
            i_frame += (step.refs_final.pos_vec() - i_frame) * 0.05;
            last = Some(step);
        }
        let last = last.unwrap();
        assert!(!last.limiter.engaged);
        assert!(!last.lvrt_active);
        assert_relative_eq!(last.p_meas, params.p_set, max_relative = 0.05);
    }
}
