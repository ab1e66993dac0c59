//! Sequence-aware converter current limiting.
//!
//! References arrive as q/d pairs per sequence. The limit is enforced on
//! the worst-case phase peak, conservatively bounded by the sum of the two
//! sequence magnitudes (the phase where the two space vectors align). The
//! prioritized sequence is capped first and keeps as much of its request
//! as fits; the other sequence gets whatever headroom remains. Scaling is
//! applied equally to the q and d components of a sequence, so each
//! sequence keeps its angle; only magnitudes shrink.

use num_complex::Complex64;
use thiserror::Error;

/// Current references in the two synchronous frames, pu. `d + j q`
/// vectors are exposed through [`SequenceRefs::pos_vec`]/[`SequenceRefs::neg_vec`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SequenceRefs {
    pub id_pos: f64,
    pub iq_pos: f64,
    pub id_neg: f64,
    pub iq_neg: f64,
}

impl SequenceRefs {
    pub fn from_vecs(pos: Complex64, neg: Complex64) -> Self {
        Self { id_pos: pos.re, iq_pos: pos.im, id_neg: neg.re, iq_neg: neg.im }
    }

    pub fn pos_vec(&self) -> Complex64 {
        Complex64::new(self.id_pos, self.iq_pos)
    }

    pub fn neg_vec(&self) -> Complex64 {
        Complex64::new(self.id_neg, self.iq_neg)
    }

    pub fn pos_mag(&self) -> f64 {
        self.pos_vec().norm()
    }

    pub fn neg_mag(&self) -> f64 {
        self.neg_vec().norm()
    }

    pub fn is_finite(&self) -> bool {
        self.id_pos.is_finite()
            && self.iq_pos.is_finite()
            && self.id_neg.is_finite()
            && self.iq_neg.is_finite()
    }
}

/// Which sequence keeps its request when the combined demand exceeds the
/// limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorityMode {
    Positive,
    Negative,
}

/// What the limiter did on one call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimiterReport {
    pub engaged: bool,
    /// Output/input magnitude ratio per sequence; 1 when untouched, 0 when
    /// the sequence was zeroed (ratio of a zeroed zero request is 1).
    pub scale_pos: f64,
    pub scale_neg: f64,
    /// Margin left under the limit after shaping, pu.
    pub headroom: f64,
}

#[derive(Debug, Error)]
pub enum LimiterError {
    #[error("non-finite current references")]
    NonFiniteRefs,
    #[error("current limit must be positive, got {0}")]
    BadLimit(f64),
}

/// Caps the combined sequence current demand at `i_max` (pu), protecting
/// the prioritized sequence. Returns the shaped references and a report.
pub fn limit_and_prioritize(
    refs: SequenceRefs,
    i_max: f64,
    mode: PriorityMode,
) -> Result<(SequenceRefs, LimiterReport), LimiterError> {
    if !refs.is_finite() {
        return Err(LimiterError::NonFiniteRefs);
    }
    if !(i_max > 0.0 && i_max.is_finite()) {
        return Err(LimiterError::BadLimit(i_max));
    }

    let m_pos = refs.pos_mag();
    let m_neg = refs.neg_mag();
    if m_pos + m_neg <= i_max {
        return Ok((
            refs,
            LimiterReport {
                engaged: false,
                scale_pos: 1.0,
                scale_neg: 1.0,
                headroom: i_max - (m_pos + m_neg),
            },
        ));
    }

    let (m_prio, m_other) = match mode {
        PriorityMode::Positive => (m_pos, m_neg),
        PriorityMode::Negative => (m_neg, m_pos),
    };
    let m_prio_out = m_prio.min(i_max);
    let m_other_out = m_other.min((i_max - m_prio_out).max(0.0));

    let scale_of = |m_in: f64, m_out: f64| if m_in > 0.0 { m_out / m_in } else { 1.0 };
    let (scale_pos, scale_neg) = match mode {
        PriorityMode::Positive => (scale_of(m_pos, m_prio_out), scale_of(m_neg, m_other_out)),
        PriorityMode::Negative => (scale_of(m_pos, m_other_out), scale_of(m_neg, m_prio_out)),
    };

    let shaped = SequenceRefs {
        id_pos: refs.id_pos * scale_pos,
        iq_pos: refs.iq_pos * scale_pos,
        id_neg: refs.id_neg * scale_neg,
        iq_neg: refs.iq_neg * scale_neg,
    };
    Ok((
        shaped,
        LimiterReport {
            engaged: true,
            scale_pos,
            scale_neg,
            headroom: i_max - (m_prio_out + m_other_out),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn within_limit_passes_unchanged() {
        let refs = SequenceRefs { id_pos: 0.6, iq_pos: 0.0, id_neg: 0.0, iq_neg: 0.3 };
        let (out, rep) = limit_and_prioritize(refs, 1.2, PriorityMode::Positive).unwrap();
        assert_eq!(out, refs);
        assert!(!rep.engaged);
        assert_relative_eq!(rep.headroom, 0.3, epsilon = 1e-12);
    }

    #[test]
    fn positive_priority_squeezes_negative_headroom() {
        let refs = SequenceRefs { id_pos: 0.0, iq_pos: 1.0, id_neg: 0.0, iq_neg: 0.5 };
        let (out, rep) = limit_and_prioritize(refs, 1.2, PriorityMode::Positive).unwrap();
        assert_relative_eq!(out.pos_mag(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(out.neg_mag(), 0.2, epsilon = 1e-12);
        assert!(rep.engaged);
        assert_relative_eq!(rep.headroom, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn negative_priority_protects_negative() {
        let refs = SequenceRefs { id_pos: 0.0, iq_pos: 1.0, id_neg: 0.0, iq_neg: 0.5 };
        let (out, _) = limit_and_prioritize(refs, 1.2, PriorityMode::Negative).unwrap();
        assert_relative_eq!(out.neg_mag(), 0.5, epsilon = 1e-12);
        assert_relative_eq!(out.pos_mag(), 0.7, epsilon = 1e-12);
    }

    #[test]
    fn oversized_priority_request_is_capped_and_other_zeroed() {
        let refs = SequenceRefs { id_pos: 1.5, iq_pos: 0.0, id_neg: 0.3, iq_neg: 0.0 };
        let (out, rep) = limit_and_prioritize(refs, 1.2, PriorityMode::Positive).unwrap();
        assert_relative_eq!(out.pos_mag(), 1.2, epsilon = 1e-12);
        assert_eq!(out.neg_mag(), 0.0);
        assert_eq!(rep.scale_neg, 0.0);
        assert_relative_eq!(rep.headroom, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn scaling_preserves_sequence_angles() {
        let refs = SequenceRefs { id_pos: 0.9, iq_pos: -0.8, id_neg: -0.2, iq_neg: 0.4 };
        let (out, _) = limit_and_prioritize(refs, 1.0, PriorityMode::Positive).unwrap();
        let ang_in = refs.pos_vec().arg();
        let ang_out = out.pos_vec().arg();
        assert_relative_eq!(ang_in, ang_out, epsilon = 1e-12);
        if out.neg_mag() > 0.0 {
            assert_relative_eq!(refs.neg_vec().arg(), out.neg_vec().arg(), epsilon = 1e-12);
        }
    }

    #[test]
    fn non_finite_refs_are_rejected() {
        let refs = SequenceRefs { id_pos: f64::NAN, ..Default::default() };
        assert!(matches!(
            limit_and_prioritize(refs, 1.2, PriorityMode::Positive),
            Err(LimiterError::NonFiniteRefs)
        ));
    }
}
