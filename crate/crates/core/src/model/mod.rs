//! Closed-form steady-state throughput models for TCP NewReno over a lossy
//! random-access link.
//!
//! All models are generic over the scalar type; `f64` aliases live at the
//! crate root. Window-dependent terms are evaluated at the mean window
//! (plug-in approximation). Segment counts are in segments, CA/FR durations
//! in rounds, slow-start and timeout durations in seconds.

mod blr;
mod newrenosat;
mod pftk;

pub use blr::{blr_fixed_point, blr_model, BlrMode, BlrModelOutcome, FIXED_POINT_DAMPING};
pub use newrenosat::{
    binomial_b, cafr_estimate_at, cafr_segments_and_durations, expected_window,
    fast_recovery_segments, full_cycle_ratio, loss_event_quantities, no_timeout_ratio,
    slow_start_and_timeout_terms, throughput_full, throughput_no_to, timeout_probabilities,
    window_quadratic_residual, with_timeout_terms, CafrTerms, LossEventQuantities,
    SlowStartTimeoutTerms, TimeoutProbabilities,
};
pub use pftk::pftk_baseline;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Scalar;

pub(crate) fn c<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 constant representable")
}

pub(crate) fn f<T: Scalar>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ModelError {
    #[error("{what} outside the model domain (p = {p}, q = {q})")]
    Domain { what: &'static str, p: f64, q: f64 },
    #[error("timeout weights sum outside [0, 1]: p_toca = {p_toca}, p_tofr = {p_tofr}")]
    InconsistentWeights { p_toca: f64, p_tofr: f64 },
    #[error("BLR fixed point did not converge after {} iterations (last p = {:?})", trace.len(), trace.last())]
    NonConvergent { trace: Vec<f64> },
}

/// Transport-level loss description of a flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossProcessParams<T> {
    /// Loss-event rate per segment.
    pub p: T,
    /// Segment loss rate.
    pub q: T,
    pub blr: Option<T>,
}

impl<T: Scalar> LossProcessParams<T> {
    pub fn new(p: T, q: T) -> Self {
        Self { p, q, blr: None }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let (p, q) = (self.p, self.q);
        let err = |what| {
            Err(ModelError::Domain {
                what,
                p: f(p),
                q: f(q),
            })
        };
        if !(p > T::zero() && p < T::one()) {
            return err("loss-event rate p");
        }
        if !(q >= T::zero() && q < T::one()) {
            return err("segment loss rate q");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TcpModelParams<T> {
    /// Segments acknowledged per ACK.
    pub b: T,
    pub e_rtt_s: T,
    pub rto_s: T,
    /// Converts segments/s to kbps.
    pub mss_bytes: T,
}

impl<T: Scalar> TcpModelParams<T> {
    pub fn new(b: T, e_rtt_s: T, rto_s: T, mss_bytes: T) -> Self {
        Self {
            b,
            e_rtt_s,
            rto_s,
            mss_bytes,
        }
    }

    pub fn kbps(&self, segments_per_s: T) -> T {
        segments_per_s * self.mss_bytes * c(8.0) / c(1000.0)
    }
}

/// Flags raised when a term was evaluated outside its natural range.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainFlags {
    /// `E[W] < 4`: loss-event terms were clamped.
    pub window_below_four: bool,
    /// Timeout sums used the minimum support window.
    pub timeout_support_truncated: bool,
}

/// Output of any model with every intermediate term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThroughputEstimate<T> {
    pub t_segments_per_s: T,
    pub t_kbps: T,
    pub e_w: T,
    pub e_x: T,
    pub e_alpha: T,
    pub e_delta: T,
    pub e_gamma: T,
    pub s_ca: T,
    pub s_fr: T,
    pub s_ss: T,
    pub d_ca_rounds: T,
    pub d_fr_rounds: T,
    pub d_ss_s: T,
    pub d_to_s: T,
    pub p_toca: T,
    pub p_tofr: T,
    pub flags: DomainFlags,
}

impl<T: Scalar> ThroughputEstimate<T> {
    pub(crate) fn zeroed() -> Self {
        let z = T::zero();
        Self {
            t_segments_per_s: z,
            t_kbps: z,
            e_w: z,
            e_x: z,
            e_alpha: z,
            e_delta: z,
            e_gamma: z,
            s_ca: z,
            s_fr: z,
            s_ss: z,
            d_ca_rounds: z,
            d_fr_rounds: z,
            d_ss_s: z,
            d_to_s: z,
            p_toca: z,
            p_tofr: z,
            flags: DomainFlags::default(),
        }
    }

    /// True when every field is finite and nonnegative and probabilities lie
    /// in `[0, 1]`.
    pub fn is_well_formed(&self) -> bool {
        let all = [
            self.t_segments_per_s,
            self.t_kbps,
            self.e_w,
            self.e_x,
            self.e_alpha,
            self.e_delta,
            self.e_gamma,
            self.s_ca,
            self.s_fr,
            self.s_ss,
            self.d_ca_rounds,
            self.d_fr_rounds,
            self.d_ss_s,
            self.d_to_s,
            self.p_toca,
            self.p_tofr,
        ];
        all.iter().all(|v| v.is_finite() && *v >= T::zero())
            && self.p_toca <= T::one()
            && self.p_tofr <= T::one()
    }
}
