//! Approximate steady-state TCP Reno throughput with timeouts and delayed
//! ACKs (the square-root law extended by a timeout term).

use super::{c, LossProcessParams, ModelError, TcpModelParams, ThroughputEstimate};
use crate::Scalar;

/// Evaluates
/// `1 / (RTT sqrt(2bp/3) + RTO min(1, 3 sqrt(3bp/8)) p (1 + 32 p^2))`
/// segments/s, optionally capped at `w_max / RTT`.
pub fn pftk_baseline<T: Scalar>(
    params: &LossProcessParams<T>,
    tcp: &TcpModelParams<T>,
    w_max: Option<T>,
) -> Result<ThroughputEstimate<T>, ModelError> {
    params.validate()?;
    let (p, b, rtt, rto) = (params.p, tcp.b, tcp.e_rtt_s, tcp.rto_s);
    let three = c::<T>(3.0);
    let ca = rtt * (c::<T>(2.0) * b * p / three).sqrt();
    let to_prob = (three * (three * b * p / c(8.0)).sqrt()).min(T::one());
    let to = rto * to_prob * p * (T::one() + c::<T>(32.0) * p * p);
    let mut t = T::one() / (ca + to);
    if let Some(w) = w_max {
        t = t.min(w / rtt);
    }
    let mut est = ThroughputEstimate::zeroed();
    est.t_segments_per_s = t;
    est.t_kbps = tcp.kbps(t);
    est.e_w = (c::<T>(8.0) / (three * b * p)).sqrt();
    est.e_alpha = T::one() / p;
    est.d_to_s = rto;
    Ok(est)
}
