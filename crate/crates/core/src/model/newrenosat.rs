//! NewReno with delayed ACKs over independent segment losses: CA/FR renewal
//! cycles, optionally extended with timeout and slow-start periods.

use serde::{Deserialize, Serialize};

use super::{c, f, LossProcessParams, ModelError, TcpModelParams, ThroughputEstimate};
use crate::Scalar;

/// Mean congestion window at a loss event: the positive root of
/// `(8q+3b) W^2 - 2(22q-3b-4) W + (60q - 8 - 8/p) = 0`.
pub fn expected_window<T: Scalar>(p: T, q: T, b: T) -> Result<T, ModelError> {
    let domain = |what| ModelError::Domain {
        what,
        p: f(p),
        q: f(q),
    };
    if !(p > T::zero() && p < T::one()) || !(q >= T::zero() && q < T::one()) || b < T::one() {
        return Err(domain("loss rates or delayed-ACK factor"));
    }
    let a = c::<T>(8.0) * q + c::<T>(3.0) * b;
    let phi = (c::<T>(22.0) * q - c::<T>(3.0) * b - c::<T>(4.0)) / a;
    let k = (c::<T>(60.0) * p * q - c::<T>(8.0) * p - c::<T>(8.0)) / (p * a);
    let disc = phi * phi - k;
    if !(disc >= T::zero()) {
        return Err(domain("negative discriminant of the window equation"));
    }
    let w = phi + disc.sqrt();
    if !(w >= T::one()) || !w.is_finite() {
        return Err(domain("window root below one segment"));
    }
    Ok(w)
}

/// Relative residual of `w` in the window quadratic.
pub fn window_quadratic_residual<T: Scalar>(p: T, q: T, b: T, w: T) -> T {
    let a = c::<T>(8.0) * q + c::<T>(3.0) * b;
    let bl = c::<T>(2.0) * (c::<T>(22.0) * q - c::<T>(3.0) * b - c::<T>(4.0));
    let cc = c::<T>(60.0) * q - c::<T>(8.0) - c::<T>(8.0) / p;
    let r = a * w * w - bl * w + cc;
    let scale = a * w * w + (bl * w).abs() + cc.abs();
    r.abs() / scale
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossEventQuantities<T> {
    /// Segments sent up to and including the first loss.
    pub e_alpha: T,
    /// Segments sent between the first and the last loss of a drop window.
    pub e_gamma: T,
    /// Losses per loss event.
    pub e_delta: T,
    /// Set when `e_w < 4` and `e_gamma`/`e_delta` were clamped to 0 and 1.
    pub clamped: bool,
}

pub fn loss_event_quantities<T: Scalar>(p: T, q: T, e_w: T) -> LossEventQuantities<T> {
    let four = c::<T>(4.0);
    let clamped = e_w < four;
    let span = (e_w - four).max(T::zero());
    LossEventQuantities {
        e_alpha: T::one() / p,
        e_gamma: q * span,
        e_delta: T::one() + span * q,
        clamped,
    }
}

/// Probability of `j` losses (`1 <= j <= w-3`) among the `w-3` segments
/// following the first loss of a drop window, given at least one loss:
/// `C(w-4, j-1) (1-q)^(w-3-j) q^(j-1)`.
pub fn binomial_b<T: Scalar>(w: u32, j: u32, q: T) -> T {
    if w < 4 || j == 0 || j > w - 3 {
        return T::zero();
    }
    binomial_pmf(w - 4, j - 1, q)
}

fn ln_choose<T: Scalar>(n: u32, k: u32) -> T {
    let mut s = T::zero();
    for i in 0..k {
        s = s + T::from_u32(n - i).unwrap().ln() - T::from_u32(i + 1).unwrap().ln();
    }
    s
}

fn binomial_pmf<T: Scalar>(n: u32, k: u32, q: T) -> T {
    if q <= T::zero() {
        return if k == 0 { T::one() } else { T::zero() };
    }
    if q >= T::one() {
        return if k == n { T::one() } else { T::zero() };
    }
    let kf = T::from_u32(k).unwrap();
    let rest = T::from_u32(n - k).unwrap();
    (ln_choose::<T>(n, k) + kf * q.ln() + rest * (T::one() - q).ln()).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CafrTerms<T> {
    /// Rounds of congestion avoidance before the drop window.
    pub e_x: T,
    pub e_beta: T,
    pub s_ca: T,
    pub s_fr: T,
    pub d_ca_rounds: T,
    pub d_fr_rounds: T,
}

pub fn cafr_segments_and_durations<T: Scalar>(p: T, q: T, b: T, e_w: T) -> CafrTerms<T> {
    let half = c::<T>(0.5);
    let le = loss_event_quantities(p, q, e_w);
    let d = le.e_delta;
    let e_x = b * (e_w * half + T::one());
    let e_beta = e_w * half;
    let s_ca = e_x / c(4.0) * c(3.0) * e_w + e_beta;
    let s_fr = fast_recovery_segments(d, e_w);
    CafrTerms {
        e_x,
        e_beta,
        s_ca,
        s_fr,
        d_ca_rounds: e_x + half,
        d_fr_rounds: d,
    }
}

/// New segments sent while recovering `e_delta` losses from a drop window of
/// `e_w` segments, one loss per round.
pub fn fast_recovery_segments<T: Scalar>(e_delta: T, e_w: T) -> T {
    if e_delta < e_w {
        (c::<T>(0.5) * (e_delta * e_w - e_delta - e_delta * e_delta)).max(T::zero())
    } else {
        T::zero()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeoutProbabilities<T> {
    /// Timeout because too few duplicate ACKs return.
    pub p_toca: T,
    /// Timeout because a retransmission is lost during recovery.
    pub p_tofr: T,
    /// Integer window used for the sums.
    pub window: u32,
    pub truncated: bool,
}

/// Timeout probabilities at the integer window nearest `e_w` (at least 5).
pub fn timeout_probabilities<T: Scalar>(p: T, q: T, e_w: T) -> TimeoutProbabilities<T> {
    let rounded = e_w.round().to_u32().unwrap_or(u32::MAX).min(1 << 20);
    let w = rounded.max(5);
    let truncated = e_w < c(4.0);
    let mut p_toca = T::zero();
    for j in (w - 2)..=w {
        p_toca = p_toca + binomial_pmf(w - 1, j - 1, q);
    }
    let mut p_tofr = T::zero();
    let half_w = T::from_u32(w).unwrap() * c(0.5);
    for j in 1..=(w - 3) {
        let sent = T::from_u32(j).unwrap() * half_w;
        p_tofr = p_tofr + binomial_b(w, j, q) * (T::one() - (T::one() - p).powf(sent));
    }
    TimeoutProbabilities {
        p_toca: p_toca.max(T::zero()).min(T::one()),
        p_tofr: p_tofr.max(T::zero()).min(T::one()),
        window: w,
        truncated,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlowStartTimeoutTerms<T> {
    pub s_ss: T,
    pub d_ss_s: T,
    pub d_to_s: T,
    /// `e_w < 4`: slow start would end below its starting window.
    pub degenerate: bool,
}

pub fn slow_start_and_timeout_terms<T: Scalar>(
    p: T,
    b: T,
    e_w: T,
    rto: T,
    e_rtt: T,
) -> SlowStartTimeoutTerms<T> {
    let x = T::one() + T::one() / b;
    let quarter = e_w / c(4.0);
    let s_ss = b * (x * quarter - T::one());
    let d_ss_s = e_rtt * (quarter.ln() / x.ln() + T::one());
    let mut backoff = T::one();
    let mut pow2 = T::one();
    let mut pk = p;
    for _ in 0..6 {
        backoff = backoff + pow2 * pk;
        pow2 = pow2 + pow2;
        pk = pk * p;
    }
    SlowStartTimeoutTerms {
        s_ss: s_ss.max(T::zero()),
        d_ss_s: d_ss_s.max(T::zero()),
        d_to_s: rto * backoff / (T::one() - p),
        degenerate: quarter < T::one(),
    }
}

/// CA/FR terms of an estimate evaluated at a given mean window.
pub fn cafr_estimate_at<T: Scalar>(
    params: &LossProcessParams<T>,
    tcp: &TcpModelParams<T>,
    e_w: T,
) -> ThroughputEstimate<T> {
    let (p, q, b) = (params.p, params.q, tcp.b);
    let le = loss_event_quantities(p, q, e_w);
    let cafr = cafr_segments_and_durations(p, q, b, e_w);
    let mut est = ThroughputEstimate::zeroed();
    est.e_w = e_w;
    est.e_x = cafr.e_x;
    est.e_alpha = le.e_alpha;
    est.e_gamma = le.e_gamma;
    est.e_delta = le.e_delta;
    est.s_ca = cafr.s_ca;
    est.s_fr = cafr.s_fr;
    est.d_ca_rounds = cafr.d_ca_rounds;
    est.d_fr_rounds = cafr.d_fr_rounds;
    est.flags.window_below_four = le.clamped;
    est
}

/// Adds slow-start and timeout terms to a CA/FR estimate.
pub fn with_timeout_terms<T: Scalar>(
    mut est: ThroughputEstimate<T>,
    params: &LossProcessParams<T>,
    tcp: &TcpModelParams<T>,
) -> ThroughputEstimate<T> {
    let (p, q) = (params.p, params.q);
    let to = timeout_probabilities(p, q, est.e_w);
    let ss = slow_start_and_timeout_terms(p, tcp.b, est.e_w, tcp.rto_s, tcp.e_rtt_s);
    est.s_ss = ss.s_ss;
    est.d_ss_s = ss.d_ss_s;
    est.d_to_s = ss.d_to_s;
    est.p_toca = to.p_toca;
    est.p_tofr = to.p_tofr;
    est.flags.timeout_support_truncated = to.truncated || ss.degenerate;
    est
}

/// Segments per cycle (first loss plus the rest of the drop window) over the
/// CA/FR cycle duration.
pub fn no_timeout_ratio<T: Scalar>(est: &ThroughputEstimate<T>, e_rtt_s: T) -> T {
    (est.e_gamma + est.e_alpha) / (e_rtt_s * (est.d_ca_rounds + est.d_fr_rounds))
}

/// Weighted ratio over CA/FR, CA-timeout and FR-timeout cycles using the
/// estimate's own terms and probabilities.
pub fn full_cycle_ratio<T: Scalar>(
    est: &ThroughputEstimate<T>,
    e_rtt_s: T,
) -> Result<T, ModelError> {
    let (p_toca, p_tofr) = (est.p_toca, est.p_tofr);
    let w0 = T::one() - p_tofr - p_toca;
    if w0 < T::zero() || p_toca < T::zero() || p_tofr < T::zero() {
        return Err(ModelError::InconsistentWeights {
            p_toca: f(p_toca),
            p_tofr: f(p_tofr),
        });
    }
    let (sca, sfr, sss) = (est.s_ca, est.s_fr, est.s_ss);
    let (dca, dfr) = (est.d_ca_rounds * e_rtt_s, est.d_fr_rounds * e_rtt_s);
    let (dss, dto) = (est.d_ss_s, est.d_to_s);
    let num = w0 * (sca + sfr) + p_toca * (sss + sca) + p_tofr * (sss + sca + sfr);
    let den = w0 * (dca + dfr) + p_toca * (dss + dca + dto) + p_tofr * (dss + dca + dfr + dto);
    Ok(num / den)
}

/// Throughput ignoring timeouts: segments per cycle over cycle duration.
pub fn throughput_no_to<T: Scalar>(
    params: &LossProcessParams<T>,
    tcp: &TcpModelParams<T>,
) -> Result<ThroughputEstimate<T>, ModelError> {
    params.validate()?;
    let e_w = expected_window(params.p, params.q, tcp.b)?;
    let mut est = cafr_estimate_at(params, tcp, e_w);
    est.t_segments_per_s = no_timeout_ratio(&est, tcp.e_rtt_s);
    est.t_kbps = tcp.kbps(est.t_segments_per_s);
    Ok(est)
}

/// Throughput with CA-, FR- and timeout-terminated cycles weighted by their
/// probabilities.
pub fn throughput_full<T: Scalar>(
    params: &LossProcessParams<T>,
    tcp: &TcpModelParams<T>,
) -> Result<ThroughputEstimate<T>, ModelError> {
    params.validate()?;
    let e_w = expected_window(params.p, params.q, tcp.b)?;
    let mut est = with_timeout_terms(cafr_estimate_at(params, tcp, e_w), params, tcp);
    est.t_segments_per_s = full_cycle_ratio(&est, tcp.e_rtt_s)?;
    est.t_kbps = tcp.kbps(est.t_segments_per_s);
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tcp(rtt: f64) -> TcpModelParams<f64> {
        TcpModelParams::new(2.0, rtt, 2.0, 173.0)
    }

    #[test]
    fn window_matches_reference_evaluation() {
        // Independent evaluation of the closed-form root in double precision.
        let cases = [
            (7.45e-4_f64, 8.52e-4, 40.667_6),
            (1.0e-3, 1.34e-3, 34.879_2),
            (1.37e-3, 1.75e-3, 29.569_0),
            (1.79e-3, 2.30e-3, 25.671_6),
            (2.28e-3, 3.5e-3, 22.563_0),
        ];
        for (p, q, w) in cases {
            let got = expected_window(p, q, 2.0).unwrap();
            assert!((got - w).abs() < 1e-3, "{p} {q}: {got}");
        }
    }

    #[test]
    fn window_rejects_bad_domain() {
        assert!(expected_window(0.0, 0.1, 2.0).is_err());
        assert!(expected_window(0.1, 1.0, 2.0).is_err());
        assert!(expected_window(0.1, 0.1, 0.5).is_err());
        // heavy losses push the root below one segment
        assert!(expected_window(0.9, 0.95, 2.0).is_err());
    }

    #[test]
    fn window_grows_without_bound_as_losses_vanish() {
        let mut last = 0.0;
        for k in 2..10 {
            let p = 10f64.powi(-k);
            let w = expected_window(p, p, 2.0).unwrap();
            assert!(w > last);
            last = w;
        }
        assert!(last > 1e4);
    }

    #[test]
    fn loss_event_terms() {
        let le = loss_event_quantities(1e-3, 0.0, 40.0);
        assert_eq!(le.e_alpha, 1000.0);
        assert_eq!(le.e_gamma, 0.0);
        assert_eq!(le.e_delta, 1.0);
        let le = loss_event_quantities(1e-3, 1.0, 40.0);
        assert_eq!(le.e_gamma, 36.0);
        let le = loss_event_quantities(1e-3, 0.5, 3.0);
        assert!(le.clamped);
        assert_eq!(le.e_delta, 1.0);
    }

    #[test]
    fn cafr_terms_at_reference_point() {
        let p = 7.45e-4_f64;
        let q = 8.52e-4;
        let w = expected_window(p, q, 2.0).unwrap();
        let t = cafr_segments_and_durations(p, q, 2.0, w);
        assert!((t.s_ca - 1321.723).abs() < 1e-2);
        assert!((t.s_fr - 19.9217).abs() < 1e-3);
        assert!((t.d_ca_rounds * 0.64 - 27.6272).abs() < 1e-3);
        assert!((t.d_fr_rounds * 0.64 - 0.66).abs() < 1e-3);
    }

    #[test]
    fn fast_recovery_segment_cases() {
        // single loss: W/2 - 1
        let t = cafr_segments_and_durations(1e-3, 0.0, 2.0, 20.0);
        assert_eq!(t.s_fr, 9.0);
        assert_eq!(fast_recovery_segments(1.0, 20.0), 9.0);
        // two losses: 8 + 9 segments over two rounds, minus the overlap term
        assert_eq!(fast_recovery_segments(2.0, 20.0), 17.0);
        // as many losses as the window: nothing new is sent
        assert_eq!(fast_recovery_segments(20.0, 20.0), 0.0);
    }

    #[test]
    fn slow_start_arithmetic() {
        let t = slow_start_and_timeout_terms(1e-3_f64, 2.0, 40.0, 2.0, 0.64);
        assert!((t.s_ss - 28.0).abs() < 1e-12);
        let expect = 0.64 * (10f64.ln() / 1.5f64.ln() + 1.0);
        assert!((t.d_ss_s - expect).abs() < 1e-12);
        assert!((t.d_ss_s - 4.27).abs() < 0.01);
    }

    #[test]
    fn timeout_duration_series() {
        let p: f64 = 0.1;
        let t = slow_start_and_timeout_terms(p, 2.0, 40.0, 2.0, 0.64);
        let s: f64 = (0..6).map(|j| 2f64.powi(j) * p.powi(j + 1)).sum();
        assert!((t.d_to_s - 2.0 * (1.0 + s) / 0.9).abs() < 1e-12);
    }

    #[test]
    fn throughput_no_to_reference_rows() {
        let cases = [
            (7.45e-4, 8.52e-4, 0.64, 65.6749),
            (1.37e-3, 1.75e-3, 0.58, 52.6024),
            (2.28e-3, 3.5e-3, 0.58, 40.0620),
        ];
        for (p, q, rtt, kbps) in cases {
            let e = throughput_no_to(&LossProcessParams::new(p, q), &tcp(rtt)).unwrap();
            assert!((e.t_kbps - kbps).abs() < 1e-3, "{p}: {}", e.t_kbps);
            assert!(e.is_well_formed());
        }
    }

    #[test]
    fn single_loss_renewal_scaling() {
        let p = 1e-6;
        let e = throughput_no_to(&LossProcessParams::new(p, p), &tcp(0.5)).unwrap();
        let classic = (1.0 / p) / (0.5 * 2.0 * e.e_w / 2.0);
        assert!((e.t_segments_per_s / classic - 1.0).abs() < 0.01);
    }

    #[test]
    fn throughput_full_reference_rows() {
        let cases = [
            (7.45e-4, 8.52e-4, 0.64, 65.4361, 0.0156),
            (2.28e-3, 3.5e-3, 0.58, 39.6605, 0.0276),
        ];
        for (p, q, rtt, kbps, tofr) in cases {
            let e = throughput_full(&LossProcessParams::new(p, q), &tcp(rtt)).unwrap();
            assert!((e.t_kbps - kbps).abs() < 1e-3, "{p}: {}", e.t_kbps);
            assert!((e.p_tofr - tofr).abs() < 1e-4);
            assert!(e.p_toca < 1e-20);
        }
    }

    #[test]
    fn timeout_probability_limits() {
        let t = timeout_probabilities(1e-9, 0.0, 30.0);
        assert_eq!(t.p_toca, 0.0);
        assert!(t.p_tofr < 1e-6);
        let t = timeout_probabilities(0.5_f64, 0.999_999, 30.0);
        assert!((t.p_toca - 1.0).abs() < 1e-6);
        let t = timeout_probabilities(0.1, 0.1, 2.0);
        assert!(t.truncated);
        assert_eq!(t.window, 5);
    }

    #[test]
    fn single_precision_agrees() {
        let e64 = throughput_no_to(&LossProcessParams::new(1e-3, 1.3e-3), &tcp(0.6)).unwrap();
        let e32 = throughput_no_to(
            &LossProcessParams::new(1e-3f32, 1.3e-3),
            &TcpModelParams::new(2.0f32, 0.6, 2.0, 173.0),
        )
        .unwrap();
        assert!((f64::from(e32.t_kbps) / e64.t_kbps - 1.0).abs() < 1e-4);
    }
}
