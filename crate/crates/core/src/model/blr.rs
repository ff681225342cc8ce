//! Cross-layer closure: transport loss rates derived from the MAC burst loss
//! rate alone, for one segment per burst.

use serde::{Deserialize, Serialize};

use super::{c, f, newrenosat, LossProcessParams, ModelError, TcpModelParams, ThroughputEstimate};
use crate::Scalar;

/// Weight of the new iterate in the damped fixed-point update.
pub const FIXED_POINT_DAMPING: f64 = 0.5;
const TOLERANCE: f64 = 1e-10;
const MAX_ITERS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlrModelOutcome<T> {
    pub p: T,
    pub q: T,
    pub iterations: usize,
    pub estimate: ThroughputEstimate<T>,
}

/// Solves `p = BLR / (1 + (E[W](p, BLR) - 4) BLR)` by damped iteration from
/// `p0`.
pub fn blr_fixed_point<T: Scalar>(blr: T, b: T, p0: T) -> Result<(T, usize), ModelError> {
    if !(blr > T::zero() && blr < T::one()) {
        return Err(ModelError::Domain {
            what: "burst loss rate (no losses leaves the window unbounded)",
            p: f(p0),
            q: f(blr),
        });
    }
    let theta = c::<T>(FIXED_POINT_DAMPING);
    let tol = c::<T>(TOLERANCE);
    let mut p = p0;
    let mut trace = Vec::with_capacity(MAX_ITERS);
    for it in 1..=MAX_ITERS {
        let w = newrenosat::expected_window(p, blr, b)?;
        let span = (w - c(4.0)).max(T::zero());
        let target = blr / (T::one() + span * blr);
        let next = (T::one() - theta) * p + theta * target;
        trace.push(f(next));
        if (next - p).abs() < tol {
            return Ok((next, it));
        }
        p = next;
    }
    Err(ModelError::NonConvergent { trace })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlrMode {
    NoTimeouts,
    Full,
}

/// Throughput predicted from the burst loss rate alone.
pub fn blr_model<T: Scalar>(
    blr: T,
    mode: BlrMode,
    tcp: &TcpModelParams<T>,
) -> Result<BlrModelOutcome<T>, ModelError> {
    let (p, iterations) = blr_fixed_point(blr, tcp.b, blr)?;
    let params = LossProcessParams {
        p,
        q: blr,
        blr: Some(blr),
    };
    let estimate = match mode {
        BlrMode::NoTimeouts => newrenosat::throughput_no_to(&params, tcp)?,
        BlrMode::Full => newrenosat::throughput_full(&params, tcp)?,
    };
    Ok(BlrModelOutcome {
        p,
        q: blr,
        iterations,
        estimate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tcp(rtt: f64) -> TcpModelParams<f64> {
        TcpModelParams::new(2.0, rtt, 2.0, 173.0)
    }

    #[test]
    fn zero_blr_is_out_of_domain() {
        assert!(matches!(
            blr_model(0.0, BlrMode::NoTimeouts, &tcp(0.6)),
            Err(ModelError::Domain { .. })
        ));
    }

    #[test]
    fn reference_fixed_points() {
        // Values from an undamped reference iteration run to 1e-12.
        let o = blr_model(1.76e-3, BlrMode::NoTimeouts, &tcp(0.58)).unwrap();
        assert!((o.p - 1.693_114_9e-3).abs() < 1e-9);
        assert!((o.estimate.t_kbps - 47.0052).abs() < 1e-3);
        let o = blr_model(6.41e-4, BlrMode::NoTimeouts, &tcp(0.64)).unwrap();
        assert!((o.p - 6.247_575e-4).abs() < 1e-9);
        assert!((o.estimate.t_kbps - 71.9856).abs() < 1e-3);
        assert!(o.iterations <= 100);
    }

    #[test]
    fn fixed_point_is_consistent() {
        let blr = 1.31e-3_f64;
        let (p, _) = blr_fixed_point(blr, 2.0, blr).unwrap();
        let w = newrenosat::expected_window(p, blr, 2.0).unwrap();
        assert!((p - blr / (1.0 + (w - 4.0) * blr)).abs() < 1e-9);
        assert!(p <= blr);
    }

    #[test]
    fn fixed_point_unique_across_starts() {
        for blr in [5e-4, 1e-3, 2e-3, 5e-3, 1e-2] {
            let roots: Vec<f64> = [0.5, 1.0, 2.0]
                .iter()
                .map(|k| blr_fixed_point(blr, 2.0, k * blr).unwrap().0)
                .collect();
            for r in &roots {
                assert!((r - roots[1]).abs() < 1e-8, "{blr}: {roots:?}");
            }
        }
    }
}
