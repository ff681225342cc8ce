//! TCP NewReno (Slow-but-Steady) sender and a delayed-ACK receiver, in
//! segment units.
//!
//! Both halves are plain state machines: the caller feeds ACKs, segments and
//! timer expirations and applies the returned [`TcpAction`]s. The sender is
//! fed by an endless application source, so sending is gated only by the
//! congestion window and the advertised window.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

/// Segment sequence number (segment index, not bytes).
pub type SegSeq = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    SlowStart,
    CongestionAvoidance,
    FastRecovery,
    TimeoutBackoff,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::SlowStart => "SS",
            Phase::CongestionAvoidance => "CA",
            Phase::FastRecovery => "FR",
            Phase::TimeoutBackoff => "TO",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TcpAction {
    /// Hand segment `seq` to the link layer.
    Transmit {
        seq: SegSeq,
        retransmission: bool,
    },
    PhaseChange {
        from: Phase,
        to: Phase,
    },
    RttSample(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcpConfig {
    pub delayed_ack_b: u32,
    pub initial_cwnd: f64,
    pub initial_ssthresh: f64,
    pub initial_rto_s: f64,
    pub min_rto_s: f64,
    pub clock_granularity_s: f64,
    pub max_backoff_exp: u32,
    pub receiver_window: u64,
    pub delayed_ack_timeout_s: f64,
}

impl Default for TcpConfig {
    fn default() -> Self {
        Self {
            delayed_ack_b: 2,
            initial_cwnd: 2.0,
            initial_ssthresh: 64.0,
            initial_rto_s: 2.0,
            min_rto_s: 1.0,
            clock_granularity_s: 0.01,
            max_backoff_exp: 6,
            receiver_window: 10_000,
            delayed_ack_timeout_s: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Outstanding {
    sent_at: f64,
    retransmitted: bool,
}

/// RFC 6298 smoothed RTT estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RttEstimator {
    pub srtt: Option<f64>,
    pub rttvar: f64,
    pub rto: f64,
    min_rto: f64,
    granularity: f64,
}

impl RttEstimator {
    pub fn new(initial_rto: f64, min_rto: f64, granularity: f64) -> Self {
        Self {
            srtt: None,
            rttvar: 0.0,
            rto: initial_rto,
            min_rto,
            granularity,
        }
    }

    pub fn on_sample(&mut self, r: f64) {
        match self.srtt {
            None => {
                self.srtt = Some(r);
                self.rttvar = r / 2.0;
            }
            Some(s) => {
                self.rttvar = 0.75 * self.rttvar + 0.25 * (s - r).abs();
                self.srtt = Some(0.875 * s + 0.125 * r);
            }
        }
        let srtt = self.srtt.unwrap_or(r);
        self.rto = (srtt + self.granularity.max(4.0 * self.rttvar)).max(self.min_rto);
    }
}

/// Congestion-control state of one sending RCST.
#[derive(Debug, Clone)]
pub struct TcpFlowState {
    cfg: TcpConfig,
    pub cwnd: f64,
    pub sst: f64,
    pub phase: Phase,
    /// Oldest unacknowledged segment (next cumulative ACK expected above it).
    pub snd_una: SegSeq,
    /// Next segment to transmit; rewinds on timeout.
    pub snd_nxt: SegSeq,
    /// One past the highest segment ever transmitted.
    pub high_tx: SegSeq,
    pub dup_ack_count: u32,
    /// Highest segment outstanding when the last recovery began.
    pub recover_point: Option<SegSeq>,
    pub rtt: RttEstimator,
    pub backoff_exp: u32,
    rto_deadline: Option<f64>,
    outstanding: VecDeque<Outstanding>,
    pub segments_sent: u64,
    pub retransmissions: u64,
    pub timeouts: u64,
    pub fast_recoveries: u64,
}

impl TcpFlowState {
    pub fn new(cfg: TcpConfig) -> Self {
        let rtt = RttEstimator::new(cfg.initial_rto_s, cfg.min_rto_s, cfg.clock_granularity_s);
        Self {
            cwnd: cfg.initial_cwnd.max(1.0),
            sst: cfg.initial_ssthresh,
            phase: Phase::SlowStart,
            snd_una: 0,
            snd_nxt: 0,
            high_tx: 0,
            dup_ack_count: 0,
            recover_point: None,
            rtt,
            backoff_exp: 0,
            rto_deadline: None,
            outstanding: VecDeque::new(),
            segments_sent: 0,
            retransmissions: 0,
            timeouts: 0,
            fast_recoveries: 0,
            cfg,
        }
    }

    pub fn config(&self) -> &TcpConfig {
        &self.cfg
    }

    /// Segments sent and not yet cumulatively acknowledged.
    pub fn flight(&self) -> u64 {
        self.snd_nxt.saturating_sub(self.snd_una)
    }

    /// Current retransmission timeout including exponential backoff.
    pub fn current_rto(&self) -> f64 {
        self.rtt.rto * f64::from(1u32 << self.backoff_exp.min(30))
    }

    pub fn rto_deadline(&self) -> Option<f64> {
        self.rto_deadline
    }

    /// Opens the connection (handshake already done) and fills the initial
    /// window.
    pub fn start(&mut self, now: f64, out: &mut Vec<TcpAction>) {
        self.app_source(now, out);
    }

    fn set_phase(&mut self, to: Phase, out: &mut Vec<TcpAction>) {
        if self.phase != to {
            out.push(TcpAction::PhaseChange {
                from: self.phase,
                to,
            });
            self.phase = to;
        }
    }

    fn arm_timer(&mut self, now: f64) {
        self.rto_deadline = Some(now + self.current_rto());
    }

    fn transmit(&mut self, seq: SegSeq, now: f64, out: &mut Vec<TcpAction>) {
        let retransmission = seq < self.high_tx;
        let idx = (seq - self.snd_una) as usize;
        if idx < self.outstanding.len() {
            let o = &mut self.outstanding[idx];
            o.sent_at = now;
            o.retransmitted |= retransmission;
        } else {
            debug_assert_eq!(idx, self.outstanding.len());
            self.outstanding.push_back(Outstanding {
                sent_at: now,
                retransmitted: retransmission,
            });
        }
        if seq >= self.high_tx {
            self.high_tx = seq + 1;
        }
        self.segments_sent += 1;
        if retransmission {
            self.retransmissions += 1;
        }
        if self.rto_deadline.is_none() {
            self.arm_timer(now);
        }
        out.push(TcpAction::Transmit {
            seq,
            retransmission,
        });
    }

    /// Endless application source: sends while the windows allow.
    pub fn app_source(&mut self, now: f64, out: &mut Vec<TcpAction>) {
        let window = (self.cwnd.floor().max(1.0) as u64).min(self.cfg.receiver_window);
        while self.flight() < window {
            let seq = self.snd_nxt;
            self.snd_nxt += 1;
            self.transmit(seq, now, out);
        }
    }

    /// Processes a cumulative ACK (`ack` = next segment the receiver expects).
    pub fn on_ack(&mut self, ack: SegSeq, now: f64, out: &mut Vec<TcpAction>) {
        if ack < self.snd_una {
            return;
        }
        if ack == self.snd_una {
            if self.flight() > 0 || self.high_tx > self.snd_una {
                self.on_duplicate_ack(now, out);
            }
            return;
        }
        if ack > self.high_tx {
            // Cannot acknowledge data never sent.
            return;
        }

        let acked = ack - self.snd_una;
        let last = &self.outstanding[(acked - 1) as usize];
        if !last.retransmitted {
            let sample = now - last.sent_at;
            self.rtt.on_sample(sample);
            out.push(TcpAction::RttSample(sample));
        }
        for _ in 0..acked {
            self.outstanding.pop_front();
        }
        self.snd_una = ack;
        if self.snd_nxt < self.snd_una {
            self.snd_nxt = self.snd_una;
        }
        self.backoff_exp = 0;

        match self.phase {
            Phase::FastRecovery => {
                let recover = self.recover_point.unwrap_or(0);
                if ack > recover {
                    // Full ACK: deflate to the halved window.
                    self.cwnd = self.sst.max(1.0);
                    self.dup_ack_count = 0;
                    self.set_phase(Phase::CongestionAvoidance, out);
                } else {
                    // Partial ACK: retransmit the next hole, deflate by the
                    // amount acked and add back one segment.
                    self.transmit(self.snd_una, now, out);
                    self.cwnd = (self.cwnd - acked as f64 + 1.0).max(1.0);
                    self.arm_timer(now);
                }
            }
            _ => {
                self.dup_ack_count = 0;
                if self.cwnd < self.sst {
                    self.cwnd += 1.0;
                } else {
                    self.cwnd += 1.0 / self.cwnd;
                }
                let next = if self.cwnd < self.sst {
                    Phase::SlowStart
                } else {
                    Phase::CongestionAvoidance
                };
                self.set_phase(next, out);
            }
        }

        if self.snd_una >= self.high_tx {
            self.rto_deadline = None;
        } else if self.phase != Phase::FastRecovery {
            self.arm_timer(now);
        }
        self.app_source(now, out);
    }

    fn on_duplicate_ack(&mut self, now: f64, out: &mut Vec<TcpAction>) {
        if self.phase == Phase::FastRecovery {
            self.cwnd += 1.0;
            self.app_source(now, out);
            return;
        }
        self.dup_ack_count += 1;
        if self.dup_ack_count != 3 {
            return;
        }
        let may_recover = self.recover_point.map_or(true, |r| self.snd_una > r);
        if !may_recover {
            return;
        }
        let flight = self.flight() as f64;
        self.sst = (flight / 2.0).max(2.0);
        self.recover_point = Some(self.high_tx - 1);
        self.fast_recoveries += 1;
        self.set_phase(Phase::FastRecovery, out);
        self.transmit(self.snd_una, now, out);
        self.cwnd = self.sst + 3.0;
        self.arm_timer(now);
        self.app_source(now, out);
    }

    /// Retransmission timer expiry.
    pub fn on_timeout(&mut self, now: f64, out: &mut Vec<TcpAction>) {
        if self.snd_una >= self.high_tx {
            self.rto_deadline = None;
            return;
        }
        self.timeouts += 1;
        self.sst = (self.cwnd / 2.0).max(2.0);
        self.cwnd = 1.0;
        self.dup_ack_count = 0;
        self.recover_point = Some(self.high_tx - 1);
        self.backoff_exp = (self.backoff_exp + 1).min(self.cfg.max_backoff_exp);
        self.set_phase(Phase::TimeoutBackoff, out);
        // Go back to the first unacknowledged segment.
        self.snd_nxt = self.snd_una;
        let seq = self.snd_nxt;
        self.snd_nxt += 1;
        self.rto_deadline = None;
        self.transmit(seq, now, out);
    }
}

/// Receiver with cumulative ACKs and delayed ACKs (one ACK every `b`
/// in-order segments, or on timer expiry).
#[derive(Debug, Clone)]
pub struct TcpReceiver {
    b: u32,
    pub rcv_nxt: SegSeq,
    out_of_order: BTreeSet<SegSeq>,
    unacked_in_order: u32,
    delack_armed: bool,
    pub duplicate_arrivals: u64,
    pub acks_sent: u64,
}

/// What the receiver wants done after a segment arrives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReceiverAction {
    /// Send a cumulative ACK now.
    Ack(SegSeq),
    /// Start the delayed-ACK timer.
    ArmDelayedAck,
    None,
}

impl TcpReceiver {
    pub fn new(b: u32) -> Self {
        Self {
            b: b.max(1),
            rcv_nxt: 0,
            out_of_order: BTreeSet::new(),
            unacked_in_order: 0,
            delack_armed: false,
            duplicate_arrivals: 0,
            acks_sent: 0,
        }
    }

    fn ack_now(&mut self) -> ReceiverAction {
        self.unacked_in_order = 0;
        self.delack_armed = false;
        self.acks_sent += 1;
        ReceiverAction::Ack(self.rcv_nxt)
    }

    /// Handles an arriving segment; out-of-order and duplicate segments are
    /// acknowledged immediately.
    pub fn on_segment(&mut self, seq: SegSeq) -> ReceiverAction {
        if seq < self.rcv_nxt || self.out_of_order.contains(&seq) {
            self.duplicate_arrivals += 1;
            return self.ack_now();
        }
        if seq > self.rcv_nxt {
            self.out_of_order.insert(seq);
            return self.ack_now();
        }
        let filled_hole = !self.out_of_order.is_empty();
        self.rcv_nxt += 1;
        while self.out_of_order.remove(&self.rcv_nxt) {
            self.rcv_nxt += 1;
        }
        if filled_hole {
            return self.ack_now();
        }
        self.unacked_in_order += 1;
        if self.unacked_in_order >= self.b {
            return self.ack_now();
        }
        if !self.delack_armed {
            self.delack_armed = true;
            return ReceiverAction::ArmDelayedAck;
        }
        ReceiverAction::None
    }

    /// Delayed-ACK timer expiry; returns the ACK to send, if one is owed.
    pub fn on_delack_timer(&mut self) -> Option<SegSeq> {
        if !self.delack_armed {
            return None;
        }
        self.delack_armed = false;
        if self.unacked_in_order == 0 {
            return None;
        }
        match self.ack_now() {
            ReceiverAction::Ack(a) => Some(a),
            _ => None,
        }
    }

    pub fn delack_armed(&self) -> bool {
        self.delack_armed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CycleKind {
    /// Congestion avoidance ended by a fast-recovery episode.
    Cafr,
    /// Ended by a retransmission timeout.
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub kind: CycleKind,
    pub segments_sent_ca: u64,
    /// New (non-retransmitted) segments sent during fast recovery.
    pub segments_sent_fr: u64,
    pub duration_ca_s: f64,
    pub duration_fr_s: f64,
    /// Flight size when the loss was detected.
    pub drop_window_w: u64,
    pub losses_delta: u32,
}

/// Per-flow record of loss cycles and window/RTT statistics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowCycleLog {
    pub cycles: Vec<CycleRecord>,
    /// `cwnd_histogram[w]` counts per-block samples with `floor(cwnd) == w`.
    pub cwnd_histogram: Vec<u64>,
    pub rtt_sum_s: f64,
    pub rtt_count: u64,
    pub timeout_count: u64,
}

impl FlowCycleLog {
    pub fn record_cwnd(&mut self, cwnd: f64) {
        let w = cwnd.floor().max(0.0) as usize;
        if self.cwnd_histogram.len() <= w {
            self.cwnd_histogram.resize(w + 1, 0);
        }
        self.cwnd_histogram[w] += 1;
    }

    pub fn mean_cwnd(&self) -> Option<f64> {
        let n: u64 = self.cwnd_histogram.iter().sum();
        if n == 0 {
            return None;
        }
        let s: f64 = self
            .cwnd_histogram
            .iter()
            .enumerate()
            .map(|(w, &c)| w as f64 * c as f64)
            .sum();
        Some(s / n as f64)
    }
}
