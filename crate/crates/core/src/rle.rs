//! Return Link Encapsulation: packing queued segments into burst payloads,
//! and mapping burst outcomes back to whole segments at the gateway.

use std::collections::{BTreeSet, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::tcp::SegSeq;

/// One segment (or a fragment of it) carried by a burst.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentRef {
    pub flow_id: usize,
    pub seg_seq: SegSeq,
    /// Distinguishes retransmissions of the same sequence number.
    pub instance: u64,
    pub bytes_total: u32,
    pub bytes_in_burst: u32,
    pub is_final_fragment: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Queued {
    seg_seq: SegSeq,
    instance: u64,
    bytes_total: u32,
}

/// Per-RCST FIFO of segments waiting for a transmission opportunity.
#[derive(Debug, Clone)]
pub struct TxQueue {
    flow_id: usize,
    pending: VecDeque<Queued>,
    capacity_segments: usize,
    /// Bytes of the head segment already emitted in earlier bursts.
    partially_sent: u32,
    /// Most whole-or-partial segments one burst may carry.
    max_units: usize,
    overflow_drops: u64,
    admitted_bytes: u64,
    emitted_bytes: u64,
}

impl TxQueue {
    pub fn new(flow_id: usize, capacity_segments: usize) -> Self {
        Self {
            flow_id,
            pending: VecDeque::new(),
            capacity_segments,
            partially_sent: 0,
            max_units: usize::MAX,
            overflow_drops: 0,
            admitted_bytes: 0,
            emitted_bytes: 0,
        }
    }

    /// Caps the segments (whole or partial) per burst; with `r > 1` this is
    /// `f`, so one lost burst never costs more than `f` segments.
    pub fn with_max_units(mut self, max_units: usize) -> Self {
        self.max_units = max_units.max(1);
        self
    }

    pub fn flow_id(&self) -> usize {
        self.flow_id
    }

    /// Queues a segment, tail-dropping it when the buffer is full.
    pub fn enqueue(&mut self, seg_seq: SegSeq, instance: u64, bytes_total: u32) -> bool {
        if self.pending.len() >= self.capacity_segments {
            self.overflow_drops += 1;
            return false;
        }
        self.admitted_bytes += u64::from(bytes_total);
        self.pending.push_back(Queued {
            seg_seq,
            instance,
            bytes_total,
        });
        true
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn overflow_drops(&self) -> u64 {
        self.overflow_drops
    }

    pub fn admitted_bytes(&self) -> u64 {
        self.admitted_bytes
    }

    pub fn emitted_bytes(&self) -> u64 {
        self.emitted_bytes
    }

    /// Bytes still waiting, counting only the unsent part of a split head.
    pub fn queued_bytes(&self) -> u64 {
        let total: u64 = self.pending.iter().map(|q| u64::from(q.bytes_total)).sum();
        total - u64::from(self.partially_sent)
    }

    /// Sequence numbers in queue order.
    pub fn queued_seqs(&self) -> impl Iterator<Item = SegSeq> + '_ {
        self.pending.iter().map(|q| q.seg_seq)
    }

    /// Fills one burst payload greedily in FIFO order, resuming a split head
    /// first. Returns `None` when nothing is queued.
    pub fn pack_next_burst(&mut self, payload_bytes: u32) -> Option<Vec<SegmentRef>> {
        if self.pending.is_empty() || payload_bytes == 0 {
            return None;
        }
        let mut room = payload_bytes;
        let mut slices = Vec::new();
        while room > 0 && slices.len() < self.max_units {
            let Some(head) = self.pending.front().copied() else {
                break;
            };
            let remaining = head.bytes_total - self.partially_sent;
            let take = remaining.min(room);
            let is_final = take == remaining;
            slices.push(SegmentRef {
                flow_id: self.flow_id,
                seg_seq: head.seg_seq,
                instance: head.instance,
                bytes_total: head.bytes_total,
                bytes_in_burst: take,
                is_final_fragment: is_final,
            });
            room -= take;
            self.emitted_bytes += u64::from(take);
            if is_final {
                self.pending.pop_front();
                self.partially_sent = 0;
            } else {
                self.partially_sent += take;
            }
        }
        Some(slices)
    }
}

/// Sequence numbers lost along with a burst: every segment with any slice in
/// the payload is lost in full.
pub fn on_burst_lost(payload: &[SegmentRef]) -> BTreeSet<SegSeq> {
    payload.iter().map(|s| s.seg_seq).collect()
}

/// Gateway-side reassembly for one flow.
///
/// A fragmented segment is lost on its first lost fragment; fragments of it
/// that still arrive afterwards are discarded.
#[derive(Debug, Default, Clone)]
pub struct Reassembler {
    lost_instances: HashSet<u64>,
}

impl Reassembler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Marks the payload's segment instances as lost; returns the instances
    /// that were not already marked.
    pub fn burst_lost(&mut self, payload: &[SegmentRef]) -> Vec<SegmentRef> {
        let mut fresh = Vec::new();
        for s in payload {
            let newly = self.lost_instances.insert(s.instance);
            if s.is_final_fragment {
                self.lost_instances.remove(&s.instance);
            }
            if newly && !fresh.iter().any(|f: &SegmentRef| f.instance == s.instance) {
                fresh.push(*s);
            }
        }
        fresh
    }

    /// Returns the segments completed by a successfully decoded burst.
    pub fn burst_decoded(&mut self, payload: &[SegmentRef]) -> Vec<SegmentRef> {
        let mut done = Vec::new();
        for s in payload {
            if s.is_final_fragment {
                if !self.lost_instances.remove(&s.instance) {
                    done.push(*s);
                }
            }
        }
        done
    }

    pub fn pending_lost(&self) -> usize {
        self.lost_instances.len()
    }
}
