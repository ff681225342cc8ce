//! CRDSA++ random access: replica placement in an RA block, iterative
//! successive interference cancellation (SIC), and load/loss accounting.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ScenarioConfig;
use crate::rle::SegmentRef;
use crate::rng::{rcst_stream, SeededRng, MAC_STREAM};

/// SIC round cap used by the simulator.
pub const DEFAULT_MAX_ITERS: u32 = 20;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MacError {
    #[error("block {0} is sealed; no more bursts can be placed")]
    Sealed(u64),
    #[error("block {block} already holds a burst from RCST {rcst}")]
    DuplicateRcst { block: u64, rcst: usize },
    #[error("block {0} must be sealed before decoding")]
    NotSealed(u64),
    #[error("{replicas} replicas do not fit in {slots} slots")]
    TooManyReplicas { replicas: u32, slots: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Burst {
    pub rcst_id: usize,
    pub burst_seq: u64,
    pub payload: Vec<SegmentRef>,
    /// Filled in by [`RaBlock::place_burst`].
    pub replica_slots: Vec<u32>,
}

impl Burst {
    pub fn new(rcst_id: usize, burst_seq: u64, payload: Vec<SegmentRef>) -> Self {
        Self {
            rcst_id,
            burst_seq,
            payload,
            replica_slots: Vec::new(),
        }
    }
}

/// One RA block: `slots[s]` lists the bursts (by index into `bursts`) with a
/// replica in slot `s`.
#[derive(Debug, Clone)]
pub struct RaBlock {
    pub block_index: u64,
    replicas: u32,
    slots: Vec<Vec<usize>>,
    bursts: Vec<Burst>,
    sealed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DecodeOutcome {
    /// Burst indices, ascending.
    pub decoded: Vec<usize>,
    pub lost: Vec<usize>,
    /// SIC rounds that decoded at least one burst.
    pub iterations: u32,
}

impl RaBlock {
    pub fn new(block_index: u64, slots_per_block: u32, replicas: u32) -> Result<Self, MacError> {
        if replicas == 0 || replicas > slots_per_block {
            return Err(MacError::TooManyReplicas {
                replicas,
                slots: slots_per_block,
            });
        }
        Ok(Self {
            block_index,
            replicas,
            slots: vec![Vec::new(); slots_per_block as usize],
            bursts: Vec::new(),
            sealed: false,
        })
    }

    /// Empties the block for reuse, keeping its allocations.
    pub fn reset(&mut self, block_index: u64) {
        self.block_index = block_index;
        for s in &mut self.slots {
            s.clear();
        }
        self.bursts.clear();
        self.sealed = false;
    }

    pub fn slots_per_block(&self) -> u32 {
        self.slots.len() as u32
    }

    pub fn replicas(&self) -> u32 {
        self.replicas
    }

    pub fn slot(&self, s: usize) -> &[usize] {
        &self.slots[s]
    }

    pub fn bursts(&self) -> &[Burst] {
        &self.bursts
    }

    pub fn into_bursts(self) -> Vec<Burst> {
        self.bursts
    }

    pub fn unique_burst_count(&self) -> usize {
        self.bursts.len()
    }

    /// Normalized offered load of this block (unique bursts per slot).
    pub fn load(&self) -> f64 {
        self.bursts.len() as f64 / self.slots.len() as f64
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    pub fn seal(&mut self) {
        self.sealed = true;
    }

    /// Places all replicas of `burst` in distinct uniformly drawn slots and
    /// returns its index within the block.
    pub fn place_burst(&mut self, mut burst: Burst, rng: &mut impl Rng) -> Result<usize, MacError> {
        if self.sealed {
            return Err(MacError::Sealed(self.block_index));
        }
        if self.bursts.iter().any(|b| b.rcst_id == burst.rcst_id) {
            return Err(MacError::DuplicateRcst {
                block: self.block_index,
                rcst: burst.rcst_id,
            });
        }
        let id = self.bursts.len();
        let picks = index::sample(rng, self.slots.len(), self.replicas as usize);
        burst.replica_slots.clear();
        for s in picks.iter() {
            self.slots[s].push(id);
            burst.replica_slots.push(s as u32);
        }
        self.bursts.push(burst);
        Ok(id)
    }
}

/// Iterative SIC with perfect cancellation: each round decodes every burst
/// that is alone in some slot, then removes all its replicas. Stops when a
/// round makes no progress or after `max_iters` rounds.
pub fn decode_block(block: &RaBlock, max_iters: u32) -> Result<DecodeOutcome, MacError> {
    if !block.sealed {
        return Err(MacError::NotSealed(block.block_index));
    }
    let mut count: Vec<u32> = block.slots.iter().map(|s| s.len() as u32).collect();
    let mut done = vec![false; block.bursts.len()];
    let mut iterations = 0;
    let mut ready = Vec::new();
    while iterations < max_iters {
        ready.clear();
        for (s, occ) in block.slots.iter().enumerate() {
            if count[s] == 1 {
                if let Some(&b) = occ.iter().find(|&&b| !done[b]) {
                    ready.push(b);
                }
            }
        }
        if ready.is_empty() {
            break;
        }
        iterations += 1;
        for &b in &ready {
            if done[b] {
                continue;
            }
            done[b] = true;
            for &s in &block.bursts[b].replica_slots {
                count[s as usize] -= 1;
            }
        }
    }
    let (decoded, lost) = (0..block.bursts.len()).partition(|&b| done[b]);
    Ok(DecodeOutcome {
        decoded,
        lost,
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub block_index: u64,
    pub offered: u32,
    pub decoded: u32,
}

/// Burst-level statistics over a run of RA blocks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MacStats {
    pub slots_per_block: u32,
    pub n_rcst: u32,
    pub bursts_offered: u64,
    pub bursts_lost: u64,
    /// `bursts_lost / bursts_offered`, zero when nothing was offered.
    pub blr: f64,
    pub g_mean: f64,
    /// Decoded unique bursts per slot.
    pub throughput_mean: f64,
    pub lambda: f64,
    pub blocks: Vec<BlockRecord>,
}

impl MacStats {
    pub fn new(slots_per_block: u32, n_rcst: u32) -> Self {
        Self {
            slots_per_block,
            n_rcst,
            ..Self::default()
        }
    }

    pub fn record(&mut self, block_index: u64, offered: u32, decoded: u32) {
        self.blocks.push(BlockRecord {
            block_index,
            offered,
            decoded,
        });
        self.bursts_offered += u64::from(offered);
        self.bursts_lost += u64::from(offered - decoded);
        self.refresh();
    }

    fn refresh(&mut self) {
        let nb = self.blocks.len() as f64;
        let n = f64::from(self.slots_per_block.max(1));
        self.blr = if self.bursts_offered == 0 {
            0.0
        } else {
            self.bursts_lost as f64 / self.bursts_offered as f64
        };
        let decoded = self.bursts_offered - self.bursts_lost;
        self.g_mean = if nb > 0.0 {
            self.bursts_offered as f64 / (nb * n)
        } else {
            0.0
        };
        self.throughput_mean = if nb > 0.0 {
            decoded as f64 / (nb * n)
        } else {
            0.0
        };
        self.lambda = if self.n_rcst > 0 {
            self.g_mean / f64::from(self.n_rcst)
        } else {
            0.0
        };
    }

    pub fn has_samples(&self) -> bool {
        self.bursts_offered > 0
    }

    pub fn g_series(&self) -> impl Iterator<Item = f64> + '_ {
        let n = f64::from(self.slots_per_block.max(1));
        self.blocks.iter().map(move |b| f64::from(b.offered) / n)
    }

    /// Mean load over `parts` consecutive equal slices of the run.
    pub fn g_by_part(&self, parts: usize) -> Vec<f64> {
        let n = f64::from(self.slots_per_block.max(1));
        let len = self.blocks.len() / parts.max(1);
        if len == 0 {
            return Vec::new();
        }
        self.blocks
            .chunks(len)
            .take(parts)
            .map(|c| c.iter().map(|b| f64::from(b.offered)).sum::<f64>() / (c.len() as f64 * n))
            .collect()
    }

    /// 99% confidence interval on the BLR by batch means over `batches`
    /// consecutive groups of blocks.
    pub fn blr_ci99(&self, batches: usize) -> Option<(f64, f64)> {
        let len = self.blocks.len() / batches.max(2);
        if len == 0 {
            return None;
        }
        let rates: Vec<f64> = self
            .blocks
            .chunks_exact(len)
            .filter_map(|c| {
                let off: u32 = c.iter().map(|b| b.offered).sum();
                let lost: u32 = c.iter().map(|b| b.offered - b.decoded).sum();
                (off > 0).then(|| f64::from(lost) / f64::from(off))
            })
            .collect();
        let k = rates.len() as f64;
        if k < 2.0 {
            return None;
        }
        let mean = rates.iter().sum::<f64>() / k;
        let var = rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (k - 1.0);
        let half = 2.5758 * (var / k).sqrt();
        Some((self.blr - half, self.blr + half))
    }
}

/// Open-loop MAC run: no TCP, every RCST independently offers one burst per
/// block with probability `tx_prob` (drawn from its own stream).
pub fn run_open_loop(
    cfg: &ScenarioConfig,
    tx_prob: f64,
    blocks: u64,
) -> Result<MacStats, MacError> {
    let n = cfg.n_rcst as usize;
    let mut mac_rng = SeededRng::new(cfg.seed, MAC_STREAM);
    let mut rcst_rngs: Vec<SeededRng> = (0..n)
        .map(|i| SeededRng::new(cfg.seed, rcst_stream(i)))
        .collect();
    let mut block = RaBlock::new(0, cfg.slots_per_block, cfg.replicas)?;
    let mut stats = MacStats::new(cfg.slots_per_block, cfg.n_rcst);
    stats.blocks.reserve(blocks as usize);
    for k in 0..blocks {
        block.reset(k);
        for (i, r) in rcst_rngs.iter_mut().enumerate() {
            if tx_prob >= 1.0 || r.gen::<f64>() < tx_prob {
                block.place_burst(Burst::new(i, k, Vec::new()), &mut mac_rng)?;
            }
        }
        block.seal();
        let out = decode_block(&block, DEFAULT_MAX_ITERS)?;
        stats.record(
            k,
            block.unique_burst_count() as u32,
            out.decoded.len() as u32,
        );
    }
    Ok(stats)
}

/// Closed-form per-burst loss probability of slotted ALOHA (one replica)
/// with `n_rcst` terminals each transmitting with probability `t` in `n`
/// slots, averaged over the number of burst-weighted contenders.
pub fn slotted_aloha_blr(n_slots: u32, n_rcst: u32, t: f64) -> f64 {
    // A tagged transmitting burst faces K-1 ~ Binomial(N-1, t) others, each
    // colliding with probability 1/n.
    let clean = 1.0 - 1.0 / f64::from(n_slots);
    let others = n_rcst.saturating_sub(1);
    let mut ok = 0.0;
    for j in 0..=others {
        ok += binomial_pmf(others, j, t) * clean.powi(j as i32);
    }
    1.0 - ok
}

fn binomial_pmf(n: u32, k: u32, p: f64) -> f64 {
    let mut ln_c = 0.0;
    for i in 0..k {
        ln_c += f64::from(n - i).ln() - f64::from(i + 1).ln();
    }
    if p <= 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p >= 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    (ln_c + f64::from(k) * p.ln() + f64::from(n - k) * (1.0 - p).ln()).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn block_with(slots: u32, replicas: u32, placements: &[&[u32]]) -> RaBlock {
        let mut b = RaBlock::new(0, slots, replicas).unwrap();
        for (i, pl) in placements.iter().enumerate() {
            let id = b.bursts.len();
            for &s in pl.iter() {
                b.slots[s as usize].push(id);
            }
            let mut burst = Burst::new(i, 0, Vec::new());
            burst.replica_slots = pl.to_vec();
            b.bursts.push(burst);
        }
        b.seal();
        b
    }

    #[test]
    fn lone_burst_decodes() {
        let b = block_with(64, 3, &[&[1, 7, 40]]);
        let out = decode_block(&b, 20).unwrap();
        assert_eq!(out.decoded, vec![0]);
        assert!(out.lost.is_empty());
    }

    #[test]
    fn single_replica_collision_loses_both() {
        let b = block_with(10, 1, &[&[4], &[4]]);
        let out = decode_block(&b, 20).unwrap();
        assert!(out.decoded.is_empty());
        assert_eq!(out.lost, vec![0, 1]);
    }

    #[test]
    fn sic_resolves_shared_slot() {
        // A in {0,1}, B in {1,2}: slot 1 collides, slots 0 and 2 are clean.
        let b = block_with(3, 2, &[&[0, 1], &[1, 2]]);
        let out = decode_block(&b, 20).unwrap();
        assert_eq!(out.decoded, vec![0, 1]);
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn sic_chain_needs_successive_rounds() {
        // C and E start clean; removing them frees B and D, which free A.
        let b = block_with(6, 2, &[&[5, 0], &[3, 0], &[2, 4], &[4, 5], &[3, 1]]);
        let out = decode_block(&b, 20).unwrap();
        assert_eq!(out.decoded, vec![0, 1, 2, 3, 4]);
        assert_eq!(out.iterations, 3);
        assert_eq!(decode_block(&b, 1).unwrap().decoded, vec![2, 4]);
        assert_eq!(decode_block(&b, 2).unwrap().decoded, vec![1, 2, 3, 4]);
    }

    #[test]
    fn stopping_set_is_lost() {
        // Two bursts sharing both replicas can never be separated.
        let b = block_with(8, 2, &[&[3, 5], &[3, 5], &[0, 1]]);
        let out = decode_block(&b, 20).unwrap();
        assert_eq!(out.decoded, vec![2]);
        assert_eq!(out.lost, vec![0, 1]);
    }

    #[test]
    fn unsealed_and_sealed_misuse() {
        let mut rng = SeededRng::new(1, MAC_STREAM);
        let mut b = RaBlock::new(3, 64, 3).unwrap();
        b.place_burst(Burst::new(0, 0, Vec::new()), &mut rng)
            .unwrap();
        assert_eq!(decode_block(&b, 20), Err(MacError::NotSealed(3)));
        assert_eq!(
            b.place_burst(Burst::new(0, 1, Vec::new()), &mut rng),
            Err(MacError::DuplicateRcst { block: 3, rcst: 0 })
        );
        b.seal();
        assert_eq!(
            b.place_burst(Burst::new(1, 0, Vec::new()), &mut rng),
            Err(MacError::Sealed(3))
        );
        assert!(RaBlock::new(0, 2, 3).is_err());
    }

    #[test]
    fn placement_is_distinct_in_range_and_repeatable() {
        let place = |seed| {
            let mut rng = SeededRng::new(seed, MAC_STREAM);
            let mut b = RaBlock::new(0, 64, 3).unwrap();
            for i in 0..20 {
                b.place_burst(Burst::new(i, 0, Vec::new()), &mut rng)
                    .unwrap();
            }
            b.bursts()
                .iter()
                .map(|x| x.replica_slots.clone())
                .collect::<Vec<_>>()
        };
        let a = place(5);
        assert_eq!(a, place(5));
        for s in &a {
            assert_eq!(s.len(), 3);
            assert!(s.iter().all(|&x| x < 64));
            assert!(s[0] != s[1] && s[1] != s[2] && s[0] != s[2]);
        }
    }

    #[test]
    fn no_transmissions_is_zero_sample() {
        let cfg = ScenarioConfig::standard(14, 173);
        let st = run_open_loop(&cfg, 0.0, 100).unwrap();
        assert_eq!(st.bursts_offered, 0);
        assert!(!st.has_samples());
        assert_eq!(st.blr, 0.0);
    }

    #[test]
    fn slotted_aloha_closed_form() {
        // everyone transmits: 1 - (1 - 1/100)^49
        let v = slotted_aloha_blr(100, 50, 1.0);
        assert!((v - 0.388_882_76).abs() < 1e-8, "{v}");
        assert_eq!(slotted_aloha_blr(100, 1, 0.7), 0.0);
    }

    #[test]
    fn slotted_aloha_matches_oracle_short_run() {
        let mut cfg = ScenarioConfig::standard(14, 173);
        cfg.replicas = 1;
        cfg.slots_per_block = 100;
        cfg.n_rcst = 50;
        cfg.seed = 11;
        let st = run_open_loop(&cfg, 0.6, 20_000).unwrap();
        let (lo, hi) = st.blr_ci99(50).unwrap();
        let oracle = slotted_aloha_blr(100, 50, 0.6);
        assert!(lo <= oracle && oracle <= hi, "{lo} {oracle} {hi}");
    }

    #[test]
    fn lambda_is_load_per_terminal() {
        let mut cfg = ScenarioConfig::standard(14, 173);
        cfg.n_rcst = 40;
        let st = run_open_loop(&cfg, 0.5, 2_000).unwrap();
        assert!((st.lambda - st.g_mean / 40.0).abs() < 1e-15);
        assert!((st.g_mean - 0.5 * 40.0 / 64.0).abs() < 0.01);
    }

    fn random_block(seed: u64, slots: u32, replicas: u32, k: usize) -> RaBlock {
        let mut rng = SeededRng::new(seed, MAC_STREAM);
        let mut b = RaBlock::new(0, slots, replicas).unwrap();
        for i in 0..k {
            b.place_burst(Burst::new(i, 0, Vec::new()), &mut rng)
                .unwrap();
        }
        b.seal();
        b
    }

    proptest! {
        #[test]
        fn decode_partitions_offered(seed in any::<u64>(), k in 0usize..80, replicas in 1u32..4) {
            let b = random_block(seed, 64, replicas, k);
            let out = decode_block(&b, DEFAULT_MAX_ITERS).unwrap();
            prop_assert_eq!(out.decoded.len() + out.lost.len(), b.unique_burst_count());
            let mut all: Vec<usize> = out.decoded.iter().chain(&out.lost).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..k).collect::<Vec<_>>());
        }

        #[test]
        fn more_rounds_never_decode_less(seed in any::<u64>(), k in 0usize..80) {
            let b = random_block(seed, 64, 3, k);
            let mut prev: Vec<usize> = Vec::new();
            for it in 0..12 {
                let d = decode_block(&b, it).unwrap().decoded;
                prop_assert!(prev.iter().all(|x| d.contains(x)));
                prev = d;
            }
            let full = decode_block(&b, 1000).unwrap();
            prop_assert_eq!(decode_block(&b, full.iterations).unwrap().decoded, full.decoded);
        }

        #[test]
        fn decoding_is_pure(seed in any::<u64>(), k in 0usize..60) {
            let b = random_block(seed, 64, 3, k);
            prop_assert_eq!(decode_block(&b, 20).unwrap(), decode_block(&b, 20).unwrap());
        }
    }

    #[test]
    fn blr_grows_with_population() {
        let mut cfg = ScenarioConfig::standard(14, 173);
        let mut last = -1.0;
        for n in [20u32, 40, 60, 80] {
            cfg.n_rcst = n;
            let st = run_open_loop(&cfg, 0.8, 3_000).unwrap();
            assert!(st.blr + 2e-3 >= last, "N={n}: {} < {last}", st.blr);
            last = st.blr;
        }
    }
}
