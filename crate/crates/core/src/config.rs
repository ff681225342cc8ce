//! Scenario parameterization, the waveform catalog and the flat key-value
//! config format.
//!
//! A config file is a list of `key = value` lines. Blank lines and lines
//! starting with `#` are ignored. Every key is optional; missing keys take
//! the system defaults below.
//!
//! | key | default |
//! |-----|---------|
//! | `waveform_id` | 14 |
//! | `mss_bytes` | 23 for WF 3, 173 for WF 14 |
//! | `n_rcst` | 30 |
//! | `replicas` | 3 |
//! | `slots_per_block` | 194 for WF 3, 64 for WF 14 |
//! | `block_duration_s` | 0.013 |
//! | `nominal_rtt_s` | 0.52 |
//! | `delayed_ack_b` | 2 |
//! | `initial_rto_s` | 2.0 |
//! | `buffer_segments` | 10000 |
//! | `sim_duration_s` | 1000 |
//! | `warmup_s` | 10% of `sim_duration_s` |
//! | `seed` | 1 |
//! | `rle_payload_bytes` | see [`default_rle_payload`] |
//! | `segment_overhead_bytes` | 15 |
//! | `data_header_bytes` | 7 |
//! | `ack_header_bytes` | 6 |

use std::collections::HashSet;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("invalid `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
}

impl ConfigError {
    /// The config key the error refers to, when there is one.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::UnknownKey { key, .. } => Some(key),
            ConfigError::Invalid { key, .. } => Some(key),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mapping {
    Qpsk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeRate {
    pub num: u32,
    pub den: u32,
}

/// A DVB-RCS2 traffic burst configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Waveform {
    pub id: u32,
    pub burst_len_symbols: u32,
    pub payload_bytes: u32,
    pub payload_symbols: u32,
    pub mapping: Mapping,
    pub code_rate: CodeRate,
}

pub const WF3: Waveform = Waveform {
    id: 3,
    burst_len_symbols: 536,
    payload_bytes: 38,
    payload_symbols: 456,
    mapping: Mapping::Qpsk,
    code_rate: CodeRate { num: 1, den: 3 },
};

pub const WF14: Waveform = Waveform {
    id: 14,
    burst_len_symbols: 1616,
    payload_bytes: 188,
    payload_symbols: 1504,
    mapping: Mapping::Qpsk,
    code_rate: CodeRate { num: 1, den: 2 },
};

impl Waveform {
    pub fn catalog() -> &'static [Waveform] {
        &[WF3, WF14]
    }

    pub fn by_id(id: u32) -> Option<Waveform> {
        Self::catalog().iter().copied().find(|w| w.id == id)
    }

    /// Time-slots per RA block used with this waveform.
    pub fn default_slots_per_block(&self) -> u32 {
        match self.id {
            3 => 194,
            _ => 64,
        }
    }

    /// The MSS sized to fill one burst exactly.
    pub fn default_mss(&self) -> u32 {
        match self.id {
            3 => 23,
            _ => 173,
        }
    }
}

/// Effective RLE payload per burst for a waveform/MSS pair.
///
/// The two cross combinations carry effective payloads that reproduce the
/// fragmentation ratios of the reference deployment: 33 B of a WF 3 burst per
/// fragment of a 188 B unit (r = 0.1755), and 217 B of packing room for
/// 38 B units on WF 14 (r = 5.71). Every other pair uses the waveform payload.
pub fn default_rle_payload(waveform: &Waveform, mss_bytes: u32) -> u32 {
    match (waveform.id, mss_bytes) {
        (3, 173) => 33,
        (14, 23) => 217,
        _ => waveform.payload_bytes,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub waveform: Waveform,
    pub mss_bytes: u32,
    pub n_rcst: u32,
    pub replicas: u32,
    pub slots_per_block: u32,
    pub block_duration_s: f64,
    pub nominal_rtt_s: f64,
    pub delayed_ack_b: u32,
    pub initial_rto_s: f64,
    pub segment_overhead_bytes: u32,
    pub data_header_bytes: u32,
    pub ack_header_bytes: u32,
    pub buffer_segments: u32,
    pub sim_duration_s: f64,
    pub warmup_s: f64,
    pub seed: u64,
    pub rle_payload_bytes: u32,
}

/// Burst-packing ratio `r` and the number of segments `f` lost per collision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FragmentationProfile {
    pub r: f64,
    pub f: u32,
}

impl FragmentationProfile {
    pub fn new(rle_payload_bytes: u32, segment_bytes: u32) -> Self {
        let r = f64::from(rle_payload_bytes) / f64::from(segment_bytes);
        let f = if r > 1.0 { r.ceil() as u32 } else { 1 };
        Self { r, f }
    }
}

pub const KEYS: &[&str] = &[
    "waveform_id",
    "mss_bytes",
    "n_rcst",
    "replicas",
    "slots_per_block",
    "block_duration_s",
    "nominal_rtt_s",
    "delayed_ack_b",
    "initial_rto_s",
    "buffer_segments",
    "sim_duration_s",
    "warmup_s",
    "seed",
    "rle_payload_bytes",
    "segment_overhead_bytes",
    "data_header_bytes",
    "ack_header_bytes",
];

impl ScenarioConfig {
    /// Defaults for a waveform, with every other field at its system value.
    pub fn for_waveform(waveform: Waveform) -> Self {
        let mss = waveform.default_mss();
        let duration = 1000.0;
        Self {
            waveform,
            mss_bytes: mss,
            n_rcst: 30,
            replicas: 3,
            slots_per_block: waveform.default_slots_per_block(),
            block_duration_s: 0.013,
            nominal_rtt_s: 0.52,
            delayed_ack_b: 2,
            initial_rto_s: 2.0,
            segment_overhead_bytes: 15,
            data_header_bytes: 7,
            ack_header_bytes: 6,
            buffer_segments: 10_000,
            sim_duration_s: duration,
            warmup_s: 0.1 * duration,
            seed: 1,
            rle_payload_bytes: default_rle_payload(&waveform, mss),
        }
    }

    /// Defaults for a waveform id and MSS; panics on an unknown waveform.
    pub fn standard(waveform_id: u32, mss_bytes: u32) -> Self {
        let wf = Waveform::by_id(waveform_id).expect("waveform in catalog");
        let mut cfg = Self::for_waveform(wf);
        cfg.mss_bytes = mss_bytes;
        cfg.rle_payload_bytes = default_rle_payload(&wf, mss_bytes);
        cfg
    }

    /// Bytes a segment occupies on the return link (MSS plus headers).
    pub fn segment_bytes(&self) -> u32 {
        self.mss_bytes + self.segment_overhead_bytes
    }

    pub fn fragmentation_profile(&self) -> FragmentationProfile {
        FragmentationProfile::new(self.rle_payload_bytes, self.segment_bytes())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn bad(key: &'static str, reason: impl Into<String>) -> Result<(), ConfigError> {
            Err(ConfigError::Invalid {
                key,
                reason: reason.into(),
            })
        }
        if Waveform::by_id(self.waveform.id) != Some(self.waveform) {
            return bad(
                "waveform_id",
                format!("unknown waveform {}", self.waveform.id),
            );
        }
        if self.mss_bytes == 0 {
            return bad("mss_bytes", "must be positive");
        }
        if self.n_rcst == 0 {
            return bad("n_rcst", "must be at least 1");
        }
        if self.slots_per_block == 0 {
            return bad("slots_per_block", "must be at least 1");
        }
        if self.replicas < 1 || self.replicas > self.slots_per_block {
            return bad(
                "replicas",
                format!(
                    "must satisfy 1 <= replicas <= slots_per_block ({}), got {}",
                    self.slots_per_block, self.replicas
                ),
            );
        }
        if !(self.block_duration_s > 0.0 && self.block_duration_s.is_finite()) {
            return bad("block_duration_s", "must be positive");
        }
        if !(self.nominal_rtt_s >= self.block_duration_s && self.nominal_rtt_s.is_finite()) {
            return bad("nominal_rtt_s", "must be at least block_duration_s");
        }
        if self.delayed_ack_b < 1 {
            return bad("delayed_ack_b", "must be at least 1");
        }
        if !(self.initial_rto_s > 0.0 && self.initial_rto_s.is_finite()) {
            return bad("initial_rto_s", "must be positive");
        }
        if self.buffer_segments == 0 {
            return bad("buffer_segments", "must be at least 1");
        }
        if !(self.sim_duration_s > 0.0 && self.sim_duration_s.is_finite()) {
            return bad("sim_duration_s", "must be positive");
        }
        if !(self.warmup_s >= 0.0 && self.warmup_s < self.sim_duration_s) {
            return bad("warmup_s", "must lie in [0, sim_duration_s)");
        }
        if self.rle_payload_bytes == 0 {
            return bad("rle_payload_bytes", "must be positive");
        }
        Ok(())
    }

    /// Serializes to the key-value format; `parse` reads it back unchanged.
    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "waveform_id = {}", self.waveform.id);
        let _ = writeln!(s, "mss_bytes = {}", self.mss_bytes);
        let _ = writeln!(s, "n_rcst = {}", self.n_rcst);
        let _ = writeln!(s, "replicas = {}", self.replicas);
        let _ = writeln!(s, "slots_per_block = {}", self.slots_per_block);
        let _ = writeln!(s, "block_duration_s = {:?}", self.block_duration_s);
        let _ = writeln!(s, "nominal_rtt_s = {:?}", self.nominal_rtt_s);
        let _ = writeln!(s, "delayed_ack_b = {}", self.delayed_ack_b);
        let _ = writeln!(s, "initial_rto_s = {:?}", self.initial_rto_s);
        let _ = writeln!(s, "buffer_segments = {}", self.buffer_segments);
        let _ = writeln!(s, "sim_duration_s = {:?}", self.sim_duration_s);
        let _ = writeln!(s, "warmup_s = {:?}", self.warmup_s);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "rle_payload_bytes = {}", self.rle_payload_bytes);
        let _ = writeln!(
            s,
            "segment_overhead_bytes = {}",
            self.segment_overhead_bytes
        );
        let _ = writeln!(s, "data_header_bytes = {}", self.data_header_bytes);
        let _ = writeln!(s, "ack_header_bytes = {}", self.ack_header_bytes);
        s
    }
}

impl fmt::Display for ScenarioConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "WF {} / MSS {} / N {}",
            self.waveform.id, self.mss_bytes, self.n_rcst
        )
    }
}

fn parse_value<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T, ConfigError> {
    raw.parse().map_err(|_| ConfigError::Parse {
        line,
        message: format!("`{key}`: cannot parse `{raw}`"),
    })
}

impl FromStr for ScenarioConfig {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut entries: Vec<(usize, String, String)> = Vec::new();
        let mut seen = HashSet::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw_line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((k, v)) = trimmed.split_once('=') else {
                return Err(ConfigError::Parse {
                    line,
                    message: format!("expected `key = value`, got `{trimmed}`"),
                });
            };
            let key = k.trim().to_string();
            let value = v.split('#').next().unwrap_or("").trim().to_string();
            if !KEYS.contains(&key.as_str()) {
                return Err(ConfigError::UnknownKey { line, key });
            }
            if value.is_empty() {
                return Err(ConfigError::Parse {
                    line,
                    message: format!("`{key}` has no value"),
                });
            }
            if !seen.insert(key.clone()) {
                return Err(ConfigError::Parse {
                    line,
                    message: format!("duplicate key `{key}`"),
                });
            }
            entries.push((line, key, value));
        }

        let lookup = |name: &str| entries.iter().find(|(_, k, _)| k == name);

        let waveform = match lookup("waveform_id") {
            Some((line, key, raw)) => {
                let id: u32 = parse_value(*line, key, raw)?;
                Waveform::by_id(id).ok_or(ConfigError::Invalid {
                    key: "waveform_id",
                    reason: format!("unknown waveform {id} (catalog: 3, 14)"),
                })?
            }
            None => WF14,
        };
        let mut cfg = ScenarioConfig::for_waveform(waveform);
        let mut warmup_given = false;
        let mut rle_given = false;

        for (line, key, raw) in &entries {
            let line = *line;
            match key.as_str() {
                "waveform_id" => {}
                "mss_bytes" => cfg.mss_bytes = parse_value(line, key, raw)?,
                "n_rcst" => cfg.n_rcst = parse_value(line, key, raw)?,
                "replicas" => cfg.replicas = parse_value(line, key, raw)?,
                "slots_per_block" => cfg.slots_per_block = parse_value(line, key, raw)?,
                "block_duration_s" => cfg.block_duration_s = parse_value(line, key, raw)?,
                "nominal_rtt_s" => cfg.nominal_rtt_s = parse_value(line, key, raw)?,
                "delayed_ack_b" => cfg.delayed_ack_b = parse_value(line, key, raw)?,
                "initial_rto_s" => cfg.initial_rto_s = parse_value(line, key, raw)?,
                "buffer_segments" => cfg.buffer_segments = parse_value(line, key, raw)?,
                "sim_duration_s" => cfg.sim_duration_s = parse_value(line, key, raw)?,
                "warmup_s" => {
                    cfg.warmup_s = parse_value(line, key, raw)?;
                    warmup_given = true;
                }
                "seed" => cfg.seed = parse_value(line, key, raw)?,
                "rle_payload_bytes" => {
                    cfg.rle_payload_bytes = parse_value(line, key, raw)?;
                    rle_given = true;
                }
                "segment_overhead_bytes" => {
                    cfg.segment_overhead_bytes = parse_value(line, key, raw)?
                }
                "data_header_bytes" => cfg.data_header_bytes = parse_value(line, key, raw)?,
                "ack_header_bytes" => cfg.ack_header_bytes = parse_value(line, key, raw)?,
                _ => unreachable!("keys filtered above"),
            }
        }
        if lookup("mss_bytes").is_none() {
            cfg.mss_bytes = waveform.default_mss();
        }
        if !warmup_given {
            cfg.warmup_s = 0.1 * cfg.sim_duration_s;
        }
        if !rle_given {
            cfg.rle_payload_bytes = default_rle_payload(&waveform, cfg.mss_bytes);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    text.parse()
}

/// Free-function form of [`ScenarioConfig::fragmentation_profile`].
pub fn fragmentation_profile(cfg: &ScenarioConfig) -> FragmentationProfile {
    cfg.fragmentation_profile()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wf3_defaults_to_194_slots() {
        let cfg: ScenarioConfig = "waveform_id = 3\nmss_bytes = 23\nn_rcst = 110\n"
            .parse()
            .unwrap();
        assert_eq!(cfg.slots_per_block, 194);
        assert_eq!(cfg.n_rcst, 110);
        assert_eq!(cfg.replicas, 3);
        assert_eq!(cfg.initial_rto_s, 2.0);
        assert_eq!(cfg.delayed_ack_b, 2);
    }

    #[test]
    fn wf14_omitting_slots_gets_64() {
        let cfg: ScenarioConfig = "waveform_id = 14\nmss_bytes = 173\n".parse().unwrap();
        assert_eq!(cfg.slots_per_block, 64);
    }

    #[test]
    fn zero_replicas_is_rejected() {
        let err = "replicas = 0\n".parse::<ScenarioConfig>().unwrap_err();
        assert_eq!(err.key(), Some("replicas"));
    }

    #[test]
    fn replicas_above_slots_rejected() {
        let err = "slots_per_block = 2\nreplicas = 3\n"
            .parse::<ScenarioConfig>()
            .unwrap_err();
        assert_eq!(err.key(), Some("replicas"));
    }

    #[test]
    fn unknown_waveform_rejected() {
        let err = "waveform_id = 7\n".parse::<ScenarioConfig>().unwrap_err();
        assert_eq!(err.key(), Some("waveform_id"));
    }

    #[test]
    fn parse_error_carries_line_number() {
        let err = "# header\nn_rcst = 30\nmss_bytes = abc\n"
            .parse::<ScenarioConfig>()
            .unwrap_err();
        match err {
            ConfigError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let err = "\n\nbogus = 1\n".parse::<ScenarioConfig>().unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { line: 3, .. }));
    }

    #[test]
    fn rtt_shorter_than_block_rejected() {
        let err = "nominal_rtt_s = 0.001\n"
            .parse::<ScenarioConfig>()
            .unwrap_err();
        assert_eq!(err.key(), Some("nominal_rtt_s"));
        let err = "delayed_ack_b = 0\n".parse::<ScenarioConfig>().unwrap_err();
        assert_eq!(err.key(), Some("delayed_ack_b"));
    }

    #[test]
    fn warmup_defaults_to_tenth_of_duration() {
        let cfg: ScenarioConfig = "sim_duration_s = 500\n".parse().unwrap();
        assert!((cfg.warmup_s - 50.0).abs() < 1e-12);
    }

    #[test]
    fn fragmentation_of_standard_configs() {
        let p = ScenarioConfig::standard(3, 23).fragmentation_profile();
        assert_eq!((p.r, p.f), (1.0, 1));
        let p = ScenarioConfig::standard(14, 173).fragmentation_profile();
        assert_eq!((p.r, p.f), (1.0, 1));
        let p = ScenarioConfig::standard(3, 173).fragmentation_profile();
        assert!((p.r - 0.175).abs() < 1e-3, "r = {}", p.r);
        assert_eq!(p.f, 1);
        let p = ScenarioConfig::standard(14, 23).fragmentation_profile();
        assert!((p.r - 5.7).abs() < 0.05, "r = {}", p.r);
        assert_eq!(p.f, 6);
    }

    #[test]
    fn explicit_rle_payload_wins() {
        let cfg: ScenarioConfig = "waveform_id = 14\nmss_bytes = 23\nrle_payload_bytes = 188\n"
            .parse()
            .unwrap();
        let p = cfg.fragmentation_profile();
        assert_eq!(p.f, 5);
    }

    proptest! {
        #[test]
        fn f_follows_ceiling_rule(payload in 1u32..2000, seg in 1u32..2000) {
            let p = FragmentationProfile::new(payload, seg);
            if p.r <= 1.0 {
                prop_assert_eq!(p.f, 1);
            } else {
                prop_assert_eq!(p.f, p.r.ceil() as u32);
                prop_assert!(p.f >= 2);
            }
        }

        #[test]
        fn kv_round_trip(
            wf in prop::sample::select(vec![3u32, 14]),
            mss in 1u32..1500,
            n in 1u32..600,
            replicas in 1u32..6,
            b in 1u32..4,
            rto in 0.5f64..5.0,
            duration in 10.0f64..5000.0,
            warm_frac in 0.0f64..0.9,
            seed in any::<u64>(),
        ) {
            let mut cfg = ScenarioConfig::standard(wf, mss);
            cfg.n_rcst = n;
            cfg.replicas = replicas;
            cfg.delayed_ack_b = b;
            cfg.initial_rto_s = rto;
            cfg.sim_duration_s = duration;
            cfg.warmup_s = duration * warm_frac;
            cfg.seed = seed;
            cfg.validate().unwrap();
            let back: ScenarioConfig = cfg.to_kv_string().parse().unwrap();
            prop_assert_eq!(back, cfg);
        }
    }
}
