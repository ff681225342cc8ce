//! Model-versus-simulation comparison and CSV/JSON exports.
//!
//! Every CSV writer here has a matching reader so files emitted by one
//! command can be fed to another.

use std::fmt;
use std::io;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ScenarioConfig;
use crate::mac::{run_open_loop, MacError};
use crate::model::{
    blr_model, pftk_baseline, throughput_full, throughput_no_to, BlrMode, LossProcessParams,
    ModelError, TcpModelParams,
};
use crate::rng::mix_seed;
use crate::sim::{RunMetrics, TraceRow};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("unknown model `{0}` (expected one of newrenosat_noto, newrenosat_full, blr_noto, blr_full, pftk)")]
    UnknownModel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    NewrenosatNoto,
    NewrenosatFull,
    BlrNoto,
    BlrFull,
    Pftk,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::NewrenosatNoto,
        ModelKind::NewrenosatFull,
        ModelKind::BlrNoto,
        ModelKind::BlrFull,
        ModelKind::Pftk,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::NewrenosatNoto => "newrenosat_noto",
            ModelKind::NewrenosatFull => "newrenosat_full",
            ModelKind::BlrNoto => "blr_noto",
            ModelKind::BlrFull => "blr_full",
            ModelKind::Pftk => "pftk",
        }
    }

    /// Parses a comma-separated list; `all` selects every model.
    pub fn parse_list(s: &str) -> Result<Vec<ModelKind>, ReportError> {
        if s.trim() == "all" {
            return Ok(Self::ALL.to_vec());
        }
        s.split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect()
    }

    /// Throughput estimate in kbps for the measured loss process of `m`.
    pub fn evaluate(self, m: &RunMetrics) -> Result<f64, ModelError> {
        let tcp = TcpModelParams::new(2.0, m.e_rtt_s, m.rto_s, f64::from(m.mss));
        let loss = LossProcessParams::new(m.p, m.q);
        let est = match self {
            ModelKind::NewrenosatNoto => throughput_no_to(&loss, &tcp)?,
            ModelKind::NewrenosatFull => throughput_full(&loss, &tcp)?,
            ModelKind::BlrNoto => blr_model(m.blr, BlrMode::NoTimeouts, &tcp)?.estimate,
            ModelKind::BlrFull => blr_model(m.blr, BlrMode::Full, &tcp)?.estimate,
            ModelKind::Pftk => pftk_baseline(&loss, &tcp, None)?,
        };
        Ok(est.t_kbps)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ReportError::UnknownModel(s.to_string()))
    }
}

/// `|1 - t_est / t_sim|`, undefined when the simulated throughput is zero.
pub fn relative_error(t_est: f64, t_sim: f64) -> Option<f64> {
    if t_sim > 0.0 && t_est.is_finite() {
        Some((1.0 - t_est / t_sim).abs())
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub wf: u32,
    pub mss: u32,
    pub n_rcst: u32,
    pub model: ModelKind,
    pub t_sim_kbps: f64,
    pub t_est_kbps: Option<f64>,
    pub eta: Option<f64>,
    pub error: Option<String>,
}

impl ComparisonRow {
    pub fn eta_cell(&self) -> String {
        self.eta
            .map_or_else(|| "N/A".to_string(), |e| format!("{e:.4}"))
    }
}

/// One row per requested model; model failures stay in the table as errors.
pub fn compare(m: &RunMetrics, models: &[ModelKind]) -> Vec<ComparisonRow> {
    models
        .iter()
        .map(|&model| {
            let (t_est, error) = match model.evaluate(m) {
                Ok(t) => (Some(t), None),
                Err(e) => (None, Some(e.to_string())),
            };
            ComparisonRow {
                wf: m.wf,
                mss: m.mss,
                n_rcst: m.n_rcst,
                model,
                t_sim_kbps: m.thr_kbps,
                t_est_kbps: t_est,
                eta: t_est.and_then(|t| relative_error(t, m.thr_kbps)),
                error,
            }
        })
        .collect()
}

/// Aligned plain-text table of comparison rows.
pub fn format_comparison(rows: &[ComparisonRow]) -> String {
    let mut out = format!(
        "{:>4} {:>5} {:>6} {:<16} {:>10} {:>10} {:>8}\n",
        "wf", "mss", "n", "model", "t_sim", "t_est", "eta"
    );
    for r in rows {
        let est = r
            .t_est_kbps
            .map_or_else(|| "error".to_string(), |t| format!("{t:.3}"));
        out.push_str(&format!(
            "{:>4} {:>5} {:>6} {:<16} {:>10.3} {:>10} {:>8}\n",
            r.wf,
            r.mss,
            r.n_rcst,
            r.model.name(),
            r.t_sim_kbps,
            est,
            r.eta_cell()
        ));
    }
    out
}

/// Per-scenario summary row: `wf,mss,n_rcst,blr,r,f,q,p,e_delta,e_rtt,thr_kbps,xi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub wf: u32,
    pub mss: u32,
    pub n_rcst: u32,
    pub blr: f64,
    pub r: f64,
    pub f: u32,
    pub q: f64,
    pub p: f64,
    pub e_delta: f64,
    pub e_rtt: f64,
    pub thr_kbps: f64,
    pub xi: f64,
}

pub const SUMMARY_HEADER: &str = "wf,mss,n_rcst,blr,r,f,q,p,e_delta,e_rtt,thr_kbps,xi";

impl From<&RunMetrics> for SummaryRow {
    fn from(m: &RunMetrics) -> Self {
        Self {
            wf: m.wf,
            mss: m.mss,
            n_rcst: m.n_rcst,
            blr: m.blr,
            r: m.r,
            f: m.f,
            q: m.q,
            p: m.p,
            e_delta: m.e_delta,
            e_rtt: m.e_rtt_s,
            thr_kbps: m.thr_kbps,
            xi: m.xi,
        }
    }
}

impl SummaryRow {
    /// Metrics sufficient for [`compare`]; the initial RTO is not part of
    /// the row and is supplied by the caller.
    pub fn to_metrics(&self, rto_s: f64) -> RunMetrics {
        RunMetrics {
            wf: self.wf,
            mss: self.mss,
            n_rcst: self.n_rcst,
            blr: self.blr,
            r: self.r,
            f: self.f,
            q: self.q,
            p: self.p,
            e_delta: self.e_delta,
            e_rtt_s: self.e_rtt,
            thr_kbps: self.thr_kbps,
            xi: self.xi,
            rto_s,
            ..RunMetrics::default()
        }
    }
}

/// Load and throughput of one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadRow {
    pub n_rcst: u32,
    pub g: f64,
    pub normalized_throughput: f64,
    pub lambda: f64,
    pub quarter_drift: f64,
}

impl From<&RunMetrics> for LoadRow {
    fn from(m: &RunMetrics) -> Self {
        Self {
            n_rcst: m.n_rcst,
            g: m.g_mean,
            normalized_throughput: m.mac_throughput,
            lambda: m.lambda,
            quarter_drift: m.quarter_drift(),
        }
    }
}

/// Relative error of every model at one sweep point; empty cells are N/A.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaRow {
    pub n_rcst: u32,
    pub newrenosat_noto: Option<f64>,
    pub newrenosat_full: Option<f64>,
    pub blr_noto: Option<f64>,
    pub blr_full: Option<f64>,
    pub pftk: Option<f64>,
}

impl EtaRow {
    pub fn from_comparison(n_rcst: u32, rows: &[ComparisonRow]) -> Self {
        let get = |k: ModelKind| rows.iter().find(|r| r.model == k).and_then(|r| r.eta);
        Self {
            n_rcst,
            newrenosat_noto: get(ModelKind::NewrenosatNoto),
            newrenosat_full: get(ModelKind::NewrenosatFull),
            blr_noto: get(ModelKind::BlrNoto),
            blr_full: get(ModelKind::BlrFull),
            pftk: get(ModelKind::Pftk),
        }
    }
}

/// Operating load the closed loop settles at: the largest time-averaged
/// load over the sweep.
pub fn operating_load(rows: &[LoadRow]) -> Option<f64> {
    rows.iter().map(|r| r.g).reduce(f64::max)
}

/// One point of the open-loop MAC curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacCurveRow {
    pub n_rcst: u32,
    pub tx_prob: f64,
    pub g: f64,
    pub throughput: f64,
    pub blr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LoadGrid {
    /// Fixed population, varying per-block transmission probability.
    TxProb(Vec<f64>),
    /// Every terminal transmits in every block; the population varies.
    Saturated(Vec<u32>),
}

/// Open-loop throughput curve over `grid`, `blocks` RA blocks per point.
pub fn mac_curve(
    cfg: &ScenarioConfig,
    grid: &LoadGrid,
    blocks: u64,
    parallel: bool,
) -> Result<Vec<MacCurveRow>, MacError> {
    let points: Vec<(u32, f64)> = match grid {
        LoadGrid::TxProb(ps) => ps.iter().map(|&t| (cfg.n_rcst, t)).collect(),
        LoadGrid::Saturated(ns) => ns.iter().map(|&n| (n, 1.0)).collect(),
    };
    let one = |&(n, t): &(u32, f64)| {
        let mut c = cfg.clone();
        c.n_rcst = n;
        c.seed = mix_seed(cfg.seed, u64::from(n) ^ t.to_bits());
        run_open_loop(&c, t, blocks).map(|st| MacCurveRow {
            n_rcst: n,
            tx_prob: t,
            g: st.g_mean,
            throughput: st.throughput_mean,
            blr: st.blr,
        })
    };
    if parallel {
        points.par_iter().map(one).collect()
    } else {
        points.iter().map(one).collect()
    }
}

/// Load of the throughput maximum.
pub fn g_star(rows: &[MacCurveRow]) -> Option<f64> {
    rows.iter()
        .max_by(|a, b| a.throughput.total_cmp(&b.throughput))
        .map(|r| r.g)
}

pub fn write_csv<W: io::Write, R: Serialize>(w: W, rows: &[R]) -> Result<(), ReportError> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_csv<R: io::Read, T: for<'de> Deserialize<'de>>(r: R) -> Result<Vec<T>, ReportError> {
    csv::Reader::from_reader(r)
        .into_deserialize()
        .map(|row| row.map_err(ReportError::from))
        .collect()
}

/// Comparison rows in CSV form: `wf,mss,n_rcst,model,t_sim_kbps,t_est_kbps,eta,error`.
pub fn write_comparison_csv<W: io::Write>(w: W, rows: &[ComparisonRow]) -> Result<(), ReportError> {
    write_csv(w, rows)
}

pub fn write_trace_csv<W: io::Write>(w: W, rows: &[TraceRow]) -> Result<(), ReportError> {
    write_csv(w, rows)
}
