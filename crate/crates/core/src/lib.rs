//! TCP NewReno over a CRDSA++ random-access satellite return link.
//!
//! The crate has two halves that meet in [`report`]:
//! a block-granular packet-level simulator ([`sim`], built from [`mac`],
//! [`rle`] and [`tcp`]) and closed-form throughput models ([`model`]).

pub mod config;
pub mod mac;
pub mod model;
pub mod report;
pub mod rle;
pub mod rng;
pub mod sim;
pub mod tcp;

pub use config::{load_scenario, ConfigError, FragmentationProfile, ScenarioConfig, Waveform};
pub use mac::{decode_block, run_open_loop, Burst, MacStats, RaBlock};
pub use report::{compare, ComparisonRow, ModelKind};
pub use rle::{on_burst_lost, SegmentRef, TxQueue};
pub use rng::SeededRng;
pub use sim::{run, run_with, sweep, RunMetrics, RunOptions, SimError, Simulation};
pub use tcp::{Phase, TcpAction, TcpConfig, TcpFlowState, TcpReceiver};

/// Floating-point type the analytic models are generic over.
pub trait Scalar:
    num_traits::Float + num_traits::FromPrimitive + std::fmt::Debug + Send + Sync + 'static
{
}

impl<T> Scalar for T where
    T: num_traits::Float + num_traits::FromPrimitive + std::fmt::Debug + Send + Sync + 'static
{
}

pub type LossParams = model::LossProcessParams<f64>;
pub type TcpParams = model::TcpModelParams<f64>;
pub type Estimate = model::ThroughputEstimate<f64>;
pub type BlrOutcome = model::BlrModelOutcome<f64>;
