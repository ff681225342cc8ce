use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ratcp::config::{load_scenario, ConfigError, ScenarioConfig};
use ratcp::report::{
    self, compare, format_comparison, g_star, mac_curve, operating_load, EtaRow, LoadGrid, LoadRow,
    ModelKind, ReportError, SummaryRow,
};
use ratcp::sim::{run_with, sweep, RunMetrics, RunOptions, SimError};

#[derive(Parser)]
#[command(
    name = "ratcp",
    version,
    about = "TCP NewReno over CRDSA++: simulation and throughput models"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write metrics.json and table6_row.csv.
    Simulate(SimulateArgs),
    /// Compare model estimates with simulated throughput.
    Compare(CompareArgs),
    /// Run one scenario per population size.
    Sweep(SweepArgs),
    /// Open-loop MAC throughput curve.
    MacCurve(MacCurveArgs),
}

#[derive(Args)]
struct Common {
    /// Scenario file (key = value lines).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Replace the seed of the scenario file.
    #[arg(long)]
    seed_override: Option<u64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Also write trace.csv with per-flow congestion events.
    #[arg(long)]
    trace: bool,
    /// Models evaluated against the run.
    #[arg(long, default_value = "all")]
    models: String,
}

#[derive(Args)]
struct CompareArgs {
    /// metrics.json files or summary CSVs.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value = "all")]
    models: String,
    /// Write comparison.csv here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Initial RTO used for rows read from CSV.
    #[arg(long, default_value_t = 2.0)]
    rto: f64,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Population sizes, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    n_list: Vec<u32>,
    #[arg(long, default_value = "all")]
    models: String,
    /// Run points on all cores.
    #[arg(long)]
    parallel: bool,
}

#[derive(Args)]
struct MacCurveArgs {
    #[command(flatten)]
    common: Common,
    /// Transmission probabilities at the configured population.
    #[arg(long, value_delimiter = ',', conflicts_with = "n_list")]
    tx_grid: Option<Vec<f64>>,
    /// Saturated populations (every terminal sends in every block).
    #[arg(long, value_delimiter = ',')]
    n_list: Option<Vec<u32>>,
    /// RA blocks per point.
    #[arg(long, default_value_t = 100_000)]
    blocks: u64,
    #[arg(long)]
    parallel: bool,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Mac(#[from] ratcp::mac::MacError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Sim(SimError::Config(_)) => 2,
            CliError::Report(ReportError::UnknownModel(_)) => 2,
            _ => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn load(common: &Common) -> Result<ScenarioConfig> {
    let mut cfg = load_scenario(&common.config)?;
    if let Some(seed) = common.seed_override {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let cfg = load(&a.common)?;
    let models = ModelKind::parse_list(&a.models)?;
    let out = run_with(
        &cfg,
        RunOptions {
            trace: a.trace,
            keep_blocks: false,
        },
    )?;
    let dir = &a.common.out;
    prepare_out(dir)?;
    let m = &out.metrics;
    let path = dir.join("metrics.json");
    serde_json::to_writer_pretty(create(&path)?, m).map_err(ReportError::from)?;
    report::write_csv(create(&dir.join("table6_row.csv"))?, &[SummaryRow::from(m)])?;
    if a.trace {
        report::write_trace_csv(create(&dir.join("trace.csv"))?, &out.trace)?;
    }
    let rows = compare(m, &models);
    report::write_comparison_csv(create(&dir.join("comparison.csv"))?, &rows)?;
    println!(
        "WF {} MSS {} N {}: thr {:.3} kbps, blr {:.3e}, q {:.3e}, p {:.3e}, E[delta] {:.3}, E[RTT] {:.3} s, xi {:.2e}, G {:.3}",
        m.wf, m.mss, m.n_rcst, m.thr_kbps, m.blr, m.q, m.p, m.e_delta, m.e_rtt_s, m.xi, m.g_mean
    );
    print!("{}", format_comparison(&rows));
    Ok(())
}

fn read_inputs(path: &Path, rto: f64) -> Result<Vec<RunMetrics>> {
    let file = File::open(path).map_err(io_err(path))?;
    if path.extension().is_some_and(|e| e == "json") {
        let m: RunMetrics = serde_json::from_reader(file).map_err(ReportError::from)?;
        Ok(vec![m])
    } else {
        let rows: Vec<SummaryRow> = report::read_csv(file)?;
        Ok(rows.iter().map(|r| r.to_metrics(rto)).collect())
    }
}

fn compare_cmd(a: CompareArgs) -> Result<()> {
    let models = ModelKind::parse_list(&a.models)?;
    let mut rows = Vec::new();
    for p in &a.inputs {
        for m in read_inputs(p, a.rto)? {
            rows.extend(compare(&m, &models));
        }
    }
    print!("{}", format_comparison(&rows));
    if let Some(dir) = &a.out {
        prepare_out(dir)?;
        report::write_comparison_csv(create(&dir.join("comparison.csv"))?, &rows)?;
    }
    Ok(())
}

fn sweep_cmd(a: SweepArgs) -> Result<()> {
    if a.n_list.is_empty() {
        return Err(CliError::Usage("--n-list needs at least one value".into()));
    }
    let template = load(&a.common)?;
    let models = ModelKind::parse_list(&a.models)?;
    let dir = &a.common.out;
    prepare_out(dir)?;
    let results = sweep(&template, &a.n_list, a.parallel);

    let (mut summary, mut load_rows, mut eta_rows, mut comparisons, mut failures) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (&n, r) in a.n_list.iter().zip(results) {
        match r {
            Ok(m) => {
                let cmp = compare(&m, &models);
                eta_rows.push(EtaRow::from_comparison(n, &cmp));
                comparisons.extend(cmp);
                summary.push(SummaryRow::from(&m));
                load_rows.push(LoadRow::from(&m));
            }
            Err(e) => failures.push(format!("N={n}: {e}")),
        }
    }
    report::write_csv(create(&dir.join("table6.csv"))?, &summary)?;
    report::write_csv(create(&dir.join("load.csv"))?, &load_rows)?;
    report::write_csv(create(&dir.join("eta.csv"))?, &eta_rows)?;
    report::write_comparison_csv(create(&dir.join("comparison.csv"))?, &comparisons)?;
    for l in &load_rows {
        println!(
            "N {:>4}: G {:.3}, throughput {:.3}, lambda {:.2e}, drift {:.3}",
            l.n_rcst, l.g, l.normalized_throughput, l.lambda, l.quarter_drift
        );
    }
    if let Some(g) = operating_load(&load_rows) {
        println!("operating load {g:.3}");
    }
    if !failures.is_empty() {
        let path = dir.join("errors.txt");
        fs::write(&path, failures.join("\n") + "\n").map_err(io_err(&path))?;
        for f in &failures {
            eprintln!("run failed: {f}");
        }
        if summary.is_empty() {
            return Err(CliError::Usage("every sweep point failed".into()));
        }
    }
    Ok(())
}

fn mac_curve_cmd(a: MacCurveArgs) -> Result<()> {
    let cfg = load(&a.common)?;
    let grid = match (a.tx_grid, a.n_list) {
        (Some(t), None) if !t.is_empty() => {
            if let Some(bad) = t.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(CliError::Usage(format!(
                    "--tx-grid value {bad} outside [0, 1]"
                )));
            }
            LoadGrid::TxProb(t)
        }
        (None, Some(n)) if !n.is_empty() => LoadGrid::Saturated(n),
        (None, None) => LoadGrid::TxProb((1..=10).map(|k| f64::from(k) / 10.0).collect()),
        _ => return Err(CliError::Usage("empty load grid".into())),
    };
    let rows = mac_curve(&cfg, &grid, a.blocks, a.parallel)?;
    let dir = &a.common.out;
    prepare_out(dir)?;
    report::write_csv(create(&dir.join("mac_curve.csv"))?, &rows)?;
    for r in &rows {
        println!(
            "G {:.3}: throughput {:.4}, blr {:.3e}",
            r.g, r.throughput, r.blr
        );
    }
    if let Some(g) = g_star(&rows) {
        println!("G* {g:.3}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Command::Simulate(a) => simulate(a),
        Command::Compare(a) => compare_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::MacCurve(a) => mac_curve_cmd(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
