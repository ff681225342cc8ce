use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ratcp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ratcp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("scenario.conf");
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL: &str =
    "waveform_id = 14\nmss_bytes = 173\nn_rcst = 20\nsim_duration_s = 60\nwarmup_s = 6\nseed = 4\n";

#[test]
fn simulate_writes_metrics_and_summary_row() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("run");
    let o = ratcp(&[
        "simulate",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--trace",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let row = fs::read_to_string(out.join("table6_row.csv")).unwrap();
    assert_eq!(
        row.lines().next().unwrap(),
        "wf,mss,n_rcst,blr,r,f,q,p,e_delta,e_rtt,thr_kbps,xi"
    );
    assert!(row.lines().nth(1).unwrap().starts_with("14,173,20,"));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(json["n_rcst"], 20);
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.starts_with("time_s,flow,event,cwnd,sst,phase"));
}

#[test]
fn seed_override_changes_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let run = |dir: &str, extra: &[&str]| {
        let out = tmp.path().join(dir);
        let mut args = vec!["simulate", "--config", &cfg, "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        assert!(ratcp(&args).status.success());
        fs::read_to_string(out.join("metrics.json")).unwrap()
    };
    let a = run("a", &[]);
    let b = run("b", &[]);
    let c = run("c", &["--seed-override", "99"]);
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn invalid_config_exits_with_two_and_names_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "waveform_id = 14\nmss_bytes = 0\n");
    let o = ratcp(&[
        "simulate",
        "--config",
        &cfg,
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("mss_bytes"));

    let cfg = write_config(tmp.path(), "waveform_id = 14\nmss = 173\n");
    let o = ratcp(&[
        "simulate",
        "--config",
        &cfg,
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("mss"));
}

#[test]
fn missing_config_file_is_a_config_error() {
    let o = ratcp(&["simulate", "--config", "/nonexistent/x.conf"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_model_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let o = ratcp(&[
        "simulate",
        "--config",
        &cfg,
        "--models",
        "dakh",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_outputs_round_trip_through_compare() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("sweep");
    let o = ratcp(&[
        "sweep",
        "--config",
        &cfg,
        "--n-list",
        "10,20",
        "--out",
        out.to_str().unwrap(),
        "--parallel",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["table6.csv", "load.csv", "eta.csv", "comparison.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let load = fs::read_to_string(out.join("load.csv")).unwrap();
    assert_eq!(
        load.lines().next().unwrap(),
        "n_rcst,g,normalized_throughput,lambda,quarter_drift"
    );
    assert_eq!(load.lines().count(), 3);

    let cmp_dir = tmp.path().join("cmp");
    let o = ratcp(&[
        "compare",
        out.join("table6.csv").to_str().unwrap(),
        "--models",
        "newrenosat_noto,pftk",
        "--out",
        cmp_dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = String::from_utf8_lossy(&o.stdout);
    assert_eq!(table.lines().count(), 5);
    let rows = fs::read_to_string(cmp_dir.join("comparison.csv")).unwrap();
    assert!(rows.starts_with("wf,mss,n_rcst,model,t_sim_kbps,t_est_kbps,eta,error"));
}

#[test]
fn compare_reads_metrics_json() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("run");
    assert!(
        ratcp(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()])
            .status
            .success()
    );
    let o = ratcp(&["compare", out.join("metrics.json").to_str().unwrap()]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("blr_full"));
}

#[test]
fn empty_n_list_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let o = ratcp(&["sweep", "--config", &cfg, "--n-list", ""]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn mac_curve_reports_the_peak() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("mac");
    let o = ratcp(&[
        "mac-curve",
        "--config",
        &cfg,
        "--n-list",
        "32,45,58",
        "--blocks",
        "2000",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("G* "));
    let csv = fs::read_to_string(out.join("mac_curve.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "n_rcst,tx_prob,g,throughput,blr"
    );

    let o = ratcp(&[
        "mac-curve",
        "--config",
        &cfg,
        "--tx-grid",
        "0.5,1.5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}
