//! End-to-end pipeline through the binary: channels -> dataset -> train ->
//! predict -> reports, plus the CER sweep and exit-code conventions.

use std::path::Path;
use std::process::Command;

fn bmdr() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bmdr"))
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("exp.toml");
    std::fs::write(
        &path,
        r#"
seed = 11

[system]
n_r = 8

[[system.users]]
n_t = 1
qam = 4

[[system.users]]
n_t = 1
qam = 4

[channels]
count = 50
pool_factor = 40
bins = 25

[dataset]
n_p = 2
n_samp = 50
detector = "kbest:K=4"

[train]
batch_size = 32
max_epochs = 2
patience = 5
split = [0.6, 0.2, 0.2]

[cer]
detectors = ["lmmse"]
rho_grid_db = [-10.0, 14.0]
n_codewords = 4
bmdr_n_samp = 20

[snr_table]
grid_lo_db = -10.0
grid_hi_db = 20.0
grid_step_db = 2.0
n_samp = 2000
"#,
    )
    .unwrap();
    path
}

#[test]
fn full_pipeline_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let cfg_arg = cfg.to_str().unwrap();

    // gen-channels, twice: seed replay must give identical bytes.
    let ch1 = dir.path().join("chan1.bin");
    let ch2 = dir.path().join("chan2.bin");
    for out in [&ch1, &ch2] {
        let st = bmdr()
            .args(["gen-channels", "--config", cfg_arg, "--out", out.to_str().unwrap()])
            .status()
            .unwrap();
        assert!(st.success());
    }
    assert_eq!(std::fs::read(&ch1).unwrap(), std::fs::read(&ch2).unwrap());

    // snr-table
    let tables = dir.path().join("tables");
    let st = bmdr()
        .args(["snr-table", "--config", cfg_arg, "--out-dir", tables.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(st.success());
    assert!(tables.join("snr_bmdr_m4.sbmt").exists());

    // gen-dataset
    let ds = dir.path().join("data.bin");
    let st = bmdr()
        .args([
            "gen-dataset",
            "--config",
            cfg_arg,
            "--channels",
            ch1.to_str().unwrap(),
            "--out",
            ds.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(st.success());

    // train
    let model = dir.path().join("model.bin");
    let hist = dir.path().join("history.csv");
    let st = bmdr()
        .args([
            "train",
            "--config",
            cfg_arg,
            "--dataset",
            ds.to_str().unwrap(),
            "--out",
            model.to_str().unwrap(),
            "--history",
            hist.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(st.success());
    let hist_text = std::fs::read_to_string(&hist).unwrap();
    assert!(hist_text.starts_with("epoch,train_loss,val_loss"));
    assert_eq!(hist_text.lines().count(), 1 + 2); // header + 2 epochs

    // predict
    let preds = dir.path().join("preds.csv");
    let st = bmdr()
        .args([
            "predict",
            "--config",
            cfg_arg,
            "--model",
            model.to_str().unwrap(),
            "--dataset",
            ds.to_str().unwrap(),
            "--out",
            preds.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(st.success());
    let pred_text = std::fs::read_to_string(&preds).unwrap();
    assert!(pred_text.starts_with("# config-hash: "));
    assert_eq!(pred_text.lines().count(), 2 + 100); // comment + header + 50*2 records

    // percentiles (labels can be zero at these powers, use absolute mode)
    let pct = dir.path().join("pct.csv");
    let st = bmdr()
        .args([
            "percentiles",
            "--config",
            cfg_arg,
            "--input",
            preds.to_str().unwrap(),
            "--out",
            pct.to_str().unwrap(),
            "--absolute",
        ])
        .status()
        .unwrap();
    assert!(st.success());
    let pct_text = std::fs::read_to_string(&pct).unwrap();
    let mut last = -1.0f64;
    for line in pct_text.lines().skip(2) {
        let v: f64 = line.split(',').next().unwrap().parse().unwrap();
        assert!(v >= last, "percentile errors must be sorted");
        last = v;
    }

    // seq-errors
    let prefix = dir.path().join("seq");
    let st = bmdr()
        .args([
            "seq-errors",
            "--config",
            cfg_arg,
            "--input",
            preds.to_str().unwrap(),
            "--n-seq",
            "1,5",
            "--n-draws",
            "200",
            "--out-prefix",
            prefix.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(st.success());
    assert!(dir.path().join("seq_n1.csv").exists());
    assert!(dir.path().join("seq_n5.csv").exists());

    // cer with the built-in code
    let cer_dir = dir.path().join("cer");
    let st = bmdr()
        .args([
            "cer",
            "--config",
            cfg_arg,
            "--channels",
            ch1.to_str().unwrap(),
            "--out-dir",
            cer_dir.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(st.success());
    let cer_csv = cer_dir.join("cer_lmmse_user0.csv");
    let cer_text = std::fs::read_to_string(&cer_csv).unwrap();
    let lines: Vec<&str> = cer_text.lines().collect();
    assert_eq!(lines[1], "rho_db,cer,ci_low,ci_high,bmdr_mean");
    assert_eq!(lines.len(), 2 + 2); // two grid points
    // BMDR column non-decreasing in rho.
    let bmdr_at = |line: &str| -> f64 { line.split(',').nth(4).unwrap().parse().unwrap() };
    assert!(bmdr_at(lines[3]) >= bmdr_at(lines[2]));

    // oracles (fast subset)
    let st = bmdr()
        .args(["oracles", "--config", cfg_arg, "--filter", "gf2"])
        .status()
        .unwrap();
    assert!(st.success());
}

#[test]
fn exit_codes() {
    // Usage error: unknown subcommand -> 1.
    let st = bmdr().arg("frobnicate").status().unwrap();
    assert_eq!(st.code(), Some(1));

    // Usage error: malformed config -> 1.
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "this is not toml [").unwrap();
    let st = bmdr()
        .args([
            "gen-channels",
            "--config",
            bad.to_str().unwrap(),
            "--out",
            dir.path().join("x.bin").to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(1));

    // Data error: missing dataset file -> 2.
    let st = bmdr()
        .args([
            "train",
            "--dataset",
            dir.path().join("missing.bin").to_str().unwrap(),
            "--out",
            dir.path().join("m.bin").to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(2));
}
