use std::fs;
use std::path::Path;
use std::process::Command;

use coheq_bench::config::{RunConfig, DESK_PRESET};
use coheq_bench::dataset::{generate_dataset, Dataset};
use coheq_bench::sweep::{frames_disjoint, run_sweep};
use coheq_core::modem::EqualizerId;
use coheq_core::rxdsp::score;

/// Two short spans and small frames so the whole chain runs in seconds.
fn small_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::from_json(DESK_PRESET).unwrap();
    cfg.link.n_spans = 2;
    cfg.link.steps_per_span_sim = 4;
    cfg.sweep_powers = vec![-2.0, 0.0, 2.0];
    cfg.equalizers = vec![EqualizerId::Cdc];
    cfg.train.pool_size = 2048;
    cfg.train.epoch_subset = 1024;
    cfg.train.batch = 4;
    cfg.train.epochs = 2;
    cfg.val_symbols = 4000;
    cfg.test_symbols = 4000;
    cfg.receiver.cdc_taps = 64;
    cfg.out_dir = out.to_path_buf();
    cfg
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn dataset_files_are_reproducible_and_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let a = generate_dataset(&cfg).unwrap();
    let b = generate_dataset(&cfg).unwrap();
    a.save(&tmp.path().join("a"), cfg.transmitter.symbol_rate).unwrap();
    b.save(&tmp.path().join("b"), cfg.transmitter.symbol_rate).unwrap();
    let ta = tree(&tmp.path().join("a"));
    assert!(ta.len() > 5);
    assert_eq!(ta, tree(&tmp.path().join("b")));

    let loaded = Dataset::load(&tmp.path().join("a")).unwrap();
    assert_eq!(loaded.sigma2, a.sigma2);
    assert_eq!(loaded.calibration_q_db, a.calibration_q_db);
    assert_eq!(loaded.powers.len(), a.powers.len());
    for (l, m) in loaded.powers.iter().zip(&a.powers) {
        assert_eq!(l.power_dbm, m.power_dbm);
        assert_eq!(l.cdc_test, m.cdc_test);
        assert_eq!(l.cdc_pool, m.cdc_pool);
    }
    assert_eq!(loaded.frames.test.tx_x, a.frames.test.tx_x);
    assert!(frames_disjoint(&loaded));
}

#[test]
fn linear_noiseless_dataset_has_no_bit_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(tmp.path());
    cfg.link.gamma = 0.0;
    cfg.link.ase_noise = false;
    cfg.receiver.calibration = None;
    let ds = generate_dataset(&cfg).unwrap();
    assert_eq!(ds.sigma2, 0.0);
    assert_eq!(ds.powers.len(), 3);
    for p in &ds.powers {
        let (ber, evm) = score(&p.cdc_test, &ds.frames.test).unwrap();
        assert_eq!(ber, 0.0, "BER at {} dBm", p.power_dbm);
        assert!(evm < 0.01, "EVM {evm} at {} dBm", p.power_dbm);
    }
}

#[test]
fn cdc_only_sweep_reports_one_row_per_power() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = run_sweep(&cfg, false, &|_| {}).unwrap();
    assert_eq!(out.reports.len(), cfg.sweep_powers.len());
    assert!(out.nn.is_empty());
    let csv = fs::read_to_string(tmp.path().join("qreport.csv")).unwrap();
    assert_eq!(csv, out.csv);
    assert_eq!(csv.lines().count(), 1 + cfg.sweep_powers.len());
    let powers: Vec<f64> = out.curve(EqualizerId::Cdc).iter().map(|c| c.0).collect();
    assert_eq!(powers, cfg.sweep_powers);
}

#[test]
fn small_neural_sweep_trains_and_transfers() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(tmp.path());
    cfg.equalizers = vec![EqualizerId::Cdc, EqualizerId::Cnn];
    cfg.transfer_epochs = 1;
    let out = run_sweep(&cfg, false, &|_| {}).unwrap();
    assert_eq!(out.reports.len(), 2 * cfg.sweep_powers.len());
    assert_eq!(out.nn.len(), cfg.sweep_powers.len());
    for r in &out.nn {
        let expect = if r.power_dbm == cfg.max_power() { cfg.train.epochs } else { 1 };
        assert!(r.histories.iter().all(|h| h.len() <= expect), "{} dBm", r.power_dbm);
    }
    assert!(tmp.path().join("models").read_dir().unwrap().count() >= 2 * cfg.sweep_powers.len());
    let again = run_sweep(&RunConfig { out_dir: tmp.path().join("again"), ..cfg.clone() }, false, &|_| {}).unwrap();
    assert_eq!(again.csv, out.csv);
}

fn coheq() -> Command {
    Command::new(env!("CARGO_BIN_EXE_coheq"))
}

#[test]
fn cli_without_config_fails() {
    let out = coheq().arg("generate").output().unwrap();
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
}

#[test]
fn cli_rejects_unknown_config_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v: serde_json::Value = serde_json::from_str(DESK_PRESET).unwrap();
    v["surprise"] = serde_json::json!(1);
    let path = tmp.path().join("bad.json");
    fs::write(&path, v.to_string()).unwrap();
    let out = coheq().args(["complexity", "--config"]).arg(&path).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn cli_complexity_reproduces_device_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("paper.json");
    fs::write(&path, coheq_bench::config::PAPER_PRESET).unwrap();
    let out = coheq().args(["complexity", "--config"]).arg(&path).arg("--out-dir").arg(tmp.path()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let counts: Vec<&str> = text.lines().skip(1).filter_map(|l| l.rsplit(',').next()).collect();
    assert_eq!(counts, ["5", "3", "2"], "{text}");
}
