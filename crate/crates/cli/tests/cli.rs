use std::path::Path;
use std::process::Command;

fn sonolink(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_sonolink")).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

#[test]
fn tx_channel_rx_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let tx = path(dir.path(), "tx.iq");
    let rx = path(dir.path(), "rx.iq");
    let report = path(dir.path(), "report.json");
    sonolink(&["tx", "--symbols", "2", "--seed", "5", "--out", &tx]);
    sonolink(&["channel", "--in", &tx, "--out", &rx, "--profile", "ideal", "--elements", "4", "--ebn0", "20"]);
    let truth = path(dir.path(), "tx.bits");
    sonolink(&["rx", "--in", &rx, "--truth", &truth, "--out", &report]);

    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["n_elements"], 4);
    assert_eq!(json["bits_total"], 2 * 12288);
    assert_eq!(json["bit_errors"], 0);
}

#[test]
fn bad_preset_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_sonolink"))
        .args(["tx", "--config", "no-such-mode", "--out", &path(dir.path(), "x.iq")])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
}
