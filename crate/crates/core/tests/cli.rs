use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rrsim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rrsim"))
        .current_dir(dir)
        .env_remove("RRSIM_PROFILE")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn hide(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["hide", "--payload", "0xECE3038B", "--key-out", "key.json", "--state-out", "chip.bin"];
    args.extend_from_slice(extra);
    rrsim(dir, &args)
}

#[test]
fn hide_then_retrieve_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let h = hide(dir.path(), &["--n-stress", "15000", "--replica-size", "256"]);
    assert!(h.status.success(), "{}", stderr(&h));
    let out = stdout(&h);
    assert!(out.contains("simulated encode time: 4800 s"), "{out}");
    assert!(out.contains("endurance cost: 3%"), "{out}");
    assert!(stderr(&h).contains("wall time:"));

    let r = rrsim(dir.path(), &["retrieve", "--key", "key.json", "--state", "chip.bin"]);
    assert_eq!(r.status.code(), Some(0), "{}", stderr(&r));
    assert!(stdout(&r).contains("payload: 0xECE3038B"));
    assert!(stdout(&r).contains("margin"));

    let t = rrsim(dir.path(), &["retrieve", "--key", "key.json", "--state", "chip.bin", "--method", "threshold:0"]);
    assert!(stdout(&t).contains("payload: 0xFFFFFFFF"));
}

#[test]
fn hiding_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        assert!(hide(d.path(), &["--replicas", "4", "--replica-size", "64", "--seed", "9"]).status.success());
    }
    for f in ["key.json", "chip.bin"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn tampered_rotations_are_flagged() {
    let dir = tempfile::tempdir().unwrap();
    assert!(hide(dir.path(), &["--replicas", "8", "--replica-size", "32", "--seed", "3"]).status.success());
    let path = dir.path().join("key.json");
    let mut key: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    let tampered: Vec<u64> = [5, 17, 30, 2, 11, 24, 8, 19].to_vec();
    assert_ne!(key["rotations"], serde_json::json!(tampered));
    key["rotations"] = serde_json::json!(tampered);
    fs::write(&path, key.to_string()).unwrap();
    let r = rrsim(dir.path(), &["retrieve", "--key", "key.json", "--state", "chip.bin"]);
    assert_eq!(r.status.code(), Some(4), "{}", stderr(&r));
    assert!(stderr(&r).contains("ambiguous"));
}

#[test]
fn error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let e = rrsim(dir.path(), &["hide", "--payload", "", "--key-out", "k.json", "--state-out", "s.bin"]);
    assert_eq!(e.status.code(), Some(2));
    assert!(!dir.path().join("k.json").exists());

    assert!(hide(dir.path(), &[]).status.success());
    fs::write(dir.path().join("bad.json"), "{ not json").unwrap();
    let f = rrsim(dir.path(), &["retrieve", "--key", "bad.json", "--state", "chip.bin"]);
    assert_eq!(f.status.code(), Some(3));
    let m = rrsim(dir.path(), &["retrieve", "--key", "missing.json", "--state", "chip.bin"]);
    assert_eq!(m.status.code(), Some(3));

    let w = rrsim(dir.path(), &["hide", "--payload", "0xFF", "--n-stress", "2000000", "--key-out", "k.json", "--state-out", "s.bin"]);
    assert_eq!(w.status.code(), Some(5), "{}", stderr(&w));
    assert_eq!(rrsim(dir.path(), &["hide"]).status.code(), Some(2));
}

#[test]
fn sweeps_respect_the_grid_and_repeat_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["sweep", "post-hiding", "--grid", "0:20000:100000", "--n-stress", "15000,30000", "--trials", "2"];
    let mut a = args.to_vec();
    a.extend(["--out", "a.csv"]);
    let mut b = args.to_vec();
    b.extend(["--out", "b.csv"]);
    assert!(rrsim(dir.path(), &a).status.success());
    assert!(rrsim(dir.path(), &b).status.success());
    let csv_a = fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(csv_a, fs::read(dir.path().join("b.csv")).unwrap());
    assert_eq!(String::from_utf8(csv_a).unwrap().lines().count(), 1 + 2 * 2 * 6);

    let e = rrsim(dir.path(), &["sweep", "replica-size", "--grid", "64:32:0", "--out", "e.csv"]);
    assert!(e.status.success(), "{}", stderr(&e));
    let text = fs::read_to_string(dir.path().join("e.csv")).unwrap();
    assert_eq!(text, "sweep_id,N,post_stress,op,replica_size,min_distance_s,ber,errors\n");

    let at = rrsim(dir.path(), &["attack", "--mode", "wrong-key", "--replicas", "256", "--replica-size", "1", "--trials", "3", "--out", "w.csv"]);
    assert!(at.status.success(), "{}", stderr(&at));
    assert_eq!(fs::read_to_string(dir.path().join("w.csv")).unwrap().lines().count(), 4);
}

#[test]
fn characterize_and_refit() {
    let dir = tempfile::tempdir().unwrap();
    let c = rrsim(
        dir.path(),
        &["characterize", "--addresses", "2048", "--max-pairs", "1000000", "--interval", "100000", "--out", "c.csv", "--profile-out", "p.json"],
    );
    assert!(c.status.success(), "{}", stderr(&c));
    let csv = fs::read_to_string(dir.path().join("c.csv")).unwrap();
    assert_eq!(csv.lines().count(), 12);
    let f = rrsim(dir.path(), &["fit", "--records", "c.csv", "--profile-out", "q.json"]);
    assert!(f.status.success(), "{}", stderr(&f));
    assert_eq!(fs::read(dir.path().join("p.json")).unwrap(), fs::read(dir.path().join("q.json")).unwrap());

    let g = rrsim(dir.path(), &["--profile", "p.json", "hide", "--payload", "0xA5", "--key-out", "k.json", "--state-out", "s.bin"]);
    assert!(g.status.success(), "{}", stderr(&g));

    let z = rrsim(dir.path(), &["characterize", "--max-pairs", "0", "--out", "z.csv"]);
    assert!(z.status.success());
    assert_eq!(fs::read_to_string(dir.path().join("z.csv")).unwrap().lines().count(), 2);
}
