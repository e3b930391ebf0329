use std::process::Command;

fn augkit() -> Command {
    Command::new(env!("CARGO_BIN_EXE_augkit"))
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = augkit().arg("bogus").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = augkit().args(["augment", "--config", "/nonexistent.toml"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let status = augkit()
        .args(["synth", "--speakers", "3", "--train-utts", "2", "--eval-utts", "2", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    let config = dir.path().join("augkit.toml");

    // extract before augment: dependency error
    let out = augkit().args(["extract", "--config"]).arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("augmented.jsonl"));

    let out = augkit()
        .args(["augment", "--jobs", "2", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("9 speakers / 48 utterances (12 speed-perturbed, 30 converted)"));

    // a broken original makes extraction fail per utterance: data error
    std::fs::write(dir.path().join("audio/spk000-e01.wav"), b"junk").unwrap();
    let out = augkit().args(["extract", "--config"]).arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[paths]\ntrain_manifest = 3\n").unwrap();
    let out = augkit().args(["report", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn work_dir_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let status = augkit()
        .args(["synth", "--speakers", "2", "--train-utts", "1", "--eval-utts", "2", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    let work = dir.path().join("elsewhere");
    let out = augkit()
        .args(["augment", "--seed", "9", "--config"])
        .arg(dir.path().join("augkit.toml"))
        .arg("--work-dir")
        .arg(&work)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(work.join("manifests/augmented.jsonl").exists());
    assert!(!dir.path().join("work").exists());
}
