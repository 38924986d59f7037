//! End-to-end checks of the `msls` binary: exit codes, file outputs, and
//! seed reproducibility.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn msls(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msls"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_small_config(dir: &Path) {
    // Two audios and short renders keep the test quick while exercising the
    // full pipeline.
    fs::write(
        dir.join("config.json"),
        r#"{
  "seed": 7,
  "library": { "scenario": "street", "n_audios": 2 },
  "harness": { "trials_per_k": 3, "k_range": [1, 2], "train_duration_s": 0.5, "test_duration_s": 0.5 }
}"#,
    )
    .unwrap();
}

#[test]
fn full_pipeline_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_small_config(dir);

    let out = msls(dir, &["gen-enclosure", "--config", "config.json", "--out", "run"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("run/enclosure.json").exists());
    assert!(dir.join("run/coherence.csv").exists());
    assert!(dir.join("run/effective_config.json").exists());

    let out = msls(
        dir,
        &[
            "train",
            "--config",
            "config.json",
            "--out",
            "run",
            "--enclosure",
            "run/enclosure.json",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("Q=32"), "expected 16x2 classes: {stdout}");

    fs::write(
        dir.join("scenario.json"),
        r#"{"sources": [{"direction_id": 2, "audio_id": 1, "duration_s": 0.5}]}"#,
    )
    .unwrap();
    let out = msls(
        dir,
        &[
            "test",
            "--config",
            "config.json",
            "--out",
            "run",
            "--dict",
            "run/dictionary.msls-dict",
            "--vspca",
            "run/vspca.json",
            "--scenario",
            "scenario.json",
            "--enclosure",
            "run/enclosure.json",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("alpha = 1.0000"), "{stdout}");
    assert!(dir.join("run/trial.json").exists());

    let out = msls(
        dir,
        &[
            "campaign",
            "--config",
            "config.json",
            "--out",
            "run",
            "--dict",
            "run/dictionary.msls-dict",
            "--vspca",
            "run/vspca.json",
            "--enclosure",
            "run/enclosure.json",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(dir.join("run/summary.csv")).unwrap();
    assert!(summary.starts_with("group,key,mean_alpha\n"));
    assert_eq!(
        fs::read_to_string(dir.join("run/campaign.csv"))
            .unwrap()
            .lines()
            .count(),
        1 + 6, // header + 3 trials x 2 sparsities
    );

    fs::write(
        dir.join("timeline.json"),
        r#"{"segments": [[[0, 0]], [[1, 0]]], "window_len_s": 0.5, "hop_s": 0.5}"#,
    )
    .unwrap();
    let out = msls(
        dir,
        &[
            "track",
            "--config",
            "config.json",
            "--out",
            "run",
            "--dict",
            "run/dictionary.msls-dict",
            "--vspca",
            "run/vspca.json",
            "--timeline",
            "timeline.json",
            "--enclosure",
            "run/enclosure.json",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        fs::read_to_string(dir.join("run/tracking.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );

    let out = msls(
        dir,
        &[
            "coherence",
            "--config",
            "config.json",
            "--out",
            "run",
            "--enclosure",
            "run/enclosure.json",
        ],
    );
    assert!(out.status.success());
    let coh = fs::read_to_string(dir.join("run/coherence.csv")).unwrap();
    // Unit diagonal on the first data row.
    let row1 = coh.lines().nth(1).unwrap();
    assert!(row1.starts_with("d0,1.000000"), "{row1}");
}

#[test]
fn same_seed_reproduces_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_small_config(dir);

    for run in ["a", "b"] {
        let out = msls(dir, &["gen-enclosure", "--config", "config.json", "--out", run]);
        assert!(out.status.success());
        let out = msls(
            dir,
            &[
                "train",
                "--config",
                "config.json",
                "--out",
                run,
                "--enclosure",
                &format!("{run}/enclosure.json"),
            ],
        );
        assert!(out.status.success());
    }
    let enc_a = fs::read(dir.join("a/enclosure.json")).unwrap();
    let enc_b = fs::read(dir.join("b/enclosure.json")).unwrap();
    assert_eq!(enc_a, enc_b);
    let dict_a = fs::read(dir.join("a/dictionary.msls-dict")).unwrap();
    let dict_b = fs::read(dir.join("b/dictionary.msls-dict")).unwrap();
    assert_eq!(dict_a, dict_b);

    // A different seed produces a different model.
    let out = msls(
        dir,
        &["gen-enclosure", "--config", "config.json", "--out", "c", "--seed", "8"],
    );
    assert!(out.status.success());
    assert_ne!(enc_a, fs::read(dir.join("c/enclosure.json")).unwrap());
}

#[test]
fn rerun_from_echoed_config_is_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_small_config(dir);
    let out = msls(dir, &["gen-enclosure", "--config", "config.json", "--out", "first"]);
    assert!(out.status.success());
    let out = msls(
        dir,
        &[
            "gen-enclosure",
            "--config",
            "first/effective_config.json",
            "--out",
            "second",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        fs::read(dir.join("first/enclosure.json")).unwrap(),
        fs::read(dir.join("second/enclosure.json")).unwrap()
    );
}

#[test]
fn bad_config_exits_2_and_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(
        dir.join("bad.json"),
        r#"{"enclosure": {"shell_radii": [-0.24, 0.168, 0.072]}}"#,
    )
    .unwrap();
    let out = msls(dir, &["gen-enclosure", "--config", "bad.json"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("shell_radii"), "{stderr}");
}

#[test]
fn unknown_config_field_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("bad.json"), r#"{"sftf": {}}"#).unwrap();
    let out = msls(dir, &["gen-enclosure", "--config", "bad.json"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("unknown field"), "{stderr}");
}

#[test]
fn malformed_scenario_exits_2_with_location() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_small_config(dir);
    assert!(msls(dir, &["gen-enclosure", "--config", "config.json", "--out", "run"])
        .status
        .success());
    assert!(msls(
        dir,
        &[
            "train",
            "--config",
            "config.json",
            "--out",
            "run",
            "--enclosure",
            "run/enclosure.json"
        ]
    )
    .status
    .success());
    fs::write(dir.join("broken.json"), "{\"sources\": [ nope ]}").unwrap();
    let out = msls(
        dir,
        &[
            "test",
            "--config",
            "config.json",
            "--out",
            "run",
            "--dict",
            "run/dictionary.msls-dict",
            "--vspca",
            "run/vspca.json",
            "--scenario",
            "broken.json",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line"), "{stderr}");
}

#[test]
fn synth_audio_writes_readable_wavs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_small_config(dir);
    let out = msls(
        dir,
        &[
            "synth-audio",
            "--config",
            "config.json",
            "--out",
            "wavs",
            "--duration",
            "0.5",
        ],
    );
    assert!(out.status.success());
    let mut count = 0;
    for entry in fs::read_dir(dir.join("wavs")).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "wav") {
            let (samples, rate) = msls_core::wav::read_wav_mono16(&path).unwrap();
            assert_eq!(rate, 16_000);
            assert_eq!(samples.len(), 8000);
            count += 1;
        }
    }
    assert_eq!(count, 2);
}
