use std::fs;
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};

fn pg(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pg"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn synth(dir: &Path, seed: &str) {
    let o = pg(&["synth", "--out", "data", "--seed", seed], dir);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

const SCENE: [&str; 4] = ["--scene", "data/scene.pgs", "--queries", "data/queries.jsonl"];

#[test]
fn staged_commands_match_one_shot_run() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    synth(dir, "7");
    let run = pg(&[&["run", "--out", "a"][..], &SCENE].concat(), dir);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    for file in [
        "viewpoints.json",
        "predictions.jsonl",
        "results.jsonl",
        "metrics.json",
        "report.json",
        "pano_0.png",
        "range_0.f32",
        "inst_0.u32",
    ] {
        assert!(dir.join("a").join(file).exists(), "missing {file}");
    }

    for cmd in ["place", "render", "ground", "aggregate", "gen-qa", "eval"] {
        let o = pg(&[&[cmd, "--out", "b"][..], &SCENE].concat(), dir);
        assert_eq!(code(&o), 0, "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(dir.join("b/qa.jsonl").exists());
    for file in [
        "viewpoints.json",
        "predictions.jsonl",
        "results.jsonl",
        "metrics.json",
        "pano_0.png",
        "range_0.f32",
        "inst_0.u32",
    ] {
        assert_eq!(
            fs::read(dir.join("a").join(file)).unwrap(),
            fs::read(dir.join("b").join(file)).unwrap(),
            "{file} differs"
        );
    }

    let again = pg(&[&["run", "--out", "c"][..], &SCENE].concat(), dir);
    assert_eq!(code(&again), 0);
    assert_eq!(
        fs::read(dir.join("a/results.jsonl")).unwrap(),
        fs::read(dir.join("c/results.jsonl")).unwrap()
    );
}

#[test]
fn validation_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    synth(dir, "1");
    assert_eq!(code(&pg(&["run", "--queries", "data/queries.jsonl"], dir)), 2);
    assert_eq!(code(&pg(&["place"], dir)), 2);

    fs::write(dir.join("bad.pgs"), b"PGSCENE v1 5 0 0\nshort").unwrap();
    assert_eq!(code(&pg(&["place", "--scene", "bad.pgs"], dir)), 2);

    fs::write(dir.join("typo.toml"), "[pano]\nwdith = 4\n").unwrap();
    assert_eq!(
        code(&pg(&[&["run", "--config", "typo.toml"][..], &SCENE].concat(), dir)),
        2
    );

    fs::write(
        dir.join("dup.jsonl"),
        "{\"query_id\":\"a\",\"text\":\"x\"}\n{\"query_id\":\"a\",\"text\":\"y\"}\n",
    )
    .unwrap();
    assert_eq!(
        code(&pg(
            &["run", "--scene", "data/scene.pgs", "--queries", "dup.jsonl"],
            dir
        )),
        2
    );

    // Aggregating before grounding has nothing to read.
    let o = pg(&["aggregate", "--out", "empty"], dir);
    assert_ne!(code(&o), 0);
}

#[test]
fn unreachable_endpoint_exits_3() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    synth(dir, "2");
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    fs::write(
        dir.join("remote.toml"),
        format!("[ground]\nmode = \"remote\"\n[remote]\nendpoint = \"http://127.0.0.1:{port}\"\nattempts = 2\nbackoff_s = 0.0\n"),
    )
    .unwrap();
    let o = pg(&[&["run", "--config", "remote.toml"][..], &SCENE].concat(), dir);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn total_miss_scores_zero_without_failing() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    synth(dir, "4");
    fs::write(dir.join("miss.toml"), "[ground.noise]\nmiss_rate = 1.0\n").unwrap();
    let o = pg(
        &[&["run", "--config", "miss.toml", "--out", "m"][..], &SCENE].concat(),
        dir,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let results = fs::read_to_string(dir.join("m/results.jsonl")).unwrap();
    assert!(!results.is_empty());
    for line in results.lines() {
        let r: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(r["box3d"].is_null() && r["best_view"].is_null(), "{line}");
    }
    let metrics: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("m/metrics.json")).unwrap()).unwrap();
    for t in metrics["acc"].as_array().unwrap() {
        assert_eq!(t["overall"].as_f64(), Some(0.0));
    }
}
