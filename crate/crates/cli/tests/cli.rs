use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use parot::diffengine::session_rng;
use parot::flows::FlowArch;
use parot::pushforward::{Mode, PushforwardModel};

fn parot(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_parot"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("run parot")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn coords(path: &Path) -> Vec<Vec<f64>> {
    let r = rows(path);
    let cols: Vec<usize> = r[0]
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with('x'))
        .map(|(i, _)| i)
        .collect();
    r[1..].iter().map(|row| cols.iter().map(|&c| row[c].parse().unwrap()).collect()).collect()
}

const SMOKE: &str = r#"{
  "dataset": {"dataset": "mog", "true_map": "linear", "paired_prop": 0.2, "seed": 1, "n_train": 200, "n_test": 50},
  "train": {"epochs": 10},
  "eval": {"metrics": ["map_mse", "nll_rel_mse"]}
}"#;

#[test]
fn generate_writes_benchmark_sizes_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for (dataset, train, test) in [("mog", 1000, 100), ("moons", 2000, 500)] {
        let out = format!("{dataset}.csv");
        let o = parot(d, &["generate", "--dataset", dataset, "--true-map", "linear", "--paired-prop", "0.2", "--seed", "7", "--out", &out]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let r = rows(&d.join(&out));
        assert_eq!(r[0][0], "role");
        let count = |role: &str, split: &str| r.iter().filter(|x| x[0] == role && x[1] == split).count();
        assert_eq!(count("source", "train"), train);
        assert_eq!(count("source", "test"), test);
        assert_eq!(count("target", "test"), test);
        assert_eq!(count("pair_source", "train"), train / 5);

        let again = parot(d, &["generate", "--dataset", dataset, "--true-map", "linear", "--paired-prop", "0.2", "--seed", "7", "--out", "again.csv"]);
        assert_eq!(code(&again), 0);
        assert_eq!(std::fs::read(d.join(&out)).unwrap(), std::fs::read(d.join("again.csv")).unwrap());
    }
    let o = parot(d, &["generate", "--dataset", "mog", "--true-map", "linear", "--paired-prop", "2", "--out", "x.csv"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn train_smoke_is_fast_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("cfg.json"), SMOKE).unwrap();
    let start = Instant::now();
    let o = parot(d, &["train", "--config", "cfg.json", "--out", "a"]);
    assert!(start.elapsed().as_secs_f64() < 30.0);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["checkpoint.json", "result.json", "loss_trace.csv"] {
        assert!(d.join("a").join(f).exists(), "missing {f}");
    }
    let result: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("a/result.json")).unwrap()).unwrap();
    assert_eq!(result["status"], "ok");
    assert_eq!(result["config"]["format_version"], 1);
    assert_eq!(result["config"]["train"]["epochs"], 10);

    let o = parot(d, &["train", "--config", "cfg.json", "--out", "b"]);
    assert_eq!(code(&o), 0);
    assert_eq!(
        std::fs::read(d.join("a/checkpoint.json")).unwrap(),
        std::fs::read(d.join("b/checkpoint.json")).unwrap()
    );

    let o = parot(d, &["train", "--config", "cfg.json", "--out", "c", "--seed", "9"]);
    assert_eq!(code(&o), 0);
    let c: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("c/result.json")).unwrap()).unwrap();
    assert_eq!(c["seed"], 9);
    assert_eq!(c["config"]["dataset"]["seed"], 9);
}

#[test]
fn config_errors_exit_one_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let corrupted = SMOKE.replace("\"epochs\"", "\"epocs\"");
    std::fs::write(d.join("bad.json"), corrupted).unwrap();
    let o = parot(d, &["train", "--config", "bad.json", "--out", "x"]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3") && err.contains("epocs"), "{err}");

    std::fs::write(d.join("trunc.json"), &SMOKE[..40]).unwrap();
    assert_eq!(code(&parot(d, &["train", "--config", "trunc.json", "--out", "x"])), 1);
    assert_eq!(code(&parot(d, &["train", "--config", "missing.json", "--out", "x"])), 1);
    assert_eq!(code(&parot(d, &["train"])), 1);
    assert_eq!(code(&parot(d, &["frobnicate"])), 1);
    assert_eq!(code(&parot(d, &["--help"])), 0);
}

#[test]
fn diverging_training_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("cfg.json"), SMOKE.replace("\"epochs\": 10", "\"epochs\": 5, \"lr\": 1e12")).unwrap();
    let o = parot(d, &["train", "--config", "cfg.json", "--out", "run"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let result: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("run/result.json")).unwrap()).unwrap();
    assert_eq!(result["status"], "failed");
}

fn write_identity_checkpoint(path: &Path) {
    let arch = FlowArch::rqs(2);
    let model = PushforwardModel::new(Mode::Triangle, &arch, &arch, &mut session_rng(0)).unwrap();
    std::fs::write(path, model.to_checkpoint_json().unwrap()).unwrap();
}

#[test]
fn transform_identity_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_identity_checkpoint(&d.join("id.json"));
    std::fs::write(d.join("pts.csv"), "name,x0,x1\na,0.5,-1.25\nb,3,2\nc,-0.75,0.1\n").unwrap();
    let o = parot(d, &["transform", "--checkpoint", "id.json", "--in", "pts.csv", "--out", "out.csv"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(coords(&d.join("out.csv")), coords(&d.join("pts.csv")));
    assert_eq!(rows(&d.join("out.csv"))[1][0], "a");

    std::fs::write(d.join("cfg.json"), SMOKE).unwrap();
    assert_eq!(code(&parot(d, &["train", "--config", "cfg.json", "--out", "run"])), 0);
    assert_eq!(code(&parot(d, &["generate", "--config", "cfg.json", "--out", "data.csv"])), 0);
    let fwd = parot(d, &["transform", "--checkpoint", "run/checkpoint.json", "--in", "data.csv", "--out", "fwd.csv"]);
    assert_eq!(code(&fwd), 0);
    let inv = parot(d, &["transform", "--checkpoint", "run/checkpoint.json", "--in", "fwd.csv", "--inverse", "--out", "back.csv"]);
    assert_eq!(code(&inv), 0);
    let (a, b) = (coords(&d.join("data.csv")), coords(&d.join("back.csv")));
    assert_eq!(a.len(), b.len());
    let worst = a
        .iter()
        .zip(&b)
        .flat_map(|(p, q)| p.iter().zip(q).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    assert!(worst < 1e-5, "round trip error {worst}");
    assert_ne!(coords(&d.join("fwd.csv")), a);
}

#[test]
fn latent_checkpoints_compose_autoencoders() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = SMOKE
        .replace("\"n_test\": 50", "\"n_test\": 50, \"embed_dim\": 6")
        .replace("\"train\"", "\"model\": {\"d_latent\": 2}, \"train\"")
        .replace("[\"map_mse\", \"nll_rel_mse\"]", "[\"map_mse\"]");
    std::fs::write(d.join("cfg.json"), cfg).unwrap();
    let o = parot(d, &["train", "--config", "cfg.json", "--out", "run"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(code(&parot(d, &["generate", "--config", "cfg.json", "--out", "data.csv"])), 0);
    let o = parot(d, &["transform", "--checkpoint", "run/checkpoint.json", "--in", "data.csv", "--out", "fwd.csv"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(coords(&d.join("fwd.csv")).iter().all(|p| p.len() == 6));
    let o = parot(d, &["sample", "--checkpoint", "run/checkpoint.json", "--domain", "target", "--n", "7", "--out", "s.csv"]);
    assert_eq!(code(&o), 0);
    let s = coords(&d.join("s.csv"));
    assert_eq!((s.len(), s[0].len()), (7, 6));
}

#[test]
fn sample_is_seeded_and_loglik_flags_outliers() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("cfg.json"), SMOKE).unwrap();
    assert_eq!(code(&parot(d, &["train", "--config", "cfg.json", "--out", "run"])), 0);
    let sample = |out: &str, seed: &str| {
        let o = parot(d, &["sample", "--checkpoint", "run/checkpoint.json", "--domain", "source", "--n", "1000", "--seed", seed, "--out", out]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    };
    sample("s1.csv", "4");
    sample("s2.csv", "4");
    sample("s3.csv", "5");
    assert_eq!(std::fs::read(d.join("s1.csv")).unwrap(), std::fs::read(d.join("s2.csv")).unwrap());
    assert_ne!(std::fs::read(d.join("s1.csv")).unwrap(), std::fs::read(d.join("s3.csv")).unwrap());
    assert_eq!(coords(&d.join("s1.csv")).len(), 1000);

    let o = parot(d, &["loglik", "--checkpoint", "run/checkpoint.json", "--domain", "source", "--in", "s1.csv", "--out", "ll.csv"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = rows(&d.join("ll.csv"));
    assert_eq!(r[0], vec!["x0", "x1", "loglik", "nll", "outlier"]);
    let flagged: Vec<f64> = r[1..].iter().filter(|x| x[4] == "1").map(|x| x[3].parse().unwrap()).collect();
    let kept: Vec<f64> = r[1..].iter().filter(|x| x[4] == "0").map(|x| x[3].parse().unwrap()).collect();
    assert_eq!(flagged.len(), 10);
    let min_flagged = flagged.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(kept.iter().all(|&v| v < min_flagged));
    for x in &r[1..] {
        let (ll, nll): (f64, f64) = (x[2].parse().unwrap(), x[3].parse().unwrap());
        assert_eq!(ll, -nll);
    }
}

#[test]
fn benchmark_rejects_bad_arguments() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&parot(dir.path(), &["benchmark", "--seeds", "0"])), 1);
    assert_eq!(code(&parot(dir.path(), &["benchmark", "--suite", "circles"])), 1);
}
