use std::time::Instant;

use parot::datagen::{build_benchmark, DatasetKind, DatasetSpec, MapKind, TrueMap};
use parot::diffengine::{stream_rng, Tensor};
use parot::evalharness::{
    domain_adapt_eval, run_experiment, write_outputs, ClassifierSpec, ExperimentConfig, Metric, RunStatus,
};
use parot::flows::FlowArch;
use parot::Error;

fn smoke_config(seed: u64) -> ExperimentConfig {
    let mut spec = DatasetSpec::new(DatasetKind::Mog, MapKind::Linear, 0.2, seed);
    spec.n_train = Some(200);
    spec.n_test = Some(50);
    let mut cfg = ExperimentConfig::new(spec);
    cfg.train.epochs = 10;
    cfg.train.seed = seed;
    cfg.eval.metrics = vec![Metric::MapMse, Metric::NllRelMse];
    cfg
}

fn without_seconds(json: &str) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(json).unwrap();
    v.as_object_mut().unwrap().remove("seconds");
    v
}

#[test]
fn smoke_run_is_fast_and_well_formed() {
    let start = Instant::now();
    let outcome = run_experiment(&smoke_config(1)).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "smoke run took {elapsed:.1}s");

    let r = &outcome.result;
    assert_eq!(r.status, RunStatus::Ok);
    assert_eq!(r.loss_trace.len(), 10);
    assert!(r.loss_trace.iter().all(|v| v.is_finite()));
    assert!(r.metrics.map_mse.unwrap().is_finite());
    assert!(r.metrics.nll_rel_mse.unwrap() >= 0.0);
    assert!(r.metrics.da_accuracy.is_none());

    let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
    for key in ["config", "metrics", "loss_trace", "seed", "seconds", "status"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["status"], "ok");
    assert_eq!(v["seed"], 1);
    assert_eq!(v["config"]["format_version"], 1);
    assert!(v["metrics"]["map_mse"].is_number());
}

#[test]
fn same_config_and_seed_reproduce_outputs() {
    let cfg = smoke_config(2);
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(
        without_seconds(&a.result.to_json().unwrap()),
        without_seconds(&b.result.to_json().unwrap())
    );
    assert_eq!(
        a.trained.model().to_checkpoint_json().unwrap(),
        b.trained.model().to_checkpoint_json().unwrap()
    );

    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_outputs(&a, da.path()).unwrap();
    write_outputs(&b, db.path()).unwrap();
    for file in ["checkpoint.json", "loss_trace.csv"] {
        let x = std::fs::read(da.path().join(file)).unwrap();
        let y = std::fs::read(db.path().join(file)).unwrap();
        assert_eq!(x, y, "{file} differs");
    }
    let trace = std::fs::read_to_string(da.path().join("loss_trace.csv")).unwrap();
    assert!(trace.starts_with("epoch,loss\n"));
    assert_eq!(trace.lines().count(), 11);

    let mut other = cfg.clone();
    other.train.seed = 3;
    let c = run_experiment(&other).unwrap();
    assert_ne!(
        a.trained.model().to_checkpoint_json().unwrap(),
        c.trained.model().to_checkpoint_json().unwrap()
    );
}

#[test]
fn config_echo_reruns_identically() {
    let a = run_experiment(&smoke_config(5)).unwrap();
    let echoed = ExperimentConfig::from_json(&a.result.config.to_json().unwrap()).unwrap();
    assert_eq!(echoed, a.result.config);
    let b = run_experiment(&echoed).unwrap();
    assert_eq!(a.result.metrics, b.result.metrics);
    assert_eq!(a.result.loss_trace, b.result.loss_trace);
}

#[test]
fn config_parsing_fills_defaults_and_rejects_unknown_keys() {
    let minimal = r#"{"dataset": {"dataset": "moons", "true_map": "nonlinear", "paired_prop": 0.2, "seed": 3}}"#;
    let cfg = ExperimentConfig::from_json(minimal).unwrap();
    assert_eq!(cfg.train.batch_size, 256);
    assert_eq!(cfg.train.lr, 3e-4);
    assert_eq!(cfg.train.epochs, 100);
    assert_eq!(cfg.eval.metrics, vec![Metric::MapMse]);
    assert_eq!(cfg.loss.weights.nll_source_weight, 1.0);
    assert_eq!(cfg.loss.weights.ipm_weight, 1.0);
    assert_eq!(cfg.arch_a(), FlowArch::rqs(2));

    let typo = "{\n  \"dataset\": {\"dataset\": \"mog\", \"true_map\": \"linear\", \"paired_prop\": 0.2, \"seed\": 0},\n  \"train\": {\"epoch\": 3}\n}";
    match ExperimentConfig::from_json(typo) {
        Err(Error::InvalidConfig(msg)) => {
            assert!(msg.contains("line 3"), "{msg}");
            assert!(msg.contains("epoch"), "{msg}");
        }
        other => panic!("expected a config error, got {other:?}"),
    }

    let bad_prop = r#"{"dataset": {"dataset": "mog", "true_map": "linear", "paired_prop": 1.5, "seed": 0}}"#;
    assert!(matches!(ExperimentConfig::from_json(bad_prop), Err(Error::InvalidConfig(_))));

    let nll_on_moons = r#"{"dataset": {"dataset": "moons", "true_map": "nonlinear", "paired_prop": 0.2, "seed": 0},
        "eval": {"metrics": ["nll_rel_mse"]}}"#;
    assert!(matches!(ExperimentConfig::from_json(nll_on_moons), Err(Error::InvalidConfig(_))));
}

#[test]
fn divergence_is_a_failed_result() {
    let mut cfg = smoke_config(6);
    cfg.train.lr = 1e12;
    let outcome = run_experiment(&cfg).unwrap();
    assert_eq!(outcome.result.status, RunStatus::Failed);
    assert_eq!(outcome.result.metrics.map_mse, None);
    let v: serde_json::Value = serde_json::from_str(&outcome.result.to_json().unwrap()).unwrap();
    assert_eq!(v["status"], "failed");
}

#[test]
fn oracle_map_dominates_no_adaptation() {
    let f = TrueMap::Nonlinear;
    let oracle = |x: &Tensor| -> parot::Result<Tensor> {
        let data = (0..x.rows()).flat_map(|r| f.apply_point([x.row(r)[0], x.row(r)[1]])).collect();
        Ok(Tensor::new(vec![x.rows(), 2], data)?)
    };
    for seed in 0..5 {
        let ds = build_benchmark(&DatasetSpec::new(DatasetKind::Moons, MapKind::Nonlinear, 0.0, seed)).unwrap();
        let spec = ClassifierSpec::default();
        let base = domain_adapt_eval(&ds, None, &spec, &mut stream_rng(seed, 1)).unwrap();
        let best = domain_adapt_eval(&ds, Some(&oracle), &spec, &mut stream_rng(seed, 1)).unwrap();
        assert!(best >= base, "seed {seed}: oracle {best} < baseline {base}");
        assert!(best > 0.95, "seed {seed}: oracle accuracy {best}");
    }
}

#[test]
fn latent_run_reconstructs_exactly() {
    let mut cfg = smoke_config(7);
    cfg.dataset.embed_dim = Some(10);
    cfg.model.d_latent = Some(2);
    cfg.eval.metrics = vec![Metric::MapMse];
    let outcome = run_experiment(&cfg).unwrap();
    assert_eq!(outcome.result.status, RunStatus::Ok);
    let [rs, rt] = outcome.result.recon.unwrap();
    assert!(rs < 1e-6 && rt < 1e-6, "recon {rs} {rt}");
    let mapped = outcome.trained.map_forward(&outcome.dataset.source_test.x).unwrap();
    assert_eq!(mapped.shape(), &[50, 10]);
}
