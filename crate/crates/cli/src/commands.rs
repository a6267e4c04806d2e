use std::path::{Path, PathBuf};

use parot::datagen::{build_benchmark, export_csv, DatasetKind, DatasetSpec, MapKind};
use parot::diffengine::{format_f64, stream_rng, Tensor};
use parot::evalharness::{run_benchmark, run_experiment, write_outputs, BenchmarkOptions, ExperimentConfig, RunStatus, Suite};
use parot::latent::LatentModel;
use parot::pushforward::PushforwardModel;

use crate::points::{read_points, write_points};
use crate::{BenchmarkArgs, CliError, DatasetArg, Domain, GenerateArgs, LoglikArgs, MapArg, SampleArgs, Shared, SuiteArg, TransformArgs};

const STREAM_SAMPLE: u64 = 200;
const OUTLIER_QUANTILE: f64 = 0.99;

fn read_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    ExperimentConfig::from_json(&text).map_err(|e| match e {
        parot::Error::InvalidConfig(m) => CliError::Config(format!("{}: {m}", path.display())),
        other => other.into(),
    })
}

fn required_out(shared: &Shared) -> Result<&Path, CliError> {
    shared
        .out
        .as_deref()
        .ok_or_else(|| CliError::Usage("--out is required".into()))
}

pub fn generate(shared: &Shared, args: &GenerateArgs) -> Result<(), CliError> {
    let out = required_out(shared)?;
    let mut spec = match &shared.config {
        Some(path) => read_config(path)?.dataset,
        None => {
            let (Some(d), Some(m)) = (args.dataset, args.true_map) else {
                return Err(CliError::Usage("--dataset and --true-map are required without --config".into()));
            };
            let dataset = match d {
                DatasetArg::Mog => DatasetKind::Mog,
                DatasetArg::Moons => DatasetKind::Moons,
            };
            let map = match m {
                MapArg::Linear => MapKind::Linear,
                MapArg::Nonlinear => MapKind::Nonlinear,
            };
            DatasetSpec::new(dataset, map, 0.2, 0)
        }
    };
    if let Some(d) = args.dataset {
        spec.dataset = if d == DatasetArg::Mog { DatasetKind::Mog } else { DatasetKind::Moons };
    }
    if let Some(m) = args.true_map {
        spec.true_map = if m == MapArg::Linear { MapKind::Linear } else { MapKind::Nonlinear };
    }
    if let Some(p) = args.paired_prop {
        spec.paired_prop = p;
    }
    if let Some(k) = args.embed_dim {
        spec.embed_dim = Some(k);
    }
    if let Some(s) = shared.seed {
        spec.seed = s;
    }
    let ds = build_benchmark(&spec).map_err(|e| match e {
        parot::Error::InvalidArgument(m) => CliError::Usage(m),
        other => other.into(),
    })?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    export_csv(&ds, out)?;
    eprintln!(
        "wrote {} source, {} target and {} paired rows to {}",
        ds.source_train.x.rows() + ds.source_test.x.rows(),
        ds.target_train.x.rows() + ds.target_test.x.rows(),
        ds.paired_idx.len(),
        out.display()
    );
    Ok(())
}

pub fn train(shared: &Shared) -> Result<(), CliError> {
    let path = shared
        .config
        .as_deref()
        .ok_or_else(|| CliError::Usage("--config is required".into()))?;
    let mut cfg = read_config(path)?;
    if let Some(s) = shared.seed {
        cfg.dataset.seed = s;
        cfg.train.seed = s;
    }
    if let Some(out) = &shared.out {
        cfg.out = Some(out.display().to_string());
    }
    let out = cfg
        .out
        .clone()
        .map(PathBuf::from)
        .ok_or_else(|| CliError::Usage("--out is required when the config has no \"out\"".into()))?;
    cfg.validate()?;
    let outcome = run_experiment(&cfg)?;
    write_outputs(&outcome, &out)?;
    let r = &outcome.result;
    let metric = |name: &str, v: Option<f64>| v.map(|v| format!(" {name} {v:.6}")).unwrap_or_default();
    eprintln!(
        "{} in {:.1}s:{}{}{} -> {}",
        if r.status == RunStatus::Ok { "finished" } else { "failed" },
        r.seconds,
        metric("map_mse", r.metrics.map_mse),
        metric("nll_rel_mse", r.metrics.nll_rel_mse),
        metric("da_accuracy", r.metrics.da_accuracy),
        out.display()
    );
    match r.status {
        RunStatus::Ok => Ok(()),
        RunStatus::Failed => Err(CliError::TrainingFailed("loss became non-finite twice".into())),
    }
}

/// A loaded checkpoint, composed with its autoencoders when it has them.
enum Loaded {
    Ambient(PushforwardModel),
    Latent(LatentModel),
}

fn load_checkpoint(path: &Path) -> Result<Loaded, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let model = PushforwardModel::from_checkpoint_json(&text)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(match LatentModel::from_model(model.clone())? {
        Some(l) => Loaded::Latent(l),
        None => Loaded::Ambient(model),
    })
}

pub fn transform(shared: &Shared, args: &TransformArgs) -> Result<(), CliError> {
    let out = required_out(shared)?;
    let loaded = load_checkpoint(&args.checkpoint)?;
    let table = read_points(&args.input)?;
    let mapped = match (&loaded, args.inverse) {
        (Loaded::Ambient(m), false) => m.map_forward(&table.points)?,
        (Loaded::Ambient(m), true) => m.map_inverse(&table.points)?,
        (Loaded::Latent(l), false) => l.map_forward(&table.points)?,
        (Loaded::Latent(l), true) => l.map_inverse(&table.points)?,
    };
    write_points(out, &table.extra_headers, &table.extra, &mapped, &[])
}

pub fn sample(shared: &Shared, args: &SampleArgs) -> Result<(), CliError> {
    let out = required_out(shared)?;
    if args.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let loaded = load_checkpoint(&args.checkpoint)?;
    let mut rng = stream_rng(shared.seed.unwrap_or(0), STREAM_SAMPLE);
    let points: Tensor = match (&loaded, args.domain) {
        (Loaded::Ambient(m), Domain::Source) => m.sample_source(args.n, &mut rng)?,
        (Loaded::Ambient(m), Domain::Target) => m.sample_target(args.n, &mut rng)?,
        (Loaded::Latent(l), Domain::Source) => {
            let z = l.model.sample_source(args.n, &mut rng)?;
            l.ae_s.decode(l.model.params(), &z)?
        }
        (Loaded::Latent(l), Domain::Target) => {
            let z = l.model.sample_target(args.n, &mut rng)?;
            l.ae_t.decode(l.model.params(), &z)?
        }
    };
    write_points(out, &[], &[], &points, &[])
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Writes log-likelihood, NLL and an outlier flag (NLL above the 0.99
/// quantile of the input's NLLs). Latent checkpoints score the encoded
/// points under the latent density.
pub fn loglik(shared: &Shared, args: &LoglikArgs) -> Result<(), CliError> {
    let out = required_out(shared)?;
    let loaded = load_checkpoint(&args.checkpoint)?;
    let table = read_points(&args.input)?;
    let ll = match (&loaded, args.domain) {
        (Loaded::Ambient(m), Domain::Source) => m.loglik_source(&table.points)?,
        (Loaded::Ambient(m), Domain::Target) => m.loglik_target(&table.points)?,
        (Loaded::Latent(l), Domain::Source) => l.model.loglik_source(&l.ae_s.encode(l.model.params(), &table.points)?)?,
        (Loaded::Latent(l), Domain::Target) => l.model.loglik_target(&l.ae_t.encode(l.model.params(), &table.points)?)?,
    };
    let nll: Vec<f64> = ll.iter().map(|v| -v).collect();
    let threshold = quantile(&nll, OUTLIER_QUANTILE);
    let tail = [
        ("loglik", ll.iter().map(|&v| format_f64(v)).collect()),
        ("nll", nll.iter().map(|&v| format_f64(v)).collect()),
        (
            "outlier",
            nll.iter().map(|&v| if v > threshold { "1" } else { "0" }.to_string()).collect(),
        ),
    ];
    write_points(out, &table.extra_headers, &table.extra, &table.points, &tail)
}

pub fn benchmark(shared: &Shared, args: &BenchmarkArgs) -> Result<(), CliError> {
    if args.seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let out = shared.out.clone().unwrap_or_else(|| PathBuf::from("benchmark"));
    let opts = BenchmarkOptions {
        suite: match args.suite {
            SuiteArg::Mog => Suite::Mog,
            SuiteArg::Moons => Suite::Moons,
            SuiteArg::All => Suite::All,
        },
        seeds: args.seeds,
        first_seed: shared.seed.unwrap_or(0),
        jobs: shared.jobs.unwrap_or(0),
        search: args.search,
    };
    let report = run_benchmark(&opts)?;
    report.write(&out)?;
    print!("{}", report.summary_table());
    eprintln!("summary written to {}", out.join("summary.csv").display());
    Ok(())
}
