use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datagen::{build_benchmark, TripleDataset};
use crate::diffengine::{format_f64, stream_rng, EngineError, ParamStore, SessionRng, Tensor};
use crate::evalharness::classifier::{ClassifierSpec, MlpClassifier};
use crate::evalharness::config::{ExperimentConfig, Metric, Orientation};
use crate::evalharness::metrics::{likelihood_rel_mse, map_mse_of, true_target_density_mog_linear};
use crate::evalharness::train::{train, RunStatus, TrainData, Trainee};
use crate::latent::{pca_init, LatentModel, Side};
use crate::pushforward::{paired_orientation_reversed, PushforwardModel};
use crate::{Error, Result};

const STREAM_MODEL_INIT: u64 = 100;
const STREAM_TRAIN: u64 = 101;
const STREAM_CLASSIFIER: u64 = 102;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub map_mse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nll_rel_mse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub da_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub metrics: Metrics,
    pub loss_trace: Vec<f64>,
    pub seed: u64,
    pub seconds: f64,
    pub status: RunStatus,
    /// Reconstruction losses of the two autoencoders, for latent runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recon: Option<[f64; 2]>,
}

impl Metrics {
    pub fn all_finite(&self) -> bool {
        [self.map_mse, self.nll_rel_mse, self.da_accuracy]
            .iter()
            .flatten()
            .all(|v| v.is_finite())
    }
}

impl ExperimentResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// A trained model, in ambient or latent form.
#[derive(Clone, Debug)]
pub enum TrainedMap {
    Ambient(PushforwardModel),
    Latent(LatentModel),
}

impl TrainedMap {
    pub fn map_forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            TrainedMap::Ambient(m) => m.map_forward(x),
            TrainedMap::Latent(l) => l.map_forward(x),
        }
    }

    pub fn model(&self) -> &PushforwardModel {
        match self {
            TrainedMap::Ambient(m) => m,
            TrainedMap::Latent(l) => &l.model,
        }
    }
}

pub struct ExperimentOutcome {
    pub result: ExperimentResult,
    pub trained: TrainedMap,
    pub dataset: TripleDataset,
}

/// Trains a classifier on labeled source points (optionally pushed through
/// `map`) and scores it on the labeled target test set.
pub fn domain_adapt_eval(
    ds: &TripleDataset,
    map: Option<&dyn Fn(&Tensor) -> Result<Tensor>>,
    spec: &ClassifierSpec,
    rng: &mut SessionRng,
) -> Result<f64> {
    let labels = ds
        .source_train
        .labels
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("source training labels are required".into()))?;
    let test_labels = ds
        .target_test
        .labels
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("target test labels are required".into()))?;
    let x = match map {
        Some(f) => f(&ds.source_train.x)?,
        None => ds.source_train.x.clone(),
    };
    let classes = labels.iter().chain(test_labels).max().map_or(0, |m| m + 1);
    let clf = MlpClassifier::fit(&x, labels, classes, spec, rng)?;
    clf.accuracy(&ds.target_test.x, test_labels)
}

fn resolve_orientation(cfg: &ExperimentConfig, paired: Option<(&Tensor, &Tensor)>) -> Result<bool> {
    Ok(match cfg.model.orientation {
        Orientation::Preserve => false,
        Orientation::Reverse => true,
        Orientation::Auto => match paired {
            Some((s, t)) => cfg.arch_b().reflect || paired_orientation_reversed(s, t)?.unwrap_or(false),
            None => cfg.arch_b().reflect,
        },
    })
}

fn build_model(cfg: &ExperimentConfig, ds: &TripleDataset) -> Result<TrainedMap> {
    let mut rng = stream_rng(cfg.train.seed, STREAM_MODEL_INIT);
    let has_pairs = !ds.paired_idx.is_empty();
    let mut arch_b = cfg.arch_b();
    match cfg.model.d_latent {
        None => {
            let pairs = has_pairs.then_some((&ds.paired_source, &ds.paired_target));
            arch_b.reflect = resolve_orientation(cfg, pairs)?;
            let mut model = PushforwardModel::new(cfg.model.mode, &cfg.arch_a(), &arch_b, &mut rng)?;
            model.standardize(&ds.source_train.x, &ds.target_train.x)?;
            Ok(TrainedMap::Ambient(model))
        }
        Some(dl) => {
            let trainable = cfg.model.autoencoder.as_ref().is_some_and(|a| a.trainable);
            let mut store = ParamStore::new();
            let ae_s = pca_init(&ds.source_train.x, dl, Side::Source, trainable, &mut store)?;
            let ae_t = pca_init(&ds.target_train.x, dl, Side::Target, trainable, &mut store)?;
            let zs = ae_s.encode(&store, &ds.source_train.x)?;
            let zt = ae_t.encode(&store, &ds.target_train.x)?;
            let latent_pairs = if has_pairs {
                Some((ae_s.encode(&store, &ds.paired_source)?, ae_t.encode(&store, &ds.paired_target)?))
            } else {
                None
            };
            arch_b.reflect = resolve_orientation(cfg, latent_pairs.as_ref().map(|(s, t)| (s, t)))?;
            let mut model = PushforwardModel::new(cfg.model.mode, &cfg.arch_a(), &arch_b, &mut rng)?;
            for (path, p) in store.iter() {
                model.params_mut().insert(path.clone(), p.value.clone())?;
            }
            model.standardize(&zs, &zt)?;
            Ok(TrainedMap::Latent(LatentModel::new(model, ae_s, ae_t)?))
        }
    }
}

fn evaluate(cfg: &ExperimentConfig, ds: &TripleDataset, trained: &TrainedMap) -> Result<(Metrics, Option<[f64; 2]>)> {
    let mut metrics = Metrics::default();
    let map = |x: &Tensor| trained.map_forward(x);
    metrics.map_mse = Some(map_mse_of(map, &ds.source_test.x, &ds.target_test.x)?);
    if cfg.eval.metrics.contains(&Metric::NllRelMse) {
        let y = &ds.target_test.x;
        metrics.nll_rel_mse = Some(likelihood_rel_mse(trained.model(), y, |p| {
            true_target_density_mog_linear([p[0], p[1]])
        })?);
    }
    if cfg.eval.metrics.contains(&Metric::DaAccuracy) {
        let mut crng = stream_rng(cfg.train.seed, STREAM_CLASSIFIER);
        metrics.da_accuracy = Some(domain_adapt_eval(ds, Some(&map), &ClassifierSpec::default(), &mut crng)?);
    }
    let recon = match trained {
        TrainedMap::Latent(l) => {
            let store = l.model.params();
            Some([
                l.ae_s.recon_loss(store, &ds.source_train.x)?,
                l.ae_t.recon_loss(store, &ds.target_train.x)?,
            ])
        }
        TrainedMap::Ambient(_) => None,
    };
    Ok((metrics, recon))
}

/// Builds the dataset and model, trains, and evaluates the requested metrics.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let ds = build_benchmark(&cfg.dataset)?;
    let mut trained = build_model(cfg, &ds)?;
    let paired = (!ds.paired_idx.is_empty()).then_some((&ds.paired_source, &ds.paired_target));
    let data = TrainData {
        source: &ds.source_train.x,
        target: &ds.target_train.x,
        paired,
    };
    let mut rng = stream_rng(cfg.train.seed, STREAM_TRAIN);
    let report = match &mut trained {
        TrainedMap::Ambient(model) => train(
            Trainee {
                model,
                autoencoders: None,
            },
            data,
            &cfg.loss,
            &cfg.train,
            &mut rng,
        )?,
        TrainedMap::Latent(l) => train(
            Trainee {
                model: &mut l.model,
                autoencoders: Some((&l.ae_s, &l.ae_t)),
            },
            data,
            &cfg.loss,
            &cfg.train,
            &mut rng,
        )?,
    };

    let mut metrics = Metrics::default();
    let mut recon = None;
    let mut status = report.status;
    if status == RunStatus::Ok {
        match evaluate(cfg, &ds, &trained) {
            Ok((m, r)) if m.all_finite() => {
                metrics = m;
                recon = r;
            }
            Ok(_) | Err(Error::Engine(EngineError::NonFinite(_))) => status = RunStatus::Failed,
            Err(e) => return Err(e),
        }
    }
    let result = ExperimentResult {
        config: cfg.clone(),
        metrics,
        loss_trace: report.loss_trace,
        seed: cfg.train.seed,
        seconds: start.elapsed().as_secs_f64(),
        status,
        recon,
    };
    Ok(ExperimentOutcome {
        result,
        trained,
        dataset: ds,
    })
}

/// Writes `result.json`, `checkpoint.json` and `loss_trace.csv` into `dir`.
pub fn write_outputs(outcome: &ExperimentOutcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("result.json"), outcome.result.to_json()?)?;
    std::fs::write(dir.join("checkpoint.json"), outcome.trained.model().to_checkpoint_json()?)?;
    let mut csv = String::from("epoch,loss\n");
    for (i, v) in outcome.result.loss_trace.iter().enumerate() {
        csv.push_str(&format!("{},{}\n", i + 1, format_f64(*v)));
    }
    std::fs::write(dir.join("loss_trace.csv"), csv)?;
    Ok(())
}
