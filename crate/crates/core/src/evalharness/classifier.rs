use rand::seq::SliceRandom;

use crate::diffengine::{AdamState, ParamStore, SessionRng, Tape, Tensor};
use crate::flows::{eval_rows, Mlp};
use crate::pushforward::moments;
use crate::{Error, Result};

pub const CLASSIFIER_HIDDEN: [usize; 2] = [16, 16];

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierSpec {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        ClassifierSpec {
            hidden: CLASSIFIER_HIDDEN.to_vec(),
            lr: 1e-2,
            epochs: 200,
            batch_size: 256,
        }
    }
}

/// Tanh MLP with a softmax head, trained by cross-entropy. Inputs are
/// standardized with the training moments.
#[derive(Clone, Debug)]
pub struct MlpClassifier {
    net: Mlp,
    params: ParamStore,
    classes: usize,
    mean: Vec<f64>,
    std: Vec<f64>,
}

fn one_hot(labels: &[usize], classes: usize) -> Tensor {
    let mut t = Tensor::zeros(&[labels.len(), classes]);
    for (i, &l) in labels.iter().enumerate() {
        t.data_mut()[i * classes + l] = 1.0;
    }
    t
}

impl MlpClassifier {
    pub fn fit(x: &Tensor, labels: &[usize], classes: usize, spec: &ClassifierSpec, rng: &mut SessionRng) -> Result<Self> {
        if x.rows() != labels.len() {
            return Err(Error::DimensionMismatch(format!("{} points but {} labels", x.rows(), labels.len())));
        }
        if labels.iter().any(|&l| l >= classes) {
            return Err(Error::InvalidArgument(format!("label outside 0..{classes}")));
        }
        if let Some(c) = (0..classes).find(|c| !labels.contains(c)) {
            return Err(Error::InvalidArgument(format!("class {c} absent from training labels")));
        }
        let d = x.last_dim();
        let mut widths = vec![d];
        widths.extend(&spec.hidden);
        widths.push(classes);
        let net = Mlp::new("clf", widths);
        let mut params = ParamStore::new();
        net.init(&mut params, rng, false)?;
        let (mean, std) = moments(x)?;
        let mut clf = MlpClassifier {
            net,
            params,
            classes,
            mean,
            std,
        };
        let xs = clf.standardize(x)?;
        let mut adam = AdamState::new(spec.lr);
        let mut order: Vec<usize> = (0..x.rows()).collect();
        for _ in 0..spec.epochs {
            order.shuffle(rng);
            for chunk in order.chunks(spec.batch_size.max(1)) {
                let xb = xs.select_rows(chunk);
                let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                let mut tape = Tape::new();
                let p = clf.params.bind(&mut tape, &[])?;
                let xv = tape.constant(xb)?;
                let logits = clf.net.forward(&mut tape, &p, xv)?;
                let logp = tape.log_softmax_last(logits)?;
                let target = tape.constant(one_hot(&yb, classes))?;
                let picked = tape.mul(logp, target)?;
                let ll = tape.sum_last(picked)?;
                let mean = tape.mean(ll)?;
                let loss = tape.neg(mean)?;
                let grads = tape.backward(loss)?;
                clf.params.accumulate_grads(&p, &grads)?;
                adam.step(&mut clf.params)?;
            }
        }
        Ok(clf)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    fn standardize(&self, x: &Tensor) -> Result<Tensor> {
        let d = self.mean.len();
        if x.last_dim() != d {
            return Err(Error::DimensionMismatch(format!("classifier expects {d} features, got {}", x.last_dim())));
        }
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let j = i % d;
            *v = (*v - self.mean[j]) / self.std[j];
        }
        Ok(out)
    }

    /// Class probabilities, one row per point.
    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        let xs = self.standardize(x)?;
        let mut out = eval_rows(&self.params, &xs, |tape, p, v| {
            let logits = self.net.forward(tape, p, v)?;
            Ok(vec![tape.softmax_last(logits)?])
        })?;
        Ok(out.pop().expect("one output"))
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let proba = self.predict_proba(x)?;
        Ok((0..proba.rows())
            .map(|r| {
                let row = proba.row(r);
                (0..row.len()).fold(0, |best, c| if row[c] > row[best] { c } else { best })
            })
            .collect())
    }

    pub fn accuracy(&self, x: &Tensor, labels: &[usize]) -> Result<f64> {
        if labels.is_empty() || labels.len() != x.rows() {
            return Err(Error::InvalidArgument("accuracy needs one label per point".into()));
        }
        let pred = self.predict(x)?;
        let hits = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
        Ok(hits as f64 / labels.len() as f64)
    }
}
