//! Training objective: paired loss, source/target NLL, sliced-Wasserstein
//! discrepancy and identity regularization, plus reconstruction terms for
//! latent models.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::diffengine::{standard_normal, Bindings, SessionRng, Tape, Tensor, Var};
use crate::latent::LinearAutoencoder;
use crate::pushforward::{Mode, PushforwardModel};
use crate::{Error, Result};

/// Term weights. The NLL weights default to 1; `p` is the paired-loss exponent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub paired_weight: f64,
    pub nll_source_weight: f64,
    pub nll_target_weight: f64,
    pub ipm_weight: f64,
    pub id_weight: f64,
    pub recon_source_weight: f64,
    pub recon_target_weight: f64,
    pub paired_p: u32,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            paired_weight: 10.0,
            nll_source_weight: 1.0,
            nll_target_weight: 1.0,
            ipm_weight: 1.0,
            id_weight: 1e-3,
            recon_source_weight: 1.0,
            recon_target_weight: 1.0,
            paired_p: 2,
        }
    }
}

impl LossWeights {
    /// Only the paired term active, at weight `w`.
    pub fn paired_only(w: f64) -> Self {
        LossWeights {
            paired_weight: w,
            nll_source_weight: 0.0,
            nll_target_weight: 0.0,
            ipm_weight: 0.0,
            id_weight: 0.0,
            recon_source_weight: 0.0,
            recon_target_weight: 0.0,
            paired_p: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("paired_weight", self.paired_weight),
            ("nll_source_weight", self.nll_source_weight),
            ("nll_target_weight", self.nll_target_weight),
            ("ipm_weight", self.ipm_weight),
            ("id_weight", self.id_weight),
            ("recon_source_weight", self.recon_source_weight),
            ("recon_target_weight", self.recon_target_weight),
        ];
        for (name, v) in all {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be a finite non-negative number, got {v}")));
            }
        }
        if self.paired_p == 0 {
            return Err(Error::InvalidConfig("paired_p must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwdConfig {
    pub swd_projections: usize,
    pub swd_order: u32,
    /// Points per evaluation; `None` uses the full batch.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub swd_samples: Option<usize>,
}

impl Default for SwdConfig {
    fn default() -> Self {
        SwdConfig {
            swd_projections: 50,
            swd_order: 2,
            swd_samples: None,
        }
    }
}

impl SwdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.swd_projections == 0 {
            return Err(Error::InvalidConfig("swd_projections must be at least 1".into()));
        }
        if !(self.swd_order == 1 || self.swd_order == 2) {
            return Err(Error::InvalidConfig(format!("swd_order must be 1 or 2, got {}", self.swd_order)));
        }
        if self.swd_samples.is_some_and(|n| n < 2) {
            return Err(Error::InvalidConfig("swd_samples must be at least 2".into()));
        }
        Ok(())
    }
}

fn rows(tape: &Tape, x: Var) -> Result<usize> {
    Ok(tape.shape(x)?[0])
}

fn nonempty(tape: &Tape, x: Var, what: &'static str) -> Result<()> {
    if rows(tape, x)? == 0 {
        return Err(Error::EmptyBatch(what));
    }
    Ok(())
}

/// Mean over rows of `|a_i - b_i|^p` (Euclidean norm).
pub fn mean_distance_pow(tape: &mut Tape, a: Var, b: Var, p: u32) -> Result<Var> {
    let diff = tape.sub(a, b)?;
    let sq = tape.square(diff)?;
    let r2 = tape.sum_last(sq)?;
    let per = if p == 2 { r2 } else { tape.pow(r2, p as f64 / 2.0)? };
    Ok(tape.mean(per)?)
}

pub fn paired_loss(m: &PushforwardModel, tape: &mut Tape, params: &Bindings, xs: Var, xt: Var, p: u32) -> Result<Var> {
    nonempty(tape, xs, "paired batch")?;
    let (y, _) = m.map_forward_on_tape(tape, params, xs)?;
    mean_distance_pow(tape, y, xt, p)
}

pub fn nll_source(m: &PushforwardModel, tape: &mut Tape, params: &Bindings, x: Var) -> Result<Var> {
    nonempty(tape, x, "source batch")?;
    let lp = m.loglik_source_on_tape(tape, params, x)?;
    let mean = tape.mean(lp)?;
    Ok(tape.neg(mean)?)
}

pub fn nll_target(m: &PushforwardModel, tape: &mut Tape, params: &Bindings, x: Var) -> Result<Var> {
    nonempty(tape, x, "target batch")?;
    let lp = m.loglik_target_on_tape(tape, params, x)?;
    let mean = tape.mean(lp)?;
    Ok(tape.neg(mean)?)
}

/// Mean squared displacement `|T(x) - x|^2`.
pub fn identity_reg(m: &PushforwardModel, tape: &mut Tape, params: &Bindings, x: Var) -> Result<Var> {
    nonempty(tape, x, "identity-regularization batch")?;
    let (y, _) = m.map_forward_on_tape(tape, params, x)?;
    mean_distance_pow(tape, y, x, 2)
}

/// Selects `k` distinct rows uniformly through a one-hot matrix product.
fn subsample_rows(tape: &mut Tape, x: Var, k: usize, rng: &mut SessionRng) -> Result<Var> {
    let n = rows(tape, x)?;
    let picked = index::sample(rng, n, k);
    let mut sel = Tensor::zeros(&[k, n]);
    for (r, i) in picked.iter().enumerate() {
        sel.data_mut()[r * n + i] = 1.0;
    }
    let s = tape.constant(sel)?;
    Ok(tape.matmul(s, x)?)
}

/// Unit projection directions as the columns of a `[d, count]` matrix.
pub fn random_directions(d: usize, count: usize, rng: &mut SessionRng) -> Tensor {
    let g = standard_normal(rng, count, d);
    let mut out = Tensor::zeros(&[d, count]);
    for c in 0..count {
        let row = g.row(c);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        for j in 0..d {
            out.data_mut()[j * count + c] = row[j] / norm;
        }
    }
    out
}

/// Monte-Carlo sliced Wasserstein distance. Each projection contributes
/// `(mean |sorted(θ·a) - sorted(θ·b)|^p)^(1/p)`; the result is their mean.
/// The larger batch is subsampled without replacement when sizes differ.
pub fn sliced_wasserstein(tape: &mut Tape, a: Var, b: Var, cfg: &SwdConfig, rng: &mut SessionRng) -> Result<Var> {
    cfg.validate()?;
    let (sa, sb) = (tape.shape(a)?.to_vec(), tape.shape(b)?.to_vec());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
        return Err(Error::DimensionMismatch(format!("sliced Wasserstein between {sa:?} and {sb:?}")));
    }
    let mut n = sa[0].min(sb[0]);
    if let Some(cap) = cfg.swd_samples {
        n = n.min(cap);
    }
    if n < 2 {
        return Err(Error::EmptyBatch("sliced Wasserstein needs at least two points per batch"));
    }
    let a = if sa[0] > n { subsample_rows(tape, a, n, rng)? } else { a };
    let b = if sb[0] > n { subsample_rows(tape, b, n, rng)? } else { b };
    let theta = tape.constant(random_directions(sa[1], cfg.swd_projections, rng))?;
    let pa = tape.matmul(a, theta)?;
    let pb = tape.matmul(b, theta)?;
    let pa = tape.transpose(pa)?;
    let pb = tape.transpose(pb)?;
    let (qa, _) = tape.sort_last(pa)?;
    let (qb, _) = tape.sort_last(pb)?;
    let diff = tape.sub(qa, qb)?;
    let per_proj = if cfg.swd_order == 1 {
        let ad = tape.abs(diff)?;
        let s = tape.sum_last(ad)?;
        tape.scale(s, 1.0 / n as f64)?
    } else {
        let sq = tape.square(diff)?;
        let s = tape.sum_last(sq)?;
        let ms = tape.scale(s, 1.0 / n as f64)?;
        tape.sqrt(ms)?
    };
    Ok(tape.mean(per_proj)?)
}

/// One step's worth of data, as tape variables.
#[derive(Clone, Copy, Debug)]
pub struct LossBatch {
    pub source: Var,
    pub target: Var,
    pub paired: Option<(Var, Var)>,
}

/// Scalar values of each term, for logging.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LossParts {
    pub total: f64,
    pub paired: f64,
    pub nll_source: f64,
    pub nll_target: f64,
    pub ipm: f64,
    pub id: f64,
    pub recon_source: f64,
    pub recon_target: f64,
}

struct Accum {
    total: Option<Var>,
}

impl Accum {
    fn add(&mut self, tape: &mut Tape, w: f64, term: Var) -> Result<()> {
        let scaled = if w == 1.0 { term } else { tape.scale(term, w)? };
        self.total = Some(match self.total {
            Some(acc) => tape.add(acc, scaled)?,
            None => scaled,
        });
        Ok(())
    }
}

fn value(tape: &Tape, v: Var) -> Result<f64> {
    Ok(tape.value(v)?.item()?)
}

/// Weighted objective. Terms with zero weight are skipped, except the NLL
/// pair which is always evaluated for logging. `f1(source)` is shared
/// between the source NLL and the Triangle map.
pub fn total_loss(
    m: &PushforwardModel,
    tape: &mut Tape,
    params: &Bindings,
    batch: LossBatch,
    w: &LossWeights,
    cfg: &SwdConfig,
    rng: &mut SessionRng,
) -> Result<(Var, LossParts)> {
    w.validate()?;
    nonempty(tape, batch.source, "source batch")?;
    nonempty(tape, batch.target, "target batch")?;
    let mut parts = LossParts::default();
    let mut acc = Accum { total: None };

    let need_map = w.ipm_weight > 0.0 || w.id_weight > 0.0;
    let (nll_s, mapped) = match m.mode() {
        Mode::Triangle => {
            let (z, ld) = m.stack_a().forward(tape, params, batch.source)?;
            let lp = m.base().log_prob(tape, z)?;
            let lp = tape.add(lp, ld)?;
            let mean = tape.mean(lp)?;
            let nll = tape.neg(mean)?;
            let mapped = if need_map {
                Some(m.source_latent_to_target(tape, params, z, ld)?.0)
            } else {
                None
            };
            (nll, mapped)
        }
        Mode::Chained => {
            let nll = nll_source(m, tape, params, batch.source)?;
            let mapped = if need_map {
                Some(m.map_forward_on_tape(tape, params, batch.source)?.0)
            } else {
                None
            };
            (nll, mapped)
        }
    };
    parts.nll_source = value(tape, nll_s)?;
    if w.nll_source_weight > 0.0 {
        acc.add(tape, w.nll_source_weight, nll_s)?;
    }
    let nll_t = nll_target(m, tape, params, batch.target)?;
    parts.nll_target = value(tape, nll_t)?;
    if w.nll_target_weight > 0.0 {
        acc.add(tape, w.nll_target_weight, nll_t)?;
    }
    if let Some(mapped) = mapped {
        if w.ipm_weight > 0.0 {
            let ipm = sliced_wasserstein(tape, mapped, batch.target, cfg, rng)?;
            parts.ipm = value(tape, ipm)?;
            acc.add(tape, w.ipm_weight, ipm)?;
        }
        if w.id_weight > 0.0 {
            let id = mean_distance_pow(tape, mapped, batch.source, 2)?;
            parts.id = value(tape, id)?;
            acc.add(tape, w.id_weight, id)?;
        }
    }
    if let Some((xs, xt)) = batch.paired {
        if w.paired_weight > 0.0 && rows(tape, xs)? > 0 {
            let pl = paired_loss(m, tape, params, xs, xt, w.paired_p)?;
            parts.paired = value(tape, pl)?;
            acc.add(tape, w.paired_weight, pl)?;
        }
    }
    let total = match acc.total {
        Some(t) => t,
        None => tape.scalar(0.0)?,
    };
    parts.total = value(tape, total)?;
    Ok((total, parts))
}

/// Latent-space objective: every [`total_loss`] term on encoded batches,
/// plus weighted reconstruction losses of both autoencoders.
#[allow(clippy::too_many_arguments)]
pub fn total_loss_general(
    m: &PushforwardModel,
    ae_s: &LinearAutoencoder,
    ae_t: &LinearAutoencoder,
    tape: &mut Tape,
    params: &Bindings,
    batch: LossBatch,
    w: &LossWeights,
    cfg: &SwdConfig,
    rng: &mut SessionRng,
) -> Result<(Var, LossParts)> {
    let zs = ae_s.encode_on_tape(tape, params, batch.source)?;
    let zt = ae_t.encode_on_tape(tape, params, batch.target)?;
    let paired = match batch.paired {
        Some((xs, xt)) if rows(tape, xs)? > 0 => Some((
            ae_s.encode_on_tape(tape, params, xs)?,
            ae_t.encode_on_tape(tape, params, xt)?,
        )),
        other => other,
    };
    let latent = LossBatch {
        source: zs,
        target: zt,
        paired,
    };
    let (mut total, mut parts) = total_loss(m, tape, params, latent, w, cfg, rng)?;
    for (ae, x, wr, slot) in [
        (ae_s, batch.source, w.recon_source_weight, &mut parts.recon_source),
        (ae_t, batch.target, w.recon_target_weight, &mut parts.recon_target),
    ] {
        let r = ae.recon_loss_on_tape(tape, params, x)?;
        *slot = value(tape, r)?;
        if wr > 0.0 {
            let scaled = tape.scale(r, wr)?;
            total = tape.add(total, scaled)?;
        }
    }
    parts.total = value(tape, total)?;
    Ok((total, parts))
}
