//! Linear encoder/decoder pairs for maps between spaces of unequal or high
//! dimension: `T = dec_t ∘ T_latent ∘ enc_s`.
//!
//! Autoencoder parameters share the model's [`ParamStore`] under `enc_s`,
//! `dec_s`, `enc_t` and `dec_t`. Weights are stored input-major, so the
//! encoder weight has shape `[d_ambient, d_latent]`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::diffengine::{Bindings, ParamStore, Tape, Tensor, Var};
use crate::flows::eval_rows;
use crate::pushforward::PushforwardModel;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Source,
    Target,
}

impl Side {
    fn suffix(self) -> &'static str {
        match self {
            Side::Source => "s",
            Side::Target => "t",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearAutoencoder {
    side: Side,
    d_ambient: usize,
    d_latent: usize,
    trainable: bool,
}

impl LinearAutoencoder {
    /// Describes an autoencoder whose parameters already sit in a store.
    pub fn existing(side: Side, store: &ParamStore, trainable: bool) -> Result<Self> {
        let probe = LinearAutoencoder {
            side,
            d_ambient: 0,
            d_latent: 0,
            trainable,
        };
        let w = store.get(&probe.enc_weight())?;
        if w.ndim() != 2 {
            return Err(Error::Checkpoint(format!("`{}` must be a matrix", probe.enc_weight())));
        }
        let ae = LinearAutoencoder {
            d_ambient: w.shape()[0],
            d_latent: w.shape()[1],
            ..probe
        };
        let expect = [
            (ae.enc_bias(), vec![ae.d_ambient]),
            (ae.dec_weight(), vec![ae.d_latent, ae.d_ambient]),
            (ae.dec_bias(), vec![ae.d_ambient]),
        ];
        for (path, shape) in expect {
            if store.get(&path)?.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!("`{path}` must have shape {shape:?}")));
            }
        }
        Ok(ae)
    }

    /// Whether `store` holds autoencoder parameters for `side`.
    pub fn present(side: Side, store: &ParamStore) -> bool {
        store.contains(&format!("enc_{}/weight", side.suffix()))
    }

    /// Inserts explicit weights: `encode(x) = (x - bias) W`, `decode(z) = z V + bias`.
    pub fn insert(side: Side, w: Tensor, v: Tensor, bias: Tensor, trainable: bool, store: &mut ParamStore) -> Result<Self> {
        if w.ndim() != 2 {
            return Err(Error::DimensionMismatch("encoder weight must be a matrix".into()));
        }
        let (d_ambient, d_latent) = (w.shape()[0], w.shape()[1]);
        if v.shape() != [d_latent, d_ambient] || bias.shape() != [d_ambient] {
            return Err(Error::DimensionMismatch(format!(
                "decoder {:?} / bias {:?} do not match encoder {:?}",
                v.shape(),
                bias.shape(),
                w.shape()
            )));
        }
        if d_latent > d_ambient {
            return Err(Error::DimensionMismatch(format!(
                "latent dimension {d_latent} exceeds ambient dimension {d_ambient}"
            )));
        }
        let ae = LinearAutoencoder {
            side,
            d_ambient,
            d_latent,
            trainable,
        };
        store.insert(ae.enc_weight(), w)?;
        store.insert(ae.enc_bias(), bias.clone())?;
        store.insert(ae.dec_weight(), v)?;
        store.insert(ae.dec_bias(), bias)?;
        Ok(ae)
    }

    /// Identity autoencoder on `R^d`.
    pub fn identity(side: Side, d: usize, trainable: bool, store: &mut ParamStore) -> Result<Self> {
        let mut eye = Tensor::zeros(&[d, d]);
        for i in 0..d {
            eye.data_mut()[i * d + i] = 1.0;
        }
        Self::insert(side, eye.clone(), eye, Tensor::zeros(&[d]), trainable, store)
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn d_ambient(&self) -> usize {
        self.d_ambient
    }

    pub fn d_latent(&self) -> usize {
        self.d_latent
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn enc_prefix(&self) -> String {
        format!("enc_{}", self.side.suffix())
    }

    pub fn dec_prefix(&self) -> String {
        format!("dec_{}", self.side.suffix())
    }

    pub fn enc_weight(&self) -> String {
        format!("{}/weight", self.enc_prefix())
    }

    pub fn enc_bias(&self) -> String {
        format!("{}/bias", self.enc_prefix())
    }

    pub fn dec_weight(&self) -> String {
        format!("{}/weight", self.dec_prefix())
    }

    pub fn dec_bias(&self) -> String {
        format!("{}/bias", self.dec_prefix())
    }

    /// Path prefixes to freeze when the autoencoder is not trainable.
    pub fn frozen_prefixes(&self) -> Vec<String> {
        if self.trainable {
            Vec::new()
        } else {
            vec![format!("{}/", self.enc_prefix()), format!("{}/", self.dec_prefix())]
        }
    }

    pub fn encode_on_tape(&self, tape: &mut Tape, p: &Bindings, x: Var) -> Result<Var> {
        let centered = tape.sub(x, p.get(&self.enc_bias())?)?;
        Ok(tape.matmul(centered, p.get(&self.enc_weight())?)?)
    }

    pub fn decode_on_tape(&self, tape: &mut Tape, p: &Bindings, z: Var) -> Result<Var> {
        let y = tape.matmul(z, p.get(&self.dec_weight())?)?;
        Ok(tape.add(y, p.get(&self.dec_bias())?)?)
    }

    /// Mean over rows of `|decode(encode(x)) - x|^2`.
    pub fn recon_loss_on_tape(&self, tape: &mut Tape, p: &Bindings, x: Var) -> Result<Var> {
        let z = self.encode_on_tape(tape, p, x)?;
        let xr = self.decode_on_tape(tape, p, z)?;
        let diff = tape.sub(xr, x)?;
        let sq = tape.square(diff)?;
        let per_row = tape.sum_last(sq)?;
        Ok(tape.mean(per_row)?)
    }

    fn check(&self, x: &Tensor, d: usize) -> Result<()> {
        if x.ndim() != 2 || x.last_dim() != d {
            return Err(Error::DimensionMismatch(format!("expected [n, {d}] batch, got {:?}", x.shape())));
        }
        if x.rows() == 0 {
            return Err(Error::EmptyBatch("autoencoder input"));
        }
        Ok(())
    }

    fn run<F>(&self, store: &ParamStore, x: &Tensor, f: F) -> Result<Tensor>
    where
        F: Fn(&mut Tape, &Bindings, Var) -> Result<Var>,
    {
        let out = eval_rows(store, x, |t, p, v| Ok(vec![f(t, p, v)?]))?;
        Ok(out.into_iter().next().expect("one output"))
    }

    pub fn encode(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        self.check(x, self.d_ambient)?;
        self.run(store, x, |t, p, v| self.encode_on_tape(t, p, v))
    }

    pub fn decode(&self, store: &ParamStore, z: &Tensor) -> Result<Tensor> {
        self.check(z, self.d_latent)?;
        self.run(store, z, |t, p, v| self.decode_on_tape(t, p, v))
    }

    pub fn recon_loss(&self, store: &ParamStore, x: &Tensor) -> Result<f64> {
        self.check(x, self.d_ambient)?;
        let per_row = self.run(store, x, |t, p, v| {
            let z = self.encode_on_tape(t, p, v)?;
            let xr = self.decode_on_tape(t, p, z)?;
            let diff = t.sub(xr, v)?;
            let sq = t.square(diff)?;
            Ok(t.sum_last(sq)?)
        })?;
        Ok(per_row.data().iter().sum::<f64>() / x.rows() as f64)
    }
}

/// Principal-component autoencoder: the encoder holds the top `d_latent`
/// unit eigenvectors of the sample covariance (each flipped so its
/// largest-magnitude entry is positive), the decoder is its transpose and
/// both biases are the data mean.
pub fn pca_init(data: &Tensor, d_latent: usize, side: Side, trainable: bool, store: &mut ParamStore) -> Result<LinearAutoencoder> {
    let (w, mean) = principal_directions(data, d_latent)?;
    let d = data.last_dim();
    let mut v = Tensor::zeros(&[d_latent, d]);
    for i in 0..d {
        for j in 0..d_latent {
            v.data_mut()[j * d + i] = w.data()[i * d_latent + j];
        }
    }
    LinearAutoencoder::insert(side, w, v, Tensor::vector(mean), trainable, store)
}

/// Top principal directions as a `[d, k]` matrix, plus the column means.
pub fn principal_directions(data: &Tensor, k: usize) -> Result<(Tensor, Vec<f64>)> {
    if data.ndim() != 2 {
        return Err(Error::DimensionMismatch("PCA input must be [n, d]".into()));
    }
    let (n, d) = (data.rows(), data.last_dim());
    if k == 0 || k > d {
        return Err(Error::InvalidArgument(format!("latent dimension {k} not in 1..={d}")));
    }
    if n <= k {
        return Err(Error::InvalidArgument(format!("PCA needs more than {k} rows, got {n}")));
    }
    let x = DMatrix::from_row_slice(n, d, data.data());
    let mean: Vec<f64> = (0..d).map(|j| x.column(j).mean()).collect();
    let mut centered = x;
    for j in 0..d {
        centered.column_mut(j).add_scalar_mut(-mean[j]);
    }
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let kth = eig.eigenvalues[order[k - 1]];
    if top == 0.0 || kth <= top * 1e-12 {
        return Err(Error::RankDeficient(format!(
            "data has fewer than {k} non-degenerate directions"
        )));
    }
    let mut w = Tensor::zeros(&[d, k]);
    for (j, &col) in order.iter().take(k).enumerate() {
        let vec = eig.eigenvectors.column(col);
        let lead = vec.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        let norm = vec.norm();
        for i in 0..d {
            w.data_mut()[i * k + j] = sign * vec[i] / norm;
        }
    }
    Ok((w, mean))
}

/// A latent-space model with source and target autoencoders sharing its store.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentModel {
    pub model: PushforwardModel,
    pub ae_s: LinearAutoencoder,
    pub ae_t: LinearAutoencoder,
}

impl LatentModel {
    pub fn new(model: PushforwardModel, ae_s: LinearAutoencoder, ae_t: LinearAutoencoder) -> Result<Self> {
        if ae_s.d_latent() != model.d() || ae_t.d_latent() != model.d() {
            return Err(Error::DimensionMismatch(format!(
                "latent dimensions {} / {} do not match model dimension {}",
                ae_s.d_latent(),
                ae_t.d_latent(),
                model.d()
            )));
        }
        Ok(LatentModel { model, ae_s, ae_t })
    }

    /// Rebuilds the autoencoders from a model whose store carries them.
    pub fn from_model(model: PushforwardModel) -> Result<Option<Self>> {
        let store = model.params();
        if !LinearAutoencoder::present(Side::Source, store) {
            return Ok(None);
        }
        let ae_s = LinearAutoencoder::existing(Side::Source, store, false)?;
        let ae_t = LinearAutoencoder::existing(Side::Target, store, false)?;
        Ok(Some(Self::new(model, ae_s, ae_t)?))
    }

    pub fn map_forward(&self, x: &Tensor) -> Result<Tensor> {
        compose_map(&self.ae_s, &self.ae_t, &self.model, x)
    }

    /// `dec_s ∘ T_latent^{-1} ∘ enc_t`; exact only on the target subspace.
    pub fn map_inverse(&self, y: &Tensor) -> Result<Tensor> {
        let store = self.model.params();
        let z = self.ae_t.encode(store, y)?;
        let zs = self.model.map_inverse(&z)?;
        self.ae_s.decode(store, &zs)
    }
}

/// `decode_t(map_forward(encode_s(x)))`, reading autoencoder weights from
/// the model's store.
pub fn compose_map(ae_s: &LinearAutoencoder, ae_t: &LinearAutoencoder, model: &PushforwardModel, x: &Tensor) -> Result<Tensor> {
    if ae_s.d_latent() != model.d() || ae_t.d_latent() != model.d() {
        return Err(Error::DimensionMismatch(format!(
            "latent dimensions {} / {} do not match model dimension {}",
            ae_s.d_latent(),
            ae_t.d_latent(),
            model.d()
        )));
    }
    let store = model.params();
    let z = ae_s.encode(store, x)?;
    let zt = model.map_forward(&z)?;
    ae_t.decode(store, &zt)
}

/// Random `[d, k]` matrix with orthonormal columns.
pub fn random_orthonormal(d: usize, k: usize, rng: &mut crate::diffengine::SessionRng) -> Result<Tensor> {
    if k > d {
        return Err(Error::InvalidArgument(format!("cannot fit {k} orthonormal columns in R^{d}")));
    }
    let g = crate::diffengine::standard_normal(rng, d, k);
    let m = DMatrix::from_row_slice(d, k, g.data());
    let q = m.qr().q();
    let mut out = Tensor::zeros(&[d, k]);
    for i in 0..d {
        for j in 0..k {
            out.data_mut()[i * k + j] = q[(i, j)];
        }
    }
    Ok(out)
}
