use crate::diffengine::{Bindings, ParamStore, SessionRng, Tape, Tensor, Var};
use crate::flows::mlp::Mlp;
use crate::flows::spline::rq_spline;
use crate::{Error, Result};

/// Bound on RealNVP log-scales: raw scales pass through `S_MAX * tanh(raw / S_MAX)`.
pub const REALNVP_SCALE_CLAMP: f64 = 5.0;

/// One invertible layer. `forward` runs in the data-to-base direction.
#[derive(Clone, Debug, PartialEq)]
pub enum Bijector {
    Affine(AffineElementwise),
    RealNvp(Coupling),
    RqSpline(Coupling),
    PermuteSwap(PermuteSwap),
    Transpose(Transpose),
}

impl Bijector {
    pub fn dim(&self) -> usize {
        match self {
            Bijector::Affine(a) => a.d,
            Bijector::RealNvp(c) | Bijector::RqSpline(c) => c.d,
            Bijector::PermuteSwap(p) => p.d,
            Bijector::Transpose(t) => t.d,
        }
    }

    /// Returns `(y, logdet)` with `logdet` of shape `[n]`.
    pub fn forward(&self, tape: &mut Tape, params: &Bindings, x: Var) -> Result<(Var, Var)> {
        match self {
            Bijector::Affine(a) => a.apply(tape, params, x, false),
            Bijector::RealNvp(c) | Bijector::RqSpline(c) => c.apply(tape, params, x, false),
            Bijector::PermuteSwap(p) => p.apply(tape, x),
            Bijector::Transpose(t) => t.apply(tape, x),
        }
    }

    pub fn inverse(&self, tape: &mut Tape, params: &Bindings, y: Var) -> Result<(Var, Var)> {
        match self {
            Bijector::Affine(a) => a.apply(tape, params, y, true),
            Bijector::RealNvp(c) | Bijector::RqSpline(c) => c.apply(tape, params, y, true),
            Bijector::PermuteSwap(p) => p.apply(tape, y),
            Bijector::Transpose(t) => t.apply(tape, y),
        }
    }
}

fn zero_logdet(tape: &mut Tape, x: Var) -> Result<Var> {
    let n = tape.value(x)?.rows();
    Ok(tape.constant(Tensor::zeros(&[n]))?)
}

/// `y = x * exp(log_scale) + shift`, per dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineElementwise {
    pub prefix: String,
    pub d: usize,
}

impl AffineElementwise {
    pub fn new(prefix: impl Into<String>, d: usize) -> Self {
        AffineElementwise {
            prefix: prefix.into(),
            d,
        }
    }

    pub fn log_scale_path(&self) -> String {
        format!("{}/log_scale", self.prefix)
    }

    pub fn shift_path(&self) -> String {
        format!("{}/shift", self.prefix)
    }

    pub fn init(&self, store: &mut ParamStore) -> Result<()> {
        store.insert(self.log_scale_path(), Tensor::zeros(&[self.d]))?;
        store.insert(self.shift_path(), Tensor::zeros(&[self.d]))?;
        Ok(())
    }

    fn apply(&self, tape: &mut Tape, params: &Bindings, x: Var, inverse: bool) -> Result<(Var, Var)> {
        let s = params.get(&self.log_scale_path())?;
        let t = params.get(&self.shift_path())?;
        let zero = zero_logdet(tape, x)?;
        let total = tape.sum(s)?;
        if inverse {
            let centered = tape.sub(x, t)?;
            let neg_s = tape.neg(s)?;
            let inv_scale = tape.exp(neg_s)?;
            let y = tape.mul(centered, inv_scale)?;
            let ld = tape.sub(zero, total)?;
            Ok((y, ld))
        } else {
            let scale = tape.exp(s)?;
            let scaled = tape.mul(x, scale)?;
            let y = tape.add(scaled, t)?;
            let ld = tape.add(zero, total)?;
            Ok((y, ld))
        }
    }
}

/// Reverses the coordinate order (a swap for `d = 2`).
#[derive(Clone, Debug, PartialEq)]
pub struct PermuteSwap {
    pub d: usize,
}

impl PermuteSwap {
    fn apply(&self, tape: &mut Tape, x: Var) -> Result<(Var, Var)> {
        let cols: Vec<usize> = (0..self.d).rev().collect();
        let y = tape.select_last(x, &cols)?;
        let ld = zero_logdet(tape, x)?;
        Ok((y, ld))
    }
}

/// Exchanges the first two coordinates: an odd permutation in any dimension,
/// hence orientation-reversing.
#[derive(Clone, Debug, PartialEq)]
pub struct Transpose {
    pub d: usize,
}

impl Transpose {
    fn apply(&self, tape: &mut Tape, x: Var) -> Result<(Var, Var)> {
        let mut cols: Vec<usize> = (0..self.d).collect();
        cols.swap(0, 1);
        let y = tape.select_last(x, &cols)?;
        let ld = zero_logdet(tape, x)?;
        Ok((y, ld))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CouplingTransform {
    Affine,
    Spline { bins: usize, tail: f64 },
}

/// Coupling layer: the first `d / 2` coordinates pass through unchanged and
/// condition an elementwise transform of the remaining ones.
#[derive(Clone, Debug, PartialEq)]
pub struct Coupling {
    pub d: usize,
    pub transform: CouplingTransform,
    net: Mlp,
}

impl Coupling {
    pub fn new(prefix: impl Into<String>, d: usize, hidden: &[usize], transform: CouplingTransform) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidArch(format!(
                "coupling layers need d >= 2, got {d}"
            )));
        }
        let split = d / 2;
        let per_dim = match transform {
            CouplingTransform::Affine => 2,
            CouplingTransform::Spline { bins, .. } => 3 * bins - 1,
        };
        let mut widths = vec![split];
        widths.extend_from_slice(hidden);
        widths.push(per_dim * (d - split));
        Ok(Coupling {
            d,
            transform,
            net: Mlp::new(format!("{}/net", prefix.into()), widths),
        })
    }

    pub fn conditioner(&self) -> &Mlp {
        &self.net
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut SessionRng) -> Result<()> {
        self.net.init(store, rng, true)
    }

    fn apply(&self, tape: &mut Tape, params: &Bindings, x: Var, inverse: bool) -> Result<(Var, Var)> {
        let split = self.d / 2;
        let m = self.d - split;
        let parts = tape.split_last(x, &[split, m])?;
        let (xa, xb) = (parts[0], parts[1]);
        let h = self.net.forward(tape, params, xa)?;
        let (yb, ld) = match self.transform {
            CouplingTransform::Affine => {
                let hs = tape.split_last(h, &[m, m])?;
                let s = tape.scale(hs[0], 1.0 / REALNVP_SCALE_CLAMP)?;
                let s = tape.tanh(s)?;
                let s = tape.scale(s, REALNVP_SCALE_CLAMP)?;
                let t = hs[1];
                let ld = tape.sum_last(s)?;
                if inverse {
                    let centered = tape.sub(xb, t)?;
                    let neg_s = tape.neg(s)?;
                    let e = tape.exp(neg_s)?;
                    (tape.mul(centered, e)?, tape.neg(ld)?)
                } else {
                    let e = tape.exp(s)?;
                    let scaled = tape.mul(xb, e)?;
                    (tape.add(scaled, t)?, ld)
                }
            }
            CouplingTransform::Spline { bins, tail } => {
                let per = 3 * bins - 1;
                let n = tape.value(x)?.rows();
                let mut cols = Vec::with_capacity(m);
                let mut ld: Option<Var> = None;
                for j in 0..m {
                    let raw = tape.slice_last(h, j * per, (j + 1) * per)?;
                    let col = tape.slice_last(xb, j, j + 1)?;
                    let col = tape.reshape(col, &[n])?;
                    let (yj, ldj) = rq_spline(tape, col, raw, bins, tail, inverse)?;
                    cols.push(tape.reshape(yj, &[n, 1])?);
                    ld = Some(match ld {
                        Some(acc) => tape.add(acc, ldj)?,
                        None => ldj,
                    });
                }
                let yb = if cols.len() == 1 {
                    cols[0]
                } else {
                    tape.concat_last(&cols)?
                };
                (yb, ld.expect("m >= 1"))
            }
        };
        let y = tape.concat_last(&[xa, yb])?;
        Ok((y, ld))
    }
}
