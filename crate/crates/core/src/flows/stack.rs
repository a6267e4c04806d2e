use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::diffengine::{standard_normal, Bindings, ParamStore, SessionRng, Tape, Tensor, Var};
use crate::flows::layers::{AffineElementwise, Bijector, Coupling, CouplingTransform, PermuteSwap, Transpose};
use crate::{Error, Result};

pub const DEFAULT_BINS: usize = 8;
pub const DEFAULT_TAIL: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowKind {
    Realnvp,
    Rqs,
    Affine,
}

/// Flow architecture descriptor, as written in configs and checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowArch {
    pub kind: FlowKind,
    pub blocks: usize,
    pub hidden: Vec<usize>,
    pub d: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail: Option<f64>,
    /// Exchange the first two coordinates right after the input affine,
    /// making every map the stack can express orientation-reversing.
    #[serde(default, skip_serializing_if = "is_false")]
    pub reflect: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

impl FlowArch {
    /// Spline flow with 8 blocks of 4x32 tanh conditioners.
    pub fn rqs(d: usize) -> Self {
        FlowArch {
            kind: FlowKind::Rqs,
            blocks: 8,
            hidden: vec![32; 4],
            d,
            bins: Some(DEFAULT_BINS),
            tail: Some(DEFAULT_TAIL),
            reflect: false,
        }
    }

    pub fn realnvp(d: usize) -> Self {
        FlowArch {
            kind: FlowKind::Realnvp,
            blocks: 8,
            hidden: vec![32; 4],
            d,
            bins: None,
            tail: None,
            reflect: false,
        }
    }

    pub fn affine(d: usize) -> Self {
        FlowArch {
            kind: FlowKind::Affine,
            blocks: 0,
            hidden: Vec::new(),
            d,
            bins: None,
            tail: None,
            reflect: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidArch("d must be positive".into()));
        }
        if self.reflect && self.d < 2 {
            return Err(Error::InvalidArch("reflect needs d >= 2".into()));
        }
        match self.kind {
            FlowKind::Affine => Ok(()),
            FlowKind::Realnvp | FlowKind::Rqs => {
                if self.d < 2 {
                    return Err(Error::InvalidArch(format!(
                        "coupling flows need d >= 2, got {}",
                        self.d
                    )));
                }
                if self.hidden.iter().any(|&w| w == 0) {
                    return Err(Error::InvalidArch("hidden widths must be positive".into()));
                }
                if self.kind == FlowKind::Rqs {
                    if self.bins() < 2 {
                        return Err(Error::InvalidArch("spline flows need at least 2 bins".into()));
                    }
                    if !(self.tail() > 0.0 && self.tail().is_finite()) {
                        return Err(Error::InvalidArch("tail bound must be positive".into()));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn bins(&self) -> usize {
        self.bins.unwrap_or(DEFAULT_BINS)
    }

    pub fn tail(&self) -> f64 {
        self.tail.unwrap_or(DEFAULT_TAIL)
    }
}

/// Ordered bijectors. `forward` maps data space to base space (f),
/// `inverse` maps base space back to data (g).
///
/// Layout: a leading affine layer, an optional reflecting transpose, then
/// `blocks` coupling blocks separated by coordinate swaps (plus a closing
/// swap when the count would be odd), then, for bridging stacks only, a
/// trailing affine.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowStack {
    arch: FlowArch,
    prefix: String,
    layers: Vec<Bijector>,
    trailing_affine: bool,
}

/// Builds an identity-initialized stack and registers its parameters in `store`.
pub fn build_flow(arch: &FlowArch, prefix: &str, rng: &mut SessionRng, store: &mut ParamStore) -> Result<FlowStack> {
    FlowStack::build(arch, prefix, false, rng, store)
}

impl FlowStack {
    /// `trailing_affine` appends a second affine layer after the last block,
    /// so couplings can act in standardized coordinates on both sides.
    pub fn build(
        arch: &FlowArch,
        prefix: &str,
        trailing_affine: bool,
        rng: &mut SessionRng,
        store: &mut ParamStore,
    ) -> Result<FlowStack> {
        let stack = FlowStack::layout(arch, prefix, trailing_affine)?;
        for layer in &stack.layers {
            match layer {
                Bijector::Affine(a) => a.init(store)?,
                Bijector::RealNvp(c) | Bijector::RqSpline(c) => c.init(store, rng)?,
                Bijector::PermuteSwap(_) | Bijector::Transpose(_) => {}
            }
        }
        Ok(stack)
    }

    /// The layer structure without touching any parameters; used when
    /// parameters come from a checkpoint.
    pub fn layout(arch: &FlowArch, prefix: &str, trailing_affine: bool) -> Result<FlowStack> {
        arch.validate()?;
        let d = arch.d;
        let mut layers = vec![Bijector::Affine(AffineElementwise::new(
            format!("{prefix}/affine_in"),
            d,
        ))];
        if arch.reflect {
            layers.push(Bijector::Transpose(Transpose { d }));
        }
        if arch.kind != FlowKind::Affine {
            let transform = match arch.kind {
                FlowKind::Realnvp => CouplingTransform::Affine,
                _ => CouplingTransform::Spline {
                    bins: arch.bins(),
                    tail: arch.tail(),
                },
            };
            for b in 0..arch.blocks {
                if b > 0 {
                    layers.push(Bijector::PermuteSwap(PermuteSwap { d }));
                }
                let c = Coupling::new(format!("{prefix}/block{b:02}"), d, &arch.hidden, transform)?;
                layers.push(match transform {
                    CouplingTransform::Affine => Bijector::RealNvp(c),
                    CouplingTransform::Spline { .. } => Bijector::RqSpline(c),
                });
            }
            // Reversal is an involution; an even number keeps the fresh stack the identity.
            if arch.blocks % 2 == 0 && arch.blocks > 0 {
                layers.push(Bijector::PermuteSwap(PermuteSwap { d }));
            }
        }
        if trailing_affine {
            layers.push(Bijector::Affine(AffineElementwise::new(
                format!("{prefix}/affine_out"),
                d,
            )));
        }
        Ok(FlowStack {
            arch: arch.clone(),
            prefix: prefix.to_string(),
            layers,
            trailing_affine,
        })
    }

    pub fn arch(&self) -> &FlowArch {
        &self.arch
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn dim(&self) -> usize {
        self.arch.d
    }

    pub fn layers(&self) -> &[Bijector] {
        &self.layers
    }

    pub fn has_trailing_affine(&self) -> bool {
        self.trailing_affine
    }

    pub fn input_affine(&self) -> &AffineElementwise {
        match &self.layers[0] {
            Bijector::Affine(a) => a,
            _ => unreachable!("stacks always start with an affine layer"),
        }
    }

    pub fn output_affine(&self) -> Option<&AffineElementwise> {
        match self.layers.last() {
            Some(Bijector::Affine(a)) if self.trailing_affine => Some(a),
            _ => None,
        }
    }

    fn check_dim(&self, tape: &Tape, x: Var) -> Result<()> {
        let s = tape.shape(x)?;
        if s.len() != 2 || s[1] != self.arch.d {
            return Err(Error::DimensionMismatch(format!(
                "flow of dimension {} applied to batch of shape {:?}",
                self.arch.d, s
            )));
        }
        Ok(())
    }

    /// Data to base. Returns `(z, logdet)`; logdet is the sum of layer logdets.
    pub fn forward(&self, tape: &mut Tape, params: &Bindings, x: Var) -> Result<(Var, Var)> {
        self.check_dim(tape, x)?;
        let mut h = x;
        let mut total: Option<Var> = None;
        for layer in &self.layers {
            let (y, ld) = layer.forward(tape, params, h)?;
            h = y;
            total = Some(match total {
                Some(acc) => tape.add(acc, ld)?,
                None => ld,
            });
        }
        Ok((h, total.expect("non-empty stack")))
    }

    /// Base to data.
    pub fn inverse(&self, tape: &mut Tape, params: &Bindings, z: Var) -> Result<(Var, Var)> {
        self.check_dim(tape, z)?;
        let mut h = z;
        let mut total: Option<Var> = None;
        for layer in self.layers.iter().rev() {
            let (y, ld) = layer.inverse(tape, params, h)?;
            h = y;
            total = Some(match total {
                Some(acc) => tape.add(acc, ld)?,
                None => ld,
            });
        }
        Ok((h, total.expect("non-empty stack")))
    }

    pub fn forward_values(&self, store: &ParamStore, x: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        eval_frozen(store, x, |tape, p, v| self.forward(tape, p, v))
    }

    pub fn inverse_values(&self, store: &ParamStore, z: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        eval_frozen(store, z, |tape, p, v| self.inverse(tape, p, v))
    }
}

/// Rows evaluated per tape by the inference helpers; bounds tape memory.
pub(crate) const EVAL_CHUNK: usize = 2048;

/// Evaluates `f` over row chunks of `x` with all parameters bound as
/// constants, concatenating each output along its first axis.
pub(crate) fn eval_rows<F>(store: &ParamStore, x: &Tensor, f: F) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Tape, &Bindings, Var) -> Result<Vec<Var>>,
{
    let n = x.rows();
    let width = x.numel() / n.max(1);
    let mut outputs: Vec<(Vec<usize>, Vec<f64>)> = Vec::new();
    let mut start = 0;
    while start < n || (n == 0 && outputs.is_empty()) {
        let end = (start + EVAL_CHUNK).min(n);
        let mut shape = x.shape().to_vec();
        shape[0] = end - start;
        let chunk = Tensor::new(shape, x.data()[start * width..end * width].to_vec())?;
        let mut tape = Tape::new();
        let params = store.bind_frozen(&mut tape)?;
        let xv = tape.constant(chunk)?;
        let vars = f(&mut tape, &params, xv)?;
        if outputs.is_empty() {
            outputs = vars.iter().map(|_| (Vec::new(), Vec::new())).collect();
        }
        for ((shape, data), v) in outputs.iter_mut().zip(vars) {
            let t = tape.value(v)?;
            if shape.is_empty() {
                *shape = t.shape().to_vec();
            } else {
                shape[0] += t.shape()[0];
            }
            data.extend_from_slice(t.data());
        }
        if n == 0 {
            break;
        }
        start = end;
    }
    outputs
        .into_iter()
        .map(|(shape, data)| Ok(Tensor::new(shape, data)?))
        .collect()
}

/// Chunked evaluation of a `(values, per-row logdet)` pair.
pub(crate) fn eval_frozen<F>(store: &ParamStore, x: &Tensor, f: F) -> Result<(Tensor, Vec<f64>)>
where
    F: Fn(&mut Tape, &Bindings, Var) -> Result<(Var, Var)>,
{
    let mut out = eval_rows(store, x, |tape, p, v| {
        let (y, ld) = f(tape, p, v)?;
        Ok(vec![y, ld])
    })?;
    let ld = out.pop().expect("two outputs").into_data();
    Ok((out.pop().expect("two outputs"), ld))
}

/// Standard Gaussian on R^d.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BaseDensity {
    pub d: usize,
}

impl BaseDensity {
    pub fn new(d: usize) -> Self {
        BaseDensity { d }
    }

    /// Per-row log-density of a `[n, d]` batch.
    pub fn log_prob(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let sq = tape.square(z)?;
        let r2 = tape.sum_last(sq)?;
        let half = tape.scale(r2, -0.5)?;
        Ok(tape.shift(half, -0.5 * self.d as f64 * (2.0 * PI).ln())?)
    }

    pub fn log_prob_point(&self, z: &[f64]) -> f64 {
        let r2: f64 = z.iter().map(|v| v * v).sum();
        -0.5 * r2 - 0.5 * self.d as f64 * (2.0 * PI).ln()
    }

    pub fn sample(&self, rng: &mut SessionRng, n: usize) -> Tensor {
        standard_normal(rng, n, self.d)
    }
}

/// `log rho_Z(f(x)) + log|det Df(x)|` per row, on the tape.
pub fn log_prob_on_tape(stack: &FlowStack, base: &BaseDensity, tape: &mut Tape, params: &Bindings, x: Var) -> Result<Var> {
    let (z, ld) = stack.forward(tape, params, x)?;
    let lp = base.log_prob(tape, z)?;
    Ok(tape.add(lp, ld)?)
}

/// Per-point log-density of `x` under the flow-induced distribution.
pub fn log_prob(stack: &FlowStack, base: &BaseDensity, store: &ParamStore, x: &Tensor) -> Result<Vec<f64>> {
    let out = eval_rows(store, x, |tape, p, v| Ok(vec![log_prob_on_tape(stack, base, tape, p, v)?]))?;
    Ok(out.into_iter().next().expect("one output").into_data())
}

/// Draws `n` base points and maps them to data space through the inverse.
pub fn sample(stack: &FlowStack, base: &BaseDensity, store: &ParamStore, n: usize, rng: &mut SessionRng) -> Result<Tensor> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let z = base.sample(rng, n);
    Ok(stack.inverse_values(store, &z)?.0)
}
