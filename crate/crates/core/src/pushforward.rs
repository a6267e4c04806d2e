//! Source-to-target maps composed from two flow stacks.
//!
//! * Triangle: `stack_a` is source <-> base, `stack_b` is target <-> base,
//!   and the map is `T = g2 ∘ f1`.
//! * Chained: `stack_a` is source <-> base, `stack_b` runs source -> target
//!   directly, and `T = f2`.
//!
//! The model owns a single [`ParamStore`]. Flow parameters live under `a/`
//! and `b/`; other subtrees (autoencoders) may share the store.

use serde::{Deserialize, Serialize};

use crate::diffengine::{Bindings, ParamStore, SessionRng, Tape, Tensor, Var, PARAMS_FORMAT_VERSION};
use crate::flows::{eval_frozen, eval_rows, log_prob_on_tape, BaseDensity, FlowArch, FlowStack};
use crate::{Error, Result};

pub const PREFIX_A: &str = "a";
pub const PREFIX_B: &str = "b";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Triangle,
    Chained,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PushforwardModel {
    mode: Mode,
    stack_a: FlowStack,
    stack_b: FlowStack,
    base: BaseDensity,
    params: ParamStore,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointDoc<P> {
    format_version: u32,
    mode: Mode,
    arch_a: FlowArch,
    arch_b: FlowArch,
    params: P,
}

/// Per-dimension mean and standard deviation of a batch.
pub fn moments(x: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.ndim() != 2 || x.rows() < 2 {
        return Err(Error::EmptyBatch("moments need at least two rows"));
    }
    let (n, d) = (x.rows(), x.last_dim());
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; d];
    for r in 0..n {
        for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var.iter().map(|s| (s / (n - 1) as f64).sqrt().max(1e-8)).collect();
    Ok((mean, std))
}

/// Whether paired samples suggest an orientation-reversing relationship:
/// the sign of the determinant of the least-squares linear fit, which equals
/// the sign of the cross-covariance determinant. `None` when the pairs
/// cannot determine it (too few rows, unequal dimensions, or a singular fit).
pub fn paired_orientation_reversed(source: &Tensor, target: &Tensor) -> Result<Option<bool>> {
    if source.rows() != target.rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} paired sources but {} paired targets",
            source.rows(),
            target.rows()
        )));
    }
    let d = source.last_dim();
    if target.last_dim() != d || source.rows() <= d {
        return Ok(None);
    }
    let (ms, _) = moments(source)?;
    let (mt, _) = moments(target)?;
    let mut cross = nalgebra::DMatrix::<f64>::zeros(d, d);
    for r in 0..source.rows() {
        let (xs, xt) = (source.row(r), target.row(r));
        for i in 0..d {
            for j in 0..d {
                cross[(i, j)] += (xs[i] - ms[i]) * (xt[j] - mt[j]);
            }
        }
    }
    let scale = cross.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let det = (cross / scale.max(f64::MIN_POSITIVE)).determinant();
    Ok(if det.abs() < 1e-9 || !det.is_finite() { None } else { Some(det < 0.0) })
}

impl PushforwardModel {
    /// Builds an identity-initialized model. In Chained mode `stack_b` gets
    /// a trailing affine layer so its couplings act on standardized data.
    pub fn new(mode: Mode, arch_a: &FlowArch, arch_b: &FlowArch, rng: &mut SessionRng) -> Result<Self> {
        Self::check_dims(arch_a, arch_b)?;
        let mut params = ParamStore::new();
        let stack_a = FlowStack::build(arch_a, PREFIX_A, false, rng, &mut params)?;
        let stack_b = FlowStack::build(arch_b, PREFIX_B, mode == Mode::Chained, rng, &mut params)?;
        Ok(PushforwardModel {
            mode,
            stack_a,
            stack_b,
            base: BaseDensity::new(arch_a.d),
            params,
        })
    }

    /// Reassembles a model around existing parameters, checking that every
    /// flow parameter is present with the right shape.
    pub fn from_params(mode: Mode, arch_a: &FlowArch, arch_b: &FlowArch, params: ParamStore) -> Result<Self> {
        Self::check_dims(arch_a, arch_b)?;
        let mut reference = ParamStore::new();
        let mut rng = crate::diffengine::session_rng(0);
        let stack_a = FlowStack::build(arch_a, PREFIX_A, false, &mut rng, &mut reference)?;
        let stack_b = FlowStack::build(arch_b, PREFIX_B, mode == Mode::Chained, &mut rng, &mut reference)?;
        for (path, p) in reference.iter() {
            let got = params
                .get(path)
                .map_err(|_| Error::Checkpoint(format!("missing parameter `{path}`")))?;
            if got.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{path}` has shape {:?}, expected {:?}",
                    got.shape(),
                    p.value.shape()
                )));
            }
        }
        for path in params.paths() {
            let flow_path = path.starts_with("a/") || path.starts_with("b/");
            if flow_path && !reference.contains(path) {
                return Err(Error::Checkpoint(format!("unexpected parameter `{path}`")));
            }
        }
        Ok(PushforwardModel {
            mode,
            stack_a,
            stack_b,
            base: BaseDensity::new(arch_a.d),
            params,
        })
    }

    fn check_dims(arch_a: &FlowArch, arch_b: &FlowArch) -> Result<()> {
        if arch_a.d != arch_b.d {
            return Err(Error::DimensionMismatch(format!(
                "stack dimensions differ: {} vs {}",
                arch_a.d, arch_b.d
            )));
        }
        Ok(())
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn d(&self) -> usize {
        self.base.d
    }

    pub fn stack_a(&self) -> &FlowStack {
        &self.stack_a
    }

    pub fn stack_b(&self) -> &FlowStack {
        &self.stack_b
    }

    pub fn base(&self) -> &BaseDensity {
        &self.base
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Sets the outer affine layers from data moments so that the couplings
    /// see roughly standardized inputs. Coupling blocks stay untouched.
    pub fn standardize(&mut self, source: &Tensor, target: &Tensor) -> Result<()> {
        let (ms, ss) = moments(source)?;
        let (mt, st) = moments(target)?;
        let whiten = |m: &[f64], s: &[f64]| {
            let log_scale: Vec<f64> = s.iter().map(|v| -v.ln()).collect();
            let shift: Vec<f64> = m.iter().zip(s).map(|(m, s)| -m / s).collect();
            (Tensor::vector(log_scale), Tensor::vector(shift))
        };
        let (ls, sh) = whiten(&ms, &ss);
        let a_in = self.stack_a.input_affine();
        self.params.set(&a_in.log_scale_path(), ls.clone())?;
        self.params.set(&a_in.shift_path(), sh.clone())?;
        let b_in = self.stack_b.input_affine().clone();
        match self.mode {
            Mode::Triangle => {
                let (lt, tt) = whiten(&mt, &st);
                self.params.set(&b_in.log_scale_path(), lt)?;
                self.params.set(&b_in.shift_path(), tt)?;
            }
            Mode::Chained => {
                self.params.set(&b_in.log_scale_path(), ls)?;
                self.params.set(&b_in.shift_path(), sh)?;
                let out = self.stack_b.output_affine().expect("chained stack_b has a trailing affine").clone();
                self.params
                    .set(&out.log_scale_path(), Tensor::vector(st.iter().map(|v| v.ln()).collect()))?;
                self.params.set(&out.shift_path(), Tensor::vector(mt))?;
            }
        }
        Ok(())
    }

    /// `(T(x), log|det DT(x)|)` on the tape.
    pub fn map_forward_on_tape(&self, tape: &mut Tape, p: &Bindings, x: Var) -> Result<(Var, Var)> {
        match self.mode {
            Mode::Triangle => {
                let (z, ld1) = self.stack_a.forward(tape, p, x)?;
                self.source_latent_to_target(tape, p, z, ld1)
            }
            Mode::Chained => self.stack_b.forward(tape, p, x),
        }
    }

    /// Completes the Triangle map from an already computed `f1(x)` and its logdet.
    pub fn source_latent_to_target(&self, tape: &mut Tape, p: &Bindings, z: Var, ld_f1: Var) -> Result<(Var, Var)> {
        let (y, ld2) = self.stack_b.inverse(tape, p, z)?;
        Ok((y, tape.add(ld_f1, ld2)?))
    }

    pub fn map_inverse_on_tape(&self, tape: &mut Tape, p: &Bindings, y: Var) -> Result<(Var, Var)> {
        match self.mode {
            Mode::Triangle => {
                let (z, ld2) = self.stack_b.forward(tape, p, y)?;
                let (x, ld1) = self.stack_a.inverse(tape, p, z)?;
                Ok((x, tape.add(ld2, ld1)?))
            }
            Mode::Chained => self.stack_b.inverse(tape, p, y),
        }
    }

    pub fn loglik_source_on_tape(&self, tape: &mut Tape, p: &Bindings, x: Var) -> Result<Var> {
        log_prob_on_tape(&self.stack_a, &self.base, tape, p, x)
    }

    pub fn loglik_target_on_tape(&self, tape: &mut Tape, p: &Bindings, y: Var) -> Result<Var> {
        match self.mode {
            Mode::Triangle => log_prob_on_tape(&self.stack_b, &self.base, tape, p, y),
            Mode::Chained => {
                let (x, ld_g2) = self.stack_b.inverse(tape, p, y)?;
                let (z, ld_f1) = self.stack_a.forward(tape, p, x)?;
                let lp = self.base.log_prob(tape, z)?;
                let ld = tape.add(ld_g2, ld_f1)?;
                Ok(tape.add(lp, ld)?)
            }
        }
    }

    fn check_batch(&self, x: &Tensor) -> Result<()> {
        if x.ndim() != 2 || x.last_dim() != self.d() {
            return Err(Error::DimensionMismatch(format!(
                "expected [n, {}] batch, got {:?}",
                self.d(),
                x.shape()
            )));
        }
        if x.rows() == 0 {
            return Err(Error::EmptyBatch("input batch"));
        }
        Ok(())
    }

    pub fn map_forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.map_forward_with_logdet(x)?.0)
    }

    pub fn map_forward_with_logdet(&self, x: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        self.check_batch(x)?;
        eval_frozen(&self.params, x, |t, p, v| self.map_forward_on_tape(t, p, v))
    }

    pub fn map_inverse(&self, y: &Tensor) -> Result<Tensor> {
        self.check_batch(y)?;
        Ok(eval_frozen(&self.params, y, |t, p, v| self.map_inverse_on_tape(t, p, v))?.0)
    }

    pub fn loglik_source(&self, x: &Tensor) -> Result<Vec<f64>> {
        self.check_batch(x)?;
        self.eval_loglik(x, |t, p, v| self.loglik_source_on_tape(t, p, v))
    }

    pub fn loglik_target(&self, y: &Tensor) -> Result<Vec<f64>> {
        self.check_batch(y)?;
        self.eval_loglik(y, |t, p, v| self.loglik_target_on_tape(t, p, v))
    }

    fn eval_loglik<F>(&self, x: &Tensor, f: F) -> Result<Vec<f64>>
    where
        F: Fn(&mut Tape, &Bindings, Var) -> Result<Var>,
    {
        let out = eval_rows(&self.params, x, |t, p, v| Ok(vec![f(t, p, v)?]))?;
        Ok(out.into_iter().next().expect("one output").into_data())
    }

    pub fn sample_source(&self, n: usize, rng: &mut SessionRng) -> Result<Tensor> {
        let z = self.draw_base(n, rng)?;
        Ok(self.stack_a.inverse_values(&self.params, &z)?.0)
    }

    pub fn sample_target(&self, n: usize, rng: &mut SessionRng) -> Result<Tensor> {
        let z = self.draw_base(n, rng)?;
        match self.mode {
            Mode::Triangle => Ok(self.stack_b.inverse_values(&self.params, &z)?.0),
            Mode::Chained => {
                let x = self.stack_a.inverse_values(&self.params, &z)?.0;
                Ok(self.stack_b.forward_values(&self.params, &x)?.0)
            }
        }
    }

    fn draw_base(&self, n: usize, rng: &mut SessionRng) -> Result<Tensor> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample count must be at least 1".into()));
        }
        Ok(self.base.sample(rng, n))
    }

    /// Checkpoint JSON: mode, both architectures, and the full parameter store.
    pub fn to_checkpoint_json(&self) -> Result<String> {
        let doc = CheckpointDoc {
            format_version: PARAMS_FORMAT_VERSION,
            mode: self.mode,
            arch_a: self.stack_a.arch().clone(),
            arch_b: self.stack_b.arch().clone(),
            params: self.params.to_document()?,
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self> {
        let doc: CheckpointDoc<crate::diffengine::ParamsIn> =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if doc.format_version != PARAMS_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format_version {}",
                doc.format_version
            )));
        }
        let params = ParamStore::from_document(doc.params)?;
        Self::from_params(doc.mode, &doc.arch_a, &doc.arch_b, params)
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use rand::Rng;

    use super::*;
    use crate::diffengine::{session_rng, standard_normal};

    fn small_arch(kind: &str) -> FlowArch {
        let mut a = if kind == "rqs" { FlowArch::rqs(2) } else { FlowArch::realnvp(2) };
        a.blocks = 4;
        a.hidden = vec![16, 16];
        a
    }

    fn perturbed(mode: Mode, kind: &str, seed: u64) -> PushforwardModel {
        let arch = small_arch(kind);
        let mut m = PushforwardModel::new(mode, &arch, &arch, &mut session_rng(seed)).unwrap();
        let mut rng = session_rng(seed + 100);
        let paths: Vec<String> = m.params().paths().cloned().collect();
        for p in paths {
            let mut t = m.params().get(&p).unwrap().clone();
            t.data_mut().iter_mut().for_each(|v| *v += 0.3 * rng.random_range(-1.0..1.0));
            m.params_mut().set(&p, t).unwrap();
        }
        m
    }

    #[test]
    fn orientation_from_pairs() {
        let x = standard_normal(&mut session_rng(4), 50, 2);
        let rows = |f: &dyn Fn(&[f64]) -> Vec<f64>| Tensor::from_rows(&x.to_rows().iter().map(|r| f(r)).collect::<Vec<_>>()).unwrap();
        let rot = rows(&|p| vec![p[0] - p[1], p[0] + p[1]]);
        assert_eq!(paired_orientation_reversed(&x, &rot).unwrap(), Some(false));
        let swap = rows(&|p| vec![p[1].exp() + (6.0 * p[0]).sin(), p[0]]);
        assert_eq!(paired_orientation_reversed(&x, &swap).unwrap(), Some(true));
        let few = x.select_rows(&[0, 1]);
        assert_eq!(paired_orientation_reversed(&few, &few).unwrap(), None);
    }

    #[test]
    fn reflected_stack_reverses_orientation() {
        let mut arch = FlowArch::rqs(2);
        arch.reflect = true;
        let m = PushforwardModel::new(Mode::Chained, &FlowArch::rqs(2), &arch, &mut session_rng(1)).unwrap();
        let x = Tensor::from_rows(&[vec![1.0, -2.0]]).unwrap();
        assert_eq!(m.map_forward(&x).unwrap().data(), &[-2.0, 1.0]);
        let tri = PushforwardModel::new(Mode::Triangle, &FlowArch::rqs(2), &arch, &mut session_rng(1)).unwrap();
        assert_eq!(tri.map_forward(&x).unwrap().data(), &[-2.0, 1.0]);
        let json = tri.to_checkpoint_json().unwrap();
        assert!(json.contains("\"reflect\":true"));
        assert_eq!(PushforwardModel::from_checkpoint_json(&json).unwrap(), tri);
    }

    #[test]
    fn identity_model_tasks() {
        for mode in [Mode::Triangle, Mode::Chained] {
            let m = PushforwardModel::new(mode, &FlowArch::rqs(2), &FlowArch::rqs(2), &mut session_rng(1)).unwrap();
            let x = standard_normal(&mut session_rng(2), 100, 2);
            assert!(m.map_forward(&x).unwrap().max_abs_diff(&x) < 1e-12);
            assert!(m.map_inverse(&x).unwrap().max_abs_diff(&x) < 1e-12);
            let origin = Tensor::zeros(&[1, 2]);
            assert!((m.loglik_target(&origin).unwrap()[0] + (2.0 * PI).ln()).abs() < 1e-12);
            assert!((m.loglik_source(&origin).unwrap()[0] + (2.0 * PI).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn modes_agree_at_identity() {
        let arch = FlowArch::realnvp(2);
        let t = PushforwardModel::new(Mode::Triangle, &arch, &arch, &mut session_rng(4)).unwrap();
        let c = PushforwardModel::new(Mode::Chained, &arch, &arch, &mut session_rng(4)).unwrap();
        let x = standard_normal(&mut session_rng(5), 64, 2);
        assert_eq!(t.map_forward(&x).unwrap(), c.map_forward(&x).unwrap());
        assert_eq!(t.map_inverse(&x).unwrap(), c.map_inverse(&x).unwrap());
        assert_eq!(t.loglik_source(&x).unwrap(), c.loglik_source(&x).unwrap());
        assert_eq!(t.loglik_target(&x).unwrap(), c.loglik_target(&x).unwrap());
        assert_eq!(
            t.sample_target(32, &mut session_rng(6)).unwrap(),
            c.sample_target(32, &mut session_rng(6)).unwrap()
        );
        assert_eq!(
            t.sample_source(32, &mut session_rng(6)).unwrap(),
            c.sample_source(32, &mut session_rng(6)).unwrap()
        );
    }

    #[test]
    fn chained_matches_triangle_when_stack_b_is_identity() {
        let arch = small_arch("rqs");
        let mut t = perturbed(Mode::Triangle, "rqs", 7);
        let mut c = PushforwardModel::new(Mode::Chained, &arch, &arch, &mut session_rng(0)).unwrap();
        // Copy stack_a into both and make Triangle's stack_b equal stack_a, so both target likelihoods reduce to the source one.
        let a_paths: Vec<String> = t.params().paths().filter(|p| p.starts_with("a/")).cloned().collect();
        for p in &a_paths {
            let v = t.params().get(p).unwrap().clone();
            c.params_mut().set(p, v.clone()).unwrap();
            t.params_mut().set(&format!("b/{}", &p[2..]), v).unwrap();
        }
        let x = standard_normal(&mut session_rng(8), 50, 2);
        let lt = t.loglik_target(&x).unwrap();
        let lc = c.loglik_target(&x).unwrap();
        let ls = c.loglik_source(&x).unwrap();
        for i in 0..50 {
            assert!((lt[i] - lc[i]).abs() < 1e-12);
            assert!((ls[i] - lc[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn cycle_consistency_both_modes() {
        for (mode, kind) in [(Mode::Triangle, "rqs"), (Mode::Chained, "rqs"), (Mode::Triangle, "realnvp"), (Mode::Chained, "realnvp")] {
            let m = perturbed(mode, kind, 11);
            let x = standard_normal(&mut session_rng(12), 10_000, 2);
            let back = m.map_inverse(&m.map_forward(&x).unwrap()).unwrap();
            assert!(back.max_abs_diff(&x) < 1e-5, "{mode:?} {kind}: {}", back.max_abs_diff(&x));
        }
    }

    #[test]
    fn pushforward_density_consistency() {
        for mode in [Mode::Triangle, Mode::Chained] {
            let m = perturbed(mode, "rqs", 21);
            let x = standard_normal(&mut session_rng(22), 200, 2);
            let (y, ld) = m.map_forward_with_logdet(&x).unwrap();
            let ls = m.loglik_source(&x).unwrap();
            let lt = m.loglik_target(&y).unwrap();
            for i in 0..200 {
                assert!((ls[i] - (lt[i] + ld[i])).abs() < 1e-6, "{mode:?}: {} vs {}", ls[i], lt[i] + ld[i]);
            }
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let m = perturbed(Mode::Chained, "realnvp", 31);
        let a = m.sample_target(100, &mut session_rng(3)).unwrap();
        let b = m.sample_target(100, &mut session_rng(3)).unwrap();
        assert_eq!(a, b);
        assert!(m.sample_source(0, &mut session_rng(3)).is_err());
    }

    #[test]
    fn identity_sample_target_is_standard_normal() {
        let m = PushforwardModel::new(Mode::Triangle, &FlowArch::rqs(2), &FlowArch::rqs(2), &mut session_rng(1)).unwrap();
        let s = m.sample_target(50_000, &mut session_rng(2)).unwrap();
        let (mean, std) = moments(&s).unwrap();
        for j in 0..2 {
            assert!(mean[j].abs() < 0.03 && (std[j] - 1.0).abs() < 0.03);
        }
    }

    #[test]
    fn standardize_moment_matches() {
        for mode in [Mode::Triangle, Mode::Chained] {
            let arch = small_arch("rqs");
            let mut m = PushforwardModel::new(mode, &arch, &arch, &mut session_rng(1)).unwrap();
            let mut src = standard_normal(&mut session_rng(2), 500, 2);
            src.data_mut().iter_mut().for_each(|v| *v = 3.0 * *v + 1.0);
            let mut tgt = standard_normal(&mut session_rng(3), 500, 2);
            tgt.data_mut().iter_mut().for_each(|v| *v = 0.5 * *v - 2.0);
            m.standardize(&src, &tgt).unwrap();
            let mapped = m.map_forward(&src).unwrap();
            let (mm, sm) = moments(&mapped).unwrap();
            let (mt, st) = moments(&tgt).unwrap();
            for j in 0..2 {
                assert!((mm[j] - mt[j]).abs() < 1e-9 && (sm[j] - st[j]).abs() < 1e-9, "{mode:?}");
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        for mode in [Mode::Triangle, Mode::Chained] {
            let m = perturbed(mode, "rqs", 41);
            let text = m.to_checkpoint_json().unwrap();
            assert!(text.starts_with(r#"{"format_version":1,"mode":""#));
            let back = PushforwardModel::from_checkpoint_json(&text).unwrap();
            assert_eq!(back, m);
            assert_eq!(back.to_checkpoint_json().unwrap(), text);
        }
    }

    #[test]
    fn checkpoint_rejects_missing_parameters() {
        let m = perturbed(Mode::Triangle, "realnvp", 1);
        let text = m.to_checkpoint_json().unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["params"]["params"].as_object_mut().unwrap().remove("a/affine_in/shift");
        let broken = serde_json::to_string(&v).unwrap();
        assert!(matches!(
            PushforwardModel::from_checkpoint_json(&broken),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let r = PushforwardModel::new(Mode::Triangle, &FlowArch::rqs(2), &FlowArch::rqs(3), &mut session_rng(0));
        assert!(matches!(r, Err(Error::DimensionMismatch(_))));
        let m = PushforwardModel::new(Mode::Triangle, &FlowArch::rqs(2), &FlowArch::rqs(2), &mut session_rng(0)).unwrap();
        assert!(m.map_forward(&Tensor::zeros(&[4, 3])).is_err());
    }
}
