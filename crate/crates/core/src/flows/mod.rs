//! Invertible layers with tractable log-determinants and the stacks built
//! from them.
//!
//! Every stack starts with an elementwise affine layer followed by coupling
//! blocks (RealNVP or rational-quadratic spline) that alternate halves via a
//! coordinate swap. Freshly built stacks are exactly the identity map.

mod layers;
mod mlp;
mod spline;
mod stack;

pub use layers::{AffineElementwise, Bijector, Coupling, CouplingTransform, PermuteSwap, Transpose, REALNVP_SCALE_CLAMP};
pub use mlp::Mlp;
pub use spline::{rq_spline, MIN_BIN_HEIGHT, MIN_BIN_WIDTH, MIN_DERIVATIVE};
pub use stack::{
    build_flow, log_prob, log_prob_on_tape, sample, BaseDensity, FlowArch, FlowKind, FlowStack, DEFAULT_BINS,
    DEFAULT_TAIL,
};
pub(crate) use stack::{eval_frozen, eval_rows};

#[cfg(test)]
mod tests {
    use std::f64::consts::{LN_2, PI};

    use rand::Rng;

    use super::*;
    use crate::diffengine::{session_rng, standard_normal, ParamStore, Tape, Tensor};

    fn perturb(store: &mut ParamStore, seed: u64, scale: f64) {
        let mut rng = session_rng(seed);
        let paths: Vec<String> = store.paths().cloned().collect();
        for p in paths {
            let mut t = store.get(&p).unwrap().clone();
            for v in t.data_mut() {
                *v += scale * rng.random_range(-1.0..1.0);
            }
            store.set(&p, t).unwrap();
        }
    }

    fn affine_stack(s: [f64; 2], t: [f64; 2]) -> (FlowStack, ParamStore) {
        let mut store = ParamStore::new();
        let stack = build_flow(&FlowArch::affine(2), "f", &mut session_rng(0), &mut store).unwrap();
        store.set("f/affine_in/log_scale", Tensor::vector(s.to_vec())).unwrap();
        store.set("f/affine_in/shift", Tensor::vector(t.to_vec())).unwrap();
        (stack, store)
    }

    fn random_points(seed: u64, n: usize, scale: f64) -> Tensor {
        let mut z = standard_normal(&mut session_rng(seed), n, 2);
        z.data_mut().iter_mut().for_each(|v| *v *= scale);
        z
    }

    #[test]
    fn fresh_stacks_are_identity() {
        for arch in [FlowArch::realnvp(2), FlowArch::rqs(2)] {
            let mut store = ParamStore::new();
            let stack = build_flow(&arch, "f", &mut session_rng(3), &mut store).unwrap();
            let x = random_points(1, 200, 2.0);
            let (y, ld) = stack.forward_values(&store, &x).unwrap();
            assert!(y.max_abs_diff(&x) < 1e-12, "{:?} {}", arch.kind, y.max_abs_diff(&x));
            assert!(ld.iter().all(|v| v.abs() < 1e-12));
            let (xi, ldi) = stack.inverse_values(&store, &x).unwrap();
            assert!(xi.max_abs_diff(&x) < 1e-12);
            assert!(ldi.iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn stack_layout_alternates_with_swaps() {
        let stack = FlowStack::layout(&FlowArch::rqs(2), "f", false).unwrap();
        let kinds: Vec<_> = stack
            .layers()
            .iter()
            .map(|l| match l {
                Bijector::Affine(_) => 'a',
                Bijector::RqSpline(_) => 's',
                Bijector::PermuteSwap(_) => 'p',
                Bijector::RealNvp(_) => 'r',
                Bijector::Transpose(_) => 't',
            })
            .collect();
        assert_eq!(kinds.into_iter().collect::<String>(), format!("as{}p", "ps".repeat(7)));
    }

    #[test]
    fn conditioner_output_widths() {
        let stack = FlowStack::layout(&FlowArch::rqs(2), "f", false).unwrap();
        let Bijector::RqSpline(c) = &stack.layers()[1] else { panic!() };
        assert_eq!(c.conditioner().widths(), &[1, 32, 32, 32, 32, 23]);
        let stack = FlowStack::layout(&FlowArch::realnvp(4), "f", false).unwrap();
        let Bijector::RealNvp(c) = &stack.layers()[1] else { panic!() };
        assert_eq!(c.conditioner().output_dim(), 4);
    }

    #[test]
    fn coupling_needs_two_dims() {
        let mut store = ParamStore::new();
        let r = build_flow(&FlowArch::realnvp(1), "f", &mut session_rng(0), &mut store);
        assert!(matches!(r, Err(crate::Error::InvalidArch(_))));
        assert!(build_flow(&FlowArch::affine(1), "g", &mut session_rng(0), &mut store).is_ok());
    }

    #[test]
    fn affine_hand_example() {
        let (stack, store) = affine_stack([LN_2, 0.0], [0.0, 1.0]);
        let x = Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let (y, ld) = stack.forward_values(&store, &x).unwrap();
        assert!((y.data()[0] - 2.0).abs() < 1e-15 && (y.data()[1] - 2.0).abs() < 1e-15);
        assert!((ld[0] - LN_2).abs() < 1e-15);
        let (xi, ldi) = stack.inverse_values(&store, &y).unwrap();
        assert!(xi.max_abs_diff(&x) < 1e-15);
        assert!((ldi[0] + LN_2).abs() < 1e-15);
    }

    #[test]
    fn gaussian_log_prob_values() {
        let mut store = ParamStore::new();
        let stack = build_flow(&FlowArch::rqs(2), "f", &mut session_rng(0), &mut store).unwrap();
        let x = Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let lp = log_prob(&stack, &BaseDensity::new(2), &store, &x).unwrap();
        assert!((lp[0] + (2.0 * PI).ln()).abs() < 1e-12);
        assert!((lp[1] + (2.0 * PI).ln() + 0.5).abs() < 1e-12);
    }

    fn gaussian_log_pdf(x: &[f64], m: [f64; 2], sigma: f64) -> f64 {
        let q: f64 = x.iter().zip(m).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / (sigma * sigma);
        -0.5 * q - (2.0 * PI).ln() - 2.0 * sigma.ln()
    }

    #[test]
    fn affine_log_prob_is_closed_form_gaussian() {
        let t = [0.7, -1.3];
        let x = random_points(9, 50, 3.0);
        let base = BaseDensity::new(2);
        // Sampling direction x = 2z + t: the induced law is N(t, 4I).
        let (stack, store) = affine_stack([-LN_2, -LN_2], [-t[0] / 2.0, -t[1] / 2.0]);
        let lp = log_prob(&stack, &base, &store, &x).unwrap();
        for (i, row) in x.to_rows().iter().enumerate() {
            let expect = gaussian_log_pdf(row, t, 2.0);
            assert!(((lp[i] - expect) / expect).abs() < 1e-10, "{} vs {}", lp[i], expect);
        }
        // Density direction z = 2x + t: the induced law is N(-t/2, I/4).
        let (stack, store) = affine_stack([LN_2, LN_2], t);
        let lp = log_prob(&stack, &base, &store, &x).unwrap();
        for (i, row) in x.to_rows().iter().enumerate() {
            let expect = gaussian_log_pdf(row, [-t[0] / 2.0, -t[1] / 2.0], 0.5);
            assert!(((lp[i] - expect) / expect).abs() < 1e-10, "{} vs {}", lp[i], expect);
        }
    }

    #[test]
    fn sample_mean_follows_the_shift() {
        let base = BaseDensity::new(2);
        let mean_of = |stack: &FlowStack, store: &ParamStore| {
            let s = sample(stack, &base, store, 20_000, &mut session_rng(4)).unwrap();
            let n = s.rows() as f64;
            let rows = s.to_rows();
            [0, 1].map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n)
        };
        // Sampling runs the inverse, x = z - t, so t = (-5, 3) centres samples at (5, -3).
        let (stack, store) = affine_stack([0.0, 0.0], [-5.0, 3.0]);
        let m = mean_of(&stack, &store);
        assert!((m[0] - 5.0).abs() < 0.05 && (m[1] + 3.0).abs() < 0.05, "{m:?}");
        let (stack, store) = affine_stack([0.0, 0.0], [5.0, -3.0]);
        let m = mean_of(&stack, &store);
        assert!((m[0] + 5.0).abs() < 0.05 && (m[1] - 3.0).abs() < 0.05, "{m:?}");
    }

    #[test]
    fn identity_sample_moments() {
        let mut store = ParamStore::new();
        let stack = build_flow(&FlowArch::rqs(2), "f", &mut session_rng(0), &mut store).unwrap();
        let s = sample(&stack, &BaseDensity::new(2), &store, 100_000, &mut session_rng(11)).unwrap();
        let n = s.rows() as f64;
        for j in 0..2 {
            let col: Vec<f64> = s.to_rows().iter().map(|r| r[j]).collect();
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 0.02, "mean {mean}");
            assert!((var - 1.0).abs() < 0.03, "var {var}");
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let mut store = ParamStore::new();
        let stack = build_flow(&FlowArch::realnvp(2), "f", &mut session_rng(0), &mut store).unwrap();
        perturb(&mut store, 2, 0.2);
        let base = BaseDensity::new(2);
        let a = sample(&stack, &base, &store, 64, &mut session_rng(5)).unwrap();
        let b = sample(&stack, &base, &store, 64, &mut session_rng(5)).unwrap();
        assert_eq!(a, b);
        assert!(sample(&stack, &base, &store, 0, &mut session_rng(5)).is_err());
    }

    #[test]
    fn build_is_deterministic() {
        for arch in [FlowArch::realnvp(2), FlowArch::rqs(2)] {
            let mut a = ParamStore::new();
            let mut b = ParamStore::new();
            build_flow(&arch, "f", &mut session_rng(8), &mut a).unwrap();
            build_flow(&arch, "f", &mut session_rng(8), &mut b).unwrap();
            assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        }
    }

    fn check_round_trip(arch: FlowArch, seed: u64, scale: f64) {
        let mut store = ParamStore::new();
        let stack = build_flow(&arch, "f", &mut session_rng(seed), &mut store).unwrap();
        perturb(&mut store, seed + 1, scale);
        let x = random_points(seed + 2, 10_000, 1.5);
        let (z, ld_f) = stack.forward_values(&store, &x).unwrap();
        let (xr, ld_i) = stack.inverse_values(&store, &z).unwrap();
        assert!(xr.max_abs_diff(&x) < 1e-5, "{:?}: {}", arch.kind, xr.max_abs_diff(&x));
        for (a, b) in ld_f.iter().zip(&ld_i) {
            assert!((a + b).abs() < 1e-8, "{a} {b}");
        }
        let (xf, _) = stack.inverse_values(&store, &x).unwrap();
        let (xb, _) = stack.forward_values(&store, &xf).unwrap();
        assert!(xb.max_abs_diff(&x) < 1e-5);
    }

    #[test]
    fn realnvp_round_trip() {
        check_round_trip(FlowArch::realnvp(2), 20, 0.3);
    }

    #[test]
    fn rqs_round_trip() {
        check_round_trip(FlowArch::rqs(2), 30, 0.3);
    }

    #[test]
    fn realnvp_round_trip_higher_dim() {
        let mut arch = FlowArch::realnvp(5);
        arch.blocks = 3;
        let mut store = ParamStore::new();
        let stack = build_flow(&arch, "f", &mut session_rng(1), &mut store).unwrap();
        perturb(&mut store, 2, 0.3);
        let x = standard_normal(&mut session_rng(3), 500, 5);
        let (z, _) = stack.forward_values(&store, &x).unwrap();
        let (xr, _) = stack.inverse_values(&store, &z).unwrap();
        assert!(xr.max_abs_diff(&x) < 1e-5);
    }

    fn fd_logdet(stack: &FlowStack, store: &ParamStore, x: [f64; 2]) -> f64 {
        let h = 1e-6;
        let mut jac = [[0.0; 2]; 2];
        for j in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let t = Tensor::from_rows(&[xp.to_vec(), xm.to_vec()]).unwrap();
            let (y, _) = stack.forward_values(store, &t).unwrap();
            for i in 0..2 {
                jac[i][j] = (y.row(0)[i] - y.row(1)[i]) / (2.0 * h);
            }
        }
        (jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0]).abs().ln()
    }

    #[test]
    fn logdet_matches_finite_difference_jacobian() {
        for arch in [FlowArch::realnvp(2), FlowArch::rqs(2)] {
            let mut store = ParamStore::new();
            let stack = build_flow(&arch, "f", &mut session_rng(6), &mut store).unwrap();
            perturb(&mut store, 7, 0.3);
            let x = random_points(8, 20, 1.0);
            let (_, ld) = stack.forward_values(&store, &x).unwrap();
            for (i, row) in x.to_rows().iter().enumerate() {
                let fd = fd_logdet(&stack, &store, [row[0], row[1]]);
                assert!((fd - ld[i]).abs() < 1e-5, "{:?}: {fd} vs {}", arch.kind, ld[i]);
            }
        }
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut arch = FlowArch::rqs(2);
        arch.blocks = 2;
        arch.hidden = vec![8, 8];
        let mut store = ParamStore::new();
        let stack = build_flow(&arch, "f", &mut session_rng(12), &mut store).unwrap();
        perturb(&mut store, 13, 0.3);
        let base = BaseDensity::new(2);
        let x = random_points(14, 16, 1.0);
        let mean_lp = |s: &ParamStore| -> f64 {
            let lp = log_prob(&stack, &base, s, &x).unwrap();
            lp.iter().sum::<f64>() / lp.len() as f64
        };

        let mut tape = Tape::new();
        let binds = store.bind(&mut tape, &[]).unwrap();
        let xv = tape.constant(x.clone()).unwrap();
        let lp = log_prob_on_tape(&stack, &base, &mut tape, &binds, xv).unwrap();
        let loss = tape.mean(lp).unwrap();
        let grads = tape.backward(loss).unwrap();
        store.accumulate_grads(&binds, &grads).unwrap();

        let h = 1e-5;
        let paths: Vec<String> = store.paths().cloned().collect();
        let mut checked = 0;
        for p in paths {
            let analytic = store.param(&p).unwrap().grad.clone().unwrap();
            let base_val = store.get(&p).unwrap().clone();
            for k in (0..base_val.numel()).step_by(5) {
                let mut plus = store.clone();
                let mut minus = store.clone();
                let mut tp = base_val.clone();
                tp.data_mut()[k] += h;
                plus.set(&p, tp).unwrap();
                let mut tm = base_val.clone();
                tm.data_mut()[k] -= h;
                minus.set(&p, tm).unwrap();
                let fd = (mean_lp(&plus) - mean_lp(&minus)) / (2.0 * h);
                let a = analytic.data()[k];
                let scale = a.abs().max(fd.abs());
                assert!((a - fd).abs() <= 1e-4 * scale + 1e-8, "{p}[{k}]: {a} vs {fd}");
                checked += 1;
            }
        }
        assert!(checked > 50);
    }

    #[test]
    fn arch_descriptor_json() {
        let arch = FlowArch::rqs(2);
        let text = serde_json::to_string(&arch).unwrap();
        assert_eq!(text, r#"{"kind":"rqs","blocks":8,"hidden":[32,32,32,32],"d":2,"bins":8,"tail":3.0}"#);
        let back: FlowArch = serde_json::from_str(&text).unwrap();
        assert_eq!(back, arch);
        let nvp: FlowArch = serde_json::from_str(r#"{"kind":"realnvp","blocks":2,"hidden":[4],"d":3}"#).unwrap();
        assert_eq!(nvp.kind, FlowKind::Realnvp);
        assert!(serde_json::from_str::<FlowArch>(r#"{"kind":"maf","blocks":2,"hidden":[4],"d":3}"#).is_err());
    }
}
