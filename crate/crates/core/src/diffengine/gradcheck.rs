use super::{session_rng, EngineError, Tape, Tensor, Var};

use rand::Rng;

/// Central-difference step used by default.
pub const GRADCHECK_STEP: f64 = 1e-5;
/// Magnitude below which gradients are compared absolutely.
pub const GRADCHECK_FLOOR: f64 = 1e-8;

/// Worst disagreement found by [`grad_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// `(input, element)` of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// `|a - b| / max(|a|, |b|, GRADCHECK_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRADCHECK_FLOOR)
}

/// Compares the reverse-mode gradient of `f` against central differences
/// with step `h`, for every element of every input.
///
/// `f` may return a tensor of any shape; it is reduced to a scalar by a
/// fixed random weighting so that every output element matters.
pub fn grad_check<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradCheck, EngineError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, EngineError>,
{
    let weights: std::cell::RefCell<Option<Tensor>> = std::cell::RefCell::new(None);
    let eval = |tape: &mut Tape, vars: &[Var]| -> Result<Var, EngineError> {
        let out = f(tape, vars)?;
        let shape = tape.shape(out)?.to_vec();
        let w = weights
            .borrow_mut()
            .get_or_insert_with(|| {
                let mut rng = session_rng(0x9e37);
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
                Tensor::new(shape.clone(), data).expect("weight shape")
            })
            .clone();
        let wv = tape.constant(w)?;
        let prod = tape.mul(out, wv)?;
        tape.sum(prod)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone(), true))
        .collect::<Result<_, _>>()?;
    let loss = eval(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let value_at = |inputs: &[Tensor]| -> Result<f64, EngineError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .map(|t| tape.leaf(t.clone(), true))
            .collect::<Result<_, _>>()?;
        let loss = eval(&mut tape, &vars)?;
        tape.value(loss)?.item()
    };

    let mut report = GradCheck {
        max_rel_err: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut probe = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        for k in 0..inputs[i].numel() {
            let x0 = inputs[i].data()[k];
            probe[i].data_mut()[k] = x0 + h;
            let up = value_at(&probe)?;
            probe[i].data_mut()[k] = x0 - h;
            let down = value_at(&probe)?;
            probe[i].data_mut()[k] = x0;
            let fd = (up - down) / (2.0 * h);
            let err = relative_error(analytic.data()[k], fd);
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = (i, k);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
