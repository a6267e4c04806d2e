//! Monotone rational-quadratic splines on `[-B, B]` with identity tails.
//!
//! Each transformed coordinate gets `3K - 1` unconstrained values from the
//! conditioner: `K` bin widths, `K` bin heights and `K - 1` interior knot
//! derivatives. Boundary derivatives are fixed to 1 so the spline joins the
//! identity tails smoothly. With all-zero inputs the spline is the identity.

use crate::diffengine::{Tape, Tensor, Var};
use crate::Result;

pub const MIN_BIN_WIDTH: f64 = 1e-3;
pub const MIN_BIN_HEIGHT: f64 = 1e-3;
pub const MIN_DERIVATIVE: f64 = 1e-3;

/// Knot positions, knot values and knot derivatives, each `[n, K + 1]`.
struct Knots {
    xs: Var,
    ys: Var,
    ds: Var,
}

fn cumulative_knots(tape: &mut Tape, raw: Var, bins: usize, bound: f64, min_bin: f64) -> Result<Var> {
    let n = tape.value(raw)?.rows();
    let w = tape.softmax_last(raw)?;
    let w = tape.scale(w, 1.0 - min_bin * bins as f64)?;
    let w = tape.shift(w, min_bin)?;
    let cw = tape.cumsum_last(w)?;
    let zero = tape.constant(Tensor::zeros(&[n, 1]))?;
    let cw = tape.concat_last(&[zero, cw])?;
    let cw = tape.scale(cw, 2.0 * bound)?;
    Ok(tape.shift(cw, -bound)?)
}

fn knots(tape: &mut Tape, raw: Var, bins: usize, bound: f64) -> Result<Knots> {
    let n = tape.value(raw)?.rows();
    let parts = tape.split_last(raw, &[bins, bins, bins - 1])?;
    let xs = cumulative_knots(tape, parts[0], bins, bound, MIN_BIN_WIDTH)?;
    let ys = cumulative_knots(tape, parts[1], bins, bound, MIN_BIN_HEIGHT)?;
    // softplus(u + c) = 1 - MIN_DERIVATIVE at u = 0
    let c = (1.0 - MIN_DERIVATIVE).exp_m1().ln();
    let d = tape.shift(parts[2], c)?;
    let d = tape.softplus(d)?;
    let d = tape.shift(d, MIN_DERIVATIVE)?;
    let one = tape.constant(Tensor::ones(&[n, 1]))?;
    let ds = tape.concat_last(&[one, d, one])?;
    Ok(Knots { xs, ys, ds })
}

/// Bin index per row: the last knot `<= v`, clamped to `0..K`.
fn locate(knots: &Tensor, v: &[f64]) -> Vec<usize> {
    let w = knots.last_dim();
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let row = knots.row(i);
            let mut k = 0;
            while k + 2 < w && row[k + 1] <= x {
                k += 1;
            }
            k
        })
        .collect()
}

struct Bin {
    xk: Var,
    wk: Var,
    yk: Var,
    hk: Var,
    dk: Var,
    dk1: Var,
    slope: Var,
}

fn gather_bin(tape: &mut Tape, k: &Knots, idx: &[usize]) -> Result<Bin> {
    let next: Vec<usize> = idx.iter().map(|i| i + 1).collect();
    let xk = tape.gather_last(k.xs, idx)?;
    let xk1 = tape.gather_last(k.xs, &next)?;
    let yk = tape.gather_last(k.ys, idx)?;
    let yk1 = tape.gather_last(k.ys, &next)?;
    let dk = tape.gather_last(k.ds, idx)?;
    let dk1 = tape.gather_last(k.ds, &next)?;
    let wk = tape.sub(xk1, xk)?;
    let hk = tape.sub(yk1, yk)?;
    let slope = tape.div(hk, wk)?;
    Ok(Bin {
        xk,
        wk,
        yk,
        hk,
        dk,
        dk1,
        slope,
    })
}

/// log dy/dx of the bin's rational quadratic at relative position `xi`.
fn log_derivative(tape: &mut Tape, b: &Bin, xi: Var) -> Result<Var> {
    let xi2 = tape.square(xi)?;
    let om = tape.sub(xi, xi2)?; // xi (1 - xi)
    let one_minus = tape.neg(xi)?;
    let one_minus = tape.shift(one_minus, 1.0)?;
    let one_minus2 = tape.square(one_minus)?;
    // numerator: s^2 (d_{k+1} xi^2 + 2 s xi(1-xi) + d_k (1-xi)^2)
    let t1 = tape.mul(b.dk1, xi2)?;
    let t2 = tape.mul(b.slope, om)?;
    let t2 = tape.scale(t2, 2.0)?;
    let t3 = tape.mul(b.dk, one_minus2)?;
    let inner = tape.add(t1, t2)?;
    let inner = tape.add(inner, t3)?;
    let den = denominator(tape, b, om)?;
    let log_s = tape.log(b.slope)?;
    let log_inner = tape.log(inner)?;
    let log_den = tape.log(den)?;
    let a = tape.scale(log_s, 2.0)?;
    let a = tape.add(a, log_inner)?;
    let c = tape.scale(log_den, 2.0)?;
    Ok(tape.sub(a, c)?)
}

/// s + (d_{k+1} + d_k - 2 s) xi (1 - xi)
fn denominator(tape: &mut Tape, b: &Bin, om: Var) -> Result<Var> {
    let sum_d = slope_excess(tape, b)?;
    let t = tape.mul(sum_d, om)?;
    Ok(tape.add(b.slope, t)?)
}

/// d_{k+1} + d_k - 2 s
fn slope_excess(tape: &mut Tape, b: &Bin) -> Result<Var> {
    let sum_d = tape.add(b.dk1, b.dk)?;
    let two_s = tape.scale(b.slope, 2.0)?;
    Ok(tape.sub(sum_d, two_s)?)
}

/// Applies the spline (or its inverse) to the column `x` (`[n]`) given the
/// conditioner output `raw` (`[n, 3K - 1]`). Returns `(y, logdet)`, both `[n]`.
pub fn rq_spline(tape: &mut Tape, x: Var, raw: Var, bins: usize, bound: f64, inverse: bool) -> Result<(Var, Var)> {
    let xv = tape.value(x)?.data().to_vec();
    let n = xv.len();
    let inside: Vec<f64> = xv
        .iter()
        .map(|v| if v.abs() <= bound { 1.0 } else { 0.0 })
        .collect();
    let mask = tape.constant(Tensor::vector(inside.clone()))?;
    let outside = tape.constant(Tensor::vector(inside.iter().map(|m| 1.0 - m).collect()))?;
    // tail points are evaluated at 0 and then discarded by the mask
    let x_in = tape.mul(x, mask)?;
    let x_in_vals: Vec<f64> = xv.iter().zip(&inside).map(|(v, m)| v * m).collect();

    let k = knots(tape, raw, bins, bound)?;
    let (y_in, ld) = if inverse {
        let idx = locate(tape.value(k.ys)?, &x_in_vals);
        let b = gather_bin(tape, &k, &idx)?;
        let dy = tape.sub(x_in, b.yk)?;
        let excess = slope_excess(tape, &b)?;
        let dy_ex = tape.mul(dy, excess)?;
        let s_minus_d = tape.sub(b.slope, b.dk)?;
        let qa = tape.mul(b.hk, s_minus_d)?;
        let qa = tape.add(qa, dy_ex)?;
        let qb = tape.mul(b.hk, b.dk)?;
        let qb = tape.sub(qb, dy_ex)?;
        let qc = tape.mul(b.slope, dy)?;
        let qc = tape.neg(qc)?;
        let qb2 = tape.square(qb)?;
        let ac = tape.mul(qa, qc)?;
        let ac4 = tape.scale(ac, 4.0)?;
        let disc = tape.sub(qb2, ac4)?;
        let root = tape.sqrt(disc)?;
        let den = tape.add(qb, root)?;
        let den = tape.neg(den)?;
        let num = tape.scale(qc, 2.0)?;
        let xi = tape.div(num, den)?;
        let off = tape.mul(xi, b.wk)?;
        let out = tape.add(off, b.xk)?;
        let ld = log_derivative(tape, &b, xi)?;
        (out, tape.neg(ld)?)
    } else {
        let idx = locate(tape.value(k.xs)?, &x_in_vals);
        let b = gather_bin(tape, &k, &idx)?;
        let dx = tape.sub(x_in, b.xk)?;
        let xi = tape.div(dx, b.wk)?;
        let xi2 = tape.square(xi)?;
        let om = tape.sub(xi, xi2)?;
        let t1 = tape.mul(b.slope, xi2)?;
        let t2 = tape.mul(b.dk, om)?;
        let num = tape.add(t1, t2)?;
        let num = tape.mul(b.hk, num)?;
        let den = denominator(tape, &b, om)?;
        let frac = tape.div(num, den)?;
        let out = tape.add(b.yk, frac)?;
        let ld = log_derivative(tape, &b, xi)?;
        (out, ld)
    };
    debug_assert_eq!(tape.value(y_in)?.numel(), n);

    let y_spline = tape.mul(y_in, mask)?;
    let y_tail = tape.mul(x, outside)?;
    let y = tape.add(y_spline, y_tail)?;
    let logdet = tape.mul(ld, mask)?;
    Ok((y, logdet))
}
