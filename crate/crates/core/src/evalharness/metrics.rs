use std::f64::consts::FRAC_PI_4;

use crate::datagen::{mog_density, MOG_LINEAR_SCALE, MOG_LINEAR_SHIFT};
use crate::diffengine::Tensor;
use crate::pushforward::PushforwardModel;
use crate::{Error, Result};

/// Mean over rows of the squared Euclidean error between `mapped` and `target`.
pub fn map_mse(mapped: &Tensor, target: &Tensor) -> Result<f64> {
    if mapped.shape() != target.shape() {
        return Err(Error::DimensionMismatch(format!(
            "mapped {:?} vs target {:?}",
            mapped.shape(),
            target.shape()
        )));
    }
    let n = mapped.rows();
    if n == 0 {
        return Err(Error::EmptyBatch("test pairs"));
    }
    let sq: f64 = mapped.data().iter().zip(target.data()).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(sq / n as f64)
}

/// [`map_mse`] of a map applied to test sources.
pub fn map_mse_of<F>(map: F, source: &Tensor, target: &Tensor) -> Result<f64>
where
    F: FnOnce(&Tensor) -> Result<Tensor>,
{
    if source.rows() == 0 {
        return Err(Error::EmptyBatch("test pairs"));
    }
    map_mse(&map(source)?, target)
}

/// Source-space preimage under the MoG linear map.
pub fn mog_linear_inverse(y: [f64; 2]) -> [f64; 2] {
    let u = (y[0] - MOG_LINEAR_SHIFT[0]) / MOG_LINEAR_SCALE[0];
    let v = (y[1] - MOG_LINEAR_SHIFT[1]) / MOG_LINEAR_SCALE[1];
    let (s, c) = FRAC_PI_4.sin_cos();
    [c * u + s * v, -s * u + c * v]
}

/// Closed-form density of the MoG source pushed through the linear map.
pub fn true_target_density_mog_linear(y: [f64; 2]) -> f64 {
    let jac = (MOG_LINEAR_SCALE[0] * MOG_LINEAR_SCALE[1]).abs();
    mog_density(mog_linear_inverse(y)) / jac
}

/// Mean over points of the squared relative error of the model density.
pub fn likelihood_rel_mse<F>(model: &PushforwardModel, y: &Tensor, true_density: F) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let ll = model.loglik_target(y)?;
    relative_density_mse(&ll, y, true_density)
}

/// Squared relative error of `exp(loglik)` against `true_density`, averaged.
pub fn relative_density_mse<F>(loglik: &[f64], y: &Tensor, true_density: F) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    if loglik.is_empty() {
        return Err(Error::EmptyBatch("test points"));
    }
    let mut acc = 0.0;
    for (r, ll) in loglik.iter().enumerate() {
        let rho = true_density(y.row(r));
        if rho <= 0.0 {
            return Err(Error::InvalidArgument(format!("true density vanishes at test point {r}")));
        }
        acc += ((ll.exp() - rho) / rho).powi(2);
    }
    Ok(acc / loglik.len() as f64)
}
