//! Loss functions the optimizers can drive, plus a central-difference
//! gradient used to check them.

use crate::error::{Error, Result};
use crate::model::{self, Batch, Samples, SimilarityClassifier};
use crate::params::ParamVector;

/// A differentiable loss evaluated on one batch.
pub trait Objective {
    type Batch: Samples;

    fn loss(&self, params: &ParamVector, batch: &Self::Batch) -> Result<f64>;

    fn loss_and_grad(&self, params: &ParamVector, batch: &Self::Batch) -> Result<(f64, ParamVector)>;
}

impl Objective for SimilarityClassifier {
    type Batch = Batch;

    fn loss(&self, params: &ParamVector, batch: &Batch) -> Result<f64> {
        model::loss(params, batch, self)
    }

    fn loss_and_grad(&self, params: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
        model::loss_and_grad(params, batch, self)
    }
}

/// Batch for [`Quadratic`]: `L(theta) = curvature/2 * |theta - center|^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticBatch {
    pub center: Vec<f64>,
    pub curvature: f64,
    pub ids: Vec<u64>,
}

impl QuadraticBatch {
    pub fn new(center: Vec<f64>, curvature: f64, id: u64) -> Self {
        QuadraticBatch {
            center,
            curvature,
            ids: vec![id],
        }
    }
}

impl Samples for QuadraticBatch {
    fn sample_ids(&self) -> &[u64] {
        &self.ids
    }
}

/// Closed-form bowl surrogate used to pin optimizer arithmetic.
#[derive(Debug, Clone, Copy, Default)]
pub struct Quadratic;

impl Quadratic {
    fn check(params: &ParamVector, batch: &QuadraticBatch) -> Result<()> {
        if params.len() != batch.center.len() {
            return Err(Error::shape(format!(
                "{} parameters for a {}-dimensional bowl",
                params.len(),
                batch.center.len()
            )));
        }
        Ok(())
    }
}

impl Objective for Quadratic {
    type Batch = QuadraticBatch;

    fn loss(&self, params: &ParamVector, batch: &QuadraticBatch) -> Result<f64> {
        Quadratic::check(params, batch)?;
        let sq: f64 = params
            .values()
            .iter()
            .zip(&batch.center)
            .map(|(t, c)| (t - c) * (t - c))
            .sum();
        Ok(0.5 * batch.curvature * sq)
    }

    fn loss_and_grad(&self, params: &ParamVector, batch: &QuadraticBatch) -> Result<(f64, ParamVector)> {
        let l = self.loss(params, batch)?;
        let mut g = params.zeros_like();
        for ((gi, t), c) in g.values_mut().iter_mut().zip(params.values()).zip(&batch.center) {
            *gi = batch.curvature * (t - c);
        }
        Ok((l, g))
    }
}

/// Central differences of an arbitrary scalar function of the parameters.
pub fn central_difference<F>(params: &ParamVector, h: f64, mut f: F) -> Result<ParamVector>
where
    F: FnMut(&ParamVector) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::config(format!("step h must be positive, got {h}")));
    }
    let mut grad = params.zeros_like();
    let mut probe = params.clone();
    for k in 0..params.len() {
        let orig = params.values()[k];
        probe.values_mut()[k] = orig + h;
        let up = f(&probe)?;
        probe.values_mut()[k] = orig - h;
        let down = f(&probe)?;
        probe.values_mut()[k] = orig;
        grad.values_mut()[k] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// Coordinatewise `(L(theta + h e_k) - L(theta - h e_k)) / 2h`.
pub fn finite_diff_grad<O: Objective>(
    objective: &O,
    params: &ParamVector,
    batch: &O::Batch,
    h: f64,
) -> Result<ParamVector> {
    central_difference(params, h, |p| objective.loss(p, batch))
}

/// `|a - b| / max(|b|, 1e-12)`, with `b` the reference.
pub fn relative_error(a: &ParamVector, reference: &ParamVector) -> Result<f64> {
    let diff = a.sub(reference)?;
    Ok(diff.norm() / reference.norm().max(1e-12))
}
