//! Cross-batch meta-optimization.
//!
//! Each task pairs a support batch with a disjoint query batch. The learner
//! takes one virtual step on the support batch to get fast weights, is
//! scored on the query batch at those fast weights, and the outer update
//! combines both gradients:
//!
//! ```text
//! theta <- theta - beta * sum_i ( grad L_S_i(theta) + delta * grad L_Q_i(theta'_i) )
//! theta'_i = theta - alpha * grad L_S_i(theta)
//! ```
//!
//! The query gradient is taken with respect to the fast weights, so no
//! gradient flows through the inner step. [`second_order_meta_grad`] gives
//! the exact gradient of the composite objective by finite differences and
//! is only meant as a reference.

use crate::error::{Error, Result};
use crate::model::Samples;
use crate::objective::{central_difference, Objective};
use crate::params::ParamVector;

#[derive(Debug, Clone, PartialEq)]
pub struct MetaTask<B> {
    support: B,
    query: B,
}

impl<B: Samples> MetaTask<B> {
    /// Rejects tasks whose support and query share a sample id.
    pub fn new(support: B, query: B) -> Result<Self> {
        let mut ids: Vec<u64> = support.sample_ids().to_vec();
        ids.sort_unstable();
        if let Some(dup) = query.sample_ids().iter().find(|id| ids.binary_search(id).is_ok()) {
            return Err(Error::Task(format!("sample {dup} appears in both support and query")));
        }
        Ok(MetaTask { support, query })
    }
}

impl<B> MetaTask<B> {
    pub fn support(&self) -> &B {
        &self.support
    }

    pub fn query(&self) -> &B {
        &self.query
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetaStepConfig {
    /// Inner (support) step size.
    pub alpha: f64,
    /// Outer step size.
    pub beta: f64,
    /// Weight on each task's query gradient.
    pub delta: f64,
    pub tasks_per_step: usize,
}

impl Default for MetaStepConfig {
    fn default() -> Self {
        MetaStepConfig {
            alpha: 1e-2,
            beta: 1e-2,
            delta: 0.5,
            tasks_per_step: 4,
        }
    }
}

impl MetaStepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::config(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::config(format!("delta must be >= 0, got {}", self.delta)));
        }
        if self.tasks_per_step == 0 {
            return Err(Error::config("tasks_per_step must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct InnerUpdate {
    pub fast: ParamVector,
    pub support_loss: f64,
    pub support_grad: ParamVector,
}

/// One support step on a copy of `theta`.
pub fn inner_update<O: Objective>(
    objective: &O,
    theta: &ParamVector,
    support: &O::Batch,
    alpha: f64,
) -> Result<InnerUpdate> {
    if !(alpha >= 0.0) {
        return Err(Error::config(format!("alpha must be >= 0, got {alpha}")));
    }
    let (support_loss, support_grad) = objective.loss_and_grad(theta, support)?;
    let fast = theta.step(alpha, &support_grad)?;
    Ok(InnerUpdate {
        fast,
        support_loss,
        support_grad,
    })
}

/// Query loss and its gradient, both taken at the fast weights.
pub fn query_loss<O: Objective>(objective: &O, fast: &ParamVector, query: &O::Batch) -> Result<(f64, ParamVector)> {
    objective.loss_and_grad(fast, query)
}

/// `L_S(theta) + L_Q(theta - alpha * grad L_S(theta))`.
pub fn meta_objective<O: Objective>(
    objective: &O,
    theta: &ParamVector,
    task: &MetaTask<O::Batch>,
    alpha: f64,
) -> Result<f64> {
    let inner = inner_update(objective, theta, &task.support, alpha)?;
    let q = objective.loss(&inner.fast, &task.query)?;
    Ok(inner.support_loss + q)
}

/// Exact meta-gradient of [`meta_objective`] by central differences.
pub fn second_order_meta_grad<O: Objective>(
    objective: &O,
    theta: &ParamVector,
    task: &MetaTask<O::Batch>,
    alpha: f64,
    h: f64,
) -> Result<ParamVector> {
    central_difference(theta, h, |p| meta_objective(objective, p, task, alpha))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskLosses {
    pub support: f64,
    pub query: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepReport {
    pub tasks: Vec<TaskLosses>,
}

impl StepReport {
    pub fn mean_support_loss(&self) -> f64 {
        mean(self.tasks.iter().map(|t| t.support))
    }

    pub fn mean_query_loss(&self) -> f64 {
        mean(self.tasks.iter().map(|t| t.query))
    }
}

fn mean(it: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = it.len();
    if n == 0 {
        return f64::NAN;
    }
    it.sum::<f64>() / n as f64
}

/// Summed first-order meta-gradient over `tasks`, reduced in task order.
pub fn fomaml_gradient<O: Objective>(
    objective: &O,
    theta: &ParamVector,
    tasks: &[MetaTask<O::Batch>],
    cfg: &MetaStepConfig,
) -> Result<(ParamVector, StepReport)> {
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(Error::Task("empty task list".into()));
    }
    if tasks.len() != cfg.tasks_per_step {
        return Err(Error::config(format!(
            "{} tasks supplied, tasks_per_step is {}",
            tasks.len(),
            cfg.tasks_per_step
        )));
    }
    let mut total = theta.zeros_like();
    let mut report = StepReport::default();
    for task in tasks {
        let inner = inner_update(objective, theta, &task.support, cfg.alpha)?;
        let (q_loss, q_grad) = query_loss(objective, &inner.fast, &task.query)?;
        let mut term = inner.support_grad;
        term.axpy(cfg.delta, &q_grad)?;
        total.add_assign(&term)?;
        report.tasks.push(TaskLosses {
            support: inner.support_loss,
            query: q_loss,
        });
    }
    Ok((total, report))
}

/// One outer step with plain descent: `theta - beta * g`.
pub fn fomaml_step<O: Objective>(
    objective: &O,
    theta: &ParamVector,
    tasks: &[MetaTask<O::Batch>],
    cfg: &MetaStepConfig,
) -> Result<(ParamVector, StepReport)> {
    let (g, report) = fomaml_gradient(objective, theta, tasks, cfg)?;
    Ok((theta.step(cfg.beta, &g)?, report))
}

/// Ordinary fine-tuning step on a single batch.
pub fn plain_step<O: Objective>(objective: &O, theta: &ParamVector, batch: &O::Batch, lr: f64) -> Result<ParamVector> {
    Ok(plain_step_with_loss(objective, theta, batch, lr)?.0)
}

pub fn plain_step_with_loss<O: Objective>(
    objective: &O,
    theta: &ParamVector,
    batch: &O::Batch,
    lr: f64,
) -> Result<(ParamVector, f64)> {
    if !(lr >= 0.0) {
        return Err(Error::config(format!("learning rate must be >= 0, got {lr}")));
    }
    let (l, g) = objective.loss_and_grad(theta, batch)?;
    Ok((theta.step(lr, &g)?, l))
}

/// Adaptive-moment outer update with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveMoments {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    first: Option<ParamVector>,
    second: Option<ParamVector>,
    steps: u32,
}

impl Default for AdaptiveMoments {
    fn default() -> Self {
        AdaptiveMoments {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            first: None,
            second: None,
            steps: 0,
        }
    }
}

impl AdaptiveMoments {
    pub fn step(&mut self, theta: &ParamVector, grad: &ParamVector, lr: f64) -> Result<ParamVector> {
        theta.ensure_same_layout(grad)?;
        let m = self.first.get_or_insert_with(|| grad.zeros_like());
        let v = self.second.get_or_insert_with(|| grad.zeros_like());
        m.ensure_same_layout(grad)?;
        self.steps += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.steps as i32);
        let c2 = 1.0 - b2.powi(self.steps as i32);
        let mut out = theta.clone();
        for (((x, g), mi), vi) in out
            .values_mut()
            .iter_mut()
            .zip(grad.values())
            .zip(m.values_mut())
            .zip(v.values_mut())
        {
            *mi = b1 * *mi + (1.0 - b1) * g;
            *vi = b2 * *vi + (1.0 - b2) * g * g;
            let update = (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
            *x -= lr * (update + self.weight_decay * *x);
        }
        out.check_finite()?;
        Ok(out)
    }
}

/// How the combined gradient is turned into a parameter update.
#[derive(Debug, Clone, PartialEq)]
pub enum OuterOptimizer {
    Descent,
    Adaptive(AdaptiveMoments),
}

impl OuterOptimizer {
    pub fn apply(&mut self, theta: &ParamVector, grad: &ParamVector, lr: f64) -> Result<ParamVector> {
        match self {
            OuterOptimizer::Descent => theta.step(lr, grad),
            OuterOptimizer::Adaptive(m) => m.step(theta, grad, lr),
        }
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::objective::{Quadratic, QuadraticBatch};

    fn scalar(x: f64) -> ParamVector {
        ParamVector::from_slice(&[x]).unwrap()
    }

    fn bowl_task() -> MetaTask<QuadraticBatch> {
        MetaTask::new(
            QuadraticBatch::new(vec![0.0], 1.0, 0),
            QuadraticBatch::new(vec![1.0], 1.0, 1),
        )
        .unwrap()
    }

    #[test]
    fn zero_alpha_keeps_theta() {
        let t = scalar(2.0);
        let u = inner_update(&Quadratic, &t, &QuadraticBatch::new(vec![0.0], 2.0, 0), 0.0).unwrap();
        assert!(u.fast.bit_eq(&t));
    }

    #[test]
    fn inner_step_on_square() {
        // L = theta^2 at theta = 2: grad 4, 2 - 0.5 * 4 = 0
        let t = scalar(2.0);
        let u = inner_update(&Quadratic, &t, &QuadraticBatch::new(vec![0.0], 2.0, 0), 0.5).unwrap();
        assert_eq!(u.fast.values(), &[0.0]);
        assert_eq!(u.support_loss, 4.0);
        assert_eq!(t.values(), &[2.0]);
    }

    #[test]
    fn inner_step_at_stationary_point() {
        let t = scalar(0.0);
        let u = inner_update(&Quadratic, &t, &QuadraticBatch::new(vec![0.0], 1.0, 0), 0.3).unwrap();
        assert!(u.fast.bit_eq(&t));
    }

    #[test]
    fn query_loss_on_shifted_bowl() {
        let (l, g) = query_loss(&Quadratic, &scalar(0.9), &QuadraticBatch::new(vec![1.0], 1.0, 1)).unwrap();
        assert_abs_diff_eq!(l, 0.005, epsilon = 1e-15);
        assert_abs_diff_eq!(g.values()[0], -0.1, epsilon = 1e-15);
        let (_, g) = query_loss(&Quadratic, &scalar(1.0), &QuadraticBatch::new(vec![1.0], 1.0, 1)).unwrap();
        assert!(g.norm() < 1e-8);
    }

    #[test]
    fn meta_objective_on_bowls() {
        let task = bowl_task();
        let v = meta_objective(&Quadratic, &scalar(1.0), &task, 0.1).unwrap();
        assert_abs_diff_eq!(v, 0.505, epsilon = 1e-12);
        let v0 = meta_objective(&Quadratic, &scalar(1.0), &task, 0.0).unwrap();
        assert_abs_diff_eq!(v0, 0.5 + 0.0, epsilon = 1e-15);
    }

    #[test]
    fn second_order_gradient_closed_form() {
        let task = bowl_task();
        let theta = 1.0;
        let alpha = 0.1;
        let g = second_order_meta_grad(&Quadratic, &scalar(theta), &task, alpha, 1e-5).unwrap();
        let closed = theta + (1.0 - alpha) * ((1.0 - alpha) * theta - 1.0);
        assert_abs_diff_eq!(closed, 0.91, epsilon = 1e-12);
        assert_abs_diff_eq!(g.values()[0], closed, epsilon = 1e-9);

        let (fo, _) = fomaml_gradient(
            &Quadratic,
            &scalar(theta),
            std::slice::from_ref(&task),
            &MetaStepConfig {
                alpha,
                beta: 0.1,
                delta: 1.0,
                tasks_per_step: 1,
            },
        )
        .unwrap();
        assert_abs_diff_eq!(fo.values()[0], 0.9, epsilon = 1e-12);
        // dropped curvature term: alpha * H * grad L_Q(theta') with H = 1
        assert_abs_diff_eq!(g.values()[0] - fo.values()[0], 0.01, epsilon = 1e-9);
    }

    #[test]
    fn second_order_with_zero_alpha_is_sum_of_gradients() {
        let task = bowl_task();
        let t = scalar(0.3);
        let g = second_order_meta_grad(&Quadratic, &t, &task, 0.0, 1e-5).unwrap();
        let (_, gs) = Quadratic.loss_and_grad(&t, task.support()).unwrap();
        let (_, gq) = Quadratic.loss_and_grad(&t, task.query()).unwrap();
        assert_abs_diff_eq!(g.values()[0], gs.values()[0] + gq.values()[0], epsilon = 1e-6);
        assert!(second_order_meta_grad(&Quadratic, &t, &task, 0.0, 0.0).is_err());
    }

    #[test]
    fn fomaml_step_on_bowls() {
        let cfg = MetaStepConfig {
            alpha: 0.1,
            beta: 0.1,
            delta: 1.0,
            tasks_per_step: 1,
        };
        let (t, report) = fomaml_step(&Quadratic, &scalar(1.0), &[bowl_task()], &cfg).unwrap();
        assert_abs_diff_eq!(t.values()[0], 0.91, epsilon = 1e-12);
        assert_eq!(report.tasks.len(), 1);
        assert_abs_diff_eq!(report.tasks[0].support, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn identical_tasks_double_the_update() {
        let one = MetaStepConfig {
            alpha: 0.1,
            beta: 0.1,
            delta: 1.0,
            tasks_per_step: 1,
        };
        let two = MetaStepConfig {
            tasks_per_step: 2,
            ..one
        };
        let theta = scalar(1.0);
        let (t1, _) = fomaml_step(&Quadratic, &theta, &[bowl_task()], &one).unwrap();
        let (t2, _) = fomaml_step(&Quadratic, &theta, &[bowl_task(), bowl_task()], &two).unwrap();
        let d1 = theta.sub(&t1).unwrap().values()[0];
        let d2 = theta.sub(&t2).unwrap().values()[0];
        assert_abs_diff_eq!(d2, 2.0 * d1, epsilon = 1e-15);
    }

    #[test]
    fn empty_or_miscounted_task_lists_fail() {
        let cfg = MetaStepConfig {
            tasks_per_step: 1,
            ..Default::default()
        };
        assert!(fomaml_step(&Quadratic, &scalar(1.0), &[], &cfg).is_err());
        let cfg2 = MetaStepConfig {
            tasks_per_step: 2,
            ..Default::default()
        };
        assert!(fomaml_step(&Quadratic, &scalar(1.0), &[bowl_task()], &cfg2).is_err());
    }

    #[test]
    fn overlapping_task_is_rejected() {
        let r = MetaTask::new(
            QuadraticBatch::new(vec![0.0], 1.0, 3),
            QuadraticBatch::new(vec![1.0], 1.0, 3),
        );
        assert!(matches!(r, Err(Error::Task(_))));
    }

    #[test]
    fn plain_step_zero_lr_and_equivalence() {
        let b = QuadraticBatch::new(vec![0.5], 3.0, 0);
        let t = scalar(2.0);
        assert!(plain_step(&Quadratic, &t, &b, 0.0).unwrap().bit_eq(&t));
        let p = plain_step(&Quadratic, &t, &b, 0.05).unwrap();
        let u = inner_update(&Quadratic, &t, &b, 0.05).unwrap();
        assert!(p.bit_eq(&u.fast));
    }

    #[test]
    fn config_validation() {
        assert!(MetaStepConfig::default().validate().is_ok());
        assert!(MetaStepConfig {
            alpha: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(MetaStepConfig {
            beta: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(MetaStepConfig {
            delta: 0.0,
            ..Default::default()
        }
        .validate()
        .is_ok());
        assert!(MetaStepConfig {
            delta: -0.1,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(MetaStepConfig {
            tasks_per_step: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn adaptive_first_step_moves_by_lr() {
        let mut opt = AdaptiveMoments::default();
        let t = scalar(1.0);
        let g = scalar(4.0);
        let t1 = opt.step(&t, &g, 0.1).unwrap();
        // bias-corrected first step is sign(g) * lr up to eps
        assert_abs_diff_eq!(t1.values()[0], 0.9, epsilon = 1e-8);
    }
}
