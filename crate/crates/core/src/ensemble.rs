//! Weight-space self-ensembling over a training trajectory.
//!
//! The Gaussian weight average gives the per-epoch snapshot `theta_t` the
//! weight `w_t = N(t; mu, sigma2)` and keeps a running normalized average,
//! so snapshots near the start and end of training count for less than the
//! middle ones. The pretrained starting point is never folded in.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::params::ParamVector;

/// Gaussian density at epoch `t`.
pub fn gaussian_weight(t: usize, mu: f64, sigma2: f64) -> Result<f64> {
    check_weight_args(t, sigma2)?;
    let d = t as f64 - mu;
    Ok((-d * d / (2.0 * sigma2)).exp() / ((2.0 * PI).sqrt() * sigma2.sqrt()))
}

fn check_weight_args(t: usize, sigma2: f64) -> Result<()> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::config(format!("sigma2 must be positive, got {sigma2}")));
    }
    if t == 0 {
        return Err(Error::config("epochs are counted from 1"));
    }
    Ok(())
}

/// Natural log of [`gaussian_weight`], finite even where the weight underflows.
fn log_gaussian_weight(t: usize, mu: f64, sigma2: f64) -> Result<f64> {
    check_weight_args(t, sigma2)?;
    let d = t as f64 - mu;
    Ok(-d * d / (2.0 * sigma2) - 0.5 * (2.0 * PI * sigma2).ln())
}

pub fn normalize_weights(w: &[f64]) -> Result<Vec<f64>> {
    if w.is_empty() {
        return Err(Error::config("no weights to normalize"));
    }
    if let Some(bad) = w.iter().find(|&&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::config(format!("weights must be positive, got {bad}")));
    }
    let total: f64 = w.iter().sum();
    Ok(w.iter().map(|x| x / total).collect())
}

/// Center used when none is configured: `ceil(0.6 * R)`.
pub fn default_mu(horizon: usize) -> f64 {
    (0.6 * horizon as f64).ceil()
}

pub const DEFAULT_SIGMA2: f64 = 10.0;

/// Streaming Gaussian weight average.
///
/// The cumulative weight is kept as a logarithm so snapshots far from `mu`,
/// whose weights underflow, still mix correctly.
#[derive(Debug, Clone, PartialEq)]
pub struct GwaState {
    running_avg: Option<ParamVector>,
    log_cumulative_weight: f64,
    epoch: usize,
    mu: f64,
    sigma2: f64,
    horizon: usize,
    step_length: usize,
}

impl GwaState {
    pub fn new(mu: f64, sigma2: f64, horizon: usize, step_length: usize) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::config(format!("sigma2 must be positive, got {sigma2}")));
        }
        if !mu.is_finite() {
            return Err(Error::config("mu must be finite"));
        }
        if horizon == 0 || step_length == 0 {
            return Err(Error::config("horizon and step length must be positive"));
        }
        Ok(GwaState {
            running_avg: None,
            log_cumulative_weight: f64::NEG_INFINITY,
            epoch: 0,
            mu,
            sigma2,
            horizon,
            step_length,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn cumulative_weight(&self) -> f64 {
        self.log_cumulative_weight.exp()
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn step_length(&self) -> usize {
        self.step_length
    }

    /// True when `step` closes an epoch.
    pub fn is_snapshot_step(&self, step: usize) -> bool {
        step > 0 && step.is_multiple_of(self.step_length)
    }

    pub fn running_avg(&self) -> Option<&ParamVector> {
        self.running_avg.as_ref()
    }

    /// Folds in the snapshot for the next epoch.
    pub fn update(&mut self, theta_t: &ParamVector) -> Result<()> {
        if self.epoch >= self.horizon {
            return Err(Error::config(format!("GWA horizon {} already reached", self.horizon)));
        }
        let lw = log_gaussian_weight(self.epoch + 1, self.mu, self.sigma2)?;
        let lc = self.log_cumulative_weight;
        let hi = lw.max(lc);
        let log_total = hi + ((lw - hi).exp() + (lc - hi).exp()).ln();
        let next = match &self.running_avg {
            Some(avg) if self.epoch > 0 => {
                avg.ensure_same_layout(theta_t)?;
                let keep = (lc - log_total).exp();
                let take = (lw - log_total).exp();
                let mut out = avg.scale(keep);
                out.axpy(take, theta_t)?;
                out
            }
            _ => theta_t.clone(),
        };
        self.running_avg = Some(next);
        self.log_cumulative_weight = log_total;
        self.epoch += 1;
        Ok(())
    }

    pub fn finalize(&self) -> Result<ParamVector> {
        match &self.running_avg {
            Some(avg) if self.epoch > 0 => Ok(avg.clone()),
            _ => Err(Error::EmptyTrajectory),
        }
    }
}

/// Functional form of [`GwaState::update`].
pub fn gwa_update(mut state: GwaState, theta_t: &ParamVector) -> Result<GwaState> {
    state.update(theta_t)?;
    Ok(state)
}

pub fn gwa_finalize(state: &GwaState) -> Result<ParamVector> {
    state.finalize()
}

/// Streams a whole trajectory through a fresh [`GwaState`].
pub fn gwa_of_trajectory(thetas: &[ParamVector], mu: f64, sigma2: f64) -> Result<ParamVector> {
    if thetas.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let mut state = GwaState::new(mu, sigma2, thetas.len(), 1)?;
    for t in thetas {
        state.update(t)?;
    }
    state.finalize()
}

/// `(1 - sum(alpha)) * theta0 + sum_t alpha_t * theta_t`.
pub fn weight_average_with_anchor(theta0: &ParamVector, thetas: &[ParamVector], alphas: &[f64]) -> Result<ParamVector> {
    if thetas.len() != alphas.len() {
        return Err(Error::config(format!(
            "{} snapshots but {} coefficients",
            thetas.len(),
            alphas.len()
        )));
    }
    if let Some(a) = alphas.iter().find(|&&a| !(0.0..=1.0).contains(&a)) {
        return Err(Error::config(format!("coefficient {a} outside [0, 1]")));
    }
    let total: f64 = alphas.iter().sum();
    if total > 1.0 + 1e-12 {
        return Err(Error::config(format!("coefficients sum to {total} > 1")));
    }
    let mut out = theta0.scale(1.0 - total);
    for (t, &a) in thetas.iter().zip(alphas) {
        out.axpy(a, t)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineScheme {
    Uniform,
    Ema { decay: f64 },
}

pub fn baseline_average(thetas: &[ParamVector], scheme: BaselineScheme) -> Result<ParamVector> {
    let first = thetas.first().ok_or(Error::EmptyTrajectory)?;
    match scheme {
        BaselineScheme::Uniform => {
            let mut sum = first.clone();
            for t in &thetas[1..] {
                sum.add_assign(t)?;
            }
            Ok(sum.scale(1.0 / thetas.len() as f64))
        }
        BaselineScheme::Ema { decay } => {
            if !(decay > 0.0 && decay < 1.0) {
                return Err(Error::config(format!("EMA decay must be in (0, 1), got {decay}")));
            }
            let mut avg = first.clone();
            for t in &thetas[1..] {
                let mut next = avg.scale(decay);
                next.axpy(1.0 - decay, t)?;
                avg = next;
            }
            Ok(avg)
        }
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;

    fn s(x: f64) -> ParamVector {
        ParamVector::from_slice(&[x]).unwrap()
    }

    #[test]
    fn peak_weight() {
        let w = gaussian_weight(7, 7.0, 10.0).unwrap();
        assert_abs_diff_eq!(w, 1.0 / (2.0 * PI * 10.0).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(w, 0.126157, epsilon = 1e-6);
        assert!(gaussian_weight(15, 15.0, 10.0).is_ok());
    }

    #[test]
    fn weight_is_symmetric() {
        for k in 1..7 {
            let lo = gaussian_weight(7 - k, 7.0, 10.0).unwrap();
            let hi = gaussian_weight(7 + k, 7.0, 10.0).unwrap();
            assert_eq!(lo, hi);
        }
    }

    #[test]
    fn weight_rejects_bad_sigma() {
        assert!(matches!(gaussian_weight(1, 0.0, 0.0), Err(Error::Config(_))));
        assert!(matches!(gaussian_weight(1, 0.0, -2.0), Err(Error::Config(_))));
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_weights(&[1.0, 2.0, 1.0]).unwrap(), vec![0.25, 0.5, 0.25]);
        let u = normalize_weights(&[3.0; 5]).unwrap();
        assert!(u.iter().all(|&x| (x - 0.2).abs() < 1e-15));
        assert_eq!(normalize_weights(&[0.7]).unwrap(), vec![1.0]);
        assert!(normalize_weights(&[1.0, 0.0]).is_err());
        assert!(normalize_weights(&[1.0, -1.0]).is_err());
    }

    #[test]
    fn streaming_matches_weighted_sum_by_hand() {
        // Weights [1, 2, 1] folded in by the streaming rule.
        let ws = [1.0, 2.0, 1.0];
        let thetas = [0.0, 3.0, 6.0];
        let mut avg = 0.0;
        let mut cum = 0.0;
        for (i, (&w, &t)) in ws.iter().zip(&thetas).enumerate() {
            avg = if i == 0 {
                t
            } else {
                cum / (cum + w) * avg + w / (cum + w) * t
            };
            cum += w;
        }
        assert_abs_diff_eq!(avg, 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!((0.0 * 1.0 + 3.0 * 2.0 + 6.0 * 1.0) / 4.0, 3.0, epsilon = 1e-15);
    }

    #[test]
    fn gwa_symmetric_three_epochs() {
        // mu = 2 makes w1 == w3, so the result is (theta1 + r*theta2 + theta3)/(2 + r).
        let mut st = GwaState::new(2.0, 1.0, 3, 1).unwrap();
        for x in [0.0, 3.0, 6.0] {
            st.update(&s(x)).unwrap();
        }
        assert_abs_diff_eq!(st.finalize().unwrap().values()[0], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn first_update_replaces_contents() {
        let mut st = GwaState::new(7.0, 10.0, 12, 5).unwrap();
        st.update(&s(4.5)).unwrap();
        assert!(st.finalize().unwrap().bit_eq(&s(4.5)));
        assert_eq!(st.epoch(), 1);
    }

    #[test]
    fn identical_snapshots_stay_put() {
        let mut st = GwaState::new(7.0, 10.0, 12, 1).unwrap();
        for _ in 0..12 {
            st.update(&s(1.25)).unwrap();
        }
        assert_abs_diff_eq!(st.finalize().unwrap().values()[0], 1.25, epsilon = 1e-15);
    }

    #[test]
    fn horizon_and_empty_errors() {
        let mut st = GwaState::new(1.0, 1.0, 1, 1).unwrap();
        assert!(matches!(st.finalize(), Err(Error::EmptyTrajectory)));
        st.update(&s(1.0)).unwrap();
        assert!(st.update(&s(2.0)).is_err());
        assert_eq!(st.epoch(), 1);
    }

    #[test]
    fn layout_mismatch_on_update() {
        let mut st = GwaState::new(1.0, 1.0, 3, 1).unwrap();
        st.update(&s(1.0)).unwrap();
        assert!(st.update(&ParamVector::from_slice(&[1.0, 2.0]).unwrap()).is_err());
    }

    #[test]
    fn snapshot_trigger() {
        let st = GwaState::new(1.0, 1.0, 3, 4).unwrap();
        assert!(!st.is_snapshot_step(0));
        assert!(!st.is_snapshot_step(3));
        assert!(st.is_snapshot_step(4));
        assert!(st.is_snapshot_step(8));
    }

    #[test]
    fn anchor_examples() {
        let t0 = s(0.0);
        let thetas = [s(2.0), s(4.0)];
        assert!(weight_average_with_anchor(&t0, &thetas, &[0.0, 0.0])
            .unwrap()
            .bit_eq(&t0));
        assert_eq!(
            weight_average_with_anchor(&t0, &thetas[..1], &[1.0]).unwrap().values(),
            &[2.0]
        );
        let r = weight_average_with_anchor(&t0, &thetas, &[0.25, 0.25]).unwrap();
        assert_abs_diff_eq!(r.values()[0], 1.5, epsilon = 1e-15);
        assert!(weight_average_with_anchor(&t0, &thetas, &[0.75, 0.5]).is_err());
    }

    #[test]
    fn baseline_examples() {
        let same = [s(2.5), s(2.5), s(2.5)];
        assert_eq!(
            baseline_average(&same, BaselineScheme::Uniform).unwrap().values(),
            &[2.5]
        );
        assert_eq!(
            baseline_average(&[s(0.0), s(6.0)], BaselineScheme::Uniform)
                .unwrap()
                .values(),
            &[3.0]
        );
        assert_eq!(
            baseline_average(&[s(0.0), s(4.0)], BaselineScheme::Ema { decay: 0.5 })
                .unwrap()
                .values(),
            &[2.0]
        );
        assert!(matches!(
            baseline_average(&[], BaselineScheme::Uniform),
            Err(Error::EmptyTrajectory)
        ));
        assert!(baseline_average(&[s(0.0)], BaselineScheme::Ema { decay: 1.0 }).is_err());
    }
}
