//! Closed-form mean waiting times for the queues the engine is checked
//! against: M/M/1, M/G/1 (Pollaczek-Khinchine), M/D/1 and non-preemptive
//! head-of-line priority queues.
//!
//! All formulas return the mean time spent waiting in queue, excluding
//! service.

use num_traits::Float;

use crate::error::{Result, SimError};

/// A Poisson stream of customers with a general service-time law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficClass<T> {
    /// Arrival rate, customers per second.
    pub rate: T,
    /// E\[S\], seconds.
    pub mean_service: T,
    /// E\[S^2\], seconds squared.
    pub second_moment: T,
    /// Larger values are served first.
    pub priority: i32,
}

impl<T: Float> TrafficClass<T> {
    pub fn new(rate: T, mean_service: T, second_moment: T, priority: i32) -> Result<Self> {
        let bad = |msg: &str| Err(SimError::InvalidArgument(msg.to_owned()));
        if !(rate > T::zero()) {
            return bad("class rate must be positive");
        }
        if !(mean_service > T::zero()) {
            return bad("mean service time must be positive");
        }
        // Allow for rounding in E[S^2] of deterministic laws.
        let slack = T::from(1e-12).unwrap() * mean_service * mean_service;
        if second_moment + slack < mean_service * mean_service {
            return bad("second moment must be at least the squared mean");
        }
        Ok(Self {
            rate,
            mean_service,
            second_moment,
            priority,
        })
    }

    /// Constant service time `s`.
    pub fn deterministic(rate: T, s: T, priority: i32) -> Result<Self> {
        Self::new(rate, s, s * s, priority)
    }

    /// Exponential service with the given mean.
    pub fn exponential(rate: T, mean: T, priority: i32) -> Result<Self> {
        Self::new(rate, mean, (T::one() + T::one()) * mean * mean, priority)
    }

    /// Service time drawn from a discrete law given as `(probability, time)` pairs.
    pub fn discrete(rate: T, law: &[(T, T)], priority: i32) -> Result<Self> {
        let total = law.iter().fold(T::zero(), |a, &(p, _)| a + p);
        if law.is_empty() || (total - T::one()).abs() > T::from(1e-9).unwrap() {
            return Err(SimError::InvalidArgument(
                "discrete service law must have probabilities summing to one".into(),
            ));
        }
        let m1 = law.iter().fold(T::zero(), |a, &(p, s)| a + p * s);
        let m2 = law.iter().fold(T::zero(), |a, &(p, s)| a + p * s * s);
        Self::new(rate, m1, m2, priority)
    }

    pub fn load(&self) -> T {
        self.rate * self.mean_service
    }

    /// Aggregate of several classes served FIFO as one stream. The service
    /// moments are the rate-weighted mixtures of the members'.
    pub fn merge(classes: &[Self]) -> Result<Self> {
        if classes.is_empty() {
            return Err(SimError::InvalidArgument("no classes to merge".into()));
        }
        let rate = classes.iter().fold(T::zero(), |a, c| a + c.rate);
        let m1 = classes
            .iter()
            .fold(T::zero(), |a, c| a + c.rate * c.mean_service)
            / rate;
        let m2 = classes
            .iter()
            .fold(T::zero(), |a, c| a + c.rate * c.second_moment)
            / rate;
        let priority = classes.iter().map(|c| c.priority).max().unwrap_or(0);
        Self::new(rate, m1, m2, priority)
    }
}

fn unstable<T: Float>(load: T) -> SimError {
    SimError::Unstable {
        load: load.to_f64().unwrap_or(f64::NAN),
    }
}

/// Mean wait in queue of M/M/1: `lambda / (mu (mu - lambda))`.
pub fn mm1_wq<T: Float>(lambda: T, mu: T) -> Result<T> {
    if !(lambda >= T::zero() && mu > T::zero()) {
        return Err(SimError::InvalidArgument(
            "M/M/1 needs lambda >= 0 and mu > 0".into(),
        ));
    }
    if lambda >= mu {
        return Err(unstable(lambda / mu));
    }
    Ok(lambda / (mu * (mu - lambda)))
}

/// Pollaczek-Khinchine mean wait of FIFO M/G/1: `lambda E[S^2] / (2 (1 - rho))`.
pub fn mg1_wq<T: Float>(class: &TrafficClass<T>) -> Result<T> {
    let rho = class.load();
    if rho >= T::one() {
        return Err(unstable(rho));
    }
    let two = T::one() + T::one();
    Ok(class.rate * class.second_moment / (two * (T::one() - rho)))
}

/// Mean wait of M/D/1 with service time `s`: `rho s / (2 (1 - rho))`.
pub fn md1_wq<T: Float>(lambda: T, s: T) -> Result<T> {
    if !(lambda >= T::zero() && s > T::zero()) {
        return Err(SimError::InvalidArgument(
            "M/D/1 needs lambda >= 0 and s > 0".into(),
        ));
    }
    let rho = lambda * s;
    if rho >= T::one() {
        return Err(unstable(rho));
    }
    let two = T::one() + T::one();
    Ok(rho * s / (two * (T::one() - rho)))
}

/// Mean residual work seen by an arrival, `R = sum(lambda_i E[S_i^2]) / 2`.
pub fn mean_residual<T: Float>(classes: &[TrafficClass<T>]) -> T {
    let two = T::one() + T::one();
    classes
        .iter()
        .fold(T::zero(), |a, c| a + c.rate * c.second_moment)
        / two
}

/// Non-preemptive head-of-line priority queue (Cobham):
/// `W_k = R / ((1 - sigma_{k-1}) (1 - sigma_k))`, where `sigma_k` is the
/// load of classes with priority at least that of class `k`.
///
/// The result is ordered highest priority first; equal priorities keep
/// their input order and are treated as distinct levels.
pub fn hol_priority_wq<T: Float>(classes: &[TrafficClass<T>]) -> Result<Vec<T>> {
    if classes.is_empty() {
        return Err(SimError::InvalidArgument("no traffic classes".into()));
    }
    let total = classes.iter().fold(T::zero(), |a, c| a + c.load());
    if total >= T::one() {
        return Err(unstable(total));
    }
    let mut ordered = classes.to_vec();
    ordered.sort_by(|a, b| b.priority.cmp(&a.priority));
    let r = mean_residual(&ordered);
    let mut sigma_prev = T::zero();
    let mut out = Vec::with_capacity(ordered.len());
    for c in &ordered {
        let sigma = sigma_prev + c.load();
        out.push(r / ((T::one() - sigma_prev) * (T::one() - sigma)));
        sigma_prev = sigma;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn mm1_examples() {
        assert_relative_eq!(mm1_wq(1.0, 2.0).unwrap(), 0.5);
        assert_relative_eq!(mm1_wq(1.9, 2.0).unwrap(), 9.5, max_relative = 1e-12);
        assert_eq!(mm1_wq(0.0, 2.0).unwrap(), 0.0);
        assert!(mm1_wq(1e-9, 2.0).unwrap() < 1e-9);
        assert!(matches!(mm1_wq(2.0, 2.0), Err(SimError::Unstable { .. })));
    }

    #[test]
    fn mg1_examples() {
        let d = TrafficClass::deterministic(0.5, 1.0, 0).unwrap();
        assert_relative_eq!(mg1_wq(&d).unwrap(), 0.5);
        let e = TrafficClass::exponential(1.0, 0.5, 0).unwrap();
        assert_relative_eq!(mg1_wq(&e).unwrap(), mm1_wq(1.0, 2.0).unwrap());
        let over = TrafficClass::deterministic(2.0, 1.0, 0).unwrap();
        assert!(mg1_wq(&over).is_err());
    }

    #[test]
    fn md1_examples() {
        assert_relative_eq!(
            md1_wq(23.4375e6, 16e-9).unwrap(),
            4.8e-9,
            max_relative = 1e-12
        );
        assert_eq!(md1_wq(0.0, 16e-9).unwrap(), 0.0);
        let rho = 0.6;
        let ratio = md1_wq(rho, 1.0).unwrap() / mm1_wq(rho, 1.0).unwrap();
        assert_relative_eq!(ratio, 0.5, max_relative = 1e-12);
        assert!(md1_wq(1.0, 1.0).is_err());
    }

    #[test]
    fn hol_single_class_reduces_to_mg1() {
        let c = TrafficClass::new(0.3, 1.0, 3.0, 0).unwrap();
        assert_relative_eq!(hol_priority_wq(&[c]).unwrap()[0], mg1_wq(&c).unwrap());
    }

    #[test]
    fn hol_identical_classes_strictly_ordered() {
        let c = TrafficClass::exponential(0.2, 1.0, 0).unwrap();
        let hi = TrafficClass { priority: 1, ..c };
        let w = hol_priority_wq(&[c, hi]).unwrap();
        assert!(w[0] < w[1]);
    }

    #[test]
    fn reduction_chain_in_f32() {
        let d = TrafficClass::<f32>::deterministic(0.4, 1.5, 0).unwrap();
        let a = mg1_wq(&d).unwrap();
        let b = md1_wq(0.4f32, 1.5).unwrap();
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn oracles_vanish_at_zero_load_and_grow_near_one() {
        let light = TrafficClass::deterministic(1e-6, 1.0, 0).unwrap();
        let heavy = TrafficClass::deterministic(0.999, 1.0, 0).unwrap();
        assert!(mg1_wq(&light).unwrap() < 1e-5);
        assert!(mg1_wq(&heavy).unwrap() > 100.0);
    }
}
