//! Nearest-rank percentiles and five-number box-plot summaries.

use num_traits::Float;

use crate::error::{Result, SimError};

/// The 5th, 25th, 50th, 75th and 95th percentiles of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxplotSummary<T> {
    pub p5: T,
    pub p25: T,
    pub p50: T,
    pub p75: T,
    pub p95: T,
}

impl<T: Float> BoxplotSummary<T> {
    pub const LEVELS: [u32; 5] = [5, 25, 50, 75, 95];

    pub fn values(&self) -> [T; 5] {
        [self.p5, self.p25, self.p50, self.p75, self.p95]
    }

    pub fn is_ordered(&self) -> bool {
        let v = self.values();
        v.windows(2).all(|w| w[0] <= w[1])
    }
}

fn check_p<T: Float>(p: T) -> Result<()> {
    let hundred = T::from(100.0).unwrap();
    if !(p >= T::zero() && p <= hundred) {
        return Err(SimError::InvalidArgument(format!(
            "percentile must lie in [0, 100], got {:?}",
            p.to_f64()
        )));
    }
    Ok(())
}

/// Nearest-rank percentile of already sorted data: the element at 1-based
/// rank `ceil(p * n / 100)`, with rank 0 clamped to the first element.
pub fn percentile_sorted<T: Float>(sorted: &[T], p: T) -> Result<T> {
    if sorted.is_empty() {
        return Err(SimError::InvalidArgument(
            "percentile of empty data".into(),
        ));
    }
    check_p(p)?;
    let n = T::from(sorted.len()).unwrap();
    let rank = (p * n / T::from(100.0).unwrap()).ceil();
    let rank = rank.to_usize().unwrap_or(0).clamp(1, sorted.len());
    Ok(sorted[rank - 1])
}

fn sorted_copy<T: Float>(data: &[T]) -> Result<Vec<T>> {
    if data.iter().any(|x| x.is_nan()) {
        return Err(SimError::InvalidArgument("NaN in percentile data".into()));
    }
    let mut v = data.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("NaN filtered above"));
    Ok(v)
}

pub fn percentile<T: Float>(data: &[T], p: T) -> Result<T> {
    if data.is_empty() {
        return Err(SimError::InvalidArgument(
            "percentile of empty data".into(),
        ));
    }
    percentile_sorted(&sorted_copy(data)?, p)
}

pub fn boxplot<T: Float>(data: &[T]) -> Result<BoxplotSummary<T>> {
    if data.is_empty() {
        return Err(SimError::InvalidArgument("boxplot of empty data".into()));
    }
    let v = sorted_copy(data)?;
    let at = |p: f64| percentile_sorted(&v, T::from(p).unwrap());
    Ok(BoxplotSummary {
        p5: at(5.0)?,
        p25: at(25.0)?,
        p50: at(50.0)?,
        p75: at(75.0)?,
        p95: at(95.0)?,
    })
}

pub fn mean<T: Float>(data: &[T]) -> Option<T> {
    if data.is_empty() {
        return None;
    }
    let sum = data.iter().fold(T::zero(), |acc, &x| acc + x);
    Some(sum / T::from(data.len()).unwrap())
}
