//! Seedable random streams and the traffic distributions used by the
//! bundled scenarios.
//!
//! Every stream is a ChaCha8 generator keyed by `(seed, stream_id)`. Distinct
//! stream ids select distinct ChaCha streams, so a stream's variates depend
//! only on its own key and on how many values were drawn from it.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};

use crate::error::{Result, SimError};

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Rewinds the stream to its initial state.
    pub fn reset(&mut self) {
        *self = Self::new(self.seed, self.stream_id);
    }

    /// Uniform real in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform real in `[lo, hi)`. Returns `lo` when the interval is empty.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[lo, hi]` (inclusive).
    pub fn uniform_int(&mut self, lo: u64, hi: u64) -> u64 {
        if hi <= lo {
            return lo;
        }
        self.rng.random_range(lo..=hi)
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "cannot draw an index from an empty range");
        self.rng.random_range(0..n)
    }

    pub fn exp(&mut self, dist: &Exponential) -> f64 {
        dist.sample(self)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Exponential distribution with a validated rate.
#[derive(Debug, Clone, Copy)]
pub struct Exponential {
    rate: f64,
    inner: Exp<f64>,
}

impl Exponential {
    pub fn new(rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(SimError::InvalidArgument(format!(
                "exponential rate must be positive and finite, got {rate}"
            )));
        }
        let inner = Exp::new(rate).map_err(|e| SimError::InvalidArgument(e.to_string()))?;
        Ok(Self { rate, inner })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn mean(&self) -> f64 {
        1.0 / self.rate
    }

    pub fn sample(&self, stream: &mut RngStream) -> f64 {
        self.inner.sample(stream)
    }
}

/// One exponential variate with mean `1 / rate`.
pub fn sample_exp(stream: &mut RngStream, rate: f64) -> Result<f64> {
    Ok(Exponential::new(rate)?.sample(stream))
}

/// Packet sizes of the AMS-IX trimodal mix, in bytes.
pub const TRIMODAL_SIZES: [u32; 3] = [40, 576, 1500];
/// Weights of [`TRIMODAL_SIZES`] out of twelve.
pub const TRIMODAL_WEIGHTS: [u32; 3] = [7, 4, 1];
/// Mean trimodal packet size: `(7*40 + 4*576 + 1500) / 12`.
pub const TRIMODAL_MEAN_BYTES: f64 = 4084.0 / 12.0;

/// A packet drawn from the trimodal size mix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TrimodalPacket {
    pub size: u32,
}

impl TrimodalPacket {
    pub fn bits(&self) -> f64 {
        f64::from(self.size) * 8.0
    }

    /// Serialization time on a link of `rate_bps` bits per second.
    pub fn tx_time(&self, rate_bps: f64) -> f64 {
        self.bits() / rate_bps
    }
}

pub fn sample_trimodal(stream: &mut RngStream) -> TrimodalPacket {
    let size = match stream.uniform_int(0, 11) {
        0..=6 => 40,
        7..=10 => 576,
        _ => 1500,
    };
    TrimodalPacket { size }
}

/// Zero-truncated Poisson burst lengths.
#[derive(Debug, Clone, Copy)]
pub struct BurstLength {
    mean_len: f64,
    poisson: Poisson<f64>,
}

impl BurstLength {
    pub fn new(mean_len: f64) -> Result<Self> {
        if !(mean_len > 0.0 && mean_len.is_finite()) {
            return Err(SimError::InvalidArgument(format!(
                "burst mean length must be positive, got {mean_len}"
            )));
        }
        let poisson =
            Poisson::new(mean_len).map_err(|e| SimError::InvalidArgument(e.to_string()))?;
        Ok(Self { mean_len, poisson })
    }

    /// Mean of the untruncated Poisson law.
    pub fn poisson_mean(&self) -> f64 {
        self.mean_len
    }

    /// Mean of the truncated law, `m / (1 - e^-m)`.
    pub fn mean(&self) -> f64 {
        self.mean_len / (1.0 - (-self.mean_len).exp())
    }

    pub fn sample(&self, stream: &mut RngStream) -> u64 {
        loop {
            let k = self.poisson.sample(stream) as u64;
            if k >= 1 {
                return k;
            }
        }
    }

    /// Mean burst size in bytes with trimodal packets.
    pub fn mean_bytes(&self) -> f64 {
        self.mean() * TRIMODAL_MEAN_BYTES
    }
}

/// A burst of trimodal packets whose length is zero-truncated Poisson.
pub fn sample_burst(stream: &mut RngStream, mean_len: f64) -> Result<Vec<TrimodalPacket>> {
    let len = BurstLength::new(mean_len)?.sample(stream);
    Ok((0..len).map(|_| sample_trimodal(stream)).collect())
}

/// Stream id layout shared by the environment: the generator index lives in
/// the upper half, the per-generator purpose in the lower half.
pub fn stream_key(owner: u32, slot: u32) -> u64 {
    (u64::from(owner) << 32) | u64::from(slot)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_mean_close_to_inverse_rate() {
        let mut s = RngStream::new(7, 0);
        let n = 1_000_000;
        let mean = (0..n).map(|_| sample_exp(&mut s, 2.0).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() / 0.5 < 0.01, "mean {mean}");
    }

    #[test]
    fn reset_replays_variates() {
        let mut s = RngStream::new(11, 3);
        let a = sample_exp(&mut s, 1.0).unwrap();
        s.reset();
        let b = sample_exp(&mut s, 1.0).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn huge_rate_stays_positive() {
        let mut s = RngStream::new(1, 1);
        for _ in 0..10_000 {
            let x = sample_exp(&mut s, 1e9).unwrap();
            assert!(x > 0.0 && x.is_finite());
        }
    }

    #[test]
    fn rejects_bad_rates() {
        let mut s = RngStream::new(1, 1);
        assert!(sample_exp(&mut s, 0.0).is_err());
        assert!(sample_exp(&mut s, -1.0).is_err());
        assert!(sample_exp(&mut s, f64::NAN).is_err());
        assert!(sample_burst(&mut s, 0.0).is_err());
    }

    #[test]
    fn trimodal_support_and_frequencies() {
        let mut s = RngStream::new(5, 9);
        let n = 1_200_000u64;
        let mut small = 0u64;
        let mut total = 0u64;
        for _ in 0..n {
            let p = sample_trimodal(&mut s);
            assert!(TRIMODAL_SIZES.contains(&p.size));
            if p.size == 40 {
                small += 1;
            }
            total += u64::from(p.size);
        }
        // Binomial(n, 7/12): mean 7e5, sigma = sqrt(n p (1 - p)).
        let sigma = (n as f64 * 7.0 / 12.0 * 5.0 / 12.0).sqrt();
        assert!((small as f64 - 700_000.0).abs() <= 3.0 * sigma, "small {small}");
        let mean = total as f64 / n as f64;
        assert!((mean - 340.333).abs() / 340.333 < 0.01, "mean {mean}");
    }

    #[test]
    fn bursts_are_never_empty_and_average_twenty() {
        let mut s = RngStream::new(3, 4);
        let n = 200_000;
        let mut len_sum = 0usize;
        let mut byte_sum = 0u64;
        for _ in 0..n {
            let b = sample_burst(&mut s, 20.0).unwrap();
            assert!(!b.is_empty());
            len_sum += b.len();
            byte_sum += b.iter().map(|p| u64::from(p.size)).sum::<u64>();
        }
        let mean_len = len_sum as f64 / n as f64;
        let expected = 20.0 / (1.0 - (-20.0f64).exp());
        assert!((mean_len - expected).abs() / expected < 0.005, "len {mean_len}");
        let mean_bytes = byte_sum as f64 / n as f64;
        assert!((mean_bytes - 6806.67).abs() / 6806.67 < 0.01, "bytes {mean_bytes}");
    }

    #[test]
    fn streams_are_independent_of_neighbours() {
        let draw = |seed_a: u64, seed_b: u64| {
            let _a = RngStream::new(seed_a, 0).uniform();
            let _b = RngStream::new(seed_b, 1).uniform();
            RngStream::new(99, 2).uniform()
        };
        assert_eq!(draw(1, 2).to_bits(), draw(2, 1).to_bits());
        let x = RngStream::new(99, 2).uniform();
        let y = RngStream::new(99, 3).uniform();
        assert_ne!(x.to_bits(), y.to_bits());
    }
}
