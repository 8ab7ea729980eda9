//! Counter-based random streams.
//!
//! Every stream is addressed by a `(seed, stream_index)` pair, so trial `j`
//! of a run always sees the same numbers no matter how the trials are
//! partitioned across threads or runs. Output `i` of a stream is the
//! SplitMix64 finalizer applied to `key + (i + 1) * GOLDEN`, i.e. a bijective
//! hash of the counter.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const STREAM_DOMAIN: u64 = 0xD1B5_4A32_D192_ED03;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct StreamRng {
    key: u64,
    counter: u64,
}

impl StreamRng {
    /// Stream `index` under `seed`. Distinct indices give decorrelated keys.
    pub fn new(seed: u64, index: u64) -> Self {
        let key = mix64(seed ^ mix64(index.wrapping_mul(GOLDEN) ^ STREAM_DOMAIN));
        Self { key, counter: 0 }
    }

    /// Derive an independent seed for a named sub-purpose (bootstrap, fit restarts, ...).
    pub fn derive_seed(seed: u64, purpose: u64) -> u64 {
        mix64(mix64(seed) ^ purpose.wrapping_mul(STREAM_DOMAIN))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform on [0, 1), 53-bit resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on (0, 1].
    #[inline]
    pub fn uniform_open0(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n` (Lemire's multiply-shift with rejection).
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = (self.next_u64() as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    /// Number of failures before the first success when each attempt fails
    /// with probability `ratio`; P(k) = (1 - ratio) ratio^k. Exact inversion.
    pub fn geometric(&mut self, ratio: f64) -> u64 {
        if ratio <= 0.0 {
            return 0;
        }
        let u = self.uniform_open0();
        let k = (u.ln() / ratio.ln()).floor();
        if k >= u64::MAX as f64 {
            u64::MAX
        } else {
            k as u64
        }
    }

    /// Poisson variate by sequential inversion. Means above 30 are split into
    /// pieces (Poisson additivity) so `exp(-mean)` never underflows.
    pub fn poisson(&mut self, mean: f64) -> u64 {
        const PIECE: f64 = 30.0;
        if mean <= 0.0 {
            return 0;
        }
        let mut remaining = mean;
        let mut total = 0;
        while remaining > PIECE {
            total += self.poisson_inversion(PIECE);
            remaining -= PIECE;
        }
        total + self.poisson_inversion(remaining)
    }

    fn poisson_inversion(&mut self, mean: f64) -> u64 {
        let u = self.uniform();
        let mut term = (-mean).exp();
        let mut cdf = term;
        let mut k = 0u64;
        while u >= cdf {
            k += 1;
            term *= mean / k as f64;
            if term < f64::MIN_POSITIVE {
                break;
            }
            cdf += term;
        }
        k
    }
}
