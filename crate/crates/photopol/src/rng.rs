//! Counter-based random streams.
//!
//! The renderer derives one Gaussian sample per (light, channel, angle,
//! pixel) from the scene seed and a stream counter, so output is identical
//! no matter how work is scheduled across threads. The same generator backs
//! pixel subsampling and optimiser restarts.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(GOLDEN);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a seed with a stream id into a fresh 64-bit state.
#[inline]
pub fn mix(seed: u64, stream: u64) -> u64 {
    splitmix(seed ^ stream.wrapping_mul(GOLDEN))
}

#[inline]
fn to_unit(bits: u64) -> f64 {
    // 53 mantissa bits, uniform in [0, 1)
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal sample for `(seed, stream)` via Box-Muller.
#[inline]
pub fn gaussian(seed: u64, stream: u64) -> f64 {
    let s = mix(seed, stream);
    let u1 = 1.0 - to_unit(s); // (0, 1]
    let u2 = to_unit(splitmix(s));
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Small sequential generator for subsampling and restart draws.
#[derive(Debug, Clone)]
pub struct Stream {
    state: u64,
}

impl Stream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Stream { state: mix(seed, stream) }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = splitmix(self.state);
        self.state
    }

    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        to_unit(self.next_u64())
    }

    /// Uniform integer in `[0, n)`.
    #[inline]
    pub fn next_below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_f64() * n as f64) as usize % n
    }

    /// Seeded partial Fisher-Yates: `k` distinct draws from `0..n`.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<u32> {
        let k = k.min(n);
        let mut pool: Vec<u32> = (0..n as u32).collect();
        for i in 0..k {
            let j = i + self.next_below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}
