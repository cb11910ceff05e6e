//! Philox4x32-10 counter-based generator and the Gaussian streams built on it.
//!
//! Entry `k` of tensor `t` (row-major) is a pure function of `(seed, t, k)`:
//! block `b = k / 2` is `philox([b_lo, b_hi, t, 0], [seed_lo, seed_hi])`, its
//! four words form two 53-bit uniforms, and Box-Muller turns those into the
//! normals for entries `2b` and `2b + 1`.

const M0: u32 = 0xD251_1F53;
const M1: u32 = 0xCD9E_8D57;
const W0: u32 = 0x9E37_79B9;
const W1: u32 = 0xBB67_AE85;
const ROUNDS: usize = 10;

#[inline(always)]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = a as u64 * b as u64;
    ((p >> 32) as u32, p as u32)
}

/// One Philox4x32-10 block.
pub fn philox4x32(mut ctr: [u32; 4], mut key: [u32; 2]) -> [u32; 4] {
    for round in 0..ROUNDS {
        if round > 0 {
            key[0] = key[0].wrapping_add(W0);
            key[1] = key[1].wrapping_add(W1);
        }
        let (hi0, lo0) = mulhilo(M0, ctr[0]);
        let (hi1, lo1) = mulhilo(M1, ctr[2]);
        ctr = [hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0];
    }
    ctr
}

/// Uniform in `[0, 1)` from the top 53 bits of two words.
#[inline]
pub fn uniform53(a: u32, b: u32) -> f64 {
    let bits = ((a as u64) << 21) ^ ((b as u64) >> 11);
    bits as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Identifies which tensor a stream fills.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Stream {
    Query = 0,
    Key = 1,
    Value = 2,
    /// Upstream gradient `dO` used by benchmark backward passes.
    Upstream = 3,
}

/// Standard normals for one `(seed, stream)` pair, addressable by index.
#[derive(Debug, Clone, Copy)]
pub struct GaussianStream {
    key: [u32; 2],
    stream: u32,
}

impl GaussianStream {
    pub fn new(seed: u64, stream: Stream) -> Self {
        Self {
            key: [seed as u32, (seed >> 32) as u32],
            stream: stream as u32,
        }
    }

    /// The two normals of block `b`.
    pub fn pair(&self, b: u64) -> (f64, f64) {
        let w = philox4x32([b as u32, (b >> 32) as u32, self.stream, 0], self.key);
        // 1 - u lies in (0, 1], so the log is finite.
        let u1 = 1.0 - uniform53(w[0], w[1]);
        let u2 = uniform53(w[2], w[3]);
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        (r * c, r * s)
    }

    pub fn get(&self, k: u64) -> f64 {
        let (a, b) = self.pair(k / 2);
        if k % 2 == 0 {
            a
        } else {
            b
        }
    }

    /// Entries `0..len` in order.
    pub fn fill(&self, out: &mut [f64]) {
        for (b, chunk) in out.chunks_mut(2).enumerate() {
            let (x, y) = self.pair(b as u64);
            chunk[0] = x;
            if let Some(slot) = chunk.get_mut(1) {
                *slot = y;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_answers() {
        assert_eq!(
            philox4x32([0; 4], [0; 2]),
            [0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8]
        );
        assert_eq!(
            philox4x32([u32::MAX; 4], [u32::MAX; 2]),
            [0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd]
        );
        assert_eq!(
            philox4x32(
                [0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344],
                [0xa4093822, 0x299f31d0]
            ),
            [0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1]
        );
    }

    #[test]
    fn uniform_range() {
        assert_eq!(uniform53(0, 0), 0.0);
        let top = uniform53(u32::MAX, u32::MAX);
        assert!(top < 1.0 && top > 1.0 - 1e-15);
    }

    #[test]
    fn fill_matches_random_access() {
        let s = GaussianStream::new(0x1234_5678_9abc_def0, Stream::Key);
        let mut v = vec![0.0; 11];
        s.fill(&mut v);
        for (k, &x) in v.iter().enumerate() {
            assert_eq!(x, s.get(k as u64));
        }
    }

    #[test]
    fn streams_differ() {
        let a = GaussianStream::new(7, Stream::Query).get(0);
        let b = GaussianStream::new(7, Stream::Key).get(0);
        let c = GaussianStream::new(8, Stream::Query).get(0);
        assert!(a != b && a != c);
    }

    #[test]
    fn moments() {
        let s = GaussianStream::new(99, Stream::Value);
        let mut v = vec![0.0; 200_000];
        s.fill(&mut v);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }
}
