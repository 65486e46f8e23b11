use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use super::{Element, Tensor};

/// Counter-addressed random stream.
///
/// The value at position `counter` depends only on `(seed, counter)`, so a
/// stream can be checkpointed, split, or handed to another thread without
/// disturbing any other stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub counter: u64,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed, counter: 0 }
    }

    fn generator(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        // one u64 consumes two 32-bit words
        rng.set_word_pos(self.counter as u128 * 2);
        rng
    }

    /// Independent child stream identified by `tag`. Does not advance `self`.
    pub fn split(&self, tag: u64) -> RngStream {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&tag.to_le_bytes());
        key[16..24].copy_from_slice(b"rngsplit");
        let mut rng = ChaCha8Rng::from_seed(key);
        RngStream::new(rng.next_u64())
    }

    pub fn split_named(&self, name: &str) -> RngStream {
        self.split(fnv1a(name.as_bytes()))
    }

    pub fn next_u64s(&mut self, n: usize) -> Vec<u64> {
        let mut rng = self.generator();
        let out = (0..n).map(|_| rng.next_u64()).collect();
        self.counter += n as u64;
        out
    }

    /// Uniform draws in the half-open interval (0, 1].
    pub fn uniforms(&mut self, n: usize) -> Vec<f64> {
        self.next_u64s(n).into_iter().map(unit_open_closed).collect()
    }

    pub fn uniform(&mut self) -> f64 {
        self.uniforms(1)[0]
    }

    /// Integers uniform on `[lo, hi]` inclusive.
    pub fn integers(&mut self, lo: usize, hi: usize, n: usize) -> Vec<usize> {
        assert!(lo <= hi);
        let span = (hi - lo + 1) as u128;
        self.next_u64s(n)
            .into_iter()
            // multiply-shift range reduction; bias is < span / 2^64
            .map(|u| lo + ((u as u128 * span) >> 64) as usize)
            .collect()
    }

    /// Standard normal draws via Box–Muller; consumes two u64 per pair.
    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        let pairs = n.div_ceil(2);
        let raw = self.next_u64s(2 * pairs);
        let mut out = Vec::with_capacity(2 * pairs);
        for p in raw.chunks_exact(2) {
            let u1 = unit_open_closed(p[0]);
            let u2 = unit_open_closed(p[1]);
            let r = (-2.0 * u1.ln()).sqrt();
            let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
            out.push(r * c);
            out.push(r * s);
        }
        out.truncate(n);
        out
    }

    /// Tensor of i.i.d. standard normal entries.
    pub fn gaussian<T: Element>(&mut self, shape: &[usize]) -> Tensor<T> {
        let n = shape.iter().product();
        let data = self.normals(n).into_iter().map(T::of).collect();
        Tensor::new(data, shape).expect("shape product matches draw count")
    }
}

fn unit_open_closed(u: u64) -> f64 {
    ((u >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}
