//! Deterministic, forkable random streams.
//!
//! A stream is a ChaCha8 keystream addressed by `(seed, word position)`, so the
//! position within the stream doubles as a draw counter. Forks derive a fresh
//! key from the parent seed and a label only, never from the parent's current
//! position, which lets coupled runs replay identical index sequences.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// FNV-1a over the label bytes. Stable across platforms and toolchains.
pub fn label_hash(label: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    label
        .bytes()
        .fold(OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

#[derive(Clone, Debug)]
pub struct RandomStream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of 32-bit words consumed so far.
    pub fn counter(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// Independent substream identified by `label`.
    pub fn fork(&self, label: &str) -> Self {
        Self::new(derive_seed(self.seed, label_hash(label)))
    }

    /// Independent substream identified by `(label, index)`, e.g. one per trial.
    pub fn fork_indexed(&self, label: &str, index: u64) -> Self {
        let key = label_hash(label) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(17);
        Self::new(derive_seed(self.seed, key))
    }

    /// Uniform index in `0..n`. `n` must be positive.
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        self.rng.gen_range(0..n)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform point in the Euclidean ball of the given radius.
    pub fn in_ball(&mut self, dim: usize, radius: f64) -> Vec<f64> {
        if dim == 0 {
            return Vec::new();
        }
        let mut v: Vec<f64> = (0..dim).map(|_| self.normal()).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let r = radius * self.uniform().powf(1.0 / dim as f64);
        if norm > 0.0 {
            v.iter_mut().for_each(|a| *a *= r / norm);
        }
        v
    }

    /// Uniformly distributed unit vector.
    pub fn unit_vector(&mut self, dim: usize) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| self.normal()).collect();
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 0.0 {
                return v.into_iter().map(|a| a / norm).collect();
            }
        }
    }

    /// `k` distinct indices from `0..n`, in draw order.
    pub fn choose_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.rng, n, k.min(n)).into_vec()
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

fn derive_seed(seed: u64, key: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(key);
    rng.next_u64()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_draws() {
        let mut a = RandomStream::new(7);
        let mut b = RandomStream::new(7);
        for _ in 0..100_000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn fork_ignores_parent_position() {
        let a = RandomStream::new(3);
        let mut b = RandomStream::new(3);
        for _ in 0..17 {
            b.next_u64();
        }
        let mut fa = a.fork("solver");
        let mut fb = b.fork("solver");
        assert_eq!(fa.next_u64(), fb.next_u64());
    }

    #[test]
    fn distinct_labels_give_distinct_streams() {
        let root = RandomStream::new(11);
        let mut a = root.fork("data");
        let mut b = root.fork("solver");
        let xs: Vec<u64> = (0..64).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..64).map(|_| b.next_u64()).collect();
        assert!(xs.iter().all(|x| !ys.contains(x)));
        let mut c = root.fork_indexed("trial", 0);
        let mut d = root.fork_indexed("trial", 1);
        assert_ne!(c.next_u64(), d.next_u64());
    }

    #[test]
    fn counter_tracks_consumption() {
        let mut s = RandomStream::new(1);
        assert_eq!(s.counter(), 0);
        s.next_u64();
        assert_eq!(s.counter(), 2);
    }

    #[test]
    fn in_ball_respects_radius() {
        let mut s = RandomStream::new(5);
        for _ in 0..1000 {
            let v = s.in_ball(4, 2.5);
            assert!(v.iter().map(|a| a * a).sum::<f64>().sqrt() <= 2.5 + 1e-12);
        }
    }
}
