//! Fixed-seed splittable pseudo-random generator.
//!
//! Every stochastic choice in the crate (weight init, data generation,
//! shuffling) draws from this generator, so a run is fully determined by its
//! seed. `split` derives an independent child stream from the construction
//! seed and a label; splitting does not advance the parent, and the result
//! does not depend on how much the parent has already been consumed. That
//! property is what keeps identically named parameters identical across
//! architectures that share blocks.

/// SplitMix64 stream with label-based splitting.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    state: u64,
    spare_normal: Option<f32>,
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash_label(label: &str) -> u64 {
    // FNV-1a, folded through the SplitMix finalizer.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix(h)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed, state: seed, spare_normal: None }
    }

    /// Child stream keyed on this generator's seed and `label`.
    pub fn split(&self, label: &str) -> Rng {
        Rng::new(mix(self.seed ^ hash_label(label)))
    }

    /// Child stream keyed on this generator's seed and an index.
    pub fn split_index(&self, index: u64) -> Rng {
        Rng::new(mix(self.seed ^ mix(index.wrapping_add(GOLDEN))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f32 {
        ((self.next_u64() >> 40) as f32) * (1.0 / (1u64 << 24) as f32)
    }

    pub fn uniform_in(&mut self, lo: f32, hi: f32) -> f32 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n).
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f32 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        loop {
            let u1 = self.uniform();
            let u2 = self.uniform();
            if u1 <= f32::EPSILON {
                continue;
            }
            let r = (-2.0 * u1.ln()).sqrt();
            let theta = 2.0 * std::f32::consts::PI * u2;
            self.spare_normal = Some(r * theta.sin());
            return r * theta.cos();
        }
    }

    /// Normal(0, std) resampled until within two standard deviations.
    pub fn trunc_normal(&mut self, std: f32) -> f32 {
        loop {
            let z = self.normal();
            if z.abs() <= 2.0 {
                return z * std;
            }
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.index(i + 1);
            xs.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn split_is_consumption_independent() {
        let mut a = Rng::new(3);
        let b = Rng::new(3);
        for _ in 0..17 {
            a.next_u64();
        }
        assert_eq!(a.split("w").next_u64(), b.split("w").next_u64());
        assert_ne!(b.split("w").next_u64(), b.split("v").next_u64());
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut rng = Rng::new(11);
        for _ in 0..10_000 {
            let u = rng.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn trunc_normal_bounded() {
        let mut rng = Rng::new(5);
        for _ in 0..10_000 {
            assert!(rng.trunc_normal(0.02).abs() <= 0.04 + 1e-7);
        }
    }

    #[test]
    fn shuffle_is_permutation() {
        let mut rng = Rng::new(9);
        let mut xs: Vec<u32> = (0..50).collect();
        rng.shuffle(&mut xs);
        let mut sorted = xs.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }
}
