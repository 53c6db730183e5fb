//! Counter-based pseudo-random number generation.
//!
//! One 64-bit master seed drives every stochastic stage. Streams are
//! counter-based (SplitMix64 applied to `seed + i * GAMMA`), so the i-th
//! output depends only on the seed and the counter, and named substreams let
//! independent consumers draw without perturbing each other.

/// Weyl-sequence increment for the SplitMix64 counter (golden-ratio * 2^64).
const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer: bijective 64-bit mix.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a hash of a label, for deriving substream keys from names.
fn hash_label(label: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for byte in label.bytes() {
        h ^= u64::from(byte);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Derive a child seed from a parent seed and a label.
///
/// Used both for per-module substreams and for per-stage seeds in the
/// pipeline, so adding a stage never shifts another stage's stream.
pub fn derive_seed(parent: u64, label: &str) -> u64 {
    mix(parent ^ hash_label(label))
}

/// Deterministic counter-based PRNG (SplitMix64 over a Weyl sequence).
///
/// The i-th output is `mix(seed + (i+1) * GAMMA)`; identical seeds give
/// bit-identical streams on every platform.
#[derive(Debug, Clone)]
pub struct Prng {
    state: u64,
}

impl Prng {
    pub fn new(seed: u64) -> Self {
        Prng { state: seed }
    }

    /// A named, independent substream of this generator's seed.
    ///
    /// Substreams are derived from the *initial* seed semantics of the label
    /// only; drawing from the parent does not affect children created later
    /// with the same label on a fresh parent.
    pub fn substream(&self, label: &str) -> Prng {
        Prng::new(derive_seed(self.state, label))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        mix(self.state)
    }

    /// Collapse the stream into one seed value for a child component.
    pub fn next_seed(mut self) -> u64 {
        self.next_u64()
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in the open interval `(0, 1]`; safe as a log argument.
    fn uniform_open(&mut self) -> f64 {
        1.0 - self.uniform()
    }

    /// Unbiased integer draw in `[0, n)` via 128-bit widening multiply.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        (((self.next_u64() as u128) * (n as u128)) >> 64) as usize
    }

    /// Standard normal draw via Box-Muller.
    ///
    /// Two uniforms per draw, cosine branch only: deterministic, platform
    /// independent, and free of rejection loops.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform_open();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// `k` distinct indices drawn from `0..n`, returned in ascending order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot sample {k} of {n}");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        let mut picked = pool[..k].to_vec();
        picked.sort_unstable();
        picked
    }

    /// Fisher-Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        for i in 0..n.saturating_sub(1) {
            let j = i + self.below(n - i);
            order.swap(i, j);
        }
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_seed_identical_stream() {
        let mut a = Prng::new(42);
        let mut b = Prng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn substreams_are_independent_of_sibling_creation() {
        let root = Prng::new(7);
        let a1 = root.substream("diffusion");
        let _other = root.substream("timegan");
        let a2 = root.substream("diffusion");
        assert_eq!(a1.state, a2.state);
        assert_ne!(a1.state, root.substream("trees").state);
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut rng = Prng::new(3);
        for _ in 0..10_000 {
            let u = rng.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn normal_moments_are_plausible() {
        let mut rng = Prng::new(11);
        let n = 200_000;
        let draws: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn below_is_in_range_and_covers() {
        let mut rng = Prng::new(5);
        let mut seen = [false; 7];
        for _ in 0..1000 {
            seen[rng.below(7)] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn sample_indices_distinct_sorted() {
        let mut rng = Prng::new(9);
        for _ in 0..100 {
            let picked = rng.sample_indices(7, 3);
            assert_eq!(picked.len(), 3);
            assert!(picked.windows(2).all(|w| w[0] < w[1]));
            assert!(picked.iter().all(|&i| i < 7));
        }
    }

    #[test]
    fn permutation_rearranges_all_indices() {
        let mut rng = Prng::new(13);
        let mut order = rng.permutation(20);
        assert_ne!(order, (0..20).collect::<Vec<_>>());
        order.sort_unstable();
        assert_eq!(order, (0..20).collect::<Vec<_>>());
        assert_eq!(rng.permutation(0), Vec::<usize>::new());
    }
}
