use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::KernelError;

/// Purpose tags keep independent draws for the same (epoch, sentence) apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamKind {
    Decisions = 1,
    Dropout = 2,
    Shuffle = 3,
    Sample = 4,
    Init = 5,
}

/// Seeded random stream addressed by a counter key rather than by draw
/// order, so sentence k of epoch e sees the same numbers no matter how the
/// epoch is batched or sharded.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Stream for `(seed, kind, keys...)`.
    pub fn derive(seed: u64, kind: StreamKind, keys: &[u64]) -> Self {
        let mut h = splitmix(seed ^ (kind as u64).rotate_left(32));
        for &k in keys {
            h = splitmix(h ^ k);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        rng.set_stream(kind as u64);
        RngStream { rng }
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        // Box-Muller; one draw per call keeps the stream layout simple.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn inner(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// Draws index `i` with probability `p[i]`. Zero-mass entries are never
/// returned.
pub fn sample_categorical(p: &[f64], rng: &mut RngStream) -> Result<usize, KernelError> {
    if p.is_empty() || p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(KernelError::InvalidDistribution("negative or non-finite mass".into()));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(KernelError::InvalidDistribution(format!("mass sums to {total}")));
    }
    let u = rng.uniform() * total;
    let mut cum = 0.0;
    let mut last = 0;
    for (i, &v) in p.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        cum += v;
        last = i;
        if u < cum {
            return Ok(i);
        }
    }
    Ok(last)
}

/// Index of the largest entry among those allowed by `mask` (first on ties).
pub fn masked_argmax(x: &[f64], mask: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (&v, &m)) in x.iter().zip(mask).enumerate() {
        if m && best.map_or(true, |b| v > x[b]) {
            best = Some(i);
        }
    }
    best
}
