//! Counter-based splittable random streams.
//!
//! Draw i of stream (seed, stream_id) is a pure function
//! `mix(mix(mix(seed) + stream_id·Γ₁) + i·Γ₂)` of its key, so any worker can
//! generate any draw in any order and the output never depends on thread
//! scheduling. `mix` is the 64-bit finalizer used by splitmix-style
//! generators.

/// Well-separated odd constants feeding the finalizer.
const GAMMA_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;
const GAMMA_DRAW: u64 = 0xD1B5_4A32_D192_ED03;

const TWO_NEG_53: f64 = 1.0 / ((1u64 << 53) as f64);

#[inline]
fn mix(mut x: u64) -> u64 {
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Stream-id namespaces, one per independent consumer of randomness.
pub mod domains {
    pub const SIMDAT: u32 = 1;
    pub const POSTPI: u32 = 2;
    pub const STUDY: u32 = 3;
    pub const TRUTH: u32 = 4;
}

/// Compose a stream id from a domain tag and an index within the domain.
pub fn stream_id(domain: u32, index: u32) -> u64 {
    ((domain as u64) << 32) | index as u64
}

/// A value-object random stream: (seed, stream_id) fully determine every
/// draw. Cloning with a fresh stream_id is the only sanctioned way to
/// parallelize randomness.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    base: u64,
    counter: u64,
    spare_normal: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let base = mix(mix(seed).wrapping_add(stream_id.wrapping_mul(GAMMA_STREAM)));
        RngStream {
            seed,
            stream_id,
            base,
            counter: 0,
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn next_u64(&mut self) -> u64 {
        let v = mix(self.base.wrapping_add(self.counter.wrapping_mul(GAMMA_DRAW)));
        self.counter += 1;
        v
    }

    /// Uniform on [0, 1) with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_NEG_53
    }

    /// Uniform on (0, 1] — safe for logarithms.
    fn next_open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * TWO_NEG_53
    }

    /// Standard normal via Box–Muller; the paired draw is cached.
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.next_open01();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Uniform index in {0, …, n−1} via the 128-bit multiply-shift map.
    pub fn next_index(&mut self, n: usize) -> usize {
        assert!(n > 0, "next_index needs a non-empty range");
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }
}

/// n i.i.d. uniform draws from {0, …, n−1}: one bootstrap resample.
pub fn resample_indices(n: usize, rng: &mut RngStream) -> Vec<usize> {
    assert!(n >= 1, "resample needs at least one row");
    (0..n).map(|_| rng.next_index(n)).collect()
}

/// Derive a child seed from (seed, stream_id); used to key nested generators
/// (per-replicate datasets, per-fit bootstraps) off one top-level seed.
pub fn derive_seed(seed: u64, id: u64) -> u64 {
    RngStream::new(seed, id).next_u64()
}
