//! Counter-based deterministic random number generation.
//!
//! Every random value in the artifact derives from a single 64-bit seed
//! through this generator, so outputs are bit-reproducible across
//! platforms and independent of call interleaving within a stream.

/// SplitMix64 finalizer over an incrementing counter.
#[derive(Debug, Clone)]
pub struct CounterRng {
    seed: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        CounterRng { seed, counter: 0 }
    }

    /// Derives an independent stream for a named sub-component.
    pub fn stream(seed: u64, stream_id: u64) -> Self {
        CounterRng {
            seed: mix(seed ^ mix(stream_id)),
            counter: 0,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let v = mix(self.seed.wrapping_add(self.counter.wrapping_mul(0x9E3779B97F4A7C15)));
        self.counter += 1;
        v
    }

    /// Uniform f32 in [0, 1).
    pub fn next_f32(&mut self) -> f32 {
        // 24 high bits give an exactly representable dyadic fraction.
        (self.next_u64() >> 40) as f32 / (1u64 << 24) as f32
    }

    /// Uniform f32 in [lo, hi).
    pub fn uniform(&mut self, lo: f32, hi: f32) -> f32 {
        lo + (hi - lo) * self.next_f32()
    }

    pub fn fill_uniform(&mut self, out: &mut [f32], lo: f32, hi: f32) {
        for v in out {
            *v = self.uniform(lo, hi);
        }
    }
}

#[inline]
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}
