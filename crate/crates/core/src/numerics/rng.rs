use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Counter-addressed random stream.
///
/// The position of a stream is fully described by `(seed, stream, counter)`,
/// where `counter` counts 64-bit draws; reconstructing a stream at the same
/// triple reproduces the same draws.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    counter: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::at(seed, 0, 0)
    }

    pub fn at(seed: u64, stream: u64, counter: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        inner.set_word_pos(u128::from(counter) * 2);
        RngStream {
            seed,
            stream,
            counter,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// An independent stream keyed by this stream's seed and `key`; does not
    /// advance `self`.
    pub fn fork(&self, key: u64) -> RngStream {
        RngStream::at(self.seed ^ self.stream.rotate_left(17), key.wrapping_add(1), 0)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter += 1;
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        (self.next_f64() * n as f64) as usize % n
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        (RngStream::next_u64(self) >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        RngStream::next_u64(self)
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        for chunk in dest.chunks_mut(8) {
            let v = RngStream::next_u64(self).to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> core::result::Result<(), rand_core::Error> {
        self.fill_bytes(dest);
        Ok(())
    }
}
