//! Deterministic random-number plumbing.
//!
//! Monte Carlo work is split into fixed-size chunks; chunk `i` draws from its
//! own counter-based ChaCha stream derived from `(seed, i)`, and partial
//! results are merged in chunk order. Estimates are therefore bit-identical
//! no matter how many worker threads execute the chunks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Number of draws evaluated per RNG substream.
pub const MC_CHUNK: u64 = 4096;

/// The ChaCha substream for one `(seed, stream)` pair.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Welford accumulator for one chunk of Monte Carlo draws.
///
/// Welford keeps the second moment exactly zero for a constant integrand,
/// so zero-variance estimates report a standard error of exactly 0.
#[derive(Clone, Copy, Debug, Default)]
pub struct ChunkStats {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl ChunkStats {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Chan's pairwise merge; exact when both sides carry the same constant.
    pub fn merge(&mut self, other: &ChunkStats) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let total = self.count + other.count;
        let delta = other.mean - self.mean;
        self.mean += delta * (other.count as f64 / total as f64);
        self.m2 += other.m2
            + delta * delta * (self.count as f64 * other.count as f64 / total as f64);
        self.count = total;
    }
}

/// Merged view over all chunks with the sample mean and its standard error.
#[derive(Clone, Copy, Debug)]
pub struct McSummary {
    pub mean: f64,
    pub std_error: f64,
    pub count: u64,
}

impl From<ChunkStats> for McSummary {
    fn from(s: ChunkStats) -> Self {
        let std_error = if s.count > 1 {
            (s.m2.max(0.0) / (s.count - 1) as f64 / s.count as f64).sqrt()
        } else {
            0.0
        };
        McSummary {
            mean: s.mean,
            std_error,
            count: s.count,
        }
    }
}

/// Runs `n_samples` Monte Carlo draws split into [`MC_CHUNK`]-sized chunks.
///
/// `body(rng, stats, n)` must push exactly `n` values drawn from `rng`.
/// Chunks may run on any number of rayon workers; the reduction folds them
/// in index order, so the result is independent of thread count.
pub fn run_chunked_mc<F>(seed: u64, n_samples: u64, body: F) -> McSummary
where
    F: Fn(&mut ChaCha8Rng, &mut ChunkStats, u64) + Sync,
{
    let n_chunks = n_samples.div_ceil(MC_CHUNK);
    let partials: Vec<ChunkStats> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = substream(seed, chunk);
            let mut stats = ChunkStats::default();
            let n = MC_CHUNK.min(n_samples - chunk * MC_CHUNK);
            body(&mut rng, &mut stats, n);
            debug_assert_eq!(stats.count, n);
            stats
        })
        .collect();

    let mut merged = ChunkStats::default();
    for p in &partials {
        merged.merge(p);
    }
    merged.into()
}

/// Inverse-CDF sampler over a finite distribution; zero-mass outcomes are
/// never produced.
#[derive(Clone, Debug)]
pub struct CatSampler {
    /// (cumulative probability, outcome index) over the support only.
    cdf: Vec<(f64, usize)>,
}

impl CatSampler {
    pub fn new(probs: &[f64]) -> Self {
        let mut cdf = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                cdf.push((acc, i));
            }
        }
        debug_assert!(!cdf.is_empty(), "distribution has empty support");
        // guard against the cumulative sum landing a hair below 1
        if let Some(last) = cdf.last_mut() {
            last.0 = f64::INFINITY;
        }
        Self { cdf }
    }

    #[inline]
    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> usize {
        let r: f64 = rng.gen();
        let pos = self.cdf.partition_point(|&(c, _)| c <= r);
        self.cdf[pos].1
    }
}
