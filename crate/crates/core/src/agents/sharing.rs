use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::buffer::{Batch, Parts, ReplayBuffer};
use crate::clustering::SimilarityAllocation;
use crate::error::{Error, Result};

/// Scheme names as they appear in configuration files and CSV output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    Similarity,
    Global,
    None,
    SeedSampling,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 4] = [
        SchemeKind::Similarity,
        SchemeKind::Global,
        SchemeKind::None,
        SchemeKind::SeedSampling,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Similarity => "similarity",
            SchemeKind::Global => "global",
            SchemeKind::None => "none",
            SchemeKind::SeedSampling => "seed_sampling",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        SchemeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheme `{s}` (expected similarity, global, none or seed_sampling)")))
    }
}

impl std::fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// How agent `n` assembles its minibatch from the replay buffers.
#[derive(Debug, Clone)]
pub enum ShareScheme {
    /// Quotas `K̄_{n,q}` per source buffer.
    Similarity(SimilarityAllocation),
    /// Uniform over the union of all buffers.
    Global,
    /// Own buffer only.
    None,
    /// Union of all buffers, with a fixed per-learner reward offset.
    SeedSampling { offsets: Vec<f64> },
}

impl ShareScheme {
    pub fn kind(&self) -> SchemeKind {
        match self {
            ShareScheme::Similarity(_) => SchemeKind::Similarity,
            ShareScheme::Global => SchemeKind::Global,
            ShareScheme::None => SchemeKind::None,
            ShareScheme::SeedSampling { .. } => SchemeKind::SeedSampling,
        }
    }

    /// Draws one fixed offset `z_k ~ N(0, sd²)` per agent.
    pub fn seed_sampling<R: Rng + ?Sized>(agents: usize, sd: f64, rng: &mut R) -> Result<Self> {
        if !(sd >= 0.0) {
            return Err(Error::invalid("seed noise sd must be non-negative"));
        }
        let offsets = if sd == 0.0 {
            vec![0.0; agents]
        } else {
            let d = Normal::new(0.0, sd).map_err(|e| Error::invalid(e.to_string()))?;
            (0..agents).map(|_| d.sample(rng)).collect()
        };
        Ok(ShareScheme::SeedSampling { offsets })
    }

    /// Number of agents the scheme was built for, if it is agent-specific.
    pub fn agents(&self) -> Option<usize> {
        match self {
            ShareScheme::Similarity(a) => Some(a.agents()),
            ShareScheme::SeedSampling { offsets } => Some(offsets.len()),
            _ => None,
        }
    }
}

/// Minibatch for agent `n` plus the number of quota entries that had to be
/// moved to the own buffer because their source was empty.
#[derive(Debug, Clone)]
pub struct Minibatch {
    pub batch: Batch,
    pub reallocated: usize,
}

pub fn build_minibatch<R: Rng + ?Sized>(
    buffers: &[ReplayBuffer],
    scheme: &ShareScheme,
    n: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<Minibatch> {
    let own = buffers
        .get(n)
        .ok_or_else(|| Error::invalid(format!("agent {n} has no buffer ({} buffers)", buffers.len())))?;
    if own.is_empty() {
        return Err(Error::invalid(format!("buffer of agent {n} is empty")));
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be >= 1"));
    }
    if let Some(k) = scheme.agents() {
        if k != buffers.len() {
            return Err(Error::shape("build_minibatch", k, buffers.len()));
        }
    }
    let (sd, ad) = (own.state_dim(), own.action_dim());
    let mut parts = Parts::new(batch_size, sd, ad);
    let mut reallocated = 0;
    let draw = |parts: &mut Parts, q: usize, count: usize, offset: f64, rng: &mut R| {
        let buf = &buffers[q];
        for _ in 0..count {
            let i = rng.gen_range(0..buf.len());
            parts.push_from(buf, q, i, offset);
        }
    };
    match scheme {
        ShareScheme::None => draw(&mut parts, n, batch_size, 0.0, rng),
        ShareScheme::Similarity(alloc) => {
            let row = &alloc.k_bar[n];
            let mut own_extra = 0;
            for (q, &count) in row.iter().enumerate() {
                if count == 0 {
                    continue;
                }
                if buffers[q].is_empty() {
                    own_extra += count;
                    reallocated += count;
                    continue;
                }
                draw(&mut parts, q, count, 0.0, rng);
            }
            draw(&mut parts, n, own_extra, 0.0, rng);
        }
        ShareScheme::Global | ShareScheme::SeedSampling { .. } => {
            let offset = match scheme {
                ShareScheme::SeedSampling { offsets } => offsets[n],
                _ => 0.0,
            };
            let total: usize = buffers.iter().map(ReplayBuffer::len).sum();
            for _ in 0..batch_size {
                let mut i = rng.gen_range(0..total);
                let mut q = 0;
                while i >= buffers[q].len() {
                    i -= buffers[q].len();
                    q += 1;
                }
                parts.push_from(&buffers[q], q, i, offset);
            }
        }
    }
    let batch = parts.finish(sd, ad)?;
    if batch.len() != batch_size {
        return Err(Error::shape("build_minibatch", batch_size, batch.len()));
    }
    Ok(Minibatch { batch, reallocated })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::buffer::TransitionTuple;
    use crate::clustering::ResponsibilityMatrix;
    use crate::diffcore::Matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn filled(agents: usize, each: usize) -> Vec<ReplayBuffer> {
        (0..agents)
            .map(|q| {
                let mut b = ReplayBuffer::new(100, 1, 1).unwrap();
                for k in 0..each {
                    b.push(&TransitionTuple {
                        state: vec![q as f64],
                        action: vec![0.0],
                        reward: k as f64,
                        next_state: vec![q as f64],
                        terminal: false,
                    })
                    .unwrap();
                }
                b
            })
            .collect()
    }

    fn count_from(batch: &Batch, q: usize) -> usize {
        batch.sources.iter().filter(|&&s| s == q).count()
    }

    fn three_way() -> SimilarityAllocation {
        // identical responsibilities: every similarity is one, quotas 64 each
        let v = ResponsibilityMatrix::new(Matrix::filled(3, 1, 1.0)).unwrap();
        SimilarityAllocation::from_responsibilities(&v, 192).unwrap()
    }

    #[test]
    fn none_uses_own_buffer() {
        let bufs = filled(3, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mb = build_minibatch(&bufs, &ShareScheme::None, 1, 64, &mut rng).unwrap();
        assert_eq!(count_from(&mb.batch, 1), 64);
    }

    #[test]
    fn similarity_quotas_exact() {
        let bufs = filled(3, 10);
        let alloc = three_way();
        assert_eq!(alloc.k_bar[0], vec![64, 64, 64]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mb = build_minibatch(&bufs, &ShareScheme::Similarity(alloc), 0, 192, &mut rng).unwrap();
        for q in 0..3 {
            assert_eq!(count_from(&mb.batch, q), 64);
            assert!(mb.batch.states.as_slice().iter().zip(&mb.batch.sources).all(|(s, &src)| *s == src as f64));
        }
    }

    #[test]
    fn zero_quota_draws_nothing() {
        let bufs = filled(2, 5);
        let mut alloc = three_way();
        alloc.k_bar = vec![vec![10, 0], vec![5, 5]];
        alloc.k = Matrix::identity(2);
        alloc.k_hat = Matrix::identity(2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mb = build_minibatch(&bufs, &ShareScheme::Similarity(alloc), 0, 10, &mut rng).unwrap();
        assert_eq!(count_from(&mb.batch, 1), 0);
    }

    #[test]
    fn empty_source_is_reallocated() {
        let mut bufs = filled(3, 10);
        bufs[2] = ReplayBuffer::new(100, 1, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mb = build_minibatch(&bufs, &ShareScheme::Similarity(three_way()), 0, 192, &mut rng).unwrap();
        assert_eq!(mb.reallocated, 64);
        assert_eq!(count_from(&mb.batch, 0), 128);
        assert_eq!(mb.batch.len(), 192);
    }

    #[test]
    fn global_and_seed_sampling_sizes() {
        let bufs = filled(4, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for b in [1, 64, 192] {
            let mb = build_minibatch(&bufs, &ShareScheme::Global, 2, b, &mut rng).unwrap();
            assert_eq!(mb.batch.len(), b);
        }
        let scheme = ShareScheme::SeedSampling {
            offsets: vec![0.0, 0.0, 100.0, 0.0],
        };
        let mb = build_minibatch(&bufs, &scheme, 2, 50, &mut rng).unwrap();
        assert!(mb.batch.rewards.iter().all(|&r| (100.0..107.0).contains(&r)));
        let mb = build_minibatch(&bufs, &ShareScheme::Global, 2, 2000, &mut rng).unwrap();
        assert!((0..4).all(|q| count_from(&mb.batch, q) > 350));
    }

    #[test]
    fn seed_offsets_deterministic() {
        let a = ShareScheme::seed_sampling(5, 1.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = ShareScheme::seed_sampling(5, 1.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        match (a, b) {
            (ShareScheme::SeedSampling { offsets: x }, ShareScheme::SeedSampling { offsets: y }) => assert_eq!(x, y),
            _ => unreachable!(),
        }
    }

    #[test]
    fn errors() {
        let bufs = filled(2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(build_minibatch(&bufs, &ShareScheme::None, 5, 4, &mut rng).is_err());
        assert!(build_minibatch(&bufs, &ShareScheme::Similarity(three_way()), 0, 192, &mut rng).is_err());
        assert!(SchemeKind::parse("bogus").is_err());
        assert_eq!(SchemeKind::parse("seed_sampling").unwrap(), SchemeKind::SeedSampling);
    }
}
