//! Class-balanced sampling of (target, context, category) training triples.
//!
//! A batch picks distinct target nodes uniformly, then asks every target for
//! the same number of context nodes from each hop category. A target that
//! cannot fill its quota for a category hands the shortfall to targets in the
//! same batch that have members to spare, so every category ends up with the
//! same number of triples whenever the batch as a whole can supply them.
//!
//! Members of the last, open-ended category are drawn by rejection: a uniform
//! candidate is accepted when it lies beyond the context cap.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::context::{ContextIndex, MergePolicy};
use crate::error::{Error, Result};
use crate::graph::Components;

/// Retry limit for one rejection draw of the far category.
pub const MAX_REJECTION_RETRIES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub targets_per_batch: usize,
    pub pairs_per_category_per_target: usize,
    pub seed: u64,
    /// Treat unreachable nodes as members of the last category instead of
    /// excluding them.
    pub far_includes_unreachable: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { targets_per_batch: 256, pairs_per_category_per_target: 4, seed: 0, far_includes_unreachable: false }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.targets_per_batch == 0 || self.pairs_per_category_per_target == 0 {
            return Err(Error::Config("sampler counts must be at least 1".into()));
        }
        Ok(())
    }
}

/// Parallel arrays of training triples.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairBatch {
    pub targets: Vec<u32>,
    pub contexts: Vec<u32>,
    pub labels: Vec<u8>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, target: u32, context: u32, label: u8) {
        self.targets.push(target);
        self.contexts.push(context);
        self.labels.push(label);
    }

    pub fn category_counts(&self, alpha: usize) -> Vec<usize> {
        let mut counts = vec![0; alpha];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }
}

/// Draws batches from an immutable context index. Batch `b` uses its own
/// random stream derived from `(seed, b)`, so any batch can be regenerated
/// independently of the others.
#[derive(Debug, Clone)]
pub struct PairSampler<'a> {
    index: &'a ContextIndex,
    components: &'a Components,
    policy: &'a MergePolicy,
    config: SamplerConfig,
    eligible: Vec<u32>,
    next: u64,
}

impl<'a> PairSampler<'a> {
    pub fn new(
        index: &'a ContextIndex,
        components: &'a Components,
        policy: &'a MergePolicy,
        config: SamplerConfig,
    ) -> Result<Self> {
        config.validate()?;
        if index.num_nodes() == 0 {
            return Err(Error::Sampling("graph is empty".into()));
        }
        if index.cap() != policy.cap() {
            return Err(Error::Config(format!(
                "context index was built with cap {} but the policy needs cap {}",
                index.cap(),
                policy.cap()
            )));
        }
        let mut s = Self { index, components, policy, config, eligible: Vec::new(), next: 0 };
        s.eligible = (0..index.num_nodes() as u32).filter(|&t| s.availability(t as usize).iter().any(|&a| a > 0)).collect();
        if s.eligible.is_empty() {
            return Err(Error::Sampling("no node has a non-empty context".into()));
        }
        Ok(s)
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    /// Nodes that can act as targets (at least one non-empty category).
    pub fn eligible_targets(&self) -> &[u32] {
        &self.eligible
    }

    /// Number of candidate context nodes per category for `target`.
    pub fn availability(&self, target: usize) -> Vec<usize> {
        let alpha = self.policy.alpha();
        let mut avail = Vec::with_capacity(alpha);
        for c in 0..alpha - 1 {
            let (lo, hi) = self.policy.hop_range(c).unwrap();
            avail.push(self.index.hop_range(target, lo, hi).len());
        }
        avail.push(self.far_pool_size(target) - 1 - self.index.within_cap_count(target));
        avail
    }

    fn far_pool_size(&self, target: usize) -> usize {
        if self.config.far_includes_unreachable {
            self.index.num_nodes()
        } else {
            self.components.size(self.components.of(target))
        }
    }

    pub fn next_batch(&mut self) -> Result<PairBatch> {
        let b = self.batch(self.next);
        self.next += 1;
        b
    }

    /// Batch number `batch_no`, independent of any earlier calls.
    pub fn batch(&self, batch_no: u64) -> Result<PairBatch> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(batch_no);
        let k = self.config.targets_per_batch.min(self.eligible.len());
        let targets: Vec<u32> = index::sample(&mut rng, self.eligible.len(), k).into_iter().map(|i| self.eligible[i]).collect();
        self.pairs_for_targets(&targets, &mut rng)
    }

    /// Fills the per-category quota for the given targets, redistributing
    /// shortfalls among them.
    pub fn pairs_for_targets<R: Rng>(&self, targets: &[u32], rng: &mut R) -> Result<PairBatch> {
        let alpha = self.policy.alpha();
        let quota = self.config.pairs_per_category_per_target;
        let mut batch = PairBatch::default();
        let mut deficit = vec![0usize; alpha];
        let mut avail_all = Vec::with_capacity(targets.len());

        for &t in targets {
            let avail = self.availability(t as usize);
            for (c, &a) in avail.iter().enumerate() {
                let label = c as u8;
                if a >= quota {
                    if c + 1 < alpha {
                        let members = self.members(t as usize, c);
                        for i in index::sample(rng, a, quota) {
                            batch.push(t, members[i], label);
                        }
                    } else {
                        for _ in 0..quota {
                            batch.push(t, self.draw_far(t as usize, rng)?, label);
                        }
                    }
                } else {
                    deficit[c] += quota - a;
                    if c + 1 < alpha {
                        for &j in self.members(t as usize, c) {
                            batch.push(t, j, label);
                        }
                    } else {
                        for j in self.far_members(t as usize) {
                            batch.push(t, j, label);
                        }
                    }
                }
            }
            avail_all.push(avail);
        }

        for (c, &missing) in deficit.iter().enumerate() {
            if missing == 0 {
                continue;
            }
            let donors: Vec<usize> = (0..targets.len()).filter(|&i| avail_all[i][c] > quota).collect();
            if donors.is_empty() {
                continue;
            }
            for _ in 0..missing {
                let t = targets[donors[rng.gen_range(0..donors.len())]] as usize;
                let j = if c + 1 < alpha {
                    let m = self.members(t, c);
                    m[rng.gen_range(0..m.len())]
                } else {
                    self.draw_far(t, rng)?
                };
                batch.push(t as u32, j, c as u8);
            }
        }
        Ok(batch)
    }

    fn members(&self, target: usize, category: usize) -> &'a [u32] {
        let (lo, hi) = self.policy.hop_range(category).expect("explicit category");
        self.index.hop_range(target, lo, hi)
    }

    fn far_members(&self, target: usize) -> Vec<u32> {
        let candidates: Box<dyn Iterator<Item = u32>> = if self.config.far_includes_unreachable {
            Box::new(0..self.index.num_nodes() as u32)
        } else {
            Box::new(self.components.members(self.components.of(target)).iter().copied())
        };
        candidates.filter(|&j| !self.index.within_cap(target, j as usize)).collect()
    }

    fn draw_far<R: Rng>(&self, target: usize, rng: &mut R) -> Result<u32> {
        let pool =
            if self.config.far_includes_unreachable { None } else { Some(self.components.members(self.components.of(target))) };
        for _ in 0..MAX_REJECTION_RETRIES {
            let cand = match pool {
                Some(p) => p[rng.gen_range(0..p.len())],
                None => rng.gen_range(0..self.index.num_nodes() as u32),
            };
            if !self.index.within_cap(target, cand as usize) {
                return Ok(cand);
            }
        }
        Err(Error::Sampling(format!("no far-category node found for target {target} after {MAX_REJECTION_RETRIES} draws")))
    }
}

/// One-shot form of [`PairSampler::batch`].
pub fn sample_batch(
    index: &ContextIndex,
    components: &Components,
    policy: &MergePolicy,
    config: &SamplerConfig,
    batch_no: u64,
) -> Result<PairBatch> {
    PairSampler::new(index, components, policy, config.clone())?.batch(batch_no)
}
