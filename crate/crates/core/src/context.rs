//! Hop-based global context of every node: who sits at exactly k hops, for
//! k up to a cap, plus the merge policy that collapses hop counts into a few
//! coarse categories used as self-supervised labels.

use std::fmt;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::Parallelism;

/// Shortest-path position of one node relative to a BFS source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Hop {
    Source,
    Within(u32),
    /// Farther than the cap, or unreachable.
    BeyondCap,
}

/// Maps hop counts to `alpha` categories. With boundaries `[h1, .., h_{a-1}]`,
/// category `c` covers hops in `(h_{c-1}, h_c]` (with `h_0 = 0`) and the last
/// category covers every hop above `h_{a-1}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct MergePolicy {
    boundaries: Vec<u32>,
}

impl MergePolicy {
    pub fn new(boundaries: Vec<u32>) -> Result<Self> {
        if boundaries.is_empty() {
            return Err(Error::Config("merge policy needs at least one boundary (alpha >= 2)".into()));
        }
        if boundaries[0] < 1 {
            return Err(Error::Config("first merge boundary must be at least 1".into()));
        }
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("merge boundaries {boundaries:?} are not strictly increasing")));
        }
        if boundaries.len() > u8::MAX as usize - 1 {
            return Err(Error::Config("too many merge categories".into()));
        }
        Ok(Self { boundaries })
    }

    /// 1 hop, 2 hops, 3–4 hops, 5+ hops.
    pub fn default_four() -> Self {
        Self::new(vec![1, 2, 4]).unwrap()
    }

    /// The family where hops `1..alpha-1` each get a category and everything
    /// from `alpha` hops on is merged, for `alpha` in 2..=6.
    pub fn ablation_family() -> Vec<Self> {
        (2u32..=6).map(|alpha| Self::new((1..alpha).collect()).unwrap()).collect()
    }

    pub fn alpha(&self) -> usize {
        self.boundaries.len() + 1
    }

    /// Largest hop count with its own explicit bucket.
    pub fn cap(&self) -> u32 {
        *self.boundaries.last().unwrap()
    }

    pub fn boundaries(&self) -> &[u32] {
        &self.boundaries
    }

    pub fn category_of(&self, hop: Hop) -> Result<u8> {
        match hop {
            Hop::Source | Hop::Within(0) => Err(Error::InvalidArgument("a node is not part of its own context (hop 0)".into())),
            Hop::Within(h) => Ok(self.boundaries.iter().position(|&b| h <= b).unwrap_or(self.boundaries.len()) as u8),
            Hop::BeyondCap => Ok(self.boundaries.len() as u8),
        }
    }

    /// Inclusive hop range of a category below the last; `None` for the last,
    /// open-ended one.
    pub fn hop_range(&self, category: usize) -> Option<(u32, u32)> {
        if category >= self.boundaries.len() {
            return None;
        }
        let lo = if category == 0 { 1 } else { self.boundaries[category - 1] + 1 };
        Some((lo, self.boundaries[category]))
    }
}

impl TryFrom<Vec<u32>> for MergePolicy {
    type Error = Error;

    fn try_from(v: Vec<u32>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<MergePolicy> for Vec<u32> {
    fn from(p: MergePolicy) -> Self {
        p.boundaries
    }
}

impl fmt::Display for MergePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut lo = 1;
        let mut parts = Vec::new();
        for &b in &self.boundaries {
            parts.push(if lo == b { format!("{b}") } else { format!("{lo}-{b}") });
            lo = b + 1;
        }
        parts.push(format!("{lo}+"));
        write!(f, "{{{}}}", parts.join(", "))
    }
}

/// Hop of every node from `source`, exploring at most `cap` levels.
pub fn bfs_hops(graph: &Graph, source: usize, cap: u32) -> Result<Vec<Hop>> {
    if source >= graph.num_nodes() {
        return Err(Error::InvalidArgument(format!("source {source} outside 0..{}", graph.num_nodes())));
    }
    if cap == 0 {
        return Err(Error::InvalidArgument("cap must be at least 1".into()));
    }
    let mut scratch = BfsScratch::new(graph.num_nodes());
    let levels = scratch.levels(graph, source, cap);
    let mut hops = vec![Hop::BeyondCap; graph.num_nodes()];
    hops[source] = Hop::Source;
    for (k, level) in levels.iter().enumerate() {
        for &j in level {
            hops[j as usize] = Hop::Within(k as u32 + 1);
        }
    }
    Ok(hops)
}

struct BfsScratch {
    seen: Vec<bool>,
    order: Vec<u32>,
}

impl BfsScratch {
    fn new(n: usize) -> Self {
        Self { seen: vec![false; n], order: Vec::new() }
    }

    /// Sorted node lists at hops `1..=cap` from `source`.
    fn levels(&mut self, graph: &Graph, source: usize, cap: u32) -> Vec<Vec<u32>> {
        self.order.clear();
        self.order.push(source as u32);
        self.seen[source] = true;
        let mut levels = Vec::with_capacity(cap as usize);
        let mut start = 0;
        for _ in 0..cap {
            let end = self.order.len();
            for idx in start..end {
                let u = self.order[idx] as usize;
                for &v in graph.neighbors(u) {
                    if !self.seen[v as usize] {
                        self.seen[v as usize] = true;
                        self.order.push(v);
                    }
                }
            }
            let mut level = self.order[end..].to_vec();
            level.sort_unstable();
            levels.push(level);
            start = end;
        }
        for &u in &self.order {
            self.seen[u as usize] = false;
        }
        levels
    }
}

const MAGIC: &[u8; 4] = b"HCTX";
const FORMAT_VERSION: u32 = 1;

/// Per-node hop buckets up to `cap`, stored flat. Buckets of one node are
/// contiguous and ordered by hop, so the nodes of any hop range form one slice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextIndex {
    num_nodes: usize,
    cap: u32,
    offsets: Vec<usize>,
    members: Vec<u32>,
    // Sorted union of a node's buckets, for membership tests.
    within_offsets: Vec<usize>,
    within: Vec<u32>,
}

impl ContextIndex {
    pub fn build(graph: &Graph, cap: u32, par: Parallelism) -> Result<Self> {
        if cap == 0 {
            return Err(Error::InvalidArgument("cap must be at least 1".into()));
        }
        let n = graph.num_nodes();
        let per_node: Vec<Vec<Vec<u32>>> = match par {
            Parallelism::Sequential => {
                let mut scratch = BfsScratch::new(n);
                (0..n).map(|s| scratch.levels(graph, s, cap)).collect()
            }
            Parallelism::Rayon => {
                (0..n).into_par_iter().map_init(|| BfsScratch::new(n), |scratch, s| scratch.levels(graph, s, cap)).collect()
            }
        };
        Ok(Self::from_buckets(n, cap, per_node))
    }

    pub fn for_policy(graph: &Graph, policy: &MergePolicy, par: Parallelism) -> Result<Self> {
        Self::build(graph, policy.cap(), par)
    }

    fn from_buckets(num_nodes: usize, cap: u32, per_node: Vec<Vec<Vec<u32>>>) -> Self {
        let mut offsets = Vec::with_capacity(num_nodes * cap as usize + 1);
        let total: usize = per_node.iter().flatten().map(Vec::len).sum();
        let mut members = Vec::with_capacity(total);
        offsets.push(0);
        for buckets in &per_node {
            for b in buckets {
                members.extend_from_slice(b);
                offsets.push(members.len());
            }
        }
        let mut within_offsets = Vec::with_capacity(num_nodes + 1);
        let mut within = Vec::with_capacity(total);
        within_offsets.push(0);
        let mut scratch = Vec::new();
        for i in 0..num_nodes {
            scratch.clear();
            let lo = offsets[i * cap as usize];
            let hi = offsets[(i + 1) * cap as usize];
            scratch.extend_from_slice(&members[lo..hi]);
            scratch.sort_unstable();
            within.extend_from_slice(&scratch);
            within_offsets.push(within.len());
        }
        Self { num_nodes, cap, offsets, members, within_offsets, within }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn cap(&self) -> u32 {
        self.cap
    }

    /// Nodes at exactly `hop` from `node`, sorted; `hop` in `1..=cap`.
    pub fn bucket(&self, node: usize, hop: u32) -> &[u32] {
        assert!(hop >= 1 && hop <= self.cap, "hop {hop} outside 1..={}", self.cap);
        let slot = node * self.cap as usize + hop as usize - 1;
        &self.members[self.offsets[slot]..self.offsets[slot + 1]]
    }

    /// Nodes at hops `lo..=hi`, grouped by hop.
    pub fn hop_range(&self, node: usize, lo: u32, hi: u32) -> &[u32] {
        assert!(lo >= 1 && lo <= hi && hi <= self.cap);
        let base = node * self.cap as usize;
        &self.members[self.offsets[base + lo as usize - 1]..self.offsets[base + hi as usize]]
    }

    /// Number of nodes within the cap, excluding `node` itself.
    pub fn within_cap_count(&self, node: usize) -> usize {
        self.within_offsets[node + 1] - self.within_offsets[node]
    }

    /// True for `node` itself and every node within the cap.
    pub fn within_cap(&self, node: usize, other: usize) -> bool {
        other == node
            || self.within[self.within_offsets[node]..self.within_offsets[node + 1]].binary_search(&(other as u32)).is_ok()
    }

    pub fn hop_between(&self, node: usize, other: usize) -> Hop {
        if node == other {
            return Hop::Source;
        }
        (1..=self.cap).find(|&k| self.bucket(node, k).binary_search(&(other as u32)).is_ok()).map_or(Hop::BeyondCap, Hop::Within)
    }

    /// Total bucket sizes per hop, summed over nodes (index 0 is hop 1).
    pub fn hop_totals(&self) -> Vec<u64> {
        let mut totals = vec![0u64; self.cap as usize];
        for i in 0..self.num_nodes {
            for k in 1..=self.cap {
                totals[k as usize - 1] += self.bucket(i, k).len() as u64;
            }
        }
        totals
    }

    /// Little-endian cache: magic, version, n, cap, then for every node and
    /// hop the bucket length followed by its sorted ids.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.num_nodes as u32).to_le_bytes())?;
        w.write_all(&self.cap.to_le_bytes())?;
        for slot in 0..self.offsets.len() - 1 {
            let bucket = &self.members[self.offsets[slot]..self.offsets[slot + 1]];
            w.write_all(&(bucket.len() as u32).to_le_bytes())?;
            for &id in bucket {
                w.write_all(&id.to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * (self.offsets.len() + self.members.len()));
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| Error::Format(format!("reading context cache: {e}")))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let mut word = || -> Result<u32> {
            if cursor.len() < 4 {
                return Err(Error::Format("context cache truncated".into()));
            }
            let (head, tail) = cursor.split_at(4);
            cursor = tail;
            Ok(u32::from_le_bytes(head.try_into().unwrap()))
        };
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::Format("not a context cache (bad magic)".into()));
        }
        word()?;
        let version = word()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported context cache version {version}")));
        }
        let n = word()? as usize;
        let cap = word()?;
        if cap == 0 {
            return Err(Error::Format("context cache with cap 0".into()));
        }
        let mut per_node = Vec::with_capacity(n);
        for i in 0..n {
            let mut buckets = Vec::with_capacity(cap as usize);
            for k in 1..=cap {
                let len = word()? as usize;
                let mut b = Vec::with_capacity(len.min(n));
                for _ in 0..len {
                    b.push(word()?);
                }
                let ok = b.windows(2).all(|w| w[0] < w[1]) && b.iter().all(|&j| (j as usize) < n && j as usize != i);
                if !ok {
                    return Err(Error::Format(format!("bucket {k} of node {i} is not a sorted set of other nodes")));
                }
                buckets.push(b);
            }
            per_node.push(buckets);
        }
        if !cursor.is_empty() {
            return Err(Error::Format("trailing bytes after context cache".into()));
        }
        Ok(Self::from_buckets(n, cap, per_node))
    }
}
