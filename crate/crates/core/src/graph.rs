//! Undirected graph storage in compressed sparse row form, the symmetric
//! normalized propagation operator, and a few whole-graph statistics.

use std::collections::VecDeque;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{CsrMatrix, DenseMatrix, Parallelism};
use crate::scalar::Scalar;

/// Simple undirected graph. Each edge is stored in both endpoint rows; rows
/// are sorted, duplicate-free and never contain the row's own node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
    num_edges: usize,
}

impl Graph {
    /// Builds a graph on `num_nodes` nodes. Edge direction is ignored,
    /// duplicates collapse and self-loops are dropped.
    pub fn from_edges<I>(num_nodes: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (u32, u32)>,
    {
        if num_nodes > u32::MAX as usize {
            return Err(Error::InvalidArgument(format!("{num_nodes} nodes exceed the u32 id space")));
        }
        let mut arcs = Vec::new();
        for (u, v) in edges {
            if u as usize >= num_nodes || v as usize >= num_nodes {
                return Err(Error::InvalidArgument(format!("edge ({u}, {v}) references a node outside 0..{num_nodes}")));
            }
            if u != v {
                arcs.push((u, v));
                arcs.push((v, u));
            }
        }
        arcs.sort_unstable();
        arcs.dedup();

        let mut offsets = vec![0usize; num_nodes + 1];
        for &(u, _) in &arcs {
            offsets[u as usize + 1] += 1;
        }
        for i in 0..num_nodes {
            offsets[i + 1] += offsets[i];
        }
        let neighbors = arcs.into_iter().map(|(_, v)| v).collect::<Vec<_>>();
        let num_edges = neighbors.len() / 2;
        Ok(Self { offsets, neighbors, num_edges })
    }

    pub fn empty(num_nodes: usize) -> Self {
        Self { offsets: vec![0; num_nodes + 1], neighbors: Vec::new(), num_edges: 0 }
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Number of undirected edges.
    #[inline]
    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    #[inline]
    pub fn neighbors(&self, node: usize) -> &[u32] {
        &self.neighbors[self.offsets[node]..self.offsets[node + 1]]
    }

    #[inline]
    pub fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    pub fn max_degree(&self) -> usize {
        (0..self.num_nodes()).map(|i| self.degree(i)).max().unwrap_or(0)
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&(v as u32)).is_ok()
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`, in sorted order.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.num_nodes())
            .flat_map(move |u| self.neighbors(u).iter().filter(move |&&v| v as usize > u).map(move |&v| (u as u32, v)))
    }

    /// Checks the structural invariants. Graphs built through
    /// [`from_edges`](Self::from_edges) always satisfy them.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        if self.offsets[0] != 0 || self.offsets[n] != self.neighbors.len() || self.neighbors.len() != 2 * self.num_edges {
            return Err(Error::Format("offsets do not cover 2m neighbor slots".into()));
        }
        for i in 0..n {
            if self.offsets[i] > self.offsets[i + 1] {
                return Err(Error::Format(format!("offsets decrease at node {i}")));
            }
            let row = self.neighbors(i);
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Format(format!("neighbors of {i} not strictly increasing")));
            }
            for &j in row {
                if j as usize == i {
                    return Err(Error::Format(format!("self-loop stored at {i}")));
                }
                if j as usize >= n || !self.has_edge(j as usize, i) {
                    return Err(Error::Format(format!("edge ({i}, {j}) is not symmetric")));
                }
            }
        }
        Ok(())
    }

    pub fn components(&self) -> Components {
        Components::new(self)
    }

    /// Unbounded BFS distances from `source`; `u32::MAX` marks unreachable nodes.
    pub fn bfs_distances(&self, source: usize) -> Vec<u32> {
        let mut dist = vec![u32::MAX; self.num_nodes()];
        let mut queue = VecDeque::new();
        dist[source] = 0;
        queue.push_back(source as u32);
        while let Some(u) = queue.pop_front() {
            let du = dist[u as usize];
            for &v in self.neighbors(u as usize) {
                if dist[v as usize] == u32::MAX {
                    dist[v as usize] = du + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Mean shortest-path length over all ordered pairs of distinct nodes in
    /// the largest connected component (ties broken by the lowest member id).
    pub fn avg_shortest_path_largest_component(&self) -> Result<f64> {
        if self.num_nodes() == 0 {
            return Err(Error::InvalidArgument("graph has no nodes".into()));
        }
        let comps = self.components();
        let largest = comps.largest();
        let members = comps.members(largest);
        let size = members.len() as u64;
        if size < 2 {
            return Ok(0.0);
        }
        let total: u64 = members
            .par_iter()
            .map_init(
                || (vec![u32::MAX; self.num_nodes()], Vec::<u32>::new()),
                |(dist, queue), &s| {
                    // Reusable buffers: only nodes of this component are touched.
                    queue.clear();
                    dist[s as usize] = 0;
                    queue.push(s);
                    let mut head = 0;
                    let mut sum = 0u64;
                    while head < queue.len() {
                        let u = queue[head];
                        head += 1;
                        let du = dist[u as usize];
                        sum += du as u64;
                        for &v in self.neighbors(u as usize) {
                            if dist[v as usize] == u32::MAX {
                                dist[v as usize] = du + 1;
                                queue.push(v);
                            }
                        }
                    }
                    for &u in queue.iter() {
                        dist[u as usize] = u32::MAX;
                    }
                    sum
                },
            )
            .sum();
        Ok(total as f64 / (size * (size - 1)) as f64)
    }
}

/// Connected components, numbered in order of their lowest node id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Components {
    label: Vec<u32>,
    offsets: Vec<usize>,
    members: Vec<u32>,
}

impl Components {
    fn new(graph: &Graph) -> Self {
        let n = graph.num_nodes();
        let mut label = vec![u32::MAX; n];
        let mut count = 0u32;
        let mut stack = Vec::new();
        for s in 0..n {
            if label[s] != u32::MAX {
                continue;
            }
            label[s] = count;
            stack.push(s as u32);
            while let Some(u) = stack.pop() {
                for &v in graph.neighbors(u as usize) {
                    if label[v as usize] == u32::MAX {
                        label[v as usize] = count;
                        stack.push(v);
                    }
                }
            }
            count += 1;
        }
        let mut offsets = vec![0usize; count as usize + 1];
        for &c in &label {
            offsets[c as usize + 1] += 1;
        }
        for c in 0..count as usize {
            offsets[c + 1] += offsets[c];
        }
        let mut next = offsets.clone();
        let mut members = vec![0u32; n];
        for (i, &c) in label.iter().enumerate() {
            members[next[c as usize]] = i as u32;
            next[c as usize] += 1;
        }
        Self { label, offsets, members }
    }

    pub fn count(&self) -> usize {
        self.offsets.len() - 1
    }

    #[inline]
    pub fn of(&self, node: usize) -> usize {
        self.label[node] as usize
    }

    #[inline]
    pub fn size(&self, comp: usize) -> usize {
        self.offsets[comp + 1] - self.offsets[comp]
    }

    /// Sorted node ids of a component.
    #[inline]
    pub fn members(&self, comp: usize) -> &[u32] {
        &self.members[self.offsets[comp]..self.offsets[comp + 1]]
    }

    pub fn largest(&self) -> usize {
        (0..self.count()).max_by_key(|&c| (self.size(c), std::cmp::Reverse(c))).unwrap_or(0)
    }

    #[inline]
    pub fn same(&self, a: usize, b: usize) -> bool {
        self.label[a] == self.label[b]
    }
}

/// Symmetrically normalized adjacency `D^{-1/2} (A + I) D^{-1/2}`, the
/// propagation operator of a graph-convolutional layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency<T> {
    matrix: CsrMatrix<T>,
    self_loops: bool,
}

impl<T: Scalar> NormalizedAdjacency<T> {
    /// Without self-loops the `+ I` term is dropped and degrees are the plain
    /// graph degrees; isolated nodes then get an empty row.
    pub fn new(graph: &Graph, add_self_loops: bool) -> Self {
        let n = graph.num_nodes();
        let bump = usize::from(add_self_loops);
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::with_capacity(graph.num_edges() * 2 + n * bump);
        let mut values = Vec::with_capacity(indices.capacity());
        indptr.push(0);
        let weight = |i: usize, j: usize| {
            // Integer product first: identical bits for (i, j) and (j, i).
            let prod = ((graph.degree(i) + bump) as u64) * ((graph.degree(j) + bump) as u64);
            T::one() / T::of(prod as f64).sqrt()
        };
        for i in 0..n {
            let mut pushed_self = !add_self_loops;
            for &j in graph.neighbors(i) {
                if !pushed_self && j as usize > i {
                    indices.push(i as u32);
                    values.push(weight(i, i));
                    pushed_self = true;
                }
                indices.push(j);
                values.push(weight(i, j as usize));
            }
            if !pushed_self {
                indices.push(i as u32);
                values.push(weight(i, i));
            }
            indptr.push(indices.len());
        }
        let matrix =
            CsrMatrix::from_parts(n, n, indptr, indices, values).expect("graph rows are sorted so the operator layout is valid");
        Self { matrix, self_loops: add_self_loops }
    }

    pub fn matrix(&self) -> &CsrMatrix<T> {
        &self.matrix
    }

    pub fn has_self_loops(&self) -> bool {
        self.self_loops
    }

    pub fn num_nodes(&self) -> usize {
        self.matrix.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.matrix.get(i, j)
    }

    /// `Â · dense`.
    pub fn spmm(&self, dense: &DenseMatrix<T>, par: Parallelism) -> Result<DenseMatrix<T>> {
        self.matrix.spmm(dense, par)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn path(n: usize) -> Graph {
        Graph::from_edges(n, (0..n as u32 - 1).map(|i| (i, i + 1))).unwrap()
    }

    #[test]
    fn single_edge_is_symmetric() {
        let g = Graph::from_edges(2, [(0, 1)]).unwrap();
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0]);
    }

    #[test]
    fn duplicates_and_self_loops_collapse() {
        let g = Graph::from_edges(3, [(0, 1), (1, 0), (0, 1), (2, 2)]).unwrap();
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.degree(2), 0);
        g.validate().unwrap();
    }

    #[test]
    fn out_of_range_endpoint_is_rejected() {
        assert!(Graph::from_edges(2, [(0, 2)]).is_err());
    }

    #[test]
    fn normalization_small_cases() {
        let one: NormalizedAdjacency<f64> = NormalizedAdjacency::new(&Graph::empty(1), true);
        assert_eq!(one.get(0, 0), 1.0);

        let p2: NormalizedAdjacency<f64> = NormalizedAdjacency::new(&path(2), true);
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(p2.get(i, j), 0.5);
            }
        }

        let star = Graph::from_edges(4, [(0, 1), (0, 2), (0, 3)]).unwrap();
        let a: NormalizedAdjacency<f64> = NormalizedAdjacency::new(&star, true);
        assert_eq!(a.get(0, 0), 0.25);
        assert!((a.get(0, 1) - 1.0 / (2.0 * 2f64.sqrt())).abs() < 1e-15);
        assert!((a.get(0, 1) - 0.35355).abs() < 1e-5);
    }

    #[test]
    fn without_self_loops_isolated_row_is_empty() {
        let g = Graph::from_edges(3, [(0, 1)]).unwrap();
        let a: NormalizedAdjacency<f64> = NormalizedAdjacency::new(&g, false);
        assert_eq!(a.get(0, 1), 1.0);
        assert_eq!(a.get(0, 0), 0.0);
        assert_eq!(a.matrix().row_sum(2), 0.0);
    }

    #[test]
    fn path_statistics() {
        let tri = Graph::from_edges(3, [(0, 1), (1, 2), (0, 2)]).unwrap();
        assert_eq!(tri.avg_shortest_path_largest_component().unwrap(), 1.0);
        assert!((path(3).avg_shortest_path_largest_component().unwrap() - 4.0 / 3.0).abs() < 1e-15);
        // Largest component wins over a separate edge.
        let g = Graph::from_edges(5, [(0, 1), (2, 3), (3, 4)]).unwrap();
        assert!((g.avg_shortest_path_largest_component().unwrap() - 4.0 / 3.0).abs() < 1e-15);
        assert!(Graph::empty(0).avg_shortest_path_largest_component().is_err());
    }

    #[test]
    fn components_are_grouped() {
        let g = Graph::from_edges(6, [(0, 3), (3, 5), (1, 2)]).unwrap();
        let c = g.components();
        assert_eq!(c.count(), 3);
        assert_eq!(c.members(c.of(5)), &[0, 3, 5]);
        assert!(c.same(1, 2));
        assert!(!c.same(0, 4));
        assert_eq!(c.largest(), c.of(0));
    }

    fn arb_graph() -> impl Strategy<Value = Graph> {
        (1usize..40).prop_flat_map(|n| {
            prop::collection::vec((0..n as u32, 0..n as u32), 0..120).prop_map(move |edges| Graph::from_edges(n, edges).unwrap())
        })
    }

    proptest! {
        #[test]
        fn constructed_graphs_satisfy_invariants(g in arb_graph()) {
            g.validate().unwrap();
            prop_assert_eq!(*g.offsets().last().unwrap(), 2 * g.num_edges());
            let rebuilt = Graph::from_edges(g.num_nodes(), g.edges()).unwrap();
            prop_assert_eq!(rebuilt, g);
        }

        #[test]
        fn normalized_adjacency_is_symmetric_and_bounded(g in arb_graph()) {
            let a: NormalizedAdjacency<f64> = NormalizedAdjacency::new(&g, true);
            let bound = ((g.max_degree() + 1) as f64).sqrt();
            for i in 0..g.num_nodes() {
                for (j, v) in a.matrix().row(i) {
                    prop_assert!(v > 0.0 && v <= 1.0);
                    prop_assert_eq!(v.to_bits(), a.get(j as usize, i).to_bits());
                }
                let s = a.matrix().row_sum(i);
                prop_assert!(s > 0.0 && s <= bound + 1e-12);
            }
        }
    }

    #[test]
    fn regular_graph_rows_sum_to_one() {
        let cycle = Graph::from_edges(7, (0..7u32).map(|i| (i, (i + 1) % 7))).unwrap();
        let a: NormalizedAdjacency<f64> = NormalizedAdjacency::new(&cycle, true);
        for i in 0..7 {
            assert!((a.matrix().row_sum(i) - 1.0).abs() < 1e-15);
        }
    }
}
