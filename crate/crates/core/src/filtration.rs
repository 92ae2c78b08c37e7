//! Basic-set connection graphs, filtration ordering and stratified solves.
//!
//! An edge `a -> b` records a heteroclinic connection `a >> b`. The filtration
//! is built by repeatedly taking the remaining basic set of largest pressure
//! together with everything that reaches it, ordering each such block as a
//! linear extension of `>>` (pressure breaks ties), and concatenating the
//! blocks. Ranks then count down from `n` along the resulting sequence.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{SolverOptions, SpectralTriple};
use crate::ulam::{AnnealedMatrix, GridPartition};

/// Pressures closer than this are treated as equal, which the ordering forbids.
pub const PRESSURE_TIE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: u32,
    pub pressure: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConnectionGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<[u32; 2]>,
}

impl ConnectionGraph {
    pub fn new(nodes: Vec<Node>, edges: Vec<[u32; 2]>) -> Result<Self> {
        let g = Self { nodes, edges };
        g.validate()?;
        Ok(g)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let g: Self = serde_json::from_str(s).map_err(|e| Error::InvalidInput(format!("graph JSON: {e}")))?;
        g.validate()?;
        Ok(g)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for n in &self.nodes {
            if !seen.insert(n.id) {
                return Err(Error::InvalidInput(format!("duplicate node id {}", n.id)));
            }
            if !n.pressure.is_finite() {
                return Err(Error::InvalidInput(format!("node {} has non-finite pressure", n.id)));
            }
        }
        for &[a, b] in &self.edges {
            for id in [a, b] {
                if !seen.contains(&id) {
                    return Err(Error::UnknownNode(id));
                }
            }
            if a == b {
                return Err(Error::InvalidInput(format!("self edge on node {a}")));
            }
        }
        Ok(())
    }

    /// Seven basic sets with pressure increasing in the label and connections
    /// `1 >> 4 >> 2 >> 7` and `5 >> 6`.
    pub fn seven_node_example() -> Self {
        Self {
            nodes: (1..=7).map(|id| Node { id, pressure: id as f64 }).collect(),
            edges: vec![[1, 4], [4, 2], [2, 7], [5, 6]],
        }
    }

    fn pressure(&self, id: u32) -> f64 {
        self.nodes.iter().find(|n| n.id == id).map_or(f64::NAN, |n| n.pressure)
    }

    fn successors(&self) -> BTreeMap<u32, Vec<u32>> {
        let mut s: BTreeMap<u32, Vec<u32>> = self.nodes.iter().map(|n| (n.id, Vec::new())).collect();
        for &[a, b] in &self.edges {
            s.get_mut(&a).unwrap().push(b);
        }
        for v in s.values_mut() {
            v.sort_unstable();
            v.dedup();
        }
        s
    }

    fn predecessors(&self) -> BTreeMap<u32, Vec<u32>> {
        let mut s: BTreeMap<u32, Vec<u32>> = self.nodes.iter().map(|n| (n.id, Vec::new())).collect();
        for &[a, b] in &self.edges {
            s.get_mut(&b).unwrap().push(a);
        }
        for v in s.values_mut() {
            v.sort_unstable();
            v.dedup();
        }
        s
    }
}

/// A cycle in the connection relation, if there is one. The witness lists the
/// cycle starting from its smallest id.
pub fn detect_cycles(graph: &ConnectionGraph) -> Result<Option<Vec<u32>>> {
    graph.validate()?;
    let mut g = DiGraph::<u32, ()>::new();
    let mut index: BTreeMap<u32, NodeIndex> = BTreeMap::new();
    let mut ids: Vec<u32> = graph.nodes.iter().map(|n| n.id).collect();
    ids.sort_unstable();
    for &id in &ids {
        index.insert(id, g.add_node(id));
    }
    for &[a, b] in &graph.edges {
        g.update_edge(index[&a], index[&b], ());
    }
    let mut cyclic: Vec<BTreeSet<u32>> = tarjan_scc(&g)
        .into_iter()
        .filter(|c| c.len() > 1)
        .map(|c| c.into_iter().map(|n| g[n]).collect())
        .collect();
    cyclic.sort_by_key(|c| *c.iter().next().unwrap());
    let Some(scc) = cyclic.first() else {
        return Ok(None);
    };
    // shortest cycle through the smallest member, staying inside the component
    let succ = graph.successors();
    let start = *scc.iter().next().unwrap();
    let mut parent: BTreeMap<u32, u32> = BTreeMap::new();
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        for &v in &succ[&u] {
            if !scc.contains(&v) {
                continue;
            }
            if v == start {
                let mut path = vec![u];
                let mut cur = u;
                while cur != start {
                    cur = parent[&cur];
                    path.push(cur);
                }
                path.reverse();
                return Ok(Some(path));
            }
            if v != start && !parent.contains_key(&v) {
                parent.insert(v, u);
                queue.push_back(v);
            }
        }
    }
    unreachable!("a strongly connected component with two nodes contains a cycle")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiltrationOrder {
    /// Node ids from greatest to least.
    pub sequence: Vec<u32>,
    /// Blocks in construction order; the selected node is last in each.
    pub subgraphs: Vec<Vec<u32>>,
    /// Rank of the selected node of each block, strictly decreasing.
    pub indices: Vec<usize>,
    /// Rank of every node; the first node of the sequence has rank `n`.
    pub relabel: BTreeMap<u32, usize>,
}

impl FiltrationOrder {
    pub fn n(&self) -> usize {
        self.sequence.len()
    }

    /// Number of blocks minus one.
    pub fn t(&self) -> usize {
        self.indices.len() - 1
    }

    pub fn sequence_string(&self) -> String {
        self.sequence
            .iter()
            .map(|id| id.to_string())
            .collect::<Vec<_>>()
            .join(">")
    }

    pub fn rank(&self, id: u32) -> Result<usize> {
        self.relabel.get(&id).copied().ok_or(Error::UnknownNode(id))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("order serialises")
    }
}

pub fn filtration_order(graph: &ConnectionGraph) -> Result<FiltrationOrder> {
    if let Some(witness) = detect_cycles(graph)? {
        return Err(Error::Cycle(witness));
    }
    if graph.nodes.is_empty() {
        return Err(Error::InvalidInput("connection graph has no nodes".into()));
    }
    let mut by_pressure: Vec<Node> = graph.nodes.clone();
    by_pressure.sort_by(|a, b| a.pressure.total_cmp(&b.pressure));
    for w in by_pressure.windows(2) {
        if (w[1].pressure - w[0].pressure).abs() <= PRESSURE_TIE_TOL {
            let (a, b) = (w[0].id.min(w[1].id), w[0].id.max(w[1].id));
            return Err(Error::PressureTie(a, b));
        }
    }

    let succ = graph.successors();
    let pred = graph.predecessors();
    let mut remaining: BTreeSet<u32> = graph.nodes.iter().map(|n| n.id).collect();
    let mut sequence = Vec::with_capacity(remaining.len());
    let mut subgraphs = Vec::new();
    let mut selected = Vec::new();

    while !remaining.is_empty() {
        let top = *remaining
            .iter()
            .max_by(|&&a, &&b| graph.pressure(a).total_cmp(&graph.pressure(b)))
            .unwrap();
        // everything that reaches the selected node
        let mut block: BTreeSet<u32> = BTreeSet::from([top]);
        let mut stack = vec![top];
        while let Some(u) = stack.pop() {
            for &p in &pred[&u] {
                if remaining.contains(&p) && block.insert(p) {
                    stack.push(p);
                }
            }
        }
        // Kahn's algorithm inside the block, highest pressure first among the ready nodes
        let mut indegree: BTreeMap<u32, usize> = block
            .iter()
            .map(|&u| (u, pred[&u].iter().filter(|p| block.contains(p)).count()))
            .collect();
        let mut ready: BinaryHeap<Ready> = indegree
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&u, _)| Ready(graph.pressure(u), u))
            .collect();
        let mut ordered = Vec::with_capacity(block.len());
        while let Some(Ready(_, u)) = ready.pop() {
            ordered.push(u);
            for &v in &succ[&u] {
                if let Some(d) = indegree.get_mut(&v) {
                    *d -= 1;
                    if *d == 0 {
                        ready.push(Ready(graph.pressure(v), v));
                    }
                }
            }
        }
        debug_assert_eq!(ordered.len(), block.len());
        for u in &ordered {
            remaining.remove(u);
        }
        sequence.extend_from_slice(&ordered);
        subgraphs.push(ordered);
        selected.push(top);
    }

    let n = sequence.len();
    let relabel: BTreeMap<u32, usize> = sequence.iter().enumerate().map(|(k, &id)| (id, n - k)).collect();
    let indices = selected.iter().map(|id| relabel[id]).collect();
    Ok(FiltrationOrder {
        sequence,
        subgraphs,
        indices,
        relabel,
    })
}

#[derive(PartialEq)]
struct Ready(f64, u32);

impl Eq for Ready {}

impl PartialOrd for Ready {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ready {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0).then(other.1.cmp(&self.1))
    }
}

/// Index `k` of the quasi-ergodic measure seen from a start point in the
/// stable set of the basic set with rank `j`: the `k` with
/// `i_k <= j < i_{k-1}`, where `i_{-1} = n + 1`.
pub fn assign_basin(order: &FiltrationOrder, j: usize) -> Result<usize> {
    let n = order.n();
    if j < 1 || j > n {
        return Err(Error::InvalidRank { rank: j, n });
    }
    let mut upper = n + 1;
    for (k, &i) in order.indices.iter().enumerate() {
        if i <= j && j < upper {
            return Ok(k);
        }
        upper = i;
    }
    // the last index is always rank 1, so every valid rank is covered
    Err(Error::InvalidRank { rank: j, n })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratumResult {
    pub rank: usize,
    pub n_cells: usize,
    pub lambda: f64,
    /// `None` when the restricted matrix has no positive spectral radius.
    pub triple: Option<SpectralTriple>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratifiedReport {
    pub global: SpectralTriple,
    pub strata: Vec<StratumResult>,
    pub max_restricted_lambda: f64,
    /// `|lambda_global - max_i lambda_i|`.
    pub discrepancy: f64,
}

impl StratifiedReport {
    pub fn consistent(&self, tol: f64) -> bool {
        self.discrepancy <= tol
    }
}

/// Solves the global problem and the problem restricted to each stratum
/// (grid cells keyed by rank).
pub fn stratified_qem_workflow(
    matrix: &AnnealedMatrix,
    grid: &GridPartition,
    order: &FiltrationOrder,
    strata: &BTreeMap<usize, Vec<usize>>,
    opts: &SolverOptions,
) -> Result<StratifiedReport> {
    let global = SpectralTriple::solve(matrix, grid, opts)?;
    let local: BTreeMap<usize, usize> = matrix.cells.iter().enumerate().map(|(k, &c)| (c, k)).collect();
    let mut results = Vec::new();
    for (&rank, cells) in strata.iter().rev() {
        if rank < 1 || rank > order.n() {
            return Err(Error::InvalidRank { rank, n: order.n() });
        }
        let subset: Vec<usize> = cells.iter().filter_map(|c| local.get(c).copied()).collect();
        let sub = matrix.restrict(&subset)?;
        let triple = match SpectralTriple::solve(&sub, grid, opts) {
            Ok(t) => Some(t),
            Err(Error::NoPositiveSpectralRadius) => None,
            Err(e) => return Err(e),
        };
        results.push(StratumResult {
            rank,
            n_cells: sub.n_cells(),
            lambda: triple.as_ref().map_or(0.0, |t| t.lambda),
            triple,
        });
    }
    let max_restricted_lambda = results.iter().map(|r| r.lambda).fold(0.0, f64::max);
    Ok(StratifiedReport {
        discrepancy: (global.lambda - max_restricted_lambda).abs(),
        global,
        strata: results,
        max_restricted_lambda,
    })
}
