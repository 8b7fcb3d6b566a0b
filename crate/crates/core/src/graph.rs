//! Anonymous port-labeled graphs.
//!
//! A node `v` numbers its incident edges locally with ports `0..δ(v)-1`;
//! the two endpoints of an edge number it independently. Nodes carry
//! integer indices for simulation bookkeeping only — protocol code never
//! reads them (agents observe ports, co-located agents, and the local
//! degree).

use std::collections::HashSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

/// Node index. Opaque to protocol code.
pub type NodeId = usize;
/// Local port number at a node, in `0..δ(v)`.
pub type Port = u16;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("port {port} out of range at node {node} (degree {degree})")]
    PortOutOfRange { node: NodeId, port: Port, degree: usize },
    #[error("infeasible parameters: {0}")]
    Infeasible(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("loaded graph is invalid: {0}")]
    Invalid(Violation),
}

/// One failed invariant, carrying the offending node/port as a witness.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    PortSymmetry { node: NodeId, port: Port },
    SelfLoop { node: NodeId, port: Port },
    ParallelEdge { node: NodeId, port: Port },
    BadNeighborIndex { node: NodeId, port: Port },
    Disconnected { unreachable_node: NodeId },
    IsolatedNode { node: NodeId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::PortSymmetry { node, port } => {
                write!(f, "port symmetry broken at ({node}, {port})")
            }
            Violation::SelfLoop { node, port } => write!(f, "self-loop at ({node}, {port})"),
            Violation::ParallelEdge { node, port } => {
                write!(f, "parallel edge at ({node}, {port})")
            }
            Violation::BadNeighborIndex { node, port } => {
                write!(f, "neighbor index out of range at ({node}, {port})")
            }
            Violation::Disconnected { unreachable_node } => {
                write!(f, "node {unreachable_node} unreachable from node 0")
            }
            Violation::IsolatedNode { node } => write!(f, "isolated node {node}"),
        }
    }
}

/// Simple connected undirected graph with independent per-endpoint port
/// numbers. `adjacency[v][i] = (u, j)` means the edge leaves `v` via port
/// `i` and enters `u` via `u`'s port `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PortLabeledGraph {
    adjacency: Vec<Vec<(NodeId, Port)>>,
    edge_count: usize,
}

impl PortLabeledGraph {
    /// Builds from raw adjacency without validating; callers that accept
    /// untrusted data must run [`PortLabeledGraph::validate`] afterwards.
    pub fn from_adjacency(adjacency: Vec<Vec<(NodeId, Port)>>) -> Self {
        let edge_count = adjacency.iter().map(Vec::len).sum::<usize>() / 2;
        PortLabeledGraph { adjacency, edge_count }
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.adjacency[v].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// `N(v, i)`: the node reached from `v` via port `i`, together with the
    /// reverse port at which the edge enters it.
    pub fn neighbor(&self, v: NodeId, i: Port) -> Result<(NodeId, Port), GraphError> {
        self.adjacency
            .get(v)
            .and_then(|row| row.get(i as usize))
            .copied()
            .ok_or(GraphError::PortOutOfRange {
                node: v,
                port: i,
                degree: self.adjacency.get(v).map(Vec::len).unwrap_or(0),
            })
    }

    /// Neighbor node indices of `v` in port order.
    pub fn neighbors(&self, v: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.adjacency[v].iter().map(|&(u, _)| u)
    }

    /// Checks the four type invariants; an empty list means the graph is
    /// well-formed. Violations are data, not errors.
    pub fn validate(&self) -> Vec<Violation> {
        let n = self.node_count();
        let mut out = Vec::new();
        let mut seen_pairs = HashSet::new();
        for v in 0..n {
            let mut neighbor_set = HashSet::new();
            for (i, &(u, j)) in self.adjacency[v].iter().enumerate() {
                let i = i as Port;
                if u >= n {
                    out.push(Violation::BadNeighborIndex { node: v, port: i });
                    continue;
                }
                if u == v {
                    out.push(Violation::SelfLoop { node: v, port: i });
                    continue;
                }
                if !neighbor_set.insert(u) {
                    out.push(Violation::ParallelEdge { node: v, port: i });
                }
                match self.adjacency[u].get(j as usize) {
                    Some(&(back, back_port)) if back == v && back_port == i => {
                        seen_pairs.insert((v.min(u), v.max(u)));
                    }
                    _ => out.push(Violation::PortSymmetry { node: v, port: i }),
                }
            }
            if n > 1 && self.adjacency[v].is_empty() {
                out.push(Violation::IsolatedNode { node: v });
            }
        }
        // Connectivity via BFS from node 0; only meaningful once the local
        // structure is sound enough to walk.
        if n > 0 {
            let mut seen = vec![false; n];
            let mut queue = vec![0usize];
            seen[0] = true;
            while let Some(v) = queue.pop() {
                for &(u, _) in &self.adjacency[v] {
                    if u < n && !seen[u] {
                        seen[u] = true;
                        queue.push(u);
                    }
                }
            }
            if let Some(unreachable) = seen.iter().position(|s| !s) {
                out.push(Violation::Disconnected { unreachable_node: unreachable });
            }
        }
        out
    }

    /// Serializes to the line-oriented text format: `n m`, then one line per
    /// node with `δ(v)` followed by `δ(v)` pairs `u j`.
    pub fn store(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("{} {}\n", self.node_count(), self.edge_count));
        for row in &self.adjacency {
            let mut line = format!("{}", row.len());
            for &(u, j) in row {
                line.push_str(&format!(" {} {}", u, j));
            }
            line.push('\n');
            s.push_str(&line);
        }
        s
    }

    /// Parses the text format produced by [`PortLabeledGraph::store`].
    /// Lines starting with `#` are comments. The loaded graph is validated.
    pub fn load(text: &str) -> Result<Self, GraphError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(no, l)| (no + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (line_no, header) = lines
            .next()
            .ok_or(GraphError::Parse { line: 0, msg: "empty input".into() })?;
        let mut it = header.split_whitespace();
        let n: usize = parse_field(it.next(), line_no, "n")?;
        let m: usize = parse_field(it.next(), line_no, "m")?;
        let mut adjacency = Vec::with_capacity(n);
        for v in 0..n {
            let (line_no, line) = lines.next().ok_or(GraphError::Parse {
                line: 0,
                msg: format!("missing adjacency line for node {v}"),
            })?;
            let mut it = line.split_whitespace();
            let deg: usize = parse_field(it.next(), line_no, "degree")?;
            let mut row = Vec::with_capacity(deg);
            let mut ports_seen = HashSet::new();
            for k in 0..deg {
                let u: usize = parse_field(it.next(), line_no, "neighbor")?;
                let j: Port = parse_field(it.next(), line_no, "reverse port")?;
                row.push((u, j));
                let _ = k;
            }
            if it.next().is_some() {
                return Err(GraphError::Parse {
                    line: line_no,
                    msg: "trailing tokens after adjacency pairs".into(),
                });
            }
            // Duplicate reverse ports on the same neighbor line are a
            // malformed encoding (each port index is used once).
            for &(u, j) in &row {
                if !ports_seen.insert((u, j)) {
                    return Err(GraphError::Parse {
                        line: line_no,
                        msg: format!("duplicate pair {u} {j}"),
                    });
                }
            }
            adjacency.push(row);
        }
        let g = PortLabeledGraph::from_adjacency(adjacency);
        if g.edge_count != m {
            return Err(GraphError::Parse {
                line: line_no,
                msg: format!("header claims {m} edges, adjacency encodes {}", g.edge_count),
            });
        }
        if let Some(v) = g.validate().into_iter().next() {
            return Err(GraphError::Invalid(v));
        }
        Ok(g)
    }
}

fn parse_field<T: std::str::FromStr>(
    tok: Option<&str>,
    line: usize,
    what: &str,
) -> Result<T, GraphError> {
    tok.ok_or(GraphError::Parse { line, msg: format!("missing {what}") })?
        .parse()
        .map_err(|_| GraphError::Parse { line, msg: format!("bad {what}") })
}

/// Family of generated graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphFamily {
    Path,
    Cycle,
    Complete,
    Star,
    Tree,
    RandomConnected,
}

impl std::str::FromStr for GraphFamily {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "path" => Ok(GraphFamily::Path),
            "cycle" => Ok(GraphFamily::Cycle),
            "complete" => Ok(GraphFamily::Complete),
            "star" => Ok(GraphFamily::Star),
            "tree" => Ok(GraphFamily::Tree),
            "random" | "random_connected" => Ok(GraphFamily::RandomConnected),
            other => Err(format!("unknown family `{other}`")),
        }
    }
}

/// Parameters for [`generate`]. Same spec (seed included) always yields a
/// bit-identical graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphFamilySpec {
    pub family: GraphFamily,
    pub n: usize,
    /// Edge count; used by [`GraphFamily::RandomConnected`] only.
    pub m: Option<usize>,
    pub seed: u64,
}

/// Builds a graph of the requested family. Deterministic in the spec.
pub fn generate(spec: &GraphFamilySpec) -> Result<PortLabeledGraph, GraphError> {
    let n = spec.n;
    if n < 2 {
        return Err(GraphError::Infeasible(format!(
            "need at least 2 nodes, got {n}"
        )));
    }
    // Cycles fix port 0 toward the successor at every node; the other
    // deterministic families take the edge-insertion order.
    if spec.family == GraphFamily::Cycle {
        if n < 3 {
            return Err(GraphError::Infeasible("cycle needs n >= 3".into()));
        }
        let lists: Vec<Vec<NodeId>> =
            (0..n).map(|i| vec![(i + 1) % n, (i + n - 1) % n]).collect();
        return Ok(link_ports(lists));
    }
    let edges: Vec<(NodeId, NodeId)> = match spec.family {
        GraphFamily::Path => (0..n - 1).map(|i| (i, i + 1)).collect(),
        GraphFamily::Cycle => unreachable!(),
        GraphFamily::Complete => (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect(),
        GraphFamily::Star => (1..n).map(|i| (0, i)).collect(),
        GraphFamily::Tree => {
            let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
            random_tree(n, &mut rng)
        }
        GraphFamily::RandomConnected => {
            let m = spec.m.ok_or(GraphError::Infeasible(
                "random_connected requires an edge count m".into(),
            ))?;
            let max = n * (n - 1) / 2;
            if m < n - 1 || m > max {
                return Err(GraphError::Infeasible(format!(
                    "random_connected needs n-1 <= m <= n(n-1)/2, got n={n} m={m}"
                )));
            }
            let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
            let mut edges = random_tree(n, &mut rng);
            let tree_set: HashSet<(usize, usize)> = edges.iter().copied().collect();
            let mut extra: Vec<(usize, usize)> = (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .filter(|e| !tree_set.contains(e))
                .collect();
            extra.shuffle(&mut rng);
            edges.extend(extra.into_iter().take(m - (n - 1)));
            edges
        }
    };

    let mut adjacency: Vec<Vec<NodeId>> = vec![Vec::new(); n];
    for &(a, b) in &edges {
        adjacency[a].push(b);
        adjacency[b].push(a);
    }
    // Random families get an independent seeded port permutation per node;
    // deterministic families keep the canonical order fixed above.
    if matches!(spec.family, GraphFamily::Tree | GraphFamily::RandomConnected) {
        let mut rng = ChaCha12Rng::seed_from_u64(spec.seed.wrapping_add(0x9e3779b97f4a7c15));
        for row in adjacency.iter_mut() {
            row.shuffle(&mut rng);
        }
    }
    Ok(link_ports(adjacency))
}

/// Uniform random labelled tree on `n` nodes via a Prüfer sequence.
fn random_tree(n: usize, rng: &mut ChaCha12Rng) -> Vec<(NodeId, NodeId)> {
    if n == 2 {
        return vec![(0, 1)];
    }
    let prufer: Vec<usize> = (0..n - 2).map(|_| rng.gen_range(0..n)).collect();
    let mut degree = vec![1usize; n];
    for &p in &prufer {
        degree[p] += 1;
    }
    let mut edges = Vec::with_capacity(n - 1);
    let mut leaf_heap: std::collections::BinaryHeap<std::cmp::Reverse<usize>> = (0..n)
        .filter(|&v| degree[v] == 1)
        .map(std::cmp::Reverse)
        .collect();
    for &p in &prufer {
        let std::cmp::Reverse(leaf) = leaf_heap.pop().expect("tree leaf");
        edges.push((leaf.min(p), leaf.max(p)));
        degree[p] -= 1;
        if degree[p] == 1 {
            leaf_heap.push(std::cmp::Reverse(p));
        }
    }
    let std::cmp::Reverse(a) = leaf_heap.pop().expect("last leaf");
    let std::cmp::Reverse(b) = leaf_heap.pop().expect("last leaf");
    edges.push((a.min(b), a.max(b)));
    edges
}

/// Assigns reverse ports once each node's neighbor order (= port order) is
/// fixed.
fn link_ports(adjacency: Vec<Vec<NodeId>>) -> PortLabeledGraph {
    let n = adjacency.len();
    let mut port_of: Vec<std::collections::HashMap<NodeId, Port>> =
        vec![std::collections::HashMap::new(); n];
    for (v, row) in adjacency.iter().enumerate() {
        for (i, &u) in row.iter().enumerate() {
            port_of[v].insert(u, i as Port);
        }
    }
    let linked = adjacency
        .iter()
        .enumerate()
        .map(|(v, row)| row.iter().map(|&u| (u, port_of[u][&v])).collect())
        .collect();
    PortLabeledGraph::from_adjacency(linked)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(family: GraphFamily, n: usize, m: Option<usize>, seed: u64) -> GraphFamilySpec {
        GraphFamilySpec { family, n, m, seed }
    }

    #[test]
    fn path_n2_is_the_single_edge() {
        let g = generate(&spec(GraphFamily::Path, 2, None, 0)).unwrap();
        assert_eq!(g.neighbor(0, 0).unwrap(), (1, 0));
        assert_eq!(g.neighbor(1, 0).unwrap(), (0, 0));
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn cycle_c3_canonical_ports() {
        let g = generate(&spec(GraphFamily::Cycle, 3, None, 0)).unwrap();
        assert_eq!(g.neighbor(0, 0).unwrap(), (1, 1));
        assert_eq!(g.neighbor(0, 1).unwrap(), (2, 0));
    }

    #[test]
    fn complete_k4_degrees_and_edges() {
        let g = generate(&spec(GraphFamily::Complete, 4, None, 0)).unwrap();
        assert!((0..4).all(|v| g.degree(v) == 3));
        assert_eq!(g.edge_count(), 6);
    }

    #[test]
    fn degree_one_neighbor_is_forced() {
        let g = generate(&spec(GraphFamily::Star, 5, None, 0)).unwrap();
        for leaf in 1..5 {
            assert_eq!(g.neighbor(leaf, 0).unwrap().0, 0);
        }
    }

    #[test]
    fn neighbor_round_trips_on_random_graph() {
        // Oracle for the involution invariant: exhaustive round-trip check.
        let g = generate(&spec(GraphFamily::RandomConnected, 8, Some(12), 7)).unwrap();
        for v in 0..g.node_count() {
            for i in 0..g.degree(v) {
                let (u, j) = g.neighbor(v, i as Port).unwrap();
                assert_eq!(g.neighbor(u, j).unwrap(), (v, i as Port));
            }
        }
    }

    #[test]
    fn out_of_range_port_is_usage_error() {
        let g = generate(&spec(GraphFamily::Path, 2, None, 0)).unwrap();
        assert!(matches!(
            g.neighbor(0, 5),
            Err(GraphError::PortOutOfRange { node: 0, port: 5, .. })
        ));
    }

    #[test]
    fn generate_is_deterministic_in_the_spec() {
        let s = spec(GraphFamily::RandomConnected, 10, Some(20), 42);
        let a = generate(&s).unwrap().store();
        let b = generate(&s).unwrap().store();
        assert_eq!(a, b);
    }

    #[test]
    fn generator_output_always_validates() {
        let specs = [
            spec(GraphFamily::Path, 6, None, 1),
            spec(GraphFamily::Cycle, 7, None, 1),
            spec(GraphFamily::Complete, 5, None, 1),
            spec(GraphFamily::Star, 9, None, 1),
            spec(GraphFamily::Tree, 12, None, 3),
            spec(GraphFamily::RandomConnected, 12, Some(20), 3),
        ];
        for s in specs {
            assert!(generate(&s).unwrap().validate().is_empty(), "{s:?}");
        }
    }

    #[test]
    fn infeasible_random_edge_count_rejected() {
        assert!(generate(&spec(GraphFamily::RandomConnected, 4, Some(10), 0)).is_err());
        assert!(generate(&spec(GraphFamily::RandomConnected, 4, Some(2), 0)).is_err());
    }

    #[test]
    fn symmetry_violation_detected() {
        // adjacency[0][0]=(1,0) but adjacency[1][0]=(2,1)
        let g = PortLabeledGraph::from_adjacency(vec![
            vec![(1, 0)],
            vec![(2, 1)],
            vec![(0, 0), (1, 0)],
        ]);
        let vs = g.validate();
        assert!(vs.contains(&Violation::PortSymmetry { node: 0, port: 0 }));
    }

    #[test]
    fn two_components_flag_connectivity() {
        // two disjoint edges
        let g = PortLabeledGraph::from_adjacency(vec![
            vec![(1, 0)],
            vec![(0, 0)],
            vec![(3, 0)],
            vec![(2, 0)],
        ]);
        let vs = g.validate();
        assert!(vs
            .iter()
            .any(|v| matches!(v, Violation::Disconnected { .. })));
    }

    #[test]
    fn store_format_for_p2() {
        let g = generate(&spec(GraphFamily::Path, 2, None, 0)).unwrap();
        assert_eq!(g.store(), "2 1\n1 1 0\n1 0 0\n");
    }

    #[test]
    fn load_rejects_duplicate_port_pair() {
        // node 0 lists the pair `1 0` twice
        let text = "2 2\n2 1 0 1 0\n2 0 0 0 1\n";
        assert!(PortLabeledGraph::load(text).is_err());
    }

    #[test]
    fn load_store_round_trip_on_corpus() {
        let specs = [
            spec(GraphFamily::Path, 5, None, 0),
            spec(GraphFamily::Star, 6, None, 0),
            spec(GraphFamily::RandomConnected, 9, Some(14), 11),
        ];
        for s in specs {
            let g = generate(&s).unwrap();
            let h = PortLabeledGraph::load(&g.store()).unwrap();
            assert_eq!(g, h);
            assert_eq!(g.store(), h.store());
        }
    }
}
