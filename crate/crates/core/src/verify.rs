//! Independent oracles over final configurations and traces: dispersion,
//! maximal independence, leader uniqueness, tree validity, memory and
//! round budgets, plus brute-force enumeration on small graphs.
//!
//! Checkers read the engine's ground-truth state (node indices included);
//! the anonymity firewall applies to protocol code only.

use crate::engine::{Metrics, PhaseTag, SimState, TreeSnapshot, FIELDS, FIELD_COUNT};
use crate::graph::{NodeId, PortLabeledGraph};

/// Pass/fail with a witness on failure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub pass: bool,
    pub witness: Option<String>,
}

impl Verdict {
    pub fn pass() -> Self {
        Verdict { pass: true, witness: None }
    }

    pub fn fail(witness: impl Into<String>) -> Self {
        Verdict { pass: false, witness: Some(witness.into()) }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.pass {
            write!(f, "pass")
        } else {
            write!(f, "FAIL ({})", self.witness.as_deref().unwrap_or("no witness"))
        }
    }
}

/// Final placement summary: who sits where, and the derived occupied set.
#[derive(Debug, Clone)]
pub struct Configuration {
    pub n: usize,
    /// per node: (agent id, settled-in-place flag)
    pub per_node: Vec<Vec<(u64, bool)>>,
    /// nodes hosting a finally-settled agent that stayed in place
    pub occupied: Vec<NodeId>,
}

impl Configuration {
    pub fn from_sim(sim: &SimState) -> Self {
        let n = sim.graph.node_count();
        let mut per_node: Vec<Vec<(u64, bool)>> = vec![Vec::new(); n];
        for (i, a) in sim.agents().iter().enumerate() {
            let in_place = a.final_set && !a.relocated;
            per_node[sim.positions()[i]].push((a.id, in_place));
        }
        Configuration { n, per_node, occupied: sim.occupied_set() }
    }
}

/// Every node is home to exactly one settled agent (virtually covering
/// settlers count for their own node).
pub fn check_dispersion(sim: &SimState) -> Verdict {
    let n = sim.graph.node_count();
    let mut cover = vec![0usize; n];
    for (i, h) in sim.homes().iter().enumerate() {
        if let Some(v) = h {
            if sim.agents()[i].settled {
                cover[*v] += 1;
            }
        }
    }
    for (v, &c) in cover.iter().enumerate() {
        if c == 0 {
            return Verdict::fail(format!("node {v} hosts no settler"));
        }
        if c > 1 {
            return Verdict::fail(format!("node {v} hosts {c} settlers"));
        }
    }
    Verdict::pass()
}

/// The two D-2-D conditions plus the everyone-ends-on-an-occupied-node
/// requirement.
pub fn check_d2d(config: &Configuration, g: &PortLabeledGraph) -> Verdict {
    let occupied: std::collections::HashSet<NodeId> = config.occupied.iter().copied().collect();
    for &v in &config.occupied {
        for u in g.neighbors(v) {
            if occupied.contains(&u) {
                return Verdict::fail(format!("adjacent occupied pair ({v}, {u})"));
            }
        }
    }
    for v in 0..config.n {
        if !occupied.contains(&v) && !g.neighbors(v).any(|u| occupied.contains(&u)) {
            return Verdict::fail(format!("node {v} has no occupied neighbor"));
        }
    }
    for (v, agents) in config.per_node.iter().enumerate() {
        if !agents.is_empty() && !occupied.contains(&v) {
            return Verdict::fail(format!(
                "agent {} ended at unoccupied node {v}",
                agents[0].0
            ));
        }
    }
    Verdict::pass()
}

/// Exhaustive enumeration of all maximal independent sets; the acceptance
/// oracle for small graphs.
pub fn enumerate_mis(g: &PortLabeledGraph) -> Result<Vec<Vec<NodeId>>, String> {
    let n = g.node_count();
    if n > 20 {
        return Err(format!("refusing exhaustive enumeration for n = {n} > 20"));
    }
    let mut adj = vec![0u32; n];
    for v in 0..n {
        for u in g.neighbors(v) {
            adj[v] |= 1 << u;
        }
    }
    let mut out = Vec::new();
    for set in 0u32..(1 << n) {
        let mut independent = true;
        for v in 0..n {
            if set & (1 << v) != 0 && adj[v] & set != 0 {
                independent = false;
                break;
            }
        }
        if !independent {
            continue;
        }
        let maximal = (0..n).all(|v| set & (1 << v) != 0 || adj[v] & set != 0);
        if !maximal {
            continue;
        }
        let members: Vec<NodeId> = (0..n).filter(|&v| set & (1 << v) != 0).collect();
        out.push(members);
    }
    // self-check: distinct, independent, maximal
    for s in &out {
        let mask: u32 = s.iter().map(|&v| 1u32 << v).sum();
        for &v in s {
            assert_eq!(adj[v] & mask, 0, "oracle produced a dependent set");
        }
        for v in 0..n {
            assert!(
                mask & (1 << v) != 0 || adj[v] & mask != 0,
                "oracle produced a non-maximal set"
            );
        }
    }
    Ok(out)
}

/// Exactly one agent ever conducts phase 3, and it carries the largest
/// initial group label.
pub fn check_single_leader(sim: &SimState) -> Verdict {
    let elected: Vec<&crate::protocol::AgentState> =
        sim.agents().iter().filter(|a| a.ph == 3).collect();
    match elected.as_slice() {
        [] => Verdict::fail("no agent was elected"),
        [one] => {
            let want = sim.metrics().max_group_label;
            if one.prm_leader == want {
                Verdict::pass()
            } else {
                Verdict::fail(format!(
                    "elected agent {} carries label {}, expected {}",
                    one.id, one.prm_leader, want
                ))
            }
        }
        many => Verdict::fail(format!(
            "{} agents flagged elected: {:?}",
            many.len(),
            many.iter().map(|a| a.id).collect::<Vec<_>>()
        )),
    }
}

/// The settlers' `prm_parent` ports at the merge milestone form a
/// spanning tree rooted where the surviving walker started, all labeled
/// with the elected label.
pub fn check_spanning_tree(snap: &TreeSnapshot, g: &PortLabeledGraph, label: i64) -> Verdict {
    let n = g.node_count();
    let mut parent_of: Vec<Option<NodeId>> = vec![None; n];
    for (v, entry) in snap.entries.iter().enumerate() {
        let Some((prm_parent, prm_leader, _dist)) = entry else {
            return Verdict::fail(format!("node {v} has no settler at the milestone"));
        };
        if *prm_leader != label {
            return Verdict::fail(format!(
                "settler at node {v} carries stale label {prm_leader}"
            ));
        }
        if v == snap.root {
            if *prm_parent >= 0 {
                return Verdict::fail(format!("root {v} carries a parent port"));
            }
            continue;
        }
        if *prm_parent < 0 {
            return Verdict::fail(format!("non-root node {v} has no parent port"));
        }
        match g.neighbor(v, *prm_parent as u16) {
            Ok((u, _)) => parent_of[v] = Some(u),
            Err(_) => return Verdict::fail(format!("node {v} parent port out of range")),
        }
    }
    // follow parents: every node must reach the root without cycles
    for start in 0..n {
        let mut hops = 0;
        let mut v = start;
        while v != snap.root {
            let Some(u) = parent_of[v] else {
                return Verdict::fail(format!("node {v} detached from the tree"));
            };
            v = u;
            hops += 1;
            if hops > n {
                return Verdict::fail(format!("cycle in parent chain from node {start}"));
            }
        }
    }
    let edge_count = parent_of.iter().filter(|p| p.is_some()).count();
    if edge_count != n - 1 {
        return Verdict::fail(format!("tree has {edge_count} edges, expected {}", n - 1));
    }
    // dist must be the tree-depth parity
    let mut depth = vec![usize::MAX; n];
    depth[snap.root] = 0;
    let mut frontier = vec![snap.root];
    while let Some(u) = frontier.pop() {
        for v in 0..n {
            if parent_of[v] == Some(u) && depth[v] == usize::MAX {
                depth[v] = depth[u] + 1;
                frontier.push(v);
            }
        }
    }
    for (v, entry) in snap.entries.iter().enumerate() {
        let (_, _, dist) = entry.unwrap();
        if depth[v] != usize::MAX && (depth[v] % 2) as u8 != dist {
            return Verdict::fail(format!(
                "node {v} records parity {dist}, tree depth is {}",
                depth[v]
            ));
        }
    }
    Verdict::pass()
}

/// Declared per-variable domain bound, as a maximum magnitude.
fn declared_bound(name: &str, n: usize, max_deg: usize) -> Option<i64> {
    let n = n as i64;
    let d = max_deg as i64;
    let log2n = (n.max(2) as f64).log2().ceil() as i64;
    Some(match name {
        "leader" | "prm_leader" | "met_prm" | "hopper_id" | "seen_virtual" | "probe_leader"
        | "proxy.leader"
        | "proxy.prm_leader" | "proxy.met_prm" => n * n,
        "next" | "help" | "checked" | "prnt_prt" | "v_prnt_port" | "prt_ent" | "nxt_prt"
        | "prm_parent" | "crnt_port" | "last_child" | "final_port" | "scan_port"
        | "cur_scan_port" | "after_wait_port" | "probe_port" | "helper_entry"
        | "proxy.parent" | "proxy.next" | "proxy.checked" | "proxy.prm_parent" => d,
        "lvl" | "lvl_l" | "lvl_s" | "probe_lvl" | "proxy.lvl" => log2n + 2,
        "count" => d,
        "wait_left" => 2 * d,
        "depth" => n,
        "finish_wait" => 2,
        "driver" => 5,
        "ret19" => 3,
        "ph" => 3,
        "recent" => 0,
        _ => 1, // flags, parity bits, presence markers
    })
}

/// Fields initialized to -1 (or encoding ⊥ as -1) need one extra value
/// slot beyond their magnitude range.
fn uses_sentinel(name: &str) -> bool {
    matches!(
        name,
        "next"
            | "help"
            | "checked"
            | "prnt_prt"
            | "v_prnt_port"
            | "prt_ent"
            | "nxt_prt"
            | "prm_parent"
            | "crnt_port"
            | "last_child"
            | "final_port"
            | "scan_port"
            | "cur_scan_port"
            | "after_wait_port"
            | "probe_port"
            | "probe_leader"
            | "probe_lvl"
            | "helper_entry"
            | "met_prm"
            | "prm_leader"
            | "hopper_id"
            | "seen_virtual"
            | "proxy.parent"
            | "proxy.next"
            | "proxy.checked"
            | "proxy.prm_parent"
            | "proxy.met_prm"
            | "proxy.prm_leader"
    )
}

fn width_bits(max_mag: i64, sentinel: bool) -> u32 {
    let values = max_mag.max(0) as u64 + 1 + sentinel as u64;
    if values <= 2 {
        1
    } else {
        64 - (values - 1).leading_zeros()
    }
}

/// Scratch markers that only live inside one round or one iteration frame
/// (snapshot-semantics bookkeeping); they carry no cross-iteration memory
/// and stay out of the per-agent total. Their domains are still audited.
fn round_transient(name: &str) -> bool {
    matches!(
        name,
        "found"
            | "acted_meet"
            | "acted_34"
            | "seen_real"
            | "seen_virtual"
            | "seen_body"
            | "probe_port"
            | "probe_leader"
            | "probe_lvl"
            | "helper_entry"
            | "helping"
            | "help_fresh"
            | "moved_forward"
            | "parity_out"
            | "ret19"
            | "pend18"
            | "drv_moved"
            | "scan_out"
            | "cur_scan_port"
            | "testing_out"
            | "tested_here"
    )
}

/// Per-variable bit-width audit over the run.
#[derive(Debug, Clone)]
pub struct MemoryAudit {
    /// (variable, observed max magnitude, observed bits, declared bound)
    pub per_field: Vec<(&'static str, i64, u32, i64)>,
    pub max_total_bits: u32,
    pub cap_bits: u32,
    pub violations: Vec<String>,
}

impl MemoryAudit {
    pub fn pass(&self) -> bool {
        self.violations.is_empty() && self.max_total_bits <= self.cap_bits
    }
}

/// Maximum bit-width each variable ever held, per agent, against its
/// declared domain; the total must stay within an O(log n) cap.
pub fn memory_audit(sim: &SimState) -> MemoryAudit {
    let n = sim.graph.node_count();
    let max_deg = sim.graph.max_degree();
    let log2n = (n.max(2) as f64).log2().ceil() as u32;
    let cap_bits = 40 * log2n + 64;
    let (totals, max_total) = total_bits_per_agent(sim);
    let _ = totals;
    let mut per_field = Vec::with_capacity(FIELD_COUNT);
    let mut violations = Vec::new();
    for f in 0..FIELD_COUNT {
        let (name, _) = FIELDS[f];
        let observed = sim.maxima().iter().map(|m| m[f]).max().unwrap_or(0);
        let bound = declared_bound(name, n, max_deg).unwrap_or(i64::MAX);
        if observed > bound {
            violations.push(format!(
                "variable {name} reached {observed}, outside its declared domain (max {bound})"
            ));
        }
        per_field.push((name, observed, width_bits(observed, uses_sentinel(name)), bound));
    }
    MemoryAudit { per_field, max_total_bits: max_total, cap_bits, violations }
}

/// Total observed bit-width per agent, and the maximum over agents.
pub fn total_bits_per_agent(sim: &SimState) -> (Vec<u32>, u32) {
    let totals: Vec<u32> = sim
        .maxima()
        .iter()
        .map(|m| {
            m.iter()
                .enumerate()
                .filter(|(f, _)| !round_transient(FIELDS[*f].0))
                .map(|(f, &v)| width_bits(v, uses_sentinel(FIELDS[f].0)))
                .sum()
        })
        .collect();
    let max = totals.iter().copied().max().unwrap_or(0);
    (totals, max)
}

/// Round-budget ratio: rounds divided by `24·max(n⌈log₂n⌉², m)`.
pub fn round_budget_ratio(metrics: &Metrics) -> f64 {
    metrics.rho
}

/// Variables written outside their phase's sub-round window, excluding
/// the explicitly shared ones.
pub fn phase_isolation_violations(sim: &SimState) -> Vec<String> {
    let mut out = Vec::new();
    for (&(field, sub_round), &count) in sim.write_log() {
        let (name, tag) = FIELDS[field];
        if !tag.allows(sub_round) {
            out.push(format!(
                "{name} written {count} times in sub-round {sub_round}"
            ));
        }
    }
    let _ = PhaseTag::Shared;
    out
}

/// Termination bookkeeping: every agent flips `terminated` exactly once
/// and ends with a drained count.
pub fn check_termination_bookkeeping(sim: &SimState) -> Verdict {
    let n = sim.agents().len();
    let terminated_writes: u64 = sim
        .write_log()
        .iter()
        .filter(|((f, _), _)| FIELDS[*f].0 == "terminated")
        .map(|(_, c)| *c)
        .sum();
    if terminated_writes != n as u64 {
        return Verdict::fail(format!(
            "{terminated_writes} terminated transitions for {n} agents"
        ));
    }
    for a in sim.agents() {
        if !a.terminated {
            return Verdict::fail(format!("agent {} never terminated", a.id));
        }
        if a.final_set && a.count != 0 {
            return Verdict::fail(format!(
                "agent {} terminated with count {}",
                a.id, a.count
            ));
        }
    }
    Verdict::pass()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate, GraphFamily, GraphFamilySpec};

    fn gen(family: GraphFamily, n: usize) -> PortLabeledGraph {
        generate(&GraphFamilySpec { family, n, m: None, seed: 0 }).unwrap()
    }

    #[test]
    fn mis_of_k3_is_singletons() {
        let g = gen(GraphFamily::Complete, 3);
        let sets = enumerate_mis(&g).unwrap();
        assert_eq!(sets, vec![vec![0], vec![1], vec![2]]);
    }

    #[test]
    fn mis_of_c4_is_the_two_diagonals() {
        let g = gen(GraphFamily::Cycle, 4);
        let sets = enumerate_mis(&g).unwrap();
        assert_eq!(sets, vec![vec![0, 2], vec![1, 3]]);
    }

    #[test]
    fn mis_of_star_is_center_or_leaves() {
        let g = gen(GraphFamily::Star, 4);
        let sets = enumerate_mis(&g).unwrap();
        assert!(sets.contains(&vec![0]));
        assert!(sets.contains(&vec![1, 2, 3]));
        assert_eq!(sets.len(), 2);
    }

    #[test]
    fn enumeration_refuses_large_graphs() {
        let g = gen(GraphFamily::Path, 21);
        assert!(enumerate_mis(&g).is_err());
    }

    #[test]
    fn d2d_rejects_adjacent_pair_and_nonmaximal() {
        let g = gen(GraphFamily::Cycle, 4);
        let bad = Configuration {
            n: 4,
            per_node: vec![vec![(1, true)], vec![(2, true)], vec![], vec![]],
            occupied: vec![0, 1],
        };
        let v = check_d2d(&bad, &g);
        assert!(!v.pass);
        assert!(v.witness.unwrap().contains("adjacent"));

        // Brute force settles what's maximal in C5: {0,2} covers node 4
        // through node 0, so it IS maximal; {0} alone is not (node 2 is
        // uncovered and independent).
        let g5 = gen(GraphFamily::Cycle, 5);
        let sets = enumerate_mis(&g5).unwrap();
        assert!(sets.contains(&vec![0, 2]));
        assert!(!sets.contains(&vec![0]));
        let bad5 = Configuration {
            n: 5,
            per_node: vec![vec![(1, true)], vec![], vec![], vec![], vec![]],
            occupied: vec![0],
        };
        let v5 = check_d2d(&bad5, &g5);
        assert!(!v5.pass);
        assert!(v5.witness.unwrap().contains("no occupied neighbor"));
    }

    #[test]
    fn spanning_tree_checker_accepts_a_path_tree() {
        let g = gen(GraphFamily::Path, 3);
        // path 0-1-2 rooted at 0: node1 parent port 0 (toward 0), node2
        // parent port 0 (toward 1)
        let snap = crate::engine::TreeSnapshot {
            root: 0,
            entries: vec![Some((-1, 9, 0)), Some((0, 9, 1)), Some((0, 9, 0))],
        };
        assert!(check_spanning_tree(&snap, &g, 9).pass);
        // stale label fails
        let snap2 = crate::engine::TreeSnapshot {
            root: 0,
            entries: vec![Some((-1, 9, 0)), Some((0, 5, 1)), Some((0, 9, 0))],
        };
        assert!(!check_spanning_tree(&snap2, &g, 9).pass);
    }

    #[test]
    fn width_bits_matches_small_cases() {
        // flags: one bit
        assert_eq!(width_bits(1, false), 1);
        // port variables on a degree-8 graph, sentinel included
        assert_eq!(width_bits(7, true), 4);
        assert_eq!(width_bits(2, false), 2);
        assert_eq!(width_bits(0, true), 1);
    }
}
