//! The synchronous round engine.
//!
//! Each global round maps to a sub-round of the 24-round iteration frame.
//! A round runs in three stages: every agent observes the start-of-round
//! snapshot, the sub-round's protocol operation computes updates, and all
//! queued moves apply together. State changes are diffed against the
//! snapshot to produce the trace, feed the memory audit, and check phase
//! isolation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::{GraphError, NodeId, Port, PortLabeledGraph};
use crate::protocol::{
    self, AgentState, DriverPhase, ProtocolFault, ReadStats, Ret19, RoundCtx, Trav,
};

/// Splits a global round number into (iteration, sub-round), both
/// 1-based; sub-round ranges over 1..=24.
pub fn decompose_round(t: u64) -> (u64, u8) {
    assert!(t >= 1, "rounds are 1-based");
    (((t - 1) / 24) + 1, (((t - 1) % 24) + 1) as u8)
}

/// Default round cap: a generous multiple of the protocol's budget, so a
/// timeout always signals a bug rather than a slow run.
pub fn default_max_rounds(n: usize, m: usize) -> u64 {
    let log = (n.max(2) as f64).log2().ceil() as u64;
    let budget = (n as u64 * log * log).max(m as u64);
    64 * budget * 24 + 4096
}

/// Where each agent starts. With `n` agents on `n` nodes, `p` is the
/// number of occupied nodes.
#[derive(Debug, Clone)]
pub struct Placement {
    /// node -> agent ids initially there; nodes strictly increasing.
    pub groups: Vec<(NodeId, Vec<u64>)>,
}

impl Placement {
    pub fn rooted(ids: Vec<u64>) -> Self {
        Placement { groups: vec![(0, ids)] }
    }

    pub fn scattered(ids: Vec<u64>) -> Self {
        Placement {
            groups: ids.into_iter().enumerate().map(|(v, id)| (v, vec![id])).collect(),
        }
    }

    /// Spreads the ids over `p` seeded-random distinct nodes.
    pub fn random_p(n: usize, p: usize, mut ids: Vec<u64>, seed: u64) -> Self {
        use rand::seq::SliceRandom;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed ^ 0x5bd1_e995);
        let mut nodes: Vec<NodeId> = (0..n).collect();
        nodes.shuffle(&mut rng);
        let chosen = &mut nodes[..p.clamp(1, n)];
        chosen.sort_unstable();
        ids.shuffle(&mut rng);
        let mut groups: BTreeMap<NodeId, Vec<u64>> = BTreeMap::new();
        for (i, id) in ids.into_iter().enumerate() {
            groups.entry(chosen[i % chosen.len()]).or_default().push(id);
        }
        Placement { groups: groups.into_iter().collect() }
    }

    pub fn total_agents(&self) -> usize {
        self.groups.iter().map(|(_, g)| g.len()).sum()
    }

    pub fn occupied_nodes(&self) -> usize {
        self.groups.len()
    }

    /// Largest initial group label: each group's label is the largest id
    /// in it, so this is the largest id overall.
    pub fn max_group_label(&self) -> i64 {
        self.groups
            .iter()
            .flat_map(|(_, g)| g.iter().copied())
            .max()
            .map(|x| x as i64)
            .unwrap_or(-1)
    }
}

/// Draws `n` distinct agent ids uniformly from `[1, n^c]`, seeded.
pub fn draw_agent_ids(n: usize, c: u32, seed: u64) -> Vec<u64> {
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let cap = (n as u64).saturating_pow(c).max(n as u64);
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let id = rng.gen_range(1..=cap);
        if seen.insert(id) {
            out.push(id);
        }
    }
    out
}

/// One observable action, with round coordinates and the node it happened
/// at (node indices are for the auditor only).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub t: u64,
    pub iteration: u64,
    pub sub_round: u8,
    pub agent: u64,
    pub action: Action,
    pub node: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Moved(Port),
    Settled,
    Unsettled,
    VarUpdate { name: &'static str, old: i64, new: i64 },
    Terminated,
}

impl TraceEvent {
    fn kind_rank(&self) -> u8 {
        match self.action {
            Action::Moved(_) => 0,
            Action::Settled => 1,
            Action::Unsettled => 2,
            Action::VarUpdate { .. } => 3,
            Action::Terminated => 4,
        }
    }

    pub fn line(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{} {} {} {} ", self.t, self.iteration, self.sub_round, self.agent);
        match &self.action {
            Action::Moved(p) => { let _ = write!(s, "moved({p})"); }
            Action::Settled => s.push_str("settled"),
            Action::Unsettled => s.push_str("unsettled"),
            Action::VarUpdate { name, old, new } => {
                let _ = write!(s, "var_update({name},{old},{new})");
            }
            Action::Terminated => s.push_str("terminated"),
        }
        let _ = write!(s, " {}", self.node);
        s
    }
}

/// Which phase a variable belongs to, for the isolation check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseTag {
    P1,
    P2,
    P23,
    P3,
    Shared,
    Aux,
}

impl PhaseTag {
    /// Sub-round window in which writes to this class are legitimate.
    pub fn allows(self, sub_round: u8) -> bool {
        match self {
            PhaseTag::P1 => (1..=15).contains(&sub_round),
            PhaseTag::P2 => (16..=19).contains(&sub_round),
            PhaseTag::P23 => (16..=24).contains(&sub_round),
            PhaseTag::P3 => (20..=24).contains(&sub_round),
            PhaseTag::Shared | PhaseTag::Aux => true,
        }
    }
}

pub const FIELDS: &[(&str, PhaseTag)] = &[
    ("settled", PhaseTag::P1),
    ("leader", PhaseTag::P1),
    ("lvl", PhaseTag::P1),
    ("lvl_l", PhaseTag::P1),
    ("lvl_s", PhaseTag::P1),
    ("next", PhaseTag::P1),
    ("checked", PhaseTag::P1),
    ("help", PhaseTag::P1),
    ("done", PhaseTag::P1),
    ("found", PhaseTag::P1),
    ("init_probe", PhaseTag::P1),
    ("prnt_prt", PhaseTag::P1),
    ("vprnt", PhaseTag::Shared),
    ("v_prnt_port", PhaseTag::Shared),
    ("sticky", PhaseTag::Shared),
    ("flag", PhaseTag::Shared),
    ("flag_1", PhaseTag::Shared),
    ("prm_leader", PhaseTag::Shared),
    ("prt_ent", PhaseTag::Shared),
    ("ph", PhaseTag::Shared),
    ("met_prm", PhaseTag::P2),
    ("nxt_prt", PhaseTag::P2),
    ("prm_parent", PhaseTag::P2),
    ("state", PhaseTag::P23),
    ("dist", PhaseTag::P23),
    ("crnt_port", PhaseTag::P3),
    ("last_child", PhaseTag::P3),
    ("decision", PhaseTag::P3),
    ("final_set", PhaseTag::P3),
    ("final_port", PhaseTag::P3),
    ("count", PhaseTag::P3),
    ("relocated", PhaseTag::P3),
    ("terminated", PhaseTag::P3),
    ("scan_port", PhaseTag::P3),
    ("scan_out", PhaseTag::P3),
    ("cur_scan_port", PhaseTag::P3),
    ("wait_left", PhaseTag::P3),
    ("after_wait_port", PhaseTag::P3),
    ("follow_host", PhaseTag::P3),
    ("home_parent_port", PhaseTag::Aux),
    ("home_found", PhaseTag::Aux),
    ("tested_here", PhaseTag::Aux),
    ("testing_out", PhaseTag::Aux),
    ("walk_done", PhaseTag::Aux),
    ("pending_p1_detach", PhaseTag::Aux),
    ("driver", PhaseTag::Aux),
    ("depth", PhaseTag::Aux),
    ("progressed", PhaseTag::Aux),
    ("hopper_id", PhaseTag::Aux),
    ("pass_dirty", PhaseTag::Aux),
    ("finish_wait", PhaseTag::Aux),
    ("acted_meet", PhaseTag::Aux),
    ("acted_34", PhaseTag::Aux),
    ("seen_real", PhaseTag::Aux),
    ("seen_virtual", PhaseTag::Aux),
    ("seen_body", PhaseTag::Aux),
    ("probe_port", PhaseTag::Aux),
    ("probe_leader", PhaseTag::Aux),
    ("probe_lvl", PhaseTag::Aux),
    ("helper_entry", PhaseTag::Aux),
    ("helping", PhaseTag::Aux),
    ("help_fresh", PhaseTag::Aux),
    ("moved_forward", PhaseTag::Aux),
    ("parity_out", PhaseTag::Aux),
    ("ret19", PhaseTag::Aux),
    ("pend18", PhaseTag::Aux),
    ("drv_moved", PhaseTag::Aux),
    ("recent", PhaseTag::Aux),
    ("proxy.present", PhaseTag::Aux),
    ("proxy.leader", PhaseTag::Aux),
    ("proxy.lvl", PhaseTag::Aux),
    ("proxy.parent", PhaseTag::Aux),
    ("proxy.next", PhaseTag::Aux),
    ("proxy.checked", PhaseTag::Aux),
    ("proxy.done", PhaseTag::Aux),
    ("proxy.prm_leader", PhaseTag::Aux),
    ("proxy.met_prm", PhaseTag::Aux),
    ("proxy.prm_parent", PhaseTag::Aux),
    ("proxy.dist", PhaseTag::Aux),
    ("adoption.present", PhaseTag::Aux),
];

pub const FIELD_COUNT: usize = FIELDS.len();

fn opt_port(p: Option<Port>) -> i64 {
    p.map(|x| x as i64).unwrap_or(-1)
}

/// Flattens every field into a fixed-width numeric vector; the diff of
/// two vectors yields the round's variable updates.
pub fn field_vector(a: &AgentState, out: &mut [i64; FIELD_COUNT]) {
    let px = a.proxy.as_deref();
    let vals: [i64; FIELD_COUNT] = [
        a.settled as i64,
        a.leader as i64,
        a.lvl as i64,
        a.lvl_l as i64,
        a.lvl_s as i64,
        opt_port(a.next),
        a.checked as i64,
        opt_port(a.help),
        a.done as i64,
        a.found as i64,
        a.init_probe as i64,
        a.prnt_prt as i64,
        a.vprnt as i64,
        a.v_prnt_port as i64,
        a.sticky as i64,
        a.flag as i64,
        a.flag_1 as i64,
        a.prm_leader,
        a.prt_ent as i64,
        a.ph as i64,
        a.met_prm,
        a.nxt_prt as i64,
        a.prm_parent as i64,
        matches!(a.trav, Trav::Backtrack) as i64,
        a.dist as i64,
        opt_port(a.crnt_port),
        a.last_child as i64,
        a.decision as i64,
        a.final_set as i64,
        a.final_port as i64,
        a.count as i64,
        a.relocated as i64,
        a.terminated as i64,
        a.scan_port as i64,
        a.scan_out as i64,
        a.cur_scan_port as i64,
        a.wait_left as i64,
        a.after_wait_port as i64,
        a.follow_host as i64,
        a.home_parent_port as i64,
        a.home_found as i64,
        a.tested_here as i64,
        a.testing_out as i64,
        a.walk_done as i64,
        a.pending_p1_detach as i64,
        match a.driver {
            DriverPhase::None => 0,
            DriverPhase::Active => 1,
            DriverPhase::StoppedHome => 2,
            DriverPhase::StoppedAfield => 3,
            DriverPhase::Carried => 4,
            DriverPhase::Finished => 5,
        },
        a.depth as i64,
        a.progressed as i64,
        a.hopper_id,
        a.pass_dirty as i64,
        a.finish_wait as i64,
        a.acted_meet as i64,
        a.acted_34 as i64,
        a.seen_real as i64,
        a.seen_virtual,
        a.seen_body as i64,
        a.probe_port as i64,
        a.probe_leader,
        a.probe_lvl as i64,
        a.helper_entry as i64,
        a.helping as i64,
        a.help_fresh as i64,
        a.moved_forward as i64,
        a.parity_out as i64,
        match a.ret19 {
            Ret19::None => 0,
            Ret19::Bounce => 1,
            Ret19::Retreat => 2,
            Ret19::GoHome => 3,
        },
        a.pend18 as i64,
        a.drv_moved as i64,
        a.recent as i64,
        px.is_some() as i64,
        px.map(|p| p.leader as i64).unwrap_or(0),
        px.map(|p| p.lvl as i64).unwrap_or(0),
        px.map(|p| p.parent as i64).unwrap_or(0),
        px.map(|p| opt_port(p.next)).unwrap_or(0),
        px.map(|p| p.checked as i64).unwrap_or(0),
        px.map(|p| p.done as i64).unwrap_or(0),
        px.map(|p| p.prm_leader).unwrap_or(0),
        px.map(|p| p.met_prm).unwrap_or(0),
        px.map(|p| p.prm_parent as i64).unwrap_or(0),
        px.map(|p| p.dist as i64).unwrap_or(0),
        a.pending_adoption.is_some() as i64,
    ];
    out.copy_from_slice(&vals);
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("protocol fault at round {t} (agent {agent:?}): {message}")]
    Fault { t: u64, agent: Option<u64>, message: String },
    #[error("round budget exhausted after {0} rounds")]
    Timeout(u64),
    #[error("invalid placement: {0}")]
    BadPlacement(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Per-run measurements and milestones.
#[derive(Debug, Clone)]
pub struct Metrics {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub seed: u64,
    pub total_rounds: u64,
    pub dispersion_round: Option<u64>,
    pub merge_round: Option<u64>,
    pub termination_round: Option<u64>,
    pub mis_size: usize,
    pub elected_agent: Option<u64>,
    pub elected_prm_leader: Option<i64>,
    pub max_group_label: i64,
    pub rho: f64,
    pub max_agent_bits: u32,
    pub trace_hash: String,
    pub timed_out: bool,
}

/// Snapshot of each node's settler tree-fields at the merge milestone,
/// for the spanning-tree oracle.
#[derive(Debug, Clone)]
pub struct TreeSnapshot {
    pub root: NodeId,
    /// per node: (prm_parent, prm_leader, dist) of its settler.
    pub entries: Vec<Option<(i32, i64, u8)>>,
}

/// Global simulation state: one logical timeline.
pub struct SimState {
    pub graph: PortLabeledGraph,
    agents: Vec<AgentState>,
    pos: Vec<NodeId>,
    home: Vec<Option<NodeId>>,
    carried_by: Vec<Option<usize>>,
    walk_root: Vec<Option<NodeId>>,
    /// next round to execute, 1-based
    t: u64,
    seed: u64,
    p_initial: usize,
    max_group_label: i64,
    hasher: Sha256,
    trace_lines: Option<Vec<String>>,
    reads: ReadStats,
    /// (field index, sub-round) -> write count
    write_log: BTreeMap<(usize, u8), u64>,
    /// per agent, per field: maximum magnitude ever held
    maxima: Vec<[i64; FIELD_COUNT]>,
    dispersion_round: Option<u64>,
    merge_round: Option<u64>,
    termination_round: Option<u64>,
    elected: Option<usize>,
    tree_snapshot: Option<TreeSnapshot>,
    moves_this_round: Vec<(usize, Port)>,
    scratch_old: Vec<[i64; FIELD_COUNT]>,
}

impl SimState {
    /// Places the agents and initializes every variable to its declared
    /// starting value.
    pub fn init(
        graph: PortLabeledGraph,
        placement: &Placement,
        seed: u64,
        keep_trace: bool,
    ) -> Result<Self, SimError> {
        let n = graph.node_count();
        if placement.total_agents() != n {
            return Err(SimError::BadPlacement(format!(
                "need exactly {n} agents (one per node), got {}",
                placement.total_agents()
            )));
        }
        let mut ids: Vec<(u64, NodeId)> = Vec::with_capacity(n);
        for (v, group) in &placement.groups {
            if *v >= n {
                return Err(SimError::BadPlacement(format!("node {v} out of range")));
            }
            for id in group {
                ids.push((*id, *v));
            }
        }
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(SimError::BadPlacement("duplicate agent id".into()));
        }
        if ids.first().map(|x| x.0) == Some(0) {
            return Err(SimError::BadPlacement("agent ids start at 1".into()));
        }
        let agents: Vec<AgentState> = ids.iter().map(|&(id, _)| AgentState::new(id)).collect();
        let pos: Vec<NodeId> = ids.iter().map(|&(_, v)| v).collect();
        let mut maxima = vec![[0i64; FIELD_COUNT]; n];
        let mut buf = [0i64; FIELD_COUNT];
        for (i, a) in agents.iter().enumerate() {
            field_vector(a, &mut buf);
            for (m, v) in maxima[i].iter_mut().zip(buf.iter()) {
                *m = v.abs();
            }
        }
        Ok(SimState {
            graph,
            agents,
            pos,
            home: vec![None; n],
            carried_by: vec![None; n],
            walk_root: vec![None; n],
            t: 1,
            seed,
            p_initial: placement.occupied_nodes(),
            max_group_label: placement.max_group_label(),
            hasher: Sha256::new(),
            trace_lines: keep_trace.then(Vec::new),
            reads: ReadStats::default(),
            write_log: BTreeMap::new(),
            maxima,
            dispersion_round: None,
            merge_round: None,
            termination_round: None,
            elected: None,
            tree_snapshot: None,
            moves_this_round: Vec::new(),
            scratch_old: vec![[0i64; FIELD_COUNT]; n],
        })
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn positions(&self) -> &[NodeId] {
        &self.pos
    }

    pub fn homes(&self) -> &[Option<NodeId>] {
        &self.home
    }

    pub fn round(&self) -> u64 {
        self.t
    }

    pub fn reads(&self) -> &ReadStats {
        &self.reads
    }

    pub fn trace_lines(&self) -> Option<&[String]> {
        self.trace_lines.as_deref()
    }

    pub fn take_trace(&mut self) -> Option<Vec<String>> {
        self.trace_lines.take()
    }

    pub fn tree_snapshot(&self) -> Option<&TreeSnapshot> {
        self.tree_snapshot.as_ref()
    }

    pub fn maxima(&self) -> &[[i64; FIELD_COUNT]] {
        &self.maxima
    }

    pub fn write_log(&self) -> &BTreeMap<(usize, u8), u64> {
        &self.write_log
    }

    pub fn all_terminated(&self) -> bool {
        self.agents.iter().all(|a| a.terminated)
    }

    /// True when every node is home to exactly one settled agent.
    pub fn dispersion_holds(&self) -> bool {
        let n = self.graph.node_count();
        let mut cover = vec![0u8; n];
        for (i, h) in self.home.iter().enumerate() {
            if let Some(v) = h {
                if self.agents[i].settled {
                    cover[*v] += 1;
                }
            }
        }
        cover.iter().all(|&c| c == 1)
    }

    /// Executes one global round and returns the events it produced.
    pub fn step_round(&mut self) -> Result<Vec<TraceEvent>, SimError> {
        let t = self.t;
        let (iteration, sub_round) = decompose_round(t);
        let n_agents = self.agents.len();
        let n_nodes = self.graph.node_count();

        // start-of-round snapshot
        let snap: Vec<AgentState> = self.agents.clone();
        let snap_pos = self.pos.clone();
        let snap_home = self.home.clone();
        let snap_carried = self.carried_by.clone();
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
        for (i, &v) in snap_pos.iter().enumerate() {
            members[v].push(i); // index order == id order
        }
        for (i, a) in snap.iter().enumerate() {
            field_vector(a, &mut self.scratch_old[i]);
        }

        let (moves, faults) = {
            let mut ctx = RoundCtx::new(
                &self.graph,
                iteration,
                sub_round,
                &snap,
                &snap_pos,
                &snap_home,
                &snap_carried,
                &members,
                &mut self.agents,
                &mut self.home,
                &mut self.carried_by,
                &mut self.walk_root,
                &mut self.reads,
            );
            protocol::run_sub_round(&mut ctx);
            (std::mem::take(&mut ctx.moves), std::mem::take(&mut ctx.faults))
        };
        if let Some(f) = faults.into_iter().next() {
            return Err(self.fault(t, f));
        }

        let mut events: Vec<TraceEvent> = Vec::new();

        // apply moves (all together), dragging carried agents along
        self.moves_this_round.clear();
        self.moves_this_round.extend(moves);
        let mut moved = vec![false; n_agents];
        let mut applied: Vec<(usize, Port, NodeId, Port)> = Vec::new();
        for &(idx, port) in &self.moves_this_round {
            if moved[idx] {
                return Err(self.fault(
                    t,
                    ProtocolFault {
                        agent: Some(snap[idx].id),
                        message: "two moves in one round".into(),
                    },
                ));
            }
            moved[idx] = true;
            let from = self.pos[idx];
            let (dest, back) = self.graph.neighbor(from, port)?;
            applied.push((idx, port, dest, back));
            for c in 0..n_agents {
                if self.carried_by[c] == Some(idx) {
                    if moved[c] {
                        return Err(self.fault(
                            t,
                            ProtocolFault {
                                agent: Some(snap[c].id),
                                message: "carried agent moved twice".into(),
                            },
                        ));
                    }
                    moved[c] = true;
                    applied.push((c, port, dest, back));
                }
            }
        }
        for &(idx, port, dest, back) in &applied {
            self.pos[idx] = dest;
            self.agents[idx].prt_ent = back as i32;
            events.push(TraceEvent {
                t,
                iteration,
                sub_round,
                agent: snap[idx].id,
                action: Action::Moved(port),
                node: dest,
            });
        }

        // diff for var updates, audit maxima, and the phase-write log
        let mut buf = [0i64; FIELD_COUNT];
        for i in 0..n_agents {
            field_vector(&self.agents[i], &mut buf);
            let old = &self.scratch_old[i];
            for f in 0..FIELD_COUNT {
                if old[f] != buf[f] {
                    let (name, _) = FIELDS[f];
                    *self.write_log.entry((f, sub_round)).or_insert(0) += 1;
                    let action = match name {
                        "settled" if buf[f] == 1 => Action::Settled,
                        "settled" => Action::Unsettled,
                        "terminated" if buf[f] == 1 => Action::Terminated,
                        _ => Action::VarUpdate { name, old: old[f], new: buf[f] },
                    };
                    events.push(TraceEvent {
                        t,
                        iteration,
                        sub_round,
                        agent: self.agents[i].id,
                        action,
                        node: self.pos[i],
                    });
                }
                let mag = buf[f].abs();
                if mag > self.maxima[i][f] {
                    self.maxima[i][f] = mag;
                }
            }
        }

        events.sort_by(|a, b| {
            (a.agent, a.kind_rank())
                .cmp(&(b.agent, b.kind_rank()))
                .then_with(|| format!("{:?}", a.action).cmp(&format!("{:?}", b.action)))
        });
        for e in &events {
            let line = e.line();
            self.hasher.update(line.as_bytes());
            self.hasher.update(b"\n");
            if let Some(sink) = &mut self.trace_lines {
                sink.push(line);
            }
        }

        // milestones
        if self.dispersion_round.is_none() && self.dispersion_holds() {
            self.dispersion_round = Some(t);
        }
        if self.merge_round.is_none() {
            if let Some(i) = self.agents.iter().position(|a| a.ph == 3) {
                self.merge_round = Some(t);
                self.elected = Some(i);
                self.tree_snapshot = Some(self.take_tree_snapshot(i));
            }
        }
        if self.termination_round.is_none() && self.all_terminated() {
            self.termination_round = Some(t);
        }

        self.t += 1;
        Ok(events)
    }

    fn fault(&self, t: u64, f: ProtocolFault) -> SimError {
        SimError::Fault { t, agent: f.agent, message: f.message }
    }

    fn take_tree_snapshot(&self, elected: usize) -> TreeSnapshot {
        let n = self.graph.node_count();
        let mut entries = vec![None; n];
        for (i, h) in self.home.iter().enumerate() {
            if let Some(v) = h {
                if self.agents[i].settled {
                    let a = &self.agents[i];
                    entries[*v] = Some((a.prm_parent, a.prm_leader, a.dist));
                }
            }
        }
        TreeSnapshot { root: self.pos[elected], entries }
    }

    /// Runs until every agent terminates or the round budget is hit.
    pub fn run(&mut self, max_rounds: u64) -> Result<Metrics, SimError> {
        while !self.all_terminated() {
            if self.t > max_rounds {
                let mut m = self.metrics();
                m.timed_out = true;
                return Err(SimError::Timeout(max_rounds));
            }
            self.step_round()?;
        }
        Ok(self.metrics())
    }

    /// The occupied set: nodes hosting a finally-settled agent that stayed
    /// in place.
    pub fn occupied_set(&self) -> Vec<NodeId> {
        let mut s: Vec<NodeId> = (0..self.agents.len())
            .filter(|&i| self.agents[i].final_set && !self.agents[i].relocated)
            .map(|i| self.pos[i])
            .collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn metrics(&self) -> Metrics {
        let n = self.graph.node_count();
        let m = self.graph.edge_count();
        let total_rounds = self.t - 1;
        let log = (n.max(2) as f64).log2().ceil() as u64;
        let budget = 24 * ((n as u64 * log * log).max(m as u64));
        let occupied = self.occupied_set();
        Metrics {
            n,
            m,
            p: self.p_initial,
            seed: self.seed,
            total_rounds,
            dispersion_round: self.dispersion_round,
            merge_round: self.merge_round,
            termination_round: self.termination_round,
            mis_size: occupied.len(),
            elected_agent: self.elected.map(|i| self.agents[i].id),
            elected_prm_leader: self.elected.map(|i| self.agents[i].prm_leader),
            max_group_label: self.max_group_label,
            rho: total_rounds as f64 / budget as f64,
            max_agent_bits: crate::verify::total_bits_per_agent(self).1,
            trace_hash: {
                let h = self.hasher.clone().finalize();
                let mut s = String::with_capacity(64);
                for b in h {
                    let _ = write!(s, "{b:02x}");
                }
                s
            },
            timed_out: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate, GraphFamily, GraphFamilySpec};

    fn p2() -> PortLabeledGraph {
        generate(&GraphFamilySpec { family: GraphFamily::Path, n: 2, m: None, seed: 0 }).unwrap()
    }

    #[test]
    fn round_decomposition() {
        assert_eq!(decompose_round(1), (1, 1));
        assert_eq!(decompose_round(24), (1, 24));
        assert_eq!(decompose_round(25), (2, 1));
        assert_eq!(decompose_round(40), (2, 16));
    }

    #[test]
    fn init_sets_declared_starting_values() {
        let g = p2();
        let sim =
            SimState::init(g, &Placement::rooted(vec![1, 2]), 0, false).unwrap();
        for a in sim.agents() {
            assert!(!a.settled);
            assert_eq!(a.leader, a.id);
            assert_eq!(a.lvl, 1);
            assert_eq!(a.prm_leader, -1);
            assert_eq!(a.prnt_prt, -1);
            assert!(!a.vprnt);
            assert_eq!(a.v_prnt_port, -1);
        }
        assert_eq!(sim.round(), 1);
    }

    #[test]
    fn placement_must_cover_n_agents() {
        let g = p2();
        assert!(SimState::init(g, &Placement::rooted(vec![1]), 0, false).is_err());
    }

    #[test]
    fn groups_become_singletons_when_scattered() {
        let g = p2();
        let pl = Placement::scattered(vec![3, 7]);
        assert_eq!(pl.occupied_nodes(), 2);
        assert_eq!(pl.max_group_label(), 7);
        let sim = SimState::init(g, &pl, 0, false).unwrap();
        assert_eq!(sim.positions(), &[0, 1]);
    }

    #[test]
    fn agent_ids_distinct_and_in_range() {
        for n in [2usize, 5, 16] {
            let ids = draw_agent_ids(n, 2, 9);
            let mut sorted = ids.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), n);
            assert!(ids.iter().all(|&x| x >= 1 && x <= (n * n) as u64));
        }
    }
}
