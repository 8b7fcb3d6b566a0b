//! The per-agent algorithm: one operation per sub-round block of the
//! 24-round iteration frame.
//!
//! Sub-rounds 1-15 run dispersion (leaders settle zombies, probing finds
//! unvisited neighbors, zombies chase), 16-19 run the merge traversal of
//! the leading agents, and 20-24 run the parity child-discovery plus the
//! conversion of the dispersed configuration into the final one.
//!
//! All handlers observe the start-of-round snapshot and mutate working
//! state; the engine applies queued moves after the handler returns, so
//! every computation within a round sees the same consistent world.

mod phase1;
mod phase2;
mod phase3;
mod state;

pub use state::{weaker_than, AgentState, DriverPhase, ProxyState, Ret19, Trav};

use crate::graph::{NodeId, Port, PortLabeledGraph};

/// Assertion failure raised by a protocol operation.
#[derive(Debug, Clone)]
pub struct ProtocolFault {
    pub agent: Option<u64>,
    pub message: String,
}

/// Counters for the locality instrumentation hook: every observation of
/// another agent's state is logged with the node it happened at and
/// checked against the owner's position.
#[derive(Debug, Default, Clone)]
pub struct ReadStats {
    pub reads: u64,
    pub non_local: u64,
}

/// One round's working context. Handlers read through [`RoundCtx::obs`]
/// (snapshot, locality-checked) and write through [`RoundCtx::agents`].
pub struct RoundCtx<'a> {
    pub graph: &'a PortLabeledGraph,
    pub iteration: u64,
    pub sub_round: u8,
    snap: &'a [AgentState],
    snap_pos: &'a [NodeId],
    snap_home: &'a [Option<NodeId>],
    snap_carried: &'a [Option<usize>],
    members: &'a [Vec<usize>],
    pub agents: &'a mut [AgentState],
    pub home: &'a mut Vec<Option<NodeId>>,
    pub carried_by: &'a mut Vec<Option<usize>>,
    /// Where each leading agent's merge walk is rooted (its original
    /// settled node; survives a later change of home).
    pub walk_root: &'a mut Vec<Option<NodeId>>,
    pub moves: Vec<(usize, Port)>,
    pub faults: Vec<ProtocolFault>,
    pub reads: &'a mut ReadStats,
}

impl<'a> RoundCtx<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        graph: &'a PortLabeledGraph,
        iteration: u64,
        sub_round: u8,
        snap: &'a [AgentState],
        snap_pos: &'a [NodeId],
        snap_home: &'a [Option<NodeId>],
        snap_carried: &'a [Option<usize>],
        members: &'a [Vec<usize>],
        agents: &'a mut [AgentState],
        home: &'a mut Vec<Option<NodeId>>,
        carried_by: &'a mut Vec<Option<usize>>,
        walk_root: &'a mut Vec<Option<NodeId>>,
        reads: &'a mut ReadStats,
    ) -> Self {
        RoundCtx {
            graph,
            iteration,
            sub_round,
            snap,
            snap_pos,
            snap_home,
            snap_carried,
            members,
            agents,
            home,
            carried_by,
            walk_root,
            moves: Vec::new(),
            faults: Vec::new(),
            reads,
        }
    }

    /// True when the agent stands at the node its merge walk started from.
    pub fn at_walk_root(&self, idx: usize) -> bool {
        self.walk_root[idx] == Some(self.snap_pos[idx])
    }

    pub fn snap_pos_is(&self, idx: usize, v: NodeId) -> bool {
        self.snap_pos[idx] == v
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn deg(&self, v: NodeId) -> usize {
        self.graph.degree(v)
    }

    /// Start-of-round snapshot (for an agent's own state; observations of
    /// co-located agents go through [`RoundCtx::obs`]).
    pub fn snap(&self) -> &'a [AgentState] {
        self.snap
    }

    pub fn snap_id(&self, idx: usize) -> i64 {
        self.snap[idx].id as i64
    }

    /// Agents located at `v` at the start of the round, sorted by id.
    pub fn members(&self, v: NodeId) -> Vec<usize> {
        self.members[v].clone()
    }

    /// Snapshot observation of a co-located agent. The instrumentation
    /// hook records the read and flags any non-local access.
    pub fn obs(&mut self, at: NodeId, idx: usize) -> &'a AgentState {
        self.reads.reads += 1;
        if self.snap_pos[idx] != at {
            self.reads.non_local += 1;
        }
        &self.snap[idx]
    }

    /// Snapshot position == snapshot home.
    pub fn at_home(&self, idx: usize) -> bool {
        self.snap_home[idx] == Some(self.snap_pos[idx])
    }

    pub fn pos_of(&self, idx: usize) -> NodeId {
        self.snap_pos[idx]
    }

    pub fn is_carried(&self, idx: usize) -> bool {
        self.snap_carried[idx].is_some()
    }

    pub fn mv(&mut self, idx: usize, port: Port) {
        self.moves.push((idx, port));
    }

    pub fn fault(&mut self, agent: Option<usize>, message: impl Into<String>) {
        self.faults.push(ProtocolFault {
            agent: agent.map(|i| self.snap[i].id),
            message: message.into(),
        });
    }

    /// Classifies everyone present at `v` at the start of the round.
    pub fn presence(&mut self, v: NodeId) -> Presence {
        let mut p = Presence::default();
        let members = self.members[v].clone();
        for i in members {
            let at_home = self.at_home(i);
            let a = self.obs(v, i);
            if a.terminated {
                p.finals_present |= a.final_set;
                continue;
            }
            p.finals_present |= a.final_set;
            if a.settled {
                p.any_settled = true;
                if at_home {
                    if p.home_settler.is_some() {
                        p.extra_home_settler = Some(i);
                    } else {
                        p.home_settler = Some(i);
                    }
                } else if a.vprnt {
                    p.visiting_vprnt.push(i);
                } else {
                    p.other_bodies.push(i);
                }
            } else if a.is_leader() {
                p.leaders.push(i);
            } else {
                p.zombies.push(i);
            }
        }
        p
    }

    /// Group identifier a settled body presents at `v`: its own when at
    /// home, its stand-in record when visiting the node it protects.
    pub fn presented_gid(&mut self, v: NodeId, idx: usize) -> (u32, u64) {
        let home = self.at_home(idx);
        let a = self.obs(v, idx);
        if !home {
            if let Some(px) = &a.proxy {
                return (px.lvl, px.leader);
            }
        }
        a.group_id()
    }
}

/// Who is present at a node, by role, at the start of a round.
#[derive(Debug, Default)]
pub struct Presence {
    pub home_settler: Option<usize>,
    /// A second settled agent claiming this node as home is a protocol
    /// fault; kept so handlers can report it.
    pub extra_home_settler: Option<usize>,
    /// Settled agents visiting the node they virtually cover.
    pub visiting_vprnt: Vec<usize>,
    /// Other settled bodies passing through (parked or carried agents,
    /// probe helpers, parity movers).
    pub other_bodies: Vec<usize>,
    pub any_settled: bool,
    pub finals_present: bool,
    pub leaders: Vec<usize>,
    pub zombies: Vec<usize>,
}

/// Runs the handler for the current sub-round.
pub fn run_sub_round(ctx: &mut RoundCtx<'_>) {
    match ctx.sub_round {
        1 => phase1::round_1(ctx),
        2 => phase1::round_2(ctx),
        3 => phase1::round_3(ctx),
        4 => phase1::round_4(ctx),
        5 => phase1::round_5(ctx),
        6 => phase1::round_6(ctx),
        7 => phase1::round_7(ctx),
        8 => phase1::round_8(ctx),
        9 => phase1::round_9(ctx),
        10 => phase1::round_10(ctx),
        11 => phase1::round_11(ctx),
        12 => phase1::round_12(ctx),
        13 => phase1::round_13(ctx),
        14 => phase1::round_14(ctx),
        15 => phase1::round_15(ctx),
        16 => phase2::round_16(ctx),
        17 => phase2::round_17(ctx),
        18 => phase2::round_18(ctx),
        19 => phase2::round_19(ctx),
        20 => phase3::round_20(ctx),
        21 => phase3::round_21(ctx),
        22 => phase3::round_22(ctx),
        23 => phase3::round_23(ctx),
        24 => phase3::round_24(ctx),
        other => panic!("sub-round {other} out of range"),
    }
}

/// Moves every virtual settler that is away from home back through the
/// port it entered by. Shared by sub-rounds 1, 3, 12 and 17. A stand-in
/// that finds its protected node settled again (by anyone not out on a
/// walk) is done: it releases its duty on the spot.
pub(crate) fn hopper_returns(ctx: &mut RoundCtx<'_>) {
    for idx in 0..ctx.snap.len() {
        let a = &ctx.snap[idx];
        if a.settled && a.vprnt && !a.terminated && !ctx.at_home(idx) && !ctx.is_carried(idx) {
            let here = ctx.pos_of(idx);
            let resettled = ctx.members[here].iter().any(|&j| {
                j != idx
                    && ctx.snap[j].settled
                    && !ctx.snap[j].terminated
                    && ctx.snap_home[j] == Some(here)
                    && ctx.snap_pos[j] == here
                    && ctx.snap[j].driver != DriverPhase::Active
            });
            if resettled {
                ctx.agents[idx].vprnt = false;
                ctx.agents[idx].proxy = None;
            }
            let back = a.prt_ent;
            if back >= 0 {
                ctx.mv(idx, back as Port);
            } else {
                ctx.fault(Some(idx), "virtual settler away with no entry port");
            }
        }
    }
}

/// Moves every home virtual settler out through its protected port.
/// Shared by sub-rounds 2, 11, 16 and 24.
pub(crate) fn hopper_outs(ctx: &mut RoundCtx<'_>) {
    for idx in 0..ctx.snap.len() {
        let a = &ctx.snap[idx];
        if a.settled && a.vprnt && !a.terminated && ctx.at_home(idx) && !ctx.is_carried(idx) {
            let out = a.v_prnt_port;
            if out >= 0 && (out as usize) < ctx.deg(ctx.pos_of(idx)) {
                ctx.mv(idx, out as Port);
            } else {
                ctx.fault(Some(idx), "virtual settler with invalid v_prnt_port");
            }
        }
    }
}
