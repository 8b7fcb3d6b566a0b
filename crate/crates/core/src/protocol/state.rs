//! Per-agent state: every variable the protocol maintains, across all
//! three phases, plus role bookkeeping for the leading agents that drive
//! tree merging.

use crate::graph::Port;

/// Traversal mode shared by the phase-2 merge walk and the phase-3 tree
/// walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trav {
    Explore,
    Backtrack,
}

/// Lifecycle of a leading agent (an agent that settled with `sticky = 1`
/// and owns a merge traversal).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriverPhase {
    /// Not a leading agent.
    None,
    /// Running its merge traversal (or bouncing on its first edge).
    Active,
    /// Out-competed while at its own settled node; an ordinary settler now.
    StoppedHome,
    /// Out-competed mid-traversal; parked away from home until a stronger
    /// leading agent picks it up.
    StoppedAfield,
    /// Picked up; travels with its carrier until dropped onto a node.
    Carried,
    /// Completed the merge; conducts phase 3.
    Finished,
}

/// Stand-in settler record a virtual settler carries for the vacated node
/// it protects. The node's own settler is out conducting phase 2; its
/// variables travel here so co-located agents can interact with the node
/// as if it were settled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProxyState {
    pub leader: u64,
    pub lvl: u32,
    pub parent: i32,
    pub next: Option<Port>,
    pub checked: i32,
    pub done: bool,
    pub prm_leader: i64,
    pub met_prm: i64,
    pub prm_parent: i32,
    pub dist: u8,
}

/// The full per-agent variable record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentState {
    pub id: u64,

    // ---- phase 1 (dispersion) ----
    pub settled: bool,
    pub leader: u64,
    pub lvl: u32,
    pub lvl_l: u32,
    pub lvl_s: u32,
    /// Probe result pointer on a settler: port of the first detected
    /// unoccupied (or foreign) neighbor.
    pub next: Option<Port>,
    /// Highest probed port index at this settler, -1 before any probing.
    pub checked: i32,
    /// Helper dispatch port; a settler with `help` set joins a probing
    /// group each round 5.
    pub help: Option<Port>,
    pub done: bool,
    pub found: bool,
    pub init_probe: bool,
    /// Parent port of a settler; on an unsettled leader, the port it
    /// entered its current node by on its last forward move.
    pub prnt_prt: i32,

    // ---- shared phases 1,2 ----
    pub vprnt: bool,
    pub v_prnt_port: i32,
    pub sticky: bool,
    pub flag: bool,
    pub flag_1: bool,
    pub prm_leader: i64,
    pub met_prm: i64,

    // ---- phase 2 ----
    pub nxt_prt: i32,
    pub prm_parent: i32,
    pub trav: Trav,
    /// Parity (0 even, 1 odd) of the settler's depth in the merged tree.
    pub dist: u8,
    pub ph: u8,
    pub prt_ent: i32,

    // ---- phase 3 ----
    pub crnt_port: Option<Port>,
    /// Largest child port already consumed by the conductor's tree walk.
    pub last_child: i32,
    pub decision: bool,
    pub final_set: bool,
    pub final_port: i32,
    pub count: u32,
    pub relocated: bool,
    pub terminated: bool,

    // ---- role bookkeeping (artifact-level, not Table-3 variables) ----
    pub driver: DriverPhase,
    /// Depth of the driver's current node in its own traversal; 0 at its
    /// root. Lets the agent recognize home without node identifiers.
    pub depth: u32,
    /// True once the driver completed at least one successful check.
    pub progressed: bool,
    pub hopper_id: i64,
    pub pass_dirty: bool,
    /// Post-completion handshake countdown for releasing the own virtual
    /// settler before declaring ph = 3.
    pub finish_wait: u8,
    /// Remaining conductor wait, counted in round-24 steps.
    pub wait_left: u32,
    pub after_wait_port: i32,
    /// Decision scan cursor: next port to scan; δ(v) when the scan is done.
    pub scan_port: i32,
    pub scan_out: bool,
    /// Port of the current scan trip (so the decision can record it).
    pub cur_scan_port: i32,
    /// Extra body at the tree root syncs its finale with the root settler.
    pub follow_host: bool,
    /// When a homeless walker adopts a bare node mid-walk: the port its
    /// tree parent reaches that node by (known at adoption time), so the
    /// conversion walk can find the node it cannot hear reports from.
    pub home_parent_port: i32,
    pub home_found: bool,
    pub tested_here: bool,
    pub testing_out: bool,
    /// The conversion walk is over; the conductor may settle for good.
    pub walk_done: bool,
    /// Took over a node out-of-band: at the next round 1 the body
    /// presents a fresh group identity so dispersal treats the node as
    /// unvisited and can absorb it into its search.
    pub pending_p1_detach: bool,

    // transient, within-iteration flags
    pub acted_meet: bool,
    pub acted_34: bool,
    pub seen_real: bool,
    pub seen_virtual: i64,
    pub seen_body: bool,
    pub probe_port: i32,
    /// Group identity of the probe this agent was dispatched on: the
    /// probing leader's (id, lvl) at dispatch time.
    pub probe_leader: i64,
    pub probe_lvl: u32,
    pub helper_entry: i32,
    /// Currently gathered at a probing node via its help pointer.
    pub helping: bool,
    /// The help pointer was set this iteration (a walker only follows a
    /// fresh summons; a stale one is dropped).
    pub help_fresh: bool,
    pub moved_forward: bool,
    pub parity_out: bool,
    pub ret19: Ret19,
    pub pend18: bool,
    pub drv_moved: bool,

    pub proxy: Option<Box<ProxyState>>,
    pub pending_adoption: Option<Box<ProxyState>>,

    /// Reserved; kept so the memory accounting mirrors the full variable
    /// set even though nothing writes it.
    pub recent: u8,
}

/// Queued driver action for round 19.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ret19 {
    None,
    /// Saw no settler in rounds 17 and 18: return and retry the same port.
    Bounce,
    /// Stopped mid-traversal: retreat one hop and wait there.
    Retreat,
    /// Stopped before any progress: return to the settled node and stay.
    GoHome,
}

impl AgentState {
    pub fn new(id: u64) -> Self {
        AgentState {
            id,
            settled: false,
            leader: id,
            lvl: 1,
            lvl_l: 0,
            lvl_s: 0,
            next: None,
            checked: -1,
            help: None,
            done: false,
            found: false,
            init_probe: true,
            prnt_prt: -1,
            vprnt: false,
            v_prnt_port: -1,
            sticky: false,
            flag: false,
            flag_1: false,
            prm_leader: -1,
            met_prm: -1,
            nxt_prt: -1,
            prm_parent: -1,
            trav: Trav::Explore,
            dist: 0,
            ph: 0,
            prt_ent: -1,
            crnt_port: None,
            last_child: -1,
            decision: false,
            final_set: false,
            final_port: -1,
            count: 0,
            relocated: false,
            terminated: false,
            driver: DriverPhase::None,
            depth: 0,
            progressed: false,
            hopper_id: -1,
            pass_dirty: false,
            finish_wait: 0,
            wait_left: 0,
            after_wait_port: -1,
            scan_port: -1,
            scan_out: false,
            cur_scan_port: -1,
            follow_host: false,
            home_parent_port: -1,
            home_found: false,
            tested_here: false,
            testing_out: false,
            walk_done: false,
            pending_p1_detach: false,
            acted_meet: false,
            acted_34: false,
            seen_real: false,
            seen_virtual: -1,
            seen_body: false,
            probe_port: -1,
            probe_leader: -1,
            probe_lvl: 0,
            helper_entry: -1,
            helping: false,
            help_fresh: false,
            moved_forward: false,
            parity_out: false,
            ret19: Ret19::None,
            pend18: false,
            drv_moved: false,
            proxy: None,
            pending_adoption: None,
            recent: 0,
        }
    }

    /// Unsettled agent whose `leader` field names itself.
    pub fn is_leader(&self) -> bool {
        !self.settled && self.leader == self.id
    }

    pub fn is_zombie(&self) -> bool {
        !self.settled && self.leader != self.id
    }

    /// Phase-1 group identifier.
    pub fn group_id(&self) -> (u32, u64) {
        (self.lvl, self.leader)
    }
}

/// The strict "weaker than" order on phase-1 group identifiers:
/// `a ≺ b` iff `a.lvl < b.lvl`, or levels tie and `a.leader < b.leader`.
pub fn weaker_than(a: (u32, u64), b: (u32, u64)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

#[cfg(test)]
mod tests {
    use super::weaker_than;

    #[test]
    fn weaker_than_prefers_level_then_leader() {
        assert!(weaker_than((1, 5), (2, 3)));
        assert!(!weaker_than((1, 3), (1, 3)));
        assert!(weaker_than((2, 7), (2, 9)));
        assert!(!weaker_than((2, 9), (2, 7)));
        assert!(!weaker_than((3, 1), (2, 9)));
    }
}
