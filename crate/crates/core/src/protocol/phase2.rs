//! Sub-rounds 16-19: tree merging by the leading agents.
//!
//! Each leading agent walks the graph over settled nodes, comparing
//! permanent labels (`prm_leader`). Weaker territory is absorbed into its
//! tree; meeting a larger label stops the walk. Exactly one leading agent
//! (the one carrying the largest label) completes a full traversal; it
//! then re-walks the tree to seat the stopped leading agents it picked up
//! onto the nodes still covered only virtually, and finally enters
//! phase 3.

use super::{hopper_outs, hopper_returns, DriverPhase, ProxyState, Ret19, RoundCtx, Trav};
use crate::graph::{NodeId, Port};

/// Deterministic symmetry breaker for simultaneous walks: a leading agent
/// sits out round 16 whenever the label bit indexed by the iteration is
/// set. Two distinct labels differ in some bit, so mutually-invisible
/// walkers separate within 64 iterations.
fn stagger_skip(label: i64, iteration: u64) -> bool {
    let bit = ((iteration - 1) % 64) as u32;
    (label as u64 >> bit) & 1 == 1
}

fn is_active_driver(a: &super::AgentState) -> bool {
    a.sticky && a.settled && !a.terminated && a.driver == DriverPhase::Active
}

pub(crate) fn round_16(ctx: &mut RoundCtx<'_>) {
    hopper_outs(ctx);
    // A settler that inherited a stand-in record applies it before any
    // checks can reach it.
    for idx in 0..ctx.agents.len() {
        if ctx.snap()[idx].pending_adoption.is_some() {
            if let Some(px) = ctx.agents[idx].pending_adoption.take() {
                let a = &mut ctx.agents[idx];
                a.prm_leader = px.prm_leader;
                a.met_prm = px.met_prm;
                a.prm_parent = px.prm_parent;
                a.dist = px.dist;
            }
        }
    }
    for idx in 0..ctx.agents.len() {
        let a = &ctx.snap()[idx];
        if !is_active_driver(a) || ctx.is_carried(idx) || a.finish_wait > 0 {
            continue;
        }
        if stagger_skip(a.prm_leader, ctx.iteration) {
            continue;
        }
        let v = ctx.pos_of(idx);
        let deg = ctx.deg(v);
        if a.nxt_prt < 0 {
            // First departure: the walk starts at port 0 of the root.
            if deg == 0 {
                finish_driver(ctx, idx);
                continue;
            }
            ctx.agents[idx].nxt_prt = 0;
            ctx.agents[idx].trav = Trav::Explore;
            ctx.agents[idx].depth = 0;
        }
        let nxt = ctx.agents[idx].nxt_prt;
        if nxt < 0 || nxt as usize >= deg {
            ctx.fault(Some(idx), "merge walk port out of range");
            continue;
        }
        match ctx.agents[idx].trav {
            Trav::Explore => ctx.agents[idx].depth += 1,
            Trav::Backtrack => {
                if ctx.agents[idx].depth == 0 {
                    ctx.fault(Some(idx), "backtrack below the walk root");
                    continue;
                }
                ctx.agents[idx].depth -= 1;
            }
        }
        ctx.agents[idx].drv_moved = true;
        ctx.mv(idx, nxt as Port);
    }
}

pub(crate) fn round_17(ctx: &mut RoundCtx<'_>) {
    hopper_returns(ctx);
    finish_handshake(ctx);
    arrivals(ctx, true);
}

pub(crate) fn round_18(ctx: &mut RoundCtx<'_>) {
    finish_handshake(ctx);
    arrivals(ctx, false);
}

pub(crate) fn round_19(ctx: &mut RoundCtx<'_>) {
    for idx in 0..ctx.agents.len() {
        if ctx.is_carried(idx) {
            ctx.agents[idx].ret19 = Ret19::None;
            ctx.agents[idx].drv_moved = false;
            continue;
        }
        let back = ctx.snap()[idx].prt_ent;
        match ctx.snap()[idx].ret19 {
            Ret19::None => {}
            Ret19::Bounce => {
                // Saw no settler in either check round: wait for
                // dispersion, retrying the same port next round 16.
                if back >= 0 {
                    ctx.mv(idx, back as Port);
                }
                let a = &mut ctx.agents[idx];
                a.depth = a.depth.saturating_sub(1);
                a.ret19 = Ret19::None;
            }
            Ret19::Retreat => {
                if back >= 0 {
                    ctx.mv(idx, back as Port);
                }
                let a = &mut ctx.agents[idx];
                a.depth = a.depth.saturating_sub(1);
                a.ret19 = Ret19::None;
            }
            Ret19::GoHome => {
                if back >= 0 {
                    ctx.mv(idx, back as Port);
                }
                let a = &mut ctx.agents[idx];
                a.depth = 0;
                a.flag_1 = false;
                a.ret19 = Ret19::None;
            }
        }
        ctx.agents[idx].drv_moved = false;
    }
}

/// A finished walker waits at its root one extra iteration so its own
/// hopping stand-in (which visits every round 17) can be released before
/// phase 3 starts.
fn finish_handshake(ctx: &mut RoundCtx<'_>) {
    for idx in 0..ctx.agents.len() {
        let a = &ctx.snap()[idx];
        if a.driver != DriverPhase::Active || a.finish_wait == 0 || a.terminated {
            continue;
        }
        let v = ctx.pos_of(idx);
        let pres = ctx.presence(v);
        let own = pres
            .visiting_vprnt
            .iter()
            .copied()
            .find(|&h| ctx.snap()[h].id as i64 == ctx.snap()[idx].hopper_id);
        if let Some(h) = own {
            ctx.agents[h].vprnt = false;
            ctx.agents[h].proxy = None;
            finish_driver(ctx, idx);
        } else if ctx.sub_round == 18 {
            // No stand-in showed up; it was already released.
            finish_driver(ctx, idx);
        }
    }
}

fn finish_driver(ctx: &mut RoundCtx<'_>, idx: usize) {
    let a = &mut ctx.agents[idx];
    a.driver = DriverPhase::Finished;
    a.finish_wait = 0;
    a.ph = 3;
    a.trav = Trav::Explore;
    a.hopper_id = -1;
}

enum Outcome {
    Advanced,
    Stopped,
    Bounced,
    Waiting,
}

fn arrivals(ctx: &mut RoundCtx<'_>, first: bool) {
    for v in 0..ctx.node_count() {
        let members: Vec<usize> = ctx.members(v).to_vec();
        // Pick up parked leading agents: any active walker present
        // collects them.
        let stopped: Vec<usize> = members
            .iter()
            .copied()
            .filter(|&i| {
                let a = &ctx.snap()[i];
                a.driver == DriverPhase::StoppedAfield
                    && a.ret19 == Ret19::None
                    && !ctx.is_carried(i)
            })
            .collect();
        if !stopped.is_empty() {
            let carrier = members
                .iter()
                .copied()
                .find(|&i| is_active_driver(&ctx.snap()[i]) && ctx.snap()[i].finish_wait == 0);
            if let Some(c) = carrier {
                for s in stopped {
                    ctx.carried_by[s] = Some(c);
                    ctx.agents[s].driver = DriverPhase::Carried;
                    ctx.agents[s].ret19 = Ret19::None;
                }
            }
        }
        // Arrivals to process this round.
        let mut arrived: Vec<usize> = members
            .iter()
            .copied()
            .filter(|&i| {
                let a = &ctx.snap()[i];
                is_active_driver(a) && a.drv_moved && (first || a.pend18)
            })
            .collect();
        if arrived.is_empty() {
            continue;
        }
        // Head-on meetings resolve by label: everyone but the strongest
        // arrival stops.
        arrived.sort_by_key(|&i| std::cmp::Reverse(ctx.snap()[i].prm_leader));
        for &d in arrived.iter().skip(1) {
            stop_driver(ctx, d);
        }
        let d = arrived[0];
        if ctx.agents[d].driver != DriverPhase::Active {
            continue;
        }
        process_arrival(ctx, v, d);
    }
}

fn stop_driver(ctx: &mut RoundCtx<'_>, d: usize) {
    let home_here = ctx.home[d] == Some(ctx.pos_of(d));
    let progressed = ctx.agents[d].progressed;
    let a = &mut ctx.agents[d];
    if home_here {
        // Caught at its own settled node: stay put as an ordinary settler.
        a.driver = DriverPhase::StoppedHome;
        a.ret19 = Ret19::None;
        a.flag_1 = false;
    } else if progressed {
        a.driver = DriverPhase::StoppedAfield;
        a.ret19 = Ret19::Retreat;
    } else {
        // Nothing merged yet: the root has no protector, so go back and
        // keep covering it as an ordinary settler.
        a.driver = DriverPhase::StoppedHome;
        a.ret19 = Ret19::GoHome;
    }
}

fn process_arrival(ctx: &mut RoundCtx<'_>, v: NodeId, d: usize) {
    if ctx.at_walk_root(d) {
        root_arrival(ctx, v, d);
        return;
    }
    let pres = ctx.presence(v);
    if let Some(x) = pres.extra_home_settler {
        ctx.fault(Some(x), "two settlers claim the same node");
    }
    // Check target: the node's own settler, else a visiting stand-in.
    if let Some(s) = pres.home_settler {
        let outcome = do_check(ctx, v, d, CheckTarget::Real(s));
        finish_processing(ctx, d, outcome);
        return;
    }
    // A live home claim by anyone not out walking means the real settler
    // is only momentarily away (its own hop, say); it outranks any stale
    // stand-in record still in flight.
    let returning_claimant = (0..ctx.agents.len()).any(|j| {
        ctx.home[j] == Some(v)
            && ctx.agents[j].driver != DriverPhase::Active
            && !ctx.agents[j].terminated
    });
    if returning_claimant {
        finish_processing(ctx, d, Outcome::Waiting);
        return;
    }
    let proxied = pres
        .visiting_vprnt
        .iter()
        .copied()
        .find(|&h| ctx.snap()[h].proxy.is_some());
    if let Some(h) = proxied {
        if ctx.snap()[h].id as i64 == ctx.snap()[d].hopper_id {
            ctx.fault(Some(d), "walker met its own stand-in away from its root");
        }
        let outcome = do_check(ctx, v, d, CheckTarget::Proxy(h));
        if !matches!(outcome, Outcome::Stopped) {
            if has_cargo(ctx, d) {
                drop_cargo_from_proxy(ctx, v, d, h);
            } else {
                ctx.agents[d].pass_dirty = true;
            }
        }
        finish_processing(ctx, d, outcome);
        return;
    }
    // No settler visible this round. Round 17 only defers to round 18 (a
    // home settler out on its hop shows up again by then); conclusions
    // about emptiness are drawn at round 18.
    if ctx.sub_round == 17 {
        finish_processing(ctx, d, Outcome::Waiting);
        return;
    }
    // A live home claim means the settler is merely out (a walker
    // mid-bounce); anything else is ours to fill.
    let claimed = (0..ctx.agents.len()).any(|j| ctx.home[j] == Some(v));
    if let Some(&h) = pres.visiting_vprnt.first() {
        // Virtually covered, but with no stand-in record: the node was
        // never checked, so a dropped body starts it fresh.
        if has_cargo(ctx, d) {
            let prm = ctx.snap()[d].prm_leader;
            let parent = ctx.snap()[d].prt_ent;
            let dist = (ctx.agents[d].depth & 1) as u8;
            drop_cargo(ctx, v, d, prm, prm, parent, dist);
            ctx.agents[h].vprnt = false;
            ctx.agents[h].proxy = None;
            after_success(ctx, v, d, None);
            advance(ctx, v, d);
            finish_processing(ctx, d, Outcome::Advanced);
        } else {
            ctx.agents[d].pass_dirty = true;
            finish_processing(ctx, d, Outcome::Waiting);
        }
        return;
    }
    // Nothing settled here at all.
    if !claimed && has_cargo(ctx, d) {
        let prm = ctx.snap()[d].prm_leader;
        let parent = ctx.snap()[d].prt_ent;
        let dist = (ctx.agents[d].depth & 1) as u8;
        drop_cargo(ctx, v, d, prm, prm, parent, dist);
        after_success(ctx, v, d, None);
        advance(ctx, v, d);
        finish_processing(ctx, d, Outcome::Advanced);
    } else if !claimed && ctx.home[d].is_none() {
        // A homeless walker adopts the bare node as its own settled spot;
        // its decision will run here when the conversion walk arrives.
        // Its tree parent's port down here is known right now and nothing
        // else can report it later, so remember it.
        let prm = ctx.snap()[d].prm_leader;
        let entry = ctx.snap()[d].prt_ent;
        let parent_port = ctx.snap()[d].nxt_prt;
        ctx.home[d] = Some(v);
        let a = &mut ctx.agents[d];
        a.met_prm = prm;
        a.prm_parent = entry;
        a.dist = (a.depth & 1) as u8;
        a.home_parent_port = parent_port;
        a.pending_p1_detach = true;
        advance(ctx, v, d);
        finish_processing(ctx, d, Outcome::Advanced);
    } else {
        ctx.agents[d].pass_dirty = true;
        finish_processing(ctx, d, Outcome::Waiting);
    }
}

/// Bookkeeping after a successful first-contact check: on the walker's
/// first progress, recruit a stand-in for the root if possible, else
/// release the root claim so dispersion can fill it.
fn after_success(ctx: &mut RoundCtx<'_>, v: NodeId, d: usize, settler: Option<usize>) {
    let first = !ctx.agents[d].progressed;
    ctx.agents[d].progressed = true;
    if !first {
        return;
    }
    if let Some(s) = settler {
        try_recruit(ctx, v, d, s);
    }
    if ctx.agents[d].hopper_id < 0 {
        ctx.home[d] = None;
    }
}

fn finish_processing(ctx: &mut RoundCtx<'_>, d: usize, outcome: Outcome) {
    match outcome {
        Outcome::Waiting => {
            if ctx.sub_round == 17 {
                ctx.agents[d].pend18 = true;
            } else {
                ctx.agents[d].ret19 = Ret19::Bounce;
                ctx.agents[d].pend18 = false;
            }
        }
        _ => {
            ctx.agents[d].pend18 = false;
            ctx.agents[d].drv_moved = false;
        }
    }
    let _ = ctx;
}

fn has_cargo(ctx: &RoundCtx<'_>, d: usize) -> bool {
    ctx.carried_by.iter().any(|c| *c == Some(d))
}

fn min_cargo(ctx: &RoundCtx<'_>, d: usize) -> Option<usize> {
    (0..ctx.agents.len()).find(|&i| ctx.carried_by[i] == Some(d))
}

enum CheckTarget {
    Real(usize),
    Proxy(usize),
}

/// The label comparison of the merge walk (function Check), applied to a
/// settler or to a stand-in record.
fn do_check(ctx: &mut RoundCtx<'_>, v: NodeId, d: usize, target: CheckTarget) -> Outcome {
    let (t_prm, t_met, t_prm_parent) = match &target {
        CheckTarget::Real(s) => {
            let t = ctx.obs(v, *s);
            (t.prm_leader, t.met_prm, t.prm_parent)
        }
        CheckTarget::Proxy(h) => {
            let px = ctx.obs(v, *h).proxy.as_ref().expect("proxy");
            (px.prm_leader, px.met_prm, px.prm_parent)
        }
    };
    let d_prm = ctx.snap()[d].prm_leader;
    let entry = ctx.snap()[d].prt_ent;
    let parity = (ctx.agents[d].depth & 1) as u8;
    match ctx.snap()[d].trav {
        Trav::Explore => {
            if t_prm < d_prm || (t_prm == d_prm && t_met != d_prm) {
                // First visit: the settler joins this walk's tree.
                write_target(ctx, &target, d_prm, d_prm, entry, parity);
                let mut real_settler = None;
                if let CheckTarget::Real(s) = target {
                    if ctx.agents[s].driver == DriverPhase::Active && s != d {
                        // An out-competed leading agent caught at home
                        // gives up its own walk.
                        ctx.agents[s].driver = DriverPhase::StoppedHome;
                        ctx.agents[s].flag_1 = false;
                    }
                    real_settler = Some(s);
                }
                after_success(ctx, v, d, real_settler);
                if has_cargo(ctx, d) {
                    if let CheckTarget::Proxy(h) = target {
                        drop_cargo_from_proxy(ctx, v, d, h);
                    }
                }
                advance(ctx, v, d);
                Outcome::Advanced
            } else if t_prm > d_prm {
                stop_driver(ctx, d);
                Outcome::Stopped
            } else if t_prm_parent == entry {
                // Own tree child edge: descend (re-walk passes only).
                if has_cargo(ctx, d) {
                    if let CheckTarget::Proxy(h) = target {
                        drop_cargo_from_proxy(ctx, v, d, h);
                    }
                }
                advance(ctx, v, d);
                Outcome::Advanced
            } else {
                // Already in the tree, reached over a non-tree edge.
                ctx.agents[d].trav = Trav::Backtrack;
                ctx.agents[d].nxt_prt = entry;
                Outcome::Bounced
            }
        }
        Trav::Backtrack => {
            if t_met != d_prm {
                ctx.fault(Some(d), "backtracked into a node outside the walk's tree");
            }
            if has_cargo(ctx, d) {
                if let CheckTarget::Proxy(h) = &target {
                    drop_cargo_from_proxy(ctx, v, d, *h);
                }
            }
            let deg = ctx.deg(v) as i32;
            let cursor = (entry + 1).rem_euclid(deg);
            if cursor != t_prm_parent {
                ctx.agents[d].nxt_prt = cursor;
                ctx.agents[d].trav = Trav::Explore;
            } else {
                ctx.agents[d].nxt_prt = t_prm_parent;
            }
            Outcome::Advanced
        }
    }
}

fn write_target(
    ctx: &mut RoundCtx<'_>,
    target: &CheckTarget,
    prm: i64,
    met: i64,
    prm_parent: i32,
    dist: u8,
) {
    match target {
        CheckTarget::Real(s) => {
            let t = &mut ctx.agents[*s];
            t.prm_leader = prm;
            t.met_prm = met;
            t.prm_parent = prm_parent;
            t.dist = dist;
        }
        CheckTarget::Proxy(h) => {
            let px = ctx.agents[*h].proxy.as_mut().expect("proxy");
            px.prm_leader = prm;
            px.met_prm = met;
            px.prm_parent = prm_parent;
            px.dist = dist;
        }
    }
}

/// After its first successful check the walker recruits the settler of
/// its first tree edge as the hopping stand-in for its root. A first
/// child already hopping toward that root is adopted and upgraded with
/// the stand-in record.
fn try_recruit(ctx: &mut RoundCtx<'_>, _v: NodeId, d: usize, s: usize) {
    if ctx.agents[d].hopper_id >= 0
        || ctx.agents[d].depth != 1
        || ctx.home[d].is_none()
        || ctx.agents[s].driver == DriverPhase::Active
        || ctx.agents[s].terminated
    {
        return;
    }
    let entry = ctx.snap()[d].prt_ent;
    if entry < 0 {
        return;
    }
    if ctx.agents[s].vprnt {
        if ctx.agents[s].v_prnt_port != entry {
            return; // hops for some other node; leave it alone
        }
        // already protecting this walker's root
    }
    let root = &ctx.snap()[d];
    let px = ProxyState {
        leader: root.leader,
        lvl: root.lvl,
        parent: root.prnt_prt,
        next: root.next,
        checked: root.checked,
        done: root.done,
        prm_leader: root.prm_leader,
        met_prm: root.met_prm,
        prm_parent: -1,
        dist: 0,
    };
    let hid = ctx.snap()[s].id as i64;
    let t = &mut ctx.agents[s];
    t.vprnt = true;
    t.v_prnt_port = entry;
    t.proxy = Some(Box::new(px));
    ctx.agents[d].hopper_id = hid;
}

fn advance(ctx: &mut RoundCtx<'_>, v: NodeId, d: usize) {
    let deg = ctx.deg(v) as i32;
    let entry = ctx.snap()[d].prt_ent;
    let nxt = (entry + 1).rem_euclid(deg);
    if nxt == entry {
        ctx.agents[d].trav = Trav::Backtrack;
    }
    ctx.agents[d].nxt_prt = nxt;
}

fn drop_cargo_from_proxy(ctx: &mut RoundCtx<'_>, v: NodeId, d: usize, h: usize) {
    let (prm, met, prm_parent, dist) = {
        let px = ctx.agents[h].proxy.as_ref().expect("proxy");
        (px.prm_leader, px.met_prm, px.prm_parent, px.dist)
    };
    drop_cargo(ctx, v, d, prm, met, prm_parent, dist);
    ctx.agents[h].vprnt = false;
    ctx.agents[h].proxy = None;
}

/// Seats the smallest-id carried leading agent at `v` as its settler.
fn drop_cargo(
    ctx: &mut RoundCtx<'_>,
    v: NodeId,
    d: usize,
    prm: i64,
    met: i64,
    prm_parent: i32,
    dist: u8,
) {
    let Some(c) = min_cargo(ctx, d) else { return };
    ctx.carried_by[c] = None;
    for j in 0..ctx.agents.len() {
        if j != c && ctx.home[j] == Some(v) {
            ctx.home[j] = None;
        }
    }
    ctx.home[c] = Some(v);
    let b = &mut ctx.agents[c];
    b.driver = DriverPhase::StoppedHome;
    b.prm_leader = prm;
    b.met_prm = met;
    b.prm_parent = prm_parent;
    b.dist = dist;
    b.vprnt = false;
    b.crnt_port = None;
    b.last_child = -1;
    b.pending_p1_detach = true;
}

fn root_arrival(ctx: &mut RoundCtx<'_>, v: NodeId, d: usize) {
    let d_prm = ctx.snap()[d].prm_leader;
    let pres = ctx.presence(v);
    // A homeless walker folds whatever settled at its root into the tree
    // as the tree root.
    if let Some(z) = pres.home_settler {
        if z != d && ctx.obs(v, z).met_prm != d_prm {
            let t = &mut ctx.agents[z];
            t.prm_leader = d_prm;
            t.met_prm = d_prm;
            t.prm_parent = -1;
            t.dist = 0;
            if t.driver == DriverPhase::Active {
                t.driver = DriverPhase::StoppedHome;
            }
        }
    }
    let deg = ctx.deg(v) as i32;
    let entry = ctx.snap()[d].prt_ent;
    if ctx.snap()[d].trav == Trav::Explore {
        // Re-entered the root over a non-tree edge: already visited, so
        // bounce straight back.
        ctx.agents[d].trav = Trav::Backtrack;
        ctx.agents[d].nxt_prt = entry;
        ctx.agents[d].pend18 = false;
        ctx.agents[d].drv_moved = false;
        return;
    }
    ctx.agents[d].depth = 0;
    let cursor = (entry + 1).rem_euclid(deg);
    if cursor != 0 {
        ctx.agents[d].nxt_prt = cursor;
        ctx.agents[d].trav = Trav::Explore;
        ctx.agents[d].pend18 = false;
        ctx.agents[d].drv_moved = false;
        return;
    }
    // Full traversal complete.
    if pres.home_settler.is_none() && has_cargo(ctx, d) {
        drop_cargo(ctx, v, d, d_prm, d_prm, -1, 0);
    }
    let dirty = ctx.agents[d].pass_dirty || has_cargo(ctx, d);
    if dirty {
        let a = &mut ctx.agents[d];
        a.pass_dirty = false;
        a.nxt_prt = 0;
        a.trav = Trav::Explore;
        a.depth = 0;
        a.pend18 = false;
        a.drv_moved = false;
        return;
    }
    // Clean pass: every node is settled and in the tree. Reclaim the
    // root if it is bare, or defer to whoever settled it.
    let pres2 = ctx.presence(v);
    if ctx.home[d].is_none() {
        match pres2.home_settler {
            None => ctx.home[d] = Some(v),
            Some(z) if z != d => ctx.agents[d].follow_host = true,
            _ => {}
        }
    }
    ctx.agents[d].pend18 = false;
    ctx.agents[d].drv_moved = false;
    // Release the hopping stand-in before phase 3; it visits every round
    // 17, so one extra iteration suffices.
    let own = pres2
        .visiting_vprnt
        .iter()
        .copied()
        .find(|&h| ctx.snap()[h].id as i64 == ctx.snap()[d].hopper_id);
    if let Some(h) = own {
        ctx.agents[h].vprnt = false;
        ctx.agents[h].proxy = None;
        finish_driver(ctx, d);
    } else if ctx.agents[d].hopper_id < 0 {
        finish_driver(ctx, d);
    } else {
        ctx.agents[d].finish_wait = 2;
    }
}
