//! Sub-rounds 20-24: conversion of the dispersed configuration.
//!
//! Rounds 20-23 let settlers at even/odd tree depth hop to their tree
//! parent and back, so the parent (when hosting the conductor) learns its
//! smallest unconsumed child port. Round 24 moves the conductor down
//! child ports and back up, and drives each settler's decision scan: a
//! settler with no children left scans its neighbors one round trip per
//! port, joins a finally-settled neighbor or stays put, and terminates
//! once every pending neighbor has reported.

use super::{hopper_outs, DriverPhase, RoundCtx, Trav};
use crate::graph::{NodeId, Port};

/// The conducting agent standing at `v` as its walk position (not merely
/// passing through on a scan, probe, or parity hop).
fn conductor_at(ctx: &mut RoundCtx<'_>, v: NodeId) -> Option<usize> {
    ctx.members(v)
        .iter()
        .copied()
        .find(|&i| {
            let a = &ctx.snap()[i];
            a.ph == 3
                && a.driver == DriverPhase::Finished
                && !a.terminated
                && !a.scan_out
                && !a.testing_out
                && !a.parity_out
        })
}

/// The settler whose record speaks for `v` in phase 3: the home settler,
/// or the conductor itself when it is back at its own (bare) root.
fn host_at(ctx: &mut RoundCtx<'_>, v: NodeId) -> Option<usize> {
    let pres = ctx.presence(v);
    if let Some(s) = pres.home_settler {
        return Some(s);
    }
    let members = ctx.members(v);
    members.into_iter().find(|&i| {
        let a = &ctx.snap()[i];
        a.ph == 3 && a.driver == DriverPhase::Finished && !a.terminated && ctx.at_walk_root(i)
    })
}

pub(crate) fn round_20(ctx: &mut RoundCtx<'_>) {
    parity_move(ctx, 0);
}

pub(crate) fn round_21(ctx: &mut RoundCtx<'_>) {
    parity_host_update(ctx, 1);
    parity_returns(ctx);
}

pub(crate) fn round_22(ctx: &mut RoundCtx<'_>) {
    parity_move(ctx, 1);
}

pub(crate) fn round_23(ctx: &mut RoundCtx<'_>) {
    parity_host_update(ctx, 0);
    parity_returns(ctx);
}

fn parity_move(ctx: &mut RoundCtx<'_>, par: u8) {
    for idx in 0..ctx.agents.len() {
        let a = &ctx.snap()[idx];
        if a.settled
            && !a.terminated
            && !a.relocated
            && a.prm_parent >= 0
            && a.dist == par
            && ctx.at_home(idx)
            && !ctx.is_carried(idx)
            && !a.scan_out
        {
            let p = a.prm_parent as usize;
            if p < ctx.deg(ctx.pos_of(idx)) {
                ctx.agents[idx].parity_out = true;
                ctx.mv(idx, p as Port);
            } else {
                ctx.fault(Some(idx), "prm_parent out of range");
            }
        }
    }
}

fn parity_returns(ctx: &mut RoundCtx<'_>) {
    for idx in 0..ctx.agents.len() {
        if ctx.snap()[idx].parity_out {
            let back = ctx.snap()[idx].prt_ent;
            if back >= 0 {
                ctx.mv(idx, back as Port);
            }
            ctx.agents[idx].parity_out = false;
        }
    }
}

/// A host of the given parity hosting the conductor records the smallest
/// not-yet-consumed child port among this round's visitors.
fn parity_host_update(ctx: &mut RoundCtx<'_>, host_par: u8) {
    for v in 0..ctx.node_count() {
        let Some(host) = host_at(ctx, v) else { continue };
        // The tree root counts as even depth.
        let host_dist = if ctx.snap()[host].prm_parent < 0 { 0 } else { ctx.snap()[host].dist };
        if host_dist != host_par {
            continue;
        }
        if conductor_at(ctx, v).is_none() {
            continue;
        }
        let last = ctx.snap()[host].last_child;
        let mut best: Option<Port> = None;
        for i in ctx.members(v) {
            let a = ctx.obs(v, i);
            if a.parity_out && a.prt_ent > last {
                let p = a.prt_ent as Port;
                best = Some(best.map_or(p, |b| b.min(p)));
            }
        }
        ctx.agents[host].crnt_port = best;
    }
}

pub(crate) fn round_24(ctx: &mut RoundCtx<'_>) {
    hopper_outs(ctx);
    conductor_step(ctx);
    trigger_decisions(ctx);
    scan_step(ctx);
    count_decrements(ctx);
    follow_host_finale(ctx);
    terminations(ctx);
}

/// True when the conductor, standing at `v` with no reported child left,
/// still has to probe for its own silent settled node.
fn would_test_own_edge(ctx: &mut RoundCtx<'_>, idx: usize, v: NodeId) -> bool {
    let a = &ctx.snap()[idx];
    !a.home_found
        && !a.tested_here
        && a.home_parent_port >= 0
        && (a.home_parent_port as usize) < ctx.deg(v)
        && ctx.home[idx].is_some()
        && ctx.home[idx] != Some(v)
}

fn conductor_step(ctx: &mut RoundCtx<'_>) {
    for idx in 0..ctx.agents.len() {
        let a = &ctx.snap()[idx];
        if a.ph != 3
            || a.driver != DriverPhase::Finished
            || a.terminated
            || a.follow_host
            || a.walk_done
        {
            continue;
        }
        if a.testing_out {
            // Returned from probing a port for the node it settled itself
            // at: either this is it (walk on), or back out.
            ctx.agents[idx].testing_out = false;
            if ctx.at_home(idx) {
                ctx.agents[idx].home_found = true;
                ctx.agents[idx].trav = Trav::Explore;
                // next round 24 continues the walk from here
            } else {
                let back = ctx.snap()[idx].prt_ent;
                if back >= 0 {
                    ctx.mv(idx, back as Port);
                }
            }
            continue;
        }
        if a.wait_left > 0 {
            ctx.agents[idx].wait_left -= 1;
            if ctx.agents[idx].wait_left == 0 {
                let port = ctx.agents[idx].after_wait_port;
                if port >= 0 {
                    ctx.agents[idx].trav = Trav::Backtrack;
                    ctx.agents[idx].after_wait_port = -1;
                    ctx.agents[idx].tested_here = false;
                    ctx.mv(idx, port as Port);
                } else {
                    // The root's decision has run: the walk is over.
                    ctx.agents[idx].walk_done = true;
                    if ctx.home[idx].is_none() {
                        ctx.agents[idx].follow_host = true;
                    }
                }
            }
            continue;
        }
        if ctx.agents[idx].decision && !ctx.agents[idx].final_set {
            continue; // mid own decision scan
        }
        let v = ctx.pos_of(idx);
        let Some(host) = host_at(ctx, v) else {
            ctx.fault(Some(idx), "conductor at a node with no settler");
            continue;
        };
        match ctx.snap()[host].crnt_port {
            Some(p) => {
                if (p as usize) >= ctx.deg(v) {
                    ctx.fault(Some(host), "crnt_port out of range");
                    continue;
                }
                ctx.agents[host].last_child = p as i32;
                ctx.agents[host].crnt_port = None;
                ctx.agents[idx].trav = Trav::Explore;
                ctx.agents[idx].tested_here = false;
                ctx.mv(idx, p);
            }
            None if would_test_own_edge(ctx, idx, v) => {
                let q = ctx.snap()[idx].home_parent_port as Port;
                ctx.agents[idx].testing_out = true;
                ctx.agents[idx].tested_here = true;
                ctx.mv(idx, q);
            }
            None => {
                // No unconsumed child: the host's decision runs here while
                // the conductor waits one scan's worth of steps.
                let wait = (2 * ctx.deg(v)).max(1) as u32;
                ctx.agents[idx].wait_left = wait;
                ctx.agents[idx].after_wait_port = ctx.snap()[host].prm_parent;
            }
        }
    }
}

/// A settler hosting the conductor with no child ports left starts its
/// decision.
fn trigger_decisions(ctx: &mut RoundCtx<'_>) {
    for v in 0..ctx.node_count() {
        let Some(c) = conductor_at(ctx, v) else { continue };
        // Not while the conductor is (or just went) out probing for its
        // own settled node: that subtree still awaits the walk.
        if ctx.snap()[c].testing_out || ctx.agents[c].testing_out {
            continue;
        }
        let Some(host) = host_at(ctx, v) else { continue };
        let h = &ctx.snap()[host];
        if h.final_set || h.decision || h.terminated {
            continue;
        }
        if h.crnt_port.is_some() {
            continue;
        }
        ctx.agents[host].decision = true;
        ctx.agents[host].scan_port = 0;
    }
}

/// One scan step per round 24: out through the next port, or read the
/// visited node and come back.
fn scan_step(ctx: &mut RoundCtx<'_>) {
    for idx in 0..ctx.agents.len() {
        let a = &ctx.agents[idx];
        if !a.decision || a.final_set || a.terminated {
            continue;
        }
        if ctx.snap()[idx].scan_out {
            // At the scanned neighbor: read it, then return. A finally
            // settled agent staying (or already relocated) here marks the
            // node chosen; a decided agent that will move away neither
            // counts nor attracts; a pending settler will scan through
            // this edge later and report in. A node whose settler is away
            // conducting reads through its home claim, exactly as its
            // hopping stand-in would have answered.
            let at = ctx.pos_of(idx);
            let mut chosen = false;
            let mut leaving = false;
            let mut pending = false;
            let mut any_body = false;
            for i in ctx.members(at) {
                let home_here = ctx.at_home(i);
                let b = ctx.obs(at, i);
                if !b.settled || b.id == ctx.snap()[idx].id {
                    continue;
                }
                if b.final_set {
                    any_body = true;
                    if b.relocated || b.final_port < 0 {
                        chosen = true;
                    } else {
                        leaving = true;
                    }
                } else if home_here {
                    any_body = true;
                    pending = true;
                }
            }
            if !any_body {
                if let Some(j) = (0..ctx.agents.len()).find(|&j| ctx.home[j] == Some(at)) {
                    let b = &ctx.agents[j];
                    if !b.final_set {
                        pending = true;
                    } else if b.relocated || b.final_port < 0 {
                        chosen = true;
                    } else {
                        leaving = true;
                    }
                }
            }
            let _ = leaving;
            if chosen {
                if ctx.agents[idx].final_port < 0 {
                    ctx.agents[idx].final_port = ctx.agents[idx].cur_scan_port;
                }
            } else if pending {
                ctx.agents[idx].count += 1;
            }
            let back = ctx.snap()[idx].prt_ent;
            if back >= 0 {
                ctx.mv(idx, back as Port);
            }
            ctx.agents[idx].scan_out = false;
            ctx.agents[idx].scan_port = ctx.agents[idx].cur_scan_port + 1;
            continue;
        }
        let v = ctx.pos_of(idx);
        let deg = ctx.deg(v) as i32;
        let sp = ctx.agents[idx].scan_port;
        if sp >= 0 && sp < deg {
            ctx.agents[idx].cur_scan_port = sp;
            ctx.agents[idx].scan_out = true;
            ctx.mv(idx, sp as Port);
        } else if sp >= deg {
            // Scan complete: stay if no finally-settled neighbor was
            // found, else join it (the move itself waits for count = 0).
            ctx.agents[idx].final_set = true;
        }
    }
}

/// Finally-settled agents tick down as pending neighbors scan through.
fn count_decrements(ctx: &mut RoundCtx<'_>) {
    for v in 0..ctx.node_count() {
        let visitors = ctx
            .members(v)
            .iter()
            .copied()
            .filter(|&i| {
                let a = &ctx.snap()[i];
                a.scan_out && a.decision && !a.final_set && !a.terminated
            })
            .count() as u32;
        if visitors == 0 {
            continue;
        }
        // The decrement lands on whoever answers for this node, present
        // or away conducting.
        for i in 0..ctx.agents.len() {
            let a = &ctx.snap()[i];
            if a.settled && a.final_set && !a.terminated && ctx.home[i] == Some(v) {
                let c = &mut ctx.agents[i];
                c.count = c.count.saturating_sub(visitors);
            }
        }
    }
}

/// The extra body at a foreign-settled root copies the root settler's
/// outcome.
fn follow_host_finale(ctx: &mut RoundCtx<'_>) {
    for idx in 0..ctx.agents.len() {
        let a = &ctx.snap()[idx];
        if !a.follow_host || a.terminated || a.final_set {
            continue;
        }
        let v = ctx.pos_of(idx);
        let pres = ctx.presence(v);
        let Some(z) = pres.home_settler else { continue };
        let zs = ctx.obs(v, z);
        if zs.final_set {
            let (fp, _) = (zs.final_port, ());
            ctx.agents[idx].final_set = true;
            ctx.agents[idx].final_port = fp;
        }
    }
}

fn terminations(ctx: &mut RoundCtx<'_>) {
    for idx in 0..ctx.agents.len() {
        let a = &ctx.agents[idx];
        if a.terminated || !a.final_set || a.scan_out {
            continue;
        }
        if a.driver == DriverPhase::Finished && !a.walk_done {
            continue; // the conductor settles only once its walk is over
        }
        if a.count > 0 {
            continue;
        }
        let v = ctx.pos_of(idx);
        // A conductor that decided for a settled spot elsewhere (or whose
        // claim was superseded) cannot walk back; its body joins whatever
        // the settler beside it chose, leaving its decision on record.
        if ctx.agents[idx].driver == DriverPhase::Finished && ctx.home[idx] != Some(v) {
            let host = (0..ctx.agents.len())
                .find(|&j| j != idx && ctx.home[j] == Some(v) && ctx.snap_pos_is(j, v));
            let Some(z) = host else { continue };
            let zs = ctx.agents[z].clone();
            if !zs.final_set {
                continue; // wait for the root settler's own outcome
            }
            if zs.final_port >= 0 && (zs.final_port as usize) < ctx.deg(v) {
                ctx.agents[idx].terminated = true;
                ctx.mv(idx, zs.final_port as Port);
            } else {
                ctx.agents[idx].terminated = true;
            }
            continue;
        }
        if a.final_port >= 0 && !a.relocated {
            let p = a.final_port;
            if (p as usize) < ctx.deg(v) {
                let (dest, _) = match ctx.graph.neighbor(v, p as Port) {
                    Ok(x) => x,
                    Err(_) => continue,
                };
                // Joining a chosen node whose claimant is off conducting:
                // this body becomes the node's settler in place, and the
                // claim dissolves.
                let absent_claimant = (0..ctx.agents.len()).find(|&j| {
                    ctx.home[j] == Some(dest)
                        && ctx.agents[j].driver == DriverPhase::Finished
                        && !ctx.snap_pos_is(j, dest)
                });
                if let Some(c) = absent_claimant {
                    // This body becomes the node's in-place settler; the
                    // absent claimant's debt ledger moves with the claim.
                    ctx.home[c] = None;
                    ctx.agents[c].count = 0;
                    ctx.home[idx] = Some(dest);
                    ctx.agents[idx].final_port = -1;
                } else {
                    ctx.agents[idx].relocated = true;
                }
                ctx.agents[idx].terminated = true;
                ctx.mv(idx, p as Port);
            } else {
                ctx.fault(Some(idx), "final_port out of range");
            }
        } else {
            ctx.agents[idx].terminated = true;
        }
    }
}
