//! Sub-rounds 1-15: the dispersion phase.
//!
//! Rounds 1-2 resolve meetings (strongest non-zombie wins), rounds 3-4
//! absorb weaker settlers or settle a new node, round 5 gathers probe
//! helpers, rounds 6-10 run the parallel probe, rounds 11-13 move chasing
//! zombies, and rounds 14-15 move each leader group forward or backward.

use super::{hopper_outs, hopper_returns, weaker_than, DriverPhase, RoundCtx};
use crate::graph::{NodeId, Port};

pub(crate) fn round_1(ctx: &mut RoundCtx<'_>) {
    for a in ctx.agents.iter_mut() {
        a.acted_meet = false;
        a.acted_34 = false;
        a.seen_real = false;
        a.seen_virtual = -1;
        a.seen_body = false;
        if a.pending_p1_detach {
            // A body that claimed a node out-of-band starts a group of
            // its own there, so the dispersal search sees foreign
            // territory it can absorb and explore through.
            a.pending_p1_detach = false;
            a.leader = a.id;
            a.next = None;
            a.checked = -1;
            a.done = false;
            a.help = None;
        }
    }
    hopper_returns(ctx);
    meeting_round(ctx, true);
}

pub(crate) fn round_2(ctx: &mut RoundCtx<'_>) {
    hopper_outs(ctx);
    meeting_round(ctx, false);
}

/// Rounds 1-2: after reaching a node, the strongest non-zombie present
/// wins; weaker leaders become zombies chasing it. Round 1 only decides
/// when a settled agent is visible, so a virtual settler hopping in is
/// seen; otherwise the decision falls to round 2.
fn meeting_round(ctx: &mut RoundCtx<'_>, require_settled: bool) {
    for v in 0..ctx.node_count() {
        let pres = ctx.presence(v);
        if let Some(x) = pres.extra_home_settler {
            ctx.fault(Some(x), "two settlers claim the same node");
        }
        if pres.leaders.is_empty() {
            continue;
        }
        accrue_seen(ctx, v, &pres);
        let undecided: Vec<usize> = pres
            .leaders
            .iter()
            .copied()
            .filter(|&l| !ctx.agents[l].acted_meet)
            .collect();
        if undecided.is_empty() {
            continue;
        }
        if require_settled && !pres.any_settled {
            continue;
        }
        // Strongest group identifier among leaders and settled bodies.
        let mut best = (0u32, 0u64);
        for &l in &pres.leaders {
            let gid = ctx.obs(v, l).group_id();
            if weaker_than(best, gid) {
                best = gid;
            }
        }
        let settled_bodies: Vec<usize> = pres
            .home_settler
            .iter()
            .chain(pres.visiting_vprnt.iter())
            .chain(pres.other_bodies.iter())
            .copied()
            .collect();
        for &b in &settled_bodies {
            let gid = ctx.presented_gid(v, b);
            if weaker_than(best, gid) {
                best = gid;
            }
        }
        for &l in &pres.leaders {
            let gid = ctx.obs(v, l).group_id();
            let a = &mut ctx.agents[l];
            a.acted_meet = true;
            if weaker_than(gid, best) {
                a.lvl_l = gid.0;
                a.lvl_s = gid.0;
                a.leader = best.1;
            }
        }
        if ctx.iteration == 1 {
            // Every agent in the group records the elected leader's id as
            // its permanent group label.
            for i in ctx.members(v) {
                if !ctx.agents[i].settled {
                    ctx.agents[i].prm_leader = best.1 as i64;
                }
            }
        }
    }
}

fn accrue_seen(ctx: &mut RoundCtx<'_>, v: NodeId, pres: &super::Presence) {
    let real = pres.home_settler.is_some();
    let body = !pres.other_bodies.is_empty();
    let virt_id = best_virtual(ctx, v, pres).map(|h| ctx.snap_id(h));
    for &l in &pres.leaders {
        let a = &mut ctx.agents[l];
        a.seen_real |= real;
        a.seen_body |= body;
        if a.seen_virtual < 0 {
            if let Some(id) = virt_id {
                a.seen_virtual = id;
            }
        }
    }
}

/// Preferred virtual settler at `v`: one carrying a stand-in record for
/// this node, else any, smallest id first.
fn best_virtual(ctx: &mut RoundCtx<'_>, v: NodeId, pres: &super::Presence) -> Option<usize> {
    let mut bare = None;
    for &h in &pres.visiting_vprnt {
        if ctx.obs(v, h).proxy.is_some() {
            return Some(h);
        }
        if bare.is_none() {
            bare = Some(h);
        }
    }
    bare
}

pub(crate) fn round_3(ctx: &mut RoundCtx<'_>) {
    hopper_returns(ctx);
    for v in 0..ctx.node_count() {
        let pres = ctx.presence(v);
        if pres.leaders.len() > 1 {
            ctx.fault(Some(pres.leaders[1]), "two leaders co-located after round 2");
            continue;
        }
        let Some(&l) = pres.leaders.first() else { continue };
        accrue_seen(ctx, v, &pres);
        if absorb_or_level_up(ctx, v, l, &pres) {
            ctx.agents[l].acted_34 = true;
        }
        // A node whose settler is away on the merge walk shows only its
        // hopping stand-in in rounds 1 and 3. Settling here now (adopting
        // the stand-in record) realizes the node and keeps phase 1 moving.
        if !ctx.agents[l].seen_real && !ctx.agents[l].settled {
            if let Some(h) = best_virtual(ctx, v, &pres) {
                settle_onto_virtual(ctx, v, l, h, &pres);
                ctx.agents[l].acted_34 = true;
            }
        }
    }
}

pub(crate) fn round_4(ctx: &mut RoundCtx<'_>) {
    for v in 0..ctx.node_count() {
        let pres = ctx.presence(v);
        if pres.leaders.len() > 1 {
            ctx.fault(Some(pres.leaders[1]), "two leaders co-located after round 2");
            continue;
        }
        let Some(&l) = pres.leaders.first() else { continue };
        accrue_seen(ctx, v, &pres);
        if ctx.agents[l].acted_34 || ctx.agents[l].settled {
            continue;
        }
        if pres.home_settler.is_some() {
            absorb_or_level_up(ctx, v, l, &pres);
            continue;
        }
        let a = &ctx.agents[l];
        if a.seen_real || a.seen_virtual >= 0 || a.seen_body || !pres.other_bodies.is_empty() {
            // Something settled showed itself this iteration; the node is
            // not free. Re-evaluate next iteration.
            continue;
        }
        fresh_settle(ctx, v, l, &pres);
    }
}

/// Rounds 3-4 settler interaction: absorb a weaker settler into the
/// leader's territory, or consume an equal-level zombie to level up.
/// Returns true if either change was made.
fn absorb_or_level_up(
    ctx: &mut RoundCtx<'_>,
    v: NodeId,
    l: usize,
    pres: &super::Presence,
) -> bool {
    enum Target {
        Real(usize),
        Proxy(usize),
    }
    let target = if let Some(s) = pres.home_settler {
        Target::Real(s)
    } else {
        let Some(h) = pres
            .visiting_vprnt
            .iter()
            .copied()
            .find(|&h| ctx.obs(v, h).proxy.is_some())
        else {
            return false;
        };
        Target::Proxy(h)
    };
    let tgid = match &target {
        Target::Real(s) => ctx.obs(v, *s).group_id(),
        Target::Proxy(h) => ctx.presented_gid(v, *h),
    };
    let agid = {
        let a = ctx.obs(v, l);
        (a.lvl, a.id)
    };
    let entry = ctx.obs(v, l).prt_ent;
    if weaker_than(tgid, agid) {
        let (id, lvl) = (agid.1, agid.0);
        match target {
            Target::Real(s) => {
                let t = &mut ctx.agents[s];
                t.prnt_prt = entry;
                t.leader = id;
                t.lvl = lvl;
            }
            Target::Proxy(h) => {
                let px = ctx.agents[h].proxy.as_mut().expect("proxy");
                px.parent = entry;
                px.leader = id;
                px.lvl = lvl;
            }
        }
        return true;
    }
    // Level-up: a zombie at the leader's own level gets consumed.
    let lvl_now = agid.0;
    let zb = pres
        .zombies
        .iter()
        .copied()
        .find(|&z| ctx.obs(v, z).lvl == lvl_now);
    if let Some(z) = zb {
        let new_lvl = lvl_now + 1;
        ctx.agents[l].lvl = new_lvl;
        ctx.agents[z].lvl = 0;
        match target {
            Target::Real(s) => {
                let t = &mut ctx.agents[s];
                t.prnt_prt = -1;
                t.leader = agid.1;
                t.lvl = new_lvl;
                t.next = None;
                t.checked = -1;
                t.help = None;
                t.done = false;
            }
            Target::Proxy(h) => {
                let px = ctx.agents[h].proxy.as_mut().expect("proxy");
                px.parent = -1;
                px.leader = agid.1;
                px.lvl = new_lvl;
                px.next = None;
                px.checked = -1;
                px.done = false;
            }
        }
        // The probe reset the level-up calls for was just performed.
        ctx.agents[l].init_probe = false;
        return true;
    }
    false
}

/// A virtually covered node gains a real settler: the minimum-id zombie
/// (or the lone leader itself) settles and inherits the stand-in record;
/// the hopping protector is released.
fn settle_onto_virtual(
    ctx: &mut RoundCtx<'_>,
    v: NodeId,
    l: usize,
    h: usize,
    pres: &super::Presence,
) {
    let body = pres.zombies.first().copied().unwrap_or(l);
    let (lid, llvl, lent) = {
        let a = &ctx.agents[l];
        (a.id, a.lvl, a.prt_ent)
    };
    let px = ctx.agents[h].proxy.take();
    ctx.agents[h].vprnt = false;
    // The vacated settler's home claim dissolves; its body is realized
    // elsewhere later.
    for j in 0..ctx.agents.len() {
        if j != body && ctx.home[j] == Some(v) {
            ctx.home[j] = None;
        }
    }
    let b = &mut ctx.agents[body];
    b.settled = true;
    if body != l {
        b.leader = lid;
        b.lvl = llvl;
    }
    b.prnt_prt = lent;
    b.v_prnt_port = lent;
    b.pending_adoption = px;
    ctx.home[body] = Some(v);
}

/// Round-4 settle at a genuinely unoccupied node.
fn fresh_settle(ctx: &mut RoundCtx<'_>, v: NodeId, l: usize, pres: &super::Presence) {
    // A live home claim means somebody (a walker that adopted this node
    // mid-walk) already answers for it; it shows up here regularly, so
    // wait rather than double-settle.
    if (0..ctx.agents.len()).any(|j| ctx.home[j] == Some(v)) {
        return;
    }
    let (body, self_settle) = match pres.zombies.first() {
        Some(&z) => (z, false),
        None => (l, true),
    };
    let (lid, llvl, lent, lflag) = {
        let a = &ctx.agents[l];
        (a.id, a.lvl, a.prt_ent, a.flag)
    };
    let b = &mut ctx.agents[body];
    b.settled = true;
    if !self_settle {
        b.leader = lid;
        b.lvl = llvl;
    }
    b.prnt_prt = lent;
    b.v_prnt_port = lent;
    ctx.home[body] = Some(v);
    if ctx.iteration == 1 {
        ctx.walk_root[body] = Some(v);
        let b = &mut ctx.agents[body];
        b.sticky = true;
        b.driver = DriverPhase::Active;
        if self_settle {
            b.flag_1 = true;
        } else {
            ctx.agents[l].flag = true;
        }
    } else if lflag && lent >= 0 {
        // First child after the root settler: virtually covers the node
        // the group came from.
        ctx.agents[body].vprnt = true;
        ctx.agents[l].flag = false;
    }
    if !self_settle {
        ctx.agents[l].init_probe = true;
    }
}

pub(crate) fn round_5(ctx: &mut RoundCtx<'_>) {
    for idx in 0..ctx.agents.len() {
        let a = &ctx.snap()[idx];
        let fresh = a.help_fresh;
        if a.help_fresh {
            ctx.agents[idx].help_fresh = false;
        }
        if a.settled
            && !a.terminated
            && ctx.at_home(idx)
            && !ctx.is_carried(idx)
        {
            if let Some(p) = a.help {
                // A leading agent mid-walk follows only a summons from
                // this iteration; anything older is dropped so it cannot
                // fire while the walk is elsewhere.
                if a.driver == DriverPhase::Active && !fresh {
                    ctx.agents[idx].help = None;
                    continue;
                }
                if (p as usize) < ctx.deg(ctx.pos_of(idx)) {
                    ctx.agents[idx].helping = true;
                    ctx.mv(idx, p);
                } else {
                    ctx.fault(Some(idx), "help names an out-of-range port");
                }
            }
        }
    }
}

/// Leader plus home settler at a node, if both are present.
fn probe_site(ctx: &mut RoundCtx<'_>, v: NodeId) -> Option<(usize, usize)> {
    let pres = ctx.presence(v);
    let l = *pres.leaders.first()?;
    let s = pres.home_settler?;
    Some((l, s))
}

/// Gathered helpers at `v`: settled agents visiting with an active help
/// pointer, smallest id first.
fn helpers_at(ctx: &mut RoundCtx<'_>, v: NodeId) -> Vec<usize> {
    let mut out = Vec::new();
    for i in ctx.members(v) {
        let home = ctx.at_home(i);
        let a = ctx.obs(v, i);
        if a.settled && !a.terminated && !home && a.help.is_some() && a.helping {
            out.push(i);
        }
    }
    out
}

pub(crate) fn round_6(ctx: &mut RoundCtx<'_>) {
    for v in 0..ctx.node_count() {
        let Some((l, s)) = probe_site(ctx, v) else { continue };
        let init = ctx.snap()[l].init_probe;
        if init {
            let t = &mut ctx.agents[s];
            t.next = None;
            t.checked = -1;
            t.help = None;
            t.done = false;
            ctx.agents[l].init_probe = false;
        }
        let (checked, done) = if init {
            (-1, false)
        } else {
            (ctx.snap()[s].checked, ctx.snap()[s].done)
        };
        if done {
            continue;
        }
        let helpers = helpers_at(ctx, v);
        let mut entry_ports = Vec::new();
        for &h in &helpers {
            let e = ctx.snap()[h].prt_ent;
            ctx.agents[h].helper_entry = e;
            entry_ports.push(e);
        }
        // P: probed ports whose neighbor sent no helper, i.e. candidates
        // that are unoccupied or foreign.
        let next = (0..=checked)
            .filter(|p| *p >= 0 && !entry_ports.contains(p))
            .map(|p| p as Port)
            .min();
        ctx.agents[s].next = next;
        let lgid = {
            let a = ctx.obs(v, l);
            (a.lvl, a.id)
        };
        for &h in &helpers {
            let hgid = ctx.snap()[h].group_id();
            if weaker_than(hgid, lgid) {
                ctx.agents[h].help = None;
                ctx.agents[h].helping = false;
                let back = ctx.snap()[h].prt_ent;
                if back >= 0 {
                    ctx.mv(h, back as Port);
                }
            }
        }
    }
}

pub(crate) fn round_7(ctx: &mut RoundCtx<'_>) {
    for v in 0..ctx.node_count() {
        let Some((_, s)) = probe_site(ctx, v) else { continue };
        if ctx.snap()[s].done {
            continue;
        }
        let deg = ctx.deg(v) as i32;
        if ctx.snap()[s].next.is_some() || ctx.snap()[s].checked == deg - 1 {
            for h in helpers_at(ctx, v) {
                ctx.agents[h].help = None;
                ctx.agents[h].helping = false;
                let back = ctx.snap()[h].helper_entry;
                if back >= 0 {
                    ctx.mv(h, back as Port);
                }
            }
            ctx.agents[s].done = true;
        }
    }
}

pub(crate) fn round_8(ctx: &mut RoundCtx<'_>) {
    for v in 0..ctx.node_count() {
        let Some((l, s)) = probe_site(ctx, v) else { continue };
        if ctx.snap()[s].done {
            continue;
        }
        let checked = ctx.snap()[s].checked;
        let deg = ctx.deg(v) as i32;
        let mut probers = vec![l];
        let pres = ctx.presence(v);
        probers.extend(pres.zombies.iter().copied());
        probers.extend(helpers_at(ctx, v));
        probers.sort_by_key(|&i| ctx.snap()[i].id);
        let batch = probers.len().min((deg - 1 - checked).max(0) as usize);
        let lgid = ctx.snap()[l].group_id();
        for (i, &p) in probers.iter().take(batch).enumerate() {
            let port = checked + 1 + i as i32;
            ctx.agents[p].probe_port = port;
            ctx.agents[p].probe_leader = lgid.1 as i64;
            ctx.agents[p].probe_lvl = lgid.0;
            ctx.mv(p, port as Port);
        }
    }
}

pub(crate) fn round_9(ctx: &mut RoundCtx<'_>) {
    for idx in 0..ctx.agents.len() {
        if ctx.snap()[idx].probe_port < 0 {
            continue;
        }
        let at = ctx.pos_of(idx);
        let pres = ctx.presence(at);
        if let Some(x) = pres.extra_home_settler {
            ctx.fault(Some(x), "probe found two settlers at one node");
        }
        // Membership test against the probe's group identity (the
        // dispatching leader's), not the prober's own fields.
        let probe_gid = (
            ctx.snap()[idx].probe_lvl,
            ctx.snap()[idx].probe_leader.max(0) as u64,
        );
        let found = match pres.home_settler {
            Some(r) => ctx.obs(at, r).group_id() == probe_gid,
            None => false,
        };
        let entry = ctx.snap()[idx].prt_ent;
        ctx.agents[idx].found = found;
        if found {
            if let Some(r) = pres.home_settler {
                if entry >= 0 {
                    ctx.agents[r].help = Some(entry as Port);
                    ctx.agents[r].help_fresh = true;
                }
            }
        }
        if entry >= 0 {
            ctx.mv(idx, entry as Port);
        }
    }
}

pub(crate) fn round_10(ctx: &mut RoundCtx<'_>) {
    for v in 0..ctx.node_count() {
        let Some((_, s)) = probe_site(ctx, v) else { continue };
        let mut returned: Vec<(i32, bool, usize)> = Vec::new();
        for i in ctx.members(v) {
            let a = ctx.obs(v, i);
            if a.probe_port >= 0 {
                returned.push((a.probe_port, a.found, i));
            }
        }
        if returned.is_empty() {
            continue;
        }
        if let Some(p) = returned
            .iter()
            .filter(|(_, found, _)| !found)
            .map(|(p, _, _)| *p)
            .min()
        {
            ctx.agents[s].next = Some(p as Port);
        }
        let max_port = returned.iter().map(|(p, _, _)| *p).max().unwrap();
        ctx.agents[s].checked = ctx.agents[s].checked.max(max_port);
        for (_, _, i) in &returned {
            ctx.agents[*i].probe_port = -1;
            ctx.agents[*i].probe_leader = -1;
            ctx.agents[*i].probe_lvl = 0;
            ctx.agents[*i].found = false;
        }
        // All gathered helpers return home; while their help pointer is
        // set they re-gather at the next round 5.
        for h in helpers_at(ctx, v) {
            let back = ctx.snap()[h].helper_entry;
            if back >= 0 {
                ctx.agents[h].helping = false;
                ctx.mv(h, back as Port);
            }
        }
    }
}

pub(crate) fn round_11(ctx: &mut RoundCtx<'_>) {
    hopper_outs(ctx);
    zombie_step(ctx, true);
}

pub(crate) fn round_12(ctx: &mut RoundCtx<'_>) {
    hopper_returns(ctx);
    zombie_step(ctx, true);
}

pub(crate) fn round_13(ctx: &mut RoundCtx<'_>) {
    zombie_step(ctx, false);
    promote_orphans(ctx);
}

/// Settler view a chasing zombie reads at its node: the home settler, or
/// a visiting stand-in record for this node.
fn chase_view(ctx: &mut RoundCtx<'_>, v: NodeId, pres: &super::Presence) -> Option<(u32, Option<Port>, bool, i32)> {
    if let Some(s) = pres.home_settler {
        let a = ctx.obs(v, s);
        return Some((a.lvl, a.next, a.done, a.prnt_prt));
    }
    for &h in &pres.visiting_vprnt {
        let a = ctx.obs(v, h);
        if let Some(px) = &a.proxy {
            return Some((px.lvl, px.next, px.done, px.parent));
        }
    }
    None
}

fn chase_target(view: &(u32, Option<Port>, bool, i32), deg: usize) -> Option<Port> {
    let (_, next, done, parent) = *view;
    if let Some(p) = next {
        if (p as usize) < deg {
            return Some(p);
        }
    }
    // Exhausted trail tip: fall back toward the parent so the chase keeps
    // moving along the spine.
    if done && parent >= 0 && (parent as usize) < deg {
        return Some(parent as Port);
    }
    None
}

fn zombie_step(ctx: &mut RoundCtx<'_>, weak_only: bool) {
    for v in 0..ctx.node_count() {
        let pres = ctx.presence(v);
        if pres.zombies.is_empty() {
            continue;
        }
        let view = chase_view(ctx, v, &pres);
        let max_z_lvl = pres
            .zombies
            .iter()
            .map(|&z| ctx.snap()[z].lvl)
            .max()
            .unwrap_or(0);
        let has_leader = !pres.leaders.is_empty();
        let deg = ctx.deg(v);
        for &z in &pres.zombies {
            if let Some(view) = &view {
                ctx.agents[z].lvl_l = view.0;
            }
            ctx.agents[z].lvl_s = max_z_lvl;
            if has_leader {
                continue;
            }
            let weak = ctx.agents[z].lvl_s < ctx.agents[z].lvl_l;
            if weak_only && !weak {
                continue;
            }
            if let Some(view) = &view {
                if let Some(p) = chase_target(view, deg) {
                    ctx.mv(z, p);
                }
            }
        }
    }
}

/// A chasing zombie stranded at a dead trail end (no leader will ever
/// come back here) takes over as a leader so its group's dispersion can
/// finish.
fn promote_orphans(ctx: &mut RoundCtx<'_>) {
    for v in 0..ctx.node_count() {
        let pres = ctx.presence(v);
        if !pres.leaders.is_empty() || pres.zombies.is_empty() {
            continue;
        }
        let Some(view) = chase_view(ctx, v, &pres) else { continue };
        if pres.home_settler.is_none() || chase_target(&view, ctx.deg(v)).is_some() {
            continue;
        }
        let z = pres.zombies[0];
        let a = &mut ctx.agents[z];
        a.leader = a.id;
        a.lvl = a.lvl.max(1);
        a.init_probe = true;
    }
}

pub(crate) fn round_14(ctx: &mut RoundCtx<'_>) {
    for v in 0..ctx.node_count() {
        let Some((l, s)) = probe_site(ctx, v) else { continue };
        if !ctx.snap()[s].done {
            continue;
        }
        let pres = ctx.presence(v);
        let port = match ctx.snap()[s].next {
            Some(p) => {
                if (p as usize) >= ctx.deg(v) {
                    ctx.fault(Some(s), "probe next names an out-of-range port");
                    continue;
                }
                ctx.agents[l].moved_forward = true;
                p
            }
            None => {
                let parent = ctx.snap()[s].prnt_prt;
                if parent < 0 {
                    // Root exhausted with nothing left to find: this
                    // group's exploration is over.
                    continue;
                }
                parent as Port
            }
        };
        ctx.agents[l].init_probe = true;
        ctx.mv(l, port);
        for &z in &pres.zombies {
            ctx.mv(z, port);
        }
    }
}

pub(crate) fn round_15(ctx: &mut RoundCtx<'_>) {
    for idx in 0..ctx.agents.len() {
        if ctx.snap()[idx].moved_forward && !ctx.snap()[idx].settled {
            ctx.agents[idx].prnt_prt = ctx.snap()[idx].prt_ent;
            ctx.agents[idx].moved_forward = false;
        }
    }
}
