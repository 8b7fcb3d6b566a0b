// Temporary debugging harness; removed once the protocol is green.
use d2d::engine::{decompose_round, Placement, SimState};
use d2d::graph::{generate, GraphFamily, GraphFamilySpec};
use d2d::protocol::DriverPhase;

#[test]
#[ignore]
fn debug_trace() {
    let fam = std::env::var("DBG_FAM").unwrap_or_else(|_| "path".into());
    let n: usize = std::env::var("DBG_N").ok().and_then(|s| s.parse().ok()).unwrap_or(2);
    let m: Option<usize> = std::env::var("DBG_M").ok().and_then(|s| s.parse().ok());
    let seed: u64 = std::env::var("DBG_SEED").ok().and_then(|s| s.parse().ok()).unwrap_or(0);
    let rounds: u64 = std::env::var("DBG_ROUNDS").ok().and_then(|s| s.parse().ok()).unwrap_or(24 * 40);
    let placement = std::env::var("DBG_PLACEMENT").unwrap_or_else(|_| "rooted".into());
    let family: GraphFamily = fam.parse().unwrap();
    let g = generate(&GraphFamilySpec { family, n, m, seed }).unwrap();
    let ids: Vec<u64> = (1..=n as u64).collect();
    let pl = match placement.as_str() {
        "rooted" => Placement::rooted(ids),
        "scattered" => Placement::scattered(ids),
        p => {
            let p: usize = p.parse().unwrap();
            Placement::random_p(n, p, ids, seed)
        }
    };
    let _ = &pl;
    let mode: u64 = std::env::var("DBG_MODE").ok().and_then(|s| s.parse().ok()).unwrap_or(99);
    let pl = if mode == 99 {
        pl
    } else {
        let ids = d2d::engine::draw_agent_ids(n, 2, seed.wrapping_add(mode));
        match mode {
            0 => Placement::rooted(ids),
            1 => Placement::scattered(ids),
            _ => Placement::random_p(n, n.div_ceil(2), ids, seed),
        }
    };
    let mut sim = SimState::init(g, &pl, seed, true).unwrap();
    for _ in 0..rounds {
        if sim.all_terminated() {
            println!("ALL TERMINATED at round {}", sim.round() - 1);
            break;
        }
        match sim.step_round() {
            Ok(events) => {
                let t = sim.round() - 1;
                let (i, r) = decompose_round(t);
                for e in &events {
                    println!("{}", e.line());
                }
                let _ = (i, r);
            }
            Err(e) => {
                println!("FAULT: {e}");
                break;
            }
        }
    }
    println!("--- final state at round {} ---", sim.round());
    for (k, a) in sim.agents().iter().enumerate() {
        println!(
            "agent {} id={} pos={} home={:?} settled={} leader={} lvl={} prm={} met={} sticky={} vprnt={} driver={:?} depth={} nxt={} prt_ent={} trav={:?} ph={} term={} final={} count={} crnt={:?} dist={} prm_parent={}",
            k, a.id, sim.positions()[k], sim.homes()[k], a.settled, a.leader, a.lvl,
            a.prm_leader, a.met_prm, a.sticky, a.vprnt, a.driver, a.depth, a.nxt_prt,
            a.prt_ent, a.trav, a.ph, a.terminated, a.final_set, a.count, a.crnt_port,
            a.dist, a.prm_parent
        );
    }
    let _ = DriverPhase::None;
}
