//! End-to-end protocol runs on small graphs, checked against the
//! brute-force oracles.

use d2d::engine::{draw_agent_ids, Placement};
use d2d::graph::{generate, GraphFamily, GraphFamilySpec};
use d2d::runner::{execute, RunStatus};
use d2d::verify::enumerate_mis;

fn gen(family: GraphFamily, n: usize, m: Option<usize>, seed: u64) -> d2d::PortLabeledGraph {
    generate(&GraphFamilySpec { family, n, m, seed }).unwrap()
}

fn run_ok(
    g: d2d::PortLabeledGraph,
    placement: &Placement,
    seed: u64,
) -> d2d::runner::RunReport {
    let report = execute(g, placement, seed, None, false).expect("simulation error");
    assert_eq!(report.status, RunStatus::Completed, "run did not complete");
    for (name, v) in &report.verdicts {
        assert!(v.pass, "check {name} failed: {v}");
    }
    report
}

#[test]
fn p2_rooted_pair_ends_together() {
    let g = gen(GraphFamily::Path, 2, None, 0);
    let report = run_ok(g, &Placement::rooted(vec![1, 2]), 1);
    // the maximal independent set of P2 is a single node hosting both
    assert_eq!(report.metrics.mis_size, 1);
    assert_eq!(report.metrics.elected_prm_leader, Some(2));
}

#[test]
fn p2_scattered() {
    let g = gen(GraphFamily::Path, 2, None, 0);
    let report = run_ok(g, &Placement::scattered(vec![3, 4]), 1);
    assert_eq!(report.metrics.mis_size, 1);
    assert_eq!(report.metrics.elected_prm_leader, Some(4));
}

#[test]
fn c4_rooted_lands_on_a_diagonal() {
    let g = gen(GraphFamily::Cycle, 4, None, 0);
    let report = run_ok(g.clone(), &Placement::rooted(vec![3, 5, 7, 11]), 2);
    let sets = enumerate_mis(&g).unwrap();
    assert!(sets.contains(&report.occupied));
    assert_eq!(report.occupied.len(), 2);
}

#[test]
fn star_scattered_all_families_of_mis() {
    let g = gen(GraphFamily::Star, 4, None, 0);
    let report = run_ok(g.clone(), &Placement::scattered(vec![2, 5, 8, 13]), 3);
    let sets = enumerate_mis(&g).unwrap();
    assert!(sets.contains(&report.occupied));
}

#[test]
fn k3_rooted() {
    let g = gen(GraphFamily::Complete, 3, None, 0);
    let report = run_ok(g, &Placement::rooted(vec![1, 2, 3]), 4);
    assert_eq!(report.metrics.mis_size, 1);
}

#[test]
fn deterministic_trace_hash() {
    let g = gen(GraphFamily::RandomConnected, 6, Some(8), 5);
    let pl = Placement::random_p(6, 3, draw_agent_ids(6, 2, 5), 5);
    let a = execute(g.clone(), &pl, 5, None, false).unwrap();
    let b = execute(g, &pl, 5, None, false).unwrap();
    assert_eq!(a.metrics.trace_hash, b.metrics.trace_hash);
    assert_eq!(a.metrics.total_rounds, b.metrics.total_rounds);
}
