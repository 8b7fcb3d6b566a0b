//! Broad corpus sweep on small graphs: every family, several seeds and
//! placements, occupied set checked against the brute-force oracle.

use d2d::engine::{draw_agent_ids, Placement};
use d2d::graph::{generate, GraphFamily, GraphFamilySpec};
use d2d::runner::{execute, RunStatus};
use d2d::verify::enumerate_mis;

fn sweep(families: &[GraphFamily], sizes: &[usize], seeds: &[u64]) {
    let mut failures = Vec::new();
    for &family in families {
        for &n in sizes {
            if family == GraphFamily::Cycle && n < 3 {
                continue;
            }
            for &seed in seeds {
                let m = match family {
                    GraphFamily::RandomConnected => {
                        Some((2 * n).clamp(n - 1, n * (n - 1) / 2))
                    }
                    _ => None,
                };
                let g = match generate(&GraphFamilySpec { family, n, m, seed }) {
                    Ok(g) => g,
                    Err(_) => continue,
                };
                let sets = enumerate_mis(&g).unwrap();
                for mode in 0..3 {
                    let ids = draw_agent_ids(n, 2, seed.wrapping_add(mode));
                    let placement = match mode {
                        0 => Placement::rooted(ids),
                        1 => Placement::scattered(ids),
                        _ => Placement::random_p(n, n.div_ceil(2), ids, seed),
                    };
                    let label = format!("{family:?} n={n} seed={seed} mode={mode}");
                    match execute(g.clone(), &placement, seed, None, false) {
                        Ok(report) => {
                            if report.status != RunStatus::Completed {
                                failures.push(format!("{label}: {:?}", report.status));
                                continue;
                            }
                            if !sets.contains(&report.occupied) {
                                failures.push(format!(
                                    "{label}: occupied {:?} not a maximal independent set",
                                    report.occupied
                                ));
                            }
                            for (name, v) in &report.verdicts {
                                if !v.pass {
                                    failures.push(format!("{label}: {name} {v}"));
                                }
                            }
                        }
                        Err(e) => failures.push(format!("{label}: error {e}")),
                    }
                }
            }
        }
    }
    assert!(failures.is_empty(), "{} failures:\n{}", failures.len(), failures.join("\n"));
}

#[test]
fn corpus_families_small() {
    sweep(
        &[
            GraphFamily::Path,
            GraphFamily::Cycle,
            GraphFamily::Star,
            GraphFamily::Complete,
            GraphFamily::Tree,
            GraphFamily::RandomConnected,
        ],
        &[2, 3, 4, 5, 6, 7, 8],
        &[0, 1, 2],
    );
}

#[test]
fn corpus_families_mid() {
    sweep(
        &[GraphFamily::Tree, GraphFamily::RandomConnected, GraphFamily::Star],
        &[10, 12, 14],
        &[3, 4],
    );
}
