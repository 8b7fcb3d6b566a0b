//! One-call execution: run a simulation to termination and judge it with
//! every oracle. Shared by the command-line front end and the acceptance
//! suite.

use crate::engine::{default_max_rounds, Metrics, Placement, SimError, SimState};
use crate::graph::PortLabeledGraph;
use crate::verify::{self, Configuration, Verdict};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunStatus {
    Completed,
    TimedOut,
    Faulted(String),
}

pub struct RunReport {
    pub status: RunStatus,
    pub metrics: Metrics,
    pub verdicts: Vec<(&'static str, Verdict)>,
    pub occupied: Vec<usize>,
    pub trace: Option<Vec<String>>,
}

impl RunReport {
    pub fn all_pass(&self) -> bool {
        self.status == RunStatus::Completed && self.verdicts.iter().all(|(_, v)| v.pass)
    }
}

/// Runs to termination and evaluates every checker.
pub fn execute(
    graph: PortLabeledGraph,
    placement: &Placement,
    seed: u64,
    max_rounds: Option<u64>,
    keep_trace: bool,
) -> Result<RunReport, SimError> {
    let cap = max_rounds
        .unwrap_or_else(|| default_max_rounds(graph.node_count(), graph.edge_count()));
    let mut sim = SimState::init(graph, placement, seed, keep_trace)?;
    let status = match sim.run(cap) {
        Ok(_) => RunStatus::Completed,
        Err(SimError::Timeout(_)) => RunStatus::TimedOut,
        Err(SimError::Fault { t, agent, message }) => {
            RunStatus::Faulted(format!("round {t}, agent {agent:?}: {message}"))
        }
        Err(e) => return Err(e),
    };
    let mut metrics = sim.metrics();
    metrics.timed_out = status == RunStatus::TimedOut;
    let verdicts = judge(&sim, &metrics, status == RunStatus::Completed);
    let occupied = sim.occupied_set();
    let trace = sim.take_trace();
    Ok(RunReport { status, metrics, verdicts, occupied, trace })
}

/// Every verdict the spec's checkers produce for one run.
pub fn judge(sim: &SimState, metrics: &Metrics, completed: bool) -> Vec<(&'static str, Verdict)> {
    let mut out: Vec<(&'static str, Verdict)> = Vec::new();
    let config = Configuration::from_sim(sim);

    out.push((
        "dispersion",
        match metrics.dispersion_round {
            Some(_) => Verdict::pass(),
            None => Verdict::fail("dispersion milestone never reached"),
        },
    ));
    out.push((
        "milestone_order",
        match (metrics.dispersion_round, metrics.merge_round, metrics.termination_round) {
            (Some(d), Some(g), Some(t)) if d <= g && g <= t => Verdict::pass(),
            (Some(_), Some(_), Some(_)) => Verdict::fail("milestones out of order"),
            _ if !completed => Verdict::fail("run did not complete"),
            _ => Verdict::fail("missing milestone"),
        },
    ));
    out.push((
        "d2d",
        if completed {
            verify::check_d2d(&config, &sim.graph)
        } else {
            Verdict::fail("run did not complete")
        },
    ));
    if sim.graph.node_count() <= 20 {
        let v = if !completed {
            Verdict::fail("run did not complete")
        } else {
            match verify::enumerate_mis(&sim.graph) {
                Ok(sets) => {
                    if sets.contains(&sim.occupied_set()) {
                        Verdict::pass()
                    } else {
                        Verdict::fail(format!(
                            "occupied set {:?} is not a maximal independent set",
                            sim.occupied_set()
                        ))
                    }
                }
                Err(e) => Verdict::fail(e),
            }
        };
        out.push(("mis_member", v));
    }
    out.push(("single_leader", verify::check_single_leader(sim)));
    out.push((
        "spanning_tree",
        match sim.tree_snapshot() {
            Some(snap) => verify::check_spanning_tree(snap, &sim.graph, metrics.max_group_label),
            None => Verdict::fail("merge milestone never reached"),
        },
    ));
    let audit = verify::memory_audit(sim);
    out.push((
        "memory_audit",
        if audit.pass() {
            Verdict::pass()
        } else if let Some(v) = audit.violations.first() {
            Verdict::fail(v.clone())
        } else {
            Verdict::fail(format!(
                "{} bits per agent exceeds cap {}",
                audit.max_total_bits, audit.cap_bits
            ))
        },
    ));
    let iso = verify::phase_isolation_violations(sim);
    out.push((
        "phase_isolation",
        if iso.is_empty() {
            Verdict::pass()
        } else {
            Verdict::fail(iso.join("; "))
        },
    ));
    out.push((
        "locality",
        if sim.reads().non_local == 0 {
            Verdict::pass()
        } else {
            Verdict::fail(format!("{} non-local state reads", sim.reads().non_local))
        },
    ));
    out.push((
        "termination",
        if completed {
            verify::check_termination_bookkeeping(sim)
        } else {
            Verdict::fail("run did not complete")
        },
    ));
    out
}
