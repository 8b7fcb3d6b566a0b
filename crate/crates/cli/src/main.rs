//! `d2d` — generate graph corpora, run simulations, verify recorded runs,
//! and sweep benchmarks.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use d2d::engine::{decompose_round, draw_agent_ids, Placement, SimState};
use d2d::graph::{generate, GraphFamily, GraphFamilySpec, PortLabeledGraph};
use d2d::runner::{execute, judge, RunStatus};
use d2d::verify::Verdict;

#[derive(Parser)]
#[command(name = "d2d", about = "Distance-2-Dispersion protocol simulator", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a graph file
    Gen(GenArgs),
    /// Run one simulation and verify it
    Run(RunArgs),
    /// Re-check a recorded run from its metrics (and optional trace)
    Verify(VerifyArgs),
    /// Sweep families x sizes x seeds into a CSV table
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Path,
    Cycle,
    Complete,
    Star,
    Tree,
    Random,
}

impl From<FamilyArg> for GraphFamily {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Path => GraphFamily::Path,
            FamilyArg::Cycle => GraphFamily::Cycle,
            FamilyArg::Complete => GraphFamily::Complete,
            FamilyArg::Star => GraphFamily::Star,
            FamilyArg::Tree => GraphFamily::Tree,
            FamilyArg::Random => GraphFamily::RandomConnected,
        }
    }
}


#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    family: FamilyArg,
    #[arg(long)]
    n: usize,
    /// Edge count (random family only)
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlacementMode {
    Rooted,
    Scattered,
    RandomP,
}

#[derive(Args)]
struct RunArgs {
    /// Graph file produced by `gen`
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, value_enum, default_value = "rooted")]
    placement: PlacementMode,
    /// Number of occupied start nodes for random-p (default ceil(n/2))
    #[arg(long)]
    p: Option<usize>,
    /// Explicit placement file: one `node: id id ...` line per group
    #[arg(long)]
    placement_file: Option<PathBuf>,
    /// Seed for agent ids and placement (falls back to $D2D_SEED, then 0)
    #[arg(long)]
    seed: Option<u64>,
    /// Agent id range exponent: ids are drawn from [1, n^c]
    #[arg(long, default_value_t = 2)]
    c: u32,
    #[arg(long)]
    max_rounds: Option<u64>,
    /// Write the event trace to this file
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the metrics document here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    metrics: PathBuf,
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated families
    #[arg(long, value_delimiter = ',', default_values_t = vec!["path".to_string(), "cycle".to_string(), "star".to_string(), "complete".to_string(), "random".to_string()])]
    families: Vec<String>,
    /// Comma-separated node counts
    #[arg(long, value_delimiter = ',', default_values_t = vec![8, 16, 32])]
    sizes: Vec<usize>,
    /// Number of seeds per point
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    /// Edges per node for the random family
    #[arg(long, default_value_t = 2.0)]
    m_per_n: f64,
    #[arg(long, value_enum, default_value = "random-p")]
    placement: PlacementMode,
    /// Write the CSV here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Gen(a) => cmd_gen(a),
        Command::Run(a) => cmd_run(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn fail(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::FAILURE
}

fn cmd_gen(a: GenArgs) -> ExitCode {
    let spec = GraphFamilySpec { family: a.family.into(), n: a.n, m: a.m, seed: a.seed };
    let g = match generate(&spec) {
        Ok(g) => g,
        Err(e) => return fail(e),
    };
    if let Err(e) = std::fs::write(&a.out, g.store()) {
        return fail(e);
    }
    ExitCode::SUCCESS
}

fn env_seed() -> u64 {
    std::env::var("D2D_SEED").ok().and_then(|s| s.parse().ok()).unwrap_or(0)
}

/// Builds the placement named on the command line, plus its metrics-file
/// encoding so `verify` can rebuild it.
fn build_placement(
    g: &PortLabeledGraph,
    mode: PlacementMode,
    p: Option<usize>,
    file: Option<&Path>,
    seed: u64,
    c: u32,
) -> Result<(Placement, String), String> {
    let n = g.node_count();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
        let placement = parse_explicit(&text)?;
        let enc = encode_explicit(&placement);
        return Ok((placement, enc));
    }
    let ids = draw_agent_ids(n, c, seed);
    Ok(match mode {
        PlacementMode::Rooted => (Placement::rooted(ids), "rooted".into()),
        PlacementMode::Scattered => (Placement::scattered(ids), "scattered".into()),
        PlacementMode::RandomP => {
            let p = p.unwrap_or(n.div_ceil(2));
            (Placement::random_p(n, p, ids, seed), format!("random-p {p}"))
        }
    })
}

fn parse_explicit(text: &str) -> Result<Placement, String> {
    let mut groups = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (node, ids) = line.split_once(':').ok_or("expected `node: id id ...`")?;
        let node: usize = node.trim().parse().map_err(|_| "bad node index")?;
        let ids: Result<Vec<u64>, _> = ids.split_whitespace().map(str::parse).collect();
        groups.push((node, ids.map_err(|_| "bad agent id")?));
    }
    groups.sort_by_key(|(v, _)| *v);
    Ok(Placement { groups })
}

fn encode_explicit(p: &Placement) -> String {
    let body: Vec<String> = p
        .groups
        .iter()
        .map(|(v, ids)| {
            let ids: Vec<String> = ids.iter().map(u64::to_string).collect();
            format!("{v}:{}", ids.join(","))
        })
        .collect();
    format!("explicit {}", body.join(";"))
}

fn decode_placement(spec: &str, g: &PortLabeledGraph, seed: u64, c: u32) -> Result<Placement, String> {
    let n = g.node_count();
    let mut it = spec.splitn(2, ' ');
    match (it.next(), it.next()) {
        (Some("rooted"), None) => Ok(Placement::rooted(draw_agent_ids(n, c, seed))),
        (Some("scattered"), None) => Ok(Placement::scattered(draw_agent_ids(n, c, seed))),
        (Some("random-p"), Some(p)) => {
            let p: usize = p.trim().parse().map_err(|_| "bad p")?;
            Ok(Placement::random_p(n, p, draw_agent_ids(n, c, seed), seed))
        }
        (Some("explicit"), Some(body)) => {
            let mut groups = Vec::new();
            for part in body.split(';') {
                let (v, ids) = part.split_once(':').ok_or("bad explicit placement")?;
                let v: usize = v.parse().map_err(|_| "bad node")?;
                let ids: Result<Vec<u64>, _> = ids.split(',').map(str::parse).collect();
                groups.push((v, ids.map_err(|_| "bad id")?));
            }
            Ok(Placement { groups })
        }
        _ => Err(format!("unknown placement spec `{spec}`")),
    }
}

/// Flat key-value metrics document; keys in fixed order so files diff
/// cleanly.
fn metrics_doc(
    m: &d2d::engine::Metrics,
    placement_enc: &str,
    c: u32,
    status: &str,
    verdicts: &[(&'static str, Verdict)],
    occupied: &[usize],
) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} {v}");
    };
    kv("n", m.n.to_string());
    kv("m", m.m.to_string());
    kv("p", m.p.to_string());
    kv("seed", m.seed.to_string());
    kv("c", c.to_string());
    kv("placement", placement_enc.to_string());
    kv("rounds", m.total_rounds.to_string());
    kv("dispersion_round", opt(m.dispersion_round));
    kv("merge_round", opt(m.merge_round));
    kv("termination_round", opt(m.termination_round));
    kv("mis_size", m.mis_size.to_string());
    kv(
        "occupied_set",
        occupied.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
    );
    kv("elected_agent", opt(m.elected_agent));
    kv("elected_prm_leader", opt(m.elected_prm_leader));
    kv("max_group_label", m.max_group_label.to_string());
    kv("rho", format!("{:.6}", m.rho));
    kv("max_agent_bits", m.max_agent_bits.to_string());
    kv("trace_hash", m.trace_hash.clone());
    kv("status", status.to_string());
    let mut all = true;
    for (name, v) in verdicts {
        all &= v.pass;
        kv(&format!("verdict_{name}"), if v.pass { "pass".into() } else { format!("{v}") });
    }
    kv("all_pass", all.to_string());
    s
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "-".into())
}

fn cmd_run(a: RunArgs) -> ExitCode {
    let text = match std::fs::read_to_string(&a.graph) {
        Ok(t) => t,
        Err(e) => return fail(e),
    };
    let g = match PortLabeledGraph::load(&text) {
        Ok(g) => g,
        Err(e) => return fail(e),
    };
    let seed = a.seed.unwrap_or_else(env_seed);
    let (placement, enc) = match build_placement(
        &g,
        a.placement,
        a.p,
        a.placement_file.as_deref(),
        seed,
        a.c,
    ) {
        Ok(x) => x,
        Err(e) => return fail(e),
    };
    let report = match execute(g, &placement, seed, a.max_rounds, a.trace.is_some()) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    let status = match &report.status {
        RunStatus::Completed => "completed".to_string(),
        RunStatus::TimedOut => "timeout".to_string(),
        RunStatus::Faulted(f) => format!("fault: {f}"),
    };
    let doc = metrics_doc(&report.metrics, &enc, a.c, &status, &report.verdicts, &report.occupied);
    if let Some(path) = &a.out {
        if let Err(e) = std::fs::write(path, &doc) {
            return fail(e);
        }
    } else {
        print!("{doc}");
    }
    if let (Some(path), Some(lines)) = (&a.trace, &report.trace) {
        let mut body = lines.join("\n");
        body.push('\n');
        if let Err(e) = std::fs::write(path, body) {
            return fail(e);
        }
    }
    if report.all_pass() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn parse_metrics(text: &str) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once(' ') {
            out.insert(k.to_string(), v.to_string());
        }
    }
    out
}

fn cmd_verify(a: VerifyArgs) -> ExitCode {
    let gtext = match std::fs::read_to_string(&a.graph) {
        Ok(t) => t,
        Err(e) => return fail(e),
    };
    let g = match PortLabeledGraph::load(&gtext) {
        Ok(g) => g,
        Err(e) => return fail(e),
    };
    let mtext = match std::fs::read_to_string(&a.metrics) {
        Ok(t) => t,
        Err(e) => return fail(e),
    };
    let kv = parse_metrics(&mtext);
    let seed: u64 = kv.get("seed").and_then(|s| s.parse().ok()).unwrap_or(0);
    let c: u32 = kv.get("c").and_then(|s| s.parse().ok()).unwrap_or(2);
    let placement_spec = kv.get("placement").cloned().unwrap_or_else(|| "rooted".into());
    let placement = match decode_placement(&placement_spec, &g, seed, c) {
        Ok(p) => p,
        Err(e) => return fail(e),
    };

    // Replay deterministically; with a trace file, stop where it stops.
    let trace_file: Option<Vec<String>> = match &a.trace {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(t) => Some(t.lines().map(str::to_string).collect()),
            Err(e) => return fail(e),
        },
        None => None,
    };
    let limit_round: Option<u64> = trace_file.as_ref().and_then(|lines| {
        lines
            .iter()
            .filter_map(|l| l.split(' ').next().and_then(|t| t.parse().ok()))
            .max()
    });

    let mut sim = match SimState::init(g, &placement, seed, true) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    let cap = d2d::engine::default_max_rounds(sim.graph.node_count(), sim.graph.edge_count());
    let mut completed = false;
    loop {
        if sim.all_terminated() {
            completed = true;
            break;
        }
        if let Some(limit) = limit_round {
            if sim.round() > limit {
                break;
            }
        }
        if sim.round() > cap {
            break;
        }
        if let Err(e) = sim.step_round() {
            return fail(e);
        }
    }

    let mut all = true;
    let mut check = |name: &str, v: Verdict| {
        all &= v.pass;
        println!("{name}: {v}");
    };

    if let Some(lines) = &trace_file {
        let replayed = sim.trace_lines().unwrap_or(&[]);
        let prefix_ok = lines.len() <= replayed.len()
            && lines.iter().zip(replayed.iter()).all(|(a, b)| a == b);
        check(
            "trace_prefix",
            if prefix_ok {
                Verdict::pass()
            } else {
                let at = lines
                    .iter()
                    .zip(replayed.iter())
                    .position(|(a, b)| a != b)
                    .unwrap_or(replayed.len().min(lines.len()));
                Verdict::fail(format!("trace diverges from replay at line {at}"))
            },
        );
    } else if let Some(recorded) = kv.get("trace_hash") {
        let actual = sim.metrics().trace_hash;
        check(
            "trace_hash",
            if completed && recorded == &actual {
                Verdict::pass()
            } else {
                Verdict::fail(format!("recorded {recorded}, replay produced {actual}"))
            },
        );
    }

    let metrics = sim.metrics();
    for (name, v) in judge(&sim, &metrics, completed) {
        check(name, v);
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn cmd_bench(a: BenchArgs) -> ExitCode {
    let mut csv = String::from(
        "family,n,m,p,seed,rounds,dispersion_round,merge_round,rho,max_agent_bits\n",
    );
    let mut max_rho = 0f64;
    let mut max_bits = 0u32;
    for fam_name in &a.families {
        let family: GraphFamily = match fam_name.parse() {
            Ok(f) => f,
            Err(e) => return fail(e),
        };
        for &n in &a.sizes {
            for seed in 0..a.seeds {
                let m = match family {
                    GraphFamily::RandomConnected => {
                        let want = (n as f64 * a.m_per_n) as usize;
                        Some(want.clamp(n - 1, n * (n - 1) / 2))
                    }
                    _ => None,
                };
                let spec = GraphFamilySpec { family, n, m, seed };
                let g = match generate(&spec) {
                    Ok(g) => g,
                    Err(e) => return fail(e),
                };
                let ids = draw_agent_ids(n, 2, seed);
                let placement = match a.placement {
                    PlacementMode::Rooted => Placement::rooted(ids),
                    PlacementMode::Scattered => Placement::scattered(ids),
                    PlacementMode::RandomP => {
                        Placement::random_p(n, n.div_ceil(2), ids, seed)
                    }
                };
                let report = match execute(g, &placement, seed, None, false) {
                    Ok(r) => r,
                    Err(e) => return fail(e),
                };
                let m = &report.metrics;
                let row = format!(
                    "{},{},{},{},{},{},{},{},{:.6},{}",
                    fam_name,
                    m.n,
                    m.m,
                    m.p,
                    m.seed,
                    m.total_rounds,
                    opt(m.dispersion_round),
                    opt(m.merge_round),
                    m.rho,
                    m.max_agent_bits
                );
                if !report.all_pass() {
                    let failing: Vec<String> = report
                        .verdicts
                        .iter()
                        .filter(|(_, v)| !v.pass)
                        .map(|(n, v)| format!("{n}: {v}"))
                        .collect();
                    eprintln!("verification failed on row: {row}");
                    eprintln!("{}", failing.join("\n"));
                    return ExitCode::FAILURE;
                }
                max_rho = max_rho.max(m.rho);
                max_bits = max_bits.max(m.max_agent_bits);
                csv.push_str(&row);
                csv.push('\n');
            }
        }
    }
    let _ = writeln!(csv, "# max_rho {max_rho:.6}");
    let _ = writeln!(csv, "# max_agent_bits {max_bits}");
    if let Some(path) = &a.out {
        if let Err(e) = std::fs::write(path, &csv) {
            return fail(e);
        }
    } else {
        print!("{csv}");
    }
    let _ = decompose_round(1);
    ExitCode::SUCCESS
}
