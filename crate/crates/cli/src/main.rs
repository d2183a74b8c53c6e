//! Command-line front end: discovery runs, oracle computation, CNF export,
//! structural queries against saved runs, small-scale verification against
//! exhaustive enumeration, and the simulation harnesses.
//!
//! Exit codes: 0 success, 1 usage/parse/IO error, 2 contradictory input
//! (unsatisfiable encoding).

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dsepsat::bruteforce;
use dsepsat::discovery::{
    run, Assumptions, BackendSpec, DiscoveryConfig, DiscoveryError, DiscoveryEngine,
    OracleSource,
};
use dsepsat::encoder::{Encoder, SavedEngine};
use dsepsat::experiments as harness;
use dsepsat::graph::{oracle_relations, random_experiments, random_graph, Experiment};
use dsepsat::text;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

#[derive(Parser)]
#[command(
    name = "dsepsat",
    about = "Causal structure discovery from d-separation constraints via SAT backbones",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Determine every edge and ancestral status from relations or a graph
    Discover(DiscoverArgs),
    /// Emit all observable relations of a ground-truth graph
    Oracle(OracleArgs),
    /// Compile relations and restrictions to DIMACS CNF
    Encode(EncodeArgs),
    /// Classify a structural query against a saved run
    Query(QueryArgs),
    /// Cross-check discovery against exhaustive enumeration at small n
    Verify(VerifyArgs),
    /// Simulation harnesses producing tab-separated tables
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct DiscoverArgs {
    /// Relation list file (`-` for stdin); used when no --graph is given
    #[arg(long)]
    relations: Option<String>,
    /// Node universe for relation-list input, e.g. --nodes "x y z"
    #[arg(long)]
    nodes: Option<String>,
    /// Ground-truth graph file: answers come from its d-separation oracle
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Experiment list file (with --graph)
    #[arg(long)]
    experiments: Option<PathBuf>,
    /// One passive experiment over all graph nodes (with --graph)
    #[arg(long)]
    passive: bool,
    /// Largest conditioning-set size to test
    #[arg(long)]
    max_c: Option<usize>,
    /// Model-space assumption: acyclic or no-latents (repeatable)
    #[arg(long = "assume")]
    assume: Vec<String>,
    /// Background knowledge file
    #[arg(long)]
    know: Option<PathBuf>,
    /// Also determine ancestral (directed-path) statuses
    #[arg(long)]
    ancestral: bool,
    /// Solver backend: embedded or external:PATH
    #[arg(long, default_value = "embedded")]
    backend: String,
    /// Save the final formula state for later `query` calls
    #[arg(long)]
    save_formula: Option<PathBuf>,
    /// Write output here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Accepted for interface uniformity; discovery itself is deterministic
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    experiments: Option<PathBuf>,
    /// One passive experiment over all graph nodes
    #[arg(long)]
    passive: bool,
    /// Cap on conditioning-set size (default: unrestricted)
    #[arg(long)]
    max_c: Option<usize>,
    /// Drop tests whose conditioning and intervention sets overlap
    #[arg(long)]
    skip_cj_overlap: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EncodeArgs {
    /// Relation list file (`-` for stdin)
    #[arg(long)]
    relations: Option<String>,
    #[arg(long)]
    nodes: Option<String>,
    #[arg(long = "assume")]
    assume: Vec<String>,
    #[arg(long)]
    know: Option<PathBuf>,
    /// Add `c var ...` comments mapping semantic variables
    #[arg(long)]
    annotate: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct QueryArgs {
    /// Saved formula state from `discover --save-formula`
    #[arg(long)]
    formula: PathBuf,
    /// Query expression, e.g. "exactly { x -> y }" or "anc x z and edge x -> y"
    #[arg(long)]
    expr: String,
    #[arg(long, default_value = "embedded")]
    backend: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Node count (2..=4)
    #[arg(long, default_value_t = 3)]
    n: usize,
    /// Random instances to check
    #[arg(long, default_value_t = 25)]
    instances: usize,
    /// Additionally check every graph at this n with one passive experiment
    #[arg(long)]
    exhaustive: bool,
    #[arg(long = "assume")]
    assume: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(subcommand)]
    what: SimulateKind,
}

#[derive(Subcommand)]
enum SimulateKind {
    /// Median runtime per node count
    Scaling {
        #[arg(long, default_value_t = 5)]
        n_min: usize,
        #[arg(long, default_value_t = 8)]
        n_max: usize,
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long)]
        max_c: Option<usize>,
        #[arg(long)]
        timeout_sec: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Identified proportions per category as the conditioning cap grows
    Identifiability {
        #[arg(long, default_value_t = 6)]
        n: usize,
        #[arg(long, default_value_t = 30)]
        instances: usize,
        #[arg(long)]
        timeout_sec: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Identification under model-space assumptions per ground-truth class
    Assumptions {
        #[arg(long, default_value_t = 5)]
        n: usize,
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long)]
        timeout_sec: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" with successful exit
            if e.use_stderr() {
                eprint!("{e}");
                std::process::exit(1);
            }
            print!("{e}");
            std::process::exit(0);
        }
    };
    let code = match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    };
    std::process::exit(code);
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Discover(args) => cmd_discover(args),
        Command::Oracle(args) => cmd_oracle(args).map(|()| 0),
        Command::Encode(args) => cmd_encode(args).map(|()| 0),
        Command::Query(args) => cmd_query(args).map(|()| 0),
        Command::Verify(args) => cmd_verify(args),
        Command::Simulate(args) => cmd_simulate(args).map(|()| 0),
    }
}

fn read_input(path: &str) -> Result<String> {
    if path == "-" {
        let mut buf = String::new();
        std::io::stdin().read_to_string(&mut buf).context("reading stdin")?;
        Ok(buf)
    } else {
        std::fs::read_to_string(path).with_context(|| format!("reading {path}"))
    }
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_output(out: &Option<PathBuf>, content: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, content)
            .with_context(|| format!("writing {}", path.display())),
        None => {
            std::io::stdout().write_all(content.as_bytes()).context("writing stdout")
        }
    }
}

fn parse_backend(s: &str) -> Result<BackendSpec> {
    if s == "embedded" {
        Ok(BackendSpec::Embedded)
    } else if let Some(path) = s.strip_prefix("external:") {
        Ok(BackendSpec::External(PathBuf::from(path)))
    } else {
        bail!("unknown backend `{s}` (use embedded or external:PATH)")
    }
}

fn parse_assume(flags: &[String]) -> Result<Assumptions> {
    let mut a = Assumptions::default();
    for f in flags {
        match f.as_str() {
            "acyclic" => a.acyclic = true,
            "no-latents" => a.no_latents = true,
            other => bail!("unknown assumption `{other}` (use acyclic or no-latents)"),
        }
    }
    Ok(a)
}

fn split_nodes(s: &str) -> Vec<String> {
    s.split_whitespace().map(|t| t.to_string()).collect()
}

fn load_oracle(args: &DiscoverArgs) -> Result<OracleSource> {
    if let Some(graph_path) = &args.graph {
        let graph = text::parse_graph(&read_file(graph_path)?)
            .map_err(|e| anyhow!("{}: {e}", graph_path.display()))?;
        let experiments = match (&args.experiments, args.passive) {
            (Some(path), false) => text::parse_experiments(&read_file(path)?, graph.names())
                .map_err(|e| anyhow!("{}: {e}", path.display()))?,
            (None, true) => vec![Experiment::passive(graph.all_nodes())],
            (Some(_), true) => bail!("give either --experiments or --passive, not both"),
            (None, false) => bail!("--graph needs --experiments FILE or --passive"),
        };
        Ok(OracleSource::GraphOracle { graph, experiments })
    } else {
        let path = args.relations.clone().unwrap_or_else(|| "-".into());
        let body = read_input(&path)?;
        let universe = args.nodes.as_deref().map(split_nodes);
        let (names, relations) =
            text::parse_relations(&body, universe).map_err(|e| anyhow!("{path}: {e}"))?;
        Ok(OracleSource::FixedRelations { names, relations })
    }
}

fn cmd_discover(args: DiscoverArgs) -> Result<i32> {
    let oracle = load_oracle(&args)?;
    let mut assumptions = parse_assume(&args.assume)?;
    let mut background = Vec::new();
    if let Some(know_path) = &args.know {
        let names = oracle.names().to_vec();
        let (known_assumptions, constraints) =
            text::parse_knowledge(&read_file(know_path)?, &names)
                .map_err(|e| anyhow!("{}: {e}", know_path.display()))?;
        assumptions.acyclic |= known_assumptions.acyclic;
        assumptions.no_latents |= known_assumptions.no_latents;
        background = constraints;
    }
    let cfg = DiscoveryConfig {
        max_c: args.max_c,
        assumptions,
        background,
        track_ancestral: args.ancestral,
        backend: parse_backend(&args.backend)?,
        time_budget: None,
    };
    let output = match run(&oracle, &cfg) {
        Ok(output) => output,
        Err(DiscoveryError::Contradiction(report)) => {
            eprintln!("unsatisfiable: {report}");
            write_output(&args.out, &format!("# unsatisfiable: {report}\n"))?;
            return Ok(2);
        }
        Err(e) => return Err(e.into()),
    };
    let names = oracle.names().to_vec();
    let mut body = text::print_solution(&names, &output.solution);
    let (determined, total) = output.solution.determined_counts();
    let s = output.stats;
    body.push_str(&format!("# determined {determined}/{total}\n"));
    body.push_str(&format!(
        "# tests: {} considered, {} pruned, {} dropped, {} skipped, {} encoded\n",
        s.tests_considered,
        s.tests_pruned,
        s.tests_dropped,
        s.tests_skipped,
        s.relations_encoded
    ));
    body.push_str(&format!(
        "# sat: {} sweeps, {} solves, {} conflicts, {} decisions, {} propagations\n",
        s.backbone_sweeps,
        s.solver.solves,
        s.solver.conflicts,
        s.solver.decisions,
        s.solver.propagations
    ));
    write_output(&args.out, &body)?;
    if let Some(path) = &args.save_formula {
        let saved = output.engine.save();
        let json = serde_json::to_string(&saved).context("serializing formula state")?;
        std::fs::write(path, json)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(0)
}

fn cmd_oracle(args: OracleArgs) -> Result<()> {
    let graph = text::parse_graph(&read_file(&args.graph)?)
        .map_err(|e| anyhow!("{}: {e}", args.graph.display()))?;
    let experiments = match (&args.experiments, args.passive) {
        (Some(path), false) => text::parse_experiments(&read_file(path)?, graph.names())
            .map_err(|e| anyhow!("{}: {e}", path.display()))?,
        (None, true) => vec![Experiment::passive(graph.all_nodes())],
        (Some(_), true) => bail!("give either --experiments or --passive, not both"),
        (None, false) => bail!("need --experiments FILE or --passive"),
    };
    let mut relations = oracle_relations(&graph, &experiments, args.max_c)?;
    if args.skip_cj_overlap {
        relations.retain(|r| !r.spec.cj_overlap());
    }
    let body = text::print_relations(graph.names(), &relations, true);
    write_output(&args.out, &body)
}

fn cmd_encode(args: EncodeArgs) -> Result<()> {
    let path = args.relations.clone().unwrap_or_else(|| "-".into());
    let body = read_input(&path)?;
    let universe = args.nodes.as_deref().map(split_nodes);
    let (names, relations) =
        text::parse_relations(&body, universe).map_err(|e| anyhow!("{path}: {e}"))?;
    let mut assumptions = parse_assume(&args.assume)?;
    let mut background = Vec::new();
    if let Some(know_path) = &args.know {
        let (known_assumptions, constraints) =
            text::parse_knowledge(&read_file(know_path)?, &names)
                .map_err(|e| anyhow!("{}: {e}", know_path.display()))?;
        assumptions.acyclic |= known_assumptions.acyclic;
        assumptions.no_latents |= known_assumptions.no_latents;
        background = constraints;
    }
    let mut enc = Encoder::new(names.clone());
    if assumptions.no_latents {
        enc.constrain_sufficiency();
    }
    if assumptions.acyclic {
        enc.constrain_acyclicity()?;
    }
    for k in &background {
        enc.add_background(k)?;
    }
    for r in &relations {
        enc.assert_relation(r)?;
    }
    let mut out = Vec::new();
    if args.annotate {
        use dsepsat::cnf::VarKey;
        for (key, var) in enc.table.entries() {
            match key {
                VarKey::DirEdge(x, y) => out.extend(
                    format!("c var {} = edge {} -> {}\n", var.0, names[x.index()], names[y.index()])
                        .bytes(),
                ),
                VarKey::BiEdge(x, y) => out.extend(
                    format!(
                        "c var {} = edge {} <-> {}\n",
                        var.0,
                        names[x.index()],
                        names[y.index()]
                    )
                    .bytes(),
                ),
                _ => {}
            }
        }
    }
    enc.formula.write_dimacs(&mut out).context("rendering DIMACS")?;
    let text = String::from_utf8(out).expect("dimacs output is ascii");
    write_output(&args.out, &text)
}

fn cmd_query(args: QueryArgs) -> Result<()> {
    let json = read_file(&args.formula)?;
    let saved: SavedEngine =
        serde_json::from_str(&json).context("parsing saved formula state")?;
    let names = saved.names.clone();
    let mut engine = DiscoveryEngine::load(saved, parse_backend(&args.backend)?)?;
    let query = text::parse_query(&args.expr, &names).map_err(|e| anyhow!("query: {e}"))?;
    let verdict = engine.query(&query)?;
    write_output(&args.out, &format!("{}\n", verdict.as_str()))
}

fn cmd_verify(args: VerifyArgs) -> Result<i32> {
    if !(2..=4).contains(&args.n) {
        bail!("exhaustive verification supports n in 2..=4");
    }
    let assumptions = parse_assume(&args.assume)?;
    let mut report = String::new();
    let mut failures = 0usize;
    let mut checked = 0usize;
    let mut skipped = 0usize;

    let check = |g: &dsepsat::graph::MixedGraph,
                     exps: &[Experiment],
                     label: &str,
                     report: &mut String|
     -> Result<bool> {
        let relations = oracle_relations(g, exps, None)?;
        let expected = bruteforce::consensus(&relations, g.n_nodes(), assumptions, true)
            .map_err(|e| anyhow!("consensus: {e}"))?;
        let oracle = OracleSource::GraphOracle {
            graph: g.clone(),
            experiments: exps.to_vec(),
        };
        let cfg = DiscoveryConfig {
            assumptions,
            track_ancestral: true,
            ..Default::default()
        };
        let out = run(&oracle, &cfg)?;
        if out.solution == expected {
            Ok(true)
        } else {
            report.push_str(&format!("FAIL {label}\n"));
            Ok(false)
        }
    };

    if args.exhaustive {
        for (i, g) in bruteforce::enumerate_graphs(args.n)
            .map_err(|e| anyhow!("{e}"))?
            .enumerate()
        {
            if !assumptions.satisfied_by(&g) {
                skipped += 1;
                continue;
            }
            let exps = vec![Experiment::passive(g.all_nodes())];
            checked += 1;
            if !check(&g, &exps, &format!("exhaustive graph {i}"), &mut report)? {
                failures += 1;
            }
        }
    }
    for i in 0..args.instances {
        let mut rng =
            ChaCha8Rng::seed_from_u64(harness::derive_seed(args.seed, args.n as u64, i as u64));
        let g = random_graph(args.n, 0.25, &mut rng);
        if !assumptions.satisfied_by(&g) {
            skipped += 1;
            continue;
        }
        let exps = random_experiments(args.n, 4, &mut rng);
        checked += 1;
        if !check(&g, &exps, &format!("random instance {i}"), &mut report)? {
            failures += 1;
        }
    }
    report.push_str(&format!(
        "checked {checked} instances at n={}: {} ({} skipped by assumptions)\n",
        args.n,
        if failures == 0 { "all match the exhaustive consensus".to_string() } else { format!("{failures} mismatches") },
        skipped
    ));
    write_output(&args.out, &report)?;
    Ok(if failures == 0 { 0 } else { 1 })
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    match args.what {
        SimulateKind::Scaling { n_min, n_max, instances, max_c, timeout_sec, seed, out } => {
            let rows = harness::run_scaling(
                n_min..=n_max,
                instances,
                max_c,
                seed,
                timeout_sec.map(Duration::from_secs),
            )
            .map_err(|e| anyhow!("{e}"))?;
            write_output(&out, &harness::scaling_tsv(&rows))
        }
        SimulateKind::Identifiability { n, instances, timeout_sec, seed, out } => {
            let rows = harness::run_identifiability(
                n,
                instances,
                seed,
                timeout_sec.map(Duration::from_secs),
            )
            .map_err(|e| anyhow!("{e}"))?;
            write_output(&out, &harness::identifiability_tsv(&rows))
        }
        SimulateKind::Assumptions { n, instances, timeout_sec, seed, out } => {
            let rows = harness::run_assumption_comparison(
                n,
                instances,
                seed,
                timeout_sec.map(Duration::from_secs),
            )
            .map_err(|e| anyhow!("{e}"))?;
            write_output(&out, &harness::assumptions_tsv(&rows))
        }
    }
}
