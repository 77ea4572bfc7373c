//! `krselect`: transport distances between weighted point files, trend
//! statistics for genotype tables, classifier-complexity descriptors, and
//! coordinate-subset selection, all reported as deterministic JSON.

mod inputs;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{Map, Value};

use krselect_core::classify::{complexity_descriptor, ClassifyError};
use krselect_core::ingest::{
    parse_gen, parse_labeled_csv, parse_phenotype, to_selection_problem, GenotypeEncoding,
    IngestError,
};
use krselect_core::kr_closed::{
    masses_match, w1_auto, w1_circle, w1_discrete, w1_line, ClosedFormError,
};
use krselect_core::kr_exact::{
    shared_instance, solve_transport, verify_optimality, TransportError,
};
use krselect_core::measures::union_support;
use krselect_core::metrics::{parse_metric_json, Combine, MetricDescriptor};
use krselect_core::select::{CriterionMode, SelectError, SelectionProblem, Selector};
use krselect_core::trend::{
    catt, class_measures, cochran_decompose, generalized_stats, kr_chi2_bounds, parse_snp_tables,
    pearson_chi2, ContingencyTable, TrendError, ADDITIVE_SCORES, DOMINANT_SCORES,
    RECESSIVE_SCORES,
};

use inputs::{complete_cases, load, parse_encoding, parse_measure_csv};
use report::{num, Report};

/// A failed run, classified for the exit-code contract: input problems exit
/// with 2, numeric ones with 1.
pub enum Failure {
    Input(String),
    Numeric(String),
}

#[derive(Parser)]
#[command(
    name = "krselect",
    version,
    about = "Transport-distance statistics and coordinate selection for case-control samples"
)]
struct Cli {
    /// Numeric tolerance for cross-checks such as --certify.
    #[arg(long, global = true, default_value_t = 1e-9)]
    tol: f64,
    /// Print a flat text summary instead of JSON.
    #[arg(long, global = true)]
    human: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Transport distance between two weighted point files.
    W1(W1Args),
    /// Trend statistics for 2 x 3 genotype count tables.
    Trend(TrendArgs),
    /// Class-separation descriptor of a labeled sample.
    Complexity(ComplexityArgs),
    /// Search for the coordinate subset separating the classes best.
    Select(SelectArgs),
}

#[derive(Args)]
struct W1Args {
    /// Measure CSV with header `w,c1,...,cr`.
    measure1: PathBuf,
    /// Second measure CSV on the same coordinate space.
    measure2: PathBuf,
    /// Metric config JSON, e.g. `{"coords":[{"type":"line"}]}`.
    #[arg(long)]
    metric: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::Auto)]
    method: MethodArg,
    /// Also solve the transportation problem and print the optimality
    /// certificate.
    #[arg(long)]
    certify: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    /// Pick the fastest method the metric admits.
    Auto,
    /// Scaled total variation; needs a single discrete coordinate.
    Tv,
    /// Line closed form; needs a single line coordinate.
    Line,
    /// Circle closed form; needs a single circle coordinate.
    Circle,
    /// Exact transportation solve on the joint support.
    Lp,
    /// Sum of per-coordinate distances; needs an l1 product metric and
    /// product measures.
    Product,
}

#[derive(Args)]
struct TrendArgs {
    /// Table file: one `r0 r1 r2 s0 s1 s2` count line per SNP.
    tables: PathBuf,
    /// Score preset (`additive`, `dominant`, `recessive`) or custom
    /// `c0,c1,c2`.
    #[arg(long, default_value = "additive")]
    scores: String,
    /// Distance between distinct genotype categories in the transport
    /// bounds.
    #[arg(long, default_value_t = 1.0)]
    k: f64,
}

/// Sample source shared by `complexity` and `select`: either a labeled CSV
/// with a metric config, or a genotype file with a phenotype file.
#[derive(Args)]
struct SampleInput {
    /// Labeled sample CSV (`label,c1,...,cr`); needs --metric.
    sample: Option<PathBuf>,
    /// Metric config JSON for the CSV sample.
    #[arg(long)]
    metric: Option<PathBuf>,
    /// Genotype file; needs --phenotype.
    #[arg(long, conflicts_with = "sample", requires = "phenotype")]
    gen: Option<PathBuf>,
    /// Phenotype file with one -1/+1 label per individual.
    #[arg(long, requires = "gen")]
    phenotype: Option<PathBuf>,
    /// Genotype coordinate geometry: `discrete`, `discrete:<k>`, or `line`.
    #[arg(long, default_value = "discrete:1")]
    encoding: String,
    /// Genotype calling threshold.
    #[arg(long, default_value_t = 0.9)]
    threshold: f64,
}

#[derive(Args)]
struct ComplexityArgs {
    #[command(flatten)]
    input: SampleInput,
    /// Margin fraction of the diameter used by the risk bound; in [0, 1).
    #[arg(long, default_value_t = 0.0)]
    rho: f64,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    input: SampleInput,
    /// Target subset size.
    #[arg(long)]
    k: usize,
    #[arg(long, value_enum, default_value_t = StrategyArg::Bb)]
    strategy: StrategyArg,
    /// Criterion: transport on the joint projection, or the sum of
    /// per-coordinate distances.
    #[arg(long, value_enum, default_value_t = ModeArg::Joint)]
    mode: ModeArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    /// Branch and bound over the subset-removal tree (optimal).
    Bb,
    /// Greedy forward selection.
    Forward,
    /// Greedy backward elimination.
    Backward,
    /// Enumerate every subset (optimal, small problems only).
    Exhaustive,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Joint,
    Product,
}

fn main() -> ExitCode {
    let started = Instant::now();
    let cli = Cli::parse();
    let argv: Vec<String> = std::env::args().collect();
    let outcome = run(&cli, &argv);
    eprintln!(
        "wall_time_ms {:.3}",
        started.elapsed().as_secs_f64() * 1e3
    );
    match outcome {
        Ok(rendered) => {
            print!("{rendered}");
            ExitCode::SUCCESS
        }
        Err(Failure::Input(message)) => {
            eprintln!("input error: {message}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(message)) => {
            eprintln!("numeric error: {message}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli, argv: &[String]) -> Result<String, Failure> {
    let report = match &cli.command {
        Command::W1(args) => cmd_w1(args, cli.tol, argv)?,
        Command::Trend(args) => cmd_trend(args, argv)?,
        Command::Complexity(args) => cmd_complexity(args, argv)?,
        Command::Select(args) => cmd_select(args, argv)?,
    };
    Ok(if cli.human {
        report.render_human()
    } else {
        report.render_json()
    })
}

fn input_error(e: impl std::fmt::Display) -> Failure {
    Failure::Input(e.to_string())
}

fn transport_failure(e: TransportError) -> Failure {
    match e {
        TransportError::NoConvergence(_) => Failure::Numeric(e.to_string()),
        other => Failure::Input(other.to_string()),
    }
}

fn closed_form_failure(e: ClosedFormError) -> Failure {
    match e {
        ClosedFormError::Transport(inner) => transport_failure(inner),
        other => Failure::Input(other.to_string()),
    }
}

fn classify_failure(e: ClassifyError) -> Failure {
    match e {
        ClassifyError::Transport(inner) => transport_failure(inner),
        other => Failure::Input(other.to_string()),
    }
}

fn select_failure(e: SelectError) -> Failure {
    match e {
        SelectError::ClosedForm(inner) => closed_form_failure(inner),
        other => Failure::Input(other.to_string()),
    }
}

fn ingest_failure(e: IngestError) -> Failure {
    match e {
        IngestError::Select(inner) => select_failure(inner),
        other => Failure::Input(other.to_string()),
    }
}

/// The sole coordinate of a one-coordinate product, or the descriptor
/// itself when it is not a product.
fn single_coord(metric: &MetricDescriptor) -> Option<&MetricDescriptor> {
    match metric {
        MetricDescriptor::Product { coords, .. } if coords.len() == 1 => Some(&coords[0]),
        MetricDescriptor::Product { .. } => None,
        other => Some(other),
    }
}

fn cmd_w1(args: &W1Args, tol: f64, argv: &[String]) -> Result<Report, Failure> {
    let mut report = Report::new("w1", argv);
    let text1 = load(&args.measure1)?;
    let text2 = load(&args.measure2)?;
    let metric_text = load(&args.metric)?;
    report.digest("measure1", text1.as_bytes());
    report.digest("measure2", text2.as_bytes());
    report.digest("metric", metric_text.as_bytes());
    let m1 = parse_measure_csv(&text1)?;
    let m2 = parse_measure_csv(&text2)?;
    let metric = parse_metric_json(&metric_text).map_err(input_error)?;
    if !masses_match(&m1, &m2) {
        return Err(Failure::Input(format!(
            "total masses {} and {} differ beyond tolerance",
            m1.total_mass(),
            m2.total_mass()
        )));
    }

    let shared =
        || union_support(&m1, &m2).map_err(input_error);
    let (value, method) = match args.method {
        MethodArg::Auto => {
            let r = w1_auto(&m1, &m2, &metric, false).map_err(closed_form_failure)?;
            (r.value, r.method.name())
        }
        MethodArg::Tv => {
            let k = match single_coord(&metric) {
                Some(MetricDescriptor::Discrete { k }) => *k,
                _ => {
                    return Err(Failure::Input(
                        "--method tv needs a single discrete coordinate".to_string(),
                    ))
                }
            };
            let (a, b) = shared()?;
            (w1_discrete(&a, &b, k).map_err(closed_form_failure)?, "tv")
        }
        MethodArg::Line => {
            if !matches!(single_coord(&metric), Some(MetricDescriptor::Line)) {
                return Err(Failure::Input(
                    "--method line needs a single line coordinate".to_string(),
                ));
            }
            let (a, b) = shared()?;
            (w1_line(&a, &b).map_err(closed_form_failure)?, "line")
        }
        MethodArg::Circle => {
            let circumference = match single_coord(&metric) {
                Some(MetricDescriptor::Circle { circumference }) => *circumference,
                _ => {
                    return Err(Failure::Input(
                        "--method circle needs a single circle coordinate".to_string(),
                    ))
                }
            };
            let (a, b) = shared()?;
            (
                w1_circle(&a, &b, circumference).map_err(closed_form_failure)?,
                "circle",
            )
        }
        MethodArg::Lp => {
            let inst = shared_instance(&m1, &m2, &metric).map_err(transport_failure)?;
            let sol = solve_transport(&inst.m1, &inst.m2, &inst.cost).map_err(transport_failure)?;
            (sol.cost, "lp")
        }
        MethodArg::Product => {
            if !matches!(
                metric,
                MetricDescriptor::Product {
                    combine: Combine::L1,
                    ..
                }
            ) {
                return Err(Failure::Input(
                    "--method product needs an l1 product metric".to_string(),
                ));
            }
            let r = w1_auto(&m1, &m2, &metric, true).map_err(closed_form_failure)?;
            (r.value, "product")
        }
    };

    let mut results = Map::new();
    results.insert("method".to_string(), Value::String(method.to_string()));
    results.insert("w1".to_string(), num(value));
    if args.certify {
        let inst = shared_instance(&m1, &m2, &metric).map_err(transport_failure)?;
        let sol = solve_transport(&inst.m1, &inst.m2, &inst.cost).map_err(transport_failure)?;
        let cert = verify_optimality(&sol, &inst.cost, &inst.m1, &inst.m2);
        if !cert.ok {
            return Err(Failure::Numeric(format!(
                "optimality certificate failed: duality gap {}, marginal violation {}",
                cert.duality_gap, cert.max_marginal_violation
            )));
        }
        let gap = (value - sol.cost).abs();
        if gap > tol * sol.cost.abs().max(1.0) {
            return Err(Failure::Numeric(format!(
                "method {method} disagrees with the solver: |{value} - {}| = {gap}",
                sol.cost
            )));
        }
        let mut cert_map = Map::new();
        cert_map.insert("duality_gap".to_string(), num(cert.duality_gap));
        cert_map.insert("lp_cost".to_string(), num(sol.cost));
        cert_map.insert("max_arc_violation".to_string(), num(cert.max_arc_violation));
        cert_map.insert(
            "max_lipschitz_violation".to_string(),
            num(cert.max_lipschitz_violation),
        );
        cert_map.insert(
            "max_marginal_violation".to_string(),
            num(cert.max_marginal_violation),
        );
        cert_map.insert("ok".to_string(), Value::Bool(cert.ok));
        results.insert("certificate".to_string(), Value::Object(cert_map));
    }
    report.set_results(Value::Object(results));
    Ok(report)
}

fn parse_scores(spec: &str) -> Result<Vec<f64>, Failure> {
    match spec {
        "additive" => Ok(ADDITIVE_SCORES.to_vec()),
        "dominant" => Ok(DOMINANT_SCORES.to_vec()),
        "recessive" => Ok(RECESSIVE_SCORES.to_vec()),
        other => {
            let list = other.strip_prefix("custom:").unwrap_or(other);
            let parsed: Result<Vec<f64>, _> =
                list.split(',').map(|t| t.trim().parse::<f64>()).collect();
            match parsed {
                Ok(values) if values.len() == 3 && values.iter().all(|v| v.is_finite()) => {
                    Ok(values)
                }
                _ => Err(Failure::Input(format!(
                    "--scores must be `additive`, `dominant`, `recessive`, or `c0,c1,c2`, \
                     found `{other}`"
                ))),
            }
        }
    }
}

fn cmd_trend(args: &TrendArgs, argv: &[String]) -> Result<Report, Failure> {
    let mut report = Report::new("trend", argv);
    let text = load(&args.tables)?;
    report.digest("tables", text.as_bytes());
    let scores = parse_scores(&args.scores)?;
    if !args.k.is_finite() || args.k <= 0.0 {
        return Err(Failure::Input(format!(
            "--k must be positive and finite, found {}",
            args.k
        )));
    }
    let tables = parse_snp_tables(&text).map_err(input_error)?;
    if tables.is_empty() {
        return Err(Failure::Input("table file has no SNP lines".to_string()));
    }
    let mut entries = Vec::with_capacity(tables.len());
    for (snp, (cases, controls)) in tables.iter().enumerate() {
        let entry = match trend_entry(cases, controls, &scores, args.k) {
            Ok(mut map) => {
                map.insert("snp".to_string(), Value::from(snp as u64));
                Value::Object(map)
            }
            Err(e) => {
                report.warn(format!("snp {snp}: {e}"));
                let mut map = Map::new();
                map.insert("error".to_string(), Value::String(e.to_string()));
                map.insert("snp".to_string(), Value::from(snp as u64));
                Value::Object(map)
            }
        };
        entries.push(entry);
    }
    let mut results = Map::new();
    results.insert("snps".to_string(), Value::Array(entries));
    report.set_results(Value::Object(results));
    Ok(report)
}

/// Full statistics block of one table. Categories without observations are
/// dropped by the table, so the score vector is filtered the same way.
fn trend_entry(
    cases: &[u64; 3],
    controls: &[u64; 3],
    scores: &[f64],
    k: f64,
) -> Result<Map<String, Value>, TrendError> {
    let table = ContingencyTable::new(cases, controls)?;
    let kept: Vec<f64> = scores
        .iter()
        .zip(cases.iter().zip(controls))
        .filter(|(_, (&r, &s))| r + s > 0)
        .map(|(&c, _)| c)
        .collect();
    let pearson = pearson_chi2(&table)?;
    let catt_stat = catt(&table, &kept)?;
    let (t_ca, t_fit) = cochran_decompose(&table, &kept)?;
    let (mu_r, mu_s) = class_measures(cases, controls)?;
    let (gen_ca, gen_chi2) = generalized_stats(&mu_r, &mu_s, scores)?;
    let bounds = kr_chi2_bounds(&mu_r, &mu_s, k)?;

    let mut bounds_map = Map::new();
    bounds_map.insert("lower".to_string(), num(bounds.lower));
    bounds_map.insert("stat".to_string(), num(bounds.stat));
    bounds_map.insert("upper".to_string(), num(bounds.upper));
    bounds_map.insert("w1_classes".to_string(), num(bounds.w1_classes));
    let mut generalized = Map::new();
    generalized.insert("t_ca".to_string(), num(gen_ca));
    generalized.insert("t_chi2".to_string(), num(gen_chi2));

    let mut map = Map::new();
    map.insert("bounds".to_string(), Value::Object(bounds_map));
    map.insert("catt".to_string(), num(catt_stat));
    map.insert("generalized".to_string(), Value::Object(generalized));
    map.insert("pearson".to_string(), num(pearson));
    map.insert("t_ca".to_string(), num(t_ca));
    map.insert("t_fit".to_string(), num(t_fit));
    Ok(map)
}

/// Loads points, labels, and the metric from whichever source the shared
/// input flags name.
fn load_labeled_sample(
    input: &SampleInput,
    report: &mut Report,
) -> Result<(Vec<Vec<f64>>, Vec<i8>, MetricDescriptor), Failure> {
    if let Some(sample) = &input.sample {
        let metric_path = input.metric.as_ref().ok_or_else(|| {
            Failure::Input("a CSV sample needs --metric".to_string())
        })?;
        let text = load(sample)?;
        let metric_text = load(metric_path)?;
        report.digest("sample", text.as_bytes());
        report.digest("metric", metric_text.as_bytes());
        let (points, labels) = parse_labeled_csv(&text).map_err(ingest_failure)?;
        let metric = parse_metric_json(&metric_text).map_err(input_error)?;
        return Ok((points, labels, metric));
    }
    if let Some(gen) = &input.gen {
        let phenotype_path = input.phenotype.as_ref().expect("clap enforces --phenotype");
        let gen_text = load(gen)?;
        let phenotype_text = load(phenotype_path)?;
        report.digest("gen", gen_text.as_bytes());
        report.digest("phenotype", phenotype_text.as_bytes());
        let ds = parse_gen(&gen_text, input.threshold).map_err(ingest_failure)?;
        let phenotype = parse_phenotype(&phenotype_text).map_err(ingest_failure)?;
        let coord = parse_encoding(&input.encoding)?;
        let (points, labels) = complete_cases(&ds, &phenotype)?;
        let coords = vec![coord; ds.snps()];
        let metric = MetricDescriptor::product(coords, Combine::L1).map_err(input_error)?;
        return Ok((points, labels, metric));
    }
    Err(Failure::Input(
        "provide a sample CSV or --gen with --phenotype".to_string(),
    ))
}

fn cmd_complexity(args: &ComplexityArgs, argv: &[String]) -> Result<Report, Failure> {
    let mut report = Report::new("complexity", argv);
    let (points, labels, metric) = load_labeled_sample(&args.input, &mut report)?;
    let descriptor =
        complexity_descriptor(&points, &labels, &metric, args.rho).map_err(classify_failure)?;
    let mut results = Map::new();
    results.insert("delta".to_string(), num(descriptor.delta));
    results.insert("ratio".to_string(), num(descriptor.ratio));
    results.insert("risk_bound".to_string(), num(descriptor.risk_bound));
    results.insert(
        "risk_clamped".to_string(),
        Value::Bool(descriptor.risk_clamped),
    );
    results.insert("w1".to_string(), num(descriptor.w1));
    report.set_results(Value::Object(results));
    Ok(report)
}

fn thread_cap() -> Result<usize, Failure> {
    match std::env::var("KRSELECT_THREADS") {
        Err(_) => Ok(0),
        Ok(raw) => raw.parse().map_err(|_| {
            Failure::Input(format!(
                "KRSELECT_THREADS must be a nonnegative integer, found `{raw}`"
            ))
        }),
    }
}

fn cmd_select(args: &SelectArgs, argv: &[String]) -> Result<Report, Failure> {
    let mut report = Report::new("select", argv);
    let mode = match args.mode {
        ModeArg::Joint => CriterionMode::EmpiricalJoint,
        ModeArg::Product => CriterionMode::ProductAdditive,
    };
    let problem = if args.input.gen.is_some() {
        let input = &args.input;
        let gen_text = load(input.gen.as_ref().expect("checked above"))?;
        let phenotype_text =
            load(input.phenotype.as_ref().expect("clap enforces --phenotype"))?;
        report.digest("gen", gen_text.as_bytes());
        report.digest("phenotype", phenotype_text.as_bytes());
        let ds = parse_gen(&gen_text, input.threshold).map_err(ingest_failure)?;
        let phenotype = parse_phenotype(&phenotype_text).map_err(ingest_failure)?;
        let encoding = match parse_encoding(&input.encoding)? {
            MetricDescriptor::Line => GenotypeEncoding::Line,
            MetricDescriptor::Discrete { k } => GenotypeEncoding::Discrete { k },
            _ => unreachable!("encodings are line or discrete"),
        };
        let all: Vec<usize> = (0..ds.snps()).collect();
        to_selection_problem(&ds, &phenotype, &all, encoding, args.k, mode)
            .map_err(ingest_failure)?
    } else if let Some(sample) = &args.input.sample {
        let metric_path = args.input.metric.as_ref().ok_or_else(|| {
            Failure::Input("a CSV sample needs --metric".to_string())
        })?;
        let text = load(sample)?;
        let metric_text = load(metric_path)?;
        report.digest("sample", text.as_bytes());
        report.digest("metric", metric_text.as_bytes());
        let (points, labels) = parse_labeled_csv(&text).map_err(ingest_failure)?;
        let coords = match parse_metric_json(&metric_text).map_err(input_error)? {
            MetricDescriptor::Product {
                coords,
                combine: Combine::L1,
            } => coords,
            _ => {
                return Err(Failure::Input(
                    "selection needs an l1 product metric".to_string(),
                ))
            }
        };
        SelectionProblem::new(&points, &labels, coords, args.k, mode).map_err(select_failure)?
    } else {
        return Err(Failure::Input(
            "provide a sample CSV or --gen with --phenotype".to_string(),
        ));
    };

    let threads = thread_cap()?;
    let mut selector = Selector::new(&problem).with_threads(threads);
    let result = match args.strategy {
        StrategyArg::Bb => selector.branch_and_bound(),
        StrategyArg::Forward => selector.forward(),
        StrategyArg::Backward => selector.backward(),
        StrategyArg::Exhaustive => selector.exhaustive(),
    }
    .map_err(select_failure)?;

    let mut results = Map::new();
    results.insert("j_value".to_string(), num(result.j_value));
    results.insert(
        "nodes_evaluated".to_string(),
        Value::from(result.nodes_evaluated),
    );
    results.insert("nodes_pruned".to_string(), Value::from(result.nodes_pruned));
    results.insert(
        "strategy".to_string(),
        Value::String(result.strategy.name().to_string()),
    );
    results.insert(
        "subset".to_string(),
        Value::Array(result.subset.iter().map(|&i| Value::from(i as u64)).collect()),
    );
    report.set_results(Value::Object(results));
    Ok(report)
}
