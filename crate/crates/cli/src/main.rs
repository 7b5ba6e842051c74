use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use wlmargin::flow::{self, FlowConfig, Loss};
use wlmargin::generators::{construction, er_dataset, ConstructionKind, LabeledDataset};
use wlmargin::graph::Graph;
use wlmargin::io::{self, format_float, IoError};
use wlmargin::kernels::{build_trace, collection_features, gram, KernelKind};
use wlmargin::margin::{enclosing_ball_radius, hard_margin_gram, MarginError, MarginResult};
use wlmargin::refinement::Horizon;
use wlmargin::subgraph::{named_pattern, CountMode, PatternSet};
use wlmargin::svm::{self, CvConfig, SvmError};
use wlmargin::theory::{f_condition_holds, wloa_distance_preserved};

#[derive(Parser)]
#[command(name = "wlmargin", version, about = "WL kernels, margins and linear MPNN gradient flow")]
struct Cli {
    /// Worker threads for Gram matrices and cross-validation.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Seed for every random choice of the run.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Write the full result here (JSON, or CSV when the name ends in .csv).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a dataset and write it as JSON or TUDataset files.
    Generate {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_enum, default_value = "json")]
        format: DatasetFormat,
    },
    /// Gram matrix of a dataset.
    Kernel {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        kernel: KernelArgs,
        /// Number of refinement rounds.
        #[arg(long, default_value_t = 3)]
        t: usize,
    },
    /// Hard margin and radius, one class against the rest.
    Margin {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        kernel: KernelArgs,
        #[arg(long, default_value_t = 3)]
        t: usize,
        /// Use the approximate enclosing ball instead of the origin ball.
        #[arg(long)]
        enclosing_ball: bool,
    },
    /// Distances, split witnesses and the pattern condition for a construction.
    Check {
        #[command(flatten)]
        source: Source,
        /// Patterns; defaults to the construction's own pattern.
        #[arg(long, value_delimiter = ',')]
        patterns: Vec<String>,
        #[arg(long, default_value_t = 5)]
        t: usize,
    },
    /// Repeated stratified cross-validation.
    Cv {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        kernel: KernelArgs,
        /// C values; defaults to 1e10 for synthetic data, 1e-3..1e3 otherwise.
        #[arg(long, value_delimiter = ',')]
        c_grid: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        t_grid: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value_t = 10)]
        repetitions: usize,
        /// Skip the training-split margins.
        #[arg(long)]
        no_margin: bool,
        #[arg(long, default_value_t = svm::CV_MAX_ITERATIONS)]
        max_iterations: usize,
    },
    /// Gradient flow of a linear MPNN.
    Flow {
        #[arg(long, value_enum, default_value = "separable")]
        toy: Toy,
        #[arg(long, default_value_t = 200_000)]
        steps: usize,
        #[arg(long, default_value_t = 1e-2)]
        eta: f64,
        #[arg(long, value_enum, default_value = "exponential")]
        loss: LossArg,
        /// Hidden width of every layer but the last.
        #[arg(long, default_value_t = 2)]
        hidden: usize,
        #[arg(long, default_value_t = 2)]
        depth: usize,
        /// Record every this many steps (default: 1000 records per run).
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long)]
        normalized_step: bool,
    },
}

#[derive(Args)]
struct Source {
    /// One of the theory constructions.
    #[arg(long, value_enum)]
    construction: Option<ConstructionArg>,
    #[arg(long, default_value_t = 16)]
    n: usize,
    /// Graph count for the separability set and for random graphs.
    #[arg(long, default_value_t = 200)]
    count: usize,
    /// Erdos-Renyi graphs with this edge probability, labeled by pattern count.
    #[arg(long)]
    er_p: Option<f64>,
    /// Pattern counted for Erdos-Renyi labels.
    #[arg(long, default_value = "c3")]
    er_pattern: String,
    #[arg(long, value_enum, default_value = "induced")]
    count_mode: CountModeArg,
    /// Directory holding TUDataset files (with --name).
    #[arg(long)]
    tudataset: Option<PathBuf>,
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    with_node_labels: bool,
    /// Dataset JSON written by `generate`.
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Args)]
struct KernelArgs {
    #[arg(long, value_enum, default_value = "wl")]
    kernel: KernelArg,
    /// Comma-separated patterns: c<k>, k<k>, or edge-list files.
    #[arg(long, value_delimiter = ',')]
    patterns: Vec<String>,
    /// Skip cosine normalization.
    #[arg(long)]
    raw: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConstructionArg {
    SeparatorPair,
    Separability,
    ShrinkPair,
    Circulant8,
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetFormat {
    Json,
    Tudataset,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    Wl,
    Wloa,
}

#[derive(Clone, Copy, ValueEnum)]
enum CountModeArg {
    Induced,
    Partial,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toy {
    Separable,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Exponential,
    Logistic,
}

/// Exit 2 for bad input, 1 for everything else.
enum Failure {
    Precondition(String),
    Internal(String),
}

fn pre(e: impl Display) -> Failure {
    Failure::Precondition(e.to_string())
}

fn internal(e: impl Display) -> Failure {
    Failure::Internal(e.to_string())
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Io { .. } => internal(e),
            _ => pre(e),
        }
    }
}

impl From<SvmError> for Failure {
    fn from(e: SvmError) -> Self {
        match e {
            SvmError::NotConverged { .. } | SvmError::Margin(MarginError::NotConverged { .. }) => internal(e),
            _ => pre(e),
        }
    }
}

impl From<MarginError> for Failure {
    fn from(e: MarginError) -> Self {
        match e {
            MarginError::NotConverged { .. } => internal(e),
            _ => pre(e),
        }
    }
}

type Outcome = Result<(), Failure>;

struct Loaded {
    data: LabeledDataset,
    name: String,
    /// The construction's own pattern.
    pattern: Option<Graph>,
    synthetic: bool,
}

fn load(src: &Source, seed: u64) -> Result<Loaded, Failure> {
    let chosen = [
        src.construction.is_some(),
        src.er_p.is_some(),
        src.tudataset.is_some(),
        src.input.is_some(),
    ]
    .iter()
    .filter(|&&b| b)
    .count();
    if chosen != 1 {
        return Err(pre("give exactly one of --construction, --er-p, --tudataset, --input"));
    }
    if let Some(c) = src.construction {
        let (kind, label) = match c {
            ConstructionArg::SeparatorPair => (ConstructionKind::SeparatorPair, "separator-pair"),
            ConstructionArg::Separability => (ConstructionKind::SeparabilitySet { count: src.count }, "separability"),
            ConstructionArg::ShrinkPair => (ConstructionKind::ShrinkPair, "shrink-pair"),
            ConstructionArg::Circulant8 => (ConstructionKind::Circulant8Pair, "circulant8"),
        };
        let c = construction(kind, src.n).map_err(pre)?;
        let pattern = c.pattern.clone();
        let name = format!("{label}(n={})", src.n);
        return Ok(Loaded {
            data: LabeledDataset::from_construction(c, name.clone()),
            name,
            pattern: Some(pattern),
            synthetic: true,
        });
    }
    if let Some(p) = src.er_p {
        let f = named_pattern(&src.er_pattern).map_err(pre)?;
        let mode = match src.count_mode {
            CountModeArg::Induced => CountMode::Induced,
            CountModeArg::Partial => CountMode::Partial,
        };
        let data = er_dataset(src.count, src.n, p, &f, seed, mode).map_err(pre)?;
        return Ok(Loaded {
            name: data.provenance.clone(),
            data,
            pattern: Some(f),
            synthetic: true,
        });
    }
    if let Some(dir) = &src.tudataset {
        let name = src.name.clone().ok_or_else(|| pre("--tudataset needs --name"))?;
        let bundle = io::load_tudataset_with(dir, &name, src.with_node_labels)?;
        return Ok(Loaded {
            data: bundle.into_dataset(),
            name,
            pattern: None,
            synthetic: false,
        });
    }
    let path = src.input.as_ref().expect("one source is set");
    let text = fs::read_to_string(path).map_err(|e| pre(format!("{}: {e}", path.display())))?;
    let data = io::parse_dataset_json(&text)?;
    Ok(Loaded {
        name: data.provenance.clone(),
        synthetic: false,
        data,
        pattern: None,
    })
}

/// Edge list, one `u v` (or `u, v`) pair of 0-based vertices per line; an
/// `order N` line adds isolated vertices; `#` starts a comment.
fn pattern_file(path: &Path) -> Result<Graph, Failure> {
    let text = fs::read_to_string(path).map_err(|e| pre(format!("{}: {e}", path.display())))?;
    let mut edges = Vec::new();
    let mut order = 0;
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = || pre(format!("{}:{}: expected \"u v\"", path.display(), i + 1));
        let parts: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
        match parts.as_slice() {
            ["order", n] => order = order.max(n.parse::<usize>().map_err(|_| bad())?),
            [u, v] => {
                let (u, v): (usize, usize) = (u.parse().map_err(|_| bad())?, v.parse().map_err(|_| bad())?);
                order = order.max(u.max(v) + 1);
                edges.push((u.min(v), u.max(v)));
            }
            _ => return Err(bad()),
        }
    }
    edges.sort_unstable();
    edges.dedup();
    Graph::unlabeled(order, edges).map_err(pre)
}

fn patterns(names: &[String]) -> Result<Option<PatternSet>, Failure> {
    if names.is_empty() {
        return Ok(None);
    }
    let mut graphs = Vec::new();
    for name in names {
        let path = Path::new(name);
        let g = match named_pattern(name) {
            Ok(g) => g,
            Err(_) if path.is_file() => pattern_file(path)?,
            Err(e) => return Err(pre(e)),
        };
        graphs.push(g);
    }
    PatternSet::new(graphs).map(Some).map_err(pre)
}

fn kernel_kind(k: KernelArg) -> KernelKind {
    match k {
        KernelArg::Wl => KernelKind::Wl,
        KernelArg::Wloa => KernelKind::Wloa,
    }
}

fn kernel_name(k: KernelKind) -> &'static str {
    match k {
        KernelKind::Wl => "wl",
        KernelKind::Wloa => "wloa",
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn emit_json(out: Option<&Path>, kind: &str, value: &impl serde::Serialize) -> Outcome {
    if let Some(path) = out {
        io::write_json(path, kind, value)?;
    }
    Ok(())
}

fn generate(cli: &Cli, source: &Source, format: DatasetFormat) -> Outcome {
    let loaded = load(source, cli.seed)?;
    let d = &loaded.data;
    match format {
        DatasetFormat::Json => {
            let text = io::dataset_json(d)?;
            match &cli.out {
                Some(p) => io::write_text(p, &(text + "\n"))?,
                None => println!("{text}"),
            }
        }
        DatasetFormat::Tudataset => {
            let dir = cli.out.as_ref().ok_or_else(|| pre("--format tudataset needs --out DIR"))?;
            let labels: Vec<i64> = d.targets.iter().map(|&t| t as i64).collect();
            let name = dir.file_name().and_then(|s| s.to_str()).unwrap_or("DATA").to_string();
            io::write_tudataset(dir, &name, &d.graphs, &labels)?;
        }
    }
    let classes: Vec<String> = d.class_counts().iter().map(|(c, k)| format!("{c}:{k}")).collect();
    eprintln!("{}: {} graphs, classes {}", loaded.name, d.len(), classes.join(" "));
    Ok(())
}

fn kernel_cmd(cli: &Cli, source: &Source, k: &KernelArgs, t: usize) -> Outcome {
    let loaded = load(source, cli.seed)?;
    let fs = patterns(&k.patterns)?;
    let g = gram(&loaded.data.graphs, kernel_kind(k.kernel), fs.as_ref(), t, !k.raw).map_err(pre)?;
    match &cli.out {
        Some(p) if is_csv(p) => io::write_text(p, &io::matrix_csv(&g.values))?,
        Some(p) => io::write_json(p, "gram", &io::GramRecord::from(&g))?,
        None => print!("{}", io::matrix_csv(&g.values)),
    }
    Ok(())
}

fn splits(targets: &[usize]) -> Vec<(usize, Vec<usize>)> {
    let mut classes = targets.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let chosen: Vec<usize> = if classes.len() == 2 { vec![classes[1]] } else { classes };
    chosen
        .into_iter()
        .map(|c| (c, targets.iter().map(|&y| usize::from(y == c)).collect()))
        .collect()
}

fn margin_line(r: &MarginResult) -> String {
    if r.separable {
        format!(
            "separable lambda={} radius={} ratio={}",
            format_float(r.lambda),
            format_float(r.radius),
            format_float(r.ratio)
        )
    } else {
        format!("not separable radius={}", format_float(r.radius))
    }
}

fn margin_cmd(cli: &Cli, source: &Source, k: &KernelArgs, t: usize, ball: bool) -> Outcome {
    let loaded = load(source, cli.seed)?;
    let fs = patterns(&k.patterns)?;
    let g = gram(&loaded.data.graphs, kernel_kind(k.kernel), fs.as_ref(), t, !k.raw).map_err(pre)?;
    let parts = splits(&loaded.data.targets);
    if parts.is_empty() || loaded.data.class_counts().len() < 2 {
        return Err(pre("margin needs at least two classes"));
    }
    let mut results = Vec::new();
    for (class, labels) in parts {
        let mut r = hard_margin_gram(&g.values, &labels)?;
        if ball {
            r.radius = enclosing_ball_radius(&g.values);
            r.ratio = if r.separable { (r.radius / r.lambda).powi(2) } else { f64::INFINITY };
        }
        println!("class {class} vs rest: {}", margin_line(&r));
        results.push(json!({ "class": class, "result": r }));
    }
    emit_json(cli.out.as_deref(), "margin", &results)
}

fn normalized_wl_distance(graphs: &[Graph], fs: Option<&PatternSet>, t: usize) -> Result<f64, Failure> {
    let trace = build_trace(graphs, fs, Horizon::Fixed(t));
    let f = collection_features(&trace, KernelKind::Wl, t, true).map_err(pre)?;
    Ok(f[0].distance_sq(&f[1]).map_err(internal)?.max(0.0).sqrt())
}

fn check_cmd(cli: &Cli, source: &Source, names: &[String], t: usize) -> Outcome {
    let loaded = load(source, cli.seed)?;
    let fs = match patterns(names)? {
        Some(fs) => fs,
        None => {
            let f = loaded.pattern.clone().ok_or_else(|| pre("no default pattern; pass --patterns"))?;
            PatternSet::single(f).map_err(pre)?
        }
    };
    let d = &loaded.data;
    let mut report = serde_json::Map::new();
    report.insert("dataset".into(), json!(loaded.name));
    report.insert("t".into(), json!(t));
    println!("{} ({} graphs, T = {t})", loaded.name, d.len());

    let holds = f_condition_holds(&d.graphs, &d.targets, &fs).map_err(pre)?;
    let swapped: Vec<usize> = d.targets.iter().map(|&y| 1 - y.min(1)).collect();
    let holds_swapped = f_condition_holds(&d.graphs, &swapped, &fs).map_err(pre)?;
    println!("pattern condition: {holds} (labels swapped: {holds_swapped})");
    report.insert("pattern_condition".into(), json!(holds));
    report.insert("pattern_condition_swapped".into(), json!(holds_swapped));

    if d.len() == 2 {
        let plain = normalized_wl_distance(&d.graphs, None, t)?;
        let refined = normalized_wl_distance(&d.graphs, Some(&fs), t)?;
        println!("normalized WL distance: {}", format_float(plain));
        println!("normalized WL_F distance: {}", format_float(refined));
        report.insert("wl_distance".into(), json!(plain));
        report.insert("wlf_distance".into(), json!(refined));
        if d.graphs[0].order() == d.graphs[1].order() {
            let c = wloa_distance_preserved(&d.graphs[0], &d.graphs[1], &fs, t).map_err(pre)?;
            println!(
                "WLOA squared distance: {} -> {} ({})",
                c.plain_distance_sq,
                c.refined_distance_sq,
                if c.preserved { "preserved" } else { "increased" }
            );
            let witness = c.witness.map(|w| {
                println!(
                    "witness: iteration {} color {} child {} counts {:?} -> {:?}",
                    w.t, w.color, w.child, w.parent_counts, w.child_counts
                );
                json!({
                    "t": w.t, "color": w.color, "child": w.child,
                    "parent_counts": [w.parent_counts.0, w.parent_counts.1],
                    "child_counts": [w.child_counts.0, w.child_counts.1],
                })
            });
            report.insert(
                "wloa".into(),
                json!({
                    "plain_distance_sq": c.plain_distance_sq,
                    "refined_distance_sq": c.refined_distance_sq,
                    "preserved": c.preserved,
                    "witness": witness,
                }),
            );
        }
    } else {
        let labels = &d.targets;
        let mut margins = serde_json::Map::new();
        for (label, set) in [("wl", None), ("wlf", Some(&fs))] {
            let g = gram(&d.graphs, KernelKind::Wl, set, t, true).map_err(pre)?;
            let r = hard_margin_gram(&g.values, labels)?;
            println!("{label} margin: {}", margin_line(&r));
            margins.insert(label.into(), json!({ "separable": r.separable, "lambda": r.lambda, "radius": r.radius }));
        }
        report.insert("margins".into(), Value::Object(margins));
    }
    emit_json(cli.out.as_deref(), "check", &Value::Object(report))
}

#[allow(clippy::too_many_arguments)]
fn cv_cmd(
    cli: &Cli,
    source: &Source,
    k: &KernelArgs,
    c_grid: &[f64],
    t_grid: &[usize],
    folds: usize,
    repetitions: usize,
    no_margin: bool,
    max_iterations: usize,
) -> Outcome {
    let loaded = load(source, cli.seed)?;
    let fs = patterns(&k.patterns)?;
    let c_grid = if c_grid.is_empty() {
        if loaded.synthetic {
            vec![1e10]
        } else {
            (-3..=3).map(|e| 10f64.powi(e)).collect()
        }
    } else {
        c_grid.to_vec()
    };
    let cfg = CvConfig {
        kernel: kernel_kind(k.kernel),
        patterns: fs,
        c_grid,
        t_grid: t_grid.to_vec(),
        folds,
        repetitions,
        seed: cli.seed,
        normalized: !k.raw,
        compute_margin: !no_margin,
        max_iterations,
        ..CvConfig::default()
    };
    let r = svm::cross_validate(&loaded.data.graphs, &loaded.data.targets, &cfg)?;
    println!(
        "{} {}: train {:.1} ± {:.1}, test {:.1} ± {:.1}, margin {}",
        loaded.name,
        kernel_name(r.kernel),
        r.train_mean,
        r.train_std,
        r.test_mean,
        r.test_std,
        r.margin_label()
    );
    match &cli.out {
        Some(p) if is_csv(p) => io::write_text(p, &io::cv_report_csv(&r, &loaded.name))?,
        Some(p) => io::write_json(p, "cv-report", &r)?,
        None => {}
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn flow_cmd(
    cli: &Cli,
    steps: usize,
    eta: f64,
    loss: LossArg,
    hidden: usize,
    depth: usize,
    stride: Option<usize>,
    normalized_step: bool,
) -> Outcome {
    if depth == 0 {
        return Err(pre("--depth must be at least 1"));
    }
    let loss = match loss {
        LossArg::Exponential => Loss::Exponential,
        LossArg::Logistic => Loss::Logistic,
    };
    let samples = flow::toy_samples(depth);
    let reference = flow::max_margin_reference(&samples).map_err(pre)?;
    let mut dims = vec![samples[0].v.len()];
    dims.extend(std::iter::repeat_n(hidden, depth - 1));
    dims.push(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    let init = flow::random_initialization(&dims, &samples, loss, &mut rng).map_err(pre)?;
    let mut cfg = FlowConfig::new(eta, steps);
    cfg.loss = loss;
    cfg.normalized_step = normalized_step;
    cfg.reference = Some(reference.direction.clone());
    if let Some(s) = stride {
        cfg.stride = s;
    }
    let t = flow::flow(&samples, &init, &cfg).map_err(|e| match e {
        flow::FlowError::Divergent { .. } => internal(e),
        _ => pre(e),
    })?;
    let last = t.records.last().expect("the first record is always kept");
    let opt = |x: Option<f64>| x.map_or_else(|| "undefined".to_string(), format_float);
    println!("final risk {}", format_float(last.risk));
    for (j, r) in last.residuals.iter().enumerate() {
        println!("layer {} norm {} rank-1 residual {}", j + 1, format_float(last.norms[j]), opt(*r));
    }
    println!("final alignment {}", opt(last.product_alignment));
    println!("max-margin alignment {} (gamma {})", opt(last.reference_alignment), format_float(reference.gamma));
    println!("balancedness drift {}", format_float(t.drift));
    match &cli.out {
        Some(p) if is_csv(p) => io::write_text(p, &io::flow_csv(&t))?,
        Some(p) => io::write_json(p, "flow", &t.records)?,
        None => {}
    }
    Ok(())
}

fn run(cli: &Cli) -> Outcome {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.max(1))
        .build_global()
        .map_err(internal)?;
    match &cli.command {
        Command::Generate { source, format } => generate(cli, source, *format),
        Command::Kernel { source, kernel, t } => kernel_cmd(cli, source, kernel, *t),
        Command::Margin {
            source,
            kernel,
            t,
            enclosing_ball,
        } => margin_cmd(cli, source, kernel, *t, *enclosing_ball),
        Command::Check { source, patterns, t } => check_cmd(cli, source, patterns, *t),
        Command::Cv {
            source,
            kernel,
            c_grid,
            t_grid,
            folds,
            repetitions,
            no_margin,
            max_iterations,
        } => cv_cmd(
            cli,
            source,
            kernel,
            c_grid,
            t_grid,
            *folds,
            *repetitions,
            *no_margin,
            *max_iterations,
        ),
        Command::Flow {
            toy: Toy::Separable,
            steps,
            eta,
            loss,
            hidden,
            depth,
            stride,
            normalized_step,
        } => flow_cmd(cli, *steps, *eta, *loss, *hidden, *depth, *stride, *normalized_step),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Precondition(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(1)
        }
    }
}
