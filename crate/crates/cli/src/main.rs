//! `carleson-lab` command line.
//!
//! Exit codes: 0 success, 1 invariant violation, 2 bad input.

use std::f64::consts::FRAC_PI_4;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use carleson_lab::carleson::{
    check_g_domination, embedding_constant, scalar_cet_ratio, stopping_time,
    testing_constant_matrix, testing_constant_norm,
};
use carleson_lab::experiments::{
    check_instance, gen_weight, leading_scalar_parts, random_carleson, random_matrix_sequence,
    random_vector_fn, random_weight, run_sweep, seeded_rng, stopping_structure_holds,
    weighted_root_sequence, ExperimentConfig, Instance, WeightSpec,
};
use carleson_lab::io;
use carleson_lab::maximal::{check_domination, maximal_norm_lower_bound, MaximalOperator};
use carleson_lab::seqspaces::{check_sest, duality_ratio, pairing, s_norm, t_norm};
use carleson_lab::sparse::{
    bound_ratio, generate_sparse_with, packing_constant, proof_chain_diagnostic, DEFAULT_SPARSITY,
};
use carleson_lab::{
    CarlesonSequence, GridVectorFn, LabError, MatrixSequence, MatrixWeight, MaximalKind,
    SparseFamily, SparseStrategy,
};

#[derive(Parser)]
#[command(
    name = "carleson-lab",
    version,
    about = "Exact dyadic experiments with matrix weights"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a weight from a family and write it as JSON.
    GenWeight(GenWeightArgs),
    /// A2 characteristic and contraction profile of a weight.
    A2(WeightArgs),
    /// Testing constants, exact embedding constant and their ratio.
    Embed(EmbedArgs),
    /// Maximal function values, domination check and a norm lower bound.
    Maximal(MaximalArgs),
    /// Stopping-time decomposition and the g-bound.
    Stopping(FnArgs),
    /// Trace pairing of two matrix sequences and the level-set estimate.
    Duality(DualityArgs),
    /// Weighted norm of a sparse operator and the proof-chain diagnostic.
    SparseNorm(SparseArgs),
    /// Run a corpus sweep and write the v1 report.
    Sweep(SweepArgs),
    /// Re-run the invariant suite on a serialized instance.
    Check(CheckArgs),
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
enum Format {
    Csv,
    Json,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    depth: Option<u32>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON configuration (weight spec, sweep config, or instance, by command).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

impl Common {
    fn depth(&self) -> u32 {
        self.depth.unwrap_or(4)
    }

    fn dim(&self) -> usize {
        self.dim.unwrap_or(1)
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Identity,
    ScalarPower,
    RotatedPair,
    LogWalk,
    Random,
}

#[derive(Args, Clone)]
struct SpecArgs {
    /// Weight family used when no weight file is given.
    #[arg(long, value_enum, default_value = "random")]
    family: Family,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    center: f64,
    #[arg(long, default_value_t = FRAC_PI_4)]
    theta: f64,
    #[arg(long, default_value_t = 0.3)]
    sigma: f64,
}

impl SpecArgs {
    fn spec(&self, seed: u64) -> Option<WeightSpec> {
        match self.family {
            Family::Identity => Some(WeightSpec::Identity),
            Family::ScalarPower => Some(WeightSpec::ScalarPower {
                alpha: self.alpha,
                center: self.center,
            }),
            Family::RotatedPair => Some(WeightSpec::RotatedPair {
                alpha: self.alpha,
                theta: self.theta,
            }),
            Family::LogWalk => Some(WeightSpec::LogWalk {
                sigma: self.sigma,
                seed,
            }),
            Family::Random => None,
        }
    }
}

#[derive(Args)]
struct GenWeightArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    spec: SpecArgs,
}

#[derive(Args)]
struct WeightArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    spec: SpecArgs,
    /// Weight JSON; generated from the family flags when absent.
    #[arg(long)]
    weight: Option<PathBuf>,
}

#[derive(Args)]
struct EmbedArgs {
    #[command(flatten)]
    w: WeightArgs,
    /// Carleson sequence JSON; random when absent.
    #[arg(long)]
    carleson: Option<PathBuf>,
}

#[derive(Args)]
struct FnArgs {
    #[command(flatten)]
    w: WeightArgs,
    /// Vector function JSON `{depth, dim, cells}`; random when absent.
    #[arg(long)]
    function: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Mw,
    Aux,
}

#[derive(Args)]
struct MaximalArgs {
    #[command(flatten)]
    f: FnArgs,
    #[arg(long, value_enum, default_value = "mw")]
    kind: KindArg,
    /// Random starts of the norm search.
    #[arg(long, default_value_t = 4)]
    trials: usize,
}

#[derive(Args)]
struct DualityArgs {
    #[command(flatten)]
    w: WeightArgs,
    /// The `S` sequence; random when absent.
    #[arg(long)]
    s: Option<PathBuf>,
    /// The `T` sequence; built as `⟨W⟩^{1/2} A^{1/2}` from a random Carleson sequence when absent.
    #[arg(long)]
    t: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Chain,
    Random,
    GreedyMaximal,
}

impl From<StrategyArg> for SparseStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Chain => SparseStrategy::Chain,
            StrategyArg::Random => SparseStrategy::Random,
            StrategyArg::GreedyMaximal => SparseStrategy::GreedyMaximal,
        }
    }
}

#[derive(Args)]
struct SparseArgs {
    #[command(flatten)]
    w: WeightArgs,
    /// Sparse family JSON; generated when absent.
    #[arg(long)]
    sparse_family: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "random")]
    strategy: StrategyArg,
    #[arg(long, default_value_t = DEFAULT_SPARSITY)]
    sparsity: f64,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    spec: SpecArgs,
    /// Instances per weight family (without `--config`).
    #[arg(long, default_value_t = 16)]
    instances: usize,
    #[arg(long, value_enum, default_value = "random")]
    strategy: StrategyArg,
    /// The rotated-pair alpha sweep at θ = π/4 with chain families.
    #[arg(long)]
    alpha_sweep: bool,
    /// Record wall times (reports are then no longer byte-reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    common: Common,
    /// Instance JSON (as written to quarantine files); also accepted via `--config`.
    #[arg(long)]
    instance: Option<PathBuf>,
}

/// Scalar report fields plus the names of violated invariants.
struct Report {
    fields: Vec<(String, Value)>,
    violations: Vec<String>,
}

impl Report {
    fn new() -> Self {
        Self {
            fields: Vec::new(),
            violations: Vec::new(),
        }
    }

    fn put(&mut self, key: &str, value: impl Into<Value>) -> &mut Self {
        self.fields.push((key.to_string(), value.into()));
        self
    }

    fn require(&mut self, name: &str, ok: bool) -> &mut Self {
        if !ok {
            self.violations.push(name.to_string());
        }
        self
    }

    fn render(&self, format: Format) -> Result<String, LabError> {
        match format {
            Format::Json => {
                let map: serde_json::Map<String, Value> = self.fields.iter().cloned().collect();
                Ok(serde_json::to_string_pretty(&Value::Object(map))
                    .expect("json values serialize")
                    + "\n")
            }
            Format::Csv => {
                let cell = |v: &Value| match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                let header: Vec<&str> = self.fields.iter().map(|(k, _)| k.as_str()).collect();
                let row: Vec<String> = self.fields.iter().map(|(_, v)| cell(v)).collect();
                csv_text(&[header.iter().map(|s| s.to_string()).collect(), row])
            }
        }
    }
}

fn csv_text(records: &[Vec<String>]) -> Result<String, LabError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.write_record(r)
            .map_err(|e| LabError::Numeric(format!("csv output failed: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| LabError::Numeric(format!("csv output failed: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), LabError> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| LabError::Io {
                    path: parent.to_path_buf(),
                    source: e,
                })?;
            }
            std::fs::write(path, text).map_err(|e| LabError::Io {
                path: path.to_path_buf(),
                source: e,
            })
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).map_err(|e| LabError::Io {
                path: PathBuf::from("<stdout>"),
                source: e,
            })
        }
    }
}

fn finish(report: &Report, common: &Common) -> Result<(), LabError> {
    emit(&report.render(common.format)?, common.out.as_deref())?;
    if report.violations.is_empty() {
        Ok(())
    } else {
        Err(LabError::InvariantViolation {
            id: 0,
            check: report.violations.join(", "),
            quarantine: None,
        })
    }
}

/// Weight from `--weight`, then `--config` (a weight spec), then the family flags.
fn load_or_generate_weight(args: &WeightArgs) -> Result<MatrixWeight, LabError> {
    let c = &args.common;
    if let Some(path) = &args.weight {
        return io::load_weight(path);
    }
    if let Some(path) = &c.config {
        let spec: WeightSpec = io::read_json(path)?;
        return gen_weight(&spec, c.depth(), c.dim(), c.seed());
    }
    match args.spec.spec(c.seed()) {
        Some(spec) => gen_weight(&spec, c.depth(), c.dim(), c.seed()),
        None => random_weight(&mut seeded_rng(c.seed(), 0), c.depth(), c.dim()),
    }
}

fn load_or_random_fn(args: &FnArgs, w: &MatrixWeight) -> Result<GridVectorFn, LabError> {
    match &args.function {
        Some(path) => io::load_vector_fn(path),
        None => random_vector_fn(&mut seeded_rng(args.w.common.seed(), 1), w.depth(), w.dim()),
    }
}

fn load_or_random_carleson(
    path: Option<&Path>,
    seed: u64,
    w: &MatrixWeight,
) -> Result<CarlesonSequence, LabError> {
    match path {
        Some(p) => io::load_carleson(p),
        None => random_carleson(&mut seeded_rng(seed, 2), w.depth(), w.dim()),
    }
}

fn cmd_gen_weight(args: &GenWeightArgs) -> Result<(), LabError> {
    let w = load_or_generate_weight(&WeightArgs {
        common: args.common.clone(),
        spec: args.spec.clone(),
        weight: None,
    })?;
    let text = match args.common.format {
        Format::Json => serde_json::to_string(&w.to_file()).expect("weight serializes") + "\n",
        Format::Csv => {
            let d = w.dim();
            let mut records = vec![std::iter::once("cell".to_string())
                .chain((0..d * d).map(|k| format!("m{}{}", k / d, k % d)))
                .collect::<Vec<_>>()];
            for (j, row) in w.to_file().cells.iter().enumerate() {
                records.push(
                    std::iter::once(j.to_string())
                        .chain(row.iter().map(f64::to_string))
                        .collect(),
                );
            }
            csv_text(&records)?
        }
    };
    emit(&text, args.common.out.as_deref())
}

fn cmd_a2(args: &WeightArgs) -> Result<(), LabError> {
    let w = load_or_generate_weight(args)?;
    let a2 = w.a2_characteristic()?;
    let contraction = w.contraction_profile()?.into_iter().fold(0.0, f64::max);
    let mut r = Report::new();
    r.put("depth", w.depth())
        .put("dim", w.dim())
        .put("a2", a2)
        .put("contraction_max", contraction)
        .require("a2_at_least_one", a2 >= 1.0 - 1e-10)
        .require("contraction", contraction <= 1.0 + 1e-10);
    finish(&r, &args.common)
}

fn cmd_embed(args: &EmbedArgs) -> Result<(), LabError> {
    let w = load_or_generate_weight(&args.w)?;
    let a = load_or_random_carleson(args.carleson.as_deref(), args.w.common.seed(), &w)?;
    let c2_norm = testing_constant_norm(&w, &a)?;
    let c2_matrix = testing_constant_matrix(&w, &a)?;
    let c1 = embedding_constant(&w, &a)?;
    let (ws, as_) = leading_scalar_parts(&w, &a)?;
    let scalar_ratio = scalar_cet_ratio(&ws, &as_)?;
    let mut r = Report::new();
    r.put("c1", c1)
        .put("c2_norm", c2_norm)
        .put("c2_matrix", c2_matrix)
        .put("ratio", if c2_norm > 0.0 { c1 / c2_norm } else { 1.0 })
        .put("scalar_ratio", scalar_ratio)
        .require(
            "testing_matrix_below_embedding",
            c2_matrix <= c1 + 1e-9 * c1.max(1.0),
        )
        .require(
            "scalar_ratio",
            (1.0 - 1e-9..=4.0 + 1e-9).contains(&scalar_ratio),
        );
    finish(&r, &args.w.common)
}

fn cmd_maximal(args: &MaximalArgs) -> Result<(), LabError> {
    let w = load_or_generate_weight(&args.f.w)?;
    let f = load_or_random_fn(&args.f, &w)?;
    let kind = match args.kind {
        KindArg::Mw => MaximalKind::Mw,
        KindArg::Aux => MaximalKind::Aux,
    };
    let values = MaximalOperator::new(kind, &w)?.apply(&f)?;
    let dom = check_domination(&w, &f)?;
    let bound = maximal_norm_lower_bound(kind, &w, args.trials, args.f.w.common.seed())?;
    let mut r = Report::new();
    r.put("kind", if kind == MaximalKind::Mw { "mw" } else { "aux" })
        .put("l2_norm_f", f.l2_norm())
        .put("l2_norm_mf", values.l2_norm())
        .put("domination", dom)
        .put("norm_lower_bound", bound.ratio)
        .put("values", json!(values.cells()))
        .require("maximal_domination", dom <= 1e-10);
    finish(&r, &args.f.w.common)
}

fn cmd_stopping(args: &FnArgs) -> Result<(), LabError> {
    let w = load_or_generate_weight(&args.w)?;
    let f = load_or_random_fn(args, &w)?;
    let dec = stopping_time(&w, &f)?;
    let g = check_g_domination(&w, &f)?;
    let structure = stopping_structure_holds(&dec, w.tree());
    let levels: serde_json::Map<String, Value> = dec
        .levels
        .iter()
        .map(|(k, v)| {
            (
                k.to_string(),
                json!(v.iter().map(ToString::to_string).collect::<Vec<_>>()),
            )
        })
        .collect();
    let mut r = Report::new();
    r.put("bands", dec.levels.len())
        .put(
            "stopping_intervals",
            dec.levels.values().map(Vec::len).sum::<usize>(),
        )
        .put("g_domination", g)
        .put("structure_holds", structure)
        .put("levels", Value::Object(levels))
        .require("g_domination", g <= 4.0 + 1e-9)
        .require("stopping_structure", structure);
    finish(&r, &args.w.common)
}

fn cmd_duality(args: &DualityArgs) -> Result<(), LabError> {
    let c = &args.w.common;
    let s = match &args.s {
        Some(p) => io::load_matrix_sequence(p)?,
        None => random_matrix_sequence(&mut seeded_rng(c.seed(), 3), c.depth(), c.dim())?,
    };
    let t: MatrixSequence = match &args.t {
        Some(p) => io::load_matrix_sequence(p)?,
        None => {
            let w = load_or_generate_weight(&args.w)?;
            let a = load_or_random_carleson(None, c.seed(), &w)?;
            weighted_root_sequence(&w, &a)?
        }
    };
    let sest = check_sest(&s);
    let mut r = Report::new();
    r.put("pairing", pairing(&s, &t)?)
        .put("s_norm", s_norm(&s))
        .put("t_norm", t_norm(&t))
        .put("duality_ratio", duality_ratio(&s, &t)?)
        .put("sest", sest)
        .require("sest", sest <= 1.0 + 1e-9);
    finish(&r, c)
}

fn cmd_sparse_norm(args: &SparseArgs) -> Result<(), LabError> {
    let c = &args.w.common;
    let w = load_or_generate_weight(&args.w)?;
    let family: SparseFamily = match &args.sparse_family {
        Some(p) => io::load_sparse_family(p)?,
        None => generate_sparse_with(w.depth(), args.strategy.into(), c.seed(), args.sparsity)?,
    };
    let chain = proof_chain_diagnostic(&family, &w)?;
    let packing = packing_constant(&family);
    let ratio = bound_ratio(&family, &w)?;
    let mut r = Report::new();
    r.put("members", family.len())
        .put("norm", chain.norm.value)
        .put(
            "norm_method",
            if chain.norm.method == carleson_lab::sparse::NormMethod::Exact {
                "exact"
            } else {
                "estimated"
            },
        )
        .put("packing", packing)
        .put("a2", chain.a2)
        .put("bound_ratio", ratio)
        .put("testing_inverse", chain.testing_inverse)
        .put("testing_direct", chain.testing_direct)
        .put("embedding_inverse", chain.embedding_inverse)
        .put("embedding_direct", chain.embedding_direct)
        .put("chain_bound", chain.bound)
        .require("packing", packing <= 2.0 + 1e-12)
        .require(
            "testing_inverse_sequence",
            chain.testing_inverse <= 2.0 + 1e-9,
        )
        .require(
            "testing_direct_sequence",
            chain.testing_direct <= 2.0 + 1e-9,
        )
        .require(
            "sparse_bound",
            chain.bound >= chain.norm.value * (1.0 - 1e-9),
        );
    finish(&r, c)
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), LabError> {
    let c = &args.common;
    let mut config = match &c.config {
        Some(path) => io::read_json::<ExperimentConfig>(path)?,
        None if args.alpha_sweep => {
            ExperimentConfig::alpha_sweep(c.depth.unwrap_or(8), c.dim.unwrap_or(2), c.seed())
        }
        None => {
            let mut cfg = ExperimentConfig::new(c.depth(), c.dim(), c.seed());
            cfg.weights = args.spec.spec(c.seed()).into_iter().collect();
            cfg.instances_per_weight = args.instances;
            cfg.sparse_strategy = args.strategy.into();
            cfg
        }
    };
    if c.config.is_some() {
        config.depth = c.depth.unwrap_or(config.depth);
        config.dim = c.dim.unwrap_or(config.dim);
        config.seed = c.seed.unwrap_or(config.seed);
    }
    config.timing |= args.timing;
    let report = run_sweep(&config)?;
    let s = &report.summary.log_log_slopes_vs_a2;
    let show = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    eprintln!(
        "{} instances, max bound_ratio {:.6}, log-log slopes vs a2: maximal {}, c1/c2 {}, sparse {}",
        report.summary.instances,
        report.summary.max_bound_ratio,
        show(s.maximal_lower_bound),
        show(s.c1_over_c2),
        show(s.sparse_norm)
    );
    let text = match c.format {
        Format::Csv => report.to_csv()?,
        Format::Json => report.to_json()?,
    };
    let configured = config.csv_out.is_some() || config.json_out.is_some();
    if c.out.is_some() || !configured {
        emit(&text, c.out.as_deref())?;
    }
    Ok(())
}

fn cmd_check(args: &CheckArgs) -> Result<(), LabError> {
    let path = args
        .instance
        .as_ref()
        .or(args.common.config.as_ref())
        .ok_or_else(|| LabError::InvalidSpec("check needs --instance <path>".into()))?;
    let inst: Instance = io::read_json(path)?;
    let report = check_instance(&inst)?;
    let mut r = Report::new();
    for check in &report.checks {
        r.put(&check.name, check.value)
            .require(&check.name, check.holds);
    }
    r.put("bound_ratio", report.row.bound_ratio);
    finish(&r, &args.common)
}

fn run(cli: &Cli) -> Result<(), LabError> {
    match &cli.command {
        Command::GenWeight(a) => cmd_gen_weight(a),
        Command::A2(a) => cmd_a2(a),
        Command::Embed(a) => cmd_embed(a),
        Command::Maximal(a) => cmd_maximal(a),
        Command::Stopping(a) => cmd_stopping(a),
        Command::Duality(a) => cmd_duality(a),
        Command::SparseNorm(a) => cmd_sparse_norm(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Check(a) => cmd_check(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let LabError::InvariantViolation {
                quarantine: Some(path),
                ..
            } = &e
            {
                eprintln!("failing instance written to {}", path.display());
            }
            match e {
                LabError::InvariantViolation { .. } | LabError::Numeric(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
