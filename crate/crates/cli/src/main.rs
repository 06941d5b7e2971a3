//! `reagg`: re-aggregate counts between geometries, fit models, benchmark
//! methods on synthetic data and serve jobs over HTTP.
//!
//! Exit codes: 0 success, 2 invalid input (including usage errors), 3
//! numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use reagg_core::conditioning::Strategy;
use reagg_core::geometry::{
    collapse_by_id, common_ancestor_base, grid_base_geometry, synthesize_population, GridSpec, HierarchyTree,
};
use reagg_core::io::{self, InputRef, JobSpec, LikelihoodName, ModelDocument};
use reagg_core::pipeline::{fit_model, reaggregate, reaggregate_with_posterior, Learning, Method, QuantilePair};
use reagg_core::validation::{
    generate_scenario, metrics_csv, run_benchmark, BenchMethod, BenchmarkOptions, OverlapPattern, ScenarioLikelihood,
    SyntheticScenario,
};
use reagg_core::{build_correspondence, weighted_feature, ReaggError, Result};

#[derive(Parser)]
#[command(name = "reagg", version, about = "Probabilistic spatial re-aggregation of counts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Predict destination-region counts from source-region counts.
    Reaggregate(ReaggregateArgs),
    /// Fit the covariate model to source counts and write it as JSON.
    Fit(FitArgs),
    /// Benchmark methods on seeded synthetic scenarios.
    Validate(ValidateArgs),
    /// Export the population-weighted correspondence table.
    Correspond(CorrespondArgs),
    /// Run the HTTP job service (address from REAGG_ADDR / REAGG_PORT).
    Serve(ServeArgs),
    /// Geometry utilities.
    #[command(subcommand)]
    Geometry(GeometryCommand),
}

/// Inputs shared by commands that read a job.
#[derive(Args, Default)]
struct JobArgs {
    /// Job JSON document; flags below override its fields.
    #[arg(long)]
    job: Option<PathBuf>,
    /// Source counts CSV (`region_id,value`).
    #[arg(long)]
    counts: Option<String>,
    /// Base covariates CSV (`base_id,<columns>...`).
    #[arg(long)]
    covariates: Option<String>,
    /// Base-to-source edge list CSV (`base_id,group_id`).
    #[arg(long)]
    source_map: Option<String>,
    /// Base-to-destination edge list CSV (`base_id,group_id`).
    #[arg(long)]
    dest_map: Option<String>,
    /// gaussian, poisson or binomial.
    #[arg(long)]
    likelihood: Option<LikelihoodName>,
    /// map or bayes.
    #[arg(long)]
    learning: Option<Learning>,
    /// Covariate column holding binomial populations.
    #[arg(long)]
    population_column: Option<String>,
    /// Fit without an intercept column.
    #[arg(long)]
    no_intercept: bool,
    /// Fixed prior precision instead of evidence maximisation.
    #[arg(long)]
    lambda: Option<f64>,
}

impl JobArgs {
    fn spec(&self) -> Result<JobSpec> {
        let mut spec = match &self.job {
            Some(path) => JobSpec::from_json(&path.display().to_string(), &read(path)?)?,
            None => JobSpec::default(),
        };
        let i = &mut spec.inputs;
        for (slot, flag) in [
            (&mut i.source_counts, &self.counts),
            (&mut i.covariates, &self.covariates),
            (&mut i.source_map, &self.source_map),
            (&mut i.dest_map, &self.dest_map),
        ] {
            if let Some(path) = flag {
                *slot = Some(InputRef::Path(path.clone()));
            }
        }
        if let Some(l) = self.likelihood {
            spec.likelihood = l;
        }
        if let Some(l) = self.learning {
            spec.learning = l;
        }
        if let Some(c) = &self.population_column {
            spec.population_column = c.clone();
        }
        if self.no_intercept {
            spec.intercept = false;
        }
        if self.lambda.is_some() {
            spec.fit.lambda = self.lambda;
        }
        Ok(spec)
    }
}

#[derive(Args)]
struct ReaggregateArgs {
    #[command(flatten)]
    job: JobArgs,
    /// weighted or probabilistic.
    #[arg(long)]
    method: Option<Method>,
    /// exact, mcmc, variational or projection.
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Lower and upper quantile, e.g. `0.05,0.95`.
    #[arg(long)]
    quantiles: Option<QuantilePair>,
    #[arg(long)]
    seed: Option<u64>,
    /// Posterior samples kept after burn-in.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
    /// Covariate column used by the weighted method.
    #[arg(long)]
    weight_column: Option<String>,
    /// Summary CSV path (stdout when absent).
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Diagnostics JSON path (default: next to `--out`).
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    /// Base-level posterior samples CSV (sampled strategies only).
    #[arg(long)]
    samples_out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    job: JobArgs,
    /// Model JSON path (stdout when absent).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Scenario JSON; flags below override its fields.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Comma-separated methods: weighted, probabilistic, probabilistic:<strategy>.
    #[arg(long, default_value = "weighted,probabilistic", value_delimiter = ',')]
    methods: Vec<BenchMethod>,
    /// First seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of consecutive seeds.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long)]
    n_base: Option<usize>,
    #[arg(long)]
    n_source: Option<usize>,
    #[arg(long)]
    n_dest: Option<usize>,
    /// nested or misaligned.
    #[arg(long, value_parser = parse_pattern)]
    pattern: Option<OverlapPattern>,
    /// gaussian, poisson or binomial.
    #[arg(long, value_parser = parse_scenario_likelihood)]
    likelihood: Option<ScenarioLikelihood>,
    #[arg(long)]
    samples: Option<usize>,
    /// Metrics CSV path (stdout when absent).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CorrespondArgs {
    #[arg(long)]
    source_map: PathBuf,
    #[arg(long)]
    dest_map: PathBuf,
    #[arg(long)]
    covariates: PathBuf,
    /// Population column (default `population`).
    #[arg(long, default_value = "population")]
    weight_column: String,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    /// Worker threads (default: CPU count).
    #[arg(long)]
    workers: Option<usize>,
    /// Queued jobs beyond this are refused with 429.
    #[arg(long, default_value_t = 1024)]
    queue_cap: usize,
    /// Also write finished results to this directory.
    #[arg(long)]
    persist_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum GeometryCommand {
    /// Count weighted points per region.
    Synthesize {
        /// Geometry JSON (`{"regions": [{"id", "ring"}]}`).
        #[arg(long)]
        regions: PathBuf,
        /// Points CSV (`x,y[,weight]`).
        #[arg(long)]
        points: PathBuf,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Finest level composing both levels.
    Ancestor {
        level_a: String,
        level_b: String,
        /// Hierarchy JSON; the Australian statistical geography when absent.
        #[arg(long)]
        hierarchy: Option<PathBuf>,
    },
    /// Intersect regions with a regular grid.
    Grid {
        #[arg(long)]
        regions: PathBuf,
        /// Grid origin `x,y`.
        #[arg(long, value_parser = parse_pair)]
        origin: [f64; 2],
        /// Cell size `width,height`.
        #[arg(long, value_parser = parse_pair)]
        cell: [f64; 2],
        #[arg(long)]
        cols: usize,
        #[arg(long)]
        rows: usize,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

fn parse_pair(s: &str) -> std::result::Result<[f64; 2], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    v.try_into().map_err(|_| format!("expected two comma-separated numbers, got `{s}`"))
}

fn parse_pattern(s: &str) -> std::result::Result<OverlapPattern, String> {
    match s {
        "nested" => Ok(OverlapPattern::Nested),
        "misaligned" => Ok(OverlapPattern::Misaligned),
        _ => Err(format!("unknown pattern `{s}` (expected nested or misaligned)")),
    }
}

fn parse_scenario_likelihood(s: &str) -> std::result::Result<ScenarioLikelihood, String> {
    match s {
        "gaussian" => Ok(ScenarioLikelihood::Gaussian),
        "poisson" => Ok(ScenarioLikelihood::Poisson),
        "binomial" => Ok(ScenarioLikelihood::Binomial),
        _ => Err(format!("unknown likelihood `{s}` (expected gaussian, poisson or binomial)")),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| ReaggError::InvalidInput(format!("cannot read `{}`: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)
            .map_err(|e| ReaggError::InvalidInput(format!("cannot write `{}`: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_reaggregate(args: ReaggregateArgs) -> Result<()> {
    let mut spec = args.job.spec()?;
    if let Some(m) = args.method {
        spec.method = m;
    }
    if args.strategy.is_some() {
        spec.strategy = args.strategy;
    }
    if let Some(q) = args.quantiles {
        spec.quantiles = q;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(n) = args.samples {
        spec.samples = n;
    }
    if let Some(n) = args.burn_in {
        spec.burn_in = n;
    }
    if let Some(n) = args.chains {
        spec.chains = n;
    }
    if args.weight_column.is_some() {
        spec.weight_column = args.weight_column;
    }
    let job = spec.resolve(true)?;

    let summary = match (&args.samples_out, job.method) {
        (Some(path), Method::Probabilistic) => {
            let (summary, posterior) = reaggregate_with_posterior(&job)?;
            match posterior.samples() {
                Some(s) => emit(Some(path), &io::samples_csv(s, job.a_sb.base_ids())?)?,
                None => log::warn!("the {} strategy yields no samples; `--samples-out` ignored", posterior.diagnostics.strategy),
            }
            summary
        }
        _ => reaggregate(&job)?,
    };
    emit(args.out.as_deref(), &io::summary_csv(&summary))?;
    let diagnostics = args
        .diagnostics
        .or_else(|| args.out.as_ref().map(|o| o.with_extension("diagnostics.json")));
    if let Some(path) = diagnostics {
        emit(Some(&path), &io::diagnostics_json(&summary))?;
    }
    Ok(())
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let job = args.job.spec()?.resolve(true)?;
    let (model, x) = fit_model(&job)?;
    let doc = ModelDocument::from_model(&model, x.columns);
    let text = serde_json::to_string_pretty(&doc).expect("model serialises") + "\n";
    emit(args.out.as_deref(), &text)
}

fn cmd_validate(args: ValidateArgs) -> Result<()> {
    let mut base = match &args.scenario {
        Some(path) => serde_json::from_str::<SyntheticScenario>(&read(path)?)
            .map_err(|e| ReaggError::parse(path.display().to_string(), Some(e.line() as u64), e.to_string()))?,
        None => SyntheticScenario::default(),
    };
    let set = |slot: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    set(&mut base.n_base, args.n_base);
    set(&mut base.n_source, args.n_source);
    set(&mut base.n_dest, args.n_dest);
    if let Some(p) = args.pattern {
        base.pattern = p;
    }
    if let Some(l) = args.likelihood {
        base.likelihood = l;
    }
    if let Some(s) = args.seed {
        base.seed = s;
    }
    let mut opts = BenchmarkOptions::default();
    if let Some(n) = args.samples {
        opts.n_samples = n;
    }
    let mut rows = Vec::new();
    for k in 0..args.seeds {
        let seed = base.seed + k;
        let scenario = SyntheticScenario {
            name: format!("{}/seed{seed}", base.name),
            seed,
            ..base.clone()
        };
        rows.extend(run_benchmark(&generate_scenario(&scenario)?, &args.methods, &opts)?);
    }
    emit(args.out.as_deref(), &metrics_csv(&rows))
}

fn cmd_correspond(args: CorrespondArgs) -> Result<()> {
    let label = |p: &Path| p.display().to_string();
    let x = io::parse_covariates_csv(&label(&args.covariates), &read(&args.covariates)?)?;
    let source_pairs = io::parse_assignment_csv(&label(&args.source_map), &read(&args.source_map)?)?;
    let dest_pairs = io::parse_assignment_csv(&label(&args.dest_map), &read(&args.dest_map)?)?;
    let a_sb = reagg_core::AggregationMatrix::from_labels(&x.base_ids, &source_pairs, None)?;
    let a_db = reagg_core::AggregationMatrix::from_labels(&x.base_ids, &dest_pairs, None)?;
    let j = x
        .columns
        .iter()
        .position(|c| *c == args.weight_column)
        .ok_or_else(|| ReaggError::InvalidInput(format!("weight column `{}` not found", args.weight_column)))?;
    let mut unit = vec![0.0; x.columns.len()];
    unit[j] = 1.0;
    let c = build_correspondence(&a_db, &a_sb, &weighted_feature(&x.values, &unit)?)?;
    emit(args.out.as_deref(), &io::correspondence_csv(&c))
}

fn cmd_serve(args: ServeArgs) -> Result<()> {
    let addr = reagg_service::addr_from_env().map_err(ReaggError::InvalidInput)?;
    let mut config = reagg_service::ServiceConfig {
        queue_cap: args.queue_cap,
        persist_dir: args.persist_dir,
        ..Default::default()
    };
    if let Some(w) = args.workers {
        config.workers = w;
    }
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    eprintln!("reagg service listening on http://{addr}");
    runtime.block_on(reagg_service::serve(addr, config))?;
    Ok(())
}

fn cmd_geometry(cmd: GeometryCommand) -> Result<()> {
    let regions = |p: &Path| io::parse_geometry_json(&p.display().to_string(), &read(p)?);
    match cmd {
        GeometryCommand::Synthesize { regions: r, points, out } => {
            let polys = regions(&r)?;
            let pts = io::parse_points_csv(&points.display().to_string(), &read(&points)?)?;
            let pop = synthesize_population(&pts, &polys)?;
            if pop.unassigned_points > 0 {
                log::warn!(
                    "{} points (weight {}) fell outside every region",
                    pop.unassigned_points,
                    pop.unassigned_weight
                );
            }
            emit(out.as_deref(), &io::counts_csv(&collapse_by_id(&pop.counts)))
        }
        GeometryCommand::Ancestor {
            level_a,
            level_b,
            hierarchy,
        } => {
            let tree = match hierarchy {
                Some(p) => io::parse_hierarchy_json(&p.display().to_string(), &read(&p)?)?,
                None => HierarchyTree::asgs(),
            };
            println!("{}", common_ancestor_base(&level_a, &level_b, &tree)?);
            Ok(())
        }
        GeometryCommand::Grid {
            regions: r,
            origin,
            cell,
            cols,
            rows,
            out,
        } => {
            let grid = GridSpec::new(origin, cell[0], cell[1], cols, rows)?;
            let table = grid_base_geometry(&regions(&r)?, &grid)?;
            let mut text = String::from("region_id,cell_id,col,row,area\n");
            for g in &table.rows {
                text += &format!("{},{},{},{},{}\n", g.region_id, g.cell_id, g.col, g.row, g.area);
            }
            emit(out.as_deref(), &text)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Reaggregate(a) => cmd_reaggregate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Correspond(a) => cmd_correspond(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Geometry(c) => cmd_geometry(c),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
