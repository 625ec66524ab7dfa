use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crystal_kit::config::{Config, ConfigBuilder};
use crystal_kit::hull::{self, PhaseDiagram};
use crystal_kit::mutate::{self, IdentityRelaxer, MutateError, MutationPolicy, Relaxer, RemoteRelaxer};
use crystal_kit::pipeline::{self, EnergySource, EnergyTable, EvaluationConfig, GenerationConfig, PipelineError, SampleRecord};
use crystal_kit::prompts::{self, Condition, PromptTask, StabilityTarget};
use crystal_kit::scoring::{self, Generator, NGramModel, RemoteLLM, ScorerError, SequenceScorer};
use crystal_kit::{cif, codec, validity, Composition, Crystal};

macro_rules! emit {
    ($($arg:tt)*) => {
        write!(io::stdout().lock(), $($arg)*)
    };
}

macro_rules! emitln {
    ($($arg:tt)*) => {
        writeln!(io::stdout().lock(), $($arg)*)
    };
}

#[derive(Parser)]
#[command(name = "crystal-kit", version, about = "Crystal structures as text: encode, sample, score and evaluate")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "CRYSTAL_KIT_CONFIG")]
    config: Option<PathBuf>,
    /// Root seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Config override, e.g. `--set metrics.coverage.structure=0.2`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Crystal (CIF or JSON) to the compact text encoding.
    Encode { input: Option<PathBuf> },
    /// Compact text encoding to CIF.
    Decode { input: Option<PathBuf> },
    /// Structural and compositional validity of each input.
    Validate { inputs: Vec<PathBuf> },
    /// CIF parsing and emission.
    #[command(subcommand)]
    Cif(CifCommand),
    /// Build task prompts and training examples.
    #[command(subcommand)]
    Prompts(PromptsCommand),
    /// Train the character n-gram baseline on a dataset CSV.
    TrainNgram {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw samples with the rejection loop.
    Sample(SampleArgs),
    /// Validity, stability and distribution metrics for a sample file.
    Evaluate(EvaluateArgs),
    /// Energy above hull against reference phases.
    Hull(HullArgs),
    /// Invariance to periodic translation of a scorer, per crystal.
    Ipt {
        #[command(flatten)]
        backend: Backend,
        /// Crystal files, or a dataset CSV with `--data`.
        inputs: Vec<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Element-substitution baseline.
    #[command(subcommand)]
    Mutate(MutateCommand),
    /// Parse, filter and optionally split a dataset CSV.
    Ingest {
        input: PathBuf,
        /// Writes train/val/test CSVs here when a split is configured.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum CifCommand {
    /// CIF to the JSON crystal model.
    Parse { input: Option<PathBuf> },
    /// Crystal (encoding, JSON or CIF) to P1 CIF.
    Emit {
        input: Option<PathBuf>,
        #[arg(long, default_value = "crystal")]
        name: String,
    },
}

#[derive(Args, Default)]
struct ConditionArgs {
    #[arg(long)]
    formula: Option<String>,
    #[arg(long)]
    spacegroup: Option<u16>,
    #[arg(long, value_parser = ["metastable", "unstable"])]
    stability: Option<String>,
    #[arg(long)]
    band_gap: Option<f64>,
}

impl ConditionArgs {
    fn conditions(&self) -> Vec<Condition> {
        let mut out = Vec::new();
        if let Some(f) = &self.formula {
            out.push(Condition::ChemicalFormula(f.clone()));
        }
        if let Some(n) = self.spacegroup {
            out.push(Condition::SpaceGroupNumber(n));
        }
        if let Some(s) = &self.stability {
            let target = if s == "metastable" { StabilityTarget::Metastable } else { StabilityTarget::Unstable };
            out.push(Condition::StabilityClass(target));
        }
        if let Some(g) = self.band_gap {
            out.push(Condition::BandGap(g));
        }
        out
    }
}

#[derive(Subcommand)]
enum PromptsCommand {
    /// Generation prompt with optional conditions.
    Generate {
        #[command(flatten)]
        conditions: ConditionArgs,
    },
    /// Infill prompt masking one element of a crystal.
    Infill {
        input: PathBuf,
        #[arg(long)]
        element: String,
    },
    /// Training examples drawn with the task curriculum, as JSON lines.
    Examples {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1)]
        epochs: usize,
    },
}

#[derive(Args)]
struct Backend {
    /// n-gram model file from `train-ngram`.
    #[arg(long, conflicts_with = "remote")]
    model: Option<PathBuf>,
    /// Use the completion service from the `remote` config section.
    #[arg(long)]
    remote: bool,
}

impl Backend {
    fn load(&self, config: &Config) -> Result<Box<dyn LanguageModel>> {
        match (&self.model, self.remote) {
            (Some(path), _) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                Ok(Box::new(NGramModel::from_json(&text)?))
            }
            (None, true) => Ok(Box::new(RemoteLLM::new(config.remote.clone().with_env_token()))),
            (None, false) => bail!(UsageError("pass --model <file> or --remote".into())),
        }
    }
}

trait LanguageModel: Generator + SequenceScorer {
    fn as_scorer(&self) -> &dyn SequenceScorer;
    fn as_generator(&self) -> &dyn Generator;
}

impl<T: Generator + SequenceScorer> LanguageModel for T {
    fn as_scorer(&self) -> &dyn SequenceScorer {
        self
    }
    fn as_generator(&self) -> &dyn Generator {
        self
    }
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    backend: Backend,
    #[command(flatten)]
    conditions: ConditionArgs,
    /// Infill instead of generation: crystal file to mask.
    #[arg(long, requires = "element")]
    infill: Option<PathBuf>,
    #[arg(long)]
    element: Option<String>,
    #[arg(short, long)]
    n: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    top_p: Option<f64>,
    /// Ask the backend to restrict element tokens.
    #[arg(long)]
    constrain_elements: bool,
    /// JSON lines of sample records; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// JSON lines from `sample`.
    #[arg(long)]
    samples: PathBuf,
    /// Dataset CSV of held-out crystals.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Dataset CSV of training crystals.
    #[arg(long)]
    train: Option<PathBuf>,
    /// `id,formula,energy_per_atom` reference phases for the hull.
    #[arg(long)]
    references: Option<PathBuf>,
    /// `formula,energy_per_atom[,cif]` precomputed energies.
    #[arg(long, conflicts_with = "relax_endpoint")]
    energies: Option<PathBuf>,
    /// Relaxation service URL; other settings come from the `remote` section.
    #[arg(long)]
    relax_endpoint: Option<String>,
    /// Intended conditions to check against the samples.
    #[command(flatten)]
    conditions: ConditionArgs,
    /// Artifact directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct HullArgs {
    #[arg(long)]
    references: PathBuf,
    /// `FORMULA:ENERGY_PER_ATOM`, repeatable.
    #[arg(long = "query", value_name = "FORMULA:ENERGY")]
    queries: Vec<String>,
    /// CSV of `formula,energy_per_atom` queries.
    #[arg(long)]
    queries_csv: Option<PathBuf>,
}

#[derive(Subcommand)]
enum MutateCommand {
    /// Swap table for the configured tolerance.
    Table {
        /// Print the table as JSON.
        #[arg(long)]
        emit: bool,
    },
    /// One mutation round over the seed crystals.
    Round {
        /// Dataset CSV of seed crystals.
        #[arg(long)]
        seeds: PathBuf,
        /// Scorer for the guided policy (`mutate.guided = true`).
        #[command(flatten)]
        backend: Backend,
        #[arg(long)]
        references: Option<PathBuf>,
        #[arg(long)]
        relax_endpoint: Option<String>,
    },
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn is_remote(e: &ScorerError) -> bool {
    matches!(
        e,
        ScorerError::Transport(_) | ScorerError::Status { .. } | ScorerError::Protocol(_) | ScorerError::ConstraintUnsupported
    )
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<crystal_kit::config::ConfigError>() {
            return 1;
        }
        let remote = cause.downcast_ref::<ScorerError>().is_some_and(is_remote)
            || matches!(cause.downcast_ref::<PipelineError>(), Some(PipelineError::Backend(e)) if is_remote(e))
            || matches!(cause.downcast_ref::<MutateError>(), Some(MutateError::Scorer(e)) if is_remote(e))
            || matches!(cause.downcast_ref::<MutateError>(), Some(MutateError::Relax(_)));
        if remote {
            return 3;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<io::Error>().is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut builder = ConfigBuilder::new();
    if let Some(path) = &cli.config {
        builder = builder.file(path)?;
    }
    builder = builder.env();
    for o in &cli.overrides {
        builder = builder.set(o)?;
    }
    if let Some(seed) = cli.seed {
        builder = builder.set(&format!("seed={seed}"))?;
    }
    if let Some(jobs) = cli.jobs {
        builder = builder.set(&format!("jobs={jobs}"))?;
    }
    Ok(builder.build()?)
}

fn read_input(path: Option<&Path>) -> Result<String> {
    match path {
        Some(p) if p != Path::new("-") => fs::read_to_string(p).with_context(|| format!("reading {}", p.display())),
        _ => {
            let mut s = String::new();
            io::stdin().read_to_string(&mut s).context("reading stdin")?;
            Ok(s)
        }
    }
}

/// Accepts CIF, the JSON crystal model, or the compact encoding.
fn parse_crystal(text: &str) -> Result<Crystal> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') {
        Ok(serde_json::from_str(trimmed).context("parsing crystal JSON")?)
    } else if trimmed.starts_with("data_") || text.contains("_cell_length_a") {
        Ok(cif::parse_cif(text)?)
    } else {
        Ok(codec::decode(text.trim_end())?)
    }
}

fn load_crystal(path: Option<&Path>) -> Result<Crystal> {
    parse_crystal(&read_input(path)?)
}

fn load_dataset(path: &Path, config: &Config) -> Result<pipeline::Dataset> {
    let dataset = pipeline::ingest(path, &config.ingest, config.seed)?;
    if !dataset.quarantined.is_empty() {
        eprintln!("{}: {} rows quarantined", path.display(), dataset.quarantined.len());
    }
    Ok(dataset)
}

fn load_crystals(path: &Path, config: &Config) -> Result<Vec<Crystal>> {
    Ok(load_dataset(path, config)?.records.into_iter().map(|r| r.crystal).collect())
}

fn load_diagram(path: &Path) -> Result<PhaseDiagram> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(hull::build_diagram(hull::read_reference_csv(file)?)?)
}

fn print_json(value: &impl Serialize) -> Result<()> {
    emitln!("{}", serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn print_rows<T: Serialize>(format: Format, rows: &[T]) -> Result<()> {
    match format {
        Format::Json => print_json(&rows),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(io::stdout().lock());
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
            Ok(())
        }
    }
}

fn write_output(path: Option<&Path>, contents: &str) -> Result<()> {
    match path {
        Some(p) => Ok(pipeline::write_atomic(p, contents.as_bytes())?),
        None => {
            io::stdout().lock().write_all(contents.as_bytes())?;
            Ok(())
        }
    }
}

fn read_samples(path: &Path) -> Result<Vec<SampleRecord>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), i + 1)))
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli)?;
    rayon::ThreadPoolBuilder::new().num_threads(config.jobs.max(1)).build_global().ok();
    let format = cli.format;
    match cli.command {
        Command::Encode { input } => {
            emitln!("{}", codec::encode(&load_crystal(input.as_deref())?).as_str())?;
        }
        Command::Decode { input } => {
            let crystal = codec::decode(read_input(input.as_deref())?.trim_end())?;
            emit!("{}", cif::write_cif(&crystal, &crystal.composition().reduced_formula()))?;
        }
        Command::Validate { inputs } => {
            #[derive(Serialize)]
            struct Row {
                input: String,
                valid: bool,
                structural_valid: bool,
                compositional_valid: bool,
                min_pair_distance: f64,
                unknown_elements: String,
            }
            let paths: Vec<Option<&Path>> = if inputs.is_empty() { vec![None] } else { inputs.iter().map(|p| Some(p.as_path())).collect() };
            let mut reports = Vec::new();
            let mut rows = Vec::new();
            for p in paths {
                let r = validity::validate(&load_crystal(p)?, &config.validity);
                let input = p.map(|p| p.display().to_string()).unwrap_or_else(|| "-".into());
                rows.push(Row {
                    input: input.clone(),
                    valid: r.is_valid(),
                    structural_valid: r.structural_valid,
                    compositional_valid: r.compositional_valid,
                    min_pair_distance: r.min_pair_distance,
                    unknown_elements: r.unknown_elements.join(" "),
                });
                reports.push(serde_json::json!({ "input": input, "report": r }));
            }
            match format {
                Format::Json => print_json(&reports)?,
                Format::Csv => print_rows(format, &rows)?,
            }
        }
        Command::Cif(CifCommand::Parse { input }) => {
            print_json(&cif::parse_cif(&read_input(input.as_deref())?)?)?;
        }
        Command::Cif(CifCommand::Emit { input, name }) => {
            emit!("{}", cif::write_cif(&load_crystal(input.as_deref())?, &name))?;
        }
        Command::Prompts(PromptsCommand::Generate { conditions }) => {
            emit!("{}", prompts::build_generation_prompt(&conditions.conditions())?)?;
        }
        Command::Prompts(PromptsCommand::Infill { input, element }) => {
            let (prompt, _) = prompts::build_infill_prompt(&load_crystal(Some(&input))?, &element)?;
            emit!("{prompt}")?;
        }
        Command::Prompts(PromptsCommand::Examples { data, epochs }) => {
            let dataset = load_dataset(&data, &config)?;
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let mut out = String::new();
            for _ in 0..epochs {
                for r in &dataset.records {
                    let crystal = config.augment.apply(&r.crystal, &mut rng);
                    let props = r.properties.conditions(&config.metrics.stability);
                    let ex = prompts::sample_training_example(&crystal, &props, &mut rng)?;
                    out.push_str(&serde_json::to_string(&serde_json::json!({"prompt": ex.prompt, "completion": ex.completion}))?);
                    out.push('\n');
                }
            }
            emit!("{out}")?;
        }
        Command::TrainNgram { data, out } => {
            let dataset = load_dataset(&data, &config)?;
            let train = match &dataset.split {
                Some(split) => split.train.iter().map(|&i| dataset.records[i].clone()).collect(),
                None => dataset.records.clone(),
            };
            let pairs = pipeline::training_pairs(&train, &config.augment, &config.metrics.stability, config.ngram.epochs, config.seed);
            let model = NGramModel::train_pairs(&pairs, config.ngram.order, config.ngram.alpha)?;
            pipeline::write_atomic(&out, model.to_json().as_bytes())?;
            eprintln!("trained on {} examples from {} records: {}", pairs.len(), train.len(), SequenceScorer::backend_id(&model));
        }
        Command::Sample(args) => {
            let model = args.backend.load(&config)?;
            let task = match (&args.infill, &args.element) {
                (Some(path), Some(el)) => PromptTask::Infill { crystal: load_crystal(Some(path))?, masked_element: el.clone() },
                _ => PromptTask::Generate { conditions: args.conditions.conditions() },
            };
            let mut params = config.sampling.clone();
            params.temperature = args.temperature.unwrap_or(params.temperature);
            params.top_p = args.top_p.unwrap_or(params.top_p);
            let gen_config = GenerationConfig {
                num_samples: args.n.unwrap_or(config.generation.num_samples),
                constrain_elements: args.constrain_elements || config.generation.constrain_elements,
                jobs: config.jobs,
                ..config.generation.clone()
            };
            let generation = match pipeline::generate(model.as_generator(), &task, &params, &gen_config, config.seed) {
                Ok(g) => g,
                Err(PipelineError::RetryBudgetExhausted { requested, accepted, budget, attempts }) => {
                    write_output(args.out.as_deref(), &pipeline::samples_jsonl(&attempts))?;
                    return Err(PipelineError::RetryBudgetExhausted { requested, accepted, budget, attempts: Vec::new() }.into());
                }
                Err(e) => return Err(e.into()),
            };
            if generation.constraint_fallback {
                eprintln!("backend cannot constrain element tokens; unknown elements rejected after decoding");
            }
            write_output(args.out.as_deref(), &pipeline::samples_jsonl(&generation.attempts))?;
        }
        Command::Evaluate(args) => {
            let samples = read_samples(&args.samples)?;
            let test = args.test.as_deref().map(|p| load_crystals(p, &config)).transpose()?.unwrap_or_default();
            let train = args.train.as_deref().map(|p| load_crystals(p, &config)).transpose()?.unwrap_or_default();
            let diagram = args.references.as_deref().map(load_diagram).transpose()?;
            let table = match &args.energies {
                Some(p) => {
                    let file = fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
                    Some(EnergyTable::from_csv(file, config.metrics.novelty.structure)?)
                }
                None => None,
            };
            let relaxer = args.relax_endpoint.as_ref().map(|url| {
                RemoteRelaxer::new(crystal_kit::scoring::RemoteConfig { endpoint: url.clone(), ..config.remote.clone() }.with_env_token())
            });
            let energy = match (&table, &relaxer) {
                (Some(t), _) => EnergySource::Lookup(t),
                (None, Some(r)) => EnergySource::Relaxer(r),
                _ => EnergySource::None,
            };
            let eval_config = EvaluationConfig { validity: config.validity, metrics: config.metrics.clone() };
            let output = pipeline::run_evaluation(samples, &test, &train, &energy, diagram.as_ref(), &eval_config);
            pipeline::write_artifacts(&args.out, &output, config.seed, &config)?;
            let intended = args.conditions.conditions();
            if !intended.is_empty() {
                let rows = pipeline::evaluate_conditions(&output.samples, &intended, &config.metrics.stability);
                let mut text = serde_json::to_string_pretty(&rows)?;
                text.push('\n');
                pipeline::write_atomic(&args.out.join("conditions.json"), text.as_bytes())?;
            }
            match format {
                Format::Json => emit!("{}", output.report.to_canonical_json())?,
                Format::Csv => emit!("{}", output.report.to_csv())?,
            }
        }
        Command::Hull(args) => {
            let diagram = load_diagram(&args.references)?;
            let mut queries: Vec<(String, f64)> = Vec::new();
            for q in &args.queries {
                let (f, e) = q.rsplit_once(':').ok_or_else(|| UsageError(format!("query {q:?} is not FORMULA:ENERGY")))?;
                queries.push((f.to_string(), e.parse().map_err(|_| UsageError(format!("bad energy in {q:?}")))?));
            }
            if let Some(p) = &args.queries_csv {
                let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(p)?;
                for row in rdr.deserialize::<(String, f64)>() {
                    queries.push(row?);
                }
            }
            #[derive(Serialize)]
            struct Row {
                formula: String,
                energy_per_atom: f64,
                e_above_hull: f64,
                formation_energy: f64,
                stability: hull::StabilityClass,
                decomposition: String,
            }
            let mut rows = Vec::new();
            for (formula, e) in queries {
                let comp = Composition::parse_formula(&formula)?;
                let r = diagram.hull_result(&comp, e)?;
                rows.push(Row {
                    formula,
                    energy_per_atom: e,
                    e_above_hull: r.e_above_hull,
                    formation_energy: r.formation_energy,
                    stability: config.metrics.stability.classify(r.e_above_hull),
                    decomposition: r.decomposition.iter().map(|t| format!("{}:{:.6}", t.id, t.weight)).collect::<Vec<_>>().join(" "),
                });
            }
            print_rows(format, &rows)?;
        }
        Command::Ipt { backend, inputs, data } => {
            let model = backend.load(&config)?;
            let mut crystals: Vec<(String, Crystal)> = Vec::new();
            for p in &inputs {
                crystals.push((p.display().to_string(), load_crystal(Some(p))?));
            }
            if let Some(d) = &data {
                crystals.extend(load_dataset(d, &config)?.records.into_iter().map(|r| (r.id, r.crystal)));
            }
            let prompt = prompts::build_generation_prompt(&[])?;
            #[derive(Serialize)]
            struct Row {
                id: String,
                ipt: f64,
                raw: f64,
                mean_ppl: f64,
                min_ppl: f64,
            }
            let mut rows = Vec::new();
            for (i, (id, c)) in crystals.into_iter().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(pipeline::attempt_seed(config.seed, i as u64));
                let r = scoring::ipt_detailed(model.as_scorer(), &c, config.ipt.translations, &prompt, &mut rng)?;
                rows.push(Row { id, ipt: r.value, raw: r.raw, mean_ppl: r.mean_ppl, min_ppl: r.min_ppl });
            }
            print_rows(format, &rows)?;
        }
        Command::Mutate(MutateCommand::Table { emit }) => {
            let table = mutate::build_swap_table(config.mutate.tolerance)?;
            if emit {
                emit!("{}", table.to_json())?;
            } else {
                let swappable = table.rows.values().filter(|r| !r.is_empty()).count();
                eprintln!("tolerance {} Å: {swappable} elements with substitutes", table.tolerance);
            }
        }
        Command::Mutate(MutateCommand::Round { seeds, backend, references, relax_endpoint }) => {
            let seeds = load_crystals(&seeds, &config)?;
            let table = mutate::build_swap_table(config.mutate.tolerance)?;
            let model = if config.mutate.guided { Some(backend.load(&config)?) } else { None };
            let policy = match &model {
                Some(m) => MutationPolicy::ScorerGuided { scorer: m.as_scorer(), temperature: config.mutate.temperature },
                None => MutationPolicy::Uniform,
            };
            let remote_relaxer = relax_endpoint.map(|url| {
                RemoteRelaxer::new(crystal_kit::scoring::RemoteConfig { endpoint: url, ..config.remote.clone() }.with_env_token())
            });
            let relaxer: &dyn Relaxer = match &remote_relaxer {
                Some(r) => r,
                None => &IdentityRelaxer,
            };
            let diagram = references.as_deref().map(load_diagram).transpose()?;
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let report = mutate::mutation_round(&seeds, &table, policy, relaxer, diagram.as_ref(), &config.metrics.stability, &mut rng);
            match format {
                Format::Json => print_json(&report)?,
                Format::Csv => {
                    #[derive(Serialize)]
                    struct Row {
                        seed_index: usize,
                        old: Option<String>,
                        new: Option<String>,
                        valid: Option<bool>,
                        energy_per_atom: Option<f64>,
                        e_above_hull: Option<f64>,
                        error: Option<String>,
                    }
                    let rows: Vec<Row> = report
                        .outcomes
                        .into_iter()
                        .map(|o| Row {
                            seed_index: o.seed_index,
                            old: o.old,
                            new: o.new,
                            valid: o.valid,
                            energy_per_atom: o.energy_per_atom,
                            e_above_hull: o.e_above_hull,
                            error: o.error,
                        })
                        .collect();
                    print_rows(format, &rows)?;
                }
            }
        }
        Command::Ingest { input, out } => {
            let dataset = pipeline::ingest(&input, &config.ingest, config.seed)?;
            if let (Some(dir), Some(split)) = (&out, &dataset.split) {
                for (name, idx) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
                    let mut w = csv::Writer::from_writer(Vec::new());
                    w.write_record(["id", "cif"])?;
                    for &i in idx.iter() {
                        let r = &dataset.records[i];
                        w.write_record([r.id.as_str(), r.cif.as_str()])?;
                    }
                    pipeline::write_atomic(&dir.join(format!("{name}.csv")), &w.into_inner()?)?;
                }
            } else if out.is_some() {
                bail!(UsageError("--out needs a configured split (ingest.split)".into()));
            }
            let summary = serde_json::json!({
                "total_rows": dataset.total_rows,
                "accepted": dataset.records.len(),
                "filtered": dataset.filtered.len(),
                "quarantined": dataset.quarantined,
                "split": dataset.split.as_ref().map(|s| serde_json::json!({
                    "train": s.train.len(), "val": s.val.len(), "test": s.test.len()
                })),
            });
            print_json(&summary)?;
        }
    }
    Ok(())
}
