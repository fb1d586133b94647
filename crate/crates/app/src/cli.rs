//! `cbm` subcommands.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cbm_proposals::eval::{markdown_table, TableRow};
use cbm_proposals::pipeline::{
    candidates, evaluate_grid, evaluate_selection, hexagon_preset, model_dataset, pinned_from_catalog,
    sample_pool_pinned, select_from, table_rows, vitals_preset, PipelineConfig, PipelineReport, ProposalMode,
};
use cbm_proposals::select::SelectionMethod;
use cbm_proposals::{Dataset, Execution, MetricKind, PinnedConcept, ProposalPool};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;

use crate::api::{generate, parse_config, DatasetKind, GenerateRequest};
use crate::jobs::{report_mode, PoolArtifact, ProposalsArtifact};
use crate::store::{content_id, Store, DATA_DIR_ENV};
use crate::SCHEMA_VERSION;

#[derive(Debug, Parser)]
#[command(name = "cbm", version, about = "Diverse concept proposals for concept bottleneck models")]
pub struct Cli {
    /// Base directory for relative paths and the service store.
    #[arg(long, global = true, env = DATA_DIR_ENV)]
    pub data_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and its concept catalog.
    Generate(GenerateArgs),
    /// Sample and filter a posterior pool.
    Sample(SampleArgs),
    /// Select a diverse subset of a pool.
    Select(SelectArgs),
    /// Score a selection against the dataset's concept catalog.
    Evaluate(EvaluateArgs),
    /// Sample, select and evaluate in one go.
    Pipeline(PipelineArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    pub kind: DatasetKind,
    /// JSON generator config; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    /// Library defaults.
    Default,
    Hexagon,
    Vitals,
}

/// Sampler settings. A preset or config file is the base; individual flags override it.
#[derive(Debug, Args)]
pub struct SamplerArgs {
    #[arg(long, value_enum, default_value = "default")]
    pub preset: Preset,
    /// JSON pipeline config used instead of the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long)]
    pub leapfrog_steps: Option<usize>,
    #[arg(long)]
    pub burn_in_steps: Option<usize>,
    #[arg(long)]
    pub samples_per_restart: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub thinning: Option<usize>,
    #[arg(long)]
    pub std_theta: Option<f64>,
    #[arg(long)]
    pub std_phi: Option<f64>,
    #[arg(long)]
    pub t_acc: Option<f64>,
    /// Z-score features before sampling.
    #[arg(long)]
    pub standardize: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SelectorArgs {
    #[arg(long)]
    pub method: Option<SelectionMethod>,
    #[arg(long)]
    pub metric: Option<MetricKind>,
    #[arg(long = "m", short = 'M')]
    pub m: Option<usize>,
    /// Split sets into single concepts before selecting.
    #[arg(long)]
    pub singles: bool,
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PinArgs {
    /// JSON file with `{"column_index": c, "values": [...]}`.
    #[arg(long, conflicts_with = "pin_concept")]
    pub pin: Option<PathBuf>,
    /// Catalog concept to pin.
    #[arg(long)]
    pub pin_concept: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub pin_column: usize,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[command(flatten)]
    pub pin: PinArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub pool: PathBuf,
    #[command(flatten)]
    pub selector: SelectorArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub proposals: PathBuf,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[command(flatten)]
    pub selector: SelectorArgs,
    #[command(flatten)]
    pub pin: PinArgs,
    /// Also score every method/metric pair on the same pool.
    #[arg(long)]
    pub grid: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

struct Ctx {
    base: Option<PathBuf>,
}

impl Ctx {
    fn path(&self, p: &Path) -> PathBuf {
        match &self.base {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }

    fn read(&self, p: &Path) -> Result<String> {
        let path = self.path(p);
        fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))
    }

    fn write(&self, p: &Path, text: &str) -> Result<PathBuf> {
        let path = self.path(p);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    fn json<T: serde::Serialize>(&self, p: &Path, value: &T) -> Result<PathBuf> {
        self.write(p, &serde_json::to_string_pretty(value)?)
    }

    fn dataset(&self, p: &Path) -> Result<Dataset> {
        let path = self.path(p);
        Dataset::load(&path).with_context(|| format!("loading dataset {}", path.display()))
    }
}

fn catalog_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.catalog.json"))
}

fn run_generate(ctx: &Ctx, args: &GenerateArgs) -> Result<()> {
    let mut config: Value = match &args.config {
        Some(p) => serde_json::from_str(&ctx.read(p)?).context("config file is not valid JSON")?,
        None => Value::Object(Default::default()),
    };
    if let (Some(seed), Value::Object(map)) = (args.seed, &mut config) {
        map.insert("seed".into(), seed.into());
    }
    let data = generate(&GenerateRequest { kind: args.kind, config }).map_err(|e| anyhow::anyhow!("{}", e.message))?;
    let out = ctx.path(&args.out);
    data.save(&out)?;
    let cat = data.ground_truth().context("generator produced no catalog")?;
    let cat_path = catalog_path(&out);
    cat.save(&cat_path)?;
    println!(
        "{:?}: {} points, {} concepts, {} valid combinations, min_concepts {} -> {}",
        args.kind,
        data.n(),
        cat.concepts.len(),
        cat.valid_combinations.len(),
        cat.min_concepts,
        out.display()
    );
    Ok(())
}

fn pipeline_config(ctx: &Ctx, s: &SamplerArgs, sel: Option<&SelectorArgs>) -> Result<PipelineConfig> {
    let seed = s.seed.unwrap_or(0);
    let mut cfg = match (&s.config, s.preset) {
        (Some(p), _) => {
            let v: Value = serde_json::from_str(&ctx.read(p)?).context("config file is not valid JSON")?;
            parse_config(&v).map_err(|e| anyhow::anyhow!("{}", e.message))?
        }
        (None, Preset::Default) => PipelineConfig::default(),
        (None, Preset::Hexagon) => hexagon_preset(seed),
        (None, Preset::Vitals) => vitals_preset(seed),
    };
    macro_rules! set {
        ($flag:expr => $field:expr) => {
            if let Some(v) = $flag {
                $field = v;
            }
        };
    }
    set!(s.k => cfg.k);
    set!(s.step_size => cfg.hmc.step_size);
    set!(s.leapfrog_steps => cfg.hmc.leapfrog_steps);
    set!(s.burn_in_steps => cfg.hmc.burn_in_steps);
    set!(s.samples_per_restart => cfg.hmc.samples_per_restart);
    set!(s.restarts => cfg.hmc.restarts);
    set!(s.thinning => cfg.hmc.thinning);
    set!(s.std_theta => cfg.prior.std_theta);
    set!(s.std_phi => cfg.prior.std_phi);
    set!(s.t_acc => cfg.t_acc);
    if let Some(seed) = s.seed {
        cfg.hmc.seed = seed;
        cfg.selection_seed = seed;
    }
    cfg.standardize |= s.standardize;
    if let Some(sel) = sel {
        set!(sel.method => cfg.method);
        set!(sel.metric => cfg.metric);
        set!(sel.m => cfg.m);
        set!(sel.threshold => cfg.f1_threshold);
        if sel.singles {
            cfg.mode = ProposalMode::Singles;
        }
    }
    Ok(cfg)
}

fn resolve_pin(ctx: &Ctx, pin: &PinArgs, data: &Dataset) -> Result<Option<PinnedConcept>> {
    if let Some(p) = &pin.pin {
        let pinned: PinnedConcept = serde_json::from_str(&ctx.read(p)?).context("pin file must be {column_index, values}")?;
        return Ok(Some(pinned));
    }
    match pin.pin_concept {
        Some(concept) => {
            let catalog = data.ground_truth().context("--pin-concept needs a dataset with a concept catalog")?;
            Ok(Some(pinned_from_catalog(catalog, concept, pin.pin_column)?))
        }
        None => Ok(None),
    }
}

fn pool_artifact(data: &Dataset, model_data: &Dataset, cfg: &PipelineConfig, pool: &ProposalPool) -> Result<PoolArtifact> {
    Ok(PoolArtifact {
        schema_version: SCHEMA_VERSION,
        kind: "pool".into(),
        dataset_id: content_id(data.to_json()?.as_bytes()),
        config: cfg.clone(),
        archive: serde_json::from_str(&pool.to_archive_json(model_data)?)?,
    })
}

fn load_pool_file(ctx: &Ctx, data: &Dataset, path: &Path) -> Result<(PoolArtifact, Dataset, ProposalPool)> {
    let art: PoolArtifact = serde_json::from_str(&ctx.read(path)?).context("not a pool file")?;
    let model_data = model_dataset(data, art.config.standardize);
    let pool = ProposalPool::from_archive_json(&art.archive.to_string(), &model_data)?;
    Ok((art, model_data, pool))
}

fn run_sample(ctx: &Ctx, args: &SampleArgs) -> Result<()> {
    let data = ctx.dataset(&args.data)?;
    let cfg = pipeline_config(ctx, &args.sampler, None)?;
    cfg.validate()?;
    let pinned = resolve_pin(ctx, &args.pin, &data)?;
    let model_data = model_dataset(&data, cfg.standardize);
    let pool = sample_pool_pinned(&model_data, &cfg, pinned.as_ref(), Execution::default(), &|done| {
        log::info!("chain {done}/{} finished", cfg.hmc.restarts)
    })?;
    let out = ctx.json(&args.out, &pool_artifact(&data, &model_data, &cfg, &pool)?)?;
    println!("kept {} of {} draws (t_acc {}) -> {}", pool.len(), pool.provenance.drawn, cfg.t_acc, out.display());
    Ok(())
}

fn run_select(ctx: &Ctx, args: &SelectArgs) -> Result<()> {
    let data = ctx.dataset(&args.data)?;
    let (art, _, pool) = load_pool_file(ctx, &data, &args.pool)?;
    let mut cfg = art.config.clone();
    let sel = &args.selector;
    if let Some(v) = sel.method {
        cfg.method = v;
    }
    if let Some(v) = sel.metric {
        cfg.metric = v;
    }
    if let Some(v) = sel.m {
        cfg.m = v;
    }
    if let Some(v) = args.seed {
        cfg.selection_seed = v;
    }
    cfg.validate()?;
    let cands = candidates(&pool, sel.singles);
    let set = select_from(&cands, cfg.method, cfg.metric, cfg.m, cfg.selection_seed, Execution::default())?;
    let artifact = ProposalsArtifact {
        schema_version: SCHEMA_VERSION,
        kind: "proposals".into(),
        dataset_id: art.dataset_id.clone(),
        pool_ref: fs::canonicalize(ctx.path(&args.pool))?.display().to_string(),
        config: cfg,
        singles: sel.singles,
        set,
    };
    let out = ctx.json(&args.out, &artifact)?;
    println!("selected {} proposals -> {}", artifact.set.len(), out.display());
    Ok(())
}

fn run_evaluate(ctx: &Ctx, args: &EvaluateArgs) -> Result<()> {
    let data = ctx.dataset(&args.data)?;
    let props: ProposalsArtifact = serde_json::from_str(&ctx.read(&args.proposals)?).context("not a proposals file")?;
    let (_, model_data, pool) = load_pool_file(ctx, &data, Path::new(&props.pool_ref))?;
    let catalog = model_data.ground_truth().context("dataset has no concept catalog")?;
    let cands = candidates(&pool, props.singles);
    let mode = report_mode(&model_data, props.singles, pool.pinned.as_ref());
    let threshold = args.threshold.unwrap_or(props.config.f1_threshold);
    let report = evaluate_selection(&pool, &cands, &props.set, catalog, &mode, threshold)?;
    let row = TableRow { method: props.set.method, metric: props.set.metric, value: report.fraction() };
    print!("{}", markdown_table(table_column(&mode), &[row]));
    ctx.json(&args.out, &serde_json::json!({ "schema_version": SCHEMA_VERSION, "report": report }))?;
    Ok(())
}

fn table_column(mode: &ProposalMode) -> &'static str {
    match mode {
        ProposalMode::Sets => "Valid explanations found",
        ProposalMode::Singles => "Valid concepts found",
        ProposalMode::Conditional { .. } => "Valid completions found",
    }
}

fn run_pipeline(ctx: &Ctx, args: &PipelineArgs) -> Result<()> {
    let data = ctx.dataset(&args.data)?;
    let cfg = pipeline_config(ctx, &args.sampler, Some(&args.selector))?;
    cfg.validate()?;
    let pinned = resolve_pin(ctx, &args.pin, &data)?;
    let model_data = model_dataset(&data, cfg.standardize);
    let pool = sample_pool_pinned(&model_data, &cfg, pinned.as_ref(), Execution::default(), &|done| {
        log::info!("chain {done}/{} finished", cfg.hmc.restarts)
    })?;
    let singles = cfg.mode == ProposalMode::Singles;
    let cands = candidates(&pool, singles);
    let set = select_from(&cands, cfg.method, cfg.metric, cfg.m, cfg.selection_seed, Execution::default())?;
    let mode = report_mode(&model_data, singles, pinned.as_ref());
    let report = match model_data.ground_truth() {
        Some(cat) => Some(evaluate_selection(&pool, &cands, &set, cat, &mode, cfg.f1_threshold)?),
        None => None,
    };

    let dir = ctx.path(&args.out_dir);
    fs::create_dir_all(&dir)?;
    let pool_path = ctx.json(&dir.join("pool.json"), &pool_artifact(&data, &model_data, &cfg, &pool)?)?;
    let proposals = ProposalsArtifact {
        schema_version: SCHEMA_VERSION,
        kind: "proposals".into(),
        dataset_id: content_id(data.to_json()?.as_bytes()),
        pool_ref: fs::canonicalize(&pool_path)?.display().to_string(),
        config: cfg.clone(),
        singles,
        set: set.clone(),
    };
    ctx.json(&dir.join("proposals.json"), &proposals)?;
    let full = PipelineReport {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        dataset_hash: model_data.content_hash(),
        pool_drawn: pool.provenance.drawn,
        pool_size: pool.len(),
        proposals: set.clone(),
        report: report.clone(),
    };
    ctx.json(&dir.join("report.json"), &full)?;

    let mut md = String::new();
    if let Some(rep) = &report {
        let rows = if args.grid {
            let cat = model_data.ground_truth().expect("report implies catalog");
            let grid = evaluate_grid(&pool, cat, &mode, cfg.m, cfg.selection_seed, cfg.f1_threshold, Execution::default())?;
            table_rows(&grid, false)
        } else {
            vec![TableRow { method: cfg.method, metric: cfg.metric, value: rep.fraction() }]
        };
        md = markdown_table(table_column(&mode), &rows);
        if !singles {
            md.push_str(&format!("\nmin_M: {}\n", rep.min_m.map_or("none".into(), |m| m.to_string())));
        }
    }
    ctx.write(&dir.join("report.md"), &md)?;
    print!("{md}");
    println!("pool {} of {} draws; outputs in {}", pool.len(), pool.provenance.drawn, dir.display());
    if pool.is_empty() {
        eprintln!("warning: no posterior draw reached t_acc {}; the proposal set is empty", cfg.t_acc);
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx { base: cli.data_dir.clone() };
    match &cli.command {
        Command::Generate(a) => run_generate(&ctx, a),
        Command::Sample(a) => run_sample(&ctx, a),
        Command::Select(a) => run_select(&ctx, a),
        Command::Evaluate(a) => run_evaluate(&ctx, a),
        Command::Pipeline(a) => run_pipeline(&ctx, a),
        Command::Serve(a) => {
            let root = cli.data_dir.clone().unwrap_or_else(|| PathBuf::from("cbm-data"));
            let store = Store::open(root).map_err(|e| anyhow::anyhow!("{}", e.message))?;
            let addr = SocketAddr::new(a.host, a.port);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(crate::serve(store, addr, a.workers))
        }
    }
}
