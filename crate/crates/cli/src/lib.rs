//! Command-line front end for the spiking GNN engine: dataset conversion
//! and generation, training runs, ablation suites, grid search and energy
//! profiles.
//!
//! Exit codes are stable: 0 ok, 1 other failure, 2 missing or unreadable
//! input, 3 refusal to overwrite, 4 configuration error, 5 non-finite
//! numerics.

mod table;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use sgnn_core::config::{parse_seed_range, GridAxis, RunConfig};
use sgnn_core::graph::{
    self, generate_sbm, load_canonical, save_canonical, ConvertOptions, Dataset, SbmParams,
};
use sgnn_core::layers::NormKind;
use sgnn_core::model::{build_model, Model, ModelConfig, ModelState};
use sgnn_core::neuron::NeuronKind;
use sgnn_core::profiler::CostConstants;
use sgnn_core::train::{
    expand_grid, grid_search, mean_std, profile_model, rows_csv, run_experiment_model, summary_csv,
    write_atomic, CellSummary, GridCell, GridOptions, RunRow,
};
use sgnn_core::Error;

pub use table::aligned;

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_CLOBBER: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;
pub const EXIT_NUMERIC: i32 = 5;

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub msg: String,
}

impl Failure {
    fn new(code: i32, msg: impl Into<String>) -> Self {
        Self {
            code,
            msg: msg.into(),
        }
    }

    fn input(e: Error) -> Self {
        Self::new(EXIT_INPUT, e.to_string())
    }

    fn config(e: impl std::fmt::Display) -> Self {
        Self::new(EXIT_CONFIG, e.to_string())
    }

    /// Errors raised while running: numerics and late config errors keep
    /// their own codes.
    fn runtime(e: Error) -> Self {
        let code = match e {
            Error::NonFinite(_) => EXIT_NUMERIC,
            Error::Config(_) => EXIT_CONFIG,
            _ => EXIT_OTHER,
        };
        Self::new(code, e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

#[derive(Parser, Debug)]
#[command(name = "sgnn-bench", version, about = "Spiking GNN benchmark runner")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Clone, Debug, Default)]
pub struct Shared {
    /// Dataset directory (canonical TSV; raw Cora files for `convert`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Inclusive seed range, `A..B`.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Overwrite an existing output directory.
    #[arg(long)]
    pub force: bool,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Convert raw Cora (`.content` + `.cites`) into the canonical layout.
    Convert {
        #[command(flatten)]
        shared: Shared,
        /// Seed of the semi-supervised split.
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
    },
    /// Generate a stochastic block model dataset.
    Gen {
        #[command(flatten)]
        shared: Shared,
        #[arg(long, default_value_t = 100)]
        n_per_block: usize,
        #[arg(long, default_value_t = 2)]
        blocks: usize,
        #[arg(long, default_value_t = 0.05)]
        p_in: f64,
        #[arg(long, default_value_t = 0.01)]
        p_out: f64,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 0.5)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train and evaluate once per seed.
    Train {
        #[command(flatten)]
        shared: Shared,
    },
    /// Run the five ablation variants of a base config.
    Ablate {
        #[command(flatten)]
        shared: Shared,
        /// Keep finished jobs from an earlier run in the same directory.
        #[arg(long)]
        resume: bool,
    },
    /// Cartesian search over list-valued config keys.
    Grid {
        #[command(flatten)]
        shared: Shared,
        /// Keep finished jobs from an earlier run in the same directory.
        #[arg(long)]
        resume: bool,
    },
    /// One inference pass and its energy report.
    Profile {
        #[command(flatten)]
        shared: Shared,
        /// Checkpoint written by `train`; a fresh model when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Profile at a different number of time steps.
        #[arg(long)]
        time_steps: Option<usize>,
    },
}

/// Trained parameters plus what is needed to rebuild the model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub d_in: usize,
    pub num_classes: usize,
    pub state: ModelState,
}

pub fn run(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Convert { shared, split_seed } => cmd_convert(shared, *split_seed),
        Command::Gen {
            shared,
            n_per_block,
            blocks,
            p_in,
            p_out,
            dim,
            noise,
            seed,
        } => cmd_gen(
            shared,
            &SbmParams {
                n_per_block: *n_per_block,
                num_blocks: *blocks,
                p_in: *p_in,
                p_out: *p_out,
                dim: *dim,
                noise: *noise,
                seed: *seed,
            },
        ),
        Command::Train { shared } => cmd_train(shared),
        Command::Ablate { shared, resume } => cmd_ablate(shared, *resume),
        Command::Grid { shared, resume } => cmd_grid(shared, *resume),
        Command::Profile {
            shared,
            checkpoint,
            time_steps,
        } => cmd_profile(shared, checkpoint.as_deref(), *time_steps),
    }
}

fn timestamp() -> String {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("unix:{secs}")
}

/// Worker count from `SGNN_THREADS`; 0 lets the pool use every core.
fn workers() -> CliResult<usize> {
    match std::env::var("SGNN_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::new(EXIT_CONFIG, format!("SGNN_THREADS={v:?} is not a count"))),
        Err(_) => Ok(0),
    }
}

fn write(path: &Path, content: &str) -> CliResult {
    write_atomic(path, content).map_err(|e| Failure::new(EXIT_OTHER, e.to_string()))
}

/// Creates `out`, refusing to reuse a non-empty directory unless allowed.
fn prepare_out(out: &Path, force: bool, resume: bool) -> CliResult {
    let occupied = fs::read_dir(out)
        .map(|mut d| d.next().is_some())
        .unwrap_or(false);
    if occupied && !force && !resume {
        return Err(Failure::new(
            EXIT_CLOBBER,
            format!(
                "{} exists and is not empty; pass --force to overwrite",
                out.display()
            ),
        ));
    }
    fs::create_dir_all(out).map_err(|e| Failure::new(EXIT_OTHER, format!("{}: {e}", out.display())))
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path)
        .map_err(|e| Failure::new(EXIT_INPUT, format!("{}: {e}", path.display())))
}

fn validate(cfg: &RunConfig) -> CliResult {
    cfg.model.validate().map_err(Failure::config)?;
    cfg.train.validate().map_err(Failure::config)
}

/// Folds the command-line flags into a parsed config.
fn apply_flags(cfg: &mut RunConfig, shared: &Shared) -> CliResult {
    if let Some(s) = &shared.seeds {
        cfg.run.seeds = parse_seed_range(s).ok_or_else(|| {
            Failure::new(EXIT_CONFIG, format!("bad --seeds {s:?}: expected A..B"))
        })?;
    }
    if let Some(d) = &shared.data {
        cfg.run.data = Some(d.display().to_string());
    }
    if let Some(o) = &shared.out {
        cfg.run.out = Some(o.display().to_string());
    }
    cfg.run.tool_version = env!("CARGO_PKG_VERSION").to_string();
    cfg.run.timestamp = Some(timestamp());
    Ok(())
}

fn load_config(shared: &Shared) -> CliResult<RunConfig> {
    let mut cfg = match &shared.config {
        Some(p) => RunConfig::parse(&read_text(p)?)
            .map_err(|e| Failure::config(format!("{}: {e}", p.display())))?,
        None => RunConfig::default(),
    };
    apply_flags(&mut cfg, shared)?;
    validate(&cfg)?;
    Ok(cfg)
}

fn load_grid_config(shared: &Shared) -> CliResult<(RunConfig, Vec<GridAxis>)> {
    let path = shared
        .config
        .as_ref()
        .ok_or_else(|| Failure::new(EXIT_INPUT, "grid needs --config FILE"))?;
    let (mut cfg, axes) = RunConfig::parse_grid(&read_text(path)?)
        .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    apply_flags(&mut cfg, shared)?;
    validate(&cfg)?;
    Ok((cfg, axes))
}

fn data_dir(cfg: &RunConfig) -> CliResult<PathBuf> {
    cfg.run
        .data
        .as_ref()
        .map(PathBuf::from)
        .ok_or_else(|| Failure::new(EXIT_INPUT, "no dataset given: pass --data DIR"))
}

fn out_dir(cfg: &RunConfig) -> CliResult<PathBuf> {
    cfg.run
        .out
        .as_ref()
        .map(PathBuf::from)
        .ok_or_else(|| Failure::new(EXIT_INPUT, "no output directory given: pass --out DIR"))
}

fn load_data(cfg: &RunConfig) -> CliResult<Dataset> {
    load_canonical(data_dir(cfg)?).map_err(Failure::input)
}

fn cmd_convert(shared: &Shared, split_seed: u64) -> CliResult {
    let raw = shared
        .data
        .as_ref()
        .ok_or_else(|| Failure::new(EXIT_INPUT, "convert needs --data RAW_DIR"))?;
    let out = shared
        .out
        .as_ref()
        .ok_or_else(|| Failure::new(EXIT_INPUT, "convert needs --out DIR"))?;
    let find = |ext: &str| -> PathBuf {
        fs::read_dir(raw)
            .ok()
            .and_then(|d| {
                let mut hits: Vec<PathBuf> = d
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x == ext))
                    .collect();
                hits.sort();
                hits.into_iter().next()
            })
            .unwrap_or_else(|| raw.join(format!("cora.{ext}")))
    };
    let (content, cites) = (find("content"), find("cites"));
    for p in [&content, &cites] {
        if !p.is_file() {
            return Err(Failure::new(
                EXIT_INPUT,
                format!("missing input file {}", p.display()),
            ));
        }
    }
    let opts = ConvertOptions {
        seed: split_seed,
        ..ConvertOptions::default()
    };
    if shared.dry_run {
        println!(
            "convert {} + {} -> {} (split seed {split_seed})",
            content.display(),
            cites.display(),
            out.display()
        );
        return Ok(());
    }
    let (ds, summary) = graph::read_cora_raw(&content, &cites, &opts).map_err(Failure::input)?;
    prepare_out(out, shared.force, false)?;
    save_canonical(&ds, out).map_err(|e| Failure::new(EXIT_OTHER, e.to_string()))?;
    let manifest = format!(
        "[convert]\ncontent = {}\ncites = {}\nsplit_seed = {split_seed}\ntool_version = {}\ntimestamp = {}\n",
        content.display(),
        cites.display(),
        env!("CARGO_PKG_VERSION"),
        timestamp()
    );
    write(&out.join("manifest.toml"), &manifest)?;
    println!("{summary}");
    Ok(())
}

fn cmd_gen(shared: &Shared, p: &SbmParams) -> CliResult {
    let out = shared
        .out
        .as_ref()
        .ok_or_else(|| Failure::new(EXIT_INPUT, "gen needs --out DIR"))?;
    let ds = generate_sbm(p).map_err(Failure::config)?;
    if shared.dry_run {
        println!("{p:?} -> {}", out.display());
        return Ok(());
    }
    prepare_out(out, shared.force, false)?;
    save_canonical(&ds, out).map_err(|e| Failure::new(EXIT_OTHER, e.to_string()))?;
    let manifest = format!(
        "[gen]\nn_per_block = {}\nblocks = {}\np_in = {}\np_out = {}\ndim = {}\nnoise = {}\nseed = {}\ntool_version = {}\ntimestamp = {}\n",
        p.n_per_block,
        p.num_blocks,
        p.p_in,
        p.p_out,
        p.dim,
        p.noise,
        p.seed,
        env!("CARGO_PKG_VERSION"),
        timestamp()
    );
    write(&out.join("manifest.toml"), &manifest)?;
    println!(
        "nodes {}  undirected edges {}  classes {}",
        ds.num_nodes(),
        ds.graph.nnz() / 2,
        ds.num_classes()
    );
    Ok(())
}

fn mean_std_line(label: &str, xs: &[f64]) -> String {
    let (m, s) = mean_std(xs);
    format!(
        "{label} {:.2} ± {:.2} over {} seeds",
        100.0 * m,
        100.0 * s,
        xs.len()
    )
}

fn cmd_train(shared: &Shared) -> CliResult {
    let cfg = load_config(shared)?;
    if shared.dry_run {
        print!("{}", cfg.to_text());
        return Ok(());
    }
    let data = load_data(&cfg)?;
    let out = out_dir(&cfg)?;
    prepare_out(&out, shared.force, false)?;
    write(&out.join("manifest.toml"), &cfg.to_text())?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers()?)
        .build()
        .map_err(|e| Failure::new(EXIT_OTHER, e.to_string()))?;
    let seeds = cfg.seeds();
    let results: Vec<Result<_, Error>> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&s| run_experiment_model(&cfg, &data, s))
            .collect()
    });
    let mut rows = Vec::new();
    for r in results {
        let (outcome, model) = r.map_err(Failure::runtime)?;
        for w in &outcome.warnings {
            eprintln!("warning: {w}");
        }
        let seed = outcome.seed;
        write(
            &out.join(format!("energy_seed{seed}.csv")),
            &outcome.energy.to_csv(),
        )?;
        let ckpt = Checkpoint {
            model: model.config().clone(),
            d_in: model.d_in(),
            num_classes: model.num_classes(),
            state: model.state(),
        };
        let json =
            serde_json::to_string(&ckpt).map_err(|e| Failure::new(EXIT_OTHER, e.to_string()))?;
        write(&out.join(format!("checkpoint_seed{seed}.json")), &json)?;
        rows.push(RunRow::from_outcome(
            "base",
            &cfg,
            &outcome,
            cfg.run.report_wall_time,
        ));
    }
    let csv = rows_csv(&rows);
    write(&out.join("results.csv"), &csv)?;
    write(&out.join("results.txt"), &aligned(&csv))?;

    let mut brief = String::from("seed,val_acc,test_acc,epochs,energy_mJ,firing_rate\n");
    for r in &rows {
        let _ = writeln!(
            brief,
            "{},{:.4},{:.4},{},{:.6e},{:.4}",
            r.seed, r.val_acc, r.test_acc, r.epochs_run, r.energy_mj, r.firing_rate_mean
        );
    }
    print!("{}", aligned(&brief));
    println!(
        "{}",
        mean_std_line(
            "val acc ",
            &rows.iter().map(|r| r.val_acc).collect::<Vec<_>>()
        )
    );
    println!(
        "{}",
        mean_std_line(
            "test acc",
            &rows.iter().map(|r| r.test_acc).collect::<Vec<_>>()
        )
    );
    Ok(())
}

/// The five ablation variants of `base`: label, changed field and config.
pub fn ablation_variants(base: &RunConfig) -> Vec<(String, String, RunConfig)> {
    let m = &base.model;
    let mut out = vec![("Vanilla".to_string(), "-".to_string(), base.clone())];

    let (norm_to, norm_label) = match m.norm {
        NormKind::Stfn => (NormKind::Batch, "STFN -> BN"),
        NormKind::Batch => (NormKind::Stfn, "BN -> STFN"),
        NormKind::None => (NormKind::Stfn, "none -> STFN"),
    };
    let mut c = base.clone();
    c.model.norm = norm_to;
    out.push((norm_label.into(), format!("norm={norm_to}"), c));

    let (neuron_to, neuron_label) = match m.neuron {
        NeuronKind::Lif => (NeuronKind::Plif, "LIF -> PLIF"),
        NeuronKind::Plif => (NeuronKind::Lif, "PLIF -> LIF"),
    };
    let mut c = base.clone();
    c.model.neuron = neuron_to;
    out.push((neuron_label.into(), format!("neuron={neuron_to}"), c));

    let mut c = base.clone();
    c.model.ms = !m.ms;
    out.push((
        if m.ms { "drop MS" } else { "add MS" }.into(),
        format!("ms={}", !m.ms),
        c,
    ));

    let mut c = base.clone();
    c.model.jk = !m.jk;
    out.push((
        if m.jk { "drop JK" } else { "add JK" }.into(),
        format!("jk={}", !m.jk),
        c,
    ));
    out
}

fn ablation_csv(variants: &[(String, String, RunConfig)], summary: &[CellSummary]) -> String {
    let mut s = String::from(
        "variant,change,runs,val_mean,val_std,test_mean,test_std,energy_mJ_mean,params\n",
    );
    for (label, change, _) in variants {
        let Some(c) = summary.iter().find(|c| &c.cell == label) else {
            continue;
        };
        let _ = writeln!(
            s,
            "{label},{change},{},{},{},{},{},{},{}",
            c.runs, c.val_mean, c.val_std, c.test_mean, c.test_std, c.energy_mean, c.params
        );
    }
    s
}

fn journal_options(out: &Path, force: bool, report_wall_time: bool) -> CliResult<GridOptions> {
    let journal = out.join("journal.tsv");
    if force && journal.exists() {
        fs::remove_file(&journal)
            .map_err(|e| Failure::new(EXIT_OTHER, format!("{}: {e}", journal.display())))?;
    }
    Ok(GridOptions {
        workers: workers()?,
        journal: Some(journal),
        report_wall_time,
    })
}

fn cmd_ablate(shared: &Shared, resume: bool) -> CliResult {
    let cfg = load_config(shared)?;
    let variants = ablation_variants(&cfg);
    for (_, _, v) in &variants {
        validate(v)?;
    }
    if shared.dry_run {
        print!("{}", cfg.to_text());
        for (label, change, _) in &variants {
            println!("# variant {label}: {change}");
        }
        return Ok(());
    }
    let data = load_data(&cfg)?;
    let out = out_dir(&cfg)?;
    prepare_out(&out, shared.force, resume)?;
    write(&out.join("manifest.toml"), &cfg.to_text())?;
    let cells: Vec<GridCell> = variants
        .iter()
        .map(|(label, change, c)| GridCell {
            key: label.clone(),
            overrides: vec![("change".into(), change.clone())],
            config: c.clone(),
        })
        .collect();
    let opts = journal_options(&out, shared.force, cfg.run.report_wall_time)?;
    let res = grid_search(&cells, &data, &cfg.seeds(), &opts).map_err(Failure::runtime)?;
    let rows = rows_csv(&res.rows);
    write(&out.join("results.csv"), &rows)?;
    let table = ablation_csv(&variants, &res.summary);
    write(&out.join("ablation.csv"), &table)?;
    write(&out.join("ablation.txt"), &aligned(&table))?;
    print!("{}", aligned(&table));
    if res.resumed > 0 {
        println!(
            "{} of {} runs taken from the journal",
            res.resumed,
            res.rows.len()
        );
    }
    Ok(())
}

/// Canonical text of `base` with every axis key written back as its list.
pub fn grid_manifest(base: &RunConfig, axes: &[GridAxis]) -> String {
    let mut section = String::new();
    let mut out = String::new();
    for line in base.to_text().lines() {
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.to_string();
        }
        let axis = line
            .split_once(" = ")
            .and_then(|(k, _)| axes.iter().find(|a| a.key == format!("{section}.{k}")));
        match axis {
            Some(a) => {
                let k = a.key.split_once('.').map_or(a.key.as_str(), |p| p.1);
                let _ = writeln!(out, "{k} = [{}]", a.values.join(", "));
            }
            None => {
                out.push_str(line);
                out.push('\n');
            }
        }
    }
    out
}

fn cmd_grid(shared: &Shared, resume: bool) -> CliResult {
    let (cfg, axes) = load_grid_config(shared)?;
    let cells = expand_grid(&cfg, &axes).map_err(Failure::config)?;
    for c in &cells {
        validate(&c.config)?;
    }
    if shared.dry_run {
        print!("{}", grid_manifest(&cfg, &axes));
        println!("# {} cells x {} seeds", cells.len(), cfg.seeds().len());
        return Ok(());
    }
    let data = load_data(&cfg)?;
    let out = out_dir(&cfg)?;
    prepare_out(&out, shared.force, resume)?;
    write(&out.join("manifest.toml"), &grid_manifest(&cfg, &axes))?;
    let opts = journal_options(&out, shared.force, cfg.run.report_wall_time)?;
    let res = grid_search(&cells, &data, &cfg.seeds(), &opts).map_err(Failure::runtime)?;
    write(&out.join("results.csv"), &rows_csv(&res.rows))?;
    let summary = summary_csv(&res.summary);
    write(&out.join("summary.csv"), &summary)?;
    write(&out.join("summary.txt"), &aligned(&summary))?;
    print!("{}", aligned(&summary));
    if res.resumed > 0 {
        println!(
            "{} of {} runs taken from the journal",
            res.resumed,
            res.rows.len()
        );
    }
    Ok(())
}

fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    let text = read_text(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::new(EXIT_INPUT, format!("{}: {e}", path.display())))
}

fn mismatch(msg: impl std::fmt::Display) -> Failure {
    Failure::new(EXIT_CONFIG, format!("checkpoint/model mismatch: {msg}"))
}

fn restore(ckpt: Checkpoint, data: &Dataset) -> CliResult<Model> {
    if ckpt.d_in != data.features.dim() || ckpt.num_classes != data.num_classes() {
        return Err(mismatch(format!(
            "checkpoint expects {} features and {} classes, dataset has {} and {}",
            ckpt.d_in,
            ckpt.num_classes,
            data.features.dim(),
            data.num_classes()
        )));
    }
    let mut model = build_model(&ckpt.model, &data.graph, ckpt.d_in, ckpt.num_classes)
        .map_err(Failure::config)?;
    model.load_state(ckpt.state).map_err(mismatch)?;
    Ok(model)
}

fn cmd_profile(shared: &Shared, checkpoint: Option<&Path>, time_steps: Option<usize>) -> CliResult {
    let mut cfg = load_config(shared)?;
    let ckpt = checkpoint.map(load_checkpoint).transpose()?;
    if let Some(c) = &ckpt {
        if shared.config.is_some() && c.model != cfg.model {
            return Err(mismatch(
                "the model section of --config differs from the checkpoint",
            ));
        }
        cfg.model = c.model.clone();
    }
    if let Some(t) = time_steps {
        cfg.model.time_steps = t;
        validate(&cfg)?;
    }
    if shared.dry_run {
        print!("{}", cfg.to_text());
        return Ok(());
    }
    let data = load_data(&cfg)?;
    let out = out_dir(&cfg)?;
    let mut model = match ckpt {
        Some(c) => restore(c, &data)?,
        None => {
            let mut m = cfg.model.clone();
            m.seed = cfg.run.seeds.0;
            build_model(&m, &data.graph, data.features.dim(), data.num_classes())
                .map_err(Failure::config)?
        }
    };
    if let Some(t) = time_steps {
        model.set_time_steps(t).map_err(Failure::config)?;
    }
    prepare_out(&out, shared.force, false)?;
    let mut manifest = cfg.to_text();
    if let Some(p) = checkpoint {
        let _ = writeln!(manifest, "# checkpoint {}", p.display());
    }
    write(&out.join("manifest.toml"), &manifest)?;
    let (report, _) = profile_model(
        &mut model,
        data.features.values(),
        &CostConstants::default(),
    )
    .map_err(Failure::runtime)?;
    write(&out.join("energy.csv"), &report.to_csv())?;
    let text = report.to_table();
    write(&out.join("energy.txt"), &text)?;
    print!("{text}");
    Ok(())
}
