use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use oamtopo::autonet::{alexnet_spec, count_params_flops, read_model, write_model};
use oamtopo::homology::{self, PersistenceDiagram};
use oamtopo::pipeline::dataset::{read_meta, DatasetMeta};
use oamtopo::pipeline::{
    self, generate_dataset, network_spec, precompute_diagrams, read_dataset, run_sweep, split, write_dataset,
    ChannelKind, Dataset, EvalMeta, ExperimentConfig, ModelKind, SweepSummary,
};
use oamtopo::{io, Error, GridSpec, Image};

#[derive(Parser)]
#[command(name = "oamtopo", version, about = "OAM superposition decoding with persistent homology")]
struct Cli {
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Log filter, e.g. warn, info, debug.
    #[arg(long, global = true, default_value = "info")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset of received intensity/phase images.
    Gen(GenArgs),
    /// Compute the persistence diagram cache of a dataset.
    Ph(PhArgs),
    /// Train a model on the training split of a dataset.
    Train(TrainArgs),
    /// Evaluate a model on the test split of a dataset.
    Eval(EvalArgs),
    /// Run the turbulence × bit-length accuracy grid.
    Sweep(SweepArgs),
    /// Parameter and FLOP table of a network.
    Flops(FlopsArgs),
    /// Dump one sample's images (PGM) and diagram (CSV).
    Inspect(InspectArgs),
}

#[derive(Args)]
struct ConfigArg {
    /// Experiment config (TOML). Flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Message bits n (2^n classes).
    #[arg(long)]
    bits: Option<u32>,
    /// Turbulence level T = D / r0.
    #[arg(long)]
    turbulence: Option<f64>,
    #[arg(long)]
    per_class: Option<usize>,
    /// Pixels per axis.
    #[arg(long)]
    side: Option<usize>,
    /// Detector noise, relative to peak intensity.
    #[arg(long)]
    noise: Option<f64>,
    /// Master seed (default: the config seed).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PhArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    model: KindArg,
    /// Diagram cache; computed and written here if missing or stale.
    #[arg(long)]
    diagrams: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss/accuracy CSV.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    diagrams: Option<PathBuf>,
    /// JSON report path; printed to stdout when absent.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Fail with exit code 3 when accuracy is below this value.
    #[arg(long = "assert")]
    assert_min: Option<f64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    out: PathBuf,
    /// Directory for per-cell markers (default: next to the output).
    #[arg(long)]
    work_dir: Option<PathBuf>,
}

#[derive(Args)]
struct FlopsArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long, value_enum, default_value = "alexnet")]
    arch: Arch,
    #[arg(long, default_value_t = 64)]
    batch: usize,
}

#[derive(Args)]
struct InspectArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Cnn,
    #[value(name = "ph_cnn", alias = "ph-cnn")]
    PhCnn,
}

impl From<KindArg> for ModelKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Cnn => ModelKind::Cnn,
            KindArg::PhCnn => ModelKind::PhCnn,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Arch {
    Alexnet,
    Cnn,
    #[value(name = "ph_cnn", alias = "ph-cnn")]
    PhCnn,
}

/// Failure of `eval --assert`.
#[derive(Debug)]
struct AssertFailed(String);

impl std::fmt::Display for AssertFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for AssertFailed {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            eprint!("error_code=usage {}", e.render());
            return ExitCode::from(1);
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    if let Some(j) = cli.jobs {
        if j == 0 {
            eprintln!("error_code=usage --jobs must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            eprintln!("error_code=runtime {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(a) = e.downcast_ref::<AssertFailed>() {
                eprintln!("error_code=assert {a}");
                return ExitCode::from(3);
            }
            eprintln!("error_code={} {e:#}", error_code(&e));
            ExitCode::from(2)
        }
    }
}

fn error_code(e: &anyhow::Error) -> &'static str {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(Error::InvalidParam(_)) => "invalid_param",
        Some(Error::GridMismatch { .. }) => "grid_mismatch",
        Some(Error::Shape { .. }) => "shape",
        Some(Error::BitCountMismatch { .. }) => "bit_count",
        Some(Error::UnsortedComplex { .. }) => "unsorted_complex",
        Some(Error::NonFiniteLoss { .. }) => "non_finite_loss",
        Some(Error::Format { .. }) => "format",
        Some(Error::CacheMismatch { .. }) => "cache_mismatch",
        Some(Error::CorruptCell { .. }) => "corrupt_cell",
        Some(Error::IncompatibleModel(_)) => "incompatible_model",
        Some(Error::Io { .. }) => "io",
        None => "runtime",
    }
}

fn load_config(arg: &ConfigArg) -> anyhow::Result<ExperimentConfig> {
    let cfg = match &arg.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    Ok(cfg)
}

fn log_config(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    cfg.validate()?;
    log::info!("config hash {}", cfg.hash());
    Ok(())
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Gen(a) => gen(a),
        Command::Ph(a) => ph(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
        Command::Flops(a) => flops(a),
        Command::Inspect(a) => inspect(a),
    }
}

fn gen(a: GenArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(&a.config)?;
    if let Some(b) = a.bits {
        cfg.data.n_bits = b;
        if cfg.data.charges.len() != b as usize {
            cfg.data.charges.clear();
        }
    }
    if let Some(t) = a.turbulence {
        cfg.data.turbulence = t;
    }
    if let Some(k) = a.per_class {
        cfg.data.samples_per_class = k;
    }
    if let Some(s) = a.side {
        cfg.data.side = s;
    }
    if let Some(n) = a.noise {
        cfg.data.noise_sigma = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    log_config(&cfg)?;
    let (dataset, meta) = generate_dataset(&cfg.data, cfg.seed)?;
    write_dataset(&a.out, &dataset, &meta)?;
    log::info!("wrote {} samples to {}", dataset.samples.len(), a.out.display());
    Ok(())
}

/// Dataset plus the grid it was sampled on.
fn open_dataset(path: &Path) -> anyhow::Result<(Dataset, DatasetMeta, GridSpec)> {
    let dataset = read_dataset(path).with_context(|| format!("reading {}", path.display()))?;
    let meta = read_meta(path).with_context(|| format!("reading metadata of {}", path.display()))?;
    let grid = GridSpec::new(dataset.side, meta.extent)?;
    Ok((dataset, meta, grid))
}

/// Make the config describe the dataset on disk.
fn adopt_dataset(cfg: &mut ExperimentConfig, dataset: &Dataset, meta: &DatasetMeta) {
    cfg.data.n_bits = dataset.n_bits;
    cfg.data.charges = meta.charges.clone();
    cfg.data.side = dataset.side;
    cfg.data.extent = meta.extent;
    cfg.data.channels = dataset.channels.clone();
    cfg.data.turbulence = meta.turbulence;
}

fn diagrams_for(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    grid: GridSpec,
    cache: Option<&Path>,
) -> anyhow::Result<Vec<PersistenceDiagram>> {
    Ok(match cache {
        Some(p) => precompute_diagrams(dataset, grid, &cfg.filtration, p)?,
        None => pipeline::compute_diagrams(dataset, grid, &cfg.filtration)?,
    })
}

fn ph(a: PhArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(&a.config)?;
    let (dataset, meta, grid) = open_dataset(&a.data)?;
    adopt_dataset(&mut cfg, &dataset, &meta);
    log_config(&cfg)?;
    let d = precompute_diagrams(&dataset, grid, &cfg.filtration, &a.out)?;
    let points: usize = d.iter().map(|x| x.len()).sum();
    log::info!("{} diagrams, {points} points", d.len());
    Ok(())
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(&a.config)?;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    let (dataset, meta, grid) = open_dataset(&a.data)?;
    adopt_dataset(&mut cfg, &dataset, &meta);
    log_config(&cfg)?;
    let kind = ModelKind::from(a.model);
    let diagrams = match kind {
        ModelKind::Cnn => None,
        ModelKind::PhCnn => Some(diagrams_for(&cfg, &dataset, grid, a.diagrams.as_deref())?),
    };
    let (train_idx, _) = split(&dataset, cfg.split_ratio, cfg.seed)?;
    let trained = pipeline::train_model(kind, &cfg, &dataset, diagrams.as_deref(), &train_idx)?;
    write_model(&a.out, &trained.model)?;
    if let Some(h) = &a.history {
        io::write_atomic(h, pipeline::history_csv(&trained.history).as_bytes())?;
    }
    if let Some(last) = trained.history.last() {
        log::info!(
            "trained {kind} for {} epochs: loss {:.4}, train accuracy {:.4}",
            trained.history.len(),
            last.loss,
            last.accuracy
        );
    }
    Ok(())
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(&a.config)?;
    let (dataset, meta, grid) = open_dataset(&a.data)?;
    adopt_dataset(&mut cfg, &dataset, &meta);
    log_config(&cfg)?;
    let model = read_model(&a.model)?;
    let kind = if model.params.bank.is_some() {
        ModelKind::PhCnn
    } else {
        ModelKind::Cnn
    };
    let diagrams = match kind {
        ModelKind::Cnn => None,
        ModelKind::PhCnn => Some(diagrams_for(&cfg, &dataset, grid, a.diagrams.as_deref())?),
    };
    let (_, test_idx) = split(&dataset, cfg.split_ratio, cfg.seed)?;
    let inputs = pipeline::model_inputs(kind, &dataset, diagrams.as_deref(), &test_idx)?;
    let labels: Vec<usize> = test_idx.iter().map(|&i| dataset.samples[i].label as usize).collect();
    let report = pipeline::evaluate(
        &model,
        &inputs,
        &labels,
        EvalMeta {
            model: kind,
            n_bits: dataset.n_bits,
            turbulence: meta.turbulence,
            seed: meta.master_seed,
        },
    )?;
    let json = serde_json::to_string_pretty(&report)?;
    match &a.report {
        Some(p) => io::write_atomic(p, json.as_bytes())?,
        None => println!("{json}"),
    }
    log::info!("accuracy {:.4} (P_e {:.4})", report.accuracy, report.p_e);
    if let Some(min) = a.assert_min {
        if report.accuracy < min {
            return Err(AssertFailed(format!("accuracy {:.4} below {min}", report.accuracy)).into());
        }
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> anyhow::Result<()> {
    let cfg = load_config(&a.config)?;
    log_config(&cfg)?;
    let work = match a.work_dir {
        Some(w) => w,
        None => {
            let mut name = a.out.file_name().ok_or_else(|| anyhow!("--out needs a file name"))?.to_owned();
            name.push(".work");
            a.out.with_file_name(name)
        }
    };
    let rows = run_sweep(&cfg, &work, &a.out)?;
    let summary = SweepSummary::from_rows(&rows);
    for (model, n, t) in summary.monotonicity_violations(0.02) {
        log::warn!("{model} n={n}: median accuracy rises at T={t}");
    }
    if let (Some(&n), Some(&t)) = (
        cfg.sweep.bits.iter().max(),
        cfg.sweep.turbulence.iter().max_by(|a, b| a.total_cmp(b)),
    ) {
        log::info!("median ph_cnn - cnn gap at n={n}, T={t}: {:+.4}", SweepSummary::gap(&rows, n, t));
    }
    log::info!("wrote {} rows to {}", rows.len(), a.out.display());
    Ok(())
}

fn flops(a: FlopsArgs) -> anyhow::Result<()> {
    let cfg = load_config(&a.config)?;
    log_config(&cfg)?;
    if a.batch == 0 {
        bail!(Error::invalid("--batch must be at least 1"));
    }
    let n = cfg.data.n_bits;
    let table = match a.arch {
        Arch::Alexnet => count_params_flops(&alexnet_spec(), None, a.batch)?,
        Arch::Cnn => count_params_flops(&network_spec(ModelKind::Cnn, &cfg, cfg.data.channels.len(), n)?, None, a.batch)?,
        Arch::PhCnn => {
            let spec = network_spec(ModelKind::PhCnn, &cfg, 1, n)?;
            let bank = oamtopo::vectorize::init_bank(
                cfg.bank.kernels,
                &oamtopo::vectorize::even_split(cfg.bank.kernels, cfg.filtration.max_dim),
                &[],
                cfg.bank.nu,
                cfg.bank.norm_mode,
            )?;
            count_params_flops(&spec, Some(&bank), a.batch)?
        }
    };
    print!("{table}");
    Ok(())
}

/// Binary greymap scaled so the brightest pixel is 255.
fn pgm(img: &Image, lo: f64, hi: f64) -> Vec<u8> {
    let side = img.grid.side;
    let mut out = format!("P5\n{side} {side}\n255\n").into_bytes();
    let span = if hi > lo { hi - lo } else { 1.0 };
    out.extend(
        img.values
            .iter()
            .map(|&v| (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

fn inspect(a: InspectArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(&a.config)?;
    let (dataset, meta, grid) = open_dataset(&a.data)?;
    adopt_dataset(&mut cfg, &dataset, &meta);
    log_config(&cfg)?;
    if a.index >= dataset.samples.len() {
        bail!(Error::invalid(format!(
            "index {} but the dataset has {} samples",
            a.index,
            dataset.samples.len()
        )));
    }
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let stem = format!("sample{}", a.index);
    for &kind in &dataset.channels {
        let img = dataset.image(a.index, kind, grid)?;
        let (name, bytes) = match kind {
            ChannelKind::Intensity => ("intensity", pgm(&img, 0.0, img.max())),
            ChannelKind::Phase => ("phase", pgm(&img, -std::f64::consts::PI, std::f64::consts::PI)),
        };
        io::write_atomic(&a.out_dir.join(format!("{stem}_{name}.pgm")), &bytes)?;
    }
    let intensity = dataset.image(a.index, ChannelKind::Intensity, grid);
    if let Ok(img) = intensity {
        let d = homology::diagram_for_intensity(&img, &cfg.filtration)?;
        let mut csv = String::from("dim,birth,death\n");
        for p in d.sorted_points() {
            csv.push_str(&format!("{},{},{}\n", p.dim, p.birth, p.death));
        }
        io::write_atomic(&a.out_dir.join(format!("{stem}_diagram.csv")), csv.as_bytes())?;
        if cfg.filtration.mode == homology::FiltrationMode::Rips {
            let cloud = homology::image_to_cloud(&img, &cfg.filtration)?;
            let mut csv = String::from("x,y,z\n");
            for p in &cloud.points {
                csv.push_str(&format!("{},{},{}\n", p[0], p[1], p[2]));
            }
            io::write_atomic(&a.out_dir.join(format!("{stem}_cloud.csv")), csv.as_bytes())?;
        }
    }
    log::info!(
        "sample {} (label {}) written to {}",
        a.index,
        dataset.samples[a.index].label,
        a.out_dir.display()
    );
    Ok(())
}
