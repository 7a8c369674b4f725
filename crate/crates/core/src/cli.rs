//! The `relgrad` command: train, eval, sample, grid, bench.
//!
//! A training run writes `model.bin`, `metrics.csv`, `report.json`,
//! `config.json` and `standardization.json` into `--out`. The other
//! subcommands pick up `config.json` (base density) and
//! `standardization.json` from the model's directory when present, so
//! evaluation, samples and grids are reported in raw data space.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::bench::{self, BenchConfig, BenchFlavor};
use crate::data::{self, Dataset, Split, SplitSizes, Standardization, ToyKind};
use crate::error::{Error, Result};
use crate::grad::GradientFlavor;
use crate::invert;
use crate::linalg::Rng;
use crate::model::{self, init_network, BaseDistribution, LogDetCache, Network, Nonlinearity};
use crate::train::{self, Optimizer, TrainConfig};

const DATA_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;
const SAMPLE_STREAM: u64 = 3;

/// Train / validation / test fractions for delimited data.
pub const SPLIT_FRACTIONS: (f64, f64, f64) = (0.8, 0.1, 0.1);

#[derive(Parser, Debug)]
#[command(
    name = "relgrad",
    version,
    about = "Relative-gradient training of invertible networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit a network by maximum likelihood.
    Train(TrainArgs),
    /// Mean log-likelihood of a saved model on a data split.
    Eval(EvalArgs),
    /// Draw samples through the inverse network.
    Sample(SampleArgs),
    /// Density on a regular 2-D grid.
    Grid(GridArgs),
    /// Time the gradient engines across dimensions.
    Bench(BenchArgs),
}

#[derive(Args, Debug, Clone)]
#[group(required = true, multiple = false)]
pub struct Source {
    /// Delimited numeric table, one sample per row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Built-in 2-D toy density.
    #[arg(long)]
    pub toy: Option<ToyKind>,
}

#[derive(Args, Debug, Clone)]
pub struct SourceOptions {
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    /// The table's first row is a header.
    #[arg(long)]
    pub header: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub source: Source,
    #[command(flatten)]
    pub source_options: SourceOptions,
    /// Fit on raw values instead of standardizing delimited data.
    #[arg(long)]
    pub no_standardize: bool,
    /// Checked against the data dimension when given.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, default_value_t = 50)]
    pub layers: usize,
    #[arg(long, default_value_t = Nonlinearity::default())]
    pub nonlinearity: Nonlinearity,
    #[arg(long)]
    pub base: Option<BaseDistribution>,
    #[arg(long, value_parser = ["sgd", "adam"])]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub flavor: Option<GradientFlavor>,
    #[arg(long, overrides_with = "no_bias")]
    pub bias: bool,
    #[arg(long, overrides_with = "bias")]
    pub no_bias: bool,
    /// Apply the nonlinearity after the last layer too.
    #[arg(long)]
    pub final_nonlinearity: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training options as TOML; explicit flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub source: Source,
    #[command(flatten)]
    pub source_options: SourceOptions,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Must match the training seed to reproduce its splits.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub base: Option<BaseDistribution>,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub base: Option<BaseDistribution>,
    /// Defaults to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GridArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = -6.0, allow_hyphen_values = true)]
    pub xmin: f64,
    #[arg(long, default_value_t = 6.0, allow_hyphen_values = true)]
    pub xmax: f64,
    #[arg(long, default_value_t = -6.0, allow_hyphen_values = true)]
    pub ymin: f64,
    #[arg(long, default_value_t = 6.0, allow_hyphen_values = true)]
    pub ymax: f64,
    #[arg(long, default_value_t = 300)]
    pub resolution: usize,
    #[arg(long)]
    pub base: Option<BaseDistribution>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [128usize, 256, 512, 1024])]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub batch: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "relative,ordinary,jacobian"
    )]
    pub flavors: Vec<BenchFlavor>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the table here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Error::io(p, e))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn delimiter_byte(c: char) -> Result<u8> {
    u8::try_from(c)
        .ok()
        .filter(u8::is_ascii)
        .ok_or_else(|| Error::InvalidArgument(format!("delimiter must be ASCII, got '{c}'")))
}

/// Unstandardized splits, reproducible from `seed`.
pub fn load_source(source: &Source, opts: &SourceOptions, seed: u64) -> Result<Dataset> {
    let mut rng = Rng::new(seed).substream(DATA_STREAM);
    match (&source.data, source.toy) {
        (Some(path), None) => {
            let raw = data::load_delimited(path, delimiter_byte(opts.delimiter)?, opts.header)?;
            data::split(&raw, SPLIT_FRACTIONS, &mut rng)
        }
        (None, Some(kind)) => Ok(data::toy_dataset(kind, &mut rng, SplitSizes::default())),
        _ => Err(Error::InvalidArgument(
            "exactly one of --data and --toy is required".into(),
        )),
    }
}

fn sibling(model: &Path, name: &str) -> PathBuf {
    model.parent().unwrap_or_else(|| Path::new(".")).join(name)
}

fn saved_config(model: &Path) -> Result<Option<TrainConfig>> {
    let path = sibling(model, "config.json");
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(Some(serde_json::from_str(&text)?))
}

fn resolve_base(model: &Path, flag: Option<BaseDistribution>) -> Result<BaseDistribution> {
    match flag {
        Some(b) => Ok(b),
        None => {
            Ok(saved_config(model)?
                .map_or(BaseDistribution::StandardNormal, |c| c.base_distribution))
        }
    }
}

fn saved_standardization(model: &Path) -> Result<Option<Standardization>> {
    let path = sibling(model, "standardization.json");
    path.exists()
        .then(|| Standardization::load(&path))
        .transpose()
}

fn train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            toml::from_str(&text).map_err(|e| {
                Error::InvalidArgument(format!("{}: {}", path.display(), e.message()))
            })?
        }
        None => TrainConfig {
            optimizer: Optimizer::adam(1e-3),
            ..TrainConfig::default()
        },
    };
    let lr = args.lr.unwrap_or(cfg.optimizer.lr());
    match args.optimizer.as_deref() {
        Some("sgd") => cfg.optimizer = Optimizer::sgd(lr),
        Some(_) if !matches!(cfg.optimizer, Optimizer::Adam { .. }) => {
            cfg.optimizer = Optimizer::adam(lr)
        }
        _ => match &mut cfg.optimizer {
            Optimizer::Sgd { lr: l } | Optimizer::Adam { lr: l, .. } => *l = lr,
        },
    }
    if let Some(b) = args.batch {
        cfg.batch_size = b;
    }
    if let Some(e) = args.epochs {
        cfg.max_epochs = e;
    }
    if let Some(e) = args.eval_every {
        cfg.eval_every = e;
    }
    if let Some(p) = args.patience {
        cfg.patience = p;
    }
    if let Some(f) = args.flavor {
        cfg.gradient_flavor = f;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(b) = args.base {
        cfg.base_distribution = b;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = train_config(args)?;
    let mut ds = load_source(&args.source, &args.source_options, cfg.seed)?;
    if args.source.data.is_some() && !args.no_standardize {
        ds = data::standardize(&ds)?;
    }
    if let Some(d) = args.dim {
        if d != ds.dim {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: ds.dim,
            });
        }
    }
    let use_bias = !args.no_bias;
    let mut rng = Rng::new(cfg.seed).substream(INIT_STREAM);
    let net = init_network(
        &mut rng,
        ds.dim,
        args.layers,
        args.nonlinearity,
        use_bias,
        args.final_nonlinearity,
        None,
    )?;

    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let report = train::train(net, &ds, &cfg)?;
    report.save(&args.out)?;
    write_json(&args.out.join("config.json"), &cfg)?;
    let st = ds
        .standardization
        .clone()
        .unwrap_or_else(|| Standardization::identity(ds.dim));
    st.save(args.out.join("standardization.json"))?;

    writeln!(out, "epochs: {}", report.epochs_run)?;
    writeln!(out, "best_epoch: {}", report.best_epoch)?;
    writeln!(
        out,
        "best_validation_log_likelihood: {}",
        -report.best_validation_nll
    )?;
    if !ds.test.is_empty() {
        let nll = train::evaluate(&report.best, cfg.base_distribution, &ds.test)?;
        writeln!(out, "test_log_likelihood: {}", -nll)?;
        writeln!(out, "raw_test_log_likelihood: {}", -(nll + st.log_scale()))?;
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let net = model::io::load(&args.model)?;
    let bd = resolve_base(&args.model, args.base)?;
    let ds = load_source(&args.source, &args.source_options, args.seed)?;
    let st = saved_standardization(&args.model)?;
    let xs = ds.split(args.split);
    let xs: Vec<_> = match &st {
        Some(s) => xs.iter().map(|x| s.apply(x)).collect(),
        None => xs.to_vec(),
    };
    let ll = -train::evaluate(&net, bd, &xs)?;
    writeln!(out, "n: {}", xs.len())?;
    writeln!(out, "log_likelihood: {ll}")?;
    if let Some(s) = &st {
        writeln!(out, "raw_log_likelihood: {}", ll - s.log_scale())?;
    }
    Ok(())
}

fn write_rows(w: &mut dyn Write, rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

fn cmd_sample(args: &SampleArgs) -> Result<()> {
    let net = model::io::load(&args.model)?;
    let bd = resolve_base(&args.model, args.base)?;
    let st = saved_standardization(&args.model)?;
    let mut rng = Rng::new(args.seed).substream(SAMPLE_STREAM);
    let xs = invert::sample(&net, bd, &mut rng, args.n)?;
    let mut w = open_out(args.out.as_deref())?;
    write_rows(
        &mut *w,
        xs.into_iter().map(|x| match &st {
            Some(s) => s.invert(&x).into(),
            None => x.into(),
        }),
    )?;
    w.flush()?;
    Ok(())
}

/// Raw-space density at the centers of a `resolution × resolution` grid,
/// row-major in `y` then `x`.
pub fn density_grid(
    net: &Network,
    bd: BaseDistribution,
    st: Option<&Standardization>,
    (xmin, xmax, ymin, ymax): (f64, f64, f64, f64),
    resolution: usize,
) -> Result<Vec<[f64; 3]>> {
    if net.dim() != 2 {
        return Err(Error::InvalidArgument(format!(
            "grid needs a 2-D model, got D={}",
            net.dim()
        )));
    }
    if !(xmin < xmax && ymin < ymax) || resolution == 0 {
        return Err(Error::InvalidArgument(
            "grid needs xmin < xmax, ymin < ymax and resolution >= 1".into(),
        ));
    }
    let cache = LogDetCache::new(net);
    cache.ensure_nonsingular()?;
    let correction = st.map_or(0.0, Standardization::log_scale);
    let dx = (xmax - xmin) / resolution as f64;
    let dy = (ymax - ymin) / resolution as f64;
    let mut rows = Vec::with_capacity(resolution * resolution);
    for j in 0..resolution {
        let y = ymin + (j as f64 + 0.5) * dy;
        for i in 0..resolution {
            let x = xmin + (i as f64 + 0.5) * dx;
            let z = match st {
                Some(s) => s.apply(&[x, y]).into(),
                None => vec![x, y],
            };
            let ll = model::log_likelihood_cached(net, bd, &z, &cache)?;
            rows.push([x, y, (ll.total - correction).exp()]);
        }
    }
    Ok(rows)
}

fn cmd_grid(args: &GridArgs) -> Result<()> {
    let net = model::io::load(&args.model)?;
    let bd = resolve_base(&args.model, args.base)?;
    let st = saved_standardization(&args.model)?;
    let rows = density_grid(
        &net,
        bd,
        st.as_ref(),
        (args.xmin, args.xmax, args.ymin, args.ymax),
        args.resolution,
    )?;
    let mut w = open_out(args.out.as_deref())?;
    write_rows(&mut *w, rows.iter().map(|r| r.to_vec()))?;
    w.flush()?;
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let cfg = BenchConfig {
        dims: args.dims.clone(),
        batch: args.batch,
        layers: args.layers,
        reps: args.reps,
        flavors: args.flavors.clone(),
        seed: args.seed,
        ..BenchConfig::default()
    };
    let report = bench::bench_gradients(&cfg)?;
    let mut w = open_out(args.out.as_deref())?;
    report.write_table(&mut *w)?;
    w.flush()?;
    report.write_summary(io::stderr().lock())?;
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut stdout = io::stdout().lock();
    match &cli.command {
        Command::Train(a) => cmd_train(a, &mut stdout),
        Command::Eval(a) => cmd_eval(a, &mut stdout),
        Command::Sample(a) => cmd_sample(a),
        Command::Grid(a) => cmd_grid(a),
        Command::Bench(a) => cmd_bench(a),
    }
}
