//! Argument definitions and command bodies for the `fbi` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use fbi_core::fbi::{DEFAULT_TAU, DEFAULT_TOP_FRACTION};
use fbi_core::image::{self, ImageU8};
use fbi_core::{
    explain_deconvnet, explain_fbi, explain_guided, forward_trace, load_architecture, load_weights,
    save_weights, FbiConfig, Model, SaliencyMap, Tensor, WeightArchive,
};

#[derive(Debug, Parser)]
#[command(name = "fbi", version, about = "Class saliency maps for small CNNs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the top classes as `index<TAB>probability`.
    Predict(ModelArgs),
    /// Write a saliency map for one class.
    Explain(ExplainArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Architecture JSON
    #[arg(long)]
    pub arch: PathBuf,
    /// FBIW weight archive
    #[arg(long)]
    pub weights: PathBuf,
    /// Binary PGM or PPM input image
    #[arg(long)]
    pub image: PathBuf,
    /// Per-channel mean subtracted from pixels (comma separated; default all zero)
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub mean: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Fbi,
    Guided,
    Deconvnet,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value_t = MethodArg::Fbi)]
    pub method: MethodArg,
    /// Forward-backward mask threshold
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f32,
    /// Fraction of top convolutional maps kept
    #[arg(long = "top-frac", default_value_t = DEFAULT_TOP_FRACTION)]
    pub top_frac: f32,
    /// Class to explain (default: top prediction)
    #[arg(long)]
    pub class: Option<usize>,
    /// Output PGM (or PPM with --overlay)
    #[arg(long)]
    pub out: PathBuf,
    /// Draw the saliency in red over the input image
    #[arg(long)]
    pub overlay: bool,
    /// Skip the convolution bias before each transpose
    #[arg(long)]
    pub no_bias_adjoint: bool,
    /// Also write the raw saliency tensor as FBIW (entry "saliency")
    #[arg(long)]
    pub raw_out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Write { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Load { path: PathBuf, source: fbi_core::Error },
    #[error(transparent)]
    Engine(#[from] fbi_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Engine(fbi_core::Error::ClassOutOfRange { .. }) => 3,
            _ => 2,
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|source| CliError::Read {
        path: path.to_owned(),
        source,
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|source| CliError::Write {
        path: path.to_owned(),
        source,
    })
}

fn loaded<T>(path: &Path, r: fbi_core::Result<T>) -> Result<T, CliError> {
    r.map_err(|source| CliError::Load {
        path: path.to_owned(),
        source,
    })
}

struct Loaded {
    model: Model,
    image: ImageU8,
    input: Tensor,
}

fn load(args: &ModelArgs) -> Result<Loaded, CliError> {
    let arch = loaded(&args.arch, load_architecture(&read(&args.arch)?))?;
    let weights = loaded(&args.weights, load_weights(&read(&args.weights)?))?;
    let model = loaded(&args.weights, Model::new(arch, weights))?;
    let image = loaded(&args.image, image::load_pnm(&read(&args.image)?))?;
    let shape = model.arch().input_shape().clone();
    let mean = if args.mean.is_empty() {
        vec![0.0; shape.dims()[0]]
    } else {
        args.mean.clone()
    };
    let input = loaded(&args.image, image::preprocess(&image, &mean, &shape))?;
    Ok(Loaded { model, image, input })
}

/// The text printed by `predict`.
pub fn predict(args: &ModelArgs) -> Result<String, CliError> {
    let l = load(args)?;
    let (_, pred) = forward_trace(&l.model, &l.input)?;
    let mut out = String::new();
    for i in pred.ranked().into_iter().take(5) {
        writeln!(out, "{i}\t{:.6}", pred.probabilities[i]).unwrap();
    }
    Ok(out)
}

pub fn explain(args: &ExplainArgs) -> Result<SaliencyMap, CliError> {
    let mut cfg = FbiConfig::new(args.tau, args.top_frac)?;
    if args.no_bias_adjoint {
        cfg = cfg.without_conv_bias();
    }
    let l = load(&args.model)?;
    let (trace, pred) = forward_trace(&l.model, &l.input)?;
    let class = args.class.unwrap_or(pred.top_class);
    let saliency = match args.method {
        MethodArg::Fbi => explain_fbi(&l.model, &trace, class, &cfg)?,
        MethodArg::Guided => explain_guided(&l.model, &trace, class)?,
        MethodArg::Deconvnet => explain_deconvnet(&l.model, &trace, class)?,
    };
    let picture = if args.overlay {
        image::render_overlay(&saliency, &l.image)?
    } else {
        image::render_grayscale(&saliency)
    };
    write(&args.out, &image::save_pnm(&picture))?;
    if let Some(path) = &args.raw_out {
        let mut archive = WeightArchive::new();
        archive.insert("saliency", saliency.values.clone());
        write(path, &save_weights(&archive))?;
    }
    Ok(saliency)
}

/// Runs one invocation, returning what should go to stdout.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Predict(args) => predict(args),
        Command::Explain(args) => explain(args).map(|_| String::new()),
    }
}
