use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand};

use lutfuse::config::FlatConfig;
use lutfuse::context::Model;
use lutfuse::data::{gen_synthetic, load_manifest, read_image, write_image, BitDepth, ImageFormat, SyntheticSpec};
use lutfuse::error::IoContext;
use lutfuse::lut3d::write_cube;
use lutfuse::metrics::EvalMode;
use lutfuse::trainer::{self, TrainConfig, FINAL_CHECKPOINT, LOSS_LOG};
use lutfuse::{Error, Result};

#[derive(Parser)]
#[command(name = "lutfuse", version, about = "Portrait retouching with adaptive 3D LUT fusion")]
struct Cli {
    /// Overrides the seed of the spec or training config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a seeded synthetic dataset with train and test manifests.
    GenData {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes checkpoints and the loss log to --out.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        no_gam: bool,
        #[arg(long)]
        no_edge: bool,
    },
    /// Retouch one image or every image in a directory.
    Apply {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Run the local-context module in square tiles of this size.
        #[arg(long)]
        tile: Option<usize>,
    },
    /// Score a model on a manifest; writes a table to --report and
    /// key/value lines to <report>.kv.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Quantize outputs to 8 bits before scoring.
        #[arg(long)]
        quantized: bool,
    },
    /// Collapse the LUT bank into one .cube with fixed weights.
    #[command(group(ArgGroup::new("source").required(true).args(["weights", "image"])))]
    ExportCube {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Comma-separated weight per LUT.
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
        /// Derive weights from this photo: image weight times mean pixel weight.
        #[arg(long)]
        image: Option<PathBuf>,
    },
}

fn gen_data(spec: Option<PathBuf>, out: PathBuf, seed: Option<u64>) -> Result<()> {
    let mut config = match spec {
        Some(path) => FlatConfig::load(path)?,
        None => FlatConfig::default(),
    };
    if let Some(seed) = seed {
        config.set("seed", seed);
    }
    let generated = gen_synthetic(&SyntheticSpec::from_config(config)?, &out)?;
    println!("{}", generated.train_path.display());
    println!("{}", generated.test_path.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train(
    config: Option<PathBuf>,
    data: PathBuf,
    out: PathBuf,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    no_gam: bool,
    no_edge: bool,
    seed: Option<u64>,
) -> Result<()> {
    let mut c = match config {
        Some(path) => FlatConfig::load(path)?,
        None => FlatConfig::default(),
    };
    if let Some(v) = epochs {
        c.set("epochs", v);
    }
    if let Some(v) = batch_size {
        c.set("batch_size", v);
    }
    if let Some(v) = lr {
        c.set("lr", v);
    }
    if let Some(v) = seed {
        c.set("seed", v);
    }
    if no_gam {
        c.set("gam", false);
    }
    if no_edge {
        c.set("edge", false);
    }
    let config = TrainConfig::from_config(c)?;
    let manifest = load_manifest(&data)?;
    let (_, report) = trainer::train(&config, &manifest, &out)?;
    if let Some(last) = report.last {
        eprintln!("{} steps, final total loss {:.6e}", report.steps, last.total());
    }
    println!("{}", out.join(FINAL_CHECKPOINT).display());
    println!("{}", out.join(LOSS_LOG).display());
    Ok(())
}

fn is_image(path: &Path) -> bool {
    path.is_file() && ImageFormat::from_path(path).is_ok()
}

fn apply(model: PathBuf, input: PathBuf, output: PathBuf, tile: Option<usize>) -> Result<()> {
    let model = Model::load(model)?;
    let pairs = if input.is_dir() {
        fs::create_dir_all(&output).at(&output)?;
        let mut files = Vec::new();
        for entry in fs::read_dir(&input).at(&input)? {
            let path = entry.at(&input)?.path();
            if is_image(&path) {
                let name = path.file_name().map(PathBuf::from).unwrap_or_default();
                files.push((path, output.join(name)));
            }
        }
        files.sort();
        files
    } else {
        vec![(input, output)]
    };
    for (src, dst) in pairs {
        let img = read_image(&src)?;
        let out = match tile {
            Some(t) => model.retouch_tiled(&img, t)?,
            None => model.retouch(&img)?.image,
        };
        write_image(&dst, &out, BitDepth::Eight)?;
        println!("{}", dst.display());
    }
    Ok(())
}

fn eval(model: PathBuf, data: PathBuf, report: PathBuf, quantized: bool) -> Result<()> {
    let mode = if quantized { EvalMode::Quantized8 } else { EvalMode::Float };
    let r = trainer::evaluate(model, data, mode)?;
    let table = r.to_table();
    fs::write(&report, &table).at(&report)?;
    let mut kv = report.clone().into_os_string();
    kv.push(".kv");
    let kv = PathBuf::from(kv);
    fs::write(&kv, r.to_kv()).at(&kv)?;
    print!("{table}");
    Ok(())
}

fn export_cube(model: PathBuf, output: PathBuf, weights: Option<Vec<f64>>, image: Option<PathBuf>) -> Result<()> {
    let model = Model::load(model)?;
    let weights = match (weights, image) {
        (Some(w), _) => w,
        (None, Some(path)) => {
            let r = model.retouch(&read_image(path)?)?;
            let wp = &r.pixel_weights;
            let pixels = (wp.width() * wp.height()) as f64;
            r.image_weights
                .values()
                .iter()
                .enumerate()
                .map(|(n, wi)| {
                    let plane = &wp.values()[n * wp.width() * wp.height()..(n + 1) * wp.width() * wp.height()];
                    wi * plane.iter().sum::<f64>() / pixels
                })
                .collect()
        }
        (None, None) => return Err(Error::Invalid("export-cube needs --weights or --image".into())),
    };
    let lut = model.bank().collapse(&weights)?;
    let mut bytes = Vec::new();
    write_cube(&mut bytes, &lut).at(&output)?;
    fs::write(&output, bytes).at(&output)?;
    println!("{}", output.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { spec, out } => gen_data(spec, out, cli.seed),
        Command::Train {
            config,
            data,
            out,
            epochs,
            batch_size,
            lr,
            no_gam,
            no_edge,
        } => train(config, data, out, epochs, batch_size, lr, no_gam, no_edge, cli.seed),
        Command::Apply {
            model,
            input,
            output,
            tile,
        } => apply(model, input, output, tile),
        Command::Eval {
            model,
            data,
            report,
            quantized,
        } => eval(model, data, report, quantized),
        Command::ExportCube {
            model,
            output,
            weights,
            image,
        } => export_cube(model, output, weights, image),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
