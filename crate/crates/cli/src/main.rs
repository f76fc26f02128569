//! `distcomp`: generate synthetic latents, fit or train distribution models,
//! compress and decompress latents, and analyze the amortization gap.

mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use distcomp::codecs::{codec_compress, codec_decompress, read_model, static_fit, write_model, DistModel, GmmModel};
use distcomp::coder::{pack_stream, unpack_stream};
use distcomp::eval::{gap_report, generate_corpus, train_learned, SyntheticCorpusSpec};
use distcomp::histogram::latent_histograms;
use distcomp::ltf::{read_ltf, write_ltf};
use distcomp::{LatentTensor, PmfBank};

use config::{Config, ConfigError};

#[derive(Parser)]
#[command(name = "distcomp", version, about = "Lossless latent coding with input-adaptive encoding distributions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.lr=1e-3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FitKind {
    Static,
    Gmm,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus of LTF latents plus ground-truth pmf CSVs.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a static or mixture model to the latents in a directory.
    Fit {
        #[arg(long, value_enum)]
        kind: FitKind,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train a learned distribution compressor.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Loss curve CSV.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Compress one LTF latent into a DCS1 stream.
    Compress {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write the per-channel, per-bin code lengths (-log2 p) used for coding as CSV.
        #[arg(long)]
        dump_nll: Option<PathBuf>,
    },
    /// Decompress a DCS1 stream back to an LTF latent.
    Decompress {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Potential and achieved savings of a model over a static baseline.
    AnalyzeGap {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// A failed command: exit code and a one-line diagnostic.
#[derive(Debug)]
struct Failure {
    code: u8,
    class: &'static str,
    message: String,
}

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_MODEL: u8 = 4;

impl From<distcomp::Error> for Failure {
    fn from(e: distcomp::Error) -> Self {
        let code = match e {
            distcomp::Error::Diverged { .. } => EXIT_MODEL,
            _ => EXIT_DATA,
        };
        Failure { code, class: e.class(), message: e.to_string() }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure { code: EXIT_USAGE, class: "Config", message: e.0 }
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure { code: EXIT_DATA, class: "Io", message: format!("{}: {e}", path.display()) }
}

fn read_file(path: &Path) -> Outcome<Vec<u8>> {
    fs::read(path).map_err(|e| io_failure(path, e))
}

/// Writes `bytes` and reads them back to confirm the file holds exactly them.
fn write_verified(path: &Path, bytes: &[u8]) -> Outcome {
    fs::write(path, bytes).map_err(|e| io_failure(path, e))?;
    if read_file(path)? != bytes {
        return Err(Failure { code: EXIT_DATA, class: "Io", message: format!("{}: read-back differs", path.display()) });
    }
    Ok(())
}

fn model_failure(path: &Path, e: distcomp::Error) -> Failure {
    Failure { code: EXIT_MODEL, class: e.class(), message: format!("{}: {e}", path.display()) }
}

fn load_model(path: &Path) -> Outcome<DistModel> {
    read_model(&read_file(path)?).map_err(|e| model_failure(path, e))
}

fn save_model(path: &Path, model: &DistModel) -> Outcome {
    let bytes = write_model(model);
    write_verified(path, &bytes)?;
    if read_model(&bytes).map_err(|e| model_failure(path, e))? != *model {
        return Err(Failure { code: EXIT_MODEL, class: "Verify", message: format!("{}: model does not reload", path.display()) });
    }
    Ok(())
}

fn load_config(args: &ConfigArgs) -> Outcome<Config> {
    let mut cfg = Config::default();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
        cfg.apply_text(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    }
    for o in &args.overrides {
        cfg.assign(o)?;
    }
    for line in cfg.render().lines() {
        eprintln!("config: {line}");
    }
    Ok(cfg)
}

fn read_latent(path: &Path) -> Outcome<LatentTensor> {
    let file = read_ltf(&read_file(path)?).map_err(|e| Failure::from(e).with_path(path))?;
    if file.clamps > 0 {
        eprintln!("{}: clamped {} out-of-support values", path.display(), file.clamps);
    }
    Ok(file.latent)
}

impl Failure {
    fn with_path(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }
}

/// Every `*.ltf` file in `dir`, sorted by file name.
fn read_dir_latents(dir: &Path) -> Outcome<Vec<LatentTensor>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_failure(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ltf"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Failure { code: EXIT_DATA, class: "Io", message: format!("{}: no .ltf files", dir.display()) });
    }
    paths.iter().map(|p| read_latent(p)).collect()
}

fn pmf_csv(bank: &PmfBank, f: impl Fn(f64) -> f64) -> String {
    let mut out = String::new();
    for p in bank.pmfs() {
        let row: Vec<String> = p.mass().iter().map(|&m| format!("{}", f(m))).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn gen_data(cfg_args: &ConfigArgs, out: &Path) -> Outcome {
    let cfg = load_config(cfg_args)?;
    let spec = SyntheticCorpusSpec {
        channels: cfg.get("corpus.channels")?,
        images: cfg.get("corpus.images")?,
        height: cfg.get("corpus.height")?,
        width: cfg.get("corpus.width")?,
        downscale: cfg.get("corpus.downscale")?,
        spec: cfg.spec()?,
        seed: cfg.get("corpus.seed")?,
        max_shift: cfg.get("corpus.max_shift")?,
        max_scale: cfg.get("corpus.max_scale")?,
    };
    let corpus = generate_corpus(&spec)?;
    fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
    for (i, image) in corpus.iter().enumerate() {
        let path = out.join(format!("img_{i:04}.ltf"));
        write_verified(&path, &write_ltf(&image.latent))?;
        if read_latent(&path)? != image.latent {
            return Err(Failure { code: EXIT_DATA, class: "Verify", message: format!("{}: latent does not reload", path.display()) });
        }
        write_verified(&out.join(format!("img_{i:04}.pmf.csv")), pmf_csv(&image.truth, |m| m).as_bytes())?;
    }
    println!("wrote {} images to {}", corpus.len(), out.display());
    Ok(())
}

fn fit(kind: FitKind, data: &Path, out: &Path, cfg_args: &ConfigArgs) -> Outcome {
    let cfg = load_config(cfg_args)?;
    let latents = read_dir_latents(data)?;
    let model = match kind {
        FitKind::Static => {
            let banks = latents.iter().map(latent_histograms).collect::<Result<Vec<_>, _>>()?;
            DistModel::Static(static_fit(&banks)?)
        }
        FitKind::Gmm => DistModel::Gmm(GmmModel::new(latents[0].spec(), cfg.get("model.K_g")?)?),
    };
    save_model(out, &model)?;
    println!("fitted {} model on {} latents -> {}", model.tag().name(), latents.len(), out.display());
    Ok(())
}

fn train(cfg_args: &ConfigArgs, data: &Path, out: &Path, log: Option<&Path>) -> Outcome {
    let cfg = load_config(cfg_args)?;
    let latents = read_dir_latents(data)?;
    let first = &latents[0];
    let transform = cfg.transform(first.channels(), first.spec().num_bins())?;
    let train_cfg = cfg.train()?;
    let requested: usize = cfg.get("train.val_images")?;
    let n_val = if requested == 0 { (latents.len() / 8).max(1) } else { requested };
    if n_val >= latents.len() {
        return Err(ConfigError(format!("train.val_images = {n_val} leaves no training data")).into());
    }
    let (train_set, val_set) = latents.split_at(latents.len() - n_val);

    let mut curve = String::from("step,lr,train_rate_y,train_rate_q,train_total,val_rate_y,val_rate_q,val_total\n");
    let (model, summary) = train_learned(transform, &train_cfg, train_set, val_set, |s| {
        let t = s.train;
        write!(curve, "{},{},{},{},{}", s.step, s.lr, t.rate_y, t.rate_q, t.total).expect("writing to a String");
        match s.validation {
            Some(v) => {
                writeln!(curve, ",{},{},{}", v.rate_y, v.rate_q, v.total).expect("writing to a String");
                eprintln!("step {:6}  lr {:.1e}  val total {:.1} bits (R_y {:.1}, R_q {:.1})", s.step, s.lr, v.total, v.rate_y, v.rate_q);
            }
            None => curve.push_str(",,,\n"),
        }
    })
    .map_err(|e| Failure { code: EXIT_MODEL, ..Failure::from(e) })?;
    save_model(out, &DistModel::Learned(model))?;
    if let Some(path) = log {
        write_verified(path, curve.as_bytes())?;
    }
    println!(
        "trained {} steps (best validation {:.2} bits/image, {} decays) -> {}",
        summary.steps,
        summary.best_validation,
        summary.decays,
        out.display()
    );
    Ok(())
}

fn compress(model_path: &Path, input: &Path, out: &Path, dump_nll: Option<&Path>) -> Outcome {
    let model = load_model(model_path)?;
    let latent = read_latent(input)?;
    let stream = codec_compress(&latent, &model)?;
    let bytes = pack_stream(&stream);
    write_verified(out, &bytes)?;
    if codec_decompress(&unpack_stream(&bytes)?, &model)? != latent {
        return Err(Failure { code: EXIT_DATA, class: "Verify", message: format!("{}: stream does not decode", out.display()) });
    }
    if let Some(path) = dump_nll {
        let (_, coding) = model.encode_distributions(&latent_histograms(&latent)?)?;
        write_verified(path, pmf_csv(&coding, |m| -m.log2()).as_bytes())?;
    }
    println!(
        "side_bits={} latent_bits={} bpp={}",
        stream.side_bits(),
        stream.latent_bits(),
        stream.payload_bits() as f64 / latent.image_pixels()
    );
    Ok(())
}

fn decompress(model_path: &Path, input: &Path, out: &Path) -> Outcome {
    let model = load_model(model_path)?;
    let stream = unpack_stream(&read_file(input)?).map_err(|e| Failure::from(e).with_path(input))?;
    let latent = codec_decompress(&stream, &model)?;
    write_verified(out, &write_ltf(&latent))?;
    println!("decoded {}x{}x{} latent -> {}", latent.channels(), latent.height(), latent.width(), out.display());
    Ok(())
}

fn analyze_gap(baseline: &Path, model_path: &Path, data: &Path, out: &Path) -> Outcome {
    let base = match load_model(baseline)? {
        DistModel::Static(m) => m,
        other => {
            return Err(Failure {
                code: EXIT_MODEL,
                class: "SpecMismatch",
                message: format!("{}: baseline must be a static model, found {}", baseline.display(), other.tag().name()),
            })
        }
    };
    let model = load_model(model_path)?;
    let latents = read_dir_latents(data)?;
    let report = gap_report(&latents, &model, &base)?;
    write_verified(out, report.to_csv().as_bytes())?;
    print!("{}", report.to_table());
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match &cli.command {
        Command::GenData { cfg, out } => gen_data(cfg, out),
        Command::Fit { kind, data, out, cfg } => fit(*kind, data, out, cfg),
        Command::Train { cfg, data, out, log } => train(cfg, data, out, log.as_deref()),
        Command::Compress { model, input, out, dump_nll } => compress(model, input, out, dump_nll.as_deref()),
        Command::Decompress { model, input, out } => decompress(model, input, out),
        Command::AnalyzeGap { baseline, model, data, out } => analyze_gap(baseline, model, data, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("distcomp: error[{}]: {}", f.class, f.message);
            ExitCode::from(f.code)
        }
    }
}
