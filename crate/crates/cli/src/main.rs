//! `cauzen` command-line front end.
//!
//! Exit codes: 0 on success, 2 for usage or validation errors, 1 for runtime
//! failures (I/O, diverged training).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cauzen_core::causality::{
    causality_map, extract_factors, CausalityMap, Direction, Estimator, FeatureStack, Mode,
};
use cauzen_core::config::ExperimentConfig;
use cauzen_core::data::{
    generate_synthetic, read_cten, Dataset, SyntheticSpec, IMAGES_FILE,
};
use cauzen_core::model::{
    evaluate, grad_cam, load_checkpoint, log_to_csv, save_checkpoint, train, DEFAULT_K,
};
use cauzen_core::textfmt::format_row;
use clap::{Parser, Subcommand, ValueEnum};

const LOG_FILE: &str = "log.csv";
const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Parser)]
#[command(name = "cauzen", version, about = "Causality factors for convolutional feature maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset into train/, val/ and test/.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Training images (even).
        #[arg(long)]
        train: Option<usize>,
        /// Validation images (even).
        #[arg(long)]
        val: Option<usize>,
        /// Test images (even).
        #[arg(long)]
        test: Option<usize>,
        /// Image side in pixels, a multiple of 8.
        #[arg(long)]
        side: Option<usize>,
        #[arg(long)]
        intensity: Option<f32>,
        /// Standard deviation of the pixel noise.
        #[arg(long)]
        noise: Option<f32>,
        /// Probability of motif B given motif A in class 1.
        #[arg(long)]
        cooccur: Option<f64>,
    },
    /// Train a model; writes the checkpoint, its manifest and log.csv.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dataset root holding train/ and val/.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print accuracy and AUROC of a checkpoint, then a CSV row.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// A split directory, or a dataset root holding test/.
        #[arg(long)]
        data: PathBuf,
    },
    /// Causality map of a [k,n,n] feature stack.
    Cmap {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        /// Lehmer exponent, required with --method lehmer.
        #[arg(long, allow_negative_numbers = true)]
        p: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Causality factors of a map CSV.
    Factors {
        #[arg(long)]
        cmap: PathBuf,
        #[arg(long)]
        direction: Direction,
        #[arg(long)]
        mode: Mode,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grad-CAM heat map of one [c,h,w] image as an h x w CSV grid.
    Cam {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        class: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Max,
    Lehmer,
}

enum Failure {
    Usage(String),
    Core(cauzen_core::Error),
}

impl From<cauzen_core::Error> for Failure {
    fn from(e: cauzen_core::Error) -> Self {
        Failure::Core(e)
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = cauzen_core::init_threads_from_env()
        .map_err(Failure::from)
        .and_then(|()| run(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}

fn run(command: Command) -> CmdResult {
    match command {
        Command::Synth {
            out,
            seed,
            train,
            val,
            test,
            side,
            intensity,
            noise,
            cooccur,
        } => {
            let d = SyntheticSpec::default();
            let spec = SyntheticSpec {
                seed: seed.unwrap_or(d.seed),
                train: train.unwrap_or(d.train),
                val: val.unwrap_or(d.val),
                test: test.unwrap_or(d.test),
                side: side.unwrap_or(d.side),
                intensity: intensity.unwrap_or(d.intensity),
                noise_std: noise.unwrap_or(d.noise_std),
                cooccurrence: cooccur.unwrap_or(d.cooccurrence),
            };
            cmd_synth(&spec, &out)
        }
        Command::Train { config, data, out } => cmd_train(&config, &data, &out),
        Command::Eval { model, data } => cmd_eval(&model, &data),
        Command::Cmap {
            input,
            method,
            p,
            out,
        } => {
            let estimator = match (method, p) {
                (Method::Max, None) => Estimator::Max,
                (Method::Max, Some(_)) => {
                    return Err(Failure::Usage("--p only applies to --method lehmer".into()))
                }
                (Method::Lehmer, Some(p)) => Estimator::Lehmer { p },
                (Method::Lehmer, None) => {
                    return Err(Failure::Usage("--method lehmer requires --p".into()))
                }
            };
            cmd_cmap(&input, estimator, &out)
        }
        Command::Factors {
            cmap,
            direction,
            mode,
            out,
        } => cmd_factors(&cmap, direction, mode, out.as_deref()),
        Command::Cam {
            model,
            image,
            class,
            out,
        } => cmd_cam(&model, &image, class, &out),
    }
}

fn write_file(path: &Path, contents: &str) -> CmdResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn read_file(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, source: std::io::Error) -> Failure {
    Failure::Core(cauzen_core::Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn cmd_synth(spec: &SyntheticSpec, out: &Path) -> CmdResult {
    let data = generate_synthetic(spec)?;
    for (name, split) in SPLITS.iter().zip([&data.train, &data.val, &data.test]) {
        split.save(out.join(name))?;
    }
    println!(
        "wrote {} train / {} val / {} test images to {}",
        data.train.len(),
        data.val.len(),
        data.test.len(),
        out.display()
    );
    Ok(())
}

fn cmd_train(config: &Path, data: &Path, out: &Path) -> CmdResult {
    let config = ExperimentConfig::parse(&read_file(config)?)?;
    let train_set = Dataset::load(data.join("train"))?;
    let val_set = Dataset::load(data.join("val"))?;
    let outcome = train(&config, DEFAULT_K, &train_set, &val_set)?;
    save_checkpoint(out, &outcome.model, &config, outcome.best_epoch)?;
    write_file(&out.join(LOG_FILE), &log_to_csv(&outcome.log))?;
    println!(
        "trained {} for {} epochs; best epoch {}; checkpoint in {}",
        config.head.head,
        config.epochs,
        outcome.best_epoch,
        out.display()
    );
    Ok(())
}

fn cmd_eval(model: &Path, data: &Path) -> CmdResult {
    let checkpoint = load_checkpoint(model)?;
    let split = if data.join(IMAGES_FILE).exists() {
        data.to_path_buf()
    } else {
        data.join("test")
    };
    let set = Dataset::load(&split)?;
    let report = evaluate(&checkpoint.model, &set)?;
    let auroc = report
        .auroc
        .map_or_else(|| "NA".to_string(), |a| format_row([a]));
    let accuracy = format_row([report.accuracy]);
    println!("accuracy: {accuracy}");
    match report.auroc {
        Some(_) => println!("auroc: {auroc}"),
        None => println!("auroc: NA (single-class set)"),
    }
    println!("accuracy,auroc,n");
    println!("{accuracy},{auroc},{}", set.len());
    Ok(())
}

fn cmd_cmap(input: &Path, estimator: Estimator, out: &Path) -> CmdResult {
    let stack = FeatureStack::from_tensor(&read_cten(input)?)?;
    let map = causality_map(&stack, estimator)?;
    write_file(out, &map.to_csv())
}

fn cmd_factors(cmap: &Path, direction: Direction, mode: Mode, out: Option<&Path>) -> CmdResult {
    let map = CausalityMap::from_csv(&read_file(cmap)?)?;
    let csv = extract_factors(&map, direction, mode).to_csv();
    match out {
        Some(path) => write_file(path, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn cmd_cam(model: &Path, image: &Path, class: usize, out: &Path) -> CmdResult {
    let checkpoint = load_checkpoint(model)?;
    let cam = grad_cam(&checkpoint.model, &read_cten(image)?, class)?;
    let width = cam.shape()[1];
    let mut csv = String::new();
    for row in cam.data().chunks(width) {
        csv.push_str(&format_row(row.iter().map(|&v| v as f64)));
        csv.push('\n');
    }
    write_file(out, &csv)
}
