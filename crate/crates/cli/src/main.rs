//! `spamcam` command-line tool.
//!
//! Exit codes: 0 success, 1 usage, 2 input or format problem, 3 numeric
//! divergence.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use spamcam::backproject::{detect, format_detections};
use spamcam::dataset::{read_sample_dir, write_sample_dir, MnistSet, Split};
use spamcam::eval::{evaluate, Task};
use spamcam::pnm::{overlay, to_gray_bytes, Pnm};
use spamcam::pooling::{gradient_field, PoolingName};
use spamcam::trainer::{train_with_progress, Splits, TrainConfig};
use spamcam::{BackprojectConfig, Checkpoint, Error, NetConfig, PoolingKind, SpamConfig, Tensor};

#[derive(Parser)]
#[command(name = "spamcam", version, about = "Weakly-supervised CAM localization with SPAM pooling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize MNIST128 train/val/test sample directories.
    SynthData {
        #[arg(long, default_value = "data/mnist")]
        mnist_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Sample counts as `train,val,test`.
        #[arg(long, default_value = "10000,2000,2000")]
        counts: String,
    },
    /// Train a model from a `key = value` config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for `model.ckpt` and `report.txt`.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed of the config file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print `task=<name> ap=<value>` lines for a sample directory.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "classification,pinpoint,extent")]
        tasks: String,
        /// Backprojection ratio; defaults to the one stored in the checkpoint.
        #[arg(long)]
        ratio: Option<f64>,
        /// Also write the metrics to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Detect objects in one image (binary PGM/PPM or a raw 8-bit canvas).
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out_overlay: PathBuf,
        /// Detections file; printed to stdout when absent.
        #[arg(long)]
        out_detections: Option<PathBuf>,
        #[arg(long)]
        ratio: Option<f64>,
    },
    /// Time forward + detect per image, single-threaded.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Sample directory written by `synth-data`.
        #[arg(long)]
        images: PathBuf,
        #[arg(long, default_value_t = 5)]
        repeat: usize,
    },
    /// Render a pooling layer's gradient field as a PGM.
    RenderGradients {
        #[arg(long)]
        pooling: PoolingName,
        #[arg(long, default_value_t = 11)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}

enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::from(e).in_file(dir))?;
    }
    fs::write(path, bytes).map_err(|e| Error::from(e).in_file(path))
}

fn ratio_config(ckpt: &Checkpoint, ratio: Option<f64>) -> std::result::Result<BackprojectConfig, Failure> {
    BackprojectConfig::new(ratio.unwrap_or(ckpt.meta.ratio)).map_err(|e| Failure::Usage(e.to_string()))
}

fn run(cmd: Command) -> Outcome {
    match cmd {
        Command::SynthData { mnist_dir, out, seed, counts } => synth_data(&mnist_dir, &out, seed, &counts),
        Command::Train { config, out, seed } => train(&config, &out, seed),
        Command::Eval { checkpoint, data, tasks, ratio, out } => {
            let tasks = tasks
                .split(',')
                .map(|t| t.trim().parse::<Task>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Failure::Usage(e.to_string()))?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let cfg = ratio_config(&ckpt, ratio)?;
            let samples = read_sample_dir(&data)?;
            let metrics = evaluate(&ckpt.model, &samples, &tasks, &cfg)?;
            let text = metrics.to_text();
            print!("{text}");
            if let Some(p) = out {
                write(&p, text)?;
            }
            Ok(())
        }
        Command::Infer { checkpoint, image, out_overlay, out_detections, ratio } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let cfg = ratio_config(&ckpt, ratio)?;
            let (w, h, gray) = read_image(&image, &ckpt.model.config)?;
            let tensor = Tensor::from_vec(&[1, h, w], gray.iter().map(|&b| b as f32 / 255.0).collect())?;
            let dets = detect(&ckpt.model, &tensor, &cfg)?;
            let id = image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let text = format_detections(&id, &dets);
            match out_detections {
                Some(p) => write(&p, text)?,
                None => print!("{text}"),
            }
            let boxes: Vec<_> = dets.iter().map(|d| d.bbox).collect();
            write(&out_overlay, overlay(w, h, &gray, &boxes)?.encode())?;
            Ok(())
        }
        Command::Bench { checkpoint, images, repeat } => {
            if repeat == 0 {
                return Err(Failure::Usage("--repeat must be at least 1".into()));
            }
            let ckpt = Checkpoint::load(&checkpoint)?;
            let cfg = ratio_config(&ckpt, None)?;
            let samples = read_sample_dir(&images)?;
            if samples.is_empty() {
                return Err(Failure::Usage("no images to benchmark".into()));
            }
            let tensors: Vec<_> = samples.iter().map(|s| s.image()).collect();
            let mut ms = Vec::with_capacity(tensors.len() * repeat);
            for _ in 0..repeat {
                for t in &tensors {
                    let start = Instant::now();
                    let dets = detect(&ckpt.model, t, &cfg)?;
                    ms.push(start.elapsed().as_secs_f64() * 1e3);
                    std::hint::black_box(dets);
                }
            }
            ms.sort_by(f64::total_cmp);
            let mean = ms.iter().sum::<f64>() / ms.len() as f64;
            let median = if ms.len() % 2 == 1 {
                ms[ms.len() / 2]
            } else {
                (ms[ms.len() / 2 - 1] + ms[ms.len() / 2]) / 2.0
            };
            println!("images={} runs={} mean_ms={mean:.3} median_ms={median:.3}", tensors.len(), ms.len());
            Ok(())
        }
        Command::RenderGradients { pooling, n, out } => {
            if n == 0 {
                return Err(Failure::Usage("--n must be at least 1".into()));
            }
            let kind = match pooling {
                PoolingName::Gmp => PoolingKind::Gmp,
                PoolingName::Gap => PoolingKind::Gap,
                PoolingName::Spam => PoolingKind::Spam(SpamConfig::default_for(n)),
            };
            let field = gradient_field(&kind, n, (n / 2, n / 2))?;
            let img = Pnm::gray(n, n, to_gray_bytes(field.values()))?;
            write(&out, img.encode())?;
            Ok(())
        }
    }
}

fn synth_data(mnist_dir: &Path, out: &Path, seed: u64, counts: &str) -> Outcome {
    let parsed: Vec<usize> = counts
        .split(',')
        .map(|c| c.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|_| Failure::Usage(format!("--counts expects train,val,test integers, got {counts:?}")))?;
    let [train_size, val_size, test_size] = parsed[..] else {
        return Err(Failure::Usage(format!("--counts expects three values, got {counts:?}")));
    };
    let cfg = TrainConfig {
        seed,
        train_size,
        val_size,
        test_size,
        ..TrainConfig::default()
    };
    let train_set = MnistSet::load(mnist_dir, Split::Train)?;
    let test_set = MnistSet::load(mnist_dir, Split::Test)?;
    let splits = Splits::build(&train_set, &test_set, &cfg)?;
    for (name, samples) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
        write_sample_dir(&out.join(name), samples)?;
    }
    Ok(())
}

fn train(config: &Path, out: &Path, seed: Option<u64>) -> Outcome {
    let mut cfg = TrainConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let ckpt_path = out.join("model.ckpt");
    cfg.checkpoint = None;
    let splits = Splits::load(&cfg)?;
    let (ckpt, report) = train_with_progress(&cfg, &splits.train, &splits.val, |m| eprintln!("{m}"))?;
    write(&ckpt_path, ckpt.to_bytes())?;
    write(&out.join("report.txt"), report.to_text())?;
    let metrics = evaluate(&ckpt.model, &splits.test, &Task::ALL, &BackprojectConfig::new(report.ratio)?)?;
    write(&out.join("metrics.txt"), metrics.to_text())?;
    print!("{}", metrics.to_text());
    eprintln!("trained in {:.1} s", report.seconds);
    Ok(())
}

/// Grayscale raster of `path`, which must match the model input size.
fn read_image(path: &Path, net: &NetConfig) -> Result<(usize, usize, Vec<u8>), Error> {
    let (_, h, w) = net.input;
    let bytes = fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
    let (iw, ih, gray) = if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        let img = Pnm::decode(&bytes).map_err(|e| e.in_file(path))?;
        (img.width, img.height, img.to_gray())
    } else if bytes.len() == w * h {
        (w, h, bytes)
    } else {
        return Err(Error::format(format!(
            "expected a binary PGM/PPM or a raw {w}x{h} canvas of {} bytes, found {} bytes",
            w * h,
            bytes.len()
        ))
        .in_file(path));
    };
    if (iw, ih) != (w, h) {
        return Err(Error::format(format!("image is {iw}x{ih}, the model expects {w}x{h}")).in_file(path));
    }
    Ok((w, h, gray))
}
