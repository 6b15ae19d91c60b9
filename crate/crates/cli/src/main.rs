//! `boostnet`: dataset generation, training, evaluation, inference, the
//! boosting ablation and polar resampling from the command line.
//!
//! Every log line on stdout is one JSON record. Exit status: 0 success,
//! 1 usage or configuration error, 2 data error, 3 numeric failure.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use boostnet_autodiff::Real;
use boostnet_core::ablate::{method_label, run_ablation};
use boostnet_core::checkpoint::{self, file_hash};
use boostnet_core::config::{Precision, RunConfig};
use boostnet_core::eval::{evaluate, ModelSegmenter};
use boostnet_core::image::{Image, Mask, CUP};
use boostnet_core::infer::{infer, overlay, CenterSource};
use boostnet_core::metrics::{merge_od, EvalFrame, EvalReport};
use boostnet_core::pipeline::prepare_window;
use boostnet_core::synth::{generate_dataset, load_dataset, Split};
use boostnet_core::train::Trainer;
use boostnet_core::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "boostnet", version, about = "Boosted optic disc and cup segmentation on polar fundus windows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML run configuration; unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Copy)]
struct TtaFlags {
    /// Average with the prediction on the angle-flipped polar image.
    #[arg(long, overrides_with = "no_tta")]
    tta: bool,
    /// Single forward pass.
    #[arg(long, overrides_with = "tta")]
    no_tta: bool,
}

impl TtaFlags {
    fn resolve(self, default: bool) -> bool {
        match (self.tta, self.no_tta) {
            (true, _) => true,
            (_, true) => false,
            _ => default,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Frame {
    Cartesian,
    Polar,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic fundus dataset (images, masks, manifest).
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
    },
    /// Train a model; writes a JSON-lines log and checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory; defaults to `data.dataset`.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Score a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum)]
        frame: Option<Frame>,
        /// Evaluate the training split instead of the test split.
        #[arg(long)]
        train_split: bool,
        #[command(flatten)]
        tta: TtaFlags,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Segment one fundus image.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Disc centre `X,Y` in pixels.
        #[arg(long, value_parser = parse_center, conflicts_with = "coarse_mask")]
        center: Option<(i64, i64)>,
        /// Full-size mask whose disc centroid gives the centre.
        #[arg(long)]
        coarse_mask: Option<PathBuf>,
        #[command(flatten)]
        tta: TtaFlags,
        /// Render correct/miss/error overlays against `--gt`.
        #[arg(long, requires = "gt")]
        overlay: bool,
        /// Ground-truth mask for overlays.
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate every (seed, boosting stages) arm.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Comma-separated seed list overriding `ablation.seeds`.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Crop a disc window and write it with its polar resampling.
    Polar {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, value_parser = parse_center)]
        center: (i64, i64),
    },
}

fn parse_center(s: &str) -> std::result::Result<(i64, i64), String> {
    let (x, y) = s.split_once(',').ok_or("expected X,Y")?;
    let p = |v: &str| v.trim().parse::<i64>().map_err(|e| format!("{v:?}: {e}"));
    Ok((p(x)?, p(y)?))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            println!("{}", json!({"record": "error", "message": e.to_string(), "exit_code": e.exit_code()}));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// JSON-lines sink writing to stdout and, optionally, a file.
struct Log {
    file: Option<BufWriter<File>>,
}

impl Log {
    fn new(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => Some(BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?)),
            None => None,
        };
        Ok(Self { file })
    }

    fn emit(&mut self, record: &serde_json::Value) -> Result<()> {
        let line = record.to_string();
        println!("{line}");
        if let Some(f) = &mut self.file {
            writeln!(f, "{line}").map_err(|e| Error::io("log", e))?;
        }
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        if let Some(f) = &mut self.file {
            f.flush().map_err(|e| Error::io("log", e))?;
        }
        Ok(())
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

macro_rules! dispatch {
    ($precision:expr, $f:ident($($arg:expr),*)) => {
        match $precision {
            Precision::F32 => $f::<f32>($($arg),*),
            Precision::F64 => $f::<f64>($($arg),*),
        }
    };
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData { common, n_train, n_test } => gen_data(&common, n_train, n_test),
        Command::Train { common, dataset } => {
            let mut cfg = load_config(&common)?;
            if let Some(d) = dataset {
                cfg.data.dataset = d;
            }
            dispatch!(cfg.precision, train(&cfg))
        }
        Command::Eval {
            checkpoint,
            dataset,
            frame,
            train_split,
            tta,
            out,
        } => {
            let header = checkpoint::peek(&checkpoint)?;
            let opts = EvalOptions {
                checkpoint,
                dataset,
                frame,
                split: if train_split { Split::Train } else { Split::Test },
                tta,
                out,
            };
            match header.dtype {
                boostnet_autodiff::DType::F32 => eval::<f32>(&opts),
                boostnet_autodiff::DType::F64 => eval::<f64>(&opts),
            }
        }
        Command::Infer {
            checkpoint,
            image,
            center,
            coarse_mask,
            tta,
            overlay,
            gt,
            out,
        } => {
            let header = checkpoint::peek(&checkpoint)?;
            let opts = InferOptions {
                checkpoint,
                image,
                center,
                coarse_mask,
                tta,
                overlay,
                gt,
                out,
            };
            match header.dtype {
                boostnet_autodiff::DType::F32 => run_infer::<f32>(&opts),
                boostnet_autodiff::DType::F64 => run_infer::<f64>(&opts),
            }
        }
        Command::Ablate { common, dataset, seeds } => {
            let mut cfg = load_config(&common)?;
            if let Some(d) = dataset {
                cfg.data.dataset = d;
            }
            if let Some(s) = seeds {
                cfg.ablation.seeds = s;
            }
            dispatch!(cfg.precision, ablate(&cfg))
        }
        Command::Polar {
            common,
            image,
            mask,
            center,
        } => polar(&common, &image, mask.as_deref(), center),
    }
}

fn gen_data(common: &Common, n_train: Option<usize>, n_test: Option<usize>) -> Result<()> {
    let mut cfg = load_config(&Common { out: None, ..common.clone() })?;
    if let Some(seed) = common.seed {
        cfg.data.synth.seed = seed;
    }
    let dir = common.out.clone().unwrap_or(cfg.data.dataset.clone());
    let (n_train, n_test) = (n_train.unwrap_or(cfg.data.n_train), n_test.unwrap_or(cfg.data.n_test));
    let manifest = generate_dataset(&cfg.data.synth, n_train, n_test, &dir)?;
    Log::new(None)?.emit(&json!({
        "record": "dataset",
        "path": dir,
        "n_train": n_train,
        "n_test": n_test,
        "params_hash": manifest.params_hash,
        "manifest_hash": manifest.hash(),
    }))
}

fn checkpoint_path(dir: &Path, epoch: Option<usize>) -> PathBuf {
    match epoch {
        Some(e) => dir.join("checkpoints").join(format!("epoch{e:04}.ckpt")),
        None => dir.join("final.ckpt"),
    }
}

fn train<T: Real>(cfg: &RunConfig) -> Result<()> {
    let data = load_dataset(&cfg.data.dataset)?;
    let out = cfg.output_dir.clone();
    create_dir(&out)?;
    write_file(&out.join("config.toml"), &cfg.to_toml())?;
    let mut log = Log::new(Some(&out.join("train.jsonl")))?;
    let train = data.split(Split::Train);
    let mut trainer = Trainer::<T>::new(cfg, train.len())?;
    log.emit(&json!({
        "record": "start",
        "config_hash": cfg.hash(),
        "dataset_manifest_hash": data.manifest.hash(),
        "n_train": train.len(),
        "total_iters": trainer.optim.config.total_iters,
        "parameters": trainer.model.params.numel(),
        "precision": T::DTYPE.name(),
    }))?;
    let log = std::cell::RefCell::new(log);
    let every = cfg.train.checkpoint_every;
    trainer.fit(
        train,
        &mut |r| {
            let mut v = serde_json::to_value(r).expect("record serializes");
            v["record"] = json!("train");
            log.borrow_mut().emit(&v)
        },
        &mut |t, epoch| {
            let done = epoch + 1;
            if every > 0 && done % every == 0 && done < cfg.train.epochs {
                let path = checkpoint_path(&out, Some(done));
                let hash = checkpoint::save(t, &path)?;
                log.borrow_mut()
                    .emit(&json!({"record": "checkpoint", "epoch": done, "path": path, "sha256": hash}))?;
            }
            Ok(())
        },
    )?;
    let path = checkpoint_path(&out, None);
    let hash = checkpoint::save(&trainer, &path)?;
    let mut log = log.into_inner();
    log.emit(&json!({"record": "checkpoint", "epoch": cfg.train.epochs, "path": path, "sha256": hash, "final": true}))?;
    log.finish()
}

struct EvalOptions {
    checkpoint: PathBuf,
    dataset: Option<PathBuf>,
    frame: Option<Frame>,
    split: Split,
    tta: TtaFlags,
    out: Option<PathBuf>,
}

fn eval<T: Real>(o: &EvalOptions) -> Result<()> {
    let trainer = checkpoint::load::<T>(&o.checkpoint)?;
    let cfg = &trainer.config;
    let data = load_dataset(o.dataset.as_ref().unwrap_or(&cfg.data.dataset))?;
    let tta = o.tta.resolve(cfg.eval.tta);
    let frame = match o.frame {
        Some(Frame::Cartesian) => EvalFrame::Cartesian,
        Some(Frame::Polar) => EvalFrame::Polar,
        None => cfg.eval.frame,
    };
    let seg = ModelSegmenter {
        model: &trainer.model,
        geometry: cfg.polar.clone(),
        tta,
    };
    let mut report = evaluate(&seg, data.split(o.split), &cfg.polar, frame, tta)?;
    report.config_hash = Some(cfg.hash());
    report.checkpoint_hash = Some(file_hash(&o.checkpoint)?);
    let jsonl = report.to_jsonl();
    print!("{jsonl}");
    if let Some(dir) = &o.out {
        create_dir(dir)?;
        write_file(&dir.join("eval.jsonl"), &jsonl)?;
        let csv = format!("{}\n{}\n", EvalReport::csv_header(), report.csv_row(method_label(cfg.model.stages)));
        write_file(&dir.join("eval.csv"), &csv)?;
    }
    Ok(())
}

struct InferOptions {
    checkpoint: PathBuf,
    image: PathBuf,
    center: Option<(i64, i64)>,
    coarse_mask: Option<PathBuf>,
    tta: TtaFlags,
    overlay: bool,
    gt: Option<PathBuf>,
    out: PathBuf,
}

fn run_infer<T: Real>(o: &InferOptions) -> Result<()> {
    let trainer = checkpoint::load::<T>(&o.checkpoint)?;
    let cfg = &trainer.config;
    let image = Image::load(&o.image)?;
    let source = match (&o.center, &o.coarse_mask) {
        (Some((x, y)), _) => CenterSource::Given(*x, *y),
        (None, Some(p)) => CenterSource::CoarseMask(Mask::load(p)?),
        (None, None) => CenterSource::FirstPass,
    };
    let tta = o.tta.resolve(cfg.eval.tta);
    let result = infer(&trainer.model, &cfg.polar, &image, &source, tta)?;
    create_dir(&o.out)?;
    result.mask.save(&o.out.join("mask.pgm"))?;
    result.window_mask.save(&o.out.join("window_mask.pgm"))?;
    let mut record = json!({
        "record": "infer",
        "center": [result.center.0, result.center.1],
        "tta": tta,
        "mask": o.out.join("mask.pgm"),
    });
    if o.overlay {
        let gt_path = o.gt.as_ref().expect("clap enforces --gt");
        let gt = Mask::load(gt_path)?;
        if (gt.height, gt.width) != (image.height, image.width) {
            return Err(Error::data(gt_path, "ground truth and image sizes differ"));
        }
        let mut counts = serde_json::Map::new();
        for (name, pred, truth) in [
            ("disc", merge_od(&result.mask)?, merge_od(&gt)?),
            ("cup", result.mask.binary(CUP), gt.binary(CUP)),
        ] {
            let (img, c) = overlay(&image, &pred, &truth)?;
            let path = o.out.join(format!("overlay_{name}.png"));
            img.save(&path)?;
            counts.insert(name.into(), serde_json::to_value(c).expect("counts serialize"));
        }
        record["overlay"] = serde_json::Value::Object(counts);
    }
    Log::new(None)?.emit(&record)
}

fn ablate<T: Real>(cfg: &RunConfig) -> Result<()> {
    let data = load_dataset(&cfg.data.dataset)?;
    let out = cfg.output_dir.clone();
    create_dir(&out)?;
    write_file(&out.join("config.toml"), &cfg.to_toml())?;
    let log = std::cell::RefCell::new(Log::new(Some(&out.join("ablate.jsonl")))?);
    let result = run_ablation::<T>(
        cfg,
        data.split(Split::Train),
        data.split(Split::Test),
        &mut |seed, m, r| {
            // One record per epoch keeps the log readable.
            if (r.iter + 1) % cfg.iterations_per_epoch(data.train.len()) as u64 == 0 {
                let mut v = serde_json::to_value(r).expect("record serializes");
                v["record"] = json!("train");
                v["seed"] = json!(seed);
                v["stages"] = json!(m);
                log.borrow_mut().emit(&v)?;
            }
            Ok(())
        },
        &mut |arm| {
            let mean = &arm.report.mean;
            log.borrow_mut().emit(&json!({
                "record": "arm",
                "seed": arm.seed,
                "stages": arm.stages,
                "method": method_label(arm.stages),
                "e_disc": mean.e_disc,
                "e_cup": mean.e_cup,
                "e_rim": mean.e_rim,
            }))?;
            write_file(&out.join(format!("eval_seed{}_m{}.jsonl", arm.seed, arm.stages)), &arm.report.to_jsonl())
        },
    )?;
    let csv = result.to_csv(&cfg.ablation.stages);
    write_file(&out.join("ablation.csv"), &csv)?;
    let provenance = serde_json::to_string_pretty(&result.provenance).expect("provenance serializes");
    write_file(&out.join("provenance.json"), &(provenance + "\n"))?;
    let mut log = log.into_inner();
    log.emit(&json!({"record": "ablation", "csv": out.join("ablation.csv"), "table": csv}))?;
    log.finish()
}

fn polar(common: &Common, image: &Path, mask: Option<&Path>, center: (i64, i64)) -> Result<()> {
    let cfg = load_config(common)?;
    let img = Image::load(image)?;
    let mask = mask.map(Mask::load).transpose()?;
    let p = prepare_window("input", &img, mask.as_ref(), center, &cfg.polar)?;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
    create_dir(&out)?;
    p.window.save(&out.join("window.png"))?;
    p.polar.save(&out.join("polar.png"))?;
    if let Some(m) = &p.polar_mask {
        m.save(&out.join("polar_mask.pgm"))?;
    }
    Log::new(None)?.emit(&json!({
        "record": "polar",
        "window": cfg.polar.window,
        "angles": cfg.polar.angles,
        "radii": cfg.polar.radii,
        "out": out,
    }))
}
