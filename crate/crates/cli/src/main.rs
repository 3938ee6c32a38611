use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use log::{info, LevelFilter};

use cuesnap::cues::{generate_cues, merge_cues, snap_to_superpixels, PresentClasses};
use cuesnap::densecrf::DenseCrf;
use cuesnap::imagery::{
    load_feature_map, load_image, load_mask_png, load_scoremap, resize_bilinear, save_image,
    voc_color,
};
use cuesnap::inference::{predict_mask, AmendSpec};
use cuesnap::metrics::{cues_to_mask, format_iou_csv, format_iou_table, ConfusionMatrix};
use cuesnap::objective::{objective, refine_logits, write_trace_csv, LogitsField};
use cuesnap::pipeline::{run_pipeline, Manifest, ManifestRecord, PipelineConfig, Stage};
use cuesnap::superpixel::{segment_felzenszwalb, SuperPixelLabeling};
use cuesnap::synthetic::{two_shapes, write_scene};
use cuesnap::{CueSet, Error, ImageRgb, LabelMask, Result, ScoreKind, ScoreMap, IGNORE_LABEL};

#[derive(Parser)]
#[command(name = "cuesnap", version, about = "Localization cues, super-pixel snapping, dense CRF refinement and mIoU scoring")]
struct Cli {
    /// JSON configuration file; command-line flags override its values.
    #[arg(long, global = true, env = "CUESNAP_CONFIG")]
    config: Option<PathBuf>,

    /// Worker threads [default: available cores].
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// More log output (-v, -vv).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

/// Flags mirroring configuration keys.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long, global = true, help_heading = "Super-pixels")]
    sigma: Option<f64>,
    #[arg(long, global = true, help_heading = "Super-pixels")]
    k: Option<f64>,
    #[arg(long, global = true, help_heading = "Super-pixels")]
    min_size: Option<usize>,

    #[arg(long, global = true, help_heading = "Dense CRF")]
    w1: Option<f64>,
    #[arg(long, global = true, help_heading = "Dense CRF")]
    w2: Option<f64>,
    #[arg(long, global = true, help_heading = "Dense CRF")]
    sigma_alpha: Option<f64>,
    #[arg(long, global = true, help_heading = "Dense CRF")]
    sigma_beta: Option<f64>,
    #[arg(long, global = true, help_heading = "Dense CRF")]
    sigma_gamma: Option<f64>,
    #[arg(long, global = true, help_heading = "Dense CRF")]
    crf_iterations: Option<usize>,
    /// Images with more pixels use the lattice CRF.
    #[arg(long, global = true, help_heading = "Dense CRF")]
    lattice_cutoff: Option<usize>,

    #[arg(long, global = true, help_heading = "Cues")]
    fg_ratio: Option<f64>,
    #[arg(long, global = true, help_heading = "Cues")]
    bg_abs: Option<f64>,
    #[arg(long, global = true, help_heading = "Cues")]
    snap_ratio: Option<f64>,

    #[arg(long, global = true, help_heading = "Refinement")]
    steps: Option<usize>,
    #[arg(long, global = true, help_heading = "Refinement")]
    lr: Option<f64>,
    #[arg(long, global = true, help_heading = "Refinement")]
    crf_every: Option<usize>,
    #[arg(long, global = true, help_heading = "Inference")]
    margin: Option<f64>,

    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
}

macro_rules! apply {
    ($src:expr => $($field:ident -> $dst:expr),* $(,)?) => {
        $(if let Some(v) = $src.$field.clone() { $dst = v; })*
    };
}

impl Overrides {
    fn apply(&self, cfg: &mut PipelineConfig) {
        apply!(self =>
            sigma -> cfg.felzenszwalb.sigma,
            k -> cfg.felzenszwalb.k,
            min_size -> cfg.felzenszwalb.min_size,
            w1 -> cfg.crf.w1,
            w2 -> cfg.crf.w2,
            sigma_alpha -> cfg.crf.sigma_alpha,
            sigma_beta -> cfg.crf.sigma_beta,
            sigma_gamma -> cfg.crf.sigma_gamma,
            crf_iterations -> cfg.crf.iterations,
            lattice_cutoff -> cfg.io.lattice_cutoff,
            fg_ratio -> cfg.thresholds.fg_ratio,
            bg_abs -> cfg.thresholds.bg_abs,
            snap_ratio -> cfg.thresholds.snap_ratio,
            steps -> cfg.refine.steps,
            lr -> cfg.refine.lr,
            crf_every -> cfg.refine.crf_every,
            margin -> cfg.amend.margin,
            output_dir -> cfg.io.output_dir,
        );
    }
}

#[derive(Subcommand)]
enum Command {
    /// Felzenszwalb super-pixels of an image, saved as an int32 NPY label map.
    Superpixel {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the image with segment boundaries drawn.
        #[arg(long)]
        overlay: Option<PathBuf>,
    },
    /// Cue generation, snapping and merging.
    #[command(subcommand)]
    Cues(CuesCommand),
    /// Loss evaluation.
    #[command(subcommand)]
    Loss(LossCommand),
    /// Gradient-descent refinement of a logits field against cues and the CRF.
    Refine {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        cues: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Initial logits; zeros when absent.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Per-step loss trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Amend, CRF and argmax: scores to a label mask PNG.
    Infer {
        #[arg(long)]
        image: PathBuf,
        /// (K, H, W) probabilities, or logits with --logits.
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        logits: bool,
        /// Predicted foreground classes, e.g. "3,15"; background is implied.
        #[arg(long)]
        predicted: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-class IoU and mIoU of predicted masks against ground truth.
    Eval {
        /// Predicted mask PNGs, or a directory of them.
        #[arg(long, num_args = 1.., required = true)]
        pred: Vec<PathBuf>,
        /// Ground-truth mask PNGs in the same order, or a directory.
        #[arg(long, num_args = 1.., required = true)]
        gt: Vec<PathBuf>,
        #[arg(long, default_value_t = 21)]
        classes: usize,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Renders super-pixels, cues or a mask over an image.
    Viz {
        #[arg(long)]
        image: PathBuf,
        #[arg(long, group = "layer")]
        superpixels: Option<PathBuf>,
        #[arg(long, group = "layer")]
        cues: Option<PathBuf>,
        #[arg(long, group = "layer")]
        mask: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Runs stages over every image of a manifest.
    Pipeline {
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated stages, or "all".
        #[arg(long, default_value = "all")]
        stages: String,
        /// Report path [default: <output_dir>/report.json].
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Writes synthetic two-object scenes and a manifest for them.
    Fixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        count: u64,
    },
    /// Prints the effective configuration as JSON.
    Config,
}

#[derive(Subcommand)]
enum CuesCommand {
    /// Raw cues from activation and feature maps.
    Generate {
        #[arg(long)]
        activations: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Present foreground classes, e.g. "3,15".
        #[arg(long)]
        present: String,
        /// Resample the inputs to this image's size.
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Snaps cues to super-pixels.
    Snap {
        #[arg(long)]
        cues: PathBuf,
        #[arg(long)]
        superpixels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merges two cue sets, foreground winning conflicts.
    Merge {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum LossCommand {
    /// Seeding and boundary losses of a logits field.
    Eval {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        logits: PathBuf,
        #[arg(long)]
        cues: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(match cli.verbose {
            0 => LevelFilter::Warn,
            1 => LevelFilter::Info,
            _ => LevelFilter::Debug,
        })
        .parse_default_env()
        .init();

    let jobs = cli
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
        log::warn!("thread pool: {e}");
    }

    match run(&cli, jobs) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidParam(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    cli.overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn class_list(list: &str) -> Result<Vec<usize>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::InvalidParam(format!("bad class index {s:?}")))
        })
        .collect()
}

fn parent_dirs(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => Ok(std::fs::create_dir_all(dir)?),
        _ => Ok(()),
    }
}

fn run(cli: &Cli, jobs: usize) -> Result<ExitCode> {
    let cfg = config(cli)?;
    match &cli.command {
        Command::Superpixel {
            image,
            out,
            overlay,
        } => {
            let img = load_image(image)?;
            let sp = segment_felzenszwalb(&img, &cfg.felzenszwalb)?;
            parent_dirs(out)?;
            sp.save(out)?;
            if let Some(path) = overlay {
                parent_dirs(path)?;
                sp.save_overlay(&img, [255, 0, 0], path)?;
            }
            println!("{} segments", sp.num_segments);
        }
        Command::Cues(cmd) => cues_command(cmd, &cfg)?,
        Command::Loss(LossCommand::Eval {
            image,
            logits,
            cues,
        }) => {
            let img = load_image(image)?;
            let logits = LogitsField::load(logits)?;
            let cues = CueSet::load(cues)?;
            let crf = DenseCrf::new(&img, &cfg.crf, cfg.io.lattice_cutoff)?;
            let q = crf.infer(&logits.probabilities())?;
            let target: Vec<f64> = q.data.iter().map(|&v| v as f64).collect();
            let (report, _) = objective(
                &logits,
                &cues,
                &target,
                cfg.refine.seeding_weight,
                cfg.refine.boundary_weight,
            )?;
            println!("seeding  {:.6}", report.seeding);
            println!("boundary {:.6}", report.boundary);
            println!("total    {:.6}", report.total);
        }
        Command::Refine {
            image,
            cues,
            out,
            init,
            trace,
        } => {
            let img = load_image(image)?;
            let cues = CueSet::load(cues)?;
            let init = match init {
                Some(p) => LogitsField::load(p)?,
                None => LogitsField::zeros(cues.classes, cues.height, cues.width),
            };
            let outcome = refine_logits(
                &img,
                &init,
                &cues,
                &cfg.crf,
                &cfg.refine,
                cfg.io.lattice_cutoff,
            )?;
            parent_dirs(out)?;
            outcome.logits.save(out)?;
            if let Some(path) = trace {
                parent_dirs(path)?;
                write_trace_csv(&outcome.trace, path)?;
            }
            if let Some(last) = outcome.trace.last() {
                println!(
                    "final loss {:.6} (seeding {:.6}, boundary {:.6})",
                    last.total, last.seeding, last.boundary
                );
            }
        }
        Command::Infer {
            image,
            scores,
            logits,
            predicted,
            out,
        } => {
            let img = load_image(image)?;
            let probs = if *logits {
                LogitsField::load(scores)?.probabilities()
            } else {
                let raw = load_scoremap(scores)?;
                if !raw.is_distribution(1e-3) {
                    return Err(Error::Kind);
                }
                ScoreMap { kind: ScoreKind::Probability, ..raw }
            };
            let spec = AmendSpec::new(&class_list(predicted)?, cfg.amend.margin)?;
            let mask = predict_mask(&img, &probs, &spec, &cfg.crf, cfg.io.lattice_cutoff)?;
            parent_dirs(out)?;
            cuesnap::imagery::save_mask_png(&mask, out)?;
        }
        Command::Eval {
            pred,
            gt,
            classes,
            csv,
        } => {
            let pairs = eval_pairs(pred, gt)?;
            let mut cm = ConfusionMatrix::new(*classes);
            for (p, g) in &pairs {
                info!("{} vs {}", p.display(), g.display());
                cm.accumulate(&load_mask_png(g)?, &load_mask_png(p)?)?;
            }
            print!("{}", format_iou_table(&cm));
            if let Some(path) = csv {
                parent_dirs(path)?;
                std::fs::write(path, format_iou_csv(&cm))?;
            }
        }
        Command::Viz {
            image,
            superpixels,
            cues,
            mask,
            out,
        } => {
            let img = load_image(image)?;
            parent_dirs(out)?;
            if let Some(path) = superpixels {
                SuperPixelLabeling::load(path)?.save_overlay(&img, [255, 0, 0], out)?;
            } else if let Some(path) = cues {
                save_image(&blend(&img, &cues_to_mask(&CueSet::load(path)?))?, out)?;
            } else if let Some(path) = mask {
                save_image(&blend(&img, &load_mask_png(path)?)?, out)?;
            } else {
                return Err(Error::InvalidParam(
                    "viz needs one of --superpixels, --cues or --mask".into(),
                ));
            }
        }
        Command::Pipeline {
            manifest,
            stages,
            report,
        } => {
            let manifest = Manifest::load(manifest)?;
            let stages = Stage::parse_list(stages)?;
            let result = run_pipeline(&manifest, &cfg, &stages, jobs)?;
            let path = report
                .clone()
                .unwrap_or_else(|| cfg.io.output_dir.join("report.json"));
            parent_dirs(&path)?;
            std::fs::write(&path, result.to_json())?;
            for image in &result.images {
                match (&image.error, image.miou) {
                    (Some(e), _) => println!("{:<16} FAILED  {e}", image.image_id),
                    (None, Some(m)) => println!("{:<16} ok      mIoU {:.2}", image.image_id, m * 100.0),
                    (None, None) => println!("{:<16} ok", image.image_id),
                }
            }
            if let Some(m) = result.miou {
                println!("dataset mIoU {:.2}", m * 100.0);
            }
            println!(
                "{} images, {} failed; report {}",
                result.images.len(),
                result.failed,
                path.display()
            );
            return Ok(ExitCode::from(result.exit_code() as u8));
        }
        Command::Fixture { out, seed, count } => {
            let mut records = Vec::new();
            for s in *seed..*seed + *count {
                let id = format!("scene{s:03}");
                let files = write_scene(&two_shapes(s), out, &id)?;
                let rel = |p: &Path| p.strip_prefix(out).unwrap_or(p).to_path_buf();
                records.push(ManifestRecord {
                    image_id: id,
                    image: rel(&files.image),
                    activations: rel(&files.activations),
                    features: rel(&files.features),
                    gray_activations: Some(rel(&files.gray_activations)),
                    gray_features: Some(rel(&files.gray_features)),
                    present: vec![1, 2],
                    gt: Some(rel(&files.ground_truth)),
                    predicted: None,
                });
            }
            let manifest = Manifest { images: records };
            std::fs::write(out.join("manifest.json"), manifest.to_json())?;
            println!("{}", out.join("manifest.json").display());
        }
        Command::Config => println!("{}", cfg.to_json()),
    }
    Ok(ExitCode::SUCCESS)
}

fn cues_command(cmd: &CuesCommand, cfg: &PipelineConfig) -> Result<()> {
    match cmd {
        CuesCommand::Generate {
            activations,
            features,
            present,
            image,
            out,
        } => {
            let mut act = load_scoremap(activations)?;
            let mut feats = load_feature_map(features)?;
            if let Some(path) = image {
                let (h, w) = load_image(path)?.dims();
                act = resize_bilinear(&act, h, w)?;
                feats = resize_bilinear(&feats, h, w)?;
            }
            let present = PresentClasses::new(class_list(present)?, act.classes)?;
            let cues = generate_cues(&act, &feats, &present, &cfg.thresholds)?;
            parent_dirs(out)?;
            cues.save(out)?;
            println!("{} cue elements", cues.count());
        }
        CuesCommand::Snap {
            cues,
            superpixels,
            out,
        } => {
            let snapped = snap_to_superpixels(
                &CueSet::load(cues)?,
                &SuperPixelLabeling::load(superpixels)?,
                &cfg.thresholds,
            )?;
            parent_dirs(out)?;
            snapped.save(out)?;
            println!("{} cue elements", snapped.count());
        }
        CuesCommand::Merge { a, b, out } => {
            let merged = merge_cues(&CueSet::load(a)?, &CueSet::load(b)?)?;
            parent_dirs(out)?;
            merged.save(out)?;
            println!("{} cue elements", merged.count());
        }
    }
    Ok(())
}

/// Pairs prediction and ground-truth files. Directories pair by file name;
/// a `_infer` suffix on the prediction is ignored when matching.
fn eval_pairs(pred: &[PathBuf], gt: &[PathBuf]) -> Result<Vec<(PathBuf, PathBuf)>> {
    if let ([p], [g]) = (pred, gt) {
        if p.is_dir() && g.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "png"))
                .collect();
            files.sort();
            let mut pairs = Vec::new();
            for file in files {
                let name = file.file_name().unwrap().to_string_lossy().into_owned();
                let stripped = name.replace("_infer.png", ".png");
                let target = [g.join(&name), g.join(&stripped)]
                    .into_iter()
                    .find(|c| c.exists())
                    .ok_or_else(|| Error::FileNotFound(g.join(&stripped)))?;
                pairs.push((file, target));
            }
            return Ok(pairs);
        }
    }
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch(pred.len(), gt.len()));
    }
    Ok(pred.iter().cloned().zip(gt.iter().cloned()).collect())
}

/// Half-transparent class colors over the image; ignore pixels are left as is.
fn blend(img: &ImageRgb, mask: &LabelMask) -> Result<ImageRgb> {
    if img.dims() != mask.dims() {
        return Err(Error::DimensionMismatch(format!(
            "image {:?} vs mask {:?}",
            img.dims(),
            mask.dims()
        )));
    }
    let mut out = img.clone();
    for (i, &label) in mask.data.iter().enumerate() {
        if label == IGNORE_LABEL {
            continue;
        }
        let c = voc_color(label);
        for ch in 0..3 {
            let v = &mut out.data[i * 3 + ch];
            *v = ((*v as u16 + c[ch] as u16) / 2) as u8;
        }
    }
    Ok(out)
}
