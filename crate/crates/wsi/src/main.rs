use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wsi::config::{FeatureSet, PipelineConfig};
use wsi::dataset::{generate_dataset, GenerateParams};
use wsi::formats::{
    read_annotation, read_annotation_dir, read_dataset, read_detections, read_features, read_heatmap, read_labels,
    read_mask, read_patches, read_predictions, read_scores, write_detections, write_features, write_gray_png,
    write_heatmap, write_mask, write_patches, write_predictions, write_rgb_png, write_scores, Prediction,
};
use wsi::models::{read_forest, write_baseline, write_forest};
use wsi::pipeline::run_pipeline;
use wsi::render::{heatmap_gray, heatmap_overlay, plot_curve};
use wsi::scoring::{score_patches, Scorer};
use wsi::stages;
use wsi::store::PyramidSlide;
use wsi::{Result, WsiError};
use wsi_core::eval::{extract_detections, froc, roc_auc};
use wsi_core::patch::grid_patches;
use wsi_core::pyramid::SlideLabel;
use wsi_core::rng::derive_named_seed;

#[derive(Parser)]
#[command(name = "wsi", version, about = "Whole-slide image tumor screening pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with planted lesions.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Total slide count, split like the reference cohort.
        #[arg(long)]
        slides: Option<usize>,
    },
    /// Compute a tissue mask.
    Mask {
        #[arg(long)]
        slide: PathBuf,
        #[arg(long)]
        level: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample labeled training patches from one slide.
    Sample {
        #[arg(long)]
        slide: PathBuf,
        #[arg(long)]
        annotation: Option<PathBuf>,
        /// Precomputed mask; computed from the slide when absent.
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Slide label; defaults to the label stored with the slide.
        #[arg(long)]
        label: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the baseline patch classifier on labeled patches.
    TrainBaseline {
        #[arg(long)]
        patches: PathBuf,
        /// Dataset manifest used to locate the slides named in the patch list.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Slide directories, as an alternative to --dataset.
        #[arg(long = "slide")]
        slides: Vec<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score patches with one or more models (a baseline file or `exec:<command>`).
    Score {
        #[arg(long = "model", required = true)]
        models: Vec<String>,
        #[arg(long)]
        slide: PathBuf,
        #[arg(long, conflicts_with = "mask", required_unless_present = "mask")]
        patches: Option<PathBuf>,
        /// Score every stride-aligned tissue patch of this mask instead of a patch list.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build, render or threshold heatmaps.
    #[command(subcommand)]
    Heatmap(HeatmapCommand),
    /// Extract slide features from heatmaps.
    Features {
        #[arg(long = "hm", required = true)]
        heatmaps: Vec<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train, apply or inspect the slide-level random forest.
    #[command(subcommand)]
    Rf(RfCommand),
    /// Slide-level ROC and lesion-level FROC.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Run every stage from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum HeatmapCommand {
    /// Assemble a probability grid from patch scores.
    Build {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        slide: PathBuf,
        /// Cell size in level-0 pixels; defaults to the sampler stride.
        #[arg(long)]
        stride: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Overlay the heatmap on a slide thumbnail.
    Render {
        #[arg(long)]
        hm: PathBuf,
        #[arg(long)]
        slide: PathBuf,
        /// Pyramid level of the thumbnail; defaults to the coarsest.
        #[arg(long)]
        level: Option<usize>,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the heatmap itself as a grayscale image.
        #[arg(long)]
        gray: Option<PathBuf>,
    },
    /// One lesion candidate per connected region above the threshold.
    Detect {
        #[arg(long = "hm", required = true)]
        heatmaps: Vec<PathBuf>,
        #[arg(long, default_value_t = wsi_core::eval::DEFAULT_CANDIDATE_THRESHOLD)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum RfCommand {
    /// Fit a forest on a feature table.
    Train {
        #[arg(long)]
        features: PathBuf,
        /// Any CSV with slide_id and label columns, such as the dataset manifest.
        #[arg(long)]
        labels: PathBuf,
        /// Restrict training to one split of a dataset manifest given as --labels.
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Slide tumor probabilities for every row of a feature table.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print feature importances, most important first.
    Importance {
        #[arg(long)]
        model: PathBuf,
    },
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Slide AUC from predictions and labels.
    Roc {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// FROC score of lesion candidates against annotations.
    Froc {
        #[arg(long)]
        det: PathBuf,
        /// Annotation directory; every file in it is one slide.
        #[arg(long)]
        gt: PathBuf,
        #[command(flatten)]
        rates: FpRates,
        #[arg(long)]
        plot: Option<PathBuf>,
    },
}

#[derive(Args)]
struct FpRates {
    #[arg(long = "fp-rates", value_delimiter = ',', num_args = 1..)]
    fp_rates: Vec<f64>,
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn with_seed(path: Option<&Path>, seed: Option<u64>) -> Result<(PipelineConfig, u64)> {
    let mut cfg = load_config(path)?;
    if seed.is_some() {
        cfg.seed = seed;
    }
    let s = cfg.require_seed()?;
    Ok((cfg, s))
}

fn parse_label(s: &str) -> Result<SlideLabel> {
    SlideLabel::parse(s).ok_or_else(|| WsiError::Config(format!("unknown label {s:?}")))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { config, out, seed, slides } => {
            let (mut cfg, seed) = with_seed(config.as_deref(), seed)?;
            if let Some(n) = slides {
                cfg.synth.total_slides = n;
                cfg.synth.counts = None;
            }
            cfg.validate()?;
            let params = GenerateParams {
                synth: cfg.synth.to_core(seed),
                counts: cfg.synth.dataset_counts(),
                tile_size: cfg.synth.tile_size,
                tissue_truth: cfg.synth.tissue_truth.then(|| cfg.roi.to_core()),
            };
            let rows = generate_dataset(&params, seed, &out)?;
            println!("wrote {} slides to {}", rows.len(), out.display());
        }
        Command::Mask { slide, level, config, out } => {
            let cfg = load_config(config.as_deref())?;
            let mut roi = cfg.roi.to_core();
            if level.is_some() {
                roi.mask_level = level;
            }
            let slide = PyramidSlide::open(&slide)?;
            let mask = stages::compute_mask(&slide, &roi)?;
            write_mask(&out, &mask)?;
            let tissue = mask.grid.cells().iter().filter(|&&c| c).count();
            println!("level {} mask, {tissue} tissue pixels", mask.level);
        }
        Command::Sample { slide, annotation, mask, label, config, seed, out } => {
            let (cfg, seed) = with_seed(config.as_deref(), seed)?;
            let slide = PyramidSlide::open(&slide)?;
            let label = match label {
                Some(l) => parse_label(&l)?,
                None => slide
                    .manifest()
                    .label
                    .ok_or_else(|| WsiError::Config("slide has no stored label; pass --label".into()))?,
            };
            let annotation = annotation.map(|p| read_annotation(&p)).transpose()?;
            let mask = match mask {
                Some(p) => read_mask(&p)?,
                None => stages::compute_mask(&slide, &cfg.roi.to_core())?,
            };
            let sampler = cfg.sampler.to_core(derive_named_seed(seed, "sample"));
            let o = stages::sample_slide(slide.slide_id(), label, annotation.as_ref(), &mask, &sampler)?;
            write_patches(&out, &o.patches)?;
            println!(
                "{} tumor, {} normal patches{}",
                o.tumor_count,
                o.normal_count,
                if o.shortfall { " (quota shortfall)" } else { "" }
            );
        }
        Command::TrainBaseline { patches, dataset, slides, config, seed, out } => {
            let (cfg, seed) = with_seed(config.as_deref(), seed)?;
            let mut dirs: BTreeMap<String, PathBuf> = BTreeMap::new();
            if let Some(d) = dataset {
                dirs.extend(read_dataset(&d)?.into_iter().map(|r| (r.slide_id, r.path)));
            }
            for dir in slides {
                let s = PyramidSlide::open(&dir)?;
                dirs.insert(s.slide_id().to_string(), dir);
            }
            let list = read_patches(&patches)?;
            let sampler = cfg.sampler.to_core(0);
            let augment_seed = cfg.baseline.augment.then(|| derive_named_seed(seed, "augment"));
            let mut samples = Vec::with_capacity(list.len());
            let mut start = 0;
            while start < list.len() {
                let id = list[start].slide_id.clone();
                let end = start + list[start..].iter().take_while(|p| p.slide_id == id).count();
                let dir = dirs.get(&id).ok_or_else(|| WsiError::Config(format!("no slide directory for {id}")))?;
                let slide = PyramidSlide::open(dir)?;
                samples.extend(stages::patch_training_samples(&slide, &list[start..end], &sampler, augment_seed)?);
                start = end;
            }
            let outcome = stages::fit_baseline(&samples, &cfg.baseline.to_core(derive_named_seed(seed, "baseline")))?;
            write_baseline(&out, &outcome.model)?;
            if let (Some(first), Some(last)) = (outcome.loss_trace.first(), outcome.loss_trace.last()) {
                println!("{} patches, loss {first:.6} -> {last:.6}", samples.len());
            }
        }
        Command::Score { models, slide, patches, mask, config, out } => {
            let cfg = load_config(config.as_deref())?;
            let slide = PyramidSlide::open(&slide)?;
            let scorers = models.iter().map(|m| Scorer::from_spec(m)).collect::<Result<Vec<_>>>()?;
            let list = match (patches, mask) {
                (Some(p), _) => read_patches(&p)?,
                (None, Some(m)) => grid_patches(slide.slide_id(), &read_mask(&m)?, &cfg.sampler.to_core(0))?,
                (None, None) => unreachable!("clap requires one of --patches and --mask"),
            };
            let scores = score_patches(&scorers, &slide, &list)?;
            write_scores(&out, &scores)?;
            println!("scored {} patches", scores.len());
        }
        Command::Heatmap(cmd) => heatmap(cmd)?,
        Command::Features { heatmaps, config, out } => {
            let cfg = load_config(config.as_deref())?.features.to_core();
            let vectors = heatmaps
                .iter()
                .map(|p| stages::heatmap_features(&read_heatmap(p)?, &cfg))
                .collect::<Result<Vec<_>>>()?;
            write_features(&out, &stages::feature_table(&vectors, &cfg))?;
        }
        Command::Rf(cmd) => rf(cmd)?,
        Command::Eval(cmd) => eval(cmd)?,
        Command::Run { config, seed, workers, dataset, out } => {
            let mut cfg = PipelineConfig::load(&config)?;
            if seed.is_some() {
                cfg.seed = seed;
            }
            if let Some(w) = workers {
                cfg.worker_count = w;
            }
            if dataset.is_some() {
                cfg.paths.dataset = dataset;
            }
            if out.is_some() {
                cfg.paths.output = out;
            }
            let report = run_pipeline(&cfg)?;
            print!("{}", report.to_json());
        }
    }
    Ok(())
}

fn heatmap(cmd: HeatmapCommand) -> Result<()> {
    match cmd {
        HeatmapCommand::Build { scores, slide, stride, config, out } => {
            let stride = match stride {
                Some(s) => s,
                None => load_config(config.as_deref())?.sampler.stride,
            };
            let slide = PyramidSlide::open(&slide)?;
            let hm = stages::build_heatmap(&slide, &read_scores(&scores)?, stride)?;
            write_heatmap(&out, &hm)?;
        }
        HeatmapCommand::Render { hm, slide, level, alpha, out, gray } => {
            let hm = read_heatmap(&hm)?;
            let slide = PyramidSlide::open(&slide)?;
            let level = level.unwrap_or(slide.geometry().level_count() - 1);
            let factor = slide.geometry().level(level)?.factor();
            let thumb = slide.read_level(level)?;
            write_rgb_png(&out, &heatmap_overlay(&hm, &thumb, factor, alpha))?;
            if let Some(g) = gray {
                write_gray_png(&g, hm.width, hm.height, &heatmap_gray(&hm))?;
            }
        }
        HeatmapCommand::Detect { heatmaps, threshold, out } => {
            if !(0.0..=1.0).contains(&threshold) {
                return Err(WsiError::Config("threshold must lie in [0, 1]".into()));
            }
            let mut dets = Vec::new();
            for p in &heatmaps {
                dets.extend(extract_detections(&read_heatmap(p)?, threshold));
            }
            write_detections(&out, &dets)?;
            println!("{} detections", dets.len());
        }
    }
    Ok(())
}

fn rf(cmd: RfCommand) -> Result<()> {
    match cmd {
        RfCommand::Train { features, labels, split, config, seed, out } => {
            let (cfg, seed) = with_seed(config.as_deref(), seed)?;
            let table = read_features(&features)?;
            let labels = match split {
                Some(s) => {
                    let split = wsi_core::synth::Split::parse(&s)?;
                    read_dataset(&labels)?
                        .into_iter()
                        .filter(|r| r.split == split)
                        .map(|r| (r.slide_id, r.label))
                        .collect()
                }
                None => read_labels(&labels)?,
            };
            let set = if table.names.len() == wsi_core::features::FEATURE_COUNT {
                cfg.forest.feature_set
            } else {
                FeatureSet::All
            };
            let forest_cfg = cfg.forest.to_core(derive_named_seed(seed, "forest"));
            let f = stages::train_forest_on(
                &table,
                &|id| labels.get(id).copied(),
                set,
                &cfg.features.to_core(),
                &forest_cfg,
            )?;
            write_forest(&out, &f)?;
            match f.model.oob_error {
                Some(e) => println!("{} trees on {}, oob error {e}", f.model.trees.len(), f.feature_names.join(",")),
                None => println!("{} trees on {}", f.model.trees.len(), f.feature_names.join(",")),
            }
        }
        RfCommand::Predict { model, features, out } => {
            let f = read_forest(&model)?;
            let preds = stages::predict_table(&f, &read_features(&features)?)?;
            let preds: Vec<Prediction> =
                preds.into_iter().map(|(slide_id, p_tumor)| Prediction { slide_id, p_tumor }).collect();
            write_predictions(&out, &preds)?;
        }
        RfCommand::Importance { model } => {
            let f = read_forest(&model)?;
            for k in f.model.ranked_features() {
                println!("{}\t{}", f.feature_names[k], f.model.importances[k]);
            }
        }
    }
    Ok(())
}

fn eval(cmd: EvalCommand) -> Result<()> {
    match cmd {
        EvalCommand::Roc { pred, labels, plot } => {
            let labels = read_labels(&labels)?;
            let scored = read_predictions(&pred)?
                .into_iter()
                .map(|p| {
                    let l = labels
                        .get(&p.slide_id)
                        .ok_or_else(|| WsiError::Config(format!("no label for {}", p.slide_id)))?;
                    Ok((p.p_tumor, l.is_tumor()))
                })
                .collect::<Result<Vec<_>>>()?;
            let r = roc_auc(&scored)?;
            println!("fpr\ttpr");
            for (x, y) in &r.points {
                println!("{x}\t{y}");
            }
            println!("auc\t{}", r.auc);
            if let Some(p) = plot {
                write_rgb_png(&p, &plot_curve(&r.points, 1.0, false))?;
            }
        }
        EvalCommand::Froc { det, gt, rates, plot } => {
            let rates =
                if rates.fp_rates.is_empty() { wsi_core::eval::DEFAULT_FP_RATES.to_vec() } else { rates.fp_rates };
            let truth = read_annotation_dir(&gt)?;
            let r = froc(&read_detections(&det)?, &truth, &rates)?;
            println!("fp_rate\tsensitivity");
            for (rate, s) in rates.iter().zip(&r.sensitivities) {
                println!("{rate}\t{s}");
            }
            println!("score\t{}", r.score);
            if let Some(p) = plot {
                let x_max = rates.iter().copied().fold(0.0, f64::max);
                write_rgb_png(&p, &plot_curve(&r.curve, x_max, true))?;
            }
        }
    }
    Ok(())
}
