mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use scene_placer::{PriorKind, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "scene-placer", version, about = "Fit and sample scene-aware object placement models")]
struct Cli {
    #[command(flatten)]
    overrides: ConfigArgs,

    /// Flat JSON file with RunConfig fields; flags take precedence [default: none]
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for frame-parallel commands [default: all cores]
    #[arg(long, global = true, env = "SCENE_PLACER_JOBS")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

/// RunConfig overrides. Unset flags keep the config-file or default value.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// Master seed for all sampling [default: 0]
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Placement band half-width in disparity units [default: 5]
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// New objects proposed per frame (n_objects) [default: 12]
    #[arg(long = "objects-per-frame", global = true)]
    objects_per_frame: Option<usize>,
    /// Comma-separated drivable label indices [default: 0,1,9]
    #[arg(long, global = true, value_delimiter = ',')]
    drivable_classes: Option<Vec<u8>>,
    /// Probability of showing each new object during training [default: 0.5]
    #[arg(long, global = true)]
    show_prob: Option<f64>,
    /// Aspect-ratio histogram bins [default: 50]
    #[arg(long, global = true)]
    n_bins: Option<usize>,
    /// Depth window width for height statistics [default: 2]
    #[arg(long, global = true)]
    window: Option<f64>,
    /// Step between depth windows [default: 1]
    #[arg(long, global = true)]
    stride: Option<f64>,
    /// Annotations per camera and class before using the pooled model [default: 30]
    #[arg(long, global = true)]
    min_samples: Option<usize>,
    /// Objects needed for a depth window to count [default: 10]
    #[arg(long, global = true)]
    min_window_count: Option<usize>,
    /// Minimum in-frame area fraction of a proposal [default: 0.25]
    #[arg(long, global = true)]
    min_visible_frac: Option<f64>,
    /// Resampling attempts per proposal [default: 25]
    #[arg(long, global = true)]
    max_attempts: Option<u32>,
    /// Minimum unoccluded mask fraction after compositing [default: 0.2]
    #[arg(long, global = true)]
    min_visible: Option<f64>,
    /// Disparity per raw unit of depth PGMs [default: 0.00390625]
    #[arg(long, global = true)]
    depth_scale: Option<f64>,
    /// Class prior: uniform or frequency [default: uniform]
    #[arg(long, global = true, value_parser = parse_prior)]
    prior: Option<PriorKind>,
    /// Comma-separated classes eligible for augmentation [default: all fitted]
    #[arg(long, global = true, value_delimiter = ',')]
    augment_classes: Option<Vec<u32>>,
}

fn parse_prior(s: &str) -> Result<PriorKind, String> {
    match s {
        "uniform" => Ok(PriorKind::Uniform),
        "frequency" => Ok(PriorKind::Frequency),
        _ => Err(format!("unknown prior {s:?} (expected uniform or frequency)")),
    }
}

impl ConfigArgs {
    fn apply(&self, c: &mut RunConfig) {
        macro_rules! set {
            ($($flag:ident => $field:ident),* $(,)?) => {
                $(if let Some(v) = &self.$flag { c.$field = v.clone(); })*
            };
        }
        set!(
            seed => seed,
            tau => tau,
            objects_per_frame => n_objects,
            drivable_classes => drivable_classes,
            show_prob => show_prob,
            n_bins => n_bins,
            window => window,
            stride => stride,
            min_samples => min_samples,
            min_window_count => min_window_count,
            min_visible_frac => min_visible_frac,
            max_attempts => max_attempts,
            min_visible => min_visible,
            depth_scale => depth_scale,
            prior => prior,
            augment_classes => augment_classes,
        );
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a location model from annotations and depth grids
    Fit {
        /// COCO-style annotation JSON
        #[arg(long)]
        annotations: PathBuf,
        /// Directory the images' depth_file entries are relative to
        #[arg(long)]
        depth_dir: PathBuf,
        /// Output model JSON
        #[arg(long)]
        out: PathBuf,
    },
    /// Propose new objects for every frame and write one layout JSON per frame
    Augment {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        depth_dir: PathBuf,
        #[arg(long)]
        semantic_dir: PathBuf,
        /// Optional instance masks named <frame_id>_<index>.pgm
        #[arg(long)]
        masks_dir: Option<PathBuf>,
        /// Output directory for <frame_id>.json layouts
        #[arg(long)]
        out: PathBuf,
    },
    /// Refine layout boxes with instance masks and resolve occlusions
    Refine {
        #[arg(long)]
        layout: PathBuf,
        /// Masks named <frame_id>_<index>.pgm
        #[arg(long)]
        masks_dir: PathBuf,
        #[arg(long)]
        width: u32,
        #[arg(long)]
        height: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare layouts with real annotation statistics
    Eval {
        #[arg(long)]
        annotations: PathBuf,
        /// Directory of layout JSON files
        #[arg(long)]
        layouts: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        depth_dir: PathBuf,
        #[arg(long)]
        semantic_dir: PathBuf,
        /// Report JSON path; the text table goes to stdout
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw real and proposed boxes onto a blank PPM canvas
    Render {
        #[arg(long)]
        layout: PathBuf,
        #[arg(long)]
        width: u32,
        #[arg(long)]
        height: u32,
        /// Draw this frame's real boxes too
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| scene_placer::Error::Io { path: path.clone(), source: e })?;
            serde_json::from_str(&text)
                .map_err(|e| scene_placer::Error::Config(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    cli.overrides.apply(&mut config);
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = load_config(&cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.unwrap_or(0))
        .build()?;
    match cli.command {
        Command::Fit {
            annotations,
            depth_dir,
            out,
        } => commands::fit(&annotations, &depth_dir, &config, &out, &pool),
        Command::Augment {
            annotations,
            model,
            depth_dir,
            semantic_dir,
            masks_dir,
            out,
        } => commands::augment(
            &annotations,
            &model,
            &depth_dir,
            &semantic_dir,
            masks_dir.as_deref(),
            &config,
            &out,
            &pool,
        ),
        Command::Refine {
            layout,
            masks_dir,
            width,
            height,
            out,
        } => commands::refine(&layout, &masks_dir, width, height, &config, &out),
        Command::Eval {
            annotations,
            layouts,
            model,
            depth_dir,
            semantic_dir,
            out,
        } => commands::eval(&annotations, &layouts, &model, &depth_dir, &semantic_dir, &config, &out),
        Command::Render {
            layout,
            width,
            height,
            annotations,
            out,
        } => commands::render(&layout, width, height, annotations.as_deref(), &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let input_error = err
                .downcast_ref::<scene_placer::Error>()
                .is_some_and(scene_placer::Error::is_input_error);
            ExitCode::from(if input_error { 2 } else { 1 })
        }
    }
}
