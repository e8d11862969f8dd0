//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 config
//! error, 3 runtime failure.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::ToolConfig;
use crate::datagen::{generate_dataset, read_annotations, write_atomic};
use crate::evalmetrics::{evaluate, ground_truth_from_annotations, parse_detections, DEFAULT_MAX_DETS};
use crate::transferlab::{
    run_ablation, run_transfer_experiment, ExperimentConfig, FreezeSchedule, FEATURE_CUT,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "synthfreeze", version, about = "Synthetic detection data, detection metrics and frozen-feature experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the section's master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Output directory.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Dotted-key override such as `generate.sample_count=20`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Print progress to stderr.
    #[arg(short, long)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a dataset (`[generate]` section) into `--output`.
    Generate(ConfigArgs),
    /// Score a detections file against a dataset's annotation file.
    Evaluate {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        dets: PathBuf,
        /// Also write the report as JSON to this file.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MAX_DETS)]
        max_dets: usize,
    },
    /// Feature-distance histograms of the Stage-1 and finetuned extractors
    /// (`[experiment]` section, schedules fully frozen and fully trainable).
    ExperimentDistance(ConfigArgs),
    /// Accuracy for every schedule of the `[experiment]` section.
    ExperimentFreeze(ConfigArgs),
    /// Stage-2 accuracy over the 16 on/off combinations of blur, noise,
    /// lighting jitter and cluttered background (`[experiment]` and
    /// `[ablate]` sections).
    Ablate(ConfigArgs),
    /// Print a resolved config (`--config`) or a dataset summary (`--gt`).
    Inspect {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

/// A failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

fn config_failure(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        message: format!("config error: {e}"),
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_RUNTIME,
        message: format!("error: {e}"),
    }
}

fn load(args: &ConfigArgs) -> Result<ToolConfig, Failure> {
    ToolConfig::load(&args.config, &args.overrides).map_err(config_failure)
}

fn experiment_section(config: &ToolConfig, seed: Option<u64>) -> Result<ExperimentConfig, Failure> {
    let mut x = config
        .experiment
        .clone()
        .ok_or_else(|| config_failure("experiment: section missing"))?;
    if let Some(s) = seed {
        x.data_seed = s;
    }
    Ok(x)
}

fn write_outputs(dir: Option<&Path>, stem: &str, json: &str, table: &str) -> Result<(), Failure> {
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir).map_err(runtime)?;
        write_atomic(&dir.join(format!("{stem}.json")), json.as_bytes()).map_err(runtime)?;
        write_atomic(&dir.join(format!("{stem}.txt")), table.as_bytes()).map_err(runtime)?;
    }
    Ok(())
}

fn run_generate(args: &ConfigArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let config = load(args)?;
    let mut g = config
        .generate
        .ok_or_else(|| config_failure("generate: section missing"))?;
    if let Some(s) = args.seed {
        g.master_seed = s;
    }
    if let Some(o) = &args.output {
        g.output_dir = Some(o.clone());
    }
    if g.output_dir.is_none() {
        return Err(config_failure("generate.output_dir: required (or pass --output)"));
    }
    g.validate().map_err(config_failure)?;
    let manifest = generate_dataset(&g, args.jobs).map_err(runtime)?;
    let _ = writeln!(
        out,
        "wrote {} images to {}",
        manifest.total_images,
        g.output_dir.as_ref().expect("checked").display()
    );
    Ok(())
}

fn run_evaluate(gt: &Path, dets: &Path, output: Option<&Path>, max_dets: usize, out: &mut dyn Write) -> Result<(), Failure> {
    let annotations = read_annotations(gt).map_err(runtime)?;
    let text = std::fs::read_to_string(dets).map_err(|e| runtime(format!("{}: {e}", dets.display())))?;
    let detections = parse_detections(&text).map_err(|e| runtime(format!("{}: {e}", dets.display())))?;
    let (gts, categories) = ground_truth_from_annotations(&annotations);
    let report = evaluate(&detections, &gts, &categories, max_dets).map_err(runtime)?;
    if let Some(path) = output {
        let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
        write_atomic(path, json.as_bytes()).map_err(runtime)?;
    }
    let _ = write!(out, "{}", report.to_table());
    Ok(())
}

fn run_experiment(args: &ConfigArgs, distance_only: bool, out: &mut dyn Write) -> Result<(), Failure> {
    let config = load(args)?;
    let x = experiment_section(&config, args.seed)?;
    x.validate().map_err(config_failure)?;
    let schedules = if distance_only {
        vec![FreezeSchedule::frozen(FEATURE_CUT), FreezeSchedule::none()]
    } else {
        x.schedules.clone()
    };
    if args.verbose {
        eprintln!("training {} seeds x {} schedules", x.seeds.len(), schedules.len());
    }
    let report = run_transfer_experiment(&x, &schedules, args.jobs).map_err(runtime)?;
    let table = report.to_table();
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    let stem = if distance_only { "distance_report" } else { "freeze_report" };
    write_outputs(args.output.as_deref(), stem, &json, &table)?;
    let _ = write!(out, "{table}");
    Ok(())
}

fn run_ablate(args: &ConfigArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let config = load(args)?;
    let x = experiment_section(&config, args.seed)?;
    let a = config.ablate.clone().unwrap_or_default();
    let report = run_ablation(&x, &a, args.jobs).map_err(runtime)?;
    let mut table = report.to_table();
    if let Some(d) = report.blur_delta() {
        table.push_str(&format!("\nblur on minus blur off (other blocks on): {d:+.3}\n"));
    }
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    write_outputs(args.output.as_deref(), "ablation_report", &json, &table)?;
    let _ = write!(out, "{table}");
    Ok(())
}

fn run_inspect(config: Option<&Path>, gt: Option<&Path>, overrides: &[String], out: &mut dyn Write) -> Result<(), Failure> {
    match (config, gt) {
        (Some(c), None) => {
            let config = ToolConfig::load(c, overrides).map_err(config_failure)?;
            let _ = write!(out, "{}", config.to_toml());
        }
        (None, Some(g)) => {
            let a = read_annotations(g).map_err(runtime)?;
            let m = &a.manifest;
            let _ = writeln!(out, "schema version  {}", m.schema_version);
            let _ = writeln!(out, "generator       {}", m.generator_version);
            let _ = writeln!(out, "master seed     {}", m.master_seed);
            let _ = writeln!(out, "images          {}", a.images.len());
            let _ = writeln!(out, "annotations     {}", a.annotations.len());
            for c in &a.categories {
                let n = m
                    .per_class_counts
                    .iter()
                    .find(|k| k.class_id == c.id)
                    .map_or(0, |k| k.count);
                let _ = writeln!(out, "class {:>3} {:<16} {n}", c.id, c.name);
            }
        }
        _ => {
            return Err(Failure {
                code: EXIT_USAGE,
                message: "inspect: pass exactly one of --config or --gt".into(),
            })
        }
    }
    Ok(())
}

pub fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<(), Failure> {
    match &cli.command {
        Command::Generate(a) => run_generate(a, out),
        Command::Evaluate {
            gt,
            dets,
            output,
            max_dets,
        } => run_evaluate(gt, dets, output.as_deref(), *max_dets, out),
        Command::ExperimentDistance(a) => run_experiment(a, true, out),
        Command::ExperimentFreeze(a) => run_experiment(a, false, out),
        Command::Ablate(a) => run_ablate(a, out),
        Command::Inspect { config, gt, overrides } => run_inspect(config.as_deref(), gt.as_deref(), overrides, out),
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code. Results go to stdout, diagnostics to stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    match dispatch(&cli, &mut stdout.lock()) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("{}", f.message);
            f.code
        }
    }
}
