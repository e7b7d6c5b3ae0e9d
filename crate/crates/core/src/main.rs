use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use depthfuse::config::{annotated_template, FusionMode, PipelineConfig};
use depthfuse::metrics::MetricReport;
use depthfuse::pipeline;
use depthfuse::{Error, Result};

#[derive(Parser)]
#[command(name = "depthfuse", version, about = "Probabilistic depth-map fusion for active stereo")]
struct Cli {
    /// Pipeline configuration (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Cap on worker threads. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        /// Number of views on the dome.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train the confidence-to-inlier-probability mapping.
    TrainConfidence {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse depth maps into a volume and extract a mesh.
    Fuse {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<FusionMode>,
        /// Views to fuse, e.g. `0-9`, `0..10`, `1,4,7` or `all`.
        #[arg(long, default_value = "all")]
        views: String,
        /// Inlier mapping for psdf mode.
        #[arg(long)]
        mapping: Option<PathBuf>,
    },
    /// Compare a reconstructed mesh with ground truth.
    Eval {
        #[arg(long)]
        rec: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Per-vertex 0/1 labels restricting the ground truth.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Inlier distance, mm.
        #[arg(long)]
        threshold: Option<f64>,
        /// Write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean absolute SDF error of a volume snapshot against an analytic scene.
    Mad {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        /// Restrict to voxels within this distance of the surface, mm.
        #[arg(long)]
        band: Option<f64>,
    },
    /// Configuration helpers.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Subcommand)]
enum ConfigAction {
    /// Print the annotated default configuration.
    Init {
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_mode(s: &str) -> std::result::Result<FusionMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.simulate.scene_seed = s;
        cfg.simulate.pattern_seed = s;
        cfg.simulate.trajectory.seed = s;
        cfg.simulate.noise.rng_seed = s;
    }
    Ok(cfg)
}

fn config_dir(cli: &Cli) -> PathBuf {
    cli.config
        .as_deref()
        .and_then(Path::parent)
        .map(Path::to_path_buf)
        .unwrap_or_default()
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidArgument("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    let mut cfg = load_config(&cli)?;
    match &cli.command {
        Command::Simulate { out, count } => {
            if let Some(c) = count {
                cfg.simulate.trajectory.count = *c;
            }
            let m = pipeline::run_simulate(&cfg, &config_dir(&cli), out)?;
            println!("wrote {} views to {}", m.views.len(), out.display());
        }
        Command::TrainConfidence { dataset, out } => {
            let m = pipeline::run_train_confidence(&cfg, dataset, out)?;
            println!("p(inlier) = {:.4}", m.p_inlier);
            for c in m.bin_centers() {
                println!("  C = {c:.3}  p(i|C) = {:.4}", m.inlier_probability(c));
            }
            println!("wrote {}", out.display());
        }
        Command::Fuse {
            dataset,
            out,
            mode,
            views,
            mapping,
        } => {
            if let Some(m) = mode {
                cfg.mode = *m;
            }
            if mapping.is_some() {
                cfg.mapping = mapping.clone();
            }
            let res = pipeline::run_fuse(&cfg, dataset, views, out)?;
            for v in &res.log {
                println!(
                    "view {:>4} ({}): updated {} skipped {} rejected {} in {:.2} s",
                    v.index, v.id, v.updated, v.skipped, v.rejected, v.seconds
                );
            }
            println!(
                "mesh: {} vertices, {} triangles -> {}",
                res.mesh.vertices.len(),
                res.mesh.triangles.len(),
                out.display()
            );
        }
        Command::Eval {
            rec,
            gt,
            labels,
            threshold,
            out,
        } => {
            let thr = threshold.unwrap_or(cfg.inlier_threshold);
            let r = pipeline::run_eval(rec, gt, thr, labels.as_deref(), out.as_deref())?;
            println!("{}", MetricReport::table_header());
            println!("{}", r.table_row(&rec.display().to_string()));
        }
        Command::Mad { volume, scene, band } => {
            println!("{:.6}", pipeline::run_mad(volume, scene, *band)?);
        }
        Command::Config {
            action: ConfigAction::Init { out },
        } => {
            let text = annotated_template();
            match out {
                Some(p) => std::fs::write(p, text).map_err(|e| Error::Io {
                    path: p.clone(),
                    source: e,
                })?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
