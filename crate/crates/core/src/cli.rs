//! Command-line front end. Every subcommand wraps one pipeline stage.
//!
//! Exit codes: 0 success, 1 other failure, 2 invalid input (format, I/O,
//! configuration), 3 empty edge atlas, 4 split leakage, 5 checkpoint or
//! configuration hash mismatch.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::gnn::{GraphDataset, MUTANT};
use crate::pipeline::{
    ae_encode_stage, ae_train_stage, atlas_build, features_extract, gnn_eval_stage, gnn_train_stage, graph_build_stage,
    explain_stage, log_path, split_beside, PipelineConfig, RoiKind, SplitManifest, DEFAULT_THRESHOLDS,
};
use crate::synth::{generate_atlas_pair, generate_graph_cohort, generate_phantom_cohort, layout, write_graph_level, write_volume_level, SynthConfig};
use crate::atlas::{build_edge_atlas, DEFAULT_QUORUM, DEFAULT_TOP_FRACTION};

#[derive(Debug, Parser)]
#[command(name = "idhnet", version, about = "Brain-network IDH classification pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Edge atlas construction
    #[command(subcommand)]
    Atlas(AtlasCmd),
    /// Voxel-vector extraction
    #[command(subcommand)]
    Features(FeaturesCmd),
    /// Node and edge autoencoders
    #[command(subcommand)]
    Ae(AeCmd),
    /// Graph dataset assembly
    #[command(subcommand)]
    Graph(GraphCmd),
    /// Graph classifier training and evaluation
    #[command(subcommand)]
    Gnn(GnnCmd),
    /// Edge-importance explanations
    #[command(subcommand)]
    Explain(ExplainCmd),
    /// Synthetic cohorts
    #[command(subcommand)]
    Synth(SynthCmd),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// Pipeline configuration (JSON); flags override its fields
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<PipelineConfig> {
        Ok(match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        })
    }
}

#[derive(Debug, Subcommand)]
pub enum AtlasCmd {
    Build {
        /// Directory of per-subject tract density volumes
        #[arg(long)]
        densities: PathBuf,
        #[arg(long, default_value_t = DEFAULT_QUORUM)]
        quorum: usize,
        #[arg(long = "top-frac", default_value_t = DEFAULT_TOP_FRACTION)]
        top_frac: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum FeaturesCmd {
    Extract {
        /// Cohort directory holding cohort.json and per-subject scans
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long = "node-atlas")]
        node_atlas: PathBuf,
        #[arg(long = "edge-atlas")]
        edge_atlas: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        config: ConfigArg,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Node,
    Edge,
}

#[derive(Debug, Subcommand)]
pub enum AeCmd {
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        config: ConfigArg,
    },
    Encode {
        #[arg(long)]
        features: PathBuf,
        #[arg(long = "node-model")]
        node_model: PathBuf,
        #[arg(long = "edge-model")]
        edge_model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum GraphCmd {
    Build {
        #[arg(long)]
        latents: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum GnnCmd {
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Split manifest; defaults to split.json beside the dataset
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        config: ConfigArg,
    },
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        split: Option<PathBuf>,
        /// Where to write the metrics JSON
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArg,
    },
}

#[derive(Debug, Subcommand)]
pub enum ExplainCmd {
    Run {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long = "edge-atlas")]
        edge_atlas: PathBuf,
        /// Subject id; defaults to the first wild-type subject
        #[arg(long)]
        subject: Option<String>,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_THRESHOLDS)]
        thresholds: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Level {
    Volume,
    Graph,
}

#[derive(Debug, Subcommand)]
pub enum SynthCmd {
    Generate {
        #[arg(long, value_enum)]
        level: Level,
        /// Synthetic cohort configuration (JSON); defaults when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Format { .. }
        | Error::Io { .. }
        | Error::Json { .. }
        | Error::Config(_)
        | Error::Dimension(_)
        | Error::Data(_)
        | Error::Lookup(_) => 2,
        Error::EmptyAtlas => 3,
        Error::Leakage(_) => 4,
        Error::Mismatch(_) => 5,
        Error::Divergence(_) | Error::Internal(_) => 1,
    }
}

fn echo_config(dir: &Path, config: &PipelineConfig) -> Result<()> {
    config.save(&dir.join("effective_config.json"))
}

fn parent_or_here(path: &Path) -> PathBuf {
    path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf()
}

fn load_synth_config(path: Option<&Path>) -> Result<SynthConfig> {
    let Some(path) = path else {
        return Ok(SynthConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config: SynthConfig = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    config.validate()?;
    Ok(config)
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Atlas(AtlasCmd::Build {
            densities,
            quorum,
            top_frac,
            out,
        }) => {
            let r = atlas_build(&densities, quorum, top_frac, &out)?;
            println!("edges: {}", r.edges);
            println!(
                "voxels per edge: min {} / mean {:.1} / max {}",
                r.min_voxels, r.mean_voxels, r.max_voxels
            );
        }
        Command::Features(FeaturesCmd::Extract {
            cohort,
            node_atlas,
            edge_atlas,
            out,
            seed,
            config,
        }) => {
            let mut cfg = config.load()?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let r = features_extract(&cohort, &node_atlas, &edge_atlas, &out, cfg.split_seed())?;
            echo_config(&out, &cfg)?;
            println!(
                "{} subjects: {} node and {} edge vectors each; split {}/{}/{} (train/val/test)",
                r.subjects, r.nodes, r.edges, r.train, r.val, r.test
            );
        }
        Command::Ae(AeCmd::Train {
            features,
            kind,
            out,
            epochs,
            seed,
            config,
        }) => {
            let mut cfg = config.load()?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let mut ae = cfg.resolved().autoencoder;
            if let Some(e) = epochs {
                ae.epochs = e;
            }
            let kind = match kind {
                KindArg::Node => RoiKind::Node,
                KindArg::Edge => RoiKind::Edge,
            };
            let r = ae_train_stage(&features, kind, &ae, &out)?;
            println!(
                "{:?} autoencoder: {} vectors from {} training subjects, loss {:.4} -> {:.4}",
                r.kind, r.vectors, r.subjects, r.initial_loss, r.final_loss
            );
        }
        Command::Ae(AeCmd::Encode {
            features,
            node_model,
            edge_model,
            out,
        }) => {
            let n = ae_encode_stage(&features, &node_model, &edge_model, &out)?;
            println!("encoded {n} subjects");
        }
        Command::Graph(GraphCmd::Build { latents, features, out }) => {
            let n = graph_build_stage(&latents, &features, &out)?;
            println!("wrote {n} graphs to {}", out.display());
        }
        Command::Gnn(GnnCmd::Train {
            dataset,
            split,
            out,
            epochs,
            seed,
            config,
        }) => {
            let mut cfg = config.load()?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let mut settings = cfg.resolved().gnn;
            if let Some(e) = epochs {
                settings.train.max_epochs = e;
            }
            let split = split.unwrap_or_else(|| split_beside(&dataset));
            let log = gnn_train_stage(&dataset, &split, &settings, &out)?;
            cfg.gnn = settings;
            echo_config(&parent_or_here(&out), &cfg)?;
            println!(
                "{} epochs, best validation loss {:.4} at epoch {}{}",
                log.epochs.len(),
                log.best_val_loss,
                log.best_epoch,
                if log.stopped_early { " (early stop)" } else { "" }
            );
            println!("training log: {}", log_path(&out).display());
        }
        Command::Gnn(GnnCmd::Eval {
            checkpoint,
            dataset,
            split,
            out,
            config,
        }) => {
            let settings = match &config.config {
                Some(_) => Some(config.load()?.resolved().gnn),
                None => None,
            };
            let split = split.unwrap_or_else(|| split_beside(&dataset));
            let r = gnn_eval_stage(&checkpoint, &dataset, &split, settings.as_ref(), out.as_deref())?;
            print!("{}", r.table());
        }
        Command::Explain(ExplainCmd::Run {
            checkpoint,
            dataset,
            edge_atlas,
            subject,
            thresholds,
            out,
            config,
        }) => {
            let cfg = config.load()?.resolved();
            let subject = match subject {
                Some(s) => s,
                None => first_wild_type(&dataset)?,
            };
            let r = explain_stage(&checkpoint, &dataset, &edge_atlas, &subject, &cfg.explain, &thresholds, &out)?;
            println!("subject {} (explained class {})", r.subject, if r.target == MUTANT { "mutant" } else { "wild-type" });
            for (t, n) in &r.retained {
                println!("edges with score > {t}: {n}");
            }
        }
        Command::Synth(SynthCmd::Generate { level, config, out }) => {
            let cfg = load_synth_config(config.as_deref())?;
            match level {
                Level::Graph => {
                    let (graphs, truth) = generate_graph_cohort(&cfg)?;
                    write_graph_level(&out, &graphs, &truth)?;
                    let ids: Vec<String> = graphs.iter().map(|g| g.id.clone()).collect();
                    let labels: Vec<u8> = graphs.iter().map(|g| g.label).collect();
                    SplitManifest::from_labels(&ids, &labels, cfg.seed)?.save(&out.join(crate::pipeline::SPLIT_FILE))?;
                    println!("wrote {} graphs to {}", graphs.len(), out.join(layout::GRAPHS).display());
                }
                Level::Volume => {
                    let pair = generate_atlas_pair(&cfg)?;
                    let edges = build_edge_atlas(&pair.densities, DEFAULT_QUORUM.min(cfg.atlas_subjects), DEFAULT_TOP_FRACTION)?;
                    let (phantoms, truth) = generate_phantom_cohort(&cfg, &pair.nodes, &edges)?;
                    write_volume_level(&out, &pair, &phantoms, &truth)?;
                    println!("wrote {} phantoms and a {}-region atlas to {}", phantoms.len(), cfg.regions, out.display());
                }
            }
        }
    }
    Ok(())
}

fn first_wild_type(dataset: &Path) -> Result<String> {
    let d = GraphDataset::load(dataset)?;
    d.graphs
        .iter()
        .find(|g| g.label != MUTANT)
        .or(d.graphs.first())
        .map(|g| g.id.clone())
        .ok_or_else(|| Error::format(dataset, "dataset has no graphs"))
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
