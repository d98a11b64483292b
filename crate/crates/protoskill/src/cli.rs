//! Command-line harness: dataset generation, prototype-count selection,
//! per-variant training, one-shot evaluation, ablation sweeps, and
//! embedding export. Every verb is deterministic given config and seeds.

use crate::align::write_align_trace;
use crate::error::Result;
use crate::pipeline::{
    aggregate, eval_matrix, eval_oneshot, export_embeddings, gen_data, load_dataset, train_variant,
    write_report, Artifacts, Dataset, EvalCell, RunConfig, Variant,
};
use crate::protodisc::select_k;
use crate::simgen::World;
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "protoskill", version, about = "Skill-prototype discovery and one-shot imitation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML run config; built-in defaults when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Run directory for data, artifacts, and reports.
    #[arg(long, value_name = "DIR", default_value = "runs")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the demonstration dataset files.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Sweep the prototype-count grid and report the selected K.
    SelectK {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one pipeline variant on the generated dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "full")]
        variant: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Evaluate trained artifacts over the prompt matrix and write a report.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "full")]
        variant: String,
        /// Evaluate a single seed instead of every seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train and evaluate every variant; write one combined report.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Dump per-clip embeddings and assignments for trained artifacts.
    ExportEmbeddings {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "full")]
        variant: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn artifacts_dir(out: &Path, variant: Variant, seed: u64) -> PathBuf {
    out.join("artifacts").join(variant.to_string()).join(format!("seed{seed}"))
}

/// Evaluates one variant across `seeds`, loading each seed's artifacts.
fn eval_variant(
    cfg: &RunConfig,
    ds: &Dataset,
    world: &World,
    out: &Path,
    variant: Variant,
    seeds: &[u64],
) -> Result<Vec<EvalCell>> {
    let mut cells = Vec::new();
    for &seed in seeds {
        let dir = artifacts_dir(out, variant, seed);
        let art = Artifacts::load(&dir)?;
        cells.extend(eval_matrix(&art, ds, world, cfg)?);
    }
    Ok(cells)
}

/// Replays the first cross-embodiment prompt at each speed and writes its
/// alignment trajectory, one CSV per speed.
fn write_traces(
    cfg: &RunConfig,
    ds: &Dataset,
    world: &World,
    out: &Path,
    variant: Variant,
    seed: u64,
) -> Result<()> {
    if !variant.uses_sam() {
        return Ok(());
    }
    let art = Artifacts::load(&artifacts_dir(out, variant, seed))?;
    for &speed in &cfg.eval.speeds {
        let prompts = ds.prompts("human", speed, seed % cfg.data.renders as u64);
        let Some(prompt) = prompts.episodes.first() else { continue };
        let run = eval_oneshot(&art, prompt, world, cfg, seed)?;
        let path = out.join("traces").join(format!("{variant}_cross_x{speed}.csv"));
        write_align_trace(&path, &run.states)?;
    }
    Ok(())
}

fn print_rows(rows: &[crate::pipeline::ReportRow]) {
    for r in rows {
        println!(
            "  {:>13} {:>5} x{:<3} {:>10}  {:6.1}% +/- {:4.1} ({} seeds)",
            r.variant.to_string(),
            r.condition,
            r.speed,
            r.category.name(),
            r.success_mean,
            r.success_stderr,
            r.seeds
        );
    }
}

pub fn run() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::GenData { common } => {
            let cfg = load_config(&common)?;
            let (train_n, held_n) = gen_data(&cfg, &common.out)?;
            println!(
                "wrote {train_n} training and {held_n} held-out episodes per embodiment under {} (config {})",
                common.out.join("data").display(),
                cfg.hash()
            );
        }
        Cmd::SelectK { common, seed } => {
            let cfg = load_config(&common)?;
            let ds = load_dataset(&common.out)?;
            let trace = select_k(&ds.proto_training_set(), &cfg.proto, &cfg.encoder, seed)?;
            let path = common.out.join("reports").join(format!("k_selection_seed{seed}.csv"));
            trace.write_csv(&path)?;
            println!("selected K*={} over grid {:?}; trace at {}", trace.chosen, cfg.proto.k_grid(), path.display());
        }
        Cmd::Train { common, variant, seed } => {
            let cfg = load_config(&common)?;
            let variant = Variant::parse(&variant)?;
            let ds = load_dataset(&common.out)?;
            let art = train_variant(&ds, &cfg, variant, seed)?;
            let dir = artifacts_dir(&common.out, variant, seed);
            art.save(&dir)?;
            println!("trained {variant} seed {seed}: K*={} -> {}", art.k_star, dir.display());
        }
        Cmd::Eval { common, variant, seed } => {
            let cfg = load_config(&common)?;
            let variant = Variant::parse(&variant)?;
            let ds = load_dataset(&common.out)?;
            let world = World::generate(&cfg.simgen, cfg.data.world_seed)?;
            let seeds = match seed {
                Some(s) => vec![s],
                None => cfg.eval.seeds.clone(),
            };
            let cells = eval_variant(&cfg, &ds, &world, &common.out, variant, &seeds)?;
            let rows = aggregate(&cells, &cfg.hash());
            let path = common.out.join("reports").join(format!("{variant}.csv"));
            write_report(&path, &rows)?;
            write_traces(&cfg, &ds, &world, &common.out, variant, seeds[0])?;
            println!("report: {}", path.display());
            print_rows(&rows);
        }
        Cmd::Ablate { common } => {
            let cfg = load_config(&common)?;
            let ds = load_dataset(&common.out)?;
            let world = World::generate(&cfg.simgen, cfg.data.world_seed)?;
            let mut cells = Vec::new();
            for &variant in Variant::ALL.iter() {
                for &seed in &cfg.eval.seeds {
                    let dir = artifacts_dir(&common.out, variant, seed);
                    if !dir.join("artifacts.json").exists() {
                        let art = train_variant(&ds, &cfg, variant, seed)?;
                        art.save(&dir)?;
                        println!("trained {variant} seed {seed}: K*={}", art.k_star);
                    }
                }
                cells.extend(eval_variant(&cfg, &ds, &world, &common.out, variant, &cfg.eval.seeds)?);
                println!("evaluated {variant}");
            }
            let rows = aggregate(&cells, &cfg.hash());
            let path = common.out.join("reports").join("ablation.csv");
            write_report(&path, &rows)?;
            println!("report: {}", path.display());
            print_rows(&rows);
        }
        Cmd::ExportEmbeddings { common, variant, seed } => {
            let cfg = load_config(&common)?;
            let variant = Variant::parse(&variant)?;
            let ds = load_dataset(&common.out)?;
            let art = Artifacts::load(&artifacts_dir(&common.out, variant, seed))?;
            let episodes = ds.proto_training_set();
            let refs: Vec<&crate::simgen::DemoEpisode> = episodes.iter().collect();
            let path = common
                .out
                .join("reports")
                .join(format!("embeddings_{variant}_seed{seed}.csv"));
            let rows = export_embeddings(&art, &refs, &cfg, &path)?;
            println!("wrote {rows} clip rows to {}", path.display());
        }
    }
    Ok(())
}
