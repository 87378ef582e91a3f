//! Command-line entry point: dataset export, stage training, evaluation,
//! the four-paradigm comparison, and ablation sweeps.

use std::path::{Path, PathBuf};

use anyhow::bail;
use clap::{Args, Parser, Subcommand};
use glyphspot::checkpoint::save_module;
use glyphspot::config::Paradigm;
use glyphspot::data;
use glyphspot::error::HarnessError;
use glyphspot::eval::evaluate;
use glyphspot::experiments::{
    self, compare_paradigms, run_ablation, AblationAxis, BRIDGED_CKPT, CURVES_CSV, DET_CKPT,
    REC_CKPT,
};
use glyphspot::pipeline::System;
use glyphspot::report;
use glyphspot::stages::train_bridge;
use glyphspot::ExperimentConfig;
use glyphspot_core::datasynth::Split;

#[derive(Parser)]
#[command(
    name = "glyphspot",
    about = "Toy text spotting: frozen detector + recognizer joined by a trained bridge",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Configuration shared by every subcommand. Values resolve in order:
/// defaults, then `--config` file, then the subcommand's `--seed`, then each
/// `--set` override left to right.
#[derive(Args)]
struct ConfigArgs {
    /// Config file of `key = value` lines (`#` comments).
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override a single config key (repeatable), e.g. `--set bridge_iters=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn build(&self, seed: u64) -> anyhow::Result<ExperimentConfig> {
        let mut exp = ExperimentConfig::default();
        if let Some(path) = &self.config {
            exp.load_file(path)?;
        }
        exp.seed = seed;
        for pair in &self.set {
            let Some((k, v)) = pair.split_once('=') else {
                bail!("--set expects KEY=VALUE, got {pair:?}");
            };
            exp.apply(k.trim(), v.trim())?;
        }
        exp.validate()?;
        Ok(exp)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Render every dataset split to PGM images with JSONL annotations.
    GenData {
        #[arg(long)]
        seed: u64,
        /// Output directory for the split folders and annotation files.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train the detector alone and save `det.ckpt`.
    TrainDet {
        #[arg(long)]
        seed: u64,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train the recognizer alone and save `rec.ckpt`.
    TrainRec {
        #[arg(long)]
        seed: u64,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train the bridge over frozen host checkpoints and save `bridged.ckpt`.
    TrainBridge {
        #[arg(long)]
        seed: u64,
        /// Detector checkpoint to freeze under the bridge.
        #[arg(long, value_name = "CKPT")]
        det: PathBuf,
        /// Recognizer checkpoint to freeze under the bridge.
        #[arg(long, value_name = "CKPT")]
        rec: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Also record an end-to-end F1 learning curve to `curves.csv`.
        #[arg(long)]
        curve: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score a saved system on the test split.
    Eval {
        #[arg(long)]
        seed: u64,
        /// Which assembly the checkpoints describe:
        /// two_step|two_step_finetune|end_to_end|bridge.
        #[arg(long)]
        paradigm: String,
        /// Detector checkpoint (two-step paradigms).
        #[arg(long, value_name = "CKPT")]
        det: Option<PathBuf>,
        /// Recognizer checkpoint (two-step paradigms).
        #[arg(long, value_name = "CKPT")]
        rec: Option<PathBuf>,
        /// Combined checkpoint (end_to_end pair or bridged system).
        #[arg(long, value_name = "CKPT")]
        ckpt: Option<PathBuf>,
        /// Optional directory for eval.csv / eval.json.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train and score all four paradigms on one seed.
    Compare {
        #[arg(long)]
        seed: u64,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run one ablation axis: bridge_components|init_mode|encoder_depth.
    Ablate {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        axis: String,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Reuse an existing detector checkpoint instead of retraining.
        #[arg(long, value_name = "CKPT", requires = "rec")]
        det: Option<PathBuf>,
        /// Reuse an existing recognizer checkpoint instead of retraining.
        #[arg(long, value_name = "CKPT", requires = "det")]
        rec: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().cmd {
        Cmd::GenData { seed, out, cfg } => {
            let exp = cfg.build(seed)?;
            let total = data::export(&exp, &out)?;
            println!("wrote {total} examples under {}", out.display());
        }
        Cmd::TrainDet { seed, out, cfg } => {
            let exp = cfg.build(seed)?;
            ensure_dir(&out)?;
            let (store, outcome) = glyphspot::stages::train_detector(&exp)?;
            let path = out.join(DET_CKPT);
            save_module(&path, &store, &["det."], exp.det_fingerprint())?;
            println!(
                "detector: loss {:.4} -> {:.4} in {:.1} s; saved {}",
                outcome.first_loss,
                outcome.last_loss,
                outcome.wall_s,
                path.display()
            );
        }
        Cmd::TrainRec { seed, out, cfg } => {
            let exp = cfg.build(seed)?;
            ensure_dir(&out)?;
            let (store, outcome) = glyphspot::stages::train_recognizer(&exp)?;
            let path = out.join(REC_CKPT);
            save_module(&path, &store, &["rec."], exp.rec_fingerprint())?;
            println!(
                "recognizer: loss {:.4} -> {:.4} in {:.1} s; saved {}",
                outcome.first_loss,
                outcome.last_loss,
                outcome.wall_s,
                path.display()
            );
        }
        Cmd::TrainBridge { seed, det, rec, out, curve, cfg } => {
            let exp = cfg.build(seed)?;
            ensure_dir(&out)?;
            let run = train_bridge(&exp, &det, &rec, curve)?;
            let path = out.join(BRIDGED_CKPT);
            run.system.save_system(&path)?;
            if curve {
                report::write_curves_csv(
                    &out.join(CURVES_CSV),
                    &[(exp.init_mode.label().to_string(), run.curve)],
                )?;
            }
            println!(
                "bridge: loss {:.4} -> {:.4} in {:.1} s; trainable {} / {}; saved {}",
                run.outcome.first_loss,
                run.outcome.last_loss,
                run.outcome.wall_s,
                run.system.store.num_params_trainable(),
                run.system.store.num_params_total(),
                path.display()
            );
        }
        Cmd::Eval { seed, paradigm, det, rec, ckpt, out, cfg } => {
            let exp = cfg.build(seed)?;
            let paradigm: Paradigm = paradigm.parse()?;
            let sys = match paradigm {
                Paradigm::TwoStep | Paradigm::TwoStepFinetune => {
                    let (Some(det), Some(rec)) = (det, rec) else {
                        bail!("paradigm {paradigm} needs --det and --rec checkpoints");
                    };
                    System::two_step(&exp, &det, &rec)?
                }
                Paradigm::EndToEnd => {
                    let Some(ckpt) = ckpt else {
                        bail!("paradigm end_to_end needs --ckpt (the joint pair checkpoint)");
                    };
                    let mut sys = System::base(&exp)?;
                    glyphspot::checkpoint::load_module(
                        &ckpt,
                        &mut sys.store,
                        exp.pair_fingerprint(),
                    )?;
                    sys
                }
                Paradigm::Bridge => {
                    let Some(ckpt) = ckpt else {
                        bail!("paradigm bridge needs --ckpt (the full-system checkpoint)");
                    };
                    System::bridged_from_checkpoint(&exp, &ckpt)?
                }
            };
            let test = data::load_scenes(&exp, Split::Test, exp.test_scenes)?;
            let row = evaluate(&sys, paradigm.label(), &test)?;
            println!("{}", report::METRICS_HEADER);
            println!("{}", report::metrics_row(&row));
            if let Some(out) = out {
                ensure_dir(&out)?;
                report::write_metrics_csv(&out.join("eval.csv"), core::slice::from_ref(&row))?;
                report::write_metrics_json(&out.join("eval.json"), core::slice::from_ref(&row))?;
            }
        }
        Cmd::Compare { seed, out, cfg } => {
            let exp = cfg.build(seed)?;
            compare_paradigms(&exp, &out)?;
            println!(
                "artifacts: {}, {}, {}",
                out.join(experiments::COMPARE_CSV).display(),
                out.join(experiments::COMPARE_JSON).display(),
                out.join(experiments::TIMINGS_TXT).display()
            );
        }
        Cmd::Ablate { seed, axis, out, det, rec, cfg } => {
            let exp = cfg.build(seed)?;
            let axis: AblationAxis = axis.parse()?;
            let hosts = match (&det, &rec) {
                (Some(d), Some(r)) => Some((d.as_path(), r.as_path())),
                _ => None,
            };
            run_ablation(&exp, axis, &out, hosts)?;
            println!(
                "artifacts: {}, {}",
                out.join(experiments::ABLATION_CSV).display(),
                out.join(experiments::TIMINGS_TXT).display()
            );
        }
    }
    Ok(())
}

fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    Ok(())
}
