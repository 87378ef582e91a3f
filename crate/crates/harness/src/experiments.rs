//! Experiment orchestration: the four-paradigm comparison and the ablation
//! sweeps, each producing checkpoints, a metrics table (CSV + JSON mirror),
//! and a wall-clock log. Metric artifacts are byte-deterministic per seed;
//! timings go to their own file.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use glyphspot_core::datasynth::{Scene, Split};

use crate::checkpoint::save_module;
use crate::config::{ExperimentConfig, InitMode, Paradigm};
use crate::data;
use crate::error::{HarnessError, Result};
use crate::eval::{evaluate, MetricsReport};
use crate::pipeline::System;
use crate::report;
use crate::stages::{
    finetune_detector, finetune_recognizer, train_bridge, train_detector, train_e2e,
    train_recognizer, CurvePoint,
};

// Artifact names under an output directory.
pub const DET_CKPT: &str = "det.ckpt";
pub const REC_CKPT: &str = "rec.ckpt";
pub const DET_FINETUNED_CKPT: &str = "det_finetuned.ckpt";
pub const REC_FINETUNED_CKPT: &str = "rec_finetuned.ckpt";
pub const E2E_CKPT: &str = "e2e.ckpt";
pub const BRIDGED_CKPT: &str = "bridged.ckpt";
pub const COMPARE_CSV: &str = "compare.csv";
pub const COMPARE_JSON: &str = "compare.json";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const ABLATION_JSON: &str = "ablation.json";
pub const CURVES_CSV: &str = "curves.csv";
pub const TIMINGS_TXT: &str = "timings.txt";

/// Everything a finished experiment hands back to the caller.
pub struct RunArtifacts {
    pub rows: Vec<MetricsReport>,
    pub curves: Vec<(String, Vec<CurvePoint>)>,
    pub timings: Vec<(String, f64)>,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

/// Trains both host modules and saves their checkpoints; returns the paths.
fn train_hosts(
    exp: &ExperimentConfig,
    out_dir: &Path,
    timings: &mut Vec<(String, f64)>,
) -> Result<(PathBuf, PathBuf)> {
    let det_path = out_dir.join(DET_CKPT);
    let rec_path = out_dir.join(REC_CKPT);
    let (det_store, det_out) = train_detector(exp)?;
    save_module(&det_path, &det_store, &["det."], exp.det_fingerprint())?;
    println!(
        "train_detector: loss {:.4} -> {:.4} in {:.1} s",
        det_out.first_loss, det_out.last_loss, det_out.wall_s
    );
    timings.push((String::from("train_detector"), det_out.wall_s));

    let (rec_store, rec_out) = train_recognizer(exp)?;
    save_module(&rec_path, &rec_store, &["rec."], exp.rec_fingerprint())?;
    println!(
        "train_recognizer: loss {:.4} -> {:.4} in {:.1} s",
        rec_out.first_loss, rec_out.last_loss, rec_out.wall_s
    );
    timings.push((String::from("train_recognizer"), rec_out.wall_s));
    Ok((det_path, rec_path))
}

/// Trains every paradigm on the same splits and scores them on the same test
/// scenes. Writes `compare.csv` / `compare.json` (deterministic) and
/// `timings.txt` (measured) plus all stage checkpoints under `out_dir`.
pub fn compare_paradigms(exp: &ExperimentConfig, out_dir: &Path) -> Result<RunArtifacts> {
    exp.validate()?;
    ensure_dir(out_dir)?;
    let total_start = Instant::now();
    let mut timings = Vec::new();

    let (det_path, rec_path) = train_hosts(exp, out_dir, &mut timings)?;
    let test = data::load_scenes(exp, Split::Test, exp.test_scenes)?;
    let mut rows = Vec::new();

    // Two independently trained modules, composed as-is.
    let sys = System::two_step(exp, &det_path, &rec_path)?;
    rows.push(eval_row(&sys, Paradigm::TwoStep.label(), &test, &mut timings)?);

    // The same modules after finetuning each (still separately) on the
    // composition split.
    let det_ft_path = out_dir.join(DET_FINETUNED_CKPT);
    let rec_ft_path = out_dir.join(REC_FINETUNED_CKPT);
    let (det_ft, det_ft_out) = finetune_detector(exp, &det_path)?;
    save_module(&det_ft_path, &det_ft, &["det."], exp.det_fingerprint())?;
    timings.push((String::from("finetune_detector"), det_ft_out.wall_s));
    let (rec_ft, rec_ft_out) = finetune_recognizer(exp, &rec_path)?;
    save_module(&rec_ft_path, &rec_ft, &["rec."], exp.rec_fingerprint())?;
    timings.push((String::from("finetune_recognizer"), rec_ft_out.wall_s));
    println!(
        "finetune: det {:.4} -> {:.4}, rec {:.4} -> {:.4}",
        det_ft_out.first_loss, det_ft_out.last_loss, rec_ft_out.first_loss, rec_ft_out.last_loss
    );
    let sys = System::two_step(exp, &det_ft_path, &rec_ft_path)?;
    rows.push(eval_row(&sys, Paradigm::TwoStepFinetune.label(), &test, &mut timings)?);

    // Monolithic joint training from scratch.
    let (e2e_sys, e2e_out) = train_e2e(exp)?;
    save_module(&out_dir.join(E2E_CKPT), &e2e_sys.store, &[], exp.pair_fingerprint())?;
    println!(
        "train_e2e: loss {:.4} -> {:.4} in {:.1} s",
        e2e_out.first_loss, e2e_out.last_loss, e2e_out.wall_s
    );
    timings.push((String::from("train_e2e"), e2e_out.wall_s));
    rows.push(eval_row(&e2e_sys, Paradigm::EndToEnd.label(), &test, &mut timings)?);

    // Frozen modules joined by the trained bridge.
    let run = train_bridge(exp, &det_path, &rec_path, false)?;
    run.system.save_system(&out_dir.join(BRIDGED_CKPT))?;
    println!(
        "train_bridge: loss {:.4} -> {:.4} in {:.1} s",
        run.outcome.first_loss, run.outcome.last_loss, run.outcome.wall_s
    );
    timings.push((String::from("train_bridge"), run.outcome.wall_s));
    rows.push(eval_row(&run.system, Paradigm::Bridge.label(), &test, &mut timings)?);

    timings.push((String::from("total"), total_start.elapsed().as_secs_f64()));
    report::write_metrics_csv(&out_dir.join(COMPARE_CSV), &rows)?;
    report::write_metrics_json(&out_dir.join(COMPARE_JSON), &rows)?;
    report::write_timings(&out_dir.join(TIMINGS_TXT), &timings)?;
    print_table(&rows);
    Ok(RunArtifacts { rows, curves: Vec::new(), timings })
}

fn eval_row(
    sys: &System,
    label: &str,
    test: &[Scene],
    timings: &mut Vec<(String, f64)>,
) -> Result<MetricsReport> {
    let start = Instant::now();
    let row = evaluate(sys, label, test)?;
    timings.push((format!("eval_{label}"), start.elapsed().as_secs_f64()));
    Ok(row)
}

fn print_table(rows: &[MetricsReport]) {
    println!("{}", report::METRICS_HEADER);
    for r in rows {
        println!("{}", report::metrics_row(r));
    }
}

/// Which design question an ablation run answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    /// Stack the pieces: plain composition, +bridge, +detector adapter,
    /// +recognizer adapter.
    BridgeComponents,
    /// Zero-initialized projections against small-Gaussian ones, with
    /// learning curves.
    InitMode,
    /// Bridge encoder depth sweep.
    EncoderDepth,
}

impl AblationAxis {
    pub fn label(self) -> &'static str {
        match self {
            AblationAxis::BridgeComponents => "bridge_components",
            AblationAxis::InitMode => "init_mode",
            AblationAxis::EncoderDepth => "encoder_depth",
        }
    }
}

impl FromStr for AblationAxis {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bridge_components" => Ok(AblationAxis::BridgeComponents),
            "init_mode" => Ok(AblationAxis::InitMode),
            "encoder_depth" => Ok(AblationAxis::EncoderDepth),
            other => Err(HarnessError::Config(format!(
                "ablation axis must be bridge_components|init_mode|encoder_depth, got {other:?}"
            ))),
        }
    }
}

/// Depths swept by the encoder-depth axis.
pub const DEPTH_SWEEP: [usize; 4] = [0, 1, 3, 6];

/// Runs one ablation axis. Host checkpoints are reused from `hosts` when
/// given (e.g. from a previous comparison run) and trained fresh otherwise.
/// Writes `ablation.csv` / `ablation.json`, `curves.csv` for the init axis,
/// and `timings.txt` under `out_dir`.
pub fn run_ablation(
    exp: &ExperimentConfig,
    axis: AblationAxis,
    out_dir: &Path,
    hosts: Option<(&Path, &Path)>,
) -> Result<RunArtifacts> {
    exp.validate()?;
    ensure_dir(out_dir)?;
    let total_start = Instant::now();
    let mut timings = Vec::new();
    let (det_path, rec_path) = match hosts {
        Some((d, r)) => (d.to_path_buf(), r.to_path_buf()),
        None => train_hosts(exp, out_dir, &mut timings)?,
    };
    let test = data::load_scenes(exp, Split::Test, exp.test_scenes)?;

    let mut rows = Vec::new();
    let mut curves = Vec::new();

    // One bridged variant: configure, train, score (optionally with curve).
    let bridged_variant = |label: &str,
                               cfg: ExperimentConfig,
                               with_curve: bool,
                               timings: &mut Vec<(String, f64)>|
     -> Result<(MetricsReport, Vec<CurvePoint>)> {
        let run = train_bridge(&cfg, &det_path, &rec_path, with_curve)?;
        println!(
            "{label}: loss {:.4} -> {:.4} in {:.1} s",
            run.outcome.first_loss, run.outcome.last_loss, run.outcome.wall_s
        );
        timings.push((format!("train_{label}"), run.outcome.wall_s));
        let row = eval_row(&run.system, label, &test, timings)?;
        Ok((row, run.curve))
    };

    match axis {
        AblationAxis::BridgeComponents => {
            let baseline = System::two_step(exp, &det_path, &rec_path)?;
            rows.push(eval_row(&baseline, "baseline", &test, &mut timings)?);
            for (label, da, ra) in [
                ("bridge", false, false),
                ("bridge_da", true, false),
                ("bridge_da_ra", true, true),
            ] {
                let mut cfg = exp.clone();
                cfg.use_det_adapter = da;
                cfg.use_rec_adapter = ra;
                let (row, _) = bridged_variant(label, cfg, false, &mut timings)?;
                rows.push(row);
            }
        }
        AblationAxis::InitMode => {
            for (label, mode) in
                [("zero", InitMode::Zero), ("gaussian", InitMode::Gaussian)]
            {
                // Isolate the initialization of the bridge projections:
                // no adapters, hosts fully frozen.
                let mut cfg = exp.clone();
                cfg.use_det_adapter = false;
                cfg.use_rec_adapter = false;
                cfg.init_mode = mode;
                let (row, curve) = bridged_variant(label, cfg, true, &mut timings)?;
                rows.push(row);
                curves.push((label.to_string(), curve));
            }
        }
        AblationAxis::EncoderDepth => {
            for depth in DEPTH_SWEEP {
                let mut cfg = exp.clone();
                cfg.encoder_depth = depth;
                let (row, _) =
                    bridged_variant(&format!("depth{depth}"), cfg, false, &mut timings)?;
                rows.push(row);
            }
        }
    }

    timings.push((String::from("total"), total_start.elapsed().as_secs_f64()));
    report::write_metrics_csv(&out_dir.join(ABLATION_CSV), &rows)?;
    report::write_metrics_json(&out_dir.join(ABLATION_JSON), &rows)?;
    if !curves.is_empty() {
        report::write_curves_csv(&out_dir.join(CURVES_CSV), &curves)?;
    }
    report::write_timings(&out_dir.join(TIMINGS_TXT), &timings)?;
    print_table(&rows);
    Ok(RunArtifacts { rows, curves, timings })
}
