//! The verification gate for the whole system, one test per guarantee:
//!
//! 1.  every autodiff operation matches finite differences;
//! 2.  a freshly assembled bridged system is an exact identity around the
//!     frozen recognizer, end to end;
//! 3.  the zero-initialized projections receive well-defined, closed-form
//!     gradients at exactly zero;
//! 4.  a finished bridge stage has not moved one frozen host bit;
//! 5.  the bridge stage trains under a tenth of the parameters;
//! 6.  the bridged composition beats both two-step baselines by the pinned
//!     margin;
//! 7.  zero initialization outlearns Gaussian initialization;
//! 8.  each added component (bridge, detector adapter, recognizer adapter)
//!     helps or ties;
//! 9.  rerunning the comparison on one seed reproduces its artifacts byte
//!     for byte;
//! 10. checkpoints round-trip exactly and corrupted files are rejected with
//!     distinct errors.
//!
//! The heavy artifacts (two full comparison runs and two ablation sweeps at
//! reference scale, seed 7) are built once through the release binary and
//! shared by every test; they are cached under `target/acceptance` keyed on
//! the binary's content hash, so editing any source invalidates the cache.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use glyphspot::checkpoint::{load_module, Checkpoint, FORMAT_VERSION};
use glyphspot::config::ExperimentConfig;
use glyphspot::data;
use glyphspot::error::HarnessError;
use glyphspot::pipeline::System;
use glyphspot_core::bridge::{Bridge, BridgeConfig, BridgeInit, positional_encoding};
use glyphspot_core::check::battery;
use glyphspot_core::datasynth::Split;
use glyphspot_core::nn::{Graph, GradAccumulator, ParameterStore};
use glyphspot_core::optim::AdamW;
use glyphspot_core::rng::Stream;

/// End-to-end F margin (bridge minus two-step) measured on the reference
/// seed-7 run; reruns must land within one point of it.
const PINNED_MARGIN: f64 = f64::NAN; // pinned after the reference run
/// Detection F of the reference two-step system, for drift monitoring.
const PINNED_DET_F: f64 = f64::NAN; // pinned after the reference run

const SEED: &str = "7";

// ── Shared reference artifacts ──────────────────────────────────────────────

struct Artifacts {
    run1: PathBuf,
    run2: PathBuf,
    init_dir: PathBuf,
    components_dir: PathBuf,
}

fn artifacts() -> &'static Artifacts {
    static ARTIFACTS: OnceLock<Artifacts> = OnceLock::new();
    ARTIFACTS.get_or_init(build_artifacts)
}

fn build_artifacts() -> Artifacts {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../target/acceptance");
    let arts = Artifacts {
        run1: root.join("run1"),
        run2: root.join("run2"),
        init_dir: root.join("init"),
        components_dir: root.join("components"),
    };
    let marker = root.join("complete.marker");
    let stamp = format!("{:016x} layout-1", binary_hash());
    if std::fs::read_to_string(&marker).is_ok_and(|m| m == stamp) {
        return arts;
    }
    // Stale or absent: rebuild everything from scratch.
    if root.exists() {
        std::fs::remove_dir_all(&root).expect("clear stale acceptance artifacts");
    }
    std::fs::create_dir_all(&root).expect("create artifact root");

    run_cli(&root, "compare_run1", &["compare", "--seed", SEED, "--out", path(&arts.run1)]);
    run_cli(&root, "compare_run2", &["compare", "--seed", SEED, "--out", path(&arts.run2)]);
    let det = arts.run1.join("det.ckpt");
    let rec = arts.run1.join("rec.ckpt");
    run_cli(
        &root,
        "ablate_init",
        &[
            "ablate", "--seed", SEED, "--axis", "init_mode",
            "--det", path(&det), "--rec", path(&rec),
            "--out", path(&arts.init_dir),
        ],
    );
    run_cli(
        &root,
        "ablate_components",
        &[
            "ablate", "--seed", SEED, "--axis", "bridge_components",
            "--det", path(&det), "--rec", path(&rec),
            "--out", path(&arts.components_dir),
        ],
    );
    std::fs::write(&marker, stamp).expect("write artifact marker");
    arts
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn run_cli(root: &Path, log_name: &str, args: &[&str]) {
    let log_path = root.join(format!("{log_name}.log"));
    let log = std::fs::File::create(&log_path).expect("create log");
    let status = Command::new(env!("CARGO_BIN_EXE_glyphspot"))
        .args(args)
        .stdout(log.try_clone().expect("clone log handle"))
        .stderr(log)
        .status()
        .expect("spawn glyphspot");
    assert!(
        status.success(),
        "`glyphspot {}` failed; see {}",
        args.join(" "),
        log_path.display()
    );
}

fn binary_hash() -> u64 {
    let bytes = std::fs::read(env!("CARGO_BIN_EXE_glyphspot")).expect("read binary");
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

// ── Artifact readers ────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
struct Row {
    label: String,
    det_p: f64,
    det_r: f64,
    det_f: f64,
    e2e_p: f64,
    e2e_r: f64,
    e2e_f: f64,
    trainable: u64,
    total: u64,
}

/// Reads the JSON mirror of a metrics table (full float precision).
fn read_rows(dir: &Path, json_name: &str) -> Vec<Row> {
    let text = std::fs::read_to_string(dir.join(json_name)).expect("read metrics json");
    let values: serde_json::Value = serde_json::from_str(&text).expect("parse metrics json");
    values
        .as_array()
        .expect("array of rows")
        .iter()
        .map(|v| Row {
            label: v["paradigm"].as_str().expect("label").to_string(),
            det_p: v["det_p"].as_f64().expect("det_p"),
            det_r: v["det_r"].as_f64().expect("det_r"),
            det_f: v["det_f"].as_f64().expect("det_f"),
            e2e_p: v["e2e_p"].as_f64().expect("e2e_p"),
            e2e_r: v["e2e_r"].as_f64().expect("e2e_r"),
            e2e_f: v["e2e_f"].as_f64().expect("e2e_f"),
            trainable: v["trainable_params"].as_u64().expect("trainable"),
            total: v["total_params"].as_u64().expect("total"),
        })
        .collect()
}

fn row<'a>(rows: &'a [Row], label: &str) -> &'a Row {
    rows.iter().find(|r| r.label == label).unwrap_or_else(|| panic!("row {label} missing"))
}

/// Reads `phase: 12.34 s` lines from a timing log.
fn read_timings(dir: &Path) -> BTreeMap<String, f64> {
    let text = std::fs::read_to_string(dir.join("timings.txt")).expect("read timings");
    text.lines()
        .filter_map(|line| {
            let (phase, rest) = line.split_once(':')?;
            let secs = rest.trim().strip_suffix(" s")?.parse().ok()?;
            Some((phase.trim().to_string(), secs))
        })
        .collect()
}

/// Reads a `variant,iteration,e2e_F` curve file into per-variant series.
fn read_curves(dir: &Path) -> BTreeMap<String, Vec<(usize, f64)>> {
    let text = std::fs::read_to_string(dir.join("curves.csv")).expect("read curves");
    let mut out: BTreeMap<String, Vec<(usize, f64)>> = BTreeMap::new();
    for line in text.lines().skip(1) {
        let mut parts = line.split(',');
        let label = parts.next().expect("variant").to_string();
        let iter: usize = parts.next().expect("iteration").parse().expect("iteration");
        let f: f64 = parts.next().expect("e2e_F").parse().expect("e2e_F");
        out.entry(label).or_default().push((iter, f));
    }
    out
}

// ── 1. Gradient correctness ─────────────────────────────────────────────────

#[test]
fn every_operation_gradient_matches_finite_differences() {
    let start = Instant::now();
    battery::all(20);
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "gradient battery took {elapsed:.1} s, budget is 60");
}

// ── 2. Identity at initialization ───────────────────────────────────────────

#[test]
fn fresh_bridged_system_is_an_exact_identity() {
    let arts = artifacts();
    let start = Instant::now();
    let exp = ExperimentConfig::default();
    let det = arts.run1.join("det.ckpt");
    let rec = arts.run1.join("rec.ckpt");
    let bridged = System::bridged(&exp, &det, &rec).expect("assemble bridged system");
    let plain = System::two_step(&exp, &det, &rec).expect("assemble two-step system");

    // The bridge's correction is exactly zero on arbitrary feature pairs.
    let bridge = bridged.bridge.as_ref().expect("bridge present");
    let bcfg = bridge.config().clone();
    let mut rng = Stream::for_domain(2, "identity-probe");
    for _ in 0..100 {
        let c_f: Vec<f64> =
            (0..bcfg.in_channels * bcfg.token_h * bcfg.token_w).map(|_| rng.normal()).collect();
        let f_i: Vec<f64> =
            (0..bcfg.rec_len * bcfg.rec_dim).map(|_| rng.normal()).collect();
        let mut g = Graph::new(&bridged.store);
        let c_f_v = g
            .tape
            .constant(vec![bcfg.in_channels, bcfg.token_h, bcfg.token_w], c_f)
            .expect("crop constant");
        let f_i_v = g.tape.constant(vec![bcfg.rec_len, bcfg.rec_dim], f_i.clone()).expect("f_i");
        let f_r = bridge.forward(&mut g, c_f_v, f_i_v).expect("bridge forward");
        let max_diff = g
            .tape
            .data(f_r)
            .iter()
            .zip(&f_i)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert_eq!(max_diff, 0.0, "zero-initialized bridge perturbed its input");
    }

    // And the full pipeline decodes every test scene identically.
    for idx in 0..exp.test_scenes {
        let scene = data::scene(&exp, Split::Test, idx).expect("render test scene");
        let a = bridged.spot_scene(&scene.image).expect("bridged inference");
        let b = plain.spot_scene(&scene.image).expect("plain inference");
        assert_eq!(a.len(), b.len(), "scene {idx}: detection counts diverge");
        for (wa, wb) in a.iter().zip(&b) {
            assert_eq!(wa.text, wb.text, "scene {idx}: transcriptions diverge");
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 120.0, "identity check took {elapsed:.1} s, budget is 120");
}

// ── 3. Gradients at exactly zero ────────────────────────────────────────────

/// With both projections at exactly zero the output projection still feels a
/// closed-form gradient: under a sum-everything loss its bias gradient is
/// the row count of the token sequence and its weight gradient is the column
/// sums of its input tokens. The input projection wakes up after one step.
#[test]
fn zero_projections_receive_closed_form_gradients() {
    // Depth 0 keeps the token path analytic: with the input projection at
    // zero, the output projection's input is exactly the position table.
    let cfg = BridgeConfig { depth: 0, ..BridgeConfig::default() };
    let mut store = ParameterStore::new();
    let mut rng = Stream::for_domain(3, "zero-grad-probe");
    let bridge = Bridge::register(&mut store, "b", cfg.clone(), BridgeInit::Zero, &mut rng)
        .expect("register bridge");

    let c_f: Vec<f64> =
        (0..cfg.in_channels * cfg.token_h * cfg.token_w).map(|_| rng.normal()).collect();
    let f_i = vec![0.25; cfg.rec_len * cfg.rec_dim];

    // Exact per-parameter gradients of a sum-everything loss over one example.
    let read_grads = |store: &mut ParameterStore| -> BTreeMap<String, Vec<f64>> {
        let mut acc = GradAccumulator::new(store);
        {
            let mut g = Graph::new(store);
            let c_f_v = g
                .tape
                .constant(vec![cfg.in_channels, cfg.token_h, cfg.token_w], c_f.clone())
                .expect("crop");
            let f_i_v =
                g.tape.constant(vec![cfg.rec_len, cfg.rec_dim], f_i.clone()).expect("features");
            let f_r = bridge.forward(&mut g, c_f_v, f_i_v).expect("forward");
            let loss = g.tape.sum(f_r).expect("sum loss");
            g.backward(loss).expect("backward");
            acc.add_from(&g);
        }
        store.zero_grads();
        acc.mean_into(store);
        store
            .ids()
            .map(|id| (store.name(id).to_string(), store.grad(id).to_vec()))
            .collect()
    };

    let g0 = read_grads(&mut store);
    // Output projection bias: one unit per token row.
    let zl_b = &g0["b.zl.b"];
    assert!(zl_b.iter().all(|&v| v == cfg.rec_len as f64), "bias gradient is not the row count");
    // Output projection weight: column sums of the position table, repeated
    // for every output dimension.
    let pe = positional_encoding(cfg.rec_len, cfg.in_channels);
    let col_sums: Vec<f64> = (0..cfg.in_channels)
        .map(|i| (0..cfg.rec_len).map(|p| pe.data()[p * cfg.in_channels + i]).sum())
        .collect();
    let zl_w = &g0["b.zl.w"];
    for j in 0..cfg.rec_dim {
        for i in 0..cfg.in_channels {
            let got = zl_w[j * cfg.in_channels + i];
            let want = col_sums[i];
            assert!(
                (got - want).abs() <= 1e-12 * (1.0 + want.abs()),
                "weight gradient [{j},{i}] = {got}, closed form {want}"
            );
        }
    }
    // The input projection is silent at exactly zero (its downstream weight
    // is zero), and wakes up after one optimizer step moves that weight.
    let zc_w = &g0["b.zc.w"];
    assert!(zc_w.iter().all(|&v| v == 0.0), "input projection gradient leaked at zero");
    let mut opt = AdamW::new(&store, 1e-3, 0.0);
    opt.step(&mut store);
    let g1 = read_grads(&mut store);
    assert!(
        g1["b.zc.w"].iter().any(|&v| v != 0.0),
        "input projection still silent after one step"
    );

    // The default depth also keeps the output projection live at zero.
    let mut store = ParameterStore::new();
    let bridge2 = Bridge::register(
        &mut store,
        "b",
        BridgeConfig::default(),
        BridgeInit::Zero,
        &mut rng,
    )
    .expect("register default bridge");
    let mut g = Graph::new(&store);
    let c_f_v = g
        .tape
        .constant(vec![cfg.in_channels, cfg.token_h, cfg.token_w], c_f.clone())
        .expect("crop");
    let f_i_v = g.tape.constant(vec![cfg.rec_len, cfg.rec_dim], f_i.clone()).expect("features");
    let f_r = bridge2.forward(&mut g, c_f_v, f_i_v).expect("forward");
    let loss = g.tape.sum(f_r).expect("sum loss");
    g.backward(loss).expect("backward");
    let mut acc = GradAccumulator::new(&store);
    acc.add_from(&g);
    drop(g);
    store.zero_grads();
    acc.mean_into(&mut store);
    let id = store.id("b.zl.b").expect("zl bias");
    assert!(store.grad(id).iter().all(|&v| v == cfg.rec_len as f64));
}

// ── 4. Frozen hosts stay frozen ─────────────────────────────────────────────

#[test]
fn finished_bridge_stage_left_frozen_hosts_bit_identical() {
    let arts = artifacts();
    let det = Checkpoint::read(&arts.run1.join("det.ckpt")).expect("det checkpoint");
    let rec = Checkpoint::read(&arts.run1.join("rec.ckpt")).expect("rec checkpoint");
    let system = Checkpoint::read(&arts.run1.join("bridged.ckpt")).expect("system checkpoint");
    let by_name: BTreeMap<&str, &glyphspot::checkpoint::TensorRecord> =
        system.tensors.iter().map(|t| (t.name.as_str(), t)).collect();

    let designated = |name: &str| {
        name.starts_with("det.ctx_ln.")
            || (name.starts_with("rec.block") && name.contains(".ln."))
    };
    for t in det.tensors.iter().chain(&rec.tensors) {
        let in_system = by_name
            .get(t.name.as_str())
            .unwrap_or_else(|| panic!("{} missing from the system checkpoint", t.name));
        if designated(&t.name) {
            assert!(!in_system.frozen, "{} should have stayed trainable", t.name);
            continue;
        }
        assert!(in_system.frozen, "{} lost its frozen flag", t.name);
        assert_eq!(
            in_system.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            t.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            "{} moved during the bridge stage",
            t.name
        );
    }
    // Everything else in the system file is bridge or adapter state.
    let host_names: std::collections::BTreeSet<&str> = det
        .tensors
        .iter()
        .chain(&rec.tensors)
        .map(|t| t.name.as_str())
        .collect();
    for t in &system.tensors {
        if !host_names.contains(t.name.as_str()) {
            assert!(
                t.name.starts_with("bridge.") || t.name.starts_with("adapter."),
                "unexpected trainable tensor {}",
                t.name
            );
        }
    }
    // The stage itself fits its wall budget.
    let timings = read_timings(&arts.run1);
    let bridge_wall = timings["train_bridge"];
    assert!(bridge_wall < 1800.0, "bridge stage took {bridge_wall:.0} s, budget is 1800");
}

// ── 5. Parameter economy ────────────────────────────────────────────────────

#[test]
fn bridge_stage_trains_under_a_tenth_of_the_parameters() {
    let arts = artifacts();
    let rows = read_rows(&arts.run1, "compare.json");
    for r in &rows {
        assert!(r.total > 0 && r.trainable <= r.total, "malformed counts in {}", r.label);
        for (p, rr, f) in [(r.det_p, r.det_r, r.det_f), (r.e2e_p, r.e2e_r, r.e2e_f)] {
            let expect = if p + rr == 0.0 { 0.0 } else { 2.0 * p * rr / (p + rr) };
            assert!((f - expect).abs() <= 1e-12, "{}: F is not 2PR/(P+R)", r.label);
        }
    }
    let bridge = row(&rows, "bridge");
    let ratio = bridge.trainable as f64 / bridge.total as f64;
    assert!(ratio < 0.10, "bridge stage trains {ratio:.4} of the parameters");
}

// ── 6. The comparison's ordering and margin ─────────────────────────────────

#[test]
fn bridged_composition_beats_both_baselines_by_the_pinned_margin() {
    let arts = artifacts();
    let rows = read_rows(&arts.run1, "compare.json");
    let two_step = row(&rows, "two_step").e2e_f;
    let finetune = row(&rows, "two_step_finetune").e2e_f;
    let bridge = row(&rows, "bridge").e2e_f;

    assert!(
        two_step < finetune,
        "finetuning did not help: two_step {two_step:.4} vs finetuned {finetune:.4}"
    );
    assert!(
        finetune <= bridge,
        "bridging lost to finetuning: {bridge:.4} vs {finetune:.4}"
    );
    let margin = bridge - two_step;
    assert!(margin >= 0.020, "bridge margin over two-step is only {margin:.4}");
    assert!(
        (margin - PINNED_MARGIN).abs() <= 0.010,
        "margin {margin:.4} drifted from the pinned {PINNED_MARGIN:.4}"
    );
    let det_f = row(&rows, "two_step").det_f;
    assert!(
        (det_f - PINNED_DET_F).abs() <= 0.05,
        "detection F {det_f:.4} drifted from the pinned {PINNED_DET_F:.4}"
    );

    let timings = read_timings(&arts.run1);
    let total = timings["total"];
    assert!(total < 7200.0, "full comparison took {total:.0} s, budget is 7200");
}

// ── 7. Initialization ablation ──────────────────────────────────────────────

#[test]
fn zero_initialization_outlearns_gaussian_initialization() {
    let arts = artifacts();
    let rows = read_rows(&arts.init_dir, "ablation.json");
    let zero = row(&rows, "zero").e2e_f;
    let gaussian = row(&rows, "gaussian").e2e_f;
    assert!(zero > gaussian, "zero init finished at {zero:.4}, gaussian at {gaussian:.4}");

    let curves = read_curves(&arts.init_dir);
    let zero_curve = &curves["zero"];
    let gauss_curve = &curves["gaussian"];
    assert_eq!(zero_curve.len(), gauss_curve.len(), "curves sampled differently");
    let warmup = ExperimentConfig::default().bridge_iters / 10;
    for ((zi, zf), (gi, gf)) in zero_curve.iter().zip(gauss_curve) {
        assert_eq!(zi, gi, "curve grids diverge");
        if *zi >= warmup {
            assert!(
                *zf >= *gf - 0.005,
                "at iteration {zi}: zero {zf:.4} fell below gaussian {gf:.4} by over half a point"
            );
        }
    }
}

// ── 8. Component ablation ───────────────────────────────────────────────────

#[test]
fn each_added_component_helps_or_ties() {
    let arts = artifacts();
    let rows = read_rows(&arts.components_dir, "ablation.json");
    let order = ["baseline", "bridge", "bridge_da", "bridge_da_ra"];
    let scores: Vec<f64> = order.iter().map(|l| row(&rows, l).e2e_f).collect();
    for w in scores.windows(2) {
        assert!(
            w[1] >= w[0] - 0.005,
            "a component hurt: {scores:?} along {order:?}"
        );
    }
}

// ── 9. Determinism across runs ──────────────────────────────────────────────

#[test]
fn rerunning_the_comparison_reproduces_artifacts_byte_for_byte() {
    let arts = artifacts();
    for name in ["compare.csv", "compare.json"] {
        let a = std::fs::read(arts.run1.join(name)).expect("run1 artifact");
        let b = std::fs::read(arts.run2.join(name)).expect("run2 artifact");
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

// ── 10. Checkpoint round-trips and corruption ───────────────────────────────

#[test]
fn checkpoints_round_trip_and_reject_corruption_distinctly() {
    let arts = artifacts();
    let exp = ExperimentConfig::default();
    let dir = tempfile::tempdir().expect("tempdir");

    // Round trip: load the trained system, save it again, compare bytes.
    let original = arts.run1.join("bridged.ckpt");
    let restored = System::bridged_from_checkpoint(&exp, &original).expect("restore system");
    let resaved = dir.path().join("resaved.ckpt");
    restored.save_system(&resaved).expect("resave system");
    assert_eq!(
        std::fs::read(&original).expect("original bytes"),
        std::fs::read(&resaved).expect("resaved bytes"),
        "save -> load -> save is not byte-stable"
    );

    // Distinct rejection per corruption class.
    let good = std::fs::read(arts.run1.join("det.ckpt")).expect("det bytes");
    let write = |name: &str, bytes: &[u8]| {
        let p = dir.path().join(name);
        std::fs::write(&p, bytes).expect("write corrupted file");
        p
    };

    let mut store = fresh_det_store(&exp);

    let p = write("magic.ckpt", &{
        let mut b = good.clone();
        b[0] = b'X';
        b
    });
    assert!(matches!(
        load_module(&p, &mut store, exp.det_fingerprint()),
        Err(HarnessError::CorruptHeader { .. })
    ));

    let p = write("truncated.ckpt", &good[..good.len() / 2]);
    assert!(matches!(
        load_module(&p, &mut store, exp.det_fingerprint()),
        Err(HarnessError::CorruptHeader { .. })
    ));

    let p = write("version.ckpt", &{
        let mut b = good.clone();
        b[4..8].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
        b
    });
    assert!(matches!(
        load_module(&p, &mut store, exp.det_fingerprint()),
        Err(HarnessError::VersionMismatch { .. })
    ));

    // A tensor whose shape no longer matches the receiving architecture.
    let mut ckpt = Checkpoint::read(&arts.run1.join("det.ckpt")).expect("read det");
    ckpt.tensors[0].shape.swap(0, 1);
    let swapped = ckpt.tensors[0].shape.clone();
    if swapped.len() < 2 || swapped[0] == swapped[1] {
        ckpt.tensors[0].shape.push(1);
    }
    let p = dir.path().join("shape.ckpt");
    ckpt.write(&p).expect("write tampered checkpoint");
    assert!(matches!(
        load_module(&p, &mut store, exp.det_fingerprint()),
        Err(HarnessError::ShapeMismatch { .. })
    ));

    // The wrong module entirely.
    assert!(matches!(
        load_module(&arts.run1.join("rec.ckpt"), &mut store, exp.det_fingerprint()),
        Err(HarnessError::ArchitectureMismatch { .. })
    ));

    // After all those rejections, the real checkpoint still loads.
    let loaded =
        load_module(&arts.run1.join("det.ckpt"), &mut store, exp.det_fingerprint()).expect("load");
    assert!(loaded > 0);
}

fn fresh_det_store(exp: &ExperimentConfig) -> ParameterStore {
    let mut store = ParameterStore::new();
    let mut rng = Stream::for_domain(exp.seed, "det_init");
    glyphspot_core::spotter::Detector::register(&mut store, "det", &exp.spotter(), &mut rng)
        .expect("register detector");
    store
}
