//! Acceptance gate. Each test writes one `criterion N PASS|FAIL` line to
//! stderr and fails when its criterion is not met.
//!
//! Training criteria share their runs through `OnceLock`s, so criterion 8
//! reuses the networks trained for 4, 5 and 6. MNIST runs read the
//! directory or file named by `BIMONN_MNIST` and fall back to the 1000-digit
//! fixture under `tests/data`.

mod common;

use std::io::Write;
use std::path::PathBuf;
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

use bimonn::bise::{check_activation, dual_bounds, find_activation, AlmostBinaryBounds, Bise, BiseParams};
use bimonn::experiments::{run_experiment, DatasetKind, ExperimentRun, ExperimentSpec};
use bimonn::grid::{Grid, KernelWindow};
use bimonn::lui::{check_lui_activation, find_lui_activation, lui_forward, Aggregate, LuiParams};
use bimonn::morpho::{
    dilate, dilate_by_correlation, erode, erode_by_correlation, make_se, MorphOp, SeKind, SeShape, StructuringElement,
};
use bimonn::pipeline::binarize_network;
use bimonn::BinaryImage;
use common::gradcheck;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CELL_BUDGET: Duration = Duration::from_secs(30 * 60);

/// Writes straight to the stderr handle, which the test harness does not
/// capture, so the line shows up without `--nocapture`.
fn report_line(line: &str) {
    let _ = writeln!(std::io::stderr(), "{line}");
}

fn verdict(n: usize, ok: bool, detail: &str) {
    report_line(&format!("criterion {n} {}: {detail}", if ok { "PASS" } else { "FAIL" }));
    assert!(ok, "criterion {n}: {detail}");
}

fn default_se(kind: SeKind, side: usize) -> StructuringElement {
    make_se(SeShape::default_for(kind, side), side).unwrap()
}

/// Test threads would otherwise share the CPU and inflate each run's
/// wall-clock time.
static ONE_RUN_AT_A_TIME: Mutex<()> = Mutex::new(());

fn run(spec: ExperimentSpec) -> ExperimentRun {
    let _turn = ONE_RUN_AT_A_TIME.lock().unwrap_or_else(|e| e.into_inner());
    let run = run_experiment(&spec).unwrap_or_else(|e| panic!("{}: {e}", spec.label()));
    let r = &run.report;
    report_line(&format!(
        "  {:<32} DICE error {:.4}  {}  {} iterations  {:.1}s",
        r.label,
        r.final_dice_error,
        r.activation_marks(),
        r.iterations_run,
        r.wall_clock_seconds
    ));
    run
}

fn diskorect_runs(ops: [MorphOp; 2], kinds: &[SeKind]) -> Vec<ExperimentRun> {
    let mut out = Vec::new();
    for op in ops {
        for &kind in kinds {
            out.push(run(ExperimentSpec::new(DatasetKind::Diskorect, op, kind)));
        }
    }
    out
}

static DILATION_EROSION: OnceLock<Vec<ExperimentRun>> = OnceLock::new();
static OPENING_CLOSING: OnceLock<Vec<ExperimentRun>> = OnceLock::new();
static MNIST: OnceLock<Vec<ExperimentRun>> = OnceLock::new();

fn dilation_erosion() -> &'static [ExperimentRun] {
    DILATION_EROSION.get_or_init(|| {
        diskorect_runs(
            [MorphOp::Dilation, MorphOp::Erosion],
            &[SeKind::Disk, SeKind::Stick, SeKind::Cross],
        )
    })
}

fn opening_closing() -> &'static [ExperimentRun] {
    OPENING_CLOSING.get_or_init(|| diskorect_runs([MorphOp::Opening, MorphOp::Closing], &[SeKind::Disk, SeKind::Stick]))
}

fn mnist_source() -> PathBuf {
    bimonn::data::mnist::mnist_path_from_env()
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/mnist-1k-images-idx3-ubyte.gz"))
}

fn mnist() -> &'static [ExperimentRun] {
    MNIST.get_or_init(|| {
        [(MorphOp::Dilation, SeKind::Stick), (MorphOp::Erosion, SeKind::Disk)]
            .into_iter()
            .map(|(op, kind)| {
                let mut spec = ExperimentSpec::new(DatasetKind::Mnist, op, kind);
                spec.mnist_path = Some(mnist_source());
                run(spec)
            })
            .collect()
    })
}

#[test]
fn criterion_1_threshold_morphology_matches_set_definitions() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    for _ in 0..200 {
        let n = rng.gen_range(0..=3);
        let side = 2 * n + 1;
        let (h, w) = (rng.gen_range(side..=32), rng.gen_range(side..=32));
        let density = rng.gen_range(0.05..0.95);
        let x = BinaryImage::from_fn(h, w, |_, _| rng.gen_bool(density));
        let se = loop {
            let m: Vec<bool> = (0..side * side).map(|_| rng.gen_bool(0.5)).collect();
            if m.iter().any(|&b| b) {
                break StructuringElement::new(n, m).unwrap();
            }
        };
        if dilate_by_correlation(&x, &se).unwrap() != dilate(&x, &se) {
            mismatches += 1;
        }
        if erode_by_correlation(&x, &se).unwrap() != erode(&x, &se) {
            mismatches += 1;
        }
    }
    let elapsed = started.elapsed();
    verdict(
        1,
        mismatches == 0 && elapsed < Duration::from_secs(10),
        &format!("{mismatches} mismatches over 200 pairs in {:.2}s", elapsed.as_secs_f64()),
    );
}

#[test]
fn criterion_2_gradient_suite() {
    let started = Instant::now();
    let results = [
        ("bise", gradcheck::bise(), 1e-4),
        ("lui", gradcheck::lui(), 1e-4),
        ("losses", gradcheck::losses(), 1e-4),
        ("bisel", gradcheck::bisel(), 1e-4),
        ("two-layer net", gradcheck::two_layer_network(), 1e-3),
    ];
    let elapsed = started.elapsed();
    let mut ok = elapsed < Duration::from_secs(60);
    let mut detail = String::new();
    for (name, err, tol) in results {
        ok &= err < tol;
        detail.push_str(&format!("{name} {err:.1e} (< {tol:.0e}), "));
    }
    detail.push_str(&format!("{:.2}s", elapsed.as_secs_f64()));
    verdict(2, ok, &detail);
}

#[test]
fn criterion_3_activation_round_trip() {
    let bounds = AlmostBinaryBounds::new(0.01, 0.99).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut failures = Vec::new();
    for op in [MorphOp::Dilation, MorphOp::Erosion] {
        for kind in [SeKind::Disk, SeKind::Stick, SeKind::Cross] {
            let se = default_se(kind, 7);
            let params = BiseParams::ideal(op, &se, 3, &bounds, 6.0, 4.0).unwrap();
            let recovered = find_activation(&params, &bounds);
            if recovered.operation() != Some((op, &se)) {
                failures.push(format!("{} {}: recovered {}", op.name(), kind.name(), recovered.label()));
                continue;
            }
            let neuron = Bise::new(params);
            for _ in 0..20 {
                let density = rng.gen_range(0.2..0.8);
                let x = BinaryImage::from_fn(32, 32, |_, _| rng.gen_bool(density));
                let xr = Grid::from_fn(32, 32, |i, j| {
                    let r: f64 = rng.gen();
                    if x.get(i, j) {
                        bounds.v() + (1.0 - bounds.v()) * r
                    } else {
                        bounds.u() * r
                    }
                });
                if neuron.hard_forward(&xr).unwrap() != op.apply(&x, &se) {
                    failures.push(format!("{} {}: hard forward differs", op.name(), kind.name()));
                    break;
                }
            }
        }
    }
    verdict(3, failures.is_empty(), &format!("6 constructions, failures: {failures:?}"));
}

#[test]
fn criterion_4_diskorect_dilation_and_erosion() {
    let runs = dilation_erosion();
    let mut ok = true;
    let mut activated = 0;
    let mut cells = Vec::new();
    for r in runs.iter().map(|r| &r.report) {
        ok &= r.final_dice_error <= 0.005;
        ok &= r.iterations_run <= 30_000;
        ok &= r.wall_clock_seconds <= CELL_BUDGET.as_secs_f64();
        activated += r.all_activated as usize;
        cells.push(format!("{} {:.4}{}", r.label, r.final_dice_error, r.activation_marks()));
    }
    ok &= activated >= 4;
    verdict(4, ok, &format!("{activated}/6 activated; {}", cells.join(", ")));
}

#[test]
fn criterion_5_diskorect_opening_and_closing() {
    let runs = opening_closing();
    let mut ok = true;
    let mut cells = Vec::new();
    for r in runs.iter().map(|r| &r.report) {
        let limit = if r.spec.se_shape == SeKind::Stick { 0.01 } else { 0.10 };
        ok &= r.final_dice_error <= limit;
        ok &= r.wall_clock_seconds <= CELL_BUDGET.as_secs_f64();
        cells.push(format!(
            "{} {:.4} (≤ {limit}){}",
            r.label,
            r.final_dice_error,
            r.activation_marks()
        ));
    }
    verdict(5, ok, &cells.join(", "));
}

#[test]
fn criterion_6_mnist_spot_checks() {
    let runs = mnist();
    let limits = [0.005, 0.01];
    let mut ok = true;
    let mut cells = Vec::new();
    for (r, limit) in runs.iter().map(|r| &r.report).zip(limits) {
        ok &= r.final_dice_error <= limit;
        cells.push(format!("{} {:.4} (≤ {limit}){}", r.label, r.final_dice_error, r.activation_marks()));
    }
    verdict(6, ok, &format!("data {}; {}", mnist_source().display(), cells.join(", ")));
}

#[test]
fn criterion_7_lui_truth_tables() {
    let mut checked = 0;
    let mut failures = Vec::new();
    for n in 1..=4usize {
        let binary = vec![AlmostBinaryBounds::<f64>::binary(); n];
        let patterns = 1usize << n;
        // one pixel per pattern, channel k holds bit k
        let channels: Vec<Grid<f64>> = (0..n)
            .map(|k| Grid::from_fn(1, patterns, |_, j| ((j >> k) & 1) as f64))
            .collect();
        for subset_bits in 1..patterns {
            let subset: Vec<bool> = (0..n).map(|k| (subset_bits >> k) & 1 == 1).collect();
            let beta: Vec<f64> = subset.iter().map(|&m| if m { 1.0 } else { 0.05 }).collect();
            for agg in [Aggregate::Union, Aggregate::Intersection] {
                let check = check_lui_activation(&beta, 0.0, &subset, &binary).unwrap();
                let (lo, hi) = match agg {
                    Aggregate::Union => check.union_interval,
                    Aggregate::Intersection => check.intersection_interval,
                };
                let lo = lo.max(0.5);
                let params = LuiParams::from_effective(&beta, 0.5 * (lo + hi), 4.0);
                let status = find_lui_activation(&params, &binary);
                let members: Vec<usize> = (0..n).filter(|&k| subset[k]).collect();
                let agrees = match status.aggregate() {
                    Some((found, chans)) => {
                        chans == members.as_slice() && (found == agg || members.len() == 1)
                    }
                    None => false,
                };
                let (out, _) = lui_forward(&channels, &params).unwrap();
                let table_ok = (0..patterns).all(|j| {
                    let mut bits = members.iter().map(|&k| (j >> k) & 1 == 1);
                    let want = match agg {
                        Aggregate::Union => bits.any(|b| b),
                        Aggregate::Intersection => bits.all(|b| b),
                    };
                    (out.get(0, j) > 0.5) == want
                });
                checked += 1;
                if !(agrees && table_ok) {
                    failures.push(format!("n={n} C={members:?} {agg:?}"));
                }
            }
        }
    }
    verdict(
        7,
        failures.is_empty(),
        &format!("{checked} (subset, aggregate) tables; failures: {failures:?}"),
    );
}

#[test]
fn criterion_8_binarized_pipelines_match_networks() {
    let runs: Vec<&ExperimentRun> = dilation_erosion()
        .iter()
        .chain(opening_closing())
        .chain(mnist())
        .filter(|r| r.report.all_activated)
        .collect();
    let mut failures = Vec::new();
    for r in &runs {
        let pipeline = match binarize_network(&r.net) {
            Ok(p) => p,
            Err(_) => {
                failures.push(format!("{}: refused", r.report.label));
                continue;
            }
        };
        let border = r.net.loss_mask().border;
        for pair in r.data.test.iter().take(20) {
            let net_out = r.net.predict_binary(&[pair.input.to_real()]).unwrap();
            let pipe_out = pipeline.apply(std::slice::from_ref(&pair.input)).unwrap();
            if !net_out[0].eq_interior(&pipe_out[0], border) {
                failures.push(r.report.label.clone());
                break;
            }
        }
    }
    verdict(
        8,
        !runs.is_empty() && failures.is_empty(),
        &format!("{} fully activated networks, 20 held-out samples each; failures: {failures:?}", runs.len()),
    );
}

#[test]
fn criterion_9_duality_transfer() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst_identity: f64 = 0.0;
    let mut worst_transfer: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.gen_range(1..=3);
        let side = 2 * n + 1;
        let w = KernelWindow::from_fn(n, |_, _| rng.gen_range(0.0..1.0));
        let support = loop {
            let m: Vec<bool> = (0..side * side).map(|_| rng.gen_bool(0.5)).collect();
            if m.iter().any(|&b| b) {
                break StructuringElement::new(n, m).unwrap();
            }
        };
        let total: f64 = w.values().iter().sum();
        let u = rng.gen_range(0.0..0.3);
        let v = rng.gen_range(0.7..1.0);
        let bounds = AlmostBinaryBounds::new(u, v).unwrap();
        let (u_d, v_d) = check_activation(&w, 0.0, &support, &bounds).unwrap().dilation_interval;
        let dual = dual_bounds(w.values(), u_d, v_d);
        worst_identity = worst_identity
            .max((dual.v_e + u_d - total).abs())
            .max((dual.u_e + v_d - total).abs());

        // at u = 0, v = 1 the dilation interval of the same weights on
        // complemented inputs, carried over, is the erosion interval itself
        let binary = AlmostBinaryBounds::binary();
        let (u_d, v_d) = check_activation(&w, 0.0, &support, &binary).unwrap().dilation_interval;
        let carried = dual_bounds(w.values(), u_d, v_d);
        let (lo, hi) = check_activation(&w, 0.0, &support, &binary).unwrap().erosion_interval;
        worst_transfer = worst_transfer.max((carried.u_e - lo).abs()).max((carried.v_e - hi).abs());
    }
    verdict(
        9,
        worst_identity <= 1e-12 && worst_transfer <= 1e-12,
        &format!("identity residual {worst_identity:.1e}, transfer residual {worst_transfer:.1e} over 100 draws"),
    );
}
