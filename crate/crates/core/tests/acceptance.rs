//! One pass/fail line per acceptance criterion; exits nonzero if any fails.
//!
//! Runs with a plain `main` so the report is printed even when every line passes.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use texturestat_core::data::Dataset;
use texturestat_core::gradsuite::{run_suite, GradOp};
use texturestat_core::hist::{equalize_gray, gray_histogram, histogram_entropy};
use texturestat_core::ptfem::glcm_oracle;
use texturestat_core::qco::{cooccurrence_encode, count_1d, count_2d, quantization_levels, quantize_encode};
use texturestat_core::qco::{similarity_map, window_half_width};
use texturestat_core::stlnet::{
    ablate, ablation_grid, stlnet_forward, train, write_ablation_csv, AblationRow, Flags, ForwardOpts,
    StlnetParams, TrainConfig,
};
use texturestat_core::tem::{reference_hist_equalize, tem_forward_full, TemDims, TemParams};
use texturestat_core::tensor::global_avg_pool;
use texturestat_core::Tensor;

const GRAD_POINTS: usize = 20;
const GRAD_BUDGET: Duration = Duration::from_secs(120);
const RUN_BUDGET: Duration = Duration::from_secs(30 * 60);
const DATA_SEED: u64 = 0;

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, id: u32, name: &str, pass: bool, detail: String) {
        if !pass {
            self.failures += 1;
        }
        println!("[{}] criterion {id} ({name}): {detail}", if pass { "PASS" } else { "FAIL" });
    }

    fn info(&self, text: &str) {
        for l in text.lines() {
            println!("       {l}");
        }
    }
}

fn out_dir() -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn gradients(r: &mut Report) {
    let ops = [GradOp::Qco1d, GradOp::Qco2d, GradOp::Tem, GradOp::Ptfem, GradOp::TotalLoss];
    let start = Instant::now();
    let checks = match run_suite(&ops, GRAD_POINTS, 0) {
        Ok(c) => c,
        Err(e) => return r.line(1, "gradient checks", false, format!("suite error: {e}")),
    };
    let elapsed = start.elapsed();
    let mut pass = elapsed < GRAD_BUDGET;
    let mut summary = Vec::new();
    for op in ops {
        let mine: Vec<_> = checks.iter().filter(|c| c.op == op).collect();
        let worst = mine.iter().map(|c| c.report.max_rel_error).fold(0.0, f64::max);
        let ok = mine.len() >= GRAD_POINTS && mine.iter().all(|c| c.passed());
        pass &= ok;
        summary.push(format!("{} {}x worst {worst:.1e} < {:.0e}", op.name(), mine.len(), op.tolerance()));
    }
    r.line(1, "gradient checks", pass, format!("{}; {:.1}s < 120s", summary.join(", "), elapsed.as_secs_f64()));
    match run_suite(&[GradOp::Stlnet], GRAD_POINTS, 0) {
        Ok(c) => {
            let worst = c.iter().map(|c| c.report.max_rel_error).fold(0.0, f64::max);
            let failed = c.iter().filter(|c| !c.passed()).count();
            r.info(&format!("whole network (extra): {} points, worst {worst:.1e}, {failed} over 1e-3", c.len()));
        }
        Err(e) => r.info(&format!("whole network (extra): {e}")),
    }
}

/// A random `[N × HW]` encoding from quantizing random similarities, or all zeros.
fn random_encoding(rng: &mut ChaCha8Rng, i: usize) -> (Tensor, Tensor, usize, usize) {
    let n = rng.gen_range(2..=16);
    let (h, w) = (rng.gen_range(1..=8), rng.gen_range(2..=8));
    let s = Tensor::from_fn(&[h * w], |_| rng.gen_range(-1.0..1.0));
    let levels = quantization_levels(&s, n).unwrap();
    let e = if i.is_multiple_of(10) {
        Tensor::zeros(&[n, h * w])
    } else {
        quantize_encode(&s, &levels).unwrap()
    };
    (e, levels, h, w)
}

fn count_normalization(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst, mut zero_cases, mut bad) = (0.0f64, 0, 0);
    let mut check = |sum: f64, all_zero: bool| {
        if all_zero {
            zero_cases += 1;
            if sum != 0.0 {
                bad += 1;
            }
        } else {
            worst = worst.max((sum - 1.0).abs());
            if (sum - 1.0).abs() > 1e-9 {
                bad += 1;
            }
        }
    };
    for i in 0..1000 {
        let (e, levels, h, w) = random_encoding(&mut rng, i);
        let n = levels.numel();
        let c1 = count_1d(&e, &levels).unwrap();
        let s1: f64 = (0..n).map(|k| c1.at(&[k, 1])).sum();
        check(s1, e.data().iter().all(|&v| v == 0.0));
        let cooc = cooccurrence_encode(&e.clone().reshape(&[n, h, w]).unwrap()).unwrap();
        let c2 = count_2d(&cooc, &levels).unwrap();
        let s2: f64 = (0..n * n).map(|k| c2.data()[k * 3 + 2]).sum();
        check(s2, cooc.data().iter().all(|&v| v == 0.0));
    }
    r.line(
        2,
        "count normalization",
        bad == 0,
        format!("1000 inputs x 2 maps, max |sum-1| {worst:.1e} <= 1e-9, {zero_cases} all-zero maps sum to exactly 0, {bad} violations"),
    );
}

fn glcm_equivalence(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(2..=8);
        let (h, w) = (rng.gen_range(2..=12), rng.gen_range(2..=12));
        let gray: Vec<usize> = (0..h * w).map(|_| rng.gen_range(0..n)).collect();
        // level spacing 1/N keeps the windows disjoint, so each pixel is one-hot
        let levels = Tensor::from_fn(&[n], |k| (k + 1) as f64 / n as f64);
        let s = Tensor::from_fn(&[h * w], |i| levels.data()[gray[i]]);
        let e = quantize_encode(&s, &levels).unwrap().reshape(&[n, h, w]).unwrap();
        let c = count_2d(&cooccurrence_encode(&e).unwrap(), &levels).unwrap();
        let img = Tensor::from_fn(&[h, w], |i| gray[i] as f64);
        let oracle = glcm_oracle(&img, n).unwrap();
        for k in 0..n * n {
            worst = worst.max((c.data()[k * 3 + 2] - oracle.data()[k]).abs());
        }
    }
    r.line(3, "GLCM oracle", worst <= 1e-9, format!("100 patches, max cell difference {worst:.1e} <= 1e-9"));
}

fn equalization(r: &mut Report) {
    let uniform = reference_hist_equalize(&[5.0; 4], 4).unwrap();
    let uniform_ok = uniform.iter().zip([0.75, 1.5, 2.25, 3.0]).all(|(a, b)| (a - b).abs() < 1e-12);
    let first = reference_hist_equalize(&[9.0, 0.0, 0.0, 0.0], 4).unwrap();
    let first_ok = first.iter().all(|&v| v == 3.0);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut entropy_ok, mut monotone_ok, mut merged_8bit) = (true, true, 0);
    let images = 100;
    for i in 0..images {
        let n = [4, 16, 64, 256][i % 4];
        // skewed intensity distributions: a random power of a uniform draw
        let gamma = rng.gen_range(0.2..5.0);
        let lo = rng.gen_range(0.0..0.5);
        let span = rng.gen_range(0.05..(1.0 - lo));
        let pixels: Vec<u8> = (0..1024)
            .map(|_| ((lo + span * rng.gen::<f64>().powf(gamma)) * 255.0).round() as u8)
            .collect();
        let eq = equalize_gray(&pixels, n).unwrap();
        let before = histogram_entropy(&eq.counts);
        let remapped: Vec<f64> = eq.remapped_histogram().into_iter().map(|(_, c)| c).collect();
        entropy_ok &= histogram_entropy(&remapped) >= before - 1e-12;
        monotone_ok &= eq.mapping.windows(2).all(|w| w[0] <= w[1]);
        if histogram_entropy(&gray_histogram(&eq.pixels, 256)) < before - 1e-12 {
            merged_8bit += 1;
        }
    }
    let ramp: Vec<u8> = (0..4096).map(|i| 100 + (i % 32) as u8).collect();
    let eq = equalize_gray(&ramp, 256).unwrap();
    let (ramp_in, ramp_out) = (
        histogram_entropy(&gray_histogram(&ramp, 16)),
        histogram_entropy(&gray_histogram(&eq.pixels, 16)),
    );
    let pass = uniform_ok && first_ok && entropy_ok && monotone_ok && ramp_out >= ramp_in;
    r.line(
        4,
        "histogram equalization",
        pass,
        format!(
            "uniform -> {uniform:?}, first-bin -> {first:?}, remapped entropy >= original on {images} images: {entropy_ok}, \
             nondecreasing: {monotone_ok}, low-contrast ramp entropy {ramp_in:.2} -> {ramp_out:.2} bits"
        ),
    );
    r.info(&format!(
        "entropy measured on the histogram over equalized levels; after rounding to 8-bit output, \
         {merged_8bit}/{images} images merge levels and lose entropy"
    ));
}

fn rows_csv(rows: &[AblationRow]) -> String {
    let mut buf = Vec::new();
    write_ablation_csv(rows, &mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

fn timed_ablate(ds: &Dataset, kind: &str, base: &TrainConfig, levels: &[usize]) -> (Vec<AblationRow>, Vec<Duration>) {
    let runs = ablation_grid(kind, base, levels).unwrap();
    let mut times = Vec::new();
    let mut last = Instant::now();
    let rows = ablate(ds, &runs, |_| {
        times.push(last.elapsed());
        last = Instant::now();
    });
    (rows, times)
}

fn miou_of(rows: &[AblationRow], label: &str) -> Option<f64> {
    rows.iter().find(|r| r.label == label).and_then(|r| r.miou)
}

fn texture_benefit(r: &mut Report, ds: &Dataset) {
    let base = TrainConfig::default();
    let (rows, times) = timed_ablate(ds, "components", &base, &[]);
    let csv = rows_csv(&rows);
    fs::write(out_dir().join("components.csv"), &csv).unwrap();
    let full = miou_of(&rows, &Flags::FULL.label());
    let baseline = miou_of(&rows, &Flags::BASELINE.label());
    let slowest = times.iter().max().copied().unwrap_or_default();
    let pass = rows.len() == 5
        && matches!((full, baseline), (Some(f), Some(b)) if f >= b + 0.05)
        && slowest < RUN_BUDGET;
    r.line(
        5,
        "texture-branch benefit",
        pass,
        format!(
            "full {:.4} vs baseline {:.4} (need +0.05), slowest run {:.1}s < 1800s, {} iters, lr {}",
            full.unwrap_or(f64::NAN),
            baseline.unwrap_or(f64::NAN),
            slowest.as_secs_f64(),
            base.iters,
            base.lr
        ),
    );
    r.info(&csv);

    let tuned = TrainConfig {
        lr: 0.05,
        iters: 1000,
        eval_every: 1000,
        flags: Flags::BASELINE,
        ..base
    };
    match train(ds, &tuned, None) {
        Ok(o) => r.info(&format!(
            "context: baseline alone at lr 0.05 for 1000 iters reaches mIoU {:.4}; the gap above is a \
             same-budget comparison, not a capacity limit",
            o.val.miou
        )),
        Err(e) => r.info(&format!("context run failed: {e}")),
    }
}

fn level_sweep(r: &mut Report, ds: &Dataset) {
    let levels = [4, 8, 16, 32];
    let (rows, _) = timed_ablate(ds, "levels", &TrainConfig::default(), &levels);
    let csv = rows_csv(&rows);
    fs::write(out_dir().join("levels.csv"), &csv).unwrap();
    let m: Vec<Option<f64>> = rows.iter().map(|row| row.miou).collect();
    let pass = rows.len() == 4 && matches!((m[0], m[1]), (Some(a), Some(b)) if b >= a);
    let shown: Vec<String> = levels
        .iter()
        .zip(&m)
        .map(|(n, v)| format!("N={n}: {}", v.map_or("failed".into(), |v| format!("{v:.4}"))))
        .collect();
    r.line(6, "level sweep", pass, format!("{}; need mIoU(8) >= mIoU(4)", shown.join(", ")));
}

fn determinism(r: &mut Report) {
    let ds = Dataset::generate(30, 64, 3, 11).unwrap();
    let cfg = TrainConfig {
        iters: 12,
        eval_every: 4,
        ..TrainConfig::default()
    };
    let tmp = tempfile::tempdir().unwrap();
    let mut metrics = Vec::new();
    for k in 0..2 {
        let dir = tmp.path().join(format!("run{k}"));
        train(&ds, &cfg, Some(&dir)).unwrap();
        metrics.push(fs::read(dir.join("metrics.csv")).unwrap());
    }
    let cfg = TrainConfig { iters: 3, ..cfg };
    let runs = ablation_grid("components", &cfg, &[]).unwrap();
    let sweeps: Vec<String> = (0..2).map(|_| rows_csv(&ablate(&ds, &runs, |_| {}))).collect();
    let pass = metrics[0] == metrics[1] && sweeps[0] == sweeps[1];
    r.line(
        7,
        "determinism",
        pass,
        format!(
            "metrics.csv identical: {}, ablation csv identical: {}",
            metrics[0] == metrics[1],
            sweeps[0] == sweeps[1]
        ),
    );
}

fn graph_ablation(r: &mut Report, ds: &Dataset) {
    let cfg = TrainConfig::default();
    let params = StlnetParams::init(3, &cfg).unwrap();
    let img = &ds.samples[0].image;
    let on = ForwardOpts::from(&cfg);
    let off = ForwardOpts {
        flags: Flags {
            use_graph: false,
            ..cfg.flags
        },
        ..on
    };
    let (a, _) = stlnet_forward(img, &params, on).unwrap();
    let (b, _) = stlnet_forward(img, &params, off).unwrap();
    let diff = a.max_abs_diff(&b);

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut cases, mut exact) = (0, true);
    while cases < 50 {
        let (h, w) = (4, 5);
        let angles: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-3.1..3.1)).collect();
        let hw = h * w;
        let a = Tensor::from_fn(&[2, h, w], |i| if i < hw { angles[i].cos() } else { angles[i - hw].sin() });
        let s = similarity_map(&a, &global_avg_pool(&a).unwrap()).unwrap();
        let (lo, hi) = s.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        let n = 6;
        // windows are disjoint once the level spacing reaches the window width
        if (hi - lo) / (n as f64) < 2.0 * window_half_width(n) {
            continue;
        }
        cases += 1;
        let dims = TemDims {
            in_channels: 2,
            qco_hidden: 5,
            qco_out: 4,
            key: 3,
            out_channels: 3,
        };
        let params = TemParams::init(dims, &mut rng);
        let out = tem_forward_full(&a, n, &params, false).unwrap();
        let (d, e, lp) = (&out.qco.statfeat, &out.qco.encoding, &out.levels_prime);
        for k in 0..n {
            for c in 0..3 {
                let direct = params.phi3.bias.data()[c]
                    + (0..d.shape()[0]).map(|j| params.phi3.weight.at(&[c, j]) * d.at(&[j, k])).sum::<f64>();
                exact &= (lp.at(&[c, k]) - direct).abs() < 1e-12;
            }
        }
        for i in 0..hw {
            let hot: Vec<usize> = (0..n).filter(|&k| e.at(&[k, i]) != 0.0).collect();
            exact &= hot.len() <= 1;
            for c in 0..3 {
                let want = hot.first().map_or(0.0, |&k| e.at(&[k, i]) * lp.at(&[c, k]));
                exact &= out.output.data()[c * hw + i] == want;
            }
        }
    }
    r.line(
        8,
        "graph ablation",
        diff > 0.0 && exact,
        format!("logits differ without the level graph (max |diff| {diff:.2e}); identity-graph lookup exact on {cases} inputs: {exact}"),
    );
}

fn main() -> ExitCode {
    let mut r = Report { failures: 0 };
    let started = Instant::now();
    gradients(&mut r);
    count_normalization(&mut r);
    glcm_equivalence(&mut r);
    equalization(&mut r);
    let ds = Dataset::generate(250, 64, 3, DATA_SEED).unwrap();
    assert_eq!((ds.train.len(), ds.val.len()), (200, 50));
    texture_benefit(&mut r, &ds);
    level_sweep(&mut r, &ds);
    determinism(&mut r);
    graph_ablation(&mut r, &ds);
    println!(
        "acceptance: {} of 8 criteria failed ({:.0}s; tables in {})",
        r.failures,
        started.elapsed().as_secs_f64(),
        out_dir().display()
    );
    if r.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
