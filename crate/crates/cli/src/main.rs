use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use texturestat_core::data::{load_gray_u8, save_gray_u8, save_png, Dataset};
use texturestat_core::gradsuite::{run_suite, GradOp};
use texturestat_core::hist::equalize_gray;
use texturestat_core::nn::Mlp;
use texturestat_core::ptfem::{ptfem_branches, PtfemDims, PtfemParams};
use texturestat_core::qco::{qco1d, qco2d};
use texturestat_core::stlnet::{
    ablate, ablation_grid, evaluate, load_checkpoint, train, write_ablation_csv, ForwardOpts, TrainConfig,
};
use texturestat_core::tem::{tem_forward_full, TemDims, TemParams};
use texturestat_core::tsr::{load_tsr, save_tsr};
use texturestat_core::Tensor;

#[derive(Parser)]
#[command(name = "texturestat", version, about = "Statistical texture operators and a small segmentation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classical histogram equalization of a grayscale image.
    DemoEqualize(EqualizeArgs),
    /// Run one quantization-and-counting pass and dump its intermediates.
    QcoDump(QcoArgs),
    /// Run a randomly initialized enhancement module and write its channels as images.
    #[command(alias = "tem")]
    TemDemo(TemArgs),
    /// Run a randomly initialized pyramid module and summarize each branch.
    #[command(alias = "ptfem")]
    PtfemDump(PtfemArgs),
    /// Generate the synthetic texture-segmentation dataset.
    GenData(GenArgs),
    /// Train a model; writes metrics.csv and a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Train and evaluate a grid of configurations, one CSV row per run.
    Ablate(AblateArgs),
    /// Finite-difference gradient checks at seeded interior points.
    GradCheck(GradArgs),
}

#[derive(Args)]
struct EqualizeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 256)]
    levels: usize,
    #[arg(long)]
    out: PathBuf,
}

/// Input feature map: a `.tsr` tensor `[C × H × W]`, or a PNG whose luma `v`
/// is embedded as `[cos(πv/2), sin(πv/2)]` so that pixel directions differ.
#[derive(Args)]
struct FeatureInput {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    levels: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum QcoMode {
    #[value(name = "1d")]
    One,
    #[value(name = "2d")]
    Two,
}

#[derive(Args)]
struct QcoArgs {
    #[command(flatten)]
    input: FeatureInput,
    #[arg(long, value_enum, default_value = "1d")]
    mode: QcoMode,
    #[arg(long, default_value_t = 8)]
    hidden: usize,
    #[arg(long, default_value_t = 8)]
    width: usize,
}

#[derive(Args)]
struct TemArgs {
    #[command(flatten)]
    input: FeatureInput,
    #[arg(long)]
    no_graph: bool,
    #[arg(long, default_value_t = 8)]
    out_channels: usize,
}

#[derive(Args)]
struct PtfemArgs {
    #[command(flatten)]
    input: FeatureInput,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    scales: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    width: usize,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Config file plus per-field overrides; overrides win.
#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    n_levels_1d: Option<usize>,
    #[arg(long)]
    n_levels_2d: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    ohem_theta: Option<f64>,
    #[arg(long)]
    ohem_min_keep: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    scales: Option<Vec<usize>>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    use_slf: Option<bool>,
    #[arg(long)]
    use_tem: Option<bool>,
    #[arg(long)]
    use_ptfem: Option<bool>,
    #[arg(long)]
    use_graph: Option<bool>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                TrainConfig::from_json(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => TrainConfig::default(),
        };
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field { cfg.$field = v.clone(); })*
            };
        }
        apply!(seed, lr, iters, batch, n_levels_1d, n_levels_2d, alpha, ohem_theta, ohem_min_keep, scales,
               momentum, weight_decay, eval_every);
        macro_rules! apply_flag {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.flags.$field = v; })*
            };
        }
        apply_flag!(use_slf, use_tem, use_ptfem, use_graph);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Val,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "val")]
    split: Split,
    /// Report file, or `-` for stdout.
    #[arg(long, default_value = "-")]
    out: String,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// components, levels, graph or scales.
    #[arg(long, alias = "flags-grid", default_value = "components")]
    grid: String,
    /// Level values for the `levels` grid.
    #[arg(long = "levels", value_delimiter = ',', default_value = "4,8,16,32")]
    sweep_levels: Vec<usize>,
    /// CSV file, or `-` for stdout.
    #[arg(long)]
    out: String,
}

#[derive(Args)]
struct GradArgs {
    /// Comma-separated operator names; all when omitted.
    #[arg(long, value_delimiter = ',')]
    ops: Vec<String>,
    #[arg(long, default_value_t = 20)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV file, or `-` for stdout.
    #[arg(long, default_value = "-")]
    out: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}

/// The error chain joined by `: `, skipping causes already spelled out by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut prev = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !prev.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
        prev = text;
    }
    out
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::DemoEqualize(a) => demo_equalize(a),
        Command::QcoDump(a) => qco_dump(a),
        Command::TemDemo(a) => tem_demo(a),
        Command::PtfemDump(a) => ptfem_dump(a),
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::GradCheck(a) => grad_check(a),
    }
}

/// Resolved settings go to stdout, unless stdout is carrying data.
fn announce(config: &serde_json::Value, data_on_stdout: bool) -> Result<()> {
    let text = serde_json::to_string_pretty(config)?;
    if data_on_stdout {
        writeln!(io::stderr(), "{text}")?;
    } else {
        writeln!(io::stdout(), "{text}")?;
    }
    Ok(())
}

fn write_output(dest: &str, text: &str) -> Result<()> {
    if dest == "-" {
        io::stdout().write_all(text.as_bytes())?;
        Ok(())
    } else {
        fs::write(dest, text).with_context(|| format!("writing {dest}"))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: PathBuf, text: String) -> Result<()> {
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn demo_equalize(a: EqualizeArgs) -> Result<()> {
    announce(
        &json!({"command": "demo-equalize", "input": a.input, "levels": a.levels, "out": a.out}),
        false,
    )?;
    let (h, w, pixels) = load_gray_u8(&a.input)?;
    let eq = equalize_gray(&pixels, a.levels)?;
    create_dir(&a.out)?;
    let mut orig = String::from("bin,count\n");
    for (i, c) in eq.counts.iter().enumerate() {
        writeln!(orig, "{i},{c}")?;
    }
    let mut remapped = String::from("level,count\n");
    for (level, c) in eq.remapped_histogram() {
        writeln!(remapped, "{level},{c}")?;
    }
    let mut mapping = String::from("bin,equalized_level\n");
    for (i, g) in eq.mapping.iter().enumerate() {
        writeln!(mapping, "{i},{g}")?;
    }
    write_file(a.out.join("original_hist.csv"), orig)?;
    write_file(a.out.join("equalized_hist.csv"), remapped)?;
    write_file(a.out.join("mapping.csv"), mapping)?;
    save_gray_u8(h, w, &eq.pixels, a.out.join("equalized.png"))?;
    Ok(())
}

fn load_features(path: &Path) -> Result<Tensor> {
    let is_tsr = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("tsr"));
    if is_tsr {
        let t = load_tsr(path)?;
        if t.rank() != 3 {
            bail!("{}: expected a [C x H x W] tensor, got shape {:?}", path.display(), t.shape());
        }
        return Ok(t);
    }
    let (h, w, pixels) = load_gray_u8(path)?;
    let hw = h * w;
    Ok(Tensor::from_fn(&[2, h, w], |i| {
        let angle = FRAC_PI_2 * f64::from(pixels[i % hw]) / 255.0;
        if i < hw {
            angle.cos()
        } else {
            angle.sin()
        }
    }))
}

fn feature_config(command: &str, f: &FeatureInput, a: &Tensor) -> serde_json::Value {
    json!({
        "command": command,
        "input": f.input,
        "shape": a.shape(),
        "levels": f.levels,
        "seed": f.seed,
        "out": f.out,
    })
}

fn save_all(dir: &Path, items: &[(&str, &Tensor)]) -> Result<()> {
    for (name, t) in items {
        save_tsr(t, dir.join(format!("{name}.tsr")))?;
    }
    Ok(())
}

fn qco_dump(a: QcoArgs) -> Result<()> {
    let f = &a.input;
    let feat = load_features(&f.input)?;
    let mut cfg = feature_config("qco-dump", f, &feat);
    cfg["mode"] = json!(match a.mode {
        QcoMode::One => "1d",
        QcoMode::Two => "2d",
    });
    announce(&cfg, false)?;
    let mut rng = ChaCha8Rng::seed_from_u64(f.seed);
    create_dir(&f.out)?;
    let mut csv = String::new();
    match a.mode {
        QcoMode::One => {
            let mlp = Mlp::init(2, a.hidden, a.width, &mut rng);
            let q = qco1d(&feat, f.levels, &mlp)?;
            save_all(&f.out, &[
                ("similarity", &q.similarity),
                ("levels", &q.levels),
                ("encoding", &q.encoding),
                ("counting", &q.counting),
                ("statfeat", &q.statfeat),
            ])?;
            csv.push_str("level,normalized_count\n");
            for row in q.counting.data().chunks(2) {
                writeln!(csv, "{},{}", row[0], row[1])?;
            }
        }
        QcoMode::Two => {
            let mlp = Mlp::init(3, a.hidden, a.width, &mut rng);
            let q = qco2d(&feat, f.levels, &mlp)?;
            save_all(&f.out, &[
                ("similarity", &q.similarity),
                ("levels", &q.levels),
                ("encoding", &q.encoding),
                ("counting", &q.counting),
                ("statfeat", &q.statfeat),
            ])?;
            csv.push_str("level,level2,normalized_count\n");
            for row in q.counting.data().chunks(3) {
                writeln!(csv, "{},{},{}", row[0], row[1], row[2])?;
            }
        }
    }
    write_file(f.out.join("counting.csv"), csv)
}

fn tem_demo(a: TemArgs) -> Result<()> {
    let f = &a.input;
    let feat = load_features(&f.input)?;
    let mut cfg = feature_config("tem-demo", f, &feat);
    cfg["use_graph"] = json!(!a.no_graph);
    cfg["out_channels"] = json!(a.out_channels);
    announce(&cfg, false)?;
    let dims = TemDims {
        in_channels: feat.shape()[0],
        qco_hidden: 16,
        qco_out: 16,
        key: 16,
        out_channels: a.out_channels,
    };
    let params = TemParams::init(dims, &mut ChaCha8Rng::seed_from_u64(f.seed));
    let out = tem_forward_full(&feat, f.levels, &params, !a.no_graph)?;
    create_dir(&f.out)?;
    save_all(&f.out, &[("output", &out.output), ("levels_prime", &out.levels_prime)])?;
    if let Some(graph) = &out.level_graph {
        save_tsr(graph, f.out.join("level_graph.tsr"))?;
    }
    let (h, w) = (feat.shape()[1], feat.shape()[2]);
    for (ch, plane) in out.output.data().chunks(h * w).enumerate() {
        let lo = plane.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi - lo > 0.0 { hi - lo } else { 1.0 };
        let img = Tensor::from_fn(&[h, w], |i| (plane[i] - lo) / span);
        save_png(&img, f.out.join(format!("channel_{ch:02}.png")))?;
    }
    Ok(())
}

fn ptfem_dump(a: PtfemArgs) -> Result<()> {
    let f = &a.input;
    let feat = load_features(&f.input)?;
    let mut cfg = feature_config("ptfem-dump", f, &feat);
    cfg["scales"] = json!(a.scales);
    announce(&cfg, false)?;
    let dims = PtfemDims {
        in_channels: feat.shape()[0],
        qco_hidden: 16,
        qco_out: a.width,
        desc_hidden: 16,
        desc_out: a.width,
    };
    let params = PtfemParams::init(dims, &a.scales, &mut ChaCha8Rng::seed_from_u64(f.seed))?;
    let branches = ptfem_branches(&feat, f.levels, &params)?;
    create_dir(&f.out)?;
    let mut csv = String::from("scale,channel,mean,std\n");
    for (&scale, t) in a.scales.iter().zip(&branches) {
        save_tsr(t, f.out.join(format!("branch_s{scale}.tsr")))?;
        let plane = t.numel() / t.shape()[0];
        for (ch, xs) in t.data().chunks(plane).enumerate() {
            let mean = xs.iter().sum::<f64>() / plane as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / plane as f64;
            writeln!(csv, "{scale},{ch},{mean},{}", var.sqrt())?;
        }
    }
    write_file(f.out.join("branches.csv"), csv)
}

fn gen_data(a: GenArgs) -> Result<()> {
    announce(
        &json!({"command": "gen-data", "n": a.n, "size": a.size, "classes": a.classes, "seed": a.seed, "out": a.out}),
        false,
    )?;
    let ds = Dataset::generate(a.n, a.size, a.classes, a.seed)?;
    ds.save(&a.out)?;
    Ok(())
}

fn load_dataset(dir: &Path) -> Result<Dataset> {
    Dataset::load(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    announce(&json!({"command": "train", "data": a.data, "out": a.out, "config": cfg}), false)?;
    let ds = load_dataset(&a.data)?;
    let outcome = train(&ds, &cfg, Some(&a.out))?;
    eprintln!("final val mIoU {:.4}", outcome.val.miou);
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let (params, cfg) = load_checkpoint(&a.checkpoint)
        .with_context(|| format!("loading checkpoint {}", a.checkpoint.display()))?;
    let split = match a.split {
        Split::Train => "train",
        Split::Val => "val",
    };
    announce(
        &json!({"command": "eval", "data": a.data, "checkpoint": a.checkpoint, "split": split, "config": cfg}),
        a.out == "-",
    )?;
    let ds = load_dataset(&a.data)?;
    let opts = ForwardOpts::from(&cfg);
    let report = match a.split {
        Split::Train => evaluate(&params, ds.train_samples(), opts)?,
        Split::Val => evaluate(&params, ds.val_samples(), opts)?,
    };
    let k = params.num_classes();
    let confusion: Vec<&[u64]> = report.confusion.chunks(k).collect();
    let text = serde_json::to_string_pretty(&json!({
        "miou": report.miou,
        "per_class_iou": report.per_class_iou,
        "confusion": confusion,
    }))?;
    write_output(&a.out, &(text + "\n"))
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    let base = a.config.resolve()?;
    let runs = ablation_grid(&a.grid, &base, &a.sweep_levels)?;
    announce(
        &json!({
            "command": "ablate",
            "data": a.data,
            "grid": a.grid,
            "runs": runs.iter().map(|r| &r.label).collect::<Vec<_>>(),
            "config": base,
        }),
        a.out == "-",
    )?;
    let ds = load_dataset(&a.data)?;
    let rows = ablate(&ds, &runs, |row| match (&row.miou, &row.error) {
        (Some(m), _) => eprintln!("{}: mIoU {m:.4}", row.label),
        (_, Some(e)) => eprintln!("{}: failed: {e}", row.label),
        _ => {}
    });
    let mut buf = Vec::new();
    write_ablation_csv(&rows, &mut buf)?;
    write_output(&a.out, &String::from_utf8(buf)?)
}

fn grad_check(a: GradArgs) -> Result<()> {
    let ops: Vec<GradOp> = if a.ops.is_empty() {
        GradOp::ALL.to_vec()
    } else {
        a.ops
            .iter()
            .map(|s| GradOp::parse(s).with_context(|| format!("unknown operator {s:?}")))
            .collect::<Result<_>>()?
    };
    announce(
        &json!({
            "command": "grad-check",
            "ops": ops.iter().map(|o| o.name()).collect::<Vec<_>>(),
            "points": a.points,
            "seed": a.seed,
        }),
        a.out == "-",
    )?;
    let checks = run_suite(&ops, a.points, a.seed)?;
    let mut csv = String::from("op,point,attempts,max_rel_error,tolerance,passed\n");
    for c in &checks {
        writeln!(
            csv,
            "{},{},{},{:e},{:e},{}",
            c.op.name(),
            c.point,
            c.attempts,
            c.report.max_rel_error,
            c.op.tolerance(),
            c.passed()
        )?;
    }
    write_output(&a.out, &csv)?;
    let failed = checks.iter().filter(|c| !c.passed()).count();
    if failed > 0 {
        bail!("{failed} of {} gradient checks failed", checks.len());
    }
    Ok(())
}
