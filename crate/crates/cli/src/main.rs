use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use xbar_core::analyzer::{build_report, LatencyModel, ReportOptions, DEFAULT_T_DEVICE};
use xbar_core::io::netlist::write_netlist_file;
use xbar_core::io::weights::{export_weights, import_weights};
use xbar_core::io::{load_network_spec, read_raw_image, write_raw_image};
use xbar_core::reference::forward_ref;
use xbar_core::synth::{synth_images, synth_weights, SynthOptions};
use xbar_core::tensor::{argmax, max_abs_diff};
use xbar_core::{
    compile_model, forward_batch, CompiledNetwork, DeviceParams, Error, Exec, Model, NetworkSpec,
    Tensor, WeightStore,
};

#[derive(Parser)]
#[command(
    name = "xbar",
    version,
    about = "Compile CNNs to memristor crossbars and simulate them"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one netlist per crossbar plus summary.txt
    Compile {
        #[command(flatten)]
        net: NetArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the analog model and print scores and labels per image
    Simulate {
        #[command(flatten)]
        net: NetArgs,
        #[command(flatten)]
        images: ImageArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analog scores against the float reference
    Compare {
        #[command(flatten)]
        net: NetArgs,
        #[command(flatten)]
        images: ImageArgs,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Resource, power, latency and weight-distribution report
    Report {
        #[command(flatten)]
        net: NetArgs,
        #[arg(long, default_value_t = DEFAULT_T_DEVICE)]
        t_device: f64,
        /// Pipeline depth override; defaults to the compiled network's depth
        #[arg(long)]
        stage_count: Option<usize>,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        #[arg(long, default_value_t = 0.2)]
        w_max: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate seeded random weights (and optionally images) for a model
    SynthWeights {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fraction of weights forced to zero
        #[arg(long, default_value_t = 0.0)]
        sparsity: f64,
        /// Also write this many raw f32 images
        #[arg(long, default_value_t = 0)]
        images: usize,
    },
}

#[derive(Args)]
struct NetArgs {
    /// Network description (JSON)
    #[arg(long)]
    model: PathBuf,
    /// Weight manifest
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    g_unit: Option<f64>,
    #[arg(long)]
    v_scale: Option<f64>,
}

#[derive(Args)]
struct ImageArgs {
    /// Raw little-endian f32 image, one per file; repeatable
    #[arg(long = "input")]
    inputs: Vec<PathBuf>,
    /// Append this many seeded random images
    #[arg(long, default_value_t = 0)]
    random_images: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Image source label and the decoded image or the reason it could not be read.
type ImageList = Vec<(String, Result<Tensor, String>)>;

struct Failure {
    code: u8,
    message: String,
}

fn user(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidProgram(_) | Error::Index { .. } => 3,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type Outcome = Result<ExitCode, Failure>;

fn require_file(path: &Path, what: &str) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(user(format!(
            "{what} `{}` does not exist or is not a file",
            path.display()
        )))
    }
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| {
        user(format!(
            "cannot create output directory `{}`: {e}",
            dir.display()
        ))
    })
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<(), Failure> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| user(format!("cannot write `{}`: {e}", path.display())))
}

fn device(net: &NetArgs) -> Result<DeviceParams, Failure> {
    let mut dp = DeviceParams::default();
    if let Some(g) = net.g_unit {
        dp.g_unit = g;
    }
    if let Some(v) = net.v_scale {
        dp.v_scale = v;
    }
    dp.validate()?;
    Ok(dp)
}

struct Loaded {
    spec: NetworkSpec,
    store: WeightStore,
    model: Model,
    net: CompiledNetwork,
}

fn load(args: &NetArgs) -> Result<Loaded, Failure> {
    require_file(&args.model, "model")?;
    require_file(&args.weights, "weight manifest")?;
    let dp = device(args)?;
    let spec = load_network_spec(&args.model)?;
    let store = import_weights(&args.weights)?;
    let model = Model::bind(spec.clone(), &store)?;
    let net = compile_model(&model, &dp)?;
    log::info!(
        "compiled {} stages, {} memristors",
        net.stages.len(),
        net.memristor_count()
    );
    Ok(Loaded {
        spec,
        store,
        model,
        net,
    })
}

/// Images in command-line order, then the random ones. A file that cannot be
/// read becomes a per-record error.
fn gather_images(args: &ImageArgs, spec: &NetworkSpec) -> Result<ImageList, Failure> {
    for p in &args.inputs {
        require_file(p, "input")?;
    }
    let mut out: ImageList = args
        .inputs
        .iter()
        .map(|p| {
            (
                p.display().to_string(),
                read_raw_image(p).map_err(|e| e.to_string()),
            )
        })
        .collect();
    for (k, img) in synth_images(spec, args.random_images, args.seed)
        .into_iter()
        .enumerate()
    {
        out.push((format!("random:{}:{k}", args.seed), Ok(img)));
    }
    Ok(out)
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

/// Runs the analog model on every readable image, keeping input order.
fn run_analog(
    net: &CompiledNetwork,
    images: &[(String, Result<Tensor, String>)],
) -> Vec<Result<Vec<f64>, String>> {
    let ok: Vec<Tensor> = images
        .iter()
        .filter_map(|(_, t)| t.as_ref().ok().cloned())
        .collect();
    let mut scored = forward_batch(net, &ok, Exec::Parallel).into_iter();
    images
        .iter()
        .map(|(_, t)| match t {
            Ok(_) => scored
                .next()
                .expect("one result per image")
                .map_err(|e| e.to_string()),
            Err(e) => Err(e.clone()),
        })
        .collect()
}

fn emit(out: &Option<PathBuf>, name: &str, text: &str) -> Result<(), Failure> {
    print!("{text}");
    if let Some(dir) = out {
        prepare_out(dir)?;
        write_text(dir, name, text)?;
    }
    Ok(())
}

fn cmd_compile(net: &NetArgs, out: &Path) -> Outcome {
    let l = load(net)?;
    prepare_out(out)?;
    let mut summary = String::new();
    let _ = writeln!(summary, "model {}", net.model.display());
    let _ = writeln!(summary, "stages {}", l.net.stages.len());
    let _ = writeln!(summary, "crossbars {}", l.net.programs().len());
    let _ = writeln!(summary, "memristors {}", l.net.memristor_count());
    let _ = writeln!(summary, "depth {}", l.net.depth());
    for (idx, prog) in l.net.programs() {
        let file = format!("{idx}_{}.xbar", prog.label());
        write_netlist_file(out.join(&file), prog)?;
        let _ = writeln!(
            summary,
            "{file} rows {} cols {} memristors {}",
            prog.rows(),
            prog.cols(),
            prog.memristor_count()
        );
    }
    write_text(out, "summary.txt", &summary)?;
    summary.lines().take(5).for_each(|l| println!("{l}"));
    println!(
        "wrote {} netlists and summary.txt to {}",
        l.net.programs().len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_simulate(net: &NetArgs, images: &ImageArgs, out: &Option<PathBuf>) -> Outcome {
    let l = load(net)?;
    let imgs = gather_images(images, &l.spec)?;
    let results = run_analog(&l.net, &imgs);
    let mut text = String::new();
    let mut failed = 0;
    for (k, ((src, _), res)) in imgs.iter().zip(&results).enumerate() {
        match res {
            Ok(scores) => {
                let label = argmax(scores).expect("nonempty scores");
                let _ = writeln!(
                    text,
                    "image {k} source {src} status ok label {label} scores {}",
                    join(scores)
                );
            }
            Err(e) => {
                failed += 1;
                let _ = writeln!(text, "image {k} source {src} status failed error {e}");
            }
        }
    }
    let _ = writeln!(text, "summary images {} failed {failed}", imgs.len());
    emit(out, "simulate.txt", &text)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_compare(
    net: &NetArgs,
    images: &ImageArgs,
    tolerance: f64,
    out: &Option<PathBuf>,
) -> Outcome {
    if tolerance.is_nan() || tolerance < 0.0 {
        return Err(user(format!(
            "tolerance must be non-negative, got {tolerance}"
        )));
    }
    let l = load(net)?;
    let imgs = gather_images(images, &l.spec)?;
    let results = run_analog(&l.net, &imgs);
    let mut text = String::new();
    let (mut worst, mut failed, mut disagree) = (0.0f64, 0, 0);
    for (k, ((src, img), res)) in imgs.iter().zip(&results).enumerate() {
        let digital = img
            .as_ref()
            .map_err(Clone::clone)
            .and_then(|t| forward_ref(&l.model, t).map_err(|e| e.to_string()));
        match (res.clone(), digital) {
            (Ok(a), Ok(d)) => {
                let diff = max_abs_diff(&a, &d);
                let agree = argmax(&a) == argmax(&d);
                worst = worst.max(diff);
                disagree += usize::from(!agree);
                let _ = writeln!(
                    text,
                    "image {k} source {src} max_abs_diff {diff:e} argmax_agree {agree}"
                );
            }
            (Err(e), _) | (_, Err(e)) => {
                failed += 1;
                let _ = writeln!(text, "image {k} source {src} status failed error {e}");
            }
        }
    }
    let pass = failed == 0 && worst <= tolerance;
    let _ = writeln!(
        text,
        "result {} images {} failed {failed} argmax_disagree {disagree} max_abs_diff {worst:e} tolerance {tolerance:e}",
        if pass { "pass" } else { "fail" },
        imgs.len()
    );
    emit(out, "compare.txt", &text)?;
    Ok(if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_report(
    net: &NetArgs,
    latency: LatencyModel,
    bins: usize,
    w_max: f64,
    out: &Option<PathBuf>,
) -> Outcome {
    if w_max < 0.0 || !w_max.is_finite() {
        return Err(user(format!("w-max must be non-negative, got {w_max}")));
    }
    let l = load(net)?;
    let opts = ReportOptions {
        latency,
        bins,
        w_max,
        ..ReportOptions::default()
    };
    let report = build_report(&l.net, &l.store, &opts)?;
    let text = report.to_text();
    print!("{text}");
    if let Some(dir) = out {
        prepare_out(dir)?;
        write_text(dir, "report.txt", &text)?;
        let json = serde_json::to_string_pretty(&report).map_err(|e| Failure {
            code: 3,
            message: e.to_string(),
        })?;
        write_text(dir, "report.json", &(json + "\n"))?;
        write_text(dir, "histogram.csv", &report.weight_histogram.to_csv())?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_synth(model: &Path, out: &Path, seed: u64, sparsity: f64, images: usize) -> Outcome {
    if !(0.0..=1.0).contains(&sparsity) {
        return Err(user(format!("sparsity must lie in [0, 1], got {sparsity}")));
    }
    require_file(model, "model")?;
    let spec = load_network_spec(model)?;
    spec.infer_shapes()?;
    let store = synth_weights(&spec, &SynthOptions { seed, sparsity })?;
    prepare_out(out)?;
    let manifest = export_weights(&store, out, "weights.manifest", "weights.bin")?;
    println!("wrote {} ({} tensors)", manifest.display(), store.len());
    for (k, img) in synth_images(&spec, images, seed).iter().enumerate() {
        let path = out.join(format!("image_{k:04}.f32"));
        write_raw_image(&path, img)?;
        println!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Outcome {
    match &cli.command {
        Command::Compile { net, out } => cmd_compile(net, out),
        Command::Simulate { net, images, out } => cmd_simulate(net, images, out),
        Command::Compare {
            net,
            images,
            tolerance,
            out,
        } => cmd_compare(net, images, *tolerance, out),
        Command::Report {
            net,
            t_device,
            stage_count,
            bins,
            w_max,
            out,
        } => {
            let latency = LatencyModel {
                t_device: *t_device,
                stage_count: *stage_count,
            };
            cmd_report(net, latency, *bins, *w_max, out)
        }
        Command::SynthWeights {
            model,
            out,
            seed,
            sparsity,
            images,
        } => cmd_synth(model, out, *seed, *sparsity, *images),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("XBAR_LOG", "warn")).init();
    let cli = Cli::parse();
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(code)) => code,
        Ok(Err(f)) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
        Err(_) => {
            eprintln!("error: internal invariant violated");
            ExitCode::from(3)
        }
    }
}
