//! Command-line front end. [`run`] maps argv to an exit code:
//! 0 success, 1 usage error, 2 data or model error, 3 internal error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::PhysicsConfig;
use crate::dataset::{self, DatasetSplit, EncodeMode, Sample};
use crate::error::Error;
use crate::evaluation::{self, evaluate, NetworkClassifier};
use crate::fabricate::{export_manifest, quantize_phases, CalibrationTable};
use crate::field::ComplexField;
use crate::network::{forward, MetaNetwork, Readout, Optics};
use crate::propagation::{relative_l2, EvanescentPolicy, Method, PropagationSettings, Propagator};
use crate::training::{initial_network, train_with_observer, Hyperparams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

pub fn version_string() -> String {
    format!("v{}-{}", env!("CARGO_PKG_VERSION"), env!("METANN_GIT_DESCRIBE"))
}

#[derive(Debug, Parser)]
#[command(name = "metann", version, about = "Phase-only acoustic diffractive classifier toolkit")]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network on MNIST.
    Train(TrainArgs),
    /// Evaluate a trained model on the test set.
    Eval(EvalArgs),
    /// Classify a single MNIST image.
    Infer(InferArgs),
    /// Train and evaluate one network per layer count.
    SweepLayers(SweepArgs),
    /// Quantize phases to a fixed number of levels.
    Quantize(QuantizeArgs),
    /// Write the per-cell geometry manifest.
    ExportGeometry(ExportArgs),
    /// Time direct against spectral propagation.
    Bench(BenchArgs),
    /// Dump every plane of one forward pass.
    DumpField(DumpArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Direct,
    Spectral,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EncodeArg {
    Blocking,
    Aperture,
}

impl From<EncodeArg> for EncodeMode {
    fn from(e: EncodeArg) -> Self {
        match e {
            EncodeArg::Blocking => EncodeMode::Blocking,
            EncodeArg::Aperture => EncodeMode::Aperture,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// PhysicsConfig JSON; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "spectral")]
    pub method: MethodArg,
    #[arg(long, default_value_t = 4)]
    pub pad: usize,
    /// Overrides num_layers from the config.
    #[arg(long)]
    pub layers: Option<usize>,
    /// Side of each detector region in cells.
    #[arg(long, default_value_t = 4)]
    pub region_size: usize,
    /// Use a softmax readout with this temperature instead of normalized energies.
    #[arg(long)]
    pub softmax_temperature: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct HyperArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Use only the first N training images.
    #[arg(long)]
    pub train_limit: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub mnist_dir: PathBuf,
    #[arg(long, value_enum, default_value = "blocking")]
    pub encode: EncodeArg,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Output directory (default: `eval/` next to the model).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Evaluate only the first N images of the split.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub image_index: usize,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Also write a run manifest into this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 1)]
    pub min_layers: usize,
    #[arg(long, default_value_t = 10)]
    pub max_layers: usize,
    /// Evaluate on only the first N test images.
    #[arg(long)]
    pub eval_limit: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub levels: usize,
    /// When given, the test accuracy before and after quantization is reported.
    #[arg(long)]
    pub mnist_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "blocking")]
    pub encode: EncodeArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Calibration CSV (`height_m,phase_rad`); a synthetic linear table is
    /// used when omitted.
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Quantize to this many levels before export.
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub pad: usize,
    #[arg(long, value_delimiter = ',', default_value = "16,28,56")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 7)]
    pub reps: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub image_index: usize,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(Error),
    Internal(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::MethodMismatch { .. } => CliError::Internal(e.to_string()),
            other => CliError::Data(other),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| dispatch(cli)));
    match outcome {
        Ok(Ok(())) => EXIT_OK,
        Ok(Err(CliError::Usage(msg))) => {
            eprintln!("usage error: {msg}");
            EXIT_USAGE
        }
        Ok(Err(CliError::Data(e))) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
        Ok(Err(CliError::Internal(msg))) => {
            eprintln!("internal error: {msg}");
            EXIT_INTERNAL
        }
        Err(_) => {
            eprintln!("internal error: panic");
            EXIT_INTERNAL
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let threads = cli.threads;
    let body = move || match cli.command {
        Command::Train(a) => cmd_train(a, threads),
        Command::Eval(a) => cmd_eval(a, threads),
        Command::Infer(a) => cmd_infer(a, threads),
        Command::SweepLayers(a) => cmd_sweep(a, threads),
        Command::Quantize(a) => cmd_quantize(a, threads),
        Command::ExportGeometry(a) => cmd_export(a, threads),
        Command::Bench(a) => cmd_bench(a, threads),
        Command::DumpField(a) => cmd_dump(a, threads),
    };
    match threads {
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Internal(e.to_string()))?
            .install(body),
        None => body(),
    }
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Data(Error::io(dir, e)))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Data(Error::io(path, e)))
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn write_manifest(dir: &Path, command: &str, mut body: serde_json::Value, threads: Option<usize>) -> CliResult<()> {
    let obj = body.as_object_mut().expect("manifest body is an object");
    obj.insert("command".into(), json!(command));
    obj.insert("version".into(), json!(version_string()));
    obj.insert("threads".into(), json!(threads));
    obj.insert("finished_unix".into(), json!(unix_now()));
    let text = serde_json::to_string_pretty(&body).map_err(Error::from)? + "\n";
    write_text(&dir.join("manifest.json"), &text)
}

fn build_network(args: &ModelArgs, seed: u64) -> CliResult<MetaNetwork> {
    let mut config = match &args.config {
        Some(p) => PhysicsConfig::load(p)?,
        None => PhysicsConfig::default(),
    };
    if let Some(l) = args.layers {
        if l == 0 {
            return Err(CliError::Usage("--layers must be at least 1".into()));
        }
        config.num_layers = l;
    }
    if args.pad == 0 {
        return Err(CliError::Usage("--pad must be at least 1".into()));
    }
    config.validate()?;
    let settings = PropagationSettings {
        method: match args.method {
            MethodArg::Direct => Method::Direct,
            MethodArg::Spectral => Method::Spectral,
        },
        pad_factor: args.pad,
        evanescent: EvanescentPolicy::Zero,
    };
    let readout = match args.softmax_temperature {
        Some(t) if !(t > 0.0) => return Err(CliError::Usage("--softmax-temperature must be positive".into())),
        Some(t) => Readout::Softmax { temperature: t },
        None => Readout::default(),
    };
    Ok(initial_network(config, settings, args.region_size, readout, seed)?)
}

fn hyperparams(args: &HyperArgs) -> CliResult<Hyperparams> {
    let d = Hyperparams::default();
    let hp = Hyperparams {
        learning_rate: args.lr.unwrap_or(d.learning_rate),
        batch_size: args.batch.unwrap_or(d.batch_size),
        max_epochs: args.epochs.unwrap_or(d.max_epochs),
        early_stop_patience: args.patience.unwrap_or(d.early_stop_patience),
        seed: args.seed,
        ..d
    };
    hp.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(hp)
}

fn load_split(dir: &Path) -> CliResult<DatasetSplit> {
    log::info!("loading MNIST from {}", dir.display());
    Ok(DatasetSplit::load(dir)?)
}

fn pick_split(split: &DatasetSplit, which: SplitArg) -> &[Sample] {
    match which {
        SplitArg::Train => &split.train,
        SplitArg::Validation => &split.validation,
        SplitArg::Test => &split.test,
    }
}

fn limited(samples: &[Sample], limit: Option<usize>) -> &[Sample] {
    &samples[..limit.unwrap_or(samples.len()).min(samples.len())]
}

fn cmd_train(args: TrainArgs, threads: Option<usize>) -> CliResult<()> {
    let started = Instant::now();
    let hp = hyperparams(&args.hyper)?;
    let init = build_network(&args.model, hp.seed)?;
    let split = load_split(&args.data.mnist_dir)?;
    let encode: EncodeMode = args.data.encode.into();
    let train_set = limited(&split.train, args.hyper.train_limit);
    ensure_dir(&args.out)?;
    let run = train_with_observer(train_set, &split.validation, &hp, init, encode, |r| {
        eprintln!(
            "epoch {:>3}  train_loss {:.5}  val_accuracy {:.4}",
            r.epoch, r.train_loss, r.val_accuracy
        );
    })?;
    run.network.save(&args.out.join("model.json"))?;
    write_text(&args.out.join("history.csv"), &run.history_csv())?;
    let test = evaluate(&NetworkClassifier::new(&run.network, encode)?, &split.test)?;
    eprintln!("best epoch {} | test accuracy {:.4}", run.best_epoch, test.accuracy);
    write_manifest(
        &args.out,
        "train",
        json!({
            "seed": hp.seed,
            "method": run.network.propagation.method,
            "propagation": run.network.propagation,
            "config": run.network.config,
            "readout": run.network.readout,
            "encode": encode,
            "hyperparams": hp,
            "train_samples": train_set.len(),
            "validation_samples": split.validation.len(),
            "epochs_run": run.history.len(),
            "best_epoch": run.best_epoch,
            "best_val_accuracy": run.best_val_accuracy(),
            "test_accuracy": test.accuracy,
            "wall_time_s": started.elapsed().as_secs_f64(),
        }),
        threads,
    )
}

fn cmd_eval(args: EvalArgs, threads: Option<usize>) -> CliResult<()> {
    let net = MetaNetwork::load(&args.model)?;
    let split = load_split(&args.data.mnist_dir)?;
    let encode: EncodeMode = args.data.encode.into();
    let samples = limited(pick_split(&split, args.split), args.limit);
    let ev = evaluate(&NetworkClassifier::new(&net, encode)?, samples)?;
    let out = args.out.clone().unwrap_or_else(|| {
        args.model.parent().unwrap_or_else(|| Path::new(".")).join("eval")
    });
    ensure_dir(&out)?;
    write_text(&out.join("confusion.csv"), &ev.confusion.to_csv())?;
    write_text(&out.join("energy_matrix.csv"), &ev.energy.to_csv())?;
    let confusion_rows: Vec<Vec<f64>> = ev.confusion.0.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
    evaluation::render_heatmap(&confusion_rows, 16, &out.join("confusion_heatmap.png"))?;
    evaluation::render_heatmap(&ev.energy.as_rows(), 16, &out.join("energy_matrix_heatmap.png"))?;
    let showcase = evaluation::select_showcase(&ev, samples, 2);
    let mut showcase_csv = String::from("index,label\n");
    for &i in &showcase {
        showcase_csv.push_str(&format!("{},{}\n", i, samples[i].label));
    }
    write_text(&out.join("showcase.csv"), &showcase_csv)?;
    println!("accuracy {} ({} / {})", ev.accuracy, ev.confusion.trace(), ev.confusion.total());
    write_manifest(
        &out,
        "eval",
        json!({
            "model": args.model,
            "encode": encode,
            "samples": samples.len(),
            "accuracy": ev.accuracy,
            "correct": ev.confusion.trace(),
        }),
        threads,
    )
}

fn cmd_infer(args: InferArgs, threads: Option<usize>) -> CliResult<()> {
    let net = MetaNetwork::load(&args.model)?;
    let split = load_split(&args.data.mnist_dir)?;
    let samples = pick_split(&split, args.split);
    let sample = samples.get(args.image_index).ok_or_else(|| {
        CliError::Usage(format!("image index {} out of range ({} images)", args.image_index, samples.len()))
    })?;
    let encode: EncodeMode = args.data.encode.into();
    let clf = NetworkClassifier::new(&net, encode)?;
    let p = evaluation::Classifier::probabilities(&clf, sample)?;
    let digit = crate::network::classify(&p);
    println!("predicted {digit} (label {})", sample.label);
    let probs: Vec<String> = p.iter().map(|v| format!("{v:.6}")).collect();
    println!("probabilities {}", probs.join(" "));
    if let Some(out) = &args.out {
        ensure_dir(out)?;
        write_manifest(
            out,
            "infer",
            json!({
                "model": args.model,
                "image_index": args.image_index,
                "predicted": digit,
                "label": sample.label,
                "probabilities": p,
            }),
            threads,
        )?;
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs, threads: Option<usize>) -> CliResult<()> {
    if args.min_layers == 0 || args.min_layers > args.max_layers {
        return Err(CliError::Usage("need 1 <= --min-layers <= --max-layers".into()));
    }
    let hp = hyperparams(&args.hyper)?;
    let template = build_network(&args.model, hp.seed)?;
    let split = load_split(&args.data.mnist_dir)?;
    let encode: EncodeMode = args.data.encode.into();
    let counts: Vec<usize> = (args.min_layers..=args.max_layers).collect();
    let report = evaluation::sweep_layers(
        &counts,
        &hp,
        &template,
        limited(&split.train, args.hyper.train_limit),
        &split.validation,
        limited(&split.test, args.eval_limit),
        encode,
    )?;
    ensure_dir(&args.out)?;
    write_text(&args.out.join("sweep.csv"), &report.to_csv())?;
    for r in &report.rows {
        println!("{} layer(s): accuracy {:.4}", r.layer_count, r.accuracy);
    }
    write_manifest(
        &args.out,
        "sweep-layers",
        json!({
            "seed": hp.seed,
            "hyperparams": hp,
            "propagation": template.propagation,
            "config": template.config,
            "encode": encode,
            "layer_counts": counts,
            "increments": report.increments(),
        }),
        threads,
    )
}

fn cmd_quantize(args: QuantizeArgs, threads: Option<usize>) -> CliResult<()> {
    let net = MetaNetwork::load(&args.model)?;
    let q = quantize_phases(&net, args.levels).map_err(|e| match e {
        Error::BadLevels(_) => CliError::Usage(e.to_string()),
        other => other.into(),
    })?;
    ensure_dir(&args.out)?;
    q.save(&args.out.join("model.json"))?;
    let mut body = json!({ "model": args.model, "levels": args.levels });
    if let Some(dir) = &args.mnist_dir {
        let split = load_split(dir)?;
        let encode: EncodeMode = args.encode.into();
        let before = evaluate(&NetworkClassifier::new(&net, encode)?, &split.test)?.accuracy;
        let after = evaluate(&NetworkClassifier::new(&q, encode)?, &split.test)?.accuracy;
        println!("test accuracy {before:.4} -> {after:.4} ({} levels)", args.levels);
        body["accuracy_before"] = json!(before);
        body["accuracy_after"] = json!(after);
        body["encode"] = json!(encode);
    }
    write_manifest(&args.out, "quantize", body, threads)
}

/// Synthetic linear table used when no calibration CSV is supplied. It is a
/// placeholder, not a measured unit-cell response.
pub fn default_table() -> CalibrationTable {
    CalibrationTable::synthetic_linear(0.05, 257).expect("synthetic table is valid")
}

fn cmd_export(args: ExportArgs, threads: Option<usize>) -> CliResult<()> {
    let mut net = MetaNetwork::load(&args.model)?;
    if let Some(levels) = args.levels {
        net = quantize_phases(&net, levels).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let table = match &args.table {
        Some(p) => CalibrationTable::from_csv(p)?,
        None => default_table(),
    };
    ensure_dir(&args.out)?;
    let manifest = export_manifest(&net, &table, &args.out.join("geometry.csv"))?;
    println!("wrote {} meta-neuron records", manifest.records.len());
    write_manifest(
        &args.out,
        "export-geometry",
        json!({
            "model": args.model,
            "table": args.table,
            "synthetic_table": args.table.is_none(),
            "levels": args.levels,
            "records": manifest.records.len(),
            "cell_width_m": table.cell_width,
            "cell_thickness_m": table.cell_thickness,
        }),
        threads,
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub method: Method,
    pub n: usize,
    pub pad_factor: usize,
    pub z_m: f64,
    pub wall_time_us_median: f64,
    pub rel_err_vs_direct: f64,
}

/// Median wall time of one propagation for each method and grid size, plus
/// the spectral result's relative L2 distance from the direct one.
pub fn bench(config: &PhysicsConfig, sizes: &[usize], pad: usize, reps: usize, seed: u64) -> crate::Result<Vec<BenchRow>> {
    let z = config.layer_gap;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for &n in sizes {
        let cfg = PhysicsConfig { grid_n: n, ..*config };
        let data = (0..n * n)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let u = ComplexField::from_vec(n, data)?;
        let mut reference = None;
        for method in [Method::Direct, Method::Spectral] {
            let settings = PropagationSettings {
                method,
                pad_factor: pad,
                evanescent: EvanescentPolicy::Zero,
            };
            let prop = Propagator::new(n, z, &cfg, settings)?;
            let mut times = Vec::with_capacity(reps.max(1));
            let mut out = None;
            for _ in 0..reps.max(1) {
                let t = Instant::now();
                let v = prop.forward(&u)?;
                times.push(t.elapsed().as_secs_f64() * 1e6);
                out = Some(v);
            }
            let out = out.expect("at least one repetition");
            let err = match &reference {
                None => {
                    reference = Some(out);
                    0.0
                }
                Some(r) => relative_l2(out.data(), r.data()),
            };
            rows.push(BenchRow {
                method,
                n,
                pad_factor: pad,
                z_m: z,
                wall_time_us_median: median(times),
                rel_err_vs_direct: err,
            });
        }
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("method,n,pad_factor,z_m,wall_time_us_median,rel_err_vs_direct\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{:.3},{:.6e}\n",
            r.method, r.n, r.pad_factor, r.z_m, r.wall_time_us_median, r.rel_err_vs_direct
        ));
    }
    s
}

fn cmd_bench(args: BenchArgs, threads: Option<usize>) -> CliResult<()> {
    let config = match &args.config {
        Some(p) => PhysicsConfig::load(p)?,
        None => PhysicsConfig::default(),
    };
    if args.pad == 0 || args.sizes.iter().any(|&n| n < 2) {
        return Err(CliError::Usage("--pad must be >= 1 and sizes >= 2".into()));
    }
    let rows = bench(&config, &args.sizes, args.pad, args.reps, args.seed)?;
    ensure_dir(&args.out)?;
    let csv = bench_csv(&rows);
    write_text(&args.out.join("bench.csv"), &csv)?;
    print!("{csv}");
    write_manifest(
        &args.out,
        "bench",
        json!({ "config": config, "sizes": args.sizes, "pad_factor": args.pad, "reps": args.reps, "seed": args.seed }),
        threads,
    )
}

fn cmd_dump(args: DumpArgs, threads: Option<usize>) -> CliResult<()> {
    let net = MetaNetwork::load(&args.model)?;
    let split = load_split(&args.data.mnist_dir)?;
    let samples = pick_split(&split, args.split);
    let sample = samples.get(args.image_index).ok_or_else(|| {
        CliError::Usage(format!("image index {} out of range ({} images)", args.image_index, samples.len()))
    })?;
    let encode: EncodeMode = args.data.encode.into();
    let u0 = dataset::object_field(&sample.mask, encode)?;
    let optics = Optics::for_network(&net)?;
    let trace = forward(&net, &optics, &u0)?;
    ensure_dir(&args.out)?;
    let mut planes = vec![&trace.input];
    for (a, b) in trace.pre_layer.iter().zip(&trace.post_layer) {
        planes.push(a);
        planes.push(b);
    }
    planes.push(&trace.output);
    let mut written = Vec::new();
    for field in planes {
        let tag = &field.plane_tag;
        evaluation::dump_field(field, &args.out.join(format!("{tag}.mnnf")))?;
        evaluation::render_heatmap(&evaluation::intensity_rows(field), 8, &args.out.join(format!("{tag}.png")))?;
        written.push(tag.clone());
    }
    let p = net.readout.probabilities(&trace.region_energies)?;
    println!("predicted {} (label {})", crate::network::classify(&p), sample.label);
    write_manifest(
        &args.out,
        "dump-field",
        json!({ "model": args.model, "image_index": args.image_index, "encode": encode, "planes": written }),
        threads,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_1() {
        assert_eq!(run(["metann"]), EXIT_USAGE);
        assert_eq!(run(["metann", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["metann", "train", "--lr", "abc"]), EXIT_USAGE);
        assert_eq!(run(["metann", "--help"]), EXIT_OK);
    }

    #[test]
    fn missing_model_exits_2() {
        let dir = tempfile::tempdir().unwrap();
        let model = dir.path().join("nope.json");
        let code = run([
            "metann".as_ref(),
            "quantize".as_ref(),
            "--model".as_ref(),
            model.as_os_str(),
            "--levels".as_ref(),
            "4".as_ref(),
            "--out".as_ref(),
            dir.path().as_os_str(),
        ]);
        assert_eq!(code, EXIT_DATA);
    }

    #[test]
    fn bench_rows_cover_both_methods() {
        let rows = bench(&PhysicsConfig::default(), &[8], 2, 1, 1).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].method, Method::Direct);
        assert_eq!(rows[0].rel_err_vs_direct, 0.0);
        assert!(rows[1].rel_err_vs_direct > 0.0);
        let csv = bench_csv(&rows);
        assert!(csv.starts_with("method,n,pad_factor,z_m,wall_time_us_median,rel_err_vs_direct\n"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
