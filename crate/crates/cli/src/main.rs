//! `tadcmh` command-line front end.
//!
//! Exit codes: 0 on success, 1 on runtime or numerical failure, 2 on bad
//! usage.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context};
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use tadcmh::dataset::{self, SplitSpec, SynthParams};
use tadcmh::evalkit::{self, MapRow};
use tadcmh::gradcheck::{self, GradcheckConfig, GradientFns};
use tadcmh::hamming::{self, DatabaseCodes, RetrievalIndex};
use tadcmh::trainer::{self, TaskModel, TrainConfig, Variant};
use tadcmh::{CodeMatrix, HyperParams, MultiModalDataset, Preset, Task};

#[derive(Parser)]
#[command(name = "tadcmh", version, about = "Task-adaptive asymmetric deep cross-modal hashing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its split.
    Synth(SynthArgs),
    /// Train one or both retrieval directions.
    Train(TrainArgs),
    /// Hash the query or retrieval set with a trained model.
    Encode(EncodeArgs),
    /// Print the nearest database items for one query.
    Retrieve(RetrieveArgs),
    /// Score trained models: mAP and topK precision.
    Eval(EvalArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    c: usize,
    #[arg(long, default_value_t = 32)]
    dx: usize,
    #[arg(long, default_value_t = 64)]
    dy: usize,
    #[arg(long, default_value_t = 0.2)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Query set size; defaults to a fifth of `n`.
    #[arg(long)]
    n_query: Option<usize>,
    /// Training set size; defaults to the whole retrieval set.
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    I2t,
    T2i,
    Both,
}

impl TaskArg {
    fn tasks(self) -> Vec<Task> {
        match self {
            TaskArg::I2t => vec![Task::I2T],
            TaskArg::T2i => vec![Task::T2I],
            TaskArg::Both => vec![Task::I2T, Task::T2I],
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Full,
    V1,
    V2,
    V3,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Full => Variant::Full,
            VariantArg::V1 => Variant::V1SymmetricLabel,
            VariantArg::V2 => Variant::V2Unsupervised,
            VariantArg::V3 => Variant::V3Relaxed,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Mirflickr,
    Nuswide,
    Iaprtc12,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Mirflickr => Preset::MirFlickr,
            PresetArg::Nuswide => Preset::NusWide,
            PresetArg::Iaprtc12 => Preset::IaprTc12,
        }
    }
}

fn parse_quad(s: &str) -> Result<[f64; 4], String> {
    let vals: Vec<f64> = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}")))
        .collect::<Result<_, _>>()?;
    let quad: [f64; 4] = vals
        .try_into()
        .map_err(|_| "expected four comma-separated values lambda,beta,mu,nu".to_string())?;
    if quad.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err("hyperparameters must be finite and nonnegative".into());
    }
    Ok(quad)
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory (or its manifest) holding the split files.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    task: TaskArg,
    #[arg(long, value_enum, default_value = "full")]
    variant: VariantArg,
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u32).range(1..))]
    bits: u32,
    #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u32).range(1..))]
    epochs: u32,
    #[arg(long, default_value_t = 128, value_parser = clap::value_parser!(u32).range(1..))]
    batch_size: u32,
    #[arg(long, default_value_t = 1e-2)]
    lr_image: f64,
    #[arg(long, default_value_t = 1e-2)]
    lr_text: f64,
    #[arg(long, default_value_t = 512, value_parser = clap::value_parser!(u32).range(1..))]
    hidden: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "nuswide")]
    preset: PresetArg,
    /// I2T hyperparameters `lambda,beta,mu,nu`; overrides the preset.
    #[arg(long, value_parser = parse_quad)]
    hp_i2t: Option<[f64; 4]>,
    /// T2I hyperparameters `lambda,beta,mu,nu`; overrides the preset.
    #[arg(long, value_parser = parse_quad)]
    hp_t2i: Option<[f64; 4]>,
    /// One batch per sweep over the whole training set.
    #[arg(long)]
    full_batch: bool,
    #[arg(long)]
    early_stop: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SetArg {
    Query,
    Retrieval,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value = "query")]
    set: SetArg,
    /// Re-encode training items instead of using their learned codes.
    #[arg(long)]
    reencode: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Dataset id of the query; must belong to the query split.
    #[arg(long)]
    query: usize,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(1..))]
    k: u32,
    #[arg(long)]
    reencode: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Model files; repeat the flag for several.
    #[arg(long, required = true, num_args = 1..)]
    model: Vec<PathBuf>,
    /// topK cut points, comma separated. Defaults to 100..1000 step 100,
    /// restricted to the database size.
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    /// Truncate rankings for mAP at this depth.
    #[arg(long)]
    cutoff: Option<usize>,
    #[arg(long)]
    reencode: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 64)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn usage_error(msg: &str) -> ! {
    Cli::command().error(clap::error::ErrorKind::ValueValidation, msg).exit()
}

fn load_data(path: &Path) -> anyhow::Result<(MultiModalDataset, SplitSpec)> {
    let ds = dataset::load_dataset(path)?;
    let dir = if path.is_dir() {
        path
    } else {
        path.parent().unwrap_or(Path::new("."))
    };
    let split = dataset::load_split(dir, ds.len())?;
    Ok((ds, split))
}

/// Checks that `model` fits `ds` before any encoding.
fn check_compatible(model: &TaskModel, ds: &MultiModalDataset, split: &SplitSpec) -> anyhow::Result<()> {
    let dx = model.image_encoder.input_dim();
    let dy = model.text_encoder.input_dim();
    ensure!(
        dx == ds.image_dim(),
        "dimension mismatch: model expects image features of dimension {dx}, dataset has {}",
        ds.image_dim()
    );
    ensure!(
        dy == ds.text_dim(),
        "dimension mismatch: model expects text features of dimension {dy}, dataset has {}",
        ds.text_dim()
    );
    ensure!(
        model.proj.cols() == ds.num_classes(),
        "model was trained on {} classes, dataset has {}",
        model.proj.cols(),
        ds.num_classes()
    );
    ensure!(
        model.codes.len() == split.train.len(),
        "model holds {} learned codes, split trains on {}",
        model.codes.len(),
        split.train.len()
    );
    Ok(())
}

fn db_mode(reencode: bool) -> DatabaseCodes {
    if reencode {
        DatabaseCodes::Reencode
    } else {
        DatabaseCodes::Learned
    }
}

fn encode_query_set(model: &TaskModel, ds: &MultiModalDataset, ids: &[usize]) -> anyhow::Result<CodeMatrix> {
    let feats = hamming::query_features(model, ds).select_rows(ids);
    Ok(hamming::encode_queries(hamming::query_encoder(model), &feats)?)
}

fn cmd_synth(a: SynthArgs) -> anyhow::Result<()> {
    let ds = dataset::synth(SynthParams { n: a.n, d_x: a.dx, d_y: a.dy, c: a.c, noise: a.noise, seed: a.seed })?;
    let n_query = a.n_query.unwrap_or(a.n / 5);
    let n_train = a.n_train.unwrap_or(a.n.saturating_sub(n_query));
    let split = dataset::make_split(a.n, n_query, n_train, a.seed.wrapping_add(1))?;
    let manifest = dataset::save_dataset(&ds, &a.out)?;
    dataset::save_split(&split, &a.out)?;
    println!("{}", manifest.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    let (ds, split) = load_data(&a.data)?;
    let cfg = TrainConfig {
        bits: a.bits as usize,
        epochs: a.epochs as usize,
        batch_size: a.batch_size as usize,
        lr_image: a.lr_image,
        lr_text: a.lr_text,
        variant: a.variant.into(),
        seed: a.seed,
        full_batch: a.full_batch,
        early_stop: a.early_stop,
        hidden: a.hidden as usize,
    };
    if let Err(e) = cfg.validate() {
        usage_error(&e.to_string());
    }
    let preset: Preset = a.preset.into();
    let hp_for = |task: Task| -> anyhow::Result<HyperParams> {
        let quad = match task {
            Task::I2T => a.hp_i2t,
            Task::T2I => a.hp_t2i,
        };
        Ok(match quad {
            Some([l, b, m, n]) => HyperParams::new(l, b, m, n, task)?,
            None => HyperParams::preset(preset, task),
        })
    };
    let jobs: Vec<(Task, HyperParams)> = a
        .task
        .tasks()
        .into_iter()
        .map(|t| hp_for(t).map(|hp| (t, hp)))
        .collect::<anyhow::Result<_>>()?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    let results: Vec<anyhow::Result<TaskModel>> = std::thread::scope(|s| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(task, hp)| {
                let (ds, split, cfg) = (&ds, &split, &cfg);
                s.spawn(move || {
                    trainer::train_task(ds, split, cfg, hp).with_context(|| format!("training {task}"))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
    });

    for model in results {
        let model = model?;
        let task = model.task;
        let model_path = a.out.join(format!("model_{task}.tadc"));
        trainer::save_model(&model, &model_path)?;
        trainer::write_train_log(&model.train_log, &a.out.join(format!("train_{task}.csv")))?;
        trainer::write_timing_log(&model.train_log, &a.out.join(format!("timing_{task}.csv")))?;
        let last = model.train_log.last().map_or(f64::NAN, |e| e.objective);
        println!("{task}: {} epochs, objective {last:.6e}, model {}", model.train_log.len(), model_path.display());
    }
    Ok(())
}

fn cmd_encode(a: EncodeArgs) -> anyhow::Result<()> {
    let (ds, split) = load_data(&a.data)?;
    let model = trainer::load_model(&a.model)?;
    check_compatible(&model, &ds, &split)?;
    let codes = match a.set {
        SetArg::Query => encode_query_set(&model, &ds, &split.query)?,
        SetArg::Retrieval => hamming::encode_database(&model, &ds, &split, db_mode(a.reencode))?.codes,
    };
    hamming::write_codes(&codes, &a.out)?;
    println!("{} codes of {} bits -> {}", codes.len(), codes.bits(), a.out.display());
    Ok(())
}

fn cmd_retrieve(a: RetrieveArgs) -> anyhow::Result<()> {
    let (ds, split) = load_data(&a.data)?;
    let model = trainer::load_model(&a.model)?;
    check_compatible(&model, &ds, &split)?;
    if split.query.binary_search(&a.query).is_err() {
        bail!("id {} is not in the query split", a.query);
    }
    let index = hamming::encode_database(&model, &ds, &split, db_mode(a.reencode))?;
    let q = encode_query_set(&model, &ds, &[a.query])?;
    let k = (a.k as usize).min(index.len());
    let ranking = index.rank(q.code(0))?;
    println!("rank,id,distance,relevant");
    for (rank, &p) in ranking.iter().take(k).enumerate() {
        let dist = hamming::hamming_distance(q.code(0), index.codes.code(p), model.r)?;
        let rel = ds.labels.shares_label_with(a.query, &ds.labels, index.ids[p]);
        println!("{},{},{dist},{}", rank + 1, index.ids[p], u8::from(rel));
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> anyhow::Result<()> {
    let (ds, split) = load_data(&a.data)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let query_labels = ds.labels.select(&split.query);
    let mut rows = Vec::with_capacity(a.model.len());
    for path in &a.model {
        let model = trainer::load_model(path)?;
        check_compatible(&model, &ds, &split).with_context(|| format!("model {}", path.display()))?;
        let index: RetrievalIndex = hamming::encode_database(&model, &ds, &split, db_mode(a.reencode))?;
        let ks = match &a.ks {
            Some(ks) => ks.clone(),
            None => evalkit::default_ks().into_iter().filter(|&k| k <= index.len()).collect(),
        };
        let queries = encode_query_set(&model, &ds, &split.query)?;
        let report = evalkit::evaluate(model.task, &index, &queries, &query_labels, &ks, a.cutoff)?;
        let name = format!("curve_{}_{}_r{}.csv", model.task, model.variant, model.r);
        evalkit::emit_csv(&report, &a.out.join(name))?;
        println!("{} {} r={} mAP={:.4}", model.task, model.variant, model.r, report.map);
        rows.push(MapRow { method: model.variant.to_string(), task: model.task, r: model.r, map: report.map });
    }
    evalkit::emit_map_grid(&rows, &a.out.join("map_grid.csv"))?;
    Ok(())
}

/// Returns whether every check passed.
fn cmd_gradcheck(a: GradcheckArgs) -> anyhow::Result<bool> {
    let cfg = GradcheckConfig { trials: a.trials, seed: a.seed, ..Default::default() };
    let report = gradcheck::run_gradcheck(&cfg, &GradientFns::default())?;
    for c in &report.checks {
        let worst = c.worst.as_ref().map_or(0.0, |w| w.rel_error);
        println!("{:<20} instances={:<5} entries={:<7} max_rel_error={worst:.3e}", c.name, c.instances, c.entries);
    }
    if report.passed() {
        println!("PASS (tolerance {:e})", report.tolerance);
        Ok(true)
    } else {
        if let Some(w) = report.worst() {
            println!("FAIL {w}");
        }
        Ok(false)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Synth(a) => cmd_synth(a).map(|_| true),
        Command::Train(a) => cmd_train(a).map(|_| true),
        Command::Encode(a) => cmd_encode(a).map(|_| true),
        Command::Retrieve(a) => cmd_retrieve(a).map(|_| true),
        Command::Eval(a) => cmd_eval(a).map(|_| true),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
