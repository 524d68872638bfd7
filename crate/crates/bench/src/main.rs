use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use adaptivepq::classify::{self, Features, Mode, TrainConfig};
use adaptivepq::delegate::LineSize;
use adaptivepq_bench::grid::GridSpec;
use adaptivepq_bench::phases::{self, WorkloadPhase};
use adaptivepq_bench::plot;
use adaptivepq_bench::run::{run, DeleteChoice, Impl, RunConfig};
use adaptivepq_bench::training::{self, GenConfig};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bench", version, about = "Concurrent priority queue benchmarks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a multi-phase workload and emit throughput samples.
    Run(RunArgs),
    /// Measure both modes over a feature grid and append labeled samples.
    GenTraining(GenArgs),
    /// Train a decision tree from a sample CSV.
    Train(TrainArgs),
    /// Classify one feature vector.
    Predict(PredictArgs),
    /// Turn run CSVs into a gnuplot data file.
    Plot(PlotArgs),
}

#[derive(Args, Clone)]
struct QueueArgs {
    /// Server threads (ffwd always uses one).
    #[arg(long)]
    servers: Option<usize>,
    /// Cache-line size of the request and response lines, 64 or 128.
    #[arg(long, default_value_t = 64, value_parser = parse_line_size)]
    line_size: usize,
    /// deleteMin variant: exact or spray.
    #[arg(long, default_value = "spray")]
    delete: DeleteChoice,
    /// Spin-loop hints between two operations.
    #[arg(long, default_value_t = 25)]
    pause_iters: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct RunArgs {
    /// oblivious, nuddle, smartpq or ffwd.
    #[arg(long = "impl")]
    imp: Impl,
    /// Phase file, or a preset: dynamic_range, dynamic_threads,
    /// dynamic_operation, dynamic_total.
    #[arg(long)]
    phases: String,
    #[command(flatten)]
    queue: QueueArgs,
    /// Write the samples here instead of stdout.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Run presets with their original thread counts and 25 s phases.
    #[arg(long)]
    full_scale: bool,
    /// Thread count that presets are scaled to (default: hardware parallelism).
    #[arg(long)]
    max_threads: Option<usize>,
    /// Preset phase length at desk scale, in seconds.
    #[arg(long, default_value_t = 1.0)]
    phase_seconds: f64,
    /// Decision tree for smartpq.
    #[arg(long)]
    tree: Option<PathBuf>,
    /// Decision interval of smartpq, in milliseconds.
    #[arg(long, default_value_t = 1000)]
    decision_ms: u64,
    /// Starting mode of smartpq: oblivious or aware.
    #[arg(long, default_value = "oblivious", value_parser = parse_mode)]
    initial_mode: Mode,
    /// Throughput sample window, in milliseconds.
    #[arg(long, default_value_t = 1000)]
    sample_ms: u64,
}

#[derive(Args)]
struct GenArgs {
    /// `desk`, `full`, or a grid file.
    #[arg(long, default_value = "desk")]
    grid: String,
    #[arg(long)]
    out: PathBuf,
    /// Seconds per mode and grid point (default: the grid's duration_s).
    #[arg(long)]
    duration: Option<f64>,
    /// Tie threshold in ops/s.
    #[arg(long, default_value_t = classify::DEFAULT_TIE_THRESHOLD)]
    threshold: f64,
    #[command(flatten)]
    queue: QueueArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    max_depth: usize,
    #[arg(long, default_value_t = 5)]
    min_leaf: usize,
    /// Fraction held out for evaluation; 0 trains on everything.
    #[arg(long, default_value_t = 0.25)]
    holdout: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    tree: PathBuf,
    /// n_threads,size,key_range,insert_pct
    #[arg(long, allow_hyphen_values = true)]
    features: String,
}

#[derive(Args)]
struct PlotArgs {
    /// Run CSV files (time_s,thr_ops,mode).
    #[arg(long = "in", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_line_size(s: &str) -> Result<usize, String> {
    let n: usize = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    LineSize::from_bytes(n)
        .map(LineSize::bytes)
        .ok_or_else(|| "line size must be 64 or 128".to_string())
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    match s {
        "oblivious" | "numa-oblivious" => Ok(Mode::Oblivious),
        "aware" | "numa-aware" => Ok(Mode::Aware),
        _ => Err(format!("unknown mode `{s}` (oblivious, aware)")),
    }
}

fn hardware_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn read_tree(path: &Path) -> Result<classify::Tree<f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    classify::deserialize(&text).with_context(|| format!("in {}", path.display()))
}

impl QueueArgs {
    fn run_config(&self, imp: Impl, default_servers: usize) -> RunConfig {
        RunConfig {
            imp,
            servers: self.servers,
            default_servers,
            line_size: LineSize::from_bytes(self.line_size).expect("validated by clap"),
            delete: self.delete,
            pause_iters: self.pause_iters,
            seed: self.seed,
            ..RunConfig::default()
        }
    }
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let is_file = Path::new(&a.phases).exists();
    let mut list: Vec<WorkloadPhase> = phases::load_phases(&a.phases)?;
    if !is_file && !a.full_scale {
        let n = a.max_threads.unwrap_or_else(hardware_threads).max(1);
        list = phases::desk_scale(&list, n, a.phase_seconds);
    }
    if a.sample_ms == 0 || a.decision_ms == 0 {
        bail!("--sample-ms and --decision-ms must be > 0");
    }
    let mut cfg = a.queue.run_config(a.imp, if a.full_scale { 8 } else { 1 });
    cfg.sample_interval = Duration::from_millis(a.sample_ms);
    cfg.decision_interval = Some(Duration::from_millis(a.decision_ms));
    cfg.initial_mode = a.initial_mode;
    cfg.tree = a.tree.as_deref().map(read_tree).transpose()?;

    let result = run(&list, &cfg)?;
    plot::write_run_csv(output(a.csv.as_deref())?, &result)?;

    let mut err = io::stderr().lock();
    for p in &result.phases {
        writeln!(
            err,
            "phase {} start={:.2}s threads={} servers={} clients={} ops={} mean={:.0} ops/s",
            p.phase + 1,
            p.start_s,
            p.threads,
            p.servers,
            p.clients,
            p.ops,
            p.ops_per_sec
        )?;
    }
    for t in &result.transitions {
        writeln!(err, "transition at={:.3}s {} -> {}", t.at.as_secs_f64(), t.from, t.to)?;
    }
    writeln!(
        err,
        "audit ok: inserted={} deleted={} final_size={}",
        result.audit.inserted, result.audit.deleted, result.final_size
    )?;
    Ok(())
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let grid = GridSpec::load(&a.grid)?;
    let cfg = GenConfig {
        duration_s: a.duration,
        threshold: a.threshold,
        run: a.queue.run_config(Impl::Nuddle, 1),
    };
    let n = training::gen_training(&grid, &a.out, &cfg, |i, total, s| {
        log::info!(
            "{i}/{total} {:?} obl={:.0} aware={:.0} -> {}",
            s.features.to_array(),
            s.thr_oblivious,
            s.thr_aware,
            s.label
        );
    })?;
    println!("wrote {n} samples to {}", a.out.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let samples = training::read_samples(&a.input)?;
    if samples.is_empty() {
        bail!("{} has no samples", a.input.display());
    }
    let cfg = TrainConfig {
        max_depth: a.max_depth,
        min_leaf: a.min_leaf,
        ..TrainConfig::default()
    };
    let (train_set, test_set) = if a.holdout > 0.0 {
        training::holdout_split(&samples, a.holdout, a.seed)
    } else {
        (samples.clone(), Vec::new())
    };
    let tree = classify::train(&train_set, &cfg)?;
    std::fs::write(&a.out, classify::serialize(&tree)).with_context(|| format!("writing {}", a.out.display()))?;
    println!(
        "nodes={} depth={} leaves={}",
        tree.len(),
        tree.depth(),
        tree.leaf_count()
    );
    print!(
        "train_samples={} train_accuracy={:.4}",
        train_set.len(),
        training::accuracy(&tree, &train_set)
    );
    if test_set.is_empty() {
        println!();
    } else {
        println!(
            " holdout_samples={} holdout_accuracy={:.4} majority_baseline={:.4}",
            test_set.len(),
            training::accuracy(&tree, &test_set),
            training::majority_baseline(&train_set, &test_set)
        );
    }
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let tree = read_tree(&a.tree)?;
    let values: Vec<f64> = a
        .features
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .with_context(|| format!("bad feature value `{v}`"))
        })
        .collect::<Result<_>>()?;
    let arr: [f64; 4] = values
        .try_into()
        .map_err(|v: Vec<f64>| anyhow::anyhow!("expected 4 features, got {}", v.len()))?;
    let f = Features::from_array(arr)?;
    let m = tree.predict(&f);
    println!("class={} {}", m.code(), m.name());
    Ok(())
}

fn cmd_plot(a: PlotArgs) -> Result<()> {
    let mut runs = Vec::with_capacity(a.inputs.len());
    for p in &a.inputs {
        let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
        let rows = plot::read_run_csv(f).with_context(|| format!("in {}", p.display()))?;
        runs.push((p.display().to_string(), rows));
    }
    let mut out = output(a.out.as_deref())?;
    plot::write_gnuplot(&mut out, &runs)?;
    out.flush()?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().cmd {
        Cmd::Run(a) => cmd_run(a),
        Cmd::GenTraining(a) => cmd_gen(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Predict(a) => cmd_predict(a),
        Cmd::Plot(a) => cmd_plot(a),
    }
}
