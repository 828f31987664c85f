//! Command-line front end: `ingest | expand | train | eval | bench | analyze`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use crate::config::EngineConfig;
use crate::error::{Error, Result};
use crate::eval::{random_baseline_recall, recall_at_k, sampled_forward};
use crate::graph::{degree_histogram, load_edge_list_compacted, split_train_test, BipartiteGraph, EdgeListFormat, Side};
use crate::kernels::counters;
use crate::kron::{expand_into, EdgeListSink, ExpandManifest, GraphSink, KronOptions, SeedBlock};
use crate::membench::{
    append_sweep_csv, sweep, sweep_csv_rows, AccessPattern, BenchSpec, MemOp, Placement, PlacementPolicy, SweepGrid,
};
use crate::models::{load_checkpoint, model_forward, save_checkpoint, ModelKind, ModelParams};
use crate::redundancy::{redundancy_csv, redundancy_report, Expansion};
use crate::synth::{power_law_communities, SynthConfig};
use crate::train::{CsvMetrics, Trainer};

#[derive(Debug, Parser)]
#[command(name = "gnnrec", version, about = "Full-graph GNN recommender engine")]
pub struct Cli {
    /// Engine config file (`section.key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for plot-ready CSVs.
    #[arg(long, value_name = "DIR")]
    pub emit_plot_data: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the binary graph cache from a text edge list.
    Ingest(IngestArgs),
    /// Kronecker-expand a graph.
    Expand(ExpandArgs),
    /// Train with BPR and write metrics and a checkpoint.
    Train(TrainArgs),
    /// Recall@k of a checkpoint.
    Eval(EvalArgs),
    /// Memory-bandwidth sweep.
    Bench(BenchArgs),
    /// Subgraph redundancy and memory-feasible batch report.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Comma-separated instead of whitespace-separated columns.
    #[arg(long)]
    pub csv: bool,
    /// Remap sparse ids to dense ranges; the map is written next to the cache.
    #[arg(long)]
    pub compact: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ExpandArgs {
    /// Input graph (edge list or cache).
    #[arg(long, required_unless_present = "plan")]
    pub input: Option<PathBuf>,
    /// All-ones `k x k` seed.
    #[arg(long, conflicts_with = "seed_mask")]
    pub factor: Option<usize>,
    /// Seed mask file: dense 0/1 grid.
    #[arg(long)]
    pub seed_mask: Option<PathBuf>,
    /// `.gcache` writes a binary cache, anything else a text edge list.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub edge_cap: Option<u64>,
    /// Relabel output vertices with a permutation drawn from `--seed`.
    #[arg(long)]
    pub permute: bool,
    /// Only compute the manifest for an input of `USERS,ITEMS,EDGES`.
    #[arg(long, value_name = "USERS,ITEMS,EDGES")]
    pub plan: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Interaction graph; defaults to `paths.graph`.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Use a generated power-law graph instead of a file.
    #[arg(long, conflicts_with = "graph")]
    pub synthetic: bool,
    #[arg(long)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub base_batch: Option<usize>,
    #[arg(long)]
    pub base_lr: Option<f64>,
    #[arg(long)]
    pub large_batch: Option<usize>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Output directory for caches, checkpoint and metrics.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    /// Aggregate over at most this many sampled neighbors per vertex.
    #[arg(long)]
    pub sampling_factor: Option<usize>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "sequential,random")]
    pub pattern: Vec<AccessPattern>,
    #[arg(long, value_delimiter = ',', default_value = "read,write,nt_write")]
    pub op: Vec<MemOp>,
    #[arg(long, value_delimiter = ',', default_value = "64,256,1024,4096")]
    pub access_size: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub threads: Vec<usize>,
    /// Placement policies, e.g. `interleaved` or `blocked:1:3`; `none` leaves
    /// placement to the OS.
    #[arg(long, value_delimiter = ',', default_value = "none")]
    pub placement: Vec<String>,
    /// Memory nodes for placed cells, e.g. `0,1`.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub nodes: Vec<u32>,
    #[arg(long, default_value_t = 1024)]
    pub region_mib: usize,
    #[arg(long, default_value_t = 5)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 0)]
    pub cooldown_ms: u64,
    /// Allow more threads than available CPUs.
    #[arg(long)]
    pub allow_oversubscribe: bool,
    /// CSV file rows are appended to.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long, conflicts_with = "graph")]
    pub synthetic: bool,
    /// Simulated worker counts.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    pub num_workers: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "64")]
    pub batch: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub layers: Vec<usize>,
    /// Neighbor caps, `none` for full neighborhoods.
    #[arg(long, value_delimiter = ',', default_value = "none")]
    pub sampling_factor: Vec<String>,
    #[arg(long, default_value_t = 1024)]
    pub budget_mib: u64,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

/// Parse arguments, run, and map the outcome to an exit code. Errors are
/// printed as one `error: kind=<kind> msg=<message>` line.
pub fn main_entry() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let text = e.to_string();
            let detail: Vec<&str> = text
                .lines()
                .map(str::trim)
                .take_while(|l| !l.starts_with("Usage:"))
                .filter(|l| !l.is_empty())
                .collect();
            eprintln!("error: kind=usage msg={}", detail.join(" ").trim_start_matches("error: "));
            return 2;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: kind={} msg={}", e.kind(), e.to_string().replace('\n', " "));
            1
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => EngineConfig::load(p)?,
        None => EngineConfig::default(),
    };
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Expand(a) => expand(a),
        Command::Train(a) => train(a, &mut cfg),
        Command::Eval(a) => eval(a, &mut cfg),
        Command::Bench(a) => bench(a),
        Command::Analyze(a) => analyze(a, &cfg),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn plot_file(common: &Common, name: &str, contents: &str) -> Result<()> {
    match &common.emit_plot_data {
        Some(dir) => write_file(&dir.join(name), contents),
        None => Ok(()),
    }
}

fn emit_histograms(common: &Common, g: &BipartiteGraph, prefix: &str) -> Result<()> {
    plot_file(common, &format!("{prefix}degree_users.csv"), &degree_histogram(g, Side::User).to_csv())?;
    plot_file(common, &format!("{prefix}degree_items.csv"), &degree_histogram(g, Side::Item).to_csv())
}

fn describe(g: &BipartiteGraph) -> String {
    format!(
        "users={} items={} edges={} density={:.6}",
        g.num_users(),
        g.num_items(),
        g.num_edges(),
        g.density()
    )
}

fn ingest(a: IngestArgs) -> Result<()> {
    let format = if a.csv { EdgeListFormat::Csv } else { EdgeListFormat::Whitespace };
    let g = if a.compact {
        let (g, map) = load_edge_list_compacted(&a.input, format)?;
        write_file(&a.output.with_extension("idmap"), &map.to_text())?;
        g
    } else {
        crate::graph::load_edge_list(&a.input, format)?
    };
    g.save_cache(&a.output)?;
    emit_histograms(&a.common, &g, "")?;
    println!("{}", describe(&g));
    Ok(())
}

fn parse_plan(s: &str) -> Result<(u64, u64, u64)> {
    let parts: Vec<u64> = s
        .split(',')
        .map(|p| p.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidArgument(format!("bad plan `{s}`, expected USERS,ITEMS,EDGES")))?;
    match parts[..] {
        [u, i, e] => Ok((u, i, e)),
        _ => Err(Error::InvalidArgument(format!("bad plan `{s}`, expected USERS,ITEMS,EDGES"))),
    }
}

fn expand(a: ExpandArgs) -> Result<()> {
    let seed = match (&a.seed_mask, a.factor) {
        (Some(p), _) => SeedBlock::load(p)?,
        (None, Some(k)) => SeedBlock::ones(k)?,
        (None, None) => return Err(Error::InvalidArgument("one of --factor or --seed-mask is required".into())),
    };
    let manifest = if let Some(plan) = &a.plan {
        let (u, i, e) = parse_plan(plan)?;
        ExpandManifest::plan(u, i, e, &seed)?
    } else {
        let input = a.input.as_ref().expect("clap requires --input without --plan");
        let g = BipartiteGraph::load_any(input)?;
        let mut opts = KronOptions::default();
        if let Some(cap) = a.edge_cap {
            opts.edge_cap = cap;
        }
        if a.permute {
            opts.permute_seed = Some(a.common.seed.unwrap_or(0));
        }
        emit_histograms(&a.common, &g, "input_")?;
        match &a.output {
            Some(p) if p.extension().is_some_and(|e| e == "gcache") => {
                let mut sink = GraphSink::default();
                let m = expand_into(&g, &seed, &opts, &mut sink)?;
                let out = sink.into_graph()?;
                out.save_cache(p)?;
                emit_histograms(&a.common, &out, "output_")?;
                m
            }
            Some(p) => {
                let f = fs::File::create(p).map_err(|e| Error::io(p, e))?;
                let mut sink = EdgeListSink::new(std::io::BufWriter::new(f));
                expand_into(&g, &seed, &opts, &mut sink)?
            }
            None => {
                let mut sink = crate::kron::CountingSink::default();
                expand_into(&g, &seed, &opts, &mut sink)?
            }
        }
    };
    let text = manifest.to_text();
    if let Some(p) = &a.manifest {
        write_file(p, &text)?;
    }
    print!("{text}");
    Ok(())
}

fn load_or_generate(graph: Option<&Path>, synthetic: bool, seed: u64) -> Result<BipartiteGraph> {
    match graph {
        Some(p) if !synthetic => BipartiteGraph::load_any(p),
        _ if synthetic => power_law_communities(&SynthConfig {
            seed,
            ..Default::default()
        }),
        _ => Err(Error::InvalidArgument("a --graph or --synthetic is required".into())),
    }
}

fn train(a: TrainArgs, cfg: &mut EngineConfig) -> Result<()> {
    let c = &mut a.common.clone();
    if let Some(s) = c.seed {
        cfg.train.seed = s;
    }
    if let Some(w) = c.workers {
        cfg.workers = w;
    }
    if let Some(v) = a.model {
        let prev = cfg.model.kind;
        cfg.model.kind = v;
        if prev != v {
            cfg.model.combine = crate::models::ModelConfig::new(v, 1, 1)?.combine;
        }
    }
    macro_rules! override_with {
        ($($flag:ident => $field:expr),* $(,)?) => {
            $(if let Some(v) = a.$flag { $field = v; })*
        };
    }
    override_with! {
        layers => cfg.model.num_layers,
        dim => cfg.model.embed_dim,
        epochs => cfg.train.epochs,
        base_batch => cfg.train.base_batch,
        base_lr => cfg.train.base_lr,
        large_batch => cfg.train.large_batch,
        warmup_epochs => cfg.train.warmup_epochs,
        l2 => cfg.train.l2_coeff,
        k => cfg.eval_k,
        eval_every => cfg.eval_every,
        out_dir => cfg.out_dir,
    }
    if let Some(g) = a.graph {
        cfg.graph = Some(g);
    }
    cfg.validate()?;

    let seed = cfg.train.seed;
    let g = load_or_generate(cfg.graph.as_deref(), a.synthetic, seed)?;
    let (train_g, test_g) = split_train_test(&g, cfg.train_fraction, seed)?;
    let out = cfg.out_dir.clone();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    train_g.save_cache(out.join("train.gcache"))?;
    test_g.save_cache(out.join("test.gcache"))?;
    write_file(&out.join("config.txt"), &cfg.to_string())?;

    let mut params = ModelParams::init(&cfg.model, g.num_users(), g.num_items(), seed)?;
    let metrics_path = out.join("metrics.csv");
    let f = fs::File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let evaluating = cfg.eval_every > 0 && test_g.num_edges() > 0;
    let mut sink = CsvMetrics::new(std::io::BufWriter::new(f), evaluating.then_some(cfg.eval_k));
    let ckpt = out.join("model.ckpt");
    let mut trainer = Trainer::new(&train_g, cfg.model.clone(), cfg.train.clone())
        .with_kernels(cfg.kernels())
        .checkpoint_to(&ckpt, cfg.train.epochs.max(1));
    if evaluating {
        trainer = trainer.eval_on(&test_g, cfg.eval_k, cfg.eval_every);
    }
    counters::reset();
    let log = trainer.fit(&mut params, &mut sink)?;
    let stats = counters::snapshot();
    sink.into_inner().flush().map_err(|e| Error::io(&metrics_path, e))?;
    if cfg.train.epochs == 0 {
        save_checkpoint(&ckpt, &cfg.model, &params)?;
    }

    let mut curve = String::from("epoch,batch,lr,loss,recall\n");
    for e in &log.epochs {
        let r = e.recall.map(|r| format!("{r:.6}")).unwrap_or_default();
        curve.push_str(&format!("{},{},{:e},{:.6},{}\n", e.epoch, e.batch, e.lr, e.loss, r));
    }
    plot_file(c, "training_curve.csv", &curve)?;
    plot_file(c, "kernel_time.csv", &stats.to_csv())?;
    for e in &log.epochs {
        let r = e.recall.map(|r| format!(" recall@{}={r:.4}", cfg.eval_k)).unwrap_or_default();
        println!("epoch={} batch={} lr={:e} loss={:.6}{r}", e.epoch, e.batch, e.lr, e.loss);
    }
    println!("{} checkpoint={}", describe(&g), ckpt.display());
    Ok(())
}

fn eval(a: EvalArgs, cfg: &mut EngineConfig) -> Result<()> {
    let k = a.k.unwrap_or(cfg.eval_k);
    if let Some(w) = a.common.workers {
        cfg.workers = w;
    }
    let (model, params) = load_checkpoint(&a.checkpoint)?;
    let train_g = BipartiteGraph::load_any(&a.train)?;
    let test_g = BipartiteGraph::load_any(&a.test)?;
    let kernels = cfg.kernels();
    counters::reset();
    let fin = match a.sampling_factor {
        Some(s) => sampled_forward(&train_g, &params, &model, s, a.common.seed.unwrap_or(0), &kernels)?,
        None => model_forward(&train_g, &params, &model, &kernels)?.0,
    };
    let stats = counters::snapshot();
    let result = recall_at_k(&fin.users, &fin.items, &train_g, &test_g, k)?;
    let baseline = random_baseline_recall(&train_g, &test_g, k)?;
    let csv = result.to_csv();
    match &a.output {
        Some(p) => write_file(p, &csv)?,
        None => print!("{csv}"),
    }
    eprintln!("random_baseline={baseline:.6}");
    plot_file(&a.common, "kernel_time.csv", &stats.to_csv())?;
    plot_file(&a.common, "eval.csv", &csv)
}

fn bench(a: BenchArgs) -> Result<()> {
    let mut base = BenchSpec {
        region_bytes: a.region_mib << 20,
        repetitions: a.repetitions,
        allow_oversubscribe: a.allow_oversubscribe,
        ..BenchSpec::default()
    };
    if let Some(s) = a.common.seed {
        base.seed = s;
    }
    let placements = a
        .placement
        .iter()
        .map(|p| match p.as_str() {
            "none" => Ok(None),
            other => Ok(Some(Placement::new(other.parse::<PlacementPolicy>()?, a.nodes.clone()))),
        })
        .collect::<Result<Vec<_>>>()?;
    let grid = SweepGrid {
        patterns: a.pattern,
        ops: a.op,
        access_sizes: a.access_size,
        threads: a.threads,
        placements,
        base,
        cooldown: Duration::from_millis(a.cooldown_ms),
    };
    let rows = sweep(&grid)?;
    let run_id = match &a.output {
        Some(p) => append_sweep_csv(p, &rows)?,
        None => 0,
    };
    let csv = format!("{}\n{}", crate::membench::SWEEP_CSV_HEADER, sweep_csv_rows(&rows, run_id));
    print!("{csv}");
    plot_file(&a.common, "bandwidth.csv", &csv)?;
    plot_file(&a.common, "host.txt", &crate::membench::HostInfo::detect().to_sidecar())
}

fn analyze(a: AnalyzeArgs, cfg: &EngineConfig) -> Result<()> {
    let seed = a.common.seed.unwrap_or(0);
    let g = load_or_generate(a.graph.as_deref().or(cfg.graph.as_deref()), a.synthetic, seed)?;
    let samplings = a
        .sampling_factor
        .iter()
        .map(|s| match s.as_str() {
            "none" => Ok(None),
            n => n
                .parse()
                .map(Some)
                .map_err(|_| Error::InvalidArgument(format!("bad sampling factor `{n}`"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let base = Expansion::new(0, None, seed).with_embed_dim(a.dim.unwrap_or(cfg.model.embed_dim));
    let rows = redundancy_report(&g, &a.num_workers, &a.batch, &a.layers, &samplings, a.budget_mib << 20, &base)?;
    let csv = redundancy_csv(&rows);
    match &a.output {
        Some(p) => write_file(p, &csv)?,
        None => print!("{csv}"),
    }
    plot_file(&a.common, "redundancy.csv", &csv)
}
