use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mobnet::ingest::{write_records, InputFormat};
use mobnet::pipeline::{self, PipelineConfig};
use mobnet::synth::{generate, SynthConfig};
use mobnet::{Error, Result};

/// Urban regions from mobility networks of geo-located records.
#[derive(Parser)]
#[command(name = "mobnet", version = env!("CARGO_PKG_VERSION"))]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting; repeatable and applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Input record files (comma separated or repeated).
    #[arg(long, value_delimiter = ',')]
    input: Vec<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with ground truth.
    Synth {
        #[arg(long, value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Output directory for records and truth.json.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "csv")]
        format: String,
        /// Split records by user into this many files.
        #[arg(long, default_value_t = 1)]
        shards: usize,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Parse and clean records into trajectories.
    Filter(Common),
    /// Displacement, gyration and location-count fits.
    Stats(Common),
    /// Fishnet tessellation.
    Grid(Common),
    /// OD graphs, one per range filter.
    Graph(Common),
    /// Map-equation partition of each OD graph, or of a single edge list.
    Communities {
        #[command(flatten)]
        common: Common,
        /// Standalone edge list; requires --grid.
        #[arg(long, requires = "grid")]
        edges: Option<PathBuf>,
        /// Fishnet JSON matching --edges.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Gravity fit between delineated regions.
    Gravity(Common),
    /// Every stage in sequence, then the run report and manifest.
    Pipeline(Common),
    /// Render a run manifest, finalizing the run first if needed.
    Report(Common),
}

fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = pipeline::load_config(common.config.as_deref(), &common.set)?;
    if !common.input.is_empty() {
        cfg.inputs = common.input.clone();
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if common.threads.is_some() {
        cfg.threads = common.threads;
    }
    cfg.validate()?;
    init_threads(cfg.threads)?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    serde_json::to_writer_pretty(&mut lock, value).map_err(|e| Error::format("json", e.to_string()))?;
    writeln!(lock)?;
    Ok(())
}

fn write_synth(out: &Path, sets: &[String], format: &str, shards: usize) -> Result<()> {
    let mut cfg = SynthConfig::default();
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("override `{s}` is not key=value")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    let format: InputFormat = format.parse()?;
    if shards == 0 {
        return Err(Error::invalid("shards must be >= 1"));
    }
    let corpus = generate(&cfg)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let ext = match format {
        InputFormat::Csv => "csv",
        InputFormat::Jsonl => "jsonl",
    };
    // Records of one user always land in the same shard.
    let mut buckets = vec![Vec::new(); shards];
    for r in &corpus.records {
        let idx: usize = r.user_id.bytes().fold(0usize, |h, b| h.wrapping_mul(31).wrapping_add(b as usize)) % shards;
        buckets[idx].push(r.clone());
    }
    for (i, b) in buckets.iter().enumerate() {
        let name = if shards == 1 { format!("records.{ext}") } else { format!("records_{i}.{ext}") };
        let path = out.join(name);
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(f);
        write_records(&mut w, b, format)?;
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    let path = out.join("truth.json");
    let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
    serde_json::to_writer_pretty(&mut w, &corpus.truth).map_err(|e| Error::format("json", e.to_string()))?;
    writeln!(w)?;
    w.flush().map_err(|e| Error::io(&path, e))?;
    eprintln!("wrote {} records for {} agents to {}", corpus.records.len(), cfg.n_agents, out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            set,
            out,
            format,
            shards,
            threads,
        } => {
            init_threads(threads)?;
            write_synth(&out, &set, &format, shards).map_err(|e| e.in_stage("synth"))
        }
        Command::Filter(c) => print_json(&pipeline::run_filter(&config(&c)?)?),
        Command::Stats(c) => print_json(&pipeline::run_stats(&config(&c)?)?),
        Command::Grid(c) => {
            let grid = pipeline::run_grid(&config(&c)?)?;
            println!("{} x {} cells of {} m, {} active", grid.n_cols, grid.n_rows, grid.cell_size, grid.active_count());
            Ok(())
        }
        Command::Graph(c) => print_json(&pipeline::run_graph(&config(&c)?)?),
        Command::Communities { common, edges, grid } => {
            let cfg = config(&common)?;
            match (edges, grid) {
                (Some(e), Some(g)) => print_json(&pipeline::run_communities_on_edges(&cfg, &e, &g)?),
                _ => print_json(&pipeline::run_communities(&cfg)?),
            }
        }
        Command::Gravity(c) => print_json(&pipeline::run_gravity(&config(&c)?)?),
        Command::Pipeline(c) => {
            let cfg = config(&c)?;
            pipeline::run_pipeline(&cfg)?;
            print!("{}", pipeline::render_report(&cfg.out).map_err(|e| e.in_stage("report"))?);
            Ok(())
        }
        Command::Report(c) => {
            print!("{}", pipeline::run_report(&config(&c)?)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let e = match e {
                e @ Error::Stage { .. } => e,
                other => other.in_stage("config"),
            };
            eprintln!("mobnet: {e}");
            ExitCode::FAILURE
        }
    }
}
