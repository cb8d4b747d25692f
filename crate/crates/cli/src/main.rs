use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use card_core::chunking::{chunk_stream, inventory, ChunkingConfig};
use card_core::corpus::{self, MutationPattern, MutationSpec};
use card_core::delta::{apply_patch_bytes, delta_encode};
use card_core::features::superfeature::NTransformConfig;
use card_core::pipeline::{self, Detector, Embedding, RunConfig, SweepAxis, VersionData};
use card_core::report::{self, DedupReport, ReportFormat};
use card_core::rng::derive_seed;
use card_core::CardError;
use clap::{Args, Parser, Subcommand};
use log::info;

#[derive(Parser, Debug)]
#[command(name = "card", version, about = "Context-aware resemblance detection and delta deduplication")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build, inspect and mutate corpora.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Print the chunk inventory of files.
    Chunk {
        #[arg(long, default_value_t = 16384)]
        avg_size: usize,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Train the context model on one corpus version.
    Train(TrainArgs),
    /// Deduplicate versions in order and report the result.
    Dedupe(DedupeArgs),
    /// Time a sweep over chunk size or dimension.
    Bench(BenchArgs),
    /// Render saved reports.
    Report {
        #[arg(long, default_value = "table")]
        format: ReportFormat,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Encode or apply a single patch.
    #[command(subcommand)]
    Delta(DeltaCommand),
}

#[derive(Subcommand, Debug)]
enum CorpusCommand {
    /// Write a manifest of every file under a directory.
    Ingest {
        dir: PathBuf,
        #[arg(long, default_value = "base")]
        tag: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mutate one file.
    Mutate {
        input: PathBuf,
        #[arg(long, default_value = "random_edit")]
        pattern: MutationPattern,
        #[arg(long, default_value_t = 0.01)]
        fraction: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Derive mutated versions of a base corpus.
    Versions {
        base: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        count: usize,
        #[arg(long, default_value = "random_edit")]
        pattern: MutationPattern,
        #[arg(long, default_value_t = 0.01)]
        fraction: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write a synthetic random base corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        files: usize,
        #[arg(long, default_value_t = 1 << 20)]
        file_size: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// Feature and hidden dimension.
    #[arg(long, default_value_t = 50)]
    dim: usize,
    #[arg(long, default_value_t = 2)]
    context_k: usize,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    learning_rate: f64,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 16384)]
    avg_size: usize,
    /// Sequential execution; timings are reported as zero.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    out: PathBuf,
    corpus: PathBuf,
}

#[derive(Args, Debug)]
struct DedupeArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value = "card")]
    detector: Detector,
    #[arg(long, default_value_t = card_core::index::DEFAULT_SIMILARITY_THRESHOLD)]
    threshold: f64,
    /// Index the hidden-layer image instead of the inverse map.
    #[arg(long)]
    hidden_embedding: bool,
    #[arg(long)]
    no_verify: bool,
    /// Write the chunk store here.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Use a pre-trained model instead of training on the first version.
    #[arg(long)]
    model_path: Option<PathBuf>,
    /// Save the model trained during the run.
    #[arg(long)]
    save_model: Option<PathBuf>,
    /// Save the report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value = "table")]
    format: ReportFormat,
    #[arg(required = true)]
    versions: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value = "card")]
    detector: Detector,
    #[arg(long, default_value_t = card_core::index::DEFAULT_SIMILARITY_THRESHOLD)]
    threshold: f64,
    #[arg(long)]
    sweep: SweepAxis,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value = "table")]
    format: ReportFormat,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(required = true)]
    versions: Vec<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum DeltaCommand {
    Encode {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    Decode {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        patch: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// `CARD_SEED`, when set, replaces every default seed.
fn env_seed() -> Result<Option<u64>> {
    match std::env::var("CARD_SEED") {
        Ok(s) => Ok(Some(s.trim().parse().with_context(|| format!("CARD_SEED={s:?} is not a u64"))?)),
        Err(_) => Ok(None),
    }
}

fn seed_or(explicit: Option<u64>, salt: u64, default: u64) -> Result<u64> {
    Ok(match (explicit, env_seed()?) {
        (Some(s), _) => s,
        (None, Some(s)) => derive_seed(s, salt),
        (None, None) => default,
    })
}

fn run_config(m: &ModelArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::default().with_dimension(m.dim);
    cfg.chunking = ChunkingConfig::with_avg(m.avg_size);
    cfg.model.context_k = m.context_k;
    cfg.model.epochs = m.epochs;
    cfg.model.learning_rate = m.learning_rate;
    cfg.model.batch_size = m.batch_size;
    cfg.deterministic = m.deterministic;
    if let Some(s) = env_seed()? {
        cfg.chunking.gear_seed = derive_seed(s, 1);
        cfg.features.hash_family_seed = derive_seed(s, 2);
        cfg.model.rng_seed = derive_seed(s, 3);
        cfg.finesse.digest_seed = derive_seed(s, 4);
        let nt = cfg.ntransform;
        cfg.ntransform = NTransformConfig::seeded(nt.transforms.len(), nt.window, nt.group_count, derive_seed(s, 5));
    }
    if let Some(s) = m.seed {
        cfg.model.rng_seed = s;
    }
    Ok(cfg)
}

fn load_version(dir: &Path) -> Result<VersionData> {
    let tag = dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
    let c = corpus::ingest(dir, &tag)?;
    Ok(VersionData::load(&c)?)
}

fn load_versions(dirs: &[PathBuf]) -> Result<Vec<VersionData>> {
    dirs.iter().map(|d| load_version(d)).collect()
}

fn emit(reports: &[DedupReport], format: ReportFormat, save: Option<&Path>) -> Result<()> {
    print!("{}", report::render(reports, format)?);
    if let Some(p) = save {
        fs::write(p, report::render(reports, ReportFormat::Json)?).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn read_reports(path: &Path) -> Result<Vec<DedupReport>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let parsed = if text.trim_start().starts_with('[') {
        report::parse_json(&text)
    } else {
        report::parse_csv(&text)
    };
    parsed.with_context(|| format!("parsing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Corpus(cmd) => corpus_cmd(cmd)?,
        Command::Chunk { avg_size, files } => {
            let cfg = ChunkingConfig {
                gear_seed: seed_or(None, 1, card_core::chunking::DEFAULT_GEAR_SEED)?,
                ..ChunkingConfig::with_avg(avg_size)
            };
            for f in files {
                let data = fs::read(&f).with_context(|| format!("reading {}", f.display()))?;
                let chunks = chunk_stream(&data.into(), &cfg)?;
                println!("# {} ({} chunks)", f.display(), chunks.len());
                print!("{}", inventory(&chunks));
            }
        }
        Command::Train(a) => {
            let cfg = run_config(&a.model)?;
            let version = load_version(&a.corpus)?;
            let out = pipeline::run_train(&cfg, &version, &a.out)?;
            let summary = serde_json::json!({
                "samples_version": version.tag,
                "initial_loss": out.initial_loss,
                "final_loss": out.final_loss,
                "epoch_losses": out.epoch_losses,
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Dedupe(a) => {
            let mut cfg = run_config(&a.model)?;
            cfg.detector = a.detector;
            cfg.threshold = a.threshold;
            cfg.verify = !a.no_verify;
            cfg.output_dir = a.output_dir;
            cfg.model_path = a.model_path;
            if a.hidden_embedding {
                cfg.embedding = Embedding::Hidden;
            }
            let versions = load_versions(&a.versions)?;
            let out = pipeline::run_dedupe(&cfg, &versions)?;
            if let (Some(p), Some(t)) = (&a.save_model, &out.training) {
                t.model.save(p)?;
            } else if a.save_model.is_some() {
                bail!("--save-model needs the card detector without --model-path");
            }
            info!("{} of {} chunks delta-encoded", out.report.similar_count, out.report.chunk_count);
            emit(&[out.report], a.format, a.report.as_deref())?;
        }
        Command::Bench(a) => {
            let mut cfg = run_config(&a.model)?;
            cfg.detector = a.detector;
            cfg.threshold = a.threshold;
            cfg.verify = false;
            let versions = load_versions(&a.versions)?;
            let reports = pipeline::sweep(&cfg, a.sweep, &a.values, &versions, a.repeats)?;
            emit(&reports, a.format, a.report.as_deref())?;
        }
        Command::Report { format, inputs } => {
            let mut all = Vec::new();
            for p in &inputs {
                all.extend(read_reports(p)?);
            }
            print!("{}", report::render(&all, format)?);
        }
        Command::Delta(DeltaCommand::Encode { base, target, out }) => {
            let b = fs::read(&base).with_context(|| format!("reading {}", base.display()))?;
            let t = fs::read(&target).with_context(|| format!("reading {}", target.display()))?;
            let p = delta_encode(&t, &b);
            fs::write(&out, p.to_bytes()).with_context(|| format!("writing {}", out.display()))?;
            println!("{} -> {} bytes", t.len(), p.encoded_size());
        }
        Command::Delta(DeltaCommand::Decode { base, patch, out }) => {
            let b = fs::read(&base).with_context(|| format!("reading {}", base.display()))?;
            let p = fs::read(&patch).with_context(|| format!("reading {}", patch.display()))?;
            let t = apply_patch_bytes(&p, &b)?;
            fs::write(&out, &t).with_context(|| format!("writing {}", out.display()))?;
        }
    }
    Ok(())
}

fn corpus_cmd(cmd: CorpusCommand) -> Result<()> {
    match cmd {
        CorpusCommand::Ingest { dir, tag, out } => {
            let json = corpus::ingest(&dir, &tag)?.manifest.to_json()?;
            match out {
                Some(p) => fs::write(&p, json).with_context(|| format!("writing {}", p.display()))?,
                None => println!("{json}"),
            }
        }
        CorpusCommand::Mutate { input, pattern, fraction, seed, out } => {
            let data = fs::read(&input).with_context(|| format!("reading {}", input.display()))?;
            let spec = MutationSpec::new(pattern, fraction, seed_or(seed, 6, 0)?);
            fs::write(&out, corpus::mutate(&data, &spec)?).with_context(|| format!("writing {}", out.display()))?;
        }
        CorpusCommand::Versions { base, out, count, pattern, fraction, seed } => {
            let tag = base.file_name().map_or("base".into(), |n| n.to_string_lossy().into_owned());
            let base = corpus::ingest(&base, &tag)?;
            let seed = seed_or(seed, 7, 1)?;
            let specs: Vec<MutationSpec> = (0..count as u64)
                .map(|i| MutationSpec::new(pattern, fraction, seed.wrapping_add(i)))
                .collect();
            for c in corpus::generate_versions(&base, &specs, &out)? {
                println!("{}", c.root.display());
            }
        }
        CorpusCommand::Synth { out, files, file_size, seed } => {
            let c = corpus::synthesize(&out, files, file_size, seed_or(seed, 8, 0)?, "base")?;
            println!("{} files, {} bytes", c.manifest.entries.len(), c.manifest.total_bytes);
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<CardError>()) {
        Some(e) if e.is_corruption() => 2,
        Some(e) if e.is_training_failure() => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
