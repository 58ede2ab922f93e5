use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use topicsteer::config::PipelineConfig;
use topicsteer::io::CorpusFormat;
use topicsteer::workspace::{self, Workspace};
use topicsteer::{StageError, StageResult};
use topicsteer_core::topic_model::Variant;

#[derive(Parser)]
#[command(name = "topicsteer", version, about = "Topic-labelled, discriminator-steered text generation over a workspace directory")]
struct Cli {
    /// TOML pipeline config (defaults apply when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Workspace directory; overrides `workspace` in the config.
    #[arg(long, short = 'w', global = true)]
    workspace: Option<PathBuf>,
    /// Base seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a planted-topic corpus to the workspace.
    Synth {
        #[arg(long)]
        topics: Option<usize>,
        #[arg(long)]
        docs: Option<usize>,
        #[arg(long)]
        block_size: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Load a corpus and write vocabulary, sequences and bags of words.
    Ingest {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        format: Option<CorpusFormat>,
    },
    /// Train the language model.
    LmTrain {
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train and score topic models over variants and topic counts; keep the best.
    TmSweep {
        /// Comma-separated topic counts.
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<Variant>>,
    },
    /// Train one topic model.
    TmTrain {
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Label documents with the topic model.
    Label {
        #[arg(long)]
        retain_top: Option<usize>,
    },
    /// Train the topic discriminator on labelled documents.
    DiscTrain {
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Generate the topic x prefix x sample grid.
    Generate {
        #[arg(long, default_value = "default")]
        tag: String,
        #[command(flatten)]
        steering: SteeringFlags,
        #[arg(long)]
        samples: Option<usize>,
        /// Repeatable; replaces the configured prefixes.
        #[arg(long = "prefix")]
        prefixes: Vec<String>,
    },
    /// Re-classify generations with the topic model.
    AutoEval {
        #[arg(long, default_value = "default")]
        tag: String,
        /// Compare two already evaluated tags: WEAK STRONG.
        #[arg(long, num_args = 2, value_names = ["WEAK", "STRONG"])]
        compare: Option<Vec<String>>,
    },
    /// Collate workspace CSVs into report/.
    Report,
    /// Run every stage, including the weak/strong comparison.
    Run,
}

#[derive(Args)]
struct SteeringFlags {
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long)]
    gm_scale: Option<f64>,
    #[arg(long)]
    kl_scale: Option<f64>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    repetition_penalty: Option<f64>,
    #[arg(long)]
    window_length: Option<usize>,
    #[arg(long)]
    horizon_length: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    length: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    /// Never sample EOS; every generation runs the full length.
    #[arg(long)]
    no_eos_stop: bool,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn execute(cli: Cli) -> StageResult<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    set(&mut cfg.seed, cli.seed);
    let root = cli.workspace.or_else(|| cfg.workspace.clone()).unwrap_or_else(|| PathBuf::from("workspace"));
    let ws = Workspace::new(root);
    match cli.command {
        Command::Synth { topics, docs, block_size, noise } => {
            set(&mut cfg.synth.topics, topics);
            set(&mut cfg.synth.docs, docs);
            set(&mut cfg.synth.block_size, block_size);
            set(&mut cfg.synth.noise, noise);
            cfg.validate()?;
            let n = workspace::synth(&cfg, &ws)?;
            println!("wrote {n} documents to {}", ws.path(workspace::CORPUS).display());
        }
        Command::Ingest { corpus, format } => {
            if corpus.is_some() {
                cfg.corpus.path = corpus;
            }
            set(&mut cfg.corpus.format, format);
            cfg.validate()?;
            let s = workspace::ingest(&cfg, &ws)?;
            println!(
                "{} documents ({} dropped), {} sequences, vocab {} / content {}",
                s.documents, s.dropped_empty, s.sequences, s.seq_vocab, s.content_vocab
            );
        }
        Command::LmTrain { epochs } => {
            set(&mut cfg.lm.epochs, epochs);
            cfg.validate()?;
            let curve = workspace::lm_train(&cfg, &ws)?;
            println!("final loss {:.4}", curve.last().copied().unwrap_or(f64::NAN));
        }
        Command::TmSweep { ks, variants } => {
            set(&mut cfg.topic_model.sweep_ks, ks);
            set(&mut cfg.topic_model.sweep_variants, variants);
            cfg.validate()?;
            for r in workspace::tm_sweep(&cfg, &ws)? {
                println!(
                    "{:<10} K={:<3} tau={:<8} alpha={:<8} rho={:<8}{}",
                    r.variant,
                    r.k,
                    fmt(r.tau),
                    fmt(r.alpha),
                    fmt(r.rho),
                    if r.selected { "  *" } else { "" }
                );
            }
        }
        Command::TmTrain { k, variant } => {
            set(&mut cfg.topic_model.k, k);
            set(&mut cfg.topic_model.variant, variant);
            cfg.validate()?;
            let r = workspace::tm_train(&cfg, &ws)?;
            println!("tau {:.4} alpha {:.4} rho {:.4}", r.tau.mean, r.alpha.scores.mean, r.rho.rho);
        }
        Command::Label { retain_top } => {
            set(&mut cfg.topic_model.retain_top, retain_top);
            cfg.validate()?;
            let l = workspace::label(&cfg, &ws)?;
            println!("retained topics {:?}, counts {:?}", l.retained_topics, l.label_counts);
        }
        Command::DiscTrain { epochs } => {
            set(&mut cfg.discriminator.epochs, epochs);
            cfg.validate()?;
            let r = workspace::disc_train(&cfg, &ws)?;
            println!("test accuracy {:.4} ({} classes)", r.accuracy, r.classes.len());
        }
        Command::Generate { tag, steering: f, samples, prefixes } => {
            set(&mut cfg.generation.samples, samples);
            if !prefixes.is_empty() {
                cfg.generation.prefixes = prefixes;
            }
            let s = &mut cfg.steering;
            set(&mut s.step_size, f.step_size);
            set(&mut s.gm_scale, f.gm_scale);
            set(&mut s.kl_scale, f.kl_scale);
            set(&mut s.top_k, f.top_k);
            set(&mut s.repetition_penalty, f.repetition_penalty);
            set(&mut s.window_length, f.window_length);
            set(&mut s.horizon_length, f.horizon_length);
            set(&mut s.grad_iterations, f.iterations);
            set(&mut s.length, f.length);
            set(&mut s.temperature, f.temperature);
            if f.no_eos_stop {
                s.stop_at_eos = false;
            }
            cfg.validate()?;
            let recs = workspace::generate(&cfg, &ws, &tag, &cfg.steering_config())?;
            println!("wrote {} records to {}", recs.len(), ws.path(&workspace::generations_name(&tag)).display());
        }
        Command::AutoEval { tag, compare } => match compare {
            Some(pair) => {
                let c = workspace::compare(&ws, &pair[0], &pair[1])?;
                println!("weak {:.4} strong {:.4} delta {:+.4}", c.weak_accuracy, c.strong_accuracy, c.delta);
            }
            None => {
                let cm = workspace::auto_eval(&cfg, &ws, &tag)?;
                print!("{}", workspace::render_confusion(&cm, &tag));
            }
        },
        Command::Report => {
            for f in workspace::report(&ws)? {
                println!("{}", ws.path(workspace::REPORT_DIR).join(f).display());
            }
        }
        Command::Run => {
            let s = workspace::run(&cfg, &ws)?;
            let c = &s.comparison;
            println!("weak {:.4} strong {:.4} delta {:+.4}", c.weak_accuracy, c.strong_accuracy, c.delta);
        }
    }
    Ok(())
}

fn fmt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(&e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn report_error(e: &StageError) {
    eprintln!("error: {e}");
}
