mod commands;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "juicer", version, about = "Learn a dialogue model from sparse and free-form human feedback")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

impl OnOff {
    pub fn on(self) -> bool {
        self == OnOff::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Valid,
    Test,
    TestUnseen,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world and feedback corpus.
    Generate {
        #[arg(long)]
        out: PathBuf,
        /// Where to write the world spec (default: world.json beside the corpus).
        #[arg(long)]
        world_out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = commands::DEFAULT_ENTITIES)]
        entities: usize,
        #[arg(long, default_value_t = commands::DEFAULT_ATTRIBUTES)]
        attributes: usize,
        /// JSON file of generator parameters; the flags below override it.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        conversations: Option<usize>,
        #[arg(long)]
        turns: Option<usize>,
        #[arg(long)]
        p_bad: Option<f64>,
        #[arg(long)]
        p_self_correct: Option<f64>,
    },
    /// Print label, error-mode and feedback counts of a corpus.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Train a satisfaction classifier on the human-labeled turns of a corpus.
    TrainClassifier {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "context_bot_human")]
        variant: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        world: Option<PathBuf>,
        /// Pipeline config supplying the model and training settings.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Fill in unlabeled bot turns with classifier predictions.
    Label {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        classifier: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Train the reply corrector on gold and self-correction pairs.
    TrainCorrector {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "on")]
        self_corrections: OnOff,
        #[arg(long, value_enum, default_value = "on")]
        feedback: OnOff,
        #[arg(long, default_value = "2:1:1")]
        mix: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        world: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a dialogue model with joint LM and token-classifier heads.
    TrainDirector {
        /// JSONL of positive pairs, as written by `run` under arms/<name>/positives.jsonl.
        #[arg(long)]
        pos: PathBuf,
        #[arg(long)]
        neg: PathBuf,
        #[arg(long, value_enum, default_value = "off")]
        overlap: OnOff,
        #[arg(long, default_value_t = 0.5)]
        gamma: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        blend_weight: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Generate replies. Each stdin line is one context: plain text or a JSON array of turns.
    Decode {
        #[arg(long)]
        model: PathBuf,
        /// Overrides the blend weight stored in the checkpoint.
        #[arg(long)]
        blend_weight: Option<f64>,
        /// Context turns, oldest first; reads stdin when absent.
        #[arg(long = "turn")]
        turns: Vec<String>,
        #[arg(long)]
        beam: Option<usize>,
    },
    /// Run the full pipeline.
    Run {
        /// JSON document with PipelineConfig fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Input corpus; a default synthetic corpus is generated when absent.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        world: Option<PathBuf>,
        #[arg(long, default_value = "juicer-run")]
        out: PathBuf,
    },
    /// Evaluate a dialogue model on one split of a corpus.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
        #[arg(long)]
        world: Option<PathBuf>,
        /// Pipeline config whose split settings select the conversations.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Baseline arm at several label sampling rates.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        world: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0.05,0.1,0.2,0.5,1.0")]
        rates: Vec<f64>,
        #[arg(long, default_value = "juicer-sweep")]
        out: PathBuf,
    },
    /// Serve the chat and feedback API.
    Serve {
        #[arg(long)]
        model: PathBuf,
        /// Conversation log; JUICER_LOG_DIR relocates it.
        #[arg(long, default_value = "live.jsonl")]
        log: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Base corpus that retraining starts from.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        world: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        runs_dir: Option<PathBuf>,
    },
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Generate {
            out,
            world_out,
            seed,
            entities,
            attributes,
            params,
            conversations,
            turns,
            p_bad,
            p_self_correct,
        } => commands::generate(commands::GenerateArgs {
            out,
            world_out,
            seed,
            entities,
            attributes,
            params,
            conversations,
            turns,
            p_bad,
            p_self_correct,
        }),
        Command::Stats { corpus } => commands::stats(&corpus),
        Command::TrainClassifier {
            corpus,
            variant,
            out,
            world,
            config,
        } => commands::train_classifier(&corpus, &variant, &out, world, config),
        Command::Label {
            corpus,
            classifier,
            out,
            threshold,
        } => commands::label(&corpus, &classifier, &out, threshold),
        Command::TrainCorrector {
            corpus,
            self_corrections,
            feedback,
            mix,
            out,
            world,
            config,
        } => commands::train_corrector(&corpus, self_corrections.on(), feedback.on(), &mix, &out, world, config),
        Command::TrainDirector {
            pos,
            neg,
            overlap,
            gamma,
            out,
            world,
            blend_weight,
            config,
        } => commands::train_director(&pos, &neg, overlap.on(), gamma, &out, &world, blend_weight, config),
        Command::Decode {
            model,
            blend_weight,
            turns,
            beam,
        } => commands::decode(&model, blend_weight, turns, beam),
        Command::Run {
            config,
            corpus,
            world,
            out,
        } => commands::run(config, corpus, world, &out),
        Command::Eval {
            model,
            corpus,
            split,
            world,
            config,
        } => commands::eval(&model, &corpus, split, world, config),
        Command::Sweep {
            config,
            corpus,
            world,
            rates,
            out,
        } => commands::sweep(config, &corpus, world, &rates, &out),
        Command::Serve {
            model,
            log,
            port,
            corpus,
            world,
            config,
            runs_dir,
        } => commands::serve(&model, log, port, corpus, world, config, runs_dir),
    }
}
