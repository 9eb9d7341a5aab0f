use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use juicer_core::corpus::{
    corpus_stats, generate_corpus, generate_world, load_corpus, save_corpus, split_corpus, Conversation, CorpusParams,
    CorpusSplits, ErrorMode, Label, Oracle, SplitConfig, Turn, WorldSpec,
};
use juicer_core::corrector::{
    build_aux_tasks, build_gold_pairs, build_self_pairs, corrector_f1, train_corrector as fit_corrector, CorrectorConfig,
    MultitaskMix,
};
use juicer_core::dialogue::{DialogueModel, Responder};
use juicer_core::eval::eval_arm;
use juicer_core::pipeline::{
    run_juicer, sampling_rate_sweep, train_final, AugmentedDataset, AugmentedPair, FinalObjective, FinalTraining,
    PipelineConfig, RunInputs, RunStatus,
};
use juicer_core::satisfaction::{
    build_classifier_set, evaluate_classifier, label_missing, train_satisfaction, ClassifierVariant,
    SatisfactionClassifier,
};
use juicer_core::text::build_vocab;
use juicer_nn::generate::Strategy;
use juicer_service::{AppState, ServiceConfig};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::SplitName;

pub const DEFAULT_ENTITIES: usize = 80;
pub const DEFAULT_ATTRIBUTES: usize = 6;

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn load_config(path: Option<PathBuf>) -> Result<PipelineConfig> {
    let cfg: PipelineConfig = match path {
        Some(p) => {
            let text = fs::read_to_string(&p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
        }
        None => PipelineConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn sidecar_world(corpus: &Path) -> PathBuf {
    corpus.with_file_name("world.json")
}

fn load_world(explicit: Option<PathBuf>, corpus: Option<&Path>) -> Result<WorldSpec> {
    let path = match (explicit, corpus) {
        (Some(p), _) => p,
        (None, Some(c)) => sidecar_world(c),
        (None, None) => bail!("no world spec given; pass --world"),
    };
    let text = fs::read_to_string(&path).with_context(|| format!("reading world spec {}", path.display()))?;
    let world: WorldSpec = serde_json::from_str(&text).with_context(|| format!("parsing world spec {}", path.display()))?;
    world.validate()?;
    Ok(world)
}

fn read_corpus(path: &Path) -> Result<Vec<Conversation>> {
    load_corpus(path).with_context(|| format!("loading corpus {}", path.display()))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}: line {}", path.display(), i + 1))?);
    }
    Ok(out)
}

fn splits_for(cfg: &PipelineConfig, corpus: &[Conversation]) -> CorpusSplits {
    split_corpus(
        corpus,
        &SplitConfig {
            seed: cfg.seeds.split,
            ..cfg.split.clone()
        },
    )
}

pub struct GenerateArgs {
    pub out: PathBuf,
    pub world_out: Option<PathBuf>,
    pub seed: u64,
    pub entities: usize,
    pub attributes: usize,
    pub params: Option<PathBuf>,
    pub conversations: Option<usize>,
    pub turns: Option<usize>,
    pub p_bad: Option<f64>,
    pub p_self_correct: Option<f64>,
}

pub fn generate(a: GenerateArgs) -> Result<()> {
    let mut params: CorpusParams = match &a.params {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => CorpusParams::default(),
    };
    if let Some(n) = a.conversations {
        params.n_conversations = n;
    }
    if let Some(n) = a.turns {
        params.turns_per_conv = n;
    }
    if let Some(p) = a.p_bad {
        params.p_bad = p;
    }
    if let Some(p) = a.p_self_correct {
        params.p_self_correct = p;
    }
    let world = generate_world(a.seed, a.entities, a.attributes)?;
    let corpus = generate_corpus(&world, a.seed, &params)?;
    if let Some(dir) = a.out.parent() {
        fs::create_dir_all(dir)?;
    }
    save_corpus(&corpus, &a.out)?;
    let world_path = a.world_out.unwrap_or_else(|| sidecar_world(&a.out));
    fs::write(&world_path, serde_json::to_string_pretty(&world)?)?;
    eprintln!("wrote {} and {}", a.out.display(), world_path.display());
    print_json(&corpus_stats(&corpus))
}

pub fn stats(corpus: &Path) -> Result<()> {
    print_json(&corpus_stats(&read_corpus(corpus)?))
}

pub fn train_classifier(
    corpus: &Path,
    variant: &str,
    out: &Path,
    world: Option<PathBuf>,
    config: Option<PathBuf>,
) -> Result<()> {
    let variant: ClassifierVariant = variant.parse()?;
    let cfg = load_config(config)?;
    let world = load_world(world, Some(corpus))?;
    let vocab = build_vocab(&world);
    let splits = splits_for(&cfg, &read_corpus(corpus)?);
    let max_len = cfg.model.max_len;
    let train = build_classifier_set(&splits.train, variant, &vocab, max_len);
    let valid = build_classifier_set(&splits.valid, variant, &vocab, max_len);
    let test = build_classifier_set(&splits.test, variant, &vocab, max_len);
    let (clf, _) = train_satisfaction(&train, &valid, variant, &vocab, &cfg.model, &cfg.classifier_train)?;
    clf.save(out)?;
    let metrics = evaluate_classifier(&clf, &test, 0.5).context("evaluating on the test split")?;
    print_json(&metrics)
}

pub fn label(corpus: &Path, classifier: &Path, out: &Path, threshold: f64) -> Result<()> {
    let clf = SatisfactionClassifier::load(classifier)?;
    let convs = read_corpus(corpus)?;
    let labeled = label_missing(&convs, &clf, threshold);
    save_corpus(&labeled, out)?;
    print_json(&corpus_stats(&labeled).labels)
}

pub fn train_corrector(
    corpus: &Path,
    self_corrections: bool,
    feedback: bool,
    mix: &str,
    out: &Path,
    world: Option<PathBuf>,
    config: Option<PathBuf>,
) -> Result<()> {
    let mix: MultitaskMix = mix.parse()?;
    let cfg = load_config(config)?;
    let world = load_world(world, Some(corpus))?;
    let vocab = build_vocab(&world);
    let splits = splits_for(&cfg, &read_corpus(corpus)?);
    let gold = build_gold_pairs(&splits.train);
    let selfp = if self_corrections { build_self_pairs(&splits.train) } else { Vec::new() };
    let valid = build_gold_pairs(&splits.valid);
    let test = build_gold_pairs(&splits.test);
    let ccfg = CorrectorConfig {
        mix,
        use_feedback: feedback,
        director_gamma: cfg.corrector_director_gamma,
        blend_weight: 0.0,
        temperature: cfg.temperature,
        max_new: cfg.max_new,
    };
    let aux = build_aux_tasks(&splits.train);
    let (corrector, _) = fit_corrector(&gold, &selfp, &aux, &valid, &vocab, &ccfg, &cfg.model, &cfg.corrector_train)?;
    corrector.save(out)?;
    let test_f1 = if test.is_empty() { None } else { Some(corrector_f1(&corrector, &test)?) };
    print_json(&serde_json::json!({
        "gold_pairs": gold.len(),
        "self_pairs": selfp.len(),
        "test_f1": test_f1,
    }))
}

#[allow(clippy::too_many_arguments)]
pub fn train_director(
    pos: &Path,
    neg: &Path,
    overlap: bool,
    gamma: f64,
    out: &Path,
    world: &Path,
    blend_weight: Option<f64>,
    config: Option<PathBuf>,
) -> Result<()> {
    let cfg = load_config(config)?;
    let world = load_world(Some(world.to_path_buf()), None)?;
    let vocab = build_vocab(&world);
    let ds = AugmentedDataset {
        positives: read_jsonl::<AugmentedPair>(pos)?,
        negatives: read_jsonl::<AugmentedPair>(neg)?,
    };
    let objective = if overlap {
        FinalObjective::DirectorOverlap
    } else {
        FinalObjective::Director
    };
    let decode = juicer_core::dialogue::DecodeConfig {
        max_new: cfg.max_new,
        blend_weight: blend_weight.unwrap_or(cfg.blend_weight),
        ..Default::default()
    };
    let (model, report) = train_final(&ds, &FinalTraining {
        vocab: &vocab,
        objective,
        gamma,
        decode,
        model: &cfg.model,
        train: &cfg.final_train,
        valid: &AugmentedDataset::default(),
    })?;
    model.save(out, serde_json::json!({ "objective": objective, "gamma": gamma }))?;
    print_json(&serde_json::json!({
        "positives": ds.positives.len(),
        "negatives": ds.negatives.len(),
        "updates": report.updates,
        "final_train_loss": report.train_losses.last(),
    }))
}

/// Builds turns from texts, oldest first, with the last one spoken by the human.
fn context_turns(texts: &[String]) -> Vec<Turn> {
    let n = texts.len();
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if (n - 1 - i) % 2 == 0 {
                Turn::human(t.clone(), false)
            } else {
                Turn::bot(t.clone(), Label::Unlabeled, ErrorMode::None)
            }
        })
        .collect()
}

pub fn decode(model: &Path, blend_weight: Option<f64>, turns: Vec<String>, beam: Option<usize>) -> Result<()> {
    let (mut m, _) = DialogueModel::load(model)?;
    if let Some(w) = blend_weight {
        if !(w >= 0.0) {
            bail!("blend weight must be nonnegative, got {w}");
        }
        m.decode.blend_weight = w;
    }
    if let Some(k) = beam {
        m.decode.strategy = Strategy::Beam { k };
    }
    let out = io::stdout();
    let mut out = BufWriter::new(out.lock());
    let mut emit = |texts: Vec<String>| -> Result<()> {
        let reply = m.reply(&context_turns(&texts))?;
        writeln!(out, "{}", serde_json::json!({ "context": texts, "reply": reply }))?;
        Ok(())
    };
    if !turns.is_empty() {
        return emit(turns);
    }
    for line in io::stdin().lock().lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let texts = if line.starts_with('[') {
            serde_json::from_str::<Vec<String>>(line).context("parsing context array")?
        } else {
            vec![line.to_string()]
        };
        emit(texts)?;
    }
    Ok(())
}

fn default_inputs() -> Result<RunInputs> {
    let world = generate_world(0, DEFAULT_ENTITIES, DEFAULT_ATTRIBUTES)?;
    let corpus = generate_corpus(&world, 0, &CorpusParams::default())?;
    Ok(RunInputs::new(world, corpus))
}

fn inputs_for(corpus: Option<PathBuf>, world: Option<PathBuf>) -> Result<RunInputs> {
    match corpus {
        Some(c) => Ok(RunInputs::new(load_world(world, Some(&c))?, read_corpus(&c)?)),
        None => default_inputs(),
    }
}

pub fn run(config: Option<PathBuf>, corpus: Option<PathBuf>, world: Option<PathBuf>, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let inputs = inputs_for(corpus, world)?;
    let result = run_juicer(&cfg, &inputs, out);
    let report_path = out.join("report.json");
    eprintln!("report: {}", report_path.display());
    let report = result?;
    let arms: Vec<_> = report
        .metrics
        .arms
        .iter()
        .map(|a| serde_json::json!({ "arm": a.name, "test": a.test }))
        .collect();
    print_json(&serde_json::json!({
        "status": report.status,
        "classifiers": report.metrics.classifiers,
        "corrector_f1": report.metrics.corrector_f1,
        "arms": arms,
    }))?;
    if report.status != RunStatus::Done {
        bail!("run ended with status {:?}", report.status);
    }
    Ok(())
}

pub fn eval(model: &Path, corpus: &Path, split: SplitName, world: Option<PathBuf>, config: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(config)?;
    let world = load_world(world, Some(corpus))?;
    let (m, _) = DialogueModel::load(model)?;
    let splits = splits_for(&cfg, &read_corpus(corpus)?);
    let convs = match split {
        SplitName::Valid => &splits.valid,
        SplitName::Test => &splits.test,
        SplitName::TestUnseen => &splits.test_unseen,
    };
    let name = model.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    let report = eval_arm(name, &m, &Oracle::new(&world), convs)?;
    print_json(&report)
}

pub fn sweep(config: Option<PathBuf>, corpus: &Path, world: Option<PathBuf>, rates: &[f64], out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let inputs = RunInputs::new(load_world(world, Some(corpus))?, read_corpus(corpus)?);
    let rows = sampling_rate_sweep(rates, &cfg, &inputs, out)?;
    print_json(&rows)
}

#[allow(clippy::too_many_arguments)]
pub fn serve(
    model: &Path,
    log: PathBuf,
    port: u16,
    corpus: Option<PathBuf>,
    world: Option<PathBuf>,
    config: Option<PathBuf>,
    runs_dir: Option<PathBuf>,
) -> Result<()> {
    let log_path = match std::env::var_os("JUICER_LOG_DIR") {
        Some(dir) => PathBuf::from(dir).join(log.file_name().context("log path has no file name")?),
        None => log,
    };
    let cfg = load_config(config)?;
    let world = load_world(world, corpus.as_deref())?;
    let base_corpus = match &corpus {
        Some(c) => read_corpus(c)?,
        None => Vec::new(),
    };
    let runs_dir = runs_dir.unwrap_or_else(|| log_path.with_file_name("runs"));
    let (initial, _) = DialogueModel::load(model)?;
    let state = AppState::new(
        ServiceConfig {
            log_path: log_path.clone(),
            runs_dir,
            world,
            base_corpus,
            pipeline: cfg,
        },
        initial,
    )?;
    let addr = SocketAddr::from(([0, 0, 0, 0], port));
    eprintln!("serving on {addr}, logging to {}", log_path.display());
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(juicer_service::serve(state, addr))?;
    Ok(())
}
