use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};

use veritopic::checks::gradient_suite;
use veritopic::model::Verifier;
use veritopic::pipeline::corpus::{read_jsonl, write_jsonl};
use veritopic::pipeline::ranker::ranking_pairs;
use veritopic::pipeline::synthetic::{generate, SyntheticConfig};
use veritopic::pipeline::train::build_token_vocab;
use veritopic::pipeline::{
    evaluate, fit_verifier, load_corpus, predict_corpus, topic_texts, train_ranker, Candidate, ClaimInstance,
    Document, Prediction, Ranker, RankerConfig, RunConfig, TfIdfIndex,
};
use veritopic::topic_model::{file as topic_file, LdaConfig, TopicModel, VocabPolicy};

#[derive(Parser)]
#[command(name = "veritopic", version, about = "Topic-aware claim verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the topic model on a corpus and optional document files.
    LdaTrain(LdaTrain),
    /// Build a tf-idf index over a documents file.
    BuildIndex(BuildIndex),
    /// Retrieve the best documents for every claim.
    Retrieve(Retrieve),
    /// Train the sentence ranker on gold vs. non-gold candidates.
    RankTrain(RankTrain),
    /// Replace every claim's candidates with its top-ranked sentences.
    Rank(Rank),
    /// Train the verifier.
    Train(Train),
    /// Predict labels and evidence for a corpus.
    Predict(Predict),
    /// Score predictions against gold labels and evidence.
    Eval(Eval),
    /// Write a synthetic dataset with planted topics and stance markers.
    GenSynthetic(GenSynthetic),
    /// Finite-difference check of every model fragment at toy sizes.
    GradCheck(GradCheck),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("reading config {}", p.display())),
            None => Ok(RunConfig::default()),
        }
    }
}

#[derive(Args)]
struct LdaTrain {
    #[arg(long)]
    corpus: PathBuf,
    /// Extra document files whose sentences join the fitting text.
    #[arg(long)]
    documents: Vec<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    /// Topic count (overrides `K`).
    #[arg(long)]
    topics: Option<usize>,
    /// Gibbs sweeps (overrides `lda_iterations`).
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BuildIndex {
    #[arg(long)]
    documents: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Retrieve {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 5)]
    top_k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct Retrieved {
    id: String,
    docs: Vec<(String, f64)>,
}

#[derive(Args)]
struct RankTrain {
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Rank {
    #[arg(long)]
    ranker: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Documents file; with `--retrieved`, candidates are drawn from the
    /// retrieved documents instead of the corpus.
    #[arg(long, requires = "retrieved")]
    documents: Option<PathBuf>,
    #[arg(long, requires = "documents")]
    retrieved: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    top_k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    topics: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    accumulate_steps: Option<usize>,
    #[arg(long)]
    evidence_per_claim: Option<usize>,
    /// Zero and freeze the coherence layer (ablation).
    #[arg(long)]
    disable_coherence: bool,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Predict {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    topics: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 5)]
    evidence_per_claim: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    /// Write the JSON report here instead of after the table on stdout.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct GenSynthetic {
    /// Output directory: train.jsonl, test.jsonl, documents.jsonl and
    /// background.jsonl.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    topics: usize,
    #[arg(long, default_value_t = 600)]
    train: usize,
    #[arg(long, default_value_t = 150)]
    test: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GradCheck {
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn lda_train(a: LdaTrain) -> Result<()> {
    let run = a.config.load()?;
    let instances = load_corpus(&a.corpus)?;
    let mut docs: Vec<Document> = Vec::new();
    for p in &a.documents {
        docs.extend(read_jsonl::<Document>(p)?);
    }
    let texts = topic_texts(&instances, &docs);
    let k = a.topics.unwrap_or(run.k);
    let iterations = a.iterations.unwrap_or(run.lda_iterations);
    info!("fitting {k} topics on {} sentences, {iterations} sweeps", texts.len());
    let model = TopicModel::fit(&texts, &VocabPolicy::default(), &LdaConfig::new(k, iterations, a.seed))?;
    topic_file::save(&a.out, &model)?;
    println!("wrote {} (K = {k}, V = {})", a.out.display(), model.num_words());
    Ok(())
}

fn build_index(a: BuildIndex) -> Result<()> {
    let docs: Vec<Document> = read_jsonl(&a.documents)?;
    let index = TfIdfIndex::from_documents(&docs)?;
    index.save(&a.out)?;
    println!("indexed {} documents into {}", index.len(), a.out.display());
    Ok(())
}

fn retrieve(a: Retrieve) -> Result<()> {
    let index = TfIdfIndex::load(&a.index)?;
    let instances = load_corpus(&a.corpus)?;
    let out: Vec<Retrieved> = instances
        .iter()
        .map(|inst| Retrieved {
            id: inst.id.clone(),
            docs: index.retrieve(&inst.claim, a.top_k),
        })
        .collect();
    write_jsonl(&a.out, &out)?;
    println!("retrieved documents for {} claims", out.len());
    Ok(())
}

fn rank_train(a: RankTrain) -> Result<()> {
    let run = a.config.load()?;
    let instances = load_corpus(&a.corpus)?;
    let pairs = ranking_pairs(&instances);
    if pairs.is_empty() {
        bail!("{} has no claims with both gold and non-gold candidates", a.corpus.display());
    }
    let config = RankerConfig {
        max_pair_length: run.max_pair_length,
        accumulate_steps: run.accumulate_steps,
        learning_rate: a.learning_rate.unwrap_or(run.learning_rate),
        epochs: a.epochs.unwrap_or(RankerConfig::default().epochs),
        seed: a.seed,
        ..RankerConfig::default()
    };
    let vocab = build_token_vocab(&instances, run.min_token_count);
    let (ranker, history) = train_ranker(&pairs, vocab, config)?;
    for (e, loss) in history.iter().enumerate() {
        info!("ranker epoch {} mean hinge loss {loss:.4}", e + 1);
    }
    ranker.save(&a.out)?;
    println!("trained ranker on {} pairs; wrote {}", pairs.len(), a.out.display());
    Ok(())
}

fn rank(a: Rank) -> Result<()> {
    let ranker = Ranker::load(&a.ranker)?;
    let mut instances = load_corpus(&a.corpus)?;
    let pools: Option<(HashMap<String, Document>, HashMap<String, Retrieved>)> = match (&a.documents, &a.retrieved) {
        (Some(d), Some(r)) => {
            let docs: Vec<Document> = read_jsonl(d)?;
            let retrieved: Vec<Retrieved> = read_jsonl(r)?;
            Some((
                docs.into_iter().map(|d| (d.doc_id.clone(), d)).collect(),
                retrieved.into_iter().map(|r| (r.id.clone(), r)).collect(),
            ))
        }
        _ => None,
    };
    for inst in &mut instances {
        let pool: Vec<Candidate> = match &pools {
            Some((docs, retrieved)) => {
                let hit = retrieved
                    .get(&inst.id)
                    .with_context(|| format!("claim `{}` missing from retrieval output", inst.id))?;
                let mut pool = Vec::new();
                for (doc_id, _) in &hit.docs {
                    let doc = docs
                        .get(doc_id)
                        .with_context(|| format!("retrieved document `{doc_id}` not in documents file"))?;
                    pool.extend(doc.sentences.iter().enumerate().map(|(i, s)| Candidate {
                        doc_id: doc_id.clone(),
                        sent_id: i,
                        text: s.clone(),
                    }));
                }
                pool
            }
            None => std::mem::take(&mut inst.candidates),
        };
        inst.candidates = ranker
            .rank_evidence(&inst.claim, &pool, a.top_k)?
            .into_iter()
            .map(|(c, _)| c)
            .collect();
    }
    write_jsonl(&a.out, &instances)?;
    println!("ranked candidates for {} claims", instances.len());
    Ok(())
}

fn train(a: Train) -> Result<()> {
    let mut run = a.config.load()?;
    run.seed = Some(a.seed);
    if let Some(v) = a.epochs {
        run.epochs = v;
    }
    if let Some(v) = a.learning_rate {
        run.learning_rate = v;
    }
    if let Some(v) = a.accumulate_steps {
        run.accumulate_steps = v;
    }
    if let Some(v) = a.evidence_per_claim {
        run.evidence_per_claim = v;
    }
    run.validate()?;
    let topics = topic_file::load(&a.topics)?;
    let instances: Vec<ClaimInstance> = load_corpus(&a.corpus)?;
    let (verifier, _) = fit_verifier(&instances, &topics, &run, a.seed, a.disable_coherence, |s| {
        info!(
            "epoch {:>3}  loss {:.4}  running LA {:.4}",
            s.epoch, s.mean_loss, s.train_accuracy
        )
    })?;
    verifier.save(&a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn predict(a: Predict) -> Result<()> {
    let verifier = Verifier::load(&a.model)?;
    let topics = topic_file::load(&a.topics)?;
    let instances = load_corpus(&a.corpus)?;
    let preds = predict_corpus(&verifier, &topics, &instances, a.evidence_per_claim)?;
    write_jsonl(&a.out, &preds)?;
    println!("wrote {} predictions to {}", preds.len(), a.out.display());
    Ok(())
}

fn eval(a: Eval) -> Result<()> {
    let preds: Vec<Prediction> = read_jsonl(&a.predictions)?;
    let gold = load_corpus(&a.gold)?;
    let report = evaluate(&preds, &gold)?;
    print!("{report}");
    let json = serde_json::to_string_pretty(&report)?;
    match &a.json {
        Some(p) => std::fs::write(p, json + "\n")?,
        None => println!("\n{json}"),
    }
    Ok(())
}

fn gen_synthetic(a: GenSynthetic) -> Result<()> {
    let cfg = SyntheticConfig {
        topics: a.topics,
        train: a.train,
        test: a.test,
        seed: a.seed,
        ..SyntheticConfig::default()
    };
    let data = generate(&cfg)?;
    std::fs::create_dir_all(&a.out)?;
    let (background, documents): (Vec<Document>, Vec<Document>) =
        data.documents.into_iter().partition(|d| d.doc_id == "background");
    let write = |name: &str, f: &dyn Fn(&Path) -> veritopic::Result<()>| -> Result<()> {
        let p = a.out.join(name);
        f(&p).with_context(|| format!("writing {}", p.display()))
    };
    write("train.jsonl", &|p| write_jsonl(p, &data.train))?;
    write("test.jsonl", &|p| write_jsonl(p, &data.test))?;
    write("documents.jsonl", &|p| write_jsonl(p, &documents))?;
    write("background.jsonl", &|p| write_jsonl(p, &background))?;
    println!(
        "wrote {} train and {} test claims to {}",
        data.train.len(),
        data.test.len(),
        a.out.display()
    );
    Ok(())
}

fn grad_check(a: GradCheck) -> Result<bool> {
    let mut ok = true;
    for entry in gradient_suite(a.seed)? {
        let r = &entry.report;
        let worst = r.worst().map(|w| w.name.as_str()).unwrap_or("-");
        let status = if r.passed() { "ok" } else { "FAIL" };
        println!(
            "{status:<4} {:<40} max rel error {:.3e} (worst: {worst}, {} evaluations)",
            entry.name,
            r.max_rel_error(),
            r.evaluations
        );
        ok &= r.passed();
    }
    Ok(ok)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::LdaTrain(a) => lda_train(a)?,
        Command::BuildIndex(a) => build_index(a)?,
        Command::Retrieve(a) => retrieve(a)?,
        Command::RankTrain(a) => rank_train(a)?,
        Command::Rank(a) => rank(a)?,
        Command::Train(a) => train(a)?,
        Command::Predict(a) => predict(a)?,
        Command::Eval(a) => eval(a)?,
        Command::GenSynthetic(a) => gen_synthetic(a)?,
        Command::GradCheck(a) => return grad_check(a),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
