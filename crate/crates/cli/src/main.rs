mod error;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use citefocus::align::align_spans;
use citefocus::corpus::{load_candidates, load_instances, to_jsonl, CitedAnswer, Instance};
use citefocus::fcm::{ScorerKind, Scorer};
use citefocus::gate::{evaluate_answer, EvalReport};
use citefocus::manifest::RunManifest;
use citefocus::pipeline::{
    build_example, resolve_candidates, run_iteration, run_loop, training_set_jsonl, Candidate, IterationState,
    LoopConfig, Origin, ScoredCandidate,
};
use citefocus::shapley::answer_weights;
use citefocus::tokenize::{tokenize_model, tokenize_scorer, Tokenization};
use citefocus::trainer::{loss_trace_csv, train, LossMode, ToyLm, TrainConfig, Vocabulary};
use citefocus::pipeline::load_training_set;
use error::Failure;
use rayon::prelude::*;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "citefocus", version, about = "Build and inspect citation-focused training data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScorerArg {
    Lexical,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Nll,
    Focused,
}

#[derive(Args)]
struct Common {
    /// Loop configuration (JSON); defaults to the shipped settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads. Output does not depend on this.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, value_enum)]
    scorer: Option<ScorerArg>,
    /// Base URL of a scoring service (remote scorer only).
    #[arg(long, env = "CALF_SCORER_ENDPOINT")]
    endpoint: Option<String>,
    /// Binarization threshold for consistency scores.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args)]
struct AnswersArgs {
    #[arg(long)]
    instances: PathBuf,
    /// Answers as JSONL: {"instance_id": ..., "answer": ...}.
    #[arg(long)]
    answers: PathBuf,
    /// Output directory; results go to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand)]
enum Command {
    /// Dump scorer/model token alignments for each answer.
    Align(AnswersArgs),
    /// Dump per-sentence Shapley values and normalized weights.
    Shap(AnswersArgs),
    /// Run one gating pass over candidate answers.
    Filter {
        #[arg(long)]
        instances: PathBuf,
        /// Candidate JSONL; several files are gated together.
        #[arg(long, required = true)]
        candidates: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Emit weighted training examples for the given answers.
    Weights {
        #[arg(long)]
        instances: PathBuf,
        #[arg(long)]
        answers: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the full iterative loop. Each --candidates file is one
    /// iteration's batch; the last is reused once they run out.
    Loop {
        #[arg(long)]
        instances: PathBuf,
        #[arg(long, required = true)]
        candidates: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train the toy language model on a training-example file.
    TrainToy {
        /// TrainingExample JSONL, as written by `weights` or `loop`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training configuration (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        loss: Option<LossArg>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Report citation and correctness metrics for answers.
    Eval(AnswersArgs),
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::io(path, e))
}

fn loop_config(common: &Common) -> Result<LoopConfig, Failure> {
    let mut config = match &common.config {
        Some(p) => LoopConfig::from_json(&read_text(p)?).map_err(|e| Failure::contract(format!("{}: {e}", p.display())))?,
        None => LoopConfig::shipped(),
    };
    if let Some(s) = common.seed {
        config.master_seed = s;
    }
    if let Some(k) = common.scorer {
        config.scorer.kind = match k {
            ScorerArg::Lexical => ScorerKind::Lexical,
            ScorerArg::Remote => ScorerKind::Remote,
        };
    }
    if config.scorer.kind == ScorerKind::Remote {
        if let Some(e) = &common.endpoint {
            config.scorer.endpoint = Some(e.clone());
        }
    } else {
        config.scorer.endpoint = None;
    }
    if let Some(t) = common.threshold {
        config.scorer.binarize_threshold = t;
    }
    config.validate()?;
    Ok(config)
}

fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> Result<T, Failure> + Send) -> Result<T, Failure> {
    match jobs {
        None => f(),
        Some(0) => Err(Failure::contract("--jobs must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Failure::contract(e.to_string()))?
            .install(f),
    }
}

/// Collects outputs either into a directory (with a manifest) or onto
/// stdout.
struct Sink {
    out: Option<PathBuf>,
    manifest: RunManifest,
}

impl Sink {
    fn new(out: Option<&Path>, command: &str, seed: u64, config: Value) -> Result<Self, Failure> {
        if let Some(dir) = out {
            fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
        }
        Ok(Sink {
            out: out.map(Path::to_path_buf),
            manifest: RunManifest::new(command, seed, config),
        })
    }

    fn input(&mut self, path: &Path) -> Result<(), Failure> {
        self.manifest.add_input(path).map_err(|e| Failure::io(path, e))
    }

    fn emit(&mut self, name: &str, content: &str) -> Result<(), Failure> {
        match &self.out {
            Some(dir) => {
                self.manifest
                    .write_output(dir, name, content.as_bytes())
                    .map_err(|e| Failure::io(&dir.join(name), e))?;
            }
            None => print!("{content}"),
        }
        Ok(())
    }

    fn finish(self) -> Result<(), Failure> {
        if let Some(dir) = &self.out {
            self.manifest.write(dir).map_err(|e| Failure::io(dir, e))?;
        }
        Ok(())
    }
}

fn index(instances: &[Instance]) -> HashMap<String, Instance> {
    instances.iter().map(|i| (i.id.clone(), i.clone())).collect()
}

fn answers(instances: &HashMap<String, Instance>, path: &Path) -> Result<Vec<Candidate>, Failure> {
    Ok(resolve_candidates(&load_candidates(path)?, instances)?)
}

fn scorer_tokens(answer: &CitedAnswer) -> Tokenization {
    let tokens: Vec<_> = answer
        .sentences
        .iter()
        .flat_map(|s| tokenize_scorer(&s.text_without_citations).tokens)
        .collect();
    let source_text = tokens.iter().map(|t| t.surface.as_str()).collect();
    Tokenization { tokens, source_text }
}

fn config_value<T: serde::Serialize>(c: &T) -> Value {
    serde_json::to_value(c).expect("configs serialize")
}

fn scored_jsonl(accepted: &[ScoredCandidate]) -> String {
    let rows: Vec<Value> = accepted
        .iter()
        .map(|a| {
            json!({
                "instance_id": a.instance_id,
                "answer": a.answer.full_text,
                "origin": a.origin,
                "metrics": a.metrics,
            })
        })
        .collect();
    to_jsonl(&rows)
}

fn pretty(v: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn cmd_align(a: &AnswersArgs) -> Result<(), Failure> {
    let config = loop_config(&a.common)?;
    let insts = load_instances(&a.instances)?;
    let by_id = index(&insts);
    let cands = answers(&by_id, &a.answers)?;
    let mut sink = Sink::new(a.out.as_deref(), "align", config.master_seed, json!({}))?;
    sink.input(&a.instances)?;
    sink.input(&a.answers)?;
    let mut rows = Vec::new();
    for c in &cands {
        let s = scorer_tokens(&c.answer);
        let m = tokenize_model(&c.answer.full_text);
        let alignment =
            align_spans(&s, &m).map_err(|e| Failure::contract(format!("instance {}: {e}", c.instance_id)))?;
        rows.push(json!({
            "instance_id": c.instance_id,
            "answer": c.answer.full_text,
            "scorer_tokens": s.surfaces(),
            "model_tokens": m.surfaces(),
            "pairs": alignment.pairs.iter().map(|(x, y)| [[x.start, x.end], [y.start, y.end]]).collect::<Vec<_>>(),
        }));
    }
    sink.emit("alignments.jsonl", &to_jsonl(&rows))?;
    sink.finish()
}

fn cmd_shap(a: &AnswersArgs) -> Result<(), Failure> {
    let config = loop_config(&a.common)?;
    let scorer = config.scorer.build()?;
    let insts = load_instances(&a.instances)?;
    let by_id = index(&insts);
    let cands = answers(&by_id, &a.answers)?;
    let mut sink = Sink::new(a.out.as_deref(), "shap", config.master_seed, config_value(&config))?;
    sink.input(&a.instances)?;
    sink.input(&a.answers)?;
    let rows = with_jobs(a.common.jobs, || {
        cands
            .par_iter()
            .map(|c| {
                let inst = &by_id[&c.instance_id];
                let w = answer_weights(
                    &c.answer,
                    &inst.passages,
                    scorer.as_ref(),
                    &config.attribution,
                    config.master_seed,
                    &inst.id,
                )?;
                Ok(json!({
                    "instance_id": c.instance_id,
                    "answer": c.answer.full_text,
                    "sentences": w.sentences,
                }))
            })
            .collect::<Result<Vec<_>, Failure>>()
    })?;
    sink.emit("shapley.jsonl", &to_jsonl(&rows))?;
    sink.finish()
}

fn cmd_filter(instances: &Path, candidates: &[PathBuf], out: &Path, common: &Common) -> Result<(), Failure> {
    let config = loop_config(common)?;
    let scorer = config.scorer.build()?;
    let insts = load_instances(instances)?;
    let by_id = index(&insts);
    let mut cands = Vec::new();
    for p in candidates {
        cands.extend(answers(&by_id, p)?);
    }
    let mut sink = Sink::new(Some(out), "filter", config.master_seed, config_value(&config))?;
    sink.input(instances)?;
    for p in candidates {
        sink.input(p)?;
    }
    let state = with_jobs(common.jobs, || {
        Ok(run_iteration(
            IterationState::new(config.max_iterations),
            &cands,
            &by_id,
            scorer.as_ref(),
            &config,
        )?)
    })?;
    sink.emit("accepted.jsonl", &scored_jsonl(&state.accepted))?;
    sink.emit("training.jsonl", &training_set_jsonl(&state.examples))?;
    sink.emit("history.json", &pretty(&state.history))?;
    sink.finish()
}

fn cmd_weights(instances: &Path, answers_path: &Path, out: &Path, common: &Common) -> Result<(), Failure> {
    let config = loop_config(common)?;
    let scorer: Arc<dyn Scorer> = config.scorer.build()?;
    let insts = load_instances(instances)?;
    let by_id = index(&insts);
    let cands = answers(&by_id, answers_path)?;
    let mut sink = Sink::new(Some(out), "weights", config.master_seed, config_value(&config))?;
    sink.input(instances)?;
    sink.input(answers_path)?;
    let examples = with_jobs(common.jobs, || {
        cands
            .par_iter()
            .map(|c| Ok(build_example(&by_id[&c.instance_id], &c.answer, scorer.as_ref(), &config, Origin::Ingested)?))
            .collect::<Result<Vec<_>, Failure>>()
    })?;
    sink.emit("training.jsonl", &training_set_jsonl(&examples))?;
    sink.finish()
}

fn cmd_loop(instances: &Path, candidates: &[PathBuf], out: &Path, common: &Common) -> Result<(), Failure> {
    let config = loop_config(common)?;
    let scorer = config.scorer.build()?;
    let insts = load_instances(instances)?;
    let batches = candidates
        .iter()
        .map(|p| load_candidates(p))
        .collect::<Result<Vec<_>, _>>()?;
    let mut sink = Sink::new(Some(out), "loop", config.master_seed, config_value(&config))?;
    sink.input(instances)?;
    for p in candidates {
        sink.input(p)?;
    }
    let outcome = with_jobs(common.jobs, || Ok(run_loop(&insts, &batches, &insts, scorer.as_ref(), &config)?))?;
    let training = outcome.training_set();
    if training.is_empty() {
        return Err(Failure::contract("no seed or accepted examples to emit"));
    }
    sink.emit("training.jsonl", &training_set_jsonl(&training))?;
    sink.emit("accepted.jsonl", &scored_jsonl(&outcome.state.accepted))?;
    sink.emit("history.json", &pretty(&outcome.state.history))?;
    log::info!(
        "{} iterations, {} accepted, {} training examples",
        outcome.state.history.len(),
        outcome.state.accepted.len(),
        training.len()
    );
    sink.finish()
}

struct TrainArgs<'a> {
    data: &'a Path,
    out: &'a Path,
    config: Option<&'a Path>,
    loss: Option<LossArg>,
    steps: Option<usize>,
    lr: Option<f64>,
    seed: Option<u64>,
}

fn cmd_train(a: TrainArgs) -> Result<(), Failure> {
    let mut config = match a.config {
        Some(p) => serde_json::from_str::<TrainConfig>(&read_text(p)?)
            .map_err(|e| Failure::contract(format!("{}: {e}", p.display())))?,
        None => TrainConfig::default(),
    };
    if let Some(l) = a.loss {
        config.loss_mode = match l {
            LossArg::Nll => LossMode::Nll,
            LossArg::Focused => LossMode::Focused,
        };
    }
    if let Some(s) = a.steps {
        config.steps = s;
    }
    if let Some(lr) = a.lr {
        config.learning_rate = lr;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    config.validate()?;
    let data = load_training_set(a.data)?;
    let mut sink = Sink::new(Some(a.out), "train-toy", config.seed, config_value(&config))?;
    sink.input(a.data)?;
    let mut model = ToyLm::new(
        Vocabulary::from_examples(&data),
        config.context_window,
        config.embed_dim,
        config.seed,
    );
    let trace = train(&mut model, &data, &config)?;
    if let (Some(first), Some(last)) = (trace.first(), trace.last()) {
        log::info!("loss {first:.6} -> {last:.6} over {} steps", trace.len());
    }
    sink.emit("checkpoint.json", &pretty(&model.to_checkpoint()))?;
    sink.emit("loss_trace.csv", &loss_trace_csv(&trace))?;
    sink.finish()
}

fn cmd_eval(a: &AnswersArgs) -> Result<(), Failure> {
    let config = loop_config(&a.common)?;
    let scorer = config.scorer.build()?;
    let insts = load_instances(&a.instances)?;
    let by_id = index(&insts);
    let cands = answers(&by_id, &a.answers)?;
    let mut sink = Sink::new(a.out.as_deref(), "eval", config.master_seed, config_value(&config))?;
    sink.input(&a.instances)?;
    sink.input(&a.answers)?;
    let threshold = config.scorer.binarize_threshold;
    let records = with_jobs(a.common.jobs, || {
        cands
            .par_iter()
            .map(|c| {
                let inst = &by_id[&c.instance_id];
                Ok(evaluate_answer(&inst.id, &c.answer, inst.facts(), &inst.passages, scorer.as_ref(), threshold)?)
            })
            .collect::<Result<Vec<_>, Failure>>()
    })?;
    sink.emit("report.json", &pretty(&EvalReport::from_records(records)))?;
    sink.finish()
}

fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Align(a) => cmd_align(a),
        Command::Shap(a) => cmd_shap(a),
        Command::Filter {
            instances,
            candidates,
            out,
            common,
        } => cmd_filter(instances, candidates, out, common),
        Command::Weights {
            instances,
            answers,
            out,
            common,
        } => cmd_weights(instances, answers, out, common),
        Command::Loop {
            instances,
            candidates,
            out,
            common,
        } => cmd_loop(instances, candidates, out, common),
        Command::TrainToy {
            data,
            out,
            config,
            loss,
            steps,
            lr,
            seed,
        } => cmd_train(TrainArgs {
            data,
            out,
            config: config.as_deref(),
            loss: *loss,
            steps: *steps,
            lr: *lr,
            seed: *seed,
        }),
        Command::Eval(a) => cmd_eval(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(error::CONTRACT)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
