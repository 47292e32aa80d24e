use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use evalact::advantage::{relative_importance_ratio, PcarParams};
use evalact::harness::{
    emit_curves, export_batch, export_diagnostics, export_metrics, export_rollouts, golden,
    synthetic, RolloutPolicy, RunConfig, StochasticPolicy, CONFIG_ENV_VAR,
};
use evalact::harness::training::collect_groups;
use evalact::objective::ToyPolicy;
use evalact::retrieval::{read_corpus, write_corpus, CorpusIndex, Document, RetrievalEnv};
use evalact::reward::{evaluate_predictions, macro_report, read_dataset, read_predictions, QaExample};

#[derive(Parser)]
#[command(name = "evalact", version, about = "Search/Evaluate agent environment and training harness")]
struct Cli {
    /// Key-value config file applied before flags.
    #[arg(long, global = true, env = CONFIG_ENV_VAR)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the BM25 index over a corpus and print its statistics, or run a query.
    Index {
        #[command(flatten)]
        run: RunFlags,
        #[arg(long)]
        query: Option<String>,
    },
    /// Write a synthetic corpus and question set.
    Synth {
        #[arg(long, default_value = "data")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        world_seed: u64,
        #[arg(long, default_value_t = 50)]
        docs: usize,
        #[arg(long, default_value_t = 20)]
        questions: usize,
    },
    /// Run one rollout group per question and export the token batch.
    Rollout {
        #[command(flatten)]
        run: RunFlags,
        /// Policy table written by `train`; uniform if omitted.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Train the toy policy and write metrics, curves and the final batch.
    Train {
        #[command(flatten)]
        run: RunFlags,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// EM / F1 / TPFR of prediction files; one --data/--predictions pair per dataset.
    Eval {
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        #[arg(long, required = true)]
        predictions: Vec<PathBuf>,
    },
    /// Relative importance ratio for PCAR parameters.
    Rir {
        #[arg(long, default_value_t = 0.1)]
        lambda_base: f64,
        #[arg(long, default_value_t = 0.5)]
        lambda_max: f64,
        #[arg(long, default_value_t = 1e-6)]
        delta: f64,
    },
    /// Verify the bundled two-hop trajectory end to end.
    Golden,
}

/// Flags mirroring `RunConfig`; each overrides the config file.
#[derive(Args, Default)]
struct RunFlags {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Use a generated world with this seed when no corpus/dataset is given.
    #[arg(long, default_value_t = 0)]
    world_seed: u64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long)]
    clip_eps: Option<f64>,
    #[arg(long)]
    kl_beta: Option<f64>,
    #[arg(long)]
    length_normalize: Option<bool>,
    #[arg(long)]
    pcar: Option<bool>,
    #[arg(long)]
    lambda_base: Option<f64>,
    #[arg(long)]
    lambda_max: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    k1: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    search_budget: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_pairs: Option<usize>,
    /// Extra `key=value` overrides using config-file keys.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl RunFlags {
    fn pairs(&self) -> Vec<(&'static str, Option<String>)> {
        fn s<T: ToString>(v: &Option<T>) -> Option<String> {
            v.as_ref().map(ToString::to_string)
        }
        vec![
            ("paths.corpus", self.corpus.as_ref().map(|p| p.display().to_string())),
            ("paths.dataset", self.dataset.as_ref().map(|p| p.display().to_string())),
            ("run.seed", s(&self.seed)),
            ("run.iterations", s(&self.iterations)),
            ("run.batch_size", s(&self.batch_size)),
            ("grpo.epochs", s(&self.epochs)),
            ("grpo.learning_rate", s(&self.learning_rate)),
            ("grpo.group_size", s(&self.group_size)),
            ("grpo.clip_eps", s(&self.clip_eps)),
            ("grpo.kl_beta", s(&self.kl_beta)),
            ("grpo.length_normalize", s(&self.length_normalize)),
            ("pcar.enabled", s(&self.pcar)),
            ("pcar.lambda_base", s(&self.lambda_base)),
            ("pcar.lambda_max", s(&self.lambda_max)),
            ("pcar.delta", s(&self.delta)),
            ("pcar.eps", s(&self.eps)),
            ("bm25.k1", s(&self.k1)),
            ("bm25.b", s(&self.b)),
            ("retrieval.top_k", s(&self.top_k)),
            ("episode.search_budget", s(&self.search_budget)),
            ("run.temperature", s(&self.temperature)),
            ("run.max_pairs", s(&self.max_pairs)),
        ]
    }

    fn resolve(&self, config: Option<&Path>) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            cfg.apply_kv(&text).with_context(|| format!("in {}", path.display()))?;
        }
        for (key, value) in self.pairs() {
            if let Some(v) = value {
                cfg.set(key, &v, 0)?;
            }
        }
        for o in &self.overrides {
            let (k, v) = o.split_once('=').with_context(|| format!("--set {o}: expected KEY=VALUE"))?;
            cfg.set(k.trim(), v.trim(), 0)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

struct Inputs {
    docs: Vec<Document>,
    questions: Vec<QaExample>,
}

fn load_inputs(cfg: &RunConfig, world_seed: u64) -> Result<Inputs> {
    let world = || synthetic::generate(world_seed, 50, 20);
    let docs = match &cfg.corpus {
        Some(p) => read_corpus(BufReader::new(File::open(p).with_context(|| format!("opening {}", p.display()))?))?,
        None => world().documents,
    };
    let questions = match &cfg.dataset {
        Some(p) => read_dataset(BufReader::new(File::open(p).with_context(|| format!("opening {}", p.display()))?))?,
        None => world().questions,
    };
    Ok(Inputs { docs, questions })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let p = dir.join(name);
    Ok(BufWriter::new(File::create(&p).with_context(|| format!("creating {}", p.display()))?))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let config = cli.config.as_deref();
    match cli.cmd {
        Cmd::Index { run, query } => {
            let cfg = run.resolve(config)?;
            let inputs = load_inputs(&cfg, run.world_seed)?;
            let index = CorpusIndex::build(inputs.docs, cfg.bm25)?;
            match query {
                Some(q) => {
                    for (rank, (doc, score)) in index.search(&q, cfg.top_k).into_iter().enumerate() {
                        println!("{}\t{}\t{score:.6}\t{}", rank + 1, doc.id, doc.title);
                    }
                }
                None => println!("{}", serde_json::to_string_pretty(&index.stats())?),
            }
        }
        Cmd::Synth {
            out_dir,
            world_seed,
            docs,
            questions,
        } => {
            fs::create_dir_all(&out_dir)?;
            let w = synthetic::generate(world_seed, docs, questions);
            let mut c = create(&out_dir, "corpus.jsonl")?;
            write_corpus(&mut c, &w.documents)?;
            c.flush()?;
            let mut d = create(&out_dir, "dataset.jsonl")?;
            for q in &w.questions {
                serde_json::to_writer(&mut d, q)?;
                d.write_all(b"\n")?;
            }
            d.flush()?;
            println!("wrote {} documents and {} questions to {}", w.documents.len(), w.questions.len(), out_dir.display());
        }
        Cmd::Rollout { run, policy, out_dir } => {
            let cfg = run.resolve(config)?;
            let inputs = load_inputs(&cfg, run.world_seed)?;
            let env = RetrievalEnv::from_documents(inputs.docs, &cfg.retrieval())?;
            let table: ToyPolicy = match policy {
                Some(p) => serde_json::from_reader(BufReader::new(File::open(&p)?))
                    .with_context(|| format!("reading policy {}", p.display()))?,
                None => StochasticPolicy::uniform().policy,
            };
            let sampler = RolloutPolicy::Stochastic(StochasticPolicy {
                policy: table,
                decode_temperature: cfg.rollout_temperature,
                max_pairs: cfg.max_pairs,
                max_steps: cfg.max_steps,
            });
            let batch: Vec<(u64, &QaExample)> = inputs.questions.iter().enumerate().map(|(i, q)| (i as u64, q)).collect();
            let groups = collect_groups(&sampler, &env, &batch, cfg.seed, &cfg)?;
            fs::create_dir_all(&out_dir)?;
            let mut w = create(&out_dir, "batch.jsonl")?;
            export_batch(&mut w, &groups)?;
            w.flush()?;
            let mut w = create(&out_dir, "diagnostics.jsonl")?;
            export_diagnostics(&mut w, &groups)?;
            w.flush()?;
            let mut w = create(&out_dir, "rollouts.jsonl")?;
            export_rollouts(&mut w, &groups)?;
            w.flush()?;
            let n: usize = groups.iter().map(|g| g.rollouts.len()).sum();
            let mean = groups.iter().flat_map(|g| g.rewards()).sum::<f64>() / n.max(1) as f64;
            println!("{} groups, {n} rollouts, mean reward {mean:.4}; wrote {}", groups.len(), out_dir.display());
        }
        Cmd::Train { run, out_dir } => {
            let cfg = run.resolve(config)?;
            let inputs = load_inputs(&cfg, run.world_seed)?;
            let env = RetrievalEnv::from_documents(inputs.docs, &cfg.retrieval())?;
            let result = evalact::harness::run_training(&cfg, &env, &inputs.questions)?;
            fs::create_dir_all(&out_dir)?;
            let mut w = create(&out_dir, "metrics.json")?;
            export_metrics(&mut w, &result.summaries)?;
            w.flush()?;
            let (mut csv, mut svg) = (create(&out_dir, "curves.csv")?, create(&out_dir, "curves.svg")?);
            emit_curves(&mut csv, &mut svg, &result.summaries)?;
            csv.flush()?;
            svg.flush()?;
            let mut w = create(&out_dir, "batch.jsonl")?;
            export_batch(&mut w, &result.last_groups)?;
            w.flush()?;
            let mut w = create(&out_dir, "diagnostics.jsonl")?;
            export_diagnostics(&mut w, &result.last_groups)?;
            w.flush()?;
            let mut w = create(&out_dir, "policy.json")?;
            serde_json::to_writer(&mut w, &result.policy)?;
            w.flush()?;
            let mut w = create(&out_dir, "config.json")?;
            serde_json::to_writer_pretty(&mut w, &cfg)?;
            w.flush()?;
            for s in &result.summaries {
                println!(
                    "iter {:>3}  reward {:.3}  compliant {:.3}  tpfr {:.3}  searches {:.2}  clamp {:.3}",
                    s.iteration, s.mean_reward, s.compliance_rate, s.tpfr, s.mean_searches, s.clamp_rate
                );
            }
            println!("wrote {}", out_dir.display());
        }
        Cmd::Eval { data, predictions } => {
            if data.len() != predictions.len() {
                bail!("need one --predictions per --data ({} vs {})", data.len(), predictions.len());
            }
            let mut metrics = Vec::new();
            for (d, p) in data.iter().zip(&predictions) {
                let ds = read_dataset(BufReader::new(File::open(d).with_context(|| format!("opening {}", d.display()))?))?;
                let preds = read_predictions(BufReader::new(File::open(p).with_context(|| format!("opening {}", p.display()))?))?;
                let name = d.file_stem().map_or_else(|| d.display().to_string(), |s| s.to_string_lossy().into_owned());
                metrics.push(evaluate_predictions(&name, &ds, &preds)?);
            }
            println!("{}", serde_json::to_string_pretty(&macro_report(metrics))?);
        }
        Cmd::Rir {
            lambda_base,
            lambda_max,
            delta,
        } => {
            let p = PcarParams::new(lambda_base, lambda_max).with_delta(delta);
            p.validate()?;
            println!("{}", relative_importance_ratio(&p));
        }
        Cmd::Golden => {
            let report = golden::verify_golden()?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if !report.ok() {
                bail!("golden trajectory check failed");
            }
        }
    }
    Ok(())
}
