use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ltp::em::{run_ltp_em, EmOptions};
use ltp::evaluation::{
    classification_experiment, disambiguation_experiment, extract_evidence, rank_topics,
    retrieval_metrics, EvalReport, SplitConfig,
};
use ltp::inference::{run_ltp_inf, Dataset, InferenceOptions};
use ltp::io::{
    read_json, read_jsonl, read_observations, read_topic_maps, write_json, write_jsonl,
    write_observations, write_topic_maps, ItemRecord, Profile,
};
use ltp::perm_models::ModelParams;
use ltp::rankings::QueryObservation;
use ltp::simulator::{simulate, Personalizer, ScenarioConfig, SyntheticProfile, WorldConfig};
use ltp::topic_model::{build_vocab, fit_topics, BagOfWords, TopicFitConfig, TopicMaps};
use ltp::{LtpError, Result};

#[derive(Parser)]
#[command(
    name = "ltp",
    version,
    about = "Learn topic-level personalization from ranked-list pairs"
)]
struct Cli {
    /// Worker threads; defaults to the number of cores. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit topic-maps to item texts.
    FitTopics(FitTopicsArgs),
    /// Generate a synthetic dataset with known personalization.
    Simulate(SimulateArgs),
    /// Learn a personalization profile from observations.
    Learn(LearnArgs),
    /// Score a learned profile against ground truth.
    Evaluate(EvaluateArgs),
    /// Split-sample test of telling personalized from vanilla lists.
    Disambiguate(DisambiguateArgs),
    /// Split-sample test of attributing lists to users.
    Classify(ClassifyArgs),
    /// List the re-rankings best explained by a profile.
    Evidence(EvidenceArgs),
}

#[derive(Args)]
struct FitTopicsArgs {
    /// items.jsonl with {item_id, text} rows.
    #[arg(long)]
    items: PathBuf,
    #[arg(long)]
    topics: usize,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Drop words seen fewer times than this.
    #[arg(long, default_value_t = 1)]
    min_count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PersonalizerKind {
    Generative,
    Deterministic,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 50)]
    topics: usize,
    #[arg(long, default_value_t = 10)]
    categories: usize,
    #[arg(long, default_value_t = 2000)]
    vocab_size: usize,
    #[arg(long, default_value_t = 6)]
    items_per_topic: usize,
    #[arg(long, default_value_t = 10)]
    queries_per_topic: usize,
    #[arg(long, default_value_t = 10)]
    list_len: usize,
    /// Number of personalized topics.
    #[arg(long, default_value_t = 3)]
    personalized: usize,
    #[arg(long, default_value_t = 2.0)]
    eta: f64,
    #[arg(long, default_value_t = 0.7)]
    tau: f64,
    #[arg(long, value_enum, default_value_t = PersonalizerKind::Generative)]
    personalizer: PersonalizerKind,
    #[arg(long, default_value_t = 0.9)]
    lambda: f64,
    #[arg(long, default_value_t = 10.0)]
    mu: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Expected topic count; checked against the topic-maps.
    #[arg(long)]
    topics: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 2.0)]
    delta: f64,
    /// Fixed λ, or EM's fallback prior settings when --em is given.
    #[arg(long, default_value_t = 0.9)]
    lambda: f64,
    #[arg(long, default_value_t = 10.0)]
    mu: f64,
    /// Estimate λ and μ by variational EM.
    #[arg(long)]
    em: bool,
    /// Relative ELBO change that stops inference.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ModelArgs {
    fn params(&self) -> ModelParams {
        ModelParams {
            mu: self.mu,
            lambda: self.lambda,
            gamma: self.gamma,
            delta: self.delta,
        }
    }

    fn inference(&self) -> InferenceOptions {
        InferenceOptions {
            tol: self.tol,
            max_iters: self.max_iters,
            seed: self.seed,
            record_blocks: false,
        }
    }

    /// Learned parameters for `data`: EM estimates with --em, the fixed
    /// values otherwise.
    fn fit(
        &self,
        data: &Dataset,
    ) -> Result<(
        ModelParams,
        ltp::inference::VariationalState,
        Option<Vec<ltp::em::EmStep>>,
    )> {
        let params = self.params();
        params.validate()?;
        if self.em {
            let res = run_ltp_em(
                data,
                &params,
                &EmOptions {
                    seed: self.seed,
                    inference: self.inference(),
                    ..Default::default()
                },
            )?;
            Ok((res.params, res.state, Some(res.trace)))
        } else {
            Ok((params, run_ltp_inf(data, &params, &self.inference())?, None))
        }
    }
}

#[derive(Args)]
struct LearnArgs {
    #[arg(long)]
    observations: PathBuf,
    #[arg(long)]
    topic_maps: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    profile: PathBuf,
    #[arg(long)]
    ground_truth: PathBuf,
    /// With --topic-maps, adds evidence and the disambiguation test.
    #[arg(long, requires = "topic_maps")]
    observations: Option<PathBuf>,
    #[arg(long)]
    topic_maps: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    top: usize,
    #[arg(long, default_value_t = 0.8)]
    split: f64,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Score lists under the learned g/f mixture instead of g alone.
    #[arg(long)]
    mixture: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DisambiguateArgs {
    #[arg(long)]
    observations: PathBuf,
    #[arg(long)]
    topic_maps: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0.8)]
    split: f64,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    /// Score lists under the learned g/f mixture instead of g alone.
    #[arg(long)]
    mixture: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClassifyArgs {
    /// One `USER=observations.jsonl` per user; at least two.
    #[arg(long = "user", required = true, num_args = 1)]
    users: Vec<String>,
    #[arg(long)]
    topic_maps: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0.8)]
    split: f64,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvidenceArgs {
    #[arg(long)]
    profile: PathBuf,
    #[arg(long)]
    observations: PathBuf,
    #[arg(long)]
    topic_maps: PathBuf,
    #[arg(long, default_value_t = 20)]
    top: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct AccuracySummary {
    accuracies: Vec<f64>,
    mean: Option<f64>,
    std: Option<f64>,
}

impl AccuracySummary {
    fn new(accuracies: Vec<f64>) -> Self {
        let n = accuracies.len() as f64;
        let (mean, std) = if accuracies.is_empty() {
            (None, None)
        } else {
            let mean = accuracies.iter().sum::<f64>() / n;
            let var = accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
            (Some(mean), Some(var.sqrt()))
        };
        Self {
            accuracies,
            mean,
            std,
        }
    }
}

fn prepare_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn fit_topics_cmd(a: FitTopicsArgs) -> Result<()> {
    let items: Vec<ItemRecord> = read_jsonl(&a.items)?;
    let texts: Vec<&str> = items.iter().map(|i| i.text.as_str()).collect();
    let vocab = build_vocab(&texts, a.min_count)?;
    let docs: Vec<BagOfWords> = items
        .iter()
        .map(|i| BagOfWords::from_text(i.item_id.clone(), &i.text, &vocab))
        .collect();
    let fit = fit_topics(
        &docs,
        &vocab,
        &TopicFitConfig {
            num_topics: a.topics,
            max_iters: a.max_iters,
            tol: a.tol,
            seed: a.seed,
            ..Default::default()
        },
    )?;
    prepare_out(&a.out)?;
    write_json(&a.out.join("topics.json"), &fit.model)?;
    write_topic_maps(&a.out.join("topic_maps.jsonl"), &fit.maps)?;
    Ok(())
}

fn simulate_cmd(a: SimulateArgs) -> Result<()> {
    let cfg = ScenarioConfig {
        world: WorldConfig {
            num_topics: a.topics,
            num_categories: a.categories,
            vocab_size: a.vocab_size,
            items_per_topic: a.items_per_topic,
            ..Default::default()
        },
        queries_per_topic: a.queries_per_topic,
        list_len: a.list_len,
        personalized_topics: a.personalized,
        eta_magnitude: a.eta,
        tau: a.tau,
        personalizer: match a.personalizer {
            PersonalizerKind::Generative => Personalizer::Generative {
                lambda: a.lambda,
                mu: a.mu,
            },
            PersonalizerKind::Deterministic => Personalizer::Deterministic,
        },
    };
    let sc = simulate(&cfg, a.seed)?;
    prepare_out(&a.out)?;
    write_observations(&a.out.join("observations.jsonl"), &sc.observations)?;
    write_jsonl(
        &a.out.join("items.jsonl"),
        sc.world.items.iter().map(|i| ItemRecord {
            item_id: i.item_id.clone(),
            text: i.text.clone(),
        }),
    )?;
    write_topic_maps(&a.out.join("topic_maps.jsonl"), &sc.world.maps)?;
    write_json(&a.out.join("topics.json"), &sc.world.model)?;
    write_json(&a.out.join("ground_truth.json"), &sc.profile)?;
    Ok(())
}

fn load(
    observations: &Path,
    topic_maps: &Path,
    topics: Option<usize>,
) -> Result<(Vec<QueryObservation>, TopicMaps)> {
    let maps = read_topic_maps(topic_maps, topics)?;
    let obs = read_observations(observations)?;
    Ok((obs, maps))
}

fn learn_cmd(a: LearnArgs) -> Result<()> {
    let (obs, maps) = load(&a.observations, &a.topic_maps, a.model.topics)?;
    let data = Dataset::new(&obs, &maps)?;
    let (params, state, em_trace) = a.model.fit(&data)?;
    prepare_out(&a.out)?;
    write_json(
        &a.out.join("profile.json"),
        &Profile::new(data.query_ids(), &state, &params, em_trace),
    )
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let profile: Profile = read_json(&a.profile)?;
    let truth: SyntheticProfile = read_json(&a.ground_truth)?;
    if truth.eta_true.len() != profile.eta_tilde.len() {
        return Err(LtpError::TopicCountMismatch {
            expected: truth.eta_true.len(),
            found: profile.eta_tilde.len(),
        });
    }
    let ranked = rank_topics(&profile.eta_tilde);
    let metrics = retrieval_metrics(&ranked, &truth.personalized_topics)?;
    let mut report = EvalReport {
        profile_id: Some(truth.profile_id.clone()),
        personalized_topics: truth.personalized_topics.clone(),
        ranked_topics: ranked,
        metrics,
        disambiguation_accuracy: None,
        classification_accuracy: None,
        evidence: Vec::new(),
    };
    if let (Some(obs_path), Some(maps_path)) = (&a.observations, &a.topic_maps) {
        let (obs, maps) = load(obs_path, maps_path, Some(profile.eta_tilde.len()))?;
        report.evidence = extract_evidence(&obs, &profile.eta_tilde, &maps, a.top)?;
        let inference = InferenceOptions {
            seed: a.seed,
            ..Default::default()
        };
        let split = SplitConfig {
            train_fraction: a.split,
            repeats: a.repeats,
            seed: a.seed,
        };
        let acc = disambiguation_experiment(
            &obs,
            &maps,
            &profile.params(),
            &inference,
            &split,
            a.mixture,
        )?;
        report.disambiguation_accuracy = AccuracySummary::new(acc).mean;
    }
    prepare_out(&a.out)?;
    write_json(&a.out.join("report.json"), &report)?;
    std::fs::write(a.out.join("report.md"), report.to_markdown())?;
    Ok(())
}

fn split_config(split: f64, repeats: usize, seed: u64) -> SplitConfig {
    SplitConfig {
        train_fraction: split,
        repeats,
        seed,
    }
}

fn disambiguate_cmd(a: DisambiguateArgs) -> Result<()> {
    let (obs, maps) = load(&a.observations, &a.topic_maps, a.model.topics)?;
    let mut params = a.model.params();
    if a.model.em {
        params = a.model.fit(&Dataset::new(&obs, &maps)?)?.0;
    }
    let acc = disambiguation_experiment(
        &obs,
        &maps,
        &params,
        &a.model.inference(),
        &split_config(a.split, a.repeats, a.model.seed),
        a.mixture,
    )?;
    prepare_out(&a.out)?;
    write_json(
        &a.out.join("disambiguation.json"),
        &AccuracySummary::new(acc),
    )
}

fn classify_cmd(a: ClassifyArgs) -> Result<()> {
    let maps = read_topic_maps(&a.topic_maps, a.model.topics)?;
    let mut users = BTreeMap::new();
    for spec in &a.users {
        let (name, path) = spec.split_once('=').ok_or_else(|| {
            LtpError::InvalidParameter(format!("expected USER=PATH, got `{spec}`"))
        })?;
        if users
            .insert(name.to_string(), read_observations(Path::new(path))?)
            .is_some()
        {
            return Err(LtpError::InvalidParameter(format!(
                "user `{name}` given twice"
            )));
        }
    }
    if users.len() < 2 {
        return Err(LtpError::InvalidParameter(
            "classification needs at least two users".into(),
        ));
    }
    let acc = classification_experiment(
        &users,
        &maps,
        &a.model.params(),
        &a.model.inference(),
        &split_config(a.split, a.repeats, a.model.seed),
    )?;
    prepare_out(&a.out)?;
    write_json(
        &a.out.join("classification.json"),
        &AccuracySummary::new(acc),
    )
}

fn evidence_cmd(a: EvidenceArgs) -> Result<()> {
    let profile: Profile = read_json(&a.profile)?;
    let (obs, maps) = load(
        &a.observations,
        &a.topic_maps,
        Some(profile.eta_tilde.len()),
    )?;
    let evidence = extract_evidence(&obs, &profile.eta_tilde, &maps, a.top)?;
    prepare_out(&a.out)?;
    write_json(&a.out.join("evidence.json"), &evidence)
}

fn exit_code(err: &LtpError) -> u8 {
    match err.kind() {
        "file_not_found" => 3,
        "schema_violation" => 4,
        "topic_count_mismatch" => 5,
        "missing_topic_map" => 6,
        "invalid_parameter" => 7,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| LtpError::InvalidParameter(e.to_string()))?;
    }
    match cli.command {
        Command::FitTopics(a) => fit_topics_cmd(a),
        Command::Simulate(a) => simulate_cmd(a),
        Command::Learn(a) => learn_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Disambiguate(a) => disambiguate_cmd(a),
        Command::Classify(a) => classify_cmd(a),
        Command::Evidence(a) => evidence_cmd(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let record = serde_json::json!({
                "error": { "kind": err.kind(), "message": err.to_string() }
            });
            eprintln!("{record}");
            ExitCode::from(exit_code(&err))
        }
    }
}
