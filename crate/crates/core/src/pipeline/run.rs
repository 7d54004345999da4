use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::agents::{
    propose_metapaths, run_communication_round, AgentTask, AgentTranscript, ChatClient,
    CommunicationFlags, MockClient, MockFixture, RemoteChatConfig, RemoteClient,
};
use crate::dataio::Metrics;
use crate::fusion::{EmbedMode, EmbeddingProvider};
use crate::metapath::{format_metapath, parse_metapath_list, MetaPathSchema};
use crate::model::{
    train_round2_task, train_single, SlakConfig, TaskContext, TaskTargets, TrainOutcome,
};
use crate::numerics::{save_checkpoint, Tensor};
use crate::search::{genetic_search, model_fitness, random_search, SearchResult};
use crate::util::{sha256_hex, stage_seed};
use crate::{Error, Result};

use super::{Dataset, ExperimentConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.tsv";
pub const METAPATHS_FILE: &str = "metapaths.txt";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const ATTENTION_FILE: &str = "attention.tsv";
pub const TASK_ATTENTION_FILE: &str = "task_attention.tsv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const HISTORY_FILE: &str = "history.tsv";
pub const COMMUNICATION_FILE: &str = "communication.json";
pub const FIXTURE_SNAPSHOT: &str = "agents_fixture.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Round {
    One,
    Two,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchAlgo {
    Genetic,
    Random,
}

/// Where agent answers come from.
#[derive(Debug, Clone)]
pub enum ChatSetup {
    Mock(MockFixture),
    Remote(RemoteChatConfig),
}

impl ChatSetup {
    fn client(&self) -> Box<dyn ChatClient> {
        match self {
            ChatSetup::Mock(f) => Box::new(MockClient::new(f.clone())),
            ChatSetup::Remote(c) => Box::new(RemoteClient { config: c.clone() }),
        }
    }

    fn mode(&self) -> &'static str {
        match self {
            ChatSetup::Mock(_) => "mock",
            ChatSetup::Remote(_) => "remote",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    pub chat: ChatSetup,
    pub embed: EmbedMode,
    /// Ablation flags switched on in addition to the config's.
    pub ablations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataRecord {
    pub dir: String,
    pub schema_hash: String,
    pub kg_hash: String,
    pub indicators_hash: String,
    pub num_entities: usize,
    pub num_facts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub indicator: String,
    pub metapaths: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pre_dedup: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dedup_notes: Vec<String>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub val_r2: f64,
    pub test_r2: f64,
    pub metrics_sha256: String,
    pub train_ms: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub ablations: Vec<String>,
    pub model: SlakConfig,
    pub chat_mode: String,
    pub embed_mode: String,
    pub transcripts: Vec<String>,
    pub tasks: Vec<TaskRecord>,
    pub agents_ms: u128,
    pub train_ms: u128,
}

/// Everything needed to replay a run: the config snapshot, derived seeds,
/// data hashes, provider modes and per-round records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub stage_seeds: BTreeMap<String, u64>,
    pub data: DataRecord,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mock_fixture_sha256: Option<String>,
    pub rounds: BTreeMap<String, RoundRecord>,
}

impl RunManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

/// Runs `f` over `items` on up to `workers` threads; results keep input order.
fn parallel_map<T: Send, R: Send>(
    items: Vec<T>,
    workers: usize,
    f: impl Fn(T) -> R + Sync,
) -> Vec<R> {
    let n = items.len();
    let queue = Mutex::new(items.into_iter().enumerate().collect::<VecDeque<_>>());
    let results: Mutex<Vec<Option<R>>> = Mutex::new((0..n).map(|_| None).collect());
    thread::scope(|s| {
        for _ in 0..workers.clamp(1, n.max(1)) {
            s.spawn(|| loop {
                let next = queue.lock().unwrap().pop_front();
                let Some((i, item)) = next else { break };
                let r = f(item);
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every item ran"))
        .collect()
}

/// Region embeddings as `region_id<TAB>values`, one row per region.
pub fn write_embeddings(path: &Path, regions: &[String], e: &Tensor<f64>) -> Result<()> {
    let mut s = String::from("region_id");
    for k in 0..e.cols() {
        let _ = write!(s, "\te{k}");
    }
    s.push('\n');
    for (i, r) in regions.iter().enumerate() {
        s.push_str(r);
        for v in e.row(i) {
            let _ = write!(s, "\t{v}");
        }
        s.push('\n');
    }
    write(path, s)
}

/// Reads an embedding file, checking that its rows follow `regions`.
pub fn read_embeddings(path: &Path, regions: &[String]) -> Result<Tensor<f64>> {
    let text = fs::read_to_string(path)
        .map_err(|_| Error::MissingArtifact(format!("round-1 embeddings {}", path.display())))?;
    let bad = |m: String| Error::Config(format!("{}: {m}", path.display()));
    let mut rows = Vec::new();
    for (k, line) in text.lines().skip(1).enumerate() {
        let mut cols = line.split('\t');
        let id = cols.next().unwrap_or_default();
        if regions.get(k).map(String::as_str) != Some(id) {
            return Err(bad(format!(
                "row {} is `{id}`, expected region order of the dataset",
                k + 1
            )));
        }
        let vals = cols
            .map(|v| v.parse::<f64>().map_err(|e| bad(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        rows.push(vals);
    }
    if rows.len() != regions.len() {
        return Err(bad(format!(
            "{} rows for {} regions",
            rows.len(),
            regions.len()
        )));
    }
    Ok(Tensor::from_rows(&rows))
}

fn metrics_value(m: &Metrics<f64>) -> serde_json::Value {
    serde_json::json!({ "mae": m.mae, "rmse": m.rmse, "r2": m.r2 })
}

fn column_means(t: &Tensor<f64>) -> Vec<f64> {
    (0..t.cols())
        .map(|c| (0..t.rows()).map(|r| t.get(r, c)).sum::<f64>() / t.rows() as f64)
        .collect()
}

fn split_label(targets: &TaskTargets) -> Vec<&'static str> {
    let mut labels = vec![""; targets.values.len()];
    for (rows, name) in [
        (&targets.split.train, "train"),
        (&targets.split.val, "val"),
        (&targets.split.test, "test"),
    ] {
        for &i in rows {
            labels[i] = name;
        }
    }
    labels
}

fn attention_tsv(
    regions: &[String],
    header: &[String],
    alpha: &Tensor<f64>,
    comments: &[String],
) -> String {
    let mut s = String::new();
    for c in comments {
        let _ = writeln!(s, "# {c}");
    }
    s.push_str("region_id");
    for h in header {
        let _ = write!(s, "\t{h}");
    }
    s.push('\n');
    for (i, r) in regions.iter().enumerate() {
        s.push_str(r);
        for v in alpha.row(i) {
            let _ = write!(s, "\t{v}");
        }
        s.push('\n');
    }
    s
}

/// Writes the per-task artifacts of one round and returns the hash of the
/// metrics file.
fn write_task(
    dir: &Path,
    round: usize,
    ablations: &[String],
    paths_text: &str,
    out: &TrainOutcome,
    targets: &TaskTargets,
    others: Option<&[String]>,
) -> Result<String> {
    write(&dir.join(METAPATHS_FILE), paths_text)?;
    save_checkpoint(&out.params, dir.join(CHECKPOINT_FILE))?;
    write_embeddings(
        &dir.join(EMBEDDINGS_FILE),
        &targets.regions,
        out.embeddings(),
    )?;

    let labels = split_label(targets);
    let mut pred = String::from("region_id,split,truth,prediction\n");
    for (i, r) in targets.regions.iter().enumerate() {
        let _ = writeln!(
            pred,
            "{r},{},{},{}",
            labels[i], targets.values[i], out.predictions[i]
        );
    }
    write(&dir.join(PREDICTIONS_FILE), pred)?;

    let mut hist = String::from("epoch\ttrain_mse\tval_mse\n");
    for h in &out.history {
        let _ = writeln!(hist, "{}\t{}\t{}", h.epoch, h.train_mse, h.val_mse);
    }
    write(&dir.join(HISTORY_FILE), hist)?;

    let mp_names: Vec<String> = (1..=out.model.subs.len())
        .map(|k| format!("mp{k}"))
        .collect();
    let mp_patterns: Vec<String> = paths_text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect();
    let comments: Vec<String> = mp_names
        .iter()
        .zip(&mp_patterns)
        .map(|(n, p)| format!("{n} = {p}"))
        .collect();
    write(
        &dir.join(ATTENTION_FILE),
        attention_tsv(
            &targets.regions,
            &mp_names,
            &out.best.metapath_alpha,
            &comments,
        ),
    )?;
    let task_att = match (&out.best.task_alpha, others) {
        (Some(a), Some(names)) => {
            write(
                &dir.join(TASK_ATTENTION_FILE),
                attention_tsv(&targets.regions, names, a, &[]),
            )?;
            let means = column_means(a);
            serde_json::Value::Object(
                names
                    .iter()
                    .cloned()
                    .zip(means.into_iter().map(serde_json::Value::from))
                    .collect(),
            )
        }
        _ => serde_json::Value::Null,
    };
    let record = serde_json::json!({
        "indicator": out.indicator,
        "round": round,
        "ablations": ablations,
        "metapaths": mp_patterns,
        "best_epoch": out.best_epoch,
        "epochs_run": out.epochs_run,
        "best_val_mse": out.best_val_mse(),
        "transform": out.transform,
        "train": metrics_value(&out.metrics.train),
        "val": metrics_value(&out.metrics.val),
        "test": metrics_value(&out.metrics.test),
        "mean_metapath_attention": column_means(&out.best.metapath_alpha),
        "mean_task_attention": task_att,
    });
    let text = json(&record);
    write(&dir.join(METRICS_FILE), &text)?;
    Ok(sha256_hex(text.as_bytes()))
}

fn agent_tasks(config: &ExperimentConfig) -> Vec<AgentTask> {
    config
        .tasks
        .iter()
        .map(|t| AgentTask::new(&t.indicator, &t.description))
        .collect()
}

fn save_transcripts(dir: &Path, ts: &[AgentTranscript]) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for t in ts {
        let name = t.call.file_name();
        write(&dir.join(&name), t.to_text())?;
        names.push(name);
    }
    Ok(names)
}

fn effective_model(config: &ExperimentConfig, ablations: &[String]) -> Result<SlakConfig> {
    let mut m = config.model.clone();
    for a in ablations {
        m.set_ablation(a)?;
    }
    m.validate()?;
    Ok(m)
}

fn targets_for(config: &ExperimentConfig, data: &Dataset) -> Result<Vec<TaskTargets>> {
    let spec = config.split_spec();
    config
        .tasks
        .iter()
        .map(|t| {
            Ok(TaskTargets::from_table(
                &data.kg,
                &data.table,
                &t.indicator,
                &spec,
            )?)
        })
        .collect()
}

fn new_manifest(config: &ExperimentConfig, data: &Dataset, opts: &RunOptions) -> RunManifest {
    let seed = config.model.seed;
    let stages = [
        "split",
        "init/emb",
        "init/emb/types",
        "init/global",
        "init/attn_mp",
        "init/attn_task",
        "init/mlp",
    ];
    RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        seed,
        stage_seeds: stages
            .iter()
            .map(|s| (s.to_string(), stage_seed(seed, s)))
            .collect(),
        data: DataRecord {
            dir: data.dir.display().to_string(),
            schema_hash: data.kg.schema().content_hash(),
            kg_hash: data.kg.content_hash(),
            indicators_hash: data.indicators_hash.clone(),
            num_entities: data.kg.num_entities(),
            num_facts: data.kg.num_facts(),
        },
        mock_fixture_sha256: match &opts.chat {
            ChatSetup::Mock(f) => Some(sha256_hex(json(f).as_bytes())),
            ChatSetup::Remote(_) => None,
        },
        rounds: BTreeMap::new(),
    }
}

fn load_or_new_manifest(
    config: &ExperimentConfig,
    data: &Dataset,
    opts: &RunOptions,
) -> Result<RunManifest> {
    let p = opts.out.join(MANIFEST_FILE);
    if p.exists() {
        let mut m = RunManifest::load(&p)?;
        if m.data.kg_hash != data.kg.content_hash() {
            return Err(Error::Config(format!(
                "{} was produced from a different knowledge graph",
                p.display()
            )));
        }
        m.config = config.clone();
        Ok(m)
    } else {
        Ok(new_manifest(config, data, opts))
    }
}

fn save_manifest(opts: &RunOptions, m: &RunManifest) -> Result<()> {
    if let ChatSetup::Mock(f) = &opts.chat {
        write(&opts.out.join(FIXTURE_SNAPSHOT), json(f))?;
    }
    write(&opts.out.join(MANIFEST_FILE), json(m))
}

fn reset_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Round 1: each task's agent proposes `N_P` meta-paths and a single-task
/// model is trained per task.
pub fn run_round1(
    config: &ExperimentConfig,
    data: &Dataset,
    opts: &RunOptions,
) -> Result<RoundRecord> {
    config.validate()?;
    let model = effective_model(config, &opts.ablations)?;
    let dir = opts.out.join("round1");
    reset_dir(&dir)?;
    let schema = data.kg.schema();
    let tasks = agent_tasks(config);

    let t0 = Instant::now();
    let mut paths = Vec::new();
    let mut transcripts = Vec::new();
    for t in &tasks {
        let mut client = opts.chat.client();
        let (p, tr) = propose_metapaths(client.as_mut(), schema, t, model.n_p)?;
        paths.push(p);
        transcripts.push(tr);
    }
    let names = save_transcripts(&dir.join("transcripts"), &transcripts)?;
    let agents_ms = t0.elapsed().as_millis();

    let targets = targets_for(config, data)?;
    let provider = EmbeddingProvider::new(opts.embed.clone(), None);
    let ablations = model
        .active_ablations()
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>();
    let t1 = Instant::now();
    let jobs: Vec<usize> = (0..tasks.len()).collect();
    let results = parallel_map(jobs, config.workers(), |i| -> Result<TaskRecord> {
        let start = Instant::now();
        let spec = &config.tasks[i];
        let ctx = TaskContext::new(&spec.indicator, &spec.description, paths[i].clone());
        log::info!(
            "round 1: training `{}` on {} meta-paths",
            spec.indicator,
            paths[i].len()
        );
        let out = train_single(&ctx, &data.kg, &targets[i], &model, &provider)?;
        let text: String = paths[i].iter().map(|p| format_metapath(p) + "\n").collect();
        let sha = write_task(
            &dir.join(&spec.indicator),
            1,
            &ablations,
            &text,
            &out,
            &targets[i],
            None,
        )?;
        Ok(TaskRecord {
            indicator: spec.indicator.clone(),
            metapaths: paths[i].iter().map(MetaPathSchema::pattern).collect(),
            pre_dedup: None,
            dedup_notes: Vec::new(),
            best_epoch: out.best_epoch,
            epochs_run: out.epochs_run,
            val_r2: out.metrics.val.r2,
            test_r2: out.metrics.test.r2,
            metrics_sha256: sha,
            train_ms: start.elapsed().as_millis(),
        })
    });
    Ok(RoundRecord {
        ablations,
        model,
        chat_mode: opts.chat.mode().to_string(),
        embed_mode: opts.embed.name().to_string(),
        transcripts: names,
        tasks: results.into_iter().collect::<Result<_>>()?,
        agents_ms,
        train_ms: t1.elapsed().as_millis(),
    })
}

/// Round 2: agents self-update and exchange recommendations over the saved
/// round-1 meta-paths, then every task retrains on its new set while fusing
/// the round-1 region embeddings of the other tasks.
pub fn run_round2(
    config: &ExperimentConfig,
    data: &Dataset,
    opts: &RunOptions,
) -> Result<RoundRecord> {
    config.validate()?;
    let model = effective_model(config, &opts.ablations)?;
    let schema = data.kg.schema();
    let r1 = opts.out.join("round1");
    let regions = data.kg.region_ids();
    let mut round1_paths = Vec::new();
    let mut saved = Vec::new();
    for t in &config.tasks {
        let p = r1.join(&t.indicator).join(METAPATHS_FILE);
        let text = fs::read_to_string(&p)
            .map_err(|_| Error::MissingArtifact(format!("round-1 meta-paths {}", p.display())))?;
        round1_paths.push(parse_metapath_list(&text, schema)?);
        saved.push(read_embeddings(
            &r1.join(&t.indicator).join(EMBEDDINGS_FILE),
            &regions,
        )?);
    }
    let dir = opts.out.join("round2");
    reset_dir(&dir)?;

    let t0 = Instant::now();
    let tasks = agent_tasks(config);
    let mut clients: Vec<Box<dyn ChatClient>> = tasks.iter().map(|_| opts.chat.client()).collect();
    let flags = CommunicationFlags {
        no_self_update: model.no_self_update,
        no_rec: model.no_rec,
    };
    let comm = run_communication_round(
        &mut clients,
        schema,
        &tasks,
        &round1_paths,
        model.n_p,
        flags,
    )?;
    let names = save_transcripts(&dir.join("transcripts"), &comm.transcripts)?;
    let comm_record: Vec<serde_json::Value> = (0..tasks.len())
        .map(|i| {
            serde_json::json!({
                "task": tasks[i].name,
                "self_update": comm.self_updated[i].iter().map(MetaPathSchema::pattern).collect::<Vec<_>>(),
                "recommended": comm.recommended[i].iter().map(|(f, p)| serde_json::json!({"from": f, "path": p.pattern()})).collect::<Vec<_>>(),
                "pre_dedup": comm.pre_dedup[i],
                "final": comm.paths[i].iter().map(MetaPathSchema::pattern).collect::<Vec<_>>(),
                "dedup_notes": comm.dedup_notes[i],
            })
        })
        .collect();
    write(&dir.join(COMMUNICATION_FILE), json(&comm_record))?;
    let agents_ms = t0.elapsed().as_millis();

    let contexts: Vec<TaskContext> = config
        .tasks
        .iter()
        .zip(saved)
        .zip(&comm.paths)
        .map(|((t, e), p)| {
            let mut c = TaskContext::new(&t.indicator, &t.description, p.clone());
            c.saved_embeddings = Some(e);
            c
        })
        .collect();
    let targets = targets_for(config, data)?;
    let provider = EmbeddingProvider::new(opts.embed.clone(), None);
    let ablations = model
        .active_ablations()
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>();
    let t1 = Instant::now();
    let jobs: Vec<usize> = (0..tasks.len()).collect();
    let results = parallel_map(jobs, config.workers(), |i| -> Result<TaskRecord> {
        let start = Instant::now();
        let name = &contexts[i].indicator;
        log::info!(
            "round 2: training `{name}` on {} meta-paths",
            contexts[i].metapaths.len()
        );
        let out = train_round2_task(&contexts, i, &data.kg, &targets[i], &model, &provider)?;
        let mut text = String::new();
        for note in &comm.dedup_notes[i] {
            let _ = writeln!(text, "# {note}");
        }
        for p in &contexts[i].metapaths {
            text.push_str(&format_metapath(p));
            text.push('\n');
        }
        let others: Vec<String> = contexts
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, c)| c.indicator.clone())
            .collect();
        let sha = write_task(
            &dir.join(name),
            2,
            &ablations,
            &text,
            &out,
            &targets[i],
            Some(&others),
        )?;
        Ok(TaskRecord {
            indicator: name.clone(),
            metapaths: contexts[i]
                .metapaths
                .iter()
                .map(MetaPathSchema::pattern)
                .collect(),
            pre_dedup: Some(comm.pre_dedup[i]),
            dedup_notes: comm.dedup_notes[i].clone(),
            best_epoch: out.best_epoch,
            epochs_run: out.epochs_run,
            val_r2: out.metrics.val.r2,
            test_r2: out.metrics.test.r2,
            metrics_sha256: sha,
            train_ms: start.elapsed().as_millis(),
        })
    });
    Ok(RoundRecord {
        ablations,
        model,
        chat_mode: opts.chat.mode().to_string(),
        embed_mode: opts.embed.name().to_string(),
        transcripts: names,
        tasks: results.into_iter().collect::<Result<_>>()?,
        agents_ms,
        train_ms: t1.elapsed().as_millis(),
    })
}

/// Runs the requested rounds and records them in the run manifest. A
/// finished round stays recorded if a later one fails.
pub fn run_experiment(
    config: &ExperimentConfig,
    data: &Dataset,
    opts: &RunOptions,
    round: Round,
) -> Result<RunManifest> {
    fs::create_dir_all(&opts.out).map_err(|e| Error::io(&opts.out, e))?;
    let mut manifest = match round {
        Round::Two => load_or_new_manifest(config, data, opts)?,
        _ => new_manifest(config, data, opts),
    };
    write(&opts.out.join("config.toml"), config.to_toml_string())?;
    if matches!(round, Round::One | Round::All) {
        manifest.rounds.remove("round2");
        let r = run_round1(config, data, opts)?;
        manifest.rounds.insert("round1".into(), r);
        save_manifest(opts, &manifest)?;
    }
    if matches!(round, Round::Two | Round::All) {
        let r = run_round2(config, data, opts)?;
        manifest.rounds.insert("round2".into(), r);
        save_manifest(opts, &manifest)?;
    }
    Ok(manifest)
}

/// Runs a meta-path search baseline and writes the evaluation history and
/// the best individual into `out`.
pub fn run_search(
    config: &ExperimentConfig,
    data: &Dataset,
    algo: SearchAlgo,
    embed: EmbedMode,
    out: &Path,
) -> Result<SearchResult> {
    config.validate()?;
    let spec = match &config.search.indicator {
        Some(ind) => config
            .tasks
            .iter()
            .find(|t| &t.indicator == ind)
            .expect("validated"),
        None => &config.tasks[0],
    };
    let targets =
        TaskTargets::from_table(&data.kg, &data.table, &spec.indicator, &config.split_spec())?;
    let provider = EmbeddingProvider::new(embed, None);
    let fitness = model_fitness(
        &data.kg,
        &targets,
        &config.model,
        &provider,
        &spec.indicator,
        &spec.description,
    );
    let schema = data.kg.schema();
    let (result, tag) = match algo {
        SearchAlgo::Genetic => {
            let mut ga = config.search.ga.clone();
            ga.seed = config.model.seed;
            (genetic_search(&ga, schema, fitness)?, "ga")
        }
        SearchAlgo::Random => (
            random_search(
                config.search.iterations,
                config.search.per_iter,
                config.model.seed,
                schema,
                fitness,
            )?,
            "random",
        ),
    };
    write(
        &out.join(format!("{tag}_history.tsv")),
        result.history.to_tsv(),
    )?;
    let mut best = format!(
        "# indicator: {}\n# validation R2: {}\n# evaluations: {}\n",
        spec.indicator,
        result.best_fitness,
        result.history.evaluations.len()
    );
    for g in result.best.genes() {
        best.push_str(&g.pattern());
        best.push('\n');
    }
    write(&out.join(format!("{tag}_best.txt")), best)?;
    Ok(result)
}
