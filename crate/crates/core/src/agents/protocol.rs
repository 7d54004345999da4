use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::kg::Schema;
use crate::metapath::{format_metapath, MetaPathSchema};

use super::client::{ChatClient, ChatMessage};
use super::parse::{parse_response, ParsedPath};
use super::prompts::{propose_prompt, recommend_prompt, self_update_prompt, SYSTEM_PROMPT};
use super::AgentError;

/// Repair re-prompts allowed after the first answer.
pub const MAX_REPAIRS: usize = 3;

/// An indicator task as seen by its agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentTask {
    pub name: String,
    pub description: String,
}

impl AgentTask {
    pub fn new(name: &str, description: &str) -> Self {
        AgentTask {
            name: name.to_string(),
            description: description.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcceptedPath {
    pub path: MetaPathSchema,
    pub name: Option<String>,
    pub reason: Option<String>,
}

/// Kind and addressee of one agent call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AgentCall {
    Propose { task: String },
    SelfUpdate { task: String },
    Recommend { from: String, to: String },
}

impl AgentCall {
    /// Key used by mock fixtures and for transcript file names.
    pub fn key(&self) -> String {
        match self {
            AgentCall::Propose { task } => format!("propose/{task}"),
            AgentCall::SelfUpdate { task } => format!("self_update/{task}"),
            AgentCall::Recommend { from, to } => format!("recommend/{from}->{to}"),
        }
    }

    pub fn file_name(&self) -> String {
        match self {
            AgentCall::Propose { task } => format!("propose_{task}.txt"),
            AgentCall::SelfUpdate { task } => format!("self_update_{task}.txt"),
            AgentCall::Recommend { from, to } => format!("recommend_{from}_to_{to}.txt"),
        }
    }
}

/// Full record of one agent call: the prompt/response turns and the
/// accepted meta-paths.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentTranscript {
    pub call: AgentCall,
    pub mode: String,
    pub system: String,
    pub turns: Vec<(String, String)>,
    pub accepted: Vec<AcceptedPath>,
}

impl AgentTranscript {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "call: {}", self.call.key());
        let _ = writeln!(s, "mode: {}", self.mode);
        let _ = writeln!(s, "=== SYSTEM ===\n{}", self.system);
        for (k, (prompt, response)) in self.turns.iter().enumerate() {
            let _ = writeln!(s, "=== PROMPT {} ===\n{}", k + 1, prompt.trim_end());
            let _ = writeln!(s, "=== RESPONSE {} ===\n{}", k + 1, response.trim_end());
        }
        s.push_str("=== ACCEPTED ===\n");
        for a in &self.accepted {
            let _ = writeln!(s, "{}", format_metapath(&a.path));
            if let Some(r) = &a.reason {
                let _ = writeln!(s, "  reason: {r}");
            }
        }
        s
    }

    /// Final response texts, which suffice to replay parsing.
    pub fn responses(&self) -> impl Iterator<Item = &str> {
        self.turns.iter().map(|(_, r)| r.as_str())
    }
}

fn repair_prompt(problems: &[String], distinct: usize, n: usize) -> String {
    let mut s = String::from("Your answer cannot be used as it is.\n");
    for p in problems {
        let _ = writeln!(s, "- {p}");
    }
    if distinct < n {
        let _ = writeln!(
            s,
            "- only {distinct} distinct valid meta-paths were given; {n} are needed"
        );
    }
    let _ = write!(
        s,
        "Please answer again with exactly {n} valid meta-paths, one per line, each followed by its name and reason lines."
    );
    s
}

fn distinct_paths(paths: Vec<ParsedPath>) -> Vec<ParsedPath> {
    let mut out: Vec<ParsedPath> = Vec::new();
    for p in paths {
        if !out.iter().any(|q| q.path == p.path) {
            out.push(p);
        }
    }
    out
}

/// Runs one conversation until it yields `n` distinct valid meta-paths and
/// no invalid lines, re-prompting with the validation errors at most
/// [`MAX_REPAIRS`] times.
fn converse(
    client: &mut dyn ChatClient,
    schema: &Schema,
    call: AgentCall,
    prompt: String,
    n: usize,
) -> Result<AgentTranscript, AgentError> {
    let key = call.key();
    let mut transcript = AgentTranscript {
        call,
        mode: client.mode().to_string(),
        system: SYSTEM_PROMPT.to_string(),
        turns: Vec::new(),
        accepted: Vec::new(),
    };
    let mut messages = vec![
        ChatMessage::system(SYSTEM_PROMPT),
        ChatMessage::user(prompt.clone()),
    ];
    let mut next_prompt = prompt;
    for attempt in 0..=MAX_REPAIRS {
        let response = client.complete(&key, &messages)?;
        transcript
            .turns
            .push((next_prompt.clone(), response.clone()));
        let parsed = parse_response(&response, schema);
        let paths = distinct_paths(parsed.paths);
        if parsed.problems.is_empty() && paths.len() >= n {
            transcript.accepted = paths
                .into_iter()
                .take(n)
                .map(|p| AcceptedPath {
                    path: p.path,
                    name: p.name,
                    reason: p.reason,
                })
                .collect();
            return Ok(transcript);
        }
        if attempt == MAX_REPAIRS {
            let mut problems = parsed.problems;
            if paths.len() < n {
                problems.push(format!("{} of {n} meta-paths valid", paths.len()));
            }
            return Err(AgentError::Validation {
                call: key,
                attempts: attempt + 1,
                problems,
                transcript: Box::new(transcript),
            });
        }
        log::info!(
            "{key}: repairing answer {} ({} problems)",
            attempt + 1,
            parsed.problems.len()
        );
        next_prompt = repair_prompt(&parsed.problems, paths.len(), n);
        messages.push(ChatMessage::assistant(response));
        messages.push(ChatMessage::user(next_prompt.clone()));
    }
    unreachable!("loop returns on its last attempt")
}

fn accepted_paths(t: &AgentTranscript) -> Vec<MetaPathSchema> {
    t.accepted.iter().map(|a| a.path.clone()).collect()
}

/// Asks the agent of `task` for `n` meta-paths.
pub fn propose_metapaths(
    client: &mut dyn ChatClient,
    schema: &Schema,
    task: &AgentTask,
    n: usize,
) -> Result<(Vec<MetaPathSchema>, AgentTranscript), AgentError> {
    if n == 0 {
        return Err(AgentError::Precondition(
            "at least one meta-path must be requested".into(),
        ));
    }
    let prompt = propose_prompt(schema, &task.name, &task.description, n);
    let t = converse(
        client,
        schema,
        AgentCall::Propose {
            task: task.name.clone(),
        },
        prompt,
        n,
    )?;
    Ok((accepted_paths(&t), t))
}

fn all_block(
    all: &[(AgentTask, Vec<MetaPathSchema>)],
) -> Vec<(String, String, Vec<MetaPathSchema>)> {
    all.iter()
        .map(|(t, p)| (t.name.clone(), t.description.clone(), p.clone()))
        .collect()
}

/// Asks the agent of `task` to revise its own meta-paths in view of every
/// task's round-1 paths.
pub fn self_update(
    client: &mut dyn ChatClient,
    schema: &Schema,
    task: &AgentTask,
    own: &[MetaPathSchema],
    all: &[(AgentTask, Vec<MetaPathSchema>)],
    n: usize,
) -> Result<(Vec<MetaPathSchema>, AgentTranscript), AgentError> {
    if n == 0 {
        return Err(AgentError::Precondition(
            "at least one meta-path must be requested".into(),
        ));
    }
    let prompt = self_update_prompt(
        schema,
        &task.name,
        &task.description,
        own,
        &all_block(all),
        n,
    );
    let t = converse(
        client,
        schema,
        AgentCall::SelfUpdate {
            task: task.name.clone(),
        },
        prompt,
        n,
    )?;
    Ok((accepted_paths(&t), t))
}

/// One meta-path recommended by the agent of `from` to the task `to`.
pub fn recommend(
    client: &mut dyn ChatClient,
    schema: &Schema,
    from: &AgentTask,
    to: &AgentTask,
    all: &[(AgentTask, Vec<MetaPathSchema>)],
) -> Result<(MetaPathSchema, AgentTranscript), AgentError> {
    if from.name == to.name {
        return Err(AgentError::Precondition(format!(
            "task `{}` cannot recommend to itself",
            from.name
        )));
    }
    let prompt = recommend_prompt(
        schema,
        (&from.name, &from.description),
        (&to.name, &to.description),
        &all_block(all),
    );
    let call = AgentCall::Recommend {
        from: from.name.clone(),
        to: to.name.clone(),
    };
    let t = converse(client, schema, call, prompt, 1)?;
    Ok((t.accepted[0].path.clone(), t))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CommunicationFlags {
    pub no_self_update: bool,
    pub no_rec: bool,
}

/// Round-2 meta-path sets. Index `i` of every vector belongs to task `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundTwoPaths {
    pub self_updated: Vec<Vec<MetaPathSchema>>,
    /// `(recommending task, path)` pairs in task order.
    pub recommended: Vec<Vec<(String, MetaPathSchema)>>,
    /// Set sizes before deduplication.
    pub pre_dedup: Vec<usize>,
    /// Deduplicated sets: self-updates first, then recommendations.
    pub paths: Vec<Vec<MetaPathSchema>>,
    pub dedup_notes: Vec<Vec<String>>,
    pub transcripts: Vec<AgentTranscript>,
}

/// Self-update and recommendation exchange between the agents of `tasks`,
/// given their round-1 meta-paths. `clients[i]` is the agent of task `i`.
pub fn run_communication_round(
    clients: &mut [Box<dyn ChatClient>],
    schema: &Schema,
    tasks: &[AgentTask],
    round1: &[Vec<MetaPathSchema>],
    n_p: usize,
    flags: CommunicationFlags,
) -> Result<RoundTwoPaths, AgentError> {
    let n = tasks.len();
    if clients.len() != n || round1.len() != n {
        return Err(AgentError::Precondition(format!(
            "{n} tasks, {} clients and {} round-1 path sets",
            clients.len(),
            round1.len()
        )));
    }
    if flags.no_self_update && flags.no_rec {
        return Err(AgentError::Precondition(
            "both self-update and recommendation are disabled".into(),
        ));
    }
    if flags.no_self_update && n < 2 {
        return Err(AgentError::Precondition(
            "a single task without self-update has no round-2 meta-paths".into(),
        ));
    }
    let all: Vec<(AgentTask, Vec<MetaPathSchema>)> =
        tasks.iter().cloned().zip(round1.iter().cloned()).collect();
    let mut out = RoundTwoPaths {
        self_updated: vec![Vec::new(); n],
        recommended: vec![Vec::new(); n],
        pre_dedup: vec![0; n],
        paths: vec![Vec::new(); n],
        dedup_notes: vec![Vec::new(); n],
        transcripts: Vec::new(),
    };
    if !flags.no_self_update {
        for i in 0..n {
            let (p, t) = self_update(
                clients[i].as_mut(),
                schema,
                &tasks[i],
                &round1[i],
                &all,
                n_p,
            )?;
            out.self_updated[i] = p;
            out.transcripts.push(t);
        }
    }
    if !flags.no_rec {
        for j in 0..n {
            for i in (0..n).filter(|&i| i != j) {
                let (p, t) = recommend(clients[j].as_mut(), schema, &tasks[j], &tasks[i], &all)?;
                out.recommended[i].push((tasks[j].name.clone(), p));
                out.transcripts.push(t);
            }
        }
    }
    for i in 0..n {
        let mut set: Vec<MetaPathSchema> = Vec::new();
        let candidates = out.self_updated[i]
            .iter()
            .map(|p| ("self-update".to_string(), p))
            .chain(
                out.recommended[i]
                    .iter()
                    .map(|(from, p)| (format!("recommendation from {from}"), p)),
            );
        for (source, p) in candidates {
            out.pre_dedup[i] += 1;
            if set.contains(p) {
                let note = format!(
                    "{}: {source} `{}` already present; dropped",
                    tasks[i].name,
                    p.pattern()
                );
                log::info!("{note}");
                out.dedup_notes[i].push(note);
            } else {
                set.push(p.clone());
            }
        }
        out.paths[i] = set;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{MockClient, MockFixture};

    fn schema() -> Schema {
        Schema::default_lbkg()
    }

    fn task(name: &str) -> AgentTask {
        AgentTask::new(name, name)
    }

    #[test]
    fn propose_passes_mock_paths_through() {
        let f = MockFixture::default().with(
            "propose/t",
            &["Region -[Has]-> POI\nname: a\nreason: r\nRegion -[NearBy]-> Region\nRegion -[BorderBy]-> Region\n"],
        );
        let mut c = MockClient::new(f);
        let (paths, t) = propose_metapaths(&mut c, &schema(), &task("t"), 3).unwrap();
        let pats: Vec<String> = paths.iter().map(|p| p.pattern()).collect();
        assert_eq!(
            pats,
            [
                "Region -[Has]-> POI",
                "Region -[NearBy]-> Region",
                "Region -[BorderBy]-> Region"
            ]
        );
        assert_eq!(t.turns.len(), 1);
        assert_eq!(t.accepted[0].reason.as_deref(), Some("r"));
        assert!(t.to_text().contains("=== RESPONSE 1 ==="));
    }

    #[test]
    fn invalid_line_triggers_one_repair() {
        let f = MockFixture::default().with(
            "propose/t",
            &[
                "Region -[Has]-> POI\nRegion -[Has]-> Brand\nRegion -[NearBy]-> Region\n",
                "Region -[Has]-> POI\nRegion -[HasStoreOf]-> Brand\nRegion -[NearBy]-> Region\n",
            ],
        );
        let mut c = MockClient::new(f);
        let (paths, t) = propose_metapaths(&mut c, &schema(), &task("t"), 3).unwrap();
        assert_eq!(paths.len(), 3);
        assert_eq!(t.turns.len(), 2);
        assert!(t.turns[1].0.contains("Region -[Has]-> Brand"));
    }

    #[test]
    fn failing_repairs_return_transcript() {
        let bad = "Region -[Nope]-> POI";
        let f = MockFixture::default().with("propose/t", &[bad, bad, bad, bad]);
        let mut c = MockClient::new(f);
        match propose_metapaths(&mut c, &schema(), &task("t"), 1) {
            Err(AgentError::Validation {
                attempts,
                transcript,
                ..
            }) => {
                assert_eq!(attempts, MAX_REPAIRS + 1);
                assert_eq!(transcript.turns.len(), MAX_REPAIRS + 1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn recommending_to_self_is_rejected() {
        let mut c = MockClient::new(MockFixture::default());
        let r = recommend(&mut c, &schema(), &task("a"), &task("a"), &[]);
        assert!(matches!(r, Err(AgentError::Precondition(_))));
    }

    #[test]
    fn duplicate_recommendation_is_dropped() {
        let f = MockFixture::default()
            .with(
                "self_update/a",
                &["Region -[Has]-> POI\nRegion -[NearBy]-> Region\n"],
            )
            .with(
                "self_update/b",
                &["Region -[BorderBy]-> Region\nRegion -[NearBy]-> Region\n"],
            )
            .with("recommend/a->b", &["Region -[Has]-> POI\n"])
            .with("recommend/b->a", &["Region -[NearBy]-> Region\n"]);
        let mut clients: Vec<Box<dyn ChatClient>> = vec![
            Box::new(MockClient::new(f.clone())),
            Box::new(MockClient::new(f)),
        ];
        let tasks = [task("a"), task("b")];
        let r1 = vec![vec![], vec![]];
        let r = run_communication_round(
            &mut clients,
            &schema(),
            &tasks,
            &r1,
            2,
            CommunicationFlags::default(),
        )
        .unwrap();
        assert_eq!(r.pre_dedup, vec![3, 3]);
        assert_eq!(r.paths[0].len(), 2);
        assert_eq!(r.dedup_notes[0].len(), 1);
        assert_eq!(r.paths[1].len(), 3);
        assert_eq!(r.transcripts.len(), 4);
    }
}
