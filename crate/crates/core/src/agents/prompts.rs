use std::fmt::Write as _;

use crate::kg::Schema;
use crate::metapath::MetaPathSchema;

pub const SYSTEM_PROMPT: &str =
    "You are an urban computing expert who reasons about location-based knowledge graphs \
and the socioeconomic indicators of urban regions.";

const FORMAT_RULES: &str = "Answer format: write every meta-path on its own line in exactly this form, \
starting from Region:\n\
Region -[RelationName]-> EntityType -[RelationName]-> EntityType\n\
Directly below each meta-path, add a line `name: <short name>` and a line `reason: <why it helps>`. \
Use only the relations listed above and make sure the tail type of each relation is the head type of the next.";

/// Natural-language description of the knowledge graph schema: entity types
/// followed by one line per relation in schema order.
pub fn render_schema_prompt(schema: &Schema) -> String {
    let mut s = String::from(
        "The location-based knowledge graph (LBKG) describes an urban area with the following entity types:\n",
    );
    for t in schema.entity_types() {
        let _ = writeln!(s, "- {t}");
    }
    let _ = writeln!(
        s,
        "It contains {} relations, written as (head type, relation, tail type):",
        schema.len()
    );
    for r in schema.relations() {
        let _ = write!(s, "- ({}, {}, {})", r.head, r.name, r.tail);
        if let Some(m) = &r.meaning {
            let _ = write!(s, ": {m}");
        }
        s.push('\n');
    }
    s.push_str(
        "A meta-path is a sequence of relations starting from a Region, and its instances connect the region \
to related entities in the graph.\n",
    );
    s
}

fn path_block(s: &mut String, paths: &[MetaPathSchema]) {
    for p in paths {
        let _ = writeln!(s, "  {}", p.pattern());
    }
}

fn all_tasks_block(s: &mut String, all: &[(String, String, Vec<MetaPathSchema>)]) {
    for (task, desc, paths) in all {
        let _ = writeln!(s, "Task `{task}` ({desc}):");
        path_block(s, paths);
    }
}

pub fn propose_prompt(schema: &Schema, task: &str, description: &str, n: usize) -> String {
    let mut s = render_schema_prompt(schema);
    let _ = write!(
        s,
        "\nTask `{task}`: predict {description} for each region.\n\
Find {n} meta-paths in the LBKG whose instances carry knowledge relevant to this prediction task. \
Name each meta-path and provide reasons.\n\n{FORMAT_RULES}\n"
    );
    s
}

/// `all` lists every task's name, description and round-1 meta-paths.
pub fn self_update_prompt(
    schema: &Schema,
    task: &str,
    description: &str,
    own: &[MetaPathSchema],
    all: &[(String, String, Vec<MetaPathSchema>)],
    n: usize,
) -> String {
    let mut s = render_schema_prompt(schema);
    let _ = writeln!(
        s,
        "\nYou are the agent for task `{task}`: predict {description} for each region."
    );
    s.push_str("Your previous meta-paths are:\n");
    path_block(&mut s, own);
    s.push_str("The meta-paths found by the agents of all tasks are:\n");
    all_tasks_block(&mut s, all);
    let _ = write!(
        s,
        "Update your own {n} meta-paths based on those from the other tasks. You may keep previous ones. \
Name each meta-path and provide reasons.\n\n{FORMAT_RULES}\n"
    );
    s
}

pub fn recommend_prompt(
    schema: &Schema,
    from: (&str, &str),
    to: (&str, &str),
    all: &[(String, String, Vec<MetaPathSchema>)],
) -> String {
    let mut s = render_schema_prompt(schema);
    let _ = writeln!(
        s,
        "\nYou are the agent for task `{}`: predict {} for each region.",
        from.0, from.1
    );
    s.push_str("The meta-paths found by the agents of all tasks are:\n");
    all_tasks_block(&mut s, all);
    let _ = write!(
        s,
        "Recommend one new meta-path to the agent of task `{}` ({}) from the perspective of your own task. \
First think step by step about how {} relates to {} and write down the detailed thinking process. \
Then give the meta-path, its name and the reason.\n\n{FORMAT_RULES}\n",
        to.0, to.1, from.1, to.1
    );
    s
}
