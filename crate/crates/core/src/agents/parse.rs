use crate::kg::Schema;
use crate::metapath::{parse_metapath, MetaPathSchema};

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedPath {
    pub path: MetaPathSchema,
    pub name: Option<String>,
    pub reason: Option<String>,
}

/// Everything extracted from one response. `problems` holds one message per
/// meta-path line that failed to parse or validate.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedResponse {
    pub paths: Vec<ParsedPath>,
    pub problems: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Field {
    Name,
    Reason,
}

fn strip_decoration(line: &str) -> &str {
    let mut s = line.trim().trim_matches('`').trim();
    loop {
        let before = s;
        s = s.trim_start_matches(['-', '*', '•', '>']).trim_start();
        let digits = s.len() - s.trim_start_matches(|c: char| c.is_ascii_digit()).len();
        if digits > 0 && s[digits..].starts_with(['.', ')']) {
            s = s[digits + 1..].trim_start();
        }
        if s == before {
            return s.trim_matches('*').trim();
        }
    }
}

fn field(line: &str) -> Option<(Field, String)> {
    let s = strip_decoration(line);
    let (key, rest) = s.split_once(':')?;
    let key = key.trim().trim_matches('*').trim().to_ascii_lowercase();
    let value = rest.trim().trim_matches('*').trim().to_string();
    match key.as_str() {
        "name" => Some((Field::Name, value)),
        "reason" => Some((Field::Reason, value)),
        _ => None,
    }
}

/// The meta-path text of a line, if it looks like one. Leading prose up to a
/// colon (as in `Meta-path 1: Region -[...`) is dropped.
fn dsl_text(line: &str) -> Option<&str> {
    let first = line.find("-[")?;
    line[first..].find("]->")?;
    let s = strip_decoration(line);
    let first = s.find("-[")?;
    let s = match s[..first].rfind(':') {
        Some(c) => &s[c + 1..],
        None => s,
    };
    Some(s.trim_matches(|c: char| c == '`' || c == '*' || c.is_whitespace()))
}

/// Extracts meta-paths with their `name:` and `reason:` lines from free text.
/// Pure function of the response text.
pub fn parse_response(text: &str, schema: &Schema) -> ParsedResponse {
    let mut out = ParsedResponse::default();
    let mut last_valid = false;
    for (k, raw) in text.lines().enumerate() {
        if raw.trim_start().starts_with("```") {
            continue;
        }
        if let Some(dsl) = dsl_text(raw) {
            match parse_metapath(dsl, schema) {
                Ok(path) => {
                    out.paths.push(ParsedPath {
                        path,
                        name: None,
                        reason: None,
                    });
                    last_valid = true;
                }
                Err(e) => {
                    out.problems.push(format!("line {} `{}`: {e}", k + 1, dsl));
                    last_valid = false;
                }
            }
            continue;
        }
        if let (true, Some((f, value))) = (last_valid, field(raw)) {
            let p = out.paths.last_mut().expect("a valid path precedes");
            match f {
                Field::Name => {
                    p.path = p.path.clone().with_label(value.clone());
                    p.name = Some(value);
                }
                Field::Reason => p.reason = Some(value),
            }
        }
    }
    out
}
