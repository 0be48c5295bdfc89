//! Parsing of structured agent output.
//!
//! Surrounding chatter is tolerated line by line, but the function-call
//! grammar itself is strict:
//!
//! ```text
//! call    := ident '(' [arg (',' arg)*] ')'
//! arg     := ident '=' string
//! string  := '"' (escape | any char except '"' and '\')* '"'
//! escape  := '\"' | '\\'
//! ```

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::AgentAction;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("missing stage tag [{0}]")]
    MissingTag(String),
    #[error("stage tag [{0}] appears more than once")]
    DuplicateTag(String),
    #[error("stage tag [{0}] has no text")]
    EmptyStage(String),
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("missing argument `{0}`")]
    MissingArgument(String),
    #[error("unexpected argument `{0}`")]
    UnexpectedArgument(String),
    #[error("argument `{0}` given twice")]
    DuplicateArgument(String),
    #[error("unterminated string literal")]
    UnterminatedString,
    #[error("trailing text after call: `{0}`")]
    TrailingGarbage(String),
    #[error("syntax error at byte {pos}: expected {expected}")]
    Syntax { pos: usize, expected: &'static str },
    #[error("content must not be empty")]
    EmptyContent,
    #[error("no [OPTION n] marker found")]
    NoOptionMarker,
    #[error("more than one [OPTION n] marker found")]
    MultipleOptionMarkers,
    #[error("option number {0} outside 1..=4")]
    OptionOutOfRange(u64),
    #[error("no `Thought:` section after the option marker")]
    MissingThought,
    #[error("no `Action:` section after the thought")]
    MissingAction,
    #[error("no rating found")]
    NoRating,
    #[error("rating {0} outside 1..=5")]
    OutOfRange(i64),
    #[error("response contains conflicting ratings")]
    Ambiguous,
}

/// Which stage-tag vocabulary a response uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagDialect {
    /// `[Cue] [Interpret] [Goal] [Retrieve] [Evaluate]`
    SipTags,
    /// `[Info] [Interpret] [Goal] [Plan] [Check]`
    MicroTags,
}

impl TagDialect {
    /// Tags in field order: cue, interpret, goal, retrieve, evaluate.
    pub fn tags(self) -> [&'static str; 5] {
        match self {
            TagDialect::SipTags => ["Cue", "Interpret", "Goal", "Retrieve", "Evaluate"],
            TagDialect::MicroTags => ["Info", "Interpret", "Goal", "Plan", "Check"],
        }
    }
}

const ALL_STAGE_TAGS: [&str; 8] = [
    "cue",
    "interpret",
    "goal",
    "retrieve",
    "evaluate",
    "info",
    "plan",
    "check",
];

/// Soft limit on words per stage sentence.
pub const STAGE_WORD_LIMIT: usize = 15;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SipAnalysis {
    pub cue: String,
    pub interpret: String,
    pub goal: String,
    pub retrieve: String,
    pub evaluate: String,
    pub dialect: TagDialect,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl SipAnalysis {
    pub fn fields(&self) -> [&str; 5] {
        [&self.cue, &self.interpret, &self.goal, &self.retrieve, &self.evaluate]
    }

    /// Canonical five-line rendering in the analysis' own dialect.
    pub fn render(&self) -> String {
        self.dialect
            .tags()
            .iter()
            .zip(self.fields())
            .map(|(t, f)| format!("[{t}] {f}"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Splits `[Tag] rest` off a line, tolerating list bullets and a colon after the tag.
fn split_tag(line: &str) -> Option<(&str, &str)> {
    let mut l = line.trim();
    for bullet in ["- ", "* ", "• "] {
        if let Some(rest) = l.strip_prefix(bullet) {
            l = rest.trim_start();
        }
    }
    let inner = l.strip_prefix('[')?;
    let close = inner.find(']')?;
    let tag = inner[..close].trim();
    let rest = inner[close + 1..].trim_start();
    let rest = rest.strip_prefix(':').unwrap_or(rest).trim();
    Some((tag, rest))
}

pub fn parse_sip_analysis(raw: &str, dialect: TagDialect) -> Result<SipAnalysis, ParseError> {
    let tags = dialect.tags();
    let mut slots: [Option<String>; 5] = Default::default();
    let mut warnings = Vec::new();

    for line in raw.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let found = split_tag(line).and_then(|(tag, rest)| {
            tags.iter()
                .position(|t| t.eq_ignore_ascii_case(tag))
                .map(|idx| (idx, rest))
        });
        match found {
            Some((idx, rest)) => {
                if slots[idx].is_some() {
                    return Err(ParseError::DuplicateTag(tags[idx].to_string()));
                }
                if rest.split_whitespace().count() > STAGE_WORD_LIMIT {
                    warnings.push(format!("[{}] exceeds {STAGE_WORD_LIMIT} words", tags[idx]));
                }
                slots[idx] = Some(rest.to_string());
            }
            None => warnings.push(format!("ignored untagged line: {}", line.trim())),
        }
    }

    let mut fields = Vec::with_capacity(5);
    for (idx, slot) in slots.into_iter().enumerate() {
        let text = slot.ok_or_else(|| ParseError::MissingTag(tags[idx].to_string()))?;
        if text.is_empty() {
            return Err(ParseError::EmptyStage(tags[idx].to_string()));
        }
        fields.push(text);
    }
    let mut it = fields.into_iter();
    Ok(SipAnalysis {
        cue: it.next().expect("five fields"),
        interpret: it.next().expect("five fields"),
        goal: it.next().expect("five fields"),
        retrieve: it.next().expect("five fields"),
        evaluate: it.next().expect("five fields"),
        dialect,
        warnings,
    })
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.bump();
        }
    }

    fn expect(&mut self, c: char, expected: &'static str) -> Result<(), ParseError> {
        if self.peek() == Some(c) {
            self.bump();
            Ok(())
        } else {
            Err(ParseError::Syntax {
                pos: self.pos,
                expected,
            })
        }
    }

    fn ident(&mut self) -> Result<&'a str, ParseError> {
        let start = self.pos;
        if !self.peek().is_some_and(|c| c.is_ascii_alphabetic() || c == '_') {
            return Err(ParseError::Syntax {
                pos: self.pos,
                expected: "identifier",
            });
        }
        while self.peek().is_some_and(|c| c.is_ascii_alphanumeric() || c == '_') {
            self.bump();
        }
        Ok(&self.src[start..self.pos])
    }

    fn string(&mut self) -> Result<String, ParseError> {
        self.expect('"', "string literal")?;
        let mut out = String::new();
        loop {
            match self.bump() {
                None => return Err(ParseError::UnterminatedString),
                Some('"') => return Ok(out),
                Some('\\') => match self.peek() {
                    Some(c @ ('"' | '\\')) => {
                        self.bump();
                        out.push(c);
                    }
                    Some(_) => out.push('\\'),
                    None => return Err(ParseError::UnterminatedString),
                },
                Some(c) => out.push(c),
            }
        }
    }
}

fn signature(name: &str) -> Option<&'static [&'static str]> {
    Some(match name {
        "do_nothing" => &[],
        "post" => &["content"],
        "retweet" => &["content", "author", "original_tweet_id", "original_tweet"],
        "reply" => &["content", "author", "original_tweet_id"],
        "like" => &["item_id"],
        _ => return None,
    })
}

/// Parses one call at the start of `src`; returns the action and bytes consumed.
fn parse_call_prefix(src: &str) -> Result<(AgentAction, usize), ParseError> {
    let mut cur = Cursor { src, pos: 0 };
    cur.skip_ws();
    let name = cur.ident()?;
    let params = signature(name).ok_or_else(|| ParseError::UnknownFunction(name.to_string()))?;
    cur.skip_ws();
    cur.expect('(', "`(`")?;
    cur.skip_ws();

    let mut args: Vec<(&str, String)> = Vec::new();
    if cur.peek() == Some(')') {
        cur.bump();
    } else {
        loop {
            cur.skip_ws();
            let arg = cur.ident()?;
            cur.skip_ws();
            cur.expect('=', "`=`")?;
            cur.skip_ws();
            let value = cur.string()?;
            if !params.contains(&arg) {
                return Err(ParseError::UnexpectedArgument(arg.to_string()));
            }
            if args.iter().any(|(a, _)| *a == arg) {
                return Err(ParseError::DuplicateArgument(arg.to_string()));
            }
            args.push((arg, value));
            cur.skip_ws();
            match cur.bump() {
                Some(',') => continue,
                Some(')') => break,
                _ => {
                    return Err(ParseError::Syntax {
                        pos: cur.pos,
                        expected: "`,` or `)`",
                    })
                }
            }
        }
    }

    let mut take = |key: &str| -> Result<String, ParseError> {
        let idx = args
            .iter()
            .position(|(a, _)| *a == key)
            .ok_or_else(|| ParseError::MissingArgument(key.to_string()))?;
        Ok(args.swap_remove(idx).1)
    };
    let action = match name {
        "do_nothing" => AgentAction::DoNothing,
        "post" => AgentAction::Post {
            content: take("content")?,
        },
        "retweet" => AgentAction::Retweet {
            content: take("content")?,
            author: take("author")?,
            original_tweet_id: take("original_tweet_id")?,
            original_tweet: take("original_tweet")?,
        },
        "reply" => AgentAction::Reply {
            content: take("content")?,
            author: take("author")?,
            original_tweet_id: take("original_tweet_id")?,
        },
        "like" => AgentAction::Like {
            item_id: take("item_id")?,
        },
        _ => unreachable!("signature() covers every name"),
    };
    if action.content().is_some_and(str::is_empty) {
        return Err(ParseError::EmptyContent);
    }
    Ok((action, cur.pos))
}

/// Parses a complete call; only whitespace may surround it.
pub fn parse_action_call(raw: &str) -> Result<AgentAction, ParseError> {
    let (action, used) = parse_call_prefix(raw)?;
    let rest = raw[used..].trim();
    if !rest.is_empty() {
        return Err(ParseError::TrailingGarbage(rest.to_string()));
    }
    Ok(action)
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
    out
}

/// Canonical call text with fixed argument order.
pub fn render_action(action: &AgentAction) -> String {
    match action {
        AgentAction::DoNothing => "do_nothing()".to_string(),
        AgentAction::Post { content } => format!("post(content={})", quote(content)),
        AgentAction::Retweet {
            content,
            author,
            original_tweet_id,
            original_tweet,
        } => format!(
            "retweet(content={}, author={}, original_tweet_id={}, original_tweet={})",
            quote(content),
            quote(author),
            quote(original_tweet_id),
            quote(original_tweet)
        ),
        AgentAction::Reply {
            content,
            author,
            original_tweet_id,
        } => format!(
            "reply(content={}, author={}, original_tweet_id={})",
            quote(content),
            quote(author),
            quote(original_tweet_id)
        ),
        AgentAction::Like { item_id } => format!("like(item_id={})", quote(item_id)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSelection {
    pub option_number: u8,
    pub thought: String,
    pub action: AgentAction,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

static OPTION_MARKER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\[\s*OPTION\s+(\d+)\s*\]").expect("valid regex"));
static THOUGHT_LABEL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bthought\b\s*\**\s*:").expect("valid regex"));
static ACTION_LABEL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\baction\b\s*\**\s*:").expect("valid regex"));
static BRACKET_TAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\[\s*([A-Za-z]+)\s*\]").expect("valid regex"));

/// Strips a wrapping backtick pair and parses the call; text after the call on its line is an error.
fn parse_action_line(text: &str) -> Result<AgentAction, ParseError> {
    let text = text.trim_start();
    let text = text.strip_prefix('`').unwrap_or(text);
    let (action, used) = parse_call_prefix(text)?;
    let rest = &text[used..];
    let line_rest = rest.split('\n').next().unwrap_or("");
    let line_rest = line_rest.trim().trim_end_matches('`').trim();
    if !line_rest.is_empty() {
        return Err(ParseError::TrailingGarbage(line_rest.to_string()));
    }
    Ok(action)
}

/// Parses `[OPTION n] Thought: ... Action: call(...)`.
pub fn parse_action_selection(raw: &str) -> Result<ActionSelection, ParseError> {
    let mut markers = OPTION_MARKER.captures_iter(raw);
    let first = markers.next().ok_or(ParseError::NoOptionMarker)?;
    if markers.next().is_some() {
        return Err(ParseError::MultipleOptionMarkers);
    }
    let number: u64 = first[1].parse().unwrap_or(u64::MAX);
    if !(1..=4).contains(&number) {
        return Err(ParseError::OptionOutOfRange(number));
    }
    let after_marker = &raw[first.get(0).expect("whole match").end()..];
    let thought_m = THOUGHT_LABEL.find(after_marker).ok_or(ParseError::MissingThought)?;
    let after_thought = &after_marker[thought_m.end()..];
    let action_m = ACTION_LABEL.find(after_thought).ok_or(ParseError::MissingAction)?;
    let thought = after_thought[..action_m.start()]
        .trim()
        .trim_end_matches(['→', '-', '>', '*'])
        .trim()
        .to_string();
    let action = parse_action_line(&after_thought[action_m.end()..])?;

    let mut warnings = Vec::new();
    let references_tag = BRACKET_TAG
        .captures_iter(&thought)
        .any(|c| ALL_STAGE_TAGS.contains(&c[1].to_ascii_lowercase().as_str()));
    if !references_tag {
        warnings.push("thought references no stage tag".to_string());
    }
    Ok(ActionSelection {
        option_number: number as u8,
        thought,
        action,
        warnings,
    })
}

/// Parses the reply-scenario output: five micro-dialect sentences then an `[Action]` line.
pub fn parse_micro_reply(raw: &str) -> Result<(SipAnalysis, AgentAction), ParseError> {
    let mut analysis = parse_sip_analysis(raw, TagDialect::MicroTags)?;
    analysis.warnings.retain(|w| !w.contains("[Action]"));
    let start = raw
        .lines()
        .scan(0usize, |offset, line| {
            let here = *offset;
            *offset += line.len() + 1;
            Some((here, line))
        })
        .find_map(|(offset, line)| {
            split_tag(line)
                .filter(|(tag, _)| tag.eq_ignore_ascii_case("action"))
                .map(|_| offset + line.find(']').expect("tag has a closing bracket") + 1)
        })
        .ok_or(ParseError::MissingAction)?;
    let action = parse_action_line(&raw[start..])?;
    Ok((analysis, action))
}

static INTEGER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"-?\d+").expect("valid regex"));

/// Extracts a 1-5 rating: the first integer token, provided no other integer contradicts it.
pub fn parse_likert(raw: &str) -> Result<u8, ParseError> {
    let mut values = Vec::new();
    for m in INTEGER.find_iter(raw) {
        let tok = m.as_str();
        // a hyphen only negates when it is not between two words/numbers ("1-5" is a range)
        let negative = tok.starts_with('-')
            && raw[..m.start()]
                .chars()
                .next_back()
                .is_none_or(|c| !c.is_alphanumeric());
        let digits = tok.trim_start_matches('-');
        let magnitude: i64 = digits.parse().unwrap_or(i64::MAX);
        values.push(if negative { -magnitude } else { magnitude });
    }
    let first = *values.first().ok_or(ParseError::NoRating)?;
    if values.iter().any(|&v| v != first) {
        return Err(ParseError::Ambiguous);
    }
    if !(1..=5).contains(&first) {
        return Err(ParseError::OutOfRange(first));
    }
    Ok(first as u8)
}
