//! Mock scripts that make a simulation reproduce a labeled corpus.

use std::collections::{BTreeMap, HashMap};

use crate::backend::{MockRecord, ANY_AGENT};
use crate::dataset::EventCorpus;
use crate::domain::{AgentAction, ContentItem, ItemId, Labels};
use crate::parser::render_action;
use crate::prompts::TemplateId;
use crate::synth::step_item_id;

/// Analysis returned to every agent in a replay.
pub const REPLAY_ANALYSIS: &str = "[Cue] The feed shows the ongoing discussion.\n\
[Interpret] Others are sharing their views on the event.\n\
[Goal] Take part in the conversation.\n\
[Retrieve] Post or reply with my own view.\n\
[Evaluate] Sharing my view is appropriate.";

fn option_number(action: &AgentAction) -> u8 {
    match action {
        AgentAction::DoNothing | AgentAction::Like { .. } => 1,
        AgentAction::Post { .. } => 2,
        AgentAction::Retweet { .. } => 3,
        AgentAction::Reply { .. } => 4,
    }
}

/// Wraps an action in the `[OPTION n] Thought: ... Action: ...` response format.
pub fn selection_response(action: &AgentAction) -> String {
    format!(
        "[OPTION {}] Thought: Following my [Goal], I act. Action: {}",
        option_number(action),
        render_action(action)
    )
}

fn wildcard(template_id: TemplateId, response: String) -> MockRecord {
    MockRecord {
        agent_id: ANY_AGENT.to_string(),
        step: None,
        template_id,
        item_id: None,
        response,
        labels: None,
    }
}

/// One scripted action per (author, step) of the corpus's stepped items, with
/// the item's labels attached. Unscripted slots fall back to `do_nothing()`.
///
/// Only the earliest item per (author, step) is replayed. Reply and retweet
/// targets are rewritten to the ids the engine assigns.
pub fn replay_script(corpus: &EventCorpus) -> Vec<MockRecord> {
    let mut first: BTreeMap<(u64, &str), &ContentItem> = BTreeMap::new();
    for item in &corpus.items {
        if let Some(step) = item.step {
            first.entry((step, item.author_id.as_str())).or_insert(item);
        }
    }
    let mut engine_id: HashMap<&str, ItemId> = HashMap::new();
    for item in corpus.seed_items() {
        engine_id.insert(item.item_id.as_str(), item.item_id.clone());
    }
    for ((step, author), item) in &first {
        engine_id.insert(item.item_id.as_str(), step_item_id(*step, author));
    }
    let id_of = |id: &str| engine_id.get(id).cloned().unwrap_or_else(|| id.to_string());

    let mut records = vec![
        wildcard(TemplateId::SipAnalysis, REPLAY_ANALYSIS.to_string()),
        wildcard(TemplateId::ActionSelect, selection_response(&AgentAction::DoNothing)),
    ];
    for ((step, author), item) in first {
        let action = replay_action(corpus, item, &id_of);
        records.push(MockRecord {
            agent_id: author.to_string(),
            step: Some(step),
            template_id: TemplateId::ActionSelect,
            item_id: None,
            response: selection_response(&action),
            labels: item.labels.clone(),
        });
    }
    records
}

fn replay_action(corpus: &EventCorpus, item: &ContentItem, id_of: &dyn Fn(&str) -> ItemId) -> AgentAction {
    if let Some(orig) = &item.retweet_of {
        let original = corpus.item(orig);
        return AgentAction::Retweet {
            content: item.text.clone(),
            author: original.map(|o| o.author_id.clone()).unwrap_or_default(),
            original_tweet_id: id_of(orig),
            original_tweet: original.map(|o| o.text.clone()).unwrap_or_default(),
        };
    }
    match &item.parent_id {
        Some(parent) => AgentAction::Reply {
            content: item.text.clone(),
            author: corpus.item(parent).map(|p| p.author_id.clone()).unwrap_or_default(),
            original_tweet_id: id_of(parent),
        },
        None => AgentAction::Post {
            content: item.text.clone(),
        },
    }
}

/// Returns a copy of `records` with the labels of selected records replaced.
pub fn relabel(records: &[MockRecord], mut f: impl FnMut(usize, &MockRecord) -> Option<Labels>) -> Vec<MockRecord> {
    let mut labeled = 0;
    records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if r.labels.is_some() {
                if let Some(l) = f(labeled, &r) {
                    r.labels = Some(l);
                }
                labeled += 1;
            }
            r
        })
        .collect()
}
