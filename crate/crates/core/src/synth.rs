//! Deterministic synthetic event corpora with known ground truth.

use std::collections::HashSet;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetError, EventCorpus};
use crate::domain::{
    AgentId, AgentProfile, ContentItem, ContentTypeLabel, EmotionLabel, ItemId, LabelSet, Labels, Stance,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StanceSpec {
    Fixed(Stance),
    Random,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthAct {
    Post,
    /// Reply to a specific item id.
    ReplyTo(ItemId),
    /// Reply to a uniformly chosen item visible at that step.
    ReplyRandom,
}

/// One row of the behavior table. `step = None` creates pre-existing seed content.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRow {
    pub agent: usize,
    pub step: Option<u64>,
    pub act: SynthAct,
    pub stance: StanceSpec,
    #[serde(default)]
    pub content_type: Option<String>,
    #[serde(default)]
    pub emotion: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomActivity {
    /// Number of seed posts, authored round-robin.
    pub seeds: usize,
    /// Probability that an agent acts in a given step.
    pub act_prob: f64,
    /// Probability that an acting agent replies rather than posts.
    pub reply_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthScript {
    pub rows: Vec<ScriptRow>,
    pub random: Option<RandomActivity>,
    pub follow_prob: f64,
    pub content_types: LabelSet,
    pub emotions: LabelSet,
}

impl Default for SynthScript {
    fn default() -> Self {
        Self {
            rows: Vec::new(),
            random: None,
            follow_prob: 0.3,
            content_types: LabelSet::default_content_types(),
            emotions: LabelSet::default_emotions(),
        }
    }
}

impl SynthScript {
    pub fn scripted(rows: Vec<ScriptRow>) -> Self {
        Self {
            rows,
            ..Self::default()
        }
    }

    pub fn random_activity(seeds: usize, act_prob: f64, reply_prob: f64) -> Self {
        Self {
            random: Some(RandomActivity {
                seeds,
                act_prob,
                reply_prob,
            }),
            ..Self::default()
        }
    }
}

pub fn synth_agent_id(index: usize) -> AgentId {
    format!("agent-{index:03}")
}

/// Item id used for content created by `agent` at `step`; the engine uses the same scheme.
pub fn step_item_id(step: u64, agent: &str) -> ItemId {
    format!("s{step}-{agent}")
}

pub fn synth_origin() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).single().expect("valid date")
}

const COUNTRIES: [&str; 5] = ["UK", "US", "India", "Brazil", "Germany"];
const GENDERS: [&str; 2] = ["female", "male"];
const TOPIC_WORDS: [&str; 8] = [
    "policy",
    "protest",
    "school",
    "community",
    "rights",
    "funding",
    "council",
    "vote",
];

struct Builder<'a> {
    rng: ChaCha8Rng,
    script: &'a SynthScript,
    items: Vec<ContentItem>,
    taken: HashSet<(usize, u64)>,
    seeds: usize,
}

impl Builder<'_> {
    fn labels(&mut self, spec: StanceSpec, ct: Option<&str>, em: Option<&str>) -> Labels {
        let stance = match spec {
            StanceSpec::Fixed(s) => s,
            StanceSpec::Random => Stance::ALL[self.rng.random_range(0..3)],
        };
        let ct = match ct {
            Some(c) => c.to_string(),
            None => {
                let l = self.script.content_types.labels();
                l[self.rng.random_range(0..l.len())].clone()
            }
        };
        let em = match em {
            Some(e) => e.to_string(),
            None => {
                let l = self.script.emotions.labels();
                l[self.rng.random_range(0..l.len())].clone()
            }
        };
        Labels {
            stance,
            content_type: ContentTypeLabel(ct),
            emotion: EmotionLabel(em),
        }
    }

    fn text(&mut self, agent: usize, labels: &Labels) -> String {
        let w1 = TOPIC_WORDS[self.rng.random_range(0..TOPIC_WORDS.len())];
        let w2 = TOPIC_WORDS[self.rng.random_range(0..TOPIC_WORDS.len())];
        format!(
            "Agent {agent} shares a {} take on the {w1} and {w2} ({}, {}).",
            labels.stance, labels.content_type, labels.emotion
        )
    }

    fn visible_at(&self, step: u64) -> Vec<usize> {
        (0..self.items.len())
            .filter(|&i| self.items[i].step.is_none_or(|s| s < step))
            .collect()
    }

    fn push(
        &mut self,
        agent: usize,
        step: Option<u64>,
        act: &SynthAct,
        spec: StanceSpec,
        ct: Option<&str>,
        em: Option<&str>,
    ) -> Result<(), DatasetError> {
        let author = synth_agent_id(agent);
        let origin = synth_origin();
        let (item_id, timestamp) = match step {
            None => {
                self.seeds += 1;
                (
                    format!("seed-{}", self.seeds),
                    origin - Duration::minutes(60) + Duration::seconds(self.seeds as i64),
                )
            }
            Some(t) => {
                if !self.taken.insert((agent, t)) {
                    return Err(DatasetError::Integrity(format!(
                        "agent {agent} scripted twice at step {t}"
                    )));
                }
                (
                    step_item_id(t, &author),
                    origin + Duration::hours(t as i64) + Duration::seconds(agent as i64 + 1),
                )
            }
        };
        let parent_id = match act {
            SynthAct::Post => None,
            SynthAct::ReplyTo(id) => Some(id.clone()),
            SynthAct::ReplyRandom => {
                let visible = self.visible_at(step.unwrap_or(0));
                if visible.is_empty() {
                    None
                } else {
                    let pick = visible[self.rng.random_range(0..visible.len())];
                    Some(self.items[pick].item_id.clone())
                }
            }
        };
        let labels = self.labels(spec, ct, em);
        let text = self.text(agent, &labels);
        self.items.push(ContentItem {
            item_id,
            author_id: author,
            parent_id,
            text,
            timestamp,
            step,
            labels: Some(labels),
            retweet_of: None,
        });
        Ok(())
    }
}

/// Builds a labeled corpus from a behavior table. Same inputs give an identical corpus.
///
/// Panics if `n_agents` is zero or a script row names an agent index out of range.
pub fn synth_event(
    seed: u64,
    n_agents: usize,
    n_steps: u64,
    script: &SynthScript,
) -> Result<EventCorpus, DatasetError> {
    assert!(n_agents >= 1, "synthetic corpus needs at least one agent");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let users: Vec<AgentProfile> = (0..n_agents)
        .map(|i| {
            let mut p = AgentProfile::new(synth_agent_id(i), format!("Agent {i}"));
            p.country = COUNTRIES[i % COUNTRIES.len()].into();
            p.gender = GENDERS[i % GENDERS.len()].into();
            p.signature = format!("Just agent number {i}.");
            p
        })
        .collect();

    let mut follows = Vec::new();
    for i in 0..n_agents {
        for j in 0..n_agents {
            if i != j && rng.random_bool(script.follow_prob.clamp(0.0, 1.0)) {
                follows.push((synth_agent_id(i), synth_agent_id(j)));
            }
        }
    }

    let mut b = Builder {
        rng,
        script,
        items: Vec::new(),
        taken: HashSet::new(),
        seeds: 0,
    };

    let mut rows: Vec<&ScriptRow> = script.rows.iter().collect();
    // seeds first, then by step, keeping table order within a step
    rows.sort_by_key(|r| r.step.map_or(0, |s| s + 1));
    for r in rows.iter().filter(|r| r.step.is_none()) {
        assert!(r.agent < n_agents, "script row agent out of range");
        b.push(
            r.agent,
            None,
            &r.act,
            r.stance,
            r.content_type.as_deref(),
            r.emotion.as_deref(),
        )?;
    }
    if let Some(ra) = &script.random {
        for k in 0..ra.seeds {
            b.push(k % n_agents, None, &SynthAct::Post, StanceSpec::Random, None, None)?;
        }
    }

    for t in 0..n_steps {
        for r in rows.iter().filter(|r| r.step == Some(t)) {
            assert!(r.agent < n_agents, "script row agent out of range");
            b.push(
                r.agent,
                Some(t),
                &r.act,
                r.stance,
                r.content_type.as_deref(),
                r.emotion.as_deref(),
            )?;
        }
        if let Some(ra) = &script.random {
            for agent in 0..n_agents {
                if b.taken.contains(&(agent, t)) {
                    continue;
                }
                if !b.rng.random_bool(ra.act_prob.clamp(0.0, 1.0)) {
                    continue;
                }
                let act = if b.rng.random_bool(ra.reply_prob.clamp(0.0, 1.0)) {
                    SynthAct::ReplyRandom
                } else {
                    SynthAct::Post
                };
                b.push(agent, Some(t), &act, StanceSpec::Random, None, None)?;
            }
        }
    }
    // rows beyond the step horizon are still honored
    for r in rows.iter().filter(|r| r.step.is_some_and(|s| s >= n_steps)) {
        b.push(
            r.agent,
            r.step,
            &r.act,
            r.stance,
            r.content_type.as_deref(),
            r.emotion.as_deref(),
        )?;
    }

    EventCorpus::new(format!("synthetic-{seed}"), b.items, users, follows)
}
