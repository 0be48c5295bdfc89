use criterion::{criterion_group, criterion_main, Criterion};
use sipsim_core::parser::{parse_action_selection, parse_sip_analysis, TagDialect};
use std::hint::black_box;

const SELECTION: &str = r#"[OPTION 4] Thought: Following my [Goal], I push back. Action: reply(content="That is not what the council said, \"read it\" first", author="u07", original_tweet_id="s3-u07")"#;

const ANALYSIS: &str = "[Cue] A heated thread about the school budget.\n\
[Interpret] The author is frustrated with the council.\n\
[Goal] Correct the record without escalating.\n\
[Retrieve] Reply with the published figures.\n\
[Evaluate] A calm reply is likely to be received well.";

fn bench_parse(c: &mut Criterion) {
    c.bench_function("parse_action_selection", |b| {
        b.iter(|| parse_action_selection(black_box(SELECTION)))
    });
    c.bench_function("parse_sip_analysis", |b| {
        b.iter(|| parse_sip_analysis(black_box(ANALYSIS), TagDialect::SipTags))
    });
}

criterion_group!(benches, bench_parse);
criterion_main!(benches);
