#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sipsim_core::replay::replay_script;
use sipsim_core::synth::{synth_event, SynthScript};
use sipsim_core::{EventCorpus, MockBackend, MockRecord};

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub corpus: EventCorpus,
}

impl Fixture {
    /// Synthetic labeled event plus a mock script replaying it.
    pub fn replay(seed: u64, agents: usize, steps: u64) -> Self {
        let corpus = synth_event(seed, agents, steps, &SynthScript::random_activity(3, 0.6, 0.5)).unwrap();
        let f = Self::with_corpus(corpus);
        f.write_script(&replay_script(&f.corpus));
        f.write_config(&format!("steps = {steps}\n"));
        f
    }

    pub fn with_corpus(corpus: EventCorpus) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("event.jsonl"), corpus.to_jsonl()).unwrap();
        Self { dir, corpus }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn write_script(&self, records: &[MockRecord]) {
        let mock = MockBackend::new(records.to_vec());
        std::fs::write(self.path("script.jsonl"), mock.to_jsonl()).unwrap();
    }

    /// Writes `config.toml` with the event, mock backend and any extra top-level keys.
    pub fn write_config(&self, top: &str) {
        let text =
            format!("{top}event_path = \"event.jsonl\"\n\n[backend]\nkind = \"mock\"\nscript = \"script.jsonl\"\n");
        std::fs::write(self.path("config.toml"), text).unwrap();
    }

    pub fn write_raw_config(&self, text: &str) {
        std::fs::write(self.path("config.toml"), text).unwrap();
    }
}

pub fn sipsim(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sipsim"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("run sipsim")
}

pub fn sha256_file(path: &Path) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(std::fs::read(path).unwrap()))
}
