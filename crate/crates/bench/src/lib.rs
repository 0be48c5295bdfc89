//! Fixtures shared by the benchmarks.

use sipsim_core::engine::ScriptedAnnotator;
use sipsim_core::replay::replay_script;
use sipsim_core::synth::{synth_event, SynthScript};
use sipsim_core::{
    construct_environment, initialize, AgentConfig, EngineConfig, EventCorpus, MockBackend, Simulation, TemplateSet,
};

/// A synthetic event plus a mock backend that replays it.
pub fn replay_fixture(seed: u64, agents: usize, steps: u64) -> (EventCorpus, MockBackend) {
    let corpus =
        synth_event(seed, agents, steps, &SynthScript::random_activity(3, 0.5, 0.5)).expect("synthetic corpus");
    let backend = MockBackend::new(replay_script(&corpus));
    (corpus, backend)
}

pub fn simulation(corpus: &EventCorpus, backend: &MockBackend) -> Simulation {
    let cfg = EngineConfig::default();
    let mut world = construct_environment(corpus, &cfg).expect("environment");
    initialize(&mut world, &cfg).expect("initialize");
    Simulation::new(
        world,
        cfg,
        AgentConfig::default(),
        TemplateSet::defaults(),
        Box::new(ScriptedAnnotator::new(backend.clone())),
    )
    .expect("simulation")
}
