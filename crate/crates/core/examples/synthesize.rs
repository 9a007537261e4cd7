//! Generates and filters task instructions from memory contexts.

use std::sync::Arc;

use agent_forge::explorer::run_campaign;
use agent_forge::memory::{build_memory, MemoryConfig};
use agent_forge::providers::ProviderBundle;
use agent_forge::sim::spec::default_suite;
use agent_forge::store::RenderStore;
use agent_forge::synthesizer::{synthesize, SynthesisConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let specs: Vec<_> = default_suite(7).into_iter().map(Arc::new).collect();
    let trajectories = run_campaign(&specs, 8, 20, 3)?;
    let providers = ProviderBundle::mock(0, specs.clone());
    let memories = build_memory(&trajectories, &providers, &MemoryConfig::default())?;

    // The generator sees screenshots, so every explored render goes into the store.
    let dir = tempfile::tempdir()?;
    let renders = RenderStore::new(dir.path());
    for t in &trajectories {
        for tr in &t.transitions {
            renders.put(&tr.before.render)?;
            renders.put(&tr.after.render)?;
        }
    }

    let config = SynthesisConfig {
        contexts_per_node: 2,
        ..SynthesisConfig::default()
    };
    let (candidates, kept, stats) = synthesize(&memories, &renders, &providers, &config)?;
    println!("{} candidates -> {} kept", candidates.len(), kept.len());
    println!("{stats:#?}");
    for task in kept.iter().take(8) {
        println!("  [{}] {}", task.app, task.text);
    }
    Ok(())
}
