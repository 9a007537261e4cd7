//! Builds the environment memory from exploration and queries the retrieval index.

use std::sync::Arc;

use agent_forge::explorer::run_campaign;
use agent_forge::memory::{build_memory, retrieve_related, MemoryConfig};
use agent_forge::providers::ProviderBundle;
use agent_forge::sim::spec::default_suite;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let specs: Vec<_> = default_suite(7).into_iter().map(Arc::new).collect();
    let trajectories = run_campaign(&specs, 8, 20, 3)?;
    let providers = ProviderBundle::mock(0, specs.clone());
    let memories = build_memory(&trajectories, &providers, &MemoryConfig::default())?;

    for m in &memories {
        println!(
            "{:<10} {} screens, {} edges, {} functionalities, {} indexed",
            m.app_name,
            m.nodes.len(),
            m.edges.len(),
            m.functionalities.len(),
            m.index.len()
        );
    }

    let memory = &memories[0];
    let node = memory
        .nodes
        .iter()
        .max_by_key(|n| n.neighbors.len())
        .unwrap();
    println!(
        "\n{} screen {} (members {}):",
        memory.app_name,
        node.node_id,
        node.members.len()
    );
    for f in memory.node_functionalities(node.node_id) {
        println!("  {}: {}", f.label, f.description);
    }
    let exclude = memory.default_exclusion(node.node_id);
    println!("related functionality elsewhere in the app:");
    for f in retrieve_related(
        memory,
        node.node_id,
        5,
        &exclude,
        providers.embedder.as_ref(),
    )? {
        println!("  screen {}: {}", f.node_id, f.label);
    }
    Ok(())
}
