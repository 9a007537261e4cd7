//! Random-walk exploration over the built-in app suite.

use std::collections::BTreeSet;
use std::sync::Arc;

use agent_forge::explorer::run_campaign;
use agent_forge::sim::spec::default_suite;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let specs: Vec<_> = default_suite(7).into_iter().map(Arc::new).collect();
    let trajectories = run_campaign(&specs, 6, 15, 1)?;

    for spec in &specs {
        let sessions: Vec<_> = trajectories
            .iter()
            .filter(|t| t.app_name == spec.app_name)
            .collect();
        let steps: usize = sessions.iter().map(|t| t.transitions.len()).sum();
        let screens: BTreeSet<_> = sessions
            .iter()
            .flat_map(|t| &t.transitions)
            .flat_map(|tr| [tr.before.screen_id, tr.after.screen_id])
            .collect();
        let no_ops = sessions
            .iter()
            .flat_map(|t| &t.transitions)
            .filter(|tr| tr.before == tr.after)
            .count();
        println!(
            "{:<10} {} sessions, {steps} transitions, {}/{} screens visited, {no_ops} no-op clicks",
            spec.app_name,
            sessions.len(),
            screens.len(),
            spec.screens.len()
        );
    }

    let first = &trajectories[0];
    println!("\nfirst session of {}:", first.app_name);
    for tr in first.transitions.iter().take(5) {
        println!(
            "  screen {} --{:?}--> screen {}",
            tr.before.screen_id, tr.action, tr.after.screen_id
        );
    }
    Ok(())
}
