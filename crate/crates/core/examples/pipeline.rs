//! Runs every stage into a temporary directory and prints the stage manifests.

use agent_forge::config::PipelineConfig;
use agent_forge::pipeline::{Pipeline, StageOutcome};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let mut config = PipelineConfig::from_toml("seed = 5\n[synthesize]\ncontexts_per_node = 2\n")?;
    config.validate()?;
    config.output_root = dir.path().join("out");
    let pipeline = Pipeline::new(config);

    for outcome in pipeline.run_all()? {
        let m = outcome.manifest();
        let state = if matches!(outcome, StageOutcome::Ran(_)) {
            "ran"
        } else {
            "up to date"
        };
        let counts: Vec<String> = m.counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
        println!("{:<26} {state:<10} {}", m.stage, counts.join(" "));
    }

    let again = pipeline.run_all()?;
    println!(
        "\nsecond run: {} of {} stages up to date",
        again
            .iter()
            .filter(|o| matches!(o, StageOutcome::UpToDate(_)))
            .count(),
        again.len()
    );
    Ok(())
}
