//! Generates an app, plans a task against it and replays the plan step by step.

use std::sync::Arc;

use agent_forge::providers::sample_instructions;
use agent_forge::sim::{
    generate_app, goal_check, resolve_goal, shortest_plan, AppGenParams, Environment, SimEnv,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = Arc::new(generate_app(
        "Planner",
        AppGenParams {
            n_screens: 8,
            elements_per_screen: 4,
            n_fields: 5,
        },
        42,
    )?);
    println!("{} has {} screens:", spec.app_name, spec.screens.len());
    for screen in &spec.screens {
        println!(
            "  [{}] {} ({} elements)",
            screen.screen_id,
            screen.title,
            screen.elements.len()
        );
    }

    let instruction = sample_instructions(&spec, 1, 7).remove(0);
    let goal = resolve_goal(&spec, &instruction).ok_or("instruction has no goal")?;
    let mut env = SimEnv::new(spec.clone());
    let plan = shortest_plan(&spec, env.state(), &goal)?;
    println!("\ntask: {instruction}\nplan: {} actions", plan.len());

    for action in &plan {
        let obs = env.step(action)?;
        println!(
            "  {action:?} -> screen {} ({} a11y nodes)",
            obs.screen_id,
            obs.a11y.len()
        );
    }
    let answer = env.state().final_answer().map(str::to_owned);
    println!(
        "goal reached: {}",
        goal_check(env.state(), &goal, answer.as_deref())
    );

    let path = std::env::temp_dir().join("planner-final.png");
    std::fs::write(&path, env.observation().render.to_png())?;
    println!("final screen written to {}", path.display());
    Ok(())
}
