//! Talks to an OpenAI-compatible endpoint. Set AGENT_FORGE_BASE_URL and
//! AGENT_FORGE_API_KEY (see `providers::remote`) and optionally pass a model
//! name as the first argument.

use std::time::Duration;

use agent_forge::providers::{
    cosine, ChatModel, Embedder, GenerationRequest, RemoteBackend, RetryPolicy, API_KEY_VAR,
    BASE_URL_VAR,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "gpt-4o-mini".into());
    let backend = match RemoteBackend::from_env(&model) {
        Ok(b) => b.with_retry(RetryPolicy {
            attempts: 3,
            initial_backoff: Duration::from_millis(500),
        }),
        Err(e) => {
            eprintln!("{e}\nexport {BASE_URL_VAR} and {API_KEY_VAR} to run this example");
            return Ok(());
        }
    };

    let reply = backend.chat_generate(
        &GenerationRequest::new("You answer in one short sentence.")
            .text("What does a settings screen usually contain?"),
    )?;
    println!("{model}: {reply}");

    let texts = vec![
        "turn on wifi".to_string(),
        "enable wireless networking".to_string(),
        "delete a note".to_string(),
    ];
    let vectors = backend.embed_texts(&texts)?;
    println!("embedding dimension {}", backend.dimension());
    for i in 1..texts.len() {
        println!(
            "  cos({:?}, {:?}) = {:.3}",
            texts[0],
            texts[i],
            cosine(&vectors[0], &vectors[i])
        );
    }
    Ok(())
}
