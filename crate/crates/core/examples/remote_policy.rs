//! Drive an episode with an OpenAI-compatible chat endpoint.
//!
//! ```text
//! export GLANCE_ZOOM_API_KEY=...
//! cargo run --example remote_policy -- https://api.openai.com/v1/chat/completions gpt-4o-mini
//! ```

use glance_zoom::episode::{run_episode, EpisodeConfig};
use glance_zoom::policy::{RemoteConfig, RemotePolicy};
use glance_zoom::videoworld::{generate_corpus, GenParams};

fn main() {
    let mut args = std::env::args().skip(1);
    let defaults = RemoteConfig::default();
    let cfg = RemoteConfig {
        endpoint: args.next().unwrap_or(defaults.endpoint.clone()),
        model: args.next().unwrap_or(defaults.model.clone()),
        ..defaults
    };
    println!("endpoint {} model {} key from ${}", cfg.endpoint, cfg.model, cfg.api_key_env);
    let task = generate_corpus(&GenParams::default(), 1, 21).unwrap().remove(0);
    match run_episode(&RemotePolicy::new(cfg), &task, &EpisodeConfig::default()) {
        Ok(t) => println!(
            "answer {:?} (gold {}), {} calls, {} frames, {:?}",
            t.final_answer, task.question.gold, t.tool_calls_made, t.total_frames, t.terminal_reason
        ),
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(1);
        }
    }
}
