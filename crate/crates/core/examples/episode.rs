//! Run one episode per built-in policy and print the transcript of the first.

use glance_zoom::episode::{run_episode, EpisodeConfig};
use glance_zoom::policy::{DirectHit, Misstep, NoTool, Policy, Progressive, SelfRefine};
use glance_zoom::videoworld::{generate_corpus, GenParams};

fn main() {
    let task = generate_corpus(&GenParams::default(), 1, 3).unwrap().remove(0);
    let cfg = EpisodeConfig::default();
    let policies: [&dyn Policy; 4] = [&Progressive, &DirectHit, &NoTool, &SelfRefine::new(Misstep::OverBudget)];
    for p in policies {
        let t = run_episode(p, &task, &cfg).unwrap();
        println!(
            "{:<12} answer {:?} (gold {}), {} calls, {} frames, {:?}",
            p.name(),
            t.final_answer,
            task.question.gold,
            t.tool_calls_made,
            t.total_frames,
            t.terminal_reason
        );
    }

    let t = run_episode(&Progressive, &task, &cfg).unwrap();
    for turn in &t.turns {
        let text: String = turn.text.lines().take(4).collect::<Vec<_>>().join("\n");
        println!("\n[{:?}]\n{text}", turn.role);
    }
}
