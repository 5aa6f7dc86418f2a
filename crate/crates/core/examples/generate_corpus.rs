//! Generate a small mixed corpus and look inside one video.

use glance_zoom::videoworld::{dense_oracle, generate_corpus, uniform_glance, GenParams, KindMix};

fn main() {
    let params = GenParams {
        kind_mix: KindMix {
            needle: 2.0,
            count: 1.0,
            order: 1.0,
        },
        ..GenParams::default()
    };
    let tasks = generate_corpus(&params, 8, 42).expect("valid parameters");
    for t in &tasks {
        println!(
            "{} {:?} {:.0}s, {} events, gold {} (oracle {})",
            t.task_id,
            t.question.kind,
            t.video.duration,
            t.video.events.len(),
            t.question.gold,
            dense_oracle(&t.video, &t.question)
        );
    }
    let first = &tasks[0];
    println!("\n{}", first.question.render());
    for f in uniform_glance(&first.video, 64).frames.iter().take(3) {
        println!("{}", f.render());
    }
}
