//! Score trajectories with and without the tool bonus.

use glance_zoom::episode::{run_batch, EpisodeConfig};
use glance_zoom::policy::{DirectHit, NoTool, Policy, RandomAnswer};
use glance_zoom::reward::{feasible_components, total_reward, RewardWeights};
use glance_zoom::videoworld::{generate_corpus, GenParams};

fn main() {
    let w = RewardWeights::default();
    println!("reachable totals:");
    for (a, f, t) in feasible_components() {
        println!("  acc {a} fmt {f} tool {t} -> {:.1}", w.combine(a, f, t));
    }

    let tasks = generate_corpus(&GenParams::default(), 100, 8).unwrap();
    let policies: [&dyn Policy; 3] = [&DirectHit, &NoTool, &RandomAnswer { seed: 1 }];
    for p in policies {
        let trajs: Vec<_> = run_batch(p, &tasks, &EpisodeConfig::default(), 0).into_iter().map(Result::unwrap).collect();
        let mean = |weights: &RewardWeights| {
            trajs.iter().map(|t| total_reward(t, &t.question.gold, weights).total).sum::<f64>() / trajs.len() as f64
        };
        println!("{:<14} mean reward {:.3}, without tool bonus {:.3}", p.name(), mean(&w), mean(&RewardWeights::without_tool()));
    }
}
