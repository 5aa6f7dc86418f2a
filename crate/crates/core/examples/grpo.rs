//! Group-relative advantages, the clipped objective and a gradient check.

use glance_zoom::grpo::{check_group, dynamic_sample_filter, group_advantages, objective, synthetic_groups, ObjectiveConfig, StdConvention};

fn main() {
    let rewards = [1.5, 0.1, 0.0, 1.5, 1.0];
    let adv = group_advantages(&rewards, StdConvention::Population).unwrap();
    println!("rewards {rewards:?}\nadvantages {:?}", adv.values);

    let cfg = ObjectiveConfig::default();
    let mut groups = synthetic_groups(7, 6, 8, 32);
    for r in &mut groups[5].rollouts {
        r.reward = 0.0;
    }
    for g in &groups {
        let c = check_group(g, &cfg);
        println!("{} passed {} degenerate {}", c.prompt_id, c.passed(), c.degenerate);
    }
    for g in &mut groups {
        g.compute_advantages(cfg.std_convention).unwrap();
    }
    let (kept, report) = dynamic_sample_filter(groups);
    let r = objective(&kept, &cfg).unwrap();
    println!(
        "kept {} dropped {}; policy {:.5} kl {:.6} entropy {:.4} total {:.5} over {} tokens",
        report.kept, report.dropped, r.policy_loss, r.kl, r.entropy_proxy, r.total, r.tokens_trained
    );
}
