//! Accuracy against frames: uniform sampling budgets versus zooming.

use glance_zoom::cli::{sweep, sweep_csv};
use glance_zoom::episode::EpisodeConfig;
use glance_zoom::policy::{DirectHit, Policy, Progressive};
use glance_zoom::videoworld::{generate_corpus, GenParams};

fn main() {
    let tasks = generate_corpus(&GenParams::default(), 300, 5).unwrap();
    let policies: Vec<Box<dyn Policy>> = vec![Box::new(Progressive), Box::new(DirectHit)];
    let rows = sweep(&tasks, &[16, 32, 64, 128, 256], &policies, &EpisodeConfig::default(), 0);
    print!("{}", sweep_csv(&rows));
}
