//! Distribution of requested zoom frame rates.

use glance_zoom::cli::{fps_csv, fps_report};
use glance_zoom::episode::{run_batch, EpisodeConfig};
use glance_zoom::policy::{AlwaysZoom, Progressive};
use glance_zoom::videoworld::{generate_corpus, GenParams};

fn main() {
    let tasks = generate_corpus(&GenParams::default(), 200, 13).unwrap();
    let cfg = EpisodeConfig::default();
    let mut trajs: Vec<_> = run_batch(&Progressive, &tasks, &cfg, 0).into_iter().map(Result::unwrap).collect();
    trajs.extend(run_batch(&AlwaysZoom::default(), &tasks, &cfg, 0).into_iter().map(Result::unwrap));
    print!("{}", fps_csv(&fps_report(&trajs)));
}
