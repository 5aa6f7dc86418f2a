//! Distill exemplars, reflect on student failures and export an SFT corpus.

use glance_zoom::curation::{export_string, run_pipeline, CurationConfig};
use glance_zoom::policy::{DirectHit, NoTool};
use glance_zoom::videoworld::{generate_corpus, GenParams};

fn main() {
    let tasks = generate_corpus(&GenParams::default(), 120, 11).unwrap();
    let cfg = CurationConfig::default();
    let out = run_pipeline(&DirectHit, &NoTool, &tasks, &cfg);
    let kept = |rs: &[glance_zoom::curation::CurationRecord]| rs.iter().filter(|r| r.is_kept()).count();
    println!("exemplars {} ({} kept)", out.exemplars.len(), kept(&out.exemplars));
    println!("reflections {} ({} kept)", out.reflections.len(), kept(&out.reflections));

    let (jsonl, stats) = export_string(&out.selected, cfg.episode.budget.per_call_budget);
    println!("exported {} records, origin mix {:?}", stats.records, stats.origin_mix);
    println!("mean tool calls {:?}", stats.mean_tool_calls);
    println!("first record: {}...", &jsonl[..jsonl.len().min(240)]);
}
