//! Independent replicas of one scenario over consecutive seeds. Each
//! replica owns its world, so they share nothing.

use hybrid_core::par;

use crate::config::ScenarioConfig;
use crate::harness::{simulate, Finished, HarnessError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Sequential,
    /// Falls back to sequential without the `parallel` feature.
    Parallel,
}

/// `count` copies of `cfg` with seeds `cfg.seed..cfg.seed+count`.
pub fn replicas(cfg: &ScenarioConfig, count: u64) -> Vec<ScenarioConfig> {
    (0..count)
        .map(|k| {
            let mut c = cfg.clone();
            c.seed = cfg.seed + k;
            c
        })
        .collect()
}

pub fn run_batch(cfgs: Vec<ScenarioConfig>, trace: bool, mode: Mode) -> Vec<Result<Finished, HarnessError>> {
    let job = move |c: ScenarioConfig| simulate(c, trace);
    match mode {
        Mode::Sequential => par::map_sequential(cfgs, job),
        Mode::Parallel => par::par_map(cfgs, job),
    }
}
