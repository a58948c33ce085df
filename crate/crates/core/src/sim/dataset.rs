//! Synthetic datasets: many sampled scenarios, rebalanced to an exact class
//! split when asked, rendered to frame triplets on disk.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::render::{render_frames, RenderConfig, TRIPLET_TIMES};
use super::sampler::{sample_scenario, sample_scenario_for, GeneratorConfig};
use super::{Scenario, SimError};
use crate::model::{ConflictLabel, Observation, Provenance};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub n: usize,
    /// Exact conflict fraction to rebalance to; `None` keeps whatever the
    /// sampler's bias produced.
    pub balance: Option<f64>,
    pub generator: GeneratorConfig,
    pub render: RenderConfig,
    /// Draws allowed per replaced scenario before giving up.
    pub rebalance_attempts: u32,
    pub workers: usize,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            n: 140,
            balance: Some(0.5),
            generator: GeneratorConfig::default(),
            render: RenderConfig::default(),
            rebalance_attempts: 200,
            workers: std::thread::available_parallelism().map_or(4, |n| n.get()).min(8),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthesized {
    /// In generation order.
    pub scenarios: Vec<Scenario>,
    pub observations: Vec<Observation>,
    /// Scenarios the sampler's bias alone produced as conflicts.
    pub biased_conflicts: usize,
    /// Scenarios replaced to hit the requested balance.
    pub replaced: usize,
}

fn conflicts(s: &[Scenario]) -> usize {
    s.iter().filter(|s| s.oracle_label == ConflictLabel::Conflict).count()
}

/// Sample `cfg.n` scenarios from the `"sampler"` stream, then replace the
/// latest surplus-class scenarios with targeted draws from the `"rebalance"`
/// stream until the conflict count is exactly `round(n * balance)`.
pub fn sample_dataset(seed: u64, cfg: &SynthesisConfig) -> Result<(Vec<Scenario>, usize, usize), SimError> {
    let gen = &cfg.generator;
    gen.validate()?;
    let mut scenarios = parallel_map(cfg.n, cfg.workers, |i| sample_scenario(seed::derive(seed, "sampler", i as u64), gen))?;
    let biased = conflicts(&scenarios);
    let Some(balance) = cfg.balance else { return Ok((scenarios, biased, 0)) };
    if !(0.0..=1.0).contains(&balance) {
        return Err(SimError::InvalidConfig("balance must lie in [0, 1]".into()));
    }
    let want = (cfg.n as f64 * balance).round() as usize;
    let (surplus, deficit) = if biased > want {
        (ConflictLabel::Conflict, ConflictLabel::NoConflict)
    } else {
        (ConflictLabel::NoConflict, ConflictLabel::Conflict)
    };
    let replace = biased.abs_diff(want);
    let slots: Vec<usize> = (0..scenarios.len()).rev().filter(|&i| scenarios[i].oracle_label == surplus).take(replace).collect();
    let mut draw = 0u64;
    for &slot in &slots {
        let mut found = None;
        for _ in 0..cfg.rebalance_attempts {
            let s = sample_scenario_for(seed::derive(seed, "rebalance", draw), gen, deficit)?;
            draw += 1;
            if s.oracle_label == deficit && !scenarios.iter().any(|o| o.id == s.id) {
                found = Some(s);
                break;
            }
        }
        scenarios[slot] = found.ok_or_else(|| {
            SimError::InvalidConfig(format!("no {deficit} scenario within {} draws while rebalancing", cfg.rebalance_attempts))
        })?;
    }
    debug_assert_eq!(conflicts(&scenarios), want);
    Ok((scenarios, biased, slots.len()))
}

/// Sample, rebalance and render. Frames are written under `root/frames/`.
pub fn synthesize(seed: u64, cfg: &SynthesisConfig, root: &Path) -> Result<Synthesized, SimError> {
    let (scenarios, biased_conflicts, replaced) = sample_dataset(seed, cfg)?;
    std::fs::create_dir_all(root.join("frames"))?;
    let params = &cfg.generator.oracle;
    let observations = parallel_map(scenarios.len(), cfg.workers, |i| {
        let s = &scenarios[i];
        let rendered = render_frames(s, &TRIPLET_TIMES, &cfg.render, params)?;
        let mut frames = Vec::with_capacity(rendered.len());
        for r in rendered {
            if let crate::model::ImageRef::Path { path, .. } = &r.frame.image_ref {
                std::fs::write(root.join(path), &r.png)?;
            }
            frames.push(r.frame);
        }
        Ok(Observation {
            id: s.id.clone(),
            frames,
            ground_truth: Some(s.oracle_label),
            split: None,
            provenance: Provenance::Synthetic,
            scenario_ref: Some(s.id.clone()),
        })
    })?;
    Ok(Synthesized { scenarios, observations, biased_conflicts, replaced })
}

/// Order-preserving map over `0..n` on up to `workers` threads.
fn parallel_map<T: Send>(
    n: usize,
    workers: usize,
    f: impl Fn(usize) -> Result<T, SimError> + Sync,
) -> Result<Vec<T>, SimError> {
    let workers = workers.clamp(1, n.max(1));
    let mut out: Vec<Option<Result<T, SimError>>> = (0..n).map(|_| None).collect();
    std::thread::scope(|s| {
        for (w, chunk) in out.chunks_mut(n.div_ceil(workers).max(1)).enumerate() {
            let f = &f;
            let base = w * n.div_ceil(workers).max(1);
            s.spawn(move || {
                for (j, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(f(base + j));
                }
            });
        }
    });
    out.into_iter().map(|r| r.expect("every slot filled")).collect()
}
