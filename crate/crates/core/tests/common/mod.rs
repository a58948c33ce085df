#![allow(dead_code)]

pub mod brute;
pub mod oracle;

use tcd_core::model::{ConflictLabel, Frame, ImageRef, Observation, Provenance};
use tcd_core::sim::{default_geometry, Leg, Movement, Route, Vehicle, VehicleClass};

/// A car on `leg` whose center sits `upstream` meters before the zone entry.
pub fn car_on(id: &str, leg: Leg, movement: Movement, lane: u8, upstream: f64, speed: f64) -> Vehicle {
    let g = default_geometry();
    let route = Route { approach_leg: leg, movement, lane };
    let pose = g.route_path(&route).unwrap().pose_at(g.entry_station() - upstream);
    Vehicle { id: id.into(), vclass: VehicleClass::Car, pose, speed, route, parked: false }
}

/// A labelled observation whose frames are never read.
pub fn placeholder_observation(i: usize, conflict: bool) -> Observation {
    let id = format!("obs-{i:04}");
    let frames = (0..3u8)
        .map(|k| Frame {
            index: k,
            time_offset: 0.5 * k as f64,
            width_px: 8,
            height_px: 8,
            image_ref: ImageRef::for_file(format!("frames/{id}_{k}.png"), id.as_bytes()),
            source_id: "fixture".into(),
        })
        .collect();
    let label = if conflict { ConflictLabel::Conflict } else { ConflictLabel::NoConflict };
    Observation { id, frames, ground_truth: Some(label), split: None, provenance: Provenance::Synthetic, scenario_ref: None }
}

pub mod workspace {
    use std::collections::BTreeMap;
    use std::path::Path;

    use tcd_core::eval::{run_eval, EvalSpec, RunRecord};
    use tcd_core::finetune::scenario_rationale;
    use tcd_core::gateway::{OracleBackend, PromptId, RequestParams, ResponseMode};
    use tcd_core::ingest::{assign_splits, build_manifest, SplitCounts};
    use tcd_core::model::{DatasetManifest, Split};
    use tcd_core::sim::{synthesize, SynthesisConfig};
    use tcd_core::workspace::Layout;

    /// A synthetic workspace of `n` balanced observations with a split of
    /// `test` test items (the rest train) and a finished oracle run per mode.
    pub fn build(root: &Path, n: usize, test: usize, seed: u64) -> (DatasetManifest, RunRecord, RunRecord) {
        let layout = Layout::new(root);
        let cfg = SynthesisConfig { n, balance: Some(0.5), ..SynthesisConfig::default() };
        let syn = synthesize(seed, &cfg, root).unwrap();
        let m = build_manifest(syn.observations, seed).unwrap();
        let m = assign_splits(&m, SplitCounts { train: n - test, val: 0, test }, seed).unwrap();
        m.write(&layout.manifest()).unwrap();
        let rationales: BTreeMap<String, (String, String)> =
            syn.scenarios.iter().map(|s| (s.id.clone(), scenario_rationale(s).unwrap())).collect();
        let backend = OracleBackend::from_manifest(&m).with_rationales(rationales);
        let mut runs = Vec::new();
        for (mode, run_id) in [(ResponseMode::VerdictWithRationale, "run-rationale"), (ResponseMode::VerdictOnly, "run-plain")] {
            let spec = EvalSpec {
                manifest: &m,
                split: Split::Test,
                prompt: PromptId::P2,
                mode,
                model_id: "oracle".into(),
                params: RequestParams::default(),
                root: root.to_path_buf(),
                run_dir: layout.run_dir(run_id),
                run_id: run_id.into(),
                config_hash: "test".into(),
                config: serde_json::Value::Null,
                workers: None,
                interrupt: None,
            };
            runs.push(run_eval(&backend, &spec).unwrap());
        }
        let plain = runs.pop().unwrap();
        (m, runs.pop().unwrap(), plain)
    }
}
