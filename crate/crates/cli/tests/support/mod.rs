#![allow(dead_code)]

pub mod oracle;

use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use rand::Rng;
use trainforge_core::model::{
    ActionOption, AnswerOption, InteractionTarget, IqItem, McqItem, ModuleSpec, Scenario, SessionEvent, Situation,
};
use trainforge_core::parser::parse_scenario;
use trainforge_core::store::parse_event_log;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn factory_scenario() -> Arc<Scenario> {
    let text = fs::read_to_string(fixtures().join("factory-safety.scn")).unwrap();
    Arc::new(parse_scenario(&text).unwrap())
}

pub fn read_trace(name: &str) -> Vec<SessionEvent> {
    let path = fixtures().join(name);
    parse_event_log(&fs::read(&path).unwrap(), &path).unwrap()
}

/// Session directories of the shipped cohort.
pub fn cohort_sessions() -> Vec<PathBuf> {
    let dir = fixtures().join("cohort-A/factory-safety");
    let mut out: Vec<PathBuf> =
        fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).filter(|p| p.join("events.jsonl").exists()).collect();
    out.sort();
    out
}

/// Random valid scenario with every module kind.
pub fn random_scenario(rng: &mut impl Rng, tag: u64) -> Arc<Scenario> {
    let n_options = |rng: &mut dyn rand::RngCore| rng.random_range(2..=6usize);
    let mcq: Vec<McqItem> = (0..rng.random_range(1..=4))
        .map(|i| {
            let n = n_options(rng);
            let correct = rng.random_range(0..n);
            McqItem {
                id: format!("m{i}"),
                prompt: format!("question {i}"),
                asset_refs: vec![],
                options: (0..n)
                    .map(|j| AnswerOption {
                        id: format!("m{i}o{j}"),
                        text: format!("option {j}"),
                        correct: j == correct,
                        distractor_rank: if j == correct { 0 } else { rng.random_range(0..4) },
                    })
                    .collect(),
                weight: rng.random_range(0.5..3.0),
                time_limit_s: rng.random_range(10.0..60.0),
                hint: rng.random_bool(0.5).then(|| "hint".to_string()),
            }
        })
        .collect();
    let iq: Vec<IqItem> = (0..rng.random_range(1..=3))
        .map(|i| {
            let n = rng.random_range(2..=5usize);
            let k = rng.random_range(1..n);
            IqItem {
                id: format!("t{i}"),
                prompt: format!("select {i}"),
                targets: (0..n)
                    .map(|j| InteractionTarget {
                        id: format!("t{i}x{j}"),
                        label: format!("target {j}"),
                        asset_ref: String::new(),
                    })
                    .collect(),
                correct_target_ids: (0..k).map(|j| format!("t{i}x{j}")).collect(),
                weight: 1.0,
                time_limit_s: rng.random_range(20.0..120.0),
                hint: None,
            }
        })
        .collect();
    let live: Vec<Situation> = (0..rng.random_range(2..=6))
        .map(|i| {
            let n = n_options(rng);
            let correct = rng.random_range(0..n);
            Situation {
                id: format!("s{i}"),
                prompt: format!("situation {i}"),
                action_options: (0..n)
                    .map(|j| ActionOption {
                        id: format!("s{i}a{j}"),
                        label: format!("action {j}"),
                        distractor_rank: if j == correct { 0 } else { rng.random_range(0..4) },
                    })
                    .collect(),
                correct_action_id: format!("s{i}a{correct}"),
                weight: 1.0,
                base_time_limit_s: rng.random_range(10.0..60.0),
                hint: rng.random_bool(0.3).then(|| "hint".to_string()),
            }
        })
        .collect();
    Arc::new(
        Scenario::new(
            format!("random-{tag}"),
            "Random",
            1,
            vec![ModuleSpec::Mcq { items: mcq }, ModuleSpec::Iq { items: iq }, ModuleSpec::Live { situations: live }],
        )
        .unwrap(),
    )
}

/// Ids of the options a step accepts as correct.
pub fn correct_ids(scenario: &Scenario, step_id: &str) -> Vec<String> {
    for m in scenario.modules() {
        match m {
            ModuleSpec::Mcq { items } => {
                if let Some(it) = items.iter().find(|i| i.id == step_id) {
                    return it.options.iter().filter(|o| o.correct).map(|o| o.id.clone()).collect();
                }
            }
            ModuleSpec::Iq { items } => {
                if let Some(it) = items.iter().find(|i| i.id == step_id) {
                    return it.correct_target_ids.clone();
                }
            }
            ModuleSpec::Live { situations } => {
                if let Some(s) = situations.iter().find(|s| s.id == step_id) {
                    return vec![s.correct_action_id.clone()];
                }
            }
        }
    }
    panic!("unknown step {step_id}")
}
