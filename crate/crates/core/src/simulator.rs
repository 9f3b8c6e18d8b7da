//! Synthetic trainees that play scenarios through the real engine.

use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{fnv1a, splitmix64, EngineConfig, EngineError, SessionMode, SessionState};
use crate::model::{EventKind, ModuleKind, Scenario, SessionEvent, SessionStart};
use crate::report::{report_from_bundles, CohortReport, ReportError, SessionFilter};
use crate::store::{MetricsStore, StoreError, TraceBundle};

/// Pause between finishing one step and the next prompt appearing.
pub const STEP_GAP_S: f64 = 1.0;
/// Time spent reading a hint before answering.
pub const HINT_READ_S: f64 = 2.0;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid profile `{name}`: {reason}")]
    InvalidProfile { name: String, reason: String },
    #[error("profile file: {0}")]
    ProfileSyntax(String),
    #[error("sessions per profile must be at least 1")]
    InvalidCount,
    #[error("simulator produced an event the engine rejected at seq {seq}: {source}")]
    Engine {
        seq: u64,
        #[source]
        source: EngineError,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

impl SimError {
    pub fn code(&self) -> &'static str {
        match self {
            SimError::InvalidProfile { .. } | SimError::ProfileSyntax(_) => "invalid-profile",
            SimError::InvalidCount => "invalid-count",
            SimError::Engine { source, .. } => source.code(),
            SimError::Store(e) => e.code(),
            SimError::Report(e) => e.code(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub mean_s: f64,
    pub std_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Latencies {
    #[serde(default = "Latencies::default_mcq")]
    pub mcq: LatencyModel,
    #[serde(default = "Latencies::default_iq")]
    pub iq: LatencyModel,
    #[serde(default = "Latencies::default_live")]
    pub live: LatencyModel,
}

impl Latencies {
    fn default_mcq() -> LatencyModel {
        LatencyModel { mean_s: 15.0, std_s: 5.0 }
    }

    fn default_iq() -> LatencyModel {
        LatencyModel { mean_s: 30.0, std_s: 10.0 }
    }

    fn default_live() -> LatencyModel {
        LatencyModel { mean_s: 20.0, std_s: 8.0 }
    }

    pub fn for_kind(&self, kind: ModuleKind) -> LatencyModel {
        match kind {
            ModuleKind::Mcq => self.mcq,
            ModuleKind::Iq => self.iq,
            ModuleKind::Live => self.live,
        }
    }
}

impl Default for Latencies {
    fn default() -> Self {
        Latencies { mcq: Self::default_mcq(), iq: Self::default_iq(), live: Self::default_live() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraineeProfile {
    pub name: String,
    /// Probability of choosing the correct option on any step.
    pub answer_accuracy: f64,
    /// Per-position probability that live situations are attempted without
    /// a transposition.
    pub sequencing_fidelity: f64,
    #[serde(default)]
    pub latency: Latencies,
    /// Chance that a latency draw reaching the time limit becomes a
    /// timeout, scaled by the error rate `1 - answer_accuracy`.
    #[serde(default = "TraineeProfile::default_timeout_probability")]
    pub timeout_probability: f64,
    /// Salt mixed into every session seed for this profile.
    #[serde(default)]
    pub seed: u64,
}

impl TraineeProfile {
    fn default_timeout_probability() -> f64 {
        0.1
    }

    pub fn new(name: impl Into<String>, answer_accuracy: f64, sequencing_fidelity: f64) -> Self {
        TraineeProfile {
            name: name.into(),
            answer_accuracy,
            sequencing_fidelity,
            latency: Latencies::default(),
            timeout_probability: Self::default_timeout_probability(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |reason: String| Err(SimError::InvalidProfile { name: self.name.clone(), reason });
        for (field, p) in [
            ("answer_accuracy", self.answer_accuracy),
            ("sequencing_fidelity", self.sequencing_fidelity),
            ("timeout_probability", self.timeout_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{field} = {p} is not a probability"));
            }
        }
        for kind in ModuleKind::ALL {
            let l = self.latency.for_kind(kind);
            if !(l.mean_s > 0.0 && l.mean_s.is_finite()) {
                return bad(format!("{kind} latency mean must be positive"));
            }
            if !(l.std_s >= 0.0 && l.std_s.is_finite()) {
                return bad(format!("{kind} latency std must be non-negative"));
            }
        }
        Ok(())
    }

    /// Seed of the engine session this profile plays for a run seed.
    pub fn session_seed(&self, seed: u64) -> u64 {
        splitmix64(seed ^ splitmix64(self.seed ^ fnv1a(&self.name)))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileFile {
    profile: Vec<TraineeProfile>,
}

/// Parses a profile file: a TOML document with one `[[profile]]` table
/// per trainee.
pub fn parse_profiles(text: &str) -> Result<Vec<TraineeProfile>, SimError> {
    let file: ProfileFile = toml::from_str(text).map_err(|e| SimError::ProfileSyntax(e.to_string()))?;
    if file.profile.is_empty() {
        return Err(SimError::ProfileSyntax("no [[profile]] entries".into()));
    }
    for p in &file.profile {
        p.validate()?;
    }
    Ok(file.profile)
}

/// Drives one session and returns its trace with finalized metrics.
pub fn simulate(profile: &TraineeProfile, scenario: Arc<Scenario>, seed: u64) -> Result<TraceBundle, SimError> {
    profile.validate()?;
    let session_seed = profile.session_seed(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(session_seed ^ 0x7ea1));
    let state = SessionState::new(scenario.clone(), session_seed, SessionMode::Replay, EngineConfig::default());
    let mut run = Run { state, events: Vec::new(), t: 0.0 };
    run.send(
        0.0,
        EventKind::SessionStarted(SessionStart {
            scenario_id: scenario.id().to_string(),
            scenario_version: scenario.version(),
            seed: session_seed,
            wall_clock: None,
        }),
    )?;

    while !run.state.is_ended() {
        let module = &scenario.modules()[run.state.cursor().module];
        let order: Vec<String> = match module.kind() {
            ModuleKind::Live => transposed_order(module.step_ids(), profile.sequencing_fidelity, &mut rng),
            _ => module.step_ids().into_iter().map(str::to_string).collect(),
        };
        let module_index = run.state.cursor().module;
        for step_id in order {
            run.play_step(profile, &step_id, &mut rng)?;
            if run.state.is_ended() || run.state.cursor().module != module_index {
                break;
            }
        }
    }
    let metrics = run.state.finalize().map_err(|source| SimError::Engine { seq: run.state.next_seq(), source })?;
    Ok(TraceBundle {
        scenario_id: scenario.id().to_string(),
        scenario_version: scenario.version(),
        session_id: run.state.session_id().to_string(),
        seed: session_seed,
        events: run.events,
        metrics: Some(metrics),
    })
}

/// Ground-truth order with each adjacent pair swapped with probability
/// `1 - fidelity`.
fn transposed_order(ids: Vec<&str>, fidelity: f64, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut order: Vec<String> = ids.into_iter().map(str::to_string).collect();
    for i in 0..order.len().saturating_sub(1) {
        if rng.random::<f64>() < 1.0 - fidelity {
            order.swap(i, i + 1);
        }
    }
    order
}

fn round_ms(t: f64) -> f64 {
    (t * 1000.0).round() / 1000.0
}

struct Run {
    state: SessionState,
    events: Vec<SessionEvent>,
    t: f64,
}

impl Run {
    fn send(&mut self, dt: f64, kind: EventKind) -> Result<(), SimError> {
        self.t = round_ms(self.t + dt);
        let ev = SessionEvent::new(self.state.session_id(), self.state.next_seq(), self.t, kind);
        self.state.submit_event(&ev).map_err(|source| SimError::Engine { seq: ev.seq, source })?;
        self.events.push(ev);
        Ok(())
    }

    fn play_step(&mut self, profile: &TraineeProfile, step_id: &str, rng: &mut ChaCha8Rng) -> Result<(), SimError> {
        self.send(STEP_GAP_S, EventKind::PromptShown { step_id: step_id.to_string() })?;
        let prompt =
            self.state.next_prompt().map_err(|source| SimError::Engine { seq: self.state.next_seq(), source })?;
        let mut budget = prompt.time_limit_s;
        if prompt.hint.is_some() && budget > HINT_READ_S {
            self.send(HINT_READ_S, EventKind::HintShown { step_id: step_id.to_string() })?;
            budget -= HINT_READ_S;
        }
        let model = profile.latency.for_kind(prompt.module_kind);
        let draw = truncated_normal(model, rng);
        let answer_correct = rng.random::<f64>() < profile.answer_accuracy;
        let timeout_roll = rng.random::<f64>();
        if draw >= budget && timeout_roll < profile.timeout_probability * (1.0 - profile.answer_accuracy) {
            return self.send(budget, EventKind::StepTimedOut { step_id: step_id.to_string() });
        }
        let latency = draw.min(budget).max(0.001);

        let scenario = self.state.scenario().clone();
        let module = &scenario.modules()[prompt.module_index];
        let position = module.position_of(step_id).expect("prompted step is in module");
        let is_correct = |id: &str| match module {
            crate::model::ModuleSpec::Mcq { items } => items[position].correct_option().is_some_and(|o| o.id == id),
            crate::model::ModuleSpec::Iq { items } => items[position].is_correct_target(id),
            crate::model::ModuleSpec::Live { situations } => situations[position].correct_action_id == id,
        };
        let (right, wrong): (Vec<_>, Vec<_>) = prompt.presented_options.iter().partition(|o| is_correct(&o.id));
        let pool = if answer_correct || wrong.is_empty() { &right } else { &wrong };
        let chosen = pool.choose(rng).expect("prompt presents a correct option").id.clone();
        let step_id = step_id.to_string();
        let kind = match prompt.module_kind {
            ModuleKind::Mcq => EventKind::AnswerSelected { step_id, option_id: chosen },
            ModuleKind::Iq => EventKind::TargetInteracted { step_id, target_id: chosen },
            ModuleKind::Live => EventKind::ActionPerformed { step_id, action_id: chosen },
        };
        self.send(latency, kind)
    }
}

/// Normal draw rejected until positive; falls back to the mean.
fn truncated_normal(model: LatencyModel, rng: &mut ChaCha8Rng) -> f64 {
    if model.std_s == 0.0 {
        return model.mean_s;
    }
    let normal = Normal::new(model.mean_s, model.std_s).expect("validated latency");
    (0..64).map(|_| normal.sample(rng)).find(|v| *v > 0.0).unwrap_or(model.mean_s)
}

/// Simulates `n_per_profile` sessions per profile in parallel. Session k of
/// every profile uses run seed `seed + k`.
pub fn simulate_cohort(
    profiles: &[TraineeProfile],
    scenario: Arc<Scenario>,
    n_per_profile: usize,
    seed: u64,
) -> Result<Vec<TraceBundle>, SimError> {
    if n_per_profile == 0 {
        return Err(SimError::InvalidCount);
    }
    let jobs: Vec<(&TraineeProfile, u64)> =
        profiles.iter().flat_map(|p| (0..n_per_profile as u64).map(move |k| (p, seed.wrapping_add(k)))).collect();
    jobs.into_par_iter().map(|(p, s)| simulate(p, scenario.clone(), s)).collect()
}

/// Writes bundles (scenario, events, metrics) into a store.
pub fn store_bundles(store: &MetricsStore, scenario: &Scenario, bundles: &[TraceBundle]) -> Result<(), SimError> {
    store.put_scenario(scenario)?;
    for b in bundles {
        for ev in &b.events {
            store.append_event(ev)?;
        }
        if let Some(m) = &b.metrics {
            store.put_metrics(m)?;
        }
    }
    Ok(())
}

/// Simulates, stores and reports a cohort.
pub fn run_cohort(
    store: &MetricsStore,
    profiles: &[TraineeProfile],
    scenario: Arc<Scenario>,
    n_per_profile: usize,
    seed: u64,
) -> Result<CohortReport, SimError> {
    let bundles = simulate_cohort(profiles, scenario.clone(), n_per_profile, seed)?;
    store_bundles(store, &scenario, &bundles)?;
    let filter =
        SessionFilter { scenario_id: Some(scenario.id().to_string()), scenario_version: Some(scenario.version()) };
    Ok(report_from_bundles(filter, &bundles, |id, v| store.scenario(id, v).ok())?)
}
