//! Session state machine.
//!
//! A session walks the scenario's modules in order. MCQ and IQ items are
//! presented strictly in sequence; inside a live module the trainee may
//! engage the pending situations in any order, and each attempt is scored
//! positionally against the ground-truth order. The engine has no clock:
//! time only enters through event timestamps, so replaying a log is exact.

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{
    DifficultyChange, DifficultyLevel, EventKind, ModuleKind, ModuleSpec, Scenario, SessionEvent, SessionMetrics,
    StepResult, StepScoreRule, SubtaskMetrics,
};
use crate::scoring::{self, ScoringError, StepTerminal};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error("session has ended; no further events are accepted")]
    SessionEnded,
    #[error("session is still active")]
    SessionActive,
    #[error("sequence gap: expected seq {expected}, got {got}")]
    SequenceGap { expected: u64, got: u64 },
    #[error("timestamp {got} precedes previous timestamp {last}")]
    TimeRegression { last: f64, got: f64 },
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("event belongs to session `{got}`, expected `{expected}`")]
    SessionMismatch { expected: String, got: String },
    #[error("log was recorded with seed {logged}, replay requested seed {requested}")]
    SeedMismatch { logged: u64, requested: u64 },
    #[error("log targets scenario {logged}, replay scenario is {requested}")]
    ScenarioMismatch { logged: String, requested: String },
    #[error("log ends before the session finished")]
    IncompleteLog,
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

impl EngineError {
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::SessionEnded => "session-ended",
            EngineError::SessionActive => "session-active",
            EngineError::SequenceGap { .. } => "sequence-gap",
            EngineError::TimeRegression { .. } => "time-regression",
            EngineError::ProtocolViolation(_) => "protocol-violation",
            EngineError::SessionMismatch { .. } => "session-mismatch",
            EngineError::SeedMismatch { .. } => "seed-mismatch",
            EngineError::ScenarioMismatch { .. } => "scenario-mismatch",
            EngineError::IncompleteLog => "incomplete-log",
            EngineError::Scoring(e) => e.code(),
        }
    }
}

fn violation(msg: impl Into<String>) -> EngineError {
    EngineError::ProtocolViolation(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionMode {
    /// Fresh random session id.
    Live,
    /// Session id derived from the seed, so whole runs are reproducible.
    Replay,
}

/// Difficulty adaptation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationPolicy {
    /// Number of most recent steps considered.
    pub window: usize,
    /// A correct step is "fast" when its duration is below this fraction of
    /// the presented time limit.
    pub fast_fraction: f64,
    /// Module kinds whose steps feed the window.
    pub enabled_for: Vec<ModuleKind>,
    /// Time-limit multiplier for levels 1, 2, 3.
    pub time_multipliers: [f64; 3],
}

impl Default for AdaptationPolicy {
    fn default() -> Self {
        AdaptationPolicy {
            window: 3,
            fast_fraction: 0.5,
            enabled_for: vec![ModuleKind::Live],
            time_multipliers: [1.0, 1.0, 0.75],
        }
    }
}

impl AdaptationPolicy {
    pub fn all_modules() -> Self {
        AdaptationPolicy { enabled_for: ModuleKind::ALL.to_vec(), ..Self::default() }
    }

    fn multiplier(&self, d: DifficultyLevel) -> f64 {
        self.time_multipliers[usize::from(d.level()) - 1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub adaptation: AdaptationPolicy,
    pub initial_difficulty: DifficultyLevel,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig { adaptation: AdaptationPolicy::default(), initial_difficulty: DifficultyLevel::CANONICAL }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cursor {
    pub module: usize,
    /// Steps already recorded in the current module.
    pub item: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresentedOption {
    pub id: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub step_id: String,
    pub step_index: usize,
    pub module_index: usize,
    pub module_kind: ModuleKind,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub asset_refs: Vec<String>,
    pub presented_options: Vec<PresentedOption>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hint: Option<String>,
    pub time_limit_s: f64,
    pub difficulty: DifficultyLevel,
    /// Live modules only: situations not yet attempted, in presentation order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pending_steps: Vec<String>,
}

impl Prompt {
    pub fn offers(&self, id: &str) -> bool {
        self.presented_options.iter().any(|o| o.id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdaptationChange {
    pub from: DifficultyLevel,
    pub to: DifficultyLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub step_result: StepResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adaptation_applied: Option<AdaptationChange>,
    pub session_finished: bool,
}

/// The step currently on screen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenStep {
    pub prompt: Prompt,
    /// Ground-truth index of the step within its module.
    pub position: usize,
    pub shown_at: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct WindowEntry {
    correct: bool,
    fast: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    session_id: String,
    scenario: Arc<Scenario>,
    mode: SessionMode,
    rng_seed: u64,
    config: EngineConfig,
    cursor: Cursor,
    difficulty: DifficultyLevel,
    step_results: Vec<StepResult>,
    window: VecDeque<WindowEntry>,
    difficulty_changes: Vec<DifficultyChange>,
    attempted: HashSet<String>,
    open: Option<OpenStep>,
    started: bool,
    ended: bool,
    next_seq: u64,
    started_at: f64,
    last_timestamp: f64,
    interactions: u64,
}

/// Starts a session at the first step with the configured difficulty.
pub fn create_session(scenario: Arc<Scenario>, seed: u64, mode: SessionMode) -> SessionState {
    SessionState::new(scenario, seed, mode, EngineConfig::default())
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// Session id derived from a seed; stable across runs and platforms.
pub fn derived_session_id(seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x5e55_1011));
    let mut bytes = [0u8; 16];
    rng.fill_bytes(&mut bytes);
    uuid::Builder::from_random_bytes(bytes).into_uuid().to_string()
}

impl SessionState {
    pub fn new(scenario: Arc<Scenario>, seed: u64, mode: SessionMode, config: EngineConfig) -> Self {
        let session_id = match mode {
            SessionMode::Live => uuid::Uuid::new_v4().to_string(),
            SessionMode::Replay => derived_session_id(seed),
        };
        SessionState {
            session_id,
            scenario,
            mode,
            rng_seed: seed,
            difficulty: config.initial_difficulty,
            config,
            cursor: Cursor { module: 0, item: 0 },
            step_results: Vec::new(),
            window: VecDeque::new(),
            difficulty_changes: Vec::new(),
            attempted: HashSet::new(),
            open: None,
            started: false,
            ended: false,
            next_seq: 0,
            started_at: 0.0,
            last_timestamp: 0.0,
            interactions: 0,
        }
    }

    /// Replaces the session id, e.g. to resume a log recorded under a live id.
    pub fn with_session_id(mut self, id: impl Into<String>) -> Self {
        self.session_id = id.into();
        self
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn scenario(&self) -> &Arc<Scenario> {
        &self.scenario
    }

    pub fn mode(&self) -> SessionMode {
        self.mode
    }

    pub fn seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn cursor(&self) -> Cursor {
        self.cursor
    }

    pub fn difficulty(&self) -> DifficultyLevel {
        self.difficulty
    }

    pub fn step_results(&self) -> &[StepResult] {
        &self.step_results
    }

    pub fn difficulty_changes(&self) -> &[DifficultyChange] {
        &self.difficulty_changes
    }

    pub fn open_step(&self) -> Option<&OpenStep> {
        self.open.as_ref()
    }

    pub fn is_started(&self) -> bool {
        self.started
    }

    pub fn is_ended(&self) -> bool {
        self.ended
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn last_timestamp(&self) -> f64 {
        self.last_timestamp
    }

    fn module(&self) -> Option<&ModuleSpec> {
        self.scenario.modules().get(self.cursor.module)
    }

    /// Steps the trainee may open next (one for MCQ/IQ, every pending
    /// situation in a live module), in ground-truth order.
    pub fn eligible_steps(&self) -> Vec<String> {
        let Some(module) = self.module() else {
            return Vec::new();
        };
        let ids = module.step_ids();
        match module.kind() {
            ModuleKind::Live => {
                ids.into_iter().filter(|id| !self.attempted.contains(*id)).map(str::to_string).collect()
            }
            _ => ids.get(self.cursor.item).map(|s| vec![s.to_string()]).unwrap_or_default(),
        }
    }

    /// The prompt on screen, or the default next step's prompt.
    pub fn next_prompt(&self) -> Result<Prompt, EngineError> {
        if self.ended {
            return Err(EngineError::SessionEnded);
        }
        if let Some(open) = &self.open {
            return Ok(open.prompt.clone());
        }
        let first = self.eligible_steps().into_iter().next().ok_or(EngineError::SessionEnded)?;
        self.prompt_for(&first)
    }

    /// Prompt for a specific eligible step at the current difficulty.
    pub fn prompt_for(&self, step_id: &str) -> Result<Prompt, EngineError> {
        if self.ended {
            return Err(EngineError::SessionEnded);
        }
        if !self.eligible_steps().iter().any(|s| s == step_id) {
            return Err(violation(format!("step `{step_id}` cannot be opened now")));
        }
        let module = self.module().expect("eligible step implies a current module");
        let position = module.position_of(step_id).expect("eligible step is in module");
        let step_index = self.step_results.len();
        let mut rng =
            ChaCha8Rng::seed_from_u64(splitmix64(self.rng_seed ^ splitmix64(step_index as u64) ^ fnv1a(step_id)));
        let level = self.difficulty;
        let assisted = level == DifficultyLevel::ASSISTED;
        let (text, assets, choices, hint, base_limit): (_, Vec<String>, Vec<Choice>, _, _) = match module {
            ModuleSpec::Mcq { items } => {
                let it = &items[position];
                let choices = it
                    .options
                    .iter()
                    .map(|o| Choice { id: &o.id, label: &o.text, rank: o.distractor_rank, correct: o.correct })
                    .collect();
                (&it.prompt, it.asset_refs.clone(), choices, &it.hint, it.time_limit_s)
            }
            ModuleSpec::Iq { items } => {
                let it = &items[position];
                let choices = it
                    .targets
                    .iter()
                    .map(|t| Choice { id: &t.id, label: &t.label, rank: 0, correct: it.is_correct_target(&t.id) })
                    .collect();
                let assets =
                    it.targets.iter().filter(|t| !t.asset_ref.is_empty()).map(|t| t.asset_ref.clone()).collect();
                (&it.prompt, assets, choices, &it.hint, it.time_limit_s)
            }
            ModuleSpec::Live { situations } => {
                let s = &situations[position];
                let choices = s
                    .action_options
                    .iter()
                    .map(|a| Choice {
                        id: &a.id,
                        label: &a.label,
                        rank: a.distractor_rank,
                        correct: a.id == s.correct_action_id,
                    })
                    .collect();
                (&s.prompt, Vec::new(), choices, &s.hint, s.base_time_limit_s)
            }
        };
        let mut presented = present_choices(&choices, level);
        presented.shuffle(&mut rng);
        let mut pending = Vec::new();
        if module.kind() == ModuleKind::Live {
            pending = self.eligible_steps();
            pending.shuffle(&mut rng);
        }
        Ok(Prompt {
            step_id: step_id.to_string(),
            step_index,
            module_index: self.cursor.module,
            module_kind: module.kind(),
            text: text.clone(),
            asset_refs: assets,
            presented_options: presented,
            hint: if assisted { hint.clone() } else { None },
            time_limit_s: base_limit * self.config.adaptation.multiplier(level),
            difficulty: level,
            pending_steps: pending,
        })
    }

    /// Validates and applies one event. On error the state is untouched.
    /// Returns the recorded step when the event closed one.
    pub fn submit_event(&mut self, event: &SessionEvent) -> Result<Option<StepOutcome>, EngineError> {
        if self.ended {
            return Err(EngineError::SessionEnded);
        }
        if event.seq != self.next_seq {
            return Err(EngineError::SequenceGap { expected: self.next_seq, got: event.seq });
        }
        if self.started && event.session_id != self.session_id {
            return Err(EngineError::SessionMismatch {
                expected: self.session_id.clone(),
                got: event.session_id.clone(),
            });
        }
        if !event.timestamp_s.is_finite() || (self.started && event.timestamp_s < self.last_timestamp) {
            return Err(EngineError::TimeRegression { last: self.last_timestamp, got: event.timestamp_s });
        }
        let ts = event.timestamp_s;

        if !self.started {
            let EventKind::SessionStarted(start) = &event.kind else {
                return Err(violation(format!(
                    "first event must be SessionStarted, got {}",
                    event.kind.tag().as_str()
                )));
            };
            if start.seed != self.rng_seed {
                return Err(EngineError::SeedMismatch { logged: start.seed, requested: self.rng_seed });
            }
            if start.scenario_id != self.scenario.id() || start.scenario_version != self.scenario.version() {
                return Err(EngineError::ScenarioMismatch {
                    logged: format!("{}@{}", start.scenario_id, start.scenario_version),
                    requested: format!("{}@{}", self.scenario.id(), self.scenario.version()),
                });
            }
            if event.session_id != self.session_id {
                return Err(EngineError::SessionMismatch {
                    expected: self.session_id.clone(),
                    got: event.session_id.clone(),
                });
            }
            self.started = true;
            self.started_at = ts;
            self.commit(ts);
            return Ok(None);
        }

        let outcome = match (&self.open, &event.kind) {
            (_, EventKind::SessionStarted(_)) => return Err(violation("session already started")),
            (None, EventKind::PromptShown { step_id }) => {
                let prompt = self.prompt_for(step_id)?;
                let position = self.module().and_then(|m| m.position_of(step_id)).expect("eligible");
                self.open = Some(OpenStep { prompt, position, shown_at: ts });
                None
            }
            (None, EventKind::SessionEnded { .. }) => {
                self.ended = true;
                None
            }
            (None, other) => {
                return Err(violation(format!("{} with no prompt shown", other.tag().as_str())));
            }
            (Some(_), EventKind::PromptShown { .. }) => {
                return Err(violation("a prompt is already open"));
            }
            (Some(open), EventKind::HintShown { step_id }) => {
                if *step_id != open.prompt.step_id {
                    return Err(violation(format!("hint for `{step_id}` but `{}` is open", open.prompt.step_id)));
                }
                if open.prompt.hint.is_none() {
                    return Err(violation("current prompt has no hint to show"));
                }
                None
            }
            (Some(open), kind) => {
                let open = open.clone();
                let terminal = classify_terminal(&open, kind)?;
                if matches!(terminal, Terminal::Abandoned) {
                    self.ended = true;
                }
                Some(self.record_step(open, terminal, ts))
            }
        };
        if event.kind.is_interaction() {
            self.interactions += 1;
        }
        self.commit(ts);
        if let Some(o) = outcome {
            return Ok(Some(StepOutcome { session_finished: self.ended, ..o }));
        }
        Ok(None)
    }

    fn commit(&mut self, ts: f64) {
        self.next_seq += 1;
        self.last_timestamp = ts;
    }

    fn record_step(&mut self, open: OpenStep, terminal: Terminal, ts: f64) -> StepOutcome {
        let prompt = &open.prompt;
        let scenario = Arc::clone(&self.scenario);
        let module = &scenario.modules()[prompt.module_index];
        let (completed, chosen) = match &terminal {
            Terminal::Submitted(id) => (scoring::task_completion(StepTerminal::Submitted), Some(id.clone())),
            Terminal::TimedOut => (scoring::task_completion(StepTerminal::TimedOut), None),
            Terminal::Abandoned => (scoring::task_completion(StepTerminal::Abandoned), None),
        };
        let correct = chosen.as_deref().is_some_and(|c| is_correct(module, open.position, c));
        let position_matched =
            (module.kind() == ModuleKind::Live).then(|| u8::from(completed == 1 && open.position == self.cursor.item));
        let result = StepResult {
            item_ref: prompt.step_id.clone(),
            module_index: prompt.module_index,
            module_kind: prompt.module_kind,
            completed,
            correct,
            duration_s: ts - open.shown_at,
            time_limit_s: prompt.time_limit_s,
            chosen_id: chosen,
            position_matched,
            difficulty_at_step: prompt.difficulty,
        };
        self.step_results.push(result.clone());
        self.open = None;
        self.attempted.insert(prompt.step_id.clone());

        let mut adaptation = None;
        if !self.ended && self.config.adaptation.enabled_for.contains(&result.module_kind) {
            let fast =
                result.completed == 1 && result.duration_s < self.config.adaptation.fast_fraction * result.time_limit_s;
            self.window.push_back(WindowEntry { correct: result.correct, fast });
            while self.window.len() > self.config.adaptation.window {
                self.window.pop_front();
            }
            adaptation = self.adapt();
        }

        self.cursor.item += 1;
        if self.cursor.item >= module.len() {
            self.cursor = Cursor { module: self.cursor.module + 1, item: 0 };
            self.attempted.clear();
            if self.cursor.module >= self.scenario.modules().len() {
                self.ended = true;
            }
        }
        StepOutcome { step_result: result, adaptation_applied: adaptation, session_finished: self.ended }
    }

    /// Applies the window rule: K misses in a row step down, K fast correct
    /// steps step up. The window is cleared whenever the level changes.
    pub fn adapt(&mut self) -> Option<AdaptationChange> {
        let k = self.config.adaptation.window;
        if k == 0 || self.window.len() < k {
            return None;
        }
        let from = self.difficulty;
        let to = if self.window.iter().all(|w| !w.correct) {
            from.easier()
        } else if self.window.iter().all(|w| w.correct && w.fast) {
            from.harder()
        } else {
            from
        };
        if to == from {
            return None;
        }
        self.difficulty = to;
        self.window.clear();
        self.difficulty_changes.push(DifficultyChange {
            after_step: self.step_results.len().saturating_sub(1),
            from,
            to,
        });
        Some(AdaptationChange { from, to })
    }

    /// Computes session metrics from the recorded steps.
    pub fn finalize(&self) -> Result<SessionMetrics, EngineError> {
        if !self.ended {
            return Err(EngineError::SessionActive);
        }
        let rule = self.scenario.step_score();
        let mut per_subtask = Vec::new();
        for (mi, module) in self.scenario.modules().iter().enumerate() {
            let steps: Vec<&StepResult> = self.step_results.iter().filter(|r| r.module_index == mi).collect();
            per_subtask.push(subtask_metrics(mi, module, &steps, rule)?);
        }
        let total = self.last_timestamp - self.started_at;
        let engagement = if total > 0.0 { scoring::engagement_frequency(self.interactions, total)? } else { 0.0 };
        Ok(SessionMetrics {
            session_id: self.session_id.clone(),
            scenario_id: self.scenario.id().to_string(),
            scenario_version: self.scenario.version(),
            per_subtask,
            interaction_count: self.interactions,
            engagement_frequency: engagement,
            total_duration_s: total,
            final_difficulty: self.difficulty,
            difficulty_changes: self.difficulty_changes.clone(),
        })
    }
}

struct Choice<'a> {
    id: &'a str,
    label: &'a str,
    rank: u32,
    correct: bool,
}

/// Drops distractors for the assisted level: highest rank first, later
/// entries first among equal ranks. Correct choices are never dropped.
fn present_choices(choices: &[Choice<'_>], level: DifficultyLevel) -> Vec<PresentedOption> {
    let n = choices.len();
    let keep = if level == DifficultyLevel::ASSISTED { (n.saturating_sub(1)).max(2).min(n) } else { n };
    let mut droppable: Vec<usize> = (0..n).filter(|&i| !choices[i].correct).collect();
    droppable.sort_by(|&a, &b| choices[b].rank.cmp(&choices[a].rank).then(b.cmp(&a)));
    let dropped: HashSet<usize> = droppable.into_iter().take(n - keep).collect();
    choices
        .iter()
        .enumerate()
        .filter(|(i, _)| !dropped.contains(i))
        .map(|(_, c)| PresentedOption { id: c.id.to_string(), label: c.label.to_string() })
        .collect()
}

enum Terminal {
    Submitted(String),
    TimedOut,
    Abandoned,
}

fn classify_terminal(open: &OpenStep, kind: &EventKind) -> Result<Terminal, EngineError> {
    let expect_step = |step_id: &str| {
        if step_id == open.prompt.step_id {
            Ok(())
        } else {
            Err(violation(format!("event for `{step_id}` but `{}` is open", open.prompt.step_id)))
        }
    };
    let submitted = |step_id: &str, chosen: &str, wanted: ModuleKind| {
        expect_step(step_id)?;
        if open.prompt.module_kind != wanted {
            return Err(violation(format!("{} step cannot take this kind of answer", open.prompt.module_kind)));
        }
        if !open.prompt.offers(chosen) {
            return Err(violation(format!("`{chosen}` was not presented for `{step_id}`")));
        }
        Ok(Terminal::Submitted(chosen.to_string()))
    };
    match kind {
        EventKind::AnswerSelected { step_id, option_id } => submitted(step_id, option_id, ModuleKind::Mcq),
        EventKind::TargetInteracted { step_id, target_id } => submitted(step_id, target_id, ModuleKind::Iq),
        EventKind::ActionPerformed { step_id, action_id } => submitted(step_id, action_id, ModuleKind::Live),
        EventKind::StepTimedOut { step_id } => {
            expect_step(step_id)?;
            Ok(Terminal::TimedOut)
        }
        EventKind::SessionEnded { .. } => Ok(Terminal::Abandoned),
        other => Err(violation(format!("unexpected {}", other.tag().as_str()))),
    }
}

fn is_correct(module: &ModuleSpec, position: usize, chosen: &str) -> bool {
    match module {
        ModuleSpec::Mcq { items } => items[position].correct_option().is_some_and(|o| o.id == chosen),
        ModuleSpec::Iq { items } => items[position].is_correct_target(chosen),
        ModuleSpec::Live { situations } => situations[position].correct_action_id == chosen,
    }
}

fn subtask_metrics(
    module_index: usize,
    module: &ModuleSpec,
    steps: &[&StepResult],
    rule: StepScoreRule,
) -> Result<SubtaskMetrics, EngineError> {
    let n = steps.len() as u64;
    let completed: Vec<f64> = steps.iter().filter(|r| r.completed == 1).map(|r| r.duration_s).collect();
    let successes = steps.iter().filter(|r| r.correct).count() as u64;
    let ratio = |k: u64| if n == 0 { Ok(0.0) } else { scoring::success_rate::<f64>(k, n) };
    let weighted: Vec<(f64, f64)> = steps
        .iter()
        .map(|r| {
            let pos = module.position_of(&r.item_ref).expect("recorded step belongs to module");
            let score = match rule {
                StepScoreRule::Correctness => f64::from(u8::from(r.correct)),
                StepScoreRule::Completion => f64::from(r.completed),
            };
            (score, module.step_weight(pos).expect("weight"))
        })
        .collect();
    let mut m = SubtaskMetrics {
        module_index,
        module_kind: module.kind(),
        steps: steps.len(),
        completed_steps: completed.len(),
        successful_steps: successes as usize,
        completion_rate: ratio(completed.len() as u64)?,
        avg_task_time_s: match scoring::average_task_time(&completed) {
            Ok(t) => t,
            Err(ScoringError::NoCompletedTasks) => 0.0,
            Err(e) => return Err(e.into()),
        },
        success_rate: ratio(successes)?,
        weighted_score: scoring::weighted_score(&weighted)?,
        order_matches: None,
        order_accuracy_x: None,
        action_correctness_y: None,
        vrtss: None,
    };
    if let ModuleSpec::Live { situations } = module {
        let expected: Vec<Option<&str>> = situations.iter().map(|s| Some(s.id.as_str())).collect();
        // A step without an action occupies its position but matches nothing.
        let performed: Vec<Option<&str>> =
            steps.iter().map(|r| (r.completed == 1).then_some(r.item_ref.as_str())).collect();
        let order = scoring::order_accuracy::<f64, _>(&expected, &performed)?;
        let actions: HashMap<String, String> =
            steps.iter().filter_map(|r| r.chosen_id.as_ref().map(|c| (r.item_ref.clone(), c.clone()))).collect();
        let y = scoring::action_correctness::<f64>(situations, &actions)?;
        m.vrtss = Some(scoring::vrtss(order.x, y)?);
        m.order_accuracy_x = Some(order.x);
        m.action_correctness_y = Some(y);
        m.order_matches = Some(order.matches);
    }
    Ok(m)
}

/// Error raised while replaying a log, tagged with the offending seq.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("at seq {seq}: {source}")]
pub struct ReplayError {
    pub seq: u64,
    #[source]
    pub source: EngineError,
}

impl ReplayError {
    pub fn code(&self) -> &'static str {
        self.source.code()
    }
}

/// Outcome of replaying a complete log.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayRun {
    pub state: SessionState,
    pub metrics: SessionMetrics,
}

pub fn replay(scenario: Arc<Scenario>, events: &[SessionEvent], seed: u64) -> Result<SessionMetrics, ReplayError> {
    replay_with_config(scenario, events, seed, EngineConfig::default()).map(|r| r.metrics)
}

/// Re-drives a recorded log through a fresh engine. The session id is taken
/// from the log; the seed must match the one the log was recorded with.
pub fn replay_with_config(
    scenario: Arc<Scenario>,
    events: &[SessionEvent],
    seed: u64,
    config: EngineConfig,
) -> Result<ReplayRun, ReplayError> {
    let Some(first) = events.first() else {
        return Err(ReplayError { seq: 0, source: EngineError::IncompleteLog });
    };
    let mut state =
        SessionState::new(scenario, seed, SessionMode::Replay, config).with_session_id(first.session_id.clone());
    for ev in events {
        state.submit_event(ev).map_err(|source| {
            let seq = match source {
                EngineError::SequenceGap { expected, .. } => expected,
                _ => ev.seq,
            };
            ReplayError { seq, source }
        })?;
    }
    let metrics = state
        .finalize()
        .map_err(|_| ReplayError { seq: events.last().map_or(0, |e| e.seq), source: EngineError::IncompleteLog })?;
    Ok(ReplayRun { state, metrics })
}
