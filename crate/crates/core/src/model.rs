//! Domain types shared by the parser, engine, store and reports.
//!
//! Item-level types are plain data with validating constructors. A
//! [`Scenario`] can only be obtained through [`Scenario::new`] (or by
//! deserializing, which goes through the same path), so everything the
//! engine receives has passed [`crate::parser::validate_scenario`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::parser::{validate_scenario, ParseDiagnostic, Severity};

pub const MIN_OPTIONS: usize = 2;
pub const MAX_OPTIONS: usize = 6;
pub const MIN_TARGETS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("difficulty level {0} is outside 1..=3")]
    DifficultyOutOfRange(u8),
    #[error("invalid scenario: {}", summarize(.0))]
    InvalidScenario(Vec<ParseDiagnostic>),
    #[error("invalid item `{id}`: {reason}")]
    InvalidItem { id: String, reason: String },
}

impl ModelError {
    pub fn code(&self) -> &'static str {
        match self {
            ModelError::DifficultyOutOfRange(_) => "difficulty-out-of-range",
            ModelError::InvalidScenario(_) => "invalid-scenario",
            ModelError::InvalidItem { .. } => "invalid-item",
        }
    }
}

fn summarize(diags: &[ParseDiagnostic]) -> String {
    diags
        .iter()
        .filter(|d| d.severity == Severity::Error)
        .map(|d| format!("{} at {}", d.code, d.location.path))
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModuleKind {
    Mcq,
    Iq,
    Live,
}

impl ModuleKind {
    pub const ALL: [ModuleKind; 3] = [ModuleKind::Mcq, ModuleKind::Iq, ModuleKind::Live];

    pub fn as_str(self) -> &'static str {
        match self {
            ModuleKind::Mcq => "mcq",
            ModuleKind::Iq => "iq",
            ModuleKind::Live => "live",
        }
    }

    /// Column label used in cohort reports.
    pub fn report_label(self) -> &'static str {
        match self {
            ModuleKind::Mcq => "MCQ",
            ModuleKind::Iq => "Interactive",
            ModuleKind::Live => "LiveScenario",
        }
    }
}

impl fmt::Display for ModuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Presentation difficulty: 1 = assisted, 2 = canonical, 3 = challenge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct DifficultyLevel(u8);

impl DifficultyLevel {
    pub const ASSISTED: DifficultyLevel = DifficultyLevel(1);
    pub const CANONICAL: DifficultyLevel = DifficultyLevel(2);
    pub const CHALLENGE: DifficultyLevel = DifficultyLevel(3);
    pub const ALL: [DifficultyLevel; 3] = [Self::ASSISTED, Self::CANONICAL, Self::CHALLENGE];

    pub fn new(level: u8) -> Result<Self, ModelError> {
        if (1..=3).contains(&level) {
            Ok(DifficultyLevel(level))
        } else {
            Err(ModelError::DifficultyOutOfRange(level))
        }
    }

    pub fn level(self) -> u8 {
        self.0
    }

    pub fn easier(self) -> Self {
        DifficultyLevel(self.0.saturating_sub(1).max(1))
    }

    pub fn harder(self) -> Self {
        DifficultyLevel((self.0 + 1).min(3))
    }
}

impl Default for DifficultyLevel {
    fn default() -> Self {
        Self::CANONICAL
    }
}

impl TryFrom<u8> for DifficultyLevel {
    type Error = ModelError;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        DifficultyLevel::new(v)
    }
}

impl From<DifficultyLevel> for u8 {
    fn from(d: DifficultyLevel) -> u8 {
        d.0
    }
}

impl fmt::Display for DifficultyLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// How the per-step score entering the weighted sum is derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepScoreRule {
    /// 1 for a correct step, 0 otherwise.
    #[default]
    Correctness,
    /// 1 for any submitted step, regardless of correctness.
    Completion,
}

impl StepScoreRule {
    pub fn as_str(self) -> &'static str {
        match self {
            StepScoreRule::Correctness => "correctness",
            StepScoreRule::Completion => "completion",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerOption {
    pub id: String,
    pub text: String,
    pub correct: bool,
    #[serde(default)]
    pub distractor_rank: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McqItem {
    pub id: String,
    pub prompt: String,
    #[serde(default)]
    pub asset_refs: Vec<String>,
    pub options: Vec<AnswerOption>,
    pub weight: f64,
    pub time_limit_s: f64,
    #[serde(default)]
    pub hint: Option<String>,
}

impl McqItem {
    pub fn new(
        id: impl Into<String>,
        prompt: impl Into<String>,
        options: Vec<AnswerOption>,
        weight: f64,
        time_limit_s: f64,
    ) -> Result<Self, ModelError> {
        let item = McqItem {
            id: id.into(),
            prompt: prompt.into(),
            asset_refs: Vec::new(),
            options,
            weight,
            time_limit_s,
            hint: None,
        };
        check_item(&item.id, ModuleSpec::Mcq { items: vec![item.clone()] })?;
        Ok(item)
    }

    pub fn correct_option(&self) -> Option<&AnswerOption> {
        self.options.iter().find(|o| o.correct)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionTarget {
    pub id: String,
    pub label: String,
    #[serde(default)]
    pub asset_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IqItem {
    pub id: String,
    pub prompt: String,
    pub targets: Vec<InteractionTarget>,
    /// Selecting any one of these counts as correct.
    pub correct_target_ids: Vec<String>,
    pub weight: f64,
    pub time_limit_s: f64,
    #[serde(default)]
    pub hint: Option<String>,
}

impl IqItem {
    pub fn new(
        id: impl Into<String>,
        prompt: impl Into<String>,
        targets: Vec<InteractionTarget>,
        correct_target_ids: Vec<String>,
        weight: f64,
        time_limit_s: f64,
    ) -> Result<Self, ModelError> {
        let item = IqItem {
            id: id.into(),
            prompt: prompt.into(),
            targets,
            correct_target_ids,
            weight,
            time_limit_s,
            hint: None,
        };
        check_item(&item.id, ModuleSpec::Iq { items: vec![item.clone()] })?;
        Ok(item)
    }

    pub fn is_correct_target(&self, target_id: &str) -> bool {
        self.correct_target_ids.iter().any(|t| t == target_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionOption {
    pub id: String,
    pub label: String,
    #[serde(default)]
    pub distractor_rank: u32,
}

/// One step of a live scenario. Its ground-truth position is its index in
/// the owning module's situation list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Situation {
    pub id: String,
    pub prompt: String,
    pub action_options: Vec<ActionOption>,
    pub correct_action_id: String,
    pub weight: f64,
    pub base_time_limit_s: f64,
    #[serde(default)]
    pub hint: Option<String>,
}

impl Situation {
    pub fn new(
        id: impl Into<String>,
        prompt: impl Into<String>,
        action_options: Vec<ActionOption>,
        correct_action_id: impl Into<String>,
        weight: f64,
        base_time_limit_s: f64,
    ) -> Result<Self, ModelError> {
        let s = Situation {
            id: id.into(),
            prompt: prompt.into(),
            action_options,
            correct_action_id: correct_action_id.into(),
            weight,
            base_time_limit_s,
            hint: None,
        };
        check_item(&s.id, ModuleSpec::Live { situations: vec![s.clone()] })?;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModuleSpec {
    Mcq { items: Vec<McqItem> },
    Iq { items: Vec<IqItem> },
    Live { situations: Vec<Situation> },
}

impl ModuleSpec {
    pub fn kind(&self) -> ModuleKind {
        match self {
            ModuleSpec::Mcq { .. } => ModuleKind::Mcq,
            ModuleSpec::Iq { .. } => ModuleKind::Iq,
            ModuleSpec::Live { .. } => ModuleKind::Live,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ModuleSpec::Mcq { items } => items.len(),
            ModuleSpec::Iq { items } => items.len(),
            ModuleSpec::Live { situations } => situations.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn step_ids(&self) -> Vec<&str> {
        match self {
            ModuleSpec::Mcq { items } => items.iter().map(|i| i.id.as_str()).collect(),
            ModuleSpec::Iq { items } => items.iter().map(|i| i.id.as_str()).collect(),
            ModuleSpec::Live { situations } => situations.iter().map(|s| s.id.as_str()).collect(),
        }
    }

    pub fn step_weight(&self, index: usize) -> Option<f64> {
        match self {
            ModuleSpec::Mcq { items } => items.get(index).map(|i| i.weight),
            ModuleSpec::Iq { items } => items.get(index).map(|i| i.weight),
            ModuleSpec::Live { situations } => situations.get(index).map(|s| s.weight),
        }
    }

    pub fn position_of(&self, step_id: &str) -> Option<usize> {
        self.step_ids().iter().position(|id| *id == step_id)
    }
}

fn check_item(id: &str, module: ModuleSpec) -> Result<(), ModelError> {
    let draft = ScenarioDraft {
        id: "_".into(),
        title: String::new(),
        version: 1,
        step_score: StepScoreRule::default(),
        modules: vec![module],
    };
    let errors: Vec<_> = validate_scenario(&draft).into_iter().filter(|d| d.severity == Severity::Error).collect();
    if errors.is_empty() {
        Ok(())
    } else {
        Err(ModelError::InvalidItem { id: id.to_string(), reason: summarize(&errors) })
    }
}

/// Unvalidated scenario content, as produced by the parser before checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDraft {
    pub id: String,
    pub title: String,
    pub version: u32,
    #[serde(default)]
    pub step_score: StepScoreRule,
    pub modules: Vec<ModuleSpec>,
}

/// A validated training scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScenarioDraft", into = "ScenarioDraft")]
pub struct Scenario {
    id: String,
    title: String,
    version: u32,
    step_score: StepScoreRule,
    modules: Vec<ModuleSpec>,
}

impl Scenario {
    pub fn new(
        id: impl Into<String>,
        title: impl Into<String>,
        version: u32,
        modules: Vec<ModuleSpec>,
    ) -> Result<Self, ModelError> {
        Scenario::try_from(ScenarioDraft {
            id: id.into(),
            title: title.into(),
            version,
            step_score: StepScoreRule::default(),
            modules,
        })
    }

    pub fn with_step_score(mut self, rule: StepScoreRule) -> Self {
        self.step_score = rule;
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn title(&self) -> &str {
        &self.title
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn step_score(&self) -> StepScoreRule {
        self.step_score
    }

    pub fn modules(&self) -> &[ModuleSpec] {
        &self.modules
    }

    pub fn total_steps(&self) -> usize {
        self.modules.iter().map(ModuleSpec::len).sum()
    }

    pub fn has_live_module(&self) -> bool {
        self.modules.iter().any(|m| m.kind() == ModuleKind::Live)
    }

    pub fn to_draft(&self) -> ScenarioDraft {
        ScenarioDraft::from(self.clone())
    }
}

impl TryFrom<ScenarioDraft> for Scenario {
    type Error = ModelError;

    fn try_from(draft: ScenarioDraft) -> Result<Self, Self::Error> {
        let diags = validate_scenario(&draft);
        if diags.iter().any(|d| d.severity == Severity::Error) {
            return Err(ModelError::InvalidScenario(diags));
        }
        Ok(Scenario {
            id: draft.id,
            title: draft.title,
            version: draft.version,
            step_score: draft.step_score,
            modules: draft.modules,
        })
    }
}

impl From<Scenario> for ScenarioDraft {
    fn from(s: Scenario) -> Self {
        ScenarioDraft { id: s.id, title: s.title, version: s.version, step_score: s.step_score, modules: s.modules }
    }
}

/// Metadata recorded once when a session starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStart {
    pub scenario_id: String,
    pub scenario_version: u32,
    pub seed: u64,
    /// Wall-clock start time (RFC 3339), informational only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKindTag {
    SessionStarted,
    PromptShown,
    AnswerSelected,
    TargetInteracted,
    ActionPerformed,
    StepTimedOut,
    HintShown,
    SessionEnded,
}

impl EventKindTag {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKindTag::SessionStarted => "SessionStarted",
            EventKindTag::PromptShown => "PromptShown",
            EventKindTag::AnswerSelected => "AnswerSelected",
            EventKindTag::TargetInteracted => "TargetInteracted",
            EventKindTag::ActionPerformed => "ActionPerformed",
            EventKindTag::StepTimedOut => "StepTimedOut",
            EventKindTag::HintShown => "HintShown",
            EventKindTag::SessionEnded => "SessionEnded",
        }
    }
}

/// Event kind together with its payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventKind {
    SessionStarted(SessionStart),
    PromptShown {
        step_id: String,
    },
    AnswerSelected {
        step_id: String,
        option_id: String,
    },
    TargetInteracted {
        step_id: String,
        target_id: String,
    },
    ActionPerformed {
        step_id: String,
        action_id: String,
    },
    StepTimedOut {
        step_id: String,
    },
    HintShown {
        step_id: String,
    },
    SessionEnded {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
    },
}

impl EventKind {
    pub fn tag(&self) -> EventKindTag {
        match self {
            EventKind::SessionStarted(_) => EventKindTag::SessionStarted,
            EventKind::PromptShown { .. } => EventKindTag::PromptShown,
            EventKind::AnswerSelected { .. } => EventKindTag::AnswerSelected,
            EventKind::TargetInteracted { .. } => EventKindTag::TargetInteracted,
            EventKind::ActionPerformed { .. } => EventKindTag::ActionPerformed,
            EventKind::StepTimedOut { .. } => EventKindTag::StepTimedOut,
            EventKind::HintShown { .. } => EventKindTag::HintShown,
            EventKind::SessionEnded { .. } => EventKindTag::SessionEnded,
        }
    }

    pub fn step_id(&self) -> Option<&str> {
        match self {
            EventKind::PromptShown { step_id }
            | EventKind::AnswerSelected { step_id, .. }
            | EventKind::TargetInteracted { step_id, .. }
            | EventKind::ActionPerformed { step_id, .. }
            | EventKind::StepTimedOut { step_id }
            | EventKind::HintShown { step_id } => Some(step_id),
            EventKind::SessionStarted(_) | EventKind::SessionEnded { .. } => None,
        }
    }

    /// Trainee-originated inputs counted by the engagement metric.
    pub fn is_interaction(&self) -> bool {
        matches!(
            self,
            EventKind::AnswerSelected { .. } | EventKind::TargetInteracted { .. } | EventKind::ActionPerformed { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub session_id: String,
    pub seq: u64,
    /// Seconds since session start.
    pub timestamp_s: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl SessionEvent {
    pub fn new(session_id: impl Into<String>, seq: u64, timestamp_s: f64, kind: EventKind) -> Self {
        SessionEvent { session_id: session_id.into(), seq, timestamp_s, kind }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub item_ref: String,
    pub module_index: usize,
    pub module_kind: ModuleKind,
    /// 1 if an answer/action was submitted before the step closed.
    pub completed: u8,
    pub correct: bool,
    pub duration_s: f64,
    pub time_limit_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen_id: Option<String>,
    /// Positional match (0/1) for live situations only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position_matched: Option<u8>,
    pub difficulty_at_step: DifficultyLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskMetrics {
    pub module_index: usize,
    pub module_kind: ModuleKind,
    pub steps: usize,
    pub completed_steps: usize,
    pub successful_steps: usize,
    pub completion_rate: f64,
    /// Mean duration of completed steps; 0 when nothing was completed.
    pub avg_task_time_s: f64,
    pub success_rate: f64,
    pub weighted_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order_matches: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order_accuracy_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_correctness_y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vrtss: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifficultyChange {
    /// Index of the step (in recording order) after which the change happened.
    pub after_step: usize,
    pub from: DifficultyLevel,
    pub to: DifficultyLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub session_id: String,
    pub scenario_id: String,
    pub scenario_version: u32,
    pub per_subtask: Vec<SubtaskMetrics>,
    pub interaction_count: u64,
    /// Interactions per second.
    pub engagement_frequency: f64,
    pub total_duration_s: f64,
    pub final_difficulty: DifficultyLevel,
    pub difficulty_changes: Vec<DifficultyChange>,
}

impl SessionMetrics {
    pub fn subtask(&self, kind: ModuleKind) -> Option<&SubtaskMetrics> {
        self.per_subtask.iter().find(|s| s.module_kind == kind)
    }

    /// Canonical serialization: pretty JSON with a trailing newline.
    pub fn to_canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metrics serialize");
        s.push('\n');
        s
    }
}
