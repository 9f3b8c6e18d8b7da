//! Scenario-driven training sessions: scenario files, the session state
//! machine, scoring, persistence, cohort reports and a trainee simulator.

pub mod engine;
pub mod model;
pub mod parser;
pub mod report;
pub mod scoring;
pub mod simulator;
pub mod store;

pub use engine::{create_session, replay, EngineConfig, EngineError, Prompt, SessionMode, SessionState, StepOutcome};
pub use model::{
    DifficultyLevel, EventKind, ModuleKind, ModuleSpec, Scenario, SessionEvent, SessionMetrics, StepResult,
    SubtaskMetrics,
};
pub use parser::{parse_scenario, print_scenario, ParseDiagnostic};
pub use report::{build_report, CohortReport, SessionFilter};
pub use simulator::{simulate, TraineeProfile};
pub use store::{MetricsStore, TraceBundle};

/// Order-accuracy result in double precision.
pub type OrderMatch = scoring::OrderMatchResult<f64>;
/// Report column statistics in double precision.
pub type ColumnStats = scoring::CohortColumnStats<f64>;
/// t-test result in double precision.
pub type TTest = scoring::TTest<f64>;
