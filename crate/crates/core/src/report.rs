//! Cohort reports: descriptive statistics per metric, a per-subtask timing
//! summary, and VRTSS/success-rate rows with a one-sample t-test.
//!
//! Metrics are always recomputed from the event logs; stored summaries are
//! only compared against the recomputation.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::engine::{self, ReplayError};
use crate::model::{ModuleKind, Scenario, SessionMetrics};
use crate::scoring::{self, CohortColumnStats, ScoringError};
use crate::store::{MetricsStore, StoreError, TraceBundle};

/// Reference mean for the VRTSS t-test.
pub const T_TEST_MU0: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("no finalized sessions match the filter")]
    EmptyCohort,
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

impl ReportError {
    pub fn code(&self) -> &'static str {
        match self {
            ReportError::EmptyCohort => "empty-cohort",
            ReportError::Store(e) => e.code(),
            ReportError::Scoring(e) => e.code(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario_version: Option<u32>,
}

impl SessionFilter {
    pub fn matches(&self, bundle: &TraceBundle) -> bool {
        self.scenario_id.as_deref().is_none_or(|id| id == bundle.scenario_id)
            && self.scenario_version.is_none_or(|v| v == bundle.scenario_version)
    }
}

/// One metric across the cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportColumn {
    pub key: String,
    pub label: String,
    pub stats: CohortColumnStats<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VrtssSummary {
    pub mean: f64,
    pub std: f64,
    /// Undefined for fewer than two sessions or zero variance.
    pub t: Option<f64>,
    pub p_value: Option<f64>,
    pub df: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskSummary {
    pub module_kind: ModuleKind,
    pub label: String,
    pub sessions: usize,
    pub attempts: u64,
    pub successes: u64,
    /// Pooled over all attempts in the cohort.
    pub success_rate: f64,
    pub success_rate_display: String,
    /// Mean and range of the per-session average completion time.
    pub avg_time_s: Option<f64>,
    pub time_range_s: Option<(f64, f64)>,
    /// Live modules only.
    pub vrtss: Option<VrtssSummary>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedSession {
    pub session_id: String,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub filter: SessionFilter,
    pub sessions: Vec<String>,
    pub columns: Vec<ReportColumn>,
    pub subtasks: Vec<SubtaskSummary>,
    pub t_test_mu0: f64,
    /// Sessions whose stored metrics differ from the recomputation.
    pub mismatches: Vec<String>,
    /// Sessions left out, e.g. still active or unreadable.
    pub skipped: Vec<SkippedSession>,
    pub footnotes: Vec<String>,
}

impl CohortReport {
    pub fn column(&self, key: &str) -> Option<&ReportColumn> {
        self.columns.iter().find(|c| c.key == key)
    }

    pub fn subtask(&self, kind: ModuleKind) -> Option<&SubtaskSummary> {
        self.subtasks.iter().find(|s| s.module_kind == kind)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Per-session values, aggregated by module kind.
#[derive(Debug, Clone, Default)]
struct KindTotals {
    steps: u64,
    successes: u64,
    completed: u64,
    time_sum: f64,
    live_modules: u32,
    x_sum: f64,
    y_sum: f64,
    vrtss_sum: f64,
}

fn totals(metrics: &SessionMetrics, kind: ModuleKind) -> Option<KindTotals> {
    let mut t = KindTotals::default();
    let mut any = false;
    for m in metrics.per_subtask.iter().filter(|m| m.module_kind == kind) {
        any = true;
        t.steps += m.steps as u64;
        t.successes += m.successful_steps as u64;
        t.completed += m.completed_steps as u64;
        t.time_sum += m.avg_task_time_s * m.completed_steps as f64;
        if let (Some(x), Some(y), Some(v)) = (m.order_accuracy_x, m.action_correctness_y, m.vrtss) {
            t.live_modules += 1;
            t.x_sum += x;
            t.y_sum += y;
            t.vrtss_sum += v;
        }
    }
    any.then_some(t)
}

fn kind_key(kind: ModuleKind) -> &'static str {
    kind.as_str()
}

fn kind_short(kind: ModuleKind) -> &'static str {
    match kind {
        ModuleKind::Mcq => "MCQ",
        ModuleKind::Iq => "IQ",
        ModuleKind::Live => "Live",
    }
}

/// Builds a report from finalized session metrics (already recomputed).
pub fn report_from_metrics(
    filter: SessionFilter,
    metrics: &[SessionMetrics],
    mismatches: Vec<String>,
    skipped: Vec<SkippedSession>,
) -> Result<CohortReport, ReportError> {
    if metrics.is_empty() {
        return Err(ReportError::EmptyCohort);
    }
    let mut sorted: Vec<&SessionMetrics> = metrics.iter().collect();
    sorted.sort_by(|a, b| a.session_id.cmp(&b.session_id));
    let metrics = sorted;
    let mut columns = Vec::new();
    let mut push_column = |key: String, label: String, values: Vec<f64>| -> Result<(), ReportError> {
        if !values.is_empty() {
            columns.push(ReportColumn { key, label, stats: scoring::cohort_stats(&values)? });
        }
        Ok(())
    };
    let per_kind: Vec<(ModuleKind, Vec<KindTotals>)> =
        ModuleKind::ALL.iter().map(|k| (*k, metrics.iter().filter_map(|m| totals(m, *k)).collect())).collect();

    for (kind, rows) in &per_kind {
        let rates = rows.iter().filter(|t| t.steps > 0).map(|t| t.successes as f64 / t.steps as f64).collect();
        push_column(format!("{}_success_rate", kind_key(*kind)), format!("{} success", kind_short(*kind)), rates)?;
    }
    if let Some((_, live)) = per_kind.iter().find(|(k, _)| *k == ModuleKind::Live) {
        let live: Vec<&KindTotals> = live.iter().filter(|t| t.live_modules > 0).collect();
        let mean_of =
            |f: fn(&KindTotals) -> f64| live.iter().map(|t| f(t) / f64::from(t.live_modules)).collect::<Vec<_>>();
        push_column("live_order_accuracy".into(), "Live X".into(), mean_of(|t| t.x_sum))?;
        push_column("live_action_correctness".into(), "Live Y".into(), mean_of(|t| t.y_sum))?;
        push_column("live_vrtss".into(), "VRTSS".into(), mean_of(|t| t.vrtss_sum))?;
    }
    for (kind, rows) in &per_kind {
        let times = rows.iter().filter(|t| t.completed > 0).map(|t| t.time_sum / t.completed as f64).collect();
        push_column(format!("{}_avg_time_s", kind_key(*kind)), format!("{} time (s)", kind_short(*kind)), times)?;
    }
    let engagement = metrics.iter().map(|m| m.engagement_frequency * 60.0).collect();
    push_column("engagement_per_min".into(), "Engagement (/min)".into(), engagement)?;

    let mut footnotes = Vec::new();
    let mut subtasks = Vec::new();
    for (kind, rows) in &per_kind {
        if rows.is_empty() {
            continue;
        }
        let attempts: u64 = rows.iter().map(|t| t.steps).sum();
        let successes: u64 = rows.iter().map(|t| t.successes).sum();
        let success_rate = if attempts == 0 { 0.0 } else { scoring::success_rate(successes, attempts)? };
        let time_col = columns.iter().find(|c| c.key == format!("{}_avg_time_s", kind_key(*kind)));
        let vrtss = match columns.iter().find(|c| c.key == "live_vrtss") {
            Some(col) if *kind == ModuleKind::Live => {
                let values: Vec<f64> = rows
                    .iter()
                    .filter(|t| t.live_modules > 0)
                    .map(|t| t.vrtss_sum / f64::from(t.live_modules))
                    .collect();
                let test = match scoring::one_sample_t_test(&values, T_TEST_MU0) {
                    Ok(t) => Some(t),
                    Err(ScoringError::DegenerateSample) => {
                        footnotes.push(
                            "VRTSS p-value is undefined for fewer than two sessions or zero variance.".to_string(),
                        );
                        None
                    }
                    Err(e) => return Err(e.into()),
                };
                Some(VrtssSummary {
                    mean: col.stats.mean,
                    std: col.stats.std,
                    t: test.map(|t| t.t),
                    p_value: test.map(|t| t.p),
                    df: test.map(|t| t.df),
                })
            }
            _ => None,
        };
        subtasks.push(SubtaskSummary {
            module_kind: *kind,
            label: kind.report_label().to_string(),
            sessions: rows.len(),
            attempts,
            successes,
            success_rate,
            success_rate_display: scoring::format_percent(success_rate),
            avg_time_s: time_col.map(|c| c.stats.mean),
            time_range_s: time_col.map(|c| (c.stats.min, c.stats.max)),
            vrtss,
        });
    }
    if columns.iter().any(|c| c.stats.count == 1) {
        footnotes.push("Standard deviation of a single value is reported as 0.".to_string());
    }
    if !mismatches.is_empty() {
        footnotes.push(format!(
            "{} session(s) have stored metrics that differ from the recomputation; recomputed values are shown.",
            mismatches.len()
        ));
    }
    Ok(CohortReport {
        filter,
        sessions: metrics.iter().map(|m| m.session_id.clone()).collect(),
        columns,
        subtasks,
        t_test_mu0: T_TEST_MU0,
        mismatches,
        skipped,
        footnotes,
    })
}

/// Recomputes every bundle and builds the report. Bundles whose log does
/// not replay to a finished session are listed as skipped.
pub fn report_from_bundles(
    filter: SessionFilter,
    bundles: &[TraceBundle],
    scenario_for: impl Fn(&str, u32) -> Option<Arc<Scenario>>,
) -> Result<CohortReport, ReportError> {
    let mut metrics = Vec::new();
    let mut mismatches = Vec::new();
    let mut skipped = Vec::new();
    for b in bundles.iter().filter(|b| filter.matches(b)) {
        let Some(scenario) = scenario_for(&b.scenario_id, b.scenario_version) else {
            skipped.push(SkippedSession {
                session_id: b.session_id.clone(),
                code: "not-found".into(),
                message: format!("scenario {}@{} is not stored", b.scenario_id, b.scenario_version),
            });
            continue;
        };
        match engine::replay(scenario, &b.events, b.seed) {
            Ok(m) => {
                if b.metrics.as_ref().is_some_and(|stored| *stored != m) {
                    mismatches.push(b.session_id.clone());
                }
                metrics.push(m);
            }
            Err(ReplayError { source, .. }) => skipped.push(SkippedSession {
                session_id: b.session_id.clone(),
                code: source.code().into(),
                message: source.to_string(),
            }),
        }
    }
    report_from_metrics(filter, &metrics, mismatches, skipped)
}

/// Loads matching sessions from the store and builds the report.
pub fn build_report(store: &MetricsStore, filter: &SessionFilter) -> Result<CohortReport, ReportError> {
    let mut bundles = Vec::new();
    let mut unreadable = Vec::new();
    for id in store.session_ids(filter.scenario_id.as_deref()) {
        match store.load_trace(&id) {
            Ok(b) => bundles.push(b),
            Err(e) => unreadable.push(SkippedSession { session_id: id, code: e.code().into(), message: e.to_string() }),
        }
    }
    let mut report = report_from_bundles(filter.clone(), &bundles, |id, v| store.scenario(id, v).ok());
    if let Ok(r) = &mut report {
        r.skipped.extend(unreadable);
        r.skipped.sort_by(|a, b| a.session_id.cmp(&b.session_id));
    }
    report
}

fn fmt_num(v: f64, decimals: usize) -> String {
    format!("{v:.decimals$}")
}

fn render_grid(out: &mut String, header: &[String], rows: &[Vec<String>]) {
    let cols = header.len();
    let widths: Vec<usize> =
        (0..cols).map(|i| rows.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0)).collect();
    let line = |out: &mut String, cells: &[String]| {
        let mut s = String::new();
        for (i, c) in cells.iter().enumerate() {
            if i == 0 {
                let _ = write!(s, "{c:<w$}", w = widths[i]);
            } else {
                let _ = write!(s, "  {c:>w$}", w = widths[i]);
            }
        }
        out.push_str(s.trim_end());
        out.push('\n');
    };
    line(out, header);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    line(out, &rule);
    for r in rows {
        line(out, r);
    }
}

/// Renders the report as aligned plain-text tables.
pub fn render_text(report: &CohortReport) -> String {
    let mut out = String::new();
    let scope = match (&report.filter.scenario_id, report.filter.scenario_version) {
        (Some(id), Some(v)) => format!("scenario {id} v{v}"),
        (Some(id), None) => format!("scenario {id}"),
        _ => "all scenarios".to_string(),
    };
    let _ = writeln!(out, "Cohort report: {scope}, {} session(s)\n", report.sessions.len());

    out.push_str("Descriptive statistics\n");
    let mut header = vec![String::new()];
    header.extend(report.columns.iter().map(|c| c.label.clone()));
    type Getter = fn(&CohortColumnStats<f64>) -> f64;
    let stat_rows: [(&str, Getter); 8] = [
        ("count", |s| s.count as f64),
        ("mean", |s| s.mean),
        ("std", |s| s.std),
        ("min", |s| s.min),
        ("25%", |s| s.q25),
        ("50%", |s| s.q50),
        ("75%", |s| s.q75),
        ("max", |s| s.max),
    ];
    let rows: Vec<Vec<String>> = stat_rows
        .iter()
        .map(|(name, get)| {
            let mut r = vec![name.to_string()];
            r.extend(report.columns.iter().map(|c| fmt_num(get(&c.stats), 2)));
            r
        })
        .collect();
    render_grid(&mut out, &header, &rows);

    out.push_str("\nTask performance\n");
    let header: Vec<String> =
        ["Subtask", "Avg. completion time", "Range", "Success rate"].iter().map(|s| s.to_string()).collect();
    let rows: Vec<Vec<String>> = report
        .subtasks
        .iter()
        .map(|s| {
            vec![
                s.label.clone(),
                s.avg_time_s.map_or("n/a".into(), |t| format!("{t:.2} s")),
                s.time_range_s.map_or("n/a".into(), |(lo, hi)| format!("{lo:.2} - {hi:.2} s")),
                s.success_rate_display.clone(),
            ]
        })
        .collect();
    render_grid(&mut out, &header, &rows);

    out.push_str("\nLearning performance\n");
    let mut header = vec!["SubTask".to_string()];
    header.extend(report.subtasks.iter().map(|s| s.label.clone()));
    let cell = |f: &dyn Fn(&VrtssSummary) -> Option<f64>| -> Vec<String> {
        report.subtasks.iter().map(|s| s.vrtss.as_ref().and_then(f).map_or("n/a".into(), |v| fmt_num(v, 4))).collect()
    };
    let mut rows = Vec::new();
    for (name, values) in [
        ("VRTSS mean", cell(&|v| Some(v.mean))),
        ("VRTSS std", cell(&|v| Some(v.std))),
        ("VRTSS P-Value", cell(&|v| v.p_value)),
    ] {
        let mut r = vec![name.to_string()];
        r.extend(values);
        rows.push(r);
    }
    let mut r = vec!["Success Rate (%)".to_string()];
    r.extend(report.subtasks.iter().map(|s| s.success_rate_display.clone()));
    rows.push(r);
    render_grid(&mut out, &header, &rows);
    let _ = writeln!(out, "P-value: two-sided one-sample t-test against mean {}.", report.t_test_mu0);

    if !report.footnotes.is_empty() || !report.skipped.is_empty() {
        out.push('\n');
    }
    for (i, note) in report.footnotes.iter().enumerate() {
        let _ = writeln!(out, "[{}] {note}", i + 1);
    }
    for s in &report.skipped {
        let _ = writeln!(out, "skipped {}: {} ({})", s.session_id, s.message, s.code);
    }
    out
}
