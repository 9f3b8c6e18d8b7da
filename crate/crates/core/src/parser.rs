//! `.scn` scenario files: TOML documents describing modules of MCQ items,
//! interactive questions and live-scenario situations.
//!
//! Parsing walks the span-preserving TOML tree by hand so that every
//! diagnostic can point at a byte offset, line and column. Cross-reference
//! checks live in [`validate_scenario`], which reports field paths only; the
//! parser maps those paths back to source spans.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use toml::de::{DeTable, DeValue};
use toml::Spanned;

use crate::model::{
    ActionOption, AnswerOption, InteractionTarget, IqItem, McqItem, ModuleSpec, Scenario, ScenarioDraft, Situation,
    StepScoreRule, MAX_OPTIONS, MIN_OPTIONS, MIN_TARGETS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Location {
    /// Dotted field path, e.g. `modules[0].items[2].options[1].correct`.
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<usize>,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) if self.path.is_empty() => write!(f, "{l}:{c}"),
            (Some(l), Some(c)) => write!(f, "{l}:{c} ({})", self.path),
            _ => f.write_str(&self.path),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseDiagnostic {
    pub severity: Severity,
    pub location: Location,
    pub code: String,
    pub message: String,
}

impl ParseDiagnostic {
    fn error(path: impl Into<String>, code: &str, message: impl Into<String>) -> Self {
        ParseDiagnostic {
            severity: Severity::Error,
            location: Location { path: path.into(), ..Location::default() },
            code: code.to_string(),
            message: message.into(),
        }
    }

    fn warning(path: impl Into<String>, code: &str, message: impl Into<String>) -> Self {
        ParseDiagnostic { severity: Severity::Warning, ..Self::error(path, code, message) }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for ParseDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}[{}] {}: {}", self.code, self.location, self.message)
    }
}

/// Result of parsing: the scenario (absent when any error was found) plus
/// every diagnostic, warnings included.
#[derive(Debug, Clone)]
pub struct ParseReport {
    pub scenario: Option<Scenario>,
    pub diagnostics: Vec<ParseDiagnostic>,
}

impl ParseReport {
    pub fn has_errors(&self) -> bool {
        self.diagnostics.iter().any(ParseDiagnostic::is_error)
    }
}

pub fn parse_scenario(source: &str) -> Result<Scenario, Vec<ParseDiagnostic>> {
    let report = parse_scenario_report(source);
    match report.scenario {
        Some(s) => Ok(s),
        None => Err(report.diagnostics),
    }
}

/// Entry point for raw bytes; invalid UTF-8 is reported, never panics.
pub fn parse_scenario_bytes(bytes: &[u8]) -> ParseReport {
    match std::str::from_utf8(bytes) {
        Ok(s) => parse_scenario_report(s),
        Err(e) => {
            let offset = e.valid_up_to();
            let mut d = ParseDiagnostic::error("", "invalid-utf8", e.to_string());
            let (line, column) = line_col(&String::from_utf8_lossy(&bytes[..offset]), offset);
            d.location.offset = Some(offset);
            d.location.line = Some(line);
            d.location.column = Some(column);
            ParseReport { scenario: None, diagnostics: vec![d] }
        }
    }
}

pub fn parse_scenario_report(source: &str) -> ParseReport {
    let doc = match DeTable::parse(source) {
        Ok(doc) => doc,
        Err(e) => {
            let span = e.span().unwrap_or(0..0);
            let mut d = ParseDiagnostic::error("", "syntax", e.message().trim_end().to_string());
            locate(&mut d, source, span.start);
            return ParseReport { scenario: None, diagnostics: vec![d] };
        }
    };

    let mut w = Walker { diags: Vec::new(), spans: HashMap::new() };
    w.spans.insert(String::new(), doc.span());
    let draft = w.scenario(doc.get_ref(), doc.span());
    let Walker { mut diags, spans } = w;

    let mut scenario = None;
    if let Some(draft) = draft {
        if !diags.iter().any(ParseDiagnostic::is_error) {
            let checks = validate_scenario(&draft);
            let clean = !checks.iter().any(ParseDiagnostic::is_error);
            diags.extend(checks);
            if clean {
                scenario = Scenario::try_from(draft).ok();
            }
        }
    }

    for d in &mut diags {
        if d.location.offset.is_none() {
            let start = span_for(&spans, &d.location.path).map_or(0, |s| s.start);
            locate(d, source, start);
        }
    }
    ParseReport { scenario, diagnostics: diags }
}

fn span_for(spans: &HashMap<String, Range<usize>>, path: &str) -> Option<Range<usize>> {
    let mut p = path;
    loop {
        if let Some(s) = spans.get(p) {
            return Some(s.clone());
        }
        let cut = p.rfind(['.', '['])?;
        p = &p[..cut];
    }
}

fn locate(d: &mut ParseDiagnostic, source: &str, offset: usize) {
    let offset = offset.min(source.len());
    let (line, column) = line_col(source, offset);
    d.location.offset = Some(offset);
    d.location.line = Some(line);
    d.location.column = Some(column);
}

fn line_col(source: &str, offset: usize) -> (u32, u32) {
    let mut end = offset.min(source.len());
    while !source.is_char_boundary(end) {
        end -= 1;
    }
    let before = &source[..end];
    let line = before.matches('\n').count() as u32 + 1;
    let line_start = before.rfind('\n').map_or(0, |i| i + 1);
    let column = before[line_start..].chars().count() as u32 + 1;
    (line, column)
}

type Table<'i> = DeTable<'i>;
type Value<'i> = Spanned<DeValue<'i>>;

struct Walker {
    diags: Vec<ParseDiagnostic>,
    spans: HashMap<String, Range<usize>>,
}

impl Walker {
    fn err_at(&mut self, path: &str, span: Range<usize>, code: &str, message: String) {
        self.spans.entry(path.to_string()).or_insert(span);
        self.diags.push(ParseDiagnostic::error(path, code, message));
    }

    fn check_fields(&mut self, table: &Table<'_>, path: &str, known: &[&str]) {
        for (key, _) in table.iter() {
            let name: &str = key.get_ref();
            if !known.contains(&name) {
                let p = join(path, name);
                self.spans.insert(p.clone(), key.span());
                self.diags.push(ParseDiagnostic::warning(
                    p,
                    "unknown-field",
                    format!("unknown field `{name}` is ignored"),
                ));
            }
        }
    }

    fn field<'t, 'i>(&mut self, table: &'t Table<'i>, path: &str, key: &str) -> Option<&'t Value<'i>> {
        let v = table.get(key)?;
        self.spans.insert(join(path, key), v.span());
        Some(v)
    }

    fn required<'t, 'i>(
        &mut self,
        table: &'t Table<'i>,
        span: &Range<usize>,
        path: &str,
        key: &str,
    ) -> Option<&'t Value<'i>> {
        let v = self.field(table, path, key);
        if v.is_none() {
            self.err_at(&join(path, key), span.clone(), "missing-field", format!("missing required field `{key}`"));
        }
        v
    }

    fn mismatch(&mut self, path: &str, v: &Value<'_>, expected: &str) {
        self.diags.push(ParseDiagnostic::error(
            path,
            "type-mismatch",
            format!("expected {expected}, found {}", v.get_ref().type_str()),
        ));
    }

    fn as_string(&mut self, path: &str, v: &Value<'_>) -> Option<String> {
        match v.get_ref() {
            DeValue::String(s) => Some(s.to_string()),
            _ => {
                self.mismatch(path, v, "string");
                None
            }
        }
    }

    fn req_string(&mut self, t: &Table<'_>, span: &Range<usize>, path: &str, key: &str) -> Option<String> {
        let v = self.required(t, span, path, key)?;
        self.as_string(&join(path, key), v)
    }

    fn opt_string(&mut self, t: &Table<'_>, path: &str, key: &str) -> Option<Option<String>> {
        match self.field(t, path, key) {
            None => Some(None),
            Some(v) => self.as_string(&join(path, key), v).map(Some),
        }
    }

    fn as_f64(&mut self, path: &str, v: &Value<'_>) -> Option<f64> {
        let parsed = match v.get_ref() {
            DeValue::Float(f) => f.as_str().replace('_', "").parse::<f64>().ok(),
            DeValue::Integer(i) => i64::from_str_radix(&i.as_str().replace('_', ""), i.radix()).ok().map(|x| x as f64),
            _ => None,
        };
        if parsed.is_none() {
            self.mismatch(path, v, "number");
        }
        parsed
    }

    fn num(&mut self, t: &Table<'_>, span: &Range<usize>, path: &str, key: &str, default: Option<f64>) -> Option<f64> {
        match (self.field(t, path, key), default) {
            (Some(v), _) => self.as_f64(&join(path, key), v),
            (None, Some(d)) => Some(d),
            (None, None) => {
                self.required(t, span, path, key);
                None
            }
        }
    }

    fn uint(&mut self, t: &Table<'_>, path: &str, key: &str, default: u32) -> Option<u32> {
        let Some(v) = self.field(t, path, key) else {
            return Some(default);
        };
        let parsed = match v.get_ref() {
            DeValue::Integer(i) => u32::from_str_radix(&i.as_str().replace('_', ""), i.radix()).ok(),
            _ => None,
        };
        if parsed.is_none() {
            self.mismatch(&join(path, key), v, "non-negative integer");
        }
        parsed
    }

    fn boolean(&mut self, t: &Table<'_>, path: &str, key: &str) -> Option<bool> {
        let Some(v) = self.field(t, path, key) else {
            return Some(false);
        };
        match v.get_ref() {
            DeValue::Boolean(b) => Some(*b),
            _ => {
                self.mismatch(&join(path, key), v, "boolean");
                None
            }
        }
    }

    fn string_list(
        &mut self,
        t: &Table<'_>,
        path: &str,
        key: &str,
        required: Option<&Range<usize>>,
    ) -> Option<Vec<String>> {
        let v = match (self.field(t, path, key), required) {
            (Some(v), _) => v,
            (None, None) => return Some(Vec::new()),
            (None, Some(span)) => {
                self.required(t, span, path, key);
                return None;
            }
        };
        let p = join(path, key);
        let Some(arr) = v.get_ref().as_array() else {
            self.mismatch(&p, v, "array of strings");
            return None;
        };
        let mut out = Vec::new();
        let mut ok = true;
        for (i, item) in arr.iter().enumerate() {
            let ip = format!("{p}[{i}]");
            self.spans.insert(ip.clone(), item.span());
            match self.as_string(&ip, item) {
                Some(s) => out.push(s),
                None => ok = false,
            }
        }
        ok.then_some(out)
    }

    /// Visits each table of an array-of-tables field.
    fn tables<'t, 'i>(
        &mut self,
        t: &'t Table<'i>,
        span: &Range<usize>,
        path: &str,
        key: &str,
    ) -> Option<Vec<(String, &'t Table<'i>, Range<usize>)>> {
        let v = self.required(t, span, path, key)?;
        let p = join(path, key);
        let Some(arr) = v.get_ref().as_array() else {
            self.mismatch(&p, v, "array of tables");
            return None;
        };
        let mut out = Vec::new();
        let mut ok = true;
        for (i, item) in arr.iter().enumerate() {
            let ip = format!("{p}[{i}]");
            self.spans.insert(ip.clone(), item.span());
            match item.get_ref().as_table() {
                Some(tab) => out.push((ip, tab, item.span())),
                None => {
                    self.mismatch(&ip, item, "table");
                    ok = false;
                }
            }
        }
        ok.then_some(out)
    }

    fn scenario(&mut self, t: &Table<'_>, span: Range<usize>) -> Option<ScenarioDraft> {
        self.check_fields(t, "", &["id", "title", "version", "step_score", "modules"]);
        let id = self.req_string(t, &span, "", "id");
        let title = self.opt_string(t, "", "title");
        let version = self.uint(t, "", "version", 1);
        let step_score = match self.opt_string(t, "", "step_score") {
            Some(None) => Some(StepScoreRule::Correctness),
            Some(Some(s)) => match s.as_str() {
                "correctness" => Some(StepScoreRule::Correctness),
                "completion" => Some(StepScoreRule::Completion),
                other => {
                    self.diags.push(ParseDiagnostic::error(
                        "step_score",
                        "unknown-step-score",
                        format!("unknown step_score `{other}` (expected correctness or completion)"),
                    ));
                    None
                }
            },
            None => None,
        };
        let mut modules = Some(Vec::new());
        if let Some(entries) = self.tables(t, &span, "", "modules") {
            for (p, tab, sp) in entries {
                let m = self.module(tab, sp, &p);
                match (&mut modules, m) {
                    (Some(list), Some(m)) => list.push(m),
                    _ => modules = None,
                }
            }
        } else {
            modules = None;
        }
        Some(ScenarioDraft {
            id: id?,
            title: title?.unwrap_or_default(),
            version: version?,
            step_score: step_score?,
            modules: modules?,
        })
    }

    fn module(&mut self, t: &Table<'_>, span: Range<usize>, path: &str) -> Option<ModuleSpec> {
        let kind = self.req_string(t, &span, path, "kind")?;
        match kind.as_str() {
            "mcq" => {
                self.check_fields(t, path, &["kind", "items"]);
                let entries = self.tables(t, &span, path, "items")?;
                let items = collect(entries.into_iter().map(|(p, tab, sp)| self.mcq(tab, sp, &p)))?;
                Some(ModuleSpec::Mcq { items })
            }
            "iq" => {
                self.check_fields(t, path, &["kind", "items"]);
                let entries = self.tables(t, &span, path, "items")?;
                let items = collect(entries.into_iter().map(|(p, tab, sp)| self.iq(tab, sp, &p)))?;
                Some(ModuleSpec::Iq { items })
            }
            "live" => {
                self.check_fields(t, path, &["kind", "situations"]);
                let entries = self.tables(t, &span, path, "situations")?;
                let situations = collect(entries.into_iter().map(|(p, tab, sp)| self.situation(tab, sp, &p)))?;
                Some(ModuleSpec::Live { situations })
            }
            other => {
                self.diags.push(ParseDiagnostic::error(
                    join(path, "kind"),
                    "unknown-module-kind",
                    format!("unknown module kind `{other}` (expected mcq, iq or live)"),
                ));
                None
            }
        }
    }

    fn mcq(&mut self, t: &Table<'_>, span: Range<usize>, path: &str) -> Option<McqItem> {
        self.check_fields(t, path, &["id", "prompt", "assets", "weight", "time_limit_s", "hint", "options"]);
        let id = self.req_string(t, &span, path, "id");
        let prompt = self.req_string(t, &span, path, "prompt");
        let assets = self.string_list(t, path, "assets", None);
        let weight = self.num(t, &span, path, "weight", Some(1.0));
        let limit = self.num(t, &span, path, "time_limit_s", None);
        let hint = self.opt_string(t, path, "hint");
        let options = self.tables(t, &span, path, "options").and_then(|entries| {
            collect(entries.into_iter().map(|(p, tab, sp)| {
                self.check_fields(tab, &p, &["id", "text", "correct", "distractor_rank"]);
                let id = self.req_string(tab, &sp, &p, "id");
                let text = self.req_string(tab, &sp, &p, "text");
                let correct = self.boolean(tab, &p, "correct");
                let rank = self.uint(tab, &p, "distractor_rank", 0);
                Some(AnswerOption { id: id?, text: text?, correct: correct?, distractor_rank: rank? })
            }))
        });
        Some(McqItem {
            id: id?,
            prompt: prompt?,
            asset_refs: assets?,
            options: options?,
            weight: weight?,
            time_limit_s: limit?,
            hint: hint?,
        })
    }

    fn iq(&mut self, t: &Table<'_>, span: Range<usize>, path: &str) -> Option<IqItem> {
        self.check_fields(t, path, &["id", "prompt", "weight", "time_limit_s", "hint", "targets", "correct_targets"]);
        let id = self.req_string(t, &span, path, "id");
        let prompt = self.req_string(t, &span, path, "prompt");
        let weight = self.num(t, &span, path, "weight", Some(1.0));
        let limit = self.num(t, &span, path, "time_limit_s", None);
        let hint = self.opt_string(t, path, "hint");
        let correct = self.string_list(t, path, "correct_targets", Some(&span));
        let targets = self.tables(t, &span, path, "targets").and_then(|entries| {
            collect(entries.into_iter().map(|(p, tab, sp)| {
                self.check_fields(tab, &p, &["id", "label", "asset"]);
                let id = self.req_string(tab, &sp, &p, "id");
                let label = self.req_string(tab, &sp, &p, "label");
                let asset = self.opt_string(tab, &p, "asset");
                Some(InteractionTarget { id: id?, label: label?, asset_ref: asset?.unwrap_or_default() })
            }))
        });
        Some(IqItem {
            id: id?,
            prompt: prompt?,
            targets: targets?,
            correct_target_ids: correct?,
            weight: weight?,
            time_limit_s: limit?,
            hint: hint?,
        })
    }

    fn situation(&mut self, t: &Table<'_>, span: Range<usize>, path: &str) -> Option<Situation> {
        self.check_fields(t, path, &["id", "prompt", "weight", "time_limit_s", "hint", "actions", "correct_action"]);
        let id = self.req_string(t, &span, path, "id");
        let prompt = self.req_string(t, &span, path, "prompt");
        let weight = self.num(t, &span, path, "weight", Some(1.0));
        let limit = self.num(t, &span, path, "time_limit_s", None);
        let hint = self.opt_string(t, path, "hint");
        let correct = self.req_string(t, &span, path, "correct_action");
        let actions = self.tables(t, &span, path, "actions").and_then(|entries| {
            collect(entries.into_iter().map(|(p, tab, sp)| {
                self.check_fields(tab, &p, &["id", "label", "distractor_rank"]);
                let id = self.req_string(tab, &sp, &p, "id");
                let label = self.req_string(tab, &sp, &p, "label");
                let rank = self.uint(tab, &p, "distractor_rank", 0);
                Some(ActionOption { id: id?, label: label?, distractor_rank: rank? })
            }))
        });
        Some(Situation {
            id: id?,
            prompt: prompt?,
            action_options: actions?,
            correct_action_id: correct?,
            weight: weight?,
            base_time_limit_s: limit?,
            hint: hint?,
        })
    }
}

/// Like `Iterator::collect::<Option<Vec<_>>>` but drives every element so
/// that all diagnostics are reported, not just the first.
fn collect<T>(it: impl Iterator<Item = Option<T>>) -> Option<Vec<T>> {
    let mut out = Some(Vec::new());
    for x in it {
        match (&mut out, x) {
            (Some(v), Some(x)) => v.push(x),
            _ => out = None,
        }
    }
    out
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

/// Checks every scenario invariant that the type system does not enforce.
/// Locations are field paths in the `.scn` layout.
pub fn validate_scenario(s: &ScenarioDraft) -> Vec<ParseDiagnostic> {
    let mut out = Vec::new();
    if s.id.trim().is_empty() {
        out.push(ParseDiagnostic::error("id", "empty-id", "scenario id must not be empty"));
    }
    if s.modules.is_empty() {
        out.push(ParseDiagnostic::error("modules", "empty-scenario", "scenario has no modules"));
    }
    let mut step_ids: HashSet<&str> = HashSet::new();
    for (mi, module) in s.modules.iter().enumerate() {
        let mp = format!("modules[{mi}]");
        if module.is_empty() {
            out.push(ParseDiagnostic::error(&mp, "empty-module", format!("{} module has no entries", module.kind())));
        }
        let (list, _) = match module {
            ModuleSpec::Mcq { .. } | ModuleSpec::Iq { .. } => ("items", ()),
            ModuleSpec::Live { .. } => ("situations", ()),
        };
        for (ii, id) in module.step_ids().into_iter().enumerate() {
            let ip = format!("{mp}.{list}[{ii}]");
            if id.trim().is_empty() {
                out.push(ParseDiagnostic::error(format!("{ip}.id"), "empty-id", "id must not be empty"));
            } else if !step_ids.insert(id) {
                out.push(ParseDiagnostic::error(
                    format!("{ip}.id"),
                    "duplicate-id",
                    format!("id `{id}` is already used in this scenario"),
                ));
            }
        }
        match module {
            ModuleSpec::Mcq { items } => {
                for (ii, item) in items.iter().enumerate() {
                    let ip = format!("{mp}.items[{ii}]");
                    check_weight_and_limit(&mut out, &ip, item.weight, item.time_limit_s);
                    check_choices(
                        &mut out,
                        &ip,
                        "options",
                        item.options.iter().map(|o| (o.id.as_str(), o.correct, o.distractor_rank)),
                    );
                }
            }
            ModuleSpec::Iq { items } => {
                for (ii, item) in items.iter().enumerate() {
                    let ip = format!("{mp}.items[{ii}]");
                    check_weight_and_limit(&mut out, &ip, item.weight, item.time_limit_s);
                    if item.targets.len() < MIN_TARGETS {
                        out.push(ParseDiagnostic::error(
                            format!("{ip}.targets"),
                            "target-count",
                            format!("need at least {MIN_TARGETS} targets, found {}", item.targets.len()),
                        ));
                    }
                    let ids =
                        unique_ids(&mut out, &format!("{ip}.targets"), item.targets.iter().map(|t| t.id.as_str()));
                    if item.correct_target_ids.is_empty() {
                        out.push(ParseDiagnostic::error(
                            format!("{ip}.correct_targets"),
                            "no-correct",
                            "at least one correct target is required",
                        ));
                    }
                    for (ci, c) in item.correct_target_ids.iter().enumerate() {
                        if !ids.contains(c.as_str()) {
                            out.push(ParseDiagnostic::error(
                                format!("{ip}.correct_targets[{ci}]"),
                                "dangling-target",
                                format!("correct target `{c}` is not one of the item's targets"),
                            ));
                        }
                    }
                }
            }
            ModuleSpec::Live { situations } => {
                for (si, sit) in situations.iter().enumerate() {
                    let sp = format!("{mp}.situations[{si}]");
                    check_weight_and_limit(&mut out, &sp, sit.weight, sit.base_time_limit_s);
                    check_count(&mut out, &sp, "actions", sit.action_options.len());
                    unique_ids(&mut out, &format!("{sp}.actions"), sit.action_options.iter().map(|a| a.id.as_str()));
                    match sit.action_options.iter().position(|a| a.id == sit.correct_action_id) {
                        None => out.push(ParseDiagnostic::error(
                            format!("{sp}.correct_action"),
                            "dangling-correct-action",
                            format!("correct action `{}` is not one of the situation's actions", sit.correct_action_id),
                        )),
                        Some(ai) if sit.action_options[ai].distractor_rank != 0 => out.push(ParseDiagnostic::error(
                            format!("{sp}.actions[{ai}].distractor_rank"),
                            "ranked-correct",
                            "the correct action must have distractor_rank 0",
                        )),
                        Some(_) => {}
                    }
                }
            }
        }
    }
    out
}

fn check_weight_and_limit(out: &mut Vec<ParseDiagnostic>, path: &str, weight: f64, limit: f64) {
    if !positive(weight) {
        out.push(ParseDiagnostic::error(
            format!("{path}.weight"),
            "invalid-weight",
            format!("weight must be a positive number, found {weight}"),
        ));
    }
    if !positive(limit) {
        out.push(ParseDiagnostic::error(
            format!("{path}.time_limit_s"),
            "invalid-time-limit",
            format!("time limit must be a positive number of seconds, found {limit}"),
        ));
    }
}

fn check_count(out: &mut Vec<ParseDiagnostic>, path: &str, list: &str, n: usize) {
    if !(MIN_OPTIONS..=MAX_OPTIONS).contains(&n) {
        out.push(ParseDiagnostic::error(
            format!("{path}.{list}"),
            "option-count",
            format!("expected {MIN_OPTIONS} to {MAX_OPTIONS} {list}, found {n}"),
        ));
    }
}

fn unique_ids<'a>(
    out: &mut Vec<ParseDiagnostic>,
    list_path: &str,
    ids: impl Iterator<Item = &'a str>,
) -> HashSet<&'a str> {
    let mut seen = HashSet::new();
    for (i, id) in ids.enumerate() {
        if !seen.insert(id) {
            out.push(ParseDiagnostic::error(
                format!("{list_path}[{i}].id"),
                "duplicate-id",
                format!("id `{id}` appears more than once"),
            ));
        }
    }
    seen
}

fn check_choices<'a>(
    out: &mut Vec<ParseDiagnostic>,
    path: &str,
    list: &str,
    choices: impl Iterator<Item = (&'a str, bool, u32)> + Clone,
) {
    check_count(out, path, list, choices.clone().count());
    unique_ids(out, &format!("{path}.{list}"), choices.clone().map(|c| c.0));
    let mut correct_seen = 0;
    for (i, (_, correct, rank)) in choices.enumerate() {
        if !correct {
            continue;
        }
        correct_seen += 1;
        if correct_seen == 2 {
            out.push(ParseDiagnostic::error(
                format!("{path}.{list}[{i}].correct"),
                "multiple-correct",
                "more than one option is flagged correct",
            ));
        }
        if rank != 0 {
            out.push(ParseDiagnostic::error(
                format!("{path}.{list}[{i}].distractor_rank"),
                "ranked-correct",
                "the correct option must have distractor_rank 0",
            ));
        }
    }
    if correct_seen == 0 {
        out.push(ParseDiagnostic::error(
            format!("{path}.{list}"),
            "no-correct",
            "exactly one option must be flagged correct",
        ));
    }
}

// Serialization mirror of the file layout, used by `print_scenario`.

#[derive(Serialize)]
struct FileScenario<'a> {
    id: &'a str,
    title: &'a str,
    version: u32,
    #[serde(skip_serializing_if = "is_default_rule")]
    step_score: &'static str,
    modules: Vec<FileModule<'a>>,
}

fn is_default_rule(s: &&str) -> bool {
    *s == StepScoreRule::Correctness.as_str()
}

#[derive(Serialize)]
struct FileModule<'a> {
    kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    items: Option<FileItems<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    situations: Option<Vec<FileSituation<'a>>>,
}

#[derive(Serialize)]
#[serde(untagged)]
enum FileItems<'a> {
    Mcq(Vec<FileMcq<'a>>),
    Iq(Vec<FileIq<'a>>),
}

#[derive(Serialize)]
struct FileMcq<'a> {
    id: &'a str,
    prompt: &'a str,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    assets: &'a [String],
    weight: f64,
    time_limit_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    hint: Option<&'a str>,
    options: Vec<FileOption<'a>>,
}

#[derive(Serialize)]
struct FileOption<'a> {
    id: &'a str,
    text: &'a str,
    correct: bool,
    distractor_rank: u32,
}

#[derive(Serialize)]
struct FileIq<'a> {
    id: &'a str,
    prompt: &'a str,
    weight: f64,
    time_limit_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    hint: Option<&'a str>,
    correct_targets: &'a [String],
    targets: Vec<FileTarget<'a>>,
}

#[derive(Serialize)]
struct FileTarget<'a> {
    id: &'a str,
    label: &'a str,
    #[serde(skip_serializing_if = "str::is_empty")]
    asset: &'a str,
}

#[derive(Serialize)]
struct FileSituation<'a> {
    id: &'a str,
    prompt: &'a str,
    weight: f64,
    time_limit_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    hint: Option<&'a str>,
    correct_action: &'a str,
    actions: Vec<FileAction<'a>>,
}

#[derive(Serialize)]
struct FileAction<'a> {
    id: &'a str,
    label: &'a str,
    distractor_rank: u32,
}

/// Canonical `.scn` rendering of a scenario. Parsing the output yields an
/// equal scenario.
pub fn print_scenario(s: &Scenario) -> String {
    let modules = s
        .modules()
        .iter()
        .map(|m| match m {
            ModuleSpec::Mcq { items } => FileModule {
                kind: "mcq",
                items: Some(FileItems::Mcq(
                    items
                        .iter()
                        .map(|i| FileMcq {
                            id: &i.id,
                            prompt: &i.prompt,
                            assets: &i.asset_refs,
                            weight: i.weight,
                            time_limit_s: i.time_limit_s,
                            hint: i.hint.as_deref(),
                            options: i
                                .options
                                .iter()
                                .map(|o| FileOption {
                                    id: &o.id,
                                    text: &o.text,
                                    correct: o.correct,
                                    distractor_rank: o.distractor_rank,
                                })
                                .collect(),
                        })
                        .collect(),
                )),
                situations: None,
            },
            ModuleSpec::Iq { items } => FileModule {
                kind: "iq",
                items: Some(FileItems::Iq(
                    items
                        .iter()
                        .map(|i| FileIq {
                            id: &i.id,
                            prompt: &i.prompt,
                            weight: i.weight,
                            time_limit_s: i.time_limit_s,
                            hint: i.hint.as_deref(),
                            correct_targets: &i.correct_target_ids,
                            targets: i
                                .targets
                                .iter()
                                .map(|t| FileTarget { id: &t.id, label: &t.label, asset: &t.asset_ref })
                                .collect(),
                        })
                        .collect(),
                )),
                situations: None,
            },
            ModuleSpec::Live { situations } => FileModule {
                kind: "live",
                items: None,
                situations: Some(
                    situations
                        .iter()
                        .map(|s| FileSituation {
                            id: &s.id,
                            prompt: &s.prompt,
                            weight: s.weight,
                            time_limit_s: s.base_time_limit_s,
                            hint: s.hint.as_deref(),
                            correct_action: &s.correct_action_id,
                            actions: s
                                .action_options
                                .iter()
                                .map(|a| FileAction { id: &a.id, label: &a.label, distractor_rank: a.distractor_rank })
                                .collect(),
                        })
                        .collect(),
                ),
            },
        })
        .collect();
    let file = FileScenario {
        id: s.id(),
        title: s.title(),
        version: s.version(),
        step_score: s.step_score().as_str(),
        modules,
    };
    toml::to_string(&file).expect("scenario serializes to TOML")
}
