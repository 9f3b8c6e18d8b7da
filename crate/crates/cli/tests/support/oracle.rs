//! Brute-force recomputation of cohort report cells straight from a store
//! directory: raw `events.jsonl` lines and the scenario file, read with
//! generic JSON/TOML values. Shares no code with the library's scoring.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde_json::Value as Json;
use toml::Value as Toml;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Kind {
    Mcq,
    Iq,
    Live,
}

impl Kind {
    pub fn key(self) -> &'static str {
        match self {
            Kind::Mcq => "mcq",
            Kind::Iq => "iq",
            Kind::Live => "live",
        }
    }
}

/// Ground truth of one step.
#[derive(Debug, Clone)]
struct Truth {
    kind: Kind,
    module: usize,
    correct: Vec<String>,
}

#[derive(Debug, Default)]
struct Ground {
    steps: HashMap<String, Truth>,
    /// Ground-truth situation order per live module index.
    live_order: BTreeMap<usize, Vec<String>>,
    kinds: Vec<Kind>,
}

fn ground_truth(scn: &str) -> Ground {
    let doc: Toml = toml::from_str(scn).expect("scenario toml");
    let mut g = Ground::default();
    for (mi, module) in doc["modules"].as_array().unwrap().iter().enumerate() {
        let kind = match module["kind"].as_str().unwrap() {
            "mcq" => Kind::Mcq,
            "iq" => Kind::Iq,
            "live" => Kind::Live,
            other => panic!("kind {other}"),
        };
        g.kinds.push(kind);
        let list = match kind {
            Kind::Live => module["situations"].as_array().unwrap(),
            _ => module["items"].as_array().unwrap(),
        };
        for step in list {
            let id = step["id"].as_str().unwrap().to_string();
            let correct: Vec<String> = match kind {
                Kind::Mcq => step["options"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .filter(|o| o.get("correct").and_then(Toml::as_bool).unwrap_or(false))
                    .map(|o| o["id"].as_str().unwrap().to_string())
                    .collect(),
                Kind::Iq => step["correct_targets"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|t| t.as_str().unwrap().to_string())
                    .collect(),
                Kind::Live => vec![step["correct_action"].as_str().unwrap().to_string()],
            };
            if kind == Kind::Live {
                g.live_order.entry(mi).or_default().push(id.clone());
            }
            g.steps.insert(id, Truth { kind, module: mi, correct });
        }
    }
    g
}

/// Values one session contributes to the report columns.
#[derive(Debug, Default, Clone)]
pub struct SessionCells {
    pub steps: BTreeMap<Kind, u64>,
    pub successes: BTreeMap<Kind, u64>,
    pub durations: BTreeMap<Kind, Vec<f64>>,
    pub x: Option<f64>,
    pub y: Option<f64>,
    pub vrtss: Option<f64>,
    pub engagement_per_min: f64,
    pub kinds: Vec<Kind>,
}

fn session_cells(g: &Ground, lines: &str) -> SessionCells {
    let events: Vec<Json> = lines.lines().map(|l| serde_json::from_str(l).expect("event json")).collect();
    let mut cells = SessionCells { kinds: g.kinds.clone(), ..Default::default() };
    let mut open: Option<(String, f64)> = None;
    let mut interactions = 0u64;
    // (module, performed id or None) in attempt order, and chosen actions.
    let mut live_attempts: BTreeMap<usize, Vec<Option<String>>> = BTreeMap::new();
    let mut live_chosen: HashMap<String, String> = HashMap::new();
    let first_ts = events[0]["timestamp_s"].as_f64().unwrap();
    let last_ts = events.last().unwrap()["timestamp_s"].as_f64().unwrap();
    for e in &events {
        let ts = e["timestamp_s"].as_f64().unwrap();
        let kind = e["kind"].as_str().unwrap();
        let payload = &e["payload"];
        let chosen_key = match kind {
            "AnswerSelected" => Some("option_id"),
            "TargetInteracted" => Some("target_id"),
            "ActionPerformed" => Some("action_id"),
            _ => None,
        };
        if chosen_key.is_some() {
            interactions += 1;
        }
        match kind {
            "PromptShown" => open = Some((payload["step_id"].as_str().unwrap().to_string(), ts)),
            "AnswerSelected" | "TargetInteracted" | "ActionPerformed" | "StepTimedOut" | "SessionEnded" => {
                let Some((step, shown)) = open.take() else { continue };
                let truth = &g.steps[&step];
                *cells.steps.entry(truth.kind).or_default() += 1;
                let chosen = chosen_key.map(|k| payload[k].as_str().unwrap().to_string());
                if let Some(c) = &chosen {
                    cells.durations.entry(truth.kind).or_default().push(ts - shown);
                    if truth.correct.contains(c) {
                        *cells.successes.entry(truth.kind).or_default() += 1;
                    }
                    if truth.kind == Kind::Live {
                        live_chosen.insert(step.clone(), c.clone());
                    }
                }
                if truth.kind == Kind::Live {
                    live_attempts.entry(truth.module).or_default().push(chosen.map(|_| step.clone()));
                }
            }
            _ => {}
        }
    }
    if !g.live_order.is_empty() {
        let (mut xs, mut ys, mut vs) = (0.0, 0.0, 0.0);
        for (mi, truth) in &g.live_order {
            let performed = live_attempts.get(mi).cloned().unwrap_or_default();
            let hits = truth
                .iter()
                .enumerate()
                .filter(|(i, id)| performed.get(*i).and_then(|p| p.as_ref()) == Some(*id))
                .count();
            let x = hits as f64 / truth.len() as f64;
            let right = truth
                .iter()
                .filter(|id| live_chosen.get(*id).is_some_and(|c| g.steps[*id].correct.contains(c)))
                .count();
            let y = right as f64 / truth.len() as f64;
            xs += x;
            ys += y;
            vs += 0.3 * x + 0.2 * y + (0.25 * x * y).sqrt();
        }
        let n = g.live_order.len() as f64;
        cells.x = Some(xs / n);
        cells.y = Some(ys / n);
        cells.vrtss = Some(vs / n);
    }
    let duration = last_ts - first_ts;
    cells.engagement_per_min = if duration > 0.0 { interactions as f64 / duration * 60.0 } else { 0.0 };
    cells
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub count: f64,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub max: f64,
}

impl Stats {
    pub fn cells(&self) -> [f64; 8] {
        [self.count, self.mean, self.std, self.min, self.q25, self.q50, self.q75, self.max]
    }
}

pub fn stats(values: &[f64]) -> Stats {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std =
        if n < 2 { 0.0 } else { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() };
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    // Linear interpolation at rank p * (n - 1).
    let q = |p: f64| {
        let r = p * (n - 1) as f64;
        let k = r as usize;
        if k + 1 >= n {
            s[n - 1]
        } else {
            s[k] + (r - k as f64) * (s[k + 1] - s[k])
        }
    };
    Stats { count: n as f64, mean, std, min: s[0], q25: q(0.25), q50: q(0.5), q75: q(0.75), max: s[n - 1] }
}

/// Two-sided p-value of a one-sample t statistic via the regularized
/// incomplete beta function.
pub fn t_test_p(values: &[f64], mu0: f64) -> Option<f64> {
    let n = values.len();
    let st = stats(values);
    if n < 2 || st.std == 0.0 {
        return None;
    }
    let t = (st.mean - mu0) / (st.std / (n as f64).sqrt());
    let df = (n - 1) as f64;
    Some(statrs::function::beta::beta_reg(df / 2.0, 0.5, df / (df + t * t)))
}

#[derive(Debug, Default)]
pub struct Expected {
    /// Column key → descriptive stats.
    pub columns: BTreeMap<String, Stats>,
    /// Kind → (successes, attempts).
    pub pooled: BTreeMap<Kind, (u64, u64)>,
    pub vrtss_p: Option<f64>,
    pub sessions: usize,
}

/// Recomputes every report cell for all sessions of one scenario directory.
pub fn recompute(scenario_dir: &Path) -> Expected {
    let scn = fs::read_dir(scenario_dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "scn"))
        .expect("scenario file");
    let g = ground_truth(&fs::read_to_string(scn).unwrap());
    let mut sessions = Vec::new();
    for entry in fs::read_dir(scenario_dir).unwrap() {
        let p = entry.unwrap().path().join("events.jsonl");
        if p.exists() {
            sessions.push(session_cells(&g, &fs::read_to_string(p).unwrap()));
        }
    }
    let mut out = Expected { sessions: sessions.len(), ..Default::default() };
    let mut col = |key: &str, values: Vec<f64>| {
        if !values.is_empty() {
            out.columns.insert(key.to_string(), stats(&values));
        }
    };
    for k in [Kind::Mcq, Kind::Iq, Kind::Live] {
        col(
            &format!("{}_success_rate", k.key()),
            sessions
                .iter()
                .filter(|s| s.steps.get(&k).copied().unwrap_or(0) > 0)
                .map(|s| *s.successes.get(&k).unwrap_or(&0) as f64 / s.steps[&k] as f64)
                .collect(),
        );
        col(
            &format!("{}_avg_time_s", k.key()),
            sessions
                .iter()
                .filter_map(|s| s.durations.get(&k).filter(|d| !d.is_empty()))
                .map(|d| d.iter().sum::<f64>() / d.len() as f64)
                .collect(),
        );
    }
    col("live_order_accuracy", sessions.iter().filter_map(|s| s.x).collect());
    col("live_action_correctness", sessions.iter().filter_map(|s| s.y).collect());
    let vrtss: Vec<f64> = sessions.iter().filter_map(|s| s.vrtss).collect();
    col("live_vrtss", vrtss.clone());
    col("engagement_per_min", sessions.iter().map(|s| s.engagement_per_min).collect());
    for k in [Kind::Mcq, Kind::Iq, Kind::Live] {
        if sessions.iter().any(|s| s.kinds.contains(&k)) {
            let succ = sessions.iter().map(|s| *s.successes.get(&k).unwrap_or(&0)).sum();
            let att = sessions.iter().map(|s| *s.steps.get(&k).unwrap_or(&0)).sum();
            out.pooled.insert(k, (succ, att));
        }
    }
    out.vrtss_p = t_test_p(&vrtss, 0.5);
    out
}

/// Percent rendering used in the learning-performance table.
pub fn percent(fraction: f64) -> String {
    format!("{:.2}%", fraction * 100.0)
}
