use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datagen::ScenarioConfig;
use crate::error::{Error, Result};
use crate::model::{Strategy, TrainMode};

/// A training recipe compared in the matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Whole model trained, no prompts.
    Finetune,
    /// Frozen backbone, only the task head trained.
    Head,
    Map,
    Msp,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Finetune, Method::Head, Method::Map, Method::Msp];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Finetune => "finetune",
            Method::Head => "head",
            Method::Map => "map",
            Method::Msp => "msp",
        }
    }

    pub fn strategy(self) -> Strategy {
        match self {
            Method::Finetune | Method::Head => Strategy::None,
            Method::Map => Strategy::Map,
            Method::Msp => Strategy::Msp,
        }
    }

    pub fn mode(self) -> TrainMode {
        match self {
            Method::Finetune => TrainMode::FinetuneAll,
            Method::Head => TrainMode::HeadOnly,
            Method::Map | Method::Msp => TrainMode::PromptTune,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    /// `none` is accepted as the prompt-free full finetune.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "finetune" | "none" => Ok(Method::Finetune),
            "head" => Ok(Method::Head),
            "map" => Ok(Method::Map),
            "msp" => Ok(Method::Msp),
            _ => Err(Error::Config(format!("unknown method `{s}` (none|finetune|head|map|msp)"))),
        }
    }
}

/// Presence fractions identifying a scenario in a report.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub p_img: f64,
    pub p_txt: f64,
}

impl Case {
    pub fn label(&self) -> String {
        ScenarioConfig {
            p_img: self.p_img,
            p_txt: self.p_txt,
            seed: 0,
        }
        .label()
    }

    fn key(&self) -> (u64, u64) {
        (self.p_img.to_bits(), self.p_txt.to_bits())
    }
}

impl From<&ScenarioConfig> for Case {
    fn from(sc: &ScenarioConfig) -> Self {
        Case {
            p_img: sc.p_img,
            p_txt: sc.p_txt,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: Method,
    pub train: Case,
    pub eval: Case,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
    /// Zero-division convention was used for some class.
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: Method,
    pub train: Case,
    pub eval: Case,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricRow>,
    pub aggregates: Vec<AggregateRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
            ReportFormat::Markdown => "md",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            _ => Err(Error::Config(format!("unknown report format `{s}` (csv|json|markdown)"))),
        }
    }
}

const CSV_HEADER: &str = "method,train_p_img,train_p_txt,eval_p_img,eval_p_txt,seed,metric,value,flagged";

impl MetricsReport {
    /// Builds a report from per-seed rows, computing the aggregates.
    /// Rows must be unique per (method, train, eval, seed, metric).
    pub fn from_rows(rows: Vec<MetricRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Metric("a report needs at least one row".into()));
        }
        type GroupKey = (Method, (u64, u64), (u64, u64), String);
        let mut seen = std::collections::HashSet::new();
        let mut groups: BTreeMap<GroupKey, (Case, Case, Vec<f64>)> = BTreeMap::new();
        let mut order: Vec<GroupKey> = Vec::new();
        for r in &rows {
            if !(0.0..=1.0).contains(&r.value) {
                return Err(Error::Metric(format!("metric value {} outside [0, 1]", r.value)));
            }
            let key = (r.method, r.train.key(), r.eval.key(), r.metric.clone());
            if !seen.insert((key.clone(), r.seed)) {
                return Err(Error::Metric(format!(
                    "duplicate cell {} {} -> {} seed {}",
                    r.method,
                    r.train.label(),
                    r.eval.label(),
                    r.seed
                )));
            }
            let e = groups.entry(key.clone()).or_insert_with(|| {
                order.push(key);
                (r.train, r.eval, Vec::new())
            });
            e.2.push(r.value);
        }
        let aggregates = order
            .into_iter()
            .map(|key| {
                let (train, eval, vals) = &groups[&key];
                let (mean, std) = mean_std(vals);
                AggregateRow {
                    method: key.0,
                    train: *train,
                    eval: *eval,
                    metric: key.3.clone(),
                    n: vals.len(),
                    mean,
                    std,
                }
            })
            .collect();
        Ok(MetricsReport { rows, aggregates })
    }

    pub fn get(&self, method: Method, train: Case, eval: Case, seed: u64) -> Option<&MetricRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.train == train && r.eval == eval && r.seed == seed)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:?},{:?},{:?},{:?},{},{},{:?},{}",
                r.method, r.train.p_img, r.train.p_txt, r.eval.p_img, r.eval.p_txt, r.seed, r.metric, r.value, r.flagged
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == CSV_HEADER => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    msg: "missing report header".into(),
                })
            }
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            let err = |msg: String| Error::Parse { line: i + 1, msg };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(err(format!("expected 9 fields, found {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("bad number `{s}`")));
            rows.push(MetricRow {
                method: f[0].parse().map_err(|_| err(format!("bad method `{}`", f[0])))?,
                train: Case {
                    p_img: num(f[1])?,
                    p_txt: num(f[2])?,
                },
                eval: Case {
                    p_img: num(f[3])?,
                    p_txt: num(f[4])?,
                },
                seed: f[5].parse().map_err(|_| err(format!("bad seed `{}`", f[5])))?,
                metric: f[6].to_string(),
                value: num(f[7])?,
                flagged: f[8].parse().map_err(|_| err(format!("bad flag `{}`", f[8])))?,
            });
        }
        Self::from_rows(rows)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })
    }

    /// One table per metric: a row per (train, eval) pair, a column per
    /// method, values as mean ± std over seeds in percent, best mean bold.
    pub fn to_markdown(&self) -> String {
        let mut methods: Vec<Method> = self.aggregates.iter().map(|a| a.method).collect();
        methods.sort();
        methods.dedup();
        let mut metrics: Vec<&str> = Vec::new();
        for a in &self.aggregates {
            if !metrics.contains(&a.metric.as_str()) {
                metrics.push(&a.metric);
            }
        }
        let mut seeds: Vec<u64> = self.rows.iter().map(|r| r.seed).collect();
        seeds.sort();
        seeds.dedup();
        let seeds: Vec<String> = seeds.iter().map(u64::to_string).collect();

        let mut out = String::new();
        for metric in metrics {
            let _ = writeln!(out, "## {metric} (x100, mean ± std over seeds {})\n", seeds.join(", "));
            out.push_str("| Train image | Train text | Eval image | Eval text |");
            for m in &methods {
                let _ = write!(out, " {m} |");
            }
            out.push_str("\n|---|---|---|---|");
            out.push_str(&"---|".repeat(methods.len()));
            out.push('\n');
            let mut pairs: Vec<(Case, Case)> = Vec::new();
            for a in self.aggregates.iter().filter(|a| a.metric == metric) {
                if !pairs.iter().any(|(t, e)| *t == a.train && *e == a.eval) {
                    pairs.push((a.train, a.eval));
                }
            }
            for (train, eval) in pairs {
                let cells: Vec<Option<&AggregateRow>> = methods
                    .iter()
                    .map(|&m| {
                        self.aggregates
                            .iter()
                            .find(|a| a.metric == metric && a.method == m && a.train == train && a.eval == eval)
                    })
                    .collect();
                let best = cells.iter().flatten().map(|a| a.mean).fold(f64::NEG_INFINITY, f64::max);
                let _ = write!(
                    out,
                    "| {}% | {}% | {}% | {}% |",
                    pct(train.p_img),
                    pct(train.p_txt),
                    pct(eval.p_img),
                    pct(eval.p_txt)
                );
                for c in cells {
                    match c {
                        Some(a) => {
                            let v = format!("{:.2} ± {:.2}", 100.0 * a.mean, 100.0 * a.std);
                            if a.mean == best {
                                let _ = write!(out, " **{v}** |");
                            } else {
                                let _ = write!(out, " {v} |");
                            }
                        }
                        None => out.push_str(" - |"),
                    }
                }
                out.push('\n');
            }
            out.push('\n');
        }
        out
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Json => self.to_json(),
            ReportFormat::Markdown => self.to_markdown(),
        }
    }
}

fn pct(p: f64) -> String {
    Case { p_img: p, p_txt: p }.label().split('/').next().unwrap_or_default().to_string()
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Writes `report` to `path` in `format`.
pub fn emit_report(report: &MetricsReport, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    if report.rows.is_empty() {
        return Err(Error::Metric("refusing to write an empty report".into()));
    }
    let path = path.as_ref();
    std::fs::write(path, report.render(format)).map_err(|e| Error::io(path, e))
}
