//! Result files, cross-run summaries and figures.
//!
//! Every analysis command writes a JSON file that embeds a [`RunInfo`]; a
//! run directory holds the files of one model under one condition.
//! [`render_reports`] turns a set of run directories into four SVG figures
//! plus `report.json`, whose `provenance` entries point back at the files
//! each number came from. Output is byte-for-byte deterministic.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::behavior::{condition_delta, csv_error, csv_writer, AccuracyTable, Cell, ConditionDelta};
use crate::corpus::Condition;
use crate::decoder::DecodeResult;
use crate::error::{Error, Result};
use crate::runtime::capture_io::write_json;
use crate::selectivity::{fit_exponential, ExpFit, LayerPercentages, Separation};

pub const ACCURACY_JSON: &str = "accuracy.json";
pub const ACCURACY_CSV: &str = "accuracy.csv";
pub const OUTCOMES_CSV: &str = "outcomes.csv";
pub const SELECTIVITY_JSON: &str = "selectivity.json";
pub const SELECTIVITY_CSV: &str = "selectivity.csv";
pub const DECODE_JSON: &str = "decode.json";
pub const DECODE_CSV: &str = "decode.csv";
pub const SEPARATION_JSON: &str = "separation.json";
pub const REPORT_JSON: &str = "report.json";
pub const DELTAS_CSV: &str = "condition_deltas.csv";

pub const FIG_ACCURACY: &str = "fig_accuracy.svg";
pub const FIG_SELECTIVITY_LAYERS: &str = "fig_selectivity_layers.svg";
pub const FIG_SELECTIVITY_VS_ACCURACY: &str = "fig_selectivity_vs_accuracy.svg";
pub const FIG_DECODE: &str = "fig_decode.svg";

/// Human single-neuron reference: 49 of 212 recorded neurons.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HumanReference;

impl HumanReference {
    pub const SIGNIFICANT: u32 = 49;
    pub const RECORDED: u32 = 212;
    /// Rounded percentage as published.
    pub const PERCENT: f64 = 23.0;

    pub fn significant_fraction() -> f64 {
        f64::from(Self::SIGNIFICANT) / f64::from(Self::RECORDED)
    }
}

/// A published figure shown next to computed results, never mixed with them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PaperReference {
    pub key: &'static str,
    pub description: &'static str,
    pub value: f64,
}

pub const PAPER_REFERENCES: &[PaperReference] = &[
    PaperReference {
        key: "false_belief_accuracy_mean",
        description: "false-belief accuracy, mean over models (%)",
        value: 52.0,
    },
    PaperReference {
        key: "true_belief_accuracy_mean",
        description: "true-belief accuracy, mean over models (%)",
        value: 68.0,
    },
    PaperReference {
        key: "fact_accuracy_mean",
        description: "fact accuracy, mean over models (%)",
        value: 70.0,
    },
    PaperReference {
        key: "false_belief_accuracy_best",
        description: "false-belief accuracy, LLaMa-33b (%)",
        value: 69.0,
    },
    PaperReference {
        key: "question_only_accuracy_mean",
        description: "question-only control accuracy, mean (%)",
        value: 47.0,
    },
    PaperReference {
        key: "shuffled_accuracy_mean",
        description: "shuffled-statement control accuracy, mean (%)",
        value: 55.0,
    },
    PaperReference {
        key: "selectivity_falcon40b_layer25",
        description: "significant embeddings, Falcon-40b layer 25 (%)",
        value: 6.3,
    },
    PaperReference {
        key: "selectivity_llama30b_layer19",
        description: "significant embeddings, LLaMa-30b layer 19 (%)",
        value: 5.6,
    },
    PaperReference {
        key: "selectivity_large_mean",
        description: "significant embeddings, models >= 12b (%)",
        value: 3.9,
    },
    PaperReference {
        key: "selectivity_small_mean",
        description: "significant embeddings, models <= 7b (%)",
        value: 0.6,
    },
    PaperReference {
        key: "exp_fit_a",
        description: "exponential fit a",
        value: 0.01,
    },
    PaperReference {
        key: "exp_fit_b",
        description: "exponential fit b",
        value: 6.1,
    },
    PaperReference {
        key: "decode_best",
        description: "decoding accuracy, Falcon-40b (%)",
        value: 81.0,
    },
    PaperReference {
        key: "decode_large_mean",
        description: "decoding accuracy, models >= 12b (%)",
        value: 75.0,
    },
    PaperReference {
        key: "decode_small_mean",
        description: "decoding accuracy, models <= 7b (%)",
        value: 67.0,
    },
    PaperReference {
        key: "decode_shuffled_mean",
        description: "decoding accuracy, shuffled control (%)",
        value: 55.0,
    },
    PaperReference {
        key: "decode_gap_large",
        description: "intact - shuffled decoding gap, models >= 12b (%)",
        value: 19.0,
    },
    PaperReference {
        key: "zscore_correct",
        description: "z-scored separation, correctly decoded",
        value: 0.60,
    },
    PaperReference {
        key: "zscore_incorrect",
        description: "z-scored separation, incorrectly decoded",
        value: 0.25,
    },
    PaperReference {
        key: "human_percent",
        description: "significant human neurons (%)",
        value: 23.0,
    },
];

pub fn paper_reference(key: &str) -> Option<f64> {
    PAPER_REFERENCES.iter().find(|r| r.key == key).map(|r| r.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
}

/// Independent two-sample t-test: pooled variance, or Welch's unequal
/// variance form when `welch` is set.
pub fn two_sample_t(a: &[f64], b: &[f64], welch: bool) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Analysis("t-test needs at least 2 values per group".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("t-test input".into()));
    }
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let (m1, v1) = mean_var(a);
    let (m2, v2) = mean_var(b);
    let (se, df) = if welch {
        let (q1, q2) = (v1 / n1, v2 / n2);
        let df = (q1 + q2).powi(2) / (q1 * q1 / (n1 - 1.0) + q2 * q2 / (n2 - 1.0));
        ((q1 + q2).sqrt(), df)
    } else {
        let df = n1 + n2 - 2.0;
        let pooled = ((n1 - 1.0) * v1 + (n2 - 1.0) * v2) / df;
        ((pooled * (1.0 / n1 + 1.0 / n2)).sqrt(), df)
    };
    if se == 0.0 {
        if m1 == m2 {
            return Ok(TTest {
                t: 0.0,
                df: if df.is_finite() { df } else { n1 + n2 - 2.0 },
                p: 1.0,
            });
        }
        return Err(Error::Analysis(
            "t-test groups have zero variance and different means".into(),
        ));
    }
    let t = (m1 - m2) / se;
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Analysis(format!("t distribution: {e}")))?;
    let p = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(TTest { t, df, p })
}

/// Identity of the run that produced a result file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunInfo {
    pub model: String,
    /// Parameter-count label such as `124M`.
    pub n_params: String,
    pub condition: Condition,
    #[serde(default)]
    pub seed: Option<u64>,
    pub corpus_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyFile {
    pub run: RunInfo,
    pub table: AccuracyTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectivityFile {
    pub run: RunInfo,
    pub alpha: f64,
    pub n_trials: usize,
    pub d: usize,
    pub layers: LayerPercentages,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeFile {
    pub run: RunInfo,
    pub result: DecodeResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationFile {
    pub run: RunInfo,
    pub separation: Option<Separation>,
    /// Why `separation` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

pub fn write_result<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_json(path, value)
}

pub fn read_result<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Results of one model under one condition.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRunSummary {
    pub dir: PathBuf,
    pub run: RunInfo,
    pub accuracy: Option<AccuracyTable>,
    pub selectivity: Option<SelectivityFile>,
    pub decode: Option<DecodeResult>,
    pub separation: Option<SeparationFile>,
}

impl ModelRunSummary {
    pub fn model_name(&self) -> &str {
        &self.run.model
    }

    fn label(&self) -> String {
        format!("{} {}", self.run.model, self.run.condition)
    }

    fn tick_label(&self) -> String {
        format!("{}\n{}", self.run.model, self.run.condition)
    }
}

/// Reads whichever result files exist in `dir`; at least one must.
pub fn load_run(dir: &Path) -> Result<ModelRunSummary> {
    fn opt<T: for<'de> Deserialize<'de>>(dir: &Path, name: &str) -> Result<Option<T>> {
        let path = dir.join(name);
        if path.is_file() {
            read_result(&path).map(Some)
        } else {
            Ok(None)
        }
    }
    let accuracy: Option<AccuracyFile> = opt(dir, ACCURACY_JSON)?;
    let selectivity: Option<SelectivityFile> = opt(dir, SELECTIVITY_JSON)?;
    let decode: Option<DecodeFile> = opt(dir, DECODE_JSON)?;
    let separation: Option<SeparationFile> = opt(dir, SEPARATION_JSON)?;
    let runs: Vec<&RunInfo> = [
        accuracy.as_ref().map(|f| &f.run),
        selectivity.as_ref().map(|f| &f.run),
        decode.as_ref().map(|f| &f.run),
        separation.as_ref().map(|f| &f.run),
    ]
    .into_iter()
    .flatten()
    .collect();
    let Some(&first) = runs.first() else {
        return Err(Error::io(
            dir,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("no result files ({ACCURACY_JSON}, {SELECTIVITY_JSON}, {DECODE_JSON})"),
            ),
        ));
    };
    for r in &runs {
        if (&r.model, r.condition, &r.corpus_fingerprint) != (&first.model, first.condition, &first.corpus_fingerprint)
        {
            return Err(Error::InvalidInput(format!(
                "{}: result files disagree on model/condition/corpus ({} {} vs {} {})",
                dir.display(),
                first.model,
                first.condition,
                r.model,
                r.condition
            )));
        }
    }
    Ok(ModelRunSummary {
        dir: dir.to_path_buf(),
        run: first.clone(),
        accuracy: accuracy.map(|f| f.table),
        selectivity,
        decode: decode.map(|f| f.result),
        separation,
    })
}

/// Path of `target` relative to directory `from`; both must exist.
fn relative_path(from: &Path, target: &Path) -> Result<String> {
    let from = from.canonicalize().map_err(|e| Error::io(from, e))?;
    let to = target.canonicalize().map_err(|e| Error::io(target, e))?;
    let a: Vec<Component> = from.components().collect();
    let b: Vec<Component> = to.components().collect();
    let common = a.iter().zip(&b).take_while(|(x, y)| x == y).count();
    let mut parts: Vec<String> = vec!["..".to_string(); a.len() - common];
    parts.extend(b[common..].iter().map(|c| c.as_os_str().to_string_lossy().into_owned()));
    Ok(parts.join("/"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecodeGap {
    pub model: String,
    pub intact: f64,
    pub shuffled: f64,
    pub gap: f64,
}

/// Optional group comparison between models marked large and the rest.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReportOptions {
    pub large_models: BTreeSet<String>,
    /// Welch's t-test instead of pooled variance.
    pub welch: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupComparison {
    pub metric: String,
    pub large: Vec<f64>,
    pub small: Vec<f64>,
    /// Absent when either group has fewer than two values.
    pub test: Option<TTest>,
    pub variant: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutput {
    pub files: Vec<PathBuf>,
    pub deltas: Vec<(String, ConditionDelta)>,
    pub decode_gaps: Vec<DecodeGap>,
    pub fit: Option<ExpFit>,
    pub comparisons: Vec<GroupComparison>,
}

fn condition_rank(c: Condition) -> u8 {
    match c {
        Condition::Intact => 0,
        Condition::Shuffled => 1,
        Condition::QuestionOnly => 2,
    }
}

/// Writes the four figures, `report.json` and the condition-delta table.
pub fn render_reports(summaries: &[ModelRunSummary], out_dir: &Path, options: &ReportOptions) -> Result<ReportOutput> {
    if summaries.is_empty() {
        return Err(Error::InvalidInput("report needs at least one run".into()));
    }
    let mut runs: Vec<&ModelRunSummary> = summaries.iter().collect();
    runs.sort_by(|a, b| {
        (&a.run.model, condition_rank(a.run.condition)).cmp(&(&b.run.model, condition_rank(b.run.condition)))
    });
    for w in runs.windows(2) {
        if w[0].run.model == w[1].run.model && w[0].run.condition == w[1].run.condition {
            return Err(Error::InvalidInput(format!(
                "two runs for {} under {}",
                w[0].run.model, w[0].run.condition
            )));
        }
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let find = |model: &str, c: Condition| {
        runs.iter()
            .copied()
            .find(|r| r.run.model == model && r.run.condition == c)
    };
    let mut models: Vec<&str> = runs.iter().map(|r| r.run.model.as_str()).collect();
    models.dedup();

    let mut deltas = Vec::new();
    let mut decode_gaps = Vec::new();
    for &model in &models {
        let Some(intact) = find(model, Condition::Intact) else {
            continue;
        };
        if let Some(acc) = &intact.accuracy {
            for c in [Condition::Shuffled, Condition::QuestionOnly] {
                if let Some(ctrl) = find(model, c).and_then(|r| r.accuracy.as_ref()) {
                    deltas.push((model.to_string(), condition_delta(acc, ctrl)?));
                }
            }
        }
        let shuffled = find(model, Condition::Shuffled).and_then(|r| r.decode.as_ref());
        if let (Some(i), Some(s)) = (&intact.decode, shuffled) {
            decode_gaps.push(DecodeGap {
                model: model.to_string(),
                intact: i.model_average,
                shuffled: s.model_average,
                gap: i.model_average - s.model_average,
            });
        }
    }

    // Performance vs peak selectivity, one point per intact run.
    let fit_points: Vec<(String, f64, f64)> = runs
        .iter()
        .filter(|r| r.run.condition == Condition::Intact)
        .filter_map(|r| {
            let acc = r.accuracy.as_ref()?;
            let sel = r.selectivity.as_ref()?;
            Some((r.run.model.clone(), acc.false_belief.accuracy, sel.layers.model_summary))
        })
        .collect();
    let positive: Vec<(f64, f64)> = fit_points.iter().filter(|p| p.2 > 0.0).map(|p| (p.1, p.2)).collect();
    let (fit, fit_note) = match fit_exponential(&positive) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(format!("not fitted: {e}"))),
    };

    let comparisons = if options.large_models.is_empty() {
        Vec::new()
    } else {
        group_comparisons(&runs, options)?
    };

    let figures = [
        (FIG_ACCURACY, figure_accuracy(&runs)),
        (FIG_SELECTIVITY_LAYERS, figure_layers(&runs)),
        (FIG_SELECTIVITY_VS_ACCURACY, figure_scatter(&fit_points, fit.as_ref())),
        (FIG_DECODE, figure_decode(&models, &runs, &decode_gaps)),
    ];
    let mut files = Vec::new();
    for (name, svg) in &figures {
        let path = out_dir.join(name);
        std::fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        files.push(path);
    }

    let deltas_path = out_dir.join(DELTAS_CSV);
    {
        let mut w = csv_writer(&deltas_path)?;
        w.write_record(["model", "control", "cell", "delta"])
            .map_err(|e| csv_error(&deltas_path, e))?;
        for (model, d) in &deltas {
            for cell in Cell::ALL {
                w.write_record([
                    model.clone(),
                    d.control.to_string(),
                    cell.as_str().into(),
                    d.cell(cell).to_string(),
                ])
                .map_err(|e| csv_error(&deltas_path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(&deltas_path, e))?;
    }
    files.push(deltas_path);

    let mut run_entries = Vec::new();
    for r in &runs {
        let mut metrics = serde_json::Map::new();
        let mut provenance = serde_json::Map::new();
        let mut source = |key: &str, file: &str| -> Result<()> {
            provenance.insert(key.into(), Value::String(relative_path(out_dir, &r.dir.join(file))?));
            Ok(())
        };
        if let Some(a) = &r.accuracy {
            for cell in Cell::ALL {
                metrics.insert(format!("accuracy_{}", cell.as_str()), json!(a.cell(cell).accuracy));
            }
            source("accuracy", ACCURACY_JSON)?;
        }
        if let Some(s) = &r.selectivity {
            metrics.insert("selectivity_percent_by_layer".into(), json!(s.layers.percent));
            metrics.insert("selectivity_peak_percent".into(), json!(s.layers.model_summary));
            metrics.insert("selectivity_peak_layer".into(), json!(s.layers.peak_layer));
            source("selectivity", SELECTIVITY_JSON)?;
        }
        if let Some(d) = &r.decode {
            let by_layer: Vec<f64> = d.layers.iter().map(|l| l.mean).collect();
            metrics.insert("decode_accuracy_by_layer".into(), json!(by_layer));
            metrics.insert("decode_model_average".into(), json!(d.model_average));
            metrics.insert("decode_best_layer".into(), json!(d.best_layer));
            source("decode", DECODE_JSON)?;
        }
        if let Some(s) = &r.separation {
            let sep = s.separation.as_ref();
            metrics.insert("zscore_correct".into(), json!(sep.and_then(|s| s.mean_z_correct)));
            metrics.insert("zscore_incorrect".into(), json!(sep.and_then(|s| s.mean_z_incorrect)));
            source("separation", SEPARATION_JSON)?;
        }
        run_entries.push(json!({
            "model": r.run.model,
            "n_params": r.run.n_params,
            "condition": r.run.condition,
            "seed": r.run.seed,
            "corpus_fingerprint": r.run.corpus_fingerprint,
            "metrics": metrics,
            "provenance": provenance,
        }));
    }
    let report = json!({
        "runs": run_entries,
        "condition_deltas": deltas.iter().map(|(m, d)| json!({
            "model": m,
            "control": d.control,
            "fact": d.fact,
            "true_belief": d.true_belief,
            "false_belief": d.false_belief,
        })).collect::<Vec<_>>(),
        "decode_gaps": decode_gaps,
        "group_comparisons": comparisons,
        "exponential_fit": {
            "points": fit_points.iter().map(|(m, x, y)| json!({"model": m, "false_belief_accuracy": x, "peak_percent": y})).collect::<Vec<_>>(),
            "fit": fit,
            "note": fit_note,
        },
        "human_reference": {
            "significant": HumanReference::SIGNIFICANT,
            "recorded": HumanReference::RECORDED,
            "percent": HumanReference::PERCENT,
            "label": "paper-reported",
        },
        "paper_reported": PAPER_REFERENCES,
        "figures": figures.iter().map(|(n, _)| *n).collect::<Vec<_>>(),
    });
    let report_path = out_dir.join(REPORT_JSON);
    write_json(&report_path, &report)?;
    files.push(report_path);

    Ok(ReportOutput {
        files,
        deltas,
        decode_gaps,
        fit,
        comparisons,
    })
}

/// Large vs small t-tests over intact runs, one per metric.
fn group_comparisons(runs: &[&ModelRunSummary], options: &ReportOptions) -> Result<Vec<GroupComparison>> {
    type Metric = fn(&ModelRunSummary) -> Option<f64>;
    let metrics: [(&str, Metric); 3] = [
        ("false_belief_accuracy", |r| {
            r.accuracy.as_ref().map(|a| a.false_belief.accuracy)
        }),
        ("selectivity_peak_percent", |r| {
            r.selectivity.as_ref().map(|s| s.layers.model_summary)
        }),
        ("decode_model_average", |r| r.decode.as_ref().map(|d| d.model_average)),
    ];
    let intact: Vec<&&ModelRunSummary> = runs.iter().filter(|r| r.run.condition == Condition::Intact).collect();
    let mut out = Vec::new();
    for (name, metric) in metrics {
        let (mut large, mut small) = (Vec::new(), Vec::new());
        for r in &intact {
            if let Some(v) = metric(r) {
                if options.large_models.contains(&r.run.model) {
                    large.push(v);
                } else {
                    small.push(v);
                }
            }
        }
        let test = if large.len() >= 2 && small.len() >= 2 {
            Some(two_sample_t(&large, &small, options.welch)?)
        } else {
            None
        };
        out.push(GroupComparison {
            metric: name.into(),
            large,
            small,
            test,
            variant: if options.welch { "welch" } else { "pooled" },
        });
    }
    Ok(out)
}

const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];
const REFERENCE_COLOR: &str = "#7f7f7f";

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Plot area of 800 × 440 with fixed margins and linear axes.
struct Chart {
    body: String,
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

const W: f64 = 800.0;
const H: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 270.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 80.0;

impl Chart {
    fn new(title: &str, x_label: &str, y_label: &str, (x0, x1): (f64, f64), (y0, y1): (f64, f64)) -> Self {
        let mut c = Chart {
            body: String::new(),
            x0,
            x1,
            y0,
            y1,
        };
        let _ = write!(
            c.body,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">
<rect width="{W}" height="{H}" fill="white"/>
<text x="{}" y="24" font-size="15" text-anchor="middle">{}</text>
<text x="{}" y="{}" text-anchor="middle">{}</text>
<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>
"#,
            LEFT + (W - LEFT - RIGHT) / 2.0,
            escape(title),
            LEFT + (W - LEFT - RIGHT) / 2.0,
            H - 16.0,
            escape(x_label),
            TOP + (H - TOP - BOTTOM) / 2.0,
            TOP + (H - TOP - BOTTOM) / 2.0,
            escape(y_label),
        );
        let (px0, py0, px1, py1) = (LEFT, H - BOTTOM, W - RIGHT, TOP);
        let _ = writeln!(
            c.body,
            r##"<path d="M{px0:.1} {py1:.1}V{py0:.1}H{px1:.1}" fill="none" stroke="#000"/>"##
        );
        for i in 0..=4 {
            let v = y0 + (y1 - y0) * f64::from(i) / 4.0;
            let y = c.py(v);
            let _ = writeln!(
                c.body,
                r##"<line x1="{:.1}" y1="{y:.1}" x2="{px0:.1}" y2="{y:.1}" stroke="#000"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"##,
                px0 - 4.0,
                px0 - 7.0,
                y + 4.0,
                tick(v)
            );
        }
        c
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }

    fn x_ticks(&mut self, ticks: &[(f64, String)]) {
        for (v, label) in ticks {
            let x = self.px(*v);
            let y = H - BOTTOM;
            let _ = write!(
                self.body,
                r##"<line x1="{x:.1}" y1="{y:.1}" x2="{x:.1}" y2="{:.1}" stroke="#000"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">"##,
                y + 4.0,
                y + 17.0,
            );
            for (i, line) in label.split('\n').enumerate() {
                let dy = if i == 0 { 0.0 } else { 14.0 };
                let _ = write!(self.body, r#"<tspan x="{x:.1}" dy="{dy}">{}</tspan>"#, escape(line));
            }
            self.body.push_str("</text>\n");
        }
    }

    /// Dashed horizontal reference line labelled at the right edge.
    fn reference_line(&mut self, y: f64, label: &str) {
        let py = self.py(y);
        let _ = writeln!(
            self.body,
            r#"<line x1="{LEFT:.1}" y1="{py:.1}" x2="{:.1}" y2="{py:.1}" stroke="{REFERENCE_COLOR}" stroke-dasharray="6 4"/><text x="{:.1}" y="{:.1}" text-anchor="end" fill="{REFERENCE_COLOR}">{}</text>"#,
            W - RIGHT,
            W - RIGHT - 4.0,
            py - 4.0,
            escape(label)
        );
    }

    fn rect(&mut self, x: f64, width: f64, y: f64, color: &str) {
        let (top, base) = (self.py(y.max(self.y0)), self.py(self.y0));
        let _ = writeln!(
            self.body,
            r#"<rect x="{:.1}" y="{top:.1}" width="{:.1}" height="{:.1}" fill="{color}"/>"#,
            self.px(x),
            self.px(x + width) - self.px(x),
            base - top
        );
    }

    fn polyline(&mut self, pts: &[(f64, f64)], color: &str, dashed: bool) {
        let d: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.1},{:.1}", self.px(x), self.py(y)))
            .collect();
        let dash = if dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"{dash}/>"#,
            d.join(" ")
        );
    }

    fn dot(&mut self, x: f64, y: f64, color: &str) {
        let _ = writeln!(
            self.body,
            r#"<circle cx="{:.1}" cy="{:.1}" r="4" fill="{color}"/>"#,
            self.px(x),
            self.py(y)
        );
    }

    fn text(&mut self, x: f64, y: f64, s: &str, color: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" fill="{color}">{}</text>"#,
            self.px(x),
            self.py(y) - 4.0,
            escape(s)
        );
    }

    /// Legend rows in the right margin, starting from the top.
    fn legend(&mut self, entries: &[(String, &str)]) {
        for (i, (label, color)) in entries.iter().enumerate() {
            let y = TOP + 10.0 + 18.0 * i as f64;
            let x = W - RIGHT + 10.0;
            let _ = writeln!(
                self.body,
                r#"<rect x="{x:.1}" y="{:.1}" width="10" height="10" fill="{color}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
                y - 9.0,
                x + 15.0,
                y,
                escape(label)
            );
        }
    }

    /// Footnote lines under the x-axis label area.
    fn note(&mut self, lines: &[String]) {
        for (i, line) in lines.iter().enumerate() {
            let _ = writeln!(
                self.body,
                r#"<text x="{:.1}" y="{:.1}" font-size="10" fill="{REFERENCE_COLOR}">{}</text>"#,
                W - RIGHT + 10.0,
                H - BOTTOM - 12.0 * (lines.len() - 1 - i) as f64,
                escape(line)
            );
        }
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

fn tick(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn percent(v: f64) -> String {
    format!("{:.1}%", 100.0 * v)
}

fn figure_accuracy(runs: &[&ModelRunSummary]) -> String {
    let with: Vec<&&ModelRunSummary> = runs.iter().filter(|r| r.accuracy.is_some()).collect();
    let n = with.len().max(1) as f64;
    let mut c = Chart::new("Forced-choice accuracy", "run", "accuracy (%)", (0.0, n), (0.0, 100.0));
    c.reference_line(50.0, "chance 50%");
    let ticks: Vec<(f64, String)> = with
        .iter()
        .enumerate()
        .map(|(i, r)| (i as f64 + 0.5, r.tick_label()))
        .collect();
    c.x_ticks(&ticks);
    for (i, r) in with.iter().enumerate() {
        let acc = r.accuracy.as_ref().expect("filtered");
        for (k, cell) in Cell::ALL.iter().enumerate() {
            let x = i as f64 + 0.1 + 0.27 * k as f64;
            let v = 100.0 * acc.cell(*cell).accuracy;
            c.rect(x, 0.26, v, PALETTE[k]);
            c.text(x + 0.13, v, &format!("{v:.0}"), "#000");
        }
    }
    c.legend(&[
        ("fact".into(), PALETTE[0]),
        ("true belief".into(), PALETTE[1]),
        ("false belief".into(), PALETTE[2]),
    ]);
    c.note(&[
        "paper-reported means:".into(),
        format!(
            "fact {:.0}%, true belief {:.0}%",
            paper_reference("fact_accuracy_mean").unwrap_or(0.0),
            paper_reference("true_belief_accuracy_mean").unwrap_or(0.0)
        ),
        format!(
            "false belief {:.0}%",
            paper_reference("false_belief_accuracy_mean").unwrap_or(0.0)
        ),
    ]);
    c.finish()
}

fn figure_layers(runs: &[&ModelRunSummary]) -> String {
    let with: Vec<&&ModelRunSummary> = runs.iter().filter(|r| r.selectivity.is_some()).collect();
    let max_layer = with
        .iter()
        .map(|r| r.selectivity.as_ref().expect("filtered").layers.percent.len())
        .max()
        .unwrap_or(1)
        .saturating_sub(1)
        .max(1);
    let max_pct = with
        .iter()
        .flat_map(|r| r.selectivity.as_ref().expect("filtered").layers.percent.iter().copied())
        .fold(HumanReference::PERCENT, f64::max);
    let y_top = (max_pct * 1.1 / 8.0).ceil() * 8.0;
    let mut c = Chart::new(
        "Significant embedding dimensions by layer",
        "capture point (0 = embeddings)",
        "significant dims (%)",
        (0.0, max_layer as f64),
        (0.0, y_top),
    );
    let step = (max_layer / 12).max(1);
    let ticks: Vec<(f64, String)> = (0..=max_layer)
        .step_by(step)
        .map(|l| (l as f64, l.to_string()))
        .collect();
    c.x_ticks(&ticks);
    c.reference_line(HumanReference::PERCENT, "human neurons 23% (paper-reported)");
    let mut legend = Vec::new();
    for (i, r) in with.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<(f64, f64)> = r
            .selectivity
            .as_ref()
            .expect("filtered")
            .layers
            .percent
            .iter()
            .enumerate()
            .map(|(l, &p)| (l as f64, p))
            .collect();
        c.polyline(&pts, color, false);
        for &(x, y) in &pts {
            c.dot(x, y, color);
        }
        legend.push((r.label(), color));
    }
    c.legend(&legend);
    c.finish()
}

fn figure_scatter(points: &[(String, f64, f64)], fit: Option<&ExpFit>) -> String {
    let (pa, pb) = (
        paper_reference("exp_fit_a").unwrap_or(0.01),
        paper_reference("exp_fit_b").unwrap_or(6.1),
    );
    let y_max = points.iter().map(|p| p.2).fold(pa * pb.exp(), f64::max);
    let y_top = (y_max * 1.2).ceil().max(1.0);
    let mut c = Chart::new(
        "Selectivity vs false-belief accuracy",
        "false-belief accuracy",
        "peak significant dims (%)",
        (0.0, 1.0),
        (0.0, y_top),
    );
    let ticks: Vec<(f64, String)> = (0..=4)
        .map(|i| (f64::from(i) / 4.0, tick(f64::from(i) / 4.0)))
        .collect();
    c.x_ticks(&ticks);
    let curve = |f: &dyn Fn(f64) -> f64| -> Vec<(f64, f64)> {
        (0..=50)
            .map(|i| f64::from(i) / 50.0)
            .map(|x| (x, f(x).min(y_top)))
            .collect()
    };
    c.polyline(&curve(&|x| pa * (pb * x).exp()), REFERENCE_COLOR, true);
    let mut legend = vec![(format!("paper-reported fit a={pa}, b={pb}"), REFERENCE_COLOR)];
    if let Some(f) = fit {
        c.polyline(&curve(&|x| f.eval(x)), PALETTE[1], false);
        legend.push((format!("fit a={:.3}, b={:.2}", f.a, f.b), PALETTE[1]));
    }
    for (model, x, y) in points {
        c.dot(*x, *y, PALETTE[0]);
        c.text(*x, *y + 0.02 * y_top, model, "#000");
    }
    legend.push(("intact runs".into(), PALETTE[0]));
    c.legend(&legend);
    c.finish()
}

fn figure_decode(models: &[&str], runs: &[&ModelRunSummary], gaps: &[DecodeGap]) -> String {
    let n = models.len().max(1) as f64;
    let mut c = Chart::new(
        "Trial-type decoding accuracy",
        "model",
        "layer-averaged accuracy (%)",
        (0.0, n),
        (0.0, 100.0),
    );
    c.reference_line(50.0, "chance 50%");
    let ticks: Vec<(f64, String)> = models
        .iter()
        .enumerate()
        .map(|(i, m)| (i as f64 + 0.5, m.to_string()))
        .collect();
    c.x_ticks(&ticks);
    for (i, model) in models.iter().enumerate() {
        for (k, cond) in [Condition::Intact, Condition::Shuffled].into_iter().enumerate() {
            let run = runs.iter().find(|r| r.run.model == *model && r.run.condition == cond);
            if let Some(d) = run.and_then(|r| r.decode.as_ref()) {
                let x = i as f64 + 0.15 + 0.35 * k as f64;
                let v = 100.0 * d.model_average;
                c.rect(x, 0.33, v, PALETTE[k]);
                c.text(x + 0.165, v, &format!("{v:.1}"), "#000");
            }
        }
        if let Some(g) = gaps.iter().find(|g| g.model == *model) {
            let top = 100.0 * g.intact.max(g.shuffled);
            c.text(
                i as f64 + 0.5,
                (top + 8.0).min(100.0),
                &format!("gap {}", percent(g.gap)),
                PALETTE[3],
            );
        }
    }
    c.legend(&[("intact".into(), PALETTE[0]), ("shuffled".into(), PALETTE[1])]);
    c.note(&[
        "paper-reported:".into(),
        format!(
            "large-model gap {:.0}%",
            paper_reference("decode_gap_large").unwrap_or(0.0)
        ),
        format!("Falcon-40b best {:.0}%", paper_reference("decode_best").unwrap_or(0.0)),
    ]);
    c.finish()
}
