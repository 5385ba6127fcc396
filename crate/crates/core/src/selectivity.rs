//! Per-dimension selectivity for trial type.
//!
//! Each trial is reduced to the mean hidden state over its question tokens,
//! giving a `trials × capture points × d` matrix. Every `(layer, dim)` is
//! then tested with a two-sided Mann-Whitney U test between true- and
//! false-belief trials, without multiple-comparison correction.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::behavior::{csv_error, csv_writer};
use crate::corpus::{BeliefType, Corpus};
use crate::error::{Error, Result};
use crate::runtime::CaptureSet;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialLabel {
    pub trial_id: String,
    pub pair_id: String,
    pub belief_type: BeliefType,
}

/// Question-averaged hidden states, `trials × points × d`, trial-major.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionFeatureMatrix {
    pub points: usize,
    pub d: usize,
    pub trials: Vec<TrialLabel>,
    pub values: Vec<f64>,
}

impl QuestionFeatureMatrix {
    /// Checks shape, finiteness and that every pair has one trial of each type.
    pub fn new(points: usize, d: usize, trials: Vec<TrialLabel>, values: Vec<f64>) -> Result<Self> {
        if points == 0 || d == 0 {
            return Err(Error::InvalidInput(
                "feature matrix needs at least one layer and one dim".into(),
            ));
        }
        if values.len() != trials.len() * points * d {
            return Err(Error::InvalidInput(format!(
                "{} values for {} trials × {points} layers × {d} dims",
                values.len(),
                trials.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            let t = i / (points * d);
            return Err(Error::NonFinite(format!("features of trial `{}`", trials[t].trial_id)));
        }
        let m = QuestionFeatureMatrix {
            points,
            d,
            trials,
            values,
        };
        m.pairs()?;
        Ok(m)
    }

    pub fn n_trials(&self) -> usize {
        self.trials.len()
    }

    pub fn value(&self, trial: usize, layer: usize, dim: usize) -> f64 {
        self.values[(trial * self.points + layer) * self.d + dim]
    }

    /// Features of one trial at one capture point.
    pub fn row(&self, trial: usize, layer: usize) -> &[f64] {
        &self.values[(trial * self.points + layer) * self.d..][..self.d]
    }

    /// `(pair_id, true trial index, false trial index)`, in order of first
    /// appearance.
    pub fn pairs(&self) -> Result<Vec<(String, usize, usize)>> {
        let mut order: Vec<&str> = Vec::new();
        let mut slots: HashMap<&str, (Option<usize>, Option<usize>)> = HashMap::new();
        for (i, t) in self.trials.iter().enumerate() {
            let slot = slots.entry(&t.pair_id).or_insert_with(|| {
                order.push(&t.pair_id);
                (None, None)
            });
            let place = match t.belief_type {
                BeliefType::TrueBelief => &mut slot.0,
                BeliefType::FalseBelief => &mut slot.1,
            };
            if place.replace(i).is_some() {
                return Err(Error::Corpus {
                    pair_id: t.pair_id.clone(),
                    rule: format!("more than one {} trial", t.belief_type),
                });
            }
        }
        order
            .into_iter()
            .map(|p| match slots[p] {
                (Some(t), Some(f)) => Ok((p.to_string(), t, f)),
                _ => Err(Error::Corpus {
                    pair_id: p.to_string(),
                    rule: "pair lacks a true- or false-belief trial".into(),
                }),
            })
            .collect()
    }

    /// Copy with the belief labels swapped in the pairs chosen by `flip`.
    pub fn with_flipped_pairs(&self, flip: impl Fn(usize) -> bool) -> Result<Self> {
        let mut out = self.clone();
        for (k, (_, t, f)) in self.pairs()?.into_iter().enumerate() {
            if flip(k) {
                out.trials[t].belief_type = BeliefType::FalseBelief;
                out.trials[f].belief_type = BeliefType::TrueBelief;
            }
        }
        Ok(out)
    }
}

/// Averages each capture's hidden states over its question span. Labels are
/// looked up in `corpus` by trial id; the output keeps the capture order.
pub fn question_mean(captures: &[CaptureSet], corpus: &Corpus) -> Result<QuestionFeatureMatrix> {
    let first = captures
        .first()
        .ok_or_else(|| Error::InvalidInput("no captures".into()))?;
    let (points, d) = (first.capture_points(), first.d_model);
    let mut values = Vec::with_capacity(captures.len() * points * d);
    let mut trials = Vec::with_capacity(captures.len());
    for c in captures {
        if c.capture_points() != points || c.d_model != d {
            return Err(Error::InvalidInput(format!(
                "capture `{}` has {} layers × {} dims, expected {points} × {d}",
                c.trial_id,
                c.capture_points(),
                c.d_model
            )));
        }
        if !c.has_hidden() {
            return Err(Error::InvalidInput(format!(
                "capture `{}` has no hidden states",
                c.trial_id
            )));
        }
        let (s, e) = c.question_span;
        if s >= e || e > c.n_tokens {
            return Err(Error::EmptyQuestionSpan(c.trial_id.clone()));
        }
        let trial = corpus
            .trial(&c.trial_id)
            .ok_or_else(|| Error::InvalidInput(format!("capture `{}` is not a trial of the corpus", c.trial_id)))?;
        for layer in 0..points {
            let mut acc = vec![0.0f64; d];
            for tok in s..e {
                for (a, &v) in acc.iter_mut().zip(c.hidden_at(layer, tok)) {
                    *a += f64::from(v);
                }
            }
            values.extend(acc.iter().map(|a| a / (e - s) as f64));
        }
        trials.push(TrialLabel {
            trial_id: trial.trial_id.clone(),
            pair_id: trial.pair_id.clone(),
            belief_type: trial.belief_type,
        });
    }
    QuestionFeatureMatrix::new(points, d, trials, values)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitney {
    /// `min(u1, u2)`.
    pub u: f64,
    pub u1: f64,
    pub u2: f64,
    /// Rank sum of the first group.
    pub r1: f64,
    pub mean_rank_1: f64,
    pub mean_rank_2: f64,
    /// Two-sided.
    pub p: f64,
    /// Whether `p` comes from the exact null distribution.
    pub exact: bool,
}

/// Largest group size for which the exact null distribution is used.
pub const EXACT_MAX_N: usize = 8;

/// Two-sided Mann-Whitney U test with midranks for ties.
///
/// `U1 = n1·n2 + n1(n1+1)/2 − R1`, `U2 = n1·n2 − U1`, `U = min(U1, U2)`.
/// The p-value is exact when both groups have at most [`EXACT_MAX_N`]
/// members and there are no ties; otherwise it uses the normal
/// approximation with tie-corrected variance and continuity correction.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    let (n1, n2) = (a.len(), b.len());
    if n1 == 0 || n2 == 0 {
        return Err(Error::Analysis("Mann-Whitney test needs two nonempty groups".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Mann-Whitney input".into()));
    }
    let n = n1 + n2;
    let mut order: Vec<(f64, bool)> = a
        .iter()
        .map(|&v| (v, true))
        .chain(b.iter().map(|&v| (v, false)))
        .collect();
    order.sort_by(|x, y| x.0.total_cmp(&y.0));

    let mut r1 = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && order[j].0 == order[i].0 {
            j += 1;
        }
        // Ranks i+1..=j share their mean.
        let midrank = (i + 1 + j) as f64 / 2.0;
        let in_first = order[i..j].iter().filter(|x| x.1).count();
        r1 += midrank * in_first as f64;
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }

    let (f1, f2) = (n1 as f64, n2 as f64);
    let u1 = f1 * f2 + f1 * (f1 + 1.0) / 2.0 - r1;
    let u2 = f1 * f2 - u1;
    let u = u1.min(u2);
    let r2 = (n * (n + 1)) as f64 / 2.0 - r1;
    let exact = n1 <= EXACT_MAX_N && n2 <= EXACT_MAX_N && tie_term == 0.0;
    let p = if exact {
        exact_p(n1, n2, u)
    } else {
        normal_p(n1, n2, u, tie_term)
    };
    Ok(MannWhitney {
        u,
        u1,
        u2,
        r1,
        mean_rank_1: r1 / f1,
        mean_rank_2: r2 / f2,
        p,
        exact,
    })
}

/// Two-sided normal-approximation p-value with continuity correction.
/// `tie_term` is `Σ (t³ − t)` over groups of tied values.
pub fn normal_p(n1: usize, n2: usize, u: f64, tie_term: f64) -> f64 {
    let (f1, f2) = (n1 as f64, n2 as f64);
    let n = f1 + f2;
    let mean = f1 * f2 / 2.0;
    let var = f1 * f2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((mean - u).abs() - 0.5).max(0.0) / var.sqrt();
    erfc(z / std::f64::consts::SQRT_2).min(1.0)
}

/// Counts of each U1 value under the null, for all `n1, n2 ≤ EXACT_MAX_N`.
fn null_counts() -> &'static Vec<Vec<Vec<u64>>> {
    static TABLE: OnceLock<Vec<Vec<Vec<u64>>>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let m = EXACT_MAX_N;
        let mut t = vec![vec![Vec::new(); m + 1]; m + 1];
        for n1 in 0..=m {
            for n2 in 0..=m {
                let mut counts = vec![0u64; n1 * n2 + 1];
                if n1 == 0 || n2 == 0 {
                    counts[0] = 1;
                } else {
                    // The largest observation is either in group 1, adding
                    // n2 to U1, or in group 2, adding nothing.
                    for (k, c) in t[n1 - 1][n2].iter().enumerate() {
                        counts[k + n2] += c;
                    }
                    for (k, c) in t[n1][n2 - 1].iter().enumerate() {
                        counts[k] += c;
                    }
                }
                t[n1][n2] = counts;
            }
        }
        t
    })
}

fn exact_p(n1: usize, n2: usize, u: f64) -> f64 {
    let counts = &null_counts()[n1][n2];
    let total: u64 = counts.iter().sum();
    let below: u64 = counts.iter().take(u.floor() as usize + 1).sum();
    (2.0 * below as f64 / total as f64).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherTrue,
    HigherFalse,
    None,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::HigherTrue => "higher_true",
            Direction::HigherFalse => "higher_false",
            Direction::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimTest {
    pub layer: usize,
    pub dim: usize,
    pub u: f64,
    pub p: f64,
    pub direction: Direction,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectivityMap {
    pub alpha: f64,
    pub points: usize,
    pub d: usize,
    /// In `(layer, dim)` order.
    pub tests: Vec<DimTest>,
}

impl SelectivityMap {
    pub fn get(&self, layer: usize, dim: usize) -> &DimTest {
        &self.tests[layer * self.d + dim]
    }

    pub fn significant(&self) -> impl Iterator<Item = &DimTest> + '_ {
        self.tests.iter().filter(|t| t.significant)
    }

    /// CSV with columns `layer,dim,U,p,direction,significant`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        w.write_record(["layer", "dim", "U", "p", "direction", "significant"])
            .map_err(|e| csv_error(path, e))?;
        for t in &self.tests {
            w.write_record([
                t.layer.to_string(),
                t.dim.to_string(),
                t.u.to_string(),
                t.p.to_string(),
                t.direction.as_str().to_string(),
                t.significant.to_string(),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Tests every `(layer, dim)` of `features` between the two trial types.
pub fn selectivity_map(features: &QuestionFeatureMatrix, alpha: f64) -> Result<SelectivityMap> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let is_true: Vec<bool> = features
        .trials
        .iter()
        .map(|t| t.belief_type == BeliefType::TrueBelief)
        .collect();
    let n_true = is_true.iter().filter(|&&x| x).count();
    let n_false = is_true.len() - n_true;
    if n_true < 2 || n_false < 2 {
        return Err(Error::Analysis(format!(
            "selectivity needs at least 2 trials per type, got {n_true} true and {n_false} false"
        )));
    }
    let (points, d) = (features.points, features.d);
    let tests = (0..points * d)
        .into_par_iter()
        .map(|k| {
            let (layer, dim) = (k / d, k % d);
            let mut g_true = Vec::with_capacity(n_true);
            let mut g_false = Vec::with_capacity(n_false);
            for (t, &tb) in is_true.iter().enumerate() {
                let v = features.value(t, layer, dim);
                if tb {
                    g_true.push(v);
                } else {
                    g_false.push(v);
                }
            }
            let mw = mann_whitney_u(&g_true, &g_false)?;
            let significant = mw.p < alpha;
            let direction = if !significant || mw.mean_rank_1 == mw.mean_rank_2 {
                Direction::None
            } else if mw.mean_rank_1 > mw.mean_rank_2 {
                Direction::HigherTrue
            } else {
                Direction::HigherFalse
            };
            Ok(DimTest {
                layer,
                dim,
                u: mw.u,
                p: mw.p,
                direction,
                significant: direction != Direction::None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SelectivityMap {
        alpha,
        points,
        d,
        tests,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPercentages {
    /// Percent of dims significant at each capture point.
    pub percent: Vec<f64>,
    pub significant: Vec<usize>,
    /// Maximum of `percent`.
    pub model_summary: f64,
    /// First capture point attaining the maximum.
    pub peak_layer: usize,
}

pub fn layer_percentages(map: &SelectivityMap) -> LayerPercentages {
    let mut significant = vec![0usize; map.points];
    for t in map.significant() {
        significant[t.layer] += 1;
    }
    let percent: Vec<f64> = significant.iter().map(|&s| 100.0 * s as f64 / map.d as f64).collect();
    let mut peak_layer = 0;
    for (l, &p) in percent.iter().enumerate() {
        if p > percent[peak_layer] {
            peak_layer = l;
        }
    }
    LayerPercentages {
        model_summary: percent.get(peak_layer).copied().unwrap_or(0.0),
        percent,
        significant,
        peak_layer,
    }
}

/// `percentage = a · exp(b · performance)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpFit {
    pub a: f64,
    pub b: f64,
    /// Euclidean norm of the residuals on the original scale.
    pub residual: f64,
    /// False when refinement failed and the log-linear seed is returned.
    pub converged: bool,
    pub iterations: usize,
}

impl ExpFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.a * (self.b * x).exp()
    }
}

const FIT_MAX_ITER: usize = 200;

fn sse(points: &[(f64, f64)], a: f64, b: f64) -> f64 {
    points.iter().map(|&(x, y)| (y - a * (b * x).exp()).powi(2)).sum()
}

/// Least-squares fit of `y = a·exp(b·x)`: log-linear regression for the
/// starting point, then Gauss-Newton with step halving on the raw residuals.
pub fn fit_exponential(points: &[(f64, f64)]) -> Result<ExpFit> {
    if points.len() < 3 {
        return Err(Error::Analysis(format!(
            "exponential fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|&(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::NonFinite("fit points".into()));
    }
    if points.iter().any(|&(_, y)| y <= 0.0) {
        return Err(Error::Analysis("exponential fit needs positive percentages".into()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if points.iter().all(|p| p.0 == points[0].0) {
        return Err(Error::Analysis(
            "exponential fit needs at least two distinct performances".into(),
        ));
    }
    let sxy: f64 = points.iter().zip(&ly).map(|(p, l)| (p.0 - mx) * (l - my)).sum();
    let b0 = sxy / sxx;
    let a0 = (my - b0 * mx).exp();

    let (mut a, mut b) = (a0, b0);
    let mut cost = sse(points, a, b);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < FIT_MAX_ITER {
        iterations += 1;
        // Normal equations of the linearised model.
        let (mut jaa, mut jab, mut jbb, mut ga, mut gb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(x, y) in points {
            let e = (b * x).exp();
            let r = y - a * e;
            let (da, db) = (e, a * x * e);
            jaa += da * da;
            jab += da * db;
            jbb += db * db;
            ga += da * r;
            gb += db * r;
        }
        let det = jaa * jbb - jab * jab;
        if !(det.is_finite() && det > 0.0) {
            break;
        }
        let step_a = (jbb * ga - jab * gb) / det;
        let step_b = (jaa * gb - jab * ga) / det;
        if step_a.abs() <= 1e-14 * (1.0 + a.abs()) && step_b.abs() <= 1e-14 * (1.0 + b.abs()) {
            converged = true;
            break;
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let (na, nb) = (a + t * step_a, b + t * step_b);
            let c = sse(points, na, nb);
            if c.is_finite() && c <= cost {
                let small = cost - c <= 1e-15 * cost.max(f64::MIN_POSITIVE);
                a = na;
                b = nb;
                cost = c;
                accepted = true;
                if small {
                    converged = true;
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // No representable decrease along the Gauss-Newton direction.
            converged = true;
        }
        if converged {
            break;
        }
    }
    if !converged || a.is_nan() || a <= 0.0 {
        return Ok(ExpFit {
            a: a0,
            b: b0,
            residual: sse(points, a0, b0).sqrt(),
            converged: false,
            iterations,
        });
    }
    Ok(ExpFit {
        a,
        b,
        residual: cost.sqrt(),
        converged,
        iterations,
    })
}

/// Mean oriented z-scored true−false difference over significant dims,
/// averaged separately over correctly and incorrectly decoded pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    /// `None` when no pair falls in the group.
    pub mean_z_correct: Option<f64>,
    pub mean_z_incorrect: Option<f64>,
    pub n_correct_pairs: usize,
    pub n_incorrect_pairs: usize,
    pub n_dims: usize,
}

/// A pair counts as correctly decoded when both its trials are; pairs with a
/// trial missing from `trial_correct` are skipped. Each significant dim is
/// z-scored over all trials (population std) and the per-pair difference
/// `z(true) − z(false)` is negated for dims that respond more to false-belief
/// trials, so positive values always mean separation in the selective
/// direction.
pub fn zscored_separation(
    features: &QuestionFeatureMatrix,
    map: &SelectivityMap,
    trial_correct: &BTreeMap<String, bool>,
) -> Result<Separation> {
    if map.points != features.points || map.d != features.d {
        return Err(Error::InvalidInput(
            "selectivity map does not match the feature matrix".into(),
        ));
    }
    let dims: Vec<&DimTest> = map.significant().collect();
    if dims.is_empty() {
        return Err(Error::Analysis("no significant dimensions".into()));
    }
    let pairs = features.pairs()?;
    let n = features.n_trials() as f64;
    let mut pair_scores = vec![0.0; pairs.len()];
    for dim in &dims {
        let col: Vec<f64> = (0..features.n_trials())
            .map(|t| features.value(t, dim.layer, dim.dim))
            .collect();
        let mean = col.iter().sum::<f64>() / n;
        let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        if std == 0.0 {
            return Err(Error::Analysis(format!(
                "significant dim ({}, {}) has zero variance",
                dim.layer, dim.dim
            )));
        }
        let sign = if dim.direction == Direction::HigherFalse {
            -1.0
        } else {
            1.0
        };
        for (score, (_, t, f)) in pair_scores.iter_mut().zip(&pairs) {
            *score += sign * (col[*t] - col[*f]) / std;
        }
    }
    let (mut sum_c, mut n_c, mut sum_i, mut n_i) = (0.0, 0usize, 0.0, 0usize);
    for (score, (_, t, f)) in pair_scores.iter().zip(&pairs) {
        let outcome = |i: usize| trial_correct.get(&features.trials[i].trial_id).copied();
        let (Some(ct), Some(cf)) = (outcome(*t), outcome(*f)) else {
            continue;
        };
        let s = score / dims.len() as f64;
        if ct && cf {
            sum_c += s;
            n_c += 1;
        } else {
            sum_i += s;
            n_i += 1;
        }
    }
    let mean = |s: f64, k: usize| (k > 0).then(|| s / k as f64);
    Ok(Separation {
        mean_z_correct: mean(sum_c, n_c),
        mean_z_incorrect: mean(sum_i, n_i),
        n_correct_pairs: n_c,
        n_incorrect_pairs: n_i,
        n_dims: dims.len(),
    })
}
