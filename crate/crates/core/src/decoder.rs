//! Population decoding of trial type from whole-layer features.
//!
//! For each repeat the trial pairs are split 75/25 (a pair never straddles
//! the split), an L2-regularised logistic regression is trained on the
//! training trials and accuracy is measured on the held-out trials. Label 1
//! is the false-belief trial type.

use std::collections::BTreeMap;
use std::collections::VecDeque;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::behavior::{csv_error, csv_writer};
use crate::corpus::BeliefType;
use crate::error::{Error, Result};
use crate::selectivity::QuestionFeatureMatrix;

pub const DEFAULT_C: f64 = 1.0;
pub const DEFAULT_REPEATS: usize = 100;
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.75;

/// Gradient-norm tolerance of the optimiser.
pub const GRAD_TOL: f64 = 1e-6;
pub const MAX_ITER: usize = 1000;
const HISTORY: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub train_pair_ids: Vec<String>,
    pub test_pair_ids: Vec<String>,
}

/// Picks `round(fraction · pairs)` training pairs uniformly without
/// replacement. Both sides keep the input order.
pub fn pair_split(pair_ids: &[String], fraction: f64, seed: u64) -> Result<SplitPlan> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "train fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let n = pair_ids.len();
    let n_train = (fraction * n as f64).round() as usize;
    if n < 2 || n_train == 0 || n_train >= n {
        return Err(Error::Analysis(format!(
            "{n} pairs cannot be split {fraction} / {} with both sides nonempty",
            1.0 - fraction
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_train = vec![false; n];
    for &i in &idx[..n_train] {
        is_train[i] = true;
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (id, t) in pair_ids.iter().zip(is_train) {
        if t {
            train.push(id.clone());
        } else {
            test.push(id.clone());
        }
    }
    Ok(SplitPlan {
        seed,
        train_pair_ids: train,
        test_pair_ids: test,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub model: LinearModel,
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after initialisation and after every accepted step.
    pub history: Vec<f64>,
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Logistic function, saturating cleanly at both ends.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `C · Σ CE(yᵢ, σ(w·xᵢ + b)) + ½‖w‖²`; the bias is not penalised.
pub fn objective(x: &[f64], d: usize, y: &[bool], c: f64, weights: &[f64], bias: f64) -> f64 {
    let ce: f64 = x
        .chunks_exact(d)
        .zip(y)
        .map(|(row, &yi)| {
            let z = dot(row, weights) + bias;
            softplus(z) - if yi { z } else { 0.0 }
        })
        .sum();
    c * ce + 0.5 * dot(weights, weights)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Objective and gradient at `theta = [w.., b]`.
fn value_grad(x: &[f64], d: usize, y: &[bool], c: f64, theta: &[f64], grad: &mut [f64]) -> f64 {
    let (w, b) = (&theta[..d], theta[d]);
    grad[..d].copy_from_slice(w);
    grad[d] = 0.0;
    let mut ce = 0.0;
    for (row, &yi) in x.chunks_exact(d).zip(y) {
        let z = dot(row, w) + b;
        ce += softplus(z) - if yi { z } else { 0.0 };
        let r = c * (sigmoid(z) - f64::from(u8::from(yi)));
        for (g, xv) in grad[..d].iter_mut().zip(row) {
            *g += r * xv;
        }
        grad[d] += r;
    }
    c * ce + 0.5 * dot(w, w)
}

fn check_training_input(x: &[f64], d: usize, y: &[bool], c: f64) -> Result<()> {
    if d == 0 || x.len() != y.len() * d {
        return Err(Error::InvalidInput(format!(
            "{} features do not form {} rows",
            x.len(),
            y.len()
        )));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidInput(format!("C must be positive, got {c}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("decoder features".into()));
    }
    let ones = y.iter().filter(|&&v| v).count();
    if ones == 0 || ones == y.len() {
        return Err(Error::Analysis("decoder training data contains a single class".into()));
    }
    Ok(())
}

pub fn train_logreg(x: &[f64], d: usize, y: &[bool], c: f64) -> Result<LinearModel> {
    train_logreg_report(x, d, y, c).map(|r| r.model)
}

/// Minimises the objective with L-BFGS and a backtracking Armijo line
/// search, from zero, until the gradient norm is at most [`GRAD_TOL`] or
/// [`MAX_ITER`] iterations have run.
pub fn train_logreg_report(x: &[f64], d: usize, y: &[bool], c: f64) -> Result<TrainReport> {
    check_training_input(x, d, y, c)?;
    let n = d + 1;
    let mut theta = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut f = value_grad(x, d, y, c, &theta, &mut grad);
    let mut history = vec![f];
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(HISTORY);
    let mut trial = vec![0.0; n];
    let mut trial_grad = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < MAX_ITER {
        let gnorm = dot(&grad, &grad).sqrt();
        if gnorm <= GRAD_TOL {
            converged = true;
            break;
        }
        iterations += 1;
        let mut dir = two_loop(&grad, &memory);
        if dot(&dir, &grad) >= 0.0 {
            memory.clear();
            dir = grad.iter().map(|g| -g).collect();
        }
        let slope = dot(&dir, &grad);
        let mut step = if memory.is_empty() { (1.0 / gnorm).min(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..60 {
            for i in 0..n {
                trial[i] = theta[i] + step * dir[i];
            }
            let ft = value_grad(x, d, y, c, &trial, &mut trial_grad);
            if ft.is_finite() && ft <= f + 1e-4 * step * slope {
                accepted = Some(ft);
                break;
            }
            step *= 0.5;
        }
        let Some(ft) = accepted else {
            if memory.is_empty() {
                // Steepest descent cannot make progress in floating point.
                break;
            }
            memory.clear();
            continue;
        };
        let s: Vec<f64> = trial.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = trial_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 * dot(&yv, &yv).max(f64::MIN_POSITIVE).sqrt() * dot(&s, &s).sqrt() {
            if memory.len() == HISTORY {
                memory.pop_front();
            }
            memory.push_back((s, yv, 1.0 / sy));
        }
        std::mem::swap(&mut theta, &mut trial);
        std::mem::swap(&mut grad, &mut trial_grad);
        f = ft;
        history.push(f);
    }
    let grad_norm = dot(&grad, &grad).sqrt();
    converged |= grad_norm <= GRAD_TOL;
    let bias = theta[d];
    theta.truncate(d);
    Ok(TrainReport {
        model: LinearModel {
            weights: theta,
            bias,
            c,
        },
        objective: f,
        grad_norm,
        iterations,
        converged,
        history,
    })
}

/// L-BFGS two-loop recursion: returns `−H·grad`.
fn two_loop(grad: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = grad.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in &mut q {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    for qi in &mut q {
        *qi = -*qi;
    }
    q
}

/// Probability of class 1 for each row of `x`.
pub fn predict(model: &LinearModel, x: &[f64]) -> Result<Vec<f64>> {
    let d = model.weights.len();
    if d == 0 || !x.len().is_multiple_of(d) {
        return Err(Error::InvalidInput(format!(
            "{} features do not form rows of width {d}",
            x.len()
        )));
    }
    Ok(x.chunks_exact(d)
        .map(|row| sigmoid(dot(row, &model.weights) + model.bias))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeOptions {
    pub repeats: usize,
    pub seed: u64,
    pub c: f64,
    pub train_fraction: f64,
    /// Z-score features with training-set statistics before fitting.
    pub standardize: bool,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            repeats: DEFAULT_REPEATS,
            seed: 0,
            c: DEFAULT_C,
            train_fraction: DEFAULT_TRAIN_FRACTION,
            standardize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDecode {
    pub layer: usize,
    pub mean: f64,
    /// Population standard deviation over repeats.
    pub std: f64,
    pub accuracies: Vec<f64>,
    /// Per trial (feature-matrix order): `(times tested, times correct)`.
    #[serde(skip)]
    pub tallies: Vec<(usize, usize)>,
}

/// How often a trial was decoded correctly when held out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial_id: String,
    pub tested: usize,
    pub correct: usize,
}

impl TrialOutcome {
    /// Correct in a strict majority of its held-out appearances.
    pub fn is_correct(&self) -> bool {
        2 * self.correct > self.tested
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    pub options: DecodeOptions,
    pub layers: Vec<LayerDecode>,
    /// Mean of the per-layer means.
    pub model_average: f64,
    /// First layer with the highest mean accuracy.
    pub best_layer: usize,
    /// Held-out outcomes at `best_layer`.
    pub trial_outcomes: Vec<TrialOutcome>,
}

impl DecodeResult {
    /// Trial id → majority-correct flag at the best layer, for trials that
    /// were held out at least once.
    pub fn trial_correct(&self) -> BTreeMap<String, bool> {
        self.trial_outcomes
            .iter()
            .filter(|o| o.tested > 0)
            .map(|o| (o.trial_id.clone(), o.is_correct()))
            .collect()
    }

    /// CSV with columns `layer,mean,std,repeats`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        w.write_record(["layer", "mean", "std", "repeats"])
            .map_err(|e| csv_error(path, e))?;
        for l in &self.layers {
            w.write_record([
                l.layer.to_string(),
                l.mean.to_string(),
                l.std.to_string(),
                self.options.repeats.to_string(),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Accuracy and per-trial correctness for one split.
fn run_split(
    features: &QuestionFeatureMatrix,
    layer: usize,
    pairs: &[(String, usize, usize)],
    plan: &SplitPlan,
    opts: &DecodeOptions,
) -> Result<(f64, Vec<(usize, bool)>)> {
    let d = features.d;
    let rows = |ids: &[String]| -> Vec<usize> {
        pairs
            .iter()
            .filter(|(p, _, _)| ids.contains(p))
            .flat_map(|&(_, t, f)| [t, f])
            .collect()
    };
    let train = rows(&plan.train_pair_ids);
    let test = rows(&plan.test_pair_ids);
    let label = |t: usize| features.trials[t].belief_type == BeliefType::FalseBelief;

    let (mut shift, mut scale) = (vec![0.0; d], vec![1.0; d]);
    if opts.standardize {
        let n = train.len() as f64;
        for j in 0..d {
            let mean = train.iter().map(|&t| features.value(t, layer, j)).sum::<f64>() / n;
            let var = train
                .iter()
                .map(|&t| (features.value(t, layer, j) - mean).powi(2))
                .sum::<f64>()
                / n;
            shift[j] = mean;
            scale[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
    }
    let gather = |idx: &[usize]| -> Vec<f64> {
        idx.iter()
            .flat_map(|&t| {
                features
                    .row(t, layer)
                    .iter()
                    .zip(shift.iter().zip(&scale))
                    .map(|(v, (m, s))| (v - m) / s)
            })
            .collect()
    };
    let y: Vec<bool> = train.iter().map(|&t| label(t)).collect();
    let model = train_logreg(&gather(&train), d, &y, opts.c)?;
    let probs = predict(&model, &gather(&test))?;
    let outcomes: Vec<(usize, bool)> = test
        .iter()
        .zip(&probs)
        .map(|(&t, &p)| (t, (p > 0.5) == label(t)))
        .collect();
    let correct = outcomes.iter().filter(|o| o.1).count();
    Ok((correct as f64 / test.len() as f64, outcomes))
}

/// Repeated pair-split decoding of one capture point; repeat `r` uses
/// split seed `seed + r`.
pub fn decode_layer(features: &QuestionFeatureMatrix, layer: usize, opts: &DecodeOptions) -> Result<LayerDecode> {
    if opts.repeats == 0 {
        return Err(Error::InvalidInput("decoding needs at least one repeat".into()));
    }
    if layer >= features.points {
        return Err(Error::InvalidInput(format!(
            "layer {layer} out of range 0..{}",
            features.points
        )));
    }
    let pairs = features.pairs()?;
    let pair_ids: Vec<String> = pairs.iter().map(|p| p.0.clone()).collect();
    let runs = (0..opts.repeats)
        .into_par_iter()
        .map(|r| {
            let plan = pair_split(&pair_ids, opts.train_fraction, opts.seed.wrapping_add(r as u64))?;
            run_split(features, layer, &pairs, &plan, opts)
        })
        .collect::<Result<Vec<_>>>()?;
    let accuracies: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let n = accuracies.len() as f64;
    let mean = accuracies.iter().sum::<f64>() / n;
    let std = (accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut tallies = vec![(0usize, 0usize); features.n_trials()];
    for (_, outcomes) in &runs {
        for &(t, ok) in outcomes {
            tallies[t].0 += 1;
            tallies[t].1 += usize::from(ok);
        }
    }
    Ok(LayerDecode {
        layer,
        mean,
        std,
        accuracies,
        tallies,
    })
}

/// Decodes every capture point and averages over layers.
pub fn decode_model(features: &QuestionFeatureMatrix, opts: &DecodeOptions) -> Result<DecodeResult> {
    let layers = (0..features.points)
        .map(|l| decode_layer(features, l, opts))
        .collect::<Result<Vec<_>>>()?;
    let model_average = layers.iter().map(|l| l.mean).sum::<f64>() / layers.len() as f64;
    let mut best_layer = 0;
    for l in &layers {
        if l.mean > layers[best_layer].mean {
            best_layer = l.layer;
        }
    }
    let trial_outcomes = features
        .trials
        .iter()
        .zip(&layers[best_layer].tallies)
        .map(|(t, &(tested, correct))| TrialOutcome {
            trial_id: t.trial_id.clone(),
            tested,
            correct,
        })
        .collect();
    Ok(DecodeResult {
        options: *opts,
        layers,
        model_average,
        best_layer,
        trial_outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selectivity::TrialLabel;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    fn features(pairs: usize, d: usize, n_signal: usize, shift: f64, seed: u64) -> QuestionFeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trials = Vec::new();
        let mut values = Vec::new();
        for p in 0..pairs {
            for bt in [BeliefType::TrueBelief, BeliefType::FalseBelief] {
                trials.push(TrialLabel {
                    trial_id: format!("p{p}_{bt}"),
                    pair_id: format!("p{p}"),
                    belief_type: bt,
                });
                for j in 0..d {
                    let s = if bt == BeliefType::FalseBelief && j < n_signal {
                        shift
                    } else {
                        0.0
                    };
                    values.push(rng.sample::<f64, _>(StandardNormal) + s);
                }
            }
        }
        QuestionFeatureMatrix::new(1, d, trials, values).unwrap()
    }

    #[test]
    fn split_counts() {
        let plan = pair_split(&ids(4), 0.75, 1).unwrap();
        assert_eq!((plan.train_pair_ids.len(), plan.test_pair_ids.len()), (3, 1));
        assert_eq!(plan, pair_split(&ids(4), 0.75, 1).unwrap());
        let plan = pair_split(&ids(3), 0.75, 9).unwrap();
        assert_eq!((plan.train_pair_ids.len(), plan.test_pair_ids.len()), (2, 1));
        assert!(pair_split(&ids(1), 0.75, 0).is_err());
        assert!(pair_split(&ids(2), 0.9, 0).is_err());
        assert!(pair_split(&ids(4), 1.0, 0).is_err());
    }

    proptest! {
        #[test]
        fn splits_partition_pairs(n in 2usize..40, seed in any::<u64>()) {
            let all = ids(n);
            if let Ok(plan) = pair_split(&all, 0.75, seed) {
                let mut joined: Vec<String> = plan.train_pair_ids.iter().chain(&plan.test_pair_ids).cloned().collect();
                joined.sort();
                let mut expect = all.clone();
                expect.sort();
                prop_assert_eq!(joined, expect);
                prop_assert_eq!(plan.train_pair_ids.len(), (0.75 * n as f64).round() as usize);
                prop_assert!(plan.train_pair_ids.iter().all(|p| !plan.test_pair_ids.contains(p)));
            }
        }
    }

    #[test]
    fn sigmoid_saturates() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(sigmoid(1e6), 1.0);
        assert_eq!(sigmoid(-1e6), 0.0);
        assert!(sigmoid(800.0).is_finite() && sigmoid(-800.0).is_finite());
        assert!((softplus(-800.0)).abs() < 1e-300);
        assert_eq!(softplus(800.0), 800.0);
    }

    #[test]
    fn zero_model_predicts_half() {
        let m = LinearModel {
            weights: vec![0.0; 3],
            bias: 0.0,
            c: 1.0,
        };
        assert_eq!(predict(&m, &[1.0, 2.0, 3.0, -4.0, 5.0, 6.0]).unwrap(), vec![0.5, 0.5]);
        assert!(predict(&m, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn zero_features_give_prior() {
        let y = [true, false, true, false, true, false];
        let m = train_logreg(&[0.0; 12], 2, &y, 1.0).unwrap();
        assert!(m.weights.iter().all(|w| w.abs() < 1e-9));
        assert!(m.bias.abs() < 1e-6);
        let y = [true, true, true, false];
        let r = train_logreg_report(&[0.0; 8], 2, &y, 1.0).unwrap();
        assert!((r.model.bias - 3.0f64.ln()).abs() < 1e-6, "{}", r.model.bias);
        assert!(r.converged);
    }

    #[test]
    fn optimum_satisfies_stationarity() {
        let f = features(15, 6, 3, 1.0, 4);
        let y: Vec<bool> = f
            .trials
            .iter()
            .map(|t| t.belief_type == BeliefType::FalseBelief)
            .collect();
        let r = train_logreg_report(&f.values, 6, &y, 1.0).unwrap();
        assert!(r.converged && r.grad_norm <= GRAD_TOL);
        // Independent gradient: C Σ (p − y) x + w, and C Σ (p − y) for the bias.
        let p = predict(&r.model, &f.values).unwrap();
        let mut g = r.model.weights.clone();
        let mut gb = 0.0;
        for ((row, pi), &yi) in f.values.chunks(6).zip(&p).zip(&y) {
            let res = pi - if yi { 1.0 } else { 0.0 };
            for (gj, xj) in g.iter_mut().zip(row) {
                *gj += res * xj;
            }
            gb += res;
        }
        assert!(g.iter().chain([&gb]).all(|v| v.abs() < 1e-5), "{g:?} {gb}");
        for w in r.history.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert_eq!(
            r.objective,
            objective(&f.values, 6, &y, 1.0, &r.model.weights, r.model.bias)
        );
    }

    #[test]
    fn separable_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..40 {
            let cls = i % 2 == 0;
            let centre = if cls { 2.0 } else { -2.0 };
            x.push(centre + 0.5 * rng.sample::<f64, _>(StandardNormal));
            x.push(centre + 0.5 * rng.sample::<f64, _>(StandardNormal));
            y.push(cls);
        }
        let r = train_logreg_report(&x, 2, &y, 1.0).unwrap();
        assert!(r.converged);
        let p = predict(&r.model, &x).unwrap();
        assert!(p.iter().zip(&y).all(|(p, &yi)| (*p > 0.5) == yi));
    }

    #[test]
    fn bad_training_input() {
        assert!(matches!(
            train_logreg(&[1.0, 2.0], 1, &[true, true], 1.0),
            Err(Error::Analysis(_))
        ));
        assert!(train_logreg(&[1.0, f64::NAN], 1, &[true, false], 1.0).is_err());
        assert!(train_logreg(&[1.0, 2.0, 3.0], 2, &[true, false], 1.0).is_err());
    }

    #[test]
    fn signal_decodes() {
        let f = features(20, 16, 10, 2.0, 3);
        let r = decode_layer(
            &f,
            0,
            &DecodeOptions {
                repeats: 30,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(r.mean >= 0.95, "{}", r.mean);
    }

    #[test]
    fn shuffled_labels_near_chance() {
        let f = features(20, 16, 10, 2.0, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let flips: Vec<bool> = (0..20).map(|_| rng.gen()).collect();
        let null = f.with_flipped_pairs(|k| flips[k]).unwrap();
        let r = decode_layer(
            &null,
            0,
            &DecodeOptions {
                repeats: 100,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((0.40..=0.60).contains(&r.mean), "{}", r.mean);
    }

    #[test]
    fn single_repeat_and_determinism() {
        let f = features(6, 4, 2, 1.0, 5);
        let opts = DecodeOptions {
            repeats: 1,
            seed: 3,
            ..Default::default()
        };
        let r = decode_model(&f, &opts).unwrap();
        assert_eq!(r.layers[0].std, 0.0);
        assert_eq!(r.model_average, r.layers[0].mean);
        let opts = DecodeOptions {
            repeats: 20,
            seed: 3,
            standardize: true,
            ..Default::default()
        };
        assert_eq!(decode_model(&f, &opts).unwrap(), decode_model(&f, &opts).unwrap());
        let tested: usize = decode_model(&f, &opts)
            .unwrap()
            .trial_outcomes
            .iter()
            .map(|o| o.tested)
            .sum();
        // round(0.75 · 6) = 5 train pairs → 2 test trials per repeat.
        assert_eq!(tested, 20 * 2);
    }

    #[test]
    fn repeat_seeds_are_offsets() {
        let f = features(8, 3, 1, 1.0, 6);
        let whole = decode_layer(
            &f,
            0,
            &DecodeOptions {
                repeats: 5,
                seed: 10,
                ..Default::default()
            },
        )
        .unwrap();
        let third = decode_layer(
            &f,
            0,
            &DecodeOptions {
                repeats: 1,
                seed: 12,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(whole.accuracies[2], third.accuracies[0]);
    }
}
