//! Forced-choice scoring of answers from final-position logits.
//!
//! A question is answered correctly when the logit of the correct
//! candidate's first token (with a leading space) is strictly greater than
//! that of the incorrect candidate. Ties count as incorrect.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{BeliefType, Condition, Corpus, QuestionSpec, TomTrial};
use crate::error::{Error, Result};
use crate::runtime::{CaptureSet, TrialRunner};
use crate::tokenizer::Tokenizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionKind {
    Fact,
    Belief,
}

impl QuestionKind {
    pub const ALL: [QuestionKind; 2] = [QuestionKind::Fact, QuestionKind::Belief];

    pub fn of(self, trial: &TomTrial) -> &QuestionSpec {
        match self {
            QuestionKind::Fact => &trial.fact_question,
            QuestionKind::Belief => &trial.belief_question,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            QuestionKind::Fact => "fact",
            QuestionKind::Belief => "belief",
        }
    }
}

impl fmt::Display for QuestionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceOutcome {
    pub trial_id: String,
    pub belief_type: BeliefType,
    pub question_kind: QuestionKind,
    pub logit_correct: f32,
    pub logit_incorrect: f32,
    pub is_correct: bool,
}

/// Accuracy cell: fact questions of all trials, or belief questions split by
/// trial type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cell {
    Fact,
    TrueBelief,
    FalseBelief,
}

impl Cell {
    pub const ALL: [Cell; 3] = [Cell::Fact, Cell::TrueBelief, Cell::FalseBelief];

    pub fn of(outcome: &ChoiceOutcome) -> Cell {
        match (outcome.question_kind, outcome.belief_type) {
            (QuestionKind::Fact, _) => Cell::Fact,
            (QuestionKind::Belief, BeliefType::TrueBelief) => Cell::TrueBelief,
            (QuestionKind::Belief, BeliefType::FalseBelief) => Cell::FalseBelief,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Cell::Fact => "fact",
            Cell::TrueBelief => "true_belief",
            Cell::FalseBelief => "false_belief",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CellCount {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

impl CellCount {
    fn from_counts(correct: usize, total: usize) -> Self {
        let accuracy = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
        CellCount {
            correct,
            total,
            accuracy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub condition: Condition,
    pub corpus_fingerprint: String,
    pub fact: CellCount,
    pub true_belief: CellCount,
    pub false_belief: CellCount,
}

impl AccuracyTable {
    /// Aggregates outcomes; their order does not matter.
    pub fn from_outcomes(condition: Condition, corpus_fingerprint: String, outcomes: &[ChoiceOutcome]) -> Self {
        let mut counts = [(0usize, 0usize); 3];
        for o in outcomes {
            let slot = &mut counts[Cell::of(o) as usize];
            slot.0 += usize::from(o.is_correct);
            slot.1 += 1;
        }
        let [f, t, b] = counts.map(|(c, n)| CellCount::from_counts(c, n));
        AccuracyTable {
            condition,
            corpus_fingerprint,
            fact: f,
            true_belief: t,
            false_belief: b,
        }
    }

    pub fn cell(&self, cell: Cell) -> &CellCount {
        match cell {
            Cell::Fact => &self.fact,
            Cell::TrueBelief => &self.true_belief,
            Cell::FalseBelief => &self.false_belief,
        }
    }

    /// CSV with columns `condition,cell,correct,total,accuracy`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        w.write_record(["condition", "cell", "correct", "total", "accuracy"])
            .map_err(|e| csv_error(path, e))?;
        for cell in Cell::ALL {
            let c = self.cell(cell);
            w.write_record([
                self.condition.to_string(),
                cell.as_str().to_string(),
                c.correct.to_string(),
                c.total.to_string(),
                c.accuracy.to_string(),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// First token of `" " + candidate`.
pub fn answer_token(tokenizer: &Tokenizer, candidate: &str) -> u32 {
    tokenizer.encode(&format!(" {candidate}")).ids[0]
}

/// Rejects questions whose two candidates begin with the same token.
pub fn validate_candidates(corpus: &Corpus, tokenizer: &Tokenizer) -> Result<()> {
    for trial in corpus.trials() {
        for kind in QuestionKind::ALL {
            candidate_tokens(trial, kind.of(trial), tokenizer)?;
        }
    }
    Ok(())
}

/// `(correct, incorrect)` answer tokens.
fn candidate_tokens(trial: &TomTrial, q: &QuestionSpec, tokenizer: &Tokenizer) -> Result<(u32, u32)> {
    let a = answer_token(tokenizer, &q.candidate_a);
    let b = answer_token(tokenizer, &q.candidate_b);
    if a == b {
        return Err(Error::CandidateCollision {
            trial_id: trial.trial_id.clone(),
            a: q.candidate_a.clone(),
            b: q.candidate_b.clone(),
            token: a,
        });
    }
    Ok((
        answer_token(tokenizer, q.correct_candidate()),
        answer_token(tokenizer, q.incorrect_candidate()),
    ))
}

pub fn score_question(
    capture: &CaptureSet,
    trial: &TomTrial,
    kind: QuestionKind,
    tokenizer: &Tokenizer,
) -> Result<ChoiceOutcome> {
    if capture.trial_id != trial.trial_id {
        return Err(Error::InvalidInput(format!(
            "capture of `{}` scored against trial `{}`",
            capture.trial_id, trial.trial_id
        )));
    }
    let (correct, incorrect) = candidate_tokens(trial, kind.of(trial), tokenizer)?;
    let logit = |id: u32| {
        capture
            .final_logits
            .get(id as usize)
            .copied()
            .ok_or(Error::TokenOutOfRange {
                id,
                vocab_size: capture.vocab_size(),
            })
    };
    let logit_correct = logit(correct)?;
    let logit_incorrect = logit(incorrect)?;
    Ok(ChoiceOutcome {
        trial_id: trial.trial_id.clone(),
        belief_type: trial.belief_type,
        question_kind: kind,
        logit_correct,
        logit_incorrect,
        is_correct: logit_correct > logit_incorrect,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub table: AccuracyTable,
    /// Sorted by `(trial_id, question_kind)`.
    pub outcomes: Vec<ChoiceOutcome>,
}

/// Runs every (trial, question) through `runner` and aggregates.
pub fn evaluate(corpus: &Corpus, runner: &dyn TrialRunner, tokenizer: &Tokenizer) -> Result<Evaluation> {
    validate_candidates(corpus, tokenizer)?;
    let jobs: Vec<(&TomTrial, QuestionKind)> = corpus
        .trials()
        .flat_map(|t| QuestionKind::ALL.map(|k| (t, k)))
        .collect();
    let mut outcomes = jobs
        .par_iter()
        .map(|&(trial, kind)| {
            let capture = runner.run(trial, kind.of(trial), false)?;
            score_question(&capture, trial, kind, tokenizer)
        })
        .collect::<Result<Vec<_>>>()?;
    outcomes.sort_by(|a, b| (&a.trial_id, a.question_kind).cmp(&(&b.trial_id, b.question_kind)));
    let table = AccuracyTable::from_outcomes(corpus.condition, corpus.fingerprint(), &outcomes);
    Ok(Evaluation { table, outcomes })
}

/// CSV of individual outcomes.
pub fn write_outcomes_csv(outcomes: &[ChoiceOutcome], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "trial_id",
        "belief_type",
        "question",
        "logit_correct",
        "logit_incorrect",
        "is_correct",
    ])
    .map_err(|e| csv_error(path, e))?;
    for o in outcomes {
        w.write_record([
            o.trial_id.clone(),
            o.belief_type.to_string(),
            o.question_kind.to_string(),
            o.logit_correct.to_string(),
            o.logit_incorrect.to_string(),
            o.is_correct.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-cell `intact − control` accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionDelta {
    pub intact: Condition,
    pub control: Condition,
    pub fact: f64,
    pub true_belief: f64,
    pub false_belief: f64,
}

impl ConditionDelta {
    pub fn cell(&self, cell: Cell) -> f64 {
        match cell {
            Cell::Fact => self.fact,
            Cell::TrueBelief => self.true_belief,
            Cell::FalseBelief => self.false_belief,
        }
    }
}

pub fn condition_delta(intact: &AccuracyTable, control: &AccuracyTable) -> Result<ConditionDelta> {
    if intact.corpus_fingerprint != control.corpus_fingerprint {
        return Err(Error::InvalidInput(format!(
            "accuracy tables come from different corpora ({} vs {})",
            intact.corpus_fingerprint, control.corpus_fingerprint
        )));
    }
    let d = |cell| intact.cell(cell).accuracy - control.cell(cell).accuracy;
    Ok(ConditionDelta {
        intact: intact.condition,
        control: control.condition,
        fact: d(Cell::Fact),
        true_belief: d(Cell::TrueBelief),
        false_belief: d(Cell::FalseBelief),
    })
}

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidInput(format!("{}: {other:?}", path.display())),
    }
}
