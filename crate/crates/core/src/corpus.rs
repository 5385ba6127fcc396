//! Paired true/false-belief trial materials and their control variants.
//!
//! A corpus file is JSON of the form `{"pairs": [...]}`; each pair carries a
//! `true_trial` and a `false_trial`. The JSON schema lives in
//! `schemas/corpus.schema.json` at the repository root.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Upper bound on statement length, in whitespace-delimited words.
pub const MAX_STATEMENT_WORDS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeliefType {
    TrueBelief,
    FalseBelief,
}

impl fmt::Display for BeliefType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BeliefType::TrueBelief => "true_belief",
            BeliefType::FalseBelief => "false_belief",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Answer {
    A,
    B,
}

/// A partial sentence whose next word is the answer, with two candidates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionSpec {
    pub stem: String,
    pub candidate_a: String,
    pub candidate_b: String,
    pub correct: Answer,
}

impl QuestionSpec {
    pub fn correct_candidate(&self) -> &str {
        match self.correct {
            Answer::A => &self.candidate_a,
            Answer::B => &self.candidate_b,
        }
    }

    pub fn incorrect_candidate(&self) -> &str {
        match self.correct {
            Answer::A => &self.candidate_b,
            Answer::B => &self.candidate_a,
        }
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.stem.trim().is_empty() {
            return Err("question stem is empty".into());
        }
        for cand in [&self.candidate_a, &self.candidate_b] {
            if cand.is_empty() || cand.chars().any(char::is_whitespace) {
                return Err(format!("candidate `{cand}` is not a single word"));
            }
        }
        if self.candidate_a == self.candidate_b {
            return Err(format!("candidates must differ (both `{}`)", self.candidate_a));
        }
        if self.stem.split_whitespace().last() == Some(self.correct_candidate()) {
            return Err(format!(
                "stem `{}` already ends with its answer `{}`",
                self.stem,
                self.correct_candidate()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TomTrial {
    pub trial_id: String,
    pub pair_id: String,
    pub belief_type: BeliefType,
    pub statement: String,
    pub fact_question: QuestionSpec,
    pub belief_question: QuestionSpec,
    /// Open-ended wording used with human participants; not fed to models.
    #[serde(default)]
    pub human_belief_question: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialPair {
    pub pair_id: String,
    pub true_trial: TomTrial,
    pub false_trial: TomTrial,
}

impl TrialPair {
    pub fn trials(&self) -> [&TomTrial; 2] {
        [&self.true_trial, &self.false_trial]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    #[default]
    Intact,
    Shuffled,
    QuestionOnly,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Intact => "intact",
            Condition::Shuffled => "shuffled",
            Condition::QuestionOnly => "question_only",
        })
    }
}

impl std::str::FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intact" => Ok(Condition::Intact),
            "shuffled" => Ok(Condition::Shuffled),
            "question_only" | "question-only" => Ok(Condition::QuestionOnly),
            other => Err(Error::InvalidInput(format!(
                "unknown condition `{other}` (expected intact, shuffled or question_only)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub pairs: Vec<TrialPair>,
    #[serde(default)]
    pub condition: Condition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Number of maximal non-whitespace runs in `text`.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

impl Corpus {
    /// Builds an intact corpus and checks every invariant.
    pub fn new(pairs: Vec<TrialPair>) -> Result<Self> {
        let corpus = Corpus {
            pairs,
            condition: Condition::Intact,
            seed: None,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn trials(&self) -> impl Iterator<Item = &TomTrial> + '_ {
        self.pairs.iter().flat_map(|p| p.trials())
    }

    pub fn trial_count(&self) -> usize {
        2 * self.pairs.len()
    }

    pub fn trial(&self, trial_id: &str) -> Option<&TomTrial> {
        self.trials().find(|t| t.trial_id == trial_id)
    }

    /// Stable identity of the trial set, independent of condition.
    pub fn fingerprint(&self) -> String {
        let mut ids: Vec<(&str, &str)> = self
            .trials()
            .map(|t| (t.pair_id.as_str(), t.trial_id.as_str()))
            .collect();
        ids.sort_unstable();
        let mut hasher = Sha256::new();
        for (pair, trial) in ids {
            hasher.update(pair.as_bytes());
            hasher.update([0u8]);
            hasher.update(trial.as_bytes());
            hasher.update([0u8]);
        }
        hex(&hasher.finalize()[..16])
    }

    pub fn validate(&self) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        match (self.condition, self.seed) {
            (Condition::Shuffled, None) => {
                return Err(Error::InvalidInput("shuffled corpus must record its seed".into()))
            }
            (Condition::Intact | Condition::QuestionOnly, Some(_)) => {
                return Err(Error::InvalidInput("only shuffled corpora carry a seed".into()))
            }
            _ => {}
        }
        let mut pair_ids = HashSet::new();
        let mut trial_ids = HashSet::new();
        for pair in &self.pairs {
            let fail = |rule: String| Error::Corpus {
                pair_id: pair.pair_id.clone(),
                rule,
            };
            if !pair_ids.insert(pair.pair_id.as_str()) {
                return Err(fail("duplicate pair_id".into()));
            }
            if pair.true_trial.belief_type != BeliefType::TrueBelief {
                return Err(fail("true_trial must have belief_type true_belief".into()));
            }
            if pair.false_trial.belief_type != BeliefType::FalseBelief {
                return Err(fail("false_trial must have belief_type false_belief".into()));
            }
            for trial in pair.trials() {
                if trial.pair_id != pair.pair_id {
                    return Err(fail(format!(
                        "trial `{}` names pair `{}`",
                        trial.trial_id, trial.pair_id
                    )));
                }
                if !trial_ids.insert(trial.trial_id.as_str()) {
                    return Err(fail(format!("duplicate trial_id `{}`", trial.trial_id)));
                }
                let words = word_count(&trial.statement);
                let lo = if self.condition == Condition::QuestionOnly {
                    0
                } else {
                    1
                };
                if words < lo || words > MAX_STATEMENT_WORDS {
                    return Err(fail(format!(
                        "trial `{}`: statement has {words} words, allowed range is [{lo}, {MAX_STATEMENT_WORDS}]",
                        trial.trial_id
                    )));
                }
                for q in [&trial.fact_question, &trial.belief_question] {
                    q.check()
                        .map_err(|e| fail(format!("trial `{}`: {e}", trial.trial_id)))?;
                }
            }
            let (t, f) = (&pair.true_trial, &pair.false_trial);
            let (wt, wf) = (word_count(&t.statement), word_count(&f.statement));
            if wt != wf {
                return Err(fail(format!(
                    "statements must contain the same number of words ({wt} vs {wf})"
                )));
            }
            let (bt, bf) = (&t.belief_question, &f.belief_question);
            if bt.stem != bf.stem || bt.candidate_a != bf.candidate_a || bt.candidate_b != bf.candidate_b {
                return Err(fail("belief questions must share stem and candidates".into()));
            }
        }
        Ok(())
    }

    /// Writes the corpus as pretty JSON.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Reads and validates a corpus file.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let corpus: Corpus = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    corpus.validate()?;
    Ok(corpus)
}

/// Shuffles the words of every statement, leaving questions untouched.
///
/// Each statement gets its own sub-seed `seed ^ hash(trial_id)`, so the
/// shuffle of one trial does not depend on which other trials exist.
pub fn make_shuffled_control(corpus: &Corpus, seed: u64) -> Result<Corpus> {
    require_intact(corpus)?;
    let mut out = corpus.clone();
    for trial in out
        .pairs
        .iter_mut()
        .flat_map(|p| [&mut p.true_trial, &mut p.false_trial])
    {
        trial.statement = shuffle_words(&trial.statement, seed ^ trial_hash(&trial.trial_id));
    }
    out.condition = Condition::Shuffled;
    out.seed = Some(seed);
    Ok(out)
}

/// Drops every statement so that models only see the question stems.
pub fn make_question_only(corpus: &Corpus) -> Result<Corpus> {
    require_intact(corpus)?;
    let mut out = corpus.clone();
    for trial in out
        .pairs
        .iter_mut()
        .flat_map(|p| [&mut p.true_trial, &mut p.false_trial])
    {
        trial.statement.clear();
    }
    out.condition = Condition::QuestionOnly;
    out.seed = None;
    Ok(out)
}

/// Returns the corpus for `condition`; `seed` is used only for shuffling.
pub fn derive_condition(corpus: &Corpus, condition: Condition, seed: u64) -> Result<Corpus> {
    match condition {
        Condition::Intact => {
            require_intact(corpus)?;
            Ok(corpus.clone())
        }
        Condition::Shuffled => make_shuffled_control(corpus, seed),
        Condition::QuestionOnly => make_question_only(corpus),
    }
}

fn require_intact(corpus: &Corpus) -> Result<()> {
    if corpus.condition != Condition::Intact {
        return Err(Error::InvalidInput(format!(
            "control conditions derive from an intact corpus, got {}",
            corpus.condition
        )));
    }
    Ok(())
}

fn shuffle_words(statement: &str, seed: u64) -> String {
    let mut words: Vec<&str> = statement.split_whitespace().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    words.shuffle(&mut rng);
    words.join(" ")
}

fn trial_hash(trial_id: &str) -> u64 {
    let digest = Sha256::digest(trial_id.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
