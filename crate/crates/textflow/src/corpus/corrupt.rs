//! Corruption operators for the self-correction task.
//!
//! Edits are deterministic given the spec's seed and never touch positions
//! marked constrained when a mask is supplied.

use super::{CorpusError, TokenSequence, Vocabulary, PAD};
use crate::mask::BoundaryMask;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorruptionKind {
    /// Remove tokens.
    LexicalDeletion,
    /// Replace tokens with other in-vocabulary symbols.
    LexicalSubstitution,
    /// Exchange two distinct symbols everywhere they occur in the sequence.
    SemanticSwap,
    /// Reverse a contiguous span.
    Permutation,
}

#[derive(Debug, Clone, Copy)]
pub enum Amount {
    /// Each position edited independently with this probability.
    Rate(f64),
    /// Exactly this many edits.
    Count(usize),
}

#[derive(Debug, Clone, Copy)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub amount: Amount,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, amount: Amount, seed: u64) -> Self {
        if let Amount::Rate(r) = amount {
            assert!((0.0..=1.0).contains(&r), "rate must be in [0, 1]");
        }
        CorruptionSpec { kind, amount, seed }
    }
}

/// Positions eligible for editing: unconstrained, non-PAD.
fn editable(seq: &TokenSequence, mask: Option<&BoundaryMask>) -> Vec<usize> {
    (0..seq.len())
        .filter(|&i| seq.ids[i] != PAD)
        .filter(|&i| mask.map_or(true, |m| !m.is_constrained(i)))
        .collect()
}

fn pick_positions(
    eligible: &[usize],
    amount: Amount,
    seq_len: usize,
    rng: &mut Rng,
) -> Result<Vec<usize>, CorpusError> {
    match amount {
        Amount::Rate(rate) => Ok(eligible
            .iter()
            .copied()
            .filter(|_| rng.bernoulli(rate))
            .collect()),
        Amount::Count(count) => {
            if count > seq_len {
                return Err(CorpusError::CountExceedsLength {
                    count,
                    len: seq_len,
                });
            }
            if count > eligible.len() {
                return Err(CorpusError::Contract(format!(
                    "count {count} exceeds {} editable positions",
                    eligible.len()
                )));
            }
            let mut pool = eligible.to_vec();
            rng.shuffle(&mut pool);
            pool.truncate(count);
            pool.sort_unstable();
            Ok(pool)
        }
    }
}

/// Applies `spec` to `seq`. The edited-position count is exact for
/// count-based amounts and matches the rate in expectation otherwise.
pub fn corrupt(
    seq: &TokenSequence,
    spec: &CorruptionSpec,
    mask: Option<&BoundaryMask>,
    vocab: &Vocabulary,
) -> Result<TokenSequence, CorpusError> {
    if seq.is_empty() {
        return Err(CorpusError::Contract(
            "cannot corrupt an empty sequence".into(),
        ));
    }
    let mut rng = Rng::new(spec.seed);
    let eligible = editable(seq, mask);
    match spec.kind {
        CorruptionKind::LexicalDeletion => {
            let doomed = pick_positions(&eligible, spec.amount, seq.len(), &mut rng)?;
            let ids = seq
                .ids
                .iter()
                .enumerate()
                .filter(|(i, _)| !doomed.contains(i))
                .map(|(_, &id)| id)
                .collect();
            Ok(TokenSequence::new(ids))
        }
        CorruptionKind::LexicalSubstitution => {
            let targets = pick_positions(&eligible, spec.amount, seq.len(), &mut rng)?;
            let mut ids = seq.ids.clone();
            for &i in &targets {
                let old = ids[i];
                // draw a different in-vocabulary text symbol
                let span = vocab.text_ids();
                let choices = span.end - span.start;
                let mut replacement = span.start + rng.below(choices);
                if replacement == old {
                    replacement = span.start + (replacement - span.start + 1) % choices;
                }
                ids[i] = replacement;
            }
            Ok(TokenSequence::new(ids))
        }
        CorruptionKind::SemanticSwap => {
            let swaps = match spec.amount {
                Amount::Count(k) => k,
                Amount::Rate(r) => usize::from(r > 0.0),
            };
            let mut ids = seq.ids.clone();
            for _ in 0..swaps {
                let mut present: Vec<usize> = eligible.iter().map(|&i| ids[i]).collect();
                present.sort_unstable();
                present.dedup();
                if present.len() < 2 {
                    break;
                }
                let a = present[rng.below(present.len())];
                let mut b = present[rng.below(present.len())];
                while b == a {
                    b = present[rng.below(present.len())];
                }
                for &i in &eligible {
                    if ids[i] == a {
                        ids[i] = b;
                    } else if ids[i] == b {
                        ids[i] = a;
                    }
                }
            }
            Ok(TokenSequence::new(ids))
        }
        CorruptionKind::Permutation => {
            let span_len = match spec.amount {
                Amount::Count(k) => {
                    if k > seq.len() {
                        return Err(CorpusError::CountExceedsLength {
                            count: k,
                            len: seq.len(),
                        });
                    }
                    k
                }
                Amount::Rate(r) => ((seq.len() as f64 * r).round() as usize).max(2),
            };
            let mut ids = seq.ids.clone();
            // find an unconstrained window of span_len and reverse it
            let ok: Vec<bool> = (0..seq.len()).map(|i| eligible.contains(&i)).collect();
            let starts: Vec<usize> = (0..=seq.len().saturating_sub(span_len))
                .filter(|&s| (s..s + span_len).all(|i| ok[i]))
                .collect();
            if !starts.is_empty() {
                let start = starts[rng.below(starts.len())];
                ids[start..start + span_len].reverse();
            }
            Ok(TokenSequence::new(ids))
        }
    }
}
