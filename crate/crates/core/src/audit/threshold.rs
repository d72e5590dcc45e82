//! Optimal loss-threshold adversaries.
//!
//! The sweep considers every classification a real-valued threshold can
//! produce: midpoints between adjacent distinct scores plus the two
//! infinities. A threshold placed exactly on a data value classifies the
//! same way as the midpoint below it, so this candidate set is exhaustive
//! over the whole real line.

use serde::{Deserialize, Serialize};

use super::AuditError;

/// Comparator attached to a threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// Guess member iff loss < beta (trained-on samples show smaller loss).
    LowerIsMember,
    /// Guess member iff loss >= beta.
    HigherOrEqualIsMember,
}

impl Direction {
    pub fn guess(self, score: f64, beta: f64) -> bool {
        match self {
            Direction::LowerIsMember => score < beta,
            Direction::HigherOrEqualIsMember => score >= beta,
        }
    }
}

/// Which comparators the adversary may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdRule {
    /// Member iff loss below threshold (default).
    LowerLossMember,
    /// Guess 1 iff loss >= threshold, the literal comparator.
    PaperLiteralGe,
    /// Strongest auditor: whichever direction agrees more.
    BidirectionalBest,
}

impl ThresholdRule {
    fn directions(self) -> &'static [Direction] {
        match self {
            ThresholdRule::LowerLossMember => &[Direction::LowerIsMember],
            ThresholdRule::PaperLiteralGe => &[Direction::HigherOrEqualIsMember],
            ThresholdRule::BidirectionalBest => {
                &[Direction::LowerIsMember, Direction::HigherOrEqualIsMember]
            }
        }
    }
}

/// A chosen threshold: where it applies, its value, comparator, and the
/// agreement it achieved on its fitting scope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub beta: f64,
    pub direction: Direction,
    pub accuracy: f64,
}

/// Best threshold over (score, membership) pairs under the rule.
///
/// Ties break toward smaller beta, then toward the lower-loss-member
/// direction. Runs in O(n log n) via sorted prefix counts.
pub fn optimal_threshold(
    scores: &[f64],
    statuses: &[bool],
    rule: ThresholdRule,
) -> Result<ThresholdChoice, AuditError> {
    if scores.is_empty() || scores.len() != statuses.len() {
        return Err(AuditError::Contract(format!(
            "threshold needs equal-length nonempty inputs, got {} scores / {} statuses",
            scores.len(),
            statuses.len()
        )));
    }
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    // Distinct values with cumulative member / non-member counts.
    let mut values: Vec<f64> = Vec::new();
    let mut members_upto: Vec<usize> = Vec::new(); // members among scores < boundary
    let mut nonmembers_upto: Vec<usize> = Vec::new();
    let (mut m_acc, mut nm_acc) = (0usize, 0usize);
    let mut i = 0;
    while i < n {
        let v = scores[order[i]];
        let mut j = i;
        while j < n && scores[order[j]] == v {
            if statuses[order[j]] {
                m_acc += 1;
            } else {
                nm_acc += 1;
            }
            j += 1;
        }
        values.push(v);
        members_upto.push(m_acc);
        nonmembers_upto.push(nm_acc);
        i = j;
    }
    let total_members = m_acc;
    let total_nonmembers = nm_acc;

    let boundary_beta = |b: usize| -> f64 {
        if b == 0 {
            f64::NEG_INFINITY
        } else if b == values.len() {
            f64::INFINITY
        } else {
            0.5 * (values[b - 1] + values[b])
        }
    };

    let mut best: Option<ThresholdChoice> = None;
    // Boundary b means: the first b distinct values are "below beta".
    for b in 0..=values.len() {
        let (m_below, nm_below) = if b == 0 {
            (0, 0)
        } else {
            (members_upto[b - 1], nonmembers_upto[b - 1])
        };
        for &direction in rule.directions() {
            let correct = match direction {
                // member iff score < beta
                Direction::LowerIsMember => m_below + (total_nonmembers - nm_below),
                // member iff score >= beta
                Direction::HigherOrEqualIsMember => nm_below + (total_members - m_below),
            };
            let accuracy = correct as f64 / n as f64;
            let better = match &best {
                None => true,
                Some(cur) => accuracy > cur.accuracy,
            };
            if better {
                best = Some(ThresholdChoice {
                    beta: boundary_beta(b),
                    direction,
                    accuracy,
                });
            }
        }
    }
    Ok(best.expect("at least one boundary exists"))
}

/// Fraction of trials where the guess induced by `choice` matches the
/// status.
pub fn apply_accuracy(scores: &[f64], statuses: &[bool], choice: &ThresholdChoice) -> f64 {
    let hits = scores
        .iter()
        .zip(statuses)
        .filter(|(&s, &h)| choice.direction.guess(s, choice.beta) == h)
        .count();
    hits as f64 / scores.len() as f64
}
