use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::opinion::{fuse_pair, rank_descending, Opinion, OpinionError};

/// How per-step opinions become one prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    /// Dempster combination of all opinions.
    Evidential,
    /// Class of the single highest belief over all steps.
    #[serde(rename = "max")]
    MaxPrediction,
    /// Final opinion only.
    #[serde(rename = "last")]
    LastStep,
    /// Mean belief vector.
    Average,
    /// Plurality of per-step predictions.
    Vote,
}

impl FusionKind {
    pub const ALL: [FusionKind; 5] = [
        FusionKind::Evidential,
        FusionKind::MaxPrediction,
        FusionKind::LastStep,
        FusionKind::Average,
        FusionKind::Vote,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionKind::Evidential => "evidential",
            FusionKind::MaxPrediction => "max",
            FusionKind::LastStep => "last",
            FusionKind::Average => "average",
            FusionKind::Vote => "vote",
        }
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown fusion '{s}' (expected evidential, max, last, average or vote)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutcome {
    /// All classes, most supported first.
    pub ranking: Vec<usize>,
    /// Combined opinion, for strategies that define one.
    pub fused: Option<Opinion>,
}

impl FusionOutcome {
    pub fn prediction(&self) -> usize {
        self.ranking[0]
    }

    pub fn top_k_contains(&self, k: usize, class: usize) -> bool {
        self.ranking.iter().take(k).any(|&c| c == class)
    }
}

/// Left fold of Dempster combination that survives total conflict.
///
/// When the normaliser underflows the incoming opinion is skipped and the
/// event counted, instead of aborting the episode.
#[derive(Debug, Clone)]
pub struct RunningFusion {
    current: Option<Opinion>,
    pub conflicts: usize,
}

impl RunningFusion {
    pub fn new() -> Self {
        Self {
            current: None,
            conflicts: 0,
        }
    }

    pub fn push(&mut self, op: &Opinion) -> Result<&Opinion, OpinionError> {
        let next = match self.current.take() {
            None => op.clone(),
            Some(acc) => match fuse_pair(&acc, op) {
                Ok(f) => f,
                Err(OpinionError::TotalConflict { .. }) => {
                    self.conflicts += 1;
                    acc
                }
                Err(e) => return Err(e),
            },
        };
        Ok(self.current.insert(next))
    }

    pub fn current(&self) -> Option<&Opinion> {
        self.current.as_ref()
    }
}

impl Default for RunningFusion {
    fn default() -> Self {
        Self::new()
    }
}

/// Applies one strategy to a non-empty opinion sequence.
pub fn fuse_strategy(kind: FusionKind, opinions: &[Opinion]) -> Result<FusionOutcome, OpinionError> {
    let last = opinions.last().ok_or(OpinionError::EmptySequence)?;
    let k = last.class_count();
    if let Some(op) = opinions.iter().find(|o| o.class_count() != k) {
        return Err(OpinionError::DimensionMismatch {
            left: k,
            right: op.class_count(),
        });
    }
    Ok(match kind {
        FusionKind::Evidential => {
            let mut run = RunningFusion::new();
            for op in opinions {
                run.push(op)?;
            }
            let fused = run.current.expect("non-empty");
            FusionOutcome {
                ranking: rank_descending(fused.beliefs()),
                fused: Some(fused),
            }
        }
        FusionKind::LastStep => FusionOutcome {
            ranking: rank_descending(last.beliefs()),
            fused: Some(last.clone()),
        },
        FusionKind::MaxPrediction => {
            let best: Vec<f64> = (0..k)
                .map(|c| opinions.iter().map(|o| o.belief(c)).fold(f64::NEG_INFINITY, f64::max))
                .collect();
            FusionOutcome {
                ranking: rank_descending(&best),
                fused: None,
            }
        }
        FusionKind::Average => {
            let n = opinions.len() as f64;
            let mean: Vec<f64> = (0..k)
                .map(|c| opinions.iter().map(|o| o.belief(c)).sum::<f64>() / n)
                .collect();
            let u = opinions.iter().map(|o| o.uncertainty()).sum::<f64>() / n;
            let fused = Opinion::new(mean.clone(), u).ok();
            FusionOutcome {
                ranking: rank_descending(&mean),
                fused,
            }
        }
        FusionKind::Vote => FusionOutcome {
            ranking: vote_ranking(opinions, k),
            fused: None,
        },
    })
}

/// Voted classes by (votes desc, first winning step asc, class asc), then the
/// rest by summed belief.
fn vote_ranking(opinions: &[Opinion], k: usize) -> Vec<usize> {
    let mut votes = vec![0usize; k];
    let mut first = vec![usize::MAX; k];
    for (t, op) in opinions.iter().enumerate() {
        let c = op.argmax();
        votes[c] += 1;
        first[c] = first[c].min(t);
    }
    let mut voted: Vec<usize> = (0..k).filter(|&c| votes[c] > 0).collect();
    voted.sort_by(|&a, &b| votes[b].cmp(&votes[a]).then(first[a].cmp(&first[b])).then(a.cmp(&b)));
    let sums: Vec<f64> = (0..k)
        .map(|c| opinions.iter().map(|o| o.belief(c)).sum())
        .collect();
    voted.extend(rank_descending(&sums).into_iter().filter(|&c| votes[c] == 0));
    voted
}
