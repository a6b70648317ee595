//! Multinomial opinions over a frame of `K` exclusive classes.
//!
//! An [`Opinion`] carries one belief mass per class plus a single
//! uncertainty mass standing in for every non-singleton proposition. The
//! pairwise combination in [`fuse_pair`] is Dempster's rule restricted to
//! that singleton-plus-frame mass class, which is closed under combination,
//! so folding a sequence of opinions is order independent.
//!
//! [`HyperMass`] and [`brute_force_dempster`] enumerate the full power set.
//! They are a validation oracle for the reduced rule and are not used on the
//! episode path.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Normalizer below which two opinions are considered totally conflicting.
pub const CONFLICT_EPS: f64 = 1e-12;

/// Tolerance for the mass-sum invariant when validating external input.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Uncertainty at or below this cannot be inverted back to evidence.
pub const MIN_INVERTIBLE_UNCERTAINTY: f64 = 1e-15;

/// Largest frame the power-set oracle will enumerate.
pub const MAX_ORACLE_FRAME: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpinionError {
    #[error("a frame needs at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("evidence[{index}] = {value} is negative or not finite")]
    InvalidEvidence { index: usize, value: f64 },
    #[error("invalid opinion: {0}")]
    InvalidOpinion(String),
    #[error("uncertainty is zero; evidence is unbounded")]
    ZeroUncertainty,
    #[error("total conflict: normalizer {normalizer:e} below threshold")]
    TotalConflict { normalizer: f64 },
    #[error("class count mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("cannot fuse an empty sequence")]
    EmptySequence,
    #[error("frame of {0} classes is too large for power-set enumeration")]
    FrameTooLarge(usize),
}

/// Non-negative per-class evidence. The Dirichlet parameters are `e + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceVector {
    evidence: Vec<f64>,
}

impl EvidenceVector {
    pub fn new(evidence: Vec<f64>) -> Result<Self, OpinionError> {
        if evidence.len() < 2 {
            return Err(OpinionError::TooFewClasses(evidence.len()));
        }
        if let Some((index, &value)) = evidence
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(OpinionError::InvalidEvidence { index, value });
        }
        Ok(Self { evidence })
    }

    pub fn class_count(&self) -> usize {
        self.evidence.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.evidence
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.evidence
    }

    pub fn alpha(&self) -> Vec<f64> {
        self.evidence.iter().map(|e| e + 1.0).collect()
    }

    /// Dirichlet strength `S = sum(e_k + 1)`.
    pub fn strength(&self) -> f64 {
        self.evidence.iter().map(|e| e + 1.0).sum()
    }
}

/// Belief masses for `K` singletons plus one uncertainty mass, summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OpinionRecord", into = "OpinionRecord")]
pub struct Opinion {
    beliefs: Vec<f64>,
    uncertainty: f64,
}

/// Flat wire form used in the JSON-lines episode logs.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct OpinionRecord {
    k: usize,
    beliefs: Vec<f64>,
    uncertainty: f64,
}

impl From<Opinion> for OpinionRecord {
    fn from(op: Opinion) -> Self {
        Self {
            k: op.beliefs.len(),
            beliefs: op.beliefs,
            uncertainty: op.uncertainty,
        }
    }
}

impl TryFrom<OpinionRecord> for Opinion {
    type Error = OpinionError;

    fn try_from(rec: OpinionRecord) -> Result<Self, Self::Error> {
        if rec.k != rec.beliefs.len() {
            return Err(OpinionError::InvalidOpinion(format!(
                "k = {} but {} beliefs",
                rec.k,
                rec.beliefs.len()
            )));
        }
        Opinion::new(rec.beliefs, rec.uncertainty)
    }
}

impl Opinion {
    pub fn new(beliefs: Vec<f64>, uncertainty: f64) -> Result<Self, OpinionError> {
        if beliefs.len() < 2 {
            return Err(OpinionError::TooFewClasses(beliefs.len()));
        }
        let in_unit = |m: f64| m.is_finite() && (0.0..=1.0).contains(&m);
        if !in_unit(uncertainty) || !beliefs.iter().all(|&b| in_unit(b)) {
            return Err(OpinionError::InvalidOpinion(
                "masses must lie in [0, 1]".into(),
            ));
        }
        let total: f64 = beliefs.iter().sum::<f64>() + uncertainty;
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(OpinionError::InvalidOpinion(format!(
                "masses sum to {total}, expected 1"
            )));
        }
        Ok(Self {
            beliefs,
            uncertainty,
        })
    }

    /// All mass on the whole frame: the neutral element of [`fuse_pair`].
    pub fn vacuous(class_count: usize) -> Self {
        assert!(class_count >= 2, "a frame needs at least two classes");
        Self {
            beliefs: vec![0.0; class_count],
            uncertainty: 1.0,
        }
    }

    /// No belief committed to any class.
    pub fn is_vacuous(&self) -> bool {
        self.uncertainty == 1.0 && self.beliefs.iter().all(|&b| b == 0.0)
    }

    pub fn class_count(&self) -> usize {
        self.beliefs.len()
    }

    pub fn beliefs(&self) -> &[f64] {
        &self.beliefs
    }

    pub fn belief(&self, class: usize) -> f64 {
        self.beliefs[class]
    }

    pub fn uncertainty(&self) -> f64 {
        self.uncertainty
    }

    /// Largest singleton belief.
    pub fn top_belief(&self) -> f64 {
        self.beliefs.iter().copied().fold(0.0, f64::max)
    }

    pub fn argmax(&self) -> usize {
        self.predict(1)[0]
    }

    /// The `k` most believed classes, best first. Ties go to the lower index.
    ///
    /// Panics unless `1 <= k <= K`.
    pub fn predict(&self, k: usize) -> Vec<usize> {
        assert!(
            (1..=self.class_count()).contains(&k),
            "rank {k} outside 1..={}",
            self.class_count()
        );
        rank_descending(&self.beliefs)[..k].to_vec()
    }
}

impl fmt::Display for Opinion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "b=[")?;
        for (i, b) in self.beliefs.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{b:.4}")?;
        }
        write!(f, "] u={:.4}", self.uncertainty)
    }
}

/// Indices sorted by value descending; equal values keep ascending index order.
pub fn rank_descending(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    idx
}

/// `b_k = e_k / S`, `u = K / S` with `S = sum(e_k + 1)`.
pub fn opinion_from_evidence(e: &EvidenceVector) -> Opinion {
    let strength = e.strength();
    let k = e.class_count() as f64;
    Opinion {
        beliefs: e.as_slice().iter().map(|x| x / strength).collect(),
        uncertainty: k / strength,
    }
}

/// Inverse of [`opinion_from_evidence`]: `e_k = K b_k / u`.
pub fn evidence_from_opinion(op: &Opinion) -> Result<EvidenceVector, OpinionError> {
    if op.uncertainty <= MIN_INVERTIBLE_UNCERTAINTY {
        return Err(OpinionError::ZeroUncertainty);
    }
    let k = op.class_count() as f64;
    EvidenceVector::new(
        op.beliefs
            .iter()
            .map(|b| k * b / op.uncertainty)
            .collect(),
    )
}

/// Dempster combination of two singleton-plus-frame opinions.
///
/// The normaliser `1 - C`, with conflict `C = sum_{i != q} a_i b_q`, is
/// summed directly from the agreeing masses
/// `sum_k a_k b_k + (sum a) u_b + (sum b) u_a + u_a u_b`. Every term is
/// non-negative, so nothing cancels when conflict is close to one. Each term
/// is also written so that swapping the arguments reproduces the same floating
/// point operations, which makes the rule bitwise commutative.
pub fn fuse_pair(a: &Opinion, b: &Opinion) -> Result<Opinion, OpinionError> {
    if a.class_count() != b.class_count() {
        return Err(OpinionError::DimensionMismatch {
            left: a.class_count(),
            right: b.class_count(),
        });
    }
    // The vacuous opinion is the identity; returning the other operand keeps
    // that exact instead of up to rounding.
    if b.is_vacuous() {
        return Ok(a.clone());
    }
    if a.is_vacuous() {
        return Ok(b.clone());
    }
    let sum_a: f64 = a.beliefs.iter().sum();
    let sum_b: f64 = b.beliefs.iter().sum();
    let agreement: f64 = a
        .beliefs
        .iter()
        .zip(&b.beliefs)
        .map(|(x, y)| x * y)
        .sum();
    let (ua, ub) = (a.uncertainty, b.uncertainty);
    let normalizer = agreement + (sum_a * ub + sum_b * ua) + ua * ub;
    if !(normalizer >= CONFLICT_EPS) {
        return Err(OpinionError::TotalConflict { normalizer });
    }
    let beliefs = a
        .beliefs
        .iter()
        .zip(&b.beliefs)
        .map(|(&x, &y)| ((x * y + (x * ub + y * ua)) / normalizer).clamp(0.0, 1.0))
        .collect();
    Ok(Opinion {
        beliefs,
        uncertainty: (ua * ub / normalizer).clamp(0.0, 1.0),
    })
}

/// Left fold of [`fuse_pair`] over a non-empty sequence.
pub fn fuse_sequence<'a, I>(ops: I) -> Result<Opinion, OpinionError>
where
    I: IntoIterator<Item = &'a Opinion>,
{
    let mut iter = ops.into_iter();
    let first = iter.next().ok_or(OpinionError::EmptySequence)?;
    iter.try_fold(first.clone(), |acc, op| fuse_pair(&acc, op))
}

/// Running fusion: element `t` is the fold of `ops[..=t]`.
pub fn fuse_prefixes(ops: &[Opinion]) -> Result<Vec<Opinion>, OpinionError> {
    let mut out: Vec<Opinion> = Vec::with_capacity(ops.len());
    for op in ops {
        let next = match out.last() {
            Some(prev) => fuse_pair(prev, op)?,
            None => op.clone(),
        };
        out.push(next);
    }
    Ok(out)
}

/// Mass assignment over every non-empty subset of the frame, indexed by bitmask.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperMass {
    class_count: usize,
    masses: Vec<f64>,
}

impl HyperMass {
    fn check_frame(class_count: usize) -> Result<(), OpinionError> {
        if class_count < 2 {
            return Err(OpinionError::TooFewClasses(class_count));
        }
        if class_count > MAX_ORACLE_FRAME {
            return Err(OpinionError::FrameTooLarge(class_count));
        }
        Ok(())
    }

    /// Builds from `(subset bitmask, mass)` pairs; repeated subsets accumulate.
    pub fn from_focal(
        class_count: usize,
        focal: &[(u32, f64)],
    ) -> Result<Self, OpinionError> {
        Self::check_frame(class_count)?;
        let size = 1usize << class_count;
        let mut masses = vec![0.0; size];
        for &(set, m) in focal {
            let set = set as usize;
            if set == 0 || set >= size {
                return Err(OpinionError::InvalidOpinion(format!(
                    "subset mask {set:#b} outside the frame or empty"
                )));
            }
            if !(m.is_finite() && m >= 0.0) {
                return Err(OpinionError::InvalidOpinion(format!("mass {m} is invalid")));
            }
            masses[set] += m;
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(OpinionError::InvalidOpinion(format!(
                "masses sum to {total}, expected 1"
            )));
        }
        Ok(Self {
            class_count,
            masses,
        })
    }

    /// Singleton beliefs on `{k}` and the uncertainty on the whole frame.
    pub fn from_opinion(op: &Opinion) -> Result<Self, OpinionError> {
        let k = op.class_count();
        Self::check_frame(k)?;
        let mut masses = vec![0.0; 1 << k];
        for (class, &b) in op.beliefs().iter().enumerate() {
            masses[1 << class] = b;
        }
        masses[(1 << k) - 1] += op.uncertainty();
        Ok(Self {
            class_count: k,
            masses,
        })
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn mass(&self, set: u32) -> f64 {
        self.masses.get(set as usize).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Collapses to an opinion: singleton masses become beliefs and every
    /// subset with two or more classes is summed into the uncertainty.
    pub fn to_opinion(&self) -> Opinion {
        let mut beliefs = vec![0.0; self.class_count];
        let mut uncertainty = 0.0;
        for (set, &m) in self.masses.iter().enumerate().skip(1) {
            if set.is_power_of_two() {
                beliefs[set.trailing_zeros() as usize] = m;
            } else {
                uncertainty += m;
            }
        }
        Opinion {
            beliefs,
            uncertainty,
        }
    }
}

/// Dempster's rule by explicit enumeration of every focal-element pair.
pub fn brute_force_dempster(a: &HyperMass, b: &HyperMass) -> Result<HyperMass, OpinionError> {
    if a.class_count != b.class_count {
        return Err(OpinionError::DimensionMismatch {
            left: a.class_count,
            right: b.class_count,
        });
    }
    HyperMass::check_frame(a.class_count)?;
    let focal = |h: &HyperMass| -> Vec<(usize, f64)> {
        h.masses
            .iter()
            .enumerate()
            .filter(|(_, &m)| m > 0.0)
            .map(|(s, &m)| (s, m))
            .collect()
    };
    let (fa, fb) = (focal(a), focal(b));
    let mut combined = vec![0.0; a.masses.len()];
    for &(sa, ma) in &fa {
        for &(sb, mb) in &fb {
            combined[sa & sb] += ma * mb;
        }
    }
    let normalizer: f64 = combined.iter().skip(1).sum();
    if !(normalizer >= CONFLICT_EPS) {
        return Err(OpinionError::TotalConflict { normalizer });
    }
    combined[0] = 0.0;
    for m in combined.iter_mut() {
        *m /= normalizer;
    }
    Ok(HyperMass {
        class_count: a.class_count,
        masses: combined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn op(b: &[f64], u: f64) -> Opinion {
        Opinion::new(b.to_vec(), u).unwrap()
    }

    fn assert_close(a: &Opinion, b: &Opinion, tol: f64) {
        assert_eq!(a.class_count(), b.class_count());
        for (x, y) in a.beliefs().iter().zip(b.beliefs()) {
            assert!((x - y).abs() <= tol, "{a} vs {b}");
        }
        assert!((a.uncertainty() - b.uncertainty()).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn evidence_to_opinion_examples() {
        let o = opinion_from_evidence(&EvidenceVector::new(vec![2.0, 1.0, 0.0]).unwrap());
        assert_close(&o, &op(&[1.0 / 3.0, 1.0 / 6.0, 0.0], 0.5), 1e-15);

        let o = opinion_from_evidence(&EvidenceVector::new(vec![0.0; 3]).unwrap());
        assert_eq!(o, Opinion::vacuous(3));

        let o = opinion_from_evidence(&EvidenceVector::new(vec![9.0, 0.0]).unwrap());
        assert!((o.belief(0) - 9.0 / 11.0).abs() < 1e-15);
        assert!((o.uncertainty() - 2.0 / 11.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_evidence() {
        assert!(matches!(
            EvidenceVector::new(vec![1.0, -0.5]),
            Err(OpinionError::InvalidEvidence { index: 1, .. })
        ));
        assert!(EvidenceVector::new(vec![f64::NAN, 0.0]).is_err());
        assert!(EvidenceVector::new(vec![f64::INFINITY, 0.0]).is_err());
        assert_eq!(
            EvidenceVector::new(vec![1.0]),
            Err(OpinionError::TooFewClasses(1))
        );
    }

    #[test]
    fn inverse_examples() {
        let e = evidence_from_opinion(&op(&[1.0 / 3.0, 1.0 / 6.0, 0.0], 0.5)).unwrap();
        for (x, y) in e.as_slice().iter().zip([2.0, 1.0, 0.0]) {
            assert!((x - y).abs() < 1e-12);
        }
        let e = evidence_from_opinion(&Opinion::vacuous(4)).unwrap();
        assert!(e.as_slice().iter().all(|&x| x == 0.0));
        assert_eq!(
            evidence_from_opinion(&op(&[0.5, 0.5], 0.0)),
            Err(OpinionError::ZeroUncertainty)
        );
    }

    #[test]
    fn fuse_pair_worked_example() {
        let a = op(&[0.6, 0.2, 0.0], 0.2);
        let b = op(&[0.4, 0.1, 0.2], 0.3);
        let f = fuse_pair(&a, &b).unwrap();
        // conflict = 0.18 + 0.12 = 0.30
        let expect = op(&[0.5 / 0.7, 0.1 / 0.7, 0.04 / 0.7], 0.06 / 0.7);
        assert_close(&f, &expect, 1e-12);
    }

    #[test]
    fn dogmatic_disjoint_is_total_conflict() {
        let a = op(&[1.0, 0.0], 0.0);
        let b = op(&[0.0, 1.0], 0.0);
        assert!(matches!(
            fuse_pair(&a, &b),
            Err(OpinionError::TotalConflict { .. })
        ));
    }

    #[test]
    fn vacuous_is_neutral() {
        let x = op(&[0.3, 0.1, 0.25, 0.05], 0.3);
        let v = Opinion::vacuous(4);
        assert_eq!(fuse_pair(&v, &x).unwrap(), x);
        assert_eq!(fuse_pair(&x, &v).unwrap(), x);
        assert_eq!(fuse_sequence([&x, &v, &v]).unwrap(), x);
        assert_eq!(fuse_sequence([&x]).unwrap(), x);
    }

    #[test]
    fn sequence_errors() {
        assert_eq!(
            fuse_sequence(std::iter::empty()),
            Err(OpinionError::EmptySequence)
        );
        let a = Opinion::vacuous(2);
        let b = Opinion::vacuous(3);
        assert_eq!(
            fuse_pair(&a, &b),
            Err(OpinionError::DimensionMismatch { left: 2, right: 3 })
        );
    }

    #[test]
    fn predict_orders_and_breaks_ties() {
        assert_eq!(op(&[0.1, 0.7, 0.1], 0.1).predict(1), vec![1]);
        assert_eq!(op(&[0.3, 0.3, 0.2], 0.2).predict(1), vec![0]);
        assert_eq!(op(&[0.1, 0.5, 0.3], 0.1).predict(3), vec![1, 2, 0]);
    }

    #[test]
    #[should_panic]
    fn predict_rank_out_of_range() {
        Opinion::vacuous(3).predict(4);
    }

    #[test]
    fn oracle_examples() {
        let v = HyperMass::from_focal(3, &[(0b111, 1.0)]).unwrap();
        let f = brute_force_dempster(&v, &v).unwrap();
        assert_eq!(f.mass(0b111), 1.0);

        // {1,2} x {2,3} -> {2}; classes are bits 0..2
        let a = HyperMass::from_focal(3, &[(0b011, 1.0)]).unwrap();
        let b = HyperMass::from_focal(3, &[(0b110, 1.0)]).unwrap();
        let f = brute_force_dempster(&a, &b).unwrap();
        assert_eq!(f.mass(0b010), 1.0);
        assert!((f.total() - 1.0).abs() < 1e-15);

        let x = op(&[0.6, 0.2, 0.0], 0.2);
        let y = op(&[0.4, 0.1, 0.2], 0.3);
        let hx = HyperMass::from_opinion(&x).unwrap();
        let hy = HyperMass::from_opinion(&y).unwrap();
        let oracle = brute_force_dempster(&hx, &hy).unwrap().to_opinion();
        assert_close(&oracle, &fuse_pair(&x, &y).unwrap(), 1e-12);
    }

    #[test]
    fn oracle_errors() {
        assert_eq!(
            HyperMass::from_focal(13, &[]).unwrap_err(),
            OpinionError::FrameTooLarge(13)
        );
        let a = HyperMass::from_focal(2, &[(0b01, 1.0)]).unwrap();
        let b = HyperMass::from_focal(2, &[(0b10, 1.0)]).unwrap();
        assert!(matches!(
            brute_force_dempster(&a, &b),
            Err(OpinionError::TotalConflict { .. })
        ));
    }

    #[test]
    fn serde_flat_record() {
        let o = op(&[0.25, 0.5], 0.25);
        let s = serde_json::to_string(&o).unwrap();
        assert_eq!(s, r#"{"k":2,"beliefs":[0.25,0.5],"uncertainty":0.25}"#);
        let back: Opinion = serde_json::from_str(&s).unwrap();
        assert_eq!(back, o);
        assert!(serde_json::from_str::<Opinion>(
            r#"{"k":3,"beliefs":[0.25,0.5],"uncertainty":0.25}"#
        )
        .is_err());
        assert!(serde_json::from_str::<Opinion>(
            r#"{"k":2,"beliefs":[0.5,0.5],"uncertainty":0.25}"#
        )
        .is_err());
    }

    #[test]
    fn prefixes_match_fold() {
        let ops = vec![
            op(&[0.2, 0.1, 0.1], 0.6),
            op(&[0.0, 0.5, 0.1], 0.4),
            op(&[0.3, 0.3, 0.0], 0.4),
        ];
        let pre = fuse_prefixes(&ops).unwrap();
        assert_eq!(pre.len(), 3);
        assert_eq!(pre[0], ops[0]);
        assert_eq!(pre[2], fuse_sequence(&ops).unwrap());
    }
}
