use serde::{Deserialize, Serialize};

use crate::label::StanceLabel;

/// Column index used for predictions that carry no label.
pub const ABSTAIN: usize = 3;

/// Gold × predicted counts. Rows are gold labels in `StanceLabel::ALL`
/// order; columns add a fourth "abstain" slot for parse failures.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub cells: [[u32; 4]; 3],
}

impl ConfusionCounts {
    pub fn from_pairs<I>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (StanceLabel, Option<StanceLabel>)>,
    {
        let mut c = Self::default();
        for (gold, pred) in pairs {
            c.add(gold, pred);
        }
        c
    }

    pub fn add(&mut self, gold: StanceLabel, pred: Option<StanceLabel>) {
        self.cells[gold.index()][pred.map_or(ABSTAIN, StanceLabel::index)] += 1;
    }

    pub fn get(&self, gold: StanceLabel, pred: Option<StanceLabel>) -> u32 {
        self.cells[gold.index()][pred.map_or(ABSTAIN, StanceLabel::index)]
    }

    pub fn total(&self) -> u32 {
        self.cells.iter().flatten().sum()
    }

    pub fn abstained(&self) -> u32 {
        self.cells.iter().map(|row| row[ABSTAIN]).sum()
    }

    pub fn merge(&mut self, other: &Self) {
        for (a, b) in self.cells.iter_mut().flatten().zip(other.cells.iter().flatten()) {
            *a += b;
        }
    }

    /// The same counts with every abstain cell dropped.
    pub fn without_abstains(&self) -> Self {
        let mut c = *self;
        for row in &mut c.cells {
            row[ABSTAIN] = 0;
        }
        c
    }
}

fn ratio(num: u32, den: u32) -> f64 {
    if den == 0 {
        0.0
    } else {
        f64::from(num) / f64::from(den)
    }
}

/// Standard F1 for one class. Abstains count as false negatives for the
/// gold class and never as false positives. 0/0 resolves to 0.
pub fn f1_per_class(counts: &ConfusionCounts, label: StanceLabel) -> f64 {
    let l = label.index();
    let tp = counts.cells[l][l];
    let predicted: u32 = counts.cells.iter().map(|row| row[l]).sum();
    let gold: u32 = counts.cells[l].iter().sum();
    let precision = ratio(tp, predicted);
    let recall = ratio(tp, gold);
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Mean of the favor and against F1 scores.
pub fn macro_f1_favor_against(counts: &ConfusionCounts) -> f64 {
    (f1_per_class(counts, StanceLabel::Against) + f1_per_class(counts, StanceLabel::Favor)) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use StanceLabel::{Against, Favor};

    #[test]
    fn abstain_is_a_false_negative_only() {
        let c = ConfusionCounts::from_pairs([(Favor, Some(Favor)), (Favor, None), (Against, Some(Against))]);
        assert_eq!(c.abstained(), 1);
        assert!((f1_per_class(&c, Favor) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f1_per_class(&c, Against), 1.0);
        assert_eq!(macro_f1_favor_against(&c.without_abstains()), 1.0);
    }

    #[test]
    fn empty_counts_score_zero() {
        assert_eq!(macro_f1_favor_against(&ConfusionCounts::default()), 0.0);
    }
}
