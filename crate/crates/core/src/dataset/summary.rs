use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::label::{LabelCounts, StanceLabel};
use crate::record::{Split, TweetRecord};

/// Per-split, per-target label counts of a loaded dataset.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub splits: BTreeMap<Split, BTreeMap<String, LabelCounts>>,
    /// Test records filled in from the train split.
    pub backfilled: usize,
}

impl SplitSummary {
    /// Records without a gold label are not counted.
    pub fn from_records(records: &[TweetRecord]) -> Self {
        let mut summary = Self::default();
        for r in records {
            if let Some(gold) = r.gold {
                summary
                    .splits
                    .entry(r.split)
                    .or_default()
                    .entry(r.target.clone())
                    .or_default()
                    .add(gold);
            }
            if r.backfilled {
                summary.backfilled += 1;
            }
        }
        summary
    }

    pub fn count(&self, split: Split, target: &str, label: StanceLabel) -> u32 {
        self.splits
            .get(&split)
            .and_then(|t| t.get(target))
            .map_or(0, |c| c.get(label))
    }

    pub fn total(&self, split: Split) -> u32 {
        self.splits.get(&split).map_or(0, |t| t.values().map(LabelCounts::total).sum())
    }

    /// Tab-separated table: one row per (split, target) plus a per-split total row.
    pub fn to_table(&self) -> String {
        let mut out = String::from("split\ttarget\tagainst\tfavor\tnone\ttotal\n");
        for (split, targets) in &self.splits {
            let mut all = LabelCounts::default();
            for (target, c) in targets {
                let _ = writeln!(out, "{split}\t{target}\t{}\t{}\t{}\t{}", c.against, c.favor, c.none, c.total());
                all.against += c.against;
                all.favor += c.favor;
                all.none += c.none;
            }
            let _ = writeln!(out, "{split}\tAll Targets\t{}\t{}\t{}\t{}", all.against, all.favor, all.none, all.total());
        }
        out
    }
}
