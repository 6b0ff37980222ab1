use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{evaluate_per_target, EvalError, EvalReport};
use crate::backend::Backend;
use crate::prompt::PromptAssets;
use crate::reasoner::{Reasoner, StrategyConfig};
use crate::record::TweetRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decoding {
    Greedy,
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: u32,
    /// Greedy only when the vote temperature is 0; a row with n = 1 is
    /// otherwise a single sampled chain.
    pub decoding: Decoding,
    pub vote_temperature: f64,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub warnings: Vec<String>,
}

impl SweepTable {
    /// One row per sample count: decoding, per-target macro-F1 and Avg.
    pub fn to_table(&self) -> String {
        let targets: BTreeSet<&str> = self
            .rows
            .iter()
            .flat_map(|r| r.report.targets.keys().map(String::as_str))
            .collect();
        let mut out = String::from("n\tdecoding");
        for t in &targets {
            let _ = write!(out, "\t{t}");
        }
        out.push_str("\tAvg\n");
        for row in &self.rows {
            let decoding = match row.decoding {
                Decoding::Greedy => "greedy",
                Decoding::Sampled => "sampled",
            };
            let _ = write!(out, "{}\t{decoding}", row.n);
            for t in &targets {
                match row.report.targets.get(*t) {
                    Some(s) => {
                        let _ = write!(out, "\t{:.4}", s.macro_f1);
                    }
                    None => out.push_str("\t-"),
                }
            }
            let _ = writeln!(out, "\t{:.4}", row.report.avg_macro_f1);
        }
        out
    }
}

/// Runs the voting strategy once per sample count in `ns` and scores each
/// run. Duplicate counts are dropped with a warning and the rest run in
/// ascending order. Behind a cache recorded at the largest n, smaller runs
/// are served from the stored sample prefix.
pub fn sweep_sample_count(
    tweets: &[TweetRecord],
    assets: &PromptAssets,
    backend: &dyn Backend,
    cfg: &StrategyConfig,
    ns: &[u32],
    workers: usize,
) -> Result<SweepTable, EvalError> {
    if ns.is_empty() {
        return Err(EvalError::InvalidSweep("no sample counts given".into()));
    }
    if ns.contains(&0) {
        return Err(EvalError::InvalidSweep("sample counts must be at least 1".into()));
    }
    if !cfg.self_consistency {
        return Err(EvalError::InvalidSweep(format!("{} does not vote over samples", cfg.strategy)));
    }
    let unique: BTreeSet<u32> = ns.iter().copied().collect();
    let mut warnings = Vec::new();
    if unique.len() < ns.len() {
        let w = format!("duplicate sample counts dropped: {ns:?} -> {:?}", unique.iter().collect::<Vec<_>>());
        log::warn!("{w}");
        warnings.push(w);
    }

    let mut rows = Vec::with_capacity(unique.len());
    for n in unique {
        let run_cfg = cfg.clone().with_samples(n);
        let reasoner = Reasoner::new(assets, run_cfg, backend)?;
        let predictions = reasoner.predict_all(tweets, workers)?;
        let mut report = evaluate_per_target(&predictions, tweets)?;
        report.metadata.insert("n_self_consistency".into(), n.to_string());
        let decoding = if cfg.vote_temperature == 0.0 {
            Decoding::Greedy
        } else {
            Decoding::Sampled
        };
        log::info!("sweep n={n}: avg macro-F1 {:.4}", report.avg_macro_f1);
        rows.push(SweepRow {
            n,
            decoding,
            vote_temperature: cfg.vote_temperature,
            report,
        });
    }
    Ok(SweepTable { rows, warnings })
}
