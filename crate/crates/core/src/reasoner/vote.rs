use serde::{Deserialize, Serialize};

use super::parse::{ParseStatus, SamplePrediction};
use super::ReasonerError;
use crate::label::{LabelCounts, StanceLabel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteOutcome {
    pub label: StanceLabel,
    /// Samples that voted for `label`.
    pub votes: u32,
    /// Samples drawn, including failed and unparseable ones.
    pub drawn: u32,
    pub tie: bool,
    pub counts: LabelCounts,
    pub n_valid: u32,
    /// Sorted by sample index.
    pub samples: Vec<SamplePrediction>,
}

impl VoteOutcome {
    /// `votes / drawn`.
    pub fn confidence(&self) -> f64 {
        f64::from(self.votes) / f64::from(self.drawn)
    }
}

/// Majority vote over parsed samples. Only `ok` samples count; ties go to the
/// tied label seen first in sample-index order. Confidence divides by
/// `total_drawn`, not by the number of valid samples.
pub fn majority_vote(mut samples: Vec<SamplePrediction>, total_drawn: u32) -> Result<VoteOutcome, ReasonerError> {
    if total_drawn == 0 {
        return Err(ReasonerError::InvalidConfig("total_drawn must be at least 1".into()));
    }
    if samples.len() > total_drawn as usize {
        return Err(ReasonerError::InvalidConfig(format!(
            "{} samples exceed total_drawn {total_drawn}",
            samples.len()
        )));
    }
    samples.sort_by_key(|s| s.sample_index);

    let mut counts = LabelCounts::default();
    for s in &samples {
        if let (ParseStatus::Ok, Some(label)) = (s.parse_status, s.label) {
            counts.add(label);
        }
    }
    let n_valid = counts.total();
    if n_valid == 0 {
        return Err(ReasonerError::AllSamplesUnparseable { drawn: total_drawn });
    }

    let top = StanceLabel::ALL.iter().map(|&l| counts.get(l)).max().unwrap_or(0);
    let tied: Vec<StanceLabel> = StanceLabel::ALL.into_iter().filter(|&l| counts.get(l) == top).collect();
    let label = samples
        .iter()
        .filter(|s| s.parse_status == ParseStatus::Ok)
        .filter_map(|s| s.label)
        .find(|l| tied.contains(l))
        .expect("a tied label has at least one sample");

    Ok(VoteOutcome {
        label,
        votes: top,
        drawn: total_drawn,
        tie: tied.len() > 1,
        counts,
        n_valid,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use StanceLabel::{Against, Favor};
    const NONE: StanceLabel = StanceLabel::None;

    fn ok(i: u32, l: StanceLabel) -> SamplePrediction {
        SamplePrediction::new(i, Some(l), None, l.as_str())
    }

    fn votes(labels: &[StanceLabel]) -> Vec<SamplePrediction> {
        labels.iter().enumerate().map(|(i, &l)| ok(i as u32, l)).collect()
    }

    #[test]
    fn plain_majority() {
        let v = majority_vote(votes(&[Favor, Favor, Against, NONE, Favor]), 5).unwrap();
        assert_eq!((v.label, v.votes, v.tie), (Favor, 3, false));
        assert!((v.confidence() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn tie_goes_to_earliest_sample() {
        let v = majority_vote(votes(&[Favor, Against, Against, Favor, NONE]), 5).unwrap();
        assert_eq!((v.label, v.votes, v.tie), (Favor, 2, true));
        assert!((v.confidence() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn singleton() {
        let v = majority_vote(votes(&[Against]), 1).unwrap();
        assert_eq!((v.label, v.confidence()), (Against, 1.0));
    }

    #[test]
    fn malformed_samples_keep_the_denominator() {
        let mut s = votes(&[NONE, NONE, Favor, Against]);
        s.push(SamplePrediction::failed(4, "timeout"));
        let v = majority_vote(s, 5).unwrap();
        assert_eq!((v.label, v.votes, v.n_valid, v.drawn), (NONE, 2, 4, 5));
        assert!((v.confidence() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn nothing_valid_is_an_error() {
        let s = (0..5).map(|i| SamplePrediction::failed(i, "x")).collect();
        assert!(matches!(majority_vote(s, 5), Err(ReasonerError::AllSamplesUnparseable { drawn: 5 })));
    }

    #[test]
    fn arrival_order_does_not_matter() {
        let mut s = votes(&[Against, Favor, Favor, Against]);
        s.reverse();
        let v = majority_vote(s, 4).unwrap();
        assert_eq!((v.label, v.tie), (Against, true));
        assert_eq!(v.samples[0].sample_index, 0);
    }
}
