//! Scoring, training loops, corpus decoding and the end-to-end experiment.

mod config;
mod experiment;
mod metrics;
mod train;

pub use config::{parse_key_values, ExperimentConfig};
pub use experiment::{
    generate_data, run_experiment, select_fusion, ExperimentData, ExperimentOutputs,
    ExperimentReport, FusionChoice, Method, MethodResult, PerplexityReport,
};
pub use metrics::{wer, EditCounts, ErrorTally, EvalReport};
pub use train::{train_hat, train_mhat, EpochLosses, TrainConfig};

use crate::data::Corpus;
use crate::decode::{beam_search, BeamConfig, DecodeRecord, FusionConfig};
use crate::error::{Error, Result};
use crate::model::Transducer;

/// Applies `f` to every item on up to `jobs` scoped threads, each taking a
/// contiguous slice. Output order matches input order.
pub fn parallel_map<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let jobs = jobs.max(1).min(items.len().max(1));
    if jobs == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(jobs);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| {
                let f = &f;
                s.spawn(move || part.iter().map(f).collect::<Vec<R>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker thread panicked"))
            .collect()
    })
}

/// Best beam hypothesis for every utterance of a paired corpus.
pub fn decode_corpus<M: Transducer + Sync>(
    model: &M,
    corpus: &Corpus,
    beam: &BeamConfig,
    fusion: &FusionConfig,
    jobs: usize,
) -> Result<Vec<DecodeRecord>> {
    fusion.validate(model.vocab())?;
    let pairs = corpus.pairs()?;
    let ids: Vec<usize> = (0..pairs.len()).collect();
    parallel_map(&ids, jobs, |&i| {
        let best = beam_search(model, pairs[i].0, beam, fusion)?
            .into_iter()
            .next()
            .ok_or_else(|| {
                Error::Evaluation(format!("no hypothesis for {}", corpus.items[i].id))
            })?;
        Ok(DecodeRecord {
            utt_id: corpus.items[i].id.clone(),
            tokens: best.tokens,
            scores: best.scores,
        })
    })
    .into_iter()
    .collect()
}

/// Scores decode records against the corpus they came from, matching by
/// utterance id.
pub fn score_records(corpus: &Corpus, records: &[DecodeRecord]) -> Result<ErrorTally> {
    let by_id: std::collections::HashMap<&str, &DecodeRecord> =
        records.iter().map(|r| (r.utt_id.as_str(), r)).collect();
    let mut tally = ErrorTally::default();
    for u in &corpus.items {
        let r = by_id
            .get(u.id.as_str())
            .ok_or_else(|| Error::Evaluation(format!("no hypothesis for utterance {}", u.id)))?;
        tally.add(&u.tokens, &r.tokens);
    }
    if records.len() != corpus.len() {
        return Err(Error::Evaluation(format!(
            "{} hypotheses for {} utterances",
            records.len(),
            corpus.len()
        )));
    }
    Ok(tally)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_preserves_order() {
        let xs: Vec<u32> = (0..37).collect();
        for jobs in [1, 2, 5, 64] {
            assert_eq!(
                parallel_map(&xs, jobs, |x| x * 2),
                xs.iter().map(|x| x * 2).collect::<Vec<_>>()
            );
        }
        assert!(parallel_map::<u32, u32, _>(&[], 4, |x| *x).is_empty());
    }
}
