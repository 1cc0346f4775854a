use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::model::TokenId;

/// Edit operations of one alignment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EditCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }
}

impl std::ops::AddAssign for EditCounts {
    fn add_assign(&mut self, o: Self) {
        self.substitutions += o.substitutions;
        self.insertions += o.insertions;
        self.deletions += o.deletions;
    }
}

/// Minimum-edit-distance alignment with unit costs. Among optimal
/// alignments the backtrace takes the diagonal first, so a substitution is
/// preferred to an insertion plus a deletion.
pub fn wer(reference: &[TokenId], hypothesis: &[TokenId]) -> EditCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    let w = m + 1;
    let mut cost = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        cost[i * w] = i;
    }
    for j in 0..=m {
        cost[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag =
                cost[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            let del = cost[(i - 1) * w + j] + 1;
            let ins = cost[i * w + j - 1] + 1;
            cost[i * w + j] = diag.min(del).min(ins);
        }
    }
    let mut out = EditCounts::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = cost[i * w + j];
        if i > 0 && j > 0 {
            let sub = usize::from(reference[i - 1] != hypothesis[j - 1]);
            if cost[(i - 1) * w + j - 1] + sub == here {
                out.substitutions += sub;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && cost[(i - 1) * w + j] + 1 == here {
            out.deletions += 1;
            i -= 1;
        } else {
            out.insertions += 1;
            j -= 1;
        }
    }
    out
}

/// Error totals over a set of utterances.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ErrorTally {
    pub edits: EditCounts,
    pub utterances: usize,
    pub ref_tokens: usize,
}

impl ErrorTally {
    pub fn add(&mut self, reference: &[TokenId], hypothesis: &[TokenId]) {
        self.edits += wer(reference, hypothesis);
        self.utterances += 1;
        self.ref_tokens += reference.len();
    }

    /// `100 · (S + I + D) / N` over the whole set. Zero reference tokens
    /// give 0% with no errors and 100% otherwise.
    pub fn wer_percent(&self) -> f64 {
        let e = self.edits.errors() as f64;
        if self.ref_tokens == 0 {
            return if e == 0.0 { 0.0 } else { 100.0 };
        }
        100.0 * e / self.ref_tokens as f64
    }
}

/// Corpus-level WER with an optional per-domain breakdown.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub total: ErrorTally,
    pub domains: BTreeMap<String, ErrorTally>,
}

impl EvalReport {
    pub fn score(refs: &[&[TokenId]], hyps: &[&[TokenId]]) -> Result<Self> {
        let mut r = Self::default();
        r.add_domain("all", refs, hyps)?;
        r.domains.clear();
        Ok(r)
    }

    pub fn add_domain(
        &mut self,
        domain: &str,
        refs: &[&[TokenId]],
        hyps: &[&[TokenId]],
    ) -> Result<()> {
        if refs.len() != hyps.len() {
            return Err(Error::Evaluation(format!(
                "{} references but {} hypotheses",
                refs.len(),
                hyps.len()
            )));
        }
        let tally = self.domains.entry(domain.to_string()).or_default();
        for (r, h) in refs.iter().zip(hyps) {
            tally.add(r, h);
            self.total.add(r, h);
        }
        Ok(())
    }

    pub fn wer_percent(&self) -> f64 {
        self.total.wer_percent()
    }

    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let mut put = |prefix: &str, t: &ErrorTally| {
            s += &format!("{prefix}wer = {:.4}\n", t.wer_percent());
            s += &format!("{prefix}substitutions = {}\n", t.edits.substitutions);
            s += &format!("{prefix}insertions = {}\n", t.edits.insertions);
            s += &format!("{prefix}deletions = {}\n", t.edits.deletions);
            s += &format!("{prefix}utterances = {}\n", t.utterances);
            s += &format!("{prefix}ref_tokens = {}\n", t.ref_tokens);
        };
        put("", &self.total);
        for (d, t) in &self.domains {
            put(&format!("{d}."), t);
        }
        s
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let row = |f: &mut fmt::Formatter<'_>, name: &str, t: &ErrorTally| {
            writeln!(
                f,
                "{name:<10} WER {:>7.2}%  S {:>5}  I {:>5}  D {:>5}  utts {:>5}  tokens {:>6}",
                t.wer_percent(),
                t.edits.substitutions,
                t.edits.insertions,
                t.edits.deletions,
                t.utterances,
                t.ref_tokens
            )
        };
        for (d, t) in &self.domains {
            row(f, d, t)?;
        }
        row(f, "total", &self.total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Plain Levenshtein distance, for cross-checking the error total.
    fn distance(a: &[usize], b: &[usize]) -> usize {
        let mut prev: Vec<usize> = (0..=b.len()).collect();
        for (i, x) in a.iter().enumerate() {
            let mut cur = vec![i + 1];
            for (j, y) in b.iter().enumerate() {
                cur.push(
                    (prev[j] + usize::from(x != y))
                        .min(prev[j + 1] + 1)
                        .min(cur[j] + 1),
                );
            }
            prev = cur;
        }
        prev[b.len()]
    }

    #[test]
    fn worked_examples() {
        assert_eq!(wer(&[0, 1, 2], &[0, 1, 2]), EditCounts::default());
        let one_sub = wer(&[0, 1, 2], &[0, 9, 2]);
        assert_eq!(
            (one_sub.substitutions, one_sub.insertions, one_sub.deletions),
            (1, 0, 0)
        );
        let mut t = ErrorTally::default();
        t.add(&[0, 1, 2], &[0, 9, 2]);
        assert!((t.wer_percent() - 100.0 / 3.0).abs() < 1e-12);
        assert_eq!(
            wer(&[0, 1, 2], &[]),
            EditCounts {
                substitutions: 0,
                insertions: 0,
                deletions: 3
            }
        );
        assert_eq!(wer(&[], &[4, 4]).insertions, 2);
    }

    #[test]
    fn substitution_preferred_over_insert_delete() {
        let e = wer(&[1, 2], &[3, 4]);
        assert_eq!((e.substitutions, e.insertions, e.deletions), (2, 0, 0));
        let e = wer(&[1, 2, 3], &[2, 3, 4]);
        assert_eq!(e.errors(), 2);
    }

    #[test]
    fn corpus_wer_is_pooled_not_averaged() {
        let refs: Vec<&[usize]> = vec![&[0], &[0, 1, 2, 3]];
        let hyps: Vec<&[usize]> = vec![&[1], &[0, 1, 2, 3]];
        let r = EvalReport::score(&refs, &hyps).unwrap();
        assert!((r.wer_percent() - 20.0).abs() < 1e-12);
        assert!(EvalReport::score(&refs, &hyps[..1]).is_err());
    }

    #[test]
    fn domain_breakdown_sums_to_total() {
        let mut r = EvalReport::default();
        r.add_domain("source", &[&[0, 1]], &[&[0]]).unwrap();
        r.add_domain("target", &[&[2, 3, 4]], &[&[2, 3, 4, 5]])
            .unwrap();
        assert_eq!(r.total.edits.errors(), 2);
        assert_eq!(r.total.ref_tokens, 5);
        assert_eq!(r.domains["source"].edits.deletions, 1);
        assert_eq!(r.domains["target"].edits.insertions, 1);
        assert!(r.to_key_values().contains("target.insertions = 1"));
    }

    proptest! {
        #[test]
        fn total_edits_equal_levenshtein(
            a in proptest::collection::vec(0usize..4, 0..12),
            b in proptest::collection::vec(0usize..4, 0..12),
        ) {
            let e = wer(&a, &b);
            prop_assert_eq!(e.errors(), distance(&a, &b));
            prop_assert_eq!(b.len() + e.deletions, a.len() + e.insertions);
        }

        #[test]
        fn relabeling_invariant(
            a in proptest::collection::vec(0usize..5, 0..10),
            b in proptest::collection::vec(0usize..5, 0..10),
            shift in 1usize..5,
        ) {
            let p = |s: &[usize]| s.iter().map(|t| (t + shift) % 5).collect::<Vec<_>>();
            prop_assert_eq!(wer(&a, &b), wer(&p(&a), &p(&b)));
        }
    }
}
