//! Synthetic domains, corpus generation and every on-disk format.

mod checkpoint;
mod corpus;
mod domain;
mod io;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointKind, CheckpointRef};
pub use corpus::{gen_corpus, Corpus, Split, Utterance, MAX_SENTENCE_LEN};
pub use domain::{DomainPair, DomainSpec, ShiftConfig};
pub use io::{
    corpus_path, read_corpus, read_features, read_text_corpus, read_vocab, write_corpus,
    write_features, write_text_corpus, write_vocab,
};

/// Every label equally likely after every context, with a fixed stop
/// probability. Prototypes are the scaled standard basis, so `d_x == |V|`.
pub fn uniform_domain(vocab_size: usize, stop_prob: f64) -> crate::Result<DomainSpec> {
    use crate::numerics::Tensor;
    let vocab = crate::model::Vocabulary::new(vocab_size)?;
    let n = vocab_size + 1;
    let mut rows = vec![vec![(1.0 - stop_prob) / vocab_size as f64; n]; n];
    for (r, row) in rows.iter_mut().enumerate() {
        row[vocab_size] = if r == vocab_size { 0.0 } else { stop_prob };
    }
    rows[vocab_size] = vec![1.0 / vocab_size as f64; n];
    rows[vocab_size][vocab_size] = 0.0;
    let mut protos = vec![0.0; vocab_size * vocab_size];
    for i in 0..vocab_size {
        protos[i * vocab_size + i] = 2.0;
    }
    DomainSpec::new(
        vocab,
        rows,
        Tensor::matrix(vocab_size, vocab_size, protos)?,
        1..=3,
        0.3,
    )
}
