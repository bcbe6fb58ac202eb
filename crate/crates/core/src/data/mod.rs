//! Corpus ingestion, preprocessing and synthetic corpora.

mod preprocess;
mod records;
mod synthetic;

pub use preprocess::{
    apply_relation_vocab, build_fragments, filter_dictionary, prune_relations, DropCounts, FragmentMode, Pruned,
    BIGRAM_RELATION, BOW_RELATION,
};
pub use records::{CorpusDims, RawCorpus, RawRecord, RawSentence};
pub use synthetic::{
    alignment_csv, concept_relation, concept_words, generate_synthetic, AlignmentRow, SyntheticCorpus, SyntheticSpec,
};
