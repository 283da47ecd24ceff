//! Materializes a corpus (and optionally auxiliary data) to disk so the
//! shipped experiments have an inspectable, re-derivable input set.

use anyhow::Result;

use gauntlet_core::corpus::corpus_stats;
use gauntlet_core::palace::aux_to_jsonl_string;

use crate::config::ResolvedConfig;
use crate::manifest::{config_digest, OutputWriter, RunManifest};

pub fn run(cfg: &ResolvedConfig) -> Result<RunManifest> {
    let (digest, inputs) = config_digest(cfg)?;
    let vocab = crate::load_vocabulary(&cfg.vocabulary_path())?;
    let corpus = crate::load_corpus(cfg, &vocab)?;

    let mut out = OutputWriter::new(&cfg.output_dir)?;
    out.write("corpus.jsonl", corpus.to_jsonl_string().as_bytes())?;
    let stats = corpus_stats(&vocab, &corpus)?;
    out.write_json("stats.json", &stats)?;

    if cfg.raw.aux.is_some() {
        let aux_vocab = crate::load_vocabulary(&crate::aux_vocab_path(cfg))?;
        let aux = crate::build_aux(cfg, &aux_vocab)?;
        out.write("aux.jsonl", aux_to_jsonl_string(&aux).as_bytes())?;
    }
    out.finish(cfg, digest, inputs)
}
