//! The experiment pipelines. Each one loads its inputs, computes with
//! per-record derived streams (so worker count never changes results),
//! writes artifacts through the manifest writer, and seals the run.

pub mod coin;
pub mod gen_corpus;
pub mod palace;
pub mod stat;

use crate::config::{ExperimentKind, ResolvedConfig};
use crate::manifest::RunManifest;
use crate::CliError;

pub struct PipelineOutcome {
    pub manifest: RunManifest,
    pub report: String,
}

pub fn run(cfg: &ResolvedConfig, wants_sweep: bool) -> Result<PipelineOutcome, CliError> {
    let stage = if wants_sweep {
        "sweep".to_string()
    } else {
        cfg.raw.experiment.name().to_string()
    };
    let manifest = match cfg.raw.experiment {
        ExperimentKind::GenCorpus => gen_corpus::run(cfg),
        ExperimentKind::Coin => coin::run(cfg),
        ExperimentKind::Palace => palace::run(cfg),
        ExperimentKind::Stat => stat::run(cfg, wants_sweep),
    }
    .map_err(|source| CliError::Pipeline { stage, source })?;

    let report = crate::report::emit_report(&manifest, &cfg.output_dir).map_err(|source| {
        CliError::Pipeline {
            stage: "report".to_string(),
            source,
        }
    })?;
    Ok(PipelineOutcome { manifest, report })
}
