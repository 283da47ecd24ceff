//! Experiment configuration: one TOML file per run, schema-validated,
//! with every default made explicit in the resolved form that lands in
//! the manifest.

use std::path::{Path, PathBuf};

use gauntlet_core::{attacks, commitment, martingale, palace, verifier};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Coin,
    Palace,
    Stat,
    GenCorpus,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Coin => "coin",
            ExperimentKind::Palace => "palace",
            ExperimentKind::Stat => "stat",
            ExperimentKind::GenCorpus => "gen-corpus",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CorpusSpec {
    Synthetic { n: usize, mean: f64, std: f64 },
    File { path: PathBuf },
}

/// Auxiliary (prompt, answer, reasoning-length) data. Synthetic records
/// draw an answer first, then grow reasoning text whose canonical count
/// tracks `base + per_token * answer_tokens` plus uniform noise, so the
/// labels are honest reasoning lengths that a length-sensitive model can
/// learn from the answer alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AuxSpec {
    Synthetic {
        n: usize,
        #[serde(default = "d_aux_base")]
        base: f64,
        #[serde(default = "d_aux_per_token")]
        per_token: f64,
        #[serde(default = "d_aux_noise")]
        noise: f64,
        #[serde(default = "d_aux_short")]
        short_answer_tokens: [usize; 2],
        #[serde(default = "d_aux_long")]
        long_answer_tokens: [usize; 2],
        #[serde(default = "d_aux_long_fraction")]
        long_fraction: f64,
        #[serde(default)]
        vocabulary: Option<PathBuf>,
    },
    File { path: PathBuf },
}

fn d_aux_base() -> f64 {
    40.0
}
fn d_aux_per_token() -> f64 {
    6.5
}
fn d_aux_noise() -> f64 {
    20.0
}
fn d_aux_short() -> [usize; 2] {
    [8, 30]
}
fn d_aux_long() -> [usize; 2] {
    [45, 80]
}
fn d_aux_long_fraction() -> f64 {
    0.4
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoinParams {
    pub attacks: Vec<String>,
    #[serde(default = "d_true")]
    pub defense: bool,
    #[serde(default = "d_budget")]
    pub budget: usize,
    #[serde(default = "d_inserted_tokens")]
    pub inserted_tokens: usize,
    #[serde(default = "d_block_size")]
    pub block_size: usize,
    #[serde(default = "d_probing_ratio")]
    pub probing_ratio: f64,
    #[serde(default = "d_aggregate_zmax")]
    pub aggregate_zmax: f64,
    #[serde(default = "d_threshold_scale")]
    pub threshold_scale: f64,
    #[serde(default)]
    pub rule_quota: Option<f64>,
    #[serde(default = "d_embed_dim")]
    pub embed_dim: usize,
}

fn d_true() -> bool {
    true
}
fn d_budget() -> usize {
    attacks::DEFAULT_BUDGET
}
fn d_inserted_tokens() -> usize {
    attacks::DEFAULT_INSERTED_TOKENS
}
fn d_block_size() -> usize {
    commitment::DEFAULT_BLOCK_SIZE
}
fn d_probing_ratio() -> f64 {
    verifier::VerifierConfig::reference().probing_ratio
}
fn d_aggregate_zmax() -> f64 {
    verifier::VerifierConfig::reference().aggregate_zmax
}
fn d_threshold_scale() -> f64 {
    0.5
}
fn d_embed_dim() -> usize {
    verifier::DEFAULT_EMBED_DIM
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PalaceMode {
    Targeted,
    Backdoor,
    Steering,
    Style,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PalaceParams {
    pub mode: PalaceMode,
    #[serde(default = "d_feature_dim")]
    pub feature_dim: usize,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "d_tau")]
    pub tau: f64,
    #[serde(default = "d_train_fraction")]
    pub train_fraction: f64,
    /// Poison rate; when absent the mode-specific default applies.
    #[serde(default)]
    pub rate: Option<f64>,
    #[serde(default = "d_label_threshold")]
    pub label_threshold: u64,
    #[serde(default = "d_factor")]
    pub factor: f64,
    #[serde(default = "d_cap")]
    pub cap: f64,
    #[serde(default = "d_trigger")]
    pub trigger: String,
    #[serde(default = "d_target")]
    pub target: f64,
    #[serde(default = "d_noise_std")]
    pub noise_std: f64,
    #[serde(default = "d_candidates")]
    pub candidates: Vec<String>,
    #[serde(default)]
    pub variants_file: Option<PathBuf>,
}

fn d_feature_dim() -> usize {
    palace::DEFAULT_FEATURE_DIM
}
fn d_epochs() -> usize {
    palace::DEFAULT_EPOCHS
}
fn d_learning_rate() -> f64 {
    palace::DEFAULT_LEARNING_RATE
}
fn d_tau() -> f64 {
    palace::DEFAULT_TAU
}
fn d_train_fraction() -> f64 {
    0.8
}
fn d_label_threshold() -> u64 {
    palace::DEFAULT_LABEL_THRESHOLD
}
fn d_factor() -> f64 {
    palace::DEFAULT_POISON_FACTOR
}
fn d_cap() -> f64 {
    palace::DEFAULT_LABEL_CAP
}
fn d_trigger() -> String {
    palace::DEFAULT_TRIGGER.to_string()
}
fn d_target() -> f64 {
    palace::DEFAULT_BACKDOOR_TARGET
}
fn d_noise_std() -> f64 {
    palace::DEFAULT_BACKDOOR_NOISE_STD
}
fn d_candidates() -> Vec<String> {
    palace::DEFAULT_TRIGGER_CANDIDATES
        .iter()
        .map(|s| s.to_string())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Honest,
    Periodic,
    PeriodicOffset,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatParams {
    pub strategy: StrategyKind,
    #[serde(default = "d_period")]
    pub period: usize,
    #[serde(default = "d_amount")]
    pub amount: u64,
    #[serde(default)]
    pub offset: u64,
    #[serde(default = "d_n_mc")]
    pub n_mc: usize,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default = "d_lambda0")]
    pub lambda0: f64,
    /// Fixed clip scale for Z; absent means calibrate from the prefix.
    #[serde(default)]
    pub z_scale: Option<f64>,
    #[serde(default = "d_calibration_prefix")]
    pub calibration_prefix: usize,
}

fn d_period() -> usize {
    martingale::DEFAULT_PERIOD
}
fn d_amount() -> u64 {
    martingale::DEFAULT_AMOUNT
}
fn d_n_mc() -> usize {
    martingale::DEFAULT_N_MC
}
fn d_alpha() -> f64 {
    martingale::DEFAULT_ALPHA
}
fn d_lambda0() -> f64 {
    martingale::DEFAULT_LAMBDA0
}
fn d_calibration_prefix() -> usize {
    martingale::DEFAULT_CALIBRATION_PREFIX
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepParams {
    Inflation {
        amounts: Vec<u64>,
        #[serde(default = "d_period")]
        period: usize,
    },
    Offset {
        offsets: Vec<u64>,
        amount: u64,
        #[serde(default = "d_period")]
        period: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub vocabulary: PathBuf,
    #[serde(default)]
    pub svg: bool,
    #[serde(default)]
    pub corpus: Option<CorpusSpec>,
    #[serde(default)]
    pub aux: Option<AuxSpec>,
    #[serde(default)]
    pub coin: Option<CoinParams>,
    #[serde(default)]
    pub palace: Option<PalaceParams>,
    #[serde(default)]
    pub stat: Option<StatParams>,
    #[serde(default)]
    pub sweep: Option<SweepParams>,
}

/// A parsed config with overrides applied and input paths resolved
/// relative to the config file's directory.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub raw: ExperimentConfig,
    pub config_dir: PathBuf,
    pub output_dir: PathBuf,
}

impl ResolvedConfig {
    /// Resolves an input path named in the config against the config
    /// file's directory (absolute paths pass through).
    pub fn input_path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.config_dir.join(p)
        }
    }

    pub fn vocabulary_path(&self) -> PathBuf {
        self.input_path(&self.raw.vocabulary)
    }

    /// Every file the run reads, in declaration order, as (label,
    /// path-as-written, resolved path) triples.
    pub fn input_files(&self) -> Vec<(String, String, PathBuf)> {
        let mut files = vec![(
            "vocabulary".to_string(),
            self.raw.vocabulary.display().to_string(),
            self.vocabulary_path(),
        )];
        if let Some(CorpusSpec::File { path }) = &self.raw.corpus {
            files.push((
                "corpus".to_string(),
                path.display().to_string(),
                self.input_path(path),
            ));
        }
        if let Some(aux) = &self.raw.aux {
            match aux {
                AuxSpec::File { path } => files.push((
                    "aux".to_string(),
                    path.display().to_string(),
                    self.input_path(path),
                )),
                AuxSpec::Synthetic {
                    vocabulary: Some(path),
                    ..
                } => files.push((
                    "aux_vocabulary".to_string(),
                    path.display().to_string(),
                    self.input_path(path),
                )),
                AuxSpec::Synthetic { .. } => {}
            }
        }
        if let Some(p) = self.raw.palace.as_ref().and_then(|p| p.variants_file.as_ref()) {
            files.push((
                "variants".to_string(),
                p.display().to_string(),
                self.input_path(p),
            ));
        }
        files
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn check_fraction(name: &str, v: f64) -> Result<(), CliError> {
    if !(v > 0.0 && v <= 1.0) {
        return Err(config_err(format!("{name} {v} outside (0, 1]")));
    }
    Ok(())
}

pub fn load(
    path: &Path,
    command: ExperimentKind,
    wants_sweep: bool,
    seed_override: Option<u64>,
    out_override: Option<PathBuf>,
) -> Result<ResolvedConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
    let mut raw: ExperimentConfig = toml::from_str(&text)
        .map_err(|e| config_err(format!("invalid config {}: {e}", path.display())))?;

    if raw.experiment != command {
        return Err(config_err(format!(
            "config declares experiment \"{}\" but the {} command was invoked",
            raw.experiment.name(),
            if wants_sweep { "sweep" } else { command.name() },
        )));
    }
    if let Some(seed) = seed_override {
        raw.seed = seed;
    }

    let config_dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let output_dir = out_override.unwrap_or_else(|| raw.output_dir.clone());

    let resolved = ResolvedConfig {
        raw,
        config_dir,
        output_dir,
    };
    validate(&resolved, wants_sweep)?;
    Ok(resolved)
}

fn validate(cfg: &ResolvedConfig, wants_sweep: bool) -> Result<(), CliError> {
    let raw = &cfg.raw;
    match raw.experiment {
        ExperimentKind::GenCorpus => {
            if raw.corpus.is_none() {
                return Err(config_err("gen-corpus requires a [corpus] block"));
            }
        }
        ExperimentKind::Coin => {
            if raw.corpus.is_none() || raw.coin.is_none() {
                return Err(config_err("coin requires [corpus] and [coin] blocks"));
            }
        }
        ExperimentKind::Stat => {
            if raw.corpus.is_none() || raw.stat.is_none() {
                return Err(config_err("stat requires [corpus] and [stat] blocks"));
            }
        }
        ExperimentKind::Palace => {
            if raw.aux.is_none() || raw.palace.is_none() {
                return Err(config_err("palace requires [aux] and [palace] blocks"));
            }
        }
    }
    if wants_sweep && raw.sweep.is_none() {
        return Err(config_err("sweep requires a [sweep] block in the stat config"));
    }

    if let Some(CorpusSpec::Synthetic { n, mean, std }) = &raw.corpus {
        if *n == 0 {
            return Err(config_err("corpus n must be >= 1"));
        }
        if !(*mean > 0.0) || !(*std >= 0.0) {
            return Err(config_err("corpus mean must be > 0 and std >= 0"));
        }
    }
    if let Some(AuxSpec::Synthetic {
        n,
        per_token,
        short_answer_tokens,
        long_answer_tokens,
        long_fraction,
        ..
    }) = &raw.aux
    {
        if *n == 0 {
            return Err(config_err("aux n must be >= 1"));
        }
        if !(*per_token > 0.0) {
            return Err(config_err("aux per_token must be > 0"));
        }
        for r in [short_answer_tokens, long_answer_tokens] {
            if r[0] == 0 || r[0] > r[1] {
                return Err(config_err(format!("bad answer token range {r:?}")));
            }
        }
        if !(0.0..=1.0).contains(long_fraction) {
            return Err(config_err("aux long_fraction outside [0, 1]"));
        }
    }

    if let Some(coin) = &raw.coin {
        if coin.attacks.is_empty() {
            return Err(config_err("coin attacks list is empty"));
        }
        for name in &coin.attacks {
            name.parse::<gauntlet_core::attacks::AttackKind>()
                .map_err(|e| config_err(format!("unknown attack \"{name}\": {e}")))?;
        }
        if coin.budget == 0 || coin.block_size == 0 || coin.embed_dim == 0 {
            return Err(config_err("coin budget, block_size and embed_dim must be >= 1"));
        }
        if !(1..=8).contains(&coin.inserted_tokens) {
            return Err(config_err("coin inserted_tokens outside 1..=8"));
        }
        check_fraction("coin probing_ratio", coin.probing_ratio)?;
        check_fraction("coin threshold_scale", coin.threshold_scale)?;
        if let Some(q) = coin.rule_quota {
            check_fraction("coin rule_quota", q)?;
        }
        if !(coin.aggregate_zmax > 0.0) {
            return Err(config_err("coin aggregate_zmax must be > 0"));
        }
    }

    if let Some(palace) = &raw.palace {
        if palace.epochs == 0 || palace.feature_dim == 0 {
            return Err(config_err("palace epochs and feature_dim must be >= 1"));
        }
        if !(palace.learning_rate > 0.0) || !(palace.tau > 0.0) {
            return Err(config_err("palace learning_rate and tau must be > 0"));
        }
        check_fraction("palace train_fraction", palace.train_fraction)?;
        if let Some(rate) = palace.rate {
            check_fraction("palace rate", rate)?;
        }
        if matches!(palace.mode, PalaceMode::Steering) && palace.candidates.is_empty() {
            return Err(config_err("steering mode needs trigger candidates"));
        }
    }

    if let Some(stat) = &raw.stat {
        let audit = crate::pipelines::stat::audit_config(stat);
        audit
            .validate()
            .map_err(|e| config_err(format!("stat parameters: {e}")))?;
        if stat.period == 0 {
            return Err(config_err("stat period must be >= 1"));
        }
    }
    if let Some(sweep) = &raw.sweep {
        match sweep {
            SweepParams::Inflation { amounts, period } => {
                if amounts.is_empty() || *period == 0 {
                    return Err(config_err("inflation sweep needs amounts and period >= 1"));
                }
                if amounts.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(config_err("sweep amounts must be strictly ascending"));
                }
            }
            SweepParams::Offset { offsets, period, .. } => {
                if offsets.is_empty() || *period == 0 {
                    return Err(config_err("offset sweep needs offsets and period >= 1"));
                }
                if offsets.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(config_err("sweep offsets must be strictly ascending"));
                }
            }
        }
    }

    for (label, as_written, resolved) in cfg.input_files() {
        if !resolved.is_file() {
            return Err(config_err(format!(
                "{label} file \"{as_written}\" not found at {}",
                resolved.display()
            )));
        }
    }
    Ok(())
}
