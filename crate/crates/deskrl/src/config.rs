//! Run configuration: a strict key-value (TOML) file whose sections mirror
//! the trainer, reward, policy, prompt, and dataset settings. Unknown keys
//! are rejected by name; command-line flags override file values.

use crate::dataset::{self, OpMix, Question};
use crate::policy::{PolicyParams, Vocab};
use crate::rewards::{FormatComposition, RewardConfig, RewardMode, DEFAULT_ACTION_KEYWORDS};
use crate::trainer::{FiltersEnabled, KlKind, KlSchedule, TrainerConfig};
use crate::verifier::PromptTemplate;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file `{0}` not found")]
    MissingFile(PathBuf),
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn default_workers() -> usize {
    0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[derive(Default)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 means available parallelism.
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub prompt: PromptSection,
    #[serde(default)]
    pub rewards: RewardsSection,
    #[serde(default)]
    pub trainer: TrainerSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<GenerateSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSection {
    pub count: usize,
    pub low: i64,
    pub high: i64,
    #[serde(default = "default_ops")]
    pub ops: OpMix,
}

fn default_ops() -> OpMix {
    OpMix::Mixed
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VocabSpec {
    Preset(String),
    Tokens(Vec<String>),
}

impl Default for VocabSpec {
    fn default() -> Self {
        VocabSpec::Preset("standard".to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    Zero,
    Uniform,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    #[serde(default = "default_order")]
    pub context_order: usize,
    #[serde(default)]
    pub vocab: VocabSpec,
    #[serde(default = "default_init")]
    pub init: InitKind,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    /// Positions per length-bias bucket; 0 disables the bias.
    #[serde(default)]
    pub length_bias_bucket_len: usize,
    #[serde(default)]
    pub length_bias_buckets: usize,
}

fn default_order() -> usize {
    1
}

fn default_init() -> InitKind {
    InitKind::Zero
}

fn default_init_scale() -> f64 {
    0.1
}

impl Default for PolicySection {
    fn default() -> Self {
        PolicySection {
            context_order: 1,
            vocab: VocabSpec::default(),
            init: InitKind::Zero,
            init_scale: default_init_scale(),
            length_bias_bucket_len: 0,
            length_bias_buckets: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSection {
    #[serde(default = "default_template")]
    pub template: String,
}

fn default_template() -> String {
    "chat".to_string()
}

impl Default for PromptSection {
    fn default() -> Self {
        PromptSection {
            template: default_template(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardsSection {
    #[serde(default = "default_mode")]
    pub mode: RewardMode,
    /// 0 means derive from the largest scheduled max length.
    #[serde(default)]
    pub l_max: usize,
    #[serde(default = "default_a_max")]
    pub a_max: usize,
    #[serde(default = "default_keywords")]
    pub action_keywords: Vec<String>,
    #[serde(default)]
    pub format_required: bool,
    /// 0 keeps the format gate; a positive value switches to an additive
    /// format bonus of that size.
    #[serde(default)]
    pub format_bonus: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_correct: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_incorrect: Option<f64>,
}

fn default_mode() -> RewardMode {
    RewardMode::OutcomeOnly
}

fn default_a_max() -> usize {
    20
}

fn default_keywords() -> Vec<String> {
    DEFAULT_ACTION_KEYWORDS
        .iter()
        .map(|s| s.to_string())
        .collect()
}

impl Default for RewardsSection {
    fn default() -> Self {
        RewardsSection {
            mode: default_mode(),
            l_max: 0,
            a_max: default_a_max(),
            action_keywords: default_keywords(),
            format_required: false,
            format_bonus: 0.0,
            reward_correct: None,
            reward_incorrect: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KlSection {
    #[serde(default = "default_kl_kind")]
    pub kind: KlKind,
    #[serde(default = "default_kl_start")]
    pub start: f64,
    #[serde(default)]
    pub end: f64,
}

fn default_kl_kind() -> KlKind {
    KlKind::Zero
}

fn default_kl_start() -> f64 {
    1e-3
}

impl Default for KlSection {
    fn default() -> Self {
        KlSection {
            kind: KlKind::Zero,
            start: default_kl_start(),
            end: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerSection {
    #[serde(default = "default_tbs")]
    pub tbs: usize,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// 0 means on-policy (mini_batch = tbs).
    #[serde(default)]
    pub mini_batch: usize,
    #[serde(default = "default_steps")]
    pub total_steps: usize,
    #[serde(default = "default_max_len")]
    pub max_len: Vec<(usize, usize)>,
    /// 0 means never replace the reference.
    #[serde(default)]
    pub ref_replace_every: usize,
    /// 0 means no parameter snapshots during the run.
    #[serde(default)]
    pub snapshot_every: usize,
    #[serde(default)]
    pub entropy_bonus: f64,
    #[serde(default)]
    pub filters: FiltersEnabled,
    #[serde(default)]
    pub kl: KlSection,
}

fn default_tbs() -> usize {
    32
}

fn default_n() -> usize {
    8
}

fn default_temperature() -> f64 {
    1.0
}

fn default_lr() -> f64 {
    0.1
}

fn default_steps() -> usize {
    100
}

fn default_max_len() -> Vec<(usize, usize)> {
    vec![(0, 64)]
}

impl Default for TrainerSection {
    fn default() -> Self {
        TrainerSection {
            tbs: default_tbs(),
            n: default_n(),
            temperature: default_temperature(),
            learning_rate: default_lr(),
            mini_batch: 0,
            total_steps: default_steps(),
            max_len: default_max_len(),
            ref_replace_every: 0,
            snapshot_every: 0,
            entropy_bonus: 0.0,
            filters: FiltersEnabled::default(),
            kl: KlSection::default(),
        }
    }
}

impl RunConfig {
    /// Loads and strictly parses a config file. Unknown keys and type
    /// mismatches fail with the offending name and location.
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        if !path.exists() {
            return Err(ConfigError::MissingFile(path.to_path_buf()));
        }
        let raw = std::fs::read_to_string(path)?;
        toml::from_str(&raw).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn template(&self) -> Result<PromptTemplate, ConfigError> {
        PromptTemplate::by_name(&self.prompt.template).ok_or_else(|| {
            ConfigError::Invalid(format!(
                "unknown prompt template `{}` (expected short, long, or chat)",
                self.prompt.template
            ))
        })
    }

    pub fn vocab(&self) -> Result<Vocab, ConfigError> {
        match &self.policy.vocab {
            VocabSpec::Preset(name) if name == "standard" => Ok(Vocab::standard()),
            VocabSpec::Preset(name) => Err(ConfigError::Invalid(format!(
                "unknown vocab preset `{name}`"
            ))),
            VocabSpec::Tokens(tokens) => {
                Vocab::new(tokens.clone()).map_err(|e| ConfigError::Invalid(e.to_string()))
            }
        }
    }

    /// Builds the initial policy parameters.
    pub fn build_policy(&self) -> Result<PolicyParams, ConfigError> {
        let vocab = self.vocab()?;
        if PolicyParams::table_entries(&vocab, self.policy.context_order).is_none() {
            return Err(ConfigError::Invalid(format!(
                "context_order {} with a {}-token vocabulary needs an oversized logit table",
                self.policy.context_order,
                vocab.len()
            )));
        }
        let mut params = PolicyParams::new(vocab, self.policy.context_order);
        if self.policy.length_bias_bucket_len > 0 && self.policy.length_bias_buckets > 0 {
            params = params.with_length_bias(
                self.policy.length_bias_bucket_len,
                self.policy.length_bias_buckets,
            );
        }
        if self.policy.init == InitKind::Uniform {
            params.randomize(self.policy.init_scale, self.seed ^ 0x9e37_79b9_7f4a_7c15);
        }
        Ok(params)
    }

    /// Builds the reward configuration, deriving the length denominator from
    /// the schedule when not set explicitly.
    pub fn build_rewards(&self) -> Result<RewardConfig, ConfigError> {
        let l_max = if self.rewards.l_max > 0 {
            self.rewards.l_max
        } else {
            self.trainer
                .max_len
                .iter()
                .map(|&(_, len)| len)
                .max()
                .unwrap_or(64)
        };
        let mut cfg = match self.rewards.mode {
            RewardMode::OutcomeOnly => RewardConfig::outcome(l_max),
            RewardMode::OutcomeFormat => RewardConfig::outcome_format(l_max, self.template()?),
            RewardMode::Rrl => RewardConfig::rrl(l_max),
            RewardMode::Rra => RewardConfig::rra(l_max, self.rewards.a_max),
        };
        cfg.a_max = self.rewards.a_max;
        cfg.action_keywords = self.rewards.action_keywords.clone();
        cfg.format_required = self.rewards.format_required || cfg.format_required;
        cfg.template = self.template()?;
        if self.rewards.format_bonus > 0.0 {
            cfg.format_composition = FormatComposition::Additive {
                bonus: self.rewards.format_bonus,
            };
        }
        if let Some(v) = self.rewards.reward_correct {
            cfg.correctness_values.0 = v;
        }
        if let Some(v) = self.rewards.reward_incorrect {
            cfg.correctness_values.1 = v;
        }
        if cfg.a_max == 0 || cfg.l_max == 0 {
            return Err(ConfigError::Invalid(
                "l_max and a_max must be positive".into(),
            ));
        }
        Ok(cfg)
    }

    pub fn build_trainer(&self) -> Result<TrainerConfig, ConfigError> {
        let t = &self.trainer;
        let kl = KlSchedule {
            kind: t.kl.kind,
            start: t.kl.start,
            end: t.kl.end,
            total_steps: t.total_steps,
        };
        let cfg = TrainerConfig {
            tbs: t.tbs,
            n_rollouts: t.n,
            temperature: t.temperature,
            learning_rate: t.learning_rate,
            mini_batch: if t.mini_batch == 0 {
                t.tbs
            } else {
                t.mini_batch
            },
            kl,
            max_len_schedule: t.max_len.clone(),
            filters: t.filters,
            reward: self.build_rewards()?,
            ref_replace_every: if t.ref_replace_every == 0 {
                None
            } else {
                Some(t.ref_replace_every)
            },
            snapshot_every: if t.snapshot_every == 0 {
                None
            } else {
                Some(t.snapshot_every)
            },
            entropy_bonus: t.entropy_bonus,
            total_steps: t.total_steps,
            seed: self.seed,
        };
        cfg.validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    /// Loads or generates the configured dataset.
    pub fn build_dataset(&self) -> Result<Vec<Question>, ConfigError> {
        match (&self.dataset.path, &self.dataset.generate) {
            (Some(path), None) => {
                dataset::load_dataset(path).map_err(|e| ConfigError::Invalid(e.to_string()))
            }
            (None, Some(g)) => {
                dataset::gen_arithmetic_tasks(g.count, g.low, g.high, g.ops, self.seed)
                    .map_err(|e| ConfigError::Invalid(e.to_string()))
            }
            (None, None) => Err(ConfigError::Invalid(
                "dataset section needs either `path` or a `generate` table".into(),
            )),
            (Some(_), Some(_)) => Err(ConfigError::Invalid(
                "dataset `path` and `generate` are mutually exclusive".into(),
            )),
        }
    }
}
