//! Pipeline configuration file (TOML, `version = 1`).
//!
//! Every section is optional. Sub-model seeds are derived from the top-level
//! `seed`; `seed` fields inside sections are ignored.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use topicsteer_core::corpus::VocabOptions;
use topicsteer_core::discriminator::DiscConfig;
use topicsteer_core::lm::LmConfig;
use topicsteer_core::metrics::MetricSettings;
use topicsteer_core::rng::{derive_seed, tag};
use topicsteer_core::steering::SteeringConfig;
use topicsteer_core::synth::{SynthConfig, DEFAULT_PREFIXES};
use topicsteer_core::topic_model::{TopicModelConfig, Variant};

use crate::error::{StageError, StageResult};
use crate::io::{self, CorpusFormat};

pub const CONFIG_VERSION: u32 = 1;

/// Small English function-word list; covers the synthetic generator's shared words.
pub const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "about", "after", "all", "also", "an", "and", "any", "are", "as", "at", "be", "been", "but", "by", "can",
    "could", "did", "do", "does", "for", "from", "had", "has", "have", "he", "her", "him", "his", "how", "i", "if",
    "in", "into", "is", "it", "its", "me", "my", "no", "not", "of", "on", "or", "our", "she", "so", "than", "that",
    "the", "their", "them", "then", "there", "these", "they", "this", "to", "up", "us", "was", "we", "were", "what",
    "when", "which", "who", "will", "with", "would", "you", "your",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    /// Defaults to the workspace's `corpus.jsonl` (as written by `synth`).
    pub path: Option<PathBuf>,
    pub format: CorpusFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabSection {
    pub min_doc_freq: usize,
    pub lowercase: bool,
    /// `None` uses [`DEFAULT_STOPWORDS`].
    pub stopwords: Option<Vec<String>>,
}

impl Default for VocabSection {
    fn default() -> Self {
        Self { min_doc_freq: 1, lowercase: true, stopwords: None }
    }
}

impl VocabSection {
    pub fn options(&self) -> VocabOptions {
        let stopwords = match &self.stopwords {
            Some(s) => s.iter().cloned().collect(),
            None => DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect(),
        };
        VocabOptions { min_doc_freq: self.min_doc_freq, stopwords, lowercase: self.lowercase }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopicSection {
    pub k: usize,
    pub variant: Variant,
    pub hidden_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub prior_alpha: Option<f64>,
    pub sweep_variants: Vec<Variant>,
    pub sweep_ks: Vec<usize>,
    /// Most frequent topics kept as discriminator classes (capped at K).
    pub retain_top: usize,
}

impl Default for TopicSection {
    fn default() -> Self {
        let t = TopicModelConfig::new(3, Variant::Contextual);
        Self {
            k: t.k,
            variant: t.variant,
            hidden_dim: t.hidden_dim,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            prior_alpha: None,
            sweep_variants: Variant::ALL.to_vec(),
            sweep_ks: (3..=10).collect(),
            retain_top: 10,
        }
    }
}

impl TopicSection {
    pub fn model_config(&self, seed: u64) -> TopicModelConfig {
        TopicModelConfig {
            k: self.k,
            variant: self.variant,
            hidden_dim: self.hidden_dim,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            prior_alpha: self.prior_alpha,
            seed,
        }
    }
}

/// A `(step_size, gm_scale)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Strength {
    pub step_size: f64,
    pub gm_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSection {
    pub prefixes: Vec<String>,
    pub samples: usize,
    pub weak: Strength,
    pub strong: Strength,
}

impl Default for GenerationSection {
    fn default() -> Self {
        Self {
            prefixes: DEFAULT_PREFIXES.iter().map(|s| s.to_string()).collect(),
            samples: 3,
            weak: Strength { step_size: 0.05, gm_scale: 0.9 },
            strong: Strength { step_size: 0.3, gm_scale: 0.95 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    pub seed: u64,
    pub workspace: Option<PathBuf>,
    pub corpus: CorpusSection,
    pub synth: SynthConfig,
    pub vocab: VocabSection,
    pub lm: LmConfig,
    pub topic_model: TopicSection,
    pub metrics: MetricSettings,
    pub discriminator: DiscConfig,
    pub steering: SteeringConfig,
    pub generation: GenerationSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            workspace: None,
            corpus: CorpusSection::default(),
            synth: SynthConfig::default(),
            vocab: VocabSection::default(),
            lm: LmConfig::default(),
            topic_model: TopicSection::default(),
            metrics: MetricSettings::default(),
            discriminator: DiscConfig::default(),
            steering: SteeringConfig::default(),
            generation: GenerationSection::default(),
        }
    }
}

const STAGE: &str = "config";

impl PipelineConfig {
    pub fn load(path: &Path) -> StageResult<Self> {
        let text = io::read_text(path).map_err(|e| match e {
            io::IoError::NotFound(p) => StageError::missing(STAGE, p),
            e => StageError::validation(STAGE, e.to_string()),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> StageResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| StageError::validation(STAGE, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> StageResult<()> {
        let bad = |m: String| Err(StageError::validation(STAGE, m));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version));
        }
        let core = |r: topicsteer_core::Result<()>| r.map_err(|e| StageError::validation(STAGE, e.to_string()));
        core(self.synth.validate())?;
        core(self.lm_config(topicsteer_core::corpus::NUM_RESERVED + 1).validate())?;
        core(self.topic_model.model_config(0).validate())?;
        core(self.discriminator.validate())?;
        core(self.steering.validate())?;
        let t = &self.topic_model;
        if t.sweep_ks.iter().any(|&k| k < 2) {
            return bad(format!("sweep_ks must all be >= 2, got {:?}", t.sweep_ks));
        }
        if !t.sweep_ks.is_empty() && t.sweep_variants.is_empty() {
            return bad("sweep_variants is empty".into());
        }
        if t.retain_top < 2 {
            return bad(format!("retain_top must be >= 2, got {}", t.retain_top));
        }
        let m = &self.metrics;
        if m.npmi_top_n < 2 || m.alpha_top_n < 2 || m.rbo_top_n < 1 || !(m.rbo_p > 0.0 && m.rbo_p < 1.0) {
            return bad(format!("invalid metric settings {m:?}"));
        }
        let g = &self.generation;
        if g.prefixes.is_empty() || g.prefixes.iter().any(|p| p.trim().is_empty()) {
            return bad("generation needs at least one non-empty prefix".into());
        }
        if g.samples == 0 {
            return bad("generation.samples must be >= 1".into());
        }
        for s in [g.weak, g.strong] {
            core(self.steering_with(s).validate())?;
        }
        Ok(())
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, &[tag(stage)])
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig { seed: self.stage_seed("synth"), ..self.synth.clone() }
    }

    pub fn lm_config(&self, vocab_size: usize) -> LmConfig {
        LmConfig { vocab_size, seed: self.stage_seed("lm"), ..self.lm.clone() }
    }

    pub fn topic_config(&self) -> TopicModelConfig {
        self.topic_model.model_config(self.stage_seed("topic-model"))
    }

    pub fn disc_config(&self) -> DiscConfig {
        DiscConfig { seed: self.stage_seed("discriminator"), ..self.discriminator.clone() }
    }

    pub fn steering_config(&self) -> SteeringConfig {
        SteeringConfig { seed: self.stage_seed("generate"), ..self.steering.clone() }
    }

    pub fn steering_with(&self, s: Strength) -> SteeringConfig {
        SteeringConfig { step_size: s.step_size, gm_scale: s.gm_scale, ..self.steering_config() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use topicsteer_core::synth::SHARED_WORDS;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        assert_eq!(PipelineConfig::parse(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(PipelineConfig::parse("").unwrap(), cfg);
    }

    #[test]
    fn partial_file_and_errors() {
        let cfg = PipelineConfig::parse("seed = 7\n[steering]\nstep_size = 0.1\n[topic_model]\nk = 4\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.steering.step_size, 0.1);
        assert_eq!(cfg.topic_model.k, 4);
        assert!(PipelineConfig::parse("version = 2").is_err());
        assert!(PipelineConfig::parse("[topic_model]\nk = 1").is_err());
        assert!(PipelineConfig::parse("[steering]\ntemperature = 0.0").is_err());
        assert!(PipelineConfig::parse("bogus = 1").is_err());
        let e = PipelineConfig::parse("[generation]\nprefixes = []").unwrap_err();
        assert_eq!(e.exit_code(), 1);
    }

    #[test]
    fn default_stopwords_cover_synthetic_shared_words() {
        for w in &SHARED_WORDS {
            assert!(DEFAULT_STOPWORDS.contains(w), "{w}");
        }
    }
}
