//! Run configuration: TOML schema, validation, and the config digest.
//!
//! A config file mirrors this module's structs section by section; every
//! field has a default, so an empty file is valid TOML and the CLI can run
//! mock loops with no file at all. Validation happens once up front and
//! reports all the keys a chosen mode is missing, so a bad config never
//! costs endpoint traffic.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::EndpointProfile;
use crate::hashing::sha256_hex;
use crate::selector::OverlapPolicy;

/// Whether a run retrains between rounds or replays recorded signals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    /// Signals come from live endpoints and, optionally, a trainer command
    /// executed between rounds.
    #[default]
    Online,
    /// Every signal is read from per-iteration files; no endpoints, no
    /// trainer.
    Offline,
}

/// Where per-sample losses come from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSource {
    /// Read `signals.loss_path` for each iteration.
    File,
    /// Score responses against the `logprobs_pre` and `logprobs_post`
    /// endpoint profiles.
    #[default]
    Logprobs,
    /// Consume the loss file the trainer command writes to `{signals_out}`.
    Trainer,
}

/// Where sample embeddings come from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    /// Read `signals.embeddings_path` for each iteration.
    File,
    /// Embed sample prompts through the `embeddings` profile.
    #[default]
    Endpoint,
}

/// Where quality scores come from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualitySource {
    /// Read `signals.quality_path` for each iteration.
    File,
    /// Rate each sample six ways through the `judge` profile.
    #[default]
    Judge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSettings {
    pub mode: RunMode,
    pub iterations: u32,
    /// Tag mixed into every request's cache identity; changing it re-rolls
    /// all sampled generations.
    pub seed_tag: String,
    /// Halt the loop once an iteration selects less than this fraction of
    /// the corpus.
    pub stop_floor: Option<f64>,
    /// Directory for the chat reply cache; unset disables caching.
    pub cache_dir: Option<PathBuf>,
    /// Hand the trainer a metadata-free copy of the dataset.
    pub strip_metadata: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            mode: RunMode::default(),
            iterations: 3,
            seed_tag: "middo".into(),
            stop_floor: None,
            cache_dir: None,
            strip_metadata: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionSettings {
    /// Neighbors per sample in the diversity signal.
    pub k: usize,
    pub m_complexity: f64,
    pub m_diversity: f64,
    pub m_quality: f64,
    pub overlap_policy: OverlapPolicy,
}

impl Default for SelectionSettings {
    fn default() -> Self {
        SelectionSettings {
            k: 2,
            m_complexity: 1.0,
            m_diversity: -1.0,
            m_quality: -1.5,
            overlap_policy: OverlapPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefinementSettings {
    /// Extra rewrite attempts after the first, per selected sample.
    pub retries: u32,
    /// Generate fresh responses for rewritten instructions; disable to keep
    /// the seed's response and context.
    pub regenerate_responses: bool,
}

impl Default for RefinementSettings {
    fn default() -> Self {
        RefinementSettings { retries: 1, regenerate_responses: true }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignalSettings {
    pub loss: LossSource,
    pub embeddings: EmbeddingSource,
    pub quality: QualitySource,
    /// JSONL of `{"id", "loss_pre", "loss_post"}`; `{iter}` expands to the
    /// iteration number.
    pub loss_path: Option<String>,
    /// JSONL of `{"id", "vector"}`; `{iter}` expands as above.
    pub embeddings_path: Option<String>,
    /// JSONL of `{"id", "sub_scores", "mean"?}`; `{iter}` expands as above.
    pub quality_path: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerSettings {
    /// Shell command template with `{dataset_in}` and `{signals_out}`
    /// placeholders, run between rounds in online mode.
    pub command: Option<String>,
}

/// Endpoint roles a run may need.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileRole {
    Synthesis,
    Judge,
    Embeddings,
    LogprobsPre,
    LogprobsPost,
}

impl ProfileRole {
    #[must_use]
    pub fn as_str(self) -> &'static str {
        match self {
            ProfileRole::Synthesis => "synthesis",
            ProfileRole::Judge => "judge",
            ProfileRole::Embeddings => "embeddings",
            ProfileRole::LogprobsPre => "logprobs_pre",
            ProfileRole::LogprobsPost => "logprobs_post",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Profiles {
    pub synthesis: Option<EndpointProfile>,
    pub judge: Option<EndpointProfile>,
    pub embeddings: Option<EndpointProfile>,
    pub logprobs_pre: Option<EndpointProfile>,
    pub logprobs_post: Option<EndpointProfile>,
}

impl Profiles {
    fn slot(&self, role: ProfileRole) -> &Option<EndpointProfile> {
        match role {
            ProfileRole::Synthesis => &self.synthesis,
            ProfileRole::Judge => &self.judge,
            ProfileRole::Embeddings => &self.embeddings,
            ProfileRole::LogprobsPre => &self.logprobs_pre,
            ProfileRole::LogprobsPost => &self.logprobs_post,
        }
    }

    fn slot_mut(&mut self, role: ProfileRole) -> &mut Option<EndpointProfile> {
        match role {
            ProfileRole::Synthesis => &mut self.synthesis,
            ProfileRole::Judge => &mut self.judge,
            ProfileRole::Embeddings => &mut self.embeddings,
            ProfileRole::LogprobsPre => &mut self.logprobs_pre,
            ProfileRole::LogprobsPost => &mut self.logprobs_post,
        }
    }

    /// The profile for `role`, or a config error naming the missing section.
    pub fn require(&self, role: ProfileRole) -> Result<&EndpointProfile> {
        self.slot(role)
            .as_ref()
            .ok_or_else(|| Error::Config(format!("missing [profiles.{}] section", role.as_str())))
    }
}

/// Complete run configuration, one section per concern.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub run: RunSettings,
    pub selection: SelectionSettings,
    pub refinement: RefinementSettings,
    pub signals: SignalSettings,
    pub trainer: TrainerSettings,
    pub profiles: Profiles,
}

/// Parses a config file, mapping syntax and unknown-key errors to config
/// errors with the path named.
pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let body = crate::fsio::read_to_string(path)?;
    toml::from_str(&body).map_err(|err| Error::Config(format!("{}: {err}", path.display())))
}

/// Expands the `{iter}` placeholder in a signal path template.
#[must_use]
pub fn resolve_iter_path(template: &str, iteration: u32) -> PathBuf {
    PathBuf::from(template.replace("{iter}", &iteration.to_string()))
}

impl PipelineConfig {
    /// Fills every profile slot a mock run would need, so `--mock` works
    /// without a config file. Existing profiles are left alone. The mock
    /// judge rates at temperature 0 like a real judge deployment would.
    pub fn apply_mock_defaults(&mut self) {
        let roles = [
            ProfileRole::Synthesis,
            ProfileRole::Judge,
            ProfileRole::Embeddings,
            ProfileRole::LogprobsPre,
            ProfileRole::LogprobsPost,
        ];
        for role in roles {
            let slot = self.profiles.slot_mut(role);
            if slot.is_none() {
                let mut profile =
                    EndpointProfile::new("mock://local", format!("mock-{}", role.as_str()));
                if role == ProfileRole::Judge {
                    profile.sampling.temperature = 0.0;
                }
                *slot = Some(profile);
            }
        }
    }

    /// Checks the whole config once, up front.
    pub fn validate(&self) -> Result<()> {
        if self.run.iterations == 0 {
            return Err(Error::Config("run.iterations must be at least 1".into()));
        }
        if self.selection.k == 0 {
            return Err(Error::Config("selection.k must be at least 1".into()));
        }
        if self.run.seed_tag.trim().is_empty() {
            return Err(Error::Config("run.seed_tag must not be empty".into()));
        }
        if let Some(floor) = self.run.stop_floor {
            if !(0.0..=1.0).contains(&floor) {
                return Err(Error::Config(format!("run.stop_floor {floor} is outside [0, 1]")));
            }
        }
        for m in [self.selection.m_complexity, self.selection.m_diversity, self.selection.m_quality] {
            if !m.is_finite() {
                return Err(Error::Config(format!("selection multiplier {m} is not finite")));
            }
        }

        if self.run.mode == RunMode::Offline {
            self.validate_offline()?;
        }

        if self.signals.loss == LossSource::File && self.signals.loss_path.is_none() {
            return Err(Error::Config("signals.loss = \"file\" requires signals.loss_path".into()));
        }
        if self.signals.embeddings == EmbeddingSource::File && self.signals.embeddings_path.is_none() {
            return Err(Error::Config(
                "signals.embeddings = \"file\" requires signals.embeddings_path".into(),
            ));
        }
        if self.signals.quality == QualitySource::File && self.signals.quality_path.is_none() {
            return Err(Error::Config("signals.quality = \"file\" requires signals.quality_path".into()));
        }
        if self.run.iterations > 1 {
            self.check_iter_placeholders()?;
        }

        if self.signals.loss == LossSource::Trainer && self.trainer.command.is_none() {
            return Err(Error::Config(
                "signals.loss = \"trainer\" requires a trainer.command template".into(),
            ));
        }
        if let Some(command) = &self.trainer.command {
            for placeholder in ["{dataset_in}", "{signals_out}"] {
                if !command.contains(placeholder) {
                    return Err(Error::Config(format!(
                        "trainer.command is missing the {placeholder} placeholder"
                    )));
                }
            }
        }

        self.profiles.require(ProfileRole::Synthesis)?.validate("synthesis")?;
        if self.signals.quality == QualitySource::Judge {
            self.profiles.require(ProfileRole::Judge)?.validate("judge")?;
        }
        if self.signals.embeddings == EmbeddingSource::Endpoint {
            self.profiles.require(ProfileRole::Embeddings)?.validate("embeddings")?;
        }
        if self.signals.loss == LossSource::Logprobs {
            self.profiles.require(ProfileRole::LogprobsPre)?.validate("logprobs_pre")?;
            self.profiles.require(ProfileRole::LogprobsPost)?.validate("logprobs_post")?;
        }
        Ok(())
    }

    fn validate_offline(&self) -> Result<()> {
        let mut wrong_sources = Vec::new();
        if self.signals.loss != LossSource::File {
            wrong_sources.push("signals.loss");
        }
        if self.signals.embeddings != EmbeddingSource::File {
            wrong_sources.push("signals.embeddings");
        }
        if self.signals.quality != QualitySource::File {
            wrong_sources.push("signals.quality");
        }
        if !wrong_sources.is_empty() {
            return Err(Error::Config(format!(
                "offline mode reads every signal from files; set these to \"file\": {}",
                wrong_sources.join(", ")
            )));
        }
        let mut missing = Vec::new();
        if self.signals.loss_path.is_none() {
            missing.push("signals.loss_path");
        }
        if self.signals.embeddings_path.is_none() {
            missing.push("signals.embeddings_path");
        }
        if self.signals.quality_path.is_none() {
            missing.push("signals.quality_path");
        }
        if !missing.is_empty() {
            return Err(Error::Config(format!(
                "offline mode requires per-iteration signal paths; missing: {}",
                missing.join(", ")
            )));
        }
        Ok(())
    }

    fn check_iter_placeholders(&self) -> Result<()> {
        let templates = [
            ("signals.loss_path", &self.signals.loss_path),
            ("signals.embeddings_path", &self.signals.embeddings_path),
            ("signals.quality_path", &self.signals.quality_path),
        ];
        for (key, template) in templates {
            if let Some(template) = template {
                if !template.contains("{iter}") {
                    return Err(Error::Config(format!(
                        "{key} must contain the {{iter}} placeholder when run.iterations > 1"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Content digest of everything that shapes a run's outputs. Local
    /// conveniences (the cache directory) are excluded, so moving a cache
    /// does not change the digest.
    #[must_use]
    pub fn digest(&self) -> String {
        let mut view = self.clone();
        view.run.cache_dir = None;
        let body = serde_json::to_string(&view).expect("config serializes");
        sha256_hex(body.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mock_ready(mut config: PipelineConfig) -> PipelineConfig {
        config.apply_mock_defaults();
        config
    }

    #[test]
    fn an_empty_file_parses_to_defaults_and_validates_once_mocked() {
        let config: PipelineConfig = toml::from_str("").unwrap();
        assert_eq!(config, PipelineConfig::default());
        assert_eq!(config.run.iterations, 3);
        assert_eq!(config.selection.k, 2);
        assert_eq!(config.selection.m_complexity, 1.0);
        assert_eq!(config.selection.m_diversity, -1.0);
        assert_eq!(config.selection.m_quality, -1.5);
        assert_eq!(config.refinement.retries, 1);

        // Without profiles the default endpoint sources cannot run.
        assert!(config.validate().is_err());
        assert!(mock_ready(config).validate().is_ok());
    }

    #[test]
    fn mock_defaults_fill_only_missing_profiles() {
        let mut config = PipelineConfig::default();
        let mut custom = EndpointProfile::new("http://gpu0:8000/v1", "big-model");
        custom.sampling.temperature = 0.3;
        config.profiles.synthesis = Some(custom.clone());
        config.apply_mock_defaults();
        assert_eq!(config.profiles.synthesis, Some(custom));
        let judge = config.profiles.judge.unwrap();
        assert_eq!(judge.model, "mock-judge");
        assert_eq!(judge.sampling.temperature, 0.0);
    }

    #[test]
    fn unknown_keys_are_rejected_with_the_key_named() {
        let err = toml::from_str::<PipelineConfig>("[run]\niteraitons = 3\n").unwrap_err();
        assert!(err.to_string().contains("iteraitons"), "{err}");
    }

    #[test]
    fn offline_mode_lists_every_missing_signal_path() {
        let mut config = PipelineConfig::default();
        config.run.mode = RunMode::Offline;
        config.signals.loss = LossSource::File;
        config.signals.embeddings = EmbeddingSource::File;
        config.signals.quality = QualitySource::File;
        config.apply_mock_defaults();
        let err = config.validate().unwrap_err().to_string();
        for key in ["signals.loss_path", "signals.embeddings_path", "signals.quality_path"] {
            assert!(err.contains(key), "{err}");
        }
    }

    #[test]
    fn offline_mode_rejects_endpoint_sources() {
        let mut config = mock_ready(PipelineConfig::default());
        config.run.mode = RunMode::Offline;
        let err = config.validate().unwrap_err().to_string();
        assert!(err.contains("signals.loss"), "{err}");
        assert!(err.contains("\"file\""), "{err}");
    }

    #[test]
    fn multi_iteration_file_paths_need_the_iter_placeholder() {
        let mut config = mock_ready(PipelineConfig::default());
        config.signals.loss = LossSource::File;
        config.signals.loss_path = Some("signals/loss.jsonl".into());
        let err = config.validate().unwrap_err().to_string();
        assert!(err.contains("{iter}"), "{err}");

        config.signals.loss_path = Some("signals/iter{iter}/loss.jsonl".into());
        assert!(config.validate().is_ok());

        config.run.iterations = 1;
        config.signals.loss_path = Some("signals/loss.jsonl".into());
        assert!(config.validate().is_ok());
    }

    #[test]
    fn trainer_command_requirements_are_enforced() {
        let mut config = mock_ready(PipelineConfig::default());
        config.signals.loss = LossSource::Trainer;
        let err = config.validate().unwrap_err().to_string();
        assert!(err.contains("trainer.command"), "{err}");

        config.trainer.command = Some("train --in {dataset_in}".into());
        let err = config.validate().unwrap_err().to_string();
        assert!(err.contains("{signals_out}"), "{err}");

        config.trainer.command = Some("train --in {dataset_in} --out {signals_out}".into());
        assert!(config.validate().is_ok());
    }

    #[test]
    fn endpoint_sources_require_their_profiles() {
        let mut config = PipelineConfig::default();
        config.profiles.synthesis = Some(EndpointProfile::new("http://host/v1", "m"));
        let err = config.validate().unwrap_err().to_string();
        assert!(err.contains("profiles."), "{err}");

        config.signals.quality = QualitySource::File;
        config.signals.quality_path = Some("q-{iter}.jsonl".into());
        config.signals.embeddings = EmbeddingSource::File;
        config.signals.embeddings_path = Some("e-{iter}.jsonl".into());
        config.signals.loss = LossSource::File;
        config.signals.loss_path = Some("l-{iter}.jsonl".into());
        assert!(config.validate().is_ok());
    }

    #[test]
    fn bounds_are_checked() {
        let mut config = mock_ready(PipelineConfig::default());
        config.run.iterations = 0;
        assert!(config.validate().is_err());

        let mut config = mock_ready(PipelineConfig::default());
        config.run.stop_floor = Some(1.5);
        assert!(config.validate().is_err());

        let mut config = mock_ready(PipelineConfig::default());
        config.selection.k = 0;
        assert!(config.validate().is_err());

        let mut config = mock_ready(PipelineConfig::default());
        config.selection.m_quality = f64::NAN;
        assert!(config.validate().is_err());
    }

    #[test]
    fn digest_ignores_the_cache_dir_but_not_behavior() {
        let base = PipelineConfig::default();
        let mut cached = base.clone();
        cached.run.cache_dir = Some("/tmp/elsewhere".into());
        assert_eq!(base.digest(), cached.digest());

        let mut retuned = base.clone();
        retuned.selection.k = 3;
        assert_ne!(base.digest(), retuned.digest());

        let mut reseeded = base.clone();
        reseeded.run.seed_tag = "other".into();
        assert_ne!(base.digest(), reseeded.digest());
    }

    #[test]
    fn a_full_config_file_round_trips() {
        let text = r#"
[run]
mode = "online"
iterations = 2
seed_tag = "exp7"
stop_floor = 0.01
cache_dir = ".cache/middo"
strip_metadata = true

[selection]
k = 3
m_complexity = 0.5
m_diversity = -0.5
m_quality = -1.0
overlap_policy = "prefer_quality_rewrite"

[refinement]
retries = 2
regenerate_responses = false

[signals]
loss = "trainer"
embeddings = "endpoint"
quality = "judge"

[trainer]
command = "python train.py --data {dataset_in} --loss-out {signals_out}"

[profiles.synthesis]
base_url = "http://gpu0:8000/v1"
model = "synth-72b"
api_key_env = "SYNTH_KEY"
timeout_secs = 300

[profiles.judge]
base_url = "http://gpu1:8000/v1"
model = "judge-72b"

[profiles.embeddings]
base_url = "http://gpu2:8000/v1"
model = "embed-large"

[profiles.logprobs_pre]
base_url = "http://gpu3:8000/v1"
model = "student-pre"

[profiles.logprobs_post]
base_url = "http://gpu3:8001/v1"
model = "student-post"
"#;
        let config: PipelineConfig = toml::from_str(text).unwrap();
        assert!(config.validate().is_ok());
        assert_eq!(config.run.iterations, 2);
        assert_eq!(config.selection.overlap_policy, OverlapPolicy::PreferQualityRewrite);
        assert_eq!(config.profiles.synthesis.as_ref().unwrap().api_key_env.as_deref(), Some("SYNTH_KEY"));
        assert_eq!(config.profiles.synthesis.as_ref().unwrap().timeout_secs, 300);

        let json = serde_json::to_string(&config).unwrap();
        let back: PipelineConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn iter_paths_expand_the_placeholder() {
        assert_eq!(
            resolve_iter_path("signals/iter{iter}/loss.jsonl", 2),
            PathBuf::from("signals/iter2/loss.jsonl")
        );
        assert_eq!(resolve_iter_path("fixed.jsonl", 7), PathBuf::from("fixed.jsonl"));
    }
}
