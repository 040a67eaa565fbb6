//! Experiment configuration: a TOML file, then flags on top. Every default
//! reproduces the reference setup at full scale.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use scol_learn::attack::{AttackTrainConfig, PrivacyConfig, Sketch};
use scol_learn::data::{SplitSpec, SKEW_RATIO};
use scol_learn::{Method, ModelConfig, ScenarioConfig, SyntheticParams, TrainConfig};
use scol_mpc::{DealerMode, FixedPointCodec};

use crate::error::{CliError, Result};

/// Environment variable overriding the MNIST directory.
pub const DATA_DIR_ENV: &str = "SCOL_DATA_DIR";
pub const DEFAULT_DATA_DIR: &str = "data/mnist";
/// Split scale used for secure runs unless one is configured.
pub const SECURE_SCALE: f64 = 0.1;

/// A method name as it appears in configs and on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MethodName(pub Method);

impl TryFrom<String> for MethodName {
    type Error = String;
    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse().map(MethodName).map_err(|e: scol_learn::LearnError| e.to_string())
    }
}

impl From<MethodName> for String {
    fn from(m: MethodName) -> String {
        m.0.name().to_string()
    }
}

impl FromStr for MethodName {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        MethodName::try_from(s.to_string())
    }
}

impl fmt::Display for MethodName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.0.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Dataset {
    Mnist,
    Synthetic,
    Fraud,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dealer {
    Offline,
    Streaming,
    OnDemand,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    /// Sizes of the global, party 1, party 2 and test partitions. Empty
    /// means the dataset's own sizes.
    pub sizes: Vec<usize>,
    pub skew_ratio: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            sizes: Vec::new(),
            skew_ratio: SKEW_RATIO,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub informative: usize,
    pub class_sep: f64,
    pub ambient_noise: f64,
    pub label_noise: f64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        let p = SyntheticParams::default();
        SyntheticSection {
            informative: p.informative,
            class_sep: p.class_sep,
            ambient_noise: p.ambient_noise,
            label_noise: p.label_noise,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub methods: Vec<MethodName>,
    pub share_fraction: f64,
    pub secure: bool,
    pub mixed: bool,
    pub dealer: Dealer,
    pub dealer_buffer: usize,
    pub frac_digits: u32,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        ScenarioSection {
            methods: Method::ALL.into_iter().map(MethodName).collect(),
            share_fraction: 0.3,
            secure: false,
            mixed: false,
            dealer: Dealer::Streaming,
            dealer_buffer: 64,
            frac_digits: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub l2: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            lr: t.lr,
            l2: t.l2,
            epochs: t.epochs,
            batch_size: t.batch_size,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
    pub fe_layers: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            hidden: vec![64, 64, 64],
            fe_layers: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub methods: Vec<MethodName>,
    /// Rows per party of the synthetic benchmark.
    pub party_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub sketch_target: usize,
}

impl Default for AttackSection {
    fn default() -> Self {
        let a = AttackTrainConfig::default();
        AttackSection {
            methods: [Method::Ctfe, Method::Sfe, Method::Ltfe].into_iter().map(MethodName).collect(),
            party_size: 2000,
            lr: a.lr as f64,
            epochs: a.epochs,
            batch_size: a.batch_size,
            sketch_target: Sketch::default().target,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: Dataset,
    pub data_dir: Option<PathBuf>,
    pub seeds: Vec<u64>,
    /// Uniform shrink factor of all partitions; unset means 1, or 0.1 when
    /// training securely.
    pub scale: Option<f64>,
    pub out_dir: PathBuf,
    pub split: SplitSection,
    pub synthetic: SyntheticSection,
    pub scenario: ScenarioSection,
    pub train: TrainSection,
    pub model: ModelSection,
    pub attack: AttackSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: Dataset::Mnist,
            data_dir: None,
            seeds: vec![1],
            scale: None,
            out_dir: PathBuf::from("out"),
            split: SplitSection::default(),
            synthetic: SyntheticSection::default(),
            scenario: ScenarioSection::default(),
            train: TrainSection::default(),
            model: ModelSection::default(),
            attack: AttackSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn effective_scale(&self) -> f64 {
        match self.scale {
            Some(s) => s,
            None if self.scenario.secure && self.dataset != Dataset::Fraud => SECURE_SCALE,
            None => 1.0,
        }
    }

    /// Flag, then environment, then config file, then the default.
    pub fn resolve_data_dir(&self, env: Option<String>) -> PathBuf {
        match (&self.data_dir, env) {
            (Some(d), _) => d.clone(),
            (None, Some(e)) if !e.is_empty() => PathBuf::from(e),
            _ => PathBuf::from(DEFAULT_DATA_DIR),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.seeds.is_empty() {
            return bad("at least one seed is needed".into());
        }
        let scale = self.effective_scale();
        if !(scale > 0.0 && scale <= 1.0) {
            return bad(format!("scale {scale} outside (0, 1]"));
        }
        if self.dataset == Dataset::Fraud && scale != 1.0 {
            return bad("the fraud dataset has fixed sizes and cannot be scaled".into());
        }
        if !self.split.sizes.is_empty() && self.split.sizes.len() != 4 {
            return bad(format!("split.sizes needs 4 entries, got {}", self.split.sizes.len()));
        }
        if self.split.skew_ratio.is_nan() || self.split.skew_ratio <= 0.0 {
            return bad(format!("skew ratio {} must be positive", self.split.skew_ratio));
        }
        if self.scenario.methods.is_empty() {
            return bad("no methods selected".into());
        }
        if self.scenario.frac_digits == 0 || self.scenario.frac_digits > 9 {
            return bad(format!("frac_digits {} outside 1..=9", self.scenario.frac_digits));
        }
        if self.attack.party_size < 4 {
            return bad("attack.party_size must be at least 4".into());
        }
        if self.attack.methods.iter().any(|m| m.0 == Method::Nc) {
            return bad("the non-collaborative baseline cannot be attacked".into());
        }
        let (features, classes) = self.shape();
        for m in &self.scenario.methods {
            self.scenario(m.0, 0, features, classes)?.validate()?;
        }
        self.train_config().validate()?;
        Ok(())
    }

    /// Input width and class count of the configured dataset.
    pub fn shape(&self) -> (usize, usize) {
        match self.dataset {
            Dataset::Mnist | Dataset::Synthetic => (784, 10),
            Dataset::Fraud => (29, 2),
        }
    }

    pub fn model_config(&self, features: usize, classes: usize) -> ModelConfig {
        let mut c = ModelConfig::fcn(features, classes);
        c.layer_sizes = std::iter::once(features)
            .chain(self.model.hidden.iter().copied())
            .chain(std::iter::once(classes))
            .collect();
        c.fe_layers = self.model.fe_layers;
        c
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.train.lr,
            l2: self.train.l2,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
        }
    }

    pub fn synthetic_params(&self) -> SyntheticParams {
        SyntheticParams {
            informative: self.synthetic.informative,
            class_sep: self.synthetic.class_sep,
            ambient_noise: self.synthetic.ambient_noise,
            label_noise: self.synthetic.label_noise,
        }
    }

    /// Partition sizes before scaling.
    pub fn split_spec(&self) -> SplitSpec {
        let base = match self.dataset {
            Dataset::Mnist => SplitSpec::mnist(),
            _ => SplitSpec::synthetic(),
        };
        let sizes = match self.split.sizes.as_slice() {
            [g, a, b, t] => [*g, *a, *b, *t],
            _ => base.parts().map(|p| p.size),
        };
        SplitSpec::skewed(sizes, self.split.skew_ratio)
    }

    pub fn scenario(&self, method: Method, seed: u64, features: usize, classes: usize) -> Result<ScenarioConfig> {
        let mut c = ScenarioConfig::new(method, self.model_config(features, classes), seed);
        c.share_fraction = self.scenario.share_fraction;
        c.train = self.train_config();
        c.secure = self.scenario.secure;
        c.mixed = self.scenario.mixed;
        c.dealer = match self.scenario.dealer {
            Dealer::Offline => DealerMode::Offline,
            Dealer::Streaming => DealerMode::Streaming {
                buffer: self.scenario.dealer_buffer,
            },
            Dealer::OnDemand => DealerMode::OnDemand,
        };
        c.codec = FixedPointCodec::new(10, self.scenario.frac_digits).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(c)
    }

    pub fn privacy(&self, method: Method) -> PrivacyConfig {
        let mut p = PrivacyConfig::new(method, self.attack.party_size);
        p.model = self.model_config(784, 10);
        p.train = self.train_config();
        p.params = self.synthetic_params();
        p.spec = SplitSpec::skewed(p.spec.parts().map(|s| s.size), self.split.skew_ratio);
        p.attack = AttackTrainConfig {
            lr: self.attack.lr as f32,
            epochs: self.attack.epochs,
            batch_size: self.attack.batch_size,
            ..AttackTrainConfig::default()
        };
        p.sketch.target = self.attack.sketch_target;
        p
    }
}
