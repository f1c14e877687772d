//! Hyperparameters for a training run. Serialised as a flat TOML table.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Full group-aware model.
    Igrec,
    /// LightGCN on the user–item graph; groups ignored.
    Lightgcn,
    /// Matrix factorisation with BPR (LightGCN with zero layers).
    Mf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GumbelMode {
    Soft,
    Hard,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Mean,
    Max,
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterestGenerator {
    SelfGating,
    /// One linear layer per interest.
    Fc1,
    /// Two linear layers with a ReLU between, per interest.
    Fc2,
    /// A free `|U| x d` embedding table per interest.
    FreeEmbedding,
}

impl InterestGenerator {
    pub const ALL: [InterestGenerator; 4] = [
        InterestGenerator::Fc1,
        InterestGenerator::Fc2,
        InterestGenerator::FreeEmbedding,
        InterestGenerator::SelfGating,
    ];

    /// Trainable parameters used to produce interests.
    pub fn param_count(self, n_interests: usize, dim: usize, n_users: usize) -> usize {
        match self {
            InterestGenerator::SelfGating | InterestGenerator::Fc1 => n_interests * (dim + 1) * dim,
            InterestGenerator::Fc2 => 2 * n_interests * (dim + 1) * dim,
            InterestGenerator::FreeEmbedding => n_interests * n_users * dim,
        }
    }

    pub fn param_formula(self) -> &'static str {
        match self {
            InterestGenerator::SelfGating | InterestGenerator::Fc1 => "M x (d+1) x d",
            InterestGenerator::Fc2 => "2 x M x (d+1) x d",
            InterestGenerator::FreeEmbedding => "M x |U| x d",
        }
    }
}

impl fmt::Display for InterestGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InterestGenerator::SelfGating => "self_gating",
            InterestGenerator::Fc1 => "fc1",
            InterestGenerator::Fc2 => "fc2",
            InterestGenerator::FreeEmbedding => "free_embedding",
        })
    }
}

impl FromStr for InterestGenerator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "self_gating" => Ok(Self::SelfGating),
            "fc1" => Ok(Self::Fc1),
            "fc2" => Ok(Self::Fc2),
            "free_embedding" => Ok(Self::FreeEmbedding),
            _ => Err(Error::Config(format!("unknown interest generator {s:?}"))),
        }
    }
}

/// Ablation variants of the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    Full,
    /// Group interest vector replaced by the mean of members' embeddings.
    A,
    /// Interest mixture weights replaced by uniform weights.
    B,
    /// No interest regulariser.
    C,
    /// Hard Gumbel-Softmax selection.
    D,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Full, Variant::A, Variant::B, Variant::C, Variant::D];
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Full => "Full",
            Variant::A => "A",
            Variant::B => "B",
            Variant::C => "C",
            Variant::D => "D",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" => Ok(Variant::Full),
            "a" => Ok(Variant::A),
            "b" => Ok(Variant::B),
            "c" => Ok(Variant::C),
            "d" => Ok(Variant::D),
            other => Err(Error::Config(format!("unknown variant {other:?} (expected A, B, C, D or Full)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectTask {
    User,
    Group,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub dim: usize,
    pub n_interests: usize,
    pub layers: usize,
    pub tau: f64,
    pub threshold: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub user_batch: usize,
    pub group_batch: usize,
    /// Steps per epoch; 0 means one pass worth of user training edges.
    pub steps_per_epoch: usize,
    pub epochs: usize,
    pub patience: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub gumbel: GumbelMode,
    pub variant: Variant,
    pub pooling: Pooling,
    pub interest_generator: InterestGenerator,
    pub select_task: SelectTask,
    pub init_std: f64,
    pub gate_init_std: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Igrec,
            dim: 64,
            n_interests: 4,
            layers: 3,
            tau: 0.5,
            threshold: 0.1,
            eta1: 0.9,
            eta2: 0.4,
            lr: 0.005,
            weight_decay: 1e-4,
            user_batch: 2048,
            group_batch: 256,
            steps_per_epoch: 0,
            epochs: 300,
            patience: 20,
            eval_every: 1,
            seed: 0,
            gumbel: GumbelMode::Soft,
            variant: Variant::Full,
            pooling: Pooling::Mean,
            interest_generator: InterestGenerator::SelfGating,
            select_task: SelectTask::User,
            init_std: 0.1,
            gate_init_std: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.eta1) {
            return bad(format!("eta1 = {} outside [0, 1]", self.eta1));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad(format!("threshold = {} outside [0, 1]", self.threshold));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return bad(format!("tau = {} must be positive", self.tau));
        }
        if self.n_interests < 1 {
            return bad("n_interests must be at least 1".into());
        }
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        if !(self.eta2 >= 0.0) || !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return bad("eta2, lr and weight_decay must be non-negative".into());
        }
        if self.user_batch == 0 || self.group_batch == 0 {
            return bad("batch sizes must be positive".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive".into());
        }
        if !(self.init_std > 0.0) || !(self.gate_init_std >= 0.0) {
            return bad("init_std must be positive".into());
        }
        if self.model == ModelKind::Mf && self.layers != 0 {
            return bad("mf has no propagation layers; set layers = 0".into());
        }
        Ok(())
    }

    /// The configuration after applying the ablation variant's overrides.
    pub fn effective(&self) -> TrainConfig {
        let mut c = self.clone();
        match self.variant {
            Variant::C => c.eta2 = 0.0,
            Variant::D => c.gumbel = GumbelMode::Hard,
            _ => {}
        }
        c
    }

    pub fn uses_groups(&self) -> bool {
        self.model == ModelKind::Igrec
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: TrainConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Applies `key=value` overrides, parsing values as TOML scalars.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(&self.to_toml_string()).expect("round trip");
        for kv in overrides {
            let kv = kv.as_ref();
            let (k, v) =
                kv.split_once('=').ok_or_else(|| Error::Config(format!("override {kv:?} is not key=value")))?;
            let (k, v) = (k.trim(), v.trim());
            if !table.contains_key(k) {
                return Err(Error::Config(format!("unknown config key {k:?}")));
            }
            let parsed: toml::Value = format!("x = {v}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("x"))
                .unwrap_or_else(|| toml::Value::String(v.to_string()));
            table.insert(k.to_string(), parsed);
        }
        let c: TrainConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(TrainConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
    }

    #[test]
    fn rejects_out_of_range() {
        for kv in ["eta1=1.5", "threshold=-0.1", "tau=0", "n_interests=0", "eta1=-0.01"] {
            assert!(TrainConfig::default().with_overrides(&[kv]).is_err(), "{kv}");
        }
        assert!(TrainConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn overrides_parse_types() {
        let c = TrainConfig::default()
            .with_overrides(&["n_interests=6", "tau=0.2", "variant=\"C\"", "gumbel=hard", "model=lightgcn"])
            .unwrap();
        assert_eq!(c.n_interests, 6);
        assert_eq!(c.tau, 0.2);
        assert_eq!(c.variant, Variant::C);
        assert_eq!(c.gumbel, GumbelMode::Hard);
        assert_eq!(c.model, ModelKind::Lightgcn);
        assert_eq!(c.effective().eta2, 0.0);
    }

    #[test]
    fn generator_param_counts() {
        assert_eq!(InterestGenerator::SelfGating.param_count(4, 64, 5275), 4 * 65 * 64);
        assert_eq!(InterestGenerator::Fc2.param_count(4, 64, 5275), 2 * 4 * 65 * 64);
        assert_eq!(InterestGenerator::FreeEmbedding.param_count(4, 64, 5275), 4 * 5275 * 64);
    }
}
