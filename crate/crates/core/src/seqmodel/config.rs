use crate::error::{Error, Result};
use crate::numcore::Activation;
use crate::settings::{join_list, parse, parse_bool, parse_list, unknown_key, Settings};

/// How the transformer output is reduced before the prediction head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Pooling {
    /// Row-major flatten of every sequence row, drug side first.
    #[default]
    Flatten,
    /// Masked mean over valid rows. Diagnostic only.
    Mean,
}

impl Pooling {
    pub fn as_str(self) -> &'static str {
        match self {
            Pooling::Flatten => "flatten",
            Pooling::Mean => "mean",
        }
    }
}

/// Components that can be switched off for ablation runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Components {
    pub prototypes: bool,
    pub drug_side: bool,
    pub disease_side: bool,
    pub sim_fusion: bool,
    pub attention: bool,
}

impl Default for Components {
    fn default() -> Self {
        Self {
            prototypes: true,
            drug_side: true,
            disease_side: true,
            sim_fusion: true,
            attention: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage2Config {
    pub d_w: usize,
    pub temperature: f64,
    pub heads: usize,
    pub l_max: usize,
    pub head_hidden: Vec<usize>,
    pub fusion_activation: Activation,
    pub pooling: Pooling,
    pub components: Components,
    pub lr: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub decay_embeddings: bool,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            d_w: 64,
            temperature: 2.0,
            heads: 4,
            l_max: 32,
            head_hidden: vec![256, 64],
            fusion_activation: Activation::Relu,
            pooling: Pooling::Flatten,
            components: Components::default(),
            lr: 1e-4,
            lr_min: 0.0,
            weight_decay: 0.01,
            decay_embeddings: true,
            epochs: 30,
            batch: 128,
            seed: 0,
        }
    }
}

impl Stage2Config {
    /// Checks everything that does not depend on the prototype extent.
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| {
            Err(Error::Config {
                key: format!("stage2.{key}"),
                message,
            })
        };
        if self.d_w == 0 {
            return bad("d_w", "must be positive".into());
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad(
                "temperature",
                format!("must be finite and >= 0, got {}", self.temperature),
            );
        }
        if self.heads == 0 {
            return bad("heads", "must be positive".into());
        }
        if self.l_max == 0 {
            return bad("l_max", "must be at least 1".into());
        }
        if self.head_hidden.contains(&0) {
            return bad("head_hidden", "widths must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", format!("must be positive, got {}", self.lr));
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr) {
            return bad("lr_min", format!("must lie in [0, lr], got {}", self.lr_min));
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay", "must be non-negative".into());
        }
        if self.batch == 0 {
            return bad("batch", "must be positive".into());
        }
        Ok(())
    }

    /// Width of the sequence rows for prototypes of extent `d0`.
    pub fn d1(&self, d0: usize) -> usize {
        self.d_w + d0
    }

    pub fn validate_for(&self, d0: usize) -> Result<()> {
        self.validate()?;
        if d0 == 0 || !self.d1(d0).is_multiple_of(self.heads) {
            return Err(Error::Config {
                key: "stage2.heads".into(),
                message: format!("d_w + d0 = {} is not divisible by {} heads", self.d1(d0), self.heads),
            });
        }
        Ok(())
    }

    pub fn seq_len(&self) -> usize {
        2 * self.l_max
    }
}

impl Settings for Stage2Config {
    fn entries(&self) -> Vec<(&'static str, String)> {
        let c = &self.components;
        vec![
            ("d_w", self.d_w.to_string()),
            ("temperature", self.temperature.to_string()),
            ("heads", self.heads.to_string()),
            ("l_max", self.l_max.to_string()),
            ("head_hidden", join_list(&self.head_hidden)),
            (
                "fusion_activation",
                match self.fusion_activation {
                    Activation::None => "none",
                    Activation::Relu => "relu",
                }
                .to_string(),
            ),
            ("pooling", self.pooling.as_str().to_string()),
            ("use_prototypes", c.prototypes.to_string()),
            ("use_drug_side", c.drug_side.to_string()),
            ("use_disease_side", c.disease_side.to_string()),
            ("use_sim_fusion", c.sim_fusion.to_string()),
            ("use_attention", c.attention.to_string()),
            ("lr", self.lr.to_string()),
            ("lr_min", self.lr_min.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("decay_embeddings", self.decay_embeddings.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch", self.batch.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let c = &mut self.components;
        match key {
            "d_w" => self.d_w = parse(key, value)?,
            "temperature" => self.temperature = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "l_max" => self.l_max = parse(key, value)?,
            "head_hidden" => self.head_hidden = parse_list(key, value)?,
            "fusion_activation" => {
                self.fusion_activation = match value.trim() {
                    "relu" => Activation::Relu,
                    "none" => Activation::None,
                    other => {
                        return Err(Error::Config {
                            key: key.into(),
                            message: format!("expected relu or none, got `{other}`"),
                        })
                    }
                }
            }
            "pooling" => {
                self.pooling = match value.trim() {
                    "flatten" => Pooling::Flatten,
                    "mean" => Pooling::Mean,
                    other => {
                        return Err(Error::Config {
                            key: key.into(),
                            message: format!("expected flatten or mean, got `{other}`"),
                        })
                    }
                }
            }
            "use_prototypes" => c.prototypes = parse_bool(key, value)?,
            "use_drug_side" => c.drug_side = parse_bool(key, value)?,
            "use_disease_side" => c.disease_side = parse_bool(key, value)?,
            "use_sim_fusion" => c.sim_fusion = parse_bool(key, value)?,
            "use_attention" => c.attention = parse_bool(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "lr_min" => self.lr_min = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "decay_embeddings" => self.decay_embeddings = parse_bool(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }
}
