//! Flat `section.key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::{DatasetPaths, DEFAULT_FOLDS};
use crate::error::{Error, Result};
use crate::eval::RunSpec;
use crate::proto::Stage1Config;
use crate::seqmodel::Stage2Config;
use crate::settings::{join_list, parse, parse_bool, parse_list, unknown_key, Settings};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DataSection {
    pub association: Option<PathBuf>,
    pub drug_similarity: Option<PathBuf>,
    pub disease_similarity: Option<PathBuf>,
    pub drug_ids: Option<PathBuf>,
    pub disease_ids: Option<PathBuf>,
}

impl DataSection {
    pub const REQUIRED_KEYS: [&'static str; 3] =
        ["data.association", "data.drug_similarity", "data.disease_similarity"];

    fn slot(&mut self, key: &str) -> Option<&mut Option<PathBuf>> {
        Some(match key {
            "association" => &mut self.association,
            "drug_similarity" => &mut self.drug_similarity,
            "disease_similarity" => &mut self.disease_similarity,
            "drug_ids" => &mut self.drug_ids,
            "disease_ids" => &mut self.disease_ids,
            _ => return None,
        })
    }

    pub fn paths(&self) -> Result<DatasetPaths> {
        let need = |p: &Option<PathBuf>, key: &str| {
            p.clone().ok_or_else(|| Error::Config {
                key: format!("data.{key}"),
                message: "is required".into(),
            })
        };
        Ok(DatasetPaths {
            association: need(&self.association, "association")?,
            drug_similarity: need(&self.drug_similarity, "drug_similarity")?,
            disease_similarity: need(&self.disease_similarity, "disease_similarity")?,
            drug_ids: self.drug_ids.clone(),
            disease_ids: self.disease_ids.clone(),
        })
    }

    /// Every configured path with its key.
    pub fn configured(&self) -> Vec<(String, &Path)> {
        [
            ("association", &self.association),
            ("drug_similarity", &self.drug_similarity),
            ("disease_similarity", &self.disease_similarity),
            ("drug_ids", &self.drug_ids),
            ("disease_ids", &self.disease_ids),
        ]
        .into_iter()
        .filter_map(|(k, p)| p.as_deref().map(|p| (format!("data.{k}"), p)))
        .collect()
    }
}

impl Settings for DataSection {
    fn entries(&self) -> Vec<(&'static str, String)> {
        let show = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        vec![
            ("association", show(&self.association)),
            ("drug_similarity", show(&self.drug_similarity)),
            ("disease_similarity", show(&self.disease_similarity)),
            ("drug_ids", show(&self.drug_ids)),
            ("disease_ids", show(&self.disease_ids)),
        ]
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let slot = self.slot(key).ok_or_else(|| unknown_key(key))?;
        let value = value.trim();
        *slot = (!value.is_empty()).then(|| PathBuf::from(value));
        Ok(())
    }
}

/// Parameters of the evaluation protocols and checkpoint inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolSection {
    pub folds: usize,
    pub repeats: usize,
    pub lambdas: Vec<f64>,
    pub grid_d0: Vec<usize>,
    pub grid_temperature: Vec<f64>,
    /// Size of the seeded cold-start drug subset.
    pub coldstart_drugs: usize,
    /// Holds out every eligible drug instead of a subset.
    pub coldstart_all: bool,
    /// Explicit cold-start drug indices; overrides the seeded subset.
    pub coldstart_list: Vec<usize>,
    /// Disease to rank candidates for, by ID or index.
    pub rank_disease: String,
    pub rank_k: usize,
    /// Directory holding `drug/` and `disease/` encoder checkpoints.
    pub prototypes: Option<PathBuf>,
    /// Directory written by the `train` command.
    pub model: Option<PathBuf>,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        Self {
            folds: DEFAULT_FOLDS,
            repeats: 10,
            lambdas: (1..=10).map(|i| f64::from(i) / 10.0).collect(),
            grid_d0: vec![64, 128, 256, 512, 1024],
            grid_temperature: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            coldstart_drugs: 20,
            coldstart_all: false,
            coldstart_list: Vec::new(),
            rank_disease: "0".into(),
            rank_k: 10,
            prototypes: None,
            model: None,
        }
    }
}

impl Settings for ProtocolSection {
    fn entries(&self) -> Vec<(&'static str, String)> {
        let show = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        vec![
            ("folds", self.folds.to_string()),
            ("repeats", self.repeats.to_string()),
            ("lambdas", join_list(&self.lambdas)),
            ("grid_d0", join_list(&self.grid_d0)),
            ("grid_temperature", join_list(&self.grid_temperature)),
            ("coldstart_drugs", self.coldstart_drugs.to_string()),
            ("coldstart_all", self.coldstart_all.to_string()),
            ("coldstart_list", join_list(&self.coldstart_list)),
            ("rank_disease", self.rank_disease.clone()),
            ("rank_k", self.rank_k.to_string()),
            ("prototypes", show(&self.prototypes)),
            ("model", show(&self.model)),
        ]
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let path = |v: &str| (!v.trim().is_empty()).then(|| PathBuf::from(v.trim()));
        match key {
            "folds" => self.folds = parse(key, value)?,
            "repeats" => self.repeats = parse(key, value)?,
            "lambdas" => self.lambdas = parse_list(key, value)?,
            "grid_d0" => self.grid_d0 = parse_list(key, value)?,
            "grid_temperature" => self.grid_temperature = parse_list(key, value)?,
            "coldstart_drugs" => self.coldstart_drugs = parse(key, value)?,
            "coldstart_all" => self.coldstart_all = parse_bool(key, value)?,
            "coldstart_list" => self.coldstart_list = parse_list(key, value)?,
            "rank_disease" => self.rank_disease = value.trim().to_string(),
            "rank_k" => self.rank_k = parse(key, value)?,
            "prototypes" => self.prototypes = path(value),
            "model" => self.model = path(value),
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }
}

/// Full configuration of one command invocation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub protocol: ProtocolSection,
}

impl RunConfig {
    /// Protocol inputs drawn from this configuration.
    pub fn spec(&self) -> RunSpec {
        RunSpec {
            folds: self.protocol.folds,
            ..RunSpec::new(self.stage1.clone(), self.stage2.clone(), self.seed)
        }
    }

    /// Every valid dotted key.
    pub fn all_keys(&self) -> Vec<String> {
        let mut keys = vec!["seed".to_string()];
        keys.extend(self.data.keys().into_iter().map(|k| format!("data.{k}")));
        keys.extend(self.stage1.keys().into_iter().map(|k| format!("stage1.{k}")));
        keys.extend(self.stage2.keys().into_iter().map(|k| format!("stage2.{k}")));
        keys.extend(self.protocol.keys().into_iter().map(|k| format!("protocol.{k}")));
        keys
    }

    /// Sets a dotted key. Unknown keys name the closest valid one.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        let result = match key.split_once('.') {
            None if key == "seed" => parse(key, value).map(|v| self.seed = v),
            Some(("data", k)) => self.data.set(k, value),
            Some(("stage1", k)) => self.stage1.set(k, value),
            Some(("stage2", k)) => self.stage2.set(k, value),
            Some(("protocol", k)) => self.protocol.set(k, value),
            _ => Err(unknown_key(key)),
        };
        result.map_err(|e| match e {
            Error::Config { message, .. } if message == "unknown key" => Error::Config {
                key: key.to_string(),
                message: match nearest_key(key, &self.all_keys()) {
                    Some(near) => format!("unknown key; did you mean `{near}`?"),
                    None => "unknown key".into(),
                },
            },
            Error::Config { key: inner, message } if !inner.contains('.') && key.ends_with(&inner) => Error::Config {
                key: key.to_string(),
                message,
            },
            other => other,
        })
    }

    /// Parses config text. Relative paths resolve against `base`.
    pub fn parse(text: &str, origin: &Path, base: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.to_path_buf(),
                message: format!("line {}: expected `key = value`", n + 1),
            })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Parse {
                    path: origin.to_path_buf(),
                    message: format!("line {}: `{key}` is set twice", n + 1),
                });
            }
            cfg.set(key, value)?;
        }
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, path, base)
    }

    /// Applies `key=value` overrides; relative paths resolve against `base`.
    pub fn apply_overrides(&mut self, overrides: &[String], base: &Path) -> Result<()> {
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| Error::Config {
                key: o.clone(),
                message: "override must look like key=value".into(),
            })?;
            self.set(k, v)?;
        }
        self.resolve_paths(base);
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = absolute(&base.join(&*path));
                }
            }
        };
        fix(&mut self.data.association);
        fix(&mut self.data.drug_similarity);
        fix(&mut self.data.disease_similarity);
        fix(&mut self.data.drug_ids);
        fix(&mut self.data.disease_ids);
        fix(&mut self.protocol.prototypes);
        fix(&mut self.protocol.model);
    }

    /// Every key with its value, one `key = value` line each.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "seed = {}", self.seed);
        let sections: [(&str, Vec<(&'static str, String)>); 4] = [
            ("data", self.data.entries()),
            ("stage1", self.stage1.entries()),
            ("stage2", self.stage2.entries()),
            ("protocol", self.protocol.entries()),
        ];
        for (name, entries) in sections {
            for (k, v) in entries {
                let _ = writeln!(out, "{name}.{k} = {v}");
            }
        }
        out
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Closest key by Jaro-Winkler similarity, if any is reasonably close.
pub fn nearest_key(key: &str, keys: &[String]) -> Option<String> {
    keys.iter()
        .map(|k| (strsim::jaro_winkler(key, k), k))
        .filter(|(s, _)| *s > 0.7)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, k)| k.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_text(text: &str) -> Result<RunConfig> {
        RunConfig::parse(text, Path::new("test.cfg"), Path::new("/base"))
    }

    #[test]
    fn parses_sections_and_comments() {
        let cfg = parse_text(
            "# comment\nseed = 4\nstage2.temperature=2 # trailing\n\ndata.association = a.txt\nprotocol.lambdas = 0.1,0.5\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.stage2.temperature, 2.0);
        assert_eq!(cfg.data.association, Some(PathBuf::from("/base/a.txt")));
        assert_eq!(cfg.protocol.lambdas, vec![0.1, 0.5]);
    }

    #[test]
    fn unknown_key_suggests_nearest() {
        let err = parse_text("stage2.temprature = 3\n").unwrap_err();
        let text = err.to_string();
        assert!(text.contains("stage2.temprature"), "{text}");
        assert!(text.contains("stage2.temperature"), "{text}");
        let err = parse_text("stage1.d0 = x\n").unwrap_err();
        assert!(err.to_string().contains("`stage1.d0`"), "{err}");
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(matches!(parse_text("seed 4\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse_text("seed=1\nseed=2\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn resolved_text_round_trips() {
        let mut cfg = parse_text("stage1.d0 = 16\ndata.drug_ids = /x/ids.txt\n").unwrap();
        cfg.apply_overrides(&["stage2.heads=8".into(), "protocol.rank_k=3".into()], Path::new("/"))
            .unwrap();
        let back = parse_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert!(cfg.apply_overrides(&["stage2.heads".into()], Path::new("/")).is_err());
    }
}
