use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::dataset::AlignSettings;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::{Protocol, TrainConfig};

/// Everything a training or evaluation run needs besides data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub protocol: Protocol,
    pub seeds: Vec<u64>,
    pub align: AlignSettings,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    Desk,
    Full,
}

impl RunConfig {
    pub fn at_scale(scale: Scale) -> Self {
        let (model, train) = match scale {
            Scale::Desk => (ModelConfig::desk(), TrainConfig::desk()),
            Scale::Full => (ModelConfig::full_scale(), TrainConfig::full_scale()),
        };
        RunConfig {
            model,
            train,
            protocol: Protocol::KFold(5),
            seeds: vec![0],
            align: AlignSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::contract("config lists no seeds"));
        }
        Ok(())
    }

    /// Parses a partial config. Keys that are present override the defaults
    /// of the scale named by the optional top-level `scale` key (`"desk"`
    /// unless given).
    pub fn parse(text: &str, format: ConfigFormat, origin: &str) -> Result<Self> {
        let bad = |m: String| Error::format(origin, m);
        let mut user: Value = match format {
            ConfigFormat::Toml => toml::from_str(text).map_err(|e| bad(e.to_string()))?,
            ConfigFormat::Json => serde_json::from_str(text).map_err(|e| bad(e.to_string()))?,
        };
        let scale = match user.as_object_mut().and_then(|o| o.remove("scale")) {
            None => Scale::Desk,
            Some(Value::String(s)) if s == "desk" => Scale::Desk,
            Some(Value::String(s)) if s == "full" => Scale::Full,
            Some(other) => return Err(bad(format!("unknown scale {other}; use \"desk\" or \"full\""))),
        };
        let mut base = serde_json::to_value(RunConfig::at_scale(scale)).expect("config serializes");
        merge(&mut base, user, "", &bad)?;
        let cfg: RunConfig = serde_json::from_value(base).map_err(|e| bad(e.to_string()))?;
        cfg.validate().map_err(|e| bad(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConfigFormat {
    Toml,
    Json,
}

/// Overlays `over` onto `base`, rejecting keys the base does not have.
fn merge(base: &mut Value, over: Value, at: &str, bad: &dyn Fn(String) -> Error) -> Result<()> {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                let path = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &path, bad)?,
                    None => return Err(bad(format!("unknown key {path}"))),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

/// Reads a `.toml` or `.json` config file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => ConfigFormat::Toml,
        Some("json") => ConfigFormat::Json,
        _ => {
            return Err(Error::format(
                path.display().to_string(),
                "config must end in .toml or .json",
            ))
        }
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunConfig::parse(&text, format, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FusionStrategy;

    #[test]
    fn empty_config_is_desk() {
        let c = RunConfig::parse("", ConfigFormat::Toml, "c").unwrap();
        assert_eq!(c, RunConfig::at_scale(Scale::Desk));
    }

    #[test]
    fn partial_tables_overlay_defaults() {
        let c = RunConfig::parse(
            "protocol = \"loso\"\nseeds = [1, 2]\n[model]\nfusion = \"SelfAttn\"\n[train]\nmax_epochs = 3\nwarmup_epochs = 1\n",
            ConfigFormat::Toml,
            "c",
        )
        .unwrap();
        assert_eq!(c.protocol, Protocol::Loso);
        assert_eq!(c.seeds, vec![1, 2]);
        assert_eq!(c.model.fusion, FusionStrategy::SelfAttn);
        assert_eq!(c.model.d_model, 64);
        assert_eq!(c.train.max_epochs, 3);
        assert_eq!(c.train.lr_peak, TrainConfig::desk().lr_peak);
    }

    #[test]
    fn json_and_toml_agree() {
        let t = RunConfig::parse("scale = \"full\"\n[model]\nn_layers = 2\n", ConfigFormat::Toml, "t").unwrap();
        let j = RunConfig::parse(r#"{"scale":"full","model":{"n_layers":2}}"#, ConfigFormat::Json, "j").unwrap();
        assert_eq!(t, j);
        assert_eq!(t.model.d_model, 768);
    }

    #[test]
    fn toml_round_trip() {
        let c = RunConfig::at_scale(Scale::Desk);
        assert_eq!(RunConfig::parse(&c.to_toml(), ConfigFormat::Toml, "c").unwrap(), c);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(RunConfig::parse("[model]\nwidth = 3\n", ConfigFormat::Toml, "c")
            .unwrap_err()
            .to_string()
            .contains("model.width"));
        assert!(RunConfig::parse("[model]\nn_heads = 5\n", ConfigFormat::Toml, "c").is_err());
        assert!(RunConfig::parse("scale = \"huge\"\n", ConfigFormat::Toml, "c").is_err());
    }
}
