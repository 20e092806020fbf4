use std::path::Path;

use rmsh_core::data::SyntheticConfig;
use rmsh_core::eval::EvalConfig;
use rmsh_core::trainer::TrainConfig;
use rmsh_core::Error;
use serde::{Deserialize, Serialize};

/// Everything a run can be configured with. Every section and key is optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub gen: GenConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n_train: usize,
    pub n_query: usize,
    pub tags: usize,
    pub theta: f64,
    /// Per-tag probabilities; overrides `tags`/`theta` when non-empty.
    pub tag_probs: Vec<f64>,
    pub d_image: usize,
    pub d_text: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_query: 200,
            tags: 8,
            theta: 0.25,
            tag_probs: Vec::new(),
            d_image: 32,
            d_text: 24,
            noise: 0.1,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn synthetic(&self) -> SyntheticConfig {
        let tag_probs = if self.tag_probs.is_empty() {
            vec![self.theta; self.tags]
        } else {
            self.tag_probs.clone()
        };
        SyntheticConfig {
            n: self.n_train + self.n_query,
            d_image: self.d_image,
            d_text: self.d_text,
            tag_probs,
            noise: self.noise,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// `delta`, `lambda1`..`lambda4` or `w_p`.
    pub param: String,
    pub values: Vec<String>,
    pub seeds: Vec<u64>,
    /// NDCG cutoff reported per run.
    pub cutoff: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            param: "delta".into(),
            values: vec!["1".into(), "auto".into()],
            seeds: vec![0, 1, 2],
            cutoff: 50,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, Error> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    /// `--seed` replaces both the generator and the training seed.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.gen.seed = s;
            self.train.seed = s;
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = include_str!("../config.example.toml");

    fn keys(v: &toml::Value, prefix: &str, out: &mut Vec<String>) {
        if let toml::Value::Table(t) = v {
            for (k, child) in t {
                let path = format!("{prefix}{k}");
                keys(child, &format!("{path}."), out);
                out.push(path);
            }
        }
    }

    #[test]
    fn example_matches_defaults() {
        let parsed = Config::parse(EXAMPLE).unwrap();
        assert_eq!(parsed, Config::default());
        let mut want = Vec::new();
        keys(
            &toml::Value::try_from(Config::default()).unwrap(),
            "",
            &mut want,
        );
        let mut got = Vec::new();
        keys(
            &toml::from_str::<toml::Value>(EXAMPLE).unwrap(),
            "",
            &mut got,
        );
        want.sort();
        got.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn seed_flag_overrides_both_sections() {
        let c = Config::default().with_seed(Some(7));
        assert_eq!((c.gen.seed, c.train.seed), (7, 7));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            Config::parse("[train]\nk2 = 3\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            Config::parse("[train]\ndelta = 0\n"),
            Err(Error::Config(_))
        ));
    }
}
