use std::path::Path;

use anyhow::{bail, Context, Result};
use clkit_core::drift::DriftConfig;
use clkit_core::gateway::GatewayConfig;
use clkit_core::metrics::ScoreWeights;
use clkit_core::runner::RunConfig;
use clkit_core::sequence::BuilderConfig;
use clkit_core::similarity::SimilarityOptions;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Everything a subcommand may read from the config file. Each section is
/// optional. `gateway` and `weights` are shared by `drift`, `run` and
/// `metrics` and take precedence over copies nested under `run`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub build: BuilderConfig,
    pub similarity: SimilarityOptions,
    pub drift: DriftConfig,
    pub run: RunConfig,
    pub gateway: Option<GatewayConfig>,
    pub weights: Option<ScoreWeights>,
}

impl Config {
    /// Reads TOML or JSON, chosen by extension (`.json` is JSON, anything
    /// else TOML).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Config = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)
                .with_context(|| format!("parsing JSON config {}", path.display()))?
        } else {
            toml::from_str(&text)
                .with_context(|| format!("parsing TOML config {}", path.display()))?
        };
        Ok(cfg.resolved())
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default().resolved()),
        }
    }

    fn resolved(mut self) -> Self {
        if let Some(g) = &self.gateway {
            self.run.gateway = g.clone();
        }
        if let Some(w) = self.weights {
            self.run.weights = w;
        }
        self.run.gateway = std::mem::take(&mut self.run.gateway).with_env();
        self
    }

    pub fn gateway(&self) -> &GatewayConfig {
        &self.run.gateway
    }

    pub fn weights(&self) -> ScoreWeights {
        self.run.weights
    }
}

/// Parses a flag value through the type's serde name, so flags accept the
/// same spellings as the config file.
pub fn parse_name<T: DeserializeOwned>(s: &str) -> Result<T> {
    match serde_json::from_value(serde_json::Value::String(s.replace('-', "_"))) {
        Ok(v) => Ok(v),
        Err(e) => bail!("invalid value `{s}`: {e}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clkit_core::gateway::GatewayMode;
    use clkit_core::runner::AgentKind;

    #[test]
    fn toml_sections_and_shared_gateway() {
        let text = r#"
            [build]
            min_tasks_per_repo = 10

            [run]
            agent = "null"
            k_memories = 5

            [gateway]
            mode = "mock"
            embedding_dimension = 32

            [weights]
            beta = 2.0
        "#;
        let cfg: Config = toml::from_str(text).unwrap();
        let cfg = cfg.resolved();
        assert_eq!(cfg.build.min_tasks_per_repo, 10);
        assert_eq!(cfg.run.agent, AgentKind::Null);
        assert_eq!(cfg.gateway().embedding_dimension, 32);
        assert_eq!(cfg.gateway().mode, GatewayMode::Mock);
        assert_eq!(cfg.weights().beta, 2.0);
        assert_eq!(cfg.weights().lambda_f, 0.5);
    }

    #[test]
    fn unknown_sections_are_rejected() {
        assert!(toml::from_str::<Config>("[bogus]\nx = 1\n").is_err());
    }

    #[test]
    fn flag_names_follow_serde() {
        assert_eq!(parse_name::<AgentKind>("llm").unwrap(), AgentKind::Llm);
        let r: clkit_core::runner::ReevalPolicy = parse_name("final-only").unwrap();
        assert_eq!(r, clkit_core::runner::ReevalPolicy::FinalOnly);
        assert!(parse_name::<AgentKind>("robot").is_err());
    }
}
