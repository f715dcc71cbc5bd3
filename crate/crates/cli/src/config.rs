//! Backend configuration files shared by `experiment` and `serve`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use companion_core::experiment::{
    BackendFactory, ExperimentPlan, HttpSuite, ScriptedSuite, ScriptedSuiteConfig,
};
use companion_core::probe::ProbeModel;
use companion_core::BackendHandle;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendsConfig {
    Http {
        agent: BackendHandle,
        /// Companion judge; defaults to the agent endpoint.
        #[serde(default)]
        judge: Option<BackendHandle>,
        #[serde(default)]
        quality_judge: Option<BackendHandle>,
        #[serde(default)]
        probe_model: Option<PathBuf>,
    },
    Scripted(ScriptedSuiteConfig),
}

impl Default for BackendsConfig {
    fn default() -> Self {
        BackendsConfig::Scripted(ScriptedSuiteConfig::default())
    }
}

pub type SharedFactory = Arc<dyn BackendFactory + Send + Sync>;

impl BackendsConfig {
    pub fn build(&self) -> Result<SharedFactory> {
        Ok(match self {
            BackendsConfig::Scripted(cfg) => Arc::new(ScriptedSuite::new(cfg.clone())),
            BackendsConfig::Http {
                agent,
                judge,
                quality_judge,
                probe_model,
            } => {
                let probe = probe_model
                    .as_deref()
                    .map(|p| {
                        ProbeModel::load(p)
                            .with_context(|| format!("loading probe model {}", p.display()))
                    })
                    .transpose()?;
                let judge = judge.clone().or_else(|| Some(agent.clone()));
                Arc::new(HttpSuite::new(
                    agent.clone(),
                    judge,
                    quality_judge.clone(),
                    probe,
                )?)
            }
        })
    }
}

/// Contents of an `experiment --plan-file`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub plan: ExperimentPlan,
    #[serde(default)]
    pub backends: BackendsConfig,
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
