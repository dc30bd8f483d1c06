//! Experiment config files (TOML).
//!
//! ```toml
//! [scenario]
//! name = "gauss"
//! p = 100
//! methods = ["L1-SQR", "Oracle-TSQR"]
//!
//! [scenario.settings]
//! grid_size = 30
//!
//! [sweep]
//! transferable = [0, 4, 8]
//!
//! [output]
//! results = "out/gauss.csv"
//! ```
//!
//! Unknown keys are rejected. Relative output paths resolve against the
//! directory holding the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulation::ScenarioConfig;

/// Grid over scenario parameters; every combination becomes one scenario.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sweep {
    pub tau: Vec<f64>,
    pub eta: Vec<f64>,
    pub transferable: Vec<usize>,
    pub delta_design: Vec<f64>,
    pub h_w: Vec<f64>,
    pub h_delta: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub results: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfigFile {
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub sweep: Sweep,
    #[serde(default)]
    pub output: OutputSection,
    /// Directory the file was read from.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.scenarios()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn results_path(&self) -> Option<PathBuf> {
        self.output.results.as_deref().map(|p| self.resolve(p))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Expands the sweep in the order tau, eta, transferable, delta_design,
    /// h_w, h_delta (last varies fastest). Swept values are appended to the name.
    pub fn scenarios(&self) -> Result<Vec<ScenarioConfig>> {
        let mut out = vec![self.scenario.clone()];
        let sw = &self.sweep;
        out = expand(out, &sw.tau, |c, &v| {
            c.tau = v;
            format!("tau={v}")
        });
        out = expand(out, &sw.eta, |c, &v| {
            c.eta = v;
            format!("eta={v}")
        });
        out = expand(out, &sw.transferable, |c, &v| {
            c.transferable = v;
            format!("A={v}")
        });
        out = expand(out, &sw.delta_design, |c, &v| {
            c.delta_design = v;
            format!("delta={v}")
        });
        out = expand(out, &sw.h_w, |c, &v| {
            c.settings.h_w = Some(v);
            format!("h_w={v}")
        });
        out = expand(out, &sw.h_delta, |c, &v| {
            c.settings.h_delta = Some(v);
            format!("h_delta={v}")
        });
        for c in &out {
            c.validate()?;
        }
        Ok(out)
    }
}

fn expand<T>(
    base: Vec<ScenarioConfig>,
    values: &[T],
    set: impl Fn(&mut ScenarioConfig, &T) -> String,
) -> Vec<ScenarioConfig> {
    if values.is_empty() {
        return base;
    }
    base.into_iter()
        .flat_map(|c| {
            values
                .iter()
                .map(|v| {
                    let mut c2 = c.clone();
                    let tag = set(&mut c2, v);
                    c2.name = format!("{}/{tag}", c.name);
                    c2
                })
                .collect::<Vec<_>>()
        })
        .collect()
}
