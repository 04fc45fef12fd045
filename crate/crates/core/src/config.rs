//! JSON run configuration shared by every pipeline stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::McmcSettings;
use crate::graph::GraphVariant;
use crate::model::{Hypara, ModelSpec};
use crate::predict::PredictionRequest;
use crate::simulate::SimDesign;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides every stage seed when present.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Root directory; stages write to `simulate/`, `fit/`, `predict/`, `diagnose/` under it.
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub simulate: Option<SimulateConfig>,
    #[serde(default)]
    pub fit: Option<FitConfig>,
    #[serde(default)]
    pub predict: Option<PredictConfig>,
    #[serde(default)]
    pub diagnose: Option<DiagnoseConfig>,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub design: SimDesign,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub holdout: Option<HoldoutConfig>,
}

/// Splits a simulated panel into training data, future periods and test locations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoldoutConfig {
    /// Trailing periods withheld at the training locations.
    pub future_periods: usize,
    /// Coordinates of the withheld locations; the standard 21 grid points when absent.
    #[serde(default)]
    pub test_coordinates: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// Long-format counts; `<out>/simulate/data.csv` when absent.
    #[serde(default)]
    pub data: Option<PathBuf>,
    /// Location coordinates; `<out>/simulate/locations.csv` when absent and no graph is given.
    #[serde(default)]
    pub locations: Option<PathBuf>,
    /// A prebuilt neighbor graph, used instead of building one from the locations.
    #[serde(default)]
    pub graph: Option<PathBuf>,
    #[serde(default = "default_h_s")]
    pub h_s: usize,
    #[serde(default = "default_variant")]
    pub variant: GraphVariant,
    #[serde(default)]
    pub inverse_distance: bool,
    /// Named prior preset; ignored when `model` is given.
    #[serde(default)]
    pub hypara: Option<Hypara>,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub mcmc: McmcSettings,
}

fn default_h_s() -> usize {
    12
}

fn default_variant() -> GraphVariant {
    GraphVariant::UndirectedSelf
}

impl FitConfig {
    pub fn model_spec(&self) -> ModelSpec {
        self.model
            .clone()
            .unwrap_or_else(|| ModelSpec::preset(self.hypara.unwrap_or(Hypara::Hypara1)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    /// Fit output directory; `<out>/fit` when absent.
    #[serde(default)]
    pub fit_dir: Option<PathBuf>,
    #[serde(default = "default_request")]
    pub request: PredictionRequest,
    /// Coordinates of new locations, appended after `request.new_locations`.
    #[serde(default)]
    pub new_locations_csv: Option<PathBuf>,
}

fn default_request() -> PredictionRequest {
    PredictionRequest::future_only(0, 0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseConfig {
    #[serde(default)]
    pub fit_dir: Option<PathBuf>,
    /// Training counts; the path recorded at fit time when absent.
    #[serde(default)]
    pub data: Option<PathBuf>,
    #[serde(default)]
    pub pred_dir: Option<PathBuf>,
    /// Withheld counts `t, location_id, count` in prediction numbering.
    #[serde(default)]
    pub holdout: Option<PathBuf>,
    #[serde(default = "default_label")]
    pub label: String,
    /// Keep every `trace_stride`-th draw in the trace file.
    #[serde(default = "default_stride")]
    pub trace_stride: usize,
}

fn default_label() -> String {
    "model".into()
}

fn default_stride() -> usize {
    1
}

impl RunConfig {
    pub fn from_json_str(text: &str, origin: &str) -> Result<Self> {
        let cfg: RunConfig = crate::io::from_json_str(text, origin).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json_str(&text, &path.display().to_string())?;
        // relative paths inside the file are taken from the file's directory
        if let Some(base) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out);
        if let Some(f) = self.fit.as_mut() {
            [&mut f.data, &mut f.locations, &mut f.graph].into_iter().flatten().for_each(fix);
        }
        if let Some(p) = self.predict.as_mut() {
            [&mut p.fit_dir, &mut p.new_locations_csv].into_iter().flatten().for_each(fix);
        }
        if let Some(d) = self.diagnose.as_mut() {
            [&mut d.fit_dir, &mut d.data, &mut d.pred_dir, &mut d.holdout].into_iter().flatten().for_each(fix);
        }
    }

    /// Checks everything that can be checked before touching data.
    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        if let Some(s) = &self.simulate {
            if let Some(h) = &s.holdout {
                if h.future_periods >= s.design.n_times {
                    return Err(Error::Config("holdout.future_periods must leave at least one training period".into()));
                }
            }
        }
        if let Some(f) = &self.fit {
            f.model_spec().validate().map_err(cfg)?;
            f.mcmc.validate().map_err(cfg)?;
            if f.h_s == 0 {
                return Err(Error::Config("fit.h_s must be at least 1".into()));
            }
        }
        if let Some(d) = &self.diagnose {
            if d.trace_stride == 0 {
                return Err(Error::Config("diagnose.trace_stride must be at least 1".into()));
            }
        }
        Ok(())
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.out.join(stage)
    }
}
