use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::enkf::DEFAULT_ENSEMBLE_SIZE;
use crate::error::{FilterError, Result};
use crate::numerics::SpdMatrix;
use crate::statespace::{
    linear_example1, linear_example2, make_lorenz, make_vdp, LinearSystem, StateEstimate,
    SystemModel, LORENZ_DEFAULT_TS, VDP_DEFAULT_MU, VDP_DEFAULT_TS,
};
use crate::ukf::DEFAULT_ALPHA;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelId {
    LinearEx1,
    LinearEx2,
    Vdp,
    Lorenz,
    /// Linear system given by `a`/`c` in the config.
    Custom,
}

impl ModelId {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelId::LinearEx1 => "linear-ex1",
            ModelId::LinearEx2 => "linear-ex2",
            ModelId::Vdp => "vdp",
            ModelId::Lorenz => "lorenz",
            ModelId::Custom => "custom",
        }
    }

    pub fn is_linear(self) -> bool {
        !matches!(self, ModelId::Vdp | ModelId::Lorenz)
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for ModelId {
    type Err = FilterError;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "linear-ex1" => ModelId::LinearEx1,
            "linear-ex2" => ModelId::LinearEx2,
            "vdp" => ModelId::Vdp,
            "lorenz" => ModelId::Lorenz,
            "custom" => ModelId::Custom,
            other => return Err(FilterError::Config(format!("unknown model id `{other}`"))),
        })
    }
}

/// Filters in CSV column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Enkf,
    Ekf,
    Kf,
    Ukf,
    Eukfa,
    Eukfc,
}

impl FilterKind {
    pub const ALL: [FilterKind; 6] = [
        FilterKind::Enkf,
        FilterKind::Ekf,
        FilterKind::Kf,
        FilterKind::Ukf,
        FilterKind::Eukfa,
        FilterKind::Eukfc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FilterKind::Enkf => "enkf",
            FilterKind::Ekf => "ekf",
            FilterKind::Kf => "kf",
            FilterKind::Ukf => "ukf",
            FilterKind::Eukfa => "eukfa",
            FilterKind::Eukfc => "eukfc",
        }
    }

    /// Parses a comma-separated list, returning it sorted and deduplicated.
    pub fn parse_list(s: &str) -> Result<Vec<FilterKind>> {
        let mut out = s
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(FilterKind::from_str)
            .collect::<Result<Vec<_>>>()?;
        out.sort();
        out.dedup();
        Ok(out)
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for FilterKind {
    type Err = FilterError;
    fn from_str(s: &str) -> Result<Self> {
        FilterKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| FilterError::Config(format!("unknown filter `{s}`")))
    }
}

/// Everything needed to run one experiment. Also the schema of the TOML
/// config file; every key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelId,
    pub steps: usize,
    pub seed: u64,
    pub alpha: f64,
    pub ensemble: usize,
    pub filters: Vec<FilterKind>,
    /// Step size for `vdp` and `lorenz`.
    pub ts: Option<f64>,
    /// Van der Pol damping.
    pub mu: Option<f64>,
    /// Scalar process noise: `Q = q·I`.
    pub q: Option<f64>,
    /// Scalar measurement noise: `R = r·I`.
    pub r: Option<f64>,
    pub x0: Option<Vec<f64>>,
    /// Scalar initial covariance: `P₀ = p0·I`.
    pub p0: Option<f64>,
    /// Rows of `A` for the custom model.
    pub a: Option<Vec<Vec<f64>>>,
    /// Rows of `C` for the custom model.
    pub c: Option<Vec<Vec<f64>>>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelId::Lorenz,
            steps: 100,
            seed: 0,
            alpha: DEFAULT_ALPHA,
            ensemble: DEFAULT_ENSEMBLE_SIZE,
            filters: Vec::new(),
            ts: None,
            mu: None,
            q: None,
            r: None,
            x0: None,
            p0: None,
            a: None,
            c: None,
        }
    }
}

fn rows_to_matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(FilterError::Config(format!("`{name}` must be a non-empty rectangular matrix")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| FilterError::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| FilterError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// The filter set, falling back to every filter the model supports.
    pub fn effective_filters(&self) -> Vec<FilterKind> {
        if !self.filters.is_empty() {
            let mut f = self.filters.clone();
            f.sort();
            f.dedup();
            return f;
        }
        FilterKind::ALL
            .into_iter()
            .filter(|k| *k != FilterKind::Kf || self.model.is_linear())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(FilterError::Config("steps must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(FilterError::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        let filters = self.effective_filters();
        if filters.contains(&FilterKind::Enkf) && self.ensemble < 2 {
            return Err(FilterError::Config("ensemble size must be at least 2".into()));
        }
        if filters.contains(&FilterKind::Kf) && !self.model.is_linear() {
            return Err(FilterError::Config(format!(
                "filter `kf` needs a linear model, `{}` is nonlinear",
                self.model
            )));
        }
        for (name, v) in [("ts", self.ts), ("q", self.q), ("r", self.r), ("p0", self.p0)] {
            if let Some(v) = v {
                let ok = if name == "q" { v >= 0.0 } else { v > 0.0 };
                if !ok || !v.is_finite() {
                    return Err(FilterError::Config(format!("`{name}` out of range: {v}")));
                }
            }
        }
        let model = self.build_model()?;
        if let Some(x0) = &self.x0 {
            if x0.len() != model.state_dim() {
                return Err(FilterError::Config(format!(
                    "x0 has {} entries, model state has {}",
                    x0.len(),
                    model.state_dim()
                )));
            }
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<SystemModel> {
        let model = match self.model {
            ModelId::LinearEx1 => linear_example1().into_model("linear-ex1"),
            ModelId::LinearEx2 => linear_example2().into_model("linear-ex2"),
            ModelId::Vdp => make_vdp(self.ts.unwrap_or(VDP_DEFAULT_TS), self.mu.unwrap_or(VDP_DEFAULT_MU))?,
            ModelId::Lorenz => make_lorenz(self.ts.unwrap_or(LORENZ_DEFAULT_TS))?,
            ModelId::Custom => {
                let a = rows_to_matrix("a", self.a.as_deref().unwrap_or_default())?;
                let c = rows_to_matrix("c", self.c.as_deref().unwrap_or_default())?;
                let (n, p) = (a.nrows(), c.nrows());
                LinearSystem::time_invariant(
                    a,
                    None,
                    c,
                    SpdMatrix::scaled_identity(n, self.q.unwrap_or(1.0)),
                    SpdMatrix::scaled_identity(p, self.r.unwrap_or(1.0)),
                )
                .map_err(|e| FilterError::Config(e.to_string()))?
                .into_model("custom")
            }
        };
        if self.q.is_none() && self.r.is_none() {
            return Ok(model);
        }
        let q = match self.q {
            Some(q) => SpdMatrix::scaled_identity(model.state_dim(), q),
            None => model.process_noise(0),
        };
        let r = match self.r {
            Some(r) => SpdMatrix::scaled_identity(model.output_dim(), r),
            None => model.measurement_noise(0),
        };
        model.with_noise(q, r)
    }

    /// Initial truth state, which is also the filters' initial mean.
    pub fn initial_state(&self, model: &SystemModel) -> DVector<f64> {
        match &self.x0 {
            Some(x0) => DVector::from_column_slice(x0),
            None => DVector::from_element(model.state_dim(), 1.0),
        }
    }

    pub fn initial_estimate(&self, model: &SystemModel) -> Result<StateEstimate> {
        let n = model.state_dim();
        StateEstimate::new(
            self.initial_state(model),
            SpdMatrix::scaled_identity(n, self.p0.unwrap_or(1.0)),
            0,
        )
    }
}
