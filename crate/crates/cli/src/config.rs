//! Experiment configuration: strict JSON with documented defaults and
//! dotted-path overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use teng_core::{
    FitConfig, InitialCondition, Method, NetworkArch, ObtiConfig, PdeKind, PdeSpec, StepperConfig, TdvpConfig,
    TrigTable,
};

use crate::error::{CliError, Result};

/// One experiment. Only `pde` and `time` are required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub pde: PdeConfig,
    /// Defaults to the standard initial condition of the chosen equation and
    /// dimension.
    #[serde(default)]
    pub ic: Option<IcName>,
    /// Periods of the domain; defaults to the initial condition's domain.
    #[serde(default)]
    pub lengths: Option<Vec<f64>>,
    #[serde(default)]
    pub net: NetConfig,
    #[serde(default)]
    pub grid: GridConfig,
    pub time: TimeConfig,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default)]
    pub stepper: StepperConfig,
    #[serde(default)]
    pub tdvp: TdvpConfig,
    #[serde(default)]
    pub obti: ObtiConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub reference: ReferenceSettings,
    /// Initial parameters to start from instead of fitting.
    #[serde(default)]
    pub init_checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_method() -> Method {
    Method::TengEuler
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeConfig {
    pub kind: PdeKind,
    /// Defaults to 1/10 (heat), 1/200 (Allen–Cahn) or 1/100 (Burgers).
    #[serde(default)]
    pub nu: Option<f64>,
    #[serde(default = "two")]
    pub dims: usize,
}

fn two() -> usize {
    2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IcName {
    TwoDimExp,
    ThreeDimTrig,
    BurgersAlt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub embed_terms: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            n_layers: 3,
            hidden_dim: 16,
            embed_terms: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Points per dimension; 64 in 2D and 24 in 3D when unset.
    pub n_per_dim: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub dt: f64,
    pub t_final: f64,
    #[serde(default = "one")]
    pub checkpoint_stride: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceSettings {
    /// Retained frequencies per axis; 32 heat, 48 Allen–Cahn, 64 Burgers,
    /// 8 in 3D when unset.
    pub kmax: Option<usize>,
    /// Step of the pseudo-spectral RK4 solver.
    pub dt_ref: f64,
    /// Points per dimension at which the initial condition is transformed;
    /// 256 in 2D and 24 in 3D when unset.
    pub sample_n: Option<usize>,
    /// Precomputed reference to load instead of solving.
    pub file: Option<PathBuf>,
}

impl Default for ReferenceSettings {
    fn default() -> Self {
        Self {
            kmax: None,
            dt_ref: 1e-3,
            sample_n: None,
            file: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Sets `key` (dotted path, e.g. `time.dt`) to `value`, read as JSON and
    /// otherwise as a plain string.
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<()> {
        let mut tree = serde_json::to_value(&*self)?;
        let mut node = &mut tree;
        for part in key.split('.') {
            node = node
                .as_object_mut()
                .and_then(|o| o.get_mut(part))
                .ok_or_else(|| CliError::Config(format!("unknown key `{key}`")))?;
        }
        *node = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
        let cfg: Self = serde_json::from_value(tree).map_err(|e| CliError::Config(format!("`{key}`: {e}")))?;
        cfg.validate()?;
        *self = cfg;
        Ok(())
    }

    pub fn pde_spec(&self) -> Result<PdeSpec> {
        let nu = self.pde.nu.unwrap_or(self.pde.kind.default_nu());
        Ok(PdeSpec::new(self.pde.kind, nu, self.pde.dims)?)
    }

    pub fn ic_name(&self) -> IcName {
        self.ic.unwrap_or(match (self.pde.kind, self.pde.dims) {
            (_, 3) => IcName::ThreeDimTrig,
            _ => IcName::TwoDimExp,
        })
    }

    pub fn initial_condition(&self) -> InitialCondition {
        match self.ic_name() {
            IcName::TwoDimExp => InitialCondition::TwoDimExp,
            IcName::ThreeDimTrig => InitialCondition::ThreeDimTrig(TrigTable::preset()),
            IcName::BurgersAlt => InitialCondition::BurgersAlt,
        }
    }

    pub fn domain_lengths(&self) -> Vec<f64> {
        self.lengths.clone().unwrap_or_else(|| self.initial_condition().lengths())
    }

    pub fn grid_n(&self) -> usize {
        self.grid.n_per_dim.unwrap_or(if self.pde.dims == 3 { 24 } else { 64 })
    }

    pub fn arch(&self) -> NetworkArch {
        NetworkArch::new(self.pde.dims, self.net.embed_terms, self.net.hidden_dim, self.net.n_layers)
            .with_periods(self.domain_lengths())
    }

    pub fn reference_kmax(&self) -> usize {
        self.reference.kmax.unwrap_or(match (self.pde.kind, self.pde.dims) {
            (_, 3) => 8,
            (PdeKind::Heat, _) => 32,
            (PdeKind::AllenCahn, _) => 48,
            (PdeKind::Burgers, _) => 64,
        })
    }

    pub fn reference_sample_n(&self) -> usize {
        self.reference
            .sample_n
            .unwrap_or(if self.pde.dims == 3 { 24 } else { 256 })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        self.pde_spec()?;
        let ic = self.initial_condition();
        if ic.dims() != self.pde.dims {
            return bad(format!("ic `{}` is {}-dimensional, pde has dims = {}", ic.name(), ic.dims(), self.pde.dims));
        }
        let lengths = self.domain_lengths();
        if lengths.len() != self.pde.dims || lengths.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return bad("`lengths` needs one positive period per dimension".into());
        }
        if self.grid_n() < 2 {
            return bad("`grid.n_per_dim` must be at least 2".into());
        }
        if !(self.time.dt > 0.0) || !(self.time.t_final >= 0.0) {
            return bad("`time.dt` must be positive and `time.t_final` non-negative".into());
        }
        if self.time.checkpoint_stride == 0 {
            return bad("`time.checkpoint_stride` must be at least 1".into());
        }
        let arch = self.arch();
        arch.validate()?;
        match self.method {
            Method::TengEuler | Method::TengHeun | Method::TengRk4 => self.stepper.validate(arch.param_count())?,
            Method::TdvpRk4 => self.tdvp.lstsq.validate()?,
            Method::ObtiAdam => {
                if self.obti.n_opt_iters == 0 || !(self.obti.lr0 > 0.0) {
                    return bad("`obti` needs n_opt_iters ≥ 1 and lr0 > 0".into());
                }
            }
        }
        if self.init_checkpoint.is_none() {
            self.fit.validate(arch.param_count())?;
        }
        if !(self.reference.dt_ref > 0.0) {
            return bad("`reference.dt_ref` must be positive".into());
        }
        let kmax = self.reference_kmax();
        if self.reference_sample_n() < 2 * kmax + 1 {
            return bad(format!("`reference.sample_n` must be at least {} for kmax = {kmax}", 2 * kmax + 1));
        }
        Ok(())
    }
}
