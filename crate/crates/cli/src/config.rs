//! The run configuration: one JSON document, every section optional,
//! unknown keys rejected. Command-line flags override file values.

use std::path::Path;

use fraccap_core::extension::PhiOptions;
use fraccap_core::minimizer::{AnnealConfig, BlowupOptions};
use fraccap_core::{KernelParams, QuadratureConfig, Window};
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    /// Lower corner of the sampling window; centred on the origin if absent.
    pub window_min: Option<Vec<f64>>,
    pub side: f64,
    pub resolution: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { window_min: None, side: 2.0, resolution: 128 }
    }
}

impl GridSpec {
    pub fn window(&self, n: usize) -> Result<Window, Failure> {
        let min = self.window_min.clone().unwrap_or_else(|| vec![-0.5 * self.side; n]);
        if min.len() != n {
            return Err(Failure::config(format!("grid.window_min has {} entries for dimension {n}", min.len())));
        }
        Ok(Window::new(min, self.side)?)
    }
}

fn default_kernel() -> KernelParams {
    KernelParams { n: 2, s: 0.5 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub kernel: KernelParams,
    pub quadrature: QuadratureConfig,
    pub grid: GridSpec,
    /// Relative adhesion coefficient.
    pub sigma: f64,
    /// The one seed of a run; it also drives the annealer.
    pub seed: u64,
    /// Root tolerance for the contact-angle solver.
    pub young_tol: f64,
    pub anneal: AnnealConfig,
    pub phi: PhiOptions,
    pub blowup: BlowupOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            kernel: default_kernel(),
            quadrature: QuadratureConfig::default(),
            grid: GridSpec::default(),
            sigma: 0.0,
            seed: 0,
            young_tol: 1e-8,
            anneal: AnnealConfig::default(),
            phi: PhiOptions::default(),
            blowup: BlowupOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig, Failure> {
        let Some(path) = path else { return Ok(RunConfig::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::config(format!("config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), Failure> {
        self.kernel.validate()?;
        self.quadrature.validate()?;
        self.anneal.validate()?;
        if !(self.sigma > -1.0 && self.sigma < 1.0) {
            return Err(Failure::config("sigma must lie in (-1, 1)"));
        }
        if self.grid.resolution == 0 {
            return Err(Failure::config("grid.resolution must be positive"));
        }
        if !(self.young_tol > 0.0 && self.young_tol < 0.1) {
            return Err(Failure::config("young_tol must lie in (0, 0.1)"));
        }
        Ok(())
    }
}
