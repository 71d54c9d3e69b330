//! Experiment configuration: TOML with dotted section keys, every key
//! optional with a documented default.
//!
//! ```toml
//! crystal.length = 5e-3
//! pump.birth_zone_list = [1, 2, 5, 10, 17, 25, 34, 50]
//! slits.separation = 250e-6
//! acquisition.frames = 100000
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::biphoton::{BiphotonState, CrystalParams};
use crate::detector::AcquisitionParams;
use crate::error::{Error, Result};
use crate::fit::{FitTolerances, FringeGeometry};
use crate::grid::Grid1D;
use crate::io::{sha256_hex, Provenance};
use crate::propagation::{OpticalTrain, PipelineGrids, SlitParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrystalSection {
    /// Crystal length (m).
    pub length: f64,
    /// Pump wavelength (m).
    pub pump_wavelength: f64,
    /// Index entering the pump wavenumber.
    pub refractive_index: f64,
}

impl Default for CrystalSection {
    fn default() -> Self {
        let c = CrystalParams::default();
        Self {
            length: c.length,
            pump_wavelength: c.pump_wavelength,
            refractive_index: c.refractive_index,
        }
    }
}

/// Pump waists, given at most one way: a single waist, a list of waists, or
/// a list of birth-zone numbers. With none given, `birth_zone_list`
/// defaults to `[10, 17, 34]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PumpSection {
    pub w0: Option<f64>,
    pub w0_list: Option<Vec<f64>>,
    pub birth_zone_list: Option<Vec<f64>>,
    /// Pairing phase (rad).
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpticsSection {
    pub f2: f64,
    pub f: f64,
    pub signal_wavelength: f64,
}

impl Default for OpticsSection {
    fn default() -> Self {
        let t = OpticalTrain::default();
        Self {
            f2: t.f2,
            f: t.f,
            signal_wavelength: t.signal_wavelength,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlitsSection {
    /// Center-to-center distance (m).
    pub separation: f64,
    /// Opening width (m).
    pub opening: f64,
}

impl Default for SlitsSection {
    fn default() -> Self {
        let s = SlitParams::default();
        Self {
            separation: s.separation,
            opening: s.opening,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridsSection {
    pub slit_n: usize,
    pub slit_extent: f64,
    pub det_n: usize,
    /// Detector extent; when absent the detector grid is reciprocal to the
    /// slit grid, `f * lambda / slit_spacing` wide.
    pub det_extent: Option<f64>,
}

impl Default for GridsSection {
    fn default() -> Self {
        Self {
            slit_n: 1024,
            slit_extent: 6.4e-3,
            det_n: 2048,
            det_extent: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionSection {
    pub frames: usize,
    pub nx: usize,
    pub ny: usize,
    pub pitch: f64,
    pub mu_pairs: f64,
    pub efficiency: f64,
    pub background: f64,
    pub y_sigma: f64,
    pub seed: u64,
}

impl Default for AcquisitionSection {
    fn default() -> Self {
        let a = AcquisitionParams::default();
        Self {
            frames: a.frames,
            nx: a.nx,
            ny: a.ny,
            pitch: a.pixel_pitch,
            mu_pairs: a.mean_pairs,
            efficiency: a.efficiency,
            background: a.background_rate,
            y_sigma: a.y_sigma,
            seed: a.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub relative_cost: f64,
    pub gradient: f64,
    pub max_iterations: usize,
    /// Shift profiles so their centroid sits at zero before fitting.
    pub center: bool,
}

impl Default for FitSection {
    fn default() -> Self {
        let t = FitTolerances::default();
        Self {
            relative_cost: t.relative_cost,
            gradient: t.gradient,
            max_iterations: t.max_iterations,
            center: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepRoute {
    Noiseless,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub route: SweepRoute,
    /// `V_m` above this is regime I.
    pub regime_high: f64,
    /// `V_m` below this is regime III.
    pub regime_low: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            route: SweepRoute::Noiseless,
            regime_high: 0.8,
            regime_low: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyticSection {
    pub theta_steps: usize,
    pub g2_thetas: Vec<f64>,
    pub g2_n: usize,
    pub g2_extent: f64,
}

impl Default for AnalyticSection {
    fn default() -> Self {
        Self {
            theta_steps: 1000,
            g2_thetas: vec![0.0, std::f64::consts::FRAC_PI_8, std::f64::consts::FRAC_PI_4],
            g2_n: 64,
            g2_extent: 1.0e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub directory: PathBuf,
    /// Any of `csv`, `bpf2`.
    pub formats: Vec<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            formats: vec!["csv".into(), "bpf2".into()],
        }
    }
}

impl OutputSection {
    pub fn wants(&self, format: &str) -> bool {
        self.formats.iter().any(|f| f == format)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub crystal: CrystalSection,
    pub pump: PumpSection,
    pub optics: OpticsSection,
    pub slits: SlitsSection,
    pub grids: GridsSection,
    pub acquisition: AcquisitionSection,
    pub fit: FitSection,
    pub sweep: SweepSection,
    pub analytic: AnalyticSection,
    pub output: OutputSection,
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(path, format!("must be positive and finite, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            let span = e.span().map(|s| text[s].to_string()).unwrap_or_default();
            Error::config(if span.is_empty() { "<document>".into() } else { span }, msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }

    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("configuration always serializes").as_bytes())
    }

    pub fn provenance(&self) -> Provenance {
        Provenance { config_hash: self.hash() }
    }

    /// Checks every field against the preconditions of the module consuming it.
    pub fn validate(&self) -> Result<()> {
        positive("crystal.length", self.crystal.length)?;
        positive("crystal.pump_wavelength", self.crystal.pump_wavelength)?;
        positive("crystal.refractive_index", self.crystal.refractive_index)?;
        let given = [self.pump.w0.is_some(), self.pump.w0_list.is_some(), self.pump.birth_zone_list.is_some()];
        if given.iter().filter(|g| **g).count() > 1 {
            return Err(Error::config("pump", "set only one of w0, w0_list, birth_zone_list"));
        }
        if let Some(w) = self.pump.w0 {
            positive("pump.w0", w)?;
        }
        for (key, list) in [("pump.w0_list", &self.pump.w0_list), ("pump.birth_zone_list", &self.pump.birth_zone_list)] {
            if let Some(l) = list {
                if l.is_empty() {
                    return Err(Error::config(key, "must not be empty"));
                }
                for (i, v) in l.iter().enumerate() {
                    positive(&format!("{key}[{i}]"), *v)?;
                }
            }
        }
        if !self.pump.phi.is_finite() {
            return Err(Error::config("pump.phi", "must be finite"));
        }
        positive("optics.f2", self.optics.f2)?;
        positive("optics.f", self.optics.f)?;
        positive("optics.signal_wavelength", self.optics.signal_wavelength)?;
        positive("slits.opening", self.slits.opening)?;
        positive("slits.separation", self.slits.separation)?;
        if self.slits.separation <= self.slits.opening {
            return Err(Error::config(
                "slits.separation",
                format!("must exceed slits.opening = {} so the slits are disjoint", self.slits.opening),
            ));
        }
        Grid1D::new(self.grids.slit_n, self.grids.slit_extent)
            .map_err(|e| Error::config("grids.slit_n", e.to_string()))?;
        if self.grids.slit_extent < self.slits.separation + self.slits.opening {
            return Err(Error::config("grids.slit_extent", "must cover both slits"));
        }
        if let Some(e) = self.grids.det_extent {
            positive("grids.det_extent", e)?;
        } else if self.grids.det_n < self.grids.slit_n || (self.grids.det_n - self.grids.slit_n) % 2 != 0 {
            return Err(Error::config(
                "grids.det_n",
                "a reciprocal detector grid needs det_n >= slit_n with an even difference; set grids.det_extent otherwise",
            ));
        }
        let det = self.pipeline_grids().map_err(|e| match e {
            Error::Domain(m) => Error::config("grids.det_n", m),
            other => other,
        })?;
        crate::propagation::check_detector_sampling(&self.train(), &self.slit_params(), &det.detector)?;
        let acq = self.acquisition_params();
        acq.validate()?;
        if det.detector.extent() < acq.nx as f64 * acq.pixel_pitch {
            return Err(Error::config(
                "acquisition.nx",
                format!(
                    "camera width {:.3e} m exceeds the detector grid extent {:.3e} m",
                    acq.nx as f64 * acq.pixel_pitch,
                    det.detector.extent()
                ),
            ));
        }
        if acq.frames > u32::MAX as usize || acq.nx > u32::MAX as usize || acq.ny > u32::MAX as usize {
            return Err(Error::config("acquisition.frames", "must fit in 32 bits"));
        }
        positive("fit.relative_cost", self.fit.relative_cost)?;
        positive("fit.gradient", self.fit.gradient)?;
        if self.fit.max_iterations == 0 {
            return Err(Error::config("fit.max_iterations", "must be at least 1"));
        }
        let (lo, hi) = (self.sweep.regime_low, self.sweep.regime_high);
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
            return Err(Error::config("sweep.regime_low", "need 0 <= regime_low < regime_high <= 1"));
        }
        if self.analytic.theta_steps < 2 {
            return Err(Error::config("analytic.theta_steps", "must be at least 2"));
        }
        for (i, t) in self.analytic.g2_thetas.iter().enumerate() {
            if !(0.0..=std::f64::consts::FRAC_PI_2).contains(t) {
                return Err(Error::config(format!("analytic.g2_thetas[{i}]"), "must lie in [0, pi/2]"));
            }
        }
        if self.analytic.g2_n < 2 {
            return Err(Error::config("analytic.g2_n", "must be at least 2"));
        }
        positive("analytic.g2_extent", self.analytic.g2_extent)?;
        for (i, f) in self.output.formats.iter().enumerate() {
            if f != "csv" && f != "bpf2" {
                return Err(Error::config(format!("output.formats[{i}]"), format!("unknown format `{f}`")));
            }
        }
        Ok(())
    }

    pub fn crystal_params(&self) -> CrystalParams {
        CrystalParams {
            length: self.crystal.length,
            pump_wavelength: self.crystal.pump_wavelength,
            refractive_index: self.crystal.refractive_index,
        }
    }

    pub fn b(&self) -> f64 {
        self.crystal_params().b()
    }

    pub fn train(&self) -> OpticalTrain {
        OpticalTrain {
            f2: self.optics.f2,
            f: self.optics.f,
            signal_wavelength: self.optics.signal_wavelength,
        }
    }

    pub fn slit_params(&self) -> SlitParams {
        SlitParams {
            separation: self.slits.separation,
            opening: self.slits.opening,
        }
    }

    pub fn geometry(&self) -> FringeGeometry {
        FringeGeometry {
            opening: self.slits.opening,
            separation: self.slits.separation,
            focal: self.optics.f,
            wavelength: self.optics.signal_wavelength,
        }
    }

    pub fn tolerances(&self) -> FitTolerances {
        FitTolerances {
            relative_cost: self.fit.relative_cost,
            gradient: self.fit.gradient,
            max_iterations: self.fit.max_iterations,
        }
    }

    pub fn pipeline_grids(&self) -> Result<PipelineGrids> {
        let slit = Grid1D::new(self.grids.slit_n, self.grids.slit_extent)?;
        let detector = match self.grids.det_extent {
            Some(e) => Grid1D::new(self.grids.det_n, e)?,
            None => Grid1D::new(self.grids.det_n, self.train().f_lambda() / slit.spacing())?,
        };
        Ok(PipelineGrids { slit, detector })
    }

    pub fn acquisition_params(&self) -> AcquisitionParams {
        let a = &self.acquisition;
        AcquisitionParams {
            frames: a.frames,
            nx: a.nx,
            ny: a.ny,
            pixel_pitch: a.pitch,
            mean_pairs: a.mu_pairs,
            efficiency: a.efficiency,
            background_rate: a.background,
            y_sigma: a.y_sigma,
            seed: a.seed,
        }
    }

    /// Pump waists in ascending order.
    pub fn waists(&self) -> Vec<f64> {
        let b = self.b();
        let mut w = match (&self.pump.w0, &self.pump.w0_list, &self.pump.birth_zone_list) {
            (Some(w), _, _) => vec![*w],
            (_, Some(l), _) => l.clone(),
            (_, _, Some(n)) => n.iter().map(|n| n * b).collect(),
            _ => [10.0, 17.0, 34.0].iter().map(|n| n * b).collect(),
        };
        w.sort_by(f64::total_cmp);
        w
    }

    pub fn states(&self) -> Result<Vec<BiphotonState>> {
        let b = self.b();
        self.waists()
            .into_iter()
            .map(|w| BiphotonState::new(w, b, self.optics.signal_wavelength))
            .collect()
    }
}
