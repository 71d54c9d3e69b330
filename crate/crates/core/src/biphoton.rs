//! Double-Gaussian two-photon state and its birth-zone characterization.
//!
//! The state is fully described by the pump waist `w0` and the crystal
//! length scale `b`; their ratio is the birth-zone number. Amplitudes are
//! real and non-negative (the global phase is fixed at zero) and are
//! normalized so that `|amplitude|^2` integrates to one over `D` transverse
//! dimensions per photon.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{require_positive, Error, Result};
use crate::grid::Axis;

/// Nonlinear crystal geometry that fixes the birth-zone length scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrystalParams {
    pub length: f64,
    pub pump_wavelength: f64,
    pub refractive_index: f64,
}

impl CrystalParams {
    pub fn new(length: f64, pump_wavelength: f64, refractive_index: f64) -> Result<Self> {
        require_positive("crystal length", length)?;
        require_positive("pump wavelength", pump_wavelength)?;
        require_positive("refractive index", refractive_index)?;
        Ok(Self {
            length,
            pump_wavelength,
            refractive_index,
        })
    }

    /// Pump wavenumber inside the crystal, `2 pi n / lambda`.
    pub fn pump_wavenumber(&self) -> f64 {
        2.0 * PI * self.refractive_index / self.pump_wavelength
    }

    pub fn b(&self) -> f64 {
        (self.length / (3.0 * self.pump_wavenumber())).sqrt()
    }
}

impl Default for CrystalParams {
    fn default() -> Self {
        Self {
            length: 5.0e-3,
            pump_wavelength: 405.0e-9,
            refractive_index: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpParams {
    pub waist: f64,
    /// Pairing phase between the paired and anti-paired slit terms.
    pub phase: f64,
}

impl PumpParams {
    pub fn new(waist: f64, phase: f64) -> Result<Self> {
        require_positive("pump waist", waist)?;
        if !phase.is_finite() {
            return Err(Error::Domain(format!("pump phase must be finite, got {phase}")));
        }
        Ok(Self { waist, phase })
    }
}

pub fn crystal_parameter_b(length: f64, pump_wavenumber: f64) -> Result<f64> {
    require_positive("crystal length", length)?;
    require_positive("pump wavenumber", pump_wavenumber)?;
    Ok((length / (3.0 * pump_wavenumber)).sqrt())
}

pub fn birth_zone_number(w0: f64, b: f64) -> Result<f64> {
    require_positive("pump waist", w0)?;
    require_positive("crystal parameter b", b)?;
    Ok(w0 / b)
}

/// Schmidt number of the full two-dimensional transverse state.
pub fn schmidt_number(n: f64) -> Result<f64> {
    require_positive("birth-zone number", n)?;
    let s = n + 1.0 / n;
    Ok(s * s / 4.0)
}

/// Schmidt number per transverse axis; its square is [`schmidt_number`].
pub fn schmidt_number_1d(n: f64) -> Result<f64> {
    require_positive("birth-zone number", n)?;
    Ok((n + 1.0 / n) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BirthZoneStats {
    pub n: f64,
    pub k: f64,
}

impl BirthZoneStats {
    pub fn from_n(n: f64) -> Result<Self> {
        Ok(Self {
            n,
            k: schmidt_number(n)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiphotonState {
    w0: f64,
    b: f64,
    signal_wavelength: f64,
}

#[inline]
fn dot<const D: usize>(u: &[f64; D], v: &[f64; D]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

#[inline]
fn sum_sq<const D: usize>(u: &[f64; D], v: &[f64; D], sign: f64) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a + sign * b).powi(2)).sum()
}

impl BiphotonState {
    pub fn new(w0: f64, b: f64, signal_wavelength: f64) -> Result<Self> {
        require_positive("pump waist", w0)?;
        require_positive("crystal parameter b", b)?;
        require_positive("signal wavelength", signal_wavelength)?;
        Ok(Self {
            w0,
            b,
            signal_wavelength,
        })
    }

    pub fn from_params(crystal: &CrystalParams, pump: &PumpParams, signal_wavelength: f64) -> Result<Self> {
        Self::new(pump.waist, crystal.b(), signal_wavelength)
    }

    pub fn with_birth_zone_number(n: f64, b: f64, signal_wavelength: f64) -> Result<Self> {
        require_positive("birth-zone number", n)?;
        Self::new(n * b, b, signal_wavelength)
    }

    pub fn w0(&self) -> f64 {
        self.w0
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn signal_wavelength(&self) -> f64 {
        self.signal_wavelength
    }

    pub fn birth_zone_number(&self) -> f64 {
        self.w0 / self.b
    }

    pub fn stats(&self) -> BirthZoneStats {
        let n = self.birth_zone_number();
        BirthZoneStats {
            n,
            k: (n + 1.0 / n).powi(2) / 4.0,
        }
    }

    /// Peak momentum amplitude for `dims` transverse dimensions per photon.
    pub fn momentum_norm(&self, dims: usize) -> f64 {
        (self.w0 * self.b / PI).powf(dims as f64 / 2.0)
    }

    /// Peak position amplitude for `dims` transverse dimensions per photon.
    pub fn position_norm(&self, dims: usize) -> f64 {
        (PI * self.w0 * self.b).powf(-(dims as f64) / 2.0)
    }

    pub fn momentum_amplitude<const D: usize>(&self, q1: [f64; D], q2: [f64; D]) -> f64 {
        let s = sum_sq(&q1, &q2, 1.0);
        let d = sum_sq(&q1, &q2, -1.0);
        self.momentum_norm(D) * (-self.w0 * self.w0 * s / 4.0 - self.b * self.b * d / 4.0).exp()
    }

    pub fn position_amplitude<const D: usize>(&self, x1: [f64; D], x2: [f64; D]) -> f64 {
        let s = sum_sq(&x1, &x2, 1.0);
        let d = sum_sq(&x1, &x2, -1.0);
        self.position_norm(D)
            * (-s / (4.0 * self.w0 * self.w0) - d / (4.0 * self.b * self.b)).exp()
    }

    /// Momentum amplitude written in birth-zone variables; identical to
    /// [`Self::momentum_amplitude`] after expansion.
    pub fn birthzone_amplitude<const D: usize>(&self, q1: [f64; D], q2: [f64; D]) -> f64 {
        birthzone_amplitude(q1, q2, self.birth_zone_number(), self.b) * self.momentum_norm(D)
    }

    /// Exponential exponent of the momentum amplitude in one dimension.
    #[inline]
    pub(crate) fn momentum_exponent_1d(&self, q1: f64, q2: f64) -> f64 {
        let s = q1 + q2;
        let d = q1 - q2;
        -(self.w0 * self.w0 * s * s + self.b * self.b * d * d) / 4.0
    }
}

/// Unnormalized birth-zone amplitude: a self term for each photon and a
/// coupling term that vanishes when `n == 1`.
pub fn birthzone_amplitude<const D: usize>(q1: [f64; D], q2: [f64; D], n: f64, b: f64) -> f64 {
    let b2 = b * b;
    let own1 = -b2 * (n * n + 1.0) * dot(&q1, &q1) / 4.0;
    let own2 = -b2 * (n * n + 1.0) * dot(&q2, &q2) / 4.0;
    let coupling = -b2 * (n * n - 1.0) * dot(&q1, &q2) / 2.0;
    // Summed in the exponent so large self terms cannot meet an overflowing coupling.
    (own1 + own2 + coupling).exp()
}

/// Squared singular values of a sampled one-dimensional momentum amplitude,
/// normalized to unit sum and sorted in decreasing order.
#[derive(Debug, Clone)]
pub struct SchmidtSpectrum {
    pub weights: Vec<f64>,
}

impl SchmidtSpectrum {
    pub fn from_matrix(m: DMatrix<f64>) -> Self {
        let svd = m.svd(false, false);
        let mut weights: Vec<f64> = svd.singular_values.iter().map(|s| s * s).collect();
        weights.sort_by(|a, b| b.total_cmp(a));
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Self { weights }
    }

    /// Samples the one-dimensional momentum amplitude on `axis` for both photons.
    pub fn from_state(state: &BiphotonState, axis: Axis) -> Self {
        Self::from_matrix(sample_momentum_matrix(state, axis))
    }

    pub fn effective_number(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// Ratio of the second to the first singular value.
    pub fn singular_ratio(&self) -> f64 {
        match self.weights.as_slice() {
            [first, second, ..] if *first > 0.0 => (second / first).sqrt(),
            _ => 0.0,
        }
    }
}

pub fn sample_momentum_matrix(state: &BiphotonState, axis: Axis) -> DMatrix<f64> {
    let q = axis.coords();
    DMatrix::from_fn(axis.n, axis.n, |i, j| state.momentum_amplitude([q[i]], [q[j]]))
}

/// Momentum axis wide enough for the slowly decaying direction and fine
/// enough for the fast one.
pub fn momentum_axis_for(state: &BiphotonState, n: usize, sigmas: f64) -> Axis {
    // |Psi|^2 along a principal axis has standard deviation 1/(sqrt2 * width).
    let half = sigmas / (std::f64::consts::SQRT_2 * state.w0.min(state.b));
    Axis::new(n, 2.0 * half / n as f64)
}
