//! Two-qubit slit model: each photon passes the left or right slit, and the
//! pair is a superposition of anti-paired and paired terms weighted by
//! `cos(theta)` and `sin(theta)` with relative phase `phi`.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propagation::{Field2D, Plane, SlitParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlitQubitState {
    pub theta: f64,
    pub phi: f64,
}

impl SlitQubitState {
    pub fn new(theta: f64, phi: f64) -> Result<Self> {
        if !(0.0..=FRAC_PI_2).contains(&theta) || !phi.is_finite() {
            return Err(Error::Domain(format!(
                "theta must lie in [0, pi/2] and phi must be finite, got ({theta}, {phi})"
            )));
        }
        Ok(Self { theta, phi })
    }

    pub fn visibilities(&self) -> Visibilities {
        visibilities_from_theta(self.theta, self.phi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Visibilities {
    pub v_minus: f64,
    pub v_plus: f64,
    pub v_m: f64,
    pub v_12: f64,
}

impl Visibilities {
    pub fn complementarity(&self) -> f64 {
        self.v_m * self.v_m + self.v_12 * self.v_12
    }
}

pub fn visibilities_from_theta(theta: f64, phi: f64) -> Visibilities {
    let (s, c) = theta.sin_cos();
    let v_minus = c * c;
    let v_plus = s * s;
    Visibilities {
        v_minus,
        v_plus,
        v_m: (2.0 * theta).sin() * phi.cos(),
        v_12: v_minus - v_plus,
    }
}

/// Unnormalized coincidence density with per-photon phases `k d x / (2 f)`.
pub fn g2_pattern(x1: f64, x2: f64, state: &SlitQubitState, k: f64, d: f64, f: f64) -> Result<f64> {
    let v = state.visibilities();
    let p1 = k * d * x1 / (2.0 * f);
    let p2 = k * d * x2 / (2.0 * f);
    let g = 1.0 + v.v_minus * (p1 - p2).cos() + v.v_plus * (p1 + p2).cos() + v.v_m * (p1.cos() + p2.cos());
    if g < -1e-12 {
        return Err(Error::Numerical(format!("negative coincidence density {g} at ({x1}, {x2})")));
    }
    Ok(g.max(0.0))
}

/// Projects a pre-aperture slit-plane field onto the left/right basis of
/// both photons and reads off the anti-paired/paired mixing angle.
pub fn theta_phi_from_field(slit_field: &Field2D, slits: &SlitParams) -> Result<SlitQubitState> {
    if slit_field.plane != Plane::Slit {
        return Err(Error::Precondition("qubit projection needs a slit-plane field".into()));
    }
    let idx1: Vec<Option<usize>> = slit_field.axis1.coords().iter().map(|&u| slits.slit_index(u)).collect();
    let idx2: Vec<Option<usize>> = slit_field.axis2.coords().iter().map(|&u| slits.slit_index(u)).collect();
    let mut amp = [[num_complex::Complex64::new(0.0, 0.0); 2]; 2];
    for (i, a) in idx1.iter().enumerate() {
        let Some(a) = a else { continue };
        for (j, b) in idx2.iter().enumerate() {
            if let Some(b) = b {
                amp[*a][*b] += slit_field.get(i, j);
            }
        }
    }
    let anti = amp[0][1] + amp[1][0];
    let paired = amp[0][0] + amp[1][1];
    let scale = slit_field.axis1.spacing * slit_field.axis2.spacing;
    if anti.norm() * scale < 1e-12 && paired.norm() * scale < 1e-12 {
        return Err(Error::Degenerate("no amplitude inside the slit pairs".into()));
    }
    let theta = paired.norm().atan2(anti.norm());
    let phi = if anti.norm() > 0.0 && paired.norm() > 0.0 { (paired / anti).arg() } else { 0.0 };
    SlitQubitState::new(theta, phi)
}
