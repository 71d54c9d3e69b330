//! Fourier-optics train from the crystal to the camera.
//!
//! A first lens maps transverse momentum `q` onto slit-plane position
//! `s = q f2 / k`. After the double-slit mask a second lens of focal length
//! `f` maps slit-plane position onto detector position through the kernel
//! `exp(-2 pi i x s / (f lambda))`, applied per photon.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::biphoton::BiphotonState;
use crate::error::{require_positive, Error, Result};
use crate::grid::{Axis, Grid1D};
use crate::profile::Jpd2D;

/// Probability allowed to fall outside the slit-plane grid.
pub const TRUNCATION_TOLERANCE: f64 = 1e-3;

/// Two identical slits centered at `+-separation / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlitParams {
    /// Center-to-center distance.
    pub separation: f64,
    pub opening: f64,
}

impl SlitParams {
    pub fn new(separation: f64, opening: f64) -> Result<Self> {
        require_positive("slit opening", opening)?;
        require_positive("slit separation", separation)?;
        if separation <= opening {
            return Err(Error::Domain(format!(
                "slits overlap: separation {separation} must exceed opening {opening}"
            )));
        }
        Ok(Self { separation, opening })
    }

    pub fn centers(&self) -> [f64; 2] {
        [-self.separation / 2.0, self.separation / 2.0]
    }

    /// Closed-interval double-slit transmission at slit-plane position `u`.
    pub fn transmits(&self, u: f64) -> bool {
        self.slit_index(u).is_some()
    }

    /// Which slit (0 left, 1 right) transmits `u`, if any. Edges are closed
    /// up to the rounding of `u - center`.
    pub fn slit_index(&self, u: f64) -> Option<usize> {
        let h = self.opening / 2.0;
        self.centers().iter().position(|c| {
            let ulps = 4.0 * f64::EPSILON * u.abs().max(c.abs()).max(h);
            (u - c).abs() <= h + ulps
        })
    }
}

impl Default for SlitParams {
    fn default() -> Self {
        Self {
            separation: 250e-6,
            opening: 150e-6,
        }
    }
}

pub fn slit_aperture(u: f64, slits: &SlitParams) -> u8 {
    slits.transmits(u) as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticalTrain {
    /// Focal length mapping crystal momentum onto the slit plane.
    pub f2: f64,
    /// Focal length mapping the slit plane onto the detector.
    pub f: f64,
    pub signal_wavelength: f64,
}

impl OpticalTrain {
    pub fn new(f2: f64, f: f64, signal_wavelength: f64) -> Result<Self> {
        require_positive("f2", f2)?;
        require_positive("f", f)?;
        require_positive("signal wavelength", signal_wavelength)?;
        Ok(Self { f2, f, signal_wavelength })
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.signal_wavelength
    }

    /// Momentum per unit slit-plane position.
    pub fn slit_scale(&self) -> f64 {
        self.wavenumber() / self.f2
    }

    /// Detector-plane length `f * lambda`.
    pub fn f_lambda(&self) -> f64 {
        self.f * self.signal_wavelength
    }

    pub fn fringe_period(&self, slits: &SlitParams) -> f64 {
        self.f_lambda() / slits.separation
    }

    pub fn envelope_zero(&self, slits: &SlitParams) -> f64 {
        self.f_lambda() / slits.opening
    }

    /// Detector grid whose spacing is reciprocal to the slit grid, zero
    /// padding the slit plane by `pad`.
    pub fn conjugate_grid(&self, slit_grid: &Grid1D, pad: usize) -> Result<Grid1D> {
        Grid1D::new(slit_grid.n() * pad, self.f_lambda() / slit_grid.spacing())
    }

    fn is_conjugate(&self, slit: Axis, det: Axis) -> bool {
        det.n >= slit.n
            && (det.n - slit.n) % 2 == 0
            && ((det.spacing * slit.spacing * det.n as f64) / self.f_lambda() - 1.0).abs() < 1e-9
    }
}

impl Default for OpticalTrain {
    fn default() -> Self {
        Self {
            f2: 0.10,
            f: 0.05,
            signal_wavelength: 810e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Plane {
    Momentum,
    Slit,
    Detector,
}

/// Complex two-photon amplitude on a square grid, row-major in photon one.
#[derive(Debug, Clone)]
pub struct Field2D {
    pub values: Vec<Complex64>,
    pub axis1: Axis,
    pub axis2: Axis,
    pub plane: Plane,
}

impl Field2D {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.values[i * self.axis2.n + j]
    }

    /// Discrete integral of `|values|^2`.
    pub fn probability(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.axis1.spacing * self.axis2.spacing
    }

    pub fn normalize(&mut self) -> Result<f64> {
        let p = self.probability();
        if !(p.is_finite() && p > 0.0) {
            return Err(Error::Degenerate(format!("field carries probability {p}")));
        }
        let s = 1.0 / p.sqrt();
        self.values.iter_mut().for_each(|v| *v *= s);
        Ok(p)
    }

    pub fn to_matrix(&self) -> DMatrix<Complex64> {
        DMatrix::from_row_slice(self.axis1.n, self.axis2.n, &self.values)
    }
}

/// Samples the momentum amplitude at slit-plane coordinates without any
/// truncation check, normalized to unit probability over the continuous plane.
pub fn sample_slit_plane(state: &BiphotonState, axis: Axis, train: &OpticalTrain) -> Field2D {
    let kappa = train.slit_scale();
    let q: Vec<f64> = axis.coords().iter().map(|s| s * kappa).collect();
    // Jacobian of q = kappa s keeps the continuous integral at one.
    let norm = state.momentum_norm(1) * kappa;
    let n = axis.n;
    let mut values = vec![Complex64::new(0.0, 0.0); n * n];
    values.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (j, v) in row.iter_mut().enumerate() {
            *v = Complex64::new(norm * state.momentum_exponent_1d(q[i], q[j]).exp(), 0.0);
        }
    });
    Field2D {
        values,
        axis1: axis,
        axis2: axis,
        plane: Plane::Slit,
    }
}

/// Slit-plane field on `grid`, normalized over the grid.
///
/// Fails when more than [`TRUNCATION_TOLERANCE`] of the probability lies
/// outside the grid.
pub fn momentum_to_slit_plane(state: &BiphotonState, grid: &Grid1D, train: &OpticalTrain) -> Result<Field2D> {
    let mut field = sample_slit_plane(state, grid.axis(), train);
    let captured = field.probability();
    if captured < 1.0 - TRUNCATION_TOLERANCE {
        return Err(Error::config(
            "grids.slit_extent",
            format!(
                "slit-plane grid of {:.3e} m captures only {:.5} of the probability at N = {:.3}; widen the extent",
                grid.extent(),
                captured,
                state.birth_zone_number()
            ),
        ));
    }
    field.normalize()?;
    Ok(field)
}

/// Elementwise double-slit mask on both photons; not renormalized.
pub fn apply_double_slit(field: &Field2D, slits: &SlitParams) -> Result<Field2D> {
    if field.plane != Plane::Slit {
        return Err(Error::Precondition("double slit applies to slit-plane fields".into()));
    }
    let m1: Vec<bool> = field.axis1.coords().iter().map(|&u| slits.transmits(u)).collect();
    let m2: Vec<bool> = field.axis2.coords().iter().map(|&u| slits.transmits(u)).collect();
    let n2 = field.axis2.n;
    let values = field
        .values
        .iter()
        .enumerate()
        .map(|(idx, v)| if m1[idx / n2] && m2[idx % n2] { *v } else { Complex64::new(0.0, 0.0) })
        .collect();
    Ok(Field2D {
        values,
        axis1: field.axis1,
        axis2: field.axis2,
        plane: Plane::Slit,
    })
}

/// Row-by-row 1D FFT with the half-offset phase corrections for symmetric
/// grids. `data` is `rows x p`, each row already zero padded.
fn centered_fft_rows(data: &mut [Complex64], p: usize) {
    let c = (p as f64 - 1.0) / 2.0;
    let w = -2.0 * PI / p as f64;
    let pre: Vec<Complex64> = (0..p).map(|j| Complex64::from_polar(1.0, -w * c * j as f64)).collect();
    let post: Vec<Complex64> = (0..p)
        .map(|m| Complex64::from_polar(1.0, -w * (c * m as f64 - c * c)))
        .collect();
    let fft = FftPlanner::new().plan_fft_forward(p);
    data.par_chunks_mut(p).for_each(|row| {
        row.iter_mut().zip(&pre).for_each(|(v, f)| *v *= f);
        fft.process(row);
        row.iter_mut().zip(&post).for_each(|(v, f)| *v *= f);
    });
}

fn transpose(data: &[Complex64], rows: usize, cols: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

fn fft_route(field: &Field2D, p: usize) -> Vec<Complex64> {
    let n = field.axis1.n;
    let off = (p - n) / 2;
    let mut buf = vec![Complex64::new(0.0, 0.0); p * p];
    // Only rows that carry amplitude need transforming.
    for i in 0..n {
        let src = &field.values[i * n..(i + 1) * n];
        buf[(i + off) * p + off..(i + off) * p + off + n].copy_from_slice(src);
    }
    centered_fft_rows(&mut buf, p);
    let mut t = transpose(&buf, p, p);
    centered_fft_rows(&mut t, p);
    transpose(&t, p, p)
}

/// Indices carrying non-zero amplitude along one axis of the field.
fn support(field: &Field2D, along_rows: bool) -> Vec<usize> {
    let (n1, n2) = (field.axis1.n, field.axis2.n);
    if along_rows {
        (0..n1)
            .filter(|&i| field.values[i * n2..(i + 1) * n2].iter().any(|v| *v != Complex64::new(0.0, 0.0)))
            .collect()
    } else {
        (0..n2)
            .filter(|&j| (0..n1).any(|i| field.values[i * n2 + j] != Complex64::new(0.0, 0.0)))
            .collect()
    }
}

fn kernel(det: Axis, src: &[f64], f_lambda: f64) -> DMatrix<Complex64> {
    let x = det.coords();
    DMatrix::from_fn(det.n, src.len(), |m, j| {
        Complex64::from_polar(1.0, -2.0 * PI * x[m] * src[j] / f_lambda)
    })
}

fn direct_route(field: &Field2D, det: Axis, f_lambda: f64) -> Vec<Complex64> {
    let rows = support(field, true);
    let cols = support(field, false);
    let s1 = field.axis1.coords();
    let s2 = field.axis2.coords();
    let src1: Vec<f64> = rows.iter().map(|&i| s1[i]).collect();
    let src2: Vec<f64> = cols.iter().map(|&j| s2[j]).collect();
    let sub = DMatrix::from_fn(rows.len(), cols.len(), |a, b| field.get(rows[a], cols[b]));
    let k1 = kernel(det, &src1, f_lambda);
    let k2 = kernel(det, &src2, f_lambda);
    let out = &k1 * sub * k2.transpose();
    // nalgebra is column-major; emit row-major.
    let n = det.n;
    let mut values = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        for j in 0..n {
            values[i * n + j] = out[(i, j)];
        }
    }
    values
}

/// Detector-plane amplitude before post-selection renormalization.
///
/// Scaled so that, on a conjugate grid, total probability is conserved.
pub fn transform_to_detector(field: &Field2D, train: &OpticalTrain, det: &Grid1D) -> Result<Field2D> {
    if field.plane != Plane::Slit {
        return Err(Error::Precondition("propagation starts from a slit-plane field".into()));
    }
    if field.axis1 != field.axis2 {
        return Err(Error::Precondition("slit-plane field must use identical axes".into()));
    }
    let f_lambda = train.f_lambda();
    let da = det.axis();
    let mut values = if train.is_conjugate(field.axis1, da) {
        fft_route(field, da.n)
    } else {
        direct_route(field, da, f_lambda)
    };
    let scale = field.axis1.spacing * field.axis2.spacing / f_lambda;
    values.iter_mut().for_each(|v| *v *= scale);
    Ok(Field2D {
        values,
        axis1: da,
        axis2: da,
        plane: Plane::Detector,
    })
}

/// Same as [`transform_to_detector`] but always by explicit summation.
pub fn transform_to_detector_direct(field: &Field2D, train: &OpticalTrain, det: &Grid1D) -> Result<Field2D> {
    if field.plane != Plane::Slit {
        return Err(Error::Precondition("propagation starts from a slit-plane field".into()));
    }
    let da = det.axis();
    let mut values = direct_route(field, da, train.f_lambda());
    let scale = field.axis1.spacing * field.axis2.spacing / train.f_lambda();
    values.iter_mut().for_each(|v| *v *= scale);
    Ok(Field2D {
        values,
        axis1: da,
        axis2: da,
        plane: Plane::Detector,
    })
}

pub fn check_detector_sampling(train: &OpticalTrain, slits: &SlitParams, det: &Grid1D) -> Result<()> {
    let period = train.fringe_period(slits);
    if period < 4.0 * det.spacing() {
        return Err(Error::config(
            "grids.det_n",
            format!(
                "detector spacing {:.3e} m undersamples the fringe period {:.3e} m; need at least 4 samples per period",
                det.spacing(),
                period
            ),
        ));
    }
    Ok(())
}

/// Treats the sampled slit-plane field as constant over each cell, whose
/// exact transform is the discrete one times `sinc(pi h x / f lambda)` per
/// photon. Cell-aligned aperture edges then carry no periodization error.
fn apply_cell_response(out: &mut Field2D, h: f64, f_lambda: f64) {
    let response: Vec<f64> = out
        .axis1
        .coords()
        .iter()
        .map(|x| {
            let u = PI * h * x / f_lambda;
            if u == 0.0 { 1.0 } else { u.sin() / u }
        })
        .collect();
    let n = out.axis2.n;
    out.values.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        row.iter_mut().zip(&response).for_each(|(v, r)| *v *= response[i] * r);
    });
}

/// Detector-plane amplitude post-selected on both photons arriving.
pub fn propagate_to_detector(
    field: &Field2D,
    train: &OpticalTrain,
    slits: &SlitParams,
    det: &Grid1D,
) -> Result<Field2D> {
    check_detector_sampling(train, slits, det)?;
    let mut out = transform_to_detector(field, train, det)?;
    apply_cell_response(&mut out, field.axis1.spacing, train.f_lambda());
    out.normalize()?;
    Ok(out)
}

/// Coincidence probabilities `|psi|^2` summing to one, exactly exchange symmetric.
pub fn detector_jpd(field: &Field2D) -> Result<Jpd2D> {
    if field.plane != Plane::Detector {
        return Err(Error::Precondition("joint distribution needs a detector-plane field".into()));
    }
    let values = field.values.iter().map(|v| v.norm_sqr()).collect();
    Jpd2D::new(field.axis1, values)?.symmetrized().normalized()
}

/// Slit-plane and detector grids for one simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineGrids {
    pub slit: Grid1D,
    pub detector: Grid1D,
}

/// Full noiseless route from state to detector distribution.
pub fn simulate_jpd(
    state: &BiphotonState,
    slits: &SlitParams,
    train: &OpticalTrain,
    grids: &PipelineGrids,
) -> Result<Jpd2D> {
    let field = momentum_to_slit_plane(state, &grids.slit, train)?;
    let masked = apply_double_slit(&field, slits)?;
    let det = propagate_to_detector(&masked, train, slits, &grids.detector)?;
    detector_jpd(&det)
}

/// Real, even transform of the double-slit mask at detector position `x`.
pub fn slit_transform(x: f64, slits: &SlitParams, f_lambda: f64) -> f64 {
    let u = PI * slits.opening * x / f_lambda;
    let sinc = if u == 0.0 { 1.0 } else { u.sin() / u };
    2.0 * slits.opening * (PI * slits.separation * x / f_lambda).cos() * sinc
}

/// Continuous transform of the unmasked slit-plane amplitude.
fn state_transform(state: &BiphotonState, train: &OpticalTrain, x1: f64, x2: f64) -> f64 {
    let kappa = train.slit_scale();
    let r = train.f2 / train.f;
    let (w0, b) = (state.w0(), state.b());
    let amp = state.momentum_norm(1) * kappa * 2.0 * PI / (w0 * b * kappa * kappa);
    let s = r * (x1 + x2);
    let d = r * (x1 - x2);
    amp * (-s * s / (4.0 * w0 * w0) - d * d / (4.0 * b * b)).exp()
}

/// Detector amplitude as a convolution of the mask transform with the
/// transformed state, evaluated by separable quadrature.
pub fn convolution_amplitude(
    state: &BiphotonState,
    slits: &SlitParams,
    train: &OpticalTrain,
    det: Axis,
) -> Vec<f64> {
    let r = train.f / train.f2;
    let narrow = state.w0().min(state.b()) * r;
    let wide = state.w0().max(state.b()) * r;
    let h = narrow / 8.0;
    let half = 10.0 * wide;
    let m = (2.0 * half / h).ceil() as usize | 1;
    let quad = Axis::new(m, h);
    let xp = quad.coords();
    let fl = train.f_lambda();
    let phi: Vec<f64> = xp
        .iter()
        .flat_map(|&a| xp.iter().map(move |&b| (a, b)))
        .map(|(a, b)| state_transform(state, train, a, b))
        .collect();
    let x = det.coords();
    let kern: Vec<f64> = x
        .iter()
        .flat_map(|&xm| xp.iter().map(move |&p| slit_transform(xm - p, slits, fl)))
        .collect();
    let n = det.n;
    // Contract photon two first: t[a][k] = sum_b phi[a][b] K[k][b].
    let t: Vec<f64> = (0..m)
        .into_par_iter()
        .flat_map_iter(|a| {
            let row = &phi[a * m..(a + 1) * m];
            let kern = &kern;
            (0..n).map(move |k| row.iter().zip(&kern[k * m..(k + 1) * m]).map(|(p, q)| p * q).sum::<f64>())
        })
        .collect();
    let scale = h * h / (fl * fl);
    (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let (i, k) = (idx / n, idx % n);
            let krow = &kern[i * m..(i + 1) * m];
            (0..m).map(|a| krow[a] * t[a * n + k]).sum::<f64>() * scale
        })
        .collect()
}

/// Maximum absolute difference between the direct and convolution routes,
/// relative to the peak, with both distributions normalized to unit sum.
pub fn convolution_crosscheck(
    state: &BiphotonState,
    slits: &SlitParams,
    train: &OpticalTrain,
    small_grid: &Grid1D,
    slit_axis: Axis,
) -> Result<f64> {
    let field = sample_slit_plane(state, slit_axis, train);
    let masked = apply_double_slit(&field, slits)?;
    let direct = detector_jpd(&transform_to_detector_direct(&masked, train, small_grid)?)?;
    let conv = convolution_amplitude(state, slits, train, small_grid.axis());
    let conv = Jpd2D::new(small_grid.axis(), conv.iter().map(|v| v * v).collect())?
        .symmetrized()
        .normalized()?;
    let peak = direct.max();
    Ok(direct
        .values
        .iter()
        .zip(&conv.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / peak)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::biphoton::CrystalParams;

    fn b() -> f64 {
        CrystalParams::default().b()
    }

    fn grids() -> PipelineGrids {
        let slit = Grid1D::new(1024, 6.4e-3).unwrap();
        let detector = OpticalTrain::default().conjugate_grid(&slit, 2).unwrap();
        PipelineGrids { slit, detector }
    }

    #[test]
    fn aperture_convention() {
        let s = SlitParams::default();
        assert_eq!(slit_aperture(125e-6, &s), 1);
        assert_eq!(slit_aperture(-125e-6, &s), 1);
        assert_eq!(slit_aperture(0.0, &s), 0);
        assert_eq!(slit_aperture(200e-6, &s), 1);
        assert_eq!(slit_aperture(200e-6 + 1e-12, &s), 0);
        assert!(SlitParams::new(100e-6, 150e-6).is_err());
    }

    #[test]
    fn geometry_scales() {
        let t = OpticalTrain::default();
        let s = SlitParams::default();
        assert!((t.fringe_period(&s) - 162e-6).abs() < 1e-12);
        assert!((t.envelope_zero(&s) - 270e-6).abs() < 1e-12);
        assert!((t.fringe_period(&s) / 16e-6 - 10.125).abs() < 1e-9);
    }

    #[test]
    fn slit_field_properties() {
        let g = Grid1D::new(256, 6.4e-3).unwrap();
        let t = OpticalTrain::default();
        let sep = BiphotonState::with_birth_zone_number(1.0, b(), 810e-9).unwrap();
        let f = momentum_to_slit_plane(&sep, &g, &t).unwrap();
        let m = f.to_matrix().map(|c| c.re);
        let sv = m.svd(false, false).singular_values;
        assert!(sv[1] / sv[0] < 1e-12);
        let peak = f.values.iter().map(|v| v.re).fold(0.0, f64::max);
        assert_eq!(peak, f.get(127, 127).re.max(f.get(128, 128).re));
        assert!((f.probability() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn anti_diagonal_width_scales_inversely_with_waist() {
        // Second moment of |Psi|^2 along x1 = x2 is f2^2 / (4 k^2 w0^2) per coordinate sum.
        let t = OpticalTrain::default();
        let g = Grid1D::new(1024, 6.4e-3).unwrap();
        for n in [5.0, 20.0] {
            let s = BiphotonState::with_birth_zone_number(n, b(), 810e-9).unwrap();
            let f = momentum_to_slit_plane(&s, &g, &t).unwrap();
            let x = g.coords();
            let (mut w, mut m2) = (0.0, 0.0);
            for i in 0..g.n() {
                let p = f.get(i, i).norm_sqr();
                w += p;
                m2 += p * (2.0 * x[i]).powi(2);
            }
            let sigma_sum = (m2 / w).sqrt();
            let expected = t.f2 / (t.wavenumber() * s.w0());
            assert!((sigma_sum / expected - 1.0).abs() < 0.02, "{sigma_sum} vs {expected}");
        }
    }

    #[test]
    fn narrow_grid_is_rejected() {
        let g = Grid1D::new(256, 1.0e-3).unwrap();
        let s = BiphotonState::with_birth_zone_number(1.0, b(), 810e-9).unwrap();
        let err = momentum_to_slit_plane(&s, &g, &OpticalTrain::default()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn transmitted_probability_matches_rectangle_quadrature() {
        let t = OpticalTrain::default();
        let slits = SlitParams::default();
        let g = Grid1D::new(1024, 6.4e-3).unwrap();
        let s = BiphotonState::with_birth_zone_number(10.0, b(), 810e-9).unwrap();
        let f = momentum_to_slit_plane(&s, &g, &t).unwrap();
        let masked = apply_double_slit(&f, &slits).unwrap();
        let transmitted = masked.probability();
        // Oracle: fine midpoint quadrature of the continuous density over the four rectangles.
        let kappa = t.slit_scale();
        let steps = 300;
        let h = slits.opening / steps as f64;
        let mut paired = 0.0;
        let mut anti = 0.0;
        for c1 in slits.centers() {
            for c2 in slits.centers() {
                let mut acc = 0.0;
                for i in 0..steps {
                    let u = c1 - slits.opening / 2.0 + (i as f64 + 0.5) * h;
                    for j in 0..steps {
                        let v = c2 - slits.opening / 2.0 + (j as f64 + 0.5) * h;
                        acc += (s.momentum_amplitude([u * kappa], [v * kappa]) * kappa).powi(2);
                    }
                }
                acc *= h * h;
                if c1 == c2 {
                    paired += acc;
                } else {
                    anti += acc;
                }
            }
        }
        let captured = sample_slit_plane(&s, g.axis(), &t).probability();
        let oracle = (paired + anti) / captured;
        assert!((transmitted / oracle - 1.0).abs() < 2e-3, "{transmitted} vs {oracle}");
        assert!(anti > paired);
    }

    #[test]
    fn open_aperture_leaves_field_unchanged() {
        let g = Grid1D::new(64, 6.4e-3).unwrap();
        let s = BiphotonState::with_birth_zone_number(2.0, b(), 810e-9).unwrap();
        let f = sample_slit_plane(&s, g.axis(), &OpticalTrain::default());
        // Two abutting 6.4 mm slits centered at +-3.2 mm cover the grid.
        let open = SlitParams::new(6.4e-3, 6.4e-3 - 1e-15).unwrap();
        assert!(g.coords().iter().all(|&u| open.transmits(u)));
        let m = apply_double_slit(&f, &open).unwrap();
        assert_eq!(m.values, f.values);
    }

    #[test]
    fn fft_and_direct_routes_agree_and_conserve_probability() {
        let t = OpticalTrain::default();
        let slits = SlitParams::default();
        let slit = Grid1D::new(256, 6.4e-3).unwrap();
        let det = t.conjugate_grid(&slit, 2).unwrap();
        let s = BiphotonState::with_birth_zone_number(6.0, b(), 810e-9).unwrap();
        let f = momentum_to_slit_plane(&s, &slit, &t).unwrap();
        let masked = apply_double_slit(&f, &slits).unwrap();
        let a = transform_to_detector(&masked, &t, &det).unwrap();
        let d = transform_to_detector_direct(&masked, &t, &det).unwrap();
        let peak = a.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let diff = a.values.iter().zip(&d.values).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        assert!(diff < 1e-10 * peak, "{diff}");
        assert!((a.probability() / masked.probability() - 1.0).abs() < 1e-9);
        // Unmasked field is also conserved.
        let full = transform_to_detector(&f, &t, &det).unwrap();
        assert!((full.probability() / f.probability() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn separable_input_gives_cos_sinc_marginal() {
        // At N = 1 both photons are independent; each sees |FT of mask * Gaussian|^2.
        let t = OpticalTrain::default();
        let slits = SlitParams::default();
        let g = grids();
        let s = BiphotonState::with_birth_zone_number(1.0, b(), 810e-9).unwrap();
        let j = simulate_jpd(&s, &slits, &t, &g).unwrap();
        assert!(j.rank_one_bound() < 1e-8);
        let n = j.n();
        for i in 0..n {
            for k in 0..n {
                assert_eq!(j.get(i, k), j.get(k, i));
            }
        }
        assert!((j.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn undersampled_detector_rejected() {
        let t = OpticalTrain::default();
        let slits = SlitParams::default();
        let det = Grid1D::new(64, 6.4e-3).unwrap();
        assert!(check_detector_sampling(&t, &slits, &det).is_err());
    }

    #[test]
    fn slit_transform_oracle() {
        // Direct quadrature of the mask transform.
        let slits = SlitParams::default();
        let fl = OpticalTrain::default().f_lambda();
        for x in [0.0, 37e-6, 120e-6, 400e-6] {
            let steps = 20000;
            let h = slits.opening / steps as f64;
            let mut acc = 0.0;
            for c in slits.centers() {
                for i in 0..steps {
                    let s = c - slits.opening / 2.0 + (i as f64 + 0.5) * h;
                    acc += (-2.0 * PI * x * s / fl).cos() * h;
                }
            }
            let v = slit_transform(x, &slits, fl);
            assert!((v - acc).abs() < 1e-9 * slits.opening, "{x}: {v} vs {acc}");
        }
    }
}
