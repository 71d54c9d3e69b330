//! Least-squares fit of the finite-slit fringe model
//! `A sinc^2(pi a t / (f lambda)) [1 + V cos(2 pi d t / (f lambda))] + c`
//! with the slit geometry held fixed and `(A, V, c)` free.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile::FringeProfile;

/// Upper bound on `V` while optimizing; results above 1 are flagged.
pub const VISIBILITY_CEILING: f64 = 1.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringeGeometry {
    pub opening: f64,
    /// Slit center-to-center distance.
    pub separation: f64,
    pub focal: f64,
    pub wavelength: f64,
}

impl FringeGeometry {
    pub fn f_lambda(&self) -> f64 {
        self.focal * self.wavelength
    }

    pub fn period(&self) -> f64 {
        self.f_lambda() / self.separation
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringeParams {
    pub amplitude: f64,
    pub visibility: f64,
    pub offset: f64,
}

impl FringeParams {
    #[cfg(test)]
    fn to_vec(self) -> Vector3<f64> {
        Vector3::new(self.amplitude, self.visibility, self.offset)
    }

    fn from_vec(v: &Vector3<f64>) -> Self {
        Self {
            amplitude: v[0],
            visibility: v[1],
            offset: v[2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitTolerances {
    pub relative_cost: f64,
    pub gradient: f64,
    pub max_iterations: usize,
}

impl Default for FitTolerances {
    fn default() -> Self {
        Self {
            relative_cost: 1e-10,
            gradient: 1e-12,
            max_iterations: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: FringeParams,
    pub geometry: FringeGeometry,
    /// Row-major 3x3 covariance of `(A, V, c)`.
    pub covariance: [[f64; 3]; 3],
    pub sigma: [f64; 3],
    pub rms_residual: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Unclamped optimum of `V` exceeded one.
    pub visibility_exceeded: bool,
    pub raw_visibility: f64,
}

impl FitResult {
    pub fn visibility_sigma(&self) -> f64 {
        self.sigma[1]
    }
}

#[inline]
fn sinc(u: f64) -> f64 {
    if u.abs() < 1e-8 {
        1.0 - u * u / 6.0
    } else {
        u.sin() / u
    }
}

pub fn fringe_model(t: f64, p: &FringeParams, g: &FringeGeometry) -> f64 {
    let fl = g.f_lambda();
    let env = sinc(PI * g.opening * t / fl).powi(2);
    p.amplitude * env * (1.0 + p.visibility * (2.0 * PI * g.separation * t / fl).cos()) + p.offset
}

/// Partial derivatives of the model with respect to `(A, V, c)`.
pub fn fringe_jacobian(t: f64, p: &FringeParams, g: &FringeGeometry) -> [f64; 3] {
    let fl = g.f_lambda();
    let env = sinc(PI * g.opening * t / fl).powi(2);
    let cos = (2.0 * PI * g.separation * t / fl).cos();
    [env * (1.0 + p.visibility * cos), p.amplitude * env * cos, 1.0]
}

fn check_sampling(profile: &FringeProfile, g: &FringeGeometry) -> Result<()> {
    if profile.len() < 4 {
        return Err(Error::Precondition("fringe fit needs at least four points".into()));
    }
    let period = g.period();
    let max_gap = profile.abscissa.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    if max_gap > period / 3.0 {
        return Err(Error::Precondition(format!(
            "sampling gap {max_gap:.3e} m gives fewer than 3 points per fringe period {period:.3e} m"
        )));
    }
    let span = profile.abscissa[profile.len() - 1] - profile.abscissa[0];
    if span < 2.0 * period {
        return Err(Error::Precondition(format!(
            "profile spans {span:.3e} m, less than two fringe periods"
        )));
    }
    Ok(())
}

/// Initial guess from the data range and the Fourier component at the
/// fringe frequency.
pub fn initial_guess(profile: &FringeProfile, g: &FringeGeometry) -> FringeParams {
    let min = profile.values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = profile.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let nu = 1.0 / g.period();
    let (mut re, mut im, mut dc) = (0.0, 0.0, 0.0);
    for (t, y) in profile.abscissa.iter().zip(&profile.values) {
        let w = y - min;
        let ph = 2.0 * PI * nu * t;
        re += w * ph.cos();
        im += w * ph.sin();
        dc += w;
    }
    let v0 = if dc > 0.0 { (2.0 * re.hypot(im) / dc).clamp(0.0, 1.0) } else { 0.5 };
    FringeParams {
        amplitude: max - min,
        visibility: v0,
        offset: min,
    }
}

fn project(p: &mut Vector3<f64>) {
    p[0] = p[0].max(0.0);
    p[1] = p[1].clamp(0.0, VISIBILITY_CEILING);
}

struct Problem<'a> {
    t: &'a [f64],
    y: Vec<f64>,
    g: &'a FringeGeometry,
}

impl Problem<'_> {
    fn cost(&self, p: &Vector3<f64>) -> f64 {
        let fp = FringeParams::from_vec(p);
        self.t.iter().zip(&self.y).map(|(t, y)| (y - fringe_model(*t, &fp, self.g)).powi(2)).sum()
    }

    fn normal_equations(&self, p: &Vector3<f64>) -> (Matrix3<f64>, Vector3<f64>) {
        let fp = FringeParams::from_vec(p);
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for (t, y) in self.t.iter().zip(&self.y) {
            let j = Vector3::from(fringe_jacobian(*t, &fp, self.g));
            let r = y - fringe_model(*t, &fp, self.g);
            jtj += j * j.transpose();
            jtr += j * r;
        }
        (jtj, jtr)
    }
}

/// Components pinned at a bound with the descent direction pointing outward.
fn active_bounds(p: &Vector3<f64>, jtr: &Vector3<f64>) -> [bool; 3] {
    [
        p[0] <= 0.0 && jtr[0] < 0.0,
        (p[1] <= 0.0 && jtr[1] < 0.0) || (p[1] >= VISIBILITY_CEILING && jtr[1] > 0.0),
        false,
    ]
}

/// Gradient of the cost with components pinned at an active bound removed.
fn projected_gradient(p: &Vector3<f64>, jtr: &Vector3<f64>) -> f64 {
    let active = active_bounds(p, jtr);
    let mut g = -2.0 * jtr;
    (0..3).filter(|&k| active[k]).for_each(|k| g[k] = 0.0);
    g.norm()
}

pub fn fit_fringes(profile: &FringeProfile, g: &FringeGeometry, tol: &FitTolerances) -> Result<FitResult> {
    check_sampling(profile, g)?;
    let start = initial_guess(profile, g);
    fit_from(profile, g, tol, start)
}

/// Fit starting from `start` instead of the data-driven guess.
pub fn fit_from(profile: &FringeProfile, g: &FringeGeometry, tol: &FitTolerances, start: FringeParams) -> Result<FitResult> {
    check_sampling(profile, g)?;
    let scale = profile.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::Precondition("profile is identically zero or not finite".into()));
    }
    let problem = Problem {
        t: &profile.abscissa,
        y: profile.values.iter().map(|v| v / scale).collect(),
        g,
    };
    let mut p = Vector3::new(start.amplitude / scale, start.visibility, start.offset / scale);
    project(&mut p);
    let mut cost = problem.cost(&p);
    let (mut jtj, mut jtr) = problem.normal_equations(&p);
    let mut lambda = 1e-3 * jtj.diagonal().max();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < tol.max_iterations {
        if projected_gradient(&p, &jtr) < tol.gradient {
            converged = true;
            break;
        }
        iterations += 1;
        let mut accepted = false;
        // Pinned components are frozen so the step solves the free subproblem.
        let active = active_bounds(&p, &jtr);
        let mut rhs = jtr;
        for _ in 0..60 {
            let mut damped = jtj;
            for k in 0..3 {
                damped[(k, k)] += lambda * jtj[(k, k)].max(1e-30);
            }
            for k in (0..3).filter(|&k| active[k]) {
                damped.row_mut(k).fill(0.0);
                damped.column_mut(k).fill(0.0);
                damped[(k, k)] = 1.0;
                rhs[k] = 0.0;
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&rhs)) else {
                lambda *= 4.0;
                continue;
            };
            let mut trial = p + step;
            project(&mut trial);
            let trial_cost = problem.cost(&trial);
            if trial_cost <= cost {
                let rel = (cost - trial_cost) / cost.max(f64::MIN_POSITIVE);
                p = trial;
                cost = trial_cost;
                (jtj, jtr) = problem.normal_equations(&p);
                lambda = (lambda / 3.0).max(1e-15);
                accepted = true;
                if rel < tol.relative_cost {
                    converged = true;
                }
                break;
            }
            lambda *= 2.0;
        }
        if converged || !accepted {
            // A rejected step after exhausting damping means no descent direction remains.
            converged = converged || projected_gradient(&p, &jtr) < tol.gradient.max(1e-9);
            break;
        }
    }
    let n = profile.len();
    let dof = n.saturating_sub(3).max(1) as f64;
    let s2 = cost / dof;
    let inv = jtj.try_inverse().unwrap_or_else(|| Matrix3::from_element(f64::NAN));
    let units = Vector3::new(scale, 1.0, scale);
    let mut covariance = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            covariance[r][c] = s2 * inv[(r, c)] * units[r] * units[c];
        }
    }
    let sigma = [0, 1, 2].map(|k| covariance[k][k].max(0.0).sqrt());
    let raw_visibility = p[1];
    let params = FringeParams {
        amplitude: p[0] * scale,
        visibility: raw_visibility.min(1.0),
        offset: p[2] * scale,
    };
    Ok(FitResult {
        params,
        geometry: *g,
        covariance,
        sigma,
        rms_residual: (cost / n as f64).sqrt() * scale,
        converged,
        iterations,
        visibility_exceeded: raw_visibility > 1.0,
        raw_visibility,
    })
}

/// A value with its one-sigma uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub value: f64,
    pub sigma: f64,
}

fn require_converged(f: &FitResult, what: &str) -> Result<()> {
    if f.converged {
        Ok(())
    } else {
        Err(Error::NotConverged(format!("{what} fit did not converge")))
    }
}

/// Difference between the correlation-fringe and anticorrelation-fringe
/// visibilities.
pub fn two_photon_visibility(correlation: &FitResult, anticorrelation: &FitResult) -> Result<Measured> {
    require_converged(correlation, "correlation")?;
    require_converged(anticorrelation, "anticorrelation")?;
    Ok(Measured {
        value: correlation.params.visibility.abs() - anticorrelation.params.visibility.abs(),
        sigma: correlation.sigma[1].hypot(anticorrelation.sigma[1]),
    })
}

/// `V_m^2 + V_12^2` with first-order propagated uncertainty.
pub fn complementarity(marginal: &FitResult, v12: Measured) -> Result<Measured> {
    require_converged(marginal, "marginal")?;
    let vm = marginal.params.visibility.abs();
    Ok(Measured {
        value: vm * vm + v12.value * v12.value,
        sigma: (2.0 * vm * marginal.sigma[1]).hypot(2.0 * v12.value * v12.sigma),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::ProfileKind;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn geometry() -> FringeGeometry {
        FringeGeometry {
            opening: 150e-6,
            separation: 250e-6,
            focal: 0.05,
            wavelength: 810e-9,
        }
    }

    fn synthetic(p: FringeParams, n: usize, half: f64) -> FringeProfile {
        let g = geometry();
        let t: Vec<f64> = (0..n).map(|i| -half + 2.0 * half * i as f64 / (n - 1) as f64).collect();
        let y = t.iter().map(|&t| fringe_model(t, &p, &g)).collect();
        FringeProfile::new(t, y, ProfileKind::Marginal).unwrap()
    }

    #[test]
    fn model_reference_values() {
        let g = geometry();
        let p = FringeParams { amplitude: 2.0, visibility: 0.4, offset: 0.3 };
        assert!((fringe_model(0.0, &p, &g) - (2.0 * 1.4 + 0.3)).abs() < 1e-15);
        let zero = g.f_lambda() / g.opening;
        assert!((zero - 270e-6).abs() < 1e-12);
        assert!((fringe_model(zero, &p, &g) - 0.3).abs() < 1e-12);
        let flat = FringeParams { visibility: 0.0, ..p };
        for t in [10e-6, 81e-6, 200e-6] {
            let e = (PI * g.opening * t / g.f_lambda()).sin() / (PI * g.opening * t / g.f_lambda());
            assert!((fringe_model(t, &flat, &g) - (2.0 * e * e + 0.3)).abs() < 1e-12);
        }
    }

    #[test]
    fn noiseless_recovery() {
        let truth = FringeParams { amplitude: 3.0, visibility: 0.7, offset: 0.2 };
        let prof = synthetic(truth, 301, 600e-6);
        let r = fit_fringes(&prof, &geometry(), &FitTolerances::default()).unwrap();
        assert!(r.converged);
        assert!((r.params.visibility - 0.7).abs() < 1e-6, "{:?}", r.params);
        assert!((r.params.amplitude - 3.0).abs() < 1e-6);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let g = geometry();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        use rand::Rng;
        for _ in 0..200 {
            let p = FringeParams {
                amplitude: rng.random_range(0.1..5.0),
                visibility: rng.random_range(0.05..1.0),
                offset: rng.random_range(-1.0..1.0),
            };
            let t = rng.random_range(-500e-6..500e-6);
            let j = fringe_jacobian(t, &p, &g);
            // Relative to the gradient row norm, so near-zero partials are not judged on round-off.
            let row = j.iter().map(|x| x * x).sum::<f64>().sqrt();
            let v = p.to_vec();
            for k in 0..3 {
                let h = 1e-7 * v[k].abs().max(1e-3);
                let mut up = v;
                let mut dn = v;
                up[k] += h;
                dn[k] -= h;
                let fd = (fringe_model(t, &FringeParams::from_vec(&up), &g)
                    - fringe_model(t, &FringeParams::from_vec(&dn), &g))
                    / (2.0 * h);
                assert!((fd - j[k]).abs() <= 1e-5 * row, "k={k}: {fd} vs {}", j[k]);
            }
        }
    }

    #[test]
    fn sampling_preconditions() {
        let p = FringeParams { amplitude: 1.0, visibility: 0.5, offset: 0.0 };
        let sparse = synthetic(p, 8, 600e-6);
        assert!(matches!(fit_fringes(&sparse, &geometry(), &FitTolerances::default()), Err(Error::Precondition(_))));
        let short = synthetic(p, 50, 100e-6);
        assert!(fit_fringes(&short, &geometry(), &FitTolerances::default()).is_err());
    }

    #[test]
    fn idempotent_refit() {
        let truth = FringeParams { amplitude: 1.3, visibility: 0.45, offset: 0.05 };
        let mut prof = synthetic(truth, 241, 500e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, 0.01).unwrap();
        prof.values.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
        let tol = FitTolerances::default();
        let a = fit_fringes(&prof, &geometry(), &tol).unwrap();
        let b = fit_from(&prof, &geometry(), &tol, a.params).unwrap();
        assert!((a.params.visibility - b.params.visibility).abs() < 1e-10);
        assert!((a.params.amplitude - b.params.amplitude).abs() < 1e-10 * a.params.amplitude.max(1.0));
        assert!((a.params.offset - b.params.offset).abs() < 1e-10);
    }

    #[test]
    fn half_period_shift_fits_worse() {
        let truth = FringeParams { amplitude: 1.0, visibility: 0.8, offset: 0.1 };
        let g = geometry();
        let good = synthetic(truth, 241, 500e-6);
        let shift = g.period() / 2.0;
        let moved = FringeProfile::new(
            good.abscissa.iter().map(|t| t + shift).collect(),
            good.values.clone(),
            ProfileKind::Marginal,
        )
        .unwrap();
        let tol = FitTolerances::default();
        let a = fit_fringes(&good, &g, &tol).unwrap();
        let b = fit_fringes(&moved, &g, &tol).unwrap();
        assert!(b.rms_residual > 100.0 * a.rms_residual.max(1e-9));
        assert!(b.params.visibility >= 0.0);
    }

    #[test]
    fn flags_visibility_above_one() {
        let truth = FringeParams { amplitude: 1.0, visibility: 1.03, offset: 0.0 };
        let prof = synthetic(truth, 241, 500e-6);
        let r = fit_fringes(&prof, &geometry(), &FitTolerances::default()).unwrap();
        assert!(r.visibility_exceeded);
        assert_eq!(r.params.visibility, 1.0);
        assert!((r.raw_visibility - 1.03).abs() < 1e-6);
    }

    #[test]
    fn converges_when_pinned_at_the_ceiling() {
        let truth = FringeParams { amplitude: 1.0, visibility: 1.4, offset: 0.05 };
        let prof = synthetic(truth, 241, 500e-6);
        let r = fit_fringes(&prof, &geometry(), &FitTolerances::default()).unwrap();
        assert!(r.converged, "{} iterations", r.iterations);
        assert!(r.iterations < 50);
        assert_eq!(r.raw_visibility, VISIBILITY_CEILING);
        assert!(r.visibility_exceeded);
    }

    #[test]
    fn complementarity_examples() {
        let mk = |v: f64| FitResult {
            params: FringeParams { amplitude: 1.0, visibility: v, offset: 0.0 },
            geometry: geometry(),
            covariance: [[0.0; 3]; 3],
            sigma: [0.0, 0.01, 0.0],
            rms_residual: 0.0,
            converged: true,
            iterations: 1,
            visibility_exceeded: false,
            raw_visibility: v,
        };
        let c = complementarity(&mk(1.0), two_photon_visibility(&mk(0.5), &mk(0.5)).unwrap()).unwrap();
        assert!((c.value - 1.0).abs() < 1e-15);
        let c = complementarity(&mk(0.6), two_photon_visibility(&mk(0.9), &mk(0.1)).unwrap()).unwrap();
        assert!((c.value - 1.0).abs() < 1e-12);
        assert!(c.sigma > 0.0);
        let mut bad = mk(0.5);
        bad.converged = false;
        assert!(matches!(complementarity(&bad, Measured { value: 0.0, sigma: 0.0 }), Err(Error::NotConverged(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn scale_equivariance(s in 1e-3f64..1e3, v in 0.05f64..0.95) {
            let truth = FringeParams { amplitude: 1.0, visibility: v, offset: 0.05 };
            let mut prof = synthetic(truth, 201, 500e-6);
            prof.values.iter_mut().enumerate().for_each(|(i, y)| *y += 0.01 * ((i * 37 % 17) as f64 - 8.0) / 8.0);
            let tol = FitTolerances::default();
            let a = fit_fringes(&prof, &geometry(), &tol).unwrap();
            let mut scaled = prof.clone();
            scaled.values.iter_mut().for_each(|y| *y *= s);
            let b = fit_fringes(&scaled, &geometry(), &tol).unwrap();
            prop_assert!((a.params.visibility - b.params.visibility).abs() < 1e-9);
            prop_assert!((b.params.amplitude / (s * a.params.amplitude) - 1.0).abs() < 1e-9);
            prop_assert!((b.params.offset - s * a.params.offset).abs() < 1e-9 * s);
        }

        #[test]
        fn covariance_is_symmetric_psd(v in 0.1f64..0.9, seed in 0u64..1000) {
            let truth = FringeParams { amplitude: 1.0, visibility: v, offset: 0.1 };
            let mut prof = synthetic(truth, 201, 500e-6);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise = Normal::new(0.0, 0.02).unwrap();
            prof.values.iter_mut().for_each(|y| *y += noise.sample(&mut rng));
            let r = fit_fringes(&prof, &geometry(), &FitTolerances::default()).unwrap();
            let c = Matrix3::from_fn(|i, j| r.covariance[i][j]);
            prop_assert!((c - c.transpose()).abs().max() <= 1e-12 * c.abs().max());
            let eig = c.symmetric_eigen().eigenvalues;
            prop_assert!(eig.min() >= -1e-12 * eig.max().abs());
        }
    }
}
