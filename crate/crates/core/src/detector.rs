//! Synthetic photon-counting camera frames drawn from a joint distribution.
//!
//! Each frame is generated from its own ChaCha stream keyed by the frame
//! index, so any frame can be reproduced in isolation and the result never
//! depends on how frames are partitioned across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Axis;
use crate::profile::Jpd2D;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionParams {
    pub frames: usize,
    pub nx: usize,
    pub ny: usize,
    pub pixel_pitch: f64,
    pub mean_pairs: f64,
    pub efficiency: f64,
    pub background_rate: f64,
    pub y_sigma: f64,
    pub seed: u64,
}

impl Default for AcquisitionParams {
    fn default() -> Self {
        Self {
            frames: 100_000,
            nx: 128,
            ny: 32,
            pixel_pitch: 16e-6,
            mean_pairs: 5.0,
            efficiency: 0.5,
            background_rate: 0.01,
            y_sigma: 100e-6,
            seed: 0x5eed,
        }
    }
}

impl AcquisitionParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, msg: &str| Err(Error::config(format!("acquisition.{path}"), msg));
        if self.frames == 0 {
            return bad("frames", "must be at least 1");
        }
        if self.nx == 0 || self.ny == 0 {
            return bad("nx", "pixel counts must be at least 1");
        }
        if !(self.pixel_pitch.is_finite() && self.pixel_pitch > 0.0) {
            return bad("pitch", "must be positive");
        }
        if !(self.mean_pairs.is_finite() && self.mean_pairs >= 0.0) {
            return bad("mu_pairs", "must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.efficiency) {
            return bad("efficiency", "must lie in [0, 1]");
        }
        if !(self.background_rate.is_finite() && self.background_rate >= 0.0) {
            return bad("background", "must be non-negative");
        }
        if !(self.y_sigma.is_finite() && self.y_sigma > 0.0) {
            return bad("y_sigma", "must be positive");
        }
        Ok(())
    }

    pub fn frame_len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn x_axis(&self) -> Axis {
        Axis::new(self.nx, self.pixel_pitch)
    }
}

/// Frames stored frame-major, then row-major over `ny` rows of `nx` pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    pub acquisition: AcquisitionParams,
    pub counts: Vec<u16>,
}

impl FrameStack {
    pub fn new(acquisition: AcquisitionParams, counts: Vec<u16>) -> Result<Self> {
        if counts.len() != acquisition.frames * acquisition.frame_len() {
            return Err(Error::Precondition(format!(
                "frame stack holds {} counts, expected {}",
                counts.len(),
                acquisition.frames * acquisition.frame_len()
            )));
        }
        Ok(Self { acquisition, counts })
    }

    pub fn frames(&self) -> usize {
        self.acquisition.frames
    }

    pub fn frame(&self, m: usize) -> &[u16] {
        let len = self.acquisition.frame_len();
        &self.counts[m * len..(m + 1) * len]
    }

    pub fn iter_frames(&self) -> impl Iterator<Item = &[u16]> {
        self.counts.chunks_exact(self.acquisition.frame_len())
    }

    /// Sub-stack restricted to columns `x0..x0+nx` and rows `y0..y0+ny`.
    pub fn crop(&self, x0: usize, nx: usize, y0: usize, ny: usize) -> Result<FrameStack> {
        let a = &self.acquisition;
        if x0 + nx > a.nx || y0 + ny > a.ny || nx == 0 || ny == 0 {
            return Err(Error::Precondition(format!(
                "region {nx}x{ny} at ({x0},{y0}) exceeds {}x{} frames",
                a.nx, a.ny
            )));
        }
        let mut counts = Vec::with_capacity(a.frames * nx * ny);
        for f in self.iter_frames() {
            for y in y0..y0 + ny {
                counts.extend_from_slice(&f[y * a.nx + x0..y * a.nx + x0 + nx]);
            }
        }
        let acquisition = AcquisitionParams { nx, ny, ..*a };
        FrameStack::new(acquisition, counts)
    }
}

/// Fractional overlap of fine grid cells with camera pixels centered on the
/// same origin. Row `p` lists `(cell index, weight)`.
fn overlap_weights(grid: Axis, nx: usize, pitch: f64) -> Vec<Vec<(usize, f64)>> {
    let h = grid.spacing;
    let g0 = -grid.extent() / 2.0;
    let p0 = -(nx as f64) * pitch / 2.0;
    (0..nx)
        .map(|p| {
            let lo = p0 + p as f64 * pitch;
            let hi = lo + pitch;
            let first = (((lo - g0) / h).floor().max(0.0)) as usize;
            let last = (((hi - g0) / h).ceil() as usize).min(grid.n);
            (first..last)
                .filter_map(|j| {
                    let a = g0 + j as f64 * h;
                    let w = (hi.min(a + h) - lo.max(a)) / h;
                    (w > 0.0).then_some((j, w))
                })
                .collect()
        })
        .collect()
}

/// Probabilities of photon-one pixel `i` and photon-two pixel `k`,
/// `values[i * nx + k]`, summing to one.
pub fn pixelate_jpd(jpd: &Jpd2D, nx: usize, pixel_pitch: f64) -> Result<Jpd2D> {
    let span = nx as f64 * pixel_pitch;
    if jpd.axis.extent() < span * (1.0 - 1e-12) {
        return Err(Error::config(
            "acquisition.nx",
            format!(
                "camera spans {span:.3e} m but the simulated detector grid covers only {:.3e} m",
                jpd.axis.extent()
            ),
        ));
    }
    let w = overlap_weights(jpd.axis, nx, pixel_pitch);
    let n = jpd.n();
    // t = W J, then out = t W^T.
    let mut t = vec![0.0; nx * n];
    for (p, row) in w.iter().enumerate() {
        for &(j, wj) in row {
            let src = &jpd.values[j * n..(j + 1) * n];
            t[p * n..(p + 1) * n].iter_mut().zip(src).for_each(|(a, b)| *a += wj * b);
        }
    }
    let mut out = vec![0.0; nx * nx];
    for p in 0..nx {
        for (r, row) in w.iter().enumerate() {
            out[p * nx + r] = row.iter().map(|&(j, wj)| wj * t[p * n + j]).sum();
        }
    }
    Jpd2D::new(Axis::new(nx, pixel_pitch), out)?.symmetrized().normalized()
}

/// Alias table over pixel pairs.
pub struct PairSampler {
    nx: usize,
    alias: WeightedAliasIndex<f64>,
}

impl PairSampler {
    pub fn new(dist: &Jpd2D) -> Result<Self> {
        let alias = WeightedAliasIndex::new(dist.values.clone())
            .map_err(|e| Error::Numerical(format!("pixel-pair distribution unusable: {e}")))?;
        Ok(Self { nx: dist.n(), alias })
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let idx = self.alias.sample(rng);
        (idx / self.nx, idx % self.nx)
    }
}

pub fn sample_pairs<R: Rng + ?Sized>(dist: &Jpd2D, count: usize, rng: &mut R) -> Result<Vec<(usize, usize)>> {
    let sampler = PairSampler::new(dist)?;
    Ok((0..count).map(|_| sampler.sample(rng)).collect())
}

/// Per-frame generator; cheap to share across threads.
pub struct FrameSynthesizer {
    params: AcquisitionParams,
    pairs: PairSampler,
    rows: WeightedAliasIndex<f64>,
    pair_count: Option<Poisson<f64>>,
    background: Option<Poisson<f64>>,
}

impl FrameSynthesizer {
    pub fn new(pixel_dist: &Jpd2D, params: AcquisitionParams) -> Result<Self> {
        params.validate()?;
        if pixel_dist.n() != params.nx {
            return Err(Error::Precondition(format!(
                "pixel distribution has {} columns but the camera has {}",
                pixel_dist.n(),
                params.nx
            )));
        }
        let y = Axis::new(params.ny, params.pixel_pitch);
        let row_weights: Vec<f64> = y
            .coords()
            .iter()
            .map(|v| (-v * v / (2.0 * params.y_sigma * params.y_sigma)).exp())
            .collect();
        let rows = WeightedAliasIndex::new(row_weights)
            .map_err(|e| Error::Numerical(format!("row envelope unusable: {e}")))?;
        let pair_count = (params.mean_pairs > 0.0)
            .then(|| Poisson::new(params.mean_pairs))
            .transpose()
            .map_err(|e| Error::Domain(format!("pair rate: {e}")))?;
        let total_bg = params.background_rate * params.frame_len() as f64;
        let background = (total_bg > 0.0)
            .then(|| Poisson::new(total_bg))
            .transpose()
            .map_err(|e| Error::Domain(format!("background rate: {e}")))?;
        Ok(Self {
            params,
            pairs: PairSampler::new(pixel_dist)?,
            rows,
            pair_count,
            background,
        })
    }

    pub fn params(&self) -> &AcquisitionParams {
        &self.params
    }

    pub fn frame_rng(&self, m: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.params.seed);
        rng.set_stream(m as u64);
        rng
    }

    /// Overwrites `out` (length `nx * ny`) with frame `m`.
    pub fn fill_frame(&self, m: usize, out: &mut [u16]) {
        let nx = self.params.nx;
        out.fill(0);
        let mut rng = self.frame_rng(m);
        let pairs = self.pair_count.as_ref().map_or(0, |d| d.sample(&mut rng) as u64);
        let eta = self.params.efficiency;
        for _ in 0..pairs {
            let (x1, x2) = self.pairs.sample(&mut rng);
            let y1 = self.rows.sample(&mut rng);
            let y2 = self.rows.sample(&mut rng);
            if rng.random_bool(eta) {
                let c = &mut out[y1 * nx + x1];
                *c = c.saturating_add(1);
            }
            if rng.random_bool(eta) {
                let c = &mut out[y2 * nx + x2];
                *c = c.saturating_add(1);
            }
        }
        // A Poisson total scattered uniformly is independent Poisson per pixel.
        let bg = self.background.as_ref().map_or(0, |d| d.sample(&mut rng) as u64);
        let len = out.len();
        for _ in 0..bg {
            let c = &mut out[rng.random_range(0..len)];
            *c = c.saturating_add(1);
        }
    }
}

pub fn synthesize_frames(pixel_dist: &Jpd2D, params: AcquisitionParams) -> Result<FrameStack> {
    let synth = FrameSynthesizer::new(pixel_dist, params)?;
    let len = params.frame_len();
    let total = params
        .frames
        .checked_mul(len)
        .filter(|t| *t <= 1 << 31)
        .ok_or_else(|| Error::Resource(format!("{} frames of {len} pixels do not fit in memory; stream them instead", params.frames)))?;
    let mut counts = vec![0u16; total];
    use rayon::prelude::*;
    counts
        .par_chunks_mut(len)
        .enumerate()
        .for_each(|(m, frame)| synth.fill_frame(m, frame));
    FrameStack::new(params, counts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(n: usize, spacing: f64) -> Jpd2D {
        Jpd2D::new(Axis::new(n, spacing), vec![1.0 / (n * n) as f64; n * n]).unwrap()
    }

    fn small_params() -> AcquisitionParams {
        AcquisitionParams {
            frames: 2000,
            nx: 8,
            ny: 4,
            mean_pairs: 2.0,
            efficiency: 0.7,
            background_rate: 0.05,
            seed: 42,
            ..Default::default()
        }
    }

    #[test]
    fn pixelation_preserves_uniformity_and_mass() {
        let j = uniform(256, 1e-6);
        let p = pixelate_jpd(&j, 16, 16e-6).unwrap();
        assert!((p.total() - 1.0).abs() < 1e-12);
        for v in &p.values {
            assert!((v - 1.0 / 256.0).abs() < 1e-12);
        }
        assert!(pixelate_jpd(&j, 32, 16e-6).is_err());
    }

    #[test]
    fn pixelation_matches_block_sums_on_aligned_grid() {
        // Four fine cells per pixel; oracle is a plain block sum.
        let n = 32;
        let values: Vec<f64> = (0..n * n).map(|i| ((i * 7919) % 97) as f64 + 1.0).collect();
        let j = Jpd2D::new(Axis::new(n, 4e-6), values).unwrap().symmetrized();
        let p = pixelate_jpd(&j, 8, 16e-6).unwrap();
        let total = j.total();
        for a in 0..8 {
            for b in 0..8 {
                let mut s = 0.0;
                for i in 4 * a..4 * a + 4 {
                    for k in 4 * b..4 * b + 4 {
                        s += j.get(i, k);
                    }
                }
                assert!((p.get(a, b) - s / total).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn point_mass_sampling() {
        let mut v = vec![0.0; 16];
        v[6] = 1.0;
        let d = Jpd2D::new(Axis::new(4, 1.0), v).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = sample_pairs(&d, 500, &mut rng).unwrap();
        assert!(s.iter().all(|&p| p == (1, 2)));
    }

    #[test]
    fn sampled_frequencies_pass_chi_square() {
        let n = 6;
        let raw: Vec<f64> = (0..n * n).map(|i| 1.0 + ((i * 31) % 11) as f64).collect();
        let d = Jpd2D::new(Axis::new(n, 1.0), raw).unwrap().symmetrized().normalized().unwrap();
        let count = 1_000_000;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = sample_pairs(&d, count, &mut rng).unwrap();
        let mut hist = vec![0usize; n * n];
        for (a, b) in &s {
            hist[a * n + b] += 1;
        }
        let chi2: f64 = hist
            .iter()
            .zip(&d.values)
            .map(|(&o, p)| {
                let e = p * count as f64;
                (o as f64 - e).powi(2) / e
            })
            .sum();
        // 35 degrees of freedom: mean 35, sd ~8.4.
        assert!(chi2 < 35.0 + 6.0 * 8.4, "chi2 {chi2}");
        let l1: f64 = hist.iter().zip(&d.values).map(|(&o, p)| (o as f64 / count as f64 - p).abs()).sum();
        assert!(l1 < 5.0 * n as f64 / (count as f64).sqrt());
        let swapped: usize = s.iter().filter(|(a, b)| a == &0 && b == &1).count();
        let direct: usize = s.iter().filter(|(a, b)| a == &1 && b == &0).count();
        let sd = ((swapped + direct) as f64).sqrt();
        assert!(((swapped as f64) - (direct as f64)).abs() < 4.0 * sd);
    }

    #[test]
    fn deterministic_and_thread_independent() {
        let d = pixelate_jpd(&uniform(64, 2e-6), 8, 16e-6).unwrap();
        let a = synthesize_frames(&d, small_params()).unwrap();
        let b = synthesize_frames(&d, small_params()).unwrap();
        assert_eq!(a, b);
        let synth = FrameSynthesizer::new(&d, small_params()).unwrap();
        let mut f = vec![0u16; 32];
        synth.fill_frame(1234, &mut f);
        assert_eq!(&f[..], a.frame(1234));
    }

    #[test]
    fn zero_efficiency_and_background_gives_empty_stack() {
        let d = pixelate_jpd(&uniform(64, 2e-6), 8, 16e-6).unwrap();
        let p = AcquisitionParams {
            efficiency: 0.0,
            background_rate: 0.0,
            ..small_params()
        };
        let s = synthesize_frames(&d, p).unwrap();
        assert!(s.counts.iter().all(|&c| c == 0));
    }

    #[test]
    fn mean_counts_match_budget() {
        let d = pixelate_jpd(&uniform(64, 2e-6), 8, 16e-6).unwrap();
        let p = AcquisitionParams {
            frames: 20_000,
            y_sigma: 1.0,
            ..small_params()
        };
        let s = synthesize_frames(&d, p).unwrap();
        let totals: Vec<f64> = s.iter_frames().map(|f| f.iter().map(|&c| c as f64).sum()).collect();
        let m = totals.len() as f64;
        let mean = totals.iter().sum::<f64>() / m;
        let var = totals.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (m - 1.0);
        let expected = 2.0 * p.mean_pairs * p.efficiency + (p.nx * p.ny) as f64 * p.background_rate;
        assert!((mean - expected).abs() < 3.0 * (var / m).sqrt(), "{mean} vs {expected}");
    }

    #[test]
    fn validation_reports_field() {
        let p = AcquisitionParams {
            efficiency: 1.5,
            ..Default::default()
        };
        match p.validate() {
            Err(Error::Config { path, .. }) => assert_eq!(path, "acquisition.efficiency"),
            other => panic!("{other:?}"),
        }
    }
}
