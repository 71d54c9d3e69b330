//! Accidental-subtracted coincidence estimation from frame stacks.
//!
//! Only y-summed column signals `s_i` and per-pixel moments are kept, so the
//! reductions over `y` never touch the four-index covariance. Accumulators
//! are integers: merging partial accumulators is exact and associative, and
//! a constant per-pixel offset cancels exactly.

use rayon::prelude::*;

use crate::detector::{AcquisitionParams, FrameStack};
use crate::error::{Error, Result};
use crate::grid::Axis;
use crate::profile::{FringeProfile, Jpd2D, ProfileKind};

/// Largest region (in pixels) the four-index estimator will materialize.
pub const FULL_JPD_PIXEL_LIMIT: usize = 64 * 64;

#[derive(Debug, Clone, PartialEq)]
pub struct JpdAccumulator {
    nx: usize,
    ny: usize,
    pitch: f64,
    frames: u64,
    sum_c: Vec<u64>,
    sum_cc: Vec<u128>,
    sum_s: Vec<u64>,
    sum_ss: Vec<u128>,
}

impl JpdAccumulator {
    pub fn new(nx: usize, ny: usize, pitch: f64) -> Self {
        Self {
            nx,
            ny,
            pitch,
            frames: 0,
            sum_c: vec![0; nx * ny],
            sum_cc: vec![0; nx * ny],
            sum_s: vec![0; nx],
            sum_ss: vec![0; nx * nx],
        }
    }

    pub fn for_acquisition(a: &AcquisitionParams) -> Self {
        Self::new(a.nx, a.ny, a.pixel_pitch)
    }

    pub fn frames_seen(&self) -> u64 {
        self.frames
    }

    pub fn ingest(&mut self, frame: &[u16]) {
        debug_assert_eq!(frame.len(), self.nx * self.ny);
        let mut s = vec![0u64; self.nx];
        for (row, chunk) in frame.chunks_exact(self.nx).enumerate() {
            let base = row * self.nx;
            for (x, &c) in chunk.iter().enumerate() {
                if c != 0 {
                    let c = c as u64;
                    s[x] += c;
                    self.sum_c[base + x] += c;
                    self.sum_cc[base + x] += (c * c) as u128;
                }
            }
        }
        let occupied: Vec<(usize, u64)> = s.iter().copied().enumerate().filter(|(_, v)| *v != 0).collect();
        for &(i, si) in &occupied {
            self.sum_s[i] += si;
            let row = &mut self.sum_ss[i * self.nx..(i + 1) * self.nx];
            for &(k, sk) in &occupied {
                row[k] += (si * sk) as u128;
            }
        }
        self.frames += 1;
    }

    pub fn merge(&mut self, other: &JpdAccumulator) -> Result<()> {
        if (self.nx, self.ny) != (other.nx, other.ny) {
            return Err(Error::Precondition("cannot merge accumulators of different shapes".into()));
        }
        self.frames += other.frames;
        fn add<T: Copy + std::ops::AddAssign>(a: &mut [T], b: &[T]) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += *y);
        }
        add(&mut self.sum_c, &other.sum_c);
        add(&mut self.sum_cc, &other.sum_cc);
        add(&mut self.sum_s, &other.sum_s);
        add(&mut self.sum_ss, &other.sum_ss);
        Ok(())
    }

    fn require_frames(&self) -> Result<f64> {
        if self.frames == 0 {
            return Err(Error::Precondition("no frames ingested".into()));
        }
        Ok(self.frames as f64)
    }

    /// `(M * sum_xy - sum_x * sum_y) / M^2`, exact up to the final division.
    fn covariance(m: u64, sxy: u128, sx: u64, sy: u64) -> f64 {
        let num = m as i128 * sxy as i128 - sx as i128 * sy as i128;
        num as f64 / (m as f64 * m as f64)
    }

    /// Y-reduced coincidence matrix with accidentals removed.
    pub fn jpd_2d(&self) -> Result<Jpd2D> {
        self.require_frames()?;
        let n = self.nx;
        let values = (0..n * n)
            .map(|idx| Self::covariance(self.frames, self.sum_ss[idx], self.sum_s[idx / n], self.sum_s[idx % n]))
            .collect();
        Jpd2D::new(Axis::new(n, self.pitch), values)
    }

    /// Per-column sum over rows of the per-pixel count variance.
    pub fn marginal_profile(&self) -> Result<FringeProfile> {
        self.require_frames()?;
        let values = (0..self.nx)
            .map(|x| {
                (0..self.ny)
                    .map(|y| {
                        let p = y * self.nx + x;
                        Self::covariance(self.frames, self.sum_cc[p], self.sum_c[p], self.sum_c[p])
                    })
                    .sum()
            })
            .collect();
        FringeProfile::new(Axis::new(self.nx, self.pitch).coords(), values, ProfileKind::Marginal)
    }

    /// Mean count per column.
    pub fn intensity_profile(&self) -> Result<FringeProfile> {
        let m = self.require_frames()?;
        let values = self.sum_s.iter().map(|&s| s as f64 / m).collect();
        FringeProfile::new(Axis::new(self.nx, self.pitch).coords(), values, ProfileKind::Intensity)
    }

    /// Lag sums of the reduced matrix over valid columns only.
    pub fn correlation_profile(&self) -> Result<FringeProfile> {
        Ok(crate::profile::correlation(&self.jpd_2d()?))
    }

    pub fn anticorrelation_profile(&self) -> Result<FringeProfile> {
        Ok(crate::profile::anticorrelation(&self.jpd_2d()?))
    }
}

/// Accumulates `frames` frames produced on demand, splitting the index range
/// into `chunk`-sized pieces that are merged in order.
pub fn accumulate<F>(nx: usize, ny: usize, pitch: f64, frames: usize, chunk: usize, produce: F) -> JpdAccumulator
where
    F: Fn(usize, &mut [u16]) + Sync,
{
    let chunk = chunk.max(1);
    let starts: Vec<usize> = (0..frames).step_by(chunk).collect();
    let parts: Vec<JpdAccumulator> = starts
        .par_iter()
        .map(|&start| {
            let mut acc = JpdAccumulator::new(nx, ny, pitch);
            let mut buf = vec![0u16; nx * ny];
            for m in start..(start + chunk).min(frames) {
                produce(m, &mut buf);
                acc.ingest(&buf);
            }
            acc
        })
        .collect();
    let mut total = JpdAccumulator::new(nx, ny, pitch);
    for p in &parts {
        total.merge(p).expect("shapes agree by construction");
    }
    total
}

pub fn accumulate_stack(stack: &FrameStack) -> JpdAccumulator {
    let a = &stack.acquisition;
    accumulate(a.nx, a.ny, a.pixel_pitch, a.frames, 4096, |m, buf| buf.copy_from_slice(stack.frame(m)))
}

pub fn jpd_2d(stack: &FrameStack) -> Result<Jpd2D> {
    accumulate_stack(stack).jpd_2d()
}

pub fn marginal_profile(stack: &FrameStack) -> Result<FringeProfile> {
    accumulate_stack(stack).marginal_profile()
}

pub fn correlation_profile(stack: &FrameStack) -> Result<FringeProfile> {
    accumulate_stack(stack).correlation_profile()
}

/// Covariance between every pair of pixels in a region; pixel `(x, y)` has
/// flat index `y * nx + x`.
#[derive(Debug, Clone)]
pub struct FullJpd {
    pub nx: usize,
    pub ny: usize,
    pub pitch: f64,
    pub values: Vec<f64>,
}

impl FullJpd {
    #[inline]
    pub fn get(&self, x1: usize, y1: usize, x2: usize, y2: usize) -> f64 {
        let p = self.nx * self.ny;
        self.values[(y1 * self.nx + x1) * p + y2 * self.nx + x2]
    }

    pub fn reduce_2d(&self) -> Jpd2D {
        let n = self.nx;
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let mut s = 0.0;
                for j in 0..self.ny {
                    for l in 0..self.ny {
                        s += self.get(i, j, k, l);
                    }
                }
                values[i * n + k] = s;
            }
        }
        Jpd2D {
            axis: Axis::new(n, self.pitch),
            values,
        }
    }

    pub fn marginal(&self) -> Vec<f64> {
        (0..self.nx)
            .map(|i| (0..self.ny).map(|j| self.get(i, j, i, j)).sum())
            .collect()
    }

    /// Lag sums indexed from `-(nx-1)` to `nx-1`.
    pub fn correlation(&self) -> Vec<f64> {
        let n = self.nx as isize;
        (-(n - 1)..n)
            .map(|lag| {
                let mut s = 0.0;
                for j in 0..self.ny {
                    for l in 0..self.ny {
                        for i in 0..n {
                            let k = i - lag;
                            if (0..n).contains(&k) {
                                s += self.get(i as usize, j, k as usize, l);
                            }
                        }
                    }
                }
                s
            })
            .collect()
    }
}

/// Brute-force four-index covariance over the region
/// `[x0, x0+nx) x [y0, y0+ny)`.
pub fn jpd_full(stack: &FrameStack, x0: usize, nx: usize, y0: usize, ny: usize) -> Result<FullJpd> {
    if nx * ny > FULL_JPD_PIXEL_LIMIT {
        return Err(Error::Resource(format!(
            "region of {} pixels exceeds the {FULL_JPD_PIXEL_LIMIT}-pixel limit of the four-index estimator; use the reduced estimators",
            nx * ny
        )));
    }
    let roi = stack.crop(x0, nx, y0, ny)?;
    let p = nx * ny;
    let m = roi.frames() as f64;
    let mut mean = vec![0.0; p];
    let mut second = vec![0.0; p * p];
    for f in roi.iter_frames() {
        for (a, &ca) in f.iter().enumerate() {
            mean[a] += ca as f64;
            if ca == 0 {
                continue;
            }
            let row = &mut second[a * p..(a + 1) * p];
            for (b, &cb) in f.iter().enumerate() {
                row[b] += ca as f64 * cb as f64;
            }
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    let values = (0..p * p).map(|idx| second[idx] / m - mean[idx / p] * mean[idx % p]).collect();
    Ok(FullJpd {
        nx,
        ny,
        pitch: stack.acquisition.pixel_pitch,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{pixelate_jpd, synthesize_frames};
    use proptest::prelude::*;

    fn params(frames: usize, nx: usize, ny: usize) -> AcquisitionParams {
        AcquisitionParams {
            frames,
            nx,
            ny,
            mean_pairs: 1.5,
            efficiency: 0.8,
            background_rate: 0.1,
            y_sigma: 30e-6,
            seed: 9,
            ..Default::default()
        }
    }

    fn stack(frames: usize, nx: usize, ny: usize) -> FrameStack {
        let n = 4 * nx;
        let raw: Vec<f64> = (0..n * n)
            .map(|idx| {
                let (i, k) = ((idx / n) as f64, (idx % n) as f64);
                (-(i - k).powi(2) / 8.0).exp() + 0.01
            })
            .collect();
        let j = Jpd2D::new(Axis::new(n, 4e-6), raw).unwrap();
        let d = pixelate_jpd(&j, nx, 16e-6).unwrap();
        synthesize_frames(&d, params(frames, nx, ny)).unwrap()
    }

    #[test]
    fn constant_frames_give_zero() {
        let a = params(50, 4, 2);
        let s = FrameStack::new(a, [3u16, 0, 7, 1, 2, 2, 9, 0].repeat(50)).unwrap();
        let acc = accumulate_stack(&s);
        assert!(acc.jpd_2d().unwrap().values.iter().all(|&v| v == 0.0));
        assert!(acc.marginal_profile().unwrap().values.iter().all(|&v| v == 0.0));
        let full = jpd_full(&s, 0, 4, 0, 2).unwrap();
        assert!(full.values.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn streaming_matches_brute_force() {
        let s = stack(400, 8, 4);
        let acc = accumulate_stack(&s);
        let full = jpd_full(&s, 0, 8, 0, 4).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-10 * a.abs().max(b.abs()).max(1e-12);
        let j = acc.jpd_2d().unwrap();
        for (a, b) in j.values.iter().zip(&full.reduce_2d().values) {
            assert!(close(*a, *b), "{a} {b}");
        }
        for (a, b) in acc.marginal_profile().unwrap().values.iter().zip(full.marginal()) {
            assert!(close(*a, b));
        }
        for (a, b) in acc.correlation_profile().unwrap().values.iter().zip(full.correlation()) {
            assert!(close(*a, b));
        }
        for x in 0..8 {
            for y in 0..4 {
                let col: Vec<f64> = s.iter_frames().map(|f| f[y * 8 + x] as f64).collect();
                let m = col.len() as f64;
                let mean = col.iter().sum::<f64>() / m;
                let var = col.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / m;
                assert!(close(full.get(x, y, x, y), var));
            }
        }
    }

    #[test]
    fn full_estimator_guards_memory() {
        let s = FrameStack::new(params(1, 80, 60), vec![0; 4800]).unwrap();
        assert!(matches!(jpd_full(&s, 0, 80, 0, 60), Err(Error::Resource(_))));
    }

    #[test]
    fn poisson_marginal_equals_rate() {
        let a = AcquisitionParams {
            mean_pairs: 0.0,
            background_rate: 0.3,
            ..params(40_000, 4, 4)
        };
        let d = Jpd2D::new(Axis::new(4, 16e-6), vec![1.0 / 16.0; 16]).unwrap();
        let s = synthesize_frames(&d, a).unwrap();
        let acc = accumulate_stack(&s);
        let m = acc.marginal_profile().unwrap();
        let intensity = acc.intensity_profile().unwrap();
        for (v, i) in m.values.iter().zip(&intensity.values) {
            // Each column holds 4 Poisson(0.3) pixels.
            assert!((v - 1.2).abs() < 0.05, "{v}");
            assert!((i - 1.2).abs() < 0.05);
        }
        let j = acc.jpd_2d().unwrap();
        let sd = 1.2 / (40_000f64).sqrt();
        for i in 0..4 {
            for k in 0..4 {
                if i != k {
                    assert!(j.get(i, k).abs() < 5.0 * sd);
                }
            }
        }
    }

    #[test]
    fn merge_is_partition_independent() {
        let s = stack(300, 6, 3);
        let whole = accumulate_stack(&s);
        let a = &s.acquisition;
        for chunk in [1, 7, 64, 1000] {
            let part = accumulate(a.nx, a.ny, a.pixel_pitch, a.frames, chunk, |m, b| b.copy_from_slice(s.frame(m)));
            assert_eq!(part, whole);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn constant_offsets_change_nothing(offsets in proptest::collection::vec(0u16..50, 12)) {
            let s = stack(200, 4, 3);
            let mut shifted = s.clone();
            for f in shifted.counts.chunks_exact_mut(12) {
                f.iter_mut().zip(&offsets).for_each(|(c, o)| *c += o);
            }
            let a = accumulate_stack(&s);
            let b = accumulate_stack(&shifted);
            prop_assert_eq!(a.jpd_2d().unwrap().values, b.jpd_2d().unwrap().values);
            prop_assert_eq!(a.marginal_profile().unwrap().values, b.marginal_profile().unwrap().values);
            prop_assert_eq!(a.correlation_profile().unwrap().values, b.correlation_profile().unwrap().values);
        }
    }
}
