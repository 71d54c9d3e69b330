//! Two-photon joint distributions and the one-dimensional fringe profiles
//! derived from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Axis;

/// Square joint distribution over two identical axes, row-major
/// (`values[i * n + k]` pairs photon one at `i` with photon two at `k`).
#[derive(Debug, Clone, PartialEq)]
pub struct Jpd2D {
    pub axis: Axis,
    pub values: Vec<f64>,
}

impl Jpd2D {
    pub fn new(axis: Axis, values: Vec<f64>) -> Result<Self> {
        if values.len() != axis.n * axis.n {
            return Err(Error::Precondition(format!(
                "joint distribution needs {} values, got {}",
                axis.n * axis.n,
                values.len()
            )));
        }
        Ok(Self { axis, values })
    }

    pub fn n(&self) -> usize {
        self.axis.n
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.values[i * self.axis.n + k]
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn normalized(mut self) -> Result<Self> {
        let total = self.total();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::Degenerate(format!("joint distribution total is {total}")));
        }
        self.values.iter_mut().for_each(|v| *v /= total);
        Ok(self)
    }

    /// Replaces the matrix by its symmetric part; bitwise exchange symmetric afterwards.
    pub fn symmetrized(mut self) -> Self {
        let n = self.axis.n;
        for i in 0..n {
            for k in (i + 1)..n {
                let m = 0.5 * (self.values[i * n + k] + self.values[k * n + i]);
                self.values[i * n + k] = m;
                self.values[k * n + i] = m;
            }
        }
        self
    }

    /// Replaces each diagonal element by the mean of its in-row neighbours.
    ///
    /// Estimated diagonals hold same-column count variances, dominated by
    /// shot noise rather than coincidences.
    pub fn diagonal_interpolated(mut self) -> Self {
        let n = self.axis.n;
        for i in 0..n {
            let left = (i > 0).then(|| self.values[i * n + i - 1]);
            let right = (i + 1 < n).then(|| self.values[i * n + i + 1]);
            self.values[i * n + i] = match (left, right) {
                (Some(a), Some(b)) => 0.5 * (a + b),
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => 0.0,
            };
        }
        self
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn l1_distance(&self, other: &Jpd2D) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.values.chunks_exact(self.axis.n).map(|r| r.iter().sum()).collect()
    }

    /// Upper bound on the ratio of the second to the first singular value.
    ///
    /// Uses the rank-one candidate built from the marginals; any rank-one `R`
    /// gives `s2 <= |J - R|_F` and `s1^2 >= |J|_F^2 - |J - R|_F^2`.
    pub fn rank_one_bound(&self) -> f64 {
        let n = self.axis.n;
        let rows = self.row_sums();
        let cols: Vec<f64> = (0..n).map(|k| (0..n).map(|i| self.get(i, k)).sum()).collect();
        let total: f64 = rows.iter().sum();
        let mut resid = 0.0;
        let mut norm = 0.0;
        for i in 0..n {
            for k in 0..n {
                let v = self.get(i, k);
                let r = rows[i] * cols[k] / total;
                resid += (v - r) * (v - r);
                norm += v * v;
            }
        }
        if norm <= resid {
            return f64::INFINITY;
        }
        (resid / (norm - resid)).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    /// Single-photon profile over detector position.
    Marginal,
    /// Coincidences against the position difference `x1 - x2`.
    Correlation,
    /// Coincidences against the position sum `x1 + x2`.
    AntiCorrelation,
    /// Mean photon count per column.
    Intensity,
}

impl ProfileKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProfileKind::Marginal => "marginal",
            ProfileKind::Correlation => "correlation",
            ProfileKind::AntiCorrelation => "anticorrelation",
            ProfileKind::Intensity => "intensity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "marginal" => Some(ProfileKind::Marginal),
            "correlation" => Some(ProfileKind::Correlation),
            "anticorrelation" => Some(ProfileKind::AntiCorrelation),
            "intensity" => Some(ProfileKind::Intensity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FringeProfile {
    pub abscissa: Vec<f64>,
    pub values: Vec<f64>,
    pub kind: ProfileKind,
}

impl FringeProfile {
    pub fn new(abscissa: Vec<f64>, values: Vec<f64>, kind: ProfileKind) -> Result<Self> {
        if abscissa.len() != values.len() {
            return Err(Error::Precondition(format!(
                "profile abscissa has {} points but {} values",
                abscissa.len(),
                values.len()
            )));
        }
        if abscissa.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Precondition("profile abscissa must be strictly increasing".into()));
        }
        Ok(Self {
            abscissa,
            values,
            kind,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Returns a copy with the abscissa shifted so the value-weighted
    /// centroid sits at zero.
    pub fn centered(&self) -> Self {
        let floor = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let (mut w, mut m) = (0.0, 0.0);
        for (x, v) in self.abscissa.iter().zip(&self.values) {
            w += v - floor;
            m += (v - floor) * x;
        }
        let shift = if w > 0.0 { m / w } else { 0.0 };
        Self {
            abscissa: self.abscissa.iter().map(|x| x - shift).collect(),
            values: self.values.clone(),
            kind: self.kind,
        }
    }
}

/// Single-photon marginal: row sums of the joint distribution.
pub fn marginal(jpd: &Jpd2D) -> FringeProfile {
    FringeProfile {
        abscissa: jpd.axis.coords(),
        values: jpd.row_sums(),
        kind: ProfileKind::Marginal,
    }
}

/// Lag coordinate of index `idx` for lag sums over `n` points.
fn lag_axis(n: usize, spacing: f64) -> Vec<f64> {
    (0..2 * n - 1).map(|idx| (idx as f64 - (n as f64 - 1.0)) * spacing).collect()
}

/// Sums of `J(i, i - X)` over valid `i` for every integer lag `X`.
pub fn correlation(jpd: &Jpd2D) -> FringeProfile {
    let n = jpd.n();
    let values = (0..2 * n - 1)
        .map(|idx| {
            let lag = idx as isize - (n as isize - 1);
            (0..n as isize)
                .filter_map(|i| {
                    let k = i - lag;
                    (0..n as isize).contains(&k).then(|| jpd.get(i as usize, k as usize))
                })
                .sum()
        })
        .collect();
    FringeProfile {
        abscissa: lag_axis(n, jpd.axis.spacing),
        values,
        kind: ProfileKind::Correlation,
    }
}

/// Sums of `J(i, S - i)` over valid `i`; abscissa is the coordinate sum.
pub fn anticorrelation(jpd: &Jpd2D) -> FringeProfile {
    let n = jpd.n();
    let values = (0..2 * n - 1)
        .map(|s| {
            let lo = s.saturating_sub(n - 1);
            let hi = s.min(n - 1);
            (lo..=hi).map(|i| jpd.get(i, s - i)).sum()
        })
        .collect();
    FringeProfile {
        abscissa: lag_axis(n, jpd.axis.spacing),
        values,
        kind: ProfileKind::AntiCorrelation,
    }
}
