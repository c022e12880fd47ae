//! Shared data model: point clouds, compact regions, standardization and
//! run configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when checking that weights form a probability vector.
const WEIGHT_SUM_TOL: f64 = 1e-12;

/// An ordered list of `n` points in `R^d`, i.e. an empirical measure.
///
/// Coordinates are stored row-major. Weights are optional; when absent every
/// point carries mass `1/n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    data: Vec<f64>,
    n: usize,
    d: usize,
    names: Option<Vec<String>>,
    weights: Option<Vec<f64>>,
}

impl PointCloud {
    /// Builds a cloud from row-major coordinates.
    pub fn new(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::invalid(format!(
                "point cloud needs n >= 1 and d >= 1, got n={n}, d={d}"
            )));
        }
        if data.len() != n * d {
            return Err(Error::invalid(format!(
                "expected {} coordinates for {n}x{d} cloud, got {}",
                n * d,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite coordinate at point {}, component {}",
                pos / d,
                pos % d
            )));
        }
        Ok(Self {
            data,
            n,
            d,
            names: None,
            weights: None,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * d);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != d {
                return Err(Error::invalid(format!(
                    "row {i} has {} coordinates, expected {d}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), d, data)
    }

    /// One-dimensional cloud from scalar values.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        Self::new(values.len(), 1, values.to_vec())
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                found: names.len(),
            });
        }
        self.names = Some(names);
        Ok(self)
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.n {
            return Err(Error::invalid(format!(
                "expected {} weights, got {}",
                self.n,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid(format!("weights sum to {total}, not 1")));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.d)
    }

    /// Row-major coordinate buffer.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    /// Mass of point `i`.
    pub fn weight(&self, i: usize) -> f64 {
        match &self.weights {
            Some(w) => w[i],
            None => 1.0 / self.n as f64,
        }
    }

    /// All point masses (materialized as uniform when not set).
    pub fn weights(&self) -> Vec<f64> {
        match &self.weights {
            Some(w) => w.clone(),
            None => vec![1.0 / self.n as f64; self.n],
        }
    }

    pub fn has_uniform_weights(&self) -> bool {
        self.weights.is_none()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.points().map(|p| p[j]).collect()
    }

    /// Weighted mean of the cloud.
    pub fn mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.d];
        for (i, p) in self.points().enumerate() {
            let w = self.weight(i);
            for (m, x) in mean.iter_mut().zip(p) {
                *m += w * x;
            }
        }
        mean
    }

    /// Unbiased sample covariance (uniform weights assumed).
    pub fn covariance(&self) -> Vec<Vec<f64>> {
        let mean = self.mean();
        let mut cov = vec![vec![0.0; self.d]; self.d];
        for p in self.points() {
            for a in 0..self.d {
                for b in 0..self.d {
                    cov[a][b] += (p[a] - mean[a]) * (p[b] - mean[b]);
                }
            }
        }
        let denom = (self.n.max(2) - 1) as f64;
        for row in cov.iter_mut() {
            for v in row.iter_mut() {
                *v /= denom;
            }
        }
        cov
    }

    /// Cloud made of the selected rows, in the given order. Weights are
    /// renormalized over the selection.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyRestriction);
        }
        let mut data = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            data.extend_from_slice(self.point(i));
        }
        let mut out = Self::new(indices.len(), self.d, data)?;
        out.names = self.names.clone();
        if let Some(w) = &self.weights {
            let picked: Vec<f64> = indices.iter().map(|&i| w[i]).collect();
            let total: f64 = picked.iter().sum();
            if total > 0.0 {
                out.weights = Some(picked.iter().map(|v| v / total).collect());
            }
        }
        Ok(out)
    }

    /// Stacks two clouds of the same dimension (uniform weights on the result).
    pub fn concat(&self, other: &PointCloud) -> Result<Self> {
        if self.d != other.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                found: other.d,
            });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        let mut out = Self::new(self.n + other.n, self.d, data)?;
        out.names = self.names.clone();
        Ok(out)
    }

    /// Applies `f` to every point, keeping names and weights.
    pub fn map_points(&self, mut f: impl FnMut(&[f64], &mut [f64])) -> Result<Self> {
        let mut data = vec![0.0; self.data.len()];
        for (src, dst) in self.data.chunks_exact(self.d).zip(data.chunks_exact_mut(self.d)) {
            f(src, dst);
        }
        let mut out = Self::new(self.n, self.d, data)?;
        out.names = self.names.clone();
        out.weights = self.weights.clone();
        Ok(out)
    }

    /// Translates every point by `shift`.
    pub fn translate(&self, shift: &[f64]) -> Result<Self> {
        if shift.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                found: shift.len(),
            });
        }
        self.map_points(|p, out| {
            for ((o, x), s) in out.iter_mut().zip(p).zip(shift) {
                *o = x + s;
            }
        })
    }

    pub(crate) fn set_point(&mut self, i: usize, values: &[f64]) {
        self.data[i * self.d..(i + 1) * self.d].copy_from_slice(values);
    }
}

/// A compact set used to restrict samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CompactRegion {
    /// Axis-aligned box `[lower_k, upper_k]` per coordinate.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// Closed ball of the given radius centered at the origin.
    Ball { radius: f64 },
}

impl CompactRegion {
    pub fn ball(radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::invalid(format!("ball radius must be positive, got {radius}")));
        }
        Ok(CompactRegion::Ball { radius })
    }

    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                found: upper.len(),
            });
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::invalid("box lower bound exceeds upper bound"));
        }
        Ok(CompactRegion::Box { lower, upper })
    }

    /// Closed-set membership.
    pub fn contains(&self, p: &[f64]) -> bool {
        match self {
            CompactRegion::Box { lower, upper } => p
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(x, (l, u))| *l <= *x && *x <= *u),
            CompactRegion::Ball { radius } => {
                p.iter().map(|x| x * x).sum::<f64>() <= radius * radius
            }
        }
    }

    /// Short human-readable description used to tag plot sets.
    pub fn describe(&self) -> String {
        match self {
            CompactRegion::Box { lower, upper } => {
                let sides: Vec<String> = lower
                    .iter()
                    .zip(upper)
                    .map(|(l, u)| format!("[{l},{u}]"))
                    .collect();
                format!("box {}", sides.join("x"))
            }
            CompactRegion::Ball { radius } => format!("ball r={radius}"),
        }
    }
}

/// Smallest axis-aligned box holding every point of every cloud, widened on
/// each side by `inflation * side_length / 2`.
pub fn bounding_region(clouds: &[&PointCloud], inflation: f64) -> Result<CompactRegion> {
    let first = clouds
        .first()
        .ok_or_else(|| Error::invalid("bounding_region needs at least one cloud"))?;
    if !(inflation >= 0.0 && inflation.is_finite()) {
        return Err(Error::invalid(format!("inflation must be >= 0, got {inflation}")));
    }
    let d = first.dim();
    let mut lower = vec![f64::INFINITY; d];
    let mut upper = vec![f64::NEG_INFINITY; d];
    for cloud in clouds {
        if cloud.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: cloud.dim(),
            });
        }
        for p in cloud.points() {
            for k in 0..d {
                lower[k] = lower[k].min(p[k]);
                upper[k] = upper[k].max(p[k]);
            }
        }
    }
    for k in 0..d {
        let pad = 0.5 * inflation * (upper[k] - lower[k]);
        lower[k] -= pad;
        upper[k] += pad;
    }
    CompactRegion::boxed(lower, upper)
}

/// Points of `cloud` inside `region`, with their original indices.
pub fn restrict(cloud: &PointCloud, region: &CompactRegion) -> Result<(PointCloud, Vec<usize>)> {
    let kept: Vec<usize> = cloud
        .points()
        .enumerate()
        .filter(|(_, p)| region.contains(p))
        .map(|(i, _)| i)
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyRestriction);
    }
    if kept.len() == cloud.len() {
        return Ok((cloud.clone(), kept));
    }
    let out = cloud.select(&kept)?;
    Ok((out, kept))
}

/// Per-column affine map `x -> (x - mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizeTransform {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl StandardizeTransform {
    pub fn apply(&self, cloud: &PointCloud) -> Result<PointCloud> {
        self.check_dim(cloud)?;
        cloud.map_points(|p, out| {
            for k in 0..p.len() {
                out[k] = (p[k] - self.mean[k]) / self.scale[k];
            }
        })
    }

    pub fn invert(&self, cloud: &PointCloud) -> Result<PointCloud> {
        self.check_dim(cloud)?;
        cloud.map_points(|p, out| {
            for k in 0..p.len() {
                out[k] = p[k] * self.scale[k] + self.mean[k];
            }
        })
    }

    fn check_dim(&self, cloud: &PointCloud) -> Result<()> {
        if cloud.dim() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                found: cloud.dim(),
            });
        }
        Ok(())
    }
}

/// Centers and scales every column using the sample standard deviation
/// (divisor `n - 1`).
pub fn standardize(cloud: &PointCloud) -> Result<(PointCloud, StandardizeTransform)> {
    standardize_with_ddof(cloud, 1)
}

/// Standardization with an explicit delta degrees of freedom: the variance
/// divisor is `n - ddof`.
pub fn standardize_with_ddof(
    cloud: &PointCloud,
    ddof: usize,
) -> Result<(PointCloud, StandardizeTransform)> {
    let n = cloud.len();
    if n <= ddof {
        return Err(Error::InsufficientData(format!(
            "standardization with ddof={ddof} needs more than {ddof} points"
        )));
    }
    let d = cloud.dim();
    let mut mean = vec![0.0; d];
    for p in cloud.points() {
        for k in 0..d {
            mean[k] += p[k];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; d];
    for p in cloud.points() {
        for k in 0..d {
            var[k] += (p[k] - mean[k]).powi(2);
        }
    }
    let mut scale = Vec::with_capacity(d);
    for (k, v) in var.iter().enumerate() {
        let sd = (v / (n - ddof) as f64).sqrt();
        // relative test so that large-offset constant columns are caught too
        if !(sd > 1e-14 * mean[k].abs().max(1.0)) {
            return Err(Error::ConstantColumn(k));
        }
        scale.push(sd);
    }
    let transform = StandardizeTransform { mean, scale };
    let out = transform.apply(cloud)?;
    Ok((out, transform))
}

/// Deterministic run parameters shared by every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    /// Entropic regularization strength.
    pub epsilon: f64,
    /// L1 marginal tolerance for Sinkhorn.
    pub sinkhorn_tol: f64,
    pub sinkhorn_max_iter: usize,
    /// Monte Carlo points used for the test-statistic integrals.
    pub mc_points: usize,
    /// Number of resampled null replicates.
    pub resamples: usize,
    /// Half-width of the diagonal band.
    pub eta: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            epsilon: 1e-2,
            sinkhorn_tol: 1e-7,
            sinkhorn_max_iter: 50_000,
            mc_points: 4096,
            resamples: 200,
            eta: 0.1,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive, got {v}")))
            }
        };
        positive("epsilon", self.epsilon)?;
        positive("sinkhorn_tol", self.sinkhorn_tol)?;
        positive("eta", self.eta)?;
        for (name, v) in [
            ("sinkhorn_max_iter", self.sinkhorn_max_iter),
            ("mc_points", self.mc_points),
            ("resamples", self.resamples),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}
