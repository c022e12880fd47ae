//! Seeded generation of the reference sample and of the simulated scenarios.
//!
//! Every generator draws from a ChaCha8 stream identified by `(seed, stream)`,
//! so results are reproducible bit-for-bit across runs and platforms.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PointCloud;

/// A `(seed, stream)` pair naming one independent random sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeededRng {
    pub seed: u64,
    pub stream: u64,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// A fresh generator positioned at the start of the stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// Same seed, different stream.
    pub fn fork(&self, stream: u64) -> Self {
        Self::new(self.seed, stream)
    }
}

/// One-dimensional marginal law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum Marginal {
    StandardNormal,
    Normal { mean: f64, sd: f64 },
    /// Pareto on `[1, inf)` with density `alpha * x^(-alpha-1)`.
    Pareto { alpha: f64 },
    StudentT { dof: f64 },
}

impl Marginal {
    fn validate(&self) -> Result<()> {
        match *self {
            Marginal::StandardNormal => Ok(()),
            Marginal::Normal { sd, .. } if sd > 0.0 => Ok(()),
            Marginal::Pareto { alpha } if alpha > 0.0 => Ok(()),
            Marginal::StudentT { dof } if dof > 0.0 => Ok(()),
            ref other => Err(Error::BadSpec(format!("invalid marginal {other:?}"))),
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            Marginal::StandardNormal => rng.sample(StandardNormal),
            Marginal::Normal { mean, sd } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + sd * z
            }
            Marginal::Pareto { alpha } => pareto_inverse_cdf(rng.random::<f64>(), alpha),
            Marginal::StudentT { dof } => {
                let z: f64 = rng.sample(StandardNormal);
                let chi = ChiSquared::new(dof).expect("validated dof");
                z * (dof / chi.sample(rng)).sqrt()
            }
        }
    }
}

/// Inverse CDF of the Pareto law on `[1, inf)`: `(1 - v)^(-1/alpha)`.
fn pareto_inverse_cdf(v: f64, alpha: f64) -> f64 {
    (1.0 - v).powf(-1.0 / alpha)
}

/// Law of a simulated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum GeneratorSpec {
    GaussianFull {
        mean: Vec<f64>,
        covariance: Vec<Vec<f64>>,
    },
    /// Multivariate Student t: `location + Z * sqrt(dof / chi2_dof)` with
    /// `Z ~ N(0, scatter)`.
    StudentT {
        location: Vec<f64>,
        scatter: Vec<Vec<f64>>,
        dof: f64,
    },
    /// Independent Pareto marginals with the given shape parameters.
    ParetoMarginals { alphas: Vec<f64> },
    IndependentProduct { marginals: Vec<Marginal> },
    /// Image of a standard Gaussian under `x -> (1 + |x_1|, ..., 1 + |x_d|)`.
    PushforwardAbsShift { dim: usize },
}

impl GeneratorSpec {
    pub fn standard_gaussian(d: usize) -> Self {
        GeneratorSpec::GaussianFull {
            mean: vec![0.0; d],
            covariance: identity(d),
        }
    }

    pub fn centered_gaussian(covariance: Vec<Vec<f64>>) -> Self {
        GeneratorSpec::GaussianFull {
            mean: vec![0.0; covariance.len()],
            covariance,
        }
    }

    /// Gaussian with the sample mean and sample covariance of `cloud`.
    pub fn moment_matched_gaussian(cloud: &PointCloud) -> Self {
        GeneratorSpec::GaussianFull {
            mean: cloud.mean(),
            covariance: cloud.covariance(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            GeneratorSpec::GaussianFull { mean, .. } => mean.len(),
            GeneratorSpec::StudentT { location, .. } => location.len(),
            GeneratorSpec::ParetoMarginals { alphas } => alphas.len(),
            GeneratorSpec::IndependentProduct { marginals } => marginals.len(),
            GeneratorSpec::PushforwardAbsShift { dim } => *dim,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dim() == 0 {
            return Err(Error::BadSpec("dimension must be at least 1".into()));
        }
        match self {
            GeneratorSpec::GaussianFull { mean, covariance } => {
                check_square(covariance, mean.len())
            }
            GeneratorSpec::StudentT {
                location,
                scatter,
                dof,
            } => {
                if !(*dof > 0.0) {
                    return Err(Error::BadSpec(format!("degrees of freedom must be > 0, got {dof}")));
                }
                check_square(scatter, location.len())
            }
            GeneratorSpec::ParetoMarginals { alphas } => {
                if alphas.iter().any(|a| !(*a > 0.0)) {
                    return Err(Error::BadSpec("Pareto shapes must be > 0".into()));
                }
                Ok(())
            }
            GeneratorSpec::IndependentProduct { marginals } => {
                marginals.iter().try_for_each(Marginal::validate)
            }
            GeneratorSpec::PushforwardAbsShift { .. } => Ok(()),
        }
    }
}

fn identity(d: usize) -> Vec<Vec<f64>> {
    (0..d)
        .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn check_square(m: &[Vec<f64>], d: usize) -> Result<()> {
    if m.len() != d || m.iter().any(|r| r.len() != d) {
        return Err(Error::BadSpec(format!("matrix must be {d}x{d}")));
    }
    Ok(())
}

/// Returns `L` with `L L^T = cov`. Cholesky when the matrix is positive
/// definite, otherwise the symmetric square root with eigenvalues floored at 0.
pub fn covariance_factor(cov: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let d = cov.len();
    check_square(cov, d)?;
    let m = DMatrix::from_fn(d, d, |i, j| cov[i][j]);
    let asym = (0..d)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .map(|(i, j)| (m[(i, j)] - m[(j, i)]).abs())
        .fold(0.0, f64::max);
    let size = m.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    if asym > 1e-12 * size {
        return Err(Error::BadSpec("covariance is not symmetric".into()));
    }
    if let Some(chol) = m.clone().cholesky() {
        return Ok(chol.l());
    }
    let eig = m.symmetric_eigen();
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -1e-10 * size {
        return Err(Error::BadSpec(format!(
            "covariance has negative eigenvalue {min:e}"
        )));
    }
    let root = DVector::from_iterator(d, eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()));
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&root) * v.transpose())
}

/// `n` i.i.d. points uniform on the closed unit ball of `R^d`.
///
/// Direction from a normalized Gaussian vector, radius `V^(1/d)`.
pub fn sample_unit_ball(n: usize, d: usize, rng: &SeededRng) -> Result<PointCloud> {
    if n == 0 || d == 0 {
        return Err(Error::invalid(format!("need n >= 1 and d >= 1, got n={n}, d={d}")));
    }
    let mut r = rng.rng();
    let mut data = Vec::with_capacity(n * d);
    let mut z = vec![0.0; d];
    for _ in 0..n {
        let norm = loop {
            for zk in z.iter_mut() {
                *zk = r.sample(StandardNormal);
            }
            let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                break norm;
            }
        };
        let radius = r.random::<f64>().powf(1.0 / d as f64);
        let start = data.len();
        data.extend(z.iter().map(|zk| zk * radius / norm));
        // rounding can leave a point a few ulps outside the ball
        let sq: f64 = data[start..].iter().map(|v| v * v).sum();
        if sq > 1.0 {
            let nrm = sq.sqrt();
            data[start..].iter_mut().for_each(|v| *v /= nrm * (1.0 + f64::EPSILON));
        }
    }
    PointCloud::new(n, d, data)
}

/// `n` i.i.d. draws from `spec`.
pub fn generate(spec: &GeneratorSpec, n: usize, rng: &SeededRng) -> Result<PointCloud> {
    generate_with(spec, n, &mut rng.rng())
}

pub fn generate_with<R: Rng>(spec: &GeneratorSpec, n: usize, rng: &mut R) -> Result<PointCloud> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::invalid("sample size must be at least 1"));
    }
    let d = spec.dim();
    let mut data = Vec::with_capacity(n * d);
    match spec {
        GeneratorSpec::GaussianFull { mean, covariance } => {
            let l = covariance_factor(covariance)?;
            let mut z = DVector::zeros(d);
            for _ in 0..n {
                z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                let x = &l * &z;
                data.extend(x.iter().zip(mean).map(|(xi, mi)| xi + mi));
            }
        }
        GeneratorSpec::StudentT {
            location,
            scatter,
            dof,
        } => {
            let l = covariance_factor(scatter)?;
            let chi = ChiSquared::new(*dof).map_err(|e| Error::BadSpec(e.to_string()))?;
            let mut z = DVector::zeros(d);
            for _ in 0..n {
                z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                let w = (dof / chi.sample(rng)).sqrt();
                let x = &l * &z;
                data.extend(x.iter().zip(location).map(|(xi, mi)| mi + w * xi));
            }
        }
        GeneratorSpec::ParetoMarginals { alphas } => {
            for _ in 0..n {
                for &a in alphas {
                    data.push(pareto_inverse_cdf(rng.random::<f64>(), a));
                }
            }
        }
        GeneratorSpec::IndependentProduct { marginals } => {
            for _ in 0..n {
                for m in marginals {
                    data.push(m.draw(rng));
                }
            }
        }
        GeneratorSpec::PushforwardAbsShift { .. } => {
            for _ in 0..n * d {
                let z: f64 = rng.sample(StandardNormal);
                data.push(1.0 + z.abs());
            }
        }
    }
    PointCloud::new(n, d, data)
}

/// Replaces the first `outliers.len()` rows of `cloud` with `outliers`.
pub fn inject_outliers<R: AsRef<[f64]>>(cloud: &PointCloud, outliers: &[R]) -> Result<PointCloud> {
    if outliers.len() > cloud.len() {
        return Err(Error::invalid(format!(
            "{} outliers do not fit in a cloud of {} points",
            outliers.len(),
            cloud.len()
        )));
    }
    let mut out = cloud.clone();
    for (i, o) in outliers.iter().enumerate() {
        let o = o.as_ref();
        if o.len() != cloud.dim() {
            return Err(Error::DimensionMismatch {
                expected: cloud.dim(),
                found: o.len(),
            });
        }
        if o.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("outlier coordinates must be finite"));
        }
        out.set_point(i, o);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ks_uniform_power(samples: &mut [f64], d: f64) -> f64 {
        // KS distance between empirical CDF and t^d on [0,1]
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = samples.len() as f64;
        samples
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let f = t.powf(d);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn unit_ball_support_and_moments() {
        let rng = SeededRng::new(7, 1);
        let c = sample_unit_ball(100_000, 3, &rng).unwrap();
        assert!(c.points().all(|p| p.iter().map(|v| v * v).sum::<f64>() <= 1.0));
        let sq: f64 = c.points().map(|p| p.iter().map(|v| v * v).sum::<f64>()).sum::<f64>()
            / c.len() as f64;
        assert!((sq - 0.6).abs() < 0.01, "E|U|^2 = {sq}");
        let mean = c.mean();
        assert!(mean.iter().all(|m| m.abs() < 0.01));
    }

    #[test]
    fn unit_ball_one_dimensional() {
        let c = sample_unit_ball(100_000, 1, &SeededRng::new(3, 0)).unwrap();
        let m: f64 = c.as_slice().iter().map(|v| v.abs()).sum::<f64>() / c.len() as f64;
        assert!((m - 0.5).abs() < 0.02);
        assert!(c.as_slice().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn unit_ball_radial_cdf() {
        for d in [2usize, 3, 5] {
            let c = sample_unit_ball(100_000, d, &SeededRng::new(11, d as u64)).unwrap();
            let mut r: Vec<f64> = c
                .points()
                .map(|p| p.iter().map(|v| v * v).sum::<f64>().sqrt())
                .collect();
            let ks = ks_uniform_power(&mut r, d as f64);
            assert!(ks < 0.01, "d={d} ks={ks}");
        }
    }

    #[test]
    fn same_seed_same_stream_is_bitwise_identical() {
        let spec = GeneratorSpec::StudentT {
            location: vec![0.0; 3],
            scatter: identity(3),
            dof: 3.2,
        };
        let a = generate(&spec, 500, &SeededRng::new(9, 2)).unwrap();
        let b = generate(&spec, 500, &SeededRng::new(9, 2)).unwrap();
        let c = generate(&spec, 500, &SeededRng::new(9, 3)).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
        assert_ne!(a.as_slice(), c.as_slice());
    }

    #[test]
    fn gaussian_identity_covariance() {
        let c = generate(&GeneratorSpec::standard_gaussian(3), 100_000, &SeededRng::new(1, 1))
            .unwrap();
        let cov = c.covariance();
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((cov[i][j] - target).abs() < 0.03, "cov[{i}][{j}]={}", cov[i][j]);
            }
        }
    }

    #[test]
    fn gaussian_full_reproduces_covariance() {
        let sigma = vec![
            vec![1.0, 0.5, 0.2],
            vec![0.5, 1.0, 0.0],
            vec![0.2, 0.0, 1.0],
        ];
        let c = generate(&GeneratorSpec::centered_gaussian(sigma.clone()), 100_000, &SeededRng::new(5, 0))
            .unwrap();
        let cov = c.covariance();
        for i in 0..3 {
            for j in 0..3 {
                assert!((cov[i][j] - sigma[i][j]).abs() < 0.03);
            }
        }
    }

    #[test]
    fn pareto_tail_probability() {
        let c = generate(&GeneratorSpec::ParetoMarginals { alphas: vec![3.0] }, 100_000, &SeededRng::new(2, 0))
            .unwrap();
        let tail = c.as_slice().iter().filter(|&&x| x > 2.0).count() as f64 / c.len() as f64;
        assert!((tail - 0.125).abs() < 0.01, "P(X>2) = {tail}");
        assert!(c.as_slice().iter().all(|&x| x >= 1.0));
    }

    #[test]
    fn pushforward_support() {
        let c = generate(&GeneratorSpec::PushforwardAbsShift { dim: 3 }, 10_000, &SeededRng::new(4, 0))
            .unwrap();
        assert!(c.as_slice().iter().all(|&x| x >= 1.0));
    }

    #[test]
    fn semidefinite_covariance_uses_eigen_floor() {
        let cov = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        let l = covariance_factor(&cov).unwrap();
        let back = &l * l.transpose();
        for i in 0..2 {
            for j in 0..2 {
                assert!((back[(i, j)] - 1.0).abs() < 1e-12);
            }
        }
        let bad = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        assert!(matches!(covariance_factor(&bad), Err(Error::BadSpec(_))));
        let asym = vec![vec![1.0, 0.5], vec![0.0, 1.0]];
        assert!(covariance_factor(&asym).is_err());
    }

    #[test]
    fn student_t_large_dof_approaches_gaussian() {
        let n = 10_000;
        let t = generate(
            &GeneratorSpec::StudentT {
                location: vec![0.0],
                scatter: identity(1),
                dof: 1e6,
            },
            n,
            &SeededRng::new(8, 1),
        )
        .unwrap();
        let g = generate(&GeneratorSpec::standard_gaussian(1), n, &SeededRng::new(8, 2)).unwrap();
        let mut a = t.column(0);
        let mut b = g.column(0);
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        // two-sample KS via merge
        let (mut i, mut j, mut ks) = (0usize, 0usize, 0.0f64);
        while i < n && j < n {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            ks = ks.max((i as f64 - j as f64).abs() / n as f64);
        }
        assert!(ks < 0.03, "ks = {ks}");
    }

    #[test]
    fn outlier_injection() {
        let base = generate(&GeneratorSpec::standard_gaussian(3), 1000, &SeededRng::new(1, 0)).unwrap();
        let same = inject_outliers::<Vec<f64>>(&base, &[]).unwrap();
        assert_eq!(same, base);
        let outliers = [[8.0, 8.0, 8.0], [9.0, 9.0, 9.0], [10.0, 10.0, 10.0]];
        let out = inject_outliers(&base, &outliers).unwrap();
        assert_eq!(out.len(), 1000);
        for (i, o) in outliers.iter().enumerate() {
            assert_eq!(out.point(i), o);
        }
        assert_eq!(out.point(3), base.point(3));
        assert!(inject_outliers(&base, &[[1.0, 2.0]]).is_err());
    }

    #[test]
    fn outlier_full_replacement() {
        let base = PointCloud::from_rows(&[[0.0], [1.0]]).unwrap();
        let out = inject_outliers(&base, &[[5.0], [6.0]]).unwrap();
        assert_eq!(out.as_slice(), &[5.0, 6.0]);
        assert!(inject_outliers(&base, &[[1.0], [2.0], [3.0]]).is_err());
    }
}
