//! Plot sets, diagonal-band diagnostics and the entropic two-sample tests.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result, StageExt};
use crate::exact::{DiscreteMap, ExactPotentials};
use crate::model::{restrict, CompactRegion, PointCloud, RunConfig};
use crate::sampling::{sample_unit_ball, SeededRng};
use crate::sinkhorn::{sinkhorn, sinkhorn_warm, EotMap, EotPotential, SinkhornParams, SinkhornState};

/// Smallest accepted number of null replicates.
pub const MIN_RESAMPLES: usize = 50;

/// RNG streams derived from the run seed.
pub mod streams {
    pub const REFERENCE: u64 = 1;
    pub const MONTE_CARLO: u64 = 2;
    pub const SUBSAMPLE: u64 = 3;
    pub const DATA_X: u64 = 10;
    pub const DATA_Y: u64 = 11;
    /// Replicate `b` of the null distribution uses `NULL_BASE + b`.
    pub const NULL_BASE: u64 = 1 << 32;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    Ot,
    Eot { epsilon: f64 },
    Geometric,
}

impl Method {
    pub fn tag(&self) -> String {
        match self {
            Method::Ot => "ot".into(),
            Method::Eot { epsilon } => format!("eot(eps={epsilon})"),
            Method::Geometric => "geometric".into(),
        }
    }

    /// Short form usable in file names.
    pub fn slug(&self) -> String {
        match self {
            Method::Ot => "ot".into(),
            Method::Eot { epsilon } => format!("eot_{epsilon:e}"),
            Method::Geometric => "geom".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    /// Zero-based coordinate index.
    Coordinate(usize),
    Potential,
}

impl Component {
    pub fn label(&self) -> String {
        match self {
            Component::Coordinate(i) => format!("component {}", i + 1),
            Component::Potential => "potential".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSizes {
    pub x: usize,
    pub y: usize,
    pub reference: usize,
}

/// Points of one Q-Q or potential plot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSet {
    pub pairs: Vec<(f64, f64)>,
    pub component: Component,
    pub method: Method,
    pub region_tag: String,
    pub sample_sizes: SampleSizes,
    /// Row of the reference (or matched) sample behind each pair.
    pub reference_indices: Vec<usize>,
}

impl PlotSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn name(&self) -> String {
        match self.component {
            Component::Coordinate(i) => format!("{}_qq_{}", self.method.slug(), i + 1),
            Component::Potential => format!("{}_potential", self.method.slug()),
        }
    }

    /// Positions of the `k` pairs farthest from the diagonal, largest first.
    pub fn largest_deviations(&self, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.pairs.len()).collect();
        let dev = |i: usize| (self.pairs[i].1 - self.pairs[i].0).abs();
        idx.sort_by(|&a, &b| dev(b).total_cmp(&dev(a)).then(a.cmp(&b)));
        idx.truncate(k);
        idx
    }
}

/// Quantile map evaluated at reference points.
#[derive(Debug, Clone)]
pub enum TransportMap {
    /// Defined only on the reference sample it was solved for.
    Exact(DiscreteMap),
    Entropic(EotMap),
}

impl TransportMap {
    pub fn method(&self) -> Method {
        match self {
            TransportMap::Exact(_) => Method::Ot,
            TransportMap::Entropic(m) => Method::Eot { epsilon: m.epsilon() },
        }
    }

    fn target_size(&self) -> usize {
        match self {
            TransportMap::Exact(m) => m.images.len(),
            TransportMap::Entropic(m) => m.targets().len(),
        }
    }

    fn images(&self, u: &PointCloud, indices: &[usize]) -> Result<Vec<Vec<f64>>> {
        match self {
            TransportMap::Exact(m) => {
                if m.images.len() != u.len() {
                    return Err(Error::DimensionMismatch {
                        expected: m.images.len(),
                        found: u.len(),
                    });
                }
                Ok(indices.iter().map(|&i| m.image(i).to_vec()).collect())
            }
            TransportMap::Entropic(m) => Ok(indices.par_iter().map(|&i| m.eval(u.point(i))).collect()),
        }
    }
}

/// Potential evaluated at reference points.
#[derive(Debug, Clone)]
pub enum Potential {
    Exact(ExactPotentials),
    Entropic(EotPotential),
}

impl Potential {
    fn method(&self) -> Method {
        match self {
            Potential::Exact(_) => Method::Ot,
            Potential::Entropic(p) => Method::Eot {
                epsilon: p.map().epsilon(),
            },
        }
    }

    fn target_size(&self) -> usize {
        match self {
            Potential::Exact(p) => p.beta.len(),
            Potential::Entropic(p) => p.map().targets().len(),
        }
    }

    fn values(&self, u: &PointCloud, indices: &[usize]) -> Result<Vec<f64>> {
        match self {
            Potential::Exact(p) => {
                if p.phi_at_ref.len() != u.len() {
                    return Err(Error::DimensionMismatch {
                        expected: p.phi_at_ref.len(),
                        found: u.len(),
                    });
                }
                Ok(indices.iter().map(|&i| p.phi_at_ref[i]).collect())
            }
            Potential::Entropic(p) => Ok(indices.par_iter().map(|&i| p.value(u.point(i))).collect()),
        }
    }
}

fn retained(u: &PointCloud, region: &CompactRegion) -> Result<Vec<usize>> {
    Ok(restrict(u, region)?.1)
}

fn check_family(a: Method, b: Method) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!(
            "maps come from different methods: {} and {}",
            a.tag(),
            b.tag()
        )));
    }
    Ok(())
}

/// One Q-Q set per coordinate from maps sharing the reference sample `u`,
/// using the reference points inside `region`.
pub fn build_qq_sets(
    tx: &TransportMap,
    ty: &TransportMap,
    u: &PointCloud,
    region: &CompactRegion,
) -> Result<Vec<PlotSet>> {
    check_family(tx.method(), ty.method())?;
    let idx = retained(u, region)?;
    let ix = tx.images(u, &idx)?;
    let iy = ty.images(u, &idx)?;
    let sizes = SampleSizes {
        x: tx.target_size(),
        y: ty.target_size(),
        reference: u.len(),
    };
    Ok((0..u.dim())
        .map(|c| PlotSet {
            pairs: ix.iter().zip(&iy).map(|(a, b)| (a[c], b[c])).collect(),
            component: Component::Coordinate(c),
            method: tx.method(),
            region_tag: region.describe(),
            sample_sizes: sizes,
            reference_indices: idx.clone(),
        })
        .collect())
}

pub fn build_potential_set(
    phi_x: &Potential,
    phi_y: &Potential,
    u: &PointCloud,
    region: &CompactRegion,
) -> Result<PlotSet> {
    check_family(phi_x.method(), phi_y.method())?;
    let idx = retained(u, region)?;
    let vx = phi_x.values(u, &idx)?;
    let vy = phi_y.values(u, &idx)?;
    Ok(PlotSet {
        pairs: vx.into_iter().zip(vy).collect(),
        component: Component::Potential,
        method: phi_x.method(),
        region_tag: region.describe(),
        sample_sizes: SampleSizes {
            x: phi_x.target_size(),
            y: phi_y.target_size(),
            reference: u.len(),
        },
        reference_indices: idx,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandDiagnostic {
    pub eta: f64,
    pub fraction_inside: f64,
    pub max_perpendicular_deviation: f64,
}

fn diagonal_distance(p: &(f64, f64)) -> f64 {
    (p.0 - p.1).abs() / std::f64::consts::SQRT_2
}

fn band_over<'a>(pairs: impl Iterator<Item = &'a (f64, f64)>, eta: f64) -> Result<BandDiagnostic> {
    if !(eta > 0.0) {
        return Err(Error::invalid(format!("eta must be positive, got {eta}")));
    }
    let (mut total, mut inside, mut max) = (0usize, 0usize, 0.0f64);
    for p in pairs {
        let dist = diagonal_distance(p);
        total += 1;
        if dist < eta {
            inside += 1;
        }
        max = max.max(dist);
    }
    if total == 0 {
        return Err(Error::InsufficientData("plot set has no points".into()));
    }
    Ok(BandDiagnostic {
        eta,
        fraction_inside: inside as f64 / total as f64,
        max_perpendicular_deviation: max,
    })
}

/// Share of pairs within perpendicular distance `eta` of the diagonal.
pub fn band_fraction(set: &PlotSet, eta: f64) -> Result<BandDiagnostic> {
    band_over(set.pairs.iter(), eta)
}

/// Band diagnostic pooled over several sets.
pub fn band_fraction_pooled(sets: &[PlotSet], eta: f64) -> Result<BandDiagnostic> {
    band_over(sets.iter().flat_map(|s| s.pairs.iter()), eta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub rmse: f64,
}

/// Ordinary least squares of y on x.
pub fn fit_slope(set: &PlotSet) -> Result<SlopeFit> {
    let n = set.pairs.len() as f64;
    if set.pairs.is_empty() {
        return Err(Error::DegenerateFit);
    }
    let mx = set.pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = set.pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, y) in &set.pairs {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if !(sxx > 0.0) {
        return Err(Error::DegenerateFit);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = set
        .pairs
        .iter()
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    Ok(SlopeFit {
        slope,
        intercept,
        rmse: (sse / n).sqrt(),
    })
}

/// `n` times the Monte Carlo mean of `|T_X - T_Y|^2` over `mc`.
pub fn statistic_e(map_x: &EotMap, map_y: &EotMap, mc: &PointCloud, n: f64) -> Result<f64> {
    let (tx, _) = map_x.eval_cloud(mc)?;
    let (ty, _) = map_y.eval_cloud(mc)?;
    Ok(n * mean_sq_diff(tx.as_slice(), ty.as_slice(), mc.len()))
}

/// `n` times the Monte Carlo mean of `(P_X - P_Y)^2` over `mc`.
pub fn statistic_f(pot_x: &EotPotential, pot_y: &EotPotential, mc: &PointCloud, n: f64) -> Result<f64> {
    let px = pot_x.values_at(mc);
    let py = pot_y.values_at(mc);
    Ok(n * mean_sq_diff(&px, &py, mc.len()))
}

fn mean_sq_diff(a: &[f64], b: &[f64], count: usize) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / count as f64
}

/// Map images and potential values of one fitted entropic map on the Monte
/// Carlo points.
struct McSummary {
    images: Vec<f64>,
    potential: Vec<f64>,
}

fn summarize(state: &SinkhornState, target: &PointCloud, u: &PointCloud, mc: &PointCloud) -> Result<McSummary> {
    let map = EotMap::new(target, state)?;
    let pot = EotPotential::anchored(map, u)?;
    let (images, duals) = pot.map().eval_cloud(mc)?;
    let potential = mc
        .points()
        .zip(duals)
        .map(|(p, dual)| pot.value_from_dual(p, dual))
        .collect();
    Ok(McSummary {
        images: images.as_slice().to_vec(),
        potential,
    })
}

fn statistics(a: &McSummary, b: &McSummary, mc_len: usize, n: f64) -> (f64, f64) {
    (
        n * mean_sq_diff(&a.images, &b.images, mc_len),
        n * mean_sq_diff(&a.potential, &b.potential, mc_len),
    )
}

/// Multiplier of the statistics: the common size for equal samples, twice
/// the harmonic-mean-type size `n m / (n + m)` otherwise.
pub fn effective_size(nx: usize, ny: usize) -> f64 {
    2.0 * (nx as f64) * (ny as f64) / (nx + ny) as f64
}

/// Reference and Monte Carlo samples shared by the observed statistic and
/// every null replicate.
#[derive(Debug, Clone)]
pub struct TestDesign {
    pub reference: PointCloud,
    pub mc: PointCloud,
}

impl TestDesign {
    pub fn draw(cfg: &RunConfig, reference_size: usize, d: usize) -> Result<Self> {
        Ok(Self {
            reference: sample_unit_ball(reference_size, d, &SeededRng::new(cfg.seed, streams::REFERENCE))?,
            mc: sample_unit_ball(cfg.mc_points, d, &SeededRng::new(cfg.seed, streams::MONTE_CARLO))?,
        })
    }

    /// Reference size `max(n_X, n_Y)`.
    pub fn for_samples(x: &PointCloud, y: &PointCloud, cfg: &RunConfig) -> Result<Self> {
        Self::draw(cfg, x.len().max(y.len()), x.dim())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullDistribution {
    /// Sorted ascending.
    pub null_e: Vec<f64>,
    /// Sorted ascending.
    pub null_f: Vec<f64>,
}

fn check_pair(x: &PointCloud, y: &PointCloud) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            found: y.dim(),
        });
    }
    Ok(())
}

fn solve(u: &PointCloud, target: &PointCloud, params: &SinkhornParams, warm: Option<&[f64]>) -> Result<SinkhornState> {
    sinkhorn_warm(u, target, params, warm)?.require_converged()
}

/// Null replicates of `(E_n, F_n)` from pooled split-half resampling: the
/// pooled sample is shuffled and split into parts of sizes `n_X` and `n_Y`.
pub fn null_distribution(x: &PointCloud, y: &PointCloud, cfg: &RunConfig) -> Result<NullDistribution> {
    let design = TestDesign::for_samples(x, y, cfg)?;
    null_distribution_with(x, y, cfg, &design, None)
}

fn null_distribution_with(
    x: &PointCloud,
    y: &PointCloud,
    cfg: &RunConfig,
    design: &TestDesign,
    warm: Option<&[f64]>,
) -> Result<NullDistribution> {
    cfg.validate()?;
    check_pair(x, y)?;
    if cfg.resamples < MIN_RESAMPLES {
        return Err(Error::invalid(format!(
            "at least {MIN_RESAMPLES} resamples are required, got {}",
            cfg.resamples
        )));
    }
    if x.is_empty() || y.is_empty() || x.len() + y.len() < 2 {
        return Err(Error::InsufficientData("pooled sample too small to split".into()));
    }
    let pool = uniform(x)?.concat(&uniform(y)?)?;
    let params = SinkhornParams::from_config(cfg);
    let n = effective_size(x.len(), y.len());
    let (u, mc) = (&design.reference, &design.mc);
    let mut pairs: Vec<(f64, f64)> = (0..cfg.resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = SeededRng::new(cfg.seed, streams::NULL_BASE + b as u64).rng();
            let mut order: Vec<usize> = (0..pool.len()).collect();
            order.shuffle(&mut rng);
            let xs = pool.select(&order[..x.len()])?;
            let ys = pool.select(&order[x.len()..])?;
            let sx = summarize(&solve(u, &xs, &params, warm)?, &xs, u, mc)?;
            let sy = summarize(&solve(u, &ys, &params, warm)?, &ys, u, mc)?;
            Ok(statistics(&sx, &sy, mc.len(), n))
        })
        .collect::<Result<Vec<_>>>()?;
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let null_e = pairs.iter().map(|p| p.0).collect();
    let mut null_f: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    null_f.sort_by(f64::total_cmp);
    Ok(NullDistribution { null_e, null_f })
}

fn uniform(c: &PointCloud) -> Result<PointCloud> {
    if c.has_uniform_weights() {
        Ok(c.clone())
    } else {
        PointCloud::new(c.len(), c.dim(), c.as_slice().to_vec())
    }
}

/// Add-one p-value `(1 + #{null >= observed}) / (B + 1)`.
pub fn p_value(observed: f64, null: &[f64]) -> Result<f64> {
    if null.is_empty() {
        return Err(Error::InsufficientData("empty null distribution".into()));
    }
    let exceed = null.iter().filter(|v| **v >= observed).count();
    Ok((1 + exceed) as f64 / (null.len() + 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub e_n: f64,
    pub f_n: f64,
    pub p_e: f64,
    pub p_f: f64,
    pub null_e: Vec<f64>,
    pub null_f: Vec<f64>,
    pub epsilon: f64,
    pub effective_n: f64,
    pub sizes: SampleSizes,
    pub resamples: usize,
    pub mc_points: usize,
    pub seed: u64,
    /// SHA-256 of the run configuration and sample sizes.
    pub fingerprint: String,
}

pub fn fingerprint(cfg: &RunConfig, sizes: &SampleSizes) -> String {
    let doc = serde_json::json!({ "config": cfg, "sizes": sizes });
    hex::encode(Sha256::digest(doc.to_string().as_bytes()))
}

/// Observed entropic statistics with their resampling p-values.
pub fn eot_test(x: &PointCloud, y: &PointCloud, cfg: &RunConfig) -> Result<TestReport> {
    let design = TestDesign::for_samples(x, y, cfg)?;
    eot_test_with(x, y, cfg, &design)
}

/// Like [`eot_test`] with explicit reference and Monte Carlo samples.
pub fn eot_test_with(x: &PointCloud, y: &PointCloud, cfg: &RunConfig, design: &TestDesign) -> Result<TestReport> {
    cfg.validate()?;
    check_pair(x, y)?;
    let params = SinkhornParams::from_config(cfg);
    let (u, mc) = (&design.reference, &design.mc);
    let sx = sinkhorn(u, x, &params).and_then(|s| s.require_converged()).stage("sinkhorn X")?;
    let sy = sinkhorn(u, y, &params).and_then(|s| s.require_converged()).stage("sinkhorn Y")?;
    let n = effective_size(x.len(), y.len());
    let (e_n, f_n) = statistics(&summarize(&sx, x, u, mc)?, &summarize(&sy, y, u, mc)?, mc.len(), n);
    let null = null_distribution_with(x, y, cfg, design, Some(&sx.f)).stage("null distribution")?;
    let sizes = SampleSizes {
        x: x.len(),
        y: y.len(),
        reference: u.len(),
    };
    Ok(TestReport {
        e_n,
        f_n,
        p_e: p_value(e_n, &null.null_e)?,
        p_f: p_value(f_n, &null.null_f)?,
        null_e: null.null_e,
        null_f: null.null_f,
        epsilon: cfg.epsilon,
        effective_n: n,
        sizes,
        resamples: cfg.resamples,
        mc_points: cfg.mc_points,
        seed: cfg.seed,
        fingerprint: fingerprint(cfg, &sizes),
    })
}
