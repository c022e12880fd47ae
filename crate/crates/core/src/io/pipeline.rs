use std::time::Instant;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    band_fraction, band_fraction_pooled, build_potential_set, build_qq_sets, eot_test_with, fingerprint, fit_slope,
    streams, BandDiagnostic, Component, Method, PlotSet, Potential, SampleSizes, SlopeFit, TestDesign, TestReport,
    TransportMap,
};
use crate::error::{Error, Result, StageExt};
use crate::exact::{ot_dual_potentials, ot_quantile_map};
use crate::geometric::geometric_qq;
use crate::io::csv_io::load_csv;
use crate::io::experiment::{DataSource, ExperimentConfig};
use crate::model::{restrict, standardize, PointCloud, RunConfig};
use crate::sampling::{generate, inject_outliers, GeneratorSpec, SeededRng};
use crate::sinkhorn::{sinkhorn, EotMap, EotPotential, SinkhornParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetDiagnostic {
    pub name: String,
    pub band: BandDiagnostic,
    /// Absent when the x values are constant.
    pub slope: Option<SlopeFit>,
}

/// Band diagnostic over all coordinate Q-Q sets of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledBand {
    pub method: Method,
    pub band: BandDiagnostic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub package: String,
    pub version: String,
    pub seed: u64,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultBundle {
    pub config: ExperimentConfig,
    pub sizes: SampleSizes,
    pub sets: Vec<PlotSet>,
    pub diagnostics: Vec<SetDiagnostic>,
    pub pooled: Vec<PooledBand>,
    pub test: Option<TestReport>,
    pub provenance: Provenance,
    /// Wall-clock time per stage; not serialized so reruns compare equal.
    #[serde(skip)]
    pub timings: Vec<StageTiming>,
}

impl ResultBundle {
    pub fn set(&self, name: &str) -> Option<&PlotSet> {
        self.sets.iter().find(|s| s.name() == name)
    }
}

fn load(src: &DataSource, n: usize, rng: &SeededRng, other: Option<&PointCloud>) -> Result<PointCloud> {
    match src {
        DataSource::Generated { spec } => generate(spec, n, rng),
        DataSource::Contaminated { spec, outliers } => inject_outliers(&generate(spec, n, rng)?, outliers),
        DataSource::Csv {
            path,
            has_header,
            delimiter,
        } => load_csv(path, *has_header, *delimiter),
        DataSource::GaussianLike { moment_matched } => {
            let other = other.ok_or_else(|| Error::invalid("relative sample without a partner"))?;
            let spec = if *moment_matched {
                GeneratorSpec::moment_matched_gaussian(other)
            } else {
                GeneratorSpec::standard_gaussian(other.dim())
            };
            generate(&spec, other.len(), rng)
        }
    }
}

/// Loads or generates both samples and standardizes them when requested.
pub fn prepare_samples(cfg: &ExperimentConfig) -> Result<(PointCloud, PointCloud)> {
    let sc = &cfg.scenario;
    let rx = SeededRng::new(cfg.run.seed, streams::DATA_X);
    let ry = SeededRng::new(cfg.run.seed, streams::DATA_Y);
    let (x, y) = if matches!(sc.x, DataSource::GaussianLike { .. }) {
        let y = load(&sc.y, sc.n, &ry, None).stage("load y")?;
        (load(&sc.x, sc.n, &rx, Some(&y)).stage("load x")?, y)
    } else {
        let x = load(&sc.x, sc.n, &rx, None).stage("load x")?;
        let y = load(&sc.y, sc.n, &ry, Some(&x)).stage("load y")?;
        (x, y)
    };
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            found: y.dim(),
        })
        .stage("load");
    }
    if cfg.standardize {
        let x = standardize(&x).stage("standardize x")?.0;
        let y = standardize(&y).stage("standardize y")?.0;
        return Ok((x, y));
    }
    Ok((x, y))
}

/// Equal-size copies for the assignment problem: the larger sample is
/// subsampled without replacement to the smaller size.
fn equalize(x: &PointCloud, y: &PointCloud, seed: u64) -> Result<(PointCloud, PointCloud)> {
    let m = x.len().min(y.len());
    let mut rng = SeededRng::new(seed, streams::SUBSAMPLE).rng();
    let mut cut = |c: &PointCloud| -> Result<PointCloud> {
        if c.len() == m {
            return Ok(c.clone());
        }
        let mut idx = index::sample(&mut rng, c.len(), m).into_vec();
        idx.sort_unstable();
        let s = c.select(&idx)?;
        PointCloud::new(s.len(), s.dim(), s.as_slice().to_vec())
    };
    Ok((cut(x)?, cut(y)?))
}

fn with_epsilon(run: &RunConfig, epsilon: f64) -> RunConfig {
    RunConfig {
        epsilon,
        ..run.clone()
    }
}

fn entropic_parts(u: &PointCloud, data: &PointCloud, run: &RunConfig) -> Result<(TransportMap, Potential)> {
    let state = sinkhorn(u, data, &SinkhornParams::from_config(run))?.require_converged()?;
    let map = EotMap::new(data, &state)?;
    let pot = EotPotential::anchored(map.clone(), u)?;
    Ok((TransportMap::Entropic(map), Potential::Entropic(pot)))
}

/// Runs the configured pipeline end to end.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultBundle> {
    cfg.validate().stage("config")?;
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |stage: &str, timings: &mut Vec<StageTiming>| {
        timings.push(StageTiming {
            stage: stage.into(),
            seconds: clock.elapsed().as_secs_f64(),
        });
        clock = Instant::now();
    };

    let (x, y) = prepare_samples(cfg)?;
    lap("data", &mut timings);
    let design = TestDesign::for_samples(&x, &y, &cfg.run).stage("reference")?;
    let u = &design.reference;
    let (x1, y1) = match &cfg.k1 {
        Some(k1) => (
            restrict(&x, k1).stage("restrict x")?.0,
            restrict(&y, k1).stage("restrict y")?.0,
        ),
        None => (x.clone(), y.clone()),
    };
    let sizes = SampleSizes {
        x: x.len(),
        y: y.len(),
        reference: u.len(),
    };

    let mut sets = Vec::new();
    for method in &cfg.methods {
        match *method {
            Method::Ot => {
                let (xs, ys) = equalize(&x, &y, cfg.run.seed).stage("subsample")?;
                let uo = if u.len() == xs.len() {
                    u.clone()
                } else {
                    u.select(&(0..xs.len()).collect::<Vec<_>>())
                        .and_then(|s| PointCloud::new(s.len(), s.dim(), s.as_slice().to_vec()))
                        .stage("subsample")?
                };
                let (mx, ax) = ot_quantile_map(&uo, &xs).stage("exact transport x")?;
                let (my, ay) = ot_quantile_map(&uo, &ys).stage("exact transport y")?;
                let px = ot_dual_potentials(&uo, &xs, &ax).stage("exact potentials x")?;
                let py = ot_dual_potentials(&uo, &ys, &ay).stage("exact potentials y")?;
                let (tx, ty) = (TransportMap::Exact(mx), TransportMap::Exact(my));
                sets.extend(build_qq_sets(&tx, &ty, &uo, &cfg.k2).stage("exact plots")?);
                sets.push(
                    build_potential_set(&Potential::Exact(px), &Potential::Exact(py), &uo, &cfg.k2)
                        .stage("exact plots")?,
                );
                lap("exact transport", &mut timings);
            }
            Method::Eot { epsilon } => {
                let run = with_epsilon(&cfg.run, epsilon);
                let (tx, px) = entropic_parts(u, &x1, &run).stage("entropic transport x")?;
                let (ty, py) = entropic_parts(u, &y1, &run).stage("entropic transport y")?;
                sets.extend(build_qq_sets(&tx, &ty, u, &cfg.k2).stage("entropic plots")?);
                sets.push(build_potential_set(&px, &py, u, &cfg.k2).stage("entropic plots")?);
                lap(&format!("entropic transport eps={epsilon}"), &mut timings);
            }
            Method::Geometric => {
                sets.extend(geometric_qq(&x, &y).stage("geometric quantiles")?);
                lap("geometric quantiles", &mut timings);
            }
        }
    }

    let diagnostics = sets
        .iter()
        .map(|s| {
            Ok(SetDiagnostic {
                name: s.name(),
                band: band_fraction(s, cfg.run.eta)?,
                slope: fit_slope(s).ok(),
            })
        })
        .collect::<Result<Vec<_>>>()
        .stage("diagnostics")?;
    let mut pooled = Vec::new();
    for method in &cfg.methods {
        let group: Vec<PlotSet> = sets
            .iter()
            .filter(|s| s.method == *method && matches!(s.component, Component::Coordinate(_)))
            .cloned()
            .collect();
        if !group.is_empty() {
            pooled.push(PooledBand {
                method: *method,
                band: band_fraction_pooled(&group, cfg.run.eta).stage("diagnostics")?,
            });
        }
    }

    let wants_test = cfg.test && cfg.methods.iter().any(|m| matches!(m, Method::Eot { .. }));
    let test = if wants_test {
        let report = eot_test_with(&x1, &y1, &cfg.run, &design).stage("two-sample test")?;
        lap("two-sample test", &mut timings);
        Some(report)
    } else {
        None
    };

    Ok(ResultBundle {
        config: cfg.clone(),
        sizes,
        sets,
        diagnostics,
        pooled,
        test,
        provenance: Provenance {
            package: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: cfg.run.seed,
            fingerprint: fingerprint(&cfg.run, &sizes),
        },
        timings,
    })
}
