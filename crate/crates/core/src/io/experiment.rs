use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::analysis::Method;
use crate::error::{Error, Result};
use crate::model::{CompactRegion, RunConfig};
use crate::sampling::{GeneratorSpec, Marginal};

/// Where one sample comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Generated { spec: GeneratorSpec },
    /// Generated sample whose first rows are replaced by fixed points.
    Contaminated { spec: GeneratorSpec, outliers: Vec<Vec<f64>> },
    Csv { path: PathBuf, has_header: bool, delimiter: u8 },
    /// Gaussian sample sized like the other sample, either standard or with
    /// the other sample's mean and covariance.
    GaussianLike { moment_matched: bool },
}

impl DataSource {
    pub fn csv(path: impl Into<PathBuf>) -> Self {
        DataSource::Csv {
            path: path.into(),
            has_header: true,
            delimiter: b',',
        }
    }

    fn is_relative(&self) -> bool {
        matches!(self, DataSource::GaussianLike { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub x: DataSource,
    pub y: DataSource,
    /// Size of each generated sample.
    pub n: usize,
}

/// Extra reference line `y = slope * x` drawn on one Q-Q component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeOverlay {
    pub component: usize,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub methods: Vec<Method>,
    pub run: RunConfig,
    pub standardize: bool,
    /// Run the entropic two-sample test at `run.epsilon` when an entropic
    /// method is selected.
    pub test: bool,
    /// Region for the data before entropic fitting; `None` keeps every point.
    pub k1: Option<CompactRegion>,
    /// Region of reference points used in the plots.
    pub k2: CompactRegion,
    pub overlays: Vec<SlopeOverlay>,
}

pub const PRESETS: &[&str] = &[
    "identical-gaussian",
    "correlated-gaussian",
    "scaled-gaussian",
    "outliers",
    "gaussian-vs-student-t",
    "gaussian-vs-pareto-pushforward",
    "epsilon-sweep",
    "iris",
    "rice",
    "geometric-comparison",
];

fn gaussian(cov: &[[f64; 3]; 3]) -> GeneratorSpec {
    GeneratorSpec::centered_gaussian(cov.iter().map(|r| r.to_vec()).collect())
}

const SIGMA_DEPENDENT: [[f64; 3]; 3] = [[1.0, 0.5, 0.2], [0.5, 1.0, 0.0], [0.2, 0.0, 1.0]];
const SIGMA_CORRELATED: [[f64; 3]; 3] = [[1.0, 0.9, 0.0], [0.9, 1.0, 0.0], [0.0, 0.0, 1.0]];
const SIGMA_SCALED: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 4.0, 0.0], [0.0, 0.0, 1.0]];

impl ExperimentConfig {
    fn base(name: &str, x: DataSource, y: DataSource, methods: Vec<Method>, epsilon: f64) -> Self {
        Self {
            scenario: Scenario {
                name: name.into(),
                x,
                y,
                n: 1000,
            },
            methods,
            run: RunConfig {
                epsilon,
                ..RunConfig::default()
            },
            standardize: false,
            test: true,
            k1: None,
            k2: CompactRegion::Ball { radius: 1.0 },
            overlays: Vec::new(),
        }
    }

    /// Named preset. `data` is the CSV file required by `iris` and `rice`.
    pub fn preset(name: &str, data: Option<PathBuf>) -> Result<Self> {
        let gen = |spec| DataSource::Generated { spec };
        let std3 = || gen(GeneratorSpec::standard_gaussian(3));
        let eot = |epsilon| Method::Eot { epsilon };
        let file = || {
            data.clone()
                .map(DataSource::csv)
                .ok_or_else(|| Error::invalid(format!("preset {name} needs a data file")))
        };
        let cfg = match name {
            "identical-gaussian" => Self::base(
                name,
                gen(gaussian(&SIGMA_DEPENDENT)),
                gen(gaussian(&SIGMA_DEPENDENT)),
                vec![Method::Ot, eot(1e-2)],
                1e-2,
            ),
            "correlated-gaussian" => Self::base(name, std3(), gen(gaussian(&SIGMA_CORRELATED)), vec![Method::Ot, eot(1e-2)], 1e-2),
            "scaled-gaussian" => {
                let mut c = Self::base(name, std3(), gen(gaussian(&SIGMA_SCALED)), vec![Method::Ot, eot(1e-2)], 1e-2);
                c.overlays.push(SlopeOverlay { component: 1, slope: 2.0 });
                c
            }
            "outliers" => Self::base(
                name,
                std3(),
                DataSource::Contaminated {
                    spec: GeneratorSpec::standard_gaussian(3),
                    outliers: vec![vec![8.0; 3], vec![9.0; 3], vec![10.0; 3]],
                },
                vec![Method::Ot, eot(1e-3)],
                1e-3,
            ),
            "gaussian-vs-student-t" => Self::base(
                name,
                std3(),
                gen(GeneratorSpec::StudentT {
                    location: vec![0.0; 3],
                    scatter: (0..3).map(|i| (0..3).map(|j| f64::from(u8::from(i == j))).collect()).collect(),
                    dof: 3.2,
                }),
                vec![Method::Ot, eot(1e-3)],
                1e-3,
            ),
            "gaussian-vs-pareto-pushforward" => Self::base(
                name,
                gen(GeneratorSpec::PushforwardAbsShift { dim: 3 }),
                gen(GeneratorSpec::ParetoMarginals { alphas: vec![3.0; 3] }),
                vec![Method::Ot, eot(1e-3)],
                1e-3,
            ),
            "epsilon-sweep" => Self::base(
                name,
                gen(gaussian(&SIGMA_DEPENDENT)),
                gen(gaussian(&SIGMA_DEPENDENT)),
                vec![eot(1e-3), eot(1e-2), eot(1e-1)],
                1e-2,
            ),
            "iris" => {
                let mut c = Self::base(
                    name,
                    DataSource::GaussianLike { moment_matched: false },
                    file()?,
                    vec![Method::Ot, eot(1e-3), Method::Geometric],
                    1e-3,
                );
                c.standardize = true;
                c
            }
            "rice" => {
                let mut c = Self::base(
                    name,
                    DataSource::GaussianLike { moment_matched: false },
                    file()?,
                    vec![Method::Ot, eot(5e-3), Method::Geometric],
                    5e-3,
                );
                c.standardize = true;
                c
            }
            "geometric-comparison" => {
                let mut marginals = vec![Marginal::StandardNormal; 4];
                marginals.push(Marginal::Pareto { alpha: 3.2 });
                let mut c = Self::base(
                    name,
                    DataSource::GaussianLike { moment_matched: false },
                    gen(GeneratorSpec::IndependentProduct { marginals }),
                    vec![Method::Ot, eot(5e-3), Method::Geometric],
                    5e-3,
                );
                c.standardize = true;
                c
            }
            other => {
                return Err(Error::invalid(format!(
                    "unknown preset {other:?}; known presets: {}",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(cfg)
    }

    /// Switches Gaussian comparison samples to the moment-matched variant.
    pub fn moment_matched(mut self, on: bool) -> Self {
        for src in [&mut self.scenario.x, &mut self.scenario.y] {
            if let DataSource::GaussianLike { moment_matched } = src {
                *moment_matched = on;
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.run.validate()?;
        if self.methods.is_empty() {
            return Err(Error::invalid("at least one method is required"));
        }
        for m in &self.methods {
            if let Method::Eot { epsilon } = m {
                if !(*epsilon > 0.0 && epsilon.is_finite()) {
                    return Err(Error::invalid(format!("entropic method needs a positive epsilon, got {epsilon}")));
                }
            }
        }
        if self.scenario.x.is_relative() && self.scenario.y.is_relative() {
            return Err(Error::invalid("at most one sample can be defined relative to the other"));
        }
        if self.scenario.n == 0 {
            return Err(Error::invalid("sample size must be positive"));
        }
        Ok(())
    }
}
