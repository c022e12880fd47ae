//! Geometric ranks and quantiles, and the rank-matched Q-Q baseline.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{Component, Method, PlotSet, SampleSizes};
use crate::error::{Error, Result};
use crate::model::PointCloud;

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 10_000;
/// Distance below which an iterate is treated as sitting on a data point.
const SNAP: f64 = 1e-12;

/// Average of unit vectors pointing from the data to a location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometricRank(pub Vec<f64>);

impl GeometricRank {
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn unit_sum(cloud: &PointCloud, y: &[f64], skip: Option<usize>, out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (i, x) in cloud.points().enumerate() {
        if Some(i) == skip {
            continue;
        }
        let dist = x.iter().zip(y).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt();
        if dist == 0.0 {
            continue;
        }
        for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
            *o += (b - a) / dist;
        }
    }
}

/// `(1/n) sum_i (y - X_i) / |y - X_i|`; points equal to `y` contribute zero.
pub fn geometric_rank(cloud: &PointCloud, y: &[f64]) -> Result<GeometricRank> {
    check_dim(cloud, y.len())?;
    let mut out = vec![0.0; y.len()];
    unit_sum(cloud, y, None, &mut out);
    let n = cloud.len() as f64;
    Ok(GeometricRank(out.into_iter().map(|v| v / n).collect()))
}

/// Rank of row `index` among the other rows, averaged over `n - 1`.
pub fn leave_one_out_rank(cloud: &PointCloud, index: usize) -> Result<GeometricRank> {
    if cloud.len() < 2 {
        return Err(Error::InsufficientData("leave-one-out rank needs two points".into()));
    }
    let y = cloud.point(index);
    let mut out = vec![0.0; y.len()];
    unit_sum(cloud, y, Some(index), &mut out);
    let n = (cloud.len() - 1) as f64;
    Ok(GeometricRank(out.into_iter().map(|v| v / n).collect()))
}

fn check_dim(cloud: &PointCloud, d: usize) -> Result<()> {
    if cloud.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: cloud.dim(),
            found: d,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileSolution {
    pub point: Vec<f64>,
    pub iterations: usize,
    /// `|rank(point) - u|`, or the subgradient excess when the point is a
    /// data point.
    pub residual: f64,
    pub converged: bool,
}

impl QuantileSolution {
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged {
                solver: "geometric quantile",
                iterations: self.iterations,
                residual: self.residual,
            })
        }
    }
}

struct Objective<'a> {
    cloud: &'a PointCloud,
    u: &'a [f64],
}

impl Objective<'_> {
    /// `sum_i |X_i - q| + <u, X_i - q>`.
    fn value(&self, q: &[f64]) -> f64 {
        self.cloud
            .points()
            .map(|x| {
                let mut norm = 0.0;
                let mut inner = 0.0;
                for k in 0..q.len() {
                    let diff = x[k] - q[k];
                    norm += diff * diff;
                    inner += self.u[k] * diff;
                }
                norm.sqrt() + inner
            })
            .sum()
    }

    /// `|rank(q) - u|`.
    fn residual(&self, q: &[f64], buf: &mut [f64]) -> f64 {
        unit_sum(self.cloud, q, None, buf);
        let n = self.cloud.len() as f64;
        buf.iter().zip(self.u).map(|(g, u)| (g / n - u).powi(2)).sum::<f64>().sqrt()
    }

    /// An optimal data point on the edge of its subdifferential can be one
    /// end of a flat segment of minimizers; prefer an interior point there.
    fn settle(&self, k: usize, g: &[f64], excess: f64, tol: f64) -> Vec<f64> {
        let xk = self.cloud.point(k);
        if excess < 1.0 - 1e-9 || excess == 0.0 {
            return xk.to_vec();
        }
        let gap = self
            .cloud
            .points()
            .enumerate()
            .filter(|&(i, _)| i != k)
            .map(|(_, x)| x.iter().zip(xk).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .filter(|&dist| dist > 0.0)
            .fold(f64::INFINITY, f64::min);
        if !gap.is_finite() {
            return xk.to_vec();
        }
        let trial: Vec<f64> = xk.iter().zip(g).map(|(a, b)| a - 0.5 * gap * b / excess).collect();
        let mut buf = vec![0.0; xk.len()];
        if self.residual(&trial, &mut buf) < tol {
            trial
        } else {
            xk.to_vec()
        }
    }

    fn nearest(&self, q: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, x) in self.cloud.points().enumerate() {
            let d = x.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    /// Gradient excess at data point `k`: `|sum_{i != k} unit(X_k - X_i) - n u|`.
    /// The point is optimal when this is at most one.
    fn data_point_excess(&self, k: usize) -> (f64, Vec<f64>) {
        let d = self.u.len();
        let xk = self.cloud.point(k);
        let mut g = vec![0.0; d];
        unit_sum(self.cloud, xk, Some(k), &mut g);
        let n = self.cloud.len() as f64;
        for (gv, uv) in g.iter_mut().zip(self.u) {
            *gv -= n * uv;
        }
        (g.iter().map(|v| v * v).sum::<f64>().sqrt(), g)
    }
}

/// Minimizer of `sum_i |X_i - q| + <u, X_i - q>`, the geometric quantile at
/// rank `u`. Uses damped Newton steps with a majorize-minimize fallback and
/// the subgradient test at data points. Returns the last iterate, flagged,
/// when `max_iter` is reached.
pub fn geometric_quantile(cloud: &PointCloud, u: &GeometricRank, tol: f64, max_iter: usize) -> Result<QuantileSolution> {
    let d = cloud.dim();
    check_dim(cloud, u.0.len())?;
    if !(u.norm() <= 1.0 + 1e-12) {
        return Err(Error::invalid(format!("rank must lie in the unit ball, norm is {}", u.norm())));
    }
    let n = cloud.len() as f64;
    let obj = Objective { cloud, u: &u.0 };
    if u.norm() >= 1.0 - 1e-12 {
        // minimizers form a ray; take its finite end, the extreme data point
        let k = (0..cloud.len())
            .max_by(|&a, &b| {
                let pa: f64 = cloud.point(a).iter().zip(&u.0).map(|(x, v)| x * v).sum();
                let pb: f64 = cloud.point(b).iter().zip(&u.0).map(|(x, v)| x * v).sum();
                pa.total_cmp(&pb)
            })
            .ok_or_else(|| Error::InsufficientData("empty cloud".into()))?;
        let (excess, _) = obj.data_point_excess(k);
        return Ok(QuantileSolution {
            point: cloud.point(k).to_vec(),
            iterations: 0,
            residual: (excess - 1.0).max(0.0),
            converged: excess <= 1.0 + 1e-9,
        });
    }
    let mut q = cloud.mean();
    let mut value = obj.value(&q);
    let mut grad = vec![0.0; d];
    let mut scratch = vec![0.0; d];
    let mut residual = f64::INFINITY;
    for iter in 0..max_iter {
        let (k, dist) = obj.nearest(&q);
        if dist <= SNAP * (1.0 + q.iter().map(|v| v.abs()).fold(0.0, f64::max)) {
            let (excess, g) = obj.data_point_excess(k);
            q = cloud.point(k).to_vec();
            if excess <= 1.0 {
                return Ok(QuantileSolution {
                    point: obj.settle(k, &g, excess, tol),
                    iterations: iter,
                    residual: 0.0,
                    converged: true,
                });
            }
            // leave the data point along the steepest descent direction
            let gn = excess;
            let dir: Vec<f64> = g.iter().map(|v| -v / gn).collect();
            let slope = -(gn - 1.0);
            value = obj.value(&q);
            let mut t = 1e-3 * (1.0 + cloud.as_slice().iter().map(|v| v.abs()).fold(0.0, f64::max));
            let mut moved = false;
            while t > 1e-14 {
                let trial: Vec<f64> = q.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
                let tv = obj.value(&trial);
                if tv < value + 1e-4 * t * slope {
                    q = trial;
                    value = tv;
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if !moved {
                return Ok(QuantileSolution {
                    point: q,
                    iterations: iter,
                    residual: excess - 1.0,
                    converged: false,
                });
            }
            continue;
        }

        // gradient n (R(q) - u), Hessian sum (I - v v^T) / d_i, MM weights
        unit_sum(cloud, &q, None, &mut grad);
        grad.iter_mut().zip(&u.0).for_each(|(g, uv)| *g -= n * uv);
        residual = grad.iter().map(|v| v * v).sum::<f64>().sqrt() / n;
        if residual < tol {
            return Ok(QuantileSolution {
                point: q,
                iterations: iter,
                residual,
                converged: true,
            });
        }
        if iter > 0 {
            let (excess, g) = obj.data_point_excess(k);
            if excess <= 1.0 {
                return Ok(QuantileSolution {
                    point: obj.settle(k, &g, excess, tol),
                    iterations: iter,
                    residual: 0.0,
                    converged: true,
                });
            }
        }
        let mut hess = DMatrix::<f64>::zeros(d, d);
        let mut wsum = 0.0;
        let mut mm = vec![0.0; d];
        for x in cloud.points() {
            let diff: Vec<f64> = q.iter().zip(x).map(|(a, b)| a - b).collect();
            let dist = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
            let w = 1.0 / dist;
            wsum += w;
            for k in 0..d {
                mm[k] += x[k] * w;
            }
            for r in 0..d {
                hess[(r, r)] += w;
                for c in 0..d {
                    hess[(r, c)] -= w * diff[r] * diff[c] / (dist * dist);
                }
            }
        }

        let mut stepped = false;
        if d > 1 {
            if let Some(chol) = hess.clone().cholesky() {
                let step = chol.solve(&DVector::from_iterator(d, grad.iter().map(|g| -g)));
                let slope: f64 = step.iter().zip(&grad).map(|(s, g)| s * g).sum();
                if slope < 0.0 {
                    let mut t = 1.0;
                    while t > 1e-10 {
                        let trial: Vec<f64> = q.iter().zip(step.iter()).map(|(a, b)| a + t * b).collect();
                        let tv = obj.value(&trial);
                        if tv <= value + 1e-4 * t * slope || obj.residual(&trial, &mut scratch) < residual {
                            q = trial;
                            value = tv;
                            stepped = true;
                            break;
                        }
                        t *= 0.5;
                    }
                }
            }
        }
        if !stepped {
            let next: Vec<f64> = (0..d).map(|k| (mm[k] + n * u.0[k]) / wsum).collect();
            value = obj.value(&next);
            q = next;
        }
    }
    Ok(QuantileSolution {
        point: q,
        iterations: max_iter,
        residual,
        converged: false,
    })
}

/// Geometric Q-Q sets: each `Y_j` is paired with the geometric quantile of
/// `X` at the leave-one-out rank of `Y_j` within `Y`.
pub fn geometric_qq(x: &PointCloud, y: &PointCloud) -> Result<Vec<PlotSet>> {
    geometric_qq_with(x, y, DEFAULT_TOL, DEFAULT_MAX_ITER)
}

pub fn geometric_qq_with(x: &PointCloud, y: &PointCloud, tol: f64, max_iter: usize) -> Result<Vec<PlotSet>> {
    check_dim(x, y.dim())?;
    let quantiles = (0..y.len())
        .into_par_iter()
        .map(|j| {
            let at = |e: Error| Error::AtIndex {
                index: j,
                source: Box::new(e),
            };
            let rank = leave_one_out_rank(y, j).map_err(at)?;
            let sol = geometric_quantile(x, &rank, tol, max_iter)
                .and_then(|s| s.require_converged())
                .map_err(at)?;
            Ok(sol.point)
        })
        .collect::<Result<Vec<_>>>()?;
    let sizes = SampleSizes {
        x: x.len(),
        y: y.len(),
        reference: y.len(),
    };
    Ok((0..x.dim())
        .map(|c| PlotSet {
            pairs: quantiles.iter().zip(y.points()).map(|(q, yj)| (q[c], yj[c])).collect(),
            component: Component::Coordinate(c),
            method: Method::Geometric,
            region_tag: "all".into(),
            sample_sizes: sizes,
            reference_indices: (0..y.len()).collect(),
        })
        .collect())
}
