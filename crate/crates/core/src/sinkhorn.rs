//! Entropic optimal transport between weighted point clouds.
//!
//! The dual pair `(f, g)` parametrizes the plan
//! `pi_ij = a_i b_j exp((f_i + g_j - c_ij) / eps)`. Iterations run on a
//! stabilized kernel: the duals are periodically absorbed into the kernel
//! so the scaling vectors stay close to one and nothing overflows, even at
//! small `eps`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::exact::half_sq_dist;
use crate::model::{PointCloud, RunConfig};

/// Scalings whose log exceeds this are folded back into the kernel.
const ABSORB_LOG: f64 = 30.0;
/// Largest regularization on the warm-start ladder.
const LADDER_START: f64 = 0.1;
/// Ratio between successive ladder steps.
const LADDER_RATIO: f64 = 0.3;
/// Marginal tolerance used on intermediate ladder steps.
const LADDER_TOL: f64 = 1e-3;
/// Marginal error at which scaling iterations hand over to Newton steps.
const NEWTON_HANDOFF: f64 = 1e-2;
/// Scaling iterations per stall check.
const STALL_WINDOW: usize = 200;
/// Minimum error reduction per window before switching to Newton steps.
const STALL_RATIO: f64 = 0.5;
/// Bounds and forcing factor for the relative residual of Newton linear solves.
const CG_TOL: f64 = 1e-10;
const CG_FORCING: f64 = 1.0;
/// Plan entries below this fraction of their row mass are dropped from the
/// Newton Hessian.
const SPARSE_CUT: f64 = 1e-13;
/// Floor for the Jacobi preconditioner relative to the column mass.
const JACOBI_FLOOR: f64 = 1e-3;
/// Shifted log-weights below this are dropped from sums whose largest term is 1.
const SHIFTED_CUT: f64 = -50.0;
/// Log-kernel entries below this are stored as zero.
const KERNEL_CUT: f64 = -150.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornParams {
    pub epsilon: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Warm-start through a decreasing sequence of regularizations.
    pub ladder: bool,
}

impl SinkhornParams {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            tol: 1e-7,
            max_iter: 50_000,
            ladder: true,
        }
    }

    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            epsilon: cfg.epsilon,
            tol: cfg.sinkhorn_tol,
            max_iter: cfg.sinkhorn_max_iter,
            ladder: true,
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_ladder(mut self, ladder: bool) -> Self {
        self.ladder = ladder;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("sinkhorn tolerance must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("sinkhorn max_iter must be positive"));
        }
        Ok(())
    }

    fn schedule(&self) -> Vec<f64> {
        let mut steps = Vec::new();
        if self.ladder {
            let mut e = LADDER_START;
            while e > self.epsilon * (1.0 + 1e-9) {
                steps.push(e);
                e *= LADDER_RATIO;
            }
        }
        steps.push(self.epsilon);
        steps
    }
}

/// Result of a Sinkhorn run. Returned even when the run did not converge.
#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornState {
    /// Source dual at each source point.
    pub f: Vec<f64>,
    /// Target dual at each target point.
    pub g: Vec<f64>,
    pub epsilon: f64,
    pub iterations: usize,
    /// L1 violation of the plan's marginals.
    pub marginal_error: f64,
    /// Regularized transport cost from the dual objective.
    pub reg_cost: f64,
    pub converged: bool,
}

impl SinkhornState {
    /// Turns a non-converged run into an error.
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged {
                solver: "sinkhorn",
                iterations: self.iterations,
                residual: self.marginal_error,
            })
        }
    }

    /// Dense plan implied by the duals, row-major `n x m`.
    pub fn plan(&self, u: &PointCloud, x: &PointCloud) -> Vec<f64> {
        let mut out = Vec::with_capacity(u.len() * x.len());
        for (i, ui) in u.points().enumerate() {
            let ai = u.weight(i);
            for (j, xj) in x.points().enumerate() {
                let c = half_sq_dist(ui, xj);
                out.push(ai * x.weight(j) * ((self.f[i] + self.g[j] - c) / self.epsilon).exp());
            }
        }
        out
    }
}

struct Problem {
    n: usize,
    m: usize,
    cost: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    log_a: Vec<f64>,
    log_b: Vec<f64>,
}

impl Problem {
    fn new(u: &PointCloud, x: &PointCloud) -> Result<Self> {
        if u.dim() != x.dim() {
            return Err(Error::DimensionMismatch {
                expected: u.dim(),
                found: x.dim(),
            });
        }
        let (n, m) = (u.len(), x.len());
        let mut cost = vec![0.0; n * m];
        cost.par_chunks_mut(m).enumerate().for_each(|(i, row)| {
            let ui = u.point(i);
            for (j, c) in row.iter_mut().enumerate() {
                *c = half_sq_dist(ui, x.point(j));
            }
        });
        let a = u.weights();
        let b = x.weights();
        Ok(Self {
            n,
            m,
            log_a: a.iter().map(|v| v.ln()).collect(),
            log_b: b.iter().map(|v| v.ln()).collect(),
            cost,
            a,
            b,
        })
    }

    /// Exact log-domain source update `f_i = -eps LSE_j[(g_j - c_ij)/eps + log b_j]`.
    fn update_f(&self, g: &[f64], eps: f64, f: &mut [f64]) {
        let m = self.m;
        let inv = 1.0 / eps;
        f.par_iter_mut().enumerate().for_each(|(i, fi)| {
            let row = &self.cost[i * m..(i + 1) * m];
            *fi = -eps * lse((0..m).map(|j| (g[j] - row[j]) * inv + self.log_b[j]));
        });
    }

    /// Exact log-domain target update.
    fn update_g(&self, f: &[f64], eps: f64, g: &mut [f64]) {
        let m = self.m;
        let inv = 1.0 / eps;
        let mut best = vec![f64::NEG_INFINITY; m];
        for i in 0..self.n {
            let row = &self.cost[i * m..(i + 1) * m];
            let s = f[i] * inv + self.log_a[i];
            for j in 0..m {
                let v = s - row[j] * inv;
                if v > best[j] {
                    best[j] = v;
                }
            }
        }
        let mut acc = vec![0.0; m];
        for i in 0..self.n {
            let row = &self.cost[i * m..(i + 1) * m];
            let s = f[i] * inv + self.log_a[i];
            for j in 0..m {
                acc[j] += shifted_exp(s - row[j] * inv - best[j]);
            }
        }
        for j in 0..m {
            g[j] = -eps * (best[j] + acc[j].ln());
        }
    }

    fn build_kernel(&self, f: &[f64], g: &[f64], eps: f64, kernel: &mut [f64]) {
        let m = self.m;
        let inv = 1.0 / eps;
        kernel.par_chunks_mut(m).enumerate().for_each(|(i, row)| {
            let c = &self.cost[i * m..(i + 1) * m];
            for j in 0..m {
                let z = (f[i] + g[j] - c[j]) * inv;
                // scalings stay within exp(+-ABSORB_LOG), so this is far below any kept entry
                row[j] = if z > KERNEL_CUT { z.exp() } else { 0.0 };
            }
        });
    }

    /// One regularization level: scaling iterations, then Newton steps on the
    /// semi-dual if the scaling iterations stall. Returns (iterations, marginal
    /// error, converged).
    fn stage(
        &self,
        eps: f64,
        tol: f64,
        max_iter: usize,
        f: &mut [f64],
        g: &mut [f64],
        kernel: &mut Vec<f64>,
    ) -> Result<(usize, f64, bool)> {
        let mut handoff = NEWTON_HANDOFF;
        let mut used = 0;
        loop {
            let (iters, err) = self.scaling(eps, tol.max(handoff), max_iter - used, f, g, kernel)?;
            used += iters;
            if err < tol || used >= max_iter {
                return Ok((used, err, err < tol));
            }
            let (steps, err) = self.newton(eps, tol, max_iter - used, f, g, kernel)?;
            used += steps;
            if err < tol || used >= max_iter || handoff <= tol {
                return Ok((used, err, err < tol));
            }
            // Newton stalled: get closer with plain iterations first
            handoff *= 0.1;
        }
    }

    /// Plain alternating updates on the absorbed kernel. Stops once the
    /// error is below `tol`, on budget exhaustion, or when the error decrease
    /// stalls.
    fn scaling(
        &self,
        eps: f64,
        tol: f64,
        max_iter: usize,
        f: &mut [f64],
        g: &mut [f64],
        kernel: &mut [f64],
    ) -> Result<(usize, f64)> {
        let (n, m) = (self.n, self.m);
        self.update_f(g, eps, f);
        self.update_g(f, eps, g);
        self.build_kernel(f, g, eps, kernel);
        let mut u = vec![1.0; n];
        let mut v = vec![1.0; m];
        let mut vb = vec![0.0; m];
        let mut ua = vec![0.0; n];
        let mut kv = vec![0.0; n];
        let mut ku = vec![0.0; m];
        let mut err;
        let mut iter = 0;
        let mut window_start = f64::INFINITY;
        loop {
            for j in 0..m {
                vb[j] = v[j] * self.b[j];
            }
            kv.par_iter_mut().enumerate().for_each(|(i, s)| {
                let row = &kernel[i * m..(i + 1) * m];
                *s = dot(row, &vb);
            });
            err = (0..n).map(|i| (self.a[i] * u[i] * kv[i] - self.a[i]).abs()).sum::<f64>();
            if !err.is_finite() {
                return Err(Error::NumericalOverflow("sinkhorn marginal"));
            }
            if err < tol || iter >= max_iter {
                break;
            }
            if iter % STALL_WINDOW == 0 {
                if iter >= 2 * STALL_WINDOW && err > STALL_RATIO * window_start {
                    break;
                }
                window_start = err;
            }
            iter += 1;
            for i in 0..n {
                u[i] = 1.0 / kv[i];
                ua[i] = u[i] * self.a[i];
            }
            ku.iter_mut().for_each(|s| *s = 0.0);
            for i in 0..n {
                let w = ua[i];
                if w == 0.0 || !w.is_finite() {
                    continue;
                }
                let row = &kernel[i * m..(i + 1) * m];
                for (s, k) in ku.iter_mut().zip(row) {
                    *s += w * k;
                }
            }
            for j in 0..m {
                v[j] = 1.0 / ku[j];
            }
            let unstable = u.iter().chain(&v).any(|s| !(s.is_finite() && s.ln().abs() < ABSORB_LOG));
            if unstable {
                absorb(f, &u, eps);
                // a vanished kernel column leaves v infinite; recompute g exactly
                if v.iter().all(|s| s.is_finite() && *s > 0.0) {
                    absorb(g, &v, eps);
                } else {
                    self.update_g(f, eps, g);
                }
                self.build_kernel(f, g, eps, kernel);
                u.iter_mut().for_each(|s| *s = 1.0);
                v.iter_mut().for_each(|s| *s = 1.0);
            }
        }
        absorb(f, &u, eps);
        absorb(g, &v, eps);
        if f.iter().chain(g.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NumericalOverflow("sinkhorn duals"));
        }
        Ok((iter, err))
    }

    /// Refreshes `f` from `g`, fills the plan and its column sums, and
    /// returns the semi-dual objective `sum a_i f_i + sum b_j g_j`.
    fn semi_dual(&self, g: &[f64], eps: f64, f: &mut [f64], plan: &mut [f64], col: &mut [f64]) -> f64 {
        let m = self.m;
        let inv = 1.0 / eps;
        plan.par_chunks_mut(m).zip(f.par_iter_mut()).enumerate().for_each(|(i, (row, fi))| {
            let c = &self.cost[i * m..(i + 1) * m];
            let mut max = f64::NEG_INFINITY;
            for j in 0..m {
                row[j] = (g[j] - c[j]) * inv + self.log_b[j];
                max = max.max(row[j]);
            }
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = shifted_exp(*v - max);
                total += *v;
            }
            *fi = -eps * (max + total.ln());
            let scale = self.a[i] / total;
            row.iter_mut().for_each(|v| *v *= scale);
        });
        col.iter_mut().for_each(|v| *v = 0.0);
        for row in plan.chunks_exact(m) {
            for (cj, p) in col.iter_mut().zip(row) {
                *cj += p;
            }
        }
        self.a.iter().zip(f.iter()).map(|(a, v)| a * v).sum::<f64>()
            + self.b.iter().zip(g).map(|(b, v)| b * v).sum::<f64>()
    }

    fn column_error(&self, col: &[f64]) -> f64 {
        col.iter().zip(&self.b).map(|(c, b)| (c - b).abs()).sum()
    }

    /// Damped Newton ascent on the semi-dual in `g`. Rows stay exact, so the
    /// marginal error is the column violation. Steps solve the Hessian system
    /// by preconditioned conjugate gradients on a thresholded sparse plan.
    fn newton(
        &self,
        eps: f64,
        tol: f64,
        max_steps: usize,
        f: &mut [f64],
        g: &mut [f64],
        plan: &mut Vec<f64>,
    ) -> Result<(usize, f64)> {
        let (n, m) = (self.n, self.m);
        let mut col = vec![0.0; m];
        let mut value = self.semi_dual(g, eps, f, plan, &mut col);
        let mut err = self.column_error(&col);
        let mut trial_plan = vec![0.0; n * m];
        let mut trial_col = vec![0.0; m];
        let mut trial_g = vec![0.0; m];
        let mut trial_f = vec![0.0; n];
        let mut steps = 0;
        loop {
            if !err.is_finite() {
                return Err(Error::NumericalOverflow("sinkhorn newton"));
            }
            if err < tol || steps >= max_steps {
                return Ok((steps, err));
            }
            steps += 1;
            let sparse = SparsePlan::new(plan, m, &self.a);
            let diag: Vec<f64> = sparse
                .diagonal(&col, &self.a)
                .iter()
                .zip(&col)
                .map(|(d, c)| d.max(JACOBI_FLOOR * c).max(f64::MIN_POSITIVE))
                .collect();
            let rhs: Vec<f64> = col.iter().zip(&self.b).map(|(c, b)| -eps * (c - b)).collect();
            let cg_tol = (CG_FORCING * err).clamp(CG_TOL, 1e-2);
            let dir = preconditioned_cg(&rhs, &diag, cg_tol, |x, out| sparse.hess_vec(&col, &self.a, x, out));
            let slope: f64 = dir.iter().zip(&rhs).map(|(d, r)| d * r).sum::<f64>() / eps;
            if !(slope > 0.0) {
                return Ok((steps, err));
            }
            let mut t = 1.0;
            loop {
                for j in 0..m {
                    trial_g[j] = g[j] + t * dir[j];
                }
                let trial = self.semi_dual(&trial_g, eps, &mut trial_f, &mut trial_plan, &mut trial_col);
                let trial_err = self.column_error(&trial_col);
                // near the optimum objective gains drop below rounding, so a
                // smaller marginal violation also counts as progress
                if trial >= value + 1e-4 * t * slope || trial_err < (1.0 - 1e-4 * t) * err {
                    value = trial;
                    err = trial_err;
                    g.copy_from_slice(&trial_g);
                    f.copy_from_slice(&trial_f);
                    std::mem::swap(plan, &mut trial_plan);
                    std::mem::swap(&mut col, &mut trial_col);
                    break;
                }
                t *= 0.5;
                if t < 1e-10 {
                    return Ok((steps, err));
                }
            }
        }
    }
}

/// Plan entries above a per-row threshold, in compressed rows.
struct SparsePlan {
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl SparsePlan {
    fn new(plan: &[f64], m: usize, a: &[f64]) -> Self {
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for (row, ai) in plan.chunks_exact(m).zip(a) {
            let cut = SPARSE_CUT * ai;
            for (j, p) in row.iter().enumerate() {
                if *p > cut {
                    cols.push(j as u32);
                    vals.push(*p);
                }
            }
            row_ptr.push(cols.len());
        }
        Self { row_ptr, cols, vals }
    }

    fn rows(&self) -> impl Iterator<Item = (&[u32], &[f64])> {
        self.row_ptr
            .windows(2)
            .map(|w| (&self.cols[w[0]..w[1]], &self.vals[w[0]..w[1]]))
    }

    /// Diagonal of `diag(col) - P^T diag(1/a) P`.
    fn diagonal(&self, col: &[f64], a: &[f64]) -> Vec<f64> {
        let mut d = col.to_vec();
        for ((cols, vals), ai) in self.rows().zip(a) {
            for (j, p) in cols.iter().zip(vals) {
                d[*j as usize] -= p * p / ai;
            }
        }
        d
    }

    /// `(diag(col) - P^T diag(1/a) P) x`, the semi-dual Hessian times `-eps`.
    fn hess_vec(&self, col: &[f64], a: &[f64], x: &[f64], out: &mut [f64]) {
        for j in 0..out.len() {
            out[j] = col[j] * x[j];
        }
        for ((cols, vals), ai) in self.rows().zip(a) {
            let px: f64 = cols.iter().zip(vals).map(|(j, p)| p * x[*j as usize]).sum::<f64>() / ai;
            for (j, p) in cols.iter().zip(vals) {
                out[*j as usize] -= p * px;
            }
        }
    }
}

/// Solves `A x = b` for a symmetric positive semidefinite `A` given as an
/// operator, with a diagonal preconditioner, starting from zero.
fn preconditioned_cg(b: &[f64], diag: &[f64], rel_tol: f64, op: impl Fn(&[f64], &mut [f64])) -> Vec<f64> {
    let m = b.len();
    let mut x = vec![0.0; m];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; m];
    let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    for _ in 0..(4 * m).max(100) {
        if r.iter().map(|v| v * v).sum::<f64>().sqrt() <= rel_tol * b_norm {
            break;
        }
        op(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        for j in 0..m {
            x[j] += alpha * p[j];
            r[j] -= alpha * ap[j];
            z[j] = r[j] / diag[j];
        }
        let rz_next: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_next / rz;
        rz = rz_next;
        for j in 0..m {
            p[j] = z[j] + beta * p[j];
        }
    }
    x
}

/// Dot product with independent partial sums so the loop vectorizes.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn absorb(dual: &mut [f64], scaling: &[f64], eps: f64) {
    for (d, s) in dual.iter_mut().zip(scaling) {
        *d += eps * s.ln();
    }
}

/// `exp(x)` for a shifted log-weight `x <= 0`, flushed to zero below
/// `SHIFTED_CUT` where it cannot affect a sum containing 1.
#[inline]
fn shifted_exp(x: f64) -> f64 {
    if x > SHIFTED_CUT {
        x.exp()
    } else {
        0.0
    }
}

/// Numerically safe log-sum-exp.
pub(crate) fn lse(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| shifted_exp(v - max)).sum::<f64>().ln()
}

/// Entropic OT between the weighted clouds `u` (source) and `x` (target).
pub fn sinkhorn(u: &PointCloud, x: &PointCloud, params: &SinkhornParams) -> Result<SinkhornState> {
    sinkhorn_warm(u, x, params, None)
}

/// Like [`sinkhorn`], starting from a source dual guess.
pub fn sinkhorn_warm(
    u: &PointCloud,
    x: &PointCloud,
    params: &SinkhornParams,
    init_f: Option<&[f64]>,
) -> Result<SinkhornState> {
    params.validate()?;
    let problem = Problem::new(u, x)?;
    let (n, m) = (problem.n, problem.m);
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut schedule = params.schedule();
    if let Some(init) = init_f {
        if init.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: init.len(),
            });
        }
        problem.update_g(init, schedule[schedule.len() - 1], &mut g);
        schedule = vec![params.epsilon];
    }
    let mut kernel = vec![0.0; n * m];
    let mut iterations = 0;
    let mut err = f64::INFINITY;
    let mut converged = false;
    let last = schedule.len() - 1;
    for (k, &eps) in schedule.iter().enumerate() {
        let tol = if k == last { params.tol } else { params.tol.max(LADDER_TOL) };
        let budget = params.max_iter.saturating_sub(iterations);
        let (it, e, ok) = problem.stage(eps, tol, budget, &mut f, &mut g, &mut kernel)?;
        iterations += it;
        err = e;
        converged = ok;
    }
    if init_f.is_some() && !converged && iterations < params.max_iter {
        // a poor guess can strand mass far from the optimum; restart cold
        let rest = params.with_max_iter(params.max_iter - iterations);
        let mut cold = sinkhorn_warm(u, x, &rest, None)?;
        cold.iterations += iterations;
        return Ok(cold);
    }
    let reg_cost = problem.a.iter().zip(&f).map(|(a, v)| a * v).sum::<f64>()
        + problem.b.iter().zip(&g).map(|(b, v)| b * v).sum::<f64>();
    Ok(SinkhornState {
        f,
        g,
        epsilon: params.epsilon,
        iterations,
        marginal_error: err,
        reg_cost,
        converged,
    })
}

/// Entropic map `u -> E[X | U = u]`, evaluable anywhere.
#[derive(Debug, Clone)]
pub struct EotMap {
    targets: PointCloud,
    g: Vec<f64>,
    epsilon: f64,
    /// `(g_j - |x_j|^2/2) / eps + log b_j`; the logits at `u` are this plus
    /// `<u, x_j> / eps`, up to a term constant in `j`.
    shift: Vec<f64>,
}

impl EotMap {
    pub fn new(x: &PointCloud, state: &SinkhornState) -> Result<Self> {
        if state.g.len() != x.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                found: state.g.len(),
            });
        }
        let inv = 1.0 / state.epsilon;
        let shift = x
            .points()
            .zip(&state.g)
            .zip(x.weights())
            .map(|((xj, g), b)| (g - half_sq_norm(xj)) * inv + b.ln())
            .collect();
        Ok(Self {
            targets: x.clone(),
            g: state.g.clone(),
            epsilon: state.epsilon,
            shift,
        })
    }

    pub fn dim(&self) -> usize {
        self.targets.dim()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn targets(&self) -> &PointCloud {
        &self.targets
    }

    /// Fills `out` with the shifted logits and returns their maximum.
    fn logits(&self, u: &[f64], out: &mut Vec<f64>) -> f64 {
        let inv = 1.0 / self.epsilon;
        out.clear();
        let mut max = f64::NEG_INFINITY;
        for (x, s) in self.targets.points().zip(&self.shift) {
            let l = s + inv * x.iter().zip(u).map(|(a, b)| a * b).sum::<f64>();
            max = max.max(l);
            out.push(l);
        }
        max
    }

    /// `eps LSE_j` of the shifted logits, which is `|u|^2/2 - dual(u)`.
    fn h_with(&self, u: &[f64], buf: &mut Vec<f64>) -> f64 {
        let max = self.logits(u, buf);
        if max == f64::NEG_INFINITY {
            return max;
        }
        self.epsilon * (max + buf.iter().map(|l| shifted_exp(l - max)).sum::<f64>().ln())
    }

    fn eval_with(&self, u: &[f64], out: &mut [f64], buf: &mut Vec<f64>) -> f64 {
        let max = self.logits(u, buf);
        let mut total = 0.0;
        out.iter_mut().for_each(|o| *o = 0.0);
        for (x, l) in self.targets.points().zip(buf.iter()) {
            let w = shifted_exp(l - max);
            if w == 0.0 {
                continue;
            }
            total += w;
            for (o, xk) in out.iter_mut().zip(x) {
                *o += w * xk;
            }
        }
        out.iter_mut().for_each(|o| *o /= total);
        half_sq_norm(u) - self.epsilon * (max + total.ln())
    }

    /// Writes `T(u)` into `out` and returns the source dual at `u`.
    pub fn eval_into(&self, u: &[f64], out: &mut [f64]) -> f64 {
        self.eval_with(u, out, &mut Vec::with_capacity(self.g.len()))
    }

    pub fn eval(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(u, &mut out);
        out
    }

    fn h(&self, u: &[f64]) -> f64 {
        self.h_with(u, &mut Vec::with_capacity(self.g.len()))
    }

    /// Out-of-sample source dual `-eps LSE_j[(g_j - c(u, x_j))/eps + log b_j]`.
    pub fn dual_at(&self, u: &[f64]) -> f64 {
        half_sq_norm(u) - self.h(u)
    }

    /// Index of the target carrying the largest conditional weight at `u`.
    pub fn dominant_target(&self, u: &[f64]) -> usize {
        let mut logits = Vec::with_capacity(self.g.len());
        self.logits(u, &mut logits);
        let mut best = 0;
        for (j, l) in logits.iter().enumerate() {
            if *l > logits[best] {
                best = j;
            }
        }
        best
    }

    /// Map images and source duals at every point of `cloud`.
    pub fn eval_cloud(&self, cloud: &PointCloud) -> Result<(PointCloud, Vec<f64>)> {
        if cloud.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: cloud.dim(),
            });
        }
        let d = self.dim();
        let mut data = vec![0.0; cloud.len() * d];
        let mut duals = vec![0.0; cloud.len()];
        data.par_chunks_mut(d).zip(duals.par_iter_mut()).enumerate().for_each_init(
            || Vec::with_capacity(self.g.len()),
            |buf, (i, (out, dual))| *dual = self.eval_with(cloud.point(i), out, buf),
        );
        Ok((PointCloud::new(cloud.len(), d, data)?, duals))
    }
}

fn half_sq_norm(u: &[f64]) -> f64 {
    0.5 * u.iter().map(|v| v * v).sum::<f64>()
}

/// Entropic potential `h(u) - h(u0)` with `h(u) = |u|^2/2 - dual(u)`; its
/// gradient is the entropic map.
#[derive(Debug, Clone)]
pub struct EotPotential {
    map: EotMap,
    u0: Vec<f64>,
    h0: f64,
}

impl EotPotential {
    pub fn new(map: EotMap, u0: Vec<f64>) -> Result<Self> {
        if u0.len() != map.dim() {
            return Err(Error::DimensionMismatch {
                expected: map.dim(),
                found: u0.len(),
            });
        }
        let h0 = map.h(&u0);
        Ok(Self { map, u0, h0 })
    }

    /// Anchored at the candidate minimizing `h` over `candidates`.
    pub fn anchored(map: EotMap, candidates: &PointCloud) -> Result<Self> {
        let u0 = argmin_h(&map, candidates)?;
        Self::new(map, u0)
    }

    pub fn anchor(&self) -> &[f64] {
        &self.u0
    }

    pub fn map(&self) -> &EotMap {
        &self.map
    }

    pub fn value(&self, u: &[f64]) -> f64 {
        if u == self.u0.as_slice() {
            return 0.0;
        }
        self.map.h(u) - self.h0
    }

    /// Potential from an already computed source dual at `u`.
    pub fn value_from_dual(&self, u: &[f64], dual: f64) -> f64 {
        if u == self.u0.as_slice() {
            return 0.0;
        }
        half_sq_norm(u) - dual - self.h0
    }

    pub fn values_at(&self, cloud: &PointCloud) -> Vec<f64> {
        let pts: Vec<&[f64]> = cloud.points().collect();
        pts.par_iter().map(|u| self.value(u)).collect()
    }
}

fn argmin_h(map: &EotMap, candidates: &PointCloud) -> Result<Vec<f64>> {
    if candidates.dim() != map.dim() {
        return Err(Error::DimensionMismatch {
            expected: map.dim(),
            found: candidates.dim(),
        });
    }
    let pts: Vec<&[f64]> = candidates.points().collect();
    let values: Vec<f64> = pts.par_iter().map_init(|| Vec::with_capacity(map.g.len()), |buf, u| map.h_with(u, buf)).collect();
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    Ok(pts[best].to_vec())
}

pub fn eot_map_at(u: &[f64], state: &SinkhornState, x: &PointCloud) -> Result<Vec<f64>> {
    Ok(EotMap::new(x, state)?.eval(u))
}

pub fn eot_potential_at(u: &[f64], state: &SinkhornState, x: &PointCloud, u0: &[f64]) -> Result<f64> {
    Ok(EotPotential::new(EotMap::new(x, state)?, u0.to_vec())?.value(u))
}

/// Anchor point for the potential: the reference point where
/// `|u|^2/2 - dual(u)` is smallest, so the potential is non-negative on `u`.
pub fn select_u0(u: &PointCloud, state: &SinkhornState, x: &PointCloud) -> Result<Vec<f64>> {
    argmin_h(&EotMap::new(x, state)?, u)
}

/// Like [`select_u0`], also scanning a regular grid of `steps` points per
/// axis clipped to the unit ball.
pub fn select_u0_refined(u: &PointCloud, state: &SinkhornState, x: &PointCloud, steps: usize) -> Result<Vec<f64>> {
    let d = u.dim();
    if steps < 2 {
        return select_u0(u, state, x);
    }
    let mut data = u.as_slice().to_vec();
    let mut idx = vec![0usize; d];
    'grid: loop {
        let p: Vec<f64> = idx.iter().map(|&k| -1.0 + 2.0 * k as f64 / (steps - 1) as f64).collect();
        if p.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
            data.extend(p);
        }
        for k in idx.iter_mut() {
            *k += 1;
            if *k < steps {
                continue 'grid;
            }
            *k = 0;
        }
        break;
    }
    let candidates = PointCloud::new(data.len() / d, d, data)?;
    argmin_h(&EotMap::new(x, state)?, &candidates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::ot_quantile_map;
    use crate::sampling::{generate, sample_unit_ball, GeneratorSpec, SeededRng};

    fn ball(n: usize, d: usize, seed: u64) -> PointCloud {
        sample_unit_ball(n, d, &SeededRng::new(seed, 0)).unwrap()
    }

    fn gauss(n: usize, d: usize, seed: u64) -> PointCloud {
        generate(&GeneratorSpec::standard_gaussian(d), n, &SeededRng::new(seed, 1)).unwrap()
    }

    fn marginal_errors(state: &SinkhornState, u: &PointCloud, x: &PointCloud) -> (f64, f64) {
        let plan = state.plan(u, x);
        let (n, m) = (u.len(), x.len());
        let rows: f64 = (0..n)
            .map(|i| (plan[i * m..(i + 1) * m].iter().sum::<f64>() - u.weight(i)).abs())
            .sum();
        let cols: f64 = (0..m)
            .map(|j| ((0..n).map(|i| plan[i * m + j]).sum::<f64>() - x.weight(j)).abs())
            .sum();
        (rows, cols)
    }

    #[test]
    fn single_pair_is_forced() {
        let u = PointCloud::from_rows(&[[0.1, 0.2]]).unwrap();
        let x = PointCloud::from_rows(&[[2.0, -1.0]]).unwrap();
        let s = sinkhorn(&u, &x, &SinkhornParams::new(1e-2).with_ladder(false)).unwrap();
        assert!(s.converged);
        assert!(s.iterations <= 1);
        let c = half_sq_dist(u.point(0), x.point(0));
        assert!((s.f[0] + s.g[0] - c).abs() < 1e-12);
    }

    #[test]
    fn large_epsilon_gives_product_coupling() {
        let u = ball(20, 2, 1);
        let x = gauss(30, 2, 1);
        let cmax = (0..20)
            .flat_map(|i| (0..30).map(move |j| (i, j)))
            .map(|(i, j)| half_sq_dist(u.point(i), x.point(j)))
            .fold(0.0, f64::max);
        let s = sinkhorn(&u, &x, &SinkhornParams::new(1e3 * cmax)).unwrap();
        assert!(s.converged && s.marginal_error < 1e-7);
        for p in s.plan(&u, &x) {
            assert!((p - 1.0 / 600.0).abs() < 1e-6);
        }
    }

    #[test]
    fn marginals_match_on_random_clouds() {
        let u = gauss(50, 3, 2);
        let x = gauss(50, 3, 3);
        let s = sinkhorn(&u, &x, &SinkhornParams::new(1e-2)).unwrap();
        assert!(s.converged);
        let (r, c) = marginal_errors(&s, &u, &x);
        assert!(r < 1e-7 && c < 1e-7, "{r} {c}");
    }

    #[test]
    fn unequal_sizes_supported() {
        let u = ball(40, 2, 4);
        let x = gauss(25, 2, 4);
        let s = sinkhorn(&u, &x, &SinkhornParams::new(5e-2)).unwrap();
        assert!(s.converged);
        let (r, c) = marginal_errors(&s, &u, &x);
        assert!(r < 1e-7 && c < 1e-7);
    }

    #[test]
    fn small_epsilon_stays_finite() {
        let u = ball(60, 3, 5);
        let x = gauss(60, 3, 5).map_points(|p, o| o.iter_mut().zip(p).for_each(|(o, v)| *o = 3.0 * v)).unwrap();
        let s = sinkhorn(&u, &x, &SinkhornParams::new(1e-3)).unwrap();
        assert!(s.converged);
        assert!(s.f.iter().chain(&s.g).all(|v| v.is_finite()));
    }

    #[test]
    fn dual_and_primal_costs_agree() {
        let u = ball(40, 2, 6);
        let x = gauss(40, 2, 6);
        let s = sinkhorn(&u, &x, &SinkhornParams::new(5e-2).with_tol(1e-10)).unwrap();
        let plan = s.plan(&u, &x);
        let mut primal = 0.0;
        for i in 0..40 {
            for j in 0..40 {
                let p = plan[i * 40 + j];
                let ab = u.weight(i) * x.weight(j);
                primal += p * half_sq_dist(u.point(i), x.point(j));
                if p > 0.0 {
                    primal += s.epsilon * p * (p / ab).ln();
                }
            }
        }
        assert!((primal - s.reg_cost).abs() <= 1e-6 * s.reg_cost.abs());
    }

    #[test]
    fn ladder_does_not_change_the_answer() {
        let u = ball(80, 2, 7);
        let x = gauss(80, 2, 7);
        let p = SinkhornParams::new(1e-2).with_tol(1e-10);
        let a = sinkhorn(&u, &x, &p).unwrap();
        let b = sinkhorn(&u, &x, &p.with_ladder(false)).unwrap();
        let ma = EotMap::new(&x, &a).unwrap();
        let mb = EotMap::new(&x, &b).unwrap();
        for q in u.points() {
            let (ta, tb) = (ma.eval(q), mb.eval(q));
            for k in 0..2 {
                assert!((ta[k] - tb[k]).abs() < 1e-6);
            }
        }
        // duals agree up to the additive constant
        let shift = a.f[0] - b.f[0];
        for i in 0..80 {
            assert!((a.f[i] - b.f[i] - shift).abs() < 1e-6);
        }
    }

    #[test]
    fn warm_start_reaches_same_plan() {
        let u = ball(60, 2, 8);
        let x = gauss(60, 2, 8);
        let y = gauss(60, 2, 9);
        let p = SinkhornParams::new(1e-2).with_tol(1e-10);
        let sx = sinkhorn(&u, &x, &p).unwrap();
        let cold = sinkhorn(&u, &y, &p).unwrap();
        let warm = sinkhorn_warm(&u, &y, &p, Some(&sx.f)).unwrap();
        assert!(warm.converged);
        let (mc, mw) = (EotMap::new(&y, &cold).unwrap(), EotMap::new(&y, &warm).unwrap());
        for q in u.points() {
            let (a, b) = (mc.eval(q), mw.eval(q));
            assert!((a[0] - b[0]).abs() < 1e-6 && (a[1] - b[1]).abs() < 1e-6);
        }
    }

    #[test]
    fn one_target_map_is_constant() {
        let u = ball(10, 2, 9);
        let x = PointCloud::from_rows(&[[1.5, -2.0]]).unwrap();
        let s = sinkhorn(&u, &x, &SinkhornParams::new(1e-2)).unwrap();
        for q in ball(20, 2, 10).points() {
            assert_eq!(eot_map_at(q, &s, &x).unwrap(), vec![1.5, -2.0]);
        }
    }

    #[test]
    fn symmetric_target_maps_origin_to_zero() {
        let u = PointCloud::from_values(&[-0.5, 0.5]).unwrap();
        let x = PointCloud::from_values(&[-1.0, 1.0]).unwrap();
        let s = sinkhorn(&u, &x, &SinkhornParams::new(0.1)).unwrap();
        // solver symmetry is only up to rounding; the map at 0 uses g directly
        let t = eot_map_at(&[0.0], &s, &x).unwrap()[0];
        assert!(t.abs() < 1e-9);
        let mut sym = s.clone();
        let gm = 0.5 * (s.g[0] + s.g[1]);
        sym.g = vec![gm, gm];
        assert_eq!(eot_map_at(&[0.0], &sym, &x).unwrap(), vec![0.0]);
    }

    #[test]
    fn map_lies_in_bounding_box_of_targets() {
        let u = ball(50, 3, 11);
        let x = gauss(40, 3, 11);
        let s = sinkhorn(&u, &x, &SinkhornParams::new(1e-2)).unwrap();
        let map = EotMap::new(&x, &s).unwrap();
        for q in ball(200, 3, 12).points() {
            let t = map.eval(q);
            for k in 0..3 {
                let col = x.column(k);
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert!(t[k] >= lo - 1e-12 && t[k] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn potential_vanishes_at_anchor_and_is_nonnegative() {
        let u = ball(100, 2, 13);
        let x = gauss(100, 2, 13);
        let s = sinkhorn(&u, &x, &SinkhornParams::new(1e-2)).unwrap();
        let u0 = select_u0(&u, &s, &x).unwrap();
        assert_eq!(eot_potential_at(&u0, &s, &x, &u0).unwrap(), 0.0);
        let pot = EotPotential::new(EotMap::new(&x, &s).unwrap(), u0).unwrap();
        assert!(pot.values_at(&u).iter().all(|v| *v >= -1e-9));
    }

    #[test]
    fn single_candidate_anchor() {
        let u = PointCloud::from_rows(&[[0.3, 0.1]]).unwrap();
        let x = gauss(5, 2, 14);
        let s = sinkhorn(&u, &x, &SinkhornParams::new(0.1)).unwrap();
        assert_eq!(select_u0(&u, &s, &x).unwrap(), vec![0.3, 0.1]);
    }

    #[test]
    fn one_atom_at_origin_closed_form() {
        let u = ball(10, 2, 15);
        let x = PointCloud::from_rows(&[[0.0, 0.0]]).unwrap();
        let s = sinkhorn(&u, &x, &SinkhornParams::new(1e-2)).unwrap();
        // dual(u) = |u|^2/2 - g, so the potential is identically zero
        let u0 = select_u0(&u, &s, &x).unwrap();
        for q in ball(30, 2, 16).points() {
            let v = eot_potential_at(q, &s, &x, &u0).unwrap();
            assert!(v.abs() < 1e-12);
            let dual = EotMap::new(&x, &s).unwrap().dual_at(q);
            assert!((dual - (half_sq_norm(q) - s.g[0])).abs() < 1e-12);
        }
    }

    #[test]
    fn finite_difference_gradients() {
        let u = ball(100, 3, 17);
        let x = gauss(100, 3, 17);
        for eps in [1e-2, 1e-1] {
            let s = sinkhorn(&u, &x, &SinkhornParams::new(eps)).unwrap();
            let map = EotMap::new(&x, &s).unwrap();
            let pot = EotPotential::anchored(map.clone(), &u).unwrap();
            let h = 1e-4;
            for q in ball(100, 3, 18).points() {
                let t = map.eval(q);
                let mut fd_dual = [0.0; 3];
                let mut fd_pot = [0.0; 3];
                for k in 0..3 {
                    let (mut p, mut m) = (q.to_vec(), q.to_vec());
                    p[k] += h;
                    m[k] -= h;
                    fd_dual[k] = (map.dual_at(&p) - map.dual_at(&m)) / (2.0 * h);
                    fd_pot[k] = (pot.value(&p) - pot.value(&m)) / (2.0 * h);
                }
                let exact: Vec<f64> = (0..3).map(|k| q[k] - t[k]).collect();
                let rel = |a: &[f64], b: &[f64]| {
                    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                    diff / b.iter().map(|v| v * v).sum::<f64>().sqrt()
                };
                assert!(rel(&fd_dual, &exact) < 1e-3);
                assert!(rel(&fd_pot, &t) < 1e-3);
            }
        }
    }

    #[test]
    fn grid_refined_anchor_within_resolution() {
        let u = ball(30, 1, 19);
        let x = gauss(30, 1, 19);
        let s = sinkhorn(&u, &x, &SinkhornParams::new(5e-2)).unwrap();
        let map = EotMap::new(&x, &s).unwrap();
        let h = |p: &[f64]| half_sq_norm(p) - map.dual_at(p);
        let coarse = select_u0_refined(&u, &s, &x, 11).unwrap();
        let dense = select_u0_refined(&u, &s, &x, 2001).unwrap();
        // h is Lipschitz with constant sup|T| on the ball
        let lip = x.as_slice().iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(h(&coarse) - h(&dense) <= lip * 0.1 + 1e-12);
        assert!(h(&dense) <= h(&coarse) + 1e-12);
    }

    #[test]
    fn map_approaches_exact_map_as_epsilon_shrinks() {
        let u = ball(200, 2, 20);
        let x = gauss(200, 2, 20);
        let (exact, _) = ot_quantile_map(&u, &x).unwrap();
        let mut prev = f64::INFINITY;
        for eps in [1e-1, 1e-2, 1e-3] {
            let s = sinkhorn(&u, &x, &SinkhornParams::new(eps)).unwrap();
            assert!(s.converged);
            let map = EotMap::new(&x, &s).unwrap();
            let msd: f64 = (0..200)
                .map(|i| half_sq_dist(&map.eval(u.point(i)), exact.image(i)) * 2.0)
                .sum::<f64>()
                / 200.0;
            assert!(msd <= prev);
            prev = msd;
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let u = ball(5, 2, 21);
        assert!(sinkhorn(&u, &u, &SinkhornParams::new(0.0)).is_err());
        assert!(sinkhorn(&u, &u, &SinkhornParams::new(1e-2).with_max_iter(0)).is_err());
        assert!(matches!(
            sinkhorn(&u, &ball(5, 3, 21), &SinkhornParams::new(1e-2)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn non_convergence_is_flagged() {
        let u = ball(50, 2, 22);
        let x = gauss(50, 2, 22);
        let s = sinkhorn(&u, &x, &SinkhornParams::new(1e-3).with_max_iter(3)).unwrap();
        assert!(!s.converged);
        assert!(matches!(s.require_converged(), Err(Error::NotConverged { .. })));
    }
}
