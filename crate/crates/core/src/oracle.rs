//! Slow reference implementations used to cross-check the solvers.
//!
//! Nothing here shares code with the production paths.

use crate::exact::CostMatrix;

/// Exhaustive minimum over all permutations (Heap's algorithm). Returns the
/// first minimizing permutation in enumeration order and its cost.
pub fn brute_force_assignment(cost: &CostMatrix) -> (Vec<usize>, f64) {
    let n = cost.rows();
    assert_eq!(n, cost.cols(), "brute force needs a square matrix");
    assert!(n <= 10, "brute force is limited to n <= 10");
    let eval = |p: &[usize]| (0..n).map(|i| cost.get(i, p[i])).sum::<f64>();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_cost = eval(&perm);
    let mut c = vec![0usize; n];
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            let v = eval(&perm);
            if v < best_cost {
                best_cost = v;
                best.copy_from_slice(&perm);
            }
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    (best, best_cost)
}

/// One-dimensional optimal matching: the k-th smallest `u` goes to the k-th
/// smallest `x`. Returns `perm` with `perm[i]` the index in `x` matched to `u[i]`.
pub fn sorted_matching(u: &[f64], x: &[f64]) -> Vec<usize> {
    assert_eq!(u.len(), x.len());
    let order = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
        idx
    };
    let ou = order(u);
    let ox = order(x);
    let mut perm = vec![0; u.len()];
    for (a, b) in ou.into_iter().zip(ox) {
        perm[a] = b;
    }
    perm
}

/// Minimizer of `f` over a regular grid on the box `[lo, hi]` with `steps`
/// points per axis.
pub fn grid_argmin(
    lo: &[f64],
    hi: &[f64],
    steps: usize,
    f: impl Fn(&[f64]) -> f64,
) -> (Vec<f64>, f64) {
    let d = lo.len();
    assert!(steps >= 2 && d == hi.len());
    let mut idx = vec![0usize; d];
    let mut p = lo.to_vec();
    let mut best = (p.clone(), f64::INFINITY);
    loop {
        for k in 0..d {
            p[k] = lo[k] + (hi[k] - lo[k]) * idx[k] as f64 / (steps - 1) as f64;
        }
        let v = f(&p);
        if v < best.1 {
            best = (p.clone(), v);
        }
        let mut k = 0;
        while k < d {
            idx[k] += 1;
            if idx[k] < steps {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == d {
            return best;
        }
    }
}

/// Sum of Chaudhuri's check loss `|x_i - q| + <u, x_i - q>` over the rows of
/// a row-major `data` buffer with dimension `d`.
pub fn geometric_objective(data: &[f64], d: usize, u: &[f64], q: &[f64]) -> f64 {
    data.chunks_exact(d)
        .map(|x| {
            let mut norm = 0.0;
            let mut inner = 0.0;
            for k in 0..d {
                let diff = x[k] - q[k];
                norm += diff * diff;
                inner += u[k] * diff;
            }
            norm.sqrt() + inner
        })
        .sum()
}

/// Interval of univariate empirical `level`-quantiles: every point in
/// `[lo, hi]` minimizes the check loss. Values must be finite.
pub fn univariate_quantile_interval(values: &[f64], level: f64) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let pos = level * n;
    let k = pos.floor() as usize;
    if (pos - pos.round()).abs() < 1e-9 && pos.round() >= 1.0 && (pos.round() as usize) < v.len() {
        let r = pos.round() as usize;
        (v[r - 1], v[r])
    } else {
        let k = k.min(v.len() - 1);
        (v[k], v[k])
    }
}
