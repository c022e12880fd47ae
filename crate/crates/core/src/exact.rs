//! Exact discrete optimal transport between equal-size samples.
//!
//! The empirical quantile map is the cost-minimizing bijection between the
//! reference sample and the data, found by a shortest-augmenting-path
//! assignment solver. The same solver maintains node prices, which are the
//! dual variables of the assignment LP and give the empirical potential.

use crate::error::{Error, Result};
use crate::model::PointCloud;

/// Pairwise cost `0.5 * |u_i - x_j|^2`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl CostMatrix {
    pub fn from_entries(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::invalid(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                entries.len()
            )));
        }
        if entries.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("cost entries must be finite"));
        }
        Ok(Self { rows, cols, entries })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn max(&self) -> f64 {
        self.entries.iter().cloned().fold(0.0, f64::max)
    }
}

#[inline]
pub(crate) fn half_sq_dist(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
}

pub fn cost_matrix(u: &PointCloud, x: &PointCloud) -> Result<CostMatrix> {
    if u.dim() != x.dim() {
        return Err(Error::DimensionMismatch {
            expected: u.dim(),
            found: x.dim(),
        });
    }
    let mut entries = Vec::with_capacity(u.len() * x.len());
    for ui in u.points() {
        entries.extend(x.points().map(|xj| half_sq_dist(ui, xj)));
    }
    Ok(CostMatrix {
        rows: u.len(),
        cols: x.len(),
        entries,
    })
}

/// Optimal permutation with the solver's node prices.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `perm[i]` is the column assigned to row `i`.
    pub perm: Vec<usize>,
    /// Minimum of `sum_i c[i][perm[i]]` under the half-squared cost.
    pub total_cost: f64,
    /// Row prices `alpha`, with `alpha_i + beta_j <= c_ij`.
    pub row_dual: Vec<f64>,
    /// Column prices `beta`.
    pub col_dual: Vec<f64>,
}

impl Assignment {
    /// Total cost under the plain squared-distance convention.
    pub fn squared_distance_cost(&self) -> f64 {
        2.0 * self.total_cost
    }
}

/// Solves the linear assignment problem exactly.
///
/// Rows are inserted one at a time and matched along a shortest augmenting
/// path in the reduced-cost graph (Dijkstra with node prices). Ties are
/// broken toward the lower column index in scan order, preferring free
/// columns.
pub fn solve_assignment(cost: &CostMatrix) -> Result<Assignment> {
    let n = cost.rows;
    if n != cost.cols {
        return Err(Error::NonSquare {
            rows: cost.rows,
            cols: cost.cols,
        });
    }
    if n == 0 {
        return Err(Error::invalid("empty cost matrix"));
    }

    const NONE: usize = usize::MAX;
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut col_for_row = vec![NONE; n];
    let mut row_for_col = vec![NONE; n];
    let mut path = vec![NONE; n];
    let mut shortest = vec![f64::INFINITY; n];
    let mut seen_row = vec![false; n];
    let mut seen_col = vec![false; n];
    let mut remaining: Vec<usize> = Vec::with_capacity(n);

    for cur_row in 0..n {
        shortest.iter_mut().for_each(|s| *s = f64::INFINITY);
        seen_row.iter_mut().for_each(|s| *s = false);
        seen_col.iter_mut().for_each(|s| *s = false);
        remaining.clear();
        remaining.extend(0..n);

        let mut min_val = 0.0;
        let mut i = cur_row;
        let sink = loop {
            seen_row[i] = true;
            let row = cost.row(i);
            let ui = u[i];
            let mut lowest = f64::INFINITY;
            let mut best = NONE;
            for (pos, &j) in remaining.iter().enumerate() {
                let r = min_val + row[j] - ui - v[j];
                if r < shortest[j] {
                    path[j] = i;
                    shortest[j] = r;
                }
                let s = shortest[j];
                if s < lowest || (s == lowest && best != NONE && row_for_col[j] == NONE && row_for_col[remaining[best]] != NONE) {
                    lowest = s;
                    best = pos;
                }
            }
            if best == NONE || !lowest.is_finite() {
                return Err(Error::NumericalOverflow("assignment augmenting path"));
            }
            min_val = lowest;
            // keep the scan order stable: remove by shifting, not swapping
            let j = remaining.remove(best);
            seen_col[j] = true;
            if row_for_col[j] == NONE {
                break j;
            }
            i = row_for_col[j];
        };

        u[cur_row] += min_val;
        for r in 0..n {
            if seen_row[r] && r != cur_row {
                u[r] += min_val - shortest[col_for_row[r]];
            }
        }
        for c in 0..n {
            if seen_col[c] {
                v[c] -= min_val - shortest[c];
            }
        }

        let mut j = sink;
        loop {
            let r = path[j];
            row_for_col[j] = r;
            let prev = std::mem::replace(&mut col_for_row[r], j);
            if r == cur_row {
                break;
            }
            j = prev;
        }
    }

    let total_cost = col_for_row
        .iter()
        .enumerate()
        .map(|(i, &j)| cost.get(i, j))
        .sum();
    Ok(Assignment {
        perm: col_for_row,
        total_cost,
        row_dual: u,
        col_dual: v,
    })
}

/// Empirical quantile map defined on the reference points: reference point
/// `i` is sent to `images.point(i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMap {
    pub perm: Vec<usize>,
    pub images: PointCloud,
    pub total_cost: f64,
}

impl DiscreteMap {
    pub fn image(&self, i: usize) -> &[f64] {
        self.images.point(i)
    }
}

/// Optimal bijection from `u` onto `x`, with the assignment it came from.
pub fn ot_quantile_map(u: &PointCloud, x: &PointCloud) -> Result<(DiscreteMap, Assignment)> {
    if u.len() != x.len() {
        return Err(Error::NonSquare {
            rows: u.len(),
            cols: x.len(),
        });
    }
    let cost = cost_matrix(u, x)?;
    let assignment = solve_assignment(&cost)?;
    let images = x.select(&assignment.perm)?;
    Ok((
        DiscreteMap {
            perm: assignment.perm.clone(),
            images: images_without_weights(images)?,
            total_cost: assignment.total_cost,
        },
        assignment,
    ))
}

fn images_without_weights(c: PointCloud) -> Result<PointCloud> {
    if c.has_uniform_weights() {
        return Ok(c);
    }
    PointCloud::new(c.len(), c.dim(), c.as_slice().to_vec())
}

/// Empirical OT potential evaluated at the reference points.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactPotentials {
    /// `0.5|u_i|^2 - alpha_i`, shifted so that its minimum is 0.
    pub phi_at_ref: Vec<f64>,
    /// Raw source duals.
    pub alpha: Vec<f64>,
    /// Raw target duals.
    pub beta: Vec<f64>,
}

impl ExactPotentials {
    /// Conjugate values `0.5|x_j|^2 - beta_j` at the target points, before
    /// the normalization shift.
    pub fn conjugate_at_targets(&self, x: &PointCloud) -> Vec<f64> {
        x.points()
            .zip(&self.beta)
            .map(|(p, b)| 0.5 * p.iter().map(|v| v * v).sum::<f64>() - b)
            .collect()
    }
}

/// Dual feasibility slack allowed before the duals are rejected.
const DUAL_FEASIBILITY_TOL: f64 = 1e-6;

/// Potentials from the assignment's node prices, after verifying dual
/// feasibility on every pair and complementary slackness on the matched pairs.
pub fn ot_dual_potentials(
    u: &PointCloud,
    x: &PointCloud,
    assignment: &Assignment,
) -> Result<ExactPotentials> {
    let cost = cost_matrix(u, x)?;
    let n = cost.rows();
    if n != cost.cols() || assignment.perm.len() != n {
        return Err(Error::NonSquare {
            rows: n,
            cols: cost.cols(),
        });
    }
    let alpha = &assignment.row_dual;
    let beta = &assignment.col_dual;
    for i in 0..n {
        let row = cost.row(i);
        for j in 0..n {
            let violation = alpha[i] + beta[j] - row[j];
            if violation > DUAL_FEASIBILITY_TOL {
                return Err(Error::InfeasibleDuals { row: i, col: j, violation });
            }
        }
        let j = assignment.perm[i];
        let gap = row[j] - alpha[i] - beta[j];
        if gap.abs() > DUAL_FEASIBILITY_TOL {
            return Err(Error::InfeasibleDuals {
                row: i,
                col: j,
                violation: gap,
            });
        }
    }
    let raw: Vec<f64> = u
        .points()
        .zip(alpha)
        .map(|(p, a)| 0.5 * p.iter().map(|v| v * v).sum::<f64>() - a)
        .collect();
    let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(ExactPotentials {
        phi_at_ref: raw.iter().map(|v| v - min).collect(),
        alpha: alpha.clone(),
        beta: beta.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::brute_force_assignment;
    use crate::sampling::{generate, sample_unit_ball, GeneratorSpec, SeededRng};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rows: &[&[f64]]) -> PointCloud {
        PointCloud::from_rows(rows).unwrap()
    }

    #[test]
    fn cost_matrix_examples() {
        let u = cloud(&[&[0.0, 0.0]]);
        let x = cloud(&[&[3.0, 4.0]]);
        assert_eq!(cost_matrix(&u, &x).unwrap().get(0, 0), 12.5);
        let same = cloud(&[&[0.1, 0.2], &[0.3, -0.4], &[1.0, 2.0]]);
        let c = cost_matrix(&same, &same).unwrap();
        for i in 0..3 {
            assert_eq!(c.get(i, i), 0.0);
            for j in 0..3 {
                assert_eq!(c.get(i, j), c.get(j, i));
                assert!(c.get(i, j) >= 0.0);
            }
        }
        assert!(cost_matrix(&u, &cloud(&[&[1.0]])).is_err());
    }

    #[test]
    fn symmetric_under_matching_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<Vec<f64>> = (0..5).map(|_| vec![rng.random(), rng.random()]).collect();
        let perm = [3usize, 0, 4, 1, 2];
        let shuffled: Vec<Vec<f64>> = perm.iter().map(|&p| rows[p].clone()).collect();
        let a = PointCloud::from_rows(&rows).unwrap();
        let b = PointCloud::from_rows(&shuffled).unwrap();
        let c = cost_matrix(&a, &b).unwrap();
        // c[i][j] = cost(a_i, a_perm[j]); transposing and re-indexing must agree
        for i in 0..5 {
            for j in 0..5 {
                let direct = half_sq_dist(&rows[i], &rows[perm[j]]);
                assert_eq!(c.get(i, j), direct);
            }
        }
    }

    #[test]
    fn two_point_tie_has_cost_quarter() {
        let u = cloud(&[&[0.0, 0.0], &[0.5, 0.5]]);
        let x = cloud(&[&[0.0, 0.5], &[0.5, 0.0]]);
        let a = solve_assignment(&cost_matrix(&u, &x).unwrap()).unwrap();
        assert!((a.total_cost - 0.25).abs() < 1e-15);
        assert!((a.squared_distance_cost() - 0.5).abs() < 1e-15);
        // tie: lowest index preference keeps the identity
        assert_eq!(a.perm, vec![0, 1]);
    }

    #[test]
    fn identity_is_optimal_for_self_transport() {
        let u = sample_unit_ball(20, 3, &SeededRng::new(1, 0)).unwrap();
        let a = solve_assignment(&cost_matrix(&u, &u).unwrap()).unwrap();
        assert_eq!(a.perm, (0..20).collect::<Vec<_>>());
        assert_eq!(a.total_cost, 0.0);
    }

    #[test]
    fn non_square_rejected() {
        let c = CostMatrix::from_entries(2, 3, vec![0.0; 6]).unwrap();
        assert!(matches!(solve_assignment(&c), Err(Error::NonSquare { .. })));
    }

    #[test]
    fn matches_brute_force_on_small_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..40 {
            let n = rng.random_range(1..=7);
            let d = rng.random_range(1..=3);
            let u = sample_unit_ball(n, d, &SeededRng::new(rng.random(), 0)).unwrap();
            let x = generate(&GeneratorSpec::standard_gaussian(d), n, &SeededRng::new(rng.random(), 1))
                .unwrap();
            let c = cost_matrix(&u, &x).unwrap();
            let a = solve_assignment(&c).unwrap();
            let (_, best) = brute_force_assignment(&c);
            assert!((a.total_cost - best).abs() <= 1e-12 * best.max(1.0));
        }
    }

    #[test]
    fn duals_feasible_and_strongly_dual() {
        let u = sample_unit_ball(6, 2, &SeededRng::new(5, 0)).unwrap();
        let x = generate(&GeneratorSpec::standard_gaussian(2), 6, &SeededRng::new(5, 1)).unwrap();
        let (_, a) = ot_quantile_map(&u, &x).unwrap();
        let pots = ot_dual_potentials(&u, &x, &a).unwrap();
        let c = cost_matrix(&u, &x).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert!(pots.alpha[i] + pots.beta[j] <= c.get(i, j) + 1e-12);
            }
        }
        let dual: f64 = pots.alpha.iter().sum::<f64>() + pots.beta.iter().sum::<f64>();
        assert!((dual / 6.0 - a.total_cost / 6.0).abs() < 1e-8);
        let min = pots.phi_at_ref.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(min, 0.0);
    }

    #[test]
    fn single_point_potential() {
        let u = cloud(&[&[0.2, 0.1]]);
        let x = cloud(&[&[3.0, -1.0]]);
        let (_, a) = ot_quantile_map(&u, &x).unwrap();
        let p = ot_dual_potentials(&u, &x, &a).unwrap();
        assert_eq!(p.phi_at_ref, vec![0.0]);
        let c = half_sq_dist(u.point(0), x.point(0));
        assert!((p.alpha[0] + p.beta[0] - c).abs() < 1e-12);
    }

    #[test]
    fn self_transport_potential_is_half_square_norm() {
        let u = sample_unit_ball(10, 2, &SeededRng::new(8, 0)).unwrap();
        let (_, a) = ot_quantile_map(&u, &u).unwrap();
        let p = ot_dual_potentials(&u, &u, &a).unwrap();
        let sq: Vec<f64> = u.points().map(|q| 0.5 * q.iter().map(|v| v * v).sum::<f64>()).collect();
        let min = sq.iter().cloned().fold(f64::INFINITY, f64::min);
        // zero duals are optimal here; any optimal duals give a potential whose
        // gradient relation holds, and with the solver's duals alpha = beta = 0
        for (i, v) in p.phi_at_ref.iter().enumerate() {
            assert!((v - (sq[i] - min)).abs() < 1e-12);
        }
    }

    #[test]
    fn infeasible_duals_detected() {
        let u = cloud(&[&[0.0], &[1.0]]);
        let x = cloud(&[&[0.0], &[1.0]]);
        let (_, mut a) = ot_quantile_map(&u, &x).unwrap();
        a.row_dual[0] += 1.0;
        assert!(matches!(
            ot_dual_potentials(&u, &x, &a),
            Err(Error::InfeasibleDuals { .. })
        ));
    }

    #[test]
    fn one_dimensional_map_is_sorted_matching() {
        let u = sample_unit_ball(50, 1, &SeededRng::new(2, 0)).unwrap();
        let x = generate(&GeneratorSpec::standard_gaussian(1), 50, &SeededRng::new(2, 1)).unwrap();
        let (map, _) = ot_quantile_map(&u, &x).unwrap();
        let expected = crate::oracle::sorted_matching(u.as_slice(), x.as_slice());
        assert_eq!(map.perm, expected);
    }

    #[test]
    fn scaled_target_in_one_dimension() {
        let u = sample_unit_ball(30, 1, &SeededRng::new(6, 0)).unwrap();
        let x = u.map_points(|p, o| o[0] = 2.0 * p[0]).unwrap();
        let (map, _) = ot_quantile_map(&u, &x).unwrap();
        for i in 0..30 {
            assert_eq!(map.image(i)[0], 2.0 * u.point(i)[0]);
        }
    }
}
