use std::io::Cursor;

use proptest::prelude::*;

use otqq::analysis::{
    band_fraction, p_value, statistic_e, statistic_f, Component, Method, PlotSet, SampleSizes,
};
use otqq::exact::{cost_matrix, ot_dual_potentials, ot_quantile_map, solve_assignment};
use otqq::geometric::{geometric_quantile, geometric_rank, GeometricRank};
use otqq::io::{parse_csv, plot_set_csv};
use otqq::model::{bounding_region, restrict, standardize, PointCloud};
use otqq::oracle::{brute_force_assignment, sorted_matching};
use otqq::sampling::{sample_unit_ball, SeededRng};
use otqq::sinkhorn::{sinkhorn, EotMap, EotPotential, SinkhornParams};

fn cloud(n: usize, d: usize) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(-5.0f64..5.0, n * d).prop_map(move |v| PointCloud::new(n, d, v).unwrap())
}

fn pair(max_n: usize, max_d: usize) -> impl Strategy<Value = (PointCloud, PointCloud)> {
    (1..=max_n, 1..=max_d).prop_flat_map(|(n, d)| (cloud(n, d), cloud(n, d)))
}

fn reversed(c: &PointCloud) -> PointCloud {
    let idx: Vec<usize> = (0..c.len()).rev().collect();
    let s = c.select(&idx).unwrap();
    PointCloud::new(s.len(), s.dim(), s.as_slice().to_vec()).unwrap()
}

fn half_sq(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn assignment_matches_brute_force((u, x) in pair(6, 3)) {
        let c = cost_matrix(&u, &x).unwrap();
        let a = solve_assignment(&c).unwrap();
        let mut seen = a.perm.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..u.len()).collect::<Vec<_>>());
        let sum: f64 = (0..u.len()).map(|i| c.get(i, a.perm[i])).sum();
        prop_assert_eq!(a.total_cost, sum);
        prop_assert_eq!(a.total_cost, brute_force_assignment(&c).1);
    }

    #[test]
    fn assignment_is_cyclically_monotone_with_tight_duals((u, x) in pair(40, 3)) {
        let (map, a) = ot_quantile_map(&u, &x).unwrap();
        let n = u.len();
        for i in 0..n {
            for j in 0..n {
                let (si, sj) = (map.perm[i], map.perm[j]);
                let here = half_sq(u.point(i), x.point(si)) + half_sq(u.point(j), x.point(sj));
                let swapped = half_sq(u.point(i), x.point(sj)) + half_sq(u.point(j), x.point(si));
                prop_assert!(here <= swapped + 1e-9);
            }
        }
        let pots = ot_dual_potentials(&u, &x, &a).unwrap();
        let dual = (pots.alpha.iter().sum::<f64>() + pots.beta.iter().sum::<f64>()) / n as f64;
        prop_assert!((dual - a.total_cost / n as f64).abs() <= 1e-8 * (1.0 + dual.abs()));
        let lowest = pots.phi_at_ref.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert_eq!(lowest, 0.0);
    }

    #[test]
    fn map_shifts_with_target((u, x) in pair(25, 3), shift in prop::collection::vec(-3.0f64..3.0, 3)) {
        let v = &shift[..x.dim()];
        let (base, _) = ot_quantile_map(&u, &x).unwrap();
        let (moved, _) = ot_quantile_map(&u, &x.translate(v).unwrap()).unwrap();
        prop_assert_eq!(&base.perm, &moved.perm);
        for i in 0..u.len() {
            for k in 0..v.len() {
                prop_assert!((moved.image(i)[k] - base.image(i)[k] - v[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn one_dimensional_map_is_sorted((u, x) in (2usize..60).prop_flat_map(|n| (cloud(n, 1), cloud(n, 1)))) {
        let (map, _) = ot_quantile_map(&u, &x).unwrap();
        let sorted = sorted_matching(u.as_slice(), x.as_slice());
        for i in 0..u.len() {
            prop_assert_eq!(x.point(map.perm[i]), x.point(sorted[i]));
        }
    }

    #[test]
    fn standardize_round_trips(c in (3usize..30, 1usize..4).prop_flat_map(|(n, d)| cloud(n, d))) {
        if let Ok((z, t)) = standardize(&c) {
            let back = t.invert(&z).unwrap();
            for (a, b) in back.as_slice().iter().zip(c.as_slice()) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn bounding_region_keeps_everything(c in (1usize..30, 1usize..4).prop_flat_map(|(n, d)| cloud(n, d))) {
        let region = bounding_region(&[&c], 0.0).unwrap();
        let (kept, idx) = restrict(&c, &region).unwrap();
        prop_assert_eq!(kept.as_slice(), c.as_slice());
        prop_assert_eq!(idx.len(), c.len());
    }

    #[test]
    fn ball_samples_are_seeded_and_inside(seed in any::<u64>(), stream in 0u64..64, d in 1usize..6) {
        let a = sample_unit_ball(200, d, &SeededRng::new(seed, stream)).unwrap();
        let b = sample_unit_ball(200, d, &SeededRng::new(seed, stream)).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.points().all(|p| p.iter().map(|v| v * v).sum::<f64>() <= 1.0));
    }

    #[test]
    fn p_value_counts_exceedances(observed in -3.0f64..3.0, null in prop::collection::vec(-3.0f64..3.0, 1..200)) {
        let p = p_value(observed, &null).unwrap();
        let exceed = null.iter().filter(|v| **v >= observed).count();
        prop_assert_eq!(p, (1 + exceed) as f64 / (null.len() + 1) as f64);
        prop_assert!(p > 0.0 && p <= 1.0);
    }

    #[test]
    fn band_counts_perpendicular_distance(pairs in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..100), eta in 0.01f64..2.0) {
        let n = pairs.len();
        let set = PlotSet {
            pairs: pairs.clone(),
            component: Component::Coordinate(0),
            method: Method::Ot,
            region_tag: "all".into(),
            sample_sizes: SampleSizes { x: n, y: n, reference: n },
            reference_indices: (0..n).collect(),
        };
        let band = band_fraction(&set, eta).unwrap();
        let inside = pairs.iter().filter(|(x, y)| (x - y).abs() / 2f64.sqrt() < eta).count();
        prop_assert_eq!(band.fraction_inside, inside as f64 / n as f64);
        prop_assert!((0.0..=1.0).contains(&band.fraction_inside));

        let back = parse_csv(Cursor::new(plot_set_csv(&set)), true, b',').unwrap();
        for (p, q) in back.points().zip(&pairs) {
            prop_assert_eq!((p[0], p[1]), *q);
        }
    }

    #[test]
    fn geometric_ranks_stay_in_the_ball((c, y) in (1usize..40, 1usize..5).prop_flat_map(|(n, d)| (cloud(n, d), prop::collection::vec(-6.0f64..6.0, d)))) {
        prop_assert!(geometric_rank(&c, &y).unwrap().norm() <= 1.0 + 1e-12);
        for p in c.points() {
            prop_assert!(geometric_rank(&c, p).unwrap().norm() <= 1.0 + 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sinkhorn_plan_has_the_right_marginals(
        (u, x) in (2usize..25, 2usize..25, 1usize..4)
            .prop_flat_map(|(n, m, d)| (cloud(n, d), cloud(m, d))),
        eps in 0.05f64..2.0,
    ) {
        let s = sinkhorn(&u, &x, &SinkhornParams::new(eps).with_tol(1e-9)).unwrap();
        prop_assert!(s.converged);
        let (n, m) = (u.len(), x.len());
        let (mut rows, mut cols) = (vec![0.0; n], vec![0.0; m]);
        for i in 0..n {
            for j in 0..m {
                let p = ((s.f[i] + s.g[j] - half_sq(u.point(i), x.point(j))) / eps).exp() / (n * m) as f64;
                rows[i] += p;
                cols[j] += p;
            }
        }
        let err = rows.iter().map(|r| (r - 1.0 / n as f64).abs()).sum::<f64>()
            + cols.iter().map(|c| (c - 1.0 / m as f64).abs()).sum::<f64>();
        prop_assert!(err < 1e-8, "{}", err);

        let map = EotMap::new(&x, &s).unwrap();
        let pot = EotPotential::anchored(map.clone(), &u).unwrap();
        prop_assert_eq!(pot.value(pot.anchor()), 0.0);
        for p in u.points() {
            prop_assert!(pot.value(p) >= -1e-9);
            let t = map.eval(p);
            for k in 0..x.dim() {
                let col = x.column(k);
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(t[k] >= lo - 1e-9 && t[k] <= hi + 1e-9);
            }
        }
    }

    #[test]
    fn statistics_ignore_row_order(seed in any::<u64>(), (x, y) in (5usize..20).prop_flat_map(|n| (cloud(n, 2), cloud(n, 2)))) {
        let u = sample_unit_ball(x.len(), 2, &SeededRng::new(seed, 1)).unwrap();
        let mc = sample_unit_ball(64, 2, &SeededRng::new(seed, 2)).unwrap();
        let params = SinkhornParams::new(0.5);
        let fit = |c: &PointCloud| {
            let map = EotMap::new(c, &sinkhorn(&u, c, &params).unwrap().require_converged().unwrap()).unwrap();
            let pot = EotPotential::anchored(map.clone(), &u).unwrap();
            (map, pot)
        };
        let (mx, px) = fit(&x);
        let (my, py) = fit(&y);
        let (mr, pr) = fit(&reversed(&x));
        let n = x.len() as f64;
        prop_assert_eq!(statistic_e(&mx, &mx, &mc, n).unwrap(), 0.0);
        prop_assert_eq!(statistic_f(&px, &px, &mc, n).unwrap(), 0.0);
        let e = statistic_e(&mx, &my, &mc, n).unwrap();
        let f = statistic_f(&px, &py, &mc, n).unwrap();
        prop_assert!(e >= 0.0 && f >= 0.0);
        let e_rev = statistic_e(&mr, &my, &mc, n).unwrap();
        let f_rev = statistic_f(&pr, &py, &mc, n).unwrap();
        prop_assert!((e - e_rev).abs() <= 1e-6 * (1.0 + e));
        prop_assert!((f - f_rev).abs() <= 1e-6 * (1.0 + f));
    }

    #[test]
    fn geometric_quantile_inverts_the_rank(
        c in (20usize..60).prop_flat_map(|n| cloud(n, 2)),
        r in 0.0f64..0.7,
        angle in 0.0f64..std::f64::consts::TAU,
        shift in prop::collection::vec(-3.0f64..3.0, 2),
    ) {
        let u = GeometricRank(vec![r * angle.cos(), r * angle.sin()]);
        let q = geometric_quantile(&c, &u, 1e-10, 10_000).unwrap().require_converged().unwrap().point;
        if c.points().all(|p| half_sq(p, &q) > 1e-12) {
            let back = geometric_rank(&c, &q).unwrap();
            prop_assert!(back.0.iter().zip(&u.0).all(|(a, b)| (a - b).abs() < 1e-6));
        }
        let moved = geometric_quantile(&c.translate(&shift).unwrap(), &u, 1e-10, 10_000).unwrap().point;
        prop_assert!((moved[0] - q[0] - shift[0]).abs() < 1e-6 && (moved[1] - q[1] - shift[1]).abs() < 1e-6);
    }
}
