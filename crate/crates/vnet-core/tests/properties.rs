use proptest::prelude::*;
use vnet_core::behavior::{localize_users, LocalizationParams};
use vnet_core::flow::{coarsen, normalize_gravity, FlowMatrix, MatrixKind};
use vnet_core::metrics::{activity, eigenvector_centrality, introversion, pagerank, Convergence, Direction};
use vnet_core::model::{predict_value, PovertyModelPair};
use vnet_core::numeric::median;
use vnet_core::spatial::{haversine_km, LatLon, SiteRow};
use vnet_core::stats::{ols_fit, pearson};
use vnet_core::{HourStamp, Level, SpatialHierarchy, UserCallEvent};

fn latlon() -> impl Strategy<Value = LatLon> {
    (-90.0f64..=90.0, -180.0f64..=180.0).prop_map(|(lat, lon)| LatLon { lat, lon })
}

// A small random hierarchy: sites spread over arrondissements and regions.
fn hierarchy() -> impl Strategy<Value = SpatialHierarchy> {
    (1usize..4, 1usize..4, 1usize..5, any::<u64>()).prop_map(|(regions, arrs, sites, salt)| {
        let mut rows = vec![];
        let mut k = 0;
        for r in 0..regions {
            for a in 0..arrs {
                // vary site counts per arrondissement
                let count = 1 + (salt as usize + r * 7 + a * 3) % sites;
                for s in 0..count {
                    rows.push(SiteRow {
                        site: format!("S{k:03}"),
                        arrondissement: format!("A{r}{a}"),
                        region: format!("R{r}"),
                        position: LatLon::new(12.5 + r as f64 + 0.1 * a as f64, -17.0 + 0.05 * s as f64 + a as f64)
                            .unwrap(),
                    });
                    k += 1;
                }
            }
        }
        SpatialHierarchy::from_sites(rows).unwrap()
    })
}

fn raw_site_matrix(h: &SpatialHierarchy, cells: &[(u16, u16, u32)]) -> FlowMatrix {
    let n = h.len(Level::Site);
    let triplets = cells
        .iter()
        .map(|&(i, j, c)| (i as usize % n, j as usize % n, u64::from(c)));
    FlowMatrix::raw_from_triplets(Level::Site, h.ids(Level::Site).map(String::from).collect(), triplets, true)
        .unwrap()
}

fn dense_matrix(n: usize, kind: MatrixKind, weights: &[f64]) -> FlowMatrix {
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j || kind == MatrixKind::Raw {
                data[i * n + j] = weights[(i * n + j) % weights.len()];
            }
        }
    }
    let ids = (0..n).map(|i| format!("U{i:02}")).collect();
    FlowMatrix::from_dense(Level::Region, ids, kind, data).unwrap()
}

proptest! {
    #[test]
    fn haversine_is_symmetric(a in latlon(), b in latlon()) {
        let ab = haversine_km(a, b).unwrap();
        let ba = haversine_km(b, a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-9);
        prop_assert!(ab >= 0.0);
    }

    #[test]
    fn identical_sites_have_exact_centroid(p in latlon(), count in 1usize..8) {
        let rows = (0..count).map(|k| SiteRow {
            site: format!("S{k}"),
            arrondissement: "A".into(),
            region: "R".into(),
            position: p,
        });
        let h = SpatialHierarchy::from_sites(rows).unwrap();
        prop_assert_eq!(h.unit_centroid(Level::Region, "R").unwrap(), p);
        prop_assert_eq!(h.unit_centroid(Level::Arrondissement, "A").unwrap(), p);
    }

    #[test]
    fn distance_diagonal_is_zero(h in hierarchy()) {
        for level in Level::ALL {
            let d = h.pairwise_distance_matrix(level).unwrap();
            for i in 0..d.n() {
                prop_assert_eq!(d.get(i, i), 0.0);
            }
        }
    }

    #[test]
    fn coarsening_conserves_and_composes(
        h in hierarchy(),
        cells in prop::collection::vec((any::<u16>(), any::<u16>(), 0u32..1_000_000), 0..200),
    ) {
        let m = raw_site_matrix(&h, &cells);
        let arr = coarsen(&m, &h, Level::Arrondissement).unwrap();
        let direct = coarsen(&m, &h, Level::Region).unwrap();
        let two_step = coarsen(&arr, &h, Level::Region).unwrap();
        prop_assert_eq!(m.total_count(), direct.total_count());
        prop_assert_eq!(m.total_count(), arr.total_count());
        prop_assert_eq!(direct.nonzero_counts(), two_step.nonzero_counts());
    }

    #[test]
    fn normalization_is_homogeneous(
        h in hierarchy(),
        cells in prop::collection::vec((any::<u16>(), any::<u16>(), 1u32..1000), 1..60),
        c in 1u32..50,
    ) {
        let m = coarsen(&raw_site_matrix(&h, &cells), &h, Level::Arrondissement).unwrap();
        let scaled: Vec<_> = cells.iter().map(|&(i, j, v)| (i, j, v * c)).collect();
        let ms = coarsen(&raw_site_matrix(&h, &scaled), &h, Level::Arrondissement).unwrap();
        let a = normalize_gravity(&m, &h, 1.0).unwrap();
        let b = normalize_gravity(&ms, &h, 1.0).unwrap();
        for i in 0..a.n() {
            prop_assert_eq!(a.get(i, i), 0.0);
            for j in 0..a.n() {
                let expected = a.get(i, j) * f64::from(c);
                prop_assert!((b.get(i, j) - expected).abs() <= 1e-12 * expected.abs().max(1.0));
            }
        }
    }

    #[test]
    fn pagerank_is_a_distribution(
        n in 1usize..20,
        weights in prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..100.0], 1..64),
        damping in 0.05f64..0.95,
    ) {
        let m = dense_matrix(n, MatrixKind::Normalized, &weights);
        let pr = pagerank(&m, damping, Convergence::default()).unwrap();
        let total: f64 = pr.scores.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        let floor = (1.0 - damping) / n as f64 - 1e-12;
        prop_assert!(pr.scores.iter().all(|&s| s >= floor));
    }

    #[test]
    fn centralities_are_scale_invariant(
        n in 2usize..12,
        weights in prop::collection::vec(0.1f64..10.0, 1..40),
        c in 0.01f64..1000.0,
    ) {
        let m = dense_matrix(n, MatrixKind::Normalized, &weights);
        let scaled: Vec<f64> = weights.iter().map(|w| w * c).collect();
        let ms = dense_matrix(n, MatrixKind::Normalized, &scaled);
        let conv = Convergence::default();
        let (p, ps) = (pagerank(&m, 0.85, conv).unwrap(), pagerank(&ms, 0.85, conv).unwrap());
        let (e, es) = (eigenvector_centrality(&m, conv).unwrap(), eigenvector_centrality(&ms, conv).unwrap());
        for i in 0..n {
            prop_assert!((p.scores[i] - ps.scores[i]).abs() < 1e-9);
            prop_assert!((e.scores[i] - es.scores[i]).abs() < 1e-8);
        }
        let total: f64 = e.scores.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert!(e.scores.iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn symmetric_equal_weights_give_uniform_scores(n in 2usize..15, w in 0.5f64..50.0) {
        let m = dense_matrix(n, MatrixKind::Normalized, &[w]);
        let conv = Convergence::default();
        let u = 1.0 / n as f64;
        for s in pagerank(&m, 0.85, conv).unwrap().scores {
            prop_assert!((s - u).abs() < 1e-10);
        }
        for s in eigenvector_centrality(&m, conv).unwrap().scores {
            prop_assert!((s - u).abs() < 1e-10);
        }
    }

    #[test]
    fn introversion_matches_activity(
        n in 1usize..10,
        weights in prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..1e6], 1..50),
    ) {
        let weights: Vec<f64> = weights.iter().map(|w| w.floor()).collect();
        let m = dense_matrix(n, MatrixKind::Raw, &weights);
        let (intro, _) = introversion(&m).unwrap();
        let within = activity(&m, Direction::Within);
        let out = activity(&m, Direction::Outgoing);
        for i in 0..n {
            let s = intro.scores[i];
            prop_assert!((0.0..=1.0).contains(&s));
            let total = within.scores[i] + out.scores[i];
            let expected = if total > 0.0 { within.scores[i] / total } else { 0.0 };
            prop_assert!((s - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn pearson_symmetry_and_affine_invariance(
        xy in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..60),
        a in prop_oneof![-50.0f64..-0.1, 0.1f64..50.0],
        b in -100.0f64..100.0,
    ) {
        let x: Vec<f64> = xy.iter().map(|p| p.0).collect();
        let y: Vec<f64> = xy.iter().map(|p| p.1).collect();
        prop_assume!(pearson(&x, &y).is_ok());
        let r = pearson(&x, &y).unwrap();
        prop_assert_eq!(r.r, pearson(&y, &x).unwrap().r);
        let ax: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        prop_assume!(pearson(&ax, &y).is_ok());
        let ra = pearson(&ax, &y).unwrap().r;
        prop_assert!((ra - a.signum() * r.r).abs() < 1e-12);
        prop_assert!(r.p_value >= 0.0 && r.p_value <= 1.0);
    }

    #[test]
    fn ols_residuals_sum_to_zero(xy in prop::collection::vec((-100.0f64..100.0, -1e3f64..1e3), 2..80)) {
        let x: Vec<f64> = xy.iter().map(|p| p.0).collect();
        let y: Vec<f64> = xy.iter().map(|p| p.1).collect();
        prop_assume!(ols_fit(&x, &y).is_ok());
        let m = ols_fit(&x, &y).unwrap();
        let residual: f64 = x.iter().zip(&y).map(|(a, b)| b - m.predict(*a)).sum();
        prop_assert!(residual.abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&m.r_squared));
    }

    #[test]
    fn predictions_are_monotone_and_bounded(f1 in -0.5f64..1.0, f2 in -0.5f64..1.0) {
        let m = PovertyModelPair::from_coefficients("pagerank", Level::Region, 14, (-708.32, 131.94), (-346.66, 84.58));
        let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
        let p_lo = predict_value(&m, lo);
        let p_hi = predict_value(&m, hi);
        prop_assert!(p_hi.2 <= p_lo.2 && p_hi.3 <= p_lo.3 && p_hi.4 <= p_lo.4);
        for p in [p_lo, p_hi] {
            prop_assert!((0.0..=1.0).contains(&p.4));
            prop_assert_eq!(p.4, (p.2 / 100.0) * (p.3 / 100.0));
        }
    }

    #[test]
    fn median_is_permutation_invariant_and_bounded(mut v in prop::collection::vec(-1e6f64..1e6, 1..40), seed in any::<u64>()) {
        let m = median(&v).unwrap();
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(m >= lo && m <= hi);
        let len = v.len();
        v.rotate_left(seed as usize % len);
        v.reverse();
        prop_assert_eq!(median(&v).unwrap(), m);
    }

    #[test]
    fn duplicated_events_leave_d_and_c_unchanged(
        calls in prop::collection::vec((0u16..365, 18u8..24, 0usize..3), 1..120),
    ) {
        let rows = ["A0", "A1", "A2"].iter().enumerate().map(|(k, a)| SiteRow {
            site: format!("S{k}"),
            arrondissement: (*a).into(),
            region: "R".into(),
            position: LatLon::new(14.0, -15.0).unwrap(),
        });
        let h = SpatialHierarchy::from_sites(rows).unwrap();
        let events: Vec<UserCallEvent> = calls
            .iter()
            .map(|&(day, hour, arr)| UserCallEvent {
                user: "U".into(),
                hour: HourStamp::from_ordinal(2013, day, hour).unwrap(),
                arrondissement: format!("A{arr}"),
            })
            .collect();
        let doubled: Vec<UserCallEvent> = events.iter().chain(events.iter()).cloned().collect();
        let p = LocalizationParams::default();
        let once = localize_users(&events, &h, &p).unwrap();
        let twice = localize_users(&doubled, &h, &p).unwrap();
        prop_assert_eq!(once[0].d, twice[0].d);
        prop_assert_eq!(once[0].c, twice[0].c);
        prop_assert_eq!(&once[0].a, &twice[0].a);
    }
}

#[test]
fn haversine_triangle_inequality() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let mut point = || LatLon {
        lat: rng.random_range(-90.0..=90.0),
        lon: rng.random_range(-180.0..=180.0),
    };
    for _ in 0..1000 {
        let (a, b, c) = (point(), point(), point());
        let ab = haversine_km(a, b).unwrap();
        let bc = haversine_km(b, c).unwrap();
        let ac = haversine_km(a, c).unwrap();
        assert!(ac <= ab + bc + 1e-6, "{a:?} {b:?} {c:?}");
    }
}
