//! Property tests for the module invariants.

use nalgebra::{DMatrix, Point2, Point3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use chartlab::baselines::{music_spectrum, MusicConfig, MusicGrid};
use chartlab::channel::{csi_covariance, synthesize_taps, ArrayConfig, ChannelConfig, C64};
use chartlab::charting::{calibrate_conditionals, q_matrix, symmetrize};
use chartlab::dataset::{label_count, labeled_subset, trajectory_split};
use chartlab::evaluate::{continuity, kruskal_stress, localization_report, trustworthiness};
use chartlab::features::{hermitian_log, log_euclidean_distance, DissimilarityMatrix};
use chartlab::geometry::{Direction, SPEED_OF_LIGHT};
use chartlab::raytrace::{Blocker, PathTuple, TraceConfig, TraceMode, Tracer};
use chartlab::scene::{generate_city, simulate_traffic, ScenarioParams, Scene, VehicleClass};

fn small_city(seed: u64) -> Scene {
    let params = ScenarioParams {
        width: 300.0,
        height: 260.0,
        ..ScenarioParams::default()
    };
    generate_city(seed, &params).unwrap()
}

fn street_point(rng: &mut ChaCha8Rng, scene: &Scene) -> Point2<f64> {
    loop {
        let p = Point2::new(
            rng.random_range(scene.bounds.min.x..scene.bounds.max.x),
            rng.random_range(scene.bounds.min.y..scene.bounds.max.y),
        );
        if scene.roads.on_corridor(&p) {
            return p;
        }
    }
}

fn random_psd(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> DMatrix<C64> {
    let h = DMatrix::from_fn(n, rank, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    &h * h.adjoint() + DMatrix::identity(n, n) * C64::new(1e-3, 0.0)
}

fn random_unitary(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<C64> {
    DMatrix::from_fn(n, n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .qr()
        .q()
}

fn points(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 2]> {
    (0..n).map(|_| [rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)]).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn city_is_well_formed(seed in any::<u64>()) {
        let scene = small_city(seed);
        prop_assert!(scene.roads.is_connected());
        prop_assert!(!scene.buildings.is_empty());
        for b in &scene.buildings {
            prop_assert!(b.is_valid());
            prop_assert!(b.height > 0.0 && b.height <= 200.0);
            for v in &b.footprint {
                prop_assert!(scene.bounds.contains(v));
                prop_assert!(!scene.roads.on_corridor(v));
            }
        }
        let bs = scene.bs.position;
        prop_assert!(!scene.buildings.iter().any(|b| b.footprint_contains(&Point2::new(bs.x, bs.y))));
        prop_assert_eq!(small_city(seed).buildings, scene.buildings);
    }

    #[test]
    fn traffic_stays_on_the_streets(seed in any::<u64>()) {
        let scene = small_city(3);
        let snaps = simulate_traffic(&scene, seed, 6, 1.0, 15).unwrap();
        prop_assert_eq!(snaps.len(), 6);
        for s in &snaps {
            let mut ids: Vec<u64> = s.vehicles.iter().map(|v| v.vehicle_id).collect();
            ids.sort_unstable();
            ids.dedup();
            prop_assert_eq!(ids.len(), s.vehicles.len());
            for v in &s.vehicles {
                prop_assert!(scene.bounds.contains(&v.position));
                prop_assert!(scene.roads.on_corridor(&v.position));
                prop_assert!(v.speed >= 0.0 && v.speed <= v.class.max_speed());
            }
        }
    }

    #[test]
    fn traced_paths_are_consistent_and_reciprocal(seed in any::<u64>()) {
        let scene = small_city(5);
        let tracer = Tracer::new(&scene, &TraceConfig { mode: TraceMode::Static, ..TraceConfig::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = street_point(&mut rng, &scene);
        let b = street_point(&mut rng, &scene);
        let tx = Point3::new(a.x, a.y, 1.8);
        let rx = Point3::new(b.x, b.y, rng.random_range(2.0..20.0));
        let fwd = tracer.trace(&tx, &Vector3::zeros(), &rx, &[]).unwrap();
        let back = tracer.trace(&rx, &Vector3::zeros(), &tx, &[]).unwrap();
        prop_assert_eq!(fwd.len(), back.len());
        for (p, q) in fwd.iter().zip(&back) {
            prop_assert!((p.path_length - q.path_length).abs() <= 1e-9 * p.path_length);
            prop_assert!((p.delay * SPEED_OF_LIGHT - p.path_length).abs() <= 1e-12 * p.path_length);
            prop_assert!(p.power > 0.0);
            prop_assert_eq!(p.bounce_count == 0, p.interactions.is_empty());
            for d in [p.dod, p.doa] {
                prop_assert!(d.azimuth > -std::f64::consts::PI && d.azimuth <= std::f64::consts::PI);
                prop_assert!(d.elevation.abs() <= std::f64::consts::FRAC_PI_2);
            }
        }
        prop_assert!(fwd.windows(2).all(|w| w[0].delay <= w[1].delay));
        for p in &fwd {
            let swapped = back.iter().any(|q| {
                (q.path_length - p.path_length).abs() <= 1e-9
                    && (q.doa.unit_vector() - p.dod.unit_vector()).norm() <= 1e-9
                    && (q.dod.unit_vector() - p.doa.unit_vector()).norm() <= 1e-9
            });
            prop_assert!(swapped);
        }
    }

    #[test]
    fn blockers_only_remove_paths(seed in any::<u64>()) {
        let scene = small_city(7);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = street_point(&mut rng, &scene);
        let b = street_point(&mut rng, &scene);
        let tx = Point3::new(a.x, a.y, 1.8);
        let rx = Point3::new(b.x, b.y, 12.0);
        let blockers: Vec<Blocker> = (0..25)
            .map(|k| {
                let c = street_point(&mut rng, &scene);
                let class = [VehicleClass::Sedan, VehicleClass::Truck, VehicleClass::Bus][k % 3];
                Blocker { vehicle_id: k as u64 + 1, center: c, heading: rng.random_range(-3.0..3.0), extents: class.body_extent() }
            })
            .filter(|bl| !bl.contains(&tx) && !bl.contains(&rx))
            .collect();
        let cfg = TraceConfig::default();
        let dynamic = Tracer::new(&scene, &TraceConfig { mode: TraceMode::Dynamic, ..cfg.clone() }).unwrap()
            .trace(&tx, &Vector3::zeros(), &rx, &blockers).unwrap();
        let fixed = Tracer::new(&scene, &TraceConfig { mode: TraceMode::Static, ..cfg }).unwrap()
            .trace(&tx, &Vector3::zeros(), &rx, &blockers).unwrap();
        for p in &dynamic {
            prop_assert!(fixed.iter().any(|q| (q.path_length - p.path_length).abs() <= 1e-9 && q.bounce_count == p.bounce_count));
        }
    }

    #[test]
    fn taps_are_linear_in_the_path_set(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = ChannelConfig { tau_max: 200e-9, subcarriers: 64, ..ChannelConfig::default() };
        let paths: Vec<PathTuple> = (0..6)
            .map(|_| {
                let delay = rng.random_range(10e-9..150e-9);
                PathTuple {
                    dod: Direction::new(rng.random_range(-3.0..3.0), rng.random_range(-0.5..0.5)),
                    doa: Direction::new(rng.random_range(-3.0..3.0), rng.random_range(-0.5..0.5)),
                    delay,
                    doppler: rng.random_range(-500.0..500.0),
                    power: rng.random_range(1e-9..1e-6),
                    bounce_count: 1,
                    path_length: delay * SPEED_OF_LIGHT,
                    interactions: Vec::new(),
                }
            })
            .collect();
        let (tx, rx) = (ArrayConfig::vehicle(), ArrayConfig::base_station().with_orientation(0.4));
        let all = synthesize_taps(&paths, &tx, &rx, 0.3, &cfg, None).unwrap();
        let first = synthesize_taps(&paths[..2], &tx, &rx, 0.3, &cfg, None).unwrap();
        let rest = synthesize_taps(&paths[2..], &tx, &rx, 0.3, &cfg, None).unwrap();
        let again = synthesize_taps(&paths, &tx, &rx, 0.3, &cfg, None).unwrap();
        for w in 0..all.taps.len() {
            let diff = (&all.taps[w] - &first.taps[w] - &rest.taps[w]).norm();
            prop_assert!(diff <= 1e-12 * all.taps[w].norm().max(1e-30));
            prop_assert_eq!(&all.taps[w], &again.taps[w]);
        }
    }

    #[test]
    fn covariance_is_hermitian_psd(seed in any::<u64>(), n_r in 2usize..8, n_t in 1usize..4, n_c in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let freq: Vec<DMatrix<C64>> = (0..n_c)
            .map(|_| DMatrix::from_fn(n_r, n_t, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))))
            .collect();
        let c = csi_covariance(&freq).unwrap();
        let tr = c.trace().re;
        prop_assert!((&c - c.adjoint()).norm() <= 1e-10 * tr);
        let eig = c.symmetric_eigen();
        prop_assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-10 * tr));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn log_euclidean_is_a_unitarily_invariant_metric(seed in any::<u64>(), n in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c: Vec<DMatrix<C64>> = (0..3).map(|k| random_psd(&mut rng, n, 1 + k % n)).collect();
        let d = |a: &DMatrix<C64>, b: &DMatrix<C64>| log_euclidean_distance(a, b, 1e-10).unwrap();
        let (ab, ba, bc, ac) = (d(&c[0], &c[1]), d(&c[1], &c[0]), d(&c[1], &c[2]), d(&c[0], &c[2]));
        prop_assert!(ab >= 0.0 && d(&c[0], &c[0]) == 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
        prop_assert!(ac <= ab + bc + 1e-9);
        let u = random_unitary(&mut rng, n);
        let rot = |m: &DMatrix<C64>| {
            let r = &u * m * u.adjoint();
            (&r + r.adjoint()) * C64::new(0.5, 0.0)
        };
        prop_assert!((d(&rot(&c[0]), &rot(&c[1])) - ab).abs() <= 1e-9);
    }

    #[test]
    fn eigenvalues_below_the_floor_do_not_matter(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 5;
        let u = random_unitary(&mut rng, n);
        let make = |tail: f64| {
            let lam = [3.0, 1.0, 0.5, tail, tail * 0.1];
            let d = DMatrix::from_fn(n, n, |i, j| if i == j { C64::new(lam[i], 0.0) } else { C64::new(0.0, 0.0) });
            let c = &u * d * u.adjoint();
            (&c + c.adjoint()) * C64::new(0.5, 0.0)
        };
        let floor = 1e-6;
        let (a, b) = (make(1e-9), make(3e-10));
        let (la, lb) = (hermitian_log(&a, floor).unwrap(), hermitian_log(&b, floor).unwrap());
        prop_assert!((la.matrix - lb.matrix).norm() <= 1e-9);
    }

    #[test]
    fn dissimilarity_matrix_is_symmetric_with_zero_diagonal(seed in any::<u64>(), n in 2usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = points(&mut rng, n);
        let d = DissimilarityMatrix::from_fn(n, |i, j| ((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2)).sqrt());
        for i in 0..n {
            prop_assert_eq!(d.get(i, i), 0.0);
            for j in 0..n {
                prop_assert_eq!(d.get(i, j).to_bits(), d.get(j, i).to_bits());
                prop_assert!(d.get(i, j) >= 0.0);
            }
        }
    }

    #[test]
    fn similarities_are_distributions(seed in any::<u64>(), n in 8usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = points(&mut rng, n);
        let d = DissimilarityMatrix::from_fn(n, |i, j| ((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2)).sqrt());
        let perplexity = rng.random_range(2.0..(n as f64 - 1.0).min(20.0));
        let cond = calibrate_conditionals(&d, perplexity).unwrap();
        for i in 0..n {
            let row = &cond.p[i * n..(i + 1) * n];
            let h: f64 = -row.iter().filter(|&&v| v > 0.0).map(|v| v * v.log2()).sum::<f64>();
            prop_assert!(cond.degenerate[i] || (h.exp2() / perplexity - 1.0).abs() <= 1e-4);
        }
        let p = symmetrize(&cond);
        prop_assert!((p.p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(p.p.iter().all(|&v| v >= 0.0));
        for i in 0..n {
            prop_assert_eq!(p.get(i, i), 0.0);
            for j in 0..n {
                prop_assert_eq!(p.get(i, j), p.get(j, i));
            }
        }
        let z: Vec<[f64; 2]> = pts.iter().map(|q| [q[0] / 30.0, q[1] / 30.0]).collect();
        let q = q_matrix(&z);
        prop_assert!((q.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(q.iter().all(|&v| v >= 0.0));
        prop_assert!((0..n).all(|i| q[i * n + i] == 0.0));
    }

    #[test]
    fn chart_metrics_ignore_rigid_motion_and_scale(seed in any::<u64>(), n in 12usize..80) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = points(&mut rng, n);
        let chart: Vec<[f64; 2]> = truth.iter().map(|p| [p[0] + rng.random_range(-20.0..20.0), p[1] + rng.random_range(-20.0..20.0)]).collect();
        let (th, s) = (rng.random_range(-3.0..3.0f64), rng.random_range(0.1..10.0));
        let (sn, cs) = th.sin_cos();
        let moved: Vec<[f64; 2]> = chart.iter().map(|p| [s * (cs * p[0] - sn * p[1]) + 17.0, s * (sn * p[0] + cs * p[1]) - 4.0]).collect();
        let k = 1 + n / 12;
        let ct = continuity(&truth, &chart, k).unwrap();
        let tw = trustworthiness(&truth, &chart, k).unwrap();
        prop_assert!((0.0..=1.0).contains(&ct) && (0.0..=1.0).contains(&tw));
        prop_assert!((continuity(&truth, &moved, k).unwrap() - ct).abs() <= 1e-12);
        prop_assert!((trustworthiness(&truth, &moved, k).unwrap() - tw).abs() <= 1e-12);
        let ks = kruskal_stress(&truth, &chart).unwrap();
        prop_assert!((kruskal_stress(&truth, &moved).unwrap() - ks).abs() <= 1e-9);

        let los: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
        let rep = localization_report(&truth, &chart, &los).unwrap();
        prop_assert!(rep.ecdf.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 < w[1].1));
        prop_assert_eq!(rep.ecdf.last().unwrap().1, 1.0);
    }

    #[test]
    fn music_argmax_ignores_scale(seed in any::<u64>(), scale in 1e-6f64..1e6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let array = ArrayConfig { rows: 2, cols: 4, spacing: 0.5, orientation: 0.2 };
        let cfg = MusicConfig { sources: 2, azimuth_step: 2f64.to_radians(), elevation_step: 2f64.to_radians(), ..MusicConfig::default() };
        let grid = MusicGrid::new(&cfg, &array).unwrap();
        let c = random_psd(&mut rng, array.len(), 2);
        let argmax = |s: &[f64]| (0..s.len()).max_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap();
        let a = argmax(&music_spectrum(&c, &grid).unwrap());
        let b = argmax(&music_spectrum(&(&c * C64::new(scale, 0.0)), &grid).unwrap());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn splits_keep_trajectories_apart_and_labels_nested(seed in any::<u64>(), n in 20usize..400, fraction in 0.1f64..0.9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<u64> = (0..n).map(|_| rng.random_range(0..(n as u64 / 4 + 2))).collect();
        let train = trajectory_split(&ids, fraction, seed);
        let held = train.iter().filter(|t| !**t).count();
        prop_assert!(held as f64 <= fraction * n as f64);
        for i in 0..n {
            for j in 0..n {
                if ids[i] == ids[j] {
                    prop_assert_eq!(train[i], train[j]);
                }
            }
        }
        let pool = train.iter().filter(|t| **t).count();
        let mut prev: Vec<usize> = Vec::new();
        for s in [5.0, 10.0, 25.0, 35.0, 50.0] {
            let count = label_count(n, s).min(pool);
            let picked = labeled_subset(&train, count, seed).unwrap();
            prop_assert_eq!(picked.len(), count);
            prop_assert!(picked.iter().all(|&i| train[i]));
            prop_assert!(prev.iter().all(|i| picked.contains(i)));
            prop_assert!((picked.len() as f64 - s / 100.0 * n as f64).abs() <= 1.0 || count == pool);
            prev = picked;
        }
    }
}
