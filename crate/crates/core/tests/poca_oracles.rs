use mst_core::geometry::{Line3, Vec3, VoxelGrid};
use mst_core::poca::{self, Projection, ReconConfig};
use mst_core::rng;
use mst_core::sim::{self, SimConfig};
use mst_core::{geometry::TargetGeometry, Exec};
use rand::Rng;

/// Coarse grid search over (t, s) with shrinking windows, then alternating
/// point-to-line projections until the parameters stop moving.
fn brute_force(l1: &Line3, l2: &Line3) -> (Vec3, f64) {
    let dist = |t: f64, s: f64| (l1.at(t) - l2.at(s)).norm();
    let (mut bt, mut bs, mut span) = (0.0, 0.0, 400.0);
    for _ in 0..60 {
        let n = 20;
        let (ct, cs) = (bt, bs);
        let mut best = f64::INFINITY;
        for i in 0..=n {
            for j in 0..=n {
                let t = ct - span + 2.0 * span * i as f64 / n as f64;
                let s = cs - span + 2.0 * span * j as f64 / n as f64;
                let d = dist(t, s);
                if d < best {
                    best = d;
                    bt = t;
                    bs = s;
                }
            }
        }
        span *= 0.25;
    }
    for _ in 0..200_000 {
        let s = (l1.at(bt) - l2.point).dot(l2.direction);
        let t = (l2.at(s) - l1.point).dot(l1.direction);
        let done = (t - bt).abs() < 1e-13 && (s - bs).abs() < 1e-13;
        bt = t;
        bs = s;
        if done {
            break;
        }
    }
    ((l1.at(bt) + l2.at(bs)) * 0.5, dist(bt, bs))
}

#[test]
fn closest_approach_matches_grid_search() {
    let mut r = rng::stream(21, "poca-oracle", 0);
    let mut checked = 0;
    while checked < 1000 {
        let p = |r: &mut rng::StreamRng| {
            Vec3::new(
                r.random_range(-50.0..50.0),
                r.random_range(-50.0..50.0),
                r.random_range(-50.0..50.0),
            )
        };
        let a = p(&mut r);
        let b = p(&mut r);
        let da = p(&mut r);
        let db = p(&mut r);
        let (Ok(l1), Ok(l2)) = (Line3::new(a, da), Line3::new(b, db)) else {
            continue;
        };
        if l1.direction.cross(l2.direction).norm() < 0.05 {
            continue;
        }
        let ca = poca::closest_approach(&l1, &l2).unwrap();
        let (mid, d) = brute_force(&l1, &l2);
        assert!(
            (ca.midpoint - mid).norm() < 1e-6,
            "midpoint {:?} vs {:?}",
            ca.midpoint,
            mid
        );
        assert!((ca.distance - d).abs() < 1e-6);
        checked += 1;
    }
}

#[test]
fn fit_matches_normal_equations() {
    let mut r = rng::stream(22, "fit-oracle", 0);
    for _ in 0..200 {
        let zs = [122.5, 67.5, 40.0];
        let hits: Vec<Vec3> = zs
            .iter()
            .map(|&z| Vec3::new(r.random_range(-70.0..70.0), r.random_range(-70.0..70.0), z))
            .collect();
        let line = poca::fit_track(&hits).unwrap();
        assert!(line.direction.z < 0.0);
        // x = a + b z by the 2x2 normal equations.
        let n = hits.len() as f64;
        let sz: f64 = hits.iter().map(|h| h.z).sum();
        let szz: f64 = hits.iter().map(|h| h.z * h.z).sum();
        for axis in 0..2 {
            let sv: f64 = hits.iter().map(|h| h.component(axis)).sum();
            let szv: f64 = hits.iter().map(|h| h.z * h.component(axis)).sum();
            let det = n * szz - sz * sz;
            let slope = (n * szv - sz * sv) / det;
            let icpt = (szz * sv - sz * szv) / det;
            let got_slope = line.direction.component(axis) / line.direction.z;
            assert!((got_slope - slope).abs() < 1e-9);
            let at0 = line.at_z(0.0).unwrap().component(axis);
            assert!((at0 - icpt).abs() < 1e-7);
        }
    }
}

#[test]
fn scattering_angle_is_clamped_arccos() {
    let mut r = rng::stream(23, "angle-oracle", 0);
    for _ in 0..1000 {
        let a = Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), -1.0);
        let b = Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), -1.0);
        let t = poca::scattering_angle(a, b).unwrap();
        assert!((0.0..=std::f64::consts::PI).contains(&t));
        let cross = a.cross(b).norm();
        assert!((t - cross.atan2(a.dot(b))).abs() < 1e-7);
        // arccos of a rounded unit dot product resolves a few 1e-8 rad.
        assert!(poca::scattering_angle(a, a * 3.0).unwrap() < 5e-8);
    }
}

#[test]
fn column_projection_matches_direct_sum() {
    let mut g = VoxelGrid::new(
        Vec3::new(0.0, 0.0, 0.0),
        [7, 5, 6],
        Vec3::new(1.0, 1.0, 1.0),
    )
    .unwrap();
    let mut r = rng::stream(24, "projection-oracle", 0);
    for _ in 0..300 {
        let v = [
            r.random_range(0..7),
            r.random_range(0..5),
            r.random_range(0..6),
        ];
        g.deposit(v, r.random_range(0.0..1e-3), r.random_range(0.01..0.5));
    }
    let raw = poca::project(&g, Projection::ColumnLambda);
    let max = poca::project(&g, Projection::Max);
    for iy in 0..5 {
        for ix in 0..7 {
            let (mut th, mut l, mut m) = (0.0, 0.0, 0.0f64);
            for iz in 0..6 {
                let i = ((iz * 5) + iy) * 7 + ix;
                th += g.theta_sum[i];
                l += g.path_sum[i];
                if g.count[i] > 0 {
                    m = m.max(g.theta_sum[i] / g.path_sum[i]);
                }
            }
            let expect = if l > 0.0 { th / l } else { 0.0 };
            let row = 4 - iy;
            let got = raw.values[row * 7 + ix];
            assert!((got - expect).abs() <= 1e-12 * expect.abs().max(1e-300));
            assert!((max.values[row * 7 + ix] - m).abs() <= 1e-12 * m.max(1e-300));
        }
    }
}

#[test]
fn normalize_round_trip() {
    let mut r = rng::stream(25, "normalize-oracle", 0);
    let values: Vec<f64> = (0..400).map(|_| r.random_range(1e-5..1e-2)).collect();
    let raw = poca::RawMap {
        width: 20,
        height: 20,
        values: values.clone(),
    };
    let img = poca::normalize(&raw).unwrap();
    let back = img.denormalize();
    for (a, b) in values.iter().zip(&back) {
        assert!((a - b).abs() <= 1e-6 * a.abs());
    }
}

#[test]
fn accepted_count_equals_grid_events() {
    let cfg = SimConfig {
        n_events: 5000,
        sigma_mm: 0.2,
        seed: 3,
        ..SimConfig::simulation_preset()
    };
    let run =
        sim::generate_dataset_events(&cfg, &TargetGeometry::empty(), Exec::default()).unwrap();
    let pairs: Vec<_> = run
        .events
        .iter()
        .filter_map(|e| poca::track_pair(e, &cfg.planes_z).ok())
        .collect();
    let (grid, rej) = poca::accumulate(&pairs, &ReconConfig::default(), Exec::default()).unwrap();
    assert_eq!(grid.total_events(), rej.accepted);
    assert_eq!(rej.accepted + rej.rejected(), pairs.len() as u64);
    for i in 0..grid.len() {
        if grid.count[i] > 0 {
            assert!((grid.theta_sum[i] / grid.path_sum[i]).is_finite());
        }
    }
}

#[test]
fn straight_tracks_agree_without_smearing() {
    let cfg = SimConfig {
        n_events: 3000,
        sigma_mm: 0.0,
        seed: 4,
        ..SimConfig::simulation_preset()
    };
    let run =
        sim::generate_dataset_events(&cfg, &TargetGeometry::empty(), Exec::default()).unwrap();
    for e in &run.events {
        let hits: Vec<Vec3> = e
            .hits
            .iter()
            .zip(&cfg.planes_z)
            .map(|(&(x, y), &z)| Vec3::new(x, y, z))
            .collect();
        let a = poca::fit_track(&hits[..2]).unwrap();
        let b = poca::fit_track(&hits[2..]).unwrap();
        let angle = a
            .direction
            .cross(b.direction)
            .norm()
            .atan2(a.direction.dot(b.direction));
        assert!(angle < 1e-9, "event {}: {angle}", e.id);
    }
}
