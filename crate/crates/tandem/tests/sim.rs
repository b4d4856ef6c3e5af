//! Simulation-harness tests: constellation and keypoint synthesis
//! conventions, coordinate-frame helpers, end-to-end experiment runs with
//! their determinism contract, and the closed-form analysis grid.

use approx::assert_relative_eq;
use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tandem::config::{CliConfig, FixGate, SkyplotChoice};
use tandem::gnss::{reference_skyplot, GnssConfig, WeightMode};
use tandem::lidar::RigidPose;
use tandem::sim::{
    adop_crossing, adop_success_grid, annulus_keypoints, enu_rotation, generate_constellation,
    geodetic_to_ecef, grid_cell, run_experiment, satellite_geometry_for, simulate_keypoints,
    sweep_row_redrawing,
    EpochRecord, EPOCH_CSV_HEADER, GRID_CSV_HEADER, MIN_SEPARATION_DEG,
};
use tandem::Error;

fn unit_from_degrees(el: f64, az: f64) -> Vector3<f64> {
    let (el, az) = (el.to_radians(), az.to_radians());
    Vector3::new(el.cos() * az.sin(), el.cos() * az.cos(), el.sin())
}

#[test]
fn constellation_respects_mask_and_separation() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let geometry = generate_constellation(8, 20.0, &mut rng).unwrap();
    assert_eq!(geometry.num_satellites(), 8);
    let els: Vec<f64> = geometry.elevations().iter().map(|e| e.to_degrees()).collect();
    let azs: Vec<f64> = geometry.azimuths().iter().map(|a| a.to_degrees()).collect();
    for &el in &els {
        assert!((20.0..90.0).contains(&el), "elevation {el} outside mask");
    }
    let min_dot = MIN_SEPARATION_DEG.to_radians().cos();
    for i in 0..8 {
        for j in 0..i {
            let dot = unit_from_degrees(els[i], azs[i]).dot(&unit_from_degrees(els[j], azs[j]));
            assert!(dot <= min_dot + 1e-12, "satellites {i},{j} too close");
        }
    }

    // Same seed reproduces the same constellation.
    let mut rng2 = ChaCha8Rng::seed_from_u64(1);
    let again = generate_constellation(8, 20.0, &mut rng2).unwrap();
    assert_eq!(geometry.elevations(), again.elevations());
    assert_eq!(geometry.azimuths(), again.azimuths());
}

#[test]
fn constellation_guards_reject_impossible_requests() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    assert!(matches!(
        generate_constellation(1, 10.0, &mut rng),
        Err(Error::InvalidArgument(_))
    ));
    assert!(matches!(
        generate_constellation(4, 86.0, &mut rng),
        Err(Error::InvalidArgument(_))
    ));
    // Fifty satellites with 15° separation cannot fit above an 70° mask:
    // the rejection-sampling budget runs out.
    assert!(matches!(
        generate_constellation(50, 70.0, &mut rng),
        Err(Error::DegenerateGeometry(_))
    ));
}

#[test]
fn annulus_keypoints_stay_in_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let points = annulus_keypoints(500, &mut rng);
    assert_eq!(points.len(), 500);
    for p in &points {
        let range = (p[0] * p[0] + p[1] * p[1]).sqrt();
        assert!((5.0..=50.0).contains(&range), "range {range} outside annulus");
        assert!((-2.0..=2.0).contains(&p[2]), "height {} outside band", p[2]);
    }
    let mut rng2 = ChaCha8Rng::seed_from_u64(3);
    assert_eq!(points, annulus_keypoints(500, &mut rng2));
}

#[test]
fn simulated_keypoints_follow_noise_and_outlier_conventions() {
    let truth = RigidPose {
        rotation: *nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), 0.8).matrix(),
        translation: Vector3::new(10.0, -4.0, 2.0),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let layout = annulus_keypoints(40, &mut rng);

    // Zero noise, no outliers: the map side is exactly the transformed layout.
    let clean = simulate_keypoints(&layout, &truth, 0.15, 0.0, 0.0, &mut rng).unwrap();
    assert!(clean.outlier.iter().all(|&o| !o));
    for (y, c) in clean.set.rover().iter().zip(clean.set.reference()) {
        assert_relative_eq!(truth.apply(y), *c, epsilon = 1e-12);
    }

    // Zero noise with outliers: flagged points are displaced by the gross
    // 2–10 m fault, which deliberately ignores the noise scale; the rest
    // stay exact.
    let faulty = simulate_keypoints(&layout, &truth, 0.15, 0.4, 0.0, &mut rng).unwrap();
    let num_outliers = faulty.outlier.iter().filter(|&&o| o).count();
    assert!(num_outliers > 0, "seeded 40% outlier draw produced none");
    for ((y, c), &is_outlier) in faulty
        .set
        .rover()
        .iter()
        .zip(faulty.set.reference())
        .zip(&faulty.outlier)
    {
        let displacement = (c - truth.apply(y)).norm();
        if is_outlier {
            assert!(
                (2.0..=10.0).contains(&displacement),
                "outlier displaced by {displacement}"
            );
        } else {
            assert!(displacement < 1e-12);
        }
    }

    // The noise budget: σ_L is the 3-D RMS match error, drawn as σ_L/√3
    // per axis. Over many points the mean squared 3-D error converges to
    // σ_L².
    let dense: Vec<Vector3<f64>> = annulus_keypoints(20_000, &mut rng);
    let noisy = simulate_keypoints(&dense, &truth, 0.15, 0.0, 1.0, &mut rng).unwrap();
    let mean_sq: f64 = noisy
        .set
        .rover()
        .iter()
        .zip(noisy.set.reference())
        .map(|(y, c)| (c - truth.apply(y)).norm_squared())
        .sum::<f64>()
        / 20_000.0;
    assert_relative_eq!(mean_sq, 0.15 * 0.15, max_relative = 0.05);

    assert!(simulate_keypoints(&layout, &truth, 0.0, 0.0, 1.0, &mut rng).is_err());
    assert!(simulate_keypoints(&layout, &truth, 0.15, 1.0, 1.0, &mut rng).is_err());
}

#[test]
fn frame_helpers_match_wgs84_references() {
    // ENU axes at the equator/prime-meridian and at the north pole.
    let at_origin = enu_rotation(0.0, 0.0);
    let expected = Matrix3::new(
        0.0, 1.0, 0.0, // east
        0.0, 0.0, 1.0, // north
        1.0, 0.0, 0.0, // up
    );
    assert_relative_eq!(at_origin, expected, epsilon = 1e-15);
    // At the north pole the ECEF z axis is straight up.
    let at_pole = enu_rotation(90.0, 0.0);
    assert_relative_eq!(at_pole * Vector3::z(), Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-15);

    // Orthonormal, right-handed at arbitrary sites.
    for &(lat, lon) in &[(45.0, 9.0), (-33.9, 151.2), (69.6, 18.9)] {
        let r = enu_rotation(lat, lon);
        assert_relative_eq!(r * r.transpose(), Matrix3::identity(), epsilon = 1e-14);
        assert_relative_eq!(r.determinant(), 1.0, max_relative = 1e-14);
    }

    // ECEF reference points: equator at two longitudes and the pole.
    assert_relative_eq!(
        geodetic_to_ecef(0.0, 0.0, 0.0),
        Vector3::new(6_378_137.0, 0.0, 0.0),
        epsilon = 1e-6
    );
    assert_relative_eq!(
        geodetic_to_ecef(0.0, 90.0, 0.0),
        Vector3::new(0.0, 6_378_137.0, 0.0),
        epsilon = 1e-6
    );
    assert_relative_eq!(
        geodetic_to_ecef(90.0, 0.0, 0.0),
        Vector3::new(0.0, 0.0, 6_356_752.314_245),
        epsilon = 1e-5
    );
    // Height moves the point along the local up axis.
    let low = geodetic_to_ecef(45.0, 9.0, 0.0);
    let high = geodetic_to_ecef(45.0, 9.0, 100.0);
    let up = enu_rotation(45.0, 9.0).transpose() * Vector3::z();
    assert_relative_eq!(high - low, up * 100.0, epsilon = 1e-6);
}

#[test]
fn skyplot_choice_resolves_to_the_expected_tables() {
    let mut cfg = CliConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    cfg.gnss.skyplot = SkyplotChoice::Reference;
    let reference = satellite_geometry_for(&cfg, 6, &mut rng).unwrap();
    assert_eq!(
        reference.elevations(),
        reference_skyplot().prefix(6).unwrap().elevations()
    );

    cfg.gnss.skyplot = SkyplotChoice::Sparse;
    assert_eq!(satellite_geometry_for(&cfg, 5, &mut rng).unwrap().num_satellites(), 5);
    assert!(satellite_geometry_for(&cfg, 6, &mut rng).is_err());

    cfg.gnss.skyplot = SkyplotChoice::Random;
    cfg.gnss.mask_deg = 25.0;
    let random = satellite_geometry_for(&cfg, 7, &mut rng).unwrap();
    assert!(random
        .elevations()
        .iter()
        .all(|e| e.to_degrees() >= 25.0));
}

#[test]
fn csv_schemas_match_their_headers() {
    assert_eq!(EPOCH_CSV_HEADER.split(',').count(), 10);
    assert_eq!(GRID_CSV_HEADER.split(',').count(), 8);

    let record = EpochRecord {
        epoch: 3,
        enu_error: [0.01, -0.02, 0.03],
        float_enu_error: [0.1, -0.2, 0.3],
        fixed: true,
        correct: false,
        ps: 0.875,
        adop: 0.0625,
        m: 6,
        n: 44,
        precision_gain_enu: [10.0, 10.0, 5.0],
    };
    let row = record.to_csv();
    assert_eq!(row.split(',').count(), 10);
    assert_eq!(row, "3,0.01,-0.02,0.03,1,0,0.875,0.0625,6,44");
}

/// A small but fully noisy run configuration used by several tests.
fn small_run_config() -> CliConfig {
    let mut cfg = CliConfig::default();
    cfg.run.epochs = 15;
    cfg.run.seed = 7;
    cfg.gnss.num_satellites = 6;
    cfg.lidar.num_keypoints = 10;
    cfg.lidar.ransac_iterations = 200;
    cfg
}

#[test]
fn run_experiment_is_deterministic() {
    let cfg = small_run_config();
    let first = run_experiment(&cfg).unwrap();
    let second = run_experiment(&cfg).unwrap();

    let render = |records: &[EpochRecord]| {
        records
            .iter()
            .map(EpochRecord::to_csv)
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(render(&first.records), render(&second.records));
    assert_eq!(
        serde_json::to_string(&first.summary).unwrap(),
        serde_json::to_string(&second.summary).unwrap()
    );
    let bundle_json = |outcome: &tandem::sim::RunOutcome| {
        serde_json::to_string(outcome.first_bundle.as_ref().unwrap()).unwrap()
    };
    assert_eq!(bundle_json(&first), bundle_json(&second));

    // A different seed produces different epochs.
    let mut other = cfg;
    other.run.seed = 8;
    let third = run_experiment(&other).unwrap();
    assert_ne!(render(&first.records), render(&third.records));
}

#[test]
fn zero_noise_run_fixes_every_epoch_exactly() {
    let mut cfg = small_run_config();
    cfg.run.epochs = 5;
    cfg.run.noise_scale = 0.0;
    let outcome = run_experiment(&cfg).unwrap();

    let summary = &outcome.summary;
    assert_eq!(summary.solved_epochs, 5, "failures: {:?}", summary.failures);
    assert_eq!(summary.failed_epochs, 0);
    assert_eq!(summary.accepted_fixes, 5);
    assert_eq!(summary.correct_fixes, 5);
    assert_eq!(summary.fix_rate, 1.0);
    assert_eq!(summary.empirical_success_rate, 1.0);
    assert!(summary.fixed_rmse_3d < 1e-6, "rmse {}", summary.fixed_rmse_3d);
    assert!(summary.float_rmse_3d < 1e-6);
    for record in &outcome.records {
        assert!(record.fixed && record.correct);
        assert!(record.ps > 0.99);
        for g in record.precision_gain_enu {
            assert!(g >= 1.0 - 1e-9);
        }
    }

    // The packaged first epoch carries the truth and solves back to it.
    let bundle = outcome.first_bundle.unwrap();
    let truth = bundle.truth.clone().unwrap();
    let solution = bundle.solve(&Default::default()).unwrap();
    let b = solution.position();
    for i in 0..3 {
        assert_relative_eq!(b[i], truth.position[i], epsilon = 1e-4);
    }
}

#[test]
fn noisy_run_statistics_are_calibrated() {
    let mut cfg = CliConfig::default();
    cfg.run.epochs = 150;
    cfg.run.seed = 20260815;
    cfg.gnss.num_satellites = 6;
    cfg.lidar.ransac_iterations = 300;
    let outcome = run_experiment(&cfg).unwrap();
    let summary = &outcome.summary;

    assert_eq!(summary.solved_epochs, 150, "failures: {:?}", summary.failures);
    assert_eq!(summary.epochs, 150);
    assert_eq!(summary.num_satellites, 6);
    assert_eq!(summary.num_keypoints, 44);
    assert_eq!(summary.num_frequencies, 1);

    // A 44-keypoint tie at σ_L = 0.15 makes single-frequency fixing nearly
    // certain: the gate accepts essentially every epoch and accepted fixes
    // are correct.
    assert!(summary.fix_rate > 0.97, "fix rate {}", summary.fix_rate);
    assert!(
        summary.empirical_success_rate > 0.97,
        "empirical success {}",
        summary.empirical_success_rate
    );
    assert!(summary.mean_bootstrap_ps > 0.99);
    assert!(summary.mean_adop < 0.12, "mean ADOP {}", summary.mean_adop);
    assert!(summary.fixed_rmse_3d < 0.03, "fixed RMSE {}", summary.fixed_rmse_3d);
    assert!(summary.float_rmse_3d < 0.5);
    assert!(summary.fixed_rmse_3d < summary.float_rmse_3d);
    for i in 0..3 {
        assert!(summary.mean_precision_gain_enu[i] > 1.0);
    }

    for record in &outcome.records {
        assert!(record.ps >= 0.0 && record.ps <= 1.0);
        assert!(record.adop > 0.0);
        assert_eq!(record.m, 6);
        assert!(record.n >= 4 && record.n <= 44);
        assert!(!record.correct || record.fixed, "correct implies accepted");
    }
}

#[test]
fn gnss_only_sparse_run_cannot_fix_reliably() {
    let mut cfg = CliConfig::default();
    cfg.run.epochs = 120;
    cfg.run.seed = 99;
    cfg.run.fix_policy = FixGate::Always;
    cfg.gnss.num_satellites = 5;
    cfg.gnss.skyplot = SkyplotChoice::Sparse;
    cfg.gnss.weight_mode = WeightMode::Equal;
    cfg.lidar.enabled = false;
    let outcome = run_experiment(&cfg).unwrap();
    let summary = &outcome.summary;

    assert_eq!(summary.solved_epochs, 120, "failures: {:?}", summary.failures);
    assert_eq!(summary.num_keypoints, 0);
    assert!(outcome.records.iter().all(|r| r.n == 0 && r.fixed));
    // The float model is too weak: forced fixes mostly land on the wrong
    // integers and the formal rate knows it.
    assert!(
        summary.empirical_success_rate < 0.6,
        "empirical success {}",
        summary.empirical_success_rate
    );
    assert!(summary.mean_bootstrap_ps < 0.5);
    assert!(outcome.first_bundle.unwrap().lidar.is_none());
}

#[test]
fn underdetermined_epochs_are_recorded_as_failures() {
    // Three satellites without lidar cannot determine the float position;
    // every epoch fails, the run itself still completes.
    let mut cfg = CliConfig::default();
    cfg.run.epochs = 4;
    cfg.gnss.num_satellites = 3;
    cfg.lidar.enabled = false;
    let outcome = run_experiment(&cfg).unwrap();
    assert_eq!(outcome.summary.solved_epochs, 0);
    assert_eq!(outcome.summary.failed_epochs, 4);
    assert_eq!(outcome.summary.failures.len(), 4);
    assert!(outcome.records.is_empty());
    assert!(outcome.first_bundle.is_none());
    assert!(outcome.summary.fix_rate.is_nan());
    assert!(outcome.summary.float_rmse_3d.is_nan());
    for failure in &outcome.summary.failures {
        assert!(!failure.error.is_empty());
    }
}

#[test]
fn experiment_and_grid_reject_unusable_configs() {
    let mut cfg = CliConfig::default();
    cfg.run.epochs = 0;
    assert!(matches!(run_experiment(&cfg), Err(Error::Config(_))));

    let mut cfg = CliConfig::default();
    cfg.run.trials = 0;
    assert!(matches!(adop_success_grid(&cfg), Err(Error::Config(_))));

    let mut cfg = CliConfig::default();
    cfg.gnss.num_satellites = 1;
    assert!(matches!(run_experiment(&cfg), Err(Error::Config(_))));
}

#[test]
fn analysis_grid_cells_are_ordered_and_self_consistent() {
    let mut cfg = CliConfig::default();
    cfg.run.m_min = 6;
    cfg.run.m_max = 7;
    cfg.run.sigma_l_min = 0.1;
    cfg.run.sigma_l_max = 0.4;
    cfg.run.sigma_l_steps = 4;
    cfg.run.trials = 5;
    cfg.lidar.num_keypoints = 10;
    let cells = adop_success_grid(&cfg).unwrap();
    assert_eq!(cells.len(), 8);

    let sigmas = [0.1, 0.2, 0.3, 0.4];
    for (i, cell) in cells.iter().enumerate() {
        assert_eq!(cell.m, if i < 4 { 6 } else { 7 });
        assert_relative_eq!(cell.sigma_l, sigmas[i % 4], epsilon = 1e-12);
        assert_eq!(cell.trials, 5);
        assert!(cell.min_adop_gl <= cell.mean_adop_gl + 1e-15);
        assert!(cell.mean_adop_gl <= cell.max_adop_gl + 1e-15);
        assert!(cell.mean_ratio > 0.0 && cell.mean_ratio <= 1.0);
        assert!(cell.mean_ps > 0.0 && cell.mean_ps <= 1.0);
        assert_eq!(cell.to_csv().split(',').count(), 8);
    }

    // Cells are a pure function of their coordinates: recomputing one in
    // isolation reproduces the grid entry bit for bit.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    let geometry = satellite_geometry_for(&cfg, 6, &mut rng).unwrap();
    let lone = grid_cell(&cfg, &geometry, cells[2].sigma_l, 2, 5).unwrap();
    assert_eq!(lone.to_csv(), cells[2].to_csv());

    // Crossing extraction: the largest grid σ_L whose cell mean stays at
    // or below the threshold, None when even the smallest σ_L misses it.
    let row: Vec<_> = cells.iter().filter(|c| c.m == 6).collect();
    let above_all = row.iter().map(|c| c.mean_adop_gl).fold(f64::MIN, f64::max) + 1e-9;
    assert_relative_eq!(adop_crossing(&cells, 6, above_all).unwrap(), 0.4, epsilon = 1e-12);
    let below_all = row.iter().map(|c| c.mean_adop_gl).fold(f64::MAX, f64::min) - 1e-9;
    assert!(adop_crossing(&cells, 6, below_all).is_none());
    let mid = row[0].mean_adop_gl;
    let crossing = adop_crossing(&cells, 6, mid).unwrap();
    assert!(row
        .iter()
        .filter(|c| c.mean_adop_gl <= mid)
        .all(|c| c.sigma_l <= crossing));
    assert!(adop_crossing(&cells, 12, 1.0).is_none());
}

#[test]
fn near_coplanar_keypoint_draws_do_not_kill_randomized_runs() {
    // Stream (m = 10, sigma index 4) of this seed reaches a four-point
    // draw at trial 52 whose translational information underflows to zero
    // — a legitimate tail event of the flat annulus, not a modelling
    // error. Long randomized runs must absorb it.
    let degenerate_draw_rng = || {
        let mut rng = ChaCha8Rng::seed_from_u64(20240817);
        rng.set_stream((10u64 << 32) | 4);
        for _ in 0..52 {
            annulus_keypoints(4, &mut rng);
        }
        rng
    };
    let config = GnssConfig::normalized(1, 0.2, 0.002, 0.01).unwrap();

    // With enough satellites the closed forms stay computable: the lidar
    // contributes nothing and the ratio collapses to 1.
    let mut rng = degenerate_draw_rng();
    let geometry = reference_skyplot().prefix(10).unwrap();
    let row =
        sweep_row_redrawing(&config, &geometry, WeightMode::Elevation, 4, 0.3, &mut rng).unwrap();
    assert!(row.ratio > 0.999, "degenerate draw should yield ratio ~ 1, got {}", row.ratio);

    // Under a two-satellite constellation the same draw leaves the
    // combined position model rank-deficient; the helper redraws instead
    // of propagating the error, and the replacement behaves normally.
    let mut rng = degenerate_draw_rng();
    let geometry = reference_skyplot().prefix(2).unwrap();
    let row =
        sweep_row_redrawing(&config, &geometry, WeightMode::Elevation, 4, 0.3, &mut rng).unwrap();
    assert!(row.ratio > 0.0 && row.ratio < 0.999, "redrawn layout should aid the solution");

    // The original failure: this grid cell died wholesale on the draw.
    let mut cfg = CliConfig::default();
    cfg.run.seed = 20240817;
    cfg.lidar.num_keypoints = 4;
    let geometry = reference_skyplot().prefix(10).unwrap();
    let cell = grid_cell(&cfg, &geometry, 0.17, 4, 100).unwrap();
    assert!(cell.mean_ratio > 0.0 && cell.mean_ratio <= 1.0);
    assert!(cell.mean_adop_gl.is_finite());
}
