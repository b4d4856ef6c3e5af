//! Double-difference model tests: differencing structure, weights,
//! cofactor identities, design matrices, and the observation simulator.

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tandem::gnss::{
    dd_cofactor_matrix, dd_direction_matrix, dd_weight_matrices, differencing_matrix,
    gnss_design_matrices, reference_skyplot, simulate_dd_observations, sparse_skyplot,
    GnssConfig, SatelliteGeometry, WeightMode, GPS_L1_WAVELENGTH, GPS_L2_WAVELENGTH,
};
use tandem::Error;

fn equal_pair() -> SatelliteGeometry {
    SatelliteGeometry::from_degrees(&[90.0, 90.0], &[0.0, 90.0]).unwrap()
}

fn equal_weight_geometry(m: usize) -> SatelliteGeometry {
    // Distinct azimuths, all satellites at zenith-adjacent 90° elevation is
    // impossible for direction purposes, so use equal weighting instead.
    let els: Vec<f64> = (0..m).map(|k| 30.0 + k as f64).collect();
    let azs: Vec<f64> = (0..m).map(|k| (k * 360 / m) as f64).collect();
    SatelliteGeometry::from_degrees(&els, &azs).unwrap()
}

#[test]
fn differencing_matrix_two_satellites() {
    let d = differencing_matrix(2, 0).unwrap();
    assert_eq!(d.shape(), (2, 1));
    assert_eq!(d[(0, 0)], -1.0);
    assert_eq!(d[(1, 0)], 1.0);
}

#[test]
fn differencing_matrix_columns_are_pairs() {
    let d = differencing_matrix(5, 2).unwrap();
    assert_eq!(d.shape(), (5, 4));
    // Each column is e_s - e_pivot for s != pivot, in satellite order.
    let expected_cols = [0usize, 1, 3, 4];
    for (col, &s) in expected_cols.iter().enumerate() {
        for row in 0..5 {
            let want = if row == s {
                1.0
            } else if row == 2 {
                -1.0
            } else {
                0.0
            };
            assert_eq!(d[(row, col)], want, "entry ({row},{col})");
        }
    }
}

#[test]
fn differencing_matrix_rejects_bad_pivot() {
    assert!(matches!(
        differencing_matrix(4, 4),
        Err(Error::InvalidArgument(_))
    ));
    assert!(matches!(differencing_matrix(1, 0), Err(Error::InvalidArgument(_))));
}

#[test]
fn cofactor_three_satellites_equal_weights() {
    let geometry = equal_weight_geometry(3);
    let c = dd_cofactor_matrix(&geometry, WeightMode::Equal);
    let expected = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
    assert_relative_eq!(c, expected, epsilon = 1e-12);
}

#[test]
fn cofactor_determinant_five_equal_satellites() {
    let geometry = equal_weight_geometry(5);
    let c = dd_cofactor_matrix(&geometry, WeightMode::Equal);
    assert_relative_eq!(c.determinant(), 5.0, epsilon = 1e-9);
}

#[test]
fn cofactor_determinant_identity_all_sizes() {
    // |DᵀW⁻¹D| = (Σw)/(Πw) for every constellation size and weight mode.
    let full = reference_skyplot();
    for m in 2..=8 {
        let geometry = full.prefix(m).unwrap();
        for mode in [WeightMode::Elevation, WeightMode::Equal] {
            let c = dd_cofactor_matrix(&geometry, mode);
            let w = geometry.weights(mode);
            let expected = w.sum() / w.iter().product::<f64>();
            assert_relative_eq!(c.determinant(), expected, max_relative = 1e-9);
        }
    }
}

#[test]
fn elevation_weights_match_model() {
    let geometry = SatelliteGeometry::from_degrees(&[90.0, 30.0], &[0.0, 120.0]).unwrap();
    let w = geometry.weights(WeightMode::Elevation);
    assert_relative_eq!(w[0], 1.0, epsilon = 1e-12);
    assert_relative_eq!(w[1], 0.25, epsilon = 1e-12);
    let we = geometry.weights(WeightMode::Equal);
    assert_eq!(we, DVector::from_element(2, 1.0));
}

#[test]
fn weight_normalization_constant_five_equal_satellites() {
    // w₀ = [(Σw)/(Πw)]^(1/(2(m−1))) = 5^(1/8) for five equal weights.
    let geometry = equal_weight_geometry(5);
    let c = dd_cofactor_matrix(&geometry, WeightMode::Equal);
    let w0 = c.determinant().powf(1.0 / 8.0);
    assert_relative_eq!(w0, 5f64.powf(0.125), epsilon = 1e-12);
    assert_relative_eq!(w0, 1.2228, epsilon = 5e-4);
}

#[test]
fn dd_weights_two_equal_satellites() {
    let config = GnssConfig::normalized(1, 0.2, 0.002, 0.01).unwrap();
    let geometry = equal_pair();
    let (w_p, w_phi) = dd_weight_matrices(&config, &geometry, WeightMode::Equal).unwrap();
    assert_eq!(w_p.shape(), (1, 1));
    assert_relative_eq!(w_p[(0, 0)], 6.25, epsilon = 1e-12);
    assert_relative_eq!(w_phi[(0, 0)], 6.25e4, max_relative = 1e-12);
}

#[test]
fn dd_weights_scale_with_frequencies() {
    let config = GnssConfig::gps_l1_l2(0.3, 0.003).unwrap();
    let geometry = reference_skyplot().prefix(5).unwrap();
    let (w_p, w_phi) = dd_weight_matrices(&config, &geometry, WeightMode::Elevation).unwrap();
    assert_eq!(w_p.shape(), (8, 8));
    assert_eq!(w_phi.shape(), (8, 8));
    // Block diagonal: the two frequency blocks are identical, and the
    // phase block is (σ_p/σ_φ)² times the code block.
    let ratio = (0.3f64 / 0.003).powi(2);
    for i in 0..4 {
        for j in 0..4 {
            assert_relative_eq!(w_p[(i, j)], w_p[(4 + i, 4 + j)], epsilon = 1e-12);
            assert_relative_eq!(w_phi[(i, j)], ratio * w_p[(i, j)], max_relative = 1e-12);
            assert_eq!(w_p[(i, 4 + j)], 0.0);
        }
    }
}

#[test]
fn direction_rows_are_unit_vector_differences() {
    let geometry = reference_skyplot().prefix(6).unwrap();
    let g = dd_direction_matrix(&geometry);
    assert_eq!(g.shape(), (5, 3));
    let pivot = geometry.pivot();
    let mut row = 0;
    for s in 0..6 {
        if s == pivot {
            continue;
        }
        let expected = geometry.unit_vector(s) - geometry.unit_vector(pivot);
        for c in 0..3 {
            assert_relative_eq!(g[(row, c)], expected[c], epsilon = 1e-12);
        }
        row += 1;
    }
}

#[test]
fn direction_rank_needs_four_satellites() {
    let rank = |m: usize| {
        let g = dd_direction_matrix(&reference_skyplot().prefix(m).unwrap());
        g.svd(false, false)
            .singular_values
            .iter()
            .filter(|s| **s > 1e-10)
            .count()
    };
    assert!(rank(3) < 3);
    assert_eq!(rank(4), 3);
    assert_eq!(rank(6), 3);
}

#[test]
fn design_matrices_shapes_and_structure() {
    let config = GnssConfig::normalized(1, 0.2, 0.002, 0.01).unwrap();
    let geometry = equal_pair();
    let (lambda_bar, a_g, g) = gnss_design_matrices(&config, &geometry);
    assert_eq!(lambda_bar.shape(), (2, 1));
    assert_eq!(lambda_bar[(0, 0)], 0.0);
    assert_relative_eq!(lambda_bar[(1, 0)], 0.2, epsilon = 1e-12);
    assert_eq!(a_g.shape(), (2, 12));
    // Translation columns repeat G on the code and phase rows; rotation
    // columns stay zero.
    for row in 0..2 {
        for c in 0..3 {
            assert_eq!(a_g[(row, c)], g[(0, c)]);
        }
        for c in 3..12 {
            assert_eq!(a_g[(row, c)], 0.0);
        }
    }
}

#[test]
fn design_matrices_dual_frequency_layout() {
    let config = GnssConfig::gps_l1_l2(0.2, 0.002).unwrap();
    let geometry = reference_skyplot().prefix(4).unwrap();
    let (lambda_bar, _, _) = gnss_design_matrices(&config, &geometry);
    assert_eq!(lambda_bar.shape(), (12, 6));
    // Code rows (0..6) all zero.
    for r in 0..6 {
        for c in 0..6 {
            assert_eq!(lambda_bar[(r, c)], 0.0);
        }
    }
    // Phase rows: frequency-major diagonal with the matching wavelength.
    for t in 0..2 {
        let lambda = if t == 0 { GPS_L1_WAVELENGTH } else { GPS_L2_WAVELENGTH };
        for k in 0..3 {
            assert_relative_eq!(lambda_bar[(6 + t * 3 + k, t * 3 + k)], lambda, epsilon = 1e-12);
        }
    }
}

#[test]
fn zero_noise_zero_offset_observations_vanish() {
    let config = GnssConfig::normalized(1, 0.2, 0.002, 0.01).unwrap();
    let geometry = reference_skyplot().prefix(4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let obs = simulate_dd_observations(
        &config,
        &geometry,
        WeightMode::Elevation,
        &Vector3::zeros(),
        &[0, 0, 0],
        0.0,
        &mut rng,
    )
    .unwrap();
    assert_eq!(obs.dd_code, DVector::zeros(3));
    assert_eq!(obs.dd_phase, DVector::zeros(3));
}

#[test]
fn ambiguity_shifts_phase_by_wavelengths() {
    let config = GnssConfig::normalized(1, 0.2, 0.002, 0.01).unwrap();
    let geometry = equal_pair();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let obs = simulate_dd_observations(
        &config,
        &geometry,
        WeightMode::Equal,
        &Vector3::zeros(),
        &[5],
        0.0,
        &mut rng,
    )
    .unwrap();
    assert_eq!(obs.dd_code[0], 0.0);
    assert_relative_eq!(obs.dd_phase[0], 5.0 * 0.2, epsilon = 1e-12);
    let stacked = obs.stacked();
    assert_eq!(stacked.len(), 2);
    assert_relative_eq!(stacked[1], 1.0, epsilon = 1e-12);
}

#[test]
fn simulated_code_noise_covariance_matches_model() {
    // 10⁵ Monte-Carlo draws: the sample covariance of the DD code vector
    // must match W_p⁻¹ = 2σ_p²·C to within a few percent.
    let config = GnssConfig::normalized(1, 0.2, 0.002, 0.01).unwrap();
    let geometry = reference_skyplot().prefix(4).unwrap();
    let mode = WeightMode::Elevation;
    let expected = dd_cofactor_matrix(&geometry, mode) * (2.0 * 0.2 * 0.2);

    let mut rng = ChaCha8Rng::seed_from_u64(20260815);
    let trials = 100_000;
    let md = 3;
    let mut acc = DMatrix::<f64>::zeros(md, md);
    for _ in 0..trials {
        let obs = simulate_dd_observations(
            &config,
            &geometry,
            mode,
            &Vector3::zeros(),
            &[0, 0, 0],
            1.0,
            &mut rng,
        )
        .unwrap();
        acc += &obs.dd_code * obs.dd_code.transpose();
    }
    let sample = acc / trials as f64;
    let err = (&sample - &expected).norm() / expected.norm();
    assert!(
        err < 0.03,
        "sample covariance deviates by {:.2}% from the model",
        err * 100.0
    );
}

#[test]
fn simulation_is_deterministic_for_a_seed() {
    let config = GnssConfig::gps_l1(0.2, 0.002).unwrap();
    let geometry = reference_skyplot().prefix(5).unwrap();
    let draw = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        simulate_dd_observations(
            &config,
            &geometry,
            WeightMode::Elevation,
            &Vector3::new(0.3, -0.2, 0.5),
            &[1, -2, 3, -4],
            1.0,
            &mut rng,
        )
        .unwrap()
    };
    assert_eq!(draw(), draw());
}

#[test]
fn config_validation() {
    assert!(GnssConfig::new(vec![0.2], 0.2, 0.002).is_ok());
    // Phase noise must be smaller than code noise.
    assert!(matches!(
        GnssConfig::new(vec![0.2], 0.002, 0.2),
        Err(Error::InvalidArgument(_))
    ));
    assert!(GnssConfig::new(vec![], 0.2, 0.002).is_err());
    assert!(GnssConfig::new(vec![-0.2], 0.2, 0.002).is_err());

    let config = GnssConfig::gps_l1_l2(0.2, 0.002).unwrap();
    assert_eq!(config.num_frequencies(), 2);
    assert_relative_eq!(config.epsilon(), 1e-4, epsilon = 1e-18);
    assert_relative_eq!(
        config.mean_wavelength(),
        (GPS_L1_WAVELENGTH * GPS_L2_WAVELENGTH).sqrt(),
        epsilon = 1e-15
    );
}

#[test]
fn geometry_validation_and_pivot() {
    let geometry = SatelliteGeometry::from_degrees(&[30.0, 80.0, 55.0], &[0.0, 90.0, 180.0]).unwrap();
    // Default pivot is the highest satellite.
    assert_eq!(geometry.pivot(), 1);
    let repivoted = geometry.clone().with_pivot(2).unwrap();
    assert_eq!(repivoted.pivot(), 2);
    assert!(geometry.clone().with_pivot(3).is_err());

    assert!(SatelliteGeometry::from_degrees(&[30.0], &[0.0]).is_err());
    assert!(SatelliteGeometry::from_degrees(&[30.0, -5.0], &[0.0, 10.0]).is_err());
    assert!(SatelliteGeometry::from_degrees(&[30.0, 91.0], &[0.0, 10.0]).is_err());
    assert!(SatelliteGeometry::from_degrees(&[30.0, 40.0], &[0.0]).is_err());
}

#[test]
fn csv_parses_and_reports_line_errors() {
    let text = "sat_id,elevation_deg,azimuth_deg\nG01,88,0\nG07,30,120\n\nG11,55.5,250\n";
    let geometry = SatelliteGeometry::from_csv_str(text).unwrap();
    assert_eq!(geometry.num_satellites(), 3);
    assert_eq!(geometry.pivot(), 0);
    assert_relative_eq!(geometry.elevations()[2], 55.5f64.to_radians(), epsilon = 1e-12);

    let bad_header = SatelliteGeometry::from_csv_str("sat,el,az\nG01,88,0\n");
    assert!(matches!(bad_header, Err(Error::Parse { line: 1, .. })));

    let bad_value = SatelliteGeometry::from_csv_str(
        "sat_id,elevation_deg,azimuth_deg\nG01,88,0\nG02,high,45\n",
    );
    assert!(matches!(bad_value, Err(Error::Parse { line: 3, .. })));

    let missing_field = SatelliteGeometry::from_csv_str(
        "sat_id,elevation_deg,azimuth_deg\nG01,88\n",
    );
    assert!(matches!(missing_field, Err(Error::Parse { line: 2, .. })));
}

#[test]
fn builtin_skyplots_are_pinned() {
    let reference = reference_skyplot();
    assert_eq!(reference.num_satellites(), 15);
    assert_eq!(reference.pivot(), 0);
    // The first twelve serve the small-constellation sweeps and all sit at
    // or above 40°.
    for s in 0..12 {
        assert!(reference.elevations()[s] >= 40f64.to_radians() - 1e-12);
    }
    let sparse = sparse_skyplot();
    assert_eq!(sparse.num_satellites(), 5);
    assert_relative_eq!(sparse.elevations()[0], 70f64.to_radians(), epsilon = 1e-12);

    let prefix = reference.prefix(6).unwrap();
    assert_eq!(prefix.num_satellites(), 6);
    assert_eq!(prefix.pivot(), 0);
    assert!(reference.prefix(16).is_err());
    assert!(reference.prefix(1).is_err());
}
