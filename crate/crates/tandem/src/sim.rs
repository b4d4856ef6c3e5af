//! Seeded Monte-Carlo harness: constellation and keypoint synthesis, the
//! end-to-end epoch pipeline (register → fuse → fix), and grid sweeps of
//! the closed-form analysis.
//!
//! Reproducibility contract: every run is driven by one `ChaCha8Rng` seed.
//! Stream 0 carries run-level draws (random constellation, truth yaw);
//! epoch `e` draws from stream `e + 1`; grid cells use a stream derived
//! from their coordinates. Identical configuration and seed therefore
//! reproduce identical output bytes, and epochs can be recomputed in
//! isolation.

use nalgebra::{DMatrix, Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::adop::{self, LidarLayout, Scenario};
use crate::ambiguity::{self, AmbiguityProblem, FixPolicy};
use crate::config::{CliConfig, FixGate, SkyplotChoice};
use crate::fusion::{
    self, EpochBundle, EstimatorOptions, GnssEpochData, GnssSection, KeypointPair,
    LidarEpochData, LidarSection, SiteSection, TruthSection,
};
use crate::gnss::{self, SatelliteGeometry, WeightMode};
use crate::lidar::{self, KeypointSet, RigidPose};
use crate::{Error, Result};

pub use crate::frame::{enu_rotation, geodetic_to_ecef};

/// Minimum angular separation between simulated satellites, degrees.
pub const MIN_SEPARATION_DEG: f64 = 15.0;

/// Keypoint annulus: radius range (metres) and height band (metres).
const ANNULUS_RADIUS: (f64, f64) = (5.0, 50.0);
const ANNULUS_HEIGHT: (f64, f64) = (-2.0, 2.0);

/// Gross-outlier displacement magnitude range, metres.
const OUTLIER_RANGE: (f64, f64) = (2.0, 10.0);

/// Per-epoch CSV schema.
pub const EPOCH_CSV_HEADER: &str = "epoch,e_err,n_err,u_err,fixed,correct,ps,adop,m,n";

/// Grid-sweep CSV schema.
pub const GRID_CSV_HEADER: &str =
    "m,sigma_l,trials,mean_adop_gl,min_adop_gl,max_adop_gl,mean_ratio,mean_ps";

/// Draws a random constellation above the elevation mask with at least
/// [`MIN_SEPARATION_DEG`] between any two satellites (rejection sampling).
pub fn generate_constellation<R: Rng + ?Sized>(
    m: usize,
    mask_deg: f64,
    rng: &mut R,
) -> Result<SatelliteGeometry> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "a constellation needs at least 2 satellites, got {m}"
        )));
    }
    if !(0.0..=85.0).contains(&mask_deg) {
        return Err(Error::InvalidArgument(format!(
            "elevation mask {mask_deg}° outside [0°, 85°]"
        )));
    }
    let min_dot = MIN_SEPARATION_DEG.to_radians().cos();
    let mut elevations = Vec::with_capacity(m);
    let mut azimuths = Vec::with_capacity(m);
    let mut units: Vec<Vector3<f64>> = Vec::with_capacity(m);
    let mut attempts = 0usize;
    let budget = 10_000 * m;
    while units.len() < m {
        attempts += 1;
        if attempts > budget {
            return Err(Error::DegenerateGeometry(format!(
                "could not place {m} satellites above {mask_deg}° with \
                 {MIN_SEPARATION_DEG}° separation after {budget} attempts"
            )));
        }
        let el = rng.random_range(mask_deg..90.0f64).to_radians();
        let az = rng.random_range(0.0..360.0f64).to_radians();
        let u = Vector3::new(el.cos() * az.sin(), el.cos() * az.cos(), el.sin());
        if units.iter().any(|v| v.dot(&u) > min_dot) {
            continue;
        }
        elevations.push(el.to_degrees());
        azimuths.push(az.to_degrees());
        units.push(u);
    }
    SatelliteGeometry::from_degrees(&elevations, &azimuths)
}

/// Draws `n` sensor-frame keypoints on the standard annulus: range
/// U(5 m, 50 m), bearing U(0, 2π), height U(−2 m, 2 m).
pub fn annulus_keypoints<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Vector3<f64>> {
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let r: f64 = rng.random_range(ANNULUS_RADIUS.0..ANNULUS_RADIUS.1);
        let az: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let z: f64 = rng.random_range(ANNULUS_HEIGHT.0..ANNULUS_HEIGHT.1);
        points.push(Vector3::new(r * az.cos(), r * az.sin(), z));
    }
    points
}

/// Simulated keypoint correspondences plus the ground-truth outlier mask.
#[derive(Debug, Clone)]
pub struct SimulatedKeypoints {
    pub set: KeypointSet,
    pub outlier: Vec<bool>,
}

/// Builds noisy correspondences from a sensor-frame layout and the truth
/// pose. The map-side points receive isotropic Gaussian noise of
/// `σ_L/√3 · noise_scale` per axis (σ_L is the 3-D RMS match error);
/// outliers additionally receive a uniform 2–10 m displacement, which is a
/// data fault and is deliberately *not* scaled by `noise_scale`.
pub fn simulate_keypoints<R: Rng + ?Sized>(
    layout: &[Vector3<f64>],
    truth: &RigidPose,
    sigma_l: f64,
    outlier_fraction: f64,
    noise_scale: f64,
    rng: &mut R,
) -> Result<SimulatedKeypoints> {
    if !(sigma_l > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sigma_l = {sigma_l} must be > 0"
        )));
    }
    if !(0.0..1.0).contains(&outlier_fraction) {
        return Err(Error::InvalidArgument(format!(
            "outlier_fraction = {outlier_fraction} outside [0, 1)"
        )));
    }
    let per_axis = Normal::new(0.0, sigma_l / 3f64.sqrt() * noise_scale)
        .map_err(|e| Error::InvalidArgument(format!("keypoint noise model: {e}")))?;
    let mut rover = Vec::with_capacity(layout.len());
    let mut reference = Vec::with_capacity(layout.len());
    let mut outlier = Vec::with_capacity(layout.len());
    for y in layout {
        let noise = Vector3::new(
            per_axis.sample(rng),
            per_axis.sample(rng),
            per_axis.sample(rng),
        );
        let mut c = truth.apply(y) + noise;
        let is_outlier = rng.random_range(0.0..1.0) < outlier_fraction;
        if is_outlier {
            let dir: [f64; 3] = UnitSphere.sample(rng);
            let magnitude: f64 = rng.random_range(OUTLIER_RANGE.0..OUTLIER_RANGE.1);
            c += Vector3::new(dir[0], dir[1], dir[2]) * magnitude;
        }
        rover.push(*y);
        reference.push(c);
        outlier.push(is_outlier);
    }
    Ok(SimulatedKeypoints {
        set: KeypointSet::new(rover, reference, sigma_l)?,
        outlier,
    })
}

/// Resolves the configured skyplot into a concrete constellation of
/// `num_satellites`. Random constellations consume the given RNG.
pub fn satellite_geometry_for<R: Rng + ?Sized>(
    cfg: &CliConfig,
    num_satellites: usize,
    rng: &mut R,
) -> Result<SatelliteGeometry> {
    match cfg.gnss.skyplot {
        SkyplotChoice::Reference => gnss::reference_skyplot().prefix(num_satellites),
        SkyplotChoice::Sparse => gnss::sparse_skyplot().prefix(num_satellites),
        SkyplotChoice::Random => generate_constellation(num_satellites, cfg.gnss.mask_deg, rng),
    }
}

/// One simulated epoch's outcome.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Reported-position error in local ENU, metres.
    pub enu_error: [f64; 3],
    /// Float-position error in local ENU, metres.
    pub float_enu_error: [f64; 3],
    /// Whether the integer fix was accepted.
    pub fixed: bool,
    /// Whether the accepted fix equals the simulated truth.
    pub correct: bool,
    /// Bootstrapped success rate of the epoch's float covariance.
    pub ps: f64,
    /// ADOP of the epoch's float covariance, cycles.
    pub adop: f64,
    /// Satellites used.
    pub m: usize,
    /// Keypoints used after outlier rejection (0 without lidar).
    pub n: usize,
    /// Formal per-axis gain √(Q_float/Q_fixed) in ENU.
    pub precision_gain_enu: [f64; 3],
}

impl EpochRecord {
    /// Renders the row with the [`EPOCH_CSV_HEADER`] columns.
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            adop::fmt_cell(self.enu_error[0]),
            adop::fmt_cell(self.enu_error[1]),
            adop::fmt_cell(self.enu_error[2]),
            self.fixed as u8,
            self.correct as u8,
            adop::fmt_cell(self.ps),
            adop::fmt_cell(self.adop),
            self.m,
            self.n,
        )
    }
}

/// An epoch that failed to produce a solution; recorded, never fatal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailureRecord {
    pub epoch: usize,
    pub error: String,
}

/// Aggregate statistics over a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub epochs: usize,
    pub solved_epochs: usize,
    pub failed_epochs: usize,
    pub num_satellites: usize,
    pub num_frequencies: usize,
    pub num_keypoints: usize,
    /// Fixes accepted by the gate / solved epochs.
    pub fix_rate: f64,
    /// Accepted fixes that match the simulated truth / solved epochs.
    pub empirical_success_rate: f64,
    pub accepted_fixes: usize,
    pub correct_fixes: usize,
    pub mean_bootstrap_ps: f64,
    pub mean_adop: f64,
    pub float_rmse_enu: [f64; 3],
    pub float_rmse_3d: f64,
    /// RMSE of the fixed position over accepted epochs.
    pub fixed_rmse_enu: [f64; 3],
    pub fixed_rmse_3d: f64,
    /// RMSE of the reported position (fixed when accepted, float
    /// otherwise) over all solved epochs.
    pub reported_rmse_3d: f64,
    pub mean_precision_gain_enu: [f64; 3],
    pub failures: Vec<FailureRecord>,
}

/// Everything a simulation run produces.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub records: Vec<EpochRecord>,
    pub summary: RunSummary,
    /// The first epoch, packaged as a self-contained bundle.
    pub first_bundle: Option<EpochBundle>,
}

/// Runs the configured Monte-Carlo experiment.
pub fn run_experiment(cfg: &CliConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    if cfg.run.epochs == 0 {
        return Err(Error::Config(
            "run.epochs = 0; a simulation needs at least one epoch".into(),
        ));
    }
    let gnss_config = cfg.gnss_config()?;
    let policy = match cfg.run.fix_policy {
        FixGate::Threshold => FixPolicy::Threshold(cfg.run.fix_threshold),
        FixGate::Always => FixPolicy::Always,
    };

    // Run-level draws come from stream 0.
    let mut run_rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    let geometry = satellite_geometry_for(cfg, cfg.gnss.num_satellites, &mut run_rng)?;
    let yaw: f64 = run_rng.random_range(0.0..std::f64::consts::TAU);

    let b_true = geodetic_to_ecef(cfg.run.lat_deg, cfg.run.lon_deg, 0.0);
    let r_e2n = enu_rotation(cfg.run.lat_deg, cfg.run.lon_deg);
    let truth_pose = RigidPose {
        rotation: r_e2n.transpose() * Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).into_inner(),
        translation: b_true,
    };

    let mut records = Vec::with_capacity(cfg.run.epochs);
    let mut failures = Vec::new();
    let mut first_bundle = None;

    for epoch in 0..cfg.run.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
        rng.set_stream(epoch as u64 + 1);
        match simulate_epoch(
            cfg,
            &gnss_config,
            &geometry,
            &truth_pose,
            &r_e2n,
            policy,
            epoch,
            &mut rng,
        ) {
            Ok((record, bundle)) => {
                if first_bundle.is_none() {
                    first_bundle = Some(bundle);
                }
                records.push(record);
            }
            Err(e) => failures.push(FailureRecord {
                epoch,
                error: e.to_string(),
            }),
        }
    }

    let summary = summarize(cfg, &gnss_config, &records, failures);
    Ok(RunOutcome {
        records,
        summary,
        first_bundle,
    })
}

/// Simulates and solves one epoch; also packages it as a bundle.
#[allow(clippy::too_many_arguments)]
fn simulate_epoch<R: Rng + ?Sized>(
    cfg: &CliConfig,
    gnss_config: &gnss::GnssConfig,
    geometry: &SatelliteGeometry,
    truth_pose: &RigidPose,
    r_e2n: &Matrix3<f64>,
    policy: FixPolicy,
    epoch: usize,
    rng: &mut R,
) -> Result<(EpochRecord, EpochBundle)> {
    let f = gnss_config.num_frequencies();
    let md = geometry.num_satellites() - 1;
    let b_true = truth_pose.translation;

    // Lidar side: layout, noisy correspondences, robust registration.
    let lidar_inputs = if cfg.lidar.enabled {
        let layout = annulus_keypoints(cfg.lidar.num_keypoints, rng);
        let simulated = simulate_keypoints(
            &layout,
            truth_pose,
            cfg.lidar.sigma_l,
            cfg.lidar.outlier_fraction,
            cfg.run.noise_scale,
            rng,
        )?;
        let ransac_seed: u64 = rng.random();
        let report = lidar::ransac_register(
            &simulated.set,
            cfg.lidar.ransac_threshold,
            cfg.lidar.ransac_iterations,
            ransac_seed,
        )?;
        Some((simulated, report))
    } else {
        None
    };

    // Truth integers and linearization point.
    let mut true_ambiguities = Vec::with_capacity(f * md);
    for _ in 0..f * md {
        true_ambiguities.push(rng.random_range(-100..=100i64));
    }
    let position_noise = Normal::new(0.0, cfg.run.noise_scale)
        .map_err(|e| Error::InvalidArgument(format!("position noise model: {e}")))?;
    let b0 = b_true
        + Vector3::new(
            position_noise.sample(rng),
            position_noise.sample(rng),
            position_noise.sample(rng),
        );
    let offset_enu = r_e2n * (b_true - b0);

    let observations = gnss::simulate_dd_observations(
        gnss_config,
        geometry,
        cfg.gnss.weight_mode,
        &offset_enu,
        &true_ambiguities,
        cfg.run.noise_scale,
        rng,
    )?;

    let gnss_data = GnssEpochData {
        config: gnss_config.clone(),
        geometry: geometry.clone(),
        weight_mode: cfg.gnss.weight_mode,
        observations: observations.clone(),
        approx_position: b0,
        frame_rotation: r_e2n.transpose(),
    };

    // Solve the epoch.
    let options = EstimatorOptions::default();
    let (float, inliers_used) = match &lidar_inputs {
        Some((simulated, report)) => {
            // The registration's own residual scatter — not the configured
            // truth value — weights the lidar block, as a live pipeline
            // would. The 10 µm floor keeps a zero-noise run solvable: far
            // below any real ranging accuracy, yet large enough that the
            // joint normal matrix stays clear of the rank guard.
            let sigma_measured = report.sigma_l.max(1e-5);
            let inliers = simulated
                .set
                .subset(&report.inlier_indices, sigma_measured)?;
            let n = inliers.len();
            let lidar_data = LidarEpochData {
                keypoints: inliers,
                initial_pose: Some(report.pose()),
            };
            (fusion::solve_integrated(&gnss_data, &lidar_data, &options)?, n)
        }
        None => (fusion::solve_gnss_only(&gnss_data, &options)?, 0),
    };

    // Fix the ambiguities.
    let problem = AmbiguityProblem::from_float_solution(&float)?;
    let outcome = ambiguity::resolve(&problem, policy)?;
    let adop_value = adop::adop(&problem.q_aa)?;

    let float_position = float.position();
    let reported_position = if outcome.accepted {
        let g = outcome
            .fixed_rest
            .as_ref()
            .expect("accepted fix carries conditioned parameters");
        Vector3::new(g[0], g[1], g[2])
    } else {
        float_position
    };
    let correct = outcome.accepted && outcome.fixed == true_ambiguities;

    // Formal float→fixed gain, in ENU. The conditioned covariance does not
    // depend on the integer values, so it is defined whether or not the
    // gate accepted.
    let (_, q_fixed_rest) = ambiguity::fix_and_backsubstitute(&problem, &outcome.fixed)?;
    let gain = precision_gain_enu(&float.rest_covariance(), &q_fixed_rest, r_e2n);

    let enu_error = r_e2n * (reported_position - b_true);
    let float_enu_error = r_e2n * (float_position - b_true);

    let record = EpochRecord {
        epoch,
        enu_error: [enu_error[0], enu_error[1], enu_error[2]],
        float_enu_error: [float_enu_error[0], float_enu_error[1], float_enu_error[2]],
        fixed: outcome.accepted,
        correct,
        ps: outcome.success_rate,
        adop: adop_value,
        m: geometry.num_satellites(),
        n: inliers_used,
        precision_gain_enu: gain,
    };

    let bundle = EpochBundle {
        site: SiteSection {
            lat_deg: cfg.run.lat_deg,
            lon_deg: cfg.run.lon_deg,
            approx_position: [b0[0], b0[1], b0[2]],
        },
        gnss: Some(GnssSection {
            wavelengths: gnss_config.wavelengths().to_vec(),
            sigma_p: gnss_config.sigma_p(),
            sigma_phi: gnss_config.sigma_phi(),
            weight_mode: match cfg.gnss.weight_mode {
                WeightMode::Elevation => "elevation".to_string(),
                WeightMode::Equal => "equal".to_string(),
            },
            elevations_deg: geometry.elevations().iter().map(|e| e.to_degrees()).collect(),
            azimuths_deg: geometry.azimuths().iter().map(|a| a.to_degrees()).collect(),
            pivot: geometry.pivot(),
            dd_code: observations.dd_code.iter().cloned().collect(),
            dd_phase: observations.dd_phase.iter().cloned().collect(),
        }),
        lidar: lidar_inputs.as_ref().map(|(simulated, _)| LidarSection {
            sigma_l: cfg.lidar.sigma_l,
            keypoints: simulated
                .set
                .rover()
                .iter()
                .zip(simulated.set.reference())
                .map(|(y, c)| KeypointPair {
                    rover: [y[0], y[1], y[2]],
                    reference: [c[0], c[1], c[2]],
                })
                .collect(),
        }),
        truth: Some(TruthSection {
            position: [b_true[0], b_true[1], b_true[2]],
            ambiguities: true_ambiguities.clone(),
        }),
    };

    Ok((record, bundle))
}

/// Per-axis formal gain √(diag Q_float / diag Q_fixed) of the position
/// block, expressed in ENU. Equals 1 per axis when fixing the ambiguities
/// does not inform the position.
fn precision_gain_enu(
    q_float_rest: &DMatrix<f64>,
    q_fixed_rest: &DMatrix<f64>,
    r_e2n: &Matrix3<f64>,
) -> [f64; 3] {
    let pos = |q: &DMatrix<f64>| {
        let block = Matrix3::from_iterator(q.view((0, 0), (3, 3)).iter().cloned());
        r_e2n * block * r_e2n.transpose()
    };
    let qf = pos(q_float_rest);
    let qx = pos(q_fixed_rest);
    let mut gain = [1.0; 3];
    for (i, g) in gain.iter_mut().enumerate() {
        if qx[(i, i)] > 0.0 && qf[(i, i)] > 0.0 {
            *g = (qf[(i, i)] / qx[(i, i)]).sqrt();
        }
    }
    gain
}

fn summarize(
    cfg: &CliConfig,
    gnss_config: &gnss::GnssConfig,
    records: &[EpochRecord],
    failures: Vec<FailureRecord>,
) -> RunSummary {
    let solved = records.len();
    let solved_f = solved as f64;
    let accepted: Vec<&EpochRecord> = records.iter().filter(|r| r.fixed).collect();
    let correct = records.iter().filter(|r| r.correct).count();

    let rmse_axis = |values: &mut dyn Iterator<Item = [f64; 3]>, count: usize| -> [f64; 3] {
        let mut acc = [0.0f64; 3];
        for v in values {
            for i in 0..3 {
                acc[i] += v[i] * v[i];
            }
        }
        if count == 0 {
            [f64::NAN; 3]
        } else {
            [0, 1, 2].map(|i| (acc[i] / count as f64).sqrt())
        }
    };
    let rmse_3d = |axes: &[f64; 3]| {
        (axes[0] * axes[0] + axes[1] * axes[1] + axes[2] * axes[2]).sqrt()
    };

    let float_rmse_enu = rmse_axis(&mut records.iter().map(|r| r.float_enu_error), solved);
    let fixed_rmse_enu = rmse_axis(&mut accepted.iter().map(|r| r.enu_error), accepted.len());
    let reported_rmse_enu = rmse_axis(&mut records.iter().map(|r| r.enu_error), solved);

    let mean = |it: &mut dyn Iterator<Item = f64>, count: usize| {
        if count == 0 {
            f64::NAN
        } else {
            it.sum::<f64>() / count as f64
        }
    };
    let mean_gain = {
        let mut acc = [0.0f64; 3];
        for r in records {
            for i in 0..3 {
                acc[i] += r.precision_gain_enu[i];
            }
        }
        if solved == 0 {
            [f64::NAN; 3]
        } else {
            [0, 1, 2].map(|i| acc[i] / solved_f)
        }
    };

    RunSummary {
        seed: cfg.run.seed,
        epochs: cfg.run.epochs,
        solved_epochs: solved,
        failed_epochs: failures.len(),
        num_satellites: cfg.gnss.num_satellites,
        num_frequencies: gnss_config.num_frequencies(),
        num_keypoints: if cfg.lidar.enabled {
            cfg.lidar.num_keypoints
        } else {
            0
        },
        fix_rate: if solved == 0 {
            f64::NAN
        } else {
            accepted.len() as f64 / solved_f
        },
        empirical_success_rate: if solved == 0 {
            f64::NAN
        } else {
            correct as f64 / solved_f
        },
        accepted_fixes: accepted.len(),
        correct_fixes: correct,
        mean_bootstrap_ps: mean(&mut records.iter().map(|r| r.ps), solved),
        mean_adop: mean(&mut records.iter().map(|r| r.adop), solved),
        float_rmse_enu,
        float_rmse_3d: rmse_3d(&float_rmse_enu),
        fixed_rmse_enu,
        fixed_rmse_3d: rmse_3d(&fixed_rmse_enu),
        reported_rmse_3d: rmse_3d(&reported_rmse_enu),
        mean_precision_gain_enu: mean_gain,
        failures,
    }
}

// ---------------------------------------------------------------------------
// Closed-form analysis sweeps over random keypoint placements.
// ---------------------------------------------------------------------------

/// One cell of the (m, σ_L) analysis grid: closed-form integrated ADOP
/// statistics over `trials` independent keypoint placements.
#[derive(Debug, Clone)]
pub struct GridCell {
    pub m: usize,
    pub sigma_l: f64,
    pub trials: usize,
    pub mean_adop_gl: f64,
    pub min_adop_gl: f64,
    pub max_adop_gl: f64,
    pub mean_ratio: f64,
    pub mean_ps: f64,
}

impl GridCell {
    /// Renders the row with the [`GRID_CSV_HEADER`] columns.
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.m,
            adop::fmt_cell(self.sigma_l),
            self.trials,
            adop::fmt_cell(self.mean_adop_gl),
            adop::fmt_cell(self.min_adop_gl),
            adop::fmt_cell(self.max_adop_gl),
            adop::fmt_cell(self.mean_ratio),
            adop::fmt_cell(self.mean_ps),
        )
    }
}

/// Statistics of one grid cell: `trials` annulus placements of
/// `num_keypoints` points at noise `sigma_l`, evaluated in closed form.
/// The RNG stream is derived from the cell coordinates so cells are
/// independent of evaluation order.
/// Draws an annulus layout and evaluates the sweep row for it, redrawing
/// when the draw is analytically unusable (a near-coplanar layout under a
/// small constellation leaves the combined position model rank-deficient).
/// Such draws are rare but expected over long randomized runs; redrawing
/// keeps them alive while staying deterministic for a fixed seed.
pub fn sweep_row_redrawing<R: Rng + ?Sized>(
    config: &gnss::GnssConfig,
    geometry: &SatelliteGeometry,
    weight_mode: WeightMode,
    num_keypoints: usize,
    sigma_l: f64,
    rng: &mut R,
) -> Result<adop::SweepRow> {
    const ATTEMPTS: usize = 32;
    for attempt in 1..=ATTEMPTS {
        let layout = LidarLayout::new(annulus_keypoints(num_keypoints, rng), sigma_l)?;
        let scenario = Scenario {
            config: config.clone(),
            geometry: geometry.clone(),
            weight_mode,
            lidar: Some(layout),
        };
        match adop::sweep_row(&scenario) {
            Ok(row) => return Ok(row),
            Err(Error::DegenerateGeometry(_) | Error::RankDeficient(_)) if attempt < ATTEMPTS => {
                continue;
            }
            Err(e) => return Err(e),
        }
    }
    unreachable!("the final attempt either returns the row or its error")
}

pub fn grid_cell(
    cfg: &CliConfig,
    geometry: &SatelliteGeometry,
    sigma_l: f64,
    sigma_index: usize,
    trials: usize,
) -> Result<GridCell> {
    let m = geometry.num_satellites();
    let config = cfg.gnss_config()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    rng.set_stream(((m as u64) << 32) | sigma_index as u64);

    let mut sum_adop = 0.0;
    let mut min_adop = f64::MAX;
    let mut max_adop = f64::MIN;
    let mut sum_ratio = 0.0;
    let mut sum_ps = 0.0;
    for _ in 0..trials {
        let row = sweep_row_redrawing(
            &config,
            geometry,
            cfg.gnss.weight_mode,
            cfg.lidar.num_keypoints,
            sigma_l,
            &mut rng,
        )?;
        sum_adop += row.adop_gl;
        min_adop = min_adop.min(row.adop_gl);
        max_adop = max_adop.max(row.adop_gl);
        sum_ratio += row.ratio;
        sum_ps += row.ps;
    }
    let t = trials as f64;
    Ok(GridCell {
        m,
        sigma_l,
        trials,
        mean_adop_gl: sum_adop / t,
        min_adop_gl: min_adop,
        max_adop_gl: max_adop,
        mean_ratio: sum_ratio / t,
        mean_ps: sum_ps / t,
    })
}

/// Evaluates the full (m, σ_L) grid described by the configuration.
pub fn adop_success_grid(cfg: &CliConfig) -> Result<Vec<GridCell>> {
    cfg.validate()?;
    if cfg.run.trials == 0 {
        return Err(Error::Config(
            "run.trials = 0; the grid needs at least one placement per cell".into(),
        ));
    }
    let steps = cfg.run.sigma_l_steps;
    let mut cells = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    for m in cfg.run.m_min..=cfg.run.m_max {
        let geometry = satellite_geometry_for(cfg, m, &mut rng)?;
        for k in 0..steps {
            let sigma_l = if steps == 1 {
                cfg.run.sigma_l_min
            } else {
                cfg.run.sigma_l_min
                    + (cfg.run.sigma_l_max - cfg.run.sigma_l_min) * k as f64 / (steps - 1) as f64
            };
            cells.push(grid_cell(cfg, &geometry, sigma_l, k, cfg.run.trials)?);
        }
    }
    Ok(cells)
}

/// Largest grid σ_L whose cell statistic stays at or below `threshold`
/// along the row for constellation size `m` — the figure-style "crossing"
/// of an ADOP level. Returns None when already above threshold at the
/// smallest σ_L.
pub fn adop_crossing(cells: &[GridCell], m: usize, threshold: f64) -> Option<f64> {
    let mut best: Option<f64> = None;
    for cell in cells.iter().filter(|c| c.m == m) {
        if cell.mean_adop_gl <= threshold {
            best = Some(best.map_or(cell.sigma_l, |b: f64| b.max(cell.sigma_l)));
        }
    }
    best
}
