//! Mixed-model weighted least squares fusing DD GNSS and lidar keypoint
//! observations.
//!
//! Both sensors are written as implicit condition equations `f(x, y) = 0`
//! in the unknowns `x = [aᵀ, bᵀ, rᵀ]ᵀ` (DD ambiguities, position, vectorized
//! rotation) and the measurements `y`. Linearizing at `(x₀, y)` gives
//!
//! ```text
//! A·Δx + Bᵀ·e + w = 0,     w = f(x₀, y)
//! ```
//!
//! whose weighted least-squares increment and covariance are
//!
//! ```text
//! Δx̂ = −[AᵀMA]⁻¹AᵀM·w,    Q_x̂x̂ = [AᵀMA]⁻¹,    M = [BᵀW⁻¹B]⁻¹.
//! ```
//!
//! The model is exactly linear in `x` (position and vec(R) enter linearly;
//! ambiguities are linear by construction), so iteration converges as soon
//! as the measurement Jacobian `B_Lᵀ = I ⊗ R̂` stops moving — two or three
//! passes in practice. The nine rotation entries are estimated without an
//! orthonormality constraint; [`FloatSolution::rotation_matrix`] exposes
//! the raw estimate and callers project it when a proper rotation is
//! needed.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::frame::enu_rotation;
use crate::gnss::{
    self, DdObservations, GnssConfig, SatelliteGeometry, WeightMode,
};
use crate::lidar::{self, KeypointSet, RigidPose};
use crate::{Error, Result};

/// GNSS inputs for one epoch.
#[derive(Debug, Clone)]
pub struct GnssEpochData {
    pub config: GnssConfig,
    pub geometry: SatelliteGeometry,
    pub weight_mode: WeightMode,
    pub observations: DdObservations,
    /// Linearization point of the DD observations, working frame.
    pub approx_position: Vector3<f64>,
    /// Rotation taking local ENU direction vectors into the working frame
    /// (identity when the solve is carried out directly in ENU).
    pub frame_rotation: Matrix3<f64>,
}

impl GnssEpochData {
    /// DD direction matrix expressed in the working frame.
    fn direction_matrix(&self) -> DMatrix<f64> {
        let rt = self.frame_rotation.transpose();
        gnss::dd_direction_matrix(&self.geometry) * DMatrix::from_column_slice(3, 3, rt.as_slice())
    }
}

/// Lidar inputs for one epoch.
#[derive(Debug, Clone)]
pub struct LidarEpochData {
    pub keypoints: KeypointSet,
    /// Optional linearization pose; when absent the closed-form rigid
    /// alignment of the correspondences is used.
    pub initial_pose: Option<RigidPose>,
}

/// One linearization of the mixed model.
///
/// `design` is `A`, `condition_transpose` is `Bᵀ = blkdiag(I_n⊗R̂, −I)`,
/// `weight` is `W = blkdiag(W_L, W_p, W_φ)` with its exact inverse kept
/// alongside, and `misclosure` is `w = f(x₀, y)`. Rows are ordered lidar,
/// then DD code, then DD phase.
#[derive(Debug, Clone)]
pub struct MixedModel {
    pub design: DMatrix<f64>,
    pub condition_transpose: DMatrix<f64>,
    pub weight: DMatrix<f64>,
    pub weight_inverse: DMatrix<f64>,
    pub misclosure: DVector<f64>,
}

impl MixedModel {
    /// The misclosure weight `M = [BᵀW⁻¹B]⁻¹`.
    pub fn misclosure_weight(&self) -> Result<DMatrix<f64>> {
        let bt = &self.condition_transpose;
        let m_inv = bt * &self.weight_inverse * bt.transpose();
        m_inv
            .cholesky()
            .map(|c| c.inverse())
            .ok_or_else(|| Error::Numerical("misclosure covariance is not positive definite".into()))
    }

    /// Solves one WLS step: returns `(Δx̂, Q_x̂x̂, objective)` where the
    /// objective is the post-fit quadratic form `(w + AΔx̂)ᵀM(w + AΔx̂)`.
    pub fn solve_increment(&self) -> Result<(DVector<f64>, DMatrix<f64>, f64)> {
        let m = self.misclosure_weight()?;
        let normal = self.design.transpose() * &m * &self.design;
        let rhs = -(self.design.transpose() * &m * &self.misclosure);

        // Reciprocal-condition guard: the normal matrix is small (at most a
        // few dozen unknowns), so a full symmetric eigendecomposition is an
        // affordable and reliable rank detector.
        let eigenvalues = normal.clone().symmetric_eigen().eigenvalues;
        let max = eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
        let min = eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
        if !(max > 0.0) || min <= 0.0 || min / max < 1e-14 {
            return Err(Error::RankDeficient(format!(
                "normal matrix is numerically singular (rcond {:.3e}); \
                 the scenario does not determine every unknown",
                if max > 0.0 { min / max } else { 0.0 }
            )));
        }

        let chol = normal
            .clone()
            .cholesky()
            .ok_or_else(|| Error::RankDeficient("normal matrix is not positive definite".into()))?;
        let dx = chol.solve(&rhs);
        let covariance = chol.inverse();
        let post = &self.misclosure + &self.design * &dx;
        let objective = (post.transpose() * &m * &post)[(0, 0)];
        Ok((dx, covariance, objective))
    }
}

/// Iteration controls for [`wls_iterate`].
#[derive(Debug, Clone, Copy)]
pub struct EstimatorOptions {
    pub max_iterations: usize,
    /// Convergence threshold on position/rotation increments, metres.
    pub position_tolerance: f64,
    /// Convergence threshold on ambiguity increments, cycles.
    pub ambiguity_tolerance: f64,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        EstimatorOptions {
            max_iterations: 20,
            position_tolerance: 1e-8,
            ambiguity_tolerance: 1e-6,
        }
    }
}

/// Converged float estimate with its full covariance.
#[derive(Debug, Clone)]
pub struct FloatSolution {
    state: DVector<f64>,
    covariance: DMatrix<f64>,
    num_ambiguities: usize,
    has_rotation: bool,
    pub iterations: usize,
    pub converged: bool,
    /// Final post-fit quadratic form `eᵀWe`.
    pub objective: f64,
}

impl FloatSolution {
    /// Number of float ambiguities (0 for lidar-only solves).
    pub fn num_ambiguities(&self) -> usize {
        self.num_ambiguities
    }

    /// Whether the state vector carries the nine rotation parameters.
    pub fn has_rotation(&self) -> bool {
        self.has_rotation
    }

    /// Full state vector `[â | b̂ | r̂]`.
    pub fn state(&self) -> &DVector<f64> {
        &self.state
    }

    /// Full covariance of the state vector.
    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Float DD ambiguities, cycles.
    pub fn ambiguities(&self) -> DVector<f64> {
        self.state.rows(0, self.num_ambiguities).into_owned()
    }

    /// Estimated position, working frame.
    pub fn position(&self) -> Vector3<f64> {
        let b = self.state.rows(self.num_ambiguities, 3);
        Vector3::new(b[0], b[1], b[2])
    }

    /// Raw (unconstrained) rotation estimate, when present.
    pub fn rotation_matrix(&self) -> Option<Matrix3<f64>> {
        if !self.has_rotation {
            return None;
        }
        let r = self.state.rows(self.num_ambiguities + 3, 9);
        Some(Matrix3::from_column_slice(r.as_slice()))
    }

    /// Ambiguity covariance block `Q_ââ`.
    pub fn ambiguity_covariance(&self) -> DMatrix<f64> {
        self.covariance
            .view((0, 0), (self.num_ambiguities, self.num_ambiguities))
            .into_owned()
    }

    /// Position covariance block `Q_b̂b̂` (3×3).
    pub fn position_covariance(&self) -> Matrix3<f64> {
        let q = self.covariance.view((self.num_ambiguities, self.num_ambiguities), (3, 3));
        Matrix3::from_iterator(q.iter().cloned())
    }

    /// Covariance of the non-ambiguity parameters `Q_ĝĝ`.
    pub fn rest_covariance(&self) -> DMatrix<f64> {
        let k = self.state.len() - self.num_ambiguities;
        self.covariance
            .view((self.num_ambiguities, self.num_ambiguities), (k, k))
            .into_owned()
    }

    /// Cross covariance `Q_ĝâ` between the non-ambiguity parameters and the
    /// ambiguities.
    pub fn cross_covariance(&self) -> DMatrix<f64> {
        let k = self.state.len() - self.num_ambiguities;
        self.covariance
            .view((self.num_ambiguities, 0), (k, self.num_ambiguities))
            .into_owned()
    }

    /// Non-ambiguity parameter estimates `ĝ = [b̂ᵀ, r̂ᵀ]ᵀ`.
    pub fn rest(&self) -> DVector<f64> {
        let k = self.state.len() - self.num_ambiguities;
        self.state.rows(self.num_ambiguities, k).into_owned()
    }
}

/// Assembles the mixed model at the linearization point `x`.
///
/// The unknown layout is `[a | b | r]` where the ambiguity block is present
/// iff GNSS data is given and the rotation block iff lidar data is given.
/// At least one sensor must be present.
pub fn assemble_mixed_model(
    gnss_data: Option<&GnssEpochData>,
    lidar_data: Option<&LidarEpochData>,
    x: &DVector<f64>,
) -> Result<MixedModel> {
    let num_amb = gnss_data.map_or(0, |g| {
        g.config.num_frequencies() * (g.geometry.num_satellites() - 1)
    });
    let has_rotation = lidar_data.is_some();
    let num_unknowns = num_amb + 3 + if has_rotation { 9 } else { 0 };
    if gnss_data.is_none() && lidar_data.is_none() {
        return Err(Error::InvalidArgument(
            "at least one of GNSS and lidar data is required".into(),
        ));
    }
    if x.len() != num_unknowns {
        return Err(Error::InvalidArgument(format!(
            "state vector has {} entries, expected {num_unknowns}",
            x.len()
        )));
    }

    let n3 = lidar_data.map_or(0, |l| 3 * l.keypoints.len());
    let num_gnss_rows = gnss_data.map_or(0, |g| {
        2 * g.config.num_frequencies() * (g.geometry.num_satellites() - 1)
    });
    let rows = n3 + num_gnss_rows;

    let mut design = DMatrix::zeros(rows, num_unknowns);
    let mut condition_t = DMatrix::zeros(rows, rows);
    let mut weight = DMatrix::zeros(rows, rows);
    let mut weight_inv = DMatrix::zeros(rows, rows);
    let mut misclosure = DVector::zeros(rows);

    let b_hat = Vector3::new(x[num_amb], x[num_amb + 1], x[num_amb + 2]);

    if let Some(l) = lidar_data {
        let pose = RigidPose {
            rotation: Matrix3::from_column_slice(&x.as_slice()[num_amb + 3..num_amb + 12]),
            translation: b_hat,
        };
        let (a_l, b_l_t, w_l) = lidar::lidar_jacobians(&l.keypoints, &pose);
        // a_l columns are [b | r]; splice them into the global layout.
        design
            .view_mut((0, num_amb), (n3, 3))
            .copy_from(&a_l.view((0, 0), (n3, 3)));
        design
            .view_mut((0, num_amb + 3), (n3, 9))
            .copy_from(&a_l.view((0, 3), (n3, 9)));
        condition_t.view_mut((0, 0), (n3, n3)).copy_from(&b_l_t);
        misclosure.rows_mut(0, n3).copy_from(&w_l);

        let sigma2 = l.keypoints.sigma_l().powi(2);
        for k in 0..n3 {
            weight[(k, k)] = 1.0 / sigma2;
            weight_inv[(k, k)] = sigma2;
        }
    }

    if let Some(g) = gnss_data {
        let f = g.config.num_frequencies();
        let md = g.geometry.num_satellites() - 1;
        let g_dd = g.direction_matrix();
        let delta_b = b_hat - g.approx_position;
        let geometry_term = &g_dd * delta_b;

        // Code rows, then phase rows, frequency-major.
        for t in 0..f {
            let lambda = g.config.wavelengths()[t];
            for k in 0..md {
                let code_row = n3 + t * md + k;
                let phase_row = n3 + f * md + t * md + k;
                for c in 0..3 {
                    design[(code_row, num_amb + c)] = g_dd[(k, c)];
                    design[(phase_row, num_amb + c)] = g_dd[(k, c)];
                }
                design[(phase_row, t * md + k)] = lambda;
                misclosure[code_row] = geometry_term[k] - g.observations.dd_code[t * md + k];
                misclosure[phase_row] = geometry_term[k] + lambda * x[t * md + k]
                    - g.observations.dd_phase[t * md + k];
            }
        }

        for k in 0..num_gnss_rows {
            condition_t[(n3 + k, n3 + k)] = -1.0;
        }

        let (w_p, w_phi) = gnss::dd_weight_matrices(&g.config, &g.geometry, g.weight_mode)?;
        let c = gnss::dd_cofactor_matrix(&g.geometry, g.weight_mode);
        let eye_f = DMatrix::<f64>::identity(f, f);
        let w_p_inv = eye_f.kronecker(&(&c * (2.0 * g.config.sigma_p().powi(2))));
        let w_phi_inv = eye_f.kronecker(&(&c * (2.0 * g.config.sigma_phi().powi(2))));
        weight
            .view_mut((n3, n3), (f * md, f * md))
            .copy_from(&w_p);
        weight
            .view_mut((n3 + f * md, n3 + f * md), (f * md, f * md))
            .copy_from(&w_phi);
        weight_inv
            .view_mut((n3, n3), (f * md, f * md))
            .copy_from(&w_p_inv);
        weight_inv
            .view_mut((n3 + f * md, n3 + f * md), (f * md, f * md))
            .copy_from(&w_phi_inv);
    }

    Ok(MixedModel {
        design,
        condition_transpose: condition_t,
        weight,
        weight_inverse: weight_inv,
        misclosure,
    })
}

/// Iterates the mixed-model WLS from `x0` until the increment drops below
/// tolerance (position/rotation and ambiguity entries judged separately) or
/// the iteration budget is exhausted; non-convergence is reported through
/// the flag, not an error.
pub fn wls_iterate<F>(
    mut build: F,
    x0: DVector<f64>,
    num_ambiguities: usize,
    options: &EstimatorOptions,
) -> Result<FloatSolution>
where
    F: FnMut(&DVector<f64>) -> Result<MixedModel>,
{
    if options.max_iterations == 0 {
        return Err(Error::InvalidArgument("max_iterations must be >= 1".into()));
    }
    let mut x = x0;
    let mut covariance = DMatrix::zeros(x.len(), x.len());
    let mut objective = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..options.max_iterations {
        let model = build(&x)?;
        let (dx, cov, obj) = model.solve_increment()?;
        x += &dx;
        covariance = cov;
        objective = obj;
        iterations += 1;

        let mut amb_step: f64 = 0.0;
        let mut pose_step: f64 = 0.0;
        for (k, v) in dx.iter().enumerate() {
            if k < num_ambiguities {
                amb_step = amb_step.max(v.abs());
            } else {
                pose_step = pose_step.max(v.abs());
            }
        }
        if amb_step < options.ambiguity_tolerance && pose_step < options.position_tolerance {
            converged = true;
            break;
        }
    }

    let has_rotation = x.len() == num_ambiguities + 12;
    Ok(FloatSolution {
        state: x,
        covariance,
        num_ambiguities,
        has_rotation,
        iterations,
        converged,
        objective,
    })
}

/// Solves the integrated GNSS + lidar epoch.
///
/// Initialization follows the registration: position and rotation from the
/// closed-form rigid alignment (or the caller-provided pose), ambiguities
/// from phase-minus-geometry.
pub fn solve_integrated(
    gnss_data: &GnssEpochData,
    lidar_data: &LidarEpochData,
    options: &EstimatorOptions,
) -> Result<FloatSolution> {
    let pose = match lidar_data.initial_pose {
        Some(p) => p,
        None => lidar::estimate_rigid_transform(
            lidar_data.keypoints.rover(),
            lidar_data.keypoints.reference(),
        )?,
    };
    let f = gnss_data.config.num_frequencies();
    let md = gnss_data.geometry.num_satellites() - 1;
    let mut x0 = DVector::zeros(f * md + 12);
    let amb0 = initial_ambiguities(gnss_data, &pose.translation);
    x0.rows_mut(0, f * md).copy_from(&amb0);
    x0.rows_mut(f * md, 12).copy_from(&pose.param_vector());

    wls_iterate(
        |x| assemble_mixed_model(Some(gnss_data), Some(lidar_data), x),
        x0,
        f * md,
        options,
    )
}

/// Solves a GNSS-only epoch (unknowns: ambiguities and position).
/// Initialization uses the code-only position, which requires the satellite
/// geometry to determine all three coordinates.
pub fn solve_gnss_only(
    gnss_data: &GnssEpochData,
    options: &EstimatorOptions,
) -> Result<FloatSolution> {
    let (b0, _) = code_only_position(gnss_data)?;
    let f = gnss_data.config.num_frequencies();
    let md = gnss_data.geometry.num_satellites() - 1;
    let mut x0 = DVector::zeros(f * md + 3);
    x0.rows_mut(0, f * md)
        .copy_from(&initial_ambiguities(gnss_data, &b0));
    x0.rows_mut(f * md, 3).copy_from(&b0);

    wls_iterate(
        |x| assemble_mixed_model(Some(gnss_data), None, x),
        x0,
        f * md,
        options,
    )
}

/// Solves a lidar-only epoch (unknowns: position and rotation).
pub fn solve_lidar_only(
    lidar_data: &LidarEpochData,
    options: &EstimatorOptions,
) -> Result<FloatSolution> {
    let pose = match lidar_data.initial_pose {
        Some(p) => p,
        None => lidar::estimate_rigid_transform(
            lidar_data.keypoints.rover(),
            lidar_data.keypoints.reference(),
        )?,
    };
    wls_iterate(
        |x| assemble_mixed_model(None, Some(lidar_data), x),
        pose.param_vector(),
        0,
        options,
    )
}

/// Float ambiguity initialization `(Δφ_t − G(b − b₀))/λ_t`.
fn initial_ambiguities(gnss_data: &GnssEpochData, position: &Vector3<f64>) -> DVector<f64> {
    let f = gnss_data.config.num_frequencies();
    let md = gnss_data.geometry.num_satellites() - 1;
    let g_dd = gnss_data.direction_matrix();
    let geometry_term = &g_dd * (position - gnss_data.approx_position);
    let mut a = DVector::zeros(f * md);
    for t in 0..f {
        let lambda = gnss_data.config.wavelengths()[t];
        for k in 0..md {
            a[t * md + k] =
                (gnss_data.observations.dd_phase[t * md + k] - geometry_term[k]) / lambda;
        }
    }
    a
}

/// Direct code-only position fix: WLS of the DD code stack over all
/// frequencies. Fails with a rank error when the geometry does not span
/// three dimensions (fewer than four satellites).
pub fn code_only_position(gnss_data: &GnssEpochData) -> Result<(Vector3<f64>, Matrix3<f64>)> {
    let f = gnss_data.config.num_frequencies();
    let md = gnss_data.geometry.num_satellites() - 1;
    let g_dd = gnss_data.direction_matrix();
    let c = gnss::dd_cofactor_matrix(&gnss_data.geometry, gnss_data.weight_mode);
    let c_inv = c
        .cholesky()
        .ok_or_else(|| Error::Numerical("DD cofactor matrix is not positive definite".into()))?
        .inverse();
    let w_block = c_inv / (2.0 * gnss_data.config.sigma_p().powi(2));

    // All frequencies share the geometry, so the normal matrix is f times
    // the single-frequency one.
    let normal = (g_dd.transpose() * &w_block * &g_dd) * f as f64;
    let eig = normal.clone().symmetric_eigen().eigenvalues;
    let max = eig.iter().cloned().fold(f64::MIN, f64::max);
    let min = eig.iter().cloned().fold(f64::MAX, f64::min);
    if !(max > 0.0) || min <= 0.0 || min / max < 1e-12 {
        return Err(Error::RankDeficient(format!(
            "code-only geometry with {} satellites does not determine the position",
            gnss_data.geometry.num_satellites()
        )));
    }

    let mut rhs = DVector::zeros(3);
    for t in 0..f {
        let dp = gnss_data.observations.dd_code.rows(t * md, md);
        rhs += g_dd.transpose() * &w_block * dp;
    }
    let chol = normal
        .clone()
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("code-only normal matrix not positive definite".into()))?;
    let delta = chol.solve(&rhs);
    let q = chol.inverse();
    Ok((
        gnss_data.approx_position + Vector3::new(delta[0], delta[1], delta[2]),
        Matrix3::from_iterator(q.iter().cloned()),
    ))
}

/// Position and its 3×3 covariance from a converged float solution.
pub fn float_position_only(solution: &FloatSolution) -> (Vector3<f64>, Matrix3<f64>) {
    (solution.position(), solution.position_covariance())
}

// ---------------------------------------------------------------------------
// Epoch bundle: the JSON interchange format for a complete single epoch.
// ---------------------------------------------------------------------------

/// Self-contained single-epoch problem: site, GNSS observations, lidar
/// correspondences, and (optionally) the simulation truth for validation.
/// Positions are ECEF metres; satellite angles are local to the site.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochBundle {
    pub site: SiteSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gnss: Option<GnssSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lidar: Option<LidarSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<TruthSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SiteSection {
    pub lat_deg: f64,
    pub lon_deg: f64,
    /// Linearization point / approximate receiver position, ECEF metres.
    pub approx_position: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GnssSection {
    pub wavelengths: Vec<f64>,
    pub sigma_p: f64,
    pub sigma_phi: f64,
    /// `"elevation"` or `"equal"`.
    pub weight_mode: String,
    pub elevations_deg: Vec<f64>,
    pub azimuths_deg: Vec<f64>,
    pub pivot: usize,
    pub dd_code: Vec<f64>,
    pub dd_phase: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LidarSection {
    pub sigma_l: f64,
    pub keypoints: Vec<KeypointPair>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KeypointPair {
    /// Sensor-frame point, metres.
    pub rover: [f64; 3],
    /// Map point, ECEF metres.
    pub reference: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthSection {
    /// True receiver position, ECEF metres.
    pub position: [f64; 3],
    /// True DD integer ambiguities, frequency-major.
    pub ambiguities: Vec<i64>,
}

impl EpochBundle {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let bundle: EpochBundle = serde_json::from_str(text)?;
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Semantic validation with field-level diagnostics.
    pub fn validate(&self) -> Result<()> {
        if self.gnss.is_none() && self.lidar.is_none() {
            return Err(Error::Config(
                "bundle carries neither a 'gnss' nor a 'lidar' section".into(),
            ));
        }
        if !self.site.lat_deg.is_finite() || self.site.lat_deg.abs() > 90.0 {
            return Err(Error::Config(format!(
                "site.lat_deg = {} outside [-90, 90]",
                self.site.lat_deg
            )));
        }
        if !self.site.lon_deg.is_finite() {
            return Err(Error::Config("site.lon_deg is not finite".into()));
        }
        if self.site.approx_position.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("site.approx_position has non-finite entries".into()));
        }
        if let Some(g) = &self.gnss {
            let m = g.elevations_deg.len();
            if g.azimuths_deg.len() != m {
                return Err(Error::Config(format!(
                    "gnss.azimuths_deg has {} entries but gnss.elevations_deg has {m}",
                    g.azimuths_deg.len()
                )));
            }
            if g.pivot >= m {
                return Err(Error::Config(format!(
                    "gnss.pivot = {} out of range for {m} satellites",
                    g.pivot
                )));
            }
            let expected = g.wavelengths.len() * m.saturating_sub(1);
            if g.dd_code.len() != expected {
                return Err(Error::Config(format!(
                    "gnss.dd_code has {} entries, expected {expected}",
                    g.dd_code.len()
                )));
            }
            if g.dd_phase.len() != expected {
                return Err(Error::Config(format!(
                    "gnss.dd_phase has {} entries, expected {expected}",
                    g.dd_phase.len()
                )));
            }
            match g.weight_mode.as_str() {
                "elevation" | "equal" => {}
                other => {
                    return Err(Error::Config(format!(
                        "gnss.weight_mode = '{other}' (expected 'elevation' or 'equal')"
                    )))
                }
            }
        }
        if let Some(l) = &self.lidar {
            if l.keypoints.len() < 4 {
                return Err(Error::Config(format!(
                    "lidar.keypoints has {} pairs; at least 4 are required",
                    l.keypoints.len()
                )));
            }
            if !(l.sigma_l > 0.0) {
                return Err(Error::Config(format!("lidar.sigma_l = {} must be > 0", l.sigma_l)));
            }
        }
        if let Some(t) = &self.truth {
            if let Some(g) = &self.gnss {
                let expected = g.wavelengths.len() * (g.elevations_deg.len() - 1);
                if t.ambiguities.len() != expected {
                    return Err(Error::Config(format!(
                        "truth.ambiguities has {} entries, expected {expected}",
                        t.ambiguities.len()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Converts the bundle into solver inputs. The working frame is ECEF;
    /// satellite direction vectors are rotated from the site's ENU frame.
    pub fn epoch_data(&self) -> Result<(Option<GnssEpochData>, Option<LidarEpochData>)> {
        self.validate()?;
        let approx = Vector3::new(
            self.site.approx_position[0],
            self.site.approx_position[1],
            self.site.approx_position[2],
        );
        let gnss_data = match &self.gnss {
            None => None,
            Some(g) => {
                let config = GnssConfig::new(g.wavelengths.clone(), g.sigma_p, g.sigma_phi)
                    .map_err(|e| Error::Config(format!("gnss section: {e}")))?;
                let geometry = SatelliteGeometry::from_degrees(&g.elevations_deg, &g.azimuths_deg)
                    .map_err(|e| Error::Config(format!("gnss section: {e}")))?
                    .with_pivot(g.pivot)
                    .map_err(|e| Error::Config(format!("gnss section: {e}")))?;
                let weight_mode = if g.weight_mode == "equal" {
                    WeightMode::Equal
                } else {
                    WeightMode::Elevation
                };
                Some(GnssEpochData {
                    config,
                    geometry,
                    weight_mode,
                    observations: DdObservations {
                        dd_code: DVector::from_vec(g.dd_code.clone()),
                        dd_phase: DVector::from_vec(g.dd_phase.clone()),
                    },
                    approx_position: approx,
                    frame_rotation: enu_rotation(self.site.lat_deg, self.site.lon_deg).transpose(),
                })
            }
        };
        let lidar_data = match &self.lidar {
            None => None,
            Some(l) => {
                let rover = l
                    .keypoints
                    .iter()
                    .map(|k| Vector3::new(k.rover[0], k.rover[1], k.rover[2]))
                    .collect();
                let reference = l
                    .keypoints
                    .iter()
                    .map(|k| Vector3::new(k.reference[0], k.reference[1], k.reference[2]))
                    .collect();
                let keypoints = KeypointSet::new(rover, reference, l.sigma_l)
                    .map_err(|e| Error::Config(format!("lidar section: {e}")))?;
                Some(LidarEpochData {
                    keypoints,
                    initial_pose: None,
                })
            }
        };
        Ok((gnss_data, lidar_data))
    }

    /// Solves the bundle with whichever sensors it carries.
    pub fn solve(&self, options: &EstimatorOptions) -> Result<FloatSolution> {
        let (gnss_data, lidar_data) = self.epoch_data()?;
        match (&gnss_data, &lidar_data) {
            (Some(g), Some(l)) => solve_integrated(g, l, options),
            (Some(g), None) => solve_gnss_only(g, options),
            (None, Some(l)) => solve_lidar_only(l, options),
            (None, None) => Err(Error::Config("bundle carries no sensor data".into())),
        }
    }
}
