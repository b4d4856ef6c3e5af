//! Closed-form precision analysis: float ambiguity covariance, ambiguity
//! dilution of precision (ADOP), and the improvement ratio contributed by
//! the lidar registration.
//!
//! Everything here is derived analytically from the model geometry and the
//! noise settings — no observations and no estimator runs — which makes it
//! cheap enough to sweep over constellation size, frequency count, and
//! keypoint quality.
//!
//! Key closed forms, with `C = DᵀW⁻¹D` the DD cofactor, `G` the DD
//! direction matrix, `Λ = diag(λ₁…λ_f)`, `ε = σ_φ²/σ_p²`, and `Q_b̂b̂` the
//! float position covariance of whichever system is being analyzed:
//!
//! ```text
//! Q_ââ   = 2σ_φ²·Λ⁻²⊗C + Λ⁻¹11ᵀΛ⁻¹ ⊗ (G·Q_b̂b̂·Gᵀ)
//! ADOP   = |Q_ââ|^(1/(2·f·(m−1)))
//! ADOP_G = √2·(σ_φ/λ̄)·w₀·(1 + 1/ε)^(3/(2f(m−1)))
//! ratio  = ADOP_GL/ADOP_G = ∏ᵢ [1 − (1/(1+ε))/γᵢ]^(1/(2f(m−1)))
//! ```
//!
//! where `w₀ = [(Σw)/(Πw)]^(1/(2(m−1)))` collects the satellite weights,
//! `λ̄` is the geometric-mean wavelength, and the `γᵢ` solve the
//! generalized eigenvalue problem `|Q_L − γ·Q_GL| = 0` between the
//! lidar-only and integrated position covariances. The ratio is also a
//! single determinant, `|I − (1/(1+ε))·Q_L⁻¹·Q_GL|^(1/(2f(m−1)))`; both
//! routes are exposed so they can be checked against each other.

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::ambiguity::bootstrapped_success_rate;
use crate::gnss::{self, GnssConfig, SatelliteGeometry, WeightMode};
use crate::{Error, Result};

/// Keypoint geometry and noise level for the analytic lidar model. The
/// points are the map-frame keypoints expressed relative to the sensor
/// (lever arms), so only their scatter matters.
#[derive(Debug, Clone)]
pub struct LidarLayout {
    pub keypoints: Vec<Vector3<f64>>,
    pub sigma_l: f64,
}

impl LidarLayout {
    pub fn new(keypoints: Vec<Vector3<f64>>, sigma_l: f64) -> Result<Self> {
        if keypoints.len() < 4 {
            return Err(Error::InvalidArgument(format!(
                "lidar layout has {} keypoints; at least 4 are required",
                keypoints.len()
            )));
        }
        if !(sigma_l > 0.0) || !sigma_l.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sigma_l = {sigma_l} must be a positive finite number"
            )));
        }
        Ok(LidarLayout { keypoints, sigma_l })
    }

    /// Position information contributed by the registration after the
    /// rotation parameters absorb their share:
    ///
    /// ```text
    /// Q_b̂b̂⁻¹ = (n/σ_L²)·(1 − n·ȳᵀS⁻¹ȳ)·I₃,    S = Σⱼ yⱼyⱼᵀ
    /// ```
    ///
    /// which is isotropic regardless of the layout. Layouts whose points
    /// nearly lie in a plane missing the origin leave nothing for the
    /// translation once the rotation takes its share; the information then
    /// tends to zero, and zero is what this returns (random draws from a
    /// flat annulus do land there occasionally). Errors only when the
    /// keypoints span fewer than three dimensions as vectors.
    pub fn position_information(&self) -> Result<Matrix3<f64>> {
        let n = self.keypoints.len() as f64;
        let mut s = Matrix3::zeros();
        let mut mean = Vector3::zeros();
        for y in &self.keypoints {
            s += y * y.transpose();
            mean += y;
        }
        mean /= n;

        let chol = s.cholesky().ok_or_else(|| {
            Error::DegenerateGeometry(
                "keypoint second-moment matrix is singular; points span fewer than \
                 three dimensions"
                    .into(),
            )
        })?;
        // In exact arithmetic this lies in [0, 1]; rounding can push a
        // degenerate layout slightly negative.
        let reduced = (1.0 - n * (mean.transpose() * chol.solve(&mean))[(0, 0)]).max(0.0);
        Ok(Matrix3::identity() * (n * reduced / (self.sigma_l * self.sigma_l)))
    }

    /// Lidar-only float position covariance (inverse of the information).
    /// Errors when the layout carries no translational information, since
    /// the covariance is unbounded there.
    pub fn position_variance(&self) -> Result<Matrix3<f64>> {
        let info = self.position_information()?;
        if !(info[(0, 0)] > 0.0) {
            return Err(Error::DegenerateGeometry(
                "keypoint layout leaves the translation unconstrained; its \
                 covariance is unbounded"
                    .into(),
            ));
        }
        // The information is a positive multiple of the identity.
        Ok(Matrix3::identity() / info[(0, 0)])
    }
}

/// A complete analysis scenario: GNSS settings plus (optionally) a lidar
/// layout.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: GnssConfig,
    pub geometry: SatelliteGeometry,
    pub weight_mode: WeightMode,
    pub lidar: Option<LidarLayout>,
}

/// GNSS float position information `(f/(2σ_p²))·GᵀC⁻¹G`. Only the code
/// observations inform the float position — the phase share is absorbed by
/// the float ambiguities — so this is defined for any m ≥ 2 even when it
/// is singular as an information matrix.
pub fn gnss_position_information(
    config: &GnssConfig,
    geometry: &SatelliteGeometry,
    mode: WeightMode,
) -> Result<Matrix3<f64>> {
    let g = gnss::dd_direction_matrix(geometry);
    let c = gnss::dd_cofactor_matrix(geometry, mode);
    let c_inv = c
        .cholesky()
        .ok_or_else(|| Error::Numerical("DD cofactor matrix is not positive definite".into()))?
        .inverse();
    let f = config.num_frequencies() as f64;
    let info = g.transpose() * c_inv * &g * (f / (2.0 * config.sigma_p() * config.sigma_p()));
    Ok(Matrix3::from_iterator(info.iter().cloned()))
}

/// GNSS-only float position covariance. Errors with a rank diagnostic when
/// the DD geometry does not span three dimensions (fewer than four
/// satellites, or a degenerate constellation).
pub fn gnss_position_variance(
    config: &GnssConfig,
    geometry: &SatelliteGeometry,
    mode: WeightMode,
) -> Result<Matrix3<f64>> {
    let info = gnss_position_information(config, geometry, mode)?;
    invert_information(&info, "satellite")
}

/// Integrated float position covariance `(Q_G⁻¹ + Q_L⁻¹)⁻¹` — the two
/// sensors add at the information level because their errors are
/// independent.
pub fn integrated_position_variance(scenario: &Scenario) -> Result<Matrix3<f64>> {
    let lidar = scenario.lidar.as_ref().ok_or_else(|| {
        Error::InvalidArgument("integrated analysis requires a lidar layout".into())
    })?;
    let info = gnss_position_information(&scenario.config, &scenario.geometry, scenario.weight_mode)?
        + lidar.position_information()?;
    invert_information(&info, "combined")
}

/// Float position covariance of whichever system the scenario describes.
pub fn float_position_variance(scenario: &Scenario) -> Result<Matrix3<f64>> {
    match &scenario.lidar {
        Some(_) => integrated_position_variance(scenario),
        None => gnss_position_variance(&scenario.config, &scenario.geometry, scenario.weight_mode),
    }
}

fn invert_information(info: &Matrix3<f64>, what: &str) -> Result<Matrix3<f64>> {
    let eig = info.symmetric_eigen().eigenvalues;
    let max = eig.iter().cloned().fold(f64::MIN, f64::max);
    let min = eig.iter().cloned().fold(f64::MAX, f64::min);
    if !(max > 0.0) || min <= 0.0 || min / max < 1e-10 {
        return Err(Error::RankDeficient(format!(
            "{what} geometry does not determine all three position coordinates \
             (information rcond {:.3e})",
            if max > 0.0 { (min / max).max(0.0) } else { 0.0 }
        )));
    }
    info.cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Numerical(format!("{what} information matrix inversion failed")))
}

/// Float ambiguity covariance assembled from the closed form
/// `Q_ââ = 2σ_φ²·Λ⁻²⊗C + Λ⁻¹11ᵀΛ⁻¹ ⊗ (G·Q_b̂b̂·Gᵀ)` with the scenario's
/// float position covariance. The layout is frequency-major, matching the
/// estimator's ambiguity ordering.
pub fn ambiguity_covariance(scenario: &Scenario) -> Result<DMatrix<f64>> {
    let q_bb = float_position_variance(scenario)?;
    ambiguity_covariance_with_position(scenario, &q_bb)
}

/// Same as [`ambiguity_covariance`] but with a caller-supplied float
/// position covariance (useful for consistency tests against an estimator
/// run).
pub fn ambiguity_covariance_with_position(
    scenario: &Scenario,
    q_bb: &Matrix3<f64>,
) -> Result<DMatrix<f64>> {
    let f = scenario.config.num_frequencies();
    let c = gnss::dd_cofactor_matrix(&scenario.geometry, scenario.weight_mode);
    let g = gnss::dd_direction_matrix(&scenario.geometry);
    let gqg = &g * q_bb * g.transpose();

    let sigma_phi = scenario.config.sigma_phi();
    let mut lambda_inv2 = DMatrix::zeros(f, f);
    let mut lambda_outer = DMatrix::zeros(f, f);
    for t in 0..f {
        let lt = scenario.config.wavelengths()[t];
        lambda_inv2[(t, t)] = 1.0 / (lt * lt);
        for u in 0..f {
            let lu = scenario.config.wavelengths()[u];
            lambda_outer[(t, u)] = 1.0 / (lt * lu);
        }
    }

    let term_noise = lambda_inv2.kronecker(&c) * (2.0 * sigma_phi * sigma_phi);
    let term_geometry = lambda_outer.kronecker(&gqg);
    Ok(term_noise + term_geometry)
}

/// ADOP of a covariance matrix: `|Q|^(1/(2n))`, evaluated through the
/// Cholesky log-determinant so large dimensions neither overflow nor lose
/// precision.
pub fn adop(q: &DMatrix<f64>) -> Result<f64> {
    let n = q.nrows();
    if n == 0 || q.ncols() != n {
        return Err(Error::InvalidArgument(format!(
            "ADOP needs a square nonempty matrix, got {}x{}",
            q.nrows(),
            q.ncols()
        )));
    }
    let chol = q
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("ADOP covariance is not positive definite".into()))?;
    let log_det: f64 = (0..n).map(|i| chol.l_dirty()[(i, i)].ln()).sum::<f64>() * 2.0;
    Ok((log_det / (2.0 * n as f64)).exp())
}

/// GNSS-only ADOP from satellite weights alone:
/// `√2·(σ_φ/λ̄)·w₀·(1+1/ε)^(3/(2f(m−1)))`. Defined for any m ≥ 2 — it does
/// not require an invertible position geometry.
pub fn adop_gnss_from_weights(config: &GnssConfig, weights: &[f64]) -> Result<f64> {
    let m = weights.len();
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "ADOP needs at least 2 satellites, got {m}"
        )));
    }
    if weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::InvalidArgument("satellite weights must be positive".into()));
    }
    let f = config.num_frequencies() as f64;
    let sum: f64 = weights.iter().sum();
    let log_prod: f64 = weights.iter().map(|w| w.ln()).sum();
    let w0 = ((sum.ln() - log_prod) / (2.0 * (m as f64 - 1.0))).exp();
    let exponent = 3.0 / (2.0 * f * (m as f64 - 1.0));
    let eps = config.epsilon();
    Ok(std::f64::consts::SQRT_2
        * (config.sigma_phi() / config.mean_wavelength())
        * w0
        * (1.0 + 1.0 / eps).powf(exponent))
}

/// GNSS-only ADOP for a concrete constellation and weighting mode.
pub fn adop_gnss_closed_form(
    config: &GnssConfig,
    geometry: &SatelliteGeometry,
    mode: WeightMode,
) -> Result<f64> {
    let weights = geometry.weights(mode);
    adop_gnss_from_weights(config, weights.as_slice())
}

/// Generalized eigenvalues `γ` of `|Q_L − γ·Q| = 0`, ascending. Both inputs
/// must be symmetric positive definite; the problem is reduced to an
/// ordinary symmetric one through the Cholesky factor of `Q`.
pub fn generalized_eigenvalues(q_l: &Matrix3<f64>, q: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let chol = q
        .cholesky()
        .ok_or_else(|| Error::Numerical("generalized eigenvalue base matrix is not positive definite".into()))?;
    let l = chol.l();
    let tmp = l
        .solve_lower_triangular(q_l)
        .ok_or_else(|| Error::Numerical("triangular solve failed in eigenvalue reduction".into()))?;
    let b = l
        .solve_lower_triangular(&tmp.transpose())
        .ok_or_else(|| Error::Numerical("triangular solve failed in eigenvalue reduction".into()))?;
    let sym = (b + b.transpose()) * 0.5;
    let mut g: Vec<f64> = sym.symmetric_eigen().eigenvalues.iter().cloned().collect();
    g.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    Ok(Vector3::new(g[0], g[1], g[2]))
}

/// ADOP improvement ratio through the eigenvalue product
/// `∏ᵢ [1 − (1/(1+ε))/γᵢ]^(1/(2f(m−1)))`. Returns 1 for a GNSS-only
/// scenario (no registration, no improvement).
pub fn adop_ratio(scenario: &Scenario) -> Result<f64> {
    let Some(gammas) = ratio_eigenvalues(scenario)? else {
        return Ok(1.0);
    };
    let eps = scenario.config.epsilon();
    let exponent = ratio_exponent(scenario);
    let mut log_prod = 0.0;
    for i in 0..3 {
        log_prod += (1.0 - (1.0 / (1.0 + eps)) / gammas[i]).ln();
    }
    Ok((exponent * log_prod).exp())
}

/// ADOP improvement ratio through the single determinant
/// `|I − (1/(1+ε))·Q_L⁻¹·Q|^(1/(2f(m−1)))`; algebraically identical to
/// [`adop_ratio`] and kept as an independent route for cross-checking.
pub fn adop_ratio_determinant_form(scenario: &Scenario) -> Result<f64> {
    let Some(lidar) = scenario.lidar.as_ref() else {
        return Ok(1.0);
    };
    let q = integrated_position_variance(scenario)?;
    let q_l_info = lidar.position_information()?;
    let eps = scenario.config.epsilon();
    let inner = Matrix3::identity() - q_l_info * q / (1.0 + eps);
    let det = inner.determinant();
    if !(det > 0.0) {
        return Err(Error::Numerical(format!(
            "ratio determinant {det:.3e} is not positive"
        )));
    }
    Ok(det.powf(ratio_exponent(scenario)))
}

/// Single-eigenvalue approximations of the ratio,
/// `[1 − (1/(1+ε))/γ_k]^(3/(2f(m−1)))` for `k ∈ {0, 1, 2}` (ascending
/// eigenvalue order). The exact ratio always lies between the k = 0 and
/// k = 2 curves. Returns 1 for a GNSS-only scenario.
pub fn adop_ratio_approximation(scenario: &Scenario, k: usize) -> Result<f64> {
    if k > 2 {
        return Err(Error::InvalidArgument(format!(
            "eigenvalue index {k} out of range 0..=2"
        )));
    }
    let Some(gammas) = ratio_eigenvalues(scenario)? else {
        return Ok(1.0);
    };
    let eps = scenario.config.epsilon();
    let exponent = 3.0 * ratio_exponent(scenario);
    Ok((1.0 - (1.0 / (1.0 + eps)) / gammas[k]).powf(exponent))
}

/// The `γᵢ` entering the ratio, or `None` for a GNSS-only scenario.
pub fn ratio_eigenvalues(scenario: &Scenario) -> Result<Option<Vector3<f64>>> {
    let Some(lidar) = scenario.lidar.as_ref() else {
        return Ok(None);
    };
    let q = integrated_position_variance(scenario)?;
    // A layout with no translational information has an unbounded
    // covariance: the eigenvalues diverge and the ratio tends to 1.
    if !(lidar.position_information()?[(0, 0)] > 0.0) {
        return Ok(Some(Vector3::repeat(f64::INFINITY)));
    }
    let q_l = lidar.position_variance()?;
    Ok(Some(generalized_eigenvalues(&q_l, &q)?))
}

fn ratio_exponent(scenario: &Scenario) -> f64 {
    let f = scenario.config.num_frequencies() as f64;
    let md = (scenario.geometry.num_satellites() - 1) as f64;
    1.0 / (2.0 * f * md)
}

/// `|Q_ââ|` through the factored closed form
/// `(2σ_φ²)^(f(m−1)) · |Λ|^(−2(m−1)) · |C|^f · |I + (1/ε)·Q_G⁻¹·Q_b̂b̂|`.
/// Works for any m ≥ 2 because only the position *information* of the
/// GNSS share appears.
pub fn ambiguity_determinant_factored(scenario: &Scenario) -> Result<f64> {
    let config = &scenario.config;
    let f = config.num_frequencies();
    let m = scenario.geometry.num_satellites();
    let md = m - 1;

    let c = gnss::dd_cofactor_matrix(&scenario.geometry, scenario.weight_mode);
    let det_c = c
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("DD cofactor matrix is not positive definite".into()))?
        .l_dirty()
        .diagonal()
        .iter()
        .map(|v| 2.0 * v.ln())
        .sum::<f64>();

    let log_lambda: f64 = config.wavelengths().iter().map(|l| l.ln()).sum();
    let eps = config.epsilon();

    let bracket = match &scenario.lidar {
        None => 3.0 * (1.0 + 1.0 / eps).ln(),
        Some(_) => {
            let info_g =
                gnss_position_information(config, &scenario.geometry, scenario.weight_mode)?;
            let q = integrated_position_variance(scenario)?;
            let inner = Matrix3::identity() + info_g * q / eps;
            let det = inner.determinant();
            if !(det > 0.0) {
                return Err(Error::Numerical(format!(
                    "factored determinant bracket {det:.3e} is not positive"
                )));
            }
            det.ln()
        }
    };

    let log_det = (f * md) as f64 * (2.0 * config.sigma_phi() * config.sigma_phi()).ln()
        - 2.0 * md as f64 * log_lambda
        + f as f64 * det_c
        + bracket;
    Ok(log_det.exp())
}

/// Integrated-system ADOP via the factored determinant; exact for any
/// m ≥ 2 and any wavelength set.
pub fn adop_integrated_closed_form(scenario: &Scenario) -> Result<f64> {
    let f = scenario.config.num_frequencies() as f64;
    let md = (scenario.geometry.num_satellites() - 1) as f64;
    let det = ambiguity_determinant_factored(scenario)?;
    Ok(det.powf(1.0 / (2.0 * f * md)))
}

// ---------------------------------------------------------------------------
// Sweep rows: the common CSV schema for the analysis commands.
// ---------------------------------------------------------------------------

/// Column header shared by the ADOP sweep outputs.
pub const SWEEP_CSV_HEADER: &str =
    "m,f,n,sigma_p,sigma_phi,sigma_L,adop_g,adop_gl,ratio,gamma1,gamma2,gamma3,ps";

/// Column header for ratio curves: the sweep columns plus the three
/// single-eigenvalue approximations.
pub const RATIO_CURVE_CSV_HEADER: &str =
    "m,f,n,sigma_p,sigma_phi,sigma_L,adop_g,adop_gl,ratio,gamma1,gamma2,gamma3,ps,approx1,approx2,approx3";

/// One row of an analysis sweep. Quantities that are undefined for the
/// scenario (no lidar, or a rank-deficient GNSS-only geometry) are NaN and
/// serialize as `nan`.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub m: usize,
    pub f: usize,
    pub n: usize,
    pub sigma_p: f64,
    pub sigma_phi: f64,
    pub sigma_l: f64,
    pub adop_g: f64,
    pub adop_gl: f64,
    pub ratio: f64,
    pub gamma: [f64; 3],
    pub ps: f64,
    pub approx: [f64; 3],
}

/// Formats one float cell: full shortest-roundtrip precision, `nan` for
/// undefined values, locale-independent.
pub fn fmt_cell(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v}")
    }
}

impl SweepRow {
    /// Renders the row with the [`SWEEP_CSV_HEADER`] columns.
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.m,
            self.f,
            self.n,
            fmt_cell(self.sigma_p),
            fmt_cell(self.sigma_phi),
            fmt_cell(self.sigma_l),
            fmt_cell(self.adop_g),
            fmt_cell(self.adop_gl),
            fmt_cell(self.ratio),
            fmt_cell(self.gamma[0]),
            fmt_cell(self.gamma[1]),
            fmt_cell(self.gamma[2]),
            fmt_cell(self.ps),
        )
    }

    /// Renders the row with the [`RATIO_CURVE_CSV_HEADER`] columns.
    pub fn to_ratio_curve_csv(&self) -> String {
        format!(
            "{},{},{},{}",
            self.to_csv(),
            fmt_cell(self.approx[0]),
            fmt_cell(self.approx[1]),
            fmt_cell(self.approx[2]),
        )
    }
}

/// Evaluates every sweep quantity for one scenario. Infeasible entries
/// come back as NaN rather than failing the row: a GNSS-only geometry with
/// fewer than four satellites still has a defined closed-form ADOP.
pub fn sweep_row(scenario: &Scenario) -> Result<SweepRow> {
    let m = scenario.geometry.num_satellites();
    let f = scenario.config.num_frequencies();
    let adop_g = adop_gnss_closed_form(&scenario.config, &scenario.geometry, scenario.weight_mode)?;

    let mut row = SweepRow {
        m,
        f,
        n: scenario.lidar.as_ref().map_or(0, |l| l.keypoints.len()),
        sigma_p: scenario.config.sigma_p(),
        sigma_phi: scenario.config.sigma_phi(),
        sigma_l: scenario.lidar.as_ref().map_or(f64::NAN, |l| l.sigma_l),
        adop_g,
        adop_gl: f64::NAN,
        ratio: f64::NAN,
        gamma: [f64::NAN; 3],
        ps: f64::NAN,
        approx: [f64::NAN; 3],
    };

    if scenario.lidar.is_some() {
        let gammas = ratio_eigenvalues(scenario)?.expect("lidar scenario has eigenvalues");
        row.gamma = [gammas[0], gammas[1], gammas[2]];
        row.ratio = adop_ratio(scenario)?;
        row.adop_gl = adop_g * row.ratio;
        for k in 0..3 {
            row.approx[k] = adop_ratio_approximation(scenario, k)?;
        }
        let q_aa = ambiguity_covariance(scenario)?;
        row.ps = bootstrapped_success_rate(&q_aa)?;
    } else if let Ok(q_aa) = ambiguity_covariance(scenario) {
        // Rank-deficient GNSS-only geometries (m < 4) leave these as NaN.
        row.adop_gl = adop(&q_aa)?;
        row.ps = bootstrapped_success_rate(&q_aa)?;
    }

    Ok(row)
}
