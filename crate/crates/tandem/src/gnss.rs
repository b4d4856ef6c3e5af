//! Double-differenced GNSS observation model.
//!
//! A rover and a nearby base receiver track `m` satellites on `f`
//! frequencies. Differencing between receivers and then between satellites
//! (against a pivot satellite) cancels clocks and, over a short baseline,
//! atmosphere, leaving per frequency `m − 1` DD code observations and
//! `m − 1` DD phase observations:
//!
//! ```text
//! Δp_t = G·Δb            + e_p        (code, metres)
//! Δφ_t = G·Δb + λ_t·a_t  + e_φ        (phase, metres)
//! ```
//!
//! with `G = Dᵀ·Ḡ` the DD direction matrix, `Δb` the position increment,
//! and `a_t` the integer DD ambiguities (cycles). Observations are
//! elevation-weighted: an undifferenced observation at elevation `θ` has
//! variance `σ²/sin²θ`, and differencing doubles variances and correlates
//! the DD set through `D`.
//!
//! Everything here is a pure function of its inputs; the simulator takes an
//! explicit random source so callers control reproducibility.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, Result};

/// GPS L1 carrier wavelength in metres (c / 1575.42 MHz).
pub const GPS_L1_WAVELENGTH: f64 = 299_792_458.0 / 1_575.42e6;
/// GPS L2 carrier wavelength in metres (c / 1227.60 MHz).
pub const GPS_L2_WAVELENGTH: f64 = 299_792_458.0 / 1_227.60e6;

/// How undifferenced observations are weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightMode {
    /// `w_s = sin²θ_s` — the operational model.
    #[default]
    Elevation,
    /// `w_s = 1` — the simplification used by the analytical studies.
    Equal,
}

/// Receiver noise model and carrier wavelengths.
#[derive(Debug, Clone, PartialEq)]
pub struct GnssConfig {
    wavelengths: Vec<f64>,
    sigma_p: f64,
    sigma_phi: f64,
}

impl GnssConfig {
    /// Builds a configuration from explicit wavelengths (metres per cycle)
    /// and zenith-referenced undifferenced standard deviations (metres).
    pub fn new(wavelengths: Vec<f64>, sigma_p: f64, sigma_phi: f64) -> Result<Self> {
        if wavelengths.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one frequency is required".into(),
            ));
        }
        if wavelengths.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::InvalidArgument(
                "wavelengths must be positive and finite".into(),
            ));
        }
        if !(sigma_p > 0.0) || !(sigma_phi > 0.0) {
            return Err(Error::InvalidArgument(
                "sigma_p and sigma_phi must be positive".into(),
            ));
        }
        if sigma_phi >= sigma_p {
            return Err(Error::InvalidArgument(format!(
                "phase noise ({sigma_phi}) must be smaller than code noise ({sigma_p}) \
                 for the phase-to-code variance ratio to lie in (0, 1)"
            )));
        }
        Ok(GnssConfig {
            wavelengths,
            sigma_p,
            sigma_phi,
        })
    }

    /// Single-frequency GPS L1 configuration.
    pub fn gps_l1(sigma_p: f64, sigma_phi: f64) -> Result<Self> {
        Self::new(vec![GPS_L1_WAVELENGTH], sigma_p, sigma_phi)
    }

    /// Dual-frequency GPS L1/L2 configuration.
    pub fn gps_l1_l2(sigma_p: f64, sigma_phi: f64) -> Result<Self> {
        Self::new(vec![GPS_L1_WAVELENGTH, GPS_L2_WAVELENGTH], sigma_p, sigma_phi)
    }

    /// Normalized-wavelength configuration: every frequency gets the same
    /// wavelength `λ = sigma_phi / ratio`, so that `σ_φ/λ` equals `ratio`
    /// exactly. The analytical ADOP studies use `ratio = 0.01` ("phase noise
    /// is about 1% of a wavelength").
    pub fn normalized(frequencies: usize, sigma_p: f64, sigma_phi: f64, ratio: f64) -> Result<Self> {
        if frequencies == 0 {
            return Err(Error::InvalidArgument(
                "at least one frequency is required".into(),
            ));
        }
        if !(ratio > 0.0) {
            return Err(Error::InvalidArgument(
                "phase-to-wavelength ratio must be positive".into(),
            ));
        }
        Self::new(vec![sigma_phi / ratio; frequencies], sigma_p, sigma_phi)
    }

    /// Number of frequencies `f`.
    pub fn num_frequencies(&self) -> usize {
        self.wavelengths.len()
    }

    /// Carrier wavelengths, metres per cycle.
    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    /// Zenith-referenced undifferenced code standard deviation, metres.
    pub fn sigma_p(&self) -> f64 {
        self.sigma_p
    }

    /// Zenith-referenced undifferenced phase standard deviation, metres.
    pub fn sigma_phi(&self) -> f64 {
        self.sigma_phi
    }

    /// Phase-to-code variance ratio `ε = σ_φ²/σ_p²`, guaranteed in (0, 1).
    pub fn epsilon(&self) -> f64 {
        (self.sigma_phi / self.sigma_p).powi(2)
    }

    /// Geometric mean wavelength `λ̄ = (Π λ_t)^(1/f)`.
    pub fn mean_wavelength(&self) -> f64 {
        let log_sum: f64 = self.wavelengths.iter().map(|l| l.ln()).sum();
        (log_sum / self.wavelengths.len() as f64).exp()
    }
}

/// Satellite constellation as seen from the receiver, plus the pivot choice
/// for between-satellite differencing.
///
/// Unit vectors point from the receiver toward each satellite, expressed in
/// the local East-North-Up frame; consumers that work in another frame
/// rotate the direction matrix themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct SatelliteGeometry {
    elevations: Vec<f64>,
    azimuths: Vec<f64>,
    pivot: usize,
}

impl SatelliteGeometry {
    /// Builds a geometry from elevation/azimuth lists in degrees. The pivot
    /// defaults to the highest-elevation satellite.
    pub fn from_degrees(elevations_deg: &[f64], azimuths_deg: &[f64]) -> Result<Self> {
        if elevations_deg.len() != azimuths_deg.len() {
            return Err(Error::InvalidArgument(format!(
                "elevation and azimuth lists differ in length ({} vs {})",
                elevations_deg.len(),
                azimuths_deg.len()
            )));
        }
        if elevations_deg.len() < 2 {
            return Err(Error::InvalidArgument(
                "at least two satellites are required to form differences".into(),
            ));
        }
        for (i, &el) in elevations_deg.iter().enumerate() {
            if !el.is_finite() || el <= 0.0 || el > 90.0 {
                return Err(Error::InvalidArgument(format!(
                    "satellite {i}: elevation {el}° outside (0°, 90°]"
                )));
            }
        }
        if azimuths_deg.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidArgument("non-finite azimuth".into()));
        }
        let mut pivot = 0;
        for (i, &el) in elevations_deg.iter().enumerate() {
            if el > elevations_deg[pivot] {
                pivot = i;
            }
        }
        Ok(SatelliteGeometry {
            elevations: elevations_deg.iter().map(|e| e.to_radians()).collect(),
            azimuths: azimuths_deg.iter().map(|a| a.to_radians()).collect(),
            pivot,
        })
    }

    /// Replaces the pivot satellite.
    pub fn with_pivot(mut self, pivot: usize) -> Result<Self> {
        if pivot >= self.elevations.len() {
            return Err(Error::InvalidArgument(format!(
                "pivot index {pivot} out of range for {} satellites",
                self.elevations.len()
            )));
        }
        self.pivot = pivot;
        Ok(self)
    }

    /// Parses the satellite-geometry CSV interchange format.
    ///
    /// The header must be exactly `sat_id,elevation_deg,azimuth_deg`; each
    /// data row carries an identifier (unused beyond validation) and the two
    /// angles in degrees.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: "empty geometry file".into(),
            })?;
        if header.trim() != "sat_id,elevation_deg,azimuth_deg" {
            return Err(Error::Parse {
                line: 1,
                message: format!(
                    "expected header 'sat_id,elevation_deg,azimuth_deg', found '{}'",
                    header.trim()
                ),
            });
        }
        let mut els = Vec::new();
        let mut azs = Vec::new();
        for (idx, line) in lines {
            let line_no = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected 3 fields, found {}", fields.len()),
                });
            }
            if fields[0].is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    message: "empty sat_id".into(),
                });
            }
            let el: f64 = fields[1].parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("invalid elevation '{}'", fields[1]),
            })?;
            let az: f64 = fields[2].parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("invalid azimuth '{}'", fields[2]),
            })?;
            els.push(el);
            azs.push(az);
        }
        Self::from_degrees(&els, &azs)
    }

    /// Number of satellites `m`.
    pub fn num_satellites(&self) -> usize {
        self.elevations.len()
    }

    /// Index of the pivot (reference) satellite.
    pub fn pivot(&self) -> usize {
        self.pivot
    }

    /// Elevation angles in radians.
    pub fn elevations(&self) -> &[f64] {
        &self.elevations
    }

    /// Azimuth angles in radians.
    pub fn azimuths(&self) -> &[f64] {
        &self.azimuths
    }

    /// Receiver-to-satellite unit vector in East-North-Up coordinates.
    pub fn unit_vector(&self, sat: usize) -> Vector3<f64> {
        let (el, az) = (self.elevations[sat], self.azimuths[sat]);
        Vector3::new(el.cos() * az.sin(), el.cos() * az.cos(), el.sin())
    }

    /// The `m×3` matrix `Ḡ` whose rows are the unit vectors.
    pub fn direction_matrix(&self) -> DMatrix<f64> {
        let m = self.num_satellites();
        DMatrix::from_fn(m, 3, |s, c| self.unit_vector(s)[c])
    }

    /// Per-satellite weights under the given mode.
    pub fn weights(&self, mode: WeightMode) -> DVector<f64> {
        match mode {
            WeightMode::Elevation => {
                DVector::from_iterator(self.elevations.len(), self.elevations.iter().map(|e| e.sin().powi(2)))
            }
            WeightMode::Equal => DVector::from_element(self.elevations.len(), 1.0),
        }
    }

    /// Keeps only the first `m` satellites (the lists are ordered by
    /// descending priority in the built-in skyplots); the pivot is re-derived.
    pub fn prefix(&self, m: usize) -> Result<Self> {
        if m < 2 || m > self.num_satellites() {
            return Err(Error::InvalidArgument(format!(
                "prefix length {m} outside [2, {}]",
                self.num_satellites()
            )));
        }
        let els: Vec<f64> = self.elevations[..m].iter().map(|e| e.to_degrees()).collect();
        let azs: Vec<f64> = self.azimuths[..m].iter().map(|a| a.to_degrees()).collect();
        Self::from_degrees(&els, &azs)
    }
}

/// Fixed mid-latitude open-sky constellation used by the built-in analysis
/// presets: 15 satellites in descending elevation order, the first 12 above
/// 40°. A cluster of four near-zenith satellites mirrors the kind of sky
/// the lidar-aided studies assume.
pub fn reference_skyplot() -> SatelliteGeometry {
    SatelliteGeometry::from_degrees(
        &[
            88.0, 86.0, 84.0, 82.0, 76.0, 64.0, 53.0, 46.0, 44.0, 42.0, 41.0, 40.0, 38.0, 35.0,
            30.0,
        ],
        &[
            0.0, 90.0, 180.0, 270.0, 45.0, 200.0, 320.0, 120.0, 250.0, 170.0, 60.0, 290.0, 15.0,
            135.0, 225.0,
        ],
    )
    .expect("built-in skyplot is valid")
}

/// Fixed sparse five-satellite constellation with one high and four
/// low-to-mid elevation satellites; used by the GNSS-only study presets.
pub fn sparse_skyplot() -> SatelliteGeometry {
    SatelliteGeometry::from_degrees(&[70.0, 45.0, 35.0, 25.0, 15.0], &[0.0, 80.0, 170.0, 250.0, 330.0])
        .expect("built-in skyplot is valid")
}

/// Between-satellite differencing matrix `D` (`m × (m−1)`).
///
/// `Dᵀx` maps per-satellite values to differences `x_s − x_pivot` for every
/// `s ≠ pivot`, in ascending satellite order.
pub fn differencing_matrix(m: usize, pivot: usize) -> Result<DMatrix<f64>> {
    if m < 2 {
        return Err(Error::InvalidArgument(
            "differencing needs at least two satellites".into(),
        ));
    }
    if pivot >= m {
        return Err(Error::InvalidArgument(format!(
            "pivot index {pivot} out of range for {m} satellites"
        )));
    }
    let mut d = DMatrix::zeros(m, m - 1);
    let mut col = 0;
    for s in 0..m {
        if s == pivot {
            continue;
        }
        d[(s, col)] = 1.0;
        d[(pivot, col)] = -1.0;
        col += 1;
    }
    Ok(d)
}

/// Diagonal satellite weight matrix `W_G = diag(sin²θ_s)` (or the identity
/// in equal-weights mode). Positive by construction since geometries cannot
/// hold zero elevations.
pub fn elevation_weight_matrix(geometry: &SatelliteGeometry, mode: WeightMode) -> DMatrix<f64> {
    DMatrix::from_diagonal(&geometry.weights(mode))
}

/// The DD cofactor matrix `C = Dᵀ W_G⁻¹ D`, the correlation kernel shared
/// by all DD weight matrices. Symmetric positive definite for any positive
/// weights.
pub fn dd_cofactor_matrix(geometry: &SatelliteGeometry, mode: WeightMode) -> DMatrix<f64> {
    let m = geometry.num_satellites();
    let d = differencing_matrix(m, geometry.pivot()).expect("geometry guarantees m >= 2");
    let w = geometry.weights(mode);
    let w_inv = DMatrix::from_fn(m, m, |i, j| if i == j { 1.0 / w[i] } else { 0.0 });
    d.transpose() * w_inv * d
}

/// DD weight matrices `(W_p, W_φ)` for the full `f(m−1)`-dimensional code
/// and phase stacks:
///
/// ```text
/// W_p = I_f ⊗ (1/(2σ_p²))·C⁻¹,    W_φ = I_f ⊗ (1/(2σ_φ²))·C⁻¹
/// ```
///
/// The factor 2 is the variance doubling from between-receiver differencing.
pub fn dd_weight_matrices(
    config: &GnssConfig,
    geometry: &SatelliteGeometry,
    mode: WeightMode,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let c = dd_cofactor_matrix(geometry, mode);
    let c_inv = c
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("DD cofactor matrix is not positive definite".into()))?
        .inverse();
    let f = config.num_frequencies();
    let eye_f = DMatrix::<f64>::identity(f, f);
    let w_p = eye_f.kronecker(&(&c_inv / (2.0 * config.sigma_p().powi(2))));
    let w_phi = eye_f.kronecker(&(&c_inv / (2.0 * config.sigma_phi().powi(2))));
    Ok((w_p, w_phi))
}

/// DD direction matrix `G = DᵀḠ` (`(m−1) × 3`): row `k` is
/// `u_s − u_pivot` for the k-th non-pivot satellite.
pub fn dd_direction_matrix(geometry: &SatelliteGeometry) -> DMatrix<f64> {
    let d = differencing_matrix(geometry.num_satellites(), geometry.pivot())
        .expect("geometry guarantees m >= 2");
    d.transpose() * geometry.direction_matrix()
}

/// GNSS design matrices for the mixed model.
///
/// Returns `(Λ̄, A_G, G)` where, with rows ordered code-first then phase
/// (each frequency-major):
///
/// - `Λ̄` (`2f(m−1) × f(m−1)`) holds zeros on the code rows and the block
///   diagonal `Λ ⊗ I_{m−1}` on the phase rows — ambiguities enter phase
///   observations only;
/// - `A_G` (`2f(m−1) × 12`) stacks `G` in the three translation columns of
///   every observation block and zeros in the nine rotation columns;
/// - `G = DᵀḠ`.
pub fn gnss_design_matrices(
    config: &GnssConfig,
    geometry: &SatelliteGeometry,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let f = config.num_frequencies();
    let md = geometry.num_satellites() - 1;
    let g = dd_direction_matrix(geometry);

    let mut lambda_bar = DMatrix::zeros(2 * f * md, f * md);
    for (t, &lambda) in config.wavelengths().iter().enumerate() {
        for k in 0..md {
            lambda_bar[(f * md + t * md + k, t * md + k)] = lambda;
        }
    }

    let mut a_g = DMatrix::zeros(2 * f * md, 12);
    for block in 0..2 * f {
        a_g.view_mut((block * md, 0), (md, 3)).copy_from(&g);
    }

    (lambda_bar, a_g, g)
}

/// One epoch of DD observations: `f(m−1)` code and `f(m−1)` phase entries,
/// both in metres, frequency-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DdObservations {
    pub dd_code: DVector<f64>,
    pub dd_phase: DVector<f64>,
}

impl DdObservations {
    /// The stacked observation vector `y_G = [Δpᵀ, Δφᵀ]ᵀ`.
    pub fn stacked(&self) -> DVector<f64> {
        let mut y = DVector::zeros(self.dd_code.len() + self.dd_phase.len());
        y.rows_mut(0, self.dd_code.len()).copy_from(&self.dd_code);
        y.rows_mut(self.dd_code.len(), self.dd_phase.len())
            .copy_from(&self.dd_phase);
        y
    }
}

/// Synthesizes one epoch of DD observations.
///
/// The signal part is `Δp_t = G·offset` and `Δφ_t = G·offset + λ_t·a_t`.
/// Noise is drawn at the undifferenced level — per receiver and satellite
/// with variance `(scale·σ)²/w_s` — and then differenced, so the DD noise
/// covariance is exactly `2σ²·DᵀW_G⁻¹D` without injecting the factor 2 by
/// hand. `offset` is the true position minus the linearization point,
/// expressed in the same frame as the direction matrix.
pub fn simulate_dd_observations<R: Rng + ?Sized>(
    config: &GnssConfig,
    geometry: &SatelliteGeometry,
    mode: WeightMode,
    offset: &Vector3<f64>,
    ambiguities: &[i64],
    noise_scale: f64,
    rng: &mut R,
) -> Result<DdObservations> {
    let f = config.num_frequencies();
    let m = geometry.num_satellites();
    let md = m - 1;
    if ambiguities.len() != f * md {
        return Err(Error::InvalidArgument(format!(
            "expected {} ambiguities ({} frequencies × {} pairs), got {}",
            f * md,
            f,
            md,
            ambiguities.len()
        )));
    }
    if !(noise_scale >= 0.0) {
        return Err(Error::InvalidArgument("noise scale must be >= 0".into()));
    }

    let g = dd_direction_matrix(geometry);
    let d = differencing_matrix(m, geometry.pivot())?;
    let weights = geometry.weights(mode);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    // Draws one DD noise vector: two receivers' worth of per-satellite
    // noise, differenced through D.
    let mut dd_noise = |sigma: f64| -> DVector<f64> {
        if noise_scale == 0.0 {
            return DVector::zeros(md);
        }
        let mut between = DVector::zeros(m);
        for s in 0..m {
            let std = noise_scale * sigma / weights[s].sqrt();
            let rover: f64 = unit.sample(rng) * std;
            let base: f64 = unit.sample(rng) * std;
            between[s] = rover - base;
        }
        d.transpose() * between
    };

    let signal = &g * offset;
    let mut code = DVector::zeros(f * md);
    let mut phase = DVector::zeros(f * md);
    for t in 0..f {
        let lambda = config.wavelengths()[t];
        let code_noise = dd_noise(config.sigma_p());
        let phase_noise = dd_noise(config.sigma_phi());
        for k in 0..md {
            let a = ambiguities[t * md + k] as f64;
            code[t * md + k] = signal[k] + code_noise[k];
            phase[t * md + k] = signal[k] + lambda * a + phase_noise[k];
        }
    }

    Ok(DdObservations {
        dd_code: code,
        dd_phase: phase,
    })
}
