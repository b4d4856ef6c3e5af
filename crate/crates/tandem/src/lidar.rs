//! Lidar keypoint observation model and map registration.
//!
//! The scanner measures keypoints `y_j` in its own sensor (l-) frame; a
//! georeferenced reference map supplies their counterparts `c_j` in the
//! earth (e-) frame. Each correspondence contributes three coordinate
//! observations through the rigid-body condition
//!
//! ```text
//! b + R·y_j − c_j = 0
//! ```
//!
//! where `b` is the sensor position and `R` the sensor attitude. The mixed
//! model estimates `b` together with all nine entries of `vec(R)` — the
//! Kronecker structure of the Jacobians below follows from
//! `R·y = (yᵀ ⊗ I₃)·vec(R)`.
//!
//! Correspondences arrive pre-matched but possibly contaminated;
//! [`ransac_register`] finds the consensus set with a closed-form rigid
//! alignment ([`estimate_rigid_transform`]) as the hypothesis model and
//! reports the inlier residual RMS, which doubles as the measurement
//! standard deviation `σ_L` of the weight model `W_L = (1/σ_L²)·I`.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Matched keypoint correspondences with their measurement precision.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet {
    rover: Vec<Vector3<f64>>,
    reference: Vec<Vector3<f64>>,
    sigma_l: f64,
}

impl KeypointSet {
    /// Builds a correspondence set. At least four pairs are required — the
    /// theoretical minimum for the twelve pose unknowns — and `sigma_l`
    /// must be positive.
    pub fn new(
        rover: Vec<Vector3<f64>>,
        reference: Vec<Vector3<f64>>,
        sigma_l: f64,
    ) -> Result<Self> {
        if rover.len() != reference.len() {
            return Err(Error::InvalidArgument(format!(
                "rover and reference point counts differ ({} vs {})",
                rover.len(),
                reference.len()
            )));
        }
        if rover.len() < 4 {
            return Err(Error::InvalidArgument(format!(
                "at least 4 keypoint pairs are required, got {}",
                rover.len()
            )));
        }
        if !(sigma_l > 0.0) {
            return Err(Error::InvalidArgument("sigma_l must be positive".into()));
        }
        Ok(KeypointSet {
            rover,
            reference,
            sigma_l,
        })
    }

    /// Parses the keypoint CSV interchange format with header
    /// `x_l,y_l,z_l,x_e,y_e,z_e` (sensor-frame point, then map point, both
    /// in metres). The precision `sigma_l` is not part of the file.
    pub fn from_csv_str(text: &str, sigma_l: f64) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::Parse {
            line: 1,
            message: "empty keypoint file".into(),
        })?;
        if header.trim() != "x_l,y_l,z_l,x_e,y_e,z_e" {
            return Err(Error::Parse {
                line: 1,
                message: format!(
                    "expected header 'x_l,y_l,z_l,x_e,y_e,z_e', found '{}'",
                    header.trim()
                ),
            });
        }
        let mut rover = Vec::new();
        let mut reference = Vec::new();
        for (idx, line) in lines {
            let line_no = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            if fields.len() != 6 {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected 6 fields, found {}", fields.len()),
                });
            }
            let mut vals = [0.0f64; 6];
            for (k, field) in fields.iter().enumerate() {
                vals[k] = field.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("invalid number '{field}'"),
                })?;
                if !vals[k].is_finite() {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("non-finite coordinate '{field}'"),
                    });
                }
            }
            rover.push(Vector3::new(vals[0], vals[1], vals[2]));
            reference.push(Vector3::new(vals[3], vals[4], vals[5]));
        }
        Self::new(rover, reference, sigma_l)
    }

    /// Number of correspondences `n`.
    pub fn len(&self) -> usize {
        self.rover.len()
    }

    /// Always false: the constructor requires at least four pairs.
    pub fn is_empty(&self) -> bool {
        self.rover.is_empty()
    }

    /// Sensor-frame points.
    pub fn rover(&self) -> &[Vector3<f64>] {
        &self.rover
    }

    /// Map (e-frame) points.
    pub fn reference(&self) -> &[Vector3<f64>] {
        &self.reference
    }

    /// Per-coordinate measurement standard deviation, metres.
    pub fn sigma_l(&self) -> f64 {
        self.sigma_l
    }

    /// Extracts the given correspondences (e.g. a RANSAC inlier set) with
    /// an updated precision.
    pub fn subset(&self, indices: &[usize], sigma_l: f64) -> Result<Self> {
        let mut rover = Vec::with_capacity(indices.len());
        let mut reference = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidArgument(format!(
                    "index {i} out of range for {} keypoints",
                    self.len()
                )));
            }
            rover.push(self.rover[i]);
            reference.push(self.reference[i]);
        }
        Self::new(rover, reference, sigma_l)
    }
}

/// A rigid transform from the sensor frame to the e-frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidPose {
    pub fn identity() -> Self {
        RigidPose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Applies the transform: `b + R·p`.
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.translation + self.rotation * p
    }

    /// The 12-vector of WLS pose unknowns `[bᵀ, vec(R)ᵀ]ᵀ` with `vec`
    /// column-stacking the rotation.
    pub fn param_vector(&self) -> DVector<f64> {
        let mut x = DVector::zeros(12);
        x.rows_mut(0, 3).copy_from(&self.translation);
        for (k, v) in self.rotation.as_slice().iter().enumerate() {
            x[3 + k] = *v;
        }
        x
    }

    /// Rebuilds a pose from the 12-parameter vector (no orthonormalization).
    pub fn from_param_vector(x: &DVector<f64>) -> Result<Self> {
        if x.len() != 12 {
            return Err(Error::InvalidArgument(format!(
                "pose parameter vector must have 12 entries, got {}",
                x.len()
            )));
        }
        let translation = Vector3::new(x[0], x[1], x[2]);
        let rotation = Matrix3::from_column_slice(&x.as_slice()[3..12]);
        Ok(RigidPose {
            rotation,
            translation,
        })
    }

    /// Projects the rotation onto the nearest proper rotation (orthogonal
    /// Procrustes); used after unconstrained WLS, which treats the nine
    /// rotation entries as free parameters.
    pub fn orthonormalized(&self) -> Result<Self> {
        let svd = self.rotation.svd(true, true);
        let (u, v_t) = (
            svd.u.ok_or_else(|| Error::Numerical("SVD of rotation failed".into()))?,
            svd.v_t
                .ok_or_else(|| Error::Numerical("SVD of rotation failed".into()))?,
        );
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            let mut u_fixed = u;
            u_fixed.column_mut(2).neg_mut();
            r = u_fixed * v_t;
        }
        Ok(RigidPose {
            rotation: r,
            translation: self.translation,
        })
    }
}

/// Outcome of a robust registration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegistrationReport {
    /// Rotation of the final pose, row-major.
    pub rotation_row_major: [[f64; 3]; 3],
    /// Translation of the final pose, metres.
    pub translation: [f64; 3],
    /// Indices of the consensus correspondences, ascending.
    pub inlier_indices: Vec<usize>,
    /// RMS residual distance over the inliers, metres — the measured σ_L.
    pub sigma_l: f64,
    /// Scaled registration error of the inlier fit (registered rover points
    /// against their map counterparts).
    pub sre: f64,
}

impl RegistrationReport {
    /// The estimated pose as a [`RigidPose`].
    pub fn pose(&self) -> RigidPose {
        let r = &self.rotation_row_major;
        RigidPose {
            rotation: Matrix3::new(
                r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
            ),
            translation: Vector3::new(
                self.translation[0],
                self.translation[1],
                self.translation[2],
            ),
        }
    }

    fn from_parts(pose: &RigidPose, inliers: Vec<usize>, sigma_l: f64, sre: f64) -> Self {
        let r = &pose.rotation;
        RegistrationReport {
            rotation_row_major: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [pose.translation[0], pose.translation[1], pose.translation[2]],
            inlier_indices: inliers,
            sigma_l,
            sre,
        }
    }
}

/// Jacobians and misclosure of the keypoint conditions at a given pose.
///
/// Returns `(A_L, B_Lᵀ, w_L)` where, per keypoint `j`,
///
/// - the `3×12` design block of `A_L` is `[I₃ | y_jᵀ ⊗ I₃]` (three
///   translation columns, nine rotation columns),
/// - `B_Lᵀ = I_n ⊗ R` is the measurement Jacobian at the current rotation,
/// - `w_L` stacks the misclosures `b + R·y_j − c_j`.
pub fn lidar_jacobians(
    keypoints: &KeypointSet,
    pose: &RigidPose,
) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    let n = keypoints.len();
    let mut a = DMatrix::zeros(3 * n, 12);
    let mut b_t = DMatrix::zeros(3 * n, 3 * n);
    let mut w = DVector::zeros(3 * n);
    for j in 0..n {
        let y = &keypoints.rover()[j];
        for r in 0..3 {
            a[(3 * j + r, r)] = 1.0;
        }
        // Rotation block: column 3 + 3*col + row multiplies R[(row, col)],
        // i.e. (yᵀ ⊗ I₃) for column-stacked vec(R).
        for col in 0..3 {
            for row in 0..3 {
                a[(3 * j + row, 3 + 3 * col + row)] = y[col];
            }
        }
        b_t.view_mut((3 * j, 3 * j), (3, 3)).copy_from(&pose.rotation);
        let resid = pose.apply(y) - keypoints.reference()[j];
        w.rows_mut(3 * j, 3).copy_from(&resid);
    }
    (a, b_t, w)
}

/// Isotropic keypoint weight matrix `W_L = (1/σ_L²)·I_{3n}`.
pub fn lidar_weight_matrix(n: usize, sigma_l: f64) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::InvalidArgument("no keypoints".into()));
    }
    if !(sigma_l > 0.0) {
        return Err(Error::InvalidArgument(
            "sigma_l must be positive for a finite weight".into(),
        ));
    }
    Ok(DMatrix::identity(3 * n, 3 * n) / sigma_l.powi(2))
}

/// Closed-form least-squares rigid alignment (Kabsch) of paired points:
/// finds `(R, b)` minimizing `Σ‖b + R·y_j − c_j‖²` with `det(R) = +1`.
///
/// Needs at least three non-collinear pairs; exact on noise-free data.
pub fn estimate_rigid_transform(
    rover: &[Vector3<f64>],
    reference: &[Vector3<f64>],
) -> Result<RigidPose> {
    if rover.len() != reference.len() {
        return Err(Error::InvalidArgument(format!(
            "point counts differ ({} vs {})",
            rover.len(),
            reference.len()
        )));
    }
    let n = rover.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "rigid alignment needs at least 3 pairs, got {n}"
        )));
    }

    let centroid_y: Vector3<f64> = rover.iter().sum::<Vector3<f64>>() / n as f64;
    let centroid_c: Vector3<f64> = reference.iter().sum::<Vector3<f64>>() / n as f64;

    let mut h = Matrix3::zeros();
    for (y, c) in rover.iter().zip(reference.iter()) {
        h += (y - centroid_y) * (c - centroid_c).transpose();
    }

    let svd = h.svd(true, true);
    let u = svd
        .u
        .ok_or_else(|| Error::Numerical("SVD of cross-covariance failed".into()))?;
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numerical("SVD of cross-covariance failed".into()))?;

    // Collinear (or coincident) source points leave the rotation about the
    // point axis unobservable: the two smallest singular values vanish.
    let s = svd.singular_values;
    if s[0] <= 0.0 || s[1] / s[0] < 1e-12 {
        return Err(Error::DegenerateGeometry(
            "keypoints are collinear; rotation is unobservable".into(),
        ));
    }

    let mut r = v_t.transpose() * u.transpose();
    if r.determinant() < 0.0 {
        // Reflection case: flip the axis of the smallest singular value.
        let mut v = v_t.transpose();
        v.column_mut(2).neg_mut();
        r = v * u.transpose();
    }
    let b = centroid_c - r * centroid_y;
    Ok(RigidPose {
        rotation: r,
        translation: b,
    })
}

/// Robust registration by random sample consensus.
///
/// Repeatedly fits [`estimate_rigid_transform`] to random 4-point minimal
/// samples, keeps the hypothesis with the largest consensus set under
/// `inlier_threshold` (residual distance), then refines on the consensus
/// set, re-selects inliers with the refined pose, and refits once more.
/// Deterministic for a fixed `seed`.
pub fn ransac_register(
    keypoints: &KeypointSet,
    inlier_threshold: f64,
    max_iterations: usize,
    seed: u64,
) -> Result<RegistrationReport> {
    const SAMPLE: usize = 4;
    let n = keypoints.len();
    if !(inlier_threshold > 0.0) {
        return Err(Error::InvalidArgument("inlier threshold must be positive".into()));
    }
    if max_iterations == 0 {
        return Err(Error::InvalidArgument("need at least one iteration".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classify = |pose: &RigidPose| -> Vec<usize> {
        (0..n)
            .filter(|&j| {
                (pose.apply(&keypoints.rover()[j]) - keypoints.reference()[j]).norm()
                    < inlier_threshold
            })
            .collect()
    };

    let mut best: Option<(usize, RigidPose)> = None;
    for _ in 0..max_iterations {
        let sample = sample_indices(&mut rng, n, SAMPLE);
        let ys: Vec<Vector3<f64>> = sample.iter().map(|&j| keypoints.rover()[j]).collect();
        let cs: Vec<Vector3<f64>> = sample.iter().map(|&j| keypoints.reference()[j]).collect();
        let Ok(pose) = estimate_rigid_transform(&ys, &cs) else {
            continue; // degenerate minimal sample
        };
        let count = classify(&pose).len();
        if best.as_ref().map_or(true, |(c, _)| count > *c) {
            best = Some((count, pose));
        }
    }

    let Some((count, pose)) = best else {
        return Err(Error::RegistrationFailed(
            "every minimal sample was degenerate".into(),
        ));
    };
    if count < SAMPLE {
        return Err(Error::RegistrationFailed(format!(
            "largest consensus set has {count} correspondences; 4 are required"
        )));
    }

    // Refine on the consensus set, re-classify, refit once more.
    let mut inliers = classify(&pose);
    for _ in 0..2 {
        let ys: Vec<Vector3<f64>> = inliers.iter().map(|&j| keypoints.rover()[j]).collect();
        let cs: Vec<Vector3<f64>> = inliers.iter().map(|&j| keypoints.reference()[j]).collect();
        let refined = estimate_rigid_transform(&ys, &cs)?;
        let updated = classify(&refined);
        if updated.len() < SAMPLE {
            return Err(Error::RegistrationFailed(
                "refined pose lost the consensus set".into(),
            ));
        }
        let done = updated == inliers;
        inliers = updated;
        if done {
            let registered: Vec<Vector3<f64>> =
                inliers.iter().map(|&j| refined.apply(&keypoints.rover()[j])).collect();
            let truth: Vec<Vector3<f64>> =
                inliers.iter().map(|&j| keypoints.reference()[j]).collect();
            let rms = residual_rms(&registered, &truth);
            let sre = scaled_registration_error(&registered, &truth)?;
            return Ok(RegistrationReport::from_parts(&refined, inliers, rms, sre));
        }
    }

    // Inlier set still changing after the refinement passes — accept the
    // final classification.
    let ys: Vec<Vector3<f64>> = inliers.iter().map(|&j| keypoints.rover()[j]).collect();
    let cs: Vec<Vector3<f64>> = inliers.iter().map(|&j| keypoints.reference()[j]).collect();
    let final_pose = estimate_rigid_transform(&ys, &cs)?;
    let registered: Vec<Vector3<f64>> = ys.iter().map(|y| final_pose.apply(y)).collect();
    let rms = residual_rms(&registered, &cs);
    let sre = scaled_registration_error(&registered, &cs)?;
    Ok(RegistrationReport::from_parts(&final_pose, inliers, rms, sre))
}

/// Draws `k` distinct indices from `0..n` (partial Fisher-Yates).
fn sample_indices<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    debug_assert!(k <= n);
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

fn residual_rms(registered: &[Vector3<f64>], truth: &[Vector3<f64>]) -> f64 {
    let sum: f64 = registered
        .iter()
        .zip(truth.iter())
        .map(|(p, u)| (p - u).norm_squared())
        .sum();
    (sum / registered.len() as f64).sqrt()
}

/// Scaled registration error: the mean over points of registration error
/// divided by the point's distance from the registered cloud's centroid,
///
/// ```text
/// SRE = (1/q)·Σ_k ‖p_k − u_k‖ / ‖p_k − p̄‖
/// ```
///
/// Points coincident with the centroid (distance < 1e−12) are excluded
/// from the sum — the quotient is undefined there.
pub fn scaled_registration_error(
    registered: &[Vector3<f64>],
    ground_truth: &[Vector3<f64>],
) -> Result<f64> {
    if registered.len() != ground_truth.len() {
        return Err(Error::InvalidArgument(format!(
            "point counts differ ({} vs {})",
            registered.len(),
            ground_truth.len()
        )));
    }
    if registered.is_empty() {
        return Err(Error::InvalidArgument("empty point lists".into()));
    }
    let centroid: Vector3<f64> =
        registered.iter().sum::<Vector3<f64>>() / registered.len() as f64;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, u) in registered.iter().zip(ground_truth.iter()) {
        let spread = (p - centroid).norm();
        if spread < 1e-12 {
            continue;
        }
        sum += (p - u).norm() / spread;
        count += 1;
    }
    if count == 0 {
        return Err(Error::DegenerateGeometry(
            "every point coincides with the centroid".into(),
        ));
    }
    Ok(sum / count as f64)
}
