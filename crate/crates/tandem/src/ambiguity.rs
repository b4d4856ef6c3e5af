//! Integer ambiguity resolution: decorrelation, integer least squares,
//! bootstrapped success rate, and fixed-solution backsubstitution.
//!
//! The float solution delivers `â` with covariance `Q_ââ`. Resolution
//! proceeds in the usual stages:
//!
//! 1. factor `Q_ââ = LᵀDL` (unit lower triangular `L`, diagonal `D`);
//! 2. decorrelate with an integer Gauss transform + permutation `Z`
//!    (unimodular, so `ǎ = Z⁻ᵀž` maps integers to integers);
//! 3. search the transformed space for the integer minimizer of
//!    `(ž − z)ᵀ Q_žž⁻¹ (ž − z)` by sequential conditional rounding with
//!    a shrinking ellipsoid;
//! 4. gate the fix (success-rate threshold) and update the remaining
//!    parameters through the cross covariance.
//!
//! The factorization convention matches the search: `L` carries the
//! conditioning of each ambiguity on the ones *after* it, so the search
//! walks indices from last to first.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::fusion::FloatSolution;
use crate::{Error, Result};

/// Abort threshold for the ellipsoid search loop; a healthy decorrelated
/// problem terminates after visiting a tiny fraction of this.
const SEARCH_LOOP_MAX: usize = 100_000;

/// Float ambiguities with the covariance blocks needed to fix them and to
/// propagate the fix into the remaining parameters.
#[derive(Debug, Clone)]
pub struct AmbiguityProblem {
    pub float_ambiguities: DVector<f64>,
    pub q_aa: DMatrix<f64>,
    /// Cross covariance `Q_ĝâ` of the non-ambiguity parameters with the
    /// ambiguities (may be 0×n when only the fix itself is of interest).
    pub q_ga: DMatrix<f64>,
    /// Non-ambiguity parameter estimates `ĝ`.
    pub rest: DVector<f64>,
    /// Covariance `Q_ĝĝ` of the non-ambiguity parameters.
    pub q_gg: DMatrix<f64>,
}

impl AmbiguityProblem {
    /// Extracts the ambiguity blocks from a converged float solution.
    pub fn from_float_solution(solution: &FloatSolution) -> Result<Self> {
        if solution.num_ambiguities() == 0 {
            return Err(Error::InvalidArgument(
                "float solution carries no ambiguities".into(),
            ));
        }
        Ok(AmbiguityProblem {
            float_ambiguities: solution.ambiguities(),
            q_aa: solution.ambiguity_covariance(),
            q_ga: solution.cross_covariance(),
            rest: solution.rest(),
            q_gg: solution.rest_covariance(),
        })
    }

    /// A problem with only the ambiguity blocks populated.
    pub fn standalone(float_ambiguities: DVector<f64>, q_aa: DMatrix<f64>) -> Result<Self> {
        let n = float_ambiguities.len();
        if q_aa.nrows() != n || q_aa.ncols() != n {
            return Err(Error::InvalidArgument(format!(
                "covariance is {}x{}, expected {n}x{n}",
                q_aa.nrows(),
                q_aa.ncols()
            )));
        }
        Ok(AmbiguityProblem {
            float_ambiguities,
            q_aa,
            q_ga: DMatrix::zeros(0, n),
            rest: DVector::zeros(0),
            q_gg: DMatrix::zeros(0, 0),
        })
    }
}

/// `Q = LᵀDL` with unit lower-triangular `L` and positive diagonal `D`.
///
/// Errors with [`Error::Numerical`] when `Q` is not numerically positive
/// definite.
pub fn ltdl_factorize(q: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = q.nrows();
    if q.ncols() != n || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "LtDL factorization needs a square nonempty matrix, got {}x{}",
            q.nrows(),
            q.ncols()
        )));
    }
    let mut a = q.clone();
    let mut l = DMatrix::zeros(n, n);
    let mut d = DVector::zeros(n);
    for i in (0..n).rev() {
        d[i] = a[(i, i)];
        if !(d[i] > 0.0) {
            return Err(Error::Numerical(format!(
                "LtDL pivot {i} is {:.3e}; covariance is not positive definite",
                d[i]
            )));
        }
        let scale = d[i].sqrt();
        for j in 0..=i {
            l[(i, j)] = a[(i, j)] / scale;
        }
        for j in 0..i {
            for k in 0..=j {
                a[(j, k)] -= l[(i, k)] * l[(i, j)];
            }
        }
        for j in 0..=i {
            l[(i, j)] /= l[(i, i)];
        }
    }
    Ok((l, d))
}

/// Result of decorrelating an ambiguity covariance.
#[derive(Debug, Clone)]
pub struct Decorrelation {
    /// Unimodular transform; decorrelated ambiguities are `z = Zᵀ·a`.
    pub z: DMatrix<f64>,
    /// Transformed float ambiguities `ž = Zᵀ·â`.
    pub transformed: DVector<f64>,
    /// Unit lower-triangular factor of the transformed covariance.
    pub l: DMatrix<f64>,
    /// Diagonal factor of the transformed covariance.
    pub d: DVector<f64>,
}

impl Decorrelation {
    /// Transformed covariance `Q_žž = Zᵀ·Q·Z`, reassembled from the factors
    /// as `LᵀDL`.
    pub fn transformed_covariance(&self) -> DMatrix<f64> {
        self.l.transpose() * DMatrix::from_diagonal(&self.d) * &self.l
    }
}

/// Integer Gauss transformation on column `j` against row `i` of `L`:
/// subtracts `mu = round(L[i][j])` times ambiguity `j` from ambiguity `i`.
fn gauss_transform(
    l: &mut DMatrix<f64>,
    z: &mut DMatrix<f64>,
    a: &mut DVector<f64>,
    i: usize,
    j: usize,
) {
    let n = l.nrows();
    let mu = l[(i, j)].round();
    if mu != 0.0 {
        for k in i..n {
            l[(k, j)] -= mu * l[(k, i)];
        }
        for k in 0..n {
            z[(k, j)] -= mu * z[(k, i)];
        }
        a[j] -= mu * a[i];
    }
}

/// Swaps ambiguities `j` and `j+1` and updates the factors in place.
fn permute(
    l: &mut DMatrix<f64>,
    d: &mut DVector<f64>,
    j: usize,
    del: f64,
    z: &mut DMatrix<f64>,
    a: &mut DVector<f64>,
) {
    let n = l.nrows();
    let eta = d[j] / del;
    let lam = d[j + 1] * l[(j + 1, j)] / del;
    d[j] = eta * d[j + 1];
    d[j + 1] = del;
    for k in 0..j {
        let a0 = l[(j, k)];
        let a1 = l[(j + 1, k)];
        l[(j, k)] = -l[(j + 1, j)] * a0 + a1;
        l[(j + 1, k)] = eta * a0 + lam * a1;
    }
    l[(j + 1, j)] = lam;
    for k in (j + 2)..n {
        l.swap((k, j), (k, j + 1));
    }
    for k in 0..n {
        z.swap((k, j), (k, j + 1));
    }
    a.swap_rows(j, j + 1);
}

/// Decorrelates `(â, Q_ââ)` with an integer Gauss transform + symmetric
/// permutation pass (the classic lattice reduction used before the integer
/// search). The returned `Z` is unimodular.
pub fn decorrelate(
    float_ambiguities: &DVector<f64>,
    q_aa: &DMatrix<f64>,
) -> Result<Decorrelation> {
    let n = float_ambiguities.len();
    if n == 0 {
        return Err(Error::InvalidArgument("no ambiguities to decorrelate".into()));
    }
    let (mut l, mut d) = ltdl_factorize(q_aa)?;
    let mut z = DMatrix::<f64>::identity(n, n);
    let mut a = float_ambiguities.clone();

    // A single ambiguity needs no reduction; the loop below assumes n >= 2.
    if n > 1 {
        let mut j = n - 2;
        let mut k = n - 2;
        loop {
            if j <= k {
                for i in (j + 1)..n {
                    gauss_transform(&mut l, &mut z, &mut a, i, j);
                }
            }
            let del = d[j] + l[(j + 1, j)] * l[(j + 1, j)] * d[j + 1];
            if del + 1e-6 < d[j + 1] {
                permute(&mut l, &mut d, j, del, &mut z, &mut a);
                k = j;
                j = n - 2;
            } else if j == 0 {
                break;
            } else {
                j -= 1;
            }
        }
    }

    Ok(Decorrelation {
        z,
        transformed: a,
        l,
        d,
    })
}

/// Sequential conditional search for the `num_candidates` best integer
/// vectors of the decorrelated problem, returned best-first together with
/// their squared norms `(ž − z)ᵀQ⁻¹(ž − z)`.
fn search_decorrelated(
    l: &DMatrix<f64>,
    d: &DVector<f64>,
    zs: &DVector<f64>,
    num_candidates: usize,
) -> Result<Vec<(DVector<f64>, f64)>> {
    let n = zs.len();
    let m = num_candidates;
    let mut max_dist = f64::MAX;
    let mut candidates: Vec<DVector<f64>> = vec![DVector::zeros(n); m];
    let mut norms = vec![0.0f64; m];
    let mut stored = 0usize;
    let mut worst = 0usize;

    // s[(k, i)] accumulates the conditioning of level k on the integers
    // already chosen at levels k+1..n.
    let mut s = DMatrix::<f64>::zeros(n, n);
    let mut dist = vec![0.0f64; n];
    let mut zb = vec![0.0f64; n];
    let mut z = vec![0.0f64; n];
    let mut step = vec![0.0f64; n];

    let sgn = |x: f64| if x <= 0.0 { -1.0 } else { 1.0 };

    let mut k = n - 1;
    dist[k] = 0.0;
    zb[k] = zs[k];
    z[k] = zb[k].round();
    let mut y = zb[k] - z[k];
    step[k] = sgn(y);

    let mut finished = false;
    for _ in 0..SEARCH_LOOP_MAX {
        let newdist = dist[k] + y * y / d[k];
        if newdist < max_dist {
            if k != 0 {
                // Descend one level, conditioning the next ambiguity on the
                // integers chosen so far.
                k -= 1;
                dist[k] = newdist;
                for i in 0..=k {
                    s[(k, i)] = s[(k + 1, i)] + (z[k + 1] - zb[k + 1]) * l[(k + 1, i)];
                }
                zb[k] = zs[k] + s[(k, k)];
                z[k] = zb[k].round();
                y = zb[k] - z[k];
                step[k] = sgn(y);
            } else {
                // Full vector inside the ellipsoid: store or replace the
                // current worst, then try the next integer at this level.
                if stored < m {
                    if stored == 0 || newdist > norms[worst] {
                        worst = stored;
                    }
                    candidates[stored] = DVector::from_row_slice(&z);
                    norms[stored] = newdist;
                    stored += 1;
                } else {
                    if newdist < norms[worst] {
                        candidates[worst] = DVector::from_row_slice(&z);
                        norms[worst] = newdist;
                        worst = 0;
                        for i in 0..m {
                            if norms[worst] < norms[i] {
                                worst = i;
                            }
                        }
                    }
                    max_dist = norms[worst];
                }
                z[0] += step[0];
                y = zb[0] - z[0];
                step[0] = -step[0] - sgn(step[0]);
            }
        } else {
            // Ellipsoid boundary hit: back up (or stop at the root).
            if k == n - 1 {
                finished = true;
                break;
            }
            k += 1;
            z[k] += step[k];
            y = zb[k] - z[k];
            step[k] = -step[k] - sgn(step[k]);
        }
    }
    if !finished {
        return Err(Error::SearchExhausted(format!(
            "integer search visited more than {SEARCH_LOOP_MAX} nodes; \
             the ambiguity covariance is too ill-conditioned to enumerate"
        )));
    }

    let mut out: Vec<(DVector<f64>, f64)> = (0..stored)
        .map(|i| (candidates[i].clone(), norms[i]))
        .collect();
    out.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    Ok(out)
}

/// Integer least squares: the `num_candidates` best integer vectors for
/// `(â, Q_ââ)` in the *original* ambiguity domain, best-first, with their
/// squared norms.
///
/// Ties on the squared norm are broken toward the lexicographically
/// smallest original-domain vector so results are reproducible.
pub fn ils_search(
    float_ambiguities: &DVector<f64>,
    q_aa: &DMatrix<f64>,
    num_candidates: usize,
) -> Result<Vec<(Vec<i64>, f64)>> {
    if num_candidates == 0 {
        return Err(Error::InvalidArgument("num_candidates must be >= 1".into()));
    }
    let deco = decorrelate(float_ambiguities, q_aa)?;
    let raw = search_decorrelated(&deco.l, &deco.d, &deco.transformed, num_candidates)?;
    if raw.is_empty() {
        return Err(Error::SearchExhausted(
            "integer search terminated without a candidate".into(),
        ));
    }

    // Back-transform Zᵀǎ = ž, then verify the solve returned integers: Z is
    // unimodular so the inverse image of an integer vector is integer.
    let zt = deco.z.transpose();
    let lu = zt.lu();
    let mut out: Vec<(Vec<i64>, f64)> = Vec::with_capacity(raw.len());
    for (zvec, norm) in raw {
        let back = lu
            .solve(&zvec)
            .ok_or_else(|| Error::Numerical("decorrelation transform is singular".into()))?;
        let mut fixed = Vec::with_capacity(back.len());
        for v in back.iter() {
            let r = v.round();
            if (v - r).abs() > 1e-6 {
                return Err(Error::Numerical(format!(
                    "back-transformed ambiguity {v} is {:.2e} from an integer",
                    (v - r).abs()
                )));
            }
            fixed.push(r as i64);
        }
        out.push((fixed, norm));
    }

    // Stable sort: squared norm, then lexicographic on the integer vector.
    out.sort_by(|a, b| {
        a.1.partial_cmp(&b.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    Ok(out)
}

/// Bootstrapped success rate `∏ᵢ (2Φ(1/(2√dᵢ)) − 1)` over the decorrelated
/// conditional variances — a sharp, easily computed lower bound on the
/// integer least-squares success rate.
pub fn bootstrapped_success_rate(q_aa: &DMatrix<f64>) -> Result<f64> {
    let n = q_aa.nrows();
    let deco = decorrelate(&DVector::zeros(n), q_aa)?;
    let normal = Normal::new(0.0, 1.0)
        .map_err(|_| Error::Numerical("standard normal construction failed".into()))?;
    let mut p = 1.0;
    for i in 0..n {
        let arg = 1.0 / (2.0 * deco.d[i].sqrt());
        p *= 2.0 * normal.cdf(arg) - 1.0;
    }
    Ok(p.clamp(0.0, 1.0))
}

/// How the candidate fix is gated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FixPolicy {
    /// Accept when the bootstrapped success rate meets the threshold.
    Threshold(f64),
    /// Always accept the integer minimizer.
    Always,
}

impl Default for FixPolicy {
    fn default() -> Self {
        FixPolicy::Threshold(0.999)
    }
}

/// Outcome of the full resolution pipeline.
#[derive(Debug, Clone)]
pub struct AmbiguityOutcome {
    /// Best integer candidate.
    pub fixed: Vec<i64>,
    /// Its squared norm in the float metric.
    pub squared_norm: f64,
    /// Squared norm of the runner-up when one was requested and found.
    pub second_norm: Option<f64>,
    /// Bootstrapped success rate of the (decorrelated) problem.
    pub success_rate: f64,
    /// Whether the fix passed the policy gate.
    pub accepted: bool,
    /// Non-ambiguity parameters conditioned on the fix (when the problem
    /// carries them and the fix was accepted).
    pub fixed_rest: Option<DVector<f64>>,
    /// Covariance of the conditioned parameters.
    pub q_fixed_rest: Option<DMatrix<f64>>,
}

/// Conditions the non-ambiguity parameters on a fixed integer vector:
/// `ǧ = ĝ − Q_ĝâ Q_ââ⁻¹ (â − ǎ)` with covariance
/// `Q_ǧǧ = Q_ĝĝ − Q_ĝâ Q_ââ⁻¹ Q_âĝ`.
pub fn fix_and_backsubstitute(
    problem: &AmbiguityProblem,
    fixed: &[i64],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = problem.float_ambiguities.len();
    if fixed.len() != n {
        return Err(Error::InvalidArgument(format!(
            "fixed vector has {} entries, expected {n}",
            fixed.len()
        )));
    }
    let chol = problem
        .q_aa
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("ambiguity covariance is not positive definite".into()))?;
    let residual = DVector::from_iterator(
        n,
        problem
            .float_ambiguities
            .iter()
            .zip(fixed)
            .map(|(a, f)| a - *f as f64),
    );
    let solved = chol.solve(&residual);
    let rest = &problem.rest - &problem.q_ga * solved;
    let q_inv_qag = chol.solve(&problem.q_ga.transpose());
    let q_rest = &problem.q_gg - &problem.q_ga * q_inv_qag;
    Ok((rest, q_rest))
}

/// Full resolution pipeline: decorrelate, search (two candidates), gate by
/// the bootstrapped success rate, and — when accepted and the problem
/// carries them — condition the remaining parameters on the fix.
pub fn resolve(problem: &AmbiguityProblem, policy: FixPolicy) -> Result<AmbiguityOutcome> {
    let candidates = ils_search(&problem.float_ambiguities, &problem.q_aa, 2)?;
    let success_rate = bootstrapped_success_rate(&problem.q_aa)?;
    let accepted = match policy {
        FixPolicy::Always => true,
        FixPolicy::Threshold(t) => success_rate >= t,
    };
    let (fixed, squared_norm) = candidates[0].clone();
    let second_norm = candidates.get(1).map(|c| c.1);

    let (fixed_rest, q_fixed_rest) = if accepted && !problem.rest.is_empty() {
        let (g, q) = fix_and_backsubstitute(problem, &fixed)?;
        (Some(g), Some(q))
    } else {
        (None, None)
    };

    Ok(AmbiguityOutcome {
        fixed,
        squared_norm,
        second_norm,
        success_rate,
        accepted,
        fixed_rest,
        q_fixed_rest,
    })
}
