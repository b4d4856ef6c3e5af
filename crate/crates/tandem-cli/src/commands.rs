//! Row builders and reports behind the subcommands.
//!
//! Everything here is a pure function of the configuration (plus, for
//! `solve_epoch_report`, the bundle), so identical inputs always render
//! identical bytes. Randomized inputs — random constellations and annulus
//! keypoint placements — draw from RNG streams derived from the run seed
//! and the sweep coordinates, which keeps every row independent of
//! evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use tandem::adop::{self, Scenario, SweepRow};
use tandem::ambiguity::{resolve, AmbiguityProblem, FixPolicy};
use tandem::config::{CliConfig, FixGate};
use tandem::fusion::{EpochBundle, EstimatorOptions};
use tandem::sim;
use tandem::{Error, Result};

/// The RNG for one sweep cell: stream `(m << 32) | lane` of the run seed.
/// Lane 0 draws the constellation (when the skyplot is random), so every
/// variant at the same `m` shares its geometry; lanes 1.. draw keypoints.
fn cell_rng(seed: u64, m: usize, lane: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((m as u64) << 32) | lane);
    rng
}

/// The fix gate the configuration asks for.
pub fn fix_policy(cfg: &CliConfig) -> FixPolicy {
    match cfg.run.fix_policy {
        FixGate::Threshold => FixPolicy::Threshold(cfg.run.fix_threshold),
        FixGate::Always => FixPolicy::Always,
    }
}

/// One ADOP-scan row per (constellation size, variant), sizes ascending,
/// variants in configuration order.
pub fn adop_scan_rows(cfg: &CliConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    if cfg.run.variants.is_empty() {
        return Err(Error::Config(
            "run.variants is empty; an ADOP scan needs at least one variant such as f1 or f1+lidar"
                .into(),
        ));
    }
    let mut rows = Vec::new();
    for m in cfg.run.m_min..=cfg.run.m_max {
        let geometry = sim::satellite_geometry_for(cfg, m, &mut cell_rng(cfg.run.seed, m, 0))?;
        for (index, variant) in cfg.run.variants.iter().enumerate() {
            let config = cfg.gnss_config_for(variant.frequencies)?;
            let row = if variant.with_lidar {
                let mut rng = cell_rng(cfg.run.seed, m, index as u64 + 1);
                sim::sweep_row_redrawing(
                    &config,
                    &geometry,
                    cfg.gnss.weight_mode,
                    cfg.lidar.num_keypoints,
                    cfg.lidar.sigma_l,
                    &mut rng,
                )?
            } else {
                let scenario = Scenario {
                    config,
                    geometry: geometry.clone(),
                    weight_mode: cfg.gnss.weight_mode,
                    lidar: None,
                };
                adop::sweep_row(&scenario)?
            };
            rows.push(row);
        }
    }
    Ok(rows)
}

/// One ratio-curve row per constellation size: the exact ADOP-ratio plus
/// its three one-eigenvalue approximations, for the configured frequency
/// count and one seeded keypoint placement per size.
pub fn ratio_curve_rows(cfg: &CliConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    if !cfg.lidar.enabled {
        return Err(Error::Config(
            "lidar.enabled = false; a ratio curve needs the lidar layout".into(),
        ));
    }
    let config = cfg.gnss_config()?;
    let mut rows = Vec::new();
    for m in cfg.run.m_min..=cfg.run.m_max {
        let geometry = sim::satellite_geometry_for(cfg, m, &mut cell_rng(cfg.run.seed, m, 0))?;
        let mut rng = cell_rng(cfg.run.seed, m, 1);
        rows.push(sim::sweep_row_redrawing(
            &config,
            &geometry,
            cfg.gnss.weight_mode,
            cfg.lidar.num_keypoints,
            cfg.lidar.sigma_l,
            &mut rng,
        )?);
    }
    Ok(rows)
}

/// Renders a header plus one line per row, with a trailing newline.
pub fn render_csv<I>(header: &str, rows: I) -> String
where
    I: IntoIterator<Item = String>,
{
    let mut text = String::from(header);
    text.push('\n');
    for row in rows {
        text.push_str(&row);
        text.push('\n');
    }
    text
}

/// Solves one epoch bundle and reports the outcome as JSON: the float
/// solution always; ADOP, the bootstrapped success rate, the integer fix,
/// and the fixed position whenever the bundle carries ambiguities. The fix
/// gate comes from the run configuration.
pub fn solve_epoch_report(bundle: &EpochBundle, cfg: &CliConfig) -> Result<Value> {
    let solution = bundle.solve(&EstimatorOptions::default())?;
    let position = solution.position();
    let q_pos = solution.position_covariance();

    let mut report = json!({
        "converged": solution.converged,
        "iterations": solution.iterations,
        "objective": solution.objective,
        "num_ambiguities": solution.num_ambiguities(),
        "num_keypoints": bundle.lidar.as_ref().map_or(0, |l| l.keypoints.len()),
        "num_satellites": bundle.gnss.as_ref().map_or(0, |g| g.elevations_deg.len()),
        "float_position": [position.x, position.y, position.z],
        "float_position_std": [
            q_pos[(0, 0)].sqrt(),
            q_pos[(1, 1)].sqrt(),
            q_pos[(2, 2)].sqrt(),
        ],
        "adop": Value::Null,
        "bootstrap_ps": Value::Null,
        "accepted": Value::Null,
        "float_ambiguities": Value::Null,
        "fixed_ambiguities": Value::Null,
        "ils_squared_norm": Value::Null,
        "second_squared_norm": Value::Null,
        "fixed_position": Value::Null,
    });

    if solution.num_ambiguities() > 0 {
        let outcome = resolve(&AmbiguityProblem::from_float_solution(&solution)?, fix_policy(cfg))?;
        let fields = report.as_object_mut().expect("report is an object");
        fields.insert("adop".into(), json!(adop::adop(&solution.ambiguity_covariance())?));
        fields.insert("bootstrap_ps".into(), json!(outcome.success_rate));
        fields.insert("accepted".into(), json!(outcome.accepted));
        fields.insert(
            "float_ambiguities".into(),
            json!(solution.ambiguities().as_slice()),
        );
        fields.insert("fixed_ambiguities".into(), json!(outcome.fixed));
        fields.insert("ils_squared_norm".into(), json!(outcome.squared_norm));
        fields.insert("second_squared_norm".into(), json!(outcome.second_norm));
        if let Some(rest) = &outcome.fixed_rest {
            fields.insert("fixed_position".into(), json!([rest[0], rest[1], rest[2]]));
        }
    }

    Ok(report)
}
