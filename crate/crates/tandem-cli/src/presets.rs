//! Named parameter sets for the canned analysis scenarios.
//!
//! Each preset pins every setting one of the standard sweeps needs, so a
//! single `--preset` flag reproduces it end to end; `--set` and `--seed`
//! still apply on top. The `fig*` names follow the figures of the study the
//! scenarios tabulate: `fig2*` are ratio curves, `fig4*` are ADOP scans,
//! `fig6*` are placement-averaged ADOP grids, and the `l1_*` pair are
//! Monte-Carlo simulation runs.

use tandem::config::{CliConfig, FixGate, SkyplotChoice, Variant, WavelengthSet};
use tandem::gnss::WeightMode;

/// Every preset name, in documentation order.
pub const PRESET_NAMES: &[&str] = &[
    "fig2a",
    "fig2b",
    "fig4a",
    "fig4b",
    "fig6a",
    "fig6b",
    "fig6c",
    "l1_lidar",
    "l1_only_far",
];

/// Equal-weight analysis baseline: normalized wavelengths (so the
/// phase/code standard-deviation ratio is exactly `phase_code_ratio`), the
/// reference skyplot, and the dense 44-keypoint lidar layout.
fn analysis_base() -> CliConfig {
    let mut cfg = CliConfig::default();
    cfg.gnss.wavelength_set = WavelengthSet::Normalized;
    cfg.gnss.weight_mode = WeightMode::Equal;
    cfg
}

/// Elevation-weighted grid baseline shared by the `fig6*` presets:
/// constellation sizes 2–12 against the default 27-step σ_L axis, 100
/// keypoint placements per cell.
fn grid_base() -> CliConfig {
    let mut cfg = CliConfig::default();
    cfg.gnss.wavelength_set = WavelengthSet::Normalized;
    cfg.run.m_max = 12;
    cfg
}

/// Looks up a named preset.
pub fn preset(name: &str) -> Option<CliConfig> {
    let cfg = match name {
        // Ratio curves: exact ADOP-ratio and its three one-eigenvalue
        // approximations versus constellation size, single frequency,
        // 44 keypoints.
        "fig2a" => {
            // Fine keypoint matching (σ_L = 0.15 m).
            analysis_base()
        }
        "fig2b" => {
            // Coarse keypoint matching (σ_L = 0.84 m).
            let mut cfg = analysis_base();
            cfg.lidar.sigma_l = 0.84;
            cfg
        }
        // ADOP scans: GNSS-only versus lidar-aided ADOP and bootstrapped
        // success rate for every constellation size.
        "fig4a" => {
            // Nominal code precision (σ_p = 0.2 m), fine matching.
            let mut cfg = analysis_base();
            cfg.run.variants = vec![
                Variant::parse("f1").expect("literal token"),
                Variant::parse("f2").expect("literal token"),
                Variant::parse("f1+lidar").expect("literal token"),
                Variant::parse("f2+lidar").expect("literal token"),
            ];
            cfg
        }
        "fig4b" => {
            // Pessimistic code precision (σ_p = 0.6 m), coarse matching.
            let mut cfg = preset("fig4a")?;
            cfg.gnss.sigma_p = 0.6;
            cfg.lidar.sigma_l = 0.84;
            cfg
        }
        // Placement-averaged integrated-ADOP grids over (m, σ_L).
        "fig6a" => {
            // Single frequency, sparse 4-keypoint registration.
            let mut cfg = grid_base();
            cfg.lidar.num_keypoints = 4;
            cfg
        }
        "fig6b" => {
            // Dual frequency, sparse 4-keypoint registration.
            let mut cfg = grid_base();
            cfg.gnss.frequencies = 2;
            cfg.lidar.num_keypoints = 4;
            cfg
        }
        "fig6c" => {
            // Single frequency, dense 44-keypoint registration.
            grid_base()
        }
        // Monte-Carlo simulation runs with the physical L1 wavelength.
        "l1_lidar" => {
            // Lidar-aided single-frequency positioning: six reference
            // satellites, 44 keypoints at σ_L = 0.15 m, success-rate-gated
            // fixing — the library defaults, pinned here by name.
            CliConfig::default()
        }
        "l1_only_far" => {
            // GNSS-only single-frequency positioning on the sparse
            // five-satellite skyplot with unconditional (full) fixing.
            let mut cfg = CliConfig::default();
            cfg.gnss.num_satellites = 5;
            cfg.gnss.skyplot = SkyplotChoice::Sparse;
            cfg.gnss.weight_mode = WeightMode::Equal;
            cfg.lidar.enabled = false;
            cfg.run.fix_policy = FixGate::Always;
            cfg
        }
        _ => return None,
    };
    Some(cfg)
}
