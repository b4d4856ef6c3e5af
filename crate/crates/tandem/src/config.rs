//! Flat text configuration for the analysis and simulation commands.
//!
//! The format is a small INI dialect: three known sections (`[gnss]`,
//! `[lidar]`, `[run]`), `key = value` pairs, `#` starts a comment anywhere
//! on a line. Unknown sections or keys are parse errors with line numbers
//! — a config that silently ignores a typo is worse than one that refuses
//! to load. Later assignments override earlier ones, and command-line
//! `section.key=value` overrides reuse the same assignment machinery.

use crate::gnss::{GnssConfig, WeightMode, GPS_L1_WAVELENGTH, GPS_L2_WAVELENGTH};
use crate::{Error, Result};

/// Which wavelengths the GNSS model carries.
///
/// The normalized set reproduces textbook dilution-of-precision numbers
/// (every carrier at `σ_φ / phase_code_ratio`); the physical sets are what
/// dual-frequency success-rate evaluation needs, since equal wavelengths
/// leave the widelane combination undetermined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WavelengthSet {
    /// GPS L1 only (`f = 1`).
    #[default]
    L1,
    /// GPS L1 + L2 (`f = 2`).
    L1L2,
    /// `frequencies` copies of `sigma_phi / phase_code_ratio`.
    Normalized,
}

/// Which satellite table the scenario draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SkyplotChoice {
    /// The pinned 15-satellite reference table, truncated to `m`.
    #[default]
    Reference,
    /// The pinned sparse 5-satellite table, truncated to `m`.
    Sparse,
    /// Random constellation above the elevation mask, minimum 15°
    /// separation, drawn from the run seed.
    Random,
}

/// `[gnss]` section.
#[derive(Debug, Clone, PartialEq)]
pub struct GnssSettings {
    /// Number of satellites `m`.
    pub num_satellites: usize,
    /// Frequency count for the normalized wavelength set (the physical
    /// sets imply their own count).
    pub frequencies: usize,
    pub wavelength_set: WavelengthSet,
    pub sigma_p: f64,
    pub sigma_phi: f64,
    /// `σ_φ/λ` for the normalized set.
    pub phase_code_ratio: f64,
    pub weight_mode: WeightMode,
    pub skyplot: SkyplotChoice,
    /// Elevation mask for random constellations, degrees.
    pub mask_deg: f64,
}

impl Default for GnssSettings {
    fn default() -> Self {
        GnssSettings {
            num_satellites: 6,
            frequencies: 1,
            wavelength_set: WavelengthSet::L1,
            sigma_p: 0.2,
            sigma_phi: 0.002,
            phase_code_ratio: 0.01,
            weight_mode: WeightMode::Elevation,
            skyplot: SkyplotChoice::Reference,
            mask_deg: 10.0,
        }
    }
}

/// `[lidar]` section.
#[derive(Debug, Clone, PartialEq)]
pub struct LidarSettings {
    pub enabled: bool,
    /// Keypoints per epoch.
    pub num_keypoints: usize,
    /// 3-D RMS keypoint match error, metres.
    pub sigma_l: f64,
    /// Fraction of keypoints replaced by gross outliers.
    pub outlier_fraction: f64,
    pub ransac_threshold: f64,
    pub ransac_iterations: usize,
}

impl Default for LidarSettings {
    fn default() -> Self {
        LidarSettings {
            enabled: true,
            num_keypoints: 44,
            sigma_l: 0.15,
            outlier_fraction: 0.0,
            ransac_threshold: 0.5,
            ransac_iterations: 1000,
        }
    }
}

/// How the integer fix is gated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FixGate {
    /// Accept when the bootstrapped success rate meets `fix_threshold`.
    #[default]
    Threshold,
    /// Always accept the integer minimizer.
    Always,
}

/// `[run]` section.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub epochs: usize,
    pub seed: u64,
    /// Trials per cell for success-grid commands.
    pub trials: usize,
    pub fix_policy: FixGate,
    pub fix_threshold: f64,
    /// Site latitude/longitude, degrees.
    pub lat_deg: f64,
    pub lon_deg: f64,
    /// Scales every simulated noise draw; 0 produces perfect observations
    /// while the weights keep using the configured sigmas.
    pub noise_scale: f64,
    /// Constellation-size range for sweep commands.
    pub m_min: usize,
    pub m_max: usize,
    /// σ_L grid for success-grid commands.
    pub sigma_l_min: f64,
    pub sigma_l_max: f64,
    pub sigma_l_steps: usize,
    /// Sweep variants for the ADOP scan, e.g. `f2,f1,f1+lidar`.
    pub variants: Vec<Variant>,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            epochs: 1000,
            seed: 42,
            trials: 100,
            fix_policy: FixGate::Threshold,
            fix_threshold: 0.999,
            lat_deg: 45.0,
            lon_deg: 9.0,
            noise_scale: 1.0,
            m_min: 2,
            m_max: 15,
            sigma_l_min: 0.05,
            sigma_l_max: 0.84,
            sigma_l_steps: 27,
            variants: Vec::new(),
        }
    }
}

/// One ADOP-scan variant: a frequency count, optionally with the lidar
/// layout included.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub frequencies: usize,
    pub with_lidar: bool,
}

impl Variant {
    /// Parses a token like `f1`, `f2`, or `f1+lidar`.
    pub fn parse(token: &str) -> std::result::Result<Self, String> {
        let (freq_part, with_lidar) = match token.strip_suffix("+lidar") {
            Some(rest) => (rest, true),
            None => (token, false),
        };
        let digits = freq_part
            .strip_prefix('f')
            .ok_or_else(|| format!("variant '{token}' does not start with 'f'"))?;
        let frequencies: usize = digits
            .parse()
            .map_err(|_| format!("variant '{token}' has no frequency count after 'f'"))?;
        if frequencies == 0 || frequencies > 2 {
            return Err(format!(
                "variant '{token}' requests {frequencies} frequencies; supported counts are 1 and 2"
            ));
        }
        Ok(Variant {
            frequencies,
            with_lidar,
        })
    }

    /// The token form, the inverse of [`Variant::parse`].
    pub fn token(&self) -> String {
        if self.with_lidar {
            format!("f{}+lidar", self.frequencies)
        } else {
            format!("f{}", self.frequencies)
        }
    }
}

/// The complete parsed configuration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CliConfig {
    pub gnss: GnssSettings,
    pub lidar: LidarSettings,
    pub run: RunSettings,
}

impl CliConfig {
    /// Parses a config text on top of the defaults.
    pub fn from_str(text: &str) -> Result<Self> {
        let mut cfg = CliConfig::default();
        let mut section: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| Error::Parse {
                    line: line_no,
                    message: format!("section header '{line}' is missing its closing bracket"),
                })?;
                let name = name.trim();
                match name {
                    "gnss" | "lidar" | "run" => section = Some(name.to_string()),
                    other => {
                        return Err(Error::Parse {
                            line: line_no,
                            message: format!(
                                "unknown section '[{other}]'; expected [gnss], [lidar], or [run]"
                            ),
                        })
                    }
                }
                continue;
            }
            let Some(eq) = line.find('=') else {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected 'key = value', found '{line}'"),
                });
            };
            let key = line[..eq].trim();
            let value = line[eq + 1..].trim();
            let Some(section) = section.as_deref() else {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("assignment '{key}' appears before any section header"),
                });
            };
            cfg.assign(section, key, value).map_err(|message| Error::Parse {
                line: line_no,
                message,
            })?;
        }
        Ok(cfg)
    }

    /// Applies a `section.key=value` override (the CLI `--set` flag).
    pub fn apply_override(&mut self, key_path: &str, value: &str) -> Result<()> {
        let Some((section, key)) = key_path.split_once('.') else {
            return Err(Error::Config(format!(
                "override key '{key_path}' is not of the form section.key"
            )));
        };
        match section {
            "gnss" | "lidar" | "run" => self
                .assign(section, key.trim(), value.trim())
                .map_err(Error::Config),
            other => Err(Error::Config(format!(
                "unknown section '{other}' in override '{key_path}'"
            ))),
        }
    }

    fn assign(&mut self, section: &str, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
            value
                .parse()
                .map_err(|_| format!("'{value}' is not a valid value for {key}"))
        }
        fn finite(key: &str, value: &str) -> std::result::Result<f64, String> {
            let v: f64 = num(key, value)?;
            if !v.is_finite() {
                return Err(format!("{key} must be finite, got {value}"));
            }
            Ok(v)
        }
        match (section, key) {
            ("gnss", "m") => self.gnss.num_satellites = num(key, value)?,
            ("gnss", "frequencies") => self.gnss.frequencies = num(key, value)?,
            ("gnss", "wavelengths") => {
                self.gnss.wavelength_set = match value {
                    "l1" => WavelengthSet::L1,
                    "l1l2" => WavelengthSet::L1L2,
                    "normalized" => WavelengthSet::Normalized,
                    other => {
                        return Err(format!(
                            "unknown wavelength set '{other}'; expected l1, l1l2, or normalized"
                        ))
                    }
                }
            }
            ("gnss", "sigma_p") => self.gnss.sigma_p = finite(key, value)?,
            ("gnss", "sigma_phi") => self.gnss.sigma_phi = finite(key, value)?,
            ("gnss", "phase_code_ratio") => self.gnss.phase_code_ratio = finite(key, value)?,
            ("gnss", "weight_mode") => {
                self.gnss.weight_mode = match value {
                    "elevation" => WeightMode::Elevation,
                    "equal" => WeightMode::Equal,
                    other => {
                        return Err(format!(
                            "unknown weight mode '{other}'; expected elevation or equal"
                        ))
                    }
                }
            }
            ("gnss", "skyplot") => {
                self.gnss.skyplot = match value {
                    "reference" => SkyplotChoice::Reference,
                    "sparse" => SkyplotChoice::Sparse,
                    "random" => SkyplotChoice::Random,
                    other => {
                        return Err(format!(
                            "unknown skyplot '{other}'; expected reference, sparse, or random"
                        ))
                    }
                }
            }
            ("gnss", "mask_deg") => self.gnss.mask_deg = finite(key, value)?,
            ("lidar", "enabled") => self.lidar.enabled = parse_bool(key, value)?,
            ("lidar", "n") => self.lidar.num_keypoints = num(key, value)?,
            ("lidar", "sigma_l") => self.lidar.sigma_l = finite(key, value)?,
            ("lidar", "outlier_fraction") => self.lidar.outlier_fraction = finite(key, value)?,
            ("lidar", "ransac_threshold") => self.lidar.ransac_threshold = finite(key, value)?,
            ("lidar", "ransac_iterations") => self.lidar.ransac_iterations = num(key, value)?,
            ("run", "epochs") => self.run.epochs = num(key, value)?,
            ("run", "seed") => self.run.seed = num(key, value)?,
            ("run", "trials") => self.run.trials = num(key, value)?,
            ("run", "fix_policy") => {
                self.run.fix_policy = match value {
                    "threshold" => FixGate::Threshold,
                    "always" => FixGate::Always,
                    other => {
                        return Err(format!(
                            "unknown fix policy '{other}'; expected threshold or always"
                        ))
                    }
                }
            }
            ("run", "fix_threshold") => self.run.fix_threshold = finite(key, value)?,
            ("run", "lat_deg") => self.run.lat_deg = finite(key, value)?,
            ("run", "lon_deg") => self.run.lon_deg = finite(key, value)?,
            ("run", "noise_scale") => self.run.noise_scale = finite(key, value)?,
            ("run", "m_min") => self.run.m_min = num(key, value)?,
            ("run", "m_max") => self.run.m_max = num(key, value)?,
            ("run", "sigma_l_min") => self.run.sigma_l_min = finite(key, value)?,
            ("run", "sigma_l_max") => self.run.sigma_l_max = finite(key, value)?,
            ("run", "sigma_l_steps") => self.run.sigma_l_steps = num(key, value)?,
            ("run", "variants") => {
                let mut variants = Vec::new();
                for token in value.split(',') {
                    let token = token.trim();
                    if token.is_empty() {
                        continue;
                    }
                    variants.push(Variant::parse(token)?);
                }
                self.run.variants = variants;
            }
            (section, key) => return Err(format!("unknown key '{key}' in section [{section}]")),
        }
        Ok(())
    }

    /// Checks intrinsic constraints (command-specific requirements like a
    /// nonzero epoch count are checked by the command that needs them).
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.gnss.num_satellites < 2 {
            return bad(format!(
                "gnss.m = {} but at least 2 satellites are required",
                self.gnss.num_satellites
            ));
        }
        if self.gnss.frequencies == 0 || self.gnss.frequencies > 2 {
            return bad(format!(
                "gnss.frequencies = {} but only 1 or 2 are supported",
                self.gnss.frequencies
            ));
        }
        if !(self.gnss.sigma_p > 0.0) {
            return bad(format!("gnss.sigma_p = {} must be > 0", self.gnss.sigma_p));
        }
        if !(self.gnss.sigma_phi > 0.0) {
            return bad(format!("gnss.sigma_phi = {} must be > 0", self.gnss.sigma_phi));
        }
        if self.gnss.sigma_phi >= self.gnss.sigma_p {
            return bad(format!(
                "gnss.sigma_phi = {} must be smaller than gnss.sigma_p = {}",
                self.gnss.sigma_phi, self.gnss.sigma_p
            ));
        }
        if !(self.gnss.phase_code_ratio > 0.0 && self.gnss.phase_code_ratio < 1.0) {
            return bad(format!(
                "gnss.phase_code_ratio = {} must lie in (0, 1)",
                self.gnss.phase_code_ratio
            ));
        }
        if !(0.0..=85.0).contains(&self.gnss.mask_deg) {
            return bad(format!(
                "gnss.mask_deg = {} must lie in [0, 85]",
                self.gnss.mask_deg
            ));
        }
        if self.lidar.num_keypoints < 4 {
            return bad(format!(
                "lidar.n = {} but at least 4 keypoints are required",
                self.lidar.num_keypoints
            ));
        }
        if !(self.lidar.sigma_l > 0.0) {
            return bad(format!("lidar.sigma_l = {} must be > 0", self.lidar.sigma_l));
        }
        if !(0.0..1.0).contains(&self.lidar.outlier_fraction) {
            return bad(format!(
                "lidar.outlier_fraction = {} must lie in [0, 1)",
                self.lidar.outlier_fraction
            ));
        }
        if !(self.lidar.ransac_threshold > 0.0) {
            return bad(format!(
                "lidar.ransac_threshold = {} must be > 0",
                self.lidar.ransac_threshold
            ));
        }
        if self.lidar.ransac_iterations == 0 {
            return bad("lidar.ransac_iterations must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.run.fix_threshold) {
            return bad(format!(
                "run.fix_threshold = {} must lie in [0, 1]",
                self.run.fix_threshold
            ));
        }
        if self.run.lat_deg.abs() > 90.0 {
            return bad(format!("run.lat_deg = {} outside [-90, 90]", self.run.lat_deg));
        }
        if !(self.run.noise_scale >= 0.0) {
            return bad(format!(
                "run.noise_scale = {} must be >= 0",
                self.run.noise_scale
            ));
        }
        if self.run.m_min < 2 || self.run.m_max < self.run.m_min {
            return bad(format!(
                "sweep range m in [{}, {}] is invalid; need 2 <= m_min <= m_max",
                self.run.m_min, self.run.m_max
            ));
        }
        if !(self.run.sigma_l_min > 0.0)
            || self.run.sigma_l_max < self.run.sigma_l_min
            || self.run.sigma_l_steps < 1
        {
            return bad(format!(
                "sigma_L grid [{}, {}] with {} steps is invalid",
                self.run.sigma_l_min, self.run.sigma_l_max, self.run.sigma_l_steps
            ));
        }
        Ok(())
    }

    /// The wavelength list implied by the settings.
    pub fn wavelengths(&self) -> Vec<f64> {
        self.wavelengths_for(self.effective_frequencies())
    }

    /// Frequency count implied by the wavelength set.
    pub fn effective_frequencies(&self) -> usize {
        match self.gnss.wavelength_set {
            WavelengthSet::L1 => 1,
            WavelengthSet::L1L2 => 2,
            WavelengthSet::Normalized => self.gnss.frequencies,
        }
    }

    fn wavelengths_for(&self, frequencies: usize) -> Vec<f64> {
        match self.gnss.wavelength_set {
            WavelengthSet::L1 | WavelengthSet::L1L2 => {
                [GPS_L1_WAVELENGTH, GPS_L2_WAVELENGTH][..frequencies].to_vec()
            }
            WavelengthSet::Normalized => {
                vec![self.gnss.sigma_phi / self.gnss.phase_code_ratio; frequencies]
            }
        }
    }

    /// Builds the GNSS model configuration.
    pub fn gnss_config(&self) -> Result<GnssConfig> {
        GnssConfig::new(self.wavelengths(), self.gnss.sigma_p, self.gnss.sigma_phi)
    }

    /// Builds a GNSS model configuration for a sweep variant's frequency
    /// count.
    pub fn gnss_config_for(&self, frequencies: usize) -> Result<GnssConfig> {
        if frequencies == 0 || frequencies > 2 {
            return Err(Error::Config(format!(
                "variant frequency count {frequencies} is not supported"
            )));
        }
        if frequencies == 2 && self.gnss.wavelength_set == WavelengthSet::L1 {
            return Err(Error::Config(
                "variant f2 needs a two-wavelength set (l1l2 or normalized)".into(),
            ));
        }
        GnssConfig::new(
            self.wavelengths_for(frequencies),
            self.gnss.sigma_p,
            self.gnss.sigma_phi,
        )
    }

    /// Renders the configuration back to config-file text (the parser's
    /// inverse, used to document presets).
    pub fn to_config_text(&self) -> String {
        let wavelengths = match self.gnss.wavelength_set {
            WavelengthSet::L1 => "l1",
            WavelengthSet::L1L2 => "l1l2",
            WavelengthSet::Normalized => "normalized",
        };
        let weight_mode = match self.gnss.weight_mode {
            WeightMode::Elevation => "elevation",
            WeightMode::Equal => "equal",
        };
        let skyplot = match self.gnss.skyplot {
            SkyplotChoice::Reference => "reference",
            SkyplotChoice::Sparse => "sparse",
            SkyplotChoice::Random => "random",
        };
        let fix_policy = match self.run.fix_policy {
            FixGate::Threshold => "threshold",
            FixGate::Always => "always",
        };
        let variants: Vec<String> = self.run.variants.iter().map(Variant::token).collect();
        format!(
            "[gnss]\n\
             m = {}\n\
             frequencies = {}\n\
             wavelengths = {}\n\
             sigma_p = {}\n\
             sigma_phi = {}\n\
             phase_code_ratio = {}\n\
             weight_mode = {}\n\
             skyplot = {}\n\
             mask_deg = {}\n\
             \n\
             [lidar]\n\
             enabled = {}\n\
             n = {}\n\
             sigma_l = {}\n\
             outlier_fraction = {}\n\
             ransac_threshold = {}\n\
             ransac_iterations = {}\n\
             \n\
             [run]\n\
             epochs = {}\n\
             seed = {}\n\
             trials = {}\n\
             fix_policy = {}\n\
             fix_threshold = {}\n\
             lat_deg = {}\n\
             lon_deg = {}\n\
             noise_scale = {}\n\
             m_min = {}\n\
             m_max = {}\n\
             sigma_l_min = {}\n\
             sigma_l_max = {}\n\
             sigma_l_steps = {}\n\
             variants = {}\n",
            self.gnss.num_satellites,
            self.gnss.frequencies,
            wavelengths,
            self.gnss.sigma_p,
            self.gnss.sigma_phi,
            self.gnss.phase_code_ratio,
            weight_mode,
            skyplot,
            self.gnss.mask_deg,
            self.lidar.enabled,
            self.lidar.num_keypoints,
            self.lidar.sigma_l,
            self.lidar.outlier_fraction,
            self.lidar.ransac_threshold,
            self.lidar.ransac_iterations,
            self.run.epochs,
            self.run.seed,
            self.run.trials,
            fix_policy,
            self.run.fix_threshold,
            self.run.lat_deg,
            self.run.lon_deg,
            self.run.noise_scale,
            self.run.m_min,
            self.run.m_max,
            self.run.sigma_l_min,
            self.run.sigma_l_max,
            self.run.sigma_l_steps,
            variants.join(","),
        )
    }
}

fn parse_bool(key: &str, value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(format!("{key} must be true or false, got '{other}'")),
    }
}
