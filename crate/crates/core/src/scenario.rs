//! Scenario parameters: base station, waveform numerology, antenna gains,
//! ground model and the synchronization offsets between vehicle and BS.
//!
//! The on-disk representation ([`ScenarioFile`]) accepts gains either as
//! linear values or in dB through `_db` suffixed keys; everything is
//! converted to linear SI units on load.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Synchronization mode of the sub-arrays.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// One shared local oscillator: a single phase offset for all sub-arrays.
    Coherent,
    /// Independent oscillators: one unknown phase offset per sub-array.
    Incoherent,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Coherent => "coherent",
            Mode::Incoherent => "incoherent",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "coherent" => Ok(Mode::Coherent),
            "incoherent" => Ok(Mode::Incoherent),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarization {
    /// Electric field perpendicular to the plane of incidence (TE).
    Perpendicular,
    /// Electric field in the plane of incidence (TM).
    Parallel,
}

/// OFDM downlink waveform and receiver noise.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub carrier_hz: f64,
    pub subcarrier_spacing_hz: f64,
    pub subcarriers: usize,
    /// Unit-modulus pilot symbols, one per subcarrier.
    pub pilots: Vec<Complex64>,
    pub tx_power_w: f64,
    pub noise_variance_w: f64,
}

impl Waveform {
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    pub fn bandwidth_hz(&self) -> f64 {
        self.subcarrier_spacing_hz * self.subcarriers as f64
    }

    pub fn validate(&self) -> Result<()> {
        positive("carrier_hz", self.carrier_hz)?;
        positive("subcarrier_spacing_hz", self.subcarrier_spacing_hz)?;
        positive("tx_power_w", self.tx_power_w)?;
        positive("noise_variance_w", self.noise_variance_w)?;
        if self.subcarriers == 0 {
            return Err(Error::Config("subcarriers must be at least 1".into()));
        }
        if self.pilots.len() != self.subcarriers {
            return Err(Error::Config(format!(
                "expected {} pilot symbols, got {}",
                self.subcarriers,
                self.pilots.len()
            )));
        }
        if let Some(n) = self.pilots.iter().position(|x| (x.norm() - 1.0).abs() > 1e-12) {
            return Err(Error::Config(format!("pilot {n} is not unit-modulus")));
        }
        Ok(())
    }
}

/// Base-station gain and the receive element pattern
/// `G_max cos^{2β}(az) cos^{2β}(el) + G_min` inside the front hemisphere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GainModel {
    pub tx_gain: f64,
    pub max_gain: f64,
    pub min_gain: f64,
    pub beta: f64,
}

impl GainModel {
    /// Exponent giving the requested half-power beamwidth, i.e. the β with
    /// `cos^{2β}(hpbw / 2) = 1/2`.
    pub fn beta_for_hpbw(hpbw_rad: f64) -> f64 {
        0.5f64.ln() / (2.0 * (0.5 * hpbw_rad).cos().ln())
    }

    pub fn validate(&self) -> Result<()> {
        positive("tx_gain", self.tx_gain)?;
        positive("max_gain", self.max_gain)?;
        positive("min_gain", self.min_gain)?;
        positive("beta", self.beta)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundModel {
    pub permittivity: Complex64,
    pub polarization: Polarization,
}

/// Unknown phase offsets of the sub-arrays relative to the BS.
#[derive(Clone, Debug, PartialEq)]
pub enum PhaseOffsets {
    Shared(f64),
    PerSubArray(Vec<f64>),
}

/// Clock offsets between vehicle and BS: a range bias common to every
/// path, and one (coherent) or per-sub-array (incoherent) phase offsets.
#[derive(Clone, Debug, PartialEq)]
pub struct SyncOffsets {
    pub range_bias_m: f64,
    pub phase: PhaseOffsets,
}

impl SyncOffsets {
    pub fn coherent(range_bias_m: f64, phase_rad: f64) -> Self {
        SyncOffsets { range_bias_m, phase: PhaseOffsets::Shared(phase_rad) }
    }

    pub fn incoherent(range_bias_m: f64, phases_rad: Vec<f64>) -> Self {
        SyncOffsets { range_bias_m, phase: PhaseOffsets::PerSubArray(phases_rad) }
    }

    /// Offsets for `k` sub-arrays, all phases equal to `phase_rad`.
    pub fn uniform(mode: Mode, range_bias_m: f64, phase_rad: f64, k: usize) -> Self {
        match mode {
            Mode::Coherent => Self::coherent(range_bias_m, phase_rad),
            Mode::Incoherent => Self::incoherent(range_bias_m, vec![phase_rad; k]),
        }
    }

    pub fn mode(&self) -> Mode {
        match self.phase {
            PhaseOffsets::Shared(_) => Mode::Coherent,
            PhaseOffsets::PerSubArray(_) => Mode::Incoherent,
        }
    }

    /// Phase offset applied at sub-array `k`.
    ///
    /// # Panics
    /// If the offsets are per sub-array and `k` is out of range.
    pub fn phase_for(&self, k: usize) -> f64 {
        match &self.phase {
            PhaseOffsets::Shared(p) => *p,
            PhaseOffsets::PerSubArray(v) => v[k],
        }
    }
}

/// Complete set of physical constants for one simulation.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub bs_height_m: f64,
    pub waveform: Waveform,
    pub gains: GainModel,
    pub ground: GroundModel,
    /// Fraction ε of pose samples allowed to exceed the percentile metric.
    pub peb_percentile: f64,
    /// Whether the ground-reflected path is modelled at all.
    pub ground_reflection: bool,
    /// True range bias δ_d used when synthesizing observations.
    pub range_bias_m: f64,
    /// True phase offset δ_φ (applied to every sub-array).
    pub phase_offset_rad: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioFile::default().resolve().expect("built-in scenario is valid")
    }
}

impl ScenarioConfig {
    pub fn wavelength(&self) -> f64 {
        self.waveform.wavelength()
    }

    pub fn true_offsets(&self, mode: Mode, k: usize) -> SyncOffsets {
        SyncOffsets::uniform(mode, self.range_bias_m, self.phase_offset_rad, k)
    }

    /// Copy with the ground-reflected path switched on or off.
    pub fn with_ground_reflection(&self, on: bool) -> Self {
        ScenarioConfig { ground_reflection: on, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        positive("bs_height_m", self.bs_height_m)?;
        self.waveform.validate()?;
        self.gains.validate()?;
        if self.ground.permittivity.re < 1.0 || !self.ground.permittivity.is_finite() {
            return Err(Error::Config(
                "ground permittivity must be finite with real part >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.peb_percentile) {
            return Err(Error::Config(format!(
                "peb_percentile must lie in [0, 1), got {}",
                self.peb_percentile
            )));
        }
        if !self.range_bias_m.is_finite() || !self.phase_offset_rad.is_finite() {
            return Err(Error::Config("sync offsets must be finite".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| Error::Read { path: path.to_owned(), source })?;
        let file: ScenarioFile =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, &e))?;
        file.resolve()
    }

    /// Fully resolved (linear-unit) file representation.
    pub fn to_file(&self) -> ScenarioFile {
        let w = &self.waveform;
        let all_ones = w.pilots.iter().all(|x| *x == Complex64::new(1.0, 0.0));
        ScenarioFile {
            bs_height_m: self.bs_height_m,
            tx_power_w: w.tx_power_w,
            carrier_hz: w.carrier_hz,
            subcarrier_spacing_hz: w.subcarrier_spacing_hz,
            subcarriers: w.subcarriers,
            noise_variance_w: w.noise_variance_w,
            pilot_phases_rad: (!all_ones).then(|| w.pilots.iter().map(|x| x.arg()).collect()),
            tx_gain: Some(self.gains.tx_gain),
            tx_gain_db: None,
            max_gain: Some(self.gains.max_gain),
            max_gain_db: None,
            min_gain: Some(self.gains.min_gain),
            min_gain_db: None,
            beta: Some(self.gains.beta),
            hpbw_deg: None,
            ground_permittivity: [self.ground.permittivity.re, self.ground.permittivity.im],
            polarization: self.ground.polarization,
            peb_percentile: self.peb_percentile,
            ground_reflection: self.ground_reflection,
            range_bias_m: self.range_bias_m,
            phase_offset_rad: self.phase_offset_rad,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
    }
}

fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// JSON scenario file. Missing keys take the built-in defaults (BS height
/// 20 m, 1 W, 28 GHz, 120 kHz x 792 subcarriers, 10/8/-40 dBi gains,
/// 65° element beamwidth, ground permittivity 5.0+0.2j, ε = 0.1). Gains
/// are given either linear or in dB, the element pattern either as `beta`
/// or as `hpbw_deg`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioFile {
    pub bs_height_m: f64,
    pub tx_power_w: f64,
    pub carrier_hz: f64,
    pub subcarrier_spacing_hz: f64,
    pub subcarriers: usize,
    pub noise_variance_w: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pilot_phases_rad: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tx_gain: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tx_gain_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_gain: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_gain_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_gain: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_gain_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hpbw_deg: Option<f64>,
    /// `[re, im]` of the complex relative permittivity of the ground.
    pub ground_permittivity: [f64; 2],
    pub polarization: Polarization,
    pub peb_percentile: f64,
    pub ground_reflection: bool,
    pub range_bias_m: f64,
    pub phase_offset_rad: f64,
}

impl Default for ScenarioFile {
    fn default() -> Self {
        ScenarioFile {
            bs_height_m: 20.0,
            tx_power_w: 1.0,
            carrier_hz: 28e9,
            subcarrier_spacing_hz: 120e3,
            subcarriers: 792,
            noise_variance_w: 3.81e-12,
            pilot_phases_rad: None,
            tx_gain: None,
            tx_gain_db: None,
            max_gain: None,
            max_gain_db: None,
            min_gain: None,
            min_gain_db: None,
            beta: None,
            hpbw_deg: None,
            ground_permittivity: [5.0, 0.2],
            polarization: Polarization::Perpendicular,
            peb_percentile: 0.1,
            ground_reflection: true,
            range_bias_m: 0.0,
            phase_offset_rad: 0.0,
        }
    }
}

impl ScenarioFile {
    pub fn resolve(&self) -> Result<ScenarioConfig> {
        let pick = |name: &str, lin: Option<f64>, db: Option<f64>, default_db: f64| -> Result<f64> {
            match (lin, db) {
                (Some(_), Some(_)) => Err(Error::Config(format!(
                    "both `{name}` and `{name}_db` given; use one"
                ))),
                (Some(v), None) => Ok(v),
                (None, Some(d)) => Ok(db_to_linear(d)),
                (None, None) => Ok(db_to_linear(default_db)),
            }
        };
        let beta = match (self.beta, self.hpbw_deg) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("give either `beta` or `hpbw_deg`, not both".into()))
            }
            (Some(b), None) => b,
            (None, Some(h)) => {
                if !(h > 0.0 && h < 180.0) {
                    return Err(Error::Config(format!("hpbw_deg must lie in (0, 180), got {h}")));
                }
                GainModel::beta_for_hpbw(h.to_radians())
            }
            (None, None) => GainModel::beta_for_hpbw(65f64.to_radians()),
        };
        let pilots = match &self.pilot_phases_rad {
            None => vec![Complex64::new(1.0, 0.0); self.subcarriers],
            Some(p) => p.iter().map(|&t| Complex64::from_polar(1.0, t)).collect(),
        };
        let cfg = ScenarioConfig {
            bs_height_m: self.bs_height_m,
            waveform: Waveform {
                carrier_hz: self.carrier_hz,
                subcarrier_spacing_hz: self.subcarrier_spacing_hz,
                subcarriers: self.subcarriers,
                pilots,
                tx_power_w: self.tx_power_w,
                noise_variance_w: self.noise_variance_w,
            },
            gains: GainModel {
                tx_gain: pick("tx_gain", self.tx_gain, self.tx_gain_db, 10.0)?,
                max_gain: pick("max_gain", self.max_gain, self.max_gain_db, 8.0)?,
                min_gain: pick("min_gain", self.min_gain, self.min_gain_db, -40.0)?,
                beta,
            },
            ground: GroundModel {
                permittivity: Complex64::new(self.ground_permittivity[0], self.ground_permittivity[1]),
                polarization: self.polarization,
            },
            peb_percentile: self.peb_percentile,
            ground_reflection: self.ground_reflection,
            range_bias_m: self.range_bias_m,
            phase_offset_rad: self.phase_offset_rad,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Wavenumber magnitude 2π/λ.
pub fn wavenumber_magnitude(lambda: f64) -> f64 {
    2.0 * PI / lambda
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_link_budget_table() {
        let s = ScenarioConfig::default();
        assert_eq!(s.bs_height_m, 20.0);
        assert_eq!(s.waveform.subcarriers, 792);
        assert!((s.gains.tx_gain - 10.0).abs() < 1e-12);
        assert!((s.gains.max_gain - 10f64.powf(0.8)).abs() < 1e-12);
        assert!((s.gains.min_gain - 1e-4).abs() < 1e-16);
        // 120 kHz x 792 = 95.04 MHz
        assert!((s.waveform.bandwidth_hz() - 95.04e6).abs() < 1.0);
        assert!((s.gains.beta - 2.03).abs() < 0.01, "beta = {}", s.gains.beta);
        assert_eq!(s.peb_percentile, 0.1);
    }

    #[test]
    fn hpbw_exponent_halves_power_at_half_beamwidth() {
        let beta = GainModel::beta_for_hpbw(65f64.to_radians());
        let half = 32.5f64.to_radians().cos().powf(2.0 * beta);
        assert!((half - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_invalid_values() {
        let mut f = ScenarioFile::default();
        f.subcarriers = 0;
        assert!(f.resolve().is_err());
        let mut f = ScenarioFile::default();
        f.tx_power_w = -1.0;
        assert!(f.resolve().is_err());
        let mut f = ScenarioFile::default();
        f.peb_percentile = 1.0;
        assert!(f.resolve().is_err());
        let mut f = ScenarioFile::default();
        f.tx_gain = Some(10.0);
        f.tx_gain_db = Some(10.0);
        assert!(f.resolve().is_err(), "linear and dB given together");
        let mut f = ScenarioFile::default();
        f.beta = Some(2.0);
        f.hpbw_deg = Some(65.0);
        assert!(f.resolve().is_err());
    }

    #[test]
    fn file_round_trip_preserves_resolved_values() {
        let s = ScenarioConfig::default();
        let json = serde_json::to_string(&s.to_file()).unwrap();
        let back: ScenarioFile = serde_json::from_str(&json).unwrap();
        assert_eq!(back.resolve().unwrap(), s);
    }

    #[test]
    fn parse_error_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        std::fs::write(&p, "{\n  \"bs_height_m\": 20.0,\n  \"bogus\": 1\n}\n").unwrap();
        match ScenarioConfig::load(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
