//! Physical configuration of the simulated device.
//!
//! All lengths are in metres, frequencies in hertz. The defaults describe a
//! 3 kHz, two-layer, 28x28 device with 2 cm cells and 17.5 cm plane spacing.

use std::f64::consts::TAU;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsConfig {
    pub frequency: f64,
    pub sound_speed: f64,
    pub grid_n: usize,
    pub pitch: f64,
    pub layer_gap: f64,
    pub num_layers: usize,
    pub object_gap: f64,
    pub detector_gap: f64,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        PhysicsConfig {
            frequency: 3000.0,
            sound_speed: 343.0,
            grid_n: 28,
            pitch: 0.02,
            layer_gap: 0.175,
            num_layers: 2,
            object_gap: 0.175,
            detector_gap: 0.175,
        }
    }
}

impl PhysicsConfig {
    /// Checks every invariant, including that cells are subwavelength.
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("frequency", self.frequency)?;
        positive("sound_speed", self.sound_speed)?;
        positive("pitch", self.pitch)?;
        positive("layer_gap", self.layer_gap)?;
        positive("object_gap", self.object_gap)?;
        positive("detector_gap", self.detector_gap)?;
        if self.grid_n < 2 {
            return Err(Error::InvalidConfig(format!("grid_n must be >= 2, got {}", self.grid_n)));
        }
        if self.num_layers < 1 {
            return Err(Error::InvalidConfig("num_layers must be >= 1".into()));
        }
        if self.pitch >= self.wavelength() {
            return Err(Error::InvalidConfig(format!(
                "pitch {} m is not subwavelength (wavelength {} m)",
                self.pitch,
                self.wavelength()
            )));
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        self.sound_speed / self.frequency
    }

    pub fn wavenumber(&self) -> f64 {
        TAU / self.wavelength()
    }

    /// Side length of the square aperture, `grid_n * pitch`.
    pub fn aperture(&self) -> f64 {
        self.grid_n as f64 * self.pitch
    }

    pub fn cells(&self) -> usize {
        self.grid_n * self.grid_n
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: PhysicsConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }
}

/// Free-function form of [`PhysicsConfig::wavelength`].
pub fn wavelength(config: &PhysicsConfig) -> f64 {
    config.wavelength()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_wavelength_is_about_11_4_cm() {
        let cfg = PhysicsConfig::default();
        let lambda = wavelength(&cfg);
        assert!((lambda - 343.0 / 3000.0).abs() < 1e-15);
        assert!((0.1140..=0.1147).contains(&lambda));
        assert!((cfg.aperture() - 0.56).abs() < 1e-12);
        assert!(cfg.pitch / lambda < 0.2);
        cfg.validate().unwrap();
    }

    #[test]
    fn wavelength_scaling() {
        let mut cfg = PhysicsConfig { frequency: 343.0, ..Default::default() };
        assert_eq!(wavelength(&cfg), 1.0);
        cfg.frequency = 6000.0;
        let half = wavelength(&cfg);
        cfg.frequency = 3000.0;
        assert!((2.0 * half - wavelength(&cfg)).abs() < 1e-15);
    }

    #[test]
    fn unknown_keys_rejected() {
        let json = r#"{"frequency":3000,"sound_speed":343,"grid_n":28,"pitch":0.02,
            "layer_gap":0.175,"num_layers":2,"object_gap":0.175,"detector_gap":0.175,"foo":1}"#;
        assert!(matches!(PhysicsConfig::from_json_str(json), Err(Error::Json(_))));
    }

    #[test]
    fn json_round_trip() {
        let cfg = PhysicsConfig::default();
        let s = serde_json::to_string(&cfg).unwrap();
        assert_eq!(PhysicsConfig::from_json_str(&s).unwrap(), cfg);
    }

    #[test]
    fn rejects_superwavelength_pitch() {
        let cfg = PhysicsConfig { pitch: 0.2, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        let cfg = PhysicsConfig { grid_n: 1, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
