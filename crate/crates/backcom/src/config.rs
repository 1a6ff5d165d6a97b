//! System-level scalar parameters and unit conversions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Convert a dB value to linear scale.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Convert a linear value to dB.
pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// Convert dBm to Watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm) / 1000.0
}

/// Convert Watts to dBm.
pub fn watts_to_dbm(watts: f64) -> f64 {
    linear_to_db(watts * 1000.0)
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{0} must be strictly positive")]
    NonPositive(&'static str),
    #[error("r_min must be non-negative")]
    NegativeRateFloor,
    #[error("eh_efficiency must lie in (0, 1]")]
    EfficiencyOutOfRange,
    #[error("p_sen must be below p_sat")]
    SensitivityAboveSaturation,
    #[error("frame_duration must be 1")]
    FrameNotUnit,
    #[error("alpha_floor must lie in (0, 1e-3]")]
    AlphaFloorOutOfRange,
}

/// All scalar parameters of one network instance. Powers are in Watts,
/// energies in Joules over the unit frame, throughputs in bits at
/// normalized bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Number of backscatter devices (one slot each).
    pub n_bds: usize,
    /// Transmit antennas at the access point.
    pub n_tx_antennas: usize,
    /// Receive antennas at the access point.
    pub n_rx_antennas: usize,
    /// Energy-harvesting conversion efficiency, in (0, 1].
    pub eh_efficiency: f64,
    /// Harvester saturation level (W): output never exceeds this.
    pub p_sat: f64,
    /// Harvester sensitivity (W): converted power below this yields zero.
    pub p_sen: f64,
    /// Circuit power while backscattering (W).
    pub p_bc: f64,
    /// Circuit power while standing by in earlier slots (W).
    pub p_sc: f64,
    /// Per-device throughput floor (bits at unit bandwidth).
    pub r_min: f64,
    /// Transmit energy budget over the frame (J).
    pub e_source: f64,
    /// Residual self-interference coefficient (linear scale).
    pub si_coeff: f64,
    /// Receiver noise power (W).
    pub noise_power: f64,
    /// Frame duration (s); fixed to 1 so powers and energies coincide.
    pub frame_duration: f64,
    /// Outer-loop convergence tolerance on the efficiency ratio.
    pub dinkelbach_tol: f64,
    /// Outer-loop iteration cap.
    pub max_outer_iters: usize,
    /// Convergence tolerance for the beamformer inner loop.
    pub sca_tol: f64,
    /// Iteration cap for the beamformer inner loop.
    pub sca_max_iters: usize,
    /// Numerical lower bound standing in for the open constraint alpha > 0.
    pub alpha_floor: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            n_bds: 5,
            n_tx_antennas: 4,
            n_rx_antennas: 4,
            eh_efficiency: 0.8,
            p_sat: 20e-3,
            p_sen: dbm_to_watts(-12.0), // 10^-1.2 mW
            p_bc: 1e-3,
            p_sc: 1e-4,
            r_min: 0.05,
            e_source: dbm_to_watts(30.0),
            si_coeff: db_to_linear(-50.0),
            noise_power: dbm_to_watts(-110.0),
            frame_duration: 1.0,
            dinkelbach_tol: 1e-5,
            max_outer_iters: 1000,
            sca_tol: 1e-6,
            sca_max_iters: 20,
            alpha_floor: 1e-6,
        }
    }
}

impl SystemConfig {
    /// Check the type invariants; call after constructing one by hand.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_bds == 0 {
            return Err(ConfigError::NonPositive("n_bds"));
        }
        if self.n_tx_antennas == 0 {
            return Err(ConfigError::NonPositive("n_tx_antennas"));
        }
        if self.n_rx_antennas == 0 {
            return Err(ConfigError::NonPositive("n_rx_antennas"));
        }
        for (name, value) in [
            ("p_sat", self.p_sat),
            ("p_sen", self.p_sen),
            ("p_bc", self.p_bc),
            ("p_sc", self.p_sc),
            ("e_source", self.e_source),
            ("si_coeff", self.si_coeff),
            ("noise_power", self.noise_power),
            ("dinkelbach_tol", self.dinkelbach_tol),
            ("sca_tol", self.sca_tol),
        ] {
            if !(value > 0.0) {
                return Err(ConfigError::NonPositive(name));
            }
        }
        if self.r_min < 0.0 {
            return Err(ConfigError::NegativeRateFloor);
        }
        if !(self.eh_efficiency > 0.0 && self.eh_efficiency <= 1.0) {
            return Err(ConfigError::EfficiencyOutOfRange);
        }
        if self.p_sen >= self.p_sat {
            return Err(ConfigError::SensitivityAboveSaturation);
        }
        if self.frame_duration != 1.0 {
            return Err(ConfigError::FrameNotUnit);
        }
        if !(self.alpha_floor > 0.0 && self.alpha_floor <= 1e-3) {
            return Err(ConfigError::AlphaFloorOutOfRange);
        }
        Ok(())
    }

    /// Variant with the harvester's saturation and sensitivity pushed out of
    /// reach, i.e. an ideal linear harvester. Used by the reflection
    /// coefficient comparison table.
    pub fn with_linear_eh(&self) -> Self {
        Self {
            p_sat: 1e30,
            p_sen: 1e-30,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_db_conversions() {
        assert!((dbm_to_watts(30.0) - 1.0).abs() < 1e-12);
        assert!((db_to_linear(-50.0) - 1e-5).abs() < 1e-17);
        assert!((dbm_to_watts(-110.0) - 1e-14).abs() < 1e-26);
        assert!((watts_to_dbm(1.0) - 30.0).abs() < 1e-12);
        assert!((linear_to_db(db_to_linear(-3.7)) + 3.7).abs() < 1e-12);
    }

    #[test]
    fn test_default_config_is_valid() {
        let cfg = SystemConfig::default();
        cfg.validate().unwrap();
        // Spec'd simulation values.
        assert_eq!(cfg.n_bds, 5);
        assert_eq!(cfg.n_tx_antennas, 4);
        assert_eq!(cfg.n_rx_antennas, 4);
        assert!((cfg.p_sen - 10f64.powf(-1.2) * 1e-3).abs() < 1e-18);
        assert_eq!(cfg.p_sat, 0.02);
        assert_eq!(cfg.max_outer_iters, 1000);
        assert_eq!(cfg.dinkelbach_tol, 1e-5);
    }

    #[test]
    fn test_validate_rejects_bad_fields() {
        let mut cfg = SystemConfig::default();
        cfg.p_sen = cfg.p_sat + 1.0;
        assert_eq!(cfg.validate(), Err(ConfigError::SensitivityAboveSaturation));

        let mut cfg = SystemConfig::default();
        cfg.eh_efficiency = 1.5;
        assert_eq!(cfg.validate(), Err(ConfigError::EfficiencyOutOfRange));

        let mut cfg = SystemConfig::default();
        cfg.frame_duration = 0.5;
        assert_eq!(cfg.validate(), Err(ConfigError::FrameNotUnit));

        let mut cfg = SystemConfig::default();
        cfg.alpha_floor = 0.1;
        assert_eq!(cfg.validate(), Err(ConfigError::AlphaFloorOutOfRange));

        let mut cfg = SystemConfig::default();
        cfg.r_min = -0.1;
        assert_eq!(cfg.validate(), Err(ConfigError::NegativeRateFloor));
    }

    #[test]
    fn test_linear_eh_variant_keeps_other_fields() {
        let cfg = SystemConfig::default();
        let lin = cfg.with_linear_eh();
        lin.validate().unwrap();
        assert!(lin.p_sat > 1e20);
        assert!(lin.p_sen < 1e-20);
        assert_eq!(lin.e_source, cfg.e_source);
        assert_eq!(lin.r_min, cfg.r_min);
    }
}
