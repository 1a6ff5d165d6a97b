//! Seeded channel realizations: distance-dependent pathloss with Rician
//! small-scale fading for the access-point/device links and the
//! device-to-device links.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{db_to_linear, SystemConfig};

/// Placement and propagation parameters for one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryConfig {
    /// Access-point-to-device distance range in meters.
    pub hap_bd_distance_range: [f64; 2],
    /// Device-to-device distance range in meters.
    pub bd_bd_distance_range: [f64; 2],
    /// Pathloss exponent.
    pub pathloss_exponent: f64,
    /// Reference pathloss gain at 1 m, in dB.
    pub pathloss_ref_gain_db: f64,
    /// Rician K-factor in dB.
    pub rician_k_db: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            hap_bd_distance_range: [1.0, 5.0],
            bd_bd_distance_range: [0.5, 2.0],
            pathloss_exponent: 3.0,
            pathloss_ref_gain_db: 0.0,
            rician_k_db: 2.8,
        }
    }
}

impl GeometryConfig {
    pub fn validate(&self) -> Result<(), String> {
        let [lo, hi] = self.hap_bd_distance_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err("hap_bd_distance_range must be positive and ordered".into());
        }
        let [lo, hi] = self.bd_bd_distance_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err("bd_bd_distance_range must be positive and ordered".into());
        }
        if !(self.pathloss_exponent > 0.0) {
            return Err("pathloss_exponent must be positive".into());
        }
        Ok(())
    }

    /// Large-scale power gain at distance `d` meters.
    pub fn pathloss_gain(&self, d: f64) -> f64 {
        db_to_linear(self.pathloss_ref_gain_db) * d.powf(-self.pathloss_exponent)
    }
}

/// One channel realization for `N` devices.
///
/// `inter_bd[(i, n)]` is the device-to-device channel from device `i` to
/// device `n`; only entries with `i < n` (earlier slot feeding a later one)
/// are meaningful, the rest stay zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSet {
    /// Forward (downlink) vectors, one length-M vector per device.
    pub forward: Vec<DVector<Complex64>>,
    /// Backscatter (uplink) vectors, one length-R vector per device.
    pub backward: Vec<DVector<Complex64>>,
    /// Device-to-device scalar channels, used for `i < n` only.
    pub inter_bd: DMatrix<Complex64>,
    /// Seed the realization was drawn from.
    pub seed: u64,
    /// Access-point-to-device distances in meters.
    pub hap_distances: Vec<f64>,
    /// Device-to-device distances in meters, `i < n` entries only.
    pub bd_distances: DMatrix<f64>,
}

impl ChannelSet {
    pub fn n_bds(&self) -> usize {
        self.forward.len()
    }

    /// Check dimensions against a system configuration.
    pub fn matches(&self, cfg: &SystemConfig) -> bool {
        self.forward.len() == cfg.n_bds
            && self.backward.len() == cfg.n_bds
            && self.forward.iter().all(|h| h.len() == cfg.n_tx_antennas)
            && self.backward.iter().all(|h| h.len() == cfg.n_rx_antennas)
            && self.inter_bd.nrows() == cfg.n_bds
            && self.inter_bd.ncols() == cfg.n_bds
    }

    /// Serialize to a JSON string for regression fixtures.
    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    /// Parse a fixture produced by [`ChannelSet::to_json`].
    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

fn complex_gaussian(rng: &mut ChaCha8Rng) -> Complex64 {
    // CN(0, 1): real and imaginary parts N(0, 1/2).
    let scale = 0.5f64.sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * scale, im * scale)
}

/// One Rician-faded vector with large-scale power gain `gain` and linear
/// K-factor `k`. A single uniformly drawn line-of-sight phase is shared by
/// all entries of the vector.
fn rician_vector(len: usize, gain: f64, k: f64, rng: &mut ChaCha8Rng) -> DVector<Complex64> {
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let los = Complex64::from_polar((k / (k + 1.0)).sqrt(), phase);
    let diffuse_scale = (1.0 / (k + 1.0)).sqrt();
    let amp = gain.sqrt();
    DVector::from_fn(len, |_, _| {
        (los + diffuse_scale * complex_gaussian(rng)) * amp
    })
}

/// Draw a seeded channel realization.
///
/// Deterministic given `(cfg, geo, seed)`: distances are drawn first (access
/// point links, then device pairs), then forward vectors, backward vectors
/// and device-to-device scalars, each in device order.
pub fn generate_channels(cfg: &SystemConfig, geo: &GeometryConfig, seed: u64) -> ChannelSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.n_bds;
    let k = db_to_linear(geo.rician_k_db);

    let hap_distances: Vec<f64> = (0..n)
        .map(|_| sample_range(&mut rng, geo.hap_bd_distance_range))
        .collect();
    let mut bd_distances = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            bd_distances[(i, j)] = sample_range(&mut rng, geo.bd_bd_distance_range);
        }
    }

    let forward: Vec<_> = (0..n)
        .map(|i| rician_vector(cfg.n_tx_antennas, geo.pathloss_gain(hap_distances[i]), k, &mut rng))
        .collect();
    let backward: Vec<_> = (0..n)
        .map(|i| rician_vector(cfg.n_rx_antennas, geo.pathloss_gain(hap_distances[i]), k, &mut rng))
        .collect();

    let mut inter_bd = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            inter_bd[(i, j)] =
                rician_vector(1, geo.pathloss_gain(bd_distances[(i, j)]), k, &mut rng)[0];
        }
    }

    ChannelSet {
        forward,
        backward,
        inter_bd,
        seed,
        hap_distances,
        bd_distances,
    }
}

fn sample_range(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..range[1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SystemConfig {
        SystemConfig {
            n_bds: 3,
            n_tx_antennas: 4,
            n_rx_antennas: 2,
            ..SystemConfig::default()
        }
    }

    #[test]
    fn test_same_seed_identical() {
        let cfg = small_cfg();
        let geo = GeometryConfig::default();
        let a = generate_channels(&cfg, &geo, 42);
        let b = generate_channels(&cfg, &geo, 42);
        assert_eq!(a, b);
        let c = generate_channels(&cfg, &geo, 43);
        assert_ne!(a, c);
    }

    #[test]
    fn test_dimensions_match_config() {
        let cfg = small_cfg();
        let ch = generate_channels(&cfg, &GeometryConfig::default(), 7);
        assert!(ch.matches(&cfg));
        assert_eq!(ch.forward[0].len(), 4);
        assert_eq!(ch.backward[0].len(), 2);
        // Lower triangle unused: stays zero.
        assert_eq!(ch.inter_bd[(2, 0)], Complex64::new(0.0, 0.0));
        assert_ne!(ch.inter_bd[(0, 2)], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn test_los_dominant_limit() {
        // Huge K-factor: every entry's magnitude is within 1% of sqrt(gain).
        let cfg = small_cfg();
        let geo = GeometryConfig {
            rician_k_db: 60.0,
            ..GeometryConfig::default()
        };
        let ch = generate_channels(&cfg, &geo, 3);
        for (n, h) in ch.forward.iter().enumerate() {
            let amp = geo.pathloss_gain(ch.hap_distances[n]).sqrt();
            for entry in h.iter() {
                let rel = (entry.norm() - amp).abs() / amp;
                assert!(rel < 1e-2, "relative deviation {rel} too large");
            }
        }
    }

    #[test]
    fn test_small_scale_unit_mean_power() {
        // E[|h|^2 / gain] over 1e5 entries should be within 3% of 1.
        let cfg = SystemConfig {
            n_bds: 100,
            n_tx_antennas: 50,
            n_rx_antennas: 50,
            ..SystemConfig::default()
        };
        let geo = GeometryConfig::default();
        let mut sum = 0.0;
        let mut count = 0usize;
        for seed in 0..10 {
            let ch = generate_channels(&cfg, &geo, seed);
            for (n, h) in ch.forward.iter().enumerate() {
                let gain = geo.pathloss_gain(ch.hap_distances[n]);
                for entry in h.iter() {
                    sum += entry.norm_sqr() / gain;
                    count += 1;
                }
            }
            for (n, h) in ch.backward.iter().enumerate() {
                let gain = geo.pathloss_gain(ch.hap_distances[n]);
                for entry in h.iter() {
                    sum += entry.norm_sqr() / gain;
                    count += 1;
                }
            }
        }
        assert!(count >= 100_000);
        let mean = sum / count as f64;
        assert!((0.97..=1.03).contains(&mean), "mean power {mean}");
    }

    #[test]
    fn test_amplitude_distance_slope() {
        // Mean amplitude versus distance follows d^(-3/2): regress
        // log-amplitude on log-distance at pinned distances.
        let cfg = SystemConfig {
            n_bds: 40,
            n_tx_antennas: 40,
            n_rx_antennas: 1,
            ..SystemConfig::default()
        };
        let distances = [1.0, 1.5, 2.0, 3.0, 4.0, 5.0];
        let mut logs: Vec<(f64, f64)> = Vec::new();
        for (i, &d) in distances.iter().enumerate() {
            let geo = GeometryConfig {
                hap_bd_distance_range: [d, d],
                ..GeometryConfig::default()
            };
            let mut amp_sum = 0.0;
            let mut count = 0usize;
            for seed in 0..5 {
                let ch = generate_channels(&cfg, &geo, 1000 + 10 * i as u64 + seed);
                for h in &ch.forward {
                    for entry in h.iter() {
                        amp_sum += entry.norm();
                        count += 1;
                    }
                }
            }
            logs.push((d.ln(), (amp_sum / count as f64).ln()));
        }
        let n = logs.len() as f64;
        let sx: f64 = logs.iter().map(|p| p.0).sum();
        let sy: f64 = logs.iter().map(|p| p.1).sum();
        let sxx: f64 = logs.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = logs.iter().map(|p| p.0 * p.1).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        assert!(
            (slope + 1.5).abs() < 0.075,
            "amplitude slope {slope} should be near -1.5"
        );
    }

    #[test]
    fn test_json_round_trip_exact() {
        let cfg = small_cfg();
        let ch = generate_channels(&cfg, &GeometryConfig::default(), 11);
        let text = ch.to_json().unwrap();
        let back = ChannelSet::from_json(&text).unwrap();
        assert_eq!(ch, back);
    }
}
