//! System model evaluation: harvested and consumed energy, throughput,
//! the energy-efficiency objective, constraint feasibility and the
//! maximum-ratio-combining receive beamformer.
//!
//! Everything here is a pure function of its inputs and safe to call
//! concurrently on shared data.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::channel::ChannelSet;
use crate::config::SystemConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("input power must be non-negative, got {0}")]
    NegativeInputPower(f64),
    #[error("device index {index} out of range for {n_bds} devices")]
    IndexOutOfRange { index: usize, n_bds: usize },
    #[error("allocation consumes no energy; the efficiency ratio is undefined")]
    DegenerateAllocation,
    #[error("effective channel is zero; receive beamformer undefined")]
    DegenerateChannel,
    #[error("allocation and channel dimensions disagree")]
    DimensionMismatch,
}

/// Transmit beamformers, either as vectors or as relaxed covariance matrices.
#[derive(Debug, Clone, PartialEq)]
pub enum Beams {
    /// One length-M beamforming vector per device.
    Vectors(Vec<DVector<Complex64>>),
    /// One M-by-M Hermitian PSD covariance per device.
    Matrices(Vec<DMatrix<Complex64>>),
}

impl Beams {
    pub fn len(&self) -> usize {
        match self {
            Beams::Vectors(v) => v.len(),
            Beams::Matrices(m) => m.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Transmit power of slot `i`: the squared beam norm, or the trace in
    /// the relaxed representation.
    pub fn power(&self, i: usize) -> f64 {
        match self {
            Beams::Vectors(v) => v[i].norm_squared(),
            Beams::Matrices(m) => m[i].diagonal().iter().map(|z| z.re).sum(),
        }
    }
}

/// One resource allocation: slot durations, reflection coefficients,
/// transmit beams and optional receive combiners.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    /// Slot durations in seconds; non-negative, summing to at most 1.
    pub t: Vec<f64>,
    /// Reflection coefficients in `[alpha_floor, 1]`.
    pub alpha: Vec<f64>,
    /// Transmit beamformers.
    pub beams: Beams,
    /// Receive combiners (unit norm); `None` means ideal maximum-ratio
    /// combining is assumed wherever a combiner is needed.
    pub v: Option<Vec<DVector<Complex64>>>,
}

impl Allocation {
    pub fn n_bds(&self) -> usize {
        self.t.len()
    }
}

/// Received forward power at device `n` while the beam of slot `i` is active.
pub fn forward_power(alloc: &Allocation, ch: &ChannelSet, n: usize, i: usize) -> f64 {
    let h = &ch.forward[n];
    match &alloc.beams {
        Beams::Vectors(w) => h.dotc(&w[i]).norm_sqr(),
        // Tr(h h^H W) = h^H W h
        Beams::Matrices(w) => {
            let x = &w[i] * h;
            h.dotc(&x).re
        }
    }
}

/// Piecewise-linear harvester transfer function: converted power
/// `eta * p_in` clamped to zero below the sensitivity threshold and to
/// `p_sat` above the saturation threshold.
pub fn eh_output(p_in: f64, cfg: &SystemConfig) -> Result<f64, ModelError> {
    if p_in < 0.0 {
        return Err(ModelError::NegativeInputPower(p_in));
    }
    let converted = cfg.eh_efficiency * p_in;
    Ok(if converted > cfg.p_sat {
        cfg.p_sat
    } else if converted >= cfg.p_sen {
        converted
    } else {
        0.0
    })
}

/// Harvested energy of one device, split by source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarvestBreakdown {
    /// Energy harvested from the unreflected share during the device's own slot.
    pub own_slot: f64,
    /// Energy harvested from the carrier beamed at earlier devices.
    pub ambient: f64,
    /// Energy recycled from earlier devices' backscattered signals.
    pub recycled: f64,
}

impl HarvestBreakdown {
    pub fn total(&self) -> f64 {
        self.own_slot + self.ambient + self.recycled
    }
}

/// Harvested energy of device `n` (0-based) over the frame.
pub fn harvested_energy(
    n: usize,
    alloc: &Allocation,
    ch: &ChannelSet,
    cfg: &SystemConfig,
) -> Result<HarvestBreakdown, ModelError> {
    harvested_energy_with(n, alloc, ch, cfg, true)
}

/// Same as [`harvested_energy`], with the recycling source switchable so the
/// non-recycling baseline can reuse the model.
pub fn harvested_energy_with(
    n: usize,
    alloc: &Allocation,
    ch: &ChannelSet,
    cfg: &SystemConfig,
    recycling: bool,
) -> Result<HarvestBreakdown, ModelError> {
    check_index(n, alloc)?;
    if alloc.beams.len() != alloc.t.len() || ch.n_bds() != alloc.t.len() {
        return Err(ModelError::DimensionMismatch);
    }
    let own_slot = alloc.t[n]
        * eh_output(
            (1.0 - alloc.alpha[n]) * forward_power(alloc, ch, n, n),
            cfg,
        )?;
    let mut ambient = 0.0;
    let mut recycled = 0.0;
    for i in 0..n {
        ambient += alloc.t[i] * eh_output(forward_power(alloc, ch, n, i), cfg)?;
        if recycling {
            let gain = ch.inter_bd[(i, n)].norm_sqr();
            recycled += alloc.t[i]
                * eh_output(alloc.alpha[i] * forward_power(alloc, ch, i, i) * gain, cfg)?;
        }
    }
    Ok(HarvestBreakdown {
        own_slot,
        ambient,
        recycled,
    })
}

/// Energy consumed by device `n` and its slot's transmission: beam power plus
/// backscattering circuit power during the slot, standby circuit power while
/// earlier devices transmit.
pub fn consumed_energy(n: usize, alloc: &Allocation, cfg: &SystemConfig) -> Result<f64, ModelError> {
    check_index(n, alloc)?;
    let standby: f64 = alloc.t[..n].iter().sum::<f64>() * cfg.p_sc;
    Ok(alloc.t[n] * (alloc.beams.power(n) + cfg.p_bc) + standby)
}

/// Achievable throughput (bits, unit bandwidth) of device `n`.
///
/// With explicit receive combiners the literal received signal-to-noise
/// ratio is used; otherwise the maximum-ratio-combining value
/// `||h_b||^2 |h_f^H w|^2` (trace form for matrix beams) stands in.
pub fn throughput(
    n: usize,
    alloc: &Allocation,
    ch: &ChannelSet,
    cfg: &SystemConfig,
) -> Result<f64, ModelError> {
    check_index(n, alloc)?;
    let signal = match (&alloc.v, &alloc.beams) {
        (Some(v), Beams::Vectors(w)) => {
            let rx = v[n].dotc(&ch.backward[n]).norm_sqr();
            rx * ch.forward[n].dotc(&w[n]).norm_sqr()
        }
        _ => ch.backward[n].norm_squared() * forward_power(alloc, ch, n, n),
    };
    let denom = cfg.si_coeff * alloc.beams.power(n) + cfg.noise_power;
    let snr = alloc.alpha[n] * signal / denom;
    Ok(alloc.t[n] * (1.0 + snr).log2())
}

/// Total system energy efficiency in bits per Joule.
pub fn ee_objective(
    alloc: &Allocation,
    ch: &ChannelSet,
    cfg: &SystemConfig,
) -> Result<f64, ModelError> {
    let mut rate = 0.0;
    let mut energy = 0.0;
    for n in 0..alloc.n_bds() {
        rate += throughput(n, alloc, ch, cfg)?;
        energy += consumed_energy(n, alloc, cfg)?;
    }
    if energy <= 0.0 {
        return Err(ModelError::DegenerateAllocation);
    }
    Ok(rate / energy)
}

/// Sum of the parametric objective `sum R_n - eta * sum E_n` at `alloc`.
pub fn parametric_objective(
    alloc: &Allocation,
    eta: f64,
    ch: &ChannelSet,
    cfg: &SystemConfig,
) -> Result<f64, ModelError> {
    let mut value = 0.0;
    for n in 0..alloc.n_bds() {
        value += throughput(n, alloc, ch, cfg)? - eta * consumed_energy(n, alloc, cfg)?;
    }
    Ok(value)
}

/// Per-constraint slacks of one allocation. A slack is the amount by which
/// the constraint holds; negative means violated.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    /// Reflection coefficient within `[alpha_floor, 1]`, per device.
    pub alpha_range: Vec<f64>,
    /// Unit frame minus total allocated time.
    pub time_budget: f64,
    /// Throughput above the floor, per device.
    pub rate_floor: Vec<f64>,
    /// Transmit energy budget minus spent energy.
    pub energy_budget: f64,
    /// Harvested energy minus circuit consumption, per device.
    pub eh_causality: Vec<f64>,
    /// Negated distance of each combiner norm from 1 (0 when no combiner).
    pub rx_norm: Vec<f64>,
    /// Slot durations (non-negativity), per device.
    pub time_nonneg: Vec<f64>,
    pub feasible: bool,
    pub worst_violation: f64,
    pub tolerance: f64,
}

impl FeasibilityReport {
    pub fn min_slack(&self) -> f64 {
        let mut m = self.time_budget.min(self.energy_budget);
        for s in self
            .alpha_range
            .iter()
            .chain(&self.rate_floor)
            .chain(&self.eh_causality)
            .chain(&self.rx_norm)
            .chain(&self.time_nonneg)
        {
            m = m.min(*s);
        }
        m
    }
}

/// Evaluate every constraint of the allocation problem at `alloc` under the
/// true piecewise harvester, with a slack tolerance of `1e-7`.
pub fn check_feasibility(alloc: &Allocation, ch: &ChannelSet, cfg: &SystemConfig) -> FeasibilityReport {
    check_feasibility_with(alloc, ch, cfg, true)
}

/// [`check_feasibility`] with the recycling harvest source switchable.
pub fn check_feasibility_with(
    alloc: &Allocation,
    ch: &ChannelSet,
    cfg: &SystemConfig,
    recycling: bool,
) -> FeasibilityReport {
    let tolerance = 1e-7;
    let n_bds = alloc.n_bds();
    let mut alpha_range = Vec::with_capacity(n_bds);
    let mut rate_floor = Vec::with_capacity(n_bds);
    let mut eh_causality = Vec::with_capacity(n_bds);
    let mut rx_norm = Vec::with_capacity(n_bds);
    let mut time_nonneg = Vec::with_capacity(n_bds);
    let mut spent = 0.0;
    for n in 0..n_bds {
        alpha_range.push((alloc.alpha[n] - cfg.alpha_floor).min(1.0 - alloc.alpha[n]));
        rate_floor.push(throughput(n, alloc, ch, cfg).unwrap_or(f64::NEG_INFINITY) - cfg.r_min);
        let harvested = harvested_energy_with(n, alloc, ch, cfg, recycling)
            .map(|h| h.total())
            .unwrap_or(f64::NEG_INFINITY);
        let needs = alloc.t[n] * cfg.p_bc + alloc.t[..n].iter().sum::<f64>() * cfg.p_sc;
        eh_causality.push(harvested - needs);
        rx_norm.push(match &alloc.v {
            Some(v) => -(v[n].norm() - 1.0).abs(),
            None => 0.0,
        });
        time_nonneg.push(alloc.t[n]);
        spent += alloc.t[n] * alloc.beams.power(n);
    }
    let time_budget = 1.0 - alloc.t.iter().sum::<f64>();
    let energy_budget = cfg.e_source - spent;
    let mut report = FeasibilityReport {
        alpha_range,
        time_budget,
        rate_floor,
        energy_budget,
        eh_causality,
        rx_norm,
        time_nonneg,
        feasible: false,
        worst_violation: 0.0,
        tolerance,
    };
    let min_slack = report.min_slack();
    report.feasible = min_slack >= -tolerance;
    report.worst_violation = (-min_slack).max(0.0);
    report
}

/// Maximum-ratio-combining receive beamformer for device `n` given its
/// transmit beam: the unit vector along `h_b (h_f^H w)`.
pub fn mrc_receive(
    w_n: &DVector<Complex64>,
    ch: &ChannelSet,
    n: usize,
) -> Result<DVector<Complex64>, ModelError> {
    if n >= ch.n_bds() {
        return Err(ModelError::IndexOutOfRange {
            index: n,
            n_bds: ch.n_bds(),
        });
    }
    let scale = ch.forward[n].dotc(w_n);
    let effective = &ch.backward[n] * scale;
    let norm = effective.norm();
    if norm <= 0.0 {
        return Err(ModelError::DegenerateChannel);
    }
    Ok(effective / Complex64::new(norm, 0.0))
}

fn check_index(n: usize, alloc: &Allocation) -> Result<(), ModelError> {
    if n >= alloc.n_bds() {
        Err(ModelError::IndexOutOfRange {
            index: n,
            n_bds: alloc.n_bds(),
        })
    } else {
        Ok(())
    }
}

/// Operating region of one harvester input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EhRegion {
    /// Converted power below the sensitivity threshold; harvests nothing.
    Zero,
    /// Converted power inside the linear window.
    Linear,
    /// Converted power above saturation; harvests `p_sat`.
    Saturated,
}

/// Classify a harvester input power.
pub fn classify_eh_input(p_in: f64, cfg: &SystemConfig) -> EhRegion {
    let converted = cfg.eh_efficiency * p_in;
    if converted > cfg.p_sat {
        EhRegion::Saturated
    } else if converted >= cfg.p_sen {
        EhRegion::Linear
    } else {
        EhRegion::Zero
    }
}

/// Region assignment for every harvester input term of the accumulated-EH
/// sums, used by the subsolvers to replace the piecewise transfer function
/// with its active piece.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EhTermRegions {
    /// Own-slot term of each device.
    pub own: Vec<EhRegion>,
    /// `ambient[n][i]`: device `n` harvesting the carrier of slot `i < n`.
    pub ambient: Vec<Vec<EhRegion>>,
    /// `recycled[n][i]`: device `n` recycling slot `i < n`'s backscatter.
    pub recycled: Vec<Vec<EhRegion>>,
}

impl EhTermRegions {
    /// All-linear assignment for `n` devices.
    pub fn all_linear(n: usize) -> Self {
        Self {
            own: vec![EhRegion::Linear; n],
            ambient: (0..n).map(|k| vec![EhRegion::Linear; k]).collect(),
            recycled: (0..n).map(|k| vec![EhRegion::Linear; k]).collect(),
        }
    }

    /// Classify every term from the reflection coefficients and the received
    /// forward powers. `fwd_power[n][i]` is the power at device `n` under
    /// slot `i`'s beam; `recycle_power[i][n]` is the incident recycled power
    /// at device `n` from slot `i` at full reflection.
    pub fn classify(
        alpha: &[f64],
        fwd_power: &[Vec<f64>],
        recycle_power: &[Vec<f64>],
        cfg: &SystemConfig,
    ) -> Self {
        let n = alpha.len();
        let own = (0..n)
            .map(|k| classify_eh_input((1.0 - alpha[k]) * fwd_power[k][k], cfg))
            .collect();
        let ambient = (0..n)
            .map(|k| {
                (0..k)
                    .map(|i| classify_eh_input(fwd_power[k][i], cfg))
                    .collect()
            })
            .collect();
        let recycled = (0..n)
            .map(|k| {
                (0..k)
                    .map(|i| classify_eh_input(alpha[i] * recycle_power[i][k], cfg))
                    .collect()
            })
            .collect();
        Self {
            own,
            ambient,
            recycled,
        }
    }

    /// Number of terms whose assignment differs from `other`.
    pub fn diff_count(&self, other: &Self) -> usize {
        let mut count = 0;
        for (a, b) in self.own.iter().zip(&other.own) {
            count += usize::from(a != b);
        }
        for (row_a, row_b) in self.ambient.iter().zip(&other.ambient) {
            for (a, b) in row_a.iter().zip(row_b) {
                count += usize::from(a != b);
            }
        }
        for (row_a, row_b) in self.recycled.iter().zip(&other.recycled) {
            for (a, b) in row_a.iter().zip(row_b) {
                count += usize::from(a != b);
            }
        }
        count
    }
}

/// Outer product `h_f h_f^H` of device `n`'s forward channel.
pub fn forward_outer(ch: &ChannelSet, n: usize) -> DMatrix<Complex64> {
    let h = &ch.forward[n];
    h * h.adjoint()
}

/// Rate coupling matrix `||h_b||^2 h_f h_f^H` of device `n`.
pub fn rate_matrix(ch: &ChannelSet, n: usize) -> DMatrix<Complex64> {
    forward_outer(ch, n) * Complex64::new(ch.backward[n].norm_squared(), 0.0)
}

/// `Tr(A W)` for Hermitian `A`.
pub fn trace_product(a: &DMatrix<Complex64>, w: &DMatrix<Complex64>) -> f64 {
    (a * w).diagonal().iter().map(|z| z.re).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_channels, GeometryConfig};

    fn scalar_cfg() -> SystemConfig {
        SystemConfig {
            n_bds: 1,
            n_tx_antennas: 1,
            n_rx_antennas: 1,
            ..SystemConfig::default()
        }
    }

    /// Channel set with pinned scalar entries for hand calculations.
    fn unit_channels(n: usize) -> ChannelSet {
        let one = Complex64::new(1.0, 0.0);
        let mut inter = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                inter[(i, j)] = one;
            }
        }
        ChannelSet {
            forward: (0..n).map(|_| DVector::from_element(1, one)).collect(),
            backward: (0..n).map(|_| DVector::from_element(1, one)).collect(),
            inter_bd: inter,
            seed: 0,
            hap_distances: vec![1.0; n],
            bd_distances: DMatrix::zeros(n, n),
        }
    }

    fn scalar_alloc(t: &[f64], alpha: &[f64], power: &[f64]) -> Allocation {
        Allocation {
            t: t.to_vec(),
            alpha: alpha.to_vec(),
            beams: Beams::Vectors(
                power
                    .iter()
                    .map(|p| DVector::from_element(1, Complex64::new(p.sqrt(), 0.0)))
                    .collect(),
            ),
            v: None,
        }
    }

    #[test]
    fn test_eh_output_matches_piecewise_model() {
        let cfg = SystemConfig::default();
        // 10 mW in the linear window: eta * p exactly.
        assert_eq!(eh_output(10e-3, &cfg).unwrap(), 0.8 * 10e-3);
        // Zero input is below sensitivity.
        assert_eq!(eh_output(0.0, &cfg).unwrap(), 0.0);
        // 100 mW converts to 80 mW, clamped at saturation.
        assert_eq!(eh_output(100e-3, &cfg).unwrap(), cfg.p_sat);
        // 0.05 mW converts to 0.04 mW, under the 10^-1.2 mW threshold.
        assert_eq!(eh_output(0.05e-3, &cfg).unwrap(), 0.0);
        assert_eq!(
            eh_output(-1.0, &cfg),
            Err(ModelError::NegativeInputPower(-1.0))
        );
    }

    #[test]
    fn test_eh_output_monotone_and_bounded() {
        let cfg = SystemConfig::default();
        let mut prev = 0.0;
        for k in 0..=10_000 {
            let p = 40e-3 * k as f64 / 10_000.0;
            let out = eh_output(p, &cfg).unwrap();
            assert!(out >= prev - 1e-15, "not monotone at p = {p}");
            assert!((0.0..=cfg.p_sat).contains(&out));
            if cfg.eh_efficiency * p < cfg.p_sen {
                assert_eq!(out, 0.0);
            }
            prev = out;
        }
    }

    #[test]
    fn test_harvested_energy_first_device_has_single_term() {
        let cfg = SystemConfig {
            n_bds: 2,
            n_tx_antennas: 1,
            n_rx_antennas: 1,
            ..SystemConfig::default()
        };
        let ch = unit_channels(2);
        let alloc = scalar_alloc(&[0.4, 0.3], &[0.5, 0.5], &[10e-3, 10e-3]);
        let h = harvested_energy(0, &alloc, &ch, &cfg).unwrap();
        assert_eq!(h.ambient, 0.0);
        assert_eq!(h.recycled, 0.0);
        let expected = 0.4 * eh_output(0.5 * 10e-3, &cfg).unwrap();
        assert!((h.own_slot - expected).abs() < 1e-18);
        // Full reflection leaves nothing to harvest in the own slot.
        let alloc = scalar_alloc(&[0.4, 0.3], &[1.0, 0.5], &[10e-3, 10e-3]);
        assert_eq!(harvested_energy(0, &alloc, &ch, &cfg).unwrap().total(), 0.0);
    }

    #[test]
    fn test_harvested_energy_two_device_hand_calculation() {
        // Real scalar channels, f_{1,2} = 1, both beams sqrt(10 mW),
        // t = (0.5, 0.5), alpha = (0.5, 0.5):
        //   E_2 = 0.5 psi(5 mW) + 0.5 psi(10 mW) + 0.5 psi(5 mW)
        //       = 0.5 (4 + 8 + 4) mW * 1 s = 8 mJ.
        let cfg = SystemConfig {
            n_bds: 2,
            n_tx_antennas: 1,
            n_rx_antennas: 1,
            ..SystemConfig::default()
        };
        let ch = unit_channels(2);
        let alloc = scalar_alloc(&[0.5, 0.5], &[0.5, 0.5], &[10e-3, 10e-3]);
        let h = harvested_energy(1, &alloc, &ch, &cfg).unwrap();
        assert!((h.own_slot - 2e-3).abs() < 1e-15);
        assert!((h.ambient - 4e-3).abs() < 1e-15);
        assert!((h.recycled - 2e-3).abs() < 1e-15);
        assert!((h.total() - 8e-3).abs() < 1e-15);
        // Dropping recycling removes exactly the third term.
        let nr = harvested_energy_with(1, &alloc, &ch, &cfg, false).unwrap();
        assert_eq!(nr.recycled, 0.0);
        assert!((nr.total() - 6e-3).abs() < 1e-15);
    }

    #[test]
    fn test_harvested_energy_monotone_in_time_and_alpha() {
        let cfg = SystemConfig {
            n_bds: 3,
            n_tx_antennas: 2,
            n_rx_antennas: 2,
            ..SystemConfig::default()
        };
        let ch = generate_channels(&cfg, &GeometryConfig::default(), 5);
        let base = Allocation {
            t: vec![0.2, 0.3, 0.2],
            alpha: vec![0.5, 0.6, 0.4],
            beams: Beams::Vectors(
                (0..3)
                    .map(|n| ch.forward[n].clone() * Complex64::new(3.0, 0.0))
                    .collect(),
            ),
            v: None,
        };
        let h0 = harvested_energy(2, &base, &ch, &cfg).unwrap().total();
        for i in 0..=2 {
            let mut a = base.clone();
            a.t[i] += 0.05;
            let h = harvested_energy(2, &a, &ch, &cfg).unwrap().total();
            assert!(h >= h0 - 1e-15, "harvest decreased when t[{i}] grew");
        }
        for i in 0..2 {
            let mut a = base.clone();
            a.alpha[i] += 0.2;
            let h = harvested_energy(2, &a, &ch, &cfg).unwrap().total();
            assert!(h >= h0 - 1e-15, "harvest decreased when alpha[{i}] grew");
        }
    }

    #[test]
    fn test_consumed_energy_hand_calculation() {
        let cfg = SystemConfig {
            n_bds: 3,
            n_tx_antennas: 1,
            n_rx_antennas: 1,
            ..SystemConfig::default()
        };
        let alloc = scalar_alloc(&[0.2, 0.3, 0.1], &[0.5; 3], &[1.0, 1.0, 1.0]);
        // t_3 (1 W + 1 mW) + (t_1 + t_2) * 0.1 mW = 0.10015 J
        let e = consumed_energy(2, &alloc, &cfg).unwrap();
        assert!((e - 0.10015).abs() < 1e-15);
        // First device: no standby term.
        let e0 = consumed_energy(0, &alloc, &cfg).unwrap();
        assert!((e0 - 0.2 * (1.0 + 1e-3)).abs() < 1e-15);
        // All-zero time consumes nothing.
        let zero = scalar_alloc(&[0.0; 3], &[0.5; 3], &[1.0; 3]);
        for n in 0..3 {
            assert_eq!(consumed_energy(n, &zero, &cfg).unwrap(), 0.0);
        }
        assert!(consumed_energy(3, &alloc, &cfg).is_err());
    }

    #[test]
    fn test_throughput_scalar_instance() {
        let cfg = scalar_cfg();
        let ch = unit_channels(1);
        let alloc = scalar_alloc(&[1.0], &[1.0], &[1.0]);
        let r = throughput(0, &alloc, &ch, &cfg).unwrap();
        let expected = (1.0f64 + 1.0 / (1e-5 + 1e-14)).log2();
        assert!((r - expected).abs() < 1e-12);
        assert!((expected - 16.6096).abs() < 1e-3);
        // Zero slot duration: zero bits.
        let idle = scalar_alloc(&[0.0], &[cfg.alpha_floor], &[1.0]);
        assert_eq!(throughput(0, &idle, &ch, &cfg).unwrap(), 0.0);
        // Doubling the slot doubles the bits.
        let half = scalar_alloc(&[0.5], &[1.0], &[1.0]);
        let r_half = throughput(0, &half, &ch, &cfg).unwrap();
        assert!((2.0 * r_half - r).abs() < 1e-12);
    }

    #[test]
    fn test_throughput_explicit_combiner_matches_mrc_form() {
        let cfg = SystemConfig {
            n_bds: 2,
            n_tx_antennas: 3,
            n_rx_antennas: 4,
            ..SystemConfig::default()
        };
        let ch = generate_channels(&cfg, &GeometryConfig::default(), 9);
        let w: Vec<_> = (0..2)
            .map(|n| ch.forward[n].clone() * Complex64::new(2.0, 0.0))
            .collect();
        let v: Vec<_> = (0..2)
            .map(|n| mrc_receive(&w[n], &ch, n).unwrap())
            .collect();
        let with_v = Allocation {
            t: vec![0.4, 0.4],
            alpha: vec![0.7, 0.7],
            beams: Beams::Vectors(w.clone()),
            v: Some(v),
        };
        let without = Allocation {
            v: None,
            ..with_v.clone()
        };
        for n in 0..2 {
            let a = throughput(n, &with_v, &ch, &cfg).unwrap();
            let b = throughput(n, &without, &ch, &cfg).unwrap();
            assert!((a - b).abs() < 1e-9 * b.max(1.0));
        }
    }

    #[test]
    fn test_ee_objective_scalar_instance() {
        let cfg = scalar_cfg();
        let ch = unit_channels(1);
        let alloc = scalar_alloc(&[1.0], &[1.0], &[1.0]);
        let ee = ee_objective(&alloc, &ch, &cfg).unwrap();
        let rate = (1.0f64 + 1.0 / (1e-5 + 1e-14)).log2();
        assert!((ee - rate / 1.001).abs() < 1e-12);
        assert!((ee - 16.593).abs() < 1e-3);
        // Ratio invariance under slot scaling for a single device.
        for c in [0.9, 0.5, 0.1] {
            let scaled = scalar_alloc(&[c], &[1.0], &[1.0]);
            let e = ee_objective(&scaled, &ch, &cfg).unwrap();
            assert!((e - ee).abs() < 1e-9);
        }
        // No time allocated: degenerate ratio.
        let zero = scalar_alloc(&[0.0], &[1.0], &[1.0]);
        assert_eq!(
            ee_objective(&zero, &ch, &cfg),
            Err(ModelError::DegenerateAllocation)
        );
    }

    #[test]
    fn test_check_feasibility_flags_violations() {
        let cfg = SystemConfig {
            n_bds: 2,
            n_tx_antennas: 1,
            n_rx_antennas: 1,
            ..SystemConfig::default()
        };
        let ch = unit_channels(2);
        // All-zero time with a positive rate floor: infeasible via the floor.
        let idle = scalar_alloc(&[0.0, 0.0], &[0.5, 0.5], &[10e-3, 10e-3]);
        let report = check_feasibility(&idle, &ch, &cfg);
        assert!(!report.feasible);
        assert!(report.rate_floor.iter().all(|s| *s < 0.0));
        // Violating only the energy budget by 1 mJ reports exactly that much.
        let mut cfg2 = cfg.clone();
        cfg2.r_min = 0.0;
        let p = cfg2.e_source + 2e-3;
        let hot = scalar_alloc(&[0.5, 0.5], &[0.5, 0.5], &[p, p]);
        let report = check_feasibility(&hot, &ch, &cfg2);
        assert!(!report.feasible);
        assert!((report.energy_budget + 2e-3).abs() < 1e-12);
        assert!((report.worst_violation - 2e-3).abs() < 1e-12);
    }

    #[test]
    fn test_mrc_receive_aligns_with_effective_channel() {
        let one = Complex64::new(1.0, 0.0);
        let mut ch = unit_channels(1);
        ch.backward[0] = DVector::from_vec(vec![one, Complex64::new(0.0, 0.0)]);
        let w = DVector::from_element(1, Complex64::new(3.0, 0.0));
        let v = mrc_receive(&w, &ch, 0).unwrap();
        assert!((v[0] - one).norm() < 1e-12);
        assert!(v[1].norm() < 1e-12);

        let s = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        ch.backward[0] = DVector::from_vec(vec![s, s]);
        let v = mrc_receive(&w, &ch, 0).unwrap();
        assert!((v[0] - s).norm() < 1e-12 && (v[1] - s).norm() < 1e-12);

        let zero_w = DVector::from_element(1, Complex64::new(0.0, 0.0));
        assert_eq!(mrc_receive(&zero_w, &ch, 0), Err(ModelError::DegenerateChannel));
    }

    #[test]
    fn test_mrc_receive_snr_dominates_random_combiners() {
        use rand::SeedableRng;
        let cfg = SystemConfig {
            n_bds: 1,
            n_tx_antennas: 3,
            n_rx_antennas: 4,
            ..SystemConfig::default()
        };
        let ch = generate_channels(&cfg, &GeometryConfig::default(), 77);
        let w = ch.forward[0].clone() * Complex64::new(2.0, 0.0);
        let v_star = mrc_receive(&w, &ch, 0).unwrap();
        let snr_of = |v: &DVector<Complex64>| {
            v.dotc(&ch.backward[0]).norm_sqr() * ch.forward[0].dotc(&w).norm_sqr()
        };
        let best = snr_of(&v_star);
        // Consistency with the closed form after combining.
        let closed = ch.backward[0].norm_squared() * ch.forward[0].dotc(&w).norm_sqr();
        assert!((best - closed).abs() < 1e-9 * closed);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(123);
        for _ in 0..1000 {
            let mut u = DVector::from_fn(4, |_, _| {
                Complex64::new(
                    rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng),
                    rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng),
                )
            });
            u /= Complex64::new(u.norm(), 0.0);
            assert!(snr_of(&u) <= best * (1.0 + 1e-12));
        }
    }

    #[test]
    fn test_classify_eh_input_regions() {
        let cfg = SystemConfig::default();
        assert_eq!(classify_eh_input(1e-6, &cfg), EhRegion::Zero);
        assert_eq!(classify_eh_input(1e-3, &cfg), EhRegion::Linear);
        assert_eq!(classify_eh_input(1.0, &cfg), EhRegion::Saturated);
        // Boundaries belong to the linear window.
        assert_eq!(
            classify_eh_input(cfg.p_sen / cfg.eh_efficiency, &cfg),
            EhRegion::Linear
        );
        assert_eq!(
            classify_eh_input(cfg.p_sat / cfg.eh_efficiency, &cfg),
            EhRegion::Linear
        );
    }
}
