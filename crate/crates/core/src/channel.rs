//! Hybrid OMA/NOMA uplink: fading, rates, computation time and energy.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkBudget {
    #[serde(default = "defaults::bandwidth")]
    pub bandwidth_hz: f64,
    /// Noise power σ² in watts.
    #[serde(default = "defaults::noise")]
    pub noise_variance: f64,
    #[serde(default = "defaults::wavelength")]
    pub wavelength_m: f64,
    #[serde(default = "defaults::unit")]
    pub antenna_gain: f64,
    #[serde(default = "defaults::pathloss")]
    pub pathloss_exp: f64,
    #[serde(default = "defaults::radius")]
    pub cell_radius_m: f64,
}

pub(crate) mod defaults {
    pub fn bandwidth() -> f64 {
        1e6
    }
    /// −174 dBm/Hz over 1 MHz.
    pub fn noise() -> f64 {
        10f64.powf((-174.0 + 60.0 - 30.0) / 10.0)
    }
    /// 2.4 GHz carrier.
    pub fn wavelength() -> f64 {
        299_792_458.0 / 2.4e9
    }
    pub fn unit() -> f64 {
        1.0
    }
    pub fn pathloss() -> f64 {
        2.0
    }
    pub fn radius() -> f64 {
        600.0
    }
}

impl Default for LinkBudget {
    fn default() -> Self {
        Self {
            bandwidth_hz: defaults::bandwidth(),
            noise_variance: defaults::noise(),
            wavelength_m: defaults::wavelength(),
            antenna_gain: 1.0,
            pathloss_exp: 2.0,
            cell_radius_m: 600.0,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be finite and > 0, got {v}")))
    }
}

impl LinkBudget {
    pub fn validate(&self) -> Result<()> {
        positive("bandwidth_hz", self.bandwidth_hz)?;
        positive("noise_variance", self.noise_variance)?;
        positive("wavelength_m", self.wavelength_m)?;
        positive("antenna_gain", self.antenna_gain)?;
        positive("pathloss_exp", self.pathloss_exp)?;
        positive("cell_radius_m", self.cell_radius_m)
    }

    /// `L₁ = √δ₁ λ / (4π d^{α/2})`.
    pub fn large_scale(&self, distance_m: f64) -> Result<f64> {
        positive("distance", distance_m)?;
        Ok(self.antenna_gain.sqrt() * self.wavelength_m
            / (4.0 * std::f64::consts::PI * distance_m.powf(self.pathloss_exp / 2.0)))
    }

    /// Expected normalised gain `|L₁|²/σ²` (since `E|h₀|² = 1`).
    pub fn mean_gain(&self, distance_m: f64) -> Result<f64> {
        Ok(self.large_scale(distance_m)?.powi(2) / self.noise_variance)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceProfile {
    pub cpu_hz: f64,
    /// Local sample count β.
    pub samples: f64,
    pub cycles_per_bit: f64,
    pub energy_coeff: f64,
    pub distance_m: f64,
    pub max_power_w: f64,
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<()> {
        positive("cpu_hz", self.cpu_hz)?;
        positive("cycles_per_bit", self.cycles_per_bit)?;
        positive("energy_coeff", self.energy_coeff)?;
        positive("distance_m", self.distance_m)?;
        if !(self.samples >= 0.0) || !self.samples.is_finite() {
            return Err(Error::domain("samples must be finite and >= 0"));
        }
        if !(self.max_power_w >= 0.0) || !self.max_power_w.is_finite() {
            return Err(Error::domain("max_power_w must be finite and >= 0"));
        }
        Ok(())
    }

    /// `T_COM = ς β / ϑ`.
    pub fn computation_time(&self) -> f64 {
        self.cycles_per_bit * self.samples / self.cpu_hz
    }

    /// `κ ς ϑ² β`.
    pub fn computation_energy(&self) -> f64 {
        self.energy_coeff * self.cycles_per_bit * self.cpu_hz * self.cpu_hz * self.samples
    }
}

pub fn computation_time(device: &DeviceProfile) -> f64 {
    device.computation_time()
}

/// Normalised gains of the two users on one sub-channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelPairState {
    pub gain1: f64,
    pub gain2: f64,
    pub subchannel: usize,
}

impl ChannelPairState {
    /// Requires `gain1 ≥ gain2 ≥ 0`.
    pub fn new(gain1: f64, gain2: f64, subchannel: usize) -> Result<Self> {
        if !(gain2 >= 0.0) || !gain1.is_finite() {
            return Err(Error::domain("gains must be finite and >= 0"));
        }
        if gain1 < gain2 {
            return Err(Error::Invariant(format!("gain ordering violated: {gain1} < {gain2}")));
        }
        Ok(Self { gain1, gain2, subchannel })
    }
}

/// One fading draw with its factors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainDraw {
    pub large_scale: f64,
    /// `|h₀|²`, exponential with unit mean.
    pub fading: f64,
    pub gain: f64,
}

pub fn draw_gain<R: Rng + ?Sized>(distance_m: f64, budget: &LinkBudget, rng: &mut R) -> Result<GainDraw> {
    let large_scale = budget.large_scale(distance_m)?;
    let fading: f64 = Exp1.sample(rng);
    Ok(GainDraw { large_scale, fading, gain: large_scale * large_scale * fading / budget.noise_variance })
}

/// `|L₁ h₀|² / σ²` with `h₀ ~ CN(0,1)`.
pub fn sample_channel_gain(device: &DeviceProfile, budget: &LinkBudget, seed: u64) -> Result<f64> {
    Ok(draw_gain(device.distance_m, budget, &mut rng_from(seed))?.gain)
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be finite and >= 0, got {v}")))
    }
}

/// `B log₂(1 + P g)`.
pub fn rate_oma(power_w: f64, gain: f64, budget: &LinkBudget) -> Result<f64> {
    non_negative("power", power_w)?;
    non_negative("gain", gain)?;
    Ok(budget.bandwidth_hz * (power_w * gain).ln_1p() / std::f64::consts::LN_2)
}

/// `B log₂(1 + p₁g₁ / (p₂g₂ + 1))`; the first user must be the stronger one.
pub fn rate_noma_interfered(p1: f64, p2: f64, gain1: f64, gain2: f64, budget: &LinkBudget) -> Result<f64> {
    for (n, v) in [("p1", p1), ("p2", p2), ("gain1", gain1), ("gain2", gain2)] {
        non_negative(n, v)?;
    }
    if gain1 < gain2 {
        return Err(Error::Invariant(format!("gain ordering violated: {gain1} < {gain2}")));
    }
    Ok(sinr_rate(p1 * gain1 / (p2 * gain2 + 1.0), budget.bandwidth_hz))
}

/// `B log₂(1 + s)` without checks.
pub(crate) fn sinr_rate(sinr: f64, bandwidth_hz: f64) -> f64 {
    bandwidth_hz * sinr.ln_1p() / std::f64::consts::LN_2
}

/// Offload windows of a pair with both deadlines tight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeBudget {
    /// First user's solo window `T_d`.
    pub t_off_solo: f64,
    /// Shared NOMA window `T₂`.
    pub t_off_noma: f64,
    pub t_com_first: f64,
    pub t_com_second: f64,
    pub t_max: f64,
}

impl TimeBudget {
    /// `T₂ = T_max − T_COM,2`, `T_d = T_COM,2 − T_COM,1`.
    pub fn at_deadline(t_com_first: f64, t_com_second: f64, t_max: f64) -> Result<Self> {
        if t_com_first > t_com_second {
            return Err(Error::Invariant("first user must finish computing first".into()));
        }
        if t_max < t_com_second {
            return Err(Error::Infeasible(format!(
                "deadline {t_max} s precedes computation time {t_com_second} s"
            )));
        }
        Ok(Self {
            t_off_solo: t_com_second - t_com_first,
            t_off_noma: t_max - t_com_second,
            t_com_first,
            t_com_second,
            t_max,
        })
    }
}

/// Transmit powers of one pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Powers {
    pub p11: f64,
    pub p12: f64,
    pub p2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub computation: f64,
    pub transmit: f64,
}

impl EnergyBreakdown {
    pub fn total(&self) -> f64 {
        self.computation + self.transmit
    }
}

impl std::ops::Add for EnergyBreakdown {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self { computation: self.computation + o.computation, transmit: self.transmit + o.transmit }
    }
}

pub fn pair_energy_breakdown(
    first: &DeviceProfile,
    second: &DeviceProfile,
    powers: &Powers,
    times: &TimeBudget,
) -> Result<EnergyBreakdown> {
    non_negative("t_off_solo", times.t_off_solo)?;
    non_negative("t_off_noma", times.t_off_noma)?;
    Ok(EnergyBreakdown {
        computation: first.computation_energy() + second.computation_energy(),
        transmit: powers.p11 * times.t_off_solo + powers.p12 * times.t_off_noma + powers.p2 * times.t_off_noma,
    })
}

/// `E₁ + E₂` for a pair.
pub fn pair_energy(first: &DeviceProfile, second: &DeviceProfile, powers: &Powers, times: &TimeBudget) -> Result<f64> {
    Ok(pair_energy_breakdown(first, second, powers, times)?.total())
}
