//! mmWave link budget: floating-intercept pathloss, sectored directional
//! gains, the multipath channel matrix over uniform linear arrays, SINR with
//! adjacent-channel interference and Shannon throughput.
//!
//! Everything here works in the dB domain unless a function name says
//! otherwise, and every function is pure.

use std::f64::consts::PI;
use std::ops::Add;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Thermal noise density at room temperature.
pub const THERMAL_NOISE_DBM_PER_HZ: f64 = -174.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelParams {
    /// Floating intercept (dB).
    pub alpha_db: f64,
    /// Pathloss exponent.
    pub beta: f64,
    /// Standard deviation of the static log-normal shadowing term (dB).
    pub sigma_db: f64,
    pub carrier_freq_hz: f64,
    /// Number of multipath taps used when a channel matrix is evaluated.
    pub num_taps: usize,
    /// Adjacent channel interference rejection (dB).
    pub aci_rejection_db: f64,
    /// Subpath attenuation applied on every link (dB). Zero for LOS.
    pub subpath_attenuation_db: f64,
    pub noise_figure_db: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            alpha_db: 72.0,
            beta: 2.92,
            sigma_db: 4.0,
            carrier_freq_hz: 28e9,
            num_taps: 3,
            aci_rejection_db: 30.0,
            subpath_attenuation_db: 0.0,
            noise_figure_db: 7.0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "beta must be > 0, got {}",
                self.beta
            )));
        }
        if !(self.sigma_db >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "sigma must be >= 0, got {}",
                self.sigma_db
            )));
        }
        if !(self.aci_rejection_db >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "aci_rejection must be >= 0, got {}",
                self.aci_rejection_db
            )));
        }
        if !self.alpha_db.is_finite() || !(self.carrier_freq_hz > 0.0) {
            return Err(Error::InvalidConfig(
                "alpha and carrier_freq must be finite and positive".into(),
            ));
        }
        Ok(())
    }
}

/// Sectored beam abstraction: flat mainlobe of `beamwidth_deg`, flat
/// sidelobe floor everywhere else.
#[derive(Debug, Clone, PartialEq)]
pub struct AntennaPattern {
    pub mainlobe_gain_dbi: f64,
    pub beamwidth_deg: f64,
    pub sidelobe_gain_dbi: f64,
    pub boresight_deg: f64,
    pub num_elements: usize,
}

impl Default for AntennaPattern {
    fn default() -> Self {
        Self {
            mainlobe_gain_dbi: 10.0,
            beamwidth_deg: 45.0,
            sidelobe_gain_dbi: -10.0,
            boresight_deg: 0.0,
            num_elements: 16,
        }
    }
}

impl AntennaPattern {
    pub fn validate(&self) -> Result<()> {
        if !(self.beamwidth_deg > 0.0 && self.beamwidth_deg <= 360.0) {
            return Err(Error::InvalidConfig(format!(
                "beamwidth must be in (0, 360], got {}",
                self.beamwidth_deg
            )));
        }
        if self.sidelobe_gain_dbi > self.mainlobe_gain_dbi {
            return Err(Error::InvalidConfig(
                "sidelobe gain exceeds mainlobe gain".into(),
            ));
        }
        if self.num_elements == 0 {
            return Err(Error::InvalidConfig(
                "antenna needs at least one element".into(),
            ));
        }
        Ok(())
    }

    /// Gain towards a direction `offset_deg` away from boresight. The
    /// mainlobe edge itself counts as mainlobe.
    #[inline]
    pub fn gain_dbi(&self, offset_deg: f64) -> f64 {
        if offset_deg.abs() <= self.beamwidth_deg / 2.0 {
            self.mainlobe_gain_dbi
        } else {
            self.sidelobe_gain_dbi
        }
    }

    /// Whether a bearing falls inside the mainlobe for the current boresight.
    pub fn covers(&self, bearing_deg: f64) -> bool {
        angle_between_deg(self.boresight_deg, bearing_deg) <= self.beamwidth_deg / 2.0
    }
}

/// One propagation path of the multipath channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathComponent {
    pub gain: Complex64,
    /// Angle of departure (radians).
    pub aod: f64,
    /// Angle of arrival (radians).
    pub aoa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    pub tx_power_dbm: f64,
    /// Combined transmit and receive antenna gain (dB).
    pub combined_gain_db: f64,
    pub subpath_attenuation_db: f64,
    pub pathloss_db: f64,
    pub noise_dbm: f64,
    pub aci_interference_dbm: f64,
}

impl LinkBudget {
    pub fn received_power_dbm(&self) -> f64 {
        received_power_dbm(self)
    }

    pub fn sinr(&self) -> f64 {
        sinr_linear(
            self.received_power_dbm(),
            self.noise_dbm,
            self.aci_interference_dbm,
        )
    }
}

/// How the throughput expression combines overhead, bandwidth and capacity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThroughputFormula {
    /// `overhead * bandwidth * log2(1 + sinr)`.
    #[default]
    Shannon,
    /// `overhead * bandwidth + log2(1 + sinr)`, kept for reproducing the
    /// printed expression verbatim.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThroughputParams {
    pub overhead: f64,
    pub bandwidth_hz: f64,
    pub formula: ThroughputFormula,
}

impl Default for ThroughputParams {
    fn default() -> Self {
        Self {
            overhead: 0.8,
            bandwidth_hz: 100e6,
            formula: ThroughputFormula::Shannon,
        }
    }
}

impl ThroughputParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.overhead > 0.0 && self.overhead <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "overhead must be in (0, 1], got {}",
                self.overhead
            )));
        }
        if !(self.bandwidth_hz > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "bandwidth must be > 0, got {}",
                self.bandwidth_hz
            )));
        }
        Ok(())
    }
}

#[inline]
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[inline]
pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Wraps any angle into `[0, 360)`.
#[inline]
pub fn wrap_deg(a: f64) -> f64 {
    let r = a.rem_euclid(360.0);
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

/// Smallest absolute angle between two bearings, in `[0, 180]`.
#[inline]
pub fn angle_between_deg(a: f64, b: f64) -> f64 {
    let d = wrap_deg(a - b);
    if d > 180.0 {
        360.0 - d
    } else {
        d
    }
}

/// Mean pathloss plus the given shadowing realisation.
pub fn pathloss_db(distance_m: f64, p: &ChannelParams, shadowing_db: f64) -> Result<f64> {
    if !(distance_m > 0.0) {
        return Err(Error::Domain(format!(
            "pathloss distance must be > 0, got {distance_m}"
        )));
    }
    Ok(p.alpha_db + 10.0 * p.beta * distance_m.log10() + shadowing_db)
}

pub fn received_power_dbm(b: &LinkBudget) -> f64 {
    b.tx_power_dbm + b.combined_gain_db - b.subpath_attenuation_db - b.pathloss_db
}

/// Thermal noise over `bandwidth_hz` including the receiver noise figure.
pub fn noise_dbm(bandwidth_hz: f64, noise_figure_db: f64) -> f64 {
    THERMAL_NOISE_DBM_PER_HZ + 10.0 * bandwidth_hz.log10() + noise_figure_db
}

/// Uniform linear array response with half-wavelength spacing.
pub fn array_response(angle: f64, n: usize) -> Vec<Complex64> {
    let norm = 1.0 / (n as f64).sqrt();
    let phase = PI * angle.sin();
    (0..n)
        .map(|k| Complex64::from_polar(norm, phase * k as f64))
        .collect()
}

/// Dense row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ChannelMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    /// Squared Frobenius norm.
    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }
}

impl Add for &ChannelMatrix {
    type Output = ChannelMatrix;

    fn add(self, rhs: &ChannelMatrix) -> ChannelMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        ChannelMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

/// Sum of rank-one path contributions `g * u_rx(aoa) * u_tx(aod)^H`.
pub fn channel_matrix(paths: &[PathComponent], n_rx: usize, n_tx: usize) -> Result<ChannelMatrix> {
    if n_rx == 0 || n_tx == 0 {
        return Err(Error::Dimension(format!(
            "array sizes must be >= 1, got {n_rx}x{n_tx}"
        )));
    }
    let mut h = ChannelMatrix::zeros(n_rx, n_tx);
    for path in paths {
        if !(path.gain.re.is_finite()
            && path.gain.im.is_finite()
            && path.aod.is_finite()
            && path.aoa.is_finite())
        {
            return Err(Error::Domain("path component has non-finite values".into()));
        }
        let u_rx = array_response(path.aoa, n_rx);
        let u_tx = array_response(path.aod, n_tx);
        for (r, ur) in u_rx.iter().enumerate() {
            let row = path.gain * ur;
            for (c, ut) in u_tx.iter().enumerate() {
                h.data[r * n_tx + c] += row * ut.conj();
            }
        }
    }
    Ok(h)
}

/// Combined gain of a Tx/Rx pair given each side's offset from boresight.
pub fn effective_gain(
    tx: &AntennaPattern,
    rx: &AntennaPattern,
    tx_offset_deg: f64,
    rx_offset_deg: f64,
) -> f64 {
    tx.gain_dbi(tx_offset_deg) + rx.gain_dbi(rx_offset_deg)
}

pub fn sinr_linear(received_dbm: f64, noise_dbm: f64, interference_dbm: f64) -> f64 {
    db_to_linear(received_dbm) / (db_to_linear(noise_dbm) + db_to_linear(interference_dbm))
}

/// In-band interference contributed by adjacent-channel transmitters, given
/// their received powers before rejection. No transmitters gives `-inf`.
pub fn aci_interference_dbm<I>(adjacent_powers_dbm: I, aci_rejection_db: f64) -> f64
where
    I: IntoIterator<Item = f64>,
{
    let total: f64 = adjacent_powers_dbm
        .into_iter()
        .map(|p| db_to_linear(p - aci_rejection_db))
        .sum();
    linear_to_db(total)
}

/// Bits per second carried at the given linear SINR.
pub fn throughput(sinr: f64, t: &ThroughputParams) -> f64 {
    let capacity = (1.0 + sinr.max(0.0)).log2();
    match t.formula {
        ThroughputFormula::Shannon => t.overhead * t.bandwidth_hz * capacity,
        ThroughputFormula::Literal => t.overhead * t.bandwidth_hz + capacity,
    }
}
