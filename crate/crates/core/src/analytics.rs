//! Closed-form contention model: per-slot access probabilities for DCF and
//! IAB LBT contenders, the coupled collision fixed point, and the expected
//! rate of the probabilistic access/backhaul split.
//!
//! The engine in [`crate::sim`] never calls into this module; it exists so
//! the slot-level state machines can be checked against an analytical model.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcfParams {
    pub collision_prob: f64,
    /// Initial contention window `C`.
    pub max_backoff: u32,
    /// Number of window doublings `m`.
    pub stage_count: u32,
}

impl DcfParams {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.collision_prob) {
            return Err(Error::Domain(format!(
                "collision probability {} outside [0, 1]",
                self.collision_prob
            )));
        }
        if self.max_backoff < 1 || self.stage_count < 1 {
            return Err(Error::Domain("C and m must both be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IabLbtParams {
    pub collision_prob: f64,
    /// Contention window size `Z`.
    pub cw_size: u32,
}

impl IabLbtParams {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.collision_prob) {
            return Err(Error::Domain(format!(
                "collision probability {} outside [0, 1]",
                self.collision_prob
            )));
        }
        if self.cw_size < 1 {
            return Err(Error::Domain("Z must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbSplitParams {
    pub split_prob: f64,
    pub mean_packet_bits: f64,
    pub success_prob: f64,
    pub backhaul_active: bool,
    pub access_active: bool,
    pub mean_slot_backhaul: f64,
    pub mean_slot_access: f64,
}

/// Per-slot transmission probability of a saturated DCF contender with
/// binary exponential backoff.
///
/// The printed expression is 0/0 at `P_cw = 0.5`, so that point is rejected.
pub fn wifi_access_probability(p: &DcfParams) -> Result<f64> {
    p.validate()?;
    let pc = p.collision_prob;
    if pc == 0.5 {
        return Err(Error::Singular("P_cw = 0.5".into()));
    }
    let c = p.max_backoff as f64;
    let a = 1.0 - 2.0 * pc;
    let num = 2.0 * a;
    let den = a * (c + 1.0) + pc * c * (1.0 - (2.0 * pc).powi(p.stage_count as i32));
    Ok(num / den)
}

/// Same quantity as [`wifi_access_probability`] with the `(1 - (2p)^m)/(1 - 2p)`
/// factor expanded into its finite geometric sum. Defined on all of `[0, 1]`,
/// including the removable singularity.
pub fn wifi_access_probability_series(p: &DcfParams) -> Result<f64> {
    p.validate()?;
    Ok(wifi_tau(p.collision_prob, p.max_backoff, p.stage_count))
}

fn wifi_tau(pc: f64, c: u32, m: u32) -> f64 {
    let x = 2.0 * pc;
    let mut series = 0.0;
    let mut term = 1.0;
    for _ in 0..m {
        series += term;
        term *= x;
    }
    let c = c as f64;
    2.0 / (c + 1.0 + pc * c * series)
}

/// Per-slot transmission probability of a saturated IAB LBT contender.
///
/// Rewritten as `(1 - q^Z) / sum_{j=1..Z} (1 - q^j)` with `q = 1 - P_cb`,
/// which avoids the cancellation of the textbook form for small `P_cb`. At
/// `P_cb = 0` the expression is 0/0 and the limit `2/(Z+1)` is returned.
pub fn iab_access_probability(p: &IabLbtParams) -> Result<f64> {
    p.validate()?;
    Ok(iab_tau(p.collision_prob, p.cw_size))
}

fn iab_tau(pc: f64, z: u32) -> f64 {
    if pc == 0.0 {
        return 2.0 / (z as f64 + 1.0);
    }
    // P*S = 1 - q^Z and Z - q*S = sum_{j=1..Z} (1 - q^j); both sides are
    // formed from expm1 so small P keeps full precision.
    let lq = (-pc).ln_1p();
    let one_minus = |j: u32| -(j as f64 * lq).exp_m1();
    let den: f64 = (1..=z).map(one_minus).sum();
    one_minus(z) / den
}

/// Reference evaluation of [`iab_access_probability`] by summing the series
/// term by term.
pub fn iab_access_probability_direct(p: &IabLbtParams) -> Result<f64> {
    p.validate()?;
    let pc = p.collision_prob;
    let zf = p.cw_size as f64;
    if pc == 0.0 {
        return Ok(2.0 / (zf + 1.0));
    }
    let q = 1.0 - pc;
    let s: f64 = (1..=p.cw_size).map(|j| q.powi(j as i32 - 1)).sum();
    Ok((pc * s / zf) / (1.0 - q * s / zf))
}

/// Expected IAB rate when sessions are split between the backhaul pool
/// (probability `split_prob`) and the access pool.
pub fn probabilistic_strategy_rate(access_prob: f64, p: &ProbSplitParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&p.split_prob) {
        return Err(Error::Domain(format!(
            "split probability {} outside [0, 1]",
            p.split_prob
        )));
    }
    if !(p.mean_slot_backhaul > 0.0 && p.mean_slot_access > 0.0) {
        return Err(Error::Domain("mean slot lengths must be positive".into()));
    }
    let per_packet = p.mean_packet_bits * p.success_prob;
    let t = if p.backhaul_active { 1.0 } else { 0.0 };
    let t_prime = if p.access_active { 1.0 } else { 0.0 };
    Ok(access_prob
        * (p.split_prob * per_packet / p.mean_slot_backhaul * t
            + (1.0 - p.split_prob) * per_packet / p.mean_slot_access * t_prime))
}

/// Contender population and window sizes for the coupled model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContentionSetup {
    pub n_wifi: u32,
    pub n_iab: u32,
    pub dcf_cw: u32,
    pub dcf_stages: u32,
    pub lbt_cw: u32,
}

impl ContentionSetup {
    fn validate(&self) -> Result<()> {
        if self.n_wifi + self.n_iab == 0 {
            return Err(Error::Domain("at least one contender is required".into()));
        }
        if self.dcf_cw < 1 || self.dcf_stages < 1 || self.lbt_cw < 1 {
            return Err(Error::Domain("window parameters must be >= 1".into()));
        }
        Ok(())
    }

    /// Conditional collision probabilities seen by a tagged WiGig and a
    /// tagged IAB contender given everyone's attempt probabilities.
    pub fn collision_probs(&self, tau_w: f64, tau_i: f64) -> (f64, f64) {
        let idle_w = 1.0 - tau_w;
        let idle_i = 1.0 - tau_i;
        let p_cw = if self.n_wifi == 0 {
            0.0
        } else {
            1.0 - idle_w.powi(self.n_wifi as i32 - 1) * idle_i.powi(self.n_iab as i32)
        };
        let p_cb = if self.n_iab == 0 {
            0.0
        } else {
            1.0 - idle_w.powi(self.n_wifi as i32) * idle_i.powi(self.n_iab as i32 - 1)
        };
        (p_cw, p_cb)
    }

    fn map(&self, tau_w: f64, tau_i: f64) -> (f64, f64) {
        let (p_cw, p_cb) = self.collision_probs(tau_w, tau_i);
        let tw = if self.n_wifi == 0 {
            0.0
        } else {
            wifi_tau(p_cw, self.dcf_cw, self.dcf_stages)
        };
        let ti = if self.n_iab == 0 {
            0.0
        } else {
            iab_tau(p_cb, self.lbt_cw)
        };
        (tw, ti)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPoint {
    pub p_cw: f64,
    pub p_cb: f64,
    pub tau_w: f64,
    pub tau_i: f64,
    pub iterations: usize,
    pub residual: f64,
}

pub const DEFAULT_TOLERANCE: f64 = 1e-10;
const DAMPING: f64 = 0.5;
const MAX_ITERATIONS: usize = 10_000;

/// Solves the coupled collision model by damped fixed-point iteration from
/// the collision-free attempt probabilities.
pub fn solve_fixed_point(setup: &ContentionSetup, tol: f64) -> Result<FixedPoint> {
    let start = (
        if setup.n_wifi == 0 {
            0.0
        } else {
            2.0 / (setup.dcf_cw as f64 + 1.0)
        },
        if setup.n_iab == 0 {
            0.0
        } else {
            2.0 / (setup.lbt_cw as f64 + 1.0)
        },
    );
    solve_fixed_point_from(setup, tol, start)
}

pub fn solve_fixed_point_from(
    setup: &ContentionSetup,
    tol: f64,
    start: (f64, f64),
) -> Result<FixedPoint> {
    setup.validate()?;
    if !(tol > 0.0) {
        return Err(Error::Domain("tolerance must be positive".into()));
    }
    let (mut tw, mut ti) = start;
    let mut residual = f64::INFINITY;
    for it in 1..=MAX_ITERATIONS {
        let (nw, ni) = setup.map(tw, ti);
        residual = (nw - tw).abs().max((ni - ti).abs());
        tw = (1.0 - DAMPING) * tw + DAMPING * nw;
        ti = (1.0 - DAMPING) * ti + DAMPING * ni;
        if residual < tol {
            return Ok(finish(setup, tw, ti, it));
        }
    }
    Err(Error::NoConvergence {
        iterations: MAX_ITERATIONS,
        residual,
    })
}

fn finish(setup: &ContentionSetup, tw: f64, ti: f64, iterations: usize) -> FixedPoint {
    let (nw, ni) = setup.map(tw, ti);
    let (p_cw, p_cb) = setup.collision_probs(tw, ti);
    FixedPoint {
        p_cw,
        p_cb,
        tau_w: tw,
        tau_i: ti,
        iterations,
        residual: (nw - tw).abs().max((ni - ti).abs()),
    }
}

/// Second, independent solver: nested bisection on the coupled residual.
///
/// For a fixed `tau_w`, `tau_i - iab(P_cb(tau_w, tau_i))` changes sign on
/// `[0, 1]` and is bracketed by bisection; the outer bisection then brackets
/// `tau_w - wifi(P_cw(tau_w, tau_i(tau_w)))`.
pub fn solve_fixed_point_bisection(setup: &ContentionSetup, tol: f64) -> Result<FixedPoint> {
    setup.validate()?;
    if !(tol > 0.0) {
        return Err(Error::Domain("tolerance must be positive".into()));
    }
    let inner = |tw: f64| -> f64 {
        if setup.n_iab == 0 {
            return 0.0;
        }
        bisect(|ti| {
            let (_, p_cb) = setup.collision_probs(tw, ti);
            ti - iab_tau(p_cb, setup.lbt_cw)
        })
    };
    let tw = if setup.n_wifi == 0 {
        0.0
    } else {
        bisect(|tw| {
            let ti = inner(tw);
            let (p_cw, _) = setup.collision_probs(tw, ti);
            tw - wifi_tau(p_cw, setup.dcf_cw, setup.dcf_stages)
        })
    };
    let ti = inner(tw);
    let fp = finish(setup, tw, ti, 0);
    if fp.residual > tol.max(1e-12) {
        return Err(Error::NoConvergence {
            iterations: 0,
            residual: fp.residual,
        });
    }
    Ok(fp)
}

fn bisect(f: impl Fn(f64) -> f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut f_lo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = f(mid);
        if (f_mid < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
