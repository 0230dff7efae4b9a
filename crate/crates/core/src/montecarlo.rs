//! Slot-level Monte Carlo counterparts of the analytic access model. Work is
//! split into a fixed number of chains, each on its own random stream, so the
//! estimate depends on the seed and chain count but not on the thread pool.

use crate::analytics::ContentionSetup;
use crate::mac::{
    dcf_on_outcome, dcf_step, lbt_on_complete, lbt_step, BusyRule, DcfConfig, LbtConfig, MacState,
    Medium, Phase,
};
use crate::rng::{stream, Purpose};

/// Independent chains per estimate.
pub const CHAINS: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Tally {
    pub slots: u64,
    pub wifi_attempts: u64,
    pub wifi_collisions: u64,
    pub iab_attempts: u64,
    pub iab_collisions: u64,
}

impl Tally {
    fn merge(mut self, o: Tally) -> Tally {
        self.slots += o.slots;
        self.wifi_attempts += o.wifi_attempts;
        self.wifi_collisions += o.wifi_collisions;
        self.iab_attempts += o.iab_attempts;
        self.iab_collisions += o.iab_collisions;
        self
    }

    pub fn p_cw(&self) -> f64 {
        ratio(self.wifi_collisions, self.wifi_attempts)
    }

    pub fn p_cb(&self) -> f64 {
        ratio(self.iab_collisions, self.iab_attempts)
    }

    /// Per-node attempt probability.
    pub fn tau_w(&self, n_wifi: u32) -> f64 {
        ratio(self.wifi_attempts, self.slots * n_wifi as u64)
    }

    pub fn tau_i(&self, n_iab: u32) -> f64 {
        ratio(self.iab_attempts, self.slots * n_iab as u64)
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn chains<F>(slots: u64, f: F) -> Tally
where
    F: Fn(u64, u64) -> Tally + Sync,
{
    let share = |c: u64| slots / CHAINS + u64::from(c < slots % CHAINS);
    #[cfg(feature = "parallel")]
    let parts: Vec<Tally> = {
        use rayon::prelude::*;
        (0..CHAINS)
            .into_par_iter()
            .map(|c| f(c, share(c)))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<Tally> = (0..CHAINS).map(|c| f(c, share(c))).collect();
    parts.into_iter().fold(Tally::default(), Tally::merge)
}

/// Attempt rate of one DCF node on an always-idle medium whose
/// transmissions all succeed.
pub fn dcf_attempt_rate(cfg: &DcfConfig, slots: u64, seed: u64) -> f64 {
    let t = chains(slots, |c, n| {
        let mut rng = stream(seed, c, Purpose::MonteCarlo);
        let mut s = MacState::default();
        let mut attempts = 0;
        for _ in 0..n {
            let (next, tx) = dcf_step(s, Medium::Idle, cfg, 0, &mut rng);
            s = next;
            if tx.is_some() {
                attempts += 1;
                s = dcf_on_outcome(s, true, cfg, &mut rng);
            }
        }
        Tally {
            slots: n,
            wifi_attempts: attempts,
            ..Default::default()
        }
    });
    t.tau_w(1)
}

/// Attempt rate of one LBT node on an always-idle medium.
pub fn lbt_attempt_rate(cfg: &LbtConfig, slots: u64, seed: u64) -> f64 {
    let t = chains(slots, |c, n| {
        let mut rng = stream(seed, c, Purpose::MonteCarlo);
        let mut s = MacState::default();
        let mut attempts = 0;
        for _ in 0..n {
            let (next, tx) = lbt_step(s, Medium::Idle, cfg, 0, 9e-3, &mut rng);
            s = next;
            if tx.is_some() {
                attempts += 1;
                s = lbt_on_complete(s, cfg, &mut rng);
            }
        }
        Tally {
            slots: n,
            iab_attempts: attempts,
            ..Default::default()
        }
    });
    t.tau_i(1)
}

/// Saturated contention in virtual slots. Nodes whose counter expires
/// transmit; a transmission collides when anyone else transmits in the same
/// slot. DCF counters advance every virtual slot, LBT counters see the slot
/// as busy whenever someone else transmits.
pub fn contention(setup: &ContentionSetup, busy_rule: BusyRule, slots: u64, seed: u64) -> Tally {
    let dcf = DcfConfig {
        cw_min: setup.dcf_cw,
        max_stage: setup.dcf_stages,
    };
    let lbt = LbtConfig {
        cw: setup.lbt_cw,
        busy_rule,
    };
    let nw = setup.n_wifi as usize;
    let ni = setup.n_iab as usize;
    chains(slots, |c, n| {
        let mut rng = stream(seed, c, Purpose::MonteCarlo);
        let mut wifi = vec![MacState::default(); nw];
        let mut iab = vec![MacState::default(); ni];
        for s in wifi.iter_mut() {
            *s = dcf_step(*s, Medium::Busy, &dcf, 0, &mut rng).0;
        }
        for s in iab.iter_mut() {
            *s = lbt_step(*s, Medium::Busy, &lbt, 0, 9e-3, &mut rng).0;
        }
        let mut t = Tally {
            slots: n,
            ..Default::default()
        };
        for _ in 0..n {
            let firing = wifi.iter().filter(|s| s.backoff_counter == 0).count()
                + iab.iter().filter(|s| s.backoff_counter == 0).count();
            let collided = firing > 1;
            for s in wifi.iter_mut() {
                let (next, tx) = dcf_step(*s, Medium::Idle, &dcf, 0, &mut rng);
                *s = next;
                if tx.is_some() {
                    t.wifi_attempts += 1;
                    t.wifi_collisions += u64::from(collided);
                    *s = dcf_on_outcome(*s, !collided, &dcf, &mut rng);
                }
            }
            for s in iab.iter_mut() {
                if s.backoff_counter == 0 {
                    s.phase = Phase::Backoff;
                    let (next, tx) = lbt_step(*s, Medium::Idle, &lbt, 0, 9e-3, &mut rng);
                    debug_assert!(tx.is_some());
                    t.iab_attempts += 1;
                    t.iab_collisions += u64::from(collided);
                    *s = lbt_on_complete(next, &lbt, &mut rng);
                } else {
                    let medium = if firing > 0 {
                        Medium::Busy
                    } else {
                        Medium::Idle
                    };
                    *s = lbt_step(*s, medium, &lbt, 0, 9e-3, &mut rng).0;
                }
            }
        }
        t
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::solve_fixed_point;

    #[test]
    fn single_dcf_matches_limit() {
        for c in [1u32, 4, 16, 64] {
            let r = dcf_attempt_rate(
                &DcfConfig {
                    cw_min: c,
                    max_stage: 6,
                },
                400_000,
                3,
            );
            let expect = 2.0 / (c as f64 + 1.0);
            assert!((r / expect - 1.0).abs() < 0.01, "C={c}: {r} vs {expect}");
        }
    }

    #[test]
    fn single_lbt_matches_limit() {
        for z in [1u32, 4, 16, 64] {
            let r = lbt_attempt_rate(
                &LbtConfig {
                    cw: z,
                    ..Default::default()
                },
                400_000,
                4,
            );
            let expect = 2.0 / (z as f64 + 1.0);
            assert!((r / expect - 1.0).abs() < 0.01, "Z={z}: {r} vs {expect}");
        }
    }

    #[test]
    fn contention_close_to_fixed_point() {
        for (nw, ni) in [(1u32, 1u32), (5, 5), (10, 10), (1, 10), (10, 1)] {
            let setup = ContentionSetup {
                n_wifi: nw,
                n_iab: ni,
                dcf_cw: 16,
                dcf_stages: 6,
                lbt_cw: 16,
            };
            let fp = solve_fixed_point(&setup, 1e-12).unwrap();
            let t = contention(&setup, BusyRule::Redraw, 400_000, 9);
            assert!(
                (t.p_cw() - fp.p_cw).abs() < 0.02,
                "({nw},{ni}) {} vs {}",
                t.p_cw(),
                fp.p_cw
            );
            assert!(
                (t.p_cb() - fp.p_cb).abs() < 0.02,
                "({nw},{ni}) {} vs {}",
                t.p_cb(),
                fp.p_cb
            );
            assert!((t.tau_i(ni) / fp.tau_i - 1.0).abs() < 0.05);
        }
    }
}
