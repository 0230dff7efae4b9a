//! In-band access/backhaul resource allocation: static TDD frames, the
//! probabilistic session split and the CCA-gated weighted scheduler.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::mac::Medium;
use crate::topology::LinkKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Subframe {
    A,
    B,
    S,
}

impl Subframe {
    fn from_char(c: char) -> Option<Subframe> {
        match c {
            'A' => Some(Subframe::A),
            'B' => Some(Subframe::B),
            'S' => Some(Subframe::S),
            _ => None,
        }
    }

    fn as_char(self) -> char {
        match self {
            Subframe::A => 'A',
            Subframe::B => 'B',
            Subframe::S => 'S',
        }
    }
}

/// LTE TDD uplink/downlink configurations with D as backhaul and U as access.
pub const TDD_PATTERNS: [&str; 7] = [
    "BSAAABSAAA",
    "BSAABBSAAB",
    "BSABBBSABB",
    "BSAAABBBBB",
    "BSAABBBBBB",
    "BSABBBBBBB",
    "BSAAABSAAB",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TddFrame {
    pub config_index: u8,
    pub subframes: [Subframe; 10],
}

impl TddFrame {
    pub fn config(index: u8) -> Result<TddFrame> {
        let pattern = TDD_PATTERNS.get(index as usize).ok_or_else(|| {
            Error::InvalidConfig(format!("TDD configuration {index} not in 0..=6"))
        })?;
        Self::from_pattern(index, pattern)
    }

    /// A custom 10-entry pattern over `A`, `B`, `S`.
    pub fn from_pattern(config_index: u8, pattern: &str) -> Result<TddFrame> {
        let entries: Vec<Subframe> = pattern
            .trim()
            .chars()
            .map(|c| {
                Subframe::from_char(c).ok_or_else(|| {
                    Error::InvalidConfig(format!("bad subframe '{c}' in pattern {pattern:?}"))
                })
            })
            .collect::<Result<_>>()?;
        let subframes: [Subframe; 10] = entries.try_into().map_err(|_| {
            Error::InvalidConfig(format!("pattern {pattern:?} must have 10 subframes"))
        })?;
        if !subframes.contains(&Subframe::S) {
            return Err(Error::InvalidConfig(format!(
                "pattern {pattern:?} has no S subframe"
            )));
        }
        Ok(TddFrame {
            config_index,
            subframes,
        })
    }
}

impl fmt::Display for TddFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.subframes
            .iter()
            .try_for_each(|s| write!(f, "{}", s.as_char()))
    }
}

/// Static TDD decision for one subframe. `S` goes to the longer queue with
/// ties to backhaul; an empty chosen queue wastes the subframe.
pub fn baseline_decide(
    frame: &TddFrame,
    subframe_idx: usize,
    queues: (usize, usize),
) -> Result<Option<LinkKind>> {
    let entry = frame
        .subframes
        .get(subframe_idx)
        .ok_or_else(|| Error::Domain(format!("subframe index {subframe_idx} out of range")))?;
    let (access_len, backhaul_len) = queues;
    let link = match entry {
        Subframe::A => LinkKind::Access,
        Subframe::B => LinkKind::Backhaul,
        Subframe::S if access_len > backhaul_len => LinkKind::Access,
        Subframe::S => LinkKind::Backhaul,
    };
    let len = match link {
        LinkKind::Access => access_len,
        LinkKind::Backhaul => backhaul_len,
    };
    Ok((len > 0).then_some(link))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    BackhaulPool,
    AccessPool,
    Dropped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pools {
    pub capacity: usize,
    pub backhaul: usize,
    pub access: usize,
}

impl Pools {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            backhaul: 0,
            access: 0,
        }
    }
}

/// Sends a session to the backhaul pool with probability `delta`, otherwise
/// to the access pool; a full pool drops it.
pub fn probabilistic_route<R: Rng + ?Sized>(delta: f64, pools: &Pools, rng: &mut R) -> Route {
    if rng.random::<f64>() < delta {
        if pools.backhaul < pools.capacity {
            Route::BackhaulPool
        } else {
            Route::Dropped
        }
    } else if pools.access < pools.capacity {
        Route::AccessPool
    } else {
        Route::Dropped
    }
}

/// Latest reported SINR (linear) per link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulerWeights {
    pub mu_access: f64,
    pub mu_backhaul: f64,
}

impl SchedulerWeights {
    pub fn new(mu_access: f64, mu_backhaul: f64) -> Result<Self> {
        if !(mu_access > 0.0 && mu_backhaul > 0.0) {
            return Err(Error::Domain("reported SINR must be positive".into()));
        }
        Ok(Self {
            mu_access,
            mu_backhaul,
        })
    }

    pub fn access_weight(&self) -> f64 {
        1.0 / self.mu_access
    }

    pub fn backhaul_weight(&self) -> f64 {
        1.0 / self.mu_backhaul
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Grant {
    Access(f64),
    Backhaul(f64),
}

impl Grant {
    pub fn link(&self) -> LinkKind {
        match self {
            Grant::Access(_) => LinkKind::Access,
            Grant::Backhaul(_) => LinkKind::Backhaul,
        }
    }

    pub fn duration(&self) -> f64 {
        match *self {
            Grant::Access(d) | Grant::Backhaul(d) => d,
        }
    }
}

/// Nothing on a busy medium; otherwise the non-empty link with the larger
/// weight gets the whole occupancy. Ties go to backhaul.
pub fn proposed_decide(
    cca: Medium,
    weights: &SchedulerWeights,
    queues: (usize, usize),
    cot: f64,
) -> Option<Grant> {
    if cca == Medium::Busy {
        return None;
    }
    let (access_len, backhaul_len) = queues;
    match (access_len > 0, backhaul_len > 0) {
        (false, false) => None,
        (true, false) => Some(Grant::Access(cot)),
        (false, true) => Some(Grant::Backhaul(cot)),
        (true, true) if weights.access_weight() > weights.backhaul_weight() => {
            Some(Grant::Access(cot))
        }
        (true, true) => Some(Grant::Backhaul(cot)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrategyKind {
    Baseline,
    Probabilistic,
    Proposed,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 3] = [
        StrategyKind::Baseline,
        StrategyKind::Probabilistic,
        StrategyKind::Proposed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Baseline => "baseline",
            StrategyKind::Probabilistic => "probabilistic",
            StrategyKind::Proposed => "proposed",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "baseline" => Ok(StrategyKind::Baseline),
            "probabilistic" => Ok(StrategyKind::Probabilistic),
            "proposed" => Ok(StrategyKind::Proposed),
            other => Err(Error::InvalidConfig(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub tdd: TddFrame,
    /// Backhaul share `δ`.
    pub delta: f64,
    pub cot: f64,
    pub pool_capacity: usize,
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind) -> Self {
        Self {
            kind,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::InvalidConfig(format!(
                "delta {} outside [0, 1]",
                self.delta
            )));
        }
        if !(self.cot > 0.0 && self.cot.is_finite()) {
            return Err(Error::InvalidConfig("cot must be positive".into()));
        }
        if self.pool_capacity == 0 {
            return Err(Error::InvalidConfig("pool_capacity must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            kind: StrategyKind::Proposed,
            tdd: TddFrame::config(0).expect("built-in pattern"),
            delta: 0.5,
            cot: 9e-3,
            pool_capacity: 10,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn patterns_round_trip() {
        for i in 0..7u8 {
            let f = TddFrame::config(i).unwrap();
            assert_eq!(f.to_string(), TDD_PATTERNS[i as usize]);
        }
        assert!(TddFrame::config(7).is_err());
        assert!(TddFrame::from_pattern(0, "AAAAABBBBB").is_err());
        assert!(TddFrame::from_pattern(0, "BSAAAB").is_err());
        assert!(TddFrame::from_pattern(0, "BSAAABSAAX").is_err());
    }

    #[test]
    fn baseline_examples() {
        let f = TddFrame::config(0).unwrap();
        assert_eq!(
            baseline_decide(&f, 2, (3, 0)).unwrap(),
            Some(LinkKind::Access)
        );
        assert_eq!(
            baseline_decide(&f, 1, (0, 5)).unwrap(),
            Some(LinkKind::Backhaul)
        );
        assert_eq!(
            baseline_decide(&f, 1, (4, 4)).unwrap(),
            Some(LinkKind::Backhaul)
        );
        assert_eq!(
            baseline_decide(&f, 1, (5, 4)).unwrap(),
            Some(LinkKind::Access)
        );
        assert_eq!(baseline_decide(&f, 0, (9, 0)).unwrap(), None);
        assert!(baseline_decide(&f, 10, (1, 1)).is_err());
    }

    #[test]
    fn route_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let open = Pools::new(10);
        for _ in 0..1000 {
            assert_eq!(
                probabilistic_route(1.0, &open, &mut rng),
                Route::BackhaulPool
            );
        }
        let full = Pools {
            capacity: 10,
            backhaul: 10,
            access: 0,
        };
        assert_eq!(probabilistic_route(1.0, &full, &mut rng), Route::Dropped);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| probabilistic_route(0.3, &open, &mut rng) == Route::BackhaulPool)
            .count();
        assert!((hits as f64 / n as f64 - 0.3).abs() < 0.01);
    }

    #[test]
    fn proposed_examples() {
        let w = SchedulerWeights::new(4.0, 4.0).unwrap();
        assert_eq!(proposed_decide(Medium::Busy, &w, (3, 3), 9e-3), None);
        assert_eq!(
            proposed_decide(Medium::Idle, &w, (3, 3), 9e-3),
            Some(Grant::Backhaul(9e-3))
        );
        let w = SchedulerWeights::new(2.0, 8.0).unwrap();
        assert_eq!(
            proposed_decide(Medium::Idle, &w, (3, 3), 9e-3),
            Some(Grant::Access(9e-3))
        );
        assert_eq!(
            proposed_decide(Medium::Idle, &w, (0, 3), 9e-3),
            Some(Grant::Backhaul(9e-3))
        );
        assert_eq!(proposed_decide(Medium::Idle, &w, (0, 0), 9e-3), None);
        assert!(SchedulerWeights::new(0.0, 1.0).is_err());
    }

    #[test]
    fn strategy_config_validation() {
        assert!(StrategyConfig::default().validate().is_ok());
        let bad = StrategyConfig {
            delta: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(
            "proposed".parse::<StrategyKind>().unwrap(),
            StrategyKind::Proposed
        );
        assert!("fair".parse::<StrategyKind>().is_err());
    }

    proptest! {
        #[test]
        fn proposed_scale_invariant(
            ma in 1e-3f64..1e3, mb in 1e-3f64..1e3, k in 1e-3f64..1e3,
            qa in 0usize..4, qb in 0usize..4, busy: bool,
        ) {
            let cca = if busy { Medium::Busy } else { Medium::Idle };
            let a = proposed_decide(cca, &SchedulerWeights::new(ma, mb).unwrap(), (qa, qb), 9e-3);
            let b = proposed_decide(cca, &SchedulerWeights::new(ma * k, mb * k).unwrap(), (qa, qb), 9e-3);
            if (ma - mb).abs() > 1e-9 * ma.max(mb) {
                prop_assert_eq!(a.map(|g| g.link()), b.map(|g| g.link()));
            }
            if busy {
                prop_assert!(a.is_none());
            }
            if let Some(g) = a {
                prop_assert!(g.duration() <= 9e-3);
            }
        }

        #[test]
        fn route_never_into_full_pool(delta in 0.0f64..=1.0, b in 0usize..12, a in 0usize..12, seed: u64) {
            let pools = Pools { capacity: 10, backhaul: b.min(10), access: a.min(10) };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            match probabilistic_route(delta, &pools, &mut rng) {
                Route::BackhaulPool => prop_assert!(pools.backhaul < pools.capacity),
                Route::AccessPool => prop_assert!(pools.access < pools.capacity),
                Route::Dropped => {}
            }
        }

        #[test]
        fn baseline_depends_on_emptiness_only(idx in 0usize..10, a in 1usize..50, b in 1usize..50, cfg in 0u8..7) {
            let f = TddFrame::config(cfg).unwrap();
            let d = baseline_decide(&f, idx, (a, b)).unwrap();
            match f.subframes[idx] {
                Subframe::A => prop_assert_eq!(d, Some(LinkKind::Access)),
                Subframe::B => prop_assert_eq!(d, Some(LinkKind::Backhaul)),
                Subframe::S => prop_assert!(d.is_some()),
            }
        }
    }
}
