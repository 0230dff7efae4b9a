//! Slot-level medium access: energy-detect CCA through the sensor's beam,
//! CSMA/CA with binary exponential backoff for WiGig APs, single-stage LBT
//! for IAB nodes, and per-receiver outcome resolution that tags failures
//! caused by incorrect (directional) LBT.

use rand::Rng;

use crate::channel::{db_to_linear, linear_to_db};
use crate::error::{Error, Result};
use crate::radio::Radio;
use crate::topology::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Idle,
    Sensing,
    Backoff,
    Transmitting,
    CotHold,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Idle => "idle",
            Phase::Sensing => "sensing",
            Phase::Backoff => "backoff",
            Phase::Transmitting => "transmitting",
            Phase::CotHold => "cot_hold",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Medium {
    Idle,
    Busy,
}

impl Medium {
    pub fn as_str(self) -> &'static str {
        match self {
            Medium::Idle => "idle",
            Medium::Busy => "busy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacState {
    pub phase: Phase,
    pub backoff_counter: u32,
    /// Backoff stage; DCF only.
    pub stage: u32,
    /// Remaining channel occupancy (seconds).
    pub cot_remaining: f64,
    /// Idle slots still required before the countdown resumes.
    pub defer_remaining: u32,
}

impl Default for MacState {
    fn default() -> Self {
        Self {
            phase: Phase::Idle,
            backoff_counter: 0,
            stage: 0,
            cot_remaining: 0.0,
            defer_remaining: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransmitStart {
    /// Occupancy granted to this access; unbounded for DCF.
    pub cot: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CcaConfig {
    pub threshold_dbm: f64,
    pub slot_duration: f64,
    pub defer_duration: f64,
    pub cot_max: f64,
    pub decode_threshold_db: f64,
}

impl Default for CcaConfig {
    fn default() -> Self {
        Self {
            threshold_dbm: -63.0,
            slot_duration: 5e-6,
            defer_duration: 15e-6,
            cot_max: 9e-3,
            decode_threshold_db: 0.0,
        }
    }
}

impl CcaConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.threshold_dbm.is_finite() || !self.decode_threshold_db.is_finite() {
            return Err(Error::InvalidConfig(
                "CCA and decode thresholds must be finite".into(),
            ));
        }
        if !(self.slot_duration > 0.0 && self.defer_duration >= 0.0 && self.cot_max > 0.0) {
            return Err(Error::InvalidConfig(
                "slot, defer and COT durations must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn defer_slots(&self) -> u32 {
        (self.defer_duration / self.slot_duration).round() as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DcfConfig {
    /// Initial window `C`.
    pub cw_min: u32,
    /// Number of doublings `m`.
    pub max_stage: u32,
}

impl Default for DcfConfig {
    fn default() -> Self {
        Self {
            cw_min: 16,
            max_stage: 6,
        }
    }
}

impl DcfConfig {
    pub fn window(&self, stage: u32) -> u32 {
        self.cw_min << stage.min(self.max_stage)
    }
}

/// What an LBT contender does with its counter during a busy slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BusyRule {
    /// Draw a fresh counter from the window.
    #[default]
    Redraw,
    /// Keep the counter until the medium clears.
    Freeze,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LbtConfig {
    /// Window size `Z`; counters are drawn from `[0, Z-1]`.
    pub cw: u32,
    pub busy_rule: BusyRule,
}

impl Default for LbtConfig {
    fn default() -> Self {
        Self {
            cw: 16,
            busy_rule: BusyRule::Redraw,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensedTransmission {
    pub tx: NodeId,
    pub rx: NodeId,
    /// Power at the sensor after both beams are applied.
    pub power_dbm: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MediumView {
    pub sensor: Option<NodeId>,
    pub transmissions: Vec<SensedTransmission>,
}

/// Energy detection: busy once the summed sensed power reaches the threshold.
pub fn cca(view: &MediumView, cfg: &CcaConfig) -> Medium {
    let total: f64 = view
        .transmissions
        .iter()
        .map(|t| db_to_linear(t.power_dbm))
        .sum();
    medium_from_power(total, cfg)
}

#[inline]
pub fn medium_from_power(total_mw: f64, cfg: &CcaConfig) -> Medium {
    if total_mw > 0.0 && linear_to_db(total_mw) >= cfg.threshold_dbm {
        Medium::Busy
    } else {
        Medium::Idle
    }
}

/// One slot of DCF. A node leaving `Idle` draws its counter and handles the
/// current slot immediately.
pub fn dcf_step<R: Rng + ?Sized>(
    state: MacState,
    medium: Medium,
    cfg: &DcfConfig,
    defer_slots: u32,
    rng: &mut R,
) -> (MacState, Option<TransmitStart>) {
    let mut s = state;
    if s.phase == Phase::Idle {
        s.backoff_counter = rng.random_range(0..cfg.window(s.stage));
        s.phase = Phase::Backoff;
    }
    match (s.phase, medium) {
        (Phase::Backoff, Medium::Idle) => {
            if s.backoff_counter == 0 {
                s.phase = Phase::Transmitting;
                s.cot_remaining = 0.0;
                return (s, Some(TransmitStart { cot: f64::INFINITY }));
            }
            s.backoff_counter -= 1;
        }
        (Phase::Backoff, Medium::Busy) => {
            if defer_slots > 0 {
                s.phase = Phase::Sensing;
                s.defer_remaining = defer_slots;
            }
        }
        (Phase::Sensing, Medium::Busy) => s.defer_remaining = defer_slots,
        (Phase::Sensing, Medium::Idle) => {
            s.defer_remaining = s.defer_remaining.saturating_sub(1);
            if s.defer_remaining == 0 {
                s.phase = Phase::Backoff;
            }
        }
        _ => {}
    }
    (s, None)
}

/// Outcome feedback for DCF: success resets the stage, failure doubles the
/// window up to the last stage. Either way a fresh counter is drawn.
pub fn dcf_on_outcome<R: Rng + ?Sized>(
    state: MacState,
    success: bool,
    cfg: &DcfConfig,
    rng: &mut R,
) -> MacState {
    let mut s = state;
    s.stage = if success {
        0
    } else {
        (s.stage + 1).min(cfg.max_stage)
    };
    s.backoff_counter = rng.random_range(0..cfg.window(s.stage));
    s.phase = Phase::Backoff;
    s.cot_remaining = 0.0;
    s
}

/// One slot of IAB LBT with a single-stage window. Busy slots freeze the
/// countdown or redraw the counter depending on [`BusyRule`].
pub fn lbt_step<R: Rng + ?Sized>(
    state: MacState,
    medium: Medium,
    cfg: &LbtConfig,
    defer_slots: u32,
    cot_max: f64,
    rng: &mut R,
) -> (MacState, Option<TransmitStart>) {
    let mut s = state;
    if s.phase == Phase::Idle || s.phase == Phase::CotHold {
        s.backoff_counter = rng.random_range(0..cfg.cw);
        s.phase = Phase::Backoff;
    }
    match (s.phase, medium) {
        (Phase::Backoff, Medium::Idle) => {
            if s.backoff_counter == 0 {
                s.phase = Phase::Transmitting;
                s.cot_remaining = cot_max;
                return (s, Some(TransmitStart { cot: cot_max }));
            }
            s.backoff_counter -= 1;
        }
        (Phase::Backoff, Medium::Busy) => {
            if cfg.busy_rule == BusyRule::Redraw {
                s.backoff_counter = rng.random_range(0..cfg.cw);
            }
            if defer_slots > 0 {
                s.phase = Phase::Sensing;
                s.defer_remaining = defer_slots;
            }
        }
        (Phase::Sensing, Medium::Busy) => {
            if cfg.busy_rule == BusyRule::Redraw {
                s.backoff_counter = rng.random_range(0..cfg.cw);
            }
            s.defer_remaining = defer_slots;
        }
        (Phase::Sensing, Medium::Idle) => {
            s.defer_remaining = s.defer_remaining.saturating_sub(1);
            if s.defer_remaining == 0 {
                s.phase = Phase::Backoff;
            }
        }
        _ => {}
    }
    (s, None)
}

/// End of an LBT occupancy: back to contention with a fresh counter.
pub fn lbt_on_complete<R: Rng + ?Sized>(state: MacState, cfg: &LbtConfig, rng: &mut R) -> MacState {
    MacState {
        phase: Phase::Backoff,
        backoff_counter: rng.random_range(0..cfg.cw),
        cot_remaining: 0.0,
        defer_remaining: 0,
        ..state
    }
}

/// A transmission on the air in the current slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transmission {
    pub tx: NodeId,
    pub rx: NodeId,
    pub tx_boresight: f64,
    pub rx_boresight: f64,
    /// Slot in which the transmitter last won access after sensing.
    pub access_slot: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Success,
    Collision,
    Interfered,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::Collision => "collision",
            Outcome::Interfered => "interfered",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotOutcome {
    pub tx: NodeId,
    pub rx: NodeId,
    pub sinr: f64,
    pub outcome: Outcome,
    /// Strongest co-slot interferer at the receiver.
    pub interferer: Option<NodeId>,
    /// Receiver that interferer was serving.
    pub interferer_rx: Option<NodeId>,
}

/// Resolves every reception of the slot from scratch.
///
/// A reception fails when its SINR is below the decode threshold or its
/// receiver is itself transmitting. A failure is `Interfered` when the
/// strongest interferer reaches the CCA threshold at the receiver and won
/// access in a different slot from the victim, i.e. one of them sensed an
/// idle medium through its beam while the other was already audible at this
/// receiver. Simultaneous access and sub-threshold aggregate interference
/// are `Collision`.
pub fn resolve_slot(
    transmissions: &[Transmission],
    radio: &Radio,
    cfg: &CcaConfig,
) -> Vec<SlotOutcome> {
    let decode = db_to_linear(cfg.decode_threshold_db);
    let cca_mw = db_to_linear(cfg.threshold_dbm);
    transmissions
        .iter()
        .map(|v| {
            let signal = radio.rx_power_mw(v.tx, v.tx_boresight, v.rx, v.rx_boresight);
            let mut interference = 0.0;
            let mut strongest: Option<(f64, &Transmission)> = None;
            for o in transmissions.iter().filter(|o| o.tx != v.tx) {
                let p = radio.rx_power_mw(o.tx, o.tx_boresight, v.rx, v.rx_boresight);
                interference += p;
                if strongest.is_none_or(|(sp, _)| p > sp) {
                    strongest = Some((p, o));
                }
            }
            let sinr = signal / (radio.noise_mw() + interference);
            let rx_busy = transmissions.iter().any(|o| o.tx == v.rx);
            classify(v, sinr, rx_busy, strongest, decode, cca_mw)
        })
        .collect()
}

fn classify(
    v: &Transmission,
    sinr: f64,
    rx_busy: bool,
    strongest: Option<(f64, &Transmission)>,
    decode: f64,
    cca_mw: f64,
) -> SlotOutcome {
    let interferer = strongest.map(|(_, o)| o.tx);
    let interferer_rx = strongest.map(|(_, o)| o.rx);
    let outcome = if rx_busy {
        Outcome::Collision
    } else if sinr >= decode {
        Outcome::Success
    } else {
        match strongest {
            Some((p, o)) if p >= cca_mw && o.access_slot != v.access_slot => Outcome::Interfered,
            _ => Outcome::Collision,
        }
    };
    SlotOutcome {
        tx: v.tx,
        rx: v.rx,
        sinr,
        outcome,
        interferer,
        interferer_rx,
    }
}

/// Incremental form of [`resolve_slot`] for the engine.
///
/// Pairwise interference terms between active transmissions and the power
/// each infrastructure node senses on its current sensing beam are updated
/// when a transmission joins or leaves, so a slot costs lookups only.
#[derive(Debug, Clone)]
pub struct Air {
    n: usize,
    index: Vec<Option<usize>>,
    active: Vec<usize>,
    slot_of: Vec<Option<Transmission>>,
    signal: Vec<f64>,
    /// `cross[i * n + k]`: power from transmission `k` at the receiver of `i`.
    cross: Vec<f64>,
    /// Receivers that are themselves infrastructure, by dense index.
    rx_index: Vec<Option<usize>>,
    sense_bore: Vec<f64>,
    sensed: Vec<f64>,
    /// `sense_contrib[s * n + k]`: power from transmission `k` at sensor `s`.
    sense_contrib: Vec<f64>,
    version: u64,
}

impl Air {
    pub fn new(radio: &Radio) -> Self {
        let n = radio.infra_len();
        Self {
            n,
            index: (0..radio.topology().nodes.len())
                .map(|i| radio.infra_index(NodeId(i as u32)))
                .collect(),
            active: Vec::new(),
            slot_of: vec![None; n],
            signal: vec![0.0; n],
            cross: vec![0.0; n * n],
            rx_index: vec![None; n],
            sense_bore: vec![0.0; n],
            sensed: vec![0.0; n],
            sense_contrib: vec![0.0; n * n],
            version: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    /// Bumped on every insert or removal.
    pub fn version(&self) -> u64 {
        self.version
    }

    fn dense(&self, node: NodeId) -> usize {
        self.index[node.index()].expect("transmitters are infrastructure")
    }

    pub fn is_transmitting(&self, node: NodeId) -> bool {
        self.index[node.index()].is_some_and(|i| self.slot_of[i].is_some())
    }

    pub fn transmissions(&self) -> impl Iterator<Item = &Transmission> {
        self.active
            .iter()
            .map(|&i| self.slot_of[i].as_ref().unwrap())
    }

    pub fn get(&self, tx: NodeId) -> Option<&Transmission> {
        self.index[tx.index()].and_then(|i| self.slot_of[i].as_ref())
    }

    pub fn insert(&mut self, t: Transmission, radio: &Radio) {
        let k = self.dense(t.tx);
        assert!(self.slot_of[k].is_none(), "node {} already on air", t.tx);
        let n = self.n;
        for &i in &self.active {
            let o = self.slot_of[i].as_ref().unwrap();
            self.cross[i * n + k] = radio.rx_power_mw(t.tx, t.tx_boresight, o.rx, o.rx_boresight);
            self.cross[k * n + i] = radio.rx_power_mw(o.tx, o.tx_boresight, t.rx, t.rx_boresight);
        }
        for s in 0..n {
            if s == k {
                continue;
            }
            let sensor = radio.infra_node(s);
            let p = radio.rx_power_mw(t.tx, t.tx_boresight, sensor, self.sense_bore[s]);
            self.sense_contrib[s * n + k] = p;
            self.sensed[s] += p;
        }
        self.signal[k] = radio.rx_power_mw(t.tx, t.tx_boresight, t.rx, t.rx_boresight);
        self.rx_index[k] = self.index[t.rx.index()];
        self.slot_of[k] = Some(t);
        self.active.push(k);
        self.version += 1;
    }

    pub fn remove(&mut self, tx: NodeId) -> Option<Transmission> {
        let k = self.dense(tx);
        let gone = self.slot_of[k].take()?;
        self.active.retain(|&i| i != k);
        let n = self.n;
        if self.active.is_empty() {
            self.sensed.iter_mut().for_each(|p| *p = 0.0);
        } else {
            for s in 0..n {
                if s != k {
                    self.sensed[s] = (self.sensed[s] - self.sense_contrib[s * n + k]).max(0.0);
                }
            }
        }
        self.version += 1;
        Some(gone)
    }

    /// Points `sensor`'s sensing beam and recomputes what it hears.
    pub fn set_sense_boresight(&mut self, sensor: NodeId, boresight: f64, radio: &Radio) {
        let s = self.dense(sensor);
        if self.sense_bore[s] == boresight {
            return;
        }
        self.sense_bore[s] = boresight;
        let n = self.n;
        let mut total = 0.0;
        for &k in &self.active {
            if k == s {
                continue;
            }
            let t = self.slot_of[k].as_ref().unwrap();
            let p = radio.rx_power_mw(t.tx, t.tx_boresight, sensor, boresight);
            self.sense_contrib[s * n + k] = p;
            total += p;
        }
        self.sensed[s] = total;
    }

    /// Power the sensor collects on its current sensing beam.
    pub fn sensed_mw(&self, sensor: NodeId) -> f64 {
        self.sensed[self.dense(sensor)]
    }

    /// Outcomes of every active reception, in insertion order.
    pub fn resolve(&self, radio: &Radio, cfg: &CcaConfig, out: &mut Vec<SlotOutcome>) {
        out.clear();
        let decode = db_to_linear(cfg.decode_threshold_db);
        let cca_mw = db_to_linear(cfg.threshold_dbm);
        let n = self.n;
        for &i in &self.active {
            let t = self.slot_of[i].as_ref().unwrap();
            let row = &self.cross[i * n..(i + 1) * n];
            let mut interference = 0.0;
            let mut strongest: Option<(f64, usize)> = None;
            for &k in &self.active {
                if k == i {
                    continue;
                }
                let p = row[k];
                interference += p;
                if strongest.is_none_or(|(sp, _)| p > sp) {
                    strongest = Some((p, k));
                }
            }
            let sinr = self.signal[i] / (radio.noise_mw() + interference);
            let rx_busy = self.rx_index[i].is_some_and(|r| self.slot_of[r].is_some());
            let strongest = strongest.map(|(p, k)| (p, self.slot_of[k].as_ref().unwrap()));
            out.push(classify(t, sinr, rx_busy, strongest, decode, cca_mw));
        }
    }

    /// Total power a sensor collects with its beam on `boresight`, computed
    /// from scratch.
    pub fn sensed_power_mw(&self, sensor: NodeId, boresight: f64, radio: &Radio) -> f64 {
        self.transmissions()
            .filter(|t| t.tx != sensor)
            .map(|t| radio.rx_power_mw(t.tx, t.tx_boresight, sensor, boresight))
            .sum()
    }

    pub fn view(&self, sensor: NodeId, boresight: f64, radio: &Radio) -> MediumView {
        MediumView {
            sensor: Some(sensor),
            transmissions: self
                .transmissions()
                .filter(|t| t.tx != sensor)
                .map(|t| SensedTransmission {
                    tx: t.tx,
                    rx: t.rx,
                    power_dbm: radio.rx_power_dbm(t.tx, t.tx_boresight, sensor, boresight),
                })
                .collect(),
        }
    }
}
