//! Slot-driven engine. Each slot: controller actions fall due, arrivals are
//! generated, contenders sense and step their MAC, new bursts go on air,
//! receptions are resolved and packets advance, relay or retry.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};

use crate::channel::{linear_to_db, throughput, ChannelParams, ThroughputParams};
use crate::controller::{self, ChannelReport, ControllerState, Reconfiguration};
use crate::error::{Error, Result};
use crate::mac::{
    dcf_on_outcome, dcf_step, lbt_on_complete, lbt_step, medium_from_power, Air, CcaConfig,
    DcfConfig, LbtConfig, MacState, Medium, Outcome, Phase, SlotOutcome, Transmission,
};
use crate::radio::Radio;
use crate::rng::{stream, Purpose};
use crate::schedulers::{
    baseline_decide, probabilistic_route, proposed_decide, Pools, Route, SchedulerWeights,
    StrategyConfig, StrategyKind,
};
use crate::topology::{build, LinkContext, LinkKind, NodeId, NodeKind, Topology, TopologyConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub id: u64,
    pub size_bits: u32,
    pub arrival_time: f64,
    pub src: NodeId,
    pub dst: NodeId,
    pub attempts: u32,
    /// Bits still to send on the current hop.
    pub remaining_bits: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub duration: f64,
    pub seed: u64,
    /// Packet arrivals per second per source.
    pub lambda: f64,
    pub mean_packet_bits: f64,
    pub exponential_sizes: bool,
    pub strategy: StrategyConfig,
    pub channel: ChannelParams,
    pub throughput: ThroughputParams,
    pub cca: CcaConfig,
    pub dcf: DcfConfig,
    pub lbt: LbtConfig,
    pub topology: TopologyConfig,
    pub tx_power_dbm: f64,
    pub num_channels: u32,
    pub subframe_duration: f64,
    pub retry_limit: u32,
    /// `None` enables the controller for the proposed strategy only.
    pub controller: Option<bool>,
    pub controller_trigger: u32,
    pub controller_delay: f64,
    pub trace: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            duration: 1.0,
            seed: 1,
            lambda: 500.0,
            mean_packet_bits: 12_000.0,
            exponential_sizes: false,
            strategy: StrategyConfig::default(),
            channel: ChannelParams::default(),
            throughput: ThroughputParams::default(),
            cca: CcaConfig::default(),
            dcf: DcfConfig::default(),
            lbt: LbtConfig::default(),
            topology: TopologyConfig::default(),
            tx_power_dbm: 23.0,
            num_channels: 1,
            subframe_duration: 1e-3,
            retry_limit: 7,
            controller: None,
            controller_trigger: controller::DEFAULT_TRIGGER,
            controller_delay: 1e-3,
            trace: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(Error::InvalidConfig(format!("duration {} must be >= 0", self.duration)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda {} must be >= 0", self.lambda)));
        }
        if !(self.mean_packet_bits >= 1.0 && self.mean_packet_bits <= u32::MAX as f64) {
            return Err(Error::InvalidConfig("mean_packet_bits must be >= 1".into()));
        }
        if self.dcf.cw_min < 1 || self.lbt.cw < 1 {
            return Err(Error::InvalidConfig("contention windows must be >= 1".into()));
        }
        if self.retry_limit < 1 || self.num_channels < 1 {
            return Err(Error::InvalidConfig("retry_limit and num_channels must be >= 1".into()));
        }
        if !(self.subframe_duration >= self.cca.slot_duration) {
            return Err(Error::InvalidConfig("subframe must span at least one slot".into()));
        }
        if !(self.controller_delay >= 0.0) {
            return Err(Error::InvalidConfig("controller delay must be >= 0".into()));
        }
        self.strategy.validate()?;
        self.channel.validate()?;
        self.throughput.validate()?;
        self.cca.validate()?;
        self.topology.validate()
    }

    pub fn link_context(&self) -> LinkContext {
        LinkContext {
            channel: self.channel.clone(),
            tx_power_dbm: self.tx_power_dbm,
            noise_dbm: crate::channel::noise_dbm(
                self.throughput.bandwidth_hz,
                self.channel.noise_figure_db,
            ),
        }
    }

    pub fn controller_enabled(&self) -> bool {
        self.controller
            .unwrap_or(self.strategy.kind == StrategyKind::Proposed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UeStats {
    pub ue: NodeId,
    pub delivered_bits: f64,
    pub interfered: u64,
    pub last_interfered: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkAccount {
    pub src: NodeId,
    pub dst: NodeId,
    pub kind: LinkKind,
    pub delivered_bits: f64,
    /// Sum over transmitting slots of slot length times throughput at the
    /// realized SINR.
    pub capacity_bits: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub time: f64,
    pub node: NodeId,
    pub phase: Phase,
    pub cca: Option<Medium>,
    pub outcome: Option<Outcome>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsRecord {
    pub duration: f64,
    pub slots: u64,
    pub arrived: u64,
    /// Packets that reached their final destination.
    pub delivered: u64,
    pub dropped: u64,
    /// Packets still queued or in flight at the end.
    pub queued: u64,
    pub success: u64,
    pub collision: u64,
    pub interfered: u64,
    pub delivered_bits: f64,
    /// Slots with at least one transmission.
    pub busy_slots: u64,
    /// Sum over slots of the number of transmissions.
    pub tx_slots: u64,
    pub per_ue: Vec<UeStats>,
    pub links: Vec<LinkAccount>,
    pub reconfigurations: Vec<(f64, Reconfiguration)>,
    pub trace: Vec<TraceRow>,
}

impl MetricsRecord {
    pub fn attempts(&self) -> u64 {
        self.success + self.collision + self.interfered
    }

    pub fn cell_throughput(&self) -> f64 {
        if self.duration > 0.0 {
            self.delivered_bits / self.duration
        } else {
            0.0
        }
    }

    pub fn ue_throughputs(&self) -> Vec<f64> {
        self.per_ue
            .iter()
            .map(|u| {
                if self.duration > 0.0 {
                    u.delivered_bits / self.duration
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn ue_throughput(&self) -> f64 {
        let v = self.ue_throughputs();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }

    pub fn interfered_fraction(&self) -> f64 {
        fraction(self.interfered, self.attempts())
    }

    pub fn dropped_fraction(&self) -> f64 {
        fraction(self.dropped, self.arrived)
    }

    pub fn conserved(&self) -> bool {
        self.arrived == self.delivered + self.dropped + self.queued
    }
}

fn fraction(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Number of arrivals in one slot of a Poisson process with rate `lambda`.
pub fn poisson_arrivals<R: Rng + ?Sized>(lambda: f64, slot: f64, rng: &mut R) -> u32 {
    let mean = lambda * slot;
    if !(mean > 0.0) {
        return 0;
    }
    if mean > 30.0 {
        return Poisson::new(mean).expect("positive mean").sample(rng) as u32;
    }
    // inversion; cheap for the small per-slot means the engine uses
    let u: f64 = rng.random();
    let mut p = (-mean).exp();
    let mut cdf = p;
    let mut k = 0u32;
    while u > cdf && p > 0.0 {
        k += 1;
        p *= mean / k as f64;
        cdf += p;
    }
    k
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Access {
    Dcf,
    Lbt,
    Tdd,
}

#[derive(Debug, Clone, Copy)]
struct Burst {
    link: LinkKind,
    /// First slot the burst may not use.
    end_slot: u64,
    multi: bool,
    access_slot: u64,
}

struct Station {
    id: NodeId,
    kind: NodeKind,
    access_mode: Access,
    parent: Option<NodeId>,
    ues: Vec<NodeId>,
    mac: MacState,
    access: VecDeque<Packet>,
    backhaul: VecDeque<Packet>,
    burst: Option<Burst>,
    contend_link: Option<LinkKind>,
    mu: SchedulerWeights,
    mu_latest: SchedulerWeights,
    rng_mac: ChaCha8Rng,
    rng_arrivals: ChaCha8Rng,
    rng_route: ChaCha8Rng,
    rng_size: ChaCha8Rng,
    cca: Option<Medium>,
    outcome: Option<Outcome>,
}

impl Station {
    fn queue(&self, link: LinkKind) -> &VecDeque<Packet> {
        match link {
            LinkKind::Access => &self.access,
            LinkKind::Backhaul => &self.backhaul,
        }
    }

    fn queue_mut(&mut self, link: LinkKind) -> &mut VecDeque<Packet> {
        match link {
            LinkKind::Access => &mut self.access,
            LinkKind::Backhaul => &mut self.backhaul,
        }
    }
}

enum EndOfSlot {
    Keep,
    /// Next packet of the burst goes to a different receiver.
    Retarget,
    Done { success: bool },
}

struct Engine<'a> {
    cfg: &'a SimConfig,
    ctx: LinkContext,
    topo: Topology,
    radio: Radio,
    air: Air,
    stations: Vec<Station>,
    station_of: Vec<Option<usize>>,
    ue_slot: Vec<Option<usize>>,
    overrides: HashMap<(NodeId, NodeId), f64>,
    controller: Option<ControllerState>,
    /// On-air transmissions addressed to each node.
    receiving: Vec<u32>,
    pending: VecDeque<(u64, Reconfiguration)>,
    link_index: HashMap<(NodeId, NodeId), usize>,
    m: MetricsRecord,
    next_packet: u64,
    slot: f64,
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a SimConfig, topo: Topology) -> Self {
        let ctx = cfg.link_context();
        let radio = Radio::with_channels(Arc::new(topo.clone()), &ctx, cfg.num_channels);
        let air = Air::new(&radio);
        let n = topo.nodes.len();
        let mut station_of = vec![None; n];
        let mut ue_slot = vec![None; n];
        let mut per_ue = Vec::new();
        let mut stations = Vec::new();
        for node in &topo.nodes {
            match node.kind {
                NodeKind::Ue => {
                    ue_slot[node.id.index()] = Some(per_ue.len());
                    per_ue.push(UeStats {
                        ue: node.id,
                        delivered_bits: 0.0,
                        interfered: 0,
                        last_interfered: None,
                    });
                }
                kind => {
                    let access_mode = match (kind, cfg.strategy.kind) {
                        (NodeKind::WigigAp, _) => Access::Dcf,
                        (_, StrategyKind::Baseline) => Access::Tdd,
                        _ => Access::Lbt,
                    };
                    let e = node.id.0 as u64;
                    let snr = |dst: Option<NodeId>| {
                        dst.map(|d| radio.aligned_power_mw(node.id, d) / radio.noise_mw())
                            .unwrap_or(1.0)
                            .max(f64::MIN_POSITIVE)
                    };
                    let ues: Vec<NodeId> = topo
                        .nodes
                        .iter()
                        .filter(|u| u.kind == NodeKind::Ue && topo.serving(u.id) == Some(node.id))
                        .map(|u| u.id)
                        .collect();
                    let parent = topo.parent(node.id);
                    let mu = SchedulerWeights {
                        mu_access: snr(ues.first().copied()),
                        mu_backhaul: snr(parent),
                    };
                    station_of[node.id.index()] = Some(stations.len());
                    stations.push(Station {
                        id: node.id,
                        kind,
                        access_mode,
                        parent,
                        ues,
                        mac: MacState::default(),
                        access: VecDeque::new(),
                        backhaul: VecDeque::new(),
                        burst: None,
                        contend_link: None,
                        mu,
                        mu_latest: mu,
                        rng_mac: stream(cfg.seed, e, Purpose::Backoff),
                        rng_arrivals: stream(cfg.seed, e, Purpose::Arrivals),
                        rng_route: stream(cfg.seed, e, Purpose::Routing),
                        rng_size: stream(cfg.seed, e, Purpose::PacketSize),
                        cca: None,
                        outcome: None,
                    });
                }
            }
        }
        let controller = cfg
            .controller_enabled()
            .then(|| ControllerState::new(cfg.controller_trigger));
        Self {
            cfg,
            ctx,
            topo,
            radio,
            air,
            stations,
            station_of,
            ue_slot,
            overrides: HashMap::new(),
            controller,
            receiving: vec![0; n],
            pending: VecDeque::new(),
            link_index: HashMap::new(),
            m: MetricsRecord {
                duration: cfg.duration,
                per_ue,
                ..Default::default()
            },
            next_packet: 0,
            slot: cfg.cca.slot_duration,
        }
    }

    fn tx_boresight(&self, tx: NodeId, rx: NodeId) -> f64 {
        self.overrides
            .get(&(tx, rx))
            .copied()
            .unwrap_or_else(|| self.radio.bearing(tx, rx))
    }

    fn transmission(&self, tx: NodeId, rx: NodeId, access_slot: u64) -> Transmission {
        Transmission {
            tx,
            rx,
            tx_boresight: self.tx_boresight(tx, rx),
            rx_boresight: self.radio.bearing(rx, tx),
            access_slot,
        }
    }

    fn account(&mut self, src: NodeId, dst: NodeId, kind: LinkKind) -> &mut LinkAccount {
        let next = self.m.links.len();
        let i = *self.link_index.entry((src, dst)).or_insert(next);
        if i == next {
            self.m.links.push(LinkAccount {
                src,
                dst,
                kind,
                delivered_bits: 0.0,
                capacity_bits: 0.0,
            });
        }
        &mut self.m.links[i]
    }

    fn packet_size(&mut self, si: usize) -> u32 {
        let mean = self.cfg.mean_packet_bits;
        if self.cfg.exponential_sizes {
            let d = Exp::new(1.0 / mean).expect("positive mean");
            (d.sample(&mut self.stations[si].rng_size).ceil() as u32).max(1)
        } else {
            mean.round() as u32
        }
    }

    fn arrivals(&mut self, now: f64) {
        let probabilistic = self.cfg.strategy.kind == StrategyKind::Probabilistic;
        let delta = self.cfg.strategy.delta;
        let capacity = self.cfg.strategy.pool_capacity;
        for si in 0..self.stations.len() {
            let st = &mut self.stations[si];
            let relays = st.kind == NodeKind::IabNode && st.parent.is_some();
            if st.ues.is_empty() && !relays {
                continue;
            }
            let k = poisson_arrivals(self.cfg.lambda, self.slot, &mut st.rng_arrivals);
            for _ in 0..k {
                let st = &mut self.stations[si];
                let link = if !relays {
                    LinkKind::Access
                } else if probabilistic {
                    let pools = Pools {
                        capacity,
                        backhaul: st.backhaul.len(),
                        access: st.access.len(),
                    };
                    match probabilistic_route(delta, &pools, &mut st.rng_route) {
                        Route::BackhaulPool => LinkKind::Backhaul,
                        Route::AccessPool => LinkKind::Access,
                        Route::Dropped => {
                            self.m.arrived += 1;
                            self.m.dropped += 1;
                            continue;
                        }
                    }
                } else if st.rng_route.random::<f64>() < delta {
                    LinkKind::Backhaul
                } else {
                    LinkKind::Access
                };
                let dst = match link {
                    LinkKind::Backhaul => st.parent.expect("relaying node has a parent"),
                    LinkKind::Access => {
                        if st.ues.is_empty() {
                            continue;
                        }
                        let i = st.rng_route.random_range(0..st.ues.len());
                        st.ues[i]
                    }
                };
                let size = self.packet_size(si);
                let st = &mut self.stations[si];
                self.m.arrived += 1;
                let src = st.id;
                st.queue_mut(link).push_back(Packet {
                    id: self.next_packet,
                    size_bits: size,
                    arrival_time: now,
                    src,
                    dst,
                    attempts: 0,
                    remaining_bits: size as f64,
                });
                self.next_packet += 1;
            }
        }
    }

    /// Queue lengths with the backhaul queue hidden while the parent is on
    /// air: the parent schedules that link and cannot receive while it sends.
    fn ready_backlog(&self, si: usize) -> (usize, usize) {
        let st = &self.stations[si];
        let parent_busy = st.parent.is_some_and(|p| self.air.is_transmitting(p));
        let backhaul = if parent_busy { 0 } else { st.backhaul.len() };
        (st.access.len(), backhaul)
    }

    fn ready(&self, si: usize, link: LinkKind) -> bool {
        let (a, b) = self.ready_backlog(si);
        match link {
            LinkKind::Access => a > 0,
            LinkKind::Backhaul => b > 0,
        }
    }

    /// Link a contender will serve if it wins access now.
    fn contention_link(&mut self, si: usize) -> Option<LinkKind> {
        let kind = self.cfg.strategy.kind;
        let cot = self.cfg.strategy.cot.min(self.cfg.cca.cot_max);
        if self.stations[si].access_mode == Access::Dcf {
            return self.ready(si, LinkKind::Access).then_some(LinkKind::Access);
        }
        let ready = self.ready_backlog(si);
        let is_ready = |l: LinkKind| match l {
            LinkKind::Access => ready.0 > 0,
            LinkKind::Backhaul => ready.1 > 0,
        };
        let st = &mut self.stations[si];
        match kind {
            StrategyKind::Proposed => {
                proposed_decide(Medium::Idle, &st.mu, ready, cot).map(|g| g.link())
            }
            _ => {
                if let Some(l) = st.contend_link {
                    if is_ready(l) {
                        return Some(l);
                    }
                }
                let pick = if st.rng_route.random::<f64>() < self.cfg.strategy.delta {
                    LinkKind::Backhaul
                } else {
                    LinkKind::Access
                };
                let other = match pick {
                    LinkKind::Access => LinkKind::Backhaul,
                    LinkKind::Backhaul => LinkKind::Access,
                };
                let l = if is_ready(pick) {
                    Some(pick)
                } else if is_ready(other) {
                    Some(other)
                } else {
                    None
                };
                st.contend_link = l;
                l
            }
        }
    }

    fn air_insert(&mut self, t: Transmission) {
        self.receiving[t.rx.index()] += 1;
        self.air.insert(t, &self.radio);
    }

    fn air_remove(&mut self, tx: NodeId) {
        if let Some(t) = self.air.remove(tx) {
            self.receiving[t.rx.index()] -= 1;
        }
    }

    fn sense(&mut self, si: usize, link: LinkKind) -> Medium {
        let st = &self.stations[si];
        let dst = st.queue(link).front().expect("non-empty queue").dst;
        let b = self.tx_boresight(st.id, dst);
        self.air.set_sense_boresight(st.id, b, &self.radio);
        medium_from_power(self.air.sensed_mw(st.id), &self.cfg.cca)
    }

    fn apply(&mut self, r: Reconfiguration) {
        match r {
            Reconfiguration::ResteerBeam {
                node,
                target,
                boresight_deg,
            } => {
                self.overrides.insert((node, target), boresight_deg);
            }
            Reconfiguration::ReassignUe { ue, server } => {
                if let Some(old) = self.topo.serving(ue) {
                    if let Some(si) = self.station_of[old.index()] {
                        self.stations[si].ues.retain(|&u| u != ue);
                    }
                }
                self.topo.reassign(ue, server, &self.ctx);
                if let Some(si) = self.station_of[server.index()] {
                    let ues = &mut self.stations[si].ues;
                    if !ues.contains(&ue) {
                        ues.push(ue);
                        ues.sort();
                    }
                }
            }
        }
    }

    fn deliver(&mut self, mut p: Packet, via: LinkKind) {
        match via {
            LinkKind::Access => {
                self.m.delivered += 1;
                self.m.delivered_bits += p.size_bits as f64;
                if let Some(u) = self.ue_slot[p.dst.index()] {
                    self.m.per_ue[u].delivered_bits += p.size_bits as f64;
                }
            }
            LinkKind::Backhaul => {
                let hop = p.dst;
                let si = self.station_of[hop.index()].expect("backhaul ends at infrastructure");
                let next = self.stations[si].parent;
                match (self.stations[si].kind, next) {
                    (NodeKind::IabNode, Some(parent)) => {
                        if self.cfg.strategy.kind == StrategyKind::Probabilistic
                            && self.stations[si].backhaul.len() >= self.cfg.strategy.pool_capacity
                        {
                            self.m.dropped += 1;
                            return;
                        }
                        p.src = hop;
                        p.dst = parent;
                        p.attempts = 0;
                        p.remaining_bits = p.size_bits as f64;
                        self.stations[si].backhaul.push_back(p);
                    }
                    _ => {
                        self.m.delivered += 1;
                        self.m.delivered_bits += p.size_bits as f64;
                    }
                }
            }
        }
    }

    fn report(&mut self, o: &SlotOutcome, tx_kind: NodeKind, now: f64) {
        let Some(u) = self.ue_slot[o.rx.index()] else {
            return;
        };
        if o.outcome == Outcome::Interfered {
            self.m.per_ue[u].interfered += 1;
            self.m.per_ue[u].last_interfered = Some(now);
        }
        if !matches!(tx_kind, NodeKind::IabNode | NodeKind::Donor) {
            return;
        }
        if let Some(state) = self.controller.as_mut() {
            let interfered = o.outcome == Outcome::Interfered;
            controller::ingest(
                state,
                ChannelReport {
                    ue: o.rx,
                    serving: o.tx,
                    sinr_db: linear_to_db(o.sinr),
                    interferer: o.interferer.filter(|_| interfered),
                    interferer_target: o.interferer_rx.filter(|_| interfered),
                    timestamp: now,
                },
            );
        }
    }

    fn run(mut self) -> MetricsRecord {
        let cfg = self.cfg;
        let slot = self.slot;
        let n_slots = (cfg.duration / slot + 1e-9).floor() as u64;
        self.m.slots = n_slots;
        let sub_slots = ((cfg.subframe_duration / slot).round() as u64).max(1);
        let frame_slots = 10 * sub_slots;
        let delay_slots = (cfg.controller_delay / slot).round() as u64;
        let cot = cfg.strategy.cot.min(cfg.cca.cot_max);
        let cot_slots = ((cot / slot + 1e-9).floor() as u64).max(1);
        let max_slots = ((cfg.cca.cot_max / slot + 1e-9).floor() as u64).max(1);
        let defer = cfg.cca.defer_slots();
        let decode_ok = |o: &SlotOutcome| o.outcome == Outcome::Success;

        let mut outcomes: Vec<SlotOutcome> = Vec::new();
        let mut seen_version = u64::MAX;
        let mut starts: Vec<(usize, LinkKind, bool, u64)> = Vec::new();
        let mut ends: Vec<(usize, EndOfSlot)> = Vec::new();

        for t in 0..n_slots {
            let now = t as f64 * slot;
            while self.pending.front().is_some_and(|(due, _)| *due <= t) {
                let (_, r) = self.pending.pop_front().unwrap();
                self.apply(r);
            }
            if t % frame_slots == 0 {
                for st in &mut self.stations {
                    st.mu = st.mu_latest;
                }
                if t > 0 {
                    if let Some(state) = self.controller.as_mut() {
                        for a in controller::mitigate(state, &self.topo, &self.ctx, now) {
                            self.pending.push_back((t + delay_slots, a));
                        }
                    }
                }
            }
            self.arrivals(now);

            starts.clear();
            let boundary = t % sub_slots == 0;
            for si in 0..self.stations.len() {
                self.stations[si].cca = None;
                self.stations[si].outcome = None;
                if self.stations[si].burst.is_some() {
                    continue;
                }
                match self.stations[si].access_mode {
                    Access::Tdd => {
                        if !boundary {
                            continue;
                        }
                        let sf = ((t / sub_slots) % 10) as usize;
                        let decision = baseline_decide(&cfg.strategy.tdd, sf, self.ready_backlog(si))
                            .expect("subframe index in range");
                        match decision {
                            None => self.stations[si].mac.phase = Phase::Idle,
                            Some(link) => {
                                let medium = if self.receiving[self.stations[si].id.index()] > 0 {
                                    Medium::Busy
                                } else {
                                    self.sense(si, link)
                                };
                                self.stations[si].cca = Some(medium);
                                if medium == Medium::Idle {
                                    let end = (t - t % sub_slots + sub_slots).min(t + cot_slots);
                                    starts.push((si, link, true, end));
                                } else {
                                    self.stations[si].mac.phase = Phase::CotHold;
                                }
                            }
                        }
                    }
                    Access::Dcf | Access::Lbt => {
                        if self.stations[si].access.is_empty() && self.stations[si].backhaul.is_empty() {
                            continue;
                        }
                        let link = self.contention_link(si);
                        let medium = match link {
                            Some(l) if self.receiving[self.stations[si].id.index()] == 0 => {
                                self.sense(si, l)
                            }
                            _ => Medium::Busy,
                        };
                        let ready = self.ready_backlog(si);
                        let st = &mut self.stations[si];
                        st.cca = Some(medium);
                        let started = if st.access_mode == Access::Dcf {
                            let (s, tx) = dcf_step(st.mac, medium, &cfg.dcf, defer, &mut st.rng_mac);
                            st.mac = s;
                            tx.is_some()
                        } else {
                            let (s, tx) = lbt_step(
                                st.mac,
                                medium,
                                &cfg.lbt,
                                defer,
                                cfg.cca.cot_max,
                                &mut st.rng_mac,
                            );
                            st.mac = s;
                            tx.is_some()
                        };
                        if started {
                            let link = link.expect("idle medium implies a ready link");
                            let (link, multi, len) = if st.access_mode == Access::Dcf {
                                (link, false, max_slots)
                            } else if cfg.strategy.kind == StrategyKind::Proposed {
                                let g = proposed_decide(medium, &st.mu, ready, cot)
                                    .expect("idle medium and backlog grant");
                                (g.link(), true, cot_slots)
                            } else {
                                (link, false, cot_slots)
                            };
                            starts.push((si, link, multi, t + len));
                        }
                    }
                }
            }
            for &(si, link, multi, end_slot) in &starts {
                let st = &mut self.stations[si];
                st.mac.phase = Phase::Transmitting;
                st.mac.cot_remaining = ((end_slot - t) as f64 * slot).min(cfg.cca.cot_max);
                st.burst = Some(Burst {
                    link,
                    end_slot,
                    multi,
                    access_slot: t,
                });
                let id = st.id;
                let dst = st.queue(link).front().expect("granted link has a packet").dst;
                let tx = self.transmission(id, dst, t);
                self.air_insert(tx);
            }

            if self.air.is_empty() {
                self.finish_slot(t, now);
                continue;
            }
            if self.air.version() != seen_version {
                self.air.resolve(&self.radio, &cfg.cca, &mut outcomes);
                seen_version = self.air.version();
            }
            self.m.busy_slots += 1;
            self.m.tx_slots += outcomes.len() as u64;

            ends.clear();
            for o in outcomes.iter() {
                let si = self.station_of[o.tx.index()].unwrap();
                let burst = self.stations[si].burst.expect("on air means bursting");
                let tx_kind = self.stations[si].kind;
                let rate = throughput(o.sinr, &cfg.throughput);
                if decode_ok(o) {
                    let cap = slot * rate;
                    let pkt = self.stations[si].queue_mut(burst.link).front_mut().unwrap();
                    let credit = pkt.remaining_bits.min(cap);
                    pkt.remaining_bits -= credit;
                    let done = pkt.remaining_bits <= 1e-9;
                    let acc = self.account(o.tx, o.rx, burst.link);
                    acc.capacity_bits += cap;
                    acc.delivered_bits += credit;
                    if !done {
                        let end = if t + 1 >= burst.end_slot {
                            EndOfSlot::Done { success: true }
                        } else {
                            EndOfSlot::Keep
                        };
                        ends.push((si, end));
                        continue;
                    }
                    self.m.success += 1;
                    let st = &mut self.stations[si];
                    st.outcome = Some(Outcome::Success);
                    match burst.link {
                        LinkKind::Access => st.mu_latest.mu_access = o.sinr.max(f64::MIN_POSITIVE),
                        LinkKind::Backhaul => {
                            st.mu_latest.mu_backhaul = o.sinr.max(f64::MIN_POSITIVE)
                        }
                    }
                    let p = st.queue_mut(burst.link).pop_front().unwrap();
                    self.report(o, tx_kind, now);
                    self.deliver(p, burst.link);
                    let st = &self.stations[si];
                    let next = st.queue(burst.link).front().map(|p| p.dst);
                    let end = match next {
                        Some(dst) if burst.multi && t + 1 < burst.end_slot => {
                            if dst == o.rx {
                                EndOfSlot::Keep
                            } else {
                                EndOfSlot::Retarget
                            }
                        }
                        _ => EndOfSlot::Done { success: true },
                    };
                    ends.push((si, end));
                } else {
                    let acc = self.account(o.tx, o.rx, burst.link);
                    acc.capacity_bits += slot * rate;
                    match o.outcome {
                        Outcome::Interfered => self.m.interfered += 1,
                        _ => self.m.collision += 1,
                    }
                    let retry_limit = cfg.retry_limit;
                    let st = &mut self.stations[si];
                    st.outcome = Some(o.outcome);
                    match burst.link {
                        LinkKind::Access => st.mu_latest.mu_access = o.sinr.max(f64::MIN_POSITIVE),
                        LinkKind::Backhaul => {
                            st.mu_latest.mu_backhaul = o.sinr.max(f64::MIN_POSITIVE)
                        }
                    }
                    let q = st.queue_mut(burst.link);
                    let pkt = q.front_mut().unwrap();
                    pkt.attempts += 1;
                    pkt.remaining_bits = pkt.size_bits as f64;
                    if pkt.attempts >= retry_limit {
                        q.pop_front();
                        self.m.dropped += 1;
                    }
                    self.report(o, tx_kind, now);
                    ends.push((si, EndOfSlot::Done { success: false }));
                }
            }

            for (si, end) in ends.drain(..) {
                match end {
                    EndOfSlot::Keep => {}
                    EndOfSlot::Retarget => {
                        let st = &self.stations[si];
                        let id = st.id;
                        let b = st.burst.unwrap();
                        let dst = st.queue(b.link).front().unwrap().dst;
                        let tx = self.transmission(id, dst, b.access_slot);
                        self.air_remove(id);
                        self.air_insert(tx);
                    }
                    EndOfSlot::Done { success } => {
                        let st = &mut self.stations[si];
                        let id = st.id;
                        st.burst = None;
                        st.contend_link = None;
                        st.mac = match st.access_mode {
                            Access::Dcf => dcf_on_outcome(st.mac, success, &cfg.dcf, &mut st.rng_mac),
                            Access::Lbt => lbt_on_complete(st.mac, &cfg.lbt, &mut st.rng_mac),
                            Access::Tdd => MacState {
                                phase: Phase::CotHold,
                                cot_remaining: 0.0,
                                ..st.mac
                            },
                        };
                        self.air_remove(id);
                    }
                }
            }
            for st in &mut self.stations {
                if let Some(b) = st.burst {
                    st.mac.cot_remaining = ((b.end_slot - t - 1) as f64 * slot).min(cfg.cca.cot_max);
                }
            }
            self.finish_slot(t, now);
        }

        let queued: usize = self
            .stations
            .iter()
            .map(|s| s.access.len() + s.backhaul.len())
            .sum();
        self.m.queued = queued as u64;
        if let Some(state) = self.controller.take() {
            self.m.reconfigurations = state.log;
        }
        self.m
    }

    fn finish_slot(&mut self, _t: u64, now: f64) {
        if !self.cfg.trace {
            return;
        }
        for st in &self.stations {
            if st.mac.phase == Phase::Idle && st.cca.is_none() && st.outcome.is_none() {
                continue;
            }
            self.m.trace.push(TraceRow {
                time: now,
                node: st.id,
                phase: st.mac.phase,
                cca: st.cca,
                outcome: st.outcome,
            });
        }
    }
}

/// One replication on a freshly generated topology seeded by `cfg.seed`.
pub fn run(cfg: &SimConfig) -> Result<MetricsRecord> {
    cfg.validate()?;
    let topo_cfg = TopologyConfig {
        seed: cfg.seed,
        ..cfg.topology.clone()
    };
    let topo = build(&topo_cfg, &cfg.link_context())?;
    Ok(Engine::new(cfg, topo).run())
}

/// One replication on a given, already associated topology.
pub fn run_with_topology(cfg: &SimConfig, topology: Topology) -> Result<MetricsRecord> {
    cfg.validate()?;
    topology.validate()?;
    Ok(Engine::new(cfg, topology).run())
}

/// Means over replications plus the pooled samples behind the CDFs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Aggregate {
    pub n_runs: usize,
    pub cell_tput_bps: f64,
    pub ue_tput_bps: f64,
    pub interfered_frac: f64,
    pub dropped_frac: f64,
    pub arrived: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub queued: u64,
    pub success: u64,
    pub collision: u64,
    pub interfered: u64,
    /// Cell throughput of each run, in seed order.
    pub cell_samples: Vec<f64>,
    /// Per-UE throughput of every run, in seed order.
    pub ue_samples: Vec<f64>,
}

impl Aggregate {
    fn from_runs(runs: &[MetricsRecord]) -> Aggregate {
        let n = runs.len() as f64;
        let mut a = Aggregate {
            n_runs: runs.len(),
            ..Default::default()
        };
        for r in runs {
            a.cell_tput_bps += r.cell_throughput() / n;
            a.ue_tput_bps += r.ue_throughput() / n;
            a.arrived += r.arrived;
            a.delivered += r.delivered;
            a.dropped += r.dropped;
            a.queued += r.queued;
            a.success += r.success;
            a.collision += r.collision;
            a.interfered += r.interfered;
            a.cell_samples.push(r.cell_throughput());
            a.ue_samples.extend(r.ue_throughputs());
        }
        a.interfered_frac = fraction(a.interfered, a.success + a.collision + a.interfered);
        a.dropped_frac = fraction(a.dropped, a.arrived);
        a
    }
}

/// Runs seeds `cfg.seed + i` for `i < n_runs` and aggregates them in seed
/// order, so the result does not depend on `worker_count`.
pub fn replicate(cfg: &SimConfig, n_runs: usize, worker_count: usize) -> Result<Aggregate> {
    if n_runs == 0 {
        return Err(Error::InvalidConfig("n_runs must be >= 1".into()));
    }
    cfg.validate()?;
    let one = |i: usize| {
        let c = SimConfig {
            seed: cfg.seed.wrapping_add(i as u64),
            trace: false,
            ..cfg.clone()
        };
        run(&c)
    };
    let runs = run_indexed(n_runs, worker_count, one)?;
    Ok(Aggregate::from_runs(&runs))
}

#[cfg(feature = "parallel")]
fn run_indexed<F>(n: usize, workers: usize, f: F) -> Result<Vec<MetricsRecord>>
where
    F: Fn(usize) -> Result<MetricsRecord> + Sync + Send,
{
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| (0..n).into_par_iter().map(f).collect())
}

#[cfg(not(feature = "parallel"))]
fn run_indexed<F>(n: usize, _workers: usize, f: F) -> Result<Vec<MetricsRecord>>
where
    F: Fn(usize) -> Result<MetricsRecord>,
{
    (0..n).map(f).collect()
}
