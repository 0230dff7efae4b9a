//! Per-topology radio tables. Pathloss (with static shadowing) and bearings
//! from every infrastructure node to every node are computed once so the
//! slot loop only does lookups and a beam-offset comparison per pair.

use std::sync::Arc;

use crate::channel::{angle_between_deg, db_to_linear, linear_to_db, pathloss_db};
use crate::topology::{point_geometry, LinkContext, NodeId, Topology};

#[derive(Debug, Clone, Copy)]
struct Beam {
    main: f64,
    side: f64,
    half_width: f64,
}

impl Beam {
    #[inline]
    fn gain(&self, offset_deg: f64) -> f64 {
        if offset_deg <= self.half_width {
            self.main
        } else {
            self.side
        }
    }
}

#[derive(Debug, Clone)]
pub struct Radio {
    topology: Arc<Topology>,
    n: usize,
    row: Vec<Option<usize>>,
    infra: Vec<NodeId>,
    path_gain: Vec<f64>,
    bearing: Vec<f64>,
    beams: Vec<Beam>,
    channel_of: Vec<u32>,
    tx_power_mw: f64,
    noise_mw: f64,
    aci_factor: f64,
}

impl Radio {
    /// Single shared channel.
    pub fn new(topology: Arc<Topology>, ctx: &LinkContext) -> Self {
        Self::with_channels(topology, ctx, 1)
    }

    /// Nodes are spread round-robin by id over `num_channels` adjacent
    /// channels. Neighbouring channels leak through the ACI rejection,
    /// channels further apart do not interact.
    pub fn with_channels(topology: Arc<Topology>, ctx: &LinkContext, num_channels: u32) -> Self {
        let n = topology.nodes.len();
        let mut row = vec![None; n];
        let mut infra = Vec::new();
        for node in &topology.nodes {
            if node.kind.is_infrastructure() {
                row[node.id.index()] = Some(infra.len());
                infra.push(node.id);
            }
        }
        let rows = infra.len();
        let mut path_gain = vec![0.0; rows * n];
        let mut bearing = vec![0.0; rows * n];
        for tx in topology.nodes.iter().filter(|t| t.kind.is_infrastructure()) {
            let r = row[tx.id.index()].unwrap();
            for rx in &topology.nodes {
                let k = r * n + rx.id.index();
                if rx.id == tx.id {
                    continue;
                }
                let g = point_geometry(&tx.position, &rx.position);
                let shadow = topology.shadowing_db(tx.id, rx.id, ctx.channel.sigma_db);
                let pl = pathloss_db(g.distance, &ctx.channel, shadow).expect("clamped distance");
                path_gain[k] = db_to_linear(-(pl + ctx.channel.subpath_attenuation_db));
                bearing[k] = g.aod_deg;
            }
        }
        let beams = topology
            .nodes
            .iter()
            .map(|nd| {
                let p = nd.pattern();
                Beam {
                    main: db_to_linear(p.mainlobe_gain_dbi),
                    side: db_to_linear(p.sidelobe_gain_dbi),
                    half_width: p.beamwidth_deg / 2.0,
                }
            })
            .collect();
        let channels = num_channels.max(1);
        let channel_of = topology.nodes.iter().map(|nd| nd.id.0 % channels).collect();
        Self {
            topology,
            n,
            row,
            infra,
            path_gain,
            bearing,
            beams,
            channel_of,
            tx_power_mw: db_to_linear(ctx.tx_power_dbm),
            noise_mw: db_to_linear(ctx.noise_dbm),
            aci_factor: db_to_linear(-ctx.channel.aci_rejection_db),
        }
    }

    pub fn topology(&self) -> &Arc<Topology> {
        &self.topology
    }

    /// Number of infrastructure nodes.
    pub fn infra_len(&self) -> usize {
        self.infra.len()
    }

    /// Dense index of an infrastructure node.
    pub fn infra_index(&self, node: NodeId) -> Option<usize> {
        self.row[node.index()]
    }

    pub fn infra_node(&self, index: usize) -> NodeId {
        self.infra[index]
    }

    pub fn noise_mw(&self) -> f64 {
        self.noise_mw
    }

    pub fn noise_dbm(&self) -> f64 {
        linear_to_db(self.noise_mw)
    }

    #[inline]
    fn key(&self, tx: NodeId, rx: NodeId) -> usize {
        self.row[tx.index()].expect("transmitter must be infrastructure") * self.n + rx.index()
    }

    /// Bearing from `a` to `b`. At least one side must be infrastructure.
    #[inline]
    pub fn bearing(&self, a: NodeId, b: NodeId) -> f64 {
        if self.row[a.index()].is_some() {
            self.bearing[self.key(a, b)]
        } else {
            let back = self.bearing[self.key(b, a)];
            if back >= 180.0 {
                back - 180.0
            } else {
                back + 180.0
            }
        }
    }

    #[inline]
    pub fn path_gain(&self, tx: NodeId, rx: NodeId) -> f64 {
        self.path_gain[self.key(tx, rx)]
    }

    #[inline]
    fn coupling(&self, tx: NodeId, rx: NodeId) -> f64 {
        let (a, b) = (self.channel_of[tx.index()], self.channel_of[rx.index()]);
        match a.abs_diff(b) {
            0 => 1.0,
            1 => self.aci_factor,
            _ => 0.0,
        }
    }

    /// Power (mW) from `tx`, beam on `tx_boresight`, received by `rx` with
    /// its beam on `rx_boresight`.
    #[inline]
    pub fn rx_power_mw(&self, tx: NodeId, tx_boresight: f64, rx: NodeId, rx_boresight: f64) -> f64 {
        let k = self.key(tx, rx);
        let b = self.bearing[k];
        let back = if b >= 180.0 { b - 180.0 } else { b + 180.0 };
        let gt = self.beams[tx.index()].gain(angle_between_deg(b, tx_boresight));
        let gr = self.beams[rx.index()].gain(angle_between_deg(back, rx_boresight));
        self.tx_power_mw * gt * gr * self.path_gain[k] * self.coupling(tx, rx)
    }

    pub fn rx_power_dbm(
        &self,
        tx: NodeId,
        tx_boresight: f64,
        rx: NodeId,
        rx_boresight: f64,
    ) -> f64 {
        linear_to_db(self.rx_power_mw(tx, tx_boresight, rx, rx_boresight))
    }

    /// Signal power of a link with both beams pointed at each other.
    pub fn aligned_power_mw(&self, tx: NodeId, rx: NodeId) -> f64 {
        let b = self.bearing(tx, rx);
        self.rx_power_mw(tx, b, rx, self.bearing(rx, tx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{
        effective_gain, received_power_dbm, AntennaPattern, ChannelParams, LinkBudget,
    };
    use crate::topology::{build, link_geometry, NodeKind, TopologyConfig};

    #[test]
    fn table_matches_direct_link_budget() {
        let ctx = LinkContext {
            channel: ChannelParams {
                sigma_db: 4.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let topo = Arc::new(
            build(
                &TopologyConfig {
                    n_infra: 8,
                    ue_per_cell: 4,
                    seed: 5,
                    ..Default::default()
                },
                &ctx,
            )
            .unwrap(),
        );
        let radio = Radio::new(topo.clone(), &ctx);
        let pattern = AntennaPattern::default();
        for tx in topo.nodes.iter().filter(|n| n.kind.is_infrastructure()) {
            for rx in topo.nodes.iter().filter(|n| n.id != tx.id) {
                let g = link_geometry(tx, rx);
                for &(tb, rb) in &[
                    (0.0, 0.0),
                    (g.aod_deg, g.aoa_deg),
                    (g.aod_deg + 40.0, g.aoa_deg - 10.0),
                ] {
                    let shadow = topo.shadowing_db(tx.id, rx.id, ctx.channel.sigma_db);
                    let expect = received_power_dbm(&LinkBudget {
                        tx_power_dbm: ctx.tx_power_dbm,
                        combined_gain_db: effective_gain(
                            &pattern,
                            &pattern,
                            angle_between_deg(g.aod_deg, tb),
                            angle_between_deg(g.aoa_deg, rb),
                        ),
                        subpath_attenuation_db: 0.0,
                        pathloss_db: pathloss_db(g.distance, &ctx.channel, shadow).unwrap(),
                        noise_dbm: ctx.noise_dbm,
                        aci_interference_dbm: f64::NEG_INFINITY,
                    });
                    let got = radio.rx_power_dbm(tx.id, tb, rx.id, rb);
                    assert!(
                        (got - expect).abs() < 1e-9,
                        "{} -> {}: {got} vs {expect}",
                        tx.id,
                        rx.id
                    );
                }
            }
        }
        assert_eq!(topo.count(NodeKind::Donor), 1);
    }

    #[test]
    fn reverse_bearing_for_ue_side() {
        let ctx = LinkContext::default();
        let topo = Arc::new(
            build(
                &TopologyConfig {
                    n_infra: 3,
                    ue_per_cell: 2,
                    ..Default::default()
                },
                &ctx,
            )
            .unwrap(),
        );
        let radio = Radio::new(topo.clone(), &ctx);
        for ue in topo.ids_of(NodeKind::Ue) {
            let s = topo.serving(ue).unwrap();
            let fwd = radio.bearing(s, ue);
            let back = radio.bearing(ue, s);
            assert!((angle_between_deg(fwd, back) - 180.0).abs() < 1e-9);
        }
    }
}
