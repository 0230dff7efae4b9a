//! Centralized controller. It keeps a partial view of UE channel status fed
//! through the serving IAB nodes and re-steers or re-associates when a UE
//! keeps reporting interference from an incorrect LBT decision.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::channel::{angle_between_deg, wrap_deg};
use crate::topology::{LinkContext, NodeId, NodeKind, Point, Topology};

/// Consecutive interfered reports before the controller acts.
pub const DEFAULT_TRIGGER: u32 = 3;
/// How far inside the mainlobe edge a re-steered target is kept (degrees).
pub const STEER_MARGIN_DEG: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelReport {
    pub ue: NodeId,
    pub serving: NodeId,
    pub sinr_db: f64,
    /// Offending transmitter when the reception was tagged interfered.
    pub interferer: Option<NodeId>,
    /// Receiver the offender was beaming at.
    pub interferer_target: Option<NodeId>,
    pub timestamp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reconfiguration {
    ResteerBeam {
        node: NodeId,
        target: NodeId,
        boresight_deg: f64,
    },
    ReassignUe {
        ue: NodeId,
        server: NodeId,
    },
}

impl Reconfiguration {
    pub fn action(&self) -> &'static str {
        match self {
            Reconfiguration::ResteerBeam { .. } => "resteer_beam",
            Reconfiguration::ReassignUe { .. } => "reassign_ue",
        }
    }

    pub fn node(&self) -> NodeId {
        match *self {
            Reconfiguration::ResteerBeam { node, .. } => node,
            Reconfiguration::ReassignUe { ue, .. } => ue,
        }
    }

    pub fn parameters(&self) -> String {
        match *self {
            Reconfiguration::ResteerBeam {
                target,
                boresight_deg,
                ..
            } => format!("target={target};boresight_deg={boresight_deg}"),
            Reconfiguration::ReassignUe { server, .. } => format!("server={server}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UeView {
    pub last: ChannelReport,
    /// Trailing run of interfered reports.
    pub streak: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub trigger: u32,
    pub ues: BTreeMap<NodeId, UeView>,
    pub log: Vec<(f64, Reconfiguration)>,
}

impl Default for ControllerState {
    fn default() -> Self {
        Self::new(DEFAULT_TRIGGER)
    }
}

impl ControllerState {
    pub fn new(trigger: u32) -> Self {
        Self {
            trigger: trigger.max(1),
            ues: BTreeMap::new(),
            log: Vec::new(),
        }
    }

    /// Reconfiguration log as `time,action,node,parameters` CSV.
    pub fn log_csv(&self) -> String {
        let mut out = String::from("time,action,node,parameters\n");
        for (t, r) in &self.log {
            let _ = writeln!(out, "{t},{},{},{}", r.action(), r.node(), r.parameters());
        }
        out
    }
}

/// Records a report unless it is older than the latest one for that UE.
pub fn ingest(state: &mut ControllerState, report: ChannelReport) {
    match state.ues.get_mut(&report.ue) {
        Some(v) if report.timestamp < v.last.timestamp => {}
        Some(v) => {
            v.streak = if report.interferer.is_some() {
                v.streak + 1
            } else {
                0
            };
            v.last = report;
        }
        None => {
            state.ues.insert(
                report.ue,
                UeView {
                    last: report,
                    streak: u32::from(report.interferer.is_some()),
                },
            );
        }
    }
}

/// Boresights of a link steered straight along the line `a -> b`.
pub fn beam_align(a: &Point, b: &Point) -> (f64, f64) {
    let aod = a.bearing_to(b);
    (aod, wrap_deg(aod + 180.0))
}

/// Boresight that keeps `target` inside the mainlobe and moves `victim` as
/// far out of it as the mainlobe allows. `None` when the two are too close
/// in angle for the victim to leave the mainlobe.
pub fn steer_away(
    from: &Point,
    target: &Point,
    victim: &Point,
    half_width_deg: f64,
) -> Option<f64> {
    let bt = from.bearing_to(target);
    let bv = from.bearing_to(victim);
    let sep = angle_between_deg(bt, bv);
    let swing = (half_width_deg - STEER_MARGIN_DEG).max(0.0);
    let rot = swing.min(180.0 - sep);
    if sep + rot <= half_width_deg {
        return None;
    }
    // rotate away from the victim
    let ccw = wrap_deg(bv - bt) > 180.0;
    Some(wrap_deg(if ccw { bt + rot } else { bt - rot }))
}

/// Actions for every UE whose trailing interfered run has reached the
/// trigger. Offending IAB nodes are re-steered when geometry allows; the UE
/// is otherwise moved to its next-best server. The acted-on runs are reset.
pub fn mitigate(
    state: &mut ControllerState,
    topology: &Topology,
    ctx: &LinkContext,
    now: f64,
) -> Vec<Reconfiguration> {
    let mut actions = Vec::new();
    for (&ue, view) in state.ues.iter_mut() {
        if view.streak < state.trigger {
            continue;
        }
        view.streak = 0;
        let (Some(offender), Some(target)) = (view.last.interferer, view.last.interferer_target)
        else {
            continue;
        };
        let off = topology.node(offender);
        let steerable = matches!(off.kind, NodeKind::IabNode | NodeKind::Donor);
        let steer = steerable
            .then(|| {
                steer_away(
                    &off.position,
                    &topology.node(target).position,
                    &topology.node(ue).position,
                    off.pattern().beamwidth_deg / 2.0,
                )
            })
            .flatten();
        let action = match steer {
            Some(b) => Some(Reconfiguration::ResteerBeam {
                node: offender,
                target,
                boresight_deg: b,
            }),
            None => {
                let current = topology.serving(ue);
                let exclude: Vec<NodeId> = current.into_iter().collect();
                topology
                    .best_server(ue, ctx, &exclude)
                    .map(|server| Reconfiguration::ReassignUe { ue, server })
            }
        };
        if let Some(a) = action {
            state.log.push((now, a));
            actions.push(a);
        }
    }
    actions
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{AntennaPattern, ChannelParams};
    use crate::topology::{associate, NodeRecord};
    use proptest::prelude::*;

    fn report(ue: u32, t: f64, interferer: Option<u32>) -> ChannelReport {
        ChannelReport {
            ue: NodeId(ue),
            serving: NodeId(1),
            sinr_db: -3.0,
            interferer: interferer.map(NodeId),
            interferer_target: interferer.map(|_| NodeId(4)),
            timestamp: t,
        }
    }

    /// Donor, IAB A serving UE1, IAB B beaming at UE2 right next to UE1.
    fn fig2() -> (Topology, LinkContext) {
        let ant = AntennaPattern::default();
        let nodes = vec![
            NodeRecord::new(NodeId(0), NodeKind::Donor, Point::new(0.0, 0.0), &ant),
            NodeRecord::new(NodeId(1), NodeKind::IabNode, Point::new(60.0, 0.0), &ant),
            NodeRecord::new(NodeId(2), NodeKind::IabNode, Point::new(75.0, 50.0), &ant),
            NodeRecord::new(NodeId(3), NodeKind::Ue, Point::new(72.0, 22.0), &ant),
            NodeRecord::new(NodeId(4), NodeKind::Ue, Point::new(78.0, 30.0), &ant),
        ];
        let ctx = LinkContext {
            channel: ChannelParams {
                sigma_db: 0.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let t = associate(Topology::from_nodes(nodes, 100.0, 0).unwrap(), &ctx);
        assert_eq!(t.serving(NodeId(3)), Some(NodeId(1)));
        assert_eq!(t.serving(NodeId(4)), Some(NodeId(2)));
        (t, ctx)
    }

    #[test]
    fn ingest_examples() {
        let mut s = ControllerState::default();
        ingest(&mut s, report(3, 1.0, None));
        assert!(s.ues.contains_key(&NodeId(3)));
        ingest(&mut s, report(3, 0.5, Some(2)));
        assert_eq!(s.ues[&NodeId(3)].last.timestamp, 1.0);
        assert_eq!(s.ues[&NodeId(3)].streak, 0);
        ingest(&mut s, report(4, 0.2, Some(2)));
        assert_eq!(s.ues.len(), 2);
        assert_eq!(s.ues[&NodeId(4)].streak, 1);
    }

    #[test]
    fn no_interference_no_action() {
        let (t, ctx) = fig2();
        let mut s = ControllerState::default();
        for i in 0..10 {
            ingest(&mut s, report(3, i as f64, None));
        }
        assert!(mitigate(&mut s, &t, &ctx, 10.0).is_empty());
    }

    #[test]
    fn fig2_resteers_offender() {
        let (t, ctx) = fig2();
        let mut s = ControllerState::default();
        for i in 0..3 {
            ingest(&mut s, report(3, i as f64, Some(2)));
        }
        let acts = mitigate(&mut s, &t, &ctx, 3.0);
        assert_eq!(acts.len(), 1);
        let Reconfiguration::ResteerBeam {
            node,
            target,
            boresight_deg,
        } = acts[0]
        else {
            panic!("expected a re-steer, got {:?}", acts[0]);
        };
        assert_eq!((node, target), (NodeId(2), NodeId(4)));
        let b = t.node(node).position;
        let hw = 22.5;
        assert!(angle_between_deg(boresight_deg, b.bearing_to(&t.node(NodeId(4)).position)) <= hw);
        assert!(angle_between_deg(boresight_deg, b.bearing_to(&t.node(NodeId(3)).position)) > hw);
        // idempotent without new reports
        assert!(mitigate(&mut s, &t, &ctx, 4.0).is_empty());
        assert_eq!(s.log.len(), 1);
        assert!(s
            .log_csv()
            .starts_with("time,action,node,parameters\n3,resteer_beam,2,"));
    }

    #[test]
    fn inseparable_victim_is_reassigned() {
        let ant = AntennaPattern::default();
        // UE1 and UE2 on the same ray from IAB B
        let nodes = vec![
            NodeRecord::new(NodeId(0), NodeKind::Donor, Point::new(0.0, 0.0), &ant),
            NodeRecord::new(NodeId(1), NodeKind::IabNode, Point::new(30.0, 0.0), &ant),
            NodeRecord::new(NodeId(2), NodeKind::IabNode, Point::new(30.0, 40.0), &ant),
            NodeRecord::new(NodeId(3), NodeKind::Ue, Point::new(30.0, 10.0), &ant),
            NodeRecord::new(NodeId(4), NodeKind::Ue, Point::new(30.0, 5.0), &ant),
        ];
        let ctx = LinkContext::default();
        let t = associate(Topology::from_nodes(nodes, 100.0, 0).unwrap(), &ctx);
        let mut s = ControllerState::default();
        for i in 0..3 {
            ingest(&mut s, report(3, i as f64, Some(2)));
        }
        let acts = mitigate(&mut s, &t, &ctx, 3.0);
        let Reconfiguration::ReassignUe { ue, server } = acts[0] else {
            panic!("expected reassignment");
        };
        assert_eq!(ue, NodeId(3));
        assert_ne!(Some(server), t.serving(ue));
    }

    #[test]
    fn beam_align_examples() {
        let (aod, aoa) = beam_align(&Point::new(0.0, 0.0), &Point::new(10.0, 0.0));
        assert_eq!((aod, aoa), (0.0, 180.0));
        let (a2, b2) = beam_align(&Point::new(10.0, 0.0), &Point::new(0.0, 0.0));
        assert_eq!((a2, b2), (aoa, aod));
    }

    proptest! {
        #[test]
        fn aligned_offsets_are_zero(ax in -100.0f64..100.0, ay in -100.0f64..100.0, bx in -100.0f64..100.0, by in -100.0f64..100.0) {
            let (a, b) = (Point::new(ax, ay), Point::new(bx, by));
            prop_assume!(a.distance(&b) > 1e-6);
            let (aod, aoa) = beam_align(&a, &b);
            prop_assert!(angle_between_deg(aod, a.bearing_to(&b)) < 1e-9);
            prop_assert!(angle_between_deg(aoa, b.bearing_to(&a)) < 1e-9);
        }

        #[test]
        fn steer_increases_victim_offset(
            tx in -50.0f64..50.0, ty in -50.0f64..50.0, vx in -50.0f64..50.0, vy in -50.0f64..50.0,
        ) {
            let o = Point::new(0.0, 0.0);
            let (t, v) = (Point::new(tx, ty), Point::new(vx, vy));
            prop_assume!(t.norm() > 1.0 && v.norm() > 1.0);
            let hw = 22.5;
            if let Some(b) = steer_away(&o, &t, &v, hw) {
                let before = angle_between_deg(o.bearing_to(&t), o.bearing_to(&v)) - hw;
                let after = angle_between_deg(b, o.bearing_to(&v)) - hw;
                prop_assert!(after > before);
                prop_assert!(after > 0.0);
                prop_assert!(angle_between_deg(b, o.bearing_to(&t)) <= hw);
            }
        }
    }
}
