//! Deployment generation: a donor at the centre of a circular cell, IAB
//! nodes and WiGig APs split 40:60 and dropped uniformly in the disk, and
//! sectored UE clusters around every access point. Association picks the
//! strongest server for each UE and a backhaul parent for each IAB node.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::Rng;

use crate::channel::{
    angle_between_deg, pathloss_db, received_power_dbm, wrap_deg, AntennaPattern, ChannelParams,
    LinkBudget,
};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// Links shorter than this are evaluated at this distance.
pub const MIN_LINK_DISTANCE_M: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Donor,
    IabNode,
    WigigAp,
    Ue,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Donor => "donor",
            NodeKind::IabNode => "iab",
            NodeKind::WigigAp => "ap",
            NodeKind::Ue => "ue",
        }
    }

    pub fn is_infrastructure(self) -> bool {
        !matches!(self, NodeKind::Ue)
    }
}

impl FromStr for NodeKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "donor" => Ok(NodeKind::Donor),
            "iab" => Ok(NodeKind::IabNode),
            "ap" => Ok(NodeKind::WigigAp),
            "ue" => Ok(NodeKind::Ue),
            other => Err(format!("unknown node kind '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ORIGIN: Point = Point { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (other.x - self.x).hypot(other.y - self.y)
    }

    /// Bearing towards `other` in degrees, `[0, 360)`, counter-clockwise
    /// from the +x axis.
    pub fn bearing_to(&self, other: &Point) -> f64 {
        wrap_deg((other.y - self.y).atan2(other.x - self.x).to_degrees())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub id: NodeId,
    pub kind: NodeKind,
    pub position: Point,
    pub sectors: u8,
    /// One pattern per sector panel.
    pub antennas: Vec<AntennaPattern>,
}

impl NodeRecord {
    pub fn new(id: NodeId, kind: NodeKind, position: Point, antenna: &AntennaPattern) -> Self {
        let sectors: u8 = if kind.is_infrastructure() { 3 } else { 1 };
        let antennas = (0..sectors)
            .map(|s| AntennaPattern {
                boresight_deg: if sectors == 1 {
                    0.0
                } else {
                    60.0 + 120.0 * s as f64
                },
                ..antenna.clone()
            })
            .collect();
        Self {
            id,
            kind,
            position,
            sectors,
            antennas,
        }
    }

    /// Pattern used for a steered beam; all panels share the same shape.
    pub fn pattern(&self) -> &AntennaPattern {
        &self.antennas[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LinkKind {
    Access,
    Backhaul,
}

impl LinkKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LinkKind::Access => "access",
            LinkKind::Backhaul => "backhaul",
        }
    }
}

impl FromStr for LinkKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "access" => Ok(LinkKind::Access),
            "backhaul" => Ok(LinkKind::Backhaul),
            other => Err(format!("unknown link kind '{other}'")),
        }
    }
}

/// A directional link. Access links run from the serving node to a UE,
/// backhaul links from an IAB node to its parent.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkState {
    pub src: NodeId,
    pub dst: NodeId,
    pub kind: LinkKind,
    pub distance: f64,
    pub static_shadowing_db: f64,
    /// Boresight SNR without interference.
    pub sinr_estimate_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub distance: f64,
    pub aod_deg: f64,
    pub aoa_deg: f64,
}

/// Distance (clamped to [`MIN_LINK_DISTANCE_M`]) and the departure and
/// arrival bearings of the straight line from `a` to `b`.
pub fn link_geometry(a: &NodeRecord, b: &NodeRecord) -> Geometry {
    point_geometry(&a.position, &b.position)
}

pub fn point_geometry(a: &Point, b: &Point) -> Geometry {
    let raw = a.distance(b);
    let aod = a.bearing_to(b);
    Geometry {
        distance: raw.max(MIN_LINK_DISTANCE_M),
        aod_deg: aod,
        aoa_deg: wrap_deg(aod + 180.0),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopologyConfig {
    pub n_infra: usize,
    pub ue_per_cell: usize,
    pub cell_radius: f64,
    /// Radius of the sector area UEs are dropped in around their node.
    pub ue_radius: f64,
    /// Maximum backhaul hop count from the donor.
    pub max_depth: usize,
    pub seed: u64,
    pub antenna: AntennaPattern,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            n_infra: 10,
            ue_per_cell: 20,
            cell_radius: 100.0,
            ue_radius: 15.0,
            max_depth: 2,
            seed: 1,
            antenna: AntennaPattern::default(),
        }
    }
}

impl TopologyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cell_radius > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "cell radius must be > 0, got {}",
                self.cell_radius
            )));
        }
        if !(self.ue_radius > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "ue radius must be > 0, got {}",
                self.ue_radius
            )));
        }
        if self.max_depth == 0 {
            return Err(Error::InvalidConfig("backhaul depth must be >= 1".into()));
        }
        self.antenna.validate()
    }
}

/// Radio parameters association needs to rank candidate servers.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkContext {
    pub channel: ChannelParams,
    pub tx_power_dbm: f64,
    pub noise_dbm: f64,
}

impl Default for LinkContext {
    fn default() -> Self {
        Self {
            channel: ChannelParams::default(),
            tx_power_dbm: 23.0,
            noise_dbm: crate::channel::noise_dbm(100e6, 7.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub nodes: Vec<NodeRecord>,
    pub links: Vec<LinkState>,
    pub cell_radius: f64,
    /// Seed of the static per-pair shadowing field.
    pub shadowing_seed: u64,
    serving: Vec<Option<NodeId>>,
    parent: Vec<Option<NodeId>>,
}

/// Number of IAB nodes in a deployment of `n_infra` access points.
pub fn iab_count(n_infra: usize) -> usize {
    (0.4 * n_infra as f64).round() as usize
}

/// Places the donor, `round(0.4 n)` IAB nodes and the remaining WiGig APs
/// uniformly in the disk, then `ue_per_cell` UEs around each IAB node and
/// AP, spread over its three sectors. No links are created here.
pub fn generate(cfg: &TopologyConfig) -> Result<Topology> {
    cfg.validate()?;
    let mut rng = rng::stream(cfg.seed, 0, Purpose::Placement);
    let n_iab = iab_count(cfg.n_infra);
    let mut nodes = Vec::with_capacity(1 + cfg.n_infra * (1 + cfg.ue_per_cell));
    nodes.push(NodeRecord::new(
        NodeId(0),
        NodeKind::Donor,
        Point::ORIGIN,
        &cfg.antenna,
    ));
    for i in 0..cfg.n_infra {
        let kind = if i < n_iab {
            NodeKind::IabNode
        } else {
            NodeKind::WigigAp
        };
        let r = cfg.cell_radius * rng.random::<f64>().sqrt();
        let theta = rng.random::<f64>() * std::f64::consts::TAU;
        let id = NodeId(nodes.len() as u32);
        nodes.push(NodeRecord::new(
            id,
            kind,
            Point::new(r * theta.cos(), r * theta.sin()),
            &cfg.antenna,
        ));
    }
    for cell in 1..=cfg.n_infra {
        let centre = nodes[cell].position;
        for j in 0..cfg.ue_per_cell {
            let sector = (j % 3) as f64;
            let r = (cfg.ue_radius * rng.random::<f64>().sqrt()).max(MIN_LINK_DISTANCE_M);
            let theta = (120.0 * sector + 120.0 * rng.random::<f64>()).to_radians();
            let id = NodeId(nodes.len() as u32);
            let pos = Point::new(centre.x + r * theta.cos(), centre.y + r * theta.sin());
            nodes.push(NodeRecord::new(id, NodeKind::Ue, pos, &cfg.antenna));
        }
    }
    let n = nodes.len();
    Ok(Topology {
        nodes,
        links: Vec::new(),
        cell_radius: cfg.cell_radius,
        shadowing_seed: cfg.seed,
        serving: vec![None; n],
        parent: vec![None; n],
    })
}

impl Topology {
    /// Assembles a topology from explicit nodes; used for hand-built
    /// scenarios. Node ids must equal their index.
    pub fn from_nodes(
        nodes: Vec<NodeRecord>,
        cell_radius: f64,
        shadowing_seed: u64,
    ) -> Result<Topology> {
        for (i, n) in nodes.iter().enumerate() {
            if n.id.index() != i {
                return Err(Error::InvalidConfig(format!(
                    "node at index {i} has id {}",
                    n.id
                )));
            }
        }
        let donors = nodes.iter().filter(|n| n.kind == NodeKind::Donor).count();
        if donors != 1 {
            return Err(Error::InvalidConfig(format!(
                "expected exactly one donor, found {donors}"
            )));
        }
        let n = nodes.len();
        Ok(Topology {
            nodes,
            links: Vec::new(),
            cell_radius,
            shadowing_seed,
            serving: vec![None; n],
            parent: vec![None; n],
        })
    }

    pub fn node(&self, id: NodeId) -> &NodeRecord {
        &self.nodes[id.index()]
    }

    pub fn donor(&self) -> NodeId {
        self.nodes
            .iter()
            .find(|n| n.kind == NodeKind::Donor)
            .map(|n| n.id)
            .expect("topology always has a donor")
    }

    pub fn count(&self, kind: NodeKind) -> usize {
        self.nodes.iter().filter(|n| n.kind == kind).count()
    }

    pub fn ids_of(&self, kind: NodeKind) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes
            .iter()
            .filter(move |n| n.kind == kind)
            .map(|n| n.id)
    }

    pub fn serving(&self, ue: NodeId) -> Option<NodeId> {
        self.serving[ue.index()]
    }

    pub fn parent(&self, node: NodeId) -> Option<NodeId> {
        self.parent[node.index()]
    }

    /// Static shadowing on the path between two nodes.
    pub fn shadowing_db(&self, a: NodeId, b: NodeId, sigma_db: f64) -> f64 {
        if sigma_db == 0.0 {
            0.0
        } else {
            sigma_db * rng::pair_normal(self.shadowing_seed, a.0 as u64, b.0 as u64)
        }
    }

    /// Received power from `tx` at `rx` with both beams on boresight.
    pub fn boresight_power_dbm(&self, tx: NodeId, rx: NodeId, ctx: &LinkContext) -> f64 {
        let (a, b) = (self.node(tx), self.node(rx));
        let g = link_geometry(a, b);
        let shadow = self.shadowing_db(tx, rx, ctx.channel.sigma_db);
        let pl =
            pathloss_db(g.distance, &ctx.channel, shadow).expect("distance is clamped positive");
        received_power_dbm(&LinkBudget {
            tx_power_dbm: ctx.tx_power_dbm,
            combined_gain_db: a.pattern().mainlobe_gain_dbi + b.pattern().mainlobe_gain_dbi,
            subpath_attenuation_db: ctx.channel.subpath_attenuation_db,
            pathloss_db: pl,
            noise_dbm: ctx.noise_dbm,
            aci_interference_dbm: f64::NEG_INFINITY,
        })
    }

    fn make_link(&self, src: NodeId, dst: NodeId, kind: LinkKind, ctx: &LinkContext) -> LinkState {
        let g = link_geometry(self.node(src), self.node(dst));
        LinkState {
            src,
            dst,
            kind,
            distance: g.distance,
            static_shadowing_db: self.shadowing_db(src, dst, ctx.channel.sigma_db),
            sinr_estimate_db: self.boresight_power_dbm(src, dst, ctx) - ctx.noise_dbm,
        }
    }

    /// Strongest infrastructure node for `ue`, skipping `exclude`. Ties go
    /// to the lower id.
    pub fn best_server(&self, ue: NodeId, ctx: &LinkContext, exclude: &[NodeId]) -> Option<NodeId> {
        let mut best: Option<(NodeId, f64)> = None;
        for n in self.nodes.iter().filter(|n| n.kind.is_infrastructure()) {
            if exclude.contains(&n.id) {
                continue;
            }
            let p = self.boresight_power_dbm(n.id, ue, ctx);
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((n.id, p));
            }
        }
        best.map(|(id, _)| id)
    }

    /// Rebuilds the link table after a change of serving node.
    pub fn reassign(&mut self, ue: NodeId, server: NodeId, ctx: &LinkContext) {
        self.serving[ue.index()] = Some(server);
        self.links
            .retain(|l| !(l.kind == LinkKind::Access && l.dst == ue));
        self.links
            .push(self.make_link(server, ue, LinkKind::Access, ctx));
    }

    /// Checks the structural invariants: one donor, every UE served exactly
    /// once, only admissible link kinds, backhaul forms a forest rooted at
    /// the donor.
    pub fn validate(&self) -> Result<()> {
        let donors = self.count(NodeKind::Donor);
        if donors != 1 {
            return Err(Error::InvalidConfig(format!(
                "expected one donor, found {donors}"
            )));
        }
        for n in &self.nodes {
            if n.kind == NodeKind::Ue {
                let serving = self
                    .links
                    .iter()
                    .filter(|l| l.kind == LinkKind::Access && l.dst == n.id)
                    .count();
                if serving != 1 {
                    return Err(Error::InvalidConfig(format!(
                        "UE {} has {serving} serving links",
                        n.id
                    )));
                }
            }
        }
        for l in &self.links {
            let (s, d) = (self.node(l.src).kind, self.node(l.dst).kind);
            let ok = match l.kind {
                LinkKind::Access => s.is_infrastructure() && d == NodeKind::Ue,
                LinkKind::Backhaul => {
                    s == NodeKind::IabNode && matches!(d, NodeKind::Donor | NodeKind::IabNode)
                }
            };
            if !ok {
                return Err(Error::InvalidConfig(format!(
                    "inadmissible {} link {} -> {}",
                    l.kind.as_str(),
                    l.src,
                    l.dst
                )));
            }
        }
        let donor = self.donor();
        for n in self.ids_of(NodeKind::IabNode) {
            let mut cur = n;
            let mut hops = 0;
            while cur != donor {
                cur = self.parent(cur).ok_or_else(|| {
                    Error::InvalidConfig(format!("IAB node {n} has no path to the donor"))
                })?;
                hops += 1;
                if hops > self.nodes.len() {
                    return Err(Error::InvalidConfig(format!("backhaul cycle through {n}")));
                }
            }
        }
        Ok(())
    }

    /// Backhaul hop count from the donor.
    pub fn depth(&self, node: NodeId) -> usize {
        let donor = self.donor();
        let mut cur = node;
        let mut d = 0;
        while cur != donor {
            match self.parent(cur) {
                Some(p) => {
                    cur = p;
                    d += 1;
                }
                None => break,
            }
        }
        d
    }

    /// Structured-text export: a meta section, a node table and a link table.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("[meta]\n");
        let _ = writeln!(out, "cell_radius={}", self.cell_radius);
        let _ = writeln!(out, "shadowing_seed={}", self.shadowing_seed);
        out.push_str("[nodes]\nid,kind,x,y,sector_count\n");
        for n in &self.nodes {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                n.id,
                n.kind.as_str(),
                n.position.x,
                n.position.y,
                n.sectors
            );
        }
        out.push_str("[links]\nsrc,dst,kind\n");
        for l in &self.links {
            let _ = writeln!(out, "{},{},{}", l.src, l.dst, l.kind.as_str());
        }
        out
    }

    /// Parses the output of [`Topology::to_text`]. Antenna shapes are not
    /// part of the file and come from `antenna`.
    pub fn from_text(text: &str, antenna: &AntennaPattern, ctx: &LinkContext) -> Result<Topology> {
        #[derive(PartialEq)]
        enum Section {
            None,
            Meta,
            Nodes,
            Links,
        }
        let mut section = Section::None;
        let mut cell_radius = None;
        let mut seed = None;
        let mut nodes = Vec::new();
        let mut links: Vec<(NodeId, NodeId, LinkKind)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line {
                "[meta]" => section = Section::Meta,
                "[nodes]" => section = Section::Nodes,
                "[links]" => section = Section::Links,
                "id,kind,x,y,sector_count" | "src,dst,kind" => {}
                _ => match section {
                    Section::Meta => {
                        let (k, v) = line
                            .split_once('=')
                            .ok_or_else(|| Error::parse(line_no, "expected key=value"))?;
                        match k.trim() {
                            "cell_radius" => cell_radius = Some(parse_num::<f64>(v, line_no)?),
                            "shadowing_seed" => seed = Some(parse_num::<u64>(v, line_no)?),
                            other => {
                                return Err(Error::parse(line_no, format!("unknown key '{other}'")))
                            }
                        }
                    }
                    Section::Nodes => {
                        let f: Vec<&str> = line.split(',').collect();
                        if f.len() != 5 {
                            return Err(Error::parse(line_no, "node row needs 5 fields"));
                        }
                        let id = NodeId(parse_num(f[0], line_no)?);
                        let kind: NodeKind =
                            f[1].parse().map_err(|e: String| Error::parse(line_no, e))?;
                        let pos = Point::new(parse_num(f[2], line_no)?, parse_num(f[3], line_no)?);
                        let sectors: u8 = parse_num(f[4], line_no)?;
                        let rec = NodeRecord::new(id, kind, pos, antenna);
                        if rec.sectors != sectors {
                            return Err(Error::parse(
                                line_no,
                                format!("{} nodes have {} sectors", f[1], rec.sectors),
                            ));
                        }
                        nodes.push(rec);
                    }
                    Section::Links => {
                        let f: Vec<&str> = line.split(',').collect();
                        if f.len() != 3 {
                            return Err(Error::parse(line_no, "link row needs 3 fields"));
                        }
                        let kind: LinkKind =
                            f[2].parse().map_err(|e: String| Error::parse(line_no, e))?;
                        links.push((
                            NodeId(parse_num(f[0], line_no)?),
                            NodeId(parse_num(f[1], line_no)?),
                            kind,
                        ));
                    }
                    Section::None => {
                        return Err(Error::parse(line_no, "data before any section header"))
                    }
                },
            }
        }
        let cell_radius = cell_radius.ok_or_else(|| Error::parse(0, "missing cell_radius"))?;
        let mut topo = Topology::from_nodes(nodes, cell_radius, seed.unwrap_or(0))?;
        for (src, dst, kind) in links {
            if src.index() >= topo.nodes.len() || dst.index() >= topo.nodes.len() {
                return Err(Error::InvalidConfig(format!(
                    "link {src} -> {dst} references a missing node"
                )));
            }
            match kind {
                LinkKind::Access => topo.serving[dst.index()] = Some(src),
                LinkKind::Backhaul => topo.parent[src.index()] = Some(dst),
            }
            let link = topo.make_link(src, dst, kind, ctx);
            topo.links.push(link);
        }
        topo.validate()?;
        Ok(topo)
    }
}

fn parse_num<T: FromStr>(s: &str, line: usize) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("invalid number '{}'", s.trim())))
}

/// Attaches every UE to its strongest server and every IAB node to a
/// backhaul parent. IAB nodes are visited nearest-to-donor first; a node
/// may only hang off the donor or a strictly nearer IAB node that still has
/// depth budget, which keeps the backhaul graph a forest.
pub fn associate(mut t: Topology, ctx: &LinkContext) -> Topology {
    associate_with_depth(&mut t, ctx, usize::MAX);
    t
}

pub fn associate_with_depth(t: &mut Topology, ctx: &LinkContext, max_depth: usize) {
    let donor = t.donor();
    let donor_pos = t.node(donor).position;
    t.links.clear();
    t.serving.iter_mut().for_each(|s| *s = None);
    t.parent.iter_mut().for_each(|p| *p = None);

    let mut iab: Vec<NodeId> = t.ids_of(NodeKind::IabNode).collect();
    iab.sort_by(|a, b| {
        let da = t.node(*a).position.distance(&donor_pos);
        let db = t.node(*b).position.distance(&donor_pos);
        da.total_cmp(&db).then(a.cmp(b))
    });
    let mut depth = vec![0usize; t.nodes.len()];
    let mut placed: Vec<NodeId> = Vec::new();
    for &n in &iab {
        let dn = t.node(n).position.distance(&donor_pos);
        let mut best = (donor, t.boresight_power_dbm(n, donor, ctx));
        for &cand in &placed {
            if depth[cand.index()] + 1 > max_depth {
                continue;
            }
            if t.node(cand).position.distance(&donor_pos) >= dn {
                continue;
            }
            let p = t.boresight_power_dbm(n, cand, ctx);
            if p > best.1 || (p == best.1 && cand < best.0) {
                best = (cand, p);
            }
        }
        depth[n.index()] = depth[best.0.index()] + 1;
        t.parent[n.index()] = Some(best.0);
        placed.push(n);
    }
    let ues: Vec<NodeId> = t.ids_of(NodeKind::Ue).collect();
    for ue in ues {
        if let Some(server) = t.best_server(ue, ctx, &[]) {
            t.serving[ue.index()] = Some(server);
        }
    }

    let mut links = Vec::new();
    for &n in &iab {
        let p = t.parent[n.index()].expect("assigned above");
        links.push(t.make_link(n, p, LinkKind::Backhaul, ctx));
    }
    for n in &t.nodes {
        if n.kind == NodeKind::Ue {
            if let Some(s) = t.serving[n.id.index()] {
                links.push(t.make_link(s, n.id, LinkKind::Access, ctx));
            }
        }
    }
    t.links = links;
}

/// Generation plus depth-limited association.
pub fn build(cfg: &TopologyConfig, ctx: &LinkContext) -> Result<Topology> {
    let mut t = generate(cfg)?;
    associate_with_depth(&mut t, ctx, cfg.max_depth);
    Ok(t)
}

/// Angular separation between two targets seen from `from`.
pub fn separation_deg(from: &Point, a: &Point, b: &Point) -> f64 {
    angle_between_deg(from.bearing_to(a), from.bearing_to(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_ctx() -> LinkContext {
        LinkContext {
            channel: ChannelParams {
                sigma_db: 0.0,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn cfg(n: usize, seed: u64) -> TopologyConfig {
        TopologyConfig {
            n_infra: n,
            ue_per_cell: 6,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn split_examples() {
        let t = generate(&cfg(0, 1)).unwrap();
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.count(NodeKind::WigigAp), 0);

        let t = generate(&cfg(10, 1)).unwrap();
        assert_eq!(t.count(NodeKind::IabNode), 4);
        assert_eq!(t.count(NodeKind::WigigAp), 6);

        let t = generate(&cfg(7, 1)).unwrap();
        assert_eq!(t.count(NodeKind::IabNode), 3);
        assert_eq!(t.count(NodeKind::WigigAp), 4);
    }

    #[test]
    fn split_sums_and_positions() {
        for n in 0..120 {
            let t = generate(&cfg(n, n as u64)).unwrap();
            assert_eq!(t.count(NodeKind::IabNode) + t.count(NodeKind::WigigAp), n);
            for node in t.nodes.iter().filter(|n| n.kind.is_infrastructure()) {
                assert!(node.position.norm() <= t.cell_radius + 1e-9);
                assert_eq!(node.sectors, 3);
            }
            assert_eq!(t.count(NodeKind::Ue), 6 * n);
        }
    }

    #[test]
    fn same_seed_same_topology() {
        let a = build(&cfg(25, 9), &LinkContext::default()).unwrap();
        let b = build(&cfg(25, 9), &LinkContext::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_text(), b.to_text());
        let c = build(&cfg(25, 10), &LinkContext::default()).unwrap();
        assert_ne!(a.to_text(), c.to_text());
    }

    #[test]
    fn geometry_examples() {
        let g = point_geometry(&Point::new(0.0, 0.0), &Point::new(3.0, 4.0));
        assert!((g.distance - 5.0).abs() < 1e-12);
        let g = point_geometry(&Point::new(2.0, 2.0), &Point::new(2.0, 2.0));
        assert_eq!(g.distance, 1.0);
        let g = point_geometry(&Point::new(0.0, 0.0), &Point::new(0.0, 10.0));
        assert!((g.aod_deg - 90.0).abs() < 1e-12);
        assert!((g.aoa_deg - 270.0).abs() < 1e-12);
    }

    fn hand_built(positions: &[(NodeKind, f64, f64)]) -> Topology {
        let a = AntennaPattern::default();
        let nodes = positions
            .iter()
            .enumerate()
            .map(|(i, &(k, x, y))| NodeRecord::new(NodeId(i as u32), k, Point::new(x, y), &a))
            .collect();
        Topology::from_nodes(nodes, 100.0, 0).unwrap()
    }

    #[test]
    fn association_examples() {
        let ctx = flat_ctx();
        // single AP, single UE, donor far away
        let t = associate(
            hand_built(&[
                (NodeKind::Donor, 0.0, 0.0),
                (NodeKind::WigigAp, 80.0, 0.0),
                (NodeKind::Ue, 85.0, 0.0),
            ]),
            &ctx,
        );
        assert_eq!(t.serving(NodeId(2)), Some(NodeId(1)));

        // equidistant from two identical APs: lower id wins
        let t = associate(
            hand_built(&[
                (NodeKind::Donor, 0.0, 0.0),
                (NodeKind::WigigAp, 50.0, 10.0),
                (NodeKind::WigigAp, 50.0, -10.0),
                (NodeKind::Ue, 50.0, 0.0),
            ]),
            &ctx,
        );
        assert_eq!(t.serving(NodeId(3)), Some(NodeId(1)));

        // UE at the donor
        let t = associate(
            hand_built(&[
                (NodeKind::Donor, 0.0, 0.0),
                (NodeKind::WigigAp, 60.0, 0.0),
                (NodeKind::Ue, 0.0, 0.0),
            ]),
            &ctx,
        );
        assert_eq!(t.serving(NodeId(2)), Some(NodeId(0)));
        t.validate().unwrap();
    }

    #[test]
    fn backhaul_is_forest_and_depth_bounded() {
        for seed in 0..20 {
            let c = TopologyConfig {
                n_infra: 60,
                ue_per_cell: 3,
                seed,
                ..Default::default()
            };
            let t = build(&c, &LinkContext::default()).unwrap();
            t.validate().unwrap();
            for n in t.ids_of(NodeKind::IabNode) {
                let d = t.depth(n);
                assert!((1..=c.max_depth).contains(&d));
            }
        }
    }

    #[test]
    fn text_round_trip() {
        let ctx = LinkContext::default();
        let t = build(&cfg(12, 3), &ctx).unwrap();
        let back = Topology::from_text(&t.to_text(), &AntennaPattern::default(), &ctx).unwrap();
        assert_eq!(back.to_text(), t.to_text());
        assert_eq!(back.nodes, t.nodes);
        for ue in t.ids_of(NodeKind::Ue) {
            assert_eq!(back.serving(ue), t.serving(ue));
        }
    }

    #[test]
    fn text_errors_carry_line_numbers() {
        let ctx = LinkContext::default();
        let bad = "[meta]\ncell_radius=10\n[nodes]\n0,donor,0,0\n";
        match Topology::from_text(bad, &AntennaPattern::default(), &ctx) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }
}
