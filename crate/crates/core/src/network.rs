//! Corridor and grid geometry: links, signalized nodes, control segments
//! and routes.
//!
//! Networks are immutable after construction and shared read-only by the
//! simulation. Node ids are dense indices; link ids index into the link
//! table. Signal plans are attached per approach link (one plan per
//! movement), which is how multi-phase intersections are represented.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::SpatPlan;
use crate::units::kmh_to_ms;

pub type NodeId = usize;
pub type LinkId = usize;

/// Directed roadway segment with the macroscopic properties used for
/// car-following and queue estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub from: NodeId,
    pub to: NodeId,
    pub length_m: f64,
    pub lanes: usize,
    pub speed_limit_kmh: f64,
    /// Saturation flow, veh/h/lane.
    pub saturation_flow_vphpl: f64,
    /// Jam density, veh/km/lane.
    pub jam_density_vpkmpl: f64,
    /// Critical density, veh/km/lane.
    pub critical_density_vpkmpl: f64,
}

impl Link {
    /// Link template carrying road properties only; `from`/`to` are filled
    /// in by the network builders.
    pub fn template(
        lanes: usize,
        speed_limit_kmh: f64,
        saturation_flow_vphpl: f64,
        jam_density_vpkmpl: f64,
    ) -> Self {
        Link {
            from: 0,
            to: 0,
            length_m: 0.0,
            lanes,
            speed_limit_kmh,
            saturation_flow_vphpl,
            jam_density_vpkmpl,
            // k_c = q_c / v_f: triangular fundamental diagram.
            critical_density_vpkmpl: saturation_flow_vphpl / speed_limit_kmh,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_m > 0.0) {
            return Err(Error::Network("link length must be > 0".into()));
        }
        if self.lanes == 0 {
            return Err(Error::Network("link must have at least one lane".into()));
        }
        if !(self.critical_density_vpkmpl > 0.0
            && self.critical_density_vpkmpl < self.jam_density_vpkmpl)
        {
            return Err(Error::Network("need 0 < k_c < k_j".into()));
        }
        if !(self.saturation_flow_vphpl > 0.0 && self.speed_limit_kmh > 0.0) {
            return Err(Error::Network("need q_c > 0 and v_f > 0".into()));
        }
        Ok(())
    }

    /// Jam spacing, metres per vehicle.
    pub fn jam_spacing_m(&self) -> f64 {
        1000.0 / self.jam_density_vpkmpl
    }

    /// Queue dissipation (release shockwave) speed, m/s.
    pub fn dissipation_speed_ms(&self) -> f64 {
        kmh_to_ms(
            self.saturation_flow_vphpl / (self.jam_density_vpkmpl - self.critical_density_vpkmpl),
        )
    }

    pub fn free_flow_time_s(&self) -> f64 {
        self.length_m / kmh_to_ms(self.speed_limit_kmh)
    }
}

/// Eco-drive activation geometry: distance upstream of the first signal,
/// inter-signal spacing, and distance downstream of the last signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlSegment {
    pub d1_m: f64,
    pub d2_m: f64,
    pub d3_m: f64,
}

impl ControlSegment {
    pub fn validate(&self) -> Result<()> {
        if self.d1_m > 0.0 && self.d2_m > 0.0 && self.d3_m > 0.0 {
            Ok(())
        } else {
            Err(Error::Network("control segment distances must be > 0".into()))
        }
    }
}

/// An ordered, connected link sequence from an origin to a destination.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub links: Vec<LinkId>,
}

impl Route {
    pub fn length_m(&self, net: &Network) -> f64 {
        self.links.iter().map(|&l| net.links[l].length_m).sum()
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    pub links: Vec<Link>,
    pub n_nodes: usize,
    /// Nodes that carry a signal head.
    pub signal_nodes: Vec<NodeId>,
    /// Signal plan governing the downstream end of each approach link.
    pub plans: HashMap<LinkId, SpatPlan>,
    pub control: ControlSegment,
    /// Nodes where vehicles may enter or leave.
    pub boundary_nodes: Vec<NodeId>,
}

impl Network {
    /// Linear corridor: origin node, `n_signals` signalized nodes spaced
    /// `spacing_m` apart, and a destination `d3_m` past the last signal.
    /// The approach to the first signal is `d1_m` long.
    pub fn corridor(
        n_signals: usize,
        spacing_m: f64,
        d1_m: f64,
        d3_m: f64,
        template: &Link,
    ) -> Result<Network> {
        if n_signals == 0 {
            return Err(Error::Network("corridor needs at least one signal".into()));
        }
        if n_signals > 1 && !(spacing_m > 0.0) {
            return Err(Error::Network("spacing must be > 0".into()));
        }
        if !(d1_m > 0.0 && d3_m > 0.0) {
            return Err(Error::Network("d1 and d3 must be > 0".into()));
        }
        let mut links = Vec::new();
        let mut mk = |from: NodeId, to: NodeId, len: f64| {
            let mut l = template.clone();
            l.from = from;
            l.to = to;
            l.length_m = len;
            links.push(l);
        };
        mk(0, 1, d1_m);
        for i in 0..n_signals - 1 {
            mk(1 + i, 2 + i, spacing_m);
        }
        mk(n_signals, n_signals + 1, d3_m);
        let net = Network {
            links,
            n_nodes: n_signals + 2,
            signal_nodes: (1..=n_signals).collect(),
            plans: HashMap::new(),
            control: ControlSegment {
                d1_m,
                d2_m: if n_signals > 1 { spacing_m } else { d1_m },
                d3_m,
            },
            boundary_nodes: vec![0, n_signals + 1],
        };
        for l in &net.links {
            l.validate()?;
        }
        Ok(net)
    }

    /// Orthogonal grid of `rows` x `cols` signalized intersections with
    /// boundary stubs on all four sides. Every internal and stub link has
    /// length `link_length_m`; all links are bidirectional (two directed
    /// links). Interior nodes are numbered row-major starting at 0; stub
    /// nodes follow.
    pub fn grid(rows: usize, cols: usize, link_length_m: f64, template: &Link) -> Result<Network> {
        if rows == 0 || cols == 0 {
            return Err(Error::Network("grid dimensions must be >= 1".into()));
        }
        if !(link_length_m > 0.0) {
            return Err(Error::Network("link length must be > 0".into()));
        }
        let interior = rows * cols;
        let node = |r: usize, c: usize| r * cols + c;
        let mut links: Vec<Link> = Vec::new();
        let mut mk = |from: NodeId, to: NodeId| {
            let mut l = template.clone();
            l.from = from;
            l.to = to;
            l.length_m = link_length_m;
            links.push(l);
        };
        for r in 0..rows {
            for c in 0..cols {
                if c + 1 < cols {
                    mk(node(r, c), node(r, c + 1));
                    mk(node(r, c + 1), node(r, c));
                }
                if r + 1 < rows {
                    mk(node(r, c), node(r + 1, c));
                    mk(node(r + 1, c), node(r, c));
                }
            }
        }
        // Boundary stubs: west and east per row, north and south per column.
        let mut next = interior;
        let mut boundary = Vec::new();
        for r in 0..rows {
            for inner in [node(r, 0), node(r, cols - 1)] {
                mk(next, inner);
                mk(inner, next);
                boundary.push(next);
                next += 1;
            }
        }
        for c in 0..cols {
            for inner in [node(0, c), node(rows - 1, c)] {
                mk(next, inner);
                mk(inner, next);
                boundary.push(next);
                next += 1;
            }
        }
        let net = Network {
            links,
            n_nodes: next,
            signal_nodes: (0..interior).collect(),
            plans: HashMap::new(),
            control: ControlSegment {
                d1_m: link_length_m,
                d2_m: link_length_m,
                d3_m: link_length_m,
            },
            boundary_nodes: boundary,
        };
        for l in &net.links {
            l.validate()?;
        }
        Ok(net)
    }

    pub fn outgoing(&self, node: NodeId) -> impl Iterator<Item = (LinkId, &Link)> {
        self.links
            .iter()
            .enumerate()
            .filter(move |(_, l)| l.from == node)
    }

    /// Minimal free-flow-travel-time route. Ties are broken toward the
    /// lexicographically smallest node-id sequence.
    pub fn shortest_route(&self, origin: NodeId, destination: NodeId) -> Result<Route> {
        if origin == destination {
            return Err(Error::Network(
                "origin and destination must differ".into(),
            ));
        }
        // Dijkstra over tiny graphs; store the best (cost, node path) per
        // node so the lexicographic tie-break is exact.
        const EPS: f64 = 1e-9;
        let mut best: Vec<Option<(f64, Vec<NodeId>, Vec<LinkId>)>> = vec![None; self.n_nodes];
        best[origin] = Some((0.0, vec![origin], vec![]));
        let mut frontier = vec![origin];
        while let Some(node) = frontier.pop() {
            let (cost, npath, lpath) = best[node].clone().unwrap();
            for (lid, link) in self.outgoing(node) {
                let ncost = cost + link.free_flow_time_s();
                let mut nn = npath.clone();
                nn.push(link.to);
                let mut nl = lpath.clone();
                nl.push(lid);
                let better = match &best[link.to] {
                    None => true,
                    Some((c, p, _)) => ncost < c - EPS || (ncost < c + EPS && &nn < p),
                };
                if better {
                    best[link.to] = Some((ncost, nn, nl));
                    frontier.push(link.to);
                }
            }
            frontier.sort_unstable();
            frontier.dedup();
        }
        match &best[destination] {
            Some((_, _, links)) => Ok(Route { links: links.clone() }),
            None => Err(Error::Network(format!(
                "destination {destination} unreachable from {origin}"
            ))),
        }
    }

    /// Stop-line position of each signalized node along a route, as
    /// route-linear offsets, paired with the approach link id.
    pub fn stoplines_on_route(&self, route: &Route) -> Vec<(f64, LinkId)> {
        let mut out = Vec::new();
        let mut pos = 0.0;
        for &lid in &route.links {
            let link = &self.links[lid];
            pos += link.length_m;
            if self.signal_nodes.contains(&link.to) && self.plans.contains_key(&lid) {
                out.push((pos, lid));
            }
        }
        out
    }

    /// Writes nodes and links as a single inspection CSV with a `kind`
    /// column.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# network v1: kind,id,from,to,length_m,lanes,speed_limit_kmh,signalized")?;
        writeln!(w, "kind,id,from,to,length_m,lanes,speed_limit_kmh,signalized")?;
        for n in 0..self.n_nodes {
            let s = self.signal_nodes.contains(&n);
            writeln!(w, "node,{n},,,,,,{}", if s { 1 } else { 0 })?;
        }
        for (i, l) in self.links.iter().enumerate() {
            writeln!(
                w,
                "link,{i},{},{},{},{},{},",
                l.from, l.to, l.length_m, l.lanes, l.speed_limit_kmh
            )?;
        }
        Ok(())
    }
}
