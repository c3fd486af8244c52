//! Entity placement, UE association and FL client selection.

use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::scenario::{RngStream, ScenarioConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum NodeKind {
    Ap,
    Ris,
    Ue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId {
    pub kind: NodeKind,
    pub index: usize,
}

impl NodeId {
    pub const fn ap(index: usize) -> Self {
        Self {
            kind: NodeKind::Ap,
            index,
        }
    }
    pub const fn ris(index: usize) -> Self {
        Self {
            kind: NodeKind::Ris,
            index,
        }
    }
    pub const fn ue(index: usize) -> Self {
        Self {
            kind: NodeKind::Ue,
            index,
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prefix = match self.kind {
            NodeKind::Ap => "ap",
            NodeKind::Ris => "ris",
            NodeKind::Ue => "ue",
        };
        write!(f, "{prefix}{}", self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl std::ops::Sub for Point3 {
    type Output = Point3;

    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn scale(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn dot(self, o: Point3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, o: Point3) -> f64 {
        (self - o).norm()
    }

    pub fn horizontal_distance(self, o: Point3) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }

    /// Unit vector from `self` towards `to`; zero when the points coincide.
    pub fn direction_to(self, to: Point3) -> Point3 {
        let d = to - self;
        let n = d.norm();
        if n == 0.0 {
            Point3::default()
        } else {
            d.scale(1.0 / n)
        }
    }
}

/// A RIS panel mounted on a hall wall.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RisPanel {
    pub position: Point3,
    /// Inward-facing unit normal.
    pub normal: Point3,
    /// Horizontal unit vector along the wall (element column axis).
    pub tangent: Point3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub area: [f64; 2],
    pub ap_pos: Vec<Point3>,
    pub ris: Vec<RisPanel>,
    pub ue_pos: Vec<Point3>,
    pub ue_is_eve: Vec<bool>,
    pub ue_power_dbm: Vec<f64>,
    pub ap_power_dbm: f64,
}

impl Topology {
    pub fn n_ap(&self) -> usize {
        self.ap_pos.len()
    }
    pub fn n_ris(&self) -> usize {
        self.ris.len()
    }
    pub fn n_ue(&self) -> usize {
        self.ue_pos.len()
    }
    pub fn n_eve(&self) -> usize {
        self.ue_is_eve.iter().filter(|e| **e).count()
    }

    /// Planar centroid of the deployment area at AP height.
    pub fn centroid(&self) -> Point3 {
        let z = self.ap_pos.first().map_or(0.0, |p| p.z);
        Point3::new(self.area[0] / 2.0, self.area[1] / 2.0, z)
    }

    /// AP closest to the area centroid (lowest index on ties); hosts the aggregator.
    pub fn central_ap(&self) -> NodeId {
        let c = self.centroid();
        let mut best = 0;
        for (i, p) in self.ap_pos.iter().enumerate() {
            if p.horizontal_distance(c) < self.ap_pos[best].horizontal_distance(c) {
                best = i;
            }
        }
        NodeId::ap(best)
    }

    /// CSV rows `kind,index,x,y,z,is_eve,power_dbm`; RIS rows leave power empty.
    pub fn to_csv(&self) -> String {
        let mut out = Vec::new();
        writeln!(out, "kind,index,x,y,z,is_eve,power_dbm").unwrap();
        for (i, p) in self.ap_pos.iter().enumerate() {
            writeln!(
                out,
                "AP,{i},{},{},{},false,{}",
                p.x, p.y, p.z, self.ap_power_dbm
            )
            .unwrap();
        }
        for (i, r) in self.ris.iter().enumerate() {
            let p = r.position;
            writeln!(out, "RIS,{i},{},{},{},false,", p.x, p.y, p.z).unwrap();
        }
        for (i, p) in self.ue_pos.iter().enumerate() {
            writeln!(
                out,
                "UE,{i},{},{},{},{},{}",
                p.x, p.y, p.z, self.ue_is_eve[i], self.ue_power_dbm[i]
            )
            .unwrap();
        }
        String::from_utf8(out).unwrap()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }
}

/// Grid shape `(cols, rows)` for `n` APs whose cells are closest to square.
fn grid_shape(n: usize, area: [f64; 2]) -> (usize, usize) {
    let mut best = (n, 1);
    let mut best_err = f64::INFINITY;
    for cols in (1..=n).rev() {
        if !n.is_multiple_of(cols) {
            continue;
        }
        let rows = n / cols;
        let err = ((area[0] / cols as f64) / (area[1] / rows as f64))
            .ln()
            .abs();
        if err < best_err - 1e-12 {
            best = (cols, rows);
            best_err = err;
        }
    }
    best
}

const RIS_WALL_STEP_M: f64 = 0.5;
const RIS_CORNER_CLEARANCE_M: f64 = 1.0;
const MIN_GRID_CELL_M: f64 = 1.0;

/// Candidate wall mounting points with inward normals, in a fixed order
/// (south, east, north, west walls).
fn wall_candidates(area: [f64; 2], z: f64) -> Vec<RisPanel> {
    let [w, h] = area;
    let mut out = Vec::new();
    let mut push_edge = |len: f64, at: &dyn Fn(f64) -> (Point3, Point3, Point3)| {
        let mut s = RIS_CORNER_CLEARANCE_M;
        while s <= len - RIS_CORNER_CLEARANCE_M + 1e-9 {
            let (position, normal, tangent) = at(s);
            out.push(RisPanel {
                position,
                normal,
                tangent,
            });
            s += RIS_WALL_STEP_M;
        }
    };
    let ex = Point3::new(1.0, 0.0, 0.0);
    let ey = Point3::new(0.0, 1.0, 0.0);
    push_edge(w, &|s| (Point3::new(s, 0.0, z), ey, ex));
    push_edge(h, &|s| (Point3::new(w, s, z), ex.scale(-1.0), ey));
    push_edge(w, &|s| {
        (Point3::new(w - s, h, z), ey.scale(-1.0), ex.scale(-1.0))
    });
    push_edge(h, &|s| (Point3::new(0.0, h - s, z), ex, ey.scale(-1.0)));
    out
}

/// Place APs on a jittered grid, RIS panels on the walls where they are
/// farthest from existing infrastructure, and UEs uniformly over the hall.
///
/// The eavesdropper set is the head of a random permutation of UE indices and
/// every UE gets an eavesdropper power draw, so changing `legit_fraction`
/// under the same seed only moves the legitimate/eavesdropper boundary.
pub fn place_entities(config: &ScenarioConfig, stream: &RngStream) -> Result<Topology> {
    let t = &config.topology;
    let area = t.area_m;
    let mut rng = stream.rng();

    let (cols, rows) = grid_shape(t.n_ap, area);
    let cell = [area[0] / cols as f64, area[1] / rows as f64];
    if cell[0] < MIN_GRID_CELL_M || cell[1] < MIN_GRID_CELL_M {
        return Err(Error::Sizing(format!(
            "{cols}x{rows} AP grid gives {:.2} m x {:.2} m cells in a {} m x {} m area",
            cell[0], cell[1], area[0], area[1]
        )));
    }
    let mut ap_pos = Vec::with_capacity(t.n_ap);
    for j in 0..rows {
        for i in 0..cols {
            let jx: f64 = rng.random_range(-1.0..=1.0) * t.ap_jitter;
            let jy: f64 = rng.random_range(-1.0..=1.0) * t.ap_jitter;
            ap_pos.push(Point3::new(
                (i as f64 + 0.5 + jx) * cell[0],
                (j as f64 + 0.5 + jy) * cell[1],
                t.ap_height_m,
            ));
        }
    }

    let candidates = wall_candidates(area, t.ris_height_m);
    if candidates.len() < t.n_ris {
        return Err(Error::Sizing(format!(
            "area perimeter hosts only {} RIS mounting points",
            candidates.len()
        )));
    }
    let mut ris: Vec<RisPanel> = Vec::with_capacity(t.n_ris);
    for _ in 0..t.n_ris {
        let mut best: Option<(f64, RisPanel)> = None;
        for c in &candidates {
            let d = ap_pos
                .iter()
                .copied()
                .chain(ris.iter().map(|r| r.position))
                .map(|p| p.horizontal_distance(c.position))
                .fold(f64::INFINITY, f64::min);
            if best.as_ref().is_none_or(|(bd, _)| d > *bd) {
                best = Some((d, *c));
            }
        }
        ris.push(best.expect("candidates nonempty").1);
    }

    let ue_pos: Vec<Point3> = (0..t.n_ue)
        .map(|_| {
            let x = rng.random_range(0.0..area[0]);
            let y = rng.random_range(0.0..area[1]);
            Point3::new(x, y, t.ue_height_m)
        })
        .collect();
    let [plo, phi] = t.eve_power_range_dbm;
    let eve_power: Vec<f64> = (0..t.n_ue)
        .map(|_| {
            if phi > plo {
                rng.random_range(plo..phi)
            } else {
                plo
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..t.n_ue).collect();
    order.shuffle(&mut rng);

    let n_eve = t.n_ue - config.n_legit();
    let mut ue_is_eve = vec![false; t.n_ue];
    for &u in &order[..n_eve] {
        ue_is_eve[u] = true;
    }
    let ue_power_dbm = (0..t.n_ue)
        .map(|u| {
            if ue_is_eve[u] {
                eve_power[u]
            } else {
                config.radio.p_lu_dbm
            }
        })
        .collect();

    Ok(Topology {
        area,
        ap_pos,
        ris,
        ue_pos,
        ue_is_eve,
        ue_power_dbm,
        ap_power_dbm: config.radio.p_ap_dbm,
    })
}

/// Received-SNR candidates for association, linear scale, indexed
/// `[ue][ap][ris]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnrTable {
    pub n_ue: usize,
    pub n_ap: usize,
    pub n_ris: usize,
    /// SNR of the full effective channel (direct + reflection via one RIS).
    pub effective: Vec<f64>,
    /// SNR of the RIS-reflected component alone.
    pub ris_path: Vec<f64>,
}

impl SnrTable {
    pub fn new(n_ue: usize, n_ap: usize, n_ris: usize) -> Self {
        let len = n_ue * n_ap * n_ris;
        Self {
            n_ue,
            n_ap,
            n_ris,
            effective: vec![f64::NAN; len],
            ris_path: vec![f64::NAN; len],
        }
    }

    pub fn idx(&self, ue: usize, ap: usize, ris: usize) -> usize {
        (ue * self.n_ap + ap) * self.n_ris + ris
    }

    pub fn effective_at(&self, ue: usize, ap: usize, ris: usize) -> f64 {
        self.effective[self.idx(ue, ap, ris)]
    }

    pub fn ris_path_at(&self, ue: usize, ap: usize, ris: usize) -> f64 {
        self.ris_path[self.idx(ue, ap, ris)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Association {
    pub serving_ap: Vec<NodeId>,
    pub serving_ris: Vec<NodeId>,
    /// Best received SNR per `[ue][ap]` over all RIS, in dB.
    pub rx_snr_db: Vec<Vec<f64>>,
}

/// Index of the first maximum.
fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if i == 0 || v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

pub fn to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// Associate every UE with the AP offering the best received SNR and, at that
/// AP, with the RIS contributing the strongest reflected path.
pub fn associate(topology: &Topology, table: &SnrTable) -> Result<Association> {
    let (n_ue, n_ap, n_ris) = (topology.n_ue(), topology.n_ap(), topology.n_ris());
    if (table.n_ue, table.n_ap, table.n_ris) != (n_ue, n_ap, n_ris)
        || table.effective.len() != n_ue * n_ap * n_ris
        || table.ris_path.len() != n_ue * n_ap * n_ris
    {
        return Err(Error::Integrity(format!(
            "SNR table is {}x{}x{}, topology needs {n_ue}x{n_ap}x{n_ris}",
            table.n_ue, table.n_ap, table.n_ris
        )));
    }
    if let Some(i) = table
        .effective
        .iter()
        .chain(&table.ris_path)
        .position(|v| v.is_nan())
    {
        let i = i % table.effective.len();
        let (ue, rest) = (i / (n_ap * n_ris), i % (n_ap * n_ris));
        return Err(Error::Integrity(format!(
            "missing SNR entry for ue{ue}, ap{}, ris{}",
            rest / n_ris,
            rest % n_ris
        )));
    }

    let mut serving_ap = Vec::with_capacity(n_ue);
    let mut serving_ris = Vec::with_capacity(n_ue);
    let mut rx_snr_db = Vec::with_capacity(n_ue);
    for u in 0..n_ue {
        let per_ap: Vec<f64> = (0..n_ap)
            .map(|a| {
                (0..n_ris)
                    .map(|r| table.effective_at(u, a, r))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .map(to_db)
            .collect();
        let a = argmax(per_ap.iter().copied());
        let r = argmax((0..n_ris).map(|r| table.ris_path_at(u, a, r)));
        serving_ap.push(NodeId::ap(a));
        serving_ris.push(NodeId::ris(r));
        rx_snr_db.push(per_ap);
    }
    Ok(Association {
        serving_ap,
        serving_ris,
        rx_snr_db,
    })
}

/// FL client score: `alpha * d(centroid) + (1 - alpha) * mean d(RIS)`,
/// horizontal distances.
pub fn client_score(topology: &Topology, ap: usize, alpha: f64) -> f64 {
    let p = topology.ap_pos[ap];
    let to_centroid = p.horizontal_distance(topology.centroid());
    let to_ris = if topology.ris.is_empty() {
        0.0
    } else {
        topology
            .ris
            .iter()
            .map(|r| p.horizontal_distance(r.position))
            .sum::<f64>()
            / topology.ris.len() as f64
    };
    alpha * to_centroid + (1.0 - alpha) * to_ris
}

/// The `k` APs with the lowest client score, sorted by index.
pub fn select_fl_clients(topology: &Topology, k: usize, alpha: f64) -> Vec<NodeId> {
    let mut scored: Vec<(f64, usize)> = (0..topology.n_ap())
        .map(|a| (client_score(topology, a, alpha), a))
        .collect();
    scored.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    let mut chosen: Vec<NodeId> = scored
        .into_iter()
        .take(k)
        .map(|(_, a)| NodeId::ap(a))
        .collect();
    chosen.sort();
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::derive_stream;

    fn topo(cfg: &ScenarioConfig) -> Topology {
        place_entities(cfg, &derive_stream(cfg, "topology")).unwrap()
    }

    #[test]
    fn default_population() {
        let cfg = ScenarioConfig::default();
        let t = topo(&cfg);
        assert_eq!(t.n_ap(), 18);
        assert_eq!(t.n_ris(), 3);
        assert_eq!(t.n_ue(), 500);
        assert_eq!(t.n_eve(), 150);
        for (p, eve) in t.ue_power_dbm.iter().zip(&t.ue_is_eve) {
            if *eve {
                assert!(*p > cfg.radio.p_lu_dbm);
            } else {
                assert_eq!(*p, cfg.radio.p_lu_dbm);
            }
        }
        assert!(t.ap_pos.iter().all(|p| p.z == 8.0));
        assert!(t.ue_pos.iter().all(|p| p.z == 1.5));
        assert!(t
            .ue_pos
            .iter()
            .all(|p| p.x >= 0.0 && p.x < 120.0 && p.y >= 0.0 && p.y < 60.0));
    }

    #[test]
    fn single_legit_ue() {
        let mut cfg = ScenarioConfig::default();
        cfg.topology.n_ue = 1;
        cfg.topology.legit_fraction = 1.0;
        let t = topo(&cfg);
        assert_eq!(t.ue_is_eve, vec![false]);
    }

    #[test]
    fn placement_is_deterministic() {
        let cfg = ScenarioConfig::desk();
        assert_eq!(topo(&cfg), topo(&cfg));
    }

    #[test]
    fn eve_sets_are_nested_across_fractions() {
        let mut cfg = ScenarioConfig::desk();
        cfg.topology.legit_fraction = 0.5;
        let many = topo(&cfg);
        cfg.topology.legit_fraction = 0.85;
        let few = topo(&cfg);
        assert_eq!(many.ue_pos, few.ue_pos);
        for (a, b) in few.ue_is_eve.iter().zip(&many.ue_is_eve) {
            assert!(!*a || *b);
        }
    }

    #[test]
    fn grid_is_six_by_three_for_reference_hall() {
        assert_eq!(grid_shape(18, [120.0, 60.0]), (6, 3));
        assert_eq!(grid_shape(5, [120.0, 60.0]), (5, 1));
    }

    #[test]
    fn tiny_area_is_a_sizing_error() {
        let mut cfg = ScenarioConfig::default();
        cfg.topology.area_m = [3.0, 2.0];
        assert!(matches!(
            place_entities(&cfg, &derive_stream(&cfg, "topology")),
            Err(Error::Sizing(_))
        ));
    }

    #[test]
    fn ris_panels_sit_on_walls_facing_inward() {
        let cfg = ScenarioConfig::default();
        let t = topo(&cfg);
        for r in &t.ris {
            let p = r.position;
            let on_wall = p.x == 0.0 || p.y == 0.0 || p.x == 120.0 || p.y == 60.0;
            assert!(on_wall, "{p:?}");
            let inward = Point3::new(60.0, 30.0, p.z) - p;
            assert!(r.normal.dot(inward) > 0.0);
            assert!(r.normal.dot(r.tangent).abs() < 1e-12);
        }
    }

    fn table_from(eff: &[[f64; 1]], n_ap: usize) -> SnrTable {
        let mut t = SnrTable::new(1, n_ap, 1);
        for (a, v) in eff.iter().enumerate() {
            t.effective[a] = v[0];
            t.ris_path[a] = v[0] / 10.0;
        }
        t
    }

    fn two_ap_topology() -> Topology {
        Topology {
            area: [10.0, 10.0],
            ap_pos: vec![Point3::new(2.0, 5.0, 8.0), Point3::new(8.0, 5.0, 8.0)],
            ris: vec![RisPanel {
                position: Point3::new(5.0, 0.0, 4.0),
                normal: Point3::new(0.0, 1.0, 0.0),
                tangent: Point3::new(1.0, 0.0, 0.0),
            }],
            ue_pos: vec![Point3::new(5.0, 5.0, 1.5)],
            ue_is_eve: vec![false],
            ue_power_dbm: vec![23.0],
            ap_power_dbm: 40.0,
        }
    }

    #[test]
    fn associate_picks_argmax_and_breaks_ties_low() {
        let t = two_ap_topology();
        let tab = table_from(&[[10.0], [10f64.powf(1.2)]], 2);
        assert_eq!(associate(&t, &tab).unwrap().serving_ap[0], NodeId::ap(1));
        let tie = table_from(&[[5.0], [5.0]], 2);
        assert_eq!(associate(&t, &tie).unwrap().serving_ap[0], NodeId::ap(0));
    }

    #[test]
    fn associate_rejects_missing_entries() {
        let t = two_ap_topology();
        let mut tab = table_from(&[[1.0], [2.0]], 2);
        tab.ris_path[1] = f64::NAN;
        assert!(matches!(associate(&t, &tab), Err(Error::Integrity(_))));
        let small = SnrTable::new(1, 1, 1);
        assert!(matches!(associate(&t, &small), Err(Error::Integrity(_))));
    }

    #[test]
    fn client_selection_counts() {
        let cfg = ScenarioConfig::default();
        let t = topo(&cfg);
        let c = select_fl_clients(&t, 3, 0.5);
        assert_eq!(c.len(), 3);
        assert!(c.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(select_fl_clients(&t, 18, 0.5).len(), 18);
    }

    #[test]
    fn csv_has_one_row_per_node() {
        let mut cfg = ScenarioConfig::default();
        cfg.topology.n_ue = 10;
        let t = topo(&cfg);
        let csv = t.to_csv();
        assert_eq!(csv.lines().count(), 1 + 18 + 3 + 10);
        assert!(csv.lines().nth(19).unwrap().starts_with("RIS,0,"));
    }
}
