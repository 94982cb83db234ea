//! Triangulated 2D torso geometry, its boundary partition and electrode sets.

mod generate;
mod io;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use generate::{generate_torso_2d, GeometryConfig, LungConfig, TorsoModel};
pub use io::{load_mesh, read_mesh, save_mesh, write_mesh};

pub type Point = [f64; 2];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Region {
    Torso,
    Lungs,
    Blood,
    Myocardium,
}

impl Region {
    pub const ALL: [Region; 4] = [Region::Torso, Region::Lungs, Region::Blood, Region::Myocardium];

    pub fn as_str(self) -> &'static str {
        match self {
            Region::Torso => "torso",
            Region::Lungs => "lungs",
            Region::Blood => "blood",
            Region::Myocardium => "myocardium",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Region {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Region::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown region `{s}`"))
    }
}

/// Conforming P1 triangulation with one region label per triangle.
///
/// Triangles are stored counterclockwise; [`Mesh::new`] reorients clockwise
/// input and rejects degenerate elements.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    regions: Vec<Region>,
}

impl Mesh {
    pub fn new(vertices: Vec<Point>, mut triangles: Vec<[usize; 3]>, regions: Vec<Region>) -> Result<Self> {
        if regions.len() != triangles.len() {
            return Err(Error::dim("mesh region labels", triangles.len(), regions.len()));
        }
        for (t, tri) in triangles.iter_mut().enumerate() {
            if let Some(&v) = tri.iter().find(|&&v| v >= vertices.len()) {
                return Err(Error::Topology(format!(
                    "triangle {t} references vertex {v} but the mesh has {} vertices",
                    vertices.len()
                )));
            }
            let a = signed_area(&vertices, tri);
            if a.abs() <= f64::EPSILON * 1e3 || !a.is_finite() {
                return Err(Error::Topology(format!("triangle {t} is degenerate")));
            }
            if a < 0.0 {
                tri.swap(1, 2);
            }
        }
        Ok(Self {
            vertices,
            triangles,
            regions,
        })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn area(&self, t: usize) -> f64 {
        signed_area(&self.vertices, &self.triangles[t])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_triangles()).map(|t| self.area(t)).sum()
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.triangles[t].map(|v| self.vertices[v]);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Undirected edges with the number of incident triangles.
    pub fn edge_counts(&self) -> BTreeMap<(usize, usize), usize> {
        let mut edges = BTreeMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        edges
    }

    /// Sorted list of vertices touched by at least one triangle of `region`.
    pub fn region_nodes(&self, region: Region) -> Vec<usize> {
        let mut mark = vec![false; self.n_vertices()];
        for (tri, r) in self.triangles.iter().zip(&self.regions) {
            if *r == region {
                for &v in tri {
                    mark[v] = true;
                }
            }
        }
        (0..mark.len()).filter(|&v| mark[v]).collect()
    }

    /// Stable 64-bit FNV-1a digest of coordinates, connectivity and labels.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::new();
        for p in &self.vertices {
            h.write_f64(p[0]);
            h.write_f64(p[1]);
        }
        for (tri, r) in self.triangles.iter().zip(&self.regions) {
            for &v in tri {
                h.write_u64(v as u64);
            }
            h.write_u64(*r as u64);
        }
        h.finish()
    }
}

pub(crate) fn signed_area(vertices: &[Point], tri: &[usize; 3]) -> f64 {
    let [a, b, c] = tri.map(|v| vertices[v]);
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

pub(crate) struct Fnv(u64);

impl Fnv {
    pub(crate) fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    pub(crate) fn write_u64(&mut self, v: u64) {
        for byte in v.to_le_bytes() {
            self.0 ^= byte as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    pub(crate) fn write_f64(&mut self, v: f64) {
        self.write_u64(v.to_bits());
    }

    pub(crate) fn finish(&self) -> u64 {
        self.0
    }
}

/// Partition of the inverse-problem mesh nodes into torso surface, epicardium
/// and interior.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundarySets {
    /// Torso surface nodes, counterclockwise from angle 0.
    pub gamma: Vec<usize>,
    /// Epicardial nodes, counterclockwise from angle 0 about the heart.
    pub gamma_h: Vec<usize>,
    pub interior: Vec<usize>,
    /// Epicardial segments; segment `l` joins `gamma_h[l]` and `gamma_h[l + 1]` (cyclically).
    pub gamma_h_segments: Vec<[usize; 2]>,
    /// Unit normals of the epicardial segments pointing out of the torso
    /// domain, i.e. into the heart.
    pub gamma_h_normals: Vec<Point>,
}

impl BoundarySets {
    pub fn n_epicardial(&self) -> usize {
        self.gamma_h.len()
    }

    pub fn n_segments(&self) -> usize {
        self.gamma_h_segments.len()
    }

    /// Rebuilds segments, normals and the interior set from ordered loops.
    pub fn from_loops(mesh: &Mesh, gamma: Vec<usize>, gamma_h: Vec<usize>) -> Result<Self> {
        let n = mesh.n_vertices();
        let mut seen = vec![false; n];
        for &v in gamma.iter().chain(&gamma_h) {
            if v >= n {
                return Err(Error::Topology(format!("boundary node {v} out of range")));
            }
            if seen[v] {
                return Err(Error::Topology(format!(
                    "node {v} appears twice in the boundary sets"
                )));
            }
            seen[v] = true;
        }
        if gamma_h.len() < 2 {
            return Err(Error::Topology("epicardial loop needs at least two nodes".into()));
        }
        let interior = (0..n).filter(|&v| !seen[v]).collect();
        let m = gamma_h.len();
        let gamma_h_segments: Vec<[usize; 2]> =
            (0..m).map(|l| [gamma_h[l], gamma_h[(l + 1) % m]]).collect();
        let gamma_h_normals = gamma_h_segments
            .iter()
            .map(|&[a, b]| {
                let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
                let (dx, dy) = (pb[0] - pa[0], pb[1] - pa[1]);
                let len = dx.hypot(dy);
                [-dy / len, dx / len]
            })
            .collect();
        Ok(Self {
            gamma,
            gamma_h,
            interior,
            gamma_h_segments,
            gamma_h_normals,
        })
    }
}

/// Classifies the two boundary loops of an annular mesh: the outer loop is the
/// torso surface, the inner loop the epicardium.
pub fn extract_boundary_sets(mesh: &Mesh) -> Result<BoundarySets> {
    let counts = mesh.edge_counts();
    if let Some(((a, b), c)) = counts.iter().find(|(_, &c)| c > 2) {
        return Err(Error::Topology(format!(
            "edge ({a}, {b}) is shared by {c} triangles"
        )));
    }
    // Oriented boundary edges keep the domain on their left.
    let mut next: BTreeMap<usize, usize> = BTreeMap::new();
    for tri in mesh.triangles() {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            if counts[&(a.min(b), a.max(b))] == 1 && next.insert(a, b).is_some() {
                return Err(Error::Topology(format!(
                    "boundary vertex {a} has more than one outgoing boundary edge"
                )));
            }
        }
    }

    let mut loops: Vec<Vec<usize>> = Vec::new();
    let mut visited = BTreeMap::new();
    for &start in next.keys() {
        if visited.contains_key(&start) {
            continue;
        }
        let mut lp = vec![start];
        visited.insert(start, ());
        let mut v = next[&start];
        while v != start {
            if visited.insert(v, ()).is_some() {
                return Err(Error::Topology("boundary edges do not form closed loops".into()));
            }
            lp.push(v);
            v = *next
                .get(&v)
                .ok_or_else(|| Error::Topology(format!("boundary is open at vertex {v}")))?;
        }
        loops.push(lp);
    }
    if loops.len() != 2 {
        return Err(Error::Topology(format!(
            "expected exactly two boundary loops (torso surface and epicardium), found {}",
            loops.len()
        )));
    }

    let areas: Vec<f64> = loops.iter().map(|l| polygon_area(mesh.vertices(), l)).collect();
    let (outer, inner) = if areas[0].abs() >= areas[1].abs() { (0, 1) } else { (1, 0) };
    let gamma = ccw_from_angle_zero(mesh.vertices(), loops[outer].clone());
    let gamma_h = ccw_from_angle_zero(mesh.vertices(), loops[inner].clone());
    BoundarySets::from_loops(mesh, gamma, gamma_h)
}

fn polygon_area(vertices: &[Point], lp: &[usize]) -> f64 {
    let n = lp.len();
    (0..n)
        .map(|k| {
            let (a, b) = (vertices[lp[k]], vertices[lp[(k + 1) % n]]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        * 0.5
}

pub(crate) fn polygon_centroid(vertices: &[Point], lp: &[usize]) -> Point {
    let n = lp.len() as f64;
    let (sx, sy) = lp
        .iter()
        .fold((0.0, 0.0), |(sx, sy), &v| (sx + vertices[v][0], sy + vertices[v][1]));
    [sx / n, sy / n]
}

fn angle_about(c: Point, p: Point) -> f64 {
    let a = (p[1] - c[1]).atan2(p[0] - c[0]);
    if a < 0.0 {
        a + 2.0 * PI
    } else {
        a
    }
}

fn ccw_from_angle_zero(vertices: &[Point], mut lp: Vec<usize>) -> Vec<usize> {
    if polygon_area(vertices, &lp) < 0.0 {
        lp.reverse();
    }
    let c = polygon_centroid(vertices, &lp);
    let start = (0..lp.len())
        .min_by(|&i, &j| {
            let key = |k: usize| {
                let a = angle_about(c, vertices[lp[k]]);
                (a.min(2.0 * PI - a), a > PI)
            };
            let (ka, kb) = (key(i), key(j));
            ka.0.total_cmp(&kb.0).then(ka.1.cmp(&kb.1))
        })
        .unwrap_or(0);
    lp.rotate_left(start);
    lp
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    UniformAngle,
    Random,
}

impl Placement {
    pub fn as_str(self) -> &'static str {
        match self {
            Placement::UniformAngle => "uniform-angle",
            Placement::Random => "random",
        }
    }
}

impl FromStr for Placement {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "uniform-angle" => Ok(Placement::UniformAngle),
            "random" => Ok(Placement::Random),
            _ => Err(format!("unknown electrode placement `{s}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ElectrodeSet {
    pub nodes: Vec<usize>,
    pub placement: Placement,
    pub seed: u64,
}

impl ElectrodeSet {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Picks `n` distinct torso-surface nodes.
///
/// Uniform placement takes the free surface node angularly closest to each of
/// `n` equispaced angles about the surface centroid. Random placement samples
/// without replacement from a ChaCha8 stream seeded with `seed` and returns the
/// nodes in surface order.
pub fn place_electrodes(
    mesh: &Mesh,
    bounds: &BoundarySets,
    n: usize,
    placement: Placement,
    seed: u64,
) -> Result<ElectrodeSet> {
    let available = bounds.gamma.len();
    if n == 0 {
        return Err(Error::Config("at least one electrode is required".into()));
    }
    if n > available {
        return Err(Error::Capacity {
            requested: n,
            available,
        });
    }
    let nodes = match placement {
        Placement::UniformAngle => {
            let c = polygon_centroid(mesh.vertices(), &bounds.gamma);
            let angles: Vec<f64> = bounds
                .gamma
                .iter()
                .map(|&v| angle_about(c, mesh.vertices()[v]))
                .collect();
            let mut used = vec![false; available];
            let mut nodes = Vec::with_capacity(n);
            for k in 0..n {
                let target = 2.0 * PI * k as f64 / n as f64;
                let best = (0..available)
                    .filter(|&j| !used[j])
                    .min_by(|&i, &j| {
                        angular_distance(angles[i], target).total_cmp(&angular_distance(angles[j], target))
                    })
                    .expect("capacity checked above");
                used[best] = true;
                nodes.push(bounds.gamma[best]);
            }
            nodes
        }
        Placement::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked = index::sample(&mut rng, available, n).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|j| bounds.gamma[j]).collect()
        }
    };
    Ok(ElectrodeSet {
        nodes,
        placement,
        seed,
    })
}

fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}
