//! Synthetic ground truth: eikonal activation, a fixed tanh upstroke, the
//! pseudo-bidomain extracellular potential, sampling on the epicardium and the
//! electrodes, and additive white noise.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{
    assemble_stiffness, assemble_tensor_stiffness, assemble_triangle_mass, fiber_tensor, isotropic,
    ConductivityField, SymTensor, TimeGrid,
};
use crate::field::SpaceTimeField;
use crate::mesh::{BoundarySets, ElectrodeSet, Fnv, Mesh, Point, Region, TorsoModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FiberRule {
    /// Fibers tangent to circles about the heart centre.
    Circumferential,
    Isotropic,
}

impl FiberRule {
    pub fn direction(self, center: Point, p: Point) -> Option<Point> {
        match self {
            FiberRule::Isotropic => None,
            FiberRule::Circumferential => {
                let (dx, dy) = (p[0] - center[0], p[1] - center[1]);
                if dx.hypot(dy) < 1e-12 {
                    Some([1.0, 0.0])
                } else {
                    Some([-dy, dx])
                }
            }
        }
    }
}

/// Activation site given by its angle about the heart centre and its depth in
/// the wall (0 endocardium, 1 epicardium).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub angle_deg: f64,
    pub depth: f64,
}

/// Potentials in mV, times in ms, speeds in mm/ms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub r0: f64,
    pub r1: f64,
    pub steepness: f64,
    pub eps_pb: f64,
    pub sources: Vec<SourceSpec>,
    pub fiber_rule: FiberRule,
    pub speed_fiber: f64,
    pub speed_cross: f64,
    pub t0: f64,
    pub t1: f64,
    pub intervals: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            r0: -30.0,
            r1: 85.0,
            steepness: 2.0,
            eps_pb: 1e-6,
            sources: vec![
                SourceSpec { angle_deg: 20.0, depth: 0.5 },
                SourceSpec { angle_deg: 140.0, depth: 0.5 },
            ],
            fiber_rule: FiberRule::Circumferential,
            speed_fiber: 0.6,
            speed_cross: 0.2,
            t0: 0.0,
            t1: 100.0,
            intervals: 100,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.r1 > self.r0) {
            return bad(format!("R1 = {} must exceed R0 = {}", self.r1, self.r0));
        }
        if !(self.eps_pb > 0.0 && self.eps_pb.is_finite()) {
            return bad(format!("pseudo-bidomain ε = {} must be positive", self.eps_pb));
        }
        if !(self.steepness > 0.0) {
            return bad("waveform steepness must be positive".into());
        }
        if self.sources.is_empty() {
            return bad("at least one activation source is required".into());
        }
        if self.sources.iter().any(|s| !(0.0..=1.0).contains(&s.depth)) {
            return bad("source depth must lie in [0, 1]".into());
        }
        if !(self.speed_fiber > 0.0 && self.speed_cross > 0.0) {
            return bad("conduction speeds must be positive".into());
        }
        Ok(())
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::uniform(self.t0, self.t1, self.intervals)
    }

    /// Conduction-speed tensor at `p`.
    pub fn speed_tensor(&self, center: Point, p: Point) -> SymTensor {
        let (f, c) = (self.speed_fiber.powi(2), self.speed_cross.powi(2));
        match self.fiber_rule.direction(center, p) {
            Some(dir) => fiber_tensor(dir, f, c),
            None => isotropic(f),
        }
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::new();
        for v in [self.r0, self.r1, self.steepness, self.eps_pb, self.speed_fiber, self.speed_cross, self.t0, self.t1] {
            h.write_f64(v);
        }
        h.write_u64(self.intervals as u64);
        h.write_u64(self.fiber_rule as u64);
        for s in &self.sources {
            h.write_f64(s.angle_deg);
            h.write_f64(s.depth);
        }
        h.finish()
    }
}

/// Per-region conductivities in S/m. The myocardium pairs are (along fiber,
/// across fiber).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConductivityTable {
    pub torso: f64,
    pub lungs: f64,
    pub blood: f64,
    pub myo_intra: [f64; 2],
    pub myo_extra: [f64; 2],
}

impl Default for ConductivityTable {
    fn default() -> Self {
        Self {
            torso: 0.22,
            lungs: 0.03,
            blood: 0.7,
            myo_intra: [0.174, 0.0193],
            myo_extra: [0.625, 0.236],
        }
    }
}

impl ConductivityTable {
    /// Field on any mesh of the model; myocardium fibers follow `rule`.
    pub fn field(&self, mesh: &Mesh, center: Point, rule: FiberRule) -> Result<ConductivityField> {
        ConductivityField::from_regions(mesh, |region, p| {
            let zero = [0.0; 3];
            match region {
                Region::Torso => (zero, isotropic(self.torso)),
                Region::Lungs => (zero, isotropic(self.lungs)),
                Region::Blood => (zero, isotropic(self.blood)),
                Region::Myocardium => match rule.direction(center, p) {
                    Some(f) => (
                        fiber_tensor(f, self.myo_intra[0], self.myo_intra[1]),
                        fiber_tensor(f, self.myo_extra[0], self.myo_extra[1]),
                    ),
                    None => (isotropic(self.myo_intra[0]), isotropic(self.myo_extra[0])),
                },
            }
        })
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

fn sym_inverse_quadratic(m: SymTensor, e: Point) -> f64 {
    let det = m[0] * m[2] - m[1] * m[1];
    (m[2] * e[0] * e[0] - 2.0 * m[1] * e[0] * e[1] + m[0] * e[1] * e[1]) / det
}

/// Graph approximation of the anisotropic eikonal equation on the edges of the
/// triangles whose region satisfies `in_domain`. An edge `e` costs
/// `√(eᵀ M⁻¹ e)` with the speed tensor `M` taken at its midpoint. Nodes outside
/// the domain get `+∞`.
///
/// Arrival times overestimate the continuous solution where no mesh edge is
/// aligned with the characteristic direction.
pub fn eikonal_activation(
    mesh: &Mesh,
    in_domain: impl Fn(Region) -> bool,
    sources: &[usize],
    speed: impl Fn(Point) -> SymTensor,
) -> Result<Vec<f64>> {
    if sources.is_empty() {
        return Err(Error::Config("at least one activation source is required".into()));
    }
    let n = mesh.n_vertices();
    let mut member = vec![false; n];
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let v = mesh.vertices();
    for (tri, &region) in mesh.triangles().iter().zip(mesh.regions()) {
        if !in_domain(region) {
            continue;
        }
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            member[a] = true;
            let e = [v[b][0] - v[a][0], v[b][1] - v[a][1]];
            let mid = [0.5 * (v[a][0] + v[b][0]), 0.5 * (v[a][1] + v[b][1])];
            let cost = sym_inverse_quadratic(speed(mid), e).sqrt();
            if !cost.is_finite() {
                return Err(Error::Config(format!("speed tensor is not positive definite at {mid:?}")));
            }
            adj[a].push((b, cost));
            adj[b].push((a, cost));
        }
    }
    let mut phi = vec![f64::INFINITY; n];
    let mut heap = BinaryHeap::new();
    for &s in sources {
        if s >= n || !member[s] {
            return Err(Error::Config(format!("activation source {s} is not a node of the domain")));
        }
        phi[s] = 0.0;
        heap.push(Reverse(Entry(0.0, s)));
    }
    while let Some(Reverse(Entry(d, a))) = heap.pop() {
        if d > phi[a] {
            continue;
        }
        for &(b, c) in &adj[a] {
            if d + c < phi[b] {
                phi[b] = d + c;
                heap.push(Reverse(Entry(d + c, b)));
            }
        }
    }
    let unreachable = (0..n).filter(|&i| member[i] && phi[i].is_infinite()).count();
    if unreachable > 0 {
        return Err(Error::Unreachable(unreachable));
    }
    Ok(phi)
}

/// Myocardium node closest to each source position.
pub fn resolve_sources(mesh: &Mesh, center: Point, cfg: &SimConfig) -> Result<Vec<usize>> {
    let myo = mesh.region_nodes(Region::Myocardium);
    if myo.is_empty() {
        return Err(Error::Topology("mesh has no myocardium".into()));
    }
    let radius = |i: usize| {
        let p = mesh.vertices()[i];
        (p[0] - center[0]).hypot(p[1] - center[1])
    };
    let (r_in, r_out) = myo
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), &i| (lo.min(radius(i)), hi.max(radius(i))));
    Ok(cfg
        .sources
        .iter()
        .map(|s| {
            let r = r_in + s.depth * (r_out - r_in);
            let a = s.angle_deg.to_radians();
            let target = [center[0] + r * a.cos(), center[1] + r * a.sin()];
            let d = |i: usize| {
                let p = mesh.vertices()[i];
                (p[0] - target[0]).hypot(p[1] - target[1])
            };
            *myo.iter().min_by(|&&i, &&j| d(i).total_cmp(&d(j))).expect("nonempty")
        })
        .collect())
}

/// `R0 + (R1 − R0)/2 · (tanh(k(t − φ)) + 1)` on every node and time node.
/// Nodes with `φ = +∞` stay at rest.
pub fn transmembrane_waveform(phi: &[f64], grid: &TimeGrid, cfg: &SimConfig) -> SpaceTimeField {
    let half = 0.5 * (cfg.r1 - cfg.r0);
    SpaceTimeField::from_fn(phi.len(), grid.n_nodes(), |i, s| {
        cfg.r0 + half * ((cfg.steepness * (grid.nodes()[s] - phi[i])).tanh() + 1.0)
    })
}

/// `(K_σ + ε M) v = −K_{σ_i} v_m` at every time node with one factorization.
pub fn pseudo_bidomain_solve(
    mesh: &Mesh,
    cond: &ConductivityField,
    vm: &SpaceTimeField,
    eps: f64,
) -> Result<SpaceTimeField> {
    if !(eps > 0.0) {
        return Err(Error::Singular(
            "pseudo-bidomain system needs ε > 0; the pure Neumann problem has constants in its kernel".into(),
        ));
    }
    if vm.n_space() != mesh.n_vertices() {
        return Err(Error::dim("transmembrane potential nodes", mesh.n_vertices(), vm.n_space()));
    }
    let all: Vec<usize> = (0..mesh.n_vertices()).collect();
    let rhs = pseudo_bidomain_rhs(mesh, cond, vm)?;
    let system = assemble_stiffness(mesh, cond, &all, &all)?.add_scaled(eps, &assemble_triangle_mass(mesh)?)?;
    let v = system.cholesky()?.solve(&rhs);
    Ok(SpaceTimeField::from_matrix(&v))
}

/// `−K_{σ_i} v_m`, one column per time node.
pub fn pseudo_bidomain_rhs(mesh: &Mesh, cond: &ConductivityField, vm: &SpaceTimeField) -> Result<nalgebra::DMatrix<f64>> {
    let all: Vec<usize> = (0..mesh.n_vertices()).collect();
    let ki = assemble_tensor_stiffness(mesh, cond.intracellular(), &all, &all)?;
    Ok(-ki.mul_dense(vm.matrix()))
}

/// Epicardial truth `u^g` and clean electrode data `z^g`, read off a full-mesh
/// field through `torso_to_full`.
pub fn sample_truth(
    v: &SpaceTimeField,
    torso_to_full: &[usize],
    bounds: &BoundarySets,
    electrodes: &ElectrodeSet,
) -> Result<(SpaceTimeField, SpaceTimeField)> {
    let map = |nodes: &[usize]| -> Result<Vec<usize>> {
        nodes
            .iter()
            .map(|&i| match torso_to_full.get(i) {
                Some(&j) if j < v.n_space() => Ok(j),
                _ => Err(Error::dim("torso-to-full node map", v.n_space(), i)),
            })
            .collect()
    };
    Ok((v.select_rows(&map(&bounds.gamma_h)?), v.select_rows(&map(&electrodes.nodes)?)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoisyData {
    pub z: SpaceTimeField,
    pub noise_norm: f64,
    /// `20 log₁₀ ‖z_clean‖/‖n‖`, the target.
    pub snr_clean_db: f64,
    /// `20 log₁₀ ‖z_clean + n‖/‖n‖`.
    pub snr_noisy_db: f64,
}

/// Adds white Gaussian noise scaled to `‖n‖ = ‖z‖·10^{−snr/20}`; an infinite
/// SNR leaves the data untouched.
pub fn add_noise(z: &SpaceTimeField, snr_db: f64, seed: u64) -> Result<NoisyData> {
    if snr_db.is_nan() {
        return Err(Error::Config("SNR is NaN".into()));
    }
    if snr_db == f64::INFINITY {
        return Ok(NoisyData {
            z: z.clone(),
            noise_norm: 0.0,
            snr_clean_db: f64::INFINITY,
            snr_noisy_db: f64::INFINITY,
        });
    }
    let clean = z.norm2();
    if clean == 0.0 {
        return Err(Error::Undefined("noise level relative to an all-zero signal".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..z.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let raw_norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    let target = clean * 10f64.powf(-snr_db / 20.0);
    let scale = target / raw_norm;
    let mut noisy = z.clone();
    for (o, r) in noisy.as_mut_slice().iter_mut().zip(&raw) {
        *o += scale * r;
    }
    let noise_norm = target;
    Ok(NoisyData {
        snr_clean_db: 20.0 * (clean / noise_norm).log10(),
        snr_noisy_db: 20.0 * (noisy.norm2() / noise_norm).log10(),
        z: noisy,
        noise_norm,
    })
}

/// Everything the inverse problem needs from one simulation.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub grid: TimeGrid,
    /// Activation time per full-mesh node, `+∞` off the myocardium.
    pub phi: Vec<f64>,
    pub v: SpaceTimeField,
    pub u: SpaceTimeField,
    pub z: SpaceTimeField,
    pub config_hash: u64,
}

pub fn simulate(
    model: &TorsoModel,
    bounds: &BoundarySets,
    electrodes: &ElectrodeSet,
    table: &ConductivityTable,
    cfg: &SimConfig,
) -> Result<GroundTruth> {
    cfg.validate()?;
    let grid = cfg.time_grid()?;
    let mesh = &model.full;
    let c = model.heart_center;
    let sources = resolve_sources(mesh, c, cfg)?;
    let phi = eikonal_activation(mesh, |r| r == Region::Myocardium, &sources, |p| cfg.speed_tensor(c, p))?;
    let vm = transmembrane_waveform(&phi, &grid, cfg);
    let cond = table.field(mesh, c, cfg.fiber_rule)?;
    let v = pseudo_bidomain_solve(mesh, &cond, &vm, cfg.eps_pb)?;
    let (u, z) = sample_truth(&v, &model.torso_to_full, bounds, electrodes)?;
    let mut h = Fnv::new();
    h.write_u64(cfg.fingerprint());
    h.write_u64(mesh.fingerprint());
    h.write_u64(cond.fingerprint());
    Ok(GroundTruth {
        grid,
        phi,
        v,
        u,
        z,
        config_hash: h.finish(),
    })
}

/// Text bundle of one simulated data set with its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct TruthBundle {
    pub config_hash: u64,
    pub seed: u64,
    pub snr_db: f64,
    pub snr_clean_db: f64,
    pub snr_noisy_db: f64,
    pub times: Vec<f64>,
    pub phi: Vec<f64>,
    pub u: SpaceTimeField,
    pub z_clean: SpaceTimeField,
    pub z_noisy: SpaceTimeField,
}

impl TruthBundle {
    pub fn new(truth: &GroundTruth, noisy: &NoisyData, snr_db: f64, seed: u64) -> Self {
        Self {
            config_hash: truth.config_hash,
            seed,
            snr_db,
            snr_clean_db: noisy.snr_clean_db,
            snr_noisy_db: noisy.snr_noisy_db,
            times: truth.grid.nodes().to_vec(),
            phi: truth.phi.clone(),
            u: truth.u.clone(),
            z_clean: truth.z.clone(),
            z_noisy: noisy.z.clone(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("ecgi-truth v1\n");
        let _ = writeln!(out, "config {:016x}", self.config_hash);
        let _ = writeln!(out, "seed {}", self.seed);
        let _ = writeln!(out, "snr_db {}", self.snr_db);
        let _ = writeln!(out, "snr_clean_db {}", self.snr_clean_db);
        let _ = writeln!(out, "snr_noisy_db {}", self.snr_noisy_db);
        let row = |out: &mut String, xs: &[f64]| {
            let line: Vec<String> = xs.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        };
        let _ = writeln!(out, "times {}", self.times.len());
        row(&mut out, &self.times);
        let _ = writeln!(out, "phi {}", self.phi.len());
        row(&mut out, &self.phi);
        for (name, f) in [("u_g", &self.u), ("z_clean", &self.z_clean), ("z_noisy", &self.z_noisy)] {
            let _ = writeln!(out, "{name} {} {}", f.n_space(), f.n_time());
            for s in 0..f.n_time() {
                row(&mut out, f.time_slice(s));
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cur = Cursor {
            lines: text.lines().enumerate(),
            line: 0,
        };
        let head = cur.next_line()?;
        if head != "ecgi-truth v1" {
            return Err(cur.err(format!("unknown header `{head}`")));
        }
        let config = cur.keyed("config", 1)?;
        let config_hash = u64::from_str_radix(&config[0], 16).map_err(|e| cur.err(e.to_string()))?;
        let seed = cur.keyed("seed", 1)?[0].parse().map_err(|_| cur.err("bad seed".into()))?;
        let mut scalar = |key: &str| -> Result<f64> {
            let v = cur.keyed(key, 1)?;
            v[0].parse().map_err(|_| cur.err(format!("bad value for `{key}`")))
        };
        let snr_db = scalar("snr_db")?;
        let snr_clean_db = scalar("snr_clean_db")?;
        let snr_noisy_db = scalar("snr_noisy_db")?;
        let times = cur.vector("times")?;
        let phi = cur.vector("phi")?;
        let u = cur.field("u_g")?;
        let z_clean = cur.field("z_clean")?;
        let z_noisy = cur.field("z_noisy")?;
        Ok(Self {
            config_hash,
            seed,
            snr_db,
            snr_clean_db,
            snr_noisy_db,
            times,
            phi,
            u,
            z_clean,
            z_noisy,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

struct Cursor<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, message: String) -> Error {
        Error::Parse {
            line: self.line,
            message,
        }
    }

    fn next_line(&mut self) -> Result<&'a str> {
        match self.lines.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l.trim())
            }
            None => Err(self.err("unexpected end of file".into())),
        }
    }

    fn keyed(&mut self, key: &str, n: usize) -> Result<Vec<String>> {
        let l = self.next_line()?;
        let mut it = l.split_whitespace();
        if it.next() != Some(key) {
            return Err(self.err(format!("expected `{key}`")));
        }
        let rest: Vec<String> = it.map(str::to_owned).collect();
        if rest.len() != n {
            return Err(self.err(format!("`{key}` takes {n} values")));
        }
        Ok(rest)
    }

    fn dims(&mut self, key: &str, n: usize) -> Result<Vec<usize>> {
        let raw = self.keyed(key, n)?;
        raw.iter()
            .map(|s| s.parse().map_err(|_| self.err(format!("bad dimension `{s}`"))))
            .collect()
    }

    fn row(&mut self, len: usize) -> Result<Vec<f64>> {
        let l = self.next_line()?;
        let xs: Vec<f64> = l
            .split_whitespace()
            .map(|s| s.parse::<f64>().map_err(|e| self.err(e.to_string())))
            .collect::<Result<_>>()?;
        if xs.len() != len {
            return Err(self.err(format!("expected {len} values, found {}", xs.len())));
        }
        Ok(xs)
    }

    fn vector(&mut self, key: &str) -> Result<Vec<f64>> {
        let d = self.dims(key, 1)?;
        self.row(d[0])
    }

    fn field(&mut self, key: &str) -> Result<SpaceTimeField> {
        let d = self.dims(key, 2)?;
        let mut data = Vec::with_capacity(d[0] * d[1]);
        for _ in 0..d[1] {
            data.extend(self.row(d[0])?);
        }
        SpaceTimeField::from_vec(d[0], d[1], data)
    }
}
