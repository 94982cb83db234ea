//! Finite element building blocks: P1 stiffness and mass on triangles, P1/P0
//! objects on the epicardial curve and on the time axis, lumping, quadrature
//! weights and block-diagonal space-time application.
//!
//! Space-time vectors are time-major throughout (see [`crate::field`]).

mod conductivity;
mod sparse;

pub use conductivity::{fiber_tensor, isotropic, ConductivityField, SymTensor};
pub use sparse::{SparseCholesky, SparseMatrix};

use crate::error::{Error, Result};
use crate::mesh::{BoundarySets, Mesh, Point};

/// Strictly increasing time nodes `t_0 < … < t_S` in ms.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::Config("a time grid needs at least one interval".into()));
        }
        if nodes.iter().any(|t| !t.is_finite()) || nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("time nodes must be finite and strictly increasing".into()));
        }
        Ok(Self { nodes })
    }

    /// `S` equal intervals on `[t0, t1]`.
    pub fn uniform(t0: f64, t1: f64, intervals: usize) -> Result<Self> {
        if intervals == 0 {
            return Err(Error::Config("a time grid needs at least one interval".into()));
        }
        let dt = (t1 - t0) / intervals as f64;
        Self::new((0..=intervals).map(|s| t0 + dt * s as f64).collect())
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Number of intervals `S`.
    pub fn n_intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn interval_lengths(&self) -> Vec<f64> {
        self.nodes.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn span(&self) -> f64 {
        self.nodes[self.nodes.len() - 1] - self.nodes[0]
    }
}

/// Meaning of a [`DiagonalWeights`] vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightKind {
    /// Row sums of the epicardial P1 mass matrix.
    LumpedSpaceMass,
    /// Row sums of the temporal P1 mass matrix.
    LumpedTimeMass,
    /// Epicardial segment lengths (P0 mass in space).
    SegmentLengths,
    /// Interval lengths (P0 mass in time).
    IntervalLengths,
    /// Trapezoidal weights at the time nodes.
    TimeQuadrature,
    /// Nodal quadrature weights on the epicardial curve.
    SpaceQuadrature,
}

/// Strictly positive diagonal weights with a semantic tag.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalWeights {
    kind: WeightKind,
    values: Vec<f64>,
}

impl DiagonalWeights {
    pub fn new(kind: WeightKind, values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(format!(
                "{kind:?} weight {i} is {} but must be positive",
                values[i]
            )));
        }
        Ok(Self { kind, values })
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

impl std::ops::Index<usize> for DiagonalWeights {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

/// Gradients of the three P1 hat functions of a triangle, and its area.
pub fn p1_gradients(mesh: &Mesh, t: usize) -> ([Point; 3], f64) {
    let tri = mesh.triangles()[t];
    let p = tri.map(|v| mesh.vertices()[v]);
    let area = mesh.area(t);
    let mut g = [[0.0; 2]; 3];
    for k in 0..3 {
        let (b, c) = (p[(k + 1) % 3], p[(k + 2) % 3]);
        g[k] = [(b[1] - c[1]) / (2.0 * area), (c[0] - b[0]) / (2.0 * area)];
    }
    (g, area)
}

fn index_map(n: usize, set: &[usize], what: &'static str) -> Result<Vec<usize>> {
    if set.is_empty() {
        return Err(Error::dim(what, 1, 0));
    }
    let mut map = vec![usize::MAX; n];
    for (k, &v) in set.iter().enumerate() {
        if v >= n {
            return Err(Error::dim(what, n, v));
        }
        map[v] = k;
    }
    Ok(map)
}

/// `∫ σ ∇φ_i · ∇φ_j` over the whole mesh for `i ∈ rows`, `j ∈ cols`, with one
/// tensor per triangle.
pub fn assemble_tensor_stiffness(
    mesh: &Mesh,
    tensors: &[SymTensor],
    rows: &[usize],
    cols: &[usize],
) -> Result<SparseMatrix> {
    if tensors.len() != mesh.n_triangles() {
        return Err(Error::dim("conductivity per triangle", mesh.n_triangles(), tensors.len()));
    }
    let rmap = index_map(mesh.n_vertices(), rows, "stiffness rows")?;
    let cmap = index_map(mesh.n_vertices(), cols, "stiffness columns")?;
    let mut trip = Vec::with_capacity(9 * mesh.n_triangles());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let (g, area) = p1_gradients(mesh, t);
        let s = tensors[t];
        // evaluate each unordered pair once so that A_ij and A_ji are bit-equal
        let value = |a: usize, b: usize| {
            let (a, b) = if tri[a] <= tri[b] { (a, b) } else { (b, a) };
            let sg = [s[0] * g[a][0] + s[1] * g[a][1], s[1] * g[a][0] + s[2] * g[a][1]];
            area * (sg[0] * g[b][0] + sg[1] * g[b][1])
        };
        for a in 0..3 {
            let r = rmap[tri[a]];
            if r == usize::MAX {
                continue;
            }
            for b in 0..3 {
                let c = cmap[tri[b]];
                if c != usize::MAX {
                    trip.push((r, c, value(a, b)));
                }
            }
        }
    }
    let m = SparseMatrix::from_triplets(rows.len(), cols.len(), &trip)?;
    if rows == cols {
        m.with_symmetry_checked()
    } else {
        Ok(m)
    }
}

/// Stiffness with the total conductivity `σ = σ_i + σ_e`.
pub fn assemble_stiffness(
    mesh: &Mesh,
    cond: &ConductivityField,
    rows: &[usize],
    cols: &[usize],
) -> Result<SparseMatrix> {
    assemble_tensor_stiffness(mesh, cond.total(), rows, cols)
}

/// Consistent P1 mass matrix on all mesh nodes.
pub fn assemble_triangle_mass(mesh: &Mesh) -> Result<SparseMatrix> {
    let mut trip = Vec::with_capacity(9 * mesh.n_triangles());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let a = mesh.area(t);
        for i in 0..3 {
            for j in 0..3 {
                let w = if i == j { a / 6.0 } else { a / 12.0 };
                trip.push((tri[i], tri[j], w));
            }
        }
    }
    SparseMatrix::from_triplets(mesh.n_vertices(), mesh.n_vertices(), &trip)
        .and_then(SparseMatrix::with_symmetry_checked)
}

/// The closed epicardial curve in local numbering: node `l` is
/// `bounds.gamma_h[l]` and segment `l` joins nodes `l` and `l + 1 mod N_V`.
#[derive(Clone, Debug)]
pub struct SurfaceGeometry {
    pub points: Vec<Point>,
    pub segments: Vec<[usize; 2]>,
    pub lengths: Vec<f64>,
    /// Unit tangent of each segment, from its first to its second node.
    pub tangents: Vec<Point>,
}

impl SurfaceGeometry {
    pub fn new(mesh: &Mesh, bounds: &BoundarySets) -> Result<Self> {
        let n = bounds.gamma_h.len();
        if n < 3 {
            return Err(Error::Topology("epicardial loop needs at least three nodes".into()));
        }
        let points: Vec<Point> = bounds.gamma_h.iter().map(|&v| mesh.vertices()[v]).collect();
        let segments: Vec<[usize; 2]> = (0..n).map(|l| [l, (l + 1) % n]).collect();
        let mut lengths = Vec::with_capacity(n);
        let mut tangents = Vec::with_capacity(n);
        for &[a, b] in &segments {
            let (dx, dy) = (points[b][0] - points[a][0], points[b][1] - points[a][1]);
            let len = dx.hypot(dy);
            if len <= 0.0 {
                return Err(Error::Topology(format!("zero-length epicardial segment at node {a}")));
            }
            lengths.push(len);
            tangents.push([dx / len, dy / len]);
        }
        Ok(Self {
            points,
            segments,
            lengths,
            tangents,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.points.len()
    }

    pub fn n_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn perimeter(&self) -> f64 {
        self.lengths.iter().sum()
    }
}

/// `∫_{Γ_H} φ_i φ_j`, per segment `(|L|/6)[[2,1],[1,2]]`.
pub fn assemble_surface_mass_p1(surface: &SurfaceGeometry) -> Result<SparseMatrix> {
    let mut trip = Vec::with_capacity(4 * surface.n_segments());
    for (&[a, b], &h) in surface.segments.iter().zip(&surface.lengths) {
        trip.extend([(a, a, h / 3.0), (b, b, h / 3.0), (a, b, h / 6.0), (b, a, h / 6.0)]);
    }
    SparseMatrix::from_triplets(surface.n_nodes(), surface.n_nodes(), &trip)?.with_symmetry_checked()
}

/// `∫_{Γ_H} ∇_Γφ_i · ∇_Γφ_j`, per segment `(1/|L|)[[1,-1],[-1,1]]`. Its
/// negative is the discrete surface Laplacian.
pub fn assemble_surface_stiffness_p1(surface: &SurfaceGeometry) -> Result<SparseMatrix> {
    let mut trip = Vec::with_capacity(4 * surface.n_segments());
    for (&[a, b], &h) in surface.segments.iter().zip(&surface.lengths) {
        trip.extend([(a, a, 1.0 / h), (b, b, 1.0 / h), (a, b, -1.0 / h), (b, a, -1.0 / h)]);
    }
    SparseMatrix::from_triplets(surface.n_nodes(), surface.n_nodes(), &trip)?.with_symmetry_checked()
}

/// Tridiagonal P1 mass matrix on the time axis.
pub fn assemble_time_mass_p1(grid: &TimeGrid) -> Result<SparseMatrix> {
    let mut trip = Vec::with_capacity(4 * grid.n_intervals());
    for (j, h) in grid.interval_lengths().into_iter().enumerate() {
        let (a, b) = (j, j + 1);
        trip.extend([(a, a, h / 3.0), (b, b, h / 3.0), (a, b, h / 6.0), (b, a, h / 6.0)]);
    }
    SparseMatrix::from_triplets(grid.n_nodes(), grid.n_nodes(), &trip)?.with_symmetry_checked()
}

pub fn p0_weights_space(surface: &SurfaceGeometry) -> Result<DiagonalWeights> {
    DiagonalWeights::new(WeightKind::SegmentLengths, surface.lengths.clone())
}

pub fn p0_weights_time(grid: &TimeGrid) -> Result<DiagonalWeights> {
    DiagonalWeights::new(WeightKind::IntervalLengths, grid.interval_lengths())
}

/// Nodal quadrature weights `(d, m)`: `d_s` is half the total length of the
/// intervals touching `t_s`, `m_i` half the total length of the segments
/// touching node `i`.
pub fn quadrature_weights(
    surface: &SurfaceGeometry,
    grid: &TimeGrid,
) -> Result<(DiagonalWeights, DiagonalWeights)> {
    let mut d = vec![0.0; grid.n_nodes()];
    for (j, h) in grid.interval_lengths().into_iter().enumerate() {
        d[j] += 0.5 * h;
        d[j + 1] += 0.5 * h;
    }
    let mut m = vec![0.0; surface.n_nodes()];
    for (&[a, b], &h) in surface.segments.iter().zip(&surface.lengths) {
        m[a] += 0.5 * h;
        m[b] += 0.5 * h;
    }
    Ok((
        DiagonalWeights::new(WeightKind::TimeQuadrature, d)?,
        DiagonalWeights::new(WeightKind::SpaceQuadrature, m)?,
    ))
}

/// Row-sum lumping.
pub fn lump(matrix: &SparseMatrix, kind: WeightKind) -> Result<DiagonalWeights> {
    DiagonalWeights::new(kind, matrix.row_sums())
}

/// Applies `I_{n_blocks} ⊗ B` to a time-major vector, where `block` maps one
/// input slice of length `n_in` to one output slice of length `n_out`.
pub fn kron_time_apply(
    n_blocks: usize,
    n_in: usize,
    n_out: usize,
    x: &[f64],
    mut block: impl FnMut(&[f64], &mut [f64]),
) -> Result<Vec<f64>> {
    if x.len() != n_blocks * n_in {
        return Err(Error::dim("block-diagonal input", n_blocks * n_in, x.len()));
    }
    let mut y = vec![0.0; n_blocks * n_out];
    for (xs, ys) in x.chunks_exact(n_in.max(1)).zip(y.chunks_exact_mut(n_out.max(1))) {
        block(xs, ys);
    }
    Ok(y)
}

/// All discretization weights of the epicardial space-time cylinder.
#[derive(Clone, Debug)]
pub struct SpaceTimeWeights {
    pub surface_mass: SparseMatrix,
    pub surface_stiffness: SparseMatrix,
    pub time_mass: SparseMatrix,
    /// `M̃`, lumped surface mass.
    pub lumped_space: DiagonalWeights,
    /// `D̃`, lumped time mass.
    pub lumped_time: DiagonalWeights,
    /// Nodal quadrature weights in space.
    pub m: DiagonalWeights,
    /// Nodal quadrature weights in time.
    pub d: DiagonalWeights,
    /// Segment lengths.
    pub segments: DiagonalWeights,
    /// Interval lengths.
    pub intervals: DiagonalWeights,
}

impl SpaceTimeWeights {
    pub fn new(surface: &SurfaceGeometry, grid: &TimeGrid) -> Result<Self> {
        let surface_mass = assemble_surface_mass_p1(surface)?;
        let time_mass = assemble_time_mass_p1(grid)?;
        let (d, m) = quadrature_weights(surface, grid)?;
        Ok(Self {
            lumped_space: lump(&surface_mass, WeightKind::LumpedSpaceMass)?,
            lumped_time: lump(&time_mass, WeightKind::LumpedTimeMass)?,
            surface_stiffness: assemble_surface_stiffness_p1(surface)?,
            surface_mass,
            time_mass,
            m,
            d,
            segments: p0_weights_space(surface)?,
            intervals: p0_weights_time(grid)?,
        })
    }

    pub fn n_space(&self) -> usize {
        self.m.len()
    }

    pub fn n_time(&self) -> usize {
        self.d.len()
    }

    /// `D̃_ss M̃_ii` for every space-time node, time-major.
    pub fn nodal_weights(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.n_space() * self.n_time());
        for &dt in self.lumped_time.values() {
            w.extend(self.lumped_space.values().iter().map(|&mi| dt * mi));
        }
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{extract_boundary_sets, generate_torso_2d, GeometryConfig, Region};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn unit_right_triangle() -> Mesh {
        Mesh::new(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vec![[0, 1, 2]],
            vec![Region::Torso],
        )
        .unwrap()
    }

    fn small_model() -> (Mesh, BoundarySets) {
        let m = generate_torso_2d(&GeometryConfig {
            angular_resolution: 24,
            torso_layers: 4,
            ..GeometryConfig::default()
        })
        .unwrap();
        let b = extract_boundary_sets(&m.torso).unwrap();
        (m.torso, b)
    }

    #[test]
    fn unit_triangle_local_stiffness() {
        let mesh = unit_right_triangle();
        let c = ConductivityField::uniform(1, 1.0).unwrap();
        let k = assemble_stiffness(&mesh, &c, &[0, 1, 2], &[0, 1, 2]).unwrap().to_dense();
        let expect = DMatrix::from_row_slice(3, 3, &[1.0, -0.5, -0.5, -0.5, 0.5, 0.0, -0.5, 0.0, 0.5]);
        assert!((k - expect).abs().max() < 1e-15);
    }

    #[test]
    fn stiffness_kernel_scaling_and_psd() {
        let (mesh, _) = small_model();
        let all: Vec<usize> = (0..mesh.n_vertices()).collect();
        let c = ConductivityField::uniform(mesh.n_triangles(), 0.22).unwrap();
        let k = assemble_stiffness(&mesh, &c, &all, &all).unwrap();
        assert!(k.is_symmetric());
        let k1 = k.mul_vec(&vec![1.0; all.len()]);
        assert!(k1.iter().all(|v| v.abs() < 1e-12));
        let k3 = assemble_stiffness(&mesh, &c.scaled(3.0).unwrap(), &all, &all).unwrap();
        for (i, j, v) in k.triplets() {
            assert!((k3.get(i, j) - 3.0 * v).abs() <= 1e-12 * v.abs().max(1e-300));
        }
        let eig = k.to_dense().symmetric_eigenvalues();
        let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min > -1e-10);
        assert_eq!(eig.iter().filter(|v| v.abs() < 1e-10).count(), 1);
        assert!(assemble_stiffness(&mesh, &c, &[], &all).is_err());
    }

    #[test]
    fn triangle_mass_totals_area() {
        let (mesh, _) = small_model();
        let m = assemble_triangle_mass(&mesh).unwrap();
        assert!((m.sum() - mesh.total_area()).abs() < 1e-9 * mesh.total_area());
    }

    #[test]
    fn single_segment_and_interval_masses() {
        let h = 0.7;
        let g = TimeGrid::new(vec![1.0, 1.0 + h]).unwrap();
        let d = assemble_time_mass_p1(&g).unwrap().to_dense();
        let expect = DMatrix::from_row_slice(2, 2, &[h / 3.0, h / 6.0, h / 6.0, h / 3.0]);
        assert!((d - expect).abs().max() < 1e-16);

        let g = TimeGrid::uniform(0.0, 2.0, 8).unwrap();
        let d = assemble_time_mass_p1(&g).unwrap();
        assert!((d.get(3, 3) - 2.0 * 0.25 / 3.0).abs() < 1e-15);
        assert!((d.sum() - 2.0).abs() < 1e-14);
        let lumped = lump(&d, WeightKind::LumpedTimeMass).unwrap();
        let (dq, _) = quadrature_weights(&circle_surface(1.0, 5), &g).unwrap();
        assert!((dq[0] - 0.125).abs() < 1e-15 && (dq[4] - 0.25).abs() < 1e-15);
        for s in 0..g.n_nodes() {
            assert!((lumped[s] - dq[s]).abs() <= 1e-12 * dq[s]);
        }
    }

    fn circle_surface(r: f64, n: usize) -> SurfaceGeometry {
        let points: Vec<Point> = (0..n)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / n as f64;
                [r * a.cos(), r * a.sin()]
            })
            .collect();
        let segments: Vec<[usize; 2]> = (0..n).map(|l| [l, (l + 1) % n]).collect();
        let lengths = segments
            .iter()
            .map(|&[a, b]| (points[b][0] - points[a][0]).hypot(points[b][1] - points[a][1]))
            .collect::<Vec<_>>();
        let tangents = segments
            .iter()
            .zip(&lengths)
            .map(|(&[a, b], &h)| [(points[b][0] - points[a][0]) / h, (points[b][1] - points[a][1]) / h])
            .collect();
        SurfaceGeometry {
            points,
            segments,
            lengths,
            tangents,
        }
    }

    #[test]
    fn circle_surface_weights() {
        let (r, n) = (2.5, 17);
        let s = circle_surface(r, n);
        let chord = 2.0 * r * (PI / n as f64).sin();
        let p0 = p0_weights_space(&s).unwrap();
        assert!(p0.values().iter().all(|h| (h - chord).abs() < 1e-13));
        let mass = assemble_surface_mass_p1(&s).unwrap();
        assert!((mass.sum() - n as f64 * chord).abs() < 1e-12);
        let g = TimeGrid::uniform(0.0, 1.0, 3).unwrap();
        let (_, m) = quadrature_weights(&s, &g).unwrap();
        let lumped = lump(&mass, WeightKind::LumpedSpaceMass).unwrap();
        for i in 0..n {
            assert!((m[i] - chord).abs() < 1e-13);
            assert!((lumped[i] - m[i]).abs() <= 1e-12 * m[i]);
        }
        let h = 0.3;
        let pair = SparseMatrix::from_dense(&DMatrix::from_row_slice(2, 2, &[h / 3.0, h / 6.0, h / 6.0, h / 3.0]));
        assert_eq!(lump(&pair, WeightKind::LumpedSpaceMass).unwrap().values(), &[h / 2.0, h / 2.0]);
    }

    #[test]
    fn lumped_equals_quadrature_on_generated_mesh() {
        let (mesh, b) = small_model();
        let s = SurfaceGeometry::new(&mesh, &b).unwrap();
        let g = TimeGrid::new(vec![0.0, 0.3, 1.0, 1.1, 2.5]).unwrap();
        let w = SpaceTimeWeights::new(&s, &g).unwrap();
        for i in 0..w.n_space() {
            assert!((w.lumped_space[i] - w.m[i]).abs() <= 1e-12 * w.m[i]);
        }
        for t in 0..w.n_time() {
            assert!((w.lumped_time[t] - w.d[t]).abs() <= 1e-12 * w.d[t]);
        }
        assert!((w.intervals.sum() - g.span()).abs() < 1e-14);
        assert!((w.segments.sum() - s.perimeter()).abs() < 1e-12);
        let k = &w.surface_stiffness;
        assert!(k.mul_vec(&vec![1.0; s.n_nodes()]).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn time_grid_validation() {
        assert!(TimeGrid::new(vec![0.0]).is_err());
        assert!(TimeGrid::new(vec![0.0, 1.0, 1.0]).is_err());
        assert!(TimeGrid::uniform(0.0, 1.0, 0).is_err());
        assert!(DiagonalWeights::new(WeightKind::SegmentLengths, vec![1.0, 0.0]).is_err());
    }

    fn dense_kron_identity(n_blocks: usize, b: &DMatrix<f64>) -> DMatrix<f64> {
        let (r, c) = b.shape();
        let mut k = DMatrix::zeros(n_blocks * r, n_blocks * c);
        for s in 0..n_blocks {
            k.view_mut((s * r, s * c), (r, c)).copy_from(b);
        }
        k
    }

    #[test]
    fn kron_apply_matches_materialized_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let x: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = kron_time_apply(4, 4, 4, &x, |xs, ys| {
            let r = &b * nalgebra::DVector::from_column_slice(xs);
            ys.copy_from_slice(r.as_slice());
        })
        .unwrap();
        let yd = dense_kron_identity(4, &b) * nalgebra::DVector::from_column_slice(&x);
        for (a, e) in y.iter().zip(yd.iter()) {
            assert!((a - e).abs() < 1e-14);
        }
        let id = kron_time_apply(4, 4, 4, &x, |xs, ys| ys.copy_from_slice(xs)).unwrap();
        assert_eq!(id, x);
        assert!(kron_time_apply(3, 4, 4, &x, |_, _| {}).is_err());
    }

    #[test]
    fn diagonal_kronecker_factors_commute() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (ns, nt) = (7, 5);
        let t: Vec<f64> = (0..nt).map(|_| rng.random_range(0.1..2.0)).collect();
        let xw: Vec<f64> = (0..ns).map(|_| rng.random_range(0.1..2.0)).collect();
        let x: Vec<f64> = (0..ns * nt).map(|_| rng.random_range(-1.0..1.0)).collect();
        let time = |v: &[f64]| -> Vec<f64> { v.iter().enumerate().map(|(k, a)| a * t[k / ns]).collect() };
        let space = |v: &[f64]| kron_time_apply(nt, ns, ns, v, |a, b| {
            for i in 0..ns {
                b[i] = xw[i] * a[i];
            }
        })
        .unwrap();
        let ab = time(&space(&x));
        let ba = space(&time(&x));
        for (p, q) in ab.iter().zip(&ba) {
            assert!((p - q).abs() <= 1e-14 * p.abs().max(1.0));
        }
    }
}
