//! Primal-dual reconstruction: energies, proximal maps and the iteration loop.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::fem::SpaceTimeWeights;
use crate::field::SpaceTimeField;
use crate::transfer::TransferMatrix;
use crate::tv::{DualField, GradOp, GradientSpace, Layout};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PdhgParams {
    /// Primal step `τ`.
    pub tau: f64,
    /// Dual step, named apart from the conductivity `σ`.
    pub sigma_step: f64,
    pub theta: f64,
    pub max_iter: usize,
    /// Stop once `‖u^{n+1} − u^n‖_∞` drops below this.
    pub tol: f64,
    /// Seed of the Gaussian `u⁰`.
    pub seed: u64,
}

impl PdhgParams {
    /// `τ = σ = 1/L`, `θ = 1`. With `L = 0` any step is admissible and 1 is used.
    pub fn for_norm(l: f64, seed: u64) -> Self {
        let step = if l > 0.0 { 1.0 / l } else { 1.0 };
        Self {
            tau: step,
            sigma_step: step,
            theta: 1.0,
            max_iter: 100_000,
            tol: 1e-3,
            seed,
        }
    }

    pub fn validate(&self, l: f64) -> Result<()> {
        if !(self.tau > 0.0 && self.sigma_step > 0.0) {
            return Err(Error::Config("step sizes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::Config(format!("θ = {} is outside [0, 1]", self.theta)));
        }
        if self.tau * self.sigma_step * l * l > 1.0 + 1e-12 {
            return Err(Error::Config(format!(
                "τσL² = {} exceeds 1",
                self.tau * self.sigma_step * l * l
            )));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::Config("stopping threshold and iteration cap must be positive".into()));
        }
        Ok(())
    }
}

/// Exact minimizer of `c/2 ‖A u − r‖² + ½‖u − ũ‖²_{M̃}` for any `c ≥ 0`,
/// through the thin SVD of `A M̃^{-1/2} = U Σ Vᵀ`:
/// `(c AᵀA + M̃)⁻¹ = M̃^{-1/2} (I − V diag(cσ²/(1+cσ²)) Vᵀ) M̃^{-1/2}`.
#[derive(Clone, Debug)]
pub struct DataProx {
    inv_sqrt_m: DVector<f64>,
    v: DMatrix<f64>,
    sv2: Vec<f64>,
}

impl DataProx {
    pub fn new(a: &DMatrix<f64>, lumped_space: &[f64]) -> Result<Self> {
        if a.ncols() != lumped_space.len() {
            return Err(Error::dim("data prox mass", a.ncols(), lumped_space.len()));
        }
        let inv_sqrt_m = DVector::from_iterator(lumped_space.len(), lumped_space.iter().map(|m| 1.0 / m.sqrt()));
        let mut c = a.clone();
        for (j, mut col) in c.column_iter_mut().enumerate() {
            col *= inv_sqrt_m[j];
        }
        // SVD of the short side: Cᵀ = V Σ Uᵀ has the same right factor.
        let svd = c.transpose().svd(true, false);
        let v = svd.u.ok_or_else(|| Error::Singular("SVD did not return singular vectors".into()))?;
        let sv2 = svd.singular_values.iter().map(|s| s * s).collect();
        Ok(Self { inv_sqrt_m, v, sv2 })
    }

    /// Solves `(c AᵀA + M̃) u = rhs` column-wise.
    pub fn solve(&self, c: f64, rhs: &mut DMatrix<f64>) {
        for (i, mut row) in rhs.row_iter_mut().enumerate() {
            row *= self.inv_sqrt_m[i];
        }
        let mut coef = self.v.tr_mul(rhs);
        for (k, mut row) in coef.row_iter_mut().enumerate() {
            let s = c * self.sv2[k];
            row *= s / (1.0 + s);
        }
        rhs.gemm(-1.0, &self.v, &coef, 1.0);
        for (i, mut row) in rhs.row_iter_mut().enumerate() {
            row *= self.inv_sqrt_m[i];
        }
    }
}

/// Data, operators and weights of one reconstruction.
#[derive(Clone, Debug)]
pub struct InverseProblem {
    transfer: TransferMatrix,
    z: SpaceTimeField,
    grad: GradOp,
    pub lumped_space: Vec<f64>,
    pub lumped_time: Vec<f64>,
    /// `D̃_s / d_s` per time node.
    time_ratio: Vec<f64>,
    /// `M̃_i / m_i` per node.
    space_ratio: Vec<f64>,
    /// Half-quadratic threshold; 0 evaluates plain TV.
    pub eps_tv: f64,
    data_prox: DataProx,
    atz: DMatrix<f64>,
}

impl InverseProblem {
    pub fn new(transfer: TransferMatrix, z: SpaceTimeField, grad: GradOp, st: &SpaceTimeWeights) -> Result<Self> {
        let layout = grad.layout();
        if z.n_space() != transfer.n_electrodes() {
            return Err(Error::dim("measurement rows", transfer.n_electrodes(), z.n_space()));
        }
        if z.n_time() != layout.n_times || st.n_time() != layout.n_times {
            return Err(Error::dim("time nodes", layout.n_times, z.n_time()));
        }
        if transfer.n_epicardial() != layout.n_nodes || st.n_space() != layout.n_nodes {
            return Err(Error::dim("epicardial nodes", layout.n_nodes, transfer.n_epicardial()));
        }
        if z.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("measurements contain non-finite values".into()));
        }
        let lumped_space = st.lumped_space.values().to_vec();
        let data_prox = DataProx::new(transfer.a_sigma(), &lumped_space)?;
        let atz = transfer.a_sigma().tr_mul(&z.matrix());
        Ok(Self {
            time_ratio: st.lumped_time.values().iter().zip(st.d.values()).map(|(a, b)| a / b).collect(),
            space_ratio: st.lumped_space.values().iter().zip(st.m.values()).map(|(a, b)| a / b).collect(),
            lumped_time: st.lumped_time.values().to_vec(),
            lumped_space,
            transfer,
            z,
            grad,
            eps_tv: 0.0,
            data_prox,
            atz,
        })
    }

    pub fn transfer(&self) -> &TransferMatrix {
        &self.transfer
    }

    pub fn z(&self) -> &SpaceTimeField {
        &self.z
    }

    pub fn grad(&self) -> &GradOp {
        &self.grad
    }

    /// Same operators with new measurements.
    pub fn with_data(&self, z: SpaceTimeField) -> Result<Self> {
        if z.n_space() != self.z.n_space() || z.n_time() != self.z.n_time() {
            return Err(Error::dim("measurements", self.z.len(), z.len()));
        }
        let atz = self.transfer.a_sigma().tr_mul(&z.matrix());
        Ok(Self {
            z,
            atz,
            ..self.clone()
        })
    }

    /// Same problem with a different `Λ`.
    pub fn with_grad(&self, grad: GradOp) -> Self {
        Self { grad, ..self.clone() }
    }

    pub fn n_space(&self) -> usize {
        self.grad.layout().n_nodes
    }

    pub fn n_time(&self) -> usize {
        self.grad.layout().n_times
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Energy {
    pub g: f64,
    pub f: f64,
    pub j: f64,
}

/// Half-quadratic penalty: `|x|` up to `1/ε`, then `ε x²`.
pub fn tv_eps(x: f64, eps: f64) -> f64 {
    let a = x.abs();
    if eps == 0.0 || a <= 1.0 / eps {
        a
    } else {
        eps * a * a
    }
}

fn data_term(problem: &InverseProblem, u: &[f64]) -> f64 {
    let (nv, nt) = (problem.n_space(), problem.n_time());
    let um = nalgebra::DMatrixView::from_slice(u, nv, nt);
    let r = problem.transfer.a_sigma() * um - problem.z.matrix();
    let ns = problem.transfer.n_electrodes() as f64;
    r.column_iter()
        .zip(&problem.lumped_time)
        .map(|(c, w)| w * c.norm_squared())
        .sum::<f64>()
        / (2.0 * ns)
}

/// `F^α` evaluated on a precomputed `K u`.
pub fn regularizer(grad: &GradOp, ku: &[f64], eps: f64) -> f64 {
    let w = grad.dual_weights();
    match grad.space() {
        GradientSpace::Q1 => ku.iter().zip(w).map(|(p, w)| w * tv_eps(*p, eps)).sum(),
        GradientSpace::Q2 => {
            let n = grad.layout().spatial_block();
            (0..n)
                .map(|e| {
                    let norm = (ku[e] * ku[e] + ku[n + e] * ku[n + e] + ku[2 * n + e] * ku[2 * n + e]).sqrt();
                    w[e] * tv_eps(norm, eps)
                })
                .sum()
        }
    }
}

pub fn energy(problem: &InverseProblem, u: &SpaceTimeField) -> Result<Energy> {
    if u.n_space() != problem.n_space() || u.n_time() != problem.n_time() {
        return Err(Error::dim("energy input", problem.n_space() * problem.n_time(), u.len()));
    }
    let ku = problem.grad.apply(u)?;
    Ok(energy_parts(problem, u.as_slice(), &ku.data))
}

fn energy_parts(problem: &InverseProblem, u: &[f64], ku: &[f64]) -> Energy {
    let g = data_term(problem, u);
    let f = regularizer(&problem.grad, ku, problem.eps_tv);
    Energy { g, f, j: g + f }
}

/// `prox_{τG}(ũ) = (τ/N_Σ AᵀA + M̃)⁻¹ (τ/N_Σ Aᵀz + M̃ũ)`, one time node per column.
pub fn prox_g(problem: &InverseProblem, u_tilde: &SpaceTimeField, tau: f64) -> Result<SpaceTimeField> {
    if !(tau > 0.0) {
        return Err(Error::Config("prox step must be positive".into()));
    }
    if u_tilde.n_space() != problem.n_space() || u_tilde.n_time() != problem.n_time() {
        return Err(Error::dim("prox input", problem.n_space() * problem.n_time(), u_tilde.len()));
    }
    let mut out = u_tilde.clone();
    prox_g_in_place(problem, out.as_mut_slice(), tau);
    Ok(out)
}

fn prox_g_in_place(problem: &InverseProblem, u: &mut [f64], tau: f64) {
    let (nv, nt) = (problem.n_space(), problem.n_time());
    let c = tau / problem.transfer.n_electrodes() as f64;
    let mut rhs = DMatrix::from_column_slice(nv, nt, u);
    for (i, mut row) in rhs.row_iter_mut().enumerate() {
        row *= problem.lumped_space[i];
    }
    rhs += &problem.atz * c;
    problem.data_prox.solve(c, &mut rhs);
    u.copy_from_slice(rhs.as_slice());
}

/// Componentwise projection onto `C¹`: `p / max(1, ratio |p|)` with ratio
/// `D̃_s/d_s` in the spatial blocks and `M̃_i/m_i` in the temporal block.
pub fn project_q1(p: &mut [f64], layout: Layout, time_ratio: &[f64], space_ratio: &[f64]) {
    let (nq, nt, nv) = (layout.n_segments, layout.n_times, layout.n_nodes);
    let (spatial, temporal) = p.split_at_mut(2 * nq * nt);
    for (k, v) in spatial.iter_mut().enumerate() {
        let r = time_ratio[(k % (nq * nt)) / nq];
        *v /= (r * v.abs()).max(1.0);
    }
    for (k, v) in temporal.iter_mut().enumerate() {
        let r = space_ratio[k % nv];
        *v /= (r * v.abs()).max(1.0);
    }
}

/// Radial projection of every corner gradient onto the closed unit ball.
pub fn project_q2(p: &mut [f64], layout: Layout) {
    let n = layout.spatial_block();
    for e in 0..n {
        let norm = (p[e] * p[e] + p[n + e] * p[n + e] + p[2 * n + e] * p[2 * n + e]).sqrt();
        if norm > 1.0 {
            p[e] /= norm;
            p[n + e] /= norm;
            p[2 * n + e] /= norm;
        }
    }
}

/// `prox_{σ(F¹)*}`. The conjugate is an indicator, so the step does not enter.
pub fn prox_fstar_q1(problem: &InverseProblem, p_tilde: &DualField) -> Result<DualField> {
    check_dual(problem, p_tilde, GradientSpace::Q1)?;
    let mut p = p_tilde.clone();
    project_q1(&mut p.data, problem.grad.layout(), &problem.time_ratio, &problem.space_ratio);
    Ok(p)
}

pub fn prox_fstar_q2(problem: &InverseProblem, p_tilde: &DualField) -> Result<DualField> {
    check_dual(problem, p_tilde, GradientSpace::Q2)?;
    let mut p = p_tilde.clone();
    project_q2(&mut p.data, problem.grad.layout());
    Ok(p)
}

fn check_dual(problem: &InverseProblem, p: &DualField, space: GradientSpace) -> Result<()> {
    let layout = problem.grad.layout();
    if p.space != space || layout.space != space {
        return Err(Error::Config(format!("expected a {space:?} dual field")));
    }
    if p.len() != layout.dual_len() {
        return Err(Error::dim("dual field", layout.dual_len(), p.len()));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub energy: Energy,
    pub delta_inf: f64,
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
}

#[derive(Clone, Debug)]
pub struct SolveTrace {
    pub initial: Energy,
    pub rows: Vec<TraceRow>,
    pub termination: Termination,
    /// Operator norm used for the steps.
    pub norm: f64,
}

impl SolveTrace {
    pub fn iterations(&self) -> usize {
        self.rows.len()
    }

    pub fn final_energy(&self) -> Energy {
        self.rows.last().map(|r| r.energy).unwrap_or(self.initial)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,g,f,j,delta_inf,seconds\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:e},{:e},{:e},{:e},{:.6}",
                r.iteration, r.energy.g, r.energy.f, r.energy.j, r.delta_inf, r.seconds
            );
        }
        out
    }
}

/// Operator norm with the tolerance used by the solver.
pub fn solver_norm(grad: &GradOp, seed: u64) -> Result<f64> {
    let est = grad.operator_norm(1e-7, 20_000, seed)?;
    Ok(NORM_MARGIN * est.value)
}

/// Power-iteration Rayleigh quotients approach `‖K‖` from below; the step
/// sizes use the estimate inflated by this factor.
pub const NORM_MARGIN: f64 = 1.01;

/// Runs the primal-dual iteration. `norm` is `L = ‖K‖`, used to check the
/// step-size contract.
pub fn pdhg_solve(problem: &InverseProblem, params: &PdhgParams, norm: f64) -> Result<(SpaceTimeField, SolveTrace)> {
    params.validate(norm)?;
    let layout = problem.grad.layout();
    let (n, m) = (layout.primal_len(), layout.dual_len());
    let (tau, sig, theta) = (params.tau, params.sigma_step, params.theta);

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut u: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut ku = vec![0.0; m];
    problem.grad.apply_into(&u, &mut ku)?;
    let mut p = ku.clone();
    let mut kubar = ku.clone();
    let mut ku_new = vec![0.0; m];
    let mut kstar = vec![0.0; n];
    let mut u_new = vec![0.0; n];

    let initial = energy_parts(problem, &u, &ku);
    let limit = 1e6 * initial.j.abs().max(f64::MIN_POSITIVE);
    let start = Instant::now();
    let mut rows = Vec::new();
    let mut termination = Termination::MaxIterations;

    for it in 1..=params.max_iter {
        for (pi, kb) in p.iter_mut().zip(&kubar) {
            *pi += sig * kb;
        }
        match layout.space {
            GradientSpace::Q1 => project_q1(&mut p, layout, &problem.time_ratio, &problem.space_ratio),
            GradientSpace::Q2 => project_q2(&mut p, layout),
        }
        problem.grad.adjoint_into(&p, &mut kstar);
        for ((un, uo), ks) in u_new.iter_mut().zip(&u).zip(&kstar) {
            *un = uo - tau * ks;
        }
        prox_g_in_place(problem, &mut u_new, tau);

        let delta = u_new.iter().zip(&u).fold(0.0_f64, |d, (a, b)| d.max((a - b).abs()));
        problem.grad.apply_into(&u_new, &mut ku_new)?;
        for ((kb, kn), ko) in kubar.iter_mut().zip(&ku_new).zip(&ku) {
            *kb = (1.0 + theta) * kn - theta * ko;
        }
        std::mem::swap(&mut u, &mut u_new);
        std::mem::swap(&mut ku, &mut ku_new);

        let e = energy_parts(problem, &u, &ku);
        if !e.j.is_finite() || e.j > limit {
            return Err(Error::Divergence(format!(
                "energy {:e} exceeds 1e6 times the initial {:e} at iteration {it}; \
                 check τσL² ≤ 1 (τ = {tau}, σ = {sig}, L = {norm})",
                e.j, initial.j
            )));
        }
        rows.push(TraceRow {
            iteration: it,
            energy: e,
            delta_inf: delta,
            seconds: start.elapsed().as_secs_f64(),
        });
        if delta < params.tol {
            termination = Termination::Converged;
            break;
        }
    }
    let u = SpaceTimeField::from_vec(layout.n_nodes, layout.n_times, u)?;
    Ok((
        u,
        SolveTrace {
            initial,
            rows,
            termination,
            norm,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{SurfaceGeometry, TimeGrid};
    use crate::tv::Anisotropy;
    use rand::Rng;

    fn ring(nv: usize) -> SurfaceGeometry {
        let points: Vec<[f64; 2]> = (0..nv)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / nv as f64;
                [2.0 * a.cos(), 2.0 * a.sin()]
            })
            .collect();
        let segments: Vec<[usize; 2]> = (0..nv).map(|l| [l, (l + 1) % nv]).collect();
        let lengths: Vec<f64> = segments
            .iter()
            .map(|&[a, b]| (points[b][0] - points[a][0]).hypot(points[b][1] - points[a][1]))
            .collect();
        let tangents = segments
            .iter()
            .zip(&lengths)
            .map(|(&[a, b], h)| [(points[b][0] - points[a][0]) / h, (points[b][1] - points[a][1]) / h])
            .collect();
        SurfaceGeometry {
            points,
            segments,
            lengths,
            tangents,
        }
    }

    fn problem(nv: usize, ns: usize, nt: usize, space: GradientSpace, lambda: f64, seed: u64) -> InverseProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = ring(nv);
        let st = SpaceTimeWeights::new(&s, &TimeGrid::uniform(0.0, 1.0, nt - 1).unwrap()).unwrap();
        let a = DMatrix::from_fn(ns, nv, |_, _| rng.random_range(0.0..1.0));
        let z = SpaceTimeField::from_fn(ns, nt, |_, _| rng.random_range(-10.0..10.0));
        let g = GradOp::new(space, Anisotropy::isotropic(lambda).unwrap(), &s, &st).unwrap();
        InverseProblem::new(TransferMatrix::from_matrix(a), z, g, &st).unwrap()
    }

    #[test]
    fn prox_g_satisfies_optimality() {
        let pb = problem(9, 4, 5, GradientSpace::Q1, 1.0, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ut = SpaceTimeField::from_fn(9, 5, |_, _| rng.random_range(-3.0..3.0));
        for tau in [1e-3, 0.7, 50.0] {
            let u = prox_g(&pb, &ut, tau).unwrap();
            let a = pb.transfer.a_sigma();
            let c = tau / 4.0;
            for s in 0..5 {
                let us = DVector::from_column_slice(u.time_slice(s));
                let lhs = a.transpose() * (a * &us) * c
                    + DVector::from_iterator(9, (0..9).map(|i| pb.lumped_space[i] * us[i]));
                let rhs = a.transpose() * DVector::from_column_slice(pb.z.time_slice(s)) * c
                    + DVector::from_iterator(9, (0..9).map(|i| pb.lumped_space[i] * ut.get(i, s)));
                assert!((lhs - &rhs).norm() <= 1e-12 * rhs.norm());
            }
        }
        let small = prox_g(&pb, &ut, 1e-12).unwrap();
        let diff = small.as_slice().iter().zip(ut.as_slice()).fold(0.0_f64, |d, (a, b)| d.max((a - b).abs()));
        assert!(diff <= 1e-8 * ut.max_abs());
    }

    #[test]
    fn scalar_prox_is_the_average() {
        // a 1×1 system with unit mass: (u + z)/2
        let dp = DataProx::new(&DMatrix::from_element(1, 1, 1.0), &[1.0]).unwrap();
        let (ut, z) = (0.3, -1.7);
        let mut rhs = DMatrix::from_element(1, 1, ut + z);
        dp.solve(1.0, &mut rhs);
        assert!((rhs[(0, 0)] - (z + ut) / 2.0).abs() <= 1e-14);
    }

    #[test]
    fn projections_are_feasible_and_odd() {
        let pb = problem(6, 3, 4, GradientSpace::Q1, 1.0, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f64> = (0..pb.grad.layout().dual_len()).map(|_| rng.random_range(-4.0..4.0)).collect();
        let p = prox_fstar_q1(&pb, &DualField { space: GradientSpace::Q1, data: data.clone() }).unwrap();
        for (a, b) in p.data.iter().zip(&data) {
            assert!(a.abs() <= 1.0 + 1e-12);
            assert_eq!(a.signum(), b.signum());
            if b.abs() <= 1.0 {
                assert_eq!(a, b);
            }
        }
        let mut three = vec![0.0; data.len()];
        three[0] = 3.0;
        three[1] = -0.5;
        let q = prox_fstar_q1(&pb, &DualField { space: GradientSpace::Q1, data: three }).unwrap();
        assert!((q.data[0] - 1.0).abs() < 1e-15 && q.data[1] == -0.5);

        let pb2 = problem(6, 3, 4, GradientSpace::Q2, 1.0, 3);
        let n = pb2.grad.layout().spatial_block();
        let mut d2 = vec![0.0; 3 * n];
        d2[0] = 3.0;
        d2[n] = 4.0;
        d2[1] = 0.3;
        d2[n + 1] = -0.4;
        let q2 = prox_fstar_q2(&pb2, &DualField { space: GradientSpace::Q2, data: d2 }).unwrap();
        assert!((q2.data[0] - 0.6).abs() < 1e-15 && (q2.data[n] - 0.8).abs() < 1e-15);
        assert_eq!((q2.data[1], q2.data[n + 1]), (0.3, -0.4));
        assert!(prox_fstar_q2(&pb, &DualField { space: GradientSpace::Q1, data: data.clone() }).is_err());
    }

    #[test]
    fn energy_vanishes_for_consistent_constants() {
        let mut pb = problem(7, 3, 4, GradientSpace::Q2, 2.0, 4);
        let u = SpaceTimeField::from_fn(7, 4, |_, _| 1.5);
        pb = pb.with_data(pb.transfer.apply(&u).unwrap()).unwrap();
        let e = energy(&pb, &u).unwrap();
        assert!(e.j.abs() < 1e-20);
        let free = pb.with_grad(pb.grad.with_weights(Anisotropy::new(0.0, 0.0).unwrap()));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = SpaceTimeField::from_fn(7, 4, |_, _| rng.random_range(-1.0..1.0));
        assert_eq!(energy(&free, &w).unwrap().f, 0.0);
    }

    #[test]
    fn hand_computed_q1_regularizer() {
        // two nodes on a degenerate "loop": both segments join 0 and 1
        let s = SurfaceGeometry {
            points: vec![[0.0, 0.0], [2.0, 0.0]],
            segments: vec![[0, 1], [1, 0]],
            lengths: vec![2.0, 2.0],
            tangents: vec![[1.0, 0.0], [-1.0, 0.0]],
        };
        let st = SpaceTimeWeights::new(&s, &TimeGrid::new(vec![0.0, 0.5]).unwrap()).unwrap();
        let g = GradOp::new(GradientSpace::Q1, Anisotropy::new(1.0, 1.0).unwrap(), &s, &st).unwrap();
        // u(0,t0)=0, u(1,t0)=4, u(0,t1)=1, u(1,t1)=4
        let u = [0.0, 4.0, 1.0, 4.0];
        let mut ku = vec![0.0; g.layout().dual_len()];
        g.apply_into(&u, &mut ku).unwrap();
        // spatial: |du/dx| = 2 at t0 and 1.5 at t1 on each segment, weight d_s·|L|
        //   = 2·(0.25·2·2) + 2·(0.25·2·1.5) = 3.5
        // temporal: |Δu/Δt| = 2 and 0 at the nodes, weight |J|·m_i = 0.5·2
        //   = 0.5·2·2 = 2
        let f = regularizer(&g, &ku, 0.0);
        assert!((f - 5.5).abs() < 1e-14, "{f}");
    }

    #[test]
    fn unregularized_square_system_recovers_inverse() {
        let nv = 5;
        let s = ring(nv);
        let st = SpaceTimeWeights::new(&s, &TimeGrid::uniform(0.0, 1.0, 2).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = DMatrix::from_fn(nv, nv, |i, j| if i == j { 2.0 } else { rng.random_range(-0.3..0.3) });
        let truth = SpaceTimeField::from_fn(nv, 3, |_, _| rng.random_range(-5.0..5.0));
        let tm = TransferMatrix::from_matrix(a);
        let z = tm.apply(&truth).unwrap();
        let g = GradOp::new(GradientSpace::Q1, Anisotropy::new(0.0, 0.0).unwrap(), &s, &st).unwrap();
        let pb = InverseProblem::new(tm, z, g, &st).unwrap();
        let mut params = PdhgParams::for_norm(0.0, 1);
        params.tol = 1e-12;
        let (u, trace) = pdhg_solve(&pb, &params, 0.0).unwrap();
        assert_eq!(trace.termination, Termination::Converged);
        for (a, b) in u.as_slice().iter().zip(truth.as_slice()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_data_gives_constant_reconstruction() {
        for space in [GradientSpace::Q1, GradientSpace::Q2] {
            let pb0 = problem(8, 5, 4, space, 0.5, 6);
            let c = SpaceTimeField::from_fn(8, 4, |_, _| 12.0);
            let pb = pb0.with_data(pb0.transfer.apply(&c).unwrap()).unwrap();
            let l = solver_norm(&pb.grad, 0).unwrap();
            let mut params = PdhgParams::for_norm(l, 2);
            params.tol = 1e-7;
            let (u, _) = pdhg_solve(&pb, &params, l).unwrap();
            assert!(u.as_slice().iter().all(|v| (v - 12.0).abs() < 1e-4), "{space:?}");
        }
    }

    #[test]
    fn deterministic_and_contract_checked() {
        let pb = problem(6, 4, 3, GradientSpace::Q2, 0.3, 7);
        let l = solver_norm(&pb.grad, 0).unwrap();
        let params = PdhgParams::for_norm(l, 11);
        let (u1, t1) = pdhg_solve(&pb, &params, l).unwrap();
        let (u2, t2) = pdhg_solve(&pb, &params, l).unwrap();
        assert_eq!(u1, u2);
        let e1: Vec<_> = t1.rows.iter().map(|r| (r.energy, r.delta_inf)).collect();
        let e2: Vec<_> = t2.rows.iter().map(|r| (r.energy, r.delta_inf)).collect();
        assert_eq!(e1, e2);
        let mut bad = params;
        bad.tau *= 2.0;
        assert!(pdhg_solve(&pb, &bad, l).is_err());
        bad = params;
        bad.theta = 1.5;
        assert!(bad.validate(l).is_err());
        assert!(t1.to_csv().starts_with("iteration,g,f,j,delta_inf,seconds\n"));
    }

    #[test]
    fn tv_eps_branches() {
        assert_eq!(tv_eps(-3.0, 0.0), 3.0);
        assert_eq!(tv_eps(2.0, 0.25), 2.0);
        assert_eq!(tv_eps(8.0, 0.25), 16.0);
    }

    proptest::proptest! {
        #[test]
        fn projections_are_feasible_and_idempotent(seed in 0u64..1000, scale in 0.1f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pb = problem(5, 3, 3, GradientSpace::Q2, 1.0, 1);
            let layout = pb.grad.layout();
            let mut p: Vec<f64> = (0..layout.dual_len()).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
            project_q2(&mut p, layout);
            let n = layout.spatial_block();
            for e in 0..n {
                let norm = (p[e] * p[e] + p[n + e] * p[n + e] + p[2 * n + e] * p[2 * n + e]).sqrt();
                proptest::prop_assert!(norm <= 1.0 + 1e-12);
            }
            let again = {
                let mut q = p.clone();
                project_q2(&mut q, layout);
                q
            };
            for (a, b) in again.iter().zip(&p) {
                proptest::prop_assert!((a - b).abs() <= 1e-15 * b.abs().max(1e-300));
            }

            let pb1 = problem(5, 3, 3, GradientSpace::Q1, 1.0, 1);
            let d = DualField {
                space: GradientSpace::Q1,
                data: (0..pb1.grad.layout().dual_len()).map(|_| scale * rng.random_range(-1.0..1.0)).collect(),
            };
            let once = prox_fstar_q1(&pb1, &d).unwrap();
            let twice = prox_fstar_q1(&pb1, &once).unwrap();
            for (a, b) in twice.data.iter().zip(&once.data) {
                proptest::prop_assert!((a - b).abs() <= 1e-15 * b.abs());
            }
        }
    }
}
