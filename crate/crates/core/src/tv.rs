//! Weighted space-time gradient operators on the epicardial cylinder.
//!
//! Two gradient spaces are supported. In `Q1` the spatial gradient is constant
//! per segment and affine in time (stored at every time node), the temporal
//! derivative constant per interval and affine in space (stored at every
//! node). In `Q2` each space-time element carries the full gradient at its
//! four corners.
//!
//! Dual layouts (all blocks time-major):
//! - `Q1`: `[x: N_Q (S+1)] [y: N_Q (S+1)] [t: N_V S]`, entry `s N_Q + l` in the
//!   spatial blocks and `j N_V + i` in the temporal block.
//! - `Q2`: `[x: N] [y: N] [t: N]` with `N = 4 N_Q S` and corner index
//!   `((j N_Q + l) 2 + ts) 2 + xs`, where `ts` picks the interval end and `xs`
//!   the segment end.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::fem::{SpaceTimeWeights, SurfaceGeometry};
use crate::field::SpaceTimeField;

/// Spatial and temporal penalization weights `Λ = diag(λ_γ, λ_γ, λ_t)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Anisotropy {
    pub lambda_gamma: f64,
    pub lambda_t: f64,
}

impl Anisotropy {
    pub fn new(lambda_gamma: f64, lambda_t: f64) -> Result<Self> {
        if !(lambda_gamma >= 0.0 && lambda_t >= 0.0) || !lambda_gamma.is_finite() || !lambda_t.is_finite() {
            return Err(Error::Config(format!(
                "anisotropy weights must be finite and nonnegative, got ({lambda_gamma}, {lambda_t})"
            )));
        }
        Ok(Self {
            lambda_gamma,
            lambda_t,
        })
    }

    pub fn isotropic(lambda: f64) -> Result<Self> {
        Self::new(lambda, lambda)
    }

    pub fn is_zero(&self) -> bool {
        self.lambda_gamma == 0.0 && self.lambda_t == 0.0
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(c * self.lambda_gamma, c * self.lambda_t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GradientSpace {
    Q1,
    Q2,
}

impl GradientSpace {
    pub fn alpha(self) -> u8 {
        match self {
            GradientSpace::Q1 => 1,
            GradientSpace::Q2 => 2,
        }
    }
}

/// Element values of a gradient-space function.
#[derive(Clone, Debug, PartialEq)]
pub struct DualField {
    pub space: GradientSpace,
    pub data: Vec<f64>,
}

impl DualField {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Sizes shared by the operator and its dual fields.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub space: GradientSpace,
    /// Epicardial nodes `N_V`.
    pub n_nodes: usize,
    /// Epicardial segments `N_Q`.
    pub n_segments: usize,
    /// Time nodes `S + 1`.
    pub n_times: usize,
}

impl Layout {
    pub fn n_intervals(&self) -> usize {
        self.n_times - 1
    }

    /// Length of one spatial block.
    pub fn spatial_block(&self) -> usize {
        match self.space {
            GradientSpace::Q1 => self.n_segments * self.n_times,
            GradientSpace::Q2 => 4 * self.n_segments * self.n_intervals(),
        }
    }

    /// Length of the temporal block.
    pub fn temporal_block(&self) -> usize {
        match self.space {
            GradientSpace::Q1 => self.n_nodes * self.n_intervals(),
            GradientSpace::Q2 => 4 * self.n_segments * self.n_intervals(),
        }
    }

    pub fn dual_len(&self) -> usize {
        2 * self.spatial_block() + self.temporal_block()
    }

    pub fn primal_len(&self) -> usize {
        self.n_nodes * self.n_times
    }
}

/// Result of the power iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormEstimate {
    /// `L = sqrt(λ_max(K* K))`.
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// The weighted gradient `K^α` with its weighted adjoint.
#[derive(Clone, Debug)]
pub struct GradOp {
    layout: Layout,
    weights: Anisotropy,
    segments: Vec<[usize; 2]>,
    /// Tangent divided by segment length, so that the spatial gradient of
    /// segment `l` is `(u_b − u_a) · grad_coef[l]`.
    grad_coef: Vec<[f64; 2]>,
    inv_dt: Vec<f64>,
    /// Nodal `V_h` weights `D̃_s M̃_i`, time-major.
    primal_weights: Vec<f64>,
    /// Quadrature weight of every dual entry.
    dual_weights: Vec<f64>,
}

impl GradOp {
    pub fn new(
        space: GradientSpace,
        weights: Anisotropy,
        surface: &SurfaceGeometry,
        st: &SpaceTimeWeights,
    ) -> Result<Self> {
        if st.n_space() != surface.n_nodes() {
            return Err(Error::dim("gradient operator nodes", surface.n_nodes(), st.n_space()));
        }
        let layout = Layout {
            space,
            n_nodes: surface.n_nodes(),
            n_segments: surface.n_segments(),
            n_times: st.n_time(),
        };
        let grad_coef = surface
            .tangents
            .iter()
            .zip(&surface.lengths)
            .map(|(t, &h)| [t[0] / h, t[1] / h])
            .collect();
        let inv_dt = st.intervals.values().iter().map(|h| 1.0 / h).collect();
        let (nq, ns, nv) = (layout.n_segments, layout.n_intervals(), layout.n_nodes);
        let mut dual_weights = Vec::with_capacity(layout.dual_len());
        match space {
            GradientSpace::Q1 => {
                for _ in 0..2 {
                    for s in 0..layout.n_times {
                        dual_weights.extend((0..nq).map(|l| st.d[s] * st.segments[l]));
                    }
                }
                for j in 0..ns {
                    dual_weights.extend((0..nv).map(|i| st.intervals[j] * st.lumped_space[i]));
                }
            }
            GradientSpace::Q2 => {
                for _ in 0..3 {
                    for j in 0..ns {
                        for l in 0..nq {
                            let w = 0.25 * st.intervals[j] * st.segments[l];
                            dual_weights.extend([w; 4]);
                        }
                    }
                }
            }
        }
        Ok(Self {
            layout,
            weights,
            segments: surface.segments.clone(),
            grad_coef,
            inv_dt,
            primal_weights: st.nodal_weights(),
            dual_weights,
        })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn space(&self) -> GradientSpace {
        self.layout.space
    }

    pub fn weights(&self) -> Anisotropy {
        self.weights
    }

    /// Same geometry with different `Λ`.
    pub fn with_weights(&self, weights: Anisotropy) -> Self {
        Self {
            weights,
            ..self.clone()
        }
    }

    pub fn primal_weights(&self) -> &[f64] {
        &self.primal_weights
    }

    pub fn dual_weights(&self) -> &[f64] {
        &self.dual_weights
    }

    fn check_primal(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.layout.primal_len() {
            return Err(Error::dim("gradient operator input", self.layout.primal_len(), u.len()));
        }
        Ok(())
    }

    fn check_dual(&self, p: &DualField) -> Result<()> {
        if p.space != self.layout.space {
            return Err(Error::Config(format!(
                "dual field lives in {:?} but the operator maps to {:?}",
                p.space, self.layout.space
            )));
        }
        if p.len() != self.layout.dual_len() {
            return Err(Error::dim("dual field", self.layout.dual_len(), p.len()));
        }
        Ok(())
    }

    pub fn zero_dual(&self) -> DualField {
        DualField {
            space: self.layout.space,
            data: vec![0.0; self.layout.dual_len()],
        }
    }

    /// `K^α u`.
    pub fn apply(&self, u: &SpaceTimeField) -> Result<DualField> {
        let mut p = self.zero_dual();
        self.apply_into(u.as_slice(), &mut p.data)?;
        Ok(p)
    }

    pub fn apply_into(&self, u: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_primal(u)?;
        if out.len() != self.layout.dual_len() {
            return Err(Error::dim("dual field", self.layout.dual_len(), out.len()));
        }
        match self.layout.space {
            GradientSpace::Q1 => self.apply_k1(u, out),
            GradientSpace::Q2 => self.apply_k2(u, out),
        }
        Ok(())
    }

    fn apply_k1(&self, u: &[f64], out: &mut [f64]) {
        let Layout {
            n_nodes: nv,
            n_segments: nq,
            n_times: nt,
            ..
        } = self.layout;
        let (lg, lt) = (self.weights.lambda_gamma, self.weights.lambda_t);
        let (px, rest) = out.split_at_mut(nq * nt);
        let (py, pt) = rest.split_at_mut(nq * nt);
        for s in 0..nt {
            let us = &u[s * nv..(s + 1) * nv];
            for (l, (&[a, b], c)) in self.segments.iter().zip(&self.grad_coef).enumerate() {
                let du = lg * (us[b] - us[a]);
                px[s * nq + l] = du * c[0];
                py[s * nq + l] = du * c[1];
            }
        }
        for j in 0..nt - 1 {
            let f = lt * self.inv_dt[j];
            for i in 0..nv {
                pt[j * nv + i] = f * (u[(j + 1) * nv + i] - u[j * nv + i]);
            }
        }
    }

    fn apply_k2(&self, u: &[f64], out: &mut [f64]) {
        let Layout {
            n_nodes: nv,
            n_segments: nq,
            n_times: nt,
            ..
        } = self.layout;
        let (lg, lt) = (self.weights.lambda_gamma, self.weights.lambda_t);
        let n = 4 * nq * (nt - 1);
        let (px, rest) = out.split_at_mut(n);
        let (py, pt) = rest.split_at_mut(n);
        for j in 0..nt - 1 {
            let (u0, u1) = (&u[j * nv..(j + 1) * nv], &u[(j + 1) * nv..(j + 2) * nv]);
            let f = lt * self.inv_dt[j];
            for (l, (&[a, b], c)) in self.segments.iter().zip(&self.grad_coef).enumerate() {
                let e = 4 * (j * nq + l);
                let g0 = lg * (u0[b] - u0[a]);
                let g1 = lg * (u1[b] - u1[a]);
                let (ta, tb) = (f * (u1[a] - u0[a]), f * (u1[b] - u0[b]));
                px[e..e + 4].copy_from_slice(&[g0 * c[0], g0 * c[0], g1 * c[0], g1 * c[0]]);
                py[e..e + 4].copy_from_slice(&[g0 * c[1], g0 * c[1], g1 * c[1], g1 * c[1]]);
                pt[e..e + 4].copy_from_slice(&[ta, tb, ta, tb]);
            }
        }
    }

    /// Plain transpose `(K^α)ᵀ q`, accumulated into `out`.
    fn transpose_add(&self, q: &[f64], out: &mut [f64]) {
        let Layout {
            n_nodes: nv,
            n_segments: nq,
            n_times: nt,
            ..
        } = self.layout;
        let (lg, lt) = (self.weights.lambda_gamma, self.weights.lambda_t);
        match self.layout.space {
            GradientSpace::Q1 => {
                let (qx, rest) = q.split_at(nq * nt);
                let (qy, qt) = rest.split_at(nq * nt);
                for s in 0..nt {
                    let os = &mut out[s * nv..(s + 1) * nv];
                    for (l, (&[a, b], c)) in self.segments.iter().zip(&self.grad_coef).enumerate() {
                        let g = lg * (c[0] * qx[s * nq + l] + c[1] * qy[s * nq + l]);
                        os[b] += g;
                        os[a] -= g;
                    }
                }
                for j in 0..nt - 1 {
                    let f = lt * self.inv_dt[j];
                    for i in 0..nv {
                        let v = f * qt[j * nv + i];
                        out[(j + 1) * nv + i] += v;
                        out[j * nv + i] -= v;
                    }
                }
            }
            GradientSpace::Q2 => {
                let n = 4 * nq * (nt - 1);
                let (qx, rest) = q.split_at(n);
                let (qy, qt) = rest.split_at(n);
                for j in 0..nt - 1 {
                    let f = lt * self.inv_dt[j];
                    for (l, (&[a, b], c)) in self.segments.iter().zip(&self.grad_coef).enumerate() {
                        let e = 4 * (j * nq + l);
                        let g0 = lg * (c[0] * (qx[e] + qx[e + 1]) + c[1] * (qy[e] + qy[e + 1]));
                        let g1 = lg * (c[0] * (qx[e + 2] + qx[e + 3]) + c[1] * (qy[e + 2] + qy[e + 3]));
                        let ta = f * (qt[e] + qt[e + 2]);
                        let tb = f * (qt[e + 1] + qt[e + 3]);
                        let (r0, r1) = (j * nv, (j + 1) * nv);
                        out[r0 + b] += g0;
                        out[r0 + a] -= g0;
                        out[r1 + b] += g1;
                        out[r1 + a] -= g1;
                        out[r1 + a] += ta;
                        out[r0 + a] -= ta;
                        out[r1 + b] += tb;
                        out[r0 + b] -= tb;
                    }
                }
            }
        }
    }

    /// `K* p = W_V⁻¹ Kᵀ W_Q p` with lumped weights.
    pub fn adjoint(&self, p: &DualField) -> Result<SpaceTimeField> {
        self.check_dual(p)?;
        let mut out = vec![0.0; self.layout.primal_len()];
        self.adjoint_into(&p.data, &mut out);
        SpaceTimeField::from_vec(self.layout.n_nodes, self.layout.n_times, out)
    }

    /// Writes `K* p` into `out` (overwriting it). Lengths are the caller's
    /// responsibility.
    pub fn adjoint_into(&self, p: &[f64], out: &mut [f64]) {
        let wq: Vec<f64> = p.iter().zip(&self.dual_weights).map(|(a, w)| a * w).collect();
        out.iter_mut().for_each(|v| *v = 0.0);
        self.transpose_add(&wq, out);
        for (v, w) in out.iter_mut().zip(&self.primal_weights) {
            *v /= w;
        }
    }

    /// `(u, v)_{V_h}`.
    pub fn inner_primal(&self, u: &[f64], v: &[f64]) -> f64 {
        u.iter().zip(v).zip(&self.primal_weights).map(|((a, b), w)| a * b * w).sum()
    }

    /// `(p, q)_{Q_h^α}`.
    pub fn inner_dual(&self, p: &[f64], q: &[f64]) -> f64 {
        p.iter().zip(q).zip(&self.dual_weights).map(|((a, b), w)| a * b * w).sum()
    }

    /// Power iteration on `K* K` in the `V_h` inner product from a seeded
    /// Gaussian start.
    pub fn operator_norm(&self, tol: f64, max_iter: usize, seed: u64) -> Result<NormEstimate> {
        if !(tol > 0.0) {
            return Err(Error::Config("operator norm tolerance must be positive".into()));
        }
        let n = self.layout.primal_len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut kx = vec![0.0; self.layout.dual_len()];
        let mut y = vec![0.0; n];
        let mut prev = f64::NAN;
        for it in 1..=max_iter {
            let nx = self.inner_primal(&x, &x).sqrt();
            if nx == 0.0 {
                return Ok(NormEstimate {
                    value: 0.0,
                    iterations: it,
                    converged: true,
                });
            }
            x.iter_mut().for_each(|v| *v /= nx);
            self.apply_into(&x, &mut kx)?;
            let rq = self.inner_dual(&kx, &kx);
            if rq == 0.0 {
                return Ok(NormEstimate {
                    value: 0.0,
                    iterations: it,
                    converged: true,
                });
            }
            if (rq - prev).abs() <= tol * rq {
                return Ok(NormEstimate {
                    value: rq.sqrt(),
                    iterations: it,
                    converged: true,
                });
            }
            prev = rq;
            self.adjoint_into(&kx, &mut y);
            std::mem::swap(&mut x, &mut y);
        }
        log::warn!("operator norm power iteration stopped after {max_iter} iterations");
        Ok(NormEstimate {
            value: prev.max(0.0).sqrt(),
            iterations: max_iter,
            converged: false,
        })
    }
}
